//! Checks shared by the integration tests and the CLI acceptance suite.

#![allow(dead_code, unused_macros)]

/// Declares one `#[test]` per named check of a module.
macro_rules! test_checks {
    ($module:ident: $($name:ident),* $(,)?) => {
        $(
            #[test]
            fn $name() {
                checks::$module::$name()
            }
        )*
    };
}

pub mod eas;
pub mod gradients;
pub mod kernels;
pub mod mac_filter;
pub mod sde;
