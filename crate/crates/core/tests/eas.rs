//! Energy-guided adaptive sampling: schedule, selection growth, momentum.

#[macro_use]
mod checks;

use checks::eas::schedule_oracle;
use karyosim::detector::{momentum_blend, EasConfig};
use proptest::prelude::*;

test_checks!(eas:
    sampling_epochs_follow_the_schedule,
    momentum_degeneracies_are_bitwise,
    adaptive_selection_grows_and_updates_only_on_schedule,
    baseline_never_touches_the_pool,
    full_momentum_freezes_sampling_epochs,
    training_is_seed_deterministic_in_both_modes
);

proptest! {
    #[test]
    fn schedule_matches_enumeration(t in 1usize..120, w in 1usize..20, k in 1usize..15) {
        let cfg = EasConfig { epochs: t, warmup: w, interval: k, ..Default::default() };
        prop_assert_eq!(cfg.sampling_epochs(), schedule_oracle(t, w, k));
    }

    #[test]
    fn blend_is_convex(m in 0.0f64..=1.0, a in prop::collection::vec(-1e3f64..1e3, 1..20)) {
        let b: Vec<f64> = a.iter().map(|v| -v + 1.0).collect();
        let out = momentum_blend(&a, &b, m);
        for ((o, x), y) in out.iter().zip(&a).zip(&b) {
            prop_assert!(*o >= x.min(*y) - 1e-9 && *o <= x.max(*y) + 1e-9);
        }
    }
}
