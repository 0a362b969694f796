//! Simulation of structurally abnormal chromosomes and energy-based anomaly
//! detection under heavy class imbalance.
//!
//! The crate is organised as a pipeline of stages, each usable on its own:
//!
//! * [`imaging`] rectifies a chromosome into a sequence of rotated patches
//!   along its medial axis and stacks them back into an image.
//! * [`perturb`] edits patch sequences (deletion, duplication, inversion,
//!   translocation) and scores axis straightness.
//! * [`diffusion`] restores rearranged images with a mean-reverting SDE and
//!   a small learned noise predictor.
//! * [`detector`] trains an energy-scored binary classifier with online
//!   selection of synthetic anomalies.
//! * [`phantom`] procedurally renders banded chromosome-like images.
//! * [`metrics`] holds classification and image-fidelity metrics.
//! * [`pipeline`] wires the stages together over on-disk artifacts.

pub mod checkpoint;
pub mod detector;
pub mod diffusion;
pub mod exec;
pub mod imaging;
pub mod metrics;
pub mod nn;
pub mod perturb;
pub mod phantom;
pub mod pipeline;
pub mod seed;

pub use imaging::{BinaryMask, GrayImage, MedialAxis, PatchSequence};
