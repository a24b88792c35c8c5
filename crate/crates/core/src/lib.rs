//! Training, attacking, evaluating and certifying deep metric embeddings.
//!
//! The crate is `no_std` and only needs `alloc`. Everything here is a pure
//! function of its inputs plus explicit [`SeededRng`] descriptors, so results
//! are reproducible bit for bit. File formats, configuration and the command
//! line live in the `adml` companion crate.
//!
//! Module map:
//!
//! * [`numerics`]: dense matrices, counter-based random streams, lp norms and
//!   ball projections.
//! * [`model`]: the MLP embedding onto the unit sphere, its vector-Jacobian
//!   products, ADAM and a Lipschitz upper bound.
//! * [`losses`]: embedding distance, contrastive and triplet losses, surrogate
//!   losses and analytic gradients.
//! * [`attacks`]: FGSM, R+FGSM, PGD and clipped CW perturbations, the
//!   single-component inner maximisation and test-time attacks.
//! * [`training`]: SPC-2 batches, pair/triplet construction, natural and
//!   adversarial training steps, the training loop.
//! * [`evaluation`]: nearest-anchor inference, R@1, mAP@R, robustness reports.
//! * [`certification`]: delta-separation and the Lipschitz certificate.
//! * [`synth`]: the two-class Gaussian mixture benchmark.

#![no_std]

extern crate alloc;

pub mod attacks;
pub mod certification;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod synth;
pub mod training;

pub use data::{Dataset, LabeledPoint};
pub use error::{Error, Result};
pub use exec::{Executor, Sequential};
pub use numerics::{BallSpec, Matrix, Norm, SeededRng};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
