//! Estimation and validity testing for sensitive survey questions.
//!
//! Two families of designs are covered:
//!
//! * **List experiments** ([`le`], [`gmm`]): the forward model linking control and
//!   treatment response-count distributions under uniform or strategic
//!   misreporting, a closed-form identification solver for three nonsensitive
//!   items, two-step GMM estimation and the overidentification (J) test.
//! * **Multiple responses** ([`mrt`], [`mle`]): recovery of a binary latent trait
//!   and per-question response probabilities from three conditionally
//!   independent binary answers, by eigendecomposition for discrete covariates
//!   and by maximum likelihood with logistic links for continuous ones.
//!
//! [`resampling`] provides the bootstrap and the Monte Carlo harness used to
//! calibrate all of the above.

pub mod error;
pub mod gmm;
pub mod le;
pub mod mle;
pub mod mrt;
pub mod optim;
pub mod resampling;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
