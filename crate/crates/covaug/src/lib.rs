//! Marginal covariance of parameters introduced by new observations.
//!
//! When new parameters enter an estimator through observations that also
//! involve an existing, prior-constrained state, their marginal covariance
//! (or information) follows from the joint least-squares Hessian. This crate
//! implements that machinery and two applications built on it:
//!
//! - initializing the covariance of freshly triangulated landmarks in an
//!   EKF-SLAM state (closed form and the equivalent augment-then-update
//!   two-step procedure), and
//! - weighting relative-pose constraints in graph optimization via a
//!   possibly rank-deficient square-root information factor.
//!
//! Everything is verified against brute-force dense oracles; the `covaug`
//! binary runs the scenario and verification suites from configuration files.

pub mod cli;
pub mod geom_sim;
pub mod infoaug;
pub mod landmark_init;
pub mod matblocks;
pub mod relpose;
pub mod verify;

pub use matblocks::{BlockMatrix2x2, LdltFactor};
