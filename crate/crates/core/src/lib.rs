//! Local entropy search (LES) for Bayesian optimization.
//!
//! LES draws analytic posterior sample paths from a Gaussian process, runs a
//! local optimizer on each of them from the current incumbent, and queries
//! where an observation is most informative about the resulting descent
//! sequences. The same sample paths drive a Monte-Carlo test of local regret
//! that decides when to stop.
//!
//! Modules, bottom-up:
//! - [`gp`]: SE-ARD GP regression, MAP hyperparameters, virtual-point conditioning
//! - [`pathwise`]: random-feature prior plus Matheron update sample paths
//! - [`descent`]: ADAM / gradient descent on sample paths, arc-length discretization
//! - [`acquisition`]: LES and batch LES scores, candidate sets, local Thompson sampling
//! - [`stopping`]: local-regret stopping rule
//! - [`bench`]: benchmark objectives, Sobol baseline and the BO loop

pub mod acquisition;
pub mod bench;
pub mod descent;
pub mod error;
pub mod gp;
pub mod pathwise;
pub mod rng;
pub mod stopping;

pub use error::{LesError, Result};
