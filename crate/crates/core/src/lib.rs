//! Discovery of closed-form reaction terms for reaction-diffusion systems on
//! weighted graphs.
//!
//! The pipeline has two stages. A physics-informed network ([`pinn`]) fits
//! per-subject surrogate trajectories, per-subject transport and reaction
//! rates, and a shared reaction network per group. Symbolic regression
//! ([`symreg`]) then distills each learned reaction network into an analytic
//! [`expr::Expression`], which [`project`] integrates forward and scores
//! against the observations.

pub mod expr;
pub mod graph;
pub mod ko;
pub mod nn;
pub mod pinn;
pub mod pipeline;
pub mod project;
pub mod symreg;

pub use expr::{Expression, OperatorSet};
pub use graph::{Cohort, LaplacianSystem};
