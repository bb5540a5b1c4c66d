//! Gauge-fixed solutions of the Poisson equation `g + v = r + P v` on
//! arbitrary finite Markov reward processes, including multichain and
//! periodic chains.
//!
//! The sample-based pipeline runs in five stages:
//!
//! 1. [`structure::learn_support_graph`] + [`structure::analyze_structure`]
//!    recover recurrent classes, periods, cyclic phases and anchors.
//! 2. [`gauge::estimate_weights`] estimates phase-offset absorption weights.
//! 3. [`gauge::GaugeMap`] removes the peripheral components through anchors.
//! 4. [`solver::projected_sa`] runs stochastic approximation in that gauge.
//! 5. [`solver::estimate_residual`] and [`solver::gain_profile`] recover the
//!    residual coordinates and the state-dependent gain.
//!
//! [`oracle`] holds the exact linear-algebra counterparts and [`experiment`]
//! the benchmark suite.

pub mod chain;
pub mod error;
pub mod experiment;
pub mod fixtures;
pub mod gauge;
mod linalg;
pub mod oracle;
pub mod rng;
pub mod solver;
pub mod structure;

pub use chain::{ChainFile, Mrp, StateIndex, StochasticMatrix, ValidationReport, DEFAULT_TOL};
pub use error::{Error, Result, StageExt};
pub use gauge::{GaugeMap, PhaseWeights, WeightKind};
pub use oracle::{ExactModel, ExactSolution, QuotientDiagnostics};
pub use rng::{Purpose, Sampler, StreamLabel};
pub use solver::{ResidualEstimate, SaConfig, SolveTrace, StepSchedule};
pub use structure::{ChainStructure, SupportGraph};

pub use linalg::{sup_dist, sup_norm};
