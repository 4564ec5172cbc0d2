//! Multiobjective optimization by cooperating single-objective CMA-ES
//! kernels that maximize the uncrowded hypervolume improvement of their
//! incumbents, with the bi-objective convex-quadratic benchmark suite and
//! convergence diagnostics.

pub mod cli;
pub mod cma;
pub mod error;
pub mod harness;
pub mod hv;
pub mod problems;
pub mod sofomore;

pub use cma::{Candidate, CmaParams, CmaState};
pub use error::{Error, Result};
pub use harness::{GapOffsets, OffsetSource, OffsetStore, RunRecord};
pub use hv::{dominates, weakly_dominates, Archive, ObjectivePair, ParetoFront, ReferencePoint, UhviBranch, UhviValue};
pub use problems::{BiObjective, BiObjectiveProblem, DiagonalKind, DiagonalSpec, ProblemClass, RotationSeeds};
pub use sofomore::{Sofomore, SofomoreConfig, UpdateMode};
