//! Projected gradient descent over the reconstruction parameters.
//!
//! Each iteration evaluates the analytic gradient, steps along it in a
//! per-block diagonal metric and projects every block back onto its
//! feasible set. Blocks are variable-disjoint, so the product projection is
//! the per-block projection.

pub mod constraints;
pub mod optimizer;

pub use constraints::{project_simplex, project_sphere, ConstraintSet, Interval, ProjectionActivity};
pub use optimizer::{
    gauge_fix, initialize, minimize, snapshot_hash, BlockScales, IterationRecord, Monitor,
    OptimizerConfig, Outcome, PopulationSpec, RunTrace, Scalar, Status, StepPolicy, Unknowns,
};
