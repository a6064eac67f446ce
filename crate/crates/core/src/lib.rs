//! Reduced numerics for Γ-invariant critical polyharmonic systems on ℝ^N.
//!
//! The O(n1)×O(n2) symmetry collapses the problem to profiles on `(0, π)`.
//! This crate provides the closed-form geometry of that reduction, a
//! discretization of the reduced norm, Nehari-manifold machinery for the
//! coupled competitive system, least-energy solvers, the interval optimal
//! partition problem and a set of independent numerical oracles.

pub mod assembly;
pub mod banded;
pub mod energy;
pub mod error;
pub mod fd;
pub mod form;
pub mod geometry;
mod jets;
pub mod oracles;
pub mod partition;
pub mod solvers;

pub use assembly::{
    apply_l, bilinear_form, cell_mask, derivative, make_grid, midpoint_nodes, weighted_lp, CellBC,
    Discretization, EndCondition, Grid, Profile,
};
pub use energy::{
    nehari_scale_from, nehari_scale_multi, nehari_scale_single, psi_value_grad, single_energy,
    system_energy, system_gradient, CouplingMatrix, EnergyReport, NehariScale, ProfileBundle,
    PsiEval, PsiResult,
};
pub use error::{Error, Result};
pub use form::CellForm;
pub use geometry::{
    conformal_coefficients, make_params, profile_to_euclidean, sphere_area, weight_derivatives, weight_h, weight_phi,
    OperatorCoefficients, PhiConvention, ProblemParams,
};
pub use oracles::{run_suite, GradientTarget, OracleReport, Suite};
pub use partition::{
    compare_partition, extract_supports, optimize_partition, optimize_partition_from,
    partition_energy, OptimizedPartition, Partition, PartitionComparison, PartitionReport,
};
pub use solvers::{
    lambda_sweep, solve_cell, solve_system, CellSolution, SolveOptions, SweepSchedule, SweepStep,
    SystemSolution,
};
