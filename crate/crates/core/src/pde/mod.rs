//! Explicit monotone finite-difference solver for the HJB equation, with
//! residual, jet and comparison checks, lattice operations and the
//! closed-form super- and sub-solution constructors.

mod checks;
mod grid;
mod scheme;

pub use checks::{
    classical_supersolution, comparison_check, constant_subsolution, g_sup_norm, jet_check, lattice_max, lattice_min, residual, residual_with,
    supersolution_rate, trust_region, ComparisonReport, JetMode, JetReport, LatticeResult, NodeValue, ResidualOptions, ResidualReport,
    SliceSummary,
};
pub use grid::{Grid, GridFn};
pub(crate) use grid::hex;
pub use scheme::{
    cfl_grid, check_cfl, solve_hjb, solve_hjb_with_report, stencil_weights, NodeEval, Scheme, SolveReport, StencilWeights, StepStats,
    DEFAULT_CFL_SAFETY,
};
