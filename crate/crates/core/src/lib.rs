//! Dynamic optimal transport on pixel grids.
//!
//! The crate evaluates the kinetic path energy of a density path on a
//! staggered grid, computes its gradient, and finds Wasserstein geodesic
//! interpolations between grayscale images by direct path optimization.
//! Balanced, unbalanced (mass-creating) and obstacle-constrained transport
//! are supported under Dirichlet, Neumann and periodic boundary
//! conditions.

pub mod error;
pub mod geodesic;
pub mod grid;
pub mod io;
pub mod metrics;
mod solver;
pub mod transport_energy;

pub use error::{Error, Result};
pub use geodesic::{choose_t, init_path, optimize_path, GeodesicResult, SolverConfig};
pub use io::{
    read_frames, read_image, read_mask, read_report, write_frames, write_report, ReportDoc,
    ReportRow, RunConfig,
};
pub use metrics::{ssim, ssim_sequence, w2_estimate, SsimParams, SsimSequence};
pub use grid::{
    divergence, face_gradient, BoundaryCondition, DensityGrid, DensityPath, ObstacleMask,
    StaggeredField, WeightField,
};
pub use transport_energy::{
    assemble_operator, compute_weights, mass_loss, path_energy, path_energy_gradient,
    path_energy_gradient_tol, path_energy_tol, solve_slice, EnergyMode, EnergyReport, MassBalance,
    PathEnergyGradient, SliceOperator, DEFAULT_SOLVE_TOL,
};
