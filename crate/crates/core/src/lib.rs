//! Nonlinear magnetic equivalent circuit of radial-flux magnetic gears.
//!
//! The gear cross-section is discretised into a polar grid of node cells
//! ([`mesh`]), turned into a mesh-flux reluctance network ([`network`]) and
//! solved by Newton-Raphson with a sparse Cholesky factorization
//! ([`solver`]). Torques come from the Maxwell stress in the air gaps
//! ([`postproc`]); [`sweep`] runs parametric studies over many designs.

pub mod error;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod materials;
pub mod mesh;
pub mod network;
pub mod postproc;
pub mod solver;
pub mod sweep;

pub use error::{Error, Result};
pub use geometry::{derive_geometry, DerivedGeometry, Gap, GearDesign, Region};
pub use materials::{AnalyticBH, BHCurve, Materials, PermanentMagnet, SteelModel, MU0};
pub use mesh::{build_mesh, MeshConfig, MeshPreset, PolarMesh};
pub use network::{assemble, MecSystem, PermeabilityModel, SparseSym};
pub use postproc::{
    airgap_profile, flux_densities, maxwell_torque, slip_torque, FieldSolution, PreparedDesign,
    SlipOptions, SlipResult, TorqueReport,
};
pub use solver::{solve_newton, Solution, SolveOptions, SolveTrace, Solver};
