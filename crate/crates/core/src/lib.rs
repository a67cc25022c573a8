//! Level-2 rough paths, rough integrals and rough differential equations,
//! together with decompositions of their flows.
//!
//! * [`rough_path`]: sampled rough paths, Chen composition, lifts.
//! * [`integral`]: controlled paths and the compensated rough integral.
//! * [`rde`]: Davie-scheme solver with Jacobian propagation.
//! * [`verify`]: residual checks for change of coordinates, composition,
//!   Itô–Wentzel and invariance of the sphere.
//! * [`linear`]: block decomposition `Φ = η ψ` of linear flows.
//! * [`schur`], [`logm`], [`cascade`]: ordered real Schur form, principal
//!   logarithm and the row-band cascade `Φ = ξ¹ ⋯ ξᵏ`.
//! * [`planar`]: grid-sampled nonlinear decomposition in the plane.
//! * [`io`]: CSV/JSON artifacts.

pub mod cascade;
pub mod convergence;
pub mod error;
pub mod fd;
pub mod integral;
pub mod io;
pub mod linear;
pub mod logm;
pub mod noise;
pub mod planar;
pub mod rde;
pub mod rough_path;
pub mod schur;
pub mod verify;

pub use cascade::{
    cascade_decompose, cascade_in_basis, factor_matrix_with_real_log, recompose_cascade, CascadeFactorization,
    MatrixFactorization,
};
pub use convergence::{fit_order, ConvergenceStudy};
pub use error::{Error, Result};
pub use integral::{ControlledPath, LocalErrorReport};
pub use linear::{
    decompose_blocks, detect_explosion, recompose, solve_linear_flow, BlockPartition, DecompositionPair,
    ExplosionCause, ExplosionReport, LinearFlowPath,
};
pub use logm::logm;
pub use nalgebra::{DMatrix, DVector};
pub use noise::GaussianSampler;
pub use planar::{
    evolve_decomposition, invert_horizontal_diffeo, split_vector_field, verify_planar_decomposition, DiffeoGrid,
    GridSpec, PlanarDecomposition, PlanarReport, Rect, Snapshot, Truncation, TruncationCause,
};
pub use rde::{solve_flow, solve_rde, solve_rde_segment, step_davie, BlowUp, Trajectory, VectorFieldSet};
pub use rough_path::{
    chen_defect, geometricity_defect, lift_brownian, lift_function, lift_smooth, time_path, HolderEstimate,
    RoughPath, SecondLevel, TimeGrid,
};
pub use schur::{real_block_form, reorder_blocks, RealBlockBasis};
pub use verify::{
    verify_change_of_coords, verify_composition, verify_ito_wentzel, verify_manifold_invariance, ControlledFamily,
    WentzelField,
};
