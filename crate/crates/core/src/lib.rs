//! Seeded spatially coupled compressed sensing.
//!
//! Builds coupled measurement ensembles, iterates their state evolution,
//! locates reconstruction thresholds and seeding boundaries, measures the
//! reconstruction wave speed and checks all of it against a finite-size
//! approximate message passing solver.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases below fix it to `f64`, which is what the threshold searches
//! and the command-line driver use.

pub mod amp;
pub mod model;
pub mod quadrature;
pub mod scalar;
pub mod state_evolution;
pub mod table;
pub mod thresholds;

pub use model::{
    build_alpha_profile, build_coupling_matrix, effective_alpha, shape_weight, AlphaProfile, Boundary,
    CouplingMatrix, CouplingSpec, ModelError, ProblemParams, ShapeFunction, ShapeKind,
};
pub use scalar::Scalar;
pub use state_evolution::{
    g_integral, mmse_update, propagation_speed, se_run, se_step, se_trajectory, wavefront_position, ErrorProfile, SEContext,
    SEOutcome, SeError, SeInit, SeStatus, SpeedEstimate, StopRule,
};

pub type CouplingMatrix64 = CouplingMatrix<f64>;
pub type AlphaProfile64 = AlphaProfile<f64>;
pub type ProblemParams64 = ProblemParams<f64>;
pub type ErrorProfile64 = ErrorProfile<f64>;
pub type SEContext64 = SEContext<f64>;
pub type SEOutcome64 = SEOutcome<f64>;
pub type StopRule64 = StopRule<f64>;
