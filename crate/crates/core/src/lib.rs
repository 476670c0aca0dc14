//! Bearing-only orientation alignment for leader-follower networks on SO(3).
//!
//! Agent 1 is a fixed leader, agent 2 aligns to it using reciprocal bearings
//! plus landmark plane normals, and every later agent aligns to two earlier
//! agents. The crate provides the rotation primitives, measurement synthesis,
//! error functions and control laws, a fixed-step integrator, and the
//! post-hoc analyses used to check stability and convergence.

// Guards like `!(x > 0.0)` are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod control;
pub mod eigen;
pub mod error;
pub mod io;
pub mod scenario;
pub mod sensing;
pub mod simulator;
pub mod so3;

pub use analysis::{
    convergence_analysis, equilibrium_probe, iss_gain_experiment, lyapunov_audit, ConvergenceReport, EquilibriumReport,
    IssTable, LyapunovAudit, ProbeOptions,
};
pub use control::{
    classify_critical_points, design_gains, error_function, error_vector, gain_bounds, k_matrix, scenario_k_matrix,
    CriticalKind, ErrorVector, GainBounds, KMatrix,
};
pub use error::{Error, Result};
pub use scenario::{
    validate_scenario, AgentSpec, GainKey, GainTable, Integration, LandmarkMode, LandmarkSpec, Scenario, SensingGraph,
    ValidationReport, Violation,
};
pub use sensing::{bearing, landmark_normal, measure_all, AgentState, MeasurementSet};
pub use simulator::{
    monte_carlo, random_initial_state, steps_for, MonteCarloOptions, MonteCarloSummary, Simulator, SystemState,
    TrajectoryLog,
};
pub use so3::{exp_so3, frobenius_error, hat, project_to_so3, vee, Frame, Matrix3, Rotation, UnitVector3, Vector3};
