//! Flux-reconstruction solver for 1D periodic linear advection, built on
//! the offload runtime: operators as GEMMs, interface fluxes and assembly
//! as generated pointwise kernels, classical RK4 in time.

pub mod config;
pub mod operators;
pub mod solver;

pub use config::{InitialCondition, SolverConfig};
pub use operators::{build_operators, FrOperators};
pub use solver::{
    flops_per_step, riemann_upwind, run_simulation, run_simulation_on, DiagnosticRecord, Rk4Stepper, RunSummary,
    SimulationResult, Solver,
};
