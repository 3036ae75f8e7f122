//! Inverse optimal control of a 1D Poisson problem by relaxation of the
//! optimal value reformulation.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which is what the CLI and the default
//! tolerances assume.

pub mod config;
pub mod discretization;
pub mod error;
pub mod instance;
pub mod lower;
pub mod model;
pub mod oracle;
pub mod path;
pub mod relaxed;
pub mod scalar;
pub mod stationarity;
pub mod value;

pub use error::{Error, Result};
pub use config::{load_problem, save_problem, ProblemFile};
pub use oracle::{OracleResult, OracleSample, Verdict};
pub use scalar::Real;

pub type Grid = discretization::Grid<f64>;
pub type EllipticOperator = discretization::EllipticOperator<f64>;
pub type LowerObjective = model::LowerObjective<f64>;
pub type UpperObjective = model::UpperObjective<f64>;
pub type AdmissibleSet = model::AdmissibleSet<f64>;
pub type ControlBounds = model::ControlBounds<f64>;
pub type Tolerances = model::Tolerances<f64>;
pub type ProblemSpec = model::ProblemSpec<f64>;
pub type LowerSolution = lower::LowerSolution<f64>;
pub type LowerSolver<'a> = lower::LowerSolver<'a, f64>;

pub type ValueFunction<'a> = value::ValueFunction<'a, f64>;
pub type ValueSample = value::ValueSample<f64>;
pub type RelaxedSolution = relaxed::RelaxedSolution<f64>;
pub type RelaxedSolver<'a> = relaxed::RelaxedSolver<'a, f64>;
pub type RelaxedOptions = relaxed::RelaxedOptions<f64>;
pub type PathTrace = path::PathTrace<f64>;
pub type Candidate = path::Candidate<f64>;
pub type Schedule = path::Schedule<f64>;
pub type Point = stationarity::Point<f64>;
pub type Multipliers = stationarity::Multipliers<f64>;

pub type ProblemSpec32 = model::ProblemSpec<f32>;
pub type LowerSolution32 = lower::LowerSolution<f32>;
