//! The constructed default instance.
//!
//! Two targets `sin(πω)` and `sin(2πω)`, `σ = 10⁻²`, control bounds
//! `[−1.5, 3]` and observations generated at `x* = (0.3, 0.7)`:
//! `y_o = ψ^y(x*)`, `u_o = ψ^u(x*)`. The global value of the bilevel problem
//! is therefore 0, attained at `x*`. At `x*` the control sits on the upper
//! bound at 23 nodes and on the lower bound at 5.

use crate::config::ProblemFile;
use crate::discretization::Grid;
use crate::error::Result;
use crate::lower::LowerSolver;
use crate::model::{
    AdmissibleSet, ControlBounds, LowerObjective, ProblemSpec, Tolerances, UpperObjective,
};

pub const DEFAULT_NODES: usize = 64;
pub const DEFAULT_SIGMA: f64 = 1e-2;
pub const DEFAULT_X_STAR: [f64; 2] = [0.3, 0.7];
pub const DEFAULT_UA: f64 = -1.5;
pub const DEFAULT_UB: f64 = 3.0;

/// Lower-level data of the default instance; the observations are placeholders.
fn skeleton(x_ad: AdmissibleSet<f64>) -> Result<ProblemSpec<f64>> {
    use std::f64::consts::PI;
    let g = Grid::new(DEFAULT_NODES)?;
    let targets = vec![g.sample(|w: f64| (PI * w).sin()), g.sample(|w: f64| (2.0 * PI * w).sin())];
    ProblemSpec::new(
        g.clone(),
        DEFAULT_SIGMA,
        LowerObjective::TargetType { targets },
        UpperObjective { c_y: 1.0, y_o: g.zeros(), c_u: 1.0, u_o: g.zeros(), gamma: 0.0 },
        x_ad,
        ControlBounds::constant(DEFAULT_NODES, DEFAULT_UA, DEFAULT_UB),
        Tolerances::default(),
    )
}

/// Replaces the observations by the lower-level response at `x_star`.
pub fn observe_at(spec: ProblemSpec<f64>, x_star: &[f64], c_y: f64, c_u: f64) -> Result<ProblemSpec<f64>> {
    let sol = LowerSolver::new(&spec).solve(x_star, 1e-13, None)?;
    let upper = UpperObjective { c_y, y_o: sol.y, c_u, u_o: sol.u, gamma: 0.0 };
    spec.with_upper(upper)
}

/// Default instance on the simplex together with its generating parameter.
pub fn default_instance() -> Result<(ProblemSpec<f64>, Vec<f64>)> {
    let spec = observe_at(skeleton(AdmissibleSet::Simplex { n: 2 })?, &DEFAULT_X_STAR, 1.0, 1.0)?;
    Ok((spec, DEFAULT_X_STAR.to_vec()))
}

/// Same data with `X_ad = [0, 1]²`.
pub fn box_instance() -> Result<(ProblemSpec<f64>, Vec<f64>)> {
    let x_ad = AdmissibleSet::Box { lower: vec![0.0; 2], upper: vec![1.0; 2] };
    let spec = observe_at(skeleton(x_ad)?, &DEFAULT_X_STAR, 1.0, 1.0)?;
    Ok((spec, DEFAULT_X_STAR.to_vec()))
}

pub fn default_problem_file() -> Result<ProblemFile> {
    let (spec, x) = default_instance()?;
    Ok(ProblemFile::from_spec(&spec, Some(x)))
}

/// Instance whose relaxed constraint never binds for large `ε`: only
/// `(1/2)‖u − u_o‖²` is penalized and `u_o` is feasible.
pub fn inactive_instance() -> Result<ProblemSpec<f64>> {
    let spec = skeleton(AdmissibleSet::Simplex { n: 2 })?;
    let g = spec.grid().clone();
    let upper = UpperObjective {
        c_y: 0.0,
        y_o: g.zeros(),
        c_u: 1.0,
        u_o: g.sample(|w| w - 0.25),
        gamma: 0.0,
    };
    spec.with_upper(upper)
}
