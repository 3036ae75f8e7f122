//! Relaxation path `ε_k = ε₀·r^k`, `k = 0..K`, with warm starts, the
//! recombined multipliers
//!
//! ```text
//!     μ_k = α_k(ȳ_k − ψ^y(x̄_k))      w_k = α_k(ū_k − ψ^u(x̄_k))
//!     ρ_k = p_k − α_k φ^p(x̄_k)       ξ_k = λ_k − α_k φ^λ(x̄_k)
//! ```
//!
//! and extraction of a limit candidate for certification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lower::LowerSolution;
use crate::model::ProblemSpec;
use crate::relaxed::{RelaxedKkt, RelaxedOptions, RelaxedSolution, RelaxedSolver};
use crate::scalar::{vecops, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule<T> {
    pub eps0: T,
    pub ratio: T,
    pub steps: usize,
}

impl<T: Real> Default for Schedule<T> {
    fn default() -> Self {
        Self {
            eps0: T::one(),
            ratio: T::lit(0.5),
            steps: 20,
        }
    }
}

impl<T: Real> Schedule<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps0 > T::zero() && self.eps0.is_finite()) {
            return Err(Error::Domain(format!("eps0 must be positive, got {}", self.eps0)));
        }
        if !(self.ratio > T::zero() && self.ratio < T::one()) {
            return Err(Error::Domain(format!("ratio must lie in (0, 1), got {}", self.ratio)));
        }
        if self.steps < 2 {
            return Err(Error::Domain(format!("need at least 2 steps, got {}", self.steps)));
        }
        Ok(())
    }

    /// `ε₀, ε₀r, …, ε₀r^K`
    pub fn values(&self) -> Vec<T> {
        (0..=self.steps)
            .map(|k| self.eps0 * self.ratio.powi(k as i32))
            .collect()
    }

    /// Whether the schedule reaches `ε_K ≤ 10⁻⁶ ε₀`.
    pub fn is_deep(&self) -> bool {
        self.ratio.powi(self.steps as i32) <= T::lit(1e-6)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord<T> {
    pub k: usize,
    pub solution: RelaxedSolution<T>,
    /// Lower-level solution at `x̄_k`.
    pub lower: LowerSolution<T>,
    pub kkt: RelaxedKkt<T>,
    pub mu: Vec<T>,
    pub w: Vec<T>,
    pub rho: Vec<T>,
    pub xi: Vec<T>,
    /// `‖ū_k − ψ^u(x̄_k)‖`
    pub u_distance: T,
    /// `(σ/2)‖ū_k − ψ^u(x̄_k)‖² ≤ ε_k + feas_tol`
    pub feasibility_bound_holds: bool,
    /// `F(x̄_k, ψ^y(x̄_k), ψ^u(x̄_k))`
    pub recentered_upper: T,
    /// `|x̄_k − x̄_{k−1}|` and `‖ū_k − ū_{k−1}‖`; zero at `k = 0`.
    pub step_x: T,
    pub step_u: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathFailure {
    pub k: usize,
    pub eps: f64,
    pub message: String,
}

/// One row of the CSV export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRow {
    pub k: usize,
    pub eps: f64,
    pub upper_value: f64,
    pub gap: f64,
    pub alpha: f64,
    pub u_distance: f64,
    pub r_x: f64,
    pub r_y: f64,
    pub r_u: f64,
    pub r_z: f64,
    pub r_comp: f64,
    pub r_lambda: f64,
    pub step_x: f64,
    pub step_u: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathTrace<T> {
    pub schedule: Schedule<T>,
    pub options: RelaxedOptions<T>,
    pub records: Vec<PathRecord<T>>,
    pub failure: Option<PathFailure>,
    /// Steps at which the optimal value decreased although the previous and
    /// current solves were complementary; hints at a local minimum.
    pub warnings: Vec<String>,
    /// `|x̄_k − x̄_{k−1}|` and `‖ū_k − ū_{k−1}‖` nonincreasing over the last
    /// five steps.
    pub cauchy_ok: bool,
    /// Largest norm of `(μ_k, w_k, ρ_k, ξ_k)` along the path.
    pub multiplier_sup: T,
    pub multipliers_bounded: bool,
}

/// Multipliers above this size are reported as unbounded.
pub const MULTIPLIER_BOUND: f64 = 1e8;

/// Candidate limit point with the multipliers of the stationarity system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate<T> {
    pub x: Vec<T>,
    pub y: Vec<T>,
    pub u: Vec<T>,
    pub z: Vec<T>,
    pub mu: Vec<T>,
    pub w: Vec<T>,
    pub rho: Vec<T>,
    pub xi: Vec<T>,
    pub p: Vec<T>,
    pub lambda: Vec<T>,
    pub eps: T,
    pub alpha: T,
    /// `F` at the re-centered point.
    pub upper_value: T,
    /// `|x̄_K − x̄_{K−1}|`
    pub cauchy_x: T,
    pub cauchy_ok: bool,
}

impl<T: Real> PathTrace<T> {
    pub fn rows(&self) -> Vec<PathRow> {
        self.records
            .iter()
            .map(|r| {
                let s = &r.solution;
                PathRow {
                    k: r.k,
                    eps: s.eps.to_f64_lossy(),
                    upper_value: s.upper_value.to_f64_lossy(),
                    gap: s.gap.to_f64_lossy(),
                    alpha: s.alpha.to_f64_lossy(),
                    u_distance: r.u_distance.to_f64_lossy(),
                    r_x: r.kkt.r_x.to_f64_lossy(),
                    r_y: r.kkt.r_y.to_f64_lossy(),
                    r_u: r.kkt.r_u.to_f64_lossy(),
                    r_z: r.kkt.r_z.to_f64_lossy(),
                    r_comp: r.kkt.r_comp.to_f64_lossy(),
                    r_lambda: r.kkt.r_lambda.to_f64_lossy(),
                    step_x: r.step_x.to_f64_lossy(),
                    step_u: r.step_u.to_f64_lossy(),
                }
            })
            .collect()
    }

    pub fn last(&self) -> Option<&PathRecord<T>> {
        self.records.last()
    }
}

fn record<T: Real>(
    solver: &RelaxedSolver<'_, T>,
    k: usize,
    sol: RelaxedSolution<T>,
    prev: Option<&PathRecord<T>>,
) -> Result<PathRecord<T>> {
    let spec = solver.spec();
    let g = spec.grid();
    let lower = solver
        .lower_solver()
        .solve(&sol.x, spec.tol.solver_tol, None)?;
    let kkt = solver.kkt_residuals(&sol)?;
    let a = sol.alpha;
    let dy = vecops::sub(&sol.y, &lower.y);
    let du = vecops::sub(&sol.u, &lower.u);
    let mu = vecops::scale(a, &dy);
    let w = vecops::scale(a, &du);
    let rho: Vec<T> = sol.p.iter().zip(&lower.p).map(|(&p, &q)| p - a * q).collect();
    let xi: Vec<T> = sol
        .lambda
        .iter()
        .zip(&lower.lambda)
        .map(|(&l, &m)| l - a * m)
        .collect();
    let u_distance = g.nrm(&du);
    let bound = T::lit(0.5) * spec.sigma * u_distance * u_distance;
    let feasibility_bound_holds = bound <= sol.eps + solver.options.feas_tol;
    let (step_x, step_u) = match prev {
        Some(p) => (
            vecops::norm2(&vecops::sub(&sol.x, &p.solution.x)),
            g.nrm(&vecops::sub(&sol.u, &p.solution.u)),
        ),
        None => (T::zero(), T::zero()),
    };
    let recentered_upper = spec.upper_value(&lower.x, &lower.y, &lower.u);
    Ok(PathRecord {
        k,
        recentered_upper,
        solution: sol,
        lower,
        kkt,
        mu,
        w,
        rho,
        xi,
        u_distance,
        feasibility_bound_holds,
        step_x,
        step_u,
    })
}

/// Runs the schedule. Solver failures end the path early and are recorded
/// in [`PathTrace::failure`]; only an invalid schedule is an error.
pub fn run_path<T: Real>(
    spec: &ProblemSpec<T>,
    schedule: Schedule<T>,
    options: RelaxedOptions<T>,
) -> Result<PathTrace<T>> {
    schedule.validate()?;
    let solver = RelaxedSolver::with_options(spec, options);
    let mut records: Vec<PathRecord<T>> = Vec::with_capacity(schedule.steps + 1);
    let mut failure = None;
    let mut warnings = Vec::new();
    for (k, eps) in schedule.values().into_iter().enumerate() {
        let warm = records.last().map(|r| &r.solution);
        let outcome = solver
            .solve(eps, warm)
            .and_then(|sol| record(&solver, k, sol, records.last()));
        match outcome {
            Ok(rec) => {
                if let Some(prev) = records.last() {
                    let comp = options.comp_tol;
                    let drop = prev.solution.upper_value - rec.solution.upper_value;
                    if prev.kkt.r_comp <= comp && rec.kkt.r_comp <= comp && drop > T::lit(1e-8) {
                        warnings.push(format!(
                            "k = {k}: upper value decreased by {:e} along a shrinking feasible set",
                            drop.to_f64_lossy()
                        ));
                    }
                }
                records.push(rec);
            }
            Err(e) => {
                failure = Some(PathFailure {
                    k,
                    eps: eps.to_f64_lossy(),
                    message: e.to_string(),
                });
                break;
            }
        }
    }
    let tail = records.len().saturating_sub(5).max(1);
    let slack = T::lit(1e-12);
    let cauchy_ok = failure.is_none()
        && records.len() >= 2
        && records[tail..].windows(2).all(|w| {
            w[1].step_x <= w[0].step_x + slack && w[1].step_u <= w[0].step_u + slack
        });
    let multiplier_sup = records
        .iter()
        .map(|r| {
            let g = spec.grid();
            g.nrm(&r.mu).max(g.nrm(&r.w)).max(g.nrm(&r.rho)).max(g.nrm(&r.xi))
        })
        .fold(T::zero(), T::max);
    Ok(PathTrace {
        schedule,
        options,
        records,
        failure,
        warnings,
        cauchy_ok,
        multiplier_sup,
        multipliers_bounded: multiplier_sup <= T::lit(MULTIPLIER_BOUND),
    })
}

/// Re-centers the last iterate onto the lower-level solution map and
/// attaches the recombined multipliers of the same step.
pub fn extract_candidate<T: Real>(trace: &PathTrace<T>) -> Result<Candidate<T>> {
    let n = trace.records.len();
    if n < 2 {
        return Err(Error::InsufficientPath {
            successes: n,
            required: 2,
        });
    }
    let last = &trace.records[n - 1];
    Ok(Candidate {
        x: last.lower.x.clone(),
        y: last.lower.y.clone(),
        u: last.lower.u.clone(),
        z: last.solution.z.clone(),
        mu: last.mu.clone(),
        w: last.w.clone(),
        rho: last.rho.clone(),
        xi: last.xi.clone(),
        p: last.lower.p.clone(),
        lambda: last.lower.lambda.clone(),
        eps: last.solution.eps,
        alpha: last.solution.alpha,
        upper_value: last.recentered_upper,
        cauchy_x: last.step_x,
        cauchy_ok: trace.cauchy_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance;

    #[test]
    fn schedule_validation() {
        let ok = Schedule { eps0: 1.0, ratio: 0.5, steps: 20 };
        assert!(ok.validate().is_ok() && ok.is_deep());
        assert_eq!(ok.values().len(), 21);
        for bad in [
            Schedule { eps0: 0.0, ratio: 0.5, steps: 20 },
            Schedule { eps0: 1.0, ratio: 1.0, steps: 20 },
            Schedule { eps0: 1.0, ratio: 0.5, steps: 1 },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn inactive_path_is_stationary_with_zero_recombination() {
        let spec = instance::inactive_instance().unwrap();
        let sched = Schedule { eps0: 1e6, ratio: 0.5, steps: 2 };
        let trace = run_path(&spec, sched, RelaxedOptions::default()).unwrap();
        assert!(trace.failure.is_none());
        assert_eq!(trace.records.len(), 3);
        let first = &trace.records[0].solution;
        for r in &trace.records {
            assert_eq!(r.solution.alpha, 0.0);
            assert_eq!(r.solution.x, first.x);
            assert_eq!(r.solution.u, first.u);
            assert!(r.feasibility_bound_holds);
        }
        let c = extract_candidate(&trace).unwrap();
        assert!(c.mu.iter().chain(&c.w).all(|&v| v == 0.0));
        let last = &trace.records[2].solution;
        assert_eq!(c.rho, last.p);
        assert_eq!(c.xi, last.lambda);
    }

    #[test]
    fn short_trace_is_insufficient() {
        let spec = instance::inactive_instance().unwrap();
        let mut trace = run_path(&spec, Schedule { eps0: 1e6, ratio: 0.5, steps: 2 }, RelaxedOptions::default()).unwrap();
        trace.records.truncate(1);
        assert!(matches!(
            extract_candidate(&trace),
            Err(Error::InsufficientPath { successes: 1, required: 2 })
        ));
    }

    #[test]
    fn default_path_is_feasible_and_settles() {
        let (spec, _) = instance::default_instance().unwrap();
        let trace = run_path(&spec, Schedule::default(), RelaxedOptions::default()).unwrap();
        assert!(trace.failure.is_none(), "{:?}", trace.failure);
        assert_eq!(trace.records.len(), 21);
        for r in &trace.records {
            let bound = (2.0 * r.solution.eps / spec.sigma).sqrt();
            assert!(r.u_distance <= bound * (1.0 + 1e-9) + 1e-9);
            assert!(r.feasibility_bound_holds);
        }
        let last = trace.last().unwrap();
        assert!(last.solution.gap <= last.solution.eps * 1.01);
        assert!(spec.x_ad.contains(&last.solution.x, 1e-12));
        assert!(trace.multipliers_bounded);
        let c = extract_candidate(&trace).unwrap();
        assert!(c.cauchy_x <= 1e-3);
    }
}
