//! The parametric lower-level problem
//!
//! ```text
//!     min  x·j(y) + (σ/2)‖u‖²   s.t.  Ay = Bu,  u_a ≤ u ≤ u_b
//! ```
//!
//! solved in reduced form `g(u) = x·j(Su) + (σ/2)‖u‖²` over `U_ad` by
//! projected gradient with the fixed step `1/(σ + L_x)`. For `x ≥ 0` the
//! reduced objective is `σ`-strongly convex, so the minimizer and the
//! multipliers `p = φ^p(x)`, `λ = φ^λ(x)` are unique.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LowerObjective, ProblemSpec};
use crate::scalar::{vecops, Real};

pub const DEFAULT_MAX_ITERATIONS: usize = 200_000;

/// Unique solution of the lower-level problem at one parameter together
/// with its Lagrange multipliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerSolution<T> {
    pub x: Vec<T>,
    pub y: Vec<T>,
    pub u: Vec<T>,
    /// Adjoint state, `A*p = −j'(y)*x`.
    pub p: Vec<T>,
    /// Bound multiplier, `λ = B*p − σu ∈ N_{U_ad}(u)`.
    pub lambda: Vec<T>,
    pub kkt_residual: T,
    pub iterations: usize,
}

/// Residuals of the lower-level KKT system at a given quadruple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerKkt<T> {
    /// `‖Ay − Bu‖`
    pub state: T,
    /// `‖j'(y)*x + A*p‖`
    pub adjoint: T,
    /// `‖σu − B*p + λ‖`
    pub gradient: T,
    /// Violation of `λ ∈ N_{U_ad}(u)`.
    pub normal_cone: T,
    /// Violation of `u ∈ U_ad`.
    pub feasibility: T,
}

impl<T: Real> LowerKkt<T> {
    pub fn max(&self) -> T {
        self.state
            .max(self.adjoint)
            .max(self.gradient)
            .max(self.normal_cone)
            .max(self.feasibility)
    }
}

/// Empirical Lipschitz record between two parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzRecord<T> {
    pub dx: T,
    pub du: T,
    pub dy: T,
    pub dp: T,
    pub dlambda: T,
}

/// Lower-level solver bound to one problem instance.
///
/// Caches the curvature data needed for the step size: `‖S‖²` for
/// target-type objectives and the per-measurement rank-one curvatures
/// `2‖S*δ_k‖²` for pointwise ones.
#[derive(Debug, Clone)]
pub struct LowerSolver<'a, T> {
    spec: &'a ProblemSpec<T>,
    curvature: Curvature<T>,
    pub max_iterations: usize,
}

#[derive(Debug, Clone)]
enum Curvature<T> {
    /// `L_x = 2(Σx)‖S‖²`
    Target { s_norm_sq: T },
    /// `L_x = Σ x_i c_i`
    Pointwise { per_point: Vec<T> },
}

impl<'a, T: Real> LowerSolver<'a, T> {
    pub fn new(spec: &'a ProblemSpec<T>) -> Self {
        let curvature = match &spec.lower {
            LowerObjective::TargetType { .. } => Curvature::Target {
                // Power iteration slightly underestimates; pad by 1%.
                s_norm_sq: spec.op().solution_operator_norm_sq(200) * T::lit(1.01),
            },
            LowerObjective::Pointwise { nodes, .. } => {
                let g = spec.grid();
                let per_point = nodes
                    .iter()
                    .map(|&k| {
                        let mut delta = g.zeros();
                        delta[k] = T::one() / g.h();
                        let col = spec.state_adjoint(&delta);
                        T::lit(2.0) * g.ip(&col, &col)
                    })
                    .collect();
                Curvature::Pointwise { per_point }
            }
        };
        Self {
            spec,
            curvature,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }

    pub fn spec(&self) -> &'a ProblemSpec<T> {
        self.spec
    }

    /// Upper bound on the curvature of `u ↦ x·j(Su)`.
    pub fn curvature_bound(&self, x: &[T]) -> T {
        match &self.curvature {
            Curvature::Target { s_norm_sq } => {
                T::lit(2.0) * x.iter().copied().sum::<T>() * *s_norm_sq
            }
            Curvature::Pointwise { per_point } => vecops::dot(x, per_point),
        }
    }

    /// Checks `x ∈ R^n_+` up to round-off and clips tiny negatives to zero.
    pub fn admissible_parameter(&self, x: &[T]) -> Result<Vec<T>> {
        Error::check_len(self.spec.n_params(), x.len())?;
        let slack = T::lit(1e-12);
        if let Some((i, &v)) = x.iter().enumerate().find(|(_, &v)| !(v >= -slack)) {
            return Err(Error::Domain(format!(
                "parameter component {i} = {v} is negative; the lower level may be nonconvex there"
            )));
        }
        Ok(x.iter().map(|&v| v.max(T::zero())).collect())
    }

    /// Reduced gradient `∇g(u) = S*(j'(Su)*x) + σu` and the state `Su`.
    fn reduced_gradient(&self, x: &[T], u: &[T]) -> (Vec<T>, Vec<T>) {
        let spec = self.spec;
        let y = spec.state(u);
        let jx = spec.lower.grad_adjoint_unchecked(spec.grid(), &y, x);
        let mut g = spec.state_adjoint(&jx);
        vecops::axpy(spec.sigma, u, &mut g);
        (g, y)
    }

    pub fn solve(&self, x: &[T], tol: T, warm_start: Option<&[T]>) -> Result<LowerSolution<T>> {
        if !(tol > T::zero()) {
            return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
        }
        let x = self.admissible_parameter(x)?;
        let spec = self.spec;
        let grid = spec.grid();
        let bounds = &spec.bounds;
        let tau = T::one() / (spec.sigma + self.curvature_bound(&x));

        let mut u = match warm_start {
            Some(w) => {
                grid.check(w)?;
                bounds.project(w)
            }
            None => bounds.project(&grid.zeros()),
        };
        let mut residual = T::infinity();
        let mut iterations = 0;
        while iterations < self.max_iterations {
            let (g, _) = self.reduced_gradient(&x, &u);
            let trial: Vec<T> = u.iter().zip(&g).map(|(&ui, &gi)| ui - tau * gi).collect();
            let next = bounds.project(&trial);
            residual = grid.nrm(&vecops::sub(&next, &u));
            if residual <= tol {
                break;
            }
            u = next;
            iterations += 1;
        }
        if !(residual <= tol) {
            return Err(Error::Convergence {
                solver: "lower-level projected gradient",
                iterations,
                residual: residual.to_f64_lossy(),
                best: None,
            });
        }

        let y = spec.state(&u);
        let jx = spec.lower.grad_adjoint_unchecked(grid, &y, &x);
        let p: Vec<T> = spec.op().solve_unchecked(&jx).iter().map(|&v| -v).collect();
        let lambda: Vec<T> = p.iter().zip(&u).map(|(&pi, &ui)| pi - spec.sigma * ui).collect();
        let mut sol = LowerSolution {
            x,
            y,
            u,
            p,
            lambda,
            kkt_residual: T::zero(),
            iterations,
        };
        sol.kkt_residual = self.kkt(&sol).max();
        Ok(sol)
    }

    /// Evaluates every lower-level KKT condition at `sol` from scratch.
    pub fn kkt(&self, sol: &LowerSolution<T>) -> LowerKkt<T> {
        lower_kkt(self.spec, &sol.x, &sol.y, &sol.u, &sol.p, &sol.lambda)
    }

    /// `f(x, Su, u)`
    pub fn objective(&self, x: &[T], u: &[T]) -> T {
        let y = self.spec.state(u);
        self.spec.lower_value(x, &y, u)
    }

    pub fn lipschitz_probe(&self, x1: &[T], x2: &[T]) -> Result<LipschitzRecord<T>> {
        let tol = self.spec.tol.solver_tol;
        let s1 = self.solve(x1, tol, None)?;
        let s2 = self.solve(x2, tol, Some(&s1.u))?;
        let g = self.spec.grid();
        Ok(LipschitzRecord {
            dx: vecops::norm2(&vecops::sub(&s1.x, &s2.x)),
            du: g.nrm(&vecops::sub(&s1.u, &s2.u)),
            dy: g.nrm(&vecops::sub(&s1.y, &s2.y)),
            dp: g.nrm(&vecops::sub(&s1.p, &s2.p)),
            dlambda: g.nrm(&vecops::sub(&s1.lambda, &s2.lambda)),
        })
    }
}

/// Lower-level KKT residuals of an arbitrary quadruple `(y, u, p, λ)` at `x`.
pub fn lower_kkt<T: Real>(
    spec: &ProblemSpec<T>,
    x: &[T],
    y: &[T],
    u: &[T],
    p: &[T],
    lambda: &[T],
) -> LowerKkt<T> {
    let g = spec.grid();
    let op = spec.op();
    let state = g.nrm(&vecops::sub(&op.apply_unchecked(y), u));
    let mut adj = spec.lower.grad_adjoint_unchecked(g, y, x);
    vecops::axpy(T::one(), &op.apply_unchecked(p), &mut adj);
    let grad: Vec<T> = u
        .iter()
        .zip(p)
        .zip(lambda)
        .map(|((&ui, &pi), &li)| spec.sigma * ui - pi + li)
        .collect();
    let feasibility = spec.bounds.max_violation(u);
    // The normal-cone check rejects infeasible points; report the violation
    // separately in that case.
    let normal_cone = spec
        .bounds
        .normal_cone_residual(u, lambda, spec.tol.active_tol)
        .unwrap_or(T::infinity());
    LowerKkt {
        state,
        adjoint: g.nrm(&adj),
        gradient: g.nrm(&grad),
        normal_cone,
        feasibility,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::Grid;
    use crate::model::{AdmissibleSet, ControlBounds, Tolerances, UpperObjective};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(n: usize, targets: Vec<Vec<f64>>, bounds: ControlBounds<f64>, sigma: f64) -> ProblemSpec<f64> {
        let g = Grid::new(n).unwrap();
        let k = targets.len();
        ProblemSpec::new(
            g.clone(),
            sigma,
            LowerObjective::TargetType { targets },
            UpperObjective { c_y: 1.0, y_o: g.zeros(), c_u: 1.0, u_o: g.zeros(), gamma: 0.0 },
            AdmissibleSet::Simplex { n: k },
            bounds,
            Tolerances::default(),
        )
        .unwrap()
    }

    /// Dense Gaussian elimination with partial pivoting.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for c in 0..n {
            let piv = (c..n).max_by(|&i, &j| a[i][c].abs().partial_cmp(&a[j][c].abs()).unwrap()).unwrap();
            a.swap(c, piv);
            b.swap(c, piv);
            for r in c + 1..n {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
            x[r] = (b[r] - s) / a[r][r];
        }
        x
    }

    #[test]
    fn zero_target_gives_zero_solution() {
        let s = spec(16, vec![vec![0.0; 16]], ControlBounds::constant(16, 0.0, f64::INFINITY), 0.01);
        let sol = LowerSolver::new(&s).solve(&[1.0], 1e-10, None).unwrap();
        for v in [&sol.u, &sol.y, &sol.p, &sol.lambda] {
            assert!(vecops::norm_inf(v) == 0.0);
        }
    }

    #[test]
    fn zero_parameter_gives_zero_control() {
        let g = Grid::<f64>::new(16).unwrap();
        let s = spec(16, vec![g.sample(|w| w.sin())], ControlBounds::constant(16, -1.0, 1.0), 0.01);
        let sol = LowerSolver::new(&s).solve(&[0.0], 1e-10, None).unwrap();
        assert!(vecops::norm_inf(&sol.u) < 1e-14);
        assert!(vecops::norm_inf(&sol.y) < 1e-14);
    }

    #[test]
    fn negative_parameter_rejected_and_round_off_clipped() {
        let s = spec(8, vec![vec![0.1; 8], vec![0.2; 8]], ControlBounds::constant(8, -1.0, 1.0), 0.1);
        let solver = LowerSolver::new(&s);
        assert!(matches!(solver.solve(&[-0.1, 1.1], 1e-10, None), Err(Error::Domain(_))));
        let sol = solver.solve(&[-1e-14, 1.0], 1e-10, None).unwrap();
        assert_eq!(sol.x, vec![0.0, 1.0]);
    }

    #[test]
    fn unconstrained_case_matches_dense_normal_equations() {
        // (2x₁S*S + σI)u = 2x₁S*y_d with S assembled column by column.
        let n = 24;
        let g = Grid::<f64>::new(n).unwrap();
        let yd = g.sample(|w| (3.0 * w).sin() + w);
        let sigma = 0.05;
        let x1 = 0.8;
        let s = spec(n, vec![yd.clone()], ControlBounds::unbounded(n), sigma);
        let cols: Vec<Vec<f64>> = (0..n)
            .map(|j| {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                s.state(&e)
            })
            .collect();
        // With the weighted inner product S* = Sᵀ (A symmetric), so the
        // normal equations read (2x₁SᵀS + σI)u = 2x₁Sᵀy_d in coefficients.
        let mut mat = vec![vec![0.0; n]; n];
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                let sts: f64 = (0..n).map(|k| cols[i][k] * cols[j][k]).sum();
                mat[i][j] = 2.0 * x1 * sts + if i == j { sigma } else { 0.0 };
            }
            rhs[i] = 2.0 * x1 * (0..n).map(|k| cols[i][k] * yd[k]).sum::<f64>();
        }
        let dense = dense_solve(mat, rhs);
        let sol = LowerSolver::new(&s).solve(&[x1], 1e-12, None).unwrap();
        assert!(vecops::max_abs_diff(&sol.u, &dense) < 1e-8);
    }

    fn default_like() -> ProblemSpec<f64> {
        let g = Grid::<f64>::new(64).unwrap();
        let pi = std::f64::consts::PI;
        spec(
            64,
            vec![g.sample(|w| (pi * w).sin()), g.sample(|w| (2.0 * pi * w).sin())],
            ControlBounds::constant(64, -1.5, 3.0),
            0.01,
        )
    }

    #[test]
    fn kkt_and_uniqueness_on_random_parameters() {
        let s = default_like();
        let solver = LowerSolver::new(&s);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let a: f64 = rng.gen_range(0.0..1.0);
            let x = [a, 1.0 - a];
            let cold = solver.solve(&x, 1e-10, None).unwrap();
            assert!(cold.kkt_residual <= 1e-9, "kkt {}", cold.kkt_residual);
            let warm0: Vec<f64> = (0..64).map(|_| rng.gen_range(-2.0..4.0)).collect();
            let warm = solver.solve(&x, 1e-10, Some(&warm0)).unwrap();
            assert!(s.grid().norm(&vecops::sub(&cold.u, &warm.u)).unwrap() <= 1e-9);
            // State equation
            let ay = s.op().apply(&cold.y).unwrap();
            assert!(s.grid().norm(&vecops::sub(&ay, &cold.u)).unwrap() <= 1e-10 * (1.0 + s.grid().norm(&cold.u).unwrap()));
        }
    }

    #[test]
    fn optimal_against_feasible_perturbations() {
        let s = default_like();
        let solver = LowerSolver::new(&s);
        let x = [0.4, 0.6];
        let sol = solver.solve(&x, 1e-10, None).unwrap();
        let f0 = solver.objective(&x, &sol.u);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let d: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let scale = rng.gen_range(0.0..0.1) / s.grid().norm(&d).unwrap();
            let cand = s.bounds.project(&vecops::add(&sol.u, &vecops::scale(scale, &d)));
            assert!(solver.objective(&x, &cand) >= f0 - 1e-10);
        }
    }

    #[test]
    fn lipschitz_probe_zero_for_equal_parameters() {
        let s = default_like();
        let r = LowerSolver::new(&s).lipschitz_probe(&[0.3, 0.7], &[0.3, 0.7]).unwrap();
        assert_eq!(r.dx, 0.0);
        assert!(r.du < 1e-9 && r.dy < 1e-9 && r.dp < 1e-9 && r.dlambda < 1e-9);
    }

    #[test]
    fn multiplier_maps_continuous_along_shrinking_steps() {
        let s = default_like();
        let solver = LowerSolver::new(&s);
        let mut last = f64::INFINITY;
        for k in 1..6 {
            let d = 10f64.powi(-k);
            let r = solver.lipschitz_probe(&[0.3, 0.7], &[0.3 + d, 0.7 - d]).unwrap();
            let m = r.dp.max(r.dlambda);
            assert!(m < last);
            last = m;
        }
        assert!(last < 1e-4);
    }

    #[test]
    fn dy_over_du_bounded_by_solution_operator_norm() {
        let s = default_like();
        let solver = LowerSolver::new(&s);
        let s_norm = s.op().solution_operator_norm_sq(300).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let a: f64 = rng.gen_range(0.0..1.0);
            let b: f64 = rng.gen_range(0.0..1.0);
            let r = solver.lipschitz_probe(&[a, 1.0 - a], &[b, 1.0 - b]).unwrap();
            if r.du > 0.0 {
                assert!(r.dy / r.du <= s_norm * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn empirical_lipschitz_ratio_is_mesh_independent() {
        let pi = std::f64::consts::PI;
        let ratio = |n: usize| {
            let g = Grid::<f64>::new(n).unwrap();
            let s = spec(
                n,
                vec![g.sample(|w| (pi * w).sin()), g.sample(|w| (2.0 * pi * w).sin())],
                ControlBounds::constant(n, -1.5, 3.0),
                0.01,
            );
            let solver = LowerSolver::new(&s);
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            (0..20)
                .map(|_| {
                    let a: f64 = rng.gen_range(0.0..1.0);
                    let b = (a + rng.gen_range(-0.05..0.05)).clamp(0.0, 1.0);
                    let r = solver.lipschitz_probe(&[a, 1.0 - a], &[b, 1.0 - b]).unwrap();
                    if r.dx > 0.0 { r.du / r.dx } else { 0.0 }
                })
                .fold(0.0, f64::max)
        };
        let (r32, r64) = (ratio(32), ratio(64));
        assert!(r32.is_finite() && r64 > 0.0);
        assert!(r32 / r64 <= 2.0 && r64 / r32 <= 2.0, "{r32} vs {r64}");
    }

    #[test]
    fn pointwise_objective_solves() {
        let g = Grid::<f64>::new(32).unwrap();
        let s = ProblemSpec::new(
            g.clone(),
            0.01,
            LowerObjective::Pointwise { nodes: vec![8, 20], desired: g.sample(|w| (4.0 * w).sin()) },
            UpperObjective { c_y: 1.0, y_o: g.zeros(), c_u: 0.0, u_o: g.zeros(), gamma: 0.5 },
            AdmissibleSet::Simplex { n: 2 },
            ControlBounds::constant(32, -2.0, 2.0),
            Tolerances::default(),
        )
        .unwrap();
        let sol = LowerSolver::new(&s).solve(&[0.5, 0.5], 1e-10, None).unwrap();
        assert!(sol.kkt_residual <= 1e-8, "kkt {}", sol.kkt_residual);
    }

    #[test]
    fn single_precision_solve() {
        let g = Grid::<f32>::new(16).unwrap();
        let s = ProblemSpec::new(
            g.clone(),
            0.1f32,
            LowerObjective::TargetType { targets: vec![g.sample(|w| w * (1.0 - w))] },
            UpperObjective { c_y: 1.0, y_o: g.zeros(), c_u: 1.0, u_o: g.zeros(), gamma: 0.0 },
            AdmissibleSet::Simplex { n: 1 },
            ControlBounds::constant(16, -1.0, 1.0),
            Tolerances { solver_tol: 1e-5, active_tol: 1e-4 },
        )
        .unwrap();
        let sol = LowerSolver::new(&s).solve(&[1.0], 1e-5, None).unwrap();
        assert!(sol.kkt_residual < 1e-3);
    }
}
