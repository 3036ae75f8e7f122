//! The relaxed optimal value program OVR(ε):
//!
//! ```text
//!     min F(x, Su, u)   s.t.   x ∈ X_ad,  u ∈ U_ad,  f(x, Su, u) − φ(x) ≤ ε
//! ```
//!
//! solved by an augmented Lagrangian on the single value constraint. The
//! inner problems are bound-constrained in `(x, u)` and handled by spectral
//! projected gradient (Barzilai-Borwein steps, nonmonotone Armijo search) in
//! the product metric `|dx|² + h·Σdu²`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, FailedIterate, Result};
use crate::lower::{LowerSolution, LowerSolver};
use crate::model::ProblemSpec;
use crate::scalar::{cast_vec, vecops, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelaxedOptions<T> {
    pub beta0: T,
    pub beta_growth: T,
    /// Absolute feasibility tolerance on `max(0, gap − ε)`.
    pub feas_tol: T,
    /// The feasibility tolerance actually used is
    /// `min(feas_tol, feas_rel·ε)`.
    pub feas_rel: T,
    pub stat_tol: T,
    pub comp_tol: T,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Required reduction factor of the violation between outer steps
    /// before the penalty is increased.
    pub stall_factor: T,
}

impl<T: Real> Default for RelaxedOptions<T> {
    fn default() -> Self {
        Self {
            beta0: T::one(),
            beta_growth: T::lit(10.0),
            feas_tol: T::lit(1e-8),
            feas_rel: T::lit(1e-2),
            stat_tol: T::lit(1e-7),
            comp_tol: T::lit(1e-8),
            max_outer: 50,
            max_inner: 20_000,
            stall_factor: T::lit(0.25),
        }
    }
}

impl<T: Real> RelaxedOptions<T> {
    pub fn feasibility_tolerance(&self, eps: T) -> T {
        self.feas_tol.min(self.feas_rel * eps)
    }
}

/// Stationary point of OVR(ε) with the multipliers of its KKT system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxedSolution<T> {
    pub eps: T,
    pub x: Vec<T>,
    pub y: Vec<T>,
    pub u: Vec<T>,
    pub alpha: T,
    pub z: Vec<T>,
    pub p: Vec<T>,
    pub lambda: Vec<T>,
    pub upper_value: T,
    pub gap: T,
    /// Penalty parameter at exit, reused by warm starts.
    pub beta: T,
    pub inner_residual: T,
    pub inner_iterations: usize,
    pub outer_iterations: usize,
}

/// Residuals of the relaxed KKT system, recomputed from the stored point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelaxedKkt<T> {
    /// `|F'_x + z + α(j(y) − φ'(x))|`
    pub r_x: T,
    /// `‖F'_y + α j'(y)*x + A*p‖`
    pub r_y: T,
    /// `‖F'_u + ασu − B*p + λ‖`
    pub r_u: T,
    /// Violation of `z ∈ N_{X_ad}(x)`.
    pub r_z: T,
    /// `|α(ε − gap)|`, plus `max(0, −α)`.
    pub r_comp: T,
    /// Violation of `λ ∈ N_{U_ad}(u)`.
    pub r_lambda: T,
    /// `‖Ay − Bu‖`
    pub state: T,
    /// `max(0, gap − ε)`
    pub feasibility: T,
}

impl<T: Real> RelaxedKkt<T> {
    pub fn stationarity_max(&self) -> T {
        self.r_x.max(self.r_y).max(self.r_u).max(self.r_z).max(self.r_lambda)
    }
}

#[derive(Debug, Clone, Copy)]
struct Penalty<T> {
    eps: T,
    alpha: T,
    beta: T,
}

/// Everything known about one point `(x, u)` of the reduced problem.
#[derive(Debug, Clone)]
struct Eval<T> {
    x: Vec<T>,
    u: Vec<T>,
    y: Vec<T>,
    jy: Vec<T>,
    grad_phi: Vec<T>,
    upper: T,
    gap: T,
    merit: T,
    grad_x: Vec<T>,
    grad_u: Vec<T>,
}

pub struct RelaxedSolver<'a, T> {
    spec: &'a ProblemSpec<T>,
    lower: LowerSolver<'a, T>,
    pub options: RelaxedOptions<T>,
}

impl<'a, T: Real> RelaxedSolver<'a, T> {
    pub fn new(spec: &'a ProblemSpec<T>) -> Self {
        Self::with_options(spec, RelaxedOptions::default())
    }

    pub fn with_options(spec: &'a ProblemSpec<T>, options: RelaxedOptions<T>) -> Self {
        Self {
            spec,
            lower: LowerSolver::new(spec),
            options,
        }
    }

    pub fn spec(&self) -> &'a ProblemSpec<T> {
        self.spec
    }

    pub fn lower_solver(&self) -> &LowerSolver<'a, T> {
        &self.lower
    }

    fn psi(&self, x: &[T]) -> Result<LowerSolution<T>> {
        self.lower.solve(x, self.spec.tol.solver_tol, None)
    }

    /// `gap(x, u) = f(x, Su, u) − φ(x)` together with the lower solution.
    pub fn gap(&self, x: &[T], u: &[T]) -> Result<(T, LowerSolution<T>)> {
        let ll = self.psi(x)?;
        let y = self.spec.state(u);
        let f = self.spec.lower_value(&ll.x, &y, u);
        let phi = self.spec.lower_value(&ll.x, &ll.y, &ll.u);
        Ok((f - phi, ll))
    }

    fn evaluate(&self, x: Vec<T>, u: Vec<T>, pen: &Penalty<T>) -> Result<Eval<T>> {
        let spec = self.spec;
        let g = spec.grid();
        let ll = self.psi(&x)?;
        let y = spec.state(&u);
        let jy = spec.lower.eval_unchecked(g, &y);
        let grad_phi = spec.lower.eval_unchecked(g, &ll.y);
        let f = vecops::dot(&x, &jy) + T::lit(0.5) * spec.sigma * g.ip(&u, &u);
        let phi = spec.lower_value(&ll.x, &ll.y, &ll.u);
        let gap = f - phi;
        let upper = spec.upper_value(&x, &y, &u);

        let c = gap - pen.eps;
        let shifted = (pen.alpha / pen.beta + c).max(T::zero());
        let merit = upper + T::lit(0.5) * pen.beta * shifted * shifted
            - pen.alpha * pen.alpha / (T::lit(2.0) * pen.beta);
        let m = pen.beta * shifted;

        // ∇_x L = γx + m(j(y) − φ'(x))
        let mut grad_x = spec.upper.grad_x(&x);
        for ((gx, &a), &b) in grad_x.iter_mut().zip(&jy).zip(&grad_phi) {
            *gx += m * (a - b);
        }
        // ∇_u L = S*(F'_y + m j'(y)*x) + F'_u + mσu
        let mut rhs = spec.upper.grad_y(&y);
        vecops::axpy(m, &spec.lower.grad_adjoint_unchecked(g, &y, &x), &mut rhs);
        let mut grad_u = spec.state_adjoint(&rhs);
        vecops::axpy(T::one(), &spec.upper.grad_u(&u), &mut grad_u);
        vecops::axpy(m * spec.sigma, &u, &mut grad_u);

        Ok(Eval {
            x,
            u,
            y,
            jy,
            grad_phi,
            upper,
            gap,
            merit,
            grad_x,
            grad_u,
        })
    }

    fn project(&self, x: &[T], u: &[T]) -> (Vec<T>, Vec<T>) {
        (self.spec.x_ad.project(x), self.spec.bounds.project(u))
    }

    /// `P(v − s·g) − v` for the product set.
    fn projected_step(&self, e: &Eval<T>, s: T) -> (Vec<T>, Vec<T>) {
        let xt: Vec<T> = e.x.iter().zip(&e.grad_x).map(|(&a, &g)| a - s * g).collect();
        let ut: Vec<T> = e.u.iter().zip(&e.grad_u).map(|(&a, &g)| a - s * g).collect();
        let (xp, up) = self.project(&xt, &ut);
        (vecops::sub(&xp, &e.x), vecops::sub(&up, &e.u))
    }

    /// Componentwise max of the unit-step fixed-point map.
    fn fixed_point_residual(&self, e: &Eval<T>) -> T {
        let (dx, du) = self.projected_step(e, T::one());
        vecops::norm_inf(&dx).max(vecops::norm_inf(&du))
    }

    fn metric_dot(&self, ax: &[T], au: &[T], bx: &[T], bu: &[T]) -> T {
        vecops::dot(ax, bx) + self.spec.grid().ip(au, bu)
    }

    /// Spectral projected gradient on the augmented Lagrangian.
    fn inner_solve(&self, start: Eval<T>, pen: &Penalty<T>, tol: T) -> Result<(Eval<T>, T, usize)> {
        const MEMORY: usize = 10;
        const ARMIJO: f64 = 1e-4;
        let step_min = T::lit(1e-12);
        let step_max = T::lit(1e12);

        let mut cur = start;
        let mut res = self.fixed_point_residual(&cur);
        let mut history = vec![cur.merit];
        let mut step = (T::one() / res.max(T::lit(1e-12))).min(step_max).max(step_min);
        let mut it = 0;
        while res > tol && it < self.options.max_inner {
            it += 1;
            let (dx, du) = self.projected_step(&cur, step);
            let slope = self.metric_dot(&cur.grad_x, &cur.grad_u, &dx, &du);
            let reference = history.iter().copied().fold(T::neg_infinity(), T::max);
            let mut t = T::one();
            let next = loop {
                let xn: Vec<T> = cur.x.iter().zip(&dx).map(|(&a, &d)| a + t * d).collect();
                let un: Vec<T> = cur.u.iter().zip(&du).map(|(&a, &d)| a + t * d).collect();
                let cand = self.evaluate(xn, un, pen)?;
                if cand.merit <= reference + T::lit(ARMIJO) * t * slope || t < T::lit(1e-20) {
                    break cand;
                }
                // Safeguarded quadratic interpolation.
                let denom = T::lit(2.0) * (cand.merit - cur.merit - t * slope);
                let tq = if denom > T::zero() { -slope * t * t / denom } else { T::lit(0.5) * t };
                t = tq.max(T::lit(0.1) * t).min(T::lit(0.5) * t);
            };
            let sx = vecops::sub(&next.x, &cur.x);
            let su = vecops::sub(&next.u, &cur.u);
            let yx = vecops::sub(&next.grad_x, &cur.grad_x);
            let yu = vecops::sub(&next.grad_u, &cur.grad_u);
            let ss = self.metric_dot(&sx, &su, &sx, &su);
            let sy = self.metric_dot(&sx, &su, &yx, &yu);
            step = if sy > T::zero() { (ss / sy).max(step_min).min(step_max) } else { step_max };
            if ss == T::zero() {
                // Line search collapsed; nothing more can be gained here.
                cur = next;
                res = self.fixed_point_residual(&cur);
                break;
            }
            cur = next;
            res = self.fixed_point_residual(&cur);
            history.push(cur.merit);
            if history.len() > MEMORY {
                history.remove(0);
            }
        }
        Ok((cur, res, it))
    }

    /// Solves OVR(ε), optionally warm-started from a neighbouring solution.
    pub fn solve(&self, eps: T, warm: Option<&RelaxedSolution<T>>) -> Result<RelaxedSolution<T>> {
        if !(eps > T::zero()) || !eps.is_finite() {
            return Err(Error::Domain(format!("relaxation parameter must be positive, got {eps}")));
        }
        let spec = self.spec;
        let opts = &self.options;
        let feas_tol = opts.feasibility_tolerance(eps);
        let inner_tol = T::lit(0.25) * opts.stat_tol;

        let (x0, u0, mut alpha, mut beta) = match warm {
            Some(w) => {
                Error::check_len(spec.n_params(), w.x.len())?;
                spec.grid().check(&w.u)?;
                (w.x.clone(), w.u.clone(), w.alpha.max(T::zero()), w.beta.max(opts.beta0))
            }
            None => {
                let x = spec.x_ad.center();
                let u = self.psi(&x)?.u;
                (x, u, T::zero(), opts.beta0)
            }
        };
        let (x0, u0) = self.project(&x0, &u0);
        let mut pen = Penalty { eps, alpha, beta };
        let mut cur = self.evaluate(x0, u0, &pen)?;
        let mut prev_viol = T::infinity();
        let mut total_inner = 0;
        let mut last_res = T::infinity();

        for outer in 1..=opts.max_outer {
            pen = Penalty { eps, alpha, beta };
            // Re-evaluate with the current multiplier estimate.
            cur = self.evaluate(cur.x, cur.u, &pen)?;
            let (next, res, it) = self.inner_solve(cur, &pen, inner_tol)?;
            total_inner += it;
            cur = next;
            last_res = res;
            let c = cur.gap - eps;
            let viol = c.max(T::zero());
            let alpha_new = (alpha + beta * c).max(T::zero());
            let comp = alpha_new * c.abs();
            if res <= inner_tol && viol <= feas_tol && comp <= opts.comp_tol {
                return self.finish(cur, eps, alpha_new, beta, res, total_inner, outer);
            }
            alpha = alpha_new;
            if viol > opts.stall_factor * prev_viol || (viol <= feas_tol && comp > opts.comp_tol) {
                beta *= opts.beta_growth;
            }
            prev_viol = viol;
        }
        Err(Error::Convergence {
            solver: "relaxed augmented Lagrangian",
            iterations: opts.max_outer,
            residual: last_res.max((cur.gap - eps).max(T::zero())).to_f64_lossy(),
            best: Some(Box::new(FailedIterate {
                x: cast_vec(&cur.x),
                u: cast_vec(&cur.u),
                gap: cur.gap.to_f64_lossy(),
                alpha: alpha.to_f64_lossy(),
            })),
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        e: Eval<T>,
        eps: T,
        alpha: T,
        beta: T,
        res: T,
        inner: usize,
        outer: usize,
    ) -> Result<RelaxedSolution<T>> {
        let spec = self.spec;
        let g = spec.grid();
        // A*p = −(F'_y + α j'(y)*x)
        let mut rhs = spec.upper.grad_y(&e.y);
        vecops::axpy(alpha, &spec.lower.grad_adjoint_unchecked(g, &e.y, &e.x), &mut rhs);
        let p: Vec<T> = spec.op().solve_unchecked(&rhs).iter().map(|&v| -v).collect();
        // λ = B*p − F'_u − ασu
        let fu = spec.upper.grad_u(&e.u);
        let lambda: Vec<T> = p
            .iter()
            .zip(&fu)
            .zip(&e.u)
            .map(|((&pi, &fi), &ui)| pi - fi - alpha * spec.sigma * ui)
            .collect();
        // z = −(F'_x + α(j(y) − φ'(x)))
        let z: Vec<T> = spec
            .upper
            .grad_x(&e.x)
            .iter()
            .zip(e.jy.iter().zip(&e.grad_phi))
            .map(|(&fx, (&a, &b))| -(fx + alpha * (a - b)))
            .collect();
        Ok(RelaxedSolution {
            eps,
            x: e.x,
            y: e.y,
            u: e.u,
            alpha,
            z,
            p,
            lambda,
            upper_value: e.upper,
            gap: e.gap,
            beta,
            inner_residual: res,
            inner_iterations: inner,
            outer_iterations: outer,
        })
    }

    /// Recomputes every relaxed KKT residual from `sol` alone.
    pub fn kkt_residuals(&self, sol: &RelaxedSolution<T>) -> Result<RelaxedKkt<T>> {
        let spec = self.spec;
        let g = spec.grid();
        Error::check_len(spec.n_params(), sol.x.len())?;
        Error::check_len(spec.n_params(), sol.z.len())?;
        for v in [&sol.y, &sol.u, &sol.p, &sol.lambda] {
            g.check(v)?;
        }
        let (gap, ll) = self.gap(&sol.x, &sol.u)?;
        let grad_phi = spec.lower.eval_unchecked(g, &ll.y);
        let jy = spec.lower.eval_unchecked(g, &sol.y);
        let a = sol.alpha;

        let rx: Vec<T> = spec
            .upper
            .grad_x(&sol.x)
            .iter()
            .zip(&sol.z)
            .zip(jy.iter().zip(&grad_phi))
            .map(|((&fx, &zi), (&j, &d))| fx + zi + a * (j - d))
            .collect();

        let mut ry = spec.upper.grad_y(&sol.y);
        vecops::axpy(a, &spec.lower.grad_adjoint_unchecked(g, &sol.y, &sol.x), &mut ry);
        vecops::axpy(T::one(), &spec.op().apply_unchecked(&sol.p), &mut ry);

        let mut ru = spec.upper.grad_u(&sol.u);
        vecops::axpy(a * spec.sigma, &sol.u, &mut ru);
        vecops::axpy(-T::one(), &sol.p, &mut ru);
        vecops::axpy(T::one(), &sol.lambda, &mut ru);

        let r_z = spec
            .x_ad
            .normal_cone_residual(&sol.x, &sol.z, T::lit(1e-10))
            .unwrap_or(T::infinity());
        let r_lambda = spec
            .bounds
            .normal_cone_residual(&sol.u, &sol.lambda, spec.tol.active_tol)
            .unwrap_or(T::infinity());
        let state = g.nrm(&vecops::sub(&spec.op().apply_unchecked(&sol.y), &sol.u));
        Ok(RelaxedKkt {
            r_x: vecops::norm2(&rx),
            r_y: g.nrm(&ry),
            r_u: g.nrm(&ru),
            r_z,
            r_comp: (a * (sol.eps - gap)).abs() + (-a).max(T::zero()),
            r_lambda,
            state,
            feasibility: (gap - sol.eps).max(T::zero()),
        })
    }
}
