//! Problem data for the bilevel inverse control problem: the lower-level
//! objective `j`, the upper-level objective `F`, the parameter set `X_ad` and
//! the control bounds defining `U_ad`.

use crate::discretization::{EllipticOperator, Grid, GridFunction};
use crate::error::{Error, Result};
use crate::scalar::{vecops, Real};

/// Vector-valued lower-level objective `j: Y → R^n_+`.
///
/// Components carry no ½ factor: `j_i(y) = ‖y − y_d^i‖²` for target-type
/// objectives and `j_i(y) = (y(ω^i) − y_d(ω^i))²` for pointwise
/// measurements, so that the gradient of the optimal value is exactly
/// `j(ψ^y(x))`.
#[derive(Debug, Clone, PartialEq)]
pub enum LowerObjective<T> {
    TargetType {
        targets: Vec<GridFunction<T>>,
    },
    Pointwise {
        /// Zero-based interior node indices.
        nodes: Vec<usize>,
        desired: GridFunction<T>,
    },
}

impl<T: Real> LowerObjective<T> {
    pub fn n_params(&self) -> usize {
        match self {
            Self::TargetType { targets } => targets.len(),
            Self::Pointwise { nodes, .. } => nodes.len(),
        }
    }

    pub(crate) fn validate(&self, grid: &Grid<T>) -> Result<()> {
        if self.n_params() == 0 {
            return Err(Error::Validation(
                "lower objective needs at least one component".into(),
            ));
        }
        match self {
            Self::TargetType { targets } => {
                for t in targets {
                    grid.check(t)?;
                    finite(t, "target state")?;
                }
            }
            Self::Pointwise { nodes, desired } => {
                grid.check(desired)?;
                finite(desired, "desired state")?;
                if let Some(&bad) = nodes.iter().find(|&&k| k >= grid.n_nodes()) {
                    return Err(Error::Validation(format!(
                        "pointwise node index {bad} out of range for {} nodes",
                        grid.n_nodes()
                    )));
                }
            }
        }
        Ok(())
    }

    /// `j(y) ∈ R^n`.
    pub fn eval(&self, grid: &Grid<T>, y: &[T]) -> Result<Vec<T>> {
        grid.check(y)?;
        Ok(self.eval_unchecked(grid, y))
    }

    /// `j'(y)v ∈ R^n`.
    pub fn grad_dir(&self, grid: &Grid<T>, y: &[T], v: &[T]) -> Result<Vec<T>> {
        grid.check(y)?;
        grid.check(v)?;
        let two = T::lit(2.0);
        Ok(match self {
            Self::TargetType { targets } => targets
                .iter()
                .map(|yd| two * grid.ip(&vecops::sub(y, yd), v))
                .collect(),
            Self::Pointwise { nodes, desired } => nodes
                .iter()
                .map(|&k| two * (y[k] - desired[k]) * v[k])
                .collect(),
        })
    }

    /// Riesz representative of `j'(y)*x`.
    pub fn grad_adjoint(&self, grid: &Grid<T>, y: &[T], x: &[T]) -> Result<GridFunction<T>> {
        grid.check(y)?;
        Error::check_len(self.n_params(), x.len())?;
        Ok(self.grad_adjoint_unchecked(grid, y, x))
    }

    /// Riesz representative of `j''(y)(μ)*x`.
    pub fn hess_bilinear(
        &self,
        grid: &Grid<T>,
        y: &[T],
        mu: &[T],
        x: &[T],
    ) -> Result<GridFunction<T>> {
        grid.check(y)?;
        grid.check(mu)?;
        Error::check_len(self.n_params(), x.len())?;
        Ok(self.hess_bilinear_unchecked(grid, mu, x))
    }

    pub(crate) fn eval_unchecked(&self, grid: &Grid<T>, y: &[T]) -> Vec<T> {
        match self {
            Self::TargetType { targets } => targets
                .iter()
                .map(|yd| {
                    let d = vecops::sub(y, yd);
                    grid.ip(&d, &d)
                })
                .collect(),
            Self::Pointwise { nodes, desired } => nodes
                .iter()
                .map(|&k| (y[k] - desired[k]).powi(2))
                .collect(),
        }
    }

    pub(crate) fn grad_adjoint_unchecked(&self, grid: &Grid<T>, y: &[T], x: &[T]) -> Vec<T> {
        let two = T::lit(2.0);
        match self {
            Self::TargetType { targets } => {
                // 2(Σx_i) y − 2 Σ x_i y_d^i
                let sx: T = x.iter().copied().sum();
                let mut g = vecops::scale(two * sx, y);
                for (&xi, yd) in x.iter().zip(targets) {
                    vecops::axpy(-two * xi, yd, &mut g);
                }
                g
            }
            Self::Pointwise { nodes, desired } => {
                let mut g = grid.zeros();
                for (&xi, &k) in x.iter().zip(nodes) {
                    g[k] += two * xi * (y[k] - desired[k]) / grid.h();
                }
                g
            }
        }
    }

    pub(crate) fn hess_bilinear_unchecked(&self, grid: &Grid<T>, mu: &[T], x: &[T]) -> Vec<T> {
        let two = T::lit(2.0);
        match self {
            Self::TargetType { .. } => {
                let sx: T = x.iter().copied().sum();
                vecops::scale(two * sx, mu)
            }
            Self::Pointwise { nodes, .. } => {
                let mut g = grid.zeros();
                for (&xi, &k) in x.iter().zip(nodes) {
                    g[k] += two * xi * mu[k] / grid.h();
                }
                g
            }
        }
    }
}

/// `F(x, y, u) = (c_y/2)‖y − y_o‖² + (c_u/2)‖u − u_o‖² + (γ/2)|x|²`.
#[derive(Debug, Clone, PartialEq)]
pub struct UpperObjective<T> {
    pub c_y: T,
    pub y_o: GridFunction<T>,
    pub c_u: T,
    pub u_o: GridFunction<T>,
    pub gamma: T,
}

impl<T: Real> UpperObjective<T> {
    pub(crate) fn validate(&self, grid: &Grid<T>) -> Result<()> {
        for (name, w) in [("c_y", self.c_y), ("c_u", self.c_u), ("gamma", self.gamma)] {
            if !(w >= T::zero() && w.is_finite()) {
                return Err(Error::Validation(format!("{name} must be finite and nonnegative")));
            }
        }
        grid.check(&self.y_o)?;
        grid.check(&self.u_o)?;
        finite(&self.y_o, "y_o")?;
        finite(&self.u_o, "u_o")
    }

    pub fn value(&self, grid: &Grid<T>, x: &[T], y: &[T], u: &[T]) -> T {
        let half = T::lit(0.5);
        let dy = vecops::sub(y, &self.y_o);
        let du = vecops::sub(u, &self.u_o);
        half * self.c_y * grid.ip(&dy, &dy)
            + half * self.c_u * grid.ip(&du, &du)
            + half * self.gamma * vecops::dot(x, x)
    }

    pub fn grad_x(&self, x: &[T]) -> Vec<T> {
        vecops::scale(self.gamma, x)
    }

    pub fn grad_y(&self, y: &[T]) -> GridFunction<T> {
        vecops::scale(self.c_y, &vecops::sub(y, &self.y_o))
    }

    pub fn grad_u(&self, u: &[T]) -> GridFunction<T> {
        vecops::scale(self.c_u, &vecops::sub(u, &self.u_o))
    }
}

/// Admissible parameter set, a polytope inside `R^n_+`.
#[derive(Debug, Clone, PartialEq)]
pub enum AdmissibleSet<T> {
    /// `{x ≥ 0, Σx_i = 1}`
    Simplex { n: usize },
    Box { lower: Vec<T>, upper: Vec<T> },
}

impl<T: Real> AdmissibleSet<T> {
    pub fn dim(&self) -> usize {
        match self {
            Self::Simplex { n } => *n,
            Self::Box { lower, .. } => lower.len(),
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        match self {
            Self::Simplex { n } if *n == 0 => {
                Err(Error::Validation("X_ad must be nonempty (n = 0)".into()))
            }
            Self::Simplex { .. } => Ok(()),
            Self::Box { lower, upper } => {
                Error::check_len(lower.len(), upper.len())?;
                if lower.is_empty() {
                    return Err(Error::Validation("X_ad must be nonempty (n = 0)".into()));
                }
                for (i, (&l, &u)) in lower.iter().zip(upper).enumerate() {
                    if !(l.is_finite() && u.is_finite()) {
                        return Err(Error::Validation(format!("X_ad bound {i} is not finite")));
                    }
                    if l < T::zero() {
                        return Err(Error::Validation(format!(
                            "X_ad must lie in the nonnegative orthant (lower[{i}] = {l})"
                        )));
                    }
                    if l > u {
                        return Err(Error::Validation(format!(
                            "X_ad is empty: lower[{i}] = {l} > upper[{i}] = {u}"
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    /// Vertex list; `2^n` corners for a box.
    pub fn vertices(&self) -> Vec<Vec<T>> {
        match self {
            Self::Simplex { n } => (0..*n)
                .map(|i| {
                    let mut e = vec![T::zero(); *n];
                    e[i] = T::one();
                    e
                })
                .collect(),
            Self::Box { lower, upper } => {
                let n = lower.len();
                (0..1usize << n)
                    .map(|mask| {
                        (0..n)
                            .map(|i| if mask >> i & 1 == 1 { upper[i] } else { lower[i] })
                            .collect()
                    })
                    .collect()
            }
        }
    }

    /// A point of the set used to start solvers: the barycenter of the
    /// simplex or the center of the box.
    pub fn center(&self) -> Vec<T> {
        match self {
            Self::Simplex { n } => vec![T::one() / T::from_count(*n); *n],
            Self::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(&l, &u)| T::lit(0.5) * (l + u))
                .collect(),
        }
    }

    pub fn contains(&self, x: &[T], tol: T) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        match self {
            Self::Simplex { .. } => {
                let s: T = x.iter().copied().sum();
                x.iter().all(|&v| v >= -tol) && (s - T::one()).abs() <= tol
            }
            Self::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(&v, (&l, &u))| v >= l - tol && v <= u + tol),
        }
    }

    /// Euclidean projection. The simplex case uses the sort-based
    /// threshold algorithm; boxes are clamped componentwise.
    pub fn project(&self, x: &[T]) -> Vec<T> {
        match self {
            Self::Simplex { .. } => project_simplex(x),
            Self::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(&v, (&l, &u))| v.max(l).min(u))
                .collect(),
        }
    }

    /// `max_v z·(v − x)` over the vertices, clipped at zero. Zero exactly when
    /// `z ∈ N_{X_ad}(x)`.
    pub fn normal_cone_residual(&self, x: &[T], z: &[T], feas_tol: T) -> Result<T> {
        Error::check_len(self.dim(), x.len())?;
        Error::check_len(self.dim(), z.len())?;
        if !self.contains(x, feas_tol) {
            return Err(Error::Infeasible(format!(
                "parameter {x:?} is not in X_ad"
            )));
        }
        let zx = vecops::dot(z, x);
        let best = match self {
            Self::Simplex { .. } => {
                z.iter().copied().fold(T::neg_infinity(), T::max) - zx
            }
            Self::Box { lower, upper } => z
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(&zi, (&l, &u))| (zi * l).max(zi * u))
                .sum::<T>()
                - zx,
        };
        Ok(best.max(T::zero()))
    }
}

/// Euclidean projection onto the standard simplex.
pub fn project_simplex<T: Real>(x: &[T]) -> Vec<T> {
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cumsum = T::zero();
    let mut theta = T::zero();
    for (k, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let t = (cumsum - T::one()) / T::from_count(k + 1);
        if v - t > T::zero() {
            theta = t;
        }
    }
    x.iter().map(|&v| (v - theta).max(T::zero())).collect()
}

/// Pointwise bounds `u_a ≤ u ≤ u_b`; either side may be infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlBounds<T> {
    pub ua: GridFunction<T>,
    pub ub: GridFunction<T>,
}

impl<T: Real> ControlBounds<T> {
    pub fn unbounded(n: usize) -> Self {
        Self {
            ua: vec![T::neg_infinity(); n],
            ub: vec![T::infinity(); n],
        }
    }

    pub fn constant(n: usize, lo: T, hi: T) -> Self {
        Self {
            ua: vec![lo; n],
            ub: vec![hi; n],
        }
    }

    pub(crate) fn validate(&self, grid: &Grid<T>) -> Result<()> {
        grid.check(&self.ua)?;
        grid.check(&self.ub)?;
        for (i, (&a, &b)) in self.ua.iter().zip(&self.ub).enumerate() {
            if a.is_nan() || b.is_nan() || a == T::infinity() || b == T::neg_infinity() {
                return Err(Error::Validation(format!("invalid control bound at node {i}")));
            }
            if !(a < b) {
                return Err(Error::Validation(format!(
                    "u_a must be strictly below u_b, violated at node {i} ({a} >= {b})"
                )));
            }
        }
        Ok(())
    }

    /// Nodewise clamp; an infinite side is never active.
    pub fn project(&self, u: &[T]) -> GridFunction<T> {
        u.iter()
            .zip(self.ua.iter().zip(&self.ub))
            .map(|(&v, (&a, &b))| v.max(a).min(b))
            .collect()
    }

    pub fn max_violation(&self, u: &[T]) -> T {
        u.iter()
            .zip(self.ua.iter().zip(&self.ub))
            .fold(T::zero(), |m, (&v, (&a, &b))| m.max(a - v).max(v - b))
    }

    /// Largest violation of the pointwise description of `gph N_{U_ad}`:
    /// `λ ≥ 0` where `u > u_a + tol_act` and `λ ≤ 0` where `u < u_b − tol_act`.
    pub fn normal_cone_residual(&self, u: &[T], lambda: &[T], tol_act: T) -> Result<T> {
        Error::check_len(self.ua.len(), u.len())?;
        Error::check_len(self.ua.len(), lambda.len())?;
        let viol = self.max_violation(u);
        if viol > tol_act {
            return Err(Error::Infeasible(format!(
                "control violates its bounds by {viol}"
            )));
        }
        let mut res = T::zero();
        for ((&ui, &li), (&a, &b)) in u.iter().zip(lambda).zip(self.ua.iter().zip(&self.ub)) {
            if ui > a + tol_act {
                res = res.max(-li);
            }
            if ui < b - tol_act {
                res = res.max(li);
            }
        }
        Ok(res)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances<T> {
    /// Fixed-point residual at which lower-level solves stop.
    pub solver_tol: T,
    /// Distance to a bound below which a node counts as active.
    pub active_tol: T,
}

impl<T: Real> Default for Tolerances<T> {
    fn default() -> Self {
        Self {
            solver_tol: T::lit(1e-10),
            active_tol: T::lit(1e-6),
        }
    }
}

/// A complete problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec<T> {
    op: EllipticOperator<T>,
    pub sigma: T,
    pub lower: LowerObjective<T>,
    pub upper: UpperObjective<T>,
    pub x_ad: AdmissibleSet<T>,
    pub bounds: ControlBounds<T>,
    pub tol: Tolerances<T>,
}

impl<T: Real> ProblemSpec<T> {
    pub fn new(
        grid: Grid<T>,
        sigma: T,
        lower: LowerObjective<T>,
        upper: UpperObjective<T>,
        x_ad: AdmissibleSet<T>,
        bounds: ControlBounds<T>,
        tol: Tolerances<T>,
    ) -> Result<Self> {
        if !(sigma > T::zero() && sigma.is_finite()) {
            return Err(Error::Validation("sigma must be positive".into()));
        }
        lower.validate(&grid)?;
        upper.validate(&grid)?;
        x_ad.validate()?;
        bounds.validate(&grid)?;
        if x_ad.dim() != lower.n_params() {
            return Err(Error::Validation(format!(
                "X_ad has dimension {} but the lower objective has {} components",
                x_ad.dim(),
                lower.n_params()
            )));
        }
        if !(tol.solver_tol > T::zero() && tol.active_tol >= T::zero()) {
            return Err(Error::Validation("tolerances must be positive".into()));
        }
        Ok(Self {
            op: EllipticOperator::new(grid),
            sigma,
            lower,
            upper,
            x_ad,
            bounds,
            tol,
        })
    }

    pub fn grid(&self) -> &Grid<T> {
        self.op.grid()
    }

    pub fn op(&self) -> &EllipticOperator<T> {
        &self.op
    }

    pub fn n_params(&self) -> usize {
        self.lower.n_params()
    }

    pub fn n_nodes(&self) -> usize {
        self.grid().n_nodes()
    }

    /// Control-to-state map `S = A⁻¹B` (`B` is the identity on grid vectors).
    pub fn state(&self, u: &[T]) -> GridFunction<T> {
        self.op.solve_unchecked(u)
    }

    /// `S*` under the weighted inner product.
    pub fn state_adjoint(&self, v: &[T]) -> GridFunction<T> {
        self.op.solve_unchecked(v)
    }

    /// Lower-level objective `f(x, y, u) = x·j(y) + (σ/2)‖u‖²`.
    pub fn lower_value(&self, x: &[T], y: &[T], u: &[T]) -> T {
        let g = self.grid();
        vecops::dot(x, &self.lower.eval_unchecked(g, y)) + T::lit(0.5) * self.sigma * g.ip(u, u)
    }

    pub fn upper_value(&self, x: &[T], y: &[T], u: &[T]) -> T {
        self.upper.value(self.grid(), x, y, u)
    }

    /// Replaces the control bounds, keeping every other field.
    pub fn with_bounds(mut self, bounds: ControlBounds<T>) -> Result<Self> {
        bounds.validate(self.grid())?;
        self.bounds = bounds;
        Ok(self)
    }

    pub fn with_upper(mut self, upper: UpperObjective<T>) -> Result<Self> {
        upper.validate(self.grid())?;
        self.upper = upper;
        Ok(self)
    }
}

fn finite<T: Real>(v: &[T], what: &str) -> Result<()> {
    if v.iter().all(|e| e.is_finite()) {
        Ok(())
    } else {
        Err(Error::Validation(format!("{what} has non-finite entries")))
    }
}
