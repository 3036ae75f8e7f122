//! Finite differences on the unit interval with homogeneous Dirichlet data.
//!
//! Grid functions are plain vectors holding one value per interior node
//! `ω_i = i·h`, `i = 1..N`, `h = 1/(N+1)`. All pairings use the weighted
//! inner product `⟨u, v⟩ = h·Σ u_i v_i`, which makes the control-to-rhs
//! embedding the identity and lets dual objects (adjoints, point
//! evaluations) share the same coefficient representation: a Dirac at node
//! `i` is stored as `e_i / h`.

use crate::error::{Error, Result};
use crate::scalar::{vecops, Real};

/// One value per interior node.
pub type GridFunction<T> = Vec<T>;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    n_nodes: usize,
    h: T,
    nodes: Vec<T>,
}

impl<T: Real> Grid<T> {
    /// Uniform grid with `n_nodes` interior nodes on (0, 1).
    pub fn new(n_nodes: usize) -> Result<Self> {
        if n_nodes < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 interior nodes, got {n_nodes}"
            )));
        }
        let h = T::one() / T::from_count(n_nodes + 1);
        let nodes = (1..=n_nodes).map(|i| T::from_count(i) * h).collect();
        Ok(Self { n_nodes, h, nodes })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn h(&self) -> T {
        self.h
    }

    pub fn nodes(&self) -> &[T] {
        &self.nodes
    }

    pub fn zeros(&self) -> GridFunction<T> {
        vec![T::zero(); self.n_nodes]
    }

    /// Evaluates `f` at the interior nodes.
    pub fn sample(&self, f: impl Fn(T) -> T) -> GridFunction<T> {
        self.nodes.iter().map(|&w| f(w)).collect()
    }

    pub fn check(&self, u: &[T]) -> Result<()> {
        Error::check_len(self.n_nodes, u.len())
    }

    /// Weighted discrete L² inner product.
    pub fn inner(&self, u: &[T], v: &[T]) -> Result<T> {
        self.check(u)?;
        self.check(v)?;
        Ok(self.h * vecops::dot(u, v))
    }

    pub fn norm(&self, u: &[T]) -> Result<T> {
        Ok(self.inner(u, u)?.sqrt())
    }

    // Unchecked variants for the solver hot loops.
    #[inline]
    pub(crate) fn ip(&self, u: &[T], v: &[T]) -> T {
        self.h * vecops::dot(u, v)
    }

    #[inline]
    pub(crate) fn nrm(&self, u: &[T]) -> T {
        self.ip(u, u).sqrt()
    }

    /// Max-norm distance on [0, 1] between the piecewise-linear interpolant
    /// of `y` (zero at both ends) and `exact`, sampled `per_cell` times per
    /// mesh cell.
    pub fn interpolant_max_error(&self, y: &[T], exact: impl Fn(T) -> T, per_cell: usize) -> Result<T> {
        self.check(y)?;
        let per_cell = per_cell.max(1);
        let value = |i: usize| -> T {
            // Node i of the extended grid 0..=N+1.
            if i == 0 || i == self.n_nodes + 1 {
                T::zero()
            } else {
                y[i - 1]
            }
        };
        let mut err = T::zero();
        for cell in 0..=self.n_nodes {
            let (left, right) = (value(cell), value(cell + 1));
            for s in 0..=per_cell {
                let t = T::from_count(s) / T::from_count(per_cell);
                let w = (T::from_count(cell) + t) * self.h;
                let interp = left + (right - left) * t;
                err = err.max((interp - exact(w)).abs());
            }
        }
        Ok(err)
    }

    /// Index of the interior node nearest to the coordinate `w ∈ [0, 1]`.
    pub fn nearest_node(&self, w: T) -> Result<usize> {
        if !(w >= T::zero() && w <= T::one()) {
            return Err(Error::Validation(format!(
                "measurement point {w} lies outside [0, 1]"
            )));
        }
        let i = (w / self.h).round().to_usize().unwrap_or(0);
        Ok(i.clamp(1, self.n_nodes) - 1)
    }
}

/// The Dirichlet Laplacian `A = −Δ` as the tridiagonal matrix
/// `(−1, 2, −1)/h²`, with a Thomas factorization built at construction.
///
/// `A` is symmetric for the weighted inner product, so the adjoint
/// operations coincide with the plain ones.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipticOperator<T> {
    grid: Grid<T>,
    diag: T,
    off: T,
    // Thomas sweep coefficients: c'_i and 1/den_i.
    c_prime: Vec<T>,
    inv_den: Vec<T>,
}

impl<T: Real> EllipticOperator<T> {
    pub fn new(grid: Grid<T>) -> Self {
        let h2 = grid.h() * grid.h();
        let diag = T::lit(2.0) / h2;
        let off = -T::one() / h2;
        let n = grid.n_nodes();
        let mut c_prime = Vec::with_capacity(n);
        let mut inv_den = Vec::with_capacity(n);
        let mut prev_c = T::zero();
        for i in 0..n {
            let den = if i == 0 { diag } else { diag - off * prev_c };
            let inv = T::one() / den;
            inv_den.push(inv);
            prev_c = off * inv;
            c_prime.push(prev_c);
        }
        Self {
            grid,
            diag,
            off,
            c_prime,
            inv_den,
        }
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    /// `(Ay)_i = (−y_{i−1} + 2y_i − y_{i+1})/h²` with zero boundary values.
    pub fn apply(&self, y: &[T]) -> Result<GridFunction<T>> {
        self.grid.check(y)?;
        Ok(self.apply_unchecked(y))
    }

    pub fn apply_adjoint(&self, y: &[T]) -> Result<GridFunction<T>> {
        self.apply(y)
    }

    pub fn solve(&self, rhs: &[T]) -> Result<GridFunction<T>> {
        self.grid.check(rhs)?;
        Ok(self.solve_unchecked(rhs))
    }

    pub fn solve_adjoint(&self, rhs: &[T]) -> Result<GridFunction<T>> {
        self.solve(rhs)
    }

    pub(crate) fn apply_unchecked(&self, y: &[T]) -> GridFunction<T> {
        let n = y.len();
        (0..n)
            .map(|i| {
                let left = if i > 0 { y[i - 1] } else { T::zero() };
                let right = if i + 1 < n { y[i + 1] } else { T::zero() };
                self.diag * y[i] + self.off * (left + right)
            })
            .collect()
    }

    pub(crate) fn solve_unchecked(&self, rhs: &[T]) -> GridFunction<T> {
        let n = rhs.len();
        let mut x = vec![T::zero(); n];
        let mut prev = T::zero();
        for i in 0..n {
            let d = if i == 0 { rhs[0] } else { rhs[i] - self.off * prev };
            prev = d * self.inv_den[i];
            x[i] = prev;
        }
        for i in (0..n.saturating_sub(1)).rev() {
            x[i] = x[i] - self.c_prime[i] * x[i + 1];
        }
        x
    }

    /// Largest eigenvalue of `S*S` with `S = A⁻¹`, by power iteration.
    pub fn solution_operator_norm_sq(&self, iterations: usize) -> T {
        let n = self.grid.n_nodes();
        // Start vector with a nonzero component along every eigenvector.
        let mut v: Vec<T> = (0..n)
            .map(|i| T::one() + T::lit(0.1) * T::from_count(i % 7))
            .collect();
        let mut est = T::zero();
        for _ in 0..iterations {
            let nv = self.grid.nrm(&v);
            if nv == T::zero() {
                break;
            }
            v.iter_mut().for_each(|e| *e /= nv);
            let w = self.solve_unchecked(&self.solve_unchecked(&v));
            est = self.grid.ip(&v, &w);
            v = w;
        }
        est
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_spacing_and_nodes() {
        let g = Grid::<f64>::new(3).unwrap();
        assert_eq!(g.h(), 0.25);
        assert_eq!(g.nodes(), &[0.25, 0.5, 0.75]);
        let g = Grid::<f64>::new(63).unwrap();
        assert_eq!(g.h(), 1.0 / 64.0);
        assert!((g.h() * 64.0 - 1.0).abs() < 1e-15);
        assert!(g.nodes().windows(2).all(|w| w[0] < w[1]));
        assert!(g.nodes().iter().all(|&w| w > 0.0 && w < 1.0));
    }

    #[test]
    fn tiny_grids_rejected() {
        assert!(matches!(Grid::<f64>::new(1), Err(Error::InvalidGrid(_))));
        assert!(matches!(Grid::<f64>::new(0), Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn stencil_values() {
        let op = EllipticOperator::new(Grid::<f64>::new(3).unwrap());
        assert_eq!(op.apply(&[0.0; 3]).unwrap(), vec![0.0; 3]);
        assert_eq!(op.apply(&[0.0, 1.0, 0.0]).unwrap(), vec![-16.0, 32.0, -16.0]);
        assert!(matches!(
            op.apply(&[1.0, 2.0]),
            Err(Error::Dimension { expected: 3, found: 2 })
        ));
    }

    #[test]
    fn inner_product_values() {
        let g = Grid::<f64>::new(3).unwrap();
        assert_eq!(g.inner(&[1.0; 3], &[1.0; 3]).unwrap(), 0.75);
        assert_eq!(g.inner(&[1.0, -2.0, 3.0], &[0.0; 3]).unwrap(), 0.0);
        assert!(g.inner(&[1.0; 3], &[1.0; 4]).is_err());
    }

    #[test]
    fn cauchy_schwarz_on_random_pairs() {
        let g = Grid::<f64>::new(17).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let u: Vec<f64> = (0..17).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let v: Vec<f64> = (0..17).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let lhs = g.inner(&u, &v).unwrap().abs();
            let rhs = g.norm(&u).unwrap() * g.norm(&v).unwrap();
            assert!(lhs <= rhs * (1.0 + 1e-14));
        }
    }

    #[test]
    fn solve_round_trip_and_adjoint() {
        let op = EllipticOperator::new(Grid::<f64>::new(40).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = op.solve(&b).unwrap();
        let ay = op.apply(&y).unwrap();
        let g = op.grid();
        let rel = g.norm(&vecops::sub(&ay, &b)).unwrap() / g.norm(&b).unwrap();
        assert!(rel < 1e-12, "relative residual {rel}");
        assert_eq!(op.solve_adjoint(&b).unwrap(), y);
        assert_eq!(op.solve(&[0.0; 40]).unwrap(), vec![0.0; 40]);
    }

    #[test]
    fn operator_is_symmetric_and_positive() {
        let op = EllipticOperator::new(Grid::<f64>::new(25).unwrap());
        let g = op.grid();
        let a_norm = 4.0 / (g.h() * g.h());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let y: Vec<f64> = (0..25).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..25).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let lhs = g.inner(&op.apply(&y).unwrap(), &v).unwrap();
            let rhs = g.inner(&y, &op.apply(&v).unwrap()).unwrap();
            let scale = g.norm(&y).unwrap() * g.norm(&v).unwrap() * a_norm;
            assert!((lhs - rhs).abs() <= 1e-12 * scale);
            assert!(g.inner(&op.apply(&y).unwrap(), &y).unwrap() > 0.0);
        }
    }

    fn nodal_error(n: usize, rhs: impl Fn(f64) -> f64, exact: impl Fn(f64) -> f64) -> f64 {
        let op = EllipticOperator::new(Grid::<f64>::new(n).unwrap());
        let y = op.solve(&op.grid().sample(rhs)).unwrap();
        op.grid()
            .nodes()
            .iter()
            .zip(&y)
            .map(|(&w, &yi)| (yi - exact(w)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn constant_rhs_is_exact_at_nodes() {
        // The three-point stencil is exact on quadratics.
        for n in [8, 31, 64] {
            assert!(nodal_error(n, |_| 1.0, |w| w * (1.0 - w) / 2.0) < 1e-12);
        }
    }

    #[test]
    fn constant_rhs_interpolant_error_is_second_order() {
        let err = |n: usize| {
            let op = EllipticOperator::new(Grid::<f64>::new(n).unwrap());
            let y = op.solve(&vec![1.0; n]).unwrap();
            op.grid()
                .interpolant_max_error(&y, |w| w * (1.0 - w) / 2.0, 16)
                .unwrap()
        };
        for n in [16, 32, 64] {
            let h = 1.0 / (n as f64 + 1.0);
            // Linear interpolation of a parabola with curvature 1: h²/8.
            assert!((err(n) - h * h / 8.0).abs() < 1e-12);
        }
        let ratio = err(32) / err(64);
        assert!(ratio > 4.0 / 1.3 && ratio < 4.0 * 1.3, "ratio {ratio}");
    }

    #[test]
    fn smooth_rhs_nodal_error_is_second_order() {
        use std::f64::consts::PI;
        let e = |n| nodal_error(n, |w| PI * PI * (PI * w).sin(), |w| (PI * w).sin());
        let ratio = e(31) / e(63);
        assert!((ratio - 4.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn power_iteration_matches_smallest_eigenvalue() {
        let op = EllipticOperator::new(Grid::<f64>::new(30).unwrap());
        let h = op.grid().h();
        let lam_min = 4.0 / (h * h) * (std::f64::consts::PI * h / 2.0).sin().powi(2);
        let est = op.solution_operator_norm_sq(500);
        assert_relative_eq!(est, 1.0 / (lam_min * lam_min), max_relative = 1e-10);
    }

    #[test]
    fn single_precision_instantiation() {
        let op = EllipticOperator::new(Grid::<f32>::new(16).unwrap());
        let y = op.solve(&[1.0f32; 16]).unwrap();
        for (&w, &yi) in op.grid().nodes().iter().zip(&y) {
            assert!((yi - w * (1.0 - w) / 2.0).abs() < 1e-5);
        }
    }

    #[test]
    fn nearest_node_snapping() {
        let g = Grid::<f64>::new(3).unwrap();
        assert_eq!(g.nearest_node(0.26).unwrap(), 0);
        assert_eq!(g.nearest_node(0.5).unwrap(), 1);
        assert_eq!(g.nearest_node(0.0).unwrap(), 0);
        assert_eq!(g.nearest_node(1.0).unwrap(), 2);
        assert!(g.nearest_node(1.5).is_err());
    }
}
