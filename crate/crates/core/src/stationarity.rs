//! W-, C- and S-stationarity of a feasible bilevel point, evaluated as
//! nodewise residuals. Pointwise a.e. conditions become max-violations
//! over grid nodes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lower::{lower_kkt, LowerSolver};
use crate::model::ProblemSpec;
use crate::path::Candidate;
use crate::scalar::{vecops, Real};

pub const DEFAULT_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point<T> {
    pub x: Vec<T>,
    pub y: Vec<T>,
    pub u: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multipliers<T> {
    pub z: Vec<T>,
    pub mu: Vec<T>,
    pub p: Vec<T>,
    pub rho: Vec<T>,
    pub lambda: Vec<T>,
    pub w: Vec<T>,
    pub xi: Vec<T>,
}

impl<T: Real> Candidate<T> {
    pub fn point(&self) -> Point<T> {
        Point {
            x: self.x.clone(),
            y: self.y.clone(),
            u: self.u.clone(),
        }
    }

    pub fn multipliers(&self) -> Multipliers<T> {
        Multipliers {
            z: self.z.clone(),
            mu: self.mu.clone(),
            p: self.p.clone(),
            rho: self.rho.clone(),
            lambda: self.lambda.clone(),
            w: self.w.clone(),
            xi: self.xi.clone(),
        }
    }
}

/// Zero-based node index sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveSets {
    /// `ū > u_a + tol`
    pub i_a_plus: Vec<usize>,
    /// `ū < u_b − tol`
    pub i_b_minus: Vec<usize>,
    /// `|λ̄| ≤ tol` and `ū ≤ u_a + tol`
    pub biactive_a: Vec<usize>,
    /// `|λ̄| ≤ tol` and `ū ≥ u_b − tol`
    pub biactive_b: Vec<usize>,
    /// `I^{a+} ∩ I^{b−}`
    pub inactive: Vec<usize>,
}

pub fn active_sets<T: Real>(spec: &ProblemSpec<T>, u: &[T], lambda: &[T], tol_act: T) -> Result<ActiveSets> {
    spec.grid().check(u)?;
    spec.grid().check(lambda)?;
    let b = &spec.bounds;
    let mut s = ActiveSets {
        i_a_plus: vec![],
        i_b_minus: vec![],
        biactive_a: vec![],
        biactive_b: vec![],
        inactive: vec![],
    };
    for i in 0..u.len() {
        let above = u[i] > b.ua[i] + tol_act;
        let below = u[i] < b.ub[i] - tol_act;
        let null = lambda[i].abs() <= tol_act;
        if above {
            s.i_a_plus.push(i);
        }
        if below {
            s.i_b_minus.push(i);
        }
        if above && below {
            s.inactive.push(i);
        }
        if null && !above {
            s.biactive_a.push(i);
        }
        if null && !below {
            s.biactive_b.push(i);
        }
    }
    Ok(s)
}

/// One entry per condition of the stationarity system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    #[serde(rename = "CSt_x")]
    pub x: f64,
    #[serde(rename = "CSt_y")]
    pub y: f64,
    #[serde(rename = "CSt_u")]
    pub u: f64,
    #[serde(rename = "CSt_p")]
    pub p: f64,
    #[serde(rename = "CSt_z")]
    pub z: f64,
    #[serde(rename = "CSt_ll_y")]
    pub ll_y: f64,
    #[serde(rename = "CSt_ll_u")]
    pub ll_u: f64,
    #[serde(rename = "CSt_ll_sign_a")]
    pub ll_sign_a: f64,
    #[serde(rename = "CSt_ll_sign_b")]
    pub ll_sign_b: f64,
    #[serde(rename = "CSt_xi")]
    pub xi: f64,
    #[serde(rename = "CSt_w")]
    pub w: f64,
    #[serde(rename = "CSt_clarke")]
    pub clarke: f64,
    #[serde(rename = "CSt_strong_a")]
    pub strong_a: f64,
    #[serde(rename = "CSt_strong_b")]
    pub strong_b: f64,
    #[serde(rename = "M_diag_a")]
    pub m_diag_a: f64,
    #[serde(rename = "M_diag_b")]
    pub m_diag_b: f64,
}

impl Residuals {
    /// Largest residual among the weak stationarity conditions.
    pub fn weak_max(&self) -> f64 {
        [
            self.x, self.y, self.u, self.p, self.z, self.ll_y, self.ll_u, self.ll_sign_a,
            self.ll_sign_b, self.xi, self.w,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn strong_max(&self) -> f64 {
        self.strong_a.max(self.strong_b)
    }

    /// Largest residual entering the C-classification.
    pub fn clarke_max(&self) -> f64 {
        self.weak_max().max(self.clarke)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    None,
    #[serde(rename = "W")]
    W,
    #[serde(rename = "C")]
    C,
    #[serde(rename = "S")]
    S,
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Classification::None => "none",
            Classification::W => "W",
            Classification::C => "C",
            Classification::S => "S",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityCertificate {
    pub residuals: Residuals,
    pub classification: Classification,
    pub tol: f64,
    pub active_tol: f64,
    pub active_sets: ActiveSets,
}

impl Residuals {
    pub fn classify(&self, tol: f64) -> Classification {
        if !(self.weak_max() <= tol) {
            Classification::None
        } else if !(self.clarke <= tol) {
            Classification::W
        } else if !(self.strong_max() <= tol) {
            Classification::C
        } else {
            Classification::S
        }
    }
}

/// Checks that `point` is feasible for the bilevel problem: `x̄ ∈ X_ad`,
/// `ū ∈ U_ad` and `(ȳ, ū)` within `10·solver_tol` of the lower solution.
pub fn check_feasible<T: Real>(spec: &ProblemSpec<T>, point: &Point<T>) -> Result<()> {
    let g = spec.grid();
    Error::check_len(spec.n_params(), point.x.len())?;
    g.check(&point.y)?;
    g.check(&point.u)?;
    let feas = T::lit(1e-10);
    if !spec.x_ad.contains(&point.x, feas) {
        return Err(Error::Infeasible(format!("x = {:?} is not in X_ad", point.x)));
    }
    let viol = spec.bounds.max_violation(&point.u);
    if viol > spec.tol.active_tol {
        return Err(Error::Infeasible(format!("u violates its bounds by {viol}")));
    }
    let psi = LowerSolver::new(spec).solve(&point.x, spec.tol.solver_tol, None)?;
    let limit = T::lit(10.0) * spec.tol.solver_tol;
    let du = g.nrm(&vecops::sub(&point.u, &psi.u));
    if du > limit {
        return Err(Error::Infeasible(format!(
            "u is not lower-level optimal: distance {du} to the lower solution"
        )));
    }
    let dy = g.nrm(&vecops::sub(&point.y, &psi.y));
    if dy > limit {
        return Err(Error::Infeasible(format!(
            "y is not lower-level optimal: distance {dy} to the lower solution"
        )));
    }
    Ok(())
}

/// Evaluates every residual without any feasibility check.
pub fn residuals<T: Real>(spec: &ProblemSpec<T>, point: &Point<T>, m: &Multipliers<T>, sets: &ActiveSets) -> Result<Residuals> {
    let g = spec.grid();
    let op = spec.op();
    Error::check_len(spec.n_params(), m.z.len())?;
    for v in [&m.mu, &m.p, &m.rho, &m.lambda, &m.w, &m.xi] {
        g.check(v)?;
    }
    let (x, y, u) = (&point.x, &point.y, &point.u);
    let f64_of = |v: T| v.to_f64_lossy();

    // F'_x + z̄ + j'(ȳ)μ̄
    let mut rx = spec.upper.grad_x(x);
    vecops::axpy(T::one(), &m.z, &mut rx);
    vecops::axpy(T::one(), &spec.lower.grad_dir(g, y, &m.mu)?, &mut rx);

    // F'_y + A*ρ̄ + j''(ȳ)(μ̄)*x̄
    let mut ry = spec.upper.grad_y(y);
    vecops::axpy(T::one(), &op.apply_unchecked(&m.rho), &mut ry);
    vecops::axpy(T::one(), &spec.lower.hess_bilinear_unchecked(g, &m.mu, x), &mut ry);

    // F'_u + σw̄ − B*ρ̄ + ξ̄
    let mut ru = spec.upper.grad_u(u);
    vecops::axpy(spec.sigma, &m.w, &mut ru);
    vecops::axpy(-T::one(), &m.rho, &mut ru);
    vecops::axpy(T::one(), &m.xi, &mut ru);

    // Aμ̄ − Bw̄
    let rp = vecops::sub(&op.apply_unchecked(&m.mu), &m.w);

    let rz = spec.x_ad.normal_cone_residual(x, &m.z, T::lit(1e-10))?;
    let ll = lower_kkt(spec, x, y, u, &m.p, &m.lambda);

    let over = |idx: &[usize], f: &dyn Fn(usize) -> T| -> f64 {
        idx.iter().map(|&i| f64_of(f(i))).fold(0.0, f64::max)
    };
    let zero = T::zero();
    let all: Vec<usize> = (0..u.len()).collect();
    let nonzero_lambda: Vec<usize> = all
        .iter()
        .copied()
        .filter(|&i| m.lambda[i].abs() > spec.tol.active_tol)
        .collect();
    let (xi, w) = (&m.xi, &m.w);

    Ok(Residuals {
        x: f64_of(vecops::norm2(&rx)),
        y: f64_of(g.nrm(&ry)),
        u: f64_of(g.nrm(&ru)),
        p: f64_of(g.nrm(&rp)),
        z: f64_of(rz),
        ll_y: f64_of(ll.adjoint),
        ll_u: f64_of(ll.gradient),
        ll_sign_a: over(&sets.i_a_plus, &|i| (-m.lambda[i]).max(zero)),
        ll_sign_b: over(&sets.i_b_minus, &|i| m.lambda[i].max(zero)),
        xi: over(&sets.inactive, &|i| xi[i].abs()),
        w: over(&nonzero_lambda, &|i| w[i].abs()),
        clarke: over(&all, &|i| (-(xi[i] * w[i])).max(zero)),
        // S: ξ̄ ≤ 0 and w̄ ≤ 0 on the lower biactive set, ≥ 0 on the upper.
        strong_a: over(&sets.biactive_a, &|i| xi[i].max(zero).max(w[i].max(zero))),
        strong_b: over(&sets.biactive_b, &|i| (-xi[i]).max(zero).max((-w[i]).max(zero))),
        // M: ξ̄w̄ = 0 or both carry the S-sign.
        m_diag_a: over(&sets.biactive_a, &|i| {
            (xi[i] * w[i]).abs().min(xi[i].max(zero) + w[i].max(zero))
        }),
        m_diag_b: over(&sets.biactive_b, &|i| {
            (xi[i] * w[i]).abs().min((-xi[i]).max(zero) + (-w[i]).max(zero))
        }),
    })
}

/// Certifies `point` with the given multipliers at tolerance `tol`.
pub fn classify<T: Real>(spec: &ProblemSpec<T>, point: &Point<T>, m: &Multipliers<T>, tol: f64) -> Result<StationarityCertificate> {
    check_feasible(spec, point)?;
    let sets = active_sets(spec, &point.u, &m.lambda, spec.tol.active_tol)?;
    let residuals = residuals(spec, point, m, &sets)?;
    Ok(StationarityCertificate {
        classification: residuals.classify(tol),
        residuals,
        tol,
        active_tol: spec.tol.active_tol.to_f64_lossy(),
        active_sets: sets,
    })
}

pub fn classify_candidate<T: Real>(spec: &ProblemSpec<T>, c: &Candidate<T>, tol: f64) -> Result<StationarityCertificate> {
    classify(spec, &c.point(), &c.multipliers(), tol)
}
