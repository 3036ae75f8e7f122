//! Optimal value function `φ(x) = f(x, ψ^y(x), ψ^u(x))` of the lower level
//! and its gradient `φ'(x) = j(ψ^y(x))`, evaluated on `R^n_+` only.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lower::{LowerSolution, LowerSolver};
use crate::model::{AdmissibleSet, ProblemSpec};
use crate::scalar::{vecops, Real};

#[derive(Debug, Clone, Serialize)]
pub struct ValueSample<T> {
    pub x: Vec<T>,
    pub phi: T,
    pub grad_phi: Vec<T>,
    #[serde(skip)]
    pub lower: Arc<LowerSolution<T>>,
}

/// Memoized evaluator of `φ` and `φ'`.
///
/// Lower solves are cold-started so every value depends on `x` alone; the
/// cache is keyed by the bit pattern of `x`.
pub struct ValueFunction<'a, T> {
    solver: LowerSolver<'a, T>,
    tol: T,
    cache: RwLock<HashMap<Vec<u64>, Arc<ValueSample<T>>>>,
}

impl<'a, T: Real> ValueFunction<'a, T> {
    pub fn new(spec: &'a ProblemSpec<T>) -> Self {
        Self::with_tolerance(spec, spec.tol.solver_tol)
    }

    pub fn with_tolerance(spec: &'a ProblemSpec<T>, tol: T) -> Self {
        Self {
            solver: LowerSolver::new(spec),
            tol,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn spec(&self) -> &'a ProblemSpec<T> {
        self.solver.spec()
    }

    pub fn solver(&self) -> &LowerSolver<'a, T> {
        &self.solver
    }

    pub fn tolerance(&self) -> T {
        self.tol
    }

    /// Evaluates without touching the cache.
    pub fn evaluate(&self, x: &[T]) -> Result<ValueSample<T>> {
        let spec = self.spec();
        let sol = self.solver.solve(x, self.tol, None)?;
        let phi = spec.lower_value(&sol.x, &sol.y, &sol.u);
        let grad_phi = spec.lower.eval_unchecked(spec.grid(), &sol.y);
        Ok(ValueSample {
            x: sol.x.clone(),
            phi,
            grad_phi,
            lower: Arc::new(sol),
        })
    }

    pub fn sample(&self, x: &[T]) -> Result<Arc<ValueSample<T>>> {
        let key: Vec<u64> = x.iter().map(|v| v.cache_bits()).collect();
        if let Some(s) = self.cache.read().expect("cache poisoned").get(&key) {
            return Ok(Arc::clone(s));
        }
        let s = Arc::new(self.evaluate(x)?);
        self.cache
            .write()
            .expect("cache poisoned")
            .insert(key, Arc::clone(&s));
        Ok(s)
    }

    pub fn phi(&self, x: &[T]) -> Result<T> {
        Ok(self.sample(x)?.phi)
    }

    pub fn grad_phi(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(self.sample(x)?.grad_phi.clone())
    }

    pub fn lower(&self, x: &[T]) -> Result<Arc<LowerSolution<T>>> {
        Ok(Arc::clone(&self.sample(x)?.lower))
    }

    pub fn cache_len(&self) -> usize {
        self.cache.read().expect("cache poisoned").len()
    }

    /// Largest concavity violation `tφ(x₁) + (1−t)φ(x₂) − φ(tx₁ + (1−t)x₂)`
    /// over random segments in `X_ad`, clipped at zero.
    pub fn probe_concavity(&self, trials: usize, seed: u64) -> Result<T> {
        if trials == 0 {
            return Err(Error::Domain("probe_concavity needs at least one trial".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x_ad = &self.spec().x_ad;
        let mut worst = T::zero();
        for _ in 0..trials {
            let x1 = random_point(x_ad, &mut rng);
            let x2 = random_point(x_ad, &mut rng);
            let t = T::lit(rng.gen_range(0.0..1.0));
            worst = worst.max(self.concavity_violation(&x1, &x2, t)?);
        }
        Ok(worst)
    }

    pub fn concavity_violation(&self, x1: &[T], x2: &[T], t: T) -> Result<T> {
        let xm: Vec<T> = x1
            .iter()
            .zip(x2)
            .map(|(&a, &b)| t * a + (T::one() - t) * b)
            .collect();
        let chord = t * self.phi(x1)? + (T::one() - t) * self.phi(x2)?;
        Ok((chord - self.phi(&xm)?).max(T::zero()))
    }

    /// Empirical constant `C` in `|φ(x) − φ(x̄) − φ'(x̄)·(x − x̄)| ≤ C|x − x̄|²`
    /// from `trials` points of `X_ad` at distance at most `radius` from `x̄`.
    pub fn probe_taylor(&self, x_bar: &[T], radius: T, trials: usize, seed: u64) -> Result<T> {
        let x_ad = &self.spec().x_ad;
        Error::check_len(x_ad.dim(), x_bar.len())?;
        if !(radius > T::zero()) || trials == 0 {
            return Err(Error::Domain("probe_taylor needs radius > 0 and trials ≥ 1".into()));
        }
        let base = self.sample(x_bar)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = T::zero();
        for _ in 0..trials {
            let d = tangent_direction(x_ad, &mut rng);
            let s = T::lit(rng.gen_range(0.5..1.0)) * radius;
            let x = x_ad.project(&vecops::add(x_bar, &vecops::scale(s, &d)));
            let dx = vecops::sub(&x, x_bar);
            let r2 = vecops::dot(&dx, &dx);
            if r2 == T::zero() {
                continue;
            }
            worst = worst.max(self.taylor_ratio(&base, &x)?);
        }
        Ok(worst)
    }

    /// `|φ(x) − φ(x̄) − φ'(x̄)·(x − x̄)| / |x − x̄|²`
    pub fn taylor_ratio(&self, base: &ValueSample<T>, x: &[T]) -> Result<T> {
        let dx = vecops::sub(x, &base.x);
        let r2 = vecops::dot(&dx, &dx);
        let rem = self.phi(x)? - base.phi - vecops::dot(&base.grad_phi, &dx);
        Ok(rem.abs() / r2)
    }

    /// `count` equispaced samples on the segment from `a` to `b`. Equal
    /// endpoints collapse to a single sample.
    pub fn slice(&self, a: &[T], b: &[T], count: usize) -> Result<Vec<Arc<ValueSample<T>>>> {
        Error::check_len(a.len(), b.len())?;
        if a == b {
            return Ok(vec![self.sample(a)?]);
        }
        if count < 2 {
            return Err(Error::Domain("a slice needs at least two samples".into()));
        }
        (0..count)
            .map(|k| {
                let t = T::from_count(k) / T::from_count(count - 1);
                let x: Vec<T> = a
                    .iter()
                    .zip(b)
                    .map(|(&ai, &bi)| (T::one() - t) * ai + t * bi)
                    .collect();
                self.sample(&x)
            })
            .collect()
    }
}

/// Uniform point of the simplex (normalized exponentials) or of the box.
pub fn random_point<T: Real, R: Rng>(x_ad: &AdmissibleSet<T>, rng: &mut R) -> Vec<T> {
    match x_ad {
        AdmissibleSet::Simplex { n } => {
            let e: Vec<f64> = (0..*n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|&v| T::lit(v / s)).collect()
        }
        AdmissibleSet::Box { lower, upper } => lower
            .iter()
            .zip(upper)
            .map(|(&l, &u)| l + (u - l) * T::lit(rng.gen::<f64>()))
            .collect(),
    }
}

/// Random unit direction in the affine hull of `X_ad`.
fn tangent_direction<T: Real, R: Rng>(x_ad: &AdmissibleSet<T>, rng: &mut R) -> Vec<T> {
    let n = x_ad.dim();
    loop {
        let mut d: Vec<T> = (0..n).map(|_| T::lit(rng.gen_range(-1.0..1.0))).collect();
        if let AdmissibleSet::Simplex { .. } = x_ad {
            let mean = d.iter().copied().sum::<T>() / T::from_count(n);
            d.iter_mut().for_each(|v| *v -= mean);
        }
        let nrm = vecops::norm2(&d);
        if nrm > T::lit(1e-3) {
            return vecops::scale(T::one() / nrm, &d);
        }
    }
}
