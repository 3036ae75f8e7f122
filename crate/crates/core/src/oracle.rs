//! Brute-force minimization of the reduced upper objective
//! `x ↦ F(x, ψ^y(x), ψ^u(x))` over a lattice in `X_ad`, for `n ≤ 3`.
//!
//! The simplex is sampled on the barycentric lattice `k/res` and the box on
//! the tensor lattice; the lattice at `2·res` contains the one at `res`, so
//! the best value never increases under doubling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lower::LowerSolver;
use crate::model::{AdmissibleSet, ProblemSpec};
use crate::scalar::Real;

pub const ORACLE_LOWER_TOL: f64 = 1e-12;
pub const MAX_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSample {
    pub x: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub best_x: Vec<f64>,
    pub best_value: f64,
    pub sample_count: usize,
    pub resolution: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub candidate_value: f64,
    pub oracle: OracleResult,
    /// `candidate_value − best_value`; negative when the candidate beats
    /// the lattice.
    pub gap_to_oracle: f64,
}

/// Lattice points of `X_ad` at the given resolution.
pub fn lattice<T: Real>(x_ad: &AdmissibleSet<T>, resolution: usize) -> Result<Vec<Vec<T>>> {
    let n = x_ad.dim();
    if n > MAX_DIM {
        return Err(Error::Refused(format!(
            "a lattice search in dimension {n}; at most {MAX_DIM} parameters are supported"
        )));
    }
    if resolution < 2 {
        return Err(Error::Domain(format!("resolution must be at least 2, got {resolution}")));
    }
    let r = T::from_count(resolution);
    let mut out = Vec::new();
    let mut idx = vec![0usize; n];
    match x_ad {
        AdmissibleSet::Simplex { .. } => {
            // All k ∈ N^n with Σk = res, in lexicographic order.
            fn rec<T: Real>(i: usize, left: usize, idx: &mut Vec<usize>, r: T, out: &mut Vec<Vec<T>>) {
                let n = idx.len();
                if i == n - 1 {
                    idx[i] = left;
                    out.push(idx.iter().map(|&k| T::from_count(k) / r).collect());
                    return;
                }
                for k in 0..=left {
                    idx[i] = k;
                    rec(i + 1, left - k, idx, r, out);
                }
            }
            rec(0, resolution, &mut idx, r, &mut out);
        }
        AdmissibleSet::Box { lower, upper } => loop {
            out.push(
                idx.iter()
                    .zip(lower.iter().zip(upper))
                    .map(|(&k, (&l, &u))| l + (u - l) * T::from_count(k) / r)
                    .collect(),
            );
            let mut i = n;
            loop {
                if i == 0 {
                    return Ok(out);
                }
                i -= 1;
                if idx[i] < resolution {
                    idx[i] += 1;
                    idx[i + 1..].iter_mut().for_each(|v| *v = 0);
                    break;
                }
            }
        },
    }
    Ok(out)
}

/// Reduced upper objective at every lattice point, in lattice order.
pub fn landscape<T: Real>(spec: &ProblemSpec<T>, resolution: usize) -> Result<Vec<OracleSample>> {
    let points = lattice(&spec.x_ad, resolution)?;
    let solver = LowerSolver::new(spec);
    let tol = T::lit(ORACLE_LOWER_TOL).max(T::epsilon() * T::lit(100.0));
    points
        .par_iter()
        .map(|x| {
            let ll = solver.solve(x, tol, None)?;
            Ok(OracleSample {
                x: x.iter().map(|v| v.to_f64_lossy()).collect(),
                value: spec.upper_value(&ll.x, &ll.y, &ll.u).to_f64_lossy(),
            })
        })
        .collect()
}

/// Smallest sampled value; ties go to the lexicographically smallest `x`.
pub fn best_of(samples: &[OracleSample]) -> Option<&OracleSample> {
    samples.iter().min_by(|a, b| {
        a.value
            .total_cmp(&b.value)
            .then_with(|| lex_cmp(&a.x, &b.x))
    })
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

pub fn grid_search<T: Real>(spec: &ProblemSpec<T>, resolution: usize) -> Result<OracleResult> {
    let samples = landscape(spec, resolution)?;
    let best = best_of(&samples).expect("lattice is never empty");
    Ok(OracleResult {
        best_x: best.x.clone(),
        best_value: best.value,
        sample_count: samples.len(),
        resolution,
    })
}

pub fn compare<T: Real>(spec: &ProblemSpec<T>, candidate_value: f64, resolution: usize) -> Result<Verdict> {
    let oracle = grid_search(spec, resolution)?;
    Ok(Verdict {
        candidate_value,
        gap_to_oracle: candidate_value - oracle.best_value,
        oracle,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance;
    use crate::model::UpperObjective;

    #[test]
    fn lattice_sizes_and_nesting() {
        let s2 = AdmissibleSet::<f64>::Simplex { n: 2 };
        let s3 = AdmissibleSet::<f64>::Simplex { n: 3 };
        let b2 = AdmissibleSet::Box { lower: vec![0.0, 1.0], upper: vec![1.0, 3.0] };
        assert_eq!(lattice(&s2, 10).unwrap().len(), 11);
        assert_eq!(lattice(&s3, 10).unwrap().len(), 66);
        assert_eq!(lattice(&b2, 4).unwrap().len(), 25);
        for set in [&s3, &b2] {
            let coarse = lattice(set, 4).unwrap();
            let fine = lattice(set, 8).unwrap();
            for p in &coarse {
                assert!(fine.iter().any(|q| q.iter().zip(p).all(|(a, b)| (a - b).abs() < 1e-15)));
            }
        }
        for p in lattice(&s3, 7).unwrap() {
            assert!(s3.contains(&p, 1e-14));
        }
    }

    #[test]
    fn refuses_large_dimensions_and_tiny_resolution() {
        let s4 = AdmissibleSet::<f64>::Simplex { n: 4 };
        assert!(matches!(lattice(&s4, 10), Err(Error::Refused(_))));
        let s2 = AdmissibleSet::<f64>::Simplex { n: 2 };
        assert!(matches!(lattice(&s2, 1), Err(Error::Domain(_))));
    }

    #[test]
    fn pure_regularization_picks_projection_of_origin() {
        let (spec, _) = instance::box_instance().unwrap();
        let g = spec.grid().clone();
        let spec = spec
            .with_upper(UpperObjective { c_y: 0.0, y_o: g.zeros(), c_u: 0.0, u_o: g.zeros(), gamma: 1.0 })
            .unwrap();
        let r = grid_search(&spec, 8).unwrap();
        assert_eq!(r.best_x, spec.x_ad.project(&[0.0, 0.0]));
        assert_eq!(r.best_value, 0.0);
    }

    #[test]
    fn ties_break_lexicographically() {
        let s = vec![
            OracleSample { x: vec![0.5, 0.5], value: 1.0 },
            OracleSample { x: vec![0.25, 0.75], value: 1.0 },
            OracleSample { x: vec![0.75, 0.25], value: 2.0 },
        ];
        assert_eq!(best_of(&s).unwrap().x, vec![0.25, 0.75]);
    }

    #[test]
    fn default_instance_refinement_and_membership() {
        let (spec, _) = instance::default_instance().unwrap();
        let a = grid_search(&spec, 10).unwrap();
        let b = grid_search(&spec, 20).unwrap();
        assert!(b.best_value <= a.best_value);
        assert_eq!(a.best_x, vec![0.3, 0.7]);
        assert!(a.best_value <= 1e-12);
        // A lattice point compared against its own lattice.
        let land = landscape(&spec, 10).unwrap();
        let v = compare(&spec, land[4].value, 10).unwrap();
        assert!(v.gap_to_oracle >= -1e-10);
        let own = compare(&spec, a.best_value, 10).unwrap();
        assert_eq!(own.gap_to_oracle, 0.0);
    }

    #[test]
    fn deterministic_under_parallel_evaluation() {
        let (spec, _) = instance::box_instance().unwrap();
        let a = landscape(&spec, 12).unwrap();
        let b = landscape(&spec, 12).unwrap();
        assert_eq!(a, b);
    }
}
