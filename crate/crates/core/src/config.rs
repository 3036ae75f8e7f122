//! JSON problem files.
//!
//! ```json
//! {
//!   "grid": { "N": 64 },
//!   "sigma": 0.01,
//!   "lower_objective": { "kind": "target_type", "targets": ["sin_pi", "sin_2pi"] },
//!   "upper_objective": { "c_y": 1, "y_o": [...], "c_u": 1, "u_o": [...], "gamma": 0 },
//!   "x_ad": { "kind": "simplex" },
//!   "u_bounds": { "ua": "const:-1.5", "ub": "const:3", "allow_infinite": false },
//!   "tolerances": { "solver_tol": 1e-10, "active_tol": 1e-6 }
//! }
//! ```
//!
//! Grid functions are either arrays of length `N` or generator strings
//! (`sin_pi`, `sin_2pi`, `const:<v>`) evaluated at the nodes. Array entries
//! may be the strings `"inf"` / `"-inf"`, and `const:inf` is accepted, but
//! only in `u_bounds` with `allow_infinite` set. Pointwise objectives list
//! measurement coordinates in `points`; each is snapped to the nearest node.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::discretization::Grid;
use crate::error::{Error, Result};
use crate::model::{
    AdmissibleSet, ControlBounds, LowerObjective, ProblemSpec, Tolerances, UpperObjective,
};
use crate::scalar::{cast_vec, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub grid: GridSection,
    pub sigma: f64,
    pub lower_objective: LowerSection,
    pub upper_objective: UpperSection,
    pub x_ad: XadSection,
    pub u_bounds: BoundsSection,
    #[serde(default)]
    pub tolerances: Option<TolSection>,
    /// Parameter the observations were generated from, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generating_x: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(rename = "N")]
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LowerSection {
    TargetType { targets: Vec<GridSpec> },
    Pointwise { points: Vec<f64>, desired: GridSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpperSection {
    pub c_y: f64,
    pub y_o: GridSpec,
    pub c_u: f64,
    pub u_o: GridSpec,
    #[serde(default)]
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum XadSection {
    Simplex,
    Box { bounds: BoxBounds },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    pub ua: GridSpec,
    pub ub: GridSpec,
    #[serde(default)]
    pub allow_infinite: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TolSection {
    pub solver_tol: f64,
    pub active_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Generator(String),
    Values(Vec<Entry>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry(pub f64);

impl Serialize for Entry {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("inf")
        } else if self.0 == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Entry {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Entry(v)),
            Raw::Str(s) => parse_special(&s)
                .map(Entry)
                .ok_or_else(|| serde::de::Error::custom(format!("invalid grid value {s:?}"))),
        }
    }
}

fn parse_special(s: &str) -> Option<f64> {
    match s.trim() {
        "inf" | "+inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => None,
    }
}

impl GridSpec {
    pub fn values(v: &[f64]) -> Self {
        GridSpec::Values(v.iter().copied().map(Entry).collect())
    }

    /// Evaluates the generator or explicit values on the grid; `what` names the field in errors.
    pub fn resolve(&self, grid: &Grid<f64>, what: &str, allow_infinite: bool) -> Result<Vec<f64>> {
        let v = match self {
            GridSpec::Values(vals) => {
                if vals.len() != grid.n_nodes() {
                    return Err(Error::Validation(format!(
                        "{what} has {} values, grid has {} nodes",
                        vals.len(),
                        grid.n_nodes()
                    )));
                }
                vals.iter().map(|e| e.0).collect()
            }
            GridSpec::Generator(name) => generate(grid, name)
                .ok_or_else(|| Error::Validation(format!("{what}: unknown generator {name:?}")))?,
        };
        if v.iter().any(|x| x.is_nan()) {
            return Err(Error::Validation(format!("{what} contains NaN")));
        }
        if !allow_infinite && v.iter().any(|x| x.is_infinite()) {
            return Err(Error::Validation(format!(
                "{what} has infinite entries; set allow_infinite to admit them"
            )));
        }
        Ok(v)
    }
}

fn generate(grid: &Grid<f64>, name: &str) -> Option<Vec<f64>> {
    use std::f64::consts::PI;
    match name.trim() {
        "sin_pi" => Some(grid.sample(|w| (PI * w).sin())),
        "sin_2pi" => Some(grid.sample(|w| (2.0 * PI * w).sin())),
        other => {
            let rest = other.strip_prefix("const:")?.trim();
            let c = parse_special(rest).or_else(|| rest.parse::<f64>().ok())?;
            Some(vec![c; grid.n_nodes()])
        }
    }
}

impl ProblemFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Builds and validates the problem instance.
    pub fn build<T: Real>(&self) -> Result<ProblemSpec<T>> {
        let g64 = Grid::<f64>::new(self.grid.n)?;
        let grid = Grid::<T>::new(self.grid.n)?;
        let conv = |v: Vec<f64>| -> Vec<T> { cast_vec(&v) };
        let lower = match &self.lower_objective {
            LowerSection::TargetType { targets } => LowerObjective::TargetType {
                targets: targets
                    .iter()
                    .enumerate()
                    .map(|(i, t)| t.resolve(&g64, &format!("targets[{i}]"), false).map(conv))
                    .collect::<Result<_>>()?,
            },
            LowerSection::Pointwise { points, desired } => LowerObjective::Pointwise {
                nodes: points
                    .iter()
                    .map(|&w| g64.nearest_node(w))
                    .collect::<Result<_>>()?,
                desired: conv(desired.resolve(&g64, "desired", false)?),
            },
        };
        let up = &self.upper_objective;
        let upper = UpperObjective {
            c_y: T::lit(up.c_y),
            y_o: conv(up.y_o.resolve(&g64, "y_o", false)?),
            c_u: T::lit(up.c_u),
            u_o: conv(up.u_o.resolve(&g64, "u_o", false)?),
            gamma: T::lit(up.gamma),
        };
        let x_ad = match &self.x_ad {
            XadSection::Simplex => AdmissibleSet::Simplex { n: lower.n_params() },
            XadSection::Box { bounds } => AdmissibleSet::Box {
                lower: conv(bounds.lower.clone()),
                upper: conv(bounds.upper.clone()),
            },
        };
        let b = &self.u_bounds;
        let bounds = ControlBounds {
            ua: conv(b.ua.resolve(&g64, "ua", b.allow_infinite)?),
            ub: conv(b.ub.resolve(&g64, "ub", b.allow_infinite)?),
        };
        let tol = match self.tolerances {
            Some(t) => Tolerances {
                solver_tol: T::lit(t.solver_tol),
                active_tol: T::lit(t.active_tol),
            },
            None => Tolerances::default(),
        };
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::Validation("sigma must be positive".into()));
        }
        ProblemSpec::new(grid, T::lit(self.sigma), lower, upper, x_ad, bounds, tol)
    }

    /// Writes every grid function as an explicit array so that loading the
    /// result reproduces `spec` exactly.
    pub fn from_spec<T: Real>(spec: &ProblemSpec<T>, generating_x: Option<Vec<f64>>) -> Self {
        let f = |v: &[T]| GridSpec::values(&cast_vec::<T, f64>(v));
        let grid = spec.grid();
        let lower_objective = match &spec.lower {
            LowerObjective::TargetType { targets } => LowerSection::TargetType {
                targets: targets.iter().map(|t| f(t)).collect(),
            },
            LowerObjective::Pointwise { nodes, desired } => LowerSection::Pointwise {
                points: nodes.iter().map(|&k| grid.nodes()[k].to_f64_lossy()).collect(),
                desired: f(desired),
            },
        };
        let x_ad = match &spec.x_ad {
            AdmissibleSet::Simplex { .. } => XadSection::Simplex,
            AdmissibleSet::Box { lower, upper } => XadSection::Box {
                bounds: BoxBounds {
                    lower: cast_vec(lower),
                    upper: cast_vec(upper),
                },
            },
        };
        let allow_infinite = spec
            .bounds
            .ua
            .iter()
            .chain(&spec.bounds.ub)
            .any(|v| v.is_infinite());
        ProblemFile {
            grid: GridSection { n: spec.n_nodes() },
            sigma: spec.sigma.to_f64_lossy(),
            lower_objective,
            upper_objective: UpperSection {
                c_y: spec.upper.c_y.to_f64_lossy(),
                y_o: f(&spec.upper.y_o),
                c_u: spec.upper.c_u.to_f64_lossy(),
                u_o: f(&spec.upper.u_o),
                gamma: spec.upper.gamma.to_f64_lossy(),
            },
            x_ad,
            u_bounds: BoundsSection {
                ua: f(&spec.bounds.ua),
                ub: f(&spec.bounds.ub),
                allow_infinite,
            },
            tolerances: Some(TolSection {
                solver_tol: spec.tol.solver_tol.to_f64_lossy(),
                active_tol: spec.tol.active_tol.to_f64_lossy(),
            }),
            generating_x,
        }
    }
}

pub fn read_problem_file(path: impl AsRef<Path>) -> Result<ProblemFile> {
    ProblemFile::from_json(&std::fs::read_to_string(path)?)
}

pub fn load_problem(path: impl AsRef<Path>) -> Result<ProblemSpec<f64>> {
    read_problem_file(path)?.build()
}

pub fn save_problem<T: Real>(spec: &ProblemSpec<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, ProblemFile::from_spec(spec, None).to_json()?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_json() -> String {
        r#"{
          "grid": {"N": 16},
          "sigma": 0.01,
          "lower_objective": {"kind": "target_type", "targets": ["sin_pi", "sin_2pi"]},
          "upper_objective": {"c_y": 1, "y_o": "const:0", "c_u": 0.5, "u_o": "const:0.25", "gamma": 0},
          "x_ad": {"kind": "simplex"},
          "u_bounds": {"ua": "const:-1.5", "ub": "const:3"},
          "tolerances": {"solver_tol": 1e-10, "active_tol": 1e-6}
        }"#
        .to_string()
    }

    #[test]
    fn loads_generators() {
        let spec: ProblemSpec<f64> = ProblemFile::from_json(&sample_json()).unwrap().build().unwrap();
        assert_eq!(spec.n_params(), 2);
        assert_eq!(spec.bounds.ua, vec![-1.5; 16]);
        assert_eq!(spec.upper.u_o, vec![0.25; 16]);
        if let LowerObjective::TargetType { targets } = &spec.lower {
            let w = spec.grid().nodes()[3];
            assert!((targets[1][3] - (2.0 * std::f64::consts::PI * w).sin()).abs() < 1e-15);
        } else {
            panic!("wrong kind");
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let spec: ProblemSpec<f64> = ProblemFile::from_json(&sample_json()).unwrap().build().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        save_problem(&spec, &path).unwrap();
        assert_eq!(load_problem(&path).unwrap(), spec);
    }

    #[test]
    fn round_trip_with_infinite_bounds_box_and_pointwise() {
        let text = r#"{
          "grid": {"N": 9},
          "sigma": 0.3,
          "lower_objective": {"kind": "pointwise", "points": [0.21, 0.5], "desired": "sin_pi"},
          "upper_objective": {"c_y": 1, "y_o": "sin_2pi", "c_u": 0, "u_o": "const:0", "gamma": 0.1},
          "x_ad": {"kind": "box", "bounds": {"lower": [0, 0.5], "upper": [1, 2]}},
          "u_bounds": {"ua": "const:-inf", "ub": [1,1,1,1,"inf",1,1,1,1], "allow_infinite": true}
        }"#;
        let spec: ProblemSpec<f64> = ProblemFile::from_json(text).unwrap().build().unwrap();
        match &spec.lower {
            LowerObjective::Pointwise { nodes, .. } => assert_eq!(nodes, &vec![1, 4]),
            _ => panic!(),
        }
        assert_eq!(spec.bounds.ub[4], f64::INFINITY);
        let back: ProblemSpec<f64> = ProblemFile::from_json(&ProblemFile::from_spec(&spec, None).to_json().unwrap())
            .unwrap()
            .build()
            .unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn rejects_bad_files() {
        let bad_sigma = sample_json().replace("\"sigma\": 0.01", "\"sigma\": 0");
        let e = ProblemFile::from_json(&bad_sigma).unwrap().build::<f64>().unwrap_err();
        assert!(e.to_string().contains("sigma must be positive"));

        let mut ua = vec!["-1.5".to_string(); 16];
        ua[7] = "3".into();
        let equal = sample_json().replace("\"const:-1.5\"", &format!("[{}]", ua.join(",")));
        assert!(matches!(
            ProblemFile::from_json(&equal).unwrap().build::<f64>(),
            Err(Error::Validation(_))
        ));

        let inf = sample_json().replace("const:3", "const:inf");
        assert!(matches!(
            ProblemFile::from_json(&inf).unwrap().build::<f64>(),
            Err(Error::Validation(_))
        ));

        let unknown = sample_json().replace("\"sigma\"", "\"extra\": 1, \"sigma\"");
        assert!(matches!(ProblemFile::from_json(&unknown), Err(Error::Parse(_))));

        let short = sample_json().replace("\"const:0.25\"", "[1, 2]");
        assert!(ProblemFile::from_json(&short).unwrap().build::<f64>().is_err());

        let empty_box = sample_json().replace(
            "{\"kind\": \"simplex\"}",
            "{\"kind\": \"box\", \"bounds\": {\"lower\": [1, 0], \"upper\": [0, 1]}}",
        );
        assert!(ProblemFile::from_json(&empty_box).unwrap().build::<f64>().is_err());
    }
}
