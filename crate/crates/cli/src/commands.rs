use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use ioc_core::config::read_problem_file;
use ioc_core::lower::LowerKkt;
use ioc_core::oracle::{self, OracleResult, Verdict};
use ioc_core::path::{extract_candidate, run_path, PathFailure};
use ioc_core::relaxed::RelaxedKkt;
use ioc_core::stationarity::{self, StationarityCertificate};
use ioc_core::value::random_point;
use ioc_core::{
    instance, Error, LowerSolution, LowerSolver, Multipliers, Point, ProblemSpec, RelaxedOptions,
    RelaxedSolution, RelaxedSolver, Schedule, ValueFunction, ValueSample,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::output::{sha256_file, timestamp, Outputs, RunManifest};
use crate::{Command, Common};

pub fn report(kind: &str, message: &str) {
    let body = serde_json::json!({ "error": { "kind": kind, "message": message } });
    eprintln!("{body}");
}

/// Error kind and exit code: 2 for invalid input, 3 for numerical failure,
/// 1 for anything else.
pub fn classify_error(e: &anyhow::Error) -> (&'static str, u8) {
    for cause in e.chain() {
        if let Some(core) = cause.downcast_ref::<Error>() {
            return match core {
                Error::Io(_) => ("io", 1),
                c if c.is_numerical() => ("numerical", 3),
                _ => ("validation", 2),
            };
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return ("validation", 2);
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return ("io", 1);
        }
    }
    ("other", 1)
}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Error::Validation(msg.into()).into()
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(invalid(format!("--{name} must be positive and finite, got {v}")))
    }
}

/// Loaded problem plus the bookkeeping every manifest needs.
struct Run {
    spec: ProblemSpec,
    outputs: Outputs,
    manifest: RunManifest,
}

impl Run {
    fn open(command: &str, common: &Common) -> Result<Self> {
        let file = read_problem_file(&common.problem)
            .with_context(|| format!("loading {}", common.problem.display()))?;
        let mut spec = file.build::<f64>()?;
        let mut overrides = BTreeMap::new();
        if let Some(t) = common.solver_tol {
            spec.tol.solver_tol = positive("solver-tol", t)?;
            overrides.insert("solver_tol".into(), t.to_string());
        }
        if let Some(t) = common.active_tol {
            spec.tol.active_tol = positive("active-tol", t)?;
            overrides.insert("active_tol".into(), t.to_string());
        }
        let manifest = RunManifest {
            command: command.into(),
            problem_file: Some(common.problem.display().to_string()),
            problem_sha256: Some(sha256_file(&common.problem)?),
            overrides,
            seed: None,
            version: env!("CARGO_PKG_VERSION").into(),
            timestamp: timestamp(),
            outputs: vec![],
        };
        Ok(Self { spec, outputs: Outputs::create(&common.out)?, manifest })
    }

    fn set(&mut self, key: &str, value: impl ToString) {
        self.manifest.overrides.insert(key.into(), value.to_string());
    }

    fn finish(self) -> Result<()> {
        self.outputs.finish(self.manifest)?;
        Ok(())
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::MakeDefault { out } => make_default(&out),
        Command::Lower { common, x, tol } => lower(&common, &x.0, tol),
        Command::Value { common, x, samples, seed, from, to, count } => {
            let slice = from.zip(to).map(|(a, b)| (a.0, b.0, count));
            value(&common, x.into_iter().map(|c| c.0).collect(), samples, seed, slice)
        }
        Command::Relax { common, eps, tol } => relax(&common, eps, tol),
        Command::Path { common, eps0, ratio, steps, tol } => {
            path(&common, Schedule { eps0, ratio, steps }, tol)
        }
        Command::Certify { common, point, multipliers, tol } => {
            certify(&common, &point, &multipliers, tol)
        }
        Command::Oracle { common, resolution, point } => oracle_cmd(&common, resolution, point.as_deref()),
    }
}

fn make_default(out: &Path) -> Result<()> {
    let file = instance::default_problem_file()?;
    let mut outputs = Outputs::create(out)?;
    let target = outputs.bytes("problem.json", format!("{}\n", file.to_json()?).as_bytes())?;
    let manifest = RunManifest {
        command: "make-default".into(),
        problem_file: Some(target.display().to_string()),
        problem_sha256: Some(sha256_file(&target)?),
        overrides: BTreeMap::new(),
        seed: None,
        version: env!("CARGO_PKG_VERSION").into(),
        timestamp: timestamp(),
        outputs: vec![],
    };
    outputs.finish(manifest)?;
    Ok(())
}

fn node_table(spec: &ProblemSpec, cols: &[(&str, &[f64])]) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut header = vec!["omega".to_string()];
    header.extend(cols.iter().map(|(n, _)| n.to_string()));
    let rows = spec
        .grid()
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, &w)| std::iter::once(w).chain(cols.iter().map(|(_, v)| v[i])).collect())
        .collect();
    (header, rows)
}

#[derive(Serialize)]
struct LowerReport<'a> {
    solution: &'a LowerSolution,
    kkt: LowerKkt<f64>,
    tolerance: f64,
}

fn lower(common: &Common, x: &[f64], tol: Option<f64>) -> Result<()> {
    let mut run = Run::open("lower", common)?;
    run.set("x", format!("{x:?}"));
    let tol = match tol {
        Some(t) => {
            run.set("tol", t);
            positive("tol", t)?
        }
        None => run.spec.tol.solver_tol,
    };
    let spec = &run.spec;
    if !spec.x_ad.contains(x, 1e-10) {
        return Err(Error::Domain(format!("x = {x:?} is not in X_ad")).into());
    }
    let solver = LowerSolver::new(spec);
    let sol = solver.solve(x, tol, None)?;
    let report = LowerReport { solution: &sol, kkt: solver.kkt(&sol), tolerance: tol };
    let (header, rows) =
        node_table(spec, &[("y", &sol.y), ("u", &sol.u), ("p", &sol.p), ("lambda", &sol.lambda)]);
    run.outputs.json("lower.json", &report)?;
    run.outputs.table("lower.csv", &header, &rows)?;
    run.finish()
}

#[derive(Serialize)]
struct ValueReport {
    mode: &'static str,
    tolerance: f64,
    samples: Vec<ValueSample>,
    concavity_violation: Option<f64>,
}

fn value(
    common: &Common,
    points: Vec<Vec<f64>>,
    random: Option<usize>,
    seed: u64,
    slice: Option<(Vec<f64>, Vec<f64>, usize)>,
) -> Result<()> {
    let modes = usize::from(!points.is_empty()) + usize::from(random.is_some()) + usize::from(slice.is_some());
    if modes != 1 {
        return Err(invalid("give exactly one of --x, --samples or --from/--to"));
    }
    let mut run = Run::open("value", common)?;
    let spec = &run.spec;
    let vf = ValueFunction::new(spec);
    let n = spec.n_params();
    let mut csv_rows = Vec::new();
    let mut concavity = None;
    let (mode, samples): (&'static str, Vec<ValueSample>) = if let Some((a, b, count)) = slice.clone() {
        for v in [&a, &b] {
            if !spec.x_ad.contains(v, 1e-10) {
                return Err(Error::Domain(format!("slice endpoint {v:?} is not in X_ad")).into());
            }
        }
        if count < 2 && a != b {
            return Err(invalid("--count must be at least 2"));
        }
        let s: Vec<ValueSample> = vf.slice(&a, &b, count)?.iter().map(|s| (**s).clone()).collect();
        if a != b {
            let last = (s.len() - 1) as f64;
            for (i, smp) in s.iter().enumerate() {
                let mut row = vec![i as f64 / last];
                row.extend(&smp.x);
                row.push(smp.phi);
                row.extend(&smp.grad_phi);
                csv_rows.push(row);
            }
        }
        ("slice", s)
    } else {
        let xs = match random {
            Some(m) => {
                if m == 0 {
                    return Err(invalid("--samples must be positive"));
                }
                concavity = Some(vf.probe_concavity(m, seed)?);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..m).map(|_| random_point(&spec.x_ad, &mut rng)).collect()
            }
            None => points,
        };
        let mut s = Vec::with_capacity(xs.len());
        for x in &xs {
            if !spec.x_ad.contains(x, 1e-10) {
                return Err(Error::Domain(format!("x = {x:?} is not in X_ad")).into());
            }
            let smp = vf.evaluate(x)?;
            let mut row = vec![csv_rows.len() as f64];
            row.extend(&smp.x);
            row.push(smp.phi);
            row.extend(&smp.grad_phi);
            csv_rows.push(row);
            s.push(smp);
        }
        (if random.is_some() { "random" } else { "points" }, s)
    };
    let mut header = vec![if mode == "slice" { "t".to_string() } else { "index".to_string() }];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.push("phi".into());
    header.extend((1..=n).map(|i| format!("dphi{i}")));
    let report = ValueReport { mode, tolerance: vf.tolerance(), samples, concavity_violation: concavity };
    if random.is_some() {
        run.manifest.seed = Some(seed);
    }
    if let Some((a, b, count)) = slice {
        run.set("from", format!("{a:?}"));
        run.set("to", format!("{b:?}"));
        run.set("count", count);
    }
    run.outputs.json("value.json", &report)?;
    run.outputs.table("value.csv", &header, &csv_rows)?;
    run.finish()
}

fn options(run: &mut Run, tol: Option<f64>) -> Result<RelaxedOptions> {
    let mut o = RelaxedOptions::default();
    if let Some(t) = tol {
        o.stat_tol = positive("tol", t)?;
        run.set("tol", t);
    }
    Ok(o)
}

#[derive(Serialize)]
struct RelaxReport<'a> {
    solution: &'a RelaxedSolution,
    kkt: RelaxedKkt<f64>,
    feasibility_tolerance: f64,
}

fn relax(common: &Common, eps: f64, tol: Option<f64>) -> Result<()> {
    let mut run = Run::open("relax", common)?;
    run.set("eps", eps);
    let opts = options(&mut run, tol)?;
    let solver = RelaxedSolver::with_options(&run.spec, opts.clone());
    let sol = solver.solve(eps, None)?;
    let report = RelaxReport {
        kkt: solver.kkt_residuals(&sol)?,
        feasibility_tolerance: opts.feasibility_tolerance(eps),
        solution: &sol,
    };
    let (header, rows) =
        node_table(&run.spec, &[("y", &sol.y), ("u", &sol.u), ("p", &sol.p), ("lambda", &sol.lambda)]);
    run.outputs.json("relaxed.json", &report)?;
    run.outputs.table("relaxed.csv", &header, &rows)?;
    run.finish()
}

#[derive(Serialize)]
struct LimitReport<'a> {
    schedule: Schedule,
    iterates: usize,
    failure: &'a Option<PathFailure>,
    warnings: &'a [String],
    eps: f64,
    alpha: f64,
    x: &'a [f64],
    upper_value: f64,
    cauchy_x: f64,
    cauchy_ok: bool,
    multiplier_sup: f64,
    multipliers_bounded: bool,
}

fn path(common: &Common, schedule: Schedule, tol: Option<f64>) -> Result<()> {
    let mut run = Run::open("path", common)?;
    run.set("eps0", schedule.eps0);
    run.set("ratio", schedule.ratio);
    run.set("steps", schedule.steps);
    let opts = options(&mut run, tol)?;
    schedule.validate()?;
    let trace = run_path(&run.spec, schedule, opts)?;
    run.outputs.records("path.csv", &trace.rows())?;
    let candidate = match extract_candidate(&trace) {
        Ok(c) => c,
        Err(e) => {
            run.finish()?;
            return Err(e.into());
        }
    };
    let point: Point = candidate.point();
    let multipliers: Multipliers = candidate.multipliers();
    let limit = LimitReport {
        schedule,
        iterates: trace.records.len(),
        failure: &trace.failure,
        warnings: &trace.warnings,
        eps: candidate.eps,
        alpha: candidate.alpha,
        x: &candidate.x,
        upper_value: candidate.upper_value,
        cauchy_x: candidate.cauchy_x,
        cauchy_ok: candidate.cauchy_ok,
        multiplier_sup: trace.multiplier_sup,
        multipliers_bounded: trace.multipliers_bounded,
    };
    run.outputs.json("point.json", &point)?;
    run.outputs.json("multipliers.json", &multipliers)?;
    run.outputs.json("limit.json", &limit)?;
    let failure = trace.failure.clone();
    run.finish()?;
    match failure {
        None => Ok(()),
        Some(f) => Err(Error::Convergence {
            solver: "relaxation path",
            iterations: f.k,
            residual: f64::NAN,
            best: None,
        })
        .with_context(|| format!("path stopped at k = {} (ε = {:e}): {}", f.k, f.eps, f.message)),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn certify(common: &Common, point: &Path, multipliers: &Path, tol: f64) -> Result<()> {
    let mut run = Run::open("certify", common)?;
    run.set("point", point.display());
    run.set("multipliers", multipliers.display());
    run.set("tol", tol);
    let tol = positive("tol", tol)?;
    let p: Point = read_json(point)?;
    let m: Multipliers = read_json(multipliers)?;
    let cert: StationarityCertificate = stationarity::classify(&run.spec, &p, &m, tol)?;
    run.outputs.json("certificate.json", &cert)?;
    run.finish()
}

#[derive(Serialize)]
struct OracleReport {
    result: OracleResult,
    comparison: Option<Verdict>,
}

fn oracle_cmd(common: &Common, resolution: usize, point: Option<&Path>) -> Result<()> {
    let mut run = Run::open("oracle", common)?;
    run.set("resolution", resolution);
    let spec = &run.spec;
    let candidate = match point {
        Some(path) => {
            let p: Point = read_json(path)?;
            stationarity::check_feasible(spec, &p)?;
            Some(spec.upper_value(&p.x, &p.y, &p.u))
        }
        None => None,
    };
    let land = oracle::landscape(spec, resolution)?;
    let best = oracle::best_of(&land).expect("lattice is never empty");
    let result = OracleResult {
        best_x: best.x.clone(),
        best_value: best.value,
        sample_count: land.len(),
        resolution,
    };
    let comparison = candidate.map(|v| Verdict {
        candidate_value: v,
        gap_to_oracle: v - result.best_value,
        oracle: result.clone(),
    });
    let n = spec.n_params();
    let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    header.push("value".into());
    let rows: Vec<Vec<f64>> = land
        .iter()
        .map(|s| s.x.iter().copied().chain([s.value]).collect())
        .collect();
    if let Some(path) = point {
        run.set("point", path.display());
    }
    run.outputs.json("oracle.json", &OracleReport { result, comparison })?;
    run.outputs.table("landscape.csv", &header, &rows)?;
    run.finish()
}
