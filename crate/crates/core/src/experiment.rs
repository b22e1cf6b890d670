//! Run artefacts and parameter sweeps.
//!
//! Every CSV starts with two comment lines, `# schema: <name>/<version>` and
//! `# config: <json>`, followed by a header row. Numbers are written with
//! nine significant digits so that reruns produce identical files.
//!
//! | file                 | columns |
//! |----------------------|---------|
//! | `history.csv`        | iter, objective, trajectory_delta, ps_delta, power_delta, irs_delta, binary_residual, rank_gap, max_violation |
//! | `trajectory.csv`     | n, x, y |
//! | `sweep_<param>.csv`  | value, variant, mean_sum_rate, std_sum_rate, seeds, failures |
//! | `sweep_<param>_runs.csv` | value, variant, seed, status, sum_rate, iterations |

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ao::{run_benchmark, AoOptions, RunHistory, Variant};
use crate::error::{Error, Result};
use crate::scenario::{generate_scenario, Params, Solution};

pub const HISTORY_SCHEMA: &str = "history/1";
pub const TRAJECTORY_SCHEMA: &str = "trajectory/1";
pub const SWEEP_SCHEMA: &str = "sweep/1";
pub const SWEEP_RUNS_SCHEMA: &str = "sweep-runs/1";
pub const SUMMARY_SCHEMA: &str = "run-summary/1";

/// Environment variable holding the number of sweep workers.
pub const WORKERS_ENV: &str = "IRS_UAV_WORKERS";

/// Nine significant digits, fixed-point where that stays readable.
pub fn fmt9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if (-4..9).contains(&mag) {
        let s = format!("{:.*}", (8 - mag) as usize, x);
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{x:.8e}")
    }
}

fn csv_writer(path: &Path, schema: &str, config: &serde_json::Value) -> Result<csv::Writer<BufWriter<File>>> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "# schema: {schema}")?;
    writeln!(out, "# config: {}", serde_json::to_string(config)?)?;
    Ok(csv::Writer::from_writer(out))
}

/// Reads a CSV written by this module, skipping the comment lines.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(path)?;
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut rd = csv::Reader::from_reader(body.as_bytes());
    let header = rd.headers()?.iter().map(String::from).collect();
    let rows = rd.records().map(|r| r.map(|r| r.iter().map(String::from).collect())).collect::<std::result::Result<_, _>>()?;
    Ok((header, rows))
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary<'a> {
    pub schema: &'static str,
    pub variant: Variant,
    pub seed: u64,
    pub status: &'a str,
    pub error: Option<String>,
    pub objective: Option<f64>,
    pub initial_objective: Option<f64>,
    pub iterations: usize,
    pub final_increase: Option<f64>,
    pub seconds: Option<f64>,
    pub violations: Option<&'a crate::feasibility::Violations>,
    pub config: &'a Params,
}

/// Writes `run_summary.json`, `history.csv` and `trajectory.csv` for a
/// finished run.
pub fn write_run(dir: &Path, params: &Params, sol: &Solution, history: &RunHistory) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let config = serde_json::to_value(params)?;

    let mut w = csv_writer(&dir.join("history.csv"), HISTORY_SCHEMA, &config)?;
    w.write_record([
        "iter",
        "objective",
        "trajectory_delta",
        "ps_delta",
        "power_delta",
        "irs_delta",
        "binary_residual",
        "rank_gap",
        "max_violation",
    ])?;
    w.write_record(["0".to_string(), fmt9(history.initial_objective), "0".into(), "0".into(), "0".into(), "0".into(), "0".into(), "0".into(), "0".into()])?;
    for r in &history.records {
        w.write_record([
            r.iter.to_string(),
            fmt9(r.objective),
            fmt9(r.trajectory_delta),
            fmt9(r.ps_delta),
            fmt9(r.power_delta),
            fmt9(r.irs_delta),
            fmt9(r.binary_residual),
            fmt9(r.rank_gap),
            fmt9(r.max_violation),
        ])?;
    }
    w.flush()?;

    let mut w = csv_writer(&dir.join("trajectory.csv"), TRAJECTORY_SCHEMA, &config)?;
    w.write_record(["n", "x", "y"])?;
    for (n, q) in sol.q.iter().enumerate() {
        w.write_record([n.to_string(), fmt9(q[0]), fmt9(q[1])])?;
    }
    w.flush()?;

    let summary = RunSummary {
        schema: SUMMARY_SCHEMA,
        variant: history.variant,
        seed: params.seed,
        status: history.status.tag(),
        error: None,
        objective: Some(history.objective()),
        initial_objective: Some(history.initial_objective),
        iterations: history.iterations(),
        final_increase: Some(history.final_increase()),
        seconds: Some(history.seconds),
        violations: Some(&history.violations),
        config: params,
    };
    std::fs::write(dir.join("run_summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(())
}

/// Records a run that stopped on an error.
pub fn write_failure(dir: &Path, params: &Params, variant: Variant, err: &Error) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let summary = RunSummary {
        schema: SUMMARY_SCHEMA,
        variant,
        seed: params.seed,
        status: if is_infeasible(err) { "infeasible" } else { "error" },
        error: Some(err.to_string()),
        objective: None,
        initial_objective: None,
        iterations: 0,
        final_increase: None,
        seconds: None,
        violations: None,
        config: params,
    };
    std::fs::write(dir.join("run_summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(())
}

/// Whether `err` says the instance has no feasible point (as opposed to a
/// bad input or an IO failure).
pub fn is_infeasible(err: &Error) -> bool {
    matches!(err, Error::Infeasible { .. } | Error::HarvestDomain { .. } | Error::Geometry(_))
}

/// Solves one seeded instance and writes its artefacts.
pub fn run_case(params: &Params, variant: Variant, out: &Path) -> Result<(Solution, RunHistory)> {
    let outcome = generate_scenario(params.seed, params).and_then(|sc| run_benchmark(&sc, variant, &AoOptions::for_scenario(&sc)));
    match outcome {
        Ok((sol, history)) => {
            write_run(out, params, &sol, &history)?;
            Ok((sol, history))
        }
        Err(e) => {
            write_failure(out, params, variant, &e)?;
            Err(e)
        }
    }
}

/// Parameters a sweep may vary.
pub const SWEEPABLE: [&str; 7] = ["M", "h_u", "T", "p_max", "p_max_dbm", "chi_th", "v_max"];

/// Description of a sweep, read from TOML:
///
/// ```toml
/// param = "M"
/// values = [10, 20, 30]
/// variants = ["proposed", "no-irs"]
/// seeds = 5
///
/// [base]
/// K = 4
/// N = 30
/// ```
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub param: String,
    pub values: Vec<f64>,
    pub variants: Vec<String>,
    #[serde(default = "default_seeds")]
    pub seeds: u64,
    #[serde(default)]
    pub first_seed: u64,
    /// Output directory; the command line flag wins.
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Overrides applied before the swept value.
    #[serde(default)]
    pub base: toml::Table,
}

fn default_seeds() -> u64 {
    5
}

impl SweepSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: SweepSpec = toml::from_str(text).map_err(|e| Error::Validation(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), msg: e.to_string() })
    }

    pub fn variants(&self) -> Result<Vec<Variant>> {
        self.variants.iter().map(|v| v.parse()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !SWEEPABLE.contains(&self.param.as_str()) {
            return Err(Error::Validation(format!("cannot sweep `{}`; expected one of {SWEEPABLE:?}", self.param)));
        }
        if self.values.is_empty() || self.variants.is_empty() || self.seeds == 0 {
            return Err(Error::Validation("values, variants and seeds must be non-empty".into()));
        }
        self.variants()?;
        for v in &self.values {
            self.params_at(*v, self.first_seed)?;
        }
        Ok(())
    }

    /// Resolved parameters for one point. Sweeping `T` keeps one-second
    /// slots.
    pub fn params_at(&self, value: f64, seed: u64) -> Result<Params> {
        let mut p = Params::default();
        p.apply_table(&self.base)?;
        p = p.with(&self.param, value)?;
        if self.param == "T" {
            p = p.with("N", value.round())?;
        }
        p.seed = seed;
        crate::scenario::Scenario::from_params(&p)?;
        Ok(p)
    }
}

/// Outcome of one (value, variant, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRun {
    pub value: f64,
    pub variant: Variant,
    pub seed: u64,
    pub sum_rate: Option<f64>,
    pub iterations: usize,
    pub status: String,
}

/// Mean and standard deviation over the seeds of one point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub variant: Variant,
    pub mean: f64,
    pub std: f64,
    pub seeds: usize,
    pub failures: usize,
}

pub fn aggregate(value: f64, variant: Variant, runs: &[SweepRun]) -> SweepPoint {
    let rates: Vec<f64> = runs.iter().filter_map(|r| r.sum_rate).collect();
    let n = rates.len();
    let mean = if n > 0 { rates.iter().sum::<f64>() / n as f64 } else { f64::NAN };
    let std = if n > 1 { (rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
    SweepPoint { value, variant, mean, std, seeds: n, failures: runs.len() - n }
}

/// Worker count from [`WORKERS_ENV`], defaulting to the available cores.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|n: &usize| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs a sweep, writing results after every swept value.
pub fn run_sweep(spec: &SweepSpec, out: &Path, workers: usize) -> Result<Vec<SweepPoint>> {
    spec.validate()?;
    std::fs::create_dir_all(out)?;
    let variants = spec.variants()?;
    let config = serde_json::json!({
        "param": spec.param,
        "values": spec.values,
        "variants": spec.variants,
        "seeds": spec.seeds,
        "first_seed": spec.first_seed,
        "base": spec.params_at(spec.values[0], spec.first_seed)?,
    });
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Validation(e.to_string()))?;

    let mut agg = csv_writer(&out.join(format!("sweep_{}.csv", spec.param)), SWEEP_SCHEMA, &config)?;
    agg.write_record(["value", "variant", "mean_sum_rate", "std_sum_rate", "seeds", "failures"])?;
    let mut per_run = csv_writer(&out.join(format!("sweep_{}_runs.csv", spec.param)), SWEEP_RUNS_SCHEMA, &config)?;
    per_run.write_record(["value", "variant", "seed", "status", "sum_rate", "iterations"])?;

    let mut points = Vec::new();
    for &value in &spec.values {
        let jobs: Vec<(Variant, u64)> =
            variants.iter().flat_map(|v| (0..spec.seeds).map(move |s| (*v, spec.first_seed + s))).collect();
        let runs: Vec<SweepRun> = pool.install(|| {
            jobs.par_iter()
                .map(|&(variant, seed)| {
                    let outcome = spec.params_at(value, seed).and_then(|p| {
                        let sc = generate_scenario(seed, &p)?;
                        run_benchmark(&sc, variant, &AoOptions::for_scenario(&sc))
                    });
                    match outcome {
                        Ok((_, h)) => SweepRun {
                            value,
                            variant,
                            seed,
                            sum_rate: Some(h.objective()),
                            iterations: h.iterations(),
                            status: h.status.tag().into(),
                        },
                        Err(e) => SweepRun {
                            value,
                            variant,
                            seed,
                            sum_rate: None,
                            iterations: 0,
                            status: if is_infeasible(&e) { "infeasible".into() } else { "error".into() },
                        },
                    }
                })
                .collect()
        });
        for r in &runs {
            per_run.write_record([
                fmt9(r.value),
                r.variant.tag().into(),
                r.seed.to_string(),
                r.status.clone(),
                r.sum_rate.map_or(String::new(), fmt9),
                r.iterations.to_string(),
            ])?;
        }
        for v in &variants {
            let mine: Vec<SweepRun> = runs.iter().filter(|r| r.variant == *v).cloned().collect();
            let p = aggregate(value, *v, &mine);
            agg.write_record([
                fmt9(p.value),
                p.variant.tag().into(),
                fmt9(p.mean),
                fmt9(p.std),
                p.seeds.to_string(),
                p.failures.to_string(),
            ])?;
            points.push(p);
        }
        agg.flush()?;
        per_run.flush()?;
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt9(0.0), "0");
        assert_eq!(fmt9(1.0), "1");
        assert_eq!(fmt9(250.0), "250");
        assert_eq!(fmt9(123.456789012), "123.456789");
        assert_eq!(fmt9(-0.5), "-0.5");
        assert_eq!(fmt9(1e-10), "1.00000000e-10");
        assert_eq!(fmt9(2.0f64.sqrt()), "1.41421356");
    }

    #[test]
    fn sweep_spec_parsing() {
        let spec = SweepSpec::from_toml_str(
            r#"
            param = "M"
            values = [4, 8]
            variants = ["proposed", "no-irs"]
            seeds = 2
            [base]
            K = 2
            N = 30
            "#,
        )
        .unwrap();
        assert_eq!(spec.variants().unwrap(), vec![Variant::Proposed, Variant::NoIrs]);
        assert_eq!(spec.params_at(8.0, 3).unwrap().num_elements, 8);
        assert_eq!(spec.params_at(8.0, 3).unwrap().num_users, 2);

        let bad = |text: &str| SweepSpec::from_toml_str(text).is_err();
        assert!(bad("param = \"alpha\"\nvalues = [1]\nvariants = [\"proposed\"]"));
        assert!(bad("param = \"M\"\nvalues = []\nvariants = [\"proposed\"]"));
        assert!(bad("param = \"M\"\nvalues = [1]\nvariants = [\"best\"]"));
        assert!(bad("param = \"h_u\"\nvalues = [-5]\nvariants = [\"proposed\"]"));
        assert!(bad("param = \"M\"\nvalues = [1]\nvariants = [\"proposed\"]\ncolour = 1"));
    }

    #[test]
    fn duration_sweep_keeps_unit_slots() {
        let spec = SweepSpec::from_toml_str("param = \"T\"\nvalues = [40]\nvariants = [\"proposed\"]").unwrap();
        let p = spec.params_at(40.0, 0).unwrap();
        assert_eq!(p.num_slots, 40);
        assert_eq!(p.duration, 40.0);
    }

    #[test]
    fn aggregate_statistics() {
        let mk = |r: Option<f64>| SweepRun { value: 1.0, variant: Variant::Proposed, seed: 0, sum_rate: r, iterations: 1, status: String::new() };
        let p = aggregate(1.0, Variant::Proposed, &[mk(Some(1.0)), mk(Some(3.0)), mk(None)]);
        assert_eq!(p.mean, 2.0);
        assert!((p.std - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!((p.seeds, p.failures), (2, 1));
    }

    #[test]
    fn run_artifacts_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let params = Params::default().with("K", 2.0).unwrap().with("M", 2.0).unwrap().with("N", 30.0).unwrap();
        let (sol, h) = run_case(&params, Variant::Proposed, dir.path()).unwrap();
        let (head, rows) = read_csv(&dir.path().join("history.csv")).unwrap();
        assert_eq!(head[0], "iter");
        assert_eq!(rows.len(), h.iterations() + 1);
        let (head, rows) = read_csv(&dir.path().join("trajectory.csv")).unwrap();
        assert_eq!(head, vec!["n", "x", "y"]);
        assert_eq!(rows.len(), sol.q.len());
        assert_eq!(rows[0][1], "0");
        assert_eq!(rows[29][1], "500");
        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("run_summary.json")).unwrap()).unwrap();
        assert_eq!(summary["variant"], "proposed");
        assert_eq!(summary["config"]["num_elements"], 2);
    }
}
