//! Batch experiment runner: one TOML config in, `summary.json` and `tables/*.csv` out.

mod scenarios;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cones::{Engine, QuadConfig};
use crate::error::{Error, Result};
use crate::manifold::{build_model, DiscreteManifold, ModelKind};
use crate::probes::RatioConfig;
use crate::report::FitReport;
use crate::spectral::PotentialSplit;

/// Registered scenario names.
pub const SCENARIOS: [&str; 14] = [
    "l2-identities",
    "compare-A-V",
    "duality-lower-bound",
    "p-norm-sweep",
    "dumbbell-divergence",
    "gaussian-fit",
    "offdiag-probe",
    "davies-gaffney",
    "doubling-fit",
    "czd-check",
    "subcritical",
    "forms-suite",
    "poisson-suite",
    "riesz-compare",
];

fn default_seed() -> u64 {
    42
}

/// Potential used by a scenario.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    /// Scenario default.
    #[default]
    Default,
    Zero,
    /// Uniform `[0, scale)` for `V+`, `[0, negative)` for `V-`.
    Random {
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        negative: f64,
    },
    Constant {
        vplus: f64,
        #[serde(default)]
        vminus: f64,
    },
    /// The potential section of a `from_file` manifold.
    File,
}

fn one() -> f64 {
    1.0
}

/// Parsed experiment configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub manifold: Option<ModelKind>,
    #[serde(default)]
    pub potential: PotentialSpec,
    /// Functional names for sweeps: `G`, `H`, `S`, `S_phi0`, `P`.
    #[serde(default)]
    pub functionals: Vec<String>,
    #[serde(default)]
    pub p_list: Vec<f64>,
    #[serde(default)]
    pub engine: Option<Engine>,
    /// Random draws per check; scenario default when absent.
    #[serde(default)]
    pub samples: Option<usize>,
    /// Model sizes for family sweeps.
    #[serde(default)]
    pub sizes: Vec<usize>,
    #[serde(default)]
    pub budget: Option<RatioConfig>,
    #[serde(default)]
    pub quadrature: Option<QuadConfig>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if !SCENARIOS.contains(&cfg.scenario.as_str()) {
            return Err(Error::UnknownScenario(cfg.scenario));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Builds the configured manifold, or `fallback` when none is given.
    pub fn manifold(&self, fallback: ModelKind) -> Result<(DiscreteManifold, Option<PotentialSplit>)> {
        match self.manifold.clone().unwrap_or(fallback) {
            ModelKind::FromFile { path } => DiscreteManifold::from_file(&path),
            kind => Ok((build_model(&kind)?, None)),
        }
    }

    pub fn samples_or(&self, n: usize) -> usize {
        self.samples.unwrap_or(n)
    }

    pub fn p_list_or(&self, ps: &[f64]) -> Vec<f64> {
        if self.p_list.is_empty() {
            ps.to_vec()
        } else {
            self.p_list.clone()
        }
    }
}

/// One checked statement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    /// The analytic statement being checked, in words.
    pub paper_anchor: String,
    pub measured: f64,
    pub threshold: f64,
    pub pass: bool,
    /// Diagnostics are reported but never fail the run.
    pub hard: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub seed: u64,
    pub criteria: Vec<Criterion>,
}

impl Summary {
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.pass || !c.hard)
    }
}

/// Output sink of a running scenario.
pub struct Recorder {
    out: PathBuf,
    criteria: Vec<Criterion>,
}

impl Recorder {
    fn new(out: &Path) -> Result<Self> {
        fs::create_dir_all(out.join("tables"))?;
        Ok(Recorder { out: out.to_path_buf(), criteria: Vec::new() })
    }

    fn push(&mut self, name: &str, anchor: &str, measured: f64, threshold: f64, pass: bool, hard: bool) {
        self.criteria.push(Criterion {
            name: name.into(),
            paper_anchor: anchor.into(),
            measured,
            threshold,
            pass,
            hard,
        });
    }

    /// Hard criterion `measured <= threshold`.
    pub fn at_most(&mut self, name: &str, anchor: &str, measured: f64, threshold: f64) {
        self.push(name, anchor, measured, threshold, measured <= threshold, true);
    }

    /// Hard criterion `measured >= threshold`.
    pub fn at_least(&mut self, name: &str, anchor: &str, measured: f64, threshold: f64) {
        self.push(name, anchor, measured, threshold, measured >= threshold, true);
    }

    /// Hard criterion with an explicit outcome.
    pub fn check(&mut self, name: &str, anchor: &str, measured: f64, threshold: f64, pass: bool) {
        self.push(name, anchor, measured, threshold, pass, true);
    }

    /// Diagnostic row.
    pub fn note(&mut self, name: &str, anchor: &str, measured: f64, threshold: f64, pass: bool) {
        self.push(name, anchor, measured, threshold, pass, false);
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join("tables").join(format!("{name}.csv"))
    }

    pub fn fit_table(&self, name: &str, report: &FitReport) -> Result<()> {
        report.write_table(fs::File::create(self.path(name))?)?;
        report.write_summary(fs::File::create(self.path(&format!("{name}_constants")))?)
    }

    pub fn table(&self, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
        let mut w = csv::Writer::from_path(self.path(name))?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r.iter().map(|v| format!("{v:.17e}")))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Plot-ready `x,y,series` table.
    pub fn sweep(&self, name: &str, rows: &[(f64, f64, String)]) -> Result<()> {
        let mut w = csv::Writer::from_path(self.path(name))?;
        w.write_record(["x", "y", "series"])?;
        for (x, y, s) in rows {
            w.write_record([format!("{x:.17e}"), format!("{y:.17e}"), s.clone()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn file(&self, name: &str) -> Result<fs::File> {
        Ok(fs::File::create(self.path(name))?)
    }
}

/// Runs a scenario and writes `summary.json` into `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<Summary> {
    let mut rec = Recorder::new(out)?;
    scenarios::dispatch(cfg, &mut rec)?;
    let summary = Summary { scenario: cfg.scenario.clone(), seed: cfg.seed, criteria: rec.criteria };
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}

/// Process exit code of an error.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical_guard() {
        return 3;
    }
    match e {
        Error::Config(_)
        | Error::UnknownScenario(_)
        | Error::InvalidManifold(_)
        | Error::InvalidArgument(_)
        | Error::Json(_) => 2,
        _ => 1,
    }
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    scenario: Option<&'a str>,
    kind: &'a str,
    message: String,
    exit_code: i32,
}

/// Runs from a config path; returns the process exit code and prints an error record on failure.
pub fn run_from_path(config: &Path, out: Option<&Path>) -> i32 {
    let cfg = match ExperimentConfig::load(config) {
        Ok(c) => c,
        Err(e) => return report_error(None, None, &e),
    };
    let out_dir = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(&cfg.scenario));
    match run(&cfg, &out_dir) {
        Ok(summary) => {
            for c in &summary.criteria {
                let tag = match (c.pass, c.hard) {
                    (true, _) => "PASS",
                    (false, true) => "FAIL",
                    (false, false) => "note",
                };
                println!("{tag:4}  {:<44} measured {:>12.5e}  threshold {:>12.5e}", c.name, c.measured, c.threshold);
            }
            if summary.passed() {
                0
            } else {
                1
            }
        }
        Err(e) => report_error(Some(&cfg.scenario), Some(&out_dir), &e),
    }
}

fn report_error(scenario: Option<&str>, out: Option<&Path>, e: &Error) -> i32 {
    let code = exit_code(e);
    let rec = ErrorRecord { scenario, kind: e.kind(), message: e.to_string(), exit_code: code };
    let json = serde_json::to_string(&rec).unwrap_or_else(|_| format!("{{\"message\":\"{e}\"}}"));
    eprintln!("{json}");
    if let Some(dir) = out {
        if fs::create_dir_all(dir).is_ok() {
            let _ = fs::write(dir.join("error.json"), json + "\n");
        }
    }
    code
}
