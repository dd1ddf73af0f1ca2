//! Batch runner behind the `pinsim` binary: configuration, commands, and the
//! CSV/JSON outputs they write.
//!
//! Every command is a pure function of its [`RunConfig`]; outputs other than
//! the manifest's wall time are reproducible byte for byte.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DVector;
use serde::Serialize;

use crate::diagnostics::{
    convergence_suite, ibp_check, property_sweep, summary_table, write_report_csv, Statistic, VectorField,
};
use crate::error::{Error, Result};
use crate::geom::{CurvatureModel, ModelKind};
use crate::measures::{
    heat_kernel_radial, pinned_estimate_many, pinned_fdd_oracle, radial_heat_oracle, sample_nu1p, CylinderObservable,
    RadialGrid,
};
use crate::paths::{path_dump_header, write_path_dump, Partition};

/// Version written as the first line of every CSV.
pub const SCHEMA_VERSION: u32 = 1;

/// Process exit codes.
pub mod exit {
    pub const PASS: i32 = 0;
    pub const GATE_FAIL: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const NUMERICAL: i32 = 3;
}

/// Exit code for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NonFinite(_) | Error::IllConditioned { .. } | Error::Quadrature(_) => exit::NUMERICAL,
        _ => exit::USAGE,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Pinned,
    Converge,
    Props,
    Sample,
    Ibp,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Command::Pinned => "pinned",
            Command::Converge => "converge",
            Command::Props => "props",
            Command::Sample => "sample",
            Command::Ibp => "ibp",
        })
    }
}

/// Observable estimated by `pinned`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservableChoice {
    /// Pinned mass.
    One,
    /// `d(o, σ(1/2))`.
    MidRadius,
    All,
}

impl FromStr for ObservableChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one" | "mass" => Ok(Self::One),
            "mid_radius" | "mid" => Ok(Self::MidRadius),
            "all" => Ok(Self::All),
            other => Err(Error::InvalidArgument(format!("unknown observable '{other}' (one, mid_radius, all)"))),
        }
    }
}

/// Parameters of a run. Serialized verbatim into the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub model: ModelKind,
    pub d: usize,
    /// Curvature magnitude; defaults to 1 for hyperbolic and 0 for flat.
    pub kappa: Option<f64>,
    pub n: Vec<usize>,
    /// Pinning target in frame coordinates at the origin.
    pub x: Option<Vec<f64>>,
    /// Pinning target at this distance along the first axis.
    pub rho: Option<f64>,
    pub observable: ObservableChoice,
    /// Monte Carlo samples (paths per `n` for `converge`).
    pub samples: usize,
    /// Paths for `props` and `sample`.
    pub paths: usize,
    pub stats: Vec<Statistic>,
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
}

impl RunConfig {
    /// Defaults for a command.
    pub fn new(command: Command) -> Self {
        let (n, samples, paths) = match command {
            Command::Pinned => (vec![8], 200_000, 0),
            Command::Converge => (vec![8, 16, 32, 64, 128], 200, 0),
            Command::Props => (vec![64], 0, 1000),
            Command::Sample => (vec![8], 0, 10),
            Command::Ibp => (vec![4], 100_000, 0),
        };
        let d = if command == Command::Ibp { 2 } else { 3 };
        Self {
            command,
            model: ModelKind::Hyperbolic,
            d,
            kappa: None,
            n,
            x: None,
            rho: None,
            observable: ObservableChoice::One,
            samples,
            paths,
            stats: Statistic::all().to_vec(),
            seed: 0,
            workers: std::thread::available_parallelism().map_or(1, |v| v.get()),
            out: PathBuf::from("out"),
        }
    }

    /// Sets one parameter from its textual form (flag name or config-file key).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let bad = |what: &str| Error::InvalidArgument(format!("invalid {what} '{value}'"));
        match key.trim().trim_start_matches("--") {
            "model" => self.model = value.parse()?,
            "d" | "dim" => self.d = value.parse().map_err(|_| bad("d"))?,
            "kappa" => self.kappa = Some(value.parse().map_err(|_| bad("kappa"))?),
            "n" => {
                self.n = parse_list(value).map_err(|_| bad("n"))?;
            }
            "x" => self.x = Some(parse_list(value).map_err(|_| bad("x"))?),
            "rho" => self.rho = Some(value.parse().map_err(|_| bad("rho"))?),
            "observable" => self.observable = value.parse()?,
            "N" | "samples" => self.samples = value.parse().map_err(|_| bad("sample count"))?,
            "paths" => self.paths = value.parse().map_err(|_| bad("path count"))?,
            "stat" | "stats" => {
                self.stats = if value == "all" {
                    Statistic::all().to_vec()
                } else {
                    value.split(',').map(|s| s.parse()).collect::<Result<_>>()?
                }
            }
            "seed" => self.seed = value.parse().map_err(|_| bad("seed"))?,
            "workers" => self.workers = value.parse().map_err(|_| bad("worker count"))?,
            "out" => self.out = PathBuf::from(value),
            other => return Err(Error::InvalidArgument(format!("unknown parameter '{other}'"))),
        }
        Ok(())
    }

    /// Applies a `key = value` file (blank lines and `#` comments ignored).
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("{}:{}: expected key = value", path.display(), lineno + 1))
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Builds a config from defaults, then the optional file, then flags.
    pub fn from_sources(command: Command, file: Option<&Path>, flags: &[(&str, String)]) -> Result<Self> {
        let mut cfg = Self::new(command);
        if let Some(f) = file {
            cfg.apply_file(f)?;
        }
        for (k, v) in flags {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn curvature_model(&self) -> Result<CurvatureModel> {
        let kappa = match self.model {
            ModelKind::Flat => self.kappa.unwrap_or(0.0),
            ModelKind::Hyperbolic => self.kappa.unwrap_or(1.0),
        };
        CurvatureModel::new(self.model, self.d, kappa)
    }

    fn single_n(&self) -> Result<Partition> {
        match self.n.as_slice() {
            [n] => Partition::new(*n),
            _ => Err(Error::InvalidArgument(format!("{} takes a single n", self.command))),
        }
    }

    /// Checks every parameter before any computation.
    pub fn validate(&self) -> Result<()> {
        let model = self.curvature_model()?;
        if self.workers == 0 {
            return Err(Error::InvalidArgument("workers must be positive".into()));
        }
        if self.n.is_empty() || self.n.contains(&0) {
            return Err(Error::InvalidArgument("n must be positive".into()));
        }
        match self.command {
            Command::Pinned => {
                let p = self.single_n()?;
                if p.n() < 2 {
                    return Err(Error::InvalidArgument("pinned needs n >= 2".into()));
                }
                if self.samples < 2 {
                    return Err(Error::InvalidArgument(format!("N must be at least 2, got {}", self.samples)));
                }
                if self.x.is_some() && self.rho.is_some() {
                    return Err(Error::InvalidArgument("give either x or rho, not both".into()));
                }
                if let Some(x) = &self.x {
                    if x.len() != model.dim || x.iter().any(|v| !v.is_finite()) {
                        return Err(Error::InvalidArgument(format!("x needs {} finite coordinates", model.dim)));
                    }
                }
                if let Some(r) = self.rho {
                    if !(r >= 0.0 && r.is_finite()) {
                        return Err(Error::InvalidArgument("rho must be a finite nonnegative distance".into()));
                    }
                }
                if self.observable != ObservableChoice::One && p.knot_index(0.5).is_none() {
                    return Err(Error::InvalidArgument("mid_radius needs an even n".into()));
                }
            }
            Command::Converge => {
                if self.n.len() < 4 || self.n.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidArgument("converge needs at least four increasing n values".into()));
                }
                if self.samples < 2 {
                    return Err(Error::InvalidArgument("converge needs at least 2 samples per n".into()));
                }
                if self.stats.is_empty() {
                    return Err(Error::InvalidArgument("no statistic selected".into()));
                }
            }
            Command::Props | Command::Sample => {
                self.single_n()?;
                if self.paths == 0 {
                    return Err(Error::InvalidArgument("paths must be positive".into()));
                }
            }
            Command::Ibp => {
                let p = self.single_n()?;
                if p.n() > 8 || model.dim > 2 {
                    return Err(Error::InvalidArgument("ibp supports n <= 8 and d <= 2".into()));
                }
                if self.samples < 2 {
                    return Err(Error::InvalidArgument("N must be at least 2".into()));
                }
            }
        }
        Ok(())
    }

    /// Pinning target as a point of the model.
    pub fn target(&self, model: &CurvatureModel) -> Result<DVector<f64>> {
        if let Some(x) = &self.x {
            return model.point_from_coords(&DVector::from_vec(x.clone()));
        }
        let mut e = DVector::zeros(model.dim);
        e[0] = 1.0;
        model.point_from_polar(&e, self.rho.unwrap_or(1.0))
    }
}

fn parse_list<T: FromStr>(s: &str) -> std::result::Result<Vec<T>, T::Err> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(|p| p.trim().parse()).collect()
}

/// Result of a command: exit code, files written, and a printable summary.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub outputs: Vec<PathBuf>,
    pub summary: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema: u32,
    command: Command,
    seed: u64,
    git_revision: String,
    wall_time_seconds: f64,
    pass: bool,
    outputs: Vec<String>,
    config: &'a RunConfig,
}

fn git_revision() -> String {
    std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

fn csv_file(path: &Path) -> Result<BufWriter<File>> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "schema={SCHEMA_VERSION}")?;
    Ok(w)
}

/// Runs a validated configuration inside a pool of `config.workers` threads.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let start = Instant::now();
    fs::create_dir_all(&config.out)?;
    let (pass, outputs, summary) = pool.install(|| match config.command {
        Command::Pinned => run_pinned(config),
        Command::Converge => run_converge(config),
        Command::Props => run_props(config),
        Command::Sample => run_sample(config),
        Command::Ibp => run_ibp(config),
    })?;
    let manifest_path = config.out.join("manifest.json");
    let manifest = Manifest {
        schema: SCHEMA_VERSION,
        command: config.command,
        seed: config.seed,
        git_revision: git_revision(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        pass,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        config,
    };
    serde_json::to_writer_pretty(BufWriter::new(File::create(&manifest_path)?), &manifest)?;
    let mut all = outputs;
    all.push(manifest_path);
    Ok(RunOutcome { exit_code: if pass { exit::PASS } else { exit::GATE_FAIL }, outputs: all, summary })
}

/// Runs and maps errors to exit codes, printing the summary or error.
pub fn run_to_exit_code(config: &RunConfig) -> i32 {
    match run(config) {
        Ok(o) => {
            print!("{}", o.summary);
            o.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

type CommandResult = Result<(bool, Vec<PathBuf>, String)>;

/// Oracle for the pinned mass and the gate tolerance it carries.
fn mass_oracle(model: &CurvatureModel, rho: f64) -> Result<(f64, f64)> {
    match model.kind {
        ModelKind::Flat => Ok((heat_kernel_radial(model, 1.0, rho)?, 0.0)),
        ModelKind::Hyperbolic => Ok((radial_heat_oracle(model, 1.0, rho, RadialGrid::default())?, 0.02)),
    }
}

fn mid_oracle(model: &CurvatureModel, rho: f64) -> Option<(f64, f64)> {
    let rel = if model.kind == ModelKind::Flat { 0.0 } else { 0.03 };
    pinned_fdd_oracle(model, rho, &|r| r).ok().map(|q| (q.value, rel))
}

fn run_pinned(cfg: &RunConfig) -> CommandResult {
    let model = cfg.curvature_model()?;
    let p = cfg.single_n()?;
    let x = cfg.target(&model)?;
    let rho = model.distance(&model.origin().point, &x);
    let mut observables = Vec::new();
    if matches!(cfg.observable, ObservableChoice::One | ObservableChoice::All) {
        observables.push(CylinderObservable::one());
    }
    if matches!(cfg.observable, ObservableChoice::MidRadius | ObservableChoice::All) {
        observables.push(CylinderObservable::radial_at("mid_radius", 0.5, None, |r| r));
    }
    let estimates = pinned_estimate_many(&model, p, &x, &observables, cfg.samples, cfg.seed)?;
    let path = cfg.out.join("results.csv");
    let mut w = csv::Writer::from_writer(csv_file(&path)?);
    w.write_record(["model", "d", "kappa", "n", "x_norm", "observable", "N", "mean", "stderr", "oracle", "abs_err"])?;
    let mut pass = true;
    let mut summary = String::new();
    for e in &estimates {
        let oracle = match e.observable.as_str() {
            "one" => Some(mass_oracle(&model, rho)?),
            _ => mid_oracle(&model, rho),
        };
        let (oracle_s, err_s) = match oracle {
            Some((o, rel)) => {
                let err = (e.mean - o).abs();
                let ok = err <= (3.0 * e.stderr).max(rel * o.abs());
                pass &= ok;
                summary.push_str(&format!(
                    "{:<10} mean {:.6e} ± {:.2e}  oracle {:.6e}  |err| {:.2e}  {}\n",
                    e.observable,
                    e.mean,
                    e.stderr,
                    o,
                    err,
                    if ok { "pass" } else { "FAIL" }
                ));
                (o.to_string(), err.to_string())
            }
            None => {
                summary
                    .push_str(&format!("{:<10} mean {:.6e} ± {:.2e}  (no oracle)\n", e.observable, e.mean, e.stderr));
                (String::new(), String::new())
            }
        };
        w.write_record([
            model.kind.to_string(),
            model.dim.to_string(),
            model.kappa.to_string(),
            p.n().to_string(),
            rho.to_string(),
            e.observable.clone(),
            e.samples.to_string(),
            e.mean.to_string(),
            e.stderr.to_string(),
            oracle_s,
            err_s,
        ])?;
    }
    w.flush()?;
    Ok((pass, vec![path], summary))
}

fn run_converge(cfg: &RunConfig) -> CommandResult {
    let model = cfg.curvature_model()?;
    let field = VectorField::standard(&model);
    let reports = convergence_suite(&model, &cfg.n, cfg.samples, &field, cfg.seed, &cfg.stats)?;
    let mut outputs = Vec::new();
    for r in &reports {
        let path = cfg.out.join(format!("converge_{}.csv", r.statistic.name()));
        let mut w = BufWriter::new(File::create(&path)?);
        write_report_csv(&mut w, r)?;
        w.flush()?;
        outputs.push(path);
    }
    Ok((reports.iter().all(|r| r.pass), outputs, summary_table(&reports)))
}

fn run_props(cfg: &RunConfig) -> CommandResult {
    let model = cfg.curvature_model()?;
    let report = property_sweep(&model, cfg.single_n()?, cfg.paths, cfg.seed)?;
    let path = cfg.out.join("props.csv");
    let mut w = csv::Writer::from_writer(csv_file(&path)?);
    w.write_record(["property", "checked", "violations", "worst_slack"])?;
    let mut summary = String::new();
    for c in &report.counts {
        w.write_record([
            c.name.to_string(),
            c.checked.to_string(),
            c.violations.to_string(),
            c.worst_slack.to_string(),
        ])?;
        summary.push_str(&format!("{:<26} checked {:>8}  violations {:>4}\n", c.name, c.checked, c.violations));
    }
    w.flush()?;
    Ok((report.violations() == 0, vec![path], summary))
}

fn run_sample(cfg: &RunConfig) -> CommandResult {
    let model = cfg.curvature_model()?;
    let p = cfg.single_n()?;
    let path = cfg.out.join("paths.csv");
    let mut w = csv::Writer::from_writer(csv_file(&path)?);
    w.write_record(path_dump_header(&model))?;
    for i in 0..cfg.paths as u64 {
        let sigma = sample_nu1p(&model, p, cfg.seed, i)?;
        write_path_dump(&mut w, i, &sigma)?;
    }
    w.flush()?;
    Ok((true, vec![path], format!("wrote {} paths with n = {}\n", cfg.paths, p.n())))
}

/// Observables used by the `ibp` command: `tanh` of the first ambient
/// coordinate at time 1, and `1/(1 + r²)` of the distance from the origin at
/// the middle knot.
pub fn ibp_observables(partition: &Partition) -> (CylinderObservable, CylinderObservable) {
    let f = CylinderObservable::new("tanh_x0_end", vec![1.0], Some(1.0), |_, p| p[0][0].tanh());
    let mid = (partition.n() / 2) as f64 / partition.n() as f64;
    let g = CylinderObservable::radial_at("inv_quad_mid", mid, Some(1.0), |r| 1.0 / (1.0 + r * r));
    (f, g)
}

fn run_ibp(cfg: &RunConfig) -> CommandResult {
    let model = cfg.curvature_model()?;
    let p = cfg.single_n()?;
    let (f, g) = ibp_observables(&p);
    let r = ibp_check(&model, p, &f, &g, &VectorField::standard(&model), cfg.samples, cfg.seed)?;
    let path = cfg.out.join("ibp.csv");
    let mut w = csv::Writer::from_writer(csv_file(&path)?);
    w.write_record([
        "n",
        "N",
        "used",
        "skipped",
        "lhs_mean",
        "lhs_stderr",
        "rhs_mean",
        "rhs_stderr",
        "combined_stderr",
        "pass",
        "div_gap_median",
    ])?;
    w.write_record([
        p.n().to_string(),
        r.samples.to_string(),
        r.used.to_string(),
        r.skipped_ill_conditioned.to_string(),
        r.lhs_mean.to_string(),
        r.lhs_stderr.to_string(),
        r.rhs_mean.to_string(),
        r.rhs_stderr.to_string(),
        r.combined_stderr.to_string(),
        r.pass.to_string(),
        r.div_gap_median.to_string(),
    ])?;
    w.flush()?;
    let summary = format!(
        "lhs {:.6e} ± {:.2e}  rhs {:.6e} ± {:.2e}  skipped {}  divergence gap (median) {:.2e}  {}\n",
        r.lhs_mean,
        r.lhs_stderr,
        r.rhs_mean,
        r.rhs_stderr,
        r.skipped_ill_conditioned,
        r.div_gap_median,
        if r.pass { "pass" } else { "FAIL" }
    );
    Ok((r.pass, vec![path], summary))
}
