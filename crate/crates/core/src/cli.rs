//! Command-line surface. Every command writes its outputs atomically and a
//! `RunManifest` next to them; `replay` re-executes a manifest and compares bytes.

use crate::analysis::{fig2, matrix_csv};
use crate::fmt::{num, write_atomic};
use crate::manifest::{schema_versions, FileRecord, RunManifest, Toolchain, RUNMANIFEST_SCHEMA};
use crate::models::{optimal_reference, realize, Checkpoint, CheckpointError, Model};
use crate::objectives::{bounds_csv_row, evaluate, BoundsReport, Objective, BOUNDS_CSV_HEADER};
use crate::prob::{compose_joint, entropy, mutual_information};
use crate::sweep::{pareto_frontier, points_csv, rd_points, run_sweep, SweepSpec, FRONTIER_CSV_HEADER};
use crate::toygen::{calibrate_noise, Geometry, ToyError, ToyProcess};
use crate::trainer::{train, AnnealSchedule, TrainConfig, TrainError};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

/// Tolerance for the oracle's sandwich and recomputation checks.
pub const ORACLE_TOL: f64 = 1e-9;

#[derive(Debug, Parser)]
#[command(name = "rd-lens", version, about = "Exact rate-distortion analysis on a two-cluster toy process")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Fit the shared noise level to a target mutual information.
    Calibrate(CalibrateArgs),
    /// Train one model.
    Train(TrainArgs),
    /// Train a grid of models and extract the frontier.
    Sweep(SweepArgs),
    /// Data- and latent-space diagnostics for a model.
    Eval(EvalArgs),
    /// Recompute every bound from scratch and check the sandwiches.
    Oracle(OracleArgs),
    /// Draw (bin, class) samples from the process.
    Sample(SampleArgs),
    /// Re-run a manifest and compare output bytes.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Calibrate(_) => "calibrate",
            Command::Train(_) => "train",
            Command::Sweep(_) => "sweep",
            Command::Eval(_) => "eval",
            Command::Oracle(_) => "oracle",
            Command::Sample(_) => "sample",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CalibrateArgs {
    #[arg(long, default_value_t = 0.5)]
    pub target_mi: f64,
    #[arg(long, default_value_t = 30)]
    pub bins: usize,
    /// Mass of latent class 1.
    #[arg(long, default_value_t = 0.3)]
    pub p1: f64,
    #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
    pub mu0: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub mu1: f64,
    #[arg(long, default_value_t = -7.0, allow_negative_numbers = true)]
    pub span_lo: f64,
    #[arg(long, default_value_t = 7.0, allow_negative_numbers = true)]
    pub span_hi: f64,
    #[arg(long, default_value = "toyprocess.json")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 60_000)]
    pub steps: usize,
    #[arg(long, default_value_t = 3e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 30)]
    pub latents: usize,
    #[arg(long, default_value_t = 0.1)]
    pub init_scale: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub gate_init: f64,
    #[arg(long, default_value_t = 100)]
    pub log_every: usize,
    /// Rate-weight ramp as `w_start:w_end:start:end`.
    #[arg(long)]
    pub anneal: Option<String>,
    #[arg(long)]
    pub normalize_gradients: bool,
}

impl OptimArgs {
    fn config(&self, objective: Objective, seed: u64) -> Result<TrainConfig, CliError> {
        let cfg = TrainConfig {
            objective,
            steps: self.steps,
            learning_rate: self.lr,
            anneal: self.anneal.as_deref().map(parse_anneal).transpose()?,
            seed,
            init_scale: self.init_scale,
            gate_init: self.gate_init,
            latents: self.latents,
            log_every: self.log_every,
            normalize_gradients: self.normalize_gradients,
            ..TrainConfig::default()
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

fn parse_anneal(s: &str) -> Result<AnnealSchedule, CliError> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || CliError::Usage(format!("--anneal {s:?} is not w_start:w_end:start:end"));
    if parts.len() != 4 {
        return Err(bad());
    }
    Ok(AnnealSchedule {
        w_start: parts[0].parse().map_err(|_| bad())?,
        w_end: parts[1].parse().map_err(|_| bad())?,
        start: parts[2].parse().map_err(|_| bad())?,
        end: parts[3].parse().map_err(|_| bad())?,
    })
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// `beta:<β>` or `target-rate:<σ>`.
    #[arg(long, default_value = "beta:1")]
    pub objective: Objective,
    #[arg(long, default_value = "toyprocess.json")]
    pub process: PathBuf,
    #[arg(long, env = "RD_LENS_SEED", default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub optim: OptimArgs,
    #[arg(long, default_value = "run")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Beta,
    TargetRate,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long, value_enum, default_value_t = Family::Beta)]
    pub family: Family,
    /// Strictly ascending, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.5,1,2")]
    pub grid: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, default_value = "toyprocess.json")]
    pub process: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub optim: OptimArgs,
    #[arg(long, default_value = "sweep")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[group(required = true, multiple = false)]
pub struct ModelSource {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Use the exact-posterior reference model instead of a checkpoint.
    #[arg(long)]
    pub optimal_reference: bool,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelSource,
    #[arg(long, default_value = "toyprocess.json")]
    pub process: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub latents: usize,
    #[arg(long, default_value = "eval")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct OracleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelSource,
    #[arg(long, default_value = "toyprocess.json")]
    pub process: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub latents: usize,
    #[arg(long, default_value = "oracle")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SampleArgs {
    #[arg(long, default_value = "toyprocess.json")]
    pub process: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, env = "RD_LENS_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "samples.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Write replayed outputs here instead of over the originals.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io(_) => 1,
            CliError::Calibration(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Schema(_) => 4,
            CliError::Invariant(_) => 5,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::DivergedLoss { .. } => CliError::Divergence(e.to_string()),
            TrainError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            TrainError::Shape { .. } => CliError::Schema(e.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

fn load_process(path: &Path) -> Result<ToyProcess, CliError> {
    ToyProcess::from_json(&read_text(path)?)
        .map(|(tp, _)| tp)
        .map_err(|e| match e {
            ToyError::Schema(m) => CliError::Schema(format!("{}: {m}", path.display())),
            other => CliError::Schema(format!("{}: {other}", path.display())),
        })
}

fn load_model(src: &ModelSource, tp: &ToyProcess, latents: usize) -> Result<Model, CliError> {
    if src.optimal_reference {
        if latents < 2 {
            return Err(CliError::Usage("the reference model needs at least 2 latents".into()));
        }
        return Ok(optimal_reference(tp, latents));
    }
    let path = src
        .checkpoint
        .as_ref()
        .ok_or_else(|| CliError::Usage("pass --checkpoint or --optimal-reference".into()))?;
    let ck = Checkpoint::from_json(&read_text(path)?).map_err(|e| match e {
        CheckpointError::Schema(m) => CliError::Schema(format!("{}: {m}", path.display())),
        CheckpointError::Malformed(m) => CliError::Schema(format!("{}: {m}", path.display())),
    })?;
    if ck.params.bins() != tp.bin_count() {
        return Err(CliError::Schema(format!(
            "checkpoint has {} data bins, process has {}",
            ck.params.bins(),
            tp.bin_count()
        )));
    }
    Ok(realize(&ck.params, &tp.bin_centers()))
}

/// Files a command read and wrote, plus the library config it resolved.
struct Produced {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    config: serde_json::Value,
    manifest: PathBuf,
}

struct Writer {
    outputs: Vec<PathBuf>,
}

impl Writer {
    fn new() -> Self {
        Writer { outputs: Vec::new() }
    }

    fn put(&mut self, path: PathBuf, contents: &str) -> Result<(), CliError> {
        write_atomic(&path, contents.as_bytes()).map_err(io_err(&path))?;
        self.outputs.push(path);
        Ok(())
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

fn absolute(p: &Path) -> Result<PathBuf, CliError> {
    std::path::absolute(p).map_err(io_err(p))
}

fn sibling_manifest(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.manifest.json"))
}

fn bounds_csv(objective: &str, value: f64, seed: u64, rep: &BoundsReport) -> String {
    format!("{BOUNDS_CSV_HEADER}\n{}\n", bounds_csv_row(objective, value, seed, rep))
}

fn run_calibrate(a: &CalibrateArgs) -> Result<Produced, CliError> {
    let geom = Geometry {
        p1: a.p1,
        mu: [a.mu0, a.mu1],
        bin_count: a.bins,
        span: (a.span_lo, a.span_hi),
        ..Geometry::default()
    };
    let (tp, report) = calibrate_noise(a.target_mi, &geom).map_err(|e| match e {
        ToyError::BracketFailure { .. } => CliError::Calibration(e.to_string()),
        other => CliError::Usage(other.to_string()),
    })?;
    if let Some(parent) = a.out.parent() {
        ensure_dir(parent)?;
    }
    let mut w = Writer::new();
    let mut text = tp.to_json(Some(&report));
    text.push('\n');
    w.put(a.out.clone(), &text)?;
    println!(
        "sigma = {}  I(x;z*) = {}  H(x) = {}",
        num(report.sigma),
        num(report.achieved_mi),
        num(tp.data_entropy())
    );
    Ok(Produced {
        inputs: vec![],
        outputs: w.outputs,
        config: serde_json::json!({ "target_mi": a.target_mi, "geometry": geom, "calibration": report }),
        manifest: sibling_manifest(&a.out),
    })
}

fn run_train(a: &TrainArgs) -> Result<Produced, CliError> {
    let tp = load_process(&a.process)?;
    let cfg = a.optim.config(a.objective, a.seed)?;
    let trace = train(&cfg, &tp)?;
    ensure_dir(&a.out_dir)?;
    let mut w = Writer::new();
    let mut ck = Checkpoint::new(trace.params.clone(), Some(a.seed), Some(a.objective.to_string()), Some(cfg.steps)).to_json();
    ck.push('\n');
    w.put(a.out_dir.join("checkpoint.json"), &ck)?;
    w.put(a.out_dir.join("trace.csv"), &trace.to_csv())?;
    let rep = &trace.report;
    w.put(
        a.out_dir.join("bounds.csv"),
        &bounds_csv(a.objective.family(), a.objective.value(), a.seed, rep),
    )?;
    println!("{}  seed {}  R = {}  D = {}  elbo = {}", a.objective, a.seed, num(rep.r), num(rep.d), num(rep.elbo));
    Ok(Produced {
        inputs: vec![a.process.clone()],
        outputs: w.outputs,
        config: serde_json::to_value(&cfg).expect("config serializes"),
        manifest: a.out_dir.join("manifest.json"),
    })
}

fn run_sweep_cmd(a: &SweepArgs) -> Result<Produced, CliError> {
    let tp = load_process(&a.process)?;
    let first = *a.grid.first().ok_or_else(|| CliError::Usage("--grid is empty".into()))?;
    let family = match a.family {
        Family::Beta => Objective::Beta(first),
        Family::TargetRate => Objective::TargetRate(first),
    };
    let seed0 = a.seeds.first().copied().unwrap_or(0);
    let spec = SweepSpec {
        family,
        grid: a.grid.clone(),
        seeds: a.seeds.clone(),
        base: a.optim.config(family, seed0)?,
        jobs: a.jobs,
    };
    let cells = run_sweep(&spec, &tp).map_err(|e| CliError::Usage(e.to_string()))?;
    ensure_dir(&a.out_dir)?;
    let mut w = Writer::new();
    w.put(a.out_dir.join("points.csv"), &points_csv(&cells))?;
    let points = rd_points(&cells);
    let frontier_csv = if points.is_empty() {
        format!("{FRONTIER_CSV_HEADER}\n")
    } else {
        pareto_frontier(&points).to_csv()
    };
    w.put(a.out_dir.join("frontier.csv"), &frontier_csv)?;
    let diverged = cells.len() - points.len();
    println!("{} cells, {} diverged", cells.len(), diverged);
    if points.is_empty() {
        return Err(CliError::Divergence("every sweep cell diverged".into()));
    }
    Ok(Produced {
        inputs: vec![a.process.clone()],
        outputs: w.outputs,
        config: serde_json::to_value(&spec).expect("spec serializes"),
        manifest: a.out_dir.join("manifest.json"),
    })
}

fn model_inputs(src: &ModelSource, process: &Path) -> Vec<PathBuf> {
    let mut v = vec![process.to_path_buf()];
    v.extend(src.checkpoint.clone());
    v
}

fn run_eval(a: &EvalArgs) -> Result<Produced, CliError> {
    let tp = load_process(&a.process)?;
    let m = load_model(&a.model, &tp, a.latents)?;
    let rep = fig2(&tp, &m);
    let bounds = evaluate(&tp.px(), &m, None);
    ensure_dir(&a.out_dir)?;
    let mut w = Writer::new();
    let mut json = rep.to_json();
    json.push('\n');
    w.put(a.out_dir.join("fig2.json"), &json)?;
    w.put(a.out_dir.join("encoder.csv"), &matrix_csv("x", "z", &m.encoder))?;
    w.put(a.out_dir.join("decoder.csv"), &matrix_csv("z", "x", &m.decoder))?;
    w.put(a.out_dir.join("xfer.csv"), &matrix_csv("x", "x", &rep.xfer))?;
    w.put(a.out_dir.join("latents.csv"), &rep.latent_csv())?;
    w.put(a.out_dir.join("data.csv"), &rep.data_csv(&tp.px()))?;
    w.put(a.out_dir.join("bounds.csv"), &bounds_csv("eval", f64::NAN, 0, &bounds))?;
    println!(
        "KL(p*||g) = {}  class masses = ({}, {})  purity = {}",
        num(rep.kl_p_g),
        num(rep.cluster.mass_per_class[0]),
        num(rep.cluster.mass_per_class[1]),
        num(rep.cluster.purity)
    );
    Ok(Produced {
        inputs: model_inputs(&a.model, &a.process),
        outputs: w.outputs,
        config: serde_json::json!({ "latents": m.latents(), "bins": m.bins() }),
        manifest: a.out_dir.join("manifest.json"),
    })
}

#[derive(Debug, Serialize)]
struct OracleAudit {
    report: BoundsReport,
    independent: Independent,
    violations: Vec<(String, f64)>,
    ok: bool,
}

#[derive(Debug, Serialize)]
struct Independent {
    h: f64,
    i_rep: f64,
    i_gen: f64,
}

fn run_oracle(a: &OracleArgs) -> Result<Produced, CliError> {
    let tp = load_process(&a.process)?;
    let m = load_model(&a.model, &tp, a.latents)?;
    let px = tp.px();
    let report = evaluate(&px, &m, None);
    let independent = Independent {
        h: entropy(&px),
        i_rep: mutual_information(&compose_joint(&px, &m.encoder).expect("encoder rows match p*")),
        i_gen: mutual_information(&compose_joint(&m.marginal, &m.decoder).expect("decoder rows match m")),
    };
    let mut violations: Vec<(String, f64)> = report
        .violations(ORACLE_TOL)
        .into_iter()
        .map(|v| (v.name.to_string(), v.gap))
        .collect();
    for (name, a_val, b_val) in [
        ("H recomputed", report.h, independent.h),
        ("I_rep recomputed", report.i_rep, independent.i_rep),
        ("I_gen recomputed", report.i_gen, independent.i_gen),
        ("elbo = -(D + R)", report.elbo, -(report.d + report.r)),
    ] {
        let gap = (a_val - b_val).abs();
        if !(gap <= ORACLE_TOL) {
            violations.push((name.to_string(), gap));
        }
    }
    let audit = OracleAudit { report, independent, ok: violations.is_empty(), violations };
    ensure_dir(&a.out_dir)?;
    let mut w = Writer::new();
    let mut json = serde_json::to_string_pretty(&audit).expect("audit serializes");
    json.push('\n');
    w.put(a.out_dir.join("oracle.json"), &json)?;
    let produced = Produced {
        inputs: model_inputs(&a.model, &a.process),
        outputs: w.outputs,
        config: serde_json::json!({ "tolerance": ORACLE_TOL }),
        manifest: a.out_dir.join("manifest.json"),
    };
    if audit.ok {
        println!("all bounds hold within {ORACLE_TOL:e}");
        Ok(produced)
    } else {
        let names: Vec<String> = audit.violations.iter().map(|(n, g)| format!("{n} ({g:e})")).collect();
        Err(CliError::Invariant(names.join(", ")))
    }
}

fn run_sample(a: &SampleArgs) -> Result<Produced, CliError> {
    let tp = load_process(&a.process)?;
    let mut csv = String::from("x_bin,z_class\n");
    for (x, z) in tp.sample(a.n, a.seed) {
        csv.push_str(&format!("{x},{z}\n"));
    }
    if let Some(parent) = a.out.parent() {
        ensure_dir(parent)?;
    }
    let mut w = Writer::new();
    w.put(a.out.clone(), &csv)?;
    Ok(Produced {
        inputs: vec![a.process.clone()],
        outputs: w.outputs,
        config: serde_json::json!({ "n": a.n, "seed": a.seed }),
        manifest: sibling_manifest(&a.out),
    })
}

/// Makes every path in the command absolute so the manifest is cwd-independent.
fn resolve(cmd: &Command) -> Result<Command, CliError> {
    let mut c = cmd.clone();
    match &mut c {
        Command::Calibrate(a) => a.out = absolute(&a.out)?,
        Command::Train(a) => {
            a.process = absolute(&a.process)?;
            a.out_dir = absolute(&a.out_dir)?;
        }
        Command::Sweep(a) => {
            a.process = absolute(&a.process)?;
            a.out_dir = absolute(&a.out_dir)?;
        }
        Command::Eval(a) => {
            a.process = absolute(&a.process)?;
            a.out_dir = absolute(&a.out_dir)?;
            if let Some(p) = &mut a.model.checkpoint {
                *p = absolute(p)?;
            }
        }
        Command::Oracle(a) => {
            a.process = absolute(&a.process)?;
            a.out_dir = absolute(&a.out_dir)?;
            if let Some(p) = &mut a.model.checkpoint {
                *p = absolute(p)?;
            }
        }
        Command::Sample(a) => {
            a.process = absolute(&a.process)?;
            a.out = absolute(&a.out)?;
        }
        Command::Replay(_) => {}
    }
    Ok(c)
}

/// Redirects a command's outputs into `dir`, keeping file names.
fn redirect(cmd: &Command, dir: &Path) -> Command {
    let rename = |p: &Path| dir.join(p.file_name().unwrap_or_default());
    let mut c = cmd.clone();
    match &mut c {
        Command::Calibrate(a) => a.out = rename(&a.out),
        Command::Sample(a) => a.out = rename(&a.out),
        Command::Train(a) => a.out_dir = dir.to_path_buf(),
        Command::Sweep(a) => a.out_dir = dir.to_path_buf(),
        Command::Eval(a) => a.out_dir = dir.to_path_buf(),
        Command::Oracle(a) => a.out_dir = dir.to_path_buf(),
        Command::Replay(_) => {}
    }
    c
}

fn records(paths: &[PathBuf]) -> Result<Vec<FileRecord>, CliError> {
    paths.iter().map(|p| FileRecord::of(p).map_err(io_err(p))).collect()
}

/// Runs a non-replay command and writes its manifest. Returns the manifest.
pub fn execute(cmd: &Command, argv: &[String]) -> Result<RunManifest, CliError> {
    let started = Instant::now();
    let resolved = resolve(cmd)?;
    let produced = match &resolved {
        Command::Calibrate(a) => run_calibrate(a),
        Command::Train(a) => run_train(a),
        Command::Sweep(a) => run_sweep_cmd(a),
        Command::Eval(a) => run_eval(a),
        Command::Oracle(a) => run_oracle(a),
        Command::Sample(a) => run_sample(a),
        Command::Replay(_) => return Err(CliError::Usage("replay cannot be nested".into())),
    }?;
    let manifest = RunManifest {
        schema: RUNMANIFEST_SCHEMA.to_string(),
        command: resolved.name().to_string(),
        argv: argv.to_vec(),
        invocation: serde_json::to_value(&resolved).expect("command serializes"),
        config: produced.config,
        inputs: records(&produced.inputs)?,
        outputs: records(&produced.outputs)?,
        schema_versions: schema_versions(),
        wall_time_secs: started.elapsed().as_secs_f64(),
        toolchain: Toolchain::current(),
    };
    manifest.write(&produced.manifest).map_err(io_err(&produced.manifest))?;
    Ok(manifest)
}

fn file_name(path: &str) -> String {
    Path::new(path)
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Re-executes a manifest and checks that every output hash matches.
pub fn replay(a: &ReplayArgs) -> Result<RunManifest, CliError> {
    let original = RunManifest::read(&a.manifest).map_err(|e| CliError::Schema(e.to_string()))?;
    let cmd: Command = serde_json::from_value(original.invocation.clone())
        .map_err(|e| CliError::Schema(format!("manifest invocation: {e}")))?;
    let cmd = match &a.out_dir {
        Some(dir) => redirect(&cmd, dir),
        None => cmd,
    };
    let argv = vec!["replay".to_string(), a.manifest.display().to_string()];
    let fresh = execute(&cmd, &argv)?;
    let mut mismatched = Vec::new();
    for old in &original.outputs {
        let name = file_name(&old.path);
        match fresh.outputs.iter().find(|f| file_name(&f.path) == name) {
            Some(new) if new.sha256 == old.sha256 => {}
            _ => mismatched.push(name),
        }
    }
    if mismatched.is_empty() && fresh.outputs.len() == original.outputs.len() {
        println!("replay reproduced {} output(s) byte for byte", fresh.outputs.len());
        Ok(fresh)
    } else {
        Err(CliError::Invariant(format!("replayed outputs differ: {}", mismatched.join(", "))))
    }
}

/// Parses `args` (without the program name) and runs; returns the exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(std::iter::once("rd-lens".to_string()).chain(argv.iter().cloned())) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp
                | clap::error::ErrorKind::DisplayVersion
                | clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Replay(a) => replay(a).map(|_| ()),
        other => execute(other, &argv).map(|_| ()),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("rd-lens: {e}");
            e.exit_code()
        }
    }
}
