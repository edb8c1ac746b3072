//! Command-line front end: `train`, `finetune`, `sweep`, `certify`, `attack`
//! and `verify`.
//!
//! Exit codes: 0 ok, 1 verification failure, 2 configuration or usage error,
//! 3 I/O or file-format error, 4 training divergence.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::{self, AttackConfig, AttackKind, MetricsRow};
use crate::certify::{self, CertificateRow};
use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::network::{read_weights, write_weights, Activation, Network};
use crate::plot;
use crate::regularize::{RegKind, RegularizerSpec};
use crate::table::write_table;
use crate::train::{self, EpochRecord, RunStatus, SweepConfig, TrainConfig};
use crate::verify::{self, Mutation, VerifyConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

pub const DEFAULT_OUT_DIR: &str = "rrl-out";

#[derive(Debug, Parser)]
#[command(name = "rrl", version, about = "Robustness regularization and certification for ReLU MLPs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network from scratch.
    Train(Flags),
    /// Fine-tune pretrained weights under a regularizer, one run per λ.
    Finetune(Flags),
    /// Baseline, fine-tuning grid, attacks, certificates and plots.
    Sweep(Flags),
    /// Per-sample robustness certificates.
    Certify(Flags),
    /// Run one attack over a dataset.
    Attack(Flags),
    /// Oracle verification suite on built-in fixtures.
    Verify(Flags),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Finetune(_) => "finetune",
            Command::Sweep(_) => "sweep",
            Command::Certify(_) => "certify",
            Command::Attack(_) => "attack",
            Command::Verify(_) => "verify",
        }
    }

    fn flags(&self) -> &Flags {
        match self {
            Command::Train(f)
            | Command::Finetune(f)
            | Command::Sweep(f)
            | Command::Certify(f)
            | Command::Attack(f)
            | Command::Verify(f) => f,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct Flags {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// IDX image file; replaces the configured data source.
    #[arg(long)]
    pub data_images: Option<PathBuf>,
    /// IDX label file; replaces the configured data source.
    #[arg(long)]
    pub data_labels: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "RRL_OUT_DIR", default_value = DEFAULT_OUT_DIR)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Comma-separated λ values.
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub reg: Option<RegKind>,
    #[arg(long)]
    pub attack: Option<AttackKind>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// RRLNET1 weight file.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    /// Gaussian task with one noise coordinate and `dim - 1` weakly
    /// label-correlated coordinates.
    Synthetic { n: usize, dim: usize, eta: f64, seed: u64 },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        /// Keep two digits; the first becomes class 0.
        #[serde(default)]
        digits: Option<[usize; 2]>,
        #[serde(default)]
        max_samples: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub train_fraction: f64,
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic {
                n: 400,
                dim: 10,
                eta: data::TSIPRAS_ETA,
                seed: 0,
            },
            train_fraction: 0.8,
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub bias: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![300, 100],
            activation: Activation::Relu,
            bias: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub reg_kinds: Vec<RegKind>,
    pub lambda_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Test samples used for attacks and certificates (0 = all).
    pub eval_samples: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        let s = SweepConfig::default();
        Self {
            reg_kinds: s.reg_kinds,
            lambda_grid: s.lambda_grid,
            seeds: s.seeds,
            eval_samples: s.eval_samples,
        }
    }
}

/// The JSON run configuration shared by all commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub finetune: TrainConfig,
    /// Regularizer used by `finetune` when no flag overrides it.
    pub regularizer: RegularizerSpec,
    pub sweep: GridConfig,
    pub attacks: Vec<AttackConfig>,
    pub certify_epsilon: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = SweepConfig::default();
        Self {
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::baseline(),
            finetune: TrainConfig::finetune(),
            regularizer: RegularizerSpec {
                kind: RegKind::CrossLipschitz,
                lambda: 0.1,
            },
            sweep: GridConfig::default(),
            attacks: s.attacks,
            certify_epsilon: s.certify_epsilon,
        }
    }
}

impl RunConfig {
    /// Parses JSON; relative data paths resolve against `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
        if let DataSource::Idx { images, labels, .. } = &mut cfg.data.source {
            for p in [images, labels] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            hidden: self.model.hidden.clone(),
            activation: self.model.activation,
            bias: self.model.bias,
            reg_kinds: self.sweep.reg_kinds.clone(),
            lambda_grid: self.sweep.lambda_grid.clone(),
            seeds: self.sweep.seeds.clone(),
            attacks: self.attacks.clone(),
            baseline: self.train.clone(),
            finetune: self.finetune.clone(),
            eval_samples: self.sweep.eval_samples,
            certify_epsilon: self.certify_epsilon,
        }
    }
}

/// Provenance record written before any result and updated at the end.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub status: String,
    pub args: Vec<String>,
    pub config: RunConfig,
    pub seeds: Vec<u64>,
    pub tool_version: String,
    pub data_checksums: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub timings_seconds: BTreeMap<String, f64>,
    pub error: Option<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Divergence { .. } => EXIT_DIVERGED,
        Error::Io(_) | Error::Idx(_) | Error::WeightFile(_) | Error::Csv(_) => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

struct Session {
    out: PathBuf,
    manifest: RunManifest,
    started: Instant,
}

impl Session {
    fn start(command: &str, args: Vec<String>, out: &Path, config: RunConfig, seeds: Vec<u64>) -> Result<Self> {
        fs::create_dir_all(out)?;
        let s = Self {
            out: out.to_path_buf(),
            manifest: RunManifest {
                command: command.into(),
                status: "running".into(),
                args,
                config,
                seeds,
                tool_version: env!("CARGO_PKG_VERSION").into(),
                data_checksums: BTreeMap::new(),
                outputs: BTreeMap::new(),
                timings_seconds: BTreeMap::new(),
                error: None,
            },
            started: Instant::now(),
        };
        s.write_manifest()?;
        Ok(s)
    }

    fn write_manifest(&self) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(self.out.join("manifest.json"), text + "\n")?;
        Ok(())
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.out.join(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, bytes)?;
        self.manifest.outputs.insert(name.into(), sha256_hex(bytes));
        Ok(())
    }

    fn time(&mut self, phase: &str, since: Instant) {
        self.manifest.timings_seconds.insert(phase.into(), since.elapsed().as_secs_f64());
    }

    fn finish(&mut self, status: &str, error: Option<String>) -> Result<()> {
        self.manifest.status = status.into();
        self.manifest.error = error;
        let total = self.started;
        self.time("total", total);
        self.write_manifest()
    }
}

fn table_bytes<T: Serialize>(schema: &str, header: &[&str], rows: &[T]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_table(&mut buf, schema, header, rows)?;
    Ok(buf)
}

fn weight_bytes(net: &Network) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_weights(net, &mut buf)?;
    Ok(buf)
}

fn load_network(path: &Path) -> Result<Network> {
    read_weights(fs::File::open(path)?)
}

/// The configured dataset before splitting, with checksums of the files read.
pub fn load_dataset(src: &DataSource) -> Result<(Dataset, BTreeMap<String, String>)> {
    let mut sums = BTreeMap::new();
    let d = match src {
        DataSource::Synthetic { n, dim, eta, seed } => data::synth_tsipras(*n, *dim, *eta, *seed)?,
        DataSource::Idx {
            images,
            labels,
            digits,
            max_samples,
        } => {
            let ib = fs::read(images)?;
            let lb = fs::read(labels)?;
            sums.insert(images.display().to_string(), sha256_hex(&ib));
            sums.insert(labels.display().to_string(), sha256_hex(&lb));
            let mut d = data::idx_dataset(ib.as_slice(), lb.as_slice())?;
            if let Some([a, b]) = digits {
                d = data::binary_subset(&d, *a, *b)?;
            }
            if let Some(m) = max_samples {
                d = d.head(*m);
            }
            d
        }
    };
    Ok((d, sums))
}

fn resolve_config(flags: &Flags) -> Result<RunConfig> {
    let mut cfg = match &flags.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match (&flags.data_images, &flags.data_labels) {
        (Some(images), Some(labels)) => {
            let (digits, max_samples) = match &cfg.data.source {
                DataSource::Idx { digits, max_samples, .. } => (*digits, *max_samples),
                DataSource::Synthetic { .. } => (None, None),
            };
            cfg.data.source = DataSource::Idx {
                images: images.clone(),
                labels: labels.clone(),
                digits,
                max_samples,
            };
        }
        (None, None) => {}
        _ => return Err(Error::Config("--data-images and --data-labels must be given together".into())),
    }
    if let Some(s) = flags.seed {
        cfg.train.seed = s;
        cfg.finetune.seed = s;
        cfg.sweep.seeds = vec![s];
    }
    if let Some(kind) = flags.reg {
        cfg.regularizer.kind = kind;
        cfg.sweep.reg_kinds = vec![kind];
    }
    if let Some(grid) = &flags.lambda_grid {
        if grid.is_empty() {
            return Err(Error::Config("--lambda-grid is empty".into()));
        }
        cfg.regularizer.lambda = grid[0];
        cfg.sweep.lambda_grid = grid.clone();
    }
    if let Some(eps) = flags.epsilon {
        cfg.certify_epsilon = eps;
    }
    if let Some(kind) = flags.attack {
        // keep domain clipping and seeds from the configured attacks
        let mut a = match cfg.attacks.iter().find(|a| a.kind == kind) {
            Some(same) => *same,
            None => {
                let base = cfg.attacks.first().copied().unwrap_or_default();
                AttackConfig {
                    clip: base.clip,
                    seed: base.seed,
                    ..AttackConfig::new(kind)
                }
            }
        };
        if let Some(eps) = flags.epsilon {
            a = a.with_epsilon(eps);
        }
        cfg.attacks = vec![a];
    } else if let Some(eps) = flags.epsilon {
        for a in cfg.attacks.iter_mut().filter(|a| a.kind.is_budgeted()) {
            a.epsilon = eps;
        }
    }
    Ok(cfg)
}

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    VerificationFailed,
    Diverged,
}

impl Outcome {
    pub fn code(self) -> i32 {
        match self {
            Outcome::Ok => EXIT_OK,
            Outcome::VerificationFailed => EXIT_VERIFY_FAILED,
            Outcome::Diverged => EXIT_DIVERGED,
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let shown: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match run(&cli, shown) {
        Ok(o) => o.code(),
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: &Cli, args: Vec<String>) -> Result<Outcome> {
    let flags = cli.command.flags();
    let cfg = resolve_config(flags)?;
    let body = || -> Result<Outcome> {
        let seeds = match &cli.command {
            Command::Sweep(_) => cfg.sweep.seeds.clone(),
            Command::Finetune(_) => vec![cfg.finetune.seed],
            _ => vec![flags.seed.unwrap_or(cfg.train.seed)],
        };
        let mut session = Session::start(cli.command.name(), args.clone(), &flags.out, cfg.clone(), seeds)?;
        let result = match &cli.command {
            Command::Train(_) => cmd_train(&mut session, &cfg),
            Command::Finetune(f) => cmd_finetune(&mut session, &cfg, f),
            Command::Sweep(_) => cmd_sweep(&mut session, &cfg),
            Command::Certify(f) => cmd_certify(&mut session, &cfg, f),
            Command::Attack(f) => cmd_attack(&mut session, &cfg, f),
            Command::Verify(f) => cmd_verify(&mut session, f),
        };
        match result {
            Ok(o) => {
                let status = match o {
                    Outcome::Ok => "ok",
                    Outcome::VerificationFailed => "verification-failed",
                    Outcome::Diverged => "diverged",
                };
                session.finish(status, None)?;
                Ok(o)
            }
            Err(e) => {
                let status = if matches!(e, Error::Divergence { .. }) {
                    "diverged"
                } else {
                    "error"
                };
                session.finish(status, Some(e.to_string()))?;
                Err(e)
            }
        }
    };
    match flags.jobs {
        Some(j) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(j.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            pool.install(body)
        }
        None => body(),
    }
}

/// Evaluation set: the whole file when IDX paths are passed on the command
/// line, otherwise the test split of the configured source.
fn evaluation_set(session: &mut Session, cfg: &RunConfig, flags: &Flags) -> Result<Dataset> {
    let (full, sums) = load_dataset(&cfg.data.source)?;
    session.manifest.data_checksums.extend(sums);
    if flags.data_images.is_some() {
        return Ok(full);
    }
    Ok(data::split(&full, cfg.data.train_fraction, cfg.data.split_seed)?.1)
}

fn widths_for(cfg: &RunConfig, d: &Dataset) -> Vec<usize> {
    let mut widths = vec![d.dim()];
    widths.extend(&cfg.model.hidden);
    widths.push(d.num_classes);
    widths
}

fn cmd_train(session: &mut Session, cfg: &RunConfig) -> Result<Outcome> {
    let t = Instant::now();
    let (full, sums) = load_dataset(&cfg.data.source)?;
    session.manifest.data_checksums.extend(sums);
    let (train_set, test_set) = data::split(&full, cfg.data.train_fraction, cfg.data.split_seed)?;
    session.time("load", t);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let init = Network::random(&widths_for(cfg, &full), cfg.model.activation, cfg.model.bias, &mut rng)?;
    let t = Instant::now();
    let out = train::train(&init, &train_set, &cfg.train)?;
    session.time("train", t);
    session.write("model.rrlnet", &weight_bytes(&out.net)?)?;
    session.write("trace.csv", &table_bytes(train::TRACE_SCHEMA, &train::TRACE_HEADER, &out.trace)?)?;
    let (train_acc, _) = train::evaluate_loss(&out.net, &train_set)?;
    print!("train accuracy {train_acc:.4}");
    if !test_set.is_empty() {
        let (test_acc, _) = train::evaluate_loss(&out.net, &test_set)?;
        print!(", test accuracy {test_acc:.4}");
    }
    println!();
    Ok(Outcome::Ok)
}

fn cmd_finetune(session: &mut Session, cfg: &RunConfig, flags: &Flags) -> Result<Outcome> {
    let weights = flags
        .weights
        .as_ref()
        .ok_or_else(|| Error::Config("finetune needs --weights".into()))?;
    let base = load_network(weights)?;
    let (full, sums) = load_dataset(&cfg.data.source)?;
    session.manifest.data_checksums.extend(sums);
    let (train_set, _) = data::split(&full, cfg.data.train_fraction, cfg.data.split_seed)?;
    let lambdas = flags.lambda_grid.clone().unwrap_or_else(|| vec![cfg.regularizer.lambda]);
    let kind = cfg.regularizer.kind;
    let mut diverged = Vec::new();
    for lambda in lambdas {
        let spec = RegularizerSpec::new(kind, lambda)?;
        let stem = format!("finetune-{}-l{}", kind.as_str(), lambda);
        let t = Instant::now();
        match train::finetune(&base, &train_set, spec, &cfg.finetune) {
            Ok(out) => {
                session.write(&format!("{stem}.rrlnet"), &weight_bytes(&out.net)?)?;
                session.write(
                    &format!("{stem}-trace.csv"),
                    &table_bytes(train::TRACE_SCHEMA, &train::TRACE_HEADER, &out.trace)?,
                )?;
                println!("{stem}: final objective {:.6}", out.trace.last().map_or(f64::NAN, |r| r.objective));
            }
            Err(Error::Divergence { epoch, loss }) => {
                eprintln!("{stem}: diverged at epoch {epoch} (loss {loss})");
                diverged.push(train::DivergenceRow {
                    model_id: stem.clone(),
                    seed: cfg.finetune.seed,
                    reg_kind: kind.as_str().into(),
                    lambda,
                    epoch,
                    loss,
                });
            }
            Err(e) => return Err(e),
        }
        session.time(&stem, t);
    }
    if diverged.is_empty() {
        Ok(Outcome::Ok)
    } else {
        session.write(
            "divergences.csv",
            &table_bytes(train::DIVERGENCE_SCHEMA, &train::DIVERGENCE_HEADER, &diverged)?,
        )?;
        Ok(Outcome::Diverged)
    }
}

fn cmd_sweep(session: &mut Session, cfg: &RunConfig) -> Result<Outcome> {
    let t = Instant::now();
    let (full, sums) = load_dataset(&cfg.data.source)?;
    session.manifest.data_checksums.extend(sums);
    let (train_set, test_set) = data::split(&full, cfg.data.train_fraction, cfg.data.split_seed)?;
    session.time("load", t);
    let t = Instant::now();
    let result = train::sweep(&cfg.sweep_config(), &train_set, &test_set)?;
    session.time("sweep", t);

    for (seed, net, trace) in &result.baselines {
        session.write(&format!("weights/baseline-s{seed}.rrlnet"), &weight_bytes(net)?)?;
        session.write(
            &format!("traces/baseline-s{seed}.csv"),
            &table_bytes(train::TRACE_SCHEMA, &train::TRACE_HEADER, trace)?,
        )?;
    }
    let mut certs: Vec<CertificateRow> = Vec::new();
    for run in &result.runs {
        if let RunStatus::Completed { net, certificates, .. } = &run.status {
            if run.lambda > 0.0 {
                session.write(&format!("weights/{}.rrlnet", run.model_id), &weight_bytes(net)?)?;
                session.write(
                    &format!("traces/{}.csv", run.model_id),
                    &table_bytes::<EpochRecord>(train::TRACE_SCHEMA, &train::TRACE_HEADER, &run.trace)?,
                )?;
            }
            let tag = |mut r: CertificateRow| {
                r.sample_id = format!("{}/{}", run.model_id, r.sample_id);
                r
            };
            let summary = certify::summary_rows(certificates);
            certs.extend(certificates.iter().cloned().map(tag));
            certs.extend(summary.into_iter().map(tag));
        }
    }
    let metrics: Vec<MetricsRow> = result.metrics_rows();
    session.write(
        "metrics.csv",
        &table_bytes(attack::METRICS_SCHEMA, &attack::METRICS_HEADER, &metrics)?,
    )?;
    let averaged = result.averaged_rows();
    session.write(
        "averages.csv",
        &table_bytes(train::AVERAGED_SCHEMA, &train::AVERAGED_HEADER, &averaged)?,
    )?;
    session.write(
        "divergences.csv",
        &table_bytes(train::DIVERGENCE_SCHEMA, &train::DIVERGENCE_HEADER, &result.divergences())?,
    )?;
    let mut buf = Vec::new();
    write_table(&mut buf, certify::CERTIFICATE_SCHEMA, &certify::CERTIFICATE_HEADER, &certs)?;
    session.write("certificates.csv", &buf)?;
    for (stem, chart) in plot::sweep_charts(&averaged) {
        session.write(&format!("plots/{stem}.svg"), chart.render().as_bytes())?;
    }
    println!(
        "{} runs, {} metric rows, {} divergent",
        result.runs.len(),
        metrics.len(),
        result.divergences().len()
    );
    Ok(Outcome::Ok)
}

fn cmd_certify(session: &mut Session, cfg: &RunConfig, flags: &Flags) -> Result<Outcome> {
    let weights = flags
        .weights
        .as_ref()
        .ok_or_else(|| Error::Config("certify needs --weights".into()))?;
    let net = load_network(weights)?;
    let eval = evaluation_set(session, cfg, flags)?;
    let eps = cfg.certify_epsilon;
    let t = Instant::now();
    let rows: Vec<CertificateRow> = if eval.is_empty() {
        Vec::new()
    } else {
        certify::certify_batch(&net, eval.inputs.view(), &eval.labels, eps)?
            .iter()
            .enumerate()
            .map(|(i, c)| CertificateRow::from_certification(i, c, eps))
            .collect()
    };
    session.time("certify", t);
    let mut buf = Vec::new();
    certify::write_certificates(&rows, &mut buf)?;
    session.write("certificates.csv", &buf)?;
    let certified = rows.iter().filter(|r| r.status == "certified").count();
    println!("{certified} of {} samples certified", rows.len());
    Ok(Outcome::Ok)
}

fn cmd_attack(session: &mut Session, cfg: &RunConfig, flags: &Flags) -> Result<Outcome> {
    let weights = flags
        .weights
        .as_ref()
        .ok_or_else(|| Error::Config("attack needs --weights".into()))?;
    let net = load_network(weights)?;
    let mut eval = evaluation_set(session, cfg, flags)?;
    if cfg.sweep.eval_samples > 0 {
        eval = eval.head(cfg.sweep.eval_samples);
    }
    let a = cfg
        .attacks
        .first()
        .copied()
        .ok_or_else(|| Error::Config("no attack configured".into()))?;
    let t = Instant::now();
    let (m, samples) = attack::evaluate(&net, &eval, &a)?;
    session.time("attack", t);
    let model_id = weights.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let row = MetricsRow {
        model_id,
        seed: cfg.train.seed,
        reg_kind: "none".into(),
        lambda: 0.0,
        attack: a.kind,
        epsilon: if a.kind.is_budgeted() { a.epsilon } else { 0.0 },
        clean_acc: m.clean_acc,
        robust_acc: m.robust_acc,
        mean_min_l2: m.mean_min_l2,
        median_min_l2: m.median_min_l2,
        n_samples: m.n_samples,
    };
    session.write(
        "metrics.csv",
        &table_bytes(attack::METRICS_SCHEMA, &attack::METRICS_HEADER, &[row])?,
    )?;
    session.write(
        "samples.csv",
        &table_bytes(attack::SAMPLES_SCHEMA, &attack::SAMPLES_HEADER, &samples)?,
    )?;
    println!(
        "{}: clean {:.4}, robust {:.4}, mean l2 {}",
        a.kind,
        m.clean_acc,
        m.robust_acc,
        m.mean_min_l2.map_or("n/a".into(), |v| format!("{v:.4}"))
    );
    Ok(Outcome::Ok)
}

fn cmd_verify(session: &mut Session, flags: &Flags) -> Result<Outcome> {
    let mutation = match std::env::var(verify::MUTATION_ENV) {
        Ok(s) if !s.is_empty() => Some(s.parse::<Mutation>()?),
        _ => None,
    };
    let vc = VerifyConfig {
        seed: flags.seed.unwrap_or(0),
        mutation,
        ..VerifyConfig::default()
    };
    let mut rows = Vec::new();
    for suite in verify::SUITES {
        let t = Instant::now();
        let r = verify::run_suite(suite, &vc)?;
        session.time(suite, t);
        let (n, failed) = verify::summarize(&r);
        println!("{suite}: {n} rows, {failed} failed");
        rows.extend(r);
    }
    let mut buf = Vec::new();
    verify::write_report(&rows, &mut buf)?;
    session.write("oracle_report.csv", &buf)?;
    let failed: Vec<_> = rows.iter().filter(|r| !r.pass).collect();
    for r in failed.iter().take(50) {
        eprintln!(
            "FAIL {} {} fixture {}: analytic {} oracle {} error {:e} > {:e}",
            r.suite, r.quantity, r.fixture, r.analytic, r.oracle, r.rel_error, r.tolerance
        );
    }
    Ok(if failed.is_empty() {
        Outcome::Ok
    } else {
        Outcome::VerificationFailed
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text, Path::new(".")).unwrap(), cfg);
    }

    #[test]
    fn bad_json_is_a_config_error() {
        let e = RunConfig::from_json("{\n  \"model\": [", Path::new(".")).unwrap_err();
        assert_eq!(exit_code(&e), EXIT_CONFIG);
        assert!(e.to_string().contains("line 2"), "{e}");
    }

    #[test]
    fn relative_idx_paths_resolve_against_config_dir() {
        let cfg = RunConfig::from_json(
            r#"{"data": {"source": {"kind": "idx", "images": "a.idx", "labels": "b.idx"}}}"#,
            Path::new("/cfg"),
        )
        .unwrap();
        assert_eq!(
            cfg.data.source,
            DataSource::Idx {
                images: "/cfg/a.idx".into(),
                labels: "/cfg/b.idx".into(),
                digits: None,
                max_samples: None
            }
        );
    }
}
