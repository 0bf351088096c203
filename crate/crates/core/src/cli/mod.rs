//! `qvit` command-line driver.

pub mod config;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use thiserror::Error;

use crate::bench::bench_qnn;
use crate::data::{
    self, load_medmnist, load_npz_splits, normalize_to_angles, parse_npz, synthetic_dataset, AngleRange, DataError,
    Interpolation, SplitName, Splits, SyntheticOptions,
};
use crate::model::{checkpoint, count_parameters, Model, ModelConfig, ModelError};
use crate::train::{
    evaluate, kd_direct_logits, kd_pretrain, train_loop, train_teacher, transfer_head, KdConfig, Metrics,
    TeacherBundle, TrainError,
};

pub use config::{KdMode, RunConfig};

/// `println!` that tolerates a closed stdout (e.g. piped into `head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

pub const DATA_ROOT_ENV: &str = "QVIT_DATA_ROOT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error: {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("data error: {0}")]
    Data(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    /// 2 config, 3 I/O, 4 data (including corrupt checkpoints and bundles),
    /// 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Data(_) => 4,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(m) => CliError::Config(m),
            ModelError::Io(e) => CliError::Io { path: PathBuf::new(), source: e },
            ModelError::Format(_) | ModelError::ParamShape { .. } | ModelError::UnknownParam(_) => {
                CliError::Data(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io(e) => CliError::Io { path: PathBuf::new(), source: e },
            DataError::UnknownDataset(_) => CliError::Config(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(m) => m.into(),
            TrainError::Data(d) => d.into(),
            TrainError::Io(e) => CliError::Io { path: PathBuf::new(), source: e },
            TrainError::Width { .. } => CliError::Config(e.to_string()),
            TrainError::Format(_) => CliError::Data(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "qvit", version, about = "Quantum self-attention vision transformers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model from scratch.
    Train(RunArgs),
    /// Distil from a teacher, then fine-tune.
    Distill(DistillArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// QNN simulator throughput.
    Bench(BenchArgs),
    /// Parameter-count breakdown for a model.
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AngleArg {
    Pi,
    TwoPi,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum InterpArg {
    Nearest,
    Bilinear,
}

#[derive(Args, Debug, Clone, Default)]
pub struct RunArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `synthetic`, a MedMNIST name (e.g. `retinamnist`) or a path to an `.npz`.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Directory holding `<name>.npz` MedMNIST files.
    #[arg(long, env = DATA_ROOT_ENV)]
    pub data_root: Option<PathBuf>,
    /// Model preset: vit4_28, qvit4_28, vit4_224, qvit4_224, vit8_224, qvit8_224.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub angle_range: Option<AngleArg>,
    #[arg(long, value_enum)]
    pub interpolation: Option<InterpArg>,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub residual: Option<bool>,
    #[arg(long)]
    pub layer_norm: Option<bool>,
    /// Classes of the synthetic dataset.
    #[arg(long)]
    pub n_classes: Option<usize>,
    #[arg(long)]
    pub n_per_class: Option<usize>,
    #[arg(long)]
    pub separability: Option<f64>,
    /// Parent directory for run outputs.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub tag: Option<String>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct DistillArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum)]
    pub kd_mode: Option<KdMode>,
    #[arg(long)]
    pub kd_epochs: Option<usize>,
    /// Teacher bundle (`QKD1`) to distil from instead of training a teacher.
    #[arg(long)]
    pub teacher_bundle: Option<PathBuf>,
    #[arg(long)]
    pub teacher_epochs: Option<usize>,
    #[arg(long)]
    pub finetune_epochs: Option<usize>,
    /// Match post-ReLU activations.
    #[arg(long)]
    pub match_relu: bool,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: SplitName,
    /// Write metrics JSON here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Args, Debug, Clone)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = vec![4usize, 8])]
    pub qubits: Vec<usize>,
    #[arg(long, default_value_t = 500)]
    pub min_time_ms: u64,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct InspectArgs {
    #[arg(long, default_value = "qvit4_28")]
    pub model: String,
    #[arg(long, default_value_t = 3)]
    pub in_channels: usize,
    #[arg(long, default_value_t = 5)]
    pub n_classes: usize,
    #[arg(long)]
    pub json: bool,
}

/// Defaults, then `--config`, then explicit flags.
pub fn resolve_config(args: &RunArgs, base: Option<RunConfig>) -> Result<RunConfig> {
    let mut c = match (&args.config, base) {
        (Some(path), _) => RunConfig::from_file(path)?,
        (None, Some(b)) => b,
        (None, None) => RunConfig::default(),
    };
    macro_rules! set {
        ($field:expr, $value:expr) => {
            if let Some(v) = $value.clone() {
                $field = v;
            }
        };
    }
    set!(c.data.dataset, args.dataset);
    if args.data_root.is_some() {
        c.data.root = args.data_root.clone();
    }
    set!(c.model.preset, args.model);
    set!(c.seed, args.seed);
    set!(c.train.epochs, args.epochs);
    set!(c.train.batch_size, args.batch_size);
    set!(c.train.lr, args.lr);
    if let Some(a) = args.angle_range {
        c.data.angle_range = match a {
            AngleArg::Pi => AngleRange::Pi,
            AngleArg::TwoPi => AngleRange::TwoPi,
        };
    }
    if let Some(i) = args.interpolation {
        c.data.interpolation = match i {
            InterpArg::Nearest => Interpolation::Nearest,
            InterpArg::Bilinear => Interpolation::Bilinear,
        };
    }
    if args.image_size.is_some() {
        c.model.image_size = args.image_size;
    }
    if args.patch_size.is_some() {
        c.model.patch_size = args.patch_size;
    }
    if args.depth.is_some() {
        c.model.depth = args.depth;
    }
    if args.residual.is_some() {
        c.model.residual = args.residual;
    }
    if args.layer_norm.is_some() {
        c.model.layer_norm = args.layer_norm;
    }
    set!(c.data.synthetic.n_classes, args.n_classes);
    set!(c.data.synthetic.n_per_class, args.n_per_class);
    set!(c.data.synthetic.separability, args.separability);
    set!(c.out_dir, args.out_dir);
    if args.tag.is_some() {
        c.tag = args.tag.clone();
    }
    if args.threads.is_some() {
        c.threads = args.threads;
    }
    if c.train.batch_size == 0 {
        return Err(CliError::Config("batch_size must be positive".into()));
    }
    Ok(c)
}

/// Loads the configured dataset, resizes it to `image_size` if needed and
/// maps pixels to angles.
pub fn prepare_splits(cfg: &RunConfig, image_size: usize) -> Result<Splits> {
    let d = &cfg.data;
    let raw = if d.dataset == "synthetic" {
        let s = &d.synthetic;
        synthetic_dataset(&SyntheticOptions {
            seed: cfg.seed,
            n_classes: s.n_classes,
            n_per_class: s.n_per_class,
            image_size: s.image_size.unwrap_or(image_size),
            channels: s.channels,
            separability: s.separability,
        })?
    } else if d.dataset.ends_with(".npz") {
        let path = Path::new(&d.dataset);
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        load_npz_splits(&parse_npz(&bytes)?, None)?
    } else {
        let root = d.root.clone().ok_or_else(|| {
            CliError::Config(format!("dataset {} needs --data-root or {DATA_ROOT_ENV}", d.dataset))
        })?;
        if data::medmnist::info(&d.dataset).is_none() {
            return Err(CliError::Config(format!("unknown dataset {:?}", d.dataset)));
        }
        let file = root.join(format!("{}.npz", d.dataset));
        if !file.exists() {
            return Err(CliError::io(&file, std::io::Error::new(std::io::ErrorKind::NotFound, "dataset file not found")));
        }
        load_medmnist(&root, &d.dataset)?
    };
    let interp = d.interpolation;
    let range = d.angle_range;
    Ok(raw.map(|s| normalize_to_angles(&data::resize(&s, image_size, interp), range))?)
}

fn model_config_for(cfg: &RunConfig, splits: &Splits) -> Result<ModelConfig> {
    cfg.model.resolve(splits.train.channels, splits.train.n_classes)
}

fn init_threads(threads: Option<usize>) {
    if let Some(t) = threads {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global();
    }
}

/// Creates `<out_dir>/<timestamp>-<tag>/`.
fn make_run_dir(cfg: &RunConfig, command: &str) -> Result<PathBuf> {
    let tag = cfg
        .tag
        .clone()
        .unwrap_or_else(|| format!("{command}-{}-{}-s{}", cfg.model.preset, dataset_label(&cfg.data.dataset), cfg.seed));
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    let mut dir = cfg.out_dir.join(format!("{stamp}-{tag}"));
    let mut k = 1;
    while dir.exists() {
        dir = cfg.out_dir.join(format!("{stamp}-{tag}-{k}"));
        k += 1;
    }
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    Ok(dir)
}

fn dataset_label(d: &str) -> String {
    Path::new(d).file_stem().map_or_else(|| d.to_string(), |s| s.to_string_lossy().into_owned())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn report_line(label: &str, m: &Metrics) -> String {
    format!("{label}: ACC {:.4} AUC {:.4} loss {:.4} (n={})", m.accuracy, m.auc, m.loss, m.n_samples)
}

pub fn cmd_train(args: &RunArgs) -> Result<PathBuf> {
    let cfg = resolve_config(args, None)?;
    init_threads(cfg.threads);
    // geometry errors surface before any data is touched
    let probe = cfg.model.resolve(1, 2)?;
    let splits = prepare_splits(&cfg, probe.image_size)?;
    let model_cfg = model_config_for(&cfg, &splits)?;
    let dir = make_run_dir(&cfg, "train")?;
    write_file(&dir.join("config.toml"), cfg.to_toml())?;

    let start = Instant::now();
    let model = Model::init(model_cfg, cfg.seed)?;
    let n_params = model.n_parameters();
    log::info!("training {} ({n_params} parameters) on {}", cfg.model.preset, cfg.data.dataset);
    let out = train_loop(model, &splits, &cfg.train.to_train_config(cfg.seed))?;

    checkpoint::save(&out.model, &dir.join("checkpoint.qvit"))?;
    write_file(&dir.join("metrics.csv"), out.history.to_csv())?;
    let summary = json!({
        "command": "train",
        "model": cfg.model.preset,
        "dataset": cfg.data.dataset,
        "seed": cfg.seed,
        "n_parameters": n_params,
        "best_epoch": out.best_epoch,
        "test": out.test,
        "elapsed_secs": start.elapsed().as_secs_f64(),
    });
    write_file(&dir.join("summary.json"), serde_json::to_string_pretty(&summary).expect("json"))?;
    say!("{}", report_line("test", &out.test));
    say!("run directory: {}", dir.display());
    Ok(dir)
}

pub fn cmd_distill(args: &DistillArgs) -> Result<PathBuf> {
    let mut cfg = resolve_config(&args.run, None)?;
    if let Some(m) = args.kd_mode {
        cfg.kd.mode = m;
    }
    if let Some(e) = args.kd_epochs {
        cfg.kd.epochs = e;
    }
    if args.teacher_bundle.is_some() {
        cfg.kd.bundle = args.teacher_bundle.clone();
    }
    if let Some(e) = args.teacher_epochs {
        cfg.kd.teacher.epochs = e;
    }
    if args.finetune_epochs.is_some() {
        cfg.kd.finetune_epochs = args.finetune_epochs;
    }
    cfg.kd.match_relu |= args.match_relu;
    init_threads(cfg.threads);

    let probe = cfg.model.resolve(1, 2)?;
    if let Some(b) = &cfg.kd.bundle {
        if !b.exists() {
            return Err(CliError::io(
                b,
                std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    "teacher bundle not found; pass an existing --teacher-bundle or omit it to train a teacher",
                ),
            ));
        }
    }
    let splits = prepare_splits(&cfg, probe.image_size)?;
    let student_cfg = model_config_for(&cfg, &splits)?;
    let dir = make_run_dir(&cfg, "distill")?;
    write_file(&dir.join("config.toml"), cfg.to_toml())?;
    let start = Instant::now();

    let mut summary = serde_json::Map::new();
    let bundle = match &cfg.kd.bundle {
        Some(path) => TeacherBundle::load(path)?,
        None => {
            let teacher_cfg = cfg.kd.teacher.resolve(&student_cfg)?;
            let mut tc = cfg.train.to_train_config(cfg.seed);
            tc.epochs = cfg.kd.teacher.epochs;
            tc.schedule = crate::train::StepSchedule::constant(cfg.kd.teacher.lr);
            log::info!("stage teacher: {} epochs", tc.epochs);
            let (outcome, bundle) = train_teacher(teacher_cfg, cfg.seed.wrapping_add(1), &splits, &tc)?;
            write_file(&dir.join("teacher_metrics.csv"), outcome.history.to_csv())?;
            checkpoint::save(&outcome.model, &dir.join("teacher.qvit"))?;
            bundle.save(&dir.join("teacher_bundle.qkd"))?;
            say!("{}", report_line("teacher test", &outcome.test));
            summary.insert("teacher_test".into(), serde_json::to_value(&outcome.test).expect("json"));
            bundle
        }
    };

    let student = Model::init(student_cfg, cfg.seed)?;
    let kd_cfg = KdConfig {
        epochs: cfg.kd.epochs,
        batch_size: cfg.train.batch_size,
        lr: cfg.kd.lr,
        seed: cfg.seed,
        match_relu: cfg.kd.match_relu,
    };
    log::info!("stage kd ({:?}): {} epochs", cfg.kd.mode, kd_cfg.epochs);
    let (student, losses) = match cfg.kd.mode {
        KdMode::Intermediate => {
            let (s, l) = kd_pretrain(student, &bundle, &splits.train, &kd_cfg)?;
            (transfer_head(s, &bundle)?, l)
        }
        KdMode::DirectLogits => kd_direct_logits(student, &bundle, &splits.train, &kd_cfg)?,
    };
    let mut kd_csv = String::from("epoch,mse\n");
    for (e, l) in losses.iter().enumerate() {
        kd_csv.push_str(&format!("{e},{l}\n"));
    }
    write_file(&dir.join("kd_losses.csv"), kd_csv)?;
    let after_kd = evaluate(&student, &splits.test)?;
    say!("{}", report_line("after kd test", &after_kd));

    let mut tc = cfg.train.to_train_config(cfg.seed);
    tc.epochs = cfg.kd.finetune_epochs.unwrap_or(cfg.train.epochs);
    log::info!("stage fine-tune: {} epochs", tc.epochs);
    let out = train_loop(student, &splits, &tc)?;
    checkpoint::save(&out.model, &dir.join("checkpoint.qvit"))?;
    write_file(&dir.join("metrics.csv"), out.history.to_csv())?;

    summary.insert("command".into(), json!("distill"));
    summary.insert("kd_mode".into(), serde_json::to_value(cfg.kd.mode).expect("json"));
    summary.insert("model".into(), json!(cfg.model.preset));
    summary.insert("dataset".into(), json!(cfg.data.dataset));
    summary.insert("seed".into(), json!(cfg.seed));
    summary.insert("kd_final_mse".into(), json!(losses.last()));
    summary.insert("after_kd_test".into(), serde_json::to_value(&after_kd).expect("json"));
    summary.insert("best_epoch".into(), json!(out.best_epoch));
    summary.insert("test".into(), serde_json::to_value(&out.test).expect("json"));
    summary.insert("elapsed_secs".into(), json!(start.elapsed().as_secs_f64()));
    write_file(&dir.join("summary.json"), serde_json::to_string_pretty(&summary).expect("json"))?;
    say!("{}", report_line("test", &out.test));
    say!("run directory: {}", dir.display());
    Ok(dir)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<Metrics> {
    // a checkpoint inside a run directory replays that run's data settings
    let sibling = args.checkpoint.parent().map(|p| p.join("config.toml")).filter(|p| p.exists());
    let base = match (&args.run.config, sibling) {
        (None, Some(p)) => Some(RunConfig::from_file(&p)?),
        _ => None,
    };
    let cfg = resolve_config(&args.run, base)?;
    init_threads(cfg.threads);
    let bytes = std::fs::read(&args.checkpoint).map_err(|e| CliError::io(&args.checkpoint, e))?;
    let model = checkpoint::read_checkpoint(bytes.as_slice())?;
    let splits = prepare_splits(&cfg, model.config.image_size)?;
    if splits.train.n_classes != model.config.n_classes {
        return Err(CliError::Config(format!(
            "checkpoint predicts {} classes, dataset has {}",
            model.config.n_classes, splits.train.n_classes
        )));
    }
    if splits.train.channels != model.config.in_channels {
        return Err(CliError::Config(format!(
            "checkpoint expects {} channels, dataset has {}",
            model.config.in_channels, splits.train.channels
        )));
    }
    let m = evaluate(&model, splits.get(args.split))?;
    say!("{}", report_line(args.split.as_str(), &m));
    let text = serde_json::to_string_pretty(&json!({ "split": args.split, "metrics": m })).expect("json");
    if let Some(out) = &args.out {
        write_file(out, &text)?;
    }
    say!("{text}");
    Ok(m)
}

pub fn cmd_bench(args: &BenchArgs) -> Result<Vec<crate::bench::BenchResult>> {
    init_threads(args.threads);
    let mut results = Vec::new();
    let mut out = std::io::stdout().lock();
    let _ = writeln!(
        out,
        "{:>6} {:>14} {:>14} {:>10} {:>16} {:>16} {:>8}",
        "qubits", "fwd/s", "grad/s", "grad/fwd", "par fwd/s", "par grad/s", "threads"
    );
    for &n in &args.qubits {
        if !(2..=crate::qsim::MAX_QUBITS).contains(&n) {
            return Err(CliError::Config(format!("qubit count {n} outside 2..={}", crate::qsim::MAX_QUBITS)));
        }
        let r = bench_qnn(n, Duration::from_millis(args.min_time_ms), 0);
        let _ = writeln!(
            out,
            "{:>6} {:>14.0} {:>14.0} {:>10.2} {:>16.0} {:>16.0} {:>8}",
            r.n_qubits,
            r.forward_per_sec,
            r.gradient_per_sec,
            r.gradient_cost_ratio,
            r.parallel_forward_per_sec,
            r.parallel_gradient_per_sec,
            r.threads
        );
        results.push(r);
    }
    if let Some(path) = &args.json {
        write_file(path, serde_json::to_string_pretty(&results).expect("json"))?;
    }
    Ok(results)
}

pub fn cmd_inspect(args: &InspectArgs) -> Result<()> {
    let cfg = ModelConfig::preset(&args.model, args.in_channels, args.n_classes)?;
    cfg.validate()?;
    let r = count_parameters(&cfg);
    if args.json {
        say!("{}", serde_json::to_string_pretty(&r).expect("json"));
        return Ok(());
    }
    let n = cfg.embed_dim;
    say!("{} ({}x{}x{}, patch {}, width {n}, {} classes)", args.model, cfg.in_channels, cfg.image_size, cfg.image_size, cfg.patch_size, cfg.n_classes);
    for (name, count) in &r.components {
        say!("  {name:<22} {count:>10}");
    }
    say!("  {:<22} {:>10}", "total", r.total);
    say!("attention per block:");
    say!("  {:<22} {:>10}", "classical SA (3n^2)", r.classical_sa_per_block);
    say!("  {:<22} {:>10}", "quantum SA (6n)", r.quantum_sa_per_block);
    say!(
        "  {:<22} {:>10.4}  (= 2/n = {:.4})",
        "QSA / SA",
        r.quantum_sa_per_block as f64 / r.classical_sa_per_block as f64,
        2.0 / n as f64
    );
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Distill(a) => cmd_distill(&a).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::Bench(a) => cmd_bench(&a).map(|_| ()),
        Command::Inspect(a) => cmd_inspect(&a),
    }
}
