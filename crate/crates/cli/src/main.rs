//! `fan`: train, evaluate and inspect frame attention heads.
//!
//! Machine-readable results go to standard output as JSON; progress goes
//! to standard error. Exit codes: 0 success, 1 usage, 2 data or format,
//! 3 numeric.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use fan_core::checkpoint::{read_checkpoint, write_checkpoint};
use fan_core::datastore::{
    build_folds, import_csv, load_feature_file, synth_generate, write_feature_file, SynthConfig,
};
use fan_core::evaluator::{
    cross_validate, export_attention, predict_instances, score_fusion_baseline, EvalReport,
    FrameMode, Fusion,
};
use fan_core::gradcheck::{run_gradcheck, GradCheckConfig};
use fan_core::trainer::{train, FrameSampling, Preset, TrainConfig};
use fan_core::{Dataset64, FanError, FanParams64, Mode, Result};

#[derive(Parser)]
#[command(
    name = "fan",
    version,
    args_override_self = true,
    about = "Frame attention aggregation: training, evaluation and diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a head and write a checkpoint, history and log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a feature file.
    Eval(EvalArgs),
    /// Person-independent k-fold cross-validation.
    Cv(CvArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic planted-peak feature file.
    Synth(SynthArgs),
    /// Export per-frame attention weights as CSV and JSON.
    Visualize(VisualizeArgs),
    /// Per-frame linear classifier with summed frame scores.
    Baseline(BaselineArgs),
    /// Convert a CSV frame table into a FANF feature file.
    ImportCsv(ImportCsvArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    #[value(name = "ck+")]
    CkPlus,
    Afew,
    SynthDefault,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::CkPlus => Preset::CkPlus,
            PresetArg::Afew => Preset::Afew,
            PresetArg::SynthDefault => Preset::SynthDefault,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Full,
    SelfOnly,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Full => Mode::Full,
            ModeArg::SelfOnly => Mode::SelfOnly,
        }
    }
}

#[derive(Args, Clone)]
struct TrainingFlags {
    #[arg(long, value_enum, default_value = "synth-default")]
    preset: PresetArg,
    /// Overrides the preset seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "full")]
    mode: ModeArg,
    /// Overrides the preset epoch count.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Frames sampled per training instance.
    #[arg(long)]
    k: Option<usize>,
    /// Train on every frame instead of K sampled frames.
    #[arg(long)]
    all_frames: bool,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

impl TrainingFlags {
    fn config(&self) -> TrainConfig {
        let mut c = TrainConfig::preset(self.preset.into());
        c.mode = self.mode.into();
        c.workers = self.workers;
        if let Some(seed) = self.seed {
            c.seed = seed;
        }
        if let Some(e) = self.epochs {
            c.total_epochs = e;
        }
        if let Some(b) = self.batch_size {
            c.batch_size = b;
        }
        if let Some(k) = self.k {
            c.sampling = FrameSampling::Segments(k);
        }
        if self.all_frames {
            c.sampling = FrameSampling::AllFrames;
        }
        c
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path (FANP).
    #[arg(long)]
    out: PathBuf,
    /// Epoch history as JSON; defaults to `<out>.history.json`.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Line-oriented training log; defaults to `<out>.log`.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Feature file evaluated (all frames) after every epoch.
    #[arg(long)]
    validation_data: Option<PathBuf>,
    #[command(flatten)]
    training: TrainingFlags,
}

#[derive(Clone, Copy, ValueEnum)]
enum FramesArg {
    All,
    Sampled,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    frames: FramesArg,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write per-instance predictions as JSON.
    #[arg(long)]
    dump: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args)]
struct CvArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[command(flatten)]
    training: TrainingFlags,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 24)]
    configs: usize,
    /// Restrict the feature dimension.
    #[arg(long)]
    d: Option<usize>,
    /// Restrict the frame count.
    #[arg(long)]
    n: Option<usize>,
    /// Restrict the class count.
    #[arg(long)]
    c: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, hide = true)]
    corrupt_gradient: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    videos_per_class: usize,
    #[arg(long, default_value_t = 8)]
    frames_min: usize,
    #[arg(long, default_value_t = 16)]
    frames_max: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 1)]
    peaks: usize,
    #[arg(long, default_value_t = 3.0)]
    signal: f64,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 20)]
    subjects: usize,
    #[arg(long)]
    terminal_peaks: bool,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct VisualizeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    json: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum FusionArg {
    Logits,
    Probabilities,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    data: PathBuf,
    /// Folds used to hold out test subjects.
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Fold whose subjects are the test split.
    #[arg(long, default_value_t = 0)]
    test_fold: usize,
    #[arg(long, value_enum, default_value = "logits")]
    fusion: FusionArg,
    #[command(flatten)]
    training: TrainingFlags,
}

#[derive(Args)]
struct ImportCsvArgs {
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated class names; fixes the class count.
    #[arg(long, value_delimiter = ',')]
    class_names: Option<Vec<String>>,
}

fn print_json<S: Serialize>(value: &S) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| FanError::Io(std::io::Error::other(e)))?;
    println!("{text}");
    Ok(())
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(FanError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} does not exist", path.display()),
        )))
    }
}

fn require_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            Err(FanError::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("output directory {} does not exist", dir.display()),
            )))
        }
        _ => Ok(()),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load(path: &Path) -> Result<Dataset64> {
    require_file(path)?;
    load_feature_file(path)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let history_path = args
        .history
        .clone()
        .unwrap_or_else(|| with_suffix(&args.out, ".history.json"));
    let log_path = args
        .log
        .clone()
        .unwrap_or_else(|| with_suffix(&args.out, ".log"));
    require_file(&args.data)?;
    if let Some(v) = &args.validation_data {
        require_file(v)?;
    }
    for p in [&args.out, &history_path, &log_path] {
        require_parent(p)?;
    }
    let config = args.training.config();
    config.validate()?;

    let mut data = load(&args.data)?;
    let all: Vec<usize> = (0..data.len()).collect();
    let validation = match &args.validation_data {
        Some(path) => {
            let v = load(path)?;
            if v.dim != data.dim || v.class_names != data.class_names {
                return Err(FanError::Schema(
                    "validation data does not match training data".into(),
                ));
            }
            let start = data.len();
            data.instances.extend(v.instances);
            Some((start..data.len()).collect::<Vec<_>>())
        }
        None => None,
    };
    eprintln!(
        "training {} on {} videos (D={}, C={}), {} epochs, seed {}",
        config.mode,
        all.len(),
        data.dim,
        data.classes(),
        config.total_epochs,
        config.seed
    );
    let (params, history) = train(&data, &all, &config, validation.as_deref())?;
    for e in &history.epochs {
        eprintln!("{}", e.log_line());
    }
    write_checkpoint(&params, &args.out)?;
    let history_json = serde_json::to_string_pretty(&history)
        .map_err(|e| FanError::Io(std::io::Error::other(e)))?;
    std::fs::write(&history_path, history_json + "\n")?;
    std::fs::write(&log_path, history.to_log())?;

    #[derive(Serialize)]
    struct Summary<'a> {
        checkpoint: String,
        history: String,
        log: String,
        epochs: usize,
        last: Option<&'a fan_core::trainer::EpochStats>,
    }
    print_json(&Summary {
        checkpoint: args.out.display().to_string(),
        history: history_path.display().to_string(),
        log: log_path.display().to_string(),
        epochs: history.epochs.len(),
        last: history.epochs.last(),
    })
}

fn load_compatible(data: &Path, checkpoint: &Path) -> Result<(Dataset64, FanParams64)> {
    require_file(checkpoint)?;
    let ds = load(data)?;
    let params: FanParams64 = read_checkpoint(checkpoint)?;
    if ds.dim != params.dim() || ds.classes() != params.classes() {
        return Err(FanError::Schema(format!(
            "checkpoint has D={}, C={} but data has D={}, C={}",
            params.dim(),
            params.classes(),
            ds.dim,
            ds.classes()
        )));
    }
    Ok((ds, params))
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let (ds, params) = load_compatible(&args.data, &args.checkpoint)?;
    let mode = match args.frames {
        FramesArg::All => FrameMode::AllFrames,
        FramesArg::Sampled => FrameMode::SampledK {
            k: args.k,
            seed: args.seed,
        },
    };
    let all: Vec<usize> = (0..ds.len()).collect();
    let preds = predict_instances(&params, &ds, &all, mode, args.workers)?;
    if let Some(path) = &args.dump {
        let text = serde_json::to_string_pretty(&preds)
            .map_err(|e| FanError::Io(std::io::Error::other(e)))?;
        std::fs::write(path, text + "\n")?;
    }
    let report =
        EvalReport::from_predictions(ds.classes(), preds.iter().map(|p| (p.label, p.prediction)));
    print_json(&report)
}

fn cmd_cv(args: CvArgs) -> Result<()> {
    let ds = load(&args.data)?;
    let config = args.training.config();
    config.validate()?;
    let plan = build_folds(&ds, args.folds)?;
    eprintln!(
        "cross-validating over {} folds, sizes {:?}",
        args.folds,
        plan.fold_sizes()
    );
    let report = cross_validate(&ds, &config, &plan)?;
    for f in &report.folds {
        eprintln!(
            "fold {}: {} test videos, accuracy {:.4}, disjoint {}",
            f.fold, f.test_count, f.report.accuracy, f.disjoint
        );
    }
    print_json(&report)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<bool> {
    let mut config = GradCheckConfig {
        configs: args.configs,
        seed: args.seed,
        eps: args.eps,
        tolerance: args.tol,
        corrupt: args.corrupt_gradient,
        ..GradCheckConfig::default()
    };
    if let Some(d) = args.d {
        config.dims = vec![d];
    }
    if let Some(n) = args.n {
        config.frames = vec![n];
    }
    if let Some(c) = args.c {
        config.classes = vec![c];
    }
    if config.dims.contains(&0) || config.frames.contains(&0) || config.classes.contains(&0) {
        return Err(FanError::Config("D, n and C must be positive".into()));
    }
    let cases = run_gradcheck(&config)?;
    let mut ok = true;
    for c in &cases {
        eprintln!(
            "config {:2}: D={:2} n={} C={} {:9} max rel err {:.3e} at {}",
            c.index,
            c.dim,
            c.frames,
            c.classes,
            c.mode.to_string(),
            c.max_rel_error,
            c.worst
        );
        if !c.passed() {
            ok = false;
            eprintln!("  offending: {}", c.offending.join(", "));
        }
    }
    print_json(&cases)?;
    Ok(ok)
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    require_parent(&args.out)?;
    let config = SynthConfig {
        videos_per_class: args.videos_per_class,
        frames_min: args.frames_min,
        frames_max: args.frames_max,
        dim: args.dim,
        classes: args.classes,
        peaks_per_video: args.peaks,
        signal: args.signal,
        noise: args.noise,
        subjects: args.subjects,
        terminal_peaks: args.terminal_peaks,
        seed: args.seed,
    };
    let ds: Dataset64 = synth_generate(&config)?;
    write_feature_file(&ds, &args.out)?;
    let frames: usize = ds.instances.iter().map(|i| i.frame_count()).sum();
    eprintln!(
        "wrote {} videos ({frames} frames) to {}",
        ds.len(),
        args.out.display()
    );

    #[derive(Serialize)]
    struct Summary {
        path: String,
        videos: usize,
        frames: usize,
        subjects: usize,
        config: SynthConfig,
    }
    print_json(&Summary {
        path: args.out.display().to_string(),
        videos: ds.len(),
        frames,
        subjects: ds.subjects().len(),
        config,
    })
}

fn cmd_visualize(args: VisualizeArgs) -> Result<()> {
    require_parent(&args.csv)?;
    require_parent(&args.json)?;
    let (ds, params) = load_compatible(&args.data, &args.checkpoint)?;
    let all: Vec<usize> = (0..ds.len()).collect();
    let export = export_attention(&params, &ds, &all, &args.csv, &args.json)?;
    eprintln!(
        "exported attention for {} videos to {} and {}",
        export.videos.len(),
        args.csv.display(),
        args.json.display()
    );
    Ok(())
}

fn cmd_baseline(args: BaselineArgs) -> Result<()> {
    let ds = load(&args.data)?;
    let config = args.training.config();
    let plan = build_folds(&ds, args.folds)?;
    if args.test_fold >= args.folds {
        return Err(FanError::Config(format!(
            "test fold {} out of range",
            args.test_fold
        )));
    }
    let (train_idx, test_idx) = plan.split(&ds, args.test_fold)?;
    let fusion = match args.fusion {
        FusionArg::Logits => Fusion::Logits,
        FusionArg::Probabilities => Fusion::Probabilities,
    };
    let (_, report) = score_fusion_baseline(&ds, &train_idx, &test_idx, &config, fusion)?;
    print_json(&report)
}

fn cmd_import_csv(args: ImportCsvArgs) -> Result<()> {
    require_file(&args.csv)?;
    require_parent(&args.out)?;
    let ds: Dataset64 = import_csv(&args.csv, args.class_names)?;
    write_feature_file(&ds, &args.out)?;
    eprintln!(
        "imported {} videos (D={}, C={})",
        ds.len(),
        ds.dim,
        ds.classes()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(a) => cmd_train(a).map(|_| true),
        Command::Eval(a) => cmd_eval(a).map(|_| true),
        Command::Cv(a) => cmd_cv(a).map(|_| true),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Synth(a) => cmd_synth(a).map(|_| true),
        Command::Visualize(a) => cmd_visualize(a).map(|_| true),
        Command::Baseline(a) => cmd_baseline(a).map(|_| true),
        Command::ImportCsv(a) => cmd_import_csv(a).map(|_| true),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("gradient check failed");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
