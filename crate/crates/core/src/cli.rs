//! Command-line front end. `run` takes raw arguments so tests can drive it
//! without spawning a process.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::dataset::{load_all, load_examples, FeatureSource};
use crate::error::{Error, Result};
use crate::features::{extract, FeatureConfig, StftConfig};
use crate::loss::LossConfig;
use crate::metrics::{evaluate, evaluate_examples};
use crate::net::{forward, grad_check_biased, GradCheckCase, ModelDims, DEFAULT_FGB};
use crate::optim::{
    curve_csv, learning_curve_examples, load_checkpoint, save_checkpoint, train, train_examples, TrainConfig,
};
use crate::signal::{build_corpus, read_wav, Condition, Corpus, CorpusManifest, Split, SynthConfig};
use crate::util::write_atomic;

/// Maximum relative error accepted by `gradcheck`.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "qualitynet", version, about = "Non-intrusive speech quality assessment")]
pub struct Cli {
    /// key=value file supplying defaults for the subcommand's flags
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the synthetic clean/noisy/enhanced corpus
    Synth(SynthArgs),
    /// Precompute magnitude features into a cache directory
    Featurize(FeaturizeArgs),
    /// Train a model and write a checkpoint plus per-epoch history
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest
    Eval(EvalArgs),
    /// Score one WAV file
    Score(ScoreArgs),
    /// Compare analytic and finite-difference gradients on random small models
    Gradcheck(GradcheckArgs),
    /// Test metrics as a function of training-set size
    LearningCurve(CurveArgs),
    /// Train with and without the frame-level constraint and compare
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub train: usize,
    #[arg(long, default_value_t = 100)]
    pub val: usize,
    #[arg(long, default_value_t = 100)]
    pub test: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Shortest clean utterance in seconds
    #[arg(long, default_value_t = 1.5)]
    pub min_dur: f64,
    /// Longest clean utterance in seconds
    #[arg(long, default_value_t = 3.0)]
    pub max_dur: f64,
}

#[derive(Debug, Args, Clone)]
pub struct FeatureArgs {
    /// Compress magnitudes with ln(1 + x)
    #[arg(long)]
    pub log1p: bool,
    /// Directory for cached magnitude features
    #[arg(long, value_name = "DIR")]
    pub cache: Option<PathBuf>,
}

impl FeatureArgs {
    fn source(&self) -> FeatureSource {
        let src = FeatureSource::new(FeatureConfig {
            stft: StftConfig::default(),
            log1p: self.log1p,
        });
        match &self.cache {
            Some(dir) => src.with_cache(dir),
            None => src,
        }
    }
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct FeaturizeArgs {
    /// Corpus directory holding train.csv, val.csv and test.csv
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub cache: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct HyperArgs {
    #[arg(long, default_value_t = 15)]
    pub epochs: usize,
    #[arg(long, default_value_t = 3)]
    pub patience: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub rho: f64,
    #[arg(long, default_value_t = 1e-7)]
    pub eps: f64,
    #[arg(long, default_value_t = 5.0)]
    pub clip_norm: f64,
    /// Seeds both initialization and shuffling
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Initial forget-gate bias
    #[arg(long, default_value_t = DEFAULT_FGB, allow_hyphen_values = true)]
    pub fgb: f64,
    /// Drop the frame-level term (alpha = 0)
    #[arg(long)]
    pub no_frame_constraint: bool,
    /// Divide the frame-level term by the number of frames
    #[arg(long)]
    pub frame_term_mean: bool,
    /// LSTM units per direction
    #[arg(long, default_value_t = 100)]
    pub hidden: usize,
}

impl HyperArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            max_epochs: self.epochs,
            patience: self.patience,
            lr: self.lr,
            rho: self.rho,
            eps: self.eps,
            clip_norm: self.clip_norm,
            shuffle_seed: self.seed,
            init_seed: self.seed,
            fgb: self.fgb,
            alpha_enabled: !self.no_frame_constraint,
            frame_term_mean: self.frame_term_mean,
            dims: ModelDims {
                input: StftConfig::default().bins(),
                hidden: self.hidden,
            },
        }
    }
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    /// Training manifest CSV
    #[arg(long)]
    pub manifest: PathBuf,
    /// Validation manifest CSV
    #[arg(long)]
    pub val: PathBuf,
    /// Checkpoint path
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch history CSV (default: checkpoint path with .history.csv)
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub features: FeatureArgs,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Clamp predictions to [1.0, 4.5]
    #[arg(long)]
    pub clamp: bool,
    /// Summary JSON path (default: stdout only)
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Per-utterance CSV path
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub features: FeatureArgs,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct ScoreArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub wav: PathBuf,
    /// Write `frame_index,q_t` rows here
    #[arg(long)]
    pub frames_out: Option<PathBuf>,
    #[arg(long)]
    pub log1p: bool,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 12)]
    pub trials: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    /// Added to every analytic gradient (negative control)
    #[arg(long, hide = true, default_value_t = 0.0, allow_hyphen_values = true)]
    pub perturb: f64,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct CurveArgs {
    /// Corpus directory holding train.csv, val.csv and test.csv
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "25,100,500")]
    pub sizes: Vec<usize>,
    /// Output CSV
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub features: FeatureArgs,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct AblateArgs {
    /// Corpus directory holding train.csv, val.csv and test.csv
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output CSV
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub features: FeatureArgs,
}

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Completed but a tolerance gate failed.
    GateFailed,
}

/// Reads a key=value file into `--key=value` arguments. Blank lines and `#`
/// comments are skipped; `key = true` becomes a bare `--key` and `false` drops it.
pub fn config_args(text: &str, subcommand: &str) -> Result<Vec<OsString>> {
    let root = Cli::command();
    let sub = root
        .find_subcommand(subcommand)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown subcommand {subcommand:?}")))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("config line {}: expected key=value", n + 1)))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| Error::InvalidConfig(format!("config line {}: unknown key {key:?}", n + 1)))?;
        if arg.get_action().takes_values() {
            out.push(format!("--{key}={value}").into());
        } else {
            match value {
                "true" => out.push(format!("--{key}").into()),
                "false" => {}
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "config line {}: {key} expects true or false",
                        n + 1
                    )))
                }
            }
        }
    }
    Ok(out)
}

/// Splices config-file arguments in right after the subcommand name so that
/// flags given on the command line (which come later) win.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut rest = Vec::with_capacity(args.len());
    let mut config = None;
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        match a.to_str() {
            Some("--config") => {
                config = Some(PathBuf::from(
                    it.next().ok_or_else(|| Error::InvalidConfig("--config needs a path".into()))?,
                ))
            }
            Some(s) if s.starts_with("--config=") => config = Some(PathBuf::from(&s["--config=".len()..])),
            _ => rest.push(a),
        }
    }
    let Some(path) = config else { return Ok(rest) };
    let Some(pos) = rest.iter().skip(1).position(|a| !a.to_string_lossy().starts_with('-')) else {
        return Ok(rest);
    };
    let pos = pos + 1;
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let extra = config_args(&text, &rest[pos].to_string_lossy())?;
    rest.splice(pos + 1..pos + 1, extra);
    Ok(rest)
}

/// Why parsing stopped without producing a command.
#[derive(Debug)]
pub enum ParseStop {
    /// Help or version text was requested; print it and exit successfully.
    Info(String),
    /// Bad arguments or an unreadable config file.
    Usage(String),
}

/// Parses `args` (including the program name), honouring `--config`.
pub fn parse(args: Vec<OsString>) -> std::result::Result<Cli, ParseStop> {
    let args = expand_config(args).map_err(|e| ParseStop::Usage(format!("error: {e}\n")))?;
    Cli::try_parse_from(args).map_err(|e| {
        let text = e.render().to_string();
        match e.kind() {
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ParseStop::Info(text),
            _ => ParseStop::Usage(text),
        }
    })
}

fn manifest(path: &Path, split: Split) -> Result<CorpusManifest> {
    CorpusManifest::load(path, split)
}

fn default_history_path(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".history.csv");
    PathBuf::from(s)
}

/// Runs a parsed command, writing human-readable output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<Outcome> {
    let w = |out: &mut dyn Write, s: String| writeln!(out, "{s}").map_err(|e| Error::io("<stdout>", e));
    match cli.command {
        Command::Synth(a) => {
            let cfg = SynthConfig {
                n_train: a.train,
                n_val: a.val,
                n_test: a.test,
                duration_s: (a.min_dur, a.max_dur),
                master_seed: a.seed,
                ..Default::default()
            };
            let corpus = build_corpus(&cfg, &a.out)?;
            for split in Split::ALL {
                let m = corpus.split(split);
                let count = |c| m.entries.iter().filter(|e| e.condition == c).count();
                w(
                    out,
                    format!(
                        "{}: {} rows (clean {}, noisy {}, enhanced {})",
                        Corpus::manifest_path(&a.out, split).display(),
                        m.len(),
                        count(Condition::Clean),
                        count(Condition::Noisy),
                        count(Condition::Enhanced)
                    ),
                )?;
            }
        }
        Command::Featurize(a) => {
            let corpus = Corpus::load(&a.corpus)?;
            let source = FeatureSource::new(FeatureConfig::default()).with_cache(&a.cache);
            for split in Split::ALL {
                let m = corpus.split(split);
                let failures = load_examples(m, &source).into_iter().filter(|r| r.is_err()).count();
                w(out, format!("{split}: cached {} of {}", m.len() - failures, m.len()))?;
                if failures > 0 {
                    return Err(Error::InvalidAudio(format!("{failures} {split} entries could not be featurized")));
                }
            }
        }
        Command::Train(a) => {
            let cfg = a.hyper.config();
            let train_m = manifest(&a.manifest, Split::Train)?;
            let val_m = manifest(&a.val, Split::Val)?;
            let start = Instant::now();
            let (params, history) = train(&train_m, &val_m, &a.features.source(), &cfg)?;
            save_checkpoint(&params, &a.out)?;
            let hist_path = a.history.unwrap_or_else(|| default_history_path(&a.out));
            history.save(&hist_path)?;
            for e in &history.epochs {
                w(
                    out,
                    format!(
                        "epoch {:2}  train_loss {:.4}  val_mse {:.4}  val_lcc {:.4}  val_srcc {:.4}",
                        e.epoch, e.train_loss, e.val_mse, e.val_lcc, e.val_srcc
                    ),
                )?;
            }
            w(
                out,
                format!(
                    "best epoch {} -> {} ({:.1} s); history {}",
                    history.best_epoch,
                    a.out.display(),
                    start.elapsed().as_secs_f64(),
                    hist_path.display()
                ),
            )?;
        }
        Command::Eval(a) => {
            let params = load_checkpoint(&a.model)?;
            let m = manifest(&a.manifest, Split::Test)?;
            let report = evaluate(&params, &m, &a.features.source(), a.clamp)?;
            let json = report.to_json()?;
            if let Some(p) = &a.json {
                write_atomic(p, json.as_bytes())?;
            }
            if let Some(p) = &a.csv {
                write_atomic(p, &report.rows_csv()?)?;
            }
            w(out, json)?;
            if let Some(e) = &report.correlation_error {
                log::warn!("correlations not reported: {e}");
            }
        }
        Command::Score(a) => {
            let params = load_checkpoint(&a.model)?;
            let clip = read_wav(&a.wav)?;
            let spec = extract(
                &clip,
                &FeatureConfig {
                    stft: StftConfig::default(),
                    log1p: a.log1p,
                },
            )?;
            let (result, _) = forward(&spec, &params)?;
            if let Some(p) = &a.frames_out {
                let mut csv = csv::Writer::from_writer(Vec::new());
                csv.write_record(["frame_index", "q_t"])?;
                for (t, q) in result.frame_scores().iter().enumerate() {
                    csv.write_record([t.to_string(), format!("{q:.6}")])?;
                }
                write_atomic(p, &csv.into_inner().map_err(|e| Error::Manifest(e.to_string()))?)?;
            }
            w(out, format!("{:.6}", result.utterance_score()))?;
        }
        Command::Gradcheck(a) => {
            let worst = run_gradcheck(a.seed, a.trials, a.eps, a.perturb, out)?;
            let ok = worst < GRADCHECK_TOLERANCE;
            w(
                out,
                format!(
                    "max relative error {worst:.3e} ({} tolerance {GRADCHECK_TOLERANCE:.0e})",
                    if ok { "within" } else { "EXCEEDS" }
                ),
            )?;
            return Ok(if ok { Outcome::Success } else { Outcome::GateFailed });
        }
        Command::LearningCurve(a) => {
            let corpus = Corpus::load(&a.corpus)?;
            let source = a.features.source();
            let points = learning_curve_examples(
                &load_all(&corpus.train, &source)?,
                &load_all(&corpus.val, &source)?,
                &load_all(&corpus.test, &source)?,
                &a.sizes,
                &a.hyper.config(),
            )?;
            let csv = curve_csv(&points)?;
            write_atomic(&a.out, &csv)?;
            w(out, String::from_utf8_lossy(&csv).trim_end().to_string())?;
        }
        Command::Ablate(a) => {
            let corpus = Corpus::load(&a.corpus)?;
            let source = a.features.source();
            let train_x = load_all(&corpus.train, &source)?;
            let val_x = load_all(&corpus.val, &source)?;
            let test_x = load_all(&corpus.test, &source)?;
            let mut csv = csv::Writer::from_writer(Vec::new());
            csv.write_record(["arm", "mse", "lcc", "srcc", "clean_frame_variance"])?;
            for (arm, alpha) in [("with_constraint", true), ("without_constraint", false)] {
                let cfg = TrainConfig {
                    alpha_enabled: alpha,
                    ..a.hyper.config()
                };
                let (params, _) = train_examples(&train_x, &val_x, &cfg)?;
                let r = evaluate_examples(&params, &test_x, false)?;
                let fmt = |v: Option<f64>| v.map_or("nan".to_string(), |v| format!("{v:.6}"));
                csv.write_record([
                    arm.to_string(),
                    format!("{:.6}", r.mse),
                    fmt(r.lcc),
                    fmt(r.srcc),
                    fmt(r.clean_frame_variance),
                ])?;
            }
            let bytes = csv.into_inner().map_err(|e| Error::Manifest(e.to_string()))?;
            write_atomic(&a.out, &bytes)?;
            w(out, String::from_utf8_lossy(&bytes).trim_end().to_string())?;
        }
    }
    Ok(Outcome::Success)
}

/// Small configurations cycled through by `gradcheck`: H in {2,3,5}, T in
/// {1,2,7}, F in {3,4}.
pub fn gradcheck_shape(trial: usize) -> (ModelDims, usize) {
    const H: [usize; 3] = [2, 3, 5];
    const T: [usize; 3] = [1, 2, 7];
    const F: [usize; 2] = [3, 4];
    let dims = ModelDims {
        input: F[trial % 2],
        hidden: H[trial % 3],
    };
    (dims, T[(trial / 3) % 3])
}

/// Runs `trials` random gradient checks and returns the worst error.
pub fn run_gradcheck(seed: u64, trials: usize, eps: f64, perturb: f64, out: &mut dyn Write) -> Result<f64> {
    if trials == 0 {
        return Err(Error::InvalidConfig("--trials must be at least 1".into()));
    }
    let cfg = LossConfig::default();
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let (dims, frames) = gradcheck_shape(trial);
        let case = GradCheckCase::random(dims, frames, crate::util::mix_seed(seed, trial as u64))?;
        let err = grad_check_biased(&case.params, &case.spec, &case.label, eps, &cfg, perturb)?;
        writeln!(
            out,
            "trial {trial:2}: F={} H={} T={}  max rel err {err:.3e}",
            dims.input, dims.hidden, frames
        )
        .map_err(|e| Error::io("<stdout>", e))?;
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Process entry point: parses `std::env::args`, configures logging and the
/// worker pool, runs the command and maps the outcome to an exit code.
pub fn main_entry() -> std::process::ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Some(n) = std::env::var("QNET_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = match parse(std::env::args_os().collect()) {
        Ok(c) => c,
        Err(ParseStop::Info(text)) => {
            print!("{text}");
            return std::process::ExitCode::SUCCESS;
        }
        Err(ParseStop::Usage(text)) => {
            eprint!("{text}");
            return std::process::ExitCode::from(2);
        }
    };
    let mut stdout = std::io::stdout().lock();
    match run(cli, &mut stdout) {
        Ok(Outcome::Success) => std::process::ExitCode::SUCCESS,
        Ok(Outcome::GateFailed) => std::process::ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::ExitCode::from(1)
        }
    }
}
