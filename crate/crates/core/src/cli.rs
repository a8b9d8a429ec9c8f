//! Command-line front end.
//!
//! Every command prints exactly one machine-readable summary line to stdout,
//! `STATUS=<ok|fail> CMD=<name> KEY=VALUE...`, and human-readable progress
//! to stderr. Exit status: 0 success, 1 usage error, 2 data or io error,
//! 3 numeric failure (non-finite loss, failed gradient check). Output files
//! are written to a temp file and renamed into place, so a failed command
//! never leaves a partial file behind.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::dataset::{self, BehaviorLabel, Corpus, Phase, SplitMode};
use crate::error::{Error, Result};
use crate::eval;
use crate::fsutil;
use crate::monitor::{self, MonitorConfig, SessionOutcome};
use crate::nn::{self, ModelCheckpoint, Sample, TrainConfig};
use crate::par;
use crate::preprocess::{self, pgm, Frame};
use crate::synthgen::{self, GenSpec, SessionSpec};

/// Relative error at or above which `gradcheck` fails.
pub const GRADCHECK_TOLERANCE: f64 = 1e-2;

#[derive(Debug, Parser)]
#[command(name = "cagewatch", version, about = "Mouse behavior classification and post-dose monitoring")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a labeled synthetic training corpus.
    GenCorpus(GenCorpusArgs),
    /// Render one synthetic pre/post session.
    GenSession(GenSessionArgs),
    /// Train the classifier on a manifest.
    Train(TrainArgs),
    /// Score a checkpoint on a manifest.
    Eval(EvalArgs),
    /// Stratified k-fold cross-validation.
    Crossval(CrossvalArgs),
    /// Baseline, deviation and alerts for each session in a manifest.
    Monitor(MonitorArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    #[arg(long, default_value_t = 500)]
    pub per_class: usize,
    /// Square frame side in pixels.
    #[arg(long, default_value_t = synthgen::DEFAULT_SIZE)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = synthgen::DEFAULT_NOISE_SIGMA)]
    pub noise: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenSessionArgs {
    #[arg(long, default_value_t = 500)]
    pub pre: usize,
    #[arg(long, default_value_t = 500)]
    pub post: usize,
    #[arg(long, default_value_t = 0.05)]
    pub pre_rate: f64,
    #[arg(long, default_value_t = 0.05)]
    pub post_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = synthgen::DEFAULT_SIZE)]
    pub size: usize,
    #[arg(long, default_value_t = synthgen::DEFAULT_NOISE_SIGMA)]
    pub noise: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Frame,
    Session,
}

impl From<SplitArg> for SplitMode {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Frame => SplitMode::Frame,
            SplitArg::Session => SplitMode::Session,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainingFlags {
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Square model input side; frames are resized to it.
    #[arg(long, default_value_t = 32)]
    pub input_size: usize,
    /// Augmented copies added per training frame.
    #[arg(long, default_value_t = 0)]
    pub augment: usize,
    /// Whether splits may separate frames of one session.
    #[arg(long, value_enum, default_value_t = SplitArg::Frame)]
    pub split: SplitArg,
}

impl TrainingFlags {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            learning_rate: self.lr,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub training: TrainingFlags,
    #[arg(long, default_value_t = 0.2)]
    pub val_fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Metrics CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CrossvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[command(flatten)]
    pub training: TrainingFlags,
    /// Per-fold metrics CSV with mean and std rows.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MonitorArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub window: usize,
    #[arg(long, default_value_t = 50)]
    pub stride: usize,
    #[arg(long, default_value_t = 0.2)]
    pub threshold: f64,
    #[arg(long, default_value_t = 2)]
    pub consecutive: usize,
    /// Alert log, one tab-separated line per alert.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional per-session summary CSV.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Optional directory for per-frame predictions and per-window scores.
    #[arg(long)]
    pub dump_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
    /// Number of consecutive seeds to check, starting at `--seed`.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    /// Multiply analytic gradients by this factor (2 is the corruption probe).
    #[arg(long, default_value_t = 1.0)]
    pub corrupt_scale: f32,
}

/// The `KEY=VALUE` pairs of a summary line after `STATUS` and `CMD`.
#[derive(Debug, Default)]
struct Summary {
    failed: bool,
    fields: Vec<(&'static str, String)>,
}

impl Summary {
    fn put(&mut self, key: &'static str, value: impl ToString) -> &mut Self {
        self.fields.push((key, value.to_string()));
        self
    }

    fn put_f(&mut self, key: &'static str, value: f64) -> &mut Self {
        self.put(key, format!("{value:.6}"))
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::GenCorpus(_) => "gen-corpus",
        Command::GenSession(_) => "gen-session",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Crossval(_) => "crossval",
        Command::Monitor(_) => "monitor",
        Command::Gradcheck(_) => "gradcheck",
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit status.
pub fn run_command<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let name = command_name(&cli.command);
    match run(cli.command) {
        Ok(summary) => {
            let status = if summary.failed { "fail" } else { "ok" };
            let mut line = format!("STATUS={status} CMD={name}");
            for (k, v) in &summary.fields {
                let _ = write!(line, " {k}={v}");
            }
            println!("{line}");
            if summary.failed {
                3
            } else {
                0
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.exit_code();
            println!("STATUS=fail CMD={name} EXIT={code}");
            code
        }
    }
}

fn run(command: Command) -> Result<Summary> {
    match command {
        Command::GenCorpus(a) => gen_corpus(a),
        Command::GenSession(a) => gen_session(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => evaluate(a),
        Command::Crossval(a) => crossval(a),
        Command::Monitor(a) => run_monitor(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn gen_corpus(a: GenCorpusArgs) -> Result<Summary> {
    let spec = GenSpec {
        frames_per_class: a.per_class,
        frame_size: (a.size, a.size),
        seed: a.seed,
        noise_sigma: a.noise,
    };
    let manifest = synthgen::generate_corpus(&spec, &a.out_dir)?;
    eprintln!("wrote {} frames to {}", a.per_class * BehaviorLabel::COUNT, a.out_dir.display());
    let mut s = Summary::default();
    s.put("FRAMES", a.per_class * BehaviorLabel::COUNT)
        .put("MANIFEST", manifest.display());
    Ok(s)
}

fn gen_session(a: GenSessionArgs) -> Result<Summary> {
    let spec = SessionSpec {
        pre_frames: a.pre,
        post_frames: a.post,
        pre_abnormal_rate: a.pre_rate,
        post_abnormal_rate: a.post_rate,
        seed: a.seed,
        frame_size: (a.size, a.size),
        noise_sigma: a.noise,
    };
    let manifest = synthgen::generate_session(&spec, &a.out_dir)?;
    let mut s = Summary::default();
    s.put("SESSION", spec.session_id())
        .put("FRAMES", a.pre + a.post)
        .put("MANIFEST", manifest.display());
    Ok(s)
}

fn read_frames(corpus: &Corpus) -> Result<Vec<Frame>> {
    par::map(&corpus.frames, |f| pgm::read(&f.resolved_path))
        .into_iter()
        .collect()
}

fn prepare_all(frames: &[Frame], side: usize) -> Result<Vec<preprocess::Frame>> {
    par::map(frames, |f| {
        if f.width() == side && f.height() == side {
            Ok(f.clone())
        } else {
            preprocess::resize_bilinear(f, side, side)
        }
    })
    .into_iter()
    .collect()
}

fn to_samples(frames: &[Frame], labels: &[usize]) -> Vec<Sample> {
    frames
        .iter()
        .zip(labels)
        .map(|(f, &label)| Sample {
            input: preprocess::normalize(f),
            label,
        })
        .collect()
}

/// Resized frames and label indices of a manifest.
struct Loaded {
    corpus: Corpus,
    frames: Vec<Frame>,
    labels: Vec<usize>,
}

fn load(manifest: &Path, side: usize) -> Result<Loaded> {
    let corpus = dataset::load_manifest(manifest)?;
    if corpus.is_empty() {
        return Err(Error::Data(format!("{}: manifest has no frames", manifest.display())));
    }
    let frames = prepare_all(&read_frames(&corpus)?, side)?;
    let labels = corpus.frames.iter().map(|f| f.label.index()).collect();
    Ok(Loaded {
        corpus,
        frames,
        labels,
    })
}

impl Loaded {
    fn samples(&self, indices: &[usize]) -> Vec<Sample> {
        let frames: Vec<Frame> = indices.iter().map(|&i| self.frames[i].clone()).collect();
        let labels: Vec<usize> = indices.iter().map(|&i| self.labels[i]).collect();
        to_samples(&frames, &labels)
    }

    /// Training samples, expanded with augmented copies.
    fn training_samples(&self, indices: &[usize], copies: usize, seed: u64) -> Vec<Sample> {
        let pairs: Vec<(Frame, usize)> = indices
            .iter()
            .map(|&i| (self.frames[i].clone(), self.labels[i]))
            .collect();
        let expanded = preprocess::augment_training_set(&pairs, copies, seed);
        let (frames, labels): (Vec<Frame>, Vec<usize>) = expanded.into_iter().unzip();
        to_samples(&frames, &labels)
    }
}

fn train(a: TrainArgs) -> Result<Summary> {
    let t = &a.training;
    if !(a.val_fraction > 0.0 && a.val_fraction < 1.0) {
        return Err(Error::Usage(format!(
            "--val-fraction must lie strictly between 0 and 1, got {}",
            a.val_fraction
        )));
    }
    let data = load(&a.manifest, t.input_size)?;
    let (train_idx, val_idx) = dataset::split_with(&data.corpus, 1.0 - a.val_fraction, t.seed, t.split.into())?;
    let train_set = data.training_samples(&train_idx, t.augment, t.seed);
    let val_set = data.samples(&val_idx);
    eprintln!("training on {} samples, validating on {}", train_set.len(), val_set.len());
    let out = nn::train_model(&train_set, &val_set, &t.config(), &BehaviorLabel::class_names())?;
    for h in &out.history {
        eprintln!(
            "epoch {:>3}  loss {:.6}  val_accuracy {:.6}",
            h.epoch, h.train_loss, h.val_accuracy
        );
    }
    out.checkpoint.write(&a.out)?;
    let report = eval::evaluate(&out.checkpoint.model, &val_set, BehaviorLabel::Abnormal.index())?;
    let mut s = Summary::default();
    s.put("EPOCHS", t.epochs)
        .put("TRAIN", train_set.len())
        .put("VAL", val_set.len());
    if let Some(last) = out.history.last() {
        s.put_f("FINAL_LOSS", last.train_loss);
    }
    s.put_f("VAL_ACC", report.accuracy)
        .put("VAL_AUC", fmt_opt(report.auc_abnormal))
        .put("CHECKPOINT", a.out.display());
    Ok(s)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".into(), |v| format!("{v:.6}"))
}

fn checkpoint_side(ckpt: &ModelCheckpoint) -> Result<usize> {
    let [_, h, w] = ckpt.model.input_shape();
    if h != w {
        return Err(Error::Data(format!("checkpoint input {h}x{w} is not square")));
    }
    Ok(h)
}

/// Checks that the checkpoint's classes are the behavior labels in order.
fn check_classes(ckpt: &ModelCheckpoint) -> Result<()> {
    if ckpt.class_names != BehaviorLabel::class_names() {
        return Err(Error::Data(format!(
            "checkpoint classes {:?} do not match the behavior labels",
            ckpt.class_names
        )));
    }
    Ok(())
}

fn evaluate(a: EvalArgs) -> Result<Summary> {
    let ckpt = ModelCheckpoint::read(&a.checkpoint)?;
    check_classes(&ckpt)?;
    let data = load(&a.manifest, checkpoint_side(&ckpt)?)?;
    let all: Vec<usize> = (0..data.frames.len()).collect();
    let report = eval::evaluate(&ckpt.model, &data.samples(&all), BehaviorLabel::Abnormal.index())?;
    for (label, m) in BehaviorLabel::ALL.iter().zip(&report.per_class) {
        eprintln!(
            "{label:<9} precision {:.6}  recall {:.6}  f1 {:.6}",
            m.precision, m.recall, m.f1
        );
    }
    fsutil::write_atomic(&a.out, eval::single_report_csv(&report).as_bytes())?;
    let mut s = Summary::default();
    s.put("SAMPLES", all.len())
        .put_f("ACCURACY", report.accuracy)
        .put_f("PRECISION_MACRO", report.precision_macro)
        .put_f("RECALL_MACRO", report.recall_macro)
        .put_f("F1_MACRO", report.f1_macro)
        .put("AUC_ABNORMAL", fmt_opt(report.auc_abnormal))
        .put("REPORT", a.out.display());
    Ok(s)
}

fn crossval(a: CrossvalArgs) -> Result<Summary> {
    let t = &a.training;
    let data = load(&a.manifest, t.input_size)?;
    let folds = dataset::kfold_with(&data.corpus, a.k, t.seed, t.split.into())?;
    let config = t.config();
    let names = BehaviorLabel::class_names();
    let reports = par::map_range(a.k, |f| {
        let (train_idx, val_idx) = folds.fold(f);
        let train_set = data.training_samples(&train_idx, t.augment, t.seed);
        let val_set = data.samples(&val_idx);
        let out = nn::train_model(&train_set, &val_set, &config, &names)?;
        let mut report = eval::evaluate(&out.checkpoint.model, &val_set, BehaviorLabel::Abnormal.index())?;
        report.fold = Some(f);
        Ok(report)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    for r in &reports {
        eprintln!("fold {}  accuracy {:.6}", r.fold.unwrap_or_default(), r.accuracy);
    }
    let summary = eval::crossval_report(&reports)?;
    fsutil::write_atomic(&a.out, eval::crossval_csv(&summary).as_bytes())?;
    let mut s = Summary::default();
    s.put("K", a.k)
        .put_f("MEAN_ACC", summary.mean.accuracy)
        .put_f("STD_ACC", summary.std.accuracy)
        .put("MEAN_AUC", fmt_opt(summary.mean.auc_abnormal))
        .put("REPORT", a.out.display());
    Ok(s)
}

/// Frame-index set of each session, sessions in first-appearance order.
fn sessions(corpus: &Corpus) -> Vec<(String, Vec<usize>)> {
    corpus
        .sessions()
        .into_iter()
        .map(|id| {
            let idx = (0..corpus.len()).filter(|&i| corpus.frames[i].session_id == id).collect();
            (id, idx)
        })
        .collect()
}

fn file_safe(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}

fn run_monitor(a: MonitorArgs) -> Result<Summary> {
    let config = MonitorConfig {
        window: a.window,
        stride: a.stride,
        threshold: a.threshold,
        consecutive: a.consecutive,
    };
    config.validate()?;
    let ckpt = ModelCheckpoint::read(&a.checkpoint)?;
    check_classes(&ckpt)?;
    let data = load(&a.manifest, checkpoint_side(&ckpt)?)?;
    if let Some(dir) = &a.dump_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut outcomes: Vec<SessionOutcome> = Vec::new();
    let mut log = String::new();
    let mut correct = 0usize;
    for (id, indices) in sessions(&data.corpus) {
        let mut ordered = indices;
        ordered.sort_by_key(|&i| {
            let f = &data.corpus.frames[i];
            (f.phase == Phase::Post, f.t_index)
        });
        let frames: Vec<Frame> = ordered.iter().map(|&i| data.frames[i].clone()).collect();
        let preds = monitor::classify_session(&ckpt, &frames)?;
        correct += ordered
            .iter()
            .zip(&preds)
            .filter(|(&i, p)| data.corpus.frames[i].label == p.label)
            .count();
        let n_pre = ordered
            .iter()
            .take_while(|&&i| data.corpus.frames[i].phase == Phase::Pre)
            .count();
        let labels: Vec<BehaviorLabel> = preds.iter().map(|p| p.label).collect();
        let outcome = monitor::monitor_session(&id, &labels[..n_pre], &labels[n_pre..], &config)?;
        for alert in &outcome.alerts {
            log.push_str(&alert.log_line());
            log.push('\n');
        }
        eprintln!(
            "{id}: {} pre windows, {} post windows, {} alerts",
            outcome.baseline.window_count,
            outcome.post.len(),
            outcome.alerts.len()
        );
        if let Some(dir) = &a.dump_dir {
            dump_session(dir, &data.corpus, &ordered, &preds, &outcome)?;
        }
        outcomes.push(outcome);
    }
    fsutil::write_atomic(&a.out, log.as_bytes())?;
    if let Some(path) = &a.summary {
        fsutil::write_atomic(path, monitor::summary_csv(&outcomes).as_bytes())?;
    }
    eprintln!(
        "frame agreement with manifest labels: {:.6}",
        correct as f64 / data.corpus.len() as f64
    );
    let mut s = Summary::default();
    s.put("SESSIONS", outcomes.len())
        .put("ALERTS", outcomes.iter().map(|o| o.alerts.len()).sum::<usize>())
        .put("LOG", a.out.display());
    Ok(s)
}

fn dump_session(
    dir: &Path,
    corpus: &Corpus,
    ordered: &[usize],
    preds: &[monitor::FramePrediction],
    outcome: &SessionOutcome,
) -> Result<()> {
    let stem = file_safe(&outcome.session_id);
    let mut p = String::from("t_index\tphase\tpredicted\tp_abnormal\n");
    for (&i, pred) in ordered.iter().zip(preds) {
        let f = &corpus.frames[i];
        let _ = writeln!(
            p,
            "{}\t{}\t{}\t{:.6}",
            f.t_index,
            f.phase.name(),
            pred.label,
            pred.abnormal_probability
        );
    }
    fsutil::write_atomic(&dir.join(format!("{stem}.predictions.tsv")), p.as_bytes())?;

    let mut w = String::from("phase\twindow");
    for l in BehaviorLabel::ALL {
        let _ = write!(w, "\t{l}");
    }
    w.push_str("\ttv\n");
    let b = &outcome.baseline;
    let _ = write!(w, "baseline_mean\t");
    for v in b.mean.0 {
        let _ = write!(w, "\t{v:.6}");
    }
    w.push_str("\t\nbaseline_std\t");
    for v in b.std {
        let _ = write!(w, "\t{v:.6}");
    }
    w.push_str("\t\n");
    for (i, d) in outcome.post.iter().enumerate() {
        let _ = write!(w, "post_z\t{i}");
        for z in d.z_scores {
            let _ = write!(w, "\t{z:.6}");
        }
        let _ = writeln!(w, "\t{:.6}", d.tv);
    }
    fsutil::write_atomic(&dir.join(format!("{stem}.windows.tsv")), w.as_bytes())
}

fn gradcheck(a: GradcheckArgs) -> Result<Summary> {
    if a.seeds == 0 {
        return Err(Error::Usage("--seeds must be at least 1".into()));
    }
    let mut worst = 0.0f64;
    let (mut checked, mut skipped) = (0usize, 0usize);
    for seed in a.seed..a.seed.saturating_add(a.seeds) {
        let (model, input, class) = nn::gradcheck::default_probe(seed, a.size, BehaviorLabel::COUNT)?;
        let r = nn::grad_check_scaled(&model, &input, class, a.eps, a.corrupt_scale)?;
        eprintln!(
            "seed {seed}: max relative error {:.3e} over {} parameters ({} skipped at kinks)",
            r.max_relative_error, r.checked, r.skipped_kinks
        );
        worst = worst.max(r.max_relative_error);
        checked += r.checked;
        skipped += r.skipped_kinks;
    }
    let mut s = Summary { failed: worst.is_nan() || worst >= GRADCHECK_TOLERANCE, ..Summary::default() };
    s.put("SEEDS", a.seeds)
        .put("MAX_REL_ERR", format!("{worst:.6e}"))
        .put("CHECKED", checked)
        .put("SKIPPED", skipped);
    Ok(s)
}
