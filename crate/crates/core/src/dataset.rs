//! Labeled-frame manifests, stratified train/validation splits and k-fold
//! partitions.
//!
//! A manifest is UTF-8 text with one record per line:
//!
//! ```text
//! frame_path<TAB>session_id<TAB>phase<TAB>t_index<TAB>label
//! ```
//!
//! `phase` is `pre` or `post`, `label` one of the five behavior names, and
//! lines starting with `#` are comments. Relative frame paths resolve
//! against the manifest's directory. Record order is significant.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fsutil;
use crate::nn::Sample;
use crate::par;
use crate::preprocess::{self, pgm};
use crate::rng::{tag, SplitMix64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BehaviorLabel {
    Eating,
    Grooming,
    Nesting,
    Social,
    /// The side-effect-indicative positive class.
    Abnormal,
}

impl BehaviorLabel {
    pub const ALL: [BehaviorLabel; 5] = [
        BehaviorLabel::Eating,
        BehaviorLabel::Grooming,
        BehaviorLabel::Nesting,
        BehaviorLabel::Social,
        BehaviorLabel::Abnormal,
    ];
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            BehaviorLabel::Eating => "eating",
            BehaviorLabel::Grooming => "grooming",
            BehaviorLabel::Nesting => "nesting",
            BehaviorLabel::Social => "social",
            BehaviorLabel::Abnormal => "abnormal",
        }
    }

    pub fn class_names() -> Vec<String> {
        Self::ALL.iter().map(|l| l.name().to_string()).collect()
    }
}

impl fmt::Display for BehaviorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BehaviorLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| format!("unknown behavior label {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Pre,
    Post,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Pre => "pre",
            Phase::Post => "post",
        }
    }
}

impl FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "pre" => Ok(Phase::Pre),
            "post" => Ok(Phase::Post),
            _ => Err(format!("unknown phase {s:?} (expected pre or post)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledFrame {
    /// Path exactly as written in the manifest.
    pub frame_path: String,
    /// `frame_path` resolved against the manifest directory.
    pub resolved_path: PathBuf,
    pub label: BehaviorLabel,
    pub session_id: String,
    pub phase: Phase,
    pub t_index: u64,
}

impl LabeledFrame {
    pub fn manifest_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.frame_path,
            self.session_id,
            self.phase.name(),
            self.t_index,
            self.label
        )
    }
}

/// An ordered, validated collection of labeled frames.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub frames: Vec<LabeledFrame>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn labels(&self) -> Vec<BehaviorLabel> {
        self.frames.iter().map(|f| f.label).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Corpus {
        Corpus {
            frames: indices.iter().map(|&i| self.frames[i].clone()).collect(),
        }
    }

    /// Session ids in order of first appearance.
    pub fn sessions(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.frames
            .iter()
            .filter(|f| seen.insert(f.session_id.as_str()))
            .map(|f| f.session_id.clone())
            .collect()
    }

    pub fn to_manifest(&self) -> String {
        let mut s = String::new();
        for f in &self.frames {
            s.push_str(&f.manifest_line());
            s.push('\n');
        }
        s
    }
}

/// Parses and validates manifest text. With `check_files`, every frame path
/// must exist on disk.
pub fn parse_manifest(text: &str, base_dir: &Path, check_files: bool) -> Result<Corpus> {
    let mut frames = Vec::new();
    let mut paths = HashMap::<&str, usize>::new();
    let mut last_t = HashMap::<(&str, Phase), u64>::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let err = |msg: String| Error::Data(format!("manifest line {lineno}: {msg}"));
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [path, session, phase, t_index, label] = fields[..] else {
            return Err(err(format!("expected 5 tab-separated fields, found {}", fields.len())));
        };
        if path.is_empty() {
            return Err(err("empty frame path".into()));
        }
        if session.is_empty() {
            return Err(err("empty session id".into()));
        }
        let label: BehaviorLabel = label.parse().map_err(err)?;
        let phase: Phase = phase.parse().map_err(err)?;
        let t_index: u64 = t_index
            .parse()
            .map_err(|_| err(format!("t_index {t_index:?} is not a nonnegative integer")))?;
        if let Some(first) = paths.insert(path, lineno) {
            return Err(err(format!("duplicate frame path {path:?} (first seen on line {first})")));
        }
        if let Some(&prev) = last_t.get(&(session, phase)) {
            if t_index <= prev {
                return Err(err(format!(
                    "t_index {t_index} does not increase after {prev} in session {session:?} phase {}",
                    phase.name()
                )));
            }
        }
        last_t.insert((session, phase), t_index);
        let resolved = base_dir.join(path);
        if check_files && !resolved.is_file() {
            return Err(err(format!("frame file {} not found", resolved.display())));
        }
        frames.push(LabeledFrame {
            frame_path: path.to_string(),
            resolved_path: resolved,
            label,
            session_id: session.to_string(),
            phase,
            t_index,
        });
    }
    Ok(Corpus { frames })
}

pub fn load_manifest(path: &Path) -> Result<Corpus> {
    let bytes = fsutil::read(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| {
        Error::Data(format!(
            "{}: manifest is not UTF-8 (byte {})",
            path.display(),
            e.valid_up_to()
        ))
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(text, base, true).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Reads every frame, resizes to `side`×`side` and normalizes. Order follows
/// the corpus.
pub fn load_samples(corpus: &Corpus, side: usize) -> Result<Vec<Sample>> {
    par::map(&corpus.frames, |f| {
        let frame = pgm::read(&f.resolved_path)?;
        Ok(Sample {
            input: preprocess::prepare(&frame, side)?,
            label: f.label.index(),
        })
    })
    .into_iter()
    .collect()
}

/// Whether splits may put frames of one session on both sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitMode {
    /// Split individual frames, stratified by label.
    #[default]
    Frame,
    /// Keep each session entirely on one side (not label-stratified).
    Session,
}

fn per_class(labels: &[BehaviorLabel]) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); BehaviorLabel::COUNT];
    for (i, l) in labels.iter().enumerate() {
        groups[l.index()].push(i);
    }
    groups
}

fn per_session(corpus: &Corpus) -> Vec<Vec<usize>> {
    let order = corpus.sessions();
    let pos: HashMap<&str, usize> = order.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut groups = vec![Vec::new(); order.len()];
    for (i, f) in corpus.frames.iter().enumerate() {
        groups[pos[f.session_id.as_str()]].push(i);
    }
    groups
}

/// Stratified train/validation split by frame.
pub fn stratified_split(corpus: &Corpus, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    split_with(corpus, train_fraction, seed, SplitMode::Frame)
}

/// Returns `(train, val)` corpus indices, each sorted ascending.
///
/// In frame mode each class is shuffled with the `(seed, SPLIT, class)`
/// stream and its first `round(fraction * n_c)` members go to training. In
/// session mode the same rule applies to the list of sessions.
pub fn split_with(
    corpus: &Corpus,
    train_fraction: f64,
    seed: u64,
    mode: SplitMode,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Usage(format!(
            "train fraction must lie strictly between 0 and 1, got {train_fraction}"
        )));
    }
    let groups = match mode {
        SplitMode::Frame => {
            let groups = per_class(&corpus.labels());
            for (c, g) in groups.iter().enumerate() {
                if g.len() == 1 {
                    return Err(Error::Data(format!(
                        "class {} has 1 sample; stratified splitting needs at least 2",
                        BehaviorLabel::ALL[c]
                    )));
                }
            }
            groups
        }
        SplitMode::Session => {
            let sessions = per_session(corpus);
            if sessions.len() < 2 {
                return Err(Error::Data(format!(
                    "session-disjoint splitting needs at least 2 sessions, found {}",
                    sessions.len()
                )));
            }
            vec![sessions.into_iter().flatten().collect()]
        }
    };
    if corpus.is_empty() {
        return Err(Error::Data("cannot split an empty corpus".into()));
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    match mode {
        SplitMode::Frame => {
            for (c, group) in groups.into_iter().enumerate() {
                let mut g = group;
                SplitMix64::stream(seed, &[tag::SPLIT, c as u64]).shuffle(&mut g);
                let n_train = (train_fraction * g.len() as f64).round() as usize;
                train.extend_from_slice(&g[..n_train]);
                val.extend_from_slice(&g[n_train..]);
            }
        }
        SplitMode::Session => {
            let mut sessions = per_session(corpus);
            SplitMix64::stream(seed, &[tag::SPLIT, u64::MAX]).shuffle(&mut sessions);
            let n_train = (train_fraction * sessions.len() as f64).round() as usize;
            for (i, s) in sessions.into_iter().enumerate() {
                if i < n_train {
                    train.extend(s);
                } else {
                    val.extend(s);
                }
            }
        }
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// Fold assignment for every sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub k: usize,
    pub assignments: Vec<usize>,
}

impl FoldSplit {
    /// `(train, validation)` indices for fold `fold`, ascending.
    pub fn fold(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut val = Vec::new();
        for (i, &a) in self.assignments.iter().enumerate() {
            if a == fold {
                val.push(i);
            } else {
                train.push(i);
            }
        }
        (train, val)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

pub fn kfold_split(corpus: &Corpus, k: usize, seed: u64) -> Result<FoldSplit> {
    kfold_with(corpus, k, seed, SplitMode::Frame)
}

/// Stratified k-fold assignment.
///
/// Each class is shuffled with the `(seed, FOLD, class)` stream and dealt
/// round-robin onto the folds. The dealing position carries over from one
/// class to the next so overall fold sizes stay balanced too. In session
/// mode whole sessions are dealt instead.
pub fn kfold_with(corpus: &Corpus, k: usize, seed: u64, mode: SplitMode) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::Usage(format!("k must be at least 2, got {k}")));
    }
    let mut assignments = vec![usize::MAX; corpus.len()];
    let mut next = 0usize;
    match mode {
        SplitMode::Frame => {
            let groups = per_class(&corpus.labels());
            let smallest = groups.iter().map(Vec::len).filter(|&n| n > 0).min().unwrap_or(0);
            if k > smallest {
                return Err(Error::Usage(format!(
                    "k = {k} exceeds the smallest class count {smallest}"
                )));
            }
            for (c, mut g) in groups.into_iter().enumerate() {
                SplitMix64::stream(seed, &[tag::FOLD, c as u64]).shuffle(&mut g);
                for i in g {
                    assignments[i] = next % k;
                    next += 1;
                }
            }
        }
        SplitMode::Session => {
            let mut sessions = per_session(corpus);
            if k > sessions.len() {
                return Err(Error::Usage(format!(
                    "k = {k} exceeds the number of sessions {}",
                    sessions.len()
                )));
            }
            SplitMix64::stream(seed, &[tag::FOLD, u64::MAX]).shuffle(&mut sessions);
            for s in sessions {
                for i in s {
                    assignments[i] = next % k;
                }
                next += 1;
            }
        }
    }
    Ok(FoldSplit { k, assignments })
}
