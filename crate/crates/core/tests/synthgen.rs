use std::fs;
use std::path::Path;

use cagewatch::dataset::{self, BehaviorLabel, Phase};
use cagewatch::preprocess::pgm;
use cagewatch::synthgen::{self, GenSpec, SessionSpec};

fn spec(per_class: usize, seed: u64) -> GenSpec {
    GenSpec {
        frames_per_class: per_class,
        frame_size: (24, 20),
        seed,
        noise_sigma: 6.0,
    }
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn corpus_counts_and_manifest_validity() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synthgen::generate_corpus(&spec(100, 1), tmp.path()).unwrap();
    let pgms = fs::read_dir(tmp.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "pgm"))
        .count();
    assert_eq!(pgms, 500);
    let corpus = dataset::load_manifest(&manifest).unwrap();
    assert_eq!(corpus.len(), 500);
    for l in BehaviorLabel::ALL {
        assert_eq!(corpus.frames.iter().filter(|f| f.label == l).count(), 100);
    }
}

#[test]
fn corpus_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    synthgen::generate_corpus(&spec(12, 5), a.path()).unwrap();
    synthgen::generate_corpus(&spec(12, 5), b.path()).unwrap();
    assert_eq!(dir_bytes(a.path()), dir_bytes(b.path()));
}

#[test]
fn file_names_re_render_every_frame() {
    let tmp = tempfile::tempdir().unwrap();
    let s = spec(8, 77);
    let manifest = synthgen::generate_corpus(&s, tmp.path()).unwrap();
    let corpus = dataset::load_manifest(&manifest).unwrap();
    for f in &corpus.frames {
        let (label, index, seed) = synthgen::parse_frame_file_name(&f.frame_path).unwrap();
        assert_eq!(label, f.label);
        let expect = synthgen::render_frame(label, index, seed, s.frame_size, s.noise_sigma);
        assert_eq!(pgm::read(&f.resolved_path).unwrap(), expect, "{}", f.frame_path);
    }
}

#[test]
fn unwritable_directory_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let err = synthgen::generate_corpus(&spec(1, 0), &blocker.join("sub")).unwrap_err();
    assert!(matches!(err, cagewatch::Error::Io { .. }), "{err}");
}

#[test]
fn session_manifest_is_valid_and_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut s = SessionSpec::new(40, 30, 0.05, 0.4, 11);
    s.frame_size = (16, 16);
    let m = synthgen::generate_session(&s, a.path()).unwrap();
    synthgen::generate_session(&s, b.path()).unwrap();
    assert_eq!(dir_bytes(a.path()), dir_bytes(b.path()));
    let corpus = dataset::load_manifest(&m).unwrap();
    assert_eq!(corpus.len(), 70);
    assert_eq!(corpus.sessions(), vec!["session-11".to_string()]);
    assert_eq!(corpus.frames.iter().filter(|f| f.phase == Phase::Pre).count(), 40);
    assert!(corpus.frames.windows(2).all(|w| w[0].t_index < w[1].t_index));
}

fn ln_choose(n: u64, k: u64) -> f64 {
    let ln_fact = |m: u64| (1..=m).map(|i| (i as f64).ln()).sum::<f64>();
    ln_fact(n) - ln_fact(k) - ln_fact(n - k)
}

/// Central interval holding at least 99% of Binomial(n, p) mass: the
/// largest `lo` with P(X < lo) <= 0.005 and smallest `hi` with P(X > hi) <= 0.005.
fn binomial_99(n: u64, p: f64) -> (u64, u64) {
    let pmf: Vec<f64> = (0..=n)
        .map(|k| (ln_choose(n, k) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp())
        .collect();
    let mut lo = 0;
    let mut below = 0.0;
    while below + pmf[lo as usize] <= 0.005 {
        below += pmf[lo as usize];
        lo += 1;
    }
    let mut hi = n;
    let mut above = 0.0;
    while above + pmf[hi as usize] <= 0.005 {
        above += pmf[hi as usize];
        hi -= 1;
    }
    (lo, hi)
}

#[test]
fn abnormal_rate_matches_binomial_interval() {
    let (lo, hi) = binomial_99(2000, 0.05);
    assert!(lo < 100 && hi > 100);
    let plan = synthgen::plan_session(&SessionSpec::new(2000, 1, 0.05, 0.05, 42)).unwrap();
    let count = plan[..2000].iter().filter(|f| f.label == BehaviorLabel::Abnormal).count() as u64;
    assert!((lo..=hi).contains(&count), "{count} outside [{lo}, {hi}]");
    // The normal labels share the remaining mass roughly evenly.
    for l in &BehaviorLabel::ALL[..4] {
        let c = plan[..2000].iter().filter(|f| f.label == *l).count();
        assert!((380..=570).contains(&c), "{l}: {c}");
    }
}

#[test]
fn null_session_is_stationary_in_rate() {
    let plan = synthgen::plan_session(&SessionSpec::new(3000, 3000, 0.1, 0.1, 8)).unwrap();
    let rate = |fs: &[synthgen::PlannedFrame]| {
        fs.iter().filter(|f| f.label == BehaviorLabel::Abnormal).count() as f64 / fs.len() as f64
    };
    let (pre, post) = (rate(&plan[..3000]), rate(&plan[3000..]));
    // Each rate has sd ~0.0055; 5 sd on the difference.
    assert!((pre - post).abs() < 0.04, "{pre} vs {post}");
}
