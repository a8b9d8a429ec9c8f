//! Deterministic synthetic frames with known behavior labels.
//!
//! Each frame is a dark background with one or two Gaussian blobs. A blob's
//! "micro-trajectory" is rendered as motion blur over [`SUBSTEPS`] positions,
//! so a single still carries the behavior's motion signature:
//!
//! | label    | pattern                                                    |
//! |----------|------------------------------------------------------------|
//! | eating   | blob near the feeder corner, small oscillation             |
//! | grooming | small-radius, high-frequency jitter (diffuse cloud)        |
//! | nesting  | slow drift toward the opposite corner (streak)             |
//! | social   | two blobs whose separation shrinks                         |
//! | abnormal | near-immobile sharp blob with flickering intensity         |
//!
//! Frame `index` of class `c` draws all of its randomness from the stream
//! `(seed, RENDER, c, index)`, so frames render independently and the file
//! name alone (plus size and noise) determines the pixels.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use crate::dataset::{BehaviorLabel, Corpus, LabeledFrame, Phase};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::par;
use crate::preprocess::{pgm, Frame};
use crate::rng::{tag, SplitMix64};

pub const SUBSTEPS: usize = 8;
pub const BACKGROUND: f64 = 20.0;
pub const DEFAULT_NOISE_SIGMA: f64 = 8.0;
pub const DEFAULT_SIZE: usize = 32;
pub const MIN_SIZE: usize = 16;
pub const MANIFEST_NAME: &str = "manifest.tsv";

#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub frames_per_class: usize,
    pub frame_size: (usize, usize),
    pub seed: u64,
    pub noise_sigma: f64,
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames_per_class == 0 {
            return Err(Error::Usage("frames per class must be positive".into()));
        }
        check_render_params(self.frame_size, self.noise_sigma)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionSpec {
    pub pre_frames: usize,
    pub post_frames: usize,
    pub pre_abnormal_rate: f64,
    pub post_abnormal_rate: f64,
    pub seed: u64,
    pub frame_size: (usize, usize),
    pub noise_sigma: f64,
}

impl SessionSpec {
    /// A session with the default frame size and noise level.
    pub fn new(pre_frames: usize, post_frames: usize, pre_rate: f64, post_rate: f64, seed: u64) -> Self {
        Self {
            pre_frames,
            post_frames,
            pre_abnormal_rate: pre_rate,
            post_abnormal_rate: post_rate,
            seed,
            frame_size: (DEFAULT_SIZE, DEFAULT_SIZE),
            noise_sigma: DEFAULT_NOISE_SIGMA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pre_frames == 0 || self.post_frames == 0 {
            return Err(Error::Usage("pre and post frame counts must be positive".into()));
        }
        for (name, r) in [("pre", self.pre_abnormal_rate), ("post", self.post_abnormal_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Usage(format!("{name} abnormal rate must lie in [0, 1], got {r}")));
            }
        }
        check_render_params(self.frame_size, self.noise_sigma)
    }

    pub fn session_id(&self) -> String {
        format!("session-{}", self.seed)
    }
}

fn check_render_params((w, h): (usize, usize), noise_sigma: f64) -> Result<()> {
    if w < MIN_SIZE || h < MIN_SIZE {
        return Err(Error::Usage(format!("frame size must be at least {MIN_SIZE}x{MIN_SIZE}, got {w}x{h}")));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::Usage(format!("noise sigma must be finite and >= 0, got {noise_sigma}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
struct Blob {
    x: f64,
    y: f64,
    sigma: f64,
    amplitude: f64,
}

fn jitter(rng: &mut SplitMix64, centre: f64, half_width: f64) -> f64 {
    centre + rng.uniform(-half_width, half_width)
}

/// Blob positions for each blur substep, in unit coordinates.
fn trajectory(label: BehaviorLabel, rng: &mut SplitMix64) -> Vec<Vec<Blob>> {
    let k_max = (SUBSTEPS - 1) as f64;
    match label {
        BehaviorLabel::Eating => {
            let (cx, cy) = (jitter(rng, 0.2, 0.03), jitter(rng, 0.2, 0.03));
            let theta = rng.uniform(0.0, TAU);
            let phase = rng.uniform(0.0, TAU);
            (0..SUBSTEPS)
                .map(|k| {
                    let s = 0.03 * (phase + TAU * k as f64 / SUBSTEPS as f64).sin();
                    vec![Blob { x: cx + s * theta.cos(), y: cy + s * theta.sin(), sigma: 0.08, amplitude: 200.0 }]
                })
                .collect()
        }
        BehaviorLabel::Grooming => {
            let (cx, cy) = (rng.uniform(0.55, 0.8), rng.uniform(0.55, 0.8));
            (0..SUBSTEPS)
                .map(|_| {
                    let a = rng.uniform(0.0, TAU);
                    let r = rng.uniform(0.06, 0.12);
                    vec![Blob { x: cx + r * a.cos(), y: cy + r * a.sin(), sigma: 0.06, amplitude: 200.0 }]
                })
                .collect()
        }
        BehaviorLabel::Nesting => {
            let (sx, sy) = (rng.uniform(0.1, 0.35), rng.uniform(0.65, 0.9));
            let (tx, ty) = (0.9, 0.1);
            (0..SUBSTEPS)
                .map(|k| {
                    let f = 0.5 * k as f64 / k_max;
                    vec![Blob { x: sx + f * (tx - sx), y: sy + f * (ty - sy), sigma: 0.05, amplitude: 200.0 }]
                })
                .collect()
        }
        BehaviorLabel::Social => {
            let (mx, my) = (rng.uniform(0.35, 0.65), rng.uniform(0.35, 0.65));
            let theta = rng.uniform(0.0, TAU);
            (0..SUBSTEPS)
                .map(|k| {
                    let half = 0.5 * (0.45 - 0.2 * k as f64 / k_max);
                    let (dx, dy) = (half * theta.cos(), half * theta.sin());
                    vec![
                        Blob { x: mx + dx, y: my + dy, sigma: 0.05, amplitude: 180.0 },
                        Blob { x: mx - dx, y: my - dy, sigma: 0.05, amplitude: 180.0 },
                    ]
                })
                .collect()
        }
        BehaviorLabel::Abnormal => {
            let (cx, cy) = (rng.uniform(0.35, 0.6), rng.uniform(0.35, 0.6));
            (0..SUBSTEPS)
                .map(|k| {
                    let amplitude = if k % 2 == 0 { 300.0 } else { 150.0 };
                    vec![Blob { x: jitter(rng, cx, 0.004), y: jitter(rng, cy, 0.004), sigma: 0.035, amplitude }]
                })
                .collect()
        }
    }
}

/// Separable Gaussian profile sampled at pixel centres.
fn profile(n: usize, centre: f64, sigma: f64) -> Vec<f64> {
    let denom = 2.0 * sigma * sigma;
    (0..n)
        .map(|i| {
            let d = (i as f64 + 0.5) / n as f64 - centre;
            (-d * d / denom).exp()
        })
        .collect()
}

/// Renders frame `index` of `label`. Pure function of its arguments.
pub fn render_frame(
    label: BehaviorLabel,
    index: u64,
    seed: u64,
    (width, height): (usize, usize),
    noise_sigma: f64,
) -> Frame {
    let mut rng = SplitMix64::stream(seed, &[tag::RENDER, label.index() as u64, index]);
    let steps = trajectory(label, &mut rng);
    let mut canvas = vec![BACKGROUND; width * height];
    let weight = 1.0 / SUBSTEPS as f64;
    for blobs in &steps {
        for b in blobs {
            let gx = profile(width, b.x, b.sigma);
            let gy = profile(height, b.y, b.sigma);
            for (row, &vy) in canvas.chunks_exact_mut(width).zip(&gy) {
                let a = b.amplitude * weight * vy;
                for (p, &vx) in row.iter_mut().zip(&gx) {
                    *p += a * vx;
                }
            }
        }
    }
    let pixels = canvas
        .into_iter()
        .map(|v| {
            let noisy = if noise_sigma > 0.0 { v + noise_sigma * rng.normal() } else { v };
            (noisy + 0.5).floor().clamp(0.0, 255.0) as u8
        })
        .collect();
    Frame::new(width, height, pixels).expect("dimensions validated by caller")
}

pub fn frame_file_name(label: BehaviorLabel, index: u64, seed: u64) -> String {
    format!("cls-{label}_i-{index}_s-{seed}.pgm")
}

/// Inverse of [`frame_file_name`].
pub fn parse_frame_file_name(name: &str) -> Option<(BehaviorLabel, u64, u64)> {
    let stem = name.strip_suffix(".pgm")?;
    let mut parts = stem.split('_');
    let label = parts.next()?.strip_prefix("cls-")?.parse().ok()?;
    let index = parts.next()?.strip_prefix("i-")?.parse().ok()?;
    let seed = parts.next()?.strip_prefix("s-")?.parse().ok()?;
    if parts.next().is_some() {
        return None;
    }
    Some((label, index, seed))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_frames(out_dir: &Path, jobs: &[(BehaviorLabel, u64)], seed: u64, size: (usize, usize), noise: f64) -> Result<()> {
    par::map(jobs, |&(label, index)| {
        let frame = render_frame(label, index, seed, size, noise);
        pgm::write(&out_dir.join(frame_file_name(label, index, seed)), &frame)
    })
    .into_iter()
    .collect()
}

fn write_manifest(out_dir: &Path, frames: Vec<LabeledFrame>) -> Result<PathBuf> {
    let path = out_dir.join(MANIFEST_NAME);
    let mut text = String::from("# path\tsession\tphase\tt_index\tlabel\n");
    text.push_str(&Corpus { frames }.to_manifest());
    fsutil::write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

/// Writes `frames_per_class` frames per label plus `manifest.tsv` into
/// `out_dir`, returning the manifest path.
///
/// Frames are listed class by class under one session `corpus-<seed>` with a
/// running `t_index`.
pub fn generate_corpus(spec: &GenSpec, out_dir: &Path) -> Result<PathBuf> {
    spec.validate()?;
    create_dir(out_dir)?;
    let jobs: Vec<(BehaviorLabel, u64)> = BehaviorLabel::ALL
        .iter()
        .flat_map(|&l| (0..spec.frames_per_class as u64).map(move |i| (l, i)))
        .collect();
    write_frames(out_dir, &jobs, spec.seed, spec.frame_size, spec.noise_sigma)?;
    let session = format!("corpus-{}", spec.seed);
    let frames = jobs
        .iter()
        .enumerate()
        .map(|(t, &(label, index))| {
            let name = frame_file_name(label, index, spec.seed);
            LabeledFrame {
                resolved_path: out_dir.join(&name),
                frame_path: name,
                label,
                session_id: session.clone(),
                phase: Phase::Pre,
                t_index: t as u64,
            }
        })
        .collect();
    write_manifest(out_dir, frames)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlannedFrame {
    pub t_index: u64,
    pub phase: Phase,
    pub label: BehaviorLabel,
}

/// Draws the label sequence of a session without rendering anything.
///
/// One `(seed, SESSION)` stream serves the whole session. Per frame a
/// uniform draw below the phase's abnormal rate yields `abnormal`; otherwise
/// a second draw picks one of the four normal labels uniformly.
pub fn plan_session(spec: &SessionSpec) -> Result<Vec<PlannedFrame>> {
    spec.validate()?;
    let mut rng = SplitMix64::stream(spec.seed, &[tag::SESSION]);
    let blocks = [
        (Phase::Pre, spec.pre_frames, spec.pre_abnormal_rate),
        (Phase::Post, spec.post_frames, spec.post_abnormal_rate),
    ];
    let mut plan = Vec::with_capacity(spec.pre_frames + spec.post_frames);
    for (phase, n, rate) in blocks {
        for _ in 0..n {
            let label = if rng.next_f64() < rate {
                BehaviorLabel::Abnormal
            } else {
                BehaviorLabel::ALL[rng.below(4)]
            };
            plan.push(PlannedFrame { t_index: plan.len() as u64, phase, label });
        }
    }
    Ok(plan)
}

/// Renders a planned session frame. Uses the session seed and `t_index` as
/// the frame index.
pub fn render_planned(spec: &SessionSpec, f: &PlannedFrame) -> Frame {
    render_frame(f.label, f.t_index, spec.seed, spec.frame_size, spec.noise_sigma)
}

/// Writes a pre/post session and its manifest into `out_dir`.
pub fn generate_session(spec: &SessionSpec, out_dir: &Path) -> Result<PathBuf> {
    let plan = plan_session(spec)?;
    create_dir(out_dir)?;
    let jobs: Vec<(BehaviorLabel, u64)> = plan.iter().map(|f| (f.label, f.t_index)).collect();
    write_frames(out_dir, &jobs, spec.seed, spec.frame_size, spec.noise_sigma)?;
    let session = spec.session_id();
    let frames = plan
        .iter()
        .map(|f| {
            let name = frame_file_name(f.label, f.t_index, spec.seed);
            LabeledFrame {
                resolved_path: out_dir.join(&name),
                frame_path: name,
                label: f.label,
                session_id: session.clone(),
                phase: f.phase,
                t_index: f.t_index,
            }
        })
        .collect();
    write_manifest(out_dir, frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_names_round_trip() {
        for l in BehaviorLabel::ALL {
            let name = frame_file_name(l, 17, u64::MAX);
            assert_eq!(parse_frame_file_name(&name), Some((l, 17, u64::MAX)));
        }
        assert_eq!(parse_frame_file_name("cls-eating_i-1_s-2.png"), None);
        assert_eq!(parse_frame_file_name("cls-cat_i-1_s-2.pgm"), None);
        assert_eq!(parse_frame_file_name("cls-eating_i-1_s-2_x.pgm"), None);
    }

    #[test]
    fn rendering_is_pure_and_seed_sensitive() {
        for l in BehaviorLabel::ALL {
            let a = render_frame(l, 3, 9, (32, 32), 8.0);
            assert_eq!(a, render_frame(l, 3, 9, (32, 32), 8.0));
            assert_ne!(a, render_frame(l, 4, 9, (32, 32), 8.0));
            assert_ne!(a, render_frame(l, 3, 10, (32, 32), 8.0));
        }
    }

    fn mass_centre(f: &Frame) -> (f64, f64) {
        let (mut sx, mut sy, mut s) = (0.0, 0.0, 0.0);
        for r in 0..f.height() {
            for c in 0..f.width() {
                let v = (f.get(r, c) as f64 - BACKGROUND).max(0.0);
                sx += v * (c as f64 + 0.5) / f.width() as f64;
                sy += v * (r as f64 + 0.5) / f.height() as f64;
                s += v;
            }
        }
        (sx / s, sy / s)
    }

    #[test]
    fn patterns_have_their_signatures() {
        for i in 0..20 {
            let eat = render_frame(BehaviorLabel::Eating, i, 1, (32, 32), 0.0);
            let (x, y) = mass_centre(&eat);
            assert!(x < 0.3 && y < 0.3, "eating centre ({x}, {y})");

            let ab = render_frame(BehaviorLabel::Abnormal, i, 1, (32, 32), 0.0);
            let peak = *ab.pixels().iter().max().unwrap();
            let groom = render_frame(BehaviorLabel::Grooming, i, 1, (32, 32), 0.0);
            let groom_peak = *groom.pixels().iter().max().unwrap();
            assert!(peak > groom_peak, "abnormal is sharper than grooming");
        }
        let flat = render_frame(BehaviorLabel::Nesting, 0, 1, (16, 16), 0.0);
        assert!(flat.pixels().iter().all(|&p| p >= BACKGROUND as u8));
    }

    #[test]
    fn noise_statistics_on_background() {
        // Far from any blob the pixel is background plus rounded noise.
        let sigma = 8.0;
        let mut values = Vec::new();
        for i in 0..200 {
            let f = render_frame(BehaviorLabel::Eating, i, 5, (64, 64), sigma);
            values.push(f.get(63, 63) as f64);
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
        assert!((mean - BACKGROUND).abs() < 2.0, "mean {mean}");
        assert!((var.sqrt() - sigma).abs() < 1.5, "std {}", var.sqrt());
    }

    #[test]
    fn session_plan_shape() {
        let spec = SessionSpec::new(30, 20, 0.0, 1.0, 4);
        let plan = plan_session(&spec).unwrap();
        assert_eq!(plan.len(), 50);
        assert!(plan.windows(2).all(|w| w[0].t_index < w[1].t_index));
        assert!(plan[..30].iter().all(|f| f.phase == Phase::Pre && f.label != BehaviorLabel::Abnormal));
        assert!(plan[30..].iter().all(|f| f.phase == Phase::Post && f.label == BehaviorLabel::Abnormal));
        assert_eq!(plan, plan_session(&spec).unwrap());
    }

    #[test]
    fn spec_validation() {
        let mut s = SessionSpec::new(1, 1, 0.5, 1.5, 0);
        assert!(matches!(s.validate(), Err(Error::Usage(_))));
        s.post_abnormal_rate = 0.5;
        s.frame_size = (15, 32);
        assert!(matches!(s.validate(), Err(Error::Usage(_))));
        let g = GenSpec { frames_per_class: 0, frame_size: (32, 32), seed: 0, noise_sigma: 1.0 };
        assert!(matches!(g.validate(), Err(Error::Usage(_))));
        let g = GenSpec { frames_per_class: 1, frame_size: (32, 32), seed: 0, noise_sigma: -1.0 };
        assert!(matches!(g.validate(), Err(Error::Usage(_))));
    }
}
