//! Continuous monitoring: per-frame classification over a session, windowed
//! behavior distributions, a pre-phase baseline, deviation scores and
//! consecutive-window alerting.
//!
//! Deviation is the total variation distance between a window's label
//! distribution and the baseline mean, together with per-label z-scores
//! whose standard deviation is floored at [`STD_FLOOR`].

use std::fmt::Write as _;

use crate::dataset::BehaviorLabel;
use crate::error::{Error, Result};
use crate::nn::{argmax, ModelCheckpoint};
use crate::par;
use crate::preprocess::{normalize, Frame};

pub const STD_FLOOR: f64 = 0.01;
const K: usize = BehaviorLabel::COUNT;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramePrediction {
    pub label: BehaviorLabel,
    pub abnormal_probability: f64,
}

/// Maps each model output to a behavior label by checkpoint class name.
fn output_labels(ckpt: &ModelCheckpoint) -> Result<Vec<BehaviorLabel>> {
    let labels = ckpt
        .class_names
        .iter()
        .map(|n| n.parse::<BehaviorLabel>().map_err(|e| Error::Data(format!("checkpoint class names: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    if !labels.contains(&BehaviorLabel::Abnormal) {
        return Err(Error::Data("checkpoint has no abnormal class".into()));
    }
    Ok(labels)
}

/// Classifies frames in order. Every frame must already have the model's
/// input size.
pub fn classify_session(ckpt: &ModelCheckpoint, frames: &[Frame]) -> Result<Vec<FramePrediction>> {
    let labels = output_labels(ckpt)?;
    let abnormal = labels.iter().position(|&l| l == BehaviorLabel::Abnormal).expect("checked");
    let [_, h, w] = ckpt.model.input_shape();
    if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.width() != w || f.height() != h) {
        return Err(Error::Data(format!(
            "frame {i} is {}x{} but the checkpoint expects {w}x{h}",
            f.width(),
            f.height()
        )));
    }
    par::map(frames, |f| {
        let p = ckpt.model.predict_proba(&normalize(f))?;
        Ok(FramePrediction {
            label: labels[argmax(&p)],
            abnormal_probability: p[abnormal] as f64,
        })
    })
    .into_iter()
    .collect()
}

/// Per-label frequencies over one window, in [`BehaviorLabel::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BehaviorDistribution(pub [f64; K]);

impl BehaviorDistribution {
    pub fn from_labels(labels: &[BehaviorLabel]) -> Self {
        let mut counts = [0usize; K];
        for l in labels {
            counts[l.index()] += 1;
        }
        let n = labels.len() as f64;
        Self(counts.map(|c| c as f64 / n))
    }

    pub fn get(&self, label: BehaviorLabel) -> f64 {
        self.0[label.index()]
    }
}

fn check_window(window: usize, stride: usize) -> Result<()> {
    if window == 0 || stride == 0 {
        return Err(Error::Usage(format!(
            "window and stride must be at least 1, got {window} and {stride}"
        )));
    }
    Ok(())
}

/// Windows start at 0, `stride` apart; a window that would run past the end
/// is dropped.
pub fn window_distributions(
    labels: &[BehaviorLabel],
    window: usize,
    stride: usize,
) -> Result<Vec<BehaviorDistribution>> {
    check_window(window, stride)?;
    Ok((0..)
        .map(|i| i * stride)
        .take_while(|&s| s + window <= labels.len())
        .map(|s| BehaviorDistribution::from_labels(&labels[s..s + window]))
        .collect())
}

/// Incremental [`window_distributions`]: feeding labels one at a time yields
/// the same distributions as the batch call on the same prefix.
#[derive(Debug, Clone)]
pub struct StreamingWindows {
    window: usize,
    stride: usize,
    /// Absolute index of `buffer[0]`.
    offset: usize,
    next_start: usize,
    buffer: Vec<BehaviorLabel>,
}

impl StreamingWindows {
    pub fn new(window: usize, stride: usize) -> Result<Self> {
        check_window(window, stride)?;
        Ok(Self {
            window,
            stride,
            offset: 0,
            next_start: 0,
            buffer: Vec::new(),
        })
    }

    pub fn push(&mut self, label: BehaviorLabel) -> Option<BehaviorDistribution> {
        let index = self.offset + self.buffer.len();
        if index < self.next_start {
            // Falls in the gap between windows when stride > window.
            self.offset += 1;
            return None;
        }
        self.buffer.push(label);
        if self.offset + self.buffer.len() < self.next_start + self.window {
            return None;
        }
        let lo = self.next_start - self.offset;
        let dist = BehaviorDistribution::from_labels(&self.buffer[lo..lo + self.window]);
        self.next_start += self.stride;
        let drop = (self.next_start - self.offset).min(self.buffer.len());
        self.buffer.drain(..drop);
        self.offset += drop;
        Some(dist)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineProfile {
    pub mean: BehaviorDistribution,
    /// Population standard deviation per label.
    pub std: [f64; K],
    pub window_count: usize,
}

pub fn baseline_profile(pre: &[BehaviorDistribution]) -> Result<BaselineProfile> {
    if pre.len() < 2 {
        return Err(Error::Data(format!(
            "baseline needs at least 2 pre-phase windows, got {}",
            pre.len()
        )));
    }
    let n = pre.len() as f64;
    let mut mean = [0.0; K];
    let mut std = [0.0; K];
    for i in 0..K {
        mean[i] = pre.iter().map(|d| d.0[i]).sum::<f64>() / n;
        std[i] = (pre.iter().map(|d| (d.0[i] - mean[i]).powi(2)).sum::<f64>() / n).sqrt();
    }
    Ok(BaselineProfile {
        mean: BehaviorDistribution(mean),
        std,
        window_count: pre.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Deviation {
    /// Total variation distance to the baseline mean, in `[0, 1]`.
    pub tv: f64,
    pub z_scores: [f64; K],
}

impl Deviation {
    /// Label with the largest `|z|`; the first wins ties.
    pub fn top_deviant_label(&self) -> BehaviorLabel {
        let mut best = 0;
        for i in 1..K {
            if self.z_scores[i].abs() > self.z_scores[best].abs() {
                best = i;
            }
        }
        BehaviorLabel::ALL[best]
    }
}

pub fn total_variation(a: &BehaviorDistribution, b: &BehaviorDistribution) -> f64 {
    0.5 * a.0.iter().zip(&b.0).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

pub fn deviation_score(d: &BehaviorDistribution, p: &BaselineProfile) -> Deviation {
    let z: [f64; K] = std::array::from_fn(|i| (d.0[i] - p.mean.0[i]) / p.std[i].max(STD_FLOOR));
    Deviation {
        tv: total_variation(d, &p.mean),
        z_scores: z,
    }
}

fn check_alert_params(threshold: f64, m: usize) -> Result<()> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Usage(format!("alert threshold must lie in (0, 1), got {threshold}")));
    }
    if m == 0 {
        return Err(Error::Usage("consecutive-window count must be at least 1".into()));
    }
    Ok(())
}

/// Incremental alert rule: fires on the `m`-th consecutive score at or above
/// the threshold, then starts counting a fresh run.
#[derive(Debug, Clone)]
pub struct AlertDetector {
    threshold: f64,
    m: usize,
    run: usize,
}

impl AlertDetector {
    pub fn new(threshold: f64, m: usize) -> Result<Self> {
        check_alert_params(threshold, m)?;
        Ok(Self { threshold, m, run: 0 })
    }

    pub fn push(&mut self, score: f64) -> bool {
        if score >= self.threshold {
            self.run += 1;
            if self.run == self.m {
                self.run = 0;
                return true;
            }
        } else {
            self.run = 0;
        }
        false
    }
}

/// Window indices at which the alert rule fires.
pub fn alert_windows(scores: &[f64], threshold: f64, m: usize) -> Result<Vec<usize>> {
    let mut det = AlertDetector::new(threshold, m)?;
    Ok(scores
        .iter()
        .enumerate()
        .filter_map(|(i, &s)| det.push(s).then_some(i))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlertEvent {
    pub session_id: String,
    /// Index among the post-phase windows.
    pub window_index: usize,
    pub deviation_score: f64,
    pub top_deviant_label: BehaviorLabel,
    pub z_scores: [f64; K],
}

impl AlertEvent {
    /// `session_id<TAB>window_index<TAB>tv<TAB>top_deviant_label`
    pub fn log_line(&self) -> String {
        format!(
            "{}\t{}\t{:.6}\t{}",
            self.session_id, self.window_index, self.deviation_score, self.top_deviant_label
        )
    }
}

pub fn detect_alerts(session_id: &str, post: &[Deviation], threshold: f64, m: usize) -> Result<Vec<AlertEvent>> {
    let scores: Vec<f64> = post.iter().map(|d| d.tv).collect();
    Ok(alert_windows(&scores, threshold, m)?
        .into_iter()
        .map(|i| AlertEvent {
            session_id: session_id.to_string(),
            window_index: i,
            deviation_score: post[i].tv,
            top_deviant_label: post[i].top_deviant_label(),
            z_scores: post[i].z_scores,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorConfig {
    pub window: usize,
    pub stride: usize,
    pub threshold: f64,
    pub consecutive: usize,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            window: 50,
            stride: 50,
            threshold: 0.2,
            consecutive: 2,
        }
    }
}

impl MonitorConfig {
    pub fn validate(&self) -> Result<()> {
        check_window(self.window, self.stride)?;
        check_alert_params(self.threshold, self.consecutive)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutcome {
    pub session_id: String,
    pub baseline: BaselineProfile,
    pub post: Vec<Deviation>,
    pub alerts: Vec<AlertEvent>,
}

impl SessionOutcome {
    pub fn first_alert(&self) -> Option<usize> {
        self.alerts.first().map(|a| a.window_index)
    }

    pub fn max_tv(&self) -> f64 {
        self.post.iter().map(|d| d.tv).fold(0.0, f64::max)
    }
}

/// Baseline from the pre-phase labels, then deviation and alerts over the
/// post-phase windows.
pub fn monitor_session(
    session_id: &str,
    pre: &[BehaviorLabel],
    post: &[BehaviorLabel],
    config: &MonitorConfig,
) -> Result<SessionOutcome> {
    config.validate()?;
    let baseline = baseline_profile(&window_distributions(pre, config.window, config.stride)?)
        .map_err(|e| match e {
            Error::Data(msg) => Error::Data(format!("session {session_id}: {msg}")),
            other => other,
        })?;
    let deviations: Vec<Deviation> = window_distributions(post, config.window, config.stride)?
        .iter()
        .map(|d| deviation_score(d, &baseline))
        .collect();
    let alerts = detect_alerts(session_id, &deviations, config.threshold, config.consecutive)?;
    Ok(SessionOutcome {
        session_id: session_id.to_string(),
        baseline,
        post: deviations,
        alerts,
    })
}

pub const SUMMARY_HEADER: &str = "session_id,pre_windows,post_windows,alerts,first_alert_window,max_tv";

/// One CSV row per session; `first_alert_window` is empty when no alert fired.
pub fn summary_csv(outcomes: &[SessionOutcome]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for o in outcomes {
        let first = o.first_alert().map(|w| w.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{first},{:.6}",
            o.session_id,
            o.baseline.window_count,
            o.post.len(),
            o.alerts.len(),
            o.max_tv()
        )
        .expect("writing to a String cannot fail");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;
    use BehaviorLabel::*;

    fn dist(v: [f64; K]) -> BehaviorDistribution {
        BehaviorDistribution(v)
    }

    #[test]
    fn window_examples() {
        let ten = vec![Eating; 10];
        assert_eq!(window_distributions(&ten, 5, 5).unwrap().len(), 2);
        assert_eq!(window_distributions(&ten[..7], 5, 5).unwrap().len(), 1);
        assert_eq!(window_distributions(&ten, 5, 5).unwrap()[0], dist([1.0, 0.0, 0.0, 0.0, 0.0]));
        assert!(window_distributions(&ten[..4], 5, 5).unwrap().is_empty());
        assert_eq!(window_distributions(&ten, 3, 1).unwrap().len(), 8);
        assert!(matches!(window_distributions(&ten, 0, 1), Err(Error::Usage(_))));
        let mixed = [Eating, Social, Social, Abnormal];
        assert_eq!(window_distributions(&mixed, 4, 4).unwrap()[0], dist([0.25, 0.0, 0.0, 0.5, 0.25]));
    }

    #[test]
    fn baseline_examples() {
        let a = dist([1.0, 0.0, 0.0, 0.0, 0.0]);
        let b = dist([0.0, 1.0, 0.0, 0.0, 0.0]);
        let p = baseline_profile(&[a, b]).unwrap();
        assert_eq!(p.mean, dist([0.5, 0.5, 0.0, 0.0, 0.0]));
        assert_eq!(p.std, [0.5, 0.5, 0.0, 0.0, 0.0]);
        let same = baseline_profile(&[a, a, a]).unwrap();
        assert_eq!(same.mean, a);
        assert_eq!(same.std, [0.0; K]);
        assert!(matches!(baseline_profile(&[a]), Err(Error::Data(_))));
    }

    #[test]
    fn baseline_matches_recomputation() {
        let mut rng = SplitMix64::new(3);
        let windows: Vec<BehaviorDistribution> = (0..10)
            .map(|_| {
                let raw: Vec<f64> = (0..K).map(|_| rng.next_f64()).collect();
                let s: f64 = raw.iter().sum();
                dist(std::array::from_fn(|i| raw[i] / s))
            })
            .collect();
        let p = baseline_profile(&windows).unwrap();
        for i in 0..K {
            let col: Vec<f64> = windows.iter().map(|w| w.0[i]).collect();
            let mean = col.iter().sum::<f64>() / 10.0;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 10.0;
            assert!((p.mean.0[i] - mean).abs() < 1e-12);
            assert!((p.std[i] - var.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn deviation_examples() {
        let base = |mean: [f64; K]| BaselineProfile {
            mean: dist(mean),
            std: [0.0; K],
            window_count: 2,
        };
        let d = deviation_score(&dist([0.2; K]), &base([0.2; K]));
        assert_eq!(d.tv, 0.0);
        assert_eq!(d.z_scores, [0.0; K]);
        let d = deviation_score(&dist([1.0, 0.0, 0.0, 0.0, 0.0]), &base([0.0, 1.0, 0.0, 0.0, 0.0]));
        assert_eq!(d.tv, 1.0);
        assert_eq!(d.z_scores[0], 100.0);
        let d = deviation_score(&dist([0.8, 0.2, 0.0, 0.0, 0.0]), &base([0.5, 0.5, 0.0, 0.0, 0.0]));
        assert!((d.tv - 0.3).abs() < 1e-15);
        assert_eq!(d.top_deviant_label(), Eating);
    }

    #[test]
    fn alert_examples() {
        assert_eq!(alert_windows(&[0.0, 0.0, 0.5, 0.5], 0.2, 2).unwrap(), vec![3]);
        assert!(alert_windows(&[0.1, 0.19, 0.0], 0.2, 1).unwrap().is_empty());
        assert_eq!(alert_windows(&[0.3, 0.1, 0.3], 0.2, 1).unwrap(), vec![0, 2]);
        assert_eq!(alert_windows(&[0.3; 5], 0.2, 2).unwrap(), vec![1, 3]);
        assert_eq!(alert_windows(&[0.2, 0.2], 0.2, 2).unwrap(), vec![1]);
        assert!(matches!(alert_windows(&[], 1.0, 2), Err(Error::Usage(_))));
        assert!(matches!(alert_windows(&[], 0.5, 0), Err(Error::Usage(_))));
    }

    #[test]
    fn session_monitoring_and_report() {
        let pre: Vec<BehaviorLabel> = (0..100).map(|i| BehaviorLabel::ALL[i % 4]).collect();
        let mut post = pre.clone();
        for l in post.iter_mut().skip(50) {
            *l = Abnormal;
        }
        let out = monitor_session("s", &pre, &post, &MonitorConfig { window: 25, ..Default::default() }).unwrap();
        assert_eq!(out.post.len(), 2);
        assert!(out.alerts.is_empty());
        let cfg = MonitorConfig { window: 25, stride: 25, threshold: 0.2, consecutive: 2 };
        let out = monitor_session("s", &pre, &post, &cfg).unwrap();
        assert_eq!(out.first_alert(), Some(3));
        assert_eq!(out.alerts[0].top_deviant_label, Abnormal);
        assert_eq!(out.alerts[0].log_line(), "s\t3\t1.000000\tabnormal");
        let csv = summary_csv(&[out]);
        assert_eq!(csv, format!("{SUMMARY_HEADER}\ns,4,4,1,3,1.000000\n"));
        assert!(matches!(monitor_session("s", &pre[..30], &post, &cfg), Err(Error::Data(_))));
    }

    fn arb_dist() -> impl Strategy<Value = BehaviorDistribution> {
        prop::collection::vec(0.0f64..1.0, K).prop_filter_map("nonzero", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-6).then(|| dist(std::array::from_fn(|i| v[i] / s)))
        })
    }

    proptest! {
        #[test]
        fn tv_is_a_bounded_symmetric_distance(a in arb_dist(), b in arb_dist()) {
            let ab = total_variation(&a, &b);
            prop_assert_eq!(ab, total_variation(&b, &a));
            prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
            prop_assert_eq!(total_variation(&a, &a), 0.0);
        }

        #[test]
        fn streaming_windows_match_batch(
            labels in prop::collection::vec(0usize..K, 0..120),
            window in 1usize..12,
            stride in 1usize..15,
        ) {
            let labels: Vec<BehaviorLabel> = labels.into_iter().map(|i| BehaviorLabel::ALL[i]).collect();
            let mut s = StreamingWindows::new(window, stride).unwrap();
            let mut streamed = Vec::new();
            for (i, &l) in labels.iter().enumerate() {
                if let Some(d) = s.push(l) {
                    streamed.push(d);
                }
                prop_assert_eq!(&streamed, &window_distributions(&labels[..=i], window, stride).unwrap());
            }
        }

        #[test]
        fn alert_count_bound(scores in prop::collection::vec(0.0f64..1.0, 0..60), m in 1usize..5) {
            let alerts = alert_windows(&scores, 0.5, m).unwrap();
            let mut bound = 0;
            let mut run = 0;
            for &s in scores.iter().chain(std::iter::once(&0.0)) {
                if s >= 0.5 { run += 1 } else { bound += run / m; run = 0 }
            }
            prop_assert!(alerts.len() <= bound);
            prop_assert!(alerts.iter().all(|&i| scores[i] >= 0.5));
            prop_assert_eq!(alerts, alert_windows(&scores, 0.5, m).unwrap());
        }
    }
}
