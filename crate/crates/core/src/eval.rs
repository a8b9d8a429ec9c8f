//! Confusion matrices, classification metrics, ROC/AUC and cross-validation
//! aggregation.
//!
//! Headline precision, recall and F1 are macro (unweighted) averages, and
//! every output labels them as such. The ROC treats the `abnormal` class as
//! positive and scores each sample by its predicted `abnormal` probability.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::nn::{argmax, Model, Sample};
use crate::par;

/// `counts[t * n + p]` is the number of samples of true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    /// Builds a matrix from raw counts in row-major `[true][pred]` order.
    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::Usage(format!(
                "{classes}x{classes} confusion matrix needs {} counts, got {}",
                classes * classes,
                counts.len()
            )));
        }
        Ok(Self { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn record(&mut self, truth: usize, pred: usize) {
        self.counts[truth * self.classes + pred] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        (0..self.classes).map(|p| self.get(truth, p)).sum()
    }

    pub fn column_sum(&self, pred: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, pred)).sum()
    }
}

/// Counts `(truth, pred)` pairs over `classes` classes.
pub fn confusion_matrix(preds: &[usize], truths: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != truths.len() {
        return Err(Error::Usage(format!(
            "{} predictions but {} true labels",
            preds.len(),
            truths.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Usage("confusion matrix needs at least one sample".into()));
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (&p, &t) in preds.iter().zip(truths) {
        if p >= classes || t >= classes {
            return Err(Error::Usage(format!("class index out of range for {classes} classes")));
        }
        cm.record(t, p);
    }
    Ok(cm)
}

/// Per-class scores. An undefined ratio (zero denominator) is reported as
/// 0.0 with its flag cleared.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_defined: bool,
    pub recall_defined: bool,
}

impl ClassMetrics {
    pub fn f1_defined(&self) -> bool {
        self.precision_defined && self.recall_defined
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    /// `None` when the evaluated set lacks positives or negatives.
    pub auc_abnormal: Option<f64>,
    pub fold: Option<usize>,
}

impl MetricsReport {
    pub fn summary(&self) -> MetricSummary {
        MetricSummary {
            accuracy: self.accuracy,
            precision_macro: self.precision_macro,
            recall_macro: self.recall_macro,
            f1_macro: self.f1_macro,
            auc_abnormal: self.auc_abnormal,
        }
    }
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, false)
    } else {
        (num as f64 / den as f64, true)
    }
}

fn mean_where(values: impl Iterator<Item = (f64, bool)>) -> f64 {
    let (sum, n) = values
        .filter(|&(_, ok)| ok)
        .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Accuracy, per-class precision/recall/F1 and their macro averages over the
/// classes whose denominators are nonzero.
pub fn classification_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Usage("confusion matrix is empty".into()));
    }
    let per_class: Vec<ClassMetrics> = (0..cm.classes())
        .map(|c| {
            let tp = cm.get(c, c);
            let (precision, precision_defined) = ratio(tp, cm.column_sum(c));
            let (recall, recall_defined) = ratio(tp, cm.row_sum(c));
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                precision_defined,
                recall_defined,
            }
        })
        .collect();
    Ok(MetricsReport {
        accuracy: cm.trace() as f64 / total as f64,
        precision_macro: mean_where(per_class.iter().map(|m| (m.precision, m.precision_defined))),
        recall_macro: mean_where(per_class.iter().map(|m| (m.recall, m.recall_defined))),
        f1_macro: mean_where(per_class.iter().map(|m| (m.f1, m.f1_defined()))),
        per_class,
        auc_abnormal: None,
        fold: None,
    })
}

/// `(false positive rate, true positive rate)` points, starting at `(0, 0)`
/// and ending at `(1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
}

/// Sweeps thresholds over the distinct scores in descending order (tied
/// scores move together) and integrates the curve with the trapezoid rule.
///
/// The area is accumulated in integer counts and divided once, so it equals
/// the pairwise rank statistic up to a single rounding.
pub fn roc_auc(scores: &[f64], positives: &[bool]) -> Result<(RocCurve, f64)> {
    if scores.len() != positives.len() {
        return Err(Error::Usage(format!(
            "{} scores but {} labels",
            scores.len(),
            positives.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Usage("ROC scores must not be NaN".into()));
    }
    let n_pos = positives.iter().filter(|&&p| p).count() as u64;
    let n_neg = positives.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Usage(
            "ROC needs at least one positive and one negative sample".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut twice_area: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        let (tp_before, fp_before) = (tp, fp);
        while i < order.len() && scores[order[i]] == threshold {
            if positives[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        twice_area += (fp - fp_before) as u128 * (tp + tp_before) as u128;
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    let auc = twice_area as f64 / (2.0 * n_pos as f64 * n_neg as f64);
    Ok((RocCurve { points }, auc))
}

/// Class probabilities for every sample, in order.
pub fn predict_all(model: &Model, samples: &[Sample]) -> Result<Vec<Vec<f32>>> {
    par::map(samples, |s| model.predict_proba(&s.input))
        .into_iter()
        .collect()
}

/// Full report for `model` on `samples`, with `positive_class` as the ROC
/// positive. The AUC is absent if the samples hold only one side.
pub fn evaluate(model: &Model, samples: &[Sample], positive_class: usize) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::Data("cannot evaluate an empty sample set".into()));
    }
    let probs = predict_all(model, samples)?;
    let preds: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let truths: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let mut report = classification_metrics(&confusion_matrix(&preds, &truths, model.num_classes())?)?;
    let scores: Vec<f64> = probs.iter().map(|p| p[positive_class] as f64).collect();
    let positives: Vec<bool> = truths.iter().map(|&t| t == positive_class).collect();
    report.auc_abnormal = roc_auc(&scores, &positives).ok().map(|(_, auc)| auc);
    Ok(report)
}

/// The metrics that appear in report rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub accuracy: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    pub auc_abnormal: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossValSummary {
    pub folds: Vec<MetricSummary>,
    pub mean: MetricSummary,
    /// Population standard deviation.
    pub std: MetricSummary,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.windows(2).all(|w| w[0] == w[1]) {
        return (values[0], 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean and population standard deviation of each metric across folds, in
/// fold order. The AUC aggregates only over folds where it is defined.
pub fn crossval_report(per_fold: &[MetricsReport]) -> Result<CrossValSummary> {
    if per_fold.len() < 2 {
        return Err(Error::Usage(format!(
            "cross-validation summary needs at least 2 folds, got {}",
            per_fold.len()
        )));
    }
    let folds: Vec<MetricSummary> = per_fold.iter().map(MetricsReport::summary).collect();
    let stat = |f: fn(&MetricSummary) -> f64| mean_std(&folds.iter().map(f).collect::<Vec<_>>());
    let (acc, acc_sd) = stat(|m| m.accuracy);
    let (p, p_sd) = stat(|m| m.precision_macro);
    let (r, r_sd) = stat(|m| m.recall_macro);
    let (f, f_sd) = stat(|m| m.f1_macro);
    let aucs: Vec<f64> = folds.iter().filter_map(|m| m.auc_abnormal).collect();
    let (auc, auc_sd) = if aucs.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_std(&aucs);
        (Some(m), Some(s))
    };
    Ok(CrossValSummary {
        mean: MetricSummary {
            accuracy: acc,
            precision_macro: p,
            recall_macro: r,
            f1_macro: f,
            auc_abnormal: auc,
        },
        std: MetricSummary {
            accuracy: acc_sd,
            precision_macro: p_sd,
            recall_macro: r_sd,
            f1_macro: f_sd,
            auc_abnormal: auc_sd,
        },
        folds,
    })
}

pub const CSV_HEADER: &str = "fold,accuracy,precision_macro,recall_macro,f1_macro,auc_abnormal";

fn csv_row(out: &mut String, fold: &str, m: &MetricSummary) {
    let auc = m
        .auc_abnormal
        .map_or_else(|| "nan".to_string(), |a| format!("{a:.6}"));
    writeln!(
        out,
        "{fold},{:.6},{:.6},{:.6},{:.6},{auc}",
        m.accuracy, m.precision_macro, m.recall_macro, m.f1_macro
    )
    .expect("writing to a String cannot fail");
}

/// CSV for a single evaluation, with fold label `all`.
pub fn single_report_csv(report: &MetricsReport) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    csv_row(&mut out, "all", &report.summary());
    out
}

/// One row per fold (numbered from 0) followed by `mean` and `std` rows.
pub fn crossval_csv(summary: &CrossValSummary) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for (i, m) in summary.folds.iter().enumerate() {
        csv_row(&mut out, &i.to_string(), m);
    }
    csv_row(&mut out, "mean", &summary.mean);
    csv_row(&mut out, "std", &summary.std);
    out
}
