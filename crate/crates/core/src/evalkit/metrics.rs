//! Confusion-matrix metrics, the k-run decision rule, AUROC and threshold sweeps.

use serde::Serialize;

use crate::error::{Error, Result};

/// A ratio that may have had a zero denominator. Undefined ratios report 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Ratio {
    pub value: f64,
    pub defined: bool,
}

impl Ratio {
    pub fn of(num: f64, den: f64) -> Self {
        if den > 0.0 {
            Self { value: num / den, defined: true }
        } else {
            Self { value: 0.0, defined: false }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    /// Count binary predictions against binary labels.
    pub fn from_pairs(predicted: &[bool], actual: &[bool]) -> Self {
        assert_eq!(predicted.len(), actual.len(), "prediction and label counts differ");
        let mut c = Self::default();
        for (&p, &a) in predicted.iter().zip(actual) {
            match (p, a) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    /// Predict positive when `score ≥ threshold`.
    pub fn at_threshold(scores: &[f64], labels: &[bool], threshold: f64) -> Self {
        let pred: Vec<bool> = scores.iter().map(|&s| s >= threshold).collect();
        Self::from_pairs(&pred, labels)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn accuracy(&self) -> Ratio {
        Ratio::of((self.tp + self.tn) as f64, self.total() as f64)
    }

    pub fn precision(&self) -> Ratio {
        Ratio::of(self.tp as f64, (self.tp + self.fp) as f64)
    }

    pub fn recall(&self) -> Ratio {
        Ratio::of(self.tp as f64, (self.tp + self.fn_) as f64)
    }

    pub fn specificity(&self) -> Ratio {
        Ratio::of(self.tn as f64, (self.tn + self.fp) as f64)
    }

    /// F1 of the positive class.
    pub fn f1(&self) -> Ratio {
        Ratio::of(2.0 * self.tp as f64, (2 * self.tp + self.fp + self.fn_) as f64)
    }

    /// F1 of the negative class.
    pub fn negative_f1(&self) -> Ratio {
        Ratio::of(2.0 * self.tn as f64, (2 * self.tn + self.fn_ + self.fp) as f64)
    }

    pub fn macro_f1(&self) -> Ratio {
        let (a, b) = (self.f1(), self.negative_f1());
        Ratio { value: 0.5 * (a.value + b.value), defined: a.defined && b.defined }
    }

    pub fn balanced_accuracy(&self) -> Ratio {
        let (a, b) = (self.recall(), self.specificity());
        Ratio { value: 0.5 * (a.value + b.value), defined: a.defined && b.defined }
    }

    pub fn table(&self) -> MetricTable {
        MetricTable {
            accuracy: self.accuracy().value,
            precision: self.precision().value,
            recall: self.recall().value,
            f1: self.f1().value,
            macro_f1: self.macro_f1().value,
            balanced_accuracy: self.balanced_accuracy().value,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricTable {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub macro_f1: f64,
    pub balanced_accuracy: f64,
}

/// One robot trial: what the system decided and whether the person intended to interact.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Trial {
    pub detected: bool,
    pub intent: bool,
}

pub fn score_deployment_trials(trials: &[Trial]) -> Result<(ConfusionCounts, MetricTable)> {
    if trials.is_empty() {
        return Err(Error::invalid("trial log is empty"));
    }
    let pred: Vec<bool> = trials.iter().map(|t| t.detected).collect();
    let truth: Vec<bool> = trials.iter().map(|t| t.intent).collect();
    let c = ConfusionCounts::from_pairs(&pred, &truth);
    Ok((c, c.table()))
}

/// Length of the longest run of scores `≥ tau`.
pub fn longest_run(scores: &[f64], tau: f64) -> usize {
    let (mut best, mut cur) = (0, 0);
    for &s in scores {
        cur = if s >= tau { cur + 1 } else { 0 };
        best = best.max(cur);
    }
    best
}

/// 1 iff some run of at least `k` consecutive scores is `≥ tau`.
pub fn sequence_decision(scores: &[f64], tau: f64, k: usize) -> Result<bool> {
    if k == 0 || k > scores.len() {
        return Err(Error::invalid(format!("k_run {k} must be in 1..={}", scores.len())));
    }
    Ok(longest_run(scores, tau) >= k)
}

/// Largest threshold at which [`sequence_decision`] still fires: the
/// maximum over all length-`k` runs of the run minimum. A window is
/// positive at `tau` exactly when this score is `≥ tau`.
pub fn run_score(scores: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k > scores.len() {
        return Err(Error::invalid(format!("k_run {k} must be in 1..={}", scores.len())));
    }
    Ok(scores
        .windows(k)
        .map(|w| w.iter().copied().fold(f64::INFINITY, f64::min))
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Area under the ROC curve via mid-ranks, equal to
/// `P(s⁺ > s⁻) + ½·P(s⁺ = s⁻)`.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid("scores and labels differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("AUROC needs both classes"));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // 1-based mid-rank of the tie group i..=j
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// The default sweep grid `0.00, 0.01, …, 1.00`.
pub fn default_grid() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

pub fn pr_sweep(scores: &[f64], labels: &[bool], grid: &[f64]) -> Result<Vec<SweepPoint>> {
    if scores.len() != labels.len() {
        return Err(Error::invalid("scores and labels differ in length"));
    }
    if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
        return Err(Error::invalid("precision/recall sweep needs both classes"));
    }
    // Sort once and count positives above each threshold by binary search.
    let mut pairs: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut tp_suffix = vec![0u64; pairs.len() + 1];
    for i in (0..pairs.len()).rev() {
        tp_suffix[i] = tp_suffix[i + 1] + u64::from(pairs[i].1);
    }
    let total_pos = tp_suffix[0];
    Ok(grid
        .iter()
        .map(|&t| {
            let first = pairs.partition_point(|p| p.0 < t);
            let tp = tp_suffix[first];
            let fp = (pairs.len() - first) as u64 - tp;
            let c = ConfusionCounts::new(tp, fp, total_pos - tp, 0);
            SweepPoint { threshold: t, precision: c.precision().value, recall: c.recall().value }
        })
        .collect())
}

#[derive(Serialize)]
struct SweepRow<'a> {
    threshold: f64,
    precision: f64,
    recall: f64,
    variant: &'a str,
}

pub fn write_sweep_csv<W: std::io::Write>(writer: W, variant: &str, points: &[SweepPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for p in points {
        w.serialize(SweepRow { threshold: p.threshold, precision: p.precision, recall: p.recall, variant })?;
    }
    w.flush()?;
    Ok(())
}

/// Mean and sample standard deviation (n−1 denominator; 0 for one value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deployment_table() {
        let mut trials = vec![Trial { detected: true, intent: true }; 15];
        trials.extend(vec![Trial { detected: true, intent: false }; 3]);
        trials.extend(vec![Trial { detected: false, intent: false }; 14]);
        let (c, t) = score_deployment_trials(&trials).unwrap();
        assert_eq!(c, ConfusionCounts::new(15, 3, 0, 14));
        let r2 = |x: f64| (x * 100.0).round() / 100.0;
        assert_eq!((r2(t.accuracy), r2(t.precision), r2(t.recall), r2(t.f1)), (0.91, 0.83, 1.0, 0.91));
        assert!(score_deployment_trials(&[]).is_err());
    }

    #[test]
    fn macro_f1_by_hand() {
        let c = ConfusionCounts::new(15, 3, 0, 14);
        let pos = 30.0 / 33.0;
        let neg = 28.0 / 31.0;
        assert!((c.macro_f1().value - (pos + neg) / 2.0).abs() < 1e-15);
        assert!((c.balanced_accuracy().value - (1.0 + 14.0 / 17.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_division_is_flagged() {
        let c = ConfusionCounts::new(0, 0, 4, 4);
        assert_eq!(c.precision(), Ratio { value: 0.0, defined: false });
        assert!(c.recall().defined);
    }

    #[test]
    fn perfect_classifier() {
        let t = ConfusionCounts::new(5, 0, 0, 5).table();
        assert_eq!([t.accuracy, t.precision, t.recall, t.f1, t.macro_f1, t.balanced_accuracy], [1.0; 6]);
    }

    #[test]
    fn decision_rule_examples() {
        let mut s = vec![0.1; 15];
        s[3..10].iter_mut().for_each(|x| *x = 0.9);
        assert!(sequence_decision(&s, 0.5, 7).unwrap());
        let alt: Vec<f64> = (0..15).map(|i| if i % 2 == 0 { 0.9 } else { 0.1 }).collect();
        assert!(!sequence_decision(&alt, 0.5, 7).unwrap());
        assert!(sequence_decision(&alt, 0.5, 16).is_err());
        assert_eq!(run_score(&s, 7).unwrap(), 0.9);
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5, 0.5], &[true, false]).unwrap(), 0.5);
        assert!(auroc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn sweep_endpoints() {
        let pts = pr_sweep(&[0.2, 0.4, 0.6, 0.8], &[false, true, false, true], &default_grid()).unwrap();
        assert_eq!(pts.len(), 101);
        assert_eq!(pts[0].recall, 1.0);
        assert_eq!(pts[0].precision, 0.5);
        let past_end = pr_sweep(&[0.2, 0.4, 0.6, 0.8], &[false, true, false, true], &[1.0 + 1e-9]).unwrap();
        assert_eq!(past_end[0].recall, 0.0);
    }

    #[test]
    fn sample_sd() {
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_sd(&[2.0]), (2.0, 0.0));
    }
}
