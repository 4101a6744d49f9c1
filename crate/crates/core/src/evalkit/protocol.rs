//! Evaluation protocols: participant-grouped folds, scene holdout and the
//! leakage checks that guard both.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::datamodel::{Environment, SequenceRecord};
use crate::error::{Error, Result};
use crate::intentnet::{train_classifier, ClassifierConfig, Rebalancer};
use crate::mintrvae::{train as train_rvae, RvaeConfig};
use crate::par::{self, Exec};

use super::evaluate::{evaluate, EvalSummary, DEFAULT_THRESHOLD};
use super::metrics::mean_sd;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    CrossSubject,
    CrossScene,
    Custom,
}

impl ProtocolKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cross_subject" | "cross_subject_5fold" => Ok(Self::CrossSubject),
            "cross_scene" => Ok(Self::CrossScene),
            "custom" => Ok(Self::Custom),
            other => Err(Error::invalid(format!("unknown protocol '{other}' (cross_subject, cross_scene, custom)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProtocolSplit {
    /// Each participant tests in exactly one fold.
    CrossSubject { folds: usize, participant_fold: BTreeMap<String, usize> },
    /// One fold: train on some environments, test on the rest.
    CrossScene { train: Vec<Environment>, test: Vec<Environment> },
    /// One fold given by explicit sequence ids.
    Custom { train: Vec<String>, test: Vec<String> },
}

/// One train/test partition.
#[derive(Clone, Debug)]
pub struct Fold {
    pub index: usize,
    pub train: Vec<SequenceRecord>,
    pub test: Vec<SequenceRecord>,
}

/// Positive and total labeled frames.
fn frame_counts(s: &SequenceRecord) -> (usize, usize) {
    let pos = s.frames.iter().filter(|f| f.label == Some(1)).count();
    (pos, s.len())
}

/// Participant-grouped folds balanced greedily on positive frames.
///
/// Participants are taken in decreasing order of positive frames and each
/// joins the fold with the fewest positives so far (ties: fewest frames,
/// then lowest index). Synthetic records are never assigned.
pub fn cross_subject_folds(data: &[SequenceRecord], folds: usize) -> Result<ProtocolSplit> {
    if folds < 2 {
        return Err(Error::invalid("cross-subject evaluation needs at least 2 folds"));
    }
    let mut per: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for s in data.iter().filter(|s| !s.is_synthetic()) {
        let (p, t) = frame_counts(s);
        let e = per.entry(s.participant_id.as_str()).or_default();
        e.0 += p;
        e.1 += t;
    }
    if per.len() < folds {
        return Err(Error::invalid(format!("{} participants cannot fill {folds} folds", per.len())));
    }
    let mut order: Vec<(&str, (usize, usize))> = per.into_iter().collect();
    order.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(b.1 .1.cmp(&a.1 .1)).then(a.0.cmp(b.0)));
    let mut load = vec![(0usize, 0usize); folds];
    let mut participant_fold = BTreeMap::new();
    for (pid, (p, t)) in order {
        let f = (0..folds).min_by_key(|&i| (load[i].0, load[i].1, i)).expect("folds > 0");
        load[f].0 += p;
        load[f].1 += t;
        participant_fold.insert(pid.to_string(), f);
    }
    Ok(ProtocolSplit::CrossSubject { folds, participant_fold })
}

/// Environments 1 and 2 for training, environment 3 held out.
pub fn cross_scene() -> ProtocolSplit {
    ProtocolSplit::CrossScene { train: vec![Environment::One, Environment::Two], test: vec![Environment::Three] }
}

impl ProtocolSplit {
    pub fn kind(&self) -> ProtocolKind {
        match self {
            Self::CrossSubject { .. } => ProtocolKind::CrossSubject,
            Self::CrossScene { .. } => ProtocolKind::CrossScene,
            Self::Custom { .. } => ProtocolKind::Custom,
        }
    }

    pub fn n_folds(&self) -> usize {
        match self {
            Self::CrossSubject { folds, .. } => *folds,
            _ => 1,
        }
    }

    /// Materialize every fold and check it for leakage. Synthetic records
    /// in `data` join every training split and never a test split.
    pub fn folds(&self, data: &[SequenceRecord]) -> Result<Vec<Fold>> {
        if let Self::Custom { train, test } = self {
            if let Some(id) = test.iter().find(|id| train.contains(id)) {
                return Err(Error::Leakage(format!("sequence '{id}' is listed for both train and test")));
            }
        }
        let mut out = Vec::new();
        for index in 0..self.n_folds() {
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for s in data {
                match self.side(s, index)? {
                    Some(true) => test.push(s.clone()),
                    Some(false) => train.push(s.clone()),
                    None => {}
                }
            }
            if train.is_empty() || test.is_empty() {
                return Err(Error::invalid(format!("fold {index} has an empty train or test split")));
            }
            check_leakage(self.kind(), &train, &test)?;
            out.push(Fold { index, train, test });
        }
        Ok(out)
    }

    /// `Some(true)` for test, `Some(false)` for train, `None` to drop.
    fn side(&self, s: &SequenceRecord, fold: usize) -> Result<Option<bool>> {
        match self {
            Self::CrossSubject { participant_fold, .. } => {
                if s.is_synthetic() {
                    return Ok(Some(false));
                }
                let f = participant_fold
                    .get(&s.participant_id)
                    .ok_or_else(|| Error::invalid(format!("participant '{}' has no fold", s.participant_id)))?;
                Ok(Some(*f == fold))
            }
            Self::CrossScene { train, test } => {
                if s.is_synthetic() {
                    return Ok(Some(false));
                }
                if test.contains(&s.environment) {
                    Ok(Some(true))
                } else if train.contains(&s.environment) {
                    Ok(Some(false))
                } else {
                    Ok(None)
                }
            }
            Self::Custom { train, test } => {
                if test.contains(&s.sequence_id) {
                    Ok(Some(true))
                } else if train.contains(&s.sequence_id) {
                    Ok(Some(false))
                } else {
                    Ok(None)
                }
            }
        }
    }
}

/// Abort when a split leaks: synthetic data in test, a participant on both
/// sides (cross-subject), an environment on both sides (cross-scene), or a
/// sequence on both sides (any protocol).
pub fn check_leakage(kind: ProtocolKind, train: &[SequenceRecord], test: &[SequenceRecord]) -> Result<()> {
    if let Some(s) = test.iter().find(|s| s.is_synthetic()) {
        return Err(Error::Leakage(format!("synthetic sequence '{}' in the test split", s.sequence_id)));
    }
    let real_train = || train.iter().filter(|s| !s.is_synthetic());
    let ids: BTreeSet<&str> = real_train().map(|s| s.sequence_id.as_str()).collect();
    if let Some(s) = test.iter().find(|s| ids.contains(s.sequence_id.as_str())) {
        return Err(Error::Leakage(format!("sequence '{}' in both splits", s.sequence_id)));
    }
    match kind {
        ProtocolKind::CrossSubject => {
            let people: BTreeSet<&str> = real_train().map(|s| s.participant_id.as_str()).collect();
            if let Some(s) = test.iter().find(|s| people.contains(s.participant_id.as_str())) {
                return Err(Error::Leakage(format!("participant '{}' in both splits", s.participant_id)));
            }
        }
        ProtocolKind::CrossScene => {
            let envs: BTreeSet<Environment> = real_train().map(|s| s.environment).collect();
            if let Some(s) = test.iter().find(|s| envs.contains(&s.environment)) {
                return Err(Error::Leakage(format!("environment {} in both splits", s.environment.as_str())));
            }
        }
        ProtocolKind::Custom => {}
    }
    Ok(())
}

/// One row of the comparison matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub classifier: ClassifierConfig,
    /// Rebalance the training split to this positive-window fraction with a
    /// generator fitted on that split.
    pub rebalance_to: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct ProtocolOptions {
    pub seeds: Vec<u64>,
    pub rvae: RvaeConfig,
    pub threshold: f64,
    pub exec: Exec,
}

impl Default for ProtocolOptions {
    fn default() -> Self {
        Self { seeds: vec![0], rvae: RvaeConfig::default(), threshold: DEFAULT_THRESHOLD, exec: Exec::Parallel }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FoldResult {
    pub variant: String,
    pub fold: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub summary: EvalSummary,
}

/// Mean and SD of each metric for one variant.
#[derive(Clone, Debug, PartialEq)]
pub struct VariantSummary {
    pub variant: String,
    pub mean: [f64; 6],
    pub sd: [f64; 6],
    /// Number of values each statistic is computed over.
    pub n: usize,
}

#[derive(Clone, Debug)]
pub struct ProtocolResults {
    pub runs: Vec<FoldResult>,
    pub summary: Vec<VariantSummary>,
}

/// Seed for fold `fold` of run `seed`.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (fold as u64).wrapping_add(1).wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

/// Train and evaluate every variant on every fold and seed.
///
/// The generator for rebalanced variants is fitted per fold on that fold's
/// training split only. Metrics are averaged over seeds within a fold, and
/// mean ± SD is taken across folds; a single-fold protocol reports the
/// spread across seeds instead.
pub fn run_protocol(data: &[SequenceRecord], split: &ProtocolSplit, variants: &[Variant], opts: &ProtocolOptions) -> Result<ProtocolResults> {
    if variants.is_empty() || opts.seeds.is_empty() {
        return Err(Error::invalid("need at least one variant and one seed"));
    }
    for v in variants {
        v.classifier.validate()?;
    }
    let folds = split.folds(data)?;
    let jobs: Vec<(usize, u64)> = folds.iter().flat_map(|f| opts.seeds.iter().map(move |&s| (f.index, s))).collect();
    let needs_rvae = variants.iter().any(|v| v.rebalance_to.is_some());

    let results = par::map(opts.exec, &jobs, |&(fi, seed)| -> Result<Vec<FoldResult>> {
        let fold = &folds[fi];
        check_leakage(split.kind(), &fold.train, &fold.test)?;
        let fs = fold_seed(seed, fi);
        let rvae = if needs_rvae { Some(train_rvae(&fold.train, &opts.rvae, fs)?.0) } else { None };
        let mut rows = Vec::new();
        for v in variants {
            let rebalancer = match (v.rebalance_to, &rvae) {
                (Some(target_ratio), Some(model)) => Some(Rebalancer { model, target_ratio, seed: fs ^ 0xa11 }),
                _ => None,
            };
            let (model, _) = train_classifier(&fold.train, &[], &v.classifier, fs, rebalancer.as_ref())?;
            let summary = evaluate(&model, &fold.test, opts.threshold, Exec::Sequential)?;
            log::info!("{} fold {fi} seed {seed}: frame AUROC {:.3}, seq macro-F1 {:.3}", v.name, summary.frame_auroc, summary.seq_macro_f1);
            rows.push(FoldResult { variant: v.name.clone(), fold: fi, seed, summary });
        }
        Ok(rows)
    });
    let mut runs = Vec::new();
    for r in results {
        runs.extend(r?);
    }
    let summary = variants.iter().map(|v| summarize_variant(&v.name, &runs, split.n_folds())).collect();
    Ok(ProtocolResults { runs, summary })
}

fn summarize_variant(name: &str, runs: &[FoldResult], n_folds: usize) -> VariantSummary {
    let mine: Vec<&FoldResult> = runs.iter().filter(|r| r.variant == name).collect();
    let groups: Vec<Vec<[f64; 6]>> = if n_folds > 1 {
        (0..n_folds).map(|f| mine.iter().filter(|r| r.fold == f).map(|r| r.summary.values()).collect()).collect()
    } else {
        mine.iter().map(|r| vec![r.summary.values()]).collect()
    };
    let points: Vec<[f64; 6]> = groups
        .iter()
        .filter(|g| !g.is_empty())
        .map(|g| std::array::from_fn(|m| g.iter().map(|v| v[m]).sum::<f64>() / g.len() as f64))
        .collect();
    let mut mean = [0.0; 6];
    let mut sd = [0.0; 6];
    for m in 0..6 {
        let col: Vec<f64> = points.iter().map(|p| p[m]).collect();
        (mean[m], sd[m]) = mean_sd(&col);
    }
    VariantSummary { variant: name.to_string(), mean, sd, n: points.len() }
}

/// `variant, n, <metric>_mean, <metric>_sd, …`
pub fn write_summary_csv<W: Write>(writer: W, summary: &[VariantSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["variant".to_string(), "n".to_string()];
    for c in EvalSummary::COLUMNS {
        header.push(format!("{c}_mean"));
        header.push(format!("{c}_sd"));
    }
    w.write_record(&header)?;
    for s in summary {
        let mut row = vec![s.variant.clone(), s.n.to_string()];
        for m in 0..6 {
            row.push(format!("{:.6}", s.mean[m]));
            row.push(format!("{:.6}", s.sd[m]));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `variant, fold, seed, <metric>, …`, one row per trained model.
pub fn write_runs_csv<W: Write>(writer: W, runs: &[FoldResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let header = ["variant", "fold", "seed"].into_iter().chain(EvalSummary::COLUMNS);
    w.write_record(header)?;
    for r in runs {
        let metrics = r.summary.values().map(|v| format!("{v:.6}"));
        w.write_record([r.variant.clone(), r.fold.to_string(), r.seed.to_string()].into_iter().chain(metrics))?;
    }
    w.flush()?;
    Ok(())
}
