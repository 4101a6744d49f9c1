//! Scoring a trained classifier on labeled sequences.

use serde::Serialize;

use crate::datamodel::{window_label, windows, SequenceRecord};
use crate::error::{Error, Result};
use crate::intentnet::IntentClassifier;
use crate::par::{self, Exec};

use super::metrics::{auroc, run_score, ConfusionCounts};

/// Default decision threshold for headline confusion matrices.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

const CHUNK: usize = 256;

/// Model outputs over every stride-1 window of a set of sequences.
#[derive(Clone, Debug, Default)]
pub struct WindowScores {
    /// Every (window, frame) probability, pooled.
    pub frame_scores: Vec<f64>,
    pub frame_labels: Vec<bool>,
    /// The frame probabilities of each window.
    pub window_probs: Vec<Vec<f64>>,
    /// Ground truth of each window under the k-run rule.
    pub window_labels: Vec<bool>,
}

impl WindowScores {
    /// Per-window score for ranking: the largest threshold at which the
    /// k-run rule still fires.
    pub fn sequence_scores(&self, k: usize) -> Result<Vec<f64>> {
        self.window_probs.iter().map(|p| run_score(p, k)).collect()
    }
}

pub fn score_windows(model: &IntentClassifier, seqs: &[SequenceRecord], exec: Exec) -> Result<WindowScores> {
    let w = model.config.window;
    let k = model.config.k_run;
    let mut feats = Vec::new();
    let mut out = WindowScores::default();
    for s in seqs {
        let rows = model.window_features(&s.frames);
        for win in windows(s, w, 1) {
            for f in win.frames {
                let l = f.label.ok_or_else(|| Error::invalid(format!("sequence '{}' has unlabeled frames", s.sequence_id)))?;
                out.frame_labels.push(l == 1);
            }
            out.window_labels.push(window_label(win.frames, k)? == 1);
            feats.push(rows[win.start..win.start + w].to_vec());
        }
    }
    let chunks: Vec<&[Vec<Vec<f64>>]> = feats.chunks(CHUNK).collect();
    for chunk in par::map(exec, &chunks, |c| model.forward_features(c)) {
        for o in chunk? {
            out.frame_scores.extend_from_slice(&o.frame_probs);
            out.window_probs.push(o.frame_probs);
        }
    }
    Ok(out)
}

/// Frame- and sequence-level metrics of one evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EvalSummary {
    pub frame_macro_f1: f64,
    pub frame_balanced_accuracy: f64,
    pub frame_auroc: f64,
    pub seq_macro_f1: f64,
    pub seq_balanced_accuracy: f64,
    pub seq_auroc: f64,
}

impl EvalSummary {
    pub const COLUMNS: [&'static str; 6] =
        ["frame_macro_f1", "frame_balanced_accuracy", "frame_auroc", "seq_macro_f1", "seq_balanced_accuracy", "seq_auroc"];

    pub fn values(&self) -> [f64; 6] {
        [
            self.frame_macro_f1,
            self.frame_balanced_accuracy,
            self.frame_auroc,
            self.seq_macro_f1,
            self.seq_balanced_accuracy,
            self.seq_auroc,
        ]
    }
}

/// Summarize scores at decision threshold `tau`. AUROC is NaN when the
/// evaluation set holds a single class.
pub fn summarize(scores: &WindowScores, tau: f64, k: usize) -> Result<EvalSummary> {
    if scores.window_probs.is_empty() {
        return Err(Error::invalid("no windows to evaluate"));
    }
    let frame = ConfusionCounts::at_threshold(&scores.frame_scores, &scores.frame_labels, tau);
    let seq_scores = scores.sequence_scores(k)?;
    let seq = ConfusionCounts::at_threshold(&seq_scores, &scores.window_labels, tau);
    let defined = |r: Result<f64>| {
        r.unwrap_or_else(|e| {
            log::warn!("{e}; AUROC reported as NaN");
            f64::NAN
        })
    };
    Ok(EvalSummary {
        frame_macro_f1: frame.macro_f1().value,
        frame_balanced_accuracy: frame.balanced_accuracy().value,
        frame_auroc: defined(auroc(&scores.frame_scores, &scores.frame_labels)),
        seq_macro_f1: seq.macro_f1().value,
        seq_balanced_accuracy: seq.balanced_accuracy().value,
        seq_auroc: defined(auroc(&seq_scores, &scores.window_labels)),
    })
}

pub fn evaluate(model: &IntentClassifier, seqs: &[SequenceRecord], tau: f64, exec: Exec) -> Result<EvalSummary> {
    summarize(&score_windows(model, seqs, exec)?, tau, model.config.k_run)
}
