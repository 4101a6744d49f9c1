//! Probability trajectories aligned to the ground-truth intent onset.

use std::io::Write;

use serde::Serialize;

use crate::datamodel::SequenceRecord;
use crate::error::{Error, Result};
use crate::intentnet::IntentClassifier;
use crate::par::{self, Exec};

pub const DEFAULT_HORIZON: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub t_rel: i64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    /// Sequences contributing at this offset.
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectories {
    pub points: Vec<TrajectoryPoint>,
    pub used: usize,
    /// Sequences without a 0→1 transition.
    pub skipped: usize,
}

/// Linear-interpolation quantile of sorted values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Pointwise median and quartiles of traces shifted so each onset sits at
/// offset 0. Offsets without any value are omitted.
pub fn align_traces(traces: &[(Vec<Option<f64>>, usize)], horizon: usize) -> Vec<TrajectoryPoint> {
    let h = horizon as i64;
    (-h..=h)
        .filter_map(|t_rel| {
            let mut vals: Vec<f64> = traces
                .iter()
                .filter_map(|(trace, onset)| {
                    let t = *onset as i64 + t_rel;
                    if t < 0 {
                        None
                    } else {
                        trace.get(t as usize).copied().flatten()
                    }
                })
                .collect();
            if vals.is_empty() {
                return None;
            }
            vals.sort_by(f64::total_cmp);
            Some(TrajectoryPoint { t_rel, median: quantile(&vals, 0.5), q25: quantile(&vals, 0.25), q75: quantile(&vals, 0.75), n: vals.len() })
        })
        .collect()
}

pub fn onset_aligned_trajectories(model: &IntentClassifier, seqs: &[SequenceRecord], horizon: usize, exec: Exec) -> Result<Trajectories> {
    let with_onset: Vec<(&SequenceRecord, usize)> = seqs.iter().filter_map(|s| s.onset().map(|o| (s, o))).collect();
    let skipped = seqs.len() - with_onset.len();
    if skipped > 0 {
        log::info!("{skipped} sequences without an intent onset skipped");
    }
    if with_onset.is_empty() {
        return Err(Error::invalid("no sequence contains an intent onset"));
    }
    let traces = par::map(exec, &with_onset, |(s, o)| model.frame_trace(&s.frames).map(|t| (t, *o)))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectories { points: align_traces(&traces, horizon), used: traces.len(), skipped })
}

#[derive(Serialize)]
struct Row<'a> {
    t_rel: i64,
    median: f64,
    q25: f64,
    q75: f64,
    n: usize,
    variant: &'a str,
}

pub fn write_trajectory_csv<W: Write>(writer: W, variant: &str, points: &[TrajectoryPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for p in points {
        w.serialize(Row { t_rel: p.t_rel, median: p.median, q25: p.q25, q75: p.q75, n: p.n, variant })?;
    }
    w.flush()?;
    Ok(())
}
