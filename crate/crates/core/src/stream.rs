//! Real-time sliding-window inference.
//!
//! An [`Engine`] keeps the last `W` frames of one tracked person. Once the
//! buffer is full every push runs the classifier on the whole window and
//! reports the probability of the newest frame. Engagement fires when that
//! probability has been `≥ τ` for `k` consecutive pushes and is released
//! after `disengage_after` consecutive pushes below `τ`.

use std::collections::VecDeque;
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datamodel::{MultimodalFrame, SequenceRecord, FEATURE_DIM, FILE_SIMPLEX_TOLERANCE};
use crate::error::{Error, Result};
use crate::intentnet::IntentClassifier;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    pub threshold: f64,
    /// Consecutive pushes at or above the threshold needed to engage;
    /// `None` uses the model's `k_run`.
    pub k_run: Option<usize>,
    pub low_band: f64,
    pub disengage_after: usize,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self { threshold: 0.5, k_run: None, low_band: 0.4, disengage_after: 15 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engagement {
    NoIntent,
    Transitional,
    Engaged,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EngagementState {
    pub state: Engagement,
    /// Mean frame probability of the current window.
    pub window_prob: Option<f64>,
    /// Consecutive pushes with the newest-frame probability `≥ τ`.
    pub run_length: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FrameOutput {
    pub frame_idx: u64,
    /// Probability of the newest frame; absent until the buffer is full.
    pub prob: Option<f64>,
    #[serde(flatten)]
    pub engagement: EngagementState,
    pub latency_ms: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct StreamStats {
    pub frames: u64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
    pub dropped: u64,
}

/// Nearest-rank percentile of unsorted values.
fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

pub struct Engine<'m> {
    model: &'m IntentClassifier,
    config: StreamConfig,
    k: usize,
    buffer: VecDeque<MultimodalFrame>,
    next_idx: u64,
    run: usize,
    below: usize,
    engaged: bool,
    latencies: Vec<f64>,
    dropped: u64,
}

impl<'m> Engine<'m> {
    pub fn new(model: &'m IntentClassifier, config: StreamConfig) -> Result<Self> {
        let k = config.k_run.unwrap_or(model.config.k_run);
        if k == 0 || k > model.config.window {
            return Err(Error::invalid(format!("k_run {k} must be in 1..={}", model.config.window)));
        }
        if !(0.0..=1.0).contains(&config.threshold) || !(0.0..=1.0).contains(&config.low_band) || config.disengage_after == 0 {
            return Err(Error::invalid("threshold and low_band must be in [0,1] and disengage_after positive"));
        }
        Ok(Self {
            model,
            config,
            k,
            buffer: VecDeque::with_capacity(model.config.window),
            next_idx: 0,
            run: 0,
            below: 0,
            engaged: false,
            latencies: Vec::new(),
            dropped: 0,
        })
    }

    /// Forget buffered frames and engagement (a new person or sequence).
    /// Latency statistics are kept.
    pub fn reset(&mut self) {
        self.buffer.clear();
        self.next_idx = 0;
        self.run = 0;
        self.below = 0;
        self.engaged = false;
    }

    pub fn push_frame(&mut self, frame: MultimodalFrame) -> Result<FrameOutput> {
        let start = Instant::now();
        if let Err(e) = frame.validate(FILE_SIMPLEX_TOLERANCE) {
            self.dropped += 1;
            return Err(e);
        }
        let w = self.model.config.window;
        if self.buffer.len() == w {
            self.buffer.pop_front();
        }
        self.buffer.push_back(frame);
        let frame_idx = self.next_idx;
        self.next_idx += 1;

        let (prob, window_prob) = if self.buffer.len() == w {
            let out = self.model.forward_window(self.buffer.make_contiguous())?;
            (Some(out.frame_probs[w - 1]), Some(out.window_prob))
        } else {
            (None, None)
        };
        let state = self.update(prob);
        let latency_ms = start.elapsed().as_secs_f64() * 1e3;
        self.latencies.push(latency_ms);
        Ok(FrameOutput { frame_idx, prob, engagement: EngagementState { state, window_prob, run_length: self.run }, latency_ms })
    }

    /// Push a raw 58-value feature row (pose then emotion).
    pub fn push_row(&mut self, values: &[f64], label: Option<u8>) -> Result<FrameOutput> {
        if values.len() != FEATURE_DIM {
            self.dropped += 1;
            return Err(Error::invalid(format!("frame has {} features, the model expects {FEATURE_DIM}", values.len())));
        }
        let mut f = MultimodalFrame::missing(label);
        let (pose, emotion) = values.split_at(f.pose.len());
        f.pose.copy_from_slice(pose);
        f.emotion.copy_from_slice(emotion);
        self.push_frame(f)
    }

    fn update(&mut self, prob: Option<f64>) -> Engagement {
        let Some(p) = prob else {
            return Engagement::NoIntent;
        };
        if p >= self.config.threshold {
            self.run += 1;
            self.below = 0;
        } else {
            self.run = 0;
            self.below += 1;
        }
        if self.run >= self.k {
            self.engaged = true;
        } else if self.engaged && self.below >= self.config.disengage_after {
            self.engaged = false;
        }
        if self.engaged {
            Engagement::Engaged
        } else if p < self.config.low_band {
            Engagement::NoIntent
        } else {
            Engagement::Transitional
        }
    }

    pub fn stats(&self) -> StreamStats {
        StreamStats {
            frames: self.latencies.len() as u64,
            p50_ms: percentile(&self.latencies, 0.5),
            p95_ms: percentile(&self.latencies, 0.95),
            max_ms: self.latencies.iter().copied().fold(0.0, f64::max),
            dropped: self.dropped,
        }
    }
}

/// One line of a replay trace.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub sequence_id: String,
    #[serde(flatten)]
    pub output: FrameOutput,
}

/// Stream every sequence through a fresh engine state, in file order.
pub fn replay(engine: &mut Engine, seqs: &[SequenceRecord]) -> Result<(Vec<TraceRow>, StreamStats)> {
    let mut trace = Vec::new();
    for s in seqs {
        engine.reset();
        for f in &s.frames {
            let output = engine.push_frame(f.clone())?;
            trace.push(TraceRow { sequence_id: s.sequence_id.clone(), output });
        }
    }
    Ok((trace, engine.stats()))
}

/// Offline counterpart of the engine: the newest-frame probability of each
/// window, evaluated one window at a time through the same forward path.
pub fn batch_trace(model: &IntentClassifier, frames: &[MultimodalFrame]) -> Result<Vec<Option<f64>>> {
    let w = model.config.window;
    let mut out = vec![None; frames.len()];
    for end in w..=frames.len() {
        out[end - 1] = Some(model.forward_window(&frames[end - w..end])?.frame_probs[w - 1]);
    }
    Ok(out)
}

pub fn write_trace_jsonl<W: Write>(mut writer: W, trace: &[TraceRow]) -> Result<()> {
    for row in trace {
        serde_json::to_writer(&mut writer, row)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::StandardizationStats;
    use crate::intentnet::{Backbone, ClassifierConfig, FeatureSet};

    fn model(bias: f32) -> IntentClassifier {
        let cfg = ClassifierConfig { hidden: Some(8), ..ClassifierConfig::new(Backbone::Gru, FeatureSet::Fused) };
        let mut m = IntentClassifier::new(cfg, StandardizationStats::identity(), 0).unwrap();
        m.zero_head();
        let id = m.params.find("head.bias").expect("head bias");
        m.params.get_mut(id).data[0] = bias;
        m
    }

    fn frame() -> MultimodalFrame {
        MultimodalFrame::missing(Some(0))
    }

    #[test]
    fn warm_up_reports_nothing() {
        let m = model(2.0);
        let mut e = Engine::new(&m, StreamConfig::default()).unwrap();
        for i in 0..14 {
            let o = e.push_frame(frame()).unwrap();
            assert_eq!(o.frame_idx, i);
            assert!(o.prob.is_none());
            assert_eq!(o.engagement.state, Engagement::NoIntent);
        }
        assert!(e.push_frame(frame()).unwrap().prob.is_some());
    }

    #[test]
    fn constant_high_model_engages_on_seventh_full_window() {
        let m = model(2.0);
        let mut e = Engine::new(&m, StreamConfig::default()).unwrap();
        let states: Vec<Engagement> = (0..30).map(|_| e.push_frame(frame()).unwrap().engagement.state).collect();
        let first = states.iter().position(|&s| s == Engagement::Engaged).unwrap();
        assert_eq!(first, 14 + 6);
        assert!(states[14..first].iter().all(|&s| s == Engagement::Transitional));
    }

    #[test]
    fn disengages_after_a_full_window_below_threshold() {
        let high = model(2.0);
        let low = model(-2.0);
        let cfg = StreamConfig::default();
        let mut e = Engine::new(&high, cfg.clone()).unwrap();
        for _ in 0..25 {
            e.push_frame(frame()).unwrap();
        }
        // swap in the low model with the same buffer and counters
        let mut e2 = Engine { model: &low, ..e };
        let states: Vec<Engagement> = (0..20).map(|_| e2.push_frame(frame()).unwrap().engagement.state).collect();
        assert!(states[..14].iter().all(|&s| s == Engagement::Engaged));
        assert!(states[14..].iter().all(|&s| s == Engagement::NoIntent));
    }

    #[test]
    fn dimension_mismatch_is_rejected_and_counted() {
        let m = model(0.0);
        let mut e = Engine::new(&m, StreamConfig::default()).unwrap();
        assert!(e.push_row(&[0.0; 10], None).is_err());
        assert!(e.push_row(&[0.0; FEATURE_DIM], None).is_err(), "all-zero emotion is off the simplex");
        let mut row = [0.0; FEATURE_DIM];
        row[53] = 1.0;
        assert!(e.push_row(&row, None).is_ok());
        let s = e.stats();
        assert_eq!((s.frames, s.dropped), (1, 2));
    }

    #[test]
    fn empty_replay() {
        let m = model(0.0);
        let mut e = Engine::new(&m, StreamConfig::default()).unwrap();
        let (trace, stats) = replay(&mut e, &[]).unwrap();
        assert!(trace.is_empty());
        assert_eq!(stats.frames, 0);
    }

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.5), 50.0);
        assert_eq!(percentile(&v, 0.95), 95.0);
        assert_eq!(percentile(&[3.0], 0.95), 3.0);
    }
}
