//! Window classifiers: GRU, LSTM and a small Transformer encoder.
//!
//! Every backbone maps a `W×F` window to one logit per frame. Recurrent
//! backbones run a single cell and apply a linear head to every hidden
//! state, so the probability of frame `t` depends only on frames `≤ t`.
//! The Transformer projects frames to width `H`, adds a learned positional
//! table, runs pre-norm encoder blocks with full (non-causal) attention and
//! finishes with `LayerNorm → Linear`. The window probability is the mean
//! of the frame probabilities.

use std::io::Write;

use intentkit_neuro::{Adam, GruCell, LayerNorm, Linear, LstmCell, ParamSet, PositionalEmbedding, Scalar, Tape, TransformerBlock, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    config_map, window_label, windows, ModelCheckpoint, ModelKind, MultimodalFrame, SequenceRecord, DEFAULT_K_RUN, DEFAULT_WINDOW,
    EMOTION_DIM, FEATURE_DIM, POSE_DIM,
};
use crate::error::{Error, Result};
use crate::evalkit::metrics::{auroc, run_score};
use crate::features::{fit_standardization, StandardizationStats};
use crate::mintrvae::{rebalance, MintRvae};
use crate::par::Exec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    Gru,
    Lstm,
    Transformer,
}

impl Backbone {
    pub const ALL: [Backbone; 3] = [Backbone::Gru, Backbone::Lstm, Backbone::Transformer];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gru" => Ok(Self::Gru),
            "lstm" => Ok(Self::Lstm),
            "transformer" => Ok(Self::Transformer),
            other => Err(Error::invalid(format!("unknown backbone '{other}' (gru, lstm, transformer)"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Gru => "gru",
            Self::Lstm => "lstm",
            Self::Transformer => "transformer",
        }
    }

    fn kind(self) -> ModelKind {
        match self {
            Self::Gru => ModelKind::Gru,
            Self::Lstm => ModelKind::Lstm,
            Self::Transformer => ModelKind::Transformer,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    PoseOnly,
    EmotionOnly,
    Fused,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 3] = [FeatureSet::PoseOnly, FeatureSet::EmotionOnly, FeatureSet::Fused];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pose_only" | "pose" => Ok(Self::PoseOnly),
            "emotion_only" | "emotion" => Ok(Self::EmotionOnly),
            "fused" => Ok(Self::Fused),
            other => Err(Error::invalid(format!("unknown feature set '{other}' (pose_only, emotion_only, fused)"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::PoseOnly => "pose_only",
            Self::EmotionOnly => "emotion_only",
            Self::Fused => "fused",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            Self::PoseOnly => POSE_DIM,
            Self::EmotionOnly => EMOTION_DIM,
            Self::Fused => FEATURE_DIM,
        }
    }

    /// The slice of a frame this feature set reads.
    pub fn select(self, frame: &MultimodalFrame) -> Vec<f64> {
        match self {
            Self::PoseOnly => frame.pose.to_vec(),
            Self::EmotionOnly => frame.emotion.to_vec(),
            Self::Fused => frame.features().to_vec(),
        }
    }
}

/// Default hidden width for a backbone and feature set.
pub fn default_hidden(backbone: Backbone, features: FeatureSet) -> usize {
    match (features, backbone) {
        (FeatureSet::PoseOnly, _) => 256,
        (FeatureSet::EmotionOnly, Backbone::Transformer) => 16,
        (FeatureSet::EmotionOnly, _) => 16,
        (FeatureSet::Fused, Backbone::Transformer) => 256,
        (FeatureSet::Fused, _) => 96,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub backbone: Backbone,
    pub feature_set: FeatureSet,
    /// Hidden width; `None` picks [`default_hidden`].
    pub hidden: Option<usize>,
    pub window: usize,
    pub heads: usize,
    pub blocks: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    /// Stride between training windows.
    pub stride: usize,
    /// Stop after this many epochs without a better validation frame
    /// AUROC; `None` trains for the full epoch count.
    pub patience: Option<usize>,
    /// Weight positive frames by the negative/positive ratio.
    pub class_weighting: bool,
    pub k_run: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::Gru,
            feature_set: FeatureSet::Fused,
            hidden: None,
            window: DEFAULT_WINDOW,
            heads: 4,
            blocks: 1,
            epochs: 100,
            batch_size: 64,
            lr: 1e-3,
            weight_decay: 1e-5,
            dropout: 0.1,
            stride: 1,
            patience: None,
            class_weighting: false,
            k_run: DEFAULT_K_RUN,
        }
    }
}

impl ClassifierConfig {
    pub fn new(backbone: Backbone, feature_set: FeatureSet) -> Self {
        Self { backbone, feature_set, ..Self::default() }
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden.unwrap_or_else(|| default_hidden(self.backbone, self.feature_set))
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hidden_width();
        if h == 0 || self.window == 0 || self.epochs == 0 || self.batch_size == 0 || self.stride == 0 {
            return Err(Error::invalid("hidden, window, epochs, batch_size and stride must be positive"));
        }
        if self.backbone == Backbone::Transformer && (self.heads == 0 || !h.is_multiple_of(self.heads) || self.blocks == 0) {
            return Err(Error::invalid(format!("transformer width {h} must be divisible by {} heads", self.heads)));
        }
        if !(0.0..1.0).contains(&self.dropout) || self.lr <= 0.0 || self.weight_decay < 0.0 {
            return Err(Error::invalid("dropout must be in [0,1), lr positive, weight decay non-negative"));
        }
        if self.k_run == 0 || self.k_run > self.window {
            return Err(Error::invalid("k_run must be in 1..=window"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntentOutput {
    pub frame_probs: Vec<f64>,
    pub window_prob: f64,
}

impl IntentOutput {
    fn from_logits(logits: &[f64]) -> Self {
        let frame_probs: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
        let window_prob = frame_probs.iter().sum::<f64>() / frame_probs.len() as f64;
        Self { frame_probs, window_prob }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

enum Net {
    Gru(GruCell),
    Lstm(LstmCell),
    Transformer { input: Linear, pos: PositionalEmbedding, blocks: Vec<TransformerBlock>, norm: LayerNorm },
}

pub struct IntentClassifier {
    pub config: ClassifierConfig,
    pub stats: StandardizationStats,
    pub params: ParamSet,
    net: Net,
    head: Linear,
}

impl IntentClassifier {
    pub fn new(config: ClassifierConfig, stats: StandardizationStats, seed: u64) -> Result<Self> {
        config.validate()?;
        stats.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let f = config.feature_set.dim();
        let h = config.hidden_width();
        let net = match config.backbone {
            Backbone::Gru => Net::Gru(GruCell::new(&mut ps, "gru", f, h, &mut rng)),
            Backbone::Lstm => Net::Lstm(LstmCell::new(&mut ps, "lstm", f, h, &mut rng)),
            Backbone::Transformer => {
                let input = Linear::new(&mut ps, "tf.input", f, h, &mut rng);
                let pos = PositionalEmbedding::new(&mut ps, "tf.pos", config.window, h);
                let blocks = (0..config.blocks)
                    .map(|i| TransformerBlock::new(&mut ps, &format!("tf.block{i}"), h, config.heads, 2 * h, &mut rng))
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                let norm = LayerNorm::new(&mut ps, "tf.norm", h);
                Net::Transformer { input, pos, blocks, norm }
            }
        };
        let head = Linear::new(&mut ps, "head", h, 1, &mut rng);
        Ok(Self { config, stats, params: ps, net, head })
    }

    /// Zero the classification head (every frame probability becomes 0.5).
    pub fn zero_head(&mut self) {
        self.params.zero_matching("head.");
    }

    /// Standardized feature rows of one window.
    pub fn window_features(&self, frames: &[MultimodalFrame]) -> Vec<Vec<f64>> {
        frames.iter().map(|f| self.config.feature_set.select(&self.stats.apply_frame(f))).collect()
    }

    /// Per-frame logits for a batch of windows given as feature rows;
    /// returns a `B·W × 1` variable in window-major order.
    pub fn logits<T: Scalar>(&self, tape: &mut Tape<T>, batch: &[Vec<Vec<f64>>]) -> Result<Var> {
        let b = batch.len();
        let w = self.config.window;
        let f = self.config.feature_set.dim();
        for win in batch {
            if win.len() != w {
                return Err(Error::invalid(format!("window has {} frames, expected {w}", win.len())));
            }
            if let Some(row) = win.iter().find(|r| r.len() != f) {
                return Err(Error::invalid(format!("feature dimension {} does not match the model's {f}", row.len())));
            }
        }
        let h = self.config.hidden_width();
        let p = &self.params;
        let states = match &self.net {
            Net::Gru(cell) => {
                let xs = time_major(tape, batch, w, f);
                let h0 = tape.zeros(b, h);
                let hs = cell.run(tape, p, &xs, h0);
                window_major(tape, &hs, b)
            }
            Net::Lstm(cell) => {
                let xs = time_major(tape, batch, w, f);
                let h0 = tape.zeros(b, h);
                let c0 = tape.zeros(b, h);
                let hs = cell.run(tape, p, &xs, h0, c0);
                window_major(tape, &hs, b)
            }
            Net::Transformer { input, pos, blocks, norm } => {
                let data = batch.iter().flatten().flatten().map(|&x| T::from_f64(x)).collect();
                let x = tape.input(b * w, f, data);
                let x = input.forward(tape, p, x);
                let mut x = pos.forward(tape, p, x, w)?;
                for block in blocks {
                    x = block.forward(tape, p, x, w);
                }
                norm.forward(tape, p, x)
            }
        };
        let states = tape.dropout(states, self.config.dropout);
        Ok(self.head.forward(tape, p, states))
    }

    /// Forward a batch of windows (inference mode).
    pub fn forward_batch(&self, windows: &[&[MultimodalFrame]]) -> Result<Vec<IntentOutput>> {
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        let feats: Vec<Vec<Vec<f64>>> = windows.iter().map(|w| self.window_features(w)).collect();
        self.forward_features(&feats)
    }

    /// Forward already standardized feature windows.
    pub fn forward_features(&self, feats: &[Vec<Vec<f64>>]) -> Result<Vec<IntentOutput>> {
        let mut tape = Tape::<f32>::eval();
        let logits = self.logits(&mut tape, feats)?;
        let w = self.config.window;
        let vals: Vec<f64> = tape.value(logits).iter().map(|x| x.as_f64()).collect();
        Ok(vals.chunks(w).map(IntentOutput::from_logits).collect())
    }

    pub fn forward_window(&self, window: &[MultimodalFrame]) -> Result<IntentOutput> {
        Ok(self.forward_batch(&[window])?.remove(0))
    }

    /// Causal per-frame trace: entry `t` is the probability of frame `t` as
    /// the newest frame of the window ending at `t`, `None` while fewer
    /// than `W` frames are available.
    pub fn frame_trace(&self, frames: &[MultimodalFrame]) -> Result<Vec<Option<f64>>> {
        let w = self.config.window;
        let mut out = vec![None; frames.len()];
        if frames.len() < w {
            return Ok(out);
        }
        let rows = self.window_features(frames);
        let feats: Vec<Vec<Vec<f64>>> = (0..=frames.len() - w).map(|s| rows[s..s + w].to_vec()).collect();
        let mut t = w - 1;
        for chunk in feats.chunks(256) {
            for o in self.forward_features(chunk)? {
                out[t] = Some(o.frame_probs[w - 1]);
                t += 1;
            }
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint::from_params(self.config.backbone.kind(), config_map(&self.config), Some(self.stats.clone()), &self.params)
    }

    pub fn from_checkpoint(ckpt: &ModelCheckpoint) -> Result<Self> {
        let config: ClassifierConfig = ckpt.config_as()?;
        if config.backbone.kind() != ckpt.model_kind {
            return Err(Error::Checkpoint(format!("checkpoint kind {:?} does not match backbone {:?}", ckpt.model_kind, config.backbone)));
        }
        let stats = ckpt
            .standardization
            .clone()
            .ok_or_else(|| Error::Checkpoint("classifier checkpoint has no standardization statistics".into()))?;
        let mut model = Self::new(config, stats, 0)?;
        ckpt.restore_params(&mut model.params)?;
        Ok(model)
    }
}

fn time_major<T: Scalar>(tape: &mut Tape<T>, batch: &[Vec<Vec<f64>>], w: usize, f: usize) -> Vec<Var> {
    (0..w)
        .map(|t| {
            let data = batch.iter().flat_map(|win| win[t].iter().map(|&x| T::from_f64(x))).collect();
            tape.input(batch.len(), f, data)
        })
        .collect()
}

/// Reorder time-major `B×H` states into one `B·W × H` window-major matrix.
fn window_major<T: Scalar>(tape: &mut Tape<T>, hs: &[Var], b: usize) -> Var {
    let w = hs.len();
    let stacked = tape.concat_rows(hs);
    if b == 1 {
        return stacked;
    }
    let rows: Vec<Var> = (0..b)
        .flat_map(|i| (0..w).map(move |t| (i, t)))
        .map(|(i, t)| tape.slice_rows(stacked, t * b + i, 1))
        .collect();
    tape.concat_rows(&rows)
}

// ------------------------------------------------------------ training

/// Labeled training windows as (feature rows, frame labels).
pub struct LabeledWindows {
    pub features: Vec<Vec<Vec<f64>>>,
    pub labels: Vec<Vec<f64>>,
}

impl LabeledWindows {
    pub fn build(model: &IntentClassifier, seqs: &[SequenceRecord], stride: usize) -> Result<Self> {
        let w = model.config.window;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for s in seqs {
            let rows = model.window_features(&s.frames);
            for win in windows(s, w, stride) {
                let l = win
                    .frames
                    .iter()
                    .map(|f| f.label.map(f64::from).ok_or_else(|| Error::invalid(format!("sequence '{}' has unlabeled frames", s.sequence_id))))
                    .collect::<Result<Vec<_>>>()?;
                features.push(rows[win.start..win.start + w].to_vec());
                labels.push(l);
            }
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// One row of the training history.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_frame_auroc: Option<f64>,
    pub val_seq_auroc: Option<f64>,
    pub lr: f64,
    pub tf_ratio: &'static str,
}

pub fn write_history<W: Write>(writer: W, history: &[HistoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in history {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Optional generative augmentation of the training split.
pub struct Rebalancer<'a> {
    pub model: &'a MintRvae,
    pub target_ratio: f64,
    pub seed: u64,
}

/// Validation frame and sequence AUROC, or `None` when a class is missing.
pub fn validation_aurocs(model: &IntentClassifier, val: &LabeledWindows) -> Result<(Option<f64>, Option<f64>)> {
    let mut frame_scores = Vec::new();
    let mut frame_labels = Vec::new();
    let mut seq_scores = Vec::new();
    let mut seq_labels = Vec::new();
    let k = model.config.k_run;
    for (chunk, labels) in val.features.chunks(256).zip(val.labels.chunks(256)) {
        for (out, l) in model.forward_features(chunk)?.into_iter().zip(labels) {
            seq_scores.push(run_score(&out.frame_probs, k)?);
            seq_labels.push(l.iter().filter(|&&x| x >= 0.5).count() >= k);
            frame_scores.extend(out.frame_probs);
            frame_labels.extend(l.iter().map(|&x| x >= 0.5));
        }
    }
    Ok((auroc(&frame_scores, &frame_labels).ok(), auroc(&seq_scores, &seq_labels).ok()))
}

/// Train a classifier on `train`, selecting the epoch with the best
/// validation frame AUROC when `val` has both classes.
///
/// Standardization statistics come from the real training records only;
/// synthetic records appended by the rebalancer are excluded from the fit.
pub fn train_classifier(
    train: &[SequenceRecord],
    val: &[SequenceRecord],
    config: &ClassifierConfig,
    seed: u64,
    rebalancer: Option<&Rebalancer>,
) -> Result<(IntentClassifier, Vec<HistoryRow>)> {
    config.validate()?;
    if val.iter().any(SequenceRecord::is_synthetic) {
        return Err(Error::Leakage("validation split contains synthetic records".into()));
    }
    let real: Vec<SequenceRecord> = train.iter().filter(|s| !s.is_synthetic()).cloned().collect();
    let fitted = fit_standardization(&real)?;
    let mut model = IntentClassifier::new(config.clone(), fitted.stats, seed)?;

    let augmented;
    let train_set: &[SequenceRecord] = match rebalancer {
        Some(r) => {
            let out = rebalance(train, r.model, r.target_ratio, r.seed, Exec::Parallel)?;
            log::info!("rebalanced training set: {} synthetic windows, positive fraction {:.3}", out.appended, out.positive_fraction);
            augmented = out.records;
            &augmented
        }
        None => train,
    };

    let data = LabeledWindows::build(&model, train_set, config.stride)?;
    let val_data = LabeledWindows::build(&model, val, 1)?;
    let positives: usize = data.labels.iter().flatten().filter(|&&l| l >= 0.5).count();
    let frames: usize = data.labels.iter().map(Vec::len).sum();
    if positives == 0 || positives == frames {
        return Err(Error::invalid("training set contains a single class"));
    }
    let pos_weight = if config.class_weighting { (frames - positives) as f64 / positives as f64 } else { 1.0 };
    let has_val = !val_data.is_empty();

    let mut adam = Adam::new(&model.params, config.lr, config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc1a5_51f1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, ParamSet)> = None;
    let mut since_best = 0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<Vec<Vec<f64>>> = idx.iter().map(|&i| data.features[i].clone()).collect();
            let targets: Vec<f32> = idx.iter().flat_map(|&i| data.labels[i].iter().map(|&l| l as f32)).collect();
            let mut tape = Tape::<f32>::train(rng.random());
            let logits = model.logits(&mut tape, &batch)?;
            let n = targets.len();
            let weights: Vec<f32> = targets.iter().map(|&y| if y >= 0.5 { pos_weight as f32 } else { 1.0 }).collect();
            let y = tape.input_f32(n, 1, &targets);
            let per = tape.bce_with_logits(logits, y);
            let wv = tape.input_f32(n, 1, &weights);
            let weighted = tape.mul(per, wv);
            let loss = tape.mean_all(weighted);
            let value = tape.scalar(loss) as f64;
            if !value.is_finite() {
                return Err(Error::Numerical(format!("classifier loss is non-finite at epoch {epoch}")));
            }
            loss_sum += value * idx.len() as f64;
            let grads = tape.backward(loss);
            let g = grads.for_params(&tape, &model.params);
            adam.step(&mut model.params, &g);
        }
        let (vf, vs) = if has_val { validation_aurocs(&model, &val_data)? } else { (None, None) };
        history.push(HistoryRow {
            epoch: epoch + 1,
            train_loss: loss_sum / data.len() as f64,
            val_frame_auroc: vf,
            val_seq_auroc: vs,
            lr: config.lr,
            tf_ratio: "n/a",
        });
        log::debug!("{} epoch {} loss {:.4} val auroc {:?}", config.backbone.as_str(), epoch + 1, loss_sum / data.len() as f64, vf);
        if let Some(score) = vf {
            if best.as_ref().is_none_or(|(b, _)| score > *b) {
                best = Some((score, model.params.clone()));
                since_best = 0;
            } else {
                since_best += 1;
            }
            if config.patience.is_some_and(|p| since_best >= p) {
                break;
            }
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok((model, history))
}

/// Label of every stride-1 window of `seqs` under the k-run rule.
pub fn window_labels(seqs: &[SequenceRecord], w: usize, k: usize) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for s in seqs {
        for win in windows(s, w, 1) {
            out.push(window_label(win.frames, k)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::Environment;

    fn small(backbone: Backbone) -> ClassifierConfig {
        ClassifierConfig { hidden: Some(8), heads: 2, ..ClassifierConfig::new(backbone, FeatureSet::Fused) }
    }

    fn random_window(seed: u64, len: usize) -> Vec<MultimodalFrame> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len)
            .map(|_| {
                let mut f = MultimodalFrame::missing(Some(0));
                f.pose.iter_mut().for_each(|x| *x = rng.random_range(0.0..1.0));
                f
            })
            .collect()
    }

    #[test]
    fn feature_slices() {
        let mut f = MultimodalFrame::missing(None);
        f.pose[0] = 0.25;
        let fused = FeatureSet::Fused.select(&f);
        let mut cat = FeatureSet::PoseOnly.select(&f);
        cat.extend(FeatureSet::EmotionOnly.select(&f));
        assert_eq!(fused, cat);
        assert_eq!(FeatureSet::EmotionOnly.select(&f), vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(FeatureSet::PoseOnly.select(&f).len(), POSE_DIM);
    }

    #[test]
    fn default_widths() {
        assert_eq!(ClassifierConfig::new(Backbone::Gru, FeatureSet::Fused).hidden_width(), 96);
        assert_eq!(ClassifierConfig::new(Backbone::Transformer, FeatureSet::Fused).hidden_width(), 256);
        assert_eq!(ClassifierConfig::new(Backbone::Lstm, FeatureSet::PoseOnly).hidden_width(), 256);
        assert_eq!(ClassifierConfig::new(Backbone::Lstm, FeatureSet::EmotionOnly).hidden_width(), 16);
        let bad = ClassifierConfig { hidden: Some(10), heads: 4, ..ClassifierConfig::new(Backbone::Transformer, FeatureSet::Fused) };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_head_gives_half() {
        for b in Backbone::ALL {
            let mut m = IntentClassifier::new(small(b), StandardizationStats::identity(), 3).unwrap();
            m.zero_head();
            let out = m.forward_window(&random_window(1, 15)).unwrap();
            assert!(out.frame_probs.iter().all(|&p| p == 0.5));
            assert_eq!(out.window_prob, 0.5);
        }
    }

    #[test]
    fn batch_order_does_not_matter() {
        for b in Backbone::ALL {
            let m = IntentClassifier::new(small(b), StandardizationStats::identity(), 4).unwrap();
            let ws: Vec<Vec<MultimodalFrame>> = (0..4).map(|s| random_window(s, 15)).collect();
            let fwd: Vec<&[MultimodalFrame]> = ws.iter().map(|w| w.as_slice()).collect();
            let rev: Vec<&[MultimodalFrame]> = ws.iter().rev().map(|w| w.as_slice()).collect();
            let a = m.forward_batch(&fwd).unwrap();
            let mut r = m.forward_batch(&rev).unwrap();
            r.reverse();
            for (x, y) in a.iter().zip(&r) {
                for (p, q) in x.frame_probs.iter().zip(&y.frame_probs) {
                    assert!((p - q).abs() < 1e-6);
                }
                let lo = x.frame_probs.iter().copied().fold(1.0, f64::min);
                let hi = x.frame_probs.iter().copied().fold(0.0, f64::max);
                assert!(x.window_prob >= lo && x.window_prob <= hi);
            }
        }
    }

    #[test]
    fn recurrent_backbones_are_causal() {
        for b in [Backbone::Gru, Backbone::Lstm] {
            let m = IntentClassifier::new(small(b), StandardizationStats::identity(), 5).unwrap();
            let w = random_window(9, 15);
            let mut cut = w.clone();
            for f in cut[8..].iter_mut() {
                f.pose = [0.0; POSE_DIM];
            }
            let a = m.forward_window(&w).unwrap();
            let c = m.forward_window(&cut).unwrap();
            assert_eq!(a.frame_probs[..8], c.frame_probs[..8]);
            assert_ne!(a.frame_probs[8..], c.frame_probs[8..]);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let m = IntentClassifier::new(small(Backbone::Gru), StandardizationStats::identity(), 5).unwrap();
        assert!(m.forward_features(&[vec![vec![0.0; 3]; 15]]).is_err());
        assert!(m.forward_window(&random_window(1, 14)).is_err());
    }

    #[test]
    fn single_class_training_fails() {
        let seq = SequenceRecord::new("s", "p", Environment::One, random_window(2, 20));
        let cfg = ClassifierConfig { epochs: 1, ..small(Backbone::Gru) };
        assert!(train_classifier(&[seq], &[], &cfg, 1, None).is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let m = IntentClassifier::new(small(Backbone::Transformer), StandardizationStats::identity(), 5).unwrap();
        let ck = ModelCheckpoint::from_bytes(&m.to_checkpoint().to_bytes().unwrap()).unwrap();
        let back = IntentClassifier::from_checkpoint(&ck).unwrap();
        let w = random_window(3, 15);
        assert_eq!(back.forward_window(&w).unwrap(), m.forward_window(&w).unwrap());
    }
}
