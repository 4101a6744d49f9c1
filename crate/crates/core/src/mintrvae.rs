//! Recurrent variational autoencoder over labeled pose+emotion windows.
//!
//! The encoder embeds every frame with an MLP (`Linear → BatchNorm → ReLU`
//! per layer, batch statistics shared over batch and time), runs a GRU over
//! the embeddings and maps the last hidden state to a diagonal Gaussian.
//! The decoder is an autoregressive GRU initialised from the latent code
//! whose input at each step is the previous frame concatenated with the
//! code. Three heads produce the pose (linear), emotion (softmax) and
//! intent (sigmoid) parts of the next frame.
//!
//! Everything runs in standardized pose space; [`MintRvae::sample`] maps
//! generated poses back through the model's statistics so its output can
//! be mixed with dataset records.

use std::io::Write;

use intentkit_neuro::{apply_stat_updates, Adam, BatchNorm1d, GruCell, Linear, ParamId, ParamSet, Scalar, Tape, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    config_map, window_label, windows, Environment, ModelCheckpoint, ModelKind, MultimodalFrame, SequenceRecord, DEFAULT_K_RUN,
    DEFAULT_WINDOW, EMOTION_DIM, FEATURE_DIM, LABELED_DIM, NUM_KEYPOINTS, POSE_DIM,
};
use crate::error::{Error, Result};
use crate::features::{fit_standardization, StandardizationStats};
use crate::par::{self, Exec};

/// Whether the KL warm-up counts epochs or optimizer steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WarmupUnit {
    Epoch,
    Step,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RvaeConfig {
    pub input_dim: usize,
    pub encoder_mlp: Vec<usize>,
    pub encoder_hidden: usize,
    pub latent_dim: usize,
    pub decoder_hidden: usize,
    pub lambda_pose: f64,
    pub lambda_emotion: f64,
    pub lambda_intent: f64,
    pub eta_max: f64,
    pub warmup: f64,
    pub warmup_unit: WarmupUnit,
    pub free_bits: f64,
    pub huber_delta: f64,
    pub confidence_offset: f64,
    pub xi_pose: f64,
    pub xi_confidence: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Training window length and stride over each sequence.
    pub window: usize,
    pub stride: usize,
    /// Start decoding from a zero frame and supervise the first frame too.
    /// When false, the true first frame seeds the decoder during training.
    pub zero_start: bool,
    /// Global gradient-norm clip; 0 disables it.
    pub grad_clip: f64,
    /// Positive-window rule used by [`rebalance`].
    pub k_run: usize,
    /// Residual windows kept for sampling observation noise; 0 makes
    /// sampling return the decoder's point predictions.
    pub residual_bank: usize,
}

impl Default for RvaeConfig {
    fn default() -> Self {
        Self {
            input_dim: LABELED_DIM,
            encoder_mlp: vec![256, 128, 64],
            encoder_hidden: 64,
            latent_dim: 32,
            decoder_hidden: 64,
            lambda_pose: 20.0,
            lambda_emotion: 10.0,
            lambda_intent: 1.0,
            eta_max: 0.8,
            warmup: 5000.0,
            warmup_unit: WarmupUnit::Epoch,
            free_bits: 0.1,
            huber_delta: 1.0,
            confidence_offset: 0.1,
            xi_pose: 0.8,
            xi_confidence: 0.2,
            epochs: 700,
            batch_size: 64,
            lr: 1e-3,
            weight_decay: 1e-5,
            window: DEFAULT_WINDOW,
            stride: 1,
            zero_start: true,
            grad_clip: 5.0,
            k_run: DEFAULT_K_RUN,
            residual_bank: 256,
        }
    }
}

impl RvaeConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            self.lambda_pose,
            self.lambda_emotion,
            self.lambda_intent,
            self.eta_max,
            self.free_bits,
            self.confidence_offset,
            self.xi_pose,
            self.xi_confidence,
            self.weight_decay,
            self.grad_clip,
        ];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("loss weights must be finite and non-negative"));
        }
        if ((self.xi_pose + self.xi_confidence) - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("xi_pose + xi_confidence must equal 1"));
        }
        if self.input_dim != LABELED_DIM {
            return Err(Error::invalid(format!("input_dim must be {LABELED_DIM}")));
        }
        if self.encoder_mlp.is_empty() || self.encoder_mlp.contains(&0) {
            return Err(Error::invalid("encoder_mlp needs at least one non-zero layer width"));
        }
        let sizes = [self.encoder_hidden, self.latent_dim, self.decoder_hidden, self.epochs, self.batch_size, self.window, self.stride];
        if sizes.contains(&0) || self.huber_delta <= 0.0 || self.warmup < 0.0 || self.lr <= 0.0 {
            return Err(Error::invalid("sizes, huber_delta and lr must be positive"));
        }
        if self.k_run == 0 || self.k_run > self.window {
            return Err(Error::invalid("k_run must be in 1..=window"));
        }
        Ok(())
    }
}

/// `η(e) = η_max · min(e / warmup, 1)`.
pub fn kl_weight(cfg: &RvaeConfig, e: f64) -> f64 {
    if cfg.warmup <= 0.0 {
        return cfg.eta_max;
    }
    cfg.eta_max * (e / cfg.warmup).clamp(0.0, 1.0)
}

/// Teacher-forcing probability for `epoch` (0-based): 1 at the first epoch,
/// 0 at the last, linear in between.
pub fn tf_ratio(epoch: usize, epochs: usize) -> f64 {
    if epochs <= 1 {
        1.0
    } else {
        1.0 - epoch as f64 / (epochs - 1) as f64
    }
}

/// Batch-averaged loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossComponents {
    pub pose: f64,
    pub emotion: f64,
    pub intent: f64,
    pub kl: f64,
}

/// `λ_p·J_pose + λ_e·J_emotion + λ_y·J_intent + η·J_KL`.
pub fn total_loss(cfg: &RvaeConfig, c: &LossComponents, eta: f64) -> f64 {
    cfg.lambda_pose * c.pose + cfg.lambda_emotion * c.emotion + cfg.lambda_intent * c.intent + eta * c.kl
}

/// Closed-form KL of `N(μ, σ²)` from `N(0, 1)` for one dimension.
pub fn kl_dimension(mu: f64, sigma: f64) -> f64 {
    let var = sigma * sigma;
    0.5 * (mu * mu + var - var.ln() - 1.0)
}

/// `h = μ + σ ⊙ ε`.
pub fn reparameterize(mu: &[f64], sigma: &[f64], eps: &[f64]) -> Vec<f64> {
    mu.iter().zip(sigma).zip(eps).map(|((m, s), e)| m + s * e).collect()
}

/// Pick the true previous frame with probability `tau`, otherwise the
/// model's prediction with its label channel thresholded at 0.5.
pub fn scheduled_input<R: Rng + ?Sized>(truth: &[f64], predicted: &[f64], tau: f64, rng: &mut R) -> Vec<f64> {
    if rng.random::<f64>() < tau {
        truth.to_vec()
    } else {
        let mut p = predicted.to_vec();
        if let Some(l) = p.get_mut(FEATURE_DIM) {
            *l = if *l >= 0.5 { 1.0 } else { 0.0 };
        }
        p
    }
}

// ------------------------------------------------------------ tape losses

fn selector<T: Scalar>(tape: &mut Tape<T>, confidence: bool) -> Var {
    let cols = if confidence { NUM_KEYPOINTS } else { 2 * NUM_KEYPOINTS };
    let mut m = vec![T::zero(); POSE_DIM * cols];
    for j in 0..NUM_KEYPOINTS {
        if confidence {
            m[(3 * j + 2) * cols + j] = T::one();
        } else {
            m[(3 * j) * cols + 2 * j] = T::one();
            m[(3 * j + 1) * cols + 2 * j + 1] = T::one();
        }
    }
    tape.input(POSE_DIM, cols, m)
}

/// Confidence-weighted Huber on `(ũ, ṽ)` residuals plus squared error on the
/// confidence channels; both summed over joints and averaged over rows.
///
/// `weights` holds the target confidence of every joint (`rows×17`,
/// constant), to which `ε₀` is added.
pub fn pose_loss<T: Scalar>(tape: &mut Tape<T>, cfg: &RvaeConfig, predicted: Var, target: Var) -> Var {
    let rows = tape.shape(predicted).0;
    let tgt = tape.value(target).to_vec();
    let w: Vec<T> = tgt
        .chunks(POSE_DIM)
        .flat_map(|r| (0..NUM_KEYPOINTS).map(move |j| r[3 * j + 2] + T::from_f64(cfg.confidence_offset)))
        .collect();
    let w = tape.input(rows, NUM_KEYPOINTS, w);
    let resid = tape.sub(predicted, target);
    let sel_uv = selector(tape, false);
    let uv = tape.matmul(resid, sel_uv);
    let hub = tape.huber_pairs(uv, cfg.huber_delta);
    let weighted = tape.mul(hub, w);
    let a = tape.sum_all(weighted);
    let sel_c = selector(tape, true);
    let c = tape.matmul(resid, sel_c);
    let c2 = tape.square(c);
    let b = tape.sum_all(c2);
    let a = tape.scale(a, cfg.xi_pose / rows as f64);
    let b = tape.scale(b, cfg.xi_confidence / rows as f64);
    tape.add(a, b)
}

/// Mean over rows of `KL(target ‖ predicted)` on the emotion simplex.
pub fn emotion_loss<T: Scalar>(tape: &mut Tape<T>, predicted: Var, target: Var) -> Var {
    let k = intentkit_neuro::loss::kl_div(tape, target, predicted);
    tape.mean_all(k)
}

/// Mean binary cross-entropy of label logits.
pub fn intent_loss<T: Scalar>(tape: &mut Tape<T>, logits: Var, target: Var) -> Var {
    let b = tape.bce_with_logits(logits, target);
    tape.mean_all(b)
}

/// `Σ_d max(KL_d, δ)` where `KL_d` is averaged over the batch rows.
pub fn kl_regularizer<T: Scalar>(tape: &mut Tape<T>, mu: Var, logvar: Var, free_bits: f64) -> Var {
    let (b, _) = tape.shape(mu);
    let mu2 = tape.square(mu);
    let var = tape.exp(logvar);
    let s = tape.add(mu2, var);
    let s = tape.sub(s, logvar);
    let s = tape.add_scalar(s, -1.0);
    let per = tape.scale(s, 0.5);
    let ones = tape.input(1, b, vec![T::one(); b]);
    let col_sum = tape.matmul(ones, per);
    let mean = tape.scale(col_sum, 1.0 / b as f64);
    let floored = tape.floor_max(mean, free_bits);
    tape.sum_all(floored)
}

// ------------------------------------------------------------ model

/// Output of one decoder step.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedFrame {
    pub pose_hat: [f64; POSE_DIM],
    pub emotion_hat: [f64; EMOTION_DIM],
    pub label_prob: f64,
}

impl DecodedFrame {
    /// The 59-value vector fed back to the decoder: confidences clamped to
    /// [0, 1] and the label thresholded.
    pub fn as_input(&self) -> [f64; LABELED_DIM] {
        let mut out = [0.0; LABELED_DIM];
        out[..POSE_DIM].copy_from_slice(&self.pose_hat);
        for j in 0..NUM_KEYPOINTS {
            out[3 * j + 2] = out[3 * j + 2].clamp(0.0, 1.0);
        }
        out[POSE_DIM..FEATURE_DIM].copy_from_slice(&self.emotion_hat);
        out[FEATURE_DIM] = if self.label_prob >= 0.5 { 1.0 } else { 0.0 };
        out
    }
}

struct EncoderLayer {
    linear: Linear,
    norm: BatchNorm1d,
}

pub struct MintRvae {
    pub config: RvaeConfig,
    /// Statistics of the training data; inputs are standardized with these.
    pub stats: StandardizationStats,
    pub params: ParamSet,
    mlp: Vec<EncoderLayer>,
    enc_gru: GruCell,
    mu_head: Linear,
    logvar_head: Linear,
    dec_init: Linear,
    dec_gru: GruCell,
    pose_head: Linear,
    emotion_head: Linear,
    label_head: Linear,
    bank: Option<ResidualBank>,
}

/// Teacher-forced residuals of training windows, one row per frame:
/// 58 feature residuals (standardized pose, raw emotion) followed by 17
/// missing-keypoint flags. `count` holds how many windows were fitted.
#[derive(Clone, Copy)]
struct ResidualBank {
    rows: ParamId,
    count: ParamId,
}

const BANK_COLS: usize = FEATURE_DIM + NUM_KEYPOINTS;

/// Decoder state variables for one step.
struct StepOut {
    pose: Var,
    emotion: Var,
    label_logit: Var,
    hidden: Var,
}

/// Tape variables of the four batch-level loss terms.
pub struct BatchLoss {
    pub pose: Var,
    pub emotion: Var,
    pub intent: Var,
    pub kl: Var,
}

impl MintRvae {
    pub fn new(config: RvaeConfig, stats: StandardizationStats, seed: u64) -> Result<Self> {
        config.validate()?;
        stats.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let mut width = config.input_dim;
        let mut mlp = Vec::new();
        for (i, &out) in config.encoder_mlp.iter().enumerate() {
            mlp.push(EncoderLayer {
                linear: Linear::new(&mut ps, &format!("enc.mlp{i}"), width, out, &mut rng),
                norm: BatchNorm1d::new(&mut ps, &format!("enc.bn{i}"), out),
            });
            width = out;
        }
        let enc_gru = GruCell::new(&mut ps, "enc.gru", width, config.encoder_hidden, &mut rng);
        let mu_head = Linear::new(&mut ps, "enc.mu", config.encoder_hidden, config.latent_dim, &mut rng);
        let logvar_head = Linear::new(&mut ps, "enc.logvar", config.encoder_hidden, config.latent_dim, &mut rng);
        let dec_init = Linear::new(&mut ps, "dec.init", config.latent_dim, config.decoder_hidden, &mut rng);
        let dec_gru = GruCell::new(&mut ps, "dec.gru", config.input_dim + config.latent_dim, config.decoder_hidden, &mut rng);
        let pose_head = Linear::new(&mut ps, "dec.pose", config.decoder_hidden, POSE_DIM, &mut rng);
        let emotion_head = Linear::new(&mut ps, "dec.emotion", config.decoder_hidden, EMOTION_DIM, &mut rng);
        let label_head = Linear::new(&mut ps, "dec.label", config.decoder_hidden, 1, &mut rng);
        let bank = (config.residual_bank > 0).then(|| ResidualBank {
            rows: ps.buffer("obs.residual", config.residual_bank * config.window, BANK_COLS, 0.0),
            count: ps.buffer("obs.count", 1, 1, 0.0),
        });
        Ok(Self {
            config,
            stats,
            params: ps,
            mlp,
            enc_gru,
            mu_head,
            logvar_head,
            dec_init,
            dec_gru,
            pose_head,
            emotion_head,
            label_head,
            bank,
        })
    }

    /// Zero the Gaussian heads (μ = 0, σ = 1 for every input).
    pub fn zero_encoder_heads(&mut self) {
        self.params.zero_matching("enc.mu.");
        self.params.zero_matching("enc.logvar.");
    }

    /// Zero the three decoder output heads.
    pub fn zero_decoder_heads(&mut self) {
        for name in ["dec.pose.", "dec.emotion.", "dec.label."] {
            self.params.zero_matching(name);
        }
    }

    /// Standardized 59-value view of a labeled frame.
    pub fn frame_input(&self, f: &MultimodalFrame) -> Result<[f64; LABELED_DIM]> {
        self.stats.apply_frame(f).labeled_features()
    }

    /// Map a standardized generated vector back to dataset space, adding
    /// one bank row of observation noise when given.
    fn to_dataset_frame(&self, v: &[f64; LABELED_DIM], noise: Option<&[f32]>) -> MultimodalFrame {
        let mut v = *v;
        if let Some(r) = noise {
            for (x, e) in v[..FEATURE_DIM].iter_mut().zip(r) {
                *x += *e as f64;
            }
        }
        let mut f = MultimodalFrame::from_labeled(&v);
        f.pose = self.stats.invert(&f.pose);
        for j in 0..NUM_KEYPOINTS {
            f.pose[3 * j + 2] = f.pose[3 * j + 2].clamp(0.0, 1.0);
            if noise.is_some_and(|r| r[FEATURE_DIM + j] > 0.5) {
                f.pose[3 * j..3 * j + 3].fill(0.0);
            }
        }
        f.emotion.iter_mut().for_each(|q| *q = q.max(0.0));
        let sum: f64 = f.emotion.iter().sum();
        if sum > 1e-9 {
            f.emotion.iter_mut().for_each(|q| *q /= sum);
        } else {
            f.emotion = [1.0 / EMOTION_DIM as f64; EMOTION_DIM];
        }
        f
    }

    /// Number of fitted residual windows.
    pub fn residual_windows(&self) -> usize {
        self.bank.map_or(0, |b| self.params.get(b.count).data[0] as usize)
    }

    /// Decoder outputs for each window when every previous frame is the
    /// true one and the latent code is the posterior mean. Frames the
    /// decoder does not predict are returned unchanged.
    pub fn teacher_forced(&self, batch: &[Vec<[f64; LABELED_DIM]>]) -> Result<Vec<Vec<[f64; LABELED_DIM]>>> {
        let b = batch.len();
        let len = batch.first().map_or(0, Vec::len);
        if b == 0 || len == 0 || batch.iter().any(|w| w.len() != len) {
            return Err(Error::invalid("batch windows must share a non-zero length"));
        }
        let mut tape = Tape::<f32>::eval();
        let steps: Vec<Var> = (0..len)
            .map(|t| tape.input(b, LABELED_DIM, batch.iter().flat_map(|w| w[t].iter().map(|&x| x as f32)).collect()))
            .collect();
        let (mu, _) = self.encode_vars(&mut tape, &steps)?;
        let first = usize::from(!self.config.zero_start);
        let mut hidden = self.decoder_init(&mut tape, mu);
        let mut prev = if self.config.zero_start { tape.zeros(b, LABELED_DIM) } else { steps[0] };
        let mut out = batch.to_vec();
        for t in first..len {
            let step = self.decode_vars(&mut tape, mu, prev, hidden);
            hidden = step.hidden;
            for (i, w) in out.iter_mut().enumerate() {
                let f = read_frame(&tape, &step, i);
                w[t] = f.as_input();
                w[t][FEATURE_DIM] = f.label_prob;
            }
            prev = steps[t];
        }
        Ok(out)
    }

    /// Fill the residual bank from randomly chosen training windows.
    fn fit_observation_model(&mut self, data: &[Vec<[f64; LABELED_DIM]>], rng: &mut ChaCha8Rng) -> Result<()> {
        let Some(bank) = self.bank else { return Ok(()) };
        let mut idx: Vec<usize> = (0..data.len()).collect();
        idx.shuffle(rng);
        idx.truncate(self.config.residual_bank);
        let mut rows = vec![0.0f32; self.config.residual_bank * self.config.window * BANK_COLS];
        let mut slot = 0;
        for chunk in idx.chunks(64) {
            let batch: Vec<Vec<[f64; LABELED_DIM]>> = chunk.iter().map(|&i| data[i].clone()).collect();
            let pred = self.teacher_forced(&batch)?;
            for (truth, hat) in batch.iter().zip(&pred) {
                for (t, (x, y)) in truth.iter().zip(hat).enumerate() {
                    let row = &mut rows[(slot * self.config.window + t) * BANK_COLS..][..BANK_COLS];
                    for d in 0..FEATURE_DIM {
                        row[d] = (x[d] - y[d]) as f32;
                    }
                    for j in 0..NUM_KEYPOINTS {
                        if x[3 * j + 2] <= 0.0 {
                            row[3 * j..3 * j + 3].fill(0.0);
                            row[FEATURE_DIM + j] = 1.0;
                        }
                    }
                }
                slot += 1;
            }
        }
        self.params.get_mut(bank.rows).data = rows;
        self.params.get_mut(bank.count).data[0] = slot as f32;
        Ok(())
    }

    /// Encoder over time-major inputs (`steps[t]` is `B×59`).
    fn encode_vars<T: Scalar>(&self, tape: &mut Tape<T>, steps: &[Var]) -> Result<(Var, Var)> {
        let b = tape.shape(steps[0]).0;
        let mut x = tape.concat_rows(steps);
        for layer in &self.mlp {
            let y = layer.linear.forward(tape, &self.params, x);
            let y = layer.norm.forward(tape, &self.params, y)?;
            x = tape.relu(y);
        }
        let embedded: Vec<Var> = (0..steps.len()).map(|t| tape.slice_rows(x, t * b, b)).collect();
        let h0 = tape.zeros(b, self.config.encoder_hidden);
        let hs = self.enc_gru.run(tape, &self.params, &embedded, h0);
        let last = *hs.last().expect("non-empty sequence");
        let mu = self.mu_head.forward(tape, &self.params, last);
        let logvar = self.logvar_head.forward(tape, &self.params, last);
        Ok((mu, logvar))
    }

    fn decoder_init<T: Scalar>(&self, tape: &mut Tape<T>, h: Var) -> Var {
        let pre = self.dec_init.forward(tape, &self.params, h);
        tape.tanh(pre)
    }

    fn decode_vars<T: Scalar>(&self, tape: &mut Tape<T>, h: Var, prev: Var, hidden: Var) -> StepOut {
        let x = tape.concat_cols(&[prev, h]);
        let hidden = self.dec_gru.step(tape, &self.params, x, hidden);
        let pose = self.pose_head.forward(tape, &self.params, hidden);
        let logits = self.emotion_head.forward(tape, &self.params, hidden);
        let emotion = tape.softmax_rows(logits);
        let label_logit = self.label_head.forward(tape, &self.params, hidden);
        StepOut { pose, emotion, label_logit, hidden }
    }

    /// Posterior `(μ, σ)` of one standardized labeled sequence (eval mode).
    pub fn encode(&self, frames: &[[f64; LABELED_DIM]]) -> Result<(Vec<f64>, Vec<f64>)> {
        if frames.is_empty() {
            return Err(Error::invalid("cannot encode an empty sequence"));
        }
        let mut tape = Tape::<f64>::eval();
        let steps: Vec<Var> = frames.iter().map(|f| tape.input(1, LABELED_DIM, f.to_vec())).collect();
        let (mu, logvar) = self.encode_vars(&mut tape, &steps)?;
        let sigma = tape.value(logvar).iter().map(|lv| (0.5 * lv).exp()).collect();
        Ok((tape.value(mu).to_vec(), sigma))
    }

    /// Initial decoder hidden state for a latent code.
    pub fn initial_hidden(&self, h: &[f64]) -> Vec<f64> {
        let mut tape = Tape::<f64>::eval();
        let hv = tape.input(1, h.len(), h.to_vec());
        let init = self.decoder_init(&mut tape, hv);
        tape.value(init).to_vec()
    }

    /// One decoder step for a single sequence.
    pub fn decode_step(&self, h: &[f64], prev: &[f64; LABELED_DIM], hidden: &[f64]) -> (DecodedFrame, Vec<f64>) {
        let mut tape = Tape::<f64>::eval();
        let hv = tape.input(1, h.len(), h.to_vec());
        let pv = tape.input(1, LABELED_DIM, prev.to_vec());
        let hid = tape.input(1, hidden.len(), hidden.to_vec());
        let out = self.decode_vars(&mut tape, hv, pv, hid);
        (read_frame(&tape, &out, 0), tape.value(out.hidden).to_vec())
    }

    /// Build the four loss terms for a batch of standardized windows.
    ///
    /// `batch[b]` holds `T` rows of 59 values. Teacher forcing uses the true
    /// previous frame with probability `tau` per row and step; otherwise
    /// the detached prediction is fed back.
    pub fn batch_loss<T: Scalar>(&self, tape: &mut Tape<T>, batch: &[Vec<[f64; LABELED_DIM]>], tau: f64, rng: &mut ChaCha8Rng) -> Result<BatchLoss> {
        let b = batch.len();
        let len = batch[0].len();
        if b == 0 || len < 2 || batch.iter().any(|w| w.len() != len) {
            return Err(Error::invalid("batch windows must share a length of at least 2"));
        }
        let step_rows = |t: usize| -> Vec<T> { batch.iter().flat_map(|w| w[t].iter().map(|&x| T::from_f64(x))).collect() };
        let steps: Vec<Var> = (0..len).map(|t| tape.input(b, LABELED_DIM, step_rows(t))).collect();
        let (mu, logvar) = self.encode_vars(tape, &steps)?;

        let eps = tape.normal_noise(b, self.config.latent_dim);
        let eps = tape.input(b, self.config.latent_dim, eps);
        let half = tape.scale(logvar, 0.5);
        let sigma = tape.exp(half);
        let noise = tape.mul(sigma, eps);
        let h = tape.add(mu, noise);

        let first_target = usize::from(!self.config.zero_start);
        let mut hidden = self.decoder_init(tape, h);
        let mut prev = if self.config.zero_start { tape.zeros(b, LABELED_DIM) } else { steps[0] };
        let (mut poses, mut emotions, mut labels) = (Vec::new(), Vec::new(), Vec::new());
        for t in first_target..len {
            if t > first_target {
                let mut rows = Vec::with_capacity(b * LABELED_DIM);
                let last = poses.len() - 1;
                for (i, w) in batch.iter().enumerate() {
                    let pred = read_frame(tape, &StepOut { pose: poses[last], emotion: emotions[last], label_logit: labels[last], hidden }, i);
                    let chosen = scheduled_input(&w[t - 1], &pred.as_input(), tau, rng);
                    rows.extend(chosen.into_iter().map(T::from_f64));
                }
                prev = tape.input(b, LABELED_DIM, rows);
            }
            let out = self.decode_vars(tape, h, prev, hidden);
            hidden = out.hidden;
            poses.push(out.pose);
            emotions.push(out.emotion);
            labels.push(out.label_logit);
        }

        let targets = &steps[first_target..];
        let tgt = tape.concat_rows(targets);
        let tgt_pose = tape.slice_cols(tgt, 0, POSE_DIM);
        let tgt_emotion = tape.slice_cols(tgt, POSE_DIM, EMOTION_DIM);
        let tgt_label = tape.slice_cols(tgt, FEATURE_DIM, 1);
        let pose_hat = tape.concat_rows(&poses);
        let emotion_hat = tape.concat_rows(&emotions);
        let label_logit = tape.concat_rows(&labels);
        Ok(BatchLoss {
            pose: pose_loss(tape, &self.config, pose_hat, tgt_pose),
            emotion: emotion_loss(tape, emotion_hat, tgt_emotion),
            intent: intent_loss(tape, label_logit, tgt_label),
            kl: kl_regularizer(tape, mu, logvar, self.config.free_bits),
        })
    }

    /// Weighted sum of the batch loss terms on the tape.
    pub fn combine<T: Scalar>(&self, tape: &mut Tape<T>, l: &BatchLoss, eta: f64) -> Var {
        let c = &self.config;
        let p = tape.scale(l.pose, c.lambda_pose);
        let e = tape.scale(l.emotion, c.lambda_emotion);
        let y = tape.scale(l.intent, c.lambda_intent);
        let k = tape.scale(l.kl, eta);
        let s = tape.add(p, e);
        let s = tape.add(s, y);
        tape.add(s, k)
    }

    /// Decode `len` frames from each latent code, fully autoregressively,
    /// starting from a zero frame. Returns standardized 59-value frames.
    pub fn decode_codes(&self, codes: &[Vec<f64>], len: usize) -> Vec<Vec<[f64; LABELED_DIM]>> {
        let b = codes.len();
        if b == 0 {
            return Vec::new();
        }
        let latent = self.config.latent_dim;
        let mut tape = Tape::<f32>::eval();
        let h = tape.input(b, latent, codes.iter().flatten().map(|&x| x as f32).collect());
        let mut hidden = self.decoder_init(&mut tape, h);
        let mut prev = tape.zeros(b, LABELED_DIM);
        let mut out = vec![Vec::with_capacity(len); b];
        for _ in 0..len {
            let step = self.decode_vars(&mut tape, h, prev, hidden);
            hidden = step.hidden;
            let mut rows = Vec::with_capacity(b * LABELED_DIM);
            for (i, seq) in out.iter_mut().enumerate() {
                let f = read_frame(&tape, &step, i);
                let mut v = f.as_input();
                v[FEATURE_DIM] = f.label_prob;
                seq.push(v);
                rows.extend(f.as_input().iter().map(|&x| x as f32));
            }
            prev = tape.input(b, LABELED_DIM, rows);
        }
        out
    }

    /// Draw `n` sequences of `len` frames from the prior. Sequence `i` uses
    /// its own random stream, so the result does not depend on `exec`.
    pub fn sample(&self, n: usize, len: usize, seed: u64, exec: Exec) -> Vec<SequenceRecord> {
        let latent = self.config.latent_dim;
        let codes: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut rng = Self::stream(seed, i);
                (0..latent).map(|_| intentkit_neuro::standard_normal(&mut rng)).collect()
            })
            .collect();
        self.render(&codes, len, seed, exec)
    }

    /// Decode the posterior mean of each standardized window.
    pub fn reconstruct(&self, windows: &[Vec<[f64; LABELED_DIM]>], seed: u64, exec: Exec) -> Result<Vec<SequenceRecord>> {
        let len = windows.first().map_or(0, Vec::len);
        let mut codes = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(64) {
            let mut tape = Tape::<f32>::eval();
            let steps: Vec<Var> = (0..len)
                .map(|t| tape.input(chunk.len(), LABELED_DIM, chunk.iter().flat_map(|w| w[t].iter().map(|&x| x as f32)).collect()))
                .collect();
            let (mu, _) = self.encode_vars(&mut tape, &steps)?;
            codes.extend(tape.value(mu).chunks(self.config.latent_dim).map(|c| c.iter().map(|&x| x as f64).collect::<Vec<_>>()));
        }
        Ok(self.render(&codes, len, seed, exec))
    }

    fn stream(seed: u64, i: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        rng
    }

    /// Decode codes to dataset-space records, adding observation noise from
    /// a residual window picked on the sequence's own stream.
    fn render(&self, codes: &[Vec<f64>], len: usize, seed: u64, exec: Exec) -> Vec<SequenceRecord> {
        const CHUNK: usize = 64;
        let fitted = self.residual_windows();
        let picks: Vec<Option<usize>> = (0..codes.len())
            .map(|i| {
                let mut rng = Self::stream(seed ^ 0x000b_5e7e, i);
                (fitted > 0).then(|| rng.random_range(0..fitted))
            })
            .collect();
        let chunks: Vec<&[Vec<f64>]> = codes.chunks(CHUNK).collect();
        let decoded: Vec<Vec<Vec<[f64; LABELED_DIM]>>> = par::map(exec, &chunks, |c| self.decode_codes(c, len));
        let w = self.config.window;
        let bank = self.bank.map(|b| &self.params.get(b.rows).data);
        decoded
            .into_iter()
            .flatten()
            .enumerate()
            .map(|(i, frames)| {
                let frames = frames
                    .iter()
                    .enumerate()
                    .map(|(t, v)| {
                        let noise = picks[i].zip(bank).map(|(p, rows)| &rows[(p * w + t % w) * BANK_COLS..][..BANK_COLS]);
                        self.to_dataset_frame(v, noise)
                    })
                    .collect();
                SequenceRecord::new(format!("synth-{seed}-{i:06}"), "synthetic", Environment::Synthetic, frames)
            })
            .collect()
    }

    pub fn to_checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint::from_params(ModelKind::Mintrvae, config_map(&self.config), Some(self.stats.clone()), &self.params)
    }

    pub fn from_checkpoint(ckpt: &ModelCheckpoint) -> Result<Self> {
        if ckpt.model_kind != ModelKind::Mintrvae {
            return Err(Error::Checkpoint(format!("expected a mintrvae checkpoint, found {:?}", ckpt.model_kind)));
        }
        let config: RvaeConfig = ckpt.config_as()?;
        let stats = ckpt
            .standardization
            .clone()
            .ok_or_else(|| Error::Checkpoint("mintrvae checkpoint has no standardization statistics".into()))?;
        let mut model = Self::new(config, stats, 0)?;
        ckpt.restore_params(&mut model.params)?;
        Ok(model)
    }
}

fn read_frame<T: Scalar>(tape: &Tape<T>, out: &StepOut, row: usize) -> DecodedFrame {
    let mut pose_hat = [0.0; POSE_DIM];
    for (d, s) in pose_hat.iter_mut().zip(&tape.value(out.pose)[row * POSE_DIM..(row + 1) * POSE_DIM]) {
        *d = s.as_f64();
    }
    let mut emotion_hat = [0.0; EMOTION_DIM];
    for (d, s) in emotion_hat.iter_mut().zip(&tape.value(out.emotion)[row * EMOTION_DIM..(row + 1) * EMOTION_DIM]) {
        *d = s.as_f64();
    }
    let z = tape.value(out.label_logit)[row].as_f64();
    DecodedFrame { pose_hat, emotion_hat, label_prob: 1.0 / (1.0 + (-z).exp()) }
}

// ------------------------------------------------------------ training

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLoss {
    pub epoch: usize,
    #[serde(rename = "J_pose")]
    pub pose: f64,
    #[serde(rename = "J_emotion")]
    pub emotion: f64,
    #[serde(rename = "J_intent")]
    pub intent: f64,
    #[serde(rename = "J_KL")]
    pub kl: f64,
    pub eta: f64,
    pub tau: f64,
    pub total: f64,
}

pub fn write_loss_log<W: Write>(writer: W, log: &[EpochLoss]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in log {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Standardized training windows of every labeled sequence.
pub fn training_windows(seqs: &[SequenceRecord], stats: &StandardizationStats, w: usize, stride: usize) -> Result<Vec<Vec<[f64; LABELED_DIM]>>> {
    let mut out = Vec::new();
    for s in seqs {
        let frames = s
            .frames
            .iter()
            .map(|f| stats.apply_frame(f).labeled_features())
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::invalid(format!("sequence '{}': {e}", s.sequence_id)))?;
        for win in windows(s, w, stride) {
            out.push(frames[win.start..win.start + w].to_vec());
        }
    }
    Ok(out)
}

fn clip_gradients(grads: &mut [Option<Vec<f32>>], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grads.iter().flatten().flat_map(|g| g.iter()).map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if norm > max_norm {
        let k = (max_norm / norm) as f32;
        grads.iter_mut().flatten().for_each(|g| g.iter_mut().for_each(|x| *x *= k));
    }
}

/// Fit standardization on `train`, then optimize the composite objective.
///
/// Aborts with [`Error::Numerical`] naming the first loss term that becomes
/// non-finite.
pub fn train(train: &[SequenceRecord], config: &RvaeConfig, seed: u64) -> Result<(MintRvae, Vec<EpochLoss>)> {
    config.validate()?;
    let fitted = fit_standardization(train)?;
    for w in &fitted.warnings {
        log::warn!("{w}");
    }
    let mut model = MintRvae::new(config.clone(), fitted.stats, seed)?;
    let data = training_windows(train, &model.stats, config.window, config.stride)?;
    if data.is_empty() {
        return Err(Error::invalid(format!("no training windows of length {}", config.window)));
    }
    let mut adam = Adam::new(&model.params, config.lr, config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_7a1e);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let momentum = model.mlp.first().map_or(0.1, |l| l.norm.momentum);

    for epoch in 0..config.epochs {
        let tau = tf_ratio(epoch, config.epochs);
        order.shuffle(&mut rng);
        let mut sums = LossComponents::default();
        let mut total = 0.0;
        let mut eta = 0.0;
        let mut seen = 0usize;
        for (bi, idx) in order.chunks(config.batch_size).enumerate() {
            // A batch of one window still has `T` rows for batch norm.
            let batch: Vec<Vec<[f64; LABELED_DIM]>> = idx.iter().map(|&i| data[i].clone()).collect();
            let unit = match config.warmup_unit {
                WarmupUnit::Epoch => epoch as f64,
                WarmupUnit::Step => adam.step_count() as f64,
            };
            eta = kl_weight(config, unit);
            let mut tape = Tape::<f32>::train(rng.random());
            let parts = model.batch_loss(&mut tape, &batch, tau, &mut rng)?;
            let loss = model.combine(&mut tape, &parts, eta);
            let c = LossComponents {
                pose: tape.scalar(parts.pose) as f64,
                emotion: tape.scalar(parts.emotion) as f64,
                intent: tape.scalar(parts.intent) as f64,
                kl: tape.scalar(parts.kl) as f64,
            };
            for (name, v) in [("pose", c.pose), ("emotion", c.emotion), ("intent", c.intent), ("KL", c.kl)] {
                if !v.is_finite() {
                    let origin = tape.first_nonfinite().map(|(i, op)| format!(" (first at node {i}, op {op})")).unwrap_or_default();
                    return Err(Error::Numerical(format!("{name} loss is non-finite at epoch {epoch}, batch {bi}{origin}")));
                }
            }
            let grads = tape.backward(loss);
            let mut g = grads.for_params(&tape, &model.params);
            clip_gradients(&mut g, config.grad_clip);
            adam.step(&mut model.params, &g);
            apply_stat_updates(&mut model.params, &tape.take_stat_updates(), momentum);

            let n = batch.len() as f64;
            sums.pose += c.pose * n;
            sums.emotion += c.emotion * n;
            sums.intent += c.intent * n;
            sums.kl += c.kl * n;
            total += tape.scalar(loss) as f64 * n;
            seen += batch.len();
        }
        let n = seen as f64;
        let row = EpochLoss {
            epoch: epoch + 1,
            pose: sums.pose / n,
            emotion: sums.emotion / n,
            intent: sums.intent / n,
            kl: sums.kl / n,
            eta,
            tau,
            total: total / n,
        };
        log::debug!("rvae epoch {} total {:.4}", row.epoch, row.total);
        log.push(row);
    }
    model.fit_observation_model(&data, &mut rng)?;
    Ok((model, log))
}

// ------------------------------------------------------------ rebalancing

/// An augmented training set.
#[derive(Clone, Debug)]
pub struct Rebalanced {
    /// Original records followed by the appended synthetic positives.
    pub records: Vec<SequenceRecord>,
    pub appended: usize,
    pub generated: usize,
    pub positive_fraction: f64,
}

fn window_counts(seqs: &[SequenceRecord], w: usize, k: usize) -> Result<(usize, usize)> {
    let (mut pos, mut total) = (0, 0);
    for s in seqs {
        for win in windows(s, w, 1) {
            pos += usize::from(window_label(win.frames, k)? == 1);
            total += 1;
        }
    }
    Ok((pos, total))
}

/// Append synthetic positive windows until at least `target_ratio` of all
/// stride-1 windows are positive. Synthetic negatives are discarded.
pub fn rebalance(dataset: &[SequenceRecord], model: &MintRvae, target_ratio: f64, seed: u64, exec: Exec) -> Result<Rebalanced> {
    if !(target_ratio > 0.0 && target_ratio <= 1.0) {
        return Err(Error::invalid("target ratio must be in (0, 1]"));
    }
    let w = model.config.window;
    let k = model.config.k_run;
    let (pos, total) = window_counts(dataset, w, k)?;
    let fraction = |p: usize, t: usize| if t == 0 { 0.0 } else { p as f64 / t as f64 };
    if total > 0 && fraction(pos, total) >= target_ratio {
        return Ok(Rebalanced { records: dataset.to_vec(), appended: 0, generated: 0, positive_fraction: fraction(pos, total) });
    }
    if target_ratio >= 1.0 {
        return Err(Error::invalid("a target ratio of 1 cannot be reached while negative windows exist"));
    }
    // Each synthetic sequence is exactly one window.
    let needed = ((target_ratio * total as f64 - pos as f64) / (1.0 - target_ratio)).ceil().max(1.0) as usize;
    let budget = 10 * needed;
    let mut records = dataset.to_vec();
    let (mut appended, mut generated, mut round) = (0usize, 0usize, 0u64);
    while appended < needed {
        let batch = (needed - appended).max(16) * 2;
        let synth = model.sample(batch, w, seed.wrapping_add(round.wrapping_mul(0x9e37_79b9)), exec);
        round += 1;
        generated += synth.len();
        for s in synth {
            if appended < needed && window_label(&s.frames, k)? == 1 {
                records.push(s);
                appended += 1;
            }
        }
        if generated >= budget && (appended as f64) < 0.01 * generated as f64 {
            return Err(Error::invalid(format!(
                "generator cannot rebalance: {appended} positive windows out of {generated} samples"
            )));
        }
        if generated >= 100 * budget {
            return Err(Error::invalid("generator cannot rebalance: sampling budget exhausted"));
        }
    }
    let positive_fraction = fraction(pos + appended, total + appended);
    Ok(Rebalanced { records, appended, generated, positive_fraction })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RvaeConfig {
        RvaeConfig { encoder_mlp: vec![16, 8], encoder_hidden: 8, latent_dim: 4, decoder_hidden: 8, ..RvaeConfig::default() }
    }

    fn model(cfg: RvaeConfig) -> MintRvae {
        MintRvae::new(cfg, StandardizationStats::identity(), 1).unwrap()
    }

    fn frame(seed: u64) -> [f64; LABELED_DIM] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = [0.0; LABELED_DIM];
        for x in v[..POSE_DIM].iter_mut() {
            *x = rng.random_range(-1.0..1.0);
        }
        for j in 0..NUM_KEYPOINTS {
            v[3 * j + 2] = rng.random_range(0.0..1.0);
        }
        let e: Vec<f64> = (0..EMOTION_DIM).map(|_| rng.random_range(0.1..1.0)).collect();
        let s: f64 = e.iter().sum();
        for m in 0..EMOTION_DIM {
            v[POSE_DIM + m] = e[m] / s;
        }
        v[FEATURE_DIM] = f64::from(u8::from(rng.random::<bool>()));
        v
    }

    #[test]
    fn kl_weight_ramp() {
        let c = RvaeConfig::default();
        assert!((kl_weight(&c, 2500.0) - 0.4).abs() < 1e-12);
        assert_eq!(kl_weight(&c, 5000.0), 0.8);
        assert_eq!(kl_weight(&c, 20000.0), 0.8);
        assert_eq!(kl_weight(&c, 0.0), 0.0);
    }

    #[test]
    fn total_is_linear_combination() {
        let c = RvaeConfig::default();
        let parts = LossComponents { pose: 1.0, emotion: 0.5, intent: 0.2, kl: 3.2 };
        assert!((total_loss(&c, &parts, kl_weight(&c, 2500.0)) - 26.48).abs() < 1e-12);
        assert_eq!(total_loss(&c, &LossComponents::default(), 0.8), 0.0);
    }

    #[test]
    fn free_bits_floor() {
        let mut tape = Tape::<f64>::eval();
        let mu = tape.variable(1, 32, vec![0.0; 32]);
        let lv = tape.variable(1, 32, vec![0.0; 32]);
        let k = kl_regularizer(&mut tape, mu, lv, 0.1);
        assert!((tape.scalar(k) - 3.2).abs() < 1e-12);
        let g = tape.backward(k);
        assert!(g.get(mu).unwrap().iter().all(|&x| x == 0.0));

        let mut tape = Tape::<f64>::eval();
        let mut m = vec![0.0; 32];
        m[0] = 2.0;
        let mu = tape.input(1, 32, m);
        let lv = tape.input(1, 32, vec![0.0; 32]);
        let k = kl_regularizer(&mut tape, mu, lv, 0.1);
        assert!((tape.scalar(k) - 5.1).abs() < 1e-12);
        assert_eq!(kl_dimension(0.0, 1.0), 0.0);
    }

    #[test]
    fn pose_loss_single_joint() {
        let cfg = RvaeConfig::default();
        let mut tape = Tape::<f64>::eval();
        let mut p = vec![0.0; POSE_DIM];
        p[0] = 0.3;
        p[1] = 0.4;
        let pred = tape.input(1, POSE_DIM, p);
        let tgt = tape.input(1, POSE_DIM, vec![0.0; POSE_DIM]);
        let l = pose_loss(&mut tape, &cfg, pred, tgt);
        assert!((tape.scalar(l) - 0.01).abs() < 1e-12);
        let same = pose_loss(&mut tape, &cfg, tgt, tgt);
        assert_eq!(tape.scalar(same), 0.0);
    }

    #[test]
    fn emotion_loss_closed_forms() {
        let mut tape = Tape::<f64>::eval();
        let mut onehot = vec![0.0; EMOTION_DIM];
        onehot[2] = 1.0;
        let t = tape.input(1, EMOTION_DIM, onehot);
        let u = tape.input(1, EMOTION_DIM, vec![1.0 / 7.0; EMOTION_DIM]);
        let l = emotion_loss(&mut tape, u, t);
        assert!((tape.scalar(l) - 7f64.ln()).abs() < 1e-12);
        let z = emotion_loss(&mut tape, t, t);
        assert_eq!(tape.scalar(z), 0.0);
    }

    #[test]
    fn zero_heads() {
        let mut m = model(tiny());
        m.zero_encoder_heads();
        m.zero_decoder_heads();
        let seq: Vec<_> = (0..5).map(frame).collect();
        let (mu, sigma) = m.encode(&seq).unwrap();
        assert!(mu.iter().all(|&x| x == 0.0));
        assert!(sigma.iter().all(|&x| x == 1.0));
        assert_eq!(m.encode(&seq).unwrap(), (mu, sigma));
        let hid = m.initial_hidden(&[0.5; 4]);
        let (f, _) = m.decode_step(&[0.5; 4], &frame(9), &hid);
        assert!(f.pose_hat.iter().all(|&x| x == 0.0));
        assert!(f.emotion_hat.iter().all(|&q| (q - 1.0 / 7.0).abs() < 1e-15));
        assert_eq!(f.label_prob, 0.5);
        assert!(m.encode(&[]).is_err());
    }

    #[test]
    fn reparameterize_identities() {
        assert_eq!(reparameterize(&[1.0, -2.0], &[0.5, 3.0], &[0.0, 0.0]), vec![1.0, -2.0]);
        assert_eq!(reparameterize(&[0.0], &[1.0], &[0.7]), vec![0.7]);
    }

    #[test]
    fn scheduled_input_endpoints_and_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truth = [1.0; LABELED_DIM];
        let mut pred = [0.0; LABELED_DIM];
        pred[FEATURE_DIM] = 0.7;
        assert_eq!(scheduled_input(&truth, &pred, 1.0, &mut rng), truth.to_vec());
        let p = scheduled_input(&truth, &pred, 0.0, &mut rng);
        assert_eq!(p[0], 0.0);
        assert_eq!(p[FEATURE_DIM], 1.0);
        let hits = (0..10_000).filter(|_| scheduled_input(&truth, &pred, 0.3, &mut rng)[0] == 1.0).count();
        assert!((hits as f64 / 1e4 - 0.3).abs() <= 0.02);
    }

    #[test]
    fn tf_schedule_endpoints() {
        assert_eq!(tf_ratio(0, 10), 1.0);
        assert_eq!(tf_ratio(9, 10), 0.0);
        assert_eq!(tf_ratio(0, 1), 1.0);
    }

    #[test]
    fn sample_is_on_simplex_and_deterministic() {
        let m = model(tiny());
        assert!(m.sample(0, 15, 1, Exec::Sequential).is_empty());
        let a = m.sample(5, 15, 7, Exec::Sequential);
        assert_eq!(a, m.sample(5, 15, 7, Exec::Parallel));
        for s in &a {
            assert!(s.is_synthetic());
            assert_eq!(s.len(), 15);
            for f in &s.frames {
                assert!((f.emotion.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                f.validate(1e-6).unwrap();
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let m = model(tiny());
        let back = MintRvae::from_checkpoint(&ModelCheckpoint::from_bytes(&m.to_checkpoint().to_bytes().unwrap()).unwrap()).unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(back.config, m.config);
    }

    #[test]
    fn config_rejects_bad_weights() {
        assert!(RvaeConfig { xi_pose: 0.5, ..RvaeConfig::default() }.validate().is_err());
        assert!(RvaeConfig { lambda_pose: -1.0, ..RvaeConfig::default() }.validate().is_err());
    }
}
