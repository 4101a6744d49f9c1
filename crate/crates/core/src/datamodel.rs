//! Frames, sequences, windows, dataset files and model checkpoints.
//!
//! Pose values are stored keypoint-major as `(ũ, ṽ, s)` triplets after
//! bounding-box normalization. Emotion probabilities follow [`EMOTIONS`].

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use intentkit_neuro::ParamSet;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::features::StandardizationStats;

pub const NUM_KEYPOINTS: usize = 17;
pub const POSE_DIM: usize = 3 * NUM_KEYPOINTS;
pub const EMOTION_DIM: usize = 7;
/// Classifier view: pose followed by emotion.
pub const FEATURE_DIM: usize = POSE_DIM + EMOTION_DIM;
/// Generative view: classifier view followed by the intent label.
pub const LABELED_DIM: usize = FEATURE_DIM + 1;

/// On-disk emotion order.
pub const EMOTIONS: [&str; EMOTION_DIM] = ["happy", "sad", "neutral", "surprise", "angry", "fear", "disgust"];
pub const HAPPY: usize = 0;
pub const NEUTRAL: usize = 2;

pub const DEFAULT_WINDOW: usize = 15;
pub const DEFAULT_K_RUN: usize = 7;
pub const DEFAULT_FRAME_RATE: f64 = 15.0;

/// Emotion rows read from files may deviate from the simplex by this much.
pub const FILE_SIMPLEX_TOLERANCE: f64 = 1e-3;

/// One detected keypoint in pixel space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoint {
    pub u: f64,
    pub v: f64,
    pub s: f64,
}

/// Person bounding box in pixel space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox {
    pub u_min: f64,
    pub v_min: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(u_min: f64, v_min: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self { u_min, v_min, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.u_min, self.v_min, self.w, self.h].iter().all(|x| x.is_finite());
        if !finite || self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::invalid(format!(
                "degenerate bounding box (w={}, h={})",
                self.w, self.h
            )));
        }
        Ok(())
    }
}

/// One timestep: normalized pose, emotion distribution and optional intent label.
#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalFrame {
    pub pose: [f64; POSE_DIM],
    pub emotion: [f64; EMOTION_DIM],
    pub label: Option<u8>,
}

impl MultimodalFrame {
    /// A frame without a person detection: zero pose and zero confidences,
    /// neutral emotion.
    pub fn missing(label: Option<u8>) -> Self {
        let mut emotion = [0.0; EMOTION_DIM];
        emotion[NEUTRAL] = 1.0;
        Self { pose: [0.0; POSE_DIM], emotion, label }
    }

    pub fn confidence(&self, keypoint: usize) -> f64 {
        self.pose[3 * keypoint + 2]
    }

    /// The 58-value classifier view.
    pub fn features(&self) -> [f64; FEATURE_DIM] {
        let mut out = [0.0; FEATURE_DIM];
        out[..POSE_DIM].copy_from_slice(&self.pose);
        out[POSE_DIM..].copy_from_slice(&self.emotion);
        out
    }

    /// The 59-value generative view; fails on unlabeled frames.
    pub fn labeled_features(&self) -> Result<[f64; LABELED_DIM]> {
        let label = self.label.ok_or_else(|| Error::invalid("frame has no intent label"))?;
        let mut out = [0.0; LABELED_DIM];
        out[..FEATURE_DIM].copy_from_slice(&self.features());
        out[FEATURE_DIM] = label as f64;
        Ok(out)
    }

    /// Build a frame from a 59-value generative vector. The label is
    /// binarized at 0.5.
    pub fn from_labeled(values: &[f64]) -> Self {
        assert_eq!(values.len(), LABELED_DIM);
        let mut pose = [0.0; POSE_DIM];
        pose.copy_from_slice(&values[..POSE_DIM]);
        let mut emotion = [0.0; EMOTION_DIM];
        emotion.copy_from_slice(&values[POSE_DIM..FEATURE_DIM]);
        Self { pose, emotion, label: Some(u8::from(values[FEATURE_DIM] >= 0.5)) }
    }

    /// Check finiteness, confidence range and the emotion simplex to `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        if let Some(i) = self.pose.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("non-finite pose value at index {i}")));
        }
        for k in 0..NUM_KEYPOINTS {
            let s = self.confidence(k);
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::invalid(format!("keypoint {k} confidence {s} outside [0,1]")));
            }
        }
        let in_range = self.emotion.iter().all(|q| q.is_finite() && (-tol..=1.0 + tol).contains(q));
        let sum: f64 = self.emotion.iter().sum();
        if !in_range || (sum - 1.0).abs() > tol {
            return Err(Error::invalid(format!("emotion simplex violation (sum {sum})")));
        }
        if let Some(l) = self.label {
            if l > 1 {
                return Err(Error::invalid(format!("label {l} is not binary")));
            }
        }
        Ok(())
    }
}

/// Recording environment. `Synthetic` marks generator output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Environment {
    One,
    Two,
    Three,
    Synthetic,
}

impl Environment {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "1" => Ok(Self::One),
            "2" => Ok(Self::Two),
            "3" => Ok(Self::Three),
            "synthetic" => Ok(Self::Synthetic),
            other => Err(Error::invalid(format!("unknown environment '{other}'"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::One => "1",
            Self::Two => "2",
            Self::Three => "3",
            Self::Synthetic => "synthetic",
        }
    }
}

impl Serialize for Environment {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::One => s.serialize_u8(1),
            Self::Two => s.serialize_u8(2),
            Self::Three => s.serialize_u8(3),
            Self::Synthetic => s.serialize_str("synthetic"),
        }
    }
}

impl<'de> Deserialize<'de> for Environment {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(u64),
            Text(String),
        }
        let text = match Repr::deserialize(d)? {
            Repr::Num(n) => n.to_string(),
            Repr::Text(t) => t,
        };
        Environment::parse(&text).map_err(serde::de::Error::custom)
    }
}

/// An ordered run of frames from one tracked person.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceRecord {
    pub sequence_id: String,
    pub participant_id: String,
    pub environment: Environment,
    /// Index of `frames[0]` in the source recording.
    pub first_frame: u64,
    pub frames: Vec<MultimodalFrame>,
    pub frame_rate: f64,
}

impl SequenceRecord {
    pub fn new(sequence_id: impl Into<String>, participant_id: impl Into<String>, environment: Environment, frames: Vec<MultimodalFrame>) -> Self {
        Self {
            sequence_id: sequence_id.into(),
            participant_id: participant_id.into(),
            environment,
            first_frame: 0,
            frames,
            frame_rate: DEFAULT_FRAME_RATE,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn is_synthetic(&self) -> bool {
        self.environment == Environment::Synthetic
    }

    pub fn is_labeled(&self) -> bool {
        !self.frames.is_empty() && self.frames.iter().all(|f| f.label.is_some())
    }

    /// Frame labels; `None` if any frame is unlabeled.
    pub fn labels(&self) -> Option<Vec<u8>> {
        self.frames.iter().map(|f| f.label).collect()
    }

    /// Index of the first 0→1 label transition.
    pub fn onset(&self) -> Option<usize> {
        let labels = self.labels()?;
        (1..labels.len()).find(|&i| labels[i - 1] == 0 && labels[i] == 1)
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::invalid(format!("sequence '{}' has no frames", self.sequence_id)));
        }
        let labeled = self.frames.iter().filter(|f| f.label.is_some()).count();
        if labeled != 0 && labeled != self.frames.len() {
            return Err(Error::invalid(format!(
                "sequence '{}' labels {labeled} of {} frames; labels must be on all frames or none",
                self.sequence_id,
                self.frames.len()
            )));
        }
        for (i, f) in self.frames.iter().enumerate() {
            f.validate(tol)
                .map_err(|e| Error::invalid(format!("sequence '{}' frame {i}: {e}", self.sequence_id)))?;
        }
        Ok(())
    }
}

/// A contiguous run of frames borrowed from a sequence.
#[derive(Clone, Copy, Debug)]
pub struct Window<'a> {
    pub sequence_id: &'a str,
    pub start: usize,
    pub frames: &'a [MultimodalFrame],
}

/// Sliding windows of length `w` every `stride` frames. Sequences shorter
/// than `w` yield no windows and a warning.
pub fn windows(seq: &SequenceRecord, w: usize, stride: usize) -> Vec<Window<'_>> {
    assert!(w > 0 && stride > 0, "window length and stride must be positive");
    if seq.len() < w {
        log::warn!(
            "sequence '{}' has {} frames, fewer than the window length {w}",
            seq.sequence_id,
            seq.len()
        );
        return Vec::new();
    }
    (0..=seq.len() - w)
        .step_by(stride)
        .map(|start| Window { sequence_id: &seq.sequence_id, start, frames: &seq.frames[start..start + w] })
        .collect()
}

/// 1 iff at least `k` frames of the window are labeled positive.
pub fn window_label(frames: &[MultimodalFrame], k: usize) -> Result<u8> {
    let mut positives = 0;
    for (i, f) in frames.iter().enumerate() {
        match f.label {
            Some(l) => positives += usize::from(l == 1),
            None => return Err(Error::invalid(format!("window frame {i} is unlabeled"))),
        }
    }
    Ok(u8::from(positives >= k))
}

/// Fraction of stride-1 windows whose [`window_label`] is 1.
pub fn positive_window_fraction(seqs: &[SequenceRecord], w: usize, k: usize) -> Result<f64> {
    let (mut pos, mut total) = (0usize, 0usize);
    for s in seqs {
        for win in windows(s, w, 1) {
            pos += window_label(win.frames, k)? as usize;
            total += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { pos as f64 / total as f64 })
}

// ------------------------------------------------------------------ files

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetFormat {
    Jsonl,
    Csv,
}

impl DatasetFormat {
    /// Infer from a `.jsonl`/`.json` or `.csv` extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") | Some("ndjson") => Ok(Self::Jsonl),
            Some("csv") => Ok(Self::Csv),
            _ => Err(Error::invalid(format!(
                "cannot infer dataset format from '{}'; use .jsonl or .csv",
                path.display()
            ))),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameRow {
    seq_id: String,
    frame_idx: u64,
    participant_id: String,
    env_id: Environment,
    kp: Vec<f64>,
    emo: Vec<f64>,
    #[serde(default)]
    label: Option<u8>,
}

impl FrameRow {
    fn into_frame(self, line: usize) -> Result<(String, u64, String, Environment, MultimodalFrame)> {
        let err = |msg: String| Error::Parse { line, msg };
        let pose: [f64; POSE_DIM] = self
            .kp
            .try_into()
            .map_err(|v: Vec<f64>| err(format!("kp has {} values, expected {POSE_DIM}", v.len())))?;
        let emotion: [f64; EMOTION_DIM] = self
            .emo
            .try_into()
            .map_err(|v: Vec<f64>| err(format!("emo has {} values, expected {EMOTION_DIM}", v.len())))?;
        let frame = MultimodalFrame { pose, emotion, label: self.label };
        frame.validate(FILE_SIMPLEX_TOLERANCE).map_err(|e| err(e.to_string()))?;
        Ok((self.seq_id, self.frame_idx, self.participant_id, self.env_id, frame))
    }
}

fn rows_of(seq: &SequenceRecord) -> impl Iterator<Item = FrameRow> + '_ {
    seq.frames.iter().enumerate().map(move |(i, f)| FrameRow {
        seq_id: seq.sequence_id.clone(),
        frame_idx: seq.first_frame + i as u64,
        participant_id: seq.participant_id.clone(),
        env_id: seq.environment,
        kp: f.pose.to_vec(),
        emo: f.emotion.to_vec(),
        label: f.label,
    })
}

/// Source line, frame index, participant, environment and frame of one row.
type RowEntry = (usize, u64, String, Environment, MultimodalFrame);

/// Group parsed rows into sequences (first-appearance order), sort frames by
/// index and check identity consistency, duplicates and gaps.
fn assemble(rows: Vec<(usize, String, u64, String, Environment, MultimodalFrame)>) -> Result<Vec<SequenceRecord>> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<RowEntry>> = HashMap::new();
    for (line, seq, idx, pid, env, frame) in rows {
        let g = groups.entry(seq.clone()).or_insert_with(|| {
            order.push(seq.clone());
            Vec::new()
        });
        g.push((line, idx, pid, env, frame));
    }
    let mut out = Vec::with_capacity(order.len());
    for seq_id in order {
        let mut g = groups.remove(&seq_id).expect("grouped");
        g.sort_by_key(|r| r.1);
        let (first_line, first_idx, pid, env) = (g[0].0, g[0].1, g[0].2.clone(), g[0].3);
        for w in g.windows(2) {
            if w[0].1 == w[1].1 {
                return Err(Error::Parse {
                    line: w[0].0.max(w[1].0),
                    msg: format!("duplicate frame ({seq_id}, {})", w[1].1),
                });
            }
            if w[1].1 != w[0].1 + 1 {
                return Err(Error::Parse {
                    line: w[1].0,
                    msg: format!("sequence '{seq_id}' jumps from frame {} to {}", w[0].1, w[1].1),
                });
            }
        }
        if let Some(r) = g.iter().find(|r| r.2 != pid || r.3 != env) {
            return Err(Error::Parse {
                line: r.0,
                msg: format!("sequence '{seq_id}' changes participant or environment (first seen on line {first_line})"),
            });
        }
        let seq = SequenceRecord {
            sequence_id: seq_id,
            participant_id: pid,
            environment: env,
            first_frame: first_idx,
            frames: g.into_iter().map(|r| r.4).collect(),
            frame_rate: DEFAULT_FRAME_RATE,
        };
        seq.validate(FILE_SIMPLEX_TOLERANCE).map_err(|e| Error::Parse { line: first_line, msg: e.to_string() })?;
        out.push(seq);
    }
    Ok(out)
}

pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<SequenceRecord>> {
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: FrameRow = serde_json::from_str(&line).map_err(|e| Error::Parse { line: line_no, msg: e.to_string() })?;
        let (seq, idx, pid, env, frame) = row.into_frame(line_no)?;
        rows.push((line_no, seq, idx, pid, env, frame));
    }
    assemble(rows)
}

pub fn write_jsonl<W: Write>(mut writer: W, seqs: &[SequenceRecord]) -> Result<()> {
    for s in seqs {
        for row in rows_of(s) {
            serde_json::to_writer(&mut writer, &row)?;
            writer.write_all(b"\n")?;
        }
    }
    writer.flush()?;
    Ok(())
}

fn csv_header() -> Vec<String> {
    let mut h: Vec<String> = ["seq_id", "frame_idx", "participant_id", "env_id"].iter().map(|s| s.to_string()).collect();
    h.extend((0..POSE_DIM).map(|i| format!("kp_{i:02}")));
    h.extend((0..EMOTION_DIM).map(|i| format!("emo_{i}")));
    h.push("label".into());
    h
}

pub fn read_csv<R: Read>(reader: R) -> Result<Vec<SequenceRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let expected = csv_header();
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.to_string()).collect();
    if header != expected {
        return Err(Error::Parse { line: 1, msg: "CSV header does not match the frame schema".into() });
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let num = |j: usize| -> Result<f64> {
            rec[j].trim().parse::<f64>().map_err(|_| Error::Parse {
                line,
                msg: format!("column '{}' is not a number: '{}'", expected[j], &rec[j]),
            })
        };
        let frame_idx = rec[1].trim().parse::<u64>().map_err(|_| Error::Parse { line, msg: format!("bad frame_idx '{}'", &rec[1]) })?;
        let env = Environment::parse(&rec[3]).map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let kp = (0..POSE_DIM).map(|j| num(4 + j)).collect::<Result<Vec<_>>>()?;
        let emo = (0..EMOTION_DIM).map(|j| num(4 + POSE_DIM + j)).collect::<Result<Vec<_>>>()?;
        let label = match rec[LABELED_DIM + 3].trim() {
            "" | "null" => None,
            "0" => Some(0),
            "1" => Some(1),
            other => return Err(Error::Parse { line, msg: format!("label '{other}' is not 0, 1 or empty") }),
        };
        let row = FrameRow {
            seq_id: rec[0].to_string(),
            frame_idx,
            participant_id: rec[2].to_string(),
            env_id: env,
            kp,
            emo,
            label,
        };
        let (seq, idx, pid, env, frame) = row.into_frame(line)?;
        rows.push((line, seq, idx, pid, env, frame));
    }
    assemble(rows)
}

pub fn write_csv<W: Write>(writer: W, seqs: &[SequenceRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(csv_header())?;
    for s in seqs {
        for row in rows_of(s) {
            let mut rec = vec![row.seq_id, row.frame_idx.to_string(), row.participant_id, row.env_id.as_str().to_string()];
            rec.extend(row.kp.iter().chain(&row.emo).map(|x| x.to_string()));
            rec.push(row.label.map(|l| l.to_string()).unwrap_or_default());
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Vec<SequenceRecord>> {
    let file = File::open(path).map_err(|e| Error::invalid(format!("cannot open '{}': {e}", path.display())))?;
    match format {
        DatasetFormat::Jsonl => read_jsonl(BufReader::new(file)),
        DatasetFormat::Csv => read_csv(BufReader::new(file)),
    }
}

pub fn save_dataset(path: &Path, seqs: &[SequenceRecord], format: DatasetFormat) -> Result<()> {
    let w = BufWriter::new(File::create(path)?);
    match format {
        DatasetFormat::Jsonl => write_jsonl(w, seqs),
        DatasetFormat::Csv => write_csv(w, seqs),
    }
}

// ------------------------------------------------------------------ checkpoints

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"MINT1";
pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gru,
    Lstm,
    Transformer,
    Mintrvae,
    Discriminator,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Flatten a serializable configuration struct into checkpoint config entries.
pub fn config_map<T: Serialize>(config: &T) -> BTreeMap<String, serde_json::Value> {
    match serde_json::to_value(config) {
        Ok(serde_json::Value::Object(m)) => m.into_iter().collect(),
        _ => BTreeMap::new(),
    }
}

/// Trained parameters plus everything needed to rebuild the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub schema_version: u32,
    pub model_kind: ModelKind,
    pub config: BTreeMap<String, serde_json::Value>,
    pub standardization: Option<StandardizationStats>,
    pub arrays: Vec<NamedArray>,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    model_kind: ModelKind,
    config: BTreeMap<String, serde_json::Value>,
    standardization: Option<StandardizationStats>,
    arrays: Vec<ArrayEntry>,
}

impl ModelCheckpoint {
    /// Snapshot every array of `ps` (trainable and buffers) in registration order.
    pub fn from_params(
        model_kind: ModelKind,
        config: BTreeMap<String, serde_json::Value>,
        standardization: Option<StandardizationStats>,
        ps: &ParamSet,
    ) -> Self {
        let arrays = ps
            .iter()
            .map(|(_, p)| NamedArray { name: p.name.clone(), shape: vec![p.rows, p.cols], data: p.data.clone() })
            .collect();
        Self { schema_version: CHECKPOINT_SCHEMA_VERSION, model_kind, config, standardization, arrays }
    }

    /// Copy arrays into a freshly constructed parameter set with matching names.
    pub fn restore_params(&self, ps: &mut ParamSet) -> Result<()> {
        ps.load_named(self.arrays.iter().map(|a| (a.name.as_str(), a.data.as_slice())))
            .map_err(|e| Error::Checkpoint(e.to_string()))
    }

    /// Deserialize the whole config map into a typed configuration.
    pub fn config_as<T: serde::de::DeserializeOwned>(&self) -> Result<T> {
        let obj: serde_json::Map<String, serde_json::Value> = self.config.clone().into_iter().collect();
        serde_json::from_value(serde_json::Value::Object(obj)).map_err(|e| Error::Checkpoint(format!("config: {e}")))
    }

    pub fn config_value<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self
            .config
            .get(key)
            .ok_or_else(|| Error::Checkpoint(format!("config key '{key}' missing")))?;
        serde_json::from_value(v.clone()).map_err(|e| Error::Checkpoint(format!("config key '{key}': {e}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.arrays.is_empty() {
            return Err(Error::Checkpoint("checkpoint has no arrays".into()));
        }
        let mut entries = Vec::with_capacity(self.arrays.len());
        let mut offset = 0u64;
        for a in &self.arrays {
            let n: usize = a.shape.iter().product();
            if n != a.data.len() {
                return Err(Error::Checkpoint(format!(
                    "array '{}' has {} values but shape {:?}",
                    a.name,
                    a.data.len(),
                    a.shape
                )));
            }
            if self.arrays.iter().filter(|b| b.name == a.name).count() > 1 {
                return Err(Error::Checkpoint(format!("duplicate array name '{}'", a.name)));
            }
            entries.push(ArrayEntry { name: a.name.clone(), shape: a.shape.clone(), offset });
            offset += 4 * n as u64;
        }
        let header = Header {
            schema_version: self.schema_version,
            model_kind: self.model_kind,
            config: self.config.clone(),
            standardization: self.standardization.clone(),
            arrays: entries,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(9 + json.len() + offset as usize);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for a in &self.arrays {
            for x in &a.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 9 || &bytes[..5] != CHECKPOINT_MAGIC {
            return Err(bad("missing MINT1 magic bytes"));
        }
        let hlen = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
        let body = bytes.get(9..9 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        if header.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Checkpoint(format!(
                "schema version {} is not supported (expected {CHECKPOINT_SCHEMA_VERSION})",
                header.schema_version
            )));
        }
        let payload = &bytes[9 + hlen..];
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for (i, e) in header.arrays.iter().enumerate() {
            let need = 4 * e.shape.iter().product::<usize>() as u64;
            let end = header.arrays.get(i + 1).map(|n| n.offset).unwrap_or(payload.len() as u64);
            if end < e.offset || end - e.offset != need {
                return Err(Error::Checkpoint(format!(
                    "array '{}' expects {need} payload bytes for shape {:?}, found {}",
                    e.name,
                    e.shape,
                    end.saturating_sub(e.offset)
                )));
            }
            let raw = &payload[e.offset as usize..end as usize];
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            arrays.push(NamedArray { name: e.name.clone(), shape: e.shape.clone(), data });
        }
        if arrays.is_empty() {
            return Err(bad("checkpoint has no arrays"));
        }
        Ok(Self {
            schema_version: header.schema_version,
            model_kind: header.model_kind,
            config: header.config,
            standardization: header.standardization,
            arrays,
        })
    }
}

pub fn save_checkpoint(ckpt: &ModelCheckpoint, path: &Path) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::invalid(format!("cannot read '{}': {e}", path.display())))?;
    ModelCheckpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(label: Option<u8>) -> MultimodalFrame {
        MultimodalFrame::missing(label)
    }

    fn seq(n: usize) -> SequenceRecord {
        SequenceRecord::new("s", "p", Environment::One, (0..n).map(|_| frame(Some(0))).collect())
    }

    #[test]
    fn window_counts() {
        let s = seq(20);
        let w = windows(&s, 15, 1);
        assert_eq!(w.len(), 6);
        assert_eq!(w.iter().map(|w| w.start).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(windows(&seq(15), 15, 1).len(), 1);
        assert!(windows(&seq(14), 15, 1).is_empty());
        assert_eq!(windows(&seq(40), 15, 5).len(), 6);
    }

    #[test]
    fn window_label_threshold() {
        let mk = |pos: usize| -> Vec<MultimodalFrame> { (0..15).map(|i| frame(Some(u8::from(i < pos)))).collect() };
        assert_eq!(window_label(&mk(7), 7).unwrap(), 1);
        assert_eq!(window_label(&mk(6), 7).unwrap(), 0);
        assert_eq!(window_label(&mk(15), 7).unwrap(), 1);
        let mut w = mk(10);
        w[3].label = None;
        assert!(window_label(&w, 7).is_err());
    }

    #[test]
    fn emotion_simplex_is_enforced() {
        let mut f = frame(None);
        f.emotion[0] = 0.2;
        assert!(f.validate(FILE_SIMPLEX_TOLERANCE).unwrap_err().to_string().contains("emotion simplex violation"));
    }

    #[test]
    fn zero_checkpoint_payload_size() {
        let c = ModelCheckpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            model_kind: ModelKind::Gru,
            config: BTreeMap::new(),
            standardization: None,
            arrays: vec![NamedArray { name: "w".into(), shape: vec![2, 3], data: vec![0.0; 6] }],
        };
        let bytes = c.to_bytes().unwrap();
        let hlen = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        assert_eq!(bytes.len() - 9 - hlen, 24);
        assert_eq!(ModelCheckpoint::from_bytes(&bytes).unwrap(), c);
    }
}
