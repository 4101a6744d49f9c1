use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use intentkit::datamodel::{load_checkpoint, load_dataset, save_checkpoint, save_dataset, DatasetFormat, SequenceRecord};
use intentkit::evalkit::protocol::{write_runs_csv, write_summary_csv};
use intentkit::evalkit::trajectory::write_trajectory_csv;
use intentkit::evalkit::{
    cross_scene, cross_subject_folds, default_grid, discriminative_score, feature_windows, onset_aligned_trajectories, pr_sweep,
    run_protocol, score_windows, write_sweep_csv, ProtocolKind, ProtocolOptions, Variant,
};
use intentkit::features::read_adapter;
use intentkit::intentnet::{train_classifier, write_history, Backbone, ClassifierConfig, FeatureSet, IntentClassifier, Rebalancer};
use intentkit::mintrvae::{self, rebalance, write_loss_log, MintRvae, RvaeConfig};
use intentkit::par::Exec;
use intentkit::stream::{replay, write_trace_jsonl, Engine, StreamConfig};
use intentkit::synthgen::{generate, preset, ScenarioConfig};
use intentkit::Error;

use crate::{Cli, Command};

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(cli, a),
        Command::TrainRvae(a) => train_rvae(cli, a),
        Command::Generate(a) => generate_cmd(cli, a),
        Command::Rebalance(a) => rebalance_cmd(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Evaluate(a) => evaluate(cli, a),
        Command::Sweep(a) => sweep(cli, a),
        Command::Trajectories(a) => trajectories(cli, a),
        Command::Realism(a) => realism(cli, a),
        Command::Stream(a) => stream(cli, a),
        Command::Replay(a) => replay_cmd(cli, a),
    }
}

/// Report every problem at once as a validation error.
fn check(problems: Vec<String>) -> Result<()> {
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Invalid(problems.join("; ")).into())
    }
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value = serde_json::from_str(&text).map_err(Error::from).with_context(|| format!("parsing {}", path.display()))?;
    Ok(value)
}

fn config_or_default<T: DeserializeOwned + Default>(cli: &Cli) -> Result<T> {
    cli.config.as_deref().map_or_else(|| Ok(T::default()), read_config)
}

fn required_out(cli: &Cli) -> Result<&Path> {
    cli.out.as_deref().ok_or_else(|| Error::Invalid("--out is required for this command".into()).into())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn load(path: &Path) -> Result<Vec<SequenceRecord>> {
    let format = DatasetFormat::from_path(path)?;
    load_dataset(path, format).with_context(|| format!("loading {}", path.display()))
}

fn save(path: &Path, seqs: &[SequenceRecord]) -> Result<()> {
    let format = DatasetFormat::from_path(path)?;
    save_dataset(path, seqs, format).with_context(|| format!("writing {}", path.display()))
}

fn load_rvae(path: &Path) -> Result<MintRvae> {
    Ok(MintRvae::from_checkpoint(&load_checkpoint(path)?)?)
}

fn load_classifier(path: &Path) -> Result<IntentClassifier> {
    Ok(IntentClassifier::from_checkpoint(&load_checkpoint(path)?)?)
}

/// `--out` when given, stdout otherwise.
fn output(cli: &Cli) -> Result<Box<dyn Write>> {
    Ok(match &cli.out {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn synth(cli: &Cli, a: &crate::SynthArgs) -> Result<()> {
    let out = required_out(cli)?;
    let mut cfg: ScenarioConfig = match &cli.config {
        Some(p) => read_config(p)?,
        None => preset(&a.preset)?,
    };
    if let Some(n) = a.n {
        cfg.n_sequences = n;
    }
    if let Some(f) = a.intent_fraction {
        cfg.intent_fraction = f;
    }
    cfg.seed = cli.seed;
    let seqs = generate(&cfg)?;
    save(out, &seqs)?;
    log::info!("wrote {} sequences to {}", seqs.len(), out.display());
    Ok(())
}

fn train_rvae(cli: &Cli, a: &crate::TrainRvaeArgs) -> Result<()> {
    let out = required_out(cli)?;
    let mut cfg: RvaeConfig = config_or_default(cli)?;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = a.stride {
        cfg.stride = s;
    }
    let data = load(&a.data)?;
    let (model, log) = mintrvae::train(&data, &cfg, cli.seed)?;
    save_checkpoint(&model.to_checkpoint(), out)?;
    write_loss_log(create(&sibling(out, "loss.csv"))?, &log)?;
    Ok(())
}

fn generate_cmd(cli: &Cli, a: &crate::GenerateArgs) -> Result<()> {
    let out = required_out(cli)?;
    let model = load_rvae(&a.model)?;
    let len = a.len.unwrap_or(model.config.window);
    check(if len == 0 { vec!["--len must be positive".into()] } else { vec![] })?;
    save(out, &model.sample(a.n, len, cli.seed, Exec::Parallel))
}

fn rebalance_cmd(cli: &Cli, a: &crate::RebalanceArgs) -> Result<()> {
    let out = required_out(cli)?;
    let data = load(&a.data)?;
    let model = load_rvae(&a.model)?;
    let r = rebalance(&data, &model, a.target, cli.seed, Exec::Parallel)?;
    eprintln!("appended {} synthetic sequences ({} generated); positive window fraction {:.3}", r.appended, r.generated, r.positive_fraction);
    save(out, &r.records)
}

fn train(cli: &Cli, a: &crate::TrainArgs) -> Result<()> {
    let out = required_out(cli)?;
    let mut problems = Vec::new();
    if a.rebalance_target.is_some() && a.rebalance_model.is_none() {
        problems.push("--rebalance-target needs --rebalance-model".to_string());
    }
    let backbone = a.backbone.as_deref().map(Backbone::parse).transpose();
    let features = a.features.as_deref().map(FeatureSet::parse).transpose();
    for e in [backbone.as_ref().err(), features.as_ref().err()].into_iter().flatten() {
        problems.push(e.to_string());
    }
    check(problems)?;
    let mut cfg: ClassifierConfig = config_or_default(cli)?;
    if let Ok(Some(b)) = backbone {
        cfg.backbone = b;
    }
    if let Ok(Some(f)) = features {
        cfg.feature_set = f;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if a.hidden.is_some() {
        cfg.hidden = a.hidden;
    }
    if let Some(s) = a.stride {
        cfg.stride = s;
    }
    let data = load(&a.data)?;
    let val = a.val.as_deref().map(load).transpose()?.unwrap_or_default();
    let rvae = a.rebalance_model.as_deref().map(load_rvae).transpose()?;
    let rebalancer =
        rvae.as_ref().map(|model| Rebalancer { model, target_ratio: a.rebalance_target.unwrap_or(0.5), seed: cli.seed ^ 0xa11 });
    let (model, history) = train_classifier(&data, &val, &cfg, cli.seed, rebalancer.as_ref())?;
    save_checkpoint(&model.to_checkpoint(), out)?;
    write_history(create(&sibling(out, "history.csv"))?, &history)?;
    Ok(())
}

/// Configuration file accepted by `evaluate`.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EvaluateConfig {
    classifier: ClassifierConfig,
    rvae: RvaeConfig,
}

fn split_list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty())
}

fn evaluate(cli: &Cli, a: &crate::EvaluateArgs) -> Result<()> {
    let mut problems = Vec::new();
    let kind = ProtocolKind::parse(&a.protocol);
    if let Err(e) = &kind {
        problems.push(e.to_string());
    }
    if matches!(kind, Ok(ProtocolKind::CrossScene | ProtocolKind::Custom)) && a.folds.is_some() {
        problems.push("--folds only applies to the cross_subject protocol".into());
    }
    if matches!(kind, Ok(ProtocolKind::Custom)) {
        problems.push("the custom protocol is only available through the library".into());
    }
    let backbones: Vec<_> = split_list(&a.backbones).map(Backbone::parse).collect();
    let features: Vec<_> = split_list(&a.features).map(FeatureSet::parse).collect();
    for e in backbones.iter().filter_map(|b| b.as_ref().err()).chain(features.iter().filter_map(|f| f.as_ref().err())) {
        problems.push(e.to_string());
    }
    if backbones.is_empty() || features.is_empty() {
        problems.push("need at least one backbone and one feature set".into());
    }
    let seeds: Vec<Result<u64, _>> = a.seeds.as_deref().map_or(vec![Ok(cli.seed)], |s| split_list(s).map(str::parse::<u64>).collect());
    if seeds.iter().any(Result::is_err) || seeds.is_empty() {
        problems.push(format!("--seeds must be a comma-separated list of integers, got '{}'", a.seeds.as_deref().unwrap_or("")));
    }
    check(problems)?;

    let mut cfg: EvaluateConfig = config_or_default(cli)?;
    if let Some(e) = a.epochs {
        cfg.classifier.epochs = e;
    }
    if let Some(s) = a.stride {
        cfg.classifier.stride = s;
    }
    if let Some(e) = a.rvae_epochs {
        cfg.rvae.epochs = e;
    }
    let data = load(&a.data)?;
    let split = match kind? {
        ProtocolKind::CrossSubject => cross_subject_folds(&data, a.folds.unwrap_or(5))?,
        _ => cross_scene(),
    };
    let mut variants = Vec::new();
    for b in backbones.into_iter().flatten() {
        for f in features.iter().flatten() {
            let classifier = ClassifierConfig { backbone: b, feature_set: *f, ..cfg.classifier.clone() };
            let name = format!("{}/{}", b.as_str(), f.as_str());
            variants.push(Variant { name: name.clone(), classifier: classifier.clone(), rebalance_to: None });
            if let Some(r) = a.rebalance {
                variants.push(Variant { name: format!("{name}+vae"), classifier, rebalance_to: Some(r) });
            }
        }
    }
    let opts = ProtocolOptions { seeds: seeds.into_iter().flatten().collect(), rvae: cfg.rvae, ..ProtocolOptions::default() };
    let results = run_protocol(&data, &split, &variants, &opts)?;
    write_summary_csv(output(cli)?, &results.summary)?;
    if let Some(out) = &cli.out {
        write_runs_csv(create(&sibling(out, "runs.csv"))?, &results.runs)?;
    }
    Ok(())
}

fn sweep(cli: &Cli, a: &crate::SweepArgs) -> Result<()> {
    let model = load_classifier(&a.model)?;
    let data = load(&a.data)?;
    let scores = score_windows(&model, &data, Exec::Parallel)?;
    let points = match a.level.as_str() {
        "frame" => pr_sweep(&scores.frame_scores, &scores.frame_labels, &default_grid())?,
        "sequence" => pr_sweep(&scores.sequence_scores(model.config.k_run)?, &scores.window_labels, &default_grid())?,
        other => return Err(Error::Invalid(format!("unknown level '{other}' (frame, sequence)")).into()),
    };
    write_sweep_csv(output(cli)?, &a.variant, &points)?;
    Ok(())
}

fn trajectories(cli: &Cli, a: &crate::TrajectoriesArgs) -> Result<()> {
    let model = load_classifier(&a.model)?;
    let data = load(&a.data)?;
    let t = onset_aligned_trajectories(&model, &data, a.horizon, Exec::Parallel)?;
    if t.skipped > 0 {
        eprintln!("skipped {} sequences without an intent onset", t.skipped);
    }
    write_trajectory_csv(output(cli)?, &a.variant, &t.points)?;
    Ok(())
}

fn realism(cli: &Cli, a: &crate::RealismArgs) -> Result<()> {
    let model = load_rvae(&a.model)?;
    let data = load(&a.data)?;
    let w = model.config.window;
    let real = feature_windows(&data, w, a.stride.max(1));
    let synthetic = feature_windows(&model.sample(real.len(), w, cli.seed, Exec::Parallel), w, w);
    let score = discriminative_score(&real, &synthetic, cli.seed)?;
    let mut out = output(cli)?;
    serde_json::to_writer_pretty(&mut out, &score)?;
    writeln!(out)?;
    Ok(())
}

fn stream_config(cli: &Cli, threshold: Option<f64>) -> Result<StreamConfig> {
    let mut cfg: StreamConfig = config_or_default(cli)?;
    if let Some(t) = threshold {
        cfg.threshold = t;
    }
    Ok(cfg)
}

#[derive(Serialize)]
struct StreamLine<'a> {
    seq_id: &'a str,
    frame_idx: u64,
    prob: Option<f64>,
    state: intentkit::stream::Engagement,
    latency_ms: f64,
}

fn stream(cli: &Cli, a: &crate::StreamArgs) -> Result<()> {
    let model = load_classifier(&a.model)?;
    let mut engine = Engine::new(&model, stream_config(cli, a.threshold)?)?;
    let mut out = output(cli)?;
    let mut current: Option<String> = None;
    for rec in read_adapter(io::stdin().lock()) {
        let frame = rec.and_then(|r| r.to_frame().map(|f| (r.seq_id, f)));
        let (seq_id, frame) = match frame {
            Ok(x) => x,
            Err(e) => {
                log::warn!("skipping input record: {e}");
                continue;
            }
        };
        if current.as_deref() != Some(seq_id.as_str()) {
            engine.reset();
            current = Some(seq_id.clone());
        }
        match engine.push_frame(frame) {
            Ok(o) => {
                let line = StreamLine { seq_id: &seq_id, frame_idx: o.frame_idx, prob: o.prob, state: o.engagement.state, latency_ms: o.latency_ms };
                serde_json::to_writer(&mut out, &line)?;
                writeln!(out)?;
                out.flush()?;
            }
            Err(e) => log::warn!("dropped frame: {e}"),
        }
    }
    let stats = engine.stats();
    log::info!("processed {} frames, dropped {}, p95 {:.2} ms", stats.frames, stats.dropped, stats.p95_ms);
    Ok(())
}

fn replay_cmd(cli: &Cli, a: &crate::ReplayArgs) -> Result<()> {
    let model = load_classifier(&a.model)?;
    let data = load(&a.data)?;
    let mut engine = Engine::new(&model, stream_config(cli, a.threshold)?)?;
    let (trace, stats) = replay(&mut engine, &data)?;
    match (&cli.out, a.stats) {
        (Some(p), _) => write_trace_jsonl(create(p)?, &trace)?,
        (None, false) => write_trace_jsonl(io::stdout().lock(), &trace)?,
        (None, true) => {}
    }
    if a.stats {
        let mut stdout = io::stdout().lock();
        serde_json::to_writer_pretty(&mut stdout, &stats)?;
        writeln!(stdout)?;
    }
    Ok(())
}
