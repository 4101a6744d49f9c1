//! Evaluation: metrics, the k-run decision rule, protocols, onset-aligned
//! trajectories and the realism score.

pub mod evaluate;
pub mod metrics;
pub mod protocol;
pub mod realism;
pub mod trajectory;

pub use evaluate::{evaluate, score_windows, summarize, EvalSummary, WindowScores, DEFAULT_THRESHOLD};
pub use metrics::{
    auroc, default_grid, longest_run, mean_sd, pr_sweep, run_score, score_deployment_trials, sequence_decision, ConfusionCounts, MetricTable, Ratio,
    SweepPoint, Trial, write_sweep_csv,
};
pub use protocol::{check_leakage, cross_scene, cross_subject_folds, run_protocol, ProtocolKind, ProtocolOptions, ProtocolSplit, Variant};
pub use realism::{discriminative_score, discriminative_score_with, feature_windows, DiscriminatorConfig, RealismScore};
pub use trajectory::{onset_aligned_trajectories, Trajectories, TrajectoryPoint, DEFAULT_HORIZON};
