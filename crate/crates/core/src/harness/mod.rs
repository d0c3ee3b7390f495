//! Training, evaluation, baselines and experiment helpers.

pub mod baselines;
pub mod config;
pub mod gradcheck;
pub mod metrics;
pub mod sweep;
pub mod synth;
pub mod train;

pub use baselines::{baseline_rank, baseline_scorer, BaselineMethod, ItemKnnScorer, PopScorer};
pub use config::{EvalPrefixes, TrainingConfig};
pub use gradcheck::{gradcheck_suite, GradcheckReport};
pub use metrics::{evaluate, format_table, rank_of, ranked_items, MetricReport, Scorer, DEFAULT_KS};
pub use sweep::{sweep_beta, sweep_csv, SweepRow, DEFAULT_BETAS};
pub use synth::{planted_markov, planted_markov_split, SynthConfig};
pub use train::{prepare, prepare_split, split_validation, train, Checkpoint, EpochLog, PreparedData, TrainOutcome};
