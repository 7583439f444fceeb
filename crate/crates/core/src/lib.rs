//! Generalized few-shot learning on frozen non-negative features with a
//! linear classifier trained without any base-class samples.

pub mod affine;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod model;
pub mod normalize;
pub mod pipeline;

pub use affine::{apply_affine, init_affine, train_affine, AffineConfig, AffineParams};
pub use dataset::{
    generate_synthetic, load_dataset, sample_episode, save_dataset, split_base_novel, BaseMode, Episode, EpisodeSpec,
    FeatureDataset, FeatureVector, Format, LabeledFeature, SampleSource, SyntheticConfig,
};
pub use error::{Error, Result};
pub use eval::{aggregate, evaluate, EpisodeAggregate, EvalReport, Metric, MetricSummary};
pub use model::{
    extend_classifier, finetune, load_checkpoint, save_checkpoint, train_base, Checkpoint, LinearClassifier,
    LogitMode, TrainConfig,
};
pub use normalize::{compute_stats, mean_center, variance_balance, NormalizationConfig, WeightStats};
pub use pipeline::{run_episode, run_episodes, Ablation, PipelineConfig, PipelineData};
