//! End-to-end episode pipeline: sample, extend, fine-tune with online hooks,
//! offline normalization, post linear optimization, evaluate.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::affine::{train_affine, AffineConfig, AffineParams};
use crate::dataset::{sample_episode, BaseMode, Episode, EpisodeSpec, FeatureDataset, SampleSource, SyntheticConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::model::{extend_classifier_with_std, finetune, LinearClassifier, Regularizer, TrainConfig};
use crate::normalize::{
    compute_stats, norm_equalize, variance_balance, NormalizationConfig, OnlineCentering, VarianceBalancing,
    WeightStats,
};

/// Post linear optimization settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostOptConfig {
    pub enabled: bool,
    /// Iterations keyed by shot; the largest key not above the episode's
    /// shot count applies.
    pub iterations_by_shot: BTreeMap<usize, usize>,
    /// `None` reuses the fine-tuning learning rate for the shot.
    pub learning_rate: Option<f64>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub novel_only: bool,
}

impl Default for PostOptConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            iterations_by_shot: BTreeMap::from([(1, 500), (5, 50), (10, 5)]),
            learning_rate: None,
            momentum: 0.9,
            weight_decay: 0.0,
            novel_only: false,
        }
    }
}

fn by_shot<T: Copy>(table: &BTreeMap<usize, T>, shot: usize) -> Option<T> {
    table
        .range(..=shot)
        .next_back()
        .or_else(|| table.iter().next())
        .map(|(_, v)| *v)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub data: u64,
    pub pretrain: u64,
    pub episode: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            data: 0,
            pretrain: 1,
            episode: 2,
        }
    }
}

/// How the input feature file is split into base-train, base-test and novel
/// pools.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Explicit novel class ids; when absent the last `n_novel_classes`
    /// classes of the table are novel.
    pub novel_classes: Option<Vec<u32>>,
    pub n_novel_classes: usize,
    /// Held-out samples per base class forming the base query pool.
    pub base_test_per_class: usize,
    /// Expected feature dimensionality, checked against the data when set.
    pub dim: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            novel_classes: None,
            n_novel_classes: 20,
            base_test_per_class: 50,
            dim: None,
        }
    }
}

/// Full experiment description; a bare `{}` yields the default protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    /// Fine-tuning learning rate keyed by shot, applied over
    /// `finetune.learning_rate`.
    pub finetune_lr_by_shot: BTreeMap<usize, f64>,
    /// Std of the novel-column initializer; `None` means `1/sqrt(d)`.
    pub novel_init_std: Option<f64>,
    pub normalization: NormalizationConfig,
    pub post_opt: PostOptConfig,
    pub episode: EpisodeSpec,
    pub mode: BaseMode,
    pub seeds: Seeds,
    pub data: DataConfig,
    /// Used when no feature file is given.
    pub synthetic: Option<SyntheticConfig>,
    /// L1 coefficient for the `l1` ablation.
    pub l1_strength: f64,
    /// Weight decay for the `l2` ablation.
    pub l2_strength: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            pretrain: TrainConfig::pretrain(),
            finetune: TrainConfig::finetune(5),
            finetune_lr_by_shot: BTreeMap::from([(1, 0.005), (5, 0.003), (10, 0.001)]),
            novel_init_std: None,
            normalization: NormalizationConfig::mvcn(),
            post_opt: PostOptConfig::default(),
            episode: EpisodeSpec::new(5, 5, 15, 0),
            mode: BaseMode::ZeroBase,
            seeds: Seeds::default(),
            data: DataConfig::default(),
            synthetic: None,
            l1_strength: 1e-3,
            l2_strength: 5e-2,
        }
    }
}

impl PipelineConfig {
    pub fn with_shot(mut self, shot: usize) -> Self {
        self.episode.k_shot = shot;
        self
    }

    pub fn finetune_config(&self, seed: u64) -> TrainConfig {
        let mut cfg = self.finetune.clone();
        if let Some(lr) = by_shot(&self.finetune_lr_by_shot, self.episode.k_shot) {
            cfg.learning_rate = lr;
        }
        cfg.seed = seed;
        cfg
    }

    pub fn affine_config(&self, finetune_lr: f64, seed: u64) -> AffineConfig {
        let iterations = by_shot(&self.post_opt.iterations_by_shot, self.episode.k_shot).unwrap_or(0);
        AffineConfig {
            train: TrainConfig {
                learning_rate: self.post_opt.learning_rate.unwrap_or(finetune_lr),
                momentum: self.post_opt.momentum,
                weight_decay: self.post_opt.weight_decay,
                regularizer: Regularizer::L2Decay,
                iterations,
                batch_size: None,
                seed,
                lr_milestones: Vec::new(),
                ..TrainConfig::finetune(self.episode.k_shot)
            },
            novel_only: self.post_opt.novel_only,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pretrain.validate()?;
        self.finetune.validate()?;
        self.normalization.validate()?;
        if self.episode.n_way == 0 || self.episode.k_shot == 0 || self.episode.query_per_class == 0 {
            return Err(Error::InvalidConfig("episode sizes must be positive".into()));
        }
        Ok(())
    }

    /// Returns a copy configured for one row of the ablation grid.
    pub fn for_ablation(&self, ablation: Ablation) -> PipelineConfig {
        let mut cfg = self.clone();
        let n = &mut cfg.normalization;
        n.online_mean_centering = OnlineCentering::Off;
        n.variance_balancing = VarianceBalancing::Off;
        n.cosine = false;
        n.freeze_base = false;
        n.norm_equalization = false;
        cfg.post_opt.enabled = false;
        cfg.mode = BaseMode::ZeroBase;

        let mvcn = |cfg: &mut PipelineConfig| {
            cfg.normalization.online_mean_centering = OnlineCentering::NovelOnly;
            cfg.normalization.variance_balancing = VarianceBalancing::Offline;
            cfg.post_opt.enabled = true;
        };
        match ablation {
            Ablation::None => {}
            Ablation::Mc => cfg.normalization.online_mean_centering = OnlineCentering::NovelOnly,
            Ablation::McVb => {
                cfg.normalization.online_mean_centering = OnlineCentering::NovelOnly;
                cfg.normalization.variance_balancing = VarianceBalancing::Offline;
            }
            Ablation::McVbLo => mvcn(&mut cfg),
            Ablation::Cosine => cfg.normalization.cosine = true,
            Ablation::FreezeBase => cfg.normalization.freeze_base = true,
            Ablation::L1 => {
                cfg.finetune.regularizer = Regularizer::L1;
                cfg.finetune.l1_coefficient = self.l1_strength;
                cfg.normalization.variance_balancing = VarianceBalancing::Offline;
                cfg.post_opt.enabled = true;
            }
            Ablation::L2 => {
                cfg.finetune.regularizer = Regularizer::L2Decay;
                cfg.finetune.weight_decay = self.l2_strength;
                cfg.normalization.variance_balancing = VarianceBalancing::Offline;
                cfg.post_opt.enabled = true;
            }
            Ablation::NormEq => cfg.normalization.norm_equalization = true,
            Ablation::VbInTraining => {
                cfg.normalization.online_mean_centering = OnlineCentering::NovelOnly;
                cfg.normalization.variance_balancing = VarianceBalancing::InTraining;
                cfg.post_opt.enabled = true;
            }
            Ablation::McBoth => {
                mvcn(&mut cfg);
                cfg.normalization.online_mean_centering = OnlineCentering::Both;
            }
            Ablation::Balanced => {
                mvcn(&mut cfg);
                cfg.mode = BaseMode::UndersampledBalanced;
            }
        }
        cfg
    }
}

/// Rows of the ablation and baseline tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Ablation {
    /// Plain fine-tuning of the joint linear classifier.
    None,
    Mc,
    McVb,
    McVbLo,
    Cosine,
    FreezeBase,
    L1,
    L2,
    NormEq,
    VbInTraining,
    McBoth,
    /// Full method plus an undersampled base support set.
    Balanced,
}

impl Ablation {
    pub const ALL: [Ablation; 12] = [
        Ablation::None,
        Ablation::Mc,
        Ablation::McVb,
        Ablation::McVbLo,
        Ablation::Cosine,
        Ablation::FreezeBase,
        Ablation::L1,
        Ablation::L2,
        Ablation::NormEq,
        Ablation::VbInTraining,
        Ablation::McBoth,
        Ablation::Balanced,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::Mc => "mc",
            Ablation::McVb => "mc+vb",
            Ablation::McVbLo => "mc+vb+lo",
            Ablation::Cosine => "cosine",
            Ablation::FreezeBase => "freeze-base",
            Ablation::L1 => "l1",
            Ablation::L2 => "l2",
            Ablation::NormEq => "norm-eq",
            Ablation::VbInTraining => "vb-in-training",
            Ablation::McBoth => "mc-both",
            Ablation::Balanced => "balanced",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown ablation `{s}`")))
    }
}

/// Inputs shared by every episode of a run.
#[derive(Clone, Copy)]
pub struct PipelineData<'a> {
    pub pretrained: &'a LinearClassifier,
    /// Read only when the pipeline runs in balanced mode.
    pub base_train: &'a (dyn SampleSource + Sync),
    pub base_test: &'a FeatureDataset,
    pub novel: &'a FeatureDataset,
}

/// Seeds for the stochastic stages of one episode. They depend only on the
/// run's episode seed and the episode index, so every ablation sees the same
/// episode and the same novel initialization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EpisodeSeeds {
    pub sample: u64,
    pub init: u64,
    pub train: u64,
}

impl EpisodeSeeds {
    pub fn derive(episode_seed: u64, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
        rng.set_stream(index);
        Self {
            sample: rng.random(),
            init: rng.random(),
            train: rng.random(),
        }
    }
}

/// Everything one episode produced.
#[derive(Clone, Debug)]
pub struct EpisodeTrace {
    pub episode: Episode,
    pub report: EvalReport,
    /// Statistics right after fine-tuning, before offline normalization.
    pub finetuned_stats: WeightStats,
    /// Statistics of the final classifier.
    pub final_stats: WeightStats,
    pub classifier: LinearClassifier,
    pub affine: Option<AffineParams>,
}

pub fn draw_episode(data: &PipelineData<'_>, cfg: &PipelineConfig, seeds: EpisodeSeeds) -> Result<Episode> {
    let spec = EpisodeSpec {
        seed: seeds.sample,
        ..cfg.episode.clone()
    };
    let base_train = match cfg.mode {
        BaseMode::ZeroBase => None,
        BaseMode::UndersampledBalanced => Some(data.base_train as &dyn SampleSource),
    };
    sample_episode(data.base_test, data.novel, &spec, cfg.mode, base_train)
}

/// Runs every stage after sampling on a given episode.
pub fn run_stages(
    pretrained: &LinearClassifier,
    episode: Episode,
    cfg: &PipelineConfig,
    seeds: EpisodeSeeds,
) -> Result<EpisodeTrace> {
    let std = cfg
        .novel_init_std
        .unwrap_or(1.0 / (pretrained.dim() as f64).sqrt());
    let extended = extend_classifier_with_std(pretrained, &episode.class_map, seeds.init, std)?;
    let ft_cfg = cfg.finetune_config(seeds.train);
    let mut clf = finetune(&extended, &episode, &ft_cfg, &cfg.normalization)?;
    let finetuned_stats = compute_stats(&clf);

    if cfg.normalization.variance_balancing == VarianceBalancing::Offline {
        variance_balance(&mut clf, &finetuned_stats)?;
    }
    if cfg.normalization.norm_equalization {
        norm_equalize(&mut clf)?;
    }
    clf.check_finite()?;
    let final_stats = compute_stats(&clf);

    let mode = cfg.normalization.logit_mode();
    let affine = if cfg.post_opt.enabled {
        Some(train_affine(&clf, &episode, &cfg.affine_config(ft_cfg.learning_rate, seeds.train), mode)?)
    } else {
        None
    };
    let report = evaluate(&clf, affine.as_ref(), &episode, mode)?;
    Ok(EpisodeTrace {
        episode,
        report,
        finetuned_stats,
        final_stats,
        classifier: clf,
        affine,
    })
}

pub fn run_episode_traced(data: &PipelineData<'_>, cfg: &PipelineConfig, index: u64) -> Result<EpisodeTrace> {
    let seeds = EpisodeSeeds::derive(cfg.seeds.episode, index);
    let episode = draw_episode(data, cfg, seeds)?;
    run_stages(data.pretrained, episode, cfg, seeds)
}

/// One episode, deterministic in `(cfg.seeds.episode, index)`.
pub fn run_episode(data: &PipelineData<'_>, cfg: &PipelineConfig, index: u64) -> Result<EvalReport> {
    run_episode_traced(data, cfg, index).map(|t| t.report)
}

/// Runs episodes `0..count` on up to `workers` threads. Results are ordered
/// by episode index whatever the completion order.
pub fn run_episodes(
    data: &PipelineData<'_>,
    cfg: &PipelineConfig,
    count: usize,
    workers: usize,
) -> Result<Vec<EvalReport>> {
    map_episodes(count, workers, |i| run_episode(data, cfg, i as u64))
}

/// Applies `job` to `0..count` on a scoped worker pool, returning results in
/// index order. The first error wins.
pub fn map_episodes<T, F>(count: usize, workers: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let workers = workers.clamp(1, count.max(1));
    if workers == 1 {
        return (0..count).map(job).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..count).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= count {
                    break;
                }
                let out = job(i);
                slots.lock().expect("worker panicked")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every index is processed"))
        .collect()
}

/// Classifier over the episode's novel classes only, trained on the novel
/// support with the given hooks. Used for the novel upper bound.
pub fn train_novel_only(
    episode: &Episode,
    dim: usize,
    cfg: &PipelineConfig,
    seeds: EpisodeSeeds,
) -> Result<LinearClassifier> {
    let empty = LinearClassifier::with_partition(ndarray::Array2::zeros((dim, 0)), 0, Vec::new())?;
    let std = cfg.novel_init_std.unwrap_or(1.0 / (dim as f64).sqrt());
    let init = extend_classifier_with_std(&empty, &episode.class_map, seeds.init, std)?;
    let hooks = NormalizationConfig {
        variance_balancing: VarianceBalancing::Off,
        ..cfg.normalization.clone()
    };
    finetune(&init, episode, &cfg.finetune_config(seeds.train), &hooks)
}

/// Base-train, base-test and novel pools carved out of one dataset.
#[derive(Clone, Debug)]
pub struct DataSplit {
    pub base_train: FeatureDataset,
    pub base_test: FeatureDataset,
    pub novel: FeatureDataset,
}

pub fn split_data(ds: &FeatureDataset, cfg: &PipelineConfig) -> Result<DataSplit> {
    if let Some(d) = cfg.data.dim {
        if d != ds.dim() {
            return Err(Error::ShapeMismatch(format!(
                "config expects dim {d}, data has {}",
                ds.dim()
            )));
        }
    }
    let novel_ids = match &cfg.data.novel_classes {
        Some(ids) => ids.clone(),
        None => {
            let n = cfg.data.n_novel_classes;
            if n == 0 || n >= ds.class_count() {
                return Err(Error::InvalidPartition(format!(
                    "{n} novel classes out of {}",
                    ds.class_count()
                )));
            }
            ds.classes()[ds.class_count() - n..].to_vec()
        }
    };
    let (base, novel) = crate::dataset::split_base_novel(ds, &novel_ids)?;
    let (base_train, base_test) = base.split_holdout(cfg.data.base_test_per_class, cfg.seeds.data)?;
    Ok(DataSplit {
        base_train,
        base_test,
        novel,
    })
}

/// Split pools plus the classifier pretrained on the base-train pool.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub split: DataSplit,
    pub pretrained: LinearClassifier,
}

impl Prepared {
    pub fn data(&self) -> PipelineData<'_> {
        PipelineData {
            pretrained: &self.pretrained,
            base_train: &self.split.base_train,
            base_test: &self.split.base_test,
            novel: &self.split.novel,
        }
    }
}

/// Splits `ds` and pretrains the base classifier with `cfg.pretrain`.
pub fn prepare(ds: &FeatureDataset, cfg: &PipelineConfig) -> Result<Prepared> {
    let split = split_data(ds, cfg)?;
    let pretrain = TrainConfig {
        seed: cfg.seeds.pretrain,
        ..cfg.pretrain.clone()
    };
    let pretrained = crate::model::train_base(&split.base_train, &pretrain)?;
    Ok(Prepared { split, pretrained })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shot_tables() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.clone().with_shot(1).finetune_config(0).learning_rate, 0.005);
        assert_eq!(cfg.clone().with_shot(5).finetune_config(0).learning_rate, 0.003);
        assert_eq!(cfg.clone().with_shot(10).finetune_config(0).learning_rate, 0.001);
        assert_eq!(cfg.clone().with_shot(2).finetune_config(0).learning_rate, 0.005);
        let it = |s| cfg.clone().with_shot(s).affine_config(0.1, 0).train.iterations;
        assert_eq!((it(1), it(5), it(10)), (500, 50, 5));
    }

    #[test]
    fn ablation_names_round_trip() {
        for a in Ablation::ALL {
            assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
        }
        assert!("mvcn".parse::<Ablation>().is_err());
    }

    #[test]
    fn ablation_configs_are_valid() {
        let base = PipelineConfig::default();
        for a in Ablation::ALL {
            base.for_ablation(a).validate().unwrap();
        }
        let none = base.for_ablation(Ablation::None);
        assert_eq!(none.normalization.online_mean_centering, OnlineCentering::Off);
        assert!(!none.post_opt.enabled);
        assert_eq!(base.for_ablation(Ablation::Balanced).mode, BaseMode::UndersampledBalanced);
    }

    #[test]
    fn episode_seeds_differ_by_index() {
        let a = EpisodeSeeds::derive(7, 0);
        assert_eq!(a, EpisodeSeeds::derive(7, 0));
        assert_ne!(a, EpisodeSeeds::derive(7, 1));
        assert_ne!(a, EpisodeSeeds::derive(8, 0));
    }

    #[test]
    fn parallel_map_keeps_order() {
        let out = map_episodes(50, 4, |i| Ok(i * 2)).unwrap();
        assert_eq!(out, (0..50).map(|i| i * 2).collect::<Vec<_>>());
        let err = map_episodes(10, 3, |i| if i == 7 { Err(Error::NothingToExtend) } else { Ok(i) });
        assert!(err.is_err());
    }
}
