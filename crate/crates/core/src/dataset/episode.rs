use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FeatureDataset, LabeledFeature, SampleSource};
use crate::error::{Error, Result};

/// N-way K-shot episode shape.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeSpec {
    pub n_way: usize,
    pub k_shot: usize,
    pub query_per_class: usize,
    pub seed: u64,
    /// Per-class cap on the base query pool; `None` uses every base sample.
    pub base_query_per_class: Option<usize>,
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        Self::new(5, 5, 15, 0)
    }
}

impl EpisodeSpec {
    pub fn new(n_way: usize, k_shot: usize, query_per_class: usize, seed: u64) -> Self {
        Self {
            n_way,
            k_shot,
            query_per_class,
            seed,
            base_query_per_class: None,
        }
    }
}

/// Whether fine-tuning may see base-class samples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaseMode {
    /// No base sample is used after pretraining.
    #[default]
    ZeroBase,
    /// `k_shot` samples per base class are added to the support set.
    #[serde(alias = "balanced")]
    UndersampledBalanced,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub novel_support: FeatureDataset,
    pub novel_query: FeatureDataset,
    pub base_query: FeatureDataset,
    pub base_support: Option<FeatureDataset>,
    /// Source class id for each episode novel index.
    pub class_map: Vec<u32>,
}

impl Episode {
    pub fn n_way(&self) -> usize {
        self.class_map.len()
    }
}

/// Draws one episode.
///
/// `base_pool` supplies base query samples. `base_train` is read only in
/// [`BaseMode::UndersampledBalanced`], where it supplies `k_shot` support
/// samples per base class; in zero-base mode it is never touched.
pub fn sample_episode(
    base_pool: &FeatureDataset,
    novel: &FeatureDataset,
    spec: &EpisodeSpec,
    mode: BaseMode,
    base_train: Option<&dyn SampleSource>,
) -> Result<Episode> {
    if spec.n_way == 0 || spec.k_shot == 0 || spec.query_per_class == 0 {
        return Err(Error::InvalidConfig("n_way, k_shot and query_per_class must be positive".into()));
    }
    if base_pool.dim() != novel.dim() {
        return Err(Error::ShapeMismatch(format!(
            "base dim {} != novel dim {}",
            base_pool.dim(),
            novel.dim()
        )));
    }
    if base_pool.classes().iter().any(|c| novel.classes().contains(c)) {
        return Err(Error::InvalidPartition("base and novel class sets overlap".into()));
    }
    if spec.n_way > novel.class_count() {
        return Err(Error::InsufficientNovelClasses {
            requested: spec.n_way,
            available: novel.class_count(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order = novel.classes().to_vec();
    order.shuffle(&mut rng);
    let class_map: Vec<u32> = order.into_iter().take(spec.n_way).collect();

    let by_class = novel.indices_by_class();
    let need = spec.k_shot + spec.query_per_class;
    for &c in &class_map {
        let have = by_class[&c].len();
        if have < need {
            return Err(Error::InsufficientSamples {
                class: c,
                needed: need,
                available: have,
            });
        }
    }

    let mut support = Vec::with_capacity(spec.n_way * spec.k_shot);
    let mut query = Vec::with_capacity(spec.n_way * spec.query_per_class);
    for &c in &class_map {
        let mut idx = by_class[&c].clone();
        idx.shuffle(&mut rng);
        support.extend(idx[..spec.k_shot].iter().map(|&i| novel.samples()[i].clone()));
        query.extend(idx[spec.k_shot..need].iter().map(|&i| novel.samples()[i].clone()));
    }
    let dim = novel.dim();
    let relu = novel.relu_constraint();
    let novel_support = FeatureDataset::new("novel-support", dim, class_map.clone(), support, relu)?;
    let novel_query = FeatureDataset::new("novel-query", dim, class_map.clone(), query, relu)?;

    let base_query = match spec.base_query_per_class {
        None => base_pool.clone().with_name("base-query"),
        Some(q) => {
            let mut picked = Vec::new();
            for (c, mut idx) in base_pool.indices_by_class() {
                if idx.len() < q {
                    return Err(Error::InsufficientSamples {
                        class: c,
                        needed: q,
                        available: idx.len(),
                    });
                }
                idx.shuffle(&mut rng);
                picked.extend(idx[..q].iter().map(|&i| base_pool.samples()[i].clone()));
            }
            FeatureDataset::new(
                "base-query",
                dim,
                base_pool.classes().to_vec(),
                picked,
                base_pool.relu_constraint(),
            )?
        }
    };

    let base_support = match mode {
        BaseMode::ZeroBase => None,
        BaseMode::UndersampledBalanced => {
            let train = base_train.ok_or_else(|| {
                Error::InvalidConfig("balanced mode requires base training samples".into())
            })?;
            Some(undersample(train, spec.k_shot, &mut rng)?)
        }
    };

    Ok(Episode {
        novel_support,
        novel_query,
        base_query,
        base_support,
        class_map,
    })
}

fn undersample(train: &dyn SampleSource, k: usize, rng: &mut ChaCha8Rng) -> Result<FeatureDataset> {
    let mut picked: Vec<LabeledFeature> = Vec::new();
    for &c in train.class_ids() {
        let mut idx = train.indices_of(c);
        if idx.len() < k {
            return Err(Error::InsufficientSamples {
                class: c,
                needed: k,
                available: idx.len(),
            });
        }
        idx.shuffle(rng);
        picked.extend(idx[..k].iter().map(|&i| train.sample(i).clone()));
    }
    let relu = picked
        .iter()
        .all(|s| s.feature.as_slice().iter().all(|&v| v >= 0.0));
    FeatureDataset::new("base-support", train.dim(), train.class_ids().to_vec(), picked, relu)
}
