use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{FeatureDataset, FeatureVector, LabeledFeature};
use crate::error::{Error, Result};

/// Class-prototype generator for non-negative, ReLU-like features.
///
/// Classes `0..n_base_classes` are meant as base classes and the following
/// `n_novel_classes` ids as novel classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub dim: usize,
    pub n_base_classes: usize,
    pub n_novel_classes: usize,
    pub samples_per_class: usize,
    pub prototype_scale: f64,
    pub within_class_std: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    /// 32-dimensional features, 20 base and 20 novel classes, 150 samples each.
    fn default() -> Self {
        Self {
            dim: 32,
            n_base_classes: 20,
            n_novel_classes: 20,
            samples_per_class: 150,
            prototype_scale: 1.0,
            within_class_std: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn total_classes(&self) -> usize {
        self.n_base_classes + self.n_novel_classes
    }

    pub fn base_class_ids(&self) -> Vec<u32> {
        (0..self.n_base_classes as u32).collect()
    }

    pub fn novel_class_ids(&self) -> Vec<u32> {
        (self.n_base_classes as u32..self.total_classes() as u32).collect()
    }
}

/// Prototype entries are `|N(0, prototype_scale)|`; each sample adds
/// `N(0, within_class_std)` noise and clamps at zero.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<FeatureDataset> {
    if cfg.dim == 0 {
        return Err(Error::ZeroDimensionality);
    }
    if cfg.total_classes() == 0 || cfg.samples_per_class == 0 {
        return Err(Error::InvalidConfig("class and sample counts must be positive".into()));
    }
    if !(cfg.prototype_scale > 0.0 && cfg.prototype_scale.is_finite()) {
        return Err(Error::InvalidConfig("prototype_scale must be positive".into()));
    }
    if !(cfg.within_class_std >= 0.0 && cfg.within_class_std.is_finite()) {
        return Err(Error::InvalidConfig("within_class_std must be non-negative".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let proto_dist = Normal::new(0.0, cfg.prototype_scale).expect("validated scale");
    let noise = Normal::new(0.0, cfg.within_class_std).expect("validated std");

    let n_classes = cfg.total_classes();
    let prototypes: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| (0..cfg.dim).map(|_| proto_dist.sample(&mut rng).abs()).collect())
        .collect();

    let mut samples = Vec::with_capacity(n_classes * cfg.samples_per_class);
    for (class, proto) in prototypes.iter().enumerate() {
        for _ in 0..cfg.samples_per_class {
            let values = proto
                .iter()
                .map(|&p| {
                    let v = if cfg.within_class_std == 0.0 {
                        p
                    } else {
                        p + noise.sample(&mut rng)
                    };
                    v.max(0.0) as f32
                })
                .collect();
            samples.push(LabeledFeature {
                feature: FeatureVector(values),
                label: class as u32,
            });
        }
    }
    FeatureDataset::new(
        format!("synthetic-{}", cfg.seed),
        cfg.dim,
        (0..n_classes as u32).collect(),
        samples,
        true,
    )
}
