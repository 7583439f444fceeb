//! Frozen-feature datasets: validation, base/novel partitioning, episodic
//! sampling, synthetic generation and the on-disk formats.

mod episode;
mod io;
mod synth;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use episode::{sample_episode, BaseMode, Episode, EpisodeSpec};
pub use io::{load_dataset, read_dataset, save_dataset, write_dataset, Format};
pub use synth::{generate_synthetic, SyntheticConfig};

/// One frozen feature vector. Stored in single precision, which is what the
/// binary format carries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f32>);

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledFeature {
    pub feature: FeatureVector,
    pub label: u32,
}

/// Read access to labeled samples.
///
/// Pipeline stages that may touch base-class training data take this trait
/// rather than a concrete dataset, so a counting implementation can verify
/// which stages read it.
pub trait SampleSource {
    fn dim(&self) -> usize;
    fn class_ids(&self) -> &[u32];
    fn len(&self) -> usize;
    fn sample(&self, index: usize) -> &LabeledFeature;
    /// Sample indices for `class`, in storage order.
    fn indices_of(&self, class: u32) -> Vec<usize>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A validated collection of labeled feature vectors.
///
/// Equality compares dimensionality, class table, samples and the relu flag;
/// the name is informational and not part of any file format.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FeatureDataset {
    name: String,
    dim: usize,
    classes: Vec<u32>,
    samples: Vec<LabeledFeature>,
    relu_constraint: bool,
}

impl PartialEq for FeatureDataset {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.classes == other.classes
            && self.relu_constraint == other.relu_constraint
            && self.samples == other.samples
    }
}

impl FeatureDataset {
    /// Builds a dataset and checks every invariant: nonzero dimensionality,
    /// row lengths, finiteness, non-negativity under `relu_constraint`, labels
    /// drawn from the class table, and at least one sample per class.
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        classes: Vec<u32>,
        samples: Vec<LabeledFeature>,
        relu_constraint: bool,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ZeroDimensionality);
        }
        let table: BTreeSet<u32> = classes.iter().copied().collect();
        if table.len() != classes.len() {
            return Err(Error::MalformedHeader("duplicate class id in class table".into()));
        }
        let mut counts: BTreeMap<u32, usize> = classes.iter().map(|&c| (c, 0)).collect();
        for (row, s) in samples.iter().enumerate() {
            validate_row(row, dim, relu_constraint, s.feature.as_slice())?;
            match counts.get_mut(&s.label) {
                Some(n) => *n += 1,
                None => return Err(Error::UnknownClassAtRow { row, class: s.label }),
            }
        }
        if let Some((&class, _)) = counts.iter().find(|(_, &n)| n == 0) {
            return Err(Error::EmptyClass(class));
        }
        Ok(Self {
            name: name.into(),
            dim,
            classes,
            samples,
            relu_constraint,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    pub fn samples(&self) -> &[LabeledFeature] {
        &self.samples
    }

    pub fn relu_constraint(&self) -> bool {
        self.relu_constraint
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    /// Map from class id to sample indices, keyed in class-table order.
    pub fn indices_by_class(&self) -> BTreeMap<u32, Vec<usize>> {
        let mut map: BTreeMap<u32, Vec<usize>> =
            self.classes.iter().map(|&c| (c, Vec::new())).collect();
        for (i, s) in self.samples.iter().enumerate() {
            map.entry(s.label).or_default().push(i);
        }
        map
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Restricts the dataset to `class_ids`, keeping the given class order.
    pub fn subset_classes(&self, class_ids: &[u32], name: &str) -> Result<Self> {
        for c in class_ids {
            if !self.classes.contains(c) {
                return Err(Error::UnknownClass(*c));
            }
        }
        let keep: BTreeSet<u32> = class_ids.iter().copied().collect();
        let samples = self
            .samples
            .iter()
            .filter(|s| keep.contains(&s.label))
            .cloned()
            .collect();
        Self::new(name, self.dim, class_ids.to_vec(), samples, self.relu_constraint)
    }

    /// Splits every class into a train part and a holdout of
    /// `holdout_per_class` samples, chosen by a seeded shuffle.
    pub fn split_holdout(&self, holdout_per_class: usize, seed: u64) -> Result<(Self, Self)> {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;

        if holdout_per_class == 0 {
            return Err(Error::InvalidConfig("holdout_per_class must be positive".into()));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut held = BTreeSet::new();
        for (class, mut idx) in self.indices_by_class() {
            if idx.len() <= holdout_per_class {
                return Err(Error::InsufficientSamples {
                    class,
                    needed: holdout_per_class + 1,
                    available: idx.len(),
                });
            }
            idx.shuffle(&mut rng);
            held.extend(idx.into_iter().take(holdout_per_class));
        }
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, s) in self.samples.iter().enumerate() {
            if held.contains(&i) {
                test.push(s.clone());
            } else {
                train.push(s.clone());
            }
        }
        let train = Self::new(
            format!("{}-train", self.name),
            self.dim,
            self.classes.clone(),
            train,
            self.relu_constraint,
        )?;
        let test = Self::new(
            format!("{}-test", self.name),
            self.dim,
            self.classes.clone(),
            test,
            self.relu_constraint,
        )?;
        Ok((train, test))
    }

    /// Design matrix (rows = samples) in double precision.
    pub fn feature_matrix(&self) -> ndarray::Array2<f64> {
        let mut x = ndarray::Array2::zeros((self.samples.len(), self.dim));
        for (mut row, s) in x.rows_mut().into_iter().zip(&self.samples) {
            for (dst, &v) in row.iter_mut().zip(s.feature.as_slice()) {
                *dst = v as f64;
            }
        }
        x
    }
}

impl SampleSource for FeatureDataset {
    fn dim(&self) -> usize {
        self.dim
    }

    fn class_ids(&self) -> &[u32] {
        &self.classes
    }

    fn len(&self) -> usize {
        self.samples.len()
    }

    fn sample(&self, index: usize) -> &LabeledFeature {
        &self.samples[index]
    }

    fn indices_of(&self, class: u32) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == class)
            .map(|(i, _)| i)
            .collect()
    }
}

pub(crate) fn validate_row(row: usize, dim: usize, relu: bool, values: &[f32]) -> Result<()> {
    if values.len() != dim {
        return Err(Error::DimensionMismatch {
            row,
            expected: dim,
            found: values.len(),
        });
    }
    for &v in values {
        if !v.is_finite() {
            return Err(Error::NonFiniteValue { row });
        }
        if relu && v < 0.0 {
            return Err(Error::NegativeActivation { row, value: v });
        }
    }
    Ok(())
}

/// Partitions `ds` into disjoint base and novel datasets by class id.
pub fn split_base_novel(ds: &FeatureDataset, novel_class_ids: &[u32]) -> Result<(FeatureDataset, FeatureDataset)> {
    let novel: BTreeSet<u32> = novel_class_ids.iter().copied().collect();
    if novel.is_empty() {
        return Err(Error::InvalidPartition("novel class set is empty".into()));
    }
    if let Some(&c) = novel.iter().find(|c| !ds.classes.contains(c)) {
        return Err(Error::UnknownClass(c));
    }
    if novel.len() == ds.classes.len() {
        return Err(Error::InvalidPartition("novel class set covers every class".into()));
    }
    let base_ids: Vec<u32> = ds.classes.iter().copied().filter(|c| !novel.contains(c)).collect();
    let novel_ids: Vec<u32> = ds.classes.iter().copied().filter(|c| novel.contains(c)).collect();
    let base = ds.subset_classes(&base_ids, &format!("{}-base", ds.name))?;
    let novel = ds.subset_classes(&novel_ids, &format!("{}-novel", ds.name))?;
    Ok((base, novel))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn lf(label: u32, v: &[f32]) -> LabeledFeature {
        LabeledFeature {
            feature: FeatureVector(v.to_vec()),
            label,
        }
    }

    fn ten_class() -> FeatureDataset {
        let samples = (0..30).map(|i| lf(i % 10, &[i as f32, 1.0])).collect();
        FeatureDataset::new("ten", 2, (0..10).collect(), samples, true).unwrap()
    }

    #[test]
    fn rejects_zero_dim_and_empty_class() {
        assert!(matches!(
            FeatureDataset::new("z", 0, vec![0], vec![], false),
            Err(Error::ZeroDimensionality)
        ));
        let r = FeatureDataset::new("e", 1, vec![0, 1], vec![lf(0, &[1.0])], false);
        assert!(matches!(r, Err(Error::EmptyClass(1))));
        assert!(r.unwrap_err().to_string().contains("class with zero samples"));
    }

    #[test]
    fn rejects_bad_rows() {
        let r = FeatureDataset::new("n", 1, vec![0], vec![lf(0, &[-0.1])], true);
        assert!(r.unwrap_err().to_string().contains("negative activation"));
        let r = FeatureDataset::new("n", 1, vec![0], vec![lf(0, &[f32::NAN])], false);
        assert!(matches!(r, Err(Error::NonFiniteValue { row: 0 })));
        let r = FeatureDataset::new("n", 1, vec![0], vec![lf(0, &[1.0]), lf(3, &[1.0])], false);
        assert!(matches!(r, Err(Error::UnknownClassAtRow { row: 1, class: 3 })));
    }

    #[test]
    fn split_partitions_classes() {
        let ds = ten_class();
        let (base, novel) = split_base_novel(&ds, &[8, 9]).unwrap();
        assert_eq!(base.class_count(), 8);
        assert_eq!(novel.class_count(), 2);
        assert_eq!(base.len() + novel.len(), ds.len());
        assert!(base.classes().iter().all(|c| !novel.classes().contains(c)));
    }

    #[test]
    fn split_rejects_bad_sets() {
        let ds = ten_class();
        assert!(split_base_novel(&ds, &[]).is_err());
        let all: Vec<u32> = (0..10).collect();
        assert!(matches!(split_base_novel(&ds, &all), Err(Error::InvalidPartition(_))));
        let err = split_base_novel(&ds, &[99]).unwrap_err();
        assert!(err.to_string().contains("unknown class"));
    }

    #[test]
    fn holdout_split_is_disjoint_and_complete() {
        let ds = ten_class();
        let (train, test) = ds.split_holdout(1, 3).unwrap();
        assert_eq!(test.len(), 10);
        assert_eq!(train.len(), 20);
        for s in test.samples() {
            assert!(!train.samples().contains(s));
        }
        assert!(ds.split_holdout(3, 3).is_err());
    }
}
