//! Dataset ingestion, client partitioning, class selection, and
//! backdoor-trigger injection.

pub mod idx;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{argmax, Batch};
use crate::seed;

/// Labeled dataset: features in `[0,1]`, one-hot labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Matrix,
    class_count: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Matrix, class_count: usize) -> Result<Self> {
        if features.rows() != labels.rows() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows vs {} label rows",
                features.rows(),
                labels.rows()
            )));
        }
        if labels.cols() != class_count {
            return Err(Error::ShapeMismatch(format!(
                "labels have {} columns, class count is {class_count}",
                labels.cols()
            )));
        }
        for (i, row) in labels.iter_rows().enumerate() {
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || zeros != row.len() - 1 {
                return Err(Error::InvalidConfig(format!("label row {i} is not one-hot")));
            }
        }
        if !features.data().iter().all(|&v| (0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidConfig("feature entries must lie in [0,1]".into()));
        }
        Ok(Dataset {
            features,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &Matrix {
        &self.labels
    }

    /// Label class of one sample.
    pub fn class_of(&self, index: usize) -> usize {
        argmax(self.labels.row(index))
    }

    /// Batch view of the given sample indices.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        if indices.is_empty() {
            return Err(Error::EmptyBatch("dataset batch"));
        }
        Batch::new(
            self.features.select_rows(indices),
            self.labels.select_rows(indices),
        )
    }

    /// The whole dataset as one batch.
    pub fn as_batch(&self) -> Result<Batch> {
        Batch::new(self.features.clone(), self.labels.clone())
    }

    /// New dataset without the given rows. Returned alongside is the map
    /// from new index to old index.
    pub fn without(&self, removed: &[usize]) -> (Dataset, Vec<usize>) {
        let drop: std::collections::HashSet<usize> = removed.iter().copied().collect();
        let kept: Vec<usize> = (0..self.len()).filter(|i| !drop.contains(i)).collect();
        let ds = Dataset {
            features: self.features.select_rows(&kept),
            labels: self.labels.select_rows(&kept),
            class_count: self.class_count,
        };
        (ds, kept)
    }

    /// Seeded random subset of `size` samples (identity when `size >= len`).
    pub fn seeded_subset(&self, size: usize, seed_value: u64) -> Dataset {
        if size >= self.len() {
            return self.clone();
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut seed::rng(&[seed_value, seed::TAG_PARTITION, 0x5b5]));
        order.truncate(size);
        order.sort_unstable();
        Dataset {
            features: self.features.select_rows(&order),
            labels: self.labels.select_rows(&order),
            class_count: self.class_count,
        }
    }

    /// Number of samples per class.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.class_count];
        for row in self.labels.iter_rows() {
            counts[argmax(row)] += 1;
        }
        counts
    }
}

/// Disjoint assignment of sample indices to `K` clients.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientPartition {
    assignments: Vec<Vec<usize>>,
}

impl ClientPartition {
    pub fn new(assignments: Vec<Vec<usize>>, total: usize) -> Result<Self> {
        let mut seen = vec![false; total];
        let mut covered = 0usize;
        for (k, set) in assignments.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::InvalidConfig(format!("client {k} has no samples")));
            }
            for &i in set {
                if i >= total || seen[i] {
                    return Err(Error::InvalidConfig(format!(
                        "index {i} out of range or assigned twice"
                    )));
                }
                seen[i] = true;
                covered += 1;
            }
        }
        if covered != total {
            return Err(Error::InvalidConfig(format!(
                "partition covers {covered} of {total} samples"
            )));
        }
        Ok(ClientPartition { assignments })
    }

    pub fn client_count(&self) -> usize {
        self.assignments.len()
    }

    pub fn client(&self, k: usize) -> &[usize] {
        &self.assignments[k]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }

    pub fn total(&self) -> usize {
        self.sizes().iter().sum()
    }
}

/// Seeded IID split into `K` near-equal disjoint index sets.
pub fn partition_iid(dataset: &Dataset, clients: usize, seed_value: u64) -> Result<ClientPartition> {
    let n = dataset.len();
    if clients == 0 || clients > n {
        return Err(Error::PartitionTooFine {
            samples: n,
            clients,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(&[seed_value, seed::TAG_PARTITION]));
    let base = n / clients;
    let extra = n % clients;
    let mut assignments = Vec::with_capacity(clients);
    let mut cursor = 0;
    for k in 0..clients {
        let size = base + usize::from(k < extra);
        assignments.push(order[cursor..cursor + size].to_vec());
        cursor += size;
    }
    ClientPartition::new(assignments, n)
}

/// Synthetic Gaussian blobs: one fixed center per class, isotropic noise,
/// clipped to `[0,1]`. Centers depend only on `(classes, dim)`; the seed
/// drives the noise, so `spread = 0` collapses each class onto its center.
pub fn make_blobs(
    classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed_value: u64,
) -> Result<Dataset> {
    if classes < 2 || per_class == 0 || dim == 0 {
        return Err(Error::InvalidConfig(format!(
            "blobs need classes >= 2, per_class >= 1, dim >= 1 (got {classes}, {per_class}, {dim})"
        )));
    }
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|c| {
            let mut rng = seed::rng(&[seed::TAG_BLOBS, 0xc3a7e5, c as u64]);
            (0..dim).map(|_| rng.gen_range(0.15..0.85)).collect()
        })
        .collect();
    let n = classes * per_class;
    let mut features = Matrix::zeros(n, dim);
    let mut labels = Matrix::zeros(n, classes);
    let mut rng = seed::rng(&[seed_value, seed::TAG_BLOBS]);
    for c in 0..classes {
        for s in 0..per_class {
            let row = c * per_class + s;
            let out = features.row_mut(row);
            for (j, v) in out.iter_mut().enumerate() {
                let noise: f64 = rng.sample(StandardNormal);
                *v = (centers[c][j] + spread * noise).clamp(0.0, 1.0);
            }
            labels.set(row, c, 1.0);
        }
    }
    Dataset::new(features, labels, classes)
}

/// Trigger pattern plus label-flip rule used to watermark target data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackdoorSpec {
    /// Feature indices overwritten by the trigger.
    pub trigger_coords: Vec<usize>,
    /// Value written at each trigger coordinate.
    pub trigger_value: f64,
    /// Class `c` flips to `(c + flip_offset) % class_count`.
    pub flip_offset: usize,
    /// Fraction of the target set that actually gets poisoned.
    pub poison_fraction: f64,
}

impl BackdoorSpec {
    pub fn new(
        trigger_coords: Vec<usize>,
        trigger_value: f64,
        flip_offset: usize,
        poison_fraction: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&trigger_value) {
            return Err(Error::InvalidConfig(format!(
                "trigger value {trigger_value} outside [0,1]"
            )));
        }
        if !(poison_fraction > 0.0 && poison_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "poison fraction {poison_fraction} outside (0,1]"
            )));
        }
        if flip_offset == 0 {
            return Err(Error::InvalidConfig("flip offset must be nonzero".into()));
        }
        Ok(BackdoorSpec {
            trigger_coords,
            trigger_value,
            flip_offset,
            poison_fraction,
        })
    }

    /// Seeded flip offset drawn once: `1 + u` with `u` uniform in `[0, C-2]`.
    pub fn seeded_flip_offset(seed_value: u64, class_count: usize) -> usize {
        1 + seed::rng(&[seed_value, seed::TAG_FLIP]).gen_range(0..class_count - 1)
    }

    /// A `side x side` block in the bottom-right corner of a square image.
    pub fn corner_block_coords(image_side: usize, side: usize) -> Vec<usize> {
        let mut coords = Vec::with_capacity(side * side);
        for r in image_side - side..image_side {
            for c in image_side - side..image_side {
                coords.push(r * image_side + c);
            }
        }
        coords
    }

    pub fn flipped_class(&self, class: usize, class_count: usize) -> usize {
        (class + self.flip_offset) % class_count
    }

    fn validate_against(&self, dataset: &Dataset) -> Result<()> {
        if let Some(&c) = self.trigger_coords.iter().find(|&&c| c >= dataset.feature_dim()) {
            return Err(Error::InvalidConfig(format!(
                "trigger coordinate {c} outside feature dim {}",
                dataset.feature_dim()
            )));
        }
        if self.flip_offset % dataset.class_count() == 0 {
            return Err(Error::InvalidConfig(format!(
                "flip offset {} maps classes onto themselves for {} classes",
                self.flip_offset,
                dataset.class_count()
            )));
        }
        Ok(())
    }

    /// Write the trigger into one feature row and flip one label row.
    fn poison_row(&self, features: &mut [f64], labels: &mut [f64]) {
        for &c in &self.trigger_coords {
            features[c] = self.trigger_value;
        }
        let class = argmax(labels);
        let flipped = self.flipped_class(class, labels.len());
        for v in labels.iter_mut() {
            *v = 0.0;
        }
        labels[flipped] = 1.0;
    }
}

/// Poison a seeded `poison_fraction` subset of `target_indices`: trigger
/// coordinates overwritten, labels flipped. Every other sample is returned
/// bit-identical. Also returns the indices that were actually poisoned.
pub fn inject_backdoor(
    dataset: &Dataset,
    target_indices: &[usize],
    spec: &BackdoorSpec,
    seed_value: u64,
) -> Result<(Dataset, Vec<usize>)> {
    spec.validate_against(dataset)?;
    if let Some(&i) = target_indices.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::InvalidConfig(format!(
            "target index {i} outside dataset of {}",
            dataset.len()
        )));
    }
    let mut chosen = target_indices.to_vec();
    chosen.shuffle(&mut seed::rng(&[seed_value, seed::TAG_POISON]));
    let count = ((spec.poison_fraction * target_indices.len() as f64).round() as usize)
        .min(target_indices.len());
    chosen.truncate(count);
    chosen.sort_unstable();

    let mut features = dataset.features.clone();
    let mut labels = dataset.labels.clone();
    for &i in &chosen {
        spec.poison_row(features.row_mut(i), labels.row_mut(i));
    }
    let poisoned = Dataset::new(features, labels, dataset.class_count)?;
    Ok((poisoned, chosen))
}

/// Poisoned copies of the given rows for evaluation: every row gets the
/// trigger and the flipped label, regardless of `poison_fraction`.
pub fn poisoned_eval_batch(
    dataset: &Dataset,
    indices: &[usize],
    spec: &BackdoorSpec,
) -> Result<Batch> {
    spec.validate_against(dataset)?;
    if indices.is_empty() {
        return Err(Error::EmptyBatch("poisoned evaluation batch"));
    }
    let mut features = dataset.features.select_rows(indices);
    let mut labels = dataset.labels.select_rows(indices);
    for r in 0..indices.len() {
        spec.poison_row(features.row_mut(r), labels.row_mut(r));
    }
    Batch::new(features, labels)
}

/// All indices whose label class equals `class_id`.
pub fn select_class(dataset: &Dataset, class_id: usize) -> Vec<usize> {
    (0..dataset.len())
        .filter(|&i| dataset.class_of(i) == class_id)
        .collect()
}
