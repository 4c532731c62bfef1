//! Memory generator: teacher-ensemble fake labels with debiasing.
//!
//! New memories pair the target features with knowledge-free labels. The
//! teacher label averages the predictions of `Q` untrained models; the
//! debias step downweights the target class to strip the initialization
//! bias an untrained model carries toward particular classes.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{argmax, forward, xavier_init, Batch, ModelSpec, ParamVector};
use crate::seed;

use super::{DebiasMode, FakeLabelKind};

/// `Q` untrained, Xavier-initialized models sharing the student's spec.
/// Never trained; discardable once the fake labels exist.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherEnsemble {
    spec: ModelSpec,
    teachers: Vec<ParamVector>,
}

impl TeacherEnsemble {
    /// Teacher `i` is seeded from `(seed, teacher_index)`.
    pub fn init(spec: &ModelSpec, count: usize, seed_value: u64) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidConfig("teacher ensemble needs Q >= 1".into()));
        }
        let teachers = (0..count)
            .map(|i| xavier_init(spec, seed::mix(&[seed_value, seed::TAG_TEACHER, i as u64])))
            .collect();
        Ok(TeacherEnsemble {
            spec: spec.clone(),
            teachers,
        })
    }

    /// Ensemble over explicit parameter vectors (ablations, tests).
    pub fn from_params(spec: &ModelSpec, teachers: Vec<ParamVector>) -> Result<Self> {
        if teachers.is_empty() {
            return Err(Error::InvalidConfig("teacher ensemble needs Q >= 1".into()));
        }
        Ok(TeacherEnsemble {
            spec: spec.clone(),
            teachers,
        })
    }

    pub fn count(&self) -> usize {
        self.teachers.len()
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn teachers(&self) -> &[ParamVector] {
        &self.teachers
    }
}

/// Teacher label: elementwise mean of the ensemble's softmax outputs.
pub fn teacher_label(ensemble: &TeacherEnsemble, features: &Matrix) -> Result<Matrix> {
    let q = ensemble.count() as f64;
    let mut mean = Matrix::zeros(features.rows(), ensemble.spec.class_count());
    for teacher in &ensemble.teachers {
        let probs = forward(teacher, &ensemble.spec, features)?;
        for r in 0..mean.rows() {
            let src = probs.row(r);
            for (m, &p) in mean.row_mut(r).iter_mut().zip(src) {
                *m += p / q;
            }
        }
    }
    Ok(mean)
}

/// Debias weight: the quotient of the average prediction weight (`1/C`) and
/// the target prediction weight, clamped to `[0,1]`. A target weight at or
/// below average needs no debiasing, so sigma saturates at 1.
pub fn dynamic_sigma(y_hat: &[f64], target_class: usize) -> f64 {
    let mean = 1.0 / y_hat.len() as f64;
    let target = y_hat[target_class];
    if target <= mean {
        return 1.0;
    }
    (mean / target).clamp(0.0, 1.0)
}

/// Scale the target coordinate by sigma and renormalize by the L1 norm:
/// `nu = 1 + (sigma - 1) * y`, output `nu*y_hat / |nu*y_hat|_1`.
pub fn debias_label(y_hat: &[f64], y_original: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if y_hat.len() != y_original.len() {
        return Err(Error::ShapeMismatch(format!(
            "teacher label width {} vs original label width {}",
            y_hat.len(),
            y_original.len()
        )));
    }
    let mut scaled: Vec<f64> = y_hat
        .iter()
        .zip(y_original)
        .map(|(&p, &y)| (1.0 + (sigma - 1.0) * y) * p)
        .collect();
    let norm: f64 = scaled.iter().sum();
    if norm <= 0.0 {
        return Err(Error::DegenerateLabel);
    }
    for v in &mut scaled {
        *v /= norm;
    }
    Ok(scaled)
}

/// Random point on the probability simplex. The two-class case is
/// `[r, 1 - r]`; higher class counts normalize independent uniform draws.
fn random_simplex_label<R: Rng>(classes: usize, rng: &mut R) -> Vec<f64> {
    if classes == 2 {
        let r: f64 = rng.gen_range(0.0..1.0);
        return vec![r, 1.0 - r];
    }
    loop {
        let draws: Vec<f64> = (0..classes).map(|_| rng.gen_range(0.0..1.0)).collect();
        let sum: f64 = draws.iter().sum();
        if sum > 1e-9 {
            return draws.into_iter().map(|v| v / sum).collect();
        }
    }
}

/// Pair the target features with fake labels of the requested kind.
///
/// The returned batch reuses the target features bit for bit; only labels
/// change. For the debias-teacher kind, sigma comes from `debias` — either
/// fixed or computed per sample from its own teacher label.
pub fn build_memories(
    kind: FakeLabelKind,
    ensemble: &TeacherEnsemble,
    targets: &Batch,
    debias: &DebiasMode,
    seed_value: u64,
) -> Result<Batch> {
    if targets.is_empty() {
        return Err(Error::EmptyBatch("build_memories"));
    }
    let classes = ensemble.spec.class_count();
    let n = targets.len();
    let mut labels = Matrix::zeros(n, classes);
    match kind {
        FakeLabelKind::Uniform => {
            for r in 0..n {
                for v in labels.row_mut(r) {
                    *v = 1.0 / classes as f64;
                }
            }
        }
        FakeLabelKind::Random => {
            let mut rng = seed::rng(&[seed_value, seed::TAG_MEMORY]);
            for r in 0..n {
                labels
                    .row_mut(r)
                    .copy_from_slice(&random_simplex_label(classes, &mut rng));
            }
        }
        FakeLabelKind::Teacher => {
            labels = teacher_label(ensemble, targets.features())?;
        }
        FakeLabelKind::DebiasTeacher => {
            let y_hat = teacher_label(ensemble, targets.features())?;
            for r in 0..n {
                let original = targets.labels().row(r);
                let sigma = match debias {
                    DebiasMode::Fixed(s) => *s,
                    DebiasMode::Dynamic => dynamic_sigma(y_hat.row(r), argmax(original)),
                };
                labels
                    .row_mut(r)
                    .copy_from_slice(&debias_label(y_hat.row(r), original, sigma)?);
            }
        }
    }
    Batch::new(targets.features().clone(), labels)
}
