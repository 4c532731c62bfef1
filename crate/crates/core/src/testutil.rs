//! Test-only helpers: random instances and a finite-difference gradient
//! oracle. The oracle touches nothing but loss evaluations, so it stays
//! independent of the backpropagation path it checks.

use rand::Rng;

use crate::linalg::Matrix;
use crate::nn::{xavier_init, Batch, ModelSpec, ParamVector};
use crate::seed;

/// Xavier weights plus small random biases, seeded.
pub fn random_params(spec: &ModelSpec, seed_value: u64) -> ParamVector {
    let mut params = xavier_init(spec, seed_value);
    let mut rng = seed::rng(&[seed_value, 0xb1a5]);
    let values: Vec<f64> = params
        .values()
        .iter()
        .map(|&v| {
            if v == 0.0 {
                rng.gen_range(-0.2..0.2)
            } else {
                v
            }
        })
        .collect();
    ParamVector::new(values, params.shapes().to_vec()).unwrap()
}

/// Random features in [0,1] with random one-hot labels.
pub fn random_batch(spec: &ModelSpec, n: usize, seed_value: u64) -> Batch {
    let mut rng = seed::rng(&[seed_value, 0xda7a]);
    let d = spec.input_dim();
    let c = spec.class_count();
    let mut features = Matrix::zeros(n, d);
    let mut labels = Matrix::zeros(n, c);
    for r in 0..n {
        for j in 0..d {
            features.set(r, j, rng.gen_range(0.0..1.0));
        }
        let class = rng.gen_range(0..c);
        labels.set(r, class, 1.0);
    }
    Batch::new(features, labels).unwrap()
}

/// Central finite differences of `f` at `params`, coordinate by coordinate.
pub fn finite_diff_grad<F>(params: &ParamVector, h: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&ParamVector) -> f64,
{
    let mut numeric = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let mut plus = params.values().to_vec();
        let mut minus = plus.clone();
        plus[i] += h;
        minus[i] -= h;
        let shapes = params.shapes().to_vec();
        let fp = f(&ParamVector::new(plus, shapes.clone()).unwrap());
        let fm = f(&ParamVector::new(minus, shapes).unwrap());
        numeric.push((fp - fm) / (2.0 * h));
    }
    numeric
}

/// Largest relative error between paired coordinates.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| {
            let denom = a.abs().max(n.abs()).max(1e-6);
            (a - n).abs() / denom
        })
        .fold(0.0, f64::max)
}
