//! Feed-forward network engine: deterministic forward, loss, gradient, and
//! SGD-update primitives.
//!
//! The model is a fully-connected network with rectifier hidden layers and a
//! softmax output, trained with (possibly soft-label) cross-entropy. All
//! arithmetic is `f64` and every function is a pure map from its inputs, so
//! a fixed seed reproduces a training trajectory bit for bit.

use rand::distributions::{Distribution, Uniform};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, Matrix};

/// Hidden-layer nonlinearity. Fixed to the rectifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

/// Architecture of the classifier: layer widths from input to class count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    layer_dims: Vec<usize>,
    #[serde(default)]
    activation: Activation,
}

/// Per-layer weight/bias extents inside a flat parameter vector.
///
/// `rows` is the layer's output width, `cols` its input width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub rows: usize,
    pub cols: usize,
    pub bias: usize,
}

impl LayerShape {
    pub fn len(&self) -> usize {
        self.rows * self.cols + self.bias
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ModelSpec {
    /// dims = input width, hidden widths..., class count. Needs >= 2 entries, all >= 1.
    pub fn new(layer_dims: Vec<usize>) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "model needs at least input and output dims, got {layer_dims:?}"
            )));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig(format!(
                "all layer dims must be >= 1, got {layer_dims:?}"
            )));
        }
        Ok(ModelSpec {
            layer_dims,
            activation: Activation::Relu,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn class_count(&self) -> usize {
        *self.layer_dims.last().expect("validated at construction")
    }

    pub fn layer_count(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        self.layer_dims
            .windows(2)
            .map(|w| LayerShape {
                rows: w[1],
                cols: w[0],
                bias: w[1],
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(LayerShape::len).sum()
    }
}

/// Flat model parameters plus the layer shapes that index into them.
///
/// Layout per layer: weights row-major `(rows, cols)`, then the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    shapes: Vec<LayerShape>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, shapes: Vec<LayerShape>) -> Result<Self> {
        let expected: usize = shapes.iter().map(LayerShape::len).sum();
        if values.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "param vector has {} values but shapes require {expected}",
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { term: "parameters" });
        }
        Ok(ParamVector { values, shapes })
    }

    pub fn zeros(spec: &ModelSpec) -> Self {
        let shapes = spec.layer_shapes();
        let len = shapes.iter().map(LayerShape::len).sum();
        ParamVector {
            values: vec![0.0; len],
            shapes,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn same_shape(&self, other: &ParamVector) -> bool {
        self.shapes == other.shapes
    }

    fn layer_offset(&self, layer: usize) -> usize {
        self.shapes[..layer].iter().map(LayerShape::len).sum()
    }

    /// Weight and bias slices of one layer.
    pub fn layer(&self, layer: usize) -> (&[f64], &[f64]) {
        let off = self.layer_offset(layer);
        let s = self.shapes[layer];
        let w_end = off + s.rows * s.cols;
        (&self.values[off..w_end], &self.values[w_end..w_end + s.bias])
    }

    fn layer_mut(&mut self, layer: usize) -> (&mut [f64], &mut [f64]) {
        let off = self.layer_offset(layer);
        let s = self.shapes[layer];
        let w_end = off + s.rows * s.cols;
        let (_, rest) = self.values.split_at_mut(off);
        let (w, rest) = rest.split_at_mut(s.rows * s.cols);
        let _ = w_end;
        (w, &mut rest[..s.bias])
    }

    fn matches_spec(&self, spec: &ModelSpec) -> Result<()> {
        let expected = spec.layer_shapes();
        for (layer, (have, want)) in self.shapes.iter().zip(&expected).enumerate() {
            if have != want {
                return Err(Error::LayerMismatch {
                    layer,
                    what: "parameter block length",
                    expected: want.len(),
                    got: have.len(),
                });
            }
        }
        if self.shapes.len() != expected.len() {
            return Err(Error::ShapeMismatch(format!(
                "params have {} layers, spec has {}",
                self.shapes.len(),
                expected.len()
            )));
        }
        Ok(())
    }

    /// Euclidean distance to another vector of the same shape.
    pub fn distance(&self, other: &ParamVector) -> Result<f64> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch("distance between different shapes".into()));
        }
        let sq: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(sq.sqrt())
    }
}

/// Features paired with row-stochastic labels (one-hot or soft).
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    features: Matrix,
    labels: Matrix,
}

impl Batch {
    pub fn new(features: Matrix, labels: Matrix) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::EmptyBatch("batch construction"));
        }
        if features.rows() != labels.rows() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows vs {} label rows",
                features.rows(),
                labels.rows()
            )));
        }
        for (i, row) in labels.iter_rows().enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&v| v < 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "label row {i} is not row-stochastic (sum {sum})"
                )));
            }
        }
        Ok(Batch { features, labels })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &Matrix {
        &self.labels
    }

    /// Sub-batch holding the given rows, in order.
    pub fn select(&self, indices: &[usize]) -> Result<Batch> {
        Batch::new(
            self.features.select_rows(indices),
            self.labels.select_rows(indices),
        )
    }

    /// Class index of each label row (argmax, lowest index on ties).
    pub fn label_classes(&self) -> Vec<usize> {
        self.labels.iter_rows().map(argmax).collect()
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Xavier-uniform initialization: weights from `±sqrt(6/(fan_in+fan_out))`,
/// biases zero. The same `(spec, seed)` always yields the same vector.
pub fn xavier_init(spec: &ModelSpec, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamVector::zeros(spec);
    for layer in 0..spec.layer_count() {
        let shape = params.shapes[layer];
        let limit = (6.0 / (shape.cols + shape.rows) as f64).sqrt();
        let dist = Uniform::new(-limit, limit);
        let (weights, _bias) = params.layer_mut(layer);
        for w in weights {
            *w = dist.sample(&mut rng);
        }
    }
    params
}

/// Activations cached by a forward pass, enough to backpropagate from any
/// gradient at the logits.
pub(crate) struct ForwardTrace {
    /// Layer inputs: `hidden[0]` is the feature matrix, `hidden[l]` the
    /// rectified output of layer `l-1`.
    hidden: Vec<Matrix>,
    /// Pre-activations of the hidden layers (for the rectifier mask).
    pre: Vec<Matrix>,
    /// Log-probabilities of the output softmax.
    pub log_probs: Matrix,
    /// Probabilities (`exp(log_probs)`).
    pub probs: Matrix,
}

fn affine(input: &Matrix, weights: &[f64], bias: &[f64], shape: LayerShape) -> Matrix {
    let mut out = Matrix::zeros(input.rows(), shape.rows);
    for n in 0..input.rows() {
        let x = input.row(n);
        let z = out.row_mut(n);
        for (o, zo) in z.iter_mut().enumerate() {
            let w = &weights[o * shape.cols..(o + 1) * shape.cols];
            *zo = dot(x, w) + bias[o];
        }
    }
    out
}

fn relu(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        for v in out.row_mut(r) {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
    out
}

/// Row-wise log-softmax with max subtraction.
fn log_softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
        for z in row {
            *z -= lse;
        }
    }
    out
}

pub(crate) fn forward_trace(
    params: &ParamVector,
    spec: &ModelSpec,
    features: &Matrix,
) -> Result<ForwardTrace> {
    params.matches_spec(spec)?;
    if features.cols() != spec.input_dim() {
        return Err(Error::LayerMismatch {
            layer: 0,
            what: "input width",
            expected: spec.input_dim(),
            got: features.cols(),
        });
    }
    let layers = spec.layer_count();
    let mut hidden = Vec::with_capacity(layers);
    let mut pre = Vec::with_capacity(layers.saturating_sub(1));
    hidden.push(features.clone());
    for layer in 0..layers {
        let (weights, bias) = params.layer(layer);
        let z = affine(&hidden[layer], weights, bias, params.shapes[layer]);
        if layer + 1 < layers {
            hidden.push(relu(&z));
            pre.push(z);
        } else {
            let log_probs = log_softmax(&z);
            let mut probs = log_probs.clone();
            for r in 0..probs.rows() {
                for v in probs.row_mut(r) {
                    *v = v.exp();
                }
            }
            return Ok(ForwardTrace {
                hidden,
                pre,
                log_probs,
                probs,
            });
        }
    }
    unreachable!("spec has at least one layer");
}

/// Softmax class probabilities for each feature row. Rows sum to 1.
pub fn forward(params: &ParamVector, spec: &ModelSpec, features: &Matrix) -> Result<Matrix> {
    Ok(forward_trace(params, spec, features)?.probs)
}

/// Backpropagate an arbitrary gradient at the logits through the trace.
pub(crate) fn backward_from_dlogits(
    params: &ParamVector,
    spec: &ModelSpec,
    trace: &ForwardTrace,
    dlogits: &Matrix,
) -> ParamVector {
    let layers = spec.layer_count();
    let mut grad = ParamVector::zeros(spec);
    let mut delta = dlogits.clone();
    for layer in (0..layers).rev() {
        let shape = params.shapes[layer];
        let input = &trace.hidden[layer];
        {
            let (gw, gb) = grad.layer_mut(layer);
            for n in 0..delta.rows() {
                let d = delta.row(n);
                let x = input.row(n);
                for (o, &dn) in d.iter().enumerate() {
                    if dn != 0.0 {
                        axpy(dn, x, &mut gw[o * shape.cols..(o + 1) * shape.cols]);
                    }
                    gb[o] += dn;
                }
            }
        }
        if layer > 0 {
            let (weights, _) = params.layer(layer);
            let mut d_input = Matrix::zeros(delta.rows(), shape.cols);
            for n in 0..delta.rows() {
                let d = delta.row(n);
                let row = d_input.row_mut(n);
                for (o, &dn) in d.iter().enumerate() {
                    if dn != 0.0 {
                        axpy(dn, &weights[o * shape.cols..(o + 1) * shape.cols], row);
                    }
                }
            }
            // Rectifier mask from the pre-activations.
            let z = &trace.pre[layer - 1];
            for n in 0..d_input.rows() {
                let mask = z.row(n);
                for (v, &zv) in d_input.row_mut(n).iter_mut().zip(mask) {
                    if zv <= 0.0 {
                        *v = 0.0;
                    }
                }
            }
            delta = d_input;
        }
    }
    grad
}

/// Mean cross-entropy between the label rows and the trace's log-probs.
fn cross_entropy(trace: &ForwardTrace, labels: &Matrix) -> f64 {
    let n = labels.rows() as f64;
    let mut total = 0.0;
    for r in 0..labels.rows() {
        total -= dot(labels.row(r), trace.log_probs.row(r));
    }
    total / n
}

/// Mean cross-entropy loss and its gradient with respect to the parameters.
///
/// Labels may be soft; the one-hot case reduces to `-log p_class`.
pub fn loss_and_grad(
    params: &ParamVector,
    spec: &ModelSpec,
    batch: &Batch,
) -> Result<(f64, ParamVector)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("loss_and_grad"));
    }
    let trace = forward_trace(params, spec, batch.features())?;
    let loss = cross_entropy(&trace, batch.labels());
    if !loss.is_finite() {
        return Err(Error::NonFinite { term: "loss" });
    }
    // Fused softmax/cross-entropy gradient at the logits: (p - y) / N.
    let n = batch.len() as f64;
    let mut dlogits = trace.probs.clone();
    for r in 0..dlogits.rows() {
        let y = batch.labels().row(r);
        for (d, &yc) in dlogits.row_mut(r).iter_mut().zip(y) {
            *d = (*d - yc) / n;
        }
    }
    let grad = backward_from_dlogits(params, spec, &trace, &dlogits);
    if !grad.values().iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { term: "gradient" });
    }
    Ok((loss, grad))
}

/// One gradient-descent step: `params - lr * grad`.
pub fn sgd_step(params: &ParamVector, grad: &ParamVector, lr: f64) -> Result<ParamVector> {
    if !params.same_shape(grad) {
        return Err(Error::ShapeMismatch("sgd_step params vs grad".into()));
    }
    let values = params
        .values
        .iter()
        .zip(&grad.values)
        .map(|(p, g)| p - lr * g)
        .collect();
    Ok(ParamVector {
        values,
        shapes: params.shapes.clone(),
    })
}

/// Fraction of rows whose predicted class equals the label class.
/// Ties in either argmax resolve to the lowest class index.
pub fn accuracy(params: &ParamVector, spec: &ModelSpec, batch: &Batch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("accuracy"));
    }
    let probs = forward(params, spec, batch.features())?;
    let mut correct = 0usize;
    for r in 0..batch.len() {
        if argmax(probs.row(r)) == argmax(batch.labels().row(r)) {
            correct += 1;
        }
    }
    Ok(correct as f64 / batch.len() as f64)
}

/// Sum over samples of the squared per-sample loss gradient, used for the
/// empirical Fisher diagonal. The per-sample loss is the cross-entropy of
/// that sample alone (no `1/N`); the caller divides by the dataset size.
///
/// Identity used per layer: the per-sample weight gradient is an outer
/// product `delta_n ⊗ input_n`, so the sum of its squares factors into the
/// matrix product of the squared deltas and squared inputs.
pub(crate) fn squared_grad_sum(
    params: &ParamVector,
    spec: &ModelSpec,
    batch: &Batch,
) -> Result<ParamVector> {
    let trace = forward_trace(params, spec, batch.features())?;
    let layers = spec.layer_count();
    let mut acc = ParamVector::zeros(spec);

    // Per-sample gradient at the logits (per-sample loss, so no 1/N).
    let mut delta = trace.probs.clone();
    for r in 0..delta.rows() {
        let y = batch.labels().row(r);
        for (d, &yc) in delta.row_mut(r).iter_mut().zip(y) {
            *d -= yc;
        }
    }

    for layer in (0..layers).rev() {
        let shape = params.shapes[layer];
        let input = &trace.hidden[layer];
        {
            let mut input_sq = input.clone();
            for n in 0..input_sq.rows() {
                for v in input_sq.row_mut(n) {
                    *v *= *v;
                }
            }
            let (fw, fb) = acc.layer_mut(layer);
            for n in 0..delta.rows() {
                let d = delta.row(n);
                let x2 = input_sq.row(n);
                for (o, &dn) in d.iter().enumerate() {
                    let dn2 = dn * dn;
                    if dn2 != 0.0 {
                        axpy(dn2, x2, &mut fw[o * shape.cols..(o + 1) * shape.cols]);
                    }
                    fb[o] += dn2;
                }
            }
        }
        if layer > 0 {
            let (weights, _) = params.layer(layer);
            let mut d_input = Matrix::zeros(delta.rows(), shape.cols);
            for n in 0..delta.rows() {
                let d = delta.row(n);
                let row = d_input.row_mut(n);
                for (o, &dn) in d.iter().enumerate() {
                    if dn != 0.0 {
                        axpy(dn, &weights[o * shape.cols..(o + 1) * shape.cols], row);
                    }
                }
            }
            let z = &trace.pre[layer - 1];
            for n in 0..d_input.rows() {
                let mask = z.row(n);
                for (v, &zv) in d_input.row_mut(n).iter_mut().zip(mask) {
                    if zv <= 0.0 {
                        *v = 0.0;
                    }
                }
            }
            delta = d_input;
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{finite_diff_grad, max_rel_err, random_batch, random_params};

    fn uniform_labels(n: usize, c: usize) -> Matrix {
        let mut m = Matrix::zeros(n, c);
        for r in 0..n {
            for j in 0..c {
                m.set(r, j, 1.0 / c as f64);
            }
        }
        m
    }

    #[test]
    fn spec_rejects_degenerate_dims() {
        assert!(ModelSpec::new(vec![4]).is_err());
        assert!(ModelSpec::new(vec![4, 0, 2]).is_err());
        assert!(ModelSpec::new(vec![1, 1]).is_ok());
    }

    #[test]
    fn xavier_single_weight_respects_bound() {
        let spec = ModelSpec::new(vec![1, 1]).unwrap();
        let bound = (6.0f64 / 2.0).sqrt();
        for seed in 0..50 {
            let p = xavier_init(&spec, seed);
            assert!(p.values()[0].abs() <= bound);
            assert_eq!(p.values()[1], 0.0, "bias must be zero");
        }
    }

    #[test]
    fn xavier_is_deterministic() {
        let spec = ModelSpec::new(vec![5, 4, 3]).unwrap();
        assert_eq!(xavier_init(&spec, 99), xavier_init(&spec, 99));
        assert_ne!(xavier_init(&spec, 99), xavier_init(&spec, 100));
    }

    // Monte-Carlo oracle over seeds: the empirical mean of each weight
    // position across many seeds approaches the distribution mean of zero.
    #[test]
    fn xavier_weight_means_center_on_zero() {
        let spec = ModelSpec::new(vec![4, 3]).unwrap();
        let mut sums = vec![0.0f64; spec.param_count()];
        let trials = 10_000u64;
        for seed in 0..trials {
            for (s, v) in sums.iter_mut().zip(xavier_init(&spec, seed).values()) {
                *s += v;
            }
        }
        let (weights, _) = {
            let p = xavier_init(&spec, 0);
            (p.shapes()[0].rows * p.shapes()[0].cols, ())
        };
        for (i, s) in sums.iter().take(weights).enumerate() {
            let mean = s / trials as f64;
            assert!(mean.abs() < 0.05, "weight {i} mean {mean}");
        }
    }

    #[test]
    fn zero_params_predict_uniform() {
        let spec = ModelSpec::new(vec![3, 10]).unwrap();
        let params = ParamVector::zeros(&spec);
        let x = Matrix::from_rows(&[vec![0.3, 0.7, 0.1], vec![0.9, 0.0, 0.5]]).unwrap();
        let p = forward(&params, &spec, &x).unwrap();
        for r in 0..2 {
            for c in 0..10 {
                assert!((p.get(r, c) - 0.1).abs() < 1e-12);
            }
        }
    }

    // Frozen from an independent high-precision evaluation of
    // affine -> rectifier -> affine -> softmax on hand-set weights.
    #[test]
    fn forward_matches_hand_oracle() {
        let spec = ModelSpec::new(vec![2, 2, 2]).unwrap();
        let values = vec![
            0.5, -0.25, // W1 row 0
            -1.0, 0.5, // W1 row 1
            0.1, -0.2, // b1
            1.0, -1.0, // W2 row 0
            0.5, 2.0, // W2 row 1
            0.05, -0.05, // b2
        ];
        let params = ParamVector::new(values, spec.layer_shapes()).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let p = forward(&params, &spec, &x).unwrap();
        assert!((p.get(0, 0) - 0.53742984534374954945).abs() < 1e-15);
        assert!((p.get(0, 1) - 0.46257015465625045055).abs() < 1e-15);
    }

    #[test]
    fn forward_rejects_wrong_input_width() {
        let spec = ModelSpec::new(vec![3, 2]).unwrap();
        let params = ParamVector::zeros(&spec);
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        match forward(&params, &spec, &x) {
            Err(Error::LayerMismatch { layer: 0, expected: 3, got: 2, .. }) => {}
            other => panic!("expected layer mismatch, got {other:?}"),
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let spec = ModelSpec::new(vec![6, 5, 4]).unwrap();
        let params = random_params(&spec, 11);
        let batch = random_batch(&spec, 7, 12);
        let p = forward(&params, &spec, batch.features()).unwrap();
        for r in 0..p.rows() {
            let sum: f64 = p.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(p.row(r).iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn uniform_prediction_loss_is_ln_c() {
        for c in [2usize, 5, 10] {
            let spec = ModelSpec::new(vec![4, c]).unwrap();
            let params = ParamVector::zeros(&spec);
            let mut labels = Matrix::zeros(3, c);
            for r in 0..3 {
                labels.set(r, r % c, 1.0);
            }
            let features = Matrix::from_rows(&[
                vec![0.1, 0.2, 0.3, 0.4],
                vec![0.5, 0.5, 0.5, 0.5],
                vec![0.9, 0.0, 0.1, 0.2],
            ])
            .unwrap();
            let batch = Batch::new(features, labels).unwrap();
            let (loss, _) = loss_and_grad(&params, &spec, &batch).unwrap();
            assert!((loss - (c as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn near_one_hot_prediction_drives_loss_to_zero() {
        // Huge weight toward class 0 for any positive input.
        let spec = ModelSpec::new(vec![1, 2]).unwrap();
        let params = ParamVector::new(vec![50.0, -50.0, 0.0, 0.0], spec.layer_shapes()).unwrap();
        let batch = Batch::new(
            Matrix::from_rows(&[vec![1.0]]).unwrap(),
            Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap(),
        )
        .unwrap();
        let (loss, _) = loss_and_grad(&params, &spec, &batch).unwrap();
        assert!(loss >= 0.0 && loss < 1e-12);
    }

    // Finite-difference oracle: each analytic gradient coordinate must match
    // the central difference of the loss.
    #[test]
    fn gradient_matches_finite_differences() {
        for (seed, dims) in [(3u64, vec![4, 6, 3]), (4, vec![5, 4, 4, 2]), (5, vec![2, 10])] {
            let spec = ModelSpec::new(dims).unwrap();
            let params = random_params(&spec, seed);
            let batch = random_batch(&spec, 5, seed + 100);
            let (_, grad) = loss_and_grad(&params, &spec, &batch).unwrap();
            let numeric = finite_diff_grad(&params, 1e-5, |p| {
                loss_and_grad(p, &spec, &batch).unwrap().0
            });
            let err = max_rel_err(grad.values(), &numeric);
            assert!(err <= 1e-4, "max rel err {err} for seed {seed}");
        }
    }

    #[test]
    fn soft_label_gradient_matches_finite_differences() {
        let spec = ModelSpec::new(vec![3, 5, 4]).unwrap();
        let params = random_params(&spec, 21);
        let features = random_batch(&spec, 4, 22).features().clone();
        let labels = uniform_labels(4, 4);
        let batch = Batch::new(features, labels).unwrap();
        let (_, grad) = loss_and_grad(&params, &spec, &batch).unwrap();
        let numeric =
            finite_diff_grad(&params, 1e-5, |p| loss_and_grad(p, &spec, &batch).unwrap().0);
        assert!(max_rel_err(grad.values(), &numeric) <= 1e-4);
    }

    #[test]
    fn sgd_step_is_the_update_rule() {
        let spec = ModelSpec::new(vec![1, 2]).unwrap();
        let params = ParamVector::new(vec![1.0, 2.0, 0.0, 0.0], spec.layer_shapes()).unwrap();
        let grad = ParamVector::new(vec![0.5, -1.0, 0.0, 0.0], spec.layer_shapes()).unwrap();
        let next = sgd_step(&params, &grad, 0.1).unwrap();
        assert_eq!(next.values()[0], 0.95);
        assert_eq!(next.values()[1], 2.1);

        assert_eq!(sgd_step(&params, &grad, 0.0).unwrap(), params);
        let zero = ParamVector::zeros(&spec);
        assert_eq!(sgd_step(&params, &zero, 0.7).unwrap(), params);
    }

    #[test]
    fn small_step_does_not_increase_batch_loss() {
        for seed in 30..35u64 {
            let spec = ModelSpec::new(vec![4, 5, 3]).unwrap();
            let params = random_params(&spec, seed);
            let batch = random_batch(&spec, 6, seed + 7);
            let (before, grad) = loss_and_grad(&params, &spec, &batch).unwrap();
            let stepped = sgd_step(&params, &grad, 1e-4).unwrap();
            let (after, _) = loss_and_grad(&stepped, &spec, &batch).unwrap();
            assert!(after <= before + 1e-12, "{after} > {before} at seed {seed}");
        }
    }

    #[test]
    fn accuracy_counts_argmax_matches() {
        // Identity-ish single layer: big diagonal weights force prediction = input hot.
        let spec = ModelSpec::new(vec![3, 3]).unwrap();
        let mut values = vec![0.0; spec.param_count()];
        for i in 0..3 {
            values[i * 3 + i] = 30.0;
        }
        let params = ParamVector::new(values, spec.layer_shapes()).unwrap();
        let features = Matrix::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        // Two of three labels agree with the forced predictions.
        let labels = Matrix::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![1.0, 0.0, 0.0],
        ])
        .unwrap();
        let batch = Batch::new(features.clone(), labels).unwrap();
        let acc = accuracy(&params, &spec, &batch).unwrap();
        assert!((acc - 2.0 / 3.0).abs() <= 1e-9);

        let perfect = Batch::new(
            features.clone(),
            Matrix::from_rows(&[
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
            ])
            .unwrap(),
        )
        .unwrap();
        assert_eq!(accuracy(&params, &spec, &perfect).unwrap(), 1.0);
    }

    #[test]
    fn uniform_output_ties_break_to_class_zero() {
        let spec = ModelSpec::new(vec![2, 4]).unwrap();
        let params = ParamVector::zeros(&spec);
        let features = Matrix::from_rows(&[vec![0.2, 0.8], vec![0.5, 0.1]]).unwrap();
        let labels = Matrix::from_rows(&[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]]).unwrap();
        let batch = Batch::new(features, labels).unwrap();
        // All rows predict class 0, so only the class-0 label row counts.
        assert!((accuracy(&params, &spec, &batch).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn squared_grad_sum_matches_per_sample_loop() {
        let spec = ModelSpec::new(vec![4, 3, 3]).unwrap();
        let params = random_params(&spec, 51);
        let batch = random_batch(&spec, 3, 52);
        let fast = squared_grad_sum(&params, &spec, &batch).unwrap();

        // Independent route: one loss_and_grad per sample, squared, summed.
        let mut slow = vec![0.0; params.len()];
        for i in 0..batch.len() {
            let single = batch.select(&[i]).unwrap();
            let (_, g) = loss_and_grad(&params, &spec, &single).unwrap();
            for (s, v) in slow.iter_mut().zip(g.values()) {
                *s += v * v;
            }
        }
        for (a, b) in fast.values().iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
}
