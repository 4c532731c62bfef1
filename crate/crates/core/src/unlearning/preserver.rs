//! Knowledge preserver: empirical Fisher diagonal and the EWC-constrained
//! unlearning loss.
//!
//! The quadratic penalty `(lambda/2) (theta - theta*)^T F (theta - theta*)`
//! anchors the model to its converged solution while the new memories
//! overwrite the target data, with `F` the diagonal empirical Fisher — the
//! per-parameter mean of squared per-sample loss gradients at the anchor.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{
    backward_from_dlogits, forward_trace, squared_grad_sum, Batch, ModelSpec, ParamVector,
};

/// Per-parameter nonnegative importance weights plus the anchor parameters
/// they were computed at.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherDiagonal {
    values: Vec<f64>,
    anchor: ParamVector,
}

impl FisherDiagonal {
    pub fn new(values: Vec<f64>, anchor: ParamVector) -> Result<Self> {
        if values.len() != anchor.len() {
            return Err(Error::ShapeMismatch(format!(
                "fisher has {} entries, anchor has {}",
                values.len(),
                anchor.len()
            )));
        }
        if !values.iter().all(|&v| v.is_finite() && v >= 0.0) {
            return Err(Error::NonFinite { term: "fisher diagonal" });
        }
        Ok(FisherDiagonal { values, anchor })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn anchor(&self) -> &ParamVector {
        &self.anchor
    }
}

/// Diagonal empirical Fisher at `params`:
/// `F_i = (1/N) * sum_n (d loss_n / d theta_i)^2`.
///
/// Work is chunked by `batch_size` purely for locality; the result is a mean
/// over samples and therefore independent of chunking and sample order.
pub fn fisher_diagonal(
    params: &ParamVector,
    spec: &ModelSpec,
    data: &Batch,
    batch_size: usize,
) -> Result<FisherDiagonal> {
    if data.is_empty() {
        return Err(Error::EmptyBatch("fisher_diagonal"));
    }
    let chunk = batch_size.max(1);
    let mut acc = vec![0.0f64; params.len()];
    let all: Vec<usize> = (0..data.len()).collect();
    for indices in all.chunks(chunk) {
        let part = data.select(indices)?;
        let sums = squared_grad_sum(params, spec, &part)?;
        for (a, s) in acc.iter_mut().zip(sums.values()) {
            *a += s;
        }
    }
    let n = data.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    FisherDiagonal::new(acc, params.clone())
}

/// EWC penalty value and gradient at `params`:
/// value `(lambda/2) * sum_i F_i (theta_i - anchor_i)^2`,
/// gradient `lambda * F_i (theta_i - anchor_i)`.
pub fn ewc_penalty(
    params: &ParamVector,
    fisher: &FisherDiagonal,
    lambda: f64,
) -> Result<(f64, ParamVector)> {
    if !params.same_shape(fisher.anchor()) {
        return Err(Error::ShapeMismatch("ewc_penalty params vs anchor".into()));
    }
    let mut value = 0.0;
    let mut grad = vec![0.0f64; params.len()];
    for (i, ((&p, &a), &f)) in params
        .values()
        .iter()
        .zip(fisher.anchor().values())
        .zip(fisher.values())
        .enumerate()
    {
        let diff = p - a;
        value += f * diff * diff;
        grad[i] = lambda * f * diff;
    }
    value *= lambda / 2.0;
    if !value.is_finite() {
        return Err(Error::NonFinite { term: "ewc penalty" });
    }
    Ok((value, ParamVector::new(grad, params.shapes().to_vec())?))
}

/// Unlearning loss and gradient:
/// cross-entropy on the new memories, minus cross-entropy on the target
/// data, plus the EWC penalty. Memories and targets must carry the same
/// feature rows (two label sets over one forward pass).
pub fn unlearn_loss_grad(
    params: &ParamVector,
    spec: &ModelSpec,
    memories: &Batch,
    targets: &Batch,
    fisher: &FisherDiagonal,
    lambda: f64,
) -> Result<(f64, ParamVector)> {
    if memories.is_empty() {
        return Err(Error::EmptyBatch("unlearn_loss_grad"));
    }
    if memories.features() != targets.features() {
        return Err(Error::ShapeMismatch(
            "memories and targets must share feature rows".into(),
        ));
    }
    let trace = forward_trace(params, spec, memories.features())?;
    let n = memories.len() as f64;
    let mut memory_loss = 0.0;
    let mut target_loss = 0.0;
    for r in 0..memories.len() {
        let logp = trace.log_probs.row(r);
        memory_loss -= crate::linalg::dot(memories.labels().row(r), logp) / n;
        target_loss -= crate::linalg::dot(targets.labels().row(r), logp) / n;
    }
    if !memory_loss.is_finite() {
        return Err(Error::NonFinite { term: "memory loss" });
    }
    if !target_loss.is_finite() {
        return Err(Error::NonFinite { term: "target loss" });
    }

    // d(L_M - L_R)/dlogits = (y_R - y_M) / N; the softmax terms cancel.
    let mut dlogits = Matrix::zeros(memories.len(), spec.class_count());
    for r in 0..memories.len() {
        let ym = memories.labels().row(r);
        let yr = targets.labels().row(r);
        for (c, d) in dlogits.row_mut(r).iter_mut().enumerate() {
            *d = (yr[c] - ym[c]) / n;
        }
    }
    let mut grad = backward_from_dlogits(params, spec, &trace, &dlogits);
    let (penalty, penalty_grad) = ewc_penalty(params, fisher, lambda)?;
    for (g, p) in grad.values_mut().iter_mut().zip(penalty_grad.values()) {
        *g += p;
    }
    if !grad.values().iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { term: "unlearning gradient" });
    }
    Ok((memory_loss - target_loss + penalty, grad))
}
