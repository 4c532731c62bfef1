//! FedAvg simulation: local training loops, data-size-weighted aggregation,
//! and round scheduling.
//!
//! Every client participates in every round. Per-client RNG streams are
//! derived from `(seed, client, round)`, and aggregation sums in client-index
//! order, so results do not depend on scheduling — clients of one round may
//! train in parallel.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClientPartition, Dataset};
use crate::error::{Error, Result};
use crate::nn::{accuracy, loss_and_grad, sgd_step, xavier_init, Batch, ModelSpec, ParamVector};
use crate::seed;

pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// Knobs of one federated training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub client_count: usize,
    pub local_epochs: usize,
    pub rounds: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.client_count == 0 {
            return Err(Error::InvalidConfig("client_count must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Server-side view after a round: the global model plus what each client
/// currently holds (equal to the broadcast global model right after
/// training; the target client diverges during unlearning).
#[derive(Debug, Clone)]
pub struct GlobalState {
    pub round: usize,
    pub global_params: ParamVector,
    pub client_params: Vec<ParamVector>,
    pub weights: Vec<f64>,
}

impl GlobalState {
    pub fn new(
        round: usize,
        global_params: ParamVector,
        client_params: Vec<ParamVector>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        check_weights(&weights, 1e-12)?;
        if client_params.len() != weights.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} client params vs {} weights",
                client_params.len(),
                weights.len()
            )));
        }
        if client_params.iter().any(|p| !p.same_shape(&global_params)) {
            return Err(Error::ShapeMismatch("client params differ from global shape".into()));
        }
        Ok(GlobalState {
            round,
            global_params,
            client_params,
            weights,
        })
    }
}

/// Per-(round, client) training metrics, in emission order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub client: usize,
    pub loss: f64,
    pub accuracy: f64,
}

fn check_weights(weights: &[f64], tolerance: f64) -> Result<()> {
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > tolerance {
        return Err(Error::WeightSum { sum, tolerance });
    }
    Ok(())
}

/// `w_k = n_k / sum(n)` for each client.
pub fn client_weights(partition: &ClientPartition) -> Vec<f64> {
    let total = partition.total() as f64;
    partition.sizes().iter().map(|&n| n as f64 / total).collect()
}

/// `epochs` full passes of seeded mini-batch SGD over `data`.
pub fn local_train(
    params: &ParamVector,
    spec: &ModelSpec,
    data: &Batch,
    epochs: usize,
    learning_rate: f64,
    batch_size: usize,
    seed_value: u64,
) -> Result<ParamVector> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
    }
    let mut rng = seed::rng(&[seed_value, seed::TAG_LOCAL_TRAIN]);
    let mut current = params.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            let batch = data.select(chunk)?;
            let (_, grad) = loss_and_grad(&current, spec, &batch)?;
            current = sgd_step(&current, &grad, learning_rate)?;
        }
    }
    Ok(current)
}

/// Weighted average of client parameters: `sum_k w_k * theta_k`,
/// accumulated in client-index order.
pub fn aggregate(client_params: &[ParamVector], weights: &[f64]) -> Result<ParamVector> {
    if client_params.is_empty() || client_params.len() != weights.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} client params vs {} weights",
            client_params.len(),
            weights.len()
        )));
    }
    check_weights(weights, WEIGHT_SUM_TOLERANCE)?;
    let first = &client_params[0];
    if client_params.iter().any(|p| !p.same_shape(first)) {
        return Err(Error::ShapeMismatch("client params have differing shapes".into()));
    }
    // Start from the first term so a single client with weight 1 passes
    // through bit-identically.
    let mut values: Vec<f64> = first.values().iter().map(|v| weights[0] * v).collect();
    for (params, &w) in client_params.iter().zip(weights).skip(1) {
        for (acc, v) in values.iter_mut().zip(params.values()) {
            *acc += w * v;
        }
    }
    ParamVector::new(values, first.shapes().to_vec())
}

/// Run `rounds` iterations of broadcast / local training / aggregation and
/// return the final state plus per-round metrics.
///
/// Client metrics are each client's loss and accuracy on its own data,
/// measured right after its local training of that round.
pub fn run_federated(
    config: &FederationConfig,
    spec: &ModelSpec,
    partition: &ClientPartition,
    dataset: &Dataset,
) -> Result<(GlobalState, Vec<RoundMetrics>)> {
    config.validate()?;
    if partition.client_count() != config.client_count {
        return Err(Error::InvalidConfig(format!(
            "partition has {} clients, config says {}",
            partition.client_count(),
            config.client_count
        )));
    }
    if dataset.feature_dim() != spec.input_dim() || dataset.class_count() != spec.class_count() {
        return Err(Error::InvalidConfig(format!(
            "dataset {}x{} classes does not fit model {:?}",
            dataset.feature_dim(),
            dataset.class_count(),
            spec.layer_dims()
        )));
    }

    let client_data: Vec<Batch> = (0..config.client_count)
        .map(|k| dataset.batch(partition.client(k)))
        .collect::<Result<_>>()?;
    let weights = client_weights(partition);

    let mut global = xavier_init(spec, seed::mix(&[config.seed, seed::TAG_INIT]));
    let mut metrics = Vec::with_capacity(config.rounds * config.client_count);
    for round in 0..config.rounds {
        let trained: Vec<(ParamVector, f64, f64)> = client_data
            .par_iter()
            .enumerate()
            .map(|(k, data)| {
                let client_seed =
                    seed::mix(&[config.seed, seed::TAG_LOCAL_TRAIN, k as u64, round as u64]);
                let params = local_train(
                    &global,
                    spec,
                    data,
                    config.local_epochs,
                    config.learning_rate,
                    config.batch_size,
                    client_seed,
                )?;
                let (loss, _) = loss_and_grad(&params, spec, data)?;
                let acc = accuracy(&params, spec, data)?;
                Ok((params, loss, acc))
            })
            .collect::<Result<_>>()?;
        for (k, (_, loss, acc)) in trained.iter().enumerate() {
            metrics.push(RoundMetrics {
                round,
                client: k,
                loss: *loss,
                accuracy: *acc,
            });
        }
        let client_params: Vec<ParamVector> = trained.into_iter().map(|(p, _, _)| p).collect();
        global = aggregate(&client_params, &weights)?;
    }

    // Post-training broadcast: every client holds the final global model.
    let client_params = vec![global.clone(); config.client_count];
    let state = GlobalState::new(config.rounds, global, client_params, weights)?;
    Ok((state, metrics))
}
