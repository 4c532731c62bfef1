//! Active-forgetting unlearning: new memories overwrite the target data
//! while an EWC anchor preserves everything else, plus the retrain
//! ground-truth and the conventional-loss baseline.

pub mod memory;
pub mod preserver;

pub use memory::{build_memories, debias_label, dynamic_sigma, teacher_label, TeacherEnsemble};
pub use preserver::{ewc_penalty, fisher_diagonal, unlearn_loss_grad, FisherDiagonal};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{select_class, ClientPartition, Dataset};
use crate::error::{Error, Result};
use crate::federation::{aggregate, run_federated, FederationConfig, GlobalState, RoundMetrics};
use crate::nn::{loss_and_grad, sgd_step, ModelSpec};
use crate::seed;

/// Abort threshold for the unlearning loss magnitude. The ascent term on the
/// target data is unbounded above, so runaway optimization must fail loudly
/// rather than return garbage parameters.
pub const DIVERGENCE_GUARD: f64 = 1e6;

/// Default teacher-ensemble size.
pub const DEFAULT_TEACHER_COUNT: usize = 10;

/// What to unlearn: one class held by one client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearnRequest {
    pub client_id: usize,
    pub target_class: usize,
    /// Dataset indices of the target samples (all within the client's share).
    pub target_indices: Vec<usize>,
}

impl UnlearnRequest {
    /// Class-wise request: every sample of `target_class` held by
    /// `client_id`. Derive this against the clean dataset before any
    /// poisoning, label flips would otherwise hide the class.
    pub fn class_wise(
        dataset: &Dataset,
        partition: &ClientPartition,
        client_id: usize,
        target_class: usize,
    ) -> Result<Self> {
        if client_id >= partition.client_count() {
            return Err(Error::InvalidConfig(format!(
                "client {client_id} out of range ({} clients)",
                partition.client_count()
            )));
        }
        if target_class >= dataset.class_count() {
            return Err(Error::InvalidConfig(format!(
                "class {target_class} out of range ({} classes)",
                dataset.class_count()
            )));
        }
        let in_class: std::collections::HashSet<usize> =
            select_class(dataset, target_class).into_iter().collect();
        let target_indices: Vec<usize> = partition
            .client(client_id)
            .iter()
            .copied()
            .filter(|i| in_class.contains(i))
            .collect();
        if target_indices.is_empty() {
            return Err(Error::ClassMissing {
                class: target_class,
                client: client_id,
            });
        }
        Ok(UnlearnRequest {
            client_id,
            target_class,
            target_indices,
        })
    }
}

/// Which fake label overwrites the old memories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FakeLabelKind {
    Uniform,
    Random,
    Teacher,
    DebiasTeacher,
}

impl std::fmt::Display for FakeLabelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            FakeLabelKind::Uniform => "uniform",
            FakeLabelKind::Random => "random",
            FakeLabelKind::Teacher => "teacher",
            FakeLabelKind::DebiasTeacher => "debias",
        };
        f.write_str(name)
    }
}

/// How the debias weight sigma is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DebiasMode {
    /// Per-sample quotient rule from each sample's own teacher label.
    Dynamic,
    /// One fixed sigma in `[0,1]` for every sample.
    Fixed(f64),
}

/// Knowledge-preserver knobs for one unlearning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EwcConfig {
    /// Trade-off between learning the new memories and staying anchored.
    pub lambda: f64,
    /// Epochs of EWC training over the target set.
    pub ewc_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub debias: DebiasMode,
}

impl EwcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidConfig(format!("lambda {} must be >= 0", self.lambda)));
        }
        if self.ewc_epochs == 0 {
            return Err(Error::InvalidConfig("ewc_epochs must be >= 1".into()));
        }
        self.validate_runtime()
    }

    /// Checks everything except the epoch minimum (a zero-epoch run is a
    /// legitimate no-op in tests).
    fn validate_runtime(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidConfig(format!("lambda {} must be >= 0", self.lambda)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if let DebiasMode::Fixed(s) = self.debias {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::InvalidConfig(format!("sigma {s} outside [0,1]")));
            }
        }
        Ok(())
    }
}

/// Shared experiment context: the model family plus the (possibly poisoned)
/// training data and its client split.
#[derive(Debug, Clone, Copy)]
pub struct FederatedTask<'a> {
    pub spec: &'a ModelSpec,
    pub dataset: &'a Dataset,
    pub partition: &'a ClientPartition,
}

fn check_request(task: &FederatedTask, state: &GlobalState, request: &UnlearnRequest) -> Result<()> {
    if request.client_id >= state.client_params.len() {
        return Err(Error::InvalidConfig(format!(
            "client {} out of range ({} clients)",
            request.client_id,
            state.client_params.len()
        )));
    }
    if request.target_indices.is_empty() {
        return Err(Error::ClassMissing {
            class: request.target_class,
            client: request.client_id,
        });
    }
    if let Some(&i) = request
        .target_indices
        .iter()
        .find(|&&i| i >= task.dataset.len())
    {
        return Err(Error::InvalidConfig(format!(
            "target index {i} outside dataset of {}",
            task.dataset.len()
        )));
    }
    Ok(())
}

/// Active-forgetting unlearning for one request.
///
/// The target client anchors at its current local model, builds new
/// memories from the fake-label generator, runs `ewc_epochs` of mini-batch
/// SGD on the unlearning loss, and the server re-aggregates with every
/// other client unchanged.
pub fn run_unlearn(
    task: &FederatedTask,
    state: &GlobalState,
    request: &UnlearnRequest,
    kind: FakeLabelKind,
    teacher_count: usize,
    ewc: &EwcConfig,
    seed_value: u64,
) -> Result<GlobalState> {
    ewc.validate_runtime()?;
    check_request(task, state, request)?;
    let client = request.client_id;
    let anchor = state.client_params[client].clone();
    let targets = task.dataset.batch(&request.target_indices)?;

    let ensemble = TeacherEnsemble::init(task.spec, teacher_count, seed_value)?;
    let memories = build_memories(kind, &ensemble, &targets, &ewc.debias, seed_value)?;
    drop(ensemble); // released after label generation

    let client_data = task.dataset.batch(task.partition.client(client))?;
    let fisher = fisher_diagonal(&anchor, task.spec, &client_data, ewc.batch_size)?;

    let mut theta = anchor;
    let mut rng = seed::rng(&[seed_value, seed::TAG_UNLEARN]);
    let mut order: Vec<usize> = (0..targets.len()).collect();
    for _ in 0..ewc.ewc_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(ewc.batch_size) {
            let m = memories.select(chunk)?;
            let r = targets.select(chunk)?;
            let (loss, grad) = unlearn_loss_grad(&theta, task.spec, &m, &r, &fisher, ewc.lambda)?;
            if loss.abs() > DIVERGENCE_GUARD {
                return Err(Error::Diverged { loss });
            }
            theta = sgd_step(&theta, &grad, ewc.learning_rate)?;
        }
    }

    let mut client_params = state.client_params.clone();
    client_params[client] = theta;
    let global = aggregate(&client_params, &state.weights)?;
    GlobalState::new(state.round, global, client_params, state.weights.clone())
}

/// Conventional-loss baseline: continue training on the new memories with
/// plain cross-entropy — no anchor, no ascent term. Exhibits catastrophic
/// forgetting of the non-target data.
#[allow(clippy::too_many_arguments)]
pub fn run_conventional(
    task: &FederatedTask,
    state: &GlobalState,
    request: &UnlearnRequest,
    kind: FakeLabelKind,
    teacher_count: usize,
    debias: &DebiasMode,
    learning_rate: f64,
    batch_size: usize,
    epochs: usize,
    seed_value: u64,
) -> Result<GlobalState> {
    if !(learning_rate > 0.0) || batch_size == 0 {
        return Err(Error::InvalidConfig(
            "conventional baseline needs a positive learning rate and batch size".into(),
        ));
    }
    check_request(task, state, request)?;
    let client = request.client_id;
    let targets = task.dataset.batch(&request.target_indices)?;
    let ensemble = TeacherEnsemble::init(task.spec, teacher_count, seed_value)?;
    let memories = build_memories(kind, &ensemble, &targets, debias, seed_value)?;

    let mut theta = state.client_params[client].clone();
    let mut rng = seed::rng(&[seed_value, seed::TAG_UNLEARN]);
    let mut order: Vec<usize> = (0..memories.len()).collect();
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            let m = memories.select(chunk)?;
            let (loss, grad) = loss_and_grad(&theta, task.spec, &m)?;
            if loss.abs() > DIVERGENCE_GUARD {
                return Err(Error::Diverged { loss });
            }
            theta = sgd_step(&theta, &grad, learning_rate)?;
        }
    }

    let mut client_params = state.client_params.clone();
    client_params[client] = theta;
    let global = aggregate(&client_params, &state.weights)?;
    GlobalState::new(state.round, global, client_params, state.weights.clone())
}

/// Ground-truth baseline: drop the target samples and rerun federated
/// training from a fresh initialization.
pub fn run_retrain(
    task: &FederatedTask,
    config: &FederationConfig,
    request: &UnlearnRequest,
) -> Result<(GlobalState, Vec<RoundMetrics>)> {
    if request.target_indices.is_empty() {
        return Err(Error::ClassMissing {
            class: request.target_class,
            client: request.client_id,
        });
    }
    let (reduced, kept) = task.dataset.without(&request.target_indices);
    let mut old_to_new = vec![usize::MAX; task.dataset.len()];
    for (new, &old) in kept.iter().enumerate() {
        old_to_new[old] = new;
    }
    let assignments: Vec<Vec<usize>> = (0..task.partition.client_count())
        .map(|k| {
            task.partition
                .client(k)
                .iter()
                .filter_map(|&old| {
                    let new = old_to_new[old];
                    (new != usize::MAX).then_some(new)
                })
                .collect()
        })
        .collect();
    let partition = ClientPartition::new(assignments, reduced.len())?;
    run_federated(config, task.spec, &partition, &reduced)
}
