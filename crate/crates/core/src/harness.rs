//! Synchronous federated training loop.
//!
//! Each round samples clients, trains every selected client from the same
//! global snapshot, weights the returned deltas according to the configured
//! method, applies the weighted update and evaluates on the test subset.
//! All randomness comes from [`crate::rng`] streams, so a run depends only on
//! its configuration, never on the number of worker threads.

use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};

use crate::aggregation::{
    aggregate, fedavg_weights, fedoui_weights, gradalign_weights, oui_weights_from_scores,
    ClientReport, WeightVector,
};
use crate::beta::BetaFit;
use crate::config::{DatasetKind, ExperimentConfig, Method, NoiseKind, PartitionKind};
use crate::data::{load_cifar10, subset, synthetic_blobs, Dataset};
use crate::error::{Error, Result};
use crate::nn::{self, ModelSpec};
use crate::oui::oui;
use crate::params::ModelParams;
use crate::rng::{purpose_stream, stream, Purpose};

const EVAL_CHUNK: usize = 250;

/// Sample indices held by each client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub assignment: Vec<Vec<usize>>,
}

impl Partition {
    pub fn sizes(&self) -> Vec<usize> {
        self.assignment.iter().map(Vec::len).collect()
    }

    pub fn total(&self) -> usize {
        self.assignment.iter().map(Vec::len).sum()
    }
}

fn dirichlet_proportions<R: Rng + ?Sized>(n: usize, concentration: f64, rng: &mut R) -> Result<Vec<f64>> {
    let gamma = Gamma::new(concentration, 1.0)
        .map_err(|e| Error::Input(format!("concentration {concentration}: {e}")))?;
    let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        Ok(draws.into_iter().map(|g| g / total).collect())
    } else {
        // every draw underflowed; all mass to the largest (first) one
        let mut p = vec![0.0; n];
        p[0] = 1.0;
        Ok(p)
    }
}

/// Moves samples one at a time from the largest client to any client below
/// `min_size` until every client has at least `min_size` samples.
fn repair_partition(assignment: &mut [Vec<usize>], min_size: usize) -> Result<()> {
    let total: usize = assignment.iter().map(Vec::len).sum();
    if total < min_size * assignment.len() {
        return Err(Error::Input(format!(
            "{total} samples cannot give {} clients at least {min_size} each",
            assignment.len()
        )));
    }
    while let Some(needy) = assignment.iter().position(|s| s.len() < min_size) {
        let donor = (0..assignment.len())
            .max_by(|&a, &b| assignment[a].len().cmp(&assignment[b].len()).then(b.cmp(&a)))
            .expect("nonempty");
        let moved = assignment[donor].pop().expect("donor above minimum");
        assignment[needy].push(moved);
    }
    Ok(())
}

/// Non-IID split: each class is divided across clients by proportions drawn
/// from a symmetric Dirichlet(`concentration`). Shards are repaired to hold
/// at least `min_size` samples and then shuffled, so the first `min_size`
/// entries of each shard form a fixed random probe batch.
pub fn dirichlet_partition<R: Rng + ?Sized>(
    labels: &[usize],
    n_clients: usize,
    concentration: f64,
    min_size: usize,
    rng: &mut R,
) -> Result<Partition> {
    if n_clients == 0 {
        return Err(Error::Input("need at least one client".into()));
    }
    if concentration.is_nan() || concentration <= 0.0 {
        return Err(Error::Input(format!("concentration must be positive, got {concentration}")));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut assignment = vec![Vec::new(); n_clients];
    for class in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(rng);
        let p = dirichlet_proportions(n_clients, concentration, rng)?;
        let len = members.len();
        let mut start = 0;
        let mut cumulative = 0.0;
        for (client, share) in p.iter().enumerate() {
            cumulative += share;
            let end = if client + 1 == n_clients {
                len
            } else {
                ((cumulative * len as f64).floor() as usize).clamp(start, len)
            };
            assignment[client].extend_from_slice(&members[start..end]);
            start = end;
        }
    }
    repair_partition(&mut assignment, min_size)?;
    for shard in &mut assignment {
        shard.shuffle(rng);
    }
    Ok(Partition { assignment })
}

/// Uniform split into near-equal shards.
pub fn iid_partition<R: Rng + ?Sized>(n_samples: usize, n_clients: usize, rng: &mut R) -> Result<Partition> {
    if n_clients == 0 {
        return Err(Error::Input("need at least one client".into()));
    }
    let mut order: Vec<usize> = (0..n_samples).collect();
    order.shuffle(rng);
    let base = n_samples / n_clients;
    let extra = n_samples % n_clients;
    let mut assignment = Vec::with_capacity(n_clients);
    let mut start = 0;
    for c in 0..n_clients {
        let len = base + usize::from(c < extra);
        assignment.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(Partition { assignment })
}

/// Number of clients hit by label noise: `⌈fraction · n_clients⌉`.
pub fn noisy_client_count(fraction: f64, n_clients: usize) -> usize {
    // guard against products like 0.3·20 landing a hair above an integer
    (((fraction * n_clients as f64) - 1e-9).ceil().max(0.0) as usize).min(n_clients)
}

/// Symmetric label noise. A seeded subset of clients has each of its
/// training labels replaced, with probability `flip_prob`, by a uniformly
/// drawn different label. Returns the new dataset and the affected client
/// ids in ascending order.
pub fn inject_label_noise<R: Rng + ?Sized>(
    dataset: &Dataset,
    partition: &Partition,
    fraction: f64,
    flip_prob: f64,
    rng: &mut R,
) -> Result<(Dataset, Vec<usize>)> {
    if !(0.0..=1.0).contains(&fraction) || !(0.0..=1.0).contains(&flip_prob) {
        return Err(Error::Input(format!(
            "noise fraction {fraction} and flip probability {flip_prob} must lie in [0, 1]"
        )));
    }
    let n_clients = partition.assignment.len();
    let count = noisy_client_count(fraction, n_clients);
    let mut noisy = index::sample(rng, n_clients, count).into_vec();
    noisy.sort_unstable();
    let mut out = dataset.clone();
    let k = dataset.classes;
    if k < 2 {
        return Ok((out, noisy));
    }
    for &client in &noisy {
        for &i in &partition.assignment[client] {
            if rng.gen_bool(flip_prob) {
                out.labels[i] = (dataset.labels[i] + 1 + rng.gen_range(0..k - 1)) % k;
            }
        }
    }
    Ok((out, noisy))
}

/// Uniform sample without replacement, returned in ascending id order.
pub fn sample_clients<R: Rng + ?Sized>(n_clients: usize, per_round: usize, rng: &mut R) -> Result<Vec<usize>> {
    if per_round > n_clients {
        return Err(Error::Input(format!(
            "cannot sample {per_round} of {n_clients} clients"
        )));
    }
    let mut ids = index::sample(rng, n_clients, per_round).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// Sample order for one local epoch.
pub fn epoch_order<R: Rng + ?Sized>(shard: &[usize], rng: &mut R) -> Vec<usize> {
    let mut order = shard.to_vec();
    order.shuffle(rng);
    order
}

/// The data one client trains on.
#[derive(Debug, Clone, Copy)]
pub struct ClientData<'a> {
    pub id: usize,
    pub train: &'a Dataset,
    pub shard: &'a [usize],
    pub probe: &'a [usize],
}

/// Local training from the global snapshot: `local_epochs` passes of
/// momentum SGD over a fresh shuffle of the shard (FedProx adds
/// `μ(θ − θ_global)` to every gradient). The OUI is measured on the probe
/// batch after training.
pub fn local_train<R: Rng + ?Sized>(
    spec: &ModelSpec,
    global: &ModelParams,
    client: ClientData<'_>,
    config: &ExperimentConfig,
    rng: &mut R,
) -> Result<ClientReport> {
    if client.shard.is_empty() {
        return Err(Error::Input(format!("client {} has an empty shard", client.id)));
    }
    let mut params = global.clone();
    let mut velocity = global.zeros_like();
    let mut loss_sum = 0.0;
    let mut seen = 0usize;
    for _ in 0..config.local_epochs {
        let order = epoch_order(client.shard, rng);
        for batch_idx in order.chunks(config.batch_size) {
            let (x, y) = client.train.batch(batch_idx);
            let (logits, cache) = nn::forward(spec, &params, &x)?;
            loss_sum += nn::cross_entropy_loss(&logits, &y)? * batch_idx.len() as f64;
            seen += batch_idx.len();
            let mut grads = nn::backward(spec, &params, &cache, &y)?;
            if config.method == Method::FedProx && config.fedprox_mu > 0.0 {
                grads.axpy(config.fedprox_mu, &params.sub(global)?)?;
            }
            nn::sgd_momentum_step(&mut params, &grads, &mut velocity, config.lr, config.momentum)?;
        }
    }
    if !params.is_finite() {
        return Err(Error::Numeric(format!(
            "client {} diverged during local training",
            client.id
        )));
    }
    let (probe_x, _) = client.train.batch(client.probe);
    let (_, preacts) = nn::infer(spec, &params, &probe_x)?;
    Ok(ClientReport {
        client_id: client.id,
        delta: params.sub(global)?,
        n_samples: client.shard.len(),
        oui: oui(&preacts)?,
        train_loss: loss_sum / seen as f64,
    })
}

/// Fraction of correctly classified samples.
pub fn evaluate(spec: &ModelSpec, params: &ModelParams, test: &Dataset, pool: &ThreadPool) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Input("empty test set".into()));
    }
    let indices: Vec<usize> = (0..test.len()).collect();
    let correct: Vec<usize> = pool.install(|| {
        indices
            .par_chunks(EVAL_CHUNK)
            .map(|chunk| {
                let (x, y) = test.batch(chunk);
                let (logits, _) = nn::infer(spec, params, &x)?;
                Ok(nn::argmax_rows(&logits)
                    .into_iter()
                    .zip(y)
                    .filter(|(p, t)| p == t)
                    .count())
            })
            .collect::<Result<_>>()
    })?;
    Ok(correct.iter().sum::<usize>() as f64 / test.len() as f64)
}

/// How the round's Beta fit was used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FitRecord {
    /// The method does not look at OUI.
    Unused,
    Degenerate,
    Fitted { alpha: f64, beta: f64 },
}

impl From<BetaFit> for FitRecord {
    fn from(fit: BetaFit) -> Self {
        match fit {
            BetaFit::Degenerate => FitRecord::Degenerate,
            BetaFit::Fitted(p) => FitRecord::Fitted {
                alpha: p.alpha(),
                beta: p.beta(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based round number.
    pub round: usize,
    pub selected: Vec<usize>,
    pub sample_counts: Vec<usize>,
    pub oui_values: Vec<f64>,
    pub fit: FitRecord,
    /// Structural scores; empty when the fit is unused.
    pub scores: Vec<f64>,
    pub weights: Vec<f64>,
    pub test_accuracy: f64,
    pub mean_train_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    pub auc: f64,
}

/// Final, best and normalized trapezoidal area of the accuracy curve.
pub fn summary_metrics(accuracies: &[f64]) -> Option<Summary> {
    let (&last, _) = accuracies.split_last()?;
    let best = accuracies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let auc = if accuracies.len() == 1 {
        last
    } else {
        let area: f64 = accuracies.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum();
        area / (accuracies.len() - 1) as f64
    };
    Some(Summary {
        final_accuracy: last,
        best_accuracy: best,
        auc,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentLog {
    pub config: ExperimentConfig,
    pub noisy_clients: Vec<usize>,
    pub records: Vec<RoundRecord>,
    /// Absent when no round was run.
    pub summary: Option<Summary>,
}

impl ExperimentLog {
    pub fn recompute_summary(&self) -> Option<Summary> {
        let acc: Vec<f64> = self.records.iter().map(|r| r.test_accuracy).collect();
        summary_metrics(&acc)
    }
}

/// Everything that stays fixed across the rounds of a run.
#[derive(Debug, Clone)]
pub struct FederatedState {
    pub spec: ModelSpec,
    pub global: ModelParams,
    pub train: Dataset,
    pub test: Dataset,
    pub partition: Partition,
    /// Probe batch indices per client (a prefix of the shuffled shard).
    pub probes: Vec<Vec<usize>>,
    pub noisy_clients: Vec<usize>,
    /// Rounds completed so far.
    pub round: usize,
}

impl FederatedState {
    /// Seeds the model, partitions the training data, applies label noise and
    /// fixes every client's probe batch.
    pub fn new(config: &ExperimentConfig, train: Dataset, test: Dataset) -> Result<Self> {
        config.validate()?;
        let spec = config.model_spec();
        spec.output_shapes()?;
        if train.sample_shape() != spec.input_shape.as_slice()
            || test.sample_shape() != spec.input_shape.as_slice()
        {
            return Err(Error::Config(format!(
                "dataset samples have shape {:?}, model expects {:?}",
                train.sample_shape(),
                spec.input_shape
            )));
        }
        let global = spec.init_params(&mut purpose_stream(config.seed, Purpose::Init));
        let mut part_rng = purpose_stream(config.seed, Purpose::Partition);
        let partition = match config.partition {
            PartitionKind::Dirichlet => dirichlet_partition(
                &train.labels,
                config.n_clients,
                config.concentration,
                config.probe_batch_size,
                &mut part_rng,
            )?,
            PartitionKind::Iid => iid_partition(train.len(), config.n_clients, &mut part_rng)?,
        };
        if let Some((c, s)) = partition
            .assignment
            .iter()
            .enumerate()
            .find(|(_, s)| s.len() < config.probe_batch_size)
        {
            return Err(Error::Config(format!(
                "client {c} holds {} samples, fewer than probe_batch_size = {}",
                s.len(),
                config.probe_batch_size
            )));
        }
        let (train, noisy_clients) = match config.noise {
            NoiseKind::None => (train, Vec::new()),
            NoiseKind::Label => inject_label_noise(
                &train,
                &partition,
                config.noisy_fraction,
                config.flip_prob,
                &mut purpose_stream(config.seed, Purpose::Noise),
            )?,
        };
        let probes = partition
            .assignment
            .iter()
            .map(|s| s[..config.probe_batch_size].to_vec())
            .collect();
        Ok(FederatedState {
            spec,
            global,
            train,
            test,
            partition,
            probes,
            noisy_clients,
            round: 0,
        })
    }
}

/// Client weights for the configured method, with the Beta fit and scores
/// behind them.
pub fn round_weights(
    reports: &[ClientReport],
    config: &ExperimentConfig,
) -> Result<(WeightVector, FitRecord, Vec<f64>)> {
    Ok(match config.method {
        Method::FedAvg | Method::FedProx => (fedavg_weights(reports)?, FitRecord::Unused, Vec::new()),
        Method::GradAlign => (gradalign_weights(reports)?, FitRecord::Unused, Vec::new()),
        Method::FedOui if config.force_degenerate_fit => {
            let scores = vec![1.0; reports.len()];
            let w = oui_weights_from_scores(reports, &scores, config.eps)?;
            (w, FitRecord::Degenerate, scores)
        }
        Method::FedOui => {
            let o = fedoui_weights(reports, config.eps)?;
            (o.weights, o.fit.into(), o.scores)
        }
    })
}

/// One synchronous round. Advances `state.global` and `state.round`.
pub fn run_round(state: &mut FederatedState, config: &ExperimentConfig, pool: &ThreadPool) -> Result<RoundRecord> {
    let round = state.round + 1;
    let tag = u32::try_from(round).map_err(|_| Error::Input("too many rounds".into()))?;
    let selected = sample_clients(
        config.n_clients,
        config.clients_per_round,
        &mut stream(config.seed, Purpose::Sampling, tag, 0),
    )?;
    let st = &*state;
    let reports: Vec<ClientReport> = pool
        .install(|| {
            selected
                .par_iter()
                .map(|&id| {
                    let client = ClientData {
                        id,
                        train: &st.train,
                        shard: &st.partition.assignment[id],
                        probe: &st.probes[id],
                    };
                    let mut rng = stream(config.seed, Purpose::ClientTrain, tag, id as u32);
                    local_train(&st.spec, &st.global, client, config, &mut rng)
                })
                .collect::<Result<Vec<_>>>()
        })
        .map_err(|e| e.in_round(round))?;

    let (weights, fit, scores) = round_weights(&reports, config).map_err(|e| e.in_round(round))?;
    let global = aggregate(&state.global, &reports, &weights)?;
    if !global.is_finite() {
        return Err(Error::Numeric(format!("round {round}: global model is not finite")));
    }
    let test_accuracy = evaluate(&state.spec, &global, &state.test, pool)?;
    state.global = global;
    state.round = round;
    Ok(RoundRecord {
        round,
        selected,
        sample_counts: reports.iter().map(|r| r.n_samples).collect(),
        oui_values: reports.iter().map(|r| r.oui.value()).collect(),
        fit,
        scores,
        weights: weights.into_vec(),
        test_accuracy,
        mean_train_loss: reports.iter().map(|r| r.train_loss).sum::<f64>() / reports.len() as f64,
    })
}

pub fn thread_pool(threads: usize) -> Result<ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))
}

/// Train and test subsets for a configuration: CIFAR-10 from `data_dir`, or
/// synthetic blobs generated from the seed.
pub fn prepare_data(config: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    config.validate()?;
    let mut rng = purpose_stream(config.seed, Purpose::Subset);
    match config.dataset {
        DatasetKind::Cifar10 => {
            let (train, test) = load_cifar10(Path::new(&config.data_dir))?;
            Ok((
                subset(&train, config.train_subset, &mut rng)?,
                subset(&test, config.test_subset, &mut rng)?,
            ))
        }
        DatasetKind::Synthetic => {
            let total = config.train_subset + config.test_subset;
            let per_class = total.div_ceil(config.synthetic_classes);
            let pool = synthetic_blobs(
                config.synthetic_classes,
                per_class,
                config.synthetic_side,
                config.synthetic_channels,
                config.synthetic_spread,
                &mut purpose_stream(config.seed, Purpose::Synthetic),
            )?;
            let picked = index::sample(&mut rng, pool.len(), total).into_vec();
            let (tr, te) = picked.split_at(config.train_subset);
            Ok((pool.select(tr), pool.select(te)))
        }
    }
}

/// Runs every round of the configured experiment.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentLog> {
    let (train, test) = prepare_data(config)?;
    run_experiment_on(config, train, test)
}

pub fn run_experiment_on(config: &ExperimentConfig, train: Dataset, test: Dataset) -> Result<ExperimentLog> {
    let pool = thread_pool(config.threads)?;
    let mut state = FederatedState::new(config, train, test)?;
    let mut records = Vec::with_capacity(config.rounds);
    for _ in 0..config.rounds {
        records.push(run_round(&mut state, config, &pool)?);
    }
    let mut log = ExperimentLog {
        config: config.clone(),
        noisy_clients: state.noisy_clients,
        records,
        summary: None,
    };
    log.summary = log.recompute_summary();
    Ok(log)
}
