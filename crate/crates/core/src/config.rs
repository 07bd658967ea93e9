//! Experiment configuration. Defaults reproduce the CIFAR-10 protocol:
//! 20 clients, 5 per round, 60 rounds, one local epoch of SGD (lr 0.01,
//! momentum 0.9, batch 32), probe batch 32, 3000/1000 train/test subsets.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{CIFAR_CHANNELS, CIFAR_CLASSES, CIFAR_SIDE};
use crate::error::{Error, Result};
use crate::nn::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "fedavg")]
    FedAvg,
    #[serde(rename = "fedprox")]
    FedProx,
    /// Cosine-to-mean weighting, standing in for a gradient-alignment baseline.
    #[serde(rename = "grad-align")]
    GradAlign,
    #[serde(rename = "fedoui")]
    FedOui,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::FedAvg, Method::FedProx, Method::GradAlign, Method::FedOui];

    pub fn name(self) -> &'static str {
        match self {
            Method::FedAvg => "fedavg",
            Method::FedProx => "fedprox",
            Method::GradAlign => "grad-align",
            Method::FedOui => "fedoui",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "method: unknown value `{s}` (expected fedavg, fedprox, grad-align or fedoui)"
                ))
            })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionKind {
    Dirichlet,
    Iid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    None,
    /// Symmetric label flipping on a subset of clients.
    Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Cifar10,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    /// conv 32 → conv 64 → linear 128 → classes
    #[serde(rename = "cifar-cnn")]
    CifarCnn,
    /// conv 8 → conv 16 → linear 32 → classes
    #[serde(rename = "small-cnn")]
    SmallCnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub method: Method,
    pub seed: u64,
    pub n_clients: usize,
    pub clients_per_round: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub probe_batch_size: usize,
    pub eps: f64,
    pub fedprox_mu: f64,
    pub partition: PartitionKind,
    pub concentration: f64,
    pub noise: NoiseKind,
    pub noisy_fraction: f64,
    pub flip_prob: f64,
    pub train_subset: usize,
    pub test_subset: usize,
    pub dataset: DatasetKind,
    pub data_dir: String,
    pub model: ModelKind,
    pub synthetic_classes: usize,
    pub synthetic_side: usize,
    pub synthetic_channels: usize,
    pub synthetic_spread: f64,
    /// Worker threads for client training; 0 uses every core. Results do
    /// not depend on this value.
    pub threads: usize,
    /// Diagnostic switch: skip the Beta fit and score every client 1.
    pub force_degenerate_fit: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            method: Method::FedOui,
            seed: 0,
            n_clients: 20,
            clients_per_round: 5,
            rounds: 60,
            local_epochs: 1,
            lr: 0.01,
            momentum: 0.9,
            batch_size: 32,
            probe_batch_size: 32,
            eps: 1e-3,
            fedprox_mu: 0.01,
            partition: PartitionKind::Dirichlet,
            concentration: 0.1,
            noise: NoiseKind::None,
            noisy_fraction: 0.3,
            flip_prob: 0.5,
            train_subset: 3000,
            test_subset: 1000,
            dataset: DatasetKind::Cifar10,
            data_dir: "data".into(),
            model: ModelKind::CifarCnn,
            synthetic_classes: 10,
            synthetic_side: 16,
            synthetic_channels: 3,
            synthetic_spread: 1.0,
            threads: 0,
            force_degenerate_fit: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Config(format!("{field}: {why}")));
        for (field, v) in [
            ("n_clients", self.n_clients),
            ("clients_per_round", self.clients_per_round),
            ("local_epochs", self.local_epochs),
            ("batch_size", self.batch_size),
            ("train_subset", self.train_subset),
            ("test_subset", self.test_subset),
        ] {
            if v == 0 {
                return bad(field, "must be positive".into());
            }
        }
        if self.clients_per_round > self.n_clients {
            return bad(
                "clients_per_round",
                format!("{} exceeds n_clients = {}", self.clients_per_round, self.n_clients),
            );
        }
        if self.probe_batch_size < 2 {
            return bad("probe_batch_size", "must be at least 2".into());
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return bad("concentration", format!("must be positive, got {}", self.concentration));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr", format!("must be nonnegative, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", format!("must be in [0, 1), got {}", self.momentum));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return bad("eps", format!("must be positive, got {}", self.eps));
        }
        if !(self.fedprox_mu >= 0.0 && self.fedprox_mu.is_finite()) {
            return bad("fedprox_mu", format!("must be nonnegative, got {}", self.fedprox_mu));
        }
        for (field, v) in [("noisy_fraction", self.noisy_fraction), ("flip_prob", self.flip_prob)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(field, format!("must be in [0, 1], got {v}"));
            }
        }
        if self.dataset == DatasetKind::Synthetic {
            if self.synthetic_classes < 2 || self.synthetic_channels == 0 {
                return bad("synthetic_classes", "need at least 2 classes and 1 channel".into());
            }
            if self.synthetic_side == 0 || !self.synthetic_side.is_multiple_of(4) {
                return bad("synthetic_side", "must be a positive multiple of 4".into());
            }
            if self.synthetic_spread.is_nan() || self.synthetic_spread < 0.0 {
                return bad("synthetic_spread", "must be nonnegative".into());
            }
        }
        Ok(())
    }

    /// `(channels, side, classes)` of the configured dataset.
    pub fn input_geometry(&self) -> (usize, usize, usize) {
        match self.dataset {
            DatasetKind::Cifar10 => (CIFAR_CHANNELS, CIFAR_SIDE, CIFAR_CLASSES),
            DatasetKind::Synthetic => (
                self.synthetic_channels,
                self.synthetic_side,
                self.synthetic_classes,
            ),
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        let (channels, side, classes) = self.input_geometry();
        match self.model {
            ModelKind::CifarCnn => ModelSpec::two_block_cnn(channels, side, [32, 64], 128, classes),
            ModelKind::SmallCnn => ModelSpec::two_block_cnn(channels, side, [8, 16], 32, classes),
        }
    }
}
