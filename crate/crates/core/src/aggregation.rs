//! Server-side client weighting and the weighted global update.

use serde::{Deserialize, Serialize};

use crate::beta::{bilateral_score, fit_beta_moments, BetaFit};
use crate::error::{Error, Result};
use crate::oui::OuiValue;
use crate::params::ModelParams;

/// Default `ε` in `w_k ∝ n_k (ε + s_k)`.
pub const DEFAULT_EPS: f64 = 1e-3;
/// Floor added to every client's weight by the gradient-alignment rule.
pub const ALIGN_EPS: f64 = 1e-3;

/// What one client sends back after local training.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientReport {
    pub client_id: usize,
    /// Local parameters after training minus the global parameters.
    pub delta: ModelParams,
    pub n_samples: usize,
    pub oui: OuiValue,
    /// Mean cross-entropy over the local epoch(s).
    pub train_loss: f64,
}

/// Nonnegative weights aligned with a round's reports, summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    /// Normalizes raw nonnegative scores.
    fn normalized(raw: Vec<f64>) -> Result<Self> {
        let total: f64 = raw.iter().sum();
        if !(total.is_finite() && total > 0.0) || raw.iter().any(|w| *w < 0.0) {
            return Err(Error::Numeric(format!("cannot normalize weights {raw:?}")));
        }
        Ok(WeightVector(raw.into_iter().map(|w| w / total).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

fn check_nonempty(reports: &[ClientReport]) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::Input("no client reports to weight".into()));
    }
    if let Some(r) = reports.iter().find(|r| r.n_samples == 0) {
        return Err(Error::Input(format!("client {} reported zero samples", r.client_id)));
    }
    Ok(())
}

/// `w_k ∝ n_k`
pub fn fedavg_weights(reports: &[ClientReport]) -> Result<WeightVector> {
    check_nonempty(reports)?;
    WeightVector::normalized(reports.iter().map(|r| r.n_samples as f64).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuiWeighting {
    pub weights: WeightVector,
    pub fit: BetaFit,
    pub scores: Vec<f64>,
}

/// OUI-guided weights `w_k ∝ n_k (ε + s_k)` where `s_k` is the client's
/// bilateral score under the Beta law fitted to this round's OUI values.
pub fn fedoui_weights(reports: &[ClientReport], eps: f64) -> Result<OuiWeighting> {
    check_nonempty(reports)?;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Input(format!("eps must be positive, got {eps}")));
    }
    let ouis: Vec<f64> = reports.iter().map(|r| r.oui.value()).collect();
    let fit = fit_beta_moments(&ouis)?;
    let scores = match fit {
        BetaFit::Degenerate => vec![1.0; reports.len()],
        BetaFit::Fitted(p) => reports
            .iter()
            .map(|r| bilateral_score(r.oui, &p))
            .collect::<Result<_>>()?,
    };
    let weights = oui_weights_from_scores(reports, &scores, eps)?;
    Ok(OuiWeighting {
        weights,
        fit,
        scores,
    })
}

/// Normalized `n_k (ε + s_k)`. Equal scores cancel, so that case returns the
/// sample-size weights exactly.
pub fn oui_weights_from_scores(
    reports: &[ClientReport],
    scores: &[f64],
    eps: f64,
) -> Result<WeightVector> {
    check_nonempty(reports)?;
    if scores.len() != reports.len() {
        return Err(Error::Input(format!(
            "{} scores for {} reports",
            scores.len(),
            reports.len()
        )));
    }
    if scores.iter().all(|&s| s == scores[0]) {
        return fedavg_weights(reports);
    }
    WeightVector::normalized(
        reports
            .iter()
            .zip(scores)
            .map(|(r, s)| r.n_samples as f64 * (eps + s))
            .collect(),
    )
}

/// Cosine-to-mean weighting: `w_k ∝ n_k·max(0, cos(Δ_k, mean Δ)) + ε_align`.
///
/// This is the `grad-align` baseline; it rewards updates that point the same
/// way as the round's average update.
pub fn gradalign_weights(reports: &[ClientReport]) -> Result<WeightVector> {
    check_nonempty(reports)?;
    let mut mean = reports[0].delta.zeros_like();
    for r in reports {
        mean.axpy(1.0 / reports.len() as f64, &r.delta)?;
    }
    let mean_norm = mean.norm();
    let raw = reports
        .iter()
        .map(|r| {
            let norm = r.delta.norm();
            let cos = if norm == 0.0 || mean_norm == 0.0 {
                0.0
            } else {
                r.delta.dot(&mean)? / (norm * mean_norm)
            };
            Ok(r.n_samples as f64 * cos.max(0.0) + ALIGN_EPS)
        })
        .collect::<Result<Vec<_>>>()?;
    WeightVector::normalized(raw)
}

/// `global + Σ_k w_k Δ_k`
pub fn aggregate(
    global: &ModelParams,
    reports: &[ClientReport],
    weights: &WeightVector,
) -> Result<ModelParams> {
    if weights.len() != reports.len() {
        return Err(Error::Input(format!(
            "{} weights for {} reports",
            weights.len(),
            reports.len()
        )));
    }
    let mut update = global.zeros_like();
    for (r, &w) in reports.iter().zip(weights.as_slice()) {
        update.axpy(w, &r.delta)?;
    }
    global.add(&update)
}
