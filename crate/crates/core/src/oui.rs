//! Overfitting–Underfitting Indicator over a probe batch.
//!
//! For a `B × d` pre-activation matrix, each unit's activity count `s_j` is
//! the number of samples with a strictly positive pre-activation. The unit
//! contributes its minority count `min(s_j, B − s_j)` normalized by `⌊B/2⌋`,
//! and the indicator is the mean contribution over units.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// OUI in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OuiValue(f64);

impl OuiValue {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(OuiValue(value))
        } else {
            Err(Error::Input(format!("OUI {value} outside [0, 1]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

fn dims(preacts: &Tensor) -> Result<(usize, usize)> {
    if preacts.shape().len() != 2 {
        return Err(Error::Input(format!(
            "pre-activations must be a B x d matrix, got shape {:?}",
            preacts.shape()
        )));
    }
    Ok((preacts.shape()[0], preacts.shape()[1]))
}

/// Binary mask `m[b][j] = 1` iff the pre-activation is strictly positive.
pub fn activation_mask(preacts: &Tensor) -> Result<Vec<Vec<u8>>> {
    let (b, _) = dims(preacts)?;
    Ok((0..b)
        .map(|s| preacts.row(s).iter().map(|&v| u8::from(v > 0.0)).collect())
        .collect())
}

/// Per-unit count of active samples.
pub fn active_counts(preacts: &Tensor) -> Result<Vec<usize>> {
    let (b, d) = dims(preacts)?;
    let mut counts = vec![0usize; d];
    for s in 0..b {
        for (c, &v) in counts.iter_mut().zip(preacts.row(s)) {
            *c += usize::from(v > 0.0);
        }
    }
    Ok(counts)
}

pub fn oui(preacts: &Tensor) -> Result<OuiValue> {
    let (b, d) = dims(preacts)?;
    if b < 2 {
        return Err(Error::Input(format!("probe batch needs B >= 2, got {b}")));
    }
    if d < 1 {
        return Err(Error::Input("pre-activations have no units".into()));
    }
    let minority: usize = active_counts(preacts)?
        .into_iter()
        .map(|s| s.min(b - s))
        .sum();
    // One division keeps the result exactly on the 1/(d·⌊B/2⌋) lattice.
    OuiValue::new(minority as f64 / (d * (b / 2)) as f64)
}
