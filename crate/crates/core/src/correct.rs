//! Logit correctors applied on top of a frozen classifier.

use serde::{Deserialize, Serialize};

use crate::bgan::Generator;
use crate::error::{ensure, Result};
use crate::loss::softmax;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectorKind {
    Identity,
    /// Divide predicted probabilities by class frequencies.
    PosteriorDivide,
    /// Subtract a fixed resistance bias from the logits.
    ResistanceSubtract,
    /// Add the generator's per-sample bias.
    Sbp,
}

impl CorrectorKind {
    pub const ALL: [CorrectorKind; 4] = [
        CorrectorKind::Identity,
        CorrectorKind::PosteriorDivide,
        CorrectorKind::ResistanceSubtract,
        CorrectorKind::Sbp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorrectorKind::Identity => "identity",
            CorrectorKind::PosteriorDivide => "posterior_divide",
            CorrectorKind::ResistanceSubtract => "resistance_subtract",
            CorrectorKind::Sbp => "sbp",
        }
    }
}

#[derive(Debug, Clone)]
pub enum Corrector {
    Identity,
    PosteriorDivide { freq: Vec<f64> },
    ResistanceSubtract { b_res: Vec<f64> },
    Sbp { generator: Generator, b_glo: Vec<f64> },
}

/// `b_res[j] = ln( w[j]^a / Σ_k w[k]^a + eps )`; subtracting it raises rare classes.
pub fn resistance_bias(freq: &[f64], a: f64, eps: f64) -> Result<Vec<f64>> {
    Ok(crate::bias::global_bias(freq, a, eps)?
        .b_glo
        .into_iter()
        .map(|v| -v)
        .collect())
}

impl Corrector {
    pub fn kind(&self) -> CorrectorKind {
        match self {
            Corrector::Identity => CorrectorKind::Identity,
            Corrector::PosteriorDivide { .. } => CorrectorKind::PosteriorDivide,
            Corrector::ResistanceSubtract { .. } => CorrectorKind::ResistanceSubtract,
            Corrector::Sbp { .. } => CorrectorKind::Sbp,
        }
    }

    pub fn posterior_divide(freq: Vec<f64>) -> Result<Self> {
        ensure!(
            freq.iter().all(|&c| c > 0.0 && c.is_finite()),
            "posterior division needs strictly positive class frequencies"
        );
        Ok(Corrector::PosteriorDivide { freq })
    }

    /// Corrected logits for one sample.
    pub fn correct(&self, z: &[f64], ctx: &[f64]) -> Result<Vec<f64>> {
        match self {
            Corrector::Identity => Ok(z.to_vec()),
            Corrector::PosteriorDivide { freq } => {
                ensure!(freq.len() == z.len(), "frequency length {} vs {} logits", freq.len(), z.len());
                ensure!(freq.iter().all(|&c| c > 0.0), "zero class frequency");
                let q: Vec<f64> = softmax(z).iter().zip(freq).map(|(p, c)| p / c).collect();
                let total: f64 = q.iter().sum();
                Ok(q.into_iter().map(|v| (v / total).ln()).collect())
            }
            Corrector::ResistanceSubtract { b_res } => {
                ensure!(b_res.len() == z.len(), "resistance length {} vs {} logits", b_res.len(), z.len());
                Ok(z.iter().zip(b_res).map(|(a, b)| a - b).collect())
            }
            Corrector::Sbp { generator, b_glo } => {
                let b = generator.forward(ctx, b_glo, z)?;
                Ok(z.iter().zip(b).map(|(a, b)| a + b).collect())
            }
        }
    }
}
