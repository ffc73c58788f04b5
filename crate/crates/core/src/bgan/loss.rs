//! Generator and critic objectives.

use crate::error::{ensure, Result};
use crate::loss::cross_entropy;

/// Generator objective value and its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GenLoss {
    pub value: f64,
    /// Mean cross-entropy of the corrected logits (before weighting by alpha).
    pub ce: f64,
    pub d_scores: Vec<f64>,
    /// Gradient w.r.t. each corrected logit vector, which equals the
    /// gradient w.r.t. the predicted bias since `ẑ = z + b_pre`.
    pub d_z_hat: Vec<Vec<f64>>,
}

/// `L_G = -mean(T_G) + alpha * mean_i CE(ẑ_i, label_i)`.
pub fn loss_g(scores_g: &[f64], z_hat: &[Vec<f64>], labels: &[usize], alpha: f64) -> Result<GenLoss> {
    let n = scores_g.len();
    ensure!(n > 0, "generator loss needs a non-empty batch");
    ensure!(
        z_hat.len() == n && labels.len() == n,
        "batch mismatch: {n} scores, {} logit vectors, {} labels",
        z_hat.len(),
        labels.len()
    );
    let nf = n as f64;
    let mut ce = 0.0;
    let mut d_z_hat = Vec::with_capacity(n);
    for (z, &t) in z_hat.iter().zip(labels) {
        let (l, g) = cross_entropy(z, t)?;
        ce += l / nf;
        d_z_hat.push(g.into_iter().map(|v| alpha * v / nf).collect());
    }
    let mean_t = scores_g.iter().sum::<f64>() / nf;
    Ok(GenLoss {
        value: -mean_t + alpha * ce,
        ce,
        d_scores: vec![-1.0 / nf; n],
        d_z_hat,
    })
}

/// Critic objective value and gradients w.r.t. both score lists.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticLoss {
    pub value: f64,
    pub d_scores_s: Vec<f64>,
    pub d_scores_g: Vec<f64>,
}

/// `L_D = -mean(T_S) + mean(T_G)`.
pub fn loss_d(scores_s: &[f64], scores_g: &[f64]) -> Result<CriticLoss> {
    ensure!(
        !scores_s.is_empty() && !scores_g.is_empty(),
        "critic loss needs non-empty score lists"
    );
    let ns = scores_s.len() as f64;
    let ng = scores_g.len() as f64;
    let value = -scores_s.iter().sum::<f64>() / ns + scores_g.iter().sum::<f64>() / ng;
    Ok(CriticLoss {
        value,
        d_scores_s: vec![-1.0 / ns; scores_s.len()],
        d_scores_g: vec![1.0 / ng; scores_g.len()],
    })
}

/// `mean_i |b_pre_i - b_tru_i|² / M`, used by the non-adversarial baselines.
pub fn regression_loss(b_pre: &[Vec<f64>], b_tru: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
    ensure!(!b_pre.is_empty() && b_pre.len() == b_tru.len(), "regression batch mismatch");
    let n = b_pre.len() as f64;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(b_pre.len());
    for (p, t) in b_pre.iter().zip(b_tru) {
        ensure!(p.len() == t.len(), "bias length mismatch");
        let m = p.len() as f64;
        value += p.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (m * n);
        grads.push(p.iter().zip(t).map(|(a, b)| 2.0 * (a - b) / (m * n)).collect());
    }
    Ok((value, grads))
}
