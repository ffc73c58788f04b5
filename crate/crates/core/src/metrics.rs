//! Ranking metrics over grouped predictions.
//!
//! Each test group plays the role of one image: its samples are ranked by
//! confidence (largest softmax probability of the corrected logits, lower
//! index first on ties) and a ground truth counts as recalled at `K` when its
//! sample ranks in the top `K` and its argmax class equals the label.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::bgan::Generator;
use crate::classic::ClassicModel;
use crate::correct::{Corrector, CorrectorKind};
use crate::data::Dataset;
use crate::error::{ensure, Result};
use crate::loss::{argmax, softmax, top_indices};

/// A corrected prediction reduced to what the metrics need.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub logits: Vec<f64>,
    pub label: usize,
    pub pred: usize,
    pub confidence: f64,
}

impl Scored {
    pub fn new(logits: Vec<f64>, label: usize) -> Self {
        let p = softmax(&logits);
        let pred = argmax(&logits);
        Self {
            confidence: p[pred],
            pred,
            label,
            logits,
        }
    }

    pub fn correct(&self) -> bool {
        self.pred == self.label
    }
}

/// Rank of every sample in its group (0 = most confident).
pub fn group_ranks(group: &[Scored]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..group.len()).collect();
    order.sort_by(|&a, &b| group[b].confidence.total_cmp(&group[a].confidence).then(a.cmp(&b)));
    let mut ranks = vec![0; group.len()];
    for (r, i) in order.into_iter().enumerate() {
        ranks[i] = r;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecallAtK {
    pub r_at_k: f64,
    /// Pooled over groups; `None` for classes with no test samples.
    pub per_class: Vec<Option<f64>>,
}

pub fn recall_at_k(groups: &[Vec<Scored>], k: usize, m: usize) -> RecallAtK {
    assert!(k >= 1, "K must be at least 1");
    let mut hits = vec![0usize; m];
    let mut totals = vec![0usize; m];
    let mut group_sum = 0.0;
    let mut n_groups = 0usize;
    for g in groups.iter().filter(|g| !g.is_empty()) {
        let ranks = group_ranks(g);
        let mut recalled = 0usize;
        for (s, &r) in g.iter().zip(&ranks) {
            totals[s.label] += 1;
            if r < k && s.correct() {
                recalled += 1;
                hits[s.label] += 1;
            }
        }
        group_sum += recalled as f64 / g.len() as f64;
        n_groups += 1;
    }
    RecallAtK {
        r_at_k: if n_groups == 0 { 0.0 } else { group_sum / n_groups as f64 },
        per_class: hits
            .iter()
            .zip(&totals)
            .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
            .collect(),
    }
}

/// Unweighted mean over the classes that are present.
pub fn mean_recall_at_k(per_class: &[Option<f64>]) -> f64 {
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let missing = per_class.len() - present.len();
    if missing > 0 {
        warn!("{missing} classes have no test samples and are left out of mR@K");
    }
    if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}

pub fn average_at_k(r: f64, mr: f64) -> f64 {
    (r + mr) / 2.0
}

/// Macro top-`t` accuracy: per present class, the share of samples whose
/// label is among the `t` largest logits, averaged over classes.
pub fn f_acc(samples: &[Scored], top_t: usize, m: usize) -> f64 {
    assert!(top_t >= 1, "top_t must be at least 1");
    let mut hits = vec![0usize; m];
    let mut totals = vec![0usize; m];
    for s in samples {
        totals[s.label] += 1;
        if top_indices(&s.logits, top_t).contains(&s.label) {
            hits[s.label] += 1;
        }
    }
    let per: Vec<Option<f64>> = hits
        .iter()
        .zip(&totals)
        .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
        .collect();
    let present: Vec<f64> = per.into_iter().flatten().collect();
    if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub corrector: String,
    pub k_values: Vec<usize>,
    pub r_at_k: Vec<f64>,
    pub mr_at_k: Vec<f64>,
    pub a_at_k: Vec<f64>,
    /// `per_class_recall[i][c]` is class `c`'s recall at `k_values[i]`.
    pub per_class_recall: Vec<Vec<Option<f64>>>,
    pub top_t_values: Vec<usize>,
    pub f_acc: Vec<f64>,
}

impl MetricsReport {
    pub fn at(&self, k: usize) -> Option<(f64, f64, f64)> {
        let i = self.k_values.iter().position(|&v| v == k)?;
        Some((self.r_at_k[i], self.mr_at_k[i], self.a_at_k[i]))
    }
}

/// All metrics for already-corrected, grouped predictions.
pub fn compute_report(
    corrector: &str,
    groups: &[Vec<Scored>],
    m: usize,
    k_values: &[usize],
    top_t_values: &[usize],
) -> MetricsReport {
    let mut report = MetricsReport {
        corrector: corrector.to_string(),
        k_values: k_values.to_vec(),
        r_at_k: vec![],
        mr_at_k: vec![],
        a_at_k: vec![],
        per_class_recall: vec![],
        top_t_values: top_t_values.to_vec(),
        f_acc: vec![],
    };
    for &k in k_values {
        let rk = recall_at_k(groups, k, m);
        let mr = mean_recall_at_k(&rk.per_class);
        report.a_at_k.push(average_at_k(rk.r_at_k, mr));
        report.r_at_k.push(rk.r_at_k);
        report.mr_at_k.push(mr);
        report.per_class_recall.push(rk.per_class);
    }
    let flat: Vec<Scored> = groups.iter().flatten().cloned().collect();
    report.f_acc = top_t_values.iter().map(|&t| f_acc(&flat, t, m)).collect();
    report
}

/// Applies `corrector` to every test sample of `ds` and scores the result.
/// The classic model must be frozen and intact.
pub fn evaluate(
    corrector: &Corrector,
    model: &ClassicModel,
    ds: &Dataset,
    k_values: &[usize],
    top_t_values: &[usize],
) -> Result<MetricsReport> {
    model.verify_frozen()?;
    ensure!(k_values.iter().all(|&k| k >= 1), "every K must be at least 1");
    ensure!(top_t_values.iter().all(|&t| t >= 1), "every top-t must be at least 1");
    ensure!(
        model.m_classes() == ds.m_classes() && model.in_dim() == ds.feature_dim(),
        "model ({} classes, {}-dim input) does not match dataset ({} classes, {}-dim)",
        model.m_classes(),
        model.in_dim(),
        ds.m_classes(),
        ds.feature_dim()
    );
    let mut groups = Vec::with_capacity(ds.test.len() / ds.spec.group_size.max(1));
    for g in ds.test_groups() {
        let scored = g
            .iter()
            .map(|s| {
                let z = model.logits(&s.ctx)?;
                Ok(Scored::new(corrector.correct(&z, &s.ctx)?, s.label))
            })
            .collect::<Result<Vec<_>>>()?;
        groups.push(scored);
    }
    let report = compute_report(corrector.kind().name(), &groups, ds.m_classes(), k_values, top_t_values);
    model.verify_frozen()?;
    Ok(report)
}

/// Convenience for the generator-backed corrector.
pub fn sbp_corrector(generator: &Generator, b_glo: &[f64]) -> Corrector {
    Corrector::Sbp {
        generator: generator.clone(),
        b_glo: b_glo.to_vec(),
    }
}

impl CorrectorKind {
    pub fn from_name(name: &str) -> Option<Self> {
        CorrectorKind::ALL.into_iter().find(|k| k.name() == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scored(conf_logit: f64, pred: usize, label: usize) -> Scored {
        let mut z = vec![0.0; 3];
        z[pred] = conf_logit;
        Scored::new(z, label)
    }

    #[test]
    fn top_two_of_three_hand_case() {
        // confidences fall with the logit; correctness ✓ ✗ ✓
        let g = vec![scored(5.0, 0, 0), scored(4.0, 1, 2), scored(0.5, 2, 2)];
        assert!(g[0].confidence > g[1].confidence && g[1].confidence > g[2].confidence);
        let r = recall_at_k(&[g], 2, 3);
        assert!((r.r_at_k - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn full_k_all_correct_is_one_and_equals_accuracy() {
        let g = vec![scored(3.0, 0, 0), scored(2.0, 1, 1), scored(1.0, 2, 2)];
        assert_eq!(recall_at_k(&[g.clone()], 3, 3).r_at_k, 1.0);
        assert_eq!(recall_at_k(&[g], 5, 3).r_at_k, 1.0);
        let g = vec![scored(3.0, 0, 1), scored(2.0, 1, 1), scored(1.0, 2, 2)];
        assert!((recall_at_k(&[g], 3, 3).r_at_k - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn confidence_ties_rank_by_index() {
        let g = vec![scored(2.0, 0, 1), scored(2.0, 1, 1)];
        assert_eq!(group_ranks(&g), vec![0, 1]);
        assert_eq!(recall_at_k(&[g], 1, 3).r_at_k, 0.0);
    }

    #[test]
    fn mean_recall_examples() {
        assert_eq!(mean_recall_at_k(&[Some(1.0), Some(0.0)]), 0.5);
        assert_eq!(mean_recall_at_k(&[Some(0.3); 4]), 0.3);
        assert_eq!(mean_recall_at_k(&[Some(1.0), Some(0.5), Some(0.0)]), 0.5);
        assert_eq!(mean_recall_at_k(&[Some(1.0), None]), 1.0);
    }

    #[test]
    fn average_examples() {
        assert_eq!(average_at_k(0.6, 0.4), 0.5);
        assert_eq!(average_at_k(0.37, 0.37), 0.37);
        assert_eq!(average_at_k(1.0, 0.0), 0.5);
    }

    #[test]
    fn f_acc_examples() {
        let s = vec![scored(1.0, 0, 2), scored(1.0, 1, 0)];
        assert_eq!(f_acc(&s, 3, 3), 1.0);
        let s = vec![scored(1.0, 0, 0), scored(1.0, 2, 2)];
        assert_eq!(f_acc(&s, 1, 3), 1.0);
        let s = vec![scored(1.0, 0, 0), scored(1.0, 0, 0), scored(1.0, 0, 1)];
        assert_eq!(f_acc(&s, 1, 3), 0.5);
    }
}
