//! Global prior bias and per-sample correction biases.

use serde::{Deserialize, Serialize};

use crate::classic::ClassicModel;
use crate::data::Sample;
use crate::error::{ensure, Error, Result};
use crate::loss::argmax;
use crate::phi::PhiEncoder;

/// A constructed bias is accepted once the target leads every other class by
/// at least this fraction of the construction epsilon.
pub const MARGIN_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalBias {
    pub b_glo: Vec<f64>,
    pub a: f64,
    pub eps_glo: f64,
}

impl GlobalBias {
    /// All-zero prior, used when the global bias is switched off.
    pub fn zeros(m: usize) -> Self {
        Self {
            b_glo: vec![0.0; m],
            a: 0.0,
            eps_glo: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.b_glo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b_glo.is_empty()
    }
}

/// `b[j] = -ln( w[j]^a / Σ_k w[k]^a + eps_glo )`.
pub fn global_bias(w: &[f64], a: f64, eps_glo: f64) -> Result<GlobalBias> {
    ensure!(!w.is_empty(), "global bias needs class weights");
    ensure!(a >= 0.0 && a.is_finite(), "exponent a must be finite and >= 0, got {a}");
    ensure!(eps_glo >= 0.0, "eps_glo must be >= 0, got {eps_glo}");
    ensure!(
        w.iter().all(|&x| x >= 0.0 && x.is_finite()),
        "class weights must be finite and non-negative"
    );
    let powered: Vec<f64> = w.iter().map(|&x| x.powf(a)).collect();
    let total: f64 = powered.iter().sum();
    ensure!(total > 0.0, "class weights raised to a={a} sum to zero");
    let mut b_glo = Vec::with_capacity(w.len());
    for (j, p) in powered.iter().enumerate() {
        let arg = p / total + eps_glo;
        ensure!(arg > 0.0, "log argument for class {j} is {arg}; set eps_glo > 0");
        b_glo.push(-arg.ln());
    }
    Ok(GlobalBias { b_glo, a, eps_glo })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionBias {
    pub b_tru: Vec<f64>,
    pub r_tru: usize,
    /// `(z + b_tru)[r_tru] - max_{c != r_tru} (z + b_tru)[c]`.
    pub margin: f64,
    /// Classes whose entry was lowered, in the order they were fixed.
    pub adjusted: Vec<usize>,
}

/// Lowers offending entries of `b_init` until `r_tru` wins `z + b` by a margin.
///
/// Each pass takes the strongest competitor `p` of `r_tru` and sets
/// `b[p] += d - eps_c` with `d = ẑ[r_tru] - ẑ[p]`, pinning it `eps_c` below the
/// target. The target entry never moves, so a pinned class never offends
/// again and at most `M - 1` passes run.
pub fn correct_toward(z: &[f64], b_init: &[f64], r_tru: usize, eps_c: f64) -> Result<CorrectionBias> {
    let m = z.len();
    ensure!(b_init.len() == m, "bias length {} does not match logits length {m}", b_init.len());
    ensure!(r_tru < m, "label {r_tru} out of range for {m} classes");
    ensure!(eps_c > 0.0 && eps_c.is_finite(), "eps_c must be positive, got {eps_c}");
    ensure!(
        z.iter().chain(b_init).all(|v| v.is_finite()),
        "logits and initial bias must be finite"
    );

    let mut b = b_init.to_vec();
    let mut adjusted = vec![];
    for _ in 0..m {
        let z_hat: Vec<f64> = z.iter().zip(&b).map(|(a, c)| a + c).collect();
        let (rival, margin) = strongest_rival(&z_hat, r_tru);
        if argmax(&z_hat) == r_tru && margin >= MARGIN_FRACTION * eps_c {
            return Ok(CorrectionBias {
                b_tru: b,
                r_tru,
                margin,
                adjusted,
            });
        }
        let d = z_hat[r_tru] - z_hat[rival];
        b[rival] += d - eps_c;
        adjusted.push(rival);
    }
    Err(Error::Internal(format!(
        "correction for label {r_tru} did not settle within {m} passes"
    )))
}

/// Highest-scoring class other than `target` and the target's lead over it.
fn strongest_rival(z_hat: &[f64], target: usize) -> (usize, f64) {
    let mut rival = usize::MAX;
    for (c, &v) in z_hat.iter().enumerate() {
        if c != target && (rival == usize::MAX || v > z_hat[rival]) {
            rival = c;
        }
    }
    (rival, z_hat[target] - z_hat[rival])
}

/// Correction bias initialised at `phi(ctx) + b_glo`.
pub fn construct_bias(
    z: &[f64],
    ctx: &[f64],
    phi: &PhiEncoder,
    gb: &GlobalBias,
    r_tru: usize,
    eps_c: f64,
) -> Result<CorrectionBias> {
    let mut init = phi.forward(ctx)?;
    ensure!(
        init.len() == gb.len(),
        "phi output length {} does not match global bias length {}",
        init.len(),
        gb.len()
    );
    init.iter_mut().zip(&gb.b_glo).for_each(|(v, g)| *v += g);
    correct_toward(z, &init, r_tru, eps_c)
}

/// One correction bias per sample, in batch order, against a frozen model.
pub fn build_batch_set(
    batch: &[&Sample],
    model: &ClassicModel,
    phi: &PhiEncoder,
    gb: &GlobalBias,
    eps_c: f64,
) -> Result<Vec<CorrectionBias>> {
    if !model.is_frozen() {
        return Err(Error::FreezeViolation(
            "correction biases must be built against a frozen classic model".into(),
        ));
    }
    build_batch_set_unchecked(batch, model, phi, gb, eps_c)
}

/// [`build_batch_set`] without the freeze requirement (joint training).
pub(crate) fn build_batch_set_unchecked(
    batch: &[&Sample],
    model: &ClassicModel,
    phi: &PhiEncoder,
    gb: &GlobalBias,
    eps_c: f64,
) -> Result<Vec<CorrectionBias>> {
    batch
        .iter()
        .map(|s| {
            let z = model.logits(&s.ctx)?;
            construct_bias(&z, &s.ctx, phi, gb, s.label, eps_c)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phi::PhiVariant;
    use crate::rng::Rng;
    use proptest::prelude::*;

    #[test]
    fn global_bias_examples() {
        let g = global_bias(&[0.5, 0.5], 1.0, 0.0).unwrap();
        assert!(g.b_glo.iter().all(|v| (v - 2f64.ln()).abs() < 1e-15));
        let g = global_bias(&[0.25; 4], 2.0, 0.0).unwrap();
        assert!(g.b_glo.iter().all(|v| (v - 4f64.ln()).abs() < 1e-15));
        // -ln 0.9 = 0.105360515..., -ln 0.1 = 2.302585093...
        let g = global_bias(&[0.9, 0.1], 1.0, 0.0).unwrap();
        assert!((g.b_glo[0] - 0.1054).abs() < 1e-4 && (g.b_glo[1] - std::f64::consts::LN_10).abs() < 1e-12);
        assert!((g.b_glo[0] + 0.9f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn global_bias_rejects_log_of_zero() {
        assert!(global_bias(&[1.0, 0.0], 1.0, 0.0).is_err());
        let g = global_bias(&[1.0, 0.0], 1.0, 1e-3).unwrap();
        assert!((g.b_glo[1] + 1e-3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_class_correction() {
        let c = correct_toward(&[2.0, 1.0], &[0.0, 0.0], 1, 1e-4).unwrap();
        assert!((c.b_tru[0] + 1.0001).abs() < 1e-12);
        assert_eq!(c.b_tru[1], 0.0);
        assert!((c.margin - 1e-4).abs() < 1e-12);
        assert_eq!(c.adjusted, vec![0]);
    }

    #[test]
    fn satisfied_bias_is_kept() {
        let b0 = [0.3, -0.2, 0.1];
        let c = correct_toward(&[0.0, 5.0, 1.0], &b0, 1, 1e-4).unwrap();
        assert_eq!(c.b_tru, b0.to_vec());
        assert!(c.adjusted.is_empty());
    }

    #[test]
    fn three_class_hand_trace() {
        let c = correct_toward(&[5.0, 4.0, 3.0], &[0.0; 3], 2, 1e-4).unwrap();
        assert_eq!(c.adjusted, vec![0, 1]);
        let z_hat: Vec<f64> = [5.0, 4.0, 3.0].iter().zip(&c.b_tru).map(|(a, b)| a + b).collect();
        for (got, want) in z_hat.iter().zip([2.9999, 2.9999, 3.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(argmax(&z_hat), 2);
        assert!((c.margin - 1e-4).abs() < 1e-12);
    }

    #[test]
    fn tie_with_lower_index_is_broken() {
        let c = correct_toward(&[1.0, 1.0], &[0.0, 0.0], 1, 1e-4).unwrap();
        assert_eq!(c.adjusted, vec![0]);
        assert!((c.margin - 1e-4).abs() < 1e-12);
    }

    #[test]
    fn construct_uses_phi_plus_prior() {
        let mut phi = PhiEncoder::new(PhiVariant::Trans1, 16, 3, &mut Rng::new(1)).unwrap();
        let out = phi.output_layer_mut();
        out.w.value.fill(0.0);
        out.b.value.fill(0.0);
        let gb = GlobalBias {
            b_glo: vec![0.0, 1.0, 2.0],
            a: 1.0,
            eps_glo: 0.0,
        };
        let c = construct_bias(&[0.0, 0.0, 0.0], &[0.1; 16], &phi, &gb, 2, 1e-4).unwrap();
        assert_eq!(c.b_tru, vec![0.0, 1.0, 2.0]);
    }

    proptest! {
        #[test]
        fn construction_invariants(
            z in prop::collection::vec(-10.0f64..10.0, 2..12),
            b in prop::collection::vec(-5.0f64..5.0, 12),
            pick in 0usize..100,
            eps in prop::sample::select(vec![1e-3, 1e-4, 1e-5]),
        ) {
            let m = z.len();
            let b0 = &b[..m];
            let r = pick % m;
            let c = correct_toward(&z, b0, r, eps).unwrap();
            let z_hat: Vec<f64> = z.iter().zip(&c.b_tru).map(|(a, b)| a + b).collect();
            prop_assert_eq!(argmax(&z_hat), r);
            prop_assert!(c.margin >= MARGIN_FRACTION * eps);
            // untouched entries keep their initial value bit for bit
            for j in 0..m {
                if !c.adjusted.contains(&j) {
                    prop_assert_eq!(c.b_tru[j].to_bits(), b0[j].to_bits());
                }
            }
            // only classes initially within reach of the target get lowered
            let init: Vec<f64> = z.iter().zip(b0).map(|(a, b)| a + b).collect();
            let reach = (0..m)
                .filter(|&j| j != r && init[j] > init[r] - MARGIN_FRACTION * eps)
                .count();
            prop_assert!(c.adjusted.len() <= reach);
            prop_assert!(c.adjusted.len() < m);
        }

        #[test]
        fn global_bias_permutation_and_monotonicity(
            raw in prop::collection::vec(0.01f64..1.0, 2..10),
            a in 0.5f64..2.0,
            seed in 0u64..1000,
        ) {
            let total: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let g = global_bias(&w, a, 0.0).unwrap();
            let mut perm: Vec<usize> = (0..w.len()).collect();
            Rng::new(seed).shuffle(&mut perm);
            let wp: Vec<f64> = perm.iter().map(|&i| w[i]).collect();
            let gp = global_bias(&wp, a, 0.0).unwrap();
            for (k, &i) in perm.iter().enumerate() {
                prop_assert!((gp.b_glo[k] - g.b_glo[i]).abs() < 1e-12);
            }
            for i in 0..w.len() {
                for j in 0..w.len() {
                    if w[i] < w[j] {
                        prop_assert!(g.b_glo[i] > g.b_glo[j]);
                    }
                }
            }
        }
    }
}
