//! Frozen random feature mapping from context vectors to length-M vectors.
//!
//! The transformer variants split the context into [`PHI_TOKENS`] equal
//! chunks, embed each chunk, run one or two single-head self-attention
//! blocks (attention and a feed-forward layer, both residual), mean-pool the
//! tokens and project to M outputs.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::layers::{leaky_relu, Dense, LEAKY_SLOPE};
use crate::loss::softmax;
use crate::rng::Rng;
use crate::tensor::{Module, Param, Tensor};

pub const PHI_TOKENS: usize = 8;
pub const PHI_MODEL_DIM: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiVariant {
    Fc,
    Trans1,
    Trans2,
}

#[derive(Debug, Clone, PartialEq)]
struct AttentionBlock {
    q: Dense,
    k: Dense,
    v: Dense,
    o: Dense,
    ff1: Dense,
    ff2: Dense,
}

impl AttentionBlock {
    fn new(name: &str, d: usize, rng: &mut Rng) -> Self {
        Self {
            q: Dense::new(&format!("{name}.q"), d, d, 1.0, rng),
            k: Dense::new(&format!("{name}.k"), d, d, 1.0, rng),
            v: Dense::new(&format!("{name}.v"), d, d, 1.0, rng),
            o: Dense::new(&format!("{name}.o"), d, d, 1.0, rng),
            ff1: Dense::new(&format!("{name}.ff1"), d, 2 * d, 2f64.sqrt(), rng),
            ff2: Dense::new(&format!("{name}.ff2"), 2 * d, d, 1.0, rng),
        }
    }

    /// `tokens: [T, d]` → `[T, d]`.
    fn forward(&self, tokens: &Tensor) -> Result<Tensor> {
        let (t, d) = (tokens.shape()[0], tokens.shape()[1]);
        let q = self.q.forward(tokens)?;
        let k = self.k.forward(tokens)?;
        let v = self.v.forward(tokens)?;
        let scale = 1.0 / (d as f64).sqrt();
        let mut mixed = vec![0.0; t * d];
        for i in 0..t {
            let scores: Vec<f64> = (0..t)
                .map(|j| {
                    q.row_slice(i)
                        .iter()
                        .zip(k.row_slice(j))
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                        * scale
                })
                .collect();
            for (j, a) in softmax(&scores).into_iter().enumerate() {
                for (m, &vv) in mixed[i * d..(i + 1) * d].iter_mut().zip(v.row_slice(j)) {
                    *m += a * vv;
                }
            }
        }
        let attn = self.o.forward(&Tensor::new(vec![t, d], mixed)?)?;
        let h = add(tokens, &attn)?;
        let ff = self.ff2.forward(&leaky_relu(&self.ff1.forward(&h)?, LEAKY_SLOPE))?;
        add(&h, &ff)
    }

    fn params(&self) -> Vec<&Param> {
        [&self.q, &self.k, &self.v, &self.o, &self.ff1, &self.ff2]
            .into_iter()
            .flat_map(|l| l.params())
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        [&mut self.q, &mut self.k, &mut self.v, &mut self.o, &mut self.ff1, &mut self.ff2]
            .into_iter()
            .flat_map(|l| l.params_mut())
            .collect()
    }
}

fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    ensure!(a.shape() == b.shape(), "residual shape mismatch {:?} vs {:?}", a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhiEncoder {
    variant: PhiVariant,
    in_dim: usize,
    embed: Option<Dense>,
    positions: Option<Param>,
    blocks: Vec<AttentionBlock>,
    out: Dense,
}

impl PhiEncoder {
    pub fn new(variant: PhiVariant, in_dim: usize, m_classes: usize, rng: &mut Rng) -> Result<Self> {
        ensure!(in_dim > 0 && m_classes > 0, "phi dimensions must be positive");
        if variant == PhiVariant::Fc {
            return Ok(Self {
                variant,
                in_dim,
                embed: None,
                positions: None,
                blocks: vec![],
                out: Dense::new("phi.out", in_dim, m_classes, 1.0, rng),
            });
        }
        ensure!(
            in_dim % PHI_TOKENS == 0,
            "transformer phi needs context length divisible by {PHI_TOKENS}, got {in_dim}"
        );
        let d = PHI_MODEL_DIM;
        let embed = Dense::new("phi.embed", in_dim / PHI_TOKENS, d, 1.0, rng);
        let positions = Param::new("phi.pos", Tensor::randn(&[PHI_TOKENS, d], 0.1, rng));
        let depth = if variant == PhiVariant::Trans1 { 1 } else { 2 };
        let blocks = (0..depth)
            .map(|i| AttentionBlock::new(&format!("phi.block{i}"), d, rng))
            .collect();
        Ok(Self {
            variant,
            in_dim,
            embed: Some(embed),
            positions: Some(positions),
            blocks,
            out: Dense::new("phi.out", d, m_classes, 1.0, rng),
        })
    }

    pub fn variant(&self) -> PhiVariant {
        self.variant
    }

    /// Final projection, exposed so callers can zero or inspect it.
    pub fn output_layer_mut(&mut self) -> &mut Dense {
        &mut self.out
    }

    /// Maps one context vector to a length-M vector.
    pub fn forward(&self, ctx: &[f64]) -> Result<Vec<f64>> {
        ensure!(
            ctx.len() == self.in_dim,
            "phi expects {}-dim context, got {}",
            self.in_dim,
            ctx.len()
        );
        let pooled = match (&self.embed, &self.positions) {
            (Some(embed), Some(pos)) => {
                let chunks = Tensor::new(vec![PHI_TOKENS, self.in_dim / PHI_TOKENS], ctx.to_vec())?;
                let mut h = add(&embed.forward(&chunks)?, &pos.value)?;
                for b in &self.blocks {
                    h = b.forward(&h)?;
                }
                let d = h.shape()[1];
                let mut mean = vec![0.0; d];
                for row in h.rows() {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v / PHI_TOKENS as f64;
                    }
                }
                Tensor::row(&mean)
            }
            _ => Tensor::row(ctx),
        };
        Ok(self.out.forward(&pooled)?.into_data())
    }
}

impl Module for PhiEncoder {
    fn params(&self) -> Vec<&Param> {
        let mut ps: Vec<&Param> = vec![];
        if let Some(e) = &self.embed {
            ps.extend(e.params());
        }
        if let Some(p) = &self.positions {
            ps.push(p);
        }
        ps.extend(self.blocks.iter().flat_map(|b| b.params()));
        ps.extend(self.out.params());
        ps
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps: Vec<&mut Param> = vec![];
        if let Some(e) = &mut self.embed {
            ps.extend(e.params_mut());
        }
        if let Some(p) = &mut self.positions {
            ps.push(p);
        }
        ps.extend(self.blocks.iter_mut().flat_map(|b| b.params_mut()));
        ps.extend(self.out.params_mut());
        ps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(rng: &mut Rng) -> Vec<f64> {
        (0..32).map(|_| rng.normal()).collect()
    }

    #[test]
    fn zero_projection_gives_zero_output() {
        for v in [PhiVariant::Fc, PhiVariant::Trans1, PhiVariant::Trans2] {
            let mut phi = PhiEncoder::new(v, 32, 10, &mut Rng::new(1)).unwrap();
            let out = phi.output_layer_mut();
            out.w.value.fill(0.0);
            out.b.value.fill(0.0);
            assert_eq!(phi.forward(&ctx(&mut Rng::new(2))).unwrap(), vec![0.0; 10]);
        }
    }

    #[test]
    fn variants_share_shape_contract() {
        let x = ctx(&mut Rng::new(3));
        let fc = PhiEncoder::new(PhiVariant::Fc, 32, 10, &mut Rng::new(4)).unwrap();
        let t1 = PhiEncoder::new(PhiVariant::Trans1, 32, 10, &mut Rng::new(4)).unwrap();
        let t2 = PhiEncoder::new(PhiVariant::Trans2, 32, 10, &mut Rng::new(4)).unwrap();
        let (a, b, c) = (fc.forward(&x).unwrap(), t1.forward(&x).unwrap(), t2.forward(&x).unwrap());
        assert_eq!((a.len(), b.len(), c.len()), (10, 10, 10));
        assert_ne!(a, b);
        assert_ne!(b, c);
        assert_eq!(b, t1.forward(&x).unwrap());
        assert!(a.iter().chain(&b).chain(&c).all(|v| v.is_finite()));
    }

    #[test]
    fn transformer_needs_divisible_context() {
        assert!(PhiEncoder::new(PhiVariant::Trans1, 30, 10, &mut Rng::new(1)).is_err());
        assert!(PhiEncoder::new(PhiVariant::Fc, 30, 10, &mut Rng::new(1)).is_ok());
        let phi = PhiEncoder::new(PhiVariant::Trans1, 32, 10, &mut Rng::new(1)).unwrap();
        assert!(phi.forward(&[0.0; 16]).is_err());
    }
}
