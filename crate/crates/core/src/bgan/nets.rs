//! Generator and critic networks.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::layers::Dense;
use crate::nn::{ConvStack, Mlp, Trace};
use crate::rng::Rng;
use crate::tensor::{Module, Param, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetArch {
    /// Length-preserving 1-D convolutions over the class axis.
    Conv,
    /// Fully connected layers on the flattened inputs.
    Fc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetShape {
    pub arch: NetArch,
    pub g_layers: usize,
    pub d_layers: usize,
    /// Hidden channels of the convolution stacks.
    pub channels: usize,
    pub kernel: usize,
    /// Hidden width of the fully connected variants.
    pub fc_width: usize,
}

impl Default for NetShape {
    fn default() -> Self {
        Self {
            arch: NetArch::Conv,
            g_layers: 5,
            d_layers: 3,
            channels: 16,
            kernel: 3,
            fc_width: 64,
        }
    }
}

impl NetShape {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.g_layers >= 1 && self.d_layers >= 1, "networks need at least one layer");
        ensure!(self.channels >= 1 && self.fc_width >= 1, "hidden widths must be positive");
        ensure!(self.kernel % 2 == 1, "kernel size {} must be odd", self.kernel);
        Ok(())
    }

    fn hidden(&self, n_layers: usize, input: usize, output: usize) -> Vec<usize> {
        let width = match self.arch {
            NetArch::Conv => self.channels,
            NetArch::Fc => self.fc_width,
        };
        let mut w = vec![input];
        w.extend(std::iter::repeat_n(width, n_layers - 1));
        w.push(output);
        w
    }
}

#[derive(Debug, Clone, PartialEq)]
enum GenBody {
    /// Dense projection of the context to one channel, stacked with the
    /// prior and the logits as a 3-channel length-M signal.
    Conv { proj: Dense, stack: ConvStack },
    Fc { mlp: Mlp },
}

/// Predicts a per-sample bias from `(ctx, b_glo, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    body: GenBody,
    ctx_dim: usize,
    m: usize,
}

pub struct GenTrace {
    ctx: Tensor,
    inner: Trace,
}

impl GenTrace {
    pub fn output(&self) -> &Tensor {
        self.inner.output()
    }

    pub fn kink_margin(&self) -> f64 {
        self.inner.kink_margin()
    }
}

impl Generator {
    /// The last layer starts at zero so an untrained generator predicts no bias.
    pub fn new(shape: &NetShape, ctx_dim: usize, m: usize, rng: &mut Rng) -> Result<Self> {
        shape.validate()?;
        let mut body = match shape.arch {
            NetArch::Conv => GenBody::Conv {
                proj: Dense::new("gen.proj", ctx_dim, m, 1.0, rng),
                stack: ConvStack::new("gen.conv", &shape.hidden(shape.g_layers, 3, 1), shape.kernel, rng),
            },
            NetArch::Fc => GenBody::Fc {
                mlp: Mlp::new("gen.fc", &shape.hidden(shape.g_layers, ctx_dim + 2 * m, m), rng),
            },
        };
        match &mut body {
            GenBody::Conv { stack, .. } => stack.layers.last_mut().expect("non-empty").k.value.fill(0.0),
            GenBody::Fc { mlp } => mlp.layers.last_mut().expect("non-empty").w.value.fill(0.0),
        }
        Ok(Self { body, ctx_dim, m })
    }

    pub fn m_classes(&self) -> usize {
        self.m
    }

    pub fn ctx_dim(&self) -> usize {
        self.ctx_dim
    }

    fn input(&self, ctx: &Tensor, b_glo: &[f64], z: &Tensor) -> Result<Tensor> {
        let n = ctx.shape()[0];
        ensure!(
            ctx.shape() == [n, self.ctx_dim],
            "generator context shape {:?}, expected [{n}, {}]",
            ctx.shape(),
            self.ctx_dim
        );
        ensure!(b_glo.len() == self.m, "global bias length {}, expected {}", b_glo.len(), self.m);
        ensure!(z.shape() == [n, self.m], "logits shape {:?}, expected [{n}, {}]", z.shape(), self.m);
        match &self.body {
            GenBody::Conv { proj, .. } => {
                let p = proj.forward(ctx)?;
                let mut data = Vec::with_capacity(n * 3 * self.m);
                for i in 0..n {
                    data.extend_from_slice(p.row_slice(i));
                    data.extend_from_slice(b_glo);
                    data.extend_from_slice(z.row_slice(i));
                }
                Tensor::new(vec![n, 3, self.m], data)
            }
            GenBody::Fc { .. } => {
                let mut data = Vec::with_capacity(n * (self.ctx_dim + 2 * self.m));
                for i in 0..n {
                    data.extend_from_slice(ctx.row_slice(i));
                    data.extend_from_slice(b_glo);
                    data.extend_from_slice(z.row_slice(i));
                }
                Tensor::new(vec![n, self.ctx_dim + 2 * self.m], data)
            }
        }
    }

    /// Bias predictions `[n, M]` for a batch.
    pub fn forward_batch(&self, ctx: &Tensor, b_glo: &[f64], z: &Tensor) -> Result<Tensor> {
        Ok(self.forward_trace(ctx, b_glo, z)?.output().clone().reshape(vec![ctx.shape()[0], self.m])?)
    }

    /// Single-sample prediction.
    pub fn forward(&self, ctx: &[f64], b_glo: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .forward_batch(&Tensor::row(ctx), b_glo, &Tensor::row(z))?
            .into_data())
    }

    pub fn forward_trace(&self, ctx: &Tensor, b_glo: &[f64], z: &Tensor) -> Result<GenTrace> {
        let x = self.input(ctx, b_glo, z)?;
        let inner = match &self.body {
            GenBody::Conv { stack, .. } => stack.forward_trace(&x)?,
            GenBody::Fc { mlp } => mlp.forward_trace(&x)?,
        };
        Ok(GenTrace {
            ctx: ctx.clone(),
            inner,
        })
    }

    /// Backpropagates `d b_pre` (`[n, M]`) into the generator parameters.
    /// Returns the gradient with respect to the logits input `z`.
    pub fn backward(&mut self, trace: &GenTrace, d_bias: &Tensor) -> Result<Tensor> {
        let n = trace.ctx.shape()[0];
        let m = self.m;
        ensure!(d_bias.shape() == [n, m], "bias gradient shape {:?}", d_bias.shape());
        match &mut self.body {
            GenBody::Conv { proj, stack } => {
                let dy = d_bias.clone().reshape(vec![n, 1, m])?;
                let dx = stack.backward(&trace.inner, &dy)?;
                let mut dproj = Vec::with_capacity(n * m);
                let mut dz = Vec::with_capacity(n * m);
                for i in 0..n {
                    let base = i * 3 * m;
                    dproj.extend_from_slice(&dx.data()[base..base + m]);
                    dz.extend_from_slice(&dx.data()[base + 2 * m..base + 3 * m]);
                }
                proj.backward(&trace.ctx, &Tensor::new(vec![n, m], dproj)?)?;
                Tensor::new(vec![n, m], dz)
            }
            GenBody::Fc { mlp } => {
                let dx = mlp.backward(&trace.inner, d_bias)?;
                let w = self.ctx_dim + 2 * m;
                let dz = (0..n)
                    .flat_map(|i| dx.data()[i * w + self.ctx_dim + m..(i + 1) * w].to_vec())
                    .collect();
                Tensor::new(vec![n, m], dz)
            }
        }
    }
}

impl Module for Generator {
    fn params(&self) -> Vec<&Param> {
        match &self.body {
            GenBody::Conv { proj, stack } => proj.params().into_iter().chain(stack.params()).collect(),
            GenBody::Fc { mlp } => mlp.params(),
        }
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        match &mut self.body {
            GenBody::Conv { proj, stack } => {
                proj.params_mut().into_iter().chain(stack.params_mut()).collect()
            }
            GenBody::Fc { mlp } => mlp.params_mut(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum CriticBody {
    /// Convolutions down to one channel, then mean over the class axis.
    Conv(ConvStack),
    Fc(Mlp),
}

/// Scores bias vectors with one real number each.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    body: CriticBody,
    m: usize,
}

pub struct CriticTrace {
    inner: Trace,
    n: usize,
}

impl CriticTrace {
    pub fn kink_margin(&self) -> f64 {
        self.inner.kink_margin()
    }
}

impl Critic {
    pub fn new(shape: &NetShape, m: usize, rng: &mut Rng) -> Result<Self> {
        shape.validate()?;
        let body = match shape.arch {
            NetArch::Conv => CriticBody::Conv(ConvStack::new(
                "critic.conv",
                &shape.hidden(shape.d_layers, 1, 1),
                shape.kernel,
                rng,
            )),
            NetArch::Fc => CriticBody::Fc(Mlp::new("critic.fc", &shape.hidden(shape.d_layers, m, 1), rng)),
        };
        Ok(Self { body, m })
    }

    pub fn m_classes(&self) -> usize {
        self.m
    }

    pub fn forward_trace(&self, b: &Tensor) -> Result<CriticTrace> {
        let n = b.shape()[0];
        ensure!(b.shape() == [n, self.m], "critic input shape {:?}, expected [{n}, {}]", b.shape(), self.m);
        let inner = match &self.body {
            CriticBody::Conv(stack) => stack.forward_trace(&b.clone().reshape(vec![n, 1, self.m])?)?,
            CriticBody::Fc(mlp) => mlp.forward_trace(b)?,
        };
        Ok(CriticTrace { inner, n })
    }

    pub fn scores_of(&self, trace: &CriticTrace) -> Vec<f64> {
        let out = trace.inner.output();
        match &self.body {
            CriticBody::Conv(_) => out.data().chunks(self.m).map(|c| c.iter().sum::<f64>() / self.m as f64).collect(),
            CriticBody::Fc(_) => out.data().to_vec(),
        }
    }

    /// Scores for a batch `[n, M]`.
    pub fn scores(&self, b: &Tensor) -> Result<Vec<f64>> {
        Ok(self.scores_of(&self.forward_trace(b)?))
    }

    /// Single-vector score.
    pub fn score(&self, b: &[f64]) -> Result<f64> {
        Ok(self.scores(&Tensor::row(b))?[0])
    }

    /// Accumulates parameter gradients for `d score_i`; returns `d b` (`[n, M]`).
    pub fn backward(&mut self, trace: &CriticTrace, d_scores: &[f64]) -> Result<Tensor> {
        let (n, m) = (trace.n, self.m);
        ensure!(d_scores.len() == n, "got {} score gradients for {n} inputs", d_scores.len());
        match &mut self.body {
            CriticBody::Conv(stack) => {
                let dy: Vec<f64> = d_scores
                    .iter()
                    .flat_map(|&g| std::iter::repeat_n(g / m as f64, m))
                    .collect();
                let dx = stack.backward(&trace.inner, &Tensor::new(vec![n, 1, m], dy)?)?;
                dx.reshape(vec![n, m])
            }
            CriticBody::Fc(mlp) => mlp.backward(&trace.inner, &Tensor::new(vec![n, 1], d_scores.to_vec())?),
        }
    }

    /// Upper bound on `|score|` for inputs with `|b|_∞ <= input_bound` when
    /// every parameter lies in `[-c, c]`, by interval propagation through the
    /// layers (leaky ReLU never increases magnitude).
    pub fn score_bound(&self, input_bound: f64, c: f64) -> f64 {
        let mut h = input_bound;
        match &self.body {
            CriticBody::Conv(stack) => {
                for l in &stack.layers {
                    let fan_in = (l.k.shape()[1] * l.k.shape()[2]) as f64;
                    h = c * fan_in * h + c;
                }
            }
            CriticBody::Fc(mlp) => {
                for l in &mlp.layers {
                    h = c * l.fan_in() as f64 * h + c;
                }
            }
        }
        h
    }
}

impl Module for Critic {
    fn params(&self) -> Vec<&Param> {
        match &self.body {
            CriticBody::Conv(s) => s.params(),
            CriticBody::Fc(m) => m.params(),
        }
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        match &mut self.body {
            CriticBody::Conv(s) => s.params_mut(),
            CriticBody::Fc(m) => m.params_mut(),
        }
    }
}
