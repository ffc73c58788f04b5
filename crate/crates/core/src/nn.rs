//! Layer stacks: dense MLPs and 1-D convolution towers.
//!
//! Both stacks apply leaky ReLU between layers and leave the last layer
//! linear. `forward_trace` records each layer input and pre-activation so
//! that `backward` can run without recomputation.

use crate::error::Result;
use crate::layers::{leaky_relu, leaky_relu_backward, Conv1d, Dense, LEAKY_SLOPE};
use crate::rng::Rng;
use crate::tensor::{Module, Param, Tensor};

/// Per-layer `(input, pre-activation)` pairs from one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    steps: Vec<(Tensor, Tensor)>,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        &self.steps.last().expect("stack has at least one layer").1
    }

    /// Smallest `|pre-activation|` feeding a leaky ReLU; infinite when the
    /// stack has a single (linear) layer.
    pub fn kink_margin(&self) -> f64 {
        let n = self.steps.len();
        self.steps[..n - 1]
            .iter()
            .flat_map(|(_, p)| p.data())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// `widths = [in, h1, ..., out]`.
    pub fn new(name: &str, widths: &[usize], rng: &mut Rng) -> Self {
        let n = widths.len() - 1;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let gain = if i + 1 == n { 1.0 } else { 2f64.sqrt() };
                Dense::new(&format!("{name}.{i}"), w[0], w[1], gain, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(&h)?;
            if i + 1 < self.layers.len() {
                h = leaky_relu(&h, LEAKY_SLOPE);
            }
        }
        Ok(h)
    }

    pub fn forward_trace(&self, x: &Tensor) -> Result<Trace> {
        let mut steps = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            let pre = l.forward(&h)?;
            let next = if i + 1 < self.layers.len() {
                leaky_relu(&pre, LEAKY_SLOPE)
            } else {
                pre.clone()
            };
            steps.push((h, pre));
            h = next;
        }
        Ok(Trace { steps })
    }

    /// Accumulates parameter gradients; returns the gradient w.r.t. the input.
    pub fn backward(&mut self, trace: &Trace, dout: &Tensor) -> Result<Tensor> {
        let n = self.layers.len();
        let mut g = dout.clone();
        for i in (0..n).rev() {
            let (input, pre) = &trace.steps[i];
            if i + 1 < n {
                g = leaky_relu_backward(pre, &g, LEAKY_SLOPE);
            }
            g = self.layers[i].backward(input, &g)?;
        }
        Ok(g)
    }
}

impl Module for Mlp {
    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvStack {
    pub layers: Vec<Conv1d>,
}

impl ConvStack {
    /// `channels = [in, c1, ..., out]`, all layers with kernel `ksize`.
    pub fn new(name: &str, channels: &[usize], ksize: usize, rng: &mut Rng) -> Self {
        let n = channels.len() - 1;
        let layers = channels
            .windows(2)
            .enumerate()
            .map(|(i, c)| {
                let gain = if i + 1 == n { 1.0 } else { 2f64.sqrt() };
                Conv1d::new(&format!("{name}.{i}"), c[0], c[1], ksize, gain, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(&h)?;
            if i + 1 < self.layers.len() {
                h = leaky_relu(&h, LEAKY_SLOPE);
            }
        }
        Ok(h)
    }

    pub fn forward_trace(&self, x: &Tensor) -> Result<Trace> {
        let mut steps = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            let pre = l.forward(&h)?;
            let next = if i + 1 < self.layers.len() {
                leaky_relu(&pre, LEAKY_SLOPE)
            } else {
                pre.clone()
            };
            steps.push((h, pre));
            h = next;
        }
        Ok(Trace { steps })
    }

    pub fn backward(&mut self, trace: &Trace, dout: &Tensor) -> Result<Tensor> {
        let n = self.layers.len();
        let mut g = dout.clone();
        for i in (0..n).rev() {
            let (input, pre) = &trace.steps[i];
            if i + 1 < n {
                g = leaky_relu_backward(pre, &g, LEAKY_SLOPE);
            }
            g = self.layers[i].backward(input, &g)?;
        }
        Ok(g)
    }
}

impl Module for ConvStack {
    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}
