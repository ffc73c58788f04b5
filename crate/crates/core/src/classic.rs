//! The biased base classifier and its freeze contract.

use log::debug;
use serde::{Deserialize, Serialize};

use crate::data::{BatchSampler, Dataset, Sample};
use crate::error::{ensure, Error, Result};
use crate::loss::cross_entropy;
use crate::nn::Mlp;
use crate::optim::sgd_step;
use crate::rng::Rng;
use crate::tensor::{Module, Param, Tensor};

pub const HIDDEN_WIDTHS: [usize; 2] = [64, 64];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassicHyper {
    pub lr: f64,
    pub batch: usize,
    pub iters: usize,
}

impl Default for ClassicHyper {
    fn default() -> Self {
        Self {
            lr: 0.001,
            batch: 16,
            iters: 3000,
        }
    }
}

/// Dense encoder plus linear head producing relationship logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicModel {
    net: Mlp,
    frozen_checksum: Option<u64>,
}

impl ClassicModel {
    pub fn new(in_dim: usize, m_classes: usize, rng: &mut Rng) -> Self {
        let mut widths = vec![in_dim];
        widths.extend(HIDDEN_WIDTHS);
        widths.push(m_classes);
        Self {
            net: Mlp::new("classic", &widths, rng),
            frozen_checksum: None,
        }
    }

    /// Rebuilds a model around existing layers (checkpoint loading).
    pub fn from_net(net: Mlp) -> Self {
        Self {
            net,
            frozen_checksum: None,
        }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    /// Mutable access to the layers; refused once frozen.
    pub fn net_mut(&mut self) -> Result<&mut Mlp> {
        if self.is_frozen() {
            return Err(Error::FreezeViolation("classic model parameters are frozen".into()));
        }
        Ok(&mut self.net)
    }

    pub fn in_dim(&self) -> usize {
        self.net.layers[0].fan_in()
    }

    pub fn m_classes(&self) -> usize {
        self.net.layers.last().expect("non-empty").fan_out()
    }

    /// Logits for one context vector.
    pub fn logits(&self, ctx: &[f64]) -> Result<Vec<f64>> {
        ensure!(
            ctx.len() == self.in_dim(),
            "classic model expects {}-dim context, got {}",
            self.in_dim(),
            ctx.len()
        );
        Ok(self.net.forward(&Tensor::row(ctx))?.into_data())
    }

    /// Logits for a batch `[n, in_dim]`.
    pub fn logits_batch(&self, x: &Tensor) -> Result<Tensor> {
        self.net.forward(x)
    }

    pub fn freeze(&mut self) {
        if self.frozen_checksum.is_none() {
            for p in self.net.params_mut() {
                p.frozen = true;
            }
            self.frozen_checksum = Some(self.net.checksum());
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen_checksum.is_some()
    }

    /// Digest recorded at freeze time.
    pub fn param_checksum(&self) -> Option<u64> {
        self.frozen_checksum
    }

    /// Fails unless the model is frozen and its parameters still hash to the
    /// digest recorded when it was frozen.
    pub fn verify_frozen(&self) -> Result<u64> {
        let recorded = self
            .frozen_checksum
            .ok_or_else(|| Error::FreezeViolation("classic model is not frozen".into()))?;
        let now = self.net.checksum();
        if now != recorded {
            return Err(Error::FreezeViolation(format!(
                "classic checksum changed: frozen {recorded:016x}, now {now:016x}"
            )));
        }
        Ok(recorded)
    }

    /// One SGD step of mean cross-entropy on `batch`; returns the batch loss.
    pub fn sgd_iteration(&mut self, batch: &[&Sample], lr: f64) -> Result<f64> {
        ensure!(!batch.is_empty(), "empty training batch");
        let x = Tensor::from_rows(&batch.iter().map(|s| s.ctx.as_slice()).collect::<Vec<_>>())?;
        let net = self.net_mut()?;
        let trace = net.forward_trace(&x)?;
        let logits = trace.output();
        let n = batch.len() as f64;
        let mut loss = 0.0;
        let mut dlogits = Vec::with_capacity(logits.len());
        for (row, s) in logits.rows().zip(batch) {
            let (l, g) = cross_entropy(row, s.label)?;
            loss += l / n;
            dlogits.extend(g.into_iter().map(|v| v / n));
        }
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("classic loss is {loss}")));
        }
        let dlogits = Tensor::new(logits.shape().to_vec(), dlogits)?;
        net.backward(&trace, &dlogits)?;
        sgd_step(&mut net.params_mut(), lr)?;
        Ok(loss)
    }
}

impl Module for ClassicModel {
    fn params(&self) -> Vec<&Param> {
        self.net.params()
    }
    /// Frozen parameters are still handed out; optimizers reject them by flag.
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.net.params_mut()
    }
}

/// Trained (unfrozen) model and its per-iteration loss.
#[derive(Debug, Clone)]
pub struct ClassicRun {
    pub model: ClassicModel,
    pub loss_trace: Vec<f64>,
}

/// Minimizes mean cross-entropy with plain SGD on shuffled mini-batches.
pub fn train_classic(ds: &Dataset, hyper: &ClassicHyper, seed: u64) -> Result<ClassicRun> {
    ensure!(!ds.train.is_empty(), "training split is empty");
    ensure!(hyper.batch > 0 && hyper.lr > 0.0, "classic batch and lr must be positive");
    let root = Rng::new(seed);
    let mut model = ClassicModel::new(ds.feature_dim(), ds.m_classes(), &mut root.fork(10));
    let mut sampler = BatchSampler::new(ds.train.len(), hyper.batch, root.fork(11));
    let mut loss_trace = Vec::with_capacity(hyper.iters);
    for it in 0..hyper.iters {
        let batch: Vec<&Sample> = sampler.next_batch().into_iter().map(|i| &ds.train[i]).collect();
        let loss = model.sgd_iteration(&batch, hyper.lr)?;
        if it % 500 == 0 {
            debug!("classic iter {it}: loss {loss:.4}");
        }
        loss_trace.push(loss);
    }
    Ok(ClassicRun { model, loss_trace })
}
