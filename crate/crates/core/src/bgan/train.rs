//! The adversarial training loop.
//!
//! One iteration runs `critic_ratio` critic updates; the last of them is
//! followed by one generator update, after which both learning rates follow
//! the configured schedule.

use log::debug;
use serde::{Deserialize, Serialize};

use super::loss::{loss_d, loss_g, regression_loss};
use super::nets::{Critic, Generator, NetShape};
use crate::bias::{build_batch_set_unchecked, CorrectionBias, GlobalBias};
use crate::classic::{train_classic, ClassicHyper, ClassicModel, ClassicRun};
use crate::data::{BatchSampler, Dataset, Sample};
use crate::error::{ensure, Error, Result};
use crate::loss::argmax;
use crate::optim::{clip_params, rmsprop_step, LrSchedule};
use crate::phi::PhiEncoder;
use crate::rng::Rng;
use crate::tensor::{Module, Tensor};

/// How the generator is fit to the correction biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenObjective {
    /// Critic-guided (Wasserstein) training.
    Adversarial,
    /// Direct squared-error regression onto the correction biases, no critic.
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BganHyper {
    pub lr_g: f64,
    pub lr_d: f64,
    pub critic_ratio: usize,
    pub alpha: f64,
    /// Critic weight clip; `None` disables clipping.
    pub clip_c: Option<f64>,
    pub iters: usize,
    pub batch: usize,
    pub lr_schedule: LrSchedule,
    pub rms_decay: f64,
    pub rms_eps: f64,
    pub objective: GenObjective,
    pub net: NetShape,
}

impl Default for BganHyper {
    fn default() -> Self {
        Self {
            lr_g: 1e-4,
            lr_d: 5e-4,
            critic_ratio: 5,
            alpha: 0.075,
            clip_c: Some(0.01),
            iters: 1000,
            batch: 16,
            lr_schedule: LrSchedule::LinearDecay,
            rms_decay: 0.99,
            rms_eps: 1e-8,
            objective: GenObjective::Adversarial,
            net: NetShape::default(),
        }
    }
}

impl BganHyper {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.lr_g > 0.0 && self.lr_d > 0.0, "learning rates must be positive");
        ensure!(self.critic_ratio >= 1, "critic_ratio must be at least 1");
        ensure!(self.alpha >= 0.0 && self.alpha.is_finite(), "alpha must be finite and >= 0");
        if let Some(c) = self.clip_c {
            ensure!(c > 0.0, "clip_c must be positive, got {c}");
        }
        ensure!(self.batch >= 1, "batch must be positive");
        ensure!(self.rms_decay > 0.0 && self.rms_decay < 1.0, "rms_decay must be in (0, 1)");
        self.net.validate()
    }
}

/// Everything needed to build correction biases for a batch.
#[derive(Debug, Clone)]
pub struct CorrectionSetup {
    pub phi: PhiEncoder,
    pub gb: GlobalBias,
    pub eps_c: f64,
}

/// Networks, optimizer-visible rates and update counters.
#[derive(Debug, Clone)]
pub struct BganState {
    pub generator: Generator,
    pub critic: Critic,
    pub lr_g: f64,
    pub lr_d: f64,
    pub iterations: usize,
    pub critic_updates: usize,
    pub generator_updates: usize,
}

impl BganState {
    pub fn new(hyper: &BganHyper, ctx_dim: usize, m: usize, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let root = Rng::new(seed);
        let mut critic = Critic::new(&hyper.net, m, &mut root.fork(21))?;
        // A scaled init would be saturated by the first clip, so start inside the box.
        if let Some(c) = hyper.clip_c {
            let mut r = root.fork(23);
            for p in critic.params_mut() {
                p.value.data_mut().iter_mut().for_each(|v| *v = (2.0 * r.uniform() - 1.0) * c);
            }
        }
        Ok(Self {
            generator: Generator::new(&hyper.net, ctx_dim, m, &mut root.fork(20))?,
            critic,
            lr_g: hyper.lr_g,
            lr_d: hyper.lr_d,
            iterations: 0,
            critic_updates: 0,
            generator_updates: 0,
        })
    }
}

/// Per-iteration record, also the row format of the emitted loss trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loss_g: f64,
    pub loss_d: f64,
    pub lr_g: f64,
    pub lr_d: f64,
    /// Mean `|D(b_tru) - D(b_pre)|` over the batch at the last critic step.
    pub critic_gap: f64,
}

/// Running audit of every correction bias built during training.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct BiasAudit {
    pub constructions: usize,
    /// Constructions whose target was not the strict argmax of `z + b_tru`
    /// or whose margin fell below `0.9 * eps_c`.
    pub violations: usize,
    pub min_margin: f64,
}

impl BiasAudit {
    fn record(&mut self, z: &Tensor, set: &[CorrectionBias], eps_c: f64) {
        for (zr, c) in z.rows().zip(set) {
            let z_hat: Vec<f64> = zr.iter().zip(&c.b_tru).map(|(a, b)| a + b).collect();
            let ok = argmax(&z_hat) == c.r_tru && c.margin >= crate::bias::MARGIN_FRACTION * eps_c;
            if !ok {
                self.violations += 1;
            }
            self.min_margin = if self.constructions == 0 {
                c.margin
            } else {
                self.min_margin.min(c.margin)
            };
            self.constructions += 1;
        }
    }
}

struct BatchInputs {
    ctx: Tensor,
    z: Tensor,
    labels: Vec<usize>,
}

fn batch_inputs(batch: &[&Sample], model: &ClassicModel) -> Result<BatchInputs> {
    let ctx = Tensor::from_rows(&batch.iter().map(|s| s.ctx.as_slice()).collect::<Vec<_>>())?;
    let z = model.logits_batch(&ctx)?;
    Ok(BatchInputs {
        ctx,
        z,
        labels: batch.iter().map(|s| s.label).collect(),
    })
}

fn finite(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Divergence(format!("{what} is {v}")))
    }
}

/// Sub-step of an iteration, reported to observers after it completes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubStep {
    Critic(usize),
    Generator,
}

/// One training iteration against a frozen classic model.
pub fn train_iteration(
    state: &mut BganState,
    batch: &[&Sample],
    model: &ClassicModel,
    setup: &CorrectionSetup,
    hyper: &BganHyper,
    audit: &mut BiasAudit,
) -> Result<IterationRecord> {
    train_iteration_observed(state, batch, model, setup, hyper, audit, &mut |_, _| {})
}

/// [`train_iteration`] calling `observe` after every critic and generator
/// update.
pub fn train_iteration_observed(
    state: &mut BganState,
    batch: &[&Sample],
    model: &ClassicModel,
    setup: &CorrectionSetup,
    hyper: &BganHyper,
    audit: &mut BiasAudit,
    observe: &mut dyn FnMut(SubStep, &BganState),
) -> Result<IterationRecord> {
    model.verify_frozen()?;
    let rec = iteration(state, batch, model, setup, hyper, audit, observe)?;
    model.verify_frozen()?;
    Ok(rec)
}

fn iteration(
    state: &mut BganState,
    batch: &[&Sample],
    model: &ClassicModel,
    setup: &CorrectionSetup,
    hyper: &BganHyper,
    audit: &mut BiasAudit,
    observe: &mut dyn FnMut(SubStep, &BganState),
) -> Result<IterationRecord> {
    ensure!(!batch.is_empty(), "empty BGAN batch");
    let b_glo = &setup.gb.b_glo;
    let mut loss_dv = 0.0;
    let mut gap = 0.0;

    let critic_steps = match hyper.objective {
        GenObjective::Adversarial => hyper.critic_ratio,
        GenObjective::Plain => 0,
    };
    for k in 0..critic_steps {
        state.critic.zero_grad();
        let inp = batch_inputs(batch, model)?;
        let b_pre = state.generator.forward_batch(&inp.ctx, b_glo, &inp.z)?;
        let set = build_batch_set_unchecked(batch, model, &setup.phi, &setup.gb, setup.eps_c)?;
        audit.record(&inp.z, &set, setup.eps_c);
        let b_tru = Tensor::from_rows(&set.iter().map(|c| c.b_tru.as_slice()).collect::<Vec<_>>())?;

        let tr_s = state.critic.forward_trace(&b_tru)?;
        let tr_g = state.critic.forward_trace(&b_pre)?;
        let t_s = state.critic.scores_of(&tr_s);
        let t_g = state.critic.scores_of(&tr_g);
        let l = loss_d(&t_s, &t_g)?;
        loss_dv = finite("critic loss", l.value)?;
        gap = t_s.iter().zip(&t_g).map(|(a, b)| (a - b).abs()).sum::<f64>() / t_s.len() as f64;

        state.critic.backward(&tr_s, &l.d_scores_s)?;
        state.critic.backward(&tr_g, &l.d_scores_g)?;
        rmsprop_step(&mut state.critic.params_mut(), state.lr_d, hyper.rms_decay, hyper.rms_eps)?;
        if let Some(c) = hyper.clip_c {
            clip_params(&mut state.critic.params_mut(), c);
        }
        state.critic_updates += 1;
        observe(SubStep::Critic(k), state);
    }

    state.generator.zero_grad();
    let inp = batch_inputs(batch, model)?;
    let trace = state.generator.forward_trace(&inp.ctx, b_glo, &inp.z)?;
    let n = batch.len();
    let m = state.generator.m_classes();
    let b_pre = trace.output().clone().reshape(vec![n, m])?;
    let z_hat: Vec<Vec<f64>> = inp
        .z
        .rows()
        .zip(b_pre.rows())
        .map(|(z, b)| z.iter().zip(b).map(|(x, y)| x + y).collect())
        .collect();

    let (loss_gv, d_bias) = match hyper.objective {
        GenObjective::Adversarial => {
            let tr = state.critic.forward_trace(&b_pre)?;
            let scores = state.critic.scores_of(&tr);
            let l = loss_g(&scores, &z_hat, &inp.labels, hyper.alpha)?;
            let d_from_critic = state.critic.backward(&tr, &l.d_scores)?;
            // critic gradients from this pass are discarded
            state.critic.zero_grad();
            let mut d = d_from_critic;
            for (row, g) in d.data_mut().chunks_mut(m).zip(&l.d_z_hat) {
                row.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            (l.value, d)
        }
        GenObjective::Plain => {
            let set = build_batch_set_unchecked(batch, model, &setup.phi, &setup.gb, setup.eps_c)?;
            audit.record(&inp.z, &set, setup.eps_c);
            let b_tru: Vec<Vec<f64>> = set.into_iter().map(|c| c.b_tru).collect();
            let b_rows: Vec<Vec<f64>> = b_pre.rows().map(<[f64]>::to_vec).collect();
            let (reg, d_reg) = regression_loss(&b_rows, &b_tru)?;
            let ce = loss_g(&vec![0.0; n], &z_hat, &inp.labels, hyper.alpha)?;
            let mut d = Vec::with_capacity(n * m);
            for (a, b) in d_reg.iter().zip(&ce.d_z_hat) {
                d.extend(a.iter().zip(b).map(|(x, y)| x + y));
            }
            (reg + ce.value, Tensor::new(vec![n, m], d)?)
        }
    };
    finite("generator loss", loss_gv)?;
    state.generator.backward(&trace, &d_bias)?;
    rmsprop_step(&mut state.generator.params_mut(), state.lr_g, hyper.rms_decay, hyper.rms_eps)?;
    state.generator_updates += 1;
    observe(SubStep::Generator, state);

    let rec = IterationRecord {
        iteration: state.iterations,
        loss_g: loss_gv,
        loss_d: loss_dv,
        lr_g: state.lr_g,
        lr_d: state.lr_d,
        critic_gap: gap,
    };
    state.iterations += 1;
    state.lr_g = hyper.lr_schedule.rate(hyper.lr_g, state.iterations, hyper.iters);
    state.lr_d = hyper.lr_schedule.rate(hyper.lr_d, state.iterations, hyper.iters);
    Ok(rec)
}

/// Trained networks with their per-iteration records.
#[derive(Debug, Clone)]
pub struct BganRun {
    pub state: BganState,
    pub trace: Vec<IterationRecord>,
    pub audit: BiasAudit,
}

/// Runs `hyper.iters` iterations over shuffled mini-batches of the training
/// split, against a frozen classic model.
pub fn train_bgan(
    model: &ClassicModel,
    setup: &CorrectionSetup,
    ds: &Dataset,
    hyper: &BganHyper,
    seed: u64,
) -> Result<BganRun> {
    let before = model.verify_frozen()?;
    let mut state = BganState::new(hyper, ds.feature_dim(), ds.m_classes(), seed)?;
    let mut sampler = BatchSampler::new(ds.train.len(), hyper.batch, Rng::new(seed).fork(22));
    let mut audit = BiasAudit::default();
    let mut trace = Vec::with_capacity(hyper.iters);
    for it in 0..hyper.iters {
        let batch: Vec<&Sample> = sampler.next_batch().into_iter().map(|i| &ds.train[i]).collect();
        let rec = train_iteration(&mut state, &batch, model, setup, hyper, &mut audit)?;
        if it % 200 == 0 {
            debug!("bgan iter {it}: L_G {:.4} L_D {:.6} gap {:.6}", rec.loss_g, rec.loss_d, rec.critic_gap);
        }
        trace.push(rec);
    }
    if model.verify_frozen()? != before {
        return Err(Error::FreezeViolation("classic checksum changed during BGAN training".into()));
    }
    Ok(BganRun { state, trace, audit })
}

/// Joint training: classic SGD steps and BGAN iterations interleaved from
/// the start, with BGAN iterations spread evenly over the classic steps. The
/// classic model is frozen only after both finish.
pub fn train_integrated(
    ds: &Dataset,
    classic: &ClassicHyper,
    setup: &CorrectionSetup,
    hyper: &BganHyper,
    seed: u64,
) -> Result<(ClassicRun, BganRun)> {
    let root = Rng::new(seed);
    let mut model = ClassicModel::new(ds.feature_dim(), ds.m_classes(), &mut root.fork(10));
    let mut classic_sampler = BatchSampler::new(ds.train.len(), classic.batch, root.fork(11));
    let mut state = BganState::new(hyper, ds.feature_dim(), ds.m_classes(), seed)?;
    let mut sampler = BatchSampler::new(ds.train.len(), hyper.batch, root.fork(22));
    let mut audit = BiasAudit::default();
    let mut loss_trace = Vec::with_capacity(classic.iters);
    let mut trace = Vec::with_capacity(hyper.iters);

    let mut run_bgan_until = |target: usize, model: &ClassicModel, state: &mut BganState| -> Result<()> {
        while trace.len() < target {
            let batch: Vec<&Sample> = sampler.next_batch().into_iter().map(|i| &ds.train[i]).collect();
            trace.push(iteration(state, &batch, model, setup, hyper, &mut audit, &mut |_, _| {})?);
        }
        Ok(())
    };
    for t in 0..classic.iters {
        let batch: Vec<&Sample> = classic_sampler.next_batch().into_iter().map(|i| &ds.train[i]).collect();
        loss_trace.push(model.sgd_iteration(&batch, classic.lr)?);
        run_bgan_until((t + 1) * hyper.iters / classic.iters, &model, &mut state)?;
    }
    run_bgan_until(hyper.iters, &model, &mut state)?;
    model.freeze();
    Ok((ClassicRun { model, loss_trace }, BganRun { state, trace, audit }))
}

/// Gradual schedule: train and freeze the classic model, then train BGAN.
pub fn train_gradual(
    ds: &Dataset,
    classic: &ClassicHyper,
    setup: &CorrectionSetup,
    hyper: &BganHyper,
    seed: u64,
) -> Result<(ClassicRun, BganRun)> {
    let mut run = train_classic(ds, classic, seed)?;
    run.model.freeze();
    let bgan = train_bgan(&run.model, setup, ds, hyper, seed)?;
    Ok((run, bgan))
}
