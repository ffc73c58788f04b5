//! Named finite-difference cases covering every differentiable layer and
//! the two adversarial loss graphs.
//!
//! Each case builds a fresh randomized instance, evaluates a scalar
//! objective with its analytic gradient, and compares against central
//! differences. Inputs are wrapped as parameters so input gradients are
//! checked as well. Instances whose leaky-ReLU pre-activations sit within
//! [`KINK_MARGIN`] of zero are redrawn: a central difference straddling the
//! kink does not estimate the derivative the backward pass computes.

use crate::bgan::{loss_d, loss_g, Critic, Generator, NetArch, NetShape};
use crate::classic::ClassicModel;
use crate::error::{Error, Result};
use crate::gradcheck::{finite_diff_check_floored, GradCheck};
use crate::layers::{leaky_relu, leaky_relu_backward, Conv1d, Dense, LEAKY_SLOPE};
use crate::loss::cross_entropy;
use crate::nn::Mlp;
use crate::rng::Rng;
use crate::tensor::{Module, Param, Tensor};

pub const KINK_MARGIN: f64 = 1e-3;

/// Step, denominator floor and pass threshold for a suite run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Check {
    pub step: f64,
    pub floor: f64,
    pub tolerance: f64,
}

impl Default for Check {
    /// The floor of `1e-4` turns the relative test into an absolute one
    /// (`1e-9`) for gradients below that size.
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-4,
            tolerance: 1e-5,
        }
    }
}

impl Check {
    pub fn run<M, F>(&self, model: &mut M, f: F) -> Result<GradCheck>
    where
        M: Module,
        F: FnMut(&mut M) -> Result<f64>,
    {
        finite_diff_check_floored(model, f, self.step, self.floor)
    }
}

pub const DEFAULT_INSTANCES: usize = 20;

pub type CaseFn = fn(&mut Rng, &Check) -> Result<GradCheck>;

/// A named check; `run` builds one randomized instance and checks it.
#[derive(Clone, Copy)]
pub struct GradCase {
    pub name: &'static str,
    pub run: CaseFn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseReport {
    pub name: String,
    pub instances: usize,
    /// Worst instance of the case.
    pub worst: GradCheck,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub check: Check,
    pub cases: Vec<CaseReport>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CaseReport> {
        self.cases.iter().filter(|c| !c.passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.cases.iter().map(|c| c.worst.max_rel_err).fold(0.0, f64::max)
    }
}

/// Runs `instances` randomized instances of every case. Case `i` draws from
/// stream `i` of `seed`, so reports are reproducible.
pub fn run_suite(cases: &[GradCase], instances: usize, seed: u64, check: &Check) -> Result<SuiteReport> {
    let root = Rng::new(seed);
    let mut out = Vec::with_capacity(cases.len());
    for (ci, case) in cases.iter().enumerate() {
        let mut rng = root.fork(ci as u64);
        let mut worst: Option<GradCheck> = None;
        for _ in 0..instances {
            let r = (case.run)(&mut rng, check)?;
            if worst.as_ref().is_none_or(|w| r.max_rel_err > w.max_rel_err) {
                worst = Some(r);
            }
        }
        let worst = worst.unwrap_or(GradCheck {
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            floor: check.floor,
            worst_param: String::new(),
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            coords_checked: 0,
        });
        out.push(CaseReport {
            name: case.name.to_string(),
            instances,
            passed: worst.max_rel_err <= check.tolerance,
            worst,
        });
    }
    Ok(SuiteReport { check: *check, cases: out })
}

/// All layer and loss-graph cases.
pub fn standard_cases() -> Vec<GradCase> {
    vec![
        GradCase { name: "dense", run: dense_case },
        GradCase { name: "conv1d", run: conv1d_case },
        GradCase { name: "leaky_relu", run: leaky_case },
        GradCase { name: "softmax_cross_entropy", run: ce_case },
        GradCase { name: "classic_model", run: classic_case },
        GradCase { name: "generator_conv", run: |r, c| generator_case(r, c, NetArch::Conv) },
        GradCase { name: "generator_fc", run: |r, c| generator_case(r, c, NetArch::Fc) },
        GradCase { name: "critic_conv", run: |r, c| critic_case(r, c, NetArch::Conv) },
        GradCase { name: "critic_fc", run: |r, c| critic_case(r, c, NetArch::Fc) },
        GradCase { name: "loss_g_conv", run: |r, c| loss_g_case(r, c, NetArch::Conv) },
        GradCase { name: "loss_g_fc", run: |r, c| loss_g_case(r, c, NetArch::Fc) },
        GradCase { name: "loss_d_conv", run: |r, c| loss_d_case(r, c, NetArch::Conv) },
        GradCase { name: "loss_d_fc", run: |r, c| loss_d_case(r, c, NetArch::Fc) },
    ]
}

/// Draws instances until one keeps every pre-activation off the kink.
fn conditioned<T>(rng: &mut Rng, mut draw: impl FnMut(&mut Rng) -> Result<(T, f64)>) -> Result<T> {
    for _ in 0..10_000 {
        let (inst, margin) = draw(rng)?;
        if margin >= KINK_MARGIN {
            return Ok(inst);
        }
    }
    Err(Error::Internal("no gradient-check instance clear of activation kinks".into()))
}

/// A module plus a differentiable input.
struct WithInput<T> {
    net: T,
    input: Param,
}

impl<T: Module> Module for WithInput<T> {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.net.params();
        p.push(&self.input);
        p
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.net.params_mut();
        p.push(&mut self.input);
        p
    }
}

struct NoParams;

impl Module for NoParams {
    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

fn input(name: &str, shape: &[usize], rng: &mut Rng) -> Param {
    Param::new(name, Tensor::randn(shape, 1.0, rng))
}

/// Overwrites `p` with `N(0, std²)` draws.
fn randomize(p: &mut Param, std: f64, rng: &mut Rng) {
    p.value.data_mut().iter_mut().for_each(|v| *v = std * rng.normal());
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn add_into(p: &mut Param, g: &Tensor) {
    p.grad.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
}

fn dense_case(rng: &mut Rng, check: &Check) -> Result<GradCheck> {
    let mut m = WithInput {
        net: Dense::new("dense", 5, 4, 1.0, rng),
        input: input("dense.input", &[3, 5], rng),
    };
    randomize(&mut m.net.b, 0.5, rng);
    let r = Tensor::randn(&[3, 4], 1.0, rng);
    check.run(&mut m, |m| {
        let x = m.input.value.clone();
        let y = m.net.forward(&x)?;
        let dx = m.net.backward(&x, &r)?;
        add_into(&mut m.input, &dx);
        Ok(dot(&y, &r))
    })
}

fn conv1d_case(rng: &mut Rng, check: &Check) -> Result<GradCheck> {
    let ks = if rng.below(2) == 0 { 3 } else { 5 };
    let mut m = WithInput {
        net: Conv1d::new("conv1d", 2, 3, ks, 1.0, rng),
        input: input("conv1d.input", &[2, 2, 7], rng),
    };
    randomize(&mut m.net.b, 0.5, rng);
    let r = Tensor::randn(&[2, 3, 7], 1.0, rng);
    check.run(&mut m, |m| {
        let x = m.input.value.clone();
        let y = m.net.forward(&x)?;
        let dx = m.net.backward(&x, &r)?;
        add_into(&mut m.input, &dx);
        Ok(dot(&y, &r))
    })
}

fn leaky_case(rng: &mut Rng, check: &Check) -> Result<GradCheck> {
    let mut m = conditioned(rng, |rng| {
        let x = input("leaky_relu.input", &[4, 6], rng);
        let margin = x.value.data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        Ok((WithInput { net: NoParams, input: x }, margin))
    })?;
    let r = Tensor::randn(&[4, 6], 1.0, rng);
    check.run(&mut m, |m| {
        let x = m.input.value.clone();
        let y = leaky_relu(&x, LEAKY_SLOPE);
        let dx = leaky_relu_backward(&x, &r, LEAKY_SLOPE);
        add_into(&mut m.input, &dx);
        Ok(dot(&y, &r))
    })
}

fn ce_case(rng: &mut Rng, check: &Check) -> Result<GradCheck> {
    let mut m = WithInput {
        net: NoParams,
        input: Param::new("softmax_cross_entropy.input", Tensor::randn(&[7], 2.0, rng)),
    };
    let t = rng.below(7);
    check.run(&mut m, |m| {
        let (l, g) = cross_entropy(m.input.value.data(), t)?;
        m.input.grad.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        Ok(l)
    })
}

/// The classic model's graph (dense, leaky ReLU, dense, leaky ReLU, dense,
/// mean cross-entropy) at reduced width.
fn classic_case(rng: &mut Rng, check: &Check) -> Result<GradCheck> {
    let (d, k, n) = (6, 5, 4);
    let mut m = conditioned(rng, |rng| {
        let mut net = Mlp::new("classic", &[d, 8, 8, k], rng);
        for l in &mut net.layers {
            randomize(&mut l.b, 0.1, rng);
        }
        let x = input("classic.input", &[n, d], rng);
        let margin = net.forward_trace(&x.value)?.kink_margin();
        Ok((
            WithInput {
                net: ClassicModel::from_net(net),
                input: x,
            },
            margin,
        ))
    })?;
    let labels: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
    check.run(&mut m, |m| {
        let x = m.input.value.clone();
        let net = m.net.net_mut()?;
        let trace = net.forward_trace(&x)?;
        let mut loss = 0.0;
        let mut dz = Vec::new();
        for (row, &t) in trace.output().rows().zip(&labels) {
            let (l, g) = cross_entropy(row, t)?;
            loss += l / n as f64;
            dz.extend(g.into_iter().map(|v| v / n as f64));
        }
        let dx = net.backward(&trace, &Tensor::new(vec![n, k], dz)?)?;
        add_into(&mut m.input, &dx);
        Ok(loss)
    })
}

fn small_shape(arch: NetArch) -> NetShape {
    NetShape {
        arch,
        channels: 4,
        fc_width: 8,
        ..NetShape::default()
    }
}

/// Generator with every layer randomized, so the zero-initialized output
/// layer does not hide upstream gradients.
fn random_generator(arch: NetArch, ctx_dim: usize, m: usize, rng: &mut Rng) -> Result<Generator> {
    let mut g = Generator::new(&small_shape(arch), ctx_dim, m, rng)?;
    for p in g.params_mut() {
        let fan_in = p.shape().iter().skip(1).product::<usize>().max(1);
        let std = if p.shape().len() == 2 {
            1.0 / (p.shape()[0] as f64).sqrt()
        } else {
            1.0 / (fan_in as f64).sqrt()
        };
        randomize(p, std, rng);
    }
    Ok(g)
}

fn random_critic(arch: NetArch, m: usize, rng: &mut Rng) -> Result<Critic> {
    let mut d = Critic::new(&small_shape(arch), m, rng)?;
    for p in d.params_mut() {
        if p.name.ends_with(".b") {
            randomize(p, 0.1, rng);
        }
    }
    Ok(d)
}

struct GenInstance {
    md: WithInput<Generator>,
    ctx: Tensor,
    b_glo: Vec<f64>,
}

fn generator_instance(rng: &mut Rng, arch: NetArch, n: usize, ctx_dim: usize, m: usize) -> Result<GenInstance> {
    conditioned(rng, |rng| {
        let g = random_generator(arch, ctx_dim, m, rng)?;
        let z = input("generator.z", &[n, m], rng);
        let ctx = Tensor::randn(&[n, ctx_dim], 1.0, rng);
        let b_glo: Vec<f64> = (0..m).map(|_| rng.normal()).collect();
        let margin = g.forward_trace(&ctx, &b_glo, &z.value)?.kink_margin();
        Ok((
            GenInstance {
                md: WithInput { net: g, input: z },
                ctx,
                b_glo,
            },
            margin,
        ))
    })
}

fn generator_case(rng: &mut Rng, check: &Check, arch: NetArch) -> Result<GradCheck> {
    let (n, ctx_dim, m) = (2, 4, 6);
    let GenInstance { mut md, ctx, b_glo } = generator_instance(rng, arch, n, ctx_dim, m)?;
    let r = Tensor::randn(&[n, m], 1.0, rng);
    check.run(&mut md, |md| {
        let trace = md.net.forward_trace(&ctx, &b_glo, &md.input.value)?;
        let y = trace.output().clone().reshape(vec![n, m])?;
        let dz = md.net.backward(&trace, &r)?;
        add_into(&mut md.input, &dz);
        Ok(dot(&y, &r))
    })
}

fn critic_case(rng: &mut Rng, check: &Check, arch: NetArch) -> Result<GradCheck> {
    let (n, m) = (3, 6);
    let mut md = conditioned(rng, |rng| {
        let d = random_critic(arch, m, rng)?;
        let b = input("critic.input", &[n, m], rng);
        let margin = d.forward_trace(&b.value)?.kink_margin();
        Ok((WithInput { net: d, input: b }, margin))
    })?;
    let r: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    check.run(&mut md, |md| {
        let trace = md.net.forward_trace(&md.input.value)?;
        let s = md.net.scores_of(&trace);
        let db = md.net.backward(&trace, &r)?;
        add_into(&mut md.input, &db);
        Ok(s.iter().zip(&r).map(|(a, b)| a * b).sum())
    })
}

/// Generator parameters under the full generator objective, with the
/// critic held fixed.
struct GenGraph {
    g: Generator,
    d: Critic,
}

impl Module for GenGraph {
    fn params(&self) -> Vec<&Param> {
        self.g.params()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.g.params_mut()
    }
}

fn loss_g_case(rng: &mut Rng, check: &Check, arch: NetArch) -> Result<GradCheck> {
    let (n, ctx_dim, m) = (3, 4, 6);
    let (mut md, ctx, z, b_glo) = conditioned(rng, |rng| {
        let g = random_generator(arch, ctx_dim, m, rng)?;
        let d = random_critic(arch, m, rng)?;
        let ctx = Tensor::randn(&[n, ctx_dim], 1.0, rng);
        let z = Tensor::randn(&[n, m], 1.0, rng);
        let b_glo: Vec<f64> = (0..m).map(|_| rng.normal()).collect();
        let gt = g.forward_trace(&ctx, &b_glo, &z)?;
        let b = gt.output().clone().reshape(vec![n, m])?;
        let margin = gt.kink_margin().min(d.forward_trace(&b)?.kink_margin());
        Ok(((GenGraph { g, d }, ctx, z, b_glo), margin))
    })?;
    let labels: Vec<usize> = (0..n).map(|_| rng.below(m)).collect();
    let alpha = 0.05 + 0.1 * rng.uniform();
    check.run(&mut md, |md| {
        let trace = md.g.forward_trace(&ctx, &b_glo, &z)?;
        let b = trace.output().clone().reshape(vec![n, m])?;
        let dtr = md.d.forward_trace(&b)?;
        let scores = md.d.scores_of(&dtr);
        let z_hat: Vec<Vec<f64>> = z
            .rows()
            .zip(b.rows())
            .map(|(a, c)| a.iter().zip(c).map(|(x, y)| x + y).collect())
            .collect();
        let l = loss_g(&scores, &z_hat, &labels, alpha)?;
        let mut d_b = md.d.backward(&dtr, &l.d_scores)?;
        md.d.zero_grad();
        for (row, g) in d_b.data_mut().chunks_mut(m).zip(&l.d_z_hat) {
            row.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        md.g.backward(&trace, &d_b)?;
        Ok(l.value)
    })
}

/// Critic parameters under the critic objective, generator fixed.
struct CriticGraph {
    d: Critic,
}

impl Module for CriticGraph {
    fn params(&self) -> Vec<&Param> {
        self.d.params()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.d.params_mut()
    }
}

fn loss_d_case(rng: &mut Rng, check: &Check, arch: NetArch) -> Result<GradCheck> {
    let (n, ctx_dim, m) = (3, 4, 6);
    let (mut md, b_tru, b_pre) = conditioned(rng, |rng| {
        let g = random_generator(arch, ctx_dim, m, rng)?;
        let d = random_critic(arch, m, rng)?;
        let ctx = Tensor::randn(&[n, ctx_dim], 1.0, rng);
        let z = Tensor::randn(&[n, m], 1.0, rng);
        let b_glo: Vec<f64> = (0..m).map(|_| rng.normal()).collect();
        let b_pre = g.forward_batch(&ctx, &b_glo, &z)?;
        let b_tru = Tensor::randn(&[n, m], 2.0, rng);
        let margin = d
            .forward_trace(&b_tru)?
            .kink_margin()
            .min(d.forward_trace(&b_pre)?.kink_margin());
        Ok(((CriticGraph { d }, b_tru, b_pre), margin))
    })?;
    check.run(&mut md, |md| {
        let tr_s = md.d.forward_trace(&b_tru)?;
        let tr_g = md.d.forward_trace(&b_pre)?;
        let l = loss_d(&md.d.scores_of(&tr_s), &md.d.scores_of(&tr_g))?;
        md.d.backward(&tr_s, &l.d_scores_s)?;
        md.d.backward(&tr_g, &l.d_scores_g)?;
        Ok(l.value)
    })
}
