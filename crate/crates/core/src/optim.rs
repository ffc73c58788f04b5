//! SGD, RMSProp and weight clipping over parameter lists.
//!
//! Every step validates the whole parameter list before mutating anything:
//! frozen parameters are rejected, and non-finite gradients or updates
//! abort with [`Error::Divergence`] leaving values untouched.

use crate::error::{ensure, Error, Result};
use crate::tensor::Param;

fn check_trainable(params: &[&mut Param]) -> Result<()> {
    if let Some(p) = params.iter().find(|p| p.frozen) {
        return Err(Error::FreezeViolation(format!(
            "optimizer step on frozen parameter `{}`",
            p.name
        )));
    }
    if let Some(p) = params.iter().find(|p| !p.grad.is_finite()) {
        return Err(Error::Divergence(format!("non-finite gradient in `{}`", p.name)));
    }
    Ok(())
}

/// `value -= lr * grad`, then zero the gradients.
pub fn sgd_step(params: &mut [&mut Param], lr: f64) -> Result<()> {
    check_trainable(params)?;
    for p in params.iter_mut() {
        let Param { value, grad, .. } = &mut **p;
        for (v, g) in value.data_mut().iter_mut().zip(grad.data()) {
            *v -= lr * g;
        }
        grad.fill(0.0);
    }
    Ok(())
}

/// `v = decay·v + (1-decay)·g²; value -= lr·g / (sqrt(v) + eps)`, then zero grads.
pub fn rmsprop_step(params: &mut [&mut Param], lr: f64, decay: f64, eps: f64) -> Result<()> {
    ensure!(decay > 0.0 && decay < 1.0, "rmsprop decay {decay} outside (0, 1)");
    check_trainable(params)?;
    // compute every update first so a divergent one leaves all params intact
    let mut staged = Vec::with_capacity(params.len());
    for p in params.iter() {
        let mut sq = p.sq_avg.clone();
        let mut upd = Vec::with_capacity(p.value.len());
        for (s, &g) in sq.data_mut().iter_mut().zip(p.grad.data()) {
            *s = decay * *s + (1.0 - decay) * g * g;
            let denom = s.sqrt() + eps;
            upd.push(if g == 0.0 { 0.0 } else { lr * g / denom });
        }
        if upd.iter().any(|u| !u.is_finite()) {
            return Err(Error::Divergence(format!("non-finite RMSProp update in `{}`", p.name)));
        }
        staged.push((sq, upd));
    }
    for (p, (sq, upd)) in params.iter_mut().zip(staged) {
        for (v, u) in p.value.data_mut().iter_mut().zip(upd) {
            *v -= u;
        }
        p.sq_avg = sq;
        p.grad.fill(0.0);
    }
    Ok(())
}

/// Clamp every value into `[-c, c]`.
pub fn clip_params(params: &mut [&mut Param], c: f64) {
    debug_assert!(c > 0.0);
    for p in params.iter_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v = v.clamp(-c, c));
    }
}

/// Learning-rate schedule applied once per training iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Linear decay from the initial rate to zero over the run.
    LinearDecay,
}

impl LrSchedule {
    /// Rate to use after `done` of `total` iterations have completed.
    pub fn rate(self, initial: f64, done: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => initial,
            LrSchedule::LinearDecay if total == 0 => initial,
            LrSchedule::LinearDecay => initial * (1.0 - done.min(total) as f64 / total as f64),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar(v: f64, g: f64) -> Param {
        let mut p = Param::new("w", Tensor::new(vec![1], vec![v]).unwrap());
        p.grad.data_mut()[0] = g;
        p
    }

    #[test]
    fn sgd_examples() {
        let mut p = scalar(1.0, 1.0);
        sgd_step(&mut [&mut p], 0.1).unwrap();
        assert!((p.value.data()[0] - 0.9).abs() < 1e-15);
        assert_eq!(p.grad.data(), &[0.0]);

        let mut p = scalar(1.0, 0.0);
        sgd_step(&mut [&mut p], 0.1).unwrap();
        assert_eq!(p.value.data(), &[1.0]);
    }

    #[test]
    fn sgd_on_square_hand_trace() {
        // f(w) = w^2, grad 2w; lr 0.5 jumps to the minimum in one step
        let mut p = scalar(1.0, 0.0);
        let mut trace = vec![];
        for _ in 0..2 {
            let w = p.value.data()[0];
            p.grad.data_mut()[0] = 2.0 * w;
            sgd_step(&mut [&mut p], 0.5).unwrap();
            trace.push(p.value.data()[0]);
        }
        assert_eq!(trace, vec![0.0, 0.0]);
    }

    #[test]
    fn rmsprop_examples() {
        let mut p = scalar(1.0, 0.0);
        p.sq_avg.data_mut()[0] = 4.0;
        rmsprop_step(&mut [&mut p], 0.01, 0.9, 1e-8).unwrap();
        assert_eq!(p.value.data(), &[1.0]);
        assert!((p.sq_avg.data()[0] - 3.6).abs() < 1e-15);

        // v = 0.1, step = 0.01 / sqrt(0.1) = 0.0316227766...
        let mut p = scalar(0.0, 1.0);
        rmsprop_step(&mut [&mut p], 0.01, 0.9, 0.0).unwrap();
        assert!((p.value.data()[0] + 0.01 / 0.1f64.sqrt()).abs() < 1e-15);
        assert!((p.value.data()[0] + 0.031623).abs() < 1e-6);
        assert_eq!(p.grad.data(), &[0.0]);

        let mut a = scalar(0.0, 0.3);
        let mut b = scalar(0.0, 0.6);
        rmsprop_step(&mut [&mut a], 0.01, 0.9, 0.0).unwrap();
        rmsprop_step(&mut [&mut b], 0.01, 0.9, 0.0).unwrap();
        assert!((a.value.data()[0] - b.value.data()[0]).abs() < 1e-15);
    }

    #[test]
    fn frozen_and_divergent_steps_are_rejected() {
        let mut p = scalar(1.0, 1.0);
        p.frozen = true;
        assert!(matches!(sgd_step(&mut [&mut p], 0.1), Err(Error::FreezeViolation(_))));
        assert!(matches!(
            rmsprop_step(&mut [&mut p], 0.1, 0.9, 1e-8),
            Err(Error::FreezeViolation(_))
        ));
        assert_eq!(p.value.data(), &[1.0]);

        let mut p = scalar(1.0, f64::NAN);
        assert!(matches!(sgd_step(&mut [&mut p], 0.1), Err(Error::Divergence(_))));
        assert_eq!(p.value.data(), &[1.0]);
    }

    #[test]
    fn clip_examples() {
        let mut p = Param::new("w", Tensor::new(vec![2], vec![0.5, -0.02]).unwrap());
        clip_params(&mut [&mut p], 0.01);
        assert_eq!(p.value.data(), &[0.01, -0.01]);

        let mut p = Param::new("w", Tensor::new(vec![2], vec![0.005, -0.01]).unwrap());
        clip_params(&mut [&mut p], 0.01);
        assert_eq!(p.value.data(), &[0.005, -0.01]);

        let mut rng = crate::rng::Rng::new(9);
        let mut p = Param::new("w", Tensor::randn(&[1000], 1.0, &mut rng));
        clip_params(&mut [&mut p], 0.01);
        let max = p.value.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert_eq!(max, 0.01);
    }

    #[test]
    fn linear_decay_reaches_zero() {
        let s = LrSchedule::LinearDecay;
        assert_eq!(s.rate(1.0, 0, 4), 1.0);
        assert_eq!(s.rate(1.0, 2, 4), 0.5);
        assert_eq!(s.rate(1.0, 4, 4), 0.0);
        assert_eq!(LrSchedule::Constant.rate(0.3, 10, 4), 0.3);
    }
}
