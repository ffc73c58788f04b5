//! Dense and 1-D convolution layers with explicit backward passes.
//!
//! Forward functions are pure; callers keep whatever inputs they need for the
//! backward pass. Backward functions accumulate into `Param::grad` and return
//! the gradient with respect to the layer input.

use crate::error::{ensure, Result};
use crate::rng::Rng;
use crate::tensor::{Module, Param, Tensor};

/// Default negative slope for hidden activations.
pub const LEAKY_SLOPE: f64 = 0.2;

/// `y = x·w + b` for `x: [batch, in]`, `w: [in, out]`, `b: [out]`.
pub fn dense_forward(x: &Tensor, w: &Param, b: &Param) -> Result<Tensor> {
    let (batch, _, fan_out) = dense_dims(x, w, b)?;
    let wd = w.value.data();
    let mut out = Vec::with_capacity(batch * fan_out);
    for row in x.rows() {
        let mut y = b.value.data().to_vec();
        for (i, &xi) in row.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let wr = &wd[i * fan_out..(i + 1) * fan_out];
            for (yj, &wij) in y.iter_mut().zip(wr) {
                *yj += xi * wij;
            }
        }
        out.extend(y);
    }
    Tensor::new(vec![batch, fan_out], out)
}

/// Accumulates `dw += xᵀ·dy`, `db += Σ dy` and returns `dx = dy·wᵀ`.
pub fn dense_backward(x: &Tensor, dy: &Tensor, w: &mut Param, b: &mut Param) -> Result<Tensor> {
    let (batch, fan_in, fan_out) = dense_dims(x, w, b)?;
    ensure!(
        dy.shape() == [batch, fan_out],
        "dense backward: dy shape {:?}, expected [{batch}, {fan_out}]",
        dy.shape()
    );
    let mut dx = vec![0.0; batch * fan_in];
    {
        let wd = w.value.data();
        let gw = w.grad.data_mut();
        for n in 0..batch {
            let xr = x.row_slice(n);
            let dyr = dy.row_slice(n);
            let dxr = &mut dx[n * fan_in..(n + 1) * fan_in];
            for i in 0..fan_in {
                let wr = &wd[i * fan_out..(i + 1) * fan_out];
                let gr = &mut gw[i * fan_out..(i + 1) * fan_out];
                let mut acc = 0.0;
                for j in 0..fan_out {
                    gr[j] += xr[i] * dyr[j];
                    acc += dyr[j] * wr[j];
                }
                dxr[i] = acc;
            }
        }
    }
    let gb = b.grad.data_mut();
    for dyr in dy.rows() {
        for (g, &d) in gb.iter_mut().zip(dyr) {
            *g += d;
        }
    }
    Tensor::new(vec![batch, fan_in], dx)
}

fn dense_dims(x: &Tensor, w: &Param, b: &Param) -> Result<(usize, usize, usize)> {
    ensure!(x.shape().len() == 2, "dense input must be [batch, in], got {:?}", x.shape());
    ensure!(w.shape().len() == 2, "dense weight must be [in, out], got {:?}", w.shape());
    let (batch, fan_in) = (x.shape()[0], x.shape()[1]);
    let (w_in, fan_out) = (w.shape()[0], w.shape()[1]);
    ensure!(
        fan_in == w_in,
        "dense `{}`: input width {fan_in} does not match weight rows {w_in}",
        w.name
    );
    ensure!(
        b.shape() == [fan_out],
        "dense `{}`: bias shape {:?}, expected [{fan_out}]",
        b.name,
        b.shape()
    );
    Ok((batch, fan_in, fan_out))
}

/// Stride-1, zero-padded, length-preserving cross-correlation.
///
/// `x: [batch, ch_in, len]`, `k: [ch_out, ch_in, ksize]`, `b: [ch_out]`;
/// `ksize` must be odd and the padding is `(ksize - 1) / 2` on each side.
pub fn conv1d_forward(x: &Tensor, k: &Param, b: &Param) -> Result<Tensor> {
    let d = conv_dims(x, k, b)?;
    let kd = k.value.data();
    let xd = x.data();
    let mut out = vec![0.0; d.batch * d.ch_out * d.len];
    for n in 0..d.batch {
        for o in 0..d.ch_out {
            let y = &mut out[(n * d.ch_out + o) * d.len..(n * d.ch_out + o + 1) * d.len];
            y.fill(b.value.data()[o]);
            for c in 0..d.ch_in {
                let xr = &xd[(n * d.ch_in + c) * d.len..(n * d.ch_in + c + 1) * d.len];
                let kr = &kd[(o * d.ch_in + c) * d.ksize..(o * d.ch_in + c + 1) * d.ksize];
                for (j, &kv) in kr.iter().enumerate() {
                    // y[t] += kv * x[t + j - pad] over the in-range window
                    let shift = j as isize - d.pad as isize;
                    let t0 = (-shift).max(0) as usize;
                    let t1 = (d.len as isize - shift).min(d.len as isize).max(0) as usize;
                    for t in t0..t1 {
                        y[t] += kv * xr[(t as isize + shift) as usize];
                    }
                }
            }
        }
    }
    Tensor::new(vec![d.batch, d.ch_out, d.len], out)
}

pub fn conv1d_backward(x: &Tensor, dy: &Tensor, k: &mut Param, b: &mut Param) -> Result<Tensor> {
    let d = conv_dims(x, k, b)?;
    ensure!(
        dy.shape() == [d.batch, d.ch_out, d.len],
        "conv1d backward: dy shape {:?}, expected [{}, {}, {}]",
        dy.shape(),
        d.batch,
        d.ch_out,
        d.len
    );
    let xd = x.data();
    let dyd = dy.data();
    let mut dx = vec![0.0; xd.len()];
    {
        let kd = k.value.data();
        let gk = k.grad.data_mut();
        for n in 0..d.batch {
            for o in 0..d.ch_out {
                let g = &dyd[(n * d.ch_out + o) * d.len..(n * d.ch_out + o + 1) * d.len];
                for c in 0..d.ch_in {
                    let base = (n * d.ch_in + c) * d.len;
                    let xr = &xd[base..base + d.len];
                    let koff = (o * d.ch_in + c) * d.ksize;
                    for j in 0..d.ksize {
                        let shift = j as isize - d.pad as isize;
                        let t0 = (-shift).max(0) as usize;
                        let t1 = (d.len as isize - shift).min(d.len as isize).max(0) as usize;
                        let kv = kd[koff + j];
                        let mut acc = 0.0;
                        for t in t0..t1 {
                            let s = (t as isize + shift) as usize;
                            acc += g[t] * xr[s];
                            dx[base + s] += g[t] * kv;
                        }
                        gk[koff + j] += acc;
                    }
                }
            }
        }
    }
    let gb = b.grad.data_mut();
    for n in 0..d.batch {
        for (o, g) in gb.iter_mut().enumerate() {
            *g += dyd[(n * d.ch_out + o) * d.len..(n * d.ch_out + o + 1) * d.len]
                .iter()
                .sum::<f64>();
        }
    }
    Tensor::new(x.shape().to_vec(), dx)
}

struct ConvDims {
    batch: usize,
    ch_in: usize,
    ch_out: usize,
    len: usize,
    ksize: usize,
    pad: usize,
}

fn conv_dims(x: &Tensor, k: &Param, b: &Param) -> Result<ConvDims> {
    ensure!(x.shape().len() == 3, "conv1d input must be [batch, ch, len], got {:?}", x.shape());
    ensure!(k.shape().len() == 3, "conv1d kernel must be [out, in, ksize], got {:?}", k.shape());
    let (ch_out, k_in, ksize) = (k.shape()[0], k.shape()[1], k.shape()[2]);
    ensure!(ksize % 2 == 1, "conv1d `{}`: kernel size {ksize} must be odd", k.name);
    ensure!(
        x.shape()[1] == k_in,
        "conv1d `{}`: input has {} channels, kernel expects {k_in}",
        k.name,
        x.shape()[1]
    );
    ensure!(
        b.shape() == [ch_out],
        "conv1d `{}`: bias shape {:?}, expected [{ch_out}]",
        b.name,
        b.shape()
    );
    Ok(ConvDims {
        batch: x.shape()[0],
        ch_in: k_in,
        ch_out,
        len: x.shape()[2],
        ksize,
        pad: (ksize - 1) / 2,
    })
}

/// Elementwise `max(x, slope·x)`.
pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    let mut y = x.clone();
    y.data_mut()
        .iter_mut()
        .for_each(|v| *v = if *v > 0.0 { *v } else { slope * *v });
    y
}

/// Gradient through [`leaky_relu`] given its pre-activation input.
pub fn leaky_relu_backward(x: &Tensor, dy: &Tensor, slope: f64) -> Tensor {
    let mut dx = dy.clone();
    dx.data_mut()
        .iter_mut()
        .zip(x.data())
        .for_each(|(g, &v)| {
            if v <= 0.0 {
                *g *= slope
            }
        });
    dx
}

/// Fully connected layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Param,
    pub b: Param,
}

impl Dense {
    /// He-style normal init scaled by `gain / sqrt(fan_in)`, zero bias.
    pub fn new(name: &str, fan_in: usize, fan_out: usize, gain: f64, rng: &mut Rng) -> Self {
        let std = gain / (fan_in as f64).sqrt();
        Self {
            w: Param::new(format!("{name}.w"), Tensor::randn(&[fan_in, fan_out], std, rng)),
            b: Param::zeros(format!("{name}.b"), &[fan_out]),
        }
    }

    pub fn zeros(name: &str, fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: Param::zeros(format!("{name}.w"), &[fan_in, fan_out]),
            b: Param::zeros(format!("{name}.b"), &[fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        dense_forward(x, &self.w, &self.b)
    }

    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Result<Tensor> {
        dense_backward(x, dy, &mut self.w, &mut self.b)
    }
}

impl Module for Dense {
    fn params(&self) -> Vec<&Param> {
        vec![&self.w, &self.b]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }
}

/// Length-preserving 1-D convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub k: Param,
    pub b: Param,
}

impl Conv1d {
    pub fn new(name: &str, ch_in: usize, ch_out: usize, ksize: usize, gain: f64, rng: &mut Rng) -> Self {
        let std = gain / ((ch_in * ksize) as f64).sqrt();
        Self {
            k: Param::new(format!("{name}.k"), Tensor::randn(&[ch_out, ch_in, ksize], std, rng)),
            b: Param::zeros(format!("{name}.b"), &[ch_out]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv1d_forward(x, &self.k, &self.b)
    }

    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Result<Tensor> {
        conv1d_backward(x, dy, &mut self.k, &mut self.b)
    }
}

impl Module for Conv1d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.k, &self.b]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.k, &mut self.b]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(name: &str, shape: &[usize], data: &[f64]) -> Param {
        Param::new(name, Tensor::new(shape.to_vec(), data.to_vec()).unwrap())
    }

    /// Plain triple loop, independent of the strided kernel above.
    fn naive_matmul(x: &[Vec<f64>], w: &[Vec<f64>]) -> Vec<Vec<f64>> {
        x.iter()
            .map(|row| {
                (0..w[0].len())
                    .map(|j| (0..row.len()).map(|i| row[i] * w[i][j]).sum())
                    .collect()
            })
            .collect()
    }

    /// Sliding window over an explicitly zero-padded copy of the signal.
    fn naive_conv(x: &[f64], k: &[f64], b: f64) -> Vec<f64> {
        let pad = (k.len() - 1) / 2;
        let mut padded = vec![0.0; pad];
        padded.extend_from_slice(x);
        padded.extend(vec![0.0; pad]);
        (0..x.len())
            .map(|t| b + (0..k.len()).map(|j| k[j] * padded[t + j]).sum::<f64>())
            .collect()
    }

    #[test]
    fn dense_identity_and_bias_passthrough() {
        let x = Tensor::row(&[1.0, 2.0]);
        let w = param("w", &[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let b = param("b", &[2], &[0.0, 0.0]);
        assert_eq!(dense_forward(&x, &w, &b).unwrap().data(), &[1.0, 2.0]);

        let x = Tensor::row(&[0.0, 0.0]);
        let w = param("w", &[2, 2], &[5.0, -1.0, 2.0, 7.0]);
        let b = param("b", &[2], &[3.0, 4.0]);
        assert_eq!(dense_forward(&x, &w, &b).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn dense_matches_naive_multiply() {
        let oracle = naive_matmul(&[vec![1.0, 1.0]], &[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(oracle, vec![vec![4.0, 6.0]]);
        let x = Tensor::row(&[1.0, 1.0]);
        let w = param("w", &[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = param("b", &[2], &[0.0, 0.0]);
        assert_eq!(dense_forward(&x, &w, &b).unwrap().data(), &[4.0, 6.0]);

        let mut rng = Rng::new(11);
        let xs: Vec<Vec<f64>> = (0..4).map(|_| (0..5).map(|_| rng.normal()).collect()).collect();
        let ws: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| rng.normal()).collect()).collect();
        let y = dense_forward(
            &Tensor::from_rows(&xs).unwrap(),
            &Param::new("w", Tensor::from_rows(&ws).unwrap()),
            &Param::zeros("b", &[3]),
        )
        .unwrap();
        for (got, want) in y.rows().zip(naive_matmul(&xs, &ws)) {
            for (g, w) in got.iter().zip(want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dense_rejects_shape_mismatch() {
        let x = Tensor::row(&[1.0, 2.0, 3.0]);
        let w = Param::zeros("w", &[2, 2]);
        let b = Param::zeros("b", &[2]);
        assert!(dense_forward(&x, &w, &b).is_err());
        let x = Tensor::row(&[1.0, 2.0]);
        assert!(dense_forward(&x, &w, &Param::zeros("b", &[3])).is_err());
    }

    #[test]
    fn conv_identity_kernels() {
        let x = Tensor::new(vec![1, 1, 4], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let b = Param::zeros("b", &[1]);
        let k1 = param("k", &[1, 1, 1], &[1.0]);
        assert_eq!(conv1d_forward(&x, &k1, &b).unwrap().data(), x.data());
        let k3 = param("k", &[1, 1, 3], &[0.0, 1.0, 0.0]);
        assert_eq!(conv1d_forward(&x, &k3, &b).unwrap().data(), x.data());
    }

    #[test]
    fn conv_box_kernel_matches_sliding_window() {
        let oracle = naive_conv(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0], 0.0);
        assert_eq!(oracle, vec![3.0, 6.0, 5.0]);
        let x = Tensor::new(vec![1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let k = param("k", &[1, 1, 3], &[1.0, 1.0, 1.0]);
        let y = conv1d_forward(&x, &k, &Param::zeros("b", &[1])).unwrap();
        assert_eq!(y.data(), &[3.0, 6.0, 5.0]);
    }

    #[test]
    fn conv_matches_naive_on_random_multichannel() {
        let mut rng = Rng::new(5);
        let (ch_in, ch_out, len, ks) = (3, 2, 7, 5);
        let x = Tensor::randn(&[2, ch_in, len], 1.0, &mut rng);
        let k = Param::new("k", Tensor::randn(&[ch_out, ch_in, ks], 1.0, &mut rng));
        let b = Param::new("b", Tensor::randn(&[ch_out], 1.0, &mut rng));
        let y = conv1d_forward(&x, &k, &b).unwrap();
        for n in 0..2 {
            for o in 0..ch_out {
                let mut want = vec![b.value.data()[o]; len];
                for c in 0..ch_in {
                    let xs = &x.data()[(n * ch_in + c) * len..(n * ch_in + c + 1) * len];
                    let ks_ = &k.value.data()[(o * ch_in + c) * ks..(o * ch_in + c + 1) * ks];
                    for (w, v) in want.iter_mut().zip(naive_conv(xs, ks_, 0.0)) {
                        *w += v;
                    }
                }
                let got = &y.data()[(n * ch_out + o) * len..(n * ch_out + o + 1) * len];
                for (g, w) in got.iter().zip(&want) {
                    assert!((g - w).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_rejects_even_kernel() {
        let x = Tensor::zeros(&[1, 1, 4]);
        let k = Param::zeros("k", &[1, 1, 2]);
        assert!(conv1d_forward(&x, &k, &Param::zeros("b", &[1])).is_err());
    }

    #[test]
    fn leaky_relu_definition() {
        let y = leaky_relu(&Tensor::row(&[1.0, -1.0]), 0.0);
        assert_eq!(y.data(), &[1.0, 0.0]);
        let y = leaky_relu(&Tensor::row(&[2.0, -2.0]), 0.2);
        assert_eq!(y.data(), &[2.0, -0.4]);
        for slope in [0.0, 0.2, 0.9] {
            assert_eq!(leaky_relu(&Tensor::row(&[0.0]), slope).data(), &[0.0]);
        }
    }
}
