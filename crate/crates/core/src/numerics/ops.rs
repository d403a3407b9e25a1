use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{RngStream, Tensor};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Whether stochastic layers are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    Sigmoid,
}

/// `X·W (+ b)`; `b` is broadcast over rows.
pub fn dense(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let mut y = x.matmul(w)?;
    if let Some(b) = b {
        if b.len() != y.cols() {
            return Err(Error::shape("dense bias", y.shape(), b.shape()));
        }
        for i in 0..y.rows() {
            for (v, bj) in y.row_mut(i).iter_mut().zip(b.data()) {
                *v += bj;
            }
        }
    }
    Ok(y)
}

/// Gradients of [`dense`]: returns `(dX, dW, db)`.
pub fn dense_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let dx = dy.matmul_t(w)?;
    let dw = x.t_matmul(dy)?;
    Ok((dx, dw, dy.sum_rows()))
}

/// Exact GELU, `0.5·x·(1 + erf(x/√2))`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * core::f64::consts::FRAC_1_SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * core::f64::consts::FRAC_1_SQRT_2));
    cdf + x * FRAC_1_SQRT_2PI * libm::exp(-0.5 * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub fn activation(kind: Activation, x: &Tensor) -> Tensor {
    match kind {
        Activation::Gelu => x.map(gelu),
        Activation::Sigmoid => x.map(sigmoid),
    }
}

/// Saved statistics for [`layer_norm_backward`].
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
}

pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Tensor {
    layer_norm_with_cache(x, gamma, beta, eps).0
}

/// Row-wise layer normalization over the last axis.
pub fn layer_norm_with_cache(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> (Tensor, LayerNormCache) {
    let (r, c) = (x.rows(), x.cols());
    let mut normalized = Tensor::zeros(&[r, c]);
    let mut out = Tensor::zeros(&[r, c]);
    let mut inv_std = Vec::with_capacity(r);
    for i in 0..r {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let s = 1.0 / libm::sqrt(var + eps);
        inv_std.push(s);
        let nrow = normalized.row_mut(i);
        for (n, v) in nrow.iter_mut().zip(row) {
            *n = (v - mean) * s;
        }
        let nrow = normalized.row(i);
        for (j, o) in out.row_mut(i).iter_mut().enumerate() {
            *o = nrow[j] * gamma.data()[j] + beta.data()[j];
        }
    }
    (
        out,
        LayerNormCache {
            normalized,
            inv_std,
        },
    )
}

/// Returns `(dX, dgamma, dbeta)`.
pub fn layer_norm_backward(
    dy: &Tensor,
    cache: &LayerNormCache,
    gamma: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (r, c) = (dy.rows(), dy.cols());
    let mut dx = Tensor::zeros(&[r, c]);
    let mut dgamma = Tensor::zeros(&[1, c]);
    let mut dbeta = Tensor::zeros(&[1, c]);
    let g = gamma.data();
    for i in 0..r {
        let dyr = dy.row(i);
        let xh = cache.normalized.row(i);
        let mut sum_d = 0.0;
        let mut sum_dx = 0.0;
        for j in 0..c {
            dgamma.data_mut()[j] += dyr[j] * xh[j];
            dbeta.data_mut()[j] += dyr[j];
            let dxh = dyr[j] * g[j];
            sum_d += dxh;
            sum_dx += dxh * xh[j];
        }
        let s = cache.inv_std[i];
        let n = c as f64;
        for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
            let dxh = dyr[j] * g[j];
            *o = s / n * (n * dxh - sum_d - xh[j] * sum_dx);
        }
    }
    (dx, dgamma, dbeta)
}

pub(crate) fn softmax_slice(v: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>> {
    let live = |i: usize| mask.is_none_or(|m| m[i]);
    let max = (0..v.len())
        .filter(|&i| live(i))
        .map(|i| v[i])
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::InvalidMask);
    }
    let mut out: Vec<f64> = (0..v.len())
        .map(|i| if live(i) { libm::exp(v[i] - max) } else { 0.0 })
        .collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= z);
    Ok(out)
}

/// Softmax over all entries of `v`; masked entries (mask = false) are
/// excluded and come out exactly zero.
pub fn softmax(v: &Tensor, mask: Option<&[bool]>) -> Result<Tensor> {
    if let Some(m) = mask {
        if m.len() != v.len() {
            return Err(Error::shape("softmax mask", v.shape(), &[m.len()]));
        }
    }
    Tensor::from_vec(v.shape(), softmax_slice(v.data(), mask)?)
}

/// Vector-Jacobian product of softmax: `p ⊙ (dp − ⟨p, dp⟩)`.
pub fn softmax_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
    p.iter().zip(dp).map(|(pi, di)| pi * (di - dot)).collect()
}

/// Per-entry multipliers drawn by a train-mode [`dropout`] call.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask(pub Option<Vec<f64>>);

impl DropoutMask {
    pub fn apply(&self, x: &Tensor) -> Tensor {
        match &self.0 {
            None => x.clone(),
            Some(m) => {
                let data = x.data().iter().zip(m).map(|(a, b)| a * b).collect();
                Tensor::from_vec(x.shape(), data).expect("mask matches input")
            }
        }
    }
}

/// Inverted dropout: survivors are scaled by `1/(1-rate)` at train time so
/// evaluation is the identity.
pub fn dropout(x: &Tensor, rate: f64, mode: Mode, rng: &mut RngStream) -> (Tensor, DropoutMask) {
    if mode == Mode::Eval || rate <= 0.0 {
        return (x.clone(), DropoutMask(None));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..x.len())
        .map(|_| if rng.next_f64() < rate { 0.0 } else { keep })
        .collect();
    let mask = DropoutMask(Some(mask));
    (mask.apply(x), mask)
}
