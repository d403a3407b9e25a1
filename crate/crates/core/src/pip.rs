//! Purchase intent perception: a per-behavior position mixer over each
//! recent auxiliary subsequence, one feature mixer shared by all of them, and
//! a mean over the final positions.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hip::{
    fcb_core_backward, fcb_core_forward, token_mix_backward, token_mix_forward, FcbCache, FcbWeights,
    TokenMixCache, TokenMixWeights,
};
use crate::numerics::Tensor;

/// Behavioral switches of the intent tower.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipOptions {
    /// Add the input back after each position mixer. Off by default: the
    /// stacked mixer output feeds the feature mixer directly.
    pub scb_residual: bool,
    /// Leave fully padded behaviors out of the final mean.
    pub exclude_padded: bool,
}

/// `mixes[j]` belongs to auxiliary behavior `j`; `None` marks an ablated
/// sub-block.
#[derive(Debug, Clone, PartialEq)]
pub struct PipBlock {
    pub mixes: Option<Vec<TokenMixWeights>>,
    pub fcb: Option<FcbWeights>,
}
visit_fields!(PipBlock { mixes, fcb });

#[derive(Debug, Clone, PartialEq)]
pub struct PipParams {
    pub blocks: Vec<PipBlock>,
}
visit_fields!(PipParams { blocks });

impl PipParams {
    pub fn zeros_like(&self) -> Self {
        PipParams {
            blocks: self
                .blocks
                .iter()
                .map(|b| PipBlock {
                    mixes: b
                        .mixes
                        .as_ref()
                        .map(|v| v.iter().map(TokenMixWeights::zeros_like).collect()),
                    fcb: b.fcb.as_ref().map(FcbWeights::zeros_like),
                })
                .collect(),
        }
    }
}

/// Splits an `L' × m × 2d` tensor into `m` matrices of `L' × 2d`.
pub fn to_slices(h: &Tensor) -> Result<Vec<Tensor>> {
    let [len, m, w] = match *h.shape() {
        [a, b, c] => [a, b, c],
        _ => return Err(Error::shape("aux tensor", h.shape(), &[0, 0, 0])),
    };
    Ok((0..m)
        .map(|j| {
            let mut s = Tensor::zeros(&[len, w]);
            for t in 0..len {
                let off = (t * m + j) * w;
                s.row_mut(t).copy_from_slice(&h.data()[off..off + w]);
            }
            s
        })
        .collect())
}

/// Inverse of [`to_slices`].
pub fn from_slices(slices: &[Tensor]) -> Tensor {
    let m = slices.len();
    let (len, w) = slices.first().map_or((0, 0), |s| (s.rows(), s.cols()));
    let mut h = Tensor::zeros(&[len, m, w]);
    for (j, s) in slices.iter().enumerate() {
        for t in 0..len {
            let off = (t * m + j) * w;
            h.data_mut()[off..off + w].copy_from_slice(s.row(t));
        }
    }
    h
}

fn stack_rows(slices: &[Tensor]) -> Tensor {
    let len = slices[0].rows();
    let w = slices[0].cols();
    let mut data = Vec::with_capacity(slices.len() * len * w);
    for s in slices {
        data.extend_from_slice(s.data());
    }
    Tensor::from_vec(&[slices.len() * len, w], data).expect("uniform slices")
}

fn unstack_rows(t: &Tensor, m: usize) -> Vec<Tensor> {
    let len = t.rows() / m;
    let w = t.cols();
    (0..m)
        .map(|j| {
            Tensor::from_vec(&[len, w], t.data()[j * len * w..(j + 1) * len * w].to_vec())
                .expect("uniform slices")
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PipBlockCache {
    mixes: Option<Vec<TokenMixCache>>,
    fcb: Option<FcbCache>,
}

/// One block over per-behavior slices: `H + FCB(LayerNorm(stack_j(mix_j(H_j))))`.
pub fn pip_block_forward(
    h: &[Tensor],
    w: &PipBlock,
    opts: PipOptions,
) -> Result<(Vec<Tensor>, PipBlockCache)> {
    let (mixed, mixes) = match &w.mixes {
        Some(ws) => {
            if ws.len() != h.len() {
                return Err(Error::shape("pip behaviors", &[h.len()], &[ws.len()]));
            }
            let mut out = Vec::with_capacity(h.len());
            let mut caches = Vec::with_capacity(h.len());
            for (hj, wj) in h.iter().zip(ws) {
                let (mut s, c) = token_mix_forward(hj, wj)?;
                if opts.scb_residual {
                    s.add_assign(hj)?;
                }
                out.push(s);
                caches.push(c);
            }
            (out, Some(caches))
        }
        None => (h.to_vec(), None),
    };
    match &w.fcb {
        Some(fw) => {
            let (c, cache) = fcb_core_forward(&stack_rows(&mixed), fw)?;
            let parts = unstack_rows(&c, h.len());
            let out = h
                .iter()
                .zip(parts)
                .map(|(hj, cj)| hj.add(&cj))
                .collect::<Result<Vec<_>>>()?;
            Ok((
                out,
                PipBlockCache {
                    mixes,
                    fcb: Some(cache),
                },
            ))
        }
        None => Ok((mixed, PipBlockCache { mixes, fcb: None })),
    }
}

/// Returns `(dH, grads)` for [`pip_block_forward`].
pub fn pip_block_backward(
    dout: &[Tensor],
    cache: &PipBlockCache,
    w: &PipBlock,
    opts: PipOptions,
) -> Result<(Vec<Tensor>, PipBlock)> {
    let m = dout.len();
    let (mut dh, dmixed, fcb_grads) = match (&w.fcb, &cache.fcb) {
        (Some(fw), Some(fc)) => {
            let (ds, g) = fcb_core_backward(&stack_rows(dout), fc, fw)?;
            (dout.to_vec(), unstack_rows(&ds, m), Some(g))
        }
        _ => (
            dout.iter().map(Tensor::zeros_like).collect::<Vec<_>>(),
            dout.to_vec(),
            None,
        ),
    };
    let mix_grads = match (&w.mixes, &cache.mixes) {
        (Some(ws), Some(cs)) => {
            let mut grads = Vec::with_capacity(m);
            for j in 0..m {
                let (da, g) = token_mix_backward(&dmixed[j], &cs[j], &ws[j])?;
                dh[j].add_assign(&da)?;
                if opts.scb_residual {
                    dh[j].add_assign(&dmixed[j])?;
                }
                grads.push(g);
            }
            Some(grads)
        }
        _ => {
            for j in 0..m {
                dh[j].add_assign(&dmixed[j])?;
            }
            None
        }
    };
    Ok((
        dh,
        PipBlock {
            mixes: mix_grads,
            fcb: fcb_grads,
        },
    ))
}

/// Tensor-level form of [`pip_block_forward`] on `L' × m × 2d` input.
pub fn pip_block(h: &Tensor, w: &PipBlock, opts: PipOptions) -> Result<Tensor> {
    let (out, _) = pip_block_forward(&to_slices(h)?, w, opts)?;
    Ok(from_slices(&out))
}

fn included(masks: &[Vec<bool>], exclude_padded: bool) -> Vec<bool> {
    masks
        .iter()
        .map(|m| !exclude_padded || m.iter().any(|&b| b))
        .collect()
}

/// Mean of the final-position rows over the behaviors.
pub fn pip_intent(slices: &[Tensor], masks: &[Vec<bool>], exclude_padded: bool) -> Tensor {
    let w = slices.first().map_or(0, Tensor::cols);
    let keep = included(masks, exclude_padded);
    let count = keep.iter().filter(|&&k| k).count();
    let mut e = Tensor::zeros(&[1, w]);
    if count == 0 {
        return e;
    }
    for (s, &k) in slices.iter().zip(&keep) {
        if !k {
            continue;
        }
        for (o, v) in e.data_mut().iter_mut().zip(s.row(s.rows() - 1)) {
            *o += v;
        }
    }
    e.scale(1.0 / count as f64);
    e
}

#[derive(Debug, Clone)]
pub struct PipCache {
    blocks: Vec<PipBlockCache>,
    keep: Vec<bool>,
    len: usize,
    width: usize,
}

/// Runs the stacked blocks over `h0` (`L' × m × 2d`) and returns `e_l`.
pub fn pip_forward(
    h0: &Tensor,
    params: &PipParams,
    masks: &[Vec<bool>],
    opts: PipOptions,
) -> Result<(Tensor, PipCache)> {
    if params.blocks.is_empty() {
        return Err(Error::Config("at least one block is required".into()));
    }
    let mut h = to_slices(h0)?;
    if masks.len() != h.len() {
        return Err(Error::shape("pip masks", &[h.len()], &[masks.len()]));
    }
    let mut blocks = Vec::with_capacity(params.blocks.len());
    for b in &params.blocks {
        let (next, c) = pip_block_forward(&h, b, opts)?;
        h = next;
        blocks.push(c);
    }
    let e_l = pip_intent(&h, masks, opts.exclude_padded);
    let (len, width) = (h0.shape()[0], h0.shape()[2]);
    Ok((
        e_l,
        PipCache {
            blocks,
            keep: included(masks, opts.exclude_padded),
            len,
            width,
        },
    ))
}

/// Gradients of [`pip_forward`] w.r.t. its weights and `h0`.
pub fn pip_backward(
    grad_e_l: &Tensor,
    cache: &PipCache,
    params: &PipParams,
    opts: PipOptions,
) -> Result<(PipParams, Tensor)> {
    let count = cache.keep.iter().filter(|&&k| k).count();
    let mut dh: Vec<Tensor> = cache
        .keep
        .iter()
        .map(|&k| {
            let mut s = Tensor::zeros(&[cache.len, cache.width]);
            if k {
                let scale = 1.0 / count as f64;
                for (o, g) in s.row_mut(cache.len - 1).iter_mut().zip(grad_e_l.data()) {
                    *o = g * scale;
                }
            }
            s
        })
        .collect();
    let mut grads = params.zeros_like();
    for (n, b) in params.blocks.iter().enumerate().rev() {
        let (d, g) = pip_block_backward(&dh, &cache.blocks[n], b, opts)?;
        dh = d;
        grads.blocks[n] = g;
    }
    Ok((grads, from_slices(&dh)))
}
