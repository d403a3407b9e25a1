//! Heterogeneous interest perception: stacked sequence-capture and
//! feature-capture blocks over the full window, then attention pooling into
//! the global interest vector.
//!
//! The sequence-capture block (SCB) mixes along the position axis by
//! transposing its input; the feature-capture block (FCB) mixes along the
//! feature axis in `H` independent heads whose outputs are concatenated and
//! projected. Both are residual.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::{
    dropout, gelu, gelu_grad, layer_norm_backward, layer_norm_with_cache, sigmoid, softmax_backward,
    DropoutMask, LayerNormCache, Mode, RngStream, Tensor, LAYER_NORM_EPS,
};

pub(crate) fn init_uniform(shape: &[usize], fan_in: usize, rng: &mut RngStream) -> Tensor {
    let a = 1.0 / libm::sqrt(fan_in as f64);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.uniform(-a, a)).collect()).expect("sized")
}

/// Position-mixing MLP `GELU(Aᵀ·W1)·W2`, without normalization or residual.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMixWeights {
    /// `len × hidden`
    pub w1: Tensor,
    /// `hidden × len`
    pub w2: Tensor,
}
visit_fields!(TokenMixWeights { w1, w2 });

impl TokenMixWeights {
    pub fn init(len: usize, hidden: usize, rng: &mut RngStream) -> Self {
        TokenMixWeights {
            w1: init_uniform(&[len, hidden], len, rng),
            w2: init_uniform(&[hidden, len], hidden, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        TokenMixWeights {
            w1: self.w1.zeros_like(),
            w2: self.w2.zeros_like(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TokenMixCache {
    input_t: Tensor,
    pre: Tensor,
    act: Tensor,
}

fn mix_forward(a: &Tensor, w1: &Tensor, w2: &Tensor) -> Result<(Tensor, TokenMixCache)> {
    if a.rows() != w1.rows() {
        return Err(Error::shape("token mix", a.shape(), w1.shape()));
    }
    let input_t = a.transpose();
    let pre = input_t.matmul(w1)?;
    let act = pre.map(gelu);
    let out = act.matmul(w2)?.transpose();
    Ok((out, TokenMixCache { input_t, pre, act }))
}

fn mix_backward(
    dout: &Tensor,
    cache: &TokenMixCache,
    w1: &Tensor,
    w2: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let dr = dout.transpose();
    let dw2 = cache.act.t_matmul(&dr)?;
    let mut dp = dr.matmul_t(w2)?;
    for (g, &p) in dp.data_mut().iter_mut().zip(cache.pre.data()) {
        *g *= gelu_grad(p);
    }
    let dw1 = cache.input_t.t_matmul(&dp)?;
    let da_t = dp.matmul_t(w1)?;
    Ok((da_t.transpose(), dw1, dw2))
}

/// `(GELU(Aᵀ·W1)·W2)ᵀ` for `A: len × features`.
pub fn token_mix_forward(a: &Tensor, w: &TokenMixWeights) -> Result<(Tensor, TokenMixCache)> {
    mix_forward(a, &w.w1, &w.w2)
}

/// Returns `(dA, grads)`.
pub fn token_mix_backward(
    dout: &Tensor,
    cache: &TokenMixCache,
    w: &TokenMixWeights,
) -> Result<(Tensor, TokenMixWeights)> {
    let (da, w1, w2) = mix_backward(dout, cache, &w.w1, &w.w2)?;
    Ok((da, TokenMixWeights { w1, w2 }))
}

/// Sequence capture block weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ScbWeights {
    /// `L × d_t`
    pub w1: Tensor,
    /// `d_t × L`
    pub w2: Tensor,
    pub ln_gamma: Tensor,
    pub ln_beta: Tensor,
}
visit_fields!(ScbWeights { w1, w2, ln_gamma, ln_beta });

impl ScbWeights {
    pub fn init(len: usize, hidden: usize, width: usize, rng: &mut RngStream) -> Self {
        let mix = TokenMixWeights::init(len, hidden, rng);
        ScbWeights {
            w1: mix.w1,
            w2: mix.w2,
            ln_gamma: Tensor::filled(&[1, width], 1.0),
            ln_beta: Tensor::zeros(&[1, width]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ScbWeights {
            w1: self.w1.zeros_like(),
            w2: self.w2.zeros_like(),
            ln_gamma: self.ln_gamma.zeros_like(),
            ln_beta: self.ln_beta.zeros_like(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScbCache {
    ln: LayerNormCache,
    mix: TokenMixCache,
}

pub fn scb_forward_cached(x: &Tensor, w: &ScbWeights) -> Result<(Tensor, ScbCache)> {
    if x.rows() != w.w1.rows() || x.cols() != w.ln_gamma.len() {
        return Err(Error::shape("scb", x.shape(), w.w1.shape()));
    }
    let (normed, ln) = layer_norm_with_cache(x, &w.ln_gamma, &w.ln_beta, LAYER_NORM_EPS);
    let (mixed, mix) = mix_forward(&normed, &w.w1, &w.w2)?;
    Ok((x.add(&mixed)?, ScbCache { ln, mix }))
}

/// `X + (GELU(LayerNorm(X)ᵀ·W1)·W2)ᵀ`.
pub fn scb_forward(x: &Tensor, w: &ScbWeights) -> Result<Tensor> {
    Ok(scb_forward_cached(x, w)?.0)
}

pub fn scb_backward(dy: &Tensor, cache: &ScbCache, w: &ScbWeights) -> Result<(Tensor, ScbWeights)> {
    let (dnormed, dw1, dw2) = mix_backward(dy, &cache.mix, &w.w1, &w.w2)?;
    let (dx_ln, dgamma, dbeta) = layer_norm_backward(&dnormed, &cache.ln, &w.ln_gamma);
    let mut dx = dy.clone();
    dx.add_assign(&dx_ln)?;
    Ok((
        dx,
        ScbWeights {
            w1: dw1,
            w2: dw2,
            ln_gamma: dgamma,
            ln_beta: dbeta,
        },
    ))
}

/// One feature-capture head: `σ(X_h·W1)·W2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FcbHead {
    /// `(2d/H) × d_c`
    pub w1: Tensor,
    /// `d_c × (2d/H)`
    pub w2: Tensor,
}
visit_fields!(FcbHead { w1, w2 });

/// Feature capture block weights; the head count is `heads.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct FcbWeights {
    pub heads: Vec<FcbHead>,
    /// `2d × 2d`
    pub w_o: Tensor,
    pub ln_gamma: Tensor,
    pub ln_beta: Tensor,
}
visit_fields!(FcbWeights { heads, w_o, ln_gamma, ln_beta });

impl FcbWeights {
    pub fn init(width: usize, heads: usize, hidden: usize, rng: &mut RngStream) -> Result<Self> {
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(Error::Config(alloc::format!(
                "head count {heads} does not divide width {width}"
            )));
        }
        let s = width / heads;
        let heads = (0..heads)
            .map(|_| FcbHead {
                w1: init_uniform(&[s, hidden], s, rng),
                w2: init_uniform(&[hidden, s], hidden, rng),
            })
            .collect();
        Ok(FcbWeights {
            heads,
            w_o: init_uniform(&[width, width], width, rng),
            ln_gamma: Tensor::filled(&[1, width], 1.0),
            ln_beta: Tensor::zeros(&[1, width]),
        })
    }

    pub fn zeros_like(&self) -> Self {
        FcbWeights {
            heads: self
                .heads
                .iter()
                .map(|h| FcbHead {
                    w1: h.w1.zeros_like(),
                    w2: h.w2.zeros_like(),
                })
                .collect(),
            w_o: self.w_o.zeros_like(),
            ln_gamma: self.ln_gamma.zeros_like(),
            ln_beta: self.ln_beta.zeros_like(),
        }
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    fn head_width(&self) -> usize {
        self.w_o.rows() / self.heads.len()
    }
}

#[derive(Debug, Clone)]
pub struct FcbCache {
    ln: LayerNormCache,
    normed: Tensor,
    /// Per head `(pre-activation, activation)`.
    heads: Vec<(Tensor, Tensor)>,
    concat: Tensor,
}

/// `concat_h(σ(LayerNorm(X)_h·W1_h)·W2_h)·W_O` without the residual.
pub fn fcb_core_forward(x: &Tensor, w: &FcbWeights) -> Result<(Tensor, FcbCache)> {
    let width = w.w_o.rows();
    if x.cols() != width {
        return Err(Error::shape("fcb", x.shape(), w.w_o.shape()));
    }
    if !width.is_multiple_of(w.num_heads()) {
        return Err(Error::Config(alloc::format!(
            "head count {} does not divide width {width}",
            w.num_heads()
        )));
    }
    let (normed, ln) = layer_norm_with_cache(x, &w.ln_gamma, &w.ln_beta, LAYER_NORM_EPS);
    let s = w.head_width();
    let mut concat = Tensor::zeros(&[x.rows(), width]);
    let mut heads = Vec::with_capacity(w.num_heads());
    for (h, head) in w.heads.iter().enumerate() {
        let part = normed.col_slice(h * s, (h + 1) * s);
        let pre = part.matmul(&head.w1)?;
        let act = pre.map(sigmoid);
        concat.set_cols(h * s, &act.matmul(&head.w2)?);
        heads.push((pre, act));
    }
    let out = concat.matmul(&w.w_o)?;
    Ok((
        out,
        FcbCache {
            ln,
            normed,
            heads,
            concat,
        },
    ))
}

/// Returns `(dX, grads)` for [`fcb_core_forward`].
pub fn fcb_core_backward(dy: &Tensor, cache: &FcbCache, w: &FcbWeights) -> Result<(Tensor, FcbWeights)> {
    let s = w.head_width();
    let dw_o = cache.concat.t_matmul(dy)?;
    let dconcat = dy.matmul_t(&w.w_o)?;
    let mut dnormed = Tensor::zeros(cache.normed.shape());
    let mut head_grads = Vec::with_capacity(w.num_heads());
    for (h, head) in w.heads.iter().enumerate() {
        let (_, act) = &cache.heads[h];
        let dr = dconcat.col_slice(h * s, (h + 1) * s);
        let dw2 = act.t_matmul(&dr)?;
        let mut dp = dr.matmul_t(&head.w2)?;
        for (g, &a) in dp.data_mut().iter_mut().zip(act.data()) {
            *g *= a * (1.0 - a);
        }
        let part = cache.normed.col_slice(h * s, (h + 1) * s);
        let dw1 = part.t_matmul(&dp)?;
        dnormed.set_cols(h * s, &dp.matmul_t(&head.w1)?);
        head_grads.push(FcbHead { w1: dw1, w2: dw2 });
    }
    let (dx, dgamma, dbeta) = layer_norm_backward(&dnormed, &cache.ln, &w.ln_gamma);
    Ok((
        dx,
        FcbWeights {
            heads: head_grads,
            w_o: dw_o,
            ln_gamma: dgamma,
            ln_beta: dbeta,
        },
    ))
}

/// `X + FCB(LayerNorm(X))`.
pub fn fcb_forward(x: &Tensor, w: &FcbWeights) -> Result<Tensor> {
    let (c, _) = fcb_core_forward(x, w)?;
    x.add(&c)
}

/// Attention-pooling vector `W_α: 2d × 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolWeights {
    pub w_alpha: Tensor,
}
visit_fields!(PoolWeights { w_alpha });

impl PoolWeights {
    pub fn init(width: usize, rng: &mut RngStream) -> Self {
        PoolWeights {
            w_alpha: init_uniform(&[width, 1], width, rng),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PoolCache {
    x: Tensor,
    pub alpha: Vec<f64>,
    dropout: DropoutMask,
}

/// Masked softmax pooling followed by dropout.
pub fn pool_forward(
    x: &Tensor,
    w: &PoolWeights,
    mask: &[bool],
    rate: f64,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<(Tensor, PoolCache)> {
    if mask.len() != x.rows() {
        return Err(Error::shape("pool mask", x.shape(), &[mask.len()]));
    }
    let logits = x.matmul(&w.w_alpha)?;
    let alpha = crate::numerics::softmax_slice(logits.data(), Some(mask))?;
    let mut pooled = Tensor::zeros(&[1, x.cols()]);
    for (t, &a) in alpha.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        for (o, v) in pooled.data_mut().iter_mut().zip(x.row(t)) {
            *o += a * v;
        }
    }
    let (out, mask) = dropout(&pooled, rate, mode, rng);
    Ok((
        out,
        PoolCache {
            x: x.clone(),
            alpha,
            dropout: mask,
        },
    ))
}

pub fn pool_backward(de: &Tensor, cache: &PoolCache, w: &PoolWeights) -> Result<(Tensor, PoolWeights)> {
    let dpooled = cache.dropout.apply(de);
    let x = &cache.x;
    let dalpha: Vec<f64> = (0..x.rows())
        .map(|t| x.row(t).iter().zip(dpooled.data()).map(|(a, b)| a * b).sum())
        .collect();
    let dlogit = softmax_backward(&cache.alpha, &dalpha);
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.w_alpha.shape());
    for t in 0..x.rows() {
        let a = cache.alpha[t];
        let g = dlogit[t];
        for (j, o) in dx.row_mut(t).iter_mut().enumerate() {
            *o = a * dpooled.data()[j] + g * w.w_alpha.data()[j];
        }
        for (o, v) in dw.data_mut().iter_mut().zip(x.row(t)) {
            *o += g * v;
        }
    }
    Ok((dx, PoolWeights { w_alpha: dw }))
}

/// One stacked block; `None` marks an ablated sub-block (identity).
#[derive(Debug, Clone, PartialEq)]
pub struct HipBlock {
    pub scb: Option<ScbWeights>,
    pub fcb: Option<FcbWeights>,
}
visit_fields!(HipBlock { scb, fcb });

#[derive(Debug, Clone, PartialEq)]
pub struct HipParams {
    pub blocks: Vec<HipBlock>,
    pub pool: PoolWeights,
}
visit_fields!(HipParams { blocks, pool });

impl HipParams {
    pub fn zeros_like(&self) -> Self {
        HipParams {
            blocks: self
                .blocks
                .iter()
                .map(|b| HipBlock {
                    scb: b.scb.as_ref().map(ScbWeights::zeros_like),
                    fcb: b.fcb.as_ref().map(FcbWeights::zeros_like),
                })
                .collect(),
            pool: PoolWeights {
                w_alpha: self.pool.w_alpha.zeros_like(),
            },
        }
    }
}

#[derive(Debug, Clone)]
struct BlockCache {
    scb: Option<ScbCache>,
    fcb: Option<FcbCache>,
}

/// Activations saved by [`hip_forward`].
#[derive(Debug, Clone)]
pub struct HipCache {
    blocks: Vec<BlockCache>,
    pub pool: PoolCache,
}

/// Runs every block then pools into the `1 × 2d` global interest vector.
pub fn hip_forward(
    x0: &Tensor,
    params: &HipParams,
    mask: &[bool],
    dropout_rate: f64,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<(Tensor, HipCache)> {
    if params.blocks.is_empty() {
        return Err(Error::Config("at least one block is required".into()));
    }
    let mut x = x0.clone();
    let mut blocks = Vec::with_capacity(params.blocks.len());
    for block in &params.blocks {
        let scb = match &block.scb {
            Some(w) => {
                let (y, c) = scb_forward_cached(&x, w)?;
                x = y;
                Some(c)
            }
            None => None,
        };
        let fcb = match &block.fcb {
            Some(w) => {
                let (c, cache) = fcb_core_forward(&x, w)?;
                x.add_assign(&c)?;
                Some(cache)
            }
            None => None,
        };
        blocks.push(BlockCache { scb, fcb });
    }
    let (e_g, pool) = pool_forward(&x, &params.pool, mask, dropout_rate, mode, rng)?;
    Ok((e_g, HipCache { blocks, pool }))
}

/// Gradients of [`hip_forward`] w.r.t. its weights and its input.
pub fn hip_backward(grad_e_g: &Tensor, cache: &HipCache, params: &HipParams) -> Result<(HipParams, Tensor)> {
    let (mut dx, pool_grads) = pool_backward(grad_e_g, &cache.pool, &params.pool)?;
    let mut grads = params.zeros_like();
    grads.pool = pool_grads;
    for (n, block) in params.blocks.iter().enumerate().rev() {
        let bc = &cache.blocks[n];
        if let (Some(w), Some(c)) = (&block.fcb, &bc.fcb) {
            let (dcore, g) = fcb_core_backward(&dx, c, w)?;
            dx.add_assign(&dcore)?;
            grads.blocks[n].fcb = Some(g);
        }
        if let (Some(w), Some(c)) = (&block.scb, &bc.scb) {
            let (d, g) = scb_backward(&dx, c, w)?;
            dx = d;
            grads.blocks[n].scb = Some(g);
        }
    }
    Ok((grads, dx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, layer_norm};
    use alloc::vec;

    fn random(shape: &[usize], rng: &mut RngStream) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(&[a.rows(), b.cols()]);
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                out.set(i, j, (0..a.cols()).map(|k| a.at(i, k) * b.at(k, j)).sum());
            }
        }
        out
    }

    fn naive_transpose(a: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(&[a.cols(), a.rows()]);
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                out.set(j, i, a.at(i, j));
            }
        }
        out
    }

    fn scb_oracle(x: &Tensor, w: &ScbWeights) -> Tensor {
        let n = layer_norm(x, &w.ln_gamma, &w.ln_beta, LAYER_NORM_EPS);
        let t = naive_transpose(&n);
        let h = naive_matmul(&t, &w.w1).map(gelu);
        let r = naive_transpose(&naive_matmul(&h, &w.w2));
        x.add(&r).unwrap()
    }

    fn fcb_oracle(x: &Tensor, w: &FcbWeights) -> Tensor {
        let n = layer_norm(x, &w.ln_gamma, &w.ln_beta, LAYER_NORM_EPS);
        let s = x.cols() / w.heads.len();
        let mut cat = Tensor::zeros(x.shape());
        for (h, head) in w.heads.iter().enumerate() {
            for i in 0..x.rows() {
                for j in 0..s {
                    let mut acc = 0.0;
                    for c in 0..head.w1.cols() {
                        let pre: f64 = (0..s).map(|k| n.at(i, h * s + k) * head.w1.at(k, c)).sum();
                        acc += sigmoid(pre) * head.w2.at(c, j);
                    }
                    cat.set(i, h * s + j, acc);
                }
            }
        }
        x.add(&naive_matmul(&cat, &w.w_o)).unwrap()
    }

    fn random_ln(w: &mut Tensor, b: &mut Tensor, rng: &mut RngStream) {
        w.data_mut().iter_mut().for_each(|v| *v += rng.uniform(-0.3, 0.3));
        *b = random(b.shape(), rng);
    }

    fn tiny_hip(len: usize, width: usize, blocks: usize, rng: &mut RngStream) -> HipParams {
        HipParams {
            blocks: (0..blocks)
                .map(|_| {
                    let mut scb = ScbWeights::init(len, 5, width, rng);
                    let mut fcb = FcbWeights::init(width, 2, 3, rng).unwrap();
                    random_ln(&mut scb.ln_gamma, &mut scb.ln_beta, rng);
                    random_ln(&mut fcb.ln_gamma, &mut fcb.ln_beta, rng);
                    HipBlock {
                        scb: Some(scb),
                        fcb: Some(fcb),
                    }
                })
                .collect(),
            pool: PoolWeights::init(width, rng),
        }
    }

    #[test]
    fn scb_residual_identity_when_w2_zero() {
        let mut rng = RngStream::new(1);
        let x = random(&[4, 6], &mut rng);
        let mut w = ScbWeights::init(4, 3, 6, &mut rng);
        w.w2 = w.w2.zeros_like();
        assert_eq!(scb_forward(&x, &w).unwrap(), x);
    }

    #[test]
    fn scb_single_position() {
        let mut rng = RngStream::new(2);
        let x = random(&[1, 4], &mut rng);
        let w = ScbWeights::init(1, 2, 4, &mut rng);
        let y = scb_forward(&x, &w).unwrap();
        assert!(y.max_abs_diff(&scb_oracle(&x, &w)) < 1e-12);
    }

    #[test]
    fn scb_matches_composition_oracle() {
        let mut rng = RngStream::new(3);
        let x = random(&[4, 6], &mut rng);
        let mut w = ScbWeights::init(4, 5, 6, &mut rng);
        random_ln(&mut w.ln_gamma, &mut w.ln_beta, &mut rng);
        let y = scb_forward(&x, &w).unwrap();
        assert!(y.max_abs_diff(&scb_oracle(&x, &w)) < 1e-12);
    }

    #[test]
    fn scb_rejects_wrong_length() {
        let mut rng = RngStream::new(3);
        let w = ScbWeights::init(4, 5, 6, &mut rng);
        assert!(matches!(scb_forward(&Tensor::zeros(&[3, 6]), &w), Err(Error::Shape { .. })));
    }

    #[test]
    fn fcb_residual_identity_when_projection_zero() {
        let mut rng = RngStream::new(4);
        let x = random(&[3, 4], &mut rng);
        let mut w = FcbWeights::init(4, 2, 3, &mut rng).unwrap();
        w.w_o = w.w_o.zeros_like();
        assert_eq!(fcb_forward(&x, &w).unwrap(), x);
    }

    #[test]
    fn fcb_single_head_is_one_feature_mlp() {
        let mut rng = RngStream::new(5);
        let x = random(&[3, 4], &mut rng);
        let mut w = FcbWeights::init(4, 1, 3, &mut rng).unwrap();
        w.w_o = Tensor::identity(4);
        let n = layer_norm(&x, &w.ln_gamma, &w.ln_beta, LAYER_NORM_EPS);
        let expect = x
            .add(&naive_matmul(&naive_matmul(&n, &w.heads[0].w1).map(sigmoid), &w.heads[0].w2))
            .unwrap();
        assert!(fcb_forward(&x, &w).unwrap().max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn fcb_two_heads_match_oracle() {
        let mut rng = RngStream::new(6);
        let x = random(&[3, 4], &mut rng);
        let mut w = FcbWeights::init(4, 2, 3, &mut rng).unwrap();
        random_ln(&mut w.ln_gamma, &mut w.ln_beta, &mut rng);
        assert!(fcb_forward(&x, &w).unwrap().max_abs_diff(&fcb_oracle(&x, &w)) < 1e-12);
    }

    #[test]
    fn fcb_rejects_non_dividing_heads() {
        let mut rng = RngStream::new(6);
        assert!(matches!(FcbWeights::init(6, 4, 3, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn pool_examples() {
        let mut rng = RngStream::new(7);
        let x = random(&[3, 4], &mut rng);
        let w = PoolWeights::init(4, &mut rng);
        let (e, _) = pool_forward(&x, &w, &[false, false, true], 0.5, Mode::Eval, &mut rng).unwrap();
        assert_eq!(e.data(), x.row(2));

        let zero = PoolWeights {
            w_alpha: Tensor::zeros(&[4, 1]),
        };
        let (e, c) = pool_forward(&x, &zero, &[false, true, true], 0.0, Mode::Eval, &mut rng).unwrap();
        assert_eq!(c.alpha, vec![0.0, 0.5, 0.5]);
        for j in 0..4 {
            assert!((e.data()[j] - 0.5 * (x.at(1, j) + x.at(2, j))).abs() < 1e-15);
        }

        // logits [ln 2, ln 1, ln 1] via a one-hot first feature
        let x = Tensor::from_rows(&[
            &[libm::log(2.0), 0.0],
            &[0.0, 1.0],
            &[0.0, -1.0],
        ]);
        let w = PoolWeights {
            w_alpha: Tensor::from_rows(&[&[1.0], &[0.0]]),
        };
        let (_, c) = pool_forward(&x, &w, &[true; 3], 0.0, Mode::Eval, &mut rng).unwrap();
        for (a, b) in c.alpha.iter().zip([0.5, 0.25, 0.25]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(
            pool_forward(&x, &w, &[false; 3], 0.0, Mode::Eval, &mut rng).unwrap_err(),
            Error::InvalidMask
        );
    }

    #[test]
    fn zeroed_blocks_reduce_to_pooled_input() {
        let mut rng = RngStream::new(8);
        let x0 = random(&[5, 4], &mut rng);
        let mut p = tiny_hip(5, 4, 2, &mut rng);
        for b in &mut p.blocks {
            b.scb.as_mut().unwrap().w2 = Tensor::zeros(&[5, 5]);
            b.fcb.as_mut().unwrap().w_o = Tensor::zeros(&[4, 4]);
        }
        let mask = [false, true, true, true, true];
        let (e, _) = hip_forward(&x0, &p, &mask, 0.0, Mode::Eval, &mut rng).unwrap();
        let (pooled, _) = pool_forward(&x0, &p.pool, &mask, 0.0, Mode::Eval, &mut rng).unwrap();
        assert_eq!(e, pooled);
    }

    #[test]
    fn stacked_blocks_match_sequential_oracle() {
        let mut rng = RngStream::new(9);
        let x0 = random(&[5, 4], &mut rng);
        let p = tiny_hip(5, 4, 2, &mut rng);
        let mask = [true; 5];
        let (e, _) = hip_forward(&x0, &p, &mask, 0.0, Mode::Eval, &mut rng).unwrap();
        let mut x = x0.clone();
        for b in &p.blocks {
            x = scb_oracle(&x, b.scb.as_ref().unwrap());
            x = fcb_oracle(&x, b.fcb.as_ref().unwrap());
        }
        let (expect, _) = pool_forward(&x, &p.pool, &mask, 0.0, Mode::Eval, &mut rng).unwrap();
        assert!(e.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut rng = RngStream::new(10);
        let x0 = random(&[4, 4], &mut rng);
        let p = tiny_hip(4, 4, 1, &mut rng);
        let (_, cache) = hip_forward(&x0, &p, &[true; 4], 0.0, Mode::Eval, &mut rng).unwrap();
        let (g, dx) = hip_backward(&Tensor::zeros(&[1, 4]), &cache, &p).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert!(crate::numerics::ParamSet::tensors(&g).iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    fn check_hip_gradients(mode: Mode, rate: f64, seed: u64) {
        let mut rng = RngStream::new(seed);
        let x0 = random(&[4, 4], &mut rng);
        let mut params = tiny_hip(4, 4, 1, &mut rng);
        let probe = random(&[1, 4], &mut rng);
        let mask = [false, true, true, true];
        let drop_rng = RngStream::new(seed + 100);
        let loss = |p: &HipParams| {
            let (e, _) = hip_forward(&x0, p, &mask, rate, mode, &mut drop_rng.clone()).unwrap();
            e.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, cache) = hip_forward(&x0, &params, &mask, rate, mode, &mut drop_rng.clone()).unwrap();
        let (grads, dx0) = hip_backward(&probe, &cache, &params).unwrap();
        let r = grad_check(loss, &mut params, &grads, 1e-5, 20, &mut rng);
        assert!(r.max_rel_error < 1e-4, "{r:?}");

        let mut x = vec![x0.clone()];
        let lx = |x: &Vec<Tensor>| {
            let (e, _) = hip_forward(&x[0], &params, &mask, rate, mode, &mut drop_rng.clone()).unwrap();
            e.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let r = grad_check(lx, &mut x, &vec![dx0], 1e-5, 20, &mut rng);
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn backward_matches_finite_differences() {
        check_hip_gradients(Mode::Eval, 0.0, 11);
    }

    #[test]
    fn backward_through_frozen_dropout_mask() {
        check_hip_gradients(Mode::Train, 0.3, 12);
    }

    #[test]
    fn eval_is_deterministic() {
        let mut rng = RngStream::new(13);
        let x0 = random(&[4, 4], &mut rng);
        let p = tiny_hip(4, 4, 2, &mut rng);
        let a = hip_forward(&x0, &p, &[true; 4], 0.5, Mode::Eval, &mut rng).unwrap().0;
        let b = hip_forward(&x0, &p, &[true; 4], 0.5, Mode::Eval, &mut rng).unwrap().0;
        assert_eq!(a, b);
    }
}
