//! The assembled recommender: both towers, the gate, the scorer and the
//! loss, with a hand-written backward pass.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::encoding::{
    aux_backward, encode_aux, encode_hetero, hetero_backward, AuxSubsequences, EmbeddingTables,
    HeteroSequence,
};
use crate::error::{Error, Result};
use crate::hip::{
    hip_backward, hip_forward, init_uniform, FcbWeights, HipBlock, HipCache, HipParams, PoolWeights,
    ScbWeights,
};
use crate::numerics::{sigmoid, softmax_backward, Mode, ParamSet, RngStream, Tensor};
use crate::pip::{pip_backward, pip_forward, PipBlock, PipCache, PipParams};

mod hyper;
pub mod train;

pub use hyper::{Ablation, HyperParams, ScoreActivation};
pub use train::{param_count, train_step, Optimizer, REDUCE_CHUNK};

/// Where an instance's target sits: user index and offset in that user's
/// event sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InstanceId {
    pub user: u32,
    pub position: usize,
}

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.user, self.position)
    }
}

/// One supervised example: both input windows and the item to predict.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingInstance {
    pub hetero: HeteroSequence,
    pub aux: AuxSubsequences,
    pub target_item: u32,
    pub id: InstanceId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateWeights {
    pub w_g: Tensor,
    pub w_l: Tensor,
    pub b_g: Tensor,
}
visit_fields!(GateWeights { w_g, w_l, b_g });

#[derive(Debug, Clone, PartialEq)]
pub struct OutputWeights {
    /// `2d × |I|`
    pub w_r: Tensor,
    /// `1 × |I|`
    pub b_r: Tensor,
}
visit_fields!(OutputWeights { w_r, b_r });

/// Every trainable tensor. Ablated parts are `None` and own no parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub tables: EmbeddingTables,
    pub hip: Option<HipParams>,
    pub pip: Option<PipParams>,
    pub gate: Option<GateWeights>,
    pub output: OutputWeights,
}
visit_fields!(ModelParams { tables, hip, pip, gate, output });

impl ModelParams {
    /// Draws a fresh model. `num_behaviors` counts the target behavior too.
    pub fn init(hyper: &HyperParams, num_items: usize, num_behaviors: usize, rng: &mut RngStream) -> Result<Self> {
        hyper.validate()?;
        if num_items == 0 || num_behaviors == 0 {
            return Err(Error::Config("vocabulary must have items and behaviors".into()));
        }
        let width = 2 * hyper.d;
        let ab = hyper.ablation;
        let tables = EmbeddingTables::init(num_items, num_behaviors, hyper.d, rng);
        let hip = if ab.no_hip {
            None
        } else {
            let mut blocks = Vec::with_capacity(hyper.blocks);
            for _ in 0..hyper.blocks {
                let scb = (!ab.no_scb).then(|| ScbWeights::init(hyper.len, hyper.scb_hidden(), width, rng));
                let fcb = if ab.no_fcb {
                    None
                } else {
                    Some(FcbWeights::init(width, hyper.heads, hyper.fcb_hidden(), rng)?)
                };
                blocks.push(HipBlock { scb, fcb });
            }
            Some(HipParams {
                blocks,
                pool: PoolWeights::init(width, rng),
            })
        };
        let m = num_behaviors - 1;
        let pip = if ab.no_pip {
            None
        } else {
            if m == 0 {
                return Err(Error::Config("intent tower needs at least one auxiliary behavior".into()));
            }
            let mut blocks = Vec::with_capacity(hyper.blocks);
            for _ in 0..hyper.blocks {
                let mixes = (!ab.no_scb).then(|| {
                    (0..m)
                        .map(|_| crate::hip::TokenMixWeights::init(hyper.aux_len, hyper.pip_hidden(), rng))
                        .collect()
                });
                let fcb = if ab.no_fcb {
                    None
                } else {
                    Some(FcbWeights::init(width, hyper.heads, hyper.fcb_hidden(), rng)?)
                };
                blocks.push(PipBlock { mixes, fcb });
            }
            Some(PipParams { blocks })
        };
        let gate = (hip.is_some() && pip.is_some()).then(|| GateWeights {
            w_g: init_uniform(&[width, width], width, rng),
            w_l: init_uniform(&[width, width], width, rng),
            b_g: Tensor::zeros(&[1, width]),
        });
        let output = OutputWeights {
            w_r: init_uniform(&[width, num_items], width, rng),
            b_r: Tensor::zeros(&[1, num_items]),
        };
        Ok(ModelParams {
            tables,
            hip,
            pip,
            gate,
            output,
        })
    }

    /// Same structure, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        z
    }

    pub fn num_items(&self) -> usize {
        self.output.b_r.len()
    }
}

/// Gate `g = σ(e_g·W_g + e_l·W_l + b_g)`; returns `(z, g)`.
pub fn gate_fuse(e_g: &Tensor, e_l: &Tensor, w: &GateWeights) -> Result<(Tensor, Tensor)> {
    let mut a = e_g.matmul(&w.w_g)?;
    a.add_assign(&e_l.matmul(&w.w_l)?)?;
    a.add_assign(&w.b_g)?;
    let g = a.map(sigmoid);
    let z: Vec<f64> = g
        .data()
        .iter()
        .zip(e_g.data().iter().zip(e_l.data()))
        .map(|(gi, (x, y))| gi * x + (1.0 - gi) * y)
        .collect();
    Ok((Tensor::from_vec(e_g.shape(), z)?, g))
}

/// Item scores `act(z·W_r + b_r)` over the `|I|` real items.
pub fn predict_scores(z: &Tensor, w_r: &Tensor, b_r: &Tensor, act: ScoreActivation) -> Result<Tensor> {
    let logits = crate::numerics::dense(z, w_r, Some(b_r))?;
    match act {
        ScoreActivation::Softmax => crate::numerics::softmax(&logits, None),
        ScoreActivation::Sigmoid => Ok(logits.map(sigmoid)),
    }
}

pub const PROB_CLAMP: f64 = 1e-12;

/// Binary cross-entropy over every item: `−log r_y − Σ_{j≠y} log(1 − r_j)`
/// with probabilities clamped to `[1e-12, 1 − 1e-12]`. `target` is a
/// 0-based column of `r`.
pub fn loss(r: &[f64], target: usize) -> f64 {
    r.iter()
        .enumerate()
        .map(|(j, &p)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if j == target {
                -libm::log(p)
            } else {
                -libm::log(1.0 - p)
            }
        })
        .sum()
}

/// `∂loss/∂r`; zero where the clamp is active.
pub fn loss_grad(r: &[f64], target: usize) -> Vec<f64> {
    r.iter()
        .enumerate()
        .map(|(j, &p)| {
            if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
                0.0
            } else if j == target {
                -1.0 / p
            } else {
                1.0 / (1.0 - p)
            }
        })
        .collect()
}

/// Intermediate values of [`forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    hip: Option<HipCache>,
    pip: Option<PipCache>,
    pub e_g: Option<Tensor>,
    pub e_l: Option<Tensor>,
    pub g: Option<Tensor>,
    pub z: Tensor,
    /// Scores over the real items, `1 × |I|`.
    pub probs: Tensor,
    /// Attention weights over the heterogeneous window, when it has real
    /// positions.
    pub alpha: Option<Vec<f64>>,
}

/// Pads item scores to `|I|+1` entries with the padding slot at 0.
fn pad_scores(probs: &Tensor) -> Tensor {
    let mut out = vec![0.0];
    out.extend_from_slice(probs.data());
    Tensor::from_vec(&[1, out.len()], out).expect("one row")
}

/// Full forward pass. The returned scores have `|I|+1` entries indexed by
/// item id; entry 0 (padding) is always 0.
pub fn forward(
    inst: &TrainingInstance,
    params: &ModelParams,
    hyper: &HyperParams,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<(Tensor, ForwardCache)> {
    let width = 2 * hyper.d;
    let (e_g, hip_cache, alpha) = match &params.hip {
        Some(hp) if inst.hetero.real_len() > 0 => {
            let x0 = encode_hetero(&inst.hetero, &params.tables, hyper.variant)?;
            let (e, c) = hip_forward(&x0, hp, &inst.hetero.mask, hyper.dropout_rate, mode, rng)?;
            let alpha = c.pool.alpha.clone();
            (Some(e), Some(c), Some(alpha))
        }
        // An empty window pools to the zero vector.
        Some(_) => (Some(Tensor::zeros(&[1, width])), None, None),
        None => (None, None, None),
    };
    let (e_l, pip_cache) = match &params.pip {
        Some(pp) => {
            let h0 = encode_aux(&inst.aux, &params.tables)?;
            let (e, c) = pip_forward(&h0, pp, &inst.aux.masks(), hyper.pip_options())?;
            (Some(e), Some(c))
        }
        None => (None, None),
    };
    let (z, g) = match (&e_g, &e_l, &params.gate) {
        (Some(a), Some(b), Some(w)) => {
            let (z, g) = gate_fuse(a, b, w)?;
            (z, Some(g))
        }
        (Some(a), None, _) => (a.clone(), None),
        (None, Some(b), _) => (b.clone(), None),
        _ => return Err(Error::Config("model has neither tower".into())),
    };
    let probs = predict_scores(&z, &params.output.w_r, &params.output.b_r, hyper.score_activation)?;
    let scores = pad_scores(&probs);
    Ok((
        scores,
        ForwardCache {
            hip: hip_cache,
            pip: pip_cache,
            e_g,
            e_l,
            g,
            z,
            probs,
            alpha,
        },
    ))
}

fn target_column(inst: &TrainingInstance, num_items: usize) -> Result<usize> {
    let t = inst.target_item as usize;
    if t == 0 || t > num_items {
        return Err(Error::InvalidTarget(inst.target_item));
    }
    Ok(t - 1)
}

/// Loss of one instance from its forward cache.
pub fn instance_loss(inst: &TrainingInstance, cache: &ForwardCache) -> Result<f64> {
    let col = target_column(inst, cache.probs.len())?;
    Ok(loss(cache.probs.data(), col))
}

/// Gradients of [`instance_loss`] w.r.t. every parameter.
pub fn backward(
    inst: &TrainingInstance,
    cache: &ForwardCache,
    params: &ModelParams,
    hyper: &HyperParams,
) -> Result<ModelParams> {
    let mut grads = params.zeros_like();
    let col = target_column(inst, cache.probs.len())?;
    let p = cache.probs.data();
    let dp = loss_grad(p, col);
    let dlogits = match hyper.score_activation {
        ScoreActivation::Softmax => softmax_backward(p, &dp),
        ScoreActivation::Sigmoid => p.iter().zip(&dp).map(|(pi, d)| d * pi * (1.0 - pi)).collect(),
    };
    let dlogits = Tensor::from_vec(&[1, dlogits.len()], dlogits)?;
    let (dz, dw_r, db_r) = crate::numerics::dense_backward(&cache.z, &params.output.w_r, &dlogits)?;
    grads.output = OutputWeights { w_r: dw_r, b_r: db_r };

    let (de_g, de_l) = match (&cache.e_g, &cache.e_l, &cache.g, &params.gate) {
        (Some(eg), Some(el), Some(g), Some(w)) => {
            let n = dz.len();
            let mut da = Tensor::zeros(&[1, n]);
            let mut deg = Tensor::zeros(&[1, n]);
            let mut del = Tensor::zeros(&[1, n]);
            for k in 0..n {
                let (gk, dzk) = (g.data()[k], dz.data()[k]);
                da.data_mut()[k] = dzk * (eg.data()[k] - el.data()[k]) * gk * (1.0 - gk);
                deg.data_mut()[k] = dzk * gk;
                del.data_mut()[k] = dzk * (1.0 - gk);
            }
            deg.add_assign(&da.matmul_t(&w.w_g)?)?;
            del.add_assign(&da.matmul_t(&w.w_l)?)?;
            grads.gate = Some(GateWeights {
                w_g: eg.t_matmul(&da)?,
                w_l: el.t_matmul(&da)?,
                b_g: da,
            });
            (Some(deg), Some(del))
        }
        (Some(_), None, _, _) => (Some(dz), None),
        (None, Some(_), _, _) => (None, Some(dz)),
        _ => (None, None),
    };

    if let (Some(de), Some(hc), Some(hp)) = (de_g, &cache.hip, &params.hip) {
        let (g, dx0) = hip_backward(&de, hc, hp)?;
        grads.hip = Some(g);
        hetero_backward(&inst.hetero, &dx0, hyper.variant, &mut grads.tables);
    }
    if let (Some(de), Some(pc), Some(pp)) = (de_l, &cache.pip, &params.pip) {
        let (g, dh0) = pip_backward(&de, pc, pp, hyper.pip_options())?;
        grads.pip = Some(g);
        aux_backward(&inst.aux, &dh0, &mut grads.tables);
    }
    Ok(grads)
}

/// One instance's loss and gradients.
pub fn forward_backward(
    inst: &TrainingInstance,
    params: &ModelParams,
    hyper: &HyperParams,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<(f64, ModelParams)> {
    let (_, cache) = forward(inst, params, hyper, mode, rng)?;
    let l = instance_loss(inst, &cache)?;
    if !l.is_finite() {
        return Err(Error::NonFiniteLoss {
            instance: alloc::format!("{}", inst.id),
        });
    }
    Ok((l, backward(inst, &cache, params, hyper)?))
}

/// Eval-mode scores (`|I|+1` entries, padding at 0).
pub fn score(inst: &TrainingInstance, params: &ModelParams, hyper: &HyperParams) -> Result<Tensor> {
    let mut rng = RngStream::new(0);
    Ok(forward(inst, params, hyper, Mode::Eval, &mut rng)?.0)
}
