use alloc::string::String;
use alloc::vec::Vec;

use super::{forward_backward, HyperParams, ModelParams, TrainingInstance};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::numerics::{accumulate, adam_step, AdamState, Mode, ParamSet, RngStream};

/// Instances per partial gradient sum. Partials are formed and combined in
/// a fixed order, so the reduced gradient does not depend on how many
/// workers computed them.
pub const REDUCE_CHUNK: usize = 16;

/// Adam state for every tensor of a [`ModelParams`], in tensor order.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub names: Vec<String>,
    pub states: Vec<AdamState>,
}

impl Optimizer {
    pub fn new(params: &ModelParams) -> Self {
        Optimizer {
            names: params.names(),
            states: params.tensors().into_iter().map(AdamState::new).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.states.first().map_or(0, |s| s.t)
    }

    /// Applies one update with `grads` to `params`.
    pub fn apply(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64, weight_decay: f64) -> Result<()> {
        let gs = grads.tensors();
        if let Some((name, _)) = self.names.iter().zip(&gs).find(|(_, g)| !g.is_finite()) {
            return Err(Error::NonFiniteGradient {
                param: name.clone(),
                step: self.steps() + 1,
            });
        }
        for (((p, g), s), name) in params.tensors_mut().into_iter().zip(gs).zip(&mut self.states).zip(&self.names) {
            adam_step(name, p, g, s, lr, weight_decay)?;
        }
        Ok(())
    }
}

/// Mean loss and mean gradient over `batch`. Instance `k` draws its dropout
/// masks from stream `k + 1` of `step_seed`.
pub fn batch_gradient<E: Executor>(
    batch: &[TrainingInstance],
    params: &ModelParams,
    hyper: &HyperParams,
    step_seed: u64,
    exec: &E,
) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset { stage: "batch" });
    }
    let chunks = batch.len().div_ceil(REDUCE_CHUNK);
    let partials = exec.map(chunks, |c| -> Result<(f64, ModelParams)> {
        let mut sum = params.zeros_like();
        let mut loss = 0.0;
        let end = ((c + 1) * REDUCE_CHUNK).min(batch.len());
        for k in c * REDUCE_CHUNK..end {
            let mut rng = RngStream::at(step_seed, k as u64 + 1, 0);
            let (l, g) = forward_backward(&batch[k], params, hyper, Mode::Train, &mut rng)?;
            loss += l;
            accumulate(&mut sum, &g);
        }
        Ok((loss, sum))
    });
    let mut total = params.zeros_like();
    let mut loss = 0.0;
    for p in partials {
        let (l, g) = p?;
        loss += l;
        accumulate(&mut total, &g);
    }
    let scale = 1.0 / batch.len() as f64;
    for t in total.tensors_mut() {
        t.scale(scale);
    }
    Ok((loss * scale, total))
}

/// One optimizer step on `batch`; returns the mean loss before the update.
pub fn train_step<E: Executor>(
    batch: &[TrainingInstance],
    params: &mut ModelParams,
    opt: &mut Optimizer,
    hyper: &HyperParams,
    rng: &mut RngStream,
    exec: &E,
) -> Result<f64> {
    let step_seed = rng.next_u64();
    let (loss, grads) = batch_gradient(batch, params, hyper, step_seed, exec)?;
    opt.apply(params, &grads, hyper.lr, hyper.weight_decay)?;
    Ok(loss)
}

/// Number of trainable scalars, from the hyperparameters alone.
/// `num_behaviors` counts the target behavior too.
pub fn param_count(hyper: &HyperParams, num_items: usize, num_behaviors: usize) -> usize {
    let d = hyper.d;
    let w = 2 * d;
    let ab = hyper.ablation;
    let nb = num_behaviors + 1;
    let tables = (num_items + 1) * d + nb * d + nb * nb * d;
    let fcb = {
        let s = w / hyper.heads;
        hyper.heads * 2 * s * hyper.fcb_hidden() + w * w + 2 * w
    };
    let hip = if ab.no_hip {
        0
    } else {
        let scb = if ab.no_scb { 0 } else { 2 * hyper.len * hyper.scb_hidden() + 2 * w };
        let f = if ab.no_fcb { 0 } else { fcb };
        hyper.blocks * (scb + f) + w
    };
    let pip = if ab.no_pip {
        0
    } else {
        let m = num_behaviors.saturating_sub(1);
        let mixes = if ab.no_scb { 0 } else { m * 2 * hyper.aux_len * hyper.pip_hidden() };
        let f = if ab.no_fcb { 0 } else { fcb };
        hyper.blocks * (mixes + f)
    };
    let gate = if ab.no_hip || ab.no_pip { 0 } else { 2 * w * w + w };
    let output = w * num_items + num_items;
    tables + hip + pip + gate + output
}
