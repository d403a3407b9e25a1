//! Epoch loop with validation and early stopping.

use std::time::Instant;

use anyhow::{Context, Result};
use bmlp_core::data::EvalSample;
use bmlp_core::encoding::Vocab;
use bmlp_core::eval::{evaluate, Group};
use bmlp_core::exec::Executor;
use bmlp_core::model::{train_step, HyperParams, ModelParams, Optimizer, TrainingInstance};
use bmlp_core::numerics::RngStream;
use rand::seq::SliceRandom;

/// Stream of the root seed used for parameter initialization.
pub const INIT_STREAM: u64 = 0;
/// Stream used for shuffling and per-step dropout seeds.
pub const TRAIN_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    /// Mean training loss over the epoch's instances.
    pub loss: f64,
    /// `None` on epochs without validation.
    pub val_hr10: Option<f64>,
    pub val_ndcg10: Option<f64>,
}

impl LogRow {
    pub const HEADER: &'static str = "epoch\tloss\tval_hr10\tval_ndcg10";

    pub fn tsv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.17e}"));
        format!("{}\t{:.17e}\t{}\t{}", self.epoch, self.loss, opt(self.val_hr10), opt(self.val_ndcg10))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the best validation HR@10 (the final ones when no
    /// validation ran).
    pub best: ModelParams,
    pub best_epoch: usize,
    pub best_val_hr10: Option<f64>,
    pub last: ModelParams,
    pub log: Vec<LogRow>,
    /// Wall time per epoch, kept apart from `log` so logs stay reproducible.
    pub epoch_ms: Vec<f64>,
    pub stopped_early: bool,
}

pub fn init_params(hyper: &HyperParams, vocab: &Vocab) -> Result<ModelParams> {
    let mut rng = RngStream::at(hyper.seed, INIT_STREAM, 0);
    Ok(ModelParams::init(hyper, vocab.num_items(), vocab.num_behaviors(), &mut rng)?)
}

pub struct TrainInput<'a> {
    pub instances: &'a [TrainingInstance],
    pub validation: &'a [EvalSample],
    pub vocab: &'a Vocab,
    pub hyper: &'a HyperParams,
    pub eval_every: usize,
}

/// Trains from a fresh initialization. `on_epoch` sees each log row as it
/// is produced.
pub fn train<E: Executor>(input: &TrainInput, exec: &E, mut on_epoch: impl FnMut(&LogRow)) -> Result<TrainOutcome> {
    let hyper = input.hyper;
    let mut params = init_params(hyper, input.vocab)?;
    let mut opt = Optimizer::new(&params);
    let mut rng = RngStream::at(hyper.seed, TRAIN_STREAM, 0);
    let mut order: Vec<TrainingInstance> = input.instances.to_vec();
    if order.is_empty() {
        anyhow::bail!("no training instances");
    }

    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut best_hr: Option<f64> = None;
    let mut since_best = 0;
    let mut log = Vec::new();
    let mut epoch_ms = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=hyper.epochs {
        let t0 = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(hyper.batch_size) {
            let loss = train_step(batch, &mut params, &mut opt, hyper, &mut rng, exec)
                .with_context(|| format!("training epoch {epoch}"))?;
            total += loss * batch.len() as f64;
        }
        let mut row = LogRow {
            epoch,
            loss: total / order.len() as f64,
            val_hr10: None,
            val_ndcg10: None,
        };
        let validate = !input.validation.is_empty() && (epoch % input.eval_every == 0 || epoch == hyper.epochs);
        if validate {
            let r = evaluate(&params, hyper, input.vocab, input.validation, Group::All, &[10], exec)
                .with_context(|| format!("validating after epoch {epoch}"))?;
            let m = r.at(10).expect("k = 10 requested");
            row.val_hr10 = Some(m.hr);
            row.val_ndcg10 = Some(m.ndcg);
            if best_hr.is_none_or(|b| m.hr > b) {
                best_hr = Some(m.hr);
                best = params.clone();
                best_epoch = epoch;
                since_best = 0;
            } else {
                since_best += 1;
            }
        }
        epoch_ms.push(t0.elapsed().as_secs_f64() * 1e3);
        on_epoch(&row);
        log.push(row);
        if validate && hyper.patience > 0 && since_best >= hyper.patience {
            stopped_early = epoch < hyper.epochs;
            break;
        }
    }
    if best_hr.is_none() {
        best = params.clone();
        best_epoch = log.len();
    }
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_val_hr10: best_hr,
        last: params,
        log,
        epoch_ms,
        stopped_early,
    })
}
