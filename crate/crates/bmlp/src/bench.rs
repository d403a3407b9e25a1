//! Step-time scaling over the sequence length.

use std::hint::black_box;
use std::time::Instant;

use anyhow::Result;
use bmlp_core::encoding::{extract_aux, HeteroSequence, Vocab};
use bmlp_core::eval::{TimingCurve, TimingPoint};
use bmlp_core::model::{forward_backward, HyperParams, InstanceId, ModelParams, TrainingInstance};
use bmlp_core::numerics::{Mode, RngStream, Tensor};

use crate::config::BenchConfig;

/// Something whose per-step cost is measured at several lengths.
pub trait Workload {
    fn prepare(&mut self, len: usize) -> Result<()>;
    fn step(&mut self) -> Result<()>;
}

/// Instances per measured step.
pub const STEP_BATCH: usize = 4;

/// `L × L` products per step in the quadratic control, enough for the
/// quadratic term to dominate at the benchmark lengths.
pub const QUADRATIC_REPEATS: usize = 48;

fn synthetic_vocab(cfg: &BenchConfig) -> Result<Vocab> {
    let items = (1..=cfg.num_items).map(|k| format!("i{k}")).collect();
    let behaviors: Vec<String> = (1..=cfg.num_behaviors).map(|k| format!("b{k}")).collect();
    let target = behaviors.last().cloned().unwrap_or_default();
    Ok(Vocab::from_parts(items, behaviors, &target)?)
}

/// Forward plus backward pass of the full model on full-length windows.
pub struct ModelWorkload {
    cfg: BenchConfig,
    vocab: Vocab,
    seed: u64,
    state: Option<(HyperParams, ModelParams, Vec<TrainingInstance>, RngStream)>,
    /// Optional extra `X·Xᵀ·X` on an `L × 2d` matrix each step.
    quadratic: bool,
}

impl ModelWorkload {
    pub fn new(cfg: &BenchConfig, seed: u64) -> Result<Self> {
        Ok(ModelWorkload {
            vocab: synthetic_vocab(cfg)?,
            cfg: cfg.clone(),
            seed,
            state: None,
            quadratic: false,
        })
    }

    /// The model step plus a deliberately quadratic term, used to show the
    /// benchmark can tell the two apart.
    pub fn quadratic(cfg: &BenchConfig, seed: u64) -> Result<Self> {
        Ok(ModelWorkload {
            quadratic: true,
            ..Self::new(cfg, seed)?
        })
    }

    pub fn hyper(&self, len: usize) -> HyperParams {
        HyperParams {
            d: self.cfg.d,
            heads: self.cfg.heads,
            blocks: self.cfg.blocks,
            d_t: Some(self.cfg.d_t),
            d_c: Some(self.cfg.d_c),
            len,
            aux_len: self.cfg.aux_len.min(len),
            seed: self.seed,
            ..HyperParams::default()
        }
    }
}

impl Workload for ModelWorkload {
    fn prepare(&mut self, len: usize) -> Result<()> {
        let hyper = self.hyper(len);
        let mut rng = RngStream::at(self.seed, len as u64, 0);
        let params = ModelParams::init(&hyper, self.vocab.num_items(), self.vocab.num_behaviors(), &mut rng)?;
        let (ni, nb) = (self.vocab.num_items(), self.vocab.num_behaviors());
        let batch = (0..STEP_BATCH)
            .map(|k| {
                let history: Vec<(u32, u32)> =
                    (0..len).map(|_| (1 + rng.below(ni) as u32, 1 + rng.below(nb) as u32)).collect();
                let target = 1 + rng.below(ni) as u32;
                TrainingInstance {
                    hetero: HeteroSequence::from_history(&history, len, target, k as u32),
                    aux: extract_aux(&history, hyper.aux_len, &self.vocab),
                    target_item: target,
                    id: InstanceId {
                        user: k as u32,
                        position: len,
                    },
                }
            })
            .collect();
        self.state = Some((hyper, params, batch, rng));
        Ok(())
    }

    fn step(&mut self) -> Result<()> {
        let (hyper, params, batch, rng) = self.state.as_mut().expect("prepare runs first");
        for inst in batch.iter() {
            let (loss, _) = forward_backward(inst, params, hyper, Mode::Train, rng)?;
            black_box(loss);
        }
        if self.quadratic {
            let x = Tensor::filled(&[hyper.len, 2 * hyper.d], 1e-3);
            for _ in 0..QUADRATIC_REPEATS {
                let g = x.matmul_t(&x)?;
                black_box(g.matmul(&x)?);
            }
        }
        Ok(())
    }
}

/// Fixed work regardless of length.
pub struct ConstantWorkload {
    x: Tensor,
}

impl Default for ConstantWorkload {
    fn default() -> Self {
        ConstantWorkload {
            x: Tensor::filled(&[48, 48], 0.5),
        }
    }
}

impl Workload for ConstantWorkload {
    fn prepare(&mut self, _len: usize) -> Result<()> {
        Ok(())
    }

    fn step(&mut self) -> Result<()> {
        black_box(self.x.matmul(&self.x)?);
        Ok(())
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Times `repetitions` steps after `warmup` unmeasured ones at each length.
pub fn bench_scaling<W: Workload>(w: &mut W, lens: &[usize], repetitions: usize, warmup: usize) -> Result<TimingCurve> {
    let mut points = Vec::with_capacity(lens.len());
    for &len in lens {
        w.prepare(len)?;
        for _ in 0..warmup {
            w.step()?;
        }
        let mut ms = Vec::with_capacity(repetitions);
        for _ in 0..repetitions.max(1) {
            let t0 = Instant::now();
            w.step()?;
            ms.push(t0.elapsed().as_secs_f64() * 1e3);
        }
        let (mean_ms, std_ms) = mean_std(&ms);
        points.push(TimingPoint { len, mean_ms, std_ms });
    }
    Ok(TimingCurve::from_points(points)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_stub_is_flat() {
        let c = bench_scaling(&mut ConstantWorkload::default(), &[64, 128, 256, 512], 200, 10).unwrap();
        assert_eq!(c.points.len(), 4);
        assert!(c.ratio_2x.iter().all(|&r| r > 0.4 && r < 2.5), "{:?}", c.ratio_2x);
    }

    #[test]
    fn model_workload_runs() {
        let cfg = BenchConfig {
            d: 4,
            d_t: 4,
            d_c: 8,
            num_items: 8,
            ..BenchConfig::default()
        };
        let c = bench_scaling(&mut ModelWorkload::new(&cfg, 1).unwrap(), &[8, 16, 32, 64], 2, 1).unwrap();
        assert!(c.points.iter().all(|p| p.mean_ms > 0.0));
    }
}
