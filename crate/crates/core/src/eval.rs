//! Full-ranking metrics, evaluation groups and timing-curve summaries.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{sample_instance, EvalSample};
use crate::encoding::Vocab;
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::model::{score, HyperParams, ModelParams};

/// 1-based rank of `target` among items `1..scores.len()` by descending
/// score; equal scores rank by ascending item index. Index 0 is padding and
/// never ranked.
pub fn rank_of_target(scores: &[f64], target: u32) -> Result<usize> {
    let t = target as usize;
    if t == 0 || t >= scores.len() {
        return Err(Error::InvalidTarget(target));
    }
    let st = scores[t];
    let ahead = scores[1..]
        .iter()
        .enumerate()
        .filter(|&(k, &s)| {
            let j = k + 1;
            j != t && (s > st || (s == st && j < t))
        })
        .count();
    Ok(ahead + 1)
}

pub fn hr_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::UndefinedMetric);
    }
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

/// Single relevant item, so the ideal DCG is 1.
pub fn ndcg_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::UndefinedMetric);
    }
    let sum: f64 = ranks
        .iter()
        .filter(|&&r| r <= k)
        .map(|&r| 1.0 / libm::log2(r as f64 + 1.0))
        .sum();
    Ok(sum / ranks.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    All,
    Examined,
    Unexamined,
    Intent,
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Group::All => "all",
            Group::Examined => "examined",
            Group::Unexamined => "unexamined",
            Group::Intent => "intent",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricAt {
    pub k: usize,
    pub hr: f64,
    pub ndcg: f64,
}

/// Metrics of one sample group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub group: Group,
    pub n_samples: usize,
    pub metrics: Vec<MetricAt>,
    /// Measured by the caller; kept out of serialized reports so that they
    /// are reproducible byte for byte.
    #[serde(skip)]
    pub wall_time_ms: f64,
}

impl EvalReport {
    pub fn from_ranks(group: Group, ranks: &[usize], ks: &[usize]) -> Result<Self> {
        let metrics = ks
            .iter()
            .map(|&k| {
                Ok(MetricAt {
                    k,
                    hr: hr_at_k(ranks, k)?,
                    ndcg: ndcg_at_k(ranks, k)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EvalReport {
            group,
            n_samples: ranks.len(),
            metrics,
            wall_time_ms: 0.0,
        })
    }

    pub fn at(&self, k: usize) -> Option<&MetricAt> {
        self.metrics.iter().find(|m| m.k == k)
    }
}

/// Whether the target item occurs among the last `window` history events.
pub fn is_examined(sample: &EvalSample, window: usize) -> bool {
    let h = &sample.history;
    h[h.len().saturating_sub(window)..]
        .iter()
        .any(|e| e.item == sample.target.item)
}

/// Indices of examined and unexamined samples.
pub fn group_examined(samples: &[EvalSample], window: usize) -> (Vec<usize>, Vec<usize>) {
    (0..samples.len()).partition(|&k| is_examined(&samples[k], window))
}

/// Eval-mode rank of every sample's target, in sample order.
pub fn rank_samples<E: Executor>(
    params: &ModelParams,
    hyper: &HyperParams,
    vocab: &Vocab,
    samples: &[EvalSample],
    exec: &E,
) -> Result<Vec<usize>> {
    exec.map(samples.len(), |k| {
        let s = &samples[k];
        let inst = sample_instance(s, vocab, hyper.len, hyper.aux_len);
        let scores = score(&inst, params, hyper)?;
        rank_of_target(scores.data(), s.target.item)
    })
    .into_iter()
    .collect()
}

pub fn evaluate<E: Executor>(
    params: &ModelParams,
    hyper: &HyperParams,
    vocab: &Vocab,
    samples: &[EvalSample],
    group: Group,
    ks: &[usize],
    exec: &E,
) -> Result<EvalReport> {
    let ranks = rank_samples(params, hyper, vocab, samples, exec)?;
    EvalReport::from_ranks(group, &ranks, ks)
}

/// Reports for all samples and for the examined and unexamined subsets.
/// An empty subset yields no report. Also returns the examined rate.
pub fn evaluate_grouped<E: Executor>(
    params: &ModelParams,
    hyper: &HyperParams,
    vocab: &Vocab,
    samples: &[EvalSample],
    ks: &[usize],
    exec: &E,
) -> Result<(Vec<EvalReport>, f64)> {
    let ranks = rank_samples(params, hyper, vocab, samples, exec)?;
    let mut out = vec![EvalReport::from_ranks(Group::All, &ranks, ks)?];
    let (ex, un) = group_examined(samples, hyper.len);
    for (group, idx) in [(Group::Examined, &ex), (Group::Unexamined, &un)] {
        if idx.is_empty() {
            continue;
        }
        let r: Vec<usize> = idx.iter().map(|&k| ranks[k]).collect();
        out.push(EvalReport::from_ranks(group, &r, ks)?);
    }
    Ok((out, ex.len() as f64 / samples.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingPoint {
    pub len: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
}

/// Least-squares line `mean_ms ≈ slope·len + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    LinearFit { slope, intercept, r2 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingCurve {
    pub points: Vec<TimingPoint>,
    pub fit: LinearFit,
    /// `mean(L_{k+1}) / mean(L_k)` for adjacent points.
    pub ratio_2x: Vec<f64>,
}

impl TimingCurve {
    pub fn from_points(points: Vec<TimingPoint>) -> Result<Self> {
        if points.len() < 4 {
            return Err(Error::Config("a timing curve needs at least 4 lengths".into()));
        }
        let xs: Vec<f64> = points.iter().map(|p| p.len as f64).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.mean_ms).collect();
        let ratio_2x = points.windows(2).map(|w| w[1].mean_ms / w[0].mean_ms).collect();
        Ok(TimingCurve {
            fit: linear_fit(&xs, &ys),
            points,
            ratio_2x,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Event;
    use crate::numerics::RngStream;

    #[test]
    fn rank_examples() {
        assert_eq!(rank_of_target(&[0.0, 0.1, 0.7, 0.2], 2).unwrap(), 1);
        assert_eq!(rank_of_target(&[0.0, 0.2, 0.2, 0.2, 0.2, 0.2], 3).unwrap(), 3);
        assert_eq!(rank_of_target(&[0.0, 0.5], 0).unwrap_err(), Error::InvalidTarget(0));
        assert_eq!(rank_of_target(&[0.0, 0.5], 2).unwrap_err(), Error::InvalidTarget(2));
        // the padding entry is ignored even when it scores highest
        assert_eq!(rank_of_target(&[9.0, 0.1, 0.2], 2).unwrap(), 1);
    }

    #[test]
    fn rank_matches_sort_oracle() {
        let mut rng = RngStream::new(1);
        for _ in 0..200 {
            let n = 2 + rng.below(30);
            let scores: Vec<f64> = (0..=n).map(|_| (rng.below(8) as f64) / 8.0).collect();
            let mut order: Vec<usize> = (1..=n).collect();
            order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
            let t = 1 + rng.below(n);
            let expect = order.iter().position(|&j| j == t).unwrap() + 1;
            assert_eq!(rank_of_target(&scores, t as u32).unwrap(), expect);
        }
    }

    #[test]
    fn metric_contributions() {
        assert_eq!(hr_at_k(&[1], 10).unwrap(), 1.0);
        assert_eq!(ndcg_at_k(&[1], 10).unwrap(), 1.0);
        assert_eq!(ndcg_at_k(&[3], 10).unwrap(), 0.5);
        assert_eq!(hr_at_k(&[11], 10).unwrap(), 0.0);
        assert_eq!(ndcg_at_k(&[11], 10).unwrap(), 0.0);
        assert_eq!(hr_at_k(&[], 10).unwrap_err(), Error::UndefinedMetric);
        assert_eq!(ndcg_at_k(&[], 10).unwrap_err(), Error::UndefinedMetric);
    }

    fn ev(item: u32) -> Event {
        Event {
            item,
            behavior: 1,
            timestamp: 0,
        }
    }

    #[test]
    fn examined_membership() {
        let s = |h: Vec<u32>, t: u32| EvalSample {
            user: 0,
            position: h.len(),
            history: h.into_iter().map(ev).collect(),
            target: ev(t),
        };
        let samples = vec![s(vec![1], 1), s(vec![1], 2), s(vec![2, 3, 1], 2)];
        let (ex, un) = group_examined(&samples, 50);
        assert_eq!(ex, vec![0, 2]);
        assert_eq!(un, vec![1]);
        // outside the window
        let (ex, _) = group_examined(&samples, 1);
        assert_eq!(ex, vec![0]);
    }

    #[test]
    fn fit_recovers_line() {
        let xs = [64.0, 128.0, 256.0, 512.0];
        let ys: Vec<f64> = xs.iter().map(|x| 0.5 * x + 3.0).collect();
        let f = linear_fit(&xs, &ys);
        assert!((f.slope - 0.5).abs() < 1e-12);
        assert!((f.intercept - 3.0).abs() < 1e-9);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        let flat = linear_fit(&xs, &[2.0; 4]);
        assert_eq!(flat.slope, 0.0);
    }

    #[test]
    fn curve_ratios() {
        let pts = [64, 128, 256, 512]
            .iter()
            .map(|&l| TimingPoint {
                len: l,
                mean_ms: l as f64,
                std_ms: 0.0,
            })
            .collect();
        let c = TimingCurve::from_points(pts).unwrap();
        assert_eq!(c.ratio_2x, vec![2.0, 2.0, 2.0]);
        assert!(TimingCurve::from_points(vec![]).is_err());
    }
}
