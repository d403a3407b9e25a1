use alloc::string::String;
use alloc::vec::Vec;

use super::{RngStream, Tensor};

/// Structural walk over the tensors of a parameter container.
///
/// Implementations must visit tensors in the same order in both methods.
pub trait Visit {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>);
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>);
}

/// Joins a parent path and a field name with `.`.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        alloc::format!("{prefix}.{name}")
    }
}

impl Visit for Tensor {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((String::from(prefix), self));
    }
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.push(self);
    }
}

impl<T: Visit> Visit for Option<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        if let Some(v) = self {
            v.visit(prefix, out);
        }
    }
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        if let Some(v) = self {
            v.visit_mut(out);
        }
    }
}

impl<T: Visit> Visit for Vec<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, v) in self.iter().enumerate() {
            v.visit(&join(prefix, &alloc::format!("{i}")), out);
        }
    }
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        for v in self.iter_mut() {
            v.visit_mut(out);
        }
    }
}

/// A named, ordered collection of parameter tensors.
///
/// The order of [`ParamSet::tensors`] is part of the contract: gradient
/// buffers, optimizer state and checkpoints all index tensors by it.
pub trait ParamSet {
    fn names(&self) -> Vec<String>;
    fn tensors(&self) -> Vec<&Tensor>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

impl<T: Visit> ParamSet for T {
    fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit("", &mut out);
        out.into_iter().map(|(n, _)| n).collect()
    }
    fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        self.visit("", &mut out);
        out.into_iter().map(|(_, t)| t).collect()
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        self.visit_mut(&mut out);
        out
    }
}

/// Adds every tensor of `src` into the matching tensor of `dst`.
pub fn accumulate<P: ParamSet>(dst: &mut P, src: &P) {
    for (d, s) in dst.tensors_mut().into_iter().zip(src.tensors()) {
        d.add_assign(s).expect("parameter sets share structure");
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Tensor name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Compares `analytic` against central differences of `loss_fn`.
///
/// Up to `samples` coordinates are drawn per tensor (every coordinate when a
/// tensor is smaller than that). The relative error of one coordinate is
/// `|a − n| / max(|a|, |n|, 1e-6)`. The floor keeps central-difference
/// roundoff on near-zero coordinates from dominating the report. `params` is restored bit-for-bit.
pub fn grad_check<P, F>(
    mut loss_fn: F,
    params: &mut P,
    analytic: &P,
    eps: f64,
    samples: usize,
    rng: &mut RngStream,
) -> GradCheckReport
where
    P: ParamSet,
    F: FnMut(&P) -> f64,
{
    let names = params.names();
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let grads: Vec<Vec<f64>> = analytic.tensors().iter().map(|t| t.data().to_vec()).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    for (k, &n) in sizes.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let coords: Vec<usize> = if n <= samples {
            (0..n).collect()
        } else {
            (0..samples).map(|_| rng.below(n)).collect()
        };
        for idx in coords {
            let orig = params.tensors()[k].data()[idx];
            params.tensors_mut()[k].data_mut()[idx] = orig + eps;
            let up = loss_fn(params);
            params.tensors_mut()[k].data_mut()[idx] = orig - eps;
            let down = loss_fn(params);
            params.tensors_mut()[k].data_mut()[idx] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = grads[k][idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            report.coordinates += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((names[k].clone(), idx));
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::sigmoid;
    use alloc::vec;

    #[test]
    fn exact_quadratic() {
        let mut rng = RngStream::new(1);
        let mut p = vec![Tensor::from_rows(&[&[0.3, -1.2, 2.5]])];
        let g = vec![p[0].map(|x| 2.0 * x)];
        let f = |p: &Vec<Tensor>| p[0].data().iter().map(|x| x * x).sum::<f64>();
        let r = grad_check(f, &mut p, &g, 1e-5, 10, &mut rng);
        assert!(r.max_rel_error < 1e-9, "{r:?}");
        assert_eq!(r.coordinates, 3);
        assert_eq!(p[0], Tensor::from_rows(&[&[0.3, -1.2, 2.5]]));
    }

    #[test]
    fn sigmoid_chain_closed_form() {
        let mut rng = RngStream::new(2);
        let x = [0.5, -1.0, 2.0];
        let mut p = vec![Tensor::from_rows(&[&[0.7]])];
        let f = |p: &Vec<Tensor>| {
            let w = p[0].data()[0];
            x.iter().map(|xi| sigmoid(w * xi)).sum::<f64>()
        };
        let w = 0.7;
        let d: f64 = x
            .iter()
            .map(|xi| {
                let s = sigmoid(w * xi);
                s * (1.0 - s) * xi
            })
            .sum();
        let g = vec![Tensor::from_rows(&[&[d]])];
        let r = grad_check(f, &mut p, &g, 1e-5, 10, &mut rng);
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let mut rng = RngStream::new(3);
        let mut p = vec![Tensor::from_rows(&[&[1.0, 2.0]])];
        let g = vec![Tensor::from_rows(&[&[2.0, 3.0]])];
        let f = |p: &Vec<Tensor>| p[0].data().iter().map(|x| x * x).sum::<f64>();
        let r = grad_check(f, &mut p, &g, 1e-5, 10, &mut rng);
        assert!(r.max_rel_error > 0.2);
        assert_eq!(r.worst, Some(("0".into(), 1)));
    }
}
