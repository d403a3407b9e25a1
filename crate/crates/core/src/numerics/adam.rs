use alloc::string::ToString;

use super::Tensor;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(param: &Tensor) -> Self {
        AdamState {
            m: param.zeros_like(),
            v: param.zeros_like(),
            t: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }
}

/// One bias-corrected Adam update. `weight_decay` is an L2 term added to the
/// gradient before the moment update. Nothing is modified when the gradient
/// is non-finite.
pub fn adam_step(
    name: &str,
    param: &mut Tensor,
    grad: &Tensor,
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if param.shape() != grad.shape() || state.m.shape() != param.shape() {
        return Err(Error::shape("adam_step", param.shape(), grad.shape()));
    }
    if !grad.is_finite() {
        return Err(Error::NonFiniteGradient {
            param: name.to_string(),
            step: state.t + 1,
        });
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - libm::pow(state.beta1, t as f64);
    let bc2 = 1.0 - libm::pow(state.beta2, t as f64);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let p = param.data_mut();
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for (i, &g0) in grad.data().iter().enumerate() {
        let g = g0 + weight_decay * p[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let mh = m[i] / bc1;
        let vh = v[i] / bc2;
        p[i] -= lr * mh / (libm::sqrt(vh) + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = Tensor::from_rows(&[&[1.0, -2.0, 0.5]]);
        let g = Tensor::from_rows(&[&[3.0, -0.2, 1e-2]]);
        let mut s = AdamState::new(&p);
        let before = p.clone();
        adam_step("p", &mut p, &g, &mut s, 0.01, 0.0).unwrap();
        for i in 0..3 {
            let delta = p.data()[i] - before.data()[i];
            let expect = -0.01 * g.data()[i].signum();
            assert!((delta - expect).abs() < 1e-6 * 0.01);
        }
        assert_eq!(s.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_param() {
        let mut p = Tensor::from_rows(&[&[1.0, -2.0]]);
        let mut s = AdamState::new(&p);
        adam_step("p", &mut p, &Tensor::zeros(&[1, 2]), &mut s, 0.1, 0.0).unwrap();
        assert_eq!(p, Tensor::from_rows(&[&[1.0, -2.0]]));
    }

    #[test]
    fn converges_on_quadratic() {
        let mut x = Tensor::from_rows(&[&[5.0]]);
        let mut s = AdamState::new(&x);
        for _ in 0..1000 {
            let g = x.map(|v| 2.0 * v);
            adam_step("x", &mut x, &g, &mut s, 0.1, 0.0).unwrap();
        }
        assert!(x.data()[0].abs() < 0.01, "{}", x.data()[0]);
    }

    #[test]
    fn non_finite_gradient_is_reported() {
        let mut p = Tensor::zeros(&[1, 2]);
        let mut s = AdamState::new(&p);
        let g = Tensor::from_rows(&[&[f64::NAN, 0.0]]);
        let err = adam_step("gate.w_g", &mut p, &g, &mut s, 0.1, 0.0).unwrap_err();
        assert_eq!(
            err,
            Error::NonFiniteGradient {
                param: "gate.w_g".into(),
                step: 1
            }
        );
        assert_eq!(s.t, 0);
    }

    #[test]
    fn deterministic() {
        let p0 = Tensor::from_rows(&[&[0.3, -0.7]]);
        let g = Tensor::from_rows(&[&[0.1, 0.4]]);
        let run = || {
            let mut p = p0.clone();
            let mut s = AdamState::new(&p);
            for _ in 0..5 {
                adam_step("p", &mut p, &g, &mut s, 0.05, 1e-3).unwrap();
            }
            (p, s)
        };
        assert_eq!(run(), run());
    }
}
