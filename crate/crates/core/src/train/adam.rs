use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates for a list of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub lr_base: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &[Tensor], lr_base: f64) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
            lr_base,
            beta1: BETA1,
            beta2: BETA2,
            eps: ADAM_EPS,
        }
    }

    /// Clears both moments and the step counter.
    pub fn reset(&mut self) {
        self.step = 0;
        for t in self.m.iter_mut().chain(self.v.iter_mut()) {
            t.data_mut().fill(0.0);
        }
    }
}

/// One bias-corrected Adam update. `names` labels parameters in errors;
/// entries of `frozen` are skipped. Gradients are zeroed afterwards.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &mut [Tensor],
    state: &mut AdamState,
    lr: f64,
    names: &[&str],
    frozen: &[bool],
) -> Result<()> {
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    assert_eq!(params.len(), state.m.len(), "optimizer state does not match parameters");
    for (i, g) in grads.iter().enumerate() {
        if g.data().iter().any(|x| !x.is_finite()) {
            let name = names.get(i).copied().unwrap_or("?");
            return Err(Error::NonFinite(format!("gradient of parameter {name}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        if frozen.get(i).copied().unwrap_or(false) {
            continue;
        }
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let p = params[i].data_mut();
        for k in 0..p.len() {
            m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
            v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
            let mh = m[k] / c1;
            let vh = v[k] / c2;
            p[k] -= lr * mh / (vh.sqrt() + state.eps);
        }
    }
    for g in grads.iter_mut() {
        g.data_mut().fill(0.0);
    }
    Ok(())
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|g| g.data()).map(|x| x * x).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(x: f64) -> Vec<Tensor> {
        vec![Tensor::scalar(x)]
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = one(1.5);
        let mut s = AdamState::new(&p, 0.1);
        adam_step(&mut p, &mut one(0.0), &mut s, 0.1, &["w"], &[false]).unwrap();
        assert_eq!(p[0].data()[0], 1.5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [0.3, -2.0, 1e3] {
            let mut p = one(0.0);
            let mut s = AdamState::new(&p, 0.01);
            adam_step(&mut p, &mut one(g), &mut s, 0.01, &["w"], &[false]).unwrap();
            // m_hat = g, v_hat = g^2
            let expect = -0.01 * g / (g.abs() + ADAM_EPS);
            assert!((p[0].data()[0] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn state_advances() {
        let mut a = one(0.0);
        let mut s = AdamState::new(&a, 0.01);
        adam_step(&mut a, &mut one(1.0), &mut s, 0.01, &["w"], &[false]).unwrap();
        let after_one = a[0].data()[0];
        adam_step(&mut a, &mut one(1.0), &mut s, 0.01, &["w"], &[false]).unwrap();
        assert_ne!(a[0].data()[0], after_one);
        assert_eq!(s.step, 2);
    }

    #[test]
    fn gradients_are_zeroed() {
        let mut p = one(0.0);
        let mut g = one(4.0);
        let mut s = AdamState::new(&p, 0.01);
        adam_step(&mut p, &mut g, &mut s, 0.01, &["w"], &[false]).unwrap();
        assert_eq!(g[0].data()[0], 0.0);
    }

    #[test]
    fn non_finite_names_parameter() {
        let mut p = vec![Tensor::scalar(0.0), Tensor::scalar(0.0)];
        let mut g = vec![Tensor::scalar(1.0), Tensor::scalar(f64::NAN)];
        let mut s = AdamState::new(&p, 0.01);
        let err = adam_step(&mut p, &mut g, &mut s, 0.01, &["a", "dec.w"], &[false, false]).unwrap_err();
        assert!(err.to_string().contains("dec.w"));
        assert_eq!(p[0].data()[0], 0.0);
    }

    #[test]
    fn frozen_parameter_is_not_updated() {
        let mut p = one(2.0);
        let mut s = AdamState::new(&p, 0.01);
        adam_step(&mut p, &mut one(1.0), &mut s, 0.01, &["w"], &[true]).unwrap();
        assert_eq!(p[0].data()[0], 2.0);
    }

    #[test]
    fn clipping() {
        let mut g = vec![Tensor::new(vec![2], vec![3.0, 4.0])];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15);
        let mut g = vec![Tensor::new(vec![2], vec![0.3, 0.4])];
        clip_global_norm(&mut g, 1.0);
        assert_eq!(g[0].data(), &[0.3, 0.4]);
    }
}
