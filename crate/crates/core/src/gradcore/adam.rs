use crate::error::{Error, Result};

use super::params::ParamSet;
use super::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &ParamSet, learning_rate: f64) -> Self {
        let zeros = |p: &ParamSet| p.values().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            m: zeros(params),
            v: zeros(params),
            t: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut ParamSet, grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    adam_step_masked(params, grads, state, &vec![true; params.len()])
}

/// Adam update touching only parameters (and moments) where `trainable` holds.
pub fn adam_step_masked(
    params: &mut ParamSet,
    grads: &[Tensor],
    state: &mut AdamState,
    trainable: &[bool],
) -> Result<()> {
    if grads.len() != params.len()
        || state.m.len() != params.len()
        || trainable.len() != params.len()
    {
        return Err(Error::shape(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.values().iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::shape(format!(
                "adam: param {:?} vs grad {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((p, g), (m, v)), _) in params
        .values_mut()
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
        .zip(trainable)
        .filter(|(_, &on)| on)
    {
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = b1 * *mv + (1.0 - b1) * gv;
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            let m_hat = *mv / c1;
            let v_hat = *vv / c2;
            *pv -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::scalar(w)).unwrap();
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = single(0.3);
        let mut s = AdamState::new(&p, 0.1);
        adam_step(&mut p, &[Tensor::scalar(0.0)], &mut s).unwrap();
        assert_eq!(p.get("w").unwrap().item(), 0.3);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_is_learning_rate() {
        // m_hat = v_hat = 1, so the step is lr / (1 + eps).
        let mut p = single(0.0);
        let mut s = AdamState::new(&p, 0.1);
        adam_step(&mut p, &[Tensor::scalar(1.0)], &mut s).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((p.get("w").unwrap().item() - expected).abs() < 1e-15);
    }

    #[test]
    fn descends_quadratic() {
        let mut p = single(1.0);
        let mut s = AdamState::new(&p, 0.1);
        let mut f = 1.0;
        for _ in 0..2 {
            let w = p.get("w").unwrap().item();
            adam_step(&mut p, &[Tensor::scalar(2.0 * w)], &mut s).unwrap();
            let w = p.get("w").unwrap().item();
            assert!(w * w < f);
            f = w * w;
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut p = single(1.0);
        let mut s = AdamState::new(&p, 0.1);
        assert!(adam_step(&mut p, &[Tensor::zeros(&[2])], &mut s).is_err());
    }

    #[test]
    fn masked_parameters_and_moments_stay_put() {
        let mut p = single(1.0);
        p.insert("u", Tensor::scalar(2.0)).unwrap();
        let mut s = AdamState::new(&p, 0.1);
        let g = [Tensor::scalar(1.0), Tensor::scalar(1.0)];
        adam_step_masked(&mut p, &g, &mut s, &[false, true]).unwrap();
        assert_eq!(p.get("w").unwrap().item(), 1.0);
        assert_eq!(s.m[0].item(), 0.0);
        assert!(p.get("u").unwrap().item() < 2.0);
    }
}
