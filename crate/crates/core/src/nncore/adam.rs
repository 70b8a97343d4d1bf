use serde::{Deserialize, Serialize};

use super::mlp::{MlpGrads, MlpParams};
use crate::error::{shape_err, Error, Result};

/// Adam moments for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptState {
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptState {
    pub fn new(params: &MlpParams, learning_rate: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .weights
            .iter()
            .zip(&params.biases)
            .flat_map(|(w, b)| [vec![0.0; w.data().len()], vec![0.0; b.len()]])
            .collect();
        Self {
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, applied in place.
///
/// Gradients are checked for finiteness before anything is modified, so a
/// divergence error leaves both `params` and `state` untouched.
pub fn adam_step(params: &mut MlpParams, grads: &MlpGrads, state: &mut OptState) -> Result<()> {
    let names = params.buffer_names();
    let gbufs = grads.buffers();
    if gbufs.len() != state.first_moment.len() {
        return Err(shape_err(format!(
            "{} gradient buffers for {} optimizer slots",
            gbufs.len(),
            state.first_moment.len()
        )));
    }
    for ((g, m), name) in gbufs.iter().zip(&state.first_moment).zip(&names) {
        if g.len() != m.len() {
            return Err(shape_err(format!(
                "gradient for {name} has {} entries, parameter has {}",
                g.len(),
                m.len()
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!("non-finite gradient for {name}")));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.learning_rate, state.epsilon);

    for (((p, g), m), v) in params
        .buffers_mut()
        .into_iter()
        .zip(gbufs)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::mlp::Activation;
    use crate::nncore::tensor::Tensor2;

    fn scalar_net(w: f64) -> MlpParams {
        MlpParams::new(
            vec![1, 1],
            vec![Tensor2::from_vec(1, 1, vec![w]).unwrap()],
            vec![vec![0.0]],
            Activation::Identity,
        )
        .unwrap()
    }

    fn scalar_grad(g: f64) -> MlpGrads {
        MlpGrads {
            weights: vec![Tensor2::from_vec(1, 1, vec![g]).unwrap()],
            biases: vec![vec![0.0]],
        }
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = scalar_net(0.3);
        let before = p.clone();
        let mut s = OptState::new(&p, 1e-3);
        for _ in 0..5 {
            adam_step(&mut p, &scalar_grad(0.0), &mut s).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(s.step, 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_gradient() {
        for g in [2.5, -0.01] {
            let mut p = scalar_net(1.0);
            let mut s = OptState::new(&p, 1e-3);
            adam_step(&mut p, &scalar_grad(g), &mut s).unwrap();
            let delta = p.weights[0].get(0, 0) - 1.0;
            assert!((delta + 1e-3 * g.signum()).abs() < 1e-9, "delta {delta}");
        }
    }

    #[test]
    fn two_constant_steps_move_twice_the_rate() {
        // m̂ = v̂ = 1 at every step for a constant unit gradient
        let mut p = scalar_net(0.0);
        let mut s = OptState::new(&p, 1e-3);
        adam_step(&mut p, &scalar_grad(1.0), &mut s).unwrap();
        adam_step(&mut p, &scalar_grad(1.0), &mut s).unwrap();
        assert!((p.weights[0].get(0, 0) + 0.002).abs() < 1e-10);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = scalar_net(0.0);
        let mut s = OptState::new(&p, 1e-3);
        let mut g = scalar_grad(0.0);
        g.weights[0].data_mut()[0] = f64::INFINITY;
        let err = adam_step(&mut p, &g, &mut s).unwrap_err();
        match err {
            Error::Divergence(msg) => assert!(msg.contains("layer0.weight")),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(s.step, 0);
    }
}
