use serde::{Deserialize, Serialize};

use crate::nn::ModelParams;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;
/// Epochs without a new best training loss before the rate is halved.
pub const PLATEAU_PATIENCE: usize = 5;

/// Adam moments plus the plateau-schedule bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step: u64,
    pub learning_rate: f64,
    pub plateau_epochs: usize,
    pub best_loss: Option<f64>,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, learning_rate: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .trainable()
            .iter()
            .map(|s| vec![0.0; s.len()])
            .collect();
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step: 0,
            learning_rate,
            plateau_epochs: 0,
            best_loss: None,
        }
    }
}

/// One bias-corrected Adam step.
pub fn adam_update(params: &mut ModelParams, grads: &ModelParams, state: &mut OptimizerState) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    let lr = state.learning_rate;
    for (((p, g), m), v) in params
        .trainable_mut()
        .into_iter()
        .zip(grads.trainable())
        .zip(&mut state.first_moment)
        .zip(&mut state.second_moment)
    {
        for i in 0..p.len() {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
}

/// Halves the learning rate once the epoch training loss has gone
/// [`PLATEAU_PATIENCE`] epochs without strictly beating the best loss seen.
/// The first epoch has nothing to improve on, so it counts as a
/// non-improving epoch.
pub fn lr_plateau_schedule(state: &mut OptimizerState, epoch_loss: f64) {
    match state.best_loss {
        Some(best) if epoch_loss < best => {
            state.best_loss = Some(epoch_loss);
            state.plateau_epochs = 0;
        }
        Some(_) => state.plateau_epochs += 1,
        None => {
            state.best_loss = Some(epoch_loss);
            state.plateau_epochs = 1;
        }
    }
    if state.plateau_epochs >= PLATEAU_PATIENCE {
        state.learning_rate *= 0.5;
        state.plateau_epochs = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{DenseParams, LayerParams};

    fn one_weight(w: f64) -> ModelParams {
        ModelParams {
            layers: vec![LayerParams::Dense(DenseParams {
                outputs: 1,
                inputs: 1,
                weights: vec![w],
                bias: vec![0.0],
            })],
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = one_weight(0.7);
        let mut st = OptimizerState::new(&p, 1e-3);
        st.first_moment[0][0] = 0.5;
        st.second_moment[0][0] = 0.25;
        let g = p.zeros_like();
        // nonzero moments still move the weight; a fresh state must not
        let mut fresh = OptimizerState::new(&p, 1e-3);
        let before = p.clone();
        adam_update(&mut p, &g, &mut fresh);
        assert_eq!(p, before);
        assert_eq!(fresh.step, 1);
        let mut q = one_weight(0.7);
        adam_update(&mut q, &g, &mut st);
        assert_eq!(st.first_moment[0][0], 0.45);
        assert!((st.second_moment[0][0] - 0.24975).abs() < 1e-15);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        for g0 in [3.0, -0.02] {
            let mut p = one_weight(0.0);
            let mut st = OptimizerState::new(&p, 1e-3);
            let mut g = p.zeros_like();
            let LayerParams::Dense(d) = &mut g.layers[0] else {
                panic!()
            };
            d.weights[0] = g0;
            adam_update(&mut p, &g, &mut st);
            let LayerParams::Dense(d) = &p.layers[0] else {
                panic!()
            };
            let expect = -1e-3 * g0 / (g0.abs() + EPSILON);
            assert!((d.weights[0] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_gradient_tends_to_lr_steps() {
        let mut p = one_weight(0.0);
        let mut st = OptimizerState::new(&p, 1e-3);
        let mut g = p.zeros_like();
        let LayerParams::Dense(d) = &mut g.layers[0] else {
            panic!()
        };
        d.weights[0] = -0.4;
        let mut last = 0.0;
        for _ in 0..5000 {
            let LayerParams::Dense(d) = &p.layers[0] else {
                panic!()
            };
            last = d.weights[0];
            adam_update(&mut p, &g, &mut st);
        }
        let LayerParams::Dense(d) = &p.layers[0] else {
            panic!()
        };
        assert!(((d.weights[0] - last) - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn plateau_examples() {
        let p = one_weight(0.0);
        let mut st = OptimizerState::new(&p, 0.001);
        for e in 0..20 {
            lr_plateau_schedule(&mut st, 10.0 - e as f64);
        }
        assert_eq!(st.learning_rate, 0.001);

        let mut st = OptimizerState::new(&p, 0.001);
        for e in 1..=10 {
            lr_plateau_schedule(&mut st, 1.0);
            if e == 4 {
                assert_eq!(st.learning_rate, 0.001);
            }
            if e == 5 {
                assert_eq!(st.learning_rate, 0.0005);
            }
        }
        assert_eq!(st.learning_rate, 0.00025);
    }
}
