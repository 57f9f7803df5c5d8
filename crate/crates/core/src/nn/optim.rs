use super::{Gradients, Model, NnError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates for one parameter buffer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    params: &mut [f32],
    grads: &[f32],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), NnError> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(NnError::ShapeMismatch(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - (cfg.beta1 as f64).powi(t);
    let bc2 = 1.0 - (cfg.beta2 as f64).powi(t);
    for ((p, &g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m as f64 / bc1;
        let v_hat = *v as f64 / bc2;
        *p -= (cfg.learning_rate as f64 * m_hat / (v_hat.sqrt() + cfg.epsilon as f64)) as f32;
    }
    Ok(())
}

/// Adam over every parameter tensor of a model.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(model: &Model, config: AdamConfig) -> Self {
        let states = model
            .layers()
            .iter()
            .filter_map(|l| l.weights.as_ref().zip(l.bias.as_ref()))
            .flat_map(|(w, b)| [AdamState::new(w.len()), AdamState::new(b.len())])
            .collect();
        Self { config, states }
    }

    pub fn step(&mut self, model: &mut Model, grads: &Gradients) -> Result<(), NnError> {
        let flat_grads: Vec<&[f32]> = grads
            .layers
            .iter()
            .flatten()
            .flat_map(|g| [g.weights.data(), g.bias.data()])
            .collect();
        let params = model.parameter_slices_mut();
        if params.len() != flat_grads.len() || params.len() != self.states.len() {
            return Err(NnError::ShapeMismatch(
                "gradients do not match model parameters".into(),
            ));
        }
        for ((p, g), s) in params.into_iter().zip(flat_grads).zip(&mut self.states) {
            adam_step(p, g, s, &self.config)?;
        }
        Ok(())
    }
}
