use super::MlpParams;
use crate::{Error, Result};

/// Bias-corrected Adam moments for one parameter set.
#[derive(Debug, Clone)]
pub struct AdamState {
    first: MlpParams,
    second: MlpParams,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        Self {
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&MlpParams, &MlpParams) {
        (&self.first, &self.second)
    }
}

/// One Adam update of `params` along `grads`.
///
/// Gradients are checked before anything is touched, so a non-finite gradient
/// leaves both the parameters and the state unchanged.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut MlpParams,
    grads: &MlpParams,
    lr: f64,
) -> Result<()> {
    if params.spec() != grads.spec() || params.spec() != state.first.spec() {
        return Err(Error::Shape(
            "adam: parameter, gradient and state specs differ".into(),
        ));
    }
    let layer_of = grads.tensor_layer_indices();
    for (t, layer) in grads.tensors().iter().zip(&layer_of) {
        if !t.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient in layer {layer}"
            )));
        }
    }

    state.step += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let eps = state.epsilon;
    let ps = params.tensors_mut();
    let gs = grads.tensors();
    let ms = state.first.tensors_mut();
    let vs = state.second.tensors_mut();
    for (((p, g), m), v) in ps.into_iter().zip(gs).zip(ms).zip(vs) {
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *pi -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
