use crate::error::{Error, Result};

/// State of the adaptive update
///
/// ```text
/// E[g²]_t = γ·E[g²]_{t−1} + (1 − γ)·g_t²
/// ΔΘ_t    = −η·g_t / √(E[g²]_t + ε)
/// Θ_{t+1} = Θ_t + ΔΘ_t
/// ```
///
/// This is the running-average-of-squares form with an explicit learning
/// rate; there is no accumulator of past updates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdadeltaState {
    accum: Vec<Vec<f32>>,
    pub gamma: f32,
    pub eta: f32,
    pub epsilon: f32,
}

impl AdadeltaState {
    /// Zeroed accumulators for parameters of the given lengths.
    pub fn new(param_lens: &[usize], gamma: f32, eta: f32, epsilon: f32) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Config(format!("gamma must be in [0, 1), got {gamma}")));
        }
        if eta.is_nan() || eta <= 0.0 || epsilon.is_nan() || epsilon <= 0.0 {
            return Err(Error::Config("eta and epsilon must be positive".into()));
        }
        Ok(AdadeltaState {
            accum: param_lens.iter().map(|&n| vec![0.0; n]).collect(),
            gamma,
            eta,
            epsilon,
        })
    }

    pub fn accum(&self) -> &[Vec<f32>] {
        &self.accum
    }
}

pub fn adadelta_step(params: &mut [&mut [f32]], grads: &[&[f32]], state: &mut AdadeltaState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.accum.len() {
        return Err(Error::LengthMismatch {
            left: params.len(),
            right: grads.len(),
        });
    }
    for ((p, g), e) in params.iter().zip(grads).zip(&state.accum) {
        if p.len() != g.len() || p.len() != e.len() {
            return Err(Error::shape(p.len(), g.len()));
        }
    }
    let (gamma, eta, eps) = (state.gamma, state.eta, state.epsilon);
    for ((p, g), e) in params.iter_mut().zip(grads).zip(&mut state.accum) {
        for ((theta, &grad), avg) in p.iter_mut().zip(g.iter()).zip(e.iter_mut()) {
            *avg = gamma * *avg + (1.0 - gamma) * grad * grad;
            *theta += -eta * grad / (*avg + eps).sqrt();
        }
    }
    Ok(())
}
