use crate::error::{NeshError, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates plus the number of accepted steps.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam step that *ascends* the objective:
/// `theta += lr * m_hat / (sqrt(v_hat) + eps)`.
///
/// A gradient with any non-finite entry leaves `theta` and `state`
/// untouched and returns a numerical error.
pub fn adam_step(theta: &mut [f64], grad: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if theta.len() != grad.len() || state.m.len() != grad.len() || state.v.len() != grad.len() {
        return Err(NeshError::invalid(format!(
            "Adam shapes differ: theta {}, grad {}, moments {}",
            theta.len(),
            grad.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(NeshError::Numerical {
            msg: format!("non-finite gradient at coordinate {i}; step rejected"),
            attempts: vec![],
        });
    }
    state.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    for i in 0..theta.len() {
        let g = grad[i];
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        theta[i] += lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(())
}
