use super::{Result, TrainError};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

/// First and second moments per parameter tensor plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub t: u64,
}

impl AdamWState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            t: 0,
        }
    }
}

/// One optimizer target: parameter, gradient, name, and whether decay applies.
pub struct Slot<'a> {
    pub param: &'a mut Tensor,
    pub grad: &'a Tensor,
    pub name: &'a str,
    pub decay: bool,
}

fn check(slots: &[Slot<'_>], state: &AdamWState) -> Result<()> {
    if slots.len() != state.m.len() {
        return Err(TrainError::Optimizer {
            tensor: String::new(),
            detail: format!("{} tensors for optimizer state of {}", slots.len(), state.m.len()),
        });
    }
    for (s, m) in slots.iter().zip(&state.m) {
        if s.grad.shape() != s.param.shape() || m.len() != s.param.len() {
            return Err(TrainError::Optimizer {
                tensor: s.name.into(),
                detail: format!("gradient {:?} vs parameter {:?}", s.grad.shape(), s.param.shape()),
            });
        }
        if !s.grad.all_finite() {
            return Err(TrainError::Optimizer {
                tensor: s.name.into(),
                detail: "non-finite gradient".into(),
            });
        }
    }
    Ok(())
}

/// Advances the moments of one element and returns the bias-corrected Adam step.
#[inline]
fn moment_step(m: &mut f32, v: &mut f32, g: f32, h: &AdamHyper, c1: f64, c2: f64) -> f64 {
    let (b1, b2) = h.betas;
    let g = g as f64;
    let mn = b1 * *m as f64 + (1.0 - b1) * g;
    let vn = b2 * *v as f64 + (1.0 - b2) * g * g;
    *m = mn as f32;
    *v = vn as f32;
    let m_hat = mn / c1;
    let v_hat = vn / c2;
    h.lr * m_hat / (v_hat.sqrt() + h.eps)
}

/// Decoupled weight decay: `θ ← θ − lr·m̂/(√v̂+ε) − lr·wd·θ` on tensors with `decay`.
pub fn adamw_step(slots: &mut [Slot<'_>], state: &mut AdamWState, h: &AdamHyper) -> Result<()> {
    check(slots, state)?;
    state.t += 1;
    let (c1, c2) = bias_corrections(h, state.t);
    for (i, s) in slots.iter_mut().enumerate() {
        let wd = if s.decay { h.weight_decay } else { 0.0 };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, (p, &g)) in s.param.data_mut().iter_mut().zip(s.grad.data()).enumerate() {
            let step = moment_step(&mut m[j], &mut v[j], g, h, c1, c2);
            let theta = *p as f64;
            *p = (theta - step - h.lr * wd * theta) as f32;
        }
    }
    Ok(())
}

/// Plain Adam (no decay term at all).
pub fn adam_step(slots: &mut [Slot<'_>], state: &mut AdamWState, h: &AdamHyper) -> Result<()> {
    check(slots, state)?;
    state.t += 1;
    let (c1, c2) = bias_corrections(h, state.t);
    for (i, s) in slots.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, (p, &g)) in s.param.data_mut().iter_mut().zip(s.grad.data()).enumerate() {
            let step = moment_step(&mut m[j], &mut v[j], g, h, c1, c2);
            *p = (*p as f64 - step) as f32;
        }
    }
    Ok(())
}

fn bias_corrections(h: &AdamHyper, t: u64) -> (f64, f64) {
    let t = t as i32;
    (1.0 - h.betas.0.powi(t), 1.0 - h.betas.1.powi(t))
}
