use super::OptimizeError;
use crate::gradients::GradientBuffer;
use crate::model::Scene;
use serde::{Deserialize, Serialize};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-15;

/// Trainable scalars per Gaussian: mean 3, rotation 4, log-scale 3, opacity 1, SH dc 3.
pub const PARAMS_PER_GAUSSIAN: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub mean: f64,
    pub rotation: f64,
    pub log_scale: f64,
    pub opacity: f64,
    pub sh_dc: f64,
}

impl LearningRates {
    fn per_param(&self) -> [f64; PARAMS_PER_GAUSSIAN] {
        let mut lr = [0.0; PARAMS_PER_GAUSSIAN];
        lr[0..3].fill(self.mean);
        lr[3..7].fill(self.rotation);
        lr[7..10].fill(self.log_scale);
        lr[10] = self.opacity;
        lr[11..14].fill(self.sh_dc);
        lr
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<[f64; PARAMS_PER_GAUSSIAN]>,
    pub v: Vec<[f64; PARAMS_PER_GAUSSIAN]>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            step: 0,
            m: vec![[0.0; PARAMS_PER_GAUSSIAN]; n],
            v: vec![[0.0; PARAMS_PER_GAUSSIAN]; n],
        }
    }
}

/// Views a Gaussian's trainable parameters as mutable scalars.
fn params_mut(g: &mut crate::model::Gaussian3D) -> [&mut f64; PARAMS_PER_GAUSSIAN] {
    let [m0, m1, m2] = g.mean.as_mut_slice() else { unreachable!() };
    let [r0, r1, r2, r3] = &mut g.rotation;
    let [s0, s1, s2] = g.log_scale.as_mut_slice() else { unreachable!() };
    let [c0, c1, c2] = &mut g.sh_coeffs[0];
    [m0, m1, m2, r0, r1, r2, r3, s0, s1, s2, &mut g.opacity_logit, c0, c1, c2]
}

/// One bias-corrected Adam update of every Gaussian in `scene`.
/// Nothing is modified when a gradient is not finite.
pub fn adam_step(scene: &mut Scene, grads: &GradientBuffer, state: &mut AdamState, lr: &LearningRates) -> Result<(), OptimizeError> {
    let n = scene.len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(OptimizeError::ShapeMismatch {
            left: (n, 1),
            right: (grads.len(), 1),
        });
    }
    if let Some(index) = grads.grads.iter().position(|g| !g.is_finite()) {
        return Err(OptimizeError::NonFiniteGradient { index });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    let rates = lr.per_param();
    for (i, g) in scene.gaussians.iter_mut().enumerate() {
        let gr = &grads.grads[i];
        let flat = [
            gr.d_mean[0],
            gr.d_mean[1],
            gr.d_mean[2],
            gr.d_rotation[0],
            gr.d_rotation[1],
            gr.d_rotation[2],
            gr.d_rotation[3],
            gr.d_log_scale[0],
            gr.d_log_scale[1],
            gr.d_log_scale[2],
            gr.d_opacity_logit,
            gr.d_sh_dc[0],
            gr.d_sh_dc[1],
            gr.d_sh_dc[2],
        ];
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (k, p) in params_mut(g).into_iter().enumerate() {
            m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * flat[k];
            v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * flat[k] * flat[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            *p -= rates[k] * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}
