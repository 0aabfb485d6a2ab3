use crate::scene::{FeatureStore, OptimizerState};
use crate::FEATURE_DIM;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// One bias-corrected Adam update of every feature component.
pub fn adam_step(features: &mut FeatureStore, grads: &[[f64; FEATURE_DIM]], state: &mut OptimizerState, lr: f64) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for (((row, g), m), v) in features.rows_mut().iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for k in 0..FEATURE_DIM {
            let mk = BETA1 * m[k] as f64 + (1.0 - BETA1) * g[k];
            let vk = BETA2 * v[k] as f64 + (1.0 - BETA2) * g[k] * g[k];
            m[k] = mk as f32;
            v[k] = vk as f32;
            let update = lr * (mk / c1) / ((vk / c2).sqrt() + EPSILON);
            row[k] = (row[k] as f64 - update) as f32;
        }
    }
}
