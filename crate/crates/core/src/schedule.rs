//! Cosine learning-rate decay shared by the inner and outer step sizes.

use std::f64::consts::PI;

/// `final + (init - final) * (1 + cos(pi * step / total)) / 2`; holds at
/// `final` once `step >= total`.
pub fn cosine_decay(init: f64, final_value: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return init;
    }
    let frac = step.min(total) as f64 / total as f64;
    final_value + 0.5 * (init - final_value) * (1.0 + (PI * frac).cos())
}
