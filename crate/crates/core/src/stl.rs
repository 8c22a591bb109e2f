//! Quantitative robustness for the two locomotion formulas: an always-band
//! on sagittal/lateral velocity, and an always-band on heading change.
//!
//! Robustness uses hard min; the `*_grad` variants return the subgradient
//! through the active minimum, which is what training back-propagates.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpecThresholds {
    pub v_max: f64,
    pub v_min: f64,
    pub v_lat: f64,
    pub dtheta_max: f64,
}

impl Default for SpecThresholds {
    fn default() -> Self {
        Self { v_max: 1.0, v_min: -0.1, v_lat: 0.5, dtheta_max: 15f64.to_radians() }
    }
}

/// `min_t min(hi − s_t, s_t − lo)` for `□(lo ≤ s ≤ hi)`.
pub fn rho_always_band(s: &[f64], lo: f64, hi: f64) -> f64 {
    debug_assert!(lo < hi);
    s.iter().map(|&v| (hi - v).min(v - lo)).fold(f64::INFINITY, f64::min)
}

/// Robustness plus its subgradient w.r.t. each sample.
pub fn rho_always_band_grad(s: &[f64], lo: f64, hi: f64) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; s.len()];
    let mut best = f64::INFINITY;
    let mut arg = None;
    for (i, &v) in s.iter().enumerate() {
        let (r, d) = if hi - v <= v - lo { (hi - v, -1.0) } else { (v - lo, 1.0) };
        if r < best {
            best = r;
            arg = Some((i, d));
        }
    }
    if let Some((i, d)) = arg {
        grad[i] = d;
    }
    (best, grad)
}

pub fn rho_vel(s_sag: &[f64], s_lat: &[f64], th: &SpecThresholds) -> f64 {
    rho_always_band(s_sag, th.v_min, th.v_max).min(rho_always_band(s_lat, -th.v_lat, th.v_lat))
}

fn relu_neg(rho: f64) -> f64 {
    (-rho).max(0.0)
}

pub fn loss_vel(s_sag: &[f64], s_lat: &[f64], th: &SpecThresholds) -> f64 {
    relu_neg(rho_vel(s_sag, s_lat, th))
}

pub fn loss_heading(s_dtheta: &[f64], th: &SpecThresholds) -> f64 {
    relu_neg(rho_always_band(s_dtheta, -th.dtheta_max, th.dtheta_max))
}

/// Velocity loss with gradients w.r.t. the sagittal and lateral samples.
pub fn loss_vel_grad(s_sag: &[f64], s_lat: &[f64], th: &SpecThresholds) -> (f64, Vec<f64>, Vec<f64>) {
    let (rs, gs) = rho_always_band_grad(s_sag, th.v_min, th.v_max);
    let (rl, gl) = rho_always_band_grad(s_lat, -th.v_lat, th.v_lat);
    let rho = rs.min(rl);
    if rho >= 0.0 {
        return (0.0, vec![0.0; s_sag.len()], vec![0.0; s_lat.len()]);
    }
    if rs <= rl {
        (-rho, gs.into_iter().map(|g| -g).collect(), vec![0.0; s_lat.len()])
    } else {
        (-rho, vec![0.0; s_sag.len()], gl.into_iter().map(|g| -g).collect())
    }
}

pub fn loss_heading_grad(s_dtheta: &[f64], th: &SpecThresholds) -> (f64, Vec<f64>) {
    let (rho, g) = rho_always_band_grad(s_dtheta, -th.dtheta_max, th.dtheta_max);
    if rho >= 0.0 {
        (0.0, vec![0.0; s_dtheta.len()])
    } else {
        (-rho, g.into_iter().map(|x| -x).collect())
    }
}
