//! Terminal and social costs with gradients w.r.t. the stacked controls.

use crate::lip::wrap_angle;
use crate::zono::Vec2;

use super::{MpcConfig, Rollout};

fn accumulate(grad: &mut [f64], r: &Rollout, q: usize, d: [f64; 4]) {
    for (row, &dv) in d.iter().enumerate() {
        if dv != 0.0 {
            for (g, j) in grad.iter_mut().zip(&r.jac[q][row]) {
                *g += dv * j;
            }
        }
    }
}

/// `W1 (‖p_N − G‖² + (v_N − v_T)²) + W2 wrap(θ_N − θ_G)²`.
pub fn terminal_cost(r: &Rollout, goal: Vec2, theta_goal: f64, cfg: &MpcConfig, grad: &mut [f64]) -> f64 {
    let s = r.states[cfg.horizon];
    let (ex, ey, ev) = (s.x - goal.x, s.y - goal.y, s.v_loc - cfg.v_terminal);
    let eth = wrap_angle(s.theta - theta_goal);
    let f = cfg.w1 * (ex * ex + ey * ey + ev * ev) + cfg.w2 * eth * eth;
    accumulate(grad, r, cfg.horizon, [2.0 * cfg.w1 * ex, 2.0 * cfg.w1 * ey, 2.0 * cfg.w1 * ev, 2.0 * cfg.w2 * eth]);
    f
}

/// `Σ_q W3 ‖ĉ_q − p_q‖² + W4 wrap(θ_s − θ_q)²` over steps `1..=N`, where
/// `centers[q−1]` is the social path center for step `q`.
pub fn social_cost(r: &Rollout, centers: &[Vec2], theta_s: f64, w3: f64, w4: f64, grad: Option<&mut [f64]>) -> f64 {
    let mut f = 0.0;
    let mut d_all = Vec::with_capacity(centers.len());
    for (i, c) in centers.iter().enumerate() {
        let s = r.states[i + 1];
        let (ex, ey) = (s.x - c.x, s.y - c.y);
        let eth = wrap_angle(s.theta - theta_s);
        f += w3 * (ex * ex + ey * ey) + w4 * eth * eth;
        d_all.push([2.0 * w3 * ex, 2.0 * w3 * ey, 0.0, 2.0 * w4 * eth]);
    }
    if let Some(grad) = grad {
        for (i, d) in d_all.into_iter().enumerate() {
            accumulate(grad, r, i + 1, d);
        }
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lip::EgoState;

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = MpcConfig::default();
        let x0 = EgoState { x: 0.0, y: 1.0, v_loc: 0.2, theta: 0.1 };
        let goal = Vec2::new(2.0, 2.5);
        let centers: Vec<Vec2> = (1..=4).map(|q| Vec2::new(0.15 * q as f64, 1.0 + 0.05 * q as f64)).collect();
        let u = vec![0.1, 0.2, 0.05, -0.1, 0.15, 0.1, 0.0, 0.2];
        let f = |u: &[f64], g: &mut [f64]| {
            let r = Rollout::new(&x0, u, &cfg.lip);
            terminal_cost(&r, goal, 0.7, &cfg, g) + social_cost(&r, &centers, 0.3, 1.0, 1.0, Some(g))
        };
        let mut g = vec![0.0; 8];
        f(&u, &mut g);
        let h = 1e-6;
        for j in 0..8 {
            let mut up = u.clone();
            up[j] += h;
            let mut um = u.clone();
            um[j] -= h;
            let fd = (f(&up, &mut [0.0; 8]) - f(&um, &mut [0.0; 8])) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-6 * (1.0 + fd.abs()), "{j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn zero_at_target() {
        let cfg = MpcConfig::default();
        let x0 = EgoState { x: 1.0, y: 2.0, v_loc: 0.0, theta: 0.5 };
        let u = vec![0.0; 8];
        let r = Rollout::new(&x0, &u, &cfg.lip);
        let mut g = vec![0.0; 8];
        assert!(terminal_cost(&r, Vec2::new(1.0, 2.0), 0.5, &cfg, &mut g).abs() < 1e-15);
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }
}
