//! Step-to-step linear inverted pendulum dynamics of the walking robot.
//!
//! The state is sampled at foot-contact switches. Each step lasts `T`
//! seconds; the stance foot sits `u_f` ahead of the CoM along the heading.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub x: f64,
    pub y: f64,
    /// Sagittal CoM velocity at the contact switch (m/s).
    pub v_loc: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Control {
    /// Sagittal stance-foot offset from the CoM (m).
    pub u_f: f64,
    /// Heading change over the step (rad).
    pub u_dtheta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LipParams {
    pub step_time: f64,
    pub com_height: f64,
    pub gravity: f64,
}

impl Default for LipParams {
    fn default() -> Self {
        Self { step_time: 0.4, com_height: 1.0, gravity: 9.81 }
    }
}

impl LipParams {
    pub fn omega(&self) -> f64 {
        (self.gravity / self.com_height).sqrt()
    }

    /// `(sinh(ωT)/ω, 1 − cosh(ωT), cosh(ωT), ω sinh(ωT))`
    pub fn coefficients(&self) -> StepCoefficients {
        let w = self.omega();
        let wt = w * self.step_time;
        StepCoefficients {
            dx_dv: wt.sinh() / w,
            dx_du: 1.0 - wt.cosh(),
            dv_dv: wt.cosh(),
            dv_du: -w * wt.sinh(),
        }
    }
}

/// Linear step-map coefficients: `Δx = dx_dv·v + dx_du·u_f`, `v' = dv_dv·v + dv_du·u_f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepCoefficients {
    pub dx_dv: f64,
    pub dx_du: f64,
    pub dv_dv: f64,
    pub dv_du: f64,
}

/// Kinematic admissibility box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KinematicBounds {
    pub v_lb: f64,
    pub v_ub: f64,
    pub dx_lb: f64,
    pub dx_ub: f64,
    pub uf_lb: f64,
    pub uf_ub: f64,
    pub dtheta_max: f64,
}

impl Default for KinematicBounds {
    fn default() -> Self {
        Self {
            v_lb: -0.1,
            v_ub: 1.0,
            dx_lb: -0.2,
            dx_ub: 0.2,
            uf_lb: -0.1,
            uf_ub: 0.4,
            dtheta_max: 15f64.to_radians(),
        }
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    // rem_euclid maps −π to π, which is already the closed end of (−π, π]
    r
}

pub fn delta_x(v_loc: f64, u_f: f64, p: &LipParams) -> f64 {
    let k = p.coefficients();
    k.dx_dv * v_loc + k.dx_du * u_f
}

pub fn next_velocity(v_loc: f64, u_f: f64, p: &LipParams) -> f64 {
    let k = p.coefficients();
    k.dv_dv * v_loc + k.dv_du * u_f
}

/// Foot offset that keeps `v_loc` unchanged over one step.
pub fn periodic_foot_offset(v_loc: f64, p: &LipParams) -> f64 {
    let k = p.coefficients();
    (1.0 - k.dv_dv) * v_loc / k.dv_du
}

/// Foot offset that brings the sagittal velocity to zero at the next switch.
pub fn stopping_foot_offset(v_loc: f64, p: &LipParams) -> f64 {
    let k = p.coefficients();
    -k.dv_dv * v_loc / k.dv_du
}

/// Advances one step without wrapping the heading.
pub fn step_unwrapped(s: &EgoState, u: &Control, p: &LipParams) -> EgoState {
    let dx = delta_x(s.v_loc, u.u_f, p);
    EgoState {
        x: s.x + dx * s.theta.cos(),
        y: s.y + dx * s.theta.sin(),
        v_loc: next_velocity(s.v_loc, u.u_f, p),
        theta: s.theta + u.u_dtheta,
    }
}

pub fn step(s: &EgoState, u: &Control, p: &LipParams) -> EgoState {
    let mut next = step_unwrapped(s, u, p);
    next.theta = wrap_angle(next.theta);
    next
}

/// Jacobian of [`step_unwrapped`]; rows `(x, y, v, θ)`, columns
/// `(x, y, v, θ, u_f, u_Δθ)`.
pub fn step_jacobian(s: &EgoState, u: &Control, p: &LipParams) -> [[f64; 6]; 4] {
    let k = p.coefficients();
    let dx = k.dx_dv * s.v_loc + k.dx_du * u.u_f;
    let (sn, cs) = s.theta.sin_cos();
    [
        [1.0, 0.0, k.dx_dv * cs, -dx * sn, k.dx_du * cs, 0.0],
        [0.0, 1.0, k.dx_dv * sn, dx * cs, k.dx_du * sn, 0.0],
        [0.0, 0.0, k.dv_dv, 0.0, k.dv_du, 0.0],
        [0.0, 0.0, 0.0, 1.0, 0.0, 1.0],
    ]
}

pub fn kinematics_ok(s: &EgoState, u: &Control, b: &KinematicBounds, p: &LipParams) -> bool {
    let dx = delta_x(s.v_loc, u.u_f, p);
    (b.v_lb..=b.v_ub).contains(&s.v_loc)
        && (b.dx_lb..=b.dx_ub).contains(&dx)
        && (b.uf_lb..=b.uf_ub).contains(&u.u_f)
        && u.u_dtheta.abs() <= b.dtheta_max
}

pub fn rollout(x0: &EgoState, controls: &[Control], p: &LipParams) -> Vec<EgoState> {
    let mut out = Vec::with_capacity(controls.len() + 1);
    out.push(*x0);
    let mut s = *x0;
    for u in controls {
        s = step(&s, u, p);
        out.push(s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ode_step(v0: f64, u_f: f64, p: &LipParams) -> (f64, f64) {
        // ẍ = ω²(x − u_f), x(0) = 0, RK4
        let w2 = p.omega().powi(2);
        let n = 4000;
        let h = p.step_time / n as f64;
        let (mut x, mut v) = (0.0, v0);
        let f = |x: f64, v: f64| (v, w2 * (x - u_f));
        for _ in 0..n {
            let k1 = f(x, v);
            let k2 = f(x + 0.5 * h * k1.0, v + 0.5 * h * k1.1);
            let k3 = f(x + 0.5 * h * k2.0, v + 0.5 * h * k2.1);
            let k4 = f(x + h * k3.0, v + h * k3.1);
            x += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            v += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        }
        (x, v)
    }

    #[test]
    fn rest_is_fixed_point() {
        let p = LipParams::default();
        assert_eq!(delta_x(0.0, 0.0, &p), 0.0);
        assert_eq!(next_velocity(0.0, 0.0, &p), 0.0);
        let s = EgoState { x: 0.0, y: 0.0, v_loc: 0.0, theta: 0.0 };
        assert_eq!(step(&s, &Control::default(), &p), s);
    }

    #[test]
    fn reference_values_match_ode() {
        let p = LipParams::default();
        let (x, v) = ode_step(0.5, 0.1, &p);
        // frozen from the ODE oracle
        assert!((x - 0.1673).abs() < 1e-4, "{x}");
        assert!((v - 0.4431).abs() < 2e-4, "{v}");
        assert!((delta_x(0.5, 0.1, &p) - x).abs() < 1e-9);
        assert!((next_velocity(0.5, 0.1, &p) - v).abs() < 1e-9);
        let (_, v0) = ode_step(0.5, 0.0, &p);
        assert!((v0 - 0.94649).abs() < 1e-5, "{v0}");
        assert!((next_velocity(0.5, 0.0, &p) - v0).abs() < 1e-9);
    }

    #[test]
    fn periodic_gait_keeps_velocity() {
        let p = LipParams::default();
        let u = periodic_foot_offset(0.5, &p);
        let w = p.omega();
        let wt = w * p.step_time;
        assert!((u - 0.5 * (wt.cosh() - 1.0) / (w * wt.sinh())).abs() < 1e-15);
        assert!((next_velocity(0.5, u, &p) - 0.5).abs() < 1e-12);
        assert!((ode_step(0.5, u, &p).1 - 0.5).abs() < 1e-9);
    }

    #[test]
    fn heading_rotates_displacement() {
        let p = LipParams::default();
        let s = EgoState { x: 1.0, y: 2.0, v_loc: 0.5, theta: PI / 2.0 };
        let n = step(&s, &Control { u_f: 0.1, u_dtheta: 0.0 }, &p);
        assert!((n.x - 1.0).abs() < 1e-12);
        assert!((n.y - 2.0 - delta_x(0.5, 0.1, &p)).abs() < 1e-12);
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(0.1) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn kinematic_box() {
        let p = LipParams::default();
        let b = KinematicBounds::default();
        let s = EgoState { x: 0.0, y: 0.0, v_loc: 0.5, theta: 0.0 };
        assert!(kinematics_ok(&s, &Control { u_f: 0.2, u_dtheta: 0.0 }, &b, &p));
        assert!(!kinematics_ok(&s, &Control { u_f: 0.2, u_dtheta: 20f64.to_radians() }, &b, &p));
        let slow = EgoState { v_loc: -0.2, ..s };
        assert!(!kinematics_ok(&slow, &Control { u_f: 0.0, u_dtheta: 0.0 }, &b, &p));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let p = LipParams::default();
        let s = EgoState { x: 0.3, y: -0.2, v_loc: 0.4, theta: 0.7 };
        let u = Control { u_f: 0.05, u_dtheta: 0.1 };
        let j = step_jacobian(&s, &u, &p);
        let h = 1e-6;
        let pack = |s: &EgoState, u: &Control| [s.x, s.y, s.v_loc, s.theta, u.u_f, u.u_dtheta];
        let unpack = |a: [f64; 6]| {
            (EgoState { x: a[0], y: a[1], v_loc: a[2], theta: a[3] }, Control { u_f: a[4], u_dtheta: a[5] })
        };
        let base = pack(&s, &u);
        for col in 0..6 {
            let mut ap = base;
            ap[col] += h;
            let mut am = base;
            am[col] -= h;
            let (sp, up) = unpack(ap);
            let (sm, um) = unpack(am);
            let fp = step_unwrapped(&sp, &up, &p);
            let fm = step_unwrapped(&sm, &um, &p);
            let d = [
                (fp.x - fm.x) / (2.0 * h),
                (fp.y - fm.y) / (2.0 * h),
                (fp.v_loc - fm.v_loc) / (2.0 * h),
                (fp.theta - fm.theta) / (2.0 * h),
            ];
            for row in 0..4 {
                let scale = j[row][col].abs().max(1e-3);
                assert!((d[row] - j[row][col]).abs() / scale < 1e-6, "({row},{col})");
            }
        }
    }
}
