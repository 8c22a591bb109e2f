//! Footstep MPC: SZN-MPC in coupled and decoupled form, and the DCBF
//! baseline. Decision variables are the `N` controls; states follow by
//! rolling the step map forward, so dynamics hold by construction.

pub mod cost;
pub mod dcbf;
mod qp;
pub mod solver;
pub mod szn_mpc;

use std::sync::Arc;

use web_time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lip::{self, Control, EgoState, KinematicBounds, LipParams};
use crate::nn::SznModel;
use crate::refine::{GpModel, PersonalSpace};
use crate::zono::{Vec2, Zonotope2, EXTERIOR_MARGIN, LSE_TEMPERATURE};

pub use solver::{SolverSettings, SolverWarm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlannerMode {
    Coupled,
    Decoupled,
    Dcbf,
}

impl PlannerMode {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Coupled => "coupled",
            Self::Decoupled => "decoupled",
            Self::Dcbf => "dcbf",
        }
    }
}

impl std::str::FromStr for PlannerMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coupled" => Ok(Self::Coupled),
            "decoupled" => Ok(Self::Decoupled),
            "dcbf" => Ok(Self::Dcbf),
            _ => Err(Error::Config(format!("unknown planner mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcConfig {
    pub horizon: usize,
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    pub v_terminal: f64,
    pub bounds: KinematicBounds,
    pub lip: LipParams,
    pub lse_temperature: f64,
    pub avoid_margin: f64,
    /// Width of the one-sided smoothing of `|·|` inside facet rows (m);
    /// zero uses the exact rows.
    pub abs_smoothing: f64,
    pub personal_space: PersonalSpace,
    pub gamma: f64,
    pub dcbf_radius: f64,
    pub social_cost: bool,
    pub mode: PlannerMode,
    /// Sagittal speed the warm start aims for (m/s).
    pub cruise_speed: f64,
    pub solver: SolverSettings,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 4,
            w1: 3.0,
            w2: 1.0,
            w3: 1.0,
            w4: 1.0,
            v_terminal: 0.0,
            bounds: KinematicBounds::default(),
            lip: LipParams::default(),
            lse_temperature: LSE_TEMPERATURE,
            avoid_margin: EXTERIOR_MARGIN,
            abs_smoothing: 1e-3,
            personal_space: PersonalSpace::default(),
            gamma: 0.4,
            dcbf_radius: 0.5,
            social_cost: true,
            mode: PlannerMode::Decoupled,
            cruise_speed: 0.5,
            solver: SolverSettings::default(),
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if [self.w1, self.w2, self.w3, self.w4].iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::Config("cost weights must be finite and non-negative".into()));
        }
        if !(self.abs_smoothing >= 0.0) {
            return Err(Error::Config("abs_smoothing must be non-negative".into()));
        }
        if self.lse_temperature <= 0.0 || !(0.0..=1.0).contains(&self.gamma) || self.dcbf_radius <= 0.0 {
            return Err(Error::Config("temperature, gamma or radius out of range".into()));
        }
        Ok(())
    }
}

/// An observed pedestrian: last 8 positions, oldest first (world frame).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PedObs {
    pub id: i64,
    pub history: Vec<Vec2>,
}

impl PedObs {
    pub fn current(&self) -> Vec2 {
        *self.history.last().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEnv {
    pub goal: Vec2,
    pub peds: Vec<PedObs>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub terminal: f64,
    pub social: f64,
    pub total: f64,
}

/// Exact post-hoc constraint residuals of a plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// Max over kinematic rows of `value − bound` (≤ 0 when satisfied).
    pub kinematic: f64,
    /// Max over steps and rows of `A p − b` (≤ 0 when satisfied).
    pub reach: f64,
    /// Min over steps and pedestrians of the exact max row (≥ margin).
    pub avoid: f64,
    /// Min over steps and pedestrians of `h_{q+1} − (1−γ) h_q`.
    pub barrier: f64,
}

impl Default for Residuals {
    fn default() -> Self {
        Self { kinematic: f64::NEG_INFINITY, reach: f64::NEG_INFINITY, avoid: f64::INFINITY, barrier: f64::INFINITY }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcSolution {
    pub states: Vec<EgoState>,
    pub controls: Vec<Control>,
    /// Ego reachable set for steps 1..=N (world frame, refined).
    pub ego_zonos: Vec<Zonotope2>,
    /// Pedestrian sets per step, per pedestrian.
    pub ped_zonos: Vec<Vec<Zonotope2>>,
    /// Social path centers for steps 1..=N.
    pub social_centers: Vec<Vec2>,
    pub social_heading: f64,
    pub cost: CostBreakdown,
    pub residuals: Residuals,
    pub converged: bool,
    pub violation: f64,
    pub evaluations: usize,
    pub iterations: usize,
    pub wall_time_s: f64,
    #[serde(skip)]
    pub warm: SolverWarm,
}

/// Planner state across receding-horizon steps (warm start and GP).
pub struct Planner {
    pub cfg: MpcConfig,
    pub model: Arc<SznModel>,
    pub gp: Option<GpModel>,
    warm: Option<(Vec<Control>, SolverWarm)>,
}

impl Planner {
    pub fn new(cfg: MpcConfig, model: Arc<SznModel>, gp: Option<GpModel>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, model, gp, warm: None })
    }

    pub fn reset(&mut self) {
        self.warm = None;
    }

    /// Warm start: previous plan shifted by one step, or a straight walk
    /// toward the goal.
    pub fn warm_start(&self, x0: &EgoState, goal: Vec2) -> Vec<Control> {
        match &self.warm {
            Some((prev, _)) if prev.len() == self.cfg.horizon => {
                let mut u: Vec<Control> = prev[1..].to_vec();
                let states = lip::rollout(x0, &u, &self.cfg.lip);
                u.push(cruise_control(states.last().unwrap(), goal, &self.cfg));
                u
            }
            _ => straight_line(x0, goal, &self.cfg),
        }
    }

    fn solve_from(&self, x0: &EgoState, env: &PlanEnv, warm: &[Control], memory: Option<&SolverWarm>) -> Result<MpcSolution> {
        match self.cfg.mode {
            PlannerMode::Dcbf => dcbf::solve(&self.model, &self.cfg, x0, env, warm, memory),
            _ => szn_mpc::solve(&self.model, self.gp.as_ref(), &self.cfg, x0, env, warm, memory),
        }
    }

    /// Solves from the warm start; when that ends infeasible, retries from
    /// the alternative starts of [`fallback_starts`] before giving up.
    pub fn solve(&mut self, x0: &EgoState, env: &PlanEnv) -> Result<MpcSolution> {
        let t0 = Instant::now();
        let warm = self.warm_start(x0, env.goal);
        let memory = self.warm.as_ref().map(|w| &w.1);
        let mut sol = self.solve_from(x0, env, &warm, memory);
        if matches!(sol, Err(Error::Infeasible { .. })) {
            for start in fallback_starts(x0, env.goal, &self.cfg) {
                sol = self.solve_from(x0, env, &start, None);
                if !matches!(sol, Err(Error::Infeasible { .. })) {
                    break;
                }
            }
        }
        match &mut sol {
            Ok(s) => {
                s.wall_time_s = t0.elapsed().as_secs_f64();
                self.warm = Some((s.controls.clone(), s.warm.clone()));
            }
            Err(_) => self.warm = None,
        }
        sol
    }
}

/// Alternative initial guesses: a fresh walk toward the goal, hard turns to
/// either side at cruise speed, and a stop.
pub fn fallback_starts(x0: &EgoState, goal: Vec2, cfg: &MpcConfig) -> Vec<Vec<Control>> {
    let turn = |sign: f64| -> Vec<Control> {
        let mut s = *x0;
        (0..cfg.horizon)
            .map(|_| {
                let ahead = Vec2::new(s.x, s.y) + Vec2::new(s.theta.cos(), s.theta.sin());
                let u = Control { u_dtheta: sign * cfg.bounds.dtheta_max, ..cruise_control(&s, ahead, cfg) };
                s = lip::step(&s, &u, &cfg.lip);
                u
            })
            .collect()
    };
    let stop = {
        let mut s = *x0;
        (0..cfg.horizon)
            .map(|_| {
                let u = stopping_control(&s, cfg);
                s = lip::step(&s, &u, &cfg.lip);
                u
            })
            .collect()
    };
    vec![straight_line(x0, goal, cfg), turn(1.0), turn(-1.0), stop]
}

pub fn cruise_control(s: &EgoState, goal: Vec2, cfg: &MpcConfig) -> Control {
    let b = &cfg.bounds;
    let to_goal = goal - Vec2::new(s.x, s.y);
    let dth = lip::wrap_angle(to_goal.y.atan2(to_goal.x) - s.theta).clamp(-b.dtheta_max, b.dtheta_max);
    let k = cfg.lip.coefficients();
    // slow down within a few steps of the goal
    let dist = to_goal.norm();
    let v_target = cfg.cruise_speed.min(dist / (3.0 * cfg.lip.step_time)).clamp(b.v_lb.max(0.0), b.v_ub);
    let mut u_f = (v_target - k.dv_dv * s.v_loc) / k.dv_du;
    // keep the step length inside its box (dx_du < 0)
    let u_lo = (b.dx_ub - k.dx_dv * s.v_loc) / k.dx_du;
    let u_hi = (b.dx_lb - k.dx_dv * s.v_loc) / k.dx_du;
    u_f = u_f.clamp(u_lo.min(u_hi), u_lo.max(u_hi)).clamp(b.uf_lb, b.uf_ub);
    Control { u_f, u_dtheta: dth }
}

pub fn straight_line(x0: &EgoState, goal: Vec2, cfg: &MpcConfig) -> Vec<Control> {
    let mut s = *x0;
    (0..cfg.horizon)
        .map(|_| {
            let u = cruise_control(&s, goal, cfg);
            s = lip::step(&s, &u, &cfg.lip);
            u
        })
        .collect()
}

/// Control that brings the sagittal velocity to zero, clipped to bounds.
pub fn stopping_control(s: &EgoState, cfg: &MpcConfig) -> Control {
    let u = lip::stopping_foot_offset(s.v_loc, &cfg.lip).clamp(cfg.bounds.uf_lb, cfg.bounds.uf_ub);
    Control { u_f: u, u_dtheta: 0.0 }
}

pub(crate) fn pack(u: &[Control]) -> Vec<f64> {
    u.iter().flat_map(|c| [c.u_f, c.u_dtheta]).collect()
}

pub(crate) fn unpack(u: &[f64]) -> Vec<Control> {
    u.chunks(2).map(|c| Control { u_f: c[0], u_dtheta: c[1] }).collect()
}

pub(crate) fn control_bounds(cfg: &MpcConfig) -> (Vec<f64>, Vec<f64>) {
    let b = &cfg.bounds;
    let lb = (0..cfg.horizon).flat_map(|_| [b.uf_lb, -b.dtheta_max]).collect();
    let ub = (0..cfg.horizon).flat_map(|_| [b.uf_ub, b.dtheta_max]).collect();
    (lb, ub)
}

/// States `x_0..x_N` (heading unwrapped) and `∂x_q/∂u` as 4 rows of length 2N.
pub struct Rollout {
    pub states: Vec<EgoState>,
    pub jac: Vec<[Vec<f64>; 4]>,
}

impl Rollout {
    pub fn new(x0: &EgoState, u: &[f64], p: &LipParams) -> Self {
        let n = u.len();
        let steps = n / 2;
        let mut states = Vec::with_capacity(steps + 1);
        let mut jac: Vec<[Vec<f64>; 4]> = Vec::with_capacity(steps + 1);
        states.push(*x0);
        jac.push(std::array::from_fn(|_| vec![0.0; n]));
        for q in 0..steps {
            let s = states[q];
            let c = Control { u_f: u[2 * q], u_dtheta: u[2 * q + 1] };
            let a = lip::step_jacobian(&s, &c, p);
            let prev = &jac[q];
            let next: [Vec<f64>; 4] = std::array::from_fn(|r| {
                let mut row = vec![0.0; n];
                for (k, pr) in prev.iter().enumerate() {
                    if a[r][k] != 0.0 {
                        for j in 0..n {
                            row[j] += a[r][k] * pr[j];
                        }
                    }
                }
                row[2 * q] += a[r][4];
                row[2 * q + 1] += a[r][5];
                row
            });
            states.push(lip::step_unwrapped(&s, &c, p));
            jac.push(next);
        }
        Self { states, jac }
    }

    pub fn pos(&self, q: usize) -> Vec2 {
        Vec2::new(self.states[q].x, self.states[q].y)
    }
}

/// Kinematic rows `g ≤ 0` with gradients: step length and next velocity
/// boxes for every step.
pub(crate) fn kinematic_constraints(r: &Rollout, u: &[f64], cfg: &MpcConfig, g: &mut Vec<f64>, jac: &mut Vec<Vec<f64>>) {
    let k = cfg.lip.coefficients();
    let b = &cfg.bounds;
    let n = u.len();
    for q in 0..cfg.horizon {
        let v = r.states[q].v_loc;
        let dx = k.dx_dv * v + k.dx_du * u[2 * q];
        let mut d_dx: Vec<f64> = r.jac[q][2].iter().map(|j| k.dx_dv * j).collect();
        d_dx[2 * q] += k.dx_du;
        let v_next = r.states[q + 1].v_loc;
        let d_v = r.jac[q + 1][2].clone();
        g.push(dx - b.dx_ub);
        jac.push(d_dx.clone());
        g.push(b.dx_lb - dx);
        jac.push(d_dx.iter().map(|x| -x).collect());
        g.push(v_next - b.v_ub);
        jac.push(d_v.clone());
        g.push(b.v_lb - v_next);
        jac.push(d_v.iter().map(|x| -x).collect());
        debug_assert_eq!(jac.last().unwrap().len(), n);
    }
}

pub(crate) fn kinematic_residual(states: &[EgoState], controls: &[Control], cfg: &MpcConfig) -> f64 {
    let b = &cfg.bounds;
    let mut worst = f64::NEG_INFINITY;
    for (q, c) in controls.iter().enumerate() {
        let dx = lip::delta_x(states[q].v_loc, c.u_f, &cfg.lip);
        let v = states[q + 1].v_loc;
        for r in [dx - b.dx_ub, b.dx_lb - dx, v - b.v_ub, b.v_lb - v, c.u_f - b.uf_ub, b.uf_lb - c.u_f, c.u_dtheta.abs() - b.dtheta_max] {
            worst = worst.max(r);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rollout_jacobian_matches_finite_differences() {
        let p = LipParams::default();
        let x0 = EgoState { x: 0.2, y: -0.4, v_loc: 0.3, theta: 0.4 };
        let u = vec![0.05, 0.1, 0.12, -0.2, 0.0, 0.05, 0.2, 0.1];
        let r = Rollout::new(&x0, &u, &p);
        let h = 1e-6;
        for j in 0..u.len() {
            let mut up = u.clone();
            up[j] += h;
            let mut um = u.clone();
            um[j] -= h;
            let rp = Rollout::new(&x0, &up, &p);
            let rm = Rollout::new(&x0, &um, &p);
            for q in 0..=4 {
                let fp = [rp.states[q].x, rp.states[q].y, rp.states[q].v_loc, rp.states[q].theta];
                let fm = [rm.states[q].x, rm.states[q].y, rm.states[q].v_loc, rm.states[q].theta];
                for row in 0..4 {
                    let fd = (fp[row] - fm[row]) / (2.0 * h);
                    assert!((fd - r.jac[q][row][j]).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn straight_line_respects_bounds() {
        let cfg = MpcConfig::default();
        let x0 = EgoState { x: 0.0, y: 0.0, v_loc: 0.0, theta: 0.0 };
        let u = straight_line(&x0, Vec2::new(3.0, 3.0), &cfg);
        let s = lip::rollout(&x0, &u, &cfg.lip);
        for (q, c) in u.iter().enumerate() {
            assert!(lip::kinematics_ok(&s[q], c, &cfg.bounds, &cfg.lip), "step {q}");
        }
        assert!(s[4].theta > 0.0);
    }

    #[test]
    fn stopping_control_zeroes_velocity() {
        let cfg = MpcConfig::default();
        let s = EgoState { x: 0.0, y: 0.0, v_loc: 0.4, theta: 0.0 };
        let n = lip::step(&s, &stopping_control(&s, &cfg), &cfg.lip);
        assert!(n.v_loc.abs() < 1e-12);
    }
}
