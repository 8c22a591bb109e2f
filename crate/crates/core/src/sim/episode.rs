//! Closed-loop episodes: observe, plan, step the ego through the LIP map,
//! advance the crowd.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lip::{self, Control, EgoState};
use crate::planner::szn_mpc::social_metric;
use crate::planner::{stopping_control, CostBreakdown, PlanEnv, Planner, PlannerMode, Residuals};
use crate::zono::Vec2;

use super::scenario::{Scenario, World};

/// One JSON line of the trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub state: EgoState,
    pub control: Control,
    pub cost: CostBreakdown,
    pub residuals: Residuals,
    pub converged: bool,
    pub violation: f64,
    /// Set when the solve failed and a stopping step was commanded.
    pub fallback: Option<String>,
    pub wall_time_s: f64,
    pub evaluations: usize,
    pub observed: usize,
    pub min_distance: f64,
    pub social_metric: Option<f64>,
    pub pedestrians: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub mode: PlannerMode,
    pub seed: u64,
    pub reached: bool,
    pub steps: usize,
    pub min_distance: f64,
    pub trajectory: Vec<EgoState>,
    pub solve_times: Vec<f64>,
    pub converged: Vec<bool>,
    /// Largest exact residual defect among converged solves (0 if none).
    pub converged_defect: f64,
    pub fallbacks: usize,
    pub social_metric: Vec<f64>,
    pub v_before_goal: Vec<f64>,
}

/// How far a converged solution is from satisfying its constraints
/// exactly; zero when every residual is within bounds.
pub fn residual_defect(r: &Residuals, margin: f64, mode: PlannerMode) -> f64 {
    let mut d = r.kinematic.max(0.0);
    if mode == PlannerMode::Dcbf {
        d = d.max((-r.barrier).max(0.0));
    } else {
        d = d.max(r.reach.max(0.0));
        if r.avoid.is_finite() {
            d = d.max((margin - r.avoid).max(0.0));
        }
    }
    d
}

pub fn run_episode(s: &Scenario, planner: &mut Planner, mut log: Option<&mut dyn Write>) -> Result<EpisodeResult> {
    let dt = planner.cfg.lip.step_time;
    let goal = s.goal();
    let mut world = World::new(s, dt);
    let mut x = s.ego_start;
    planner.reset();
    let mode = planner.cfg.mode;
    let mut out = EpisodeResult {
        mode,
        seed: s.seed,
        reached: false,
        steps: 0,
        min_distance: world.min_distance(Vec2::new(x.x, x.y)),
        trajectory: vec![x],
        solve_times: Vec::new(),
        converged: Vec::new(),
        converged_defect: 0.0,
        fallbacks: 0,
        social_metric: Vec::new(),
        v_before_goal: vec![x.v_loc],
    };
    for step in 0..s.cfg.max_steps {
        let p = Vec2::new(x.x, x.y);
        if (p - goal).norm() <= s.cfg.goal_tolerance {
            out.reached = true;
            break;
        }
        let env = PlanEnv { goal, peds: world.observe(p, s.cfg.observe_radius) };
        let (control, entry) = match planner.solve(&x, &env) {
            Ok(sol) => {
                out.solve_times.push(sol.wall_time_s);
                out.converged.push(sol.converged);
                if sol.converged {
                    out.converged_defect = out.converged_defect.max(residual_defect(&sol.residuals, planner.cfg.avoid_margin, mode));
                }
                let sm = social_metric(&planner.model, &planner.cfg, &x, &env, &sol.controls)?;
                out.social_metric.push(sm);
                (sol.controls[0], (sol.cost, sol.residuals, sol.converged, sol.violation, None, sol.wall_time_s, sol.evaluations, Some(sm)))
            }
            Err(e @ (Error::Infeasible { .. } | Error::InfeasibleStart { .. } | Error::NonFiniteObjective)) => {
                out.fallbacks += 1;
                let c = stopping_control(&x, &planner.cfg);
                (c, (CostBreakdown::default(), Residuals::default(), false, f64::NAN, Some(e.to_string()), 0.0, 0, None))
            }
            Err(e) => return Err(e),
        };
        x = lip::step(&x, &control, &planner.cfg.lip);
        world.step(dt, Vec2::new(x.x, x.y));
        let d = world.min_distance(Vec2::new(x.x, x.y));
        out.min_distance = out.min_distance.min(d);
        out.trajectory.push(x);
        out.steps = step + 1;
        if (Vec2::new(x.x, x.y) - goal).norm() > s.cfg.goal_tolerance {
            out.v_before_goal.push(x.v_loc);
        }
        if let Some(w) = log.as_deref_mut() {
            let (cost, residuals, converged, violation, fallback, wall_time_s, evaluations, social_metric) = entry;
            let rec = StepLog {
                step,
                state: x,
                control,
                cost,
                residuals,
                converged,
                violation,
                fallback,
                wall_time_s,
                evaluations,
                observed: env.peds.len(),
                min_distance: d,
                social_metric,
                pedestrians: world.crowd.peds.iter().map(|p| [p.pos.x, p.pos.y]).collect(),
            };
            serde_json::to_writer(&mut *w, &rec)?;
            w.write_all(b"\n")?;
        }
    }
    if (Vec2::new(x.x, x.y) - goal).norm() <= s.cfg.goal_tolerance {
        out.reached = true;
    }
    Ok(out)
}
