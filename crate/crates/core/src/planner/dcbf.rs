//! Baseline MPC with discrete-time control barrier functions on circles
//! around the predicted pedestrian centers.

use web_time::Instant;

use crate::error::{Error, Result};
use crate::lip::{wrap_angle, Control, EgoState};
use crate::nn::SznModel;
use crate::zono::Vec2;

use super::cost::terminal_cost;
use super::solver::{self, SolverWarm, Evaluation, Nlp};
use super::szn_mpc::forecast_peds;
use super::{control_bounds, kinematic_constraints, kinematic_residual, pack, unpack, MpcConfig, MpcSolution, PlanEnv, Residuals, Rollout};

/// `h = ‖p − c‖ / r − 1`; non-negative outside the circle.
pub fn dcbf_h(p: Vec2, c: Vec2, r: f64) -> f64 {
    (p - c).norm() / r - 1.0
}

struct DcbfProblem<'a> {
    cfg: &'a MpcConfig,
    x0: EgoState,
    goal: Vec2,
    theta_goal: f64,
    /// `centers[k][q]`: pedestrian `k` at step `q` (q = 0 is observed).
    centers: Vec<Vec<Vec2>>,
}

impl DcbfProblem<'_> {
    fn barrier(&self, r: &Rollout, mut g: Option<(&mut Vec<f64>, &mut Vec<Vec<f64>>)>) -> f64 {
        let rad = self.cfg.dcbf_radius;
        let keep = 1.0 - self.cfg.gamma;
        let mut worst = f64::INFINITY;
        for ck in &self.centers {
            for q in 0..self.cfg.horizon {
                let hq = dcbf_h(r.pos(q), ck[q], rad);
                let d = r.pos(q + 1) - ck[q + 1];
                let dist = d.norm().max(1e-12);
                let hn = dist / rad - 1.0;
                worst = worst.min(hn - keep * hq);
                if let Some((g, jac)) = g.as_mut() {
                    let dn = d / (dist * rad);
                    let dq = (r.pos(q) - ck[q]) / ((r.pos(q) - ck[q]).norm().max(1e-12) * rad);
                    let row: Vec<f64> = (0..r.jac[0][0].len())
                        .map(|j| {
                            keep * (dq.x * r.jac[q][0][j] + dq.y * r.jac[q][1][j]) - (dn.x * r.jac[q + 1][0][j] + dn.y * r.jac[q + 1][1][j])
                        })
                        .collect();
                    g.push(keep * hq - hn);
                    jac.push(row);
                }
            }
        }
        worst
    }
}

impl Nlp for DcbfProblem<'_> {
    fn dim(&self) -> usize {
        2 * self.cfg.horizon
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        control_bounds(self.cfg)
    }

    fn eval(&mut self, u: &[f64]) -> Result<Evaluation> {
        let r = Rollout::new(&self.x0, u, &self.cfg.lip);
        let mut grad = vec![0.0; u.len()];
        let f = terminal_cost(&r, self.goal, self.theta_goal, self.cfg, &mut grad);
        let (mut g, mut jac) = (Vec::new(), Vec::new());
        kinematic_constraints(&r, u, self.cfg, &mut g, &mut jac);
        self.barrier(&r, Some((&mut g, &mut jac)));
        Ok(Evaluation { f, grad, g, jac })
    }
}

pub fn solve(model: &SznModel, cfg: &MpcConfig, x0: &EgoState, env: &PlanEnv, warm: &[Control], solver_warm: Option<&SolverWarm>) -> Result<MpcSolution> {
    let t0 = Instant::now();
    let p0 = Vec2::new(x0.x, x0.y);
    for (k, p) in env.peds.iter().enumerate() {
        let h = dcbf_h(p0, p.current(), cfg.dcbf_radius);
        if h < 0.0 {
            return Err(Error::InfeasibleStart { pedestrian: k, h });
        }
    }
    let warm_states = crate::lip::rollout(x0, warm, &cfg.lip);
    let dp0 = Vec2::new(warm_states[1].x, warm_states[1].y) - p0;
    let fc = forecast_peds(model, &env.peds, p0, dp0)?;
    let centers = env
        .peds
        .iter()
        .zip(&fc)
        .map(|(p, f)| std::iter::once(p.current()).chain(f.zonos.iter().take(cfg.horizon).map(|z| z.center)).collect())
        .collect();
    let to_goal = env.goal - p0;
    let mut prob = DcbfProblem { cfg, x0: *x0, goal: env.goal, theta_goal: to_goal.y.atan2(to_goal.x), centers };
    let rep = solver::solve_from(&mut prob, &pack(warm), &cfg.solver, solver_warm)?;
    let controls = unpack(&rep.u);
    let r = Rollout::new(x0, &rep.u, &cfg.lip);
    let terminal = terminal_cost(&r, env.goal, prob.theta_goal, cfg, &mut vec![0.0; rep.u.len()]);
    let barrier = prob.barrier(&r, None);
    let states: Vec<EgoState> = r.states.iter().map(|s| EgoState { theta: wrap_angle(s.theta), ..*s }).collect();
    Ok(MpcSolution {
        residuals: Residuals { kinematic: kinematic_residual(&states, &controls, cfg), barrier, ..Default::default() },
        states,
        controls,
        ego_zonos: Vec::new(),
        ped_zonos: (0..cfg.horizon).map(|q| fc.iter().map(|f| f.zonos[q].clone()).collect()).collect(),
        social_centers: Vec::new(),
        social_heading: f64::NAN,
        cost: super::CostBreakdown { terminal, social: 0.0, total: terminal },
        converged: rep.converged,
        violation: rep.violation,
        evaluations: rep.evaluations,
        iterations: rep.iterations,
        warm: rep.warm,
        wall_time_s: t0.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::SznArch;
    use crate::planner::{PedObs, PlannerMode};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn h_is_signed_distance_ratio() {
        assert!((dcbf_h(Vec2::new(1.0, 0.0), Vec2::zeros(), 0.5) - 1.0).abs() < 1e-15);
        assert!(dcbf_h(Vec2::new(0.2, 0.0), Vec2::zeros(), 0.5) < 0.0);
    }

    fn model() -> SznModel {
        SznModel::new(SznArch::tiny(3, 8), &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn start_inside_barrier_is_rejected() {
        let cfg = MpcConfig { mode: PlannerMode::Dcbf, ..Default::default() };
        let x0 = EgoState { x: 0.0, y: 0.0, v_loc: 0.0, theta: 0.0 };
        let env = PlanEnv { goal: Vec2::new(5.0, 0.0), peds: vec![PedObs { id: 0, history: vec![Vec2::new(0.1, 0.0); 8] }] };
        let warm = super::super::straight_line(&x0, env.goal, &cfg);
        assert!(matches!(solve(&model(), &cfg, &x0, &env, &warm, None), Err(Error::InfeasibleStart { pedestrian: 0, .. })));
    }

    #[test]
    fn solution_satisfies_barrier() {
        let cfg = MpcConfig { mode: PlannerMode::Dcbf, ..Default::default() };
        let x0 = EgoState { x: 0.0, y: 0.0, v_loc: 0.3, theta: 0.0 };
        let env = PlanEnv { goal: Vec2::new(5.0, 0.0), peds: vec![PedObs { id: 0, history: vec![Vec2::new(1.2, 0.05); 8] }] };
        let warm = super::super::straight_line(&x0, env.goal, &cfg);
        let sol = solve(&model(), &cfg, &x0, &env, &warm, None).unwrap();
        assert!(sol.residuals.barrier >= -1e-6, "{:?}", sol.residuals);
        assert!(sol.residuals.kinematic <= 1e-6);
    }

    #[test]
    fn barrier_gradient_matches_finite_differences() {
        let cfg = MpcConfig::default();
        let x0 = EgoState { x: 0.0, y: 0.0, v_loc: 0.3, theta: 0.1 };
        let centers = vec![(0..5).map(|q| Vec2::new(1.5 - 0.1 * q as f64, 0.3)).collect()];
        let mut p = DcbfProblem { cfg: &cfg, x0, goal: Vec2::new(4.0, 0.0), theta_goal: 0.0, centers };
        let u = vec![0.1, 0.05, 0.1, -0.1, 0.05, 0.1, 0.1, 0.0];
        let e = p.eval(&u).unwrap();
        let h = 1e-6;
        for j in 0..8 {
            let (mut up, mut um) = (u.clone(), u.clone());
            up[j] += h;
            um[j] -= h;
            let (ep, em) = (p.eval(&up).unwrap(), p.eval(&um).unwrap());
            for i in 0..e.g.len() {
                let fd = (ep.g[i] - em.g[i]) / (2.0 * h);
                assert!((fd - e.jac[i][j]).abs() < 1e-6, "row {i} col {j}");
            }
        }
    }
}
