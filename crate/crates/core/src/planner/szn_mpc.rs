//! SZN-MPC. Every step the ESN predicts the ego's reachable set from the
//! current and next CoM positions; the refined set must contain the next
//! position and, grown by each pedestrian's set, must exclude that
//! pedestrian's center.
//!
//! Derivatives are carried in forward mode over a small local basis and
//! mapped to the controls through the rollout Jacobian. The decoupled mode
//! queries the PPN once per solve; the coupled mode re-queries it every
//! step with the planned ego motion, so pedestrian sets depend on `u`.

use web_time::Instant;

use crate::error::{Error, Result};
use crate::lip::{wrap_angle, EgoState};
use crate::nn::features::{flatten, ped_sum};
use crate::nn::zseq::{ZonotopeSeq, STEPS, STEP_DIM};
use crate::nn::{Jet, SznModel};
use crate::refine::{error_generators, personal_space_generators, GpModel};
use crate::zono::{facet_rows_padded, facet_rows_padded_with, log_sum_exp, AbsMode, lse_weights, Vec2, Zonotope2, MIN_GENERATOR_NORM};

use super::cost::{social_cost, terminal_cost};
use super::solver::{self, SolverWarm, Evaluation, Nlp};
use super::{control_bounds, kinematic_constraints, kinematic_residual, pack, unpack, CostBreakdown, MpcConfig, MpcSolution, PedObs, PlanEnv, PlannerMode, Residuals, Rollout};

const FIRST_STEP_ROWS: [usize; STEP_DIM] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9];

/// A planar point with tangents.
#[derive(Debug, Clone)]
pub(crate) struct V2J {
    pub v: Vec2,
    pub t: Vec<Vec2>,
}

impl V2J {
    pub fn constant(v: Vec2, k: usize) -> Self {
        Self { v, t: vec![Vec2::zeros(); k] }
    }

    pub fn from_jet(j: &Jet, i: usize) -> Self {
        Self { v: Vec2::new(j.value[i], j.value[i + 1]), t: j.tangents.iter().map(|t| Vec2::new(t[i], t[i + 1])).collect() }
    }

    pub fn add(&self, o: &V2J) -> V2J {
        V2J { v: self.v + o.v, t: self.t.iter().zip(&o.t).map(|(a, b)| a + b).collect() }
    }

    pub fn sub(&self, o: &V2J) -> V2J {
        V2J { v: self.v - o.v, t: self.t.iter().zip(&o.t).map(|(a, b)| a - b).collect() }
    }
}

pub(crate) fn jet_of(points: &[V2J]) -> Jet {
    let k = points[0].t.len();
    Jet {
        value: points.iter().flat_map(|p| [p.v.x, p.v.y]).collect(),
        tangents: (0..k).map(|l| points.iter().flat_map(|p| [p.t[l].x, p.t[l].y]).collect()).collect(),
    }
}

/// Zonotope whose center and generators carry tangents; generators may
/// also depend on the next heading (`d_theta`).
struct ZJ {
    center: V2J,
    gens: Vec<V2J>,
    d_theta: Vec<Vec2>,
}

impl ZJ {
    fn value(&self) -> Zonotope2 {
        Zonotope2 { center: self.center.v, generators: self.gens.iter().map(|g| g.v).collect() }
    }
}

/// Row values with derivatives w.r.t. the local basis and the next heading.
fn rows_with_grads(z: &ZJ, point: &V2J, mode: AbsMode) -> Vec<(f64, Vec<f64>, f64)> {
    let k = point.t.len();
    facet_rows_padded_with(&z.value(), &point.v, mode)
        .into_iter()
        .map(|r| {
            let dl = (0..k)
                .map(|l| {
                    let mut s = r.d_point.dot(&point.t[l]) + r.d_center.dot(&z.center.t[l]);
                    for (dg, g) in r.d_generators.iter().zip(&z.gens) {
                        s += dg.dot(&g.t[l]);
                    }
                    s
                })
                .collect();
            let dth = r.d_generators.iter().zip(&z.d_theta).map(|(a, b)| a.dot(b)).sum();
            (r.value, dl, dth)
        })
        .collect()
}

/// Pedestrian set and ESN input points for one step, world frame.
struct PedStep {
    zono: ZJ,
    points: Vec<V2J>,
}

/// One PPN query without derivatives: 7 world-frame sets and 8 points.
pub(crate) struct PedForecast {
    pub zonos: Vec<Zonotope2>,
    pub points: Vec<Vec2>,
}

pub(crate) fn forecast_peds(model: &SznModel, peds: &[PedObs], origin: Vec2, ego_next: Vec2) -> Result<Vec<PedForecast>> {
    let z = vec![0.0; model.latent_dim()];
    peds.iter()
        .map(|p| {
            let hist = flatten(&p.history, origin);
            let (out, end_rel) = model.ppn.forward(&hist, ego_next, &z)?;
            let seq = ZonotopeSeq::decode(&out).translate(origin);
            let mut points = seq.centers();
            points.push(p.current() + end_rel);
            Ok(PedForecast { zonos: seq.zonos, points })
        })
        .collect()
}

/// Social path: ESN centers for steps `1..=N` and the heading toward the last.
pub(crate) fn social_path(model: &SznModel, fc: &[PedForecast], p0: Vec2, goal: Vec2, ego_next: Vec2, n: usize) -> Result<(Vec<Vec2>, f64)> {
    let rel: Vec<Vec<Vec2>> = fc.iter().map(|f| f.points.iter().map(|p| p - p0).collect()).collect();
    let ps = ped_sum(rel.iter().map(|v| v.as_slice()));
    let z = vec![0.0; model.latent_dim()];
    let out = model.esn.forward(&ps, goal - p0, ego_next, &z)?;
    let seq = ZonotopeSeq::decode(&out);
    let centers: Vec<Vec2> = (0..n.min(STEPS)).map(|q| p0 + seq.zonos[q].center).collect();
    let last = centers.last().copied().unwrap_or(p0) - p0;
    let heading = if last.norm() > 1e-6 { last.y.atan2(last.x) } else { (goal - p0).y.atan2((goal - p0).x) };
    Ok((centers, heading))
}

struct Capture {
    ego: Vec<Zonotope2>,
    peds: Vec<Vec<Zonotope2>>,
    reach: f64,
    avoid: f64,
}

pub(crate) struct SznProblem<'a> {
    model: &'a SznModel,
    cfg: &'a MpcConfig,
    x0: EgoState,
    goal: Vec2,
    theta_goal: f64,
    coupled: bool,
    forecasts: Vec<PedForecast>,
    histories: Vec<Vec<Vec2>>,
    mu_gens: Vec<Vec<Vec2>>,
    social: Option<(Vec<Vec2>, f64)>,
    z: Vec<f64>,
}

impl<'a> SznProblem<'a> {
    pub(crate) fn new(model: &'a SznModel, gp: Option<&GpModel>, cfg: &'a MpcConfig, x0: &EgoState, env: &PlanEnv, warm: &[super::Control]) -> Result<Self> {
        let n = cfg.horizon;
        if n > STEPS {
            return Err(Error::Config(format!("horizon {n} exceeds the predicted {STEPS} steps")));
        }
        let p0 = Vec2::new(x0.x, x0.y);
        let warm_states = crate::lip::rollout(x0, warm, &cfg.lip);
        let dp0 = Vec2::new(warm_states[1].x, warm_states[1].y) - p0;
        let forecasts = forecast_peds(model, &env.peds, p0, dp0)?;
        let to_goal = env.goal - p0;
        let theta_goal = to_goal.y.atan2(to_goal.x);
        let social = if cfg.social_cost {
            Some(social_path(model, &forecasts, p0, env.goal, dp0, n)?)
        } else {
            None
        };
        // expected model error, frozen at the warm start, on the world axes;
        // zero components add nothing to the set and are left out
        let mu_gens = (0..n)
            .map(|q| match gp {
                Some(g) => {
                    let mu = g.predict(warm_states[q].v_loc, warm_states[q + 1].v_loc, warm[q].u_dtheta).0;
                    error_generators(mu.abs()).into_iter().filter(|v| v.norm() > MIN_GENERATOR_NORM).collect()
                }
                None => Vec::new(),
            })
            .collect();
        Ok(Self {
            model,
            cfg,
            x0: *x0,
            goal: env.goal,
            theta_goal,
            coupled: cfg.mode == PlannerMode::Coupled,
            forecasts,
            histories: env.peds.iter().map(|p| p.history.clone()).collect(),
            mu_gens,
            social,
            z: vec![0.0; model.latent_dim()],
        })
    }

    fn ps_block(&self, theta: f64) -> ([Vec2; 2], [Vec2; 2]) {
        let ps = &self.cfg.personal_space;
        let g = personal_space_generators(ps, theta);
        let (s, c) = theta.sin_cos();
        (g, [Vec2::new(-ps.a * s, ps.b * c), Vec2::new(-ps.a * c, -ps.b * s)])
    }

    /// Per-step pedestrian data (world frame) in the local basis of step `q`.
    fn ped_steps(&self, q: usize, pq: &V2J, pn: &V2J, hist: &mut [Vec<V2J>]) -> Result<Vec<PedStep>> {
        let k = pq.t.len();
        if !self.coupled {
            return Ok(self
                .forecasts
                .iter()
                .map(|f| {
                    let z = &f.zonos[q];
                    PedStep {
                        zono: ZJ {
                            center: V2J::constant(z.center, k),
                            gens: z.generators.iter().map(|&g| V2J::constant(g, k)).collect(),
                            d_theta: vec![Vec2::zeros(); z.generators.len()],
                        },
                        points: (0..8).map(|j| V2J::constant(f.points[(j + q).min(7)], k)).collect(),
                    }
                })
                .collect());
        }
        let dp = jet_of(&[pn.sub(pq)]);
        let mut out = Vec::with_capacity(hist.len());
        for h in hist.iter_mut() {
            let rel: Vec<V2J> = h.iter().map(|p| p.sub(pq)).collect();
            let (seq, end) = self.model.ppn.forward_jet(&jet_of(&rel), &dp, &self.z)?;
            let mut points: Vec<V2J> = (0..STEPS).map(|i| V2J::from_jet(&seq, i * STEP_DIM).add(pq)).collect();
            points.push(V2J::from_jet(&end, 0).add(pq));
            let center = points[0].clone();
            let gens: Vec<V2J> = (0..4).map(|j| V2J::from_jet(&seq, 2 + 2 * j)).collect();
            h.remove(0);
            h.push(center.clone());
            out.push(PedStep { zono: ZJ { center, d_theta: vec![Vec2::zeros(); gens.len()], gens }, points });
        }
        Ok(out)
    }

    /// Constraints of all steps. With `capture`, also records the sets and
    /// exact residuals.
    fn constraints(&self, r: &Rollout, u: &[f64], g: &mut Vec<f64>, jac: &mut Vec<Vec<f64>>, mut capture: Option<&mut Capture>) -> Result<()> {
        let n = u.len();
        let cfg = self.cfg;
        kinematic_constraints(r, u, cfg, g, jac);
        let k_loc = if self.coupled { n } else { 4 };
        let mut hist: Vec<Vec<V2J>> = if self.coupled {
            self.histories.iter().map(|h| h.iter().map(|&p| V2J::constant(p, n)).collect()).collect()
        } else {
            Vec::new()
        };
        let tau = cfg.lse_temperature;
        let (under, over) = match cfg.abs_smoothing {
            d if d > 0.0 => (AbsMode::Under(d), AbsMode::Over(d)),
            _ => (AbsMode::Exact, AbsMode::Exact),
        };
        for q in 0..cfg.horizon {
            // local basis and its map to u
            let (pq, pn, basis): (V2J, V2J, Vec<&[f64]>) = if self.coupled {
                let mk = |s: usize| V2J { v: r.pos(s), t: (0..n).map(|l| Vec2::new(r.jac[s][0][l], r.jac[s][1][l])).collect() };
                (mk(q), mk(q + 1), Vec::new())
            } else {
                let e = |i: usize| (0..4).map(|l| if l == 2 * i { Vec2::new(1.0, 0.0) } else if l == 2 * i + 1 { Vec2::new(0.0, 1.0) } else { Vec2::zeros() }).collect();
                (
                    V2J { v: r.pos(q), t: e(0) },
                    V2J { v: r.pos(q + 1), t: e(1) },
                    vec![&r.jac[q][0][..], &r.jac[q][1][..], &r.jac[q + 1][0][..], &r.jac[q + 1][1][..]],
                )
            };
            let d_th = &r.jac[q + 1][3];
            let to_u = |dl: &[f64], dth: f64| -> Vec<f64> {
                let mut out: Vec<f64> = if self.coupled { dl.to_vec() } else { vec![0.0; n] };
                if !self.coupled {
                    for (c, row) in dl.iter().zip(&basis) {
                        if *c != 0.0 {
                            for j in 0..n {
                                out[j] += c * row[j];
                            }
                        }
                    }
                }
                for j in 0..n {
                    out[j] += dth * d_th[j];
                }
                out
            };

            let peds = self.ped_steps(q, &pq, &pn, &mut hist)?;
            let rel: Vec<Vec<V2J>> = peds.iter().map(|p| p.points.iter().map(|x| x.sub(&pq)).collect()).collect();
            let ped_sum_jet = if rel.is_empty() {
                Jet::constant(vec![0.0; 16], k_loc)
            } else {
                let mut acc = rel[0].clone();
                for other in &rel[1..] {
                    for (a, b) in acc.iter_mut().zip(other) {
                        *a = a.add(b);
                    }
                }
                jet_of(&acc)
            };
            let goal = V2J::constant(self.goal, k_loc).sub(&pq);
            let dp = pn.sub(&pq);
            let esn = self.model.esn.forward_jet(&ped_sum_jet, &jet_of(&[goal]), &jet_of(&[dp]), &self.z, Some(&FIRST_STEP_ROWS))?;
            let esn_center = V2J::from_jet(&esn, 0).add(&pq);
            let esn_gens: Vec<V2J> = (0..4).map(|j| V2J::from_jet(&esn, 2 + 2 * j)).collect();

            let theta = r.states[q + 1].theta;
            let (ps, dps) = self.ps_block(theta);
            let mu = &self.mu_gens[q];
            let mut gens = esn_gens.clone();
            let mut d_theta = vec![Vec2::zeros(); 4];
            for i in 0..2 {
                gens.push(V2J::constant(ps[i], k_loc));
                d_theta.push(dps[i]);
            }
            for &m in mu {
                gens.push(V2J::constant(m, k_loc));
                d_theta.push(Vec2::zeros());
            }

            // reachability: next CoM inside the refined set
            let ego = ZJ { center: esn_center, gens: gens.clone(), d_theta: d_theta.clone() };
            for (val, dl, dth) in rows_with_grads(&ego, &pn, under) {
                g.push(val);
                jac.push(to_u(&dl, dth));
            }
            if let Some(c) = capture.as_deref_mut() {
                let exact = facet_rows_padded(&ego.value(), &pn.v);
                c.reach = exact.iter().map(|r| r.value).fold(c.reach, f64::max);
                c.ego.push(ego.value());
                c.peds.push(peds.iter().map(|p| p.zono.value()).collect());
            }

            // avoidance: each pedestrian center outside ego ⊕ pedestrian set
            for p in &peds {
                let mut mg = gens.clone();
                let mut md = d_theta.clone();
                mg.extend(p.zono.gens.iter().cloned());
                md.extend(p.zono.d_theta.iter().cloned());
                let mink = ZJ { center: pn.clone(), gens: mg, d_theta: md };
                let rows = rows_with_grads(&mink, &p.zono.center, over);
                let vals: Vec<f64> = rows.iter().map(|r| r.0).collect();
                let m = vals.len() as f64;
                let soft = log_sum_exp(&vals, tau) - tau * m.ln();
                let w = lse_weights(&vals, tau);
                let mut dl = vec![0.0; k_loc];
                let mut dth = 0.0;
                for (wr, (_, rdl, rdth)) in w.iter().zip(&rows) {
                    for (a, b) in dl.iter_mut().zip(rdl) {
                        *a -= wr * b;
                    }
                    dth -= wr * rdth;
                }
                g.push(cfg.avoid_margin - soft);
                jac.push(to_u(&dl, dth));
                if let Some(c) = capture.as_deref_mut() {
                    let exact = facet_rows_padded(&mink.value(), &p.zono.center.v);
                    c.avoid = c.avoid.min(exact.iter().map(|r| r.value).fold(f64::NEG_INFINITY, f64::max));
                }
            }
        }
        Ok(())
    }

    fn inspect(&self, u: &[f64]) -> Result<Capture> {
        let r = Rollout::new(&self.x0, u, &self.cfg.lip);
        let mut c = Capture { ego: Vec::new(), peds: Vec::new(), reach: f64::NEG_INFINITY, avoid: f64::INFINITY };
        self.constraints(&r, u, &mut Vec::new(), &mut Vec::new(), Some(&mut c))?;
        Ok(c)
    }

    fn costs(&self, r: &Rollout, grad: &mut [f64]) -> CostBreakdown {
        let terminal = terminal_cost(r, self.goal, self.theta_goal, self.cfg, grad);
        let social = match &self.social {
            Some((c, th)) => social_cost(r, c, *th, self.cfg.w3, self.cfg.w4, Some(grad)),
            None => 0.0,
        };
        CostBreakdown { terminal, social, total: terminal + social }
    }
}

impl Nlp for SznProblem<'_> {
    fn dim(&self) -> usize {
        2 * self.cfg.horizon
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        control_bounds(self.cfg)
    }

    fn eval(&mut self, u: &[f64]) -> Result<Evaluation> {
        let r = Rollout::new(&self.x0, u, &self.cfg.lip);
        let mut grad = vec![0.0; u.len()];
        let f = self.costs(&r, &mut grad).total;
        let mut g = Vec::new();
        let mut jac = Vec::new();
        self.constraints(&r, u, &mut g, &mut jac, None)?;
        Ok(Evaluation { f, grad, g, jac })
    }
}

pub fn solve(model: &SznModel, gp: Option<&GpModel>, cfg: &MpcConfig, x0: &EgoState, env: &PlanEnv, warm: &[super::Control], solver_warm: Option<&SolverWarm>) -> Result<MpcSolution> {
    let t0 = Instant::now();
    let mut prob = SznProblem::new(model, gp, cfg, x0, env, warm)?;
    let rep = solver::solve_from(&mut prob, &pack(warm), &cfg.solver, solver_warm)?;
    let controls = unpack(&rep.u);
    let r = Rollout::new(x0, &rep.u, &cfg.lip);
    let cost = prob.costs(&r, &mut vec![0.0; rep.u.len()]);
    let cap = prob.inspect(&rep.u)?;
    let states: Vec<EgoState> = r.states.iter().map(|s| EgoState { theta: wrap_angle(s.theta), ..*s }).collect();
    let (social_centers, social_heading) = prob.social.clone().unwrap_or_else(|| (Vec::new(), f64::NAN));
    Ok(MpcSolution {
        residuals: Residuals { kinematic: kinematic_residual(&states, &controls, cfg), reach: cap.reach, avoid: cap.avoid, barrier: f64::INFINITY },
        states,
        controls,
        ego_zonos: cap.ego,
        ped_zonos: cap.peds,
        social_centers,
        social_heading,
        cost,
        converged: rep.converged,
        violation: rep.violation,
        evaluations: rep.evaluations,
        iterations: rep.iterations,
        warm: rep.warm,
        wall_time_s: t0.elapsed().as_secs_f64(),
    })
}

/// Social metric of a plan: `Σ_q ‖ĉ_q − p_q‖² + wrap(θ_s − θ_q)²` with unit
/// weights, regardless of whether the social cost was optimized.
pub fn social_metric(model: &SznModel, cfg: &MpcConfig, x0: &EgoState, env: &PlanEnv, controls: &[super::Control]) -> Result<f64> {
    let p0 = Vec2::new(x0.x, x0.y);
    let states = crate::lip::rollout(x0, controls, &cfg.lip);
    let dp0 = Vec2::new(states[1].x, states[1].y) - p0;
    let fc = forecast_peds(model, &env.peds, p0, dp0)?;
    let (centers, th) = social_path(model, &fc, p0, env.goal, dp0, controls.len())?;
    let r = Rollout::new(x0, &pack(controls), &cfg.lip);
    Ok(social_cost(&r, &centers, th, 1.0, 1.0, None))
}
