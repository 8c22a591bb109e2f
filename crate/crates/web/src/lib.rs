//! WebAssembly bindings for the browser demo. Every entry point takes and
//! returns JSON strings so the page needs no generated type glue.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use szn_core::lip::{kinematics_ok, rollout, step, Control, EgoState, KinematicBounds, LipParams};
use szn_core::sim::crowd::{Crowd, CrowdParams};
use szn_core::zono::{Vec2, Zonotope2, LSE_TEMPERATURE};
use wasm_bindgen::prelude::*;

#[derive(Deserialize)]
struct ZonoIn {
    center: [f64; 2],
    generators: Vec<[f64; 2]>,
}

impl ZonoIn {
    fn build(&self) -> Result<Zonotope2, JsError> {
        let gens = self.generators.iter().map(|g| Vec2::new(g[0], g[1])).collect();
        Ok(Zonotope2::new(Vec2::new(self.center[0], self.center[1]), gens)?)
    }
}

fn pts(v: &[Vec2]) -> Vec<[f64; 2]> {
    v.iter().map(|p| [p.x, p.y]).collect()
}

fn parse<'a, T: Deserialize<'a>>(s: &'a str) -> Result<T, JsError> {
    serde_json::from_str(s).map_err(|e| JsError::new(&e.to_string()))
}

fn emit<T: Serialize>(v: &T) -> Result<String, JsError> {
    serde_json::to_string(v).map_err(|e| JsError::new(&e.to_string()))
}

#[derive(Serialize)]
struct ZonoReport {
    a: Vec<[f64; 2]>,
    b: Vec<[f64; 2]>,
    sum: Vec<[f64; 2]>,
    intersects: bool,
    probe_in_a: bool,
    residual: f64,
    residual_smooth: f64,
    facets: usize,
}

/// Polygons of `a`, `b` and `a ⊕ b`, their intersection test, and the
/// half-space residual of `probe` with respect to `a`.
#[wasm_bindgen]
pub fn zonotope_report(a: &str, b: &str, probe_x: f64, probe_y: f64) -> Result<String, JsError> {
    let za = parse::<ZonoIn>(a)?.build()?.padded();
    let zb = parse::<ZonoIn>(b)?.build()?.padded();
    let p = Vec2::new(probe_x, probe_y);
    let h = za.to_halfspace()?;
    emit(&ZonoReport {
        a: pts(&za.vertices()),
        b: pts(&zb.vertices()),
        sum: pts(&za.minkowski_sum(&zb).vertices()),
        intersects: za.intersects(&zb)?,
        probe_in_a: h.residual(&p) <= 0.0,
        residual: h.residual(&p),
        residual_smooth: h.residual_lse(&p, LSE_TEMPERATURE),
        facets: h.len(),
    })
}

#[derive(Serialize)]
struct RolloutStep {
    x: f64,
    y: f64,
    v: f64,
    theta: f64,
    admissible: bool,
}

/// Rolls the step-to-step pendulum forward under a constant control.
#[wasm_bindgen]
pub fn lip_rollout(v0: f64, theta0: f64, u_f: f64, u_dtheta: f64, steps: usize) -> Result<String, JsError> {
    let p = LipParams::default();
    let b = KinematicBounds::default();
    let x0 = EgoState { x: 0.0, y: 0.0, v_loc: v0, theta: theta0 };
    let u = Control { u_f, u_dtheta };
    let states = rollout(&x0, &vec![u; steps.min(200)], &p);
    let out: Vec<RolloutStep> = states
        .iter()
        .map(|s| RolloutStep { x: s.x, y: s.y, v: s.v_loc, theta: s.theta, admissible: kinematics_ok(s, &u, &b, &p) })
        .collect();
    emit(&out)
}

/// A social-force crowd plus a steerable robot walking the pendulum model.
#[wasm_bindgen]
pub struct CrowdDemo {
    crowd: Crowd,
    ego: EgoState,
    lip: LipParams,
    min_distance: f64,
}

#[derive(Serialize)]
struct Frame {
    peds: Vec<[f64; 2]>,
    ego: [f64; 3],
    min_distance: f64,
    radius: f64,
    arena: f64,
}

#[wasm_bindgen]
impl CrowdDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, pedestrians: usize) -> CrowdDemo {
        let mut crowd = Crowd::new(CrowdParams::default(), ChaCha8Rng::seed_from_u64(seed));
        let ego = EgoState { x: 1.0, y: 7.0, v_loc: 0.3, theta: 0.0 };
        crowd.spawn(pedestrians.min(40), Vec2::new(ego.x, ego.y), 2.0);
        CrowdDemo { crowd, ego, lip: LipParams::default(), min_distance: f64::INFINITY }
    }

    /// One robot step with the given foot offset and turn; the crowd
    /// advances by the step time and reacts to the robot.
    pub fn step(&mut self, u_f: f64, u_dtheta: f64) -> Result<String, JsError> {
        let b = KinematicBounds::default();
        let u = Control { u_f: u_f.clamp(b.uf_lb, b.uf_ub), u_dtheta: u_dtheta.clamp(-b.dtheta_max, b.dtheta_max) };
        let mut next = step(&self.ego, &u, &self.lip);
        let side = self.crowd.params.arena;
        next.x = next.x.clamp(0.0, side);
        next.y = next.y.clamp(0.0, side);
        self.ego = next;
        self.crowd.step(self.lip.step_time, Some(Vec2::new(next.x, next.y)));
        let e = Vec2::new(next.x, next.y);
        for p in &self.crowd.peds {
            self.min_distance = self.min_distance.min((p.pos - e).norm());
        }
        self.frame()
    }

    pub fn frame(&self) -> Result<String, JsError> {
        emit(&Frame {
            peds: self.crowd.peds.iter().map(|p| [p.pos.x, p.pos.y]).collect(),
            ego: [self.ego.x, self.ego.y, self.ego.theta],
            min_distance: self.min_distance,
            radius: self.crowd.params.radius,
            arena: self.crowd.params.arena,
        })
    }
}
