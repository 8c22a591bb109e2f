//! Social-force pedestrian crowd.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::zono::Vec2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrowdParams {
    /// Repulsion strength (m/s²).
    pub strength: f64,
    /// Repulsion range (m).
    pub range: f64,
    /// Body radius (m).
    pub radius: f64,
    pub relaxation: f64,
    pub speed_mean: f64,
    pub speed_std: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    /// Hard speed cap after integration (m/s).
    pub v_cap: f64,
    pub substeps: usize,
    /// Square arena side (m), origin at the lower-left corner.
    pub arena: f64,
    pub goal_tolerance: f64,
}

impl Default for CrowdParams {
    fn default() -> Self {
        Self {
            strength: 2.0,
            range: 0.3,
            radius: 0.3,
            relaxation: 0.5,
            speed_mean: 1.2,
            speed_std: 0.2,
            speed_min: 0.6,
            speed_max: 1.6,
            v_cap: 2.0,
            substeps: 8,
            arena: 14.0,
            goal_tolerance: 0.5,
        }
    }
}

impl CrowdParams {
    /// No forces at all: agents keep their velocity.
    pub fn force_free() -> Self {
        Self { strength: 0.0, relaxation: f64::INFINITY, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pedestrian {
    pub id: i64,
    pub pos: Vec2,
    pub vel: Vec2,
    pub goal: Vec2,
    pub pref_speed: f64,
}

#[derive(Debug, Clone)]
pub struct Crowd {
    pub params: CrowdParams,
    pub peds: Vec<Pedestrian>,
    rng: ChaCha8Rng,
    next_id: i64,
}

/// Uniform point on the arena boundary.
pub fn edge_point(rng: &mut impl Rng, side: f64) -> Vec2 {
    let s = rng.gen_range(0.0..side);
    match rng.gen_range(0..4) {
        0 => Vec2::new(s, 0.0),
        1 => Vec2::new(side, s),
        2 => Vec2::new(s, side),
        _ => Vec2::new(0.0, s),
    }
}

impl Crowd {
    pub fn new(params: CrowdParams, rng: ChaCha8Rng) -> Self {
        Self { params, peds: Vec::new(), rng, next_id: 0 }
    }

    pub fn sample_speed(&mut self) -> f64 {
        let p = &self.params;
        let n = Normal::new(p.speed_mean, p.speed_std.max(1e-12)).unwrap();
        n.sample(&mut self.rng).clamp(p.speed_min, p.speed_max)
    }

    pub fn add(&mut self, pos: Vec2, goal: Vec2, pref_speed: f64) -> i64 {
        let id = self.next_id;
        self.next_id += 1;
        let d = goal - pos;
        let vel = if d.norm() > 1e-9 { d / d.norm() * pref_speed } else { Vec2::zeros() };
        self.peds.push(Pedestrian { id, pos, vel, goal, pref_speed });
        id
    }

    /// Spawns `n` pedestrians at least `clearance` from `avoid` and from each
    /// other, heading to random arena-edge goals.
    pub fn spawn(&mut self, n: usize, avoid: Vec2, clearance: f64) {
        let side = self.params.arena;
        let mut placed = 0;
        let mut tries = 0;
        while placed < n && tries < 10_000 {
            tries += 1;
            let p = Vec2::new(self.rng.gen_range(0.5..side - 0.5), self.rng.gen_range(0.5..side - 0.5));
            if (p - avoid).norm() < clearance || self.peds.iter().any(|q| (q.pos - p).norm() < 2.0 * self.params.radius + 0.2) {
                continue;
            }
            let goal = self.far_goal(p);
            let v = self.sample_speed();
            self.add(p, goal, v);
            placed += 1;
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn far_goal(&mut self, from: Vec2) -> Vec2 {
        let side = self.params.arena;
        loop {
            let g = edge_point(&mut self.rng, side);
            if (g - from).norm() > side / 3.0 {
                return g;
            }
        }
    }

    fn repulsion(&self, d: Vec2, r_sum: f64) -> Vec2 {
        let dist = d.norm().max(1e-6);
        d / dist * self.params.strength * ((r_sum - dist) / self.params.range).exp()
    }

    /// Advances all pedestrians by `dt`; `ego` (if any) repels like another
    /// agent of the same radius but is not moved.
    pub fn step(&mut self, dt: f64, ego: Option<Vec2>) {
        let p = self.params.clone();
        let h = dt / p.substeps.max(1) as f64;
        for _ in 0..p.substeps.max(1) {
            let forces: Vec<Vec2> = (0..self.peds.len())
                .map(|i| {
                    let a = &self.peds[i];
                    let to_goal = a.goal - a.pos;
                    let desired = if to_goal.norm() > 1e-9 { to_goal / to_goal.norm() * a.pref_speed } else { Vec2::zeros() };
                    let mut f = if p.relaxation.is_finite() { (desired - a.vel) / p.relaxation } else { Vec2::zeros() };
                    for (j, b) in self.peds.iter().enumerate() {
                        if j != i {
                            f += self.repulsion(a.pos - b.pos, 2.0 * p.radius);
                        }
                    }
                    if let Some(e) = ego {
                        f += self.repulsion(a.pos - e, 2.0 * p.radius);
                    }
                    f
                })
                .collect();
            for (a, f) in self.peds.iter_mut().zip(forces) {
                a.vel += f * h;
                let s = a.vel.norm();
                if s > p.v_cap {
                    a.vel *= p.v_cap / s;
                }
                a.pos += a.vel * h;
                a.pos.x = a.pos.x.clamp(0.0, p.arena);
                a.pos.y = a.pos.y.clamp(0.0, p.arena);
            }
        }
        for i in 0..self.peds.len() {
            if (self.peds[i].goal - self.peds[i].pos).norm() < p.goal_tolerance {
                let from = self.peds[i].pos;
                self.peds[i].goal = self.far_goal(from);
            }
        }
    }
}
