use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::PAST;
use crate::lip::EgoState;
use crate::planner::PedObs;
use crate::zono::Vec2;

use super::crowd::{Crowd, CrowdParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub goal: [f64; 2],
    pub pedestrians: usize,
    pub max_steps: usize,
    pub goal_tolerance: f64,
    pub observe_radius: f64,
    /// Minimum initial distance between pedestrians and the ego start.
    pub clearance: f64,
    pub crowd: CrowdParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            goal: [6.0, 12.0],
            pedestrians: 5,
            max_steps: 100,
            goal_tolerance: 1.0,
            observe_radius: 4.0,
            clearance: 3.0,
            crowd: CrowdParams::default(),
        }
    }
}

/// A reproducible episode setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub cfg: ScenarioConfig,
    pub seed: u64,
    pub ego_start: EgoState,
}

impl Scenario {
    pub fn sample(cfg: &ScenarioConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = rng.gen_range(0.0..13.0);
        Self { cfg: cfg.clone(), seed, ego_start: EgoState { x: 0.0, y, v_loc: 0.0, theta: 0.0 } }
    }

    pub fn goal(&self) -> Vec2 {
        Vec2::new(self.cfg.goal[0], self.cfg.goal[1])
    }
}

/// Crowd plus each pedestrian's recent positions.
pub struct World {
    pub crowd: Crowd,
    history: BTreeMap<i64, VecDeque<Vec2>>,
}

impl World {
    /// Spawns the crowd and pre-rolls it so every pedestrian has a full
    /// history when the ego starts.
    pub fn new(s: &Scenario, dt: f64) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(s.seed ^ 0x5eed_c0de);
        let mut crowd = Crowd::new(s.cfg.crowd.clone(), rng);
        let start = Vec2::new(s.ego_start.x, s.ego_start.y);
        crowd.spawn(s.cfg.pedestrians, start, s.cfg.clearance);
        let mut w = Self { crowd, history: BTreeMap::new() };
        w.record();
        for _ in 1..PAST {
            w.crowd.step(dt, Some(start));
            w.record();
        }
        w
    }

    fn record(&mut self) {
        for p in &self.crowd.peds {
            let h = self.history.entry(p.id).or_default();
            h.push_back(p.pos);
            if h.len() > PAST {
                h.pop_front();
            }
        }
    }

    pub fn step(&mut self, dt: f64, ego: Vec2) {
        self.crowd.step(dt, Some(ego));
        self.record();
    }

    /// Pedestrians within `radius` of `ego` with complete histories.
    pub fn observe(&self, ego: Vec2, radius: f64) -> Vec<PedObs> {
        self.crowd
            .peds
            .iter()
            .filter(|p| (p.pos - ego).norm() <= radius)
            .filter_map(|p| {
                let h = self.history.get(&p.id)?;
                (h.len() == PAST).then(|| PedObs { id: p.id, history: h.iter().copied().collect() })
            })
            .collect()
    }

    pub fn min_distance(&self, ego: Vec2) -> f64 {
        self.crowd.peds.iter().map(|p| (p.pos - ego).norm()).fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_is_reproducible() {
        let cfg = ScenarioConfig::default();
        let a = Scenario::sample(&cfg, 4);
        assert_eq!(a, Scenario::sample(&cfg, 4));
        assert!(a.ego_start.x == 0.0 && (0.0..13.0).contains(&a.ego_start.y) && a.ego_start.theta == 0.0);
    }

    #[test]
    fn preroll_fills_histories_and_conserves_agents() {
        let s = Scenario::sample(&ScenarioConfig::default(), 9);
        let mut w = World::new(&s, 0.4);
        assert_eq!(w.crowd.peds.len(), 5);
        let all = w.observe(Vec2::new(7.0, 7.0), 100.0);
        assert_eq!(all.len(), 5);
        assert!(all.iter().all(|p| p.history.len() == PAST));
        for _ in 0..50 {
            let before: Vec<Vec2> = w.crowd.peds.iter().map(|p| p.pos).collect();
            w.step(0.4, Vec2::new(3.0, 3.0));
            assert_eq!(w.crowd.peds.len(), 5);
            for (a, b) in before.iter().zip(&w.crowd.peds) {
                assert!((b.pos - a).norm() <= w.crowd.params.v_cap * 0.4 + 1e-9);
            }
        }
    }
}
