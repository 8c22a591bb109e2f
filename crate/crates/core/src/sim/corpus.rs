//! Synthetic ETH/UCY-style corpus drawn from the crowd model. Pedestrians
//! enter at an arena edge, walk to another edge and leave; each scene uses
//! its own density and seed. Output follows the raw `frame id x y` format.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{write_raw, Track};
use crate::error::Result;
use crate::zono::Vec2;

use super::crowd::{edge_point, Crowd, CrowdParams};

pub const SCENES: [(&str, usize); 5] = [("eth", 7), ("hotel", 5), ("univ", 12), ("zara1", 7), ("zara2", 9)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    /// Recorded steps per scene (0.4 s apart).
    pub steps: usize,
    pub frame_stride: i64,
    pub speed_min: f64,
    pub speed_max: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { steps: 240, frame_stride: 10, speed_min: 0.2, speed_max: 1.6, seed: 7 }
    }
}

fn entrant(c: &mut Crowd, cfg: &CorpusConfig) -> (Vec2, Vec2, f64) {
    let side = c.params.arena;
    let rng = c.rng();
    let p = edge_point(rng, side);
    let speed = rng.gen_range(cfg.speed_min..cfg.speed_max);
    let goal = loop {
        let g = edge_point(rng, side);
        if (g - p).norm() > side / 2.0 {
            break g;
        }
    };
    (p, goal, speed)
}

/// One scene with `n` concurrent pedestrians.
pub fn synthesize_scene(n: usize, cfg: &CorpusConfig, seed: u64) -> Vec<Track> {
    let params = CrowdParams { goal_tolerance: 0.0, ..CrowdParams::default() };
    let mut crowd = Crowd::new(params, ChaCha8Rng::seed_from_u64(seed));
    // start with pedestrians already inside, mid-walk
    for _ in 0..n {
        let (a, goal, speed) = entrant(&mut crowd, cfg);
        let t = crowd.rng().gen_range(0.1..0.7);
        crowd.add(a + (goal - a) * t, goal, speed);
    }
    let mut tracks: Vec<Track> = Vec::new();
    let mut open: std::collections::BTreeMap<i64, usize> = Default::default();
    for step in 0..cfg.steps {
        let frame = step as i64 * cfg.frame_stride;
        for p in &crowd.peds {
            let slot = *open.entry(p.id).or_insert_with(|| {
                tracks.push(Track { id: p.id, frames: Vec::new(), points: Vec::new() });
                tracks.len() - 1
            });
            tracks[slot].frames.push(frame);
            tracks[slot].points.push(p.pos);
        }
        crowd.step(0.4, None);
        let before = crowd.peds.len();
        crowd.peds.retain(|p| (p.goal - p.pos).norm() > 0.6);
        for _ in crowd.peds.len()..before {
            let (a, goal, speed) = entrant(&mut crowd, cfg);
            crowd.add(a, goal, speed);
        }
    }
    tracks
}

/// Writes one `<scene>.txt` per scene into `dir`.
pub fn write_corpus(dir: &Path, cfg: &CorpusConfig) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    SCENES
        .iter()
        .enumerate()
        .map(|(i, (name, n))| {
            let tracks = synthesize_scene(*n, cfg, cfg.seed.wrapping_mul(1000).wrapping_add(i as u64));
            write_raw(&dir.join(format!("{name}.txt")), &tracks)?;
            Ok(name.to_string())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_windows, NEIGHBOR_RADIUS};

    #[test]
    fn scene_yields_windows_and_is_deterministic() {
        let cfg = CorpusConfig { steps: 80, ..Default::default() };
        let a = synthesize_scene(6, &cfg, 1);
        let b = synthesize_scene(6, &cfg, 1);
        assert_eq!(a.len(), b.len());
        assert_eq!(a[0].points, b[0].points);
        let w = make_windows("s", &a, NEIGHBOR_RADIUS);
        assert!(w.len() > 50, "{} windows", w.len());
        for t in &a {
            for f in t.frames.windows(2) {
                assert_eq!(f[1] - f[0], 10);
            }
        }
    }
}
