//! Flat 70-value encoding of a 7-step zonotope sequence.

use serde::{Deserialize, Serialize};

use crate::zono::{Vec2, Zonotope2};

pub const STEPS: usize = 7;
pub const GENERATORS: usize = 4;
pub const STEP_DIM: usize = 2 + 2 * GENERATORS;
pub const OUT_DIM: usize = STEPS * STEP_DIM;

/// Per-step layout is `[cx, cy, g1x, g1y, …, g4x, g4y]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZonotopeSeq {
    pub zonos: Vec<Zonotope2>,
}

impl ZonotopeSeq {
    pub fn decode(out: &[f64]) -> Self {
        assert_eq!(out.len(), OUT_DIM, "zonotope sequence needs {OUT_DIM} values");
        let zonos = out
            .chunks(STEP_DIM)
            .map(|s| Zonotope2 {
                center: Vec2::new(s[0], s[1]),
                generators: (0..GENERATORS).map(|j| Vec2::new(s[2 + 2 * j], s[3 + 2 * j])).collect(),
            })
            .collect();
        Self { zonos }
    }

    pub fn encode(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(OUT_DIM);
        for z in &self.zonos {
            out.extend([z.center.x, z.center.y]);
            for g in &z.generators {
                out.extend([g.x, g.y]);
            }
        }
        out
    }

    pub fn translate(&self, by: Vec2) -> Self {
        Self { zonos: self.zonos.iter().map(|z| z.translate(by)).collect() }
    }

    pub fn centers(&self) -> Vec<Vec2> {
        self.zonos.iter().map(|z| z.center).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let v: Vec<f64> = (0..OUT_DIM).map(|i| i as f64 * 0.1).collect();
        let s = ZonotopeSeq::decode(&v);
        assert_eq!(s.zonos.len(), STEPS);
        assert_eq!(s.zonos[1].center, Vec2::new(1.0, 1.1));
        assert_eq!(s.zonos[1].generators[3], Vec2::new(v[18], v[19]));
        assert_eq!(s.encode(), v);
    }
}
