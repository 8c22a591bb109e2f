//! Network inputs and targets derived from a [`Window`].

use crate::data::{Window, PAST};
use crate::zono::Vec2;

use super::loss::midpoints;
use super::szn::HIST_DIM;
use super::zseq::ZonotopeSeq;

pub fn flatten(points: &[Vec2], origin: Vec2) -> Vec<f64> {
    points.iter().flat_map(|p| [p.x - origin.x, p.y - origin.y]).collect()
}

/// Per-pedestrian PPN sample, ego-origin frame.
#[derive(Debug, Clone)]
pub struct PedSample {
    pub hist: Vec<f64>,
    /// Current position (last history point).
    pub current: Vec2,
    /// True endpoint relative to `current`.
    pub end_rel: Vec2,
    pub future: Vec<Vec2>,
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub origin: Vec2,
    pub ego_next: Vec2,
    pub goal: Vec2,
    /// Heading of the last observed ego displacement.
    pub heading: f64,
    pub ego_future: Vec<Vec2>,
    pub gt_traj: Vec<f64>,
    /// ESN pedestrian input built from the true neighbour futures.
    pub ped_sum: Vec<f64>,
    pub peds: Vec<PedSample>,
}

/// Sum over pedestrians of `[c_1 … c_7, endpoint]`, all relative to the ego.
/// Each entry of `futures` holds 8 points (7 centers + endpoint).
pub fn ped_sum<'a>(futures: impl IntoIterator<Item = &'a [Vec2]>) -> Vec<f64> {
    let mut s = vec![0.0; HIST_DIM];
    for f in futures {
        debug_assert_eq!(f.len(), HIST_DIM / 2);
        for (i, p) in f.iter().enumerate() {
            s[2 * i] += p.x;
            s[2 * i + 1] += p.y;
        }
    }
    s
}

/// ESN pedestrian input from predicted sequences (ego-origin frame):
/// 7 predicted centers and the endpoint, absolute positions.
pub fn ped_points_from_prediction(seq: &ZonotopeSeq, endpoint: Vec2) -> Vec<Vec2> {
    let mut v = seq.centers();
    v.push(endpoint);
    v
}

pub fn heading_of(past: &[Vec2], fallback: Vec2) -> f64 {
    let d = past[PAST - 1] - past[PAST - 2];
    if d.norm() > 1e-6 {
        d.y.atan2(d.x)
    } else if fallback.norm() > 1e-9 {
        fallback.y.atan2(fallback.x)
    } else {
        0.0
    }
}

impl Sample {
    pub fn from_window(w: &Window) -> Self {
        let origin = w.current();
        let rel = |p: Vec2| p - origin;
        let goal = rel(w.goal);
        let ego_future: Vec<Vec2> = w.ego_future.iter().map(|&p| rel(p)).collect();
        let peds: Vec<PedSample> = w
            .neighbors
            .iter()
            .map(|n| {
                let current = rel(n.past[PAST - 1]);
                let future: Vec<Vec2> = n.future.iter().map(|&p| rel(p)).collect();
                PedSample { hist: flatten(&n.past, origin), current, end_rel: future[7] - current, future }
            })
            .collect();
        let ped_pts: Vec<Vec<Vec2>> = peds
            .iter()
            .map(|p| {
                let mut v = midpoints(&p.future);
                v.push(p.future[7]);
                v
            })
            .collect();
        Self {
            origin,
            ego_next: ego_future[0],
            goal,
            heading: heading_of(&w.ego_past, goal),
            gt_traj: flatten(&ego_future, Vec2::zeros()),
            ego_future,
            ped_sum: ped_sum(ped_pts.iter().map(|v| v.as_slice())),
            peds,
        }
    }
}
