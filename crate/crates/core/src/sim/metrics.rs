//! Episode summaries and the benchmark table.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::SznModel;
use crate::planner::{MpcConfig, Planner, PlannerMode};
use crate::refine::GpModel;

use super::episode::{run_episode, EpisodeResult};
use super::scenario::{Scenario, ScenarioConfig};

pub use crate::nn::train::ade_fde;

/// Distance below which a step counts as a close call (m).
pub const SAFE_DISTANCE: f64 = 0.5;

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

/// One benchmark row: a planner mode aggregated over all seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub mode: String,
    pub episodes: usize,
    pub reached: usize,
    pub mean_steps: f64,
    pub mean_min_distance: f64,
    pub worst_min_distance: f64,
    pub safe_fraction: f64,
    pub mean_solve_ms: f64,
    pub max_solve_ms: f64,
    pub solve_hz: f64,
    pub converged_fraction: f64,
    pub fallbacks: usize,
    pub mean_v: f64,
    pub var_v: f64,
    pub mean_social_metric: f64,
}

pub fn summarize(mode: PlannerMode, eps: &[EpisodeResult]) -> BenchmarkRow {
    let steps: Vec<f64> = eps.iter().filter(|e| e.reached).map(|e| e.steps as f64).collect();
    let mins: Vec<f64> = eps.iter().map(|e| e.min_distance).collect();
    let solves: Vec<f64> = eps.iter().flat_map(|e| e.solve_times.iter().copied()).collect();
    let conv: Vec<bool> = eps.iter().flat_map(|e| e.converged.iter().copied()).collect();
    let v: Vec<f64> = eps.iter().flat_map(|e| e.v_before_goal.iter().copied()).collect();
    let social: Vec<f64> = eps.iter().flat_map(|e| e.social_metric.iter().copied()).collect();
    let mean_solve = mean(&solves);
    BenchmarkRow {
        mode: mode.name().to_string(),
        episodes: eps.len(),
        reached: steps.len(),
        mean_steps: mean(&steps),
        mean_min_distance: mean(&mins),
        worst_min_distance: mins.iter().copied().fold(f64::INFINITY, f64::min),
        safe_fraction: mins.iter().filter(|&&d| d >= SAFE_DISTANCE).count() as f64 / eps.len().max(1) as f64,
        mean_solve_ms: 1e3 * mean_solve,
        max_solve_ms: 1e3 * solves.iter().copied().fold(0.0, f64::max),
        solve_hz: 1.0 / mean_solve,
        converged_fraction: conv.iter().filter(|&&c| c).count() as f64 / conv.len().max(1) as f64,
        fallbacks: eps.iter().map(|e| e.fallbacks).sum(),
        mean_v: mean(&v),
        var_v: variance(&v),
        mean_social_metric: mean(&social),
    }
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-episode CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub mode: String,
    pub seed: u64,
    pub reached: bool,
    pub steps: usize,
    pub min_distance: f64,
    pub mean_solve_ms: f64,
    pub fallbacks: usize,
    pub mean_social_metric: f64,
}

impl From<&EpisodeResult> for EpisodeRow {
    fn from(e: &EpisodeResult) -> Self {
        Self {
            mode: e.mode.name().to_string(),
            seed: e.seed,
            reached: e.reached,
            steps: e.steps,
            min_distance: e.min_distance,
            mean_solve_ms: 1e3 * mean(&e.solve_times),
            fallbacks: e.fallbacks,
            mean_social_metric: mean(&e.social_metric),
        }
    }
}

/// Runs every `(mode, seed)` pair; episodes are independent and run in
/// parallel when the `parallel` feature is on. Results keep input order.
pub fn run_benchmark(
    model: Arc<SznModel>,
    gp: Option<GpModel>,
    base: &MpcConfig,
    scenario: &ScenarioConfig,
    modes: &[PlannerMode],
    seeds: &[u64],
) -> Result<Vec<EpisodeResult>> {
    let jobs: Vec<(PlannerMode, u64)> = modes.iter().flat_map(|&m| seeds.iter().map(move |&s| (m, s))).collect();
    let run = |&(mode, seed): &(PlannerMode, u64)| -> Result<EpisodeResult> {
        let cfg = MpcConfig { mode, ..base.clone() };
        let mut planner = Planner::new(cfg, model.clone(), gp.clone())?;
        run_episode(&Scenario::sample(scenario, seed), &mut planner, None)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        jobs.par_iter().map(run).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        jobs.iter().map(run).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zono::Vec2;

    #[test]
    fn ade_fde_oracles() {
        let fut: Vec<Vec2> = (0..8).map(|i| Vec2::new(i as f64, 0.5 * i as f64)).collect();
        let mids: Vec<Vec2> = (0..7).map(|i| (fut[i] + fut[i + 1]) / 2.0).collect();
        assert_eq!(ade_fde(&mids, &fut), (0.0, 0.0));
        let off: Vec<Vec2> = mids.iter().map(|m| m + Vec2::new(0.0, 0.3)).collect();
        let (a, f) = ade_fde(&off, &fut);
        assert!((a - 0.3).abs() < 1e-12 && (f - 0.3).abs() < 1e-12);
    }

    #[test]
    fn stats() {
        assert_eq!(mean(&[1.0, 2.0, 3.0]), 2.0);
        assert_eq!(variance(&[1.0, 2.0, 3.0]), 1.0);
        assert!(mean(&[]).is_nan());
    }
}
