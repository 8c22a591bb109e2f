//! End to end: synthesize a corpus, train a model, run a short benchmark.
//! Usage: pipeline [epochs] [windows] [seeds]

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use szn_core::data::{load_corpus, loo_split, ColumnSpec};
use szn_core::nn::features::Sample;
use szn_core::nn::train::{evaluate_window, train, TrainConfig};
use szn_core::nn::{SznArch, SznModel};
use szn_core::planner::{MpcConfig, PlannerMode};
use szn_core::sim::corpus::{write_corpus, CorpusConfig};
use szn_core::sim::metrics::{run_benchmark, summarize};
use szn_core::sim::ScenarioConfig;

fn main() -> szn_core::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().unwrap()).collect();
    let epochs = args.first().copied().unwrap_or(40);
    let n_windows = args.get(1).copied().unwrap_or(1500);
    let n_seeds = args.get(2).copied().unwrap_or(5) as u64;
    let ckpt = std::env::temp_dir().join("szn_model.json");
    if epochs == 0 {
        let model = Arc::new(szn_core::nn::checkpoint::load(&ckpt)?);
        return bench(model, n_seeds);
    }
    let dir = std::env::temp_dir().join("szn_pipeline_corpus");
    write_corpus(&dir, &CorpusConfig::default())?;
    let scenes = load_corpus(&dir, &ColumnSpec::default())?;
    for (n, w) in &scenes {
        println!("{n}: {} windows", w.len());
    }
    let (mut tr, te) = loo_split(&scenes, "univ");
    tr.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
    tr.truncate(n_windows);
    let samples: Vec<Sample> = tr.iter().map(Sample::from_window).collect();
    let test: Vec<Sample> = te.iter().take(600).map(Sample::from_window).collect();
    let mut model = SznModel::new(SznArch::default(), &mut ChaCha8Rng::seed_from_u64(0))?;
    let cfg = TrainConfig { epochs, ..Default::default() };
    let t0 = std::time::Instant::now();
    train(&mut model, &samples, &cfg, |e| {
        if e.epoch % 5 == 0 || e.epoch + 1 == epochs {
            println!("epoch {} loss {:.4} ade {:.3} {:?}", e.epoch, e.loss.total, e.loss.ade_esn, e.loss);
        }
    })?;
    println!("train time {:.1}s", t0.elapsed().as_secs_f64());
    let ade: f64 = test.iter().map(|s| evaluate_window(&model, s, &cfg).unwrap().ade).sum::<f64>() / test.len() as f64;
    println!("held-out ADE {ade:.3}");
    szn_core::nn::checkpoint::save(&ckpt, &model)?;
    if n_seeds == 0 {
        return Ok(());
    }
    bench(Arc::new(model), n_seeds)
}

fn bench(model: Arc<SznModel>, n_seeds: u64) -> szn_core::Result<()> {
    let seeds: Vec<u64> = (0..n_seeds).collect();
    for mode in [PlannerMode::Decoupled, PlannerMode::Dcbf, PlannerMode::Coupled] {
        let t = std::time::Instant::now();
        let eps = run_benchmark(model.clone(), None, &MpcConfig::default(), &ScenarioConfig::default(), &[mode], &seeds)?;
        println!("{:?} ({:.1}s)", summarize(mode, &eps), t.elapsed().as_secs_f64());
        for e in &eps {
            println!("  seed {} reached {} steps {} min {:.2} fallbacks {} conv {}/{} defect {:.2e}", e.seed, e.reached, e.steps, e.min_distance, e.fallbacks, e.converged.iter().filter(|c| **c).count(), e.converged.len(), e.converged_defect);
        }
    }
    Ok(())
}
