use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use szn_core::data::{load_corpus, loo_split, Window};
use szn_core::nn::checkpoint;
use szn_core::nn::features::Sample;
use szn_core::nn::train::{evaluate_window, predict_window, train, write_loss_csv, TrainConfig, WindowPrediction};
use szn_core::nn::SznModel;
use szn_core::planner::{Planner, PlannerMode};
use szn_core::refine::{read_gp_csv, synthesize_gp_data, write_gp_csv, GpModel, PerturbedPlant};
use szn_core::selftest;
use szn_core::sim::corpus::write_corpus;
use szn_core::sim::metrics::{mean, run_benchmark, summarize, write_rows, EpisodeRow};
use szn_core::sim::{run_episode, Scenario};

use crate::config::RunConfig;
use crate::{CliError, Outcome};

fn require(path: &Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    let p = path.clone().ok_or_else(|| CliError::Usage(format!("no {what} given")))?;
    if !p.exists() {
        return Err(CliError::Usage(format!("{what} {} does not exist", p.display())));
    }
    Ok(p)
}

fn out_file(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.out_dir.join(name)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn load_model(cfg: &RunConfig) -> Result<Arc<SznModel>, CliError> {
    let p = require(&cfg.paths.checkpoint, "checkpoint")?;
    Ok(Arc::new(checkpoint::load(&p)?))
}

fn load_gp(cfg: &RunConfig) -> Result<Option<GpModel>, CliError> {
    match &cfg.paths.gp_data {
        None => Ok(None),
        Some(_) => {
            let p = require(&cfg.paths.gp_data, "GP data file")?;
            let data = read_gp_csv(&p)?;
            Ok(Some(GpModel::fit(&data, cfg.seed)?))
        }
    }
}

/// Training and held-out windows per the data section.
fn split(cfg: &RunConfig) -> Result<(Vec<Window>, Vec<Window>), CliError> {
    let dir = require(&cfg.paths.dataset, "dataset directory")?;
    let scenes = load_corpus(&dir, &cfg.data.columns)?;
    if scenes.is_empty() {
        return Err(CliError::Usage(format!("no *.txt scenes in {}", dir.display())));
    }
    if !scenes.iter().any(|(n, _)| *n == cfg.data.held_out) {
        let names: Vec<&str> = scenes.iter().map(|(n, _)| n.as_str()).collect();
        return Err(CliError::Usage(format!("held-out scene {:?} not among {names:?}", cfg.data.held_out)));
    }
    let (mut tr, mut te) = loo_split(&scenes, &cfg.data.held_out);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    tr.shuffle(&mut rng);
    tr.truncate(cfg.data.max_windows);
    te.shuffle(&mut rng);
    te.truncate(cfg.data.test_windows);
    Ok((tr, te))
}

#[derive(Serialize)]
struct EvalSummary {
    windows: usize,
    ade: f64,
    fde: f64,
    stl_violation: f64,
}

fn evaluate(model: &SznModel, windows: &[Window], tc: &TrainConfig) -> Result<EvalSummary, CliError> {
    let evals = windows.iter().map(|w| evaluate_window(model, &Sample::from_window(w), tc)).collect::<Result<Vec<_>, _>>()?;
    let pick = |f: fn(&szn_core::nn::train::WindowEval) -> f64| mean(&evals.iter().map(f).collect::<Vec<_>>());
    Ok(EvalSummary { windows: evals.len(), ade: pick(|e| e.ade), fde: pick(|e| e.fde), stl_violation: pick(|e| e.stl) })
}

pub fn train_cmd(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let (tr, te) = split(cfg)?;
    info!("training on {} windows, {} held out from {:?}", tr.len(), te.len(), cfg.data.held_out);
    let samples: Vec<Sample> = tr.iter().map(Sample::from_window).collect();
    let tc = TrainConfig { seed: cfg.seed, ..cfg.train.clone() };
    let mut model = SznModel::new(cfg.arch.build(), &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let t0 = Instant::now();
    let every = (tc.epochs / 10).max(1);
    let logs = train(&mut model, &samples, &tc, |e| {
        if e.epoch % every == 0 || e.epoch == tc.epochs {
            info!("epoch {:>4}  loss {:.5}  ade {:.4}", e.epoch, e.loss.total, e.loss.ade_esn);
        }
    })?;
    let seconds = t0.elapsed().as_secs_f64();
    let ckpt = cfg.paths.checkpoint.clone().unwrap_or_else(|| out_file(cfg, "checkpoint.json"));
    checkpoint::save(&ckpt, &model)?;
    write_loss_csv(&out_file(cfg, "loss.csv"), &logs)?;
    let eval = evaluate(&model, &te, &tc)?;
    #[derive(Serialize)]
    struct Report {
        train_windows: usize,
        epochs: usize,
        seconds: f64,
        first_loss: f64,
        last_loss: f64,
        held_out: EvalSummary,
    }
    let report = Report {
        train_windows: samples.len(),
        epochs: logs.len(),
        seconds,
        first_loss: logs.first().map_or(f64::NAN, |l| l.loss.total),
        last_loss: logs.last().map_or(f64::NAN, |l| l.loss.total),
        held_out: eval,
    };
    info!("held-out ADE {:.3} m, FDE {:.3} m; checkpoint {}", report.held_out.ade, report.held_out.fde, ckpt.display());
    write_json(&out_file(cfg, "train_report.json"), &report)?;
    Ok(Outcome::Pass)
}

pub fn predict_cmd(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let model = load_model(cfg)?;
    let (_, te) = split(cfg)?;
    #[derive(Serialize)]
    struct Line<'a> {
        scene: &'a str,
        ego_id: i64,
        start_frame: i64,
        ade: f64,
        fde: f64,
        #[serde(flatten)]
        prediction: WindowPrediction,
    }
    let path = out_file(cfg, "predictions.jsonl");
    let file = fs::File::create(&path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    for win in &te {
        let s = Sample::from_window(win);
        let e = evaluate_window(&model, &s, &cfg.train)?;
        let line = Line { scene: &win.scene, ego_id: win.ego_id, start_frame: win.start_frame, ade: e.ade, fde: e.fde, prediction: predict_window(&model, &s)? };
        serde_json::to_writer(&mut w, &line).map_err(|e| CliError::Runtime(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
    let eval = evaluate(&model, &te, &cfg.train)?;
    info!("{} windows: ADE {:.3} m, FDE {:.3} m", eval.windows, eval.ade, eval.fde);
    write_json(&out_file(cfg, "metrics.json"), &eval)?;
    Ok(Outcome::Pass)
}

pub fn simulate_cmd(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let model = load_model(cfg)?;
    let mut planner = Planner::new(cfg.planner.clone(), model, load_gp(cfg)?)?;
    let scenario = Scenario::sample(&cfg.scenario, cfg.seed);
    let path = out_file(cfg, "trajectory.jsonl");
    let file = fs::File::create(&path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    let ep = run_episode(&scenario, &mut planner, Some(&mut w))?;
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
    info!(
        "{} seed {}: reached {} in {} steps, min distance {:.2} m, {} fallback stops",
        ep.mode.name(),
        ep.seed,
        ep.reached,
        ep.steps,
        ep.min_distance,
        ep.fallbacks
    );
    write_json(&out_file(cfg, "episode.json"), &ep)?;
    Ok(Outcome::Pass)
}

pub fn benchmark_cmd(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let model = load_model(cfg)?;
    let gp = load_gp(cfg)?;
    let seeds: Vec<u64> = (cfg.seed..cfg.seed + cfg.benchmark.episodes as u64).collect();
    let t0 = Instant::now();
    let eps = run_benchmark(model, gp, &cfg.planner, &cfg.scenario, &cfg.benchmark.modes, &seeds)?;
    info!("{} episodes in {:.1} s", eps.len(), t0.elapsed().as_secs_f64());
    let rows: Vec<_> = cfg
        .benchmark
        .modes
        .iter()
        .map(|&m| summarize(m, &eps.iter().filter(|e| e.mode == m).cloned().collect::<Vec<_>>()))
        .collect();
    write_rows(&out_file(cfg, "benchmark.csv"), &rows)?;
    write_rows(&out_file(cfg, "episodes.csv"), &eps.iter().map(EpisodeRow::from).collect::<Vec<_>>())?;
    println!("{:<10} {:>8} {:>10} {:>9} {:>9} {:>10} {:>9}", "mode", "reached", "steps", "min_d", "safe", "solve_ms", "social");
    for r in &rows {
        println!(
            "{:<10} {:>5}/{:<2} {:>10.2} {:>9.3} {:>9.2} {:>10.2} {:>9.4}",
            r.mode, r.reached, r.episodes, r.mean_steps, r.worst_min_distance, r.safe_fraction, r.mean_solve_ms, r.mean_social_metric
        );
    }
    let worst = eps.iter().map(|e| e.converged_defect).fold(0.0, f64::max);
    if worst > cfg.benchmark.residual_tolerance {
        eprintln!("converged solve violates its constraints by {worst:.3e}");
        return Ok(Outcome::Fail);
    }
    Ok(Outcome::Pass)
}

pub fn selftest_cmd(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let t0 = Instant::now();
    let mut checks = selftest::run_all(cfg.seed)?;
    let mut lines: Vec<String> = checks.iter().map(|c| c.to_string()).collect();
    if let Some(p) = &cfg.paths.checkpoint {
        match checkpoint::load(p) {
            Ok(_) => lines.push(format!("PASS checkpoint integrity ({})", p.display())),
            Err(e) => {
                lines.push(format!("FAIL checkpoint integrity ({}): {e}", p.display()));
                checks.push(selftest::Check { name: "checkpoint integrity".into(), value: 1.0, bound: 0.0, passed: false });
            }
        }
    }
    for l in &lines {
        println!("{l}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} checks, {failed} failed, {:.1} s", checks.len(), t0.elapsed().as_secs_f64());
    write_json(&out_file(cfg, "selftest.json"), &checks)?;
    Ok(if failed == 0 { Outcome::Pass } else { Outcome::Fail })
}

/// Writes a synthetic trajectory corpus and a model-error data set.
pub fn synth_cmd(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let dir = out_file(cfg, "corpus");
    let corpus = szn_core::sim::corpus::CorpusConfig { seed: cfg.seed, ..cfg.corpus.clone() };
    let names = write_corpus(&dir, &corpus)?;
    let gp = synthesize_gp_data(200, &PerturbedPlant::default(), &cfg.planner.lip, cfg.seed);
    write_gp_csv(&out_file(cfg, "gp_data.csv"), &gp)?;
    info!("wrote scenes {names:?} to {} and {} GP samples", dir.display(), gp.len());
    Ok(Outcome::Pass)
}

/// Modes named on the command line replace the configured list.
pub fn parse_modes(list: &str) -> Result<Vec<PlannerMode>, CliError> {
    list.split(',').map(|s| s.trim().parse::<PlannerMode>().map_err(|e| CliError::Usage(e.to_string()))).collect()
}
