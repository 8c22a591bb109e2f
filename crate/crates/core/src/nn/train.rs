//! Loss assembly, back-propagation over a batch, Adam and the epoch loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stl::SpecThresholds;
use crate::zono::Vec2;

use super::features::Sample;
use super::loss::{endpoint_loss, kl_loss, midpoints, stl_losses, zonotope_losses, ZonoLoss};
use super::szn::SznModel;
use super::zseq::{ZonotopeSeq, GENERATORS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub kl: f64,
    pub zono: f64,
    pub stl: f64,
    /// Sum the KL term over the mini-batch instead of averaging it (the
    /// shaping and STL terms are always batch means).
    pub kl_batch_sum: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { kl: 1.0, zono: 100.0, stl: 1.0, kl_batch_sum: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub weights: LossWeights,
    pub generator_targets: [f64; GENERATORS],
    /// Sampling interval of the trajectories (s).
    pub dt: f64,
    pub thresholds: SpecThresholds,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
            weights: LossWeights::default(),
            generator_targets: [0.1, 0.1, 0.005, 0.005],
            dt: 0.4,
            thresholds: SpecThresholds::default(),
        }
    }
}

/// Unweighted loss components, averaged like the total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub kl_esn: f64,
    pub kl_ppn: f64,
    pub zono_esn: f64,
    pub zono_ppn: f64,
    pub endpoint_ppn: f64,
    pub stl_vel: f64,
    pub stl_heading: f64,
    pub ade_esn: f64,
    pub fde_esn: f64,
}

impl LossBreakdown {
    fn add_scaled(&mut self, o: &LossBreakdown, s: f64) {
        self.total += s * o.total;
        self.kl_esn += s * o.kl_esn;
        self.kl_ppn += s * o.kl_ppn;
        self.zono_esn += s * o.zono_esn;
        self.zono_ppn += s * o.zono_ppn;
        self.endpoint_ppn += s * o.endpoint_ppn;
        self.stl_vel += s * o.stl_vel;
        self.stl_heading += s * o.stl_heading;
        self.ade_esn += s * o.ade_esn;
        self.fde_esn += s * o.fde_esn;
    }

    pub fn is_finite(&self) -> bool {
        [self.total, self.kl_esn, self.kl_ppn, self.zono_esn, self.zono_ppn, self.endpoint_ppn, self.stl_vel, self.stl_heading]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Reparameterization noise for one window: ESN first, then one block per
/// pedestrian.
pub fn draw_noise(rng: &mut ChaCha8Rng, latent: usize, n_peds: usize) -> Vec<Vec<f64>> {
    (0..=n_peds).map(|_| (0..latent).map(|_| StandardNormal.sample(rng)).collect()).collect()
}

/// Loss of one window; gradient is accumulated into `grad` scaled by `scale`,
/// which is `1 / batch size` inside a batch.
pub fn window_loss_grad(
    model: &SznModel,
    s: &Sample,
    noise: &[Vec<f64>],
    cfg: &TrainConfig,
    scale: f64,
    grad: Option<&mut [f64]>,
) -> Result<LossBreakdown> {
    let w = &cfg.weights;
    let w_kl = if w.kl_batch_sum { w.kl / scale } else { w.kl };
    let mut out = LossBreakdown::default();
    let esn = model.esn.train_forward(&s.ped_sum, s.goal, s.ego_next, &s.gt_traj, &noise[0])?;
    let (zl, mut d_out) = zonotope_losses(&esn.out, &s.ego_future, Vec2::zeros(), &cfg.generator_targets);
    let (kl, mut dmu, mut dls) = kl_loss(&esn.stats.mu, &esn.stats.log_sigma);
    let (lv, lh, d_stl) = stl_losses(&esn.out, s.heading, cfg.dt, &cfg.thresholds);
    out.kl_esn = kl;
    out.zono_esn = zl.total();
    out.ade_esn = zl.ade;
    out.fde_esn = zl.fde;
    out.stl_vel = lv;
    out.stl_heading = lh;

    let n = s.peds.len();
    let mut ppn_parts = Vec::with_capacity(n);
    for (k, p) in s.peds.iter().enumerate() {
        let t = model.ppn.train_forward(&p.hist, s.ego_next, p.end_rel, &noise[k + 1])?;
        let (pz, pd) = zonotope_losses(&t.out, &p.future, p.current, &cfg.generator_targets);
        let (pkl, pmu, pls) = kl_loss(&t.stats.mu, &t.stats.log_sigma);
        let (le, de) = endpoint_loss(t.endpoint, p.end_rel);
        out.kl_ppn += pkl / n as f64;
        out.zono_ppn += pz.total() / n as f64;
        out.endpoint_ppn += le / n as f64;
        ppn_parts.push((t, pd, pmu, pls, de));
    }
    out.total = w_kl * (out.kl_esn + out.kl_ppn)
        + w.zono * (out.zono_esn + out.zono_ppn + out.endpoint_ppn)
        + w.stl * (out.stl_vel + out.stl_heading);

    if let Some(grad) = grad {
        let np = model.ppn_num_params();
        let (gp, ge) = grad.split_at_mut(np);
        for (d, ds) in d_out.iter_mut().zip(&d_stl) {
            *d = scale * (w.zono * *d + w.stl * ds);
        }
        dmu.iter_mut().for_each(|v| *v *= scale * w_kl);
        dls.iter_mut().for_each(|v| *v *= scale * w_kl);
        model.esn.backward(&esn, &d_out, &dmu, &dls, ge);
        let sp = scale / n.max(1) as f64;
        for (t, pd, pmu, pls, de) in ppn_parts {
            let d_out: Vec<f64> = pd.iter().map(|v| sp * w.zono * v).collect();
            let d_mu: Vec<f64> = pmu.iter().map(|v| sp * w_kl * v).collect();
            let d_ls: Vec<f64> = pls.iter().map(|v| sp * w_kl * v).collect();
            model.ppn.backward(&t, &d_out, sp * w.zono * de, &d_mu, &d_ls, gp);
        }
    }
    Ok(out)
}

fn window_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

const CHUNK: usize = 8;

/// Mean loss over `batch` and its gradient. Work is split into fixed chunks
/// whose partial gradients are summed in chunk order, so the result does not
/// depend on thread scheduling.
pub fn batch_loss_grad(
    model: &SznModel,
    samples: &[Sample],
    batch: &[usize],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let np = model.num_params();
    let scale = 1.0 / batch.len() as f64;
    let chunks: Vec<&[usize]> = batch.chunks(CHUNK).collect();
    let run = |chunk: &&[usize]| -> Result<(LossBreakdown, Vec<f64>)> {
        let mut g = vec![0.0; np];
        let mut l = LossBreakdown::default();
        for &i in chunk.iter() {
            let s = &samples[i];
            let mut rng = ChaCha8Rng::seed_from_u64(window_seed(cfg.seed, epoch, i));
            let noise = draw_noise(&mut rng, model.latent_dim(), s.peds.len());
            let wl = window_loss_grad(model, s, &noise, cfg, scale, Some(&mut g))?;
            l.add_scaled(&wl, scale);
        }
        Ok((l, g))
    };
    #[cfg(feature = "parallel")]
    let parts: Vec<Result<(LossBreakdown, Vec<f64>)>> = {
        use rayon::prelude::*;
        chunks.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<Result<(LossBreakdown, Vec<f64>)>> = chunks.iter().map(run).collect();

    let mut loss = LossBreakdown::default();
    let mut grad = vec![0.0; np];
    for p in parts {
        let (l, g) = p?;
        loss.add_scaled(&l, 1.0);
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: LossBreakdown,
}

/// Runs the epoch loop; `on_epoch` sees each epoch's mean loss.
pub fn train(model: &mut SznModel, samples: &[Sample], cfg: &TrainConfig, mut on_epoch: impl FnMut(&EpochLog)) -> Result<Vec<EpochLog>> {
    if samples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.num_params(), cfg.learning_rate);
    let mut params = model.flat_params();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut acc = LossBreakdown::default();
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grad) = batch_loss_grad(model, samples, batch, cfg, epoch)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: b, detail: format!("{loss:?}") });
            }
            acc.add_scaled(&loss, batch.len() as f64 / samples.len() as f64);
            adam.step(&mut params, &grad);
            model.set_flat_params(&params)?;
        }
        let log = EpochLog { epoch: epoch + 1, loss: acc };
        on_epoch(&log);
        logs.push(log);
    }
    Ok(logs)
}

pub fn write_loss_csv(path: &std::path::Path, logs: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "epoch", "total", "kl_esn", "kl_ppn", "zono_esn", "zono_ppn", "endpoint_ppn", "stl_vel", "stl_heading", "ade_esn", "fde_esn",
    ])?;
    for l in logs {
        let b = &l.loss;
        let mut rec = vec![l.epoch.to_string()];
        rec.extend(
            [b.total, b.kl_esn, b.kl_ppn, b.zono_esn, b.zono_ppn, b.endpoint_ppn, b.stl_vel, b.stl_heading, b.ade_esn, b.fde_esn]
                .iter()
                .map(|v| format!("{v:.9e}")),
        );
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Inference-mode evaluation of one window at the latent mean (`z = 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowEval {
    pub ade: f64,
    pub fde: f64,
    pub stl: f64,
    pub ppn_ade: Option<f64>,
}

/// Predicted sets for one window, in world coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPrediction {
    pub ego: ZonotopeSeq,
    pub peds: Vec<ZonotopeSeq>,
    pub ped_endpoints: Vec<Vec2>,
}

/// Inference at the latent mean (`z = 0`) in the window's ego-origin frame.
/// The ESN is conditioned on the PPN predictions, as at planning time.
fn predict_local(model: &SznModel, s: &Sample) -> Result<WindowPrediction> {
    let z = vec![0.0; model.latent_dim()];
    let mut pts = Vec::with_capacity(s.peds.len());
    let mut peds = Vec::with_capacity(s.peds.len());
    let mut ped_endpoints = Vec::with_capacity(s.peds.len());
    for p in &s.peds {
        let (out, end) = model.ppn.forward(&p.hist, s.ego_next, &z)?;
        let seq = ZonotopeSeq::decode(&out);
        pts.push(super::features::ped_points_from_prediction(&seq, p.current + end));
        ped_endpoints.push(p.current + end);
        peds.push(seq);
    }
    let ped_sum = super::features::ped_sum(pts.iter().map(|v| v.as_slice()));
    let out = model.esn.forward(&ped_sum, s.goal, s.ego_next, &z)?;
    Ok(WindowPrediction { ego: ZonotopeSeq::decode(&out), peds, ped_endpoints })
}

/// Predicted sets for one window, in world coordinates.
pub fn predict_window(model: &SznModel, s: &Sample) -> Result<WindowPrediction> {
    let p = predict_local(model, s)?;
    Ok(WindowPrediction {
        ego: p.ego.translate(s.origin),
        peds: p.peds.iter().map(|q| q.translate(s.origin)).collect(),
        ped_endpoints: p.ped_endpoints.iter().map(|e| e + s.origin).collect(),
    })
}

pub fn evaluate_window(model: &SznModel, s: &Sample, cfg: &TrainConfig) -> Result<WindowEval> {
    let pred = predict_local(model, s)?;
    let (ade, fde) = ade_fde(&pred.ego.centers(), &s.ego_future);
    let (lv, lh, _) = stl_losses(&pred.ego.encode(), s.heading, cfg.dt, &cfg.thresholds);
    let ppn_ade: f64 = pred.peds.iter().zip(&s.peds).map(|(q, p)| ade_fde(&q.centers(), &p.future).0).sum();
    Ok(WindowEval {
        ade,
        fde,
        stl: lv + lh,
        ppn_ade: (!s.peds.is_empty()).then(|| ppn_ade / s.peds.len() as f64),
    })
}

/// Displacement errors of 7 centers against the midpoints of 8 future points.
pub fn ade_fde(centers: &[Vec2], future: &[Vec2]) -> (f64, f64) {
    let mid = midpoints(future);
    let d: Vec<f64> = centers.iter().zip(&mid).map(|(c, m)| (c - m).norm()).collect();
    (d.iter().sum::<f64>() / d.len() as f64, *d.last().unwrap())
}

/// Unweighted component values for one window at given noise (used by
/// gradient checks).
pub fn component_losses(model: &SznModel, s: &Sample, noise: &[Vec<f64>], cfg: &TrainConfig) -> Result<(ZonoLoss, LossBreakdown)> {
    let esn = model.esn.train_forward(&s.ped_sum, s.goal, s.ego_next, &s.gt_traj, &noise[0])?;
    let (zl, _) = zonotope_losses(&esn.out, &s.ego_future, Vec2::zeros(), &cfg.generator_targets);
    Ok((zl, window_loss_grad(model, s, noise, cfg, 1.0, None)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Neighbor, Window};
    use crate::nn::szn::SznArch;

    fn window(seed: u64, n_peds: usize) -> Window {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dir = Vec2::new(rng.gen_range(0.2..0.5), rng.gen_range(-0.1..0.1));
        let start = Vec2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let pts: Vec<Vec2> = (0..16).map(|i| start + dir * i as f64).collect();
        let neighbors = (0..n_peds)
            .map(|k| {
                let off = Vec2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
                let d = Vec2::new(rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4));
                let p: Vec<Vec2> = (0..16).map(|i| start + off + d * i as f64).collect();
                Neighbor { id: k as i64 + 10, past: p[..8].to_vec(), future: p[8..].to_vec() }
            })
            .collect();
        Window {
            scene: "t".into(),
            ego_id: 0,
            start_frame: 0,
            ego_past: pts[..8].to_vec(),
            ego_future: pts[8..].to_vec(),
            goal: pts[15] + dir,
            neighbors,
        }
    }

    #[test]
    fn adam_zero_lr_keeps_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut model = SznModel::new(SznArch::tiny(2, 4), &mut rng).unwrap();
        let before = model.flat_params();
        let samples: Vec<Sample> = (0..5).map(|i| Sample::from_window(&window(i, 2))).collect();
        let cfg = TrainConfig { epochs: 2, batch_size: 2, learning_rate: 0.0, ..Default::default() };
        train(&mut model, &samples, &cfg, |_| {}).unwrap();
        let after = model.flat_params();
        assert!(before.iter().zip(&after).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn training_is_deterministic() {
        let samples: Vec<Sample> = (0..12).map(|i| Sample::from_window(&window(i, (i % 3) as usize))).collect();
        let cfg = TrainConfig { epochs: 3, batch_size: 5, seed: 9, ..Default::default() };
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let mut model = SznModel::new(SznArch::tiny(2, 6), &mut rng).unwrap();
            train(&mut model, &samples, &cfg, |_| {}).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.len(), 3);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.loss.total.to_bits(), y.loss.total.to_bits());
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let model = SznModel::new(SznArch::tiny(2, 5), &mut rng).unwrap();
        let s = Sample::from_window(&window(3, 2));
        let noise = draw_noise(&mut rng, 2, 2);
        let cfg = TrainConfig::default();
        let mut g = vec![0.0; model.num_params()];
        window_loss_grad(&model, &s, &noise, &cfg, 1.0, Some(&mut g)).unwrap();
        let p0 = model.flat_params();
        let h = 1e-6;
        let mut m = model.clone();
        let mut checked = 0;
        for i in (0..p0.len()).step_by(7) {
            let mut p = p0.clone();
            p[i] += h;
            m.set_flat_params(&p).unwrap();
            let lp = window_loss_grad(&m, &s, &noise, &cfg, 1.0, None).unwrap().total;
            p[i] -= 2.0 * h;
            m.set_flat_params(&p).unwrap();
            let lm = window_loss_grad(&m, &s, &noise, &cfg, 1.0, None).unwrap().total;
            let fd = (lp - lm) / (2.0 * h);
            let scale = fd.abs().max(g[i].abs()).max(1e-3);
            assert!((fd - g[i]).abs() / scale < 1e-4, "param {i}: fd {fd} vs {}", g[i]);
            checked += 1;
        }
        assert!(checked > 20);
    }

    #[test]
    fn perfect_prediction_leaves_kl_only() {
        let cfg = TrainConfig::default();
        let (zl, _) = {
            let f: Vec<Vec2> = (1..=8).map(|i| Vec2::new(0.3 * i as f64, 0.0)).collect();
            let mid = midpoints(&f);
            let seq = ZonotopeSeq {
                zonos: mid
                    .iter()
                    .map(|c| {
                        crate::zono::Zonotope2::new(
                            *c,
                            vec![Vec2::new(0.1, 0.0), Vec2::new(0.0, 0.1), Vec2::new(0.005, 0.0), Vec2::new(0.0, 0.005)],
                        )
                        .unwrap()
                    })
                    .collect(),
            };
            zonotope_losses(&seq.encode(), &f, Vec2::zeros(), &cfg.generator_targets)
        };
        assert!(zl.ade.abs() < 1e-15 && zl.fde.abs() < 1e-15 && zl.gen.abs() < 1e-15);
        // centers 0.3 m apart with 0.1 m generators do not reach their neighbours
        assert!(zl.prev > 0.0);
    }

    #[test]
    fn ade_fde_offset() {
        let f: Vec<Vec2> = (1..=8).map(|i| Vec2::new(i as f64, 0.0)).collect();
        let c: Vec<Vec2> = midpoints(&f).iter().map(|m| m + Vec2::new(0.0, 0.3)).collect();
        let (a, b) = ade_fde(&c, &f);
        assert!((a - 0.3).abs() < 1e-12 && (b - 0.3).abs() < 1e-12);
    }
}
