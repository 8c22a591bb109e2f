//! Online refinement of the ego zonotope: personal-space generators and a
//! Gaussian-process model of the reduced-order model's tracking error.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lip::{self, LipParams};
use crate::zono::{Vec2, Zonotope2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PersonalSpace {
    /// Sagittal half-extent (m).
    pub a: f64,
    /// Lateral half-extent (m).
    pub b: f64,
}

impl Default for PersonalSpace {
    fn default() -> Self {
        Self { a: 0.3, b: 0.2 }
    }
}

/// Columns of `diag(a, b)·R(θ)`.
pub fn personal_space_generators(ps: &PersonalSpace, theta: f64) -> [Vec2; 2] {
    let (s, c) = theta.sin_cos();
    // diag(a,b)·[[c,−s],[s,c]] = [[a c, −a s],[b s, b c]]
    [Vec2::new(ps.a * c, ps.b * s), Vec2::new(-ps.a * s, ps.b * c)]
}

/// Generators `diag(μx, μy)` for the expected model error.
pub fn error_generators(mu: Vec2) -> [Vec2; 2] {
    [Vec2::new(mu.x, 0.0), Vec2::new(0.0, mu.y)]
}

/// Appends personal-space and model-error generators; center unchanged.
pub fn augment_ego(z: &Zonotope2, ps_block: &[Vec2; 2], mu_block: &[Vec2; 2]) -> Zonotope2 {
    let mut g = z.generators.clone();
    g.extend_from_slice(ps_block);
    g.extend_from_slice(mu_block);
    Zonotope2 { center: z.center, generators: g }
}

/// Squared-exponential kernel with one length scale per input dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeArd {
    pub signal_var: f64,
    pub length: [f64; 3],
    pub noise_var: f64,
}

impl Default for SeArd {
    fn default() -> Self {
        Self { signal_var: 1e-3, length: [0.5, 0.5, 0.2], noise_var: 1e-5 }
    }
}

impl SeArd {
    pub fn k(&self, a: &[f64; 3], b: &[f64; 3]) -> f64 {
        let r2: f64 = (0..3).map(|i| ((a[i] - b[i]) / self.length[i]).powi(2)).sum();
        self.signal_var * (-0.5 * r2).exp()
    }

    fn to_log(self) -> [f64; 5] {
        [self.signal_var.ln(), self.length[0].ln(), self.length[1].ln(), self.length[2].ln(), self.noise_var.ln()]
    }

    fn from_log(t: &[f64; 5]) -> Self {
        Self { signal_var: t[0].exp(), length: [t[1].exp(), t[2].exp(), t[3].exp()], noise_var: t[4].exp() }
    }
}

const MAX_JITTER: f64 = 1e-4;

/// Cholesky of `K + (noise + jitter) I`, escalating jitter until it succeeds.
fn chol(x: &[[f64; 3]], h: &SeArd) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, DMatrix<f64>)> {
    let n = x.len();
    let k = DMatrix::from_fn(n, n, |i, j| h.k(&x[i], &x[j]));
    let mut jitter = 0.0;
    loop {
        let mut m = k.clone();
        for i in 0..n {
            m[(i, i)] += h.noise_var + jitter;
        }
        if let Some(c) = m.cholesky() {
            return Ok((c, k));
        }
        jitter = if jitter == 0.0 { 1e-12 * h.signal_var.max(1e-12) } else { jitter * 10.0 };
        if jitter > MAX_JITTER * h.signal_var.max(1e-12) {
            return Err(Error::IllConditionedKernel { jitter });
        }
    }
}

/// Exact single-output GP posterior.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Gp1 {
    pub hyper: SeArd,
    x: Vec<[f64; 3]>,
    alpha: Vec<f64>,
    /// Lower Cholesky factor, row-major.
    l: Vec<f64>,
}

impl Gp1 {
    pub fn fit(x: &[[f64; 3]], y: &[f64], hyper: SeArd) -> Result<Self> {
        if hyper.noise_var <= 0.0 || hyper.signal_var <= 0.0 {
            return Err(Error::Config("GP variances must be positive".into()));
        }
        let n = x.len();
        if n == 0 {
            return Ok(Self { hyper, x: Vec::new(), alpha: Vec::new(), l: Vec::new() });
        }
        let (c, _) = chol(x, &hyper)?;
        let alpha = c.solve(&DVector::from_column_slice(y));
        let l = c.l();
        Ok(Self { hyper, x: x.to_vec(), alpha: alpha.as_slice().to_vec(), l: l.transpose().as_slice().to_vec() })
    }

    pub fn predict(&self, q: &[f64; 3]) -> (f64, f64) {
        let n = self.x.len();
        if n == 0 {
            return (0.0, self.hyper.signal_var);
        }
        let ks: Vec<f64> = self.x.iter().map(|xi| self.hyper.k(xi, q)).collect();
        let mean = ks.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        // v = L⁻¹ k*
        let mut v = vec![0.0; n];
        for i in 0..n {
            let mut s = ks[i];
            for j in 0..i {
                s -= self.l[i * n + j] * v[j];
            }
            v[i] = s / self.l[i * n + i];
        }
        let var = self.hyper.signal_var - v.iter().map(|a| a * a).sum::<f64>();
        (mean, var.max(0.0))
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Log marginal likelihood and its gradient w.r.t. log-hyperparameters.
pub fn log_marginal(x: &[[f64; 3]], y: &[f64], h: &SeArd) -> Result<(f64, [f64; 5])> {
    let n = x.len();
    let (c, k) = chol(x, h)?;
    let yv = DVector::from_column_slice(y);
    let alpha = c.solve(&yv);
    let logdet: f64 = 2.0 * c.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let lml = -0.5 * yv.dot(&alpha) - 0.5 * logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    let kinv = c.inverse();
    let w = &alpha * alpha.transpose() - kinv;
    let mut g = [0.0; 5];
    // ∂K/∂log sf² = K; ∂K/∂log ℓ_d = K ∘ (Δ_d/ℓ_d)²; ∂K/∂log sn² = sn² I
    for i in 0..n {
        for j in 0..n {
            let wij = w[(i, j)];
            g[0] += wij * k[(i, j)];
            for d in 0..3 {
                let r = (x[i][d] - x[j][d]) / h.length[d];
                g[1 + d] += wij * k[(i, j)] * r * r;
            }
        }
        g[4] += w[(i, i)] * h.noise_var;
    }
    for v in &mut g {
        *v *= 0.5;
    }
    Ok((lml, g))
}

/// Multi-start gradient ascent on the log marginal likelihood.
pub fn optimize_hyper(x: &[[f64; 3]], y: &[f64], starts: usize, seed: u64) -> SeArd {
    let mut best = (f64::NEG_INFINITY, SeArd::default());
    if x.is_empty() {
        return best.1;
    }
    let var_y = {
        let m = y.iter().sum::<f64>() / y.len() as f64;
        (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / y.len() as f64).max(1e-8)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = [var_y.ln() - 3.0, -2.5, -2.5, -3.0, (var_y * 1e-4).ln()];
    let hi = [var_y.ln() + 2.0, 1.5, 1.5, 1.0, var_y.ln()];
    for s in 0..starts.max(1) {
        let mut t: [f64; 5] = if s == 0 {
            SeArd { signal_var: var_y, length: [1.0, 1.0, (-1.0f64).exp()], noise_var: var_y * 0.01 }.to_log()
        } else {
            std::array::from_fn(|i| rng.gen_range(lo[i]..hi[i]))
        };
        let Ok((mut f, mut g)) = log_marginal(x, y, &SeArd::from_log(&t)) else { continue };
        let mut step = 0.1;
        for _ in 0..200 {
            let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if gn < 1e-6 || step < 1e-8 {
                break;
            }
            let cand: [f64; 5] = std::array::from_fn(|i| (t[i] + step * g[i] / gn).clamp(-20.0, 5.0));
            match log_marginal(x, y, &SeArd::from_log(&cand)) {
                Ok((fc, gc)) if fc > f => {
                    t = cand;
                    f = fc;
                    g = gc;
                    step *= 1.2;
                }
                _ => step *= 0.5,
            }
        }
        if f > best.0 {
            best = (f, SeArd::from_log(&t));
        }
    }
    best.1
}

/// One GP per error component (sagittal, lateral).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpModel {
    pub x: Gp1,
    pub y: Gp1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpSample {
    pub v_loc: f64,
    pub v_star: f64,
    pub dtheta_star: f64,
    pub err_x: f64,
    pub err_y: f64,
}

impl GpSample {
    fn input(&self) -> [f64; 3] {
        [self.v_loc, self.v_star, self.dtheta_star]
    }
}

impl GpModel {
    /// Prior-only model.
    pub fn empty() -> Self {
        let h = SeArd::default();
        Self { x: Gp1::fit(&[], &[], h).unwrap(), y: Gp1::fit(&[], &[], h).unwrap() }
    }

    pub fn fit_with(data: &[GpSample], hx: SeArd, hy: SeArd) -> Result<Self> {
        let x: Vec<[f64; 3]> = data.iter().map(|d| d.input()).collect();
        let ex: Vec<f64> = data.iter().map(|d| d.err_x).collect();
        let ey: Vec<f64> = data.iter().map(|d| d.err_y).collect();
        Ok(Self { x: Gp1::fit(&x, &ex, hx)?, y: Gp1::fit(&x, &ey, hy)? })
    }

    /// Fits hyperparameters by maximum marginal likelihood, then conditions.
    pub fn fit(data: &[GpSample], seed: u64) -> Result<Self> {
        let x: Vec<[f64; 3]> = data.iter().map(|d| d.input()).collect();
        let ex: Vec<f64> = data.iter().map(|d| d.err_x).collect();
        let ey: Vec<f64> = data.iter().map(|d| d.err_y).collect();
        let hx = optimize_hyper(&x, &ex, 4, seed);
        let hy = optimize_hyper(&x, &ey, 4, seed.wrapping_add(1));
        Self::fit_with(data, hx, hy)
    }

    /// Mean and variance of the (sagittal, lateral) error.
    pub fn predict(&self, v_loc: f64, v_star: f64, dtheta_star: f64) -> (Vec2, Vec2) {
        let q = [v_loc, v_star, dtheta_star];
        let (mx, vx) = self.x.predict(&q);
        let (my, vy) = self.y.predict(&q);
        (Vec2::new(mx, my), Vec2::new(vx, vy))
    }
}

/// Perturbed plant used to synthesize GP training data: the achieved
/// velocity lags the commanded one, the step under-rotates, and both carry
/// noise. Errors are actual minus model displacement in the body frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbedPlant {
    /// Fraction of the commanded velocity change achieved per step.
    pub tracking: f64,
    /// Fraction of the commanded turn that deflects the step direction.
    pub turn_slip: f64,
    pub noise_std: f64,
}

impl Default for PerturbedPlant {
    fn default() -> Self {
        Self { tracking: 0.8, turn_slip: 0.25, noise_std: 0.005 }
    }
}

pub fn synthesize_gp_data(n: usize, plant: &PerturbedPlant, lip_p: &LipParams, seed: u64) -> Vec<GpSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, plant.noise_std.max(1e-12)).unwrap();
    let k = lip_p.coefficients();
    (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(-0.1..1.0);
            let v_star: f64 = (v + rng.gen_range(-0.3..0.3)).clamp(-0.1, 1.0);
            let dth: f64 = rng.gen_range(-15f64..15.0).to_radians();
            let u_f = (v_star - k.dv_dv * v) / k.dv_du;
            let dx_model = lip::delta_x(v, u_f, lip_p);
            let v_act = v + plant.tracking * (v_star - v);
            let u_act = (v_act - k.dv_dv * v) / k.dv_du;
            let dx_act = lip::delta_x(v, u_act, lip_p) + noise.sample(&mut rng);
            let dev = plant.turn_slip * dth + 0.2 * noise.sample(&mut rng);
            GpSample {
                v_loc: v,
                v_star,
                dtheta_star: dth,
                err_x: dx_act * dev.cos() - dx_model,
                err_y: dx_act * dev.sin(),
            }
        })
        .collect()
}

pub fn write_gp_csv(path: &Path, data: &[GpSample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for d in data {
        w.serialize(d)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_gp_csv(path: &Path) -> Result<Vec<GpSample>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<GpSample>, _>>()?)
}
