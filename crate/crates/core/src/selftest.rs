//! Oracle suites: each compares a fast implementation against an
//! independent, slower route to the same answer.
//!
//! - zonotope containment against exact vertex enumeration over `β`,
//! - the LIP step map against RK4 integration of the pendulum ODE,
//! - STL robustness against pointwise brute-force satisfaction,
//! - network gradients against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{Neighbor, Window, FUTURE, PAST};
use crate::error::Result;
use crate::lip::{self, Control, EgoState, LipParams};
use crate::nn::features::Sample;
use crate::nn::train::{draw_noise, window_loss_grad, LossWeights, TrainConfig};
use crate::nn::zseq::{ZonotopeSeq, GENERATORS, STEPS};
use crate::nn::{SznArch, SznModel};
use crate::stl::{self, SpecThresholds};
use crate::zono::{Vec2, Zonotope2};

/// One named check with its worst observed value and the bound it must meet.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub passed: bool,
}

impl Check {
    fn at_most(name: &str, value: f64, bound: f64) -> Self {
        Self { name: name.into(), value, bound, passed: value <= bound }
    }

    fn below(name: &str, value: f64, bound: f64) -> Self {
        Self { name: name.into(), value, bound, passed: value < bound }
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {} (value {:.3e}, bound {:.1e})", self.name, self.value, self.bound)
    }
}

// ---------------------------------------------------------------- zonotopes

pub fn random_zonotope(rng: &mut impl Rng, max_generators: usize) -> Zonotope2 {
    let m = rng.gen_range(2..=max_generators);
    let c = Vec2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
    let g = (0..m)
        .map(|_| {
            let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            Vec2::new(a.cos(), a.sin()) * rng.gen_range(0.05..1.5)
        })
        .collect();
    Zonotope2 { center: c, generators: g }
}

/// Exact membership of `v` in `G·[−1, 1]^m` by enumerating basic solutions:
/// a feasible point of `{β ∈ [−1,1]^m : Gβ = v}` exists iff one exists with
/// at most two coordinates strictly inside the box.
pub fn beta_contains(generators: &[Vec2], v: Vec2, slack: f64) -> bool {
    let m = generators.len();
    if m == 0 {
        return v.norm() <= slack;
    }
    if m == 1 {
        let g = generators[0];
        let t = v.dot(&g) / g.norm_squared();
        return t.abs() <= 1.0 + slack && (v - g * t).norm() <= slack;
    }
    for i in 0..m {
        for j in i + 1..m {
            let (a, b) = (generators[i], generators[j]);
            let det = a.x * b.y - a.y * b.x;
            if det.abs() < 1e-12 {
                continue;
            }
            let others: Vec<usize> = (0..m).filter(|&k| k != i && k != j).collect();
            for mask in 0u32..(1 << others.len()) {
                let mut r = v;
                for (bit, &k) in others.iter().enumerate() {
                    let s = if mask >> bit & 1 == 1 { 1.0 } else { -1.0 };
                    r -= generators[k] * s;
                }
                let bi = (r.x * b.y - r.y * b.x) / det;
                let bj = (a.x * r.y - a.y * r.x) / det;
                if bi.abs() <= 1.0 + slack && bj.abs() <= 1.0 + slack {
                    return true;
                }
            }
        }
    }
    false
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ZonotopeReport {
    pub cases: usize,
    pub max_support_sum_error: f64,
    pub max_halfspace_error: f64,
    /// Containment verdicts that differ from the oracle for points farther
    /// than the boundary band from the boundary.
    pub containment_disagreements: usize,
    pub intersection_disagreements: usize,
    pub asymmetric_intersections: usize,
}

pub fn zonotope_suite(cases: usize, seed: u64, band: f64) -> Result<ZonotopeReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = ZonotopeReport { cases, ..Default::default() };
    for _ in 0..cases {
        let a = random_zonotope(&mut rng, 5);
        let b = random_zonotope(&mut rng, 4);
        let s = a.minkowski_sum(&b);
        for _ in 0..8 {
            let t: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let d = Vec2::new(t.cos(), t.sin()) * rng.gen_range(0.1..3.0);
            let err = (s.support(&d) - a.support(&d) - b.support(&d)).abs();
            r.max_support_sum_error = r.max_support_sum_error.max(err);
        }
        let h = a.to_halfspace()?;
        for (n, off) in h.normals.iter().zip(&h.offsets) {
            // support recomputed by brute force over the generator sign patterns
            let m = a.generators.len();
            let brute = (0u32..(1 << m))
                .map(|mask| {
                    let p = a.generators.iter().enumerate().fold(a.center, |acc, (k, g)| acc + g * if mask >> k & 1 == 1 { 1.0 } else { -1.0 });
                    n.dot(&p)
                })
                .fold(f64::NEG_INFINITY, f64::max);
            r.max_halfspace_error = r.max_halfspace_error.max((off - brute).abs());
        }
        for _ in 0..4 {
            let p = a.center + Vec2::new(rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0));
            let res = h.residual(&p);
            if res.abs() > band && (res <= 0.0) != beta_contains(&a.generators, p - a.center, 1e-12) {
                r.containment_disagreements += 1;
            }
        }
        let ab = a.intersects(&b)?;
        if ab != b.intersects(&a)? {
            r.asymmetric_intersections += 1;
        }
        // a ∩ b ≠ ∅ iff c_b − c_a ∈ [G_a  G_b]·[−1, 1]^m
        let joint = a.minkowski_sum(&Zonotope2 { center: Vec2::zeros(), generators: b.generators.clone() });
        let res = joint.to_halfspace()?.residual(&b.center);
        if res.abs() > band && ab != beta_contains(&joint.generators, b.center - a.center, 1e-12) {
            r.intersection_disagreements += 1;
        }
    }
    Ok(r)
}

// ---------------------------------------------------------------------- LIP

/// RK4 integration of `ẍ = ω²(x − u_f)` from `x = 0`, `ẋ = v0` over one step.
pub fn lip_ode_step(v0: f64, u_f: f64, p: &LipParams, substeps: usize) -> (f64, f64) {
    let w2 = p.omega().powi(2);
    let h = p.step_time / substeps as f64;
    let f = |x: f64, v: f64| (v, w2 * (x - u_f));
    let (mut x, mut v) = (0.0, v0);
    for _ in 0..substeps {
        let k1 = f(x, v);
        let k2 = f(x + 0.5 * h * k1.0, v + 0.5 * h * k1.1);
        let k3 = f(x + 0.5 * h * k2.0, v + 0.5 * h * k2.1);
        let k4 = f(x + h * k3.0, v + h * k3.1);
        x += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        v += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
    }
    (x, v)
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct LipReport {
    pub cases: usize,
    pub max_position_error: f64,
    pub max_velocity_error: f64,
    pub max_jacobian_rel_error: f64,
}

pub fn lip_suite(cases: usize, seed: u64) -> LipReport {
    let p = LipParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = LipReport { cases, ..Default::default() };
    for _ in 0..cases {
        let s = EgoState {
            x: rng.gen_range(-7.0..7.0),
            y: rng.gen_range(-7.0..7.0),
            v_loc: rng.gen_range(-0.2..1.0),
            theta: rng.gen_range(-3.1..3.1),
        };
        let u = Control { u_f: rng.gen_range(-0.3..0.3), u_dtheta: rng.gen_range(-0.3..0.3) };
        let (dx, v) = lip_ode_step(s.v_loc, u.u_f, &p, 2000);
        let next = lip::step_unwrapped(&s, &u, &p);
        let ox = s.x + dx * s.theta.cos();
        let oy = s.y + dx * s.theta.sin();
        r.max_position_error = r.max_position_error.max((next.x - ox).hypot(next.y - oy));
        r.max_velocity_error = r.max_velocity_error.max((next.v_loc - v).abs());

        let j = lip::step_jacobian(&s, &u, &p);
        let h = 1e-6;
        let base = [s.x, s.y, s.v_loc, s.theta, u.u_f, u.u_dtheta];
        let eval = |a: [f64; 6]| {
            let n = lip::step_unwrapped(&EgoState { x: a[0], y: a[1], v_loc: a[2], theta: a[3] }, &Control { u_f: a[4], u_dtheta: a[5] }, &p);
            [n.x, n.y, n.v_loc, n.theta]
        };
        for col in 0..6 {
            let mut ap = base;
            ap[col] += h;
            let mut am = base;
            am[col] -= h;
            let (fp, fm) = (eval(ap), eval(am));
            for row in 0..4 {
                let fd = (fp[row] - fm[row]) / (2.0 * h);
                let scale = fd.abs().max(j[row][col].abs()).max(1e-3);
                r.max_jacobian_rel_error = r.max_jacobian_rel_error.max((fd - j[row][col]).abs() / scale);
            }
        }
    }
    r
}

// ---------------------------------------------------------------------- STL

#[derive(Debug, Clone, Default, Serialize)]
pub struct StlReport {
    pub cases: usize,
    pub sign_mismatches: usize,
    pub loss_mismatches: usize,
    /// Windows that sat exactly on a threshold somewhere.
    pub boundary_cases: usize,
}

fn random_signal(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    (0..n)
        .map(|_| match rng.gen_range(0..20) {
            0 => lo,
            1 => hi,
            _ => rng.gen_range(lo - 0.3 * span..hi + 0.3 * span),
        })
        .collect()
}

pub fn stl_suite(cases: usize, seed: u64) -> StlReport {
    let th = SpecThresholds::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = StlReport { cases, ..Default::default() };
    let inside = |s: &[f64], lo: f64, hi: f64| s.iter().all(|&v| lo <= v && v <= hi);
    for _ in 0..cases {
        let n = rng.gen_range(1..=STEPS);
        let sag = random_signal(&mut rng, n, th.v_min, th.v_max);
        let lat = random_signal(&mut rng, n, -th.v_lat, th.v_lat);
        let dth = random_signal(&mut rng, n, -th.dtheta_max, th.dtheta_max);
        if sag.iter().any(|&v| v == th.v_min || v == th.v_max) || dth.iter().any(|v| v.abs() == th.dtheta_max) {
            r.boundary_cases += 1;
        }

        let sat_vel = inside(&sag, th.v_min, th.v_max) && inside(&lat, -th.v_lat, th.v_lat);
        let rho_vel = stl::rho_vel(&sag, &lat, &th);
        let sat_dth = inside(&dth, -th.dtheta_max, th.dtheta_max);
        let rho_dth = stl::rho_always_band(&dth, -th.dtheta_max, th.dtheta_max);
        if (rho_vel >= 0.0) != sat_vel || (rho_dth >= 0.0) != sat_dth {
            r.sign_mismatches += 1;
        }
        let lv = stl::loss_vel(&sag, &lat, &th);
        let lh = stl::loss_heading(&dth, &th);
        let (lvg, _, _) = stl::loss_vel_grad(&sag, &lat, &th);
        let (lhg, _) = stl::loss_heading_grad(&dth, &th);
        if (lv == 0.0) != (rho_vel >= 0.0) || (lh == 0.0) != (rho_dth >= 0.0) || lv != lvg || lh != lhg {
            r.loss_mismatches += 1;
        }
    }
    r
}

// ------------------------------------------------------------------ network

/// A straight-walking ego with `n_peds` straight-walking neighbours.
pub fn random_window(rng: &mut impl Rng, n_peds: usize) -> Window {
    let dir = Vec2::new(rng.gen_range(0.2..0.5), rng.gen_range(-0.15..0.15));
    let start = Vec2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
    let bend = rng.gen_range(-0.03..0.03);
    let pts: Vec<Vec2> = (0..PAST + FUTURE).map(|i| start + dir * i as f64 + Vec2::new(0.0, bend * (i * i) as f64)).collect();
    let neighbors = (0..n_peds)
        .map(|k| {
            let off = Vec2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let d = Vec2::new(rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4));
            let p: Vec<Vec2> = (0..PAST + FUTURE).map(|i| start + off + d * i as f64).collect();
            Neighbor { id: k as i64 + 1, past: p[..PAST].to_vec(), future: p[PAST..].to_vec() }
        })
        .collect();
    Window {
        scene: "oracle".into(),
        ego_id: 0,
        start_frame: 0,
        ego_past: pts[..PAST].to_vec(),
        ego_future: pts[PAST..].to_vec(),
        goal: pts[PAST + FUTURE - 1] + dir,
        neighbors,
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct GradientReport {
    pub models: usize,
    pub parameters_checked: usize,
    /// Worst relative error per component: KL, zonotope shaping (with the
    /// endpoint term), STL, and the weighted total.
    pub max_rel_error: [f64; 4],
    /// Checks skipped because no step gave matching one-sided slopes, i.e. a
    /// kink of the piecewise-smooth loss lies within every step tried.
    pub kink_skips: usize,
    pub bad_shapes: usize,
}

/// Relative size of the step-halving defects below which a finite
/// difference is taken to be free of kinks.
const KINK_TOLERANCE: f64 = 2e-5;

/// Largest tolerated fraction of gradient checks skipped at kinks.
pub const MAX_KINK_FRACTION: f64 = 0.05;

pub const GRADIENT_COMPONENTS: [&str; 4] = ["kl", "zonotope", "stl", "total"];

/// Relative error `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn gradient_suite(models: usize, seed: u64, params_per_model: usize) -> Result<GradientReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = GradientReport { models, ..Default::default() };
    // tight bands so the STL terms are active on untrained outputs
    let th = SpecThresholds { v_max: 0.05, v_min: -0.05, v_lat: 0.02, dtheta_max: 0.01 };
    let weights = [
        LossWeights { kl: 1.0, zono: 0.0, stl: 0.0, kl_batch_sum: false },
        LossWeights { kl: 0.0, zono: 1.0, stl: 0.0, kl_batch_sum: false },
        LossWeights { kl: 0.0, zono: 0.0, stl: 1.0, kl_batch_sum: false },
        LossWeights::default(),
    ];
    for _ in 0..models {
        let latent = rng.gen_range(1..=3);
        let hidden = rng.gen_range(3..=6);
        let mut model = SznModel::new(SznArch::tiny(latent, hidden), &mut rng)?;
        // nonzero biases keep ReLUs off their kinks; halved weights keep the
        // KL term small enough for finite differences to resolve
        let jittered: Vec<f64> = model.flat_params().iter().map(|p| 0.5 * p + rng.gen_range(-0.1..0.1)).collect();
        model.set_flat_params(&jittered)?;
        let n_peds = rng.gen_range(0..=3);
        let s = Sample::from_window(&random_window(&mut rng, n_peds));
        let mut nrng = ChaCha8Rng::seed_from_u64(rng.gen());
        let noise = draw_noise(&mut nrng, latent, n_peds);

        let z: Vec<f64> = (0..latent).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let out = model.esn.forward(&s.ped_sum, s.goal, s.ego_next, &z)?;
        let seq = ZonotopeSeq::decode(&out);
        if seq.zonos.len() != STEPS || seq.zonos.iter().any(|z| z.generators.len() != GENERATORS) {
            r.bad_shapes += 1;
        }

        let p0 = model.flat_params();
        let idx: Vec<usize> = (0..params_per_model.min(p0.len())).map(|_| rng.gen_range(0..p0.len())).collect();
        let mut m = model.clone();
        for (c, w) in weights.iter().enumerate() {
            let cfg = TrainConfig { weights: w.clone(), thresholds: th, ..Default::default() };
            let mut g = vec![0.0; p0.len()];
            let l0 = window_loss_grad(&model, &s, &noise, &cfg, 1.0, Some(&mut g))?.total;
            let h0 = (f64::EPSILON * l0.abs().max(1.0)).cbrt();
            for &i in &idx {
                let mut at = |v: f64| -> Result<f64> {
                    let mut p = p0.clone();
                    p[i] = v;
                    m.set_flat_params(&p)?;
                    Ok(window_loss_grad(&m, &s, &noise, &cfg, 1.0, None)?.total)
                };
                // A kink of slope jump Δ inside ±h makes either the central
                // difference move between h and h/2, or the one-sided gap stop
                // scaling with h, by at least Δ/7; smooth stretches do neither.
                let mut fd = None;
                for h in (0..5).map(|k| h0 * 10f64.powi(-k)) {
                    let (up, dn, up2, dn2) = (at(p0[i] + h)?, at(p0[i] - h)?, at(p0[i] + h / 2.0)?, at(p0[i] - h / 2.0)?);
                    let (central, central_half) = ((up - dn) / (2.0 * h), (up2 - dn2) / h);
                    let (gap, gap_half) = ((up - 2.0 * l0 + dn) / h, 2.0 * (up2 - 2.0 * l0 + dn2) / h);
                    let tol = KINK_TOLERANCE * central.abs().max(1e-3);
                    if (central - central_half).abs() <= tol && (gap - 2.0 * gap_half).abs() <= tol {
                        fd = Some(central_half);
                        break;
                    }
                }
                match fd {
                    Some(fd) => r.max_rel_error[c] = r.max_rel_error[c].max(rel_error(fd, g[i], 1e-3)),
                    None => r.kink_skips += 1,
                }
            }
        }
        r.parameters_checked += idx.len() * weights.len();
    }
    Ok(r)
}

/// The four suites at the sizes used by the command-line self test.
pub fn run_all(seed: u64) -> Result<Vec<Check>> {
    let z = zonotope_suite(1000, seed, 1e-6)?;
    let l = lip_suite(1000, seed);
    let s = stl_suite(10_000, seed);
    let g = gradient_suite(20, seed, 40)?;
    let mut out = vec![
        Check::at_most("zonotope: Minkowski support additivity", z.max_support_sum_error, 1e-9),
        Check::at_most("zonotope: half-space offsets equal support", z.max_halfspace_error, 1e-9),
        Check::at_most("zonotope: containment vs beta enumeration", z.containment_disagreements as f64, 0.0),
        Check::at_most("zonotope: intersection vs beta enumeration", z.intersection_disagreements as f64, 0.0),
        Check::at_most("zonotope: intersection symmetry", z.asymmetric_intersections as f64, 0.0),
        Check::below("lip: step vs ODE position", l.max_position_error, 1e-6),
        Check::below("lip: step vs ODE velocity", l.max_velocity_error, 1e-6),
        Check::below("lip: Jacobian vs finite differences", l.max_jacobian_rel_error, 1e-6),
        Check::at_most("stl: robustness sign vs brute force", s.sign_mismatches as f64, 0.0),
        Check::at_most("stl: loss zero iff satisfied", s.loss_mismatches as f64, 0.0),
        Check::at_most("network: decoded shape 7x10", g.bad_shapes as f64, 0.0),
        Check::at_most("network: gradient checks skipped at kinks (fraction)", g.kink_skips as f64 / g.parameters_checked as f64, MAX_KINK_FRACTION),
    ];
    for (c, name) in GRADIENT_COMPONENTS.iter().enumerate() {
        out.push(Check::below(&format!("network: {name} gradient vs finite differences"), g.max_rel_error[c], 1e-4));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_oracle_on_unit_box() {
        let g = [Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0), Vec2::new(0.5, 0.5)];
        assert!(beta_contains(&g, Vec2::new(1.4, 1.4), 0.0));
        assert!(!beta_contains(&g, Vec2::new(1.6, 1.6), 0.0));
        assert!(beta_contains(&g[..1], Vec2::new(0.5, 0.0), 1e-12));
        assert!(!beta_contains(&g[..1], Vec2::new(0.5, 0.1), 1e-12));
    }

    #[test]
    fn small_suites_pass() {
        let z = zonotope_suite(50, 1, 1e-6).unwrap();
        assert_eq!(z.containment_disagreements + z.intersection_disagreements + z.asymmetric_intersections, 0);
        assert!(z.max_support_sum_error < 1e-9 && z.max_halfspace_error < 1e-9);
        let l = lip_suite(50, 1);
        assert!(l.max_position_error < 1e-6 && l.max_jacobian_rel_error < 1e-6);
        let s = stl_suite(500, 1);
        assert_eq!(s.sign_mismatches + s.loss_mismatches, 0);
        assert!(s.boundary_cases > 0);
        let g = gradient_suite(2, 1, 10).unwrap();
        assert!(g.max_rel_error.iter().all(|e| *e < 1e-4), "{:?}", g.max_rel_error);
    }
}
