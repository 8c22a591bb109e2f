//! Training losses on decoded network outputs. Every function returns the
//! value together with its gradient w.r.t. the raw output vector.

use crate::stl::{self, SpecThresholds};
use crate::zono::{facet_rows_padded, Vec2};

use super::zseq::{ZonotopeSeq, GENERATORS, OUT_DIM, STEPS, STEP_DIM};

/// Individual zonotope-shaping terms of one prediction.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ZonoLoss {
    pub ade: f64,
    pub fde: f64,
    pub prev: f64,
    pub next: f64,
    pub gen: f64,
}

impl ZonoLoss {
    pub fn total(&self) -> f64 {
        self.ade + self.fde + self.prev + self.next + self.gen
    }
}

/// Midpoints of consecutive ground-truth future points (8 → 7).
pub fn midpoints(future: &[Vec2]) -> Vec<Vec2> {
    future.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

fn norm_grad(d: Vec2) -> (f64, Vec2) {
    let n = d.norm();
    if n > 0.0 {
        (n, d / n)
    } else {
        (0.0, Vec2::zeros())
    }
}

fn center_idx(i: usize) -> usize {
    i * STEP_DIM
}

fn gen_idx(i: usize, j: usize) -> usize {
    i * STEP_DIM + 2 + 2 * j
}

fn add2(g: &mut [f64], at: usize, v: Vec2) {
    g[at] += v.x;
    g[at + 1] += v.y;
}

/// Zonotope-shaping losses.
///
/// `future` holds the 8 ground-truth points after the current one, `origin`
/// is the current position, all in the frame of `out`. Returns the terms and
/// the gradient of their unweighted sum.
pub fn zonotope_losses(out: &[f64], future: &[Vec2], origin: Vec2, targets: &[f64; GENERATORS]) -> (ZonoLoss, Vec<f64>) {
    assert_eq!(out.len(), OUT_DIM);
    assert_eq!(future.len(), STEPS + 1);
    let seq = ZonotopeSeq::decode(out);
    let mid = midpoints(future);
    let mut grad = vec![0.0; OUT_DIM];
    let mut parts = ZonoLoss::default();

    for i in 0..STEPS {
        let (n, g) = norm_grad(seq.zonos[i].center - mid[i]);
        parts.ade += n / STEPS as f64;
        add2(&mut grad, center_idx(i), g / STEPS as f64);
    }
    let last = STEPS - 1;
    let (n, g) = norm_grad(seq.zonos[last].center - mid[last]);
    parts.fde = n;
    add2(&mut grad, center_idx(last), g);

    let c: Vec<Vec2> = seq.zonos.iter().map(|z| z.center).collect();
    for i in 0..STEPS {
        let z = &seq.zonos[i];
        // (point, weights on (c_{i-1}, c_i, c_{i+1}) for the point gradient)
        let prev_pt = if i == 0 { (origin, [0.0, 0.0, 0.0]) } else { (0.5 * (c[i - 1] + c[i]), [0.5, 0.5, 0.0]) };
        let next_pt = if i == last { (future[STEPS], [0.0, 0.0, 0.0]) } else { (0.5 * (c[i] + c[i + 1]), [0.0, 0.5, 0.5]) };
        for (which, (pt, w)) in [prev_pt, next_pt].into_iter().enumerate() {
            for row in facet_rows_padded(z, &pt) {
                if row.value <= 0.0 {
                    continue;
                }
                if which == 0 {
                    parts.prev += row.value;
                } else {
                    parts.next += row.value;
                }
                add2(&mut grad, center_idx(i), row.d_center);
                for (j, dg) in row.d_generators.iter().enumerate() {
                    add2(&mut grad, gen_idx(i, j), *dg);
                }
                if i > 0 {
                    add2(&mut grad, center_idx(i - 1), w[0] * row.d_point);
                }
                add2(&mut grad, center_idx(i), w[1] * row.d_point);
                if i < last {
                    add2(&mut grad, center_idx(i + 1), w[2] * row.d_point);
                }
            }
        }
        for (j, g) in z.generators.iter().enumerate() {
            let (len, dir) = norm_grad(*g);
            let diff = len - targets[j];
            parts.gen += diff.abs();
            add2(&mut grad, gen_idx(i, j), diff.signum() * dir);
        }
    }
    (parts, grad)
}

/// `‖p − target‖` and its gradient w.r.t. `p`.
pub fn endpoint_loss(p: Vec2, target: Vec2) -> (f64, Vec2) {
    norm_grad(p - target)
}

/// Closed-form `KL(N(μ, diag σ²) ‖ N(0, I))` with `σ = exp(log_sigma)`;
/// returns value and gradients w.r.t. `μ` and `log σ`.
pub fn kl_loss(mu: &[f64], log_sigma: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let mut v = 0.0;
    let mut dmu = Vec::with_capacity(mu.len());
    let mut dls = Vec::with_capacity(mu.len());
    for (&m, &ls) in mu.iter().zip(log_sigma) {
        let s2 = (2.0 * ls).exp();
        v += 0.5 * (m * m + s2 - 1.0 - 2.0 * ls);
        dmu.push(m);
        dls.push(s2 - 1.0);
    }
    (v, dmu, dls)
}

/// Locomotion signals of a center sequence: sagittal/lateral finite-difference
/// velocities in the frame rotated by `heading`, and heading changes.
#[derive(Debug, Clone)]
pub struct LocomotionSignals {
    pub sag: Vec<f64>,
    pub lat: Vec<f64>,
    pub dtheta: Vec<f64>,
}

pub fn locomotion_signals(centers: &[Vec2], heading: f64, dt: f64) -> LocomotionSignals {
    let (s, c) = heading.sin_cos();
    let mut sag = Vec::new();
    let mut lat = Vec::new();
    let mut dtheta = Vec::new();
    let mut prev_heading = heading;
    for w in centers.windows(2) {
        let d = w[1] - w[0];
        sag.push((c * d.x + s * d.y) / dt);
        lat.push((-s * d.x + c * d.y) / dt);
        let h = d.y.atan2(d.x);
        dtheta.push(crate::lip::wrap_angle(h - prev_heading));
        prev_heading = h;
    }
    LocomotionSignals { sag, lat, dtheta }
}

/// STL locomotion losses (velocity + heading) on the decoded centers of
/// `out`, with the gradient of their sum w.r.t. `out`.
pub fn stl_losses(out: &[f64], heading: f64, dt: f64, th: &SpecThresholds) -> (f64, f64, Vec<f64>) {
    let seq = ZonotopeSeq::decode(out);
    let centers: Vec<Vec2> = seq.zonos.iter().map(|z| z.center).collect();
    let sig = locomotion_signals(&centers, heading, dt);
    let (lv, gsag, glat) = stl::loss_vel_grad(&sig.sag, &sig.lat, th);
    let (lh, gdth) = stl::loss_heading_grad(&sig.dtheta, th);
    let mut grad = vec![0.0; OUT_DIM];
    let (s, c) = heading.sin_cos();
    let n = centers.len() - 1;
    // d(diff_k) from velocity terms
    let mut d_diff = vec![Vec2::zeros(); n];
    for k in 0..n {
        d_diff[k] += Vec2::new(c, s) * (gsag[k] / dt) + Vec2::new(-s, c) * (glat[k] / dt);
    }
    // heading terms: dθ_k = h_k − h_{k−1}
    for k in 0..n {
        if gdth[k] == 0.0 {
            continue;
        }
        for (idx, sign) in [(k, 1.0), (k.wrapping_sub(1), -1.0)] {
            if idx >= n {
                continue;
            }
            let d = centers[idx + 1] - centers[idx];
            let r2 = d.norm_squared();
            if r2 < 1e-10 {
                continue;
            }
            d_diff[idx] += sign * gdth[k] * Vec2::new(-d.y / r2, d.x / r2);
        }
    }
    for k in 0..n {
        add2(&mut grad, center_idx(k + 1), d_diff[k]);
        add2(&mut grad, center_idx(k), -d_diff[k]);
    }
    (lv, lh, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zono::Zonotope2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const D: [f64; 4] = [0.1, 0.1, 0.005, 0.005];

    fn straight_future() -> Vec<Vec2> {
        (1..=8).map(|i| Vec2::new(0.4 * i as f64, 0.0)).collect()
    }

    fn seq_with_centers(centers: &[Vec2], half: f64) -> Vec<f64> {
        let zonos = centers
            .iter()
            .map(|c| {
                Zonotope2::new(*c, vec![Vec2::new(half, 0.0), Vec2::new(0.0, half), Vec2::new(half, half), Vec2::new(-half, half)])
                    .unwrap()
            })
            .collect();
        ZonotopeSeq { zonos }.encode()
    }

    #[test]
    fn perfect_centers_zero_displacement() {
        let f = straight_future();
        let out = seq_with_centers(&midpoints(&f), 0.1);
        let (p, _) = zonotope_losses(&out, &f, Vec2::zeros(), &D);
        assert!(p.ade.abs() < 1e-15 && p.fde.abs() < 1e-15);
    }

    #[test]
    fn offset_centers() {
        let f = straight_future();
        let mid: Vec<Vec2> = midpoints(&f).into_iter().map(|m| m + Vec2::new(0.1, 0.0)).collect();
        let (p, _) = zonotope_losses(&seq_with_centers(&mid, 0.1), &f, Vec2::zeros(), &D);
        assert!((p.ade - 0.1).abs() < 1e-12 && (p.fde - 0.1).abs() < 1e-12);
    }

    #[test]
    fn large_zonotopes_contain_neighbors() {
        let f = straight_future();
        let mid = midpoints(&f);
        let out = seq_with_centers(&mid, 1.0);
        let (p, _) = zonotope_losses(&out, &f, Vec2::zeros(), &D);
        // containment oracle on the same points
        let seq = ZonotopeSeq::decode(&out);
        assert!(seq.zonos[0].contains_point(&Vec2::zeros()).unwrap());
        assert!(seq.zonos[6].contains_point(&f[7]).unwrap());
        assert_eq!(p.prev, 0.0);
        assert_eq!(p.next, 0.0);
        assert!(p.gen > 0.0);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_loss(&[0.0; 4], &[0.0; 4]).0, 0.0);
        let (v, _, _) = kl_loss(&[1.0, 0.0, 0.0], &[0.0; 3]);
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_matches_monte_carlo() {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mu = [0.4, -0.7];
        let ls = [-0.3, 0.2];
        let (kl, _, _) = kl_loss(&mu, &ls);
        let n = 200_000;
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let mut lq = 0.0;
            let mut lp = 0.0;
            for d in 0..2 {
                let e: f64 = StandardNormal.sample(&mut rng);
                let s = ls[d].exp();
                let x = mu[d] + s * e;
                lq += -0.5 * e * e - ls[d];
                lp += -0.5 * x * x;
            }
            samples.push(lq - lp);
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - kl).abs() < 3.0 * se, "{mean} vs {kl} (se {se})");
    }

    fn fd_check(f: impl Fn(&[f64]) -> f64, x: &[f64], g: &[f64]) {
        let h = 1e-7;
        for i in 0..x.len() {
            let mut xp = x.to_vec();
            xp[i] += h;
            let mut xm = x.to_vec();
            xm[i] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            let scale = fd.abs().max(g[i].abs()).max(1e-4);
            assert!((fd - g[i]).abs() / scale < 1e-4, "entry {i}: fd {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn zonotope_loss_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = straight_future();
        for _ in 0..10 {
            let out: Vec<f64> = (0..OUT_DIM).map(|_| rng.gen_range(-0.6..0.6)).collect();
            let (_, g) = zonotope_losses(&out, &f, Vec2::new(0.05, -0.02), &D);
            fd_check(|o| zonotope_losses(o, &f, Vec2::new(0.05, -0.02), &D).0.total(), &out, &g);
        }
    }

    #[test]
    fn stl_loss_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let th = SpecThresholds::default();
        for _ in 0..20 {
            let out: Vec<f64> = (0..OUT_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (_, _, g) = stl_losses(&out, 0.3, 0.4, &th);
            fd_check(
                |o| {
                    let (a, b, _) = stl_losses(o, 0.3, 0.4, &th);
                    a + b
                },
                &out,
                &g,
            );
        }
    }
}
