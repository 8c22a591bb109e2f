//! Dense convex QP `min ½xᵀQx + cᵀx s.t. Ax ≤ b` by a primal-dual
//! interior-point method with Mehrotra's predictor-corrector. Sized for
//! the planner's subproblems: a handful of variables, a few hundred rows.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// Row multipliers, `z ≥ 0`.
    pub z: Vec<f64>,
}

pub struct Qp<'a> {
    pub q: &'a DMatrix<f64>,
    pub c: &'a [f64],
    /// Rows of `A`, each of length `n`.
    pub a: &'a [Vec<f64>],
    pub b: &'a [f64],
}

const MAX_ITER: usize = 60;
const TOL: f64 = 1e-10;

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    v.iter().zip(dv).filter(|(_, d)| **d < 0.0).map(|(x, d)| -x / d).fold(1.0, f64::min)
}

impl Qp<'_> {
    fn ax(&self, x: &[f64]) -> Vec<f64> {
        self.a.iter().map(|r| r.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
    }

    fn at(&self, y: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (r, &yi) in self.a.iter().zip(y) {
            if yi != 0.0 {
                for (o, p) in out.iter_mut().zip(r) {
                    *o += p * yi;
                }
            }
        }
        out
    }

    pub fn solve(&self) -> QpSolution {
        let n = self.c.len();
        let m = self.b.len();
        let mut x = vec![0.0; n];
        if m == 0 {
            let q = self.q.clone() + DMatrix::identity(n, n) * 1e-12;
            let sol = q.cholesky().map(|ch| ch.solve(&-DVector::from_column_slice(self.c)));
            return QpSolution { x: sol.map(|v| v.as_slice().to_vec()).unwrap_or(x), z: Vec::new() };
        }
        let mut s: Vec<f64> = self.ax(&x).iter().zip(self.b).map(|(ax, b)| (b - ax).max(1.0)).collect();
        let mut z = vec![1.0; m];
        let scale = 1.0 + self.c.iter().chain(self.b).map(|v| v.abs()).fold(0.0, f64::max);
        for _ in 0..MAX_ITER {
            let ax = self.ax(&x);
            let qx = self.q * DVector::from_column_slice(&x);
            let atz = self.at(&z, n);
            let r_d: Vec<f64> = (0..n).map(|i| qx[i] + self.c[i] + atz[i]).collect();
            let r_p: Vec<f64> = (0..m).map(|i| ax[i] + s[i] - self.b[i]).collect();
            let mu = s.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() / m as f64;
            let res = r_d.iter().chain(&r_p).map(|v| v.abs()).fold(0.0, f64::max);
            if res <= TOL * scale && mu <= TOL * scale {
                break;
            }
            // reduced system (Q + Aᵀ S⁻¹Z A) dx = rhs
            let mut k = self.q.clone();
            for (r, (si, zi)) in self.a.iter().zip(s.iter().zip(&z)) {
                let w = zi / si;
                for i in 0..n {
                    if r[i] == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        k[(i, j)] += w * r[i] * r[j];
                    }
                }
            }
            for i in 0..n {
                k[(i, i)] += 1e-12;
            }
            let Some(ch) = k.cholesky() else { break };
            let direction = |r_c: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
                // dz = S⁻¹Z(A dx + r_p) − S⁻¹ r_c ; ds = −r_p − A dx
                let t: Vec<f64> = (0..m).map(|i| (z[i] * r_p[i] - r_c[i]) / s[i]).collect();
                let at = self.at(&t, n);
                let rhs = DVector::from_iterator(n, (0..n).map(|i| -r_d[i] - at[i]));
                let dx = ch.solve(&rhs);
                let dx: Vec<f64> = dx.as_slice().to_vec();
                let adx = self.ax(&dx);
                let dz: Vec<f64> = (0..m).map(|i| (z[i] * (adx[i] + r_p[i]) - r_c[i]) / s[i]).collect();
                let ds: Vec<f64> = (0..m).map(|i| -r_p[i] - adx[i]).collect();
                (dx, ds, dz)
            };
            // predictor
            let r_aff: Vec<f64> = (0..m).map(|i| s[i] * z[i]).collect();
            let (_, ds_a, dz_a) = direction(&r_aff);
            let alpha_a = max_step(&s, &ds_a).min(max_step(&z, &dz_a));
            let mu_aff = (0..m).map(|i| (s[i] + alpha_a * ds_a[i]) * (z[i] + alpha_a * dz_a[i])).sum::<f64>() / m as f64;
            let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);
            // corrector
            let r_c: Vec<f64> = (0..m).map(|i| s[i] * z[i] + ds_a[i] * dz_a[i] - sigma * mu).collect();
            let (dx, ds, dz) = direction(&r_c);
            let alpha = (0.99 * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0);
            for i in 0..n {
                x[i] += alpha * dx[i];
            }
            for i in 0..m {
                s[i] = (s[i] + alpha * ds[i]).max(1e-300);
                z[i] = (z[i] + alpha * dz[i]).max(1e-300);
            }
        }
        QpSolution { x, z }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_minimum_inside_box() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let a = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
        let b = [1.0, 1.0, 1.0, 1.0];
        let sol = Qp { q: &q, c: &[-1.0, -1.0], a: &a, b: &b }.solve();
        assert!((sol.x[0] - 0.5).abs() < 1e-8 && (sol.x[1] - 0.25).abs() < 1e-8, "{:?}", sol.x);
        assert!(sol.z.iter().all(|z| *z < 1e-8));
    }

    #[test]
    fn active_constraint_and_multiplier() {
        // min ½|x|² − x0 − x1  s.t. x0 + x1 ≤ 1  ⇒  x = (½, ½), z = ½
        let q = DMatrix::identity(2, 2);
        let a = vec![vec![1.0, 1.0]];
        let sol = Qp { q: &q, c: &[-1.0, -1.0], a: &a, b: &[1.0] }.solve();
        assert!((sol.x[0] - 0.5).abs() < 1e-8 && (sol.x[1] - 0.5).abs() < 1e-8);
        assert!((sol.z[0] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn linear_program_with_singular_q() {
        // min −x s.t. x ≤ 2, −x ≤ 0, and a free second variable boxed
        let q = DMatrix::zeros(2, 2);
        let a = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
        let sol = Qp { q: &q, c: &[-1.0, 0.0], a: &a, b: &[2.0, 0.0, 1.0, 1.0] }.solve();
        assert!((sol.x[0] - 2.0).abs() < 1e-7, "{:?}", sol.x);
    }
}
