//! Sequential quadratic programming for `min f(u) s.t. g(u) ≤ 0,
//! lb ≤ u ≤ ub`. Each iterate solves an elastic QP (one slack shared by
//! all rows, so the subproblem is always feasible) with a damped BFGS
//! Hessian, then backtracks on the exact penalty `f + ν·max(0, max g)`,
//! trying a second-order correction when the full step is rejected.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::qp::Qp;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub max_iterations: usize,
    /// Max constraint violation for a converged solve.
    pub tol_violation: f64,
    /// Looser violation accepted from an unconverged solve.
    pub accept_violation: f64,
    /// Step length (∞-norm) below which a feasible iterate is stationary.
    pub tol_step: f64,
    pub penalty_init: f64,
    pub penalty_max: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { max_iterations: 80, tol_violation: 1e-7, accept_violation: 1e-4, tol_step: 1e-7, penalty_init: 10.0, penalty_max: 1e8 }
    }
}

/// Objective, constraints and their first derivatives at one point.
#[derive(Debug, Clone, Default)]
pub struct Evaluation {
    pub f: f64,
    pub grad: Vec<f64>,
    pub g: Vec<f64>,
    pub jac: Vec<Vec<f64>>,
}

impl Evaluation {
    pub fn violation(&self) -> f64 {
        self.g.iter().fold(0.0, |m, &v| m.max(v))
    }
}

pub trait Nlp {
    fn dim(&self) -> usize;
    fn bounds(&self) -> (Vec<f64>, Vec<f64>);
    fn eval(&mut self, u: &[f64]) -> Result<Evaluation>;
}

/// Penalty and curvature estimate carried from one solve to the next.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolverWarm {
    pub penalty: f64,
    /// Row-major `n×n` Hessian approximation.
    pub hessian: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub u: Vec<f64>,
    pub f: f64,
    pub violation: f64,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub warm: SolverWarm,
}

fn project(x: &mut [f64], lb: &[f64], ub: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lb[i], ub[i]);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Best iterate so far: feasible ones by objective, otherwise least violation.
struct Best {
    tol: f64,
    f: f64,
    viol: f64,
    u: Vec<f64>,
}

impl Best {
    fn offer(&mut self, u: &[f64], f: f64, viol: f64) {
        let better = match (viol <= self.tol, self.viol <= self.tol) {
            (true, true) => f < self.f,
            (true, false) => true,
            (false, true) => false,
            (false, false) => viol < self.viol,
        };
        if better {
            self.f = f;
            self.viol = viol;
            self.u = u.to_vec();
        }
    }
}

struct Counter<'a, P: Nlp> {
    p: &'a mut P,
    evals: usize,
}

impl<P: Nlp> Counter<'_, P> {
    fn eval(&mut self, u: &[f64]) -> Result<Evaluation> {
        let e = self.p.eval(u)?;
        self.evals += 1;
        if !e.f.is_finite() || e.grad.iter().chain(&e.g).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteObjective);
        }
        Ok(e)
    }
}

/// Elastic QP at `x`: returns `(d, t, row multipliers)`. `g` may differ
/// from `e.g` for a second-order correction.
fn subproblem(e: &Evaluation, g: &[f64], b: &DMatrix<f64>, nu: f64, x: &[f64], lb: &[f64], ub: &[f64]) -> (Vec<f64>, f64, Vec<f64>) {
    let n = x.len();
    let m = g.len();
    let mut q = DMatrix::zeros(n + 1, n + 1);
    q.view_mut((0, 0), (n, n)).copy_from(b);
    let mut c = e.grad.clone();
    c.push(nu);
    let mut rows = Vec::with_capacity(m + 1 + 2 * n);
    let mut rhs = Vec::with_capacity(m + 1 + 2 * n);
    for (j, gi) in e.jac.iter().zip(g) {
        let mut r = j.clone();
        r.push(-1.0);
        rows.push(r);
        rhs.push(-gi);
    }
    let mut r = vec![0.0; n + 1];
    r[n] = -1.0;
    rows.push(r);
    rhs.push(0.0);
    for i in 0..n {
        let mut r = vec![0.0; n + 1];
        r[i] = 1.0;
        rows.push(r.clone());
        rhs.push(ub[i] - x[i]);
        r[i] = -1.0;
        rows.push(r);
        rhs.push(x[i] - lb[i]);
    }
    let sol = Qp { q: &q, c: &c, a: &rows, b: &rhs }.solve();
    let mut d = sol.x[..n].to_vec();
    // keep the step inside the box despite interior-point round-off
    for i in 0..n {
        d[i] = (x[i] + d[i]).clamp(lb[i], ub[i]) - x[i];
    }
    (d, sol.x[n].max(0.0), sol.z[..m].to_vec())
}

fn lagrangian_grad(e: &Evaluation, lambda: &[f64]) -> Vec<f64> {
    let mut g = e.grad.clone();
    for (row, l) in e.jac.iter().zip(lambda) {
        if *l != 0.0 {
            for (gi, r) in g.iter_mut().zip(row) {
                *gi += l * r;
            }
        }
    }
    g
}

/// Damped BFGS update of the Hessian approximation.
fn bfgs_update(b: &mut DMatrix<f64>, s: &[f64], y: &[f64]) {
    let n = s.len();
    let bs: Vec<f64> = (0..n).map(|i| (0..n).map(|j| b[(i, j)] * s[j]).sum()).collect();
    let sbs = dot(s, &bs);
    if sbs <= 1e-16 {
        return;
    }
    let sy = dot(s, y);
    let theta = if sy >= 0.2 * sbs { 1.0 } else { 0.8 * sbs / (sbs - sy) };
    let r: Vec<f64> = (0..n).map(|i| theta * y[i] + (1.0 - theta) * bs[i]).collect();
    let sr = dot(s, &r);
    for i in 0..n {
        for j in 0..n {
            b[(i, j)] += r[i] * r[j] / sr - bs[i] * bs[j] / sbs;
        }
    }
}

/// Solves from `u0`. Errors with [`Error::Infeasible`] when the best iterate
/// violates the constraints by more than `accept_violation`.
pub fn solve<P: Nlp>(p: &mut P, u0: &[f64], s: &SolverSettings) -> Result<SolveReport> {
    solve_from(p, u0, s, None)
}

/// As [`solve`], reusing the penalty and Hessian of an earlier solve of the
/// same size.
pub fn solve_from<P: Nlp>(p: &mut P, u0: &[f64], s: &SolverSettings, warm: Option<&SolverWarm>) -> Result<SolveReport> {
    let (lb, ub) = p.bounds();
    let n = u0.len();
    let mut x = u0.to_vec();
    project(&mut x, &lb, &ub);
    let mut ev = Counter { p, evals: 0 };
    let mut e = ev.eval(&x)?;
    let mut best = Best { tol: s.tol_violation, f: e.f, viol: e.violation(), u: x.clone() };
    let (mut nu, mut b) = match warm {
        Some(w) if w.hessian.len() == n * n => (w.penalty.clamp(s.penalty_init, s.penalty_max), DMatrix::from_row_slice(n, n, &w.hessian)),
        _ => (s.penalty_init, DMatrix::identity(n, n)),
    };
    let mut converged = false;
    let mut fresh_b = warm.is_none();
    let mut iterations = 0;
    while iterations < s.max_iterations {
        iterations += 1;
        let viol = e.violation();
        let (d, t, lam) = subproblem(&e, &e.g, &b, nu, &x, &lb, &ub);
        // the linearization could be satisfied but the penalty is too weak
        if t > 1e-9 && nu < s.penalty_max {
            let (_, t2, _) = subproblem(&e, &e.g, &b, (nu * 10.0).min(s.penalty_max), &x, &lb, &ub);
            if t2 < t - 1e-12 {
                nu = (nu * 10.0).min(s.penalty_max);
                continue;
            }
        }
        let lam_sum: f64 = lam.iter().sum();
        if lam_sum * 1.1 > nu {
            nu = (lam_sum * 2.0).min(s.penalty_max);
        }
        let step = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if viol <= s.tol_violation && step <= s.tol_step {
            converged = true;
            break;
        }
        let bd: Vec<f64> = (0..n).map(|i| (0..n).map(|j| b[(i, j)] * d[j]).sum()).collect();
        let pred = -(dot(&e.grad, &d) + 0.5 * dot(&d, &bd)) + nu * (viol - t);
        let phi0 = e.f + nu * viol;
        if pred <= 1e-14 * (1.0 + phi0.abs()) {
            converged = viol <= s.tol_violation;
            break;
        }
        let merit = |e: &Evaluation| e.f + nu * e.violation();
        let mut accepted: Option<(Vec<f64>, Evaluation)> = None;
        let mut alpha = 1.0;
        for k in 0..30 {
            let xt: Vec<f64> = (0..n).map(|i| (x[i] + alpha * d[i]).clamp(lb[i], ub[i])).collect();
            let et = ev.eval(&xt)?;
            best.offer(&xt, et.f, et.violation());
            if phi0 - merit(&et) >= 1e-4 * alpha * pred {
                accepted = Some((xt, et));
                break;
            }
            if k == 0 {
                // second-order correction against curved constraints
                let g_soc: Vec<f64> = et.g.iter().zip(&e.jac).map(|(gt, j)| gt - dot(j, &d)).collect();
                let (dc, _, _) = subproblem(&e, &g_soc, &b, nu, &x, &lb, &ub);
                let xc: Vec<f64> = (0..n).map(|i| (x[i] + dc[i]).clamp(lb[i], ub[i])).collect();
                let ec = ev.eval(&xc)?;
                best.offer(&xc, ec.f, ec.violation());
                if phi0 - merit(&ec) >= 1e-4 * pred {
                    accepted = Some((xc, ec));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((xn, en)) = accepted else {
            if fresh_b {
                break;
            }
            b = DMatrix::identity(n, n);
            fresh_b = true;
            continue;
        };
        let sv: Vec<f64> = (0..n).map(|i| xn[i] - x[i]).collect();
        let g_old = lagrangian_grad(&e, &lam);
        let g_new = lagrangian_grad(&en, &lam);
        let yv: Vec<f64> = (0..n).map(|i| g_new[i] - g_old[i]).collect();
        bfgs_update(&mut b, &sv, &yv);
        fresh_b = false;
        x = xn;
        e = en;
    }
    let evals = ev.evals;
    if best.viol > s.accept_violation {
        return Err(Error::Infeasible { violation: best.viol });
    }
    let warm = SolverWarm { penalty: nu, hessian: b.transpose().as_slice().to_vec() };
    Ok(SolveReport { converged: converged && best.viol <= s.tol_violation, u: best.u, f: best.f, violation: best.viol, iterations, evaluations: evals, warm })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// min (x−2)² + (y−1)²  s.t. x + y ≤ 1, x² ≤ 0.25 (via box), y ≥ −5
    struct Quad;

    impl Nlp for Quad {
        fn dim(&self) -> usize {
            2
        }
        fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
            (vec![-0.5, -5.0], vec![0.5, 5.0])
        }
        fn eval(&mut self, u: &[f64]) -> Result<Evaluation> {
            Ok(Evaluation {
                f: (u[0] - 2.0).powi(2) + (u[1] - 1.0).powi(2),
                grad: vec![2.0 * (u[0] - 2.0), 2.0 * (u[1] - 1.0)],
                g: vec![u[0] + u[1] - 1.0],
                jac: vec![vec![1.0, 1.0]],
            })
        }
    }

    #[test]
    fn solves_box_and_linear_constraint() {
        let r = solve(&mut Quad, &[0.0, 0.0], &SolverSettings::default()).unwrap();
        // KKT: x at its bound 0.5, y = 0.5 on the line
        assert!(r.converged);
        assert!((r.u[0] - 0.5).abs() < 1e-5, "{:?}", r.u);
        assert!((r.u[1] - 0.5).abs() < 1e-5);
    }

    /// Rosenbrock with a disk constraint.
    struct Rosen;

    impl Nlp for Rosen {
        fn dim(&self) -> usize {
            2
        }
        fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
            (vec![-2.0, -2.0], vec![2.0, 2.0])
        }
        fn eval(&mut self, u: &[f64]) -> Result<Evaluation> {
            let (x, y) = (u[0], u[1]);
            Ok(Evaluation {
                f: (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2),
                grad: vec![-2.0 * (1.0 - x) - 400.0 * x * (y - x * x), 200.0 * (y - x * x)],
                g: vec![x * x + y * y - 1.0],
                jac: vec![vec![2.0 * x, 2.0 * y]],
            })
        }
    }

    #[test]
    fn solves_constrained_rosenbrock() {
        let s = SolverSettings::default();
        let r = solve(&mut Rosen, &[-1.0, 0.5], &s).unwrap();
        // known optimum on the unit circle near (0.7864, 0.6177)
        assert!(r.violation <= 1e-6);
        assert!((r.u[0] - 0.7864).abs() < 2e-3 && (r.u[1] - 0.6177).abs() < 2e-3, "{:?}", r.u);
    }

    struct Impossible;

    impl Nlp for Impossible {
        fn dim(&self) -> usize {
            1
        }
        fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
            (vec![0.0], vec![1.0])
        }
        fn eval(&mut self, u: &[f64]) -> Result<Evaluation> {
            Ok(Evaluation { f: u[0], grad: vec![1.0], g: vec![2.0 - u[0]], jac: vec![vec![-1.0]] })
        }
    }

    #[test]
    fn reports_infeasible() {
        assert!(matches!(solve(&mut Impossible, &[0.0], &SolverSettings::default()), Err(Error::Infeasible { .. })));
    }
}
