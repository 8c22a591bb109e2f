//! Planar zonotopes: center/generator form, Minkowski sums, the analytic
//! half-space conversion and the predicates built on it.
//!
//! Everything here is 2-D. A zonotope is `{c + G β : ‖β‖∞ ≤ 1}`; with no
//! generators it is the single point `c`.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;

/// Generators at or below this norm are rejected by [`Zonotope2::to_halfspace`].
pub const MIN_GENERATOR_NORM: f64 = 1e-8;
/// Side length of the axis-aligned pad used by [`Zonotope2::padded`].
pub const PAD_SCALE: f64 = 1e-6;
/// Default log-sum-exp temperature for smoothed residuals.
pub const LSE_TEMPERATURE: f64 = 0.01;
/// Minimum exterior residual accepted as "strictly outside".
pub const EXTERIOR_MARGIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct Zonotope2 {
    pub center: Vec2,
    pub generators: Vec<Vec2>,
}

/// `{x : A x ≤ b}` with one row pair per generator.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfspaceRep {
    pub normals: Vec<Vec2>,
    pub offsets: Vec<f64>,
}

impl Zonotope2 {
    pub fn new(center: Vec2, generators: Vec<Vec2>) -> Result<Self> {
        let ok = center.iter().all(|v| v.is_finite())
            && generators.iter().all(|g| g.iter().all(|v| v.is_finite()));
        if !ok {
            return Err(Error::NonFinite("zonotope entries"));
        }
        Ok(Self { center, generators })
    }

    pub fn point(center: Vec2) -> Self {
        Self { center, generators: Vec::new() }
    }

    /// Axis-aligned box with half-widths `hx`, `hy`.
    pub fn axis_box(center: Vec2, hx: f64, hy: f64) -> Self {
        Self {
            center,
            generators: vec![Vec2::new(hx, 0.0), Vec2::new(0.0, hy)],
        }
    }

    pub fn num_generators(&self) -> usize {
        self.generators.len()
    }

    pub fn minkowski_sum(&self, other: &Zonotope2) -> Zonotope2 {
        let mut generators = Vec::with_capacity(self.generators.len() + other.generators.len());
        generators.extend_from_slice(&self.generators);
        generators.extend_from_slice(&other.generators);
        Zonotope2 { center: self.center + other.center, generators }
    }

    pub fn translate(&self, by: Vec2) -> Zonotope2 {
        Zonotope2 { center: self.center + by, generators: self.generators.clone() }
    }

    pub fn with_generators(&self, extra: &[Vec2]) -> Zonotope2 {
        let mut generators = self.generators.clone();
        generators.extend_from_slice(extra);
        Zonotope2 { center: self.center, generators }
    }

    /// Support function `h(d) = d·c + Σ|d·g|`.
    pub fn support(&self, d: &Vec2) -> f64 {
        d.dot(&self.center) + self.generators.iter().map(|g| d.dot(g).abs()).sum::<f64>()
    }

    /// Drops generators at or below [`MIN_GENERATOR_NORM`] and appends a
    /// `PAD_SCALE`-sized axis box, so the result always converts.
    pub fn padded(&self) -> Zonotope2 {
        if !self.generators.is_empty() && self.generators.iter().all(|g| g.norm() > MIN_GENERATOR_NORM) {
            return self.clone();
        }
        let mut generators: Vec<Vec2> = self
            .generators
            .iter()
            .copied()
            .filter(|g| g.norm() > MIN_GENERATOR_NORM)
            .collect();
        generators.push(Vec2::new(PAD_SCALE, 0.0));
        generators.push(Vec2::new(0.0, PAD_SCALE));
        Zonotope2 { center: self.center, generators }
    }

    pub fn to_halfspace(&self) -> Result<HalfspaceRep> {
        if self.generators.is_empty() {
            return Err(Error::DegenerateGenerator { index: 0, norm: 0.0 });
        }
        let n = self.generators.len();
        let mut normals = Vec::with_capacity(2 * n);
        for (index, g) in self.generators.iter().enumerate() {
            let norm = g.norm();
            if norm <= MIN_GENERATOR_NORM {
                return Err(Error::DegenerateGenerator { index, norm });
            }
            normals.push(Vec2::new(-g.y, g.x) / norm);
        }
        for i in 0..n {
            let a = -normals[i];
            normals.push(a);
        }
        let offsets = normals.iter().map(|a| self.support(a)).collect();
        Ok(HalfspaceRep { normals, offsets })
    }

    /// `max_i (A_i p − b_i)`; non-positive exactly when `p` is inside.
    pub fn residual(&self, p: &Vec2) -> Result<f64> {
        Ok(self.to_halfspace()?.residual(p))
    }

    pub fn residual_lse(&self, p: &Vec2, tau: f64) -> Result<f64> {
        Ok(self.to_halfspace()?.residual_lse(p, tau))
    }

    pub fn contains_point(&self, p: &Vec2) -> Result<bool> {
        Ok(self.residual(p)? <= 0.0)
    }

    /// Two zonotopes intersect iff `c1 ∈ Z(c2, [G1 G2])`.
    pub fn intersects(&self, other: &Zonotope2) -> Result<bool> {
        let combined = Zonotope2 {
            center: other.center,
            generators: self.generators.iter().chain(other.generators.iter()).copied().collect(),
        };
        combined.contains_point(&self.center)
    }

    /// Vertices in counter-clockwise order. A point zonotope yields one vertex.
    pub fn vertices(&self) -> Vec<Vec2> {
        let mut gens: Vec<Vec2> = self
            .generators
            .iter()
            .filter(|g| g.norm() > 0.0)
            .map(|g| if g.y < 0.0 || (g.y == 0.0 && g.x < 0.0) { -*g } else { *g })
            .collect();
        if gens.is_empty() {
            return vec![self.center];
        }
        // upper half-plane generators sorted by angle
        gens.sort_by(|a, b| a.y.atan2(a.x).total_cmp(&b.y.atan2(b.x)));
        let sum: Vec2 = gens.iter().sum();
        let mut v = self.center - sum;
        let mut out = Vec::with_capacity(2 * gens.len());
        for g in &gens {
            out.push(v);
            v += 2.0 * g;
        }
        for g in &gens {
            out.push(v);
            v -= 2.0 * g;
        }
        out
    }
}

impl HalfspaceRep {
    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    pub fn row_values<'a>(&'a self, p: &'a Vec2) -> impl Iterator<Item = f64> + 'a {
        self.normals.iter().zip(&self.offsets).map(move |(a, b)| a.dot(p) - b)
    }

    pub fn residual(&self, p: &Vec2) -> f64 {
        self.row_values(p).fold(f64::NEG_INFINITY, f64::max)
    }

    /// `τ ln Σ exp(r_i/τ)`; never below [`Self::residual`], at most `τ ln m` above it.
    pub fn residual_lse(&self, p: &Vec2, tau: f64) -> f64 {
        let rows: Vec<f64> = self.row_values(p).collect();
        log_sum_exp(&rows, tau)
    }
}

pub fn log_sum_exp(rows: &[f64], tau: f64) -> f64 {
    let m = rows.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = rows.iter().map(|r| ((r - m) / tau).exp()).sum();
    m + tau * s.ln()
}

/// Softmax weights matching [`log_sum_exp`].
pub fn lse_weights(rows: &[f64], tau: f64) -> Vec<f64> {
    let m = rows.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = rows.iter().map(|r| ((r - m) / tau).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// One facet row `a·p − b` of a zonotope together with its derivatives with
/// respect to the query point, the center, and every generator.
#[derive(Debug, Clone)]
pub struct RowDerivative {
    pub value: f64,
    pub d_point: Vec2,
    pub d_center: Vec2,
    pub d_generators: Vec<Vec2>,
}

/// How `|a·g|` is evaluated inside facet rows. The smoothed forms bound
/// the exact rows from one side, so a constraint met with them is met
/// exactly: `Under` (≤ |x|) raises every row, `Over` (≥ |x|) lowers it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AbsMode {
    Exact,
    /// `√(x² + δ²) − δ`
    Under(f64),
    /// `√(x² + δ²)`
    Over(f64),
}

impl AbsMode {
    /// Value and slope.
    fn eval(self, x: f64) -> (f64, f64) {
        match self {
            AbsMode::Exact => (x.abs(), if x == 0.0 { 0.0 } else { x.signum() }),
            AbsMode::Under(d) | AbsMode::Over(d) => {
                let r = x.hypot(d);
                let v = if matches!(self, AbsMode::Under(_)) { r - d } else { r };
                (v, x / r)
            }
        }
    }
}

/// Evaluates every facet row of `z` at `p` with full derivatives.
///
/// Rows come in the same order as [`Zonotope2::to_halfspace`]. The caller is
/// responsible for padding degenerate generators first.
pub fn facet_rows(z: &Zonotope2, p: &Vec2) -> Result<Vec<RowDerivative>> {
    facet_rows_with(z, p, AbsMode::Exact)
}

pub fn facet_rows_with(z: &Zonotope2, p: &Vec2, mode: AbsMode) -> Result<Vec<RowDerivative>> {
    let n = z.generators.len();
    if n == 0 {
        return Err(Error::DegenerateGenerator { index: 0, norm: 0.0 });
    }
    let mut out = Vec::with_capacity(2 * n);
    for sign in [1.0, -1.0] {
        for j in 0..n {
            let g = z.generators[j];
            let len = g.norm();
            if len <= MIN_GENERATOR_NORM {
                return Err(Error::DegenerateGenerator { index: j, norm: len });
            }
            let rg = Vec2::new(-g.y, g.x);
            let a = sign * rg / len;
            let rel = p - z.center;
            let mut value = a.dot(&rel);
            let mut d_a = rel;
            let mut d_generators = vec![Vec2::zeros(); n];
            for (k, gk) in z.generators.iter().enumerate() {
                if k == j {
                    continue;
                }
                let (v, s) = mode.eval(a.dot(gk));
                value -= v;
                d_a -= s * gk;
                d_generators[k] -= s * a;
            }
            // a = sign · R g / |g|  ⇒  ∂a/∂g = sign/|g| · R (I − ĝĝᵀ)
            let gh = g / len;
            let rt_da = Vec2::new(d_a.y, -d_a.x); // Rᵀ d_a
            let proj = rt_da - gh * gh.dot(&rt_da);
            d_generators[j] += sign / len * proj;
            out.push(RowDerivative { value, d_point: a, d_center: -a, d_generators });
        }
    }
    Ok(out)
}

/// Like [`facet_rows`] but tolerates degenerate generators: they are
/// dropped and a small pad box is appended. `d_generators` of each row is
/// re-indexed to the original generator list (dropped ones get zero).
pub fn facet_rows_padded(z: &Zonotope2, p: &Vec2) -> Vec<RowDerivative> {
    facet_rows_padded_with(z, p, AbsMode::Exact)
}

pub fn facet_rows_padded_with(z: &Zonotope2, p: &Vec2, mode: AbsMode) -> Vec<RowDerivative> {
    let kept: Vec<usize> = (0..z.generators.len())
        .filter(|&j| z.generators[j].norm() > MIN_GENERATOR_NORM)
        .collect();
    if kept.len() == z.generators.len() && !kept.is_empty() {
        return facet_rows_with(z, p, mode).expect("generators checked");
    }
    let padded = z.padded();
    let rows = facet_rows_with(&padded, p, mode).expect("padded zonotope converts");
    rows.into_iter()
        .map(|r| {
            let mut d = vec![Vec2::zeros(); z.generators.len()];
            for (slot, &j) in kept.iter().enumerate() {
                d[j] = r.d_generators[slot];
            }
            RowDerivative { d_generators: d, ..r }
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct ZonotopeJson {
    c: [f64; 2],
    #[serde(rename = "G")]
    g: [Vec<f64>; 2],
}

impl Serialize for Zonotope2 {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ZonotopeJson {
            c: [self.center.x, self.center.y],
            g: [
                self.generators.iter().map(|g| g.x).collect(),
                self.generators.iter().map(|g| g.y).collect(),
            ],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Zonotope2 {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = ZonotopeJson::deserialize(d)?;
        if raw.g[0].len() != raw.g[1].len() {
            return Err(serde::de::Error::custom("generator rows differ in length"));
        }
        let generators = raw.g[0].iter().zip(&raw.g[1]).map(|(x, y)| Vec2::new(*x, *y)).collect();
        Zonotope2::new(Vec2::new(raw.c[0], raw.c[1]), generators).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_box(c: Vec2) -> Zonotope2 {
        Zonotope2::axis_box(c, 1.0, 1.0)
    }

    fn random_zono(rng: &mut impl Rng, n: usize) -> Zonotope2 {
        let c = Vec2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let g = (0..n).map(|_| Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        Zonotope2::new(c, g).unwrap()
    }

    #[test]
    fn point_is_identity_for_minkowski_sum() {
        let g = vec![Vec2::new(1.0, 0.5), Vec2::new(-0.2, 0.3)];
        let z = Zonotope2::new(Vec2::zeros(), g.clone()).unwrap();
        let s = Zonotope2::point(Vec2::new(1.0, 2.0)).minkowski_sum(&z);
        assert_eq!(s.center, Vec2::new(1.0, 2.0));
        assert_eq!(s.generators, g);
    }

    #[test]
    fn box_plus_box_doubles_support() {
        let b = unit_box(Vec2::zeros());
        let s = b.minkowski_sum(&b);
        assert_eq!(s.num_generators(), 4);
        assert_eq!(s.support(&Vec2::new(1.0, 0.0)), 2.0);
    }

    #[test]
    fn unit_box_halfspace() {
        let h = unit_box(Vec2::zeros()).to_halfspace().unwrap();
        let expect_a = [(0.0, 1.0), (-1.0, 0.0), (0.0, -1.0), (1.0, 0.0)];
        for (a, e) in h.normals.iter().zip(expect_a) {
            assert!((a.x - e.0).abs() < 1e-15 && (a.y - e.1).abs() < 1e-15, "{a:?}");
        }
        assert_eq!(h.offsets, vec![1.0; 4]);

        let h = unit_box(Vec2::new(1.0, 0.0)).to_halfspace().unwrap();
        assert_eq!(h.offsets, vec![1.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn degenerate_generator_is_reported() {
        let z = Zonotope2::new(Vec2::zeros(), vec![Vec2::new(1.0, 0.0), Vec2::new(1e-9, 0.0)]).unwrap();
        assert!(matches!(z.to_halfspace(), Err(Error::DegenerateGenerator { index: 1, .. })));
        let p = z.padded();
        assert_eq!(p.num_generators(), 3);
        assert!(p.to_halfspace().is_ok());
        assert!(Zonotope2::point(Vec2::zeros()).to_halfspace().is_err());
    }

    #[test]
    fn residual_examples() {
        let b = unit_box(Vec2::zeros());
        assert!((b.residual(&Vec2::new(0.5, 0.5)).unwrap() + 0.5).abs() < 1e-15);
        assert!(b.contains_point(&Vec2::new(0.5, 0.5)).unwrap());
        assert!((b.residual(&Vec2::new(2.0, 0.0)).unwrap() - 1.0).abs() < 1e-15);
        assert!(!b.contains_point(&Vec2::new(2.0, 0.0)).unwrap());
    }

    #[test]
    fn lse_bounds_exact_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let z = random_zono(&mut rng, 4);
            let p = Vec2::new(rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0));
            let exact = z.residual(&p).unwrap();
            let smooth = z.residual_lse(&p, LSE_TEMPERATURE).unwrap();
            assert!(smooth >= exact - 1e-12);
            assert!(smooth - exact <= LSE_TEMPERATURE * (8.0f64).ln() + 1e-12);
        }
    }

    #[test]
    fn intersection_examples() {
        let a = unit_box(Vec2::zeros());
        assert!(!a.intersects(&unit_box(Vec2::new(3.0, 0.0))).unwrap());
        assert!(a.intersects(&unit_box(Vec2::new(1.5, 0.0))).unwrap());
    }

    #[test]
    fn vertices_of_box() {
        let v = unit_box(Vec2::new(1.0, 1.0)).vertices();
        assert_eq!(v.len(), 4);
        for p in v {
            assert!(((p.x - 1.0).abs() - 1.0).abs() < 1e-12 && ((p.y - 1.0).abs() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn facet_rows_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-6;
        for _ in 0..50 {
            let z = random_zono(&mut rng, 3);
            let p = Vec2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let rows = facet_rows(&z, &p).unwrap();
            let hs = z.to_halfspace().unwrap();
            for (i, r) in rows.iter().enumerate() {
                assert!((r.value - (hs.normals[i].dot(&p) - hs.offsets[i])).abs() < 1e-12);
            }
            let eval = |z: &Zonotope2, p: &Vec2| -> Vec<f64> {
                facet_rows(z, p).unwrap().into_iter().map(|r| r.value).collect()
            };
            for axis in 0..2 {
                let mut e = Vec2::zeros();
                e[axis] = h;
                let fp = eval(&z, &(p + e));
                let fm = eval(&z, &(p - e));
                let zp = z.translate(e);
                let zm = z.translate(-e);
                let cp = eval(&zp, &p);
                let cm = eval(&zm, &p);
                for (i, r) in rows.iter().enumerate() {
                    assert!(((fp[i] - fm[i]) / (2.0 * h) - r.d_point[axis]).abs() < 1e-6);
                    assert!(((cp[i] - cm[i]) / (2.0 * h) - r.d_center[axis]).abs() < 1e-6);
                }
                for j in 0..z.num_generators() {
                    let mut zp = z.clone();
                    zp.generators[j][axis] += h;
                    let mut zm = z.clone();
                    zm.generators[j][axis] -= h;
                    let gp = eval(&zp, &p);
                    let gm = eval(&zm, &p);
                    for (i, r) in rows.iter().enumerate() {
                        let fd = (gp[i] - gm[i]) / (2.0 * h);
                        assert!((fd - r.d_generators[j][axis]).abs() < 1e-5, "row {i} gen {j}: {fd} vs {}", r.d_generators[j][axis]);
                    }
                }
            }
        }
    }

    #[test]
    fn json_shape() {
        let z = Zonotope2::new(Vec2::new(1.0, 2.0), vec![Vec2::new(0.5, 0.0), Vec2::new(0.1, 0.2)]).unwrap();
        let s = serde_json::to_string(&z).unwrap();
        assert_eq!(s, r#"{"c":[1.0,2.0],"G":[[0.5,0.1],[0.0,0.2]]}"#);
        let back: Zonotope2 = serde_json::from_str(&s).unwrap();
        assert_eq!(back, z);
        assert!(serde_json::from_str::<Zonotope2>(r#"{"c":[0,0],"G":[[1],[]]}"#).is_err());
    }
}
