//! The two conditional VAEs: the pedestrian prediction network (PPN) and the
//! ego-safe network (ESN). Both emit a 7-step zonotope sequence.
//!
//! Coordinates are translations of the world frame that put the ego's
//! current position at the origin. PPN outputs are produced relative to the
//! pedestrian's current position and shifted back.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::zono::Vec2;

use super::mlp::{Jet, Mlp, MlpCache, MlpSpec};
use super::zseq::{OUT_DIM, STEPS, STEP_DIM};

pub const HIST_DIM: usize = 16;

/// Layer widths of every sub-network, inputs and outputs included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpnArch {
    pub e_ped: Vec<usize>,
    pub e_end: Vec<usize>,
    pub e_nxt: Vec<usize>,
    pub e_latent: Vec<usize>,
    pub d_latent: Vec<usize>,
    pub p_future: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsnArch {
    pub e_goal: Vec<usize>,
    pub e_future: Vec<usize>,
    pub e_nxt: Vec<usize>,
    pub e_traj: Vec<usize>,
    pub e_latent: Vec<usize>,
    pub d_latent: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SznArch {
    pub latent: usize,
    pub ppn: PpnArch,
    pub esn: EsnArch,
}

impl Default for SznArch {
    fn default() -> Self {
        Self {
            latent: 16,
            ppn: PpnArch {
                e_ped: vec![16, 32, 16],
                e_end: vec![2, 8, 16],
                e_nxt: vec![2, 32, 16],
                e_latent: vec![48, 8, 16, 32],
                d_latent: vec![48, 32, 16, 32, 2],
                p_future: vec![50, 32, 16, 32, 70],
            },
            esn: EsnArch {
                e_goal: vec![2, 8, 16, 2],
                e_future: vec![16, 64, 32, 16],
                e_nxt: vec![2, 64, 32, 2],
                e_traj: vec![16, 64, 32, 16],
                e_latent: vec![36, 8, 50, 32],
                d_latent: vec![36, 128, 64, 128, 70],
            },
        }
    }
}

impl SznArch {
    /// Small network with the same interfaces, for tests and quick runs.
    pub fn tiny(latent: usize, hidden: usize) -> Self {
        let h = hidden;
        let (f, e, n) = (4, 3, 3);
        let (eg, ef, en, et) = (2, 4, 2, 4);
        let cond_p = f + n;
        let cond_e = eg + ef + en;
        Self {
            latent,
            ppn: PpnArch {
                e_ped: vec![16, h, f],
                e_end: vec![2, h, e],
                e_nxt: vec![2, h, n],
                e_latent: vec![cond_p + e, h, 2 * latent],
                d_latent: vec![latent + cond_p, h, 2],
                p_future: vec![e + cond_p + 2, h, 70],
            },
            esn: EsnArch {
                e_goal: vec![2, h, eg],
                e_future: vec![16, h, ef],
                e_nxt: vec![2, h, en],
                e_traj: vec![16, h, et],
                e_latent: vec![cond_e + et, h, 2 * latent],
                d_latent: vec![latent + cond_e, h, 70],
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let first = |w: &Vec<usize>| w.first().copied().unwrap_or(0);
        let last = |w: &Vec<usize>| w.last().copied().unwrap_or(0);
        let all: [&Vec<usize>; 12] = [
            &self.ppn.e_ped,
            &self.ppn.e_end,
            &self.ppn.e_nxt,
            &self.ppn.e_latent,
            &self.ppn.d_latent,
            &self.ppn.p_future,
            &self.esn.e_goal,
            &self.esn.e_future,
            &self.esn.e_nxt,
            &self.esn.e_traj,
            &self.esn.e_latent,
            &self.esn.d_latent,
        ];
        if all.iter().any(|w| w.len() < 2 || w.contains(&0)) || self.latent == 0 {
            return Err(Error::Config("every sub-network needs at least two non-zero widths".into()));
        }
        let p = &self.ppn;
        let cond_p = last(&p.e_ped) + last(&p.e_nxt);
        let e = &self.esn;
        let cond_e = last(&e.e_goal) + last(&e.e_future) + last(&e.e_nxt);
        let checks = [
            ("ppn.e_ped input", first(&p.e_ped), HIST_DIM),
            ("ppn.e_end input", first(&p.e_end), 2),
            ("ppn.e_nxt input", first(&p.e_nxt), 2),
            ("ppn.e_latent input", first(&p.e_latent), cond_p + last(&p.e_end)),
            ("ppn.e_latent output", last(&p.e_latent), 2 * self.latent),
            ("ppn.d_latent input", first(&p.d_latent), self.latent + cond_p),
            ("ppn.d_latent output", last(&p.d_latent), 2),
            ("ppn.p_future input", first(&p.p_future), last(&p.e_end) + cond_p + 2),
            ("ppn.p_future output", last(&p.p_future), OUT_DIM),
            ("esn.e_goal input", first(&e.e_goal), 2),
            ("esn.e_future input", first(&e.e_future), HIST_DIM),
            ("esn.e_nxt input", first(&e.e_nxt), 2),
            ("esn.e_traj input", first(&e.e_traj), HIST_DIM),
            ("esn.e_latent input", first(&e.e_latent), cond_e + last(&e.e_traj)),
            ("esn.e_latent output", last(&e.e_latent), 2 * self.latent),
            ("esn.d_latent input", first(&e.d_latent), self.latent + cond_e),
            ("esn.d_latent output", last(&e.d_latent), OUT_DIM),
        ];
        for (name, got, expected) in checks {
            if got != expected {
                return Err(Error::Config(format!("{name}: width {got}, expected {expected}")));
            }
        }
        Ok(())
    }
}

/// Splits a flat buffer into consecutive mutable pieces.
pub(crate) fn split_sizes<'a>(mut g: &'a mut [f64], sizes: &[usize]) -> Vec<&'a mut [f64]> {
    let mut out = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let (a, b) = g.split_at_mut(n);
        out.push(a);
        g = b;
    }
    out
}

fn cat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

fn reparam(mu_ls: &[f64], eps: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let l = eps.len();
    let mu = mu_ls[..l].to_vec();
    let ls = mu_ls[l..].to_vec();
    let z = (0..l).map(|i| mu[i] + ls[i].exp() * eps[i]).collect();
    (mu, ls, z)
}

fn add_anchor(out: &mut [f64], anchor: Vec2) {
    for i in 0..STEPS {
        out[i * STEP_DIM] += anchor.x;
        out[i * STEP_DIM + 1] += anchor.y;
    }
}

/// Variational-head outputs of a training pass.
#[derive(Debug, Clone)]
pub struct LatentStats {
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ppn {
    pub e_ped: Mlp,
    pub e_end: Mlp,
    pub e_nxt: Mlp,
    pub e_latent: Mlp,
    pub d_latent: Mlp,
    pub p_future: Mlp,
}

/// Training-pass trace of the PPN.
pub struct PpnTrace {
    /// Zonotope sequence with centers in the ego-origin frame.
    pub out: Vec<f64>,
    /// Predicted endpoint relative to the pedestrian's current position.
    pub endpoint: Vec2,
    pub stats: LatentStats,
    eps: Vec<f64>,
    widths: [usize; 2],
    c_ped: MlpCache,
    c_nxt: MlpCache,
    c_end_gt: MlpCache,
    c_lat: MlpCache,
    c_dec: MlpCache,
    c_end_pred: MlpCache,
    c_fut: MlpCache,
}

impl Ppn {
    fn new(a: &PpnArch, rng: &mut impl Rng) -> Self {
        Self {
            e_ped: Mlp::new(MlpSpec::new(&a.e_ped), rng),
            e_end: Mlp::new(MlpSpec::new(&a.e_end), rng),
            e_nxt: Mlp::new(MlpSpec::new(&a.e_nxt), rng),
            e_latent: Mlp::new(MlpSpec::new(&a.e_latent), rng),
            d_latent: Mlp::new(MlpSpec::new(&a.d_latent), rng),
            p_future: Mlp::new(MlpSpec::new(&a.p_future), rng),
        }
    }

    fn mlps(&self) -> [&Mlp; 6] {
        [&self.e_ped, &self.e_end, &self.e_nxt, &self.e_latent, &self.d_latent, &self.p_future]
    }

    fn mlps_mut(&mut self) -> [&mut Mlp; 6] {
        [&mut self.e_ped, &mut self.e_end, &mut self.e_nxt, &mut self.e_latent, &mut self.d_latent, &mut self.p_future]
    }

    pub fn latent_dim(&self) -> usize {
        self.d_latent.input_dim() - self.e_ped.output_dim() - self.e_nxt.output_dim()
    }

    /// `hist`: the pedestrian's last 8 positions (ego-origin frame),
    /// `ego_next`: the ego's next position. Returns the zonotope sequence
    /// (ego-origin frame) and the endpoint relative to the anchor.
    pub fn forward(&self, hist: &[f64], ego_next: Vec2, z: &[f64]) -> Result<(Vec<f64>, Vec2)> {
        let f_ped = self.e_ped.forward(hist)?;
        let f_nxt = self.e_nxt.forward(&[ego_next.x, ego_next.y])?;
        let end = self.d_latent.forward(&cat(&[z, &f_ped, &f_nxt]))?;
        let f_end = self.e_end.forward(&end)?;
        let mut out = self.p_future.forward(&cat(&[&f_end, &f_ped, &f_nxt, &end]))?;
        add_anchor(&mut out, Vec2::new(hist[HIST_DIM - 2], hist[HIST_DIM - 1]));
        Ok((out, Vec2::new(end[0], end[1])))
    }

    /// Forward mode through the inference path. Returns the zonotope
    /// sequence and the absolute endpoint, both in the ego-origin frame.
    pub fn forward_jet(&self, hist: &Jet, ego_next: &Jet, z: &[f64]) -> Result<(Jet, Jet)> {
        let k = hist.num_tangents();
        let f_ped = self.e_ped.forward_jet(hist)?;
        let f_nxt = self.e_nxt.forward_jet(ego_next)?;
        let zj = Jet::constant(z.to_vec(), k);
        let end = self.d_latent.forward_jet(&Jet::concat(&[&zj, &f_ped, &f_nxt]))?;
        let f_end = self.e_end.forward_jet(&end)?;
        let mut out = self.p_future.forward_jet(&Jet::concat(&[&f_end, &f_ped, &f_nxt, &end]))?;
        add_anchor(&mut out.value, Vec2::new(hist.value[HIST_DIM - 2], hist.value[HIST_DIM - 1]));
        for (t, ht) in out.tangents.iter_mut().zip(&hist.tangents) {
            add_anchor(t, Vec2::new(ht[HIST_DIM - 2], ht[HIST_DIM - 1]));
        }
        let mut end_abs = end;
        end_abs.value[0] += hist.value[HIST_DIM - 2];
        end_abs.value[1] += hist.value[HIST_DIM - 1];
        for (t, ht) in end_abs.tangents.iter_mut().zip(&hist.tangents) {
            t[0] += ht[HIST_DIM - 2];
            t[1] += ht[HIST_DIM - 1];
        }
        Ok((out, end_abs))
    }

    /// Training pass; `gt_end` is the true endpoint relative to the anchor.
    pub fn train_forward(&self, hist: &[f64], ego_next: Vec2, gt_end: Vec2, eps: &[f64]) -> Result<PpnTrace> {
        let (f_ped, c_ped) = self.e_ped.forward_cached(hist)?;
        let (f_nxt, c_nxt) = self.e_nxt.forward_cached(&[ego_next.x, ego_next.y])?;
        let (f_end_gt, c_end_gt) = self.e_end.forward_cached(&[gt_end.x, gt_end.y])?;
        let (mu_ls, c_lat) = self.e_latent.forward_cached(&cat(&[&f_ped, &f_nxt, &f_end_gt]))?;
        let (mu, log_sigma, z) = reparam(&mu_ls, eps);
        let (end, c_dec) = self.d_latent.forward_cached(&cat(&[&z, &f_ped, &f_nxt]))?;
        let (f_end, c_end_pred) = self.e_end.forward_cached(&end)?;
        let (mut out, c_fut) = self.p_future.forward_cached(&cat(&[&f_end, &f_ped, &f_nxt, &end]))?;
        add_anchor(&mut out, Vec2::new(hist[HIST_DIM - 2], hist[HIST_DIM - 1]));
        Ok(PpnTrace {
            out,
            endpoint: Vec2::new(end[0], end[1]),
            stats: LatentStats { mu, log_sigma },
            eps: eps.to_vec(),
            widths: [f_ped.len(), f_nxt.len()],
            c_ped,
            c_nxt,
            c_end_gt,
            c_lat,
            c_dec,
            c_end_pred,
            c_fut,
        })
    }

    /// Accumulates parameter gradients into `grad` (laid out like
    /// [`SznModel::flat_params`] restricted to this network).
    pub fn backward(&self, t: &PpnTrace, d_out: &[f64], d_end: Vec2, d_mu: &[f64], d_ls: &[f64], grad: &mut [f64]) {
        let sizes: Vec<usize> = self.mlps().iter().map(|m| m.params.len()).collect();
        let mut g = split_sizes(grad, &sizes);
        let [fp, fn_] = t.widths;
        let fe = self.e_end.output_dim();

        let dx = self.p_future.backward(&t.c_fut, d_out, g[5]);
        let mut d_fped: Vec<f64> = dx[fe..fe + fp].to_vec();
        let mut d_fnxt: Vec<f64> = dx[fe + fp..fe + fp + fn_].to_vec();
        let mut d_endp = [dx[fe + fp + fn_] + d_end.x, dx[fe + fp + fn_ + 1] + d_end.y];
        let de = self.e_end.backward(&t.c_end_pred, &dx[..fe], g[1]);
        d_endp[0] += de[0];
        d_endp[1] += de[1];

        let l = t.eps.len();
        let dx = self.d_latent.backward(&t.c_dec, &d_endp, g[4]);
        let mut d_mu_ls = vec![0.0; 2 * l];
        for i in 0..l {
            d_mu_ls[i] = dx[i] + d_mu[i];
            d_mu_ls[l + i] = dx[i] * t.stats.log_sigma[i].exp() * t.eps[i] + d_ls[i];
        }
        for i in 0..fp {
            d_fped[i] += dx[l + i];
        }
        for i in 0..fn_ {
            d_fnxt[i] += dx[l + fp + i];
        }

        let dx = self.e_latent.backward(&t.c_lat, &d_mu_ls, g[3]);
        for i in 0..fp {
            d_fped[i] += dx[i];
        }
        for i in 0..fn_ {
            d_fnxt[i] += dx[fp + i];
        }
        self.e_end.backward(&t.c_end_gt, &dx[fp + fn_..], g[1]);
        self.e_ped.backward(&t.c_ped, &d_fped, g[0]);
        self.e_nxt.backward(&t.c_nxt, &d_fnxt, g[2]);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Esn {
    pub e_goal: Mlp,
    pub e_future: Mlp,
    pub e_nxt: Mlp,
    pub e_traj: Mlp,
    pub e_latent: Mlp,
    pub d_latent: Mlp,
}

pub struct EsnTrace {
    pub out: Vec<f64>,
    pub stats: LatentStats,
    eps: Vec<f64>,
    widths: [usize; 3],
    c_goal: MlpCache,
    c_fut: MlpCache,
    c_nxt: MlpCache,
    c_traj: MlpCache,
    c_lat: MlpCache,
    c_dec: MlpCache,
}

impl Esn {
    fn new(a: &EsnArch, rng: &mut impl Rng) -> Self {
        Self {
            e_goal: Mlp::new(MlpSpec::new(&a.e_goal), rng),
            e_future: Mlp::new(MlpSpec::new(&a.e_future), rng),
            e_nxt: Mlp::new(MlpSpec::new(&a.e_nxt), rng),
            e_traj: Mlp::new(MlpSpec::new(&a.e_traj), rng),
            e_latent: Mlp::new(MlpSpec::new(&a.e_latent), rng),
            d_latent: Mlp::new(MlpSpec::new(&a.d_latent), rng),
        }
    }

    fn mlps(&self) -> [&Mlp; 6] {
        [&self.e_goal, &self.e_future, &self.e_nxt, &self.e_traj, &self.e_latent, &self.d_latent]
    }

    fn mlps_mut(&mut self) -> [&mut Mlp; 6] {
        [&mut self.e_goal, &mut self.e_future, &mut self.e_nxt, &mut self.e_traj, &mut self.e_latent, &mut self.d_latent]
    }

    fn cond(&self, ped_sum: &[f64], goal: Vec2, ego_next: Vec2) -> Result<Vec<f64>> {
        let a = self.e_future.forward(ped_sum)?;
        let b = self.e_goal.forward(&[goal.x, goal.y])?;
        let c = self.e_nxt.forward(&[ego_next.x, ego_next.y])?;
        Ok(cat(&[&a, &b, &c]))
    }

    /// Ego zonotope sequence in the ego-origin frame.
    pub fn forward(&self, ped_sum: &[f64], goal: Vec2, ego_next: Vec2, z: &[f64]) -> Result<Vec<f64>> {
        let cond = self.cond(ped_sum, goal, ego_next)?;
        self.d_latent.forward(&cat(&[z, &cond]))
    }

    /// Forward mode; `rows` restricts which of the 70 outputs are produced.
    pub fn forward_jet(&self, ped_sum: &Jet, goal: &Jet, ego_next: &Jet, z: &[f64], rows: Option<&[usize]>) -> Result<Jet> {
        let a = self.e_future.forward_jet(ped_sum)?;
        let b = self.e_goal.forward_jet(goal)?;
        let c = self.e_nxt.forward_jet(ego_next)?;
        let zj = Jet::constant(z.to_vec(), ped_sum.num_tangents());
        self.d_latent.forward_jet_rows(&Jet::concat(&[&zj, &a, &b, &c]), rows)
    }

    /// Training pass; `gt_traj` holds the ego's 8 future positions.
    pub fn train_forward(&self, ped_sum: &[f64], goal: Vec2, ego_next: Vec2, gt_traj: &[f64], eps: &[f64]) -> Result<EsnTrace> {
        let (a, c_fut) = self.e_future.forward_cached(ped_sum)?;
        let (b, c_goal) = self.e_goal.forward_cached(&[goal.x, goal.y])?;
        let (c, c_nxt) = self.e_nxt.forward_cached(&[ego_next.x, ego_next.y])?;
        let (t, c_traj) = self.e_traj.forward_cached(gt_traj)?;
        let (mu_ls, c_lat) = self.e_latent.forward_cached(&cat(&[&a, &b, &c, &t]))?;
        let (mu, log_sigma, z) = reparam(&mu_ls, eps);
        let (out, c_dec) = self.d_latent.forward_cached(&cat(&[&z, &a, &b, &c]))?;
        Ok(EsnTrace {
            out,
            stats: LatentStats { mu, log_sigma },
            eps: eps.to_vec(),
            widths: [a.len(), b.len(), c.len()],
            c_goal,
            c_fut,
            c_nxt,
            c_traj,
            c_lat,
            c_dec,
        })
    }

    pub fn backward(&self, t: &EsnTrace, d_out: &[f64], d_mu: &[f64], d_ls: &[f64], grad: &mut [f64]) {
        let sizes: Vec<usize> = self.mlps().iter().map(|m| m.params.len()).collect();
        let mut g = split_sizes(grad, &sizes);
        let l = t.eps.len();
        let [wa, wb, wc] = t.widths;
        let n_cond = wa + wb + wc;

        let dx = self.d_latent.backward(&t.c_dec, d_out, g[5]);
        let mut d_cond: Vec<f64> = dx[l..l + n_cond].to_vec();
        let mut d_mu_ls = vec![0.0; 2 * l];
        for i in 0..l {
            d_mu_ls[i] = dx[i] + d_mu[i];
            d_mu_ls[l + i] = dx[i] * t.stats.log_sigma[i].exp() * t.eps[i] + d_ls[i];
        }
        let dx = self.e_latent.backward(&t.c_lat, &d_mu_ls, g[4]);
        for i in 0..n_cond {
            d_cond[i] += dx[i];
        }
        self.e_traj.backward(&t.c_traj, &dx[n_cond..], g[3]);
        self.e_future.backward(&t.c_fut, &d_cond[..wa], g[1]);
        self.e_goal.backward(&t.c_goal, &d_cond[wa..wa + wb], g[0]);
        self.e_nxt.backward(&t.c_nxt, &d_cond[wa + wb..], g[2]);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SznModel {
    pub arch: SznArch,
    pub ppn: Ppn,
    pub esn: Esn,
}

impl SznModel {
    pub fn new(arch: SznArch, rng: &mut impl Rng) -> Result<Self> {
        arch.validate()?;
        let ppn = Ppn::new(&arch.ppn, rng);
        let esn = Esn::new(&arch.esn, rng);
        Ok(Self { arch, ppn, esn })
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent
    }

    pub fn ppn_num_params(&self) -> usize {
        self.ppn.mlps().iter().map(|m| m.params.len()).sum()
    }

    pub fn num_params(&self) -> usize {
        self.ppn_num_params() + self.esn.mlps().iter().map(|m| m.params.len()).sum::<usize>()
    }

    /// All parameters, PPN first, each sub-network in declaration order.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for m in self.ppn.mlps().into_iter().chain(self.esn.mlps()) {
            out.extend_from_slice(&m.params);
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::ShapeMismatch { expected: self.num_params(), got: flat.len() });
        }
        let mut at = 0;
        for m in self.ppn.mlps_mut().into_iter().chain(self.esn.mlps_mut()) {
            let n = m.params.len();
            m.params.copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.ppn.mlps().into_iter().chain(self.esn.mlps()).map(|m| m.spec.widths.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_arch_is_consistent() {
        SznArch::default().validate().unwrap();
        SznArch::tiny(2, 5).validate().unwrap();
        let mut a = SznArch::default();
        a.esn.d_latent[0] = 35;
        assert!(matches!(a.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn flat_params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = SznModel::new(SznArch::tiny(2, 4), &mut rng).unwrap();
        let p = m.flat_params();
        let q: Vec<f64> = p.iter().map(|x| x + 1.0).collect();
        m.set_flat_params(&q).unwrap();
        assert_eq!(m.flat_params(), q);
        assert!(m.set_flat_params(&p[1..]).is_err());
    }

    #[test]
    fn zero_eps_train_pass_matches_inference_at_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = SznModel::new(SznArch::tiny(3, 6), &mut rng).unwrap();
        let hist: Vec<f64> = (0..16).map(|i| 0.1 * i as f64).collect();
        let t = m.ppn.train_forward(&hist, Vec2::new(0.2, 0.0), Vec2::new(1.0, 0.3), &[0.0; 3]).unwrap();
        let (out, end) = m.ppn.forward(&hist, Vec2::new(0.2, 0.0), &t.stats.mu).unwrap();
        assert_eq!(out, t.out);
        assert_eq!(end, t.endpoint);
    }

    #[test]
    fn jets_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = SznModel::new(SznArch::tiny(2, 8), &mut rng).unwrap();
        let hist: Vec<f64> = (0..16).map(|i| 0.05 * i as f64 - 0.3).collect();
        let z = [0.1, -0.2];
        // one tangent: the ego-next x coordinate
        let hj = Jet::constant(hist.clone(), 1);
        let nj = Jet { value: vec![0.2, 0.05], tangents: vec![vec![1.0, 0.0]] };
        let (jet, _) = m.ppn.forward_jet(&hj, &nj, &z).unwrap();
        let h = 1e-6;
        let (op, _) = m.ppn.forward(&hist, Vec2::new(0.2 + h, 0.05), &z).unwrap();
        let (om, _) = m.ppn.forward(&hist, Vec2::new(0.2 - h, 0.05), &z).unwrap();
        for i in 0..OUT_DIM {
            let fd = (op[i] - om[i]) / (2.0 * h);
            assert!((fd - jet.tangents[0][i]).abs() < 1e-6);
        }
        let ps = vec![0.3; 16];
        let gj = Jet { value: vec![1.0, 2.0], tangents: vec![vec![0.0, 1.0]] };
        let rows = [0usize, 1, 12];
        let jet = m.esn.forward_jet(&Jet::constant(ps.clone(), 1), &gj, &Jet::constant(vec![0.1, 0.0], 1), &z, Some(&rows)).unwrap();
        let op = m.esn.forward(&ps, Vec2::new(1.0, 2.0 + h), Vec2::new(0.1, 0.0), &z).unwrap();
        let om = m.esn.forward(&ps, Vec2::new(1.0, 2.0 - h), Vec2::new(0.1, 0.0), &z).unwrap();
        for (k, &r) in rows.iter().enumerate() {
            let fd = (op[r] - om[r]) / (2.0 * h);
            assert!((fd - jet.tangents[0][k]).abs() < 1e-6);
        }
    }
}
