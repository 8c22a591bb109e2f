//! Fully connected ReLU networks with hand-written reverse and forward mode.
//!
//! Parameters live in one flat vector per network: for each layer the
//! row-major `out × in` weight block followed by the bias.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
}

impl MlpSpec {
    pub fn new(widths: &[usize]) -> Self {
        assert!(widths.len() >= 2 && widths.iter().all(|&w| w > 0), "bad widths {widths:?}");
        Self { widths: widths.to_vec() }
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: Vec<f64>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of every hidden layer.
    pre: Vec<Vec<f64>>,
}

/// A value with `k` forward-mode tangents, tangents stored row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub value: Vec<f64>,
    pub tangents: Vec<Vec<f64>>,
}

impl Jet {
    pub fn constant(value: Vec<f64>, k: usize) -> Self {
        let n = value.len();
        Self { value, tangents: vec![vec![0.0; n]; k] }
    }

    pub fn num_tangents(&self) -> usize {
        self.tangents.len()
    }

    pub fn concat(parts: &[&Jet]) -> Jet {
        let k = parts[0].num_tangents();
        let mut value = Vec::new();
        let mut tangents = vec![Vec::new(); k];
        for p in parts {
            debug_assert_eq!(p.num_tangents(), k);
            value.extend_from_slice(&p.value);
            for (t, pt) in tangents.iter_mut().zip(&p.tangents) {
                t.extend_from_slice(pt);
            }
        }
        Jet { value, tangents }
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new(spec: MlpSpec, rng: &mut impl Rng) -> Self {
        let mut params = Vec::with_capacity(spec.num_params());
        for w in spec.widths.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let a = (6.0 / (n_in + n_out) as f64).sqrt();
            params.extend((0..n_in * n_out).map(|_| rng.gen_range(-a..a)));
            params.extend(std::iter::repeat(0.0).take(n_out));
        }
        Self { spec, params }
    }

    pub fn zeros(spec: MlpSpec) -> Self {
        let n = spec.num_params();
        Self { spec, params: vec![0.0; n] }
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    fn layer_offsets(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut off = 0;
        self.spec.widths.windows(2).map(move |w| {
            let o = off;
            off += w[0] * w[1] + w[1];
            (o, w[0], w[1])
        })
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch { expected: self.input_dim(), got: x.len() });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let n_layers = self.spec.num_layers();
        let mut h = x.to_vec();
        for (l, (off, n_in, n_out)) in self.layer_offsets().enumerate() {
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let mut y = b.to_vec();
            for (o, yo) in y.iter_mut().enumerate() {
                *yo += dot(&w[o * n_in..(o + 1) * n_in], &h);
            }
            if l + 1 < n_layers {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            h = y;
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        self.check_input(x)?;
        let n_layers = self.spec.num_layers();
        let mut cache = MlpCache { inputs: Vec::with_capacity(n_layers), pre: Vec::new() };
        let mut h = x.to_vec();
        for (l, (off, n_in, n_out)) in self.layer_offsets().enumerate() {
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let mut y = b.to_vec();
            for (o, yo) in y.iter_mut().enumerate() {
                *yo += dot(&w[o * n_in..(o + 1) * n_in], &h);
            }
            cache.inputs.push(h);
            if l + 1 < n_layers {
                cache.pre.push(y.clone());
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            h = y;
        }
        Ok((h, cache))
    }

    /// Accumulates parameter gradients into `grad` (same layout as
    /// `self.params`) and returns the gradient w.r.t. the input.
    pub fn backward(&self, cache: &MlpCache, dy: &[f64], grad: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(grad.len(), self.params.len());
        let layers: Vec<_> = self.layer_offsets().collect();
        let mut delta = dy.to_vec();
        for l in (0..layers.len()).rev() {
            let (off, n_in, n_out) = layers[l];
            if l + 1 < layers.len() {
                for (d, p) in delta.iter_mut().zip(&cache.pre[l]) {
                    if *p <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let input = &cache.inputs[l];
            let w = &self.params[off..off + n_in * n_out];
            let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            let mut dx = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = &w[o * n_in..(o + 1) * n_in];
                let grow = &mut gw[o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    grow[i] += d * input[i];
                    dx[i] += d * row[i];
                }
            }
            delta = dx;
        }
        delta
    }

    pub fn forward_jet(&self, x: &Jet) -> Result<Jet> {
        self.forward_jet_rows(x, None)
    }

    /// Forward mode; when `rows` is given only those outputs of the last
    /// layer are produced, in that order.
    pub fn forward_jet_rows(&self, x: &Jet, rows: Option<&[usize]>) -> Result<Jet> {
        self.check_input(&x.value)?;
        let n_layers = self.spec.num_layers();
        let k1 = x.num_tangents() + 1;
        // interleaved: entry i holds [value, tangent_1, .., tangent_k]
        let mut h: Vec<f64> = (0..x.value.len()).flat_map(|i| std::iter::once(x.value[i]).chain(x.tangents.iter().map(move |t| t[i]))).collect();
        let mut live: Vec<usize> = (0..x.value.len()).collect();
        let mut out_rows_all: Vec<usize> = Vec::new();
        for (l, (off, n_in, n_out)) in self.layer_offsets().enumerate() {
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let last = l + 1 == n_layers;
            let out_rows: &[usize] = match (last, rows) {
                (true, Some(r)) => r,
                _ => {
                    out_rows_all.clear();
                    out_rows_all.extend(0..n_out);
                    &out_rows_all
                }
            };
            let mut next = vec![0.0; out_rows.len() * k1];
            let mut next_live = Vec::with_capacity(out_rows.len());
            for (slot, &o) in out_rows.iter().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                let acc = &mut next[slot * k1..(slot + 1) * k1];
                for &i in &live {
                    let wi = row[i];
                    for (a, v) in acc.iter_mut().zip(&h[i * k1..(i + 1) * k1]) {
                        *a += wi * v;
                    }
                }
                acc[0] += b[o];
                if last || acc[0] > 0.0 {
                    next_live.push(slot);
                } else {
                    acc.iter_mut().for_each(|a| *a = 0.0);
                }
            }
            h = next;
            live = next_live;
        }
        let n = h.len() / k1;
        Ok(Jet {
            value: (0..n).map(|i| h[i * k1]).collect(),
            tangents: (1..k1).map(|j| (0..n).map(|i| h[i * k1 + j]).collect()).collect(),
        })
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
