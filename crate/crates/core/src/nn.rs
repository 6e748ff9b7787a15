//! Small feed-forward approximators with hand-written gradients, Adam, and
//! a versioned binary checkpoint format.
//!
//! Parameters live in one flat vector. For every layer the weight matrix
//! (row-major, `out × in`) is followed by its bias. Hidden layers use tanh,
//! the output layer is linear.

use std::io::{Read, Write};

use rand::Rng;

use crate::error::ModelError;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    /// `(input_dim, hidden_dims..., output_dim)`.
    pub layout: Vec<usize>,
    pub weights: Vec<f64>,
}

pub fn param_count(layout: &[usize]) -> usize {
    layout.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl PolicyParams {
    pub fn zeros(layout: Vec<usize>) -> Self {
        let n = param_count(&layout);
        Self { layout, weights: vec![0.0; n] }
    }

    /// Uniform fan-in initialisation; the output layer is scaled by `out_scale`.
    pub fn init<R: Rng + ?Sized>(layout: Vec<usize>, rng: &mut R, out_scale: f64) -> Self {
        let mut p = Self::zeros(layout);
        let layers = p.layout.len() - 1;
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (p.layout[l], p.layout[l + 1]);
            let bound = (1.0 / n_in as f64).sqrt() * if l + 1 == layers { out_scale } else { 1.0 };
            for w in &mut p.weights[off..off + n_in * n_out] {
                *w = bound * (2.0 * rng.gen::<f64>() - 1.0);
            }
            off += n_in * n_out + n_out;
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.layout[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layout.last().expect("layout has at least two entries")
    }

    pub fn same_layout(&self, other: &PolicyParams) -> Result<(), ModelError> {
        if self.layout == other.layout && self.weights.len() == other.weights.len() {
            Ok(())
        } else {
            Err(ModelError::LayoutMismatch {
                expected: self.layout.clone(),
                actual: other.layout.clone(),
            })
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).output().to_vec()
    }

    /// Forward pass keeping every layer's activation for backprop.
    pub fn forward_cached(&self, x: &[f64]) -> Cache {
        debug_assert_eq!(x.len(), self.input_dim());
        let layers = self.layout.len() - 1;
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(x.to_vec());
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.layout[l], self.layout[l + 1]);
            let w = &self.weights[off..off + n_in * n_out];
            let b = &self.weights[off + n_in * n_out..off + n_in * n_out + n_out];
            let input = &acts[l];
            let mut out = Vec::with_capacity(n_out);
            for j in 0..n_out {
                let row = &w[j * n_in..(j + 1) * n_in];
                let mut s = b[j];
                for (wi, xi) in row.iter().zip(input) {
                    s += wi * xi;
                }
                out.push(if l + 1 == layers { s } else { s.tanh() });
            }
            acts.push(out);
            off += n_in * n_out + n_out;
        }
        Cache { acts }
    }

    /// Backpropagates `grad_out` (dLoss/dOutput). Parameter gradients are
    /// accumulated into `grad_params`; the input gradient is returned.
    pub fn backward(&self, cache: &Cache, grad_out: &[f64], grad_params: Option<&mut [f64]>) -> Vec<f64> {
        let layers = self.layout.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for l in 0..layers {
            offsets.push(off);
            off += self.layout[l] * self.layout[l + 1] + self.layout[l + 1];
        }
        let mut grad_params = grad_params;
        let mut delta = grad_out.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.layout[l], self.layout[l + 1]);
            if l + 1 != layers {
                // Through tanh: d/dz tanh(z) = 1 - a².
                for (d, a) in delta.iter_mut().zip(&cache.acts[l + 1]) {
                    *d *= 1.0 - a * a;
                }
            }
            let off = offsets[l];
            let input = &cache.acts[l];
            if let Some(g) = grad_params.as_deref_mut() {
                for j in 0..n_out {
                    let dj = delta[j];
                    if dj != 0.0 {
                        let row = &mut g[off + j * n_in..off + (j + 1) * n_in];
                        for (gi, xi) in row.iter_mut().zip(input) {
                            *gi += dj * xi;
                        }
                    }
                    g[off + n_in * n_out + j] += dj;
                }
            }
            let w = &self.weights[off..off + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for j in 0..n_out {
                let dj = delta[j];
                if dj != 0.0 {
                    for (p, wi) in prev.iter_mut().zip(&w[j * n_in..(j + 1) * n_in]) {
                        *p += dj * wi;
                    }
                }
            }
            delta = prev;
        }
        delta
    }
}

/// Activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    acts: Vec<Vec<f64>>,
}

impl Cache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache holds the output layer")
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest entry; lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Adam optimiser over one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(len: usize, lr: f64) -> Self {
        Self { lr, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    /// Descends along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t as i32);
        let c2 = 1.0 - Self::BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Scales `grad` down so its Euclidean norm is at most `max_norm`.
pub fn clip_norm(grad: &mut [f64], max_norm: f64) {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
}

const MAGIC: &[u8; 4] = b"SDTP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Writes named parameter sets: magic, version, entry count, then for each
/// entry its name, layout header and little-endian f64 weights.
pub fn write_checkpoint<W: Write>(mut out: W, entries: &[(&str, &PolicyParams)]) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, p) in entries {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(p.layout.len() as u32).to_le_bytes())?;
        for d in &p.layout {
            out.write_all(&(*d as u32).to_le_bytes())?;
        }
        out.write_all(&(p.weights.len() as u64).to_le_bytes())?;
        for w in &p.weights {
            out.write_all(&w.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn invalid(msg: impl Into<String>) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, msg.into())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> std::io::Result<Vec<(String, PolicyParams)>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(invalid("not a checkpoint file"));
    }
    let version = read_u32(&mut input)?;
    if version != CHECKPOINT_VERSION {
        return Err(invalid(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u32(&mut input)?;
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = read_u32(&mut input)? as usize;
        let mut name = vec![0u8; name_len];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| invalid("entry name is not UTF-8"))?;
        let dims = read_u32(&mut input)? as usize;
        let layout = (0..dims)
            .map(|_| read_u32(&mut input).map(|d| d as usize))
            .collect::<std::io::Result<Vec<_>>>()?;
        let mut len = [0u8; 8];
        input.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        if layout.len() < 2 || param_count(&layout) != len {
            return Err(invalid(format!("entry `{name}`: layout {layout:?} does not match {len} weights")));
        }
        let mut weights = Vec::with_capacity(len);
        let mut b = [0u8; 8];
        for _ in 0..len {
            input.read_exact(&mut b)?;
            weights.push(f64::from_le_bytes(b));
        }
        entries.push((name, PolicyParams { layout, weights }));
    }
    Ok(entries)
}
