//! Minimal f64 network substrate: a flat parameter store, a handful of layers
//! with hand-written backward passes, Adam, and the model artifact container.
//!
//! Activations are time-major `[T × C]` row-major slices.

mod artifact;
mod layers;

pub use artifact::{
    decode_artifact, encode_artifact, read_artifact, write_artifact, Artifact, LayerDesc,
    ARTIFACT_MAGIC, ARTIFACT_VERSION,
};
pub(crate) use artifact::layer_list;
pub use layers::{relu_backward, relu_inplace, Conv1d, Linear, Lstm, LstmTrace, MaxPool2};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// Whether the L2 penalty applies (weights yes, biases no).
    pub decay: bool,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// All trainable parameters of one model in a single flat vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    specs: Vec<ParamSpec>,
    offsets: Vec<usize>,
    values: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a zero-initialized tensor and returns its offset.
    pub fn add(&mut self, name: &str, shape: &[usize], decay: bool) -> usize {
        let spec = ParamSpec { name: name.to_string(), shape: shape.to_vec(), decay };
        let offset = self.values.len();
        self.values.resize(offset + spec.numel(), 0.0);
        self.specs.push(spec);
        self.offsets.push(offset);
        offset
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Values of the `i`-th registered tensor.
    pub fn tensor(&self, i: usize) -> &[f64] {
        let start = self.offsets[i];
        &self.values[start..start + self.specs[i].numel()]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut [f64] {
        let start = self.offsets[i];
        let n = self.specs[i].numel();
        &mut self.values[start..start + n]
    }

    /// Flattened values of every decayed tensor.
    pub fn decayed_weights(&self) -> Vec<f64> {
        (0..self.specs.len())
            .filter(|&i| self.specs[i].decay)
            .flat_map(|i| self.tensor(i).iter().copied())
            .collect()
    }

    /// Adds `coeff * w` to the gradient of every decayed tensor.
    pub fn add_decay_grad(&self, grad: &mut [f64], coeff: f64) {
        for (i, spec) in self.specs.iter().enumerate() {
            if spec.decay {
                let start = self.offsets[i];
                for k in start..start + spec.numel() {
                    grad[k] += coeff * self.values[k];
                }
            }
        }
    }

    /// Rounds every value to the nearest f32.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.values {
            *v = *v as f32 as f64;
        }
    }

    /// FNV-1a over the bit patterns of all values.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.values {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

/// Adam with the usual bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Order-preserving map over `0..n`, parallel when the feature is enabled.
pub(crate) fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

const GRAD_CHUNK: usize = 8;

/// Sums per-item gradients. Items are grouped into fixed-size chunks and the
/// chunk sums are added in order, so the result does not depend on the number
/// of worker threads.
pub(crate) fn accumulate_grad<F>(n: usize, len: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    let chunks = n.div_ceil(GRAD_CHUNK);
    let partial = par_map(chunks, |c| {
        let mut g = vec![0.0; len];
        for i in c * GRAD_CHUNK..((c + 1) * GRAD_CHUNK).min(n) {
            f(i, &mut g);
        }
        g
    });
    let mut total = vec![0.0; len];
    for g in partial {
        for (t, v) in total.iter_mut().zip(g) {
            *t += v;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn store_layout() {
        let mut s = ParamStore::new();
        let a = s.add("a.weight", &[2, 3], true);
        let b = s.add("a.bias", &[2], false);
        assert_eq!((a, b, s.len()), (0, 6, 8));
        s.values_mut().iter_mut().enumerate().for_each(|(i, v)| *v = i as f64);
        assert_eq!(s.tensor(1), &[6.0, 7.0]);
        assert_eq!(s.decayed_weights().len(), 6);
        let mut g = vec![0.0; 8];
        s.add_decay_grad(&mut g, 0.5);
        assert_eq!(g[5], 2.5);
        assert_eq!(g[7], 0.0);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.05);
        for _ in 0..2000 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            opt.step(&mut p, &g);
        }
        assert!(p.iter().all(|x| x.abs() < 1e-3));
    }

    #[test]
    fn accumulation_is_ordered_sum() {
        let g = accumulate_grad(21, 2, |i, g| {
            g[0] += i as f64;
            g[1] += 1.0;
        });
        assert_eq!(g, vec![210.0, 21.0]);
    }
}
