//! Small fully connected network mapping interpolated embeddings and a view
//! direction to density and color, with a hand-written backward pass.
//!
//! Hidden layers use ReLU. The four raw outputs are activated as
//! `sigma = softplus(o0)` and `color = sigmoid(o1..=o3)`.

use std::io::{Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Error, Result};
use crate::hash_grid::read_exact_at;

pub const MLP_MAGIC: [u8; 4] = *b"MLP0";
pub const MLP_VERSION: u32 = 1;

pub const HIDDEN_WIDTH: usize = 64;
pub const OUTPUTS: usize = 4;
pub const DIRECTION_FREQUENCIES: usize = 4;
/// Raw direction plus a sin/cos pair per axis per frequency.
pub const DIRECTION_ENCODING_DIM: usize = 3 + 3 * 2 * DIRECTION_FREQUENCIES;

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn next_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// `[d, sin(2^k pi d), cos(2^k pi d)]` for k in 0..4.
pub fn encode_direction(d: [f64; 3], out: &mut [f64]) {
    debug_assert_eq!(out.len(), DIRECTION_ENCODING_DIM);
    out[..3].copy_from_slice(&d);
    let mut i = 3;
    for k in 0..DIRECTION_FREQUENCIES {
        let f = std::f64::consts::PI * f64::from(1u32 << k);
        for &c in &d {
            out[i] = (f * c).sin();
            out[i + 1] = (f * c).cos();
            i += 2;
        }
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs x inputs`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    #[inline]
    fn forward_row(&self, x: &[f64], z: &mut [f64]) {
        for (j, zj) in z.iter_mut().enumerate() {
            let w = &self.weights[j * self.inputs..(j + 1) * self.inputs];
            let mut acc = self.bias[j];
            for (a, b) in w.iter().zip(x) {
                acc += a * b;
            }
            *zj = acc;
        }
    }
}

/// Parameter gradients, shaped like [`MlpParams::layers`].
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<Layer>,
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self { layers: params.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect() }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

#[derive(Clone, Debug)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
    embedding_dim: usize,
    version: u64,
}

impl PartialEq for MlpParams {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.embedding_dim == other.embedding_dim
    }
}

/// Activations kept from a forward pass over a batch of rows.
#[derive(Clone, Debug)]
pub struct MlpCache {
    version: u64,
    rows: usize,
    /// Input of each layer, `rows x layer.inputs`.
    inputs: Vec<Vec<f64>>,
    /// Raw network outputs, `rows x 4`.
    raw: Vec<f64>,
}

impl MlpCache {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn sigma(&self, row: usize) -> f64 {
        softplus(self.raw[row * OUTPUTS])
    }

    pub fn color(&self, row: usize) -> [f64; 3] {
        let o = &self.raw[row * OUTPUTS + 1..row * OUTPUTS + 4];
        [sigmoid(o[0]), sigmoid(o[1]), sigmoid(o[2])]
    }
}

/// Single-sample forward result.
#[derive(Clone, Debug)]
pub struct MlpEvaluation {
    pub sigma: f64,
    pub color: [f64; 3],
    pub cache: MlpCache,
}

impl MlpParams {
    /// Network with `hidden_layers` hidden layers of `width` units;
    /// `hidden_layers = 2` gives the standard three fully connected layers.
    pub fn xavier(embedding_dim: usize, width: usize, hidden_layers: usize, seed: u64) -> Self {
        let mut dims = vec![embedding_dim + DIRECTION_ENCODING_DIM];
        dims.extend(std::iter::repeat(width).take(hidden_layers));
        dims.push(OUTPUTS);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|d| {
                let bound = (6.0 / (d[0] + d[1]) as f64).sqrt();
                let mut l = Layer::zeros(d[0], d[1]);
                for w in &mut l.weights {
                    *w = rng.gen_range(-bound..=bound);
                }
                l
            })
            .collect();
        Self { layers, embedding_dim, version: next_version() }
    }

    pub fn standard(embedding_dim: usize, seed: u64) -> Self {
        Self::xavier(embedding_dim, HIDDEN_WIDTH, 2, seed)
    }

    pub fn from_layers(embedding_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        let mut expect = embedding_dim + DIRECTION_ENCODING_DIM;
        for l in &layers {
            if l.inputs != expect || l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(contract("layer shapes do not chain"));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(contract("parameters must be finite"));
            }
            expect = l.outputs;
        }
        if layers.is_empty() || expect != OUTPUTS {
            return Err(contract("final layer must have 4 outputs"));
        }
        Ok(Self { layers, embedding_dim, version: next_version() })
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Mutable access invalidates every cache produced so far.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.version = next_version();
        &mut self.layers
    }

    /// Builds the network input row for one sample.
    pub fn assemble_input(&self, embedding: &[f64], direction: [f64; 3], row: &mut [f64]) -> Result<()> {
        if embedding.len() != self.embedding_dim {
            return Err(contract(format!(
                "embedding has {} components, network expects {}",
                embedding.len(),
                self.embedding_dim
            )));
        }
        if embedding.iter().chain(&direction).any(|v| !v.is_finite()) {
            return Err(contract("non-finite network input"));
        }
        let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(contract(format!("direction norm {norm} is not 1")));
        }
        row[..self.embedding_dim].copy_from_slice(embedding);
        encode_direction(direction, &mut row[self.embedding_dim..]);
        Ok(())
    }

    pub fn forward(&self, embedding: &[f64], direction: [f64; 3]) -> Result<MlpEvaluation> {
        let mut row = vec![0.0; self.input_dim()];
        self.assemble_input(embedding, direction, &mut row)?;
        let cache = self.forward_batch(row, 1)?;
        Ok(MlpEvaluation { sigma: cache.sigma(0), color: cache.color(0), cache })
    }

    /// Forward pass over `rows` assembled input rows (see
    /// [`assemble_input`](Self::assemble_input)).
    pub fn forward_batch(&self, input: Vec<f64>, rows: usize) -> Result<MlpCache> {
        if input.len() != rows * self.input_dim() {
            return Err(contract("input batch does not match network input width"));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut current = input;
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; rows * layer.outputs];
            for r in 0..rows {
                let x = &current[r * layer.inputs..(r + 1) * layer.inputs];
                let z = &mut next[r * layer.outputs..(r + 1) * layer.outputs];
                layer.forward_row(x, z);
                if li != last {
                    for v in z.iter_mut() {
                        *v = v.max(0.0);
                    }
                }
            }
            inputs.push(current);
            current = next;
        }
        Ok(MlpCache { version: self.version, rows, inputs, raw: current })
    }

    pub fn backward(&self, cache: &MlpCache, d_sigma: f64, d_color: [f64; 3]) -> Result<(MlpGrads, Vec<f64>)> {
        let mut grads = MlpGrads::zeros_like(self);
        let d_input = self.backward_batch(cache, &[[d_sigma, d_color[0], d_color[1], d_color[2]]], &mut grads)?;
        Ok((grads, d_input[..self.embedding_dim].to_vec()))
    }

    /// Accumulates parameter gradients into `grads` and returns
    /// d loss / d input for every row (`rows x input_dim`).
    ///
    /// `upstream[r]` holds d loss / d (sigma, r, g, b) of row `r`.
    pub fn backward_batch(&self, cache: &MlpCache, upstream: &[[f64; 4]], grads: &mut MlpGrads) -> Result<Vec<f64>> {
        if cache.version != self.version {
            return Err(Error::StaleCache("network parameters changed since the forward pass"));
        }
        if upstream.len() != cache.rows {
            return Err(contract("upstream gradient count does not match cached rows"));
        }
        let rows = cache.rows;
        // d loss / d raw outputs
        let mut delta = vec![0.0; rows * OUTPUTS];
        for r in 0..rows {
            let raw = &cache.raw[r * OUTPUTS..(r + 1) * OUTPUTS];
            let up = upstream[r];
            delta[r * OUTPUTS] = up[0] * sigmoid(raw[0]);
            for k in 1..OUTPUTS {
                let s = sigmoid(raw[k]);
                delta[r * OUTPUTS + k] = up[k] * s * (1.0 - s);
            }
        }
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let g = &mut grads.layers[li];
            let x_all = &cache.inputs[li];
            let (n_in, n_out) = (layer.inputs, layer.outputs);
            let mut dx = vec![0.0; rows * n_in];
            for r in 0..rows {
                let x = &x_all[r * n_in..(r + 1) * n_in];
                let d = &delta[r * n_out..(r + 1) * n_out];
                let dxr = &mut dx[r * n_in..(r + 1) * n_in];
                for (j, &dj) in d.iter().enumerate() {
                    if dj == 0.0 {
                        continue;
                    }
                    g.bias[j] += dj;
                    let gw = &mut g.weights[j * n_in..(j + 1) * n_in];
                    for (a, b) in gw.iter_mut().zip(x) {
                        *a += dj * b;
                    }
                    let w = &layer.weights[j * n_in..(j + 1) * n_in];
                    for (a, b) in dxr.iter_mut().zip(w) {
                        *a += dj * b;
                    }
                }
                if li > 0 {
                    // ReLU: the layer input is the post-activation of the previous layer
                    for (a, &xv) in dxr.iter_mut().zip(x) {
                        if xv <= 0.0 {
                            *a = 0.0;
                        }
                    }
                }
            }
            delta = dx;
        }
        Ok(delta)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&MLP_MAGIC)?;
        for v in [MLP_VERSION, self.embedding_dim as u32, self.layers.len() as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        for l in &self.layers {
            w.write_all(&(l.inputs as u32).to_le_bytes())?;
            w.write_all(&(l.outputs as u32).to_le_bytes())?;
            for v in l.weights.iter().chain(&l.bias) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads an `MLP0` section starting at `base_offset` of the container.
    pub fn read_from(mut r: impl Read, base_offset: u64) -> Result<Self> {
        let mut head = [0u8; 16];
        read_exact_at(&mut r, &mut head, base_offset)?;
        if head[0..4] != MLP_MAGIC {
            return Err(Error::Format { offset: base_offset, detail: "bad section tag, expected MLP0".into() });
        }
        let word = |b: &[u8], i: usize| u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]]);
        if word(&head, 4) != MLP_VERSION {
            return Err(Error::Format { offset: base_offset + 4, detail: "unsupported MLP0 version".into() });
        }
        let embedding_dim = word(&head, 8) as usize;
        let count = word(&head, 12) as usize;
        let mut offset = base_offset + 16;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let mut dims = [0u8; 8];
            read_exact_at(&mut r, &mut dims, offset)?;
            offset += 8;
            let (inputs, outputs) = (word(&dims, 0) as usize, word(&dims, 4) as usize);
            if inputs == 0 || outputs == 0 || inputs * outputs > 1 << 24 {
                return Err(Error::Format { offset: offset - 8, detail: format!("implausible layer {inputs}x{outputs}") });
            }
            let n = inputs * outputs + outputs;
            let mut bytes = vec![0u8; n * 8];
            read_exact_at(&mut r, &mut bytes, offset)?;
            offset += bytes.len() as u64;
            let vals: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            layers.push(Layer {
                inputs,
                outputs,
                weights: vals[..inputs * outputs].to_vec(),
                bias: vals[inputs * outputs..].to_vec(),
            });
        }
        Self::from_layers(embedding_dim, layers)
    }
}
