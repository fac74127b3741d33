//! Keyframe regressor: a per-vertex layer, a per-frame layer, and two
//! animation-level layers, trained with mean squared error and plain mini-batch
//! SGD. Gradients are computed by hand.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::animation::{Animation, FeatureMap};

use super::KeyframeError;

pub const MODEL_MAGIC: &[u8; 8] = b"PAAKMDL1";
pub const MODEL_VERSION: u32 = 1;

/// Layer sizes: per-vertex `features → m1`, per-frame `vertices·m1 → m2`,
/// then `window·m2 → m3 → window`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub features: usize,
    pub vertices: usize,
    pub window: usize,
    pub m1: usize,
    pub m2: usize,
    pub m3: usize,
}

impl ModelDims {
    /// Default sizes for a vocabulary of `classes` and a body of `vertices`.
    pub fn new(classes: usize, vertices: usize) -> Self {
        ModelDims { features: 4 + classes, vertices, window: 60, m1: 8, m2: 32, m3: 64 }
    }

    pub fn classes(&self) -> usize {
        self.features - 4
    }

    fn input_len(&self) -> usize {
        self.window * self.vertices * self.features
    }

    fn offsets(&self) -> [usize; 9] {
        let d = self;
        let sizes = [
            d.m1 * d.features,
            d.m1,
            d.m2 * d.vertices * d.m1,
            d.m2,
            d.m3 * d.window * d.m2,
            d.m3,
            d.window * d.m3,
            d.window,
        ];
        let mut out = [0; 9];
        for (i, s) in sizes.iter().enumerate() {
            out[i + 1] = out[i] + s;
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.offsets()[8]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeModel {
    dims: ModelDims,
    params: Vec<f64>,
}

/// One resampled window of per-vertex inputs, frame-major then vertex-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub x: Vec<f64>,
}

/// Intermediate activations kept for the backward pass.
struct Activations {
    z1: Vec<f64>,
    h1: Vec<f64>,
    z2: Vec<f64>,
    h2: Vec<f64>,
    z3: Vec<f64>,
    h3: Vec<f64>,
    y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    /// Predicted normalized keyframe weight per window frame, in (0, 1).
    pub k_hat: Vec<f64>,
    /// Per-frame layer activations, `window × m2`.
    pub hidden: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 40, learning_rate: 0.05, batch_size: 4, seed: 0 }
    }
}

fn relu(z: f64) -> f64 {
    z.max(0.0)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `out[r] = b[r] + Σ_c w[r·cols + c]·x[c]`.
fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o = b[r] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// Accumulates `dW += dz ⊗ x`, `db += dz` and, when asked, `dx = Wᵀ dz`.
fn affine_backward(w: &[f64], x: &[f64], dz: &[f64], dw: &mut [f64], db: &mut [f64], dx: Option<&mut [f64]>) {
    let cols = x.len();
    for (r, &g) in dz.iter().enumerate() {
        db[r] += g;
        if g != 0.0 {
            for (d, &xi) in dw[r * cols..(r + 1) * cols].iter_mut().zip(x) {
                *d += g * xi;
            }
        }
    }
    if let Some(dx) = dx {
        dx.fill(0.0);
        for (r, &g) in dz.iter().enumerate() {
            if g != 0.0 {
                for (d, &wi) in dx.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                    *d += g * wi;
                }
            }
        }
    }
}

impl KeyframeModel {
    pub fn zeros(dims: ModelDims) -> Self {
        KeyframeModel { dims, params: vec![0.0; dims.param_count()] }
    }

    /// Uniform He-style initialization, zero biases.
    pub fn init(dims: ModelDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Self::zeros(dims);
        let o = dims.offsets();
        let fan_in = [dims.features, dims.vertices * dims.m1, dims.window * dims.m2, dims.m3];
        for (layer, &fan) in fan_in.iter().enumerate() {
            let bound = (6.0 / fan as f64).sqrt();
            for p in &mut model.params[o[2 * layer]..o[2 * layer + 1]] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        model
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_input(&self, input: &ModelInput) -> Result<(), KeyframeError> {
        if input.x.len() != self.dims.input_len() {
            return Err(KeyframeError::Shape(format!(
                "model expects {} inputs ({} frames × {} vertices × {} features), got {}",
                self.dims.input_len(),
                self.dims.window,
                self.dims.vertices,
                self.dims.features,
                input.x.len()
            )));
        }
        Ok(())
    }

    fn activations(&self, x: &[f64]) -> Activations {
        let d = self.dims;
        let o = d.offsets();
        let p = &self.params;
        let mut z1 = vec![0.0; d.window * d.vertices * d.m1];
        for (xi, zi) in x.chunks_exact(d.features).zip(z1.chunks_exact_mut(d.m1)) {
            affine(&p[o[0]..o[1]], &p[o[1]..o[2]], xi, zi);
        }
        let h1: Vec<f64> = z1.iter().map(|&z| relu(z)).collect();
        let mut z2 = vec![0.0; d.window * d.m2];
        for (hi, zi) in h1.chunks_exact(d.vertices * d.m1).zip(z2.chunks_exact_mut(d.m2)) {
            affine(&p[o[2]..o[3]], &p[o[3]..o[4]], hi, zi);
        }
        let h2: Vec<f64> = z2.iter().map(|&z| relu(z)).collect();
        let mut z3 = vec![0.0; d.m3];
        affine(&p[o[4]..o[5]], &p[o[5]..o[6]], &h2, &mut z3);
        let h3: Vec<f64> = z3.iter().map(|&z| relu(z)).collect();
        let mut z4 = vec![0.0; d.window];
        affine(&p[o[6]..o[7]], &p[o[7]..o[8]], &h3, &mut z4);
        let y = z4.iter().map(|&z| sigmoid(z)).collect();
        Activations { z1, h1, z2, h2, z3, h3, y }
    }

    pub fn forward(&self, input: &ModelInput) -> Result<ModelOutput, KeyframeError> {
        self.check_input(input)?;
        let a = self.activations(&input.x);
        Ok(ModelOutput { k_hat: a.y, hidden: a.h2.chunks(self.dims.m2).map(<[f64]>::to_vec).collect() })
    }

    /// Mean squared error over the window, and its gradient added into `grad`.
    fn loss_and_gradient(&self, x: &[f64], target: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.dims;
        let o = d.offsets();
        let p = &self.params;
        let a = self.activations(x);
        let n = d.window as f64;
        let loss = a.y.iter().zip(target).map(|(y, t)| (y - t) * (y - t)).sum::<f64>() / n;

        let (g01, rest) = grad.split_at_mut(o[2]);
        let (g23, rest) = rest.split_at_mut(o[4] - o[2]);
        let (g45, g67) = rest.split_at_mut(o[6] - o[4]);
        let (gw1, gb1) = g01.split_at_mut(o[1]);
        let (gw2, gb2) = g23.split_at_mut(o[3] - o[2]);
        let (gw3, gb3) = g45.split_at_mut(o[5] - o[4]);
        let (gw4, gb4) = g67.split_at_mut(o[7] - o[6]);

        let dz4: Vec<f64> = a.y.iter().zip(target).map(|(y, t)| 2.0 * (y - t) / n * y * (1.0 - y)).collect();
        let mut dh3 = vec![0.0; d.m3];
        affine_backward(&p[o[6]..o[7]], &a.h3, &dz4, gw4, gb4, Some(&mut dh3));
        let dz3: Vec<f64> = dh3.iter().zip(&a.z3).map(|(g, &z)| if z > 0.0 { *g } else { 0.0 }).collect();
        let mut dh2 = vec![0.0; d.window * d.m2];
        affine_backward(&p[o[4]..o[5]], &a.h2, &dz3, gw3, gb3, Some(&mut dh2));
        let dz2: Vec<f64> = dh2.iter().zip(&a.z2).map(|(g, &z)| if z > 0.0 { *g } else { 0.0 }).collect();
        let frame_in = d.vertices * d.m1;
        let mut dh1 = vec![0.0; frame_in];
        for t in 0..d.window {
            let dz = &dz2[t * d.m2..(t + 1) * d.m2];
            if dz.iter().all(|&g| g == 0.0) {
                continue;
            }
            let h1 = &a.h1[t * frame_in..(t + 1) * frame_in];
            affine_backward(&p[o[2]..o[3]], h1, dz, gw2, gb2, Some(&mut dh1));
            let z1 = &a.z1[t * frame_in..(t + 1) * frame_in];
            for u in 0..d.vertices {
                let dz1: Vec<f64> = (0..d.m1)
                    .map(|j| if z1[u * d.m1 + j] > 0.0 { dh1[u * d.m1 + j] } else { 0.0 })
                    .collect();
                let xi = &x[(t * d.vertices + u) * d.features..(t * d.vertices + u + 1) * d.features];
                affine_backward(&p[o[0]..o[1]], xi, &dz1, gw1, gb1, None);
            }
        }
        loss
    }

    /// Mean loss over `samples` and its gradient with respect to every parameter.
    pub fn gradient(&self, samples: &[(&ModelInput, &[f64])]) -> Result<(f64, Vec<f64>), KeyframeError> {
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for (input, target) in samples {
            self.check_input(input)?;
            if target.len() != self.dims.window {
                return Err(KeyframeError::Shape(format!("target has {} values, window is {}", target.len(), self.dims.window)));
            }
            loss += self.loss_and_gradient(&input.x, target, &mut grad);
        }
        let scale = 1.0 / samples.len().max(1) as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        Ok((loss * scale, grad))
    }

    pub fn loss(&self, input: &ModelInput, target: &[f64]) -> Result<f64, KeyframeError> {
        let y = self.forward(input)?.k_hat;
        Ok(y.iter().zip(target).map(|(y, t)| (y - t) * (y - t)).sum::<f64>() / self.dims.window as f64)
    }

    /// Mini-batch SGD on mean squared error. Returns the mean training loss of each epoch.
    pub fn train(&mut self, dataset: &[(ModelInput, Vec<f64>)], config: &TrainConfig) -> Result<Vec<f64>, KeyframeError> {
        if dataset.is_empty() {
            return Err(KeyframeError::EmptyDataset);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        let mut trace = Vec::with_capacity(config.epochs);
        for epoch in 0..config.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for batch in order.chunks(config.batch_size.max(1)) {
                let samples: Vec<(&ModelInput, &[f64])> =
                    batch.iter().map(|&i| (&dataset[i].0, dataset[i].1.as_slice())).collect();
                let (loss, grad) = self.gradient(&samples)?;
                if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(KeyframeError::Diverged { epoch });
                }
                total += loss * batch.len() as f64;
                for (p, g) in self.params.iter_mut().zip(&grad) {
                    *p -= config.learning_rate * g;
                }
            }
            trace.push(total / dataset.len() as f64);
        }
        Ok(trace)
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        let d = self.dims;
        for n in [d.features, d.vertices, d.window, d.m1, d.m2, d.m3] {
            w.write_all(&(n as u32).to_le_bytes())?;
        }
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        w.flush()
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, KeyframeError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() < 8 || &bytes[..8] != MODEL_MAGIC {
            return Err(KeyframeError::ModelFormat("bad magic".into()));
        }
        let word = |i: usize| -> Result<usize, KeyframeError> {
            bytes
                .get(8 + 4 * i..12 + 4 * i)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
                .ok_or_else(|| KeyframeError::ModelFormat("truncated header".into()))
        };
        if word(0)? != MODEL_VERSION as usize {
            return Err(KeyframeError::ModelFormat(format!("unsupported version {}", word(0)?)));
        }
        let dims = ModelDims {
            features: word(1)?,
            vertices: word(2)?,
            window: word(3)?,
            m1: word(4)?,
            m2: word(5)?,
            m3: word(6)?,
        };
        if dims.features < 4 || [dims.vertices, dims.window, dims.m1, dims.m2, dims.m3].contains(&0) {
            return Err(KeyframeError::ModelFormat(format!("invalid layer sizes {dims:?}")));
        }
        let body = &bytes[36..];
        if body.len() != dims.param_count() * 8 {
            return Err(KeyframeError::ModelFormat(format!(
                "expected {} parameters, found {} bytes",
                dims.param_count(),
                body.len()
            )));
        }
        let params: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        if params.iter().any(|p| !p.is_finite()) {
            return Err(KeyframeError::ModelFormat("non-finite parameter".into()));
        }
        Ok(KeyframeModel { dims, params })
    }

    pub fn save(&self, path: &Path) -> Result<(), KeyframeError> {
        self.write_to(BufWriter::new(fs::File::create(path)?))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, KeyframeError> {
        Self::read_from(BufReader::new(fs::File::open(path)?))
    }
}

/// Linear resampling of a per-frame series to `n` samples spanning the same time.
pub fn resample(values: &[f64], n: usize) -> Vec<f64> {
    resample_with(values.len(), n, |i, j, u| values[i] * (1.0 - u) + values[j] * u)
}

/// Calls `f(i, j, u)` for each output sample, meaning `(1−u)·src[i] + u·src[j]`.
pub(crate) fn resample_with<T>(len: usize, n: usize, mut f: impl FnMut(usize, usize, f64) -> T) -> Vec<T> {
    (0..n)
        .map(|k| {
            if len == 1 || n == 1 {
                return f(0, 0, 0.0);
            }
            let s = k as f64 * (len - 1) as f64 / (n - 1) as f64;
            let i = (s.floor() as usize).min(len - 2);
            f(i, i + 1, s - i as f64)
        })
        .collect()
}

/// Builds the model input: per vertex, position relative to the frame's pelvis,
/// contact, and a one-hot semantic class, after resampling to the model window.
pub fn build_input(anim: &Animation, features: &FeatureMap, dims: &ModelDims) -> Result<ModelInput, KeyframeError> {
    if anim.vertex_count() != dims.vertices {
        return Err(KeyframeError::Shape(format!(
            "model expects {} body vertices, animation has {}",
            dims.vertices,
            anim.vertex_count()
        )));
    }
    features.check_shape(anim).map_err(|e| KeyframeError::Shape(e.to_string()))?;
    let classes = dims.classes();
    let frames = anim.frames();
    let mut x = Vec::with_capacity(dims.input_len());
    let rows = resample_with(frames.len(), dims.window, |i, j, u| (i, j, u));
    for (i, j, u) in rows {
        let (a, b) = (&frames[i], &frames[j]);
        let pelvis = a.pelvis + (b.pelvis - a.pelvis) * u;
        let (ca, cb) = (features.contact_row(i), features.contact_row(j));
        let labels = features.semantic_row(if u < 0.5 { i } else { j });
        for v in 0..dims.vertices {
            let p = a.vertices[v] + (b.vertices[v] - a.vertices[v]) * u;
            let rel = p - pelvis;
            x.extend([rel.x, rel.y, rel.z, ca[v] as f64 * (1.0 - u) + cb[v] as f64 * u]);
            let class = labels[v] as usize;
            x.extend((0..classes).map(|c| if c == class { 1.0 } else { 0.0 }));
        }
    }
    Ok(ModelInput { x })
}
