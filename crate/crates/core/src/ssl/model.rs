//! Small convolutional encoder `f` and projection head `g`.
//!
//! Each block is a 3x3 convolution (zero padding 1) with bias, ReLU and 2x2
//! average pooling. After the last block a global average pool feeds a linear
//! embedding. The head is `fc2(relu(fc1(h)))`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tensor::{check_finite, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub in_channels: usize,
    /// Output channels of each conv block; its length is the block count B.
    pub channels: Vec<usize>,
    pub embed_dim: usize,
    pub head_hidden: usize,
    pub proj_dim: usize,
    /// Side of the square inputs; must be divisible by `2^B`.
    pub input_side: usize,
    /// Shift and scale each input to zero mean and unit variance over all
    /// its values before the first block.
    pub standardize_input: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 3,
            channels: vec![16, 32, 64],
            embed_dim: 64,
            head_hidden: 64,
            proj_dim: 32,
            input_side: 32,
            standardize_input: true,
        }
    }
}

impl ModelConfig {
    pub fn blocks(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.channels.is_empty() {
            return bad("model needs at least one conv block".into());
        }
        if self.in_channels == 0 || self.channels.contains(&0) || self.embed_dim == 0 || self.head_hidden == 0 {
            return bad("layer widths must be positive".into());
        }
        if self.proj_dim < 2 {
            return bad(format!("projection dim {} < 2", self.proj_dim));
        }
        let div = 1usize << self.blocks().min(30);
        if self.input_side == 0 || !self.input_side.is_multiple_of(div) {
            return bad(format!(
                "input side {} is not divisible by 2^{}",
                self.input_side,
                self.blocks()
            ));
        }
        Ok(())
    }

    /// Shapes of every parameter tensor in declaration order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        let mut c_in = self.in_channels;
        for &c in &self.channels {
            shapes.push(vec![c, c_in, 3, 3]);
            shapes.push(vec![c]);
            c_in = c;
        }
        shapes.push(vec![self.embed_dim, c_in]);
        shapes.push(vec![self.embed_dim]);
        shapes.push(vec![self.head_hidden, self.embed_dim]);
        shapes.push(vec![self.head_hidden]);
        shapes.push(vec![self.proj_dim, self.head_hidden]);
        shapes.push(vec![self.proj_dim]);
        shapes
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for b in 0..self.blocks() {
            names.push(format!("block{b}.weight"));
            names.push(format!("block{b}.bias"));
        }
        for layer in ["embed", "head.fc1", "head.fc2"] {
            names.push(format!("{layer}.weight"));
            names.push(format!("{layer}.bias"));
        }
        names
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    /// `(out, in, 3, 3)`
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `(out, in)`
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n_in = x.len();
        self.bias
            .data()
            .iter()
            .enumerate()
            .map(|(o, b)| b + dot(&self.weight.data()[o * n_in..(o + 1) * n_in], x))
            .collect()
    }

    /// Accumulates weight and bias gradients and returns the input gradient.
    fn backward(&self, x: &[f64], dy: &[f64], gw: Option<(&mut [f64], &mut [f64])>, need_dx: bool) -> Vec<f64> {
        let n_in = x.len();
        let w = self.weight.data();
        if let Some((gw, gb)) = gw {
            for (o, &d) in dy.iter().enumerate() {
                gb[o] += d;
                axpy(d, x, &mut gw[o * n_in..(o + 1) * n_in]);
            }
        }
        let mut dx = vec![0.0; if need_dx { n_in } else { 0 }];
        if need_dx {
            for (o, &d) in dy.iter().enumerate() {
                axpy(d, &w[o * n_in..(o + 1) * n_in], &mut dx);
            }
        }
        dx
    }
}

/// The encoder `f`: conv blocks plus the linear embedding, with a per-layer
/// frozen flag (`blocks.len() + 1` entries, the last for the embedding).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState {
    pub blocks: Vec<ConvBlock>,
    pub embed: Linear,
    pub frozen_mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: EncoderState,
    pub head: ProjectionHead,
}

/// Gradients (or any per-parameter buffers) in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub tensors: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros(config: &ModelConfig) -> Self {
        Grads {
            tensors: config
                .param_shapes()
                .iter()
                .map(|s| vec![0.0; s.iter().product()])
                .collect(),
        }
    }

    pub fn add(&mut self, other: &Grads) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Overlap of an `s`-long axis with itself shifted by `d` in `{-1, 0, 1}`:
/// destination range start and length.
fn shifted_range(s: usize, d: isize) -> (usize, usize) {
    match d {
        -1 => (1, s - 1),
        1 => (0, s - 1),
        _ => (0, s),
    }
}

fn conv3x3_forward(x: &[f64], c_in: usize, s: usize, w: &[f64], b: &[f64], out: &mut [f64]) {
    let area = s * s;
    for (o, out_o) in out.chunks_exact_mut(area).enumerate() {
        out_o.fill(b[o]);
        for i in 0..c_in {
            let x_i = &x[i * area..(i + 1) * area];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, ny) = shifted_range(s, dy);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, nx) = shifted_range(s, dx);
                    let wv = w[((o * c_in + i) * 3 + ky) * 3 + kx];
                    for y in y0..y0 + ny {
                        let src = (y as isize + dy) as usize * s + (x0 as isize + dx) as usize;
                        axpy(wv, &x_i[src..src + nx], &mut out_o[y * s + x0..y * s + x0 + nx]);
                    }
                }
            }
        }
    }
}

/// Weight, bias and optionally input gradients of a 3x3 convolution.
fn conv3x3_backward(
    x: &[f64],
    c_in: usize,
    s: usize,
    w: &[f64],
    dpre: &[f64],
    grads: Option<(&mut [f64], &mut [f64])>,
    dx: Option<&mut [f64]>,
) {
    let area = s * s;
    let c_out = dpre.len() / area;
    if let Some((gw, gb)) = grads {
        for o in 0..c_out {
            let d_o = &dpre[o * area..(o + 1) * area];
            gb[o] += d_o.iter().sum::<f64>();
            for i in 0..c_in {
                let x_i = &x[i * area..(i + 1) * area];
                for ky in 0..3 {
                    let dy = ky as isize - 1;
                    let (y0, ny) = shifted_range(s, dy);
                    for kx in 0..3 {
                        let dx = kx as isize - 1;
                        let (x0, nx) = shifted_range(s, dx);
                        let mut acc = 0.0;
                        for y in y0..y0 + ny {
                            let src = (y as isize + dy) as usize * s + (x0 as isize + dx) as usize;
                            acc += dot(&x_i[src..src + nx], &d_o[y * s + x0..y * s + x0 + nx]);
                        }
                        gw[((o * c_in + i) * 3 + ky) * 3 + kx] += acc;
                    }
                }
            }
        }
    }
    if let Some(dx_all) = dx {
        for i in 0..c_in {
            let dx_i = &mut dx_all[i * area..(i + 1) * area];
            for o in 0..c_out {
                let d_o = &dpre[o * area..(o + 1) * area];
                for ky in 0..3 {
                    let dy = ky as isize - 1;
                    let (y0, ny) = shifted_range(s, dy);
                    for kx in 0..3 {
                        let dxs = kx as isize - 1;
                        let (x0, nx) = shifted_range(s, dxs);
                        let wv = w[((o * c_in + i) * 3 + ky) * 3 + kx];
                        for y in y0..y0 + ny {
                            let src = (y as isize + dy) as usize * s + (x0 as isize + dxs) as usize;
                            axpy(wv, &d_o[y * s + x0..y * s + x0 + nx], &mut dx_i[src..src + nx]);
                        }
                    }
                }
            }
        }
    }
}

fn relu_pool(pre: &[f64], s: usize) -> Vec<f64> {
    let (area, half) = (s * s, s / 2);
    let channels = pre.len() / area;
    let mut out = vec![0.0; channels * half * half];
    for c in 0..channels {
        let p = &pre[c * area..(c + 1) * area];
        for y in 0..half {
            for x in 0..half {
                let i = 2 * y * s + 2 * x;
                out[(c * half + y) * half + x] =
                    0.25 * (p[i].max(0.0) + p[i + 1].max(0.0) + p[i + s].max(0.0) + p[i + s + 1].max(0.0));
            }
        }
    }
    out
}

/// Intermediate values of one input kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ViewCache {
    /// Input of each block, `(c, s, s)`.
    pub block_inputs: Vec<Vec<f64>>,
    /// Conv outputs before ReLU.
    pub block_pre: Vec<Vec<f64>>,
    pub pooled: Vec<f64>,
    pub h: Vec<f64>,
    pub fc1_pre: Vec<f64>,
    pub fc1_act: Vec<f64>,
    pub z: Vec<f64>,
}

impl Model {
    /// He-normal weights and zero biases drawn from `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = config
            .param_shapes()
            .into_iter()
            .enumerate()
            .map(|(i, shape)| {
                if i % 2 == 1 {
                    return Tensor::zeros(shape);
                }
                let fan_in: usize = shape[1..].iter().product();
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
                let n = shape.iter().product();
                let data = (0..n).map(|_| normal.sample(&mut rng)).collect();
                Tensor::new(shape, data).expect("shape matches")
            })
            .collect();
        Self::from_tensors(config, tensors)
    }

    /// Rebuilds a model from tensors in declaration order; all layers trainable.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let shapes = config.param_shapes();
        if tensors.len() != shapes.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} tensors, got {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for (t, s) in tensors.iter().zip(&shapes) {
            if t.shape() != s.as_slice() {
                return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", t.shape(), s)));
            }
        }
        let mut it = tensors.into_iter();
        let mut pair = || Linear {
            weight: it.next().expect("counted"),
            bias: it.next().expect("counted"),
        };
        let blocks = (0..config.blocks())
            .map(|_| {
                let l = pair();
                ConvBlock { weight: l.weight, bias: l.bias }
            })
            .collect();
        let embed = pair();
        let head = ProjectionHead { fc1: pair(), fc2: pair() };
        let frozen_mask = vec![false; config.blocks() + 1];
        Ok(Model {
            config,
            encoder: EncoderState { blocks, embed, frozen_mask },
            head,
        })
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for b in &self.encoder.blocks {
            out.push(&b.weight);
            out.push(&b.bias);
        }
        for l in [&self.encoder.embed, &self.head.fc1, &self.head.fc2] {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        let Model { encoder, head, .. } = self;
        for b in &mut encoder.blocks {
            out.push(&mut b.weight);
            out.push(&mut b.bias);
        }
        for l in [&mut encoder.embed, &mut head.fc1, &mut head.fc2] {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Whether parameter tensor `index` (declaration order) is updated by training.
    pub fn is_trainable(&self, index: usize) -> bool {
        let layer = index / 2;
        layer > self.config.blocks() || !self.encoder.frozen_mask[layer]
    }

    /// Lowest block whose input gradient is needed, i.e. the first trainable block.
    fn backward_floor(&self) -> usize {
        self.encoder
            .frozen_mask
            .iter()
            .take(self.config.blocks())
            .position(|f| !f)
            .unwrap_or(self.config.blocks())
    }

    fn check_input(&self, image: &[f64]) -> Result<()> {
        let s = self.config.input_side;
        let expected = self.config.in_channels * s * s;
        if image.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "input holds {} values, expected ({}, {s}, {s})",
                image.len(),
                self.config.in_channels
            )));
        }
        check_finite(image, "input")
    }

    fn prepare_input(&self, image: &[f64]) -> Vec<f64> {
        if self.config.standardize_input {
            standardize(image)
        } else {
            image.to_vec()
        }
    }

    /// Encoder features `h = f(x)` of one `(c, s, s)` image.
    pub fn encode(&self, image: &[f64]) -> Result<Vec<f64>> {
        self.check_input(image)?;
        let mut x = self.prepare_input(image);
        let mut s = self.config.input_side;
        let mut c_in = self.config.in_channels;
        for block in &self.encoder.blocks {
            let c_out = block.bias.len();
            let mut pre = vec![0.0; c_out * s * s];
            conv3x3_forward(&x, c_in, s, block.weight.data(), block.bias.data(), &mut pre);
            x = relu_pool(&pre, s);
            s /= 2;
            c_in = c_out;
        }
        let h = self.encoder.embed.apply(&global_pool(&x, c_in));
        check_finite(&h, "encoder features")?;
        Ok(h)
    }

    /// Full forward pass of one image with caches for backward.
    pub fn forward_view(&self, image: &[f64]) -> Result<ViewCache> {
        self.check_input(image)?;
        let mut block_inputs = Vec::with_capacity(self.config.blocks());
        let mut block_pre = Vec::with_capacity(self.config.blocks());
        let mut x = self.prepare_input(image);
        let mut s = self.config.input_side;
        let mut c_in = self.config.in_channels;
        for block in &self.encoder.blocks {
            let c_out = block.bias.len();
            let mut pre = vec![0.0; c_out * s * s];
            conv3x3_forward(&x, c_in, s, block.weight.data(), block.bias.data(), &mut pre);
            let next = relu_pool(&pre, s);
            block_inputs.push(std::mem::replace(&mut x, next));
            block_pre.push(pre);
            s /= 2;
            c_in = c_out;
        }
        let pooled = global_pool(&x, c_in);
        let h = self.encoder.embed.apply(&pooled);
        let fc1_pre = self.head.fc1.apply(&h);
        let fc1_act: Vec<f64> = fc1_pre.iter().map(|v| v.max(0.0)).collect();
        let z = self.head.fc2.apply(&fc1_act);
        check_finite(&h, "encoder features")?;
        check_finite(&z, "projection")?;
        Ok(ViewCache {
            block_inputs,
            block_pre,
            pooled,
            h,
            fc1_pre,
            fc1_act,
            z,
        })
    }

    /// Accumulates `dL/dθ` for one view into `grads` given `dL/dz`. Frozen
    /// layers get no gradient and backpropagation stops at the first
    /// trainable block.
    pub fn backward_view(&self, cache: &ViewCache, dz: &[f64], grads: &mut Grads) {
        let b_count = self.config.blocks();
        let (head_lo, head_hi) = grads.tensors.split_at_mut(2 * b_count + 2);
        let (fc1, fc2) = head_hi.split_at_mut(2);
        let (fc2w, fc2b) = fc2.split_at_mut(1);
        let dact = self.head.fc2.backward(&cache.fc1_act, dz, Some((&mut fc2w[0], &mut fc2b[0])), true);
        let dpre1: Vec<f64> = dact
            .iter()
            .zip(&cache.fc1_pre)
            .map(|(d, p)| if *p > 0.0 { *d } else { 0.0 })
            .collect();
        let (fc1w, fc1b) = fc1.split_at_mut(1);
        let dh = self.head.fc1.backward(&cache.h, &dpre1, Some((&mut fc1w[0], &mut fc1b[0])), true);

        let floor = self.backward_floor();
        let embed_trainable = !self.encoder.frozen_mask[b_count];
        if !embed_trainable && floor == b_count {
            return;
        }
        let (blocks_g, embed_g) = head_lo.split_at_mut(2 * b_count);
        let (ew, eb) = embed_g.split_at_mut(1);
        let embed_grads = embed_trainable.then(|| (&mut ew[0][..], &mut eb[0][..]));
        let dpooled = self.encoder.embed.backward(&cache.pooled, &dh, embed_grads, floor < b_count);
        if floor == b_count {
            return;
        }

        // Gradient w.r.t. the last block's pooled output.
        let mut s = self.config.input_side >> b_count;
        let area = s * s;
        let mut dout: Vec<f64> = dpooled
            .iter()
            .flat_map(|&d| std::iter::repeat_n(d / area as f64, area))
            .collect();
        for b in (floor..b_count).rev() {
            s *= 2;
            let pre = &cache.block_pre[b];
            let half = s / 2;
            let mut dpre = vec![0.0; pre.len()];
            for (c, d_c) in dout.chunks_exact(half * half).enumerate() {
                for y in 0..half {
                    for x in 0..half {
                        let g = 0.25 * d_c[y * half + x];
                        let i = c * s * s + 2 * y * s + 2 * x;
                        for j in [i, i + 1, i + s, i + s + 1] {
                            if pre[j] > 0.0 {
                                dpre[j] = g;
                            }
                        }
                    }
                }
            }
            let x = &cache.block_inputs[b];
            let c_in = x.len() / (s * s);
            let (gw, rest) = blocks_g[2 * b..].split_at_mut(1);
            let block = &self.encoder.blocks[b];
            let mut dx = (b > floor).then(|| vec![0.0; x.len()]);
            let block_grads = (!self.encoder.frozen_mask[b]).then(|| (&mut gw[0][..], &mut rest[0][..]));
            conv3x3_backward(x, c_in, s, block.weight.data(), &dpre, block_grads, dx.as_deref_mut());
            match dx {
                Some(d) => dout = d,
                None => break,
            }
        }
    }

    /// `(h, z)` for a batch of shape `(n, c, s, s)`.
    pub fn forward(&self, batch: &Tensor) -> Result<(Tensor, Tensor)> {
        let expected = [self.config.in_channels, self.config.input_side, self.config.input_side];
        if batch.shape().len() != 4 || batch.shape()[1..] != expected {
            return Err(Error::ShapeMismatch(format!(
                "batch shape {:?}, expected (n, {}, {}, {})",
                batch.shape(),
                expected[0],
                expected[1],
                expected[2]
            )));
        }
        let n = batch.shape()[0];
        let caches: Vec<ViewCache> = (0..n)
            .into_par_iter()
            .map(|i| self.forward_view(batch.row(i)))
            .collect::<Result<_>>()?;
        let h = caches.iter().flat_map(|c| c.h.iter().copied()).collect();
        let z = caches.iter().flat_map(|c| c.z.iter().copied()).collect();
        Ok((
            Tensor::new(vec![n, self.config.embed_dim], h)?,
            Tensor::new(vec![n, self.config.proj_dim], z)?,
        ))
    }
}

/// Zero mean, unit variance; a constant input maps to zeros.
pub fn standardize(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = if var > 1e-12 { 1.0 / var.sqrt() } else { 0.0 };
    x.iter().map(|v| (v - mean) * inv).collect()
}

fn global_pool(x: &[f64], channels: usize) -> Vec<f64> {
    let area = x.len() / channels;
    x.chunks_exact(area).map(|c| c.iter().sum::<f64>() / area as f64).collect()
}
