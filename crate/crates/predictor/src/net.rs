//! Convolutional endpoint regressor.
//!
//! Input pixels are average-pooled, passed through a stack of padded
//! convolutions, and the last convolution's channels are read as keypoint
//! heatmaps: a spatial softmax turns each into an expected `(x, y)`
//! position. Two small MLP heads map those keypoints to the four PEC and the
//! four PNL coordinates, all in `[0, 1]` units of the input side.

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::PredictorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation.
    fn slope(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - z.tanh().powi(2),
        }
    }
}

/// Whether PEC and PNL share one convolutional trunk or get one each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadLayout {
    SharedTrunk,
    SeparateModels,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// Side of the square input.
    pub input_size: usize,
    /// Average-pooling factor applied before the first convolution.
    pub pool: usize,
    /// The last layer's channels are the keypoint heatmaps.
    pub convs: Vec<ConvSpec>,
    pub hidden: usize,
    pub activation: Activation,
    pub heads: HeadLayout,
    /// Fixed multiplier on heatmap logits before the spatial softmax.
    pub heatmap_gain: f64,
}

pub const INPUT_SIZE: usize = 250;
pub const OUTPUTS_PER_HEAD: usize = 4;

impl Architecture {
    pub fn standard() -> Self {
        let conv = |out_channels, stride| ConvSpec { out_channels, kernel: 3, stride };
        Self {
            input_size: INPUT_SIZE,
            pool: 2,
            convs: vec![conv(8, 2), conv(16, 2), conv(16, 1), conv(16, 1), conv(32, 1)],
            hidden: 64,
            activation: Activation::Relu,
            heads: HeadLayout::SharedTrunk,
            heatmap_gain: 5.0,
        }
    }

    pub fn validate(&self) -> Result<(), PredictorError> {
        let bad = |m: &str| Err(PredictorError::Architecture(m.to_owned()));
        if self.input_size == 0 || self.pool == 0 || self.pool > self.input_size {
            return bad("input size and pool factor must be positive, pool <= input");
        }
        if !(self.heatmap_gain > 0.0 && self.heatmap_gain.is_finite()) {
            return bad("heatmap gain must be positive");
        }
        if self.convs.is_empty() || self.hidden == 0 {
            return bad("need at least one convolution and a non-empty hidden layer");
        }
        let mut side = self.input_size / self.pool;
        for c in &self.convs {
            if c.out_channels == 0 || c.kernel == 0 || c.stride == 0 || c.kernel % 2 == 0 {
                return bad("convolutions need positive channels, stride and an odd kernel");
            }
            side = conv_out(side, c.kernel, c.stride);
            if side == 0 {
                return bad("feature map collapses to zero size");
            }
        }
        Ok(())
    }

    fn trunks(&self) -> usize {
        match self.heads {
            HeadLayout::SharedTrunk => 1,
            HeadLayout::SeparateModels => 2,
        }
    }

    fn features(&self) -> usize {
        2 * self.convs.last().map_or(0, |c| c.out_channels)
    }

    /// `(rows, cols)` of each weight block, in parameter order: every trunk's
    /// convolutions, then each head's two dense layers. The output layer sees
    /// the hidden activations followed by the keypoints themselves.
    fn block_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        for _ in 0..self.trunks() {
            let mut in_c = 1;
            for c in &self.convs {
                shapes.push((c.out_channels, in_c * c.kernel * c.kernel));
                in_c = c.out_channels;
            }
        }
        for _ in 0..2 {
            shapes.push((self.hidden, self.features()));
            shapes.push((OUTPUTS_PER_HEAD, self.hidden + self.features()));
        }
        shapes
    }
}

fn conv_out(side: usize, kernel: usize, stride: usize) -> usize {
    let pad = kernel / 2;
    if side + 2 * pad < kernel {
        0
    } else {
        (side + 2 * pad - kernel) / stride + 1
    }
}

/// A weight matrix (`rows x cols`, row-major) and its bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Block {
    fn weights(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.rows, self.cols), &self.w).expect("block shape")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub blocks: Vec<Block>,
}

impl Params {
    pub fn zeros(arch: &Architecture) -> Self {
        let blocks = arch
            .block_shapes()
            .into_iter()
            .map(|(rows, cols)| Block { rows, cols, w: vec![0.0; rows * cols], b: vec![0.0; rows] })
            .collect();
        Self { blocks }
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(|b| b.w.len() + b.b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.blocks.iter().flat_map(|b| b.w.iter().chain(b.b.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.blocks.iter_mut().flat_map(|b| b.w.iter_mut().chain(b.b.iter_mut()))
    }

    fn matches(&self, arch: &Architecture) -> bool {
        let shapes = arch.block_shapes();
        shapes.len() == self.blocks.len()
            && shapes
                .iter()
                .zip(&self.blocks)
                .all(|(&(r, c), b)| b.rows == r && b.cols == c && b.w.len() == r * c && b.b.len() == r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub arch: Architecture,
    pub params: Params,
}

/// Activations kept from a forward pass for the backward pass.
pub struct ForwardCache {
    trunks: Vec<TrunkCache>,
    heads: Vec<HeadCache>,
}

struct ConvCache {
    in_side: usize,
    out_side: usize,
    cols: Array2<f64>,
    z: Array2<f64>,
}

struct TrunkCache {
    convs: Vec<ConvCache>,
    probs: Array2<f64>,
    feats: Vec<f64>,
}

struct HeadCache {
    z: Vec<f64>,
    /// Hidden activations followed by the keypoints.
    a: Vec<f64>,
}

/// Unfolds `x` (`channels x side*side`) into convolution patches, one column
/// per output pixel.
fn im2col(x: &Array2<f64>, side: usize, kernel: usize, stride: usize) -> (Array2<f64>, usize) {
    let channels = x.nrows();
    let pad = kernel / 2;
    let out = conv_out(side, kernel, stride);
    let mut cols = Array2::<f64>::zeros((channels * kernel * kernel, out * out));
    let src = x.as_slice().expect("contiguous");
    let dst = cols.as_slice_mut().expect("contiguous");
    let n_out = out * out;
    for c in 0..channels {
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (c * kernel + ky) * kernel + kx;
                let base = row * n_out;
                for oy in 0..out {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= side as isize {
                        continue;
                    }
                    let src_row = c * side * side + iy as usize * side;
                    for ox in 0..out {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < side as isize {
                            dst[base + oy * out + ox] = src[src_row + ix as usize];
                        }
                    }
                }
            }
        }
    }
    (cols, out)
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input grid.
fn col2im(dcols: &Array2<f64>, channels: usize, side: usize, out: usize, kernel: usize, stride: usize) -> Array2<f64> {
    let pad = kernel / 2;
    let mut dx = Array2::<f64>::zeros((channels, side * side));
    let src = dcols.as_slice().expect("contiguous");
    let dst = dx.as_slice_mut().expect("contiguous");
    let n_out = out * out;
    for c in 0..channels {
        for ky in 0..kernel {
            for kx in 0..kernel {
                let base = ((c * kernel + ky) * kernel + kx) * n_out;
                for oy in 0..out {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= side as isize {
                        continue;
                    }
                    let dst_row = c * side * side + iy as usize * side;
                    for ox in 0..out {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < side as isize {
                            dst[dst_row + ix as usize] += src[base + oy * out + ox];
                        }
                    }
                }
            }
        }
    }
    dx
}

fn avg_pool(pixels: &[f64], side: usize, factor: usize) -> (Array2<f64>, usize) {
    let out = side / factor;
    let norm = 1.0 / (factor * factor) as f64;
    let mut v = vec![0.0; out * out];
    for oy in 0..out {
        for ox in 0..out {
            let mut s = 0.0;
            for dy in 0..factor {
                let row = (oy * factor + dy) * side + ox * factor;
                s += pixels[row..row + factor].iter().sum::<f64>();
            }
            v[oy * out + ox] = s * norm;
        }
    }
    (Array2::from_shape_vec((1, out * out), v).expect("pool shape"), out)
}

fn add_bias(z: &mut Array2<f64>, b: &[f64]) {
    for (mut row, &bias) in z.axis_iter_mut(Axis(0)).zip(b) {
        row += bias;
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, limit: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
}

impl Model {
    /// Fresh model with seeded He/Glorot-uniform weights; output biases start
    /// at the image centre.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self, PredictorError> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::zeros(&arch);
        let per_trunk = arch.convs.len();
        let trunk_blocks = per_trunk * arch.trunks();
        for (i, block) in params.blocks.iter_mut().enumerate() {
            let (fan_in, fan_out) = (block.cols as f64, block.rows as f64);
            let is_output = i >= trunk_blocks && (i - trunk_blocks) % 2 == 1;
            let limit = if is_output {
                0.1 * (6.0 / (fan_in + fan_out)).sqrt()
            } else {
                match arch.activation {
                    Activation::Relu => (6.0 / fan_in).sqrt(),
                    Activation::Tanh => (6.0 / (fan_in + fan_out)).sqrt(),
                }
            };
            block.w = uniform(&mut rng, block.w.len(), limit);
            if is_output {
                block.b.iter_mut().for_each(|b| *b = 0.5);
            }
        }
        Ok(Self { arch, params })
    }

    pub fn from_parts(arch: Architecture, params: Params) -> Result<Self, PredictorError> {
        arch.validate()?;
        if !params.matches(&arch) {
            return Err(PredictorError::Architecture("parameter shapes do not match the architecture".into()));
        }
        Ok(Self { arch, params })
    }

    fn trunk_blocks(&self, t: usize) -> &[Block] {
        let n = self.arch.convs.len();
        &self.params.blocks[t * n..(t + 1) * n]
    }

    fn head_blocks(&self, h: usize) -> (&Block, &Block) {
        let base = self.arch.convs.len() * self.arch.trunks() + 2 * h;
        (&self.params.blocks[base], &self.params.blocks[base + 1])
    }

    fn check_input(&self, pixels: &[f64]) -> Result<(), PredictorError> {
        let side = self.arch.input_size;
        if pixels.len() != side * side {
            return Err(PredictorError::InputShape { expected: side, got: pixels.len() });
        }
        Ok(())
    }

    /// Eight outputs in `[0, 1]` input units.
    pub fn forward(&self, pixels: &[f64]) -> Result<[f64; 8], PredictorError> {
        Ok(self.forward_cached(pixels)?.0)
    }

    pub fn forward_cached(&self, pixels: &[f64]) -> Result<([f64; 8], ForwardCache), PredictorError> {
        self.check_input(pixels)?;
        let (pooled, side) = avg_pool(pixels, self.arch.input_size, self.arch.pool);
        let trunks: Vec<TrunkCache> = (0..self.arch.trunks()).map(|t| self.trunk_forward(t, &pooled, side)).collect();
        let mut out = [0.0; 8];
        let mut heads = Vec::with_capacity(2);
        for h in 0..2 {
            let feats = &trunks[h.min(trunks.len() - 1)].feats;
            let (d1, d2) = self.head_blocks(h);
            let z: Vec<f64> = (0..d1.rows).map(|r| d1.b[r] + dot(&d1.w[r * d1.cols..(r + 1) * d1.cols], feats)).collect();
            let a: Vec<f64> = z.iter().map(|&v| self.arch.activation.apply(v)).chain(feats.iter().copied()).collect();
            for r in 0..d2.rows {
                out[h * OUTPUTS_PER_HEAD + r] = d2.b[r] + dot(&d2.w[r * d2.cols..(r + 1) * d2.cols], &a);
            }
            heads.push(HeadCache { z, a });
        }
        Ok((out, ForwardCache { trunks, heads }))
    }

    fn trunk_forward(&self, t: usize, input: &Array2<f64>, mut side: usize) -> TrunkCache {
        let blocks = self.trunk_blocks(t);
        let last = blocks.len() - 1;
        let mut x = input.clone();
        let mut convs = Vec::with_capacity(blocks.len());
        for (i, (spec, block)) in self.arch.convs.iter().zip(blocks).enumerate() {
            let (cols, out) = im2col(&x, side, spec.kernel, spec.stride);
            let mut z = block.weights().dot(&cols);
            add_bias(&mut z, &block.b);
            x = if i == last { z.mapv(|v| v * self.arch.heatmap_gain) } else { z.mapv(|v| self.arch.activation.apply(v)) };
            convs.push(ConvCache { in_side: side, out_side: out, cols, z });
            side = out;
        }
        // spatial softmax over each heatmap
        let mut probs = x;
        let mut feats = Vec::with_capacity(2 * probs.nrows());
        for mut row in probs.axis_iter_mut(Axis(0)) {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|v| (v - m).exp());
            let s = row.sum();
            row /= s;
            let (mut ex, mut ey) = (0.0, 0.0);
            for (j, &p) in row.iter().enumerate() {
                ex += p * grid(j % side, side);
                ey += p * grid(j / side, side);
            }
            feats.push(ex);
            feats.push(ey);
        }
        TrunkCache { convs, probs, feats }
    }

    /// Accumulates into `grads` the gradient of `sum(d_out * outputs)`.
    pub fn backward(&self, cache: &ForwardCache, d_out: &[f64; 8], grads: &mut Params) {
        let trunks = self.arch.trunks();
        let n_conv = self.arch.convs.len();
        let mut d_feats = vec![vec![0.0; self.arch.features()]; trunks];
        for h in 0..2 {
            let t = h.min(trunks - 1);
            let feats = &cache.trunks[t].feats;
            let hc = &cache.heads[h];
            let (d1, d2) = self.head_blocks(h);
            let g_base = n_conv * trunks + 2 * h;
            let dy = &d_out[h * OUTPUTS_PER_HEAD..(h + 1) * OUTPUTS_PER_HEAD];
            let mut da = vec![0.0; d2.cols];
            {
                let g2 = &mut grads.blocks[g_base + 1];
                for r in 0..d2.rows {
                    g2.b[r] += dy[r];
                    for c in 0..d2.cols {
                        g2.w[r * d2.cols + c] += dy[r] * hc.a[c];
                        da[c] += d2.w[r * d2.cols + c] * dy[r];
                    }
                }
            }
            let hidden = d1.rows;
            for (acc, g) in d_feats[t].iter_mut().zip(&da[hidden..]) {
                *acc += g;
            }
            let dz: Vec<f64> = da[..hidden].iter().zip(&hc.z).map(|(g, &z)| g * self.arch.activation.slope(z)).collect();
            let g1 = &mut grads.blocks[g_base];
            for r in 0..d1.rows {
                g1.b[r] += dz[r];
                for c in 0..d1.cols {
                    g1.w[r * d1.cols + c] += dz[r] * feats[c];
                    d_feats[t][c] += d1.w[r * d1.cols + c] * dz[r];
                }
            }
        }
        for (t, df) in d_feats.iter().enumerate() {
            self.trunk_backward(t, &cache.trunks[t], df, grads);
        }
    }

    fn trunk_backward(&self, t: usize, tc: &TrunkCache, d_feats: &[f64], grads: &mut Params) {
        let n_conv = self.arch.convs.len();
        let side = tc.convs[n_conv - 1].out_side;
        let gain = self.arch.heatmap_gain;
        let mut dz = Array2::<f64>::zeros(tc.probs.raw_dim());
        for (k, (p_row, mut d_row)) in tc.probs.axis_iter(Axis(0)).zip(dz.axis_iter_mut(Axis(0))).enumerate() {
            let (ex, ey) = (tc.feats[2 * k], tc.feats[2 * k + 1]);
            let (gx, gy) = (d_feats[2 * k], d_feats[2 * k + 1]);
            for (j, (&p, d)) in p_row.iter().zip(d_row.iter_mut()).enumerate() {
                *d = gain * p * ((grid(j % side, side) - ex) * gx + (grid(j / side, side) - ey) * gy);
            }
        }
        let blocks = self.trunk_blocks(t);
        for i in (0..n_conv).rev() {
            let cc = &tc.convs[i];
            let g = &mut grads.blocks[t * n_conv + i];
            let dw = dz.dot(&cc.cols.t());
            for (acc, v) in g.w.iter_mut().zip(dw.iter()) {
                *acc += v;
            }
            for (acc, row) in g.b.iter_mut().zip(dz.axis_iter(Axis(0))) {
                *acc += row.sum();
            }
            if i == 0 {
                break;
            }
            let spec = self.arch.convs[i];
            let dcols = blocks[i].weights().t().dot(&dz);
            let in_channels = self.arch.convs[i - 1].out_channels;
            let da = col2im(&dcols, in_channels, cc.in_side, cc.out_side, spec.kernel, spec.stride);
            let prev_z = &tc.convs[i - 1].z;
            let act = self.arch.activation;
            dz = ndarray::Zip::from(&da).and(prev_z).map_collect(|&g, &z| g * act.slope(z));
        }
    }
}

/// Centre of cell `i` on a `side`-cell axis, in `[0, 1]` units.
fn grid(i: usize, side: usize) -> f64 {
    (i as f64 + 0.5) / side as f64
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny(heads: HeadLayout) -> Architecture {
        Architecture {
            input_size: 12,
            pool: 1,
            convs: vec![
                ConvSpec { out_channels: 2, kernel: 3, stride: 2 },
                ConvSpec { out_channels: 3, kernel: 3, stride: 1 },
            ],
            hidden: 4,
            activation: Activation::Tanh,
            heads,
            heatmap_gain: 3.0,
        }
    }

    #[test]
    fn im2col_and_col2im_are_adjoint() {
        // <im2col(x), y> == <x, col2im(y)> for random x, y
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(c, side, k, s) in &[(1, 7, 3, 2), (2, 6, 3, 1), (3, 5, 5, 2)] {
            let x = Array2::from_shape_fn((c, side * side), |_| rng.gen_range(-1.0..1.0));
            let (cols, out) = im2col(&x, side, k, s);
            let y = Array2::from_shape_fn(cols.raw_dim(), |_| rng.gen_range(-1.0..1.0));
            let lhs: f64 = (&cols * &y).sum();
            let rhs: f64 = (&x * &col2im(&y, c, side, out, k, s)).sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn standard_shapes_and_determinism() {
        let arch = Architecture::standard();
        arch.validate().unwrap();
        let a = Model::init(arch.clone(), 7).unwrap();
        let b = Model::init(arch, 7).unwrap();
        assert_eq!(a, b);
        let zeros = vec![0.0; INPUT_SIZE * INPUT_SIZE];
        let out = a.forward(&zeros).unwrap();
        assert!(out.iter().all(|v| v.is_finite()));
        assert_eq!(out, b.forward(&zeros).unwrap());
        assert!(matches!(a.forward(&[0.0; 10]), Err(PredictorError::InputShape { .. })));
    }

    #[test]
    fn rejects_bad_architectures() {
        let mut arch = tiny(HeadLayout::SharedTrunk);
        arch.convs[0].kernel = 2;
        assert!(Model::init(arch, 0).is_err());
        let mut arch = tiny(HeadLayout::SharedTrunk);
        arch.convs.clear();
        assert!(arch.validate().is_err());
        let m = Model::init(tiny(HeadLayout::SharedTrunk), 0).unwrap();
        assert!(Model::from_parts(tiny(HeadLayout::SeparateModels), m.params).is_err());
    }

    #[test]
    fn separate_layout_has_two_trunks() {
        let shared = Params::zeros(&tiny(HeadLayout::SharedTrunk));
        let separate = Params::zeros(&tiny(HeadLayout::SeparateModels));
        assert_eq!(separate.blocks.len(), shared.blocks.len() + 2);
    }
}
