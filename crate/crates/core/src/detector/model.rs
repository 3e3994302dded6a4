use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DetectorConfig, InputStem, MpcPooling};
use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::seeding;

/// Class index of adversarial images.
pub const ADV: usize = 0;
/// Class index of real images.
pub const REAL: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    /// `[out][in][3][3]`, flattened.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    fn zeros(in_ch: usize, out_ch: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            weight: vec![0.0; out_ch * in_ch * 9],
            bias: vec![0.0; out_ch],
        }
    }

    fn patch_len(&self) -> usize {
        self.in_ch * 9
    }
}

/// All trainable parameters. Gradients use the same type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub convs: Vec<ConvLayer>,
    /// Per-cell classification head, `[2][d]`.
    pub cell_w: Vec<f64>,
    pub cell_b: Vec<f64>,
    /// OOD head, `[2][d]`.
    pub ood_w: Vec<f64>,
    pub ood_b: Vec<f64>,
    /// OOD score MLP `1 -> hidden -> 1` with tanh.
    pub mlp_w1: Vec<f64>,
    pub mlp_b1: Vec<f64>,
    pub mlp_w2: Vec<f64>,
    pub mlp_b2: Vec<f64>,
}

impl Params {
    pub fn zeros(cfg: &DetectorConfig) -> Self {
        let mut convs = Vec::with_capacity(4);
        let mut in_ch = 3;
        for &out in &cfg.channels {
            convs.push(ConvLayer::zeros(in_ch, out));
            in_ch = out;
        }
        let d = cfg.embed_dim();
        let h = cfg.mlp_hidden;
        Self {
            convs,
            cell_w: vec![0.0; 2 * d],
            cell_b: vec![0.0; 2],
            ood_w: vec![0.0; 2 * d],
            ood_b: vec![0.0; 2],
            mlp_w1: vec![0.0; h],
            mlp_b1: vec![0.0; h],
            mlp_w2: vec![0.0; h],
            mlp_b2: vec![0.0; 1],
        }
    }

    /// Named parameter blocks in a fixed order.
    pub fn blocks(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("conv{i}.weight"), &c.weight));
            out.push((format!("conv{i}.bias"), &c.bias));
        }
        out.push(("cell.weight".into(), &self.cell_w));
        out.push(("cell.bias".into(), &self.cell_b));
        out.push(("ood.weight".into(), &self.ood_w));
        out.push(("ood.bias".into(), &self.ood_b));
        out.push(("mlp.w1".into(), &self.mlp_w1));
        out.push(("mlp.b1".into(), &self.mlp_b1));
        out.push(("mlp.w2".into(), &self.mlp_w2));
        out.push(("mlp.b2".into(), &self.mlp_b2));
        out
    }

    /// Mutable blocks, same order as [`Params::blocks`].
    pub fn blocks_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::new();
        for c in &mut self.convs {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out.extend([
            &mut self.cell_w,
            &mut self.cell_b,
            &mut self.ood_w,
            &mut self.ood_b,
            &mut self.mlp_w1,
            &mut self.mlp_b1,
            &mut self.mlp_w2,
            &mut self.mlp_b2,
        ]);
        out
    }

    pub fn count(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.blocks().iter().all(|(_, b)| b.iter().all(|v| v.is_finite()))
    }

    /// `self += other * scale`, block by block.
    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        let src = other.blocks();
        for (dst, (_, s)) in self.blocks_mut().into_iter().zip(src) {
            for (d, v) in dst.iter_mut().zip(s) {
                *d += v * scale;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitRecord {
    pub seed: u64,
    pub scheme: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    pub config: DetectorConfig,
    pub params: Params,
    pub init: InitRecord,
}

impl DetectorModel {
    /// Fan-in scaled uniform initialization: convolutions use
    /// `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, linear layers
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`. Biases start at zero.
    pub fn init(config: &DetectorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seeding::rng(seeding::derive(config.seed, &[0x1417]));
        let mut params = Params::zeros(config);
        let mut fill = |w: &mut [f64], bound: f64| {
            for v in w {
                *v = rng.random_range(-bound..=bound);
            }
        };
        for c in &mut params.convs {
            let bound = (6.0 / c.patch_len() as f64).sqrt();
            fill(&mut c.weight, bound);
        }
        let d = config.embed_dim() as f64;
        fill(&mut params.cell_w, 1.0 / d.sqrt());
        fill(&mut params.ood_w, 1.0 / d.sqrt());
        fill(&mut params.mlp_w1, 1.0);
        fill(&mut params.mlp_w2, 1.0 / (config.mlp_hidden as f64).sqrt());
        Ok(Self {
            config: config.clone(),
            params,
            init: InitRecord {
                seed: config.seed,
                scheme: "fan_in_uniform".to_string(),
            },
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }
}

/// `N x N` grid of `d`-dimensional cell features plus their spatial mean.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub grid: usize,
    pub dim: usize,
    /// Cell-major: `(i * grid + j) * dim + k`.
    pub cells: Vec<f64>,
    pub pooled: Vec<f64>,
}

impl FeatureMap {
    pub fn cell(&self, i: usize, j: usize) -> &[f64] {
        let s = (i * self.grid + j) * self.dim;
        &self.cells[s..s + self.dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionScore {
    /// Row-major per-cell logits.
    pub cell_logits: Vec<[f64; 2]>,
    /// Cell chosen by the pooling rule (for per-class pooling, the cell of the
    /// adversarial maximum).
    pub selected: (usize, usize),
    pub logits: [f64; 2],
    pub probs: [f64; 2],
    /// 0 = adversarial, 1 = real. Ties go to 0.
    pub label: u8,
}

impl PredictionScore {
    /// Adversarial probability, used as the detection score.
    pub fn score(&self) -> f64 {
        self.probs[ADV]
    }
}

pub fn softmax2(z: [f64; 2]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let e0 = (z[0] - m).exp();
    let e1 = (z[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

pub(crate) fn logsumexp2(z: [f64; 2]) -> f64 {
    let m = z[0].max(z[1]);
    m + ((z[0] - m).exp() + (z[1] - m).exp()).ln()
}

/// `-log softmax(logits)[label]`, evaluated as `logsumexp - logit`.
pub fn cross_entropy(logits: [f64; 2], label: usize) -> f64 {
    logsumexp2(logits) - logits[label]
}

/// Margin pooling: the cell maximizing `z[adv] - z[real]`, first in row-major
/// order on ties, and its logits unchanged.
pub fn mpc_select(cell_logits: &[[f64; 2]]) -> (usize, [f64; 2]) {
    let mut best = 0;
    let mut best_margin = f64::NEG_INFINITY;
    for (i, z) in cell_logits.iter().enumerate() {
        let m = z[ADV] - z[REAL];
        if m > best_margin {
            best_margin = m;
            best = i;
        }
    }
    (best, cell_logits[best])
}

/// Per-class max pooling: returns the argmax cell of each class.
pub(crate) fn per_class_select(cell_logits: &[[f64; 2]]) -> [usize; 2] {
    let mut arg = [0usize; 2];
    for k in 0..2 {
        for (i, z) in cell_logits.iter().enumerate() {
            if z[k] > cell_logits[arg[k]][k] {
                arg[k] = i;
            }
        }
    }
    arg
}

pub(crate) fn pool(pooling: MpcPooling, cell_logits: &[[f64; 2]]) -> ([usize; 2], [f64; 2]) {
    match pooling {
        MpcPooling::Margin => {
            let (i, z) = mpc_select(cell_logits);
            ([i, i], z)
        }
        MpcPooling::PerClassMax => {
            let arg = per_class_select(cell_logits);
            (arg, [cell_logits[arg[0]][0], cell_logits[arg[1]][1]])
        }
    }
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct ForwardCache {
    /// Side of each layer's input.
    pub sides: [usize; 4],
    /// im2col matrix per layer: `positions x (in_ch * 9)`.
    pub cols: Vec<Vec<f64>>,
    /// Post-ReLU output per layer, `[ch][y][x]`.
    pub outs: Vec<Vec<f64>>,
    pub features: FeatureMap,
    pub score: PredictionScore,
    /// Cells feeding each pooled class logit.
    pub pooled_cells: [usize; 2],
}

#[inline]
fn src(side: usize, o: usize, k: usize) -> usize {
    (2 * o + k).saturating_sub(1).min(side - 1)
}

fn im2col(input: &[f64], in_ch: usize, side: usize) -> Vec<f64> {
    let out_side = side / 2;
    let plen = in_ch * 9;
    let mut cols = vec![0.0; out_side * out_side * plen];
    for oy in 0..out_side {
        for ox in 0..out_side {
            let base = (oy * out_side + ox) * plen;
            for c in 0..in_ch {
                let plane = &input[c * side * side..(c + 1) * side * side];
                for ky in 0..3 {
                    let row = src(side, oy, ky) * side;
                    for kx in 0..3 {
                        cols[base + c * 9 + ky * 3 + kx] = plane[row + src(side, ox, kx)];
                    }
                }
            }
        }
    }
    cols
}

/// Scatters patch gradients back onto the input plane (inverse of `im2col`).
pub(crate) fn col2im(dcols: &[f64], in_ch: usize, side: usize) -> Vec<f64> {
    let out_side = side / 2;
    let plen = in_ch * 9;
    let mut din = vec![0.0; in_ch * side * side];
    for oy in 0..out_side {
        for ox in 0..out_side {
            let base = (oy * out_side + ox) * plen;
            for c in 0..in_ch {
                let plane = &mut din[c * side * side..(c + 1) * side * side];
                for ky in 0..3 {
                    let row = src(side, oy, ky) * side;
                    for kx in 0..3 {
                        plane[row + src(side, ox, kx)] += dcols[base + c * 9 + ky * 3 + kx];
                    }
                }
            }
        }
    }
    din
}

fn conv_relu(layer: &ConvLayer, cols: &[f64], positions: usize) -> Vec<f64> {
    let plen = layer.patch_len();
    let mut out = vec![0.0; layer.out_ch * positions];
    for p in 0..positions {
        let patch = &cols[p * plen..(p + 1) * plen];
        for o in 0..layer.out_ch {
            let w = &layer.weight[o * plen..(o + 1) * plen];
            let z = layer.bias[o] + w.iter().zip(patch).map(|(a, b)| a * b).sum::<f64>();
            out[o * positions + p] = z.max(0.0);
        }
    }
    out
}

pub(crate) fn cell_logits(params: &Params, features: &FeatureMap) -> Vec<[f64; 2]> {
    let d = features.dim;
    (0..features.grid * features.grid)
        .map(|c| {
            let f = &features.cells[c * d..(c + 1) * d];
            std::array::from_fn(|k| {
                params.cell_b[k] + params.cell_w[k * d..(k + 1) * d].iter().zip(f).map(|(a, b)| a * b).sum::<f64>()
            })
        })
        .collect()
}

/// `gain * (x - mean of the 3x3 neighbourhood)` on each `side x side` plane.
fn high_pass(x: &[f64], side: usize, gain: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (plane, dst) in x.chunks_exact(side * side).zip(out.chunks_exact_mut(side * side)) {
        for y in 0..side {
            for xx in 0..side {
                let mut s = 0.0;
                for dy in [-1isize, 0, 1] {
                    let yy = (y as isize + dy).clamp(0, side as isize - 1) as usize;
                    for dx in [-1isize, 0, 1] {
                        let xc = (xx as isize + dx).clamp(0, side as isize - 1) as usize;
                        s += plane[yy * side + xc];
                    }
                }
                dst[y * side + xx] = gain * (plane[y * side + xx] - s / 9.0);
            }
        }
    }
    out
}

pub(crate) fn forward_cached(model: &DetectorModel, img: &ImageTensor) -> Result<ForwardCache> {
    let cfg = &model.config;
    let side = cfg.input_side;
    if img.shape() != (side, side) {
        return Err(Error::ShapeMismatch {
            expected: (side, side),
            actual: img.shape(),
        });
    }
    // HWC -> CHW.
    let mut x = vec![0.0; 3 * side * side];
    for (i, px) in img.data().chunks_exact(3).enumerate() {
        for c in 0..3 {
            x[c * side * side + i] = px[c];
        }
    }
    if let InputStem::HighPass { gain } = cfg.stem {
        x = high_pass(&x, side, gain);
    }
    let mut sides = [0usize; 4];
    let mut cols = Vec::with_capacity(4);
    let mut outs = Vec::with_capacity(4);
    let mut cur_side = side;
    for (l, layer) in model.params.convs.iter().enumerate() {
        sides[l] = cur_side;
        let input = if l == 0 { &x } else { &outs[l - 1] };
        let c = im2col(input, layer.in_ch, cur_side);
        cur_side /= 2;
        let out = conv_relu(layer, &c, cur_side * cur_side);
        cols.push(c);
        outs.push(out);
    }
    let n = cur_side;
    let d = cfg.embed_dim();
    let last = outs.last().expect("four layers");
    let mut cells = vec![0.0; n * n * d];
    let mut pooled = vec![0.0; d];
    for k in 0..d {
        for c in 0..n * n {
            let v = last[k * n * n + c];
            cells[c * d + k] = v;
            pooled[k] += v;
        }
        pooled[k] /= (n * n) as f64;
    }
    let features = FeatureMap {
        grid: n,
        dim: d,
        cells,
        pooled,
    };
    let logits_grid = cell_logits(&model.params, &features);
    let (pooled_cells, logits) = pool(cfg.pooling, &logits_grid);
    let probs = softmax2(logits);
    let label = if probs[ADV] >= probs[REAL] { 0 } else { 1 };
    let sel = pooled_cells[ADV];
    let score = PredictionScore {
        cell_logits: logits_grid,
        selected: (sel / n, sel % n),
        logits,
        probs,
        label,
    };
    Ok(ForwardCache {
        sides,
        cols,
        outs,
        features,
        score,
        pooled_cells,
    })
}

pub fn forward(model: &DetectorModel, img: &ImageTensor) -> Result<(FeatureMap, PredictionScore)> {
    let cache = forward_cached(model, img)?;
    Ok((cache.features, cache.score))
}

pub fn predict(model: &DetectorModel, img: &ImageTensor) -> Result<PredictionScore> {
    Ok(forward_cached(model, img)?.score)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn model(side: usize, seed: u64) -> DetectorModel {
        DetectorModel::init(&DetectorConfig {
            input_side: side,
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = model(64, 3);
        let b = model(64, 3);
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, model(64, 4).params);
        for c in &a.params.convs {
            assert!(c.bias.iter().all(|v| *v == 0.0));
        }
        assert!(a.params.cell_b.iter().chain(&a.params.ood_b).chain(&a.params.mlp_b1).all(|v| *v == 0.0));
        assert_eq!(a.params.mlp_b2, vec![0.0]);
    }

    #[test]
    fn parameter_count_matches_architecture() {
        // conv: 8*3*9+8, 16*8*9+16, 32*16*9+32, 32*32*9+32 = 224+1168+4640+9248
        // heads: 2 * (2*32 + 2); mlp: 16 + 16 + 16 + 1.
        let expected = 224 + 1168 + 4640 + 9248 + 2 * 66 + 49;
        assert_eq!(expected, 15_461);
        assert_eq!(model(64, 0).param_count(), expected);
        assert_eq!(model(128, 0).param_count(), expected);
    }

    #[test]
    fn zero_input_gives_uniform_prediction() {
        let m = model(64, 1);
        let img = ImageTensor::filled(64, 64, 0.0).unwrap();
        let (features, score) = forward(&m, &img).unwrap();
        assert!(features.cells.iter().all(|v| *v == 0.0));
        assert!(score.cell_logits.iter().all(|z| *z == [0.0, 0.0]));
        assert_eq!(score.probs, [0.5, 0.5]);
        assert_eq!(score.selected, (0, 0));
        assert_eq!(score.label, 0);
    }

    #[test]
    fn uniform_input_gives_identical_cells() {
        // With replicate padding a constant image yields constant activations
        // everywhere, so every cell carries the same logits.
        let m = model(64, 2);
        let img = ImageTensor::filled(64, 64, 0.6).unwrap();
        let (features, score) = forward(&m, &img).unwrap();
        assert_eq!(features.grid, 4);
        let first = score.cell_logits[0];
        for z in &score.cell_logits {
            assert!((z[0] - first[0]).abs() < 1e-12 && (z[1] - first[1]).abs() < 1e-12);
        }
        assert!((score.probs[0] + score.probs[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn forward_rejects_wrong_size() {
        let m = model(64, 0);
        assert!(matches!(
            forward(&m, &ImageTensor::filled(32, 32, 0.1).unwrap()),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn mpc_examples() {
        let equal = vec![[0.3, -0.2]; 9];
        assert_eq!(mpc_select(&equal).0, 0);
        let mut grid = vec![[-10.0, 10.0]; 16];
        grid[6] = [10.0, -10.0];
        assert_eq!(mpc_select(&grid), (6, [10.0, -10.0]));
        let shifted: Vec<[f64; 2]> = grid.iter().map(|z| [z[0] + 3.5, z[1] + 3.5]).collect();
        let (i, z) = mpc_select(&shifted);
        assert_eq!(i, 6);
        let (p, q) = (softmax2(z), softmax2([10.0, -10.0]));
        assert!((p[0] - q[0]).abs() < 1e-12);
    }

    #[test]
    fn mpc_permutation_moves_only_the_index() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let grid: Vec<[f64; 2]> = (0..16).map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]).collect();
        let (i, z) = mpc_select(&grid);
        let mut perm = grid.clone();
        perm.reverse();
        let (j, w) = mpc_select(&perm);
        assert_eq!(j, 15 - i);
        assert_eq!(z, w);
    }

    #[test]
    fn cross_entropy_examples() {
        assert!((cross_entropy([0.0, 0.0], 0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((cross_entropy([0.0, 0.0], 1) - 0.693_147_180_559_945_3).abs() < 1e-15);
        assert!(cross_entropy([20.0, -20.0], 0) < 1e-8);
        assert!(cross_entropy([700.0, -700.0], 1).is_finite());
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)> for random x, y.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let (ch, side) = (3, 8);
        let x: Vec<f64> = (0..ch * side * side).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cols = im2col(&x, ch, side);
        let y: Vec<f64> = (0..cols.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(col2im(&y, ch, side)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
