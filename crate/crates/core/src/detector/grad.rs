//! Exact gradients of the training loss by reverse-mode differentiation.

use rayon::prelude::*;

use super::model::{col2im, forward_cached, ForwardCache};
use super::{cross_entropy, softmax2, DetectorModel, Params};
use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::ood::{uncertainty_backward, uncertainty_loss, VirtualOutlierSet};

/// Loss values of one mini-batch and the pooled features it produced.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    /// Mean cross-entropy of the pooled logits.
    pub cls: f64,
    /// Uncertainty loss; zero when no outliers were supplied.
    pub unc: f64,
    pub total: f64,
    /// Spatially pooled features, one per image.
    pub pooled: Vec<Vec<f64>>,
    /// Number of correctly classified images.
    pub correct: usize,
}

fn check_batch(batch: &[ImageTensor], labels: &[u8]) -> Result<()> {
    if batch.is_empty() || batch.len() != labels.len() {
        return Err(Error::Domain(format!(
            "batch of {} images with {} labels",
            batch.len(),
            labels.len()
        )));
    }
    if labels.iter().any(|l| *l > 1) {
        return Err(Error::Domain("labels must be 0 (adversarial) or 1 (real)".to_string()));
    }
    Ok(())
}

fn forward_batch(model: &DetectorModel, batch: &[ImageTensor]) -> Result<Vec<ForwardCache>> {
    batch.par_iter().map(|img| forward_cached(model, img)).collect()
}

fn real_features(caches: &[ForwardCache], labels: &[u8]) -> Vec<Vec<f64>> {
    caches
        .iter()
        .zip(labels)
        .filter(|(_, l)| **l == 1)
        .map(|(c, _)| c.features.pooled.clone())
        .collect()
}

fn assemble(caches: &[ForwardCache], labels: &[u8], unc: f64, beta: f64) -> BatchLoss {
    let cls = caches
        .iter()
        .zip(labels)
        .map(|(c, l)| cross_entropy(c.score.logits, *l as usize))
        .sum::<f64>()
        / caches.len() as f64;
    BatchLoss {
        cls,
        unc,
        total: crate::ood::combined_loss(cls, unc, beta),
        pooled: caches.iter().map(|c| c.features.pooled.clone()).collect(),
        correct: caches.iter().zip(labels).filter(|(c, l)| c.score.label == **l).count(),
    }
}

/// Loss of a batch without gradients.
pub fn total_loss(
    model: &DetectorModel,
    batch: &[ImageTensor],
    labels: &[u8],
    outliers: Option<&VirtualOutlierSet>,
    beta: f64,
) -> Result<BatchLoss> {
    check_batch(batch, labels)?;
    let caches = forward_batch(model, batch)?;
    let reals = real_features(&caches, labels);
    let unc = match outliers {
        Some(o) if !reals.is_empty() && !o.samples.is_empty() => uncertainty_loss(model, &reals, o),
        _ => 0.0,
    };
    Ok(assemble(&caches, labels, unc, beta))
}

/// Backpropagates one image. `d_logits` is the gradient of the loss with
/// respect to the pooled logits; `d_pooled` (optional) with respect to the
/// spatially pooled feature.
fn backward_one(
    model: &DetectorModel,
    cache: &ForwardCache,
    d_logits: [f64; 2],
    d_pooled: Option<&[f64]>,
) -> Params {
    let p = &model.params;
    let mut g = Params::zeros(&model.config);
    let f = &cache.features;
    let (n, d) = (f.grid, f.dim);
    let cells = n * n;

    // d loss / d cell features, cell-major.
    let mut d_cells = vec![0.0; cells * d];
    for k in 0..2 {
        let c = cache.pooled_cells[k];
        let feat = &f.cells[c * d..(c + 1) * d];
        g.cell_b[k] += d_logits[k];
        for i in 0..d {
            g.cell_w[k * d + i] += d_logits[k] * feat[i];
            d_cells[c * d + i] += d_logits[k] * p.cell_w[k * d + i];
        }
    }
    if let Some(dp) = d_pooled {
        let share = 1.0 / cells as f64;
        for c in 0..cells {
            for i in 0..d {
                d_cells[c * d + i] += dp[i] * share;
            }
        }
    }

    // Back to channel-major layout of the last activation.
    let mut d_out = vec![0.0; d * cells];
    for c in 0..cells {
        for k in 0..d {
            d_out[k * cells + c] = d_cells[c * d + k];
        }
    }

    for l in (0..p.convs.len()).rev() {
        let layer = &p.convs[l];
        let out = &cache.outs[l];
        let cols = &cache.cols[l];
        let positions = out.len() / layer.out_ch;
        let plen = layer.in_ch * 9;
        let gl = &mut g.convs[l];
        let mut d_cols = if l > 0 { vec![0.0; positions * plen] } else { Vec::new() };
        for o in 0..layer.out_ch {
            let w = &layer.weight[o * plen..(o + 1) * plen];
            for pos in 0..positions {
                let idx = o * positions + pos;
                if out[idx] <= 0.0 {
                    continue;
                }
                let dz = d_out[idx];
                if dz == 0.0 {
                    continue;
                }
                gl.bias[o] += dz;
                let patch = &cols[pos * plen..(pos + 1) * plen];
                let gw = &mut gl.weight[o * plen..(o + 1) * plen];
                for (gwi, x) in gw.iter_mut().zip(patch) {
                    *gwi += dz * x;
                }
                if l > 0 {
                    let dc = &mut d_cols[pos * plen..(pos + 1) * plen];
                    for (dci, wi) in dc.iter_mut().zip(w) {
                        *dci += dz * wi;
                    }
                }
            }
        }
        if l > 0 {
            d_out = col2im(&d_cols, layer.in_ch, cache.sides[l]);
        }
    }
    g
}

/// Loss and parameter gradient of
/// `mean CE + beta * L_unc` over a batch. Label 0 is adversarial, 1 is real.
pub fn backward(
    model: &DetectorModel,
    batch: &[ImageTensor],
    labels: &[u8],
    outliers: Option<&VirtualOutlierSet>,
    beta: f64,
) -> Result<(Params, BatchLoss)> {
    check_batch(batch, labels)?;
    let caches = forward_batch(model, batch)?;
    let reals = real_features(&caches, labels);
    let mut grad = Params::zeros(&model.config);

    let mut unc = 0.0;
    let mut d_pooled: Vec<Option<Vec<f64>>> = vec![None; batch.len()];
    if let Some(o) = outliers {
        if !reals.is_empty() && !o.samples.is_empty() {
            let (loss, d_real) = uncertainty_backward(model, &reals, o, beta, &mut grad);
            unc = loss;
            let mut it = d_real.into_iter();
            for (slot, l) in d_pooled.iter_mut().zip(labels) {
                if *l == 1 {
                    *slot = it.next();
                }
            }
        }
    }

    let b = batch.len() as f64;
    let per_image: Vec<Params> = caches
        .par_iter()
        .zip(labels.par_iter())
        .zip(d_pooled.par_iter())
        .map(|((cache, label), dp)| {
            let probs = softmax2(cache.score.logits);
            let mut dz = [probs[0] / b, probs[1] / b];
            dz[*label as usize] -= 1.0 / b;
            backward_one(model, cache, dz, dp.as_deref())
        })
        .collect();
    for g in &per_image {
        grad.add_scaled(g, 1.0);
    }
    Ok((grad, assemble(&caches, labels, unc, beta)))
}
