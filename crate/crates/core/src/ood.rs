//! Decision-boundary regularization by virtual outliers.
//!
//! Pooled features of real images are modelled as a multivariate Gaussian.
//! Candidates drawn from that Gaussian are ranked by log-density and the
//! least likely ones become virtual outliers. The uncertainty loss trains an
//! OOD score, an MLP applied to the negative energy of a linear head, to be
//! high on the outliers and low on real features.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::detector::{DetectorModel, OodScoreInput, Params};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OodConfig {
    /// Candidates drawn per sampling round.
    pub candidates: usize,
    /// Lowest-density candidates kept as outliers.
    pub keep: usize,
    /// Ridge added to the covariance diagonal.
    pub ridge: f64,
    pub bank_capacity: usize,
}

impl Default for OodConfig {
    fn default() -> Self {
        Self {
            candidates: 1000,
            keep: 20,
            ridge: 1e-4,
            bank_capacity: 1024,
        }
    }
}

impl OodConfig {
    pub fn validate(&self) -> Result<()> {
        if self.keep == 0 || self.keep > self.candidates {
            return Err(Error::Config(format!(
                "outlier keep count {} must be in 1..={}",
                self.keep, self.candidates
            )));
        }
        if !(self.ridge >= 0.0) || self.bank_capacity < 2 {
            return Err(Error::Config("ridge must be >= 0 and bank capacity >= 2".to_string()));
        }
        Ok(())
    }
}

/// Fitted mean and ridge-regularized covariance with its Cholesky factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GaussianRecord", into = "GaussianRecord")]
pub struct GaussianModel {
    pub mean: Vec<f64>,
    /// Unbiased sample covariance plus `ridge * I`, row-major `d x d`.
    pub covariance: Vec<f64>,
    /// Lower-triangular Cholesky factor of `covariance`.
    chol: Vec<f64>,
    pub count: usize,
    pub ridge: f64,
    /// Set when fewer than `d + 1` samples were available, so the covariance
    /// is singular without the ridge.
    pub underdetermined: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GaussianRecord {
    mean: Vec<f64>,
    covariance: Vec<f64>,
    count: usize,
    ridge: f64,
}

impl From<GaussianModel> for GaussianRecord {
    fn from(g: GaussianModel) -> Self {
        Self {
            mean: g.mean,
            covariance: g.covariance,
            count: g.count,
            ridge: g.ridge,
        }
    }
}

impl TryFrom<GaussianRecord> for GaussianModel {
    type Error = Error;

    fn try_from(r: GaussianRecord) -> Result<Self> {
        GaussianModel::from_parts(r.mean, r.covariance, r.count, r.ridge)
    }
}

fn cholesky(a: &[f64], d: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return Err(Error::Domain(
                        "covariance is not positive definite".to_string(),
                    ));
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Ok(l)
}

impl GaussianModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Rebuilds a model from stored mean and covariance.
    pub fn from_parts(mean: Vec<f64>, covariance: Vec<f64>, count: usize, ridge: f64) -> Result<Self> {
        let d = mean.len();
        if covariance.len() != d * d {
            return Err(Error::Domain("covariance shape does not match mean".to_string()));
        }
        let chol = cholesky(&covariance, d)?;
        Ok(Self {
            mean,
            covariance,
            chol,
            count,
            ridge,
            underdetermined: count < d + 1,
        })
    }

    /// Squared Mahalanobis distance, by forward substitution with the
    /// Cholesky factor.
    pub fn mahalanobis_sq(&self, v: &[f64]) -> f64 {
        let d = self.dim();
        let mut y = vec![0.0; d];
        for i in 0..d {
            let mut s = v[i] - self.mean[i];
            for k in 0..i {
                s -= self.chol[i * d + k] * y[k];
            }
            y[i] = s / self.chol[i * d + i];
        }
        y.iter().map(|t| t * t).sum()
    }

    /// `ln |Sigma|`.
    pub fn log_det(&self) -> f64 {
        let d = self.dim();
        2.0 * (0..d).map(|i| self.chol[i * d + i].ln()).sum::<f64>()
    }

    /// Draws `mean + L z` with `z ~ N(0, I)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dim();
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        (0..d)
            .map(|i| self.mean[i] + (0..=i).map(|k| self.chol[i * d + k] * z[k]).sum::<f64>())
            .collect()
    }

    /// Short hex digest identifying the fitted parameters.
    pub fn fingerprint(&self) -> String {
        let mut bytes = Vec::with_capacity(8 * (self.mean.len() + self.covariance.len()));
        for v in self.mean.iter().chain(&self.covariance) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        crate::fixtures::sha256_hex(&bytes)[..16].to_string()
    }
}

/// Sample mean and unbiased covariance plus `ridge * I`.
pub fn fit_gaussian(features: &[Vec<f64>], ridge: f64) -> Result<GaussianModel> {
    let n = features.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 feature vectors, got {n}"
        )));
    }
    let d = features[0].len();
    if d == 0 || features.iter().any(|f| f.len() != d) {
        return Err(Error::Domain("feature vectors must share a nonzero dimension".to_string()));
    }
    let mut mean = vec![0.0; d];
    for f in features {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![0.0; d * d];
    for f in features {
        for i in 0..d {
            let di = f[i] - mean[i];
            for j in 0..=i {
                cov[i * d + j] += di * (f[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in 0..=i {
            let v = cov[i * d + j] / (n - 1) as f64;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
        cov[i * d + i] += ridge;
    }
    if n < d + 1 {
        log::warn!("fitting a {d}-dimensional Gaussian to {n} samples; covariance relies on the ridge");
    }
    GaussianModel::from_parts(mean, cov, n, ridge)
}

/// Multivariate normal log-density including the normalizer.
pub fn log_density(g: &GaussianModel, v: &[f64]) -> f64 {
    let d = g.dim() as f64;
    -0.5 * g.mahalanobis_sq(v) - 0.5 * d * std::f64::consts::TAU.ln() - 0.5 * g.log_det()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VirtualOutlierSet {
    pub samples: Vec<Vec<f64>>,
    /// Every kept sample's log-density is strictly below this value: the
    /// smallest log-density among the discarded candidates, or `+inf` when all
    /// candidates are kept.
    pub cutoff: f64,
    pub source: String,
}

/// Draws `num_candidates` samples and keeps the `keep` with the lowest
/// log-density.
pub fn sample_virtual_outliers<R: Rng + ?Sized>(
    g: &GaussianModel,
    num_candidates: usize,
    keep: usize,
    rng: &mut R,
) -> Result<VirtualOutlierSet> {
    if keep == 0 || keep > num_candidates {
        return Err(Error::Config(format!(
            "keep {keep} must be in 1..={num_candidates}"
        )));
    }
    let mut scored: Vec<(f64, Vec<f64>)> = (0..num_candidates)
        .map(|_| {
            let v = g.sample(rng);
            (log_density(g, &v), v)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let cutoff = scored.get(keep).map_or(f64::INFINITY, |s| s.0);
    scored.truncate(keep);
    Ok(VirtualOutlierSet {
        samples: scored.into_iter().map(|(_, v)| v).collect(),
        cutoff,
        source: g.fingerprint(),
    })
}

/// Bounded FIFO of pooled real-image features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    capacity: usize,
    items: VecDeque<Vec<f64>>,
}

impl FeatureBank {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity),
        }
    }

    /// Adds a feature of an image with `label`; only real images (label 1) are
    /// kept.
    pub fn push(&mut self, feature: Vec<f64>, label: u8) {
        if label != 1 {
            return;
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(feature);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn features(&self) -> Vec<Vec<f64>> {
        self.items.iter().cloned().collect()
    }
}

fn head_logits(model: &DetectorModel, feature: &[f64]) -> [f64; 2] {
    let p = &model.params;
    let d = feature.len();
    std::array::from_fn(|k| {
        p.ood_b[k] + p.ood_w[k * d..(k + 1) * d].iter().zip(feature).map(|(a, b)| a * b).sum::<f64>()
    })
}

/// `-logsumexp` of the OOD head logits.
pub fn energy(model: &DetectorModel, feature: &[f64]) -> f64 {
    -crate::detector::logsumexp2(head_logits(model, feature))
}

fn mlp_input(model: &DetectorModel, z: [f64; 2]) -> f64 {
    match model.config.ood_input {
        OodScoreInput::NegEnergy => crate::detector::logsumexp2(z),
        OodScoreInput::NegLinear => -z[0],
    }
}

fn mlp(params: &Params, a: f64) -> (f64, Vec<f64>) {
    let h: Vec<f64> = params
        .mlp_w1
        .iter()
        .zip(&params.mlp_b1)
        .map(|(w, b)| (w * a + b).tanh())
        .collect();
    let s = params.mlp_b2[0] + h.iter().zip(&params.mlp_w2).map(|(x, w)| x * w).sum::<f64>();
    (s, h)
}

/// OOD score `phi(-E(feature))`: high means "looks like an outlier".
pub fn ood_score(model: &DetectorModel, feature: &[f64]) -> f64 {
    let a = mlp_input(model, head_logits(model, feature));
    mlp(&model.params, a).0
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `mean_v softplus(-s(v)) + mean_x softplus(s(x))`.
pub fn uncertainty_loss(model: &DetectorModel, real_features: &[Vec<f64>], outliers: &VirtualOutlierSet) -> f64 {
    let out = outliers
        .samples
        .iter()
        .map(|v| softplus(-ood_score(model, v)))
        .sum::<f64>()
        / outliers.samples.len() as f64;
    let real = real_features
        .iter()
        .map(|x| softplus(ood_score(model, x)))
        .sum::<f64>()
        / real_features.len() as f64;
    out + real
}

/// Uncertainty loss and its gradient. Parameter gradients are added into
/// `grad` scaled by `weight`; the returned vectors are the (weighted)
/// gradients with respect to each real feature.
pub(crate) fn uncertainty_backward(
    model: &DetectorModel,
    real_features: &[Vec<f64>],
    outliers: &VirtualOutlierSet,
    weight: f64,
    grad: &mut Params,
) -> (f64, Vec<Vec<f64>>) {
    let p = &model.params;
    let d = model.config.embed_dim();
    let mut loss = 0.0;
    let mut d_real = Vec::with_capacity(real_features.len());

    // One term: softplus(sign * s(u)) / count.
    let mut term = |u: &[f64], sign: f64, count: usize, want_input_grad: bool| -> Option<Vec<f64>> {
        let z = head_logits(model, u);
        let a = mlp_input(model, z);
        let (s, h) = mlp(p, a);
        loss += softplus(sign * s) / count as f64;
        let ds = weight * sign * sigmoid(sign * s) / count as f64;
        grad.mlp_b2[0] += ds;
        let mut da = 0.0;
        for j in 0..h.len() {
            grad.mlp_w2[j] += ds * h[j];
            let dpre = ds * p.mlp_w2[j] * (1.0 - h[j] * h[j]);
            grad.mlp_w1[j] += dpre * a;
            grad.mlp_b1[j] += dpre;
            da += dpre * p.mlp_w1[j];
        }
        let dz = match model.config.ood_input {
            OodScoreInput::NegEnergy => {
                let sm = crate::detector::softmax2(z);
                [da * sm[0], da * sm[1]]
            }
            OodScoreInput::NegLinear => [-da, 0.0],
        };
        for k in 0..2 {
            grad.ood_b[k] += dz[k];
            for i in 0..d {
                grad.ood_w[k * d + i] += dz[k] * u[i];
            }
        }
        want_input_grad.then(|| {
            (0..d)
                .map(|i| dz[0] * p.ood_w[i] + dz[1] * p.ood_w[d + i])
                .collect()
        })
    };

    for v in &outliers.samples {
        term(v, -1.0, outliers.samples.len(), false);
    }
    for x in real_features {
        d_real.push(term(x, 1.0, real_features.len(), true).expect("input gradient requested"));
    }
    (loss, d_real)
}

/// `cls_loss + beta * unc_loss`.
pub fn combined_loss(cls_loss: f64, unc_loss: f64, beta: f64) -> f64 {
    cls_loss + beta * unc_loss
}
