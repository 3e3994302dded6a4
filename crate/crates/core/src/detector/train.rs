use serde::{Deserialize, Serialize};

use super::{backward, DetectorModel, Params};
use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::ood::{fit_gaussian, sample_virtual_outliers, FeatureBank, GaussianModel};
use crate::seeding::{self, SeededRng};

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Params,
    v: Params,
}

impl Adam {
    pub fn new(template: &Params, lr: f64) -> Self {
        let mut zero = template.clone();
        for b in zero.blocks_mut() {
            b.iter_mut().for_each(|v| *v = 0.0);
        }
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zero.clone(),
            v: zero,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut Params, grad: &Params) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let grads = grad.blocks();
        for (((p, m), v), (_, g)) in params
            .blocks_mut()
            .into_iter()
            .zip(self.m.blocks_mut())
            .zip(self.v.blocks_mut())
            .zip(grads)
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls: f64,
    pub unc: f64,
    pub total: f64,
    /// Fraction of the batch classified correctly before the update.
    pub accuracy: f64,
    /// Whether virtual outliers contributed to this step.
    pub regularized: bool,
}

/// Mini-batch optimizer state: model, Adam moments, the real-feature bank and
/// the outlier sampling stream.
#[derive(Debug)]
pub struct Trainer {
    model: DetectorModel,
    adam: Adam,
    bank: FeatureBank,
    rng: SeededRng,
    gaussian: Option<GaussianModel>,
}

impl Trainer {
    pub fn new(model: DetectorModel) -> Self {
        let adam = Adam::new(&model.params, model.config.learning_rate);
        let bank = FeatureBank::new(model.config.ood.bank_capacity);
        let rng = seeding::rng(seeding::derive(model.config.seed, &[0x00D5]));
        Self {
            model,
            adam,
            bank,
            rng,
            gaussian: None,
        }
    }

    pub fn model(&self) -> &DetectorModel {
        &self.model
    }

    pub fn into_model(self) -> DetectorModel {
        self.model
    }

    pub fn bank(&self) -> &FeatureBank {
        &self.bank
    }

    /// The Gaussian fitted for the most recent regularized step.
    pub fn gaussian(&self) -> Option<&GaussianModel> {
        self.gaussian.as_ref()
    }

    /// Refits the Gaussian to the whole bank, for checkpointing.
    pub fn fit_bank(&self) -> Result<GaussianModel> {
        fit_gaussian(&self.bank.features(), self.model.config.ood.ridge)
    }

    /// One optimizer step. Outliers are used once the bank holds at least
    /// `d + 1` real features and `beta > 0`.
    pub fn train_step(&mut self, batch: &[ImageTensor], labels: &[u8]) -> Result<LossBreakdown> {
        let cfg = &self.model.config;
        let d = cfg.embed_dim();
        let outliers = if cfg.beta > 0.0 && self.bank.len() > d {
            let g = fit_gaussian(&self.bank.features(), cfg.ood.ridge)?;
            let set = sample_virtual_outliers(&g, cfg.ood.candidates, cfg.ood.keep, &mut self.rng)?;
            self.gaussian = Some(g);
            Some(set)
        } else {
            None
        };
        let (grad, loss) = backward(&self.model, batch, labels, outliers.as_ref(), cfg.beta)?;
        if !loss.total.is_finite() || !grad.all_finite() {
            return Err(Error::Divergence(format!(
                "non-finite loss or gradient at step {}",
                self.adam.steps() + 1
            )));
        }
        self.adam.step(&mut self.model.params, &grad);
        if !self.model.params.all_finite() {
            return Err(Error::Divergence(format!(
                "non-finite parameters after step {}",
                self.adam.steps()
            )));
        }
        for (f, l) in loss.pooled.into_iter().zip(labels) {
            self.bank.push(f, *l);
        }
        Ok(LossBreakdown {
            cls: loss.cls,
            unc: loss.unc,
            total: loss.total,
            accuracy: loss.correct as f64 / labels.len() as f64,
            regularized: outliers.is_some(),
        })
    }
}
