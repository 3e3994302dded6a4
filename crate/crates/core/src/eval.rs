//! Detection metrics, noise clustering and experiment matrices.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::PerturbationField;
use crate::seeding;

/// Schema version stamped into every report.
pub const REPORT_VERSION: u32 = 1;

/// A detector score with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    /// Adversarial probability.
    pub score: f64,
    /// 0 = adversarial, 1 = real.
    pub label: u8,
    /// Generator name and magnitude, e.g. `"point@5"` or `"real"`.
    pub source: String,
}

impl ScoredSample {
    pub fn new(score: f64, label: u8, source: impl Into<String>) -> Self {
        Self {
            score,
            label,
            source: source.into(),
        }
    }
}

/// Rank-based ROC AUC with adversarial (label 0) as the positive class.
/// Tied scores share their mean rank, so each tied pair counts 1/2.
pub fn auc(samples: &[ScoredSample]) -> Result<f64> {
    let pos = samples.iter().filter(|s| s.label == 0).count();
    let neg = samples.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes ({pos} adversarial, {neg} real)"
        )));
    }
    if samples.iter().any(|s| s.score.is_nan()) {
        return Err(Error::UndefinedMetric("NaN score".to_string()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].score.total_cmp(&samples[b].score));
    // Twice the rank sum of positives keeps tie midpoints integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && samples[order[j + 1]].score == samples[order[i]].score {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean (i + j + 2) / 2.
        let group_pos = order[i..=j].iter().filter(|&&k| samples[k].label == 0).count() as u128;
        twice_rank_sum += group_pos * (i + j + 2) as u128;
        i = j + 1;
    }
    let (p, n) = (pos as u128, neg as u128);
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * n) as f64)
}

/// Fraction classified correctly when `score >= threshold` means adversarial.
pub fn accuracy_at(samples: &[ScoredSample], threshold: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of an empty sample set".to_string()));
    }
    let correct = samples
        .iter()
        .filter(|s| (s.score >= threshold) == (s.label == 0))
        .count();
    Ok(correct as f64 / samples.len() as f64)
}

/// How a noise field is turned into a clustering vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NoiseEmbedding {
    /// Area-mean signed offsets on the downsampled grid.
    Raw,
    /// `ln(floor + area-mean |offset|)` on the downsampled grid.
    LogMagnitude { floor: f64 },
    /// Location- and scale-free texture descriptor: `ln(floor + q)` for
    /// `bins` evenly spaced quantiles of the channel-mean magnitude, first
    /// differences and second differences along both axes, all divided by
    /// the largest channel-mean magnitude. Works at full resolution.
    Structure { floor: f64, bins: usize },
}

impl Default for NoiseEmbedding {
    fn default() -> Self {
        NoiseEmbedding::Structure { floor: 1e-2, bins: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KMeansConfig {
    pub k: usize,
    pub downsample_side: usize,
    pub max_iter: usize,
    /// Independent k-means++ restarts; the lowest final inertia wins.
    pub restarts: usize,
    pub embedding: NoiseEmbedding,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 3,
            downsample_side: 32,
            max_iter: 300,
            restarts: 10,
            embedding: NoiseEmbedding::default(),
            seed: 0,
        }
    }
}

/// Area-mean downsampling of a field to `side x side x 3`, then the chosen
/// embedding.
pub fn embed_noise(field: &PerturbationField, side: usize, embedding: NoiseEmbedding) -> Vec<f64> {
    if let NoiseEmbedding::Structure { floor, bins } = embedding {
        return structure_profile(field, floor, bins);
    }
    let (h, w) = (field.height(), field.width());
    let mut out = vec![0.0; side * side * 3];
    for i in 0..side {
        let r0 = i * h / side;
        let r1 = ((i + 1) * h / side).max(r0 + 1).min(h);
        for j in 0..side {
            let c0 = j * w / side;
            let c1 = ((j + 1) * w / side).max(c0 + 1).min(w);
            let n = ((r1 - r0) * (c1 - c0)) as f64;
            for y in r0..r1 {
                for x in c0..c1 {
                    let px = field.pixel(y, x);
                    for c in 0..3 {
                        out[(i * side + j) * 3 + c] += match embedding {
                            NoiseEmbedding::Raw => px[c],
                            _ => px[c].abs(),
                        };
                    }
                }
            }
            for c in 0..3 {
                out[(i * side + j) * 3 + c] /= n;
            }
        }
    }
    if let NoiseEmbedding::LogMagnitude { floor } = embedding {
        for v in &mut out {
            *v = (floor + *v).ln();
        }
    }
    out
}

fn quantile_profile(mut values: Vec<f64>, floor: f64, bins: usize, out: &mut Vec<f64>) {
    values.sort_by(f64::total_cmp);
    let last = values.len().saturating_sub(1);
    for b in 0..bins {
        let pos = if bins == 1 { last } else { b * last / (bins - 1) };
        out.push((floor + values.get(pos).copied().unwrap_or(0.0)).ln());
    }
}

fn mean_abs(v: [f64; 3]) -> f64 {
    v.iter().map(|c| c.abs()).sum::<f64>() / 3.0
}

fn structure_profile(field: &PerturbationField, floor: f64, bins: usize) -> Vec<f64> {
    let (h, w) = (field.height(), field.width());
    let px = |y: usize, x: usize| field.pixel(y, x);
    let d1 = |a: [f64; 3], b: [f64; 3]| mean_abs(std::array::from_fn(|c| b[c] - a[c]));
    let d2 = |a: [f64; 3], b: [f64; 3], c: [f64; 3]| mean_abs(std::array::from_fn(|k| a[k] - 2.0 * b[k] + c[k]));
    let mags: Vec<f64> = (0..h * w).map(|i| mean_abs(px(i / w, i % w))).collect();
    let peak = mags.iter().copied().fold(0.0, f64::max);
    let scale = if peak > 0.0 { 1.0 / peak } else { 0.0 };
    let (mut dx, mut dy, mut dxx, mut dyy) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w {
                dx.push(scale * d1(px(y, x), px(y, x + 1)));
            }
            if y + 1 < h {
                dy.push(scale * d1(px(y, x), px(y + 1, x)));
            }
            if x + 2 < w {
                dxx.push(scale * d2(px(y, x), px(y, x + 1), px(y, x + 2)));
            }
            if y + 2 < h {
                dyy.push(scale * d2(px(y, x), px(y + 1, x), px(y + 2, x)));
            }
        }
    }
    let mut out = Vec::with_capacity(5 * bins);
    quantile_profile(mags.iter().map(|m| m * scale).collect(), floor, bins, &mut out);
    for d in [dx, dy, dxx, dyy] {
        quantile_profile(d, floor, bins, &mut out);
    }
    out
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// One k-means++ / Lloyd run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansRun {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Inertia after every Lloyd iteration.
    pub inertia_trace: Vec<f64>,
    pub converged: bool,
}

impl KMeansRun {
    pub fn inertia(&self) -> f64 {
        *self.inertia_trace.last().expect("at least one iteration")
    }
}

fn kmeans_pp<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = d2.iter().rposition(|v| *v > 0.0).expect("positive total");
            for (i, v) in d2.iter().enumerate() {
                if target < *v {
                    pick = i;
                    break;
                }
                target -= v;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[next].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// k-means++ seeding followed by Lloyd iterations until the assignment is a
/// fixpoint or `max_iter` is reached.
pub fn kmeans<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, max_iter: usize, rng: &mut R) -> Result<KMeansRun> {
    if k == 0 || k > points.len() {
        return Err(Error::InsufficientData(format!(
            "cannot form {k} clusters from {} samples",
            points.len()
        )));
    }
    let dim = points[0].len();
    let mut centroids = kmeans_pp(points, k, rng);
    let mut assignments = vec![usize::MAX; points.len()];
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..max_iter.max(1) {
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        if next == assignments {
            converged = true;
            break;
        }
        assignments = next;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        // An empty cluster takes over the point farthest from its centroid.
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        sq_dist(&points[a], &centroids[assignments[a]])
                            .total_cmp(&sq_dist(&points[b], &centroids[assignments[b]]))
                    })
                    .expect("nonempty");
                counts[assignments[far]] -= 1;
                assignments[far] = c;
                counts[c] = 1;
                centroids[c] = points[far].clone();
            }
        }
        let inertia = points
            .iter()
            .zip(&assignments)
            .map(|(p, &a)| sq_dist(p, &centroids[a]))
            .sum();
        trace.push(inertia);
    }
    if trace.is_empty() {
        trace.push(points.iter().zip(&assignments).map(|(p, &a)| sq_dist(p, &centroids[a])).sum());
    }
    Ok(KMeansRun {
        assignments,
        centroids,
        inertia_trace: trace,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterComposition {
    pub size: usize,
    /// Fraction of each source tag within the cluster.
    pub fractions: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub version: u32,
    pub k: usize,
    pub config: KMeansConfig,
    pub tags: Vec<String>,
    pub clusters: Vec<ClusterComposition>,
    /// Inertia trace of the selected run.
    pub inertia_trace: Vec<f64>,
    /// Final inertia of every restart.
    pub restart_inertia: Vec<f64>,
    /// Every restart's trace was non-increasing.
    pub monotone: bool,
    /// Fraction of samples whose tag is the majority tag of their cluster.
    pub purity: f64,
    pub assignments: Vec<usize>,
}

impl ClusterReport {
    pub fn to_text(&self) -> String {
        let mut s = format!("k = {}, purity = {:.4}, inertia = {:.6}\n", self.k, self.purity, self.inertia_trace.last().copied().unwrap_or(0.0));
        s.push_str(&format!("{:<8} {:>6}", "cluster", "size"));
        for t in &self.tags {
            s.push_str(&format!(" {t:>10}"));
        }
        s.push('\n');
        for (i, c) in self.clusters.iter().enumerate() {
            s.push_str(&format!("{i:<8} {:>6}", c.size));
            for t in &self.tags {
                s.push_str(&format!(" {:>10.4}", c.fractions.get(t).copied().unwrap_or(0.0)));
            }
            s.push('\n');
        }
        s
    }
}

fn is_monotone(trace: &[f64]) -> bool {
    trace.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs())
}

/// Clusters tagged noise fields and reports per-cluster tag composition.
pub fn kmeans_noise(fields: &[(String, PerturbationField)], cfg: &KMeansConfig) -> Result<ClusterReport> {
    if cfg.k == 0 || fields.len() < cfg.k {
        return Err(Error::InsufficientData(format!(
            "{} noise fields for k = {}",
            fields.len(),
            cfg.k
        )));
    }
    if cfg.downsample_side == 0
        || cfg.restarts == 0
        || matches!(cfg.embedding, NoiseEmbedding::Structure { bins: 0, .. })
    {
        return Err(Error::Config(
            "downsample side, restarts and profile bins must be positive".to_string(),
        ));
    }
    let points: Vec<Vec<f64>> = fields
        .par_iter()
        .map(|(_, f)| embed_noise(f, cfg.downsample_side, cfg.embedding))
        .collect();
    let runs: Vec<KMeansRun> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = seeding::rng(seeding::derive(cfg.seed, &[0x4B4D, r as u64]));
            kmeans(&points, cfg.k, cfg.max_iter, &mut rng)
        })
        .collect::<Result<_>>()?;
    let monotone = runs.iter().all(|r| is_monotone(&r.inertia_trace));
    let best = runs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.inertia().total_cmp(&b.1.inertia()).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .expect("at least one restart");
    let run = &runs[best];

    let tags: Vec<String> = fields
        .iter()
        .map(|(t, _)| t.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut counts = vec![BTreeMap::<String, usize>::new(); cfg.k];
    for ((tag, _), &a) in fields.iter().zip(&run.assignments) {
        *counts[a].entry(tag.clone()).or_default() += 1;
    }
    let mut majority = 0;
    let clusters = counts
        .iter()
        .map(|c| {
            let size: usize = c.values().sum();
            majority += c.values().copied().max().unwrap_or(0);
            ClusterComposition {
                size,
                fractions: tags
                    .iter()
                    .map(|t| {
                        let n = c.get(t).copied().unwrap_or(0);
                        (t.clone(), if size > 0 { n as f64 / size as f64 } else { 0.0 })
                    })
                    .collect(),
            }
        })
        .collect();
    Ok(ClusterReport {
        version: REPORT_VERSION,
        k: cfg.k,
        config: cfg.clone(),
        tags,
        clusters,
        inertia_trace: run.inertia_trace.clone(),
        restart_inertia: runs.iter().map(|r| r.inertia()).collect(),
        monotone,
        purity: majority as f64 / fields.len() as f64,
        assignments: run.assignments.clone(),
    })
}

/// One cell's scores and metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub auc: f64,
    pub accuracy: f64,
    pub n: usize,
}

/// Train-condition by test-condition metric matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub version: u32,
    /// Name of the swept axis, e.g. `"mode"` or `"eps"`.
    pub axis: String,
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub cells: Vec<Vec<MatrixCell>>,
}

impl MatrixReport {
    pub fn auc(&self, train: &str, test: &str) -> Option<f64> {
        let i = self.train.iter().position(|t| t == train)?;
        let j = self.test.iter().position(|t| t == test)?;
        Some(self.cells[i][j].auc)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per (train, test) pair with a header row.
    pub fn to_csv(&self) -> String {
        let mut s = format!("train_{0},test_{0},auc,accuracy,n\n", self.axis);
        for (i, tr) in self.train.iter().enumerate() {
            for (j, te) in self.test.iter().enumerate() {
                let c = &self.cells[i][j];
                s.push_str(&format!("{tr},{te},{},{},{}\n", c.auc, c.accuracy, c.n));
            }
        }
        s
    }

    /// Aligned AUC table, rows = training condition.
    pub fn to_text(&self) -> String {
        let width = self
            .train
            .iter()
            .chain(&self.test)
            .map(|s| s.len())
            .max()
            .unwrap_or(0)
            .max(8);
        let mut s = format!("AUC by train {0} (rows) and test {0} (columns)\n", self.axis);
        s.push_str(&format!("{:<width$}", ""));
        for t in &self.test {
            s.push_str(&format!(" {t:>width$}"));
        }
        s.push('\n');
        for (i, tr) in self.train.iter().enumerate() {
            s.push_str(&format!("{tr:<width$}"));
            for c in &self.cells[i] {
                s.push_str(&format!(" {:>width$.4}", c.auc));
            }
            s.push('\n');
        }
        s
    }
}

/// Builds a matrix by calling `runner(i)` for every training condition; it
/// must return one scored sample set per test condition. Rows run in
/// parallel.
pub fn cross_matrix<F>(axis: &str, train: &[String], test: &[String], runner: F) -> Result<MatrixReport>
where
    F: Fn(usize) -> Result<Vec<Vec<ScoredSample>>> + Sync,
{
    let rows: Vec<Vec<MatrixCell>> = (0..train.len())
        .into_par_iter()
        .map(|i| {
            let sets = runner(i)?;
            if sets.len() != test.len() {
                return Err(Error::Domain(format!(
                    "runner returned {} sample sets for {} test conditions",
                    sets.len(),
                    test.len()
                )));
            }
            sets.iter()
                .map(|s| {
                    Ok(MatrixCell {
                        auc: auc(s)?,
                        accuracy: accuracy_at(s, 0.5)?,
                        n: s.len(),
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(MatrixReport {
        version: REPORT_VERSION,
        axis: axis.to_string(),
        train: train.to_vec(),
        test: test.to_vec(),
        cells: rows,
    })
}

/// [`cross_matrix`] with perturbation magnitude as the swept axis.
pub fn eps_cross<F>(train_eps: &[f64], test_eps: &[f64], runner: F) -> Result<MatrixReport>
where
    F: Fn(usize) -> Result<Vec<Vec<ScoredSample>>> + Sync,
{
    let fmt = |v: &[f64]| v.iter().map(|e| format!("{e}")).collect::<Vec<_>>();
    cross_matrix("eps", &fmt(train_eps), &fmt(test_eps), runner)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn pairwise(samples: &[ScoredSample]) -> f64 {
        let pos: Vec<f64> = samples.iter().filter(|s| s.label == 0).map(|s| s.score).collect();
        let neg: Vec<f64> = samples.iter().filter(|s| s.label == 1).map(|s| s.score).collect();
        let mut total = 0.0;
        for p in &pos {
            for n in &neg {
                total += if p > n {
                    1.0
                } else if p == n {
                    0.5
                } else {
                    0.0
                };
            }
        }
        total / (pos.len() * neg.len()) as f64
    }

    fn samples(scores: &[f64], labels: &[u8]) -> Vec<ScoredSample> {
        scores.iter().zip(labels).map(|(s, l)| ScoredSample::new(*s, *l, "x")).collect()
    }

    #[test]
    fn auc_examples() {
        let s = samples(&[0.9, 0.8, 0.2, 0.1], &[0, 0, 1, 1]);
        assert_eq!(auc(&s).unwrap(), 1.0);
        let s = samples(&[0.5; 6], &[0, 1, 0, 1, 1, 0]);
        assert_eq!(auc(&s).unwrap(), 0.5);
        let s = samples(&[0.1, 0.2], &[0, 0]);
        assert!(matches!(auc(&s), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn auc_matches_pairwise_on_random_sets() {
        let mut rng = seeding::rng(1);
        for _ in 0..100 {
            let n = rng.random_range(2..200);
            let mut scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0..20) as f64) / 20.0).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
            labels[0] = 0;
            labels[1] = 1;
            scores[0] = rng.random_range(0.0..1.0);
            let s = samples(&scores, &labels);
            assert!((auc(&s).unwrap() - pairwise(&s)).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn auc_pairwise_oracle(
            data in prop::collection::vec((0u8..50, 0u8..2), 2..500)
        ) {
            let mut s: Vec<ScoredSample> = data.iter().map(|(v, l)| ScoredSample::new(*v as f64 / 49.0, *l, "x")).collect();
            s[0].label = 0;
            s[1].label = 1;
            prop_assert!((auc(&s).unwrap() - pairwise(&s)).abs() < 1e-12);
        }

        #[test]
        fn auc_invariant_under_monotone_transform(
            data in prop::collection::vec((0.0f64..1.0, 0u8..2), 2..200)
        ) {
            let mut s: Vec<ScoredSample> = data.iter().map(|(v, l)| ScoredSample::new(*v, *l, "x")).collect();
            s[0].label = 0;
            s[1].label = 1;
            let t: Vec<ScoredSample> = s.iter().map(|x| ScoredSample::new((3.0 * x.score).exp() - 7.0, x.label, "x")).collect();
            prop_assert_eq!(auc(&s).unwrap(), auc(&t).unwrap());
        }
    }

    #[test]
    fn accuracy_examples() {
        let perfect = samples(&[0.9, 0.6, 0.4, 0.1], &[0, 0, 1, 1]);
        assert_eq!(accuracy_at(&perfect, 0.5).unwrap(), 1.0);
        let inverted = samples(&[0.1, 0.4, 0.6, 0.9], &[0, 0, 1, 1]);
        assert_eq!(accuracy_at(&inverted, 0.5).unwrap(), 0.0);
        let mut rng = seeding::rng(2);
        let scores: Vec<f64> = (0..300).map(|_| rng.random_range(0.0..1.0)).collect();
        let labels: Vec<u8> = (0..300).map(|i| (i % 2) as u8).collect();
        let s = samples(&scores, &labels);
        let mut count = 0;
        for i in 0..300 {
            let says_adv = scores[i] >= 0.3;
            if says_adv && labels[i] == 0 || !says_adv && labels[i] == 1 {
                count += 1;
            }
        }
        assert_eq!(accuracy_at(&s, 0.3).unwrap(), count as f64 / 300.0);
    }

    fn field_with(h: usize, f: impl Fn(usize, usize) -> f64) -> PerturbationField {
        let mut field = PerturbationField::zeros(h, h);
        for y in 0..h {
            for x in 0..h {
                let v = f(y, x);
                field.set_pixel(y, x, [v, v, v]);
            }
        }
        field
    }

    #[test]
    fn downsampling_is_area_mean() {
        let f = field_with(64, |y, x| (y * 64 + x) as f64);
        let v = embed_noise(&f, 32, NoiseEmbedding::Raw);
        assert_eq!(v.len(), 32 * 32 * 3);
        // Cell (0, 0) averages pixels 0, 1, 64, 65.
        assert_eq!(v[0], (0.0 + 1.0 + 64.0 + 65.0) / 4.0);
        let l = embed_noise(&field_with(32, |_, _| -0.5), 32, NoiseEmbedding::LogMagnitude { floor: 0.5 });
        assert!(l.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn separable_families_cluster_perfectly() {
        // Disjoint supports: top band, middle band, bottom band.
        let mut rng = seeding::rng(3);
        let mut fields = Vec::new();
        for (tag, r0) in [("a", 0), ("b", 24), ("c", 48)] {
            for _ in 0..20 {
                let amp = rng.random_range(0.01..0.02);
                let f = field_with(64, |y, _| if (r0..r0 + 16).contains(&y) { amp } else { 0.0 });
                fields.push((tag.to_string(), f));
            }
        }
        for embedding in [NoiseEmbedding::Raw, NoiseEmbedding::LogMagnitude { floor: 1e-3 }] {
            let cfg = KMeansConfig {
                embedding,
                seed: 4,
                ..Default::default()
            };
            let report = kmeans_noise(&fields, &cfg).unwrap();
            assert!(report.purity >= 0.95, "{embedding:?}: {}", report.purity);
            assert!(report.monotone);
            for c in &report.clusters {
                let s: f64 = c.fractions.values().sum();
                assert!(c.size == 0 || (s - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn structure_profile_is_scale_free() {
        let emb = NoiseEmbedding::Structure { floor: 1e-2, bins: 8 };
        let f = field_with(32, |y, x| ((y * 7 + x * 3) % 11) as f64 / 255.0);
        let g = field_with(32, |y, x| 4.0 * ((y * 7 + x * 3) % 11) as f64 / 255.0);
        let (a, b) = (embed_noise(&f, 32, emb), embed_noise(&g, 32, emb));
        assert_eq!(a.len(), 40);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
        let zero = embed_noise(&PerturbationField::zeros(16, 16), 32, emb);
        assert!(zero.iter().all(|v| *v == 1e-2f64.ln()));
    }

    #[test]
    fn structure_separates_texture_families() {
        // Constant squares, linear ramps and independent pixels at random
        // positions and magnitudes.
        let mut rng = seeding::rng(21);
        let mut fields = Vec::new();
        for tag in ["flat", "ramp", "iid"] {
            for _ in 0..20 {
                let amp = rng.random_range(0.01..0.2);
                let (y0, x0) = (rng.random_range(0..40), rng.random_range(0..40));
                let slope = rng.random_range(0.2..1.0);
                let mut field = PerturbationField::zeros(64, 64);
                for y in 0..64 {
                    for x in 0..64 {
                        let inside = (y0..y0 + 24).contains(&y) && (x0..x0 + 24).contains(&x);
                        let v = match tag {
                            "flat" if inside => amp,
                            "ramp" if inside => amp * slope * (x - x0) as f64 / 24.0,
                            "iid" => amp * rng.random_range(-1.0..1.0),
                            _ => 0.0,
                        };
                        field.set_pixel(y, x, [v, v, v]);
                    }
                }
                fields.push((tag.to_string(), field));
            }
        }
        let report = kmeans_noise(&fields, &KMeansConfig { seed: 2, ..Default::default() }).unwrap();
        assert!(report.purity >= 0.95, "{}", report.purity);
        assert!(report.monotone);
    }

    #[test]
    fn singleton_clusters_have_zero_inertia() {
        let mut rng = seeding::rng(5);
        let points: Vec<Vec<f64>> = (0..12).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let run = kmeans(&points, 12, 300, &mut rng).unwrap();
        assert_eq!(run.inertia(), 0.0);
        assert!(kmeans(&points, 13, 300, &mut rng).is_err());
    }

    #[test]
    fn inertia_is_non_increasing() {
        let mut rng = seeding::rng(6);
        for _ in 0..20 {
            let points: Vec<Vec<f64>> = (0..200).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let run = kmeans(&points, 6, 300, &mut rng).unwrap();
            assert!(is_monotone(&run.inertia_trace), "{:?}", run.inertia_trace);
            assert!(run.converged);
        }
    }

    #[test]
    fn single_cluster_is_the_global_mix() {
        let fields: Vec<(String, PerturbationField)> = (0..6)
            .map(|i| (if i < 2 { "a" } else { "b" }.to_string(), field_with(16, |_, _| i as f64 * 0.001)))
            .collect();
        let report = kmeans_noise(
            &fields,
            &KMeansConfig {
                k: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(report.clusters[0].size, 6);
        assert!((report.clusters[0].fractions["a"] - 1.0 / 3.0).abs() < 1e-12);
        assert!((report.purity - 4.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn cluster_report_is_deterministic() {
        let mut rng = seeding::rng(7);
        let fields: Vec<(String, PerturbationField)> = (0..30)
            .map(|i| {
                let a: f64 = rng.random_range(0.0..0.01);
                (format!("t{}", i % 3), field_with(32, |y, x| a * ((y + x) % 3) as f64))
            })
            .collect();
        let cfg = KMeansConfig::default();
        let a = serde_json::to_string(&kmeans_noise(&fields, &cfg).unwrap()).unwrap();
        let b = serde_json::to_string(&kmeans_noise(&fields, &cfg).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn matrix_shape_and_exports() {
        let train = vec!["point".to_string(), "gc".to_string()];
        let test = vec!["point".to_string(), "gc".to_string(), "mix".to_string()];
        let report = cross_matrix("mode", &train, &test, |i| {
            Ok((0..3)
                .map(|j| {
                    let gap = if i == j { 0.5 } else { 0.0 };
                    vec![
                        ScoredSample::new(0.5 + gap / 2.0, 0, "adv"),
                        ScoredSample::new(0.5 - gap / 2.0, 1, "real"),
                    ]
                })
                .collect())
        })
        .unwrap();
        assert_eq!(report.cells.len(), 2);
        assert!(report.cells.iter().all(|r| r.len() == 3));
        assert_eq!(report.auc("point", "point"), Some(1.0));
        assert_eq!(report.auc("gc", "point"), Some(0.5));
        assert_eq!(report.to_csv().lines().count(), 7);
        assert!(report.to_csv().starts_with("train_mode,test_mode,auc,accuracy,n\n"));
        let back: MatrixReport = serde_json::from_str(&report.to_json().unwrap()).unwrap();
        assert_eq!(back, report);
        assert_eq!(report.to_text().lines().count(), 4);

        let single = eps_cross(&[5.0], &[5.0], |_| {
            Ok(vec![vec![ScoredSample::new(0.7, 0, "a"), ScoredSample::new(0.2, 1, "r")]])
        })
        .unwrap();
        assert_eq!(single.auc("5", "5"), Some(1.0));
    }
}
