//! Generative models of segment sequences `(α_1, l_1), ..., (α_N, l_N)`.
//!
//! Four models of increasing structure:
//!
//! * `null`: α uniform on `[0, 90)`, l uniform on `(0, 1)`.
//! * `independent`: one Gaussian KDE per variable and position.
//! * `markov1_uni`: α_{i+1} | α_i and l_{i+1} | l_i through binned tables.
//! * `markov1_multi`: α_{i+1} and l_{i+1} each conditioned on the joint
//!   `(α_i, l_i)` cell.
//!
//! Tables select a target bin. The value inside the bin is drawn from the
//! KDE of the target variable truncated to that bin, so a single bin
//! reproduces the independent model. End bins extend to the limits of the
//! variable (`(-90, 90)` degrees for α, `(0, ∞)` for l).
//!
//! Sampled lengths are renormalized to sum to 1.

use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::feature_extraction::SegmentFeatures;
use crate::seed::stream_rng;

const ALPHA_LIMITS: (f64, f64) = (-90.0, 90.0);
const LENGTH_LIMITS: (f64, f64) = (0.0, f64::INFINITY);
const MAX_REDRAWS: usize = 1000;

/// Model kinds in ranking tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Null,
    Independent,
    Markov1Uni,
    Markov1Multi,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Null,
        ModelKind::Independent,
        ModelKind::Markov1Uni,
        ModelKind::Markov1Multi,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Null => "null",
            ModelKind::Independent => "independent",
            ModelKind::Markov1Uni => "markov1_uni",
            ModelKind::Markov1Multi => "markov1_multi",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One-dimensional Gaussian kernel density estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianKde {
    pub samples: Vec<f64>,
    pub bandwidth: f64,
}

impl GaussianKde {
    /// KDE with Silverman's rule-of-thumb bandwidth
    /// `0.9 · min(σ, IQR/1.34) · n^(-1/5)`.
    pub fn fit(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(Self {
            bandwidth: silverman_bandwidth(samples),
            samples: samples.to_vec(),
        })
    }

    pub fn with_bandwidth(samples: &[f64], bandwidth: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput);
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(Self {
            samples: samples.to_vec(),
            bandwidth,
        })
    }

    pub fn density(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let norm = 1.0 / (self.samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
        norm * self
            .samples
            .iter()
            .map(|s| (-0.5 * ((x - s) / h).powi(2)).exp())
            .sum::<f64>()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let s = self.samples[rng.random_range(0..self.samples.len())];
        s + self.bandwidth * rng.sample::<f64, _>(rand_distr::StandardNormal)
    }
}

fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = if samples.len() > 1 {
        (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr / 1.34),
        (true, false) => sd,
        _ => 0.0,
    };
    let h = 0.9 * spread * n.powf(-0.2);
    if h > 0.0 {
        h
    } else {
        // Constant data: a narrow kernel around the single value.
        1e-6 * mean.abs().max(1.0)
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    match sorted.get(i + 1) {
        Some(next) => sorted[i] + frac * (next - sorted[i]),
        None => sorted[i],
    }
}

/// Probability of each target bin given a conditioning cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalTable {
    /// One row per conditioning cell; each row sums to 1.
    pub rows: Vec<Vec<f64>>,
    /// Training transitions seen in each cell. Empty cells hold the marginal.
    pub row_counts: Vec<usize>,
}

impl ConditionalTable {
    fn fit(cells: &[usize], targets: &[usize], n_cells: usize, n_targets: usize) -> Self {
        let mut counts = vec![vec![0usize; n_targets]; n_cells];
        let mut marginal = vec![0usize; n_targets];
        for (&c, &t) in cells.iter().zip(targets) {
            counts[c][t] += 1;
            marginal[t] += 1;
        }
        let total: usize = marginal.iter().sum();
        let marginal: Vec<f64> = marginal.iter().map(|&m| m as f64 / total as f64).collect();
        let row_counts: Vec<usize> = counts.iter().map(|r| r.iter().sum()).collect();
        let rows = counts
            .iter()
            .zip(&row_counts)
            .map(|(row, &n)| {
                if n == 0 {
                    marginal.clone()
                } else {
                    row.iter().map(|&c| c as f64 / n as f64).collect()
                }
            })
            .collect();
        Self { rows, row_counts }
    }
}

/// Equal-width edges over the observed range of `values`.
fn equal_width_edges(values: &[f64], bins: usize) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo {
        (lo, hi)
    } else {
        let pad = 1e-9 * lo.abs().max(1.0);
        (lo - pad, hi + pad)
    };
    (0..=bins)
        .map(|i| {
            if i == bins {
                hi
            } else {
                lo + (hi - lo) * i as f64 / bins as f64
            }
        })
        .collect()
}

/// Bin of `v`; values beyond the outer edges go to the end bins and the top
/// edge is inclusive.
pub fn bin_index(edges: &[f64], v: f64) -> usize {
    let bins = edges.len() - 1;
    edges[1..bins].partition_point(|&e| e <= v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Bins per variable for the univariate chain.
    pub bins_uni: usize,
    /// α bins for the joint chain.
    pub bins_alpha: usize,
    /// l bins for the joint chain.
    pub bins_l: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            bins_uni: 10,
            bins_alpha: 8,
            bins_l: 8,
        }
    }
}

/// Per-position smoothers and bin edges shared by the chain models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginals {
    pub alpha: Vec<GaussianKde>,
    pub length: Vec<GaussianKde>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    pub alpha_edges: Vec<Vec<f64>>,
    pub length_edges: Vec<Vec<f64>>,
}

impl Binning {
    fn alpha_bins(&self, i: usize) -> usize {
        self.alpha_edges[i].len() - 1
    }

    fn length_bins(&self, i: usize) -> usize {
        self.length_edges[i].len() - 1
    }

    fn alpha_bin(&self, i: usize, v: f64) -> usize {
        bin_index(&self.alpha_edges[i], v)
    }

    fn length_bin(&self, i: usize, v: f64) -> usize {
        bin_index(&self.length_edges[i], v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GenerativeModel {
    Null {
        n_segments: usize,
    },
    Independent {
        n_segments: usize,
        marginals: Marginals,
    },
    Markov1Uni {
        n_segments: usize,
        marginals: Marginals,
        binning: Binning,
        /// `alpha[i]`: α_{i+2} given the bin of α_{i+1} (1-based positions).
        alpha_transitions: Vec<ConditionalTable>,
        length_transitions: Vec<ConditionalTable>,
    },
    Markov1Multi {
        n_segments: usize,
        marginals: Marginals,
        binning: Binning,
        /// Joint `(α_1, l_1)` cell probabilities, α-major.
        initial: Vec<f64>,
        /// Rows indexed by the joint `(α_i, l_i)` cell, α-major.
        alpha_transitions: Vec<ConditionalTable>,
        length_transitions: Vec<ConditionalTable>,
    },
}

fn uniform_segments(features: &[SegmentFeatures]) -> Result<usize> {
    let n = features.first().ok_or(Error::EmptyInput)?.n_segments();
    if let Some(bad) = features.iter().find(|f| f.n_segments() != n || f.lengths.len() != n) {
        return Err(Error::MixedSegmentCounts {
            expected: n,
            found: bad.n_segments(),
        });
    }
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(n)
}

fn column(features: &[SegmentFeatures], alpha: bool, i: usize) -> Vec<f64> {
    features
        .iter()
        .map(|f| if alpha { f.angles[i] } else { f.lengths[i] })
        .collect()
}

fn fit_marginals(features: &[SegmentFeatures], n: usize) -> Result<Marginals> {
    Ok(Marginals {
        alpha: (0..n)
            .map(|i| GaussianKde::fit(&column(features, true, i)))
            .collect::<Result<_>>()?,
        length: (0..n)
            .map(|i| GaussianKde::fit(&column(features, false, i)))
            .collect::<Result<_>>()?,
    })
}

fn fit_binning(features: &[SegmentFeatures], n: usize, bins_alpha: usize, bins_l: usize) -> Result<Binning> {
    if bins_alpha == 0 || bins_l == 0 {
        return Err(Error::InvalidConfig("bin counts must be positive".into()));
    }
    Ok(Binning {
        alpha_edges: (0..n)
            .map(|i| equal_width_edges(&column(features, true, i), bins_alpha))
            .collect(),
        length_edges: (0..n)
            .map(|i| equal_width_edges(&column(features, false, i), bins_l))
            .collect(),
    })
}

pub fn fit_null(n_segments: usize) -> Result<GenerativeModel> {
    if n_segments == 0 {
        return Err(Error::InvalidConfig("a model needs at least one segment".into()));
    }
    Ok(GenerativeModel::Null { n_segments })
}

pub fn fit_independent(features: &[SegmentFeatures]) -> Result<GenerativeModel> {
    let n = uniform_segments(features)?;
    Ok(GenerativeModel::Independent {
        n_segments: n,
        marginals: fit_marginals(features, n)?,
    })
}

pub fn fit_markov1_uni(features: &[SegmentFeatures], bins: usize) -> Result<GenerativeModel> {
    let n = uniform_segments(features)?;
    let binning = fit_binning(features, n, bins, bins)?;
    let (alpha_transitions, length_transitions) = uni_tables(features, n, &binning);
    Ok(GenerativeModel::Markov1Uni {
        n_segments: n,
        marginals: fit_marginals(features, n)?,
        binning,
        alpha_transitions,
        length_transitions,
    })
}

pub fn fit_markov1_multi(features: &[SegmentFeatures], bins_alpha: usize, bins_l: usize) -> Result<GenerativeModel> {
    let n = uniform_segments(features)?;
    let binning = fit_binning(features, n, bins_alpha, bins_l)?;
    let (initial, alpha_transitions, length_transitions) = multi_tables(features, n, &binning);
    Ok(GenerativeModel::Markov1Multi {
        n_segments: n,
        marginals: fit_marginals(features, n)?,
        binning,
        initial,
        alpha_transitions,
        length_transitions,
    })
}

/// Fit a model of the given kind with default bin counts from `config`.
pub fn fit_model(kind: ModelKind, features: &[SegmentFeatures], config: &ModelConfig) -> Result<GenerativeModel> {
    match kind {
        ModelKind::Null => fit_null(uniform_segments(features)?),
        ModelKind::Independent => fit_independent(features),
        ModelKind::Markov1Uni => fit_markov1_uni(features, config.bins_uni),
        ModelKind::Markov1Multi => fit_markov1_multi(features, config.bins_alpha, config.bins_l),
    }
}

fn uni_tables(
    features: &[SegmentFeatures],
    n: usize,
    binning: &Binning,
) -> (Vec<ConditionalTable>, Vec<ConditionalTable>) {
    let mut alpha = Vec::new();
    let mut length = Vec::new();
    for i in 0..n.saturating_sub(1) {
        let cells: Vec<usize> = features.iter().map(|f| binning.alpha_bin(i, f.angles[i])).collect();
        let targets: Vec<usize> = features
            .iter()
            .map(|f| binning.alpha_bin(i + 1, f.angles[i + 1]))
            .collect();
        alpha.push(ConditionalTable::fit(
            &cells,
            &targets,
            binning.alpha_bins(i),
            binning.alpha_bins(i + 1),
        ));
        let cells: Vec<usize> = features.iter().map(|f| binning.length_bin(i, f.lengths[i])).collect();
        let targets: Vec<usize> = features
            .iter()
            .map(|f| binning.length_bin(i + 1, f.lengths[i + 1]))
            .collect();
        length.push(ConditionalTable::fit(
            &cells,
            &targets,
            binning.length_bins(i),
            binning.length_bins(i + 1),
        ));
    }
    (alpha, length)
}

fn joint_cell(binning: &Binning, i: usize, alpha: f64, length: f64) -> usize {
    binning.alpha_bin(i, alpha) * binning.length_bins(i) + binning.length_bin(i, length)
}

fn multi_tables(
    features: &[SegmentFeatures],
    n: usize,
    binning: &Binning,
) -> (Vec<f64>, Vec<ConditionalTable>, Vec<ConditionalTable>) {
    let n_cells0 = binning.alpha_bins(0) * binning.length_bins(0);
    let mut initial = vec![0.0; n_cells0];
    for f in features {
        initial[joint_cell(binning, 0, f.angles[0], f.lengths[0])] += 1.0 / features.len() as f64;
    }
    let mut alpha = Vec::new();
    let mut length = Vec::new();
    for i in 0..n.saturating_sub(1) {
        let n_cells = binning.alpha_bins(i) * binning.length_bins(i);
        let cells: Vec<usize> = features
            .iter()
            .map(|f| joint_cell(binning, i, f.angles[i], f.lengths[i]))
            .collect();
        let targets: Vec<usize> = features
            .iter()
            .map(|f| binning.alpha_bin(i + 1, f.angles[i + 1]))
            .collect();
        alpha.push(ConditionalTable::fit(
            &cells,
            &targets,
            n_cells,
            binning.alpha_bins(i + 1),
        ));
        let targets: Vec<usize> = features
            .iter()
            .map(|f| binning.length_bin(i + 1, f.lengths[i + 1]))
            .collect();
        length.push(ConditionalTable::fit(
            &cells,
            &targets,
            n_cells,
            binning.length_bins(i + 1),
        ));
    }
    (initial, alpha, length)
}

impl GenerativeModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            GenerativeModel::Null { .. } => ModelKind::Null,
            GenerativeModel::Independent { .. } => ModelKind::Independent,
            GenerativeModel::Markov1Uni { .. } => ModelKind::Markov1Uni,
            GenerativeModel::Markov1Multi { .. } => ModelKind::Markov1Multi,
        }
    }

    pub fn n_segments(&self) -> usize {
        match self {
            GenerativeModel::Null { n_segments }
            | GenerativeModel::Independent { n_segments, .. }
            | GenerativeModel::Markov1Uni { n_segments, .. }
            | GenerativeModel::Markov1Multi { n_segments, .. } => *n_segments,
        }
    }

    /// Transition tables `(alpha, length)`; empty for the table-free kinds.
    pub fn transitions(&self) -> (&[ConditionalTable], &[ConditionalTable]) {
        match self {
            GenerativeModel::Markov1Uni {
                alpha_transitions,
                length_transitions,
                ..
            }
            | GenerativeModel::Markov1Multi {
                alpha_transitions,
                length_transitions,
                ..
            } => (alpha_transitions, length_transitions),
            _ => (&[], &[]),
        }
    }

    /// Re-estimate the tables from `features` keeping this model's bin edges
    /// and smoothers. Table-free kinds are returned unchanged.
    pub fn refit_tables(&self, features: &[SegmentFeatures]) -> Result<GenerativeModel> {
        let n = uniform_segments(features)?;
        if n != self.n_segments() {
            return Err(Error::MixedSegmentCounts {
                expected: self.n_segments(),
                found: n,
            });
        }
        let mut model = self.clone();
        match &mut model {
            GenerativeModel::Markov1Uni {
                binning,
                alpha_transitions,
                length_transitions,
                ..
            } => {
                (*alpha_transitions, *length_transitions) = uni_tables(features, n, binning);
            }
            GenerativeModel::Markov1Multi {
                binning,
                initial,
                alpha_transitions,
                length_transitions,
                ..
            } => {
                (*initial, *alpha_transitions, *length_transitions) = multi_tables(features, n, binning);
            }
            _ => {}
        }
        Ok(model)
    }

    /// Draws before length renormalization. Lengths are positive and angles
    /// lie in `(-90, 90)`.
    pub fn sample_raw(&self, count: usize, seed: u64) -> Vec<SegmentFeatures> {
        let sampler = Sampler::new(self);
        (0..count)
            .map(|i| {
                let mut rng = stream_rng(seed, i as u64);
                let (angles, lengths) = sampler.draw(&mut rng);
                SegmentFeatures {
                    id: format!("synthetic-{i}"),
                    angles,
                    lengths,
                }
            })
            .collect()
    }
}

/// Rescale lengths to sum to 1.
pub fn renormalize(mut features: SegmentFeatures) -> SegmentFeatures {
    let total: f64 = features.lengths.iter().sum();
    features.lengths.iter_mut().for_each(|l| *l /= total);
    features
}

/// Anything that produces synthetic feature vectors.
pub trait FeatureSampler {
    fn kind(&self) -> ModelKind;
    fn n_segments(&self) -> usize;
    /// `count` draws with lengths summing to 1; draw `i` depends only on
    /// `seed` and `i`.
    fn sample(&self, count: usize, seed: u64) -> Vec<SegmentFeatures>;
}

impl FeatureSampler for GenerativeModel {
    fn kind(&self) -> ModelKind {
        GenerativeModel::kind(self)
    }

    fn n_segments(&self) -> usize {
        GenerativeModel::n_segments(self)
    }

    fn sample(&self, count: usize, seed: u64) -> Vec<SegmentFeatures> {
        self.sample_raw(count, seed).into_iter().map(renormalize).collect()
    }
}

pub fn sample(model: &GenerativeModel, count: usize, seed: u64) -> Vec<SegmentFeatures> {
    FeatureSampler::sample(model, count, seed)
}

/// Models of one kind fitted per cluster, combined with weights
/// proportional to cluster size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mixture {
    pub kind: ModelKind,
    pub n_segments: usize,
    pub weights: Vec<f64>,
    pub components: Vec<GenerativeModel>,
}

impl Mixture {
    pub fn new(components: Vec<GenerativeModel>, sizes: &[usize]) -> Result<Self> {
        let first = components.first().ok_or(Error::EmptyInput)?;
        let (kind, n) = (first.kind(), first.n_segments());
        if sizes.len() != components.len() {
            return Err(Error::Misalignment {
                labels: sizes.len(),
                patterns: components.len(),
            });
        }
        if let Some(bad) = components.iter().find(|c| c.n_segments() != n) {
            return Err(Error::MixedSegmentCounts {
                expected: n,
                found: bad.n_segments(),
            });
        }
        if components.iter().any(|c| c.kind() != kind) {
            return Err(Error::InvalidConfig("mixture components must share a kind".into()));
        }
        let total: usize = sizes.iter().sum();
        if total == 0 {
            return Err(Error::EmptyInput);
        }
        Ok(Self {
            kind,
            n_segments: n,
            weights: sizes.iter().map(|&s| s as f64 / total as f64).collect(),
            components,
        })
    }

    /// Fit one model of `kind` per group and mix by group size. Empty groups
    /// are skipped.
    pub fn fit(kind: ModelKind, groups: &[Vec<SegmentFeatures>], config: &ModelConfig) -> Result<Self> {
        let mut components = Vec::new();
        let mut sizes = Vec::new();
        for g in groups.iter().filter(|g| !g.is_empty()) {
            components.push(fit_model(kind, g, config)?);
            sizes.push(g.len());
        }
        Self::new(components, &sizes)
    }
}

impl FeatureSampler for Mixture {
    fn kind(&self) -> ModelKind {
        self.kind
    }

    fn n_segments(&self) -> usize {
        self.n_segments
    }

    fn sample(&self, count: usize, seed: u64) -> Vec<SegmentFeatures> {
        let samplers: Vec<Sampler> = self.components.iter().map(Sampler::new).collect();
        (0..count)
            .map(|i| {
                let mut rng = stream_rng(seed, i as u64);
                let c = pick(&self.weights, rng.random());
                let (angles, lengths) = samplers[c].draw(&mut rng);
                renormalize(SegmentFeatures {
                    id: format!("synthetic-{i}"),
                    angles,
                    lengths,
                })
            })
            .collect()
    }
}

/// Index selected by `u ∈ [0, 1)` from unnormalized weights.
fn pick(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    let target = u * total;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if target < acc {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// KDE restricted to `[lo, hi]`, as a mixture of truncated Gaussians.
struct TruncatedKde<'a> {
    kde: &'a GaussianKde,
    lo: f64,
    hi: f64,
    cumulative: Vec<f64>,
}

impl<'a> TruncatedKde<'a> {
    fn new(kde: &'a GaussianKde, lo: f64, hi: f64) -> Self {
        let h = kde.bandwidth;
        let std = Normal::standard();
        let mut acc = 0.0;
        let cumulative = kde
            .samples
            .iter()
            .map(|s| {
                acc += truncated_mass(&std, (lo - s) / h, (hi - s) / h);
                acc
            })
            .collect();
        Self {
            kde,
            lo,
            hi,
            cumulative,
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let total = *self.cumulative.last().unwrap_or(&0.0);
        if !(total > 0.0) {
            // No kernel reaches the interval; fall back to uniform.
            let lo = self.lo.max(-1e300);
            let hi = if self.hi.is_finite() { self.hi } else { lo + 1.0 };
            return lo + rng.random::<f64>() * (hi - lo);
        }
        let target = rng.random::<f64>() * total;
        let j = self
            .cumulative
            .partition_point(|&c| c <= target)
            .min(self.cumulative.len() - 1);
        let (s, h) = (self.kde.samples[j], self.kde.bandwidth);
        let z = truncated_standard_normal((self.lo - s) / h, (self.hi - s) / h, rng.random());
        (s + h * z).clamp(self.lo, self.hi)
    }
}

fn truncated_mass(std: &Normal, a: f64, b: f64) -> f64 {
    if a > 0.0 {
        (std.sf(a) - std.sf(b)).max(0.0)
    } else {
        (std.cdf(b) - std.cdf(a)).max(0.0)
    }
}

/// Inverse-CDF draw from the standard normal restricted to `[a, b]`.
fn truncated_standard_normal(a: f64, b: f64, u: f64) -> f64 {
    if a > 0.0 {
        return -truncated_standard_normal(-b, -a, 1.0 - u);
    }
    let std = Normal::standard();
    let (fa, fb) = (std.cdf(a), std.cdf(b));
    if !(fb > fa) {
        return if b.is_finite() { 0.5 * (a.max(-1e300) + b) } else { a };
    }
    let p = (fa + u * (fb - fa)).clamp(fa, fb);
    std.inverse_cdf(p.clamp(0.0, 1.0)).clamp(a, b)
}

/// Per-model precomputed truncated smoothers.
struct Sampler<'a> {
    model: &'a GenerativeModel,
    /// `[position][bin]` for α and l; a single open bin for the
    /// independent model.
    alpha: Vec<Vec<TruncatedKde<'a>>>,
    length: Vec<Vec<TruncatedKde<'a>>>,
}

fn bin_interval(edges: &[f64], b: usize, limits: (f64, f64)) -> (f64, f64) {
    let last = edges.len() - 2;
    let lo = if b == 0 { limits.0 } else { edges[b] };
    let hi = if b == last { limits.1 } else { edges[b + 1] };
    (lo, hi)
}

impl<'a> Sampler<'a> {
    fn new(model: &'a GenerativeModel) -> Self {
        let binned = |kdes: &'a [GaussianKde], edges: &[Vec<f64>], limits: (f64, f64)| -> Vec<Vec<TruncatedKde<'a>>> {
            kdes.iter()
                .zip(edges)
                .map(|(kde, e)| {
                    (0..e.len() - 1)
                        .map(|b| {
                            let (lo, hi) = bin_interval(e, b, limits);
                            TruncatedKde::new(kde, lo, hi)
                        })
                        .collect()
                })
                .collect()
        };
        let open = |kdes: &'a [GaussianKde], limits: (f64, f64)| -> Vec<Vec<TruncatedKde<'a>>> {
            kdes.iter()
                .map(|k| vec![TruncatedKde::new(k, limits.0, limits.1)])
                .collect()
        };
        let (alpha, length) = match model {
            GenerativeModel::Null { .. } => (Vec::new(), Vec::new()),
            GenerativeModel::Independent { marginals, .. } => (
                open(&marginals.alpha, ALPHA_LIMITS),
                open(&marginals.length, LENGTH_LIMITS),
            ),
            GenerativeModel::Markov1Uni { marginals, binning, .. }
            | GenerativeModel::Markov1Multi { marginals, binning, .. } => (
                binned(&marginals.alpha, &binning.alpha_edges, ALPHA_LIMITS),
                binned(&marginals.length, &binning.length_edges, LENGTH_LIMITS),
            ),
        };
        Self { model, alpha, length }
    }

    fn alpha_in(&self, i: usize, bin: usize, rng: &mut ChaCha8Rng) -> f64 {
        redraw(
            || self.alpha[i][bin].draw(rng),
            |a| a > ALPHA_LIMITS.0 && a < ALPHA_LIMITS.1,
        )
    }

    fn length_in(&self, i: usize, bin: usize, rng: &mut ChaCha8Rng) -> f64 {
        redraw(
            || self.length[i][bin].draw(rng),
            |l| l > LENGTH_LIMITS.0 && l.is_finite(),
        )
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        let n = self.model.n_segments();
        let mut angles = Vec::with_capacity(n);
        let mut lengths = Vec::with_capacity(n);
        match self.model {
            GenerativeModel::Null { .. } => {
                for _ in 0..n {
                    angles.push(rng.random_range(0.0..90.0));
                    lengths.push(redraw(|| rng.random::<f64>(), |l| l > 0.0));
                }
            }
            GenerativeModel::Independent { .. } => {
                for i in 0..n {
                    angles.push(self.alpha_in(i, 0, rng));
                    lengths.push(self.length_in(i, 0, rng));
                }
            }
            GenerativeModel::Markov1Uni {
                binning,
                alpha_transitions,
                length_transitions,
                ..
            } => {
                angles.push(self.alpha_in(0, pick_open(&self.alpha[0], rng), rng));
                lengths.push(self.length_in(0, pick_open(&self.length[0], rng), rng));
                for i in 0..n - 1 {
                    let row = &alpha_transitions[i].rows[binning.alpha_bin(i, angles[i])];
                    let b = pick(row, rng.random());
                    angles.push(self.alpha_in(i + 1, b, rng));
                    let row = &length_transitions[i].rows[binning.length_bin(i, lengths[i])];
                    let b = pick(row, rng.random());
                    lengths.push(self.length_in(i + 1, b, rng));
                }
            }
            GenerativeModel::Markov1Multi {
                binning,
                initial,
                alpha_transitions,
                length_transitions,
                ..
            } => {
                let cell = pick(initial, rng.random());
                let l_bins = binning.length_bins(0);
                angles.push(self.alpha_in(0, cell / l_bins, rng));
                lengths.push(self.length_in(0, cell % l_bins, rng));
                for i in 0..n - 1 {
                    let cell = joint_cell(binning, i, angles[i], lengths[i]);
                    let a = pick(&alpha_transitions[i].rows[cell], rng.random());
                    let l = pick(&length_transitions[i].rows[cell], rng.random());
                    angles.push(self.alpha_in(i + 1, a, rng));
                    lengths.push(self.length_in(i + 1, l, rng));
                }
            }
        }
        (angles, lengths)
    }
}

/// Bin chosen in proportion to the KDE mass it holds: composing the
/// per-bin draws then reproduces the full KDE.
fn pick_open(bins: &[TruncatedKde<'_>], rng: &mut ChaCha8Rng) -> usize {
    let masses: Vec<f64> = bins.iter().map(|b| *b.cumulative.last().unwrap_or(&0.0)).collect();
    pick(&masses, rng.random())
}

fn redraw(mut draw: impl FnMut() -> f64, ok: impl Fn(f64) -> bool) -> f64 {
    let mut v = draw();
    for _ in 0..MAX_REDRAWS {
        if ok(v) {
            break;
        }
        v = draw();
    }
    v
}
