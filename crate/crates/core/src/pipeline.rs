//! End-to-end analysis driver.
//!
//! Each stage reads the artifacts written by the previous one from the
//! output directory and writes its own, so stages can be rerun one at a time:
//!
//! | stage      | reads                               | writes (per group `nN/`)                       |
//! |------------|-------------------------------------|------------------------------------------------|
//! | `fit`      | input corpus                        | `fits.json`, `excluded.json`, `segment_counts.json` |
//! | `features` | `fits.json`                         | `gate.json`, `angle_histogram.json`, `nN/features.csv`, `nN/correlations.json` |
//! | `cluster`  | `gate.json`, `nN/features.csv`      | `nN/clusters.csv`, `nN/pca.csv`, `nN/prototypes.json`, `nN/average_curves.json`, `nN/cluster_plot.json` |
//! | `model`    | `nN/features.csv`, `nN/clusters.csv`| `nN/models.json`                               |
//! | `score`    | `nN/features.csv`, `nN/models.json` | `nN/adherence.json`                            |
//! | `control`  | input corpus, `gate.json`           | `control/fits.json`, `control/angle_histogram.json` |
//!
//! Every stage records the SHA-256 of its artifacts in `manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster_analysis::{
    average_curve, cut, default_min_size, pca, prototype_frequencies, single_linkage, ClusterAssignment, PrototypeTable,
};
use crate::error::{Error, Result};
use crate::feature_extraction::{
    angle_histogram, correlations, extract_features, gate_by_rmse, read_features_csv, sign_pattern, write_features_csv,
    AngleHistogram, CorrelationReport, SegmentFeatures,
};
use crate::generative_models::{Mixture, ModelConfig, ModelKind};
use crate::model_adherence::{rank_models_detailed, AdherenceScore, Histogram2D};
use crate::profile_ingest::{
    generate_control_corpus, load_corpus, normalize_corpus, ControlConfig, CorpusFormat, Exclusion,
};
use crate::seed::derive_seed;
use crate::segmented_regression::{fit_auto, FitConfig, FitRecord};

const ANGLE_BINS: usize = 15;
const PLOT_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: PathBuf,
    /// Inferred from the input extension when absent.
    pub format: Option<CorpusFormat>,
    pub out: PathBuf,
    pub rmse_threshold: f64,
    pub fit: FitConfig,
    /// Clusters per segment-count group.
    pub k: usize,
    /// Smallest labelled cluster; `None` means 1% of the group.
    pub min_size: Option<usize>,
    /// Scale each feature to unit variance before clustering.
    pub standardize: bool,
    pub models: ModelConfig,
    /// Histogram cells per axis for the adherence score.
    pub grid: usize,
    /// Synthetic vectors per model; `None` means `max(n_real, 10000)`.
    pub synthetic_count: Option<usize>,
    pub seed: u64,
    /// Also fit the uniform-views control corpus.
    pub control: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            format: None,
            out: PathBuf::from("polyview-out"),
            rmse_threshold: 0.01,
            fit: FitConfig::default(),
            k: 3,
            min_size: None,
            standardize: false,
            models: ModelConfig::default(),
            grid: 20,
            synthetic_count: None,
            seed: 0,
            control: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rmse_threshold > 0.0 && self.rmse_threshold.is_finite()) {
            return Err(Error::InvalidConfig(
                "rmse_threshold must be positive and finite".into(),
            ));
        }
        self.fit.validate()?;
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if self.grid == 0 {
            return Err(Error::InvalidConfig("grid must be at least 1".into()));
        }
        let m = &self.models;
        if m.bins_uni < 2 || m.bins_alpha == 0 || m.bins_l == 0 {
            return Err(Error::InvalidConfig(
                "bin counts must be positive (at least 2 for bins_uni)".into(),
            ));
        }
        if self.synthetic_count == Some(0) {
            return Err(Error::InvalidConfig("synthetic_count must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(serde_json::to_vec(self).unwrap_or_default()))
    }

    fn format(&self) -> Result<CorpusFormat> {
        self.format
            .or_else(|| CorpusFormat::from_path(&self.input))
            .ok_or_else(|| Error::InvalidConfig(format!("cannot infer format of {}", self.input.display())))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Fit,
    Features,
    Cluster,
    Model,
    Score,
    Control,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Fit => "fit",
            Stage::Features => "features",
            Stage::Cluster => "cluster",
            Stage::Model => "model",
            Stage::Score => "score",
            Stage::Control => "control",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub seconds: f64,
    /// Artifact path (relative to the output directory) to SHA-256.
    pub artifacts: BTreeMap<String, String>,
    /// Groups or steps skipped, with the reason.
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: Option<PipelineConfig>,
    pub stages: BTreeMap<Stage, StageRecord>,
    /// True when any stage skipped part of its work.
    pub partial: bool,
}

impl Manifest {
    /// All artifact hashes across stages.
    pub fn artifact_hashes(&self) -> BTreeMap<String, String> {
        self.stages.values().flat_map(|s| s.artifacts.clone()).collect()
    }
}

struct StageWriter<'a> {
    out: &'a Path,
    record: StageRecord,
}

impl<'a> StageWriter<'a> {
    fn new(out: &'a Path) -> Self {
        Self {
            out,
            record: StageRecord::default(),
        }
    }

    fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.out.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.record
            .artifacts
            .insert(rel.to_string(), hex(&Sha256::digest(bytes)));
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write_bytes(rel, &bytes)
    }

    fn warn(&mut self, message: String) {
        log::warn!("{message}");
        self.record.warnings.push(message);
    }
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingUpstreamArtifact(path))
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: PathBuf) -> Result<T> {
    let path = require(path)?;
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

fn group_dir(n: usize) -> String {
    format!("n{n}")
}

fn read_group_features(out: &Path, n: usize) -> Result<Vec<SegmentFeatures>> {
    let path = require(out.join(group_dir(n)).join("features.csv"))?;
    read_features_csv(fs::File::open(path)?)
}

fn finish_stage(
    config: &PipelineConfig,
    stage: Stage,
    mut writer: StageWriter<'_>,
    started: Instant,
) -> Result<StageRecord> {
    writer.record.seconds = started.elapsed().as_secs_f64();
    let path = config.out.join("manifest.json");
    let mut manifest: Manifest = if path.exists() {
        serde_json::from_slice(&fs::read(&path)?).unwrap_or_default()
    } else {
        Manifest::default()
    };
    if manifest.config_hash != config.hash() {
        // A different configuration invalidates earlier records.
        manifest = Manifest::default();
    }
    manifest.version = env!("CARGO_PKG_VERSION").to_string();
    manifest.seed = config.seed;
    manifest.config_hash = config.hash();
    manifest.config = Some(config.clone());
    manifest.stages.insert(stage, writer.record.clone());
    manifest.partial = manifest.stages.values().any(|s| !s.warnings.is_empty());
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    fs::create_dir_all(&config.out)?;
    fs::write(path, bytes)?;
    Ok(writer.record)
}

/// Distribution of segment counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentCounts {
    pub total: usize,
    pub counts: BTreeMap<usize, usize>,
    pub proportions: BTreeMap<usize, f64>,
}

impl SegmentCounts {
    pub fn from_counts(segments: impl Iterator<Item = usize>) -> Self {
        let mut counts = BTreeMap::new();
        for n in segments {
            *counts.entry(n).or_insert(0) += 1;
        }
        let total: usize = counts.values().sum();
        let proportions = counts
            .iter()
            .map(|(&n, &c)| (n, c as f64 / total.max(1) as f64))
            .collect();
        Self {
            total,
            counts,
            proportions,
        }
    }
}

/// Fit every profile of `corpus`; returns the records and the profiles set
/// aside with their reason.
pub fn fit_corpus(
    corpus: &[crate::profile_ingest::ViewProfile],
    config: &FitConfig,
) -> (Vec<FitRecord>, Vec<Exclusion>) {
    let (profiles, mut excluded) = normalize_corpus(corpus);
    let results: Vec<_> = profiles
        .par_iter()
        .map(|p| fit_auto(&p.points, config).map(|fit| FitRecord::new(p.id.clone(), &fit)))
        .collect();
    let mut fits = Vec::with_capacity(results.len());
    for (p, r) in profiles.iter().zip(results) {
        match r {
            Ok(record) => fits.push(record),
            Err(e) => excluded.push(Exclusion {
                id: p.id.clone(),
                reason: e.to_string(),
            }),
        }
    }
    (fits, excluded)
}

pub fn run_fit(config: &PipelineConfig) -> Result<StageRecord> {
    config.validate()?;
    let started = Instant::now();
    let corpus = load_corpus(&config.input, config.format()?)?;
    let (fits, excluded) = fit_corpus(&corpus, &config.fit);
    log::info!("fitted {} profiles, excluded {}", fits.len(), excluded.len());
    let mut w = StageWriter::new(&config.out);
    w.write_json("fits.json", &fits)?;
    w.write_json("excluded.json", &excluded)?;
    w.write_json(
        "segment_counts.json",
        &SegmentCounts::from_counts(fits.iter().map(|f| f.n_segments)),
    )?;
    finish_stage(config, Stage::Fit, w, started)
}

/// Outcome of the RMSE gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateSummary {
    pub threshold: f64,
    pub passed: usize,
    pub failed: usize,
    pub pass_rate: f64,
    pub failed_ids: Vec<String>,
    /// Segment counts of the gated profiles, with a `nN/` directory each.
    pub groups: SegmentCounts,
}

/// Gate the fits and group the surviving features by segment count.
pub fn gated_features(
    fits: &[FitRecord],
    threshold: f64,
) -> Result<(GateSummary, BTreeMap<usize, Vec<SegmentFeatures>>)> {
    let (passed, failed) = gate_by_rmse(fits, threshold)?;
    let mut groups: BTreeMap<usize, Vec<SegmentFeatures>> = BTreeMap::new();
    for record in &passed {
        match extract_features(record.id.clone(), &record.to_fit()) {
            Ok(f) => groups.entry(f.n_segments()).or_default().push(f),
            Err(e) => log::warn!("skipping features of `{}`: {e}", record.id),
        }
    }
    let summary = GateSummary {
        threshold,
        passed: passed.len(),
        failed: failed.len(),
        pass_rate: passed.len() as f64 / fits.len().max(1) as f64,
        failed_ids: failed.iter().map(|f| f.id.clone()).collect(),
        groups: SegmentCounts::from_counts(groups.iter().flat_map(|(&n, g)| std::iter::repeat_n(n, g.len()))),
    };
    Ok((summary, groups))
}

pub fn run_features(config: &PipelineConfig) -> Result<StageRecord> {
    config.validate()?;
    let started = Instant::now();
    let fits: Vec<FitRecord> = read_json(config.out.join("fits.json"))?;
    let (summary, groups) = gated_features(&fits, config.rmse_threshold)?;
    let mut w = StageWriter::new(&config.out);
    w.write_json("gate.json", &summary)?;
    let all: Vec<SegmentFeatures> = groups.values().flatten().cloned().collect();
    match angle_histogram(&all, ANGLE_BINS) {
        Ok(h) => w.write_json("angle_histogram.json", &h)?,
        Err(e) => w.warn(format!("angle histogram: {e}")),
    }
    for (&n, features) in &groups {
        let dir = group_dir(n);
        let mut csv = Vec::new();
        write_features_csv(&mut csv, features)?;
        w.write_bytes(&format!("{dir}/features.csv"), &csv)?;
        match correlations(features, n) {
            Ok(report) => w.write_json(&format!("{dir}/correlations.json"), &report)?,
            Err(e) => w.warn(format!("{dir}: correlations skipped: {e}")),
        }
    }
    finish_stage(config, Stage::Features, w, started)
}

fn gate_groups(out: &Path) -> Result<Vec<usize>> {
    let summary: GateSummary = read_json(out.join("gate.json"))?;
    Ok(summary.groups.counts.keys().copied().collect())
}

fn standardized(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = points.len() as f64;
    let dim = points.first().map_or(0, Vec::len);
    let stats: Vec<(f64, f64)> = (0..dim)
        .map(|j| {
            let mean = points.iter().map(|p| p[j]).sum::<f64>() / n;
            let var = points.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            (mean, if var > 0.0 { var.sqrt() } else { 1.0 })
        })
        .collect();
    points
        .iter()
        .map(|p| p.iter().zip(&stats).map(|(v, (m, s))| (v - m) / s).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageCurve {
    pub cluster: usize,
    pub prototype: String,
    pub count: usize,
    pub points: Vec<crate::profile_ingest::Point>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MarginalHistogram {
    edges: Vec<f64>,
    /// Counts per cluster label (`"unassigned"` for unlabelled points).
    counts: BTreeMap<String, Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ClusterPlot {
    n_segments: usize,
    explained_variance_ratio: Vec<f64>,
    ids: Vec<String>,
    pc1: Vec<f64>,
    pc2: Vec<f64>,
    labels: Vec<Option<usize>>,
    marginal_pc1: MarginalHistogram,
    marginal_pc2: MarginalHistogram,
}

fn marginal(values: &[f64], labels: &[Option<usize>]) -> MarginalHistogram {
    let edges =
        crate::model_adherence::grid_edges(&[&values.iter().map(|&v| vec![v]).collect::<Vec<_>>()], 0, PLOT_BINS);
    let mut counts: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (v, l) in values.iter().zip(labels) {
        let key = l.map_or_else(|| "unassigned".to_string(), |l| l.to_string());
        counts.entry(key).or_insert_with(|| vec![0; PLOT_BINS])[crate::generative_models::bin_index(&edges, *v)] += 1;
    }
    MarginalHistogram { edges, counts }
}

fn write_labels_csv(ids: &[String], labels: &[Option<usize>]) -> Result<Vec<u8>> {
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(["id", "label"])?;
    for (id, l) in ids.iter().zip(labels) {
        out.write_record([id.as_str(), &l.map_or_else(String::new, |l| l.to_string())])?;
    }
    out.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn read_labels_csv(path: PathBuf) -> Result<Vec<(String, Option<usize>)>> {
    let mut input = csv::Reader::from_path(require(path)?)?;
    input
        .records()
        .enumerate()
        .map(|(i, r)| {
            let r = r?;
            let label = match r.get(1).unwrap_or("") {
                "" => None,
                s => Some(s.parse().map_err(|e| Error::Parse {
                    record: i + 1,
                    message: format!("label {s:?}: {e}"),
                })?),
            };
            Ok((r.get(0).unwrap_or("").to_string(), label))
        })
        .collect()
}

pub fn run_cluster(config: &PipelineConfig) -> Result<StageRecord> {
    config.validate()?;
    let started = Instant::now();
    let mut w = StageWriter::new(&config.out);
    for n in gate_groups(&config.out)? {
        let dir = group_dir(n);
        let features = read_group_features(&config.out, n)?;
        if features.len() < 2 {
            w.warn(format!(
                "{dir}: clustering needs at least 2 profiles, found {}",
                features.len()
            ));
            continue;
        }
        let ids: Vec<String> = features.iter().map(|f| f.id.clone()).collect();
        let vectors: Vec<Vec<f64>> = features.iter().map(SegmentFeatures::vector).collect();
        let space = if config.standardize {
            standardized(&vectors)
        } else {
            vectors.clone()
        };
        let dendrogram = single_linkage(&space)?;
        let k = config.k.min(features.len());
        let min_size = config.min_size.unwrap_or_else(|| default_min_size(features.len()));
        let assignment = cut(&dendrogram, k, min_size)?;
        w.write_bytes(
            &format!("{dir}/clusters.csv"),
            &write_labels_csv(&ids, &assignment.labels)?,
        )?;

        match pca(&space, space[0].len().min(3)) {
            Ok(projection) => {
                let mut out = csv::Writer::from_writer(Vec::new());
                let mut header = vec!["id".to_string()];
                header.extend((1..=projection.components.len()).map(|i| format!("pc{i}")));
                out.write_record(&header)?;
                for (id, s) in ids.iter().zip(&projection.scores) {
                    let mut row = vec![id.clone()];
                    row.extend(s.iter().map(|v| format!("{v:?}")));
                    out.write_record(&row)?;
                }
                let bytes = out.into_inner().map_err(|e| Error::Io(e.into_error()))?;
                w.write_bytes(&format!("{dir}/pca.csv"), &bytes)?;
                let pc1: Vec<f64> = projection.scores.iter().map(|s| s[0]).collect();
                let pc2: Vec<f64> = projection
                    .scores
                    .iter()
                    .map(|s| s.get(1).copied().unwrap_or(0.0))
                    .collect();
                let plot = ClusterPlot {
                    n_segments: n,
                    explained_variance_ratio: projection.explained_variance_ratio.clone(),
                    ids: ids.clone(),
                    marginal_pc1: marginal(&pc1, &assignment.labels),
                    marginal_pc2: marginal(&pc2, &assignment.labels),
                    pc1,
                    pc2,
                    labels: assignment.labels.clone(),
                };
                w.write_json(&format!("{dir}/cluster_plot.json"), &plot)?;
            }
            Err(e) => w.warn(format!("{dir}: PCA skipped: {e}")),
        }

        if n >= 2 {
            let patterns: Vec<String> = features.iter().map(sign_pattern).collect::<Result<_>>()?;
            let tables = prototype_frequencies(&assignment, &patterns)?;
            let curves = modal_average_curves(&features, &assignment, &patterns, &tables)?;
            w.write_json(&format!("{dir}/prototypes.json"), &tables)?;
            w.write_json(&format!("{dir}/average_curves.json"), &curves)?;
        }
    }
    finish_stage(config, Stage::Cluster, w, started)
}

fn modal_average_curves(
    features: &[SegmentFeatures],
    assignment: &ClusterAssignment,
    patterns: &[String],
    tables: &[PrototypeTable],
) -> Result<Vec<AverageCurve>> {
    let mut curves = Vec::new();
    for table in tables {
        let Some(modal) = &table.modal else { continue };
        let members: Vec<SegmentFeatures> = features
            .iter()
            .zip(&assignment.labels)
            .zip(patterns)
            .filter(|((_, l), p)| **l == Some(table.cluster) && *p == modal)
            .map(|((f, _), _)| f.clone())
            .collect();
        curves.push(AverageCurve {
            cluster: table.cluster,
            prototype: modal.clone(),
            count: members.len(),
            points: average_curve(&members)?,
        });
    }
    Ok(curves)
}

/// Features split by cluster label; unassigned profiles form a final group.
fn cluster_groups(
    features: &[SegmentFeatures],
    labels: &[(String, Option<usize>)],
) -> Result<Vec<Vec<SegmentFeatures>>> {
    if labels.len() != features.len() || labels.iter().zip(features).any(|((id, _), f)| *id != f.id) {
        return Err(Error::Misalignment {
            labels: labels.len(),
            patterns: features.len(),
        });
    }
    let k = labels.iter().filter_map(|(_, l)| *l).max().map_or(0, |m| m + 1);
    let mut groups = vec![Vec::new(); k + 1];
    for (f, (_, l)) in features.iter().zip(labels) {
        groups[l.unwrap_or(k)].push(f.clone());
    }
    Ok(groups)
}

pub fn run_model(config: &PipelineConfig) -> Result<StageRecord> {
    config.validate()?;
    let started = Instant::now();
    let mut w = StageWriter::new(&config.out);
    for n in gate_groups(&config.out)? {
        let dir = group_dir(n);
        let features = read_group_features(&config.out, n)?;
        let labels_path = config.out.join(&dir).join("clusters.csv");
        let groups = if features.len() < 2 {
            vec![features.clone()]
        } else {
            cluster_groups(&features, &read_labels_csv(labels_path)?)?
        };
        let models: Vec<Mixture> = ModelKind::ALL
            .iter()
            .map(|&kind| Mixture::fit(kind, &groups, &config.models))
            .collect::<Result<_>>()?;
        w.write_json(&format!("{dir}/models.json"), &models)?;
    }
    finish_stage(config, Stage::Model, w, started)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdherencePlot {
    pub kind: ModelKind,
    pub real: Histogram2D,
    pub synthetic: Histogram2D,
    pub difference: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdherenceReport {
    pub n_segments: usize,
    /// Best model first.
    pub scores: Vec<AdherenceScore>,
    pub plots: Vec<AdherencePlot>,
}

pub fn run_score(config: &PipelineConfig) -> Result<StageRecord> {
    config.validate()?;
    let started = Instant::now();
    let mut w = StageWriter::new(&config.out);
    for n in gate_groups(&config.out)? {
        let dir = group_dir(n);
        let features = read_group_features(&config.out, n)?;
        let models: Vec<Mixture> = read_json(config.out.join(&dir).join("models.json"))?;
        let count = config.synthetic_count.unwrap_or(features.len().max(10_000));
        let seed = derive_seed(config.seed, &format!("score/{dir}"));
        match rank_models_detailed(&features, &models, count, seed, config.grid) {
            Ok(details) => {
                let report = AdherenceReport {
                    n_segments: n,
                    scores: details.iter().map(|d| d.score.clone()).collect(),
                    plots: details
                        .iter()
                        .map(|d| AdherencePlot {
                            kind: d.score.kind,
                            difference: d.difference(),
                            real: d.real.clone(),
                            synthetic: d.synthetic.clone(),
                        })
                        .collect(),
                };
                w.write_json(&format!("{dir}/adherence.json"), &report)?;
            }
            Err(e) => w.warn(format!("{dir}: scoring skipped: {e}")),
        }
    }
    finish_stage(config, Stage::Score, w, started)
}

/// Real versus control angle distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlComparison {
    pub h_max: u64,
    pub profiles: usize,
    pub pass_rate: f64,
    pub real: Option<AngleHistogram>,
    pub control: Option<AngleHistogram>,
}

pub fn run_control(config: &PipelineConfig) -> Result<StageRecord> {
    config.validate()?;
    let started = Instant::now();
    let corpus = load_corpus(&config.input, config.format()?)?;
    let control_config = ControlConfig::from_corpus(&corpus, derive_seed(config.seed, "control"));
    let control = generate_control_corpus(&corpus, &control_config)?;
    let (fits, _) = fit_corpus(&control, &config.fit);
    let (summary, groups) = gated_features(&fits, config.rmse_threshold)?;
    let gated: Vec<SegmentFeatures> = groups.into_values().flatten().collect();

    let real_fits: Vec<FitRecord> = read_json(config.out.join("fits.json"))?;
    let (_, real_groups) = gated_features(&real_fits, config.rmse_threshold)?;
    let real: Vec<SegmentFeatures> = real_groups.into_values().flatten().collect();

    let mut w = StageWriter::new(&config.out);
    w.write_json("control/fits.json", &fits)?;
    let comparison = ControlComparison {
        h_max: control_config.h_max,
        profiles: control.len(),
        pass_rate: summary.pass_rate,
        real: angle_histogram(&real, ANGLE_BINS).ok(),
        control: angle_histogram(&gated, ANGLE_BINS).ok(),
    };
    w.write_json("control/angle_histogram.json", &comparison)?;
    finish_stage(config, Stage::Control, w, started)
}

/// Run every stage in order and return the manifest.
pub fn run_pipeline(config: &PipelineConfig) -> Result<Manifest> {
    config.validate()?;
    fs::create_dir_all(&config.out)?;
    run_fit(config)?;
    run_features(config)?;
    run_cluster(config)?;
    run_model(config)?;
    run_score(config)?;
    if config.control {
        run_control(config)?;
    }
    read_manifest(&config.out)
}

pub fn read_manifest(out: &Path) -> Result<Manifest> {
    read_json(out.join("manifest.json"))
}

/// Correlation report of one group, if the features stage wrote one.
pub fn load_correlations(out: &Path, n: usize) -> Result<CorrelationReport> {
    read_json(out.join(group_dir(n)).join("correlations.json"))
}
