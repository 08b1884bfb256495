//! Per-segment angle/length features and their summary statistics.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segmented_regression::{FitRecord, SegmentedFit};

/// Angles (degrees) and x-extents of each segment of one fitted profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentFeatures {
    pub id: String,
    pub angles: Vec<f64>,
    pub lengths: Vec<f64>,
}

impl SegmentFeatures {
    pub fn n_segments(&self) -> usize {
        self.angles.len()
    }

    /// `[α_1..α_N, l_1..l_N]`.
    pub fn vector(&self) -> Vec<f64> {
        self.angles.iter().chain(&self.lengths).copied().collect()
    }

    /// Inverse of [`SegmentFeatures::vector`].
    pub fn from_vector(id: impl Into<String>, v: &[f64]) -> Self {
        let n = v.len() / 2;
        Self {
            id: id.into(),
            angles: v[..n].to_vec(),
            lengths: v[n..].to_vec(),
        }
    }
}

/// Features of a fit on the unit interval. Segment boundaries are
/// `{0, ψ_1, ..., ψ_N, 1}`.
pub fn extract_features(id: impl Into<String>, fit: &SegmentedFit) -> Result<SegmentFeatures> {
    if !fit.converged {
        return Err(Error::NotConverged);
    }
    if fit.breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::DegenerateBreakpoints(
            fit.breakpoints[0],
            fit.breakpoints[fit.breakpoints.len() - 1],
        ));
    }
    let mut bounds = Vec::with_capacity(fit.breakpoints.len() + 2);
    bounds.push(0.0);
    bounds.extend(&fit.breakpoints);
    bounds.push(1.0);
    Ok(SegmentFeatures {
        id: id.into(),
        angles: fit
            .segment_slopes()
            .into_iter()
            .map(|s| s.atan().to_degrees())
            .collect(),
        lengths: bounds.windows(2).map(|w| w[1] - w[0]).collect(),
    })
}

/// Anything carrying a fit error.
pub trait HasRmse {
    fn rmse(&self) -> f64;
}

impl HasRmse for SegmentedFit {
    fn rmse(&self) -> f64 {
        self.rmse
    }
}

impl HasRmse for FitRecord {
    fn rmse(&self) -> f64 {
        self.rmse
    }
}

/// Split into `(rmse < threshold, rest)`, keeping order.
pub fn gate_by_rmse<T: HasRmse + Clone>(fits: &[T], threshold: f64) -> Result<(Vec<T>, Vec<T>)> {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "rmse threshold must be positive and finite, got {threshold}"
        )));
    }
    Ok(fits.iter().cloned().partition(|f| f.rmse() < threshold))
}

/// `'+'` where the next angle is larger, `'-'` otherwise (ties included).
pub fn sign_pattern(features: &SegmentFeatures) -> Result<String> {
    if features.n_segments() < 2 {
        return Err(Error::TooFewSegments(features.n_segments()));
    }
    Ok(features
        .angles
        .windows(2)
        .map(|w| if w[1] > w[0] { '+' } else { '-' })
        .collect())
}

/// Variable names in vector order: `a1..aN, l1..lN`.
pub fn variable_labels(n_segments: usize) -> Vec<String> {
    (1..=n_segments)
        .map(|i| format!("a{i}"))
        .chain((1..=n_segments).map(|i| format!("l{i}")))
        .collect()
}

/// Pearson correlation matrix over all angle and length variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub n_segments: usize,
    pub labels: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
}

impl CorrelationReport {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.labels.iter().position(|l| l == a)?;
        let j = self.labels.iter().position(|l| l == b)?;
        Some(self.matrix[i][j])
    }
}

pub fn correlations(features: &[SegmentFeatures], n_segments: usize) -> Result<CorrelationReport> {
    if let Some(bad) = features.iter().find(|f| f.n_segments() != n_segments) {
        return Err(Error::MixedSegmentCounts {
            expected: n_segments,
            found: bad.n_segments(),
        });
    }
    if features.len() < 2 {
        return Err(Error::EmptyInput);
    }
    let labels = variable_labels(n_segments);
    let columns: Vec<Vec<f64>> = (0..2 * n_segments)
        .map(|j| features.iter().map(|f| f.vector()[j]).collect())
        .collect();
    let centered: Vec<Vec<f64>> = columns
        .iter()
        .zip(&labels)
        .map(|(c, label)| {
            let mean = c.iter().sum::<f64>() / c.len() as f64;
            let d: Vec<f64> = c.iter().map(|v| v - mean).collect();
            let ss: f64 = d.iter().map(|v| v * v).sum();
            if ss <= f64::EPSILON * f64::EPSILON * c.len() as f64 * (1.0 + mean * mean) {
                return Err(Error::ZeroVariance(label.clone()));
            }
            let norm = ss.sqrt();
            Ok(d.into_iter().map(|v| v / norm).collect())
        })
        .collect::<Result<_>>()?;
    let p = centered.len();
    let mut matrix = vec![vec![0.0; p]; p];
    for i in 0..p {
        matrix[i][i] = 1.0;
        for j in i + 1..p {
            let r: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
            let r = r.clamp(-1.0, 1.0);
            matrix[i][j] = r;
            matrix[j][i] = r;
        }
    }
    Ok(CorrelationReport {
        n_segments,
        labels,
        matrix,
    })
}

/// Normalized histogram of every angle over `[0, 90)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleHistogram {
    pub edges: Vec<f64>,
    pub masses: Vec<f64>,
}

impl AngleHistogram {
    pub fn modal_bin(&self) -> usize {
        (0..self.masses.len())
            .max_by(|&a, &b| self.masses[a].total_cmp(&self.masses[b]).then(b.cmp(&a)))
            .unwrap_or(0)
    }
}

/// Angles outside `[0, 90)` are counted in the nearest end bin.
pub fn angle_histogram(features: &[SegmentFeatures], bins: usize) -> Result<AngleHistogram> {
    if bins < 2 {
        return Err(Error::InvalidConfig("angle histogram needs at least 2 bins".into()));
    }
    let mut counts = vec![0usize; bins];
    let mut total = 0usize;
    for a in features.iter().flat_map(|f| &f.angles) {
        let bin = ((a / 90.0) * bins as f64).floor();
        counts[(bin.max(0.0) as usize).min(bins - 1)] += 1;
        total += 1;
    }
    if total == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(AngleHistogram {
        edges: (0..=bins).map(|i| 90.0 * i as f64 / bins as f64).collect(),
        masses: counts.into_iter().map(|c| c as f64 / total as f64).collect(),
    })
}

/// Write `id,n_segments,a1..aN,l1..lN` rows. All rows must share `N`.
pub fn write_features_csv<W: Write>(writer: W, features: &[SegmentFeatures]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    if let Some(first) = features.first() {
        let n = first.n_segments();
        let mut header = vec!["id".to_string(), "n_segments".to_string()];
        header.extend(variable_labels(n));
        out.write_record(&header)?;
        for f in features {
            if f.n_segments() != n {
                return Err(Error::MixedSegmentCounts {
                    expected: n,
                    found: f.n_segments(),
                });
            }
            let mut row = vec![f.id.clone(), n.to_string()];
            row.extend(f.vector().iter().map(|v| format!("{v:?}")));
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_features_csv<R: Read>(reader: R) -> Result<Vec<SegmentFeatures>> {
    let mut input = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut features = Vec::new();
    for (i, row) in input.records().enumerate() {
        let row = row?;
        let parse_err = |message: String| Error::Parse { record: i + 1, message };
        let id = row.get(0).ok_or_else(|| parse_err("missing id".into()))?.to_string();
        let n: usize = row
            .get(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err("bad n_segments".into()))?;
        if row.len() != 2 + 2 * n {
            return Err(parse_err(format!("expected {} fields, found {}", 2 + 2 * n, row.len())));
        }
        let values: Vec<f64> = row
            .iter()
            .skip(2)
            .map(|s| s.parse::<f64>().map_err(|e| parse_err(format!("{s:?}: {e}"))))
            .collect::<Result<_>>()?;
        features.push(SegmentFeatures::from_vector(id, &values));
    }
    Ok(features)
}
