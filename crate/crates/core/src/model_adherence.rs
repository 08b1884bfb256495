//! Scoring generative models against real features.
//!
//! Real and synthetic feature vectors are projected together on their first
//! two principal components, binned on a shared grid, and compared with
//! `ε = Σ |π_real - π_synthetic|` over all cells.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster_analysis::{pca, PcaProjection};
use crate::error::{Error, Result};
use crate::feature_extraction::SegmentFeatures;
use crate::generative_models::{bin_index, FeatureSampler, ModelKind};
use crate::seed::derive_seed;

/// PCA fitted on real and synthetic vectors together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointPca {
    pub projection: PcaProjection,
    pub n_real: usize,
}

impl JointPca {
    pub fn real_scores(&self) -> &[Vec<f64>] {
        &self.projection.scores[..self.n_real]
    }

    pub fn synthetic_scores(&self) -> &[Vec<f64>] {
        &self.projection.scores[self.n_real..]
    }

    /// Short hex digest of the component vectors.
    pub fn basis_id(&self) -> String {
        let mut hasher = Sha256::new();
        for v in self.projection.components.iter().flatten() {
            hasher.update(v.to_le_bytes());
        }
        hasher.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

pub fn joint_pca(real: &[SegmentFeatures], synthetic: &[SegmentFeatures]) -> Result<JointPca> {
    let n = real.first().ok_or(Error::EmptyInput)?.n_segments();
    if synthetic.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(bad) = real.iter().chain(synthetic).find(|f| f.n_segments() != n) {
        return Err(Error::MixedSegmentCounts {
            expected: n,
            found: bad.n_segments(),
        });
    }
    let points: Vec<Vec<f64>> = real.iter().chain(synthetic).map(SegmentFeatures::vector).collect();
    Ok(JointPca {
        projection: pca(&points, 2 * n)?,
        n_real: real.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram2D {
    pub x_edges: Vec<f64>,
    pub y_edges: Vec<f64>,
    /// Cell masses, x-major: cell `(i, j)` is at `i * (y_edges.len() - 1) + j`.
    pub masses: Vec<f64>,
}

impl Histogram2D {
    pub fn same_bins(&self, other: &Histogram2D) -> bool {
        self.x_edges == other.x_edges && self.y_edges == other.y_edges && self.masses.len() == other.masses.len()
    }
}

fn check_edges(edges: &[f64]) -> Result<()> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidConfig("bin edges must be strictly increasing".into()));
    }
    Ok(())
}

/// Normalized 2-D histogram of the first two coordinates of `points`.
/// Boundary points go to the higher cell, the top edge is inclusive, and
/// points outside the edges are counted in the nearest cell.
pub fn histogram2d(points: &[Vec<f64>], x_edges: &[f64], y_edges: &[f64]) -> Result<Histogram2D> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    check_edges(x_edges)?;
    check_edges(y_edges)?;
    let ny = y_edges.len() - 1;
    let mut masses = vec![0.0; (x_edges.len() - 1) * ny];
    let unit = 1.0 / points.len() as f64;
    for p in points {
        let y = p.get(1).copied().unwrap_or(0.0);
        masses[bin_index(x_edges, p[0]) * ny + bin_index(y_edges, y)] += unit;
    }
    Ok(Histogram2D {
        x_edges: x_edges.to_vec(),
        y_edges: y_edges.to_vec(),
        masses,
    })
}

/// `bins` equal-width edges over the joint range of coordinate `axis`.
pub fn grid_edges(groups: &[&[Vec<f64>]], axis: usize, bins: usize) -> Vec<f64> {
    let values = groups
        .iter()
        .flat_map(|g| g.iter())
        .map(|p| p.get(axis).copied().unwrap_or(0.0));
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let (lo, hi) = if hi > lo {
        (lo, hi)
    } else {
        let pad = 0.5 * lo.abs().max(1e-9);
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

/// L1 distance between two histograms on the same bins.
pub fn epsilon(pi_o: &Histogram2D, pi_s: &Histogram2D) -> Result<f64> {
    if !pi_o.same_bins(pi_s) {
        return Err(Error::BinMismatch);
    }
    Ok(pi_o.masses.iter().zip(&pi_s.masses).map(|(a, b)| (a - b).abs()).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdherenceScore {
    pub kind: ModelKind,
    pub epsilon: f64,
    pub n_real: usize,
    pub n_synth: usize,
    pub grid: usize,
    pub pca_basis_id: String,
}

/// Score plus the two histograms it was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdherenceDetail {
    pub score: AdherenceScore,
    pub real: Histogram2D,
    pub synthetic: Histogram2D,
}

impl AdherenceDetail {
    pub fn difference(&self) -> Vec<f64> {
        self.real
            .masses
            .iter()
            .zip(&self.synthetic.masses)
            .map(|(a, b)| (a - b).abs())
            .collect()
    }
}

/// Compare `real` with an already drawn synthetic set.
pub fn compare(
    real: &[SegmentFeatures],
    synthetic: &[SegmentFeatures],
    kind: ModelKind,
    grid: usize,
) -> Result<AdherenceDetail> {
    if grid == 0 {
        return Err(Error::InvalidConfig("histogram grid must be positive".into()));
    }
    let joint = joint_pca(real, synthetic)?;
    let (r, s) = (joint.real_scores(), joint.synthetic_scores());
    let x_edges = grid_edges(&[r, s], 0, grid);
    let y_edges = grid_edges(&[r, s], 1, grid);
    let real_hist = histogram2d(r, &x_edges, &y_edges)?;
    let synth_hist = histogram2d(s, &x_edges, &y_edges)?;
    Ok(AdherenceDetail {
        score: AdherenceScore {
            kind,
            epsilon: epsilon(&real_hist, &synth_hist)?,
            n_real: real.len(),
            n_synth: synthetic.len(),
            grid,
            pca_basis_id: joint.basis_id(),
        },
        real: real_hist,
        synthetic: synth_hist,
    })
}

/// Sample `count` vectors from each model and score it; best (lowest ε)
/// first, ties in model-kind order. Each model draws from its own seed
/// derived from `seed` and its kind.
pub fn rank_models_detailed<M: FeatureSampler>(
    real: &[SegmentFeatures],
    models: &[M],
    count: usize,
    seed: u64,
    grid: usize,
) -> Result<Vec<AdherenceDetail>> {
    if models.is_empty() || count == 0 {
        return Err(Error::EmptyInput);
    }
    let mut details = models
        .iter()
        .map(|m| {
            let synthetic = m.sample(count, derive_seed(seed, m.kind().as_str()));
            compare(real, &synthetic, m.kind(), grid)
        })
        .collect::<Result<Vec<_>>>()?;
    details.sort_by(|a, b| {
        a.score
            .epsilon
            .total_cmp(&b.score.epsilon)
            .then(a.score.kind.cmp(&b.score.kind))
    });
    Ok(details)
}

pub fn rank_models<M: FeatureSampler>(
    real: &[SegmentFeatures],
    models: &[M],
    count: usize,
    seed: u64,
    grid: usize,
) -> Result<Vec<AdherenceScore>> {
    Ok(rank_models_detailed(real, models, count, seed, grid)?
        .into_iter()
        .map(|d| d.score)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generative_models::{fit_independent, fit_null};
    use crate::seed::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn hist(masses: &[f64]) -> Histogram2D {
        Histogram2D {
            x_edges: (0..=masses.len()).map(|i| i as f64).collect(),
            y_edges: vec![0.0, 1.0],
            masses: masses.to_vec(),
        }
    }

    #[test]
    fn epsilon_hand_values() {
        assert_eq!(epsilon(&hist(&[0.5, 0.5]), &hist(&[1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(epsilon(&hist(&[1.0, 0.0]), &hist(&[0.0, 1.0])).unwrap(), 2.0);
        assert_eq!(epsilon(&hist(&[0.3, 0.7]), &hist(&[0.3, 0.7])).unwrap(), 0.0);
        assert!(matches!(
            epsilon(&hist(&[1.0]), &hist(&[0.5, 0.5])),
            Err(Error::BinMismatch)
        ));
    }

    #[test]
    fn histogram_cells() {
        let e = [0.0, 1.0, 2.0];
        let one = histogram2d(&[vec![0.3, 1.7]], &e, &e).unwrap();
        assert_eq!(one.masses, vec![0.0, 1.0, 0.0, 0.0]);
        let centers = [vec![0.5, 0.5], vec![0.5, 1.5], vec![1.5, 0.5], vec![1.5, 1.5]];
        assert_eq!(histogram2d(&centers, &e, &e).unwrap().masses, vec![0.25; 4]);
        // boundary goes up, top edge inclusive
        let edge = histogram2d(&[vec![1.0, 2.0]], &e, &e).unwrap();
        assert_eq!(edge.masses, vec![0.0, 0.0, 0.0, 1.0]);
        assert!(histogram2d(&[], &e, &e).is_err());
        assert!(histogram2d(&centers, &[0.0, 0.0], &e).is_err());
    }

    #[test]
    fn uniform_points_fill_grid_evenly() {
        let mut rng = stream_rng(21, 0);
        let pts: Vec<Vec<f64>> = (0..100_000)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let e: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let h = histogram2d(&pts, &e, &e).unwrap();
        let sigma = (0.01f64 * 0.99 / 100_000.0).sqrt();
        for m in &h.masses {
            assert!((m - 0.01).abs() < 3.0 * sigma + 1e-12, "{m}");
        }
        assert!((h.masses.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    fn feats(rows: &[[f64; 4]]) -> Vec<SegmentFeatures> {
        rows.iter().map(|r| SegmentFeatures::from_vector("f", r)).collect()
    }

    #[test]
    fn copies_share_scores() {
        let mut rng = stream_rng(3, 0);
        let real: Vec<[f64; 4]> = (0..50)
            .map(|_| [rng.random(), rng.random(), rng.random(), rng.random()])
            .collect();
        let j = joint_pca(&feats(&real), &feats(&real)).unwrap();
        assert_eq!(j.real_scores(), j.synthetic_scores());
        let d = compare(&feats(&real), &feats(&real), ModelKind::Null, 20).unwrap();
        assert_eq!(d.score.epsilon, 0.0);
    }

    #[test]
    fn offset_clouds_align_first_component() {
        let mut rng = stream_rng(4, 0);
        let base: Vec<[f64; 4]> = (0..200)
            .map(|_| [rng.random(), rng.random(), rng.random(), rng.random()])
            .collect();
        let mut last = 0.0;
        for offset in [1.0, 10.0, 100.0] {
            let shifted: Vec<[f64; 4]> = base.iter().map(|r| [r[0] + offset, r[1], r[2], r[3]]).collect();
            let j = joint_pca(&feats(&base), &feats(&shifted)).unwrap();
            let ratio = j.projection.explained_variance_ratio[0];
            assert!(ratio > last);
            last = ratio;
            assert!(j.projection.components[0][0].abs() > 0.9);
        }
        assert!(last > 0.999);
    }

    #[test]
    fn mixed_segment_counts_rejected() {
        let a = vec![SegmentFeatures::from_vector("a", &[1.0, 2.0, 0.5, 0.5])];
        let b = vec![SegmentFeatures::from_vector("b", &[1.0, 1.0])];
        assert!(matches!(joint_pca(&a, &b), Err(Error::MixedSegmentCounts { .. })));
    }

    #[test]
    fn ranking_prefers_fitted_model() {
        let mut rng = stream_rng(5, 0);
        let real: Vec<SegmentFeatures> = (0..3000)
            .map(|_| {
                let a: f64 = rng.random_range(30.0..60.0);
                let l: f64 = rng.random_range(0.1..0.3);
                SegmentFeatures::from_vector("r", &[a, a * 0.5 + rng.random_range(0.0..5.0), l, 1.0 - l])
            })
            .collect();
        let models = vec![fit_null(2).unwrap(), fit_independent(&real).unwrap()];
        let scores = rank_models(&real, &models, 3000, 1, 20).unwrap();
        assert_eq!(scores[0].kind, ModelKind::Independent);
        assert!(scores[0].epsilon < scores[1].epsilon);
    }

    proptest! {
        #[test]
        fn epsilon_is_a_metric(
            a in prop::collection::vec(0.0f64..1.0, 12),
            b in prop::collection::vec(0.0f64..1.0, 12),
            c in prop::collection::vec(0.0f64..1.0, 12),
            perm_seed in 0u64..1000,
        ) {
            let norm = |v: &[f64]| {
                let s: f64 = v.iter().sum::<f64>().max(1e-12);
                hist(&v.iter().map(|x| x / s).collect::<Vec<_>>())
            };
            let (a, b, c) = (norm(&a), norm(&b), norm(&c));
            let ab = epsilon(&a, &b).unwrap();
            prop_assert_eq!(ab, epsilon(&b, &a).unwrap());
            prop_assert!((0.0..=2.0 + 1e-12).contains(&ab));
            prop_assert!(ab <= epsilon(&a, &c).unwrap() + epsilon(&c, &b).unwrap() + 1e-12);
            // common permutation of cells
            let mut order: Vec<usize> = (0..12).collect();
            let mut rng = stream_rng(perm_seed, 0);
            for i in (1..12).rev() {
                order.swap(i, rng.random_range(0..=i));
            }
            let pa = hist(&order.iter().map(|&i| a.masses[i]).collect::<Vec<_>>());
            let pb = hist(&order.iter().map(|&i| b.masses[i]).collect::<Vec<_>>());
            prop_assert!((epsilon(&pa, &pb).unwrap() - ab).abs() < 1e-12);
        }
    }
}
