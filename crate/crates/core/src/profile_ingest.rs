//! Loading monthly-view corpora, normalizing them into unit-square cumulative
//! profiles, and generating the uniform-views control corpus.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::stream_rng;

/// Raw per-month view counts for one article. Index 0 is the publication month.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewProfile {
    pub id: String,
    pub monthly_views: Vec<u64>,
}

/// A point of a curve in the normalized unit square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

/// Cumulative views rescaled to `[0, 1]` on both axes, first month dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedProfile {
    pub id: String,
    pub points: Vec<Point>,
}

impl NormalizedProfile {
    pub fn xs(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.x).collect()
    }

    pub fn ys(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.y).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Csv,
    Json,
}

impl CorpusFormat {
    /// Guess the format from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" | "txt" => Some(Self::Csv),
            "json" => Some(Self::Json),
            _ => None,
        }
    }
}

/// Settings for the uniform-views control corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlConfig {
    /// Largest monthly view count in the real corpus; draws are uniform on `0..h_max`.
    pub h_max: u64,
    pub seed: u64,
}

impl ControlConfig {
    /// Take `h_max` from the largest monthly count in `corpus` (at least 1).
    pub fn from_corpus(corpus: &[ViewProfile], seed: u64) -> Self {
        let h_max = corpus
            .iter()
            .flat_map(|p| p.monthly_views.iter().copied())
            .max()
            .unwrap_or(0)
            .max(1);
        Self { h_max, seed }
    }
}

/// Load a corpus from `path`.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<ViewProfile>> {
    let text = fs::read_to_string(path)?;
    match format {
        CorpusFormat::Csv => parse_csv(&text),
        CorpusFormat::Json => parse_json(&text),
    }
}

/// Parse `id,views_m0,views_m1,...` rows. Rows may have different lengths.
pub fn parse_csv(text: &str) -> Result<Vec<ViewProfile>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut profiles = Vec::new();
    for (record_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            record: record_idx + 1,
            message: e.to_string(),
        })?;
        let mut fields = record.iter();
        let id = fields.next().unwrap_or_default();
        if id.is_empty() {
            return Err(Error::Parse {
                record: record_idx + 1,
                message: "empty id".into(),
            });
        }
        let monthly_views = fields
            .enumerate()
            .map(|(month, field)| parse_count(field, record_idx + 1, month))
            .collect::<Result<Vec<_>>>()?;
        profiles.push(build_profile(id.to_string(), monthly_views, record_idx + 1)?);
    }
    check_unique(&profiles)?;
    Ok(profiles)
}

/// Parse a JSON array of `{ "id": ..., "monthly_views": [...] }` objects.
pub fn parse_json(text: &str) -> Result<Vec<ViewProfile>> {
    #[derive(Deserialize)]
    struct RawProfile {
        id: String,
        monthly_views: Vec<i64>,
    }

    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let raw: Vec<RawProfile> = serde_json::from_str(text).map_err(|e| Error::Parse {
        record: e.line(),
        message: e.to_string(),
    })?;
    let mut profiles = Vec::with_capacity(raw.len());
    for (idx, r) in raw.into_iter().enumerate() {
        if r.id.is_empty() {
            return Err(Error::Parse {
                record: idx + 1,
                message: "empty id".into(),
            });
        }
        let views = r
            .monthly_views
            .iter()
            .enumerate()
            .map(|(month, &v)| {
                u64::try_from(v).map_err(|_| Error::Parse {
                    record: idx + 1,
                    message: format!("negative count {v} in month {month}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        profiles.push(build_profile(r.id, views, idx + 1)?);
    }
    check_unique(&profiles)?;
    Ok(profiles)
}

fn parse_count(field: &str, record: usize, month: usize) -> Result<u64> {
    if field.is_empty() {
        return Err(Error::Parse {
            record,
            message: format!("missing count for month {month}"),
        });
    }
    field.parse::<u64>().map_err(|_| Error::Parse {
        record,
        message: format!("count `{field}` in month {month} is not a non-negative integer"),
    })
}

fn build_profile(id: String, monthly_views: Vec<u64>, record: usize) -> Result<ViewProfile> {
    if monthly_views.is_empty() {
        return Err(Error::Parse {
            record,
            message: format!("profile `{id}` has no monthly counts"),
        });
    }
    Ok(ViewProfile { id, monthly_views })
}

fn check_unique(profiles: &[ViewProfile]) -> Result<()> {
    let mut seen = HashSet::with_capacity(profiles.len());
    for p in profiles {
        if !seen.insert(p.id.as_str()) {
            return Err(Error::DuplicateId(p.id.clone()));
        }
    }
    Ok(())
}

/// Normalize a profile into the unit square.
///
/// Month 0 is dropped, the remaining months are accumulated, month index `i`
/// maps to `i / (m - 1)` and cumulative views are divided by the final total.
pub fn normalize(profile: &ViewProfile) -> Result<NormalizedProfile> {
    let months = profile.monthly_views.len();
    if months < 3 {
        return Err(Error::TooShort {
            id: profile.id.clone(),
            months,
        });
    }
    let kept = &profile.monthly_views[1..];
    let mut cumulative = Vec::with_capacity(kept.len());
    let mut total: u64 = 0;
    for &v in kept {
        total += v;
        cumulative.push(total);
    }
    if total == 0 {
        return Err(Error::AllZeroViews(profile.id.clone()));
    }
    let last = (kept.len() - 1) as f64;
    let points = cumulative
        .iter()
        .enumerate()
        .map(|(i, &c)| Point {
            x: i as f64 / last,
            y: c as f64 / total as f64,
        })
        .collect();
    Ok(NormalizedProfile {
        id: profile.id.clone(),
        points,
    })
}

/// A profile that could not be normalized, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub id: String,
    pub reason: String,
}

/// Normalize every profile, setting aside (and logging) the ones that are
/// too short or have no views after the first month.
pub fn normalize_corpus(corpus: &[ViewProfile]) -> (Vec<NormalizedProfile>, Vec<Exclusion>) {
    let mut kept = Vec::with_capacity(corpus.len());
    let mut excluded = Vec::new();
    for profile in corpus {
        match normalize(profile) {
            Ok(p) => kept.push(p),
            Err(e) => {
                log::info!("excluding profile `{}`: {e}", profile.id);
                excluded.push(Exclusion {
                    id: profile.id.clone(),
                    reason: e.to_string(),
                });
            }
        }
    }
    (kept, excluded)
}

/// Build the control corpus: one synthetic profile per real profile, with the
/// same number of months, each month drawn uniformly from `0..h_max`.
pub fn generate_control_corpus(real_corpus: &[ViewProfile], config: &ControlConfig) -> Result<Vec<ViewProfile>> {
    if real_corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if config.h_max == 0 {
        return Err(Error::InvalidConfig("h_max must be at least 1".into()));
    }
    Ok(real_corpus
        .iter()
        .enumerate()
        .map(|(i, real)| {
            let mut rng = stream_rng(config.seed, i as u64);
            let monthly_views = (0..real.monthly_views.len())
                .map(|_| rng.random_range(0..config.h_max))
                .collect();
            ViewProfile {
                id: format!("control-{}", real.id),
                monthly_views,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn profile(views: &[u64]) -> ViewProfile {
        ViewProfile {
            id: "p".into(),
            monthly_views: views.to_vec(),
        }
    }

    #[test]
    fn csv_row_maps_fields() {
        let corpus = parse_csv("a1,3,5,0,2\n").unwrap();
        assert_eq!(
            corpus,
            vec![ViewProfile {
                id: "a1".into(),
                monthly_views: vec![3, 5, 0, 2]
            }]
        );
    }

    #[test]
    fn csv_variable_length_rows() {
        let corpus = parse_csv("a,1,2\nb,1,2,3,4\n").unwrap();
        assert_eq!(corpus[0].monthly_views.len(), 2);
        assert_eq!(corpus[1].monthly_views.len(), 4);
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        assert!(parse_csv("").unwrap().is_empty());
        assert!(parse_json("").unwrap().is_empty());
        assert!(parse_json("[]").unwrap().is_empty());
    }

    #[test]
    fn csv_rejects_bad_counts() {
        assert!(matches!(parse_csv("a2,3,-1"), Err(Error::Parse { .. })));
        assert!(matches!(parse_csv("a2,3,1.5"), Err(Error::Parse { .. })));
        assert!(matches!(parse_csv("a2,3,,4"), Err(Error::Parse { .. })));
        assert!(matches!(parse_csv("a2"), Err(Error::Parse { .. })));
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(matches!(
            parse_csv("a,1,2\na,3,4\n"),
            Err(Error::DuplicateId(id)) if id == "a"
        ));
        assert!(matches!(
            parse_json(r#"[{"id":"a","monthly_views":[1]},{"id":"a","monthly_views":[2]}]"#),
            Err(Error::DuplicateId(_))
        ));
    }

    #[test]
    fn json_profiles() {
        let corpus = parse_json(r#"[{"id":"x","monthly_views":[1,2,3]},{"id":"y","monthly_views":[0]}]"#).unwrap();
        assert_eq!(corpus[0].monthly_views, vec![1, 2, 3]);
        assert_eq!(corpus[1].id, "y");
        assert!(matches!(
            parse_json(r#"[{"id":"x","monthly_views":[1,-2]}]"#),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            parse_json(r#"[{"id":"x","monthly_views":[1,2.5]}]"#),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(CorpusFormat::from_path(Path::new("a.CSV")), Some(CorpusFormat::Csv));
        assert_eq!(CorpusFormat::from_path(Path::new("a.json")), Some(CorpusFormat::Json));
        assert_eq!(CorpusFormat::from_path(Path::new("a.parquet")), None);
    }

    #[test]
    fn normalize_drops_first_month() {
        let n = normalize(&profile(&[9, 10, 10, 20])).unwrap();
        assert_eq!(n.xs(), vec![0.0, 0.5, 1.0]);
        assert_eq!(n.ys(), vec![0.25, 0.5, 1.0]);
    }

    #[test]
    fn normalize_errors() {
        assert!(matches!(
            normalize(&profile(&[5, 0, 0, 0])),
            Err(Error::AllZeroViews(_))
        ));
        assert!(matches!(
            normalize(&profile(&[5, 1])),
            Err(Error::TooShort { months: 2, .. })
        ));
    }

    #[test]
    fn constant_views_are_collinear() {
        // m kept months of equal views: y_i = (i + 1) / m with x_i = i / (m - 1),
        // i.e. the line y = (1 + (m - 1) x) / m.
        for m in [2usize, 3, 16, 119] {
            let mut views = vec![1u64];
            views.extend(std::iter::repeat_n(37, m));
            let n = normalize(&profile(&views)).unwrap();
            let mf = m as f64;
            for p in &n.points {
                assert!((p.y - (1.0 + (mf - 1.0) * p.x) / mf).abs() < 1e-12, "m={m} {p:?}");
            }
        }
    }

    #[test]
    fn normalize_corpus_sets_aside_bad_profiles() {
        let corpus = vec![
            profile(&[1, 2, 3]),
            ViewProfile {
                id: "short".into(),
                monthly_views: vec![1, 2],
            },
            ViewProfile {
                id: "zero".into(),
                monthly_views: vec![4, 0, 0],
            },
        ];
        let (kept, excluded) = normalize_corpus(&corpus);
        assert_eq!(kept.len(), 1);
        let ids: Vec<_> = excluded.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, vec!["short", "zero"]);
    }

    #[test]
    fn control_with_singleton_support_is_zero() {
        let real = vec![profile(&[1, 2, 3, 4])];
        let control = generate_control_corpus(&real, &ControlConfig { h_max: 1, seed: 3 }).unwrap();
        assert_eq!(control[0].monthly_views, vec![0, 0, 0, 0]);
    }

    #[test]
    fn control_is_deterministic_and_length_matched() {
        let real = vec![profile(&[1, 2, 3, 4]), profile(&[7; 11])];
        let cfg = ControlConfig { h_max: 50, seed: 99 };
        let a = generate_control_corpus(&real, &cfg).unwrap();
        let b = generate_control_corpus(&real, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].monthly_views.len(), 4);
        assert_eq!(a[1].monthly_views.len(), 11);
        let c = generate_control_corpus(&real, &ControlConfig { seed: 100, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn control_mean_matches_discrete_uniform() {
        let real = vec![profile(&vec![0; 100_000])];
        let control = generate_control_corpus(&real, &ControlConfig { h_max: 1000, seed: 11 }).unwrap();
        let draws = &control[0].monthly_views;
        let n = draws.len() as f64;
        let mean = draws.iter().map(|&v| v as f64).sum::<f64>() / n;
        // variance of the discrete uniform on {0..999} is (1000^2 - 1) / 12
        let se = ((1000.0f64 * 1000.0 - 1.0) / 12.0 / n).sqrt();
        assert!((mean - 499.5).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn control_requires_real_profiles() {
        assert!(matches!(
            generate_control_corpus(&[], &ControlConfig { h_max: 3, seed: 0 }),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn h_max_from_corpus() {
        let cfg = ControlConfig::from_corpus(&[profile(&[3, 90, 4]), profile(&[12])], 1);
        assert_eq!(cfg.h_max, 90);
        assert_eq!(ControlConfig::from_corpus(&[profile(&[0, 0])], 1).h_max, 1);
    }

    proptest! {
        #[test]
        fn normalized_profiles_satisfy_invariants(
            views in prop::collection::vec(0u64..10_000, 3..80),
            scale in 1u64..1000,
        ) {
            let p = profile(&views);
            if views[1..].iter().all(|&v| v == 0) {
                prop_assert!(normalize(&p).is_err());
                return Ok(());
            }
            let n = normalize(&p).unwrap();
            prop_assert_eq!(n.points.len(), views.len() - 1);
            prop_assert_eq!(n.points[0].x, 0.0);
            prop_assert_eq!(n.points.last().unwrap().x, 1.0);
            prop_assert_eq!(n.points.last().unwrap().y, 1.0);
            for w in n.points.windows(2) {
                prop_assert!(w[1].x > w[0].x);
                prop_assert!(w[1].y >= w[0].y);
            }
            let scaled = profile(&views.iter().map(|v| v * scale).collect::<Vec<_>>());
            prop_assert_eq!(normalize(&scaled).unwrap().points, n.points);
        }
    }
}
