//! Single-linkage clustering of feature vectors, PCA projection, and
//! per-cluster summaries (sign-pattern prototypes and average curves).

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_extraction::SegmentFeatures;
use crate::profile_ingest::Point;

/// One agglomeration step. Leaves are `0..n`; the cluster created by merge
/// `i` has id `n + i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub distance: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub n_leaves: usize,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn distances(&self) -> Vec<f64> {
        self.merges.iter().map(|m| m.distance).collect()
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_dims(points: &[Vec<f64>]) -> Result<usize> {
    let dim = points.first().map(Vec::len).ok_or(Error::EmptyInput)?;
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: p.len(),
        });
    }
    Ok(dim)
}

/// Single-linkage dendrogram under Euclidean distance.
///
/// Built from a minimum spanning tree (Prim, `O(n²)` time, `O(n)` memory):
/// the single-linkage merges are the tree edges taken in increasing order.
/// Ties go to the lower index.
pub fn single_linkage(points: &[Vec<f64>]) -> Result<Dendrogram> {
    check_dims(points)?;
    let n = points.len();
    if n < 2 {
        return Err(Error::InvalidK { k: 1, n });
    }

    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut parent = vec![0usize; n];
    let mut edges: Vec<(f64, usize, usize)> = Vec::with_capacity(n - 1);
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        let mut next = usize::MAX;
        let mut next_d = f64::INFINITY;
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let d = euclidean(&points[current], &points[j]);
            if d < best[j] {
                best[j] = d;
                parent[j] = current;
            }
            if best[j] < next_d || next == usize::MAX {
                next_d = best[j];
                next = j;
            }
        }
        in_tree[next] = true;
        edges.push((next_d, parent[next].min(next), parent[next].max(next)));
        current = next;
    }
    edges.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

    let mut uf = UnionFind::new(n);
    let mut cluster_id: Vec<usize> = (0..n).collect();
    let merges = edges
        .into_iter()
        .enumerate()
        .map(|(step, (distance, u, v))| {
            let (ru, rv) = (uf.find(u), uf.find(v));
            let (a, b) = (cluster_id[ru], cluster_id[rv]);
            let root = uf.union(ru, rv);
            cluster_id[root] = n + step;
            Merge {
                a: a.min(b),
                b: a.max(b),
                distance,
                size: uf.size[root],
            }
        })
        .collect();
    Ok(Dendrogram { n_leaves: n, merges })
}

struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> usize {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return a;
        }
        if self.size[a] < self.size[b] || (self.size[a] == self.size[b] && b < a) {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
        a
    }
}

/// Cluster labels per leaf; `None` marks points in components below the
/// minimum size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: usize,
    pub labels: Vec<Option<usize>>,
}

impl ClusterAssignment {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for l in self.labels.iter().flatten() {
            sizes[*l] += 1;
        }
        sizes
    }

    pub fn n_assigned(&self) -> usize {
        self.labels.iter().flatten().count()
    }
}

/// Default minimum cluster size: 1% of the group, at least one point.
pub fn default_min_size(n: usize) -> usize {
    n.div_ceil(100).max(1)
}

/// Cut the tree into `k` components by undoing the `k - 1` largest merges.
///
/// Components are labelled `0..` by decreasing size (ties by smallest member
/// index); components smaller than `min_size` are left unassigned.
pub fn cut(dendrogram: &Dendrogram, k: usize, min_size: usize) -> Result<ClusterAssignment> {
    let n = dendrogram.n_leaves;
    if k == 0 || k > n {
        return Err(Error::InvalidK { k, n });
    }
    // Any leaf of a node stands in for the node.
    let mut leaf_of: Vec<usize> = (0..n).collect();
    let mut uf = UnionFind::new(n);
    for m in dendrogram.merges.iter().take(n - k) {
        let (a, b) = (leaf_of[m.a], leaf_of[m.b]);
        uf.union(a, b);
        leaf_of.push(a);
    }

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for leaf in 0..n {
        groups.entry(uf.find(leaf)).or_default().push(leaf);
    }
    let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
    groups.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));

    let mut labels = vec![None; n];
    for (label, g) in groups.iter().filter(|g| g.len() >= min_size).enumerate() {
        for &leaf in g {
            labels[leaf] = Some(label);
        }
    }
    Ok(ClusterAssignment { k, labels })
}

/// Principal components of a point set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection {
    pub mean: Vec<f64>,
    /// Unit-norm component vectors, strongest first.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    pub scores: Vec<Vec<f64>>,
}

impl PcaProjection {
    /// Project new points with the fitted mean and basis.
    pub fn transform(&self, points: &[Vec<f64>]) -> Vec<Vec<f64>> {
        points
            .iter()
            .map(|p| {
                self.components
                    .iter()
                    .map(|c| c.iter().zip(p).zip(&self.mean).map(|((c, x), m)| c * (x - m)).sum())
                    .collect()
            })
            .collect()
    }
}

/// PCA by eigendecomposition of the sample covariance. Each component is
/// signed so that its largest-magnitude entry is positive.
pub fn pca(points: &[Vec<f64>], n_components: usize) -> Result<PcaProjection> {
    let dim = check_dims(points)?;
    let n = points.len();
    if n < 2 {
        return Err(Error::EmptyInput);
    }
    if n_components == 0 || n_components > dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: n_components,
        });
    }
    let mean: Vec<f64> = (0..dim)
        .map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n as f64)
        .collect();
    let centered = DMatrix::from_fn(n, dim, |i, j| points[i][j] - mean[j]);
    let cov = (centered.transpose() * &centered) / (n - 1) as f64;
    let total: f64 = cov.trace();
    let scale = points.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    if !(total > (f64::EPSILON * scale).powi(2)) {
        return Err(Error::DegenerateCovariance);
    }

    let eigen = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[b].total_cmp(&eigen.eigenvalues[a]).then(a.cmp(&b)));
    let mut components = Vec::with_capacity(n_components);
    let mut explained_variance = Vec::with_capacity(n_components);
    for &j in order.iter().take(n_components) {
        let mut v: Vec<f64> = eigen.eigenvectors.column(j).iter().copied().collect();
        let lead = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        explained_variance.push(eigen.eigenvalues[j].max(0.0));
    }
    let explained_variance_ratio = explained_variance.iter().map(|v| v / total).collect();
    let mut projection = PcaProjection {
        mean,
        components,
        explained_variance,
        explained_variance_ratio,
        scores: Vec::new(),
    };
    projection.scores = projection.transform(points);
    Ok(projection)
}

/// Relative frequency of each sign pattern within one cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeTable {
    pub cluster: usize,
    pub size: usize,
    pub frequencies: BTreeMap<String, f64>,
    /// Most frequent pattern; ties go to the lexicographically first.
    pub modal: Option<String>,
}

pub fn prototype_frequencies(assignment: &ClusterAssignment, patterns: &[String]) -> Result<Vec<PrototypeTable>> {
    if assignment.labels.len() != patterns.len() {
        return Err(Error::Misalignment {
            labels: assignment.labels.len(),
            patterns: patterns.len(),
        });
    }
    let mut counts: Vec<BTreeMap<&str, usize>> = vec![BTreeMap::new(); assignment.k];
    for (label, pattern) in assignment.labels.iter().zip(patterns) {
        if let Some(l) = label {
            *counts[*l].entry(pattern.as_str()).or_default() += 1;
        }
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(cluster, c)| {
            let size: usize = c.values().sum();
            let modal = c
                .iter()
                .fold(None::<(&str, usize)>, |best, (&p, &n)| match best {
                    Some((_, m)) if m >= n => best,
                    _ => Some((p, n)),
                })
                .map(|(p, _)| p.to_string());
            PrototypeTable {
                cluster,
                size,
                frequencies: c
                    .into_iter()
                    .map(|(p, n)| (p.to_string(), n as f64 / size as f64))
                    .collect(),
                modal,
            }
        })
        .collect())
}

/// Polyline through the component-wise mean angles and lengths.
///
/// Mean lengths are rescaled to sum to 1 and the curve is rescaled so that
/// it ends at `y = 1` (left unscaled if it ends at 0).
pub fn average_curve(features: &[SegmentFeatures]) -> Result<Vec<Point>> {
    let first = features.first().ok_or(Error::EmptyGroup)?;
    let n = first.n_segments();
    if let Some(bad) = features.iter().find(|f| f.n_segments() != n) {
        return Err(Error::MixedSegmentCounts {
            expected: n,
            found: bad.n_segments(),
        });
    }
    let count = features.len() as f64;
    let angles: Vec<f64> = (0..n)
        .map(|i| features.iter().map(|f| f.angles[i]).sum::<f64>() / count)
        .collect();
    let lengths: Vec<f64> = (0..n)
        .map(|i| features.iter().map(|f| f.lengths[i]).sum::<f64>() / count)
        .collect();
    let total: f64 = lengths.iter().sum();

    let mut points = Vec::with_capacity(n + 1);
    let (mut x, mut y) = (0.0, 0.0);
    points.push(Point { x, y });
    for (a, l) in angles.iter().zip(&lengths) {
        let l = l / total;
        x += l;
        y += a.to_radians().tan() * l;
        points.push(Point { x, y });
    }
    if y != 0.0 {
        points.iter_mut().for_each(|p| p.y /= y);
    }
    Ok(points)
}
