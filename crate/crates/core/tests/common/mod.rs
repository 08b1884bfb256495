//! Test-only oracles and data generators. Nothing here calls into the
//! library's fitting code.
#![allow(dead_code)]

use polyview_core::profile_ingest::{Point, ViewProfile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn even_grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// Sample a continuous polyline with breakpoints `psi` and segment `slopes`.
pub fn polyline(xs: &[f64], psi: &[f64], slopes: &[f64], intercept: f64) -> Vec<Point> {
    xs.iter()
        .map(|&x| {
            let mut y = intercept + slopes[0] * x;
            for (k, p) in psi.iter().enumerate() {
                y += (slopes[k + 1] - slopes[k]) * (x - p).max(0.0);
            }
            Point { x, y }
        })
        .collect()
}

/// Gaussian elimination with partial pivoting on a small dense system.
#[allow(clippy::needless_range_loop)]
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut out = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * out[k]).sum();
        out[row] = (b[row] - s) / a[row][row];
    }
    Some(out)
}

/// SSR of the exact least-squares fit of `[1, x, (x - psi_k)_+]` via normal equations.
pub fn hinge_ssr_multi(xs: &[f64], ys: &[f64], psi: &[f64]) -> Option<f64> {
    let p = 2 + psi.len();
    let rows: Vec<Vec<f64>> = xs
        .iter()
        .map(|&x| {
            let mut r = vec![1.0, x];
            r.extend(psi.iter().map(|&c| (x - c).max(0.0)));
            r
        })
        .collect();
    let mut ata = vec![vec![0.0; p]; p];
    let mut aty = vec![0.0; p];
    for (r, &y) in rows.iter().zip(ys) {
        for i in 0..p {
            aty[i] += r[i] * y;
            for j in 0..p {
                ata[i][j] += r[i] * r[j];
            }
        }
    }
    let c = solve_dense(ata, aty)?;
    Some(
        rows.iter()
            .zip(ys)
            .map(|(r, y)| (y - r.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>()).powi(2))
            .sum(),
    )
}

pub fn hinge_ssr(xs: &[f64], ys: &[f64], psi: f64) -> Option<f64> {
    hinge_ssr_multi(xs, ys, &[psi])
}

/// Ordinary least-squares line; returns (intercept, slope, ssr).
fn line_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64, f64)> {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let ssr = xs.iter().zip(ys).map(|(x, y)| (y - a - b * x).powi(2)).sum();
    Some((a, b, ssr))
}

/// Exhaustive single-breakpoint search.
///
/// Every interior sample `x_2..x_{n-1}` is tried as a breakpoint with an exact
/// fit. Because the optimum usually falls between samples, each gap is also
/// checked in closed form: with the split fixed, the best continuous fit is
/// the pair of separate line fits whenever their intersection lies inside
/// the gap. Returns `(psi, ssr)` of the best candidate.
pub fn grid_search_single(points: &[Point]) -> (f64, f64) {
    let xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    let n = xs.len();
    let mut best = (f64::NAN, f64::INFINITY);
    for j in 1..n - 1 {
        if let Some(ssr) = hinge_ssr(&xs, &ys, xs[j]) {
            if ssr < best.1 {
                best = (xs[j], ssr);
            }
        }
    }
    for j in 1..n - 2 {
        let (left_x, right_x) = xs.split_at(j + 1);
        let (left_y, right_y) = ys.split_at(j + 1);
        let (Some((a1, b1, s1)), Some((a2, b2, s2))) = (line_fit(left_x, left_y), line_fit(right_x, right_y)) else {
            continue;
        };
        if b1 == b2 {
            continue;
        }
        let psi = (a2 - a1) / (b1 - b2);
        if psi > xs[j] && psi < xs[j + 1] && s1 + s2 < best.1 {
            best = (psi, s1 + s2);
        }
    }
    best
}

/// A random noisy single-breakpoint instance on `n` evenly spaced points.
pub fn noisy_single_breakpoint(seed: u64, n: usize, noise: f64) -> Vec<Point> {
    let mut r = rng(seed);
    let psi = r.random_range(0.25..0.75);
    let s1: f64 = r.random_range(0.2..2.5);
    let mut s2 = r.random_range(0.2..2.5);
    while (s2 - s1).abs() < 0.5 {
        s2 = r.random_range(0.2..2.5);
    }
    let normal = rand_distr::Normal::new(0.0, noise).unwrap();
    polyline(&even_grid(n), &[psi], &[s1, s2], 0.0)
        .into_iter()
        .map(|p| Point {
            x: p.x,
            y: p.y + r.sample(normal),
        })
        .collect()
}

/// Random polyline with `segments` pieces: slope changes of at least
/// `min_change`, segment lengths of at least `min_len`.
pub fn random_polyline_params(
    r: &mut ChaCha8Rng,
    segments: usize,
    min_len: f64,
    min_change: f64,
) -> (Vec<f64>, Vec<f64>) {
    // lengths: rejection sample a partition of [0,1]
    let psi = loop {
        let mut cuts: Vec<f64> = (0..segments - 1).map(|_| r.random_range(0.0..1.0)).collect();
        cuts.sort_by(f64::total_cmp);
        let mut bounds = vec![0.0];
        bounds.extend(&cuts);
        bounds.push(1.0);
        if bounds.windows(2).all(|w| w[1] - w[0] >= min_len) {
            break cuts;
        }
    };
    let mut slopes: Vec<f64> = vec![r.random_range(0.1..2.5)];
    while slopes.len() < segments {
        let prev = *slopes.last().unwrap();
        let next: f64 = r.random_range(0.1..2.5);
        if (next - prev).abs() >= min_change {
            slopes.push(next);
        }
    }
    (psi, slopes)
}

/// Pearson correlation, computed directly.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// KS critical value at significance 0.01.
pub fn ks_critical_01(n: usize, m: usize) -> f64 {
    1.628 * ((n + m) as f64 / (n * m) as f64).sqrt()
}

/// Monthly views whose normalized cumulative curve is the polyline through
/// `(0, 0)` with breakpoints `psi` and positive `slopes`. Month 0 is a
/// placeholder that ingestion drops.
pub fn polyline_profile(id: &str, psi: &[f64], slopes: &[f64], months: usize, scale: f64) -> ViewProfile {
    let xs = even_grid(months - 1);
    let ys: Vec<f64> = polyline(&xs, psi, slopes, 0.0).iter().map(|p| p.y).collect();
    let mut cumulative = 0u64;
    let mut monthly_views = vec![7, 0];
    for y in &ys[1..] {
        let target = (y * scale).round() as u64;
        monthly_views.push(target - cumulative);
        cumulative = target;
    }
    ViewProfile {
        id: id.to_string(),
        monthly_views,
    }
}
