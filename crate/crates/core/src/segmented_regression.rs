//! Continuous piecewise-linear regression with unknown breakpoints.
//!
//! The model is
//!
//! ```text
//! y = c + a·x + Σ_k b_k·(x - ψ_k)_+
//! ```
//!
//! Breakpoints are estimated by iterative linearization: around the current
//! estimate `ψ^s` the hinge `(x - ψ)_+` is expanded as
//! `(x - ψ^s)_+ - (ψ - ψ^s)·I(x > ψ^s)`, which turns the problem into an
//! ordinary regression on `[1, x, U_k, V_k]` with `U_k = (x - ψ_k^s)_+` and
//! `V_k = -I(x > ψ_k^s)`. The coefficient `g_k` of `V_k` estimates
//! `b_k·(ψ_k - ψ_k^s)`, so the update is `ψ_k^{s+1} = ψ_k^s + g_k / b_k`.
//!
//! Each update is accepted only if it does not increase the residual sum of
//! squares of the exact (fixed-breakpoint) fit; otherwise the step is halved.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstsq;
use crate::profile_ingest::Point;

/// Floor on the per-point residual variance used by the information
/// criterion. Noiseless data otherwise compares rounding noise.
const BIC_VARIANCE_FLOOR: f64 = 1e-16;
const MAX_STEP_HALVINGS: usize = 12;
const POLISH_PASSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    /// Equally spaced empirical quantiles of x.
    Quantile,
    /// Equally spaced over `[x_min, x_max]`.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Upper bound on the number of breakpoints (segments = breakpoints + 1).
    pub max_breakpoints: usize,
    /// Convergence threshold on `max |ψ^{s+1} - ψ^s|`.
    pub convergence_tol: f64,
    pub max_iterations: usize,
    /// Breakpoints whose slope change falls below this are dropped by [`fit_auto`].
    pub beta_zero_tol: f64,
    /// Minimum breakpoint separation; `None` means two sample spacings.
    pub min_gap: Option<f64>,
    pub initial_placement: Placement,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_breakpoints: 4,
            convergence_tol: 1e-6,
            max_iterations: 50,
            beta_zero_tol: 1e-3,
            min_gap: None,
            initial_placement: Placement::Quantile,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_breakpoints == 0 {
            return Err(Error::InvalidConfig("max_breakpoints must be at least 1".into()));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::InvalidConfig("convergence_tol must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be positive".into()));
        }
        if !(self.beta_zero_tol > 0.0) {
            return Err(Error::InvalidConfig("beta_zero_tol must be positive".into()));
        }
        if let Some(gap) = self.min_gap {
            if !(gap > 0.0) {
                return Err(Error::InvalidConfig("min_gap must be positive".into()));
            }
        }
        Ok(())
    }

    fn gap_for(&self, n_points: usize) -> f64 {
        self.min_gap
            .unwrap_or_else(|| 2.0 / (n_points.saturating_sub(1).max(1)) as f64)
    }
}

/// A fitted continuous piecewise-linear model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentedFit {
    pub breakpoints: Vec<f64>,
    /// Slope of the first segment.
    pub base_slope: f64,
    /// Change in slope across each breakpoint.
    pub slope_diffs: Vec<f64>,
    pub intercept: f64,
    pub rmse: f64,
    pub ssr: f64,
    pub n_points: usize,
    pub iterations: usize,
    pub converged: bool,
}

impl SegmentedFit {
    pub fn n_segments(&self) -> usize {
        self.breakpoints.len() + 1
    }

    /// Slope of every segment, left to right.
    pub fn segment_slopes(&self) -> Vec<f64> {
        let mut slopes = Vec::with_capacity(self.n_segments());
        let mut slope = self.base_slope;
        slopes.push(slope);
        for d in &self.slope_diffs {
            slope += d;
            slopes.push(slope);
        }
        slopes
    }

    pub fn predict(&self, x: f64) -> f64 {
        predict(self, x)
    }

    /// Bayesian information criterion with `2 + 2N` free parameters.
    pub fn bic(&self) -> f64 {
        let n = self.n_points as f64;
        let variance = (self.ssr / n).max(BIC_VARIANCE_FLOOR);
        let params = 2.0 + 2.0 * self.breakpoints.len() as f64;
        n * variance.ln() + params * n.ln()
    }
}

/// Evaluate `c + a·x + Σ b_k (x - ψ_k)_+`.
pub fn predict(fit: &SegmentedFit, x: f64) -> f64 {
    fit.intercept
        + fit.base_slope * x
        + fit
            .breakpoints
            .iter()
            .zip(&fit.slope_diffs)
            .map(|(psi, beta)| beta * (x - psi).max(0.0))
            .sum::<f64>()
}

/// Root-mean-square residual of `fit` over `points`.
pub fn compute_rmse(fit: &SegmentedFit, points: &[Point]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let ssr: f64 = points.iter().map(|p| (p.y - predict(fit, p.x)).powi(2)).sum();
    (ssr / points.len() as f64).sqrt()
}

/// JSON interchange record for a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub id: String,
    pub breakpoints: Vec<f64>,
    pub slopes: Vec<f64>,
    pub intercept: f64,
    pub rmse: f64,
    pub converged: bool,
    pub n_segments: usize,
}

impl FitRecord {
    pub fn new(id: impl Into<String>, fit: &SegmentedFit) -> Self {
        Self {
            id: id.into(),
            breakpoints: fit.breakpoints.clone(),
            slopes: fit.segment_slopes(),
            intercept: fit.intercept,
            rmse: fit.rmse,
            converged: fit.converged,
            n_segments: fit.n_segments(),
        }
    }

    /// Rebuild the fit. Point counts and iteration counts are not recorded.
    pub fn to_fit(&self) -> SegmentedFit {
        let base_slope = self.slopes.first().copied().unwrap_or(0.0);
        SegmentedFit {
            breakpoints: self.breakpoints.clone(),
            base_slope,
            slope_diffs: self.slopes.windows(2).map(|w| w[1] - w[0]).collect(),
            intercept: self.intercept,
            rmse: self.rmse,
            ssr: f64::NAN,
            n_points: 0,
            iterations: 0,
            converged: self.converged,
        }
    }
}

/// Initial breakpoint positions for `count` breakpoints.
pub fn initial_breakpoints(points: &[Point], count: usize, placement: Placement) -> Vec<f64> {
    if points.is_empty() || count == 0 {
        return Vec::new();
    }
    let mut xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    xs.sort_by(f64::total_cmp);
    let (lo, hi) = (xs[0], xs[xs.len() - 1]);
    (1..=count)
        .map(|k| {
            let q = k as f64 / (count + 1) as f64;
            match placement {
                Placement::Uniform => lo + q * (hi - lo),
                Placement::Quantile => {
                    let pos = q * (xs.len() - 1) as f64;
                    let i = pos.floor() as usize;
                    let frac = pos - i as f64;
                    if i + 1 < xs.len() {
                        xs[i] + frac * (xs[i + 1] - xs[i])
                    } else {
                        xs[i]
                    }
                }
            }
        })
        .collect()
}

/// Fit with a fixed number of breakpoints starting from `initial_psi`.
///
/// Breakpoints are never added or removed; a breakpoint that leaves the data
/// range is clamped to the nearest interior sample. Errors with
/// [`Error::DegenerateBreakpoints`] if two breakpoints end closer than the
/// minimum gap.
pub fn fit_fixed(points: &[Point], initial_psi: &[f64], config: &FitConfig) -> Result<SegmentedFit> {
    config.validate()?;
    let problem = Problem::new(points)?;
    if points.len() < 2 + 2 * initial_psi.len() {
        return Err(Error::SingularDesign);
    }
    for w in initial_psi.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::InvalidConfig(
                "initial breakpoints must be strictly increasing".into(),
            ));
        }
    }
    if initial_psi.iter().any(|&p| !(p > problem.x_min && p < problem.x_max)) {
        return Err(Error::InvalidConfig(
            "initial breakpoints must lie inside the data range".into(),
        ));
    }
    let run = problem.iterate(initial_psi.to_vec(), config, None)?;
    let run = problem.polish(run, config);
    let gap = config.gap_for(points.len());
    for w in run.psi.windows(2) {
        if w[1] - w[0] < gap {
            return Err(Error::DegenerateBreakpoints(w[0], w[1]));
        }
    }
    problem.finish(&run)
}

/// Fit with automatic selection of the number of breakpoints.
///
/// Starts from `max_breakpoints` candidates, drops breakpoints whose slope
/// change vanishes, merges breakpoints closer than the minimum gap, and then
/// removes breakpoints one at a time (the cheapest in residual terms first),
/// refitting after each removal. A forward pass that adds one breakpoint at a
/// time at the sample giving the largest residual reduction supplies a second
/// set of candidates. Among the lowest-residual fit found for each breakpoint
/// count, the one with the smallest information criterion is returned.
pub fn fit_auto(points: &[Point], config: &FitConfig) -> Result<SegmentedFit> {
    config.validate()?;
    let problem = Problem::new(points)?;
    let capacity = (points.len().saturating_sub(2) / 2).min(config.max_breakpoints);
    let rules = Pruning {
        beta_zero_tol: config.beta_zero_tol,
        min_gap: config.gap_for(points.len()),
    };
    let mut by_count: Vec<Option<(SegmentedFit, Vec<f64>)>> = vec![None; capacity + 1];
    let mut record = |fit: SegmentedFit| {
        let slot = &mut by_count[fit.breakpoints.len()];
        if slot.as_ref().is_none_or(|(best, _)| fit.ssr < best.ssr) {
            let psi = fit.breakpoints.clone();
            *slot = Some((fit, psi));
        }
    };

    // Backward path from the full candidate set.
    let start = initial_breakpoints(points, capacity, config.initial_placement);
    let mut current = problem.finish(&problem.iterate(start, config, Some(rules))?)?;
    record(current.clone());
    while !current.breakpoints.is_empty() {
        let mut cheapest: Option<SegmentedFit> = None;
        for drop in 0..current.breakpoints.len() {
            let mut psi = current.breakpoints.clone();
            psi.remove(drop);
            let fit = problem.finish(&problem.iterate(psi, config, Some(rules))?)?;
            if cheapest.as_ref().is_none_or(|c| fit.ssr < c.ssr) {
                cheapest = Some(fit);
            }
        }
        let Some(next) = cheapest else { break };
        record(next.clone());
        current = next;
    }

    // Forward path.
    let mut psi: Vec<f64> = Vec::new();
    record(problem.finish(&Run::settled(Vec::new()))?);
    for _ in 0..capacity {
        let Some(add) = problem.best_addition(&psi, rules.min_gap) else {
            break;
        };
        let before = psi.len();
        psi.push(add);
        psi.sort_by(f64::total_cmp);
        let Ok(run) = problem.iterate(psi.clone(), config, Some(rules)) else {
            break;
        };
        let fit = problem.finish(&run)?;
        psi = fit.breakpoints.clone();
        record(fit);
        if psi.len() <= before {
            break;
        }
    }

    let (_, chosen) = by_count
        .into_iter()
        .flatten()
        .min_by(|(a, _), (b, _)| a.bic().total_cmp(&b.bic()))
        .ok_or(Error::SingularDesign)?;
    let run = problem.iterate(chosen, config, Some(rules))?;
    let run = problem.polish(run, config);
    problem.finish(&run)
}

#[derive(Debug, Clone, Copy)]
struct Pruning {
    beta_zero_tol: f64,
    min_gap: f64,
}

struct Run {
    psi: Vec<f64>,
    iterations: usize,
    converged: bool,
}

impl Run {
    fn settled(psi: Vec<f64>) -> Self {
        Self {
            psi,
            iterations: 0,
            converged: true,
        }
    }
}

struct Problem {
    x: Vec<f64>,
    y: Vec<f64>,
    x_min: f64,
    x_max: f64,
    /// Breakpoints are kept within `[lo, hi]` so that each side holds two samples.
    lo: f64,
    hi: f64,
}

impl Problem {
    fn new(points: &[Point]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::EmptyInput);
        }
        if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::InvalidConfig("points must be finite".into()));
        }
        let mut sorted: Vec<Point> = points.to_vec();
        sorted.sort_by(|a, b| a.x.total_cmp(&b.x));
        let x: Vec<f64> = sorted.iter().map(|p| p.x).collect();
        let y: Vec<f64> = sorted.iter().map(|p| p.y).collect();
        let n = x.len();
        let (lo, hi) = if n >= 4 { (x[1], x[n - 2]) } else { (x[0], x[n - 1]) };
        Ok(Self {
            x_min: x[0],
            x_max: x[n - 1],
            lo,
            hi,
            x,
            y,
        })
    }

    /// Exact least squares for fixed breakpoints on `[1, x, (x - ψ_k)_+]`.
    fn hinge(&self, psi: &[f64]) -> Result<lstsq::LeastSquares> {
        let cols = 2 + psi.len();
        let design = DMatrix::from_fn(self.x.len(), cols, |i, j| match j {
            0 => 1.0,
            1 => self.x[i],
            _ => (self.x[i] - psi[j - 2]).max(0.0),
        });
        lstsq::solve(design, &self.y)
    }

    /// Linearized regression on `[1, x, U_k, V_k]`; returns `(b_k, g_k)`.
    fn linearized(&self, psi: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let k = psi.len();
        let design = DMatrix::from_fn(self.x.len(), 2 + 2 * k, |i, j| {
            let x = self.x[i];
            match j {
                0 => 1.0,
                1 => x,
                j if j < 2 + k => (x - psi[j - 2]).max(0.0),
                j => {
                    if x > psi[j - 2 - k] {
                        -1.0
                    } else {
                        0.0
                    }
                }
            }
        });
        let fit = lstsq::solve(design, &self.y)?;
        Ok((fit.coef[2..2 + k].to_vec(), fit.coef[2 + k..].to_vec()))
    }

    fn hinge_ssr(&self, psi: &[f64]) -> Option<f64> {
        self.hinge(psi).ok().map(|f| f.ssr)
    }

    fn clamp(&self, psi: f64) -> (f64, bool) {
        if psi < self.lo {
            (self.lo, true)
        } else if psi > self.hi {
            (self.hi, true)
        } else {
            (psi, false)
        }
    }

    fn iterate(&self, mut psi: Vec<f64>, config: &FitConfig, pruning: Option<Pruning>) -> Result<Run> {
        psi.sort_by(f64::total_cmp);
        let mut clamp_streak = vec![0usize; psi.len()];
        let mut iterations = 0;
        let mut converged = psi.is_empty();

        while !converged && iterations < config.max_iterations {
            iterations += 1;
            if let Some(rules) = pruning {
                merge_close(&mut psi, &mut clamp_streak, rules.min_gap);
                if psi.is_empty() {
                    converged = true;
                    break;
                }
            }

            let (beta, gamma) = match self.linearized(&psi) {
                Ok(v) => v,
                Err(Error::SingularDesign) if pruning.is_some() && !psi.is_empty() => {
                    drop_closest(&mut psi, &mut clamp_streak);
                    continue;
                }
                Err(e) => return Err(e),
            };

            let current_ssr = match self.hinge_ssr(&psi) {
                Some(s) => s,
                None if pruning.is_some() => {
                    drop_closest(&mut psi, &mut clamp_streak);
                    continue;
                }
                None => return Err(Error::SingularDesign),
            };

            // Full Gauss-Newton proposal, clamped into the interior.
            let mut proposal = Vec::with_capacity(psi.len());
            for k in 0..psi.len() {
                let step = if beta[k] != 0.0 { gamma[k] / beta[k] } else { 0.0 };
                let raw = psi[k] + if step.is_finite() { step } else { 0.0 };
                let (clamped, hit) = self.clamp(raw);
                clamp_streak[k] = if hit { clamp_streak[k] + 1 } else { 0 };
                proposal.push(clamped);
            }

            if pruning.is_some() {
                let before = psi.len();
                let streak = clamp_streak.clone();
                let mut k = 0;
                proposal.retain(|_| {
                    k += 1;
                    streak[k - 1] < 2
                });
                retain_indexed(&mut psi, &mut clamp_streak, |k| streak[k] < 2);
                if psi.len() != before {
                    converged = psi.is_empty();
                    continue;
                }
            }

            let mut accepted = None;
            let mut scale = 1.0;
            for _ in 0..=MAX_STEP_HALVINGS {
                let mut candidate: Vec<f64> = psi.iter().zip(&proposal).map(|(p, q)| p + scale * (q - p)).collect();
                candidate.sort_by(f64::total_cmp);
                if let Some(ssr) = self.hinge_ssr(&candidate) {
                    if ssr <= current_ssr * (1.0 + 1e-12) + f64::MIN_POSITIVE {
                        accepted = Some(candidate);
                        break;
                    }
                }
                scale *= 0.5;
            }

            let next = accepted.unwrap_or_else(|| psi.clone());
            let shift = next.iter().zip(&psi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            psi = next;
            if shift < config.convergence_tol {
                converged = true;
            }
        }

        if let Some(rules) = pruning {
            merge_close(&mut psi, &mut clamp_streak, rules.min_gap);
            while !psi.is_empty() && self.hinge(&psi).is_err() {
                drop_closest(&mut psi, &mut clamp_streak);
            }
            if let Ok(fit) = self.hinge(&psi) {
                let before = psi.len();
                let coef = fit.coef;
                retain_indexed(&mut psi, &mut clamp_streak, |k| {
                    coef[2 + k].abs() >= rules.beta_zero_tol
                });
                if psi.len() != before {
                    // Refit after dropping flat breakpoints.
                    return self.iterate(psi, config, pruning).map(|mut r| {
                        r.iterations += iterations;
                        r
                    });
                }
            }
        }

        Ok(Run {
            psi,
            iterations,
            converged,
        })
    }

    /// Index `j` of the gap `[x_j, x_{j+1})` containing `psi`.
    fn gap_index(&self, psi: f64) -> usize {
        self.x
            .partition_point(|&x| x <= psi)
            .saturating_sub(1)
            .min(self.x.len() - 2)
    }

    /// Restart the iteration with one breakpoint moved to each of the
    /// neighbouring sample gaps, keeping any restart that lowers the residual.
    /// The linearized update can stall on the kink of the objective at a
    /// sample point; this walks across it.
    fn polish(&self, mut best: Run, config: &FitConfig) -> Run {
        let Some(mut best_ssr) = self.hinge_ssr(&best.psi) else {
            return best;
        };
        for _ in 0..POLISH_PASSES {
            let mut improved = false;
            for k in 0..best.psi.len() {
                let gap = self.gap_index(best.psi[k]) as isize;
                for offset in [-2isize, -1, 1, 2] {
                    let j = gap + offset;
                    if j < 0 || j as usize + 1 >= self.x.len() {
                        continue;
                    }
                    let j = j as usize;
                    let target = (0.5 * (self.x[j] + self.x[j + 1])).clamp(self.lo, self.hi);
                    let mut start = best.psi.clone();
                    start[k] = target;
                    start.sort_by(f64::total_cmp);
                    if start.windows(2).any(|w| !(w[1] > w[0])) {
                        continue;
                    }
                    let Ok(run) = self.iterate(start, config, None) else {
                        continue;
                    };
                    if let Some(ssr) = self.hinge_ssr(&run.psi) {
                        if ssr < best_ssr * (1.0 - 1e-10) {
                            best_ssr = ssr;
                            best = Run {
                                iterations: best.iterations + run.iterations,
                                ..run
                            };
                            improved = true;
                        }
                    }
                }
            }
            if !improved {
                break;
            }
        }
        best
    }

    /// Interior sample at which adding a breakpoint to `psi` reduces the
    /// residual the most, via a rank-one update of the current fit.
    fn best_addition(&self, psi: &[f64], min_gap: f64) -> Option<f64> {
        let n = self.x.len();
        let cols = 2 + psi.len();
        if n < cols + 3 {
            return None;
        }
        let design = DMatrix::from_fn(n, cols, |i, j| match j {
            0 => 1.0,
            1 => self.x[i],
            _ => (self.x[i] - psi[j - 2]).max(0.0),
        });
        let q = design.qr().q();
        let y = nalgebra::DVector::from_column_slice(&self.y);
        let residual = &y - &q * (q.transpose() * &y);
        let mut best: Option<(f64, f64)> = None;
        for j in 1..n - 1 {
            let c = self.x[j];
            if c < self.lo || c > self.hi || psi.iter().any(|p| (p - c).abs() < min_gap) {
                continue;
            }
            let column = nalgebra::DVector::from_fn(n, |i, _| (self.x[i] - c).max(0.0));
            let orth = &column - &q * (q.transpose() * &column);
            let norm = orth.norm_squared();
            if norm <= 1e-12 * column.norm_squared() {
                continue;
            }
            let gain = residual.dot(&orth).powi(2) / norm;
            if best.is_none_or(|(g, _)| gain > g) {
                best = Some((gain, c));
            }
        }
        best.map(|(_, c)| c)
    }

    fn finish(&self, run: &Run) -> Result<SegmentedFit> {
        let fit = self.hinge(&run.psi)?;
        let n = self.x.len();
        Ok(SegmentedFit {
            breakpoints: run.psi.clone(),
            intercept: fit.coef[0],
            base_slope: fit.coef[1],
            slope_diffs: fit.coef[2..].to_vec(),
            rmse: (fit.ssr / n as f64).sqrt(),
            ssr: fit.ssr,
            n_points: n,
            iterations: run.iterations,
            converged: run.converged,
        })
    }
}

fn retain_indexed(psi: &mut Vec<f64>, streak: &mut Vec<usize>, keep: impl Fn(usize) -> bool) {
    let mut k = 0;
    let mask: Vec<bool> = (0..psi.len()).map(&keep).collect();
    psi.retain(|_| {
        k += 1;
        mask[k - 1]
    });
    let mut k = 0;
    streak.retain(|_| {
        k += 1;
        mask[k - 1]
    });
}

/// Replace any pair of breakpoints closer than `gap` by their midpoint.
fn merge_close(psi: &mut Vec<f64>, streak: &mut Vec<usize>, gap: f64) {
    psi.sort_by(f64::total_cmp);
    let mut k = 1;
    while k < psi.len() {
        if psi[k] - psi[k - 1] < gap {
            psi[k - 1] = 0.5 * (psi[k - 1] + psi[k]);
            psi.remove(k);
            streak.remove(k);
            streak[k - 1] = 0;
        } else {
            k += 1;
        }
    }
}

/// Merge the two closest breakpoints (or drop the only one).
fn drop_closest(psi: &mut Vec<f64>, streak: &mut Vec<usize>) {
    if psi.len() < 2 {
        psi.clear();
        streak.clear();
        return;
    }
    let k = (1..psi.len())
        .min_by(|&a, &b| (psi[a] - psi[a - 1]).total_cmp(&(psi[b] - psi[b - 1])))
        .unwrap_or(1);
    psi[k - 1] = 0.5 * (psi[k - 1] + psi[k]);
    psi.remove(k);
    streak.remove(k);
}
