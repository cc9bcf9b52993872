//! Nonparametric drift and diffusion estimation for a scalar Itô process
//! `dx = f(x) dt + g(x) dW` from a single sampled path.
//!
//! For every bin `I` of equally populated values the conditional moments
//!
//! ```text
//! M1_I(tau) = < x(t+tau) - x(t)     | x(t) in I > / tau
//! M2_I(tau) = < (x(t+tau) - x(t))^2 | x(t) in I > / tau
//! ```
//!
//! are measured at integer lags, a quadratic in `tau` is fitted per bin and
//! its constant coefficient is taken as the `tau -> 0` limit, giving `f` and
//! `g^2` at the bin mean. The second moment is the raw squared displacement;
//! the drift-squared term it carries is of order `tau` and is removed by the
//! extrapolation. The potential is the negative trapezoidal primitive of the
//! drift over the bin centers.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::corrwin::MeanCorrelationSeries;
use crate::error::{Error, Result};
use crate::states::PairMask;

/// Lags used when none are configured.
pub const DEFAULT_TAUS: [usize; 5] = [1, 2, 3, 4, 5];
/// Bin count for full-series runs.
pub const FULL_SERIES_BINS: usize = 50;
/// Lower bound of the automatic bin count.
pub const MIN_AUTO_BINS: usize = 10;
/// Minimum number of points per bin required before estimating.
pub const DEFAULT_MIN_OCCUPANCY: usize = 10;

/// Automatic bin count: `floor(sqrt(pairs) / 5)` clamped to `[10, 50]`.
pub fn auto_bin_count(pairs: usize) -> usize {
    (((pairs as f64).sqrt() / 5.0).floor() as usize).clamp(MIN_AUTO_BINS, FULL_SERIES_BINS)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinCount {
    Fixed(usize),
    /// See [`auto_bin_count`].
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmConfig {
    pub bins: BinCount,
    /// Ascending integer lags in samples.
    pub taus: Vec<usize>,
    /// Sampling interval of the series in time units.
    pub dt: f64,
    pub min_occupancy: usize,
}

impl Default for KmConfig {
    fn default() -> Self {
        Self {
            bins: BinCount::Auto,
            taus: DEFAULT_TAUS.to_vec(),
            dt: 1.0,
            min_occupancy: DEFAULT_MIN_OCCUPANCY,
        }
    }
}

impl KmConfig {
    pub fn with_bins(mut self, bins: usize) -> Self {
        self.bins = BinCount::Fixed(bins);
        self
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.taus.is_empty() || self.taus[0] == 0 || self.taus.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::validation("taus must be nonempty, ascending and >= 1"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::validation("dt must be positive"));
        }
        if let BinCount::Fixed(0) = self.bins {
            return Err(Error::validation("bin count must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentOrder {
    First,
    Second,
}

/// A bin removed from an estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DroppedBin {
    pub center: f64,
    pub reason: String,
}

/// Per-bin conditional moments at each lag.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMoments {
    pub taus: Vec<usize>,
    /// Mean of the binned values per bin.
    pub centers: Vec<f64>,
    /// Points assigned to each bin (admitted pairs at lag 1).
    pub counts: Vec<usize>,
    /// `pairs[bin][k]` admitted pairs at `taus[k]`.
    pub pairs: Vec<Vec<usize>>,
    /// `values[bin][k]` = M(taus[k]) for the bin.
    pub values: Vec<Vec<f64>>,
    pub dropped: Vec<DroppedBin>,
}

struct Binned {
    centers: Vec<f64>,
    counts: Vec<usize>,
    pairs: Vec<Vec<usize>>,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    dropped: Vec<DroppedBin>,
}

/// Sorts the admissible starting points by value and cuts them into `bins`
/// groups whose sizes differ by at most one.
fn equal_count_bins(values: &[f64], starts: &[usize], bins: usize) -> Vec<Vec<usize>> {
    let mut order = starts.to_vec();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let base = order.len() / bins;
    let extra = order.len() % bins;
    let mut out = Vec::with_capacity(bins);
    let mut pos = 0;
    for b in 0..bins {
        let size = base + usize::from(b < extra);
        out.push(order[pos..pos + size].to_vec());
        pos += size;
    }
    out
}

fn accumulate(values: &[f64], cfg: &KmConfig, mask: Option<&PairMask>) -> Result<Binned> {
    cfg.validate()?;
    let n = values.len();
    if let Some(m) = mask {
        if m.len() != n {
            return Err(Error::Alignment(format!("mask covers {} days, series has {}", m.len(), n)));
        }
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("series contains non-finite values"));
    }
    let admits = |t: usize, tau: usize| match mask {
        Some(m) => m.admits(t, tau),
        None => t + tau < n,
    };
    let starts: Vec<usize> = (0..n).filter(|&t| admits(t, 1)).collect();
    let bins = match cfg.bins {
        BinCount::Fixed(b) => b,
        BinCount::Auto => auto_bin_count(starts.len()),
    };
    let needed = bins * cfg.min_occupancy.max(1);
    if starts.len() < needed {
        return Err(Error::InsufficientData {
            what: "conditional moments (admitted pairs)",
            needed,
            got: starts.len(),
        });
    }
    let groups = equal_count_bins(values, &starts, bins);
    let mut out = Binned {
        centers: Vec::with_capacity(bins),
        counts: Vec::with_capacity(bins),
        pairs: Vec::with_capacity(bins),
        first: Vec::with_capacity(bins),
        second: Vec::with_capacity(bins),
        dropped: Vec::new(),
    };
    for group in groups {
        let center = group.iter().map(|&t| values[t]).sum::<f64>() / group.len() as f64;
        let mut pairs = Vec::with_capacity(cfg.taus.len());
        let mut first = Vec::with_capacity(cfg.taus.len());
        let mut second = Vec::with_capacity(cfg.taus.len());
        for &tau in &cfg.taus {
            let (mut s1, mut s2, mut count) = (0.0, 0.0, 0usize);
            for &t in &group {
                if admits(t, tau) {
                    let d = values[t + tau] - values[t];
                    s1 += d;
                    s2 += d * d;
                    count += 1;
                }
            }
            let scale = count as f64 * tau as f64 * cfg.dt;
            pairs.push(count);
            first.push(s1 / scale);
            second.push(s2 / scale);
        }
        if let Some(k) = pairs.iter().position(|&c| c == 0) {
            let reason = format!("no admitted pairs at tau = {}", cfg.taus[k]);
            log::debug!("dropping bin at {center}: {reason}");
            out.dropped.push(DroppedBin { center, reason });
            continue;
        }
        out.centers.push(center);
        out.counts.push(group.len());
        out.pairs.push(pairs);
        out.first.push(first);
        out.second.push(second);
    }
    Ok(out)
}

/// Conditional moment `M_I(tau)` per equal-count bin and lag. Only pairs
/// admitted by `mask` contribute, and only admitted starting points are
/// binned.
pub fn conditional_moment(
    series: &[f64],
    order: MomentOrder,
    cfg: &KmConfig,
    mask: Option<&PairMask>,
) -> Result<ConditionalMoments> {
    let b = accumulate(series, cfg, mask)?;
    Ok(ConditionalMoments {
        taus: cfg.taus.clone(),
        centers: b.centers,
        counts: b.counts,
        pairs: b.pairs,
        values: match order {
            MomentOrder::First => b.first,
            MomentOrder::Second => b.second,
        },
        dropped: b.dropped,
    })
}

/// Least-squares quadratic `a + b tau + c tau^2` through `M(tau)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TauFit {
    /// `[a, b, c]`; `a` is the `tau -> 0` limit.
    pub coefficients: [f64; 3],
    /// Residual sum of squares.
    pub residual: f64,
}

impl TauFit {
    pub fn limit(&self) -> f64 {
        self.coefficients[0]
    }
}

pub fn extrapolate_tau0(taus: &[f64], values: &[f64]) -> Result<TauFit> {
    if taus.len() != values.len() {
        return Err(Error::Dimension {
            expected: taus.len(),
            got: values.len(),
        });
    }
    let mut distinct = taus.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::InsufficientData {
            what: "distinct tau values for the quadratic fit",
            needed: 3,
            got: distinct.len(),
        });
    }
    let a = DMatrix::from_fn(taus.len(), 3, |i, j| taus[i].powi(j as i32));
    let y = DVector::from_column_slice(values);
    let coef = a
        .clone()
        .svd(true, true)
        .solve(&y, 1e-14)
        .map_err(|e| Error::validation(format!("tau fit failed: {e}")))?;
    let residual = (&a * &coef - &y).norm_squared();
    Ok(TauFit {
        coefficients: [coef[0], coef[1], coef[2]],
        residual,
    })
}

/// Drift and squared diffusion per bin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KmEstimate {
    pub taus: Vec<usize>,
    pub dt: f64,
    pub centers: Vec<f64>,
    pub drift: Vec<f64>,
    /// `g^2`, clamped at 0 where the extrapolation went negative.
    pub diffusion_sq: Vec<f64>,
    /// Bins whose `g^2` was clamped.
    pub clamped: Vec<bool>,
    /// Admitted pairs at lag 1 per bin.
    pub counts: Vec<usize>,
    pub drift_fits: Vec<TauFit>,
    pub diffusion_fits: Vec<TauFit>,
    pub dropped: Vec<DroppedBin>,
}

impl KmEstimate {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn diffusion(&self) -> Vec<f64> {
        self.diffusion_sq.iter().map(|g2| g2.sqrt()).collect()
    }
}

/// Drift and diffusion of the series, optionally restricted by a pair mask.
///
/// For a sequence of independent draws every lag sees the same conditional
/// displacement `mu - c`, so `M1(tau) = (mu - c) / tau` and the extrapolated
/// drift has slope `-a0` in `c`, where `a0` is the constant coefficient of
/// the quadratic fitted to `1 / tau`. A slope of that size signals a series
/// without memory rather than genuine mean reversion.
pub fn estimate_drift_diffusion(series: &[f64], cfg: &KmConfig, mask: Option<&PairMask>) -> Result<KmEstimate> {
    let b = accumulate(series, cfg, mask)?;
    let taus: Vec<f64> = cfg.taus.iter().map(|&t| t as f64).collect();
    let mut est = KmEstimate {
        taus: cfg.taus.clone(),
        dt: cfg.dt,
        centers: b.centers,
        drift: Vec::new(),
        diffusion_sq: Vec::new(),
        clamped: Vec::new(),
        counts: b.counts,
        drift_fits: Vec::new(),
        diffusion_fits: Vec::new(),
        dropped: b.dropped,
    };
    for (m1, m2) in b.first.iter().zip(&b.second) {
        let f = extrapolate_tau0(&taus, m1)?;
        let g = extrapolate_tau0(&taus, m2)?;
        let clamped = g.limit() < 0.0;
        est.drift.push(f.limit());
        est.diffusion_sq.push(g.limit().max(0.0));
        est.clamped.push(clamped);
        est.drift_fits.push(f);
        est.diffusion_fits.push(g);
    }
    if est.clamped.iter().any(|&c| c) {
        log::warn!(
            "{} bin(s) had a negative g^2 limit and were clamped to 0",
            est.clamped.iter().filter(|&&c| c).count()
        );
    }
    Ok(est)
}

/// Potential `V(c) = -int f dc` on the bin centers, shifted so that its
/// minimum over the first half of the grid is zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PotentialCurve {
    pub c: Vec<f64>,
    pub v: Vec<f64>,
    pub anchor_index: usize,
    /// The grid value `c_0` where `V(c_0) = 0`.
    pub anchor: f64,
}

impl PotentialCurve {
    /// Grid index of the global minimum.
    pub fn argmin(&self) -> usize {
        (0..self.v.len()).min_by(|&a, &b| self.v[a].total_cmp(&self.v[b])).unwrap_or(0)
    }

    /// Interior grid points strictly below both neighbours.
    pub fn local_minima(&self) -> Vec<usize> {
        (1..self.v.len().saturating_sub(1))
            .filter(|&i| self.v[i] < self.v[i - 1] && self.v[i] < self.v[i + 1])
            .collect()
    }
}

pub fn integrate_potential(est: &KmEstimate) -> Result<PotentialCurve> {
    potential_from_drift(&est.centers, &est.drift)
}

pub fn potential_from_drift(c: &[f64], f: &[f64]) -> Result<PotentialCurve> {
    if c.len() != f.len() {
        return Err(Error::Dimension {
            expected: c.len(),
            got: f.len(),
        });
    }
    if c.len() < 2 {
        return Err(Error::InsufficientData {
            what: "potential integration bins",
            needed: 2,
            got: c.len(),
        });
    }
    let mut v = Vec::with_capacity(c.len());
    v.push(0.0);
    for i in 1..c.len() {
        let prev = v[i - 1];
        v.push(prev - 0.5 * (f[i] + f[i - 1]) * (c[i] - c[i - 1]));
    }
    let half = c.len().div_ceil(2);
    let anchor_index = (0..half).min_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap_or(0);
    let shift = v[anchor_index];
    v.iter_mut().for_each(|x| *x -= shift);
    Ok(PotentialCurve {
        c: c.to_vec(),
        v,
        anchor_index,
        anchor: c[anchor_index],
    })
}

/// One position of the sliding estimation window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowEstimate {
    /// First index of the window.
    pub start: usize,
    /// One past the last index.
    pub end: usize,
    /// Date at the middle of the window.
    pub mid_date: String,
    pub estimate: KmEstimate,
    pub potential: PotentialCurve,
}

/// Estimates drift, diffusion and potential on windows of `window` samples
/// advanced by `step`, giving `floor((N - window) / step) + 1` estimates.
pub fn sliding_window_potentials(
    series: &MeanCorrelationSeries,
    window: usize,
    step: usize,
    cfg: &KmConfig,
) -> Result<Vec<WindowEstimate>> {
    if window == 0 || step == 0 {
        return Err(Error::validation("window and step must be positive"));
    }
    let n = series.len();
    if n < window {
        return Err(Error::InsufficientData {
            what: "sliding window",
            needed: window,
            got: n,
        });
    }
    let count = (n - window) / step + 1;
    (0..count)
        .map(|w| {
            let start = w * step;
            let end = start + window;
            let estimate = estimate_drift_diffusion(&series.values[start..end], cfg, None)?;
            let potential = integrate_potential(&estimate)?;
            Ok(WindowEstimate {
                start,
                end,
                mid_date: series.dates[start + window / 2].clone(),
                estimate,
                potential,
            })
        })
        .collect()
}

/// `(c, g)` points from every window, skipping clamped bins.
pub fn pooled_diffusion_points(windows: &[WindowEstimate]) -> Vec<(f64, f64)> {
    windows
        .iter()
        .flat_map(|w| {
            let est = &w.estimate;
            est.centers
                .iter()
                .zip(&est.diffusion_sq)
                .zip(&est.clamped)
                .filter(|(_, &clamped)| !clamped)
                .map(|((&c, &g2), _)| (c, g2.sqrt()))
                .collect::<Vec<_>>()
        })
        .collect()
}

/// `g(c) = lambda * sqrt((c - c_min) (c_max - c))` fitted to diffusion points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundedDiffusionFit {
    pub lambda: f64,
    pub c_min: f64,
    pub c_max: f64,
    /// Characteristic time `1 / lambda^2`.
    pub t0: f64,
    /// Residual sum of squares in `g`.
    pub residual: f64,
    pub points: usize,
    pub iterations: usize,
}

impl BoundedDiffusionFit {
    pub fn eval(&self, c: f64) -> f64 {
        bounded_g(self.lambda, self.c_min, self.c_max, c)
    }
}

fn bounded_g(lambda: f64, lo: f64, hi: f64, c: f64) -> f64 {
    let q = (c - lo) * (hi - c);
    if q > 0.0 {
        lambda * q.sqrt()
    } else {
        0.0
    }
}

const FIT_MAX_ITER: usize = 500;

/// Levenberg–Marquardt fit of the bounded diffusion model. The start point
/// comes from the linear least-squares parabola through `g^2`.
pub fn fit_bounded_diffusion(points: &[(f64, f64)]) -> Result<BoundedDiffusionFit> {
    if points.len() < 4 {
        return Err(Error::InsufficientData {
            what: "bounded diffusion fit points",
            needed: 4,
            got: points.len(),
        });
    }
    if points.iter().any(|(c, g)| !c.is_finite() || !g.is_finite()) {
        return Err(Error::validation("non-finite diffusion point"));
    }
    let (lo, hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (c, _)| (a.min(*c), b.max(*c)));
    let span = hi - lo;
    if !(span > 1e-12 * (1.0 + lo.abs().max(hi.abs()))) {
        return Err(Error::validation("degenerate c range for the bounded diffusion fit"));
    }

    let mut p = initial_guess(points, lo, hi);
    let rss = |p: &Vector3<f64>| -> f64 {
        points
            .iter()
            .map(|&(c, g)| (bounded_g(p[0], p[1], p[2], c) - g).powi(2))
            .sum()
    };
    let mut cost = rss(&p);
    let mut mu = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..FIT_MAX_ITER {
        iterations = it + 1;
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for &(c, g) in points {
            let q = (c - p[1]) * (p[2] - c);
            if q <= 0.0 {
                // Outside the support the model is flat zero.
                continue;
            }
            let s = q.sqrt();
            let r = p[0] * s - g;
            let j = Vector3::new(s, -p[0] * (p[2] - c) / (2.0 * s), p[0] * (c - p[1]) / (2.0 * s));
            jtj += j * j.transpose();
            jtr += j * r;
        }
        if jtr.norm() <= 1e-300 {
            converged = true;
            break;
        }
        let mut improved = false;
        for _ in 0..60 {
            let mut damped = jtj;
            for k in 0..3 {
                damped[(k, k)] += mu * jtj[(k, k)].max(1e-300);
            }
            let Some(delta) = damped.lu().solve(&(-jtr)) else {
                mu *= 10.0;
                continue;
            };
            let trial = p + delta;
            if trial[0] > 0.0 && trial[1] < trial[2] && trial.iter().all(|x| x.is_finite()) {
                let trial_cost = rss(&trial);
                if trial_cost <= cost {
                    let small_step = delta.iter().zip(p.iter()).all(|(d, x)| d.abs() <= 1e-13 * (x.abs() + 1e-12));
                    let small_gain = cost - trial_cost <= 1e-15 * cost;
                    p = trial;
                    cost = trial_cost;
                    mu = (mu / 3.0).max(1e-15);
                    improved = true;
                    if small_step || small_gain {
                        converged = true;
                    }
                    break;
                }
            }
            mu *= 4.0;
        }
        if converged {
            break;
        }
        if !improved {
            // No descent direction left at any damping: a stationary point.
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::FitFailed {
            iterations,
            params: p.iter().copied().collect(),
            residual: cost,
        });
    }
    Ok(BoundedDiffusionFit {
        lambda: p[0],
        c_min: p[1],
        c_max: p[2],
        t0: 1.0 / (p[0] * p[0]),
        residual: cost,
        points: points.len(),
        iterations,
    })
}

/// `g^2 = -lambda^2 c^2 + lambda^2 (c_min + c_max) c - lambda^2 c_min c_max`
/// is linear in its three coefficients.
fn initial_guess(points: &[(f64, f64)], lo: f64, hi: f64) -> Vector3<f64> {
    let a = DMatrix::from_fn(points.len(), 3, |i, j| points[i].0.powi(j as i32));
    let y = DVector::from_iterator(points.len(), points.iter().map(|(_, g)| g * g));
    if let Ok(coef) = a.svd(true, true).solve(&y, 1e-14) {
        let (c0, c1, c2) = (coef[0], coef[1], coef[2]);
        let disc = c1 * c1 - 4.0 * c2 * c0;
        if c2 < 0.0 && disc > 0.0 {
            let lambda = (-c2).sqrt();
            let r1 = (-c1 + disc.sqrt()) / (2.0 * c2);
            let r2 = (-c1 - disc.sqrt()) / (2.0 * c2);
            let (rlo, rhi) = (r1.min(r2), r1.max(r2));
            if rlo < hi && rhi > lo {
                return Vector3::new(lambda, rlo.min(lo - 1e-3 * (hi - lo)), rhi.max(hi + 1e-3 * (hi - lo)));
            }
        }
    }
    let span = hi - lo;
    let (rlo, rhi) = (lo - 0.1 * span, hi + 0.1 * span);
    let mid = 0.5 * (rlo + rhi);
    let gmax = points.iter().fold(0.0_f64, |m, (_, g)| m.max(*g));
    let lambda = (gmax / ((mid - rlo) * (rhi - mid)).sqrt()).max(1e-12);
    Vector3::new(lambda, rlo, rhi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::states::PairMask;

    fn line(n: usize, c0: f64, v: f64) -> Vec<f64> {
        (0..n).map(|t| c0 + v * t as f64).collect()
    }

    #[test]
    fn auto_bins() {
        assert_eq!(auto_bin_count(1_000_000), 50);
        assert_eq!(auto_bin_count(100), 10);
        assert_eq!(auto_bin_count(10_000), 20);
    }

    #[test]
    fn deterministic_line_first_moment() {
        let xs = line(1000, 0.1, 0.001);
        let m = conditional_moment(&xs, MomentOrder::First, &KmConfig::default().with_bins(10), None).unwrap();
        for row in &m.values {
            for v in row {
                assert!((v - 0.001).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_series_second_moment_is_zero() {
        let xs = vec![0.3; 500];
        let m = conditional_moment(&xs, MomentOrder::Second, &KmConfig::default().with_bins(10), None).unwrap();
        assert!(m.values.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn equal_count_occupancy() {
        let xs: Vec<f64> = (0..1003).map(|t| ((t * 7919) % 1003) as f64).collect();
        let m = conditional_moment(&xs, MomentOrder::First, &KmConfig::default().with_bins(7), None).unwrap();
        let (lo, hi) = (m.counts.iter().min().unwrap(), m.counts.iter().max().unwrap());
        assert!(hi - lo <= 1);
        assert_eq!(m.counts.iter().sum::<usize>(), 1002);
        assert!(m.centers.windows(2).all(|w| w[0] < w[1]));
        for (c, p) in m.counts.iter().zip(&m.pairs) {
            assert_eq!(*c, p[0]);
        }
    }

    #[test]
    fn too_few_points() {
        let xs = line(50, 0.0, 1.0);
        let err = conditional_moment(&xs, MomentOrder::First, &KmConfig::default().with_bins(10), None).unwrap_err();
        assert!(matches!(err, Error::InsufficientData { .. }));
    }

    #[test]
    fn bad_taus_rejected() {
        let xs = line(500, 0.0, 1.0);
        let mut cfg = KmConfig::default().with_bins(5);
        cfg.taus = vec![2, 1];
        assert!(estimate_drift_diffusion(&xs, &cfg, None).is_err());
        cfg.taus = vec![0, 1, 2];
        assert!(estimate_drift_diffusion(&xs, &cfg, None).is_err());
    }

    #[test]
    fn bins_without_pairs_at_long_lags_are_dropped() {
        // Member runs of length 3: lag 1 and 2 pairs exist, lag 3 never.
        let n = 600;
        let member: Vec<bool> = (0..n).map(|t| t % 4 != 3).collect();
        let mask = PairMask::from_membership("runs", member);
        let xs: Vec<f64> = (0..n).map(|t| (t as f64 * 0.37).sin()).collect();
        let cfg = KmConfig {
            taus: vec![1, 2, 3],
            ..KmConfig::default().with_bins(10)
        };
        let m = conditional_moment(&xs, MomentOrder::First, &cfg, Some(&mask)).unwrap();
        assert!(m.centers.is_empty());
        assert_eq!(m.dropped.len(), 10);
    }

    #[test]
    fn masked_pairs_are_subsets() {
        let n = 3000;
        let xs: Vec<f64> = (0..n).map(|t| (t as f64 * 0.01).sin() + 0.1 * (t as f64 * 1.3).cos()).collect();
        let member: Vec<bool> = (0..n).map(|t| (t / 50) % 3 != 0).collect();
        let narrow: Vec<bool> = (0..n).map(|t| member[t] && (t / 10) % 2 == 0).collect();
        let wide = PairMask::from_membership("wide", member);
        let narrow = PairMask::from_membership("narrow", narrow);
        let cfg = KmConfig::default().with_bins(10);
        let total = |m: Option<&PairMask>, k: usize| -> usize {
            conditional_moment(&xs, MomentOrder::First, &cfg, m).unwrap().pairs.iter().map(|p| p[k]).sum()
        };
        for k in 0..cfg.taus.len() {
            assert!(total(Some(&narrow), k) <= total(Some(&wide), k));
            assert!(total(Some(&wide), k) <= total(None, k));
        }
    }

    #[test]
    fn extrapolation_examples() {
        let taus = [1.0, 2.0, 3.0, 4.0, 5.0];
        let fit = extrapolate_tau0(&taus, &[0.7; 5]).unwrap();
        assert!((fit.limit() - 0.7).abs() < 1e-14);
        assert!(fit.residual < 1e-28);
        let (a, b, c) = (0.013, -0.4, 0.02);
        let vals: Vec<f64> = taus.iter().map(|t| a + b * t + c * t * t).collect();
        let fit = extrapolate_tau0(&taus, &vals).unwrap();
        assert!((fit.limit() - a).abs() < 1e-13);
        assert!((fit.coefficients[1] - b).abs() < 1e-13);
        assert!(matches!(
            extrapolate_tau0(&[1.0, 2.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn iid_levels_show_memoryless_slope() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(1);
        let xs: Vec<f64> = (0..200_000).map(|_| 0.1 * Distribution::<f64>::sample(&StandardNormal, &mut rng) + 0.3).collect();
        let est = estimate_drift_diffusion(&xs, &KmConfig::default().with_bins(20), None).unwrap();
        // Closed form: M1(tau) = (mu - c) / tau, so the slope is minus the
        // quadratic-fit intercept of 1/tau, computed here via normal equations.
        let taus = [1.0f64, 2.0, 3.0, 4.0, 5.0];
        let mut ata = [[0.0; 3]; 3];
        let mut aty = [0.0; 3];
        for t in taus {
            let row = [1.0, t, t * t];
            for i in 0..3 {
                aty[i] += row[i] / t;
                for j in 0..3 {
                    ata[i][j] += row[i] * row[j];
                }
            }
        }
        let m = Matrix3::from_fn(|i, j| ata[i][j]);
        let a0 = m.lu().solve(&Vector3::from(aty)).unwrap()[0];
        let (_, slope) = crate::stats::linear_fit(&est.centers, &est.drift);
        assert!((slope + a0).abs() < 0.05 * a0, "slope {slope}, expected {}", -a0);
    }

    #[test]
    fn harmonic_potential() {
        let c: Vec<f64> = (0..50).map(|i| -1.0 + 2.0 * i as f64 / 49.0).collect();
        let (k, m) = (2.0, 0.3);
        let f: Vec<f64> = c.iter().map(|x| -k * (x - m)).collect();
        let pot = potential_from_drift(&c, &f).unwrap();
        // Quadratic through the curve: R^2 of V vs. k/2 (c - m)^2 + const.
        let model: Vec<f64> = c.iter().map(|x| 0.5 * k * (x - m).powi(2)).collect();
        let (a, b) = crate::stats::linear_fit(&model, &pot.v);
        let ss_res: f64 = model.iter().zip(&pot.v).map(|(x, y)| (y - a - b * x).powi(2)).sum();
        let mean = pot.v.iter().sum::<f64>() / 50.0;
        let ss_tot: f64 = pot.v.iter().map(|y| (y - mean).powi(2)).sum();
        assert!(1.0 - ss_res / ss_tot > 0.999);
        assert!((c[pot.argmin()] - m).abs() <= 2.0 / 49.0);
        assert_eq!(pot.v[pot.anchor_index], 0.0);
    }

    #[test]
    fn zero_drift_flat_potential() {
        let pot = potential_from_drift(&[0.0, 0.1, 0.2, 0.4], &[0.0; 4]).unwrap();
        assert!(pot.v.iter().all(|v| *v == 0.0));
        assert!(potential_from_drift(&[0.0], &[0.0]).is_err());
    }

    #[test]
    fn anchor_is_min_of_first_half() {
        // V decreasing over the whole grid: anchor sits at the end of the first half.
        let c: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let pot = potential_from_drift(&c, &[1.0; 10]).unwrap();
        assert_eq!(pot.anchor_index, 4);
        assert!(pot.v[9] < 0.0);
    }

    #[test]
    fn potential_differences_recover_drift() {
        let c: Vec<f64> = (0..40).map(|i| (i as f64 * 0.05).powf(1.3)).collect();
        let f: Vec<f64> = c.iter().map(|x| (3.0 * x).sin() - x * x).collect();
        let pot = potential_from_drift(&c, &f).unwrap();
        for i in 1..c.len() {
            let slope = (pot.v[i] - pot.v[i - 1]) / (c[i] - c[i - 1]);
            assert!((slope + 0.5 * (f[i] + f[i - 1])).abs() < 1e-8);
        }
        // Linear drift on a uniform grid: central differences give -f exactly.
        let c: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
        let f: Vec<f64> = c.iter().map(|x| 0.4 - 1.5 * x).collect();
        let pot = potential_from_drift(&c, &f).unwrap();
        for i in 1..c.len() - 1 {
            let d = (pot.v[i + 1] - pot.v[i - 1]) / (c[i + 1] - c[i - 1]);
            assert!((d + f[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn sliding_window_count_and_midpoints() {
        let xs: Vec<f64> = (0..5169).map(|t| (t as f64 * 0.013).sin() * 0.2 + 0.01 * (t as f64 * 2.1).cos()).collect();
        let series = MeanCorrelationSeries::from_values(xs);
        let ws = sliding_window_potentials(&series, 1008, 42, &KmConfig::default()).unwrap();
        assert_eq!(ws.len(), 100);
        assert_eq!(ws[0].mid_date, "504");
        assert_eq!(ws[1].start, 42);
        assert!(matches!(
            sliding_window_potentials(&series, 6000, 42, &KmConfig::default()),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn bounded_fit_exact_samples() {
        let (lambda, lo, hi) = (0.0245, 0.042, 0.918);
        let pts: Vec<(f64, f64)> = (0..40)
            .map(|i| {
                let c = 0.08 + 0.8 * i as f64 / 39.0;
                (c, bounded_g(lambda, lo, hi, c))
            })
            .collect();
        let fit = fit_bounded_diffusion(&pts).unwrap();
        assert!((fit.lambda - lambda).abs() < 1e-6);
        assert!((fit.c_min - lo).abs() < 1e-6);
        assert!((fit.c_max - hi).abs() < 1e-6);
        assert_eq!(fit.t0, 1.0 / (fit.lambda * fit.lambda));
        assert!((fit.t0 - 1666.0).abs() < 1.0);
    }

    #[test]
    fn bounded_fit_noisy_samples() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let (lambda, lo, hi) = (0.0245, 0.042, 0.918);
        for seed in 0..20 {
            let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
            let pts: Vec<(f64, f64)> = (0..50)
                .map(|i| {
                    let c = 0.06 + 0.84 * i as f64 / 49.0;
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (c, bounded_g(lambda, lo, hi, c) * (1.0 + 0.05 * z))
                })
                .collect();
            let fit = fit_bounded_diffusion(&pts).unwrap();
            assert!((fit.lambda / lambda - 1.0).abs() < 0.1, "seed {seed}: {fit:?}");
            assert!((fit.c_min / lo - 1.0).abs() < 0.1 || (fit.c_min - lo).abs() < 0.01, "seed {seed}: {fit:?}");
            assert!((fit.c_max / hi - 1.0).abs() < 0.1, "seed {seed}: {fit:?}");
        }
    }

    #[test]
    fn bounded_fit_degenerate_range() {
        let pts = vec![(0.3, 0.01); 6];
        assert!(matches!(fit_bounded_diffusion(&pts), Err(Error::Validation(_))));
        assert!(fit_bounded_diffusion(&pts[..3]).is_err());
    }
}
