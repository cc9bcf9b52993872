//! Euler–Maruyama paths of scalar Itô SDEs with known coefficients, plus a
//! one-factor market generator that turns a correlation path into prices.
//!
//! Randomness comes from `ChaCha20Rng::seed_from_u64` and `rand_distr`'s
//! ziggurat `StandardNormal`, so paths are bit-reproducible across platforms.

use std::fmt;
use std::sync::Arc;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corrwin::MeanCorrelationSeries;
use crate::error::{Error, Result};
use crate::ingest::PricePanel;

type Coefficient = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// `dx = f(x) dt + g(x) dW` on an optional closed interval.
#[derive(Clone)]
pub struct SdeModel {
    name: String,
    drift: Coefficient,
    diffusion: Coefficient,
    bounds: Option<(f64, f64)>,
}

impl fmt::Debug for SdeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeModel")
            .field("name", &self.name)
            .field("bounds", &self.bounds)
            .finish()
    }
}

impl SdeModel {
    /// A model from arbitrary coefficient functions. `g` must be
    /// nonnegative on the domain.
    pub fn new(
        name: impl Into<String>,
        drift: impl Fn(f64) -> f64 + Send + Sync + 'static,
        diffusion: impl Fn(f64) -> f64 + Send + Sync + 'static,
        bounds: Option<(f64, f64)>,
    ) -> Result<Self> {
        if let Some((lo, hi)) = bounds {
            if !(lo < hi) {
                return Err(Error::validation("model bounds must satisfy lo < hi"));
            }
        }
        Ok(Self {
            name: name.into(),
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            bounds,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn drift(&self, x: f64) -> f64 {
        (self.drift)(x)
    }

    pub fn diffusion(&self, x: f64) -> f64 {
        (self.diffusion)(x)
    }

    pub fn bounds(&self) -> Option<(f64, f64)> {
        self.bounds
    }

    pub fn contains(&self, x: f64) -> bool {
        x.is_finite() && self.bounds.is_none_or(|(lo, hi)| lo <= x && x <= hi)
    }
}

/// Ornstein–Uhlenbeck: `f = -theta (x - mu)`, `g = sigma`.
pub fn ou(theta: f64, mu: f64, sigma: f64) -> Result<SdeModel> {
    if !(theta > 0.0 && sigma > 0.0 && mu.is_finite()) {
        return Err(Error::validation("ou needs theta > 0, sigma > 0"));
    }
    SdeModel::new(
        format!("ou(theta={theta}, mu={mu}, sigma={sigma})"),
        move |x| -theta * (x - mu),
        move |_| sigma,
        None,
    )
}

/// Bounded correlation model: `g = lambda sqrt((x - c_min)(c_max - x))` with
/// linear reversion `f = theta (mean - x)`. `theta = 0` gives a driftless
/// process.
pub fn bounded_corr(lambda: f64, c_min: f64, c_max: f64, theta: f64, mean: f64) -> Result<SdeModel> {
    if !(lambda > 0.0 && c_min < c_max && theta >= 0.0 && c_min <= mean && mean <= c_max) {
        return Err(Error::validation(
            "bounded_corr needs lambda > 0, c_min < c_max, theta >= 0, mean in [c_min, c_max]",
        ));
    }
    SdeModel::new(
        format!("bounded_corr(lambda={lambda}, c_min={c_min}, c_max={c_max}, theta={theta}, mean={mean})"),
        move |x| theta * (mean - x),
        move |x| lambda * ((x - c_min) * (c_max - x)).max(0.0).sqrt(),
        Some((c_min, c_max)),
    )
}

/// Double well `V = a x^4 - b x^2`, so `f = -4 a x^3 + 2 b x`, minima at
/// `+-sqrt(b / 2a)`; constant noise `sigma`.
pub fn double_well(a: f64, b: f64, sigma: f64) -> Result<SdeModel> {
    if !(a > 0.0 && b > 0.0 && sigma > 0.0) {
        return Err(Error::validation("double_well needs a, b, sigma > 0"));
    }
    SdeModel::new(
        format!("double_well(a={a}, b={b}, sigma={sigma})"),
        move |x| -4.0 * a * x * x * x + 2.0 * b * x,
        move |_| sigma,
        None,
    )
}

/// Named presets with positional parameters:
/// `ou theta mu sigma`, `bounded_corr lambda c_min c_max [theta mean]`,
/// `double_well a b sigma`.
pub fn preset_model(name: &str, params: &[f64]) -> Result<SdeModel> {
    let arity = |n: &[usize]| -> Result<()> {
        if n.contains(&params.len()) {
            Ok(())
        } else {
            Err(Error::validation(format!(
                "preset `{name}` takes {n:?} parameters, got {}",
                params.len()
            )))
        }
    };
    match name {
        "ou" => {
            arity(&[3])?;
            ou(params[0], params[1], params[2])
        }
        "bounded_corr" => {
            arity(&[3, 5])?;
            let (theta, mean) = if params.len() == 5 {
                (params[3], params[4])
            } else {
                (0.0, 0.5 * (params[1] + params[2]))
            };
            bounded_corr(params[0], params[1], params[2], theta, mean)
        }
        "double_well" => {
            arity(&[3])?;
            double_well(params[0], params[1], params[2])
        }
        other => Err(Error::validation(format!("unknown preset `{other}`"))),
    }
}

/// A simulated path sampled every `dt` time units.
#[derive(Debug, Clone, PartialEq)]
pub struct SimPath {
    /// `values[0] = x0`, then one value per step.
    pub values: Vec<f64>,
    pub dt: f64,
    pub substeps: usize,
    pub seed: u64,
    pub model: String,
}

impl SimPath {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The path as a scalar series labelled by step index.
    pub fn to_series(&self) -> MeanCorrelationSeries {
        MeanCorrelationSeries::from_values(self.values.clone())
    }
}

/// `x_{k+1} = x_k + f(x_k) dt + g(x_k) sqrt(dt) z_k`, returning `n_steps + 1`
/// values.
pub fn euler_maruyama(model: &SdeModel, x0: f64, dt: f64, n_steps: usize, seed: u64) -> Result<SimPath> {
    simulate(model, x0, dt, n_steps, 1, seed)
}

/// Like [`euler_maruyama`] but integrates with `dt / substeps` and keeps every
/// `substeps`-th point. Overshoots past a bound are reflected back into the
/// interval; anything still outside after one reflection is clamped.
pub fn simulate(model: &SdeModel, x0: f64, dt: f64, n_steps: usize, substeps: usize, seed: u64) -> Result<SimPath> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::validation("dt must be positive"));
    }
    if substeps == 0 {
        return Err(Error::validation("substeps must be at least 1"));
    }
    if !model.contains(x0) {
        return Err(Error::validation(format!("x0 = {x0} outside the model domain")));
    }
    let h = dt / substeps as f64;
    let sqrt_h = h.sqrt();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n_steps + 1);
    values.push(x0);
    let mut x = x0;
    for step in 0..n_steps {
        for _ in 0..substeps {
            let z: f64 = StandardNormal.sample(&mut rng);
            x += model.drift(x) * h + model.diffusion(x) * sqrt_h * z;
            if let Some((lo, hi)) = model.bounds {
                if x > hi {
                    x = 2.0 * hi - x;
                } else if x < lo {
                    x = 2.0 * lo - x;
                }
                x = x.clamp(lo, hi);
            }
            if !x.is_finite() || x.abs() > 1e150 {
                return Err(Error::Diverged { step: step + 1 });
            }
        }
        values.push(x);
    }
    Ok(SimPath {
        values,
        dt,
        substeps,
        seed,
        model: model.name.clone(),
    })
}

/// `n` consecutive weekdays starting at 2000-01-03 in ISO format.
pub fn business_dates(n: usize) -> Vec<String> {
    let mut d = NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date");
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d.format("%Y-%m-%d").to_string());
        }
        d += Duration::days(1);
    }
    out
}

/// Prices of `k` instruments driven by one common factor. On day `t` every
/// pair of returns has correlation `rho[t]`:
/// `r_i = vol (sqrt(rho) F + sqrt(1 - rho) e_i)`. Prices start at 100 and
/// the panel has `rho.len() + 1` dates.
pub fn one_factor_market(k: usize, rho: &[f64], vol: f64, seed: u64) -> Result<PricePanel> {
    if k < 2 {
        return Err(Error::validation("need at least two instruments"));
    }
    if !(vol > 0.0 && vol < 0.2) {
        return Err(Error::validation("vol must lie in (0, 0.2)"));
    }
    if let Some(r) = rho.iter().find(|r| !(0.0..1.0).contains(*r)) {
        return Err(Error::validation(format!("factor correlation {r} outside [0, 1)")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut prices = vec![Vec::with_capacity(rho.len() + 1); k];
    for row in prices.iter_mut() {
        row.push(100.0);
    }
    let mut eps = vec![0.0; k];
    for &r in rho {
        let f: f64 = StandardNormal.sample(&mut rng);
        for e in eps.iter_mut() {
            *e = StandardNormal.sample(&mut rng);
        }
        let (a, b) = (r.sqrt(), (1.0 - r).sqrt());
        for (row, e) in prices.iter_mut().zip(&eps) {
            let ret = (vol * (a * f + b * e)).max(-0.99);
            let last = *row.last().expect("row starts nonempty");
            row.push(last * (1.0 + ret));
        }
    }
    let tickers = (0..k).map(|i| format!("S{i:03}")).collect();
    PricePanel::new(business_dates(rho.len() + 1), tickers, prices)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn const_model(v: f64, sigma: f64) -> SdeModel {
        SdeModel::new("const", move |_| v, move |_| sigma, None).unwrap()
    }

    #[test]
    fn deterministic_line() {
        let p = euler_maruyama(&const_model(0.25, 0.0), 1.0, 0.5, 100, 7).unwrap();
        for (k, x) in p.values.iter().enumerate() {
            assert!((x - (1.0 + 0.25 * 0.5 * k as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn brownian_increment_variance() {
        let (sigma, dt, n) = (0.3, 0.5, 1_000_000);
        let p = euler_maruyama(&const_model(0.0, sigma), 0.0, dt, n, 11).unwrap();
        let inc: Vec<f64> = p.values.windows(2).map(|w| w[1] - w[0]).collect();
        let m = inc.iter().sum::<f64>() / n as f64;
        let var = inc.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        let expected = sigma * sigma * dt;
        // Standard error of a Gaussian sample variance.
        let se = expected * (2.0 / (n - 1) as f64).sqrt();
        assert!((var - expected).abs() < 3.0 * se, "{var} vs {expected}");
    }

    #[test]
    fn ou_stationary_variance() {
        let (theta, mu, sigma) = (0.05, 0.3, 0.02);
        let model = ou(theta, mu, sigma).unwrap();
        // Exact EM stationary variance for dt = 1 differs from sigma^2/(2 theta)
        // by a factor 1/(1 - theta/2), about 2.6%.
        let target = sigma * sigma / (2.0 * theta);
        for seed in 0..10 {
            let p = euler_maruyama(&model, mu, 1.0, 1_000_000, seed).unwrap();
            let m = p.values.iter().sum::<f64>() / p.len() as f64;
            let var = p.values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / p.len() as f64;
            assert!((var / target - 1.0).abs() < 0.05, "seed {seed}: {var} vs {target}");
        }
    }

    #[test]
    fn halving_dt_changes_ou_variance_little() {
        let model = ou(0.05, 0.3, 0.02).unwrap();
        let var = |p: &SimPath| {
            let m = p.values.iter().sum::<f64>() / p.len() as f64;
            p.values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / p.len() as f64
        };
        let (mut coarse, mut fine) = (0.0, 0.0);
        for seed in 0..10 {
            coarse += var(&simulate(&model, 0.3, 1.0, 1_000_000, 1, seed).unwrap());
            fine += var(&simulate(&model, 0.3, 1.0, 1_000_000, 2, seed + 100).unwrap());
        }
        assert!((coarse / fine - 1.0).abs() < 0.02, "{coarse} vs {fine}");
    }

    #[test]
    fn reproducible_bit_exact() {
        let model = double_well(1.0, 1.0, 0.5).unwrap();
        let a = simulate(&model, 0.7, 0.05, 10_000, 5, 42).unwrap();
        let b = simulate(&model, 0.7, 0.05, 10_000, 5, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate(&model, 0.7, 0.05, 10_000, 5, 43).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn bounded_paths_stay_inside() {
        let model = bounded_corr(0.0245, 0.042, 0.918, 0.0, 0.48).unwrap();
        let p = euler_maruyama(&model, 0.48, 1.0, 200_000, 5).unwrap();
        assert!(p.values.iter().all(|x| (0.042..=0.918).contains(x)));
        // Large noise forces reflections.
        let wild = bounded_corr(2.0, 0.0, 1.0, 0.0, 0.5).unwrap();
        let p = euler_maruyama(&wild, 0.5, 1.0, 50_000, 5).unwrap();
        assert!(p.values.iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn preset_values() {
        let b = preset_model("bounded_corr", &[0.0245, 0.042, 0.918]).unwrap();
        let g = b.diffusion(0.48);
        assert!((g - 0.0245 * ((0.48 - 0.042) * (0.918 - 0.48f64)).sqrt()).abs() < 1e-15);
        assert!((g - 0.01073).abs() < 5e-6);
        assert_eq!(preset_model("ou", &[1.0, 0.0, 1.0]).unwrap().drift(2.0), -2.0);
        let dw = preset_model("double_well", &[1.0, 1.0, 0.5]).unwrap();
        assert_eq!(dw.drift(0.0), 0.0);
        let r = 1.0 / 2f64.sqrt();
        assert!(dw.drift(r).abs() < 1e-15 && dw.drift(-r).abs() < 1e-15);
    }

    #[test]
    fn invalid_presets() {
        assert!(ou(0.0, 0.0, 1.0).is_err());
        assert!(ou(1.0, 0.0, -1.0).is_err());
        assert!(bounded_corr(0.1, 0.9, 0.1, 0.0, 0.5).is_err());
        assert!(double_well(-1.0, 1.0, 1.0).is_err());
        assert!(preset_model("ou", &[1.0]).is_err());
        assert!(preset_model("cir", &[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn bad_inputs() {
        let b = bounded_corr(0.1, 0.0, 1.0, 0.0, 0.5).unwrap();
        assert!(euler_maruyama(&b, 1.5, 1.0, 10, 0).is_err());
        assert!(euler_maruyama(&const_model(0.0, 1.0), 0.0, 0.0, 10, 0).is_err());
    }

    #[test]
    fn divergence_reported_with_step() {
        let blowup = SdeModel::new("cubic", |x| x * x * x, |_| 0.0, None).unwrap();
        match euler_maruyama(&blowup, 2.0, 1.0, 100, 0) {
            Err(Error::Diverged { step }) => assert!(step > 0 && step < 100),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn business_dates_skip_weekends() {
        let d = business_dates(6);
        assert_eq!(d[0], "2000-01-03");
        assert_eq!(d[4], "2000-01-07");
        assert_eq!(d[5], "2000-01-10");
    }

    #[test]
    fn one_factor_panel_shape() {
        let panel = one_factor_market(5, &vec![0.25; 99], 0.01, 1).unwrap();
        assert_eq!(panel.dates().len(), 100);
        assert_eq!(panel.n_instruments(), 5);
        assert!(one_factor_market(5, &[1.0], 0.01, 1).is_err());
    }
}
