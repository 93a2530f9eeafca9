//! Rate families `r(n)` and `r'(ε, n)`, and fits of measured decay curves.
//!
//! Polynomial: `r(n) = n^{-β}`, `r'(ε, n) = ε^{-p} n^{-β}` with
//! `p > max{2, 2β}`. Stretched exponential: `r(n) = exp(-τ n^ω)`,
//! `r'(ε, n) = exp(-τ' ε^ω n^{ω/2})`.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{weighted_line_fit, CompensatedSum};
use crate::rng::orbit_stream;
use crate::statistics::{DecayEstimate, DecayPoint};

/// Smallest `n` used by default when fitting.
pub const DEFAULT_FIT_N_MIN: u64 = 16;
/// Minimum number of usable points in a fit window.
pub const MIN_FIT_POINTS: usize = 4;
/// Points within this many standard errors of zero are left out of fits.
pub const ZERO_BAND_SIGMAS: f64 = 3.0;
pub const DEFAULT_BOOTSTRAP_REPS: usize = 400;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateFitError {
    #[error("parameter `{name}` = {value} is out of range")]
    ParameterOutOfRange { name: &'static str, value: f64 },
    #[error("p = {p} is not admissible: need p > max(2, 2β) = {bound}")]
    PNotAdmissible { p: f64, bound: f64 },
    #[error("stretched r' needs a fitted tau_prime")]
    MissingTauPrime,
    #[error("only {usable} usable points in the fit window (need {needed})")]
    InsufficientData { usable: usize, needed: usize },
    #[error("{zeros} of {total} points in the window are zero or indistinguishable from zero")]
    ZeroValues { zeros: usize, total: usize },
    #[error("value {value} at n = {n} is not below 1")]
    ValueNotBelowOne { n: u64, value: f64 },
    #[error("degenerate regression")]
    Degenerate,
}

/// Parameters of a rate family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum RateFamily {
    Polynomial {
        beta: f64,
        /// Moment exponent used by `r'`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        p: Option<f64>,
    },
    Stretched {
        tau: f64,
        omega: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tau_prime: Option<f64>,
    },
}

/// Percentile interval from a bootstrap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

/// A rate family, possibly fitted to data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateModel {
    #[serde(flatten)]
    pub family: RateFamily,
    pub fitted: bool,
    pub fit_window: Option<(u64, u64)>,
    /// Intercept of the regression line (prefactor on the log scale).
    pub intercept: Option<f64>,
    pub residual_norm: Option<f64>,
    pub points_used: usize,
    /// 95% bootstrap intervals: `beta` for polynomial fits, `omega` and `tau`
    /// for stretched fits.
    pub ci_beta: Option<Interval>,
    pub ci_omega: Option<Interval>,
    pub ci_tau: Option<Interval>,
}

impl RateModel {
    pub fn polynomial(beta: f64, p: Option<f64>) -> Self {
        Self::unfitted(RateFamily::Polynomial { beta, p })
    }

    pub fn stretched(tau: f64, omega: f64, tau_prime: Option<f64>) -> Self {
        Self::unfitted(RateFamily::Stretched { tau, omega, tau_prime })
    }

    fn unfitted(family: RateFamily) -> Self {
        Self {
            family,
            fitted: false,
            fit_window: None,
            intercept: None,
            residual_norm: None,
            points_used: 0,
            ci_beta: None,
            ci_omega: None,
            ci_tau: None,
        }
    }

    pub fn beta(&self) -> Option<f64> {
        match self.family {
            RateFamily::Polynomial { beta, .. } => Some(beta),
            _ => None,
        }
    }

    pub fn omega(&self) -> Option<f64> {
        match self.family {
            RateFamily::Stretched { omega, .. } => Some(omega),
            _ => None,
        }
    }

    pub fn tau(&self) -> Option<f64> {
        match self.family {
            RateFamily::Stretched { tau, .. } => Some(tau),
            _ => None,
        }
    }

    pub fn with_p(mut self, p: f64) -> Self {
        if let RateFamily::Polynomial { p: ref mut slot, .. } = self.family {
            *slot = Some(p);
        }
        self
    }

    pub fn with_tau_prime(mut self, tau_prime: f64) -> Self {
        if let RateFamily::Stretched { tau_prime: ref mut slot, .. } = self.family {
            *slot = Some(tau_prime);
        }
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }
}

fn check_family(family: &RateFamily) -> Result<(), RateFitError> {
    match *family {
        RateFamily::Polynomial { beta, .. } => {
            if !(beta > 0.0 && beta.is_finite()) {
                return Err(RateFitError::ParameterOutOfRange { name: "beta", value: beta });
            }
        }
        RateFamily::Stretched { tau, omega, .. } => {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(RateFitError::ParameterOutOfRange { name: "tau", value: tau });
            }
            if !(omega > 0.0 && omega <= 1.0) {
                return Err(RateFitError::ParameterOutOfRange { name: "omega", value: omega });
            }
        }
    }
    Ok(())
}

/// `r(n)`.
pub fn r_of_n(model: &RateModel, n: u64) -> Result<f64, RateFitError> {
    check_family(&model.family)?;
    if n < 1 {
        return Err(RateFitError::ParameterOutOfRange { name: "n", value: n as f64 });
    }
    let nf = n as f64;
    Ok(match model.family {
        RateFamily::Polynomial { beta, .. } => nf.powf(-beta),
        RateFamily::Stretched { tau, omega, .. } => (-tau * nf.powf(omega)).exp(),
    })
}

/// `r'(ε, n)`.
pub fn r_prime(model: &RateModel, epsilon: f64, n: u64) -> Result<f64, RateFitError> {
    check_family(&model.family)?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(RateFitError::ParameterOutOfRange { name: "epsilon", value: epsilon });
    }
    if n < 1 {
        return Err(RateFitError::ParameterOutOfRange { name: "n", value: n as f64 });
    }
    let nf = n as f64;
    match model.family {
        RateFamily::Polynomial { beta, p } => {
            let bound = 2.0f64.max(2.0 * beta);
            let p = p.ok_or(RateFitError::PNotAdmissible { p: f64::NAN, bound })?;
            if !(p > bound) {
                return Err(RateFitError::PNotAdmissible { p, bound });
            }
            Ok(epsilon.powf(-p) * nf.powf(-beta))
        }
        RateFamily::Stretched { omega, tau_prime, .. } => {
            let tp = tau_prime.ok_or(RateFitError::MissingTauPrime)?;
            if !(tp > 0.0 && tp.is_finite()) {
                return Err(RateFitError::ParameterOutOfRange { name: "tau_prime", value: tp });
            }
            Ok((-tp * epsilon.powf(omega) * nf.powf(omega / 2.0)).exp())
        }
    }
}

/// `ω' = ω / (1 + ω)`.
pub fn omega_prime(omega: f64) -> Result<f64, RateFitError> {
    if !(omega > 0.0 && omega <= 1.0) {
        return Err(RateFitError::ParameterOutOfRange { name: "omega", value: omega });
    }
    Ok(omega / (1.0 + omega))
}

/// Points of `estimate` with `n_min ≤ n ≤ n_max`, dropping values that are
/// not positive or lie within three standard errors of zero.
pub fn fit_window(estimate: &DecayEstimate, n_min: u64, n_max: u64) -> Result<Vec<DecayPoint>, RateFitError> {
    let in_window: Vec<DecayPoint> =
        estimate.points.iter().copied().filter(|p| p.n >= n_min && p.n <= n_max).collect();
    let usable: Vec<DecayPoint> = in_window
        .iter()
        .copied()
        .filter(|p| p.value > 0.0 && p.value > ZERO_BAND_SIGMAS * p.stderr)
        .collect();
    if usable.len() < MIN_FIT_POINTS {
        if in_window.len() >= MIN_FIT_POINTS {
            return Err(RateFitError::ZeroValues { zeros: in_window.len() - usable.len(), total: in_window.len() });
        }
        return Err(RateFitError::InsufficientData { usable: usable.len(), needed: MIN_FIT_POINTS });
    }
    Ok(usable)
}

#[derive(Clone, Copy)]
enum Transform {
    /// `log v`, standard error `σ / v`.
    Log,
    /// `log(-log v)`, standard error `σ / (v |log v|)`.
    LogLog,
}

impl Transform {
    fn y(self, v: f64) -> f64 {
        match self {
            Transform::Log => v.ln(),
            Transform::LogLog => (-v.ln()).ln(),
        }
    }

    fn sigma(self, v: f64, se: f64) -> f64 {
        match self {
            Transform::Log => se / v,
            Transform::LogLog => se / (v * v.ln().abs()),
        }
    }
}

/// Weighted regression of the transformed values on `log n`. Weights are the
/// inverse delta-method variances on the transformed scale; exact data (any
/// zero standard error) is fitted unweighted.
fn regress(points: &[DecayPoint], values: &[f64], tr: Transform) -> Option<crate::numerics::LinearFit> {
    let x: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
    let y: Vec<f64> = values.iter().map(|&v| tr.y(v)).collect();
    let exact = points.iter().any(|p| p.stderr <= 0.0);
    let w: Vec<f64> = points
        .iter()
        .zip(values)
        .map(|(p, &v)| if exact { 1.0 } else { tr.sigma(v, p.stderr).powi(-2) })
        .collect();
    if w.iter().any(|w| !w.is_finite()) || y.iter().any(|y| !y.is_finite()) {
        return None;
    }
    weighted_line_fit(&x, &y, &w)
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Bootstrap of the fit: each replicate redraws every point from
/// `Normal(value, stderr)` and refits. Returns percentile intervals for slope
/// and intercept.
fn bootstrap(points: &[DecayPoint], tr: Transform, reps: usize, seed: u64) -> Option<(Interval, Interval)> {
    if reps < 10 || points.iter().all(|p| p.stderr <= 0.0) {
        return None;
    }
    let mut slopes = Vec::with_capacity(reps);
    let mut intercepts = Vec::with_capacity(reps);
    let mut values = vec![0.0; points.len()];
    for r in 0..reps {
        let mut rng = orbit_stream(seed, r as u64);
        let mut ok = true;
        for (v, p) in values.iter_mut().zip(points) {
            *v = Normal::new(p.value, p.stderr).map(|d| d.sample(&mut rng)).unwrap_or(p.value);
            let valid = match tr {
                Transform::Log => *v > 0.0,
                Transform::LogLog => *v > 0.0 && *v < 1.0,
            };
            ok &= valid;
        }
        if !ok {
            continue;
        }
        if let Some(f) = regress(points, &values, tr) {
            slopes.push(f.slope);
            intercepts.push(f.intercept);
        }
    }
    if slopes.len() < reps / 2 {
        return None;
    }
    slopes.sort_by(f64::total_cmp);
    intercepts.sort_by(f64::total_cmp);
    let iv = |s: &[f64]| Interval { lo: percentile(s, 0.025), hi: percentile(s, 0.975) };
    Some((iv(&slopes), iv(&intercepts)))
}

/// Options shared by the fitters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub bootstrap_reps: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { bootstrap_reps: DEFAULT_BOOTSTRAP_REPS, seed: 0 }
    }
}

/// `β̂ = -slope` of `log value` against `log n` on the window.
pub fn fit_polynomial_rate(estimate: &DecayEstimate, n_min: u64, n_max: u64) -> Result<RateModel, RateFitError> {
    fit_polynomial_rate_with(estimate, n_min, n_max, FitOptions::default())
}

pub fn fit_polynomial_rate_with(
    estimate: &DecayEstimate,
    n_min: u64,
    n_max: u64,
    opts: FitOptions,
) -> Result<RateModel, RateFitError> {
    let pts = fit_window(estimate, n_min, n_max)?;
    let vals: Vec<f64> = pts.iter().map(|p| p.value).collect();
    let fit = regress(&pts, &vals, Transform::Log).ok_or(RateFitError::Degenerate)?;
    let ci = bootstrap(&pts, Transform::Log, opts.bootstrap_reps, opts.seed);
    let mut m = RateModel::polynomial(-fit.slope, None);
    m.fitted = true;
    m.fit_window = Some((pts[0].n, pts[pts.len() - 1].n));
    m.intercept = Some(fit.intercept);
    m.residual_norm = Some(fit.residual_norm);
    m.points_used = pts.len();
    m.ci_beta = ci.map(|(s, _)| Interval { lo: -s.hi, hi: -s.lo });
    Ok(m)
}

/// `ω̂` = slope and `log τ̂` = intercept of `log(-log value)` against `log n`.
pub fn fit_stretched_rate(estimate: &DecayEstimate, n_min: u64, n_max: u64) -> Result<RateModel, RateFitError> {
    fit_stretched_rate_with(estimate, n_min, n_max, FitOptions::default())
}

pub fn fit_stretched_rate_with(
    estimate: &DecayEstimate,
    n_min: u64,
    n_max: u64,
    opts: FitOptions,
) -> Result<RateModel, RateFitError> {
    let pts = fit_window(estimate, n_min, n_max)?;
    if let Some(p) = pts.iter().find(|p| p.value >= 1.0) {
        return Err(RateFitError::ValueNotBelowOne { n: p.n, value: p.value });
    }
    let vals: Vec<f64> = pts.iter().map(|p| p.value).collect();
    let fit = regress(&pts, &vals, Transform::LogLog).ok_or(RateFitError::Degenerate)?;
    let ci = bootstrap(&pts, Transform::LogLog, opts.bootstrap_reps, opts.seed);
    let mut m = RateModel::stretched(fit.intercept.exp(), fit.slope, None);
    m.fitted = true;
    m.fit_window = Some((pts[0].n, pts[pts.len() - 1].n));
    m.intercept = Some(fit.intercept);
    m.residual_norm = Some(fit.residual_norm);
    m.points_used = pts.len();
    if let Some((s, i)) = ci {
        m.ci_omega = Some(s);
        m.ci_tau = Some(Interval { lo: i.lo.exp(), hi: i.hi.exp() });
    }
    Ok(m)
}

/// Least-squares `τ'` for `value ≈ exp(-τ' ε^ω n^{ω/2})` on the window, a
/// line through the origin on the log scale.
pub fn fit_tau_prime(
    estimate: &DecayEstimate,
    omega: f64,
    epsilon: f64,
    n_min: u64,
    n_max: u64,
) -> Result<f64, RateFitError> {
    if !(omega > 0.0 && omega <= 1.0) {
        return Err(RateFitError::ParameterOutOfRange { name: "omega", value: omega });
    }
    let pts = fit_window(estimate, n_min, n_max)?;
    let exact = pts.iter().any(|p| p.stderr <= 0.0);
    let mut num = CompensatedSum::new();
    let mut den = CompensatedSum::new();
    for p in &pts {
        let x = epsilon.powf(omega) * (p.n as f64).powf(omega / 2.0);
        let w = if exact { 1.0 } else { (p.stderr / p.value).powi(-2) };
        num.add(-w * x * p.value.ln());
        den.add(w * x * x);
    }
    let tp = num.value() / den.value();
    if !(tp > 0.0 && tp.is_finite()) {
        return Err(RateFitError::ParameterOutOfRange { name: "tau_prime", value: tp });
    }
    Ok(tp)
}

/// `max_n value(n) / r'(ε, n)` over the points of `estimate`: the empirical
/// constant `C'` in `value ≤ C' r'`.
pub fn majorization_ratio(estimate: &DecayEstimate, model: &RateModel, epsilon: f64) -> Result<f64, RateFitError> {
    let mut worst: f64 = 0.0;
    for p in &estimate.points {
        worst = worst.max(p.value / r_prime(model, epsilon, p.n)?);
    }
    Ok(worst)
}

/// [`majorization_ratio`] restricted to `n_min ≤ n ≤ n_max`.
pub fn majorization_ratio_window(
    estimate: &DecayEstimate,
    model: &RateModel,
    epsilon: f64,
    n_min: u64,
    n_max: u64,
) -> Result<f64, RateFitError> {
    let sub = DecayEstimate {
        points: estimate.points.iter().copied().filter(|p| p.n >= n_min && p.n <= n_max).collect(),
        meta: estimate.meta.clone(),
    };
    majorization_ratio(&sub, model, epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn exact(f: impl Fn(f64) -> f64, ns: &[u64]) -> DecayEstimate {
        DecayEstimate::from_points(
            ns.iter().map(|&n| DecayPoint { n, value: f(n as f64), stderr: 0.0, samples: 1 }).collect(),
        )
    }

    const NS: [u64; 7] = [16, 32, 64, 128, 256, 512, 1024];

    #[test]
    fn rate_formulas() {
        let p = RateModel::polynomial(1.0, Some(3.0));
        assert!((r_of_n(&p, 100).unwrap() - 0.01).abs() < 1e-15);
        assert_eq!(r_of_n(&p, 1).unwrap(), 1.0);
        assert!((r_prime(&p, 0.5, 100).unwrap() - 0.08).abs() < 1e-15);
        let s = RateModel::stretched(1.0, 1.0, Some(1.0));
        assert!((r_of_n(&s, 3).unwrap() - (-3.0f64).exp()).abs() < 1e-15);
        assert!((r_of_n(&s, 1).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert!((r_prime(&s, 1.0, 4).unwrap() - (-2.0f64).exp()).abs() < 1e-15);
        assert!(r_of_n(&s, 0).is_err());
    }

    #[test]
    fn p_admissibility() {
        let m = RateModel::polynomial(1.0, Some(2.0));
        assert!(matches!(r_prime(&m, 0.5, 10), Err(RateFitError::PNotAdmissible { .. })));
        let m = RateModel::polynomial(1.5, Some(3.0));
        assert!(matches!(r_prime(&m, 0.5, 10), Err(RateFitError::PNotAdmissible { .. })));
        let m = RateModel::polynomial(0.5, Some(2.01));
        assert!(r_prime(&m, 0.5, 10).is_ok());
        assert!(matches!(
            r_prime(&RateModel::stretched(1.0, 1.0, None), 0.5, 10),
            Err(RateFitError::MissingTauPrime)
        ));
    }

    #[test]
    fn omega_prime_values() {
        assert_eq!(omega_prime(1.0).unwrap(), 0.5);
        assert!((omega_prime(0.5).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(omega_prime(1e-9).unwrap() < 1e-8);
        assert!(omega_prime(0.0).is_err() && omega_prime(1.5).is_err());
    }

    #[test]
    fn exact_family_recovery() {
        let m = fit_polynomial_rate(&exact(|n| n.powf(-2.0), &NS), 16, 1024).unwrap();
        assert!((m.beta().unwrap() - 2.0).abs() < 1e-9);
        let m = fit_polynomial_rate(&exact(|n| 0.5 / n, &NS), 16, 1024).unwrap();
        assert!((m.beta().unwrap() - 1.0).abs() < 1e-9);
        assert!((m.intercept.unwrap() - 0.5f64.ln()).abs() < 1e-9);
        let m = fit_stretched_rate(&exact(|n| (-n.sqrt()).exp(), &NS), 16, 1024).unwrap();
        assert!((m.omega().unwrap() - 0.5).abs() < 1e-9 && (m.tau().unwrap() - 1.0).abs() < 1e-9);
        let ns = [1, 2, 3, 4, 5, 6, 8, 10, 12, 16];
        let m = fit_stretched_rate(&exact(|n| (-2.0 * n).exp(), &ns), 1, 16).unwrap();
        assert!((m.omega().unwrap() - 1.0).abs() < 1e-9 && (m.tau().unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn window_errors() {
        let e = exact(|n| 1.0 / n, &[16, 32, 64]);
        assert!(matches!(fit_polynomial_rate(&e, 16, 64), Err(RateFitError::InsufficientData { .. })));
        let e = exact(|n| if n > 100.0 { 0.0 } else { 1.0 / n }, &NS);
        assert!(matches!(fit_polynomial_rate(&e, 16, 1024), Err(RateFitError::ZeroValues { .. })));
        let e = exact(|n| if n == 64.0 { 1.0 } else { 0.5 / n }, &NS);
        assert!(matches!(fit_stretched_rate(&e, 16, 1024), Err(RateFitError::ValueNotBelowOne { .. })));
    }

    #[test]
    fn noisy_fit_has_bootstrap_interval() {
        let pts = NS
            .iter()
            .map(|&n| {
                let v = 2.0 / n as f64;
                DecayPoint { n, value: v, stderr: 0.05 * v, samples: 1000 }
            })
            .collect();
        let m = fit_polynomial_rate(&DecayEstimate::from_points(pts), 16, 1024).unwrap();
        let ci = m.ci_beta.unwrap();
        assert!(ci.lo < 1.0 && ci.hi > 1.0 && ci.hi - ci.lo < 0.2);
    }

    #[test]
    fn tau_prime_and_majorization() {
        let omega = 0.5;
        let e = exact(|n| (-0.7 * 0.1f64.powf(omega) * n.powf(omega / 2.0)).exp(), &NS);
        let tp = fit_tau_prime(&e, omega, 0.1, 16, 1024).unwrap();
        assert!((tp - 0.7).abs() < 1e-12);
        let m = RateModel::stretched(1.0, omega, Some(tp));
        assert!((majorization_ratio(&e, &m, 0.1).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(majorization_ratio(&exact(|_| 0.0, &NS), &m, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn model_json_round_trip() {
        let m = fit_polynomial_rate(&exact(|n| n.powf(-1.5), &NS), 16, 1024).unwrap();
        let back: RateModel = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(back, m);
    }

    proptest! {
        #[test]
        fn fits_are_scale_equivariant(beta in 0.2f64..3.0, omega in 0.2f64..1.0, c in 0.01f64..0.9) {
            let base = exact(|n| n.powf(-beta), &NS);
            let scaled = exact(|n| c * n.powf(-beta), &NS);
            let a = fit_polynomial_rate(&base, 16, 1024).unwrap();
            let b = fit_polynomial_rate(&scaled, 16, 1024).unwrap();
            prop_assert!((a.beta().unwrap() - b.beta().unwrap()).abs() < 1e-9);
            prop_assert!((b.intercept.unwrap() - a.intercept.unwrap() - c.ln()).abs() < 1e-9);
            let s = exact(|n| (-0.3 * n.powf(omega)).exp(), &NS);
            let m = fit_stretched_rate(&s, 16, 1024).unwrap();
            prop_assert!((m.omega().unwrap() - omega).abs() < 1e-9);
        }

        #[test]
        fn omega_prime_is_monotone(a in 1e-6f64..1.0, b in 1e-6f64..1.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(omega_prime(lo).unwrap() <= omega_prime(hi).unwrap());
            prop_assert!(omega_prime(hi).unwrap() <= 0.5 && omega_prime(lo).unwrap() > 0.0);
        }
    }
}
