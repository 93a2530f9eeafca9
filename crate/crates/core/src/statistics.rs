//! Monte Carlo estimators of the statistical functionals: Birkhoff sums,
//! large and maximal large deviations, correlations, conditional
//! expectations given the stable σ-algebra, stable-leaf diameters and the
//! duality identity.
//!
//! All estimators draw independent orbits from the invariant measure. Orbit
//! `i` uses the random stream `(seed, i)` and orbits are reduced in index
//! order, so every result is bit-identical for any thread count.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{prefix_sums_into, CompensatedSum};
use crate::observable::Observable;
use crate::parallel::{map_batches, DEFAULT_BATCHES};
use crate::rng::{orbit_stream, OrbitRng};
use crate::sampler::{sample_mu_delta_with_future, TowerObservable};
use crate::system::{DynamicalSystem, StepFailure};
use crate::tower::{TowerPoint, TowerSchema};

/// Default number of inner past redraws for conditional expectations.
pub const DEFAULT_INNER_SAMPLES: usize = 64;

/// Orbits whose initial condition must be redrawn more often than this are
/// reported as an error instead of looping.
const MAX_REDRAWS_PER_ORBIT: u32 = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("parameter `{name}` = {value} is out of range")]
    ParameterOutOfRange { name: &'static str, value: f64 },
    #[error("partial sum of length {k} requested from a trace of length {len}")]
    HorizonExceeded { k: usize, len: usize },
    #[error("horizon {horizon} is smaller than the required {needed}")]
    HorizonTooSmall { horizon: usize, needed: usize },
    #[error("conditional expectations need a tower system")]
    NotATowerSystem,
    #[error("orbit {orbit}: {reason}")]
    OrbitFailed { orbit: u64, reason: String },
}

/// Population and reproducibility settings shared by every estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub n_orbits: u64,
    pub seed: u64,
    /// Worker threads; `0` uses every core.
    pub threads: usize,
    /// Batches for parallel work and batch-means errors. Results depend on
    /// this number, not on `threads`.
    pub batches: usize,
}

impl MonteCarlo {
    pub fn new(n_orbits: u64, seed: u64) -> Self {
        Self { n_orbits, seed, threads: 1, batches: DEFAULT_BATCHES }
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = threads;
        self
    }

    fn check(&self) -> Result<(), StatsError> {
        if self.n_orbits == 0 {
            return Err(StatsError::ParameterOutOfRange { name: "n_orbits", value: 0.0 });
        }
        Ok(())
    }

    /// Runs `per_orbit(orbit, rng, acc)` for every orbit and returns one
    /// accumulator per batch, in batch order.
    pub fn run<A, I, F>(&self, init: I, per_orbit: F) -> Result<Vec<A>, StatsError>
    where
        A: Send,
        I: Fn() -> A + Sync,
        F: Fn(u64, &mut OrbitRng, &mut A) -> Result<(), StatsError> + Sync,
    {
        self.check()?;
        map_batches(self.n_orbits, self.batches, self.threads, |_, range| {
            let mut acc = init();
            for orbit in range {
                let mut rng = orbit_stream(self.seed, orbit);
                per_orbit(orbit, &mut rng, &mut acc)?;
            }
            Ok(acc)
        })
        .into_iter()
        .collect()
    }
}

/// One estimated point of a decay curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayPoint {
    pub n: u64,
    pub value: f64,
    pub stderr: f64,
    pub samples: u64,
}

/// Provenance of a [`DecayEstimate`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimateMeta {
    pub seed: u64,
    pub system: String,
    pub observable: String,
    pub functional: String,
    pub epsilon: Option<f64>,
    pub horizon: Option<u64>,
    pub truncated_mass: f64,
    /// Orbits redrawn after a tangential collision, over orbits requested.
    pub discarded_fraction: f64,
    /// The same estimate with the horizon halved, where defined.
    pub horizon_sensitivity: Vec<DecayPoint>,
}

/// A decay curve `n ↦ value` with standard errors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecayEstimate {
    pub points: Vec<DecayPoint>,
    pub meta: EstimateMeta,
}

impl DecayEstimate {
    pub fn from_points(points: Vec<DecayPoint>) -> Self {
        Self { points, meta: EstimateMeta::default() }
    }

    pub fn value_at(&self, n: u64) -> Option<f64> {
        self.points.iter().find(|p| p.n == n).map(|p| p.value)
    }

    pub fn point_at(&self, n: u64) -> Option<&DecayPoint> {
        self.points.iter().find(|p| p.n == n)
    }
}

/// `φ_k = Σ_{j<k} trace[j]`, summed with compensation.
pub fn birkhoff_sum(trace: &[f64], k: usize) -> Result<f64, StatsError> {
    if k > trace.len() {
        return Err(StatsError::HorizonExceeded { k, len: trace.len() });
    }
    Ok(trace[..k].iter().copied().collect::<CompensatedSum>().value())
}

/// `|φ_k| / k` for `k = 1..=trace.len()` (index `k - 1`).
pub fn normalized_abs_sums(trace: &[f64], scratch: &mut Vec<f64>, out: &mut Vec<f64>) {
    prefix_sums_into(trace, scratch);
    out.clear();
    out.extend(scratch[1..].iter().enumerate().map(|(i, s)| s.abs() / (i + 1) as f64));
}

/// Relative margin below which `|φ_k/k|` counts as equal to ε. Rounding in
/// the prefix sums would otherwise split exact ties at random.
pub const TIE_RTOL: f64 = 1e-9;

/// Strict exceedance `r > ε` with ties inside [`TIE_RTOL`] treated as equal.
pub fn exceeds(r: f64, epsilon: f64) -> bool {
    r > epsilon * (1.0 + TIE_RTOL)
}

fn check_epsilon(epsilon: f64) -> Result<(), StatsError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(StatsError::ParameterOutOfRange { name: "epsilon", value: epsilon });
    }
    Ok(())
}

fn check_n_list(n_list: &[u64]) -> Result<(), StatsError> {
    if n_list.is_empty() {
        return Err(StatsError::ParameterOutOfRange { name: "n_list.len", value: 0.0 });
    }
    if n_list[0] == 0 {
        return Err(StatsError::ParameterOutOfRange { name: "n", value: 0.0 });
    }
    if n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(StatsError::ParameterOutOfRange { name: "n_list (not increasing)", value: f64::NAN });
    }
    Ok(())
}

/// Draws an initial state and fills `out` with `len` observable values,
/// redrawing the state after a tangential collision. Returns the number of
/// redraws.
pub fn sample_trace<S: DynamicalSystem>(
    system: &S,
    observable: &dyn Observable<S::State>,
    len: usize,
    orbit: u64,
    rng: &mut OrbitRng,
    out: &mut Vec<f64>,
) -> Result<u32, StatsError> {
    let mut redraws = 0;
    loop {
        let mut state = system.sample(rng);
        match system.trace_into(observable, &mut state, len, rng, out) {
            Ok(()) => return Ok(redraws),
            Err(StepFailure::Tangency) if redraws < MAX_REDRAWS_PER_ORBIT => redraws += 1,
            Err(e) => {
                return Err(StatsError::OrbitFailed { orbit, reason: format!("{e:?}") });
            }
        }
    }
}

fn binomial_point(n: u64, hits: u64, total: u64) -> DecayPoint {
    let p = hits as f64 / total as f64;
    DecayPoint { n, value: p, stderr: (p * (1.0 - p) / total as f64).sqrt(), samples: total }
}

fn base_meta<S: DynamicalSystem>(
    system: &S,
    observable: &dyn Observable<S::State>,
    functional: &str,
    mc: &MonteCarlo,
) -> EstimateMeta {
    EstimateMeta {
        seed: mc.seed,
        system: system.describe(),
        observable: observable.describe(),
        functional: functional.to_string(),
        truncated_mass: system.truncated_mass(),
        ..Default::default()
    }
}

#[derive(Default)]
struct DeviationCounts {
    ld: Vec<u64>,
    mld: Vec<u64>,
    mld_half: Vec<u64>,
    redraws: u64,
}

/// LD and MLD from the same orbits, plus MLD at half the horizon.
///
/// `ld(n)` is the fraction of orbits with `|φ_n/n| > ε`; `mld(n)` the
/// fraction with `max_{n ≤ k ≤ horizon} |φ_k/k| > ε`.
pub fn estimate_ld_mld<S: DynamicalSystem>(
    system: &S,
    observable: &dyn Observable<S::State>,
    epsilon: f64,
    n_list: &[u64],
    horizon: u64,
    mc: &MonteCarlo,
) -> Result<(DecayEstimate, DecayEstimate), StatsError> {
    check_epsilon(epsilon)?;
    check_n_list(n_list)?;
    let n_max = *n_list.last().unwrap();
    if horizon < n_max {
        return Err(StatsError::HorizonTooSmall { horizon: horizon as usize, needed: n_max as usize });
    }
    let h = horizon as usize;
    let half = h / 2;
    let m = n_list.len();
    let batches = mc.run(
        || (DeviationCounts { ld: vec![0; m], mld: vec![0; m], mld_half: vec![0; m], redraws: 0 }, Vec::new(), Vec::new(), Vec::new()),
        |orbit, rng, (acc, trace, scratch, ratio)| {
            acc.redraws += sample_trace(system, observable, h, orbit, rng, trace)? as u64;
            normalized_abs_sums(trace, scratch, ratio);
            // walk k downwards keeping running maxima over [k, h] and [k, h/2]
            let mut idx = m;
            let mut full = 0.0f64;
            let mut halfmax = 0.0f64;
            for k in (1..=h).rev() {
                let r = ratio[k - 1];
                full = full.max(r);
                if k <= half {
                    halfmax = halfmax.max(r);
                }
                while idx > 0 && n_list[idx - 1] as usize == k {
                    idx -= 1;
                    acc.ld[idx] += exceeds(r, epsilon) as u64;
                    acc.mld[idx] += exceeds(full, epsilon) as u64;
                    acc.mld_half[idx] += exceeds(halfmax, epsilon) as u64;
                }
                if idx == 0 {
                    break;
                }
            }
            Ok(())
        },
    )?;
    let mut total = DeviationCounts { ld: vec![0; m], mld: vec![0; m], mld_half: vec![0; m], redraws: 0 };
    for (b, _, _, _) in batches {
        for i in 0..m {
            total.ld[i] += b.ld[i];
            total.mld[i] += b.mld[i];
            total.mld_half[i] += b.mld_half[i];
        }
        total.redraws += b.redraws;
    }
    let nt = mc.n_orbits;
    let mut meta = base_meta(system, observable, "ld", mc);
    meta.epsilon = Some(epsilon);
    meta.discarded_fraction = total.redraws as f64 / nt as f64;
    meta.horizon = Some(n_max);
    let ld = DecayEstimate {
        points: (0..m).map(|i| binomial_point(n_list[i], total.ld[i], nt)).collect(),
        meta: meta.clone(),
    };
    meta.functional = "mld".into();
    meta.horizon = Some(horizon);
    meta.horizon_sensitivity = (0..m)
        .filter(|&i| n_list[i] as usize <= half)
        .map(|i| binomial_point(n_list[i], total.mld_half[i], nt))
        .collect();
    let mld = DecayEstimate {
        points: (0..m).map(|i| binomial_point(n_list[i], total.mld[i], nt)).collect(),
        meta,
    };
    Ok((ld, mld))
}

/// `ld(φ, ε, n)` for each `n` in `n_list`.
pub fn estimate_ld<S: DynamicalSystem>(
    system: &S,
    observable: &dyn Observable<S::State>,
    epsilon: f64,
    n_list: &[u64],
    mc: &MonteCarlo,
) -> Result<DecayEstimate, StatsError> {
    check_n_list(n_list)?;
    let n_max = *n_list.last().unwrap();
    let (mut ld, _) = estimate_ld_mld(system, observable, epsilon, n_list, n_max, mc)?;
    ld.meta.horizon = None;
    Ok(ld)
}

/// `mld(φ, ε, n)` with the supremum truncated at `horizon`.
pub fn estimate_mld<S: DynamicalSystem>(
    system: &S,
    observable: &dyn Observable<S::State>,
    epsilon: f64,
    n_list: &[u64],
    horizon: u64,
    mc: &MonteCarlo,
) -> Result<DecayEstimate, StatsError> {
    Ok(estimate_ld_mld(system, observable, epsilon, n_list, horizon, mc)?.1)
}

#[derive(Clone)]
struct CorrSums {
    phi: CompensatedSum,
    psi: Vec<CompensatedSum>,
    prod: Vec<CompensatedSum>,
    count: u64,
    redraws: u64,
}

impl CorrSums {
    fn new(m: usize) -> Self {
        Self {
            phi: CompensatedSum::new(),
            psi: vec![CompensatedSum::new(); m],
            prod: vec![CompensatedSum::new(); m],
            count: 0,
            redraws: 0,
        }
    }

    fn covariance(&self, i: usize) -> f64 {
        let c = self.count as f64;
        self.prod[i].value() / c - (self.phi.value() / c) * (self.psi[i].value() / c)
    }
}

/// `|E[φ · ψ∘f^n] - E[φ] E[ψ∘f^n]|` with batch-means standard errors.
pub fn estimate_correlation<S: DynamicalSystem>(
    system: &S,
    phi: &dyn Observable<S::State>,
    psi: &dyn Observable<S::State>,
    n_list: &[u64],
    mc: &MonteCarlo,
) -> Result<DecayEstimate, StatsError> {
    if n_list.is_empty() {
        return Err(StatsError::ParameterOutOfRange { name: "n_list.len", value: 0.0 });
    }
    if n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(StatsError::ParameterOutOfRange { name: "n_list (not increasing)", value: f64::NAN });
    }
    let m = n_list.len();
    let len = *n_list.last().unwrap() as usize + 1;
    let batches = mc.run(
        || (CorrSums::new(m), Vec::new()),
        |orbit, rng, (acc, trace)| {
            let mut redraws = 0;
            let phi0 = loop {
                let mut state = system.sample(rng);
                let phi0 = phi.eval(&state);
                match system.trace_into(psi, &mut state, len, rng, trace) {
                    Ok(()) => break phi0,
                    Err(StepFailure::Tangency) if redraws < MAX_REDRAWS_PER_ORBIT => redraws += 1,
                    Err(e) => return Err(StatsError::OrbitFailed { orbit, reason: format!("{e:?}") }),
                }
            };
            acc.redraws += redraws as u64;
            acc.phi.add(phi0);
            for (i, &n) in n_list.iter().enumerate() {
                let v = trace[n as usize];
                acc.psi[i].add(v);
                acc.prod[i].add(phi0 * v);
            }
            acc.count += 1;
            Ok(())
        },
    )?;
    let mut total = CorrSums::new(m);
    for (b, _) in &batches {
        total.phi.merge(&b.phi);
        for i in 0..m {
            total.psi[i].merge(&b.psi[i]);
            total.prod[i].merge(&b.prod[i]);
        }
        total.count += b.count;
        total.redraws += b.redraws;
    }
    let nb = batches.len() as f64;
    let points = (0..m)
        .map(|i| {
            let cov = total.covariance(i);
            let stderr = if batches.len() > 1 {
                let covs: Vec<f64> = batches.iter().map(|(b, _)| b.covariance(i)).collect();
                let mean = covs.iter().sum::<f64>() / nb;
                let var = covs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (nb - 1.0);
                (var / nb).sqrt()
            } else {
                0.0
            };
            DecayPoint { n: n_list[i], value: cov.abs(), stderr, samples: total.count }
        })
        .collect();
    let mut meta = base_meta(system, phi, "corr", mc);
    meta.observable = format!("{} x {}", phi.describe(), psi.describe());
    meta.discarded_fraction = total.redraws as f64 / mc.n_orbits as f64;
    Ok(DecayEstimate { points, meta })
}

/// Settings for the nested (past-redrawing) estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CondExpSettings {
    pub n: u64,
    pub p: f64,
    /// Past redraws per outer sample.
    pub m_inner: usize,
}

impl CondExpSettings {
    pub fn new(n: u64, p: f64) -> Self {
        Self { n, p, m_inner: DEFAULT_INNER_SAMPLES }
    }

    fn check(&self) -> Result<(), StatsError> {
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(StatsError::ParameterOutOfRange { name: "p", value: self.p });
        }
        if self.m_inner < 2 {
            return Err(StatsError::ParameterOutOfRange { name: "m_inner", value: self.m_inner as f64 });
        }
        Ok(())
    }
}

/// An `L^p` norm estimated from per-sample `p`-th powers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormEstimate {
    pub n: u64,
    pub p: f64,
    /// `(mean |·|^p)^{1/p}`.
    pub value: f64,
    pub stderr: f64,
    /// `mean |·|^p` and its standard error.
    pub pth_power: f64,
    pub pth_power_stderr: f64,
    /// Mean standard error of the inner averages.
    pub inner_stderr: f64,
    pub samples: u64,
}

#[derive(Default, Clone)]
struct Moments {
    sum: CompensatedSum,
    sum_sq: CompensatedSum,
    count: u64,
}

impl Moments {
    fn add(&mut self, x: f64) {
        self.sum.add(x);
        self.sum_sq.add(x * x);
        self.count += 1;
    }

    fn merge(&mut self, o: &Moments) {
        self.sum.merge(&o.sum);
        self.sum_sq.merge(&o.sum_sq);
        self.count += o.count;
    }

    fn mean(&self) -> f64 {
        self.sum.value() / self.count as f64
    }

    fn stderr(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        let m = self.mean();
        let var = ((self.sum_sq.value() - n * m * m) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    }
}

fn norm_from(m: &Moments, inner: &Moments, n: u64, p: f64) -> NormEstimate {
    let pth = m.mean();
    let se = m.stderr();
    let value = pth.max(0.0).powf(1.0 / p);
    let stderr = if value > 0.0 { se / (p * value.powf(p - 1.0)) } else { 0.0 };
    NormEstimate {
        n,
        p,
        value,
        stderr,
        pth_power: pth,
        pth_power_stderr: se,
        inner_stderr: inner.mean(),
        samples: m.count,
    }
}

fn redraw_past(schema: &TowerSchema, point: &mut TowerPoint, rng: &mut OrbitRng) {
    for b in point.past.iter_mut() {
        *b = schema.draw_branch(rng);
    }
}

/// Average of `φ(f^{-n} z')` over `m` redraws `z'` of the past of `z`, with
/// the standard error of that average.
fn backward_average(
    schema: &TowerSchema,
    observable: &TowerObservable,
    z: &TowerPoint,
    n: u64,
    m: usize,
    rng: &mut OrbitRng,
) -> (f64, f64) {
    let mut acc = Moments::default();
    for _ in 0..m {
        let mut w = z.clone();
        redraw_past(schema, &mut w, rng);
        for _ in 0..n {
            schema.step_back(&mut w, rng);
        }
        acc.add(observable.eval(&w));
    }
    (acc.mean(), acc.stderr())
}

/// Values `φ(f^n x')` over `m` redraws `x'` of the past of `x`. `x` must know
/// enough future symbols that no step draws new ones.
fn forward_values(
    schema: &TowerSchema,
    observable: &TowerObservable,
    x: &TowerPoint,
    n: u64,
    m: usize,
    rng: &mut OrbitRng,
    out: &mut Vec<f64>,
) {
    out.clear();
    for _ in 0..m {
        let mut w = x.clone();
        redraw_past(schema, &mut w, rng);
        for _ in 0..n {
            schema.step(&mut w, rng);
        }
        out.push(observable.eval(&w));
    }
}

fn forward(schema: &TowerSchema, x: &TowerPoint, n: u64, rng: &mut OrbitRng) -> (TowerPoint, u64) {
    let mut w = x.clone();
    let mut pops = 0;
    for _ in 0..n {
        schema.step(&mut w, rng);
        pops += (w.level == 0) as u64;
    }
    (w, pops)
}

fn outer_sample(schema: &TowerSchema, observable: &TowerObservable, n: u64, rng: &mut OrbitRng) -> TowerPoint {
    sample_mu_delta_with_future(schema, rng, n as usize + observable.future_lookahead() + 2)
}

/// `‖E(φ∘f^{-n} | F_0)‖_p`: the conditional expectation given the future and
/// level is the average of `φ∘f^{-n}` over redrawn pasts.
pub fn cond_exp_past_norm(
    schema: &TowerSchema,
    observable: &TowerObservable,
    settings: CondExpSettings,
    mc: &MonteCarlo,
) -> Result<NormEstimate, StatsError> {
    settings.check()?;
    let CondExpSettings { n, p, m_inner } = settings;
    let batches = mc.run(
        || (Moments::default(), Moments::default()),
        |_, rng, (acc, inner)| {
            let x = outer_sample(schema, observable, n, rng);
            let (c, se) = backward_average(schema, observable, &x, n, m_inner, rng);
            acc.add(c.abs().powf(p));
            inner.add(se);
            Ok(())
        },
    )?;
    let (mut acc, mut inner) = (Moments::default(), Moments::default());
    for (a, i) in &batches {
        acc.merge(a);
        inner.merge(i);
    }
    Ok(norm_from(&acc, &inner, n, p))
}

/// `‖E(φ∘f^n | F_0) - φ∘f^n‖_p`.
pub fn cond_exp_future_residual(
    schema: &TowerSchema,
    observable: &TowerObservable,
    settings: CondExpSettings,
    mc: &MonteCarlo,
) -> Result<NormEstimate, StatsError> {
    settings.check()?;
    let CondExpSettings { n, p, m_inner } = settings;
    let batches = mc.run(
        || (Moments::default(), Moments::default(), Vec::new()),
        |_, rng, (acc, inner, vals)| {
            let x = outer_sample(schema, observable, n, rng);
            let (z, _) = forward(schema, &x, n, rng);
            forward_values(schema, observable, &x, n, m_inner, rng, vals);
            let mut mom = Moments::default();
            vals.iter().for_each(|&v| mom.add(v));
            acc.add((mom.mean() - observable.eval(&z)).abs().powf(p));
            inner.add(mom.stderr());
            Ok(())
        },
    )?;
    let (mut acc, mut inner) = (Moments::default(), Moments::default());
    for (a, i, _) in &batches {
        acc.merge(a);
        inner.merge(i);
    }
    Ok(norm_from(&acc, &inner, n, p))
}

/// Mean oscillation of `φ` over the image `f^n W^s(x)` of a stable leaf.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableDiameter {
    pub n: u64,
    pub value: f64,
    pub stderr: f64,
    /// `E[γ^{h_n}]` along the same orbits.
    pub gamma_h_mean: f64,
    /// Fraction of samples exceeding the pointwise bound `2γ^{h_n}/(1-γ)`
    /// (meaningful for `symbol_weighted` with `|a| ≤ 1`).
    pub bound_violations: f64,
    pub samples: u64,
}

/// `E[diam φ(f^n W^s(x))]`, the leaf diameter taken as max - min of `φ` over
/// the original point and `m_inner` past redraws.
pub fn stable_diameter_sum(
    schema: &TowerSchema,
    observable: &TowerObservable,
    n: u64,
    m_inner: usize,
    mc: &MonteCarlo,
) -> Result<StableDiameter, StatsError> {
    CondExpSettings { n, p: 1.0, m_inner }.check()?;
    let gamma = schema.gamma();
    let batches = mc.run(
        || (Moments::default(), Moments::default(), 0u64, Vec::new()),
        |_, rng, (diam, gh, viol, vals)| {
            let x = outer_sample(schema, observable, n, rng);
            let (z, _) = forward(schema, &x, n, rng);
            let h = schema.h_n(&x, n, rng);
            forward_values(schema, observable, &x, n, m_inner, rng, vals);
            let z_val = observable.eval(&z);
            let hi = vals.iter().copied().fold(z_val, f64::max);
            let lo = vals.iter().copied().fold(z_val, f64::min);
            let d = hi - lo;
            let g = gamma.powi(h as i32);
            diam.add(d);
            gh.add(g);
            *viol += (d > 2.0 * g / (1.0 - gamma) + 1e-12) as u64;
            Ok(())
        },
    )?;
    let (mut diam, mut gh, mut viol) = (Moments::default(), Moments::default(), 0u64);
    for (d, g, v, _) in &batches {
        diam.merge(d);
        gh.merge(g);
        viol += v;
    }
    Ok(StableDiameter {
        n,
        value: diam.mean(),
        stderr: diam.stderr(),
        gamma_h_mean: gh.mean(),
        bound_violations: viol as f64 / diam.count as f64,
        samples: diam.count,
    })
}

/// Both sides of `‖E(φ∘f^{-n}|F_0)‖_p^p = ∫ φ · ψ∘f^n dμ` with
/// `ψ = |c|^{p-1} sgn(c)`, `c = E(φ∘f^{-n}|F_0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualityEstimate {
    pub n: u64,
    pub p: f64,
    pub lhs: f64,
    pub lhs_stderr: f64,
    pub rhs: f64,
    pub rhs_stderr: f64,
    /// Standard error of the paired difference `lhs - rhs`.
    pub diff_stderr: f64,
    pub samples: u64,
}

impl DualityEstimate {
    /// `|lhs - rhs|` in units of the paired standard error.
    pub fn z_score(&self) -> f64 {
        let d = (self.lhs - self.rhs).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.diff_stderr
        }
    }
}

/// `ψ(c) = |c|^{p-1} sgn(c)`.
pub fn dual_power(c: f64, p: f64) -> f64 {
    if c == 0.0 {
        0.0
    } else {
        c.abs().powf(p - 1.0) * c.signum()
    }
}

/// Monte Carlo duality check.
///
/// With `z = f^n x`, two independent inner averages `ĉ_A(z)` and `ĉ_B(z)` are
/// formed. The left side averages `ĉ_A · ψ(ĉ_B)` and the right side
/// `φ(x) · ψ(ĉ_B)`; both are unbiased for the same quantity, and the left
/// side approximates `‖c‖_p^p` up to inner-sampling error.
pub fn duality_check(
    schema: &TowerSchema,
    observable: &TowerObservable,
    settings: CondExpSettings,
    mc: &MonteCarlo,
) -> Result<DualityEstimate, StatsError> {
    settings.check()?;
    let CondExpSettings { n, p, m_inner } = settings;
    let batches = mc.run(
        || (Moments::default(), Moments::default(), Moments::default()),
        |_, rng, (lhs, rhs, diff)| {
            let x = outer_sample(schema, observable, n, rng);
            let phi_x = observable.eval(&x);
            let (z, _) = forward(schema, &x, n, rng);
            let (c_a, _) = backward_average(schema, observable, &z, n, m_inner, rng);
            let (c_b, _) = backward_average(schema, observable, &z, n, m_inner, rng);
            let w = dual_power(c_b, p);
            let (l, r) = (c_a * w, phi_x * w);
            lhs.add(l);
            rhs.add(r);
            diff.add(l - r);
            Ok(())
        },
    )?;
    let (mut l, mut r, mut d) = (Moments::default(), Moments::default(), Moments::default());
    for (a, b, c) in &batches {
        l.merge(a);
        r.merge(b);
        d.merge(c);
    }
    Ok(DualityEstimate {
        n,
        p,
        lhs: l.mean(),
        lhs_stderr: l.stderr(),
        rhs: r.mean(),
        rhs_stderr: r.stderr(),
        diff_stderr: d.stderr(),
        samples: l.count,
    })
}
