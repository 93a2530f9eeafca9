//! Pathwise and moment checks behind the maximal inequalities: norms of
//! maximal partial sums, exponential moments of `φ_n`, the tail suprema
//! `M_n = sup_{k ≥ n} |φ_k|/k` and the recursion `M_n ≤ M_{2n} + C_n`.
//!
//! Suprema over `k ≥ n` are truncated at a horizon shared by `M_n` and
//! `M_{2n}`, so the pointwise recursion stays exact for the truncated
//! statistics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{prefix_sums_into, CompensatedSum};
use crate::observable::Observable;
use crate::statistics::{sample_trace, MonteCarlo, StatsError};
use crate::system::DynamicalSystem;

/// Slack allowed in `M_n ≤ M_{2n} + C_n`.
pub const BS_SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MartingaleError {
    #[error("parameter `{name}` = {value} is out of range")]
    ParameterOutOfRange { name: &'static str, value: f64 },
    #[error("partial sum of length {k} requested from a trace of length {len}")]
    HorizonExceeded { k: usize, len: usize },
    #[error("horizon {horizon} is smaller than the required {needed}")]
    HorizonTooSmall { horizon: usize, needed: usize },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

fn prefix(trace: &[f64]) -> Vec<f64> {
    let mut s = Vec::new();
    prefix_sums_into(trace, &mut s);
    s
}

fn max_abs_prefix(sums: &[f64], n: usize) -> f64 {
    sums[1..=n].iter().fold(0.0f64, |m, s| m.max(s.abs()))
}

fn check_p(p: f64) -> Result<(), MartingaleError> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(MartingaleError::ParameterOutOfRange { name: "p", value: p });
    }
    Ok(())
}

/// `‖max_{k≤n} |φ_k|‖_p` over a population of traces.
pub fn max_partial_sum_norm(traces: &[Vec<f64>], p: f64, n: usize) -> Result<f64, MartingaleError> {
    check_p(p)?;
    if traces.is_empty() {
        return Err(MartingaleError::ParameterOutOfRange { name: "traces.len", value: 0.0 });
    }
    let mut acc = CompensatedSum::new();
    for t in traces {
        if n > t.len() {
            return Err(MartingaleError::HorizonExceeded { k: n, len: t.len() });
        }
        acc.add(max_abs_prefix(&prefix(&t[..n]), n).powf(p));
    }
    Ok((acc.value() / traces.len() as f64).powf(1.0 / p))
}

fn check_exp_params(tau_prime: f64, omega: f64) -> Result<(), MartingaleError> {
    if !(tau_prime > 0.0 && tau_prime.is_finite()) {
        return Err(MartingaleError::ParameterOutOfRange { name: "tau_prime", value: tau_prime });
    }
    if !(omega > 0.0 && omega <= 1.0) {
        return Err(MartingaleError::ParameterOutOfRange { name: "omega", value: omega });
    }
    Ok(())
}

#[inline]
fn exp_term(sum: f64, tau_prime: f64, omega: f64, n: usize) -> f64 {
    (tau_prime * (n as f64).powf(-omega / 2.0) * sum.abs().powf(omega)).exp()
}

/// Sample mean of `exp(τ' n^{-ω/2} |φ_n|^ω)`.
pub fn exp_moment(traces: &[Vec<f64>], tau_prime: f64, omega: f64, n: usize) -> Result<f64, MartingaleError> {
    check_exp_params(tau_prime, omega)?;
    if traces.is_empty() || n == 0 {
        return Err(MartingaleError::ParameterOutOfRange { name: "n", value: n as f64 });
    }
    let mut acc = CompensatedSum::new();
    for t in traces {
        if n > t.len() {
            return Err(MartingaleError::HorizonExceeded { k: n, len: t.len() });
        }
        let s = t[..n].iter().copied().collect::<CompensatedSum>().value();
        acc.add(exp_term(s, tau_prime, omega, n));
    }
    Ok(acc.value() / traces.len() as f64)
}

fn check_window(len: usize, n: usize, horizon: usize) -> Result<(), MartingaleError> {
    if n == 0 {
        return Err(MartingaleError::ParameterOutOfRange { name: "n", value: 0.0 });
    }
    if horizon < n {
        return Err(MartingaleError::HorizonTooSmall { horizon, needed: n });
    }
    if horizon > len {
        return Err(MartingaleError::HorizonExceeded { k: horizon, len });
    }
    Ok(())
}

fn m_from_sums(sums: &[f64], n: usize, horizon: usize) -> f64 {
    (n..=horizon).fold(0.0f64, |m, k| m.max(sums[k].abs() / k as f64))
}

/// `M_n = max_{n ≤ k ≤ horizon} |φ_k| / k`.
pub fn m_n(trace: &[f64], n: usize, horizon: usize) -> Result<f64, MartingaleError> {
    check_window(trace.len(), n, horizon)?;
    Ok(m_from_sums(&prefix(&trace[..horizon]), n, horizon))
}

/// The three statistics of one recursion step and whether it held.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BsCheck {
    pub m_n: f64,
    pub m_2n: f64,
    pub c_n: f64,
    pub holds: bool,
}

impl BsCheck {
    /// `M_n - M_{2n} - C_n`; positive means the inequality failed.
    pub fn excess(&self) -> f64 {
        self.m_n - self.m_2n - self.c_n
    }
}

/// `C_n = 3|φ_{3n}|/(3n) + 4 max_{n≤k≤2n-1} |φ_{3n} - φ_k|/(2n)`.
fn c_from_sums(sums: &[f64], n: usize) -> f64 {
    let s3 = sums[3 * n];
    let tail = (n..2 * n).fold(0.0f64, |m, k| m.max((s3 - sums[k]).abs()));
    3.0 * s3.abs() / (3 * n) as f64 + 4.0 * tail / (2 * n) as f64
}

fn bs_from_sums(sums: &[f64], n: usize, horizon: usize) -> BsCheck {
    let m_n = m_from_sums(sums, n, horizon);
    let m_2n = m_from_sums(sums, 2 * n, horizon);
    let c_n = c_from_sums(sums, n);
    BsCheck { m_n, m_2n, c_n, holds: m_n <= m_2n + c_n + BS_SLACK }
}

/// Evaluates `M_n`, `M_{2n}` (same horizon) and `C_n` on one trace.
pub fn bs_recursion_check(trace: &[f64], n: usize, horizon: usize) -> Result<BsCheck, MartingaleError> {
    if n == 0 {
        return Err(MartingaleError::ParameterOutOfRange { name: "n", value: 0.0 });
    }
    if horizon < 3 * n {
        return Err(MartingaleError::HorizonTooSmall { horizon, needed: 3 * n });
    }
    check_window(trace.len(), n, horizon)?;
    Ok(bs_from_sums(&prefix(&trace[..horizon]), n, horizon))
}

/// Outcome of the recursion check on a population of orbits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BsSurveyRow {
    pub n: u64,
    pub horizon: u64,
    pub orbits: u64,
    pub failures: u64,
    /// Largest `M_n - M_{2n} - C_n` seen (negative when all hold).
    pub max_excess: f64,
    pub mean_m_n: f64,
    pub mean_c_n: f64,
}

/// Checks the recursion on every orbit for each `n`, with horizon
/// `horizon_factor · n`.
pub fn bs_survey<S: DynamicalSystem>(
    system: &S,
    observable: &dyn Observable<S::State>,
    n_list: &[u64],
    horizon_factor: u64,
    mc: &MonteCarlo,
) -> Result<Vec<BsSurveyRow>, MartingaleError> {
    if horizon_factor < 3 {
        return Err(MartingaleError::HorizonTooSmall { horizon: horizon_factor as usize, needed: 3 });
    }
    if n_list.is_empty() || n_list.contains(&0) {
        return Err(MartingaleError::ParameterOutOfRange { name: "n", value: 0.0 });
    }
    let len = (*n_list.iter().max().unwrap() * horizon_factor) as usize;
    let m = n_list.len();
    let init = || {
        let rows: Vec<BsSurveyRow> = n_list
            .iter()
            .map(|&n| BsSurveyRow {
                n,
                horizon: n * horizon_factor,
                orbits: 0,
                failures: 0,
                max_excess: f64::NEG_INFINITY,
                mean_m_n: 0.0,
                mean_c_n: 0.0,
            })
            .collect();
        (rows, Vec::new(), Vec::new())
    };
    let batches = mc.run(init, |orbit, rng, (rows, trace, sums)| {
        sample_trace(system, observable, len, orbit, rng, trace)?;
        prefix_sums_into(trace, sums);
        for row in rows.iter_mut() {
            let chk = bs_from_sums(sums, row.n as usize, row.horizon as usize);
            row.orbits += 1;
            row.failures += (!chk.holds) as u64;
            row.max_excess = row.max_excess.max(chk.excess());
            row.mean_m_n += chk.m_n;
            row.mean_c_n += chk.c_n;
        }
        Ok(())
    })?;
    let (mut out, _, _) = init();
    for (rows, _, _) in batches {
        for i in 0..m {
            out[i].orbits += rows[i].orbits;
            out[i].failures += rows[i].failures;
            out[i].max_excess = out[i].max_excess.max(rows[i].max_excess);
            out[i].mean_m_n += rows[i].mean_m_n;
            out[i].mean_c_n += rows[i].mean_c_n;
        }
    }
    for row in &mut out {
        row.mean_m_n /= row.orbits as f64;
        row.mean_c_n /= row.orbits as f64;
    }
    Ok(out)
}

/// `L^p` norms of the maximal partial sum and of `M_n` at one `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxStats {
    pub n: u64,
    pub p: f64,
    /// `‖max_{k≤n} |φ_k|‖_p`.
    pub norm_max_partial: f64,
    pub norm_max_partial_stderr: f64,
    /// `‖M_n‖_p` with the supremum truncated at `horizon`.
    pub norm_m_n: f64,
    pub norm_m_n_stderr: f64,
    pub horizon: u64,
    pub samples: u64,
}

#[derive(Clone, Default)]
struct PowerSums {
    s: CompensatedSum,
    s2: CompensatedSum,
}

impl PowerSums {
    fn add(&mut self, x: f64) {
        self.s.add(x);
        self.s2.add(x * x);
    }

    fn merge(&mut self, o: &PowerSums) {
        self.s.merge(&o.s);
        self.s2.merge(&o.s2);
    }

    /// `(mean)^{1/p}` and its delta-method standard error.
    fn norm(&self, count: u64, p: f64) -> (f64, f64) {
        let c = count as f64;
        let mean = self.s.value() / c;
        let var = if count > 1 { ((self.s2.value() - c * mean * mean) / (c - 1.0)).max(0.0) } else { 0.0 };
        let se = (var / c).sqrt();
        let v = mean.max(0.0).powf(1.0 / p);
        let dse = if v > 0.0 { se / (p * v.powf(p - 1.0)) } else { 0.0 };
        (v, dse)
    }
}

/// [`MaxStats`] for each `n`, streaming over orbits of length `horizon`.
pub fn max_norm_survey<S: DynamicalSystem>(
    system: &S,
    observable: &dyn Observable<S::State>,
    n_list: &[u64],
    p: f64,
    horizon: u64,
    mc: &MonteCarlo,
) -> Result<Vec<MaxStats>, MartingaleError> {
    check_p(p)?;
    if n_list.is_empty() || n_list.contains(&0) {
        return Err(MartingaleError::ParameterOutOfRange { name: "n", value: 0.0 });
    }
    let n_max = *n_list.iter().max().unwrap();
    if horizon < n_max {
        return Err(MartingaleError::HorizonTooSmall { horizon: horizon as usize, needed: n_max as usize });
    }
    let h = horizon as usize;
    let m = n_list.len();
    let init = || (vec![PowerSums::default(); m], vec![PowerSums::default(); m], Vec::new(), Vec::new());
    let batches = mc.run(init, |orbit, rng, (mp, mn, trace, sums)| {
        sample_trace(system, observable, h, orbit, rng, trace)?;
        prefix_sums_into(trace, sums);
        for (i, &n) in n_list.iter().enumerate() {
            let n = n as usize;
            mp[i].add(max_abs_prefix(sums, n).powf(p));
            mn[i].add(m_from_sums(sums, n, h).powf(p));
        }
        Ok(())
    })?;
    let (mut mp, mut mn, _, _) = init();
    for (a, b, _, _) in &batches {
        for i in 0..m {
            mp[i].merge(&a[i]);
            mn[i].merge(&b[i]);
        }
    }
    Ok((0..m)
        .map(|i| {
            let (a, ase) = mp[i].norm(mc.n_orbits, p);
            let (b, bse) = mn[i].norm(mc.n_orbits, p);
            MaxStats {
                n: n_list[i],
                p,
                norm_max_partial: a,
                norm_max_partial_stderr: ase,
                norm_m_n: b,
                norm_m_n_stderr: bse,
                horizon,
                samples: mc.n_orbits,
            }
        })
        .collect())
}

/// One cell of an exponential-moment scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpMomentPoint {
    pub n: u64,
    pub tau_prime: f64,
    pub value: f64,
    pub stderr: f64,
}

/// `E exp(τ' n^{-ω/2} |φ_n|^ω)` for every `(n, τ')` pair, from one set of
/// orbits.
pub fn exp_moment_survey<S: DynamicalSystem>(
    system: &S,
    observable: &dyn Observable<S::State>,
    n_list: &[u64],
    omega: f64,
    tau_grid: &[f64],
    mc: &MonteCarlo,
) -> Result<Vec<ExpMomentPoint>, MartingaleError> {
    for &t in tau_grid {
        check_exp_params(t, omega)?;
    }
    if n_list.is_empty() || n_list.contains(&0) {
        return Err(MartingaleError::ParameterOutOfRange { name: "n", value: 0.0 });
    }
    let len = *n_list.iter().max().unwrap() as usize;
    let cells = n_list.len() * tau_grid.len();
    let init = || (vec![PowerSums::default(); cells], Vec::new(), Vec::new());
    let batches = mc.run(init, |orbit, rng, (acc, trace, sums)| {
        sample_trace(system, observable, len, orbit, rng, trace)?;
        prefix_sums_into(trace, sums);
        for (i, &n) in n_list.iter().enumerate() {
            let s = sums[n as usize];
            for (j, &t) in tau_grid.iter().enumerate() {
                acc[i * tau_grid.len() + j].add(exp_term(s, t, omega, n as usize));
            }
        }
        Ok(())
    })?;
    let (mut acc, _, _) = init();
    for (a, _, _) in &batches {
        for c in 0..cells {
            acc[c].merge(&a[c]);
        }
    }
    let mut out = Vec::with_capacity(cells);
    for (i, &n) in n_list.iter().enumerate() {
        for (j, &t) in tau_grid.iter().enumerate() {
            let (v, se) = acc[i * tau_grid.len() + j].norm(mc.n_orbits, 1.0);
            out.push(ExpMomentPoint { n, tau_prime: t, value: v, stderr: se });
        }
    }
    Ok(out)
}

/// Scanning `τ'` downward, the first grid value whose moment at `n` is at
/// most `bound`.
pub fn scan_tau_prime(points: &[ExpMomentPoint], n: u64, bound: f64) -> Option<f64> {
    let mut cands: Vec<&ExpMomentPoint> = points.iter().filter(|p| p.n == n).collect();
    cands.sort_by(|a, b| b.tau_prime.total_cmp(&a.tau_prime));
    cands.into_iter().find(|p| p.value <= bound).map(|p| p.tau_prime)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{polynomial_tail_schema, CanonicalKind, TowerObservable};
    use crate::system::TowerSystem;
    use proptest::prelude::*;

    #[test]
    fn zero_traces() {
        let t = vec![vec![0.0; 40]; 3];
        assert_eq!(max_partial_sum_norm(&t, 2.0, 10).unwrap(), 0.0);
        assert_eq!(exp_moment(&t, 0.5, 1.0, 10).unwrap(), 1.0);
        assert_eq!(m_n(&t[0], 3, 30).unwrap(), 0.0);
        let c = bs_recursion_check(&t[0], 4, 36).unwrap();
        assert_eq!((c.m_n, c.m_2n, c.c_n, c.holds), (0.0, 0.0, 0.0, true));
    }

    #[test]
    fn single_step_norm_is_observable_norm() {
        let t = vec![vec![2.0, 9.0], vec![-1.0, 9.0]];
        let v = max_partial_sum_norm(&t, 2.0, 1).unwrap();
        assert!((v - 2.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(m_n(&[3.0, 1.0, -4.0], 3, 3).unwrap(), 0.0);
        assert_eq!(m_n(&[3.0, 1.0, 2.0], 3, 3).unwrap(), 2.0);
    }

    #[test]
    fn exp_moment_decreases_to_one() {
        let t: Vec<Vec<f64>> = (0..20).map(|i| vec![if i % 3 == 0 { 1.0 } else { -0.5 }; 16]).collect();
        let mut last = f64::INFINITY;
        for tau in [2.0, 1.0, 0.5, 0.1, 0.01, 1e-6] {
            let v = exp_moment(&t, tau, 1.0, 16).unwrap();
            assert!(v >= 1.0 && v < last);
            last = v;
        }
        assert!(last - 1.0 < 1e-5);
        assert!(exp_moment(&t, 0.0, 1.0, 4).is_err());
        assert!(exp_moment(&t, 1.0, 1.5, 4).is_err());
    }

    #[test]
    fn adversarial_trace() {
        // +1 repeated n times, then -1
        let n = 8;
        let mut trace = vec![1.0; n];
        trace.extend(vec![-1.0; 12 * n - n]);
        let c = bs_recursion_check(&trace, n, 12 * n).unwrap();
        // direct evaluation: S_k = k for k ≤ n, then 2n - k
        let s = |k: usize| if k <= n { k as f64 } else { 2.0 * n as f64 - k as f64 };
        let m = |a: usize| (a..=12 * n).map(|k| s(k).abs() / k as f64).fold(0.0, f64::max);
        let cn = 3.0 * s(3 * n).abs() / (3 * n) as f64
            + 4.0 * (n..2 * n).map(|k| (s(3 * n) - s(k)).abs()).fold(0.0, f64::max) / (2 * n) as f64;
        assert!((c.m_n - m(n)).abs() < 1e-15);
        assert!((c.m_2n - m(2 * n)).abs() < 1e-15);
        assert!((c.c_n - cn).abs() < 1e-15);
        assert!(c.holds);
    }

    #[test]
    fn window_errors() {
        let t = vec![1.0; 10];
        assert!(matches!(m_n(&t, 5, 4), Err(MartingaleError::HorizonTooSmall { .. })));
        assert!(matches!(m_n(&t, 5, 11), Err(MartingaleError::HorizonExceeded { .. })));
        assert!(matches!(bs_recursion_check(&t, 4, 10), Err(MartingaleError::HorizonTooSmall { .. })));
    }

    #[test]
    fn survey_on_tower_orbits() {
        let t = polynomial_tail_schema(1.0, 200, 0.5, 0.5, 8).unwrap();
        let obs = TowerObservable::canonical(&t.schema, CanonicalKind::SymbolWeighted, 0.5).unwrap();
        let sys = TowerSystem::for_observable(t.schema.clone(), &obs);
        let mc = MonteCarlo::new(300, 1);
        let rows = bs_survey(&sys, &obs, &[4, 8], 12, &mc).unwrap();
        assert!(rows.iter().all(|r| r.failures == 0 && r.orbits == 300));
        let stats = max_norm_survey(&sys, &obs, &[1, 4, 16], 2.0, 64, &mc).unwrap();
        for w in stats.windows(2) {
            assert!(w[1].norm_m_n <= w[0].norm_m_n);
            assert!(w[1].norm_max_partial >= w[0].norm_max_partial);
        }
        assert!(stats[0].norm_m_n <= 2.0 * obs.sup_norm_bound());
        let grid = [0.05, 0.1, 0.2, 0.4, 0.8];
        let pts = exp_moment_survey(&sys, &obs, &[16, 64], 1.0, &grid, &mc).unwrap();
        let tau = scan_tau_prime(&pts, 16, 2.0).unwrap();
        assert!(grid.contains(&tau));
    }

    proptest! {
        #[test]
        fn recursion_holds_on_arbitrary_traces(
            trace in proptest::collection::vec(-1.0f64..1.0, 96..200),
            n in 1usize..8,
        ) {
            let h = (12 * n).min(trace.len());
            let c = bs_recursion_check(&trace, n, h).unwrap();
            prop_assert!(c.holds, "{:?}", c);
            prop_assert!(m_n(&trace, n, h).unwrap() >= m_n(&trace, 2 * n, h).unwrap());
        }
    }
}
