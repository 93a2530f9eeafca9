//! Towers with prescribed return-time tails, exact sampling from the tower
//! measure μ_Δ, and the canonical dynamically Hölder observables.
//!
//! Each tail builder uses one branch per return-time value `n = 1..=r_max`,
//! the smallest alphabet that realizes a prescribed tail. The law is
//! truncated at `r_max` and renormalized; the mass of the untruncated law
//! beyond `r_max` is reported with the schema.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{compensated_sum, CompensatedSum};
use crate::observable::{Observable, Regularity};
use crate::tower::{TowerError, TowerPoint, TowerSchema};

/// Default number of future symbols seen by `symbol_weighted`.
pub const DEFAULT_OBSERVABLE_DEPTH: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("parameter `{name}` = {value} is out of range")]
    ParameterOutOfRange { name: &'static str, value: f64 },
    #[error(transparent)]
    Tower(#[from] TowerError),
}

/// Requested return-time tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TailSpec {
    /// `μ_Y(R > n) ~ n^{-(β+1)}`.
    Polynomial { beta: f64, r_max: u32 },
    /// `μ_Y(R > n) ~ exp(-τ n^ω)`.
    Stretched { tau: f64, omega: f64, r_max: u32 },
}

impl TailSpec {
    pub fn build(
        &self,
        theta: f64,
        gamma: f64,
        past_depth: usize,
    ) -> Result<SyntheticTower, SamplerError> {
        match *self {
            TailSpec::Polynomial { beta, r_max } => {
                polynomial_tail_schema(beta, r_max, theta, gamma, past_depth)
            }
            TailSpec::Stretched { tau, omega, r_max } => {
                stretched_tail_schema(tau, omega, r_max, theta, gamma, past_depth)
            }
        }
    }
}

/// A schema built from a [`TailSpec`] plus its truncation diagnostics.
#[derive(Debug, Clone)]
pub struct SyntheticTower {
    pub spec: TailSpec,
    pub schema: TowerSchema,
    /// Mass of the untruncated law on `{R > r_max}`.
    pub truncated_mass: f64,
    /// Largest return time actually present (below `r_max` only if the
    /// remaining probabilities underflow to zero).
    pub r_max_effective: u32,
}

impl SyntheticTower {
    /// `μ_Y(R > n)` of the truncated law, summed from the smallest terms up.
    pub fn tail(&self, n: u32) -> f64 {
        let branches = self.schema.branches();
        let mut acc = CompensatedSum::new();
        for b in branches.iter().rev() {
            if b.return_time <= n {
                break;
            }
            acc.add(b.prob);
        }
        acc.value()
    }

    /// Closed-form value of the truncated tail `μ_Y(R > n)`.
    pub fn tail_closed_form(&self, n: u32) -> f64 {
        let r_max = self.r_max_effective;
        if n >= r_max {
            return 0.0;
        }
        match self.spec {
            TailSpec::Polynomial { beta, .. } => {
                let s = beta + 2.0;
                let total = zeta_tail(s, 0) - zeta_tail(s, r_max);
                (zeta_tail(s, n) - zeta_tail(s, r_max)) / total
            }
            TailSpec::Stretched { tau, omega, .. } => {
                let cut = (-tau * (r_max as f64 + 1.0).powf(omega)).exp();
                let total = (-tau).exp() - cut;
                ((-tau * (n as f64 + 1.0).powf(omega)).exp() - cut) / total
            }
        }
    }
}

/// `Σ_{k > n} k^{-s}` for `s > 1`: direct summation up to a cutoff, then
/// Euler–Maclaurin.
pub fn zeta_tail(s: f64, n: u32) -> f64 {
    assert!(s > 1.0);
    let m = (n as u64 + 1).max(64);
    let mut acc = CompensatedSum::new();
    // Σ_{k=m}^∞ k^{-s} via Euler–Maclaurin at m
    let mf = m as f64;
    let f = mf.powf(-s);
    let d1 = -s * mf.powf(-s - 1.0);
    let d3 = -s * (s + 1.0) * (s + 2.0) * mf.powf(-s - 3.0);
    let d5 = -s * (s + 1.0) * (s + 2.0) * (s + 3.0) * (s + 4.0) * mf.powf(-s - 5.0);
    acc.add(d5 / 30240.0 * -1.0);
    acc.add(d3 / 720.0);
    acc.add(-d1 / 12.0);
    acc.add(f / 2.0);
    acc.add(mf.powf(1.0 - s) / (s - 1.0));
    // terms n+1 ..= m-1, smallest first
    for k in ((n as u64 + 1)..m).rev() {
        acc.add((k as f64).powf(-s));
    }
    acc.value()
}

fn check_common(r_max: u32, theta: f64, gamma: f64) -> Result<(), SamplerError> {
    if r_max < 2 {
        return Err(SamplerError::ParameterOutOfRange { name: "r_max", value: r_max as f64 });
    }
    if !(theta > 0.0 && theta < 1.0) {
        return Err(SamplerError::ParameterOutOfRange { name: "theta", value: theta });
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(SamplerError::ParameterOutOfRange { name: "gamma", value: gamma });
    }
    Ok(())
}

fn normalized_branches(weights: &[f64]) -> Vec<(f64, i64)> {
    let z = compensated_sum(weights);
    weights
        .iter()
        .enumerate()
        .map(|(i, w)| (w / z, i as i64 + 1))
        .collect()
}

/// Tower with `p_n ∝ n^{-(β+2)}`, so `μ_Y(R > n) ~ n^{-(β+1)}`.
pub fn polynomial_tail_schema(
    beta: f64,
    r_max: u32,
    theta: f64,
    gamma: f64,
    past_depth: usize,
) -> Result<SyntheticTower, SamplerError> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(SamplerError::ParameterOutOfRange { name: "beta", value: beta });
    }
    check_common(r_max, theta, gamma)?;
    let s = beta + 2.0;
    let weights: Vec<f64> = (1..=r_max).map(|n| (n as f64).powf(-s)).collect();
    let schema = TowerSchema::new(&normalized_branches(&weights), theta, gamma, past_depth)?;
    let truncated_mass = zeta_tail(s, r_max) / zeta_tail(s, 0);
    Ok(SyntheticTower {
        spec: TailSpec::Polynomial { beta, r_max },
        schema,
        truncated_mass,
        r_max_effective: r_max,
    })
}

/// Tower with `p_n ∝ e^{-τ n^ω} - e^{-τ (n+1)^ω}`.
pub fn stretched_tail_schema(
    tau: f64,
    omega: f64,
    r_max: u32,
    theta: f64,
    gamma: f64,
    past_depth: usize,
) -> Result<SyntheticTower, SamplerError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(SamplerError::ParameterOutOfRange { name: "tau", value: tau });
    }
    if !(omega > 0.0 && omega <= 1.0) {
        return Err(SamplerError::ParameterOutOfRange { name: "omega", value: omega });
    }
    check_common(r_max, theta, gamma)?;
    let mut weights = Vec::with_capacity(r_max as usize);
    for n in 1..=r_max {
        let nf = n as f64;
        let n_pow = nf.powf(omega);
        // (n+1)^ω - n^ω without cancellation
        let gap = n_pow * (omega * (1.0 / nf).ln_1p()).exp_m1();
        let w = (-tau * n_pow).exp() * -(-tau * gap).exp_m1();
        if w <= 0.0 || !w.is_normal() {
            break;
        }
        weights.push(w);
    }
    if weights.len() < 2 {
        return Err(SamplerError::ParameterOutOfRange { name: "tau", value: tau });
    }
    let r_eff = weights.len() as u32;
    let schema = TowerSchema::new(&normalized_branches(&weights), theta, gamma, past_depth)?;
    let truncated_mass = (-tau * ((r_eff as f64 + 1.0).powf(omega) - 1.0)).exp();
    Ok(SyntheticTower {
        spec: TailSpec::Stretched { tau, omega, r_max },
        schema,
        truncated_mass,
        r_max_effective: r_eff,
    })
}

/// Exact draw from μ_Δ with a single known future symbol.
pub fn sample_mu_delta<R: Rng + ?Sized>(schema: &TowerSchema, rng: &mut R) -> TowerPoint {
    sample_mu_delta_with_future(schema, rng, 1)
}

/// Exact draw from μ_Δ: the column with probability `p_i R_i / Σ p_j R_j`, a
/// uniform level in it, and i.i.d. `p` symbols for the past and for the
/// remaining `future_len - 1` future symbols.
pub fn sample_mu_delta_with_future<R: Rng + ?Sized>(
    schema: &TowerSchema,
    rng: &mut R,
    future_len: usize,
) -> TowerPoint {
    let column = schema.draw_column(rng);
    let r = schema.return_time(column);
    let level = if r > 1 { rng.random_range(0..r) } else { 0 };
    let past: Vec<u32> = (0..schema.past_depth()).map(|_| schema.draw_branch(rng)).collect();
    let mut point = TowerPoint {
        past: past.into(),
        future: std::iter::once(column).collect(),
        level,
    };
    schema.ensure_future(&mut point, future_len.max(1), rng);
    point
}

/// The three canonical observable families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CanonicalKind {
    /// `Σ_{k≤depth} θ^k a(future[k]) + Σ_{k=1}^{K} γ^k a(past[k])`, `a(i) = (-1)^i`.
    SymbolWeighted,
    /// `1{level = 0}`.
    LevelIndicator,
    /// `a(past[1])`, a function of the stable coordinate only.
    PastSensitive,
}

/// A centered observable on tower points.
#[derive(Debug, Clone)]
pub struct TowerObservable {
    kind: CanonicalKind,
    theta_obs: f64,
    depth: usize,
    symbol_values: Vec<f64>,
    future_coeffs: Vec<f64>,
    past_coeffs: Vec<f64>,
    mean: f64,
    bound: f64,
}

impl TowerObservable {
    /// Canonical observable with `a(i) = (-1)^i` and the default depth.
    pub fn canonical(
        schema: &TowerSchema,
        kind: CanonicalKind,
        theta_obs: f64,
    ) -> Result<Self, SamplerError> {
        Self::with_depth(schema, kind, theta_obs, DEFAULT_OBSERVABLE_DEPTH)
    }

    pub fn with_depth(
        schema: &TowerSchema,
        kind: CanonicalKind,
        theta_obs: f64,
        depth: usize,
    ) -> Result<Self, SamplerError> {
        let values = (0..schema.n_branches())
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        Self::with_symbol_values(schema, kind, theta_obs, depth, values)
    }

    /// General form with arbitrary per-branch values `a(i)`.
    pub fn with_symbol_values(
        schema: &TowerSchema,
        kind: CanonicalKind,
        theta_obs: f64,
        depth: usize,
        symbol_values: Vec<f64>,
    ) -> Result<Self, SamplerError> {
        if !(theta_obs > 0.0 && theta_obs < 1.0) {
            return Err(SamplerError::ParameterOutOfRange { name: "theta_obs", value: theta_obs });
        }
        if symbol_values.len() != schema.n_branches() {
            return Err(SamplerError::ParameterOutOfRange {
                name: "symbol_values.len",
                value: symbol_values.len() as f64,
            });
        }
        if kind == CanonicalKind::PastSensitive && schema.past_depth() == 0 {
            return Err(SamplerError::ParameterOutOfRange { name: "past_depth", value: 0.0 });
        }
        let k = schema.past_depth();
        let probs: Vec<f64> = schema.branches().iter().map(|b| b.prob).collect();
        let p_dot_a = dot(&probs, &symbol_values);
        let w_dot_a = dot(schema.column_weights(), &symbol_values);
        let a_max = symbol_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let a_min = symbol_values.iter().copied().fold(f64::INFINITY, f64::min);
        let (future_coeffs, past_coeffs, mean, raw_lo, raw_hi) = match kind {
            CanonicalKind::SymbolWeighted => {
                let fc: Vec<f64> = (0..=depth).map(|j| theta_obs.powi(j as i32)).collect();
                let pc: Vec<f64> = (1..=k).map(|j| schema.gamma().powi(j as i32)).collect();
                let mut mean = CompensatedSum::new();
                mean.add(w_dot_a);
                mean.add(compensated_sum(&fc[1..]) * p_dot_a);
                mean.add(compensated_sum(&pc) * p_dot_a);
                let total = compensated_sum(&fc) + compensated_sum(&pc);
                (fc, pc, mean.value(), total * a_min.min(0.0), total * a_max.max(0.0))
            }
            CanonicalKind::LevelIndicator => {
                (vec![], vec![], 1.0 / schema.mean_return_time(), 0.0, 1.0)
            }
            CanonicalKind::PastSensitive => (vec![], vec![], p_dot_a, a_min, a_max),
        };
        let bound = (raw_hi - mean).abs().max((raw_lo - mean).abs());
        Ok(Self {
            kind,
            theta_obs,
            depth: if kind == CanonicalKind::SymbolWeighted { depth } else { 0 },
            symbol_values,
            future_coeffs,
            past_coeffs,
            mean,
            bound,
        })
    }

    pub fn kind(&self) -> CanonicalKind {
        self.kind
    }

    pub fn theta_obs(&self) -> f64 {
        self.theta_obs
    }

    /// Number of future symbols beyond the current one the evaluator reads.
    pub fn future_lookahead(&self) -> usize {
        self.depth
    }

    /// Number of past symbols the evaluator reads.
    pub fn past_dependence(&self) -> usize {
        match self.kind {
            CanonicalKind::SymbolWeighted => self.past_coeffs.len(),
            CanonicalKind::LevelIndicator => 0,
            CanonicalKind::PastSensitive => 1,
        }
    }

    pub fn symbol_values(&self) -> &[f64] {
        &self.symbol_values
    }

    /// Raw (uncentered) value.
    #[inline]
    pub fn raw(&self, x: &TowerPoint) -> f64 {
        match self.kind {
            CanonicalKind::SymbolWeighted => {
                debug_assert!(x.future.len() > self.depth, "future window shorter than lookahead");
                let mut v = 0.0;
                for (c, &b) in self.future_coeffs.iter().zip(x.future.iter()) {
                    v += c * self.symbol_values[b as usize];
                }
                for (c, &b) in self.past_coeffs.iter().zip(x.past.iter()) {
                    v += c * self.symbol_values[b as usize];
                }
                v
            }
            CanonicalKind::LevelIndicator => (x.level == 0) as u8 as f64,
            CanonicalKind::PastSensitive => self.symbol_values[x.past[0] as usize],
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).collect::<CompensatedSum>().value()
}

/// Builds one of the canonical observables with the default depth.
pub fn canonical_observable(
    schema: &TowerSchema,
    kind: CanonicalKind,
    theta_obs: f64,
) -> Result<TowerObservable, SamplerError> {
    TowerObservable::canonical(schema, kind, theta_obs)
}

impl Observable<TowerPoint> for TowerObservable {
    #[inline]
    fn eval(&self, x: &TowerPoint) -> f64 {
        self.raw(x) - self.mean
    }

    fn declared_mean(&self) -> f64 {
        self.mean
    }

    fn sup_norm_bound(&self) -> f64 {
        self.bound
    }

    fn regularity(&self) -> Regularity {
        Regularity::DynamicallyHoelder {
            theta: self.theta_obs,
            depth: self.depth,
        }
    }

    fn describe(&self) -> String {
        match self.kind {
            CanonicalKind::SymbolWeighted => {
                format!("symbol_weighted(theta_obs={}, depth={})", self.theta_obs, self.depth)
            }
            CanonicalKind::LevelIndicator => "level_indicator".to_string(),
            CanonicalKind::PastSensitive => "past_sensitive".to_string(),
        }
    }

    fn column_invariant(&self) -> bool {
        self.kind != CanonicalKind::LevelIndicator
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::chi_square_goodness_of_fit;
    use crate::rng::orbit_stream;

    fn two_branch() -> TowerSchema {
        TowerSchema::new(&[(0.5, 1), (0.5, 2)], 0.5, 0.5, 16).unwrap()
    }

    #[test]
    fn polynomial_probabilities_normalized() {
        for beta in [0.5, 1.0, 2.5] {
            let t = polynomial_tail_schema(beta, 500, 0.5, 0.5, 4).unwrap();
            let sum = compensated_sum(&t.schema.branches().iter().map(|b| b.prob).collect::<Vec<_>>());
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(t.truncated_mass > 0.0 && t.truncated_mass < 1e-3);
        }
    }

    #[test]
    fn polynomial_tail_scales_like_n_squared() {
        // direct summation oracle over p_k, independent of the schema code
        let r_max = 10_000u32;
        let t = polynomial_tail_schema(1.0, r_max, 0.5, 0.5, 4).unwrap();
        let w: Vec<f64> = (1..=r_max).map(|k| (k as f64).powi(-3)).collect();
        let z: f64 = w.iter().rev().sum();
        let tail = |n: u32| w[n as usize..].iter().rev().sum::<f64>() / z;
        let base = tail(1);
        let mut worst: f64 = 0.0;
        for n in 1..=(r_max / 10) {
            let ratio = tail(n) * (n as f64).powi(2) / base;
            assert!((0.5..=2.5).contains(&ratio), "n={n} ratio={ratio}");
            worst = worst.max(ratio);
            assert!((t.tail(n) - tail(n)).abs() < 1e-12);
        }
        // limit of the ratio is 1/(2(ζ(3)-1)) ≈ 2.47
        assert!(worst > 2.4);
    }

    #[test]
    fn invalid_tail_parameters() {
        assert!(matches!(
            polynomial_tail_schema(0.0, 100, 0.5, 0.5, 4),
            Err(SamplerError::ParameterOutOfRange { name: "beta", .. })
        ));
        assert!(matches!(
            stretched_tail_schema(1.0, 1.5, 100, 0.5, 0.5, 4),
            Err(SamplerError::ParameterOutOfRange { name: "omega", .. })
        ));
        assert!(polynomial_tail_schema(1.0, 1, 0.5, 0.5, 4).is_err());
    }

    #[test]
    fn stretched_tail_is_geometric_for_omega_one() {
        let r_max = 600;
        let t = stretched_tail_schema(1.0, 1.0, r_max, 0.5, 0.5, 4).unwrap();
        for n in 1..(r_max / 2) {
            let slope = t.tail(n + 1).ln() - t.tail(n).ln();
            assert!((slope + 1.0).abs() < 1e-6, "n={n} slope={slope}");
        }
    }

    #[test]
    fn stretched_tail_formula_value() {
        let t = stretched_tail_schema(1.0, 0.5, 2000, 0.5, 0.5, 4).unwrap();
        let z = (-1.0f64).exp() - (-(2001f64).sqrt()).exp();
        let expected = ((-(101f64).sqrt()).exp() - (-(2001f64).sqrt()).exp()) / z;
        assert!((t.tail(100) - expected).abs() < 1e-14);
    }

    #[test]
    fn tail_laws_match_closed_forms() {
        let towers = [
            polynomial_tail_schema(1.0, 2000, 0.5, 0.5, 4).unwrap(),
            polynomial_tail_schema(0.3, 300, 0.5, 0.5, 4).unwrap(),
            stretched_tail_schema(1.0, 1.0, 400, 0.5, 0.5, 4).unwrap(),
            stretched_tail_schema(0.7, 0.4, 1500, 0.5, 0.5, 4).unwrap(),
        ];
        for t in &towers {
            for n in 0..t.r_max_effective {
                let (a, b) = (t.tail(n), t.tail_closed_form(n));
                assert!((a - b).abs() < 1e-10, "{:?} n={n}: {a} vs {b}", t.spec);
            }
        }
    }

    #[test]
    fn column_frequencies_follow_weights() {
        let s = two_branch();
        let mut rng = orbit_stream(11, 0);
        let mut counts = [0u64; 2];
        let mut levels = [0u64; 2];
        for _ in 0..200_000 {
            let p = sample_mu_delta(&s, &mut rng);
            counts[p.branch() as usize] += 1;
            if p.branch() == 1 {
                levels[p.level() as usize] += 1;
            }
        }
        assert!(chi_square_goodness_of_fit(&counts, &[1.0 / 3.0, 2.0 / 3.0]).p_value > 0.001);
        assert!(chi_square_goodness_of_fit(&levels, &[0.5, 0.5]).p_value > 0.001);
    }

    #[test]
    fn degenerate_tower_samples_its_only_cell() {
        let s = TowerSchema::new(&[(1.0, 1)], 0.5, 0.5, 3).unwrap();
        let mut rng = orbit_stream(1, 1);
        for _ in 0..100 {
            let p = sample_mu_delta(&s, &mut rng);
            assert_eq!((p.branch(), p.level()), (0, 0));
        }
    }

    #[test]
    fn level_indicator_mean() {
        let s = two_branch();
        let obs = TowerObservable::canonical(&s, CanonicalKind::LevelIndicator, 0.5).unwrap();
        assert!((obs.declared_mean() - 2.0 / 3.0).abs() < 1e-15);
        assert!((obs.sup_norm_bound() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_symbol_values_give_zero_observable() {
        let s = two_branch();
        let obs = TowerObservable::with_symbol_values(&s, CanonicalKind::SymbolWeighted, 0.5, 3, vec![0.0; 2])
            .unwrap();
        let mut rng = orbit_stream(2, 2);
        for _ in 0..50 {
            let p = sample_mu_delta_with_future(&s, &mut rng, 4);
            assert_eq!(obs.eval(&p), 0.0);
        }
        assert_eq!(obs.sup_norm_bound(), 0.0);
    }

    #[test]
    fn symbol_weighted_is_dynamically_hoelder() {
        let s = TowerSchema::new(&[(0.3, 1), (0.3, 2), (0.4, 3)], 0.5, 0.6, 8).unwrap();
        let theta_obs = 0.4;
        let depth = 10;
        let obs = TowerObservable::with_depth(&s, CanonicalKind::SymbolWeighted, theta_obs, depth).unwrap();
        let c_future = 2.0 / (1.0 - theta_obs);
        let c_past = 2.0 / (1.0 - s.gamma());
        let mut rng = orbit_stream(5, 0);
        for trial in 0..2000 {
            let x = sample_mu_delta_with_future(&s, &mut rng, depth + 1);
            let sep = trial % (depth + 1);
            // same past, futures agree on 0..sep
            let mut y = x.clone();
            for k in sep..=depth {
                y.future[k] = s.draw_branch(&mut rng);
            }
            let dtheta = theta_obs.powi(sep as i32);
            assert!((obs.eval(&x) - obs.eval(&y)).abs() <= c_future * dtheta + 1e-12);
            // same future, pasts agree on the first `j` symbols
            let j = trial % (s.past_depth() + 1);
            let mut z = x.clone();
            for k in j..s.past_depth() {
                z.past[k] = s.draw_branch(&mut rng);
            }
            let stable = s.gamma().powi(j as i32 + 1);
            assert!((obs.eval(&x) - obs.eval(&z)).abs() <= c_past * stable + 1e-12);
        }
    }

    #[test]
    fn observables_respect_sup_norm_bound() {
        let t = polynomial_tail_schema(1.0, 100, 0.5, 0.5, 8).unwrap();
        let mut rng = orbit_stream(8, 0);
        for kind in [CanonicalKind::SymbolWeighted, CanonicalKind::LevelIndicator, CanonicalKind::PastSensitive] {
            let obs = TowerObservable::canonical(&t.schema, kind, 0.5).unwrap();
            for _ in 0..1000 {
                let p = sample_mu_delta_with_future(&t.schema, &mut rng, obs.future_lookahead() + 1);
                assert!(obs.eval(&p).abs() <= obs.sup_norm_bound() + 1e-12);
            }
        }
    }

    #[test]
    fn theta_obs_must_be_in_unit_interval() {
        let s = two_branch();
        assert!(TowerObservable::canonical(&s, CanonicalKind::LevelIndicator, 1.0).is_err());
        assert!(TowerObservable::canonical(&s, CanonicalKind::SymbolWeighted, 0.0).is_err());
    }
}
