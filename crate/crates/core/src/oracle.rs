//! Exact values on small towers by enumerating cylinder sets.
//!
//! A cylinder fixes a level, finitely many future symbols (the first one is
//! the column) and finitely many past symbols. Its μ_Δ mass is the product
//! of the base probabilities of the listed symbols divided by `Σ_j p_j R_j`.
//! Orbit enumerations branch on a future symbol only when the dynamics or an
//! observable first needs it, so every leaf is a cylinder on which the whole
//! orbit segment is deterministic.

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::numerics::{prefix_sums_into, CompensatedSum};
use crate::observable::Observable;
use crate::sampler::{CanonicalKind, TowerObservable};
use crate::statistics::{dual_power, exceeds, normalized_abs_sums};
use crate::tower::{TowerPoint, TowerSchema};

/// Largest number of cylinders or orbit leaves an enumeration may visit.
pub const ENUMERATION_BUDGET: u64 = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("enumeration needs more than {budget} cylinders")]
    EnumerationTooLarge { budget: u64 },
    #[error("observable reads {needed} symbols but only {available} are enumerated")]
    DepthInsufficient { needed: usize, available: usize },
    #[error("parameter `{name}` = {value} is out of range")]
    ParameterOutOfRange { name: &'static str, value: f64 },
}

/// One cylinder and its exact mass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CylinderWeight {
    /// Most recent first.
    pub past: Vec<u32>,
    pub future: Vec<u32>,
    pub level: u32,
    pub weight: f64,
}

impl CylinderWeight {
    /// A tower point inside the cylinder; past symbols the cylinder leaves
    /// free are set to 0.
    pub fn point(&self, schema: &TowerSchema) -> TowerPoint {
        let mut past = self.past.clone();
        past.resize(schema.past_depth().max(past.len()), 0);
        past.truncate(schema.past_depth());
        TowerPoint { past: past.into(), future: self.future.iter().copied().collect(), level: self.level }
    }
}

fn cylinder_count(schema: &TowerSchema, future_depth: usize, past_depth: usize) -> f64 {
    let nb = schema.n_branches() as f64;
    let heights: f64 = schema.branches().iter().map(|b| b.return_time as f64).sum();
    heights * nb.powi((future_depth - 1 + past_depth) as i32)
}

/// Every cylinder with `future_depth` future symbols and `past_depth` past
/// symbols, in lexicographic order (column, level, future, past).
pub fn enumerate_cylinders(
    schema: &TowerSchema,
    future_depth: usize,
    past_depth: usize,
) -> Result<Vec<CylinderWeight>, OracleError> {
    if future_depth == 0 {
        return Err(OracleError::ParameterOutOfRange { name: "future_depth", value: 0.0 });
    }
    if cylinder_count(schema, future_depth, past_depth) > ENUMERATION_BUDGET as f64 {
        return Err(OracleError::EnumerationTooLarge { budget: ENUMERATION_BUDGET });
    }
    let nb = schema.n_branches() as u32;
    let z = schema.mean_return_time();
    let words = |len: usize| -> Vec<(Vec<u32>, f64)> {
        let mut out = vec![(Vec::new(), 1.0)];
        for _ in 0..len {
            let mut next = Vec::with_capacity(out.len() * nb as usize);
            for (w, m) in &out {
                for b in 0..nb {
                    let mut v = w.clone();
                    v.push(b);
                    next.push((v, m * schema.prob(b)));
                }
            }
            out = next;
        }
        out
    };
    let tails = words(future_depth - 1);
    let pasts = words(past_depth);
    let mut out = Vec::new();
    for col in 0..nb {
        for level in 0..schema.return_time(col) {
            for (tail, mt) in &tails {
                for (past, mp) in &pasts {
                    let mut future = vec![col];
                    future.extend_from_slice(tail);
                    out.push(CylinderWeight {
                        past: past.clone(),
                        future,
                        level,
                        weight: schema.prob(col) * mt * mp / z,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Exact `∫ φ dμ_Δ` of the centered observable over a cylinder partition.
pub fn exact_mean(
    schema: &TowerSchema,
    observable: &TowerObservable,
    future_depth: usize,
    past_depth: usize,
) -> Result<f64, OracleError> {
    if future_depth < observable.future_lookahead() + 1 {
        return Err(OracleError::DepthInsufficient {
            needed: observable.future_lookahead() + 1,
            available: future_depth,
        });
    }
    if past_depth < observable.past_dependence() {
        return Err(OracleError::DepthInsufficient { needed: observable.past_dependence(), available: past_depth });
    }
    let cyl = enumerate_cylinders(schema, future_depth, past_depth)?;
    Ok(cyl.iter().map(|c| c.weight * observable.eval(&c.point(schema))).collect::<CompensatedSum>().value())
}

/// Pushes a cylinder partition forward `steps` times and aggregates the mass
/// by `(column, level)`. Cylinders must know `steps + 1` future symbols.
pub fn pushforward_marginal(
    schema: &TowerSchema,
    cylinders: &[CylinderWeight],
    steps: usize,
) -> Result<Vec<Vec<f64>>, OracleError> {
    let mut out: Vec<Vec<f64>> =
        schema.branches().iter().map(|b| vec![0.0; b.return_time as usize]).collect();
    for c in cylinders {
        if c.future.len() < steps + 1 {
            return Err(OracleError::DepthInsufficient { needed: steps + 1, available: c.future.len() });
        }
        let mut x = c.point(schema);
        for _ in 0..steps {
            x = schema.stepped(&x).map_err(|_| OracleError::DepthInsufficient {
                needed: steps + 1,
                available: c.future.len(),
            })?;
        }
        out[x.branch() as usize][x.level() as usize] += c.weight;
    }
    Ok(out)
}

/// Depth-first enumeration of orbit segments of length `len`.
struct PathEnumerator<'a> {
    schema: &'a TowerSchema,
    observables: &'a [&'a TowerObservable],
    len: usize,
    lookahead: usize,
    leaves: u64,
}

impl PathEnumerator<'_> {
    fn run(&mut self, visit: &mut dyn FnMut(f64, &[Vec<f64>], &TowerPoint)) -> Result<u64, OracleError> {
        let past_dep = self.observables.iter().map(|o| o.past_dependence()).max().unwrap_or(0);
        let nb = self.schema.n_branches() as u32;
        let z = self.schema.mean_return_time();
        let k = self.schema.past_depth();
        let mut traces = vec![vec![0.0; self.len]; self.observables.len()];
        let n_pasts = (nb as u64).checked_pow(past_dep as u32).unwrap_or(u64::MAX);
        if n_pasts > ENUMERATION_BUDGET {
            return Err(OracleError::EnumerationTooLarge { budget: ENUMERATION_BUDGET });
        }
        for col in 0..nb {
            for level in 0..self.schema.return_time(col) {
                for code in 0..n_pasts {
                    let mut past = vec![0u32; k];
                    let mut w = self.schema.prob(col) / z;
                    let mut c = code;
                    for slot in past.iter_mut().take(past_dep) {
                        *slot = (c % nb as u64) as u32;
                        c /= nb as u64;
                        w *= self.schema.prob(*slot);
                    }
                    let mut x = TowerPoint { past: past.into(), future: [col].into_iter().collect(), level };
                    self.descend(&mut x, 0, w, &mut traces, visit)?;
                }
            }
        }
        Ok(self.leaves)
    }

    fn descend(
        &mut self,
        x: &mut TowerPoint,
        k: usize,
        weight: f64,
        traces: &mut [Vec<f64>],
        visit: &mut dyn FnMut(f64, &[Vec<f64>], &TowerPoint),
    ) -> Result<(), OracleError> {
        let at_top = x.level + 1 == self.schema.return_time(x.future[0]);
        let need = if k + 1 < self.len && at_top { (self.lookahead + 1).max(2) } else { self.lookahead + 1 };
        if x.future.len() < need {
            for b in 0..self.schema.n_branches() as u32 {
                x.future.push_back(b);
                self.descend(x, k, weight * self.schema.prob(b), traces, visit)?;
                x.future.pop_back();
            }
            return Ok(());
        }
        for (t, o) in traces.iter_mut().zip(self.observables) {
            t[k] = o.eval(x);
        }
        if k + 1 == self.len {
            self.leaves += 1;
            if self.leaves > ENUMERATION_BUDGET {
                return Err(OracleError::EnumerationTooLarge { budget: ENUMERATION_BUDGET });
            }
            visit(weight, traces, x);
            return Ok(());
        }
        let mut y = x.clone();
        self.schema.step(&mut y, &mut NeverDraw);
        self.descend(&mut y, k + 1, weight, traces, visit)
    }
}

/// The enumerator guarantees enough future symbols before every step.
struct NeverDraw;

impl rand::RngCore for NeverDraw {
    fn next_u32(&mut self) -> u32 {
        unreachable!("enumeration stepped past its known future")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("enumeration stepped past its known future")
    }
    fn fill_bytes(&mut self, _: &mut [u8]) {
        unreachable!("enumeration stepped past its known future")
    }
}

/// Calls `visit(weight, traces, endpoint)` for every cylinder on which the
/// first `len` values of each observable are determined; `traces[o][j]` is
/// `observables[o](f^j x)` and `endpoint` is `f^{len-1} x`.
pub fn enumerate_orbits(
    schema: &TowerSchema,
    observables: &[&TowerObservable],
    len: usize,
    visit: &mut dyn FnMut(f64, &[Vec<f64>], &TowerPoint),
) -> Result<u64, OracleError> {
    if len == 0 {
        return Err(OracleError::ParameterOutOfRange { name: "len", value: 0.0 });
    }
    let lookahead = observables.iter().map(|o| o.future_lookahead()).max().unwrap_or(0);
    PathEnumerator { schema, observables, len, lookahead, leaves: 0 }.run(visit)
}

/// Exact `ld(φ, ε, n)` for each `n` and `mld(φ, ε, n)` with the supremum
/// over `n ≤ k ≤ horizon`, from a single enumeration.
pub fn exact_ld_mld(
    schema: &TowerSchema,
    observable: &TowerObservable,
    epsilon: f64,
    n_list: &[u64],
    horizon: u64,
) -> Result<(Vec<f64>, Vec<f64>), OracleError> {
    if !(epsilon > 0.0) {
        return Err(OracleError::ParameterOutOfRange { name: "epsilon", value: epsilon });
    }
    if n_list.is_empty() || n_list.contains(&0) {
        return Err(OracleError::ParameterOutOfRange { name: "n", value: 0.0 });
    }
    let n_max = *n_list.iter().max().unwrap();
    if horizon < n_max {
        return Err(OracleError::ParameterOutOfRange { name: "horizon", value: horizon as f64 });
    }
    let h = horizon as usize;
    let mut ld = vec![CompensatedSum::new(); n_list.len()];
    let mut mld = vec![CompensatedSum::new(); n_list.len()];
    let (mut scratch, mut ratio) = (Vec::new(), Vec::new());
    enumerate_orbits(schema, &[observable], h, &mut |w, traces, _| {
        normalized_abs_sums(&traces[0], &mut scratch, &mut ratio);
        for (i, &n) in n_list.iter().enumerate() {
            let n = n as usize;
            if exceeds(ratio[n - 1], epsilon) {
                ld[i].add(w);
            }
            if ratio[n - 1..h].iter().any(|&r| exceeds(r, epsilon)) {
                mld[i].add(w);
            }
        }
    })?;
    Ok((ld.iter().map(|s| s.value()).collect(), mld.iter().map(|s| s.value()).collect()))
}

/// Exact `ld(φ, ε, n)`.
pub fn exact_ld(schema: &TowerSchema, observable: &TowerObservable, epsilon: f64, n: u64) -> Result<f64, OracleError> {
    Ok(exact_ld_mld(schema, observable, epsilon, &[n], n)?.0[0])
}

/// Exact `mld(φ, ε, n)` with the supremum truncated at `horizon`.
pub fn exact_mld(
    schema: &TowerSchema,
    observable: &TowerObservable,
    epsilon: f64,
    n: u64,
    horizon: u64,
) -> Result<f64, OracleError> {
    Ok(exact_ld_mld(schema, observable, epsilon, &[n], horizon)?.1[0])
}

/// Exact covariance `E[φ · ψ∘f^n] - E[φ] E[ψ∘f^n]` (signed).
pub fn exact_correlation(
    schema: &TowerSchema,
    phi: &TowerObservable,
    psi: &TowerObservable,
    n: u64,
) -> Result<f64, OracleError> {
    let n = n as usize;
    let (mut a, mut b, mut ab) = (CompensatedSum::new(), CompensatedSum::new(), CompensatedSum::new());
    enumerate_orbits(schema, &[phi, psi], n + 1, &mut |w, t, _| {
        a.add(w * t[0][0]);
        b.add(w * t[1][n]);
        ab.add(w * t[0][0] * t[1][n]);
    })?;
    Ok(ab.value() - a.value() * b.value())
}

/// Deterministic inverse step on a point whose past is long enough.
fn step_back_exact(schema: &TowerSchema, x: &mut TowerPoint) {
    if x.level > 0 {
        x.level -= 1;
        return;
    }
    let prev = x.past.pop_front().expect("enumerated past covers every backward step");
    x.future.push_front(prev);
    x.level = schema.return_time(prev) - 1;
}

/// `c(z) = E(φ∘f^{-n} | F_0)(z)` for the stable leaf of `(level, future)`,
/// summing over every past of length `n + past_dependence`.
fn exact_cond_exp(
    schema: &TowerSchema,
    observable: &TowerObservable,
    level: u32,
    future: &[u32],
    n: usize,
) -> Result<f64, OracleError> {
    let nb = schema.n_branches() as u64;
    let len = n + observable.past_dependence();
    let count = nb.checked_pow(len as u32).filter(|&c| c <= ENUMERATION_BUDGET);
    let count = count.ok_or(OracleError::EnumerationTooLarge { budget: ENUMERATION_BUDGET })?;
    let mut acc = CompensatedSum::new();
    for code in 0..count {
        let mut c = code;
        let mut w = 1.0;
        let past: Vec<u32> = (0..len)
            .map(|_| {
                let b = (c % nb) as u32;
                c /= nb;
                w *= schema.prob(b);
                b
            })
            .collect();
        let mut x = TowerPoint { past: past.into(), future: future.iter().copied().collect(), level };
        for _ in 0..n {
            step_back_exact(schema, &mut x);
        }
        acc.add(w * observable.eval(&x));
    }
    Ok(acc.value())
}

/// Exact sides of the duality identity: `lhs = Σ_z μ(z) |c(z)|^p` and
/// `rhs = Σ_x μ(x) φ(x) ψ(c(f^n x))` with `ψ(c) = |c|^{p-1} sgn(c)`.
pub fn exact_duality(
    schema: &TowerSchema,
    observable: &TowerObservable,
    n: u64,
    p: f64,
) -> Result<(f64, f64), OracleError> {
    if !(p >= 1.0) {
        return Err(OracleError::ParameterOutOfRange { name: "p", value: p });
    }
    let n = n as usize;
    let d = observable.future_lookahead();
    let mut memo: HashMap<(u32, Vec<u32>), f64> = HashMap::new();
    let mut c_of = |level: u32, future: &[u32]| -> Result<f64, OracleError> {
        let key = (level, future[..=d].to_vec());
        if let Some(&v) = memo.get(&key) {
            return Ok(v);
        }
        let v = exact_cond_exp(schema, observable, level, &key.1, n)?;
        memo.insert(key, v);
        Ok(v)
    };
    let mut lhs = CompensatedSum::new();
    for cyl in enumerate_cylinders(schema, d + 1, 0)? {
        let c = c_of(cyl.level, &cyl.future)?;
        lhs.add(cyl.weight * c.abs().powf(p));
    }
    let mut rhs = CompensatedSum::new();
    let mut failure = None;
    enumerate_orbits(schema, &[observable], n + 1, &mut |w, t, end| {
        if failure.is_some() {
            return;
        }
        match c_of(end.level, &end.future.iter().copied().collect::<Vec<_>>()) {
            Ok(c) => rhs.add(w * t[0][0] * dual_power(c, p)),
            Err(e) => failure = Some(e),
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok((lhs.value(), rhs.value()))
}

/// The two-branch fixture tower `{(0.5, 1), (0.5, 2)}`.
pub fn fixture_schema(past_depth: usize) -> TowerSchema {
    TowerSchema::new(&[(0.5, 1), (0.5, 2)], 0.5, 0.5, past_depth).expect("fixture schema is valid")
}

/// One exact value with the inputs that produced it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixtureValue {
    pub name: String,
    pub inputs: serde_json::Value,
    pub value: f64,
}

/// Exact values on the fixture tower with the level indicator: LD at
/// `n ∈ {2,4,8}` (ε = 1/4), MLD with horizon 12 and the covariance at
/// `n ∈ {0,…,8}`.
pub fn fixture_suite() -> Result<Vec<FixtureValue>, OracleError> {
    let schema = fixture_schema(16);
    let obs = TowerObservable::canonical(&schema, CanonicalKind::LevelIndicator, 0.5)
        .expect("fixture observable is valid");
    let eps = 0.25;
    let ns = [2u64, 4, 8];
    let (ld, mld) = exact_ld_mld(&schema, &obs, eps, &ns, 12)?;
    let mut out = Vec::new();
    for (i, &n) in ns.iter().enumerate() {
        out.push(FixtureValue {
            name: "ld".into(),
            inputs: serde_json::json!({"n": n, "epsilon": eps}),
            value: ld[i],
        });
        out.push(FixtureValue {
            name: "mld".into(),
            inputs: serde_json::json!({"n": n, "epsilon": eps, "horizon": 12}),
            value: mld[i],
        });
    }
    for n in 0..=8u64 {
        out.push(FixtureValue {
            name: "corr".into(),
            inputs: serde_json::json!({"n": n}),
            value: exact_correlation(&schema, &obs, &obs, n)?,
        });
    }
    Ok(out)
}

/// Exact partial sums along every enumerated orbit, for tests that need the
/// full distribution of `φ_n`.
pub fn exact_sum_distribution(
    schema: &TowerSchema,
    observable: &TowerObservable,
    n: usize,
) -> Result<Vec<(f64, f64)>, OracleError> {
    let mut out = Vec::new();
    let mut sums = Vec::new();
    enumerate_orbits(schema, &[observable], n, &mut |w, t, _| {
        prefix_sums_into(&t[0], &mut sums);
        out.push((w, sums[n]));
    })?;
    Ok(out)
}
