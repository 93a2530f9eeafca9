//! Experiment runner: configuration, dispatch, and result files.
//!
//! A run reads an [`ExperimentConfig`] (TOML), evaluates one functional over
//! a list of `n`, and writes `<functional>.csv` (`n,value,stderr,samples`)
//! next to `<functional>.json`, an envelope holding the full config, its
//! hash, the seed and the truncation diagnostics.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::billiards::{billiard_observable, BilliardObservableKind, BilliardSystem, DomainKind};
use crate::martingale::{bs_survey, exp_moment_survey, max_norm_survey, MartingaleError};
use crate::observable::Observable;
use crate::oracle::{exact_correlation, exact_duality, exact_ld_mld, OracleError};
use crate::ratefit::{
    fit_polynomial_rate_with, fit_stretched_rate_with, fit_tau_prime, FitOptions, RateFitError, RateModel,
};
use crate::sampler::{CanonicalKind, SamplerError, TailSpec, TowerObservable, DEFAULT_OBSERVABLE_DEPTH};
use crate::statistics::{
    cond_exp_future_residual, cond_exp_past_norm, duality_check, estimate_correlation, estimate_ld_mld,
    stable_diameter_sum, CondExpSettings, DecayEstimate, DecayPoint, EstimateMeta, MonteCarlo, StatsError,
    DEFAULT_INNER_SAMPLES,
};
use crate::system::{DynamicalSystem, TowerSystem};
use crate::tower::{SchemaConfig, TowerError, TowerSchema};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "TOWERLAB_OUT";
/// Output directory when neither `--out` nor [`OUT_DIR_ENV`] is given.
pub const DEFAULT_OUT_DIR: &str = "towerlab-out";
/// `|z|` above which an oracle comparison fails.
pub const Z_THRESHOLD: f64 = 3.0;
/// `horizon / n` for `bs_check` when the config gives none.
pub const DEFAULT_HORIZON_FACTOR: u64 = 12;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid config: `{field}`: {message}")]
    ConfigInvalid { field: String, message: String },
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Martingale(#[from] MartingaleError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Fit(#[from] RateFitError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Tower(#[from] TowerError),
    #[error(transparent)]
    Billiard(#[from] crate::billiards::BilliardError),
}

impl RunError {
    fn invalid(field: &str, message: impl Into<String>) -> Self {
        RunError::ConfigInvalid { field: field.to_string(), message: message.into() }
    }

    /// 2 for configuration errors, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::ConfigInvalid { .. } => 2,
            _ => 3,
        }
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> RunError {
    let context = context.into();
    move |source| RunError::Io { context, source }
}

fn default_theta() -> f64 {
    0.5
}

fn default_past_depth() -> usize {
    crate::tower::DEFAULT_PAST_DEPTH
}

/// Which dynamical system to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemSpec {
    /// An explicit schema.
    Tower(SchemaConfig),
    /// A schema built from a return-time tail.
    SyntheticTower {
        tail: TailSpec,
        #[serde(default = "default_theta")]
        theta: f64,
        #[serde(default = "default_theta")]
        gamma: f64,
        #[serde(default = "default_past_depth")]
        past_depth: usize,
    },
    Stadium { length: f64 },
    Semidispersing { a: f64, b: f64, r: f64 },
}

impl SystemSpec {
    fn is_tower(&self) -> bool {
        matches!(self, SystemSpec::Tower(_) | SystemSpec::SyntheticTower { .. })
    }

    fn domain(&self) -> Option<DomainKind> {
        match *self {
            SystemSpec::Stadium { length } => Some(DomainKind::Stadium { length }),
            SystemSpec::Semidispersing { a, b, r } => Some(DomainKind::Semidispersing { a, b, r }),
            _ => None,
        }
    }
}

/// A tower built from a [`SystemSpec`], with its truncation diagnostics.
#[derive(Debug, Clone)]
pub struct BuiltTower {
    pub schema: TowerSchema,
    pub tail: Option<TailSpec>,
    pub truncated_mass: f64,
    pub r_max_effective: Option<u32>,
}

/// Builds the tower of a tower-kind system spec.
pub fn build_tower(spec: &SystemSpec) -> Result<BuiltTower, RunError> {
    match spec {
        SystemSpec::Tower(cfg) => Ok(BuiltTower {
            schema: TowerSchema::from_config(cfg)?,
            tail: None,
            truncated_mass: 0.0,
            r_max_effective: None,
        }),
        SystemSpec::SyntheticTower { tail, theta, gamma, past_depth } => {
            let t = tail.build(*theta, *gamma, *past_depth)?;
            Ok(BuiltTower {
                schema: t.schema,
                tail: Some(*tail),
                truncated_mass: t.truncated_mass,
                r_max_effective: Some(t.r_max_effective),
            })
        }
        _ => Err(RunError::invalid("system.kind", "not a tower")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservableKind {
    SymbolWeighted,
    LevelIndicator,
    PastSensitive,
    CosPsi,
    SinPsi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableSpec {
    pub kind: ObservableKind,
    #[serde(default = "default_theta")]
    pub theta_obs: f64,
    #[serde(default = "default_depth")]
    pub depth: usize,
    /// Per-branch values `a(i)`; defaults to `(-1)^i`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symbol_values: Option<Vec<f64>>,
}

fn default_depth() -> usize {
    DEFAULT_OBSERVABLE_DEPTH
}

impl ObservableSpec {
    pub fn of_kind(kind: ObservableKind) -> Self {
        Self { kind, theta_obs: default_theta(), depth: default_depth(), symbol_values: None }
    }

    fn tower_observable(&self, schema: &TowerSchema) -> Result<TowerObservable, RunError> {
        let kind = match self.kind {
            ObservableKind::SymbolWeighted => CanonicalKind::SymbolWeighted,
            ObservableKind::LevelIndicator => CanonicalKind::LevelIndicator,
            ObservableKind::PastSensitive => CanonicalKind::PastSensitive,
            _ => return Err(RunError::invalid("observable.kind", "billiard observable on a tower")),
        };
        Ok(match &self.symbol_values {
            Some(v) => TowerObservable::with_symbol_values(schema, kind, self.theta_obs, self.depth, v.clone())?,
            None => TowerObservable::with_depth(schema, kind, self.theta_obs, self.depth)?,
        })
    }

    fn billiard_kind(&self) -> Result<BilliardObservableKind, RunError> {
        match self.kind {
            ObservableKind::CosPsi => Ok(BilliardObservableKind::CosPsi),
            ObservableKind::SinPsi => Ok(BilliardObservableKind::SinPsi),
            _ => Err(RunError::invalid("observable.kind", "tower observable on a billiard")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Functional {
    Ld,
    Mld,
    Corr,
    CondExp,
    CondExpResidual,
    StableDiam,
    Duality,
    BsCheck,
    ExpMoment,
    Maxnorm,
}

impl Functional {
    pub fn name(self) -> &'static str {
        match self {
            Functional::Ld => "ld",
            Functional::Mld => "mld",
            Functional::Corr => "corr",
            Functional::CondExp => "cond_exp",
            Functional::CondExpResidual => "cond_exp_residual",
            Functional::StableDiam => "stable_diam",
            Functional::Duality => "duality",
            Functional::BsCheck => "bs_check",
            Functional::ExpMoment => "exp_moment",
            Functional::Maxnorm => "maxnorm",
        }
    }

    pub fn parse(s: &str) -> Result<Self, RunError> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| RunError::invalid("functional", format!("unknown functional `{s}`")))
    }

    fn tower_only(self) -> bool {
        matches!(
            self,
            Functional::CondExp | Functional::CondExpResidual | Functional::StableDiam | Functional::Duality
        )
    }
}

/// One experiment. Fields a functional does not use are ignored by it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observable: Option<ObservableSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functional: Option<Functional>,
    #[serde(default)]
    pub n_list: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_orbits: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Worker threads; 0 or absent means all cores. Does not affect results.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Past redraws for the nested estimators.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_inner: Option<usize>,
    /// Stretched exponent and `τ'` for `exp_moment`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_prime: Option<f64>,
    /// `horizon = horizon_factor · n` for `bs_check`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon_factor: Option<u64>,
}

/// Command-line values that replace config entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub functional: Option<Functional>,
    pub epsilon: Option<f64>,
    pub horizon: Option<u64>,
    pub n_list: Option<Vec<u64>>,
    pub n_orbits: Option<u64>,
    pub p: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, RunError> {
        toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let field = msg
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "<document>".to_string());
            RunError::ConfigInvalid { field, message: msg }
        })
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) {
        macro_rules! take {
            ($($f:ident),*) => {$(if let Some(v) = o.$f.clone() { self.$f = Some(v); })*};
        }
        take!(seed, threads, functional, epsilon, horizon, n_orbits, p);
        if let Some(v) = &o.n_list {
            self.n_list = v.clone();
        }
    }

    /// SHA-256 of the canonical JSON form with `threads` removed.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.threads = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&bytes).iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// The observable, defaulting to `symbol_weighted` on towers and `cos_psi`
    /// on billiards.
    pub fn observable_spec(&self) -> ObservableSpec {
        self.observable.clone().unwrap_or_else(|| {
            ObservableSpec::of_kind(if self.system.is_tower() {
                ObservableKind::SymbolWeighted
            } else {
                ObservableKind::CosPsi
            })
        })
    }

    /// Checks that every field the functional needs is present and sane.
    pub fn validate(&self) -> Result<Validated, RunError> {
        let functional = self.functional.ok_or_else(|| RunError::invalid("functional", "missing"))?;
        let seed = self.seed.ok_or_else(|| RunError::invalid("seed", "missing; a seed is mandatory"))?;
        let n_orbits = self.n_orbits.ok_or_else(|| RunError::invalid("n_orbits", "missing"))?;
        if n_orbits == 0 {
            return Err(RunError::invalid("n_orbits", "must be positive"));
        }
        if self.n_list.is_empty() {
            return Err(RunError::invalid("n_list", "empty"));
        }
        if self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(RunError::invalid("n_list", "must be strictly increasing"));
        }
        if functional != Functional::Corr && functional != Functional::CondExp && self.n_list[0] == 0 {
            return Err(RunError::invalid("n_list", "n = 0 is only allowed for corr and cond_exp"));
        }
        let need_f64 = |v: Option<f64>, name: &str| v.ok_or_else(|| RunError::invalid(name, "missing"));
        match functional {
            Functional::Ld => {
                let e = need_f64(self.epsilon, "epsilon")?;
                if !(e > 0.0) {
                    return Err(RunError::invalid("epsilon", "must be positive"));
                }
            }
            Functional::Mld => {
                let e = need_f64(self.epsilon, "epsilon")?;
                if !(e > 0.0) {
                    return Err(RunError::invalid("epsilon", "must be positive"));
                }
                let h = self.horizon.ok_or_else(|| RunError::invalid("horizon", "missing"))?;
                if h < *self.n_list.last().unwrap() {
                    return Err(RunError::invalid("horizon", "smaller than the largest n"));
                }
            }
            Functional::Maxnorm => {
                if need_f64(self.p, "p")? < 1.0 {
                    return Err(RunError::invalid("p", "must be at least 1"));
                }
                if self.horizon.is_some_and(|h| h < *self.n_list.last().unwrap()) {
                    return Err(RunError::invalid("horizon", "smaller than the largest n"));
                }
            }
            Functional::CondExp | Functional::CondExpResidual | Functional::Duality => {
                if need_f64(self.p, "p")? < 1.0 {
                    return Err(RunError::invalid("p", "must be at least 1"));
                }
            }
            Functional::ExpMoment => {
                let w = need_f64(self.omega, "omega")?;
                if !(w > 0.0 && w <= 1.0) {
                    return Err(RunError::invalid("omega", "must lie in (0, 1]"));
                }
                if !(need_f64(self.tau_prime, "tau_prime")? > 0.0) {
                    return Err(RunError::invalid("tau_prime", "must be positive"));
                }
            }
            Functional::BsCheck => {
                if self.horizon_factor.is_some_and(|f| f < 3) {
                    return Err(RunError::invalid("horizon_factor", "must be at least 3"));
                }
            }
            Functional::Corr | Functional::StableDiam => {}
        }
        if functional.tower_only() && !self.system.is_tower() {
            return Err(RunError::invalid("functional", format!("{} needs a tower system", functional.name())));
        }
        if self.m_inner.is_some_and(|m| m < 2) {
            return Err(RunError::invalid("m_inner", "must be at least 2"));
        }
        Ok(Validated { functional, seed, n_orbits })
    }
}

/// Fields [`ExperimentConfig::validate`] guarantees.
#[derive(Debug, Clone, Copy)]
pub struct Validated {
    pub functional: Functional,
    pub seed: u64,
    pub n_orbits: u64,
}

/// Everything a run produces.
#[derive(Debug, Clone, Serialize)]
pub struct ResultEnvelope {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub seed: u64,
    pub functional: String,
    pub system: String,
    pub observable: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tail: Option<TailSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_max_effective: Option<u32>,
    pub truncated_mass: f64,
    pub discarded_fraction: f64,
    pub horizon_sensitivity: Vec<DecayPoint>,
    pub rows: Vec<DecayPoint>,
    /// Functional-specific statistics beyond the CSV columns.
    pub details: serde_json::Value,
    pub wall_time_seconds: f64,
    pub threads: usize,
    pub version: String,
}

impl ResultEnvelope {
    pub fn estimate(&self) -> DecayEstimate {
        DecayEstimate {
            points: self.rows.clone(),
            meta: EstimateMeta {
                seed: self.seed,
                system: self.system.clone(),
                observable: self.observable.clone(),
                functional: self.functional.clone(),
                epsilon: self.config.epsilon,
                horizon: self.config.horizon,
                truncated_mass: self.truncated_mass,
                discarded_fraction: self.discarded_fraction,
                horizon_sensitivity: self.horizon_sensitivity.clone(),
            },
        }
    }

    pub fn csv(&self) -> String {
        rows_to_csv(&self.rows)
    }
}

/// `n,value,stderr,samples` with 17 significant digits.
pub fn rows_to_csv(rows: &[DecayPoint]) -> String {
    let mut s = String::from("n,value,stderr,samples\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.16e},{:.16e},{}", r.n, r.value, r.stderr, r.samples);
    }
    s
}

/// Parses the CSV written by [`rows_to_csv`].
pub fn rows_from_csv(text: &str) -> Result<Vec<DecayPoint>, RunError> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("").trim();
    if header != "n,value,stderr,samples" {
        return Err(RunError::invalid("csv", format!("unexpected header `{header}`")));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = || RunError::invalid("csv", format!("line {}: `{line}`", i + 2));
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 4 {
            return Err(bad());
        }
        out.push(DecayPoint {
            n: f[0].parse().map_err(|_| bad())?,
            value: f[1].parse().map_err(|_| bad())?,
            stderr: f[2].parse().map_err(|_| bad())?,
            samples: f[3].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

struct Outcome {
    rows: Vec<DecayPoint>,
    discarded_fraction: f64,
    horizon_sensitivity: Vec<DecayPoint>,
    details: serde_json::Value,
}

fn monte_carlo(cfg: &ExperimentConfig, v: &Validated) -> MonteCarlo {
    MonteCarlo::new(v.n_orbits, v.seed).with_threads(cfg.threads.unwrap_or(0))
}

fn run_generic<S: DynamicalSystem>(
    cfg: &ExperimentConfig,
    v: &Validated,
    system: &S,
    obs: &dyn Observable<S::State>,
) -> Result<Outcome, RunError> {
    let mc = monte_carlo(cfg, v);
    let n_list = &cfg.n_list;
    let n_max = *n_list.last().unwrap();
    let outcome = |est: DecayEstimate, details| Outcome {
        rows: est.points,
        discarded_fraction: est.meta.discarded_fraction,
        horizon_sensitivity: est.meta.horizon_sensitivity,
        details,
    };
    match v.functional {
        Functional::Ld | Functional::Mld => {
            let eps = cfg.epsilon.unwrap();
            let horizon = cfg.horizon.unwrap_or(n_max).max(n_max);
            let (ld, mld) = estimate_ld_mld(system, obs, eps, n_list, horizon, &mc)?;
            let est = if v.functional == Functional::Ld { ld } else { mld };
            Ok(outcome(est, serde_json::json!({ "epsilon": eps, "horizon": horizon })))
        }
        Functional::Corr => {
            let est = estimate_correlation(system, obs, obs, n_list, &mc)?;
            Ok(outcome(est, serde_json::Value::Null))
        }
        Functional::BsCheck => {
            let factor = cfg.horizon_factor.unwrap_or(DEFAULT_HORIZON_FACTOR);
            let rows = bs_survey(system, obs, n_list, factor, &mc)?;
            Ok(Outcome {
                rows: rows
                    .iter()
                    .map(|r| DecayPoint { n: r.n, value: r.failures as f64, stderr: 0.0, samples: r.orbits })
                    .collect(),
                discarded_fraction: 0.0,
                horizon_sensitivity: Vec::new(),
                details: serde_json::to_value(&rows).unwrap(),
            })
        }
        Functional::Maxnorm => {
            let p = cfg.p.unwrap();
            let horizon = cfg.horizon.unwrap_or(n_max);
            let rows = max_norm_survey(system, obs, n_list, p, horizon, &mc)?;
            Ok(Outcome {
                rows: rows
                    .iter()
                    .map(|r| DecayPoint {
                        n: r.n,
                        value: r.norm_max_partial,
                        stderr: r.norm_max_partial_stderr,
                        samples: r.samples,
                    })
                    .collect(),
                discarded_fraction: 0.0,
                horizon_sensitivity: Vec::new(),
                details: serde_json::to_value(&rows).unwrap(),
            })
        }
        Functional::ExpMoment => {
            let (omega, tp) = (cfg.omega.unwrap(), cfg.tau_prime.unwrap());
            let rows = exp_moment_survey(system, obs, n_list, omega, &[tp], &mc)?;
            Ok(Outcome {
                rows: rows
                    .iter()
                    .map(|r| DecayPoint { n: r.n, value: r.value, stderr: r.stderr, samples: v.n_orbits })
                    .collect(),
                discarded_fraction: 0.0,
                horizon_sensitivity: Vec::new(),
                details: serde_json::json!({ "omega": omega, "tau_prime": tp }),
            })
        }
        f => Err(RunError::invalid("functional", format!("{} needs a tower system", f.name()))),
    }
}

fn run_tower_only(
    cfg: &ExperimentConfig,
    v: &Validated,
    schema: &TowerSchema,
    obs: &TowerObservable,
) -> Result<Outcome, RunError> {
    let mc = monte_carlo(cfg, v);
    let m_inner = cfg.m_inner.unwrap_or(DEFAULT_INNER_SAMPLES);
    let mut rows = Vec::new();
    let mut details = Vec::new();
    for &n in &cfg.n_list {
        let settings = CondExpSettings { n, p: cfg.p.unwrap_or(1.0), m_inner };
        match v.functional {
            Functional::CondExp | Functional::CondExpResidual => {
                let e = if v.functional == Functional::CondExp {
                    cond_exp_past_norm(schema, obs, settings, &mc)?
                } else {
                    cond_exp_future_residual(schema, obs, settings, &mc)?
                };
                rows.push(DecayPoint { n, value: e.value, stderr: e.stderr, samples: e.samples });
                details.push(serde_json::to_value(e).unwrap());
            }
            Functional::StableDiam => {
                let e = stable_diameter_sum(schema, obs, n, m_inner, &mc)?;
                rows.push(DecayPoint { n, value: e.value, stderr: e.stderr, samples: e.samples });
                details.push(serde_json::to_value(e).unwrap());
            }
            Functional::Duality => {
                let e = duality_check(schema, obs, settings, &mc)?;
                rows.push(DecayPoint { n, value: e.lhs - e.rhs, stderr: e.diff_stderr, samples: e.samples });
                details.push(serde_json::json!({ "estimate": e, "z": e.z_score() }));
            }
            _ => unreachable!("dispatched by run"),
        }
    }
    Ok(Outcome {
        rows,
        discarded_fraction: 0.0,
        horizon_sensitivity: Vec::new(),
        details: serde_json::Value::Array(details),
    })
}

/// Validates and runs an experiment in memory.
pub fn run(cfg: &ExperimentConfig) -> Result<ResultEnvelope, RunError> {
    let v = cfg.validate()?;
    let start = Instant::now();
    let obs_spec = cfg.observable_spec();
    let (system_name, observable_name, tower, outcome) = if cfg.system.is_tower() {
        let built = build_tower(&cfg.system)?;
        let obs = obs_spec.tower_observable(&built.schema)?;
        let system = TowerSystem::for_observable(built.schema.clone(), &obs).with_truncated_mass(built.truncated_mass);
        let outcome = if v.functional.tower_only() {
            run_tower_only(cfg, &v, &built.schema, &obs)?
        } else {
            run_generic(cfg, &v, &system, &obs)?
        };
        (system.describe(), obs.describe(), Some(built), outcome)
    } else {
        let domain = cfg.system.domain().unwrap().build()?;
        let system = BilliardSystem::new(domain);
        let obs = billiard_observable(obs_spec.billiard_kind()?);
        let outcome = run_generic(cfg, &v, &system, &obs)?;
        (system.describe(), obs.describe(), None, outcome)
    };
    Ok(ResultEnvelope {
        config: cfg.clone(),
        config_hash: cfg.hash(),
        seed: v.seed,
        functional: v.functional.name().to_string(),
        system: system_name,
        observable: observable_name,
        tail: tower.as_ref().and_then(|t| t.tail),
        r_max_effective: tower.as_ref().and_then(|t| t.r_max_effective),
        truncated_mass: tower.as_ref().map_or(0.0, |t| t.truncated_mass),
        discarded_fraction: outcome.discarded_fraction,
        horizon_sensitivity: outcome.horizon_sensitivity,
        rows: outcome.rows,
        details: outcome.details,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        threads: match cfg.threads.unwrap_or(0) {
            0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
            t => t,
        },
        version: env!("CARGO_PKG_VERSION").to_string(),
    })
}

/// `--out`, else [`OUT_DIR_ENV`], else [`DEFAULT_OUT_DIR`].
pub fn resolve_out_dir(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

/// Writes `<functional>.csv` and `<functional>.json` into `dir`; returns
/// both paths.
pub fn write_envelope(env: &ResultEnvelope, dir: &Path) -> Result<(PathBuf, PathBuf), RunError> {
    std::fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
    let csv = dir.join(format!("{}.csv", env.functional));
    let json = dir.join(format!("{}.json", env.functional));
    std::fs::write(&csv, env.csv()).map_err(io_err(format!("writing {}", csv.display())))?;
    let text = serde_json::to_string_pretty(env).expect("envelope serializes");
    std::fs::write(&json, text).map_err(io_err(format!("writing {}", json.display())))?;
    Ok((csv, json))
}

/// Summary of a built tower, written by `synth-tower`.
#[derive(Debug, Clone, Serialize)]
pub struct TowerSummary {
    pub system: SystemSpec,
    pub n_branches: usize,
    pub max_return_time: u32,
    pub mean_return_time: f64,
    pub truncated_mass: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_max_effective: Option<u32>,
    /// `gcd` of the return times; the tower splits into this many components.
    pub components: u32,
    /// `(n, μ_Y(R > n))` at powers of two.
    pub tail: Vec<(u32, f64)>,
}

/// Builds a tower and returns its schema as TOML plus a summary.
pub fn synth_tower(spec: &SystemSpec) -> Result<(String, TowerSummary), RunError> {
    let built = build_tower(spec)?;
    let schema = &built.schema;
    let mut tail = Vec::new();
    let mut n = 1u32;
    while n <= schema.max_return_time() {
        let mass: f64 = schema.branches().iter().filter(|b| b.return_time > n).map(|b| b.prob).sum();
        tail.push((n, mass));
        n = n.saturating_mul(2);
    }
    let summary = TowerSummary {
        system: spec.clone(),
        n_branches: schema.n_branches(),
        max_return_time: schema.max_return_time(),
        mean_return_time: schema.mean_return_time(),
        truncated_mass: built.truncated_mass,
        r_max_effective: built.r_max_effective,
        components: schema.gcd_decompose().n_components(),
        tail,
    };
    let text = toml::to_string(&schema.to_config()).expect("schema serializes");
    Ok((text, summary))
}

/// `step,s,psi` for `steps` collisions from a Liouville-distributed start
/// drawn with `seed`.
pub fn billiard_orbit(spec: &SystemSpec, seed: u64, steps: usize) -> Result<String, RunError> {
    let kind = spec.domain().ok_or_else(|| RunError::invalid("system.kind", "not a billiard"))?;
    let domain = kind.build()?;
    let start = domain.sample_liouville(&mut crate::rng::orbit_stream(seed, 0));
    let mut buf = Vec::new();
    domain.write_orbit(start, steps, &mut buf).map_err(io_err("tracing orbit"))?;
    Ok(String::from_utf8(buf).expect("orbit CSV is ASCII"))
}

/// Which family `fit` should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitFamily {
    Polynomial,
    Stretched,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitRequest {
    pub family: FitFamily,
    pub n_min: u64,
    pub n_max: u64,
    /// Integrability exponent recorded on a polynomial model.
    pub p: Option<f64>,
    /// With `omega`, also fits `τ'` for a stretched model.
    pub epsilon: Option<f64>,
    pub omega: Option<f64>,
    pub seed: u64,
    pub bootstrap_reps: usize,
}

/// Fits a rate family to `n,value,stderr,samples` rows.
pub fn fit_rows(rows: Vec<DecayPoint>, req: &FitRequest) -> Result<RateModel, RunError> {
    let est = DecayEstimate::from_points(rows);
    let opts = FitOptions { bootstrap_reps: req.bootstrap_reps, seed: req.seed };
    match req.family {
        FitFamily::Polynomial => {
            let m = fit_polynomial_rate_with(&est, req.n_min, req.n_max, opts)?;
            Ok(match req.p {
                Some(p) => m.with_p(p),
                None => m,
            })
        }
        FitFamily::Stretched => {
            let m = fit_stretched_rate_with(&est, req.n_min, req.n_max, opts)?;
            Ok(match (req.epsilon, req.omega) {
                (Some(e), Some(w)) => {
                    let tp = fit_tau_prime(&est, crate::ratefit::omega_prime(w)?, e, req.n_min, req.n_max)?;
                    m.with_tau_prime(tp)
                }
                _ => m,
            })
        }
    }
}

/// One Monte Carlo value against its exact counterpart.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub functional: String,
    pub n: u64,
    pub exact: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub rows: Vec<ComparisonRow>,
    pub passed: bool,
}

/// Options for [`compare_oracle`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompareOptions {
    /// Added to every Monte Carlo value; a harness hook for negative controls.
    pub corrupt_bias: f64,
}

fn z_of(estimate: f64, exact: f64, stderr: f64) -> f64 {
    let d = estimate - exact;
    if d == 0.0 {
        0.0
    } else if stderr > 0.0 {
        d / stderr
    } else {
        f64::INFINITY.copysign(d)
    }
}

/// Monte Carlo next to exact enumeration for `ld`, `mld`, `corr` or
/// `duality` on a tower small enough to enumerate. Probabilities use the
/// binomial σ at the exact value; correlations use the batch-means error.
/// Duality compares the paired difference `lhs - rhs`, which is unbiased
/// for the exact difference at any `m_inner`.
pub fn compare_oracle(cfg: &ExperimentConfig, opts: CompareOptions) -> Result<OracleReport, RunError> {
    let v = cfg.validate()?;
    if !cfg.system.is_tower() {
        return Err(RunError::invalid("system.kind", "the oracle needs a tower system"));
    }
    let built = build_tower(&cfg.system)?;
    let obs = cfg.observable_spec().tower_observable(&built.schema)?;
    let system = TowerSystem::for_observable(built.schema.clone(), &obs);
    let mc = monte_carlo(cfg, &v);
    let n_list = &cfg.n_list;
    let name = v.functional.name().to_string();
    let bias = opts.corrupt_bias;
    let mut rows = Vec::new();
    match v.functional {
        Functional::Ld | Functional::Mld => {
            let eps = cfg.epsilon.unwrap();
            let horizon = cfg.horizon.unwrap_or(*n_list.last().unwrap());
            let (ex_ld, ex_mld) = exact_ld_mld(&built.schema, &obs, eps, n_list, horizon)?;
            let (ld, mld) = estimate_ld_mld(&system, &obs, eps, n_list, horizon, &mc)?;
            let (exact, est) = if v.functional == Functional::Ld { (ex_ld, ld) } else { (ex_mld, mld) };
            for (pt, &ex) in est.points.iter().zip(&exact) {
                let sigma = (ex * (1.0 - ex) / pt.samples as f64).sqrt();
                let e = pt.value + bias;
                rows.push(ComparisonRow { functional: name.clone(), n: pt.n, exact: ex, estimate: e, stderr: sigma, z: z_of(e, ex, sigma) });
            }
        }
        Functional::Corr => {
            let est = estimate_correlation(&system, &obs, &obs, n_list, &mc)?;
            for pt in &est.points {
                let ex = exact_correlation(&built.schema, &obs, &obs, pt.n)?.abs();
                let e = pt.value + bias;
                rows.push(ComparisonRow { functional: name.clone(), n: pt.n, exact: ex, estimate: e, stderr: pt.stderr, z: z_of(e, ex, pt.stderr) });
            }
        }
        Functional::Duality => {
            let p = cfg.p.unwrap();
            let m_inner = cfg.m_inner.unwrap_or(DEFAULT_INNER_SAMPLES);
            for &n in n_list {
                let (lhs, rhs) = exact_duality(&built.schema, &obs, n, p)?;
                let e = duality_check(&built.schema, &obs, CondExpSettings { n, p, m_inner }, &mc)?;
                let est = e.lhs - e.rhs + bias;
                let ex = lhs - rhs;
                rows.push(ComparisonRow {
                    functional: name.clone(),
                    n,
                    exact: ex,
                    estimate: est,
                    stderr: e.diff_stderr,
                    z: z_of(est, ex, e.diff_stderr),
                });
            }
        }
        f => return Err(RunError::invalid("functional", format!("no exact oracle for {}", f.name()))),
    }
    let passed = rows.iter().all(|r| r.z.abs() <= Z_THRESHOLD);
    Ok(OracleReport { rows, passed })
}

/// The two-branch tower `{(0.5,1),(0.5,2)}` with the level indicator at
/// `n ∈ {2,4,8}`, horizon 12, `ε = 1/4`: one config each for ld, mld, corr.
pub fn fixture_configs(n_orbits: u64, seed: u64) -> Vec<ExperimentConfig> {
    [Functional::Ld, Functional::Mld, Functional::Corr]
        .into_iter()
        .map(|f| ExperimentConfig {
            system: SystemSpec::Tower(SchemaConfig {
                branches: vec![(0.5, 1), (0.5, 2)],
                theta: 0.5,
                gamma: 0.5,
                past_depth: default_past_depth(),
            }),
            observable: Some(ObservableSpec::of_kind(ObservableKind::LevelIndicator)),
            functional: Some(f),
            n_list: vec![2, 4, 8],
            epsilon: Some(0.25),
            horizon: Some(12),
            n_orbits: Some(n_orbits),
            p: None,
            seed: Some(seed),
            threads: None,
            m_inner: None,
            omega: None,
            tau_prime: None,
            horizon_factor: None,
        })
        .collect()
}
