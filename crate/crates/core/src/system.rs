//! The interface estimators use to drive a system: exact sampling from the
//! invariant measure and one application of the map.

use crate::observable::Observable;
use crate::rng::OrbitRng;
use crate::sampler::{sample_mu_delta_with_future, TowerObservable};
use crate::tower::{TowerPoint, TowerSchema};

/// Why an orbit could not be continued.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepFailure {
    /// A grazing collision; the orbit is discarded and resampled.
    Tangency,
    /// Inconsistent geometry (a bug, not a property of the orbit).
    Geometry,
}

pub trait DynamicalSystem: Send + Sync {
    type State: Clone + Send;

    /// Draws an initial state from the invariant measure.
    fn sample(&self, rng: &mut OrbitRng) -> Self::State;

    fn advance(&self, state: &mut Self::State, rng: &mut OrbitRng) -> Result<(), StepFailure>;

    fn describe(&self) -> String;

    /// Mass removed by truncating the system (zero for exact systems).
    fn truncated_mass(&self) -> f64 {
        0.0
    }

    /// The tower behind this system, if it is one.
    fn tower(&self) -> Option<&TowerSchema> {
        None
    }

    /// Writes `φ(f^j x)` for `j < len` into `out`, advancing `state`.
    fn trace_into(
        &self,
        observable: &dyn Observable<Self::State>,
        state: &mut Self::State,
        len: usize,
        rng: &mut OrbitRng,
        out: &mut Vec<f64>,
    ) -> Result<(), StepFailure> {
        out.clear();
        for j in 0..len {
            out.push(observable.eval(state));
            if j + 1 < len {
                self.advance(state, rng)?;
            }
        }
        Ok(())
    }
}

/// A tower driven by its own map. Keeps `lookahead + 1` future symbols known
/// so observables reading ahead always see a full window.
#[derive(Debug, Clone)]
pub struct TowerSystem {
    schema: TowerSchema,
    lookahead: usize,
    truncated_mass: f64,
}

impl TowerSystem {
    pub fn new(schema: TowerSchema, lookahead: usize) -> Self {
        Self { schema, lookahead, truncated_mass: 0.0 }
    }

    pub fn for_observable(schema: TowerSchema, observable: &TowerObservable) -> Self {
        Self::new(schema, observable.future_lookahead())
    }

    pub fn with_truncated_mass(mut self, mass: f64) -> Self {
        self.truncated_mass = mass;
        self
    }

    pub fn schema(&self) -> &TowerSchema {
        &self.schema
    }

    pub fn lookahead(&self) -> usize {
        self.lookahead
    }
}

impl DynamicalSystem for TowerSystem {
    type State = TowerPoint;

    fn sample(&self, rng: &mut OrbitRng) -> TowerPoint {
        sample_mu_delta_with_future(&self.schema, rng, self.lookahead + 1)
    }

    #[inline]
    fn advance(&self, state: &mut TowerPoint, rng: &mut OrbitRng) -> Result<(), StepFailure> {
        self.schema.step(state, rng);
        if state.level == 0 {
            self.schema.ensure_future(state, self.lookahead + 1, rng);
        }
        Ok(())
    }

    fn describe(&self) -> String {
        format!(
            "tower(branches={}, mean_return_time={}, theta={}, gamma={}, past_depth={})",
            self.schema.n_branches(),
            self.schema.mean_return_time(),
            self.schema.theta(),
            self.schema.gamma(),
            self.schema.past_depth()
        )
    }

    fn truncated_mass(&self) -> f64 {
        self.truncated_mass
    }

    fn tower(&self) -> Option<&TowerSchema> {
        Some(&self.schema)
    }

    /// Column-invariant observables are evaluated once per column.
    fn trace_into(
        &self,
        observable: &dyn Observable<TowerPoint>,
        state: &mut TowerPoint,
        len: usize,
        rng: &mut OrbitRng,
        out: &mut Vec<f64>,
    ) -> Result<(), StepFailure> {
        out.clear();
        if len == 0 {
            return Ok(());
        }
        let cached = observable.column_invariant();
        let mut value = observable.eval(state);
        out.push(value);
        for _ in 1..len {
            self.advance(state, rng)?;
            if !cached || state.level == 0 {
                value = observable.eval(state);
            }
            out.push(value);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::orbit_stream;
    use crate::sampler::{polynomial_tail_schema, CanonicalKind};

    #[test]
    fn cached_trace_matches_plain_trace() {
        let t = polynomial_tail_schema(1.0, 50, 0.5, 0.5, 8).unwrap();
        let obs = TowerObservable::canonical(&t.schema, CanonicalKind::SymbolWeighted, 0.5).unwrap();
        let sys = TowerSystem::for_observable(t.schema.clone(), &obs);
        for orbit in 0..20 {
            let mut rng_a = orbit_stream(3, orbit);
            let mut rng_b = orbit_stream(3, orbit);
            let mut a = sys.sample(&mut rng_a);
            let mut b = sys.sample(&mut rng_b);
            let mut fast = Vec::new();
            sys.trace_into(&obs, &mut a, 300, &mut rng_a, &mut fast).unwrap();
            let mut slow = Vec::new();
            for j in 0..300 {
                slow.push(obs.eval(&b));
                if j < 299 {
                    sys.advance(&mut b, &mut rng_b).unwrap();
                }
            }
            assert_eq!(fast, slow);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn future_window_is_maintained() {
        let t = polynomial_tail_schema(1.0, 20, 0.5, 0.5, 4).unwrap();
        let sys = TowerSystem::new(t.schema.clone(), 7);
        let mut rng = orbit_stream(4, 0);
        let mut x = sys.sample(&mut rng);
        for _ in 0..1000 {
            assert!(x.future().len() >= 8);
            sys.advance(&mut x, &mut rng).unwrap();
        }
    }
}
