//! Observables: real functions on system states with declared regularity.

use std::fmt;
use std::sync::Arc;

/// Regularity class an observable declares.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularity {
    /// Oscillation controlled by `θ^{separation}` up to `depth` future symbols
    /// plus the stable distance.
    DynamicallyHoelder { theta: f64, depth: usize },
    BoundedMeasurable,
}

/// A bounded observable. [`eval`](Observable::eval) returns the centered
/// value: the declared mean is already subtracted.
pub trait Observable<S: ?Sized>: Send + Sync {
    fn eval(&self, state: &S) -> f64;

    /// Mean of the raw evaluator under the invariant measure.
    fn declared_mean(&self) -> f64;

    /// Bound on `|eval(x)|`.
    fn sup_norm_bound(&self) -> f64;

    fn regularity(&self) -> Regularity;

    fn describe(&self) -> String;

    /// True if the value can only change when a tower orbit enters a new
    /// column (level 0). Lets tower orbits skip re-evaluation while climbing.
    fn column_invariant(&self) -> bool {
        false
    }
}

/// Observable backed by a closure, for ad-hoc tests and custom experiments.
#[derive(Clone)]
pub struct FnObservable<S: ?Sized> {
    f: Arc<dyn Fn(&S) -> f64 + Send + Sync>,
    mean: f64,
    bound: f64,
    regularity: Regularity,
    name: String,
}

impl<S: ?Sized> FnObservable<S> {
    /// `f` is the raw evaluator; `mean` is subtracted on evaluation and `bound`
    /// bounds the centered value.
    pub fn new(
        name: impl Into<String>,
        mean: f64,
        bound: f64,
        regularity: Regularity,
        f: impl Fn(&S) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            f: Arc::new(f),
            mean,
            bound,
            regularity,
            name: name.into(),
        }
    }

    pub fn constant(value: f64) -> Self {
        Self::new("constant", 0.0, value.abs(), Regularity::BoundedMeasurable, move |_| value)
    }
}

impl<S: ?Sized> fmt::Debug for FnObservable<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnObservable")
            .field("name", &self.name)
            .field("mean", &self.mean)
            .field("bound", &self.bound)
            .finish()
    }
}

impl<S: ?Sized> Observable<S> for FnObservable<S> {
    fn eval(&self, state: &S) -> f64 {
        (self.f)(state) - self.mean
    }
    fn declared_mean(&self) -> f64 {
        self.mean
    }
    fn sup_norm_bound(&self) -> f64 {
        self.bound
    }
    fn regularity(&self) -> Regularity {
        self.regularity
    }
    fn describe(&self) -> String {
        self.name.clone()
    }
}
