//! Planar billiard tables and their collision maps.
//!
//! States are `(s, ψ)`: arc length along the boundary and the outgoing angle
//! measured from the inward normal, positive towards the boundary tangent.
//! The boundary is a chain of segments and circular arcs oriented so the
//! table lies on the left; the inward normal is the tangent rotated by +90°.
//! In these coordinates Liouville measure is `cos ψ ds dψ`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{chi_square_two_sample, ChiSquareTest};
use crate::observable::{FnObservable, Regularity};
use crate::rng::{orbit_stream, OrbitRng};
use crate::system::{DynamicalSystem, StepFailure};

/// Rays shorter than this are treated as still sitting on the departure point.
pub const MIN_FLIGHT: f64 = 1e-10;
/// Collisions with `cos(incidence)` below this are reported as tangential.
pub const TANGENCY_TOLERANCE: f64 = 1e-9;
const ANGLE_TOLERANCE: f64 = 1e-12;
const CLOSURE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BilliardError {
    #[error("parameter `{name}` = {value} is out of range")]
    ParameterOutOfRange { name: &'static str, value: f64 },
    #[error("disk touches the wall (clearance {clearance})")]
    DiskTouchesWall { clearance: f64 },
    #[error("tangential collision at s = {s}")]
    TangencyUnresolved { s: f64 },
    #[error("ray from s = {s}, psi = {psi} hits no boundary piece")]
    NoIntersection { s: f64, psi: f64 },
    #[error("unknown billiard family `{0}`")]
    UnknownFamily(String),
}

type V2 = [f64; 2];

#[inline]
fn dot(a: V2, b: V2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
fn cross(a: V2, b: V2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
fn sub(a: V2, b: V2) -> V2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
fn rot90(a: V2) -> V2 {
    [-a[1], a[0]]
}

/// One smooth piece of the boundary, parameterized by arc length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Piece {
    Segment { start: V2, dir: V2, len: f64 },
    /// `sweep > 0` runs counterclockwise around `center`.
    Arc { center: V2, radius: f64, start_angle: f64, sweep: f64 },
}

impl Piece {
    fn segment(from: V2, to: V2) -> Piece {
        let d = sub(to, from);
        let len = d[0].hypot(d[1]);
        Piece::Segment { start: from, dir: [d[0] / len, d[1] / len], len }
    }

    pub fn len(&self) -> f64 {
        match *self {
            Piece::Segment { len, .. } => len,
            Piece::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    pub fn point(&self, u: f64) -> V2 {
        match *self {
            Piece::Segment { start, dir, .. } => [start[0] + u * dir[0], start[1] + u * dir[1]],
            Piece::Arc { center, radius, start_angle, sweep } => {
                let a = start_angle + sweep.signum() * u / radius;
                [center[0] + radius * a.cos(), center[1] + radius * a.sin()]
            }
        }
    }

    pub fn tangent(&self, u: f64) -> V2 {
        match *self {
            Piece::Segment { dir, .. } => dir,
            Piece::Arc { radius, start_angle, sweep, .. } => {
                let sg = sweep.signum();
                let a = start_angle + sg * u / radius;
                [-sg * a.sin(), sg * a.cos()]
            }
        }
    }

    pub fn inward_normal(&self, u: f64) -> V2 {
        rot90(self.tangent(u))
    }

    /// Arc-length parameter of a point on the arc's circle, if it lies within
    /// the swept range.
    fn arc_param(&self, p: V2) -> Option<f64> {
        match *self {
            Piece::Arc { center, radius, start_angle, sweep } => {
                if sweep.abs() >= TAU {
                    let ang = (p[1] - center[1]).atan2(p[0] - center[0]);
                    let off = (sweep.signum() * (ang - start_angle)).rem_euclid(TAU);
                    return Some(off * radius);
                }
                let ang = (p[1] - center[1]).atan2(p[0] - center[0]);
                let off = (sweep.signum() * (ang - start_angle)).rem_euclid(TAU);
                if off <= sweep.abs() + ANGLE_TOLERANCE {
                    Some(off.min(sweep.abs()) * radius)
                } else if off >= TAU - ANGLE_TOLERANCE {
                    Some(0.0)
                } else {
                    None
                }
            }
            Piece::Segment { .. } => None,
        }
    }
}

/// Which table a domain was built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainKind {
    Stadium { length: f64 },
    Semidispersing { a: f64, b: f64, r: f64 },
}

/// A billiard table: the boundary as consecutive pieces.
#[derive(Debug, Clone)]
pub struct BilliardDomain {
    kind: DomainKind,
    pieces: Vec<Piece>,
    /// Arc length at which each piece begins.
    starts: Vec<f64>,
    perimeter: f64,
    /// Pieces `loops[k].0 .. loops[k].1` form one closed curve.
    loops: Vec<(usize, usize)>,
}

/// A point of the collision space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BilliardState {
    pub s: f64,
    pub psi: f64,
}

impl BilliardState {
    /// The time-reversal involution `(s, ψ) ↦ (s, -ψ)`.
    pub fn reversed(self) -> Self {
        Self { s: self.s, psi: -self.psi }
    }
}

impl BilliardDomain {
    fn from_loops(kind: DomainKind, loops_in: Vec<Vec<Piece>>) -> Self {
        let mut pieces = Vec::new();
        let mut loops = Vec::new();
        for l in loops_in {
            let begin = pieces.len();
            pieces.extend(l);
            loops.push((begin, pieces.len()));
        }
        let mut starts = Vec::with_capacity(pieces.len());
        let mut acc = 0.0;
        for p in &pieces {
            starts.push(acc);
            acc += p.len();
        }
        Self { kind, pieces, starts, perimeter: acc, loops }
    }

    pub fn kind(&self) -> DomainKind {
        self.kind
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn perimeter(&self) -> f64 {
        self.perimeter
    }

    /// Largest gap between the end of a piece and the start of its successor.
    pub fn closure_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for &(b, e) in &self.loops {
            for i in b..e {
                let next = if i + 1 == e { b } else { i + 1 };
                let end = self.pieces[i].point(self.pieces[i].len());
                let start = self.pieces[next].point(0.0);
                worst = worst.max((end[0] - start[0]).hypot(end[1] - start[1]));
            }
        }
        worst
    }

    /// Piece index and local arc length for a boundary coordinate.
    pub fn locate(&self, s: f64) -> (usize, f64) {
        let s = s.rem_euclid(self.perimeter);
        let i = self.starts.partition_point(|&st| st <= s).saturating_sub(1);
        let u = (s - self.starts[i]).clamp(0.0, self.pieces[i].len());
        (i, u)
    }

    pub fn position(&self, s: f64) -> V2 {
        let (i, u) = self.locate(s);
        self.pieces[i].point(u)
    }

    /// Outgoing unit velocity of a state.
    pub fn velocity(&self, state: BilliardState) -> V2 {
        let (i, u) = self.locate(state.s);
        let t = self.pieces[i].tangent(u);
        let n = rot90(t);
        let (sp, cp) = state.psi.sin_cos();
        [cp * n[0] + sp * t[0], cp * n[1] + sp * t[1]]
    }

    /// Next collision of the ray leaving `state`.
    pub fn collide(&self, state: BilliardState) -> Result<BilliardState, BilliardError> {
        let (from, u0) = self.locate(state.s);
        let piece0 = &self.pieces[from];
        let q = piece0.point(u0);
        let t0 = piece0.tangent(u0);
        let n0 = rot90(t0);
        let (sp, cp) = state.psi.sin_cos();
        let v = [cp * n0[0] + sp * t0[0], cp * n0[1] + sp * t0[1]];

        let mut best: Option<(f64, usize, f64)> = None;
        let mut consider = |tau: f64, j: usize, u: f64| {
            if tau > MIN_FLIGHT && best.is_none_or(|(bt, _, _)| tau < bt) {
                best = Some((tau, j, u));
            }
        };
        for (j, piece) in self.pieces.iter().enumerate() {
            match *piece {
                Piece::Segment { start, dir, len } => {
                    if j == from {
                        continue;
                    }
                    let denom = cross(v, dir);
                    if denom == 0.0 {
                        continue;
                    }
                    let w = sub(start, q);
                    let tau = cross(w, dir) / denom;
                    let u = cross(w, v) / denom;
                    if u >= -1e-12 && u <= len + 1e-12 {
                        consider(tau, j, u.clamp(0.0, len));
                    }
                }
                Piece::Arc { center, radius, .. } => {
                    let w = sub(q, center);
                    let b = dot(v, w);
                    let roots: [f64; 2] = if j == from {
                        // q lies on this circle, so one root is exactly zero
                        [-2.0 * b, f64::NAN]
                    } else {
                        let c = dot(w, w) - radius * radius;
                        let disc = b * b - c;
                        if disc < 0.0 {
                            continue;
                        }
                        let sq = disc.sqrt();
                        // stable pair of roots
                        let big = -b - b.signum() * sq;
                        if big == 0.0 {
                            [0.0, 0.0]
                        } else {
                            [big, c / big]
                        }
                    };
                    for tau in roots {
                        if !(tau > MIN_FLIGHT) {
                            continue;
                        }
                        let p = [q[0] + tau * v[0], q[1] + tau * v[1]];
                        if let Some(u) = piece.arc_param(p) {
                            consider(tau, j, u);
                        }
                    }
                }
            }
        }
        let (_, j, u) = best.ok_or(BilliardError::NoIntersection { s: state.s, psi: state.psi })?;
        let piece = &self.pieces[j];
        let t = piece.tangent(u);
        let n = rot90(t);
        let vn = dot(v, n);
        let s_new = self.starts[j] + u;
        if -vn < TANGENCY_TOLERANCE {
            return Err(BilliardError::TangencyUnresolved { s: s_new });
        }
        let out = [v[0] - 2.0 * vn * n[0], v[1] - 2.0 * vn * n[1]];
        let psi = dot(out, t).atan2(dot(out, n)).clamp(-FRAC_PI_2, FRAC_PI_2);
        let s_new = if s_new >= self.perimeter { s_new - self.perimeter } else { s_new };
        Ok(BilliardState { s: s_new, psi })
    }

    /// Draws `(s, ψ)` from Liouville measure: `s` uniform and `ψ` with density
    /// proportional to `cos ψ`.
    pub fn sample_liouville<R: Rng + ?Sized>(&self, rng: &mut R) -> BilliardState {
        let s = rng.random::<f64>() * self.perimeter;
        let u: f64 = rng.random();
        BilliardState { s, psi: (2.0 * u - 1.0).asin() }
    }

    /// Writes `step,s,psi` rows for `steps` collisions starting at `state`.
    pub fn write_orbit<W: Write>(
        &self,
        state: BilliardState,
        steps: usize,
        mut out: W,
    ) -> Result<(), std::io::Error> {
        writeln!(out, "step,s,psi")?;
        let mut x = state;
        writeln!(out, "0,{:.16e},{:.16e}", x.s, x.psi)?;
        for k in 1..=steps {
            match self.collide(x) {
                Ok(next) => x = next,
                Err(e) => return Err(std::io::Error::other(e.to_string())),
            }
            writeln!(out, "{k},{:.16e},{:.16e}", x.s, x.psi)?;
        }
        Ok(())
    }
}

/// Bunimovich stadium: two unit semicircles joined by segments of length `L`.
/// Arc length starts at the left end of the bottom segment.
pub fn stadium_domain(length: f64) -> Result<BilliardDomain, BilliardError> {
    if !(length > 0.0 && length.is_finite()) {
        return Err(BilliardError::ParameterOutOfRange { name: "length", value: length });
    }
    let l = length;
    let pieces = vec![
        Piece::segment([0.0, -1.0], [l, -1.0]),
        Piece::Arc { center: [l, 0.0], radius: 1.0, start_angle: -FRAC_PI_2, sweep: PI },
        Piece::segment([l, 1.0], [0.0, 1.0]),
        Piece::Arc { center: [0.0, 0.0], radius: 1.0, start_angle: FRAC_PI_2, sweep: PI },
    ];
    let d = BilliardDomain::from_loops(DomainKind::Stadium { length }, vec![pieces]);
    debug_assert!(d.closure_residual() < CLOSURE_TOLERANCE);
    Ok(d)
}

/// Rectangle `[0,a] × [0,b]` with a disk of radius `r` removed at its centre.
/// Arc length runs along the walls first, then clockwise around the disk.
pub fn semidispersing_domain(a: f64, b: f64, r: f64) -> Result<BilliardDomain, BilliardError> {
    for (name, v) in [("a", a), ("b", b), ("r", r)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(BilliardError::ParameterOutOfRange { name, value: v });
        }
    }
    let clearance = a.min(b) / 2.0 - r;
    if clearance <= 0.0 {
        return Err(BilliardError::DiskTouchesWall { clearance });
    }
    let walls = vec![
        Piece::segment([0.0, 0.0], [a, 0.0]),
        Piece::segment([a, 0.0], [a, b]),
        Piece::segment([a, b], [0.0, b]),
        Piece::segment([0.0, b], [0.0, 0.0]),
    ];
    let disk = vec![Piece::Arc { center: [a / 2.0, b / 2.0], radius: r, start_angle: 0.0, sweep: -TAU }];
    let d = BilliardDomain::from_loops(DomainKind::Semidispersing { a, b, r }, vec![walls, disk]);
    debug_assert!(d.closure_residual() < CLOSURE_TOLERANCE);
    Ok(d)
}

impl DomainKind {
    pub fn build(&self) -> Result<BilliardDomain, BilliardError> {
        match *self {
            DomainKind::Stadium { length } => stadium_domain(length),
            DomainKind::Semidispersing { a, b, r } => semidispersing_domain(a, b, r),
        }
    }
}

/// Gap between the disk and the nearest wall.
pub fn clearance(domain: &BilliardDomain) -> Option<f64> {
    match domain.kind {
        DomainKind::Semidispersing { a, b, r } => Some(a.min(b) / 2.0 - r),
        DomainKind::Stadium { .. } => None,
    }
}

/// A billiard table driven by its collision map.
#[derive(Debug, Clone)]
pub struct BilliardSystem {
    domain: BilliardDomain,
}

impl BilliardSystem {
    pub fn new(domain: BilliardDomain) -> Self {
        Self { domain }
    }

    pub fn domain(&self) -> &BilliardDomain {
        &self.domain
    }
}

impl DynamicalSystem for BilliardSystem {
    type State = BilliardState;

    fn sample(&self, rng: &mut OrbitRng) -> BilliardState {
        self.domain.sample_liouville(rng)
    }

    #[inline]
    fn advance(&self, state: &mut BilliardState, _rng: &mut OrbitRng) -> Result<(), StepFailure> {
        match self.domain.collide(*state) {
            Ok(next) => {
                *state = next;
                Ok(())
            }
            Err(BilliardError::TangencyUnresolved { .. }) => Err(StepFailure::Tangency),
            Err(_) => Err(StepFailure::Geometry),
        }
    }

    fn describe(&self) -> String {
        match self.domain.kind {
            DomainKind::Stadium { length } => format!("stadium(length={length})"),
            DomainKind::Semidispersing { a, b, r } => format!("semidispersing(a={a}, b={b}, r={r})"),
        }
    }
}

/// Cell of `(s, ψ)` in a `bins × bins` grid of equal Liouville mass: `s`
/// uniform in arc length, `ψ` uniform in `sin ψ`.
pub fn phase_cell(domain: &BilliardDomain, x: BilliardState, bins: usize) -> usize {
    let i = ((x.s / domain.perimeter()) * bins as f64) as usize;
    let j = ((x.psi.sin() + 1.0) * 0.5 * bins as f64) as usize;
    i.min(bins - 1) * bins + j.min(bins - 1)
}

/// Outcome of [`measure_preservation_test`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InvarianceReport {
    pub chi_square: ChiSquareTest,
    pub samples: u64,
    /// Orbits dropped after a tangential collision.
    pub discarded: u64,
}

/// Two-sample χ² between `samples` Liouville points pushed through
/// `collisions` collisions and an independent fresh Liouville sample, on a
/// `bins × bins` equal-mass grid.
pub fn measure_preservation_test(
    domain: &BilliardDomain,
    samples: u64,
    collisions: usize,
    bins: usize,
    seed: u64,
) -> InvarianceReport {
    let mut pushed = vec![0u64; bins * bins];
    let mut fresh = vec![0u64; bins * bins];
    let mut rng = orbit_stream(seed, 0);
    let mut discarded = 0;
    'orbit: for _ in 0..samples {
        let mut x = domain.sample_liouville(&mut rng);
        for _ in 0..collisions {
            match domain.collide(x) {
                Ok(y) => x = y,
                Err(_) => {
                    discarded += 1;
                    continue 'orbit;
                }
            }
        }
        pushed[phase_cell(domain, x, bins)] += 1;
    }
    let mut rng = orbit_stream(seed, 1);
    for _ in 0..samples {
        fresh[phase_cell(domain, domain.sample_liouville(&mut rng), bins)] += 1;
    }
    InvarianceReport { chi_square: chi_square_two_sample(&pushed, &fresh), samples, discarded }
}

/// Outcome of [`reversibility_test`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReversibilityReport {
    pub checked: u64,
    /// States skipped for a near-tangent start or landing (`cos ψ < 1e-6`).
    pub skipped: u64,
    pub max_s_error: f64,
    pub max_psi_error: f64,
}

/// Largest deviation of `collide(inv(collide(x)))` from `inv(x)` over
/// `samples` Liouville states.
pub fn reversibility_test(domain: &BilliardDomain, samples: u64, seed: u64) -> ReversibilityReport {
    let p = domain.perimeter();
    let mut rng = orbit_stream(seed, 0);
    let mut rep = ReversibilityReport { checked: 0, skipped: 0, max_s_error: 0.0, max_psi_error: 0.0 };
    for _ in 0..samples {
        let x = domain.sample_liouville(&mut rng);
        let Ok(y) = domain.collide(x) else {
            rep.skipped += 1;
            continue;
        };
        if x.psi.cos() < 1e-6 || y.psi.cos() < 1e-6 {
            rep.skipped += 1;
            continue;
        }
        let Ok(back) = domain.collide(y.reversed()) else {
            rep.max_s_error = f64::INFINITY;
            continue;
        };
        let ds = (back.s - x.s).rem_euclid(p);
        rep.max_s_error = rep.max_s_error.max(ds.min(p - ds));
        rep.max_psi_error = rep.max_psi_error.max((back.psi + x.psi).abs());
        rep.checked += 1;
    }
    rep
}

/// Smooth observables on the collision space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BilliardObservableKind {
    /// `cos ψ`, Liouville mean `π/4`.
    CosPsi,
    /// `sin ψ`, Liouville mean `0`.
    SinPsi,
}

pub fn billiard_observable(kind: BilliardObservableKind) -> FnObservable<BilliardState> {
    let reg = Regularity::DynamicallyHoelder { theta: 0.5, depth: 0 };
    match kind {
        BilliardObservableKind::CosPsi => {
            FnObservable::new("cos_psi", FRAC_PI_4, FRAC_PI_4, reg, |x: &BilliardState| x.psi.cos())
        }
        BilliardObservableKind::SinPsi => {
            FnObservable::new("sin_psi", 0.0, 1.0, reg, |x: &BilliardState| x.psi.sin())
        }
    }
}

/// Exponent `β` governing a family: tails `n^{-(β+1)}`, MLD `n^{-β}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaValue {
    Exact(f64),
    /// Somewhere in the open interval.
    Range(f64, f64),
}

/// Predicted rates for one billiard family.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateCatalogEntry {
    pub family: String,
    pub beta: BetaValue,
    pub executable: bool,
    pub parameter_note: String,
}

impl RateCatalogEntry {
    /// Tower tail exponent `β + 1` (lower end for a range).
    pub fn tail_exponent(&self) -> f64 {
        match self.beta {
            BetaValue::Exact(b) => b + 1.0,
            BetaValue::Range(lo, _) => lo + 1.0,
        }
    }

    /// MLD exponent `β` (lower end for a range).
    pub fn mld_exponent(&self) -> f64 {
        match self.beta {
            BetaValue::Exact(b) => b,
            BetaValue::Range(lo, _) => lo,
        }
    }
}

pub const CATALOG_FAMILIES: [&str; 6] =
    ["stadium", "semidispersing", "cusps", "flat_cusps", "flowers", "flat_points(b)"];

/// Looks up a family by name. Flat points take their profile exponent as
/// `flat_points(b)` or `flat_points:b`.
pub fn example_catalog(family: &str) -> Result<RateCatalogEntry, BilliardError> {
    let family = family.trim();
    let entry = |beta, executable, note: &str| RateCatalogEntry {
        family: family.to_string(),
        beta,
        executable,
        parameter_note: note.to_string(),
    };
    match family {
        "stadium" => Ok(entry(BetaValue::Exact(1.0), true, "unit semicircles, any segment length L > 0")),
        "semidispersing" => Ok(entry(BetaValue::Exact(1.0), true, "rectangle minus strictly convex scatterers")),
        "cusps" => Ok(entry(BetaValue::Exact(1.0), false, "zero interior angles, nonvanishing curvature")),
        "flat_cusps" => Ok(entry(BetaValue::Range(0.0, 1.0), false, "beta depends on the cusp flatness")),
        "flowers" => Ok(entry(BetaValue::Exact(2.0), false, "Bunimovich flowers")),
        _ => {
            let b = family
                .strip_prefix("flat_points(")
                .and_then(|r| r.strip_suffix(')'))
                .or_else(|| family.strip_prefix("flat_points:"))
                .and_then(|v| v.trim().strip_prefix("b=").unwrap_or(v.trim()).parse::<f64>().ok());
            match b {
                Some(b) if b > 2.0 && b.is_finite() => Ok(entry(
                    BetaValue::Exact((b + 2.0) / (b - 2.0)),
                    false,
                    &format!("flat points with profile ±(1+|x|^{b})"),
                )),
                Some(b) => Err(BilliardError::ParameterOutOfRange { name: "b", value: b }),
                None => Err(BilliardError::UnknownFamily(family.to_string())),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{chi_square_goodness_of_fit, mean_and_stderr};

    fn circ_diff(a: f64, b: f64, p: f64) -> f64 {
        let d = (a - b).rem_euclid(p);
        d.min(p - d)
    }

    #[test]
    fn stadium_geometry() {
        let d = stadium_domain(1.0).unwrap();
        assert!((d.perimeter() - (2.0 + 2.0 * PI)).abs() < 1e-12);
        assert!(d.closure_residual() < 1e-12);
        assert!(matches!(stadium_domain(0.0), Err(BilliardError::ParameterOutOfRange { .. })));
    }

    #[test]
    fn semidispersing_geometry() {
        let d = semidispersing_domain(2.0, 2.0, 0.5).unwrap();
        assert!((clearance(&d).unwrap() - 0.5).abs() < 1e-15);
        assert!((d.perimeter() - (8.0 + PI)).abs() < 1e-12);
        assert!(d.closure_residual() < 1e-12);
        assert!(matches!(
            semidispersing_domain(2.0, 2.0, 1.0),
            Err(BilliardError::DiskTouchesWall { .. })
        ));
    }

    #[test]
    fn normals_point_inside() {
        let d = semidispersing_domain(2.0, 3.0, 0.5).unwrap();
        for k in 0..200 {
            let s = d.perimeter() * k as f64 / 200.0 + 1e-3;
            let p = d.position(s);
            let (i, u) = d.locate(s);
            let n = d.pieces()[i].inward_normal(u);
            let inside = [p[0] + 1e-3 * n[0], p[1] + 1e-3 * n[1]];
            assert!(inside[0] > 0.0 && inside[0] < 2.0 && inside[1] > 0.0 && inside[1] < 3.0);
            assert!((inside[0] - 1.0).hypot(inside[1] - 1.5) > 0.5);
        }
    }

    #[test]
    fn perpendicular_bounce_between_flat_walls() {
        let d = stadium_domain(1.0).unwrap();
        let x = BilliardState { s: 0.5, psi: 0.0 };
        let y = d.collide(x).unwrap();
        // top segment starts at 1 + π and runs right to left
        assert!((y.s - (1.5 + PI)).abs() < 1e-12);
        assert!(y.psi.abs() < 1e-12);
        let z = d.collide(y).unwrap();
        assert!((z.s - 0.5).abs() < 1e-12 && z.psi.abs() < 1e-12);
    }

    #[test]
    fn consecutive_hits_on_a_semicircle_keep_the_angle() {
        let d = stadium_domain(1.0).unwrap();
        // leave the right arc near its middle with a shallow chord
        let x = BilliardState { s: 1.0 + 0.6, psi: 1.2 };
        let y = d.collide(x).unwrap();
        let (i, _) = d.locate(y.s);
        assert_eq!(i, 1);
        assert!((y.psi.abs() - 1.2).abs() < 1e-12);
    }

    #[test]
    fn ray_through_disk_centre_returns() {
        let d = semidispersing_domain(2.0, 2.0, 0.5).unwrap();
        // from the bottom wall midpoint straight up hits the disk head on
        let x = BilliardState { s: 1.0, psi: 0.0 };
        let y = d.collide(x).unwrap();
        let p = d.position(y.s);
        assert!((p[0] - 1.0).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
        assert!(y.psi.abs() < 1e-12);
        let z = d.collide(y).unwrap();
        assert!((z.s - 1.0).abs() < 1e-12 && z.psi.abs() < 1e-12);
        // an oblique ray aimed at the centre also comes straight back
        let q: [f64; 2] = [0.4, 0.0];
        let aim = [1.0 - q[0], 1.0 - q[1]];
        let psi = (aim[0] / aim[1]).atan();
        let x = BilliardState { s: 0.4, psi };
        let y = d.collide(x).unwrap();
        assert!(y.psi.abs() < 1e-12);
        let z = d.collide(y).unwrap();
        assert!((z.s - 0.4).abs() < 1e-12);
        assert!((z.psi + psi).abs() < 1e-12);
    }

    #[test]
    fn collisions_stay_on_boundary_and_reverse() {
        for d in [stadium_domain(1.0).unwrap(), semidispersing_domain(2.0, 2.0, 0.5).unwrap()] {
            let mut rng = orbit_stream(21, 0);
            let mut checked = 0;
            for _ in 0..20_000 {
                let x = d.sample_liouville(&mut rng);
                let Ok(y) = d.collide(x) else { continue };
                assert!(y.psi.abs() <= FRAC_PI_2);
                assert!(y.s >= 0.0 && y.s < d.perimeter());
                if x.psi.cos() < 1e-6 || y.psi.cos() < 1e-6 {
                    continue;
                }
                let back = d.collide(y.reversed()).unwrap();
                assert!(circ_diff(back.s, x.s, d.perimeter()) < 1e-8, "{x:?} -> {y:?} -> {back:?}");
                assert!((back.psi + x.psi).abs() < 1e-8);
                checked += 1;
            }
            assert!(checked > 19_000);
        }
    }

    #[test]
    fn collide_is_deterministic() {
        let d = semidispersing_domain(2.0, 2.0, 0.5).unwrap();
        let x = BilliardState { s: 1.234, psi: 0.4321 };
        let a = d.collide(x).unwrap();
        let b = d.collide(x).unwrap();
        assert_eq!(a.s.to_bits(), b.s.to_bits());
        assert_eq!(a.psi.to_bits(), b.psi.to_bits());
    }

    #[test]
    fn liouville_moments() {
        let d = stadium_domain(1.0).unwrap();
        let mut rng = orbit_stream(9, 0);
        let n = 200_000;
        let xs: Vec<BilliardState> = (0..n).map(|_| d.sample_liouville(&mut rng)).collect();
        let sin: Vec<f64> = xs.iter().map(|x| x.psi.sin()).collect();
        let cos: Vec<f64> = xs.iter().map(|x| x.psi.cos()).collect();
        let (m, se) = mean_and_stderr(&sin);
        assert!(m.abs() < 4.0 * se);
        let (m, se) = mean_and_stderr(&cos);
        assert!((m - FRAC_PI_4).abs() < 4.0 * se);
        let mut bins = [0u64; 20];
        for x in &xs {
            bins[((x.s / d.perimeter()) * 20.0) as usize] += 1;
        }
        assert!(chi_square_goodness_of_fit(&bins, &[0.05; 20]).p_value > 0.001);
    }

    #[test]
    fn small_invariance_suites() {
        for d in [stadium_domain(1.0).unwrap(), semidispersing_domain(2.0, 2.0, 0.5).unwrap()] {
            let r = measure_preservation_test(&d, 20_000, 5, 8, 4);
            assert!(r.chi_square.p_value > 0.001, "{r:?}");
            let v = reversibility_test(&d, 5_000, 8);
            assert!(v.max_s_error < 1e-8 && v.max_psi_error < 1e-8, "{v:?}");
        }
    }

    #[test]
    fn catalog_entries() {
        let s = example_catalog("stadium").unwrap();
        assert_eq!((s.tail_exponent(), s.mld_exponent()), (2.0, 1.0));
        let f = example_catalog("flowers").unwrap();
        assert_eq!((f.tail_exponent(), f.mld_exponent()), (3.0, 2.0));
        let p = example_catalog("flat_points(6)").unwrap();
        assert_eq!(p.beta, BetaValue::Exact(2.0));
        assert!(matches!(example_catalog("flat_points(2)"), Err(BilliardError::ParameterOutOfRange { .. })));
        assert!(matches!(example_catalog("sinai"), Err(BilliardError::UnknownFamily(_))));
    }
}
