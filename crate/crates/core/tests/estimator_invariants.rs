use towerlab::billiards::{
    billiard_observable, semidispersing_domain, stadium_domain, BilliardObservableKind, BilliardSystem,
};
use towerlab::martingale::max_norm_survey;
use towerlab::numerics::weighted_line_fit;
use towerlab::observable::Observable;
use towerlab::oracle::{exact_duality, fixture_schema};
use towerlab::sampler::{CanonicalKind, TailSpec, TowerObservable};
use towerlab::statistics::{
    cond_exp_past_norm, duality_check, estimate_ld, CondExpSettings, MonteCarlo, DEFAULT_INNER_SAMPLES,
};
use towerlab::system::{DynamicalSystem, TowerSystem};

fn beta_one() -> towerlab::tower::TowerSchema {
    TailSpec::Polynomial { beta: 1.0, r_max: 100_000 }.build(0.5, 0.5, 32).unwrap().schema
}

fn ld_decreases<S: DynamicalSystem>(system: &S, obs: &dyn Observable<S::State>, orbits: u64, label: &str) {
    let ld = estimate_ld(system, obs, 0.1, &[100, 10_000], &MonteCarlo::new(orbits, 5)).unwrap();
    let (a, b) = (ld.points[0].value, ld.points[1].value);
    assert!(b < a, "{label}: ld(100) = {a}, ld(10^4) = {b}");
}

#[test]
fn time_averages_concentrate_on_towers() {
    let s = beta_one();
    for kind in [CanonicalKind::SymbolWeighted, CanonicalKind::LevelIndicator, CanonicalKind::PastSensitive] {
        let obs = TowerObservable::canonical(&s, kind, 0.5).unwrap();
        let sys = TowerSystem::for_observable(s.clone(), &obs);
        ld_decreases(&sys, &obs, 10_000, &format!("{kind:?}"));
    }
}

#[test]
fn time_averages_concentrate_on_billiards() {
    for (name, d) in
        [("stadium", stadium_domain(1.0).unwrap()), ("semidispersing", semidispersing_domain(2.0, 2.0, 0.5).unwrap())]
    {
        let sys = BilliardSystem::new(d);
        for kind in [BilliardObservableKind::CosPsi, BilliardObservableKind::SinPsi] {
            ld_decreases(&sys, &billiard_observable(kind), 2_000, &format!("{name} {kind:?}"));
        }
    }
}

#[test]
fn maximal_function_norms_are_ordered() {
    let s = beta_one();
    let obs = TowerObservable::canonical(&s, CanonicalKind::SymbolWeighted, 0.5).unwrap();
    let sys = TowerSystem::for_observable(s, &obs);
    let rows = max_norm_survey(&sys, &obs, &[1, 2, 4, 8, 16], 2.0, 64, &MonteCarlo::new(5_000, 6)).unwrap();
    let sup = obs.sup_norm_bound();
    assert!(rows[0].norm_m_n <= 2.0 * sup);
    for w in rows.windows(2) {
        assert!(w[1].norm_m_n <= w[0].norm_m_n, "{w:?}");
    }
}

#[test]
fn maximal_partial_sums_grow_slower_than_the_bound() {
    let s = beta_one();
    let obs = TowerObservable::canonical(&s, CanonicalKind::SymbolWeighted, 0.5).unwrap();
    let sys = TowerSystem::for_observable(s, &obs);
    let ns: Vec<u64> = (5..=12).map(|k| 1 << k).collect();
    let rows = max_norm_survey(&sys, &obs, &ns, 3.0, 4096, &MonteCarlo::new(10_000, 7)).unwrap();
    let x: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.norm_max_partial.ln()).collect();
    let slope = weighted_line_fit(&x, &y, &vec![1.0; x.len()]).unwrap().slope;
    assert!(slope <= 1.0 - 1.0 / 3.0 + 0.1, "slope {slope}");
}

#[test]
fn past_conditional_norm_is_majorized_by_the_tail_rate() {
    // constant fitted at n = 1 against r(n) = n^{-β}, β = 1
    let s = beta_one();
    let obs = TowerObservable::canonical(&s, CanonicalKind::SymbolWeighted, 0.5).unwrap();
    let p = 2.0;
    let mc = MonteCarlo::new(4_000, 8);
    let sup = obs.sup_norm_bound();
    let at = |n| cond_exp_past_norm(&s, &obs, CondExpSettings::new(n, p), &mc).unwrap();
    let first = at(1);
    let c = first.pth_power / sup.powf(p - 1.0);
    for n in [2u64, 4, 8, 16] {
        let e = at(n);
        // inner-average noise inflates |ĉ|^p by about the inner variance
        let bound = c * sup.powf(p - 1.0) / n as f64 + 3.0 * e.pth_power_stderr + e.inner_stderr.powi(2);
        assert!(e.pth_power <= bound, "n={n}: {} > {bound}", e.pth_power);
    }
}

#[test]
fn duality_difference_matches_the_exact_difference() {
    let schema = fixture_schema(2);
    let obs = TowerObservable::with_depth(&schema, CanonicalKind::SymbolWeighted, 0.5, 3).unwrap();
    for n in [1, 4] {
        for p in [1.0, 3.0] {
            let (l, r) = exact_duality(&schema, &obs, n, p).unwrap();
            let e = duality_check(&schema, &obs, CondExpSettings { n, p, m_inner: DEFAULT_INNER_SAMPLES }, &MonteCarlo::new(10_000, 9))
                .unwrap();
            assert!(((e.lhs - e.rhs) - (l - r)).abs() <= 3.0 * e.diff_stderr, "n={n} p={p}: {e:?}");
        }
    }
}
