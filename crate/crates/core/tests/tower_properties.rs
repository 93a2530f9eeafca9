use proptest::prelude::*;
use towerlab::numerics::{chi_square_goodness_of_fit, chi_square_two_sample, mean_and_stderr};
use towerlab::observable::Observable;
use towerlab::rng::orbit_stream;
use towerlab::sampler::{sample_mu_delta, CanonicalKind, TailSpec, TowerObservable};
use towerlab::tower::{Separation, TowerPoint, TowerSchema};

fn schema() -> TowerSchema {
    TowerSchema::new(&[(0.4, 1), (0.35, 2), (0.25, 3)], 0.5, 0.5, 8).unwrap()
}

fn base(s: &TowerSchema, future: &[u32]) -> TowerPoint {
    TowerPoint::base(s, future.to_vec()).unwrap()
}

fn sep(s: &TowerSchema, x: &TowerPoint, y: &TowerPoint) -> Separation {
    s.separation_time(x, y, 64).unwrap()
}

fn futures() -> impl Strategy<Value = Vec<u32>> {
    proptest::collection::vec(0u32..3, 64..65)
}

/// Pair of futures sharing a random prefix.
fn close_pair() -> impl Strategy<Value = (Vec<u32>, Vec<u32>)> {
    (futures(), futures(), 0usize..12).prop_map(|(a, mut b, k)| {
        b[..k].copy_from_slice(&a[..k]);
        (a, b)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn separation_is_symmetric((a, b) in close_pair()) {
        let s = schema();
        let (x, y) = (base(&s, &a), base(&s, &b));
        prop_assert_eq!(sep(&s, &x, &y), sep(&s, &y, &x));
    }

    #[test]
    fn separation_drops_by_one_per_return((a, b) in close_pair()) {
        let s = schema();
        let (x, y) = (base(&s, &a), base(&s, &b));
        if let Separation::Finite(k) = sep(&s, &x, &y) {
            if k > 0 {
                // equal first symbols, so both return after the same R steps
                let r = s.return_time(a[0]);
                let (mut fx, mut fy) = (x.clone(), y.clone());
                for _ in 0..r {
                    fx = s.stepped(&fx).unwrap();
                    fy = s.stepped(&fy).unwrap();
                }
                prop_assert!(fx.is_base() && fy.is_base());
                prop_assert_eq!(sep(&s, &fx, &fy), Separation::Finite(k - 1));
            }
        }
    }

    #[test]
    fn d_theta_is_ultrametric(a in futures(), b in futures(), c in futures(), k1 in 0usize..8, k2 in 0usize..8) {
        let s = schema();
        let mut b = b;
        let mut c = c;
        b[..k1].copy_from_slice(&a[..k1]);
        c[..k2].copy_from_slice(&b[..k2]);
        let (x, y, z) = (base(&s, &a), base(&s, &b), base(&s, &c));
        let d = |p: &TowerPoint, q: &TowerPoint| s.d_theta(p, q, 64).unwrap().value;
        prop_assert!(d(&x, &z) <= d(&x, &y).max(d(&y, &z)));
    }

    #[test]
    fn components_cycle(seed in 0u64..1000, steps in 1usize..200) {
        let s = TowerSchema::new(&[(0.5, 3), (0.3, 6), (0.2, 9)], 0.5, 0.5, 4).unwrap();
        let comp = s.gcd_decompose();
        prop_assert_eq!(comp.n_components(), 3);
        let mut rng = orbit_stream(seed, 0);
        let mut x = sample_mu_delta(&s, &mut rng);
        let c0 = comp.component_of_point(&x);
        for j in 1..=steps {
            s.step(&mut x, &mut rng);
            prop_assert_eq!(comp.component_of_point(&x) - 1, (c0 - 1 + j as u32) % 3);
        }
    }
}

fn cell_index(s: &TowerSchema) -> impl Fn(&TowerPoint) -> usize + '_ {
    let offsets: Vec<usize> = s
        .branches()
        .iter()
        .scan(0usize, |acc, b| {
            let o = *acc;
            *acc += b.return_time as usize;
            Some(o)
        })
        .collect();
    move |x| offsets[x.branch() as usize] + x.level() as usize
}

fn cell_probs(s: &TowerSchema) -> Vec<f64> {
    s.branches()
        .iter()
        .flat_map(|b| std::iter::repeat_n(b.prob / s.mean_return_time(), b.return_time as usize))
        .collect()
}

#[test]
fn long_orbit_visits_cells_with_stationary_frequencies() {
    let s = schema();
    let idx = cell_index(&s);
    let probs = cell_probs(&s);
    let mut counts = vec![0u64; probs.len()];
    let mut rng = orbit_stream(17, 0);
    let mut x = sample_mu_delta(&s, &mut rng);
    for _ in 0..1_000_000 {
        counts[idx(&x)] += 1;
        s.step(&mut x, &mut rng);
    }
    let t = chi_square_goodness_of_fit(&counts, &probs);
    assert!(t.p_value > 0.001, "{t:?}");
}

#[test]
fn one_step_preserves_the_cell_histogram() {
    let s = schema();
    let idx = cell_index(&s);
    let n = cell_probs(&s).len();
    let (mut before, mut after) = (vec![0u64; n], vec![0u64; n]);
    let mut rng = orbit_stream(18, 0);
    let mut fresh = orbit_stream(18, 1);
    for _ in 0..1_000_000 {
        let mut x = sample_mu_delta(&s, &mut rng);
        s.step(&mut x, &mut rng);
        after[idx(&x)] += 1;
        before[idx(&sample_mu_delta(&s, &mut fresh))] += 1;
    }
    let t = chi_square_two_sample(&before, &after);
    assert!(t.p_value > 0.001, "{t:?}");
}

#[test]
fn canonical_observables_are_centered() {
    let towers = [
        schema(),
        TailSpec::Polynomial { beta: 1.0, r_max: 10_000 }.build(0.5, 0.5, 8).unwrap().schema,
        TailSpec::Stretched { tau: 1.0, omega: 0.5, r_max: 2_000 }.build(0.5, 0.5, 8).unwrap().schema,
    ];
    for (t, s) in towers.iter().enumerate() {
        for kind in [CanonicalKind::SymbolWeighted, CanonicalKind::LevelIndicator, CanonicalKind::PastSensitive] {
            let obs = TowerObservable::canonical(s, kind, 0.5).unwrap();
            let mut rng = orbit_stream(19, t as u64);
            let vals: Vec<f64> = (0..1_000_000)
                .map(|_| {
                    let mut x = sample_mu_delta(s, &mut rng);
                    s.ensure_future(&mut x, obs.future_lookahead() + 1, &mut rng);
                    obs.eval(&x)
                })
                .collect();
            let (m, se) = mean_and_stderr(&vals);
            assert!(m.abs() < 4.0 * se, "tower {t} {kind:?}: {m} ± {se}");
        }
    }
}
