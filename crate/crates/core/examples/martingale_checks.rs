//! Pointwise recursion `M_n ≤ M_2n + C_n`, maximal-sum norms and the
//! exponential-moment scan.

use towerlab::martingale::{bs_survey, exp_moment_survey, max_norm_survey, scan_tau_prime};
use towerlab::sampler::{CanonicalKind, TailSpec, TowerObservable};
use towerlab::statistics::MonteCarlo;
use towerlab::system::TowerSystem;

fn main() {
    let poly = TailSpec::Polynomial { beta: 1.0, r_max: 100_000 }.build(0.5, 0.5, 32).unwrap();
    let obs = TowerObservable::canonical(&poly.schema, CanonicalKind::SymbolWeighted, 0.5).unwrap();
    let system = TowerSystem::for_observable(poly.schema, &obs);
    let mc = MonteCarlo::new(5_000, 3).with_threads(0);

    for row in bs_survey(&system, &obs, &[8, 16, 32, 64], 12, &mc).unwrap() {
        println!(
            "bs n={} failures={}/{} max_excess={:.3e}",
            row.n, row.failures, row.orbits, row.max_excess
        );
    }
    let ns: Vec<u64> = (5..=10).map(|k| 1 << k).collect();
    for s in max_norm_survey(&system, &obs, &ns, 3.0, 1024, &mc).unwrap() {
        println!("maxnorm n={} p=3 {:.4} ± {:.4}", s.n, s.norm_max_partial, s.norm_max_partial_stderr);
    }

    let stretched = TailSpec::Stretched { tau: 1.0, omega: 1.0, r_max: 200 }.build(0.5, 0.5, 32).unwrap();
    let obs = TowerObservable::canonical(&stretched.schema, CanonicalKind::SymbolWeighted, 0.5).unwrap();
    let system = TowerSystem::for_observable(stretched.schema, &obs);
    let grid: Vec<f64> = (1..=20).map(|k| k as f64 * 0.05).collect();
    let pts = exp_moment_survey(&system, &obs, &ns, 1.0, &grid, &mc).unwrap();
    for &n in &ns {
        println!("exp moment n={n}: largest tau' with value <= 2: {:?}", scan_tau_prime(&pts, n, 2.0));
    }
}
