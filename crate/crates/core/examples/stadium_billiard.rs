//! Stadium billiard: an orbit dump, the invariance checks and the decay of
//! `cos ψ` correlations.

use towerlab::billiards::{
    billiard_observable, measure_preservation_test, reversibility_test, stadium_domain, BilliardObservableKind,
    BilliardSystem,
};
use towerlab::rng::orbit_stream;
use towerlab::statistics::{estimate_correlation, MonteCarlo};

fn main() {
    let domain = stadium_domain(1.0).unwrap();
    let start = domain.sample_liouville(&mut orbit_stream(0, 0));
    domain.write_orbit(start, 5, std::io::stdout()).unwrap();

    let inv = measure_preservation_test(&domain, 100_000, 10, 10, 1);
    println!("chi2 after 10 collisions: p = {:.3}", inv.chi_square.p_value);
    let rev = reversibility_test(&domain, 100_000, 2);
    println!("reversal error: s {:.1e}, psi {:.1e}", rev.max_s_error, rev.max_psi_error);

    let system = BilliardSystem::new(domain);
    let cos = billiard_observable(BilliardObservableKind::CosPsi);
    let ns = [1, 2, 5, 10, 20, 50, 100];
    let c = estimate_correlation(&system, &cos, &cos, &ns, &MonteCarlo::new(100_000, 3).with_threads(0)).unwrap();
    for p in &c.points {
        println!("corr n={} {:.3e} ± {:.1e}", p.n, p.value, p.stderr);
    }
}
