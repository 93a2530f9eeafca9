//! LD and MLD on the β = 1 synthetic tower, then a polynomial fit.
//!
//! `cargo run --release --example large_deviations -- 20000`

use towerlab::ratefit::fit_polynomial_rate;
use towerlab::runner::rows_to_csv;
use towerlab::sampler::{CanonicalKind, TailSpec, TowerObservable};
use towerlab::statistics::{estimate_ld_mld, MonteCarlo};
use towerlab::system::TowerSystem;

fn main() {
    let orbits = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(20_000);
    let tower = TailSpec::Polynomial { beta: 1.0, r_max: 100_000 }.build(0.5, 0.5, 32).unwrap();
    let obs = TowerObservable::canonical(&tower.schema, CanonicalKind::SymbolWeighted, 0.5).unwrap();
    let system = TowerSystem::for_observable(tower.schema, &obs);
    let ns: Vec<u64> = (4..=12).map(|k| 1 << k).collect();
    let mc = MonteCarlo::new(orbits, 7).with_threads(0);
    let (ld, mld) = estimate_ld_mld(&system, &obs, 0.25, &ns, 8192, &mc).unwrap();
    println!("# ld\n{}", rows_to_csv(&ld.points));
    println!("# mld\n{}", rows_to_csv(&mld.points));
    println!("# mld with horizon halved\n{}", rows_to_csv(&mld.meta.horizon_sensitivity));
    match fit_polynomial_rate(&mld, 64, 4096) {
        Ok(m) => println!("{}", m.to_json()),
        Err(e) => println!("fit: {e}"),
    }
}
