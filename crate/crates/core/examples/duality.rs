//! Duality identity: exact enumeration next to the cross-fitted Monte
//! Carlo check.

use towerlab::oracle::{exact_duality, fixture_schema};
use towerlab::sampler::{CanonicalKind, TowerObservable};
use towerlab::statistics::{duality_check, CondExpSettings, MonteCarlo};

fn main() {
    let schema = fixture_schema(2);
    let obs = TowerObservable::with_depth(&schema, CanonicalKind::SymbolWeighted, 0.5, 3).unwrap();
    println!("n,p,exact_lhs,exact_rhs,mc_lhs,mc_rhs,z");
    for n in [1, 2, 4, 8] {
        for p in [1.0, 2.0, 3.0] {
            let (l, r) = exact_duality(&schema, &obs, n, p).unwrap();
            let e = duality_check(&schema, &obs, CondExpSettings::new(n, p), &MonteCarlo::new(10_000, n)).unwrap();
            println!("{n},{p},{l:.12},{r:.12},{:.6},{:.6},{:.2}", e.lhs, e.rhs, e.z_score());
        }
    }
}
