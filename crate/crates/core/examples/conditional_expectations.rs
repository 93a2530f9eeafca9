//! Conditional-expectation norms and stable-leaf diameters along `n`.

use towerlab::sampler::{CanonicalKind, TailSpec, TowerObservable};
use towerlab::statistics::{
    cond_exp_future_residual, cond_exp_past_norm, stable_diameter_sum, CondExpSettings, MonteCarlo,
};

fn main() {
    let tower = TailSpec::Stretched { tau: 1.0, omega: 1.0, r_max: 200 }.build(0.5, 0.5, 16).unwrap();
    let obs = TowerObservable::canonical(&tower.schema, CanonicalKind::SymbolWeighted, 0.5).unwrap();
    let mc = MonteCarlo::new(4_000, 5).with_threads(0);
    println!("n,past_norm,residual,stable_diam,gamma_h");
    for n in [0u64, 1, 2, 4, 8, 16] {
        let s = CondExpSettings::new(n, 2.0);
        let past = cond_exp_past_norm(&tower.schema, &obs, s, &mc).unwrap();
        let res = cond_exp_future_residual(&tower.schema, &obs, s, &mc).unwrap();
        let diam = stable_diameter_sum(&tower.schema, &obs, n, 32, &mc).unwrap();
        println!("{n},{:.5},{:.5},{:.5},{:.5}", past.value, res.value, diam.value, diam.gamma_h_mean);
    }
}
