//! Synthetic towers with polynomial and stretched-exponential return tails.

use towerlab::sampler::TailSpec;

fn main() {
    let specs = [
        TailSpec::Polynomial { beta: 1.0, r_max: 10_000 },
        TailSpec::Polynomial { beta: 2.0, r_max: 10_000 },
        TailSpec::Stretched { tau: 1.0, omega: 0.5, r_max: 5_000 },
    ];
    for spec in specs {
        let t = spec.build(0.5, 0.5, 32).unwrap();
        println!(
            "{spec:?}: {} branches, truncated mass {:.3e}, r_max_effective {}",
            t.schema.n_branches(),
            t.truncated_mass,
            t.r_max_effective
        );
        println!("  n, tail, closed form");
        for n in [1, 10, 100, 1000] {
            println!("  {n}, {:.6e}, {:.6e}", t.tail(n), t.tail_closed_form(n));
        }
    }
}
