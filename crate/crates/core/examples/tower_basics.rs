//! A small two-sided tower: sampling, stepping, separation times and the
//! cyclic decomposition.

use towerlab::rng::orbit_stream;
use towerlab::sampler::sample_mu_delta;
use towerlab::tower::{TowerPoint, TowerSchema};

fn main() {
    let schema = TowerSchema::new(&[(0.5, 1), (0.3, 2), (0.2, 3)], 0.5, 0.5, 8).unwrap();
    println!("mean return time {:.3}", schema.mean_return_time());
    println!("column weights {:?}", schema.column_weights());

    let mut rng = orbit_stream(1, 0);
    let mut x = sample_mu_delta(&schema, &mut rng);
    for k in 0..8 {
        println!("f^{k}: branch {} level {}", x.branch(), x.level());
        schema.step(&mut x, &mut rng);
    }

    let a = TowerPoint::base(&schema, vec![0, 1, 2, 0]).unwrap();
    let b = TowerPoint::base(&schema, vec![0, 1, 0, 0]).unwrap();
    println!("s(a, b) = {:?}", schema.separation_time(&a, &b, 4).unwrap());
    println!("d_theta(a, b) = {}", schema.d_theta(&a, &b, 4).unwrap().value);

    let even = TowerSchema::new(&[(0.5, 2), (0.5, 4)], 0.5, 0.5, 8).unwrap();
    let comp = even.gcd_decompose();
    let mut y = sample_mu_delta(&even, &mut rng);
    let cycle: Vec<u32> = (0..6)
        .map(|_| {
            let c = comp.component_of_point(&y);
            even.step(&mut y, &mut rng);
            c
        })
        .collect();
    println!("{} components, visited {:?}", comp.n_components(), cycle);

    println!("{}", toml::to_string(&schema.to_config()).unwrap());
}
