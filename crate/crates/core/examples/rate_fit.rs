//! Fitting rate families and the majorization constant.

use towerlab::ratefit::{
    fit_polynomial_rate, fit_stretched_rate, majorization_ratio, omega_prime, r_prime, RateModel,
};
use towerlab::statistics::{DecayEstimate, DecayPoint};

fn main() {
    let noisy = |f: &dyn Fn(f64) -> f64| {
        DecayEstimate::from_points(
            (4..=12)
                .map(|k| {
                    let n = 1u64 << k;
                    let v = f(n as f64) * (1.0 + 0.02 * ((k as f64).sin()));
                    DecayPoint { n, value: v, stderr: 0.02 * v, samples: 1_000_000 }
                })
                .collect(),
        )
    };
    let poly = fit_polynomial_rate(&noisy(&|n| 3.0 / n), 16, 4096).unwrap();
    println!("{}", poly.to_json());
    let stretched = fit_stretched_rate(&noisy(&|n| (-0.7 * n.powf(0.4)).exp()), 16, 4096).unwrap();
    println!("{}", stretched.to_json());

    let w = omega_prime(0.4).unwrap();
    let model = RateModel::stretched(0.7, w, Some(0.5));
    println!("omega' = {w:.4}, r'(0.1, 256) = {:.4e}", r_prime(&model, 0.1, 256).unwrap());
    let est = noisy(&|n| (-0.05 * n.powf(w / 2.0)).exp());
    println!("majorization ratio {:.3}", majorization_ratio(&est, &model, 0.1).unwrap());
    match r_prime(&RateModel::polynomial(1.0, Some(2.0)), 0.1, 10) {
        Err(e) => println!("p = 2 with beta = 1: {e}"),
        Ok(v) => println!("unexpected {v}"),
    }
}
