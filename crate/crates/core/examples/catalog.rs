//! Predicted tail and MLD exponents for billiard families.

use towerlab::billiards::{example_catalog, BetaValue};

fn main() {
    for name in ["stadium", "semidispersing", "cusps", "flat_cusps", "flowers", "flat_points(6)", "flat_points(3)"] {
        let e = example_catalog(name).unwrap();
        let rates = match e.beta {
            BetaValue::Exact(b) => format!("tails n^-{}, mld n^-{b}", b + 1.0),
            BetaValue::Range(lo, hi) => format!("tails n^-(beta+1), mld n^-beta, beta in ({lo}, {hi})"),
        };
        println!("{:<16} {:<48} executable={} ({})", e.family, rates, e.executable, e.parameter_note);
    }
}
