//! Prints the exact fixture values on the two-branch tower as JSON.

use towerlab::oracle::fixture_suite;

fn main() {
    let values = fixture_suite().expect("fixture enumeration fits the budget");
    println!("{}", serde_json::to_string_pretty(&values).unwrap());
}
