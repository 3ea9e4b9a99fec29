//! Minimum-cost assignment, and decoding a score matrix into a placement.

use ndarray::array;
use vlhsa::assignment::{assignment_cost, decode, hungarian};

fn main() -> vlhsa::Result<()> {
    let cost = array![[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]];
    let sigma = hungarian(&cost)?;
    println!("assignment {:?}, cost {}", sigma.as_slice(), assignment_cost(&cost, &sigma));

    // scores are maximized: row i is piece i, column j is cell j
    let scores = array![[0.1, 0.9, 0.0], [0.8, 0.7, 0.1], [0.2, 0.3, 0.6]];
    let placement = decode(&scores)?;
    println!("piece -> cell {:?}", placement.as_slice());
    Ok(())
}
