//! Exact linear assignment on a small gradient matrix with two optimal
//! permutations.

use goatbli::lap::{solve_lap_max, solve_lap_min};
use goatbli::matrix::DenseMatrix;

fn main() -> goatbli::Result<()> {
    let grad = DenseMatrix::from_rows(&[[0.0, 3.0, 0.0], [2.0, 1.0, 2.0], [0.0, 0.0, 0.0]])?;
    let best = solve_lap_max(&grad)?;
    println!("max assignment {:?} value {}", best.permutation.image(), best.value);

    let cost = DenseMatrix::from_rows(&[[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]])?;
    let cheapest = solve_lap_min(&cost)?;
    println!("min assignment {:?} cost {}", cheapest.permutation.image(), cheapest.value);
    Ok(())
}
