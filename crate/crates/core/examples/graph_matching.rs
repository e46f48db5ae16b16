//! FAQ and GOAT on a planted graph pair with noise, printing the GOAT
//! iteration trace.

use goatbli::graphmatch::{faq, run, IterationRecord, MatchProblem};
use goatbli::matrix::{DenseMatrix, PermutationMapping};
use goatbli::sinkhorn::LotParams;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> goatbli::Result<()> {
    let (n, seeds) = (150, 15);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut gx = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(0.0..1.0));
    gx = gx.add(&gx.transpose()).scale(0.5);
    let noise = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(-0.15..0.15));
    let noisy = gx.add(&noise.add(&noise.transpose()).scale(0.5));

    let mut tail: Vec<usize> = (seeds..n).collect();
    tail.shuffle(&mut rng);
    let truth = PermutationMapping::new((0..seeds).chain(tail).collect())?;
    let gy = noisy.conjugate_by(&truth.inverse());

    let accuracy = |p: &PermutationMapping| {
        (seeds..n).filter(|&i| p.apply(i) == truth.apply(i)).count() as f64 / (n - seeds) as f64
    };

    let f = faq(&MatchProblem::faq(gx.clone(), gy.clone(), seeds)?)?;
    println!("FAQ : {} iterations, recovery {:.3}", f.iterations, accuracy(&f.permutation));

    let problem = MatchProblem::goat(gx, gy, seeds, LotParams::default())?;
    let mut print = |rec: &IterationRecord| println!("  {rec}");
    let g = run(&problem, Some(&mut print))?;
    println!("GOAT: {} iterations, recovery {:.3}", g.iterations, accuracy(&g.permutation));
    Ok(())
}
