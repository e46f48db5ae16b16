//! Orthogonal Procrustes on seed pairs, then nearest-neighbour and CSLS
//! retrieval for the remaining words.

use goatbli::matrix::DenseMatrix;
use goatbli::procrustes::{fit_orthogonal, translate, RetrievalMethod};
use goatbli::synthetic::random_orthogonal;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> goatbli::Result<()> {
    let (n, d, seeds) = (400, 30, 60);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = DenseMatrix::from_fn(n, d, |_, _| rng.sample(StandardNormal));
    let r = random_orthogonal(&mut rng, d);
    let noise = DenseMatrix::from_fn(n, d, |_, _| 0.4 * rng.sample::<f64, _>(StandardNormal));
    let y = x.matmul(&r)?.add(&noise);

    let idx: Vec<usize> = (0..seeds).collect();
    let map = fit_orthogonal(&x.select_rows(&idx), &y.select_rows(&idx))?;
    println!("‖W − R‖_F = {:.4}", map.w().sub(&r).frobenius_norm());

    for method in [RetrievalMethod::CosineNn, RetrievalMethod::Csls { k: 10 }] {
        let result = translate(&x, &map, &y, method, 1, None)?;
        let hits = (seeds..n).filter(|&i| result.best(i).map(|b| b.0) == Some(i)).count();
        println!("{method:?}: P@1 {:.1}", 100.0 * hits as f64 / (n - seeds) as f64);
    }
    Ok(())
}
