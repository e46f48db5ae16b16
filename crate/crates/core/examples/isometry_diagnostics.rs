//! Eigenvector similarity and Gromov-Hausdorff distance for a rotated copy
//! and increasingly noisy copies of one space.

use goatbli::embeddings::{preprocess, EmbeddingSpace};
use goatbli::isometry::{isometry_report, IsometryParams};
use goatbli::matrix::DenseMatrix;
use goatbli::synthetic::random_orthogonal;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> goatbli::Result<()> {
    let (n, d) = (300, 20);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let words: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
    let x = DenseMatrix::from_fn(n, d, |_, _| rng.sample(StandardNormal));
    let a = preprocess(&EmbeddingSpace::new(words.clone(), x.clone())?)?;
    let params = IsometryParams {
        gh_sample: 200,
        ..IsometryParams::default()
    };

    let rotated = x.matmul(&random_orthogonal(&mut rng, d))?;
    let b = preprocess(&EmbeddingSpace::new(words.clone(), rotated)?)?;
    let r = isometry_report(&a, &b, &words, &words, &params)?;
    println!("rotation   : EVS {:.4}  GH {:.4}", r.evs, r.gh);

    for sigma in [0.1, 0.5, 1.0] {
        let noise = DenseMatrix::from_fn(n, d, |_, _| sigma * rng.sample::<f64, _>(StandardNormal));
        let b = preprocess(&EmbeddingSpace::new(words.clone(), x.add(&noise))?)?;
        let r = isometry_report(&a, &b, &words, &words, &params)?;
        println!("noise {sigma:<4} : EVS {:.4}  GH {:.4}  (k = {})", r.evs, r.gh, r.evs_k);
    }
    Ok(())
}
