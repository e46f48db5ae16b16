//! Planted-correspondence fixtures: a random source space and a target
//! space that is a (rotated, noisy) copy of it under shuffled word labels.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::embeddings::{write_vec, EmbeddingSpace, Lexicon};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwinSpec {
    pub words: usize,
    pub dim: usize,
    /// Std of the iid Gaussian noise added to the target copy.
    pub noise: f64,
    /// Apply a random orthogonal map to the target copy.
    pub rotate: bool,
    pub seed: u64,
}

impl Default for TwinSpec {
    fn default() -> Self {
        Self {
            words: 500,
            dim: 50,
            noise: 0.0,
            rotate: true,
            seed: 0,
        }
    }
}

pub fn random_orthogonal(rng: &mut impl Rng, d: usize) -> DenseMatrix {
    let g = DenseMatrix::from_fn(d, d, |_, _| rng.sample(StandardNormal));
    let qr = g.to_nalgebra().qr();
    let (q, r) = (qr.q(), qr.r());
    // sign-fix so the draw is Haar distributed
    let mut q = DenseMatrix::from_nalgebra(&q);
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            for i in 0..d {
                let v = q.get(i, j);
                q.set(i, j, -v);
            }
        }
    }
    q
}

/// Source words are `s0…` in frequency order; target words `t0…` are a
/// relabeling, stored in shuffled row order. The lexicon lists every pair
/// in shuffled order.
pub fn twin_spaces(spec: &TwinSpec) -> (EmbeddingSpace, EmbeddingSpace, Lexicon) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, d) = (spec.words, spec.dim);
    let x = DenseMatrix::from_fn(n, d, |_, _| rng.sample(StandardNormal));
    let mut y = if spec.rotate {
        x.matmul(&random_orthogonal(&mut rng, d)).expect("conformable")
    } else {
        x.clone()
    };
    if spec.noise > 0.0 {
        let noise = DenseMatrix::from_fn(n, d, |_, _| spec.noise * rng.sample::<f64, _>(StandardNormal));
        y = y.add(&noise);
    }
    let width = n.saturating_sub(1).to_string().len();
    let src_words: Vec<String> = (0..n).map(|i| format!("s{i:0width$}")).collect();

    // label[i]: target word of source i; rows[r]: source whose copy sits at target row r
    let mut label: Vec<usize> = (0..n).collect();
    label.shuffle(&mut rng);
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut rng);
    let tgt_words: Vec<String> = rows.iter().map(|&i| format!("t{:0width$}", label[i])).collect();
    let tgt_vectors = y.select_rows(&rows);

    let mut pairs: Vec<(String, String)> = (0..n)
        .map(|i| (src_words[i].clone(), format!("t{:0width$}", label[i])))
        .collect();
    pairs.shuffle(&mut rng);

    let src = EmbeddingSpace::new(src_words, x).expect("unique words");
    let tgt = EmbeddingSpace::new(tgt_words, tgt_vectors).expect("unique words");
    (src, tgt, Lexicon::new(pairs))
}

#[derive(Clone, Debug)]
pub struct TwinFiles {
    pub src: PathBuf,
    pub tgt: PathBuf,
    pub dict: PathBuf,
    /// Same pairs, target to source.
    pub rev_dict: PathBuf,
}

/// Writes the twin fixture as `src.vec`, `tgt.vec`, `dict.txt` and
/// `dict.rev.txt` under `dir`.
pub fn write_twin_files(dir: impl AsRef<Path>, spec: &TwinSpec) -> Result<TwinFiles> {
    let dir = dir.as_ref();
    let (src, tgt, lex) = twin_spaces(spec);
    let files = TwinFiles {
        src: dir.join("src.vec"),
        tgt: dir.join("tgt.vec"),
        dict: dir.join("dict.txt"),
        rev_dict: dir.join("dict.rev.txt"),
    };
    write_vec(&src, &files.src)?;
    write_vec(&tgt, &files.tgt)?;
    let text = |pairs: &[(String, String)]| {
        pairs.iter().map(|(a, b)| format!("{a} {b}\n")).collect::<String>()
    };
    std::fs::write(&files.dict, text(&lex.pairs)).map_err(|e| Error::io(&files.dict, e))?;
    std::fs::write(&files.rev_dict, text(&lex.reversed().pairs))
        .map_err(|e| Error::io(&files.rev_dict, e))?;
    Ok(files)
}
