//! Isomorphism diagnostics between two embedding spaces.
//!
//! * Eigenvector similarity: squared distance between the leading Laplacian
//!   spectra of the two symmetrized cosine knn graphs.
//! * Gromov-Hausdorff estimate: Hausdorff distance between sampled unit
//!   vectors after the best orthogonal alignment.
//!
//! Lower is more isometric for both.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingSpace;
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::procrustes::{cosine_matrix, fit_orthogonal};

pub const DEFAULT_KNN: usize = 10;
pub const DEFAULT_GH_SAMPLE: usize = 2000;
pub const MIN_GH_SAMPLE: usize = 10;
/// Share of the Laplacian spectrum the compared eigenvalues must cover.
pub const SPECTRAL_MASS: f64 = 0.9;
const REFINE_ROUNDS: usize = 5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Laplacian {
    /// `L = D − A`
    #[default]
    Unnormalized,
    /// `L = I − D^{-1/2}·A·D^{-1/2}`
    Normalized,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsometryParams {
    pub knn: usize,
    pub laplacian: Laplacian,
    pub gh_sample: usize,
    pub seed: u64,
}

impl Default for IsometryParams {
    fn default() -> Self {
        Self {
            knn: DEFAULT_KNN,
            laplacian: Laplacian::Unnormalized,
            gh_sample: DEFAULT_GH_SAMPLE,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsometryReport {
    pub evs: f64,
    pub gh: f64,
    /// Number of leading eigenvalues compared.
    pub evs_k: usize,
    pub subset_size: usize,
    pub params: IsometryParams,
}

fn rows<S: AsRef<str>>(space: &EmbeddingSpace, subset: &[S]) -> Result<DenseMatrix> {
    space.rows_for(subset)
}

/// 0/1 adjacency joining each row to its `knn` most cosine-similar rows,
/// symmetrized.
pub fn knn_graph(x: &DenseMatrix, knn: usize) -> Result<DenseMatrix> {
    let n = x.rows();
    if knn == 0 || knn >= n {
        return Err(Error::domain(format!("knn = {knn} must be in 1..{n}")));
    }
    let cos = cosine_matrix(x, x)?;
    let mut adj = DenseMatrix::zeros(n, n);
    for i in 0..n {
        let mut cand: Vec<(usize, f64)> = cos
            .row(i)
            .iter()
            .copied()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .collect();
        let order = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
        if knn < cand.len() {
            cand.select_nth_unstable_by(knn - 1, order);
        }
        for &(j, _) in &cand[..knn] {
            adj.set(i, j, 1.0);
            adj.set(j, i, 1.0);
        }
    }
    Ok(adj)
}

pub fn laplacian(adj: &DenseMatrix, kind: Laplacian) -> DenseMatrix {
    let n = adj.rows();
    let deg = adj.row_sums();
    DenseMatrix::from_fn(n, n, |i, j| {
        let a = adj.get(i, j);
        match kind {
            Laplacian::Unnormalized => {
                if i == j {
                    deg[i] - a
                } else {
                    -a
                }
            }
            Laplacian::Normalized => {
                let s = (deg[i] * deg[j]).sqrt();
                let off = if s > 0.0 { a / s } else { 0.0 };
                if i == j {
                    1.0 - off
                } else {
                    -off
                }
            }
        }
    })
}

/// Eigenvalues of a symmetric matrix, largest first.
pub fn spectrum(m: &DenseMatrix) -> Vec<f64> {
    let mut ev: Vec<f64> = m.to_nalgebra().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// Smallest `k` whose `k` largest values hold `SPECTRAL_MASS` of the total.
pub fn mass_cutoff(spectrum: &[f64]) -> usize {
    let total: f64 = spectrum.iter().map(|v| v.max(0.0)).sum();
    if total <= 0.0 {
        return spectrum.len().min(1);
    }
    let mut acc = 0.0;
    for (i, v) in spectrum.iter().enumerate() {
        acc += v.max(0.0);
        if acc >= SPECTRAL_MASS * total {
            return i + 1;
        }
    }
    spectrum.len()
}

/// `(Σ_{i≤k} (λᵢᴬ − λᵢᴮ)², k)` over the leading Laplacian eigenvalues.
pub fn eigenvector_similarity_detailed<S: AsRef<str>>(
    a: &EmbeddingSpace,
    b: &EmbeddingSpace,
    subset_a: &[S],
    subset_b: &[S],
    knn: usize,
    kind: Laplacian,
) -> Result<(f64, usize)> {
    if subset_a.len() != subset_b.len() {
        return Err(Error::domain(format!(
            "subset sizes differ: {} vs {}",
            subset_a.len(),
            subset_b.len()
        )));
    }
    let sa = spectrum(&laplacian(&knn_graph(&rows(a, subset_a)?, knn)?, kind));
    let sb = spectrum(&laplacian(&knn_graph(&rows(b, subset_b)?, knn)?, kind));
    let k = mass_cutoff(&sa).max(mass_cutoff(&sb));
    let evs = sa[..k].iter().zip(&sb[..k]).map(|(x, y)| (x - y).powi(2)).sum();
    Ok((evs, k))
}

pub fn eigenvector_similarity<S: AsRef<str>>(
    a: &EmbeddingSpace,
    b: &EmbeddingSpace,
    subset_a: &[S],
    subset_b: &[S],
    knn: usize,
) -> Result<f64> {
    eigenvector_similarity_detailed(a, b, subset_a, subset_b, knn, Laplacian::Unnormalized)
        .map(|r| r.0)
}

fn unit(m: &DenseMatrix) -> DenseMatrix {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

/// Squared Euclidean distances between rows.
fn sq_distances(x: &DenseMatrix, y: &DenseMatrix) -> DenseMatrix {
    let nx: Vec<f64> = (0..x.rows()).map(|i| x.row(i).iter().map(|v| v * v).sum()).collect();
    let ny: Vec<f64> = (0..y.rows()).map(|j| y.row(j).iter().map(|v| v * v).sum()).collect();
    let g = x.matmul_t(y).expect("equal dimension");
    DenseMatrix::from_fn(x.rows(), y.rows(), |i, j| (nx[i] + ny[j] - 2.0 * g.get(i, j)).max(0.0))
}

fn row_argmin(d: &DenseMatrix) -> Vec<usize> {
    (0..d.rows())
        .map(|i| {
            d.row(i)
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |b, (j, &v)| if v < b.1 { (j, v) } else { b })
                .0
        })
        .collect()
}

fn hausdorff(d: &DenseMatrix) -> f64 {
    let rows = (0..d.rows()).map(|i| d.row(i).iter().copied().fold(f64::INFINITY, f64::min));
    let dt = d.transpose();
    let cols = (0..dt.rows()).map(|j| dt.row(j).iter().copied().fold(f64::INFINITY, f64::min));
    rows.chain(cols).fold(0.0, f64::max).sqrt()
}

/// Hausdorff distance between `sample` paired points of the two subsets
/// after orthogonal alignment. The map is first fit on the sampled pairs,
/// then refit on mutual nearest neighbours of the aligned samples.
pub fn gromov_hausdorff<S: AsRef<str>>(
    a: &EmbeddingSpace,
    b: &EmbeddingSpace,
    subset_a: &[S],
    subset_b: &[S],
    sample_size: usize,
    seed: u64,
) -> Result<f64> {
    if subset_a.len() != subset_b.len() {
        return Err(Error::domain(format!(
            "subset sizes differ: {} vs {}",
            subset_a.len(),
            subset_b.len()
        )));
    }
    if sample_size < MIN_GH_SAMPLE {
        return Err(Error::domain(format!(
            "GH sample {sample_size} is below the minimum of {MIN_GH_SAMPLE}"
        )));
    }
    if sample_size > subset_a.len() {
        return Err(Error::domain(format!(
            "GH sample {sample_size} exceeds subset size {}",
            subset_a.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, subset_a.len(), sample_size).into_vec();
    picked.sort_unstable();
    let xa = unit(&rows(a, subset_a)?.select_rows(&picked));
    let xb = unit(&rows(b, subset_b)?.select_rows(&picked));

    let mut map = fit_orthogonal(&xa, &xb)?;
    for _ in 0..REFINE_ROUNDS {
        let d = sq_distances(&map.apply(&xa)?, &xb);
        let fwd = row_argmin(&d);
        let back = row_argmin(&d.transpose());
        let pairs: Vec<(usize, usize)> = fwd
            .iter()
            .enumerate()
            .filter(|&(i, &j)| back[j] == i)
            .map(|(i, &j)| (i, j))
            .collect();
        if pairs.len() < MIN_GH_SAMPLE {
            break;
        }
        let (ia, ib): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let refit = fit_orthogonal(&xa.select_rows(&ia), &xb.select_rows(&ib))?;
        let before = hausdorff(&d);
        let after = hausdorff(&sq_distances(&refit.apply(&xa)?, &xb));
        if after >= before {
            break;
        }
        map = refit;
    }
    Ok(hausdorff(&sq_distances(&map.apply(&xa)?, &xb)))
}

pub fn isometry_report<S: AsRef<str>>(
    a: &EmbeddingSpace,
    b: &EmbeddingSpace,
    subset_a: &[S],
    subset_b: &[S],
    params: &IsometryParams,
) -> Result<IsometryReport> {
    let (evs, evs_k) =
        eigenvector_similarity_detailed(a, b, subset_a, subset_b, params.knn, params.laplacian)?;
    let gh = gromov_hausdorff(a, b, subset_a, subset_b, params.gh_sample, params.seed)?;
    Ok(IsometryReport {
        evs,
        gh,
        evs_k,
        subset_size: subset_a.len(),
        params: *params,
    })
}
