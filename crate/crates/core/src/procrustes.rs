//! Orthogonal Procrustes mapping and nearest-neighbour / CSLS retrieval.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

pub const DEFAULT_CSLS_K: usize = 10;

/// Orthogonal `d×d` map applied on the right: `x ↦ x·W`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalMap {
    w: DenseMatrix,
}

impl OrthogonalMap {
    pub fn new(w: DenseMatrix) -> Result<Self> {
        let map = Self { w };
        let err = map.orthogonality_error();
        if !map.w.is_square() || err > 1e-6 {
            return Err(Error::validation(format!(
                "matrix is not orthogonal (‖WᵀW − I‖ = {err:e})"
            )));
        }
        Ok(map)
    }

    pub fn identity(d: usize) -> Self {
        Self {
            w: DenseMatrix::identity(d),
        }
    }

    pub fn w(&self) -> &DenseMatrix {
        &self.w
    }

    pub fn dim(&self) -> usize {
        self.w.rows()
    }

    /// `‖WᵀW − I‖_F`.
    pub fn orthogonality_error(&self) -> f64 {
        if !self.w.is_square() {
            return f64::INFINITY;
        }
        let wtw = self.w.t_matmul(&self.w).expect("square");
        wtw.sub(&DenseMatrix::identity(self.dim())).frobenius_norm()
    }

    pub fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        x.matmul(&self.w)
    }

    /// `‖X̄·W − Ȳ‖²_F`.
    pub fn residual(&self, xbar: &DenseMatrix, ybar: &DenseMatrix) -> Result<f64> {
        Ok(self.apply(xbar)?.sub(ybar).frobenius_norm_sq())
    }
}

/// Orthogonal `W` minimizing `‖X̄·W − Ȳ‖_F`: with `Ȳᵀ·X̄ = U·Σ·Vᵀ`, `W = V·Uᵀ`.
pub fn fit_orthogonal(xbar: &DenseMatrix, ybar: &DenseMatrix) -> Result<OrthogonalMap> {
    if xbar.rows() != ybar.rows() || xbar.cols() != ybar.cols() {
        return Err(Error::shape(format!(
            "seed matrices are {}x{} and {}x{}",
            xbar.rows(),
            xbar.cols(),
            ybar.rows(),
            ybar.cols()
        )));
    }
    if xbar.rows() == 0 {
        return Err(Error::domain("no seed pairs to fit on"));
    }
    let m = ybar.t_matmul(xbar)?.to_nalgebra();
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Numerical("SVD did not converge".into())),
    };
    let w = v_t.transpose() * u.transpose();
    Ok(OrthogonalMap {
        w: DenseMatrix::from_nalgebra(&w),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RetrievalMethod {
    CosineNn,
    Csls { k: usize },
}

impl Default for RetrievalMethod {
    fn default() -> Self {
        RetrievalMethod::Csls { k: DEFAULT_CSLS_K }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub method: RetrievalMethod,
    /// Per source row, `(target row, score)` best first.
    pub ranked: Vec<Vec<(usize, f64)>>,
}

impl RetrievalResult {
    pub fn best(&self, source: usize) -> Option<(usize, f64)> {
        self.ranked.get(source).and_then(|r| r.first().copied())
    }
}

fn unit_rows(m: &DenseMatrix) -> DenseMatrix {
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

/// Cosine similarities between rows, `n_x × n_y`.
pub fn cosine_matrix(x: &DenseMatrix, y: &DenseMatrix) -> Result<DenseMatrix> {
    if x.cols() != y.cols() {
        return Err(Error::shape(format!(
            "dimension {} vs {}",
            x.cols(),
            y.cols()
        )));
    }
    unit_rows(x).matmul_t(&unit_rows(y))
}

fn mean_top_k(values: &mut [f64], k: usize) -> f64 {
    let by_desc = |a: &f64, b: &f64| b.total_cmp(a);
    if k < values.len() {
        values.select_nth_unstable_by(k - 1, by_desc);
    }
    values[..k].iter().sum::<f64>() / k as f64
}

/// `CSLS(x, y) = 2·cos(x, y) − r_Y(x) − r_X(y)`, with `r` the mean cosine
/// to the `k` nearest rows on the other side.
pub fn csls_matrix(x: &DenseMatrix, y: &DenseMatrix, k: usize) -> Result<DenseMatrix> {
    if k == 0 || k >= x.rows() || k >= y.rows() {
        return Err(Error::domain(format!(
            "CSLS k = {k} must be in 1..{}",
            x.rows().min(y.rows())
        )));
    }
    let cos = cosine_matrix(x, y)?;
    let r_y: Vec<f64> = (0..cos.rows())
        .map(|i| mean_top_k(&mut cos.row(i).to_vec(), k))
        .collect();
    let cos_t = cos.transpose();
    let r_x: Vec<f64> = (0..cos_t.rows())
        .map(|j| mean_top_k(&mut cos_t.row(j).to_vec(), k))
        .collect();
    Ok(DenseMatrix::from_fn(cos.rows(), cos.cols(), |i, j| {
        2.0 * cos.get(i, j) - r_y[i] - r_x[j]
    }))
}

fn rank_rows(scores: &DenseMatrix, top: usize, labels: Option<&[usize]>) -> Vec<Vec<(usize, f64)>> {
    (0..scores.rows())
        .map(|i| {
            let mut row: Vec<(usize, f64)> = scores.row(i).iter().copied().enumerate().collect();
            let order = |a: &(usize, f64), b: &(usize, f64)| {
                b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
            };
            let keep = top.min(row.len());
            if keep < row.len() && keep > 0 {
                row.select_nth_unstable_by(keep - 1, order);
                row.truncate(keep);
            } else {
                row.truncate(keep);
            }
            row.sort_by(order);
            if let Some(labels) = labels {
                row.iter_mut().for_each(|e| e.0 = labels[e.0]);
            }
            row
        })
        .collect()
}

/// Ranks all `y` rows for every `mapped_x` row by CSLS, keeping the best `top`.
pub fn csls_scores(
    mapped_x: &DenseMatrix,
    y: &DenseMatrix,
    k: usize,
    top: usize,
) -> Result<RetrievalResult> {
    let scores = csls_matrix(mapped_x, y, k)?;
    Ok(RetrievalResult {
        method: RetrievalMethod::Csls { k },
        ranked: rank_rows(&scores, top, None),
    })
}

/// Maps `x` through `map` and ranks target rows by `method`.
///
/// `candidates` restricts retrieval to those rows of `y`; returned indices
/// are still rows of `y`. An empty restriction yields empty lists.
pub fn translate(
    x: &DenseMatrix,
    map: &OrthogonalMap,
    y: &DenseMatrix,
    method: RetrievalMethod,
    top: usize,
    candidates: Option<&[usize]>,
) -> Result<RetrievalResult> {
    if x.cols() != map.dim() || y.cols() != map.dim() {
        return Err(Error::shape(format!(
            "map is {0}x{0}, spaces have dimension {1} and {2}",
            map.dim(),
            x.cols(),
            y.cols()
        )));
    }
    let mapped = map.apply(x)?;
    let restricted;
    let targets = match candidates {
        Some(c) => {
            if let Some(&bad) = c.iter().find(|&&j| j >= y.rows()) {
                return Err(Error::validation(format!("candidate row {bad} out of range")));
            }
            restricted = y.select_rows(c);
            &restricted
        }
        None => y,
    };
    if targets.rows() == 0 {
        return Ok(RetrievalResult {
            method,
            ranked: vec![Vec::new(); x.rows()],
        });
    }
    let scores = match method {
        RetrievalMethod::CosineNn => cosine_matrix(&mapped, targets)?,
        RetrievalMethod::Csls { k } => csls_matrix(&mapped, targets, k)?,
    };
    Ok(RetrievalResult {
        method,
        ranked: rank_rows(&scores, top, candidates),
    })
}

const BLOCK: usize = 2048;

/// Best target per source row without materializing the full score matrix.
///
/// Same scores as [`translate`] with `top = 1`, computed over blocks of
/// target rows. `None` when there are no candidates.
pub fn nearest(
    mapped_x: &DenseMatrix,
    y: &DenseMatrix,
    method: RetrievalMethod,
    candidates: Option<&[usize]>,
) -> Result<Vec<Option<(usize, f64)>>> {
    if mapped_x.cols() != y.cols() {
        return Err(Error::shape(format!(
            "dimension {} vs {}",
            mapped_x.cols(),
            y.cols()
        )));
    }
    let all: Vec<usize>;
    let cand = match candidates {
        Some(c) => {
            if let Some(&bad) = c.iter().find(|&&j| j >= y.rows()) {
                return Err(Error::validation(format!("candidate row {bad} out of range")));
            }
            c
        }
        None => {
            all = (0..y.rows()).collect();
            &all
        }
    };
    let nx = mapped_x.rows();
    if cand.is_empty() {
        return Ok(vec![None; nx]);
    }
    let xu = unit_rows(mapped_x);
    let block_sims = |start: usize| {
        let end = (start + BLOCK).min(cand.len());
        let yb = unit_rows(&y.select_rows(&cand[start..end]));
        xu.matmul_t(&yb).expect("equal dimension")
    };

    let (r_y, r_x) = match method {
        RetrievalMethod::CosineNn => (vec![0.0; nx], vec![0.0; cand.len()]),
        RetrievalMethod::Csls { k } => {
            if k == 0 || k >= nx || k >= cand.len() {
                return Err(Error::domain(format!(
                    "CSLS k = {k} must be in 1..{}",
                    nx.min(cand.len())
                )));
            }
            let mut tops: Vec<Vec<f64>> = vec![Vec::with_capacity(k + 1); nx];
            let mut r_x = Vec::with_capacity(cand.len());
            for start in (0..cand.len()).step_by(BLOCK) {
                let sims = block_sims(start);
                for (i, top) in tops.iter_mut().enumerate() {
                    for &v in sims.row(i) {
                        if top.len() < k {
                            top.push(v);
                            top.sort_by(|a, b| b.total_cmp(a));
                        } else if v > top[k - 1] {
                            top[k - 1] = v;
                            top.sort_by(|a, b| b.total_cmp(a));
                        }
                    }
                }
                let st = sims.transpose();
                for j in 0..st.rows() {
                    r_x.push(mean_top_k(&mut st.row(j).to_vec(), k));
                }
            }
            let r_y = tops.iter().map(|t| t.iter().sum::<f64>() / k as f64).collect();
            (r_y, r_x)
        }
    };
    let csls = matches!(method, RetrievalMethod::Csls { .. });
    let mut best: Vec<(usize, f64)> = vec![(0, f64::NEG_INFINITY); nx];
    for start in (0..cand.len()).step_by(BLOCK) {
        let sims = block_sims(start);
        for (i, b) in best.iter_mut().enumerate() {
            for (off, &c) in sims.row(i).iter().enumerate() {
                let j = start + off;
                let score = if csls { 2.0 * c - r_y[i] - r_x[j] } else { c };
                if score > b.1 {
                    *b = (j, score);
                }
            }
        }
    }
    Ok(best.into_iter().map(|(j, s)| Some((cand[j], s))).collect())
}

/// Best target row per source row (ties to the lower index).
pub fn argmax_rows(scores: &DenseMatrix) -> Vec<usize> {
    (0..scores.rows())
        .map(|i| {
            scores
                .row(i)
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &v)| {
                    if v.partial_cmp(&best.1) == Some(Ordering::Greater) {
                        (j, v)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect()
}
