//! Dense matrices, permutations and doubly stochastic matrices, plus the
//! quadratic-assignment objective every solver in the crate shares.
//!
//! Storage is row-major `f64`. Constructors reject non-finite entries; the
//! arithmetic helpers assume their inputs came through a constructor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major real matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} values for a {rows}x{cols} matrix",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "non-finite entry at ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            values.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, values)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(value.is_finite());
        Self {
            rows,
            cols,
            values: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from a generator. Panics if the generator yields a
    /// non-finite value.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                let v = f(i, j);
                assert!(v.is_finite(), "non-finite entry at ({i}, {j})");
                values.push(v);
            }
        }
        Self { rows, cols, values }
    }

    pub(crate) fn from_vec_unchecked(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), rows * cols);
        Self { rows, cols, values }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.values[j * self.rows + i] = self.values[i * self.cols + j];
            }
        }
        out
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(gemm(self, false, other, false))
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::shape(format!(
                "cannot multiply {}x{} by ({}x{})^T",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(gemm(self, false, other, true))
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::shape(format!(
                "cannot multiply ({}x{})^T by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(gemm(self, true, other, false))
    }

    /// Frobenius inner product `Σ a_ij b_ij`, i.e. `trace(selfᵀ · other)`.
    pub fn dot(&self, other: &Self) -> f64 {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (s, v) in sums.iter_mut().zip(self.row(i)) {
                *s += v;
            }
        }
        sums
    }

    pub fn sub(&self, other: &Self) -> Self {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Self::from_vec_unchecked(self.rows, self.cols, values)
    }

    pub fn add(&self, other: &Self) -> Self {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        Self::from_vec_unchecked(self.rows, self.cols, values)
    }

    pub fn scale(&self, c: f64) -> Self {
        Self::from_vec_unchecked(
            self.rows,
            self.cols,
            self.values.iter().map(|v| v * c).collect(),
        )
    }

    /// `alpha·a + (1 − alpha)·b`.
    pub fn convex_combination(alpha: f64, a: &Self, b: &Self) -> Self {
        debug_assert_eq!((a.rows, a.cols), (b.rows, b.cols));
        let values = a
            .values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| alpha * x + (1.0 - alpha) * y)
            .collect();
        Self::from_vec_unchecked(a.rows, a.cols, values)
    }

    /// Submatrix with the given rows and columns, in the given order.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut values = Vec::with_capacity(rows.len() * cols.len());
        for &i in rows {
            let r = self.row(i);
            values.extend(cols.iter().map(|&j| r[j]));
        }
        Self::from_vec_unchecked(rows.len(), cols.len(), values)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut values = Vec::with_capacity(rows.len() * self.cols);
        for &i in rows {
            values.extend_from_slice(self.row(i));
        }
        Self::from_vec_unchecked(rows.len(), self.cols, values)
    }

    /// `R · self · Rᵀ` for the permutation matrix of `perm`: entry `(i, j)` of
    /// the result is `self[perm(i), perm(j)]`.
    pub fn conjugate_by(&self, perm: &PermutationMapping) -> Self {
        let idx = perm.image();
        self.select(idx, idx)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.is_square()
            && (0..self.rows)
                .all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn to_nalgebra(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.values)
    }

    pub fn from_nalgebra(m: &nalgebra::DMatrix<f64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }
}

fn gemm(a: &DenseMatrix, ta: bool, b: &DenseMatrix, tb: bool) -> DenseMatrix {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let n = if tb { b.rows } else { b.cols };
    let (rsa, csa) = if ta { (1, a.cols) } else { (a.cols, 1) };
    let (rsb, csb) = if tb { (1, b.cols) } else { (b.cols, 1) };
    let mut c = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return DenseMatrix::from_vec_unchecked(m, n, c);
    }
    // SAFETY: the pointers and strides describe the full, in-bounds extents of
    // `a`, `b` and the freshly allocated `c`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.values.as_ptr(),
            rsa as isize,
            csa as isize,
            b.values.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    DenseMatrix::from_vec_unchecked(m, n, c)
}

/// A bijection on `{0..n-1}`; `image[i] = j` matches row `i` to column `j`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PermutationMapping {
    image: Vec<usize>,
}

impl PermutationMapping {
    pub fn new(image: Vec<usize>) -> Result<Self> {
        let n = image.len();
        let mut seen = vec![false; n];
        for &j in &image {
            if j >= n || seen[j] {
                return Err(Error::validation(format!(
                    "{image:?} is not a permutation of 0..{n}"
                )));
            }
            seen[j] = true;
        }
        Ok(Self { image })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            image: (0..n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.image.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image.is_empty()
    }

    pub fn image(&self) -> &[usize] {
        &self.image
    }

    #[inline]
    pub fn apply(&self, i: usize) -> usize {
        self.image[i]
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.image.len()];
        for (i, &j) in self.image.iter().enumerate() {
            inv[j] = i;
        }
        Self { image: inv }
    }

    /// `i ↦ outer(self(i))`.
    pub fn then(&self, outer: &Self) -> Self {
        Self {
            image: self.image.iter().map(|&j| outer.image[j]).collect(),
        }
    }

    pub fn to_matrix(&self) -> DenseMatrix {
        let n = self.image.len();
        let mut m = DenseMatrix::zeros(n, n);
        for (i, &j) in self.image.iter().enumerate() {
            m.set(i, j, 1.0);
        }
        m
    }

    /// Strict inverse of [`Self::to_matrix`]: every entry must be within 1e-9
    /// of 0 or 1, with exactly one 1 per row and column.
    pub fn from_matrix_strict(m: &DenseMatrix) -> Result<Self> {
        const TOL: f64 = 1e-9;
        if !m.is_square() {
            return Err(Error::shape(format!(
                "{}x{} matrix is not square",
                m.rows(),
                m.cols()
            )));
        }
        let mut image = Vec::with_capacity(m.rows());
        for i in 0..m.rows() {
            let mut hit = None;
            for (j, &v) in m.row(i).iter().enumerate() {
                if (v - 1.0).abs() <= TOL {
                    if hit.is_some() {
                        return Err(Error::validation(format!("row {i} has two ones")));
                    }
                    hit = Some(j);
                } else if v.abs() > TOL {
                    return Err(Error::validation(format!(
                        "entry ({i}, {j}) = {v} is neither 0 nor 1"
                    )));
                }
            }
            image.push(hit.ok_or_else(|| Error::validation(format!("row {i} has no one")))?);
        }
        Self::new(image)
    }
}

/// Nonnegative square matrix whose row and column sums are within
/// `tolerance` of one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoublyStochasticMatrix {
    matrix: DenseMatrix,
    tolerance: f64,
}

impl DoublyStochasticMatrix {
    pub fn new(matrix: DenseMatrix, tolerance: f64) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::shape(format!(
                "{}x{} matrix is not square",
                matrix.rows(),
                matrix.cols()
            )));
        }
        if let Some(v) = matrix.as_slice().iter().find(|v| **v < 0.0) {
            return Err(Error::validation(format!("negative entry {v}")));
        }
        let viol = marginal_violation(&matrix);
        if viol > tolerance {
            return Err(Error::validation(format!(
                "marginal violation {viol:e} exceeds tolerance {tolerance:e}"
            )));
        }
        Ok(Self { matrix, tolerance })
    }

    pub(crate) fn new_unchecked(matrix: DenseMatrix, tolerance: f64) -> Self {
        Self { matrix, tolerance }
    }

    pub fn size(&self) -> usize {
        self.matrix.rows()
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.matrix
    }
}

impl AsRef<DenseMatrix> for DoublyStochasticMatrix {
    fn as_ref(&self) -> &DenseMatrix {
        &self.matrix
    }
}

/// Largest deviation of any row or column sum from one.
pub fn marginal_violation(m: &DenseMatrix) -> f64 {
    m.row_sums()
        .into_iter()
        .chain(m.col_sums())
        .fold(0.0f64, |acc, s| acc.max((s - 1.0).abs()))
}

/// The flat matrix `J/n`.
pub fn barycenter(n: usize) -> Result<DoublyStochasticMatrix> {
    if n == 0 {
        return Err(Error::domain("barycenter of an empty matrix"));
    }
    Ok(DoublyStochasticMatrix::new_unchecked(
        DenseMatrix::filled(n, n, 1.0 / n as f64),
        1e-12,
    ))
}

fn check_square_triple(gx: &DenseMatrix, gy: &DenseMatrix, p: &DenseMatrix) -> Result<()> {
    let n = gx.rows();
    for (name, m) in [("gx", gx), ("gy", gy), ("p", p)] {
        if m.rows() != n || m.cols() != n {
            return Err(Error::shape(format!(
                "{name} is {}x{}, expected {n}x{n}",
                m.rows(),
                m.cols()
            )));
        }
    }
    Ok(())
}

/// `trace(Gxᵀ · P · Gy · Pᵀ)`, evaluated as `⟨Gx·P, P·Gy⟩`.
pub fn qap_objective(gx: &DenseMatrix, gy: &DenseMatrix, p: &DenseMatrix) -> Result<f64> {
    check_square_triple(gx, gy, p)?;
    let gx_p = gemm(gx, false, p, false);
    let p_gy = gemm(p, false, gy, false);
    Ok(gx_p.dot(&p_gy))
}

/// `‖Gx − P·Gy·Pᵀ‖²_F` for a permutation `P`.
pub fn edge_disagreement(gx: &DenseMatrix, gy: &DenseMatrix, p: &PermutationMapping) -> Result<f64> {
    let n = gx.rows();
    if !gx.is_square() || !gy.is_square() || gy.rows() != n || p.len() != n {
        return Err(Error::shape(format!(
            "gx {}x{}, gy {}x{}, permutation of {}",
            gx.rows(),
            gx.cols(),
            gy.rows(),
            gy.cols(),
            p.len()
        )));
    }
    let mut total = 0.0;
    for i in 0..n {
        let pi = p.apply(i);
        let gy_row = gy.row(pi);
        for (j, &x) in gx.row(i).iter().enumerate() {
            let d = x - gy_row[p.apply(j)];
            total += d * d;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(rows).unwrap()
    }

    fn all_perms(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in all_perms(n - 1) {
            for pos in 0..n {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn constructor_rejects_non_finite() {
        assert!(DenseMatrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(DenseMatrix::new(1, 1, vec![f64::INFINITY]).is_err());
        assert!(matches!(
            DenseMatrix::new(2, 2, vec![1.0]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn objective_identity_graphs_is_n() {
        let i3 = DenseMatrix::identity(3);
        for img in all_perms(3) {
            let p = PermutationMapping::new(img).unwrap().to_matrix();
            assert_eq!(qap_objective(&i3, &i3, &p).unwrap(), 3.0);
        }
    }

    #[test]
    fn objective_small_cases() {
        let swap = m(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let i2 = DenseMatrix::identity(2);
        assert_eq!(qap_objective(&swap, &swap, &i2).unwrap(), 2.0);

        let gx = m(&[&[0.0, 2.0], &[2.0, 0.0]]);
        assert_eq!(qap_objective(&gx, &swap, &i2).unwrap(), 4.0);
        assert_eq!(qap_objective(&gx, &swap, &swap).unwrap(), 4.0);
    }

    #[test]
    fn objective_shape_error() {
        let a = DenseMatrix::identity(2);
        let b = DenseMatrix::identity(3);
        assert!(matches!(qap_objective(&a, &b, &a), Err(Error::Shape(_))));
        let p = PermutationMapping::identity(3);
        assert!(matches!(edge_disagreement(&a, &a, &p), Err(Error::Shape(_))));
    }

    #[test]
    fn disagreement_small_cases() {
        let swap = m(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let id = PermutationMapping::identity(2);
        assert_eq!(edge_disagreement(&swap, &swap, &id).unwrap(), 0.0);
        assert_eq!(
            edge_disagreement(&swap, &DenseMatrix::zeros(2, 2), &id).unwrap(),
            2.0
        );
    }

    #[test]
    fn disagreement_planted_is_zero() {
        let g = m(&[
            &[0.0, 0.3, 0.9, 0.1],
            &[0.3, 0.0, 0.4, 0.7],
            &[0.9, 0.4, 0.0, 0.2],
            &[0.1, 0.7, 0.2, 0.0],
        ]);
        let sigma = PermutationMapping::new(vec![2, 0, 3, 1]).unwrap();
        // gx = P gy Pᵀ  with  gy = Pᵀ gx P
        let gy = g.conjugate_by(&sigma.inverse());
        assert_eq!(edge_disagreement(&g, &gy, &sigma).unwrap(), 0.0);
        let pm = sigma.to_matrix();
        let direct = pm.matmul(&gy).unwrap().matmul_t(&pm).unwrap();
        assert_eq!(direct, g);
    }

    #[test]
    fn barycenter_values() {
        assert!(matches!(barycenter(0), Err(Error::Domain(_))));
        assert_eq!(barycenter(1).unwrap().matrix().as_slice(), &[1.0]);
        assert_eq!(barycenter(2).unwrap().matrix().as_slice(), &[0.5; 4]);
        let b4 = barycenter(4).unwrap();
        assert!(b4.matrix().as_slice().iter().all(|&v| v == 0.25));
        assert!(b4.matrix().row_sums().iter().all(|&s| s == 1.0));
    }

    #[test]
    fn barycenter_is_doubly_stochastic_up_to_1000() {
        for n in 1..=1000 {
            let b = barycenter(n).unwrap();
            assert!(DoublyStochasticMatrix::new(b.into_matrix(), 1e-9).is_ok(), "n = {n}");
        }
    }

    #[test]
    fn permutation_matrix_conversions() {
        let p = PermutationMapping::new(vec![1, 0]).unwrap();
        assert_eq!(p.to_matrix(), m(&[&[0.0, 1.0], &[1.0, 0.0]]));
        assert_eq!(
            PermutationMapping::identity(3).to_matrix(),
            DenseMatrix::identity(3)
        );
        let q1 = m(&[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0]]);
        assert_eq!(
            PermutationMapping::from_matrix_strict(&q1).unwrap().image(),
            &[1, 2, 0]
        );
        let half = m(&[&[0.5, 0.5], &[0.5, 0.5]]);
        assert!(PermutationMapping::from_matrix_strict(&half).is_err());
        let double = m(&[&[1.0, 1.0], &[0.0, 0.0]]);
        assert!(PermutationMapping::from_matrix_strict(&double).is_err());
        assert!(PermutationMapping::new(vec![0, 0]).is_err());
        assert!(PermutationMapping::new(vec![2, 0]).is_err());
    }

    #[test]
    fn transposed_products_agree() {
        let a = m(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let b = m(&[&[1.0, 0.0, -1.0], &[2.0, 1.0, 0.5]]);
        assert_eq!(a.matmul_t(&b).unwrap(), a.matmul(&b.transpose()).unwrap());
        assert_eq!(a.t_matmul(&b).unwrap(), a.transpose().matmul(&b).unwrap());
        assert!(a.matmul(&b).is_err());
    }

    #[test]
    fn doubly_stochastic_validation() {
        assert!(DoublyStochasticMatrix::new(m(&[&[1.0, 0.0], &[0.0, 1.0]]), 1e-9).is_ok());
        assert!(DoublyStochasticMatrix::new(m(&[&[1.5, -0.5], &[-0.5, 1.5]]), 1e-9).is_err());
        assert!(DoublyStochasticMatrix::new(m(&[&[0.6, 0.4], &[0.6, 0.4]]), 1e-9).is_err());
    }
}
