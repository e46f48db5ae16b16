//! Frank-Wolfe graph matching over the doubly stochastic relaxation.
//!
//! FAQ takes Hungarian (permutation) step directions, GOAT takes entropic
//! doubly stochastic ones from [`lot`]; everything else (gradient, exact
//! line search, convex update, final projection) is shared. Seeded problems
//! keep the first `num_seeds` vertices of both graphs matched to each other.
//!
//! Two interchangeable gradient backends are provided. [`GradientBackend::Clamped`]
//! works on full `n×n` iterates whose seed block is pinned to the identity;
//! [`GradientBackend::BlockPartitioned`] works on the non-seed block only and
//! folds the seed/non-seed cross terms into a constant linear term. They
//! compute the same quantities.

use std::borrow::Cow;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lap::solve_lap_max;
use crate::matrix::{marginal_violation, DenseMatrix, DoublyStochasticMatrix, PermutationMapping};
use crate::sinkhorn::{balance, lot_detailed, LotParams};

pub const DEFAULT_MAX_ITER: usize = 30;
pub const DEFAULT_TOL: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Init {
    Barycenter,
    /// Sinkhorn-balanced iid U(0,1) matrix from a seeded generator.
    RandomDs(u64),
    Given(DoublyStochasticMatrix),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum StepSolver {
    /// Permutation steps (FAQ, or SGM when seeded).
    Hungarian,
    /// Entropic doubly stochastic steps (GOAT).
    Lot(LotParams),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientBackend {
    #[default]
    Clamped,
    BlockPartitioned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchProblem {
    pub gx: DenseMatrix,
    pub gy: DenseMatrix,
    /// Vertices `0..num_seeds` of `gx` are matched to the same indices of `gy`.
    pub num_seeds: usize,
    pub init: Init,
    pub step_solver: StepSolver,
    pub max_iter: usize,
    pub tol: f64,
    pub backend: GradientBackend,
}

impl MatchProblem {
    pub fn new(
        gx: DenseMatrix,
        gy: DenseMatrix,
        num_seeds: usize,
        step_solver: StepSolver,
    ) -> Result<Self> {
        let problem = Self {
            gx,
            gy,
            num_seeds,
            init: Init::Barycenter,
            step_solver,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
            backend: GradientBackend::default(),
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn faq(gx: DenseMatrix, gy: DenseMatrix, num_seeds: usize) -> Result<Self> {
        Self::new(gx, gy, num_seeds, StepSolver::Hungarian)
    }

    pub fn goat(gx: DenseMatrix, gy: DenseMatrix, num_seeds: usize, lot: LotParams) -> Result<Self> {
        Self::new(gx, gy, num_seeds, StepSolver::Lot(lot))
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_backend(mut self, backend: GradientBackend) -> Self {
        self.backend = backend;
        self
    }

    pub fn size(&self) -> usize {
        self.gx.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.gx.rows();
        if !self.gx.is_square() || !self.gy.is_square() || self.gy.rows() != n {
            return Err(Error::shape(format!(
                "graphs must be square and equal-sized, got {}x{} and {}x{}",
                self.gx.rows(),
                self.gx.cols(),
                self.gy.rows(),
                self.gy.cols()
            )));
        }
        if self.num_seeds > n {
            return Err(Error::domain(format!(
                "{} seeds for {n} vertices",
                self.num_seeds
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::domain("tol must be positive"));
        }
        if let StepSolver::Lot(p) = &self.step_solver {
            p.validate()?;
        }
        if let Init::Given(p) = &self.init {
            if p.size() != n {
                return Err(Error::shape(format!(
                    "initial matrix is {0}x{0}, problem has {n} vertices",
                    p.size()
                )));
            }
            DoublyStochasticMatrix::new(p.matrix().clone(), p.tolerance().max(1e-9))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// Full-size mapping; seeds map to themselves.
    pub permutation: PermutationMapping,
    /// `f(P⁽⁰⁾), f(P⁽¹⁾), …`
    pub objective_trajectory: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Last relaxed iterate before projection.
    pub final_relaxed: DoublyStochasticMatrix,
    /// LOT calls that hit their iteration cap.
    pub lot_unconverged: usize,
}

impl MatchResult {
    /// Objective of the projected permutation.
    pub fn objective(&self, gx: &DenseMatrix, gy: &DenseMatrix) -> Result<f64> {
        crate::matrix::qap_objective(gx, gy, &self.permutation.to_matrix())
    }
}

/// One Frank-Wolfe step, formatted as `iter=<k> f=<f> alpha=<α> viol=<v>`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub objective: f64,
    pub alpha: f64,
    pub violation: f64,
}

impl fmt::Display for IterationRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "iter={} f={} alpha={} viol={}",
            self.iter, self.objective, self.alpha, self.violation
        )
    }
}

/// `∇f(P) = Gx·P·Gyᵀ + Gxᵀ·P·Gy`.
pub fn gradient(gx: &DenseMatrix, gy: &DenseMatrix, p: &DenseMatrix) -> Result<DenseMatrix> {
    check_conformable(gx, gy, &[p])?;
    let gx_p = gx.matmul(p)?;
    let p_gy = p.matmul(gy)?;
    Ok(gx_p.matmul_t(gy)?.add(&gx.t_matmul(&p_gy)?))
}

/// Exact maximizer over `α ∈ [0, 1]` of `f(α·P + (1 − α)·Q)`.
pub fn line_search_alpha(
    gx: &DenseMatrix,
    gy: &DenseMatrix,
    p: &DenseMatrix,
    q: &DenseMatrix,
) -> Result<f64> {
    check_conformable(gx, gy, &[p, q])?;
    let coeffs = LineCoefficients::compute(
        &Products::new(gx, gy, p),
        &Products::new(gx, gy, q),
        None,
        0.0,
        p,
        q,
    );
    Ok(coeffs.best_alpha())
}

fn check_conformable(gx: &DenseMatrix, gy: &DenseMatrix, ps: &[&DenseMatrix]) -> Result<()> {
    let n = gx.rows();
    let ok = gx.is_square()
        && gy.is_square()
        && gy.rows() == n
        && ps.iter().all(|p| p.rows() == n && p.cols() == n);
    if ok {
        Ok(())
    } else {
        Err(Error::shape("graphs and iterates must be square and equal-sized"))
    }
}

/// `A·P` and `P·B` for the current iterate; `f(P) = ⟨A·P, P·B⟩`.
struct Products {
    a_p: DenseMatrix,
    p_b: DenseMatrix,
}

impl Products {
    fn new(a: &DenseMatrix, b: &DenseMatrix, p: &DenseMatrix) -> Self {
        Self {
            a_p: a.matmul(p).expect("conformable"),
            p_b: p.matmul(b).expect("conformable"),
        }
    }

    /// Column/row shuffles of `A` and `B` for a permutation iterate.
    fn for_permutation(a: &DenseMatrix, b: &DenseMatrix, perm: &PermutationMapping) -> Self {
        let n = perm.len();
        let inv = perm.inverse();
        // (A·Q)[i][j] = A[i][π⁻¹(j)],  (Q·B)[i][j] = B[π(i)][j]
        let a_p = DenseMatrix::from_fn(n, n, |i, j| a.get(i, inv.apply(j)));
        let p_b = b.select_rows(perm.image());
        Self { a_p, p_b }
    }

    fn quadratic(&self) -> f64 {
        self.a_p.dot(&self.p_b)
    }
}

/// `φ(α) = a·α² + b·α + c` along `Q + α·(P − Q)`.
#[derive(Clone, Copy, Debug)]
struct LineCoefficients {
    a: f64,
    b: f64,
    c: f64,
}

impl LineCoefficients {
    fn compute(
        p_prod: &Products,
        q_prod: &Products,
        linear: Option<&DenseMatrix>,
        constant: f64,
        p: &DenseMatrix,
        q: &DenseMatrix,
    ) -> Self {
        let a_d = p_prod.a_p.sub(&q_prod.a_p);
        let d_b = p_prod.p_b.sub(&q_prod.p_b);
        let a = a_d.dot(&d_b);
        let mut b = a_d.dot(&q_prod.p_b) + q_prod.a_p.dot(&d_b);
        let mut c = q_prod.quadratic() + constant;
        if let Some(lin) = linear {
            b += lin.dot(p) - lin.dot(q);
            c += lin.dot(q);
        }
        Self { a, b, c }
    }

    fn eval(&self, alpha: f64) -> f64 {
        (self.a * alpha + self.b) * alpha + self.c
    }

    fn best_alpha(&self) -> f64 {
        if self.a == 0.0 && self.b == 0.0 {
            return 1.0;
        }
        let mut best = if self.eval(1.0) >= self.eval(0.0) { 1.0 } else { 0.0 };
        if self.a < 0.0 {
            let interior = -self.b / (2.0 * self.a);
            if (0.0..=1.0).contains(&interior) && self.eval(interior) > self.eval(best) {
                best = interior;
            }
        }
        best
    }
}

/// Objective pieces in the coordinates the iterate lives in.
///
/// Clamped: iterate is the full `n×n` matrix, `a = Gx`, `b = Gy`, no linear
/// term. Block: iterate is the `k×k` non-seed block, `a = Gx₂₂`, `b = Gy₂₂`,
/// `linear = Gx₁₂ᵀ·Gy₁₂ + Gx₂₁·Gy₂₁ᵀ`, `constant = ⟨Gx₁₁, Gy₁₁⟩`.
struct Objective<'a> {
    a: Cow<'a, DenseMatrix>,
    b: Cow<'a, DenseMatrix>,
    /// `∂/∂P` of the linear term (also the term itself as a Frobenius product).
    linear: Option<DenseMatrix>,
    constant: f64,
    symmetric: bool,
    /// Offset of the free block inside the iterate.
    offset: usize,
}

impl<'a> Objective<'a> {
    fn new(problem: &'a MatchProblem) -> Self {
        let n = problem.size();
        let s = problem.num_seeds;
        let symmetric = problem.gx.is_symmetric(0.0) && problem.gy.is_symmetric(0.0);
        match problem.backend {
            GradientBackend::Clamped => Self {
                a: Cow::Borrowed(&problem.gx),
                b: Cow::Borrowed(&problem.gy),
                linear: None,
                constant: 0.0,
                symmetric,
                offset: s,
            },
            GradientBackend::BlockPartitioned => {
                let seeds: Vec<usize> = (0..s).collect();
                let free: Vec<usize> = (s..n).collect();
                let (gx, gy) = (&problem.gx, &problem.gy);
                let x12 = gx.select(&seeds, &free);
                let x21 = gx.select(&free, &seeds);
                let y12 = gy.select(&seeds, &free);
                let y21 = gy.select(&free, &seeds);
                let linear = x12
                    .t_matmul(&y12)
                    .expect("conformable")
                    .add(&x21.matmul_t(&y21).expect("conformable"));
                let constant = gx.select(&seeds, &seeds).dot(&gy.select(&seeds, &seeds));
                Self {
                    a: Cow::Owned(gx.select(&free, &free)),
                    b: Cow::Owned(gy.select(&free, &free)),
                    linear: Some(linear),
                    constant,
                    symmetric,
                    offset: 0,
                }
            }
        }
    }

    fn value(&self, prod: &Products, p: &DenseMatrix) -> f64 {
        let lin = self.linear.as_ref().map_or(0.0, |l| l.dot(p));
        prod.quadratic() + lin + self.constant
    }

    fn gradient(&self, prod: &Products) -> DenseMatrix {
        let quad = if self.symmetric {
            self.a.matmul(&prod.p_b).expect("conformable").scale(2.0)
        } else {
            prod.a_p
                .matmul_t(&self.b)
                .expect("conformable")
                .add(&self.a.t_matmul(&prod.p_b).expect("conformable"))
        };
        match &self.linear {
            Some(l) => quad.add(l),
            None => quad,
        }
    }

    fn free_block(&self, m: &DenseMatrix) -> DenseMatrix {
        if self.offset == 0 {
            return m.clone();
        }
        let free: Vec<usize> = (self.offset..m.rows()).collect();
        m.select(&free, &free)
    }

    fn embed(&self, block: &DenseMatrix) -> DenseMatrix {
        embed_block(self.offset, block)
    }
}

/// `diag(I_s, block)`.
fn embed_block(s: usize, block: &DenseMatrix) -> DenseMatrix {
    if s == 0 {
        return block.clone();
    }
    let k = block.rows();
    let n = s + k;
    let mut out = DenseMatrix::zeros(n, n);
    for i in 0..s {
        out.set(i, i, 1.0);
    }
    for i in 0..k {
        out.row_mut(s + i)[s..].copy_from_slice(block.row(i));
    }
    out
}

/// Non-seed block of the starting iterate.
fn initial_block(problem: &MatchProblem) -> Result<DenseMatrix> {
    let n = problem.size();
    let s = problem.num_seeds;
    let k = n - s;
    if k == 0 {
        return Ok(DenseMatrix::zeros(0, 0));
    }
    Ok(match &problem.init {
        Init::Barycenter => DenseMatrix::filled(k, k, 1.0 / k as f64),
        Init::RandomDs(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let raw = DenseMatrix::from_fn(k, k, |_, _| rng.random_range(0.0..1.0) + f64::MIN_POSITIVE);
            balance_to_tolerance(&raw)
        }
        Init::Given(p) => {
            let free: Vec<usize> = (s..n).collect();
            let block = p.matrix().select(&free, &free);
            if s == 0 {
                block
            } else {
                // seed rows/columns are pinned; rebalance what is left
                let positive = DenseMatrix::from_fn(k, k, |i, j| block.get(i, j).max(1e-300));
                balance_to_tolerance(&positive)
            }
        }
    })
}

fn balance_to_tolerance(m: &DenseMatrix) -> DenseMatrix {
    let mut out = m.clone();
    for _ in 0..1000 {
        out = balance(&out, 1);
        if marginal_violation(&out) <= 1e-12 {
            break;
        }
    }
    out
}

/// Fast Approximate QAP (Hungarian step directions).
pub fn faq(problem: &MatchProblem) -> Result<MatchResult> {
    if problem.step_solver != StepSolver::Hungarian {
        return Err(Error::validation("faq requires the Hungarian step solver"));
    }
    run(problem, None)
}

/// Graph matching via optimal transport (entropic step directions).
pub fn goat(problem: &MatchProblem) -> Result<MatchResult> {
    if !matches!(problem.step_solver, StepSolver::Lot(_)) {
        return Err(Error::validation("goat requires the LOT step solver"));
    }
    run(problem, None)
}

/// Runs the Frank-Wolfe loop with whatever step solver the problem names,
/// reporting each iteration to `trace` when given.
pub fn run(
    problem: &MatchProblem,
    mut trace: Option<&mut dyn FnMut(&IterationRecord)>,
) -> Result<MatchResult> {
    problem.validate()?;
    let n = problem.size();
    let s = problem.num_seeds;
    let k = n - s;
    let objective = Objective::new(problem);

    let mut block = initial_block(problem)?;
    let mut iterate = objective.embed(&block);
    let mut prod = Products::new(&objective.a, &objective.b, &iterate);
    let mut trajectory = vec![objective.value(&prod, &iterate)];
    let mut iterations = 0;
    let mut converged = false;
    let mut lot_unconverged = 0;

    if k > 0 {
        while iterations < problem.max_iter {
            let grad = objective.free_block(&objective.gradient(&prod));
            let (q_block, q_prod_hint) = match &problem.step_solver {
                StepSolver::Hungarian => {
                    let perm = solve_lap_max(&grad)?.permutation;
                    let q = perm.to_matrix();
                    (q, Some(perm))
                }
                StepSolver::Lot(params) => {
                    let sol = lot_detailed(&grad, params)?;
                    if !sol.converged {
                        lot_unconverged += 1;
                    }
                    (sol.q.into_matrix(), None)
                }
            };
            let q = objective.embed(&q_block);
            let q_prod = match (&q_prod_hint, objective.offset) {
                (Some(perm), 0) => Products::for_permutation(&objective.a, &objective.b, perm),
                _ => Products::new(&objective.a, &objective.b, &q),
            };

            let coeffs = LineCoefficients::compute(
                &prod,
                &q_prod,
                objective.linear.as_ref(),
                objective.constant,
                &iterate,
                &q,
            );
            let alpha = coeffs.best_alpha();
            let next_block = DenseMatrix::convex_combination(alpha, &block, &q_block);
            let step = next_block.sub(&block).frobenius_norm() / n as f64;

            block = next_block;
            iterate = objective.embed(&block);
            prod = Products::new(&objective.a, &objective.b, &iterate);
            let value = objective.value(&prod, &iterate);
            trajectory.push(value);
            iterations += 1;

            if let Some(t) = trace.as_deref_mut() {
                t(&IterationRecord {
                    iter: iterations,
                    objective: value,
                    alpha,
                    violation: marginal_violation(&block),
                });
            }
            if step < problem.tol {
                converged = true;
                break;
            }
        }
    } else {
        converged = true;
    }

    let mut image: Vec<usize> = (0..s).collect();
    if k > 0 {
        let proj = solve_lap_max(&block)?.permutation;
        image.extend(proj.image().iter().map(|&j| j + s));
    }
    let permutation = PermutationMapping::new(image)?;
    let final_relaxed = DoublyStochasticMatrix::new_unchecked(
        embed_block(s, &block),
        marginal_violation(&block).max(1e-12),
    );
    Ok(MatchResult {
        permutation,
        objective_trajectory: trajectory,
        iterations,
        converged,
        final_relaxed,
        lot_unconverged,
    })
}

/// A matching problem whose vertices were reordered so seed pair `i` sits at
/// index `i` on both sides, plus the maps back to the original indices.
#[derive(Clone, Debug)]
pub struct SeededAlignment {
    pub problem: MatchProblem,
    /// `x_order[i]` is the original `gx` vertex at aligned index `i`.
    pub x_order: Vec<usize>,
    pub y_order: Vec<usize>,
    /// Original vertex counts; indices at or beyond these are padding.
    pub x_len: usize,
    pub y_len: usize,
}

impl SeededAlignment {
    pub fn padded(&self) -> bool {
        self.x_len != self.y_len
    }

    /// Matches as `(original x vertex, original y vertex)`, in aligned-index
    /// order, dropping anything that involves a padding vertex.
    pub fn matches(&self, result: &MatchResult) -> Vec<(usize, usize)> {
        result
            .permutation
            .image()
            .iter()
            .enumerate()
            .map(|(i, &j)| (self.x_order[i], self.y_order[j]))
            .filter(|&(x, y)| x < self.x_len && y < self.y_len)
            .collect()
    }
}

/// Moves seed pair `i` to index `i` on both sides (remaining vertices keep
/// their relative order) and pads the smaller graph with isolated vertices.
pub fn seeded_align(
    gx_full: &DenseMatrix,
    gy_full: &DenseMatrix,
    seed_pairs: &[(usize, usize)],
    step_solver: StepSolver,
) -> Result<SeededAlignment> {
    if !gx_full.is_square() || !gy_full.is_square() {
        return Err(Error::shape("graphs must be square"));
    }
    let (nx, ny) = (gx_full.rows(), gy_full.rows());
    let mut used_x = vec![false; nx];
    let mut used_y = vec![false; ny];
    for &(x, y) in seed_pairs {
        if x >= nx || y >= ny {
            return Err(Error::validation(format!("seed pair ({x}, {y}) out of range")));
        }
        if used_x[x] || used_y[y] {
            return Err(Error::validation(format!("seed pair ({x}, {y}) repeats a vertex")));
        }
        used_x[x] = true;
        used_y[y] = true;
    }
    let n = nx.max(ny);
    let order = |used: &[bool], len: usize, pick: fn(&(usize, usize)) -> usize| -> Vec<usize> {
        let mut out: Vec<usize> = seed_pairs.iter().map(pick).collect();
        out.extend((0..len).filter(|&v| !used[v]));
        out.extend(len..n);
        out
    };
    let x_order = order(&used_x, nx, |p| p.0);
    let y_order = order(&used_y, ny, |p| p.1);
    let gather = |g: &DenseMatrix, ord: &[usize], len: usize| {
        DenseMatrix::from_fn(n, n, |i, j| {
            let (a, b) = (ord[i], ord[j]);
            if a < len && b < len {
                g.get(a, b)
            } else {
                0.0
            }
        })
    };
    let problem = MatchProblem::new(
        gather(gx_full, &x_order, nx),
        gather(gy_full, &y_order, ny),
        seed_pairs.len(),
        step_solver,
    )?;
    Ok(SeededAlignment {
        problem,
        x_order,
        y_order,
        x_len: nx,
        y_len: ny,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{barycenter, qap_objective};

    fn m(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(rows).unwrap()
    }

    fn random_graph(rng: &mut ChaCha8Rng, n: usize, symmetric: bool) -> DenseMatrix {
        let mut g = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(0.0..1.0));
        if symmetric {
            for i in 0..n {
                for j in 0..i {
                    let v = g.get(i, j);
                    g.set(j, i, v);
                }
            }
        }
        g
    }

    #[test]
    fn gradient_examples() {
        let i2 = DenseMatrix::identity(2);
        assert_eq!(gradient(&i2, &i2, &i2).unwrap(), i2.scale(2.0));
        let swap = m(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert_eq!(gradient(&swap, &i2, &i2).unwrap(), swap.scale(2.0));
        assert!(gradient(&swap, &DenseMatrix::identity(3), &i2).is_err());
    }

    #[test]
    fn line_search_examples() {
        let i3 = DenseMatrix::identity(3);
        assert_eq!(line_search_alpha(&i3, &i3, &i3, &i3).unwrap(), 1.0);
        let bary = barycenter(3).unwrap().into_matrix();
        assert_eq!(line_search_alpha(&i3, &i3, &i3, &bary).unwrap(), 1.0);
        // coefficients: φ(0) = f(J/3) = 1, φ(1) = 3, a = ‖I − J/3‖² = 2, b = 0
        let c = LineCoefficients::compute(
            &Products::new(&i3, &i3, &i3),
            &Products::new(&i3, &i3, &bary),
            None,
            0.0,
            &i3,
            &bary,
        );
        assert!((c.c - 1.0).abs() < 1e-12);
        assert!((c.eval(1.0) - 3.0).abs() < 1e-12);
        assert!((c.a - 2.0).abs() < 1e-12);
    }

    #[test]
    fn interior_alpha_when_concave() {
        // a < 0 with the vertex inside [0, 1]
        let c = LineCoefficients { a: -2.0, b: 1.0, c: 0.0 };
        assert_eq!(c.best_alpha(), 0.25);
        let c = LineCoefficients { a: -1.0, b: 4.0, c: 0.0 };
        assert_eq!(c.best_alpha(), 1.0);
        let c = LineCoefficients { a: 0.0, b: -1.0, c: 0.0 };
        assert_eq!(c.best_alpha(), 0.0);
    }

    #[test]
    fn self_matching_recovers_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = random_graph(&mut rng, 12, false);
        let problem = MatchProblem::faq(g.clone(), g.clone(), 0).unwrap();
        let result = faq(&problem).unwrap();
        assert_eq!(result.permutation, PermutationMapping::identity(12));
        assert_eq!(
            crate::matrix::edge_disagreement(&g, &g, &result.permutation).unwrap(),
            0.0
        );
    }

    #[test]
    fn solver_kind_is_checked() {
        let g = DenseMatrix::identity(3);
        let p = MatchProblem::faq(g.clone(), g.clone(), 0).unwrap();
        assert!(goat(&p).is_err());
        let p = MatchProblem::goat(g.clone(), g, 0, LotParams::default()).unwrap();
        assert!(faq(&p).is_err());
    }

    #[test]
    fn problem_validation() {
        let g = DenseMatrix::identity(3);
        assert!(MatchProblem::faq(g.clone(), DenseMatrix::identity(2), 0).is_err());
        assert!(MatchProblem::faq(g.clone(), g.clone(), 4).is_err());
        let bad = DoublyStochasticMatrix::new_unchecked(DenseMatrix::identity(3).scale(2.0), 1e-9);
        let p = MatchProblem::faq(g.clone(), g, 0).unwrap().with_init(Init::Given(bad));
        assert!(matches!(faq(&p), Err(Error::Validation(_))));
    }

    #[test]
    fn identity_graphs_give_objective_n() {
        let g = DenseMatrix::identity(6);
        let p = MatchProblem::goat(g.clone(), g.clone(), 0, LotParams::default()).unwrap();
        let r = goat(&p).unwrap();
        assert_eq!(r.objective(&g, &g).unwrap(), 6.0);
    }

    #[test]
    fn all_seeds_forces_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let g = random_graph(&mut rng, 5, true);
        let h = random_graph(&mut rng, 5, true);
        let r = faq(&MatchProblem::faq(g, h, 5).unwrap()).unwrap();
        assert_eq!(r.permutation, PermutationMapping::identity(5));
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn backends_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for symmetric in [true, false] {
            let g = random_graph(&mut rng, 15, symmetric);
            let h = random_graph(&mut rng, 15, symmetric);
            for solver in [StepSolver::Hungarian, StepSolver::Lot(LotParams::with_reg(50.0).unwrap())] {
                let base = MatchProblem::new(g.clone(), h.clone(), 4, solver).unwrap();
                let a = run(&base, None).unwrap();
                let b = run(&base.clone().with_backend(GradientBackend::BlockPartitioned), None).unwrap();
                assert_eq!(a.permutation, b.permutation);
                assert_eq!(a.iterations, b.iterations);
                for (x, y) in a.objective_trajectory.iter().zip(&b.objective_trajectory) {
                    assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0), "{x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn trajectory_matches_direct_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let g = random_graph(&mut rng, 10, true);
        let h = random_graph(&mut rng, 10, true);
        let p = MatchProblem::faq(g.clone(), h.clone(), 2)
            .unwrap()
            .with_backend(GradientBackend::BlockPartitioned);
        let r = faq(&p).unwrap();
        let last = *r.objective_trajectory.last().unwrap();
        let direct = qap_objective(&g, &h, r.final_relaxed.matrix()).unwrap();
        assert!((last - direct).abs() < 1e-9 * direct.abs());
    }

    #[test]
    fn trace_lines_are_emitted() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let g = random_graph(&mut rng, 8, true);
        let h = g.clone();
        let p = MatchProblem::faq(g, h, 1).unwrap();
        let mut lines = Vec::new();
        let r = run(&p, Some(&mut |rec: &IterationRecord| lines.push(rec.to_string()))).unwrap();
        assert_eq!(lines.len(), r.iterations);
        assert!(lines[0].starts_with("iter=1 f="));
        assert!(lines[0].contains(" alpha=") && lines[0].contains(" viol="));
    }

    #[test]
    fn random_init_is_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let g = random_graph(&mut rng, 10, true);
        let p = MatchProblem::faq(g.clone(), g, 0).unwrap().with_init(Init::RandomDs(9));
        let a = faq(&p).unwrap();
        let b = faq(&p).unwrap();
        assert_eq!(a, b);
        let block = initial_block(&p).unwrap();
        assert!(marginal_violation(&block) <= 1e-12);
    }

    #[test]
    fn given_init_is_clamped_to_seeds() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let g = random_graph(&mut rng, 6, true);
        let init = barycenter(6).unwrap();
        let p = MatchProblem::faq(g.clone(), g, 2).unwrap().with_init(Init::Given(init));
        let block = initial_block(&p).unwrap();
        assert_eq!(block.rows(), 4);
        assert!(marginal_violation(&block) <= 1e-12);
        let r = faq(&p).unwrap();
        assert_eq!(&r.permutation.image()[..2], &[0, 1]);
    }

    #[test]
    fn seeded_align_examples() {
        let g = m(&[&[0.0, 1.0, 2.0], &[1.0, 0.0, 3.0], &[2.0, 3.0, 0.0]]);
        let h = m(&[&[0.0, 4.0, 5.0], &[4.0, 0.0, 6.0], &[5.0, 6.0, 0.0]]);
        let a = seeded_align(&g, &h, &[], StepSolver::Hungarian).unwrap();
        assert_eq!(a.problem.gx, g);
        assert_eq!(a.problem.gy, h);
        assert_eq!(a.problem.num_seeds, 0);

        let a = seeded_align(&g, &h, &[(2, 0)], StepSolver::Hungarian).unwrap();
        assert_eq!(a.x_order, vec![2, 0, 1]);
        assert_eq!(a.y_order, vec![0, 1, 2]);
        assert_eq!(a.problem.gx.row(0), &[0.0, 2.0, 3.0]);
        assert_eq!(a.problem.gy, h);
        let r = faq(&a.problem).unwrap();
        assert_eq!(r.permutation.apply(0), 0);
        assert_eq!(a.matches(&r)[0], (2, 0));

        let all = seeded_align(&g, &h, &[(0, 1), (1, 2), (2, 0)], StepSolver::Hungarian).unwrap();
        let r = faq(&all.problem).unwrap();
        assert_eq!(r.permutation, PermutationMapping::identity(3));
        assert_eq!(all.matches(&r), vec![(0, 1), (1, 2), (2, 0)]);

        assert!(matches!(
            seeded_align(&g, &h, &[(0, 1), (0, 2)], StepSolver::Hungarian),
            Err(Error::Validation(_))
        ));
        assert!(seeded_align(&g, &h, &[(0, 7)], StepSolver::Hungarian).is_err());
    }

    #[test]
    fn unequal_sizes_are_padded() {
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let g = random_graph(&mut rng, 6, true);
        let h = g.select(&[0, 1, 2, 3], &[0, 1, 2, 3]);
        let a = seeded_align(&g, &h, &[(0, 0)], StepSolver::Hungarian).unwrap();
        assert!(a.padded());
        assert_eq!(a.problem.size(), 6);
        let r = faq(&a.problem).unwrap();
        let matches = a.matches(&r);
        assert!(matches.len() <= 4);
        assert!(matches.iter().all(|&(x, y)| x < 6 && y < 4));
    }
}
