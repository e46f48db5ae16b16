//! Entropic optimal transport.
//!
//! [`sinkhorn_plan`] solves `min ⟨P, C⟩ − (1/λ)·h(P)` over the transport
//! polytope `U(r, c)`. The iteration state is a pair of dual potentials
//! `f`, `g` plus bounded multiplicative scalings; the potentials are set by
//! exact log-sum-exp sweeps and absorb the scalings whenever those drift, so
//! nothing overflows at large `λ`. `λ` is annealed geometrically up to its
//! target with warm-started potentials, the final stage is over-relaxed, and
//! the last iterate is rounded onto the marginals.
//!
//! [`lot`] is the doubly stochastic special case used as the GOAT step
//! direction: it maximizes `⟨Q, profit⟩ + (1/λ)·h(Q)` over unit marginals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, DoublyStochasticMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LotParams {
    /// Entropic regularization strength `λ`.
    pub reg: f64,
    /// L∞ bound on the marginal violation that counts as converged.
    pub tol: f64,
    pub max_iter: usize,
    /// Divide profits by their largest magnitude before applying `reg`.
    pub scale_profit: bool,
    /// Project the final iterate exactly onto the marginals.
    pub round: bool,
}

impl Default for LotParams {
    fn default() -> Self {
        Self {
            reg: 500.0,
            tol: 1e-6,
            max_iter: 1000,
            scale_profit: true,
            round: true,
        }
    }
}

impl LotParams {
    pub fn new(reg: f64, tol: f64, max_iter: usize) -> Result<Self> {
        let p = Self {
            reg,
            tol,
            max_iter,
            ..Self::default()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_reg(reg: f64) -> Result<Self> {
        Self::new(reg, Self::default().tol, Self::default().max_iter)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.reg > 0.0 && self.reg.is_finite()) {
            return Err(Error::domain(format!("reg must be positive, got {}", self.reg)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::domain(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::domain("max_iter must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub plan: DenseMatrix,
    pub row_marginal: Vec<f64>,
    pub col_marginal: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// L∞ marginal violation of the last Sinkhorn iterate, before rounding.
    pub raw_violation: f64,
    /// L∞ marginal violation of the returned plan.
    pub violation: f64,
}

/// `h(P) = −Σ p·log p` with `0·log 0 = 0`.
pub fn entropy(p: &DenseMatrix) -> Result<f64> {
    let mut h = 0.0;
    for &v in p.as_slice() {
        if v < 0.0 {
            return Err(Error::domain(format!("entropy of negative entry {v}")));
        }
        if v > 0.0 {
            h -= v * v.ln();
        }
    }
    Ok(h)
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Entropic transport plan between marginals `r` (rows) and `c` (columns).
pub fn sinkhorn_plan(
    cost: &DenseMatrix,
    r: &[f64],
    c: &[f64],
    params: &LotParams,
) -> Result<TransportPlan> {
    params.validate()?;
    let (n, m) = (cost.rows(), cost.cols());
    if r.len() != n || c.len() != m {
        return Err(Error::shape(format!(
            "marginals of length {}/{} for a {n}x{m} cost",
            r.len(),
            c.len()
        )));
    }
    if r.iter().chain(c).any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::domain("marginals must be finite and nonnegative"));
    }
    let (mass_r, mass_c): (f64, f64) = (r.iter().sum(), c.iter().sum());
    if (mass_r - mass_c).abs() > 1e-8 * mass_r.max(mass_c) {
        return Err(Error::domain(format!(
            "marginal masses differ: {mass_r} vs {mass_c}"
        )));
    }

    // zero-mass rows and columns carry nothing; solve on the support
    let rows: Vec<usize> = (0..n).filter(|&i| r[i] > 0.0).collect();
    let cols: Vec<usize> = (0..m).filter(|&j| c[j] > 0.0).collect();
    let mut plan = DenseMatrix::zeros(n, m);
    let (mut iterations, mut converged, mut raw_violation) = (0, true, 0.0);
    if !rows.is_empty() && !cols.is_empty() {
        let sub_cost = cost.select(&rows, &cols);
        let sub_r: Vec<f64> = rows.iter().map(|&i| r[i]).collect();
        let sub_c: Vec<f64> = cols.iter().map(|&j| c[j]).collect();
        let mut solver = StabilizedSinkhorn::new(&sub_cost, &sub_r, &sub_c);
        let out = solver.run(params);
        iterations = out.iterations;
        converged = out.converged;
        raw_violation = out.violation;
        let mut sub_plan = solver.plan();
        if params.round {
            round_to_marginals(&mut sub_plan, &sub_r, &sub_c);
        }
        for (a, &i) in rows.iter().enumerate() {
            let src = sub_plan.row(a);
            let dst = plan.row_mut(i);
            for (b, &j) in cols.iter().enumerate() {
                dst[j] = src[b];
            }
        }
    }

    let violation = plan
        .row_sums()
        .iter()
        .zip(r)
        .chain(plan.col_sums().iter().zip(c))
        .map(|(s, t)| (s - t).abs())
        .fold(0.0f64, f64::max);
    Ok(TransportPlan {
        plan,
        row_marginal: r.to_vec(),
        col_marginal: c.to_vec(),
        converged,
        iterations,
        raw_violation,
        violation,
    })
}

struct RunOutcome {
    iterations: usize,
    converged: bool,
    violation: f64,
}

/// Log-stabilized Sinkhorn scaling. The plan is
/// `diag(u) · K̃ · diag(v)` with `K̃_ij = exp(f_i + g_j − λ·C_ij)`; the
/// scalings are folded back into the potentials `f`, `g` whenever they
/// drift far from one, so `K̃` stays representable at any `λ`.
struct StabilizedSinkhorn<'a> {
    cost: &'a DenseMatrix,
    r: &'a [f64],
    c: &'a [f64],
    lambda: f64,
    f: Vec<f64>,
    g: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
    kernel: DenseMatrix,
}

/// Scalings beyond `e^±ABSORB` are folded into the potentials.
const ABSORB: f64 = 30.0;
/// Growth factor of `λ` between annealing stages.
const ANNEAL: f64 = 4.0;
/// Scaling iterations in the final stage before Newton polishing is tried.
const NEWTON_AFTER: usize = 200;
/// Largest `n + m` for which the dense Newton system is formed.
const NEWTON_MAX_DIM: usize = 800;

struct DualState {
    plan: DenseMatrix,
    row_sums: Vec<f64>,
    col_sums: Vec<f64>,
    l1_error: f64,
    max_error: f64,
}

impl<'a> StabilizedSinkhorn<'a> {
    fn new(cost: &'a DenseMatrix, r: &'a [f64], c: &'a [f64]) -> Self {
        let (n, m) = (cost.rows(), cost.cols());
        Self {
            cost,
            r,
            c,
            lambda: 0.0,
            f: vec![0.0; n],
            g: vec![0.0; m],
            u: vec![1.0; n],
            v: vec![1.0; m],
            kernel: DenseMatrix::zeros(n, m),
        }
    }

    fn run(&mut self, params: &LotParams) -> RunOutcome {
        let target = params.reg;
        let range = {
            let s = self.cost.as_slice();
            let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            hi - lo
        };
        // start where the kernel is well conditioned (λ·range ≈ 1)
        let mut lambda = if range > 0.0 { target.min(1.0 / range) } else { target };
        let r_max = self.r.iter().copied().fold(0.0, f64::max);
        let mut iterations = 0;
        loop {
            self.set_lambda(lambda);
            let last = lambda >= target;
            let stage_tol = if last {
                params.tol
            } else {
                params.tol.max(1e-3 * r_max)
            };
            let (converged, violation) = if last {
                self.final_stage(params, &mut iterations)
            } else {
                self.iterate(stage_tol, params.max_iter, &mut iterations, false)
            };
            if last || iterations >= params.max_iter {
                return RunOutcome {
                    iterations,
                    converged: converged && last,
                    violation,
                };
            }
            lambda = (lambda * ANNEAL).min(target);
        }
    }

    /// Over-relaxed scaling; small problems that stall switch to Newton steps
    /// on the dual and fall back to scaling if those stop making progress.
    fn final_stage(&mut self, params: &LotParams, iterations: &mut usize) -> (bool, f64) {
        let (n, m) = (self.cost.rows(), self.cost.cols());
        let newton = n + m <= NEWTON_MAX_DIM;
        let budget = if newton {
            params.max_iter.min(*iterations + NEWTON_AFTER)
        } else {
            params.max_iter
        };
        let (converged, violation) = self.iterate(params.tol, budget, iterations, true);
        if converged || !newton || *iterations >= params.max_iter {
            return (converged, violation);
        }
        if let Some(violation) = self.newton(params.tol, params.max_iter, iterations) {
            return (true, violation);
        }
        self.iterate(params.tol, params.max_iter, iterations, true)
    }

    /// Damped Newton on the concave dual
    /// `Σ r·f + Σ c·g − Σ exp(f_i + g_j − λC_ij)`, with the last column
    /// potential pinned to remove the constant shift. Returns the violation
    /// once it is within `tol`, or `None` when a step fails to reduce the
    /// L1 marginal error.
    fn newton(&mut self, tol: f64, max_iter: usize, iterations: &mut usize) -> Option<f64> {
        self.absorb();
        let (n, m) = (self.cost.rows(), self.cost.cols());
        let dim = n + m - 1;
        let mut f = self.f.clone();
        let mut g = self.g.clone();
        let mut state = self.dual_state(&f, &g);
        let outcome = loop {
            if state.max_error <= tol {
                break Some(state.max_error);
            }
            if *iterations >= max_iter {
                break None;
            }
            *iterations += 1;

            let mut h = nalgebra::DMatrix::<f64>::zeros(dim, dim);
            let mut rhs = nalgebra::DVector::<f64>::zeros(dim);
            for i in 0..n {
                h[(i, i)] = state.row_sums[i];
                rhs[i] = self.r[i] - state.row_sums[i];
                for j in 0..m - 1 {
                    let p = state.plan.get(i, j);
                    h[(i, n + j)] = p;
                    h[(n + j, i)] = p;
                }
            }
            for j in 0..m - 1 {
                h[(n + j, n + j)] = state.col_sums[j];
                rhs[n + j] = self.c[j] - state.col_sums[j];
            }
            let ridge = 1e-14 * state.row_sums.iter().copied().fold(0.0, f64::max);
            for d in 0..dim {
                h[(d, d)] += ridge;
            }
            let step = match h.cholesky() {
                Some(chol) => chol.solve(&rhs),
                None => break None,
            };
            if step.iter().any(|x| !x.is_finite()) {
                break None;
            }

            let mut t = 1.0;
            let accepted = loop {
                let f_try: Vec<f64> = (0..n).map(|i| f[i] + t * step[i]).collect();
                let g_try: Vec<f64> = (0..m)
                    .map(|j| if j < m - 1 { g[j] + t * step[n + j] } else { g[j] })
                    .collect();
                let trial = self.dual_state(&f_try, &g_try);
                if trial.l1_error < state.l1_error * (1.0 - 1e-4 * t) {
                    f = f_try;
                    g = g_try;
                    break Some(trial);
                }
                t *= 0.5;
                if t < 1e-6 {
                    break None;
                }
            };
            match accepted {
                Some(next) => state = next,
                None => break None,
            }
        };
        self.f = f;
        self.g = g;
        self.rebuild_kernel();
        outcome
    }

    fn dual_state(&self, f: &[f64], g: &[f64]) -> DualState {
        let (n, m) = (self.cost.rows(), self.cost.cols());
        let lambda = self.lambda;
        let mut plan = DenseMatrix::zeros(n, m);
        for i in 0..n {
            let cost_row = self.cost.row(i);
            for (j, p) in plan.row_mut(i).iter_mut().enumerate() {
                *p = (f[i] + g[j] - lambda * cost_row[j]).exp();
            }
        }
        let row_sums = plan.row_sums();
        let col_sums = plan.col_sums();
        let errors = row_sums
            .iter()
            .zip(self.r)
            .chain(col_sums.iter().zip(self.c))
            .map(|(s, t)| (s - t).abs());
        let (l1_error, max_error) = errors.fold((0.0, 0.0f64), |(l1, mx), e| (l1 + e, mx.max(e)));
        let bad = !l1_error.is_finite();
        DualState {
            plan,
            row_sums,
            col_sums,
            l1_error: if bad { f64::INFINITY } else { l1_error },
            max_error: if bad { f64::INFINITY } else { max_error },
        }
    }

    /// Switches to a new `λ`, rescaling the potentials and re-centring them
    /// with one exact log-domain sweep before rebuilding the kernel.
    fn set_lambda(&mut self, lambda: f64) {
        self.absorb();
        if self.lambda > 0.0 {
            let ratio = lambda / self.lambda;
            self.f.iter_mut().chain(self.g.iter_mut()).for_each(|p| *p *= ratio);
        }
        self.lambda = lambda;
        let (n, m) = (self.cost.rows(), self.cost.cols());
        for i in 0..n {
            let row = self.cost.row(i);
            let lse = log_sum_exp(row.iter().zip(&self.g).map(|(cij, gj)| gj - lambda * cij));
            self.f[i] = self.r[i].ln() - lse;
        }
        let mut col_max = vec![f64::NEG_INFINITY; m];
        for i in 0..n {
            let fi = self.f[i];
            for (j, cij) in self.cost.row(i).iter().enumerate() {
                col_max[j] = col_max[j].max(fi - lambda * cij);
            }
        }
        let mut col_sum = vec![0.0; m];
        for i in 0..n {
            let fi = self.f[i];
            for (j, cij) in self.cost.row(i).iter().enumerate() {
                col_sum[j] += (fi - lambda * cij - col_max[j]).exp();
            }
        }
        for j in 0..m {
            self.g[j] = self.c[j].ln() - (col_max[j] + col_sum[j].ln());
        }
        self.rebuild_kernel();
    }

    fn absorb(&mut self) {
        for (f, u) in self.f.iter_mut().zip(self.u.iter_mut()) {
            *f += u.ln();
            *u = 1.0;
        }
        for (g, v) in self.g.iter_mut().zip(self.v.iter_mut()) {
            *g += v.ln();
            *v = 1.0;
        }
    }

    fn rebuild_kernel(&mut self) {
        let lambda = self.lambda;
        for i in 0..self.cost.rows() {
            let fi = self.f[i];
            let cost_row = self.cost.row(i);
            for ((k, cij), gj) in self.kernel.row_mut(i).iter_mut().zip(cost_row).zip(&self.g) {
                *k = (fi + gj - lambda * cij).exp();
            }
        }
    }

    fn iterate(
        &mut self,
        tol: f64,
        max_iter: usize,
        iterations: &mut usize,
        relax: bool,
    ) -> (bool, f64) {
        let (n, m) = (self.cost.rows(), self.cost.cols());
        let mut kv = vec![0.0; n];
        let mut ktu = vec![0.0; m];
        let mut col_violation = 0.0f64;
        let mut omega = 1.0f64;
        let mut history: Vec<f64> = Vec::new();
        let mut best = f64::INFINITY;
        loop {
            for (i, out) in kv.iter_mut().enumerate() {
                *out = self.kernel.row(i).iter().zip(&self.v).map(|(k, v)| k * v).sum();
            }
            let row_violation = (0..n)
                .map(|i| (self.u[i] * kv[i] - self.r[i]).abs())
                .fold(0.0f64, f64::max);
            let violation = row_violation.max(col_violation);
            if !violation.is_finite() || kv.iter().any(|x| *x <= 0.0 || !x.is_finite()) {
                // a row of the kernel under- or overflowed: re-centre
                let lambda = self.lambda;
                self.lambda = 0.0;
                self.set_lambda(lambda);
                col_violation = 0.0;
                continue;
            }
            if violation <= tol {
                return (true, violation);
            }
            if *iterations >= max_iter {
                return (false, violation);
            }
            *iterations += 1;

            if relax {
                best = best.min(violation);
                if omega > 1.0 && violation > 10.0 * best {
                    omega = 1.0;
                    history.clear();
                    best = violation;
                }
                history.push(violation);
                let k = history.len();
                if omega == 1.0 && k > 12 {
                    let rho = (history[k - 1] / history[k - 11]).powf(0.1).clamp(0.0, 0.9999);
                    omega = (2.0 / (1.0 + (1.0 - rho).sqrt())).clamp(1.0, 1.9);
                }
            }

            for i in 0..n {
                let target = self.r[i] / kv[i];
                self.u[i] = if omega == 1.0 {
                    target
                } else {
                    self.u[i].powf(1.0 - omega) * target.powf(omega)
                };
            }
            ktu.iter_mut().for_each(|x| *x = 0.0);
            for i in 0..n {
                let ui = self.u[i];
                for (acc, k) in ktu.iter_mut().zip(self.kernel.row(i)) {
                    *acc += k * ui;
                }
            }
            col_violation = 0.0;
            for j in 0..m {
                let target = self.c[j] / ktu[j];
                self.v[j] = if omega == 1.0 {
                    target
                } else {
                    self.v[j].powf(1.0 - omega) * target.powf(omega)
                };
                col_violation = col_violation.max((self.v[j] * ktu[j] - self.c[j]).abs());
            }

            let drift = self
                .u
                .iter()
                .chain(&self.v)
                .any(|s| !(s.ln().abs() <= ABSORB));
            if drift {
                self.absorb();
                self.rebuild_kernel();
            }
        }
    }

    fn plan(&self) -> DenseMatrix {
        let mut p = self.kernel.clone();
        for i in 0..p.rows() {
            let ui = self.u[i];
            for (x, vj) in p.row_mut(i).iter_mut().zip(&self.v) {
                *x *= ui * vj;
            }
        }
        p
    }
}

/// Projects a nonnegative plan onto `U(r, c)`: shrink over-full rows, then
/// over-full columns, then spread the remaining deficit as a rank-one
/// correction. Entries stay nonnegative.
pub fn round_to_marginals(p: &mut DenseMatrix, r: &[f64], c: &[f64]) {
    for (i, &ri) in r.iter().enumerate() {
        let s: f64 = p.row(i).iter().sum();
        if s > ri {
            let x = ri / s;
            p.row_mut(i).iter_mut().for_each(|v| *v *= x);
        }
    }
    let cols = p.col_sums();
    let y: Vec<f64> = cols
        .iter()
        .zip(c)
        .map(|(&s, &cj)| if s > cj { cj / s } else { 1.0 })
        .collect();
    for i in 0..p.rows() {
        for (v, yj) in p.row_mut(i).iter_mut().zip(&y) {
            *v *= yj;
        }
    }
    let err_r: Vec<f64> = p.row_sums().iter().zip(r).map(|(s, t)| (t - s).max(0.0)).collect();
    let err_c: Vec<f64> = p.col_sums().iter().zip(c).map(|(s, t)| (t - s).max(0.0)).collect();
    let total: f64 = err_r.iter().sum();
    if total > 0.0 {
        for (i, er) in err_r.iter().enumerate() {
            let w = er / total;
            for (v, ec) in p.row_mut(i).iter_mut().zip(&err_c) {
                *v += w * ec;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LotSolution {
    pub q: DoublyStochasticMatrix,
    pub converged: bool,
    pub iterations: usize,
    /// Marginal violation of the last Sinkhorn iterate, before rounding.
    pub raw_violation: f64,
    pub violation: f64,
    /// Factor the profits were divided by (1 when scaling is off or the
    /// profits are all zero).
    pub scale: f64,
}

/// Doubly stochastic entropic approximation to the assignment maximizing
/// `⟨Q, profit⟩`.
pub fn lot(profit: &DenseMatrix, params: &LotParams) -> Result<DoublyStochasticMatrix> {
    lot_detailed(profit, params).map(|s| s.q)
}

pub fn lot_detailed(profit: &DenseMatrix, params: &LotParams) -> Result<LotSolution> {
    if !profit.is_square() {
        return Err(Error::shape(format!(
            "LOT needs a square profit, got {}x{}",
            profit.rows(),
            profit.cols()
        )));
    }
    let n = profit.rows();
    let max_abs = profit.max_abs();
    let scale = if params.scale_profit && max_abs > 0.0 {
        max_abs
    } else {
        1.0
    };
    let cost = profit.scale(-1.0 / scale);
    let ones = vec![1.0; n];
    let plan = sinkhorn_plan(&cost, &ones, &ones, params)?;
    if !plan.converged {
        log::debug!(
            "LOT stopped after {} iterations with marginal violation {:e}",
            plan.iterations,
            plan.raw_violation
        );
    }
    Ok(LotSolution {
        q: DoublyStochasticMatrix::new_unchecked(plan.plan, plan.violation.max(params.tol)),
        converged: plan.converged,
        iterations: plan.iterations,
        raw_violation: plan.raw_violation,
        violation: plan.violation,
        scale,
    })
}

/// Alternating row/column normalization of a positive matrix; `passes`
/// full sweeps. Rows or columns that sum to zero are left untouched.
pub fn balance(m: &DenseMatrix, passes: usize) -> DenseMatrix {
    let mut out = m.clone();
    let (n, k) = (m.rows(), m.cols());
    for _ in 0..passes {
        for i in 0..n {
            let s: f64 = out.row(i).iter().sum();
            if s > 0.0 {
                out.row_mut(i).iter_mut().for_each(|v| *v /= s);
            }
        }
        let cols = out.col_sums();
        for i in 0..n {
            let row = out.row_mut(i);
            for j in 0..k {
                if cols[j] > 0.0 {
                    row[j] /= cols[j];
                }
            }
        }
    }
    out
}
