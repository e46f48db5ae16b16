//! Dense linear assignment.
//!
//! Shortest-augmenting-path solver with dual potentials (the Jonker-Volgenant
//! family), O(n³). Rows are inserted in index order and, whenever several
//! columns share the minimal reduced cost, the lowest column index is taken,
//! so the returned permutation is a pure function of the matrix values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, PermutationMapping};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssignmentSolution {
    pub permutation: PermutationMapping,
    /// `Σ_i score[i, π(i)]` of the input matrix, summed in row order.
    pub value: f64,
}

fn check(m: &DenseMatrix) -> Result<()> {
    if !m.is_square() {
        return Err(Error::shape(format!(
            "assignment needs a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    if m.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("non-finite assignment score"));
    }
    Ok(())
}

fn assignment_value(m: &DenseMatrix, perm: &PermutationMapping) -> f64 {
    (0..m.rows()).map(|i| m.get(i, perm.apply(i))).sum()
}

/// Permutation maximizing `Σ_i profit[i, π(i)]`.
pub fn solve_lap_max(profit: &DenseMatrix) -> Result<AssignmentSolution> {
    check(profit)?;
    let perm = shortest_augmenting_path(profit.rows(), |i, j| -profit.get(i, j));
    let value = assignment_value(profit, &perm);
    Ok(AssignmentSolution {
        permutation: perm,
        value,
    })
}

/// Permutation minimizing `Σ_i cost[i, π(i)]`.
pub fn solve_lap_min(cost: &DenseMatrix) -> Result<AssignmentSolution> {
    check(cost)?;
    let perm = shortest_augmenting_path(cost.rows(), |i, j| cost.get(i, j));
    let value = assignment_value(cost, &perm);
    Ok(AssignmentSolution {
        permutation: perm,
        value,
    })
}

/// Minimum-cost perfect matching. Index 0 of the column arrays is a virtual
/// column used as the root of each augmenting search.
fn shortest_augmenting_path(n: usize, cost: impl Fn(usize, usize) -> f64) -> PermutationMapping {
    if n == 0 {
        return PermutationMapping::identity(0);
    }
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    // row_of[j]: row currently assigned to column j (1-based, 0 = free)
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0f64; n + 1];
    let mut used = vec![false; n + 1];

    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|u| *u = false);

        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                // strict: the lowest column index wins ties
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }

        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut image = vec![0usize; n];
    for j in 1..=n {
        image[row_of[j] - 1] = j - 1;
    }
    PermutationMapping::new(image).expect("augmenting paths yield a perfect matching")
}
