//! Entropic transport over doubly stochastic matrices: where the assignment
//! problem has tied optima, LOT spreads mass across them.

use goatbli::matrix::{marginal_violation, DenseMatrix};
use goatbli::sinkhorn::{lot_detailed, LotParams};

fn main() -> goatbli::Result<()> {
    let grad = DenseMatrix::from_rows(&[[0.0, 3.0, 0.0], [2.0, 1.0, 2.0], [0.0, 0.0, 0.0]])?;
    for reg in [1.0, 10.0, 500.0] {
        let sol = lot_detailed(&grad, &LotParams::with_reg(reg)?)?;
        let q = sol.q.matrix();
        println!("reg {reg}: trace(QᵀG) = {:.4}, violation {:.1e}", q.dot(&grad), marginal_violation(q));
        for i in 0..3 {
            println!("  {:.3} {:.3} {:.3}", q.get(i, 0), q.get(i, 1), q.get(i, 2));
        }
    }
    Ok(())
}
