//! Procrustes, SGM and GOAT lexicon induction on planted twin spaces across
//! seed counts, printed as a table and as CSV.

use goatbli::pipelines::{render_table, run_experiment, table_csv, BliTask, ExperimentConfig, Method};
use goatbli::synthetic::{twin_spaces, TwinSpec};

fn main() -> goatbli::Result<()> {
    let (src, tgt, lex) = twin_spaces(&TwinSpec {
        words: 400,
        dim: 40,
        noise: 0.3,
        ..TwinSpec::default()
    });
    let mut reports = Vec::new();
    for seeds in [0, 10, 25, 50] {
        let task = BliTask::new("src-tgt", src.clone(), tgt.clone(), &lex, seeds)?;
        for method in [Method::Procrustes, Method::Sgm, Method::Goat] {
            let cfg = ExperimentConfig {
                pair: "src-tgt".into(),
                seeds,
                method,
                ..ExperimentConfig::default()
            };
            reports.push(run_experiment(&task, &cfg)?.without_timing());
        }
    }
    print!("{}", render_table(&reports));
    println!();
    print!("{}", table_csv(&reports));
    Ok(())
}
