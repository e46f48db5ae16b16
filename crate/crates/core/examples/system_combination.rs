//! Iterative stochastic-add and the GOAT/IterProc combination with both
//! endings, plus a correlation report across noise levels.

use goatbli::isometry::eigenvector_similarity;
use goatbli::pipelines::{
    correlation_report, run_directions, run_experiment, BliTask, Direction, ExperimentConfig, Method,
};
use goatbli::synthetic::{twin_spaces, TwinSpec};

fn main() -> goatbli::Result<()> {
    let mut evs = Vec::new();
    let mut procrustes = Vec::new();
    for (k, noise) in [0.2, 0.4, 0.6, 0.8].into_iter().enumerate() {
        let (src, tgt, lex) = twin_spaces(&TwinSpec {
            words: 300,
            dim: 30,
            noise,
            seed: k as u64,
            ..TwinSpec::default()
        });
        let task = BliTask::new(&format!("src{k}-tgt{k}"), src, tgt, &lex, 10)?;
        let base = ExperimentConfig {
            pair: task.pair.clone(),
            seeds: 10,
            h: 25,
            i: 3,
            rng_seed: 5,
            ..ExperimentConfig::default()
        };
        let single = run_experiment(&task, &ExperimentConfig { method: Method::Goat, ..base.clone() })?;
        let iter = run_experiment(&task, &ExperimentConfig { method: Method::IterGoat, ..base.clone() })?;
        let proc = run_experiment(&task, &ExperimentConfig { method: Method::Procrustes, ..base.clone() })?;
        println!(
            "{} (noise {noise}): Procrustes {:.1}  GOAT {:.1}  IterGOAT {:.1}",
            task.pair, proc.p_at_1, single.p_at_1, iter.p_at_1
        );
        let both = ExperimentConfig {
            method: Method::Combine,
            direction: Direction::Both,
            ..base
        };
        for r in run_directions(&task, None, &both)? {
            println!("  {} {}: {:.1}", r.pair, r.method, r.p_at_1);
        }
        let sources: Vec<&str> = task.lexicon.sources();
        let targets: Vec<&str> = task.lexicon.targets();
        evs.push(eigenvector_similarity(&task.src, &task.tgt, &sources, &targets, 10)?);
        procrustes.push(proc.p_at_1);
    }
    let c = correlation_report(&evs, &procrustes)?;
    println!("EVS vs Procrustes P@1: Spearman {:.3}, Pearson {:.3}", c.spearman, c.pearson);
    Ok(())
}
