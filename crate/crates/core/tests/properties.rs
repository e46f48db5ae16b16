use std::collections::HashSet;

use goatbli::embeddings::{
    build_graph, filter_one_to_one, load_vec, preprocess, write_vec, EmbeddingSpace, Lexicon,
};
use goatbli::graphmatch::{run, MatchProblem, StepSolver};
use goatbli::isometry::eigenvector_similarity;
use goatbli::lap::solve_lap_max;
use goatbli::matrix::{
    barycenter, edge_disagreement, marginal_violation, qap_objective, DenseMatrix, PermutationMapping,
};
use goatbli::pipelines::{evaluate_p_at_1, intersect_hypotheses, HypothesisSet};
use goatbli::procrustes::{argmax_rows, csls_matrix, fit_orthogonal, OrthogonalMap};
use goatbli::sinkhorn::{lot, LotParams};
use goatbli::synthetic::random_orthogonal;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> DenseMatrix {
    DenseMatrix::from_fn(r, c, |_, _| rng.random_range(lo..hi))
}

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DenseMatrix {
    DenseMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn shuffled(rng: &mut ChaCha8Rng, n: usize) -> PermutationMapping {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(rng);
    PermutationMapping::new(v).unwrap()
}

fn space(rng: &mut ChaCha8Rng, n: usize, d: usize, prefix: &str) -> EmbeddingSpace {
    EmbeddingSpace::new((0..n).map(|i| format!("{prefix}{i}")).collect(), gaussian(rng, n, d)).unwrap()
}

fn words(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn disagreement_identity(seed in any::<u64>(), n in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gx = uniform(&mut rng, n, n, -1.0, 1.0);
        let gy = uniform(&mut rng, n, n, -1.0, 1.0);
        let p = shuffled(&mut rng, n);
        let lhs = gx.frobenius_norm_sq() + gy.frobenius_norm_sq()
            - 2.0 * qap_objective(&gx, &gy, &p.to_matrix()).unwrap();
        let rhs = edge_disagreement(&gx, &gy, &p).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1.0));
    }

    #[test]
    fn objective_relabeling_invariance(seed in any::<u64>(), n in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gx = uniform(&mut rng, n, n, -1.0, 1.0);
        let gy = uniform(&mut rng, n, n, -1.0, 1.0);
        let p = shuffled(&mut rng, n).to_matrix();
        let r = shuffled(&mut rng, n).to_matrix();
        let gx_r = r.matmul(&gx).unwrap().matmul_t(&r).unwrap();
        let a = qap_objective(&gx, &gy, &p).unwrap();
        let b = qap_objective(&gx_r, &gy, &r.matmul(&p).unwrap()).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn barycenter_is_doubly_stochastic(n in 1usize..1000) {
        let b = barycenter(n).unwrap();
        prop_assert!(marginal_violation(b.matrix()) <= 1e-12);
    }

    #[test]
    fn lap_matches_brute_force_and_is_deterministic(seed in any::<u64>(), n in 1usize..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // small integer range forces ties
        let m = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(0..4) as f64);
        let mut best = f64::NEG_INFINITY;
        let mut perm: Vec<usize> = (0..n).collect();
        permute(&mut perm, 0, &mut |p| {
            best = best.max(p.iter().enumerate().map(|(i, &j)| m.get(i, j)).sum());
        });
        let a = solve_lap_max(&m).unwrap();
        let b = solve_lap_max(&m).unwrap();
        prop_assert_eq!(a.value, best);
        prop_assert_eq!(&a.permutation, &b.permutation);
        let c = rng.random_range(-5..5) as f64;
        let shifted = solve_lap_max(&DenseMatrix::from_fn(n, n, |i, j| m.get(i, j) + c)).unwrap();
        prop_assert_eq!(shifted.value, best + n as f64 * c);
        prop_assert_eq!(shifted.permutation, a.permutation);
    }
}

fn permute(v: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, f);
        v.swap(k, i);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn lot_feasible_and_transpose_symmetric(seed in any::<u64>(), n in 2usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let profit = uniform(&mut rng, n, n, -2.0, 2.0);
        let params = LotParams::default();
        let q = lot(&profit, &params).unwrap();
        prop_assert!(marginal_violation(q.matrix()) <= params.tol);
        // transpose agreement is limited by the marginal tolerance
        let tight = LotParams { tol: 1e-12, max_iter: 100_000, ..params };
        let q = lot(&profit, &tight).unwrap();
        let qt = lot(&profit.transpose(), &tight).unwrap();
        let diff = qt.matrix().sub(&q.matrix().transpose()).max_abs();
        prop_assert!(diff <= 1e-9, "transpose mismatch {}", diff);
    }

    #[test]
    fn lot_value_grows_with_regularization(seed in any::<u64>(), n in 2usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let profit = uniform(&mut rng, n, n, 0.0, 1.0);
        let values: Vec<f64> = [1.0, 10.0, 100.0, 500.0]
            .iter()
            .map(|&reg| lot(&profit, &LotParams { reg, tol: 1e-10, max_iter: 100_000, ..LotParams::default() })
                .unwrap()
                .matrix()
                .dot(&profit))
            .collect();
        for w in values.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-6, "{:?}", values);
        }
    }

    #[test]
    fn seeds_preserved_and_iterates_feasible(seed in any::<u64>(), n in 4usize..16, goat in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = rng.random_range(1..n);
        let gx = uniform(&mut rng, n, n, 0.0, 1.0);
        let gy = uniform(&mut rng, n, n, 0.0, 1.0);
        let solver = if goat { StepSolver::Lot(LotParams::default()) } else { StepSolver::Hungarian };
        let problem = MatchProblem::new(gx, gy, s, solver).unwrap();
        let mut worst: f64 = 0.0;
        let result = run(&problem, Some(&mut |rec: &goatbli::graphmatch::IterationRecord| {
            worst = worst.max(rec.violation);
        })).unwrap();
        for i in 0..s {
            prop_assert_eq!(result.permutation.apply(i), i);
        }
        let bound = if goat { 1e-4 } else { 1e-6 };
        prop_assert!(worst <= bound);
        for w in result.objective_trajectory.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-7 * w[0].abs());
        }
    }

    #[test]
    fn procrustes_isometry_invariance(seed in any::<u64>(), d in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = d + rng.random_range(2..20);
        let x = gaussian(&mut rng, s, d);
        let y = gaussian(&mut rng, s, d);
        let w = fit_orthogonal(&x, &y).unwrap();
        prop_assert!(w.orthogonality_error() <= 1e-6);
        prop_assert!(w.residual(&x, &y).unwrap() <= OrthogonalMap::identity(d).residual(&x, &y).unwrap() + 1e-9);
        let q = random_orthogonal(&mut rng, d);
        let wq = fit_orthogonal(&x.matmul(&q).unwrap(), &y).unwrap();
        let expected = q.transpose().matmul(w.w()).unwrap();
        prop_assert!(wq.w().sub(&expected).max_abs() <= 1e-8);
    }

    #[test]
    fn csls_argmax_shift_and_scale_invariance(seed in any::<u64>(), n in 3usize..12, c in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian(&mut rng, n, 4);
        let y = gaussian(&mut rng, n + 2, 4);
        let scores = csls_matrix(&x, &y, 2).unwrap();
        let row = rng.random_range(0..n);
        let mut shifted = scores.clone();
        for j in 0..shifted.cols() {
            shifted.set(row, j, scores.get(row, j) + c);
        }
        prop_assert_eq!(argmax_rows(&shifted), argmax_rows(&scores));
        let scaled = csls_matrix(&x.scale(3.5), &y, 2).unwrap();
        prop_assert!(scaled.sub(&scores).max_abs() <= 1e-12);
    }

    #[test]
    fn one_to_one_filter_invariants(seed in any::<u64>(), n in 0usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs: Vec<(String, String)> = (0..n)
            .map(|_| (format!("s{}", rng.random_range(0..10)), format!("t{}", rng.random_range(0..10))))
            .collect();
        let f = filter_one_to_one(&Lexicon::new(pairs.clone()));
        let src: HashSet<_> = f.pairs.iter().map(|p| &p.0).collect();
        let tgt: HashSet<_> = f.pairs.iter().map(|p| &p.1).collect();
        prop_assert!(f.one_to_one && src.len() == f.len() && tgt.len() == f.len());
        let relabeled: Vec<(String, String)> =
            pairs.iter().map(|(a, b)| (format!("x{a}"), format!("{b}y"))).collect();
        prop_assert_eq!(filter_one_to_one(&Lexicon::new(relabeled)).len(), f.len());
    }

    #[test]
    fn preprocess_second_pass_bounded_and_graph_unit_diagonal(seed in any::<u64>(), n in 3usize..30, d in 2usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = space(&mut rng, n, d, "w");
        let once = preprocess(&raw).unwrap();
        let again = preprocess(&once.with_vectors(once.vectors().clone()).unwrap()).unwrap();
        // ‖(u − m)/‖u − m‖ − u‖ ≤ |1 − ‖u − m‖| + ‖m‖ ≤ 2‖m‖ for unit u
        let mean: Vec<f64> = (0..d).map(|j| (0..n).map(|i| once.vectors().get(i, j)).sum::<f64>() / n as f64).collect();
        let m = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        for i in (0..n).filter(|i| !once.degenerate_rows().contains(i)) {
            let change: f64 = (0..d)
                .map(|j| (again.vectors().get(i, j) - once.vectors().get(i, j)).powi(2))
                .sum::<f64>()
                .sqrt();
            prop_assert!(change <= 2.0 * m + 1e-12, "row {} moved {} with mean norm {}", i, change, m);
        }
        let subset = words("w", n);
        let g = build_graph(&once, &subset).unwrap();
        prop_assert!(g.is_symmetric(1e-12));
        for i in 0..n {
            if !once.degenerate_rows().contains(&i) {
                prop_assert!((g.get(i, i) - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn vec_round_trip(seed in any::<u64>(), n in 1usize..20, d in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dir = tempfile::tempdir().unwrap();
        let original = space(&mut rng, n, d, "w");
        let path = dir.path().join("a.vec");
        write_vec(&original, &path).unwrap();
        let first = load_vec(&path, None).unwrap();
        let path2 = dir.path().join("b.vec");
        write_vec(&first, &path2).unwrap();
        prop_assert_eq!(load_vec(&path2, None).unwrap(), first);
    }

    #[test]
    fn evs_is_symmetric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = space(&mut rng, 40, 6, "a");
        let b = space(&mut rng, 40, 6, "b");
        let (wa, wb) = (words("a", 40), words("b", 40));
        let ab = eigenvector_similarity(&a, &b, &wa, &wb, 5).unwrap();
        let ba = eigenvector_similarity(&b, &a, &wb, &wa, 5).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-6);
    }

    #[test]
    fn pipeline_metrics_bounded(seed in any::<u64>(), n in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let test = Lexicon::new((0..n).map(|i| (format!("s{i}"), format!("t{i}"))).collect());
        let guesses: Vec<(String, String)> = (0..n)
            .filter(|_| rng.random_bool(0.7))
            .map(|i| (format!("s{i}"), String::new()))
            .collect();
        let preds = HypothesisSet::from_pairs(
            guesses.into_iter().map(|(s, _)| (s, format!("t{}", rng.random_range(0..n)))),
            "p",
        );
        let p = evaluate_p_at_1(&preds, &test).unwrap();
        prop_assert!((0.0..=100.0).contains(&p));
        let inter = intersect_hypotheses(&preds, &HypothesisSet::new());
        prop_assert!(inter.is_empty());
    }
}

fn evs_medians(n: usize, d: usize, sigmas: &[f64]) -> Vec<f64> {
    sigmas
        .iter()
        .map(|&sigma| {
            let mut values: Vec<f64> = (0..5u64)
                .map(|seed| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let a = space(&mut rng, n, d, "w");
                    let noise = gaussian(&mut rng, n, d).scale(sigma);
                    let b = a.with_vectors(a.vectors().add(&noise)).unwrap();
                    let (a, b) = (preprocess(&a).unwrap(), preprocess(&b).unwrap());
                    let w = words("w", n);
                    eigenvector_similarity(&a, &b, &w, &w, 10).unwrap()
                })
                .collect();
            values.sort_by(f64::total_cmp);
            values[2]
        })
        .collect()
}

#[test]
fn evs_noise_separates_from_clean() {
    let medians = evs_medians(200, 20, &[0.0, 0.05, 0.2, 1.0]);
    assert_eq!(medians[0], 0.0);
    assert!(medians[1..].iter().all(|&m| m > 0.0), "{medians:?}");
}

#[test]
#[ignore = "fails: EVS jumps when the 90% mass cutoff k changes, so medians are not monotone in the noise level"]
fn evs_median_monotone_in_noise() {
    let medians = evs_medians(500, 50, &[0.0, 0.05, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0, 2.0]);
    for w in medians.windows(2) {
        assert!(w[1] >= w[0], "{medians:?}");
    }
}

#[test]
#[ignore = "fails: one normalize-center-normalize pass leaves a nonzero mean, so a second pass moves rows by up to 2·‖mean‖"]
fn preprocess_second_pass_within_1e_6() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let raw = space(&mut rng, 5000, 300, "w");
    let once = preprocess(&raw).unwrap();
    let again = preprocess(&once.with_vectors(once.vectors().clone()).unwrap()).unwrap();
    assert!(again.vectors().sub(once.vectors()).max_abs() <= 1e-6);
}
