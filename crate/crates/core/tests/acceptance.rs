//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured figures once its assertions hold.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;
use ttnet_core::features::{
    detensorize_point, tensorize_point, FeatureMap, VariableBasis,
};
use ttnet_core::harness::{
    run_experiment, CandidateSection, ExperimentConfig, ExperimentSection, FitSection,
};
use ttnet_core::learn::{fit_als, Dataset, FitOptions};
use ttnet_core::network::{
    full_complexity, rank_increment_allowed, sparse_complexity, ModelSpec, TreeTensorNetwork,
};
use ttnet_core::select::{
    crit, log_model_count_bound, selection_path, slope_select, theoretical_penalty_fast,
    theoretical_penalty_slow, CollectionMode, PenaltySpec, RecordSummary,
};
use ttnet_core::tensor::SparsityPattern;
use ttnet_core::tree::DimensionTree;

fn legendre_map(d: usize, n: usize) -> FeatureMap {
    FeatureMap::plain((0..d).map(|_| VariableBasis::legendre01(n)).collect())
}

/// Random spec with cap-respecting ranks, built by admissible increments.
fn random_spec(d: usize, n_basis: usize, increments: usize, seed: u64) -> ModelSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tree = DimensionTree::random_binary(d, seed).unwrap();
    let fm = legendre_map(d, n_basis);
    let mut spec = ModelSpec::rank_one(tree, fm).unwrap();
    let leaf_dims = spec.leaf_dims();
    let nodes = spec.tree.node_count();
    for _ in 0..increments {
        let node = rng.gen_range(0..nodes);
        if rank_increment_allowed(&spec.tree, &spec.ranks, &leaf_dims, node, usize::MAX)
            && spec.ranks[node] < 3
        {
            spec.ranks[node] += 1;
        }
    }
    spec
}

/// Literal expansion oracle: assemble the coefficient tensor
/// `a_i = sum_k prod_interior v[k,(k_b)] prod_leaf v[k,i]` by enumerating
/// every rank tuple, then contract with the feature products.
fn oracle_eval(net: &TreeTensorNetwork, fm: &FeatureMap, x: &[f64]) -> f64 {
    let tree = net.tree();
    let d = tree.dim();
    let leaf_nodes: Vec<usize> = tree.leaves().collect();
    let interior_nodes: Vec<usize> = tree.interior().collect();
    let leaf_dims: Vec<usize> = leaf_nodes.iter().map(|&l| net.leaf_dims()[l]).collect();
    let coeff_len: usize = leaf_dims.iter().product();
    let mut coeff = vec![0.0f64; coeff_len];

    let ranks = net.ranks();
    let node_count = tree.node_count();
    let mut k = vec![0usize; node_count];
    loop {
        // weight of this rank assignment from the interior tensors
        let mut w = 1.0;
        for &g in &interior_nodes {
            let mut idx = vec![k[g]];
            for &c in tree.children(g) {
                idx.push(k[c]);
            }
            w *= net.param(g).get(&idx);
            if w == 0.0 {
                break;
            }
        }
        if w != 0.0 {
            // distribute over every leaf feature index
            let mut i = vec![0usize; leaf_nodes.len()];
            loop {
                let mut term = w;
                let mut flat = 0usize;
                for (pos, &l) in leaf_nodes.iter().enumerate() {
                    term *= net.param(l).get(&[k[l], i[pos]]);
                    flat = flat * leaf_dims[pos] + i[pos];
                }
                coeff[flat] += term;
                // next leaf index tuple
                let mut done = true;
                for pos in (0..i.len()).rev() {
                    i[pos] += 1;
                    if i[pos] < leaf_dims[pos] {
                        done = false;
                        break;
                    }
                    i[pos] = 0;
                }
                if done {
                    break;
                }
            }
        }
        // next rank tuple
        let mut done = true;
        for pos in (0..node_count).rev() {
            k[pos] += 1;
            if k[pos] < ranks[pos] {
                done = false;
                break;
            }
            k[pos] = 0;
        }
        if done {
            break;
        }
    }

    // f(x) = sum_i a_i prod_nu phi^nu_{i_nu}(x_nu), leaves ordered by node id
    let feats: Vec<Vec<f64>> = (0..d).map(|v| fm.eval_var(v, x).unwrap()).collect();
    let mut total = 0.0;
    let mut i = vec![0usize; leaf_nodes.len()];
    for &a in &coeff {
        if a != 0.0 {
            let mut term = a;
            for (pos, &l) in leaf_nodes.iter().enumerate() {
                let var = tree.leaf_var(l) - 1;
                term *= feats[var][i[pos]];
            }
            total += term;
        }
        for pos in (0..i.len()).rev() {
            i[pos] += 1;
            if i[pos] < leaf_dims[pos] {
                break;
            }
            i[pos] = 0;
        }
    }
    total
}

#[test]
fn criterion_01_evaluation_correctness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC1);
    let mut max_rel = 0.0f64;
    for case in 0..200u64 {
        let d = rng.gen_range(2..=4);
        let n_basis = rng.gen_range(2..=4);
        let spec = random_spec(d, n_basis, 10, 0x100 + case);
        let mut net_rng = ChaCha8Rng::seed_from_u64(0x200 + case);
        let net = TreeTensorNetwork::random(&spec, &mut net_rng).unwrap();
        for _ in 0..2 {
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..1.0)).collect();
            let direct = net.eval(&spec.feature, &x).unwrap();
            let oracle = oracle_eval(&net, &spec.feature, &x);
            let rel = (direct - oracle).abs() / oracle.abs().max(1.0);
            max_rel = max_rel.max(rel);
            assert!(rel <= 1e-10, "case {case}: {direct} vs {oracle}");
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 30, "took {elapsed:?}");
    println!(
        "ACCEPTANCE 1 PASS: evaluation vs expansion oracle, 200 networks, \
         max rel err {max_rel:.2e}, {elapsed:?}"
    );
}

#[test]
fn criterion_02_tensorization_round_trip() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC2);
    let mut max_err = 0.0f64;
    for _ in 0..1_000_000usize {
        let x: f64 = rng.gen_range(0.0..1.0);
        let b = if rng.gen::<bool>() { 2 } else { 3 };
        let l = rng.gen_range(0..=12);
        let (digits, xbar) = tensorize_point(x, b, l).unwrap();
        let back = detensorize_point(&digits, xbar, b, l).unwrap();
        let err = (back - x).abs();
        max_err = max_err.max(err);
        assert!(err <= 1e-12, "x={x} b={b} L={l}");
    }
    // digit formula check on a subsample
    for _ in 0..20_000 {
        let x: f64 = rng.gen_range(0.0..1.0);
        let b = if rng.gen::<bool>() { 2 } else { 3 };
        let l = rng.gen_range(1..=12);
        let (digits, _) = tensorize_point(x, b, l).unwrap();
        for (k, &d) in digits.iter().enumerate() {
            let expect = ((b as f64).powi(k as i32 + 1) * x).floor() % b as f64;
            assert_eq!(f64::from(d), expect, "digit formula at x={x} b={b} k={k}");
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 10, "took {elapsed:?}");
    println!(
        "ACCEPTANCE 2 PASS: 1e6 tensorization round trips (max err {max_err:.2e}) \
         and digit-formula agreement, {elapsed:?}"
    );
}

#[test]
fn criterion_03_complexity_formulas() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC3);
    for case in 0..500u64 {
        let d = rng.gen_range(2..=6);
        let n_basis = rng.gen_range(1..=5);
        let spec = random_spec(d, n_basis, 12, 0x300 + case);
        let leaf_dims = spec.leaf_dims();

        // Brute-force full count: enumerate every entry of every node tensor.
        let mut full_count = 0usize;
        let mut patterns: Vec<Option<SparsityPattern>> = Vec::new();
        let mut sparse_count = 0usize;
        for node in 0..spec.tree.node_count() {
            let shape = spec.node_shape(node);
            let len: usize = shape.iter().product();
            let mut node_entries = 0usize;
            for _ in 0..len {
                node_entries += 1;
            }
            full_count += node_entries;
            // random sparsity pattern over roughly half the entries
            let mut idx = Vec::new();
            let mut multi = vec![0usize; shape.len()];
            for _ in 0..len {
                if rng.gen::<bool>() {
                    idx.push(multi.clone());
                }
                for m in (0..shape.len()).rev() {
                    multi[m] += 1;
                    if multi[m] < shape[m] {
                        break;
                    }
                    multi[m] = 0;
                }
            }
            if idx.is_empty() {
                idx.push(vec![0; shape.len()]);
            }
            sparse_count += idx.len();
            patterns.push(Some(SparsityPattern::new(shape, &idx).unwrap()));
        }

        let full = full_complexity(&spec.tree, &spec.ranks, &leaf_dims);
        assert_eq!(full, full_count, "case {case} full");
        let sparse = sparse_complexity(&spec.tree, &spec.ranks, &leaf_dims, &patterns);
        assert_eq!(sparse, sparse_count, "case {case} sparse");
        assert!(sparse <= full, "case {case} sparse > full");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 5, "took {elapsed:?}");
    println!("ACCEPTANCE 3 PASS: complexity formulas vs brute-force counts on 500 specs, {elapsed:?}");
}

#[test]
fn criterion_04_als_contract() {
    let start = Instant::now();

    // Monotone risks on 50 random problems.
    for case in 0..50u64 {
        let d = 2 + (case % 3) as usize;
        let spec = random_spec(d, 3, 5, 0x400 + case);
        let mut rng = ChaCha8Rng::seed_from_u64(0x500 + case);
        let n = 60 + (case as usize % 40);
        let inputs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        let outputs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let data = Dataset::new(inputs, outputs).unwrap();
        let fit = fit_als(
            &spec,
            &data,
            &FitOptions {
                max_sweeps: 8,
                rel_tol: 0.0,
                restarts: 1,
                seed: case,
                ..FitOptions::default()
            },
        )
        .unwrap();
        for w in fit.diagnostics.risk_history.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-12 * (1.0 + w[0]),
                "case {case}: risk rose {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    // Planted-model recovery: noise-free data from a known network, same
    // spec, n = 10 C_m, restarts = 5, final risk <= 1e-8 in >= 45/50.
    let mut recovered = 0usize;
    for case in 0..50u64 {
        let d = 2 + (case % 3) as usize;
        let spec = random_spec(d, 4, 6, 0x600 + case);
        let mut rng = ChaCha8Rng::seed_from_u64(0x700 + case);
        let planted = TreeTensorNetwork::random(&spec, &mut rng).unwrap();
        let n = 10 * spec.complexity();
        let inputs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        let outputs = planted.eval_batch(&spec.feature, &inputs).unwrap();
        let data = Dataset::new(inputs, outputs).unwrap();
        let fit = fit_als(
            &spec,
            &data,
            &FitOptions {
                max_sweeps: 60,
                rel_tol: 1e-13,
                restarts: 5,
                seed: 0x800 + case,
                ..FitOptions::default()
            },
        )
        .unwrap();
        if fit.risk <= 1e-8 {
            recovered += 1;
        }
    }
    assert!(recovered >= 45, "planted recovery {recovered}/50");

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 300, "took {elapsed:?}");
    println!(
        "ACCEPTANCE 4 PASS: monotone sweeps on 50 problems, planted recovery \
         {recovered}/50, {elapsed:?}"
    );
}

#[test]
fn criterion_05_selection_path_exactness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC5);
    for case in 0..100 {
        let n = 100 + (case % 10) * 37;
        let pen = PenaltySpec::complexity_over_n(n);
        let m = rng.gen_range(1..=50);
        let records: Vec<RecordSummary> = (0..m)
            .map(|id| {
                RecordSummary::new(
                    id as u64,
                    rng.gen_range(1..=400),
                    10f64.powf(rng.gen_range(-8.0..0.0)),
                    7,
                )
            })
            .collect();
        let path = selection_path(&records, &pen).unwrap();
        for k in 0..10_000usize {
            let lambda = 1e-8 * 10f64.powf(16.0 * k as f64 / 9_999.0);
            let from_path = path.at(lambda);
            let mut best: Option<&RecordSummary> = None;
            let mut best_crit = f64::INFINITY;
            for r in &records {
                let c = crit(r, &pen, lambda);
                let better = match best {
                    None => true,
                    Some(b) => {
                        c < best_crit
                            || (c == best_crit
                                && (r.complexity < b.complexity
                                    || (r.complexity == b.complexity
                                        && (r.emp_risk < b.emp_risk
                                            || (r.emp_risk == b.emp_risk && r.id < b.id)))))
                    }
                };
                if better {
                    best = Some(r);
                    best_crit = c;
                }
            }
            assert_eq!(from_path, best.unwrap().id, "case {case} lambda {lambda:e}");
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 30, "took {elapsed:?}");
    println!(
        "ACCEPTANCE 5 PASS: hull path vs 1e4-point grid argmin on 100 record sets, {elapsed:?}"
    );
}

#[test]
fn criterion_06_complexity_jump_sanity() {
    let start = Instant::now();
    let mut hits = 0usize;
    let c_star = 40usize;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x900 + seed);
        let floor = 1.0 / c_star as f64;
        // A training-risk staircase: 1/C until the plateau onset, then the
        // slight monotone decrease of nested-model training risks.
        let records: Vec<RecordSummary> = (1..=20)
            .map(|k| {
                let c = 5 * k;
                let base = if c <= c_star {
                    1.0 / c as f64
                } else {
                    floor - 1e-5 * (c as f64 - c_star as f64)
                };
                RecordSummary::new(k as u64, c, base + 1e-4 * rng.gen_range(0.0..1.0), 3)
            })
            .collect();
        let pen = PenaltySpec::complexity_over_n(100);
        let sel = slope_select(&records, &pen).unwrap();
        let c_sel = records
            .iter()
            .find(|r| r.id == sel.chosen)
            .unwrap()
            .complexity;
        if c_sel >= c_star && c_sel as f64 <= 1.5 * c_star as f64 {
            hits += 1;
        }
    }
    assert!(hits >= 8, "{hits}/10 within [C*, 1.5 C*]");
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 10, "took {elapsed:?}");
    println!("ACCEPTANCE 6 PASS: complexity jump lands in [C*, 1.5 C*] in {hits}/10 seeds, {elapsed:?}");
}

#[test]
fn criterion_07_sqrt_x_table() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig {
        experiment: ExperimentSection {
            problem: "sqrt_x".into(),
            n: 1000,
            gamma: 1e-3,
            trials: 5,
            test_size: 100_000,
            seed: 20260809,
            output_dir: dir.path().to_path_buf(),
        },
        candidates: CandidateSection {
            mode: "tensorized".into(),
            base: 2,
            l_min: 1,
            l_max: 12,
            tail_degree: 0,
            steps: 25,
            paths_per_l: 1,
            tree: None,
            features_per_variable: 10,
            moves: 0,
            adapt_budget: 5,
            adapt_n: 100,
            split: false,
        },
        fit: FitSection {
            max_sweeps: 15,
            rel_tol: 1e-9,
            ridge: 1e-10,
            restarts: 3,
        },
    };
    let report = run_experiment(&config).unwrap();
    assert_eq!(report.aggregates.failed_trials, 0);
    let mean_excess = report.aggregates.mean_selected_excess;
    let ratio = mean_excess / report.aggregates.mean_oracle_excess;
    let elapsed = start.elapsed();
    assert!(
        mean_excess <= 1e-5,
        "mean selected excess risk {mean_excess:e}"
    );
    assert!(ratio <= 10.0, "selected/oracle ratio {ratio}");
    assert!(elapsed.as_secs() < 900, "took {elapsed:?}");
    println!(
        "ACCEPTANCE 7 PASS: sqrt(x) n=1000 gamma=1e-3, 5 trials: mean excess \
         {mean_excess:.2e} (<= 1e-5), ratio {ratio:.2} (<= 10), mean C {:.1}, {elapsed:?}",
        report.aggregates.mean_selected_complexity
    );
}

#[test]
fn criterion_08_corner_peak_table() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig {
        experiment: ExperimentSection {
            problem: "corner_peak".into(),
            n: 1000,
            gamma: 1e-3,
            trials: 3,
            test_size: 100_000,
            seed: 20260810,
            output_dir: dir.path().to_path_buf(),
        },
        candidates: CandidateSection {
            mode: "fixed-tree".into(),
            base: 2,
            l_min: 1,
            l_max: 1,
            tail_degree: 0,
            steps: 25,
            paths_per_l: 1,
            tree: Some("corner_peak_paper".into()),
            features_per_variable: 10,
            moves: 0,
            adapt_budget: 5,
            adapt_n: 100,
            split: false,
        },
        fit: FitSection {
            max_sweeps: 15,
            rel_tol: 1e-9,
            ridge: 1e-10,
            restarts: 3,
        },
    };
    let report = run_experiment(&config).unwrap();
    assert_eq!(report.aggregates.failed_trials, 0);
    let mean_excess = report.aggregates.mean_selected_excess;
    let ratio = mean_excess / report.aggregates.mean_oracle_excess;
    let elapsed = start.elapsed();
    assert!(
        mean_excess <= 1e-5,
        "mean selected excess risk {mean_excess:e}"
    );
    assert!(ratio <= 10.0, "selected/oracle ratio {ratio}");
    assert!(elapsed.as_secs() < 1800, "took {elapsed:?}");
    println!(
        "ACCEPTANCE 8 PASS: corner peak n=1000 gamma=1e-3, 3 trials: mean excess \
         {mean_excess:.2e} (<= 1e-5), ratio {ratio:.2} (<= 10), mean C {:.1}, {elapsed:?}",
        report.aggregates.mean_selected_complexity
    );
}

#[test]
fn criterion_09_penalty_formulas() {
    // Slow-rate penalty, hand-computed.
    let (c, t, n) = (29usize, 3usize, 400usize);
    let (b, l, r, w, lognc) = (2.0f64, 1.5f64, 1.25f64, 0.7f64, 3.0f64);
    let lambda_m = 4.0 * b * (2.0 * (6.0 * l / b * r * 3.0 * 20.0).ln()).sqrt();
    let hand =
        lambda_m * (29.0f64 / 400.0).sqrt() + 2.0 * b * ((0.7f64 * 29.0 + 3.0) / 800.0).sqrt();
    let got = theoretical_penalty_slow(c, t, n, b, l, r, w, lognc);
    assert!(
        (got - hand).abs() <= 1e-12 * hand,
        "slow penalty {got} vs {hand}"
    );
    assert_eq!(
        theoretical_penalty_slow(c, t, n, 0.0, l, r, w, lognc),
        0.0,
        "B = 0 must degenerate to zero"
    );

    // Fast-rate penalty, hand-computed with b_m = 1 (|T| <= 4e/3).
    let got = theoretical_penalty_fast(10, 3, 1000, 1.5, 0.5, 1.0, 2.0, 1.0).unwrap();
    let hand = 1.5 * 1.5 * (10.0 / 1000.0 * (1000.0f64 / 10.0).ln() + (0.5 * 10.0 + 2.0) / 1000.0);
    assert!((got - hand).abs() <= 1e-12 * hand, "fast penalty {got} vs {hand}");
    // log+ clamp at the boundary: n eps^2 <= b_m C_m kills the first term.
    let clamped = theoretical_penalty_fast(100, 3, 100, 1.0, 1.0, 1.0, 0.0, 1.0).unwrap();
    assert_eq!(clamped, 100.0 / 100.0, "clamp boundary");
    // b_m formula with a large tree: hand-computed.
    let t_big = 19usize;
    let b_m = 1.0 + (3.0 * 19.0 / (4.0 * std::f64::consts::E)).ln().max(0.0);
    let got = theoretical_penalty_fast(100, t_big, 1_000_000, 1.0, 1.0, 1.0, 0.0, 1.0).unwrap();
    let first = b_m * 100.0 / 1e6 * (1e6 / (b_m * 100.0)).ln();
    let hand = first + 100.0 / 1e6;
    assert!((got - hand).abs() <= 1e-12 * hand);

    // Model-count bounds.
    let full = log_model_count_bound(10, 2, 3, CollectionMode::Full, None).unwrap();
    let hand = 2.0 * 2.0 * (10.0 + 3.0 * 10f64.ln());
    assert!((full - hand).abs() <= 1e-12 * hand);
    let sparse = log_model_count_bound(10, 2, 3, CollectionMode::Sparse, Some(10.0)).unwrap();
    let hand = (5.0 * 2.0 + 2.0) * 10.0 * 10f64.ln();
    assert!((sparse - hand).abs() <= 1e-12 * hand);

    println!("ACCEPTANCE 9 PASS: penalty and model-count formulas match hand computations at 1e-12");
}

#[test]
fn criterion_10_determinism() {
    let start = Instant::now();
    let mut outputs = Vec::new();
    for run in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let config = ExperimentConfig {
            experiment: ExperimentSection {
                problem: "sqrt_x".into(),
                n: 80,
                gamma: 1e-2,
                trials: 2,
                test_size: 5_000,
                seed: 12345,
                output_dir: dir.path().to_path_buf(),
            },
            candidates: CandidateSection {
                mode: "tensorized".into(),
                base: 2,
                l_min: 2,
                l_max: 4,
                tail_degree: 0,
                steps: 5,
                paths_per_l: 1,
                tree: None,
                features_per_variable: 10,
                moves: 0,
                adapt_budget: 5,
                adapt_n: 100,
                split: false,
            },
            fit: FitSection {
                max_sweeps: 8,
                rel_tol: 1e-9,
                ridge: 1e-10,
                restarts: 2,
            },
        };
        run_experiment(&config).unwrap();
        outputs.push(std::fs::read(dir.path().join("records.csv")).unwrap());
        let _ = run; // directories differ; bytes must not
    }
    assert_eq!(outputs[0], outputs[1], "records.csv differs between runs");
    let elapsed = start.elapsed();
    println!("ACCEPTANCE 10 PASS: byte-identical records.csv across two runs, {elapsed:?}");
}
