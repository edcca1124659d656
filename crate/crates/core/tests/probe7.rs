use std::path::PathBuf;
use ttnet_core::harness::{
    run_experiment, CandidateSection, ExperimentConfig, ExperimentSection, FitSection,
};

#[test]
fn probe_sqrt_table() {
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig {
        experiment: ExperimentSection {
            problem: "sqrt_x".into(),
            n: 1000,
            gamma: 1e-3,
            trials: 5,
            test_size: 100_000,
            seed: 20260809,
            output_dir: PathBuf::from(dir.path()),
        },
        candidates: CandidateSection {
            mode: "tensorized".into(),
            base: 2,
            l_min: 1,
            l_max: 12,
            tail_degree: 0,
            steps: 40,
            paths_per_l: 2,
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
    for o in &report.outcomes {
        println!(
            "trial {}: sel id {} C {} emp {:.3e} excess {:.3e} | oracle id {} C {} excess {:.3e} | lambda_cj {:?}",
            o.trial,
            o.selected_id,
            o.selected_complexity,
            o.selected_emp_risk,
            o.selected_excess,
            o.oracle_id,
            o.oracle_complexity,
            o.oracle_excess,
            o.lambda_cj
        );
    }
    // Inspect trial 0's cloud around the selection.
    let t0: Vec<_> = report.rows.iter().filter(|r| r.trial == 0).collect();
    let mut sorted: Vec<_> = t0.clone();
    sorted.sort_by(|a, b| a.complexity.cmp(&b.complexity));
    println!("\ntrial 0 cloud (every 8th record by C):");
    for (i, r) in sorted.iter().enumerate() {
        if i % 8 == 0 || r.id == report.outcomes[0].selected_id || r.id == report.outcomes[0].oracle_id {
            println!(
                "  id {:3} L {:?} C {:4} emp {:.3e} excess {:.3e}",
                r.id, r.resolution, r.complexity, r.emp_risk, r.excess_risk
            );
        }
    }
}
