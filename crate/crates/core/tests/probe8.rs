use ttnet_core::features::FeatureMap;
use ttnet_core::harness::{sample_dataset, Problem};
use ttnet_core::learn::{rank_adapt_path, FitOptions};
use ttnet_core::tree::DimensionTree;

#[test]
fn path_detail_l9() {
    let data = sample_dataset(Problem::SqrtX, 1000, 0.001, 42).unwrap();
    let fm = FeatureMap::tensorized(2, 9, 1, 0).unwrap();
    let tree = DimensionTree::linear(10).unwrap();
    for (steps, max_sweeps) in [(25usize, 15usize)] {
        let opts = FitOptions {
            max_sweeps,
            rel_tol: 1e-9,
            ridge: 1e-10,
            seed: 1,
            restarts: 3,
        };
        let t0 = std::time::Instant::now();
        let path = rank_adapt_path(&tree, &fm, &data, steps, &opts).unwrap();
        for p in &path {
            println!(
                "C {:4} emp {:10.3e} sweeps {:2} ranks {:?}",
                p.complexity,
                p.empirical_risk,
                p.sweeps,
                p.fitted.ranks()
            );
        }
        println!("path took {:?}", t0.elapsed());
    }
}
