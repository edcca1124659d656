//! Candidate-model generation for the three experiment families.

use super::adapt::{rank_adapt_path, rank_adapt_path_with_ties, tree_adapt, TreeAdaptOptions};
use super::{mix_seed, Dataset, FitOptions, ModelRecord};
use crate::error::{Error, Result};
use crate::features::{FeatureMap, VariableBasis};
use crate::tree::DimensionTree;

/// What family of candidate models to generate.
#[derive(Clone, Debug)]
pub enum CandidateConfig {
    /// One rank path per resolution `L` in `l_min..=l_max`, each on the
    /// linear tree over the `d(L+1)` tensorized variables.
    Tensorized {
        base: usize,
        l_min: usize,
        l_max: usize,
        tail_degree: usize,
        steps: usize,
        /// Independently seeded rank paths per resolution; more paths fill
        /// the risk-complexity cloud between one another's rank cascades.
        paths_per_l: usize,
        fit: FitOptions,
    },
    /// One rank path on a fixed tree with per-variable bases.
    FixedTree {
        tree: DimensionTree,
        bases: Vec<VariableBasis>,
        steps: usize,
        fit: FitOptions,
    },
    /// Stochastic tree search followed by one rank path per candidate tree.
    TreeAdaptive {
        bases: Vec<VariableBasis>,
        steps: usize,
        adapt: TreeAdaptOptions,
        /// Split the training data 50/50 between tree search and fitting
        /// instead of reusing the whole sample for both.
        split: bool,
        fit: FitOptions,
    },
}

/// Generate the candidate records for `config`.
///
/// `adapt_data`, when given, replaces the training data in the tree-search
/// phase of the tree-adaptive family (the experiment protocol searches trees
/// on a smaller dedicated sample).
pub fn generate_candidates(
    config: &CandidateConfig,
    data: &Dataset,
    adapt_data: Option<&Dataset>,
) -> Result<Vec<ModelRecord>> {
    let input_dim = data.inputs[0].len();
    let mut records: Vec<ModelRecord> = Vec::new();
    match config {
        CandidateConfig::Tensorized {
            base,
            l_min,
            l_max,
            tail_degree,
            steps,
            paths_per_l,
            fit,
        } => {
            if l_min > l_max {
                return Err(Error::Config("empty resolution range".into()));
            }
            for l in *l_min..=*l_max {
                let fm = FeatureMap::tensorized(*base, l, input_dim, *tail_degree)?;
                let tree = DimensionTree::linear(fm.var_count())?;
                for k in 0..(*paths_per_l).max(1) {
                    let opts = FitOptions {
                        seed: mix_seed(fit.seed, mix_seed(l as u64, k as u64)),
                        ..fit.clone()
                    };
                    // Path 0 is canonical; later paths decorrelate their
                    // cascades through a seeded tie order.
                    let tie_seed = (k > 0).then(|| mix_seed(opts.seed, 0x7E + k as u64));
                    let path =
                        rank_adapt_path_with_ties(&tree, &fm, data, *steps, &opts, tie_seed)?;
                    for mut record in path {
                        record.resolution = Some(l);
                        record.id = records.len() as u64;
                        records.push(record);
                    }
                }
            }
        }
        CandidateConfig::FixedTree {
            tree,
            bases,
            steps,
            fit,
        } => {
            let fm = FeatureMap::plain(bases.clone());
            if fm.var_count() != input_dim {
                return Err(Error::Config(format!(
                    "{} bases for inputs of dimension {input_dim}",
                    bases.len()
                )));
            }
            let path = rank_adapt_path(tree, &fm, data, *steps, fit)?;
            for mut record in path {
                record.id = records.len() as u64;
                records.push(record);
            }
        }
        CandidateConfig::TreeAdaptive {
            bases,
            steps,
            adapt,
            split,
            fit,
        } => {
            let fm = FeatureMap::plain(bases.clone());
            if fm.var_count() != input_dim {
                return Err(Error::Config(format!(
                    "{} bases for inputs of dimension {input_dim}",
                    bases.len()
                )));
            }
            let init = DimensionTree::random_binary(input_dim, adapt.seed)?;
            let search_half;
            let fit_half;
            let (search_data, fit_data): (&Dataset, &Dataset) = if *split {
                let (a, b) = data.split_half();
                search_half = a;
                fit_half = b;
                (&search_half, &fit_half)
            } else {
                (adapt_data.unwrap_or(data), data)
            };
            let trees = tree_adapt(search_data, &fm, &init, adapt)?;
            for (k, tree) in trees.iter().enumerate() {
                let opts = FitOptions {
                    seed: mix_seed(fit.seed, k as u64),
                    ..fit.clone()
                };
                let path = rank_adapt_path(tree, &fm, fit_data, *steps, &opts)?;
                for mut record in path {
                    record.id = records.len() as u64;
                    records.push(record);
                }
            }
        }
    }
    if records.is_empty() {
        return Err(Error::EmptyCollection);
    }
    Ok(records)
}
