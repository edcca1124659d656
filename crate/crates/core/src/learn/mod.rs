//! Empirical-risk minimization over tree tensor networks and adaptive
//! candidate generation.
//!
//! Fitting is alternating least squares: sweeping the tree root-to-leaves,
//! each node's tensor is re-solved from a ridge-regularized linear
//! least-squares subproblem while the rest of the network is orthogonalized
//! around it. Exploration builds candidate model sequences by incrementing
//! ranks where the estimated truncation error is highest, by locally
//! perturbing the dimension tree, and by sweeping the tensorization
//! resolution.

mod als;
mod adapt;
mod candidates;

pub use adapt::{estimate_truncation_errors, rank_adapt_path, tree_adapt, TreeAdaptOptions};
pub use als::{fit_als, refine_als, FitDiagnostics, FitResult};
pub use candidates::{generate_candidates, CandidateConfig};

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::network::{ModelSpec, TreeTensorNetwork};

/// Training sample of input points and scalar outputs.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<f64>,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, outputs: Vec<f64>) -> Result<Self> {
        if inputs.len() != outputs.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} inputs vs {} outputs",
                inputs.len(),
                outputs.len()
            )));
        }
        if inputs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if outputs.iter().any(|y| !y.is_finite())
            || inputs.iter().flatten().any(|x| !x.is_finite())
        {
            return Err(Error::NonFinite("dataset entry".into()));
        }
        Ok(Dataset { inputs, outputs })
    }

    pub fn n(&self) -> usize {
        self.outputs.len()
    }

    /// First/second halves, for the optional split between tree search and
    /// model fitting.
    pub fn split_half(&self) -> (Dataset, Dataset) {
        let mid = self.n() / 2;
        (
            Dataset {
                inputs: self.inputs[..mid].to_vec(),
                outputs: self.outputs[..mid].to_vec(),
            },
            Dataset {
                inputs: self.inputs[mid..].to_vec(),
                outputs: self.outputs[mid..].to_vec(),
            },
        )
    }
}

/// Options for [`fit_als`].
#[derive(Clone, Debug)]
pub struct FitOptions {
    pub max_sweeps: usize,
    /// Stop when the relative risk improvement over a sweep drops below this.
    pub rel_tol: f64,
    /// Ridge weight, scaled by the mean diagonal of each subproblem's normal
    /// matrix.
    pub ridge: f64,
    pub seed: u64,
    /// Number of random initializations; the best final risk wins.
    pub restarts: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_sweeps: 15,
            rel_tol: 1e-9,
            ridge: 1e-10,
            seed: 0,
            restarts: 3,
        }
    }
}

/// A fitted candidate model: spec, fitted network, empirical risk and
/// complexity, plus reproducibility metadata.
#[derive(Clone, Debug)]
pub struct ModelRecord {
    pub id: u64,
    pub spec: ModelSpec,
    pub fitted: TreeTensorNetwork,
    pub empirical_risk: f64,
    pub complexity: usize,
    /// Tensorization resolution for tensorized candidates.
    pub resolution: Option<usize>,
    pub seed: u64,
    pub sweeps: usize,
    pub min_norm_fallbacks: usize,
    /// Fit wall time; diagnostic only, excluded from deterministic outputs.
    pub wall_ms: u64,
}

/// Mean squared residual `(1/n) sum (y_i - f(x_i))^2`.
pub fn empirical_risk(net: &TreeTensorNetwork, fm: &FeatureMap, data: &Dataset) -> Result<f64> {
    if data.n() == 0 {
        return Err(Error::EmptyDataset);
    }
    let preds = net.eval_batch(fm, &data.inputs)?;
    Ok(preds
        .iter()
        .zip(&data.outputs)
        .map(|(f, y)| (y - f) * (y - f))
        .sum::<f64>()
        / data.n() as f64)
}

/// Cheap deterministic mixer for deriving sub-seeds.
pub(crate) fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
