//! Benchmark target functions, input laws, and noisy dataset sampling.

use crate::error::{Error, Result};
use crate::features::{FeatureMap, VariableBasis};
use crate::learn::Dataset;
use crate::network::TreeTensorNetwork;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

/// The benchmark problems. Inputs follow each problem's own law; outputs are
/// `y = f*(x) + eps` with `eps ~ N(0, (gamma * sigma)^2)` where `sigma` is
/// the standard deviation of `f*(X)` under the input law.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Problem {
    SqrtX,
    Inv1px,
    GgSquared,
    CornerPeak,
    Borehole,
}

impl std::str::FromStr for Problem {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sqrt_x" => Ok(Problem::SqrtX),
            "inv_1px" => Ok(Problem::Inv1px),
            "gg_squared" => Ok(Problem::GgSquared),
            "corner_peak" => Ok(Problem::CornerPeak),
            "borehole" => Ok(Problem::Borehole),
            other => Err(Error::Config(format!("unknown problem {other:?}"))),
        }
    }
}

impl std::fmt::Display for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Problem::SqrtX => "sqrt_x",
            Problem::Inv1px => "inv_1px",
            Problem::GgSquared => "gg_squared",
            Problem::CornerPeak => "corner_peak",
            Problem::Borehole => "borehole",
        };
        f.write_str(name)
    }
}

impl Problem {
    pub fn input_dim(&self) -> usize {
        match self {
            Problem::SqrtX | Problem::Inv1px | Problem::GgSquared => 1,
            Problem::CornerPeak => 10,
            Problem::Borehole => 8,
        }
    }

    /// Exact target value at a point of the problem's domain.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "point of dimension {} for {self}",
                x.len()
            )));
        }
        Ok(match self {
            Problem::SqrtX => x[0].sqrt(),
            Problem::Inv1px => 1.0 / (1.0 + x[0]),
            Problem::GgSquared => {
                let g = |t: f64| 1.0 - 2.0 * (t - 0.5).abs();
                let v = g(g(x[0]));
                v * v
            }
            Problem::CornerPeak => {
                let mut s = 0.0;
                for (nu, &xv) in x.iter().enumerate() {
                    let c = ((nu + 1) as f64).powi(-2);
                    s += c * xv;
                }
                1.0 / (1.0 + s)
            }
            Problem::Borehole => borehole(x),
        })
    }

    /// Draw one input point from the problem's law.
    pub fn sample_input(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            Problem::SqrtX | Problem::Inv1px | Problem::GgSquared => {
                vec![rng.gen_range(0.0..1.0)]
            }
            Problem::CornerPeak => (0..10).map(|_| rng.gen_range(0.0..1.0)).collect(),
            Problem::Borehole => {
                let mut x = Vec::with_capacity(8);
                for nu in 0..8 {
                    if nu < 2 {
                        let g: f64 = StandardNormal.sample(rng);
                        x.push(g);
                    } else {
                        x.push(rng.gen_range(-1.0..1.0));
                    }
                }
                x
            }
        }
    }

    /// Default per-variable bases for the plain (non-tensorized) problems:
    /// Legendre for uniform variables, Hermite for the standardized normals.
    pub fn default_bases(&self, size: usize) -> Vec<VariableBasis> {
        match self {
            Problem::SqrtX | Problem::Inv1px | Problem::GgSquared => {
                vec![VariableBasis::legendre01(size)]
            }
            Problem::CornerPeak => (0..10).map(|_| VariableBasis::legendre01(size)).collect(),
            Problem::Borehole => {
                let mut bases = vec![VariableBasis::hermite(size), VariableBasis::hermite(size)];
                for _ in 2..8 {
                    bases.push(VariableBasis::legendre(-1.0, 1.0, size));
                }
                bases
            }
        }
    }

    /// Standard deviation of `f*(X)` under the input law, estimated once per
    /// problem by a fixed-seed Monte Carlo of one million draws and cached.
    pub fn reference_std(&self) -> f64 {
        static CACHE: OnceLock<Mutex<HashMap<Problem, f64>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(&v) = cache.lock().unwrap().get(self) {
            return v;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x51D0 ^ *self as u64);
        let n = 1_000_000usize;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let x = self.sample_input(&mut rng);
            let f = self.eval(&x).expect("in-domain sample");
            sum += f;
            sum_sq += f * f;
        }
        let mean = sum / n as f64;
        let var = (sum_sq / n as f64 - mean * mean).max(0.0);
        let std = var.sqrt();
        cache.lock().unwrap().insert(*self, std);
        std
    }
}

/// Water flow through a borehole, with the eight physical parameters
/// recovered from standardized inputs: `U1 = 0.1 + 0.0161812 X1` and
/// `U2 = 7.71 + 1.0056 X2` from standard normals, the remaining six affine
/// images of `U(-1, 1)` onto their physical ranges.
fn borehole(x: &[f64]) -> f64 {
    let unif = |t: f64, lo: f64, hi: f64| lo + (hi - lo) * (t + 1.0) / 2.0;
    let u1 = 0.1 + 0.0161812 * x[0];
    let u2 = 7.71 + 1.0056 * x[1];
    let u3 = unif(x[2], 63070.0, 115600.0);
    let u4 = unif(x[3], 990.0, 1110.0);
    let u5 = unif(x[4], 63.1, 116.0);
    let u6 = unif(x[5], 700.0, 820.0);
    let u7 = unif(x[6], 1120.0, 1680.0);
    let u8 = unif(x[7], 9855.0, 12045.0);
    let log_ratio = u2 - u1.ln();
    let numerator = 2.0 * std::f64::consts::PI * u3 * (u4 - u6);
    let denominator = log_ratio * (1.0 + 2.0 * u7 * u3 / (log_ratio * u1 * u1 * u8) + u3 / u5);
    numerator / denominator
}

/// Draw a training sample: inputs from the problem law, outputs
/// `f*(x) + eps` with Gaussian noise of standard deviation
/// `gamma * reference_std`.
pub fn sample_dataset(problem: Problem, n: usize, gamma: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let sigma = if gamma > 0.0 {
        gamma * problem.reference_std()
    } else {
        0.0
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(n);
    let mut outputs = Vec::with_capacity(n);
    for _ in 0..n {
        let x = problem.sample_input(&mut rng);
        let mut y = problem.eval(&x)?;
        if sigma > 0.0 {
            let eps: f64 = StandardNormal.sample(&mut rng);
            y += sigma * eps;
        }
        inputs.push(x);
        outputs.push(y);
    }
    Dataset::new(inputs, outputs)
}

/// Monte-Carlo risk estimates on a fresh test sample.
#[derive(Clone, Copy, Debug)]
pub struct RiskEstimate {
    /// `E (Y - f(X))^2` including the noise floor.
    pub risk: f64,
    /// `E (f(X) - f*(X))^2`, the excess risk.
    pub excess_risk: f64,
}

/// Estimate both risks of a fitted predictor on `test_size` fresh points.
pub fn test_risk(
    net: &TreeTensorNetwork,
    fm: &FeatureMap,
    problem: Problem,
    gamma: f64,
    test_seed: u64,
    test_size: usize,
) -> Result<RiskEstimate> {
    let test = sample_dataset(problem, test_size, gamma, test_seed)?;
    risk_on_sample(net, fm, problem, &test)
}

/// Risk estimates of `net` on an already-drawn sample.
pub fn risk_on_sample(
    net: &TreeTensorNetwork,
    fm: &FeatureMap,
    problem: Problem,
    test: &Dataset,
) -> Result<RiskEstimate> {
    let preds = net.eval_batch(fm, &test.inputs)?;
    let targets: Result<Vec<f64>> = test.inputs.iter().map(|x| problem.eval(x)).collect();
    Ok(risk_from_predictions(&preds, &test.outputs, &targets?))
}

/// Risk estimates from already-computed predictions and exact target values.
pub fn risk_from_predictions(preds: &[f64], outputs: &[f64], targets: &[f64]) -> RiskEstimate {
    let mut risk = 0.0;
    let mut excess = 0.0;
    for ((f, y), t) in preds.iter().zip(outputs).zip(targets) {
        risk += (y - f) * (y - f);
        excess += (f - t) * (f - t);
    }
    let n = preds.len() as f64;
    RiskEstimate {
        risk: risk / n,
        excess_risk: excess / n,
    }
}
