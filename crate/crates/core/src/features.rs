//! Tensor-product feature maps.
//!
//! Two kinds are supported: plain per-variable polynomial bases (Legendre for
//! uniform inputs, Hermite for Gaussian inputs), and the tensorized feature
//! space that identifies a function on `[0,1)^d` with a higher-order tensor
//! through base-`b` digit expansion at resolution `L`.
//!
//! Every basis is normalized so that `||phi^nu||_{2,mu} = 1`: an orthonormal
//! family w.r.t. the variable's reference measure, rescaled by `N^{-1/2}`.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Basis family for one (effective) variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BasisFamily {
    /// Orthonormal Legendre polynomials for the uniform measure on `[lo, hi)`.
    Legendre { lo: f64, hi: f64 },
    /// Orthonormal (probabilists') Hermite polynomials for the standard
    /// normal measure.
    Hermite,
    /// Indicator block `e(i)` on the digit alphabet `{0, ..., base-1}`.
    DigitOneHot { base: usize },
}

/// One variable's basis descriptor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableBasis {
    pub family: BasisFamily,
    /// Number of basis functions `N`.
    pub size: usize,
}

impl VariableBasis {
    pub fn legendre01(size: usize) -> Self {
        VariableBasis {
            family: BasisFamily::Legendre { lo: 0.0, hi: 1.0 },
            size,
        }
    }

    pub fn legendre(lo: f64, hi: f64, size: usize) -> Self {
        VariableBasis {
            family: BasisFamily::Legendre { lo, hi },
            size,
        }
    }

    pub fn hermite(size: usize) -> Self {
        VariableBasis {
            family: BasisFamily::Hermite,
            size,
        }
    }

    /// Evaluate the (rescaled) basis at a scalar input.
    pub fn eval(&self, x: f64) -> Result<Vec<f64>> {
        match &self.family {
            BasisFamily::Legendre { lo, hi } => {
                if !(x >= *lo && x <= *hi) {
                    return Err(Error::Domain(format!(
                        "{x} outside Legendre interval [{lo}, {hi}]"
                    )));
                }
                Ok(legendre_orthonormal(x, *lo, *hi, self.size)
                    .into_iter()
                    .map(|v| v / (self.size as f64).sqrt())
                    .collect())
            }
            BasisFamily::Hermite => Ok(hermite_orthonormal(x, self.size)
                .into_iter()
                .map(|v| v / (self.size as f64).sqrt())
                .collect()),
            BasisFamily::DigitOneHot { base } => {
                let i = x as usize;
                if x.fract() != 0.0 || i >= *base {
                    return Err(Error::Domain(format!("{x} is not a digit below {base}")));
                }
                let mut v = vec![0.0; *base];
                v[i] = 1.0;
                Ok(v)
            }
        }
    }
}

/// Orthonormal shifted Legendre values `(sqrt(2k+1) P_k(t))_{k < n}` w.r.t.
/// the uniform probability measure on `[lo, hi]`.
pub fn legendre_orthonormal(x: f64, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let t = (2.0 * x - lo - hi) / (hi - lo);
    let mut out = Vec::with_capacity(n);
    let mut p_prev = 1.0f64;
    let mut p = t;
    for k in 0..n {
        let pk = if k == 0 {
            1.0
        } else if k == 1 {
            t
        } else {
            // (k)·P_k = (2k-1)·t·P_{k-1} - (k-1)·P_{k-2}
            let kf = k as f64;
            let next = ((2.0 * kf - 1.0) * t * p - (kf - 1.0) * p_prev) / kf;
            p_prev = p;
            p = next;
            next
        };
        out.push((2.0 * k as f64 + 1.0).sqrt() * pk);
    }
    out
}

/// Orthonormal probabilists' Hermite values `(He_k(x)/sqrt(k!))_{k < n}`.
pub fn hermite_orthonormal(x: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut h_prev = 1.0f64;
    let mut h = x;
    let mut fact = 1.0f64;
    for k in 0..n {
        let hk = if k == 0 {
            1.0
        } else if k == 1 {
            x
        } else {
            // He_k = x·He_{k-1} - (k-1)·He_{k-2}
            let next = x * h - (k as f64 - 1.0) * h_prev;
            h_prev = h;
            h = next;
            next
        };
        if k >= 1 {
            fact *= k as f64;
        }
        out.push(hk / fact.sqrt());
    }
    out
}

/// Base-`b` digit expansion of `x in [0,1)` at resolution `L`:
/// `x = sum_k i_k b^{-k} + b^{-L} xbar` with `i_k = floor(b^k x) mod b`.
///
/// Digits are computed by integer arithmetic on `floor(b^L x)` so they do not
/// drift for resolutions up to the supported range (`b^L < 2^53`).
pub fn tensorize_point(x: f64, base: usize, resolution: usize) -> Result<(Vec<u8>, f64)> {
    if !(0.0..1.0).contains(&x) {
        return Err(Error::Domain(format!("{x} outside [0,1)")));
    }
    if base < 2 {
        return Err(Error::Domain("base must be >= 2".into()));
    }
    let scale = (base as f64).powi(resolution as i32);
    if scale >= 9.0e15 {
        return Err(Error::Domain("b^L too large for exact digits".into()));
    }
    let m = (x * scale).floor().min(scale - 1.0) as u64;
    let mut digits = vec![0u8; resolution];
    let mut rem = m;
    for k in (0..resolution).rev() {
        digits[k] = (rem % base as u64) as u8;
        rem /= base as u64;
    }
    let xbar = (x * scale - m as f64).clamp(0.0, 1.0 - f64::EPSILON);
    Ok((digits, xbar))
}

/// The map `t_{b,L}`: reassemble `x` from digits and tail.
pub fn detensorize_point(digits: &[u8], xbar: f64, base: usize, resolution: usize) -> Result<f64> {
    if digits.len() != resolution {
        return Err(Error::Domain(format!(
            "expected {resolution} digits, got {}",
            digits.len()
        )));
    }
    if !(0.0..1.0).contains(&xbar) {
        return Err(Error::Domain(format!("tail {xbar} outside [0,1)")));
    }
    let b = base as f64;
    let mut acc = xbar;
    for &d in digits.iter().rev() {
        if usize::from(d) >= base {
            return Err(Error::Domain(format!("digit {d} out of range")));
        }
        acc = (f64::from(d) + acc) / b;
    }
    Ok(acc)
}

/// Tensorization descriptor: base `b`, resolution `L`, ambient dimension `d`,
/// polynomial tail degree `k`. Produces `d(L+1)` effective variables: the `L`
/// digits of each input variable followed by the `d` tails.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorizationMap {
    pub base: usize,
    pub resolution: usize,
    pub input_dim: usize,
    pub tail_degree: usize,
}

impl TensorizationMap {
    pub fn new(base: usize, resolution: usize, input_dim: usize, tail_degree: usize) -> Result<Self> {
        if base < 2 {
            return Err(Error::Domain("base must be >= 2".into()));
        }
        if input_dim == 0 {
            return Err(Error::InvalidDimension);
        }
        Ok(TensorizationMap {
            base,
            resolution,
            input_dim,
            tail_degree,
        })
    }

    pub fn var_count(&self) -> usize {
        self.input_dim * (self.resolution + 1)
    }

    /// Dimension of effective variable `var` (0-based): `b` for digit
    /// variables, `k+1` for tail variables.
    pub fn var_dim(&self, var: usize) -> usize {
        if var < self.input_dim * self.resolution {
            self.base
        } else {
            self.tail_degree + 1
        }
    }
}

/// Feature map over the network's leaf variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FeatureMap {
    /// Effective variable `nu` is input variable `nu` with its own basis.
    Plain { bases: Vec<VariableBasis> },
    /// Effective variables are digits and tails of the tensorized inputs.
    Tensorized(TensorizationMap),
}

impl FeatureMap {
    pub fn plain(bases: Vec<VariableBasis>) -> Self {
        FeatureMap::Plain { bases }
    }

    pub fn tensorized(base: usize, resolution: usize, input_dim: usize, tail_degree: usize) -> Result<Self> {
        Ok(FeatureMap::Tensorized(TensorizationMap::new(
            base,
            resolution,
            input_dim,
            tail_degree,
        )?))
    }

    /// Number of effective (leaf) variables.
    pub fn var_count(&self) -> usize {
        match self {
            FeatureMap::Plain { bases } => bases.len(),
            FeatureMap::Tensorized(t) => t.var_count(),
        }
    }

    /// Ambient input dimension of the points fed to [`Self::eval_var`].
    pub fn input_dim(&self) -> usize {
        match self {
            FeatureMap::Plain { bases } => bases.len(),
            FeatureMap::Tensorized(t) => t.input_dim,
        }
    }

    /// Feature dimension `N_var` of effective variable `var` (0-based).
    pub fn var_dim(&self, var: usize) -> usize {
        match self {
            FeatureMap::Plain { bases } => bases[var].size,
            FeatureMap::Tensorized(t) => t.var_dim(var),
        }
    }

    /// Evaluate the feature vector of effective variable `var` at the ambient
    /// input point `x`.
    pub fn eval_var(&self, var: usize, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "point has dimension {}, feature map expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        match self {
            FeatureMap::Plain { bases } => bases[var].eval(x[var]),
            FeatureMap::Tensorized(t) => {
                let (digits_and_tails, _) = tensorized_feature_parts(x, t)?;
                Ok(digits_and_tails[var].clone())
            }
        }
    }

    /// Per-variable feature matrices (one `n x N_var` matrix per effective
    /// variable) for a batch of points. One digit expansion per point, shared
    /// by every variable.
    pub fn eval_all_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<nalgebra::DMatrix<f64>>> {
        let n = xs.len();
        let vars = self.var_count();
        let mut out: Vec<nalgebra::DMatrix<f64>> = (0..vars)
            .map(|v| nalgebra::DMatrix::zeros(n, self.var_dim(v)))
            .collect();
        for (i, x) in xs.iter().enumerate() {
            let feats = self.eval_all(x)?;
            for (v, f) in feats.iter().enumerate() {
                for (j, &val) in f.iter().enumerate() {
                    out[v][(i, j)] = val;
                }
            }
        }
        Ok(out)
    }

    /// Evaluate feature vectors for all effective variables at once.
    /// Cheaper than per-variable calls for tensorized maps.
    pub fn eval_all(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "point has dimension {}, feature map expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        match self {
            FeatureMap::Plain { bases } => bases
                .iter()
                .enumerate()
                .map(|(nu, b)| b.eval(x[nu]))
                .collect(),
            FeatureMap::Tensorized(t) => Ok(tensorized_feature_parts(x, t)?.0),
        }
    }
}

/// Factorized tensorized feature: one-hot vectors `e(i_k^nu)` for every digit
/// variable followed by the `d` tail vectors, in the canonical ordering
/// (digits of variable 1, ..., digits of variable d, then tails). The full
/// rank-one tensor is never materialized.
pub fn tensorized_feature(x: &[f64], map: &TensorizationMap) -> Result<Vec<Vec<f64>>> {
    Ok(tensorized_feature_parts(x, map)?.0)
}

fn tensorized_feature_parts(
    x: &[f64],
    map: &TensorizationMap,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if x.len() != map.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "point has dimension {}, tensorization expects {}",
            x.len(),
            map.input_dim
        )));
    }
    let mut out = Vec::with_capacity(map.var_count());
    let mut tails = Vec::with_capacity(map.input_dim);
    // Digit blocks first, variable by variable.
    for &xv in x {
        let (digits, xbar) = tensorize_point(xv, map.base, map.resolution)?;
        for d in digits {
            let mut e = vec![0.0; map.base];
            e[usize::from(d)] = 1.0;
            out.push(e);
        }
        tails.push(xbar);
    }
    // Tail blocks: shifted normalized Legendre of degree <= k on [0,1).
    let tail_basis = VariableBasis::legendre01(map.tail_degree + 1);
    for &xbar in &tails {
        out.push(tail_basis.eval(xbar)?);
    }
    // Reorder: digits are grouped per variable already (variable-major), and
    // tails follow; this matches the canonical effective-variable layout.
    Ok((out, tails))
}
