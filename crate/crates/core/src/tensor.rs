//! Dense and sparse small-order tensors and the kernels the network layer
//! needs: mode contractions, matricization, truncated SVD, operator p-norms.
//!
//! Layout is row-major everywhere; one canonical layout prevents silent
//! transposition bugs.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Dense real tensor in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

/// Set of admissible multi-indices for a sparse node tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparsityPattern {
    shape: Vec<usize>,
    /// Flat (row-major) positions of admissible entries, sorted, unique.
    flat: Vec<usize>,
}

/// Which operator norm to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PNorm {
    Two,
    Inf,
}

/// Result of a rank/tolerance truncated SVD.
#[derive(Clone, Debug)]
pub struct TruncatedSvd {
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub v: DMatrix<f64>,
    pub achieved_rank: usize,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if shape.iter().any(|&s| s == 0) {
            return Err(Error::ShapeMismatch("zero-length mode".into()));
        }
        if values.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                len,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor entry".into()));
        }
        Ok(DenseTensor { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        DenseTensor {
            shape,
            values: vec![0.0; len],
        }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let len: usize = shape.iter().product();
        let mut values = Vec::with_capacity(len);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..len {
            values.push(f(&idx));
            for m in (0..shape.len()).rev() {
                idx[m] += 1;
                if idx[m] < shape[m] {
                    break;
                }
                idx[m] = 0;
            }
        }
        DenseTensor { shape, values }
    }

    /// Entries i.i.d. uniform on [-1, 1].
    pub fn random_uniform(shape: Vec<usize>, rng: &mut impl Rng) -> Self {
        let len = shape.iter().product();
        let values = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        DenseTensor { shape, values }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1usize; self.shape.len()];
        for m in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[m] = strides[m + 1] * self.shape[m + 1];
        }
        strides
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        debug_assert_eq!(idx.len(), self.shape.len());
        let strides = self.strides();
        let flat: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        self.values[flat]
    }

    pub fn frobenius(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, c: f64) -> Self {
        DenseTensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    /// Contract `mode` with the vector `v`, producing a tensor of order one
    /// less: `out[..] = sum_k self[.., k, ..] * v[k]`.
    pub fn contract_mode(&self, mode: usize, v: &[f64]) -> Result<DenseTensor> {
        if mode >= self.order() {
            return Err(Error::ModeOutOfRange {
                mode,
                order: self.order(),
            });
        }
        if v.len() != self.shape[mode] {
            return Err(Error::ShapeMismatch(format!(
                "mode {} has size {}, vector has length {}",
                mode,
                self.shape[mode],
                v.len()
            )));
        }
        let mut out_shape = self.shape.clone();
        out_shape.remove(mode);
        if out_shape.is_empty() {
            let s: f64 = self.values.iter().zip(v).map(|(a, b)| a * b).sum();
            return Ok(DenseTensor {
                shape: vec![1],
                values: vec![s],
            });
        }
        // outer (modes before), k (the contracted mode), inner (modes after)
        let inner: usize = self.shape[mode + 1..].iter().product();
        let k = self.shape[mode];
        let outer: usize = self.shape[..mode].iter().product();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            let base = o * k * inner;
            let out_base = o * inner;
            for (j, &vj) in v.iter().enumerate() {
                if vj == 0.0 {
                    continue;
                }
                let row = base + j * inner;
                for i in 0..inner {
                    out[out_base + i] += self.values[row + i] * vj;
                }
            }
        }
        Ok(DenseTensor {
            shape: out_shape,
            values: out,
        })
    }

    /// Reshape into a matrix with rows indexed by `row_modes` (ascending,
    /// row-major among them) and columns by the complement. Degenerate
    /// `row_modes` (empty or all modes) yield a one-row / one-column matrix.
    pub fn matricize(&self, row_modes: &[usize]) -> Result<DMatrix<f64>> {
        let order = self.order();
        for &m in row_modes {
            if m >= order {
                return Err(Error::ModeOutOfRange { mode: m, order });
            }
        }
        let mut rows: Vec<usize> = row_modes.to_vec();
        rows.sort_unstable();
        rows.dedup();
        let cols: Vec<usize> = (0..order).filter(|m| !rows.contains(m)).collect();
        let nrows: usize = rows.iter().map(|&m| self.shape[m]).product();
        let ncols: usize = cols.iter().map(|&m| self.shape[m]).product();
        let mut out = DMatrix::zeros(nrows.max(1), ncols.max(1));
        let mut idx = vec![0usize; order];
        for flat in 0..self.values.len() {
            let mut r = 0usize;
            for &m in &rows {
                r = r * self.shape[m] + idx[m];
            }
            let mut c = 0usize;
            for &m in &cols {
                c = c * self.shape[m] + idx[m];
            }
            out[(r, c)] = self.values[flat];
            for m in (0..order).rev() {
                idx[m] += 1;
                if idx[m] < self.shape[m] {
                    break;
                }
                idx[m] = 0;
            }
        }
        Ok(out)
    }

    /// Inverse of [`Self::matricize`] for a known target shape.
    pub fn from_matricization(
        shape: Vec<usize>,
        row_modes: &[usize],
        m: &DMatrix<f64>,
    ) -> Result<DenseTensor> {
        let order = shape.len();
        let mut rows: Vec<usize> = row_modes.to_vec();
        rows.sort_unstable();
        rows.dedup();
        let cols: Vec<usize> = (0..order).filter(|k| !rows.contains(k)).collect();
        let nrows: usize = rows.iter().map(|&k| shape[k]).product();
        let ncols: usize = cols.iter().map(|&k| shape[k]).product();
        if m.nrows() != nrows.max(1) || m.ncols() != ncols.max(1) {
            return Err(Error::ShapeMismatch(format!(
                "matrix {}x{} cannot fill shape {:?} with rows {:?}",
                m.nrows(),
                m.ncols(),
                shape,
                rows
            )));
        }
        let mut t = DenseTensor::zeros(shape.clone());
        let mut idx = vec![0usize; order];
        for flat in 0..t.values.len() {
            let mut r = 0usize;
            for &k in &rows {
                r = r * shape[k] + idx[k];
            }
            let mut c = 0usize;
            for &k in &cols {
                c = c * shape[k] + idx[k];
            }
            t.values[flat] = m[(r, c)];
            for k in (0..order).rev() {
                idx[k] += 1;
                if idx[k] < shape[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        Ok(t)
    }

    /// Operator p-norm of the tensor seen as a multilinear map into the
    /// `out_mode` axis.
    ///
    /// Order 2 is exact (spectral norm for p = 2, max absolute row sum for
    /// p = inf). For order >= 3 and p = 2 the value is a certified lower
    /// bound obtained by higher-order power iteration with random restarts;
    /// order >= 3 with p = inf is unsupported.
    pub fn operator_p_norm(&self, out_mode: usize, p: PNorm) -> Result<f64> {
        if self.order() < 2 {
            return Err(Error::Unsupported(
                "operator norm needs a tensor of order >= 2".into(),
            ));
        }
        if out_mode >= self.order() {
            return Err(Error::ModeOutOfRange {
                mode: out_mode,
                order: self.order(),
            });
        }
        match (self.order(), p) {
            (2, PNorm::Two) => {
                let m = self.matricize(&[out_mode])?;
                let svd = m.svd(false, false);
                Ok(svd.singular_values.iter().cloned().fold(0.0, f64::max))
            }
            (2, PNorm::Inf) => {
                let m = self.matricize(&[out_mode])?;
                let mut best = 0.0f64;
                for r in 0..m.nrows() {
                    let s: f64 = (0..m.ncols()).map(|c| m[(r, c)].abs()).sum();
                    best = best.max(s);
                }
                Ok(best)
            }
            (_, PNorm::Two) => Ok(self.multilinear_two_norm_lower_bound()),
            (_, PNorm::Inf) => Err(Error::Unsupported(
                "p = inf operator norm is only available for order-2 tensors".into(),
            )),
        }
    }

    /// Guaranteed upper bound on the multilinear operator 2-norm: the
    /// Frobenius norm dominates `sup <a, z_1 x ... x z_k>` over unit vectors.
    pub fn norm_upper_bound(&self, p: PNorm) -> Result<f64> {
        match (self.order(), p) {
            (2, PNorm::Inf) => self.operator_p_norm(0, PNorm::Inf),
            (_, PNorm::Two) => Ok(self.frobenius()),
            _ => Err(Error::Unsupported(
                "no upper bound available for this (order, p) combination".into(),
            )),
        }
    }

    /// Even cruder bound, `sqrt(prod mode sizes) * frobenius`; valid for every
    /// supported p since each entry is bounded by the Frobenius norm.
    pub fn crude_norm_upper_bound(&self) -> f64 {
        (self.len() as f64).sqrt() * self.frobenius()
    }

    /// Higher-order power iteration for the multilinear spectral norm:
    /// 20 random restarts, up to 200 iterations each, convergence tolerance
    /// 1e-10; the maximum over restarts is returned (a lower bound).
    fn multilinear_two_norm_lower_bound(&self) -> f64 {
        const RESTARTS: usize = 20;
        const ITERS: usize = 200;
        const TOL: f64 = 1e-10;

        let order = self.order();
        let mut rng = ChaCha8Rng::seed_from_u64(hopm_seed(self));
        let mut best = 0.0f64;
        for _ in 0..RESTARTS {
            let mut vecs: Vec<Vec<f64>> = self
                .shape
                .iter()
                .map(|&s| {
                    let mut v: Vec<f64> = (0..s).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    normalize(&mut v);
                    v
                })
                .collect();
            let mut prev = 0.0f64;
            for _ in 0..ITERS {
                let mut sigma = 0.0f64;
                for m in 0..order {
                    let mut t = self.clone();
                    // Contract every mode except m, highest index first so
                    // lower mode indices stay valid.
                    for other in (0..order).rev() {
                        if other == m {
                            continue;
                        }
                        t = t.contract_mode(other, &vecs[other]).unwrap();
                    }
                    let mut v = t.values;
                    sigma = normalize(&mut v);
                    if sigma > 0.0 {
                        vecs[m] = v;
                    }
                }
                if (sigma - prev).abs() <= TOL * sigma.max(1.0) {
                    prev = sigma;
                    break;
                }
                prev = sigma;
            }
            best = best.max(prev);
        }
        best
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    n
}

/// Deterministic per-tensor seed for the power-iteration restarts, so the
/// reported norm is a pure function of the tensor.
fn hopm_seed(t: &DenseTensor) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &s in &t.shape {
        h ^= s as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    for v in &t.values {
        h ^= v.to_bits();
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl SparsityPattern {
    pub fn new(shape: Vec<usize>, indices: &[Vec<usize>]) -> Result<Self> {
        let mut strides = vec![1usize; shape.len()];
        for m in (0..shape.len().saturating_sub(1)).rev() {
            strides[m] = strides[m + 1] * shape[m + 1];
        }
        let mut flat = Vec::with_capacity(indices.len());
        for idx in indices {
            if idx.len() != shape.len() {
                return Err(Error::ShapeMismatch(format!(
                    "index {:?} does not match shape {:?}",
                    idx, shape
                )));
            }
            for (i, s) in idx.iter().zip(&shape) {
                if i >= s {
                    return Err(Error::ShapeMismatch(format!(
                        "index {:?} out of bounds for shape {:?}",
                        idx, shape
                    )));
                }
            }
            flat.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
        }
        flat.sort_unstable();
        let before = flat.len();
        flat.dedup();
        if flat.len() != before {
            return Err(Error::ShapeMismatch("duplicate sparse index".into()));
        }
        Ok(SparsityPattern { shape, flat })
    }

    /// Pattern admitting every entry of `shape`.
    pub fn full(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        SparsityPattern {
            shape,
            flat: (0..len).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn cardinality(&self) -> usize {
        self.flat.len()
    }

    pub fn flat_indices(&self) -> &[usize] {
        &self.flat
    }

    pub fn contains_flat(&self, flat: usize) -> bool {
        self.flat.binary_search(&flat).is_ok()
    }

    /// Zero every entry of `t` outside the pattern.
    pub fn project(&self, t: &mut DenseTensor) {
        debug_assert_eq!(t.shape(), self.shape());
        let mut keep = 0usize;
        for (flat, v) in t.values.iter_mut().enumerate() {
            if keep < self.flat.len() && self.flat[keep] == flat {
                keep += 1;
            } else {
                *v = 0.0;
            }
        }
    }
}

/// Best rank-`rank` approximation in Frobenius norm, additionally truncating
/// singular values below `rel_tol * sigma_max`. Singular values are returned
/// non-increasing.
pub fn truncated_svd(m: &DMatrix<f64>, rank: usize, rel_tol: f64) -> Result<TruncatedSvd> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix entry".into()));
    }
    if !(0.0..1.0).contains(&rel_tol) {
        return Err(Error::Domain(format!("rel_tol {rel_tol} outside [0,1)")));
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd with u");
    let vt = svd.v_t.expect("svd with v_t");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap()
    });
    let sigma_max = svd.singular_values[order[0]];
    let mut achieved = 0usize;
    for &i in &order {
        let s = svd.singular_values[i];
        if achieved >= rank || s <= 0.0 || s <= rel_tol * sigma_max {
            break;
        }
        achieved += 1;
    }
    let mut u_out = DMatrix::zeros(m.nrows(), achieved);
    let mut v_out = DMatrix::zeros(m.ncols(), achieved);
    let mut s_out = Vec::with_capacity(achieved);
    for (k, &i) in order.iter().take(achieved).enumerate() {
        s_out.push(svd.singular_values[i]);
        u_out.set_column(k, &u.column(i));
        v_out.set_column(k, &vt.row(i).transpose());
    }
    Ok(TruncatedSvd {
        u: u_out,
        singular_values: s_out,
        v: v_out,
        achieved_rank: achieved,
    })
}
