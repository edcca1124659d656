//! Penalized model selection.
//!
//! The criterion is `crit(m) = emp_risk(m) + lambda * pen_shape(m)`. For a
//! fixed penalty shape, the map `lambda -> argmin crit` is piecewise constant
//! and its exact breakpoints come from the lower convex hull of the points
//! `(pen_shape(m), emp_risk(m))`: a model is selected on some lambda interval
//! iff it is a hull vertex, and the breakpoints are the negated hull slopes.
//! The penalty weight is calibrated by the complexity-jump variant of the
//! slope heuristics: pick the breakpoint with the largest drop of the
//! selected complexity and select at twice that weight.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// The selection-relevant summary of a fitted candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordSummary {
    pub id: u64,
    pub complexity: usize,
    pub emp_risk: f64,
    /// Tree size `|T_m|`, needed by the theoretical penalties.
    pub tree_size: usize,
}

impl RecordSummary {
    pub fn new(id: u64, complexity: usize, emp_risk: f64, tree_size: usize) -> Self {
        RecordSummary {
            id,
            complexity,
            emp_risk,
            tree_size,
        }
    }
}

/// Penalty shapes. The experiments use `C_m / n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PenaltyShape {
    ComplexityOverN,
    SqrtComplexityOverN,
    /// Slow-rate shape from the bounded-contrast selection theorem.
    TheoreticalSlow {
        contrast_bound: f64,
        lipschitz: f64,
        radius: f64,
        weight: f64,
        log_model_count: f64,
    },
    /// Fast-rate shape from the least-squares oracle inequality.
    TheoreticalFast {
        radius: f64,
        weight: f64,
        eps: f64,
        log_model_count: f64,
        k1: f64,
    },
}

/// Penalty specification: shape plus the sample size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub shape: PenaltyShape,
    pub n: usize,
}

impl PenaltySpec {
    pub fn complexity_over_n(n: usize) -> Self {
        PenaltySpec {
            shape: PenaltyShape::ComplexityOverN,
            n,
        }
    }

    /// Evaluate `pen_shape(m)` for a record.
    pub fn pen_shape(&self, record: &RecordSummary) -> f64 {
        let n = self.n as f64;
        let c = record.complexity as f64;
        match &self.shape {
            PenaltyShape::ComplexityOverN => c / n,
            PenaltyShape::SqrtComplexityOverN => (c / n).sqrt(),
            PenaltyShape::TheoreticalSlow {
                contrast_bound,
                lipschitz,
                radius,
                weight,
                log_model_count,
            } => theoretical_penalty_slow(
                record.complexity,
                record.tree_size,
                self.n,
                *contrast_bound,
                *lipschitz,
                *radius,
                *weight,
                *log_model_count,
            ),
            PenaltyShape::TheoreticalFast {
                radius,
                weight,
                eps,
                log_model_count,
                k1,
            } => theoretical_penalty_fast(
                record.complexity,
                record.tree_size,
                self.n,
                *radius,
                *weight,
                *eps,
                *log_model_count,
                *k1,
            )
            .expect("penalty parameters validated at construction"),
        }
    }
}

/// Penalized criterion `emp_risk + lambda * pen_shape`.
pub fn crit(record: &RecordSummary, pen: &PenaltySpec, lambda: f64) -> f64 {
    record.emp_risk + lambda * pen.pen_shape(record)
}

/// Piecewise-constant selection map `lambda -> chosen record id`.
///
/// `chosen[0]` holds on `[0, breakpoints[0])`, `chosen[i]` on
/// `[breakpoints[i-1], breakpoints[i])`, and the last entry beyond the last
/// breakpoint. Chosen complexities are non-increasing in lambda, and the last
/// segment is the minimum-risk model among those of minimal complexity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionPath {
    pub breakpoints: Vec<f64>,
    pub chosen: Vec<u64>,
    /// Complexity of each chosen record, aligned with `chosen`.
    pub complexities: Vec<usize>,
}

impl SelectionPath {
    /// Record selected at a given penalty weight.
    pub fn at(&self, lambda: f64) -> u64 {
        let idx = self.breakpoints.partition_point(|&b| b <= lambda);
        self.chosen[idx]
    }
}

/// Exact selection path over lambda.
///
/// Tie rules, applied at every lambda: smaller complexity wins, then smaller
/// empirical risk, then smaller id. In particular at a breakpoint itself the
/// smaller-complexity side is selected, and models whose point is not a
/// strict vertex of the lower hull are never selected.
pub fn selection_path(records: &[RecordSummary], pen: &PenaltySpec) -> Result<SelectionPath> {
    if records.is_empty() {
        return Err(Error::EmptyCollection);
    }
    // Group by penalty value, keeping the best record per value.
    let mut points: Vec<(f64, f64, u64, usize)> = Vec::new(); // (pen, risk, id, complexity)
    for r in records {
        if !r.emp_risk.is_finite() {
            return Err(Error::NonFinite(format!("risk of record {}", r.id)));
        }
        points.push((pen.pen_shape(r), r.emp_risk, r.id, r.complexity));
    }
    points.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then(a.1.partial_cmp(&b.1).unwrap())
            .then(a.2.cmp(&b.2))
    });
    points.dedup_by(|next, kept| next.0 == kept.0);

    // Monotone-chain lower hull over (pen, risk); collinear middles dropped.
    let mut hull: Vec<(f64, f64, u64, usize)> = Vec::new();
    for p in points {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    // Keep the strictly descending prefix: the minimum-risk vertex and
    // everything to its left; for equal risks the smaller penalty wins.
    let mut cut = hull.len();
    for i in 1..hull.len() {
        if hull[i].1 >= hull[i - 1].1 {
            cut = i;
            break;
        }
    }
    hull.truncate(cut);

    // Walk from the minimum-risk vertex (lambda -> 0) to the minimum-penalty
    // vertex (lambda -> infinity).
    let mut chosen = Vec::with_capacity(hull.len());
    let mut complexities = Vec::with_capacity(hull.len());
    let mut breakpoints = Vec::with_capacity(hull.len().saturating_sub(1));
    for (k, v) in hull.iter().enumerate().rev() {
        chosen.push(v.2);
        complexities.push(v.3);
        if k > 0 {
            let left = hull[k - 1];
            breakpoints.push((left.1 - v.1) / (v.0 - left.0));
        }
    }
    Ok(SelectionPath {
        breakpoints,
        chosen,
        complexities,
    })
}

/// The penalty weight at the largest jump of `lambda -> C(selected)`. Ties
/// resolve to the largest lambda. A constant path has no jump.
pub fn complexity_jump(path: &SelectionPath) -> Result<f64> {
    if path.breakpoints.is_empty() {
        return Err(Error::NoJump);
    }
    let mut best = (0usize, 0usize); // (jump, index)
    for (i, _) in path.breakpoints.iter().enumerate() {
        let jump = path.complexities[i] - path.complexities[i + 1];
        if jump >= best.0 {
            best = (jump, i);
        }
    }
    Ok(path.breakpoints[best.1])
}

/// Outcome of the slope-heuristics selection.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SelectionResult {
    pub chosen: u64,
    /// Calibrated weight, absent when the path had no jump.
    pub lambda_cj: Option<f64>,
    /// Set when the no-jump fallback (plain empirical-risk argmin) was used.
    pub fallback: bool,
}

/// Slope heuristics with complexity-jump calibration: select
/// `argmin crit(m)` at `lambda = 2 * lambda_cj`. A single-segment path falls
/// back to the lambda = 0 selection with a warning flag.
pub fn slope_select(records: &[RecordSummary], pen: &PenaltySpec) -> Result<SelectionResult> {
    let path = selection_path(records, pen)?;
    match complexity_jump(&path) {
        Ok(lambda_cj) => Ok(SelectionResult {
            chosen: path.at(2.0 * lambda_cj),
            lambda_cj: Some(lambda_cj),
            fallback: false,
        }),
        Err(Error::NoJump) => Ok(SelectionResult {
            chosen: path.at(0.0),
            lambda_cj: None,
            fallback: true,
        }),
        Err(e) => Err(e),
    }
}

/// Slow-rate penalty
/// `lambda_m sqrt(C/n) + 2B sqrt((w C + logN) / (2n))` with
/// `lambda_m = 4B sqrt(2 log(6 L B^{-1} R |T| sqrt(n)))`.
#[allow(clippy::too_many_arguments)]
pub fn theoretical_penalty_slow(
    complexity: usize,
    tree_size: usize,
    n: usize,
    contrast_bound: f64,
    lipschitz: f64,
    radius: f64,
    weight: f64,
    log_model_count: f64,
) -> f64 {
    if contrast_bound == 0.0 {
        return 0.0;
    }
    let nf = n as f64;
    let c = complexity as f64;
    let lambda_m = 4.0
        * contrast_bound
        * (2.0
            * (6.0 * lipschitz / contrast_bound * radius * tree_size as f64 * nf.sqrt()).ln())
        .sqrt();
    lambda_m * (c / nf).sqrt()
        + 2.0 * contrast_bound * ((weight * c + log_model_count) / (2.0 * nf)).sqrt()
}

/// `log^+(u) = max(log u, 0)`.
fn log_plus(u: f64) -> f64 {
    u.ln().max(0.0)
}

/// Fast-rate penalty
/// `K1 R^2 [ b C / (n eps^2) log^+(n eps^2 / (b C)) + (w C + logN) / (n eps) ]`
/// with `b = 1 + log^+(3 |T| / (4 e))`.
#[allow(clippy::too_many_arguments)]
pub fn theoretical_penalty_fast(
    complexity: usize,
    tree_size: usize,
    n: usize,
    radius: f64,
    weight: f64,
    eps: f64,
    log_model_count: f64,
    k1: f64,
) -> Result<f64> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::Domain(format!("eps {eps} outside (0, 1]")));
    }
    let nf = n as f64;
    let c = complexity as f64;
    let b_m = 1.0 + log_plus(3.0 * tree_size as f64 / (4.0 * std::f64::consts::E));
    let first = b_m * c / (nf * eps * eps) * log_plus(nf * eps * eps / (b_m * c));
    let second = (weight * c + log_model_count) / (nf * eps);
    Ok(k1 * radius * radius * (first + second))
}

/// Which model collection a count bound refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CollectionMode {
    Full,
    Sparse,
}

/// Upper bound on `log N_c`, the log-number of models of complexity `c`.
/// Full collections: `2a (c + d log c)`; sparse collections:
/// `5 a c log c + 2 c log g(c)` with `g` bounding the feature dimensions.
pub fn log_model_count_bound(
    c: usize,
    arity: usize,
    d: usize,
    mode: CollectionMode,
    g_of_c: Option<f64>,
) -> Result<f64> {
    if c < 2 {
        return Err(Error::Domain("the bound needs c >= 2".into()));
    }
    let cf = c as f64;
    let a = arity as f64;
    match mode {
        CollectionMode::Full => Ok(2.0 * a * (cf + d as f64 * cf.ln())),
        CollectionMode::Sparse => {
            let g = g_of_c
                .ok_or_else(|| Error::Config("sparse bound needs g(c)".into()))?;
            if g <= 0.0 {
                return Err(Error::Domain("g(c) must be positive".into()));
            }
            Ok(5.0 * a * cf * cf.ln() + 2.0 * cf * g.ln())
        }
    }
}
