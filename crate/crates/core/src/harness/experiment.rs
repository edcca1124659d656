//! The experiment protocol: repeated trials of candidate generation, oracle
//! computation and slope-heuristics selection, with CSV/JSON/SVG artifacts.

use super::targets::{sample_dataset, Problem};
use crate::error::{Error, Result};
use crate::learn::{
    generate_candidates, mix_seed, CandidateConfig, FitOptions, ModelRecord, TreeAdaptOptions,
};
use crate::select::{
    complexity_jump, crit, selection_path, slope_select, PenaltySpec, RecordSummary,
    SelectionPath,
};
use crate::tree::DimensionTree;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Top-level configuration, usually parsed from a TOML file.
#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub candidates: CandidateSection,
    #[serde(default)]
    pub fit: FitSection,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct ExperimentSection {
    pub problem: String,
    pub n: usize,
    pub gamma: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct CandidateSection {
    /// `tensorized`, `fixed-tree`, or `tree-adaptive`.
    pub mode: String,
    #[serde(default = "default_base")]
    pub base: usize,
    #[serde(default = "default_l_min")]
    pub l_min: usize,
    #[serde(default = "default_l_max")]
    pub l_max: usize,
    #[serde(default)]
    pub tail_degree: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Tensorized mode: independently seeded rank paths per resolution.
    #[serde(default = "default_paths_per_l")]
    pub paths_per_l: usize,
    /// Fixed-tree mode: `linear`, `balanced`, `corner_peak_paper`, or
    /// nested-list text such as `[[1,2],3]`.
    #[serde(default)]
    pub tree: Option<String>,
    #[serde(default = "default_features")]
    pub features_per_variable: usize,
    #[serde(default = "default_moves")]
    pub moves: usize,
    #[serde(default = "default_adapt_budget")]
    pub adapt_budget: usize,
    /// Sample size of the dedicated tree-search dataset.
    #[serde(default = "default_adapt_n")]
    pub adapt_n: usize,
    /// Split the training sample between tree search and fitting.
    #[serde(default)]
    pub split: bool,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct FitSection {
    #[serde(default = "default_max_sweeps")]
    pub max_sweeps: usize,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
}

fn default_trials() -> usize {
    1
}
fn default_test_size() -> usize {
    100_000
}
fn default_base() -> usize {
    2
}
fn default_l_min() -> usize {
    1
}
fn default_l_max() -> usize {
    12
}
fn default_steps() -> usize {
    25
}
fn default_paths_per_l() -> usize {
    1
}
fn default_features() -> usize {
    10
}
fn default_moves() -> usize {
    20
}
fn default_adapt_budget() -> usize {
    5
}
fn default_adapt_n() -> usize {
    100
}
fn default_max_sweeps() -> usize {
    15
}
fn default_rel_tol() -> f64 {
    1e-9
}
fn default_ridge() -> f64 {
    1e-10
}
fn default_restarts() -> usize {
    3
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection {
            max_sweeps: default_max_sweeps(),
            rel_tol: default_rel_tol(),
            ridge: default_ridge(),
            restarts: default_restarts(),
        }
    }
}

impl FitSection {
    fn options(&self, seed: u64) -> FitOptions {
        FitOptions {
            max_sweeps: self.max_sweeps,
            rel_tol: self.rel_tol,
            ridge: self.ridge,
            seed,
            restarts: self.restarts,
        }
    }
}

/// The dimension tree of the corner-peak experiments.
pub fn corner_peak_paper_tree() -> DimensionTree {
    DimensionTree::from_nested("[[[1,2],[[7,8],[9,10]]],[[3,4],[5,6]]]").expect("static tree")
}

impl ExperimentConfig {
    pub fn problem(&self) -> Result<Problem> {
        self.experiment.problem.parse()
    }

    pub fn validate(&self) -> Result<()> {
        let problem = self.problem()?;
        if self.experiment.n == 0 {
            return Err(Error::Config("n must be >= 1".into()));
        }
        if self.experiment.gamma < 0.0 {
            return Err(Error::Config("gamma must be >= 0".into()));
        }
        if self.experiment.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        match self.candidates.mode.as_str() {
            "tensorized" => {
                if problem.input_dim() != 1 {
                    return Err(Error::Config(
                        "tensorized candidates are set up for univariate problems".into(),
                    ));
                }
                if self.candidates.l_min > self.candidates.l_max {
                    return Err(Error::Config("empty resolution range".into()));
                }
            }
            "fixed-tree" | "tree-adaptive" => {}
            other => {
                return Err(Error::Config(format!("unknown candidate mode {other:?}")));
            }
        }
        Ok(())
    }

    /// Resolve the fixed tree for `fixed-tree` mode.
    fn resolve_tree(&self, problem: Problem) -> Result<DimensionTree> {
        let d = problem.input_dim();
        match self.candidates.tree.as_deref() {
            None | Some("balanced") => DimensionTree::balanced(d, 2),
            Some("linear") => DimensionTree::linear(d),
            Some("corner_peak_paper") => {
                if d != 10 {
                    return Err(Error::Config(
                        "corner_peak_paper tree needs a 10-variable problem".into(),
                    ));
                }
                Ok(corner_peak_paper_tree())
            }
            Some(text) => {
                let tree = DimensionTree::from_nested(text)?;
                if tree.dim() != d {
                    return Err(Error::Config(format!(
                        "tree covers {} variables, problem has {d}",
                        tree.dim()
                    )));
                }
                Ok(tree)
            }
        }
    }

    /// Candidate configuration for a standalone exploration run, with seeds
    /// derived from the experiment seed the same way trial 0 derives them.
    pub fn single_candidate_config(&self) -> Result<CandidateConfig> {
        let problem = self.problem()?;
        self.candidate_config(
            problem,
            mix_seed(self.experiment.seed, mix_seed(3, 0)),
            mix_seed(self.experiment.seed, mix_seed(4, 0)),
        )
    }

    fn candidate_config(&self, problem: Problem, fit_seed: u64, adapt_seed: u64) -> Result<CandidateConfig> {
        let fit = self.fit.options(fit_seed);
        Ok(match self.candidates.mode.as_str() {
            "tensorized" => CandidateConfig::Tensorized {
                base: self.candidates.base,
                l_min: self.candidates.l_min,
                l_max: self.candidates.l_max,
                tail_degree: self.candidates.tail_degree,
                steps: self.candidates.steps,
                paths_per_l: self.candidates.paths_per_l,
                fit,
            },
            "fixed-tree" => CandidateConfig::FixedTree {
                tree: self.resolve_tree(problem)?,
                bases: problem.default_bases(self.candidates.features_per_variable),
                steps: self.candidates.steps,
                fit,
            },
            "tree-adaptive" => CandidateConfig::TreeAdaptive {
                bases: problem.default_bases(self.candidates.features_per_variable),
                steps: self.candidates.steps,
                adapt: TreeAdaptOptions {
                    moves: self.candidates.moves,
                    seed: adapt_seed,
                    budget_steps: self.candidates.adapt_budget,
                    fit: FitOptions {
                        max_sweeps: 8,
                        restarts: 2,
                        ..self.fit.options(adapt_seed)
                    },
                },
                split: self.candidates.split,
                fit,
            },
            other => return Err(Error::Config(format!("unknown candidate mode {other:?}"))),
        })
    }
}

/// One candidate's full row in the records table.
#[derive(Clone, Debug, Serialize)]
pub struct RecordRow {
    pub trial: usize,
    pub id: u64,
    pub tree_hash: String,
    pub ranks: String,
    pub resolution: Option<usize>,
    pub complexity: usize,
    pub emp_risk: f64,
    pub risk: f64,
    pub excess_risk: f64,
    pub seed: u64,
    pub wall_ms: u64,
    pub tree_size: usize,
}

/// Selection summary of one trial.
#[derive(Clone, Debug, Serialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub lambda_cj: Option<f64>,
    pub fallback: bool,
    pub selected_id: u64,
    pub selected_complexity: usize,
    pub selected_emp_risk: f64,
    pub selected_risk: f64,
    pub selected_excess: f64,
    pub oracle_id: u64,
    pub oracle_complexity: usize,
    pub oracle_risk: f64,
    pub oracle_excess: f64,
    pub runner_up_id: Option<u64>,
}

/// Aggregates over trials, mirroring the expectation columns of the result
/// tables.
#[derive(Clone, Debug, Serialize)]
pub struct Aggregates {
    pub trials: usize,
    pub failed_trials: usize,
    pub mean_selected_complexity: f64,
    pub mean_oracle_complexity: f64,
    pub mean_selected_risk: f64,
    pub mean_oracle_risk: f64,
    pub mean_selected_excess: f64,
    pub mean_oracle_excess: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub outcomes: Vec<TrialOutcome>,
    pub rows: Vec<RecordRow>,
    pub paths: Vec<(usize, SelectionPath)>,
    pub failures: Vec<(usize, String)>,
    pub aggregates: Aggregates,
}

/// Run every trial: sample, generate candidates, estimate risks, select by
/// slope heuristics, and write all artifacts into the output directory. A
/// failed trial is recorded, not fatal.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let problem = config.problem()?;
    let seed = config.experiment.seed;

    let mut rows = Vec::new();
    let mut outcomes = Vec::new();
    let mut paths = Vec::new();
    let mut failures = Vec::new();

    for trial in 0..config.experiment.trials {
        match run_trial(config, problem, seed, trial) {
            Ok((trial_rows, outcome, path)) => {
                rows.extend(trial_rows);
                outcomes.push(outcome);
                paths.push((trial, path));
            }
            Err(e) => failures.push((trial, e.to_string())),
        }
    }
    if outcomes.is_empty() {
        return Err(Error::Numerical("every trial failed".into()));
    }

    let aggregates = aggregate(&outcomes, failures.len());
    let report = ExperimentReport {
        outcomes,
        rows,
        paths,
        failures,
        aggregates,
    };

    let dir = &config.experiment.output_dir;
    std::fs::create_dir_all(dir)?;
    super::report::write_records_csv(&dir.join("records.csv"), &report.rows, true)?;
    super::report::write_timings_csv(&dir.join("timings.csv"), &report.rows)?;
    super::report::write_path_csv(&dir.join("path.csv"), &report.paths, &report.rows)?;
    super::report::write_selection_json(&dir.join("selection.json"), &report)?;
    if let Some((trial, path)) = report.paths.first() {
        let trial_rows: Vec<&RecordRow> =
            report.rows.iter().filter(|r| r.trial == *trial).collect();
        super::svg::render_path_svg(&dir.join("path.svg"), path, &trial_rows)?;
        let selected = report.outcomes[0].selected_id;
        super::svg::render_cloud_svg(&dir.join("cloud.svg"), &trial_rows, selected)?;
    }
    Ok(report)
}

type TrialData = (Vec<RecordRow>, TrialOutcome, SelectionPath);

fn run_trial(
    config: &ExperimentConfig,
    problem: Problem,
    seed: u64,
    trial: usize,
) -> Result<TrialData> {
    let train_seed = mix_seed(seed, mix_seed(1, trial as u64));
    let test_seed = mix_seed(seed, mix_seed(2, trial as u64));
    let fit_seed = mix_seed(seed, mix_seed(3, trial as u64));
    let adapt_seed = mix_seed(seed, mix_seed(4, trial as u64));

    let data = sample_dataset(problem, config.experiment.n, config.experiment.gamma, train_seed)?;
    let cand_cfg = config.candidate_config(problem, fit_seed, adapt_seed)?;
    let adapt_data = match &cand_cfg {
        CandidateConfig::TreeAdaptive { split: false, .. } => Some(sample_dataset(
            problem,
            self::default_adapt_n_for(config),
            config.experiment.gamma,
            mix_seed(seed, mix_seed(5, trial as u64)),
        )?),
        _ => None,
    };
    let records = generate_candidates(&cand_cfg, &data, adapt_data.as_ref())?;

    let test = sample_dataset(
        problem,
        config.experiment.test_size,
        config.experiment.gamma,
        test_seed,
    )?;
    let targets: crate::error::Result<Vec<f64>> =
        test.inputs.iter().map(|x| problem.eval(x)).collect();
    let targets = targets?;

    // Feature matrices over the test sample are shared by every record with
    // the same feature map (one map per resolution, or one map overall).
    let mut feat_cache: Vec<(crate::features::FeatureMap, Vec<nalgebra::DMatrix<f64>>)> =
        Vec::new();
    let mut rows = Vec::with_capacity(records.len());
    for record in &records {
        let fm = &record.spec.feature;
        if !feat_cache.iter().any(|(f, _)| f == fm) {
            feat_cache.push((fm.clone(), fm.eval_all_batch(&test.inputs)?));
        }
        let feats = &feat_cache.iter().find(|(f, _)| f == fm).unwrap().1;
        let preds = record.fitted.eval_batch_with_features(feats)?;
        let est = super::targets::risk_from_predictions(&preds, &test.outputs, &targets);
        rows.push(record_row(trial, record, est.risk, est.excess_risk));
    }

    let summaries: Vec<RecordSummary> = records
        .iter()
        .map(|r| {
            RecordSummary::new(
                r.id,
                r.complexity,
                r.empirical_risk,
                r.spec.tree.node_count(),
            )
        })
        .collect();
    let pen = PenaltySpec::complexity_over_n(config.experiment.n);
    let path = selection_path(&summaries, &pen)?;
    let selection = slope_select(&summaries, &pen)?;
    let lambda_cj = match complexity_jump(&path) {
        Ok(l) => Some(l),
        Err(Error::NoJump) => None,
        Err(e) => return Err(e),
    };

    // Oracle: the candidate with minimal excess risk on the test sample.
    let oracle_idx = (0..rows.len())
        .min_by(|&a, &b| {
            rows[a]
                .excess_risk
                .partial_cmp(&rows[b].excess_risk)
                .unwrap()
                .then(rows[a].id.cmp(&rows[b].id))
        })
        .expect("non-empty records");
    for r in &rows {
        debug_assert!(rows[oracle_idx].excess_risk <= r.excess_risk);
    }

    let sel_idx = rows
        .iter()
        .position(|r| r.id == selection.chosen)
        .expect("selected id exists");

    let runner_up_id = lambda_cj.map(|l| runner_up(&summaries, &pen, 2.0 * l, selection.chosen));

    let outcome = TrialOutcome {
        trial,
        lambda_cj,
        fallback: selection.fallback,
        selected_id: rows[sel_idx].id,
        selected_complexity: rows[sel_idx].complexity,
        selected_emp_risk: rows[sel_idx].emp_risk,
        selected_risk: rows[sel_idx].risk,
        selected_excess: rows[sel_idx].excess_risk,
        oracle_id: rows[oracle_idx].id,
        oracle_complexity: rows[oracle_idx].complexity,
        oracle_risk: rows[oracle_idx].risk,
        oracle_excess: rows[oracle_idx].excess_risk,
        runner_up_id: runner_up_id.flatten(),
    };
    Ok((rows, outcome, path))
}

fn default_adapt_n_for(config: &ExperimentConfig) -> usize {
    config.candidates.adapt_n.max(1)
}

fn record_row(trial: usize, record: &ModelRecord, risk: f64, excess: f64) -> RecordRow {
    RecordRow {
        trial,
        id: record.id,
        tree_hash: format!("{:016x}", record.spec.tree.hash()),
        ranks: record
            .fitted
            .ranks()
            .iter()
            .map(|r| r.to_string())
            .collect::<Vec<_>>()
            .join("|"),
        resolution: record.resolution,
        complexity: record.complexity,
        emp_risk: record.empirical_risk,
        risk,
        excess_risk: excess,
        seed: record.seed,
        wall_ms: record.wall_ms,
        tree_size: record.spec.tree.node_count(),
    }
}

/// Second-best candidate by criterion value at the calibrated weight.
fn runner_up(
    summaries: &[RecordSummary],
    pen: &PenaltySpec,
    lambda: f64,
    chosen: u64,
) -> Option<u64> {
    summaries
        .iter()
        .filter(|r| r.id != chosen)
        .min_by(|a, b| {
            crit(a, pen, lambda)
                .partial_cmp(&crit(b, pen, lambda))
                .unwrap()
                .then(a.complexity.cmp(&b.complexity))
                .then(a.id.cmp(&b.id))
        })
        .map(|r| r.id)
}

fn aggregate(outcomes: &[TrialOutcome], failed: usize) -> Aggregates {
    let n = outcomes.len() as f64;
    let mean = |f: &dyn Fn(&TrialOutcome) -> f64| outcomes.iter().map(f).sum::<f64>() / n;
    Aggregates {
        trials: outcomes.len(),
        failed_trials: failed,
        mean_selected_complexity: mean(&|o| o.selected_complexity as f64),
        mean_oracle_complexity: mean(&|o| o.oracle_complexity as f64),
        mean_selected_risk: mean(&|o| o.selected_risk),
        mean_oracle_risk: mean(&|o| o.oracle_risk),
        mean_selected_excess: mean(&|o| o.selected_excess),
        mean_oracle_excess: mean(&|o| o.oracle_excess),
    }
}
