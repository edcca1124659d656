//! Experiment reproduction: benchmark targets, the noise model, the
//! multi-trial protocol with oracle comparison, and CSV/SVG artifacts.

mod experiment;
pub mod report;
pub mod svg;
mod targets;

pub use experiment::{
    corner_peak_paper_tree, run_experiment, Aggregates, CandidateSection, ExperimentConfig,
    ExperimentReport, ExperimentSection, FitSection, RecordRow, TrialOutcome,
};
pub use targets::{risk_on_sample, sample_dataset, test_risk, Problem, RiskEstimate};
