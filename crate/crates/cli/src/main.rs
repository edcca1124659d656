//! `ttnet` — tree tensor network learning from the command line.
//!
//! Subcommands: `fit` one model spec, `explore` a candidate collection,
//! `select` over a records file, `experiment` for the full multi-trial
//! protocol, `report` to re-render plots. Exit codes: 0 success, 2 bad
//! configuration, 3 numerical failure.

use clap::{Parser, Subcommand};
use serde::Deserialize;
use std::path::PathBuf;
use std::process::ExitCode;
use ttnet_core::error::Error as CoreError;
use ttnet_core::harness::{self, report as artifacts, ExperimentConfig, Problem};
use ttnet_core::learn::{empirical_risk, fit_als, generate_candidates};
use ttnet_core::select::{
    complexity_jump, selection_path, slope_select, PenaltySpec, RecordSummary,
};
use ttnet_core::tree::DimensionTree;
use ttnet_core::{FeatureMap, ModelSpec};

#[derive(Parser)]
#[command(name = "ttnet", version, about = "Tree tensor network learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a single model spec on a sampled problem and save the network.
    Fit {
        #[arg(long)]
        config: PathBuf,
        /// Output path of the fitted network container.
        #[arg(long, default_value = "fitted.ttn")]
        out: PathBuf,
    },
    /// Generate a candidate collection and write a records CSV.
    Explore {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "records.csv")]
        out: PathBuf,
    },
    /// Run slope-heuristics selection over a records CSV.
    Select {
        #[arg(long)]
        records: PathBuf,
        /// Training sample size behind the records (penalty shape C/n).
        #[arg(long)]
        n: usize,
        /// Restrict to one trial's rows (default: first trial in the file).
        #[arg(long)]
        trial: Option<usize>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Run the full multi-trial experiment protocol.
    Experiment {
        #[arg(long)]
        config: PathBuf,
    },
    /// Re-render the SVG plots from an experiment output directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        trial: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = classify(&e);
            ExitCode::from(code)
        }
    }
}

/// Map error chains onto the documented exit codes.
fn classify(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(core) = cause.downcast_ref::<CoreError>() {
            return match core {
                CoreError::Config(_)
                | CoreError::Parse(_)
                | CoreError::InvalidDimension
                | CoreError::InvalidArity
                | CoreError::Domain(_)
                | CoreError::Io(_) => 2,
                _ => 3,
            };
        }
        if cause.downcast_ref::<toml::de::Error>().is_some()
            || cause.downcast_ref::<std::io::Error>().is_some()
        {
            return 2;
        }
    }
    3
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Experiment { config } => {
            let config = load_config(&config)?;
            let report = harness::run_experiment(&config)?;
            println!(
                "{}",
                serde_json::json!({
                    "trials": report.aggregates.trials,
                    "failed_trials": report.aggregates.failed_trials,
                    "mean_selected_complexity": report.aggregates.mean_selected_complexity,
                    "mean_selected_excess": report.aggregates.mean_selected_excess,
                    "mean_oracle_excess": report.aggregates.mean_oracle_excess,
                    "output_dir": config.experiment.output_dir,
                })
            );
            Ok(())
        }
        Command::Explore { config, out } => {
            let config = load_config(&config)?;
            config.validate()?;
            let problem: Problem = config.problem()?;
            let seed = config.experiment.seed;
            let data = harness::sample_dataset(
                problem,
                config.experiment.n,
                config.experiment.gamma,
                seed,
            )?;
            let cand = config.single_candidate_config()?;
            let records = generate_candidates(&cand, &data, None)?;
            let rows: Vec<harness::RecordRow> = records
                .iter()
                .map(|r| harness::RecordRow {
                    trial: 0,
                    id: r.id,
                    tree_hash: format!("{:016x}", r.spec.tree.hash()),
                    ranks: r
                        .fitted
                        .ranks()
                        .iter()
                        .map(|x| x.to_string())
                        .collect::<Vec<_>>()
                        .join("|"),
                    resolution: r.resolution,
                    complexity: r.complexity,
                    emp_risk: r.empirical_risk,
                    risk: f64::NAN,
                    excess_risk: f64::NAN,
                    seed: r.seed,
                    wall_ms: r.wall_ms,
                    tree_size: r.spec.tree.node_count(),
                })
                .collect();
            artifacts::write_records_csv(&out, &rows, false)?;
            println!("{} records -> {}", rows.len(), out.display());
            Ok(())
        }
        Command::Select {
            records,
            n,
            trial,
            out_dir,
        } => {
            let parsed = artifacts::read_records_csv(&records)?;
            anyhow::ensure!(!parsed.is_empty(), CoreError::EmptyCollection);
            let trial = trial.unwrap_or(parsed[0].trial);
            let summaries: Vec<RecordSummary> = parsed
                .iter()
                .filter(|r| r.trial == trial)
                .map(|r| r.summary.clone())
                .collect();
            anyhow::ensure!(!summaries.is_empty(), CoreError::EmptyCollection);
            let pen = PenaltySpec::complexity_over_n(n);
            let path = selection_path(&summaries, &pen)?;
            let sel = slope_select(&summaries, &pen)?;
            let lambda_cj = complexity_jump(&path).ok();
            std::fs::create_dir_all(&out_dir)?;
            let lookup = |id: u64| summaries.iter().find(|s| s.id == id).unwrap();
            let chosen = lookup(sel.chosen);
            let doc = serde_json::json!({
                "trial": trial,
                "lambda_cj": lambda_cj,
                "two_lambda_cj": lambda_cj.map(|l| 2.0 * l),
                "fallback": sel.fallback,
                "selected": {
                    "id": chosen.id,
                    "complexity": chosen.complexity,
                    "emp_risk": chosen.emp_risk,
                },
            });
            std::fs::write(
                out_dir.join("selection.json"),
                serde_json::to_string_pretty(&doc)?,
            )?;
            let mut out = String::from("trial,lambda_break,chosen_id,complexity\n");
            for (i, &id) in path.chosen.iter().enumerate() {
                let lambda = if i == 0 { 0.0 } else { path.breakpoints[i - 1] };
                out.push_str(&format!(
                    "{},{:e},{},{}\n",
                    trial, lambda, id, path.complexities[i]
                ));
            }
            std::fs::write(out_dir.join("path.csv"), out)?;
            println!("{}", serde_json::to_string(&doc)?);
            Ok(())
        }
        Command::Fit { config, out } => {
            let text = std::fs::read_to_string(&config)?;
            let config: FitConfig = toml::from_str(&text)?;
            let problem: Problem = config.experiment.problem.parse()?;
            let data = harness::sample_dataset(
                problem,
                config.experiment.n,
                config.experiment.gamma,
                config.experiment.seed,
            )?;
            let spec = config.model_spec(problem)?;
            let opts = ttnet_core::FitOptions {
                seed: config.experiment.seed,
                ..Default::default()
            };
            let fit = fit_als(&spec, &data, &opts)?;
            fit.net.save(&out)?;
            let risk = empirical_risk(&fit.net, &spec.feature, &data)?;
            println!(
                "{}",
                serde_json::json!({
                    "complexity": spec.complexity(),
                    "emp_risk": risk,
                    "sweeps": fit.diagnostics.sweeps,
                    "network": out,
                })
            );
            Ok(())
        }
        Command::Report { dir, trial } => {
            let parsed = artifacts::read_records_csv(&dir.join("records.csv"))?;
            anyhow::ensure!(!parsed.is_empty(), CoreError::EmptyCollection);
            let trial = trial.unwrap_or(parsed[0].trial);
            let rows: Vec<harness::RecordRow> = parsed
                .iter()
                .filter(|r| r.trial == trial)
                .map(|r| harness::RecordRow {
                    trial: r.trial,
                    id: r.summary.id,
                    tree_hash: String::new(),
                    ranks: String::new(),
                    resolution: r.resolution,
                    complexity: r.summary.complexity,
                    emp_risk: r.summary.emp_risk,
                    risk: if r.risk.is_nan() { r.summary.emp_risk } else { r.risk },
                    excess_risk: r.excess_risk,
                    seed: 0,
                    wall_ms: 0,
                    tree_size: r.summary.tree_size,
                })
                .collect();
            anyhow::ensure!(!rows.is_empty(), CoreError::EmptyCollection);
            let summaries: Vec<RecordSummary> = rows
                .iter()
                .map(|r| RecordSummary::new(r.id, r.complexity, r.emp_risk, r.tree_size))
                .collect();
            // n only scales lambda; the plots are invariant, so use the
            // record count as a stand-in when the config is not around.
            let pen = PenaltySpec::complexity_over_n(rows.len().max(1));
            let path = selection_path(&summaries, &pen)?;
            let sel = slope_select(&summaries, &pen)?;
            let refs: Vec<&harness::RecordRow> = rows.iter().collect();
            harness::svg::render_path_svg(&dir.join("path.svg"), &path, &refs)?;
            harness::svg::render_cloud_svg(&dir.join("cloud.svg"), &refs, sel.chosen)?;
            println!("rendered path.svg and cloud.svg in {}", dir.display());
            Ok(())
        }
    }
}

fn load_config(path: &PathBuf) -> anyhow::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let config: ExperimentConfig = toml::from_str(&text)?;
    config.validate()?;
    Ok(config)
}

/// Configuration of the `fit` subcommand: an experiment section for the data
/// source plus an explicit model.
#[derive(Deserialize)]
struct FitConfig {
    experiment: FitExperimentSection,
    model: ModelSection,
}

#[derive(Deserialize)]
struct FitExperimentSection {
    problem: String,
    n: usize,
    #[serde(default)]
    gamma: f64,
    #[serde(default)]
    seed: u64,
}

#[derive(Deserialize)]
struct ModelSection {
    /// `linear`, `balanced`, `corner_peak_paper`, or nested-list text.
    tree: String,
    /// Per-node ranks in canonical node order; defaults to all ones.
    #[serde(default)]
    ranks: Option<Vec<usize>>,
    /// Tensorization resolution; absent means plain polynomial features.
    #[serde(default)]
    resolution: Option<usize>,
    #[serde(default = "default_base")]
    base: usize,
    #[serde(default)]
    tail_degree: usize,
    #[serde(default = "default_features")]
    features_per_variable: usize,
}

fn default_base() -> usize {
    2
}
fn default_features() -> usize {
    10
}

impl FitConfig {
    fn model_spec(&self, problem: Problem) -> anyhow::Result<ModelSpec> {
        let d = problem.input_dim();
        let feature = match self.model.resolution {
            Some(l) => FeatureMap::tensorized(self.model.base, l, d, self.model.tail_degree)?,
            None => FeatureMap::plain(problem.default_bases(self.model.features_per_variable)),
        };
        let tree = match self.model.tree.as_str() {
            "linear" => DimensionTree::linear(feature.var_count())?,
            "balanced" => DimensionTree::balanced(feature.var_count(), 2)?,
            "corner_peak_paper" => harness::corner_peak_paper_tree(),
            text => DimensionTree::from_nested(text)?,
        };
        let mut spec = ModelSpec::rank_one(tree, feature)?;
        if let Some(ranks) = &self.model.ranks {
            spec.ranks = ranks.clone();
            spec.check()?;
        }
        Ok(spec)
    }
}
