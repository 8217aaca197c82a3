use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rvqa_core::harness::pipeline::{self, Workspace};
use rvqa_core::harness::selftest;
use rvqa_core::harness::RunConfig;
use rvqa_core::CoreError;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "rvqa", version, about = "Relation-fact visual question answering pipeline")]
struct Cli {
    /// JSON run configuration with sections data, detector, msan, train, eval.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Base for relative paths in the configuration.
    #[arg(long, global = true, default_value = ".")]
    root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Align QA pairs with template facts, split, and build vocabularies.
    BuildDataset,
    /// Statistics of the built dataset.
    DatasetStats,
    TrainDetector,
    /// Recall@k and per-head accuracy on the test split.
    EvalDetector,
    /// Train the answer model in the configured variant.
    TrainVqa,
    EvalVqa,
    /// Answer one question about one image.
    Predict {
        #[arg(long)]
        image: String,
        #[arg(long)]
        question: String,
        /// Candidate answer; repeat for a multiple-choice question.
        #[arg(long = "choice")]
        choices: Vec<String>,
    },
    /// Dump attention and fact evidence for evaluation examples.
    CaseStudy {
        /// Show five facts per example instead of ten.
        #[arg(long)]
        top5: bool,
    },
    /// Finite-difference gradient checks of every layer type.
    GradCheck,
    /// Run the built-in property checks.
    Selftest {
        /// Run only this check (1 to 9).
        #[arg(long)]
        criterion: Option<u8>,
    },
}

enum Failure {
    Core(CoreError),
    Validation(String),
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        Failure::Core(e)
    }
}

fn emit<T: Serialize>(value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Validation(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn workspace(cli: &Cli) -> Result<Workspace, Failure> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(&rvqa_core::harness::config::resolve(&cli.root, path))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(Workspace::new(&cli.root, &cli.out, config)?)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::BuildDataset => emit(&pipeline::build_dataset_stage(&workspace(cli)?)?),
        Command::DatasetStats => emit(&pipeline::dataset_stats_stage(&workspace(cli)?)?),
        Command::TrainDetector => emit(&pipeline::train_detector_stage(&workspace(cli)?)?),
        Command::EvalDetector => emit(&pipeline::eval_detector_stage(&workspace(cli)?)?),
        Command::TrainVqa => emit(&pipeline::train_vqa_stage(&workspace(cli)?)?),
        Command::EvalVqa => emit(&pipeline::eval_vqa_stage(&workspace(cli)?)?),
        Command::Predict {
            image,
            question,
            choices,
        } => {
            let choices = (!choices.is_empty()).then(|| choices.clone());
            emit(&pipeline::predict_stage(&workspace(cli)?, image, question, choices)?)
        }
        Command::CaseStudy { top5 } => {
            let ws = workspace(cli)?;
            let shown = if *top5 { 5 } else { ws.config.eval.case_study_facts };
            emit(&pipeline::case_study_stage(&ws, shown)?)
        }
        Command::GradCheck => {
            let cases = selftest::gradient_cases().map_err(Failure::Validation)?;
            for c in &cases {
                log::info!("{}: max relative error {:.3e}", c.name, c.report.max_rel_error);
            }
            let passed = cases.iter().all(|c| c.report.passed);
            emit(&serde_json::json!({ "passed": passed, "checks": cases }))?;
            if passed {
                Ok(())
            } else {
                Err(Failure::Validation("gradient check failed".into()))
            }
        }
        Command::Selftest { criterion } => {
            let results = match criterion {
                Some(id) => vec![selftest::run_criterion(*id)
                    .ok_or_else(|| Failure::Core(CoreError::Config(format!("no check numbered {id}"))))?],
                None => selftest::CRITERIA
                    .iter()
                    .map(|(id, _)| {
                        let r = selftest::run_criterion(*id).expect("listed check exists");
                        eprintln!("{}", r.line());
                        r
                    })
                    .collect(),
            };
            if criterion.is_some() {
                eprintln!("{}", results[0].line());
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            emit(&serde_json::json!({ "passed": failed == 0, "results": results }))?;
            if failed == 0 {
                Ok(())
            } else {
                Err(Failure::Validation(format!("{failed} check(s) failed")))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Core(e)) => {
            log::error!("{e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
        Err(Failure::Validation(msg)) => {
            log::error!("{msg}");
            ExitCode::from(1)
        }
    }
}
