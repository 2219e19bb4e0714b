use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use dyneval::dgnn::DgnnModel;
use dyneval::evaluator::{estimate, Evaluator};
use dyneval::harness::{self, ExperimentConfig, ReportFormat, StageOneArtifact, Timings};
use dyneval::temporal_graph::{
    default_tte_offsets, make_tte_variants, parse_edge_stream, split_train_test, GraphSlice,
    StreamMeta, UnlabeledSlice,
};

#[derive(Parser)]
#[command(
    name = "dyneval",
    version,
    about = "Label-free NDCG estimation for temporal graph models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (JSON). Defaults are used when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(clap::Args)]
struct Output {
    /// Output file; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long, short, default_value = "markdown")]
    format: ReportFormat,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured synthetic stream as CSV.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Train a model on the training split and save a checkpoint.
    TrainDgnn {
        #[command(flatten)]
        common: Common,
        /// Model name from the config; the first model when omitted.
        #[arg(long)]
        model_name: Option<String>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Build, label and featurize simulated graphs for a trained model.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        model: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Fit the regressor on a simulate artifact.
    TrainEvaluator {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Estimate NDCG on the configured test variants, or on a CSV test stream.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        model: PathBuf,
        #[arg(long, short)]
        evaluator: PathBuf,
        /// CSV edge stream to estimate on instead of the configured variants.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// MAE as a function of the number of simulated graphs.
    AblateK {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = harness::DEFAULT_K_COUNTS)]
        counts: Vec<usize>,
        #[command(flatten)]
        output: Output,
    },
    /// MAE for each discrepancy function.
    AblateDiscrepancy {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        output: Output,
    },
    /// MAE for each regressor backbone.
    AblateBackbone {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        output: Output,
    },
    /// Run the full pipeline and emit the evaluation report.
    Report {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        output: Output,
        /// Also print per-stage wall-clock to stderr.
        #[arg(long)]
        timings: bool,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)
            .map_err(|e| e.in_stage("config"))
            .with_context(|| format!("reading config {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.master_seed = s;
    }
    Ok(cfg)
}

fn write_out(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)
            .map_err(|e| dyneval::Error::from(e).in_stage("write"))
            .with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read(path: &Path, stage: &'static str) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| dyneval::Error::from(e).in_stage(stage))
        .with_context(|| format!("reading {}", path.display()))
}

fn split_train(cfg: &ExperimentConfig) -> Result<(GraphSlice, GraphSlice)> {
    let stream = cfg.dataset.load().map_err(|e| e.in_stage("load"))?;
    Ok(split_train_test(&stream, cfg.split_fraction).map_err(|e| e.in_stage("split"))?)
}

#[derive(serde::Serialize)]
struct EstimateRow {
    variant: String,
    t_start: f64,
    t_end: f64,
    estimate: f64,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common, out } => {
            let cfg = load_config(&common)?;
            let stream = cfg.dataset.load().map_err(|e| e.in_stage("generate"))?;
            write_out(out.as_deref(), &stream.to_csv())
        }
        Command::TrainDgnn {
            common,
            model_name,
            out,
        } => {
            let cfg = load_config(&common)?;
            let (model, _) = harness::train_named_model(&cfg, model_name.as_deref())?;
            eprintln!(
                "trained: final loss {:.5}",
                model.loss_history.last().copied().unwrap_or(f64::NAN)
            );
            write_out(
                Some(&out),
                &model.save_json().map_err(|e| e.in_stage("train-dgnn"))?,
            )
        }
        Command::Simulate { common, model, out } => {
            let cfg = load_config(&common)?;
            let model = DgnnModel::load_json(&read(&model, "simulate")?)
                .map_err(|e| e.in_stage("simulate"))?;
            let (train, _) = split_train(&cfg)?;
            let seeds = harness::seed_record(&cfg);
            let one = harness::stage_one(
                &cfg,
                &model,
                &train,
                &seeds,
                cfg.discrepancy,
                &mut Timings::default(),
            )?;
            let artifact =
                StageOneArtifact::new(&one, cfg.discrepancy).map_err(|e| e.in_stage("simulate"))?;
            eprintln!("simulated {} graphs", artifact.records.len());
            write_out(Some(&out), &serde_json::to_string(&artifact)?)
        }
        Command::TrainEvaluator { common, input, out } => {
            let cfg = load_config(&common)?;
            let artifact = StageOneArtifact::from_json(&read(&input, "train-evaluator")?)
                .map_err(|e| e.in_stage("train-evaluator"))?;
            let ev = harness::train_from_artifact(&cfg, &artifact, &harness::seed_record(&cfg))?;
            eprintln!("evaluator training RMSE {:.5}", ev.training_rmse());
            write_out(
                Some(&out),
                &ev.save_json().map_err(|e| e.in_stage("train-evaluator"))?,
            )
        }
        Command::Estimate {
            common,
            model,
            evaluator,
            test,
            out,
        } => {
            let cfg = load_config(&common)?;
            let model = DgnnModel::load_json(&read(&model, "estimate")?)
                .map_err(|e| e.in_stage("estimate"))?;
            let ev = Evaluator::load_json(&read(&evaluator, "estimate")?)
                .map_err(|e| e.in_stage("estimate"))?;
            let slices: Vec<(String, GraphSlice)> = match test {
                Some(path) => {
                    let meta = StreamMeta {
                        name: path.display().to_string(),
                        allow_self_loops: false,
                    };
                    let stream = parse_edge_stream(&read(&path, "estimate")?, meta)
                        .map_err(|e| e.in_stage("load"))?;
                    vec![("test".into(), GraphSlice::full(&Arc::new(stream)))]
                }
                None => {
                    let (_, test) = split_train(&cfg)?;
                    let offsets = cfg
                        .tte_offsets
                        .clone()
                        .unwrap_or_else(|| default_tte_offsets(test.length()));
                    let set = make_tte_variants(&test, &offsets).map_err(|e| e.in_stage("tte"))?;
                    set.variants
                        .into_iter()
                        .enumerate()
                        .map(|(j, v)| (format!("g{j}"), v))
                        .collect()
                }
            };
            let mut rows = Vec::new();
            for (variant, slice) in slices {
                let (t_start, t_end) = (slice.t_start(), slice.t_end());
                let value = estimate(&ev, &model, &UnlabeledSlice::new(slice))
                    .map_err(|e| e.in_stage("estimate"))?;
                rows.push(EstimateRow {
                    variant,
                    t_start,
                    t_end,
                    estimate: value,
                });
            }
            write_out(
                out.as_deref(),
                &(serde_json::to_string_pretty(&rows)? + "\n"),
            )
        }
        Command::AblateK {
            common,
            counts,
            output,
        } => {
            let cfg = load_config(&common)?;
            let table = harness::run_k_ablation(&cfg, &counts)?;
            write_out(
                output.out.as_deref(),
                &harness::emit_ablation(&table, output.format)?,
            )
        }
        Command::AblateDiscrepancy { common, output } => {
            let cfg = load_config(&common)?;
            let table = harness::run_discrepancy_ablation(&cfg)?;
            write_out(
                output.out.as_deref(),
                &harness::emit_ablation(&table, output.format)?,
            )
        }
        Command::AblateBackbone { common, output } => {
            let cfg = load_config(&common)?;
            let table = harness::run_backbone_ablation(&cfg)?;
            write_out(
                output.out.as_deref(),
                &harness::emit_ablation(&table, output.format)?,
            )
        }
        Command::Report {
            common,
            output,
            timings,
        } => {
            let cfg = load_config(&common)?;
            let mut t = Timings::default();
            let report = harness::run_pipeline_timed(&cfg, &mut t)?;
            if timings {
                for (stage, secs) in &t.stages {
                    eprintln!("{stage:>18}: {secs:.3}s");
                }
            }
            write_out(
                output.out.as_deref(),
                &harness::emit_report(&report, output.format)?,
            )
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
