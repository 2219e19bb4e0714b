//! Experiment orchestration.
//!
//! [`prepare`] loads and splits the data, trains every configured model and
//! computes ground-truth NDCG for each test variant. Ground truth lives only
//! inside [`Prepared`]; estimators receive [`UnlabeledSlice`]s and query
//! lists, never truth vectors. [`run_pipeline`] adds both estimation stages,
//! the baselines and report assembly.

pub mod config;
pub mod report;
pub mod stats;

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

pub use config::{DatasetSource, ExperimentConfig, ModelSpec, ReferenceConfig};
pub use report::{
    emit_ablation, emit_report, AblationRow, AblationTable, EvaluationReport, MethodEstimate,
    MethodMae, ModelReport, RankRow, RankTable, ReportFormat, SeedRecord, VariantRow,
};

use crate::baselines::{
    static_from_simulated, static_from_test, threshold_estimate, ThresholdConfig,
};
use crate::dgnn::{embed, ndcg_against, train_dgnn, DgnnModel};
use crate::discrepancy::{
    build_discrepancy_set, select_reference_nodes, DiscrepancyKind, DiscrepancyRecord,
    ReferenceSet, ReferenceStrategy,
};
use crate::error::{Error, Result, StageExt};
use crate::evaluator::{estimate, Backbone, Evaluator};
use crate::metrics::{ground_truth_affinity, AffinityQuery, AffinityTruth};
use crate::seeds::{derive_seed, stage_seed, Stage};
use crate::simulation::{build_simulated_set, label_all, SimulatedGraph};
use crate::temporal_graph::{
    default_tte_offsets, make_tte_variants, split_train_test, EdgeStream, GraphSlice,
    TteVariantSet, UnlabeledSlice,
};

pub const METHOD_MAIN: &str = "dyneval";
pub const METHOD_GNN: &str = "gnn_static";

pub fn threshold_method(tau: f64) -> String {
    format!("thres({tau})")
}

/// Wall-clock per stage. Kept out of [`EvaluationReport`] so reports stay
/// byte-identical across runs.
#[derive(Debug, Clone, Default)]
pub struct Timings {
    pub stages: Vec<(String, f64)>,
}

impl Timings {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.stages
            .push((stage.to_string(), start.elapsed().as_secs_f64()));
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub name: String,
    pub seed: u64,
    pub model: DgnnModel,
    /// GT NDCG per test variant.
    pub gt: Vec<f64>,
}

/// Everything shared by the estimation runs of one experiment.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub stream: Arc<EdgeStream>,
    pub train: GraphSlice,
    pub test: GraphSlice,
    pub variants: TteVariantSet,
    pub unlabeled: Vec<UnlabeledSlice>,
    /// Query layout per variant; derived from event endpoints only.
    pub queries: Vec<Vec<AffinityQuery>>,
    pub models: Vec<TrainedModel>,
    pub seeds: SeedRecord,
}

pub fn seed_record(cfg: &ExperimentConfig) -> SeedRecord {
    let m = cfg.master_seed;
    let model_root = stage_seed(m, Stage::Model);
    SeedRecord {
        master: m,
        data: match &cfg.dataset {
            DatasetSource::Synthetic(d) => Some(d.rng_seed),
            DatasetSource::File { .. } => None,
        },
        models: (0..cfg.models.len())
            .map(|i| derive_seed(model_root, i as u64))
            .collect(),
        simulation: stage_seed(m, Stage::Simulation),
        reference: stage_seed(m, Stage::Reference),
        evaluator: stage_seed(m, Stage::Evaluator),
        baseline: stage_seed(m, Stage::Baseline),
    }
}

/// Callback that may rewrite test truth vectors before scoring.
pub type LabelHook<'a> = &'a dyn Fn(&mut [AffinityTruth]);

/// Load, split, build variants and train models. `label_hook`, if given, may
/// rewrite the test truth vectors before ground truth is scored; it exists so
/// tests can show that estimates do not change when labels are poisoned.
pub fn prepare(
    cfg: &ExperimentConfig,
    label_hook: Option<LabelHook<'_>>,
    timings: &mut Timings,
) -> Result<Prepared> {
    cfg.validate().stage("config")?;
    let seeds = seed_record(cfg);
    let stream = timings.time("load", || cfg.dataset.load()).stage("load")?;
    let (train, test) = split_train_test(&stream, cfg.split_fraction).stage("split")?;
    let offsets = match &cfg.tte_offsets {
        Some(o) => o.clone(),
        None => default_tte_offsets(test.length()),
    };
    let variants = make_tte_variants(&test, &offsets).stage("tte")?;
    let queries = variants
        .variants
        .iter()
        .map(|v| cfg.queries.enumerate(v))
        .collect::<Result<Vec<_>>>()
        .stage("queries")?;
    let train_queries = cfg.queries.enumerate(&train).stage("train-dgnn")?;

    let trained = timings
        .time("train-dgnn", || {
            cfg.models
                .par_iter()
                .zip(&seeds.models)
                .map(|(spec, &seed)| {
                    let mc = crate::dgnn::DgnnConfig {
                        rng_seed: seed,
                        ..spec.config.clone()
                    };
                    train_dgnn(&train, &train_queries, &mc)
                })
                .collect::<Result<Vec<_>>>()
        })
        .stage("train-dgnn")?;

    let truths = timings
        .time("ground-truth", || {
            variants
                .variants
                .iter()
                .zip(&queries)
                .map(|(v, qs)| {
                    let mut t = qs
                        .iter()
                        .map(|q| ground_truth_affinity(v, q))
                        .collect::<Result<Vec<_>>>()?;
                    if let Some(hook) = label_hook {
                        hook(&mut t);
                    }
                    Ok(t)
                })
                .collect::<Result<Vec<_>>>()
        })
        .stage("ground-truth")?;

    let mut models = Vec::with_capacity(trained.len());
    for ((spec, model), &seed) in cfg.models.iter().zip(trained).zip(&seeds.models) {
        let gt = variants
            .variants
            .iter()
            .zip(&queries)
            .zip(&truths)
            .map(|((v, qs), ts)| {
                if qs.is_empty() {
                    return Err(Error::NoQueries(format!(
                        "test variant [{}, {}) has no queries",
                        v.t_start(),
                        v.t_end()
                    )));
                }
                Ok(ndcg_against(&model, v, qs, ts, cfg.k)?.value)
            })
            .collect::<Result<Vec<_>>>()
            .stage("ground-truth")?;
        models.push(TrainedModel {
            name: spec.name.clone(),
            seed,
            model,
            gt,
        });
    }
    let unlabeled = variants
        .variants
        .iter()
        .cloned()
        .map(UnlabeledSlice::new)
        .collect();
    Ok(Prepared {
        stream,
        train,
        test,
        variants,
        unlabeled,
        queries,
        models,
        seeds,
    })
}

/// Stage 1 output: simulated graphs, their labels, anchors and features.
#[derive(Debug, Clone)]
pub struct StageOne {
    pub set: Vec<SimulatedGraph>,
    pub labels: Vec<f64>,
    pub reference: ReferenceSet,
    pub records: Vec<DiscrepancyRecord>,
}

pub fn build_reference(
    cfg: &ExperimentConfig,
    model: &DgnnModel,
    train: &GraphSlice,
    seed: u64,
) -> Result<ReferenceSet> {
    let z_tr = embed(model, train)?;
    let strategy = match cfg.reference.strategy {
        ReferenceStrategy::Random(_) => ReferenceStrategy::Random(seed),
        s => s,
    };
    let n_ref = cfg.reference.n_ref;
    select_reference_nodes(&z_tr, n_ref, strategy, &train.degrees())
}

pub fn stage_one(
    cfg: &ExperimentConfig,
    model: &DgnnModel,
    train: &GraphSlice,
    seeds: &SeedRecord,
    kind: DiscrepancyKind,
    timings: &mut Timings,
) -> Result<StageOne> {
    let set = timings
        .time("simulate", || {
            build_simulated_set(train, &cfg.simulation, seeds.simulation)
        })
        .stage("simulate")?;
    let labels = timings
        .time("label", || label_all(model, &set, &cfg.queries, cfg.k))
        .stage("label")?;
    let reference = build_reference(cfg, model, train, seeds.reference).stage("reference")?;
    let graphs: Vec<&GraphSlice> = set.iter().map(|g| &g.graph).collect();
    let records = timings
        .time("discrepancy", || {
            build_discrepancy_set(model, &graphs, &labels, &reference, kind)
        })
        .stage("discrepancy")?;
    Ok(StageOne {
        set,
        labels,
        reference,
        records,
    })
}

pub fn stage_two(
    cfg: &ExperimentConfig,
    one: &StageOne,
    seeds: &SeedRecord,
    kind: DiscrepancyKind,
    backbone: Backbone,
    timings: &mut Timings,
) -> Result<Evaluator> {
    let ecfg = crate::evaluator::EvaluatorConfig {
        backbone,
        rng_seed: seeds.evaluator,
        ..cfg.evaluator.clone()
    };
    timings
        .time("train-evaluator", || {
            Evaluator::fit(&one.records, &ecfg, kind, one.reference.clone())
        })
        .stage("train-evaluator")
}

/// The main estimator's output for every variant.
pub fn estimate_variants(
    evaluator: &Evaluator,
    model: &DgnnModel,
    variants: &[UnlabeledSlice],
) -> Result<Vec<f64>> {
    variants
        .par_iter()
        .map(|v| estimate(evaluator, model, v))
        .collect::<Result<Vec<_>>>()
        .stage("estimate")
}

struct ModelEstimates {
    methods: Vec<String>,
    /// `[variant][method]`
    values: Vec<Vec<f64>>,
    label_mean: f64,
    label_std: f64,
    evaluator_rmse: f64,
}

fn estimate_model(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    model: &DgnnModel,
    timings: &mut Timings,
) -> Result<ModelEstimates> {
    let seeds = &prepared.seeds;
    let one = stage_one(cfg, model, &prepared.train, seeds, cfg.discrepancy, timings)?;
    let evaluator = stage_two(
        cfg,
        &one,
        seeds,
        cfg.discrepancy,
        cfg.evaluator.backbone,
        timings,
    )?;
    let main = timings.time("estimate", || {
        estimate_variants(&evaluator, model, &prepared.unlabeled)
    })?;

    let mut methods = vec![METHOD_MAIN.to_string()];
    let mut columns = vec![main];
    if cfg.baselines {
        for &tau in &cfg.taus {
            methods.push(threshold_method(tau));
            let col = prepared
                .unlabeled
                .iter()
                .zip(&prepared.queries)
                .map(|(v, qs)| threshold_estimate(model, v, qs, ThresholdConfig { tau }))
                .collect::<Result<Vec<_>>>()
                .stage("baseline-threshold")?;
            columns.push(col);
        }
        methods.push(METHOD_GNN.to_string());
        let col = timings
            .time("baseline-gnn", || -> Result<Vec<f64>> {
                let train_set = one
                    .set
                    .par_iter()
                    .zip(&one.labels)
                    .map(|(g, &y)| static_from_simulated(model, &one.reference, g, y))
                    .collect::<Result<Vec<_>>>()?;
                let gcfg = crate::baselines::GcnConfig {
                    rng_seed: seeds.baseline,
                    ..cfg.gcn.clone()
                };
                let regressor = crate::baselines::train_gcn(&train_set, &gcfg)?;
                prepared
                    .unlabeled
                    .iter()
                    .map(|v| regressor.predict(&static_from_test(model, &one.reference, v)?))
                    .collect()
            })
            .stage("baseline-gnn")?;
        columns.push(col);
    }
    let n_var = prepared.unlabeled.len();
    let values = (0..n_var)
        .map(|j| columns.iter().map(|c| c[j]).collect())
        .collect();
    Ok(ModelEstimates {
        methods,
        values,
        label_mean: stats::mean(&one.labels),
        label_std: stats::std_dev(&one.labels),
        evaluator_rmse: evaluator.training_rmse(),
    })
}

fn model_report(prepared: &Prepared, tm: &TrainedModel, est: ModelEstimates) -> ModelReport {
    let variants: Vec<VariantRow> = prepared
        .variants
        .variants
        .iter()
        .enumerate()
        .map(|(j, v)| VariantRow {
            variant: format!("g{j}"),
            offset: prepared.variants.offsets[j],
            t_start: v.t_start(),
            t_end: v.t_end(),
            events: v.len(),
            queries: prepared.queries[j].len(),
            gt_ndcg: tm.gt[j],
            estimates: est
                .methods
                .iter()
                .zip(&est.values[j])
                .map(|(m, &e)| MethodEstimate {
                    method: m.clone(),
                    estimate: e,
                    ae: (e - tm.gt[j]).abs(),
                })
                .collect(),
        })
        .collect();
    let mae = est
        .methods
        .iter()
        .enumerate()
        .map(|(i, m)| MethodMae {
            method: m.clone(),
            mae: stats::mean(
                &variants
                    .iter()
                    .map(|v| v.estimates[i].ae)
                    .collect::<Vec<_>>(),
            ),
        })
        .collect();
    ModelReport {
        name: tm.name.clone(),
        model_seed: tm.seed,
        final_train_loss: tm.model.loss_history.last().copied().unwrap_or(f64::NAN),
        simulated_label_mean: est.label_mean,
        simulated_label_std: est.label_std,
        evaluator_train_rmse: est.evaluator_rmse,
        variants,
        mae,
    }
}

pub fn rank_table(models: &[ModelReport], method: &str) -> RankTable {
    let gt: Vec<f64> = models
        .iter()
        .map(|m| stats::mean(&m.variants.iter().map(|v| v.gt_ndcg).collect::<Vec<_>>()))
        .collect();
    let est: Vec<f64> = models
        .iter()
        .map(|m| {
            let xs: Vec<f64> = m
                .variants
                .iter()
                .filter_map(|v| v.estimates.iter().find(|e| e.method == method))
                .map(|e| e.estimate)
                .collect();
            stats::mean(&xs)
        })
        .collect();
    let gt_rank = stats::descending_ranks(&gt);
    let est_rank = stats::descending_ranks(&est);
    RankTable {
        method: method.to_string(),
        consistent: gt_rank == est_rank,
        rows: models
            .iter()
            .enumerate()
            .map(|(i, m)| RankRow {
                model: m.name.clone(),
                gt_mean: gt[i],
                gt_rank: gt_rank[i],
                estimated_mean: est[i],
                estimated_rank: est_rank[i],
            })
            .collect(),
    }
}

/// Estimation and reporting on an already prepared experiment.
pub fn run_prepared(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    timings: &mut Timings,
) -> Result<EvaluationReport> {
    let mut models = Vec::with_capacity(prepared.models.len());
    for tm in &prepared.models {
        let est = estimate_model(cfg, prepared, &tm.model, timings)?;
        models.push(model_report(prepared, tm, est));
    }
    let rank = rank_table(&models, METHOD_MAIN);
    Ok(EvaluationReport {
        version: report::REPORT_VERSION,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        seeds: prepared.seeds.clone(),
        train_events: prepared.train.len(),
        test_events: prepared.test.len(),
        split_time: prepared.test.t_start(),
        models,
        rank,
    })
}

pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<EvaluationReport> {
    run_pipeline_timed(cfg, &mut Timings::default())
}

pub fn run_pipeline_timed(
    cfg: &ExperimentConfig,
    timings: &mut Timings,
) -> Result<EvaluationReport> {
    let prepared = prepare(cfg, None, timings)?;
    run_prepared(cfg, &prepared, timings)
}

/// MAE of the main estimator on the primary model for one configuration,
/// reusing trained models and ground truth from `prepared`.
pub fn main_mae(cfg: &ExperimentConfig, prepared: &Prepared, timings: &mut Timings) -> Result<f64> {
    let tm = &prepared.models[0];
    let one = stage_one(
        cfg,
        &tm.model,
        &prepared.train,
        &prepared.seeds,
        cfg.discrepancy,
        timings,
    )?;
    let ev = stage_two(
        cfg,
        &one,
        &prepared.seeds,
        cfg.discrepancy,
        cfg.evaluator.backbone,
        timings,
    )?;
    let est = estimate_variants(&ev, &tm.model, &prepared.unlabeled)?;
    Ok(stats::mean(
        &est.iter()
            .zip(&tm.gt)
            .map(|(e, g)| (e - g).abs())
            .collect::<Vec<_>>(),
    ))
}

fn ablate(
    parameter: &str,
    base: &ExperimentConfig,
    settings: Vec<(String, ExperimentConfig)>,
) -> Result<AblationTable> {
    if settings.is_empty() {
        return Err(Error::invalid("ablation needs at least one setting"));
    }
    let mut timings = Timings::default();
    let prepared = prepare(base, None, &mut timings)?;
    let mut rows = Vec::with_capacity(settings.len());
    for (setting, cfg) in settings {
        cfg.validate().stage("config")?;
        rows.push(AblationRow {
            mae: main_mae(&cfg, &prepared, &mut timings)?,
            setting,
        });
    }
    Ok(AblationTable {
        parameter: parameter.to_string(),
        method: METHOD_MAIN.to_string(),
        rows,
    })
}

pub const DEFAULT_K_COUNTS: [usize; 5] = [50, 100, 150, 200, 250];

pub fn run_k_ablation(cfg: &ExperimentConfig, counts: &[usize]) -> Result<AblationTable> {
    let settings = counts
        .iter()
        .map(|&c| {
            let mut v = cfg.clone();
            v.simulation.count = c;
            (c.to_string(), v)
        })
        .collect();
    ablate("count", cfg, settings)
}

pub fn run_discrepancy_ablation(cfg: &ExperimentConfig) -> Result<AblationTable> {
    let settings = DiscrepancyKind::ALL
        .iter()
        .map(|&k| {
            let mut v = cfg.clone();
            v.discrepancy = k;
            (k.name().to_string(), v)
        })
        .collect();
    ablate("discrepancy", cfg, settings)
}

pub fn run_backbone_ablation(cfg: &ExperimentConfig) -> Result<AblationTable> {
    let settings = [Backbone::SelfAttention, Backbone::Mlp]
        .iter()
        .map(|&b| {
            let mut v = cfg.clone();
            v.evaluator.backbone = b;
            (b.name().to_string(), v)
        })
        .collect();
    ablate("backbone", cfg, settings)
}

pub const STAGE_ONE_VERSION: u32 = 1;

/// On-disk form of [`StageOne`], written by `simulate` and read by
/// `train-evaluator`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StageOneArtifact {
    pub version: u32,
    pub kind: DiscrepancyKind,
    pub reference: ReferenceSet,
    pub manifest: crate::simulation::SimulationManifest,
    pub records: Vec<DiscrepancyRecord>,
}

impl StageOneArtifact {
    pub fn new(one: &StageOne, kind: DiscrepancyKind) -> Result<Self> {
        Ok(Self {
            version: STAGE_ONE_VERSION,
            kind,
            reference: one.reference.clone(),
            manifest: crate::simulation::SimulationManifest::new(&one.set, &one.labels)?,
            records: one.records.clone(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let a: Self = serde_json::from_str(text)?;
        if a.version != STAGE_ONE_VERSION {
            return Err(Error::Version {
                found: a.version,
                expected: STAGE_ONE_VERSION,
            });
        }
        Ok(a)
    }
}

/// Fit the regressor from a stored stage-1 artifact.
pub fn train_from_artifact(
    cfg: &ExperimentConfig,
    artifact: &StageOneArtifact,
    seeds: &SeedRecord,
) -> Result<Evaluator> {
    let ecfg = crate::evaluator::EvaluatorConfig {
        rng_seed: seeds.evaluator,
        ..cfg.evaluator.clone()
    };
    Evaluator::fit(
        &artifact.records,
        &ecfg,
        artifact.kind,
        artifact.reference.clone(),
    )
    .stage("train-evaluator")
}

/// Train one configured model on the training split, as `prepare` would.
pub fn train_named_model(
    cfg: &ExperimentConfig,
    name: Option<&str>,
) -> Result<(DgnnModel, GraphSlice)> {
    cfg.validate().stage("config")?;
    let seeds = seed_record(cfg);
    let idx = match name {
        None => 0,
        Some(n) => cfg
            .models
            .iter()
            .position(|m| m.name == n)
            .ok_or_else(|| Error::invalid(format!("no model named `{n}` in config")))
            .stage("config")?,
    };
    let stream = cfg.dataset.load().stage("load")?;
    let (train, _) = split_train_test(&stream, cfg.split_fraction).stage("split")?;
    let queries = cfg.queries.enumerate(&train).stage("train-dgnn")?;
    let mc = crate::dgnn::DgnnConfig {
        rng_seed: seeds.models[idx],
        ..cfg.models[idx].config.clone()
    };
    let model = train_dgnn(&train, &queries, &mc).stage("train-dgnn")?;
    Ok((model, train))
}
