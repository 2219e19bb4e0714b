use std::sync::OnceLock;

use dyneval::discrepancy::DiscrepancyKind;
use dyneval::harness::{
    self, emit_ablation, emit_report, EvaluationReport, ExperimentConfig, ReportFormat, Timings,
    DEFAULT_K_COUNTS, METHOD_MAIN,
};
use dyneval::metrics::AffinityTruth;
use dyneval::Error;

const SMALL: &str = r#"{
  "dataset": {"kind": "synthetic", "num_nodes": 16, "num_communities": 4, "horizon": 80.0},
  "models": [
    {"name": "wide", "config": {"embed_dim": 6, "epochs": 30}},
    {"name": "narrow", "config": {"embed_dim": 2, "epochs": 10}}
  ],
  "simulation": {"count": 12, "seed": {"seed_fraction": 0.2, "offset_jitter": 10.0}},
  "reference": {"n_ref": 8},
  "evaluator": {"hidden_dim": 8, "epochs": 5},
  "gcn": {"hidden_dim": 8, "epochs": 5},
  "master_seed": 3
}"#;

fn small() -> ExperimentConfig {
    ExperimentConfig::from_json(SMALL).unwrap()
}

fn report() -> &'static EvaluationReport {
    static R: OnceLock<EvaluationReport> = OnceLock::new();
    R.get_or_init(|| harness::run_pipeline(&small()).unwrap())
}

#[test]
fn report_has_eight_variants_per_model() {
    let r = report();
    assert_eq!(r.models.len(), 2);
    for m in &r.models {
        let names: Vec<&str> = m.variants.iter().map(|v| v.variant.as_str()).collect();
        assert_eq!(names, ["g0", "g1", "g2", "g3", "g4", "g5", "g6", "g7"]);
        assert_eq!(m.variants[0].offset, 0.0);
        assert!(m.variants.windows(2).all(|w| w[0].offset < w[1].offset));
    }
}

#[test]
fn mae_is_the_mean_absolute_error() {
    for m in &report().models {
        for entry in &m.mae {
            let aes: Vec<f64> = m
                .variants
                .iter()
                .map(|v| {
                    let e = v
                        .estimates
                        .iter()
                        .find(|e| e.method == entry.method)
                        .unwrap();
                    assert_eq!(e.ae, (e.estimate - v.gt_ndcg).abs());
                    e.ae
                })
                .collect();
            let mean = aes.iter().sum::<f64>() / aes.len() as f64;
            assert!((mean - entry.mae).abs() <= 1e-12);
        }
        assert_eq!(
            m.methods(),
            [
                "dyneval",
                "thres(0.5)",
                "thres(0.7)",
                "thres(0.9)",
                "gnn_static"
            ]
        );
    }
}

#[test]
fn rank_table_is_recomputable() {
    let r = report();
    assert_eq!(harness::rank_table(&r.models, METHOD_MAIN), r.rank);
    assert_eq!(r.rank.rows.len(), 2);
}

#[test]
fn estimates_are_probabilities() {
    for m in &report().models {
        for v in &m.variants {
            for e in &v.estimates {
                assert!(
                    (0.0..=1.0).contains(&e.estimate),
                    "{} {}",
                    e.method,
                    e.estimate
                );
            }
            let main = v
                .estimates
                .iter()
                .find(|e| e.method == METHOD_MAIN)
                .unwrap();
            assert!(main.estimate > 0.0 && main.estimate < 1.0);
        }
    }
}

#[test]
fn reruns_are_byte_identical() {
    let again = harness::run_pipeline(&small()).unwrap();
    for format in [
        ReportFormat::Json,
        ReportFormat::Csv,
        ReportFormat::Markdown,
    ] {
        assert_eq!(
            emit_report(report(), format).unwrap(),
            emit_report(&again, format).unwrap()
        );
    }
}

#[test]
fn json_round_trips() {
    let text = emit_report(report(), ReportFormat::Json).unwrap();
    let back = EvaluationReport::from_json(&text).unwrap();
    assert_eq!(&back, report());
    assert_eq!(emit_report(&back, ReportFormat::Json).unwrap(), text);
}

#[test]
fn csv_has_one_row_per_variant_and_method() {
    let r = report();
    let text = emit_report(r, ReportFormat::Csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "model,variant,method,gt_ndcg,estimate,ae"
    );
    let rows: usize = r
        .models
        .iter()
        .map(|m| m.variants.len() * m.methods().len())
        .sum();
    assert_eq!(lines.count(), rows);
}

#[test]
fn markdown_lays_out_methods_by_variants() {
    let text = emit_report(report(), ReportFormat::Markdown).unwrap();
    let header = "| Method | g0 | g1 | g2 | g3 | g4 | g5 | g6 | g7 | Avg. |";
    assert_eq!(text.matches(header).count(), 2);
    for method in [
        "| dyneval |",
        "| thres(0.5) |",
        "| gnn_static |",
        "| GT NDCG |",
    ] {
        assert_eq!(text.matches(method).count(), 2, "{method}");
    }
    assert!(text.contains("| Model | GT mean | GT rank | Estimated mean | Estimated rank |"));
}

#[test]
fn poisoned_truth_does_not_change_estimates() {
    let cfg = small();
    let mut t = Timings::default();
    let clean = harness::prepare(&cfg, None, &mut t).unwrap();
    let poison = |truths: &mut [AffinityTruth]| {
        for truth in truths {
            truth.values.iter_mut().for_each(|v| *v = f64::NAN);
            truth.all_zero = false;
        }
    };
    let dirty = harness::prepare(&cfg, Some(&poison), &mut t).unwrap();
    assert!(dirty.models[0].gt.iter().all(|g| g.is_nan()));
    let a = harness::run_prepared(&cfg, &clean, &mut t).unwrap();
    let b = harness::run_prepared(&cfg, &dirty, &mut t).unwrap();
    for (ma, mb) in a.models.iter().zip(&b.models) {
        for (va, vb) in ma.variants.iter().zip(&mb.variants) {
            for (ea, eb) in va.estimates.iter().zip(&vb.estimates) {
                assert_eq!(ea.method, eb.method);
                assert_eq!(ea.estimate.to_bits(), eb.estimate.to_bits());
            }
        }
    }
}

#[test]
fn ablation_tables_have_the_expected_rows() {
    let mut cfg = small();
    cfg.models.truncate(1);
    let disc = harness::run_discrepancy_ablation(&cfg).unwrap();
    let names: Vec<&str> = disc.rows.iter().map(|r| r.setting.as_str()).collect();
    assert_eq!(names, ["cosine", "l1", "mse"]);
    let back = harness::run_backbone_ablation(&cfg).unwrap();
    let names: Vec<&str> = back.rows.iter().map(|r| r.setting.as_str()).collect();
    assert_eq!(names, ["self_attention", "mlp"]);
    let k = harness::run_k_ablation(&cfg, &[12]).unwrap();
    assert_eq!(k.rows.len(), 1);
    // The default-count setting reproduces the main pipeline's MAE.
    assert_eq!(
        k.rows[0].mae,
        report().models[0].mae_of(METHOD_MAIN).unwrap()
    );
    assert!(disc
        .rows
        .iter()
        .chain(&back.rows)
        .all(|r| r.mae.is_finite()));
    let csv = emit_ablation(&disc, ReportFormat::Csv).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(harness::run_k_ablation(&cfg, &[]).is_err());
    assert_eq!(DEFAULT_K_COUNTS, [50, 100, 150, 200, 250]);
}

#[test]
fn varied_components_share_simulated_sets() {
    let cfg = small();
    let mut t = Timings::default();
    let prepared = harness::prepare(&cfg, None, &mut t).unwrap();
    let model = &prepared.models[0].model;
    let run = |kind, count| {
        let mut c = cfg.clone();
        c.simulation.count = count;
        harness::stage_one(
            &c,
            model,
            &prepared.train,
            &prepared.seeds,
            kind,
            &mut Timings::default(),
        )
        .unwrap()
    };
    let cos = run(DiscrepancyKind::Cosine, 12);
    let l1 = run(DiscrepancyKind::L1, 12);
    assert_eq!(cos.labels, l1.labels);
    assert_eq!(cos.reference, l1.reference);
    for (a, b) in cos.set.iter().zip(&l1.set) {
        assert_eq!(a.graph.events(), b.graph.events());
        assert_eq!(a.provenance, b.provenance);
    }
    // A smaller count is a prefix of a larger one.
    let fewer = run(DiscrepancyKind::Cosine, 5);
    assert_eq!(&cos.labels[..5], &fewer.labels[..]);
}

#[test]
fn failures_name_their_stage() {
    let mut cfg = small();
    cfg.dataset =
        serde_json::from_str(r#"{"kind": "file", "path": "/nonexistent/edges.csv"}"#).unwrap();
    match harness::run_pipeline(&cfg) {
        Err(Error::Stage { stage, .. }) => assert_eq!(stage, "load"),
        other => panic!("expected a load-stage error, got {other:?}"),
    }
    let mut cfg = small();
    cfg.tte_offsets = Some(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 1e6]);
    match harness::run_pipeline(&cfg) {
        Err(Error::Stage { stage, .. }) => assert_eq!(stage, "tte"),
        other => panic!("expected a tte-stage error, got {other:?}"),
    }
}
