//! Example-level checks that need a trained model or generated data.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use dyneval::baselines::static_from_simulated;
use dyneval::dgnn::{
    embed, ground_truth_ndcg, init_model, loss_and_grad, predict_batch, train_dgnn,
    training_examples, DgnnConfig, DgnnModel,
};
use dyneval::discrepancy::{slice_features, DiscrepancyKind};
use dyneval::evaluator::{estimate, Evaluator};
use dyneval::harness::{self, ExperimentConfig, StageOne, Timings};
use dyneval::metrics::{ground_truth_affinity, mean_ndcg_from_truth, AffinityTruth, QueryPlan};
use dyneval::simulation::{
    anchored_context, build_simulated_set, label_all, label_simulated, SeedConfig, SimulatedGraph,
    SimulationConfig,
};
use dyneval::temporal_graph::{split_train_test, synth_drift_stream, DriftConfig};
use dyneval::{EdgeStream, GraphSlice, UnlabeledSlice};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SMALL: &str = r#"{
  "dataset": {"kind": "synthetic", "num_nodes": 24, "num_communities": 4, "horizon": 80.0},
  "models": [{"name": "m", "config": {"embed_dim": 8, "epochs": 60}}],
  "simulation": {"count": 60, "seed": {"seed_fraction": 0.1}},
  "reference": {"n_ref": 12},
  "evaluator": {"hidden_dim": 8, "epochs": 20},
  "baselines": false
}"#;

struct Fixture {
    cfg: ExperimentConfig,
    train: GraphSlice,
    model: DgnnModel,
    one: StageOne,
    evaluator: Evaluator,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let cfg = ExperimentConfig::from_json(SMALL).unwrap();
        let mut t = Timings::default();
        let prepared = harness::prepare(&cfg, None, &mut t).unwrap();
        let model = prepared.models[0].model.clone();
        let one = harness::stage_one(
            &cfg,
            &model,
            &prepared.train,
            &prepared.seeds,
            cfg.discrepancy,
            &mut t,
        )
        .unwrap();
        let evaluator = harness::stage_two(
            &cfg,
            &one,
            &prepared.seeds,
            cfg.discrepancy,
            cfg.evaluator.backbone,
            &mut t,
        )
        .unwrap();
        Fixture {
            cfg,
            train: prepared.train,
            model,
            one,
            evaluator,
        }
    })
}

fn drift_stream(drift_rate: f64) -> EdgeStream {
    synth_drift_stream(&DriftConfig {
        drift_rate,
        horizon: 200.0,
        ..DriftConfig::default()
    })
    .unwrap()
}

/// Counts of (source community, destination community) in the first and
/// last quarter of the horizon.
fn quartile_tables(s: &EdgeStream, c: usize, horizon: f64) -> (Vec<f64>, Vec<f64>) {
    let mut first = vec![0.0; c * c];
    let mut last = vec![0.0; c * c];
    for e in s.events() {
        let cell = (e.src % c) * c + e.dst % c;
        if e.timestamp < horizon / 4.0 {
            first[cell] += 1.0;
        } else if e.timestamp >= 0.75 * horizon {
            last[cell] += 1.0;
        }
    }
    (first, last)
}

fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    0.5 * a
        .iter()
        .zip(b)
        .map(|(x, y)| (x / sa - y / sb).abs())
        .sum::<f64>()
}

#[test]
fn zero_drift_keeps_the_destination_mix() {
    let s = drift_stream(0.0);
    let (first, last) = quartile_tables(&s, 6, 200.0);
    let (n1, n2): (f64, f64) = (first.iter().sum(), last.iter().sum());
    let mut chi2 = 0.0;
    let mut cells = 0usize;
    for (a, b) in first.iter().zip(&last) {
        let row = a + b;
        if row == 0.0 {
            continue;
        }
        cells += 1;
        let (ea, eb) = (row * n1 / (n1 + n2), row * n2 / (n1 + n2));
        chi2 += (a - ea).powi(2) / ea + (b - eb).powi(2) / eb;
    }
    // Upper 1% point of chi-square via the Wilson-Hilferty approximation.
    let df = (cells - 1) as f64;
    let z = 2.326;
    let h = 2.0 / (9.0 * df);
    let critical = df * (1.0 - h + z * h.sqrt()).powi(3);
    assert!(
        chi2 < critical,
        "chi2 {chi2:.2} >= {critical:.2} on {df} df"
    );
}

#[test]
fn drift_moves_the_destination_mix() {
    let (f0, l0) = quartile_tables(&drift_stream(0.0), 6, 200.0);
    let (f1, l1) = quartile_tables(&drift_stream(0.05), 6, 200.0);
    let still = total_variation(&f0, &l0);
    let moved = total_variation(&f1, &l1);
    assert!(moved > still, "tv {moved:.4} vs {still:.4}");
}

fn stationary_split() -> (GraphSlice, GraphSlice) {
    let s = Arc::new(
        synth_drift_stream(&DriftConfig {
            num_nodes: 24,
            num_communities: 4,
            horizon: 80.0,
            drift_rate: 0.0,
            ..DriftConfig::default()
        })
        .unwrap(),
    );
    split_train_test(&s, 0.6).unwrap()
}

fn small_dgnn() -> DgnnConfig {
    DgnnConfig {
        embed_dim: 8,
        epochs: 60,
        ..DgnnConfig::default()
    }
}

#[test]
fn trained_model_beats_a_uniform_scorer_without_drift() {
    let (train, test) = stationary_split();
    let plan = QueryPlan::default();
    let model = train_dgnn(&train, &plan.enumerate(&train).unwrap(), &small_dgnn()).unwrap();
    let queries = plan.enumerate(&test).unwrap();
    let truths: Vec<AffinityTruth> = queries
        .iter()
        .map(|q| ground_truth_affinity(&test, q).unwrap())
        .collect();
    let trained = ground_truth_ndcg(&model, &test, &queries, 10)
        .unwrap()
        .value;
    let uniform: Vec<Vec<f64>> = queries
        .iter()
        .map(|q| vec![1.0; q.candidates.len()])
        .collect();
    let flat = mean_ndcg_from_truth(&truths, &uniform, 10).unwrap().value;
    assert!(trained > flat, "trained {trained:.4} vs uniform {flat:.4}");
}

#[test]
fn training_is_reproducible_bit_for_bit() {
    let (train, _) = stationary_split();
    let queries = QueryPlan::default().enumerate(&train).unwrap();
    let a = train_dgnn(&train, &queries, &small_dgnn()).unwrap();
    let b = train_dgnn(&train, &queries, &small_dgnn()).unwrap();
    let bits = |m: &DgnnModel| {
        m.projection
            .data
            .iter()
            .map(|x| x.to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a, b);
}

#[test]
fn projection_gradient_matches_central_differences() {
    let (train, _) = stationary_split();
    let queries = QueryPlan::default().enumerate(&train).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut model = init_model(&train, &small_dgnn()).unwrap();
    // Larger entries than the initial scale so the softmax is not flat.
    for x in &mut model.projection.data {
        *x = rng.gen_range(-30.0..30.0);
    }
    let examples = training_examples(&model, &train, &queries).unwrap();
    let (_, grad) = loss_and_grad(&model.identity, &model.projection, &examples);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let i = rng.gen_range(0..model.projection.data.len());
        let mut plus = model.projection.clone();
        plus.data[i] += h;
        let mut minus = model.projection.clone();
        minus.data[i] -= h;
        let lp = loss_and_grad(&model.identity, &plus, &examples).0;
        let lm = loss_and_grad(&model.identity, &minus, &examples).0;
        let numeric = (lp - lm) / (2.0 * h);
        let analytic = grad.data[i];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    assert!(worst < 1e-4, "relative error {worst:e}");
}

#[test]
fn inference_leaves_the_model_untouched() {
    let f = fixture();
    let before = f.model.clone();
    let queries = QueryPlan::default().enumerate(&f.train).unwrap();
    for _ in 0..3 {
        embed(&f.model, &f.train).unwrap();
        predict_batch(&f.model, &f.train, &queries).unwrap();
        ground_truth_ndcg(&f.model, &f.train, &queries, 10).unwrap();
    }
    assert_eq!(before, f.model);
}

#[test]
fn memorized_scores_are_perfect_and_flat_scores_are_not() {
    let f = fixture();
    let queries = QueryPlan::default().enumerate(&f.train).unwrap();
    let truths: Vec<AffinityTruth> = queries
        .iter()
        .map(|q| ground_truth_affinity(&f.train, q).unwrap())
        .collect();
    let memorized: Vec<Vec<f64>> = truths.iter().map(|t| t.values.clone()).collect();
    let perfect = mean_ndcg_from_truth(&truths, &memorized, 10).unwrap();
    assert!((perfect.value - 1.0).abs() < 1e-12);
    let flat: Vec<Vec<f64>> = truths.iter().map(|t| vec![0.0; t.values.len()]).collect();
    assert!(mean_ndcg_from_truth(&truths, &flat, 10).unwrap().value < 1.0);
}

#[test]
fn degenerate_drop_range_gives_one_graph() {
    let f = fixture();
    let cfg = SimulationConfig {
        count: 1,
        p_range: (0.1, 0.100001),
        seed: SeedConfig {
            seed_fraction: 0.25,
            offset_jitter: 0.0,
            anchor_context: false,
        },
        ..SimulationConfig::default()
    };
    let set = build_simulated_set(&f.train, &cfg, 4).unwrap();
    assert_eq!(set.len(), 1);
    let g = &set[0];
    let p = g.drop_fraction().unwrap();
    assert!((p - 0.1).abs() < 1e-5);
    let n = g.provenance.seed_events;
    assert_eq!(g.graph.len(), n - (p * n as f64).floor() as usize);
}

#[test]
fn different_simulation_seeds_give_different_members() {
    let f = fixture();
    let cfg = &f.cfg.simulation;
    let a = build_simulated_set(&f.train, cfg, 1).unwrap();
    let b = build_simulated_set(&f.train, cfg, 2).unwrap();
    assert_eq!(a.len(), b.len());
    assert!(a
        .iter()
        .zip(&b)
        .any(|(x, y)| x.graph.events() != y.graph.events()));
    for g in a.iter().chain(&b) {
        let p = g.drop_fraction().unwrap();
        assert!(p >= cfg.p_range.0 && p < cfg.p_range.1, "p {p}");
    }
}

fn undropped_seed(f: &Fixture, g: &SimulatedGraph) -> GraphSlice {
    let p = &g.provenance;
    let seed = f.train.window(p.seed_start, p.seed_end).unwrap();
    let context = anchored_context(&f.train, &f.cfg.simulation.seed).min(p.seed_start);
    seed.with_context(context).unwrap()
}

#[test]
fn undropped_seed_label_is_its_ground_truth() {
    let f = fixture();
    let seed = undropped_seed(f, &f.one.set[0]);
    let as_member = SimulatedGraph {
        graph: seed.clone(),
        provenance: f.one.set[0].provenance.clone(),
    };
    let queries = f.cfg.queries.enumerate(&seed).unwrap();
    let label = label_simulated(&f.model, &as_member, &queries, 10).unwrap();
    let direct = ground_truth_ndcg(&f.model, &seed, &queries, 10)
        .unwrap()
        .value;
    assert_eq!(label, direct);
}

/// Mean NDCG@10 with truth summed by hand and DCG written out.
fn label_oracle(model: &DgnnModel, g: &GraphSlice, plan: &QueryPlan) -> f64 {
    let queries = plan.enumerate(g).unwrap();
    let preds = predict_batch(model, g, &queries).unwrap();
    let dcg = |rel: &[f64]| -> f64 {
        rel.iter()
            .take(10)
            .enumerate()
            .map(|(i, r)| (2f64.powf(*r) - 1.0) / ((i + 2) as f64).log2())
            .sum()
    };
    let mut sum = 0.0;
    let mut n = 0;
    for (q, p) in queries.iter().zip(&preds) {
        let mut w: HashMap<usize, f64> = HashMap::new();
        for e in g.events() {
            if e.src == q.src && e.timestamp >= q.t && e.timestamp <= q.t + q.horizon {
                *w.entry(e.dst).or_default() += e.weight;
            }
        }
        let total: f64 = q.candidates.iter().filter_map(|c| w.get(c)).sum();
        if total == 0.0 {
            continue;
        }
        let rel: Vec<f64> = q
            .candidates
            .iter()
            .map(|c| w.get(c).copied().unwrap_or(0.0) / total)
            .collect();
        let mut order: Vec<usize> = (0..rel.len()).collect();
        order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
        let mut ideal = rel.clone();
        ideal.sort_by(|a, b| b.total_cmp(a));
        sum += dcg(&order.iter().map(|&i| rel[i]).collect::<Vec<_>>()) / dcg(&ideal);
        n += 1;
    }
    sum / n as f64
}

#[test]
fn labels_match_a_per_graph_oracle() {
    let f = fixture();
    let mut by_p: Vec<&SimulatedGraph> = f.one.set.iter().collect();
    by_p.sort_by(|a, b| {
        a.drop_fraction()
            .unwrap()
            .total_cmp(&b.drop_fraction().unwrap())
    });
    let picks = [by_p[0], by_p[by_p.len() - 1]];
    assert!(picks[1].drop_fraction().unwrap() > picks[0].drop_fraction().unwrap() + 0.1);
    let owned: Vec<SimulatedGraph> = picks.iter().map(|g| (*g).clone()).collect();
    let labels = label_all(&f.model, &owned, &f.cfg.queries, 10).unwrap();
    for (g, label) in owned.iter().zip(labels) {
        let want = label_oracle(&f.model, &g.graph, &f.cfg.queries);
        assert!((label - want).abs() < 1e-12, "{label} vs {want}");
    }
}

#[test]
fn labels_are_valid_and_diverse() {
    let f = fixture();
    assert!(f.one.labels.len() >= 50);
    assert!(f.one.labels.iter().all(|y| (0.0..=1.0).contains(y)));
    let mean = f.one.labels.iter().sum::<f64>() / f.one.labels.len() as f64;
    let var = f.one.labels.iter().map(|y| (y - mean).powi(2)).sum::<f64>();
    assert!(var > 0.0);
}

#[test]
fn discrepancy_set_shape_and_labels() {
    let f = fixture();
    assert_eq!(f.one.records.len(), f.one.set.len());
    for (r, (g, &y)) in f
        .one
        .records
        .iter()
        .zip(f.one.set.iter().zip(&f.one.labels))
    {
        assert_eq!(r.features.cols, f.cfg.reference.n_ref);
        assert_eq!(r.features.rows, g.graph.active_nodes().len());
        assert_eq!(r.label, y);
    }
}

#[test]
fn estimate_on_the_seed_is_close_to_its_label() {
    let f = fixture();
    let seed = undropped_seed(f, &f.one.set[0]);
    let queries = f.cfg.queries.enumerate(&seed).unwrap();
    let label = ground_truth_ndcg(&f.model, &seed, &queries, 10)
        .unwrap()
        .value;
    let est = estimate(&f.evaluator, &f.model, &UnlabeledSlice::new(seed)).unwrap();
    assert!(est > 0.0 && est < 1.0);
    let bound = f.evaluator.training_rmse() + 0.05;
    assert!(
        (est - label).abs() <= bound,
        "est {est:.4} label {label:.4} bound {bound:.4}"
    );
}

#[test]
fn identical_variants_get_identical_estimates() {
    let f = fixture();
    let g = &f.one.set[3].graph;
    let a = estimate(&f.evaluator, &f.model, &UnlabeledSlice::new(g.clone())).unwrap();
    let b = estimate(&f.evaluator, &f.model, &UnlabeledSlice::new(g.clone())).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn static_features_equal_the_dynamic_ones() {
    let f = fixture();
    for (g, &y) in f.one.set.iter().zip(&f.one.labels).take(5) {
        let s = static_from_simulated(&f.model, &f.one.reference, g, y).unwrap();
        let dynamic = slice_features(
            &f.model,
            &g.graph,
            &f.one.reference,
            DiscrepancyKind::Cosine,
        )
        .unwrap();
        assert_eq!(s.features, dynamic.matrix);
        assert_eq!(s.label, Some(y));
    }
}
