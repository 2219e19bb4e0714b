//! Comparison estimators.
//!
//! * Softmax threshold: the share of queries whose top predicted probability
//!   exceeds `tau`, read directly as an NDCG estimate.
//! * Static graph regressor: each graph is flattened to the edges present at a
//!   single timestamp and a two-layer graph convolution maps
//!   (cosine features, adjacency) to NDCG.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dgnn::{embed, predict_batch, DgnnModel};
use crate::discrepancy::{cosine_discrepancy, ReferenceSet};
use crate::error::{Error, Result};
use crate::linalg::{dot, sigmoid, Matrix};
use crate::metrics::AffinityQuery;
use crate::simulation::SimulatedGraph;
use crate::temporal_graph::{GraphSlice, UnlabeledSlice};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    pub tau: f64,
}

impl ThresholdConfig {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::invalid(format!("tau must be in (0,1), got {tau}")));
        }
        Ok(Self { tau })
    }
}

/// Thresholds reported alongside the main estimator.
pub const DEFAULT_TAUS: [f64; 3] = [0.5, 0.7, 0.9];

/// Share of `max_probs` strictly above `tau`.
pub fn fraction_above(max_probs: &[f64], tau: f64) -> Result<f64> {
    if max_probs.is_empty() {
        return Err(Error::NoQueries("threshold estimate needs queries".into()));
    }
    let hits = max_probs.iter().filter(|&&p| p > tau).count();
    Ok(hits as f64 / max_probs.len() as f64)
}

/// Highest softmax probability per query.
pub fn max_probabilities(
    model: &DgnnModel,
    slice: &UnlabeledSlice,
    queries: &[AffinityQuery],
) -> Result<Vec<f64>> {
    Ok(predict_batch(model, slice.slice(), queries)?
        .into_iter()
        .map(|p| p.into_iter().fold(0.0, f64::max))
        .collect())
}

pub fn threshold_estimate(
    model: &DgnnModel,
    slice: &UnlabeledSlice,
    queries: &[AffinityQuery],
    cfg: ThresholdConfig,
) -> Result<f64> {
    ThresholdConfig::new(cfg.tau)?;
    if queries.is_empty() {
        return Err(Error::NoQueries("threshold estimate needs queries".into()));
    }
    fraction_above(&max_probabilities(model, slice, queries)?, cfg.tau)
}

/// A graph reduced to one timestamp's edges plus per-node cosine features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticDiscrepancyGraph {
    pub features: Matrix,
    /// Row-major `M×M`, symmetric, false on the diagonal.
    pub adjacency: Vec<bool>,
    pub label: Option<f64>,
}

impl StaticDiscrepancyGraph {
    pub fn num_nodes(&self) -> usize {
        self.features.rows
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a * self.num_nodes() + b]
    }

    pub fn undirected_edges(&self) -> usize {
        let m = self.num_nodes();
        (0..m)
            .flat_map(|a| (a + 1..m).map(move |b| (a, b)))
            .filter(|&(a, b)| self.has_edge(a, b))
            .count()
    }

    /// `D^-1 (A + I)`.
    pub fn normalized_adjacency(&self) -> Matrix {
        let m = self.num_nodes();
        let mut out = Matrix::zeros(m, m);
        for a in 0..m {
            let row = &self.adjacency[a * m..(a + 1) * m];
            let deg = 1 + row.iter().filter(|&&e| e).count();
            let w = 1.0 / deg as f64;
            out[(a, a)] = w;
            for (b, &e) in row.iter().enumerate() {
                if e {
                    out[(a, b)] = w;
                }
            }
        }
        out
    }
}

/// Features from the dynamic embedding of `slice`; adjacency from the slice's
/// events whose timestamp equals `edge_time` exactly.
pub fn build_static_discrepancy(
    model: &DgnnModel,
    reference: &ReferenceSet,
    slice: &GraphSlice,
    edge_time: Option<f64>,
    label: Option<f64>,
) -> Result<StaticDiscrepancyGraph> {
    if slice.is_empty() {
        return Err(Error::EmptyGraph("static adaptation needs events".into()));
    }
    let z = embed(model, slice)?;
    let features = cosine_discrepancy(&z, reference)?.matrix;
    let index: HashMap<usize, usize> = z
        .node_ids
        .iter()
        .enumerate()
        .map(|(i, &n)| (n, i))
        .collect();
    let m = z.len();
    let mut adjacency = vec![false; m * m];
    if let Some(t) = edge_time {
        for e in slice
            .events()
            .iter()
            .filter(|e| e.timestamp == t && e.src != e.dst)
        {
            if let (Some(&a), Some(&b)) = (index.get(&e.src), index.get(&e.dst)) {
                adjacency[a * m + b] = true;
                adjacency[b * m + a] = true;
            }
        }
    }
    Ok(StaticDiscrepancyGraph {
        features,
        adjacency,
        label,
    })
}

/// Simulated graphs use the seed's last timestamp from before augmentation,
/// so a graph whose final-timestamp edges were all dropped has no edges.
pub fn static_from_simulated(
    model: &DgnnModel,
    reference: &ReferenceSet,
    sim: &SimulatedGraph,
    label: f64,
) -> Result<StaticDiscrepancyGraph> {
    build_static_discrepancy(
        model,
        reference,
        &sim.graph,
        sim.provenance.seed_last_timestamp,
        Some(label),
    )
}

pub fn static_from_test(
    model: &DgnnModel,
    reference: &ReferenceSet,
    test: &UnlabeledSlice,
) -> Result<StaticDiscrepancyGraph> {
    let s = test.slice();
    build_static_discrepancy(model, reference, s, s.last_timestamp(), None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GcnConfig {
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub rng_seed: u64,
}

impl Default for GcnConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 32,
            learning_rate: 0.05,
            epochs: 60,
            rng_seed: 23,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnRegressor {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: f64,
    pub mse_history: Vec<f64>,
}

struct GcnCache {
    adj: Matrix,
    agg1: Matrix,
    h1: Matrix,
    agg2: Matrix,
    h2: Matrix,
    pooled: Vec<f64>,
    output: f64,
}

fn tanh_layer(agg: &Matrix, w: &Matrix, b: &[f64]) -> Matrix {
    let mut u = agg.matmul(w);
    u.add_row_vector(b);
    u.data.iter_mut().for_each(|v| *v = v.tanh());
    u
}

#[derive(Default)]
struct GcnGrad {
    w1: Option<Matrix>,
    b1: Vec<f64>,
    w2: Option<Matrix>,
    b2: Vec<f64>,
    w_out: Vec<f64>,
    b_out: f64,
}

impl GcnRegressor {
    fn init(n_ref: usize, cfg: &GcnConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        let h = cfg.hidden_dim;
        let b1 = (6.0 / (n_ref + h) as f64).sqrt();
        let b2 = (3.0 / h as f64).sqrt();
        Self {
            w1: Matrix::uniform(n_ref, h, b1, &mut rng),
            b1: vec![0.0; h],
            w2: Matrix::uniform(h, h, b2, &mut rng),
            b2: vec![0.0; h],
            w_out: Matrix::uniform(h, 1, 0.1, &mut rng).data,
            b_out: 0.0,
            mse_history: Vec::new(),
        }
    }

    fn check(&self, g: &StaticDiscrepancyGraph) -> Result<()> {
        if g.features.cols != self.w1.rows {
            return Err(Error::LengthMismatch {
                expected: self.w1.rows,
                got: g.features.cols,
            });
        }
        if g.num_nodes() == 0 {
            return Err(Error::EmptyGraph("static graph has no nodes".into()));
        }
        Ok(())
    }

    fn forward_cached(&self, g: &StaticDiscrepancyGraph) -> GcnCache {
        let adj = g.normalized_adjacency();
        let agg1 = adj.matmul(&g.features);
        let h1 = tanh_layer(&agg1, &self.w1, &self.b1);
        let agg2 = adj.matmul(&h1);
        let h2 = tanh_layer(&agg2, &self.w2, &self.b2);
        let pooled = h2.col_means();
        let output = sigmoid(dot(&pooled, &self.w_out) + self.b_out);
        GcnCache {
            adj,
            agg1,
            h1,
            agg2,
            h2,
            pooled,
            output,
        }
    }

    pub fn predict(&self, g: &StaticDiscrepancyGraph) -> Result<f64> {
        self.check(g)?;
        Ok(self.forward_cached(g).output)
    }

    fn gradient(&self, g: &StaticDiscrepancyGraph, target: f64) -> (f64, GcnGrad) {
        let c = self.forward_cached(g);
        let err = c.output - target;
        let dz = 2.0 * err * c.output * (1.0 - c.output);
        let m = c.h2.rows;
        let mut dh2 = Matrix::zeros(m, self.w_out.len());
        for r in 0..m {
            for (d, w) in dh2.row_mut(r).iter_mut().zip(&self.w_out) {
                *d = dz * w / m as f64;
            }
        }
        for (d, h) in dh2.data.iter_mut().zip(&c.h2.data) {
            *d *= 1.0 - h * h;
        }
        let w2 = c.agg2.t_matmul(&dh2);
        let b2 = dh2.col_sums();
        let dagg2 = dh2.matmul_t(&self.w2);
        let mut dh1 = c.adj.t_matmul(&dagg2);
        for (d, h) in dh1.data.iter_mut().zip(&c.h1.data) {
            *d *= 1.0 - h * h;
        }
        let w1 = c.agg1.t_matmul(&dh1);
        let b1 = dh1.col_sums();
        let grad = GcnGrad {
            w1: Some(w1),
            b1,
            w2: Some(w2),
            b2,
            w_out: c.pooled.iter().map(|p| dz * p).collect(),
            b_out: dz,
        };
        (err * err, grad)
    }

    fn step(&mut self, g: &GcnGrad, lr: f64) {
        let upd = |dst: &mut [f64], src: &[f64]| {
            for (d, s) in dst.iter_mut().zip(src) {
                *d -= lr * s;
            }
        };
        upd(&mut self.w1.data, &g.w1.as_ref().expect("gradient").data);
        upd(&mut self.b1, &g.b1);
        upd(&mut self.w2.data, &g.w2.as_ref().expect("gradient").data);
        upd(&mut self.b2, &g.b2);
        upd(&mut self.w_out, &g.w_out);
        self.b_out -= lr * g.b_out;
    }

    fn is_finite(&self) -> bool {
        self.w1.is_finite()
            && self.w2.is_finite()
            && self
                .b1
                .iter()
                .chain(&self.b2)
                .chain(&self.w_out)
                .chain(std::iter::once(&self.b_out))
                .all(|v| v.is_finite())
    }

    fn mse(&self, set: &[(&StaticDiscrepancyGraph, f64)]) -> f64 {
        set.iter()
            .map(|(g, y)| (self.forward_cached(g).output - y).powi(2))
            .sum::<f64>()
            / set.len() as f64
    }
}

/// Per-graph gradient steps in a seeded shuffled order.
pub fn train_gcn(train_set: &[StaticDiscrepancyGraph], cfg: &GcnConfig) -> Result<GcnRegressor> {
    if train_set.len() < 2 {
        return Err(Error::invalid("need at least 2 training graphs"));
    }
    if cfg.hidden_dim == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::invalid(
            "hidden_dim and learning_rate must be positive",
        ));
    }
    let labeled = train_set
        .iter()
        .map(|g| {
            g.label
                .map(|y| (g, y))
                .ok_or_else(|| Error::invalid("training graph without a label"))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut model = GcnRegressor::init(train_set[0].features.cols, cfg);
    for (g, _) in &labeled {
        model.check(g)?;
    }
    let mean = labeled.iter().map(|(_, y)| y).sum::<f64>() / labeled.len() as f64;
    let m = mean.clamp(1e-3, 1.0 - 1e-3);
    model.b_out = (m / (1.0 - m)).ln();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ 0x9c);
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    model.mse_history.push(model.mse(&labeled));
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let (g, y) = labeled[i];
            let (_, grad) = model.gradient(g, y);
            model.step(&grad, cfg.learning_rate);
        }
        let loss = model.mse(&labeled);
        if !loss.is_finite() || !model.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        model.mse_history.push(loss);
    }
    Ok(model)
}

pub fn gnnevaluator_estimate(
    train_set: &[StaticDiscrepancyGraph],
    test_graph: &StaticDiscrepancyGraph,
    cfg: &GcnConfig,
) -> Result<f64> {
    train_gcn(train_set, cfg)?.predict(test_graph)
}
