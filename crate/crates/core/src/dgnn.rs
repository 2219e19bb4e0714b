//! A compact temporal graph model.
//!
//! Every node has a fixed identity vector `x_v` and a memory `h_u`. Replaying
//! an event `(u, v, t, w)` decays `h_u` by `exp(-λ Δt)` and adds `w · x_v`.
//! The node embedding is the projected memory `z_u = P h_u`, so the update is
//! equivalently `z_u <- decay · z_u + w · P x_v`. Candidate `c` is scored by
//! `z_u · x_c`; a softmax over candidates gives the affinity prediction.
//! Only `P` is learned (soft-label cross-entropy, full-batch gradient descent).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, softmax, Matrix};
use crate::metrics::{
    ground_truth_affinity, mean_ndcg_from_truth, AffinityQuery, AffinityTruth, MeanNdcg,
};
use crate::temporal_graph::{EdgeEvent, GraphSlice, NodeId};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgnnConfig {
    pub embed_dim: usize,
    pub time_decay: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub rng_seed: u64,
}

impl Default for DgnnConfig {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            time_decay: 0.1,
            learning_rate: 20.0,
            epochs: 200,
            rng_seed: 11,
        }
    }
}

impl DgnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim < 2 {
            return Err(Error::invalid("embed_dim must be >= 2"));
        }
        if !(self.time_decay.is_finite() && self.time_decay > 0.0) {
            return Err(Error::invalid("time_decay must be > 0"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be > 0"));
        }
        if self.epochs < 1 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        Ok(())
    }
}

/// Latent node embeddings for the nodes active in some slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    pub rows: Matrix,
    pub node_ids: Vec<NodeId>,
    pub as_of_time: f64,
}

impl EmbeddingMatrix {
    pub fn dim(&self) -> usize {
        self.rows.cols
    }

    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    pub fn row_of(&self, node: NodeId) -> Option<&[f64]> {
        self.node_ids
            .iter()
            .position(|&n| n == node)
            .map(|i| self.rows.row(i))
    }
}

/// Replay state: un-projected memory plus the time of each node's last update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryState {
    pub memory: Matrix,
    pub last_update: Vec<Option<f64>>,
}

impl MemoryState {
    fn zeros(num_nodes: usize, dim: usize) -> Self {
        Self {
            memory: Matrix::zeros(num_nodes, dim),
            last_update: vec![None; num_nodes],
        }
    }

    fn apply(&mut self, e: &EdgeEvent, identity: &Matrix, decay: f64) {
        let factor = self.last_update[e.src]
            .map_or(0.0, |last| (-decay * (e.timestamp - last).max(0.0)).exp());
        let x = identity.row(e.dst);
        for (h, xv) in self.memory.row_mut(e.src).iter_mut().zip(x) {
            *h = *h * factor + e.weight * xv;
        }
        self.last_update[e.src] = Some(e.timestamp);
    }

    /// Memory of `u` decayed to time `t`.
    fn read(&self, u: NodeId, t: f64, decay: f64) -> Vec<f64> {
        let factor = self.last_update[u].map_or(0.0, |last| (-decay * (t - last).max(0.0)).exp());
        self.memory.row(u).iter().map(|h| h * factor).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgnnModel {
    pub config: DgnnConfig,
    /// Fixed per-node identity vectors `x_v`.
    pub identity: Matrix,
    /// Learned `d × d` projection.
    pub projection: Matrix,
    /// State after replaying the whole training window.
    pub trained_state: MemoryState,
    /// End of the training window; `trained_state` is valid from here on.
    pub as_of: f64,
    /// Training events, kept so slices that begin inside the training window
    /// can be replayed from the state at their own start.
    pub history: Vec<EdgeEvent>,
    /// Cross-entropy per epoch.
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    model: DgnnModel,
}

impl DgnnModel {
    pub fn num_nodes(&self) -> usize {
        self.identity.rows
    }

    pub fn dim(&self) -> usize {
        self.config.embed_dim
    }

    /// Memory state at time `t` built from everything strictly earlier.
    pub fn state_at(&self, t: f64) -> MemoryState {
        if t >= self.as_of {
            return self.trained_state.clone();
        }
        let mut state = MemoryState::zeros(self.num_nodes(), self.dim());
        for e in self.history.iter().take_while(|e| e.timestamp < t) {
            state.apply(e, &self.identity, self.config.time_decay);
        }
        state
    }

    fn check_slice(&self, slice: &GraphSlice) -> Result<()> {
        for e in slice.events() {
            for node in [e.src, e.dst] {
                if node >= self.num_nodes() {
                    return Err(Error::UnknownNode {
                        node,
                        num_nodes: self.num_nodes(),
                    });
                }
            }
        }
        Ok(())
    }

    fn check_query(&self, q: &AffinityQuery) -> Result<()> {
        for &node in std::iter::once(&q.src).chain(&q.candidates) {
            if node >= self.num_nodes() {
                return Err(Error::UnknownNode {
                    node,
                    num_nodes: self.num_nodes(),
                });
            }
        }
        Ok(())
    }

    fn project(&self, h: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|i| dot(self.projection.row(i), h))
            .collect()
    }

    fn candidate_scores(&self, z: &[f64], candidates: &[NodeId]) -> Vec<f64> {
        candidates
            .iter()
            .map(|&c| dot(z, self.identity.row(c)))
            .collect()
    }

    pub fn save_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&Checkpoint {
            version: CHECKPOINT_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn load_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: ck.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        Ok(ck.model)
    }
}

/// Memory of each query's source, read just before the query time.
/// `queries` may be in any order; results follow input order.
fn source_memories(
    model: &DgnnModel,
    slice: &GraphSlice,
    queries: &[AffinityQuery],
) -> Vec<Vec<f64>> {
    let decay = model.config.time_decay;
    let mut order: Vec<usize> = (0..queries.len()).collect();
    order.sort_by(|&a, &b| queries[a].t.total_cmp(&queries[b].t).then(a.cmp(&b)));
    let mut state = model.state_at(slice.context_time());
    let events = slice.events();
    let mut next = 0;
    let mut out = vec![Vec::new(); queries.len()];
    for qi in order {
        let q = &queries[qi];
        while next < events.len() && events[next].timestamp < q.t {
            state.apply(&events[next], &model.identity, decay);
            next += 1;
        }
        out[qi] = state.read(q.src, q.t, decay);
    }
    out
}

/// Softmax affinity predictions for many queries on one slice.
pub fn predict_batch(
    model: &DgnnModel,
    slice: &GraphSlice,
    queries: &[AffinityQuery],
) -> Result<Vec<Vec<f64>>> {
    model.check_slice(slice)?;
    for q in queries {
        model.check_query(q)?;
    }
    Ok(source_memories(model, slice, queries)
        .into_iter()
        .zip(queries)
        .map(|(h, q)| softmax(&model.candidate_scores(&model.project(&h), &q.candidates)))
        .collect())
}

pub fn predict_affinity(
    model: &DgnnModel,
    slice: &GraphSlice,
    query: &AffinityQuery,
) -> Result<Vec<f64>> {
    Ok(predict_batch(model, slice, std::slice::from_ref(query))?.remove(0))
}

/// Replay `slice` from the frozen model's state at the slice start and return
/// the embeddings of every node active in it, as of `slice.t_end()`.
pub fn embed(model: &DgnnModel, slice: &GraphSlice) -> Result<EmbeddingMatrix> {
    model.check_slice(slice)?;
    let decay = model.config.time_decay;
    let mut state = model.state_at(slice.context_time());
    for e in slice.events() {
        state.apply(e, &model.identity, decay);
    }
    let node_ids = slice.active_nodes();
    let t = slice.t_end();
    let mut rows = Matrix::zeros(node_ids.len(), model.dim());
    for (r, &u) in node_ids.iter().enumerate() {
        let z = model.project(&state.read(u, t, decay));
        rows.row_mut(r).copy_from_slice(&z);
    }
    Ok(EmbeddingMatrix {
        rows,
        node_ids,
        as_of_time: t,
    })
}

/// Mean NDCG@k of the model's predictions against the slice's own outcomes.
/// Harness and simulation labeling only.
pub fn ground_truth_ndcg(
    model: &DgnnModel,
    slice: &GraphSlice,
    queries: &[AffinityQuery],
    k: usize,
) -> Result<MeanNdcg> {
    let truths = queries
        .iter()
        .map(|q| ground_truth_affinity(slice, q))
        .collect::<Result<Vec<_>>>()?;
    ndcg_against(model, slice, queries, &truths, k)
}

/// Like [`ground_truth_ndcg`] but with externally supplied truth vectors.
pub fn ndcg_against(
    model: &DgnnModel,
    slice: &GraphSlice,
    queries: &[AffinityQuery],
    truths: &[AffinityTruth],
    k: usize,
) -> Result<MeanNdcg> {
    let preds = predict_batch(model, slice, queries)?;
    mean_ndcg_from_truth(truths, &preds, k)
}

/// One precomputed training example: source memory, candidate ids, soft target.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub memory: Vec<f64>,
    pub candidates: Vec<NodeId>,
    pub target: Vec<f64>,
}

/// Mean soft-label cross-entropy and its gradient with respect to `P`.
pub fn loss_and_grad(
    identity: &Matrix,
    projection: &Matrix,
    examples: &[TrainingExample],
) -> (f64, Matrix) {
    let d = projection.rows;
    let mut grad = Matrix::zeros(d, d);
    let mut loss = 0.0;
    for ex in examples {
        let z: Vec<f64> = (0..d).map(|i| dot(projection.row(i), &ex.memory)).collect();
        let scores: Vec<f64> = ex
            .candidates
            .iter()
            .map(|&c| dot(&z, identity.row(c)))
            .collect();
        let p = softmax(&scores);
        // dL/dz = Σ_c (p_c - y_c) x_c ; dL/dP = dL/dz · hᵀ
        let mut dz = vec![0.0; d];
        for ((&c, &pc), &yc) in ex.candidates.iter().zip(&p).zip(&ex.target) {
            if yc > 0.0 {
                loss -= yc * pc.max(f64::MIN_POSITIVE).ln();
            }
            let g = pc - yc;
            for (dzi, xi) in dz.iter_mut().zip(identity.row(c)) {
                *dzi += g * xi;
            }
        }
        for (i, &dzi) in dz.iter().enumerate() {
            for (gij, hj) in grad.row_mut(i).iter_mut().zip(&ex.memory) {
                *gij += dzi * hj;
            }
        }
    }
    let n = examples.len().max(1) as f64;
    grad.scale(1.0 / n);
    (loss / n, grad)
}

/// Build the model skeleton (identity vectors, initial projection, memory
/// after the training window) without fitting.
pub fn init_model(train: &GraphSlice, config: &DgnnConfig) -> Result<DgnnModel> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyGraph("training slice has no events".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let n = train.num_nodes();
    let d = config.embed_dim;
    let identity = Matrix::uniform(n, d, 0.1, &mut rng);
    let projection = Matrix::uniform(d, d, 0.1, &mut rng);
    let mut state = MemoryState::zeros(n, d);
    for e in train.events() {
        state.apply(e, &identity, config.time_decay);
    }
    Ok(DgnnModel {
        config: config.clone(),
        identity,
        projection,
        trained_state: state,
        as_of: train.t_end(),
        history: train.events().to_vec(),
        loss_history: Vec::new(),
    })
}

pub fn training_examples(
    model: &DgnnModel,
    train: &GraphSlice,
    queries: &[AffinityQuery],
) -> Result<Vec<TrainingExample>> {
    for q in queries {
        model.check_query(q)?;
    }
    let memories = source_memories(model, train, queries);
    let mut out = Vec::new();
    for (q, memory) in queries.iter().zip(memories) {
        let truth = ground_truth_affinity(train, q)?;
        if truth.all_zero {
            continue;
        }
        out.push(TrainingExample {
            memory,
            candidates: q.candidates.clone(),
            target: truth.values,
        });
    }
    Ok(out)
}

pub fn train_dgnn(
    train: &GraphSlice,
    queries: &[AffinityQuery],
    config: &DgnnConfig,
) -> Result<DgnnModel> {
    let mut model = init_model(train, config)?;
    let examples = training_examples(&model, train, queries)?;
    if examples.is_empty() {
        return Err(Error::NoQueries(
            "no training query has an interaction in its horizon".into(),
        ));
    }
    for epoch in 1..=config.epochs {
        let (loss, grad) = loss_and_grad(&model.identity, &model.projection, &examples);
        if !loss.is_finite() || !grad.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        model.loss_history.push(loss);
        for (p, g) in model.projection.data.iter_mut().zip(&grad.data) {
            *p -= config.learning_rate * g;
        }
    }
    let (final_loss, _) = loss_and_grad(&model.identity, &model.projection, &examples);
    if !final_loss.is_finite() {
        return Err(Error::Diverged {
            epoch: config.epochs,
        });
    }
    model.loss_history.push(final_loss);
    Ok(model)
}
