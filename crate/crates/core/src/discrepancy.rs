//! Discrepancy features between slice embeddings and training-side anchors.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgnn::{embed, DgnnModel, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix};
use crate::temporal_graph::{GraphSlice, NodeId};

pub const DISCREPANCY_SET_VERSION: u32 = 1;
pub const DEFAULT_N_REF: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscrepancyKind {
    Cosine,
    L1,
    Mse,
}

impl DiscrepancyKind {
    pub const ALL: [DiscrepancyKind; 3] = [Self::Cosine, Self::L1, Self::Mse];

    pub fn name(self) -> &'static str {
        match self {
            Self::Cosine => "cosine",
            Self::L1 => "l1",
            Self::Mse => "mse",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "seed")]
pub enum ReferenceStrategy {
    FirstN,
    Random(u64),
    DegreeTop,
}

/// Training-side anchor nodes; fixes the feature width to `n_ref` columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSet {
    pub anchor_ids: Vec<NodeId>,
    pub anchor_embeddings: Matrix,
}

impl ReferenceSet {
    pub fn len(&self) -> usize {
        self.anchor_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchor_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.anchor_embeddings.cols
    }
}

/// Pick `n_ref` anchors among the non-zero rows of `z_tr`. `degrees` is
/// indexed by node id and only consulted by [`ReferenceStrategy::DegreeTop`]
/// (ties go to the smaller id).
pub fn select_reference_nodes(
    z_tr: &EmbeddingMatrix,
    n_ref: usize,
    strategy: ReferenceStrategy,
    degrees: &[f64],
) -> Result<ReferenceSet> {
    if n_ref == 0 {
        return Err(Error::invalid("n_ref must be >= 1"));
    }
    let usable: Vec<usize> = (0..z_tr.len())
        .filter(|&r| {
            let row = z_tr.rows.row(r);
            row.iter().all(|v| v.is_finite()) && norm(row) > 0.0
        })
        .collect();
    if n_ref > usable.len() {
        return Err(Error::invalid(format!(
            "n_ref {n_ref} exceeds the {} usable training nodes",
            usable.len()
        )));
    }
    let chosen: Vec<usize> = match strategy {
        ReferenceStrategy::FirstN => usable[..n_ref].to_vec(),
        ReferenceStrategy::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut pick = usable.clone();
            pick.shuffle(&mut rng);
            pick.truncate(n_ref);
            pick
        }
        ReferenceStrategy::DegreeTop => {
            let deg = |r: usize| degrees.get(z_tr.node_ids[r]).copied().unwrap_or(0.0);
            let mut pick = usable.clone();
            pick.sort_by(|&a, &b| {
                deg(b)
                    .total_cmp(&deg(a))
                    .then(z_tr.node_ids[a].cmp(&z_tr.node_ids[b]))
            });
            pick.truncate(n_ref);
            pick
        }
    };
    Ok(ReferenceSet {
        anchor_ids: chosen.iter().map(|&r| z_tr.node_ids[r]).collect(),
        anchor_embeddings: z_tr.rows.select_rows(&chosen),
    })
}

/// A feature matrix plus how many zero-norm rows were mapped to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub matrix: Matrix,
    pub zero_norm_rows: usize,
}

fn check_dims(z: &EmbeddingMatrix, reference: &ReferenceSet) -> Result<()> {
    if z.dim() != reference.dim() {
        return Err(Error::LengthMismatch {
            expected: reference.dim(),
            got: z.dim(),
        });
    }
    Ok(())
}

/// Entry `(u, v)` is the cosine similarity of `z_u` and anchor `a_v`.
/// A zero-norm row yields zeros and is counted.
pub fn cosine_discrepancy(z: &EmbeddingMatrix, reference: &ReferenceSet) -> Result<Features> {
    check_dims(z, reference)?;
    let anchors = &reference.anchor_embeddings;
    let anchor_norms: Vec<f64> = (0..anchors.rows).map(|r| norm(anchors.row(r))).collect();
    let mut out = Matrix::zeros(z.len(), anchors.rows);
    let mut zero_norm_rows = 0;
    for u in 0..z.len() {
        let zu = z.rows.row(u);
        let nu = norm(zu);
        if nu == 0.0 {
            zero_norm_rows += 1;
            continue;
        }
        for (v, &nv) in anchor_norms.iter().enumerate() {
            if nv > 0.0 {
                out[(u, v)] = dot(zu, anchors.row(v)) / (nu * nv);
            }
        }
    }
    Ok(Features {
        matrix: out,
        zero_norm_rows,
    })
}

fn elementwise(
    z: &EmbeddingMatrix,
    reference: &ReferenceSet,
    f: impl Fn(f64) -> f64,
) -> Result<Features> {
    check_dims(z, reference)?;
    let anchors = &reference.anchor_embeddings;
    let d = z.dim().max(1) as f64;
    let mut out = Matrix::zeros(z.len(), anchors.rows);
    for u in 0..z.len() {
        let zu = z.rows.row(u);
        for v in 0..anchors.rows {
            out[(u, v)] = zu
                .iter()
                .zip(anchors.row(v))
                .map(|(a, b)| f(a - b))
                .sum::<f64>()
                / d;
        }
    }
    Ok(Features {
        matrix: out,
        zero_norm_rows: 0,
    })
}

/// Mean absolute coordinate difference.
pub fn l1_discrepancy(z: &EmbeddingMatrix, reference: &ReferenceSet) -> Result<Features> {
    elementwise(z, reference, f64::abs)
}

/// Mean squared coordinate difference.
pub fn mse_discrepancy(z: &EmbeddingMatrix, reference: &ReferenceSet) -> Result<Features> {
    elementwise(z, reference, |x| x * x)
}

pub fn discrepancy(
    kind: DiscrepancyKind,
    z: &EmbeddingMatrix,
    reference: &ReferenceSet,
) -> Result<Features> {
    match kind {
        DiscrepancyKind::Cosine => cosine_discrepancy(z, reference),
        DiscrepancyKind::L1 => l1_discrepancy(z, reference),
        DiscrepancyKind::Mse => mse_discrepancy(z, reference),
    }
}

/// `(X_disc, y_disc)`. Deliberately carries no adjacency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyRecord {
    pub features: Matrix,
    pub label: f64,
}

/// Features of one slice: embed with the frozen model, compare to anchors.
pub fn slice_features(
    model: &DgnnModel,
    slice: &GraphSlice,
    reference: &ReferenceSet,
    kind: DiscrepancyKind,
) -> Result<Features> {
    let z = embed(model, slice)?;
    if z.is_empty() {
        return Err(Error::EmptyGraph(format!(
            "slice [{}, {}) has no active nodes",
            slice.t_start(),
            slice.t_end()
        )));
    }
    discrepancy(kind, &z, reference)
}

/// One record per simulated graph, in input order.
pub fn build_discrepancy_set(
    model: &DgnnModel,
    graphs: &[&GraphSlice],
    labels: &[f64],
    reference: &ReferenceSet,
    kind: DiscrepancyKind,
) -> Result<Vec<DiscrepancyRecord>> {
    if graphs.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: graphs.len(),
            got: labels.len(),
        });
    }
    graphs
        .par_iter()
        .zip(labels.par_iter())
        .map(|(g, &label)| {
            let features = slice_features(model, g, reference, kind)?.matrix;
            Ok(DiscrepancyRecord { features, label })
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct DiscrepancySetFile {
    version: u32,
    records: Vec<DiscrepancyRecord>,
}

pub fn save_discrepancy_set(records: &[DiscrepancyRecord]) -> Result<String> {
    Ok(serde_json::to_string(&DiscrepancySetFile {
        version: DISCREPANCY_SET_VERSION,
        records: records.to_vec(),
    })?)
}

pub fn load_discrepancy_set(text: &str) -> Result<Vec<DiscrepancyRecord>> {
    let file: DiscrepancySetFile = serde_json::from_str(text)?;
    if file.version != DISCREPANCY_SET_VERSION {
        return Err(Error::Version {
            found: file.version,
            expected: DISCREPANCY_SET_VERSION,
        });
    }
    Ok(file.records)
}
