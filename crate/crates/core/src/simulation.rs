//! Simulated test-time graphs: tail-of-training seed windows, perturbed by
//! edge dropping and labeled with the frozen model's own NDCG.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgnn::{ground_truth_ndcg, DgnnModel};
use crate::error::{Error, Result};
use crate::metrics::{AffinityQuery, QueryPlan};
use crate::seeds::derive_seed;
use crate::temporal_graph::{EdgeEvent, GraphSlice};

pub const MANIFEST_VERSION: u32 = 1;
const MAX_RETRIES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeedConfig {
    /// Tail fraction of the training span used as the seed window.
    pub seed_fraction: f64,
    /// Upper bound of the random amount the seed start moves earlier.
    pub offset_jitter: f64,
    /// Replay every member from the model state at `tail start - offset_jitter`
    /// instead of at its own start, so a member whose start moved less
    /// carries a larger unseen gap.
    pub anchor_context: bool,
}

impl Default for SeedConfig {
    fn default() -> Self {
        Self {
            seed_fraction: 0.05,
            offset_jitter: 40.0,
            anchor_context: true,
        }
    }
}

impl SeedConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.seed_fraction > 0.0 && self.seed_fraction <= 1.0) {
            return Err(Error::invalid("seed_fraction must be in (0,1]"));
        }
        if !(self.offset_jitter.is_finite() && self.offset_jitter >= 0.0) {
            return Err(Error::invalid("offset_jitter must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentationKind {
    EdgeDrop,
    TimeShift,
    WeightJitter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub kind: AugmentationKind,
    /// Drop fraction for `EdgeDrop`.
    pub p: f64,
    /// Max absolute time shift, or max log-scale weight change.
    pub magnitude: f64,
    pub rng_seed: u64,
}

impl AugmentationSpec {
    pub fn edge_drop(p: f64, rng_seed: u64) -> Self {
        Self {
            kind: AugmentationKind::EdgeDrop,
            p,
            magnitude: 0.0,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            AugmentationKind::EdgeDrop if !(self.p > 0.0 && self.p < 1.0) => Err(Error::invalid(
                format!("edge drop p={} not in (0,1)", self.p),
            )),
            AugmentationKind::TimeShift | AugmentationKind::WeightJitter
                if !(self.magnitude.is_finite() && self.magnitude >= 0.0) =>
            {
                Err(Error::invalid("augmentation magnitude must be >= 0"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed_start: f64,
    pub seed_end: f64,
    /// How far the seed start moved earlier.
    pub jitter: f64,
    /// Last timestamp present before augmentation.
    pub seed_last_timestamp: Option<f64>,
    pub seed_events: usize,
    pub augmentations: Vec<AugmentationSpec>,
}

#[derive(Debug, Clone)]
pub struct SimulatedGraph {
    pub graph: GraphSlice,
    pub provenance: Provenance,
}

impl SimulatedGraph {
    /// Drop fraction of the edge-drop step, if any.
    pub fn drop_fraction(&self) -> Option<f64> {
        self.provenance
            .augmentations
            .iter()
            .find(|a| a.kind == AugmentationKind::EdgeDrop)
            .map(|a| a.p)
    }
}

/// Tail window `[end - fraction·span - jitter, end)` of the training slice.
pub fn extract_seed<R: Rng + ?Sized>(
    train: &GraphSlice,
    cfg: &SeedConfig,
    rng: &mut R,
) -> Result<(GraphSlice, f64)> {
    cfg.validate()?;
    let span = train.length();
    let jitter = if cfg.offset_jitter > 0.0 {
        rng.gen_range(0.0..cfg.offset_jitter)
    } else {
        0.0
    };
    let start = (train.t_end() - cfg.seed_fraction * span - jitter).max(train.t_start());
    let seed = train.window(start, train.t_end())?;
    if seed.is_empty() {
        return Err(Error::EmptyGraph(format!(
            "seed window [{start}, {}) has no events",
            train.t_end()
        )));
    }
    Ok((seed, jitter))
}

/// Replay context shared by every member when `anchor_context` is on.
pub fn anchored_context(train: &GraphSlice, cfg: &SeedConfig) -> f64 {
    (train.t_end() - cfg.seed_fraction * train.length() - cfg.offset_jitter).max(train.t_start())
}

fn rebuild(seed: &GraphSlice, events: Vec<EdgeEvent>) -> Result<GraphSlice> {
    let g = GraphSlice::from_events(
        events,
        seed.num_nodes(),
        seed.meta().clone(),
        seed.t_start(),
        seed.t_end(),
    )?;
    g.with_context(seed.context_time())
}

/// Remove exactly `floor(p·n)` events uniformly without replacement; survivors
/// keep their order.
pub fn edge_drop<R: Rng + ?Sized>(seed: &GraphSlice, p: f64, rng: &mut R) -> Result<GraphSlice> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("edge drop p={p} not in (0,1)")));
    }
    let n = seed.len();
    let k = (p * n as f64).floor() as usize;
    let mut keep = vec![true; n];
    for i in sample(rng, n, k).iter() {
        keep[i] = false;
    }
    let survivors = seed
        .events()
        .iter()
        .zip(&keep)
        .filter_map(|(e, &k)| k.then_some(*e))
        .collect();
    rebuild(seed, survivors)
}

/// Move each event by uniform(-m, m), clamped into the window.
pub fn time_shift<R: Rng + ?Sized>(
    seed: &GraphSlice,
    magnitude: f64,
    rng: &mut R,
) -> Result<GraphSlice> {
    let hi = seed.t_end().next_down();
    let events = seed
        .events()
        .iter()
        .map(|e| {
            let dt = if magnitude > 0.0 {
                rng.gen_range(-magnitude..magnitude)
            } else {
                0.0
            };
            EdgeEvent {
                timestamp: (e.timestamp + dt).clamp(seed.t_start(), hi),
                ..*e
            }
        })
        .collect();
    rebuild(seed, events)
}

/// Scale each weight by `exp(uniform(-m, m))`.
pub fn weight_jitter<R: Rng + ?Sized>(
    seed: &GraphSlice,
    magnitude: f64,
    rng: &mut R,
) -> Result<GraphSlice> {
    let events = seed
        .events()
        .iter()
        .map(|e| {
            let s = if magnitude > 0.0 {
                rng.gen_range(-magnitude..magnitude)
            } else {
                0.0
            };
            EdgeEvent {
                weight: e.weight * s.exp(),
                ..*e
            }
        })
        .collect();
    rebuild(seed, events)
}

pub fn apply_augmentation(seed: &GraphSlice, spec: &AugmentationSpec) -> Result<GraphSlice> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    match spec.kind {
        AugmentationKind::EdgeDrop => edge_drop(seed, spec.p, &mut rng),
        AugmentationKind::TimeShift => time_shift(seed, spec.magnitude, &mut rng),
        AugmentationKind::WeightJitter => weight_jitter(seed, spec.magnitude, &mut rng),
    }
}

/// Options for building a simulated set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub count: usize,
    pub p_range: (f64, f64),
    pub seed: SeedConfig,
    /// Optional extra augmentations (time shift, weight jitter) applied after
    /// edge dropping. Only `kind` and `magnitude` are used; seeds are derived
    /// per member.
    pub extra: Vec<AugmentationSpec>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            count: 200,
            p_range: (0.05, 0.5),
            seed: SeedConfig::default(),
            extra: Vec::new(),
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count < 1 {
            return Err(Error::invalid("simulation count must be >= 1"));
        }
        let (lo, hi) = self.p_range;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::invalid(format!(
                "p_range ({lo}, {hi}) must satisfy 0 < lo < hi < 1"
            )));
        }
        self.seed.validate()
    }
}

fn build_member(
    train: &GraphSlice,
    cfg: &SimulationConfig,
    context: Option<f64>,
    member_seed: u64,
) -> Result<SimulatedGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(member_seed);
    let (lo, hi) = cfg.p_range;
    let mut p = rng.gen_range(lo..hi);
    let (mut seed, jitter) = extract_seed(train, &cfg.seed, &mut rng)?;
    if let Some(c) = context {
        let start = seed.t_start();
        seed = seed.with_context(c.min(start))?;
    }
    for _attempt in 0..=MAX_RETRIES {
        let drop = AugmentationSpec::edge_drop(p, rng.gen());
        let mut graph = apply_augmentation(&seed, &drop)?;
        let mut augmentations = vec![drop];
        for extra in &cfg.extra {
            let spec = AugmentationSpec {
                rng_seed: rng.gen(),
                ..*extra
            };
            graph = apply_augmentation(&graph, &spec)?;
            augmentations.push(spec);
        }
        if !graph.is_empty() {
            return Ok(SimulatedGraph {
                graph,
                provenance: Provenance {
                    seed_start: seed.t_start(),
                    seed_end: seed.t_end(),
                    jitter,
                    seed_last_timestamp: seed.last_timestamp(),
                    seed_events: seed.len(),
                    augmentations,
                },
            });
        }
        p /= 2.0;
    }
    Err(Error::EmptyGraph(format!(
        "simulated graph still empty after {MAX_RETRIES} retries"
    )))
}

/// `count` members; member `i` draws from its own RNG stream
/// `derive_seed(master_seed, i)`, so the set does not depend on scheduling.
pub fn build_simulated_set(
    train: &GraphSlice,
    cfg: &SimulationConfig,
    master_seed: u64,
) -> Result<Vec<SimulatedGraph>> {
    cfg.validate()?;
    let context = cfg
        .seed
        .anchor_context
        .then(|| anchored_context(train, &cfg.seed));
    (0..cfg.count)
        .into_par_iter()
        .map(|i| build_member(train, cfg, context, derive_seed(master_seed, i as u64)))
        .collect()
}

/// `y_disc`: the frozen model's mean NDCG@k on the simulated graph.
pub fn label_simulated(
    model: &DgnnModel,
    g: &SimulatedGraph,
    queries: &[AffinityQuery],
    k: usize,
) -> Result<f64> {
    let m = ground_truth_ndcg(model, &g.graph, queries, k)?;
    if m.counted == 0 {
        return Err(Error::NoQueries(format!(
            "simulated graph [{}, {}) has no answerable query",
            g.graph.t_start(),
            g.graph.t_end()
        )));
    }
    Ok(m.value)
}

/// Label every member in parallel; output follows member order.
pub fn label_all(
    model: &DgnnModel,
    set: &[SimulatedGraph],
    plan: &QueryPlan,
    k: usize,
) -> Result<Vec<f64>> {
    set.par_iter()
        .map(|g| {
            let queries = plan.enumerate(&g.graph)?;
            if queries.is_empty() {
                return Err(Error::NoQueries(format!(
                    "simulated graph [{}, {}) is shorter than the query horizon {}; raise seed_fraction",
                    g.graph.t_start(),
                    g.graph.t_end(),
                    plan.horizon
                )));
            }
            label_simulated(model, g, &queries, k)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub p: f64,
    pub jitter: f64,
    pub seed_start: f64,
    pub seed_end: f64,
    pub context: f64,
    pub label: f64,
    pub events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationManifest {
    pub version: u32,
    pub members: Vec<ManifestEntry>,
}

impl SimulationManifest {
    pub fn new(set: &[SimulatedGraph], labels: &[f64]) -> Result<Self> {
        if set.len() != labels.len() {
            return Err(Error::LengthMismatch {
                expected: set.len(),
                got: labels.len(),
            });
        }
        let members = set
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(index, (g, &label))| ManifestEntry {
                index,
                p: g.drop_fraction().unwrap_or(0.0),
                jitter: g.provenance.jitter,
                seed_start: g.provenance.seed_start,
                seed_end: g.provenance.seed_end,
                context: g.graph.context_time(),
                label,
                events: g.graph.len(),
            })
            .collect();
        Ok(Self {
            version: MANIFEST_VERSION,
            members,
        })
    }
}
