use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::baselines::{GcnConfig, ThresholdConfig, DEFAULT_TAUS};
use crate::dgnn::DgnnConfig;
use crate::discrepancy::{DiscrepancyKind, ReferenceStrategy};
use crate::error::{Error, Result};
use crate::evaluator::EvaluatorConfig;
use crate::metrics::{QueryPlan, DEFAULT_K};
use crate::simulation::SimulationConfig;
use crate::temporal_graph::{
    parse_edge_stream, synth_drift_stream, DriftConfig, EdgeStream, StreamMeta,
};

/// Where the edge stream comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic(DriftConfig),
    /// CSV with `src,dst,t,w` columns.
    File {
        path: PathBuf,
        #[serde(default)]
        allow_self_loops: bool,
    },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic(DriftConfig::default())
    }
}

impl DatasetSource {
    pub fn load(&self) -> Result<Arc<EdgeStream>> {
        let stream = match self {
            DatasetSource::Synthetic(cfg) => synth_drift_stream(cfg)?,
            DatasetSource::File {
                path,
                allow_self_loops,
            } => {
                let text = std::fs::read_to_string(path)?;
                let meta = StreamMeta {
                    name: path.display().to_string(),
                    allow_self_loops: *allow_self_loops,
                };
                parse_edge_stream(&text, meta)?
            }
        };
        Ok(Arc::new(stream))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    #[serde(default)]
    pub config: DgnnConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferenceConfig {
    pub n_ref: usize,
    pub strategy: ReferenceStrategy,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            n_ref: 32,
            strategy: ReferenceStrategy::DegreeTop,
        }
    }
}

/// One experiment, loadable from a single JSON document. Missing fields take
/// their defaults.
///
/// The per-component `rng_seed` fields (model, evaluator, graph regressor,
/// random reference selection) are replaced by seeds derived from
/// `master_seed`; the dataset seed is left alone so the data stay fixed while
/// the master seed varies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub split_fraction: f64,
    /// Seven absolute offsets for `g_1..g_7`; `None` spaces them evenly.
    pub tte_offsets: Option<Vec<f64>>,
    pub models: Vec<ModelSpec>,
    pub simulation: SimulationConfig,
    pub discrepancy: DiscrepancyKind,
    pub reference: ReferenceConfig,
    pub evaluator: EvaluatorConfig,
    pub gcn: GcnConfig,
    pub taus: Vec<f64>,
    pub k: usize,
    pub queries: QueryPlan,
    pub master_seed: u64,
    /// Run the threshold and graph-regressor baselines.
    pub baselines: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::default(),
            split_fraction: 0.6,
            tte_offsets: None,
            models: vec![ModelSpec {
                name: "dgnn".into(),
                config: DgnnConfig::default(),
            }],
            simulation: SimulationConfig::default(),
            discrepancy: DiscrepancyKind::Cosine,
            reference: ReferenceConfig::default(),
            evaluator: EvaluatorConfig::default(),
            gcn: GcnConfig::default(),
            taus: DEFAULT_TAUS.to_vec(),
            k: DEFAULT_K,
            queries: QueryPlan::default(),
            master_seed: 2024,
            baselines: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::invalid("at least one model config is required"));
        }
        let mut names: Vec<&str> = self.models.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.models.len() {
            return Err(Error::invalid("model names must be unique"));
        }
        for m in &self.models {
            m.config.validate()?;
        }
        if let DatasetSource::Synthetic(d) = &self.dataset {
            d.validate()?;
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::invalid("split_fraction must be in (0,1)"));
        }
        self.simulation.validate()?;
        self.evaluator.validate()?;
        for &tau in &self.taus {
            ThresholdConfig::new(tau)?;
        }
        if self.k < 1 {
            return Err(Error::invalid("k must be >= 1"));
        }
        if self.reference.n_ref < 1 {
            return Err(Error::invalid("n_ref must be >= 1"));
        }
        if !(self.queries.bucket_width > 0.0 && self.queries.horizon > 0.0) {
            return Err(Error::invalid(
                "query bucket_width and horizon must be positive",
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_defaults() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(cfg, back);
        let partial = ExperimentConfig::from_json(r#"{"master_seed": 5, "k": 5}"#).unwrap();
        assert_eq!(partial.master_seed, 5);
        assert_eq!(partial.models.len(), 1);
    }

    #[test]
    fn rejects_inconsistent_configs() {
        assert!(ExperimentConfig::from_json(r#"{"models": []}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"taus": [1.5]}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"split_fraction": 1.0}"#).is_err());
        let dup = r#"{"models": [{"name": "a"}, {"name": "a"}]}"#;
        assert!(ExperimentConfig::from_json(dup).is_err());
    }
}
