use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodEstimate {
    pub method: String,
    pub estimate: f64,
    pub ae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub variant: String,
    pub offset: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub events: usize,
    pub queries: usize,
    pub gt_ndcg: f64,
    pub estimates: Vec<MethodEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMae {
    pub method: String,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub name: String,
    pub model_seed: u64,
    pub final_train_loss: f64,
    pub simulated_label_mean: f64,
    pub simulated_label_std: f64,
    pub evaluator_train_rmse: f64,
    pub variants: Vec<VariantRow>,
    pub mae: Vec<MethodMae>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub model: String,
    pub gt_mean: f64,
    pub gt_rank: usize,
    pub estimated_mean: f64,
    pub estimated_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub method: String,
    pub rows: Vec<RankRow>,
    pub consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub master: u64,
    pub data: Option<u64>,
    pub models: Vec<u64>,
    pub simulation: u64,
    pub reference: u64,
    pub evaluator: u64,
    pub baseline: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub version: u32,
    pub crate_version: String,
    pub seeds: SeedRecord,
    pub train_events: usize,
    pub test_events: usize,
    pub split_time: f64,
    pub models: Vec<ModelReport>,
    pub rank: RankTable,
}

impl EvaluationReport {
    pub fn primary(&self) -> &ModelReport {
        &self.models[0]
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text)?;
        if r.version != REPORT_VERSION {
            return Err(Error::Version {
                found: r.version,
                expected: REPORT_VERSION,
            });
        }
        Ok(r)
    }
}

impl ModelReport {
    pub fn mae_of(&self, method: &str) -> Option<f64> {
        self.mae.iter().find(|m| m.method == method).map(|m| m.mae)
    }

    pub fn methods(&self) -> Vec<String> {
        self.variants
            .first()
            .map(|v| v.estimates.iter().map(|e| e.method.clone()).collect())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            "markdown" | "md" => Ok(Self::Markdown),
            other => Err(Error::invalid(format!("unknown report format `{other}`"))),
        }
    }
}

fn num(x: f64) -> String {
    format!("{x:.6}")
}

pub fn emit_report(report: &EvaluationReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(report)? + "\n"),
        ReportFormat::Csv => {
            let mut out = String::from("model,variant,method,gt_ndcg,estimate,ae\n");
            for m in &report.models {
                for v in &m.variants {
                    for e in &v.estimates {
                        let _ = writeln!(
                            out,
                            "{},{},{},{},{},{}",
                            m.name,
                            v.variant,
                            e.method,
                            num(v.gt_ndcg),
                            num(e.estimate),
                            num(e.ae)
                        );
                    }
                }
            }
            Ok(out)
        }
        ReportFormat::Markdown => {
            let mut out = String::new();
            for m in &report.models {
                let _ = writeln!(out, "### AE for `{}`\n", m.name);
                let mut header = String::from("| Method |");
                let mut rule = String::from("|---|");
                for v in &m.variants {
                    let _ = write!(header, " {} |", v.variant);
                    rule.push_str("---|");
                }
                header.push_str(" Avg. |");
                rule.push_str("---|");
                let _ = writeln!(out, "{header}\n{rule}");
                let mut gt = String::from("| GT NDCG |");
                for v in &m.variants {
                    let _ = write!(gt, " {:.4} |", v.gt_ndcg);
                }
                let avg_gt =
                    m.variants.iter().map(|v| v.gt_ndcg).sum::<f64>() / m.variants.len() as f64;
                let _ = writeln!(out, "{gt} {avg_gt:.4} |");
                for (i, method) in m.methods().iter().enumerate() {
                    let mut row = format!("| {method} |");
                    for v in &m.variants {
                        let _ = write!(row, " {:.4} |", v.estimates[i].ae);
                    }
                    let _ = writeln!(out, "{row} {:.4} |", m.mae[i].mae);
                }
                out.push('\n');
            }
            let _ = writeln!(out, "### Ranking by `{}`\n", report.rank.method);
            out.push_str("| Model | GT mean | GT rank | Estimated mean | Estimated rank |\n|---|---|---|---|---|\n");
            for r in &report.rank.rows {
                let _ = writeln!(
                    out,
                    "| {} | {:.4} | {} | {:.4} | {} |",
                    r.model, r.gt_mean, r.gt_rank, r.estimated_mean, r.estimated_rank
                );
            }
            Ok(out)
        }
    }
}

/// A one-parameter sweep: one MAE per setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub parameter: String,
    pub method: String,
    pub rows: Vec<AblationRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub setting: String,
    pub mae: f64,
}

impl AblationTable {
    pub fn mae_of(&self, setting: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.setting == setting)
            .map(|r| r.mae)
    }
}

pub fn emit_ablation(table: &AblationTable, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(table)? + "\n"),
        ReportFormat::Csv => {
            let mut out = format!("{},mae\n", table.parameter);
            for r in &table.rows {
                let _ = writeln!(out, "{},{}", r.setting, num(r.mae));
            }
            Ok(out)
        }
        ReportFormat::Markdown => {
            let mut out = format!("| {} | MAE |\n|---|---|\n", table.parameter);
            for r in &table.rows {
                let _ = writeln!(out, "| {} | {:.4} |", r.setting, r.mae);
            }
            Ok(out)
        }
    }
}
