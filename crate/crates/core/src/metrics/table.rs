use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{MetricReport, Protocol};

/// One `(acceleration, metric)` row with a value per model column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub acceleration: usize,
    pub metric: String,
    #[serde(with = "crate::serde_float::vec")]
    pub values: Vec<f64>,
}

/// Aggregate metrics laid out as rows `AR x metric`, columns = models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub protocol: Protocol,
    pub models: Vec<String>,
    pub rows: Vec<TableRow>,
}

pub const METRIC_NAMES: [&str; 3] = ["SSIM", "NMSE", "PSNR"];

impl MetricTable {
    /// Build from mean reports: `reports[a][m]` is model `m` at
    /// acceleration `accelerations[a]`.
    pub fn from_reports(
        protocol: Protocol,
        models: Vec<String>,
        accelerations: &[usize],
        reports: &[Vec<MetricReport>],
    ) -> Self {
        let mut rows = Vec::new();
        for (&ar, per_model) in accelerations.iter().zip(reports) {
            for metric in METRIC_NAMES {
                let values = per_model
                    .iter()
                    .map(|r| match metric {
                        "SSIM" => r.ssim,
                        "NMSE" => r.nmse,
                        _ => r.psnr,
                    })
                    .collect();
                rows.push(TableRow {
                    acceleration: ar,
                    metric: metric.to_string(),
                    values,
                });
            }
        }
        MetricTable {
            protocol,
            models,
            rows,
        }
    }

    pub fn value(&self, acceleration: usize, metric: &str, model: &str) -> Option<f64> {
        let col = self.models.iter().position(|m| m == model)?;
        self.rows
            .iter()
            .find(|r| r.acceleration == acceleration && r.metric == metric)
            .map(|r| r.values[col])
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "| AR | Metric | {} |", self.models.join(" | "));
        let _ = writeln!(out, "|---|---|{}", "---|".repeat(self.models.len()));
        for row in &self.rows {
            let cells: Vec<String> = row
                .values
                .iter()
                .map(|v| match row.metric.as_str() {
                    "NMSE" => format!("{v:.4}"),
                    "PSNR" => format!("{v:.3}"),
                    _ => format!("{v:.3}"),
                })
                .collect();
            let _ = writeln!(
                out,
                "| {}x | {} | {} |",
                row.acceleration,
                row.metric,
                cells.join(" | ")
            );
        }
        out
    }
}

/// The two protocol tables emitted by an evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTables {
    pub full_image: MetricTable,
    pub challenge_crop: MetricTable,
}

impl EvalTables {
    pub fn to_markdown(&self) -> String {
        format!(
            "## Challenge crop (first 3 frames, central sixth)\n\n{}\n## Full image\n\n{}",
            self.challenge_crop.to_markdown(),
            self.full_image.to_markdown()
        )
    }
}
