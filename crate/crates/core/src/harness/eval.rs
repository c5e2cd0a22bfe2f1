//! Side-by-side evaluation of reconstructors on a dataset split.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::data::{crop_output, load_split, prepare_all, reference_slice, Prepared};
use crate::error::{ReconError, Result};
use crate::io::{write_json, Manifest};
use crate::kspace::CineSlice;
use crate::metrics::{
    challenge_eval, ChallengeEvaluation, EvalTables, MetricReport, MetricTable, Protocol,
};
use crate::model::{Checkpoint, ModelConfig, ReconModel, Refinement};
use crate::phantom::Split;

pub const EVAL_SCHEMA: &str = "cinerecon.eval/v1";

/// Anything that maps a prepared input to an image on the input grid.
pub trait Reconstructor {
    fn reconstruct(&self, p: &Prepared) -> Result<CineSlice>;
}

impl Reconstructor for ReconModel {
    fn reconstruct(&self, p: &Prepared) -> Result<CineSlice> {
        self.reconstruct_with(&p.zero_filled, &p.target)
    }
}

/// The network input itself.
pub struct ZeroFilled;

impl Reconstructor for ZeroFilled {
    fn reconstruct(&self, p: &Prepared) -> Result<CineSlice> {
        Ok(p.zero_filled.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeScore {
    pub id: String,
    pub acceleration: usize,
    pub model: String,
    pub evaluation: ChallengeEvaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    pub run_id: String,
    pub split: Split,
    pub accelerations: Vec<usize>,
    pub checkpoint: Option<PathBuf>,
    pub tables: EvalTables,
    pub volumes: Vec<VolumeScore>,
}

/// Reconstruct, crop to the acquired size and score under both protocols.
pub fn score(model: &dyn Reconstructor, p: &Prepared) -> Result<ChallengeEvaluation> {
    let out = crop_output(model.reconstruct(p)?, p.original)?;
    challenge_eval(&out, &reference_slice(p)?)
}

fn mean_report(reports: &[&MetricReport], protocol: Protocol) -> MetricReport {
    let n = reports.len() as f64;
    MetricReport {
        ssim: reports.iter().map(|r| r.ssim).sum::<f64>() / n,
        nmse: reports.iter().map(|r| r.nmse).sum::<f64>() / n,
        psnr: reports.iter().map(|r| r.psnr).sum::<f64>() / n,
        protocol,
        n_frames_evaluated: reports.iter().map(|r| r.n_frames_evaluated).sum(),
    }
}

/// Per-acceleration means for every named column.
pub fn evaluate_columns(
    columns: &[(String, &dyn Reconstructor)],
    prepared: &[BTreeMap<usize, Prepared>],
    accelerations: &[usize],
) -> Result<(EvalTables, Vec<VolumeScore>)> {
    if prepared.is_empty() {
        return Err(ReconError::MissingData("no volumes to evaluate".into()));
    }
    let mut volumes = Vec::new();
    let mut full = Vec::new();
    let mut crop = Vec::new();
    for &ar in accelerations {
        let mut full_row = Vec::new();
        let mut crop_row = Vec::new();
        for (name, model) in columns {
            let mut evals = Vec::with_capacity(prepared.len());
            for slice in prepared {
                let p = slice
                    .get(&ar)
                    .ok_or_else(|| ReconError::MissingData(format!("no {ar}x input prepared")))?;
                let evaluation = score(*model, p)?;
                evals.push(evaluation.clone());
                volumes.push(VolumeScore {
                    id: p.id.clone(),
                    acceleration: ar,
                    model: name.clone(),
                    evaluation,
                });
            }
            full_row.push(mean_report(
                &evals.iter().map(|e| &e.full_image).collect::<Vec<_>>(),
                Protocol::FullImage,
            ));
            crop_row.push(mean_report(
                &evals.iter().map(|e| &e.challenge_crop).collect::<Vec<_>>(),
                Protocol::ChallengeCrop,
            ));
        }
        full.push(full_row);
        crop.push(crop_row);
    }
    let names: Vec<String> = columns.iter().map(|(n, _)| n.clone()).collect();
    let tables = EvalTables {
        full_image: MetricTable::from_reports(
            Protocol::FullImage,
            names.clone(),
            accelerations,
            &full,
        ),
        challenge_crop: MetricTable::from_reports(
            Protocol::ChallengeCrop,
            names,
            accelerations,
            &crop,
        ),
    };
    Ok((tables, volumes))
}

/// Default column name for a model configuration.
pub fn model_label(config: &ModelConfig) -> String {
    match config {
        ModelConfig::Unet(_) => "unet".into(),
        ModelConfig::Crnn(c) => {
            let base = match c.refinement {
                Refinement::None => "crnn",
                Refinement::Sequential => "crnn_sequential",
                Refinement::EndToEnd => "crnn_end_to_end",
            };
            if c.weight_sharing {
                format!("{base}_shared")
            } else {
                base.to_string()
            }
        }
    }
}

pub fn load_model(path: &std::path::Path) -> Result<ReconModel> {
    if !path.exists() {
        return Err(ReconError::MissingData(format!(
            "checkpoint {} not found",
            path.display()
        )));
    }
    Checkpoint::load(path)?.into_model()
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    let manifest = Manifest::load(&cfg.paths.data_dir)?;
    let split = cfg.eval.split.unwrap_or(Split::Test);
    let checkpoint = cfg
        .eval
        .checkpoint
        .clone()
        .unwrap_or_else(|| cfg.checkpoint_path("best.json"));
    let model = load_model(&checkpoint)?;
    let unet = cfg
        .eval
        .unet_checkpoint
        .as_deref()
        .map(load_model)
        .transpose()?;
    if let Some(u) = &unet {
        if !matches!(u.config(), ModelConfig::Unet(_)) {
            return Err(ReconError::Checkpoint(
                "eval.unet_checkpoint does not hold a U-Net".into(),
            ));
        }
    }
    let slices = load_split(&cfg.paths.data_dir, &manifest, split)?;
    if slices.is_empty() {
        return Err(ReconError::MissingData(format!(
            "split '{}' is empty",
            split.as_str()
        )));
    }
    let prepared = prepare_all(&slices, &cfg.accelerations, cfg.canvas())?;

    let label = cfg
        .eval
        .label
        .clone()
        .unwrap_or_else(|| model_label(model.config()));
    let mut columns: Vec<(String, &dyn Reconstructor)> = vec![("zero_filled".into(), &ZeroFilled)];
    if let Some(u) = &unet {
        columns.push(("unet".into(), u));
    }
    columns.push((label, &model));
    let (tables, volumes) = evaluate_columns(&columns, &prepared, &cfg.accelerations)?;

    let report = EvalReport {
        schema: EVAL_SCHEMA.into(),
        run_id: cfg.run_id.clone(),
        split,
        accelerations: cfg.accelerations.clone(),
        checkpoint: Some(checkpoint),
        tables,
        volumes,
    };
    fs::create_dir_all(&cfg.paths.report_dir)
        .map_err(|e| ReconError::io(&cfg.paths.report_dir, e))?;
    write_json(&cfg.report_path("eval.json"), &report)?;
    let md = cfg.report_path("eval.md");
    fs::write(&md, report.tables.to_markdown()).map_err(|e| ReconError::io(&md, e))?;
    Ok(report)
}
