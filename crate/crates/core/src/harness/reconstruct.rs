//! Reconstruct stored k-space files to images, with error maps when a
//! reference is supplied.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::data::{crop_output, prepare_input};
use super::eval::{load_model, model_label};
use super::figures::{write_error_png, write_magnitude_png, ColorScale};
use crate::error::{ReconError, Result};
use crate::io::{read_image, read_kspace, write_image, write_json};
use crate::kspace::CineSlice;
use crate::metrics::{challenge_eval, ChallengeEvaluation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorArtifacts {
    pub reference: PathBuf,
    pub map_png: PathBuf,
    pub scale: ColorScale,
    pub max_abs_error: f64,
    pub mean_abs_error: f64,
    /// Absent when the sequence is too short for the challenge protocol.
    pub metrics: Option<ChallengeEvaluation>,
}

/// Everything written for one input; also stored as `<prefix>_figure.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconOutput {
    pub input: PathBuf,
    pub model: String,
    pub recon: PathBuf,
    pub recon_png: PathBuf,
    pub recon_scale: ColorScale,
    /// `(T, H, W)` of the written reconstruction.
    pub shape: [usize; 3],
    pub error: Option<ErrorArtifacts>,
}

fn output_stem(input: &Path) -> String {
    let stem = input
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("input");
    match input
        .parent()
        .and_then(|p| p.file_name())
        .and_then(|s| s.to_str())
    {
        Some(parent) if !parent.is_empty() => format!("{parent}_{stem}"),
        _ => stem.to_string(),
    }
}

/// Without a checkpoint the zero-filled image is written.
pub fn cmd_reconstruct(cfg: &RunConfig) -> Result<Vec<ReconOutput>> {
    let rc = &cfg.reconstruct;
    if rc.inputs.is_empty() {
        return Err(ReconError::Config("reconstruct.inputs is empty".into()));
    }
    if rc.references.len() > rc.inputs.len() {
        return Err(ReconError::Config("more references than inputs".into()));
    }
    let model = rc.checkpoint.as_deref().map(load_model).transpose()?;
    let label = model
        .as_ref()
        .map_or("zero_filled".to_string(), |m| model_label(m.config()));
    fs::create_dir_all(&cfg.paths.report_dir)
        .map_err(|e| ReconError::io(&cfg.paths.report_dir, e))?;

    let mut outputs = Vec::new();
    for (i, input) in rc.inputs.iter().enumerate() {
        let (k, meta) = read_kspace(input)?;
        let (zf, target) = prepare_input(&k, cfg.canvas())?;
        let out = match &model {
            Some(m) => m.reconstruct_with(&zf, &target)?,
            None => zf,
        };
        let out = crop_output(out, meta.original_size)?;
        let recon_mag = out.magnitude();

        let reference = rc
            .references
            .get(i)
            .map(|r| read_image(r).map(|(img, _)| (r, img)))
            .transpose()?;
        let prefix = format!("{}_{}", cfg.run_id, output_stem(input));
        let path = |suffix: &str| cfg.paths.report_dir.join(format!("{prefix}_{suffix}"));

        let recon_path = path("recon.npz");
        write_image(&recon_path, &out, meta.seed)?;
        let vmax = match &reference {
            Some((_, r)) => r.magnitude().iter().cloned().fold(0.0, f64::max),
            None => recon_mag.iter().cloned().fold(0.0, f64::max),
        };
        let recon_png = path("recon.png");
        let recon_scale = write_magnitude_png(&recon_png, &recon_mag, vmax)?;

        let error = match reference {
            Some((ref_path, r)) => Some(error_artifacts(&out, ref_path, &r, &path("error.png"))?),
            None => None,
        };
        let (t, h, w) = out.dims();
        let record = ReconOutput {
            input: input.clone(),
            model: label.clone(),
            recon: recon_path,
            recon_png,
            recon_scale,
            shape: [t, h, w],
            error,
        };
        write_json(&path("figure.json"), &record)?;
        outputs.push(record);
    }
    Ok(outputs)
}

fn error_artifacts(
    out: &CineSlice,
    ref_path: &Path,
    reference: &CineSlice,
    png: &Path,
) -> Result<ErrorArtifacts> {
    if reference.dims() != out.dims() {
        let (a, b, c) = reference.dims();
        let (p, q, r) = out.dims();
        return Err(ReconError::shape(&[a, b, c], &[p, q, r]));
    }
    let ref_mag = reference.magnitude();
    let err = (&out.magnitude() - &ref_mag).mapv(f64::abs);
    let floor = 1e-9 * ref_mag.iter().cloned().fold(0.0, f64::max);
    let scale = write_error_png(png, &err, floor)?;
    let max_abs_error = err.iter().cloned().fold(0.0, f64::max);
    let metrics = (out.dims().0 >= 3)
        .then(|| challenge_eval(out, reference))
        .transpose()?;
    Ok(ErrorArtifacts {
        reference: ref_path.to_path_buf(),
        map_png: png.to_path_buf(),
        scale,
        max_abs_error,
        mean_abs_error: err.mean().unwrap_or(0.0),
        metrics,
    })
}
