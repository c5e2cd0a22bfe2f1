//! Mixed-acceleration training with per-epoch evaluation, best/last
//! checkpoints, early stopping and resume.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{RunConfig, TrainTarget};
use super::data::{crop_output, load_split, prepare_all, reference_slice, Prepared};
use super::eval::{load_model, model_label};
use crate::error::{ReconError, Result};
use crate::io::Manifest;
use crate::losses::LossRouting;
use crate::metrics::challenge_eval;
use crate::model::{Checkpoint, ModelConfig, ReconModel, Refinement};
use crate::nn::{clip_grad_norm, Adam, Tensor};
use crate::phantom::{derive_seed, Split};

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub grad_norm: f64,
    pub eval_loss: f64,
    pub eval_ssim: f64,
    pub eval_nmse: f64,
    #[serde(with = "crate::serde_float")]
    pub eval_psnr: f64,
    pub eval_ssim_per_acceleration: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrainState {
    epochs_done: usize,
    best_eval_ssim: Option<f64>,
    best_epoch: usize,
    epochs_since_best: usize,
    history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub run_id: String,
    pub model: String,
    pub param_count: usize,
    pub trainable_param_count: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_eval_ssim: Option<f64>,
    pub stopped_early: bool,
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
    pub log: PathBuf,
    pub history: Vec<EpochRecord>,
}

/// The model to train and the name prefix of its trainable parameters.
pub fn build_model(cfg: &RunConfig) -> Result<(ReconModel, Option<&'static str>)> {
    let seed = derive_seed(cfg.seed, 0x1417);
    match cfg.train.target {
        TrainTarget::Unet => Ok((ReconModel::unet(cfg.unet.clone(), seed)?, None)),
        TrainTarget::Crnn => {
            let mut model = ReconModel::crnn(cfg.model.clone(), seed)?;
            match (cfg.model.refinement, &cfg.train.crnn_checkpoint) {
                (Refinement::Sequential, None) => Err(ReconError::Config(
                    "sequential refinement needs a trained CRNN: run stage-1 training with model.refinement=none, \
                     then set train.crnn_checkpoint to its best checkpoint"
                        .into(),
                )),
                (Refinement::Sequential, Some(path)) => {
                    let stage1 = load_model(path)?;
                    if !matches!(stage1.config(), ModelConfig::Crnn(_)) {
                        return Err(ReconError::Checkpoint(format!("{} is not a CRNN checkpoint", path.display())));
                    }
                    model.copy_params_from(&stage1, "crnn.")?;
                    Ok((model, Some("refine.")))
                }
                (_, Some(path)) => {
                    let stage1 = load_model(path)?;
                    model.copy_params_from(&stage1, "crnn.")?;
                    Ok((model, None))
                }
                (_, None) => Ok((model, None)),
            }
        }
    }
}

fn accumulate(total: &mut [Option<Tensor>], grads: Vec<Option<Tensor>>) {
    for (acc, g) in total.iter_mut().zip(grads) {
        match (acc.as_mut(), g) {
            (Some(a), Some(g)) => a.add_assign(&g),
            (None, Some(g)) => *acc = Some(g),
            _ => {}
        }
    }
}

/// Mean loss and metrics of `model` over every prepared eval input.
/// Loss, SSIM, NMSE, PSNR and SSIM per acceleration.
type EpochScores = (f64, f64, f64, f64, BTreeMap<usize, f64>);

fn evaluate_epoch(
    model: &ReconModel,
    prepared: &[BTreeMap<usize, Prepared>],
    loss: &LossRouting,
) -> Result<EpochScores> {
    let (mut l, mut s, mut n, mut p, mut count) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut per_ar: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for slice in prepared {
        for (&ar, prep) in slice {
            let (out, inner) = model.reconstruct_stages(&prep.zero_filled, &prep.target)?;
            let (v, iv) = loss.evaluate(
                out.data(),
                inner.as_ref().map(|c| c.data()),
                &prep.reference,
            )?;
            l += v.total + iv.map_or(0.0, |iv| iv.total);
            let e = challenge_eval(&crop_output(out, prep.original)?, &reference_slice(prep)?)?
                .full_image;
            s += e.ssim;
            n += e.nmse;
            p += e.psnr;
            count += 1.0;
            let slot = per_ar.entry(ar).or_default();
            slot.0 += e.ssim;
            slot.1 += 1.0;
        }
    }
    let per_ar = per_ar.into_iter().map(|(ar, (s, c))| (ar, s / c)).collect();
    Ok((l / count, s / count, n / count, p / count, per_ar))
}

fn write_log(path: &PathBuf, history: &[EpochRecord]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| ReconError::io(path, e))?;
    for rec in history {
        let line =
            serde_json::to_string(rec).map_err(|e| ReconError::format(path, e.to_string()))?;
        writeln!(f, "{line}").map_err(|e| ReconError::io(path, e))?;
    }
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    let manifest = Manifest::load(&cfg.paths.data_dir)?;
    let refinement = match cfg.train.target {
        TrainTarget::Crnn => cfg.model.refinement,
        TrainTarget::Unet => Refinement::None,
    };
    let loss = cfg.loss.routing(refinement)?;
    let (mut model, trainable_prefix) = build_model(cfg)?;
    let trainable = |name: &str| trainable_prefix.is_none_or(|p| name.starts_with(p));
    let trainable_count = model
        .params()
        .iter()
        .filter(|p| trainable(&p.name))
        .map(|p| p.value.data().len())
        .sum();

    let train_slices = load_split(&cfg.paths.data_dir, &manifest, Split::Train)?;
    let eval_slices = load_split(&cfg.paths.data_dir, &manifest, Split::Eval)?;
    if train_slices.is_empty() || eval_slices.is_empty() {
        return Err(ReconError::MissingData(
            "training needs non-empty train and eval splits".into(),
        ));
    }
    let train_ars = match cfg.train.finetune_acceleration {
        Some(a) => vec![a],
        None => cfg.accelerations.clone(),
    };
    let train_data = prepare_all(&train_slices, &train_ars, cfg.canvas())?;
    let eval_data = prepare_all(&eval_slices, &cfg.accelerations, cfg.canvas())?;

    for dir in [&cfg.paths.checkpoint_dir, &cfg.paths.report_dir] {
        fs::create_dir_all(dir).map_err(|e| ReconError::io(dir, e))?;
    }
    let best_path = cfg.checkpoint_path("best.json");
    let last_path = cfg.checkpoint_path("last.json");
    let log_path = cfg.report_path("train_log.jsonl");

    let mut adam = Adam::new(cfg.optimizer.lr, model.params().len());
    let mut state = TrainState {
        epochs_done: 0,
        best_eval_ssim: None,
        best_epoch: 0,
        epochs_since_best: 0,
        history: Vec::new(),
    };
    if cfg.train.resume && last_path.exists() {
        let ckpt = Checkpoint::load(&last_path)?;
        if &ckpt.model != model.config() {
            return Err(ReconError::Checkpoint(format!(
                "{} was written for a different model configuration",
                last_path.display()
            )));
        }
        state = serde_json::from_value(ckpt.state.clone()).map_err(|e| {
            ReconError::Checkpoint(format!("{}: bad training state: {e}", last_path.display()))
        })?;
        adam = ckpt.optimizer.clone().ok_or_else(|| {
            ReconError::Checkpoint(format!(
                "{} has no optimizer state to resume from",
                last_path.display()
            ))
        })?;
        model = ckpt.into_model()?;
        log::info!("resuming {} after epoch {}", cfg.run_id, state.epochs_done);
    }

    let batch = cfg.optimizer.batch_size;
    let mut stopped_early = false;
    while state.epochs_done < cfg.optimizer.epochs {
        if state.best_eval_ssim.is_some() && state.epochs_since_best >= cfg.optimizer.patience {
            stopped_early = true;
            break;
        }
        let epoch = state.epochs_done + 1;
        adam.lr = cfg.optimizer.lr_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x7EA1_0000 + epoch as u64));
        let mut order: Vec<usize> = (0..train_data.len()).collect();
        order.shuffle(&mut rng);
        let picks: Vec<(usize, usize)> = order
            .into_iter()
            .map(|i| (i, train_ars[rng.random_range(0..train_ars.len())]))
            .collect();

        let (mut loss_sum, mut norm_sum, mut steps) = (0.0, 0.0, 0);
        for chunk in picks.chunks(batch) {
            let mut grads: Vec<Option<Tensor>> = vec![None; model.params().len()];
            for &(i, ar) in chunk {
                let p = &train_data[i][&ar];
                let (value, g) = model.routed_loss_and_grads(
                    &p.zero_filled,
                    &p.target,
                    &p.reference,
                    &loss,
                    trainable,
                )?;
                if !value.total.is_finite() {
                    return Err(ReconError::validation(format!(
                        "non-finite training loss at epoch {epoch}"
                    )));
                }
                loss_sum += value.total;
                accumulate(&mut grads, g);
            }
            let inv = 1.0 / chunk.len() as f64;
            grads.iter_mut().flatten().for_each(|g| g.scale(inv));
            norm_sum += clip_grad_norm(&mut grads, cfg.optimizer.grad_clip);
            adam.step(model.params_mut(), &grads);
            steps += 1;
        }

        let (eval_loss, eval_ssim, eval_nmse, eval_psnr, per_ar) =
            evaluate_epoch(&model, &eval_data, &loss)?;
        let record = EpochRecord {
            epoch,
            steps,
            train_loss: loss_sum / picks.len() as f64,
            grad_norm: norm_sum / steps as f64,
            eval_loss,
            eval_ssim,
            eval_nmse,
            eval_psnr,
            eval_ssim_per_acceleration: per_ar,
        };
        log::info!(
            "epoch {epoch}: train {:.5} eval {:.5} ssim {:.4}",
            record.train_loss,
            eval_loss,
            eval_ssim
        );
        state.history.push(record);
        state.epochs_done = epoch;
        if state.best_eval_ssim.is_none_or(|b| eval_ssim > b) {
            state.best_eval_ssim = Some(eval_ssim);
            state.best_epoch = epoch;
            state.epochs_since_best = 0;
            Checkpoint::new(&model).save(&best_path)?;
        } else {
            state.epochs_since_best += 1;
        }
        let mut last = Checkpoint::new(&model);
        last.optimizer = Some(adam.clone());
        last.state =
            serde_json::to_value(&state).map_err(|e| ReconError::Checkpoint(e.to_string()))?;
        last.save(&last_path)?;
        write_log(&log_path, &state.history)?;
    }

    Ok(TrainSummary {
        run_id: cfg.run_id.clone(),
        model: model_label(model.config()),
        param_count: model.param_count(),
        trainable_param_count: trainable_count,
        epochs_run: state.epochs_done,
        best_epoch: state.best_epoch,
        best_eval_ssim: state.best_eval_ssim,
        stopped_early,
        best_checkpoint: best_path,
        last_checkpoint: last_path,
        log: log_path,
        history: state.history,
    })
}
