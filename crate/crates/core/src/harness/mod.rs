//! Command implementations behind the `cinerecon` binary.

pub mod config;
pub mod data;
pub mod eval;
pub mod figures;
pub mod reconstruct;
pub mod train;

use serde::{Deserialize, Serialize};

pub use config::RunConfig;
pub use eval::{cmd_eval, evaluate_columns, EvalReport, Reconstructor, ZeroFilled};
pub use reconstruct::{cmd_reconstruct, ReconOutput};
pub use train::{cmd_train, EpochRecord, TrainSummary};

use crate::error::Result;
use crate::io::{write_dataset, Manifest};
use crate::phantom::{generate_dataset_with, DatasetOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    GenData,
    Train,
    Eval,
    Reconstruct,
}

/// Generate the phantom dataset described by `cfg.data` into the data dir.
pub fn cmd_gen_data(cfg: &RunConfig) -> Result<Manifest> {
    let opts = DatasetOptions {
        accelerations: cfg.accelerations.clone(),
        center_lines: cfg.data.center_lines,
        split: cfg.data.split.map(|[a, b, c]| (a, b, c)),
    };
    let samples = generate_dataset_with(cfg.data.n_slices, &cfg.data.phantom, cfg.seed, &opts)?;
    write_dataset(&cfg.paths.data_dir, &samples, &cfg.data.phantom, cfg.seed)
}

/// Run one command and return its JSON summary.
pub fn run(command: Command, cfg: &RunConfig) -> Result<serde_json::Value> {
    let value = match command {
        Command::GenData => {
            let m = cmd_gen_data(cfg)?;
            serde_json::json!({
                "command": "gen-data",
                "data_dir": cfg.paths.data_dir,
                "slices": m.entries.len(),
                "counts": m.counts,
                "accelerations": m.accelerations,
            })
        }
        Command::Train => {
            let s = cmd_train(cfg)?;
            serde_json::json!({
                "command": "train",
                "model": s.model,
                "param_count": s.param_count,
                "trainable_param_count": s.trainable_param_count,
                "epochs_run": s.epochs_run,
                "best_epoch": s.best_epoch,
                "best_eval_ssim": s.best_eval_ssim,
                "stopped_early": s.stopped_early,
                "best_checkpoint": s.best_checkpoint,
                "last_checkpoint": s.last_checkpoint,
                "log": s.log,
            })
        }
        Command::Eval => {
            let r = cmd_eval(cfg)?;
            serde_json::json!({
                "command": "eval",
                "report": cfg.report_path("eval.json"),
                "table": cfg.report_path("eval.md"),
                "models": r.tables.full_image.models,
            })
        }
        Command::Reconstruct => {
            let outs = cmd_reconstruct(cfg)?;
            serde_json::json!({
                "command": "reconstruct",
                "outputs": outs.iter().map(|o| &o.recon).collect::<Vec<_>>(),
            })
        }
    };
    Ok(value)
}
