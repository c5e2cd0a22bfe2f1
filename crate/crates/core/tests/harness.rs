use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use cinerecon::harness::data::{prepare_all, Prepared};
use cinerecon::harness::eval::load_model;
use cinerecon::harness::{
    cmd_eval, cmd_gen_data, cmd_reconstruct, cmd_train, evaluate_columns, Reconstructor, RunConfig,
    ZeroFilled,
};
use cinerecon::io::{read_image, read_json, write_image, write_kspace, Manifest};
use cinerecon::kspace::{
    default_center_lines, forward_operator, fully_sampled, make_mask, CineSlice,
};
use cinerecon::metrics::{EvalTables, MetricTable};
use cinerecon::model::{Checkpoint, ReconModel, ReconModelConfig};
use cinerecon::phantom::{generate_cine_phantom, PhantomSpec, Split};
use cinerecon::{ReconError, Result};

fn tiny_config(root: &Path) -> RunConfig {
    let mut overrides = vec![
        "run_id=tiny".to_string(),
        "seed=11".into(),
        "data.n_slices=5".into(),
        "data.split=[2, 2, 1]".into(),
        "data.phantom.frames=4".into(),
        "data.phantom.height=32".into(),
        "data.phantom.width=32".into(),
        "model.cascades=1".into(),
        "model.channels=3".into(),
        "model.extra_bcrnn=false".into(),
        "model.refine.channels=3".into(),
        "model.refine.blocks=1".into(),
        "unet.cascades=1".into(),
        "unet.channels=3".into(),
        "unet.levels=1".into(),
        "optimizer.epochs=2".into(),
        "optimizer.lr=1e-3".into(),
    ];
    for (k, d) in [
        ("data_dir", "data"),
        ("checkpoint_dir", "ckpt"),
        ("report_dir", "reports"),
    ] {
        overrides.push(format!("paths.{k}=\"{}\"", root.join(d).display()));
    }
    RunConfig::load(None, &overrides).unwrap()
}

fn with(cfg: &RunConfig, overrides: &[&str]) -> RunConfig {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    std::fs::write(&path, toml::to_string(cfg).unwrap()).unwrap();
    RunConfig::load(
        Some(&path),
        &overrides.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
    )
    .unwrap()
}

struct Oracle;

impl Reconstructor for Oracle {
    fn reconstruct(&self, p: &Prepared) -> Result<CineSlice> {
        CineSlice::new(p.reference.clone())
    }
}

fn test_inputs(cfg: &RunConfig) -> Vec<BTreeMap<usize, Prepared>> {
    let manifest = Manifest::load(&cfg.paths.data_dir).unwrap();
    let slices =
        cinerecon::harness::data::load_split(&cfg.paths.data_dir, &manifest, Split::Test).unwrap();
    prepare_all(&slices, &cfg.accelerations, cfg.canvas()).unwrap()
}

#[test]
fn oracle_model_scores_ssim_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    cmd_gen_data(&cfg).unwrap();
    let inputs = test_inputs(&cfg);
    let (tables, _) =
        evaluate_columns(&[("oracle".into(), &Oracle)], &inputs, &cfg.accelerations).unwrap();
    for table in [&tables.full_image, &tables.challenge_crop] {
        for &ar in &cfg.accelerations {
            assert_eq!(table.value(ar, "SSIM", "oracle"), Some(1.0));
            assert_eq!(table.value(ar, "NMSE", "oracle"), Some(0.0));
            assert_eq!(table.value(ar, "PSNR", "oracle"), Some(f64::INFINITY));
        }
    }
    let text = serde_json::to_string(&tables).unwrap();
    assert_eq!(serde_json::from_str::<EvalTables>(&text).unwrap(), tables);
}

#[test]
fn zero_filled_degrades_with_acceleration() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with(
        &tiny_config(dir.path()),
        &[
            "data.n_slices=12",
            "data.split=[1, 1, 10]",
            "data.phantom.width=48",
        ],
    );
    cmd_gen_data(&cfg).unwrap();
    let (tables, _) = evaluate_columns(
        &[("zf".into(), &ZeroFilled)],
        &test_inputs(&cfg),
        &[4, 8, 10],
    )
    .unwrap();
    let t = &tables.full_image;
    let s = |ar| t.value(ar, "SSIM", "zf").unwrap();
    let n = |ar| t.value(ar, "NMSE", "zf").unwrap();
    assert!(s(4) > s(8) && s(8) > s(10), "{}", t.to_markdown());
    assert!(n(4) < n(8) && n(4) < n(10), "{}", t.to_markdown());
}

#[test]
fn metric_table_roundtrips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    cmd_gen_data(&cfg).unwrap();
    let (tables, _) = evaluate_columns(
        &[("zf".into(), &ZeroFilled)],
        &test_inputs(&cfg),
        &cfg.accelerations,
    )
    .unwrap();
    let text = serde_json::to_string_pretty(&tables.challenge_crop).unwrap();
    let back: MetricTable = serde_json::from_str(&text).unwrap();
    for (a, b) in back.rows.iter().zip(&tables.challenge_crop.rows) {
        for (x, y) in a.values.iter().zip(&b.values) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
    assert_eq!(back, tables.challenge_crop);
}

#[test]
fn train_eval_and_checkpoint_reload_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    cmd_gen_data(&cfg).unwrap();
    let summary = cmd_train(&cfg).unwrap();
    assert_eq!(summary.epochs_run, 2);
    assert_eq!(summary.history.len(), 2);
    let log = std::fs::read_to_string(&summary.log).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert!(summary
        .best_checkpoint
        .starts_with(&cfg.paths.checkpoint_dir));
    assert!(summary
        .log
        .file_name()
        .unwrap()
        .to_str()
        .unwrap()
        .starts_with("tiny_"));

    let report = cmd_eval(&cfg).unwrap();
    assert_eq!(
        report.tables.full_image.models,
        vec!["zero_filled".to_string(), "crnn".into()]
    );
    assert!(cfg.report_path("eval.md").exists());
    let stored: cinerecon::harness::EvalReport = read_json(&cfg.report_path("eval.json")).unwrap();
    assert_eq!(stored, report);

    let model = load_model(&summary.best_checkpoint).unwrap();
    let resaved = dir.path().join("copy.json");
    Checkpoint::new(&model).save(&resaved).unwrap();
    let again = with(
        &cfg,
        &[&format!("eval.checkpoint=\"{}\"", resaved.display())],
    );
    let report2 = cmd_eval(&again).unwrap();
    assert_eq!(report2.tables, report.tables);
}

#[test]
fn seeded_runs_repeat_exactly() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        cmd_gen_data(&cfg).unwrap();
        let s = cmd_train(&cfg).unwrap();
        (s.history, cmd_eval(&cfg).unwrap().tables)
    };
    assert_eq!(run(), run());
}

#[test]
fn resume_continues_where_training_stopped() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with(&tiny_config(dir.path()), &["optimizer.epochs=3"]);
    cmd_gen_data(&cfg).unwrap();
    let straight = cmd_train(&cfg).unwrap();
    let straight_params = load_model(&cfg.checkpoint_path("last.json")).unwrap();

    let first = with(&cfg, &["optimizer.epochs=1", "run_id=split"]);
    cmd_train(&first).unwrap();
    let resumed = cmd_train(&with(&first, &["optimizer.epochs=3", "train.resume=true"])).unwrap();
    assert_eq!(resumed.history, straight.history);
    assert_eq!(
        load_model(&first.checkpoint_path("last.json")).unwrap(),
        straight_params
    );
}

#[test]
fn sequential_refinement_trains_only_the_refiner() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with(&tiny_config(dir.path()), &["optimizer.epochs=1"]);
    cmd_gen_data(&cfg).unwrap();
    let stage1 = cmd_train(&cfg).unwrap();
    let seq = with(
        &cfg,
        &[
            "run_id=seq",
            "model.refinement=sequential",
            &format!(
                "train.crnn_checkpoint=\"{}\"",
                stage1.best_checkpoint.display()
            ),
        ],
    );
    let summary = cmd_train(&seq).unwrap();
    assert!(summary.trainable_param_count < summary.param_count);
    let before = load_model(&stage1.best_checkpoint).unwrap();
    let after = load_model(&summary.last_checkpoint).unwrap();
    for p in before.params().iter() {
        let idx = after.params().index_of(&p.name).unwrap();
        assert_eq!(after.params().get(idx), &p.value, "{}", p.name);
    }
}

#[test]
fn sequential_without_stage_one_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with(&tiny_config(dir.path()), &["model.refinement=sequential"]);
    cmd_gen_data(&cfg).unwrap();
    match cmd_train(&cfg) {
        Err(ReconError::Config(msg)) => assert!(msg.contains("stage-1")),
        other => panic!("expected config error, got {other:?}"),
    }
}

#[test]
fn commands_need_generated_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    assert!(matches!(cmd_train(&cfg), Err(ReconError::MissingData(_))));
    assert!(matches!(cmd_eval(&cfg), Err(ReconError::MissingData(_))));
}

#[test]
fn foreign_checkpoint_schema_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    cmd_gen_data(&cfg).unwrap();
    let path = dir.path().join("old.json");
    let model = ReconModel::crnn(cfg.model.clone(), 0).unwrap();
    let mut value = serde_json::to_value(Checkpoint::new(&model)).unwrap();
    value["schema"] = "cinerecon.checkpoint/v0".into();
    std::fs::write(&path, value.to_string()).unwrap();
    let cfg = with(&cfg, &[&format!("eval.checkpoint=\"{}\"", path.display())]);
    assert!(matches!(cmd_eval(&cfg), Err(ReconError::Checkpoint(_))));
}

fn write_inputs(dir: &Path, spec: &PhantomSpec) -> (PathBuf, PathBuf, CineSlice) {
    let image = generate_cine_phantom(spec).unwrap();
    let k = dir.join("full/kspace.npz");
    let r = dir.join("full/image.npz");
    std::fs::create_dir_all(dir.join("full")).unwrap();
    write_kspace(
        &k,
        &fully_sampled(&image),
        image.original_size(),
        Some(spec.seed),
    )
    .unwrap();
    write_image(&r, &image, Some(spec.seed)).unwrap();
    (k, r, image)
}

#[test]
fn reconstructing_fully_sampled_input_returns_it_with_a_black_error_map() {
    let dir = tempfile::tempdir().unwrap();
    let spec = PhantomSpec {
        frames: 3,
        ..PhantomSpec::default()
    };
    let (k, r, image) = write_inputs(dir.path(), &spec);
    let base = tiny_config(dir.path());
    let cfg = with(
        &base,
        &[
            &format!("reconstruct.inputs=[\"{}\"]", k.display()),
            &format!("reconstruct.references=[\"{}\"]", r.display()),
        ],
    );
    let out = cmd_reconstruct(&cfg).unwrap();
    let (recon, _) = read_image(&out[0].recon).unwrap();
    let err = recon
        .data()
        .iter()
        .zip(image.data())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    assert!(err < 1e-12, "{err}");
    let e = out[0].error.as_ref().unwrap();
    assert!(e.max_abs_error < 1e-12);
    let png = image::open(&e.map_png).unwrap().to_rgb8();
    assert!(png.pixels().all(|p| p.0 == [0, 0, 0]));
    assert_eq!(png.dimensions(), (3 * 48, 32));
    assert!(out[0].recon_png.exists());
    let figure: serde_json::Value = read_json(&cfg.report_path("full_kspace_figure.json")).unwrap();
    assert_eq!(figure["error"]["scale"]["vmin"], 0.0);

    // A model with near-hard data consistency keeps fully sampled data.
    let model_cfg = ReconModelConfig {
        dc_log_lambda_init: 30.0,
        ..cfg.model.clone()
    };
    let ckpt = dir.path().join("hard_dc.json");
    Checkpoint::new(&ReconModel::crnn(model_cfg, 3).unwrap())
        .save(&ckpt)
        .unwrap();
    let cfg = with(
        &cfg,
        &[&format!("reconstruct.checkpoint=\"{}\"", ckpt.display())],
    );
    let out = cmd_reconstruct(&cfg).unwrap();
    let (recon, _) = read_image(&out[0].recon).unwrap();
    let err = recon
        .data()
        .iter()
        .zip(image.data())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    assert!(err < 1e-6, "{err}");
}

#[test]
fn canvas_outputs_are_cropped_to_the_acquired_size() {
    let dir = tempfile::tempdir().unwrap();
    let spec = PhantomSpec {
        frames: 3,
        height: 204,
        width: 448,
        ..PhantomSpec::default()
    };
    let image = generate_cine_phantom(&spec).unwrap();
    let mask = make_mask(448, 8, default_center_lines(448), 5).unwrap();
    let k = dir.path().join("s/kspace_x8.npz");
    std::fs::create_dir_all(dir.path().join("s")).unwrap();
    write_kspace(
        &k,
        &forward_operator(&image, &mask).unwrap(),
        (204, 448),
        None,
    )
    .unwrap();
    let ckpt = dir.path().join("m.json");
    let base = tiny_config(dir.path());
    let model_cfg = ReconModelConfig {
        refinement: cinerecon::model::Refinement::EndToEnd,
        ..base.model.clone()
    };
    Checkpoint::new(&ReconModel::crnn(model_cfg.clone(), 1).unwrap())
        .save(&ckpt)
        .unwrap();
    let cfg = with(
        &base,
        &[
            "data.canvas=[256, 512]",
            "model.refinement=end_to_end",
            &format!("reconstruct.inputs=[\"{}\"]", k.display()),
            &format!("reconstruct.checkpoint=\"{}\"", ckpt.display()),
        ],
    );
    let out = cmd_reconstruct(&cfg).unwrap();
    assert_eq!(out[0].shape, [3, 204, 448]);
    let (recon, meta) = read_image(&out[0].recon).unwrap();
    assert_eq!(recon.dims(), (3, 204, 448));
    assert_eq!(meta.shape, [3, 204, 448]);
    let png = image::open(&out[0].recon_png).unwrap();
    assert_eq!((png.width(), png.height()), (3 * 448, 204));
}

#[test]
fn malformed_container_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.npz");
    std::fs::write(&bad, b"not an archive").unwrap();
    let cfg = with(
        &tiny_config(dir.path()),
        &[&format!("reconstruct.inputs=[\"{}\"]", bad.display())],
    );
    assert!(matches!(
        cmd_reconstruct(&cfg),
        Err(ReconError::Format { .. }) | Err(ReconError::Io { .. })
    ));
}

fn cli(args: &[&str]) -> (i32, String, String) {
    let out = Process::new(env!("CARGO_BIN_EXE_cinerecon"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn cli_reports_error_categories_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let path = dir.path().join("run.toml");
    std::fs::write(&path, toml::to_string(&cfg).unwrap()).unwrap();
    let p = path.to_str().unwrap();

    let (code, _, err) = cli(&["eval", "--config", p]);
    assert_ne!(code, 0);
    let v: serde_json::Value = serde_json::from_str(err.trim().lines().last().unwrap()).unwrap();
    assert_eq!(v["error"]["category"], "missing_data");

    let (code, out, _) = cli(&["gen-data", "--config", p]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["slices"], 5);

    let (code, _, err) = cli(&[
        "train",
        "--config",
        p,
        "--set",
        "model.refinement=sequential",
    ]);
    assert_ne!(code, 0);
    let v: serde_json::Value = serde_json::from_str(err.trim().lines().last().unwrap()).unwrap();
    assert_eq!(v["error"]["category"], "config");

    let (code, _, err) = cli(&["train", "--config", p, "--set", "model.no_such_key=1"]);
    assert_ne!(code, 0);
    assert!(err.contains("\"config\""));
}
