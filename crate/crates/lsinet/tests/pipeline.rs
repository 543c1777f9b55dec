//! End-to-end invariants of the data -> model -> metrics pipeline, plus
//! integration tests that drive the compiled CLI binary.

use std::path::Path;
use std::process::{Command, Output};

use lsinet::config::RunConfig;
use lsinet::data::{split, synthetic_series, SeriesTable, SplitSpec, WindowDataset, WindowSample};
use lsinet::model::{Model, ModelConfig};
use lsinet::patch::derive_patch_geometry;
use lsinet::rng::Streams;
use lsinet::tensor::{no_grad, Scalar};
use lsinet::train::{evaluate, fit, TrainConfig};
use lsinet::{checkpoint, Error};

fn predict_one<T: Scalar>(model: &Model<T>, s: &WindowSample) -> Vec<f64> {
    let hist: Vec<T> = s.history.iter().map(|&v| T::from_f64_lossy(v)).collect();
    let out = no_grad(|| model.forward(&hist, 1, model.infer_gate_mode(), None)).unwrap();
    out.prediction.to_vec().iter().map(|v| v.as_f64()).collect()
}

fn test_windows<'a>(table: &'a SeriesTable, n: usize, horizon: usize) -> WindowDataset<'a> {
    let spec = SplitSpec::Ratios(0.7, 0.15, 0.15);
    let [_, _, te] = split(table, spec, n, horizon).unwrap();
    WindowDataset::new(table, te, n, horizon)
}

fn tiny_model<T: Scalar>(n: usize, horizon: usize, seed: u64) -> Model<T> {
    let cfg = ModelConfig {
        patch: derive_patch_geometry(n, 16, 16).unwrap(),
        heads: 4,
        depth: 1,
        horizon,
        memory_dim: 16,
        hidden: 16,
    };
    Model::new(cfg, &mut Streams::new(seed).init()).unwrap()
}

#[test]
fn affine_rescaling_of_the_series_rescales_the_forecasts() {
    // per-window normalization makes predictions equivariant under
    // x -> a*x + b with a > 0: forecast(a*x + b) = a*forecast(x) + b
    let (a, b) = (3.5, -2.0);
    let base = synthetic_series(800, 2, &mut Streams::new(7).misc(0));
    let mut scaled = base.clone();
    for v in &mut scaled.values {
        *v = a * *v + b;
    }
    let (n, horizon) = (64, 8);
    let model = tiny_model::<f64>(n, horizon, 5);
    let ds_base = test_windows(&base, n, horizon);
    let ds_scaled = test_windows(&scaled, n, horizon);
    assert_eq!(ds_base.len(), ds_scaled.len());
    for i in (0..ds_base.len()).step_by(37) {
        let (sb, ss) = (ds_base.sample(i), ds_scaled.sample(i));
        let pred = sb.norm.denormalize(&predict_one(&model, &sb));
        let pred_scaled = ss.norm.denormalize(&predict_one(&model, &ss));
        for (p, q) in pred.iter().zip(&pred_scaled) {
            let expected = a * p + b;
            assert!(
                (q - expected).abs() <= 1e-4 * expected.abs().max(1.0),
                "window {i}: {q} vs expected {expected}"
            );
        }
    }
}

#[test]
fn permuting_input_channels_permutes_predictions_bitwise() {
    // the model is channel-independent, so column order in the table cannot
    // change any individual variable's forecast
    let base = synthetic_series(600, 3, &mut Streams::new(9).misc(1));
    let perm = [2usize, 0, 1];
    let mut shuffled = SeriesTable {
        names: perm.iter().map(|&p| base.names[p].clone()).collect(),
        values: Vec::with_capacity(base.values.len()),
        rows: base.rows,
    };
    for r in 0..base.rows {
        for &p in &perm {
            shuffled.values.push(base.value(r, p));
        }
    }
    let (n, horizon) = (64, 8);
    let model = tiny_model::<f32>(n, horizon, 3);
    let ds_base = test_windows(&base, n, horizon);
    let ds_shuffled = test_windows(&shuffled, n, horizon);
    for anchor_idx in [0usize, 11, 23] {
        for (pos, &var) in perm.iter().enumerate() {
            let sb = ds_base.sample(anchor_idx * 3 + var);
            let ss = ds_shuffled.sample(anchor_idx * 3 + pos);
            assert_eq!(sb.history, ss.history, "sample pairing is off");
            let (pb, ps) = (predict_one(&model, &sb), predict_one(&model, &ss));
            for (x, y) in pb.iter().zip(&ps) {
                assert_eq!(x.to_bits(), y.to_bits(), "var {var} forecast changed");
            }
        }
    }
}

#[test]
fn checkpoint_restore_reproduces_evaluation_bitwise() {
    let table = synthetic_series(600, 2, &mut Streams::new(7).misc(0));
    let (n, horizon) = (64, 8);
    let spec = SplitSpec::Ratios(0.7, 0.15, 0.15);
    let [tr, va, te] = split(&table, spec, n, horizon).unwrap();
    let train = WindowDataset::new(&table, tr, n, horizon);
    let val = WindowDataset::new(&table, va, n, horizon);
    let test = WindowDataset::new(&table, te, n, horizon);

    let trained = tiny_model::<f32>(n, horizon, 1);
    let cfg = TrainConfig { epochs: 2, lr: 1e-3, batch_size: 64, ..TrainConfig::default() };
    fit(&cfg, &trained, &train, &val, &test, 1).unwrap();
    let before = evaluate(&trained, &test, 64).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.lsin");
    let mut run_cfg = RunConfig::for_dataset("synthetic");
    run_cfg.n = n;
    run_cfg.pred_len = horizon;
    run_cfg.patch_target = 16;
    run_cfg.d_model = 16;
    run_cfg.memory_dim = 16;
    run_cfg.hidden = 16;
    checkpoint::save(&path, &run_cfg, &trained.params()).unwrap();

    let reloaded = tiny_model::<f32>(n, horizon, 99);
    checkpoint::load(&path).unwrap().restore(&reloaded.params()).unwrap();
    let after = evaluate(&reloaded, &test, 64).unwrap();
    assert_eq!(before.mse.to_bits(), after.mse.to_bits());
    assert_eq!(before.mae.to_bits(), after.mae.to_bits());
    assert_eq!(before.mse_norm.to_bits(), after.mse_norm.to_bits());
    assert_eq!(before.mae_norm.to_bits(), after.mae_norm.to_bits());
}

// ---- CLI integration ----

fn run_cli(args: &[&str]) -> Output {
    // scratch cwd: relative default paths (like the `runs` out dir) must
    // never land in the repository
    use std::sync::OnceLock;
    static CWD: OnceLock<tempfile::TempDir> = OnceLock::new();
    let cwd = CWD.get_or_init(|| tempfile::tempdir().unwrap());
    Command::new(env!("CARGO_BIN_EXE_lsinet"))
        .args(args)
        .current_dir(cwd.path())
        .env_remove("LSINET_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.cfg");
    std::fs::write(
        &path,
        "dataset = synthetic\n\
         n = 64\n\
         pred_len = 8\n\
         patch_target = 16\n\
         d_model = 32\n\
         memory_dim = 32\n\
         hidden = 32\n\
         epochs = 2\n\
         batch_size = 64\n\
         lr = 0.001\n",
    )
    .unwrap();
    path
}

/// Shared one-off training run most CLI tests read from.
fn trained_dir() -> &'static Path {
    use std::sync::OnceLock;
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_tiny_config(dir.path());
        let out = run_cli(&[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().join("run").to_str().unwrap(),
            "--seeds",
            "1",
        ]);
        assert!(
            out.status.success(),
            "train failed:\n{}\n{}",
            stdout_of(&out),
            stderr_of(&out)
        );
        dir
    })
    .path()
}

#[test]
fn cli_train_writes_an_echoable_config_and_well_formed_outputs() {
    let run = trained_dir().join("run");
    let echoed = std::fs::read_to_string(run.join("config.txt")).unwrap();
    let parsed = RunConfig::from_text(&echoed).unwrap();
    assert_eq!(parsed.to_text(), echoed, "config echo must parse back to itself");
    assert_eq!(parsed.n, 64);
    assert_eq!(parsed.train.epochs, 2);

    let tsv = std::fs::read_to_string(run.join("metrics.tsv")).unwrap();
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines[0], "dataset\tpred_len\tseed\tmse\tmae");
    assert!(lines[1].starts_with("synthetic\t8\t0\t"), "seed row: {}", lines[1]);
    assert!(lines[2].starts_with("synthetic\t8\tmean(1)\t"), "aggregate row: {}", lines[2]);

    assert!(run.join("seed0.lsin").is_file());
    assert!(run.join("seed0.report.jsonl").is_file());
    assert!(run.join("seed0.heatmaps").join("heatmap_b0_h0_hard.txt").is_file());
}

#[test]
fn cli_eval_matches_the_metrics_logged_by_train() {
    let run = trained_dir().join("run");
    let tsv = std::fs::read_to_string(run.join("metrics.tsv")).unwrap();
    let seed_row: Vec<&str> = tsv.lines().nth(1).unwrap().split('\t').collect();
    let (mse, mae) = (seed_row[3], seed_row[4]);

    let out = run_cli(&["eval", "--checkpoint", run.join("seed0.lsin").to_str().unwrap()]);
    assert!(out.status.success(), "eval failed: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(
        text.contains(&format!("test mse {mse}")),
        "eval printed:\n{text}\nexpected mse {mse}"
    );
    assert!(
        text.contains(&format!("test mae {mae}")),
        "eval printed:\n{text}\nexpected mae {mae}"
    );
}

#[test]
fn cli_export_heatmap_writes_matrices_for_every_head() {
    let run = trained_dir().join("run");
    let dest = trained_dir().join("maps");
    let out = run_cli(&[
        "export-heatmap",
        "--checkpoint",
        run.join("seed0.lsin").to_str().unwrap(),
        "--what",
        "probs",
        "--out",
        dest.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "export failed: {}", stderr_of(&out));
    for h in 0..4 {
        assert!(dest.join(format!("heatmap_b0_h{h}_probs.txt")).is_file());
        assert!(dest.join(format!("heatmap_b0_h{h}_probs.meta")).is_file());
    }
    assert!(stdout_of(&out).contains("sparsity"));
}

#[test]
fn cli_gradcheck_reports_pass_and_exits_zero() {
    let out = run_cli(&["gradcheck"]);
    assert!(out.status.success());
    assert!(stdout_of(&out).contains("PASS"), "gradcheck printed: {}", stdout_of(&out));
}

#[test]
fn cli_ablate_writes_labeled_variant_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let out_dir = dir.path().join("ab");
    let out = run_cli(&[
        "ablate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--epochs",
        "1",
        "--seeds",
        "1",
        "--variants",
        "no_msim",
    ]);
    assert!(out.status.success(), "ablate failed: {}", stderr_of(&out));
    let tsv = std::fs::read_to_string(out_dir.join("ablation.tsv")).unwrap();
    assert!(tsv.contains("synthetic[full]\t"), "full rows missing:\n{tsv}");
    assert!(tsv.contains("synthetic[no_msim]\t"), "variant rows missing:\n{tsv}");
}

#[test]
fn cli_user_errors_are_single_lines_not_panics() {
    let dir = tempfile::tempdir().unwrap();
    let bad_cfg = dir.path().join("bad.cfg");
    std::fs::write(&bad_cfg, "dataset = synthetic\nnn = 64\n").unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["train", "--dataset", "nosuch"],
        vec!["eval", "--checkpoint", "/nonexistent/model.lsin"],
        vec!["train", "--config", bad_cfg.to_str().unwrap()],
        vec!["export-heatmap", "--checkpoint", "/nonexistent/model.lsin"],
    ];
    for args in cases {
        let out = run_cli(&args);
        assert!(!out.status.success(), "{args:?} should fail");
        let err = stderr_of(&out);
        assert!(err.contains("error: "), "{args:?} stderr: {err}");
        assert!(!err.contains("panicked"), "{args:?} panicked: {err}");
        assert!(!stdout_of(&out).contains("panicked"));
    }
}

// keeps the Error import honest: every pipeline failure surfaces as this type
#[test]
fn library_errors_can_be_matched_by_kind() {
    let err = derive_patch_geometry(8, 64, 16).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "got {err:?}");
}
