//! End-to-end forecasting from a CSV file: load, standardize on the train
//! split, train briefly, and print the first test window's forecast next to
//! the ground truth. Pass a CSV path (timestamp column first); without one,
//! a synthetic file is written to a temp directory and used instead.

use std::io::Write;

use lsinet::data::{borders, load_csv, split, synthetic_series, Scaler, SplitSpec, WindowDataset};
use lsinet::model::{GateMode, Model, ModelConfig};
use lsinet::patch::derive_patch_geometry;
use lsinet::rng::Streams;
use lsinet::train::{fit, TrainConfig};

fn write_demo_csv(dir: &std::path::Path) -> lsinet::Result<std::path::PathBuf> {
    let table = synthetic_series(900, 2, &mut Streams::new(3).misc(1));
    let path = dir.join("demo.csv");
    let mut f = std::fs::File::create(&path)?;
    writeln!(f, "date,{}", table.names.join(","))?;
    for r in 0..table.rows {
        let cells: Vec<String> = (0..table.vars()).map(|v| table.value(r, v).to_string()).collect();
        writeln!(f, "t{r},{}", cells.join(","))?;
    }
    Ok(path)
}

fn main() -> lsinet::Result<()> {
    let tmp = tempfile::tempdir()?;
    let path = match std::env::args().nth(1) {
        Some(p) => p.into(),
        None => {
            let p = write_demo_csv(tmp.path())?;
            println!("no CSV given; using generated {}", p.display());
            p
        }
    };

    let raw = load_csv(&path)?;
    println!("{} rows x {} variables: {:?}", raw.rows, raw.vars(), raw.names);

    let (n, horizon) = (64, 8);
    let spec = SplitSpec::Ratios(0.7, 0.1, 0.2);
    let (train_end, _, _) = borders(raw.rows, spec)?;
    let table = Scaler::fit(&raw, train_end)?.transform(&raw);
    let [tr, va, te] = split(&table, spec, n, horizon)?;
    let train = WindowDataset::new(&table, tr, n, horizon);
    let val = WindowDataset::new(&table, va, n, horizon);
    let test = WindowDataset::new(&table, te, n, horizon);

    let model_cfg = ModelConfig {
        patch: derive_patch_geometry(n, 16, 32)?,
        heads: 2,
        depth: 1,
        horizon,
        memory_dim: 32,
        hidden: 32,
    };
    let cfg = TrainConfig { epochs: 3, lr: 1e-3, batch_size: 64, ..TrainConfig::default() };
    let model = Model::<f32>::new(model_cfg, &mut Streams::new(0).init())?;
    let report = fit(&cfg, &model, &train, &val, &test, 0)?;
    println!("test mse {:.5}, mae {:.5}", report.test.mse, report.test.mae);

    // one window, denormalized back to the standardized data scale
    let s = test.sample(0);
    let hist: Vec<f32> = s.history.iter().map(|&v| v as f32).collect();
    let out = model.forward(&hist, 1, GateMode::Deterministic, None)?;
    let pred: Vec<f64> = out.prediction.to_vec().iter().map(|&v| v as f64).collect();
    let pred = s.norm.denormalize(&pred);
    let truth = s.norm.denormalize(&s.target);
    println!("first test window, variable {} at row {}:", s.var, s.anchor);
    println!("  forecast: {:?}", &pred.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>());
    println!("  actual:   {:?}", &truth.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>());
    Ok(())
}
