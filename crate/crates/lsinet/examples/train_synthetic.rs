//! Trains a small model on generated sinusoid mixtures and prints the epoch
//! trajectory: forecasting loss, the intermittent sparsity term, and the
//! fraction of connections each head keeps.

use lsinet::data::{split, synthetic_series, SplitSpec, WindowDataset};
use lsinet::model::Model;
use lsinet::patch::derive_patch_geometry;
use lsinet::rng::Streams;
use lsinet::train::{fit, TrainConfig};

fn main() -> lsinet::Result<()> {
    let table = synthetic_series(1200, 2, &mut Streams::new(7).misc(0));
    let (n, horizon) = (64, 16);
    let [tr, va, te] = split(&table, SplitSpec::Ratios(0.7, 0.1, 0.2), n, horizon)?;
    let train = WindowDataset::new(&table, tr, n, horizon);
    let val = WindowDataset::new(&table, va, n, horizon);
    let test = WindowDataset::new(&table, te, n, horizon);
    println!(
        "{} train / {} val / {} test windows",
        train.len(),
        val.len(),
        test.len()
    );

    let model_cfg = lsinet::model::ModelConfig {
        patch: derive_patch_geometry(n, 16, 32)?,
        heads: 2,
        depth: 1,
        horizon,
        memory_dim: 32,
        hidden: 32,
    };
    let cfg = TrainConfig {
        epochs: 5,
        lr: 1e-3,
        batch_size: 64,
        eta: 2,
        ..TrainConfig::default()
    };
    let seed = 0;
    let model = Model::<f32>::new(model_cfg, &mut Streams::new(seed).init())?;
    let report = fit(&cfg, &model, &train, &val, &test, seed)?;

    println!("epoch  train-mse  train-asrl  val-mse   gate fraction per head");
    for e in &report.epochs {
        let sparsity: Vec<String> = e.sparsity.iter().map(|s| format!("{s:.3}")).collect();
        println!(
            "{:3}    {:.5}    {:9.2}  {:.5}   [{}]{}",
            e.epoch,
            e.train_mse,
            e.train_asrl,
            e.val.mse,
            sparsity.join(" "),
            if e.regularized { "  (regularized)" } else { "" }
        );
    }
    println!(
        "best epoch {} -> test mse {:.5}, mae {:.5}",
        report.best_epoch, report.test.mse, report.test.mae
    );
    Ok(())
}
