//! Exports a head's connection matrix as text and runs the structure
//! detectors on it: a brief training run first, so the gates carry some
//! learned shape rather than initialization noise.

use lsinet::data::{split, synthetic_series, SplitSpec, WindowDataset};
use lsinet::heatmap::{has_block, has_isolated_point, write_heatmap, HeatmapKind};
use lsinet::model::{Model, ModelConfig};
use lsinet::patch::derive_patch_geometry;
use lsinet::rng::Streams;
use lsinet::train::{fit, TrainConfig};

fn main() -> lsinet::Result<()> {
    let table = synthetic_series(900, 2, &mut Streams::new(7).misc(0));
    let (n, horizon) = (64, 8);
    let [tr, va, te] = split(&table, SplitSpec::Ratios(0.7, 0.1, 0.2), n, horizon)?;
    let model_cfg = ModelConfig {
        patch: derive_patch_geometry(n, 16, 32)?,
        heads: 2,
        depth: 1,
        horizon,
        memory_dim: 32,
        hidden: 32,
    };
    let cfg = TrainConfig { epochs: 4, lr: 1e-3, batch_size: 64, eta: 2, ..TrainConfig::default() };
    let model = Model::<f32>::new(model_cfg, &mut Streams::new(1).init())?;
    fit(
        &cfg,
        &model,
        &WindowDataset::new(&table, tr, n, horizon),
        &WindowDataset::new(&table, va, n, horizon),
        &WindowDataset::new(&table, te, n, horizon),
        1,
    )?;

    let dir = tempfile::tempdir()?;
    for head in 0..2 {
        let cm = model.connection_snapshot(0, head)?;
        let (matrix, meta) = write_heatmap(dir.path(), 0, head, HeatmapKind::Hard, &cm)?;
        println!("head {head}: wrote {}", matrix.display());
        println!("{}", std::fs::read_to_string(&meta)?.trim_end());
        println!(
            "  2x2 all-ones block: {}, isolated point: {}",
            has_block(&cm.z_hard, cm.n),
            has_isolated_point(&cm.z_hard, cm.n)
        );
        for line in std::fs::read_to_string(&matrix)?.lines().take(4) {
            println!("  {line}");
        }
        println!("  ... ({0} rows of {0})", cm.n);
    }
    Ok(())
}
