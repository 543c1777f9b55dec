//! Shows how a lookback window is cut into overlapping patches: the derived
//! geometry for benchmark history lengths, then a hand-sized series where
//! the stride overlap and last-value padding are visible directly.

use lsinet::patch::{derive_patch_geometry, patch, PatchConfig};

fn main() -> lsinet::Result<()> {
    println!("derived geometry (64 patches requested):");
    for n in [256usize, 512, 1024, 2048] {
        let cfg = derive_patch_geometry(n, 64, 128)?;
        println!(
            "  n={n:5}: {} patches of length {} at stride {} (overlap {})",
            cfg.count,
            cfg.l,
            cfg.k,
            cfg.l - cfg.k
        );
    }

    // small enough to print: 8 values, patch length 4, stride 2
    let history: Vec<f64> = vec![10.0, 11.0, 12.0, 13.0, 14.0, 15.0, 16.0, 17.0];
    let cfg = PatchConfig { n: 8, l: 4, k: 2, count: 4, d: 1 };
    let flat = patch(&history, &cfg)?;
    println!("\nseries {history:?} as {}x{} patches:", cfg.count, cfg.l);
    for (i, row) in flat.chunks(cfg.l).enumerate() {
        println!("  patch {i}: {row:?}");
    }
    println!("(the final patch runs past the end and repeats the last value)");
    Ok(())
}
