//! A short training run on freshly generated grids, printing the per-epoch
//! loss and writing checkpoints to a directory.
//!
//! ```bash
//! cargo run --release --example train_smoke -- runs/smoke
//! ```

use std::path::PathBuf;

use learned_schwarz::train::{make_dataset, prepare, train, TrainConfig};

fn main() -> learned_schwarz::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/smoke".into()));
    let mut cfg = TrainConfig::smoke();
    cfg.data.n_grids = 10;
    cfg.epochs = 2;
    cfg.batch = 5;

    let grids = prepare(make_dataset(&cfg.data, cfg.seed)?, &cfg.model)?;
    let res = train(&cfg, &grids, Some(&out))?;
    for r in &res.history.epochs {
        println!("epoch {}: mean loss {:.5}, {} skipped, {:.1}s", r.epoch, r.mean_loss, r.skips, r.wall_seconds);
    }
    println!("checkpoint in {}", out.display());
    Ok(())
}
