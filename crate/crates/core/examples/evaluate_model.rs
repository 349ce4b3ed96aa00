//! Compares classical and learned preconditioners on held-out grids and
//! writes the CSV report and SVG charts.
//!
//! ```bash
//! cargo run --release --example evaluate_model -- runs/smoke/model.ckpt runs/eval
//! ```

use std::path::PathBuf;

use learned_schwarz::evalcli::{evaluate, test_grids, test_targets, EvalConfig, Method};
use learned_schwarz::mggnn::ModelParams;
use learned_schwarz::train::{Heads, TrainConfig};

fn main() -> learned_schwarz::Result<()> {
    let mut args = std::env::args().skip(1);
    let train_cfg = TrainConfig::smoke();
    let params = match args.next() {
        Some(p) => ModelParams::load(&PathBuf::from(p))?,
        None => ModelParams::init(&train_cfg.model, 0),
    };
    let out = PathBuf::from(args.next().unwrap_or_else(|| "runs/eval".into()));
    let cfg = EvalConfig { sizes: vec![1000, 2000], per_size: 2, ..Default::default() };

    let grids = test_grids(&cfg, &train_cfg)?;
    let rep = evaluate(&grids, &test_targets(&cfg), Some((&params, Heads::Both)), &Method::ALL, &cfg);
    rep.write_all(&out)?;
    for s in rep.summary() {
        println!("{:<26} stationary {:7.2}  fgmres {:6.2}", s.method, s.mean_stationary, s.mean_fgmres);
    }
    println!("report in {}", out.display());
    Ok(())
}
