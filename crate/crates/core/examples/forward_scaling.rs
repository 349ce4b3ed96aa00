//! Forward-pass wall time of the model across grid sizes.

use learned_schwarz::evalcli::{scaling, ScalingConfig};
use learned_schwarz::mggnn::ModelParams;
use learned_schwarz::train::TrainConfig;

fn main() -> learned_schwarz::Result<()> {
    let train_cfg = TrainConfig::smoke();
    let params = ModelParams::init(&train_cfg.model, 0);
    let rows = scaling(&params, &ScalingConfig { sizes: vec![1000, 4000, 16000], runs: 3, seed: 1 }, &train_cfg)?;
    for r in &rows {
        println!("{:6} unknowns, {:3} subdomains: {:.3}s", r.n, r.s, r.median_seconds);
    }
    for w in rows.windows(2) {
        println!("ratio {} -> {}: {:.2}", w[0].n, w[1].n, w[1].median_seconds / w[0].median_seconds);
    }
    Ok(())
}
