//! End-to-end gradient of the surrogate loss against central differences on
//! a small grid with randomly initialized parameters.

use learned_schwarz::loss::LossConfig;
use learned_schwarz::mggnn::{ModelConfig, ModelParams};
use learned_schwarz::train::{make_grid_with_subdomains, model_gradient_check, prepare, DataConfig, Heads};

fn main() -> learned_schwarz::Result<()> {
    let model = ModelConfig::default();
    let grid = prepare(vec![make_grid_with_subdomains(0, 60, 3, &DataConfig::default(), 1)?], &model)?;
    let params = ModelParams::random(&model, 2, true);
    println!("{} parameters in {} arrays", params.n_scalars(), params.arrays.len());
    let loss = LossConfig { k: 10, m: 20, ..Default::default() };
    for heads in [Heads::Interface, Heads::Interpolation, Heads::Both] {
        let st = model_gradient_check(&params, &grid[0], heads, &loss, 100, 1e-5, 1e-3, 3)?;
        println!("{heads:?}: {}/{} coordinates within 1e-3, worst relative error {:.2e}", st.passed, st.checked, st.worst);
    }
    Ok(())
}
