//! One- and two-level restricted additive Schwarz as stationary solvers,
//! with the spectral radius of the error propagation operator.

use learned_schwarz::ddm::{Levels, SchwarzOperator};
use learned_schwarz::dense::spectral_radius;
use learned_schwarz::evalcli::synthetic_rhs;
use learned_schwarz::train::{make_grid, DataConfig};

fn main() -> learned_schwarz::Result<()> {
    let data = DataConfig::default();
    for id in 0..3 {
        let g = make_grid(id, 900, &data, 42)?;
        let a = &g.system.a;
        let b = synthetic_rhs(a, id as u64);
        print!("grid {id}: n {:4} S {:2}", a.n_rows, g.decomposition.n_subdomains);
        for levels in [Levels::One, Levels::Two] {
            let op = SchwarzOperator::classical(a, &g.decomposition, levels)?;
            let rho = spectral_radius(op.assemble_dense_t().view())?;
            let res = op.stationary_solve(&b, 1e-8, 500);
            print!(" | {levels:?}: rho {rho:.3}, {:3} iterations", res.iterations);
        }
        println!();
    }
    Ok(())
}
