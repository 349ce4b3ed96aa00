//! Flexible GMRES with and without the two-level preconditioner; writes the
//! residual history of the preconditioned run as CSV.

use learned_schwarz::ddm::{fgmres, Levels, SchwarzOperator};
use learned_schwarz::evalcli::synthetic_rhs;
use learned_schwarz::train::{make_grid, DataConfig};

fn main() -> learned_schwarz::Result<()> {
    let g = make_grid(0, 2000, &DataConfig::default(), 5)?;
    let a = &g.system.a;
    let b = synthetic_rhs(a, 1);

    let plain = fgmres(a, &b, |r: &[f64]| r.to_vec(), 1e-8, 300)?;
    println!("unpreconditioned: {} iterations", plain.iterations);
    for levels in [Levels::One, Levels::Two] {
        let op = SchwarzOperator::classical(a, &g.decomposition, levels)?;
        let res = op.fgmres(&b, 1e-8, 300)?;
        let ax = a.spmv(&res.x);
        let err = ax.iter().zip(&b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt() / b.iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("{levels:?}-level RAS: {} iterations, true relative residual {err:.2e}", res.iterations);
        if levels == Levels::Two {
            if let Some(path) = std::env::args().nth(1) {
                std::fs::write(&path, res.trace_csv())?;
                println!("wrote {path}");
            }
        }
    }
    Ok(())
}
