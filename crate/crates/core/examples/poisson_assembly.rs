//! P1 stiffness matrix of the Poisson problem with Dirichlet nodes removed.
//!
//! ```bash
//! cargo run --release --example poisson_assembly -- out.mtx
//! ```

use learned_schwarz::fem::{assemble_poisson, assemble_unconstrained, spd_check};
use learned_schwarz::meshgen::{random_convex_polygon, triangulate};

fn main() -> learned_schwarz::Result<()> {
    let mesh = triangulate(&random_convex_polygon(5, 3)?, 600, 3)?;
    let full = assemble_unconstrained(&mesh);
    let max_row_sum = (0..full.n_rows).map(|i| full.row(i).map(|(_, v)| v).sum::<f64>().abs()).fold(0.0, f64::max);
    println!("unconstrained: {} x {}, nnz {}, max |row sum| {:.2e}", full.n_rows, full.n_cols, full.nnz(), max_row_sum);

    let sys = assemble_poisson(&mesh)?;
    println!("constrained: {} dofs of {} nodes, nnz {}", sys.n_dofs(), mesh.n_nodes(), sys.a.nnz());
    println!("symmetric: {}, positive definite: {}", sys.a.is_symmetric(1e-12), spd_check(&sys.a)?);

    if let Some(path) = std::env::args().nth(1) {
        std::fs::write(&path, sys.a.to_matrix_market_string())?;
        println!("wrote {path}");
    }
    Ok(())
}
