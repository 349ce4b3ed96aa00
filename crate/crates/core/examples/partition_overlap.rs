//! Lloyd aggregation into subdomains, overlap growth and the sparsity
//! patterns that the model fills in.

use learned_schwarz::fem::assemble_poisson;
use learned_schwarz::meshgen::{random_convex_polygon, triangulate};
use learned_schwarz::partition::{default_subdomains, extend_overlap, interface_sparsity, interp_sparsity, lloyd_aggregate, InterpSparsity};

fn main() -> learned_schwarz::Result<()> {
    let mesh = triangulate(&random_convex_polygon(7, 11)?, 1000, 11)?;
    let a = assemble_poisson(&mesh)?.a;
    let s = default_subdomains(a.n_rows);
    let assign = lloyd_aggregate(&a, s, 11)?;

    for delta in 0..=2 {
        let d = extend_overlap(&assign, &a, delta);
        let sizes: Vec<usize> = d.overlap_sets.iter().map(Vec::len).collect();
        let iface: usize = d.interface_nodes.iter().map(Vec::len).sum();
        println!("delta {delta}: sizes {sizes:?}, interface nodes {iface}, invariants ok: {}", d.check_invariants(&a));
    }

    let d = extend_overlap(&assign, &a, 1);
    for mode in [InterpSparsity::Neighbors, InterpSparsity::OwnOnly] {
        let pat = interp_sparsity(&d, &a, mode);
        println!("interpolation pattern {mode:?}: {} entries for {} rows", pat.rows.len(), a.n_rows);
    }
    let ip = interface_sparsity(&d, &a);
    println!("interface pattern entries per subdomain: {:?}", ip.iter().map(|p| p.rows.len()).collect::<Vec<_>>());
    println!("coarse matrix: {} x {}, nnz {}", d.coarse_a.n_rows, d.coarse_a.n_cols, d.coarse_a.nnz());
    Ok(())
}
