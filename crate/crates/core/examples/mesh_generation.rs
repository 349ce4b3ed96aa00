//! Random convex polygon, quality triangulation, text round trip.
//!
//! ```bash
//! cargo run --release --example mesh_generation -- 900 7
//! ```

use learned_schwarz::meshgen::{random_convex_polygon, triangulate, TriMesh};

fn main() -> learned_schwarz::Result<()> {
    let mut args = std::env::args().skip(1);
    let nodes: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(900);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(7);

    let poly = random_convex_polygon(6, seed)?;
    println!("polygon: {} vertices, area {:.3}, min angle {:.1} deg", poly.vertices.len(), poly.area(), poly.min_interior_angle());

    let mesh = triangulate(&poly, nodes, seed)?;
    println!(
        "mesh: {} nodes ({} requested), {} triangles, {} boundary nodes, min angle {:.1} deg",
        mesh.n_nodes(),
        nodes,
        mesh.triangles.len(),
        mesh.boundary_nodes.len(),
        mesh.min_angle()
    );
    println!("euler characteristic {}, invariants ok: {}", mesh.euler_characteristic(), mesh.check_invariants());

    let text = mesh.to_text();
    let back = TriMesh::from_text(text.as_bytes())?;
    assert_eq!(back.triangles, mesh.triangles);
    println!("text form: {} bytes, round trip ok", text.len());
    Ok(())
}
