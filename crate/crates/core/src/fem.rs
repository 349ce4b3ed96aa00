//! P1 stiffness assembly for the Poisson problem with Dirichlet boundary
//! nodes eliminated.

use crate::dense::{symmetric_eigenvalues, DENSE_LIMIT};
use crate::error::{Error, Result};
use crate::meshgen::TriMesh;
use crate::sparse::CsrMatrix;

#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub a: CsrMatrix,
    /// Mesh node → DoF index; `None` on the Dirichlet boundary.
    pub dof_map: Vec<Option<usize>>,
    /// DoF index → mesh node.
    pub dof_nodes: Vec<usize>,
}

impl LinearSystem {
    pub fn n_dofs(&self) -> usize {
        self.dof_nodes.len()
    }
}

/// Element stiffness `K_ij = |T| grad(phi_i) . grad(phi_j)` for a P1 triangle.
pub fn element_stiffness(p: [[f64; 2]; 3]) -> [[f64; 3]; 3] {
    let area2 = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let mut grad = [[0.0; 2]; 3];
    for i in 0..3 {
        let j = (i + 1) % 3;
        let k = (i + 2) % 3;
        grad[i] = [(p[j][1] - p[k][1]) / area2, (p[k][0] - p[j][0]) / area2];
    }
    let area = 0.5 * area2.abs();
    let mut ke = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            ke[i][j] = area * (grad[i][0] * grad[j][0] + grad[i][1] * grad[j][1]);
        }
    }
    ke
}

fn element_triplets(mesh: &TriMesh) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
    mesh.triangles.iter().flat_map(move |t| {
        let ke = element_stiffness([mesh.coords[t[0]], mesh.coords[t[1]], mesh.coords[t[2]]]);
        (0..3).flat_map(move |i| (0..3).map(move |j| (t[i], t[j], ke[i][j])))
    })
}

/// Stiffness over all mesh nodes, before boundary elimination.
pub fn assemble_unconstrained(mesh: &TriMesh) -> CsrMatrix {
    let n = mesh.n_nodes();
    let trip: Vec<_> = element_triplets(mesh).collect();
    CsrMatrix::from_triplets(n, n, &trip)
}

pub fn assemble_poisson(mesh: &TriMesh) -> Result<LinearSystem> {
    let n = mesh.n_nodes();
    let mut is_boundary = vec![false; n];
    for &b in &mesh.boundary_nodes {
        is_boundary[b] = true;
    }
    let mut dof_map = vec![None; n];
    let mut dof_nodes = Vec::new();
    for v in 0..n {
        if !is_boundary[v] {
            dof_map[v] = Some(dof_nodes.len());
            dof_nodes.push(v);
        }
    }
    if dof_nodes.is_empty() {
        return Err(Error::EmptySystem);
    }
    let trip: Vec<_> = element_triplets(mesh)
        .filter_map(|(i, j, v)| Some((dof_map[i]?, dof_map[j]?, v)))
        .collect();
    let m = dof_nodes.len();
    Ok(LinearSystem { a: CsrMatrix::from_triplets(m, m, &trip), dof_map, dof_nodes })
}

/// Symmetric with a positive spectrum (dense eigensolve, `n <= 2500`).
pub fn spd_check(a: &CsrMatrix) -> Result<bool> {
    if !a.is_square() {
        return Err(Error::InvalidArgument("spd_check needs a square matrix".into()));
    }
    if a.n_rows > DENSE_LIMIT {
        return Err(Error::SizeLimit { size: a.n_rows, limit: DENSE_LIMIT });
    }
    if !a.is_symmetric(1e-12) {
        return Ok(false);
    }
    let ev = symmetric_eigenvalues(a.to_dense().view())?;
    Ok(ev.first().is_none_or(|&l| l > 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshgen::{random_convex_polygon, triangulate, triangulate_with, MeshMode, MeshOptions, Polygon};

    #[test]
    fn reference_triangle_stiffness() {
        let ke = element_stiffness([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let expect = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((ke[i][j] - expect[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn lattice_gives_five_point_stencil() {
        let opts = MeshOptions { mode: MeshMode::Structured, ..Default::default() };
        let mesh = triangulate_with(&Polygon::unit_square(), 25, 0, &opts).unwrap();
        let sys = assemble_poisson(&mesh).unwrap();
        assert_eq!(sys.n_dofs(), 9);
        // centre node (2,2) = mesh node 12
        let c = sys.dof_map[12].unwrap();
        assert!((sys.a.get(c, c) - 4.0).abs() < 1e-14);
        let mut minus_ones = 0;
        for (j, v) in sys.a.row(c) {
            if j != c {
                assert!(v.abs() < 1e-14 || (v + 1.0).abs() < 1e-14);
                minus_ones += usize::from((v + 1.0).abs() < 1e-14);
            }
        }
        assert_eq!(minus_ones, 4);
        // pattern includes the diagonal mesh edges (stored zeros)
        assert_eq!(sys.a.row_cols(c).len(), 7);
    }

    #[test]
    fn single_interior_node() {
        let coords = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]];
        let tris = vec![[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]];
        let mesh = TriMesh::from_parts(coords, tris);
        let sys = assemble_poisson(&mesh).unwrap();
        assert_eq!(sys.n_dofs(), 1);
        assert!(sys.a.get(0, 0) > 0.0);
    }

    #[test]
    fn no_interior_nodes_is_an_error() {
        let mesh = TriMesh::from_parts(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]]);
        assert!(matches!(assemble_poisson(&mesh), Err(Error::EmptySystem)));
    }

    #[test]
    fn unconstrained_rows_sum_to_zero() {
        let mesh = triangulate(&random_convex_polygon(6, 4).unwrap(), 150, 4).unwrap();
        let k = assemble_unconstrained(&mesh);
        for i in 0..k.n_rows {
            let s: f64 = k.row(i).map(|(_, v)| v).sum();
            assert!(s.abs() < 1e-12, "row {i} sums to {s}");
        }
    }

    #[test]
    fn spd_check_examples() {
        assert!(spd_check(&CsrMatrix::identity(3)).unwrap());
        let swap = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (1, 0, 1.0)]);
        assert!(!spd_check(&swap).unwrap());
        let mesh = triangulate(&random_convex_polygon(5, 9).unwrap(), 100, 9).unwrap();
        let sys = assemble_poisson(&mesh).unwrap();
        assert!(sys.a.is_symmetric(1e-14));
        assert!(sys.a.diagonal().iter().all(|&d| d > 0.0));
        assert!(spd_check(&sys.a).unwrap());
        let big = CsrMatrix::identity(2501);
        assert!(matches!(spd_check(&big), Err(Error::SizeLimit { .. })));
    }
}
