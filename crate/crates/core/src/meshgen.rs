//! Random convex domains and their triangulations.
//!
//! Interior points come from Poisson-disk sampling, boundary points are spaced
//! evenly along the polygon edges, and a constrained Delaunay refinement pass
//! enforces the minimum-angle floor.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::BufRead;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spade::{
    AngleLimit, ConstrainedDelaunayTriangulation, Point2, RefinementParameters, Triangulation,
};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[derive(Clone, Debug, PartialEq)]
pub struct Polygon {
    /// Counterclockwise vertices.
    pub vertices: Vec<Point>,
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Result<Self> {
        let p = Self { vertices };
        if p.vertices.len() < 3 {
            return Err(Error::InvalidArgument("polygon needs at least 3 vertices".into()));
        }
        if !p.is_strictly_convex() {
            return Err(Error::InvalidArgument("polygon is not strictly convex".into()));
        }
        Ok(p)
    }

    pub fn unit_square() -> Self {
        Self { vertices: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]] }
    }

    pub fn area(&self) -> f64 {
        let v = &self.vertices;
        let n = v.len();
        0.5 * (0..n).map(|i| v[i][0] * v[(i + 1) % n][1] - v[(i + 1) % n][0] * v[i][1]).sum::<f64>()
    }

    pub fn perimeter(&self) -> f64 {
        let v = &self.vertices;
        (0..v.len()).map(|i| dist(v[i], v[(i + 1) % v.len()])).sum()
    }

    pub fn is_strictly_convex(&self) -> bool {
        let v = &self.vertices;
        let n = v.len();
        if n < 3 {
            return false;
        }
        let distinct = (0..n).all(|i| (i + 1..n).all(|j| v[i] != v[j]));
        distinct && (0..n).all(|i| cross(v[i], v[(i + 1) % n], v[(i + 2) % n]) > 0.0)
    }

    /// Smallest interior angle in degrees.
    pub fn min_interior_angle(&self) -> f64 {
        let v = &self.vertices;
        let n = v.len();
        (0..n)
            .map(|i| angle_at(v[(i + n - 1) % n], v[i], v[(i + 1) % n]))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, p: Point) -> bool {
        let v = &self.vertices;
        (0..v.len()).all(|i| cross(v[i], v[(i + 1) % v.len()], p) > 0.0)
    }

    /// Distance from `p` to the polygon boundary.
    pub fn boundary_distance(&self, p: Point) -> f64 {
        let v = &self.vertices;
        (0..v.len())
            .map(|i| segment_distance(p, v[i], v[(i + 1) % v.len()]))
            .fold(f64::INFINITY, f64::min)
    }

    fn bbox(&self) -> (Point, Point) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &self.vertices {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        (lo, hi)
    }
}

fn angle_at(prev: Point, at: Point, next: Point) -> f64 {
    let a = [prev[0] - at[0], prev[1] - at[1]];
    let b = [next[0] - at[0], next[1] - at[1]];
    let c = (a[0] * b[0] + a[1] * b[1]) / ((a[0].hypot(a[1])) * (b[0].hypot(b[1])));
    c.clamp(-1.0, 1.0).acos().to_degrees()
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let t = (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / (ab[0] * ab[0] + ab[1] * ab[1])).clamp(0.0, 1.0);
    dist(p, [a[0] + t * ab[0], a[1] + t * ab[1]])
}

/// Interior angles below this are resampled when generating random polygons.
const MIN_POLYGON_ANGLE: f64 = 30.0;

/// Points on a jittered ellipse of random radius, aspect and rotation. All
/// points lie on a strictly convex curve, so the hull keeps every vertex.
pub fn random_convex_polygon(n_vertices: usize, seed: u64) -> Result<Polygon> {
    if n_vertices < 3 {
        return Err(Error::InvalidArgument(format!("n_vertices = {n_vertices} < 3")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_vertices as f64;
    loop {
        let radius = rng.gen_range(0.75..1.25);
        let aspect = rng.gen_range(0.6..1.0);
        let rot: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let step = std::f64::consts::TAU / n;
        let mut verts = Vec::with_capacity(n_vertices);
        for i in 0..n_vertices {
            let t = (i as f64 + rng.gen_range(-0.3..0.3)) * step;
            let (x, y) = (radius * t.cos(), radius * aspect * t.sin());
            verts.push([x * rot.cos() - y * rot.sin(), x * rot.sin() + y * rot.cos()]);
        }
        let hull = convex_hull(&verts);
        let poly = Polygon { vertices: hull };
        if poly.vertices.len() == n_vertices
            && poly.is_strictly_convex()
            && poly.min_interior_angle() >= MIN_POLYGON_ANGLE
        {
            return Ok(poly);
        }
    }
}

/// Andrew's monotone chain; counterclockwise, collinear points dropped.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Point> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    pub coords: Vec<Point>,
    /// Counterclockwise node triples.
    pub triangles: Vec<[usize; 3]>,
    /// Sorted.
    pub boundary_nodes: Vec<usize>,
}

impl TriMesh {
    /// Builds a mesh and derives its boundary from edges with a single incident triangle.
    pub fn from_parts(coords: Vec<Point>, triangles: Vec<[usize; 3]>) -> Self {
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let boundary: BTreeSet<usize> =
            count.iter().filter(|(_, &c)| c == 1).flat_map(|(&(a, b), _)| [a, b]).collect();
        Self { coords, triangles, boundary_nodes: boundary.into_iter().collect() }
    }

    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        0.5 * cross(self.coords[a], self.coords[b], self.coords[c])
    }

    /// Undirected edges, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let set: BTreeSet<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|t| (0..3).map(move |k| (t[k].min(t[(k + 1) % 3]), t[k].max(t[(k + 1) % 3]))))
            .collect();
        set.into_iter().collect()
    }

    /// `nodes - edges + triangles`; equals 1 for a simply connected triangulation.
    pub fn euler_characteristic(&self) -> i64 {
        self.n_nodes() as i64 - self.edges().len() as i64 + self.triangles.len() as i64
    }

    pub fn min_angle(&self) -> f64 {
        self.triangles
            .iter()
            .flat_map(|&[a, b, c]| {
                let p = &self.coords;
                [angle_at(p[c], p[a], p[b]), angle_at(p[a], p[b], p[c]), angle_at(p[b], p[c], p[a])]
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_connected(&self) -> bool {
        let n = self.n_nodes();
        if n == 0 {
            return true;
        }
        let mut adj = vec![Vec::new(); n];
        for (a, b) in self.edges() {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Checks positivity of areas, connectivity and boundary consistency.
    pub fn check_invariants(&self) -> bool {
        (0..self.triangles.len()).all(|t| self.signed_area(t) > 0.0)
            && self.is_connected()
            && Self::from_parts(self.coords.clone(), self.triangles.clone()).boundary_nodes
                == self.boundary_nodes
    }

    /// Plain text: `nodes n`, coordinates, `triangles m`, index triples,
    /// `boundary b`, node indices. Single spaces, 0-based.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "nodes {}", self.coords.len());
        for p in &self.coords {
            let _ = writeln!(s, "{:?} {:?}", p[0], p[1]);
        }
        let _ = writeln!(s, "triangles {}", self.triangles.len());
        for t in &self.triangles {
            let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
        }
        let _ = writeln!(s, "boundary {}", self.boundary_nodes.len());
        for b in &self.boundary_nodes {
            let _ = writeln!(s, "{b}");
        }
        s
    }

    pub fn from_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let mut next = || -> Result<String> {
            lines.next().ok_or_else(|| Error::Parse("unexpected end of mesh file".into()))?.map_err(Error::from)
        };
        fn header(line: &str, key: &str) -> Result<usize> {
            let mut it = line.split(' ');
            if it.next() != Some(key) {
                return Err(Error::Parse(format!("expected `{key}`, got `{line}`")));
            }
            it.next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::Parse(format!("bad count in `{line}`")))
        }
        fn nums<T: std::str::FromStr>(line: &str, k: usize) -> Result<Vec<T>> {
            let v: Vec<T> = line.split(' ').filter_map(|t| t.parse().ok()).collect();
            if v.len() != k {
                return Err(Error::Parse(format!("expected {k} numbers in `{line}`")));
            }
            Ok(v)
        }
        let n = header(&next()?, "nodes")?;
        let mut coords = Vec::with_capacity(n);
        for _ in 0..n {
            let v: Vec<f64> = nums(&next()?, 2)?;
            coords.push([v[0], v[1]]);
        }
        let m = header(&next()?, "triangles")?;
        let mut triangles = Vec::with_capacity(m);
        for _ in 0..m {
            let v: Vec<usize> = nums(&next()?, 3)?;
            triangles.push([v[0], v[1], v[2]]);
        }
        let b = header(&next()?, "boundary")?;
        let mut boundary_nodes = Vec::with_capacity(b);
        for _ in 0..b {
            boundary_nodes.push(nums::<usize>(&next()?, 1)?[0]);
        }
        Ok(Self { coords, triangles, boundary_nodes })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshMode {
    Unstructured,
    /// Lattice mapped bilinearly onto a quadrilateral; needs a 4-vertex polygon
    /// and a square `target_nodes`.
    Structured,
}

#[derive(Clone, Copy, Debug)]
pub struct MeshOptions {
    pub min_angle_deg: f64,
    pub mode: MeshMode,
}

impl Default for MeshOptions {
    fn default() -> Self {
        Self { min_angle_deg: 20.0, mode: MeshMode::Unstructured }
    }
}

pub fn triangulate(p: &Polygon, target_nodes: usize, seed: u64) -> Result<TriMesh> {
    triangulate_with(p, target_nodes, seed, &MeshOptions::default())
}

pub fn triangulate_with(p: &Polygon, target_nodes: usize, seed: u64, opts: &MeshOptions) -> Result<TriMesh> {
    if target_nodes < 4 {
        return Err(Error::InvalidArgument(format!("target_nodes = {target_nodes} < 4")));
    }
    let area = p.area();
    if !(area > 1e-10) {
        return Err(Error::MeshFailure(format!("degenerate polygon (area {area:e})")));
    }
    match opts.mode {
        MeshMode::Structured => structured(p, target_nodes),
        MeshMode::Unstructured => unstructured(p, target_nodes, seed, opts.min_angle_deg),
    }
}

fn structured(p: &Polygon, target_nodes: usize) -> Result<TriMesh> {
    if p.vertices.len() != 4 {
        return Err(Error::InvalidArgument("structured mode needs a quadrilateral".into()));
    }
    let k = (target_nodes as f64).sqrt().round() as usize;
    if k * k != target_nodes || k < 2 {
        return Err(Error::InvalidArgument(format!("structured mode needs a square node count, got {target_nodes}")));
    }
    let v = &p.vertices;
    let map = |s: f64, t: f64| -> Point {
        let w = [(1.0 - s) * (1.0 - t), s * (1.0 - t), s * t, (1.0 - s) * t];
        [
            w.iter().zip(v).map(|(w, p)| w * p[0]).sum(),
            w.iter().zip(v).map(|(w, p)| w * p[1]).sum(),
        ]
    };
    let h = 1.0 / (k - 1) as f64;
    let mut coords = Vec::with_capacity(k * k);
    for j in 0..k {
        for i in 0..k {
            coords.push(map(i as f64 * h, j as f64 * h));
        }
    }
    let id = |i: usize, j: usize| j * k + i;
    let mut triangles = Vec::with_capacity(2 * (k - 1) * (k - 1));
    for j in 0..k - 1 {
        for i in 0..k - 1 {
            triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    Ok(TriMesh::from_parts(coords, triangles))
}

fn unstructured(p: &Polygon, target_nodes: usize, seed: u64, min_angle: f64) -> Result<TriMesh> {
    let area = p.area();
    // Poisson-disk packings land near 0.7 points per r^2.
    let mut spacing = (0.7 * area / target_nodes as f64).sqrt();
    let mut best: Option<(f64, TriMesh)> = None;
    for attempt in 0..10u64 {
        let mesh = mesh_once(p, spacing, seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9)), min_angle)?;
        let ratio = mesh.n_nodes() as f64 / target_nodes as f64;
        let err = (ratio - 1.0).abs();
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, mesh));
        }
        if err <= 0.1 {
            break;
        }
        spacing *= ratio.sqrt();
    }
    let (err, mesh) = best.unwrap();
    if err > 0.3 {
        return Err(Error::MeshFailure(format!(
            "could not reach {target_nodes} nodes (got {})",
            mesh.n_nodes()
        )));
    }
    if !mesh.check_invariants() {
        return Err(Error::MeshFailure("generated mesh violates invariants".into()));
    }
    Ok(mesh)
}

fn mesh_once(p: &Polygon, r: f64, seed: u64, min_angle: f64) -> Result<TriMesh> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = &p.vertices;
    let mut boundary = Vec::new();
    for i in 0..v.len() {
        let (a, b) = (v[i], v[(i + 1) % v.len()]);
        let segs = (dist(a, b) / r).round().max(1.0) as usize;
        for s in 0..segs {
            let t = s as f64 / segs as f64;
            boundary.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    let interior = poisson_disk(p, r, &mut rng);

    let fail = |e: spade::InsertionError| Error::MeshFailure(format!("triangulation insert failed: {e:?}"));
    let mut cdt: ConstrainedDelaunayTriangulation<Point2<f64>> = ConstrainedDelaunayTriangulation::new();
    cdt.add_constraint_edges(boundary.iter().map(|q| Point2::new(q[0], q[1])), true).map_err(fail)?;
    for q in &interior {
        cdt.insert(Point2::new(q[0], q[1])).map_err(fail)?;
    }
    let result = cdt.refine(
        RefinementParameters::new()
            .with_angle_limit(AngleLimit::from_deg(min_angle + 1.0))
            .exclude_outer_faces(true),
    );
    if !result.refinement_complete {
        return Err(Error::MeshFailure("angle refinement did not complete".into()));
    }

    let coords: Vec<Point> = cdt.vertices().map(|vh| [vh.position().x, vh.position().y]).collect();
    let mut triangles = Vec::with_capacity(cdt.num_inner_faces());
    for f in cdt.inner_faces() {
        let [a, b, c] = f.vertices().map(|vh| vh.fix().index());
        if cross(coords[a], coords[b], coords[c]) > 0.0 {
            triangles.push([a, b, c]);
        } else {
            triangles.push([a, c, b]);
        }
    }
    Ok(drop_boundary_slivers(coords, triangles))
}

/// Boundary subdivision points are rounded off their polygon edge, which can
/// leave a near-zero-area ear between three consecutive boundary nodes. Those
/// ears are removed together with any node they orphan.
fn drop_boundary_slivers(coords: Vec<Point>, triangles: Vec<[usize; 3]>) -> TriMesh {
    let area = |t: &[usize; 3]| 0.5 * cross(coords[t[0]], coords[t[1]], coords[t[2]]);
    let mut areas: Vec<f64> = triangles.iter().map(area).collect();
    areas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let floor = 1e-8 * areas.get(areas.len() / 2).copied().unwrap_or(0.0);
    let kept: Vec<[usize; 3]> = triangles.into_iter().filter(|t| area(t) > floor).collect();
    let mut used = vec![false; coords.len()];
    for t in &kept {
        for &v in t {
            used[v] = true;
        }
    }
    let order: Vec<usize> = (0..coords.len()).filter(|&v| used[v]).collect();
    let mut final_index = vec![usize::MAX; coords.len()];
    for (k, &v) in order.iter().enumerate() {
        final_index[v] = k;
    }
    let coords: Vec<Point> = order.iter().map(|&v| coords[v]).collect();
    let triangles = kept.iter().map(|t| t.map(|v| final_index[v])).collect();
    TriMesh::from_parts(coords, triangles)
}

/// Bridson sampling inside `p`, keeping samples `0.75 r` away from the boundary.
fn poisson_disk(p: &Polygon, r: f64, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let (lo, hi) = p.bbox();
    let cell = r / std::f64::consts::SQRT_2;
    let nx = ((hi[0] - lo[0]) / cell).ceil() as usize + 1;
    let ny = ((hi[1] - lo[1]) / cell).ceil() as usize + 1;
    let mut grid: Vec<Option<usize>> = vec![None; nx * ny];
    let cell_of = |q: Point| (((q[0] - lo[0]) / cell) as usize, ((q[1] - lo[1]) / cell) as usize);
    let margin = 0.75 * r;
    let ok = |q: Point, pts: &[Point], grid: &[Option<usize>]| -> bool {
        if !p.contains(q) || p.boundary_distance(q) < margin {
            return false;
        }
        let (cx, cy) = cell_of(q);
        for gy in cy.saturating_sub(2)..(cy + 3).min(ny) {
            for gx in cx.saturating_sub(2)..(cx + 3).min(nx) {
                if let Some(k) = grid[gy * nx + gx] {
                    if dist(pts[k], q) < r {
                        return false;
                    }
                }
            }
        }
        true
    };

    let mut pts: Vec<Point> = Vec::new();
    let mut active = Vec::new();
    // seed point: first admissible random draw
    for _ in 0..1000 {
        let q = [rng.gen_range(lo[0]..hi[0]), rng.gen_range(lo[1]..hi[1])];
        if ok(q, &pts, &grid) {
            let (cx, cy) = cell_of(q);
            grid[cy * nx + cx] = Some(0);
            pts.push(q);
            active.push(0);
            break;
        }
    }
    while !active.is_empty() {
        let slot = rng.gen_range(0..active.len());
        let base = pts[active[slot]];
        let mut placed = false;
        for _ in 0..30 {
            let rad = r * (1.0 + rng.gen::<f64>());
            let th = rng.gen_range(0.0..std::f64::consts::TAU);
            let q = [base[0] + rad * th.cos(), base[1] + rad * th.sin()];
            if ok(q, &pts, &grid) {
                let (cx, cy) = cell_of(q);
                grid[cy * nx + cx] = Some(pts.len());
                active.push(pts.len());
                pts.push(q);
                placed = true;
                break;
            }
        }
        if !placed {
            active.swap_remove(slot);
        }
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polygon_needs_three_vertices() {
        assert!(matches!(random_convex_polygon(2, 0), Err(Error::InvalidArgument(_))));
        let tri = random_convex_polygon(3, 11).unwrap();
        assert_eq!(tri.vertices.len(), 3);
        assert!(tri.is_strictly_convex());
    }

    #[test]
    fn polygon_generation_is_seeded() {
        let a = random_convex_polygon(8, 0).unwrap();
        let b = random_convex_polygon(8, 0).unwrap();
        let c = random_convex_polygon(8, 1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.vertices.len(), 8);
    }

    #[test]
    fn degenerate_polygon_fails() {
        let p = Polygon { vertices: vec![[0.0, 0.0], [1.0, 0.0], [2.0, 1e-14]] };
        assert!(matches!(triangulate(&p, 100, 0), Err(Error::MeshFailure(_))));
        assert!(matches!(triangulate(&Polygon::unit_square(), 3, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn structured_lattice_matches_hand_construction() {
        let opts = MeshOptions { mode: MeshMode::Structured, ..Default::default() };
        let m = triangulate_with(&Polygon::unit_square(), 25, 0, &opts).unwrap();
        assert_eq!(m.n_nodes(), 25);
        assert_eq!(m.triangles.len(), 32);
        // 4x4 cells: 40 axis edges + 16 diagonals
        assert_eq!(m.edges().len(), 56);
        assert_eq!(m.boundary_nodes.len(), 16);
        assert_eq!(m.coords[6], [0.25, 0.25]);
        // node 6 = (1,1) has the diagonal neighbours 0 and 12 from its split
        let e = m.edges();
        assert!(e.contains(&(0, 6)) && e.contains(&(6, 12)));
        assert!(!e.contains(&(2, 6)) && !e.contains(&(6, 10)));
        assert_eq!(m.euler_characteristic(), 1);
        assert!(m.check_invariants());
    }

    #[test]
    fn unit_square_hits_target_range() {
        let m = triangulate(&Polygon::unit_square(), 900, 3).unwrap();
        let n = m.n_nodes();
        assert!((630..=1170).contains(&n), "{n} nodes");
        assert_eq!(m.euler_characteristic(), 1);
        assert!(m.min_angle() >= 20.0, "min angle {}", m.min_angle());
        assert!(m.check_invariants());
    }

    #[test]
    fn mesh_text_round_trip() {
        let m = triangulate(&random_convex_polygon(5, 2).unwrap(), 60, 1).unwrap();
        let txt = m.to_text();
        assert!(txt.starts_with("nodes "));
        let back = TriMesh::from_text(txt.as_bytes()).unwrap();
        assert_eq!(m, back);
    }
}
