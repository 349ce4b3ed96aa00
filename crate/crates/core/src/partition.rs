//! Lloyd aggregation into subdomains, overlap extension, and the
//! restriction/interpolation scaffolding built on top of a decomposition.
//!
//! Graph relations use the stored sparsity pattern of `A` (explicit zeros
//! count as edges), so lattice meshes with zero diagonal couplings keep their
//! triangulation connectivity.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::io::BufRead;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sparse::{CsrMatrix, SparsityPattern};

#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub n: usize,
    pub n_subdomains: usize,
    /// DoF → owning subdomain (the non-overlapping sets).
    pub assign: Vec<usize>,
    /// Sorted owned DoFs per subdomain.
    pub owned: Vec<Vec<usize>>,
    /// Sorted overlapped DoF sets per subdomain.
    pub overlap_sets: Vec<Vec<usize>>,
    pub delta: usize,
    /// Sorted DoFs of each overlapped set with a neighbour outside it.
    pub interface_nodes: Vec<Vec<usize>>,
    /// `R0 A R0^T`.
    pub coarse_a: CsrMatrix,
    /// Binary `S x n` assignment operator.
    pub r0: CsrMatrix,
}

fn neighbors(a: &CsrMatrix, v: usize) -> impl Iterator<Item = usize> + '_ {
    a.row_cols(v).iter().copied().filter(move |&w| w != v)
}

/// Multi-source BFS. Returns (owner, distance); sources are claimed in order,
/// so every node's BFS parent shares its owner.
fn multi_source_bfs(a: &CsrMatrix, centers: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let n = a.n_rows;
    let mut owner = vec![usize::MAX; n];
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for (i, &c) in centers.iter().enumerate() {
        if owner[c] == usize::MAX {
            owner[c] = i;
            dist[c] = 0;
            queue.push_back(c);
        }
    }
    while let Some(v) = queue.pop_front() {
        for w in neighbors(a, v) {
            if owner[w] == usize::MAX {
                owner[w] = owner[v];
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
        }
    }
    (owner, dist)
}

pub fn is_connected(a: &CsrMatrix) -> bool {
    a.n_rows == 0 || multi_source_bfs(a, &[0]).0.iter().all(|&o| o != usize::MAX)
}

fn farthest_point_seeds(a: &CsrMatrix, s: usize, first: usize) -> Vec<usize> {
    let mut centers = vec![first];
    while centers.len() < s {
        let (_, dist) = multi_source_bfs(a, &centers);
        let mut best = 0;
        for v in 0..a.n_rows {
            if dist[v] > dist[best] {
                best = v;
            }
        }
        centers.push(best);
    }
    centers
}

/// Node of each aggregate farthest (in hops, inside the aggregate) from the
/// aggregate's boundary; ties go to the lowest index.
fn recenter(a: &CsrMatrix, owner: &[usize], centers: &[usize]) -> Vec<usize> {
    let n = a.n_rows;
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for v in 0..n {
        if neighbors(a, v).any(|w| owner[w] != owner[v]) {
            dist[v] = 0;
            queue.push_back(v);
        }
    }
    while let Some(v) = queue.pop_front() {
        for w in neighbors(a, v) {
            if owner[w] == owner[v] && dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
        }
    }
    let mut out = centers.to_vec();
    let mut best = vec![None::<usize>; centers.len()];
    for v in 0..n {
        // isolated aggregates (no boundary) keep their centre
        if dist[v] == usize::MAX {
            continue;
        }
        let i = owner[v];
        if best[i].is_none_or(|d| dist[v] > d) {
            best[i] = Some(dist[v]);
            out[i] = v;
        }
    }
    out
}

fn sizes(owner: &[usize], s: usize) -> Vec<usize> {
    let mut c = vec![0; s];
    for &o in owner {
        c[o] += 1;
    }
    c
}

/// Lloyd aggregation of the graph of `a` into `s` connected aggregates.
///
/// Farthest-point seeding from a seeded random start, then up to 10
/// assign/recentre sweeps. Aggregates outside `[n/(4s), 4n/s]` trigger a
/// re-seed of the smallest aggregate inside the largest one.
pub fn lloyd_aggregate(a: &CsrMatrix, s: usize, seed: u64) -> Result<Vec<usize>> {
    let n = a.n_rows;
    if s == 0 || s > n {
        return Err(Error::InvalidArgument(format!("subdomain count {s} not in [1, {n}]")));
    }
    if !is_connected(a) {
        return Err(Error::InvalidGraph("matrix graph is disconnected".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = n as f64 / (4.0 * s as f64);
    let hi = 4.0 * n as f64 / s as f64;
    let violation = |sz: &[usize]| -> f64 {
        sz.iter().map(|&c| (lo - c as f64).max(0.0) + (c as f64 - hi).max(0.0)).sum()
    };

    let mut centers = farthest_point_seeds(a, s, rng.gen_range(0..n));
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut reseeds = 0;
    let mut sweeps = 0;
    loop {
        let (owner, dist) = multi_source_bfs(a, &centers);
        let sz = sizes(&owner, s);
        let viol = violation(&sz);
        if best.as_ref().is_none_or(|(v, _)| viol < *v) {
            best = Some((viol, owner.clone()));
        }
        if viol > 0.0 && reseeds < 4 * s + 10 {
            reseeds += 1;
            let small = (0..s).min_by_key(|&i| (sz[i], i)).unwrap();
            let large = (0..s).max_by_key(|&i| (sz[i], usize::MAX - i)).unwrap();
            let far = (0..n)
                .filter(|&v| owner[v] == large && !centers.contains(&v))
                .max_by_key(|&v| (dist[v], usize::MAX - v));
            if let Some(v) = far {
                centers[small] = v;
                continue;
            }
        }
        if sweeps >= 10 {
            break;
        }
        sweeps += 1;
        let next = recenter(a, &owner, &centers);
        if next == centers {
            break;
        }
        centers = next;
    }
    let (owner, _) = multi_source_bfs(a, &centers);
    let viol = violation(&sizes(&owner, s));
    if viol > 0.0 {
        let (bv, bo) = best.unwrap();
        if bv < viol {
            log::warn!("lloyd: balance bound not met (violation {bv})");
            return Ok(bo);
        }
        log::warn!("lloyd: balance bound not met (violation {viol})");
    }
    Ok(owner)
}

/// Builds the decomposition with overlap `delta` by repeated neighbourhood
/// growth of each owned set.
pub fn extend_overlap(assign: &[usize], a: &CsrMatrix, delta: usize) -> Decomposition {
    let n = assign.len();
    assert_eq!(n, a.n_rows, "assignment length differs from matrix size");
    let s = assign.iter().copied().max().map_or(0, |m| m + 1);
    let mut owned = vec![Vec::new(); s];
    for (v, &i) in assign.iter().enumerate() {
        owned[i].push(v);
    }
    let mut overlap_sets = Vec::with_capacity(s);
    let mut interface_nodes = Vec::with_capacity(s);
    let mut member = vec![false; n];
    for set0 in &owned {
        let mut set: BTreeSet<usize> = set0.iter().copied().collect();
        for _ in 0..delta {
            let grown: Vec<usize> = set.iter().flat_map(|&k| a.row_cols(k).iter().copied()).collect();
            set.extend(grown);
        }
        let set: Vec<usize> = set.into_iter().collect();
        for &v in &set {
            member[v] = true;
        }
        let iface: Vec<usize> =
            set.iter().copied().filter(|&v| neighbors(a, v).any(|w| !member[w])).collect();
        for &v in &set {
            member[v] = false;
        }
        overlap_sets.push(set);
        interface_nodes.push(iface);
    }
    let r0 = CsrMatrix::from_triplets(s, n, &assign.iter().enumerate().map(|(v, &i)| (i, v, 1.0)).collect::<Vec<_>>());
    let coarse_a = r0.matmul(a).matmul(&r0.transpose());
    Decomposition { n, n_subdomains: s, assign: assign.to_vec(), owned, overlap_sets, delta, interface_nodes, coarse_a, r0 }
}

impl Decomposition {
    /// Disjoint cover, owned sets inside overlapped sets, and connected owned sets.
    pub fn check_invariants(&self, a: &CsrMatrix) -> bool {
        let mut count = vec![0; self.n];
        for set in &self.owned {
            for &v in set {
                count[v] += 1;
            }
        }
        let cover = count.iter().all(|&c| c == 1);
        let nested = self
            .owned
            .iter()
            .zip(&self.overlap_sets)
            .all(|(o, d)| o.iter().all(|v| d.binary_search(v).is_ok()));
        let connected = self.owned.iter().enumerate().all(|(i, set)| {
            if set.is_empty() {
                return false;
            }
            let mut seen = BTreeSet::from([set[0]]);
            let mut stack = vec![set[0]];
            while let Some(v) = stack.pop() {
                for w in neighbors(a, v) {
                    if self.assign[w] == i && seen.insert(w) {
                        stack.push(w);
                    }
                }
            }
            seen.len() == set.len()
        });
        cover && nested && connected
    }

    /// For each subdomain, position in `overlap_sets[i]` of every owned DoF.
    pub fn owned_local_positions(&self, i: usize) -> Vec<usize> {
        let set = &self.overlap_sets[i];
        set.iter().enumerate().filter(|(_, &v)| self.assign[v] == i).map(|(k, _)| k).collect()
    }

    /// Text dump: header, assignment, then one line per overlapped set.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "decomposition {} {} {}", self.n_subdomains, self.delta, self.n);
        let _ = writeln!(s, "{}", join(&self.assign));
        for (i, set) in self.overlap_sets.iter().enumerate() {
            let _ = writeln!(s, "overlap {} {}", i, set.len());
            let _ = writeln!(s, "{}", join(set));
        }
        s
    }

    /// Parses a dump and rebuilds it against `a`, checking the stored overlap sets.
    pub fn from_text<R: BufRead>(r: R, a: &CsrMatrix) -> Result<Self> {
        let mut lines = r.lines();
        let mut next = || -> Result<String> {
            lines.next().ok_or_else(|| Error::Parse("unexpected end of decomposition".into()))?.map_err(Error::from)
        };
        let head = next()?;
        let h: Vec<&str> = head.split(' ').collect();
        if h.len() != 4 || h[0] != "decomposition" {
            return Err(Error::Parse(format!("bad header `{head}`")));
        }
        let num = |t: &str| t.parse::<usize>().map_err(|_| Error::Parse(format!("bad integer `{t}`")));
        let (s, delta, n) = (num(h[1])?, num(h[2])?, num(h[3])?);
        let assign: Vec<usize> = next()?.split(' ').filter(|t| !t.is_empty()).map(num).collect::<Result<_>>()?;
        if assign.len() != n || n != a.n_rows {
            return Err(Error::Parse("assignment length mismatch".into()));
        }
        let d = extend_overlap(&assign, a, delta);
        if d.n_subdomains != s {
            return Err(Error::Parse("subdomain count mismatch".into()));
        }
        for i in 0..s {
            let _ = next()?;
            let set: Vec<usize> = next()?.split(' ').filter(|t| !t.is_empty()).map(num).collect::<Result<_>>()?;
            if set != d.overlap_sets[i] {
                return Err(Error::Parse(format!("overlap set {i} does not match the matrix")));
            }
        }
        Ok(d)
    }
}

fn join(v: &[usize]) -> String {
    let mut s = String::with_capacity(v.len() * 4);
    for (k, x) in v.iter().enumerate() {
        if k > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{x}");
    }
    s
}

/// Selection operators `R_i` (rows of the overlapped set) and their
/// restricted counterparts keeping only owned rows.
#[derive(Clone, Debug)]
pub struct Restrictions {
    pub r: Vec<CsrMatrix>,
    pub r_tilde: Vec<CsrMatrix>,
}

pub fn restrictions(d: &Decomposition) -> Restrictions {
    let mut r = Vec::with_capacity(d.n_subdomains);
    let mut r_tilde = Vec::with_capacity(d.n_subdomains);
    for (i, set) in d.overlap_sets.iter().enumerate() {
        let all: Vec<_> = set.iter().enumerate().map(|(k, &v)| (k, v, 1.0)).collect();
        let own: Vec<_> = all.iter().copied().filter(|&(_, v, _)| d.assign[v] == i).collect();
        r.push(CsrMatrix::from_triplets(set.len(), d.n, &all));
        r_tilde.push(CsrMatrix::from_triplets(set.len(), d.n, &own));
    }
    Restrictions { r, r_tilde }
}

/// Partition-of-unity interpolation: equal weights over the overlapped sets
/// containing each DoF.
pub fn classical_p(d: &Decomposition) -> CsrMatrix {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); d.n];
    for (i, set) in d.overlap_sets.iter().enumerate() {
        for &v in set {
            members[v].push(i);
        }
    }
    let mut trip = Vec::new();
    for (v, cols) in members.iter().enumerate() {
        let w = 1.0 / cols.len() as f64;
        trip.extend(cols.iter().map(|&i| (v, i, w)));
    }
    CsrMatrix::from_triplets(d.n, d.n_subdomains, &trip)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InterpSparsity {
    /// Own subdomain plus the subdomains of every graph neighbour.
    Neighbors,
    /// Own subdomain only.
    OwnOnly,
}

pub fn interp_sparsity(d: &Decomposition, a: &CsrMatrix, mode: InterpSparsity) -> SparsityPattern {
    let mut pat = SparsityPattern::default();
    for v in 0..d.n {
        let cols: BTreeSet<usize> = match mode {
            InterpSparsity::OwnOnly => BTreeSet::from([d.assign[v]]),
            InterpSparsity::Neighbors => {
                std::iter::once(v).chain(neighbors(a, v)).map(|w| d.assign[w]).collect()
            }
        };
        for c in cols {
            pat.rows.push(v);
            pat.cols.push(c);
        }
    }
    pat
}

/// Allowed interface positions of each subdomain in local (overlapped-set)
/// coordinates: pairs of interface nodes that coincide or are coupled in `a`.
pub fn interface_sparsity(d: &Decomposition, a: &CsrMatrix) -> Vec<SparsityPattern> {
    d.overlap_sets
        .iter()
        .zip(&d.interface_nodes)
        .map(|(set, iface)| {
            let mut pat = SparsityPattern::default();
            for &p in iface {
                let lp = set.binary_search(&p).unwrap();
                for &q in a.row_cols(p) {
                    if iface.binary_search(&q).is_ok() {
                        pat.rows.push(lp);
                        pat.cols.push(set.binary_search(&q).unwrap());
                    }
                }
                if a.find(p, p).is_none() {
                    pat.rows.push(lp);
                    pat.cols.push(lp);
                }
            }
            pat
        })
        .collect()
}

/// Coarse level of the graph: `X1 = R0 X0`, `A1 = R0 A R0^T`.
pub fn coarse_graph(d: &Decomposition, a: &CsrMatrix, x0: ArrayView2<f64>) -> (CsrMatrix, Array2<f64>) {
    let a1 = d.r0.matmul(a).matmul(&d.r0.transpose());
    (a1, d.r0.spmm(x0))
}

/// Default subdomain count, about 100 DoFs each.
pub fn default_subdomains(n: usize) -> usize {
    n.div_ceil(100).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn path(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, n, &t)
    }

    #[test]
    fn single_aggregate() {
        let a = path(7);
        assert_eq!(lloyd_aggregate(&a, 1, 3).unwrap(), vec![0; 7]);
    }

    #[test]
    fn path_splits_into_intervals() {
        let a = path(10);
        for seed in 0..20 {
            let assign = lloyd_aggregate(&a, 2, seed).unwrap();
            let changes = assign.windows(2).filter(|w| w[0] != w[1]).count();
            assert_eq!(changes, 1, "seed {seed}: {assign:?}");
            let d = extend_overlap(&assign, &a, 0);
            assert!(d.check_invariants(&a));
        }
    }

    #[test]
    fn disconnected_graph_rejected() {
        let a = CsrMatrix::from_triplets(3, 3, &[(0, 0, 1.0), (1, 1, 1.0), (2, 2, 1.0), (0, 1, 1.0), (1, 0, 1.0)]);
        assert!(matches!(lloyd_aggregate(&a, 2, 0), Err(Error::InvalidGraph(_))));
        assert!(matches!(lloyd_aggregate(&path(3), 4, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn overlap_recursion_by_hand() {
        let a = path(5);
        let d = extend_overlap(&[0, 0, 1, 1, 1], &a, 1);
        assert_eq!(d.overlap_sets[0], vec![0, 1, 2]);
        assert_eq!(d.overlap_sets[1], vec![1, 2, 3, 4]);
        let d0 = extend_overlap(&[0, 0, 1, 1, 1], &a, 0);
        assert_eq!(d0.overlap_sets, d0.owned);
    }

    #[test]
    fn restrictions_partition_unity() {
        let a = path(9);
        let d = extend_overlap(&[0, 0, 0, 1, 1, 1, 2, 2, 2], &a, 1);
        let r = restrictions(&d);
        let ones = vec![1.0; 9];
        let mut acc = vec![0.0; 9];
        for (ri, rti) in r.r.iter().zip(&r.r_tilde) {
            let local = ri.spmv(&ones);
            for (x, y) in acc.iter_mut().zip(rti.spmv_transpose(&local)) {
                *x += y;
            }
        }
        assert_eq!(acc, ones);

        let d0 = extend_overlap(&[0; 4], &path(4), 0);
        let r0 = restrictions(&d0);
        assert_eq!(r0.r[0].to_dense(), CsrMatrix::identity(4).to_dense());
        assert_eq!(r0.r[0], r0.r_tilde[0]);
    }

    #[test]
    fn classical_p_weights() {
        let a = path(6);
        let d = extend_overlap(&[0, 0, 0, 1, 1, 1], &a, 1);
        let p = classical_p(&d);
        assert_eq!(p.get(2, 0), 0.5);
        assert_eq!(p.get(2, 1), 0.5);
        assert_eq!(p.get(0, 0), 1.0);
        let d0 = extend_overlap(&[0, 0, 0, 1, 1, 1], &a, 0);
        assert_eq!(classical_p(&d0), d0.r0.transpose());
    }

    #[test]
    fn sparsity_patterns_by_hand() {
        let a = path(5);
        let d = extend_overlap(&[0, 0, 0, 1, 1], &a, 0);
        let ip = interface_sparsity(&d, &a);
        assert_eq!(d.interface_nodes[0], vec![2]);
        assert_eq!(ip[0].iter().collect::<Vec<_>>(), vec![(2, 2)]);
        assert_eq!(ip[1].iter().collect::<Vec<_>>(), vec![(0, 0)]);

        let nb = interp_sparsity(&d, &a, InterpSparsity::Neighbors);
        let rows_of = |v: usize| nb.iter().filter(|&(r, _)| r == v).map(|(_, c)| c).collect::<Vec<_>>();
        assert_eq!(rows_of(2), vec![0, 1]);
        assert_eq!(rows_of(3), vec![0, 1]);
        assert_eq!(rows_of(0), vec![0]);
        let own = interp_sparsity(&d, &a, InterpSparsity::OwnOnly);
        assert_eq!(own.len(), 5);

        let single = extend_overlap(&[0; 5], &a, 1);
        assert!(interface_sparsity(&single, &a)[0].is_empty());
    }

    #[test]
    fn coarse_graph_sums() {
        let a = path(5);
        let d = extend_overlap(&[0, 0, 0, 1, 1], &a, 0);
        let (a1, x1) = coarse_graph(&d, &a, Array2::ones((5, 1)).view());
        assert_eq!(a1.get(0, 1), -1.0);
        assert_eq!(a1.get(0, 0), 6.0 - 4.0);
        assert_eq!(x1[[0, 0]], 3.0);
        assert_eq!(x1[[1, 0]], 2.0);
        let one = extend_overlap(&[0; 5], &a, 0);
        let total: f64 = a.values.iter().sum();
        assert_eq!(one.coarse_a.get(0, 0), total);
    }

    #[test]
    fn dump_round_trip() {
        let a = path(8);
        let d = extend_overlap(&[0, 0, 0, 1, 1, 2, 2, 2], &a, 1);
        let txt = d.to_text();
        let back = Decomposition::from_text(txt.as_bytes(), &a).unwrap();
        assert_eq!(d, back);
    }
}
