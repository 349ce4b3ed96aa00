//! Two-level multigrid graph network producing interface values for the
//! subdomain matrices and the coarse interpolation operator.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, Tape, Var};
use crate::error::{Error, Result};
use crate::partition::{coarse_graph, interface_sparsity, interp_sparsity, Decomposition, InterpSparsity};
use crate::sparse::CsrMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    Mggnn,
    /// Sequential down-then-up wiring of the same parameters.
    UnetAblation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub encoder_layers: usize,
    pub layers: usize,
    /// TAGConv hop count `J`.
    pub hops: usize,
    pub arch: Arch,
    pub sparsity: InterpSparsity,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: 128, encoder_layers: 3, layers: 4, hops: 3, arch: Arch::Mggnn, sparsity: InterpSparsity::Neighbors }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.encoder_layers == 0 || self.layers == 0 || self.layers > 6 {
            return Err(Error::Config(format!("model needs hidden >= 1, encoder_layers >= 1, layers in 1..=6 (got {self:?})")));
        }
        Ok(())
    }
}

/// `D^{-1/2} (|A| off the diagonal + I) D^{-1/2}`.
pub fn normalized_adjacency(a: &CsrMatrix) -> CsrMatrix {
    let mut trip = Vec::with_capacity(a.nnz() + a.n_rows);
    for i in 0..a.n_rows {
        trip.push((i, i, 1.0));
        for (j, v) in a.row(i) {
            if j != i {
                trip.push((i, j, v.abs()));
            }
        }
    }
    let w = CsrMatrix::from_triplets(a.n_rows, a.n_cols, &trip);
    let deg: Vec<f64> = (0..w.n_rows).map(|i| w.row(i).map(|(_, v)| v).sum()).collect();
    let mut out = w.clone();
    for i in 0..w.n_rows {
        for k in w.row_range(i) {
            out.values[k] = w.values[k] / (deg[i] * deg[w.col_idx[k]]).sqrt();
        }
    }
    out
}

/// Graph inputs of one grid at both levels.
#[derive(Clone, Debug)]
pub struct GraphPair {
    pub n: usize,
    pub s: usize,
    pub fine_adj: Arc<CsrMatrix>,
    pub coarse_adj: Arc<CsrMatrix>,
    /// Binary subdomain-interface indicator, `n x 1`.
    pub x0: Mat,
    /// `R0 x0`, `s x 1`.
    pub x1: Mat,
    /// Interpolation pattern (`n x s`) valued with the uniform cross-edge feature.
    pub p_pattern: Arc<CsrMatrix>,
    pub p_row_ptr: Arc<Vec<usize>>,
    pub cross_fine: Arc<Vec<usize>>,
    pub cross_coarse: Arc<Vec<usize>>,
    /// Directed fine edges `(src, dst)` carrying interface values.
    pub iface_src: Arc<Vec<usize>>,
    pub iface_dst: Arc<Vec<usize>>,
    /// Index of the reversed edge.
    pub iface_partner: Arc<Vec<usize>>,
    /// Matrix entry of each interface edge, `e x 1`.
    pub iface_feat: Mat,
    /// Per subdomain: `(interface edge, local row, local col)`.
    pub iface_maps: Vec<Arc<Vec<(usize, usize, usize)>>>,
    pub subdomain_sizes: Vec<usize>,
}

impl GraphPair {
    pub fn n_interface_edges(&self) -> usize {
        self.iface_src.len()
    }

    /// Local interface matrices from one value per interface edge.
    pub fn interface_matrices(&self, vals: &[f64]) -> Vec<CsrMatrix> {
        self.iface_maps
            .iter()
            .zip(&self.subdomain_sizes)
            .map(|(map, &k)| {
                let trip: Vec<_> = map.iter().map(|&(e, r, c)| (r, c, vals[e])).collect();
                CsrMatrix::from_triplets(k, k, &trip)
            })
            .collect()
    }
}

pub fn featurize(a: &CsrMatrix, d: &Decomposition, sparsity: InterpSparsity) -> Result<GraphPair> {
    let n = a.n_rows;
    let mut x0 = Mat::zeros((n, 1));
    for set in &d.interface_nodes {
        for &v in set {
            x0[[v, 0]] = 1.0;
        }
    }
    let (a1, x1) = coarse_graph(d, a, x0.view());

    let pat = interp_sparsity(d, a, sparsity).to_csr(n, d.n_subdomains, 1.0);
    let mut p_pattern = pat.clone();
    let mut cross_fine = Vec::with_capacity(pat.nnz());
    for v in 0..n {
        let r = pat.row_range(v);
        let w = 1.0 / r.len() as f64;
        for k in r {
            p_pattern.values[k] = w;
            cross_fine.push(v);
        }
    }

    let pats = interface_sparsity(d, a);
    let mut edges = BTreeSet::new();
    for (set, p) in d.overlap_sets.iter().zip(&pats) {
        for (lr, lc) in p.iter() {
            edges.insert((set[lr], set[lc]));
        }
    }
    let edge_list: Vec<(usize, usize)> = edges.into_iter().collect();
    let index: HashMap<(usize, usize), usize> = edge_list.iter().enumerate().map(|(e, &pq)| (pq, e)).collect();
    let mut iface_feat = Mat::zeros((edge_list.len(), 1));
    let mut partner = Vec::with_capacity(edge_list.len());
    for (e, &(p, q)) in edge_list.iter().enumerate() {
        iface_feat[[e, 0]] = a.get(p, q);
        partner.push(*index.get(&(q, p)).ok_or_else(|| Error::InvalidGraph("interface pattern is not symmetric".into()))?);
    }
    let iface_maps = d
        .overlap_sets
        .iter()
        .zip(&pats)
        .map(|(set, p)| Arc::new(p.iter().map(|(lr, lc)| (index[&(set[lr], set[lc])], lr, lc)).collect::<Vec<_>>()))
        .collect();

    Ok(GraphPair {
        n,
        s: d.n_subdomains,
        fine_adj: Arc::new(normalized_adjacency(a)),
        coarse_adj: Arc::new(normalized_adjacency(&a1)),
        x0,
        x1,
        p_row_ptr: Arc::new(pat.row_ptr.clone()),
        cross_coarse: Arc::new(pat.col_idx.clone()),
        p_pattern: Arc::new(p_pattern),
        cross_fine: Arc::new(cross_fine),
        iface_src: Arc::new(edge_list.iter().map(|e| e.0).collect()),
        iface_dst: Arc::new(edge_list.iter().map(|e| e.1).collect()),
        iface_partner: Arc::new(partner),
        iface_feat,
        iface_maps,
        subdomain_sizes: d.overlap_sets.iter().map(Vec::len).collect(),
    })
}

/// Typical number of fine nodes summed into one coarse node.
pub const DOWN_FAN_IN: f64 = 100.0;

/// Named parameter arrays in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub names: Vec<String>,
    pub arrays: Vec<Mat>,
    index: HashMap<String, usize>,
}

fn mlp_layout(out: &mut Vec<(String, (usize, usize))>, prefix: &str, dims: &[usize]) {
    for (k, w) in dims.windows(2).enumerate() {
        out.push((format!("{prefix}.{k}.w"), (w[0], w[1])));
        out.push((format!("{prefix}.{k}.b"), (1, w[1])));
    }
}

fn split_mlp_layout(out: &mut Vec<(String, (usize, usize))>, prefix: &str, h: usize, final_out: Option<usize>) {
    for part in ["wa", "wb", "we"] {
        out.push((format!("{prefix}.{part}"), (h, h)));
    }
    out.push((format!("{prefix}.b1"), (1, h)));
    out.push((format!("{prefix}.w2"), (h, h)));
    out.push((format!("{prefix}.b2"), (1, h)));
    if let Some(o) = final_out {
        out.push((format!("{prefix}.w3"), (h, o)));
        out.push((format!("{prefix}.b3"), (1, o)));
    }
}

impl ModelParams {
    pub fn layout(cfg: &ModelConfig) -> Vec<(String, (usize, usize))> {
        let h = cfg.hidden;
        let taps = cfg.hops + 1;
        let mut out = Vec::new();
        let enc: Vec<usize> = std::iter::once(1).chain(std::iter::repeat_n(h, cfg.encoder_layers)).collect();
        for name in ["enc.node0", "enc.node1", "enc.cross", "enc.iface"] {
            mlp_layout(&mut out, name, &enc);
        }
        for l in 0..cfg.layers {
            for lvl in 0..2 {
                out.push((format!("layer{l}.same{lvl}.w"), (h * taps, h)));
                out.push((format!("layer{l}.same{lvl}.b"), (1, h)));
            }
            split_mlp_layout(&mut out, &format!("layer{l}.down"), h, None);
            split_mlp_layout(&mut out, &format!("layer{l}.up"), h, None);
            for lvl in 0..2 {
                out.push((format!("layer{l}.gnn{lvl}.w"), (2 * h * taps, h)));
                out.push((format!("layer{l}.gnn{lvl}.b"), (1, h)));
            }
        }
        split_mlp_layout(&mut out, "head.iface", h, Some(1));
        split_mlp_layout(&mut out, "head.interp", h, Some(1));
        out
    }

    fn from_arrays(config: ModelConfig, names: Vec<String>, arrays: Vec<Mat>) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { config, names, arrays, index }
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        let layout = Self::layout(cfg);
        let arrays = layout.iter().map(|(_, s)| Mat::zeros(*s)).collect();
        Self::from_arrays(cfg.clone(), layout.into_iter().map(|(n, _)| n).collect(), arrays)
    }

    /// Glorot-uniform weights and zero biases, except that the last layer of
    /// both heads is zero and the interpolation head's output bias is one:
    /// the untrained model yields zero interface values and the classical
    /// partition-of-unity interpolation. The fine-to-coarse message output
    /// layer is scaled by `1 / DOWN_FAN_IN` so summed messages stay O(1).
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut p = Self::random(cfg, seed, false);
        for l in 0..cfg.layers {
            p.get_mut(&format!("layer{l}.down.w2")).mapv_inplace(|v| v / DOWN_FAN_IN);
        }
        for name in ["head.iface.w3", "head.iface.b3", "head.interp.w3"] {
            p.get_mut(name).fill(0.0);
        }
        p.get_mut("head.interp.b3").fill(1.0);
        p
    }

    /// Glorot-uniform weights everywhere; with `random_bias` the biases are
    /// drawn from `U(-0.1, 0.1)` instead of zero.
    pub fn random(cfg: &ModelConfig, seed: u64, random_bias: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(cfg);
        for (name, arr) in p.names.iter().zip(p.arrays.iter_mut()) {
            let (r, c) = arr.dim();
            let is_bias = r == 1 && name.rsplit('.').next().is_some_and(|s| s.starts_with('b'));
            if is_bias {
                if random_bias {
                    arr.mapv_inplace(|_| rng.gen_range(-0.1..0.1));
                }
            } else {
                let lim = (6.0 / (r + c) as f64).sqrt();
                arr.mapv_inplace(|_| rng.gen_range(-lim..lim));
            }
        }
        p
    }

    pub fn get(&self, name: &str) -> &Mat {
        &self.arrays[self.index[name]]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Mat {
        let i = self.index[name];
        &mut self.arrays[i]
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn n_scalars(&self) -> usize {
        self.arrays.iter().map(Mat::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.arrays.iter().all(|a| a.iter().all(|v| v.is_finite()))
    }

    /// Tape variables for every array, trainable or constant.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let vars = self
            .arrays
            .iter()
            .map(|a| if trainable { tape.leaf(a.clone()) } else { tape.constant(a.clone()) })
            .collect();
        BoundParams { vars, index: self.index.clone() }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = Manifest {
            config: self.config.clone(),
            arrays: self.names.iter().zip(&self.arrays).map(|(n, a)| ArrayEntry { name: n.clone(), shape: [a.nrows(), a.ncols()] }).collect(),
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(20 + json.len() + 8 * self.n_scalars());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for a in &self.arrays {
            for v in a.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Parse(format!("checkpoint: {m}"));
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("missing magic header"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let mlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..20 + mlen).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(body)?;
        let mut off = 20 + mlen;
        let mut names = Vec::new();
        let mut arrays = Vec::new();
        for e in manifest.arrays {
            let len = e.shape[0] * e.shape[1];
            let raw = bytes.get(off..off + 8 * len).ok_or_else(|| bad("truncated data"))?;
            let vals: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            arrays.push(Mat::from_shape_vec((e.shape[0], e.shape[1]), vals).map_err(|e| bad(&e.to_string()))?);
            names.push(e.name);
            off += 8 * len;
        }
        if off != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        let expected: Vec<_> = Self::layout(&manifest.config);
        if expected.len() != names.len() || expected.iter().zip(&names).zip(&arrays).any(|(((n, s), m), a)| n != m || *s != a.dim()) {
            return Err(bad("arrays do not match the configured layout"));
        }
        Ok(Self::from_arrays(manifest.config, names, arrays))
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes()?)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::FileNotFound(path.to_path_buf()));
        }
        Self::from_bytes(&fs::read(path)?)
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"LSCHWCKP";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: [usize; 2],
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    arrays: Vec<ArrayEntry>,
}

pub struct BoundParams {
    pub vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Var {
        self.vars[self.index[name]]
    }
}

fn linear(t: &mut Tape, bp: &BoundParams, x: Var, w: &str, b: &str) -> Result<Var> {
    let y = t.matmul(x, bp.get(w))?;
    t.add_bias(y, bp.get(b))
}

fn encoder(t: &mut Tape, bp: &BoundParams, prefix: &str, layers: usize, x: Var) -> Result<Var> {
    let mut h = x;
    for k in 0..layers {
        let y = linear(t, bp, h, &format!("{prefix}.{k}.w"), &format!("{prefix}.{k}.b"))?;
        h = t.relu(y);
    }
    Ok(h)
}

/// `sum_j (M^j X) W_j + b` with the `J + 1` blocks of `W` stacked by rows.
pub fn tagconv(t: &mut Tape, x: Var, adj: &Arc<CsrMatrix>, w: Var, b: Var, hops: usize) -> Result<Var> {
    let mut taps = vec![x];
    for _ in 0..hops {
        let last = *taps.last().unwrap();
        taps.push(t.spmm_const(adj, last)?);
    }
    let stacked = if taps.len() == 1 { x } else { t.concat_cols(&taps)? };
    let y = t.matmul(stacked, w)?;
    t.add_bias(y, b)
}

/// Weights of a two-layer message or head MLP whose first layer acts on
/// `[x_dst, x_src, e]`.
#[derive(Clone, Copy)]
pub struct SplitMlp {
    pub wa: Var,
    pub wb: Var,
    pub we: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl SplitMlp {
    pub fn bind(bp: &BoundParams, prefix: &str) -> Self {
        let g = |s: &str| bp.get(&format!("{prefix}.{s}"));
        Self { wa: g("wa"), wb: g("wb"), we: g("we"), b1: g("b1"), w2: g("w2"), b2: g("b2") }
    }

    /// Hidden features of every edge `(a[k], b[k])`; the node projections are
    /// applied before gathering.
    fn hidden(&self, t: &mut Tape, xa: Var, ia: &Arc<Vec<usize>>, xb: Var, ib: &Arc<Vec<usize>>, e: Var) -> Result<Var> {
        let pa = t.matmul(xa, self.wa)?;
        let pa = t.gather_rows(pa, ia)?;
        let pb = t.matmul(xb, self.wb)?;
        let pb = t.gather_rows(pb, ib)?;
        let pe = t.matmul(e, self.we)?;
        let s = t.add(pa, pb)?;
        let s = t.add(s, pe)?;
        let s = t.add_bias(s, self.b1)?;
        let h1 = t.relu(s);
        let y = t.matmul(h1, self.w2)?;
        let y = t.add_bias(y, self.b2)?;
        Ok(t.relu(y))
    }
}

/// `m_v = sum over edges (v, w) of f(x_v, x_w, e_vw)`, `n_dst` rows.
#[allow(clippy::too_many_arguments)]
pub fn cross_message(
    t: &mut Tape,
    f: &SplitMlp,
    x_dst: Var,
    dst: &Arc<Vec<usize>>,
    x_src: Var,
    src: &Arc<Vec<usize>>,
    e: Var,
    n_dst: usize,
) -> Result<Var> {
    let h = f.hidden(t, x_dst, dst, x_src, src, e)?;
    t.scatter_add_rows(h, dst, n_dst)
}

pub struct TapeOutput {
    /// Symmetrized value per interface edge.
    pub interface: Var,
    /// Interpolation values in the CSR order of `GraphPair::p_pattern`.
    pub p_vals: Var,
    pub fallbacks: usize,
}

struct Layer {
    same: [(Var, Var); 2],
    gnn: [(Var, Var); 2],
    down: SplitMlp,
    up: SplitMlp,
}

impl Layer {
    fn bind(bp: &BoundParams, l: usize) -> Self {
        let pair = |s: &str| (bp.get(&format!("layer{l}.{s}.w")), bp.get(&format!("layer{l}.{s}.b")));
        Self {
            same: [pair("same0"), pair("same1")],
            gnn: [pair("gnn0"), pair("gnn1")],
            down: SplitMlp::bind(bp, &format!("layer{l}.down")),
            up: SplitMlp::bind(bp, &format!("layer{l}.up")),
        }
    }
}

/// One layer over both levels, returning the updated `(fine, coarse)` features.
pub fn mggnn_layer(t: &mut Tape, bp: &BoundParams, l: usize, cfg: &ModelConfig, g: &GraphPair, x0: Var, x1: Var, ec: Var) -> Result<(Var, Var)> {
    let p = Layer::bind(bp, l);
    let j = cfg.hops;
    let conv = |t: &mut Tape, x: Var, lvl: usize, (w, b): (Var, Var)| -> Result<Var> {
        let adj = if lvl == 0 { &g.fine_adj } else { &g.coarse_adj };
        let y = tagconv(t, x, adj, w, b, j)?;
        Ok(t.relu(y))
    };
    match cfg.arch {
        Arch::Mggnn => {
            let s0 = conv(t, x0, 0, p.same[0])?;
            let s1 = conv(t, x1, 1, p.same[1])?;
            let m1 = cross_message(t, &p.down, x1, &g.cross_coarse, x0, &g.cross_fine, ec, g.s)?;
            let m0 = cross_message(t, &p.up, x0, &g.cross_fine, x1, &g.cross_coarse, ec, g.n)?;
            let c0 = t.concat_cols(&[s0, m0])?;
            let c1 = t.concat_cols(&[s1, m1])?;
            Ok((conv(t, c0, 0, p.gnn[0])?, conv(t, c1, 1, p.gnn[1])?))
        }
        Arch::UnetAblation => {
            let s0 = conv(t, x0, 0, p.same[0])?;
            let m1 = cross_message(t, &p.down, x1, &g.cross_coarse, s0, &g.cross_fine, ec, g.s)?;
            let s1 = conv(t, x1, 1, p.same[1])?;
            let c1 = t.concat_cols(&[s1, m1])?;
            let y1 = conv(t, c1, 1, p.gnn[1])?;
            let m0 = cross_message(t, &p.up, s0, &g.cross_fine, y1, &g.cross_coarse, ec, g.n)?;
            let c0 = t.concat_cols(&[s0, m0])?;
            Ok((conv(t, c0, 0, p.gnn[0])?, y1))
        }
    }
}

fn head(t: &mut Tape, bp: &BoundParams, prefix: &str, xa: Var, ia: &Arc<Vec<usize>>, xb: Var, ib: &Arc<Vec<usize>>, e: Var) -> Result<Var> {
    let f = SplitMlp::bind(bp, prefix);
    let h = f.hidden(t, xa, ia, xb, ib, e)?;
    linear(t, bp, h, &format!("{prefix}.w3"), &format!("{prefix}.b3"))
}

/// Encoded node features after all layers, `(fine, coarse, cross-edge)`.
pub fn embed(t: &mut Tape, bp: &BoundParams, cfg: &ModelConfig, g: &GraphPair) -> Result<(Var, Var, Var)> {
    let el = cfg.encoder_layers;
    let x0 = t.constant(g.x0.clone());
    let x1 = t.constant(g.x1.clone());
    let cross = t.constant(Mat::from_shape_vec((g.p_pattern.nnz(), 1), g.p_pattern.values.clone()).expect("column"));
    let mut x0 = encoder(t, bp, "enc.node0", el, x0)?;
    let mut x1 = encoder(t, bp, "enc.node1", el, x1)?;
    let ec = encoder(t, bp, "enc.cross", el, cross)?;
    for l in 0..cfg.layers {
        (x0, x1) = mggnn_layer(t, bp, l, cfg, g, x0, x1, ec)?;
    }
    Ok((x0, x1, ec))
}

pub fn forward_tape(t: &mut Tape, bp: &BoundParams, cfg: &ModelConfig, g: &GraphPair) -> Result<TapeOutput> {
    let (x0, x1, ec) = embed(t, bp, cfg, g)?;
    let interface = if g.n_interface_edges() == 0 {
        t.constant(Mat::zeros((0, 1)))
    } else {
        let feat = t.constant(g.iface_feat.clone());
        let ei = encoder(t, bp, "enc.iface", cfg.encoder_layers, feat)?;
        let raw = head(t, bp, "head.iface", x0, &g.iface_src, x0, &g.iface_dst, ei)?;
        let rev = t.gather_rows(raw, &g.iface_partner)?;
        let sum = t.add(raw, rev)?;
        t.scale(sum, 0.5)
    };
    let raw = head(t, bp, "head.interp", x0, &g.cross_fine, x1, &g.cross_coarse, ec)?;
    let (p_vals, fallbacks) = t.group_normalize(raw, &g.p_row_ptr)?;
    Ok(TapeOutput { interface, p_vals, fallbacks })
}

/// Model outputs as matrices.
#[derive(Clone, Debug)]
pub struct ModelOutput {
    /// One local matrix per subdomain on its interface pattern.
    pub interface: Vec<CsrMatrix>,
    pub interface_values: Vec<f64>,
    pub p: CsrMatrix,
    pub fallbacks: usize,
}

pub fn forward(params: &ModelParams, g: &GraphPair) -> Result<ModelOutput> {
    let mut t = Tape::new();
    let bp = params.bind(&mut t, false);
    let out = forward_tape(&mut t, &bp, &params.config, g)?;
    let vals: Vec<f64> = t.value(out.interface).column(0).to_vec();
    let p = g.p_pattern.with_values(t.value(out.p_vals).column(0).to_vec());
    Ok(ModelOutput { interface: g.interface_matrices(&vals), interface_values: vals, p, fallbacks: out.fallbacks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::assemble_poisson;
    use crate::meshgen::{random_convex_polygon, triangulate};
    use crate::partition::{classical_p, extend_overlap, lloyd_aggregate};

    fn small() -> ModelConfig {
        ModelConfig { hidden: 8, encoder_layers: 2, layers: 2, hops: 2, ..Default::default() }
    }

    fn grid(nodes: usize, s: usize, seed: u64) -> (CsrMatrix, Decomposition) {
        let mesh = triangulate(&random_convex_polygon(6, seed).unwrap(), nodes, seed).unwrap();
        let a = assemble_poisson(&mesh).unwrap().a;
        let d = extend_overlap(&lloyd_aggregate(&a, s, seed).unwrap(), &a, 1);
        (a, d)
    }

    fn path(n: usize) -> CsrMatrix {
        let mut trip = vec![];
        for i in 0..n {
            trip.push((i, i, 2.0));
            if i + 1 < n {
                trip.push((i, i + 1, -1.0));
                trip.push((i + 1, i, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, n, &trip)
    }

    #[test]
    fn features_on_small_graphs() {
        let a = path(5);
        let one = extend_overlap(&[0; 5], &a, 1);
        let g = featurize(&a, &one, InterpSparsity::Neighbors).unwrap();
        assert!(g.x0.iter().all(|&v| v == 0.0));
        assert_eq!(g.n_interface_edges(), 0);

        let two = extend_overlap(&[0, 0, 0, 1, 1], &a, 0);
        let g = featurize(&a, &two, InterpSparsity::Neighbors).unwrap();
        assert_eq!(g.x0.column(0).to_vec(), vec![0.0, 0.0, 1.0, 1.0, 0.0]);
        assert_eq!(g.x1.column(0).to_vec(), vec![1.0, 1.0]);
        let (_, counts) = coarse_graph(&two, &a, Mat::ones((5, 1)).view());
        assert_eq!(counts.column(0).to_vec(), vec![3.0, 2.0]);
        // seam node 2 sees both aggregates, each with weight one half
        let r = g.p_pattern.row_range(2);
        assert_eq!(r.len(), 2);
        assert!(g.p_pattern.values[r].iter().all(|&w| w == 0.5));
    }

    #[test]
    fn tagconv_cases() {
        let adj = Arc::new(normalized_adjacency(&path(10)));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Mat::from_shape_fn((10, 2), |_| rng.gen_range(-1.0..1.0));
        let w = Mat::from_shape_fn((8, 3), |_| rng.gen_range(-1.0..1.0));
        let b = Mat::from_shape_fn((1, 3), |_| rng.gen_range(-1.0..1.0));
        let mut t = Tape::new();
        let (xv, wv, bv) = (t.constant(x.clone()), t.constant(w.clone()), t.constant(b.clone()));
        let y = tagconv(&mut t, xv, &adj, wv, bv, 3).unwrap();
        let m = adj.to_dense();
        let mut expect = Mat::zeros((10, 3)) + &b;
        let mut mj = Mat::eye(10);
        for j in 0..4 {
            expect = expect + mj.dot(&x).dot(&w.slice(ndarray::s![2 * j..2 * j + 2, ..]));
            mj = mj.dot(&m);
        }
        assert!((t.value(y) - &expect).iter().all(|d| d.abs() < 1e-12));

        let w0 = t.constant(w.slice(ndarray::s![0..2, ..]).to_owned());
        let y0 = tagconv(&mut t, xv, &adj, w0, bv, 0).unwrap();
        assert!((t.value(y0) - &(x.dot(&w.slice(ndarray::s![0..2, ..])) + &b)).iter().all(|d| d.abs() < 1e-14));

        let x1 = t.constant(x.slice(ndarray::s![.., 0..1]).to_owned());
        let sel = t.constant(ndarray::array![[0.0], [1.0]]);
        let zero = t.constant(Mat::zeros((1, 1)));
        let y1 = tagconv(&mut t, x1, &adj, sel, zero, 1).unwrap();
        let mx = m.dot(&x.slice(ndarray::s![.., 0..1]));
        assert!((t.value(y1) - &mx).iter().all(|d| d.abs() < 1e-14));
    }

    #[test]
    fn message_sums() {
        let p = ModelParams::random(&small(), 3, true);
        let mut t = Tape::new();
        let bp = p.bind(&mut t, false);
        let f = SplitMlp::bind(&bp, "layer0.down");
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xd = t.constant(Mat::from_shape_fn((3, 8), |_| rng.gen_range(-1.0..1.0)));
        let xs = t.constant(Mat::from_shape_fn((4, 8), |_| rng.gen_range(-1.0..1.0)));
        let e = t.constant(Mat::from_shape_fn((3, 8), |_| rng.gen_range(-1.0..1.0)));
        let dst = Arc::new(vec![0, 0, 2]);
        let src = Arc::new(vec![1, 3, 2]);
        let m = cross_message(&mut t, &f, xd, &dst, xs, &src, e, 3).unwrap();
        assert!(t.value(m).row(1).iter().all(|&v| v == 0.0));
        // single neighbour
        let e2 = t.gather_rows(e, &Arc::new(vec![2])).unwrap();
        let single = cross_message(&mut t, &f, xd, &Arc::new(vec![2]), xs, &Arc::new(vec![2]), e2, 3).unwrap();
        assert!((&t.value(m).row(2) - &t.value(single).row(2)).iter().all(|d| d.abs() < 1e-14));
        // edge order does not matter
        let e_rev = t.gather_rows(e, &Arc::new(vec![1, 0, 2])).unwrap();
        let m2 = cross_message(&mut t, &f, xd, &dst, xs, &Arc::new(vec![3, 1, 2]), e_rev, 3).unwrap();
        assert!((t.value(m) - t.value(m2)).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn zero_parameters_give_bias_broadcasts() {
        let (a, d) = grid(120, 3, 5);
        let g = featurize(&a, &d, InterpSparsity::Neighbors).unwrap();
        let cfg = small();
        let mut p = ModelParams::zeros(&cfg);
        p.get_mut("layer1.gnn0.b").fill(0.25);
        let mut t = Tape::new();
        let bp = p.bind(&mut t, false);
        let (x0, x1, _) = embed(&mut t, &bp, &cfg, &g).unwrap();
        assert_eq!(t.value(x0).dim(), (g.n, 8));
        assert_eq!(t.value(x1).dim(), (g.s, 8));
        assert!(t.value(x0).iter().all(|&v| v == 0.25));
        assert!(t.value(x1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn outputs_respect_constraints() {
        let (a, d) = grid(150, 3, 6);
        let g = featurize(&a, &d, InterpSparsity::Neighbors).unwrap();
        let p = ModelParams::random(&small(), 7, true);
        let out = forward(&p, &g).unwrap();
        for r in 0..out.p.n_rows {
            let s: f64 = out.p.row(r).map(|(_, v)| v).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let pats = interface_sparsity(&d, &a);
        for (l, pat) in out.interface.iter().zip(&pats) {
            for r in 0..l.n_rows {
                for (c, v) in l.row(r) {
                    assert!(v == 0.0 || pat.contains(r, c));
                    assert!((v - l.get(c, r)).abs() < 1e-15);
                }
            }
        }
        assert!(out.interface_values.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn own_only_interpolation_is_assignment() {
        let (a, d) = grid(150, 3, 8);
        let g = featurize(&a, &d, InterpSparsity::OwnOnly).unwrap();
        let out = forward(&ModelParams::random(&small(), 9, true), &g).unwrap();
        assert_eq!(out.p.nnz(), d.n);
        for v in 0..d.n {
            assert_eq!(out.p.get(v, d.assign[v]), 1.0);
        }
    }

    #[test]
    fn default_init_reproduces_classical_operators() {
        let (a, d) = grid(150, 3, 10);
        let g = featurize(&a, &d, InterpSparsity::Neighbors).unwrap();
        let out = forward(&ModelParams::init(&small(), 11), &g).unwrap();
        assert!(out.interface_values.iter().all(|&v| v == 0.0));
        let cp = classical_p(&d);
        assert_eq!(cp.row_ptr, out.p.row_ptr);
        assert_eq!(cp.col_idx, out.p.col_idx);
        assert!(cp.values.iter().zip(&out.p.values).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn fine_relabelling_permutes_outputs() {
        let (a, d) = grid(120, 3, 12);
        let n = a.n_rows;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let trip: Vec<_> = (0..n).flat_map(|r| a.row(r).map(move |(c, v)| (r, c, v)).collect::<Vec<_>>()).map(|(r, c, v)| (perm[r], perm[c], v)).collect();
        let pa = CsrMatrix::from_triplets(n, n, &trip);
        let mut assign = vec![0; n];
        for v in 0..n {
            assign[perm[v]] = d.assign[v];
        }
        let pd = extend_overlap(&assign, &pa, 1);
        let params = ModelParams::random(&small(), 14, true);
        let o1 = forward(&params, &featurize(&a, &d, InterpSparsity::Neighbors).unwrap()).unwrap();
        let g2 = featurize(&pa, &pd, InterpSparsity::Neighbors).unwrap();
        let o2 = forward(&params, &g2).unwrap();
        for v in 0..n {
            for (c, w) in o1.p.row(v) {
                assert!((o2.p.get(perm[v], c) - w).abs() < 1e-10);
            }
        }
        let g1 = featurize(&a, &d, InterpSparsity::Neighbors).unwrap();
        let map2: HashMap<(usize, usize), f64> = g2.iface_src.iter().zip(g2.iface_dst.iter()).zip(&o2.interface_values).map(|((&p, &q), &v)| ((p, q), v)).collect();
        for ((&p, &q), &v) in g1.iface_src.iter().zip(g1.iface_dst.iter()).zip(&o1.interface_values) {
            assert!((map2[&(perm[p], perm[q])] - v).abs() < 1e-10);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let (a, d) = grid(100, 2, 15);
        let g = featurize(&a, &d, InterpSparsity::Neighbors).unwrap();
        let p = ModelParams::random(&small(), 16, true);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        p.save(&path).unwrap();
        let q = ModelParams::load(&path).unwrap();
        assert_eq!(p, q);
        let (o1, o2) = (forward(&p, &g).unwrap(), forward(&q, &g).unwrap());
        assert_eq!(o1.p.values, o2.p.values);
        assert_eq!(o1.interface_values, o2.interface_values);
        let mut bytes = p.to_bytes().unwrap();
        bytes.pop();
        assert!(ModelParams::from_bytes(&bytes).is_err());
        assert!(matches!(ModelParams::load(&dir.path().join("missing")), Err(Error::FileNotFound(_))));
    }

    #[test]
    fn unet_shares_the_parameter_count() {
        let m = ModelConfig::default();
        let u = ModelConfig { arch: Arch::UnetAblation, ..m.clone() };
        assert_eq!(ModelParams::zeros(&m).n_scalars(), ModelParams::zeros(&u).n_scalars());
        let (a, d) = grid(100, 2, 17);
        let g = featurize(&a, &d, InterpSparsity::Neighbors).unwrap();
        let cfg = ModelConfig { arch: Arch::UnetAblation, ..small() };
        let o = forward(&ModelParams::random(&cfg, 18, true), &g).unwrap();
        assert_eq!(o.p.n_rows, d.n);
    }
}
