//! Dataset generation and the training loop.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, Tape, Var};
use crate::ddm::{Levels, TapeInterface, TapeSchwarz};
use crate::error::{Error, Result};
use crate::fem::{assemble_poisson, LinearSystem};
use crate::loss::{loss_eval, sample_unit_sphere, LossConfig};
use crate::meshgen::{random_convex_polygon, triangulate, TriMesh};
use crate::mggnn::{featurize, forward_tape, BoundParams, GraphPair, ModelConfig, ModelParams};
use crate::partition::{extend_overlap, lloyd_aggregate, Decomposition};

/// Which model outputs are used when building the learned operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Heads {
    /// Learned interface values, classical interpolation.
    Interface,
    /// Learned interpolation, zero interface values.
    Interpolation,
    Both,
}

impl Heads {
    pub fn interface(self) -> bool {
        matches!(self, Self::Interface | Self::Both)
    }

    pub fn interpolation(self) -> bool {
        matches!(self, Self::Interpolation | Self::Both)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_grids: usize,
    pub nodes_min: usize,
    pub nodes_max: usize,
    pub vertices_min: usize,
    pub vertices_max: usize,
    pub delta: usize,
    /// Nodes per subdomain; `S = ceil(n / this)`.
    pub nodes_per_subdomain: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { n_grids: 1000, nodes_min: 800, nodes_max: 1000, vertices_min: 4, vertices_max: 8, delta: 1, nodes_per_subdomain: 100 }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_grids == 0 || self.nodes_min < 4 || self.nodes_min > self.nodes_max || self.vertices_min < 3 || self.vertices_min > self.vertices_max || self.nodes_per_subdomain == 0 {
            return Err(Error::Config(format!("invalid data section {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub heads: Heads,
    /// Global gradient-norm clip; off when absent.
    pub clip: Option<f64>,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 20,
            batch: 10,
            lr: 5e-4,
            heads: Heads::Both,
            clip: None,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    /// 30 grids, 3 epochs.
    pub fn smoke() -> Self {
        Self { epochs: 3, data: DataConfig { n_grids: 30, ..Default::default() }, ..Default::default() }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "smoke" => Ok(Self::smoke()),
            "full" => Ok(Self::default()),
            other => Err(Error::Config(format!("unknown profile '{other}' (smoke or full)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 || !(self.lr >= 0.0) || self.clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("epochs and batch must be positive, lr >= 0, clip > 0".into()));
        }
        self.data.validate()?;
        self.model.validate()?;
        self.loss.validate()
    }

    /// Reads a TOML file over the given base and applies `key=value`
    /// overrides with dotted keys (`loss.gamma=0.1`).
    pub fn load(base: Self, path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let cfg: Self = load_toml(&base, path, overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Layers a TOML file and dotted `key=value` overrides over `base`.
pub fn load_toml<T: Serialize + serde::de::DeserializeOwned>(base: &T, path: Option<&Path>, overrides: &[String]) -> Result<T> {
    let mut value = toml::Value::try_from(base).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(p) = path {
        if !p.exists() {
            return Err(Error::FileNotFound(p.to_path_buf()));
        }
        let text = fs::read_to_string(p)?;
        let file = text.parse::<toml::Table>().map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
        merge(&mut value, toml::Value::Table(file));
    }
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    value.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Sets `a.b.c=value`; the value is read as a TOML literal, else as a string.
pub fn apply_override(root: &mut toml::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
    let parsed = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.trim().split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node.as_table_mut().ok_or_else(|| Error::Config(format!("'{key}' does not name a table field")))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
    }
    Ok(())
}

/// Deterministic derived seed.
pub fn sub_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct GridItem {
    pub id: usize,
    pub mesh: TriMesh,
    pub system: LinearSystem,
    pub decomposition: Decomposition,
}

impl GridItem {
    pub fn n_dofs(&self) -> usize {
        self.system.n_dofs()
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    seed: u64,
    data: DataConfig,
    grids: Vec<String>,
}

/// One grid with a target node count, regenerating with a bumped sub-seed on
/// mesh failure.
pub fn make_grid(id: usize, target_nodes: usize, cfg: &DataConfig, seed: u64) -> Result<GridItem> {
    build_grid(id, target_nodes, None, cfg, seed)
}

/// Like [`make_grid`] with a fixed subdomain count.
pub fn make_grid_with_subdomains(id: usize, target_nodes: usize, subdomains: usize, cfg: &DataConfig, seed: u64) -> Result<GridItem> {
    build_grid(id, target_nodes, Some(subdomains), cfg, seed)
}

fn build_grid(id: usize, target_nodes: usize, subdomains: Option<usize>, cfg: &DataConfig, seed: u64) -> Result<GridItem> {
    let mut last = None;
    for attempt in 0..10u64 {
        let s = sub_seed(seed, id as u64, attempt);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let nv = rng.gen_range(cfg.vertices_min..=cfg.vertices_max);
        let built = random_convex_polygon(nv, s)
            .and_then(|poly| triangulate(&poly, target_nodes, s))
            .and_then(|mesh| {
                let system = assemble_poisson(&mesh)?;
                let n = system.n_dofs();
                let sd = subdomains.unwrap_or(n.div_ceil(cfg.nodes_per_subdomain).max(1));
                let assign = lloyd_aggregate(&system.a, sd, s)?;
                let d = extend_overlap(&assign, &system.a, cfg.delta);
                if !mesh.check_invariants() || !d.check_invariants(&system.a) {
                    return Err(Error::MeshFailure(format!("grid {id} failed invariants")));
                }
                Ok(GridItem { id, mesh, system, decomposition: d })
            });
        match built {
            Ok(item) => return Ok(item),
            Err(e) => {
                warn!("grid {id} attempt {attempt} failed: {e}; regenerating");
                last = Some(e);
            }
        }
    }
    Err(last.unwrap_or_else(|| Error::MeshFailure(format!("grid {id}"))))
}

/// `cfg.n_grids` grids with node counts drawn from `[nodes_min, nodes_max]`.
pub fn make_dataset(cfg: &DataConfig, seed: u64) -> Result<Vec<GridItem>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let targets: Vec<usize> = (0..cfg.n_grids).map(|_| rng.gen_range(cfg.nodes_min..=cfg.nodes_max)).collect();
    targets.par_iter().enumerate().map(|(i, &t)| make_grid(i, t, cfg, seed)).collect()
}

/// Held-out grids: `per_size` grids for each target node count.
pub fn make_test_set(sizes: &[usize], per_size: usize, cfg: &DataConfig, seed: u64) -> Result<Vec<GridItem>> {
    let jobs: Vec<(usize, usize)> = sizes.iter().flat_map(|&s| std::iter::repeat_n(s, per_size)).enumerate().collect();
    jobs.par_iter().map(|&(i, t)| make_grid(i, t, cfg, seed)).collect()
}

pub fn save_dataset(items: &[GridItem], cfg: &DataConfig, seed: u64, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut grids = Vec::with_capacity(items.len());
    for it in items {
        let stem = format!("grid_{:04}", it.id);
        fs::write(dir.join(format!("{stem}.mesh")), it.mesh.to_text())?;
        fs::write(dir.join(format!("{stem}.decomp")), it.decomposition.to_text())?;
        fs::write(dir.join(format!("{stem}.mtx")), it.system.a.to_matrix_market_string())?;
        grids.push(stem);
    }
    let manifest = DatasetManifest { seed, data: cfg.clone(), grids };
    fs::write(dir.join("dataset.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Vec<GridItem>> {
    let mpath = dir.join("dataset.json");
    if !mpath.exists() {
        return Err(Error::FileNotFound(mpath));
    }
    let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(&mpath)?)?;
    manifest
        .grids
        .iter()
        .enumerate()
        .map(|(id, stem)| {
            let mesh = TriMesh::from_text(BufReader::new(fs::File::open(dir.join(format!("{stem}.mesh")))?))?;
            let system = assemble_poisson(&mesh)?;
            let f = fs::File::open(dir.join(format!("{stem}.decomp")))?;
            let decomposition = Decomposition::from_text(BufReader::new(f), &system.a)?;
            Ok(GridItem { id, mesh, system, decomposition })
        })
        .collect()
}

/// A grid prepared for the model.
pub struct PreparedGrid {
    pub item: GridItem,
    pub a: Arc<crate::sparse::CsrMatrix>,
    pub graph: GraphPair,
}

pub fn prepare(items: Vec<GridItem>, model: &ModelConfig) -> Result<Vec<PreparedGrid>> {
    items
        .into_par_iter()
        .map(|item| {
            let graph = featurize(&item.system.a, &item.decomposition, model.sparsity)?;
            Ok(PreparedGrid { a: Arc::new(item.system.a.clone()), graph, item })
        })
        .collect()
}

/// Records the surrogate loss of the learned two-level operator on `tape`.
pub fn grid_objective(
    tape: &mut Tape,
    bp: &BoundParams,
    model: &ModelConfig,
    grid: &PreparedGrid,
    heads: Heads,
    loss: &LossConfig,
    sample_seed: u64,
) -> Result<Var> {
    let out = forward_tape(tape, bp, model, &grid.graph)?;
    let iface = heads.interface().then(|| TapeInterface { values: out.interface, maps: &grid.graph.iface_maps });
    let p = heads.interpolation().then_some((&grid.graph.p_pattern, out.p_vals));
    let op = TapeSchwarz::build(tape, &grid.a, &grid.item.decomposition, iface, p, Levels::Two)?;
    let trace = if loss.variant.uses_trace() { Some(op.galerkin_trace(tape)?) } else { None };
    let samples = sample_unit_sphere(grid.graph.n, loss.m, sample_seed);
    loss_eval(tape, &mut |t, x| op.apply_t(t, x), samples, trace, loss)
}

/// Loss value and parameter gradients for one grid.
pub fn loss_and_grad(params: &ModelParams, grid: &PreparedGrid, heads: Heads, loss: &LossConfig, sample_seed: u64) -> Result<(f64, Vec<Mat>)> {
    let mut tape = Tape::new();
    let bp = params.bind(&mut tape, true);
    let l = grid_objective(&mut tape, &bp, &params.config, grid, heads, loss, sample_seed)?;
    let value = tape.scalar(l);
    if !value.is_finite() {
        return Err(Error::NumericalOverflow { k: loss.k });
    }
    let g = tape.backward(l)?;
    Ok((value, bp.vars.iter().map(|v| g.get_or_zero(*v)).collect()))
}

pub fn loss_value(params: &ModelParams, grid: &PreparedGrid, heads: Heads, loss: &LossConfig, sample_seed: u64) -> Result<f64> {
    let mut tape = Tape::new();
    let bp = params.bind(&mut tape, false);
    let l = grid_objective(&mut tape, &bp, &params.config, grid, heads, loss, sample_seed)?;
    Ok(tape.scalar(l))
}

/// Outcome of comparing tape gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradCheckStats {
    pub checked: usize,
    pub passed: usize,
    pub worst: f64,
}

impl GradCheckStats {
    pub fn pass_rate(&self) -> f64 {
        self.passed as f64 / self.checked.max(1) as f64
    }
}

/// Checks `n_coords` random parameter coordinates of the grid objective.
/// Relative error is `|g - fd| / max(|g|, |fd|, 1e-6)`.
pub fn model_gradient_check(
    params: &ModelParams,
    grid: &PreparedGrid,
    heads: Heads,
    loss: &LossConfig,
    n_coords: usize,
    h: f64,
    tol: f64,
    seed: u64,
) -> Result<GradCheckStats> {
    let sample_seed = sub_seed(seed, 7, 0);
    let (_, grads) = loss_and_grad(params, grid, heads, loss, sample_seed)?;
    let total = params.n_scalars();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offsets: Vec<usize> = params.arrays.iter().scan(0, |acc, a| {
        let o = *acc;
        *acc += a.len();
        Some(o)
    }).collect();
    let mut stats = GradCheckStats { checked: 0, passed: 0, worst: 0.0 };
    for _ in 0..n_coords {
        let flat = rng.gen_range(0..total);
        let which = offsets.partition_point(|&o| o <= flat) - 1;
        let cols = params.arrays[which].ncols();
        let idx = ((flat - offsets[which]) / cols, (flat - offsets[which]) % cols);
        let mut p = params.clone();
        p.arrays[which][idx] += h;
        let up = loss_value(&p, grid, heads, loss, sample_seed)?;
        p.arrays[which][idx] -= 2.0 * h;
        let down = loss_value(&p, grid, heads, loss, sample_seed)?;
        let fd = (up - down) / (2.0 * h);
        let g = grads[which][idx];
        let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
        stats.checked += 1;
        if rel <= tol {
            stats.passed += 1;
        }
        stats.worst = stats.worst.max(rel);
    }
    Ok(stats)
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(params: &ModelParams, lr: f64) -> Self {
        let zeros: Vec<Mat> = params.arrays.iter().map(|a| Mat::zeros(a.raw_dim())).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &[Mat]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for ((p, g), (m, v)) in params.arrays.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            m.zip_mut_with(g, |mi, &gi| *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi);
            v.zip_mut_with(g, |vi, &gi| *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi);
            if self.lr == 0.0 {
                continue;
            }
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|pi, &mi, &vi| {
                *pi -= self.lr * (mi / c1) / ((vi / c2).sqrt() + self.eps);
            });
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_seconds: f64,
    pub skips: usize,
}

#[derive(Clone, Debug, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
        for r in &self.epochs {
            w.serialize(r).map_err(|e| Error::Io(e.into()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean of per-grid gradients in grid order.
pub fn average_gradients(parts: &[Vec<Mat>]) -> Option<Vec<Mat>> {
    let first = parts.first()?;
    let mut acc: Vec<Mat> = first.clone();
    for p in &parts[1..] {
        for (a, g) in acc.iter_mut().zip(p) {
            *a += g;
        }
    }
    let s = 1.0 / parts.len() as f64;
    for a in &mut acc {
        a.mapv_inplace(|v| v * s);
    }
    Some(acc)
}

fn clip_gradients(grads: &mut [Mat], max_norm: f64) {
    let norm = grads.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads {
            g.mapv_inplace(|v| v * s);
        }
    }
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: TrainHistory,
}

/// ADAM on mini-batches with a per-epoch shuffle; writes `model.ckpt`,
/// `epoch_<k>.ckpt` and `history.csv` under `out_dir` when given.
pub fn train(cfg: &TrainConfig, grids: &[PreparedGrid], out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if grids.is_empty() {
        return Err(Error::InvalidArgument("training needs at least one grid".into()));
    }
    if let Some(d) = out_dir {
        fs::create_dir_all(d)?;
    }
    let mut params = ModelParams::init(&cfg.model, sub_seed(cfg.seed, 1, 0));
    let mut opt = Adam::new(&params, cfg.lr);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..grids.len()).collect();
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, 2, epoch as u64));
        order.shuffle(&mut rng);
        let (mut total, mut count, mut skips) = (0.0, 0usize, 0usize);
        for batch in order.chunks(cfg.batch) {
            let results: Vec<Result<(f64, Vec<Mat>)>> = batch
                .par_iter()
                .map(|&gi| {
                    let seed = sub_seed(cfg.seed, 3 + epoch as u64, grids[gi].item.id as u64);
                    loss_and_grad(&params, &grids[gi], cfg.heads, &cfg.loss, seed)
                })
                .collect();
            let mut kept = Vec::with_capacity(batch.len());
            for (r, &gi) in results.into_iter().zip(batch) {
                match r {
                    Ok((l, g)) if l.is_finite() && g.iter().all(|m| m.iter().all(|v| v.is_finite())) => {
                        total += l;
                        count += 1;
                        kept.push(g);
                    }
                    Ok(_) => {
                        warn!("epoch {epoch}: grid {} gave a non-finite loss or gradient; skipped", grids[gi].item.id);
                        skips += 1;
                    }
                    Err(e) => {
                        warn!("epoch {epoch}: grid {} skipped: {e}", grids[gi].item.id);
                        skips += 1;
                    }
                }
            }
            if let Some(mut g) = average_gradients(&kept) {
                if let Some(c) = cfg.clip {
                    clip_gradients(&mut g, c);
                }
                opt.step(&mut params, &g);
            }
        }
        if skips * 5 > grids.len() {
            return Err(Error::AbortTraining(format!("epoch {epoch}: {skips} of {} grids skipped", grids.len())));
        }
        let rec = EpochRecord {
            epoch,
            mean_loss: if count > 0 { total / count as f64 } else { f64::NAN },
            wall_seconds: start.elapsed().as_secs_f64(),
            skips,
        };
        info!("epoch {epoch}: mean loss {:.6} ({} skipped, {:.1}s)", rec.mean_loss, skips, rec.wall_seconds);
        history.epochs.push(rec);
        if let Some(d) = out_dir {
            params.save(&d.join(format!("epoch_{epoch}.ckpt")))?;
            params.save(&d.join("model.ckpt"))?;
            history.write_csv(&d.join("history.csv"))?;
        }
    }
    Ok(TrainOutcome { params, history })
}

pub fn checkpoint_path(dir: &Path) -> PathBuf {
    dir.join("model.ckpt")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ddm::SchwarzOperator;
    use crate::partition::classical_p;

    fn tiny_model() -> ModelConfig {
        ModelConfig { hidden: 8, encoder_layers: 2, layers: 2, hops: 2, ..Default::default() }
    }

    fn tiny_data(n: usize) -> DataConfig {
        DataConfig { n_grids: n, nodes_min: 150, nodes_max: 200, ..Default::default() }
    }

    #[test]
    fn dataset_is_deterministic_and_valid() {
        let cfg = DataConfig { n_grids: 3, ..Default::default() };
        let a = make_dataset(&cfg, 7).unwrap();
        let b = make_dataset(&cfg, 7).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.mesh.to_text(), y.mesh.to_text());
            assert_eq!(x.decomposition.to_text(), y.decomposition.to_text());
            let nodes = x.mesh.n_nodes() as f64;
            assert!((0.7 * 800.0..=1.3 * 1000.0).contains(&nodes));
            let d = &x.decomposition;
            for (i, set) in d.overlap_sets.iter().enumerate() {
                assert!(d.owned[i].iter().all(|v| set.binary_search(v).is_ok()));
                assert!(set.len() > d.owned[i].len());
            }
        }
    }

    #[test]
    fn dataset_round_trips_through_disk() {
        let cfg = tiny_data(2);
        let items = make_dataset(&cfg, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&items, &cfg, 3, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        for (x, y) in items.iter().zip(&back) {
            assert_eq!(x.system.a, y.system.a);
            assert_eq!(x.decomposition.to_text(), y.decomposition.to_text());
        }
        assert!(matches!(load_dataset(&dir.path().join("nope")), Err(Error::FileNotFound(_))));
    }

    #[test]
    fn overrides_and_profiles() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "epochs = 7\n[loss]\ngamma = 0.5\n").unwrap();
        let cfg = TrainConfig::load(TrainConfig::smoke(), Some(&path), &["loss.k=4".into(), "heads=interface".into(), "model.sparsity=own-only".into()]).unwrap();
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.loss.gamma, 0.5);
        assert_eq!(cfg.loss.k, 4);
        assert_eq!(cfg.heads, Heads::Interface);
        assert_eq!(cfg.data.n_grids, 30);
        assert!(TrainConfig::load(TrainConfig::smoke(), None, &["bogus=1".into()]).is_err());
        assert!(TrainConfig::load(TrainConfig::smoke(), None, &["lr=-1".into()]).is_err());
        let back: TrainConfig = toml::from_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let p0 = ModelParams::random(&tiny_model(), 1, true);
        let mut p = p0.clone();
        let mut opt = Adam::new(&p, 0.0);
        let g: Vec<Mat> = p.arrays.iter().map(|a| Mat::ones(a.raw_dim())).collect();
        opt.step(&mut p, &g);
        assert_eq!(p, p0);
    }

    #[test]
    fn averaged_gradient_ignores_batch_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let parts: Vec<Vec<Mat>> = (0..4).map(|_| vec![Mat::from_shape_fn((3, 2), |_| rng.gen_range(-1.0..1.0))]).collect();
        let fwd = average_gradients(&parts).unwrap();
        let rev: Vec<Vec<Mat>> = parts.iter().rev().cloned().collect();
        let back = average_gradients(&rev).unwrap();
        assert!((&fwd[0] - &back[0]).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn head_switches_fix_the_other_output() {
        let grids = prepare(make_dataset(&tiny_data(1), 4).unwrap(), &tiny_model()).unwrap();
        let g = &grids[0];
        let params = ModelParams::random(&tiny_model(), 5, true);
        let x = sample_unit_sphere(g.graph.n, 3, 6);
        let out = crate::mggnn::forward(&params, &g.graph).unwrap();
        for heads in [Heads::Interface, Heads::Interpolation] {
            let iface = heads.interface().then_some(out.interface.as_slice());
            let p = if heads.interpolation() { out.p.clone() } else { classical_p(&g.item.decomposition) };
            let op = SchwarzOperator::build(&g.item.system.a, &g.item.decomposition, iface, Some(&p), Levels::Two).unwrap();
            let mut tape = Tape::new();
            let bp = params.bind(&mut tape, false);
            let fo = forward_tape(&mut tape, &bp, &params.config, &g.graph).unwrap();
            let ti = heads.interface().then(|| TapeInterface { values: fo.interface, maps: &g.graph.iface_maps });
            let tp = heads.interpolation().then_some((&g.graph.p_pattern, fo.p_vals));
            let ts = TapeSchwarz::build(&mut tape, &g.a, &g.item.decomposition, ti, tp, Levels::Two).unwrap();
            let xv = tape.constant(x.clone());
            let y = ts.apply_t(&mut tape, xv).unwrap();
            for j in 0..3 {
                let col = op.apply_t(&x.column(j).to_vec());
                for i in 0..g.graph.n {
                    assert!((tape.value(y)[[i, j]] - col[i]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let data = DataConfig::default();
        let grid = prepare(vec![make_grid_with_subdomains(0, 60, 3, &data, 2).unwrap()], &tiny_model()).unwrap();
        let params = ModelParams::random(&tiny_model(), 3, true);
        let loss = LossConfig { k: 4, m: 5, ..Default::default() };
        let st = model_gradient_check(&params, &grid[0], Heads::Both, &loss, 40, 1e-5, 1e-3, 4).unwrap();
        assert!(st.pass_rate() >= 0.95, "{st:?}");
    }

    #[test]
    fn short_training_run_writes_artifacts() {
        let cfg = TrainConfig {
            epochs: 2,
            batch: 2,
            model: tiny_model(),
            loss: LossConfig { k: 4, m: 10, ..Default::default() },
            data: tiny_data(3),
            ..Default::default()
        };
        let grids = prepare(make_dataset(&cfg.data, 8).unwrap(), &cfg.model).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = train(&cfg, &grids, Some(dir.path())).unwrap();
        assert_eq!(out.history.epochs.len(), 2);
        assert!(out.history.epochs.iter().all(|r| r.mean_loss.is_finite() && r.skips == 0));
        let loaded = ModelParams::load(&checkpoint_path(dir.path())).unwrap();
        assert_eq!(loaded, out.params);
        let again = train(&cfg, &grids, None).unwrap();
        assert_eq!(again.params, out.params);
        let csv = fs::read_to_string(dir.path().join("history.csv")).unwrap();
        assert!(csv.starts_with("epoch,mean_loss,wall_seconds,skips"));
    }
}
