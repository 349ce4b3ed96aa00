//! Evaluation against classical baselines, ablation sweeps, scaling timings
//! and the verification suites behind the command-line tool.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ddm::{Levels, SchwarzOperator};
use crate::dense::spectral_radius;
use crate::error::{Error, Result};
use crate::loss::{dense_surrogate, sketch_bound_check, random_with_radius, sample_unit_sphere, LossVariant};
use crate::mggnn::{featurize, forward, ModelParams};
use crate::train::{self, load_toml, make_grid_with_subdomains, make_test_set, prepare, sub_seed, GridItem, Heads, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Seed of the held-out grids and right-hand sides.
    pub seed: u64,
    /// Target node counts of the held-out grids.
    pub sizes: Vec<usize>,
    pub per_size: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub fgmres_tol: f64,
    pub fgmres_max_iter: usize,
    /// Dense eigensolve of T only up to this many unknowns.
    pub rho_max_dofs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { seed: 1001, sizes: vec![1000, 2000, 4000, 8000], per_size: 3, tol: 1e-8, max_iter: 500, fgmres_tol: 1e-8, fgmres_max_iter: 300, rho_max_dofs: 1000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingConfig {
    pub sizes: Vec<usize>,
    pub runs: usize,
    pub seed: u64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self { sizes: vec![1000, 4000, 16000], runs: 5, seed: 5 }
    }
}

/// Everything the command-line tool reads from one TOML file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub scaling: ScalingConfig,
}

impl RunConfig {
    pub fn profile(name: &str) -> Result<Self> {
        let train = TrainConfig::profile(name)?;
        let eval = if name == "full" {
            EvalConfig { sizes: vec![1000, 4000, 16000, 60000], ..Default::default() }
        } else {
            EvalConfig::default()
        };
        Ok(Self { train, eval, scaling: ScalingConfig::default() })
    }

    pub fn load(profile: &str, path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let cfg: Self = load_toml(&Self::profile(profile)?, path, overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let e = &self.eval;
        if e.sizes.is_empty() || e.sizes.iter().any(|&s| s < 4) || e.per_size == 0 || !(e.tol > 0.0) || !(e.fgmres_tol > 0.0) || e.max_iter == 0 || e.fgmres_max_iter == 0 {
            return Err(Error::Config(format!("invalid eval section {e:?}")));
        }
        if self.scaling.sizes.is_empty() || self.scaling.runs == 0 {
            return Err(Error::Config("scaling needs sizes and runs > 0".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Ras1,
    Ras2,
    /// The learned operator with its coarse correction switched off.
    Learned1,
    Learned2,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Ras1, Method::Ras2, Method::Learned1, Method::Learned2];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ras1 => "ras-1level",
            Self::Ras2 => "ras-2level",
            Self::Learned1 => "learned-1level-nocoarse",
            Self::Learned2 => "learned-2level",
        }
    }

    pub fn learned(self) -> bool {
        matches!(self, Self::Learned1 | Self::Learned2)
    }
}

/// One (grid, method) result. Wall time is kept out of the CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub grid: usize,
    pub target_nodes: usize,
    pub n: usize,
    pub s: usize,
    pub method: String,
    pub stationary_iterations: usize,
    pub fgmres_iterations: usize,
    pub rho: Option<f64>,
    #[serde(skip)]
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub max_iter: usize,
    pub fgmres_max_iter: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub grids: usize,
    pub mean_stationary: f64,
    pub mean_fgmres: f64,
    pub diverged: usize,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

impl EvalReport {
    pub fn rows_for(&self, method: Method) -> impl Iterator<Item = &EvalRow> {
        self.rows.iter().filter(move |r| r.method == method.name())
    }

    pub fn mean_stationary(&self, method: Method) -> f64 {
        mean(self.rows_for(method).map(|r| r.stationary_iterations as f64))
    }

    pub fn mean_fgmres(&self, method: Method) -> f64 {
        mean(self.rows_for(method).map(|r| r.fgmres_iterations as f64))
    }

    pub fn summary(&self) -> Vec<MethodSummary> {
        let mut names: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !names.contains(&r.method.as_str()) {
                names.push(&r.method);
            }
        }
        names
            .into_iter()
            .map(|m| {
                let rows: Vec<&EvalRow> = self.rows.iter().filter(|r| r.method == m).collect();
                MethodSummary {
                    method: m.to_string(),
                    grids: rows.len(),
                    mean_stationary: mean(rows.iter().map(|r| r.stationary_iterations as f64)),
                    mean_fgmres: mean(rows.iter().map(|r| r.fgmres_iterations as f64)),
                    diverged: rows.iter().filter(|r| r.stationary_iterations > self.max_iter).count(),
                }
            })
            .collect()
    }

    /// More than half of the rows hit the iteration sentinel.
    pub fn divergence_dominated(&self) -> bool {
        let bad = self.rows.iter().filter(|r| r.stationary_iterations > self.max_iter).count();
        bad * 2 > self.rows.len()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_csv(path, &self.rows)
    }

    pub fn write_summary_csv(&self, path: &Path) -> Result<()> {
        write_csv(path, &self.summary())
    }

    /// `grid,method,wall_seconds`.
    pub fn timings_csv(&self) -> String {
        let mut s = String::from("grid,method,wall_seconds\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{:.6}", r.grid, r.method, r.wall_seconds);
        }
        s
    }

    /// Iterations against problem size, mean with min/max whiskers per size.
    pub fn to_svg(&self, stationary: bool) -> String {
        let mut series: BTreeMap<String, BTreeMap<usize, Vec<(f64, f64)>>> = BTreeMap::new();
        for r in &self.rows {
            let it = if stationary { r.stationary_iterations } else { r.fgmres_iterations };
            series.entry(r.method.clone()).or_default().entry(r.target_nodes).or_default().push((r.n as f64, it as f64));
        }
        let title = if stationary { "stationary iterations" } else { "FGMRES iterations" };
        svg_chart(title, "unknowns", &series)
    }

    pub fn write_all(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.write_csv(&dir.join("report.csv"))?;
        self.write_summary_csv(&dir.join("summary.csv"))?;
        fs::write(dir.join("timings.csv"), self.timings_csv())?;
        fs::write(dir.join("stationary.svg"), self.to_svg(true))?;
        fs::write(dir.join("fgmres.svg"), self.to_svg(false))?;
        Ok(())
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn svg_chart(title: &str, xlabel: &str, series: &BTreeMap<String, BTreeMap<usize, Vec<(f64, f64)>>>) -> String {
    let (w, h, ml, mr, mt, mb) = (640.0, 420.0, 60.0, 170.0, 40.0, 50.0);
    let pts = series.values().flat_map(|m| m.values().flatten());
    let (mut xmin, mut xmax, mut ymax) = (f64::INFINITY, 0.0f64, 1.0f64);
    for &(x, y) in pts {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymax = ymax.max(y);
    }
    if !xmin.is_finite() {
        xmin = 1.0;
        xmax = 10.0;
    }
    let (lx0, lx1) = (xmin.max(1.0).log10(), xmax.max(xmin * 1.01).max(1.0).log10() + 1e-9);
    let px = |x: f64| ml + (x.max(1.0).log10() - lx0) / (lx1 - lx0) * (w - ml - mr);
    let py = |y: f64| h - mb - y / (ymax * 1.05) * (h - mt - mb);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{title}</text>"#, (w - mr + ml) / 2.0);
    let _ = writeln!(s, r#"<line x1="{ml}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - mb, w - mr, h - mb);
    let _ = writeln!(s, r#"<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{}" stroke="black"/>"#, h - mb);
    for k in 0..=4 {
        let y = ymax * 1.05 * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.0}</text>"#, ml - 6.0, py(y) + 4.0, y);
    }
    for k in 0..=3 {
        let x = 10f64.powf(lx0 + (lx1 - lx0) * k as f64 / 3.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{:.0}</text>"#, px(x), h - mb + 18.0, x);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel} (log scale)</text>"#, (w - mr + ml) / 2.0, h - 8.0);
    for (i, (name, groups)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut line = Vec::new();
        for vals in groups.values() {
            let mx = mean(vals.iter().map(|v| v.0));
            let my = mean(vals.iter().map(|v| v.1));
            let lo = vals.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
            let hi = vals.iter().map(|v| v.1).fold(0.0, f64::max);
            let _ = writeln!(s, r#"<line x1="{0:.1}" y1="{1:.1}" x2="{0:.1}" y2="{2:.1}" stroke="{color}"/>"#, px(mx), py(lo), py(hi));
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, px(mx), py(my));
            line.push(format!("{:.1},{:.1}", px(mx), py(my)));
        }
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, line.join(" "));
        let ly = mt + 10.0 + 18.0 * i as f64;
        let _ = writeln!(s, r#"<rect x="{}" y="{}" width="12" height="3" fill="{color}"/>"#, w - mr + 12.0, ly - 4.0);
        let _ = writeln!(s, r#"<text x="{}" y="{ly}">{name}</text>"#, w - mr + 30.0);
    }
    s.push_str("</svg>\n");
    s
}

/// `b = A v` with `v` a random unit vector.
pub fn synthetic_rhs(a: &crate::sparse::CsrMatrix, seed: u64) -> Vec<f64> {
    let v = sample_unit_sphere(a.n_rows, 1, seed);
    a.spmv(v.column(0).as_slice().expect("contiguous column"))
}

fn solve_row(op: &SchwarzOperator, b: &[f64], cfg: &EvalConfig) -> (usize, usize, Option<f64>) {
    let st = op.stationary_solve(b, cfg.tol, cfg.max_iter).iterations;
    let fg = match op.fgmres(b, cfg.fgmres_tol, cfg.fgmres_max_iter) {
        Ok(r) => r.iterations,
        Err(e) => {
            warn!("fgmres failed: {e}");
            cfg.fgmres_max_iter + 1
        }
    };
    let rho = (op.n() <= cfg.rho_max_dofs).then(|| spectral_radius(op.assemble_dense_t().view()).ok()).flatten();
    (st, fg, rho)
}

/// Builds the learned operator for one grid.
pub fn learned_operator(params: &ModelParams, heads: Heads, item: &GridItem, levels: Levels) -> Result<SchwarzOperator> {
    let a = &item.system.a;
    let g = featurize(a, &item.decomposition, params.config.sparsity)?;
    let out = forward(params, &g)?;
    if out.fallbacks > 0 {
        warn!("grid {}: {} interpolation rows fell back to uniform weights", item.id, out.fallbacks);
    }
    let iface = heads.interface().then_some(out.interface.as_slice());
    let p = heads.interpolation().then_some(&out.p);
    SchwarzOperator::build(a, &item.decomposition, iface, p, levels)
}

fn eval_grid(item: &GridItem, target: usize, params: Option<(&ModelParams, Heads)>, methods: &[Method], cfg: &EvalConfig) -> Vec<EvalRow> {
    let a = &item.system.a;
    let b = synthetic_rhs(a, sub_seed(cfg.seed, 11, item.id as u64));
    let learned2 = match params {
        Some((p, heads)) if methods.iter().any(|m| m.learned()) => Some(learned_operator(p, heads, item, Levels::Two)),
        _ => None,
    };
    methods
        .iter()
        .map(|&m| {
            let start = Instant::now();
            let op = match m {
                Method::Ras1 => SchwarzOperator::classical(a, &item.decomposition, Levels::One),
                Method::Ras2 => SchwarzOperator::classical(a, &item.decomposition, Levels::Two),
                Method::Learned1 | Method::Learned2 => match &learned2 {
                    Some(Ok(op)) if m == Method::Learned1 => Ok(op.one_level()),
                    Some(Ok(op)) => Ok(op.clone()),
                    Some(Err(e)) => Err(Error::InvalidArgument(e.to_string())),
                    None => Err(Error::InvalidArgument("no model given".into())),
                },
            };
            let (st, fg, rho) = match op {
                Ok(op) => solve_row(&op, &b, cfg),
                Err(e) => {
                    warn!("grid {} {}: {e}", item.id, m.name());
                    (cfg.max_iter + 1, cfg.fgmres_max_iter + 1, None)
                }
            };
            EvalRow {
                grid: item.id,
                target_nodes: target,
                n: a.n_rows,
                s: item.decomposition.n_subdomains,
                method: m.name().to_string(),
                stationary_iterations: st,
                fgmres_iterations: fg,
                rho,
                wall_seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

/// Held-out grids of the configured sizes, `per_size` each.
pub fn test_grids(cfg: &EvalConfig, train_cfg: &TrainConfig) -> Result<Vec<GridItem>> {
    make_test_set(&cfg.sizes, cfg.per_size, &train_cfg.data, sub_seed(cfg.seed, 13, 0))
}

/// Writes held-out grids and their size labels under `dir`.
pub fn save_test_set(grids: &[GridItem], targets: &[usize], data: &train::DataConfig, seed: u64, dir: &Path) -> Result<()> {
    let data = train::DataConfig { n_grids: grids.len(), ..data.clone() };
    train::save_dataset(grids, &data, seed, dir)?;
    fs::write(dir.join("targets.json"), serde_json::to_string(targets)?)?;
    Ok(())
}

pub fn load_test_set(dir: &Path) -> Result<(Vec<GridItem>, Vec<usize>)> {
    let grids = train::load_dataset(dir)?;
    let tpath = dir.join("targets.json");
    let targets: Vec<usize> = if tpath.exists() { serde_json::from_str(&fs::read_to_string(tpath)?)? } else { grids.iter().map(|g| g.mesh.n_nodes()).collect() };
    if targets.len() != grids.len() {
        return Err(Error::Parse(format!("{}: {} labels for {} grids", dir.display(), targets.len(), grids.len())));
    }
    Ok((grids, targets))
}

/// Evaluates `methods` on `grids`; `targets[i]` labels grid `i` by size.
pub fn evaluate(grids: &[GridItem], targets: &[usize], params: Option<(&ModelParams, Heads)>, methods: &[Method], cfg: &EvalConfig) -> EvalReport {
    let rows: Vec<Vec<EvalRow>> = grids.par_iter().zip(targets).map(|(g, &t)| eval_grid(g, t, params, methods, cfg)).collect();
    let mut rows: Vec<EvalRow> = rows.into_iter().flatten().collect();
    rows.sort_by_key(|r| r.grid);
    EvalReport { rows, max_iter: cfg.max_iter, fgmres_max_iter: cfg.fgmres_max_iter }
}

/// Size labels matching [`test_grids`].
pub fn test_targets(cfg: &EvalConfig) -> Vec<usize> {
    cfg.sizes.iter().flat_map(|&s| std::iter::repeat_n(s, cfg.per_size)).collect()
}

#[derive(Clone, Debug)]
pub struct AblationVariant {
    pub group: &'static str,
    pub label: String,
    pub overrides: Vec<String>,
}

pub const ABLATION_GROUPS: [&str; 5] = ["heads", "loss", "sparsity", "layers", "arch"];

pub fn ablation_variants(groups: &[String]) -> Vec<AblationVariant> {
    let mut out = Vec::new();
    let mut push = |group: &'static str, label: &str, o: &str| {
        if groups.is_empty() || groups.iter().any(|g| g == group) {
            out.push(AblationVariant { group, label: label.to_string(), overrides: vec![o.to_string()] });
        }
    };
    for h in ["interface", "interpolation", "both"] {
        push("heads", h, &format!("train.heads=\"{h}\""));
    }
    for v in ["softmax-trace", "softmax-only", "max-only", "max-trace"] {
        push("loss", v, &format!("train.loss.variant=\"{v}\""));
    }
    for s in ["neighbors", "own-only"] {
        push("sparsity", s, &format!("train.model.sparsity=\"{s}\""));
    }
    for l in 1..=6 {
        push("layers", &l.to_string(), &format!("train.model.layers={l}"));
    }
    for a in ["mggnn", "unet-ablation"] {
        push("arch", a, &format!("train.model.arch=\"{a}\""));
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub group: String,
    pub variant: String,
    pub grid: usize,
    pub n: usize,
    pub s: usize,
    pub method: String,
    pub stationary_iterations: usize,
    pub fgmres_iterations: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationSummary {
    pub group: String,
    pub variant: String,
    pub mean_stationary: f64,
    pub mean_fgmres: f64,
    pub baseline_stationary: f64,
    pub baseline_fgmres: f64,
}

/// Trains one model per variant and compares learned 2-level against 2-level
/// RAS on the held-out set. Identical configurations are trained once.
pub fn ablate(base: &RunConfig, variants: &[AblationVariant], out_dir: &Path) -> Result<(Vec<AblationRow>, Vec<AblationSummary>)> {
    fs::create_dir_all(out_dir)?;
    let train_items = train::make_dataset(&base.train.data, base.train.seed)?;
    let tests = test_grids(&base.eval, &base.train)?;
    let targets = test_targets(&base.eval);
    let baseline = evaluate(&tests, &targets, None, &[Method::Ras2], &base.eval);
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    let mut cache: BTreeMap<String, EvalReport> = BTreeMap::new();
    for v in variants {
        let cfg = load_toml(base, None, &v.overrides)?;
        cfg.validate()?;
        let key = cfg.train.to_toml()?;
        if !cache.contains_key(&key) {
            info!("ablation {}={}: training", v.group, v.label);
            let grids = prepare(train_items.clone(), &cfg.train.model)?;
            let outcome = train::train(&cfg.train, &grids, Some(&out_dir.join(format!("{}-{}", v.group, v.label))))?;
            let rep = evaluate(&tests, &targets, Some((&outcome.params, cfg.train.heads)), &[Method::Learned2], &base.eval);
            cache.insert(key.clone(), rep);
        }
        let rep = &cache[&key];
        for r in baseline.rows.iter().chain(&rep.rows) {
            rows.push(AblationRow {
                group: v.group.to_string(),
                variant: v.label.clone(),
                grid: r.grid,
                n: r.n,
                s: r.s,
                method: r.method.clone(),
                stationary_iterations: r.stationary_iterations,
                fgmres_iterations: r.fgmres_iterations,
            });
        }
        summaries.push(AblationSummary {
            group: v.group.to_string(),
            variant: v.label.clone(),
            mean_stationary: rep.mean_stationary(Method::Learned2),
            mean_fgmres: rep.mean_fgmres(Method::Learned2),
            baseline_stationary: baseline.mean_stationary(Method::Ras2),
            baseline_fgmres: baseline.mean_fgmres(Method::Ras2),
        });
    }
    write_csv(&out_dir.join("ablation.csv"), &rows)?;
    write_csv(&out_dir.join("ablation_summary.csv"), &summaries)?;
    Ok((rows, summaries))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingRow {
    pub target_nodes: usize,
    pub n: usize,
    pub s: usize,
    pub median_seconds: f64,
}

/// Median wall time of the model forward pass over `runs` repetitions per size.
pub fn scaling(params: &ModelParams, cfg: &ScalingConfig, train_cfg: &TrainConfig) -> Result<Vec<ScalingRow>> {
    cfg.sizes
        .iter()
        .enumerate()
        .map(|(i, &nodes)| {
            let item = train::make_grid(i, nodes, &train_cfg.data, sub_seed(cfg.seed, 17, i as u64))?;
            let g = featurize(&item.system.a, &item.decomposition, params.config.sparsity)?;
            let mut times = Vec::with_capacity(cfg.runs);
            for _ in 0..cfg.runs {
                let start = Instant::now();
                forward(params, &g)?;
                times.push(start.elapsed().as_secs_f64());
            }
            times.sort_by(f64::total_cmp);
            Ok(ScalingRow { target_nodes: nodes, n: g.n, s: g.s, median_seconds: times[times.len() / 2] })
        })
        .collect()
}

pub fn write_scaling_csv(rows: &[ScalingRow], path: &Path) -> Result<()> {
    write_csv(path, rows)
}

#[derive(Clone, Debug)]
pub struct VerifyLine {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Upper bound always, lower bound in at least 99% of 200 trials.
pub fn verify_sketch_bound(seed: u64) -> Result<VerifyLine> {
    let t = random_with_radius(30, 0.9, seed)?;
    let st = sketch_bound_check(t.view(), 25, 100, 0.1, 200, sub_seed(seed, 1, 0))?;
    Ok(VerifyLine { name: "sketch", passed: st.upper == 1.0 && st.lower >= 0.99, detail: format!("upper {:.3} lower {:.3}", st.upper, st.lower) })
}

/// Worst surrogate error over 20 random matrices at each radius.
pub fn surrogate_errors(seed: u64) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for rho in [0.5, 0.9] {
        for i in 0..20u64 {
            let t = random_with_radius(30, rho, sub_seed(seed, 2, i))?;
            let z = dense_surrogate(t.view(), 30, 500, sub_seed(seed, 3, i), LossVariant::SoftmaxOnly)?;
            out.push((rho, (z - rho).abs()));
        }
    }
    Ok(out)
}

pub fn verify_surrogate(seed: u64) -> Result<VerifyLine> {
    let errs = surrogate_errors(seed)?;
    let worst = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    Ok(VerifyLine { name: "surrogate", passed: worst <= 0.06, detail: format!("max |surrogate - rho| = {worst:.4} over {} matrices", errs.len()) })
}

/// Finite differences on 200 parameter coordinates of a 60-node, 3-subdomain grid.
pub fn verify_gradients(model: &crate::mggnn::ModelConfig, seed: u64) -> Result<VerifyLine> {
    let item = make_grid_with_subdomains(0, 60, 3, &Default::default(), seed)?;
    let grid = prepare(vec![item], model)?;
    let params = ModelParams::random(model, sub_seed(seed, 4, 0), true);
    let loss = crate::loss::LossConfig { k: 10, m: 20, ..Default::default() };
    let st = train::model_gradient_check(&params, &grid[0], Heads::Both, &loss, 200, 1e-5, 1e-3, sub_seed(seed, 5, 0))?;
    Ok(VerifyLine { name: "gradient", passed: st.pass_rate() >= 0.99, detail: format!("{}/{} coordinates within 1e-3, worst {:.2e}", st.passed, st.checked, st.worst) })
}

pub fn verify_all(model: &crate::mggnn::ModelConfig, seed: u64) -> Result<Vec<VerifyLine>> {
    Ok(vec![verify_sketch_bound(seed)?, verify_surrogate(seed)?, verify_gradients(model, seed)?])
}
