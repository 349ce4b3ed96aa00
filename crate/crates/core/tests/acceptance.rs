//! End-to-end acceptance checks. Each test writes one `PASS`/`FAIL` line to
//! stderr (bypassing output capture) before asserting.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use learned_schwarz::ddm::{Levels, SchwarzOperator};
use learned_schwarz::dense::spectral_radius;
use learned_schwarz::evalcli::{self, EvalConfig, Method, ScalingConfig};
use learned_schwarz::loss::{sketch_bound_check, random_with_radius, LossConfig};
use learned_schwarz::mggnn::{ModelConfig, ModelParams};
use learned_schwarz::partition::{extend_overlap, interface_sparsity, interp_sparsity, Decomposition, InterpSparsity};
use learned_schwarz::sparse::CsrMatrix;
use learned_schwarz::train::{make_grid, make_grid_with_subdomains, model_gradient_check, prepare, DataConfig, Heads, TrainConfig};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: usize, name: &str, pass: bool, detail: &str) {
    let _ = writeln!(std::io::stderr(), "criterion {n:2} {}: {name}: {detail}", if pass { "PASS" } else { "FAIL" });
}

fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// `(I - C A)(I - M A)` built from dense restriction matrices.
fn dense_t(a: &CsrMatrix, d: &Decomposition, l: Option<&[CsrMatrix]>, p: Option<&CsrMatrix>) -> DMatrix<f64> {
    let n = a.n_rows;
    let ad = to_na(&a.to_dense());
    let mut m = DMatrix::<f64>::zeros(n, n);
    for (i, set) in d.overlap_sets.iter().enumerate() {
        let ni = set.len();
        let r = DMatrix::from_fn(ni, n, |k, v| if set[k] == v { 1.0 } else { 0.0 });
        let rt = DMatrix::from_fn(ni, n, |k, v| if set[k] == v && d.assign[v] == i { 1.0 } else { 0.0 });
        let mut ai = &r * &ad * r.transpose();
        if let Some(l) = l {
            ai += to_na(&l[i].to_dense());
        }
        m += rt.transpose() * ai.try_inverse().expect("subdomain inverse") * &r;
    }
    let id = DMatrix::<f64>::identity(n, n);
    let one = &id - &m * &ad;
    match p {
        None => one,
        Some(p) => {
            let pd = to_na(&p.to_dense());
            let c = &pd * (pd.transpose() * &ad * &pd).try_inverse().expect("coarse inverse") * pd.transpose();
            (&id - c * &ad) * one
        }
    }
}

fn matrix_free_t(op: &SchwarzOperator) -> DMatrix<f64> {
    let n = op.n();
    let mut t = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        for (i, v) in op.apply_t(&e).into_iter().enumerate() {
            t[(i, j)] = v;
        }
    }
    t
}

fn random_interface(a: &CsrMatrix, d: &Decomposition, rng: &mut ChaCha8Rng) -> Vec<CsrMatrix> {
    interface_sparsity(d, a)
        .iter()
        .zip(&d.overlap_sets)
        .map(|(pat, set)| {
            let vals: Vec<f64> = pat.rows.iter().map(|_| rng.gen_range(0.0..0.5)).collect();
            let trips: Vec<(usize, usize, f64)> = pat.rows.iter().zip(&pat.cols).zip(&vals).map(|((&r, &c), &v)| (r, c, v)).collect();
            let m = CsrMatrix::from_triplets(set.len(), set.len(), &trips);
            let mt = m.transpose();
            m.with_values(m.values.iter().zip(&mt.values).map(|(x, y)| 0.5 * (x + y)).collect())
        })
        .collect()
}

fn random_p(a: &CsrMatrix, d: &Decomposition, rng: &mut ChaCha8Rng) -> CsrMatrix {
    let pat = interp_sparsity(d, a, InterpSparsity::Neighbors);
    let trips: Vec<(usize, usize, f64)> = pat.rows.iter().zip(&pat.cols).map(|(&r, &c)| (r, c, rng.gen_range(0.1..1.0))).collect();
    CsrMatrix::from_triplets(a.n_rows, d.n_subdomains, &trips)
}

#[test]
fn c01_matrix_free_operator_matches_dense_assembly() {
    let _g = serial();
    let start = Instant::now();
    let data = DataConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut max_n = 0;
    for k in 0..5u64 {
        let g = make_grid_with_subdomains(k as usize, 120, 2 + k as usize % 3, &data, 100 + k).unwrap();
        let (a, d) = (&g.system.a, &g.decomposition);
        max_n = max_n.max(a.n_rows);
        let classical = SchwarzOperator::classical(a, d, Levels::Two).unwrap();
        let dense = dense_t(a, d, None, Some(&learned_schwarz::partition::classical_p(d)));
        worst = worst.max((matrix_free_t(&classical) - &dense).norm() / dense.norm());
        let l = random_interface(a, d, &mut rng);
        let p = random_p(a, d, &mut rng);
        let learned = SchwarzOperator::build(a, d, Some(&l), Some(&p), Levels::Two).unwrap();
        let dense = dense_t(a, d, Some(&l), Some(&p));
        worst = worst.max((matrix_free_t(&learned) - &dense).norm() / dense.norm());
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-10 && secs < 10.0 && max_n <= 100;
    report(1, "matrix-free T equals dense (I-CA)(I-MA)", pass, &format!("worst relative error {worst:.2e}, largest n {max_n}, {secs:.1}s"));
    assert!(pass);
}

#[test]
fn c02_exact_single_subdomain_solver() {
    let _g = serial();
    let g = make_grid(0, 400, &DataConfig::default(), 2).unwrap();
    let a = &g.system.a;
    let d = extend_overlap(&vec![0; a.n_rows], a, 0);
    let op = SchwarzOperator::build(a, &d, None, None, Levels::One).unwrap();
    let b = evalcli::synthetic_rhs(a, 3);
    let iters = op.stationary_solve(&b, 1e-8, 50).iterations;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let x: Vec<f64> = (0..a.n_rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let tx = op.apply_t(&x);
        let r = tx.iter().map(|v| v * v).sum::<f64>().sqrt() / x.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max(r);
    }
    let pass = iters == 1 && worst <= 1e-10;
    report(2, "S=1, delta=0 one-level solve is exact", pass, &format!("{iters} iteration(s), max |Tx|/|x| = {worst:.2e}"));
    assert!(pass);
}

#[test]
fn c03_surrogate_accuracy_on_dense_matrices() {
    let _g = serial();
    let start = Instant::now();
    let errs = evalcli::surrogate_errors(0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let worst = |rho: f64| errs.iter().filter(|e| e.0 == rho).map(|e| e.1).fold(0.0, f64::max);
    let all = worst(0.5).max(worst(0.9));
    let pass = all <= 0.06 && secs < 30.0;
    report(3, "softmax surrogate within 0.06 of rho (K=30, m=500)", pass, &format!("max error {:.4} at rho 0.5, {:.4} at rho 0.9 over {} matrices, {secs:.1}s", worst(0.5), worst(0.9), errs.len()));
    assert!(pass);
}

#[test]
fn c04_sampling_bounds() {
    let _g = serial();
    let t = random_with_radius(30, 0.9, 9).unwrap();
    let st = sketch_bound_check(t.view(), 25, 100, 0.1, 200, 10).unwrap();
    let pass = st.upper == 1.0 && st.lower >= 0.99;
    report(4, "Z <= |T^k|^(1/k) always, rho - 0.1 <= Z in >= 99%", pass, &format!("upper {:.3}, lower {:.3} over 200 trials", st.upper, st.lower));
    assert!(pass);
}

#[test]
fn c05_end_to_end_gradient() {
    let _g = serial();
    let start = Instant::now();
    let model = ModelConfig::default();
    let item = make_grid_with_subdomains(0, 60, 3, &DataConfig::default(), 21).unwrap();
    let nodes = item.mesh.n_nodes();
    let grid = prepare(vec![item], &model).unwrap();
    let params = ModelParams::random(&model, 22, true);
    let st = model_gradient_check(&params, &grid[0], Heads::Both, &LossConfig::default(), 200, 1e-5, 1e-3, 23).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = st.pass_rate() >= 0.99 && secs < 120.0;
    report(5, "tape gradient vs central differences", pass, &format!("{}/{} coordinates within 1e-3 on {nodes} nodes, worst {:.2e}, {secs:.1}s", st.passed, st.checked, st.worst));
    assert!(pass);
}

#[test]
fn c06_classical_baselines() {
    let _g = serial();
    let start = Instant::now();
    let cfg = EvalConfig { sizes: vec![1000], per_size: 10, rho_max_dofs: 0, ..Default::default() };
    let grids = evalcli::test_grids(&cfg, &TrainConfig::smoke()).unwrap();
    let mut max_rho: f64 = 0.0;
    for g in &grids {
        let op = SchwarzOperator::classical(&g.system.a, &g.decomposition, Levels::Two).unwrap();
        max_rho = max_rho.max(spectral_radius(op.assemble_dense_t().view()).unwrap());
    }
    let rep = evalcli::evaluate(&grids, &evalcli::test_targets(&cfg), None, &[Method::Ras1, Method::Ras2], &cfg);
    let (one, two) = (rep.mean_stationary(Method::Ras1), rep.mean_stationary(Method::Ras2));
    let secs = start.elapsed().as_secs_f64();
    let pass = max_rho < 1.0 && two < one && secs < 300.0;
    report(6, "2-level RAS contracts and beats 1-level", pass, &format!("max rho {max_rho:.4}; mean iterations 1-level {one:.1}, 2-level {two:.1}; {secs:.1}s"));
    assert!(pass);
}

struct SmokeRun {
    report: PathBuf,
    summary: Vec<(String, f64, f64)>,
    seconds: f64,
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_lschwarz")
}

fn run_cli(dir: &Path, args: &[&str], extra: &[String]) {
    let mut cmd = Command::new(bin());
    cmd.current_dir(dir).args(args);
    for s in ["eval.sizes=[1000]", "eval.per_size=10", "eval.rho_max_dofs=0"].iter().map(|s| s.to_string()).chain(extra.iter().cloned()) {
        cmd.arg("--set").arg(s);
    }
    let out = cmd.env("RUST_LOG", "warn").output().expect("run lschwarz");
    assert!(out.status.success() || out.status.code() == Some(3), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

/// `gen-data`, `train` and `eval` through the command-line tool.
fn smoke_pipeline(dir: &Path, extra: &[String]) -> SmokeRun {
    let start = Instant::now();
    std::fs::create_dir_all(dir).unwrap();
    run_cli(dir, &["gen-data", "--out", "data"], extra);
    run_cli(dir, &["train", "--data", "data", "--out", "model"], extra);
    run_cli(dir, &["eval", "--checkpoint", "model/model.ckpt", "--data", "data", "--out", "eval"], extra);
    let mut rdr = csv::Reader::from_path(dir.join("eval/summary.csv")).unwrap();
    let summary = rdr
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].to_string(), r[2].parse().unwrap(), r[3].parse().unwrap())
        })
        .collect();
    SmokeRun { report: dir.join("eval/report.csv"), summary, seconds: start.elapsed().as_secs_f64() }
}

fn workdir() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| tempfile::tempdir().unwrap()).path()
}

fn default_smoke() -> &'static SmokeRun {
    static RUN: OnceLock<SmokeRun> = OnceLock::new();
    RUN.get_or_init(|| smoke_pipeline(&workdir().join("run_a"), &[]))
}

fn means(run: &SmokeRun, method: Method) -> (f64, f64) {
    let row = run.summary.iter().find(|r| r.0 == method.name()).expect("method row");
    (row.1, row.2)
}

#[test]
fn c07_learned_two_level_not_worse_than_classical() {
    let _g = serial();
    let run = default_smoke();
    let (ls, lf) = means(run, Method::Learned2);
    let (cs, cf) = means(run, Method::Ras2);
    let pass = ls <= cs && lf <= cf + 1.0 && run.seconds < 1800.0;
    report(7, "smoke-trained 2-level vs classical 2-level RAS", pass, &format!("stationary {ls:.1} vs {cs:.1}, fgmres {lf:.1} vs {cf:.1}, pipeline {:.0}s", run.seconds));
    assert!(pass);
}

#[test]
fn c08_own_only_sparsity_does_not_beat_classical() {
    let _g = serial();
    let run = smoke_pipeline(&workdir().join("own_only"), &["train.model.sparsity=\"own-only\"".to_string()]);
    let (ls, _) = means(&run, Method::Learned2);
    let (cs, _) = means(&run, Method::Ras2);
    let pass = ls >= cs;
    report(8, "own-only interpolation sparsity vs classical 2-level RAS", pass, &format!("stationary {ls:.1} vs {cs:.1}"));
    assert!(pass);
}

#[test]
fn c09_forward_pass_scales_linearly() {
    let _g = serial();
    let train = TrainConfig::smoke();
    let params = ModelParams::init(&train.model, 0);
    let rows = evalcli::scaling(&params, &ScalingConfig { sizes: vec![1000, 4000, 16000], runs: 5, seed: 5 }, &train).unwrap();
    let ratios: Vec<f64> = rows.windows(2).map(|w| w[1].median_seconds / w[0].median_seconds).collect();
    let pass = ratios.iter().all(|&r| r <= 6.0);
    let sizes: Vec<usize> = rows.iter().map(|r| r.n).collect();
    report(9, "forward time ratio for 4x unknowns <= 6", pass, &format!("unknowns {sizes:?}, ratios {:.2} and {:.2}", ratios[0], ratios[1]));
    assert!(pass);
}

#[test]
fn c10_cli_reports_are_deterministic() {
    let _g = serial();
    let a = default_smoke();
    let b = smoke_pipeline(&workdir().join("run_b"), &[]);
    let ra = std::fs::read(&a.report).unwrap();
    let rb = std::fs::read(&b.report).unwrap();
    let sa = std::fs::read(a.report.with_file_name("summary.csv")).unwrap();
    let sb = std::fs::read(b.report.with_file_name("summary.csv")).unwrap();
    let pass = !ra.is_empty() && ra == rb && sa == sb;
    report(10, "gen-data + train + eval twice gives identical CSV", pass, &format!("report {} bytes, identical: {}", ra.len(), ra == rb));
    assert!(pass);
}

#[test]
fn smoke_training_loss_decreases() {
    let _g = serial();
    let run = default_smoke();
    let hist = std::fs::read_to_string(run.report.parent().unwrap().parent().unwrap().join("model/history.csv")).unwrap();
    let losses: Vec<f64> = hist.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(losses.len(), 3);
    assert!(losses[2] < losses[0], "{losses:?}");
}
