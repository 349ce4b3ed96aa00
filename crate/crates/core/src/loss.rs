//! Stochastic spectral-radius surrogate built from k-th roots of sampled
//! power-iteration norms, its variants, and dense reference measures.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, Tape, Var};
use crate::dense::{sigma_max, spectral_radius};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossVariant {
    SoftmaxTrace,
    SoftmaxOnly,
    MaxOnly,
    MaxTrace,
}

impl LossVariant {
    pub fn uses_trace(self) -> bool {
        matches!(self, Self::SoftmaxTrace | Self::MaxTrace)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub k: usize,
    pub m: usize,
    pub gamma: f64,
    pub variant: LossVariant,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { k: 10, m: 100, gamma: 1e-2, variant: LossVariant::SoftmaxTrace }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.m == 0 || !(self.gamma >= 0.0) {
            return Err(Error::Config(format!("loss needs k >= 1, m >= 1, gamma >= 0 (got {self:?})")));
        }
        Ok(())
    }
}

/// Two independent standard normals.
fn box_muller(rng: &mut impl Rng) -> (f64, f64) {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    let r = (-2.0 * u1.ln()).sqrt();
    let th = 2.0 * std::f64::consts::PI * u2;
    (r * th.cos(), r * th.sin())
}

/// `m` independent points on the unit sphere in `R^n`, one per column,
/// from Box-Muller normals.
pub fn sample_unit_sphere(n: usize, m: usize, seed: u64) -> Mat {
    assert!(n >= 1, "sphere dimension must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::zeros((n, m));
    for mut col in x.columns_mut() {
        let mut i = 0;
        while i < n {
            let (z0, z1) = box_muller(&mut rng);
            col[i] = z0;
            if i + 1 < n {
                col[i + 1] = z1;
            }
            i += 2;
        }
        let nrm = col.dot(&col).sqrt();
        col /= nrm;
    }
    x
}

/// Surrogate on the tape. `apply_t` maps an `n x m` block to `T` times it;
/// `trace` is `tr(P^T A P)` when the variant needs it.
pub fn loss_eval(
    tape: &mut Tape,
    apply_t: &mut dyn FnMut(&mut Tape, Var) -> Result<Var>,
    samples: Mat,
    trace: Option<Var>,
    cfg: &LossConfig,
) -> Result<Var> {
    cfg.validate()?;
    let mut x = tape.constant(samples);
    let mut zs = Vec::with_capacity(cfg.k);
    let mut last_norms = None;
    for k in 1..=cfg.k {
        x = apply_t(tape, x)?;
        let y = tape.col_norms(x);
        if tape.value(y).iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalOverflow { k });
        }
        let root = tape.pow_scalar(y, 1.0 / k as f64);
        zs.push(tape.max_all(root));
        last_norms = Some(y);
    }
    let head = match cfg.variant {
        LossVariant::SoftmaxTrace | LossVariant::SoftmaxOnly => {
            let z = tape.concat_cols(&zs)?;
            let w = tape.row_softmax(z);
            tape.dot(w, z)?
        }
        LossVariant::MaxOnly | LossVariant::MaxTrace => tape.max_all(last_norms.expect("k >= 1")),
    };
    if cfg.variant.uses_trace() && cfg.gamma > 0.0 {
        let tr = trace.ok_or_else(|| Error::InvalidArgument("variant needs the trace term".into()))?;
        let scaled = tape.scale(tr, cfg.gamma);
        tape.add(head, scaled)
    } else {
        Ok(head)
    }
}

/// Surrogate of a dense operator with no trace term (`gamma` ignored).
pub fn dense_surrogate(t: ArrayView2<f64>, k: usize, m: usize, seed: u64, variant: LossVariant) -> Result<f64> {
    let mut tape = Tape::new();
    let tv = tape.constant(t.to_owned());
    let cfg = LossConfig { k, m, gamma: 0.0, variant };
    let x = sample_unit_sphere(t.nrows(), m, seed);
    let out = loss_eval(&mut tape, &mut |tp, v| tp.matmul(tv, v), x, None, &cfg)?;
    Ok(tape.scalar(out))
}

#[derive(Clone, Copy, Debug)]
pub struct SpectralMeasures {
    /// Largest eigenvalue modulus.
    pub rho: f64,
    /// Largest singular value.
    pub sigma_max: f64,
}

pub fn brute_force_rho(t: ArrayView2<f64>) -> Result<SpectralMeasures> {
    Ok(SpectralMeasures { rho: spectral_radius(t)?, sigma_max: sigma_max(t)? })
}

/// `||T^k||^{1/k}` for `k = 1..=kmax`.
pub fn norm_root_sequence(t: ArrayView2<f64>, kmax: usize) -> Result<Vec<f64>> {
    let mut p = t.to_owned();
    let mut out = Vec::with_capacity(kmax);
    for k in 1..=kmax {
        out.push(sigma_max(p.view())?.powf(1.0 / k as f64));
        p = p.dot(&t);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
pub struct SketchBoundStats {
    /// Fraction of trials with `Z <= ||T^k||^{1/k}` (up to rounding).
    pub upper: f64,
    /// Fraction of trials with `rho(T) - xi <= Z`.
    pub lower: f64,
}

/// Monte-Carlo check of the sampled k-th root norm against its bounds.
pub fn sketch_bound_check(t: ArrayView2<f64>, k: usize, m: usize, xi: f64, trials: usize, seed: u64) -> Result<SketchBoundStats> {
    let rho = spectral_radius(t)?;
    let mut tk = Array2::eye(t.nrows());
    for _ in 0..k {
        tk = tk.dot(&t);
    }
    let bound = sigma_max(tk.view())?.powf(1.0 / k as f64);
    let (mut up, mut low) = (0usize, 0usize);
    for trial in 0..trials {
        let x = sample_unit_sphere(t.nrows(), m, seed.wrapping_add(trial as u64));
        let y = tk.dot(&x);
        let z = y
            .columns()
            .into_iter()
            .map(|c| c.dot(&c).sqrt().powf(1.0 / k as f64))
            .fold(0.0, f64::max);
        up += usize::from(z <= bound * (1.0 + 1e-12));
        low += usize::from(rho - xi <= z);
    }
    Ok(SketchBoundStats { upper: up as f64 / trials as f64, lower: low as f64 / trials as f64 })
}

/// Dense matrix with i.i.d. standard normal entries rescaled to spectral radius `rho`.
pub fn random_with_radius(n: usize, rho: f64, seed: u64) -> Result<Mat> {
    let g = sample_normals(n, n, seed);
    let r = spectral_radius(g.view())?;
    Ok(g * (rho / r))
}

fn sample_normals(r: usize, c: usize, seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = Vec::with_capacity(r * c + 1);
    while v.len() < r * c {
        let (z0, z1) = box_muller(&mut rng);
        v.push(z0);
        v.push(z1);
    }
    v.truncate(r * c);
    Array2::from_shape_vec((r, c), v).expect("shape")
}
