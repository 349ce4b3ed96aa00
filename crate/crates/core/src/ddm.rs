//! One- and two-level restricted additive Schwarz operators, with optional
//! Robin-type interface terms on the subdomain matrices, plus the stationary
//! iteration and flexible GMRES that use them.

use std::sync::Arc;

use ndarray::Array2;
use rayon::prelude::*;

use crate::autodiff::{Tape, Var};
use crate::dense::Lu;
use crate::error::{Error, Result};
use crate::partition::{classical_p, interface_sparsity, interp_sparsity, Decomposition, InterpSparsity};
use crate::sparse::CsrMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Levels {
    One,
    Two,
}

#[derive(Clone, Debug)]
struct Subdomain {
    dofs: Vec<usize>,
    /// Local positions of the owned DoFs.
    owned_local: Vec<usize>,
    lu: Lu,
}

#[derive(Clone, Debug)]
pub struct SchwarzOperator {
    a: CsrMatrix,
    subdomains: Vec<Subdomain>,
    p: Option<CsrMatrix>,
    coarse_lu: Option<Lu>,
    levels: Levels,
}

/// Dense Galerkin block `R A R^T` for the sorted DoF set `dofs`.
pub fn subdomain_matrix(a: &CsrMatrix, dofs: &[usize]) -> Array2<f64> {
    let k = dofs.len();
    let mut m = Array2::zeros((k, k));
    for (li, &v) in dofs.iter().enumerate() {
        for (w, val) in a.row(v) {
            if let Ok(lj) = dofs.binary_search(&w) {
                m[[li, lj]] += val;
            }
        }
    }
    m
}

/// Dense `P^T A P`.
pub fn galerkin_coarse(a: &CsrMatrix, p: &CsrMatrix) -> Array2<f64> {
    let ap = a.matmul(p);
    p.transpose().matmul(&ap).to_dense()
}

impl SchwarzOperator {
    /// Assembles and factors `A_i + L_i` for every subdomain and, for two
    /// levels, `P^T A P`. `interface` holds one local matrix per subdomain on
    /// its interface pattern; `p` defaults to the classical partition of unity.
    pub fn build(
        a: &CsrMatrix,
        d: &Decomposition,
        interface: Option<&[CsrMatrix]>,
        p: Option<&CsrMatrix>,
        levels: Levels,
    ) -> Result<Self> {
        if let Some(ls) = interface {
            if ls.len() != d.n_subdomains {
                return Err(Error::InvalidArgument("one interface matrix per subdomain expected".into()));
            }
            let pats = interface_sparsity(d, a);
            for (i, (l, pat)) in ls.iter().zip(&pats).enumerate() {
                let k = d.overlap_sets[i].len();
                if l.n_rows != k || l.n_cols != k {
                    return Err(Error::InvalidArgument(format!("interface matrix {i} has the wrong size")));
                }
                let allowed = pat.to_csr(k, k, 0.0);
                for r in 0..k {
                    for (c, v) in l.row(r) {
                        if v != 0.0 && allowed.find(r, c).is_none() {
                            return Err(Error::InvalidArgument(format!(
                                "interface value ({r},{c}) of subdomain {i} outside its pattern"
                            )));
                        }
                    }
                }
            }
        }
        let subdomains = d
            .overlap_sets
            .par_iter()
            .enumerate()
            .map(|(i, dofs)| {
                let mut m = subdomain_matrix(a, dofs);
                if let Some(ls) = interface {
                    for r in 0..dofs.len() {
                        for (c, v) in ls[i].row(r) {
                            m[[r, c]] += v;
                        }
                    }
                }
                let lu = Lu::factor(m.view()).ok_or(Error::FactorizationFailure { subdomain: Some(i) })?;
                Ok(Subdomain { dofs: dofs.clone(), owned_local: d.owned_local_positions(i), lu })
            })
            .collect::<Result<Vec<_>>>()?;

        let (p, coarse_lu) = match levels {
            Levels::One => (None, None),
            Levels::Two => {
                let p = match p {
                    Some(p) => {
                        if p.n_rows != d.n || p.n_cols != d.n_subdomains {
                            return Err(Error::InvalidArgument("interpolation has the wrong shape".into()));
                        }
                        let allowed = interp_sparsity(d, a, InterpSparsity::Neighbors).to_csr(d.n, d.n_subdomains, 0.0);
                        for r in 0..p.n_rows {
                            if p.row(r).any(|(c, v)| v != 0.0 && allowed.find(r, c).is_none()) {
                                return Err(Error::InvalidArgument(format!("interpolation row {r} outside its pattern")));
                            }
                        }
                        p.clone()
                    }
                    None => classical_p(d),
                };
                let ac = galerkin_coarse(a, &p);
                let lu = Lu::factor(ac.view()).ok_or(Error::FactorizationFailure { subdomain: None })?;
                (Some(p), Some(lu))
            }
        };
        Ok(Self { a: a.clone(), subdomains, p, coarse_lu, levels })
    }

    /// Classical RAS (no interface terms, partition-of-unity interpolation).
    pub fn classical(a: &CsrMatrix, d: &Decomposition, levels: Levels) -> Result<Self> {
        Self::build(a, d, None, None, levels)
    }

    pub fn levels(&self) -> Levels {
        self.levels
    }

    pub fn n(&self) -> usize {
        self.a.n_rows
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.a
    }

    pub fn interpolation(&self) -> Option<&CsrMatrix> {
        self.p.as_ref()
    }

    /// Same fine level, coarse correction dropped.
    pub fn one_level(&self) -> Self {
        Self { p: None, coarse_lu: None, levels: Levels::One, ..self.clone() }
    }

    /// `sum_i R~_i^T (A_i + L_i)^{-1} R_i x`
    pub fn apply_m(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n());
        let locals: Vec<Vec<f64>> = self
            .subdomains
            .par_iter()
            .map(|s| {
                let mut r: Vec<f64> = s.dofs.iter().map(|&v| x[v]).collect();
                s.lu.solve_in_place(&mut r);
                r
            })
            .collect();
        let mut y = vec![0.0; self.n()];
        for (s, loc) in self.subdomains.iter().zip(&locals) {
            for &k in &s.owned_local {
                y[s.dofs[k]] += loc[k];
            }
        }
        y
    }

    /// `P (P^T A P)^{-1} P^T x`
    pub fn coarse_correct(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (p, lu) = match (&self.p, &self.coarse_lu) {
            (Some(p), Some(lu)) => (p, lu),
            _ => return Err(Error::ModeError),
        };
        let mut c = p.spmv_transpose(x);
        lu.solve_in_place(&mut c);
        Ok(p.spmv(&c))
    }

    /// Error propagation `(I - C A)(I - M A) x`; the coarse factor only for two levels.
    pub fn apply_t(&self, x: &[f64]) -> Vec<f64> {
        let ax = self.a.spmv(x);
        let mx = self.apply_m(&ax);
        let y: Vec<f64> = x.iter().zip(&mx).map(|(a, b)| a - b).collect();
        match self.levels {
            Levels::One => y,
            Levels::Two => {
                let ay = self.a.spmv(&y);
                let cy = self.coarse_correct(&ay).expect("two-level operator");
                y.iter().zip(&cy).map(|(a, b)| a - b).collect()
            }
        }
    }

    /// Preconditioner action: `M r` for one level, `C r + M r - C A M r` for two.
    pub fn apply_preconditioner(&self, r: &[f64]) -> Vec<f64> {
        let z = self.apply_m(r);
        match self.levels {
            Levels::One => z,
            Levels::Two => {
                let az = self.a.spmv(&z);
                let resid: Vec<f64> = r.iter().zip(&az).map(|(a, b)| a - b).collect();
                let c = self.coarse_correct(&resid).expect("two-level operator");
                z.iter().zip(&c).map(|(a, b)| a + b).collect()
            }
        }
    }

    /// Dense `T`, one column per unit vector.
    pub fn assemble_dense_t(&self) -> Array2<f64> {
        let n = self.n();
        let mut t = Array2::zeros((n, n));
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.apply_t(&e);
            e[j] = 0.0;
            for (i, v) in col.into_iter().enumerate() {
                t[[i, j]] = v;
            }
        }
        t
    }

    pub fn stationary_solve(&self, b: &[f64], tol: f64, max_iter: usize) -> SolveResult {
        stationary_solve(&self.a, b, |r| self.apply_preconditioner(r), tol, max_iter)
    }

    pub fn fgmres(&self, b: &[f64], tol: f64, max_iter: usize) -> Result<SolveResult> {
        fgmres(&self.a, b, |v| self.apply_preconditioner(v), tol, max_iter)
    }
}

/// Interface values on the tape: one value per interface edge plus, for each
/// subdomain, the `(edge, local row, local col)` positions they fill.
pub struct TapeInterface<'a> {
    pub values: Var,
    pub maps: &'a [Arc<Vec<(usize, usize, usize)>>],
}

/// The error-propagation operator recorded on a tape so that `T X` can be
/// differentiated with respect to interface and interpolation values.
pub struct TapeSchwarz {
    a: Arc<CsrMatrix>,
    dofs: Vec<Arc<Vec<usize>>>,
    owned_local: Vec<Arc<Vec<usize>>>,
    owned_global: Arc<Vec<usize>>,
    inverses: Vec<Var>,
    coarse: Option<(Arc<CsrMatrix>, Var, Var)>,
}

impl TapeSchwarz {
    /// `p` is a pattern with differentiable values; `None` uses the
    /// classical interpolation as a constant.
    pub fn build(
        tape: &mut Tape,
        a: &Arc<CsrMatrix>,
        d: &Decomposition,
        interface: Option<TapeInterface<'_>>,
        p: Option<(&Arc<CsrMatrix>, Var)>,
        levels: Levels,
    ) -> Result<Self> {
        let mut inverses = Vec::with_capacity(d.n_subdomains);
        for (i, set) in d.overlap_sets.iter().enumerate() {
            let base = subdomain_matrix(a, set);
            let m = match &interface {
                Some(ti) => tape.scatter_dense(ti.values, &ti.maps[i], &base)?,
                None => tape.constant(base),
            };
            let inv = tape.inverse(m).map_err(|e| match e {
                Error::FactorizationFailure { .. } => Error::FactorizationFailure { subdomain: Some(i) },
                other => other,
            })?;
            inverses.push(inv);
        }
        let coarse = match levels {
            Levels::One => None,
            Levels::Two => {
                let (pat, vals) = match p {
                    Some((pat, v)) => (Arc::clone(pat), v),
                    None => {
                        let cp = classical_p(d);
                        let v = tape.constant(Array2::from_shape_vec((cp.nnz(), 1), cp.values.clone()).expect("column"));
                        (Arc::new(cp), v)
                    }
                };
                let g = tape.galerkin(&pat, vals, a)?;
                let ginv = tape.inverse(g)?;
                Some((pat, vals, ginv))
            }
        };
        let mut owned_global = Vec::with_capacity(d.n);
        let mut owned_local = Vec::with_capacity(d.n_subdomains);
        for (i, set) in d.overlap_sets.iter().enumerate() {
            let loc = d.owned_local_positions(i);
            owned_global.extend(loc.iter().map(|&k| set[k]));
            owned_local.push(Arc::new(loc));
        }
        Ok(Self {
            a: Arc::clone(a),
            dofs: d.overlap_sets.iter().map(|s| Arc::new(s.clone())).collect(),
            owned_local,
            owned_global: Arc::new(owned_global),
            inverses,
            coarse,
        })
    }

    /// `tr(P^T A P)`, two-level operators only.
    pub fn galerkin_trace(&self, tape: &mut Tape) -> Result<Var> {
        let (pat, vals, _) = self.coarse.as_ref().ok_or(Error::ModeError)?;
        let g = tape.galerkin(pat, *vals, &self.a)?;
        tape.trace(g)
    }

    pub fn apply_m(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut pieces = Vec::with_capacity(self.inverses.len());
        for ((dofs, inv), own) in self.dofs.iter().zip(&self.inverses).zip(&self.owned_local) {
            let xi = tape.gather_rows(x, dofs)?;
            let yi = tape.matmul(*inv, xi)?;
            pieces.push(tape.gather_rows(yi, own)?);
        }
        let stacked = tape.concat_rows(&pieces)?;
        tape.scatter_add_rows(stacked, &self.owned_global, self.a.n_rows)
    }

    pub fn apply_t(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let ax = tape.spmm_const(&self.a, x)?;
        let max = self.apply_m(tape, ax)?;
        let y = tape.sub(x, max)?;
        match &self.coarse {
            None => Ok(y),
            Some((pat, vals, ginv)) => {
                let ay = tape.spmm_const(&self.a, y)?;
                let r = tape.spmm_pattern(pat, *vals, ay, true)?;
                let c = tape.matmul(*ginv, r)?;
                let pc = tape.spmm_pattern(pat, *vals, c, false)?;
                tape.sub(y, pc)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub x: Vec<f64>,
    /// `max_iter + 1` when the tolerance was not reached.
    pub iterations: usize,
    /// Relative residual after each iteration.
    pub history: Vec<f64>,
}

impl SolveResult {
    pub fn converged(&self, max_iter: usize) -> bool {
        self.iterations <= max_iter
    }

    /// `iteration,residual` lines.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iteration,residual\n");
        for (k, r) in self.history.iter().enumerate() {
            s.push_str(&format!("{},{:e}\n", k + 1, r));
        }
        s
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// `x <- x + M (b - A x)` from `x = 0` until `|b - A x| <= tol |b|`.
pub fn stationary_solve(
    a: &CsrMatrix,
    b: &[f64],
    precond: impl Fn(&[f64]) -> Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> SolveResult {
    let bn = norm(b);
    let mut x = vec![0.0; b.len()];
    let mut history = Vec::new();
    if bn == 0.0 {
        return SolveResult { x, iterations: 0, history };
    }
    let mut r = b.to_vec();
    let mut k = 0;
    loop {
        let rel = norm(&r) / bn;
        if rel <= tol {
            return SolveResult { x, iterations: k, history };
        }
        if k == max_iter || !rel.is_finite() {
            return SolveResult { x, iterations: max_iter + 1, history };
        }
        let z = precond(&r);
        for (xi, zi) in x.iter_mut().zip(&z) {
            *xi += zi;
        }
        let ax = a.spmv(&x);
        for ((ri, bi), axi) in r.iter_mut().zip(b).zip(&ax) {
            *ri = bi - axi;
        }
        k += 1;
        history.push(norm(&r) / bn);
    }
}

/// Flexible GMRES, right preconditioned, no restart, zero initial guess.
pub fn fgmres(
    a: &CsrMatrix,
    b: &[f64],
    precond: impl Fn(&[f64]) -> Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<SolveResult> {
    let n = b.len();
    let beta = norm(b);
    let mut history = Vec::new();
    if beta == 0.0 {
        return Ok(SolveResult { x: vec![0.0; n], iterations: 0, history });
    }
    let mut v: Vec<Vec<f64>> = vec![b.iter().map(|x| x / beta).collect()];
    let mut z: Vec<Vec<f64>> = Vec::new();
    // column-major Hessenberg after rotations (upper triangular part)
    let mut h: Vec<Vec<f64>> = Vec::new();
    let mut cs: Vec<f64> = Vec::new();
    let mut sn: Vec<f64> = Vec::new();
    let mut g = vec![beta];

    let finish = |h: &[Vec<f64>], g: &[f64], z: &[Vec<f64>]| -> Vec<f64> {
        let k = h.len();
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in i + 1..k {
                s -= h[j][i] * y[j];
            }
            y[i] = s / h[i][i];
        }
        let mut x = vec![0.0; n];
        for (zj, yj) in z.iter().zip(&y) {
            for (xi, zi) in x.iter_mut().zip(zj) {
                *xi += yj * zi;
            }
        }
        x
    };

    for j in 0..max_iter {
        let zj = precond(&v[j]);
        let mut w = a.spmv(&zj);
        z.push(zj);
        let mut col = vec![0.0; j + 2];
        for i in 0..=j {
            let hij = dot(&w, &v[i]);
            col[i] = hij;
            for (wk, vk) in w.iter_mut().zip(&v[i]) {
                *wk -= hij * vk;
            }
        }
        let hnext = norm(&w);
        col[j + 1] = hnext;
        for i in 0..j {
            let t = cs[i] * col[i] + sn[i] * col[i + 1];
            col[i + 1] = -sn[i] * col[i] + cs[i] * col[i + 1];
            col[i] = t;
        }
        let rho = col[j].hypot(col[j + 1]);
        let (c, s) = if rho == 0.0 { (1.0, 0.0) } else { (col[j] / rho, col[j + 1] / rho) };
        cs.push(c);
        sn.push(s);
        col[j] = rho;
        col[j + 1] = 0.0;
        g.push(-s * g[j]);
        g[j] *= c;
        col.truncate(j + 1);
        h.push(col);

        let resid = g[j + 1].abs();
        history.push(resid / beta);
        if resid <= tol * beta {
            let x = finish(&h, &g, &z);
            return Ok(SolveResult { x, iterations: j + 1, history });
        }
        if hnext <= 1e-14 * beta || !resid.is_finite() {
            return Err(Error::NumericalBreakdown { step: j + 1, residual: resid / beta });
        }
        v.push(w.iter().map(|x| x / hnext).collect());
    }
    let x = finish(&h, &g, &z);
    Ok(SolveResult { x, iterations: max_iter + 1, history })
}
