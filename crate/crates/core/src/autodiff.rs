//! Reverse-mode differentiation on a tape of dense matrix values.
//!
//! Vectors are `n x 1`, scalars `1 x 1`. Fixed-pattern sparse matrices enter
//! either as constants (`spmm_const`) or as a column of differentiable values
//! over a fixed pattern (`spmm_pattern`, `galerkin`).

use std::sync::Arc;

use ndarray::{s, Array2, Axis};

use crate::dense::Lu;
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

pub type Mat = Array2<f64>;

type Backward = Box<dyn Fn(&Mat, &[&Mat], &Mat, &[bool]) -> Vec<Option<Mat>> + Send + Sync>;

struct Node {
    inputs: Vec<usize>,
    value: Mat,
    needs_grad: bool,
    backward: Option<Backward>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    pub id: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Var {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints indexed by node id; absent entries are zero.
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    pub fn get_or_zero(&self, v: Var) -> Mat {
        self.get(v).cloned().unwrap_or_else(|| Mat::zeros((v.rows, v.cols)))
    }
}

fn mismatch(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch { op, detail }
}

fn same_shape(op: &'static str, a: Var, b: Var) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(mismatch(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.id].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.id].value[[0, 0]]
    }

    fn push(&mut self, inputs: Vec<usize>, value: Mat, backward: Option<Backward>) -> Var {
        let needs_grad = backward.is_some() && inputs.iter().any(|&i| self.nodes[i].needs_grad);
        let (rows, cols) = value.dim();
        let id = self.nodes.len();
        self.nodes.push(Node { inputs, value, needs_grad, backward: if needs_grad { backward } else { None } });
        Var { id, rows, cols }
    }

    fn op<F>(&mut self, inputs: &[Var], value: Mat, f: F) -> Var
    where
        F: Fn(&Mat, &[&Mat], &Mat, &[bool]) -> Vec<Option<Mat>> + Send + Sync + 'static,
    {
        self.push(inputs.iter().map(|v| v.id).collect(), value, Some(Box::new(f)))
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Mat) -> Var {
        let (rows, cols) = value.dim();
        let id = self.nodes.len();
        self.nodes.push(Node { inputs: vec![], value, needs_grad: true, backward: None });
        Var { id, rows, cols }
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(vec![], value, None)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", a, b)?;
        let v = self.value(a) + self.value(b);
        Ok(self.op(&[a, b], v, |g, _, _, _| vec![Some(g.clone()), Some(g.clone())]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", a, b)?;
        let v = self.value(a) - self.value(b);
        Ok(self.op(&[a, b], v, |g, _, _, _| vec![Some(g.clone()), Some(-g)]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", a, b)?;
        let v = self.value(a) * self.value(b);
        Ok(self.op(&[a, b], v, |g, x, _, need| {
            vec![need[0].then(|| g * x[1]), need[1].then(|| g * x[0])]
        }))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.op(&[a], v, move |g, _, _, _| vec![Some(g * c)])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.op(&[a], v, |g, x, _, _| {
            let mut out = g.clone();
            out.zip_mut_with(x[0], |o, &xi| {
                if xi <= 0.0 {
                    *o = 0.0
                }
            });
            vec![Some(out)]
        })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        if a.cols != b.rows {
            return Err(mismatch("matmul", format!("{:?} x {:?}", a.shape(), b.shape())));
        }
        let v = self.value(a).dot(self.value(b));
        Ok(self.op(&[a, b], v, |g, x, _, need| {
            vec![need[0].then(|| g.dot(&x[1].t())), need[1].then(|| x[0].t().dot(g))]
        }))
    }

    /// `x + 1 b` with `b` a `1 x c` row.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        if b.rows != 1 || b.cols != x.cols {
            return Err(mismatch("add_bias", format!("{:?} + {:?}", x.shape(), b.shape())));
        }
        let v = self.value(x) + self.value(b);
        Ok(self.op(&[x, b], v, |g, _, _, need| {
            vec![Some(g.clone()), need[1].then(|| g.sum_axis(Axis(0)).insert_axis(Axis(0)))]
        }))
    }

    /// `M x` for a constant sparse `M`.
    pub fn spmm_const(&mut self, m: &Arc<CsrMatrix>, x: Var) -> Result<Var> {
        if m.n_cols != x.rows {
            return Err(mismatch("spmm_const", format!("{}x{} by {:?}", m.n_rows, m.n_cols, x.shape())));
        }
        let v = m.spmm(self.value(x).view());
        let m = Arc::clone(m);
        Ok(self.op(&[x], v, move |g, _, _, _| vec![Some(m.spmm_transpose(g.view()))]))
    }

    /// `S x` (or `S^T x`) where `S` has the structure of `pattern` and the
    /// differentiable entries `vals` (`nnz x 1`, CSR order).
    pub fn spmm_pattern(&mut self, pattern: &Arc<CsrMatrix>, vals: Var, x: Var, transpose: bool) -> Result<Var> {
        let nnz = pattern.nnz();
        if vals.rows != nnz || vals.cols != 1 {
            return Err(mismatch("spmm_pattern", format!("{} values for {} entries", vals.rows, nnz)));
        }
        let inner = if transpose { pattern.n_rows } else { pattern.n_cols };
        if x.rows != inner {
            return Err(mismatch("spmm_pattern", format!("operand has {} rows, expected {inner}", x.rows)));
        }
        let s = pattern.with_values(self.value(vals).column(0).to_vec());
        let v = if transpose { s.spmm_transpose(self.value(x).view()) } else { s.spmm(self.value(x).view()) };
        let pat = Arc::clone(pattern);
        Ok(self.op(&[vals, x], v, move |g, inp, _, need| {
            let s = pat.with_values(inp[0].column(0).to_vec());
            let gv = need[0].then(|| {
                let mut gv = Mat::zeros((pat.nnz(), 1));
                let xv = inp[1];
                for r in 0..pat.n_rows {
                    for k in pat.row_range(r) {
                        let c = pat.col_idx[k];
                        let (gr, xr) = if transpose { (c, r) } else { (r, c) };
                        gv[[k, 0]] = g.row(gr).dot(&xv.row(xr));
                    }
                }
                gv
            });
            let gx = need[1].then(|| if transpose { s.spmm(g.view()) } else { s.spmm_transpose(g.view()) });
            vec![gv, gx]
        }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |p| p.rows);
        if parts.iter().any(|p| p.rows != rows) {
            return Err(mismatch("concat_cols", "row counts differ".into()));
        }
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).map_err(|e| mismatch("concat_cols", e.to_string()))?;
        let widths: Vec<usize> = parts.iter().map(|p| p.cols).collect();
        Ok(self.op(parts, v, move |g, _, _, need| {
            let mut off = 0;
            widths
                .iter()
                .zip(need)
                .map(|(&w, &n)| {
                    let piece = n.then(|| g.slice(s![.., off..off + w]).to_owned());
                    off += w;
                    piece
                })
                .collect()
        }))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map_or(0, |p| p.cols);
        if parts.iter().any(|p| p.cols != cols) {
            return Err(mismatch("concat_rows", "column counts differ".into()));
        }
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).map_err(|e| mismatch("concat_rows", e.to_string()))?;
        let heights: Vec<usize> = parts.iter().map(|p| p.rows).collect();
        Ok(self.op(parts, v, move |g, _, _, need| {
            let mut off = 0;
            heights
                .iter()
                .zip(need)
                .map(|(&h, &n)| {
                    let piece = n.then(|| g.slice(s![off..off + h, ..]).to_owned());
                    off += h;
                    piece
                })
                .collect()
        }))
    }

    /// Row `k` of the output is row `idx[k]` of `x`.
    pub fn gather_rows(&mut self, x: Var, idx: &Arc<Vec<usize>>) -> Result<Var> {
        if idx.iter().any(|&i| i >= x.rows) {
            return Err(mismatch("gather_rows", format!("index out of {} rows", x.rows)));
        }
        let src = self.value(x);
        let mut v = Mat::zeros((idx.len(), x.cols));
        for (k, &i) in idx.iter().enumerate() {
            v.row_mut(k).assign(&src.row(i));
        }
        let idx = Arc::clone(idx);
        let n = x.rows;
        Ok(self.op(&[x], v, move |g, _, _, _| {
            let mut gx = Mat::zeros((n, g.ncols()));
            for (k, &i) in idx.iter().enumerate() {
                let mut row = gx.row_mut(i);
                row += &g.row(k);
            }
            vec![Some(gx)]
        }))
    }

    /// Output row `idx[k]` accumulates row `k` of `x`; `n_out` rows.
    pub fn scatter_add_rows(&mut self, x: Var, idx: &Arc<Vec<usize>>, n_out: usize) -> Result<Var> {
        if idx.len() != x.rows || idx.iter().any(|&i| i >= n_out) {
            return Err(mismatch("scatter_add_rows", format!("{} indices for {} rows", idx.len(), x.rows)));
        }
        let src = self.value(x);
        let mut v = Mat::zeros((n_out, x.cols));
        for (k, &i) in idx.iter().enumerate() {
            let mut row = v.row_mut(i);
            row += &src.row(k);
        }
        let idx = Arc::clone(idx);
        Ok(self.op(&[x], v, move |g, _, _, _| {
            let mut gx = Mat::zeros((idx.len(), g.ncols()));
            for (k, &i) in idx.iter().enumerate() {
                gx.row_mut(k).assign(&g.row(i));
            }
            vec![Some(gx)]
        }))
    }

    pub fn row_softmax(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        for mut row in v.rows_mut() {
            let mx = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|t| (t - mx).exp());
            let s = row.sum();
            row /= s;
        }
        self.op(&[x], v, |g, _, y, _| {
            let mut gx = Mat::zeros(y.raw_dim());
            for ((gr, yr), mut out) in g.rows().into_iter().zip(y.rows()).zip(gx.rows_mut()) {
                let d = gr.dot(&yr);
                for ((o, &gi), &yi) in out.iter_mut().zip(gr).zip(yr) {
                    *o = yi * (gi - d);
                }
            }
            vec![Some(gx)]
        })
    }

    /// `sum(a .* b)` as a scalar.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("dot", a, b)?;
        let d = (self.value(a) * self.value(b)).sum();
        Ok(self.op(&[a, b], Mat::from_elem((1, 1), d), |g, x, _, need| {
            let s = g[[0, 0]];
            vec![need[0].then(|| x[1] * s), need[1].then(|| x[0] * s)]
        }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let d = self.value(a).sum();
        let shape = (a.rows, a.cols);
        self.op(&[a], Mat::from_elem((1, 1), d), move |g, _, _, _| vec![Some(Mat::from_elem(shape, g[[0, 0]]))])
    }

    /// Frobenius (Euclidean) norm. The adjoint at zero is taken as zero.
    pub fn norm2(&mut self, a: Var) -> Var {
        let n = self.value(a).mapv(|x| x * x).sum().sqrt();
        self.op(&[a], Mat::from_elem((1, 1), n), |g, x, y, _| {
            let n = y[[0, 0]];
            let s = if n > 0.0 { g[[0, 0]] / n } else { 0.0 };
            vec![Some(x[0] * s)]
        })
    }

    /// Euclidean norm of every column, `1 x m`.
    pub fn col_norms(&mut self, a: Var) -> Var {
        let v = self.value(a).map_axis(Axis(0), |c| c.dot(&c).sqrt()).insert_axis(Axis(0));
        self.op(&[a], v, |g, x, y, _| {
            let mut gx = x[0].clone();
            for (j, mut col) in gx.columns_mut().into_iter().enumerate() {
                let n = y[[0, j]];
                let s = if n > 0.0 { g[[0, j]] / n } else { 0.0 };
                col *= s;
            }
            vec![Some(gx)]
        })
    }

    /// Maximum entry; the adjoint goes to the first maximiser in row-major order.
    pub fn max_all(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut best = (0, 0);
        let mut mx = f64::NEG_INFINITY;
        for ((i, j), &v) in x.indexed_iter() {
            if v > mx || (mx.is_nan() && !v.is_nan()) {
                mx = v;
                best = (i, j);
            }
        }
        let shape = (a.rows, a.cols);
        self.op(&[a], Mat::from_elem((1, 1), mx), move |g, _, _, _| {
            let mut gx = Mat::zeros(shape);
            gx[best] = g[[0, 0]];
            vec![Some(gx)]
        })
    }

    /// Elementwise `x^p` for `x >= 0`; the adjoint at `x = 0` is zero.
    pub fn pow_scalar(&mut self, a: Var, p: f64) -> Var {
        let v = self.value(a).mapv(|x| x.powf(p));
        self.op(&[a], v, move |g, x, _, _| {
            let mut gx = g.clone();
            gx.zip_mut_with(x[0], |o, &xi| *o *= if xi == 0.0 { 0.0 } else { p * xi.powf(p - 1.0) });
            vec![Some(gx)]
        })
    }

    pub fn trace(&mut self, a: Var) -> Result<Var> {
        if a.rows != a.cols {
            return Err(mismatch("trace", format!("{:?} not square", a.shape())));
        }
        let t = self.value(a).diag().sum();
        let n = a.rows;
        Ok(self.op(&[a], Mat::from_elem((1, 1), t), move |g, _, _, _| {
            vec![Some(Mat::eye(n) * g[[0, 0]])]
        }))
    }

    /// Dense `P^T A P` with `P` given by `vals` on `pattern` and `A` constant.
    pub fn galerkin(&mut self, pattern: &Arc<CsrMatrix>, vals: Var, a: &Arc<CsrMatrix>) -> Result<Var> {
        if vals.rows != pattern.nnz() || vals.cols != 1 || a.n_cols != pattern.n_rows || a.n_rows != pattern.n_rows {
            return Err(mismatch("galerkin", "incompatible operands".into()));
        }
        let p = pattern.with_values(self.value(vals).column(0).to_vec());
        let pd = p.to_dense();
        let ap = a.spmm(pd.view());
        let v = pd.t().dot(&ap);
        let (pat, a) = (Arc::clone(pattern), Arc::clone(a));
        Ok(self.op(&[vals], v, move |g, inp, _, _| {
            let pd = pat.with_values(inp[0].column(0).to_vec()).to_dense();
            let ap = a.spmm(pd.view());
            let atp = a.spmm_transpose(pd.view());
            let full = ap.dot(&g.t()) + atp.dot(g);
            let mut gv = Mat::zeros((pat.nnz(), 1));
            for r in 0..pat.n_rows {
                for k in pat.row_range(r) {
                    gv[[k, 0]] = full[[r, pat.col_idx[k]]];
                }
            }
            vec![Some(gv)]
        }))
    }

    /// Dense inverse via LU with partial pivoting.
    pub fn inverse(&mut self, a: Var) -> Result<Var> {
        if a.rows != a.cols {
            return Err(mismatch("inverse", format!("{:?} not square", a.shape())));
        }
        let lu = Lu::factor(self.value(a).view()).ok_or(Error::FactorizationFailure { subdomain: None })?;
        let inv = lu.inverse();
        Ok(self.op(&[a], inv, |g, _, y, _| {
            let yt = y.t();
            vec![Some(-(yt.dot(g).dot(&yt)))]
        }))
    }

    /// `A^{-1} b`; the adjoints are `b' = A^{-T} g` and `A' = -(A^{-T} g) x^T`.
    pub fn solve_dense(&mut self, a: Var, b: Var) -> Result<Var> {
        if a.rows != a.cols || a.cols != b.rows {
            return Err(mismatch("solve_dense", format!("{:?} \\ {:?}", a.shape(), b.shape())));
        }
        let lu = Lu::factor(self.value(a).view()).ok_or(Error::FactorizationFailure { subdomain: None })?;
        let x = lu.solve_block(self.value(b).view());
        let lu = Arc::new(lu);
        Ok(self.op(&[a, b], x, move |g, _, x, need| {
            let mut bt = Mat::zeros(g.raw_dim());
            for j in 0..g.ncols() {
                let col = lu.solve_transpose(&g.column(j).to_vec());
                bt.column_mut(j).assign(&ndarray::Array1::from(col));
            }
            let ga = need[0].then(|| -bt.dot(&x.t()));
            vec![ga, need[1].then_some(bt)]
        }))
    }

    /// `base` plus `vals[src]` added at `(r, c)` for every `(src, r, c)`.
    pub fn scatter_dense(&mut self, vals: Var, map: &Arc<Vec<(usize, usize, usize)>>, base: &Mat) -> Result<Var> {
        let (nr, nc) = base.dim();
        if vals.cols != 1 || map.iter().any(|&(k, r, c)| k >= vals.rows || r >= nr || c >= nc) {
            return Err(mismatch("scatter_dense", "index out of range".into()));
        }
        let mut v = base.clone();
        let x = self.value(vals);
        for &(k, r, c) in map.iter() {
            v[[r, c]] += x[[k, 0]];
        }
        let map = Arc::clone(map);
        let ne = vals.rows;
        Ok(self.op(&[vals], v, move |g, _, _, _| {
            let mut gv = Mat::zeros((ne, 1));
            for &(k, r, c) in map.iter() {
                gv[[k, 0]] += g[[r, c]];
            }
            vec![Some(gv)]
        }))
    }

    /// Divides each group `vals[ptr[i]..ptr[i+1]]` by its signed sum. Groups
    /// whose sum is below `1e-8` in magnitude become uniform (zero adjoint).
    /// Returns the number of such fallbacks.
    pub fn group_normalize(&mut self, vals: Var, ptr: &Arc<Vec<usize>>) -> Result<(Var, usize)> {
        if vals.cols != 1 || ptr.last().copied() != Some(vals.rows) {
            return Err(mismatch("group_normalize", "group pointer does not cover the values".into()));
        }
        let x = self.value(vals);
        let mut v = Mat::zeros((vals.rows, 1));
        let mut sums = vec![0.0; ptr.len() - 1];
        let mut fallbacks = 0;
        for (gi, w) in ptr.windows(2).enumerate() {
            let s: f64 = (w[0]..w[1]).map(|k| x[[k, 0]]).sum();
            sums[gi] = s;
            if s.abs() < 1e-8 {
                fallbacks += 1;
                let u = 1.0 / (w[1] - w[0]) as f64;
                for k in w[0]..w[1] {
                    v[[k, 0]] = u;
                }
            } else {
                for k in w[0]..w[1] {
                    v[[k, 0]] = x[[k, 0]] / s;
                }
            }
        }
        let ptr = Arc::clone(ptr);
        let out = self.op(&[vals], v, move |g, _, y, _| {
            let mut gx = Mat::zeros(y.raw_dim());
            for (gi, w) in ptr.windows(2).enumerate() {
                let s = sums[gi];
                if s.abs() < 1e-8 {
                    continue;
                }
                let gy: f64 = (w[0]..w[1]).map(|k| g[[k, 0]] * y[[k, 0]]).sum();
                for k in w[0]..w[1] {
                    gx[[k, 0]] = (g[[k, 0]] - gy) / s;
                }
            }
            vec![Some(gx)]
        });
        Ok((out, fallbacks))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.shape() != (1, 1) {
            return Err(Error::InvalidArgument(format!("backward needs a scalar, got {:?}", loss.shape())));
        }
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Mat::ones((1, 1)));
        for id in (0..=loss.id).rev() {
            let node = &self.nodes[id];
            let Some(bw) = &node.backward else { continue };
            let Some(g) = grads[id].take() else { continue };
            let inputs: Vec<&Mat> = node.inputs.iter().map(|&i| &self.nodes[i].value).collect();
            let need: Vec<bool> = node.inputs.iter().map(|&i| self.nodes[i].needs_grad).collect();
            let parts = bw(&g, &inputs, &node.value, &need);
            grads[id] = Some(g);
            for ((&i, part), &n) in node.inputs.iter().zip(parts).zip(&need) {
                if let (true, Some(p)) = (n, part) {
                    match &mut grads[i] {
                        Some(acc) => *acc += &p,
                        slot => *slot = Some(p),
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Central differences of a scalar function of several matrices.
pub fn numeric_gradient(f: &dyn Fn(&[Mat]) -> f64, inputs: &[Mat], which: usize, idx: (usize, usize), h: f64) -> f64 {
    let mut plus = inputs.to_vec();
    plus[which][idx] += h;
    let mut minus = inputs.to_vec();
    minus[which][idx] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// Largest relative discrepancy between tape adjoints and central
/// differences over every coordinate of every input.
pub fn gradient_check(build: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>, inputs: &[Mat], h: f64) -> Result<f64> {
    let eval = |xs: &[Mat]| -> f64 {
        let mut t = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| t.leaf(x.clone())).collect();
        let out = build(&mut t, &vars).expect("function evaluation");
        t.scalar(out)
    };
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| t.leaf(x.clone())).collect();
    let out = build(&mut t, &vars)?;
    let g = t.backward(out)?;
    let mut worst: f64 = 0.0;
    for (w, v) in vars.iter().enumerate() {
        let adj = g.get_or_zero(*v);
        for idx in ndarray::indices(adj.raw_dim()) {
            let fd = numeric_gradient(&eval, inputs, w, idx, h);
            let a = adj[idx];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};

    fn rand_mat(r: usize, c: usize, rng: &mut impl Rng) -> Mat {
        Mat::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    fn check(build: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>, shapes: &[(usize, usize)]) {
        for trial in 0..10 {
            let mut r = rng(trial);
            let inputs: Vec<Mat> = shapes.iter().map(|&(a, b)| rand_mat(a, b, &mut r)).collect();
            let err = gradient_check(build, &inputs, 1e-5).unwrap();
            assert!(err <= 1e-4, "trial {trial}: relative error {err}");
        }
    }

    #[test]
    fn norm_of_three_four() {
        let mut t = Tape::new();
        let x = t.leaf(array![[3.0], [4.0]]);
        let n = t.norm2(x);
        let g = t.backward(n).unwrap();
        let gx = g.get(x).unwrap();
        assert!((gx[[0, 0]] - 0.6).abs() < 1e-15 && (gx[[1, 0]] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn relu_subgradient_at_zero() {
        let mut t = Tape::new();
        let x = t.leaf(array![[0.0, -0.0, 1.0]]);
        let y = t.relu(x);
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &array![[0.0, 0.0, 1.0]]);
    }

    #[test]
    fn quadratic_form_of_weight() {
        let mut t = Tape::new();
        let w = t.leaf(array![[1.0, 2.0], [0.5, -1.0]]);
        let x = t.constant(array![[2.0], [3.0]]);
        let wx = t.matmul(w, x).unwrap();
        let q = t.dot(wx, wx).unwrap();
        let g = t.backward(q).unwrap();
        let wxv = t.value(wx).clone();
        let expect = (wxv * 2.0).dot(&t.value(x).t());
        assert!((g.get(w).unwrap() - &expect).iter().all(|d| d.abs() < 1e-14));
        let again = t.backward(q).unwrap();
        assert_eq!(g.get(w), again.get(w));
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Mat::zeros((2, 1)));
        assert!(matches!(t.backward(x), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn shape_mismatch_at_construction() {
        let mut t = Tape::new();
        let a = t.leaf(Mat::zeros((2, 3)));
        let b = t.leaf(Mat::zeros((2, 3)));
        assert!(matches!(t.matmul(a, b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn solve_with_identity() {
        let mut t = Tape::new();
        let a = t.leaf(Mat::eye(3));
        let b = t.leaf(array![[1.0], [2.0], [3.0]]);
        let x = t.solve_dense(a, b).unwrap();
        assert_eq!(t.value(x), t.value(b));
        let gvec = t.constant(array![[1.0], [-1.0], [0.5]]);
        let l = t.dot(x, gvec).unwrap();
        let g = t.backward(l).unwrap();
        let expect = -t.value(gvec).dot(&t.value(b).t());
        assert!((g.get(a).unwrap() - &expect).iter().all(|d| d.abs() < 1e-15));
    }

    #[test]
    fn solve_two_by_two_matches_differences() {
        let f = |t: &mut Tape, v: &[Var]| {
            let x = t.solve_dense(v[0], v[1])?;
            t.dot(x, x)
        };
        let a = array![[3.0, 1.0], [0.5, 2.0]];
        let b = array![[1.0], [-2.0]];
        let err = gradient_check(&f, &[a, b], 1e-6).unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn solve_symmetric_perturbation() {
        let a = array![[4.0, 1.0], [1.0, 3.0]];
        let b = array![[1.0], [2.0]];
        let value = |a: &Mat| {
            let mut t = Tape::new();
            let av = t.leaf(a.clone());
            let bv = t.constant(b.clone());
            let x = t.solve_dense(av, bv).unwrap();
            let l = t.dot(x, x).unwrap();
            (t.scalar(l), t.backward(l).unwrap().get_or_zero(av))
        };
        let (_, ga) = value(&a);
        let h = 1e-6;
        let mut e = Mat::zeros((2, 2));
        e[[0, 1]] = 1.0;
        e[[1, 0]] = 1.0;
        let fd = (value(&(&a + &(&e * h))).0 - value(&(&a - &(&e * h))).0) / (2.0 * h);
        assert!((fd - (ga[[0, 1]] + ga[[1, 0]])).abs() < 1e-6);
    }

    #[test]
    fn elementwise_ops() {
        check(&|t, v| { let a = t.add(v[0], v[1])?; let m = t.mul(a, v[1])?; let s = t.sub(m, v[0])?; let r = t.relu(s); let c = t.scale(r, 1.7); Ok(t.sum(c)) }, &[(4, 3), (4, 3)]);
    }

    #[test]
    fn dense_products() {
        check(&|t, v| { let m = t.matmul(v[0], v[1])?; let b = t.add_bias(m, v[2])?; t.dot(b, b) }, &[(5, 4), (4, 3), (1, 3)]);
    }

    #[test]
    fn sparse_products() {
        let pat = Arc::new(CsrMatrix::from_triplets(5, 3, &[(0, 0, 1.0), (1, 0, 1.0), (1, 2, 1.0), (3, 1, 1.0), (4, 2, 1.0), (4, 0, 1.0)]));
        let a = Arc::new(CsrMatrix::from_triplets(5, 5, &[(0, 0, 2.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 2.0), (2, 2, 1.0), (3, 4, 0.5), (4, 3, 0.5), (4, 4, 3.0), (3, 3, 1.0)]));
        let (p1, a1) = (pat.clone(), a.clone());
        check(&move |t, v| { let y = t.spmm_pattern(&p1, v[0], v[1], false)?; let z = t.spmm_const(&a1, y)?; t.dot(z, z) }, &[(6, 1), (3, 2)]);
        let p2 = pat.clone();
        check(&move |t, v| { let y = t.spmm_pattern(&p2, v[0], v[1], true)?; t.dot(y, y) }, &[(6, 1), (5, 2)]);
        let (p3, a3) = (pat.clone(), a.clone());
        check(&move |t, v| { let g = t.galerkin(&p3, v[0], &a3)?; let tr = t.trace(g)?; let q = t.dot(g, g)?; t.add(tr, q) }, &[(6, 1)]);
    }

    #[test]
    fn indexing_ops() {
        let idx = Arc::new(vec![2, 0, 2, 1]);
        let i1 = idx.clone();
        check(&move |t, v| { let g = t.gather_rows(v[0], &i1)?; let s = t.scatter_add_rows(g, &i1, 4)?; let c = t.concat_cols(&[s, v[1]])?; let r = t.concat_rows(&[c, v[2]])?; t.dot(r, r) }, &[(3, 2), (4, 1), (2, 3)]);
        let map = Arc::new(vec![(0, 0, 0), (1, 0, 1), (1, 1, 0), (2, 1, 1)]);
        let base = array![[2.0, 0.1], [0.2, 3.0]];
        check(&move |t, v| { let m = t.scatter_dense(v[0], &map, &base)?; let x = t.solve_dense(m, v[1])?; t.dot(x, x) }, &[(3, 1), (2, 2)]);
        let ptr = Arc::new(vec![0, 2, 5]);
        check(&move |t, v| {
            let shifted = t.add(v[0], v[1])?;
            let (n, _) = t.group_normalize(shifted, &ptr)?;
            t.dot(n, v[1])
        }, &[(5, 1), (5, 1)]);
    }

    #[test]
    fn reductions() {
        check(&|t, v| { let s = t.row_softmax(v[0]); t.dot(s, v[1]) }, &[(3, 4), (3, 4)]);
        check(&|t, v| { let n = t.col_norms(v[0]); let p = t.pow_scalar(n, 0.3); let m = t.max_all(p); let q = t.norm2(v[0]); t.add(m, q) }, &[(6, 3)]);
        check(&|t, v| { let i = t.inverse(v[0])?; let tr = t.trace(i)?; let sq = t.mul(i, i)?; let s = t.sum(sq); t.add(tr, s) }, &[(3, 3)]);
    }

    #[test]
    fn max_ties_go_to_first_index() {
        let mut t = Tape::new();
        let x = t.leaf(array![[1.0, 3.0, 3.0]]);
        let m = t.max_all(x);
        let g = t.backward(m).unwrap();
        assert_eq!(g.get(x).unwrap(), &array![[0.0, 1.0, 0.0]]);
    }

    #[test]
    fn group_normalize_fallback() {
        let mut t = Tape::new();
        let x = t.leaf(array![[1.0], [-1.0], [2.0], [6.0]]);
        let (y, fb) = t.group_normalize(x, &Arc::new(vec![0, 2, 4])).unwrap();
        assert_eq!(fb, 1);
        assert_eq!(t.value(y), &array![[0.5], [0.5], [0.25], [0.75]]);
    }
}
