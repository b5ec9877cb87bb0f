//! Reverse-mode autodiff on a flat tape of 2-D f64 arrays.
//!
//! Every value is an `Array2<f64>`; sequences are (time x channels), single
//! vectors are (1 x channels), scalars are (1 x 1). A forward pass appends
//! nodes in topological order, so the backward sweep is a single reverse
//! iteration. Ops are a closed enum rather than closures: backward rules stay
//! inspectable and the whole pass is deterministic.

use ndarray::{s, Array2, Axis};

use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf { param: Option<usize> },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    MulScalarVar(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Gelu(usize),
    Exp(usize),
    Gather { src: usize, rows: Vec<usize> },
    SegmentMean { src: usize, seg: Vec<usize>, n_seg: usize },
    LayerNorm { src: usize, gamma: usize, beta: usize, eps: f64 },
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    Conv1d { src: usize, weight: usize, kernel: usize, stride: usize, pad: usize },
    SliceCols { src: usize, start: usize, len: usize },
    ConcatRows { parts: Vec<usize> },
    ConcatCols { parts: Vec<usize> },
    MeanAll(usize),
    TakeDiag(usize),
    L2NormRows(usize),
    AddConst(usize),
    ZeroRows { src: usize, rows: Vec<usize> },
    Dropout { src: usize, mask: Array2<f64> },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Per-parameter gradients produced by [`Tape::backward`].
pub struct Gradients {
    pub by_param: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Global L2 norm over all present gradients.
    pub fn global_norm(&self) -> f64 {
        self.by_param
            .iter()
            .flatten()
            .map(|g| g.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[(0, 0)]
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf { param: None })
    }

    /// Leaf bound to a parameter id; gradients accumulate under that id.
    pub fn param_leaf(&mut self, value: Array2<f64>, param_id: usize) -> Var {
        self.push(value, Op::Leaf { param: Some(param_id) })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(v, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(v, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(v, Op::Mul(a.0, b.0))
    }

    /// Broadcast-add a (1 x C) row vector to every row of a (T x C) matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.nodes[row.0].value.row(0).to_owned();
        let v = &self.nodes[a.0].value + &r;
        self.push(v, Op::AddRow(a.0, row.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = &self.nodes[a.0].value * c;
        self.push(v, Op::Scale(a.0, c))
    }

    /// Multiply a matrix by a (1 x 1) scalar variable.
    pub fn mul_scalar_var(&mut self, a: Var, s: Var) -> Var {
        let sv = self.nodes[s.0].value[(0, 0)];
        let v = &self.nodes[a.0].value * sv;
        self.push(v, Op::MulScalarVar(a.0, s.0))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        self.push(v, Op::MatMul(a.0, b.0))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.t().to_owned();
        self.push(v, Op::Transpose(a.0))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(gelu_tanh);
        self.push(v, Op::Gelu(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(f64::exp);
        self.push(v, Op::Exp(a.0))
    }

    /// Row gather: out[i] = src[rows[i]].
    pub fn gather(&mut self, src: Var, rows: Vec<usize>) -> Var {
        let x = &self.nodes[src.0].value;
        let mut v = Array2::zeros((rows.len(), x.ncols()));
        for (i, &r) in rows.iter().enumerate() {
            v.row_mut(i).assign(&x.row(r));
        }
        self.push(v, Op::Gather { src: src.0, rows })
    }

    /// Per-segment mean over rows; `seg[i]` names the segment of row i and must
    /// be non-decreasing over 0..n_seg. Computed in offset form so a segment of
    /// bitwise-equal rows pools to exactly that row.
    pub fn segment_mean(&mut self, src: Var, seg: Vec<usize>, n_seg: usize) -> Var {
        let x = &self.nodes[src.0].value;
        let v = segment_mean_forward(x, &seg, n_seg);
        self.push(v, Op::SegmentMean { src: src.0, seg, n_seg })
    }

    /// Row-wise layer norm with learned gain/bias (each 1 x C).
    pub fn layer_norm(&mut self, src: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let x = &self.nodes[src.0].value;
        let g = self.nodes[gamma.0].value.row(0).to_owned();
        let b = self.nodes[beta.0].value.row(0).to_owned();
        let mut v = Array2::zeros(x.dim());
        for (i, row) in x.axis_iter(Axis(0)).enumerate() {
            let mu = row.mean().unwrap();
            let var = row.mapv(|x| (x - mu) * (x - mu)).mean().unwrap();
            let s = (var + eps).sqrt();
            for j in 0..row.len() {
                v[(i, j)] = (row[j] - mu) / s * g[j] + b[j];
            }
        }
        self.push(v, Op::LayerNorm { src: src.0, gamma: gamma.0, beta: beta.0, eps })
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows_arr(&self.nodes[a.0].value);
        self.push(v, Op::SoftmaxRows(a.0))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let mut v = Array2::zeros(x.dim());
        for (i, row) in x.axis_iter(Axis(0)).enumerate() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = m + row.mapv(|x| (x - m).exp()).sum().ln();
            for j in 0..row.len() {
                v[(i, j)] = row[j] - lse;
            }
        }
        self.push(v, Op::LogSoftmaxRows(a.0))
    }

    /// 1-D convolution over time. Input (T x Cin), weight (Cout x k*Cin),
    /// output ((T + 2*pad - k)/stride + 1 x Cout). Out-of-range taps read zero.
    pub fn conv1d(&mut self, src: Var, weight: Var, kernel: usize, stride: usize, pad: usize) -> Var {
        let x = &self.nodes[src.0].value;
        let w = &self.nodes[weight.0].value;
        let cols = im2col(x, kernel, stride, pad);
        let v = cols.dot(&w.t());
        self.push(v, Op::Conv1d { src: src.0, weight: weight.0, kernel, stride, pad })
    }

    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Var {
        let v = self.nodes[src.0].value.slice(s![.., start..start + len]).to_owned();
        self.push(v, Op::SliceCols { src: src.0, start, len })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.nodes[parts[0].0].value.ncols();
        let total: usize = parts.iter().map(|p| self.nodes[p.0].value.nrows()).sum();
        let mut v = Array2::zeros((total, cols));
        let mut at = 0;
        for p in parts {
            let x = &self.nodes[p.0].value;
            v.slice_mut(s![at..at + x.nrows(), ..]).assign(x);
            at += x.nrows();
        }
        self.push(v, Op::ConcatRows { parts: parts.iter().map(|p| p.0).collect() })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.nodes[parts[0].0].value.nrows();
        let total: usize = parts.iter().map(|p| self.nodes[p.0].value.ncols()).sum();
        let mut v = Array2::zeros((rows, total));
        let mut at = 0;
        for p in parts {
            let x = &self.nodes[p.0].value;
            v.slice_mut(s![.., at..at + x.ncols()]).assign(x);
            at += x.ncols();
        }
        self.push(v, Op::ConcatCols { parts: parts.iter().map(|p| p.0).collect() })
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let m = self.nodes[a.0].value.mean().unwrap();
        self.push(Array2::from_elem((1, 1), m), Op::MeanAll(a.0))
    }

    pub fn take_diag(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let n = x.nrows();
        let mut v = Array2::zeros((n, 1));
        for i in 0..n {
            v[(i, 0)] = x[(i, i)];
        }
        self.push(v, Op::TakeDiag(a.0))
    }

    /// Row-wise L2 normalization; near-zero rows are left scaled by 1/1e-30
    /// rather than erroring (callers validate separately where needed).
    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let mut v = x.clone();
        for mut row in v.axis_iter_mut(Axis(0)) {
            let n = row.mapv(|x| x * x).sum().sqrt().max(1e-30);
            row.mapv_inplace(|x| x / n);
        }
        self.push(v, Op::L2NormRows(a.0))
    }

    /// Add a fixed array (positional encodings, attention masks).
    pub fn add_const(&mut self, a: Var, c: &Array2<f64>) -> Var {
        let v = &self.nodes[a.0].value + c;
        self.push(v, Op::AddConst(a.0))
    }

    /// Zero out the named rows (padding positions).
    pub fn zero_rows(&mut self, src: Var, rows: Vec<usize>) -> Var {
        let mut v = self.nodes[src.0].value.clone();
        for &r in &rows {
            v.row_mut(r).fill(0.0);
        }
        self.push(v, Op::ZeroRows { src: src.0, rows })
    }

    /// Multiplicative dropout mask (entries 0 or 1/(1-p)).
    pub fn dropout(&mut self, src: Var, mask: Array2<f64>) -> Var {
        let v = &self.nodes[src.0].value * &mask;
        self.push(v, Op::Dropout { src: src.0, mask })
    }

    /// Backpropagate from a (1 x 1) loss node into per-parameter gradients.
    pub fn backward(&mut self, loss: Var, n_params: usize) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::ShapeMismatch { got: self.shape(loss), want: (1, 1) });
        }
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::from_elem((1, 1), 1.0));

        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[i].op {
                Op::Leaf { .. } => {
                    grads[i] = Some(g); // kept for param collection below
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    acc(&mut grads, a, &g);
                    acc(&mut grads, b, &g);
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    acc(&mut grads, a, &g);
                    acc(&mut grads, b, &(-&g));
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let da = &g * &self.nodes[b].value;
                    let db = &g * &self.nodes[a].value;
                    acc(&mut grads, a, &da);
                    acc(&mut grads, b, &db);
                }
                Op::AddRow(a, row) => {
                    let (a, row) = (*a, *row);
                    acc(&mut grads, a, &g);
                    let dr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, row, &dr);
                }
                Op::Scale(a, c) => {
                    let (a, c) = (*a, *c);
                    acc(&mut grads, a, &(&g * c));
                }
                Op::MulScalarVar(a, sidx) => {
                    let (a, sidx) = (*a, *sidx);
                    let sv = self.nodes[sidx].value[(0, 0)];
                    let da = &g * sv;
                    let ds = (&g * &self.nodes[a].value).sum();
                    acc(&mut grads, a, &da);
                    acc(&mut grads, sidx, &Array2::from_elem((1, 1), ds));
                }
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let da = g.dot(&self.nodes[b].value.t());
                    let db = self.nodes[a].value.t().dot(&g);
                    acc(&mut grads, a, &da);
                    acc(&mut grads, b, &db);
                }
                Op::Transpose(a) => {
                    let a = *a;
                    acc(&mut grads, a, &g.t().to_owned());
                }
                Op::Gelu(a) => {
                    let a = *a;
                    let dx = self.nodes[a].value.mapv(gelu_tanh_grad) * &g;
                    acc(&mut grads, a, &dx);
                }
                Op::Exp(a) => {
                    let a = *a;
                    let dx = &self.nodes[i].value * &g;
                    acc(&mut grads, a, &dx);
                }
                Op::Gather { src, rows } => {
                    let src = *src;
                    let mut d = Array2::zeros(self.nodes[src].value.dim());
                    for (k, &r) in rows.iter().enumerate() {
                        let mut dr = d.row_mut(r);
                        dr += &g.row(k);
                    }
                    acc(&mut grads, src, &d);
                }
                Op::SegmentMean { src, seg, n_seg } => {
                    let src = *src;
                    let mut counts = vec![0usize; *n_seg];
                    for &w in seg.iter() {
                        counts[w] += 1;
                    }
                    let mut d = Array2::zeros(self.nodes[src].value.dim());
                    for (idx, &w) in seg.iter().enumerate() {
                        let scale = 1.0 / counts[w] as f64;
                        let gr = g.row(w).mapv(|x| x * scale);
                        let mut dr = d.row_mut(idx);
                        dr += &gr;
                    }
                    acc(&mut grads, src, &d);
                }
                Op::LayerNorm { src, gamma, beta, eps } => {
                    let (src, gamma, beta, eps) = (*src, *gamma, *beta, *eps);
                    let x = &self.nodes[src].value;
                    let gm = self.nodes[gamma].value.row(0).to_owned();
                    let c = x.ncols() as f64;
                    let mut dx = Array2::zeros(x.dim());
                    let mut dgamma = Array2::zeros((1, x.ncols()));
                    let mut dbeta = Array2::zeros((1, x.ncols()));
                    for (r, row) in x.axis_iter(Axis(0)).enumerate() {
                        let mu = row.mean().unwrap();
                        let var = row.mapv(|v| (v - mu) * (v - mu)).mean().unwrap();
                        let sinv = 1.0 / (var + eps).sqrt();
                        let xhat: Vec<f64> = row.iter().map(|&v| (v - mu) * sinv).collect();
                        let gr = g.row(r);
                        let mut m1 = 0.0; // mean of dxhat
                        let mut m2 = 0.0; // mean of dxhat * xhat
                        for j in 0..row.len() {
                            let dxh = gr[j] * gm[j];
                            m1 += dxh;
                            m2 += dxh * xhat[j];
                            dgamma[(0, j)] += gr[j] * xhat[j];
                            dbeta[(0, j)] += gr[j];
                        }
                        m1 /= c;
                        m2 /= c;
                        for j in 0..row.len() {
                            let dxh = gr[j] * gm[j];
                            dx[(r, j)] = sinv * (dxh - m1 - xhat[j] * m2);
                        }
                    }
                    acc(&mut grads, src, &dx);
                    acc(&mut grads, gamma, &dgamma);
                    acc(&mut grads, beta, &dbeta);
                }
                Op::SoftmaxRows(a) => {
                    let a = *a;
                    let y = &self.nodes[i].value;
                    let mut dx = Array2::zeros(y.dim());
                    for r in 0..y.nrows() {
                        let dot: f64 = (0..y.ncols()).map(|j| g[(r, j)] * y[(r, j)]).sum();
                        for j in 0..y.ncols() {
                            dx[(r, j)] = y[(r, j)] * (g[(r, j)] - dot);
                        }
                    }
                    acc(&mut grads, a, &dx);
                }
                Op::LogSoftmaxRows(a) => {
                    let a = *a;
                    let y = &self.nodes[i].value; // log softmax
                    let mut dx = Array2::zeros(y.dim());
                    for r in 0..y.nrows() {
                        let gsum: f64 = (0..y.ncols()).map(|j| g[(r, j)]).sum();
                        for j in 0..y.ncols() {
                            dx[(r, j)] = g[(r, j)] - y[(r, j)].exp() * gsum;
                        }
                    }
                    acc(&mut grads, a, &dx);
                }
                Op::Conv1d { src, weight, kernel, stride, pad } => {
                    let (src, weight, kernel, stride, pad) = (*src, *weight, *kernel, *stride, *pad);
                    let x = &self.nodes[src].value;
                    let w = &self.nodes[weight].value;
                    let cols = im2col(x, kernel, stride, pad);
                    let dw = g.t().dot(&cols);
                    let dcols = g.dot(w);
                    let dx = col2im(&dcols, x.dim(), kernel, stride, pad);
                    acc(&mut grads, weight, &dw);
                    acc(&mut grads, src, &dx);
                }
                Op::SliceCols { src, start, len } => {
                    let (src, start, len) = (*src, *start, *len);
                    let mut d = Array2::zeros(self.nodes[src].value.dim());
                    d.slice_mut(s![.., start..start + len]).assign(&g);
                    acc(&mut grads, src, &d);
                }
                Op::ConcatRows { parts } => {
                    let parts = parts.clone();
                    let mut at = 0;
                    for p in parts {
                        let n = self.nodes[p].value.nrows();
                        let gp = g.slice(s![at..at + n, ..]).to_owned();
                        acc(&mut grads, p, &gp);
                        at += n;
                    }
                }
                Op::ConcatCols { parts } => {
                    let parts = parts.clone();
                    let mut at = 0;
                    for p in parts {
                        let n = self.nodes[p].value.ncols();
                        let gp = g.slice(s![.., at..at + n]).to_owned();
                        acc(&mut grads, p, &gp);
                        at += n;
                    }
                }
                Op::MeanAll(a) => {
                    let a = *a;
                    let (r, c) = self.nodes[a].value.dim();
                    let d = Array2::from_elem((r, c), g[(0, 0)] / (r * c) as f64);
                    acc(&mut grads, a, &d);
                }
                Op::TakeDiag(a) => {
                    let a = *a;
                    let mut d = Array2::zeros(self.nodes[a].value.dim());
                    for r in 0..d.nrows() {
                        d[(r, r)] = g[(r, 0)];
                    }
                    acc(&mut grads, a, &d);
                }
                Op::L2NormRows(a) => {
                    let a = *a;
                    let x = &self.nodes[a].value;
                    let y = &self.nodes[i].value;
                    let mut dx = Array2::zeros(x.dim());
                    for r in 0..x.nrows() {
                        let n = x.row(r).mapv(|v| v * v).sum().sqrt().max(1e-30);
                        let dot: f64 = (0..x.ncols()).map(|j| g[(r, j)] * y[(r, j)]).sum();
                        for j in 0..x.ncols() {
                            dx[(r, j)] = (g[(r, j)] - y[(r, j)] * dot) / n;
                        }
                    }
                    acc(&mut grads, a, &dx);
                }
                Op::AddConst(a) => {
                    let a = *a;
                    acc(&mut grads, a, &g);
                }
                Op::ZeroRows { src, rows } => {
                    let src = *src;
                    let mut d = g.clone();
                    for &r in rows {
                        d.row_mut(r).fill(0.0);
                    }
                    acc(&mut grads, src, &d);
                }
                Op::Dropout { src, mask } => {
                    let src = *src;
                    let d = &g * mask;
                    acc(&mut grads, src, &d);
                }
            }
        }

        let mut by_param: Vec<Option<Array2<f64>>> = (0..n_params).map(|_| None).collect();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(pid) } = node.op {
                if let Some(g) = grads[i].take() {
                    match &mut by_param[pid] {
                        Some(acc) => *acc += &g,
                        slot => *slot = Some(g),
                    }
                }
            }
        }
        Ok(Gradients { by_param })
    }
}

fn acc(grads: &mut [Option<Array2<f64>>], idx: usize, delta: &Array2<f64>) {
    match &mut grads[idx] {
        Some(g) => *g += delta,
        slot => *slot = Some(delta.clone()),
    }
}

/// Segment mean in offset form: mean = ref + mean(x_i - ref). Exact when all
/// rows of a segment are bitwise equal.
pub fn segment_mean_forward(x: &Array2<f64>, seg: &[usize], n_seg: usize) -> Array2<f64> {
    let mut out = Array2::zeros((n_seg, x.ncols()));
    let mut counts = vec![0usize; n_seg];
    let mut first = vec![usize::MAX; n_seg];
    for (i, &w) in seg.iter().enumerate() {
        counts[w] += 1;
        if first[w] == usize::MAX {
            first[w] = i;
        }
    }
    for w in 0..n_seg {
        let r0 = first[w];
        let refrow = x.row(r0).to_owned();
        let mut dev = ndarray::Array1::<f64>::zeros(x.ncols());
        for (i, &wi) in seg.iter().enumerate() {
            if wi == w {
                dev += &(&x.row(i) - &refrow);
            }
        }
        let k = counts[w] as f64;
        let mut orow = out.row_mut(w);
        orow.assign(&(&refrow + &dev.mapv(|d| d / k)));
    }
    out
}

pub fn softmax_rows_arr(x: &Array2<f64>) -> Array2<f64> {
    let mut v = Array2::zeros(x.dim());
    for (i, row) in x.axis_iter(Axis(0)).enumerate() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let ex: Vec<f64> = row.iter().map(|&x| (x - m).exp()).collect();
        let s: f64 = ex.iter().sum();
        for (j, e) in ex.iter().enumerate() {
            v[(i, j)] = e / s;
        }
    }
    v
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

pub fn gelu_tanh(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_tanh_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn im2col(x: &Array2<f64>, kernel: usize, stride: usize, pad: usize) -> Array2<f64> {
    let (t, cin) = x.dim();
    let t_out = (t + 2 * pad - kernel) / stride + 1;
    let mut cols = Array2::zeros((t_out, kernel * cin));
    for to in 0..t_out {
        for j in 0..kernel {
            let src = (stride * to + j) as isize - pad as isize;
            if src >= 0 && (src as usize) < t {
                let src = src as usize;
                for c in 0..cin {
                    cols[(to, j * cin + c)] = x[(src, c)];
                }
            }
        }
    }
    cols
}

fn col2im(dcols: &Array2<f64>, dim: (usize, usize), kernel: usize, stride: usize, pad: usize) -> Array2<f64> {
    let (t, cin) = dim;
    let t_out = dcols.nrows();
    let mut dx = Array2::zeros((t, cin));
    for to in 0..t_out {
        for j in 0..kernel {
            let src = (stride * to + j) as isize - pad as isize;
            if src >= 0 && (src as usize) < t {
                let src = src as usize;
                for c in 0..cin {
                    dx[(src, c)] += dcols[(to, j * cin + c)];
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn finite_diff<F: FnMut(&Array2<f64>) -> f64>(x: &Array2<f64>, mut f: F) -> Array2<f64> {
        let h = 1e-6;
        let mut g = Array2::zeros(x.dim());
        let mut xp = x.clone();
        for i in 0..x.nrows() {
            for j in 0..x.ncols() {
                xp[(i, j)] = x[(i, j)] + h;
                let fp = f(&xp);
                xp[(i, j)] = x[(i, j)] - h;
                let fm = f(&xp);
                xp[(i, j)] = x[(i, j)];
                g[(i, j)] = (fp - fm) / (2.0 * h);
            }
        }
        g
    }

    fn assert_close(a: &Array2<f64>, b: &Array2<f64>, tol: f64) {
        for (x, y) in a.iter().zip(b.iter()) {
            let denom = x.abs().max(y.abs()).max(1e-6);
            assert!(
                (x - y).abs() / denom < tol,
                "mismatch: {x} vs {y} (rel {})",
                (x - y).abs() / denom
            );
        }
    }

    /// FD-check the gradient of mean(op(x)) wrt x for a given tape program.
    fn check_unary<F>(x: Array2<f64>, build: F, tol: f64)
    where
        F: Fn(&mut Tape, Var) -> Var,
    {
        let mut tape = Tape::new();
        let xv = tape.param_leaf(x.clone(), 0);
        let y = build(&mut tape, xv);
        let loss = tape.mean_all(y);
        let grads = tape.backward(loss, 1).unwrap();
        let analytic = grads.by_param[0].clone().unwrap();

        let fd = finite_diff(&x, |xp| {
            let mut t = Tape::new();
            let xv = t.param_leaf(xp.clone(), 0);
            let y = build(&mut t, xv);
            let l = t.mean_all(y);
            t.scalar(l)
        });
        assert_close(&analytic, &fd, tol);
    }

    fn test_input(r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |(i, j)| ((i * 31 + j * 17) as f64 * 0.37).sin() * 0.8)
    }

    #[test]
    fn gelu_grad_matches_fd() {
        check_unary(test_input(3, 4), |t, x| t.gelu(x), 1e-6);
    }

    #[test]
    fn softmax_grad_matches_fd() {
        check_unary(test_input(3, 5), |t, x| {
            let y = t.softmax_rows(x);
            let sq = t.mul(y, y);
            sq
        }, 1e-5);
    }

    #[test]
    fn log_softmax_grad_matches_fd() {
        check_unary(test_input(4, 6), |t, x| {
            let y = t.log_softmax_rows(x);
            let sq = t.mul(y, y);
            sq
        }, 1e-5);
    }

    #[test]
    fn layer_norm_grad_matches_fd() {
        let gamma = test_input(1, 5).mapv(|v| v + 1.5);
        let beta = test_input(1, 5);
        check_unary(test_input(3, 5), move |t, x| {
            let g = t.constant(gamma.clone());
            let b = t.constant(beta.clone());
            let y = t.layer_norm(x, g, b, 1e-5);
            let sq = t.mul(y, y);
            sq
        }, 1e-5);
    }

    #[test]
    fn layer_norm_param_grads_match_fd() {
        let x = test_input(3, 5);
        let gamma = test_input(1, 5).mapv(|v| v + 1.2);
        let beta = test_input(1, 5);

        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let gv = tape.param_leaf(gamma.clone(), 0);
        let bv = tape.param_leaf(beta.clone(), 1);
        let y = tape.layer_norm(xv, gv, bv, 1e-5);
        let sq = tape.mul(y, y);
        let loss = tape.mean_all(sq);
        let grads = tape.backward(loss, 2).unwrap();

        let eval = |gm: &Array2<f64>, bt: &Array2<f64>| {
            let mut t = Tape::new();
            let xv = t.constant(x.clone());
            let gv = t.constant(gm.clone());
            let bv = t.constant(bt.clone());
            let y = t.layer_norm(xv, gv, bv, 1e-5);
            let sq = t.mul(y, y);
            let l = t.mean_all(sq);
            t.scalar(l)
        };
        let fd_g = finite_diff(&gamma, |gm| eval(gm, &beta));
        let fd_b = finite_diff(&beta, |bt| eval(&gamma, bt));
        assert_close(grads.by_param[0].as_ref().unwrap(), &fd_g, 1e-5);
        assert_close(grads.by_param[1].as_ref().unwrap(), &fd_b, 1e-5);
    }

    #[test]
    fn conv1d_grads_match_fd() {
        let x = test_input(7, 3);
        let w = test_input(4, 9); // Cout=4, k=3, Cin=3

        let run = |xa: &Array2<f64>, wa: &Array2<f64>| {
            let mut t = Tape::new();
            let xv = t.constant(xa.clone());
            let wv = t.constant(wa.clone());
            let y = t.conv1d(xv, wv, 3, 1, 1);
            let sq = t.mul(y, y);
            let l = t.mean_all(sq);
            t.scalar(l)
        };

        let mut tape = Tape::new();
        let xv = tape.param_leaf(x.clone(), 0);
        let wv = tape.param_leaf(w.clone(), 1);
        let y = tape.conv1d(xv, wv, 3, 1, 1);
        let sq = tape.mul(y, y);
        let loss = tape.mean_all(sq);
        let grads = tape.backward(loss, 2).unwrap();

        let fd_x = finite_diff(&x, |xa| run(xa, &w));
        let fd_w = finite_diff(&w, |wa| run(&x, wa));
        assert_close(grads.by_param[0].as_ref().unwrap(), &fd_x, 1e-5);
        assert_close(grads.by_param[1].as_ref().unwrap(), &fd_w, 1e-5);
    }

    #[test]
    fn conv1d_strided_grads_match_fd() {
        let x = test_input(8, 2);
        let w = test_input(5, 6); // Cout=5, k=3, Cin=2
        check_unary_with(x, w);
    }

    fn check_unary_with(x: Array2<f64>, w: Array2<f64>) {
        let mut tape = Tape::new();
        let xv = tape.param_leaf(x.clone(), 0);
        let wv = tape.constant(w.clone());
        let y = tape.conv1d(xv, wv, 3, 2, 1);
        let sq = tape.mul(y, y);
        let loss = tape.mean_all(sq);
        let grads = tape.backward(loss, 1).unwrap();
        let fd = finite_diff(&x, |xa| {
            let mut t = Tape::new();
            let xv = t.constant(xa.clone());
            let wv = t.constant(w.clone());
            let y = t.conv1d(xv, wv, 3, 2, 1);
            let sq = t.mul(y, y);
            let l = t.mean_all(sq);
            t.scalar(l)
        });
        assert_close(grads.by_param[0].as_ref().unwrap(), &fd, 1e-5);
    }

    #[test]
    fn matmul_and_friends_match_fd() {
        let a = test_input(3, 4);
        let b = test_input(4, 2);
        let run = |aa: &Array2<f64>, ba: &Array2<f64>| {
            let mut t = Tape::new();
            let av = t.constant(aa.clone());
            let bv = t.constant(ba.clone());
            let y = t.matmul(av, bv);
            let yt = t.transpose(y);
            let e = t.exp(yt);
            let l = t.mean_all(e);
            t.scalar(l)
        };
        let mut tape = Tape::new();
        let av = tape.param_leaf(a.clone(), 0);
        let bv = tape.param_leaf(b.clone(), 1);
        let y = tape.matmul(av, bv);
        let yt = tape.transpose(y);
        let e = tape.exp(yt);
        let loss = tape.mean_all(e);
        let grads = tape.backward(loss, 2).unwrap();
        let fd_a = finite_diff(&a, |aa| run(aa, &b));
        let fd_b = finite_diff(&b, |ba| run(&a, ba));
        assert_close(grads.by_param[0].as_ref().unwrap(), &fd_a, 1e-5);
        assert_close(grads.by_param[1].as_ref().unwrap(), &fd_b, 1e-5);
    }

    #[test]
    fn segment_mean_gather_l2norm_match_fd() {
        let x = test_input(6, 4);
        let seg = vec![0, 0, 1, 1, 1, 2];
        check_unary(x, move |t, xv| {
            let m = t.segment_mean(xv, seg.clone(), 3);
            let g = t.gather(m, vec![2, 0, 1, 1]);
            let n = t.l2_normalize_rows(g);
            n
        }, 1e-5);
    }

    #[test]
    fn diag_scalar_var_slice_concat_match_fd() {
        let x = test_input(4, 4);
        check_unary(x, |t, xv| {
            let s = t.constant(Array2::from_elem((1, 1), 1.7));
            let scaled = t.mul_scalar_var(xv, s);
            let left = t.slice_cols(scaled, 0, 2);
            let right = t.slice_cols(scaled, 2, 2);
            let joined = t.concat_cols(&[right, left]);
            let d = t.take_diag(joined);
            let stack = t.concat_rows(&[d, d]);
            stack
        }, 1e-5);
    }

    #[test]
    fn scalar_var_grad_matches_fd() {
        let a = test_input(3, 3);
        let s0 = Array2::from_elem((1, 1), 0.6);
        let mut tape = Tape::new();
        let av = tape.constant(a.clone());
        let sv = tape.param_leaf(s0.clone(), 0);
        let e = tape.exp(sv);
        let y = tape.mul_scalar_var(av, e);
        let sq = tape.mul(y, y);
        let loss = tape.mean_all(sq);
        let grads = tape.backward(loss, 1).unwrap();
        let fd = finite_diff(&s0, |sp| {
            let mut t = Tape::new();
            let av = t.constant(a.clone());
            let sv = t.constant(sp.clone());
            let e = t.exp(sv);
            let y = t.mul_scalar_var(av, e);
            let sq = t.mul(y, y);
            let l = t.mean_all(sq);
            t.scalar(l)
        });
        assert_close(grads.by_param[0].as_ref().unwrap(), &fd, 1e-6);
    }

    #[test]
    fn segment_mean_of_equal_rows_is_exact() {
        let row = array![[0.1, 0.7, -0.3]];
        let mut x = Array2::zeros((5, 3));
        for mut r in x.axis_iter_mut(Axis(0)) {
            r.assign(&row.row(0));
        }
        let m = segment_mean_forward(&x, &[0, 0, 0, 1, 1], 2);
        for w in 0..2 {
            for j in 0..3 {
                assert_eq!(m[(w, j)].to_bits(), row[(0, j)].to_bits());
            }
        }
    }

    #[test]
    fn zero_rows_blocks_gradient() {
        let x = test_input(4, 3);
        let mut tape = Tape::new();
        let xv = tape.param_leaf(x, 0);
        let z = tape.zero_rows(xv, vec![1, 3]);
        let loss = tape.mean_all(z);
        let grads = tape.backward(loss, 1).unwrap();
        let g = grads.by_param[0].as_ref().unwrap();
        for j in 0..3 {
            assert_eq!(g[(1, j)], 0.0);
            assert_eq!(g[(3, j)], 0.0);
            assert!(g[(0, j)] != 0.0);
        }
    }

    #[test]
    fn shared_param_accumulates_both_paths() {
        // x used twice: loss = mean(x*x) + mean(x) -> grad = 2x/n + 1/n
        let x = test_input(2, 2);
        let mut tape = Tape::new();
        let xv = tape.param_leaf(x.clone(), 0);
        let sq = tape.mul(xv, xv);
        let m1 = tape.mean_all(sq);
        let m2 = tape.mean_all(xv);
        let loss = tape.add(m1, m2);
        let grads = tape.backward(loss, 1).unwrap();
        let g = grads.by_param[0].as_ref().unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let want = 2.0 * x[(i, j)] / 4.0 + 0.25;
                assert!((g[(i, j)] - want).abs() < 1e-12);
            }
        }
    }
}
