//! Wengert-list reverse mode. Every op appends a node holding its output;
//! `backward` walks the list in exact reverse order.

use super::kernels::{gemm_acc, gemm_nt_acc, gemm_tn_acc};
use super::{Matrix, ParamGrads, ParamId, ParamStore, Real, Result, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    AddCol(Var, Var),
    Scale(Var, T),
    MulConst(Var, Matrix<T>),
    Tanh(Var),
    Sigmoid(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Matrix<T>,
        inv_std: Vec<T>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    RowDot(Var, Var),
    MaxOf(Vec<Var>),
    MeanAll(Var),
    SigmoidBce {
        logits: Var,
        targets: Vec<T>,
    },
    SoftmaxXent {
        logits: Var,
        targets: Vec<usize>,
        probs: Matrix<T>,
    },
}

struct Node<T> {
    op: Op<T>,
    value: Option<Matrix<T>>,
}

/// Records a forward computation over parameters borrowed from a
/// [`ParamStore`]. Several tapes may borrow the same store concurrently.
pub struct Tape<'p, T: Real> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Probability clamp used by the BCE value.
pub const PROB_CLAMP: f64 = 1e-7;

fn shape_err(op: &'static str, a: &Matrix<impl Real>, b: &Matrix<impl Real>) -> TensorError {
    TensorError::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Matrix<T> {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (_, Some(m)) => m,
            (Op::Param(id), None) => self.params.value(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    fn push(&mut self, op: Op<T>, value: Matrix<T>) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, m: Matrix<T>) -> Var {
        self.push(Op::Constant, m)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (am, bm) = (self.value(a), self.value(b));
        if am.cols() != bm.rows() {
            return Err(shape_err("matmul", am, bm));
        }
        let mut out = Matrix::zeros(am.rows(), bm.cols());
        gemm_acc(
            am.rows(),
            am.cols(),
            bm.cols(),
            am.as_slice(),
            bm.as_slice(),
            out.as_mut_slice(),
        );
        Ok(self.push(Op::MatMul(a, b), out))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (am, bm) = (self.value(a), self.value(b));
        if am.cols() != bm.cols() {
            return Err(shape_err("matmul_nt", am, bm));
        }
        let mut out = Matrix::zeros(am.rows(), bm.rows());
        gemm_nt_acc(
            am.rows(),
            am.cols(),
            bm.rows(),
            am.as_slice(),
            bm.as_slice(),
            out.as_mut_slice(),
        );
        Ok(self.push(Op::MatMulNt(a, b), out))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        self.push(Op::Transpose(x), out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (am, bm) = (self.value(a), self.value(b));
        if am.shape() != bm.shape() {
            return Err(shape_err("add", am, bm));
        }
        let mut out = am.clone();
        out.add_assign(bm);
        Ok(self.push(Op::Add(a, b), out))
    }

    /// Adds a `1×cols` row vector to every row.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xm, bm) = (self.value(x), self.value(bias));
        if bm.rows() != 1 || bm.cols() != xm.cols() {
            return Err(shape_err("add_row", xm, bm));
        }
        let mut out = xm.clone();
        let b = bm.as_slice();
        for r in 0..out.rows() {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(b) {
                *o += bv;
            }
        }
        Ok(self.push(Op::AddRow(x, bias), out))
    }

    /// Adds a `rows×1` column vector to every column.
    pub fn add_col(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xm, bm) = (self.value(x), self.value(bias));
        if bm.cols() != 1 || bm.rows() != xm.rows() {
            return Err(shape_err("add_col", xm, bm));
        }
        let mut out = xm.clone();
        for r in 0..out.rows() {
            let bv = bm.get(r, 0);
            out.row_mut(r).iter_mut().for_each(|o| *o += bv);
        }
        Ok(self.push(Op::AddCol(x, bias), out))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push(Op::Scale(x, s), out)
    }

    /// Elementwise product with a constant matrix (dropout masks).
    pub fn mul_const(&mut self, x: Var, mask: Matrix<T>) -> Result<Var> {
        let xm = self.value(x);
        if xm.shape() != mask.shape() {
            return Err(shape_err("mul_const", xm, &mask));
        }
        let mut out = xm.clone();
        for (o, &m) in out.as_mut_slice().iter_mut().zip(mask.as_slice()) {
            *o *= m;
        }
        Ok(self.push(Op::MulConst(x, mask), out))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.tanh());
        self.push(Op::Tanh(x), out)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(Op::Sigmoid(x), out)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let c = T::of(GELU_C);
        let a = T::of(GELU_A);
        let half = T::of(0.5);
        let out = self
            .value(x)
            .map(|v| half * v * (T::one() + (c * (v + a * v * v * v)).tanh()));
        self.push(Op::Gelu(x), out)
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let out = softmax_rows_value(self.value(x), None);
        self.push(Op::Softmax(x), out)
    }

    /// Row-wise softmax where columns with `keep[c] == false` get exactly
    /// zero probability.
    pub fn softmax_rows_masked(&mut self, x: Var, keep: &[bool]) -> Result<Var> {
        let xm = self.value(x);
        if keep.len() != xm.cols() {
            return Err(TensorError::Shape {
                op: "softmax_rows_masked",
                left: xm.shape(),
                right: (1, keep.len()),
            });
        }
        let out = softmax_rows_value(xm, Some(keep));
        Ok(self.push(Op::Softmax(x), out))
    }

    /// Normalizes each row over its columns, then applies `gain`/`bias`
    /// (both `1×cols`). Zero-variance rows normalize to zeros.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (xm, gm, bm) = (self.value(x), self.value(gain), self.value(bias));
        let cols = xm.cols();
        if gm.shape() != (1, cols) {
            return Err(shape_err("layer_norm", xm, gm));
        }
        if bm.shape() != (1, cols) {
            return Err(shape_err("layer_norm", xm, bm));
        }
        let eps = T::of(eps);
        let n = T::of(cols as f64);
        let mut xhat = Matrix::zeros(xm.rows(), cols);
        let mut out = Matrix::zeros(xm.rows(), cols);
        let mut inv_std = Vec::with_capacity(xm.rows());
        for r in 0..xm.rows() {
            let row = xm.row(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            let xh = xhat.row_mut(r);
            for (h, &v) in xh.iter_mut().zip(row) {
                *h = (v - mean) * is;
            }
            let xh = xhat.row(r);
            for (((o, &h), &g), &b) in out
                .row_mut(r)
                .iter_mut()
                .zip(xh)
                .zip(gm.as_slice())
                .zip(bm.as_slice())
            {
                *o = g * h + b;
            }
        }
        Ok(self.push(
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            out,
        ))
    }

    /// Gathers rows of `table` (vocab×d) for each id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tm = self.value(table);
        let mut out = Matrix::zeros(ids.len(), tm.cols());
        for (r, &id) in ids.iter().enumerate() {
            if id >= tm.rows() {
                return Err(TensorError::Index {
                    op: "embedding_lookup",
                    index: id,
                    bound: tm.rows(),
                });
            }
            out.row_mut(r).copy_from_slice(tm.row(id));
        }
        Ok(self.push(
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            out,
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xm = self.value(x);
        if start + len > xm.rows() {
            return Err(TensorError::Index {
                op: "slice_rows",
                index: start + len,
                bound: xm.rows(),
            });
        }
        let c = xm.cols();
        let out = Matrix::from_vec(len, c, xm.as_slice()[start * c..(start + len) * c].to_vec())?;
        Ok(self.push(Op::SliceRows { x, start }, out))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xm = self.value(x);
        let mut out = Matrix::zeros(idx.len(), xm.cols());
        for (r, &i) in idx.iter().enumerate() {
            if i >= xm.rows() {
                return Err(TensorError::Index {
                    op: "gather_rows",
                    index: i,
                    bound: xm.rows(),
                });
            }
            out.row_mut(r).copy_from_slice(xm.row(i));
        }
        Ok(self.push(
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            out,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Contract("concat_rows of nothing".into()))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            if m.cols() != cols {
                return Err(shape_err("concat_rows", self.value(*first), m));
            }
            rows += m.rows();
            data.extend_from_slice(m.as_slice());
        }
        let out = Matrix::from_vec(rows, cols, data)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), out))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xm = self.value(x);
        if start + len > xm.cols() {
            return Err(TensorError::Index {
                op: "slice_cols",
                index: start + len,
                bound: xm.cols(),
            });
        }
        let mut out = Matrix::zeros(xm.rows(), len);
        for r in 0..xm.rows() {
            out.row_mut(r)
                .copy_from_slice(&xm.row(r)[start..start + len]);
        }
        Ok(self.push(Op::SliceCols { x, start }, out))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Contract("concat_cols of nothing".into()))?;
        let rows = self.value(*first).rows();
        let mut cols = 0;
        for &p in parts {
            let m = self.value(p);
            if m.rows() != rows {
                return Err(shape_err("concat_cols", self.value(*first), m));
            }
            cols += m.cols();
        }
        let mut out = Matrix::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let m = self.value(p);
            for r in 0..rows {
                out.row_mut(r)[off..off + m.cols()].copy_from_slice(m.row(r));
            }
            off += m.cols();
        }
        Ok(self.push(Op::ConcatCols(parts.to_vec()), out))
    }

    /// Mean over rows, giving `1×cols`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let xm = self.value(x);
        if xm.rows() == 0 {
            return Err(TensorError::Contract("mean_rows of an empty matrix".into()));
        }
        let mut out = Matrix::zeros(1, xm.cols());
        for r in 0..xm.rows() {
            for (o, &v) in out.as_mut_slice().iter_mut().zip(xm.row(r)) {
                *o += v;
            }
        }
        let inv = T::one() / T::of(xm.rows() as f64);
        out.scale_in_place(inv);
        Ok(self.push(Op::MeanRows(x), out))
    }

    /// Per-row inner products of two same-shaped matrices, giving `rows×1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (am, bm) = (self.value(a), self.value(b));
        if am.shape() != bm.shape() {
            return Err(shape_err("row_dot", am, bm));
        }
        let mut out = Matrix::zeros(am.rows(), 1);
        for r in 0..am.rows() {
            let s = am.row(r).iter().zip(bm.row(r)).map(|(&x, &y)| x * y).sum();
            out.set(r, 0, s);
        }
        Ok(self.push(Op::RowDot(a, b), out))
    }

    /// Elementwise maximum over same-shaped inputs. Gradient flows to the
    /// first maximizing input.
    pub fn max_of(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Contract("max_of of nothing".into()))?;
        let mut out = self.value(*first).clone();
        for &p in &parts[1..] {
            let m = self.value(p);
            if m.shape() != out.shape() {
                return Err(shape_err("max_of", &out, m));
            }
            for (o, &v) in out.as_mut_slice().iter_mut().zip(m.as_slice()) {
                if v > *o {
                    *o = v;
                }
            }
        }
        Ok(self.push(Op::MaxOf(parts.to_vec()), out))
    }

    /// Mean of all entries, as a `1×1` scalar.
    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let xm = self.value(x);
        if xm.is_empty() {
            return Err(TensorError::Contract("mean_all of an empty matrix".into()));
        }
        let s = xm.as_slice().iter().copied().sum::<T>() / T::of(xm.len() as f64);
        Ok(self.push(Op::MeanAll(x), Matrix::filled(1, 1, s)))
    }

    /// Binary cross-entropy of `sigmoid(logits)` against `targets`, averaged
    /// over all entries. The value clamps probabilities to
    /// `[1e-7, 1-1e-7]`; the gradient is the exact `(p - y) / N`.
    pub fn sigmoid_bce(&mut self, logits: Var, targets: &[T]) -> Result<Var> {
        let lm = self.value(logits);
        if lm.len() != targets.len() {
            return Err(TensorError::Shape {
                op: "sigmoid_bce",
                left: lm.shape(),
                right: (targets.len(), 1),
            });
        }
        let probs: Vec<T> = lm.as_slice().iter().map(|&z| sigmoid(z)).collect();
        let loss = bce_value(targets, &probs);
        Ok(self.push(
            Op::SigmoidBce {
                logits,
                targets: targets.to_vec(),
            },
            Matrix::filled(1, 1, loss),
        ))
    }

    /// Softmax cross-entropy of each row of `logits` against the target
    /// class in `targets`, averaged over rows.
    pub fn softmax_xent(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lm = self.value(logits);
        if lm.rows() != targets.len() || lm.rows() == 0 {
            return Err(TensorError::Shape {
                op: "softmax_xent",
                left: lm.shape(),
                right: (targets.len(), 1),
            });
        }
        let probs = softmax_rows_value(lm, None);
        let mut loss = T::zero();
        for (r, &t) in targets.iter().enumerate() {
            if t >= lm.cols() {
                return Err(TensorError::Index {
                    op: "softmax_xent",
                    index: t,
                    bound: lm.cols(),
                });
            }
            // log-sum-exp form keeps tiny probabilities accurate
            let row = lm.row(r);
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<T>().ln();
            loss += lse - row[t];
        }
        loss /= T::of(targets.len() as f64);
        Ok(self.push(
            Op::SoftmaxXent {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            Matrix::filled(1, 1, loss),
        ))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<ParamGrads<T>> {
        self.backward_scaled(loss, T::one())
    }

    /// Reverse pass seeded with `seed` instead of 1.
    pub fn backward_scaled(&self, loss: Var, seed: T) -> Result<ParamGrads<T>> {
        let lm = self.value(loss);
        if lm.shape() != (1, 1) {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got {}x{}",
                lm.rows(),
                lm.cols()
            )));
        }
        let mut grads: Vec<Option<Matrix<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Matrix::filled(1, 1, seed));
        let mut out = ParamGrads::new(self.params.len());

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => out.accumulate(*id, g),
                Op::MatMul(a, b) => {
                    let (am, bm) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (am.rows(), am.cols(), bm.cols());
                    let mut da = Matrix::zeros(m, k);
                    gemm_nt_acc(m, n, k, g.as_slice(), bm.as_slice(), da.as_mut_slice());
                    let mut db = Matrix::zeros(k, n);
                    gemm_tn_acc(m, k, n, am.as_slice(), g.as_slice(), db.as_mut_slice());
                    add_grad(&mut grads, *a, da);
                    add_grad(&mut grads, *b, db);
                }
                Op::MatMulNt(a, b) => {
                    // c = a·bᵀ with a: m×k, b: n×k
                    let (am, bm) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (am.rows(), am.cols(), bm.rows());
                    let mut da = Matrix::zeros(m, k);
                    gemm_acc(m, n, k, g.as_slice(), bm.as_slice(), da.as_mut_slice());
                    let mut db = Matrix::zeros(n, k);
                    gemm_tn_acc(m, n, k, g.as_slice(), am.as_slice(), db.as_mut_slice());
                    add_grad(&mut grads, *a, da);
                    add_grad(&mut grads, *b, db);
                }
                Op::Transpose(x) => add_grad(&mut grads, *x, g.transpose()),
                Op::Add(a, b) => {
                    add_grad(&mut grads, *a, g.clone());
                    add_grad(&mut grads, *b, g);
                }
                Op::AddRow(x, b) => {
                    let mut db = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, &v) in db.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    add_grad(&mut grads, *b, db);
                    add_grad(&mut grads, *x, g);
                }
                Op::AddCol(x, b) => {
                    let mut db = Matrix::zeros(g.rows(), 1);
                    for r in 0..g.rows() {
                        db.set(r, 0, g.row(r).iter().copied().sum());
                    }
                    add_grad(&mut grads, *b, db);
                    add_grad(&mut grads, *x, g);
                }
                Op::Scale(x, s) => {
                    let s = *s;
                    add_grad(&mut grads, *x, g.map(|v| v * s));
                }
                Op::MulConst(x, mask) => {
                    let mut d = g;
                    for (o, &m) in d.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                        *o *= m;
                    }
                    add_grad(&mut grads, *x, d);
                }
                Op::Tanh(x) => {
                    let y = node.value.as_ref().unwrap();
                    let mut d = g;
                    for (o, &yv) in d.as_mut_slice().iter_mut().zip(y.as_slice()) {
                        *o *= T::one() - yv * yv;
                    }
                    add_grad(&mut grads, *x, d);
                }
                Op::Sigmoid(x) => {
                    let y = node.value.as_ref().unwrap();
                    let mut d = g;
                    for (o, &yv) in d.as_mut_slice().iter_mut().zip(y.as_slice()) {
                        *o *= yv * (T::one() - yv);
                    }
                    add_grad(&mut grads, *x, d);
                }
                Op::Gelu(x) => {
                    let xm = self.value(*x);
                    let c = T::of(GELU_C);
                    let a = T::of(GELU_A);
                    let half = T::of(0.5);
                    let three = T::of(3.0);
                    let mut d = g;
                    for (o, &v) in d.as_mut_slice().iter_mut().zip(xm.as_slice()) {
                        let u = c * (v + a * v * v * v);
                        let t = u.tanh();
                        let du = c * (T::one() + three * a * v * v);
                        let dy = half * (T::one() + t) + half * v * (T::one() - t * t) * du;
                        *o *= dy;
                    }
                    add_grad(&mut grads, *x, d);
                }
                Op::Softmax(x) => {
                    let y = node.value.as_ref().unwrap();
                    let mut d = g;
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let dr = d.row_mut(r);
                        let dot: T = dr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for (o, &yv) in dr.iter_mut().zip(yr) {
                            *o = yv * (*o - dot);
                        }
                    }
                    add_grad(&mut grads, *x, d);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gm = self.value(*gain);
                    let cols = g.cols();
                    let n = T::of(cols as f64);
                    let mut dgain = Matrix::zeros(1, cols);
                    let mut dbias = Matrix::zeros(1, cols);
                    let mut dx = Matrix::zeros(g.rows(), cols);
                    let mut dxh = vec![T::zero(); cols];
                    for r in 0..g.rows() {
                        let gr = g.row(r);
                        let xh = xhat.row(r);
                        for c in 0..cols {
                            dgain.as_mut_slice()[c] += gr[c] * xh[c];
                            dbias.as_mut_slice()[c] += gr[c];
                            dxh[c] = gr[c] * gm.as_slice()[c];
                        }
                        let mean_d = dxh.iter().copied().sum::<T>() / n;
                        let mean_dx = dxh.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() / n;
                        let is = inv_std[r];
                        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                            *o = is * (dxh[c] - mean_d - xh[c] * mean_dx);
                        }
                    }
                    add_grad(&mut grads, *gain, dgain);
                    add_grad(&mut grads, *bias, dbias);
                    add_grad(&mut grads, *x, dx);
                }
                Op::Embedding { table, ids } => {
                    let (rows, cols) = self.value(*table).shape();
                    let scatter = |dst: &mut Matrix<T>| {
                        for (r, &id) in ids.iter().enumerate() {
                            for (o, &v) in dst.row_mut(id).iter_mut().zip(g.row(r)) {
                                *o += v;
                            }
                        }
                    };
                    // write straight into the parameter gradient when possible
                    if let Op::Param(pid) = self.nodes[table.0].op {
                        scatter(out.entry(pid, rows, cols));
                    } else {
                        let mut d = Matrix::zeros(rows, cols);
                        scatter(&mut d);
                        add_grad(&mut grads, *table, d);
                    }
                }
                Op::SliceRows { x, start } => {
                    let (rows, cols) = self.value(*x).shape();
                    let mut d = Matrix::zeros(rows, cols);
                    let s = *start * cols;
                    d.as_mut_slice()[s..s + g.len()].copy_from_slice(g.as_slice());
                    add_grad(&mut grads, *x, d);
                }
                Op::GatherRows { x, idx } => {
                    let (rows, cols) = self.value(*x).shape();
                    let mut d = Matrix::zeros(rows, cols);
                    for (r, &i) in idx.iter().enumerate() {
                        for (o, &v) in d.row_mut(i).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    add_grad(&mut grads, *x, d);
                }
                Op::ConcatRows(parts) => {
                    let cols = g.cols();
                    let mut off = 0;
                    for &p in parts {
                        let rows = self.value(p).rows();
                        let d = Matrix::from_vec(
                            rows,
                            cols,
                            g.as_slice()[off * cols..(off + rows) * cols].to_vec(),
                        )?;
                        off += rows;
                        add_grad(&mut grads, p, d);
                    }
                }
                Op::SliceCols { x, start } => {
                    let (rows, cols) = self.value(*x).shape();
                    let mut d = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        d.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    add_grad(&mut grads, *x, d);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (rows, cols) = self.value(p).shape();
                        let mut d = Matrix::zeros(rows, cols);
                        for r in 0..rows {
                            d.row_mut(r).copy_from_slice(&g.row(r)[off..off + cols]);
                        }
                        off += cols;
                        add_grad(&mut grads, p, d);
                    }
                }
                Op::MeanRows(x) => {
                    let (rows, cols) = self.value(*x).shape();
                    let inv = T::one() / T::of(rows as f64);
                    let mut d = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        for (o, &v) in d.row_mut(r).iter_mut().zip(g.as_slice()) {
                            *o = v * inv;
                        }
                    }
                    add_grad(&mut grads, *x, d);
                }
                Op::RowDot(a, b) => {
                    let (am, bm) = (self.value(*a), self.value(*b));
                    let mut da = bm.clone();
                    let mut db = am.clone();
                    for r in 0..am.rows() {
                        let gv = g.get(r, 0);
                        da.row_mut(r).iter_mut().for_each(|v| *v *= gv);
                        db.row_mut(r).iter_mut().for_each(|v| *v *= gv);
                    }
                    add_grad(&mut grads, *a, da);
                    add_grad(&mut grads, *b, db);
                }
                Op::MaxOf(parts) => {
                    let y = node.value.as_ref().unwrap();
                    let mut ds: Vec<Matrix<T>> = parts
                        .iter()
                        .map(|_| Matrix::zeros(y.rows(), y.cols()))
                        .collect();
                    for e in 0..y.len() {
                        let target = y.as_slice()[e];
                        let k = parts
                            .iter()
                            .position(|&p| self.value(p).as_slice()[e] == target)
                            .unwrap_or(0);
                        ds[k].as_mut_slice()[e] = g.as_slice()[e];
                    }
                    for (&p, d) in parts.iter().zip(ds) {
                        add_grad(&mut grads, p, d);
                    }
                }
                Op::MeanAll(x) => {
                    let (rows, cols) = self.value(*x).shape();
                    let v = g.get(0, 0) / T::of((rows * cols) as f64);
                    add_grad(&mut grads, *x, Matrix::filled(rows, cols, v));
                }
                Op::SigmoidBce { logits, targets } => {
                    let lm = self.value(*logits);
                    let scale = g.get(0, 0) / T::of(targets.len() as f64);
                    let mut d = Matrix::zeros(lm.rows(), lm.cols());
                    for ((o, &z), &y) in d.as_mut_slice().iter_mut().zip(lm.as_slice()).zip(targets) {
                        *o = (sigmoid(z) - y) * scale;
                    }
                    add_grad(&mut grads, *logits, d);
                }
                Op::SoftmaxXent {
                    logits,
                    targets,
                    probs,
                } => {
                    let scale = g.get(0, 0) / T::of(targets.len() as f64);
                    let mut d = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        let row = d.row_mut(r);
                        row[t] -= T::one();
                        row.iter_mut().for_each(|v| *v *= scale);
                    }
                    add_grad(&mut grads, *logits, d);
                }
            }
        }
        Ok(out)
    }
}

fn add_grad<T: Real>(grads: &mut [Option<Matrix<T>>], v: Var, g: Matrix<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn softmax_rows_value<T: Real>(x: &Matrix<T>, keep: Option<&[bool]>) -> Matrix<T> {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let row = x.row(r);
        let kept = |c: usize| keep.is_none_or(|k| k[c]);
        let mx = row
            .iter()
            .enumerate()
            .filter(|&(c, _)| kept(c))
            .map(|(_, &v)| v)
            .fold(T::neg_infinity(), T::max);
        if mx == T::neg_infinity() {
            continue;
        }
        let o = out.row_mut(r);
        let mut sum = T::zero();
        for (c, (ov, &v)) in o.iter_mut().zip(row).enumerate() {
            if kept(c) {
                *ov = (v - mx).exp();
                sum += *ov;
            }
        }
        let inv = T::one() / sum;
        o.iter_mut().for_each(|v| *v *= inv);
    }
    out
}

/// Mean binary cross-entropy with the probability clamp applied.
pub(crate) fn bce_value<T: Real>(targets: &[T], probs: &[T]) -> T {
    let lo = T::of(PROB_CLAMP);
    let hi = T::one() - lo;
    let mut total = T::zero();
    for (&y, &p) in targets.iter().zip(probs) {
        let p = p.max(lo).min(hi);
        total -= y * p.ln() + (T::one() - y) * (T::one() - p).ln();
    }
    total / T::of(targets.len().max(1) as f64)
}
