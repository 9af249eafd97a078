//! Reverse-mode differentiation over a flat tape of matrix primitives.
//!
//! Every operation evaluates eagerly and records its inputs. [`Tape::backward`]
//! walks the tape once in reverse, so gradient accumulation order is fixed by
//! construction order.

use std::sync::Arc;

use super::tensor::{dot, Tensor};
use super::NumericsError;

/// Shared row-index list used by gather and segment primitives.
pub type Index = Arc<[usize]>;

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    ScaleRows(Var, Var),
    ScaleBlocks(Var, Var),
    BlockSum(Var, usize),
    Scale(Var, f64),
    AddConst(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    LeakyRelu(Var, f64),
    Relu(Var),
    Exp(Var),
    Gather(Var, Index),
    SegmentSum(Var, Index),
    SegmentSoftmax(Var, Index),
    RowSum(Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` did not influence the output.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.rows(), like.cols()))
    }
}

fn shape_err(op: &'static str, detail: String) -> NumericsError {
    NumericsError::ShapeMismatch { op, detail }
}

fn check_index(op: &'static str, idx: &[usize], bound: usize) -> Result<(), NumericsError> {
    match idx.iter().find(|&&i| i >= bound) {
        Some(&i) => Err(NumericsError::IndexOutOfRange { op, index: i, bound }),
        None => Ok(()),
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var, NumericsError> {
        if !value.all_finite() {
            return Err(NumericsError::NonFinite { op: op_name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records an input or parameter. Leaves must be finite.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var, NumericsError> {
        self.push("leaf", value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.rows() {
            return Err(shape_err("matmul", format!("{:?} · {:?}", x.shape(), y.shape())));
        }
        let out = x.matmul(y);
        self.push("matmul", out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`, the layout used for `x Wᵀ` with weights stored out × in.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.cols() {
            return Err(shape_err("matmul_t", format!("{:?} · {:?}ᵀ", x.shape(), y.shape())));
        }
        let out = x.matmul_t(y);
        self.push("matmul_t", out, Op::MatMulT(a, b))
    }

    fn zip_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, NumericsError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err(name, format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let out = Tensor::from_vec(x.rows(), x.cols(), data);
        self.push(name, out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip_same("add", a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip_same("sub", a, b, |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip_same("mul", a, b, |p, q| p * q, Op::Mul(a, b))
    }

    /// Adds the `1 × c` row vector `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NumericsError> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(shape_err("add_row", format!("{:?} + {:?}", x.shape(), r.shape())));
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (d, &v) in out.row_mut(i).iter_mut().zip(r.data()) {
                *d += v;
            }
        }
        self.push("add_row", out, Op::AddRow(a, row))
    }

    /// Multiplies row `i` of `a` by the scalar `w[i, 0]`.
    pub fn scale_rows(&mut self, a: Var, w: Var) -> Result<Var, NumericsError> {
        let (x, s) = (self.value(a), self.value(w));
        if s.cols() != 1 || s.rows() != x.rows() {
            return Err(shape_err("scale_rows", format!("{:?} by {:?}", x.shape(), s.shape())));
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            let k = s.get(i, 0);
            out.row_mut(i).iter_mut().for_each(|v| *v *= k);
        }
        self.push("scale_rows", out, Op::ScaleRows(a, w))
    }

    /// Multiplies every row of `a` elementwise by the `1 × c` row vector `row`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var, NumericsError> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(shape_err("mul_row", format!("{:?} * {:?}", x.shape(), r.shape())));
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (d, &v) in out.row_mut(i).iter_mut().zip(r.data()) {
                *d *= v;
            }
        }
        self.push("mul_row", out, Op::MulRow(a, row))
    }

    /// Splits the columns of `a` into `coef.cols()` equal blocks and scales
    /// block `b` of row `i` by `coef[i, b]`.
    pub fn scale_blocks(&mut self, a: Var, coef: Var) -> Result<Var, NumericsError> {
        let (x, s) = (self.value(a), self.value(coef));
        let k = s.cols();
        if s.rows() != x.rows() || k == 0 || !x.cols().is_multiple_of(k) {
            return Err(shape_err("scale_blocks", format!("{:?} by {:?}", x.shape(), s.shape())));
        }
        let w = x.cols() / k;
        let mut out = x.clone();
        for i in 0..out.rows() {
            let (row, c) = (out.row_mut(i), s.row(i));
            for (b, chunk) in row.chunks_exact_mut(w).enumerate() {
                chunk.iter_mut().for_each(|v| *v *= c[b]);
            }
        }
        self.push("scale_blocks", out, Op::ScaleBlocks(a, coef))
    }

    /// `r × (k·w) → r × k`: sums each of `k` equal column blocks.
    pub fn block_sum(&mut self, a: Var, k: usize) -> Result<Var, NumericsError> {
        let x = self.value(a);
        if k == 0 || !x.cols().is_multiple_of(k) {
            return Err(shape_err("block_sum", format!("{:?} into {k} blocks", x.shape())));
        }
        let w = x.cols() / k;
        let mut data = Vec::with_capacity(x.rows() * k);
        for i in 0..x.rows() {
            data.extend(x.row(i).chunks_exact(w).map(|c| c.iter().sum::<f64>()));
        }
        let out = Tensor::from_vec(x.rows(), k, data);
        self.push("block_sum", out, Op::BlockSum(a, k))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var, NumericsError> {
        let out = self.value(a).map(|v| v * k);
        self.push("scale", out, Op::Scale(a, k))
    }

    pub fn add_const(&mut self, a: Var, k: f64) -> Result<Var, NumericsError> {
        let out = self.value(a).map(|v| v + k);
        self.push("add_const", out, Op::AddConst(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let rows = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| shape_err("concat_cols", "no inputs".into()))?;
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(shape_err("concat_cols", "row counts differ".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::from_vec(rows, cols, data);
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let cols = parts
            .first()
            .map(|&p| self.value(p).cols())
            .ok_or_else(|| shape_err("concat_rows", "no inputs".into()))?;
        if parts.iter().any(|&p| self.value(p).cols() != cols) {
            return Err(shape_err("concat_rows", "column counts differ".into()));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rows = data.len() / cols.max(1);
        let out = Tensor::from_vec(rows, cols, data);
        self.push("concat_rows", out, Op::ConcatRows(parts.to_vec()))
    }

    /// Columns `start..start + len` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let x = self.value(a);
        if start + len > x.cols() {
            return Err(shape_err(
                "slice_cols",
                format!("{}..{} of {:?}", start, start + len, x.shape()),
            ));
        }
        let mut data = Vec::with_capacity(x.rows() * len);
        for i in 0..x.rows() {
            data.extend_from_slice(&x.row(i)[start..start + len]);
        }
        let out = Tensor::from_vec(x.rows(), len, data);
        self.push("slice_cols", out, Op::SliceCols(a, start))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var, NumericsError> {
        let out = self.value(a).map(|v| if v > 0.0 { v } else { slope * v });
        self.push("leaky_relu", out, Op::LeakyRelu(a, slope))
    }

    /// `max(0, a)`.
    pub fn relu(&mut self, a: Var) -> Result<Var, NumericsError> {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push("relu", out, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, NumericsError> {
        let out = self.value(a).map(f64::exp);
        self.push("exp", out, Op::Exp(a))
    }

    /// Output row `e` is row `idx[e]` of `a`.
    pub fn gather(&mut self, a: Var, idx: &Index) -> Result<Var, NumericsError> {
        let x = self.value(a);
        check_index("gather", idx, x.rows())?;
        let mut data = Vec::with_capacity(idx.len() * x.cols());
        for &i in idx.iter() {
            data.extend_from_slice(x.row(i));
        }
        let out = Tensor::from_vec(idx.len(), x.cols(), data);
        self.push("gather", out, Op::Gather(a, idx.clone()))
    }

    /// Scatter-add: output row `s` is the sum of rows `e` of `a` with `seg[e] == s`.
    pub fn segment_sum(&mut self, a: Var, seg: &Index, segments: usize) -> Result<Var, NumericsError> {
        let x = self.value(a);
        if seg.len() != x.rows() {
            return Err(shape_err("segment_sum", format!("{} ids for {} rows", seg.len(), x.rows())));
        }
        check_index("segment_sum", seg, segments)?;
        let mut out = Tensor::zeros(segments, x.cols());
        for (e, &s) in seg.iter().enumerate() {
            for (d, &v) in out.row_mut(s).iter_mut().zip(x.row(e)) {
                *d += v;
            }
        }
        self.push("segment_sum", out, Op::SegmentSum(a, seg.clone()))
    }

    /// Column-wise softmax over the rows sharing a segment id.
    pub fn segment_softmax(&mut self, a: Var, seg: &Index, segments: usize) -> Result<Var, NumericsError> {
        let x = self.value(a);
        if seg.len() != x.rows() {
            return Err(shape_err(
                "segment_softmax",
                format!("{} ids for {} rows", seg.len(), x.rows()),
            ));
        }
        check_index("segment_softmax", seg, segments)?;
        let c = x.cols();
        let mut max = Tensor::filled(segments, c, f64::NEG_INFINITY);
        for (e, &s) in seg.iter().enumerate() {
            for (m, &v) in max.row_mut(s).iter_mut().zip(x.row(e)) {
                *m = m.max(v);
            }
        }
        let mut out = Tensor::zeros(x.rows(), c);
        let mut denom = Tensor::zeros(segments, c);
        for (e, &s) in seg.iter().enumerate() {
            for k in 0..c {
                let v = (x.get(e, k) - max.get(s, k)).exp();
                out.set(e, k, v);
                denom.row_mut(s)[k] += v;
            }
        }
        for (e, &s) in seg.iter().enumerate() {
            for k in 0..c {
                out.row_mut(e)[k] /= denom.get(s, k);
            }
        }
        self.push("segment_softmax", out, Op::SegmentSoftmax(a, seg.clone()))
    }

    /// `r × c → r × 1`.
    pub fn row_sum(&mut self, a: Var) -> Result<Var, NumericsError> {
        let x = self.value(a);
        let data = (0..x.rows()).map(|i| x.row(i).iter().sum()).collect();
        let out = Tensor::from_vec(x.rows(), 1, data);
        self.push("row_sum", out, Op::RowSum(a))
    }

    /// Sum of all entries as a `1 × 1` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var, NumericsError> {
        let out = Tensor::from_vec(1, 1, vec![self.value(a).sum()]);
        self.push("sum", out, Op::Sum(a))
    }

    /// Back-propagates from a `1 × 1` output.
    pub fn backward(&self, output: Var) -> Result<Grads, NumericsError> {
        let shape = self.value(output).shape();
        if shape != (1, 1) {
            return Err(shape_err("backward", format!("output shape {shape:?}, expected (1, 1)")));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::filled(1, 1, 1.0));

        for id in (0..=output.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            let mut acc = |v: Var, t: Tensor| match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    acc(*a, g.matmul_t(self.value(*b)));
                    acc(*b, self.value(*a).t_matmul(&g));
                }
                Op::MatMulT(a, b) => {
                    acc(*a, g.matmul(self.value(*b)));
                    acc(*b, g.t_matmul(self.value(*a)));
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.map(|v| -v));
                }
                Op::Mul(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let ga = zip(&g, y, |p, q| p * q);
                    let gb = zip(&g, x, |p, q| p * q);
                    acc(*a, ga);
                    acc(*b, gb);
                }
                Op::AddRow(a, row) => {
                    let mut gr = Tensor::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (d, &v) in gr.data_mut().iter_mut().zip(g.row(i)) {
                            *d += v;
                        }
                    }
                    acc(*a, g.clone());
                    acc(*row, gr);
                }
                Op::MulRow(a, row) => {
                    let (x, r) = (self.value(*a), self.value(*row));
                    let mut ga = g.clone();
                    let mut gr = Tensor::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (d, &v) in ga.row_mut(i).iter_mut().zip(r.data()) {
                            *d *= v;
                        }
                        for ((d, &gv), &xv) in gr.data_mut().iter_mut().zip(g.row(i)).zip(x.row(i)) {
                            *d += gv * xv;
                        }
                    }
                    acc(*a, ga);
                    acc(*row, gr);
                }
                Op::ScaleBlocks(a, coef) => {
                    let (x, s) = (self.value(*a), self.value(*coef));
                    let k = s.cols();
                    let w = g.cols() / k;
                    let mut ga = g.clone();
                    let mut gc = Tensor::zeros(s.rows(), k);
                    for i in 0..g.rows() {
                        let c = s.row(i).to_vec();
                        for (b, chunk) in ga.row_mut(i).chunks_exact_mut(w).enumerate() {
                            chunk.iter_mut().for_each(|v| *v *= c[b]);
                        }
                        let dc: Vec<f64> = g
                            .row(i)
                            .chunks_exact(w)
                            .zip(x.row(i).chunks_exact(w))
                            .map(|(gb, xb)| dot(gb, xb))
                            .collect();
                        gc.row_mut(i).copy_from_slice(&dc);
                    }
                    acc(*a, ga);
                    acc(*coef, gc);
                }
                Op::BlockSum(a, k) => {
                    let (r, c) = self.value(*a).shape();
                    let w = c / k;
                    let mut ga = Tensor::zeros(r, c);
                    for i in 0..r {
                        let gi = g.row(i).to_vec();
                        for (b, chunk) in ga.row_mut(i).chunks_exact_mut(w).enumerate() {
                            chunk.iter_mut().for_each(|v| *v = gi[b]);
                        }
                    }
                    acc(*a, ga);
                }
                Op::ScaleRows(a, w) => {
                    let (x, s) = (self.value(*a), self.value(*w));
                    let mut ga = g.clone();
                    let mut gw = Tensor::zeros(s.rows(), 1);
                    for i in 0..g.rows() {
                        let k = s.get(i, 0);
                        ga.row_mut(i).iter_mut().for_each(|v| *v *= k);
                        gw.set(i, 0, dot(g.row(i), x.row(i)));
                    }
                    acc(*a, ga);
                    acc(*w, gw);
                }
                Op::Scale(a, k) => acc(*a, g.map(|v| v * k)),
                Op::AddConst(a) => acc(*a, g.clone()),
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let mut gp = Tensor::zeros(g.rows(), w);
                        for i in 0..g.rows() {
                            gp.row_mut(i).copy_from_slice(&g.row(i)[start..start + w]);
                        }
                        acc(p, gp);
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let (r, c) = self.value(p).shape();
                        let gp = Tensor::from_vec(r, c, g.data()[start * c..(start + r) * c].to_vec());
                        acc(p, gp);
                        start += r;
                    }
                }
                Op::SliceCols(a, start) => {
                    let (r, c) = self.value(*a).shape();
                    let mut ga = Tensor::zeros(r, c);
                    for i in 0..r {
                        ga.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                    }
                    acc(*a, ga);
                }
                Op::LeakyRelu(a, slope) => {
                    let x = self.value(*a);
                    acc(*a, zip(&g, x, |gv, xv| if xv > 0.0 { gv } else { slope * gv }));
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    acc(*a, zip(&g, x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }));
                }
                Op::Exp(a) => acc(*a, zip(&g, &node.value, |gv, y| gv * y)),
                Op::Gather(a, idx) => {
                    let (r, c) = self.value(*a).shape();
                    let mut ga = Tensor::zeros(r, c);
                    for (e, &i) in idx.iter().enumerate() {
                        for (d, &v) in ga.row_mut(i).iter_mut().zip(g.row(e)) {
                            *d += v;
                        }
                    }
                    acc(*a, ga);
                }
                Op::SegmentSum(a, seg) => {
                    let c = g.cols();
                    let mut data = Vec::with_capacity(seg.len() * c);
                    for &s in seg.iter() {
                        data.extend_from_slice(g.row(s));
                    }
                    acc(*a, Tensor::from_vec(seg.len(), c, data));
                }
                Op::SegmentSoftmax(a, seg) => {
                    let y = &node.value;
                    let c = y.cols();
                    let segments = seg.iter().copied().max().map_or(0, |m| m + 1);
                    let mut inner = Tensor::zeros(segments, c);
                    for (e, &s) in seg.iter().enumerate() {
                        for k in 0..c {
                            inner.row_mut(s)[k] += y.get(e, k) * g.get(e, k);
                        }
                    }
                    let mut ga = Tensor::zeros(y.rows(), c);
                    for (e, &s) in seg.iter().enumerate() {
                        for k in 0..c {
                            ga.set(e, k, y.get(e, k) * (g.get(e, k) - inner.get(s, k)));
                        }
                    }
                    acc(*a, ga);
                }
                Op::RowSum(a) => {
                    let (r, c) = self.value(*a).shape();
                    let mut ga = Tensor::zeros(r, c);
                    for i in 0..r {
                        let v = g.get(i, 0);
                        ga.row_mut(i).iter_mut().for_each(|d| *d = v);
                    }
                    acc(*a, ga);
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    acc(*a, Tensor::filled(r, c, g.get(0, 0)));
                }
            }
        }
        Ok(Grads { grads })
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&p, &q)| f(p, q)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data)
}
