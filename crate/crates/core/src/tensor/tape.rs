//! Reverse-mode differentiation over a flat, append-only list of nodes.
//!
//! Nodes are recorded in creation order, which is always a valid topological
//! order, so the backward sweep is a single reverse pass.

use std::collections::HashMap;

use rand::Rng;

use super::{invalid, matmul_into, mismatch, ParamId, ParamStore, Real, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Sin(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    ScatterAdd(Var, Vec<usize>),
    Softmax(Var),
    LogSoftmax(Var),
    SegmentSoftmax(Var, Vec<usize>),
    MeanRows(Var),
    SumAll(Var),
    RowWhere(Vec<bool>, Var, Var),
    Dropout(Var, Vec<T>),
    Nll(Var, Vec<usize>),
    L2NormalizeRows(Var, T),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records a computation for later differentiation.
///
/// A tape is single-owner; independent workers build independent tapes.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
    training: bool,
}

/// Result of a backward sweep.
pub struct Gradients<T> {
    nodes: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to `v`, if any flowed there.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes.get(v.0).and_then(|g| g.as_ref())
    }

    /// Parameter gradients in parameter-id order. Parameters that were bound
    /// but received no gradient are reported as zeros.
    pub fn params<'a>(&'a self, store: &ParamStore<T>) -> Vec<(ParamId, Tensor<T>)> {
        let mut out: Vec<(ParamId, Tensor<T>)> = self
            .params
            .iter()
            .map(|&(id, v)| {
                let g = self.nodes[v.0]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(store.value(id).shape()));
                (id, g)
            })
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, v)| self.wrt(*v))
    }
}

fn check_2d<T: Real>(op: &'static str, t: &Tensor<T>) -> Result<(), TensorError> {
    if t.shape().len() != 2 {
        return Err(invalid(
            op,
            format!("expected a matrix, got shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

impl<T: Real> Tape<T> {
    pub fn new(training: bool) -> Self {
        Tape {
            nodes: Vec::new(),
            params: HashMap::new(),
            training,
        }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A constant input; no gradient is tracked for it.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// An input whose gradient is tracked (used by gradient checks).
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Binds a stored parameter onto the tape. Binding the same id twice
    /// returns the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param, true);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        check_2d("matmul", av)?;
        check_2d("matmul", bv)?;
        if av.cols() != bv.rows() {
            return Err(mismatch("matmul", av.shape(), bv.shape()));
        }
        let (n, k, m) = (av.rows(), av.cols(), bv.cols());
        let mut out = vec![T::zero(); n * m];
        matmul_into(av.data(), bv.data(), &mut out, n, k, m);
        let t = Tensor::from_rows(n, m, out)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::MatMul(a, b), ng))
    }

    fn zip(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch(name, av.shape(), bv.shape()));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `1 x m` row to every row of an `n x m` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        let (av, rv) = (self.value(a), self.value(row));
        check_2d("add_row", av)?;
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(mismatch("add_row", av.shape(), rv.shape()));
        }
        let m = av.cols();
        let r = rv.data();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + r[i % m])
            .collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(t, Op::AddRow(a, row), ng))
    }

    /// Multiplies row `i` of an `n x m` matrix by entry `i` of an `n x 1` column.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var, TensorError> {
        let (av, cv) = (self.value(a), self.value(col));
        check_2d("mul_col", av)?;
        if cv.cols() != 1 || cv.rows() != av.rows() {
            return Err(mismatch("mul_col", av.shape(), cv.shape()));
        }
        let m = av.cols();
        let c = cv.data();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * c[i / m])
            .collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(col);
        Ok(self.push(t, Op::MulCol(a, col), ng))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let t = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(t, Op::Scale(a, s), ng)
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let t = self.value(a).map(f);
        let ng = self.ng(a);
        self.push(t, op, ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| T::one() / (T::one() + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| if x > T::zero() { x } else { T::zero() },
            Op::Relu(a),
        )
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.sin(), Op::Sin(a))
    }

    /// Concatenates matrices with equal row counts along the last axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(invalid("concat_cols", "no operands"));
        }
        let n = self.value(parts[0]).rows();
        for &p in parts {
            let pv = self.value(p);
            check_2d("concat_cols", pv)?;
            if pv.rows() != n {
                return Err(mismatch(
                    "concat_cols",
                    self.value(parts[0]).shape(),
                    pv.shape(),
                ));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(n * total);
        for r in 0..n {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let t = Tensor::from_rows(n, total, data)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Stacks matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(invalid("concat_rows", "no operands"));
        }
        let m = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut n = 0;
        for &p in parts {
            let pv = self.value(p);
            check_2d("concat_rows", pv)?;
            if pv.cols() != m {
                return Err(mismatch(
                    "concat_rows",
                    self.value(parts[0]).shape(),
                    pv.shape(),
                ));
            }
            n += pv.rows();
            data.extend_from_slice(pv.data());
        }
        let t = Tensor::from_rows(n, m, data)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(t, Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let av = self.value(a);
        check_2d("slice_cols", av)?;
        if start >= end || end > av.cols() {
            return Err(invalid(
                "slice_cols",
                format!("range {start}..{end} out of bounds for {:?}", av.shape()),
            ));
        }
        let n = av.rows();
        let mut data = Vec::with_capacity(n * (end - start));
        for r in 0..n {
            data.extend_from_slice(&av.row_slice(r)[start..end]);
        }
        let t = Tensor::from_rows(n, end - start, data)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::SliceCols(a, start), ng))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let av = self.value(a);
        check_2d("slice_rows", av)?;
        if start >= end || end > av.rows() {
            return Err(invalid(
                "slice_rows",
                format!("range {start}..{end} out of bounds for {:?}", av.shape()),
            ));
        }
        let m = av.cols();
        let data = av.data()[start * m..end * m].to_vec();
        let t = Tensor::from_rows(end - start, m, data)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::SliceRows(a, start), ng))
    }

    /// Row gather; this is also the embedding lookup.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var, TensorError> {
        let av = self.value(a);
        check_2d("gather_rows", av)?;
        let rows = av.rows();
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(invalid(
                "gather_rows",
                format!("index {bad} out of range for {rows} rows"),
            ));
        }
        let m = av.cols();
        let mut data = Vec::with_capacity(index.len() * m);
        for &i in index {
            data.extend_from_slice(av.row_slice(i));
        }
        let t = Tensor::from_rows(index.len(), m, data)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::GatherRows(a, index.to_vec()), ng))
    }

    /// `out[index[i]] += a[i]` into an `n_out`-row matrix.
    pub fn scatter_add(
        &mut self,
        a: Var,
        index: &[usize],
        n_out: usize,
    ) -> Result<Var, TensorError> {
        let av = self.value(a);
        check_2d("scatter_add", av)?;
        if index.len() != av.rows() {
            return Err(invalid(
                "scatter_add",
                format!("{} indices for {} rows", index.len(), av.rows()),
            ));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= n_out) {
            return Err(invalid(
                "scatter_add",
                format!("target {bad} out of range for {n_out} rows"),
            ));
        }
        let m = av.cols();
        let mut out = vec![T::zero(); n_out * m];
        for (i, &dst) in index.iter().enumerate() {
            let src = av.row_slice(i);
            for (o, &x) in out[dst * m..(dst + 1) * m].iter_mut().zip(src) {
                *o = *o + x;
            }
        }
        let t = Tensor::from_rows(n_out, m, out)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::ScatterAdd(a, index.to_vec()), ng))
    }

    /// Mean of `a`'s rows grouped by destination; destinations that receive
    /// no rows get the zero vector.
    pub fn scatter_mean(
        &mut self,
        a: Var,
        index: &[usize],
        n_out: usize,
    ) -> Result<Var, TensorError> {
        let sum = self.scatter_add(a, index, n_out)?;
        let mut counts = vec![0usize; n_out];
        for &i in index {
            counts[i] += 1;
        }
        let inv = counts
            .iter()
            .map(|&c| {
                if c == 0 {
                    T::zero()
                } else {
                    T::one() / T::of(c as f64)
                }
            })
            .collect();
        let inv = self.constant(Tensor::column(inv));
        self.mul_col(sum, inv)
    }

    /// Softmax along the last axis, per row.
    pub fn softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let av = self.value(a);
        check_2d("softmax", av)?;
        let m = av.cols();
        let mut data = Vec::with_capacity(av.len());
        for r in 0..av.rows() {
            softmax_into(av.row_slice(r), &mut data);
        }
        let t = Tensor::new(av.shape().to_vec(), data)?;
        debug_assert_eq!(t.cols(), m);
        let ng = self.ng(a);
        Ok(self.push(t, Op::Softmax(a), ng))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let av = self.value(a);
        check_2d("log_softmax", av)?;
        let mut data = Vec::with_capacity(av.len());
        for r in 0..av.rows() {
            let row = av.row_slice(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
            data.extend(row.iter().map(|&x| x - lse));
        }
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::LogSoftmax(a), ng))
    }

    /// Softmax of an `n x 1` score column within groups of rows sharing a
    /// segment id.
    pub fn segment_softmax(&mut self, a: Var, segments: &[usize]) -> Result<Var, TensorError> {
        let av = self.value(a);
        check_2d("segment_softmax", av)?;
        if av.cols() != 1 || segments.len() != av.rows() {
            return Err(invalid(
                "segment_softmax",
                format!("{} segment ids for shape {:?}", segments.len(), av.shape()),
            ));
        }
        let n_seg = segments.iter().map(|&s| s + 1).max().unwrap_or(0);
        let mut max = vec![T::neg_infinity(); n_seg];
        for (&s, &x) in segments.iter().zip(av.data()) {
            max[s] = max[s].max(x);
        }
        let mut denom = vec![T::zero(); n_seg];
        let exps: Vec<T> = segments
            .iter()
            .zip(av.data())
            .map(|(&s, &x)| {
                let e = (x - max[s]).exp();
                denom[s] = denom[s] + e;
                e
            })
            .collect();
        let data = exps
            .iter()
            .zip(segments)
            .map(|(&e, &s)| e / denom[s])
            .collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::SegmentSoftmax(a, segments.to_vec()), ng))
    }

    /// Mean over rows, giving a `1 x m` row.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let av = self.value(a);
        check_2d("mean_rows", av)?;
        let (n, m) = (av.rows(), av.cols());
        if n == 0 {
            return Err(invalid("mean_rows", "no rows"));
        }
        let mut out = vec![T::zero(); m];
        for r in 0..n {
            for (o, &x) in out.iter_mut().zip(av.row_slice(r)) {
                *o = *o + x;
            }
        }
        let inv = T::one() / T::of(n as f64);
        out.iter_mut().for_each(|o| *o = *o * inv);
        let ng = self.ng(a);
        Ok(self.push(Tensor::row(out), Op::MeanRows(a), ng))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<T>();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), ng)
    }

    /// Row `r` taken from `a` where `mask[r]`, otherwise from `b`.
    pub fn row_where(&mut self, mask: &[bool], a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        check_2d("row_where", av)?;
        if av.shape() != bv.shape() {
            return Err(mismatch("row_where", av.shape(), bv.shape()));
        }
        if mask.len() != av.rows() {
            return Err(invalid(
                "row_where",
                format!("mask of {} for {} rows", mask.len(), av.rows()),
            ));
        }
        let mut data = Vec::with_capacity(av.len());
        for (r, &keep) in mask.iter().enumerate() {
            data.extend_from_slice(if keep {
                av.row_slice(r)
            } else {
                bv.row_slice(r)
            });
        }
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::RowWhere(mask.to_vec(), a, b), ng))
    }

    /// Inverted dropout: surviving entries are scaled by `1 / (1 - p)`.
    /// The identity outside training mode or when `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut impl Rng) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&p) {
            return Err(invalid("dropout", format!("rate {p} outside [0, 1)")));
        }
        if !self.training || p == 0.0 {
            return Ok(a);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(a).len())
            .map(|_| {
                if rng.random::<f64>() < p {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        Ok(self.dropout_with_mask(a, mask))
    }

    /// Dropout with an explicit multiplicative mask.
    pub fn dropout_with_mask(&mut self, a: Var, mask: Vec<T>) -> Var {
        let av = self.value(a);
        assert_eq!(mask.len(), av.len(), "dropout mask length");
        let data = av.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let t = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(a);
        self.push(t, Op::Dropout(a, mask), ng)
    }

    /// Mean negative log-likelihood of `targets` under row-wise
    /// log-probabilities.
    pub fn nll(&mut self, log_probs: Var, targets: &[usize]) -> Result<Var, TensorError> {
        let lv = self.value(log_probs);
        check_2d("nll", lv)?;
        if targets.len() != lv.rows() || targets.is_empty() {
            return Err(invalid(
                "nll",
                format!("{} targets for {} rows", targets.len(), lv.rows()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= lv.cols()) {
            return Err(invalid(
                "nll",
                format!("target {bad} out of range for {} classes", lv.cols()),
            ));
        }
        let s: T = targets.iter().enumerate().map(|(r, &t)| lv.get(r, t)).sum();
        let loss = -s / T::of(targets.len() as f64);
        let ng = self.ng(log_probs);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Nll(log_probs, targets.to_vec()),
            ng,
        ))
    }

    /// `log_softmax` followed by `nll`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, TensorError> {
        let lp = self.log_softmax(logits)?;
        self.nll(lp, targets)
    }

    /// Divides every row by its L2 norm (rows with norm below `eps` are
    /// divided by `eps`).
    pub fn l2_normalize_rows(&mut self, a: Var, eps: T) -> Result<Var, TensorError> {
        let av = self.value(a);
        check_2d("l2_normalize_rows", av)?;
        let mut data = Vec::with_capacity(av.len());
        for r in 0..av.rows() {
            let row = av.row_slice(r);
            let norm = row.iter().map(|&x| x * x).sum::<T>().sqrt().max(eps);
            data.extend(row.iter().map(|&x| x / norm));
        }
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::L2NormalizeRows(a, eps), ng))
    }

    /// Reverse sweep from a `1 x 1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        if self.value(loss).len() != 1 {
            return Err(invalid(
                "backward",
                format!("loss must be a scalar, got {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(self.shape(loss).to_vec(), vec![T::one()])?);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }

        // Interior gradients are not needed by callers; keep only leaves.
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf | Op::Param) {
                grads[i] = None;
            }
        }
        let mut params: Vec<(ParamId, Var)> = self.params.iter().map(|(&p, &v)| (p, v)).collect();
        params.sort_by_key(|(p, _)| *p);
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                if self.ng(*a) {
                    // dA = g B^T
                    let mut bt = vec![T::zero(); m * k];
                    for kk in 0..k {
                        for j in 0..m {
                            bt[j * k + kk] = bv.data()[kk * m + j];
                        }
                    }
                    let mut da = vec![T::zero(); n * k];
                    matmul_into(g.data(), &bt, &mut da, n, m, k);
                    self.acc(grads, *a, da);
                }
                if self.ng(*b) {
                    // dB = A^T g
                    let mut at = vec![T::zero(); k * n];
                    for i in 0..n {
                        for kk in 0..k {
                            at[kk * n + i] = av.data()[i * k + kk];
                        }
                    }
                    let mut db = vec![T::zero(); k * m];
                    matmul_into(&at, g.data(), &mut db, k, n, m);
                    self.acc(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.data().to_vec());
                self.acc(grads, *b, g.data().to_vec());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.data().to_vec());
                self.acc(grads, *b, g.data().iter().map(|&x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    self.acc(
                        grads,
                        *a,
                        g.data()
                            .iter()
                            .zip(bv.data())
                            .map(|(&x, &y)| x * y)
                            .collect(),
                    );
                }
                if self.ng(*b) {
                    self.acc(
                        grads,
                        *b,
                        g.data()
                            .iter()
                            .zip(av.data())
                            .map(|(&x, &y)| x * y)
                            .collect(),
                    );
                }
            }
            Op::AddRow(a, row) => {
                self.acc(grads, *a, g.data().to_vec());
                if self.ng(*row) {
                    let m = g.cols();
                    let mut dr = vec![T::zero(); m];
                    for (i, &x) in g.data().iter().enumerate() {
                        dr[i % m] = dr[i % m] + x;
                    }
                    self.acc(grads, *row, dr);
                }
            }
            Op::MulCol(a, col) => {
                let (av, cv) = (self.value(*a), self.value(*col));
                let m = av.cols();
                if self.ng(*a) {
                    let c = cv.data();
                    self.acc(
                        grads,
                        *a,
                        g.data()
                            .iter()
                            .enumerate()
                            .map(|(i, &x)| x * c[i / m])
                            .collect(),
                    );
                }
                if self.ng(*col) {
                    let mut dc = vec![T::zero(); av.rows()];
                    for (i, (&x, &y)) in g.data().iter().zip(av.data()).enumerate() {
                        dc[i / m] = dc[i / m] + x * y;
                    }
                    self.acc(grads, *col, dc);
                }
            }
            Op::Scale(a, s) => {
                self.acc(grads, *a, g.data().iter().map(|&x| x * *s).collect());
            }
            Op::Sigmoid(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(&x, &y)| x * y * (T::one() - y))
                    .collect();
                self.acc(grads, *a, d);
            }
            Op::Tanh(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(&x, &y)| x * (T::one() - y * y))
                    .collect();
                self.acc(grads, *a, d);
            }
            Op::Relu(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(&x, &y)| if y > T::zero() { x } else { T::zero() })
                    .collect();
                self.acc(grads, *a, d);
            }
            Op::Sin(a) => {
                let input = self.value(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(input.data())
                    .map(|(&x, &y)| x * y.cos())
                    .collect();
                self.acc(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let n = out.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.ng(p) {
                        let mut d = Vec::with_capacity(n * w);
                        for r in 0..n {
                            d.extend_from_slice(&g.row_slice(r)[offset..offset + w]);
                        }
                        self.acc(grads, p, d);
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let m = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).rows();
                    if self.ng(p) {
                        self.acc(grads, p, g.data()[offset * m..(offset + n) * m].to_vec());
                    }
                    offset += n;
                }
            }
            Op::SliceCols(a, start) => {
                let av = self.value(*a);
                let (n, m, w) = (av.rows(), av.cols(), out.cols());
                let mut d = vec![T::zero(); n * m];
                for r in 0..n {
                    d[r * m + start..r * m + start + w].copy_from_slice(g.row_slice(r));
                }
                self.acc(grads, *a, d);
            }
            Op::SliceRows(a, start) => {
                let av = self.value(*a);
                let m = av.cols();
                let mut d = vec![T::zero(); av.len()];
                d[start * m..start * m + g.len()].copy_from_slice(g.data());
                self.acc(grads, *a, d);
            }
            Op::GatherRows(a, index) => {
                let av = self.value(*a);
                let m = av.cols();
                let mut d = vec![T::zero(); av.len()];
                for (r, &src) in index.iter().enumerate() {
                    for (o, &x) in d[src * m..(src + 1) * m].iter_mut().zip(g.row_slice(r)) {
                        *o = *o + x;
                    }
                }
                self.acc(grads, *a, d);
            }
            Op::ScatterAdd(a, index) => {
                let m = out.cols();
                let mut d = Vec::with_capacity(index.len() * m);
                for &dst in index {
                    d.extend_from_slice(&g.data()[dst * m..(dst + 1) * m]);
                }
                self.acc(grads, *a, d);
            }
            Op::Softmax(a) => {
                let m = out.cols();
                let mut d = Vec::with_capacity(out.len());
                for r in 0..out.rows() {
                    let y = &out.data()[r * m..(r + 1) * m];
                    let gr = &g.data()[r * m..(r + 1) * m];
                    let dot: T = y.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    d.extend(y.iter().zip(gr).map(|(&yy, &gg)| yy * (gg - dot)));
                }
                self.acc(grads, *a, d);
            }
            Op::LogSoftmax(a) => {
                let m = out.cols();
                let mut d = Vec::with_capacity(out.len());
                for r in 0..out.rows() {
                    let lp = &out.data()[r * m..(r + 1) * m];
                    let gr = &g.data()[r * m..(r + 1) * m];
                    let total: T = gr.iter().copied().sum();
                    d.extend(lp.iter().zip(gr).map(|(&l, &gg)| gg - l.exp() * total));
                }
                self.acc(grads, *a, d);
            }
            Op::SegmentSoftmax(a, segments) => {
                let n_seg = segments.iter().map(|&s| s + 1).max().unwrap_or(0);
                let mut dot = vec![T::zero(); n_seg];
                for ((&s, &y), &gg) in segments.iter().zip(out.data()).zip(g.data()) {
                    dot[s] = dot[s] + y * gg;
                }
                let d = segments
                    .iter()
                    .zip(out.data())
                    .zip(g.data())
                    .map(|((&s, &y), &gg)| y * (gg - dot[s]))
                    .collect();
                self.acc(grads, *a, d);
            }
            Op::MeanRows(a) => {
                let av = self.value(*a);
                let inv = T::one() / T::of(av.rows() as f64);
                let m = av.cols();
                let d = (0..av.len()).map(|i| g.data()[i % m] * inv).collect();
                self.acc(grads, *a, d);
            }
            Op::SumAll(a) => {
                let n = self.value(*a).len();
                self.acc(grads, *a, vec![g.item(); n]);
            }
            Op::RowWhere(mask, a, b) => {
                let m = out.cols();
                let mut da = vec![T::zero(); out.len()];
                let mut db = vec![T::zero(); out.len()];
                for (r, &keep) in mask.iter().enumerate() {
                    let dst = if keep { &mut da } else { &mut db };
                    dst[r * m..(r + 1) * m].copy_from_slice(g.row_slice(r));
                }
                if self.ng(*a) {
                    self.acc(grads, *a, da);
                }
                if self.ng(*b) {
                    self.acc(grads, *b, db);
                }
            }
            Op::Dropout(a, mask) => {
                self.acc(
                    grads,
                    *a,
                    g.data().iter().zip(mask).map(|(&x, &m)| x * m).collect(),
                );
            }
            Op::Nll(a, targets) => {
                let av = self.value(*a);
                let m = av.cols();
                let scale = -g.item() / T::of(targets.len() as f64);
                let mut d = vec![T::zero(); av.len()];
                for (r, &t) in targets.iter().enumerate() {
                    d[r * m + t] = scale;
                }
                self.acc(grads, *a, d);
            }
            Op::L2NormalizeRows(a, eps) => {
                let av = self.value(*a);
                let m = av.cols();
                let mut d = Vec::with_capacity(av.len());
                for r in 0..av.rows() {
                    let x = av.row_slice(r);
                    let y = &out.data()[r * m..(r + 1) * m];
                    let gr = &g.data()[r * m..(r + 1) * m];
                    let norm = x.iter().map(|&v| v * v).sum::<T>().sqrt();
                    if norm > *eps {
                        let dot: T = y.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        d.extend(y.iter().zip(gr).map(|(&yy, &gg)| (gg - yy * dot) / norm));
                    } else {
                        d.extend(gr.iter().map(|&gg| gg / *eps));
                    }
                }
                self.acc(grads, *a, d);
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Tensor<T>>], v: Var, d: Vec<T>) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, x) in existing.data_mut().iter_mut().zip(d) {
                    *e = *e + x;
                }
            }
            slot @ None => {
                let shape = self.shape(v).to_vec();
                *slot = Some(Tensor::new(shape, d).expect("gradient shape"));
            }
        }
    }
}

fn softmax_into<T: Real>(row: &[T], out: &mut Vec<T>) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let start = out.len();
    let mut total = T::zero();
    for &x in row {
        let e = (x - max).exp();
        total = total + e;
        out.push(e);
    }
    for v in &mut out[start..] {
        *v = *v / total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let mut tape = Tape::<f64>::new(true);
        let x = tape.variable(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).unwrap().item(), 6.0);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::<f32>::new(false);
        let x =
            tape.constant(Tensor::from_rows(2, 3, vec![1.0, 2.0, 3.0, -50.0, 0.0, 50.0]).unwrap());
        let y = tape.softmax(x).unwrap();
        for r in 0..2 {
            let s: f32 = tape.value(y).row_slice(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let mut tape = Tape::<f32>::new(false);
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            TensorError::ShapeMismatch {
                op: "matmul",
                left: vec![2, 3],
                right: vec![2, 3]
            }
        );
        assert!(err.to_string().contains("matmul"));
    }

    #[test]
    fn dropout_identity_in_eval() {
        let mut tape = Tape::<f32>::new(false);
        let a = tape.constant(Tensor::row(vec![1.0, 2.0]));
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let b = tape.dropout(a, 0.5, &mut rng).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scatter_mean_empty_destination_is_zero() {
        let mut tape = Tape::<f64>::new(false);
        let a = tape.constant(Tensor::from_rows(2, 1, vec![2.0, 4.0]).unwrap());
        let m = tape.scatter_mean(a, &[1, 1], 3).unwrap();
        assert_eq!(tape.value(m).data(), &[0.0, 3.0, 0.0]);
    }

    #[test]
    fn cross_entropy_two_class_uniform() {
        let mut tape = Tape::<f64>::new(false);
        let logits = tape.constant(Tensor::row(vec![0.0, 0.0]));
        let l = tape.cross_entropy(logits, &[0]).unwrap();
        assert!((tape.value(l).item() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn saturated_cross_entropy_is_tiny() {
        let mut tape = Tape::<f64>::new(false);
        let logits = tape.constant(Tensor::row(vec![30.0, 0.0, 0.0]));
        let l = tape.cross_entropy(logits, &[0]).unwrap();
        assert!(tape.value(l).item() < 1e-9);
    }

    #[test]
    fn unused_param_reports_zero_gradient() {
        use crate::tensor::{Init, ParamStore};
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let w = store.register("w", &[1, 1], Init::Uniform(1.0), &mut rng);
        let u = store.register("u", &[1, 2], Init::Uniform(1.0), &mut rng);
        let mut tape = Tape::new(true);
        let wv = tape.param(&store, w);
        let _ = tape.param(&store, u);
        let l = tape.sum_all(wv);
        let g = tape.backward(l).unwrap();
        let ps = g.params(&store);
        assert_eq!(ps[0].1.item(), 1.0);
        assert_eq!(ps[1].1.data(), &[0.0, 0.0]);
    }
}
