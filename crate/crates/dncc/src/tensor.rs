//! Dense f64 tensors on a define-by-run reverse-mode tape.
//!
//! The tape is rebuilt on every forward pass: each operation appends a node
//! holding its forward value and enough information to replay its backward
//! rule. Node indices are therefore already in topological order and
//! [`Tape::backward`] is a single reverse sweep.
//!
//! Broadcasting is deliberately narrow: a binary op accepts equal shapes, a
//! one-element tensor against anything, or a matrix against a row vector of
//! matching width. Anything richer is a dimension error.
//!
//! Forward results are pure functions of the inputs (no threading, no
//! reassociation), so repeated runs are bitwise identical.

use crate::{Error, Result};

/// Handle to a node on a [`Tape`]. Only valid for the tape that created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(TensorId, TensorId),
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Relu(TensorId),
    Exp(TensorId),
    Log(TensorId),
    LogSoftmaxRows(TensorId),
    Sum(TensorId, Option<usize>),
    Mean(TensorId, Option<usize>),
    /// out[i] = input[i, labels[i]]
    GatherLabels(TensorId, Vec<usize>),
    /// Column-stack M vectors of length n into an n-by-M matrix.
    StackCols(Vec<TensorId>),
    /// Row-wise log-sum-exp of an n-by-M matrix, yielding a length-n vector.
    RowLogSumExp(TensorId),
    /// Columns [start, start+width) of a matrix.
    SliceCols(TensorId, usize, usize),
    Scale(TensorId, f64),
    AddConst(TensorId),
    ClampMin(TensorId, f64),
    /// Identity forward, gradient barrier backward.
    Detach,
}

struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    /// True when this node or anything upstream of it requires a gradient.
    track: bool,
    op: Op,
}

/// Reverse-mode tape holding all tensors of one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register an input tensor.
    pub fn leaf(&mut self, data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Result<TensorId> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Dimension(format!("leaf shape {shape:?} has a zero dimension")));
        }
        if data.len() != numel(&shape) {
            return Err(Error::Dimension(format!(
                "leaf data length {} does not match shape {:?} ({} elements)",
                data.len(),
                shape,
                numel(&shape)
            )));
        }
        Ok(self.push(data, shape, requires_grad, requires_grad, Op::Leaf))
    }

    /// One-element constant leaf.
    pub fn constant(&mut self, v: f64) -> TensorId {
        self.push(vec![v], vec![1], false, false, Op::Leaf)
    }

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, requires_grad: bool, track: bool, op: Op) -> TensorId {
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node { data, shape, grad: None, requires_grad, track, op });
        id
    }

    fn node(&self, id: TensorId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: TensorId) -> &[f64] {
        &self.node(id).data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.node(id).shape
    }

    pub fn numel(&self, id: TensorId) -> usize {
        self.node(id).data.len()
    }

    /// Accumulated gradient, if `backward` has reached this tensor.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.node(id).grad.as_deref()
    }

    /// Scalar value of a one-element tensor.
    pub fn scalar_value(&self, id: TensorId) -> Result<f64> {
        let n = self.node(id);
        if n.data.len() != 1 {
            return Err(Error::Contract(format!(
                "expected a scalar tensor, got shape {:?}",
                n.shape
            )));
        }
        Ok(n.data[0])
    }

    /// Drop all accumulated gradients.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn child_track(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|&i| self.node(i).track)
    }

    // ---- forward ops -----------------------------------------------------

    /// Matrix product of an n-by-k and a k-by-m tensor.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension(format!(
                "matmul shape mismatch: {sa:?} x {sb:?}"
            )));
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let da = &self.node(a).data;
        let db = &self.node(b).data;
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for p in 0..k {
                let av = da[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let row = &db[p * m..(p + 1) * m];
                let dst = &mut out[i * m..(i + 1) * m];
                for (o, &bv) in dst.iter_mut().zip(row) {
                    *o += av * bv;
                }
            }
        }
        let track = self.child_track(&[a, b]);
        Ok(self.push(out, vec![n, m], false, track, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    fn binary(&mut self, a: TensorId, b: TensorId, op: Op, f: fn(f64, f64) -> f64) -> Result<TensorId> {
        let plan = BroadcastPlan::resolve(self.shape(a), self.shape(b))?;
        let da = &self.node(a).data;
        let db = &self.node(b).data;
        let n = plan.out_numel;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            out.push(f(da[plan.index_a(i)], db[plan.index_b(i)]));
        }
        let track = self.child_track(&[a, b]);
        Ok(self.push(out, plan.out_shape.clone(), false, track, op))
    }

    pub fn relu(&mut self, a: TensorId) -> Result<TensorId> {
        let out: Vec<f64> = self.node(a).data.iter().map(|&x| x.max(0.0)).collect();
        let shape = self.shape(a).to_vec();
        let track = self.child_track(&[a]);
        Ok(self.push(out, shape, false, track, Op::Relu(a)))
    }

    pub fn exp(&mut self, a: TensorId) -> Result<TensorId> {
        let out: Vec<f64> = self.node(a).data.iter().map(|&x| x.exp()).collect();
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "exp overflowed at index {i} (input {})",
                self.node(a).data[i]
            )));
        }
        let shape = self.shape(a).to_vec();
        let track = self.child_track(&[a]);
        Ok(self.push(out, shape, false, track, Op::Exp(a)))
    }

    pub fn log(&mut self, a: TensorId) -> Result<TensorId> {
        if let Some(i) = self.node(a).data.iter().position(|&x| x <= 0.0) {
            return Err(Error::Domain(format!(
                "log of non-positive value {} at index {i}",
                self.node(a).data[i]
            )));
        }
        let out: Vec<f64> = self.node(a).data.iter().map(|&x| x.ln()).collect();
        let shape = self.shape(a).to_vec();
        let track = self.child_track(&[a]);
        Ok(self.push(out, shape, false, track, Op::Log(a)))
    }

    /// Row-wise log-softmax of an n-by-K logit matrix, K >= 2.
    ///
    /// Computed with per-row max subtraction so rows like `[1000, 0]` come out
    /// as `[0, -1000]` instead of overflowing.
    pub fn log_softmax_rows(&mut self, logits: TensorId) -> Result<TensorId> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[1] < 2 {
            return Err(Error::Contract(format!(
                "log_softmax_rows expects an n-by-K matrix with K >= 2, got {shape:?}"
            )));
        }
        let data = &self.node(logits).data;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "log_softmax_rows: non-finite logit {} at index {i}",
                data[i]
            )));
        }
        let (n, k) = (shape[0], shape[1]);
        let mut out = vec![0.0; n * k];
        for r in 0..n {
            let row = &data[r * k..(r + 1) * k];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            for j in 0..k {
                out[r * k + j] = row[j] - lse;
            }
        }
        let track = self.child_track(&[logits]);
        Ok(self.push(out, shape, false, track, Op::LogSoftmaxRows(logits)))
    }

    pub fn sum(&mut self, a: TensorId, axis: Option<usize>) -> Result<TensorId> {
        self.reduce(a, axis, false)
    }

    pub fn mean(&mut self, a: TensorId, axis: Option<usize>) -> Result<TensorId> {
        self.reduce(a, axis, true)
    }

    fn reduce(&mut self, a: TensorId, axis: Option<usize>, mean: bool) -> Result<TensorId> {
        let shape = self.shape(a).to_vec();
        let data = &self.node(a).data;
        let (out, out_shape) = match axis {
            None => {
                let s: f64 = data.iter().sum();
                let v = if mean { s / data.len() as f64 } else { s };
                (vec![v], vec![1])
            }
            Some(ax) => {
                if ax >= shape.len() {
                    return Err(Error::Dimension(format!(
                        "reduce axis {ax} out of range for shape {shape:?}"
                    )));
                }
                let outer: usize = shape[..ax].iter().product();
                let len = shape[ax];
                let inner: usize = shape[ax + 1..].iter().product();
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    for k in 0..len {
                        for i in 0..inner {
                            out[o * inner + i] += data[(o * len + k) * inner + i];
                        }
                    }
                }
                if mean {
                    for v in &mut out {
                        *v /= len as f64;
                    }
                }
                let mut os: Vec<usize> = shape.clone();
                os.remove(ax);
                if os.is_empty() {
                    os.push(1);
                }
                (out, os)
            }
        };
        let track = self.child_track(&[a]);
        let op = if mean { Op::Mean(a, axis) } else { Op::Sum(a, axis) };
        Ok(self.push(out, out_shape, false, track, op))
    }

    /// Pick `input[i, labels[i]]` from an n-by-K matrix; yields a length-n vector.
    pub fn gather_labels(&mut self, a: TensorId, labels: &[usize]) -> Result<TensorId> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 {
            return Err(Error::Dimension(format!(
                "gather_labels expects a matrix, got {shape:?}"
            )));
        }
        let (n, k) = (shape[0], shape[1]);
        if labels.len() != n {
            return Err(Error::Contract(format!(
                "gather_labels: {} labels for {} rows",
                labels.len(),
                n
            )));
        }
        if let Some(i) = labels.iter().position(|&y| y >= k) {
            return Err(Error::Contract(format!(
                "label {} out of range [0, {k}) at index {i}",
                labels[i]
            )));
        }
        let data = &self.node(a).data;
        let out: Vec<f64> = labels.iter().enumerate().map(|(i, &y)| data[i * k + y]).collect();
        let track = self.child_track(&[a]);
        Ok(self.push(out, vec![n], false, track, Op::GatherLabels(a, labels.to_vec())))
    }

    /// Stack M equal-length vectors as the columns of an n-by-M matrix.
    pub fn stack_cols(&mut self, inputs: &[TensorId]) -> Result<TensorId> {
        if inputs.is_empty() {
            return Err(Error::Contract("stack_cols needs at least one input".into()));
        }
        let n = self.numel(inputs[0]);
        for &id in inputs {
            let s = self.shape(id);
            if s.len() != 1 || s[0] != n {
                return Err(Error::Dimension(format!(
                    "stack_cols expects length-{n} vectors, got {s:?}"
                )));
            }
        }
        let m = inputs.len();
        let mut out = vec![0.0; n * m];
        for (c, &id) in inputs.iter().enumerate() {
            for (i, &v) in self.node(id).data.iter().enumerate() {
                out[i * m + c] = v;
            }
        }
        let track = self.child_track(inputs);
        Ok(self.push(out, vec![n, m], false, track, Op::StackCols(inputs.to_vec())))
    }

    /// Row-wise log-sum-exp of an n-by-M matrix; yields a length-n vector.
    pub fn row_logsumexp(&mut self, a: TensorId) -> Result<TensorId> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 {
            return Err(Error::Dimension(format!(
                "row_logsumexp expects a matrix, got {shape:?}"
            )));
        }
        let (n, m) = (shape[0], shape[1]);
        let data = &self.node(a).data;
        let mut out = Vec::with_capacity(n);
        for r in 0..n {
            let row = &data[r * m..(r + 1) * m];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            out.push(max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln());
        }
        let track = self.child_track(&[a]);
        Ok(self.push(out, vec![n], false, track, Op::RowLogSumExp(a)))
    }

    /// Columns [start, start+width) of an n-by-D matrix.
    pub fn slice_cols(&mut self, a: TensorId, start: usize, width: usize) -> Result<TensorId> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 {
            return Err(Error::Dimension(format!(
                "slice_cols expects a matrix, got {shape:?}"
            )));
        }
        let (n, d) = (shape[0], shape[1]);
        if width == 0 || start + width > d {
            return Err(Error::Dimension(format!(
                "slice_cols [{start}, {}) out of range for width {d}",
                start + width
            )));
        }
        let data = &self.node(a).data;
        let mut out = Vec::with_capacity(n * width);
        for r in 0..n {
            out.extend_from_slice(&data[r * d + start..r * d + start + width]);
        }
        let track = self.child_track(&[a]);
        Ok(self.push(out, vec![n, width], false, track, Op::SliceCols(a, start, width)))
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> Result<TensorId> {
        let out: Vec<f64> = self.node(a).data.iter().map(|&x| c * x).collect();
        let shape = self.shape(a).to_vec();
        let track = self.child_track(&[a]);
        Ok(self.push(out, shape, false, track, Op::Scale(a, c)))
    }

    pub fn add_const(&mut self, a: TensorId, c: f64) -> Result<TensorId> {
        let out: Vec<f64> = self.node(a).data.iter().map(|&x| x + c).collect();
        let shape = self.shape(a).to_vec();
        let track = self.child_track(&[a]);
        Ok(self.push(out, shape, false, track, Op::AddConst(a)))
    }

    /// Elementwise `max(x, lo)`; the gradient is blocked where the floor is active.
    pub fn clamp_min(&mut self, a: TensorId, lo: f64) -> Result<TensorId> {
        let out: Vec<f64> = self.node(a).data.iter().map(|&x| x.max(lo)).collect();
        let shape = self.shape(a).to_vec();
        let track = self.child_track(&[a]);
        Ok(self.push(out, shape, false, track, Op::ClampMin(a, lo)))
    }

    /// Copy of `a` that backward treats as a constant.
    pub fn detach(&mut self, a: TensorId) -> Result<TensorId> {
        let out = self.node(a).data.clone();
        let shape = self.shape(a).to_vec();
        Ok(self.push(out, shape, false, false, Op::Detach))
    }

    // ---- backward --------------------------------------------------------

    /// Reverse sweep from a scalar loss.
    ///
    /// Every tensor with `requires_grad` that the loss depends on ends up with
    /// its gradient accumulated into `grad`; calling `backward` again without
    /// [`Tape::zero_grad`] keeps accumulating.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.numel(loss) != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = self.nodes.len();
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; n];
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].track {
                continue;
            }
            let g = match adj[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g, &mut adj);
            if self.nodes[i].requires_grad {
                let grad = self.nodes[i].grad.get_or_insert_with(|| vec![0.0; g.len()]);
                for (acc, gv) in grad.iter_mut().zip(&g) {
                    *acc += gv;
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf | Op::Detach => {}

            Op::MatMul(a, b) => {
                let (na, ka) = (self.shape(*a)[0], self.shape(*a)[1]);
                let m = self.shape(*b)[1];
                if self.node(*a).track {
                    // dA = G . B^T
                    let db = &self.node(*b).data;
                    let da = self.adj_slot(adj, *a);
                    for r in 0..na {
                        for p in 0..ka {
                            let mut s = 0.0;
                            for c in 0..m {
                                s += g[r * m + c] * db[p * m + c];
                            }
                            da[r * ka + p] += s;
                        }
                    }
                }
                if self.node(*b).track {
                    // dB = A^T . G
                    let dat = &self.node(*a).data;
                    let dbuf = self.adj_slot(adj, *b);
                    for p in 0..ka {
                        for r in 0..na {
                            let av = dat[r * ka + p];
                            if av == 0.0 {
                                continue;
                            }
                            for c in 0..m {
                                dbuf[p * m + c] += av * g[r * m + c];
                            }
                        }
                    }
                }
            }

            Op::Add(a, b) => {
                self.binary_backward(adj, *a, *b, g, |_, _| (1.0, 1.0));
            }
            Op::Sub(a, b) => {
                self.binary_backward(adj, *a, *b, g, |_, _| (1.0, -1.0));
            }
            Op::Mul(a, b) => {
                self.binary_backward(adj, *a, *b, g, |x, y| (y, x));
            }

            Op::Relu(a) => {
                if self.node(*a).track {
                    let xs = &self.node(*a).data;
                    let da = self.adj_slot(adj, *a);
                    for (j, gv) in g.iter().enumerate() {
                        if xs[j] > 0.0 {
                            da[j] += gv;
                        }
                    }
                }
            }
            Op::Exp(a) => {
                if self.node(*a).track {
                    let out = &node.data;
                    let da = self.adj_slot(adj, *a);
                    for (j, gv) in g.iter().enumerate() {
                        da[j] += gv * out[j];
                    }
                }
            }
            Op::Log(a) => {
                if self.node(*a).track {
                    let xs = &self.node(*a).data;
                    let da = self.adj_slot(adj, *a);
                    for (j, gv) in g.iter().enumerate() {
                        da[j] += gv / xs[j];
                    }
                }
            }

            Op::LogSoftmaxRows(a) => {
                if self.node(*a).track {
                    let (n, k) = (node.shape[0], node.shape[1]);
                    let out = &node.data;
                    let da = self.adj_slot(adj, *a);
                    for r in 0..n {
                        let gsum: f64 = g[r * k..(r + 1) * k].iter().sum();
                        for j in 0..k {
                            let p = out[r * k + j].exp();
                            da[r * k + j] += g[r * k + j] - p * gsum;
                        }
                    }
                }
            }

            Op::Sum(a, axis) | Op::Mean(a, axis) => {
                if self.node(*a).track {
                    let mean = matches!(node.op, Op::Mean(..));
                    let in_shape = self.shape(*a).to_vec();
                    let da = self.adj_slot(adj, *a);
                    match axis {
                        None => {
                            let scale = if mean { 1.0 / da.len() as f64 } else { 1.0 };
                            let gv = g[0] * scale;
                            for v in da.iter_mut() {
                                *v += gv;
                            }
                        }
                        Some(ax) => {
                            let outer: usize = in_shape[..*ax].iter().product();
                            let len = in_shape[*ax];
                            let inner: usize = in_shape[*ax + 1..].iter().product();
                            let scale = if mean { 1.0 / len as f64 } else { 1.0 };
                            for o in 0..outer {
                                for k in 0..len {
                                    for i2 in 0..inner {
                                        da[(o * len + k) * inner + i2] += g[o * inner + i2] * scale;
                                    }
                                }
                            }
                        }
                    }
                }
            }

            Op::GatherLabels(a, labels) => {
                if self.node(*a).track {
                    let k = self.shape(*a)[1];
                    let da = self.adj_slot(adj, *a);
                    for (i2, &y) in labels.iter().enumerate() {
                        da[i2 * k + y] += g[i2];
                    }
                }
            }

            Op::StackCols(inputs) => {
                let m = inputs.len();
                for (c, &id) in inputs.iter().enumerate() {
                    if self.node(id).track {
                        let di = self.adj_slot(adj, id);
                        for (i2, slot) in di.iter_mut().enumerate() {
                            *slot += g[i2 * m + c];
                        }
                    }
                }
            }

            Op::RowLogSumExp(a) => {
                if self.node(*a).track {
                    let m = self.shape(*a)[1];
                    let xs = &self.node(*a).data;
                    let out = &node.data;
                    let da = self.adj_slot(adj, *a);
                    for (r, gv) in g.iter().enumerate() {
                        for c in 0..m {
                            da[r * m + c] += gv * (xs[r * m + c] - out[r]).exp();
                        }
                    }
                }
            }

            Op::SliceCols(a, start, width) => {
                if self.node(*a).track {
                    let d = self.shape(*a)[1];
                    let n = self.shape(*a)[0];
                    let da = self.adj_slot(adj, *a);
                    for r in 0..n {
                        for c in 0..*width {
                            da[r * d + start + c] += g[r * width + c];
                        }
                    }
                }
            }

            Op::Scale(a, c) => {
                if self.node(*a).track {
                    let da = self.adj_slot(adj, *a);
                    for (j, gv) in g.iter().enumerate() {
                        da[j] += gv * c;
                    }
                }
            }
            Op::AddConst(a) => {
                if self.node(*a).track {
                    let da = self.adj_slot(adj, *a);
                    for (j, gv) in g.iter().enumerate() {
                        da[j] += gv;
                    }
                }
            }
            Op::ClampMin(a, lo) => {
                if self.node(*a).track {
                    let xs = &self.node(*a).data;
                    let da = self.adj_slot(adj, *a);
                    for (j, gv) in g.iter().enumerate() {
                        if xs[j] > *lo {
                            da[j] += gv;
                        }
                    }
                }
            }
        }
    }

    /// Mutable adjoint buffer for `id`, created zero-filled on first touch.
    #[allow(clippy::mut_from_ref)]
    fn adj_slot<'a>(&self, adj: &'a mut [Option<Vec<f64>>], id: TensorId) -> &'a mut Vec<f64> {
        adj[id.0].get_or_insert_with(|| vec![0.0; self.node(id).data.len()])
    }

    fn binary_backward(
        &self,
        adj: &mut [Option<Vec<f64>>],
        a: TensorId,
        b: TensorId,
        g: &[f64],
        partials: fn(f64, f64) -> (f64, f64),
    ) {
        let plan = BroadcastPlan::resolve(self.shape(a), self.shape(b))
            .expect("forward already validated this broadcast");
        let da_vals = &self.node(a).data;
        let db_vals = &self.node(b).data;
        let track_a = self.node(a).track;
        let track_b = self.node(b).track;
        if track_a {
            let buf = self.adj_slot(adj, a);
            for (i, gv) in g.iter().enumerate() {
                let (pa, _) = partials(da_vals[plan.index_a(i)], db_vals[plan.index_b(i)]);
                buf[plan.index_a(i)] += gv * pa;
            }
        }
        if track_b {
            let buf = self.adj_slot(adj, b);
            for (i, gv) in g.iter().enumerate() {
                let (_, pb) = partials(da_vals[plan.index_a(i)], db_vals[plan.index_b(i)]);
                buf[plan.index_b(i)] += gv * pb;
            }
        }
    }
}

/// How each operand of a binary op maps into the output index space.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Mapping {
    Full,
    Scalar,
    /// Row vector of width m against an n-by-m matrix.
    Row(usize),
}

struct BroadcastPlan {
    out_shape: Vec<usize>,
    out_numel: usize,
    map_a: Mapping,
    map_b: Mapping,
}

impl BroadcastPlan {
    fn resolve(sa: &[usize], sb: &[usize]) -> Result<Self> {
        let (na, nb) = (numel(sa), numel(sb));
        let row_of = |s: &[usize]| -> Option<usize> {
            match s {
                [m] => Some(*m),
                [1, m] => Some(*m),
                _ => None,
            }
        };
        let (out_shape, map_a, map_b) = if sa == sb {
            (sa.to_vec(), Mapping::Full, Mapping::Full)
        } else if nb == 1 {
            (sa.to_vec(), Mapping::Full, Mapping::Scalar)
        } else if na == 1 {
            (sb.to_vec(), Mapping::Scalar, Mapping::Full)
        } else if sa.len() == 2 && row_of(sb) == Some(sa[1]) {
            (sa.to_vec(), Mapping::Full, Mapping::Row(sa[1]))
        } else if sb.len() == 2 && row_of(sa) == Some(sb[1]) {
            (sb.to_vec(), Mapping::Row(sb[1]), Mapping::Full)
        } else {
            return Err(Error::Dimension(format!(
                "incompatible shapes for elementwise op: {sa:?} vs {sb:?}"
            )));
        };
        let out_numel = numel(&out_shape);
        Ok(BroadcastPlan { out_shape, out_numel, map_a, map_b })
    }

    #[inline]
    fn index_a(&self, i: usize) -> usize {
        Self::map(self.map_a, i)
    }

    #[inline]
    fn index_b(&self, i: usize) -> usize {
        Self::map(self.map_b, i)
    }

    #[inline]
    fn map(m: Mapping, i: usize) -> usize {
        match m {
            Mapping::Full => i,
            Mapping::Scalar => 0,
            Mapping::Row(w) => i % w,
        }
    }
}

// ---- gradient checking ----------------------------------------------------

/// One suspicious coordinate found by [`gradient_check`].
#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub param: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Outcome of a central-difference gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Maximum relative error per parameter block.
    pub per_param_max_rel_err: Vec<f64>,
    pub max_rel_err: f64,
    /// Base step size; each coordinate uses `step * max(1, |theta|)`.
    pub step: f64,
    pub tol: f64,
    pub pass: bool,
    pub worst: Option<GradCheckEntry>,
    /// Coordinates where the function evaluated to NaN; these force `pass = false`.
    pub nan_sites: Vec<GradCheckEntry>,
}

/// Compare reverse-mode gradients against central finite differences.
///
/// `build` must construct a scalar loss on the given tape from the supplied
/// parameter values and return the loss id plus the parameter leaf ids in the
/// same order as `params`; it must be deterministic. The relative error per
/// coordinate uses the denominator `max(|analytic|, |numeric|, 1e-12)`.
pub fn gradient_check<F>(build: F, params: &[Vec<f64>], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Vec<f64>]) -> Result<(TensorId, Vec<TensorId>)>,
{
    if h <= 0.0 {
        return Err(Error::Contract(format!("step size must be positive, got {h}")));
    }
    let mut tape = Tape::new();
    let (loss, ids) = build(&mut tape, params)?;
    if tape.numel(loss) != 1 {
        return Err(Error::Contract(format!(
            "gradient_check needs a scalar loss, got shape {:?}",
            tape.shape(loss)
        )));
    }
    if ids.len() != params.len() {
        return Err(Error::Contract(format!(
            "build returned {} parameter ids for {} parameter blocks",
            ids.len(),
            params.len()
        )));
    }
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .enumerate()
        .map(|(p, &id)| {
            tape.grad(id)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; params[p].len()])
        })
        .collect();

    let eval = |theta: &[Vec<f64>]| -> Result<f64> {
        let mut t = Tape::new();
        let (l, _) = build(&mut t, theta)?;
        t.scalar_value(l)
    };

    let mut per_param = vec![0.0f64; params.len()];
    let mut worst: Option<GradCheckEntry> = None;
    let mut nan_sites = Vec::new();
    let mut work: Vec<Vec<f64>> = params.to_vec();
    for (p, block) in params.iter().enumerate() {
        for c in 0..block.len() {
            let theta = block[c];
            let step = h * theta.abs().max(1.0);
            work[p][c] = theta + step;
            let fp = eval(&work)?;
            work[p][c] = theta - step;
            let fm = eval(&work)?;
            work[p][c] = theta;
            let numeric = (fp - fm) / (2.0 * step);
            let a = analytic[p][c];
            if !numeric.is_finite() || !a.is_finite() {
                nan_sites.push(GradCheckEntry {
                    param: p,
                    coord: c,
                    analytic: a,
                    numeric,
                    rel_err: f64::NAN,
                });
                continue;
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            if rel > per_param[p] {
                per_param[p] = rel;
            }
            if worst.as_ref().map_or(true, |w| rel > w.rel_err) {
                worst = Some(GradCheckEntry { param: p, coord: c, analytic: a, numeric, rel_err: rel });
            }
        }
    }
    let max_rel_err = per_param.iter().cloned().fold(0.0, f64::max);
    let pass = nan_sites.is_empty() && max_rel_err < tol;
    Ok(GradCheckReport {
        per_param_max_rel_err: per_param,
        max_rel_err,
        step: h,
        tol,
        pass,
        worst,
        nan_sites,
    })
}
