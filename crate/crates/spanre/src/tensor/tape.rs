//! The operation tape: forward evaluation with recorded backward rules.
//!
//! Ops are appended in execution order, so ids are already topologically
//! sorted; `backward` walks them once in reverse and accumulates gradients,
//! which makes reuse of a tensor in several ops sum up naturally.

use super::{Result, Tensor, TensorError};
use rand::Rng;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    grad: Vec<f64>,
    op: Op,
}

enum Op {
    Leaf,
    /// [m×k]·[k×n] → [m×n]
    MatMul { a: TensorId, b: TensorId },
    /// [m×n]·[n] → [m]
    MatVec { a: TensorId, x: TensorId },
    /// x:[T×d_in], kernel:[k×d_in×d_out], bias:[d_out] → [T×d_out], zero "same" padding
    Conv1dSame {
        x: TensorId,
        kernel: TensorId,
        bias: TensorId,
    },
    /// [T×d] → [d]; `argmax[c]` is the first maximal row of column c
    MaxOverTime { x: TensorId, argmax: Vec<usize> },
    /// componentwise max across equally-shaped branches; `which[i]` is the
    /// first branch attaining the max at flat index i
    EltMax {
        branches: Vec<TensorId>,
        which: Vec<usize>,
    },
    Sigmoid { x: TensorId },
    Tanh { x: TensorId },
    /// same-shape elementwise sum
    Add { a: TensorId, b: TensorId },
    /// same-shape elementwise product
    Mul { a: TensorId, b: TensorId },
    /// multiply by a compile-time constant
    ScalarMul { x: TensorId, c: f64 },
    /// broadcast a one-element tensor over every element of x
    AddScalar { x: TensorId, s: TensorId },
    /// add a length-d vector to every row of a [T×d] matrix
    AddRowVector { m: TensorId, v: TensorId },
    /// a:[m], b:[n] → [m×n] with out[i][j] = a[i] + b[j]
    OuterAdd { a: TensorId, b: TensorId },
    /// 1-D concatenation
    ConcatVec { parts: Vec<TensorId> },
    /// [T×d1] ++ [T×d2] → [T×(d1+d2)]
    ConcatCols { a: TensorId, b: TensorId },
    /// stack equal-length 1-D vectors into a matrix, row per input
    StackRows { rows: Vec<TensorId> },
    /// select rows of a 2-D tensor; repeated indices accumulate gradient
    GatherRows { src: TensorId, indices: Vec<usize> },
    /// copy row i of a 2-D tensor as a 1-D vector
    RowVec { x: TensorId, row: usize },
    /// contiguous slice of a 1-D vector
    SliceVec {
        x: TensorId,
        start: usize,
        len: usize,
    },
    Transpose { x: TensorId },
    Reshape { x: TensorId },
    /// sum over rows of a [T×d] tensor → [d]
    ColSum { x: TensorId },
    /// softmax over each row of a 2-D tensor
    RowSoftmax { x: TensorId },
    SumAll { x: TensorId },
    /// mask entries are 0 or 1/(1-p); identity in eval mode is not recorded
    Dropout { x: TensorId, mask: Vec<f64> },
    /// mean elementwise binary cross entropy from logits; targets are frozen
    BceWithLogits { logits: TensorId, targets: Vec<f64> },
}

/// Per-direction LSTM cell parameters bound on a tape.
///
/// `wx`:[4h×d_in], `wh`:[4h×h], `b`:[4h]; gate order input, forget,
/// candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights {
    pub wx: TensorId,
    pub wh: TensorId,
    pub b: TensorId,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn grad(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].grad
    }

    /// The single value of a one-element tensor.
    pub fn value(&self, id: TensorId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].data.len(), 1);
        self.nodes[id.0].data[0]
    }

    fn push(&mut self, op_name: &'static str, data: Vec<f64>, shape: Vec<usize>, op: Op) -> Result<TensorId> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let grad = vec![0.0; data.len()];
        self.nodes.push(Node { data, shape, grad, op });
        Ok(TensorId(self.nodes.len() - 1))
    }

    /// Records an input tensor with no backward rule.
    pub fn leaf(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<TensorId> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "leaf",
                detail: format!("shape {:?} wants {} values, got {}", shape, numel, data.len()),
            });
        }
        self.push("leaf", data, shape, Op::Leaf)
    }

    /// Binds a standalone [`Tensor`] onto the tape.
    pub fn bind(&mut self, t: &Tensor) -> Result<TensorId> {
        self.leaf(t.shape.clone(), t.data.clone())
    }

    pub fn scalar(&mut self, v: f64) -> Result<TensorId> {
        self.leaf(vec![1], vec![v])
    }

    // ---- linear algebra ------------------------------------------------

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                detail: format!("{:?} x {:?}", sa, sb),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        let (da, db) = (&self.nodes[a.0].data, &self.nodes[b.0].data);
        for i in 0..m {
            for p in 0..k {
                let av = da[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &db[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
        self.push("matmul", out, vec![m, n], Op::MatMul { a, b })
    }

    pub fn matvec(&mut self, a: TensorId, x: TensorId) -> Result<TensorId> {
        let (sa, sx) = (self.shape(a), self.shape(x));
        if sa.len() != 2 || sx.len() != 1 || sa[1] != sx[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matvec",
                detail: format!("{:?} x {:?}", sa, sx),
            });
        }
        let (m, n) = (sa[0], sa[1]);
        let (da, dx) = (&self.nodes[a.0].data, &self.nodes[x.0].data);
        let out: Vec<f64> = (0..m)
            .map(|i| (0..n).map(|j| da[i * n + j] * dx[j]).sum())
            .collect();
        self.push("matvec", out, vec![m], Op::MatVec { a, x })
    }

    pub fn transpose(&mut self, x: TensorId) -> Result<TensorId> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "transpose",
                detail: format!("{:?}", s),
            });
        }
        let (r, c) = (s[0], s[1]);
        let d = &self.nodes[x.0].data;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        self.push("transpose", out, vec![c, r], Op::Transpose { x })
    }

    pub fn reshape(&mut self, x: TensorId, shape: Vec<usize>) -> Result<TensorId> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[x.0].data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {:?}", self.shape(x), shape),
            });
        }
        let data = self.nodes[x.0].data.clone();
        self.push("reshape", data, shape, Op::Reshape { x })
    }

    // ---- convolution and pooling ----------------------------------------

    /// 1-D convolution over the time axis with zero "same" padding.
    ///
    /// Output length equals input length. For even `k` the extra pad element
    /// goes on the left: `pad_left = ceil((k-1)/2)`, `pad_right = floor((k-1)/2)`.
    pub fn conv1d_same(&mut self, x: TensorId, kernel: TensorId, bias: TensorId) -> Result<TensorId> {
        let (sx, sk, sb) = (self.shape(x), self.shape(kernel), self.shape(bias));
        if sx.len() != 2 || sk.len() != 3 || sb.len() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d_same",
                detail: format!("x {:?}, kernel {:?}, bias {:?}", sx, sk, sb),
            });
        }
        let (t, d_in) = (sx[0], sx[1]);
        let (k, kd_in, d_out) = (sk[0], sk[1], sk[2]);
        if d_in != kd_in || sb[0] != d_out {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d_same",
                detail: format!("x {:?}, kernel {:?}, bias {:?}", sx, sk, sb),
            });
        }
        if t == 0 || k == 0 {
            return Err(TensorError::EmptyInput { op: "conv1d_same" });
        }
        let pad_left = k / 2; // == ceil((k-1)/2)
        let dx = &self.nodes[x.0].data;
        let dk = &self.nodes[kernel.0].data;
        let db = &self.nodes[bias.0].data;
        let mut out = vec![0.0; t * d_out];
        for pos in 0..t {
            let orow = &mut out[pos * d_out..(pos + 1) * d_out];
            orow.copy_from_slice(db);
            for tap in 0..k {
                let src = pos as isize + tap as isize - pad_left as isize;
                if src < 0 || src >= t as isize {
                    continue;
                }
                let xrow = &dx[src as usize * d_in..(src as usize + 1) * d_in];
                let kslab = &dk[tap * d_in * d_out..(tap + 1) * d_in * d_out];
                for (i, &xv) in xrow.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let krow = &kslab[i * d_out..(i + 1) * d_out];
                    for o in 0..d_out {
                        orow[o] += xv * krow[o];
                    }
                }
            }
        }
        self.push("conv1d_same", out, vec![t, d_out], Op::Conv1dSame { x, kernel, bias })
    }

    /// Per-column maximum of a [T×d] tensor; ties go to the first row.
    pub fn max_over_time(&mut self, x: TensorId) -> Result<TensorId> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "max_over_time",
                detail: format!("{:?}", s),
            });
        }
        let (t, d) = (s[0], s[1]);
        if t == 0 {
            return Err(TensorError::EmptyInput { op: "max_over_time" });
        }
        let dx = &self.nodes[x.0].data;
        let mut out = vec![f64::NEG_INFINITY; d];
        let mut argmax = vec![0usize; d];
        for row in 0..t {
            for col in 0..d {
                let v = dx[row * d + col];
                if v > out[col] {
                    out[col] = v;
                    argmax[col] = row;
                }
            }
        }
        self.push("max_over_time", out, vec![d], Op::MaxOverTime { x, argmax })
    }

    /// Componentwise maximum across equally-shaped branches; ties go to the
    /// first branch.
    pub fn elementwise_max(&mut self, branches: &[TensorId]) -> Result<TensorId> {
        if branches.is_empty() {
            return Err(TensorError::EmptyInput { op: "elementwise_max" });
        }
        let shape = self.shape(branches[0]).to_vec();
        for &b in &branches[1..] {
            if self.shape(b) != shape.as_slice() {
                return Err(TensorError::ShapeMismatch {
                    op: "elementwise_max",
                    detail: format!("{:?} vs {:?}", shape, self.shape(b)),
                });
            }
        }
        let numel: usize = shape.iter().product();
        let mut out = vec![f64::NEG_INFINITY; numel];
        let mut which = vec![0usize; numel];
        for (bi, &b) in branches.iter().enumerate() {
            let d = &self.nodes[b.0].data;
            for i in 0..numel {
                if d[i] > out[i] {
                    out[i] = d[i];
                    which[i] = bi;
                }
            }
        }
        self.push(
            "elementwise_max",
            out,
            shape,
            Op::EltMax {
                branches: branches.to_vec(),
                which,
            },
        )
    }

    // ---- elementwise ----------------------------------------------------

    pub fn sigmoid(&mut self, x: TensorId) -> Result<TensorId> {
        let data: Vec<f64> = self.nodes[x.0].data.iter().map(|&v| sigmoid(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push("sigmoid", data, shape, Op::Sigmoid { x })
    }

    pub fn tanh(&mut self, x: TensorId) -> Result<TensorId> {
        let data: Vec<f64> = self.nodes[x.0].data.iter().map(|v| v.tanh()).collect();
        let shape = self.shape(x).to_vec();
        self.push("tanh", data, shape, Op::Tanh { x })
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                detail: format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            });
        }
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push("add", data, shape, Op::Add { a, b })
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                detail: format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            });
        }
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        self.push("mul", data, shape, Op::Mul { a, b })
    }

    pub fn scalar_mul(&mut self, x: TensorId, c: f64) -> Result<TensorId> {
        let data: Vec<f64> = self.nodes[x.0].data.iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push("scalar_mul", data, shape, Op::ScalarMul { x, c })
    }

    /// Broadcast of a one-element tensor over every element of `x`.
    pub fn add_scalar(&mut self, x: TensorId, s: TensorId) -> Result<TensorId> {
        if self.nodes[s.0].data.len() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "add_scalar",
                detail: format!("scalar operand has shape {:?}", self.shape(s)),
            });
        }
        let sv = self.nodes[s.0].data[0];
        let data: Vec<f64> = self.nodes[x.0].data.iter().map(|v| v + sv).collect();
        let shape = self.shape(x).to_vec();
        self.push("add_scalar", data, shape, Op::AddScalar { x, s })
    }

    /// Adds a length-d vector to every row of a [T×d] matrix.
    pub fn add_row_vector(&mut self, m: TensorId, v: TensorId) -> Result<TensorId> {
        let (sm, sv) = (self.shape(m), self.shape(v));
        if sm.len() != 2 || sv.len() != 1 || sm[1] != sv[0] {
            return Err(TensorError::ShapeMismatch {
                op: "add_row_vector",
                detail: format!("{:?} + {:?}", sm, sv),
            });
        }
        let (t, d) = (sm[0], sm[1]);
        let dm = &self.nodes[m.0].data;
        let dv = &self.nodes[v.0].data;
        let mut data = vec![0.0; t * d];
        for row in 0..t {
            for col in 0..d {
                data[row * d + col] = dm[row * d + col] + dv[col];
            }
        }
        self.push("add_row_vector", data, vec![t, d], Op::AddRowVector { m, v })
    }

    /// out[i][j] = a[i] + b[j] for 1-D `a` and `b`.
    pub fn outer_add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 1 || sb.len() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "outer_add",
                detail: format!("{:?}, {:?}", sa, sb),
            });
        }
        let (m, n) = (sa[0], sb[0]);
        let da = &self.nodes[a.0].data;
        let db = &self.nodes[b.0].data;
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] = da[i] + db[j];
            }
        }
        self.push("outer_add", data, vec![m, n], Op::OuterAdd { a, b })
    }

    // ---- shaping ---------------------------------------------------------

    pub fn concat_vec(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(TensorError::EmptyInput { op: "concat_vec" });
        }
        let mut data = Vec::new();
        for &p in parts {
            if self.shape(p).len() != 1 {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_vec",
                    detail: format!("part has shape {:?}", self.shape(p)),
                });
            }
            data.extend_from_slice(&self.nodes[p.0].data);
        }
        let len = data.len();
        self.push("concat_vec", data, vec![len], Op::ConcatVec { parts: parts.to_vec() })
    }

    pub fn concat_cols(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "concat_cols",
                detail: format!("{:?} ++ {:?}", sa, sb),
            });
        }
        let (t, da, db) = (sa[0], sa[1], sb[1]);
        let xa = &self.nodes[a.0].data;
        let xb = &self.nodes[b.0].data;
        let mut data = Vec::with_capacity(t * (da + db));
        for row in 0..t {
            data.extend_from_slice(&xa[row * da..(row + 1) * da]);
            data.extend_from_slice(&xb[row * db..(row + 1) * db]);
        }
        self.push("concat_cols", data, vec![t, da + db], Op::ConcatCols { a, b })
    }

    /// Stacks equal-length 1-D vectors into a [rows×d] matrix.
    pub fn stack_rows(&mut self, rows: &[TensorId]) -> Result<TensorId> {
        if rows.is_empty() {
            return Err(TensorError::EmptyInput { op: "stack_rows" });
        }
        let d = self.shape(rows[0]).to_vec();
        if d.len() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "stack_rows",
                detail: format!("row has shape {:?}", d),
            });
        }
        let mut data = Vec::with_capacity(rows.len() * d[0]);
        for &r in rows {
            if self.shape(r) != d.as_slice() {
                return Err(TensorError::ShapeMismatch {
                    op: "stack_rows",
                    detail: format!("{:?} vs {:?}", d, self.shape(r)),
                });
            }
            data.extend_from_slice(&self.nodes[r.0].data);
        }
        self.push(
            "stack_rows",
            data,
            vec![rows.len(), d[0]],
            Op::StackRows { rows: rows.to_vec() },
        )
    }

    /// Selects rows of a 2-D tensor. Repeated indices are allowed and their
    /// gradients accumulate into the same source row.
    pub fn gather_rows(&mut self, src: TensorId, indices: &[usize]) -> Result<TensorId> {
        let s = self.shape(src);
        if s.len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "gather_rows",
                detail: format!("{:?}", s),
            });
        }
        let (rows, d) = (s[0], s[1]);
        if indices.is_empty() {
            return Err(TensorError::EmptyInput { op: "gather_rows" });
        }
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    size: rows,
                });
            }
            data.extend_from_slice(&self.nodes[src.0].data[i * d..(i + 1) * d]);
        }
        self.push(
            "gather_rows",
            data,
            vec![indices.len(), d],
            Op::GatherRows {
                src,
                indices: indices.to_vec(),
            },
        )
    }

    /// Copies row `row` of a 2-D tensor as a 1-D vector.
    pub fn row_vec(&mut self, x: TensorId, row: usize) -> Result<TensorId> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "row_vec",
                detail: format!("{:?}", s),
            });
        }
        if row >= s[0] {
            return Err(TensorError::IndexOutOfRange {
                op: "row_vec",
                index: row,
                size: s[0],
            });
        }
        let d = s[1];
        let data = self.nodes[x.0].data[row * d..(row + 1) * d].to_vec();
        self.push("row_vec", data, vec![d], Op::RowVec { x, row })
    }

    pub fn slice_vec(&mut self, x: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let s = self.shape(x);
        if s.len() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "slice_vec",
                detail: format!("{:?}", s),
            });
        }
        if start + len > s[0] {
            return Err(TensorError::IndexOutOfRange {
                op: "slice_vec",
                index: start + len,
                size: s[0],
            });
        }
        let data = self.nodes[x.0].data[start..start + len].to_vec();
        self.push("slice_vec", data, vec![len], Op::SliceVec { x, start, len })
    }

    // ---- normalization, regularization, loss ------------------------------

    /// Numerically stable softmax over each row of a 2-D tensor.
    pub fn row_softmax(&mut self, x: TensorId) -> Result<TensorId> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "row_softmax",
                detail: format!("{:?}", s),
            });
        }
        let (t, d) = (s[0], s[1]);
        if d == 0 {
            return Err(TensorError::EmptyInput { op: "row_softmax" });
        }
        let dx = &self.nodes[x.0].data;
        let mut data = vec![0.0; t * d];
        for row in 0..t {
            let r = &dx[row * d..(row + 1) * d];
            let mx = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (j, &v) in r.iter().enumerate() {
                let e = (v - mx).exp();
                data[row * d + j] = e;
                sum += e;
            }
            for j in 0..d {
                data[row * d + j] /= sum;
            }
        }
        self.push("row_softmax", data, vec![t, d], Op::RowSoftmax { x })
    }

    /// Column sums of a 2-D tensor.
    pub fn col_sum(&mut self, x: TensorId) -> Result<TensorId> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "col_sum",
                detail: format!("{:?}", s),
            });
        }
        let (t, d) = (s[0], s[1]);
        let dx = &self.nodes[x.0].data;
        let mut out = vec![0.0; d];
        for row in 0..t {
            for col in 0..d {
                out[col] += dx[row * d + col];
            }
        }
        self.push("col_sum", out, vec![d], Op::ColSum { x })
    }

    pub fn sum_all(&mut self, x: TensorId) -> Result<TensorId> {
        let s: f64 = self.nodes[x.0].data.iter().sum();
        self.push("sum_all", vec![s], vec![1], Op::SumAll { x })
    }

    /// Inverted dropout: zero with probability p, scale survivors by 1/(1-p).
    /// In eval mode this is the exact identity.
    pub fn dropout(&mut self, x: TensorId, p: f64, train: bool, rng: &mut impl Rng) -> Result<TensorId> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidConfig(format!(
                "dropout probability {} outside [0, 1)",
                p
            )));
        }
        if !train || p == 0.0 {
            let data = self.nodes[x.0].data.clone();
            let shape = self.shape(x).to_vec();
            // identity mask keeps one backward rule for both modes
            let mask = vec![1.0; data.len()];
            return self.push("dropout", data, shape, Op::Dropout { x, mask });
        }
        let keep = 1.0 - p;
        let scale = 1.0 / keep;
        let mask: Vec<f64> = (0..self.nodes[x.0].data.len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { scale })
            .collect();
        let data: Vec<f64> = self.nodes[x.0]
            .data
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let shape = self.shape(x).to_vec();
        self.push("dropout", data, shape, Op::Dropout { x, mask })
    }

    /// Mean binary cross entropy computed from logits in log-sum-exp form:
    /// per element, max(z,0) - z*t + ln(1 + exp(-|z|)).
    pub fn bce_with_logits(&mut self, logits: TensorId, targets: &[f64]) -> Result<TensorId> {
        let n = self.nodes[logits.0].data.len();
        if n != targets.len() {
            return Err(TensorError::ShapeMismatch {
                op: "bce_with_logits",
                detail: format!("{} logits vs {} targets", n, targets.len()),
            });
        }
        if n == 0 {
            return Err(TensorError::EmptyInput { op: "bce_with_logits" });
        }
        for &t in targets {
            if t != 0.0 && t != 1.0 {
                return Err(TensorError::NonBinaryTarget(t));
            }
        }
        let mut total = 0.0;
        for (&z, &t) in self.nodes[logits.0].data.iter().zip(targets) {
            total += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
        }
        let loss = total / n as f64;
        self.push(
            "bce_with_logits",
            vec![loss],
            vec![1],
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
        )
    }

    /// One LSTM step built from tape primitives: standard input/forget/output
    /// gates plus tanh candidate.
    pub fn lstm_cell(
        &mut self,
        x: TensorId,
        h_prev: TensorId,
        c_prev: TensorId,
        w: LstmWeights,
    ) -> Result<(TensorId, TensorId)> {
        let h = self.shape(h_prev).first().copied().unwrap_or(0);
        let sx = self.shape(w.wx).to_vec();
        if sx.len() != 2 || sx[0] != 4 * h {
            return Err(TensorError::ShapeMismatch {
                op: "lstm_cell",
                detail: format!("wx {:?} vs hidden {}", sx, h),
            });
        }
        let gx = self.matvec(w.wx, x)?;
        let gh = self.matvec(w.wh, h_prev)?;
        let pre = self.add(gx, gh)?;
        let pre = self.add(pre, w.b)?;
        let i_gate = self.slice_vec(pre, 0, h)?;
        let f_gate = self.slice_vec(pre, h, h)?;
        let g_cand = self.slice_vec(pre, 2 * h, h)?;
        let o_gate = self.slice_vec(pre, 3 * h, h)?;
        let i_gate = self.sigmoid(i_gate)?;
        let f_gate = self.sigmoid(f_gate)?;
        let g_cand = self.tanh(g_cand)?;
        let o_gate = self.sigmoid(o_gate)?;
        let keep = self.mul(f_gate, c_prev)?;
        let write = self.mul(i_gate, g_cand)?;
        let c = self.add(keep, write)?;
        let c_act = self.tanh(c)?;
        let h_out = self.mul(o_gate, c_act)?;
        Ok((h_out, c))
    }

    // ---- backward ---------------------------------------------------------

    /// Fills gradients for everything reachable from the scalar `loss`.
    /// Gradients accumulate across multiple uses of a tensor.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.nodes[loss.0].grad[0] += 1.0;
        for i in (0..self.nodes.len()).rev() {
            if self.nodes[i].grad.iter().all(|&g| g == 0.0) {
                continue;
            }
            let grad = std::mem::take(&mut self.nodes[i].grad);
            self.step_back(i, &grad);
            self.nodes[i].grad = grad;
        }
        Ok(())
    }

    fn step_back(&mut self, i: usize, grad: &[f64]) {
        // Split borrows: read inputs and the node's own data immutably while
        // writing into (strictly earlier) input gradients.
        macro_rules! add_into {
            ($id:expr, $vals:expr) => {{
                let g = &mut self.nodes[$id.0].grad;
                for (a, b) in g.iter_mut().zip($vals) {
                    *a += b;
                }
            }};
        }
        // Extract what the match arms need before mutating.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = self.nodes[b.0].shape[1];
                let da = &self.nodes[a.0].data;
                let db = &self.nodes[b.0].data;
                // dA = dC · Bᵀ
                let mut ga = vec![0.0; m * k];
                for i2 in 0..m {
                    for j in 0..n {
                        let g = grad[i2 * n + j];
                        if g == 0.0 {
                            continue;
                        }
                        for p in 0..k {
                            ga[i2 * k + p] += g * db[p * n + j];
                        }
                    }
                }
                // dB = Aᵀ · dC
                let mut gb = vec![0.0; k * n];
                for i2 in 0..m {
                    for p in 0..k {
                        let av = da[i2 * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            gb[p * n + j] += av * grad[i2 * n + j];
                        }
                    }
                }
                add_into!(a, &ga);
                add_into!(b, &gb);
            }
            Op::MatVec { a, x } => {
                let (m, n) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let da = &self.nodes[a.0].data;
                let dx = &self.nodes[x.0].data;
                let mut ga = vec![0.0; m * n];
                let mut gx = vec![0.0; n];
                for i2 in 0..m {
                    let g = grad[i2];
                    if g == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        ga[i2 * n + j] += g * dx[j];
                        gx[j] += g * da[i2 * n + j];
                    }
                }
                add_into!(a, &ga);
                add_into!(x, &gx);
            }
            Op::Conv1dSame { x, kernel, bias } => {
                let (t, d_in) = (self.nodes[x.0].shape[0], self.nodes[x.0].shape[1]);
                let (k, d_out) = (self.nodes[kernel.0].shape[0], self.nodes[kernel.0].shape[2]);
                let pad_left = k / 2;
                let dx = &self.nodes[x.0].data;
                let dk = &self.nodes[kernel.0].data;
                let mut gx = vec![0.0; t * d_in];
                let mut gk = vec![0.0; k * d_in * d_out];
                let mut gb = vec![0.0; d_out];
                for pos in 0..t {
                    let grow = &grad[pos * d_out..(pos + 1) * d_out];
                    for o in 0..d_out {
                        gb[o] += grow[o];
                    }
                    for tap in 0..k {
                        let src = pos as isize + tap as isize - pad_left as isize;
                        if src < 0 || src >= t as isize {
                            continue;
                        }
                        let src = src as usize;
                        for di in 0..d_in {
                            let xv = dx[src * d_in + di];
                            let kbase = tap * d_in * d_out + di * d_out;
                            let mut gx_acc = 0.0;
                            for o in 0..d_out {
                                gk[kbase + o] += grow[o] * xv;
                                gx_acc += grow[o] * dk[kbase + o];
                            }
                            gx[src * d_in + di] += gx_acc;
                        }
                    }
                }
                add_into!(x, &gx);
                add_into!(kernel, &gk);
                add_into!(bias, &gb);
            }
            Op::MaxOverTime { x, argmax } => {
                let d = self.nodes[x.0].shape[1];
                let mut gx = vec![0.0; self.nodes[x.0].data.len()];
                for (col, &row) in argmax.iter().enumerate() {
                    gx[row * d + col] = grad[col];
                }
                add_into!(x, &gx);
            }
            Op::EltMax { branches, which } => {
                for (bi, &b) in branches.iter().enumerate() {
                    let mut gb = vec![0.0; grad.len()];
                    let mut any = false;
                    for (i2, &w) in which.iter().enumerate() {
                        if w == bi {
                            gb[i2] = grad[i2];
                            any = true;
                        }
                    }
                    if any {
                        add_into!(b, &gb);
                    }
                }
            }
            Op::Sigmoid { x } => {
                let out = &self.nodes[i].data;
                let gx: Vec<f64> = grad.iter().zip(out).map(|(g, &s)| g * s * (1.0 - s)).collect();
                add_into!(x, &gx);
            }
            Op::Tanh { x } => {
                let out = &self.nodes[i].data;
                let gx: Vec<f64> = grad.iter().zip(out).map(|(g, &t)| g * (1.0 - t * t)).collect();
                add_into!(x, &gx);
            }
            Op::Add { a, b } => {
                add_into!(a, grad);
                add_into!(b, grad);
            }
            Op::Mul { a, b } => {
                let da = self.nodes[a.0].data.clone();
                let db = &self.nodes[b.0].data;
                let ga: Vec<f64> = grad.iter().zip(db).map(|(g, y)| g * y).collect();
                let gb: Vec<f64> = grad.iter().zip(&da).map(|(g, x2)| g * x2).collect();
                add_into!(a, &ga);
                add_into!(b, &gb);
            }
            Op::ScalarMul { x, c } => {
                let gx: Vec<f64> = grad.iter().map(|g| g * c).collect();
                add_into!(x, &gx);
            }
            Op::AddScalar { x, s } => {
                add_into!(x, grad);
                let gs: f64 = grad.iter().sum();
                self.nodes[s.0].grad[0] += gs;
            }
            Op::AddRowVector { m, v } => {
                let d = self.nodes[v.0].data.len();
                add_into!(m, grad);
                let mut gv = vec![0.0; d];
                for (i2, g) in grad.iter().enumerate() {
                    gv[i2 % d] += g;
                }
                add_into!(v, &gv);
            }
            Op::OuterAdd { a, b } => {
                let m = self.nodes[a.0].data.len();
                let n = self.nodes[b.0].data.len();
                let mut ga = vec![0.0; m];
                let mut gb = vec![0.0; n];
                for i2 in 0..m {
                    for j in 0..n {
                        let g = grad[i2 * n + j];
                        ga[i2] += g;
                        gb[j] += g;
                    }
                }
                add_into!(a, &ga);
                add_into!(b, &gb);
            }
            Op::ConcatVec { parts } => {
                let mut off = 0;
                for &p in parts {
                    let len = self.nodes[p.0].data.len();
                    let gp = &grad[off..off + len];
                    add_into!(p, gp);
                    off += len;
                }
            }
            Op::ConcatCols { a, b } => {
                let (t, da) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let db = self.nodes[b.0].shape[1];
                let mut ga = vec![0.0; t * da];
                let mut gb = vec![0.0; t * db];
                for row in 0..t {
                    let base = row * (da + db);
                    ga[row * da..(row + 1) * da].copy_from_slice(&grad[base..base + da]);
                    gb[row * db..(row + 1) * db].copy_from_slice(&grad[base + da..base + da + db]);
                }
                add_into!(a, &ga);
                add_into!(b, &gb);
            }
            Op::StackRows { rows } => {
                let d = self.nodes[rows[0].0].data.len();
                for (r, &id) in rows.iter().enumerate() {
                    let gr = &grad[r * d..(r + 1) * d];
                    add_into!(id, gr);
                }
            }
            Op::GatherRows { src, indices } => {
                let d = self.nodes[src.0].shape[1];
                let mut gs = vec![0.0; self.nodes[src.0].data.len()];
                for (r, &idx) in indices.iter().enumerate() {
                    for c in 0..d {
                        gs[idx * d + c] += grad[r * d + c];
                    }
                }
                add_into!(src, &gs);
            }
            Op::RowVec { x, row } => {
                let d = self.nodes[x.0].shape[1];
                let mut gx = vec![0.0; self.nodes[x.0].data.len()];
                gx[row * d..(row + 1) * d].copy_from_slice(grad);
                add_into!(x, &gx);
            }
            Op::SliceVec { x, start, len } => {
                let mut gx = vec![0.0; self.nodes[x.0].data.len()];
                gx[*start..start + len].copy_from_slice(grad);
                add_into!(x, &gx);
            }
            Op::Transpose { x } => {
                let (r, c) = (self.nodes[x.0].shape[0], self.nodes[x.0].shape[1]);
                let mut gx = vec![0.0; r * c];
                for i2 in 0..r {
                    for j in 0..c {
                        gx[i2 * c + j] = grad[j * r + i2];
                    }
                }
                add_into!(x, &gx);
            }
            Op::Reshape { x } => {
                add_into!(x, grad);
            }
            Op::ColSum { x } => {
                let d = self.nodes[x.0].shape[1];
                let rows = self.nodes[x.0].shape[0];
                let mut gx = vec![0.0; rows * d];
                for row in 0..rows {
                    gx[row * d..(row + 1) * d].copy_from_slice(grad);
                }
                add_into!(x, &gx);
            }
            Op::RowSoftmax { x } => {
                // dz_j = s_j * (g_j - Σ_k g_k s_k) per row
                let (t, d) = (self.nodes[i].shape[0], self.nodes[i].shape[1]);
                let out = &self.nodes[i].data;
                let mut gx = vec![0.0; t * d];
                for row in 0..t {
                    let s = &out[row * d..(row + 1) * d];
                    let g = &grad[row * d..(row + 1) * d];
                    let dot: f64 = s.iter().zip(g).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        gx[row * d + j] = s[j] * (g[j] - dot);
                    }
                }
                add_into!(x, &gx);
            }
            Op::SumAll { x } => {
                let g = grad[0];
                let gx = vec![g; self.nodes[x.0].data.len()];
                add_into!(x, &gx);
            }
            Op::Dropout { x, mask } => {
                let gx: Vec<f64> = grad.iter().zip(mask).map(|(g, m)| g * m).collect();
                add_into!(x, &gx);
            }
            Op::BceWithLogits { logits, targets } => {
                let n = targets.len() as f64;
                let g = grad[0] / n;
                let gz: Vec<f64> = self.nodes[logits.0]
                    .data
                    .iter()
                    .zip(targets)
                    .map(|(&z, &t)| g * (sigmoid(z) - t))
                    .collect();
                add_into!(logits, &gz);
            }
        }
        self.nodes[i].op = op;
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
