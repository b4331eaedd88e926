use crate::error::TensorError;
use crate::tensor::Tensor;
use crate::Result;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    // Only the scale matters for the reverse pass; the shift is folded
    // into the forward value at creation time.
    Affine { x: NodeId, scale: f64 },
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    AddColVec { m: NodeId, v: NodeId },
    Sigmoid(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Softmax { x: NodeId, mode: SoftmaxMode },
    LogSoftmaxVec(NodeId),
    RowMax { m: NodeId, argmax: Vec<usize> },
    ColMax { m: NodeId, argmax: Vec<usize> },
    RowSum(NodeId),
    ColSum(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    Concat { parts: Vec<NodeId> },
    StackRows { rows: Vec<NodeId> },
    Row { m: NodeId, index: usize },
    Select { v: NodeId, index: usize },
    ScalarMul { s: NodeId, x: NodeId },
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
    },
    FlattenMap(NodeId),
    ReshapeVec(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum SoftmaxMode {
    Vector,
    Rows,
    Cols,
}

struct Node {
    op: Op,
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
}

/// Eagerly evaluated computation tape. Ops validate shapes, compute their
/// forward value immediately and record themselves for the reverse pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    /// Trainable leaf; `backward` populates its gradient.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        debug_assert!(value.all_finite(), "non-finite value entering the tape");
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            value,
            grad: None,
            requires_grad,
        });
        id
    }

    fn needs_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    // ── elementwise ─────────────────────────────────────────────────

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(Op::Add(a, b), value, self.needs_grad(&[a, b])))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(Op::Sub(a, b), value, self.needs_grad(&[a, b])))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(Op::Mul(a, b), value, self.needs_grad(&[a, b])))
    }

    /// Elementwise `scale * x + shift` with compile-time constants.
    pub fn affine(&mut self, x: NodeId, scale: f64, shift: f64) -> NodeId {
        let data: Vec<f64> = self.value(x).data().iter().map(|v| scale * v + shift).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).expect("shape preserved");
        let rg = self.needs_grad(&[x]);
        self.push(Op::Affine { x, scale }, value, rg)
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        self.affine(x, -1.0, 0.0)
    }

    // ── linear algebra ──────────────────────────────────────────────

    /// Matrix/vector product over rank-1 and rank-2 operands:
    /// `[m,k]·[k,n] -> [m,n]`, `[m,k]·[k] -> [m]`, `[k]·[k,n] -> [n]`,
    /// `[k]·[k] -> scalar`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: va.shape().to_vec(),
            rhs: vb.shape().to_vec(),
        };
        let value = match (va.rank(), vb.rank()) {
            (2, 2) => {
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let (k2, n) = (vb.shape()[0], vb.shape()[1]);
                if k != k2 {
                    return Err(mismatch());
                }
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    for p in 0..k {
                        let av = va.data()[i * k + p];
                        for j in 0..n {
                            out[i * n + j] += av * vb.data()[p * n + j];
                        }
                    }
                }
                Tensor::new(vec![m, n], out)?
            }
            (2, 1) => {
                let (m, k) = (va.shape()[0], va.shape()[1]);
                if k != vb.shape()[0] {
                    return Err(mismatch());
                }
                let mut out = vec![0.0; m];
                for i in 0..m {
                    let mut acc = 0.0;
                    for p in 0..k {
                        acc += va.data()[i * k + p] * vb.data()[p];
                    }
                    out[i] = acc;
                }
                Tensor::vector(out)
            }
            (1, 2) => {
                let k = va.shape()[0];
                let (k2, n) = (vb.shape()[0], vb.shape()[1]);
                if k != k2 {
                    return Err(mismatch());
                }
                let mut out = vec![0.0; n];
                for p in 0..k {
                    let av = va.data()[p];
                    for j in 0..n {
                        out[j] += av * vb.data()[p * n + j];
                    }
                }
                Tensor::vector(out)
            }
            (1, 1) => {
                if va.shape() != vb.shape() {
                    return Err(mismatch());
                }
                let dot: f64 = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).sum();
                Tensor::scalar(dot)
            }
            _ => return Err(mismatch()),
        };
        Ok(self.push(Op::MatMul(a, b), value, self.needs_grad(&[a, b])))
    }

    pub fn transpose(&mut self, m: NodeId) -> Result<NodeId> {
        let vm = self.value(m);
        if vm.rank() != 2 {
            return Err(TensorError::UnsupportedShape {
                op: "transpose",
                shape: vm.shape().to_vec(),
            });
        }
        let (r, c) = (vm.shape()[0], vm.shape()[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = vm.data()[i * c + j];
            }
        }
        let value = Tensor::new(vec![c, r], out)?;
        Ok(self.push(Op::Transpose(m), value, self.needs_grad(&[m])))
    }

    /// Adds a vector to every column of a matrix: `out[i][j] = m[i][j] + v[i]`.
    pub fn add_col_vec(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        let (vm, vv) = (self.value(m), self.value(v));
        if vm.rank() != 2 || vv.rank() != 1 || vm.shape()[0] != vv.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "add_col_vec",
                lhs: vm.shape().to_vec(),
                rhs: vv.shape().to_vec(),
            });
        }
        let (r, c) = (vm.shape()[0], vm.shape()[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] = vm.data()[i * c + j] + vv.data()[i];
            }
        }
        let value = Tensor::new(vec![r, c], out)?;
        Ok(self.push(Op::AddColVec { m, v }, value, self.needs_grad(&[m, v])))
    }

    // ── nonlinearities ──────────────────────────────────────────────

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let data: Vec<f64> = self
            .value(x)
            .data()
            .iter()
            .map(|&v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).expect("shape preserved");
        let rg = self.needs_grad(&[x]);
        self.push(Op::Sigmoid(x), value, rg)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let data: Vec<f64> = self.value(x).data().iter().map(|v| v.tanh()).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).expect("shape preserved");
        let rg = self.needs_grad(&[x]);
        self.push(Op::Tanh(x), value, rg)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let data: Vec<f64> = self.value(x).data().iter().map(|v| v.exp()).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).expect("shape preserved");
        let rg = self.needs_grad(&[x]);
        self.push(Op::Exp(x), value, rg)
    }

    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        for &v in self.value(x).data() {
            if v <= 0.0 {
                return Err(TensorError::DomainError {
                    op: "log",
                    value: v,
                    domain: "(0, inf)",
                });
            }
        }
        let data: Vec<f64> = self.value(x).data().iter().map(|v| v.ln()).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data)?;
        let rg = self.needs_grad(&[x]);
        Ok(self.push(Op::Log(x), value, rg))
    }

    // ── softmax family ──────────────────────────────────────────────

    fn softmax_groups(data: &[f64], group: usize, stride: usize, count: usize) -> Vec<f64> {
        // `count` groups of `group` elements spaced `stride` apart.
        let mut out = vec![0.0; data.len()];
        for g in 0..count {
            let base = if stride == 1 { g * group } else { g };
            let idx = |k: usize| {
                if stride == 1 {
                    base + k
                } else {
                    base + k * stride
                }
            };
            let mut max = f64::NEG_INFINITY;
            for k in 0..group {
                max = max.max(data[idx(k)]);
            }
            let mut denom = 0.0;
            for k in 0..group {
                denom += (data[idx(k)] - max).exp();
            }
            for k in 0..group {
                out[idx(k)] = (data[idx(k)] - max).exp() / denom;
            }
        }
        out
    }

    pub fn softmax_vec(&mut self, x: NodeId) -> Result<NodeId> {
        let vx = self.value(x);
        if vx.rank() != 1 {
            return Err(TensorError::UnsupportedShape {
                op: "softmax_vec",
                shape: vx.shape().to_vec(),
            });
        }
        let n = vx.shape()[0];
        let out = Self::softmax_groups(vx.data(), n, 1, 1);
        let value = Tensor::vector(out);
        let rg = self.needs_grad(&[x]);
        Ok(self.push(
            Op::Softmax {
                x,
                mode: SoftmaxMode::Vector,
            },
            value,
            rg,
        ))
    }

    /// Softmax across each row of a matrix.
    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let vx = self.value(x);
        if vx.rank() != 2 {
            return Err(TensorError::UnsupportedShape {
                op: "softmax_rows",
                shape: vx.shape().to_vec(),
            });
        }
        let (r, c) = (vx.shape()[0], vx.shape()[1]);
        let out = Self::softmax_groups(vx.data(), c, 1, r);
        let value = Tensor::new(vec![r, c], out)?;
        let rg = self.needs_grad(&[x]);
        Ok(self.push(
            Op::Softmax {
                x,
                mode: SoftmaxMode::Rows,
            },
            value,
            rg,
        ))
    }

    /// Softmax down each column of a matrix.
    pub fn softmax_cols(&mut self, x: NodeId) -> Result<NodeId> {
        let vx = self.value(x);
        if vx.rank() != 2 {
            return Err(TensorError::UnsupportedShape {
                op: "softmax_cols",
                shape: vx.shape().to_vec(),
            });
        }
        let (r, c) = (vx.shape()[0], vx.shape()[1]);
        let out = Self::softmax_groups(vx.data(), r, c, c);
        let value = Tensor::new(vec![r, c], out)?;
        let rg = self.needs_grad(&[x]);
        Ok(self.push(
            Op::Softmax {
                x,
                mode: SoftmaxMode::Cols,
            },
            value,
            rg,
        ))
    }

    /// Numerically stable `log(softmax(x))` for a vector.
    pub fn log_softmax_vec(&mut self, x: NodeId) -> Result<NodeId> {
        let vx = self.value(x);
        if vx.rank() != 1 {
            return Err(TensorError::UnsupportedShape {
                op: "log_softmax_vec",
                shape: vx.shape().to_vec(),
            });
        }
        let max = vx.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max
            + vx.data()
                .iter()
                .map(|v| (v - max).exp())
                .sum::<f64>()
                .ln();
        let out: Vec<f64> = vx.data().iter().map(|v| v - lse).collect();
        let value = Tensor::vector(out);
        let rg = self.needs_grad(&[x]);
        Ok(self.push(Op::LogSoftmaxVec(x), value, rg))
    }

    // ── reductions ──────────────────────────────────────────────────

    /// Maximum over each row: `[r,c] -> [r]`. Ties resolve to the first index.
    pub fn row_max(&mut self, m: NodeId) -> Result<NodeId> {
        let vm = self.value(m);
        if vm.rank() != 2 {
            return Err(TensorError::UnsupportedShape {
                op: "row_max",
                shape: vm.shape().to_vec(),
            });
        }
        let (r, c) = (vm.shape()[0], vm.shape()[1]);
        let mut out = vec![0.0; r];
        let mut argmax = vec![0usize; r];
        for i in 0..r {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for j in 0..c {
                let v = vm.data()[i * c + j];
                if v > best {
                    best = v;
                    arg = j;
                }
            }
            out[i] = best;
            argmax[i] = arg;
        }
        let value = Tensor::vector(out);
        let rg = self.needs_grad(&[m]);
        Ok(self.push(Op::RowMax { m, argmax }, value, rg))
    }

    /// Maximum over each column: `[r,c] -> [c]`.
    pub fn col_max(&mut self, m: NodeId) -> Result<NodeId> {
        let vm = self.value(m);
        if vm.rank() != 2 {
            return Err(TensorError::UnsupportedShape {
                op: "col_max",
                shape: vm.shape().to_vec(),
            });
        }
        let (r, c) = (vm.shape()[0], vm.shape()[1]);
        let mut out = vec![f64::NEG_INFINITY; c];
        let mut argmax = vec![0usize; c];
        for i in 0..r {
            for j in 0..c {
                let v = vm.data()[i * c + j];
                if v > out[j] {
                    out[j] = v;
                    argmax[j] = i;
                }
            }
        }
        let value = Tensor::vector(out);
        let rg = self.needs_grad(&[m]);
        Ok(self.push(Op::ColMax { m, argmax }, value, rg))
    }

    pub fn row_sum(&mut self, m: NodeId) -> Result<NodeId> {
        let vm = self.value(m);
        if vm.rank() != 2 {
            return Err(TensorError::UnsupportedShape {
                op: "row_sum",
                shape: vm.shape().to_vec(),
            });
        }
        let (r, c) = (vm.shape()[0], vm.shape()[1]);
        let mut out = vec![0.0; r];
        for i in 0..r {
            for j in 0..c {
                out[i] += vm.data()[i * c + j];
            }
        }
        let value = Tensor::vector(out);
        let rg = self.needs_grad(&[m]);
        Ok(self.push(Op::RowSum(m), value, rg))
    }

    pub fn col_sum(&mut self, m: NodeId) -> Result<NodeId> {
        let vm = self.value(m);
        if vm.rank() != 2 {
            return Err(TensorError::UnsupportedShape {
                op: "col_sum",
                shape: vm.shape().to_vec(),
            });
        }
        let (r, c) = (vm.shape()[0], vm.shape()[1]);
        let mut out = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                out[j] += vm.data()[i * c + j];
            }
        }
        let value = Tensor::vector(out);
        let rg = self.needs_grad(&[m]);
        Ok(self.push(Op::ColSum(m), value, rg))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let total: f64 = self.value(x).data().iter().sum();
        let rg = self.needs_grad(&[x]);
        self.push(Op::SumAll(x), Tensor::scalar(total), rg)
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).numel() as f64;
        let total: f64 = self.value(x).data().iter().sum();
        let rg = self.needs_grad(&[x]);
        self.push(Op::MeanAll(x), Tensor::scalar(total / n), rg)
    }

    // ── structure ───────────────────────────────────────────────────

    /// Concatenates rank-1 tensors end to end.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(TensorError::UnsupportedShape {
                op: "concat",
                shape: vec![],
            });
        }
        let mut data = Vec::new();
        for &p in parts {
            let vp = self.value(p);
            if vp.rank() != 1 {
                return Err(TensorError::UnsupportedShape {
                    op: "concat",
                    shape: vp.shape().to_vec(),
                });
            }
            data.extend_from_slice(vp.data());
        }
        let value = Tensor::vector(data);
        let rg = self.needs_grad(parts);
        Ok(self.push(
            Op::Concat {
                parts: parts.to_vec(),
            },
            value,
            rg,
        ))
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        if rows.is_empty() {
            return Err(TensorError::UnsupportedShape {
                op: "stack_rows",
                shape: vec![],
            });
        }
        let width = self.value(rows[0]).shape().to_vec();
        let mut data = Vec::new();
        for &r in rows {
            let vr = self.value(r);
            if vr.rank() != 1 || vr.shape() != width.as_slice() {
                return Err(TensorError::ShapeMismatch {
                    op: "stack_rows",
                    lhs: width,
                    rhs: vr.shape().to_vec(),
                });
            }
            data.extend_from_slice(vr.data());
        }
        let value = Tensor::new(vec![rows.len(), width[0]], data)?;
        let rg = self.needs_grad(rows);
        Ok(self.push(
            Op::StackRows {
                rows: rows.to_vec(),
            },
            value,
            rg,
        ))
    }

    /// Extracts row `index` of a matrix as a vector. Also serves as the
    /// embedding lookup: the gradient scatters back into that row only.
    pub fn row(&mut self, m: NodeId, index: usize) -> Result<NodeId> {
        let vm = self.value(m);
        if vm.rank() != 2 {
            return Err(TensorError::UnsupportedShape {
                op: "row",
                shape: vm.shape().to_vec(),
            });
        }
        let (r, c) = (vm.shape()[0], vm.shape()[1]);
        if index >= r {
            return Err(TensorError::IndexOutOfRange {
                op: "row",
                index,
                size: r,
            });
        }
        let data = vm.data()[index * c..(index + 1) * c].to_vec();
        let value = Tensor::vector(data);
        let rg = self.needs_grad(&[m]);
        Ok(self.push(Op::Row { m, index }, value, rg))
    }

    /// Extracts one element of a vector as a scalar.
    pub fn select(&mut self, v: NodeId, index: usize) -> Result<NodeId> {
        let vv = self.value(v);
        if vv.rank() != 1 {
            return Err(TensorError::UnsupportedShape {
                op: "select",
                shape: vv.shape().to_vec(),
            });
        }
        if index >= vv.shape()[0] {
            return Err(TensorError::IndexOutOfRange {
                op: "select",
                index,
                size: vv.shape()[0],
            });
        }
        let value = Tensor::scalar(vv.data()[index]);
        let rg = self.needs_grad(&[v]);
        Ok(self.push(Op::Select { v, index }, value, rg))
    }

    /// Multiplies a tensor by an on-tape scalar.
    pub fn scalar_mul(&mut self, s: NodeId, x: NodeId) -> Result<NodeId> {
        let vs = self.value(s);
        if !vs.is_scalar() {
            return Err(TensorError::UnsupportedShape {
                op: "scalar_mul",
                shape: vs.shape().to_vec(),
            });
        }
        let k = vs.item();
        let data: Vec<f64> = self.value(x).data().iter().map(|v| k * v).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data)?;
        let rg = self.needs_grad(&[s, x]);
        Ok(self.push(Op::ScalarMul { s, x }, value, rg))
    }

    // ── convolution ─────────────────────────────────────────────────

    /// Valid (unpadded) 2-D convolution over a channels-first map.
    /// `input: [ci,h,w]`, `weight: [co,ci,kh,kw]`, `bias: [co]`.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
    ) -> Result<NodeId> {
        let (vi, vw, vb) = (self.value(input), self.value(weight), self.value(bias));
        if vi.rank() != 3 || vw.rank() != 4 {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: vi.shape().to_vec(),
                rhs: vw.shape().to_vec(),
            });
        }
        let (ci, h, w) = (vi.shape()[0], vi.shape()[1], vi.shape()[2]);
        let (co, ci2, kh, kw) = (vw.shape()[0], vw.shape()[1], vw.shape()[2], vw.shape()[3]);
        if ci != ci2 || kh > h || kw > w {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: vi.shape().to_vec(),
                rhs: vw.shape().to_vec(),
            });
        }
        if vb.rank() != 1 || vb.shape()[0] != co {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: vw.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        if stride == 0 {
            return Err(TensorError::UnsupportedShape {
                op: "conv2d",
                shape: vec![stride],
            });
        }
        let oh = (h - kh) / stride + 1;
        let ow = (w - kw) / stride + 1;
        let mut out = vec![0.0; co * oh * ow];
        for o in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = vb.data()[o];
                    for c in 0..ci {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = oy * stride + ky;
                                let ix = ox * stride + kx;
                                acc += vi.data()[(c * h + iy) * w + ix]
                                    * vw.data()[((o * ci + c) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[(o * oh + oy) * ow + ox] = acc;
                }
            }
        }
        let value = Tensor::new(vec![co, oh, ow], out)?;
        let rg = self.needs_grad(&[input, weight, bias]);
        Ok(self.push(
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
            },
            value,
            rg,
        ))
    }

    /// Flattens a channels-first map `[d,h,w]` into `h*w` region rows of
    /// width `d`, scanning rows left to right, top to bottom.
    pub fn flatten_map(&mut self, map: NodeId) -> Result<NodeId> {
        let vm = self.value(map);
        if vm.rank() != 3 {
            return Err(TensorError::UnsupportedShape {
                op: "flatten_map",
                shape: vm.shape().to_vec(),
            });
        }
        let (d, h, w) = (vm.shape()[0], vm.shape()[1], vm.shape()[2]);
        let mut out = vec![0.0; d * h * w];
        for y in 0..h {
            for x in 0..w {
                let region = y * w + x;
                for c in 0..d {
                    out[region * d + c] = vm.data()[(c * h + y) * w + x];
                }
            }
        }
        let value = Tensor::new(vec![h * w, d], out)?;
        let rg = self.needs_grad(&[map]);
        Ok(self.push(Op::FlattenMap(map), value, rg))
    }

    /// Views any tensor as a rank-1 vector over its row-major data.
    pub fn reshape_vec(&mut self, x: NodeId) -> NodeId {
        let value = Tensor::vector(self.value(x).data().to_vec());
        let rg = self.needs_grad(&[x]);
        self.push(Op::ReshapeVec(x), value, rg)
    }

    // ── reverse pass ────────────────────────────────────────────────

    /// Populates gradients of `root` with respect to every differentiable
    /// ancestor. `root` must be a scalar. Earlier gradients are cleared.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if !self.value(root).is_scalar() {
            return Err(TensorError::NonScalarRoot {
                shape: self.value(root).shape().to_vec(),
            });
        }
        if !self.nodes[root.0].requires_grad {
            return Err(TensorError::NoGradPath);
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[root.0].grad = Some(Tensor::scalar(1.0));

        for id in (0..=root.0).rev() {
            if self.nodes[id].grad.is_none() || !self.nodes[id].requires_grad {
                continue;
            }
            let grad = self.nodes[id].grad.as_ref().unwrap().clone();
            let op = self.nodes[id].op.clone();
            self.propagate(&op, NodeId(id), &grad);
        }
        Ok(())
    }

    fn accumulate(&mut self, target: NodeId, delta: &[f64]) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        let shape = self.nodes[target.0].value.shape().to_vec();
        let grad = self.nodes[target.0]
            .grad
            .get_or_insert_with(|| Tensor::zeros(&shape));
        for (g, d) in grad.data_mut().iter_mut().zip(delta) {
            *g += d;
        }
    }

    fn propagate(&mut self, op: &Op, id: NodeId, grad: &Tensor) {
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(*a, grad.data());
                self.accumulate(*b, grad.data());
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, grad.data());
                let neg: Vec<f64> = grad.data().iter().map(|g| -g).collect();
                self.accumulate(*b, &neg);
            }
            Op::Mul(a, b) => {
                let da: Vec<f64> = grad
                    .data()
                    .iter()
                    .zip(self.value(*b).data())
                    .map(|(g, y)| g * y)
                    .collect();
                let db: Vec<f64> = grad
                    .data()
                    .iter()
                    .zip(self.value(*a).data())
                    .map(|(g, x)| g * x)
                    .collect();
                self.accumulate(*a, &da);
                self.accumulate(*b, &db);
            }
            Op::Affine { x, scale } => {
                let dx: Vec<f64> = grad.data().iter().map(|g| g * scale).collect();
                self.accumulate(*x, &dx);
            }
            Op::MatMul(a, b) => self.backward_matmul(*a, *b, grad),
            Op::Transpose(m) => {
                let (c, r) = (grad.shape()[0], grad.shape()[1]);
                let mut dm = vec![0.0; r * c];
                for i in 0..c {
                    for j in 0..r {
                        dm[j * c + i] = grad.data()[i * r + j];
                    }
                }
                self.accumulate(*m, &dm);
            }
            Op::AddColVec { m, v } => {
                self.accumulate(*m, grad.data());
                let (r, c) = (grad.shape()[0], grad.shape()[1]);
                let mut dv = vec![0.0; r];
                for i in 0..r {
                    for j in 0..c {
                        dv[i] += grad.data()[i * c + j];
                    }
                }
                self.accumulate(*v, &dv);
            }
            Op::Sigmoid(x) => {
                let y = self.value(id).data();
                let dx: Vec<f64> = grad
                    .data()
                    .iter()
                    .zip(y)
                    .map(|(g, s)| g * s * (1.0 - s))
                    .collect();
                self.accumulate(*x, &dx);
            }
            Op::Tanh(x) => {
                let y = self.value(id).data();
                let dx: Vec<f64> = grad
                    .data()
                    .iter()
                    .zip(y)
                    .map(|(g, t)| g * (1.0 - t * t))
                    .collect();
                self.accumulate(*x, &dx);
            }
            Op::Exp(x) => {
                let y = self.value(id).data();
                let dx: Vec<f64> = grad.data().iter().zip(y).map(|(g, e)| g * e).collect();
                self.accumulate(*x, &dx);
            }
            Op::Log(x) => {
                let vx = self.value(*x).data();
                let dx: Vec<f64> = grad.data().iter().zip(vx).map(|(g, v)| g / v).collect();
                self.accumulate(*x, &dx);
            }
            Op::Softmax { x, mode } => self.backward_softmax(*x, *mode, id, grad),
            Op::LogSoftmaxVec(x) => {
                let y = self.value(id).data();
                let gsum: f64 = grad.data().iter().sum();
                let dx: Vec<f64> = grad
                    .data()
                    .iter()
                    .zip(y)
                    .map(|(g, ls)| g - ls.exp() * gsum)
                    .collect();
                self.accumulate(*x, &dx);
            }
            Op::RowMax { m, argmax } => {
                let c = self.value(*m).shape()[1];
                let mut dm = vec![0.0; self.value(*m).numel()];
                for (i, &j) in argmax.iter().enumerate() {
                    dm[i * c + j] = grad.data()[i];
                }
                self.accumulate(*m, &dm);
            }
            Op::ColMax { m, argmax } => {
                let c = self.value(*m).shape()[1];
                let mut dm = vec![0.0; self.value(*m).numel()];
                for (j, &i) in argmax.iter().enumerate() {
                    dm[i * c + j] = grad.data()[j];
                }
                self.accumulate(*m, &dm);
            }
            Op::RowSum(m) => {
                let (r, c) = (self.value(*m).shape()[0], self.value(*m).shape()[1]);
                let mut dm = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        dm[i * c + j] = grad.data()[i];
                    }
                }
                self.accumulate(*m, &dm);
            }
            Op::ColSum(m) => {
                let (r, c) = (self.value(*m).shape()[0], self.value(*m).shape()[1]);
                let mut dm = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        dm[i * c + j] = grad.data()[j];
                    }
                }
                self.accumulate(*m, &dm);
            }
            Op::SumAll(x) => {
                let g = grad.item();
                let dx = vec![g; self.value(*x).numel()];
                self.accumulate(*x, &dx);
            }
            Op::MeanAll(x) => {
                let n = self.value(*x).numel();
                let g = grad.item() / n as f64;
                let dx = vec![g; n];
                self.accumulate(*x, &dx);
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    let slice = grad.data()[offset..offset + len].to_vec();
                    self.accumulate(p, &slice);
                    offset += len;
                }
            }
            Op::StackRows { rows } => {
                let width = self.value(rows[0]).numel();
                for (i, &r) in rows.iter().enumerate() {
                    let slice = grad.data()[i * width..(i + 1) * width].to_vec();
                    self.accumulate(r, &slice);
                }
            }
            Op::Row { m, index } => {
                let c = self.value(*m).shape()[1];
                let mut dm = vec![0.0; self.value(*m).numel()];
                dm[index * c..(index + 1) * c].copy_from_slice(grad.data());
                self.accumulate(*m, &dm);
            }
            Op::Select { v, index } => {
                let mut dv = vec![0.0; self.value(*v).numel()];
                dv[*index] = grad.item();
                self.accumulate(*v, &dv);
            }
            Op::ScalarMul { s, x } => {
                let k = self.value(*s).item();
                let ds: f64 = grad
                    .data()
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(g, v)| g * v)
                    .sum();
                let dx: Vec<f64> = grad.data().iter().map(|g| g * k).collect();
                self.accumulate(*s, &[ds]);
                self.accumulate(*x, &dx);
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
            } => self.backward_conv2d(*input, *weight, *bias, *stride, grad),
            Op::FlattenMap(m) => {
                let (d, h, w) = (
                    self.value(*m).shape()[0],
                    self.value(*m).shape()[1],
                    self.value(*m).shape()[2],
                );
                let mut dm = vec![0.0; d * h * w];
                for y in 0..h {
                    for x in 0..w {
                        let region = y * w + x;
                        for c in 0..d {
                            dm[(c * h + y) * w + x] = grad.data()[region * d + c];
                        }
                    }
                }
                self.accumulate(*m, &dm);
            }
            Op::ReshapeVec(x) => {
                self.accumulate(*x, grad.data());
            }
        }
    }

    fn backward_matmul(&mut self, a: NodeId, b: NodeId, grad: &Tensor) {
        let (va, vb) = (self.value(a).clone(), self.value(b).clone());
        match (va.rank(), vb.rank()) {
            (2, 2) => {
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[1];
                let mut da = vec![0.0; m * k];
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    for j in 0..n {
                        let g = grad.data()[i * n + j];
                        for p in 0..k {
                            da[i * k + p] += g * vb.data()[p * n + j];
                            db[p * n + j] += g * va.data()[i * k + p];
                        }
                    }
                }
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            (2, 1) => {
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let mut da = vec![0.0; m * k];
                let mut db = vec![0.0; k];
                for i in 0..m {
                    let g = grad.data()[i];
                    for p in 0..k {
                        da[i * k + p] += g * vb.data()[p];
                        db[p] += g * va.data()[i * k + p];
                    }
                }
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            (1, 2) => {
                let k = va.shape()[0];
                let n = vb.shape()[1];
                let mut da = vec![0.0; k];
                let mut db = vec![0.0; k * n];
                for j in 0..n {
                    let g = grad.data()[j];
                    for p in 0..k {
                        da[p] += g * vb.data()[p * n + j];
                        db[p * n + j] += g * va.data()[p];
                    }
                }
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            (1, 1) => {
                let g = grad.item();
                let da: Vec<f64> = vb.data().iter().map(|v| g * v).collect();
                let db: Vec<f64> = va.data().iter().map(|v| g * v).collect();
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            _ => unreachable!("matmul forward validated ranks"),
        }
    }

    fn backward_softmax(&mut self, x: NodeId, mode: SoftmaxMode, id: NodeId, grad: &Tensor) {
        let y = self.value(id).clone();
        let mut dx = vec![0.0; y.numel()];
        let (group, stride, count) = match mode {
            SoftmaxMode::Vector => (y.numel(), 1usize, 1usize),
            SoftmaxMode::Rows => (y.shape()[1], 1, y.shape()[0]),
            SoftmaxMode::Cols => (y.shape()[0], y.shape()[1], y.shape()[1]),
        };
        for g in 0..count {
            let base = if stride == 1 { g * group } else { g };
            let idx = |k: usize| {
                if stride == 1 {
                    base + k
                } else {
                    base + k * stride
                }
            };
            let mut inner = 0.0;
            for k in 0..group {
                inner += grad.data()[idx(k)] * y.data()[idx(k)];
            }
            for k in 0..group {
                let i = idx(k);
                dx[i] = y.data()[i] * (grad.data()[i] - inner);
            }
        }
        self.accumulate(x, &dx);
    }

    fn backward_conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        grad: &Tensor,
    ) {
        let vi = self.value(input).clone();
        let vw = self.value(weight).clone();
        let (ci, h, w) = (vi.shape()[0], vi.shape()[1], vi.shape()[2]);
        let (co, _, kh, kw) = (vw.shape()[0], vw.shape()[1], vw.shape()[2], vw.shape()[3]);
        let (oh, ow) = (grad.shape()[1], grad.shape()[2]);

        let mut di = vec![0.0; vi.numel()];
        let mut dw = vec![0.0; vw.numel()];
        let mut db = vec![0.0; co];
        for o in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = grad.data()[(o * oh + oy) * ow + ox];
                    db[o] += g;
                    for c in 0..ci {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = oy * stride + ky;
                                let ix = ox * stride + kx;
                                di[(c * h + iy) * w + ix] +=
                                    g * vw.data()[((o * ci + c) * kh + ky) * kw + kx];
                                dw[((o * ci + c) * kh + ky) * kw + kx] +=
                                    g * vi.data()[(c * h + iy) * w + ix];
                            }
                        }
                    }
                }
            }
        }
        self.accumulate(input, &di);
        self.accumulate(weight, &dw);
        self.accumulate(bias, &db);
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let a = g.param(Tensor::vector(vec![1.0, 2.0]));
        let err = g.backward(a).unwrap_err();
        assert!(matches!(err, TensorError::NonScalarRoot { .. }));
    }

    #[test]
    fn backward_rejects_constant_root() {
        let mut g = Graph::new();
        let a = g.input(Tensor::scalar(3.0));
        assert!(matches!(g.backward(a), Err(TensorError::NoGradPath)));
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.input(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        let b = g.input(Tensor::matrix(4, 2, vec![0.0; 8]).unwrap());
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(0.0));
        let y = g.sigmoid(x);
        g.backward(y).unwrap();
        assert!((g.grad(x).unwrap().item() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn linear_gradient_is_input() {
        let mut g = Graph::new();
        let w = g.param(Tensor::vector(vec![0.5, -1.0, 2.0]));
        let x = g.input(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let y = g.matmul(w, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x), None);
        assert_eq!(g.grad(w).unwrap().data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn identity_matmul() {
        let mut g = Graph::new();
        let eye = g.input(Tensor::matrix(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap());
        let a = g.input(Tensor::matrix(3, 3, (0..9).map(|v| v as f64 * 0.7 - 2.0).collect()).unwrap());
        let out = g.matmul(eye, a).unwrap();
        assert_eq!(g.value(out).data(), g.value(a).data());
    }

    #[test]
    fn softmax_of_constant_vector_is_uniform() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![0.0, 0.0, 0.0]));
        let s = g.softmax_vec(x).unwrap();
        for &v in g.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![0.5, -0.1]));
        assert!(matches!(g.log(x), Err(TensorError::DomainError { .. })));
    }

    #[test]
    fn repeated_forward_is_bit_identical() {
        let run = || {
            let mut g = Graph::new();
            let a = g.input(Tensor::matrix(3, 4, (0..12).map(|v| (v as f64).sin()).collect()).unwrap());
            let b = g.input(Tensor::matrix(4, 2, (0..8).map(|v| (v as f64).cos()).collect()).unwrap());
            let c = g.matmul(a, b).unwrap();
            let t = g.tanh(c);
            let s = g.sum_all(t);
            g.value(s).item()
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }
}
