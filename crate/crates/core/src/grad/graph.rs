use std::any::Any;
use std::rc::Rc;

use super::linalg::{col2im, gemm, im2col, Window};
use super::{GradError, Tensor};

/// Opaque forward state a custom op hands to its own backward rule.
pub type Saved = Box<dyn Any>;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// An operation with a hand-written backward rule, hosted by the tape.
pub trait CustomOp {
    fn name(&self) -> &str;

    /// Number of tensor inputs. Backward must return exactly this many slots.
    fn arity(&self) -> usize;

    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, Saved), GradError>;

    /// One entry per input: `None` for inputs that receive no gradient.
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        saved: &dyn Any,
        grad_output: &Tensor,
    ) -> Result<Vec<Option<Tensor>>, GradError>;
}

type FnForward = dyn Fn(&[&Tensor]) -> Result<Tensor, GradError>;
type FnBackward = dyn Fn(&[&Tensor], &Tensor, &Tensor) -> Vec<Option<Tensor>>;

/// Closure-backed [`CustomOp`] for small stateless ops.
pub struct FnOp {
    name: String,
    arity: usize,
    forward: Box<FnForward>,
    backward: Box<FnBackward>,
}

impl FnOp {
    pub fn new(
        name: impl Into<String>,
        arity: usize,
        forward: impl Fn(&[&Tensor]) -> Result<Tensor, GradError> + 'static,
        backward: impl Fn(&[&Tensor], &Tensor, &Tensor) -> Vec<Option<Tensor>> + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            arity,
            forward: Box::new(forward),
            backward: Box::new(backward),
        }
    }
}

impl CustomOp for FnOp {
    fn name(&self) -> &str {
        &self.name
    }

    fn arity(&self) -> usize {
        self.arity
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, Saved), GradError> {
        Ok(((self.forward)(inputs)?, Box::new(())))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        _saved: &dyn Any,
        grad_output: &Tensor,
    ) -> Result<Vec<Option<Tensor>>, GradError> {
        Ok((self.backward)(inputs, output, grad_output))
    }
}

/// Registered custom op; cheap to clone and reuse across applications.
#[derive(Clone)]
pub struct CustomHandle(Rc<dyn CustomOp>);

impl CustomHandle {
    pub fn name(&self) -> &str {
        self.0.name()
    }
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Square(Var),
    MatMul(Var, Var),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        window: Window,
        out_channels: usize,
        cols: Vec<f64>,
    },
    ConvTranspose2d {
        input: Var,
        weight: Var,
        bias: Var,
        window: Window,
        in_channels: usize,
    },
    Relu(Var),
    Sigmoid(Var),
    GlobalAvgPool(Var),
    SpatialSoftmax(Var),
    Sum(Var),
    Mean(Var),
    MapDot(Var, Var),
    Concat(Vec<Var>),
    Narrow(Var, usize),
    Reshape(Var),
    Select(Vec<Var>, Vec<u8>),
    QuatNormalize(Var),
    QuatRotation(Var, [[f64; 3]; 3]),
    RigidTransform(Var, Var, Var),
    Custom {
        op: CustomHandle,
        inputs: Vec<Var>,
        saved: Saved,
    },
}

impl Op {
    fn name(&self) -> &str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddBias(..) => "add_bias",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Square(..) => "square",
            Op::MatMul(..) => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::GlobalAvgPool(..) => "global_avg_pool",
            Op::SpatialSoftmax(..) => "spatial_softmax",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::MapDot(..) => "map_dot",
            Op::Concat(..) => "concat",
            Op::Narrow(..) => "narrow",
            Op::Reshape(..) => "reshape",
            Op::Select(..) => "select",
            Op::QuatNormalize(..) => "quat_normalize",
            Op::QuatRotation(..) => "quat_rotation",
            Op::RigidTransform(..) => "rigid_transform",
            Op::Custom { op, .. } => op.name(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of one backward pass, keyed by the leaf they belong to.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

/// A straight-line tape of tensor operations.
///
/// Values are computed eagerly as ops are recorded; [`Graph::backward`]
/// replays the tape once in reverse.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

fn shape_err(op: &'static str, detail: String) -> GradError {
    GradError::Shape { op, detail }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var, GradError> {
        if !value.is_finite() {
            return Err(GradError::NonFinite {
                op: op.name().to_string(),
            });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), GradError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.same_shape("add", a, b)?;
        let v = self.zip_with(a, b, |x, y| x + y);
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_with(a, b, |x, y| x - y);
        self.push(v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_with(a, b, |x, y| x * y);
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    /// `x + bias` with `bias` broadcast along every axis but the last.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, GradError> {
        let xs = self.shape(x);
        let bs = self.shape(bias);
        if xs.is_empty() || bs.len() != 1 || bs[0] != *xs.last().unwrap() {
            return Err(shape_err("add_bias", format!("{xs:?} + {bs:?}")));
        }
        let c = bs[0];
        let b = self.value(bias).data().to_vec();
        let mut v = self.value(x).clone();
        for (i, val) in v.data_mut().iter_mut().enumerate() {
            *val += b[i % c];
        }
        self.push(v, Op::AddBias(x, bias), &[x, bias])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, GradError> {
        let v = self.value(a).map(|x| x * factor);
        self.push(v, Op::Scale(a, factor), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, offset: f64) -> Result<Var, GradError> {
        let v = self.value(a).map(|x| x + offset);
        self.push(v, Op::Offset(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var, GradError> {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a), &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            0.0,
            &mut out,
        );
        let v = Tensor::new(vec![m, n], out)?;
        self.push(v, Op::MatMul(a, b), &[a, b])
    }

    /// Dense layer on a vector: `x · weight + bias`, `weight: [in, out]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var, GradError> {
        let n = self.value(x).len();
        let row = self.reshape(x, &[1, n])?;
        let y = self.matmul(row, weight)?;
        let y = self.add_bias(y, bias)?;
        let out = self.shape(y)[1];
        self.reshape(y, &[out])
    }

    /// 2D convolution over a `[C, H, W]` input with `weight: [Cout, C, K, K]`
    /// and `bias: [Cout]`. Output size is `(H + 2·pad − K) / stride + 1`.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var, GradError> {
        let (si, sw, sb) = (self.shape(input), self.shape(weight), self.shape(bias));
        let ok = si.len() == 3
            && sw.len() == 4
            && sw[1] == si[0]
            && sw[2] == sw[3]
            && sb == [sw[0]]
            && stride >= 1
            && si[1] + 2 * pad >= sw[2]
            && si[2] + 2 * pad >= sw[2];
        if !ok {
            return Err(shape_err(
                "conv2d",
                format!("input {si:?}, weight {sw:?}, bias {sb:?}, stride {stride}, pad {pad}"),
            ));
        }
        let window = Window {
            channels: si[0],
            height: si[1],
            width: si[2],
            kernel: sw[2],
            stride,
            pad,
        };
        let out_channels = sw[0];
        let cols = im2col(self.value(input).data(), window);
        let (rows, n) = (window.col_rows(), window.col_cols());
        let mut out = vec![0.0; out_channels * n];
        gemm(
            out_channels,
            rows,
            n,
            self.value(weight).data(),
            false,
            &cols,
            false,
            0.0,
            &mut out,
        );
        let b = self.value(bias).data();
        for (c, chunk) in out.chunks_mut(n).enumerate() {
            chunk.iter_mut().for_each(|v| *v += b[c]);
        }
        let v = Tensor::new(
            vec![out_channels, window.out_height(), window.out_width()],
            out,
        )?;
        self.push(
            v,
            Op::Conv2d {
                input,
                weight,
                bias,
                window,
                out_channels,
                cols,
            },
            &[input, weight, bias],
        )
    }

    /// Transposed convolution, the adjoint of [`Graph::conv2d`]:
    /// `weight: [C, Cout, K, K]`, output size `(H − 1)·stride − 2·pad + K`.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var, GradError> {
        let (si, sw, sb) = (self.shape(input), self.shape(weight), self.shape(bias));
        let ok = si.len() == 3
            && sw.len() == 4
            && sw[0] == si[0]
            && sw[2] == sw[3]
            && sb == [sw[1]]
            && stride >= 1
            && si[1] >= 1
            && (si[1] - 1) * stride + sw[2] >= 2 * pad + 1
            && (si[2] - 1) * stride + sw[2] >= 2 * pad + 1;
        if !ok {
            return Err(shape_err(
                "conv_transpose2d",
                format!("input {si:?}, weight {sw:?}, bias {sb:?}, stride {stride}, pad {pad}"),
            ));
        }
        let (in_channels, h, w) = (si[0], si[1], si[2]);
        let (out_channels, k) = (sw[1], sw[2]);
        let window = Window {
            channels: out_channels,
            height: (h - 1) * stride + k - 2 * pad,
            width: (w - 1) * stride + k - 2 * pad,
            kernel: k,
            stride,
            pad,
        };
        debug_assert_eq!(window.out_height(), h);
        debug_assert_eq!(window.out_width(), w);
        let rows = window.col_rows();
        let mut cols = vec![0.0; rows * h * w];
        gemm(
            rows,
            in_channels,
            h * w,
            self.value(weight).data(),
            true,
            self.value(input).data(),
            false,
            0.0,
            &mut cols,
        );
        let mut out = col2im(&cols, window);
        let b = self.value(bias).data();
        let plane = window.height * window.width;
        for (c, chunk) in out.chunks_mut(plane).enumerate() {
            chunk.iter_mut().for_each(|v| *v += b[c]);
        }
        let v = Tensor::new(vec![out_channels, window.height, window.width], out)?;
        self.push(
            v,
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                window,
                in_channels,
            },
            &[input, weight, bias],
        )
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, GradError> {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, GradError> {
        let v = self.value(a).map(|x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        });
        self.push(v, Op::Sigmoid(a), &[a])
    }

    /// `[C, H, W] -> [C]`.
    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var, GradError> {
        let s = self.shape(a);
        if s.len() != 3 || s[1] * s[2] == 0 {
            return Err(shape_err("global_avg_pool", format!("{s:?}")));
        }
        let (c, plane) = (s[0], s[1] * s[2]);
        let data: Vec<f64> = self
            .value(a)
            .data()
            .chunks(plane)
            .map(|ch| ch.iter().sum::<f64>() / plane as f64)
            .collect();
        let v = Tensor::new(vec![c], data)?;
        self.push(v, Op::GlobalAvgPool(a), &[a])
    }

    /// Softmax over each `H×W` map of an `[N, H, W]` tensor. The per-map
    /// maximum is subtracted before exponentiation.
    pub fn spatial_softmax(&mut self, a: Var) -> Result<Var, GradError> {
        let s = self.shape(a);
        if s.len() != 3 || s[1] * s[2] == 0 {
            return Err(shape_err("spatial_softmax", format!("{s:?}")));
        }
        let plane = s[1] * s[2];
        let mut v = self.value(a).clone();
        for map in v.data_mut().chunks_mut(plane) {
            let max = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in map.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            map.iter_mut().for_each(|x| *x /= total);
        }
        self.push(v, Op::SpatialSoftmax(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, GradError> {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, GradError> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(shape_err("mean", "empty tensor".into()));
        }
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(v, Op::Mean(a), &[a])
    }

    /// Per-row weighted sum: `a: [N, ...]`, `b` either the same shape or the
    /// trailing shape `[...]` shared by all rows. Returns `[N]`.
    pub fn map_dot(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let broadcast = sa.len() >= 1 && sb == &sa[1..];
        if sa.is_empty() || !(sa == sb || broadcast) {
            return Err(shape_err("map_dot", format!("{sa:?} . {sb:?}")));
        }
        let rows = sa[0];
        let per = if rows == 0 { 0 } else { self.value(a).len() / rows };
        let (ta, tb) = (self.value(a).data(), self.value(b).data());
        let data = (0..rows)
            .map(|r| {
                let ra = &ta[r * per..(r + 1) * per];
                let rb = if broadcast { tb } else { &tb[r * per..(r + 1) * per] };
                ra.iter().zip(rb).map(|(x, y)| x * y).sum()
            })
            .collect();
        let v = Tensor::new(vec![rows], data)?;
        self.push(v, Op::MapDot(a, b), &[a, b])
    }

    /// Concatenate along axis 0 (the channel axis for `[C, H, W]`).
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, GradError> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat", "no inputs".into()))?;
        let tail = self.shape(*first).get(1..).unwrap_or(&[]).to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(shape_err(
                    "concat",
                    format!("{:?} vs trailing {tail:?}", s),
                ));
            }
            lead += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let v = Tensor::new(shape, data)?;
        self.push(v, Op::Concat(parts.to_vec()), parts)
    }

    /// Rows `start..start + len` along axis 0.
    pub fn narrow(&mut self, a: Var, start: usize, len: usize) -> Result<Var, GradError> {
        let s = self.shape(a).to_vec();
        if s.is_empty() || start + len > s[0] {
            return Err(shape_err(
                "narrow",
                format!("{s:?} rows {start}..{}", start + len),
            ));
        }
        let per: usize = s[1..].iter().product();
        let data = self.value(a).data()[start * per..(start + len) * per].to_vec();
        let mut shape = s;
        shape[0] = len;
        let v = Tensor::new(shape, data)?;
        self.push(v, Op::Narrow(a, start), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, GradError> {
        let from = self.shape(a).to_vec();
        let v = self
            .value(a)
            .clone()
            .reshaped(shape.to_vec())
            .map_err(|_| shape_err("reshape", format!("{from:?} -> {shape:?}")))?;
        self.push(v, Op::Reshape(a), &[a])
    }

    /// Elementwise gather: `out[i] = sources[choice[i]][i]`.
    pub fn select(&mut self, sources: &[Var], choice: &[u8]) -> Result<Var, GradError> {
        let first = *sources
            .first()
            .ok_or_else(|| shape_err("select", "no sources".into()))?;
        for &s in sources {
            self.same_shape("select", first, s)?;
        }
        let n = self.value(first).len();
        if choice.len() != n || choice.iter().any(|&c| c as usize >= sources.len()) {
            return Err(shape_err(
                "select",
                format!(
                    "{} choices over {} elements from {} sources",
                    choice.len(),
                    n,
                    sources.len()
                ),
            ));
        }
        let data = choice
            .iter()
            .enumerate()
            .map(|(i, &c)| self.value(sources[c as usize]).data()[i])
            .collect();
        let v = Tensor::new(self.shape(first).to_vec(), data)?;
        self.push(v, Op::Select(sources.to_vec(), choice.to_vec()), sources)
    }

    /// Normalize each row of an `[N, 4]` quaternion batch. Zero rows are an error.
    pub fn quat_normalize(&mut self, q: Var) -> Result<Var, GradError> {
        let s = self.shape(q);
        if s.len() != 2 || s[1] != 4 {
            return Err(shape_err("quat_normalize", format!("{s:?}")));
        }
        let mut v = self.value(q).clone();
        for (row, chunk) in v.data_mut().chunks_mut(4).enumerate() {
            let norm = chunk.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(GradError::Domain {
                    op: "quat_normalize",
                    detail: format!("zero quaternion at row {row}"),
                });
            }
            chunk.iter_mut().for_each(|x| *x /= norm);
        }
        self.push(v, Op::QuatNormalize(q), &[q])
    }

    /// `[N, 4]` unit quaternions to `[N, 3, 3]` matrices `frame · R(q)`.
    pub fn quat_rotation(&mut self, q: Var, frame: [[f64; 3]; 3]) -> Result<Var, GradError> {
        let s = self.shape(q);
        if s.len() != 2 || s[1] != 4 {
            return Err(shape_err("quat_rotation", format!("{s:?}")));
        }
        let n = s[0];
        let mut data = Vec::with_capacity(n * 9);
        for quat in self.value(q).data().chunks(4) {
            let r = rotation_entries(quat);
            for i in 0..3 {
                for j in 0..3 {
                    data.push((0..3).map(|k| frame[i][k] * r[k][j]).sum());
                }
            }
        }
        let v = Tensor::new(vec![n, 3, 3], data)?;
        self.push(v, Op::QuatRotation(q, frame), &[q])
    }

    /// Per-part rigid motion: `verts: [N, V, 3]`, `rot: [N, 3, 3]`,
    /// `trans: [N, 3]`; `out[n, v] = rot[n] · verts[n, v] + trans[n]`.
    pub fn rigid_transform(&mut self, verts: Var, rot: Var, trans: Var) -> Result<Var, GradError> {
        let (sv, sr, st) = (self.shape(verts), self.shape(rot), self.shape(trans));
        if sv.len() != 3 || sv[2] != 3 || sr != [sv[0], 3, 3] || st != [sv[0], 3] {
            return Err(shape_err(
                "rigid_transform",
                format!("verts {sv:?}, rot {sr:?}, trans {st:?}"),
            ));
        }
        let (n, nv) = (sv[0], sv[1]);
        let (pv, pr, pt) = (
            self.value(verts).data(),
            self.value(rot).data(),
            self.value(trans).data(),
        );
        let mut out = vec![0.0; n * nv * 3];
        for p in 0..n {
            let r = &pr[p * 9..p * 9 + 9];
            let t = &pt[p * 3..p * 3 + 3];
            for v in 0..nv {
                let o = (p * nv + v) * 3;
                let x = &pv[o..o + 3];
                for i in 0..3 {
                    out[o + i] = r[i * 3] * x[0] + r[i * 3 + 1] * x[1] + r[i * 3 + 2] * x[2] + t[i];
                }
            }
        }
        let v = Tensor::new(vec![n, nv, 3], out)?;
        self.push(v, Op::RigidTransform(verts, rot, trans), &[verts, rot, trans])
    }

    /// Validate and wrap a custom op for use on this (or any) tape.
    pub fn register_custom(&mut self, op: Rc<dyn CustomOp>) -> Result<CustomHandle, GradError> {
        if op.arity() == 0 {
            return Err(GradError::CustomArity {
                op: op.name().to_string(),
                expected: 0,
                got: 0,
            });
        }
        Ok(CustomHandle(op))
    }

    pub fn apply_custom(&mut self, op: &CustomHandle, inputs: &[Var]) -> Result<Var, GradError> {
        if inputs.len() != op.0.arity() {
            return Err(GradError::CustomArity {
                op: op.name().to_string(),
                expected: op.0.arity(),
                got: inputs.len(),
            });
        }
        let values: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
        let (out, saved) = op.0.forward(&values)?;
        self.push(
            out,
            Op::Custom {
                op: op.clone(),
                inputs: inputs.to_vec(),
                saved,
            },
            inputs,
        )
    }

    /// Reverse sweep from a scalar `loss`. Every `requires_grad` leaf gets a
    /// gradient (zeros when unreachable). The tape can be swept only once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, GradError> {
        if self.consumed {
            return Err(GradError::TapeConsumed);
        }
        if self.value(loss).len() != 1 {
            return Err(shape_err(
                "backward",
                format!("loss must be scalar, got {:?}", self.shape(loss)),
            ));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss).to_vec(), 1.0));
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad || matches!(self.nodes[id].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[id].op, Op::Leaf);
            for (input, gi) in self.backward_node(id, &op, &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(gi.shape(), self.shape(input), "op {}", op.name());
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&gi),
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        for (id, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grads[id].is_none() {
                grads[id] = Some(Tensor::zeros(node.value.shape().to_vec()));
            }
        }
        Ok(Gradients { grads })
    }

    fn backward_node(
        &self,
        id: usize,
        op: &Op,
        g: &Tensor,
    ) -> Result<Vec<(Var, Tensor)>, GradError> {
        let val = |v: Var| &self.nodes[v.0].value;
        let out = &self.nodes[id].value;
        let like = |v: Var, data: Vec<f64>| Tensor::new(val(v).shape().to_vec(), data).expect("shape");
        let zipg = |t: &Tensor, f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
            t.data().iter().zip(g.data()).map(|(&x, &gy)| f(x, gy)).collect()
        };
        Ok(match op {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|x| -x))],
            Op::Mul(a, b) => vec![
                (*a, like(*a, zipg(val(*b), &|y, gy| y * gy))),
                (*b, like(*b, zipg(val(*a), &|x, gy| x * gy))),
            ],
            Op::AddBias(x, bias) => {
                let c = val(*bias).len();
                let mut gb = vec![0.0; c];
                for (i, gy) in g.data().iter().enumerate() {
                    gb[i % c] += gy;
                }
                vec![(*x, g.clone()), (*bias, like(*bias, gb))]
            }
            Op::Scale(a, f) => vec![(*a, g.map(|x| x * f))],
            Op::Offset(a) => vec![(*a, g.clone())],
            Op::Square(a) => vec![(*a, like(*a, zipg(val(*a), &|x, gy| 2.0 * x * gy)))],
            Op::MatMul(a, b) => {
                let (m, k) = (val(*a).shape()[0], val(*a).shape()[1]);
                let n = val(*b).shape()[1];
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, g.data(), false, val(*b).data(), true, 0.0, &mut ga);
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, val(*a).data(), true, g.data(), false, 0.0, &mut gb);
                vec![(*a, like(*a, ga)), (*b, like(*b, gb))]
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                window,
                out_channels,
                cols,
            } => {
                let (rows, n) = (window.col_rows(), window.col_cols());
                let mut gw = vec![0.0; out_channels * rows];
                gemm(*out_channels, n, rows, g.data(), false, cols, true, 0.0, &mut gw);
                let gb = g.data().chunks(n).map(|c| c.iter().sum()).collect();
                let mut out = vec![(*weight, like(*weight, gw)), (*bias, like(*bias, gb))];
                if self.nodes[input.0].requires_grad {
                    let mut gcols = vec![0.0; rows * n];
                    gemm(
                        rows,
                        *out_channels,
                        n,
                        val(*weight).data(),
                        true,
                        g.data(),
                        false,
                        0.0,
                        &mut gcols,
                    );
                    out.push((*input, like(*input, col2im(&gcols, *window))));
                }
                out
            }
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                window,
                in_channels,
            } => {
                let gcols = im2col(g.data(), *window);
                let (rows, n) = (window.col_rows(), window.col_cols());
                let mut gw = vec![0.0; in_channels * rows];
                gemm(
                    *in_channels,
                    n,
                    rows,
                    val(*input).data(),
                    false,
                    &gcols,
                    true,
                    0.0,
                    &mut gw,
                );
                let plane = window.height * window.width;
                let gb = g.data().chunks(plane).map(|c| c.iter().sum()).collect();
                let mut out = vec![(*weight, like(*weight, gw)), (*bias, like(*bias, gb))];
                if self.nodes[input.0].requires_grad {
                    let mut gx = vec![0.0; in_channels * n];
                    gemm(
                        *in_channels,
                        rows,
                        n,
                        val(*weight).data(),
                        false,
                        &gcols,
                        false,
                        0.0,
                        &mut gx,
                    );
                    out.push((*input, like(*input, gx)));
                }
                out
            }
            Op::Relu(a) => vec![(
                *a,
                like(*a, zipg(val(*a), &|x, gy| if x > 0.0 { gy } else { 0.0 })),
            )],
            Op::Sigmoid(a) => vec![(*a, like(*a, zipg(out, &|y, gy| y * (1.0 - y) * gy)))],
            Op::GlobalAvgPool(a) => {
                let s = val(*a).shape();
                let plane = s[1] * s[2];
                let mut ga = Vec::with_capacity(val(*a).len());
                for &gc in g.data() {
                    ga.extend(std::iter::repeat_n(gc / plane as f64, plane));
                }
                vec![(*a, like(*a, ga))]
            }
            Op::SpatialSoftmax(a) => {
                let s = val(*a).shape();
                let plane = s[1] * s[2];
                let mut ga = Vec::with_capacity(out.len());
                for (y, gy) in out.data().chunks(plane).zip(g.data().chunks(plane)) {
                    let dot: f64 = y.iter().zip(gy).map(|(p, q)| p * q).sum();
                    ga.extend(y.iter().zip(gy).map(|(p, q)| p * (q - dot)));
                }
                vec![(*a, like(*a, ga))]
            }
            Op::Sum(a) => vec![(*a, Tensor::full(val(*a).shape().to_vec(), g.item()))],
            Op::Mean(a) => {
                let n = val(*a).len() as f64;
                vec![(*a, Tensor::full(val(*a).shape().to_vec(), g.item() / n))]
            }
            Op::MapDot(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let rows = ta.shape()[0];
                let per = if rows == 0 { 0 } else { ta.len() / rows };
                let broadcast = tb.len() != ta.len() || ta.shape() != tb.shape();
                let mut ga = vec![0.0; ta.len()];
                let mut gb = vec![0.0; tb.len()];
                for r in 0..rows {
                    let gr = g.data()[r];
                    let off_b = if broadcast { 0 } else { r * per };
                    for i in 0..per {
                        ga[r * per + i] = gr * tb.data()[off_b + i];
                        gb[off_b + i] += gr * ta.data()[r * per + i];
                    }
                }
                vec![(*a, like(*a, ga)), (*b, like(*b, gb))]
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                parts
                    .iter()
                    .map(|&p| {
                        let n = val(p).len();
                        let slice = g.data()[offset..offset + n].to_vec();
                        offset += n;
                        (p, like(p, slice))
                    })
                    .collect()
            }
            Op::Narrow(a, start) => {
                let per: usize = val(*a).shape()[1..].iter().product();
                let mut ga = vec![0.0; val(*a).len()];
                ga[start * per..start * per + g.len()].copy_from_slice(g.data());
                vec![(*a, like(*a, ga))]
            }
            Op::Reshape(a) => vec![(*a, like(*a, g.data().to_vec()))],
            Op::Select(sources, choice) => {
                let n = g.len();
                let mut per: Vec<Vec<f64>> = sources.iter().map(|_| vec![0.0; n]).collect();
                for (i, &c) in choice.iter().enumerate() {
                    per[c as usize][i] = g.data()[i];
                }
                sources
                    .iter()
                    .zip(per)
                    .map(|(&s, d)| (s, like(s, d)))
                    .collect()
            }
            Op::QuatNormalize(q) => {
                let tq = val(*q);
                let mut gq = Vec::with_capacity(tq.len());
                for ((x, y), gy) in tq
                    .data()
                    .chunks(4)
                    .zip(out.data().chunks(4))
                    .zip(g.data().chunks(4))
                {
                    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    gq.extend(y.iter().zip(gy).map(|(yi, gi)| (gi - yi * dot) / norm));
                }
                vec![(*q, like(*q, gq))]
            }
            Op::QuatRotation(q, frame) => {
                let tq = val(*q);
                let mut gq = Vec::with_capacity(tq.len());
                for (quat, gm) in tq.data().chunks(4).zip(g.data().chunks(9)) {
                    // dL/dR = frameᵀ · dL/dOut
                    let mut gr = [[0.0; 3]; 3];
                    for (i, row) in gr.iter_mut().enumerate() {
                        for (j, cell) in row.iter_mut().enumerate() {
                            *cell = (0..3).map(|k| frame[k][i] * gm[k * 3 + j]).sum();
                        }
                    }
                    let d = rotation_partials(quat);
                    for dk in &d {
                        let mut acc = 0.0;
                        for i in 0..3 {
                            for j in 0..3 {
                                acc += gr[i][j] * dk[i][j];
                            }
                        }
                        gq.push(acc);
                    }
                }
                vec![(*q, like(*q, gq))]
            }
            Op::RigidTransform(verts, rot, trans) => {
                let (pv, pr) = (val(*verts).data(), val(*rot).data());
                let s = val(*verts).shape();
                let (n, nv) = (s[0], s[1]);
                let mut gv = vec![0.0; pv.len()];
                let mut gr = vec![0.0; n * 9];
                let mut gt = vec![0.0; n * 3];
                for p in 0..n {
                    let r = &pr[p * 9..p * 9 + 9];
                    for v in 0..nv {
                        let o = (p * nv + v) * 3;
                        let gy = &g.data()[o..o + 3];
                        let x = &pv[o..o + 3];
                        for i in 0..3 {
                            gv[o + i] = r[i] * gy[0] + r[3 + i] * gy[1] + r[6 + i] * gy[2];
                            gt[p * 3 + i] += gy[i];
                            for j in 0..3 {
                                gr[p * 9 + i * 3 + j] += gy[i] * x[j];
                            }
                        }
                    }
                }
                vec![
                    (*verts, like(*verts, gv)),
                    (*rot, like(*rot, gr)),
                    (*trans, like(*trans, gt)),
                ]
            }
            Op::Custom { op, inputs, saved } => {
                let values: Vec<&Tensor> = inputs.iter().map(|v| val(*v)).collect();
                let grads = op.0.backward(&values, out, saved.as_ref(), g)?;
                if grads.len() != inputs.len() {
                    return Err(GradError::CustomArity {
                        op: op.name().to_string(),
                        expected: inputs.len(),
                        got: grads.len(),
                    });
                }
                let mut out = Vec::new();
                for (input, gi) in inputs.iter().zip(grads) {
                    if let Some(gi) = gi {
                        if gi.shape() != val(*input).shape() {
                            return Err(shape_err(
                                "custom backward",
                                format!(
                                    "{}: gradient {:?} for input {:?}",
                                    op.name(),
                                    gi.shape(),
                                    val(*input).shape()
                                ),
                            ));
                        }
                        out.push((*input, gi));
                    }
                }
                out
            }
        })
    }
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub(crate) fn rotation_entries(q: &[f64]) -> [[f64; 3]; 3] {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

/// `∂R/∂w, ∂R/∂x, ∂R/∂y, ∂R/∂z` for [`rotation_entries`].
fn rotation_partials(q: &[f64]) -> [[[f64; 3]; 3]; 4] {
    let (w, x, y, z) = (2.0 * q[0], 2.0 * q[1], 2.0 * q[2], 2.0 * q[3]);
    [
        [[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]],
        [[0.0, y, z], [y, -2.0 * x, -w], [z, w, -2.0 * x]],
        [[-2.0 * y, x, w], [x, 0.0, z], [-w, z, -2.0 * y]],
        [[-2.0 * z, -w, x], [w, -2.0 * z, y], [x, y, 0.0]],
    ]
}
