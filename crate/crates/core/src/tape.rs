//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records primitive operations during a forward pass; each node
//! stores its output and a gradient buffer. [`Tape::backward`] walks the
//! node list in reverse (construction order is topological by design) and
//! propagates gradients, visiting each node exactly once.
//!
//! Values are `f32`; every reduction (convolution and dense dot products,
//! sums, means, softmax denominators, loss terms) accumulates in `f64`
//! before rounding back.
//!
//! One tape per worker: the tape is deliberately not `Sync`. Parallelism
//! belongs at the per-image level in callers.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{ArwError, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that
/// created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Val(usize);

/// Precomputed sparse linear map, `out[r] += w * in[i]` per `(r, i, w)`
/// triplet. Used for differentiable patch warps.
#[derive(Debug)]
pub struct SparseMap {
    pub out_shape: Vec<usize>,
    pub triplets: Vec<(u32, u32, f32)>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { input: Val, kernel: Val, stride: usize },
    PadReplicate { a: Val, pad: usize },
    Dense { x: Val, w: Val, b: Val },
    BiasChannels { a: Val, bias: Val },
    Relu { a: Val },
    Sigmoid { a: Val },
    Softmax { a: Val },
    CrossEntropy { logits: Val, label: usize },
    BceLogits { logits: Val, targets: Val },
    Mse { a: Val, b: Val },
    Add { a: Val, b: Val },
    Sub { a: Val, b: Val },
    Mul { a: Val, b: Val },
    Div { a: Val, b: Val },
    Scale { a: Val, #[allow(dead_code)] c: f32 },
    AddConst { a: Val, #[allow(dead_code)] c: f32 },
    Affine { a: Val, scale: Vec<f32>, #[allow(dead_code)] offset: Vec<f32> },
    Sum { a: Val },
    Mean { a: Val },
    Gather { a: Val, indices: Vec<usize> },
    SparseLinear { a: Val, map: Rc<SparseMap> },
    Nps { a: Val, palette: Rc<Vec<[f32; 3]>> },
    Reshape { a: Val },
    Sqrt { a: Val },
    Exp { a: Val },
    Ln { a: Val },
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    data: Vec<f32>,
    grad: Vec<f32>,
}

struct Inner {
    nodes: Vec<Node>,
    ran_backward: bool,
}

/// Recording tape for reverse-mode differentiation.
pub struct Tape {
    inner: RefCell<Inner>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            inner: RefCell::new(Inner {
                nodes: Vec::new(),
                ran_backward: false,
            }),
        }
    }

    fn push(&self, op: Op, shape: Vec<usize>, data: Vec<f32>) -> Val {
        let mut inner = self.inner.borrow_mut();
        let n = data.len();
        inner.nodes.push(Node {
            op,
            shape,
            data,
            grad: vec![0.0; n],
        });
        Val(inner.nodes.len() - 1)
    }

    /// Lifts a tensor onto the tape as a leaf.
    pub fn leaf(&self, t: &Tensor) -> Val {
        self.push(Op::Leaf, t.shape().to_vec(), t.data().to_vec())
    }

    pub fn leaf_scalar(&self, v: f32) -> Val {
        self.push(Op::Leaf, vec![1], vec![v])
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self, v: Val) -> Vec<usize> {
        self.inner.borrow().nodes[v.0].shape.clone()
    }

    pub fn value(&self, v: Val) -> Tensor {
        let inner = self.inner.borrow();
        let node = &inner.nodes[v.0];
        Tensor::from_vec(&node.shape, node.data.clone()).expect("tape node holds a valid tensor")
    }

    /// Scalar value of a one-element node.
    pub fn scalar_value(&self, v: Val) -> Result<f32> {
        let inner = self.inner.borrow();
        let node = &inner.nodes[v.0];
        if node.data.len() != 1 {
            return Err(ArwError::contract("scalar_value on non-scalar node"));
        }
        Ok(node.data[0])
    }

    /// Smallest |pre-activation| over every relu recorded on the tape;
    /// `None` when no relu was recorded. Central-difference gradient
    /// checks use this to reject evaluation points that sit on a kink.
    pub fn min_relu_input_abs(&self) -> Option<f32> {
        let inner = self.inner.borrow();
        let mut best: Option<f32> = None;
        for node in &inner.nodes {
            if let Op::Relu { a } = node.op {
                let m = inner.nodes[a.0]
                    .data
                    .iter()
                    .map(|v| v.abs())
                    .fold(f32::INFINITY, f32::min);
                best = Some(best.map_or(m, |b: f32| b.min(m)));
            }
        }
        best
    }

    /// Gradient of the last [`backward`](Tape::backward) root w.r.t. `v`.
    pub fn grad(&self, v: Val) -> Result<Tensor> {
        let inner = self.inner.borrow();
        if !inner.ran_backward {
            return Err(ArwError::contract("grad requested before backward"));
        }
        let node = &inner.nodes[v.0];
        Tensor::from_vec(&node.shape, node.grad.clone())
    }

    // ── elementwise and structural ops ──────────────────────────────────

    pub fn relu(&self, a: Val) -> Val {
        let (shape, data) = {
            let inner = self.inner.borrow();
            let n = &inner.nodes[a.0];
            (n.shape.clone(), n.data.iter().map(|&v| v.max(0.0)).collect())
        };
        self.push(Op::Relu { a }, shape, data)
    }

    pub fn sigmoid(&self, a: Val) -> Val {
        let (shape, data) = {
            let inner = self.inner.borrow();
            let n = &inner.nodes[a.0];
            (
                n.shape.clone(),
                n.data.iter().map(|&v| stable_sigmoid(v)).collect(),
            )
        };
        self.push(Op::Sigmoid { a }, shape, data)
    }

    pub fn scale(&self, a: Val, c: f32) -> Val {
        let (shape, data) = {
            let inner = self.inner.borrow();
            let n = &inner.nodes[a.0];
            (n.shape.clone(), n.data.iter().map(|&v| v * c).collect())
        };
        self.push(Op::Scale { a, c }, shape, data)
    }

    pub fn add_const(&self, a: Val, c: f32) -> Val {
        let (shape, data) = {
            let inner = self.inner.borrow();
            let n = &inner.nodes[a.0];
            (n.shape.clone(), n.data.iter().map(|&v| v + c).collect())
        };
        self.push(Op::AddConst { a, c }, shape, data)
    }

    /// Elementwise `a * scale + offset` with constant vectors.
    pub fn affine(&self, a: Val, scale: Vec<f32>, offset: Vec<f32>) -> Result<Val> {
        let (shape, data) = {
            let inner = self.inner.borrow();
            let n = &inner.nodes[a.0];
            if scale.len() != n.data.len() || offset.len() != n.data.len() {
                return Err(ArwError::dimension("affine: coefficient length mismatch"));
            }
            let data: Vec<f32> = n
                .data
                .iter()
                .zip(scale.iter().zip(&offset))
                .map(|(&v, (&s, &o))| v * s + o)
                .collect();
            (n.shape.clone(), data)
        };
        Ok(self.push(Op::Affine { a, scale, offset }, shape, data))
    }

    pub fn sqrt(&self, a: Val) -> Result<Val> {
        let (shape, data) = {
            let inner = self.inner.borrow();
            let n = &inner.nodes[a.0];
            if n.data.iter().any(|&v| v <= 0.0) {
                return Err(ArwError::contract("sqrt requires strictly positive input"));
            }
            (
                n.shape.clone(),
                n.data.iter().map(|&v| v.sqrt()).collect::<Vec<f32>>(),
            )
        };
        Ok(self.push(Op::Sqrt { a }, shape, data))
    }

    pub fn exp(&self, a: Val) -> Val {
        let (shape, data) = {
            let inner = self.inner.borrow();
            let n = &inner.nodes[a.0];
            (
                n.shape.clone(),
                n.data.iter().map(|&v| (v as f64).exp() as f32).collect(),
            )
        };
        self.push(Op::Exp { a }, shape, data)
    }

    pub fn ln(&self, a: Val) -> Result<Val> {
        let (shape, data) = {
            let inner = self.inner.borrow();
            let n = &inner.nodes[a.0];
            if n.data.iter().any(|&v| v <= 0.0) {
                return Err(ArwError::contract("ln requires strictly positive input"));
            }
            (
                n.shape.clone(),
                n.data.iter().map(|&v| v.ln()).collect::<Vec<f32>>(),
            )
        };
        Ok(self.push(Op::Ln { a }, shape, data))
    }

    fn binary_same_shape(&self, a: Val, b: Val, name: &str) -> Result<Vec<usize>> {
        let inner = self.inner.borrow();
        let sa = &inner.nodes[a.0].shape;
        let sb = &inner.nodes[b.0].shape;
        if sa != sb {
            return Err(ArwError::dimension(format!("{name}: {sa:?} vs {sb:?}")));
        }
        Ok(sa.clone())
    }

    pub fn add(&self, a: Val, b: Val) -> Result<Val> {
        let shape = self.binary_same_shape(a, b, "add")?;
        let data = {
            let inner = self.inner.borrow();
            zip_map(&inner.nodes[a.0].data, &inner.nodes[b.0].data, |x, y| x + y)
        };
        Ok(self.push(Op::Add { a, b }, shape, data))
    }

    pub fn sub(&self, a: Val, b: Val) -> Result<Val> {
        let shape = self.binary_same_shape(a, b, "sub")?;
        let data = {
            let inner = self.inner.borrow();
            zip_map(&inner.nodes[a.0].data, &inner.nodes[b.0].data, |x, y| x - y)
        };
        Ok(self.push(Op::Sub { a, b }, shape, data))
    }

    pub fn mul(&self, a: Val, b: Val) -> Result<Val> {
        let shape = self.binary_same_shape(a, b, "mul")?;
        let data = {
            let inner = self.inner.borrow();
            zip_map(&inner.nodes[a.0].data, &inner.nodes[b.0].data, |x, y| x * y)
        };
        Ok(self.push(Op::Mul { a, b }, shape, data))
    }

    pub fn div(&self, a: Val, b: Val) -> Result<Val> {
        let shape = self.binary_same_shape(a, b, "div")?;
        let data = {
            let inner = self.inner.borrow();
            if inner.nodes[b.0].data.iter().any(|&v| v == 0.0) {
                return Err(ArwError::contract("div by zero"));
            }
            zip_map(&inner.nodes[a.0].data, &inner.nodes[b.0].data, |x, y| x / y)
        };
        Ok(self.push(Op::Div { a, b }, shape, data))
    }

    pub fn sum(&self, a: Val) -> Val {
        let total: f64 = {
            let inner = self.inner.borrow();
            inner.nodes[a.0].data.iter().map(|&v| v as f64).sum()
        };
        self.push(Op::Sum { a }, vec![1], vec![total as f32])
    }

    pub fn mean(&self, a: Val) -> Val {
        let (total, n) = {
            let inner = self.inner.borrow();
            let d = &inner.nodes[a.0].data;
            (d.iter().map(|&v| v as f64).sum::<f64>(), d.len())
        };
        self.push(Op::Mean { a }, vec![1], vec![(total / n as f64) as f32])
    }

    /// New tensor out[k] = a[indices[k]].
    pub fn gather(&self, a: Val, indices: Vec<usize>) -> Result<Val> {
        let data = {
            let inner = self.inner.borrow();
            let src = &inner.nodes[a.0].data;
            if let Some(&bad) = indices.iter().find(|&&i| i >= src.len()) {
                return Err(ArwError::index(format!(
                    "gather index {bad} out of {}",
                    src.len()
                )));
            }
            indices.iter().map(|&i| src[i]).collect::<Vec<f32>>()
        };
        let shape = vec![indices.len()];
        Ok(self.push(Op::Gather { a, indices }, shape, data))
    }

    pub fn reshape(&self, a: Val, shape: &[usize]) -> Result<Val> {
        let data = {
            let inner = self.inner.borrow();
            let n = &inner.nodes[a.0];
            if shape.iter().product::<usize>() != n.data.len() {
                return Err(ArwError::dimension(format!(
                    "reshape {:?} -> {:?}",
                    n.shape, shape
                )));
            }
            n.data.clone()
        };
        Ok(self.push(Op::Reshape { a }, shape.to_vec(), data))
    }

    /// Applies a precomputed sparse linear map (e.g. a bilinear warp).
    pub fn sparse_linear(&self, a: Val, map: Rc<SparseMap>) -> Result<Val> {
        let out_n: usize = map.out_shape.iter().product();
        let data = {
            let inner = self.inner.borrow();
            let src = &inner.nodes[a.0].data;
            let mut acc = vec![0.0f64; out_n];
            for &(r, i, w) in &map.triplets {
                let (r, i) = (r as usize, i as usize);
                if r >= out_n || i >= src.len() {
                    return Err(ArwError::index("sparse_linear triplet out of range"));
                }
                acc[r] += w as f64 * src[i] as f64;
            }
            acc.into_iter().map(|v| v as f32).collect::<Vec<f32>>()
        };
        let shape = map.out_shape.clone();
        Ok(self.push(Op::SparseLinear { a, map }, shape, data))
    }

    /// Non-printability score: for a flat tensor of interleaved RGB
    /// triples, the sum over pixels of the distance to the nearest
    /// palette color.
    pub fn nps(&self, a: Val, palette: Rc<Vec<[f32; 3]>>) -> Result<Val> {
        let value = {
            let inner = self.inner.borrow();
            let n = &inner.nodes[a.0];
            if n.data.len() % 3 != 0 {
                return Err(ArwError::dimension("nps expects interleaved RGB triples"));
            }
            if palette.is_empty() {
                return Err(ArwError::contract("nps palette is empty"));
            }
            let mut total = 0.0f64;
            for px in n.data.chunks_exact(3) {
                let mut best = f64::INFINITY;
                for c in palette.iter() {
                    let d = (px[0] as f64 - c[0] as f64).powi(2)
                        + (px[1] as f64 - c[1] as f64).powi(2)
                        + (px[2] as f64 - c[2] as f64).powi(2);
                    best = best.min(d);
                }
                total += best.sqrt();
            }
            total as f32
        };
        Ok(self.push(Op::Nps { a, palette }, vec![1], vec![value]))
    }

    // ── neural-network primitives ───────────────────────────────────────

    /// Valid (no padding) 2-D convolution.
    ///
    /// `input` is H×W×Cin, `kernel` is kh×kw×Cin×Cout; the output is
    /// H'×W'×Cout with H' = floor((H-kh)/stride)+1.
    pub fn conv2d(&self, input: Val, kernel: Val, stride: usize) -> Result<Val> {
        let (out_shape, data) = {
            let inner = self.inner.borrow();
            let inp = &inner.nodes[input.0];
            let ker = &inner.nodes[kernel.0];
            if stride < 1 {
                return Err(ArwError::contract("conv2d stride must be >= 1"));
            }
            if inp.shape.len() != 3 || ker.shape.len() != 4 {
                return Err(ArwError::dimension(format!(
                    "conv2d expects HxWxC input and khxkwxCinxCout kernel, got {:?} and {:?}",
                    inp.shape, ker.shape
                )));
            }
            let (h, w, cin) = (inp.shape[0], inp.shape[1], inp.shape[2]);
            let (kh, kw, kcin, cout) = (ker.shape[0], ker.shape[1], ker.shape[2], ker.shape[3]);
            if kcin != cin {
                return Err(ArwError::dimension(format!(
                    "conv2d channel mismatch: input {cin}, kernel {kcin}"
                )));
            }
            if kh > h || kw > w {
                return Err(ArwError::dimension(format!(
                    "conv2d kernel {kh}x{kw} larger than input {h}x{w}"
                )));
            }
            let oh = (h - kh) / stride + 1;
            let ow = (w - kw) / stride + 1;
            let mut out = vec![0.0f32; oh * ow * cout];
            let mut acc = vec![0.0f64; cout];
            for oy in 0..oh {
                for ox in 0..ow {
                    acc.iter_mut().for_each(|v| *v = 0.0);
                    for dy in 0..kh {
                        for dx in 0..kw {
                            let iy = oy * stride + dy;
                            let ix = ox * stride + dx;
                            let in_base = (iy * w + ix) * cin;
                            let k_base = (dy * kw + dx) * cin;
                            for ci in 0..cin {
                                let v = inp.data[in_base + ci] as f64;
                                let kb = (k_base + ci) * cout;
                                for (co, a) in acc.iter_mut().enumerate() {
                                    *a += v * ker.data[kb + co] as f64;
                                }
                            }
                        }
                    }
                    let ob = (oy * ow + ox) * cout;
                    for co in 0..cout {
                        out[ob + co] = acc[co] as f32;
                    }
                }
            }
            (vec![oh, ow, cout], out)
        };
        Ok(self.push(Op::Conv2d { input, kernel, stride }, out_shape, data))
    }

    /// Replication padding of an H×W×C tensor by `pad` on each spatial side.
    pub fn pad_replicate(&self, a: Val, pad: usize) -> Result<Val> {
        let (out_shape, data) = {
            let inner = self.inner.borrow();
            let n = &inner.nodes[a.0];
            if n.shape.len() != 3 {
                return Err(ArwError::dimension("pad_replicate expects HxWxC"));
            }
            let (h, w, c) = (n.shape[0], n.shape[1], n.shape[2]);
            let (oh, ow) = (h + 2 * pad, w + 2 * pad);
            let mut out = vec![0.0f32; oh * ow * c];
            for oy in 0..oh {
                let iy = oy.saturating_sub(pad).min(h - 1);
                for ox in 0..ow {
                    let ix = ox.saturating_sub(pad).min(w - 1);
                    let src = (iy * w + ix) * c;
                    let dst = (oy * ow + ox) * c;
                    out[dst..dst + c].copy_from_slice(&n.data[src..src + c]);
                }
            }
            (vec![oh, ow, c], out)
        };
        Ok(self.push(Op::PadReplicate { a, pad }, out_shape, data))
    }

    /// Fully connected layer: out[j] = sum_i x[i] * w[i,j] + b[j].
    pub fn dense(&self, x: Val, w: Val, b: Val) -> Result<Val> {
        let (m, data) = {
            let inner = self.inner.borrow();
            let xn = &inner.nodes[x.0];
            let wn = &inner.nodes[w.0];
            let bn = &inner.nodes[b.0];
            if wn.shape.len() != 2 {
                return Err(ArwError::dimension("dense weights must be rank 2"));
            }
            let (n, m) = (wn.shape[0], wn.shape[1]);
            if xn.data.len() != n {
                return Err(ArwError::dimension(format!(
                    "dense: input length {} vs weight rows {n}",
                    xn.data.len()
                )));
            }
            if bn.data.len() != m {
                return Err(ArwError::dimension(format!(
                    "dense: bias length {} vs weight cols {m}",
                    bn.data.len()
                )));
            }
            let mut out = vec![0.0f32; m];
            for j in 0..m {
                let mut acc = bn.data[j] as f64;
                for i in 0..n {
                    acc += xn.data[i] as f64 * wn.data[i * m + j] as f64;
                }
                out[j] = acc as f32;
            }
            (m, out)
        };
        Ok(self.push(Op::Dense { x, w, b }, vec![m], data))
    }

    /// Adds a per-channel bias to an H×W×C tensor.
    pub fn bias_channels(&self, a: Val, bias: Val) -> Result<Val> {
        let (shape, data) = {
            let inner = self.inner.borrow();
            let an = &inner.nodes[a.0];
            let bn = &inner.nodes[bias.0];
            if an.shape.len() != 3 || bn.data.len() != an.shape[2] {
                return Err(ArwError::dimension(format!(
                    "bias_channels: input {:?}, bias {:?}",
                    an.shape, bn.shape
                )));
            }
            let c = an.shape[2];
            let data: Vec<f32> = an
                .data
                .iter()
                .enumerate()
                .map(|(k, &v)| v + bn.data[k % c])
                .collect();
            (an.shape.clone(), data)
        };
        Ok(self.push(Op::BiasChannels { a, bias }, shape, data))
    }

    /// Softmax over the whole (rank-1) tensor.
    pub fn softmax(&self, a: Val) -> Val {
        let (shape, data) = {
            let inner = self.inner.borrow();
            let n = &inner.nodes[a.0];
            (n.shape.clone(), softmax_stable(&n.data))
        };
        self.push(Op::Softmax { a }, shape, data)
    }

    /// Negative log softmax probability of `label`.
    pub fn cross_entropy(&self, logits: Val, label: usize) -> Result<Val> {
        let value = {
            let inner = self.inner.borrow();
            let n = &inner.nodes[logits.0];
            if label >= n.data.len() {
                return Err(ArwError::index(format!(
                    "label {label} out of {} classes",
                    n.data.len()
                )));
            }
            let max = n.data.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let lse: f64 = n
                .data
                .iter()
                .map(|&v| ((v - max) as f64).exp())
                .sum::<f64>()
                .ln()
                + max as f64;
            (lse - n.data[label] as f64) as f32
        };
        Ok(self.push(Op::CrossEntropy { logits, label }, vec![1], vec![value]))
    }

    /// Mean binary cross-entropy with logits; `targets` are in [0,1].
    pub fn bce_logits(&self, logits: Val, targets: Val) -> Result<Val> {
        let value = {
            let inner = self.inner.borrow();
            let zn = &inner.nodes[logits.0];
            let tn = &inner.nodes[targets.0];
            if zn.data.len() != tn.data.len() {
                return Err(ArwError::dimension("bce_logits: length mismatch"));
            }
            let mut acc = 0.0f64;
            for (&z, &t) in zn.data.iter().zip(&tn.data) {
                let (z, t) = (z as f64, t as f64);
                acc += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
            }
            (acc / zn.data.len() as f64) as f32
        };
        Ok(self.push(Op::BceLogits { logits, targets }, vec![1], vec![value]))
    }

    /// Mean squared error over all elements.
    pub fn mse(&self, a: Val, b: Val) -> Result<Val> {
        self.binary_same_shape(a, b, "mse")?;
        let value = {
            let inner = self.inner.borrow();
            let an = &inner.nodes[a.0];
            let bn = &inner.nodes[b.0];
            let acc: f64 = an
                .data
                .iter()
                .zip(&bn.data)
                .map(|(&x, &y)| {
                    let d = x as f64 - y as f64;
                    d * d
                })
                .sum();
            (acc / an.data.len() as f64) as f32
        };
        Ok(self.push(Op::Mse { a, b }, vec![1], vec![value]))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Backpropagates from a scalar root, populating every node's gradient.
    pub fn backward(&self, root: Val) -> Result<()> {
        let mut inner = self.inner.borrow_mut();
        if inner.nodes[root.0].data.len() != 1 {
            return Err(ArwError::contract("backward root must be scalar"));
        }
        for node in inner.nodes.iter_mut() {
            node.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        inner.nodes[root.0].grad[0] = 1.0;

        for i in (0..=root.0).rev() {
            let (before, rest) = inner.nodes.split_at_mut(i);
            let node = &mut rest[0];
            match &node.op {
                Op::Leaf => {}
                Op::Relu { a } => {
                    let an = &mut before[a.0];
                    for k in 0..node.grad.len() {
                        if an.data[k] > 0.0 {
                            an.grad[k] += node.grad[k];
                        }
                    }
                }
                Op::Sigmoid { a } => {
                    let an = &mut before[a.0];
                    for k in 0..node.grad.len() {
                        let s = node.data[k];
                        an.grad[k] += node.grad[k] * s * (1.0 - s);
                    }
                }
                Op::Scale { a, c } => {
                    let an = &mut before[a.0];
                    for k in 0..node.grad.len() {
                        an.grad[k] += node.grad[k] * c;
                    }
                }
                Op::AddConst { a, .. } => {
                    let an = &mut before[a.0];
                    for k in 0..node.grad.len() {
                        an.grad[k] += node.grad[k];
                    }
                }
                Op::Affine { a, scale, .. } => {
                    let an = &mut before[a.0];
                    for k in 0..node.grad.len() {
                        an.grad[k] += node.grad[k] * scale[k];
                    }
                }
                Op::Sqrt { a } => {
                    let an = &mut before[a.0];
                    for k in 0..node.grad.len() {
                        an.grad[k] += node.grad[k] / (2.0 * node.data[k]);
                    }
                }
                Op::Exp { a } => {
                    let an = &mut before[a.0];
                    for k in 0..node.grad.len() {
                        an.grad[k] += node.grad[k] * node.data[k];
                    }
                }
                Op::Ln { a } => {
                    let an = &mut before[a.0];
                    for k in 0..node.grad.len() {
                        an.grad[k] += node.grad[k] / an.data[k];
                    }
                }
                Op::Add { a, b } => {
                    let (a, b) = (a.0, b.0);
                    for k in 0..node.grad.len() {
                        before[a].grad[k] += node.grad[k];
                    }
                    for k in 0..node.grad.len() {
                        before[b].grad[k] += node.grad[k];
                    }
                }
                Op::Sub { a, b } => {
                    let (a, b) = (a.0, b.0);
                    for k in 0..node.grad.len() {
                        before[a].grad[k] += node.grad[k];
                    }
                    for k in 0..node.grad.len() {
                        before[b].grad[k] -= node.grad[k];
                    }
                }
                Op::Mul { a, b } => {
                    let (a, b) = (a.0, b.0);
                    for k in 0..node.grad.len() {
                        let (av, bv) = (before[a].data[k], before[b].data[k]);
                        before[a].grad[k] += node.grad[k] * bv;
                        before[b].grad[k] += node.grad[k] * av;
                    }
                }
                Op::Div { a, b } => {
                    let (a, b) = (a.0, b.0);
                    for k in 0..node.grad.len() {
                        let (av, bv) = (before[a].data[k], before[b].data[k]);
                        before[a].grad[k] += node.grad[k] / bv;
                        before[b].grad[k] -= node.grad[k] * av / (bv * bv);
                    }
                }
                Op::Sum { a } => {
                    let an = &mut before[a.0];
                    let go = node.grad[0];
                    for g in an.grad.iter_mut() {
                        *g += go;
                    }
                }
                Op::Mean { a } => {
                    let an = &mut before[a.0];
                    let go = node.grad[0] / an.data.len() as f32;
                    for g in an.grad.iter_mut() {
                        *g += go;
                    }
                }
                Op::Gather { a, indices } => {
                    let an = &mut before[a.0];
                    for (k, &idx) in indices.iter().enumerate() {
                        an.grad[idx] += node.grad[k];
                    }
                }
                Op::SparseLinear { a, map } => {
                    let an = &mut before[a.0];
                    for &(r, i, w) in &map.triplets {
                        an.grad[i as usize] += w * node.grad[r as usize];
                    }
                }
                Op::Reshape { a } => {
                    let an = &mut before[a.0];
                    for k in 0..node.grad.len() {
                        an.grad[k] += node.grad[k];
                    }
                }
                Op::Nps { a, palette } => {
                    let an = &mut before[a.0];
                    let go = node.grad[0];
                    for (pi, px) in an.data.chunks_exact(3).enumerate() {
                        let mut best = f32::INFINITY;
                        let mut best_c = [0.0f32; 3];
                        for c in palette.iter() {
                            let d = (px[0] - c[0]).powi(2)
                                + (px[1] - c[1]).powi(2)
                                + (px[2] - c[2]).powi(2);
                            if d < best {
                                best = d;
                                best_c = *c;
                            }
                        }
                        let dist = best.sqrt();
                        if dist > 1e-9 {
                            for k in 0..3 {
                                an.grad[pi * 3 + k] += go * (px[k] - best_c[k]) / dist;
                            }
                        }
                    }
                }
                Op::Softmax { a } => {
                    let an = &mut before[a.0];
                    let dot: f64 = node
                        .grad
                        .iter()
                        .zip(&node.data)
                        .map(|(&g, &s)| g as f64 * s as f64)
                        .sum();
                    for k in 0..node.grad.len() {
                        an.grad[k] +=
                            (node.data[k] as f64 * (node.grad[k] as f64 - dot)) as f32;
                    }
                }
                Op::CrossEntropy { logits, label } => {
                    let ln = &mut before[logits.0];
                    let probs = softmax_stable(&ln.data);
                    let go = node.grad[0];
                    for (k, &p) in probs.iter().enumerate() {
                        let indicator = if k == *label { 1.0 } else { 0.0 };
                        ln.grad[k] += go * (p - indicator);
                    }
                }
                Op::BceLogits { logits, targets } => {
                    let go = node.grad[0];
                    let (li, ti) = (logits.0, targets.0);
                    let n = before[li].data.len() as f32;
                    for k in 0..before[li].data.len() {
                        let s = stable_sigmoid(before[li].data[k]);
                        let t = before[ti].data[k];
                        let z = before[li].data[k];
                        before[li].grad[k] += go * (s - t) / n;
                        before[ti].grad[k] += go * (-z) / n;
                    }
                }
                Op::Mse { a, b } => {
                    let go = node.grad[0];
                    let (ai, bi) = (a.0, b.0);
                    let n = before[ai].data.len() as f32;
                    for k in 0..before[ai].data.len() {
                        let d = before[ai].data[k] - before[bi].data[k];
                        before[ai].grad[k] += go * 2.0 * d / n;
                        before[bi].grad[k] -= go * 2.0 * d / n;
                    }
                }
                Op::BiasChannels { a, bias } => {
                    let (ai, bi) = (a.0, bias.0);
                    let c = before[bi].data.len();
                    let mut acc = vec![0.0f64; c];
                    for k in 0..node.grad.len() {
                        before[ai].grad[k] += node.grad[k];
                        acc[k % c] += node.grad[k] as f64;
                    }
                    for (k, a) in acc.iter().enumerate() {
                        before[bi].grad[k] += *a as f32;
                    }
                }
                Op::Dense { x, w, b } => {
                    let (xi, wi, bi) = (x.0, w.0, b.0);
                    let n = before[xi].data.len();
                    let m = node.data.len();
                    for i in 0..n {
                        let mut acc = 0.0f64;
                        for j in 0..m {
                            acc += node.grad[j] as f64 * before[wi].data[i * m + j] as f64;
                        }
                        before[xi].grad[i] += acc as f32;
                    }
                    for i in 0..n {
                        let xv = before[xi].data[i];
                        for j in 0..m {
                            before[wi].grad[i * m + j] += xv * node.grad[j];
                        }
                    }
                    for j in 0..m {
                        before[bi].grad[j] += node.grad[j];
                    }
                }
                Op::Conv2d { input, kernel, stride } => {
                    let (ii, ki, s) = (input.0, kernel.0, *stride);
                    let (_h, w, cin) = {
                        let sh = &before[ii].shape;
                        (sh[0], sh[1], sh[2])
                    };
                    let (kh, kw, _, cout) = {
                        let sh = &before[ki].shape;
                        (sh[0], sh[1], sh[2], sh[3])
                    };
                    let oh = node.shape[0];
                    let ow = node.shape[1];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let ob = (oy * ow + ox) * cout;
                            for dy in 0..kh {
                                for dx in 0..kw {
                                    let iy = oy * s + dy;
                                    let ix = ox * s + dx;
                                    let in_base = (iy * w + ix) * cin;
                                    let k_base = (dy * kw + dx) * cin;
                                    for ci in 0..cin {
                                        let kb = (k_base + ci) * cout;
                                        let xv = before[ii].data[in_base + ci];
                                        let mut din = 0.0f32;
                                        for co in 0..cout {
                                            let go = node.grad[ob + co];
                                            din += go * before[ki].data[kb + co];
                                            before[ki].grad[kb + co] += go * xv;
                                        }
                                        before[ii].grad[in_base + ci] += din;
                                    }
                                }
                            }
                        }
                    }
                }
                Op::PadReplicate { a, pad } => {
                    let an = &mut before[a.0];
                    let (h, w, c) = (an.shape[0], an.shape[1], an.shape[2]);
                    let ow = node.shape[1];
                    let oh = node.shape[0];
                    for oy in 0..oh {
                        let iy = oy.saturating_sub(*pad).min(h - 1);
                        for ox in 0..ow {
                            let ix = ox.saturating_sub(*pad).min(w - 1);
                            let src = (iy * w + ix) * c;
                            let dst = (oy * ow + ox) * c;
                            for ch in 0..c {
                                an.grad[src + ch] += node.grad[dst + ch];
                            }
                        }
                    }
                }
            }
        }
        inner.ran_backward = true;
        Ok(())
    }
}

fn zip_map(a: &[f32], b: &[f32], f: impl Fn(f32, f32) -> f32) -> Vec<f32> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn stable_sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_stable(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f64> = logits.iter().map(|&v| ((v - max) as f64).exp()).collect();
    let denom: f64 = exps.iter().sum();
    exps.iter().map(|&e| (e / denom) as f32).collect()
}

/// Central-difference gradient audit.
///
/// Runs `f` through a tape to get the analytic gradient at `x`, then
/// compares every coordinate against (f(x+h) - f(x-h)) / 2h. Returns the
/// maximum relative error |analytic - numeric| / max(1, |analytic|).
pub fn finite_diff_check<F>(f: &F, x: &Tensor, h: f32) -> Result<f32>
where
    F: Fn(&Tape, Val) -> Result<Val>,
{
    let indices: Vec<usize> = (0..x.numel()).collect();
    finite_diff_check_at(f, x, h, &indices)
}

/// Central-difference audit over a seeded random subset of coordinates.
/// For image-sized inputs an exhaustive sweep is needlessly slow; a few
/// hundred sampled coordinates give the same failure power.
pub fn finite_diff_check_sampled<F>(
    f: &F,
    x: &Tensor,
    h: f32,
    max_coords: usize,
    seed: u64,
) -> Result<f32>
where
    F: Fn(&Tape, Val) -> Result<Val>,
{
    let mut indices: Vec<usize> = (0..x.numel()).collect();
    if indices.len() > max_coords {
        let mut rng = crate::rng::Rng::new(seed);
        rng.shuffle(&mut indices);
        indices.truncate(max_coords);
    }
    finite_diff_check_at(f, x, h, &indices)
}

fn finite_diff_check_at<F>(f: &F, x: &Tensor, h: f32, indices: &[usize]) -> Result<f32>
where
    F: Fn(&Tape, Val) -> Result<Val>,
{
    finite_diff_check_impl(f, x, &[h], indices)
}

/// Like [`finite_diff_check_sampled`], but each coordinate's error is the
/// minimum over step sizes {h, h/4}. A relu kink inside one window but
/// not the other produces a spurious mismatch at a single h; a genuine
/// gradient bug persists at every h. Intended for whole-model losses
/// where some pre-activation always sits near a kink.
pub fn finite_diff_check_robust<F>(
    f: &F,
    x: &Tensor,
    h: f32,
    max_coords: usize,
    seed: u64,
) -> Result<f32>
where
    F: Fn(&Tape, Val) -> Result<Val>,
{
    let mut indices: Vec<usize> = (0..x.numel()).collect();
    if indices.len() > max_coords {
        let mut rng = crate::rng::Rng::new(seed);
        rng.shuffle(&mut indices);
        indices.truncate(max_coords);
    }
    finite_diff_check_impl(f, x, &[h, h / 4.0], &indices)
}

fn finite_diff_check_impl<F>(f: &F, x: &Tensor, hs: &[f32], indices: &[usize]) -> Result<f32>
where
    F: Fn(&Tape, Val) -> Result<Val>,
{
    for &h in hs {
        if !(1e-5..=1e-2).contains(&h) {
            return Err(ArwError::contract(format!("h {h} outside [1e-5, 1e-2]")));
        }
    }
    let analytic = {
        let tape = Tape::new();
        let leaf = tape.leaf(x);
        let root = f(&tape, leaf)?;
        tape.backward(root)?;
        tape.grad(leaf)?
    };

    let eval = |t: &Tensor| -> Result<f32> {
        let tape = Tape::new();
        let leaf = tape.leaf(t);
        let root = f(&tape, leaf)?;
        tape.scalar_value(root)
    };

    let mut max_err = 0.0f32;
    let mut probe = x.clone();
    for &i in indices {
        let orig = probe.data()[i];
        let a = analytic.data()[i] as f64;
        let mut coord_err = f32::INFINITY;
        for &h in hs {
            probe.data_mut()[i] = orig + h;
            let plus = eval(&probe)?;
            probe.data_mut()[i] = orig - h;
            let minus = eval(&probe)?;
            probe.data_mut()[i] = orig;
            let numeric = (plus as f64 - minus as f64) / (2.0 * h as f64);
            let err = ((a - numeric).abs() / a.abs().max(1.0)) as f32;
            coord_err = coord_err.min(err);
        }
        max_err = max_err.max(coord_err);
    }
    Ok(max_err)
}
