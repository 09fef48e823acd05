//! Dense f64 tensors with a reverse-mode differentiation tape.
//!
//! Every numerical operation in the toolkit goes through [`Tape`] methods.
//! A tape records one forward pass; [`Tape::backward`] replays it in reverse
//! and returns gradients for trainable leaves. A frozen tape computes the
//! same values without recording.

use std::collections::HashMap;

use crate::error::{GeError, Result};

pub type NodeId = usize;

/// Dense row-major n-dimensional array of f64.
#[derive(Clone, Debug)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    /// Handle into the tape that produced this value, if any.
    pub node: Option<NodeId>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(GeError::Shape(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor {
            shape,
            data,
            node: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
            node: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
            node: None,
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
            node: None,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn detached(shape: Vec<usize>, data: Vec<f64>) -> Self {
        Tensor {
            shape,
            data,
            node: None,
        }
    }
}

/// Gradients of a scalar loss with respect to trainable leaves,
/// keyed by the leaf's node id.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: HashMap<NodeId, Tensor>,
}

impl Gradients {
    pub fn get(&self, leaf: &Tensor) -> Option<&Tensor> {
        leaf.node.and_then(|id| self.grads.get(&id))
    }

    pub fn get_by_id(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(&id)
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf {
        trainable: bool,
    },
    Add,
    Sub,
    /// Saves both operands.
    Mul {
        a: Tensor,
        b: Tensor,
    },
    Scale(f64),
    /// Saves the output; elu'(x) is recoverable from elu(x).
    Elu {
        out: Tensor,
    },
    Tanh {
        out: Tensor,
    },
    Sigmoid {
        out: Tensor,
    },
    MatMul {
        a: Tensor,
        b: Tensor,
    },
    Mse {
        a: Tensor,
        b: Tensor,
    },
    SqL2 {
        a: Tensor,
    },
    MeanAbsDiff {
        a: Tensor,
        b: Tensor,
    },
    Conv2d {
        input: Tensor,
        kernels: Tensor,
        stride: usize,
        padding: usize,
    },
    ConvTranspose2d {
        input: Tensor,
        kernels: Tensor,
        stride: usize,
        padding: usize,
    },
    UpsampleNearest {
        factor: usize,
        in_shape: Vec<usize>,
    },
    AvgPool {
        factor: usize,
        in_shape: Vec<usize>,
    },
    Reshape,
}

struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    out_shape: Vec<usize>,
}

/// Append-only record of one forward pass.
pub struct Tape {
    nodes: Vec<Node>,
    active: bool,
}

impl Tape {
    /// A recording tape for a forward+backward pass.
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            active: true,
        }
    }

    /// A non-recording tape: same arithmetic, no gradient bookkeeping.
    pub fn frozen() -> Self {
        Tape {
            nodes: Vec::new(),
            active: false,
        }
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register a tensor as a leaf. Trainable leaves receive gradients.
    pub fn leaf(&mut self, t: &Tensor, trainable: bool) -> Tensor {
        let mut out = t.clone();
        if self.active {
            let id = self.push(
                Op::Leaf { trainable },
                vec![],
                t.shape.clone(),
            );
            out.node = Some(id);
        } else {
            out.node = None;
        }
        out
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, out_shape: Vec<usize>) -> NodeId {
        self.nodes.push(Node {
            op,
            inputs,
            out_shape,
        });
        self.nodes.len() - 1
    }

    /// Input node id for recording: tensors not yet on the tape become
    /// constant (non-trainable) leaves.
    fn input_id(&mut self, t: &Tensor) -> NodeId {
        match t.node {
            Some(id) => id,
            None => self.push(Op::Leaf { trainable: false }, vec![], t.shape.clone()),
        }
    }

    fn record(
        &mut self,
        op: Op,
        inputs: &[&Tensor],
        mut out: Tensor,
    ) -> Result<Tensor> {
        if !out.all_finite() {
            return Err(GeError::Numeric(
                "non-finite value produced by tensor operation".into(),
            ));
        }
        if self.active {
            let ids: Vec<NodeId> = inputs.iter().map(|t| self.input_id(t)).collect();
            let id = self.push(op, ids, out.shape.clone());
            out.node = Some(id);
        }
        Ok(out)
    }

    // ── Elementwise and reduction ops ────────────────────────────────

    fn check_same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
        if a.shape != b.shape {
            return Err(GeError::Shape(format!(
                "operand shapes differ: {:?} vs {:?}",
                a.shape, b.shape
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Self::check_same_shape(a, b)?;
        let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
        let out = Tensor::detached(a.shape.clone(), data);
        self.record(Op::Add, &[a, b], out)
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Self::check_same_shape(a, b)?;
        let data = a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect();
        let out = Tensor::detached(a.shape.clone(), data);
        self.record(Op::Sub, &[a, b], out)
    }

    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Self::check_same_shape(a, b)?;
        let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
        let out = Tensor::detached(a.shape.clone(), data);
        self.record(
            Op::Mul {
                a: a.clone(),
                b: b.clone(),
            },
            &[a, b],
            out,
        )
    }

    pub fn scale(&mut self, a: &Tensor, c: f64) -> Result<Tensor> {
        let data = a.data.iter().map(|x| x * c).collect();
        let out = Tensor::detached(a.shape.clone(), data);
        self.record(Op::Scale(c), &[a], out)
    }

    pub fn elu(&mut self, a: &Tensor) -> Result<Tensor> {
        let data: Vec<f64> = a
            .data
            .iter()
            .map(|&x| if x >= 0.0 { x } else { x.exp() - 1.0 })
            .collect();
        let out = Tensor::detached(a.shape.clone(), data);
        self.record(Op::Elu { out: out.clone() }, &[a], out)
    }

    pub fn tanh(&mut self, a: &Tensor) -> Result<Tensor> {
        let data: Vec<f64> = a.data.iter().map(|x| x.tanh()).collect();
        let out = Tensor::detached(a.shape.clone(), data);
        self.record(Op::Tanh { out: out.clone() }, &[a], out)
    }

    pub fn sigmoid(&mut self, a: &Tensor) -> Result<Tensor> {
        let data: Vec<f64> = a.data.iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect();
        let out = Tensor::detached(a.shape.clone(), data);
        self.record(Op::Sigmoid { out: out.clone() }, &[a], out)
    }

    /// Mean of squared elementwise differences.
    pub fn mse(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Self::check_same_shape(a, b)?;
        let n = a.numel() as f64;
        let s: f64 = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let out = Tensor::scalar(s / n);
        self.record(
            Op::Mse {
                a: a.clone(),
                b: b.clone(),
            },
            &[a, b],
            out,
        )
    }

    /// Sum of squared elements.
    pub fn sq_l2(&mut self, a: &Tensor) -> Result<Tensor> {
        let s: f64 = a.data.iter().map(|x| x * x).sum();
        let out = Tensor::scalar(s);
        self.record(Op::SqL2 { a: a.clone() }, &[a], out)
    }

    /// Mean absolute elementwise difference (BEGAN reconstruction loss).
    pub fn mean_abs_diff(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Self::check_same_shape(a, b)?;
        let n = a.numel() as f64;
        let s: f64 = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| (x - y).abs())
            .sum();
        let out = Tensor::scalar(s / n);
        self.record(
            Op::MeanAbsDiff {
                a: a.clone(),
                b: b.clone(),
            },
            &[a, b],
            out,
        )
    }

    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape.len() != 2 || b.shape.len() != 2 {
            return Err(GeError::Shape(format!(
                "matmul needs 2-d operands, got {:?} and {:?}",
                a.shape, b.shape
            )));
        }
        let (r, k) = (a.shape[0], a.shape[1]);
        let (k2, c) = (b.shape[0], b.shape[1]);
        if k != k2 {
            return Err(GeError::Shape(format!(
                "matmul inner dimensions differ: {k} vs {k2}"
            )));
        }
        let data = matmul_raw(&a.data, &b.data, r, k, c);
        let out = Tensor::detached(vec![r, c], data);
        self.record(
            Op::MatMul {
                a: a.clone(),
                b: b.clone(),
            },
            &[a, b],
            out,
        )
    }

    pub fn reshape(&mut self, a: &Tensor, shape: Vec<usize>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != a.numel() {
            return Err(GeError::Shape(format!(
                "cannot reshape {:?} into {:?}",
                a.shape, shape
            )));
        }
        let out = Tensor::detached(shape, a.data.clone());
        self.record(Op::Reshape, &[a], out)
    }

    // ── Convolution family ───────────────────────────────────────────

    /// Cross-correlation with zero padding. `input` is [C,H,W],
    /// `kernels` [F,C,k,k], `bias` [F].
    pub fn conv2d(
        &mut self,
        input: &Tensor,
        kernels: &Tensor,
        bias: &Tensor,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        let (c, h, w) = dims3(input, "conv2d input")?;
        let (f, kc, kh, kw) = dims4(kernels, "conv2d kernels")?;
        if kh != kw || kh % 2 == 0 {
            return Err(GeError::Shape(format!("kernel must be square odd, got {kh}x{kw}")));
        }
        if kc != c {
            return Err(GeError::Shape(format!(
                "kernel channels {kc} do not match input channels {c}"
            )));
        }
        if bias.shape != vec![f] {
            return Err(GeError::Shape(format!(
                "bias shape {:?} does not match filter count {f}",
                bias.shape
            )));
        }
        let (ho, wo) = conv_out_size(h, w, kh, stride, padding)?;
        let data = conv2d_raw(&input.data, &kernels.data, &bias.data, c, h, w, f, kh, stride, padding, ho, wo);
        let out = Tensor::detached(vec![f, ho, wo], data);
        self.record(
            Op::Conv2d {
                input: input.clone(),
                kernels: kernels.clone(),
                stride,
                padding,
            },
            &[input, kernels, bias],
            out,
        )
    }

    /// Adjoint of [`Tape::conv2d`]'s linear map, plus bias. `input` is
    /// [F,H,W], `kernels` [F,C,k,k] (same layout as the paired conv2d),
    /// `bias` [C]. Output is [C,(H-1)*stride+k-2*padding, ...].
    pub fn conv2d_transpose(
        &mut self,
        input: &Tensor,
        kernels: &Tensor,
        bias: &Tensor,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        let (f, h, w) = dims3(input, "conv2d_transpose input")?;
        let (kf, c, kh, kw) = dims4(kernels, "conv2d_transpose kernels")?;
        if kh != kw || kh % 2 == 0 {
            return Err(GeError::Shape(format!("kernel must be square odd, got {kh}x{kw}")));
        }
        if kf != f {
            return Err(GeError::Shape(format!(
                "kernel filter count {kf} does not match input channels {f}"
            )));
        }
        if bias.shape != vec![c] {
            return Err(GeError::Shape(format!(
                "bias shape {:?} does not match output channels {c}",
                bias.shape
            )));
        }
        let (ho, wo) = conv_transpose_out_size(h, w, kh, stride, padding)?;
        let data = conv2d_transpose_raw(
            &input.data,
            &kernels.data,
            &bias.data,
            f,
            h,
            w,
            c,
            kh,
            stride,
            padding,
            ho,
            wo,
        );
        let out = Tensor::detached(vec![c, ho, wo], data);
        self.record(
            Op::ConvTranspose2d {
                input: input.clone(),
                kernels: kernels.clone(),
                stride,
                padding,
            },
            &[input, kernels, bias],
            out,
        )
    }

    /// Nearest-neighbor replication by an integer factor on [C,H,W].
    pub fn upsample_nearest(&mut self, input: &Tensor, factor: usize) -> Result<Tensor> {
        if factor < 2 {
            return Err(GeError::Shape("upsample factor must be >= 2".into()));
        }
        let (c, h, w) = dims3(input, "upsample input")?;
        let (ho, wo) = (h * factor, w * factor);
        let mut data = vec![0.0; c * ho * wo];
        for ch in 0..c {
            for y in 0..ho {
                for x in 0..wo {
                    data[(ch * ho + y) * wo + x] =
                        input.data[(ch * h + y / factor) * w + x / factor];
                }
            }
        }
        let out = Tensor::detached(vec![c, ho, wo], data);
        self.record(
            Op::UpsampleNearest {
                factor,
                in_shape: input.shape.clone(),
            },
            &[input],
            out,
        )
    }

    /// Block-mean pooling by an integer factor on [C,H,W].
    pub fn avgpool(&mut self, input: &Tensor, factor: usize) -> Result<Tensor> {
        if factor < 2 {
            return Err(GeError::Shape("avgpool factor must be >= 2".into()));
        }
        let (c, h, w) = dims3(input, "avgpool input")?;
        if h % factor != 0 || w % factor != 0 {
            return Err(GeError::Shape(format!(
                "avgpool dims {h}x{w} not divisible by factor {factor}"
            )));
        }
        let (ho, wo) = (h / factor, w / factor);
        let norm = 1.0 / (factor * factor) as f64;
        let mut data = vec![0.0; c * ho * wo];
        for ch in 0..c {
            for y in 0..ho {
                for x in 0..wo {
                    let mut s = 0.0;
                    for dy in 0..factor {
                        for dx in 0..factor {
                            s += input.data[(ch * h + y * factor + dy) * w + x * factor + dx];
                        }
                    }
                    data[(ch * ho + y) * wo + x] = s * norm;
                }
            }
        }
        let out = Tensor::detached(vec![c, ho, wo], data);
        self.record(
            Op::AvgPool {
                factor,
                in_shape: input.shape.clone(),
            },
            &[input],
            out,
        )
    }

    // ── Backward pass ────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Visits each node once; returns
    /// gradients for trainable leaves. The tape stays intact so it can
    /// be inspected, but is normally dropped right after.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        if !loss.is_scalar() {
            return Err(GeError::Contract("backward requires a scalar loss".into()));
        }
        let root = loss.node.ok_or_else(|| {
            GeError::Contract("loss is not attached to this tape".into())
        })?;
        if root >= self.nodes.len() {
            return Err(GeError::Contract("loss node id out of range".into()));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[root] = Some(vec![1.0]);

        let mut grads = Gradients::default();
        for id in (0..=root).rev() {
            let g = match adj[id].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf { trainable } => {
                    if *trainable {
                        grads.grads.insert(
                            id,
                            Tensor::detached(node.out_shape.clone(), g),
                        );
                    }
                }
                _ => {
                    let input_grads = self.local_grads(&node.op, &g, &node.out_shape);
                    for (slot, ig) in node.inputs.iter().zip(input_grads) {
                        accumulate(&mut adj[*slot], ig, self.nodes[*slot].out_shape.iter().product());
                    }
                }
            }
        }
        Ok(grads)
    }

    fn local_grads(&self, op: &Op, g: &[f64], out_shape: &[usize]) -> Vec<Vec<f64>> {
        match op {
            Op::Leaf { .. } => vec![],
            Op::Add => vec![g.to_vec(), g.to_vec()],
            Op::Sub => vec![g.to_vec(), g.iter().map(|v| -v).collect()],
            Op::Mul { a, b } => vec![
                g.iter().zip(&b.data).map(|(g, b)| g * b).collect(),
                g.iter().zip(&a.data).map(|(g, a)| g * a).collect(),
            ],
            Op::Scale(c) => vec![g.iter().map(|v| v * c).collect()],
            Op::Elu { out } => vec![g
                .iter()
                .zip(&out.data)
                .map(|(g, &y)| if y > 0.0 { *g } else { g * (y + 1.0) })
                .collect()],
            Op::Tanh { out } => vec![g
                .iter()
                .zip(&out.data)
                .map(|(g, y)| g * (1.0 - y * y))
                .collect()],
            Op::Sigmoid { out } => vec![g
                .iter()
                .zip(&out.data)
                .map(|(g, y)| g * y * (1.0 - y))
                .collect()],
            Op::MatMul { a, b } => {
                let (r, k) = (a.shape[0], a.shape[1]);
                let c = b.shape[1];
                // dA = g · Bᵀ ; dB = Aᵀ · g
                let mut da = vec![0.0; r * k];
                for i in 0..r {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..c {
                            s += g[i * c + j] * b.data[p * c + j];
                        }
                        da[i * k + p] = s;
                    }
                }
                let mut db = vec![0.0; k * c];
                for p in 0..k {
                    for j in 0..c {
                        let mut s = 0.0;
                        for i in 0..r {
                            s += a.data[i * k + p] * g[i * c + j];
                        }
                        db[p * c + j] = s;
                    }
                }
                vec![da, db]
            }
            Op::Mse { a, b } => {
                let n = a.numel() as f64;
                let gscale = 2.0 * g[0] / n;
                let da: Vec<f64> = a
                    .data
                    .iter()
                    .zip(&b.data)
                    .map(|(x, y)| gscale * (x - y))
                    .collect();
                let db = da.iter().map(|v| -v).collect();
                vec![da, db]
            }
            Op::SqL2 { a } => vec![a.data.iter().map(|x| 2.0 * g[0] * x).collect()],
            Op::MeanAbsDiff { a, b } => {
                let n = a.numel() as f64;
                let gscale = g[0] / n;
                let da: Vec<f64> = a
                    .data
                    .iter()
                    .zip(&b.data)
                    .map(|(x, y)| gscale * sign(x - y))
                    .collect();
                let db = da.iter().map(|v| -v).collect();
                vec![da, db]
            }
            Op::Conv2d {
                input,
                kernels,
                stride,
                padding,
            } => {
                let (c, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
                let (f, _, k, _) = (
                    kernels.shape[0],
                    kernels.shape[1],
                    kernels.shape[2],
                    kernels.shape[3],
                );
                let (ho, wo) = (out_shape[1], out_shape[2]);
                conv2d_grads(
                    g,
                    &input.data,
                    &kernels.data,
                    c,
                    h,
                    w,
                    f,
                    k,
                    *stride,
                    *padding,
                    ho,
                    wo,
                )
            }
            Op::ConvTranspose2d {
                input,
                kernels,
                stride,
                padding,
            } => {
                let (f, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
                let (_, c, k, _) = (
                    kernels.shape[0],
                    kernels.shape[1],
                    kernels.shape[2],
                    kernels.shape[3],
                );
                let (ho, wo) = (out_shape[1], out_shape[2]);
                conv2d_transpose_grads(
                    g,
                    &input.data,
                    &kernels.data,
                    f,
                    h,
                    w,
                    c,
                    k,
                    *stride,
                    *padding,
                    ho,
                    wo,
                )
            }
            Op::UpsampleNearest { factor, in_shape } => {
                let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
                let (ho, wo) = (h * factor, w * factor);
                let mut gi = vec![0.0; c * h * w];
                for ch in 0..c {
                    for y in 0..ho {
                        for x in 0..wo {
                            gi[(ch * h + y / factor) * w + x / factor] +=
                                g[(ch * ho + y) * wo + x];
                        }
                    }
                }
                vec![gi]
            }
            Op::AvgPool { factor, in_shape } => {
                let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
                let (ho, wo) = (h / factor, w / factor);
                let norm = 1.0 / (factor * factor) as f64;
                let mut gi = vec![0.0; c * h * w];
                for ch in 0..c {
                    for y in 0..h {
                        for x in 0..w {
                            gi[(ch * h + y) * w + x] =
                                g[(ch * ho + y / factor) * wo + x / factor] * norm;
                        }
                    }
                }
                vec![gi]
            }
            Op::Reshape => vec![g.to_vec()],
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>, numel: usize) {
    debug_assert_eq!(g.len(), numel);
    match slot {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
        None => *slot = Some(g),
    }
}

fn dims3(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    if t.shape.len() != 3 {
        return Err(GeError::Shape(format!(
            "{what} must be [C,H,W], got {:?}",
            t.shape
        )));
    }
    Ok((t.shape[0], t.shape[1], t.shape[2]))
}

fn dims4(t: &Tensor, what: &str) -> Result<(usize, usize, usize, usize)> {
    if t.shape.len() != 4 {
        return Err(GeError::Shape(format!(
            "{what} must be 4-d, got {:?}",
            t.shape
        )));
    }
    Ok((t.shape[0], t.shape[1], t.shape[2], t.shape[3]))
}

pub(crate) fn conv_out_size(
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize)> {
    let num_h = h + 2 * padding;
    let num_w = w + 2 * padding;
    if num_h < k || num_w < k {
        return Err(GeError::Shape(format!(
            "input {h}x{w} (pad {padding}) smaller than kernel {k}"
        )));
    }
    if (num_h - k) % stride != 0 || (num_w - k) % stride != 0 {
        return Err(GeError::Shape(format!(
            "conv output size not integral for {h}x{w}, k={k}, stride={stride}, pad={padding}"
        )));
    }
    Ok(((num_h - k) / stride + 1, (num_w - k) / stride + 1))
}

pub(crate) fn conv_transpose_out_size(
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize)> {
    let ho = (h - 1) * stride + k;
    let wo = (w - 1) * stride + k;
    if ho < 2 * padding || wo < 2 * padding {
        return Err(GeError::Shape(format!(
            "transpose output size negative for {h}x{w}, k={k}, stride={stride}, pad={padding}"
        )));
    }
    Ok((ho - 2 * padding, wo - 2 * padding))
}

pub fn matmul_raw(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for j in 0..c {
                out[i * c + j] += av * b[p * c + j];
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv2d_raw(
    input: &[f64],
    kernels: &[f64],
    bias: &[f64],
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    k: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; f * ho * wo];
    for fi in 0..f {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut s = bias[fi];
                for ci in 0..c {
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            s += input[(ci * h + iy as usize) * w + ix as usize]
                                * kernels[((fi * c + ci) * k + ky) * k + kx];
                        }
                    }
                }
                out[(fi * ho + oy) * wo + ox] = s;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv2d_transpose_raw(
    input: &[f64],
    kernels: &[f64],
    bias: &[f64],
    f: usize,
    h: usize,
    w: usize,
    c: usize,
    k: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; c * ho * wo];
    for ci in 0..c {
        for i in 0..ho * wo {
            out[ci * ho * wo + i] = bias[ci];
        }
    }
    for fi in 0..f {
        for oy in 0..h {
            for ox in 0..w {
                let v = input[(fi * h + oy) * w + ox];
                if v == 0.0 {
                    continue;
                }
                for ci in 0..c {
                    for ky in 0..k {
                        let ty = (oy * stride + ky) as isize - padding as isize;
                        if ty < 0 || ty >= ho as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let tx = (ox * stride + kx) as isize - padding as isize;
                            if tx < 0 || tx >= wo as isize {
                                continue;
                            }
                            out[(ci * ho + ty as usize) * wo + tx as usize] +=
                                v * kernels[((fi * c + ci) * k + ky) * k + kx];
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv2d_grads(
    g: &[f64],
    input: &[f64],
    kernels: &[f64],
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    k: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
) -> Vec<Vec<f64>> {
    let mut gi = vec![0.0; c * h * w];
    let mut gk = vec![0.0; f * c * k * k];
    let mut gb = vec![0.0; f];
    for fi in 0..f {
        for oy in 0..ho {
            for ox in 0..wo {
                let gv = g[(fi * ho + oy) * wo + ox];
                if gv == 0.0 {
                    continue;
                }
                gb[fi] += gv;
                for ci in 0..c {
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let in_idx = (ci * h + iy as usize) * w + ix as usize;
                            let k_idx = ((fi * c + ci) * k + ky) * k + kx;
                            gi[in_idx] += gv * kernels[k_idx];
                            gk[k_idx] += gv * input[in_idx];
                        }
                    }
                }
            }
        }
    }
    vec![gi, gk, gb]
}

#[allow(clippy::too_many_arguments)]
fn conv2d_transpose_grads(
    g: &[f64],
    input: &[f64],
    kernels: &[f64],
    f: usize,
    h: usize,
    w: usize,
    c: usize,
    k: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
) -> Vec<Vec<f64>> {
    let mut gi = vec![0.0; f * h * w];
    let mut gk = vec![0.0; f * c * k * k];
    let mut gb = vec![0.0; c];
    for ci in 0..c {
        for i in 0..ho * wo {
            gb[ci] += g[ci * ho * wo + i];
        }
    }
    for fi in 0..f {
        for oy in 0..h {
            for ox in 0..w {
                let mut s = 0.0;
                for ci in 0..c {
                    for ky in 0..k {
                        let ty = (oy * stride + ky) as isize - padding as isize;
                        if ty < 0 || ty >= ho as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let tx = (ox * stride + kx) as isize - padding as isize;
                            if tx < 0 || tx >= wo as isize {
                                continue;
                            }
                            let out_idx = (ci * ho + ty as usize) * wo + tx as usize;
                            let k_idx = ((fi * c + ci) * k + ky) * k + kx;
                            s += g[out_idx] * kernels[k_idx];
                            gk[k_idx] += g[out_idx] * input[(fi * h + oy) * w + ox];
                        }
                    }
                }
                gi[(fi * h + oy) * w + ox] = s;
            }
        }
    }
    vec![gi, gk, gb]
}

/// Compare the AD gradient of `f` at `x` against central finite differences.
/// Returns the max over coordinates of |ad - fd| / max(1, |fd|).
pub fn grad_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &Tensor) -> Result<Tensor>,
{
    let mut tape = Tape::new();
    let leaf = tape.leaf(x, true);
    let loss = f(&mut tape, &leaf)?;
    if !loss.is_scalar() {
        return Err(GeError::Contract("grad_check needs a scalar-valued f".into()));
    }
    let grads = tape.backward(&loss)?;
    let ad = grads
        .get(&leaf)
        .ok_or_else(|| GeError::Contract("no gradient flowed to x".into()))?
        .clone();

    let mut worst: f64 = 0.0;
    for i in 0..x.numel() {
        let mut xp = x.clone();
        xp.data[i] += step;
        let mut xm = x.clone();
        xm.data[i] -= step;
        let fp = eval_scalar(&f, &xp)?;
        let fm = eval_scalar(&f, &xm)?;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(GeError::Numeric("non-finite f value in grad_check".into()));
        }
        let fd = (fp - fm) / (2.0 * step);
        let err = (ad.data[i] - fd).abs() / fd.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

fn eval_scalar<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: Fn(&mut Tape, &Tensor) -> Result<Tensor>,
{
    let mut tape = Tape::frozen();
    let v = f(&mut tape, x)?;
    Ok(v.item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::frozen();
        let i = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::new(vec![2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let out = tape.matmul(&i, &b).unwrap();
        assert_eq!(out.data, vec![3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn matmul_zero_rows() {
        let mut tape = Tape::frozen();
        let a = Tensor::zeros(&[1, 3]);
        let b = Tensor::new(vec![3, 2], vec![1.0; 6]).unwrap();
        let out = tape.matmul(&a, &b).unwrap();
        assert_eq!(out.shape, vec![1, 2]);
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = rand_tensor(&mut rng, &[3, 4]);
        let b = rand_tensor(&mut rng, &[4, 2]);
        let mut tape = Tape::frozen();
        let out = tape.matmul(&a, &b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut s = 0.0;
                for p in 0..4 {
                    s += a.data[i * 4 + p] * b.data[p * 2 + j];
                }
                assert!((out.data[i * 2 + j] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut tape = Tape::frozen();
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        assert!(matches!(tape.matmul(&a, &b), Err(GeError::Shape(_))));
    }

    #[test]
    fn elementwise_basics() {
        let mut tape = Tape::frozen();
        let z = Tensor::zeros(&[4]);
        assert!(tape.tanh(&z).unwrap().data.iter().all(|&v| v == 0.0));

        let a = Tensor::from_vec(vec![1.0, -2.0, 3.0]);
        let out = tape.add(&a, &Tensor::zeros(&[3])).unwrap();
        assert_eq!(out.data, a.data);

        let x = Tensor::from_vec(vec![-1.0, -1.0]);
        let e = tape.elu(&x).unwrap();
        for v in e.data {
            assert!((v - ((-1.0f64).exp() - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn mse_and_sq_l2() {
        let mut tape = Tape::frozen();
        let a = Tensor::from_vec(vec![1.0, 1.0]);
        let b = Tensor::zeros(&[2]);
        assert_eq!(tape.mse(&a, &a).unwrap().item(), 0.0);
        assert_eq!(tape.mse(&a, &b).unwrap().item(), 1.0);
        assert_eq!(tape.sq_l2(&Tensor::zeros(&[5])).unwrap().item(), 0.0);
        assert_eq!(
            tape.sq_l2(&Tensor::from_vec(vec![3.0, 4.0])).unwrap().item(),
            25.0
        );

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = rand_tensor(&mut rng, &[8]);
        let b = rand_tensor(&mut rng, &[8]);
        let got = tape.mse(&a, &b).unwrap().item();
        let want: f64 = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / 8.0;
        assert!((got - want).abs() < 1e-14);

        let v = rand_tensor(&mut rng, &[16]);
        let got = tape.sq_l2(&v).unwrap().item();
        let want: f64 = v.data.iter().map(|x| x * x).sum();
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn backward_analytic_cases() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::from_vec(vec![1.0, 2.0]), true);
        let loss = tape.sq_l2(&x).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap().data, vec![2.0, 4.0]);

        let mut tape = Tape::new();
        let c = Tensor::from_vec(vec![0.5, -0.5]);
        let x = tape.leaf(&c, true);
        let loss = tape.mse(&x, &c).unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert!(grads.get(&x).unwrap().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::from_vec(vec![1.0, 2.0]), true);
        let y = tape.scale(&x, 2.0).unwrap();
        assert!(matches!(tape.backward(&y), Err(GeError::Contract(_))));
    }

    #[test]
    fn backward_is_linear_over_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x0 = rand_tensor(&mut rng, &[6]);
        let c = rand_tensor(&mut rng, &[6]);

        // combined loss
        let mut tape = Tape::new();
        let x = tape.leaf(&x0, true);
        let l1 = tape.sq_l2(&x).unwrap();
        let l2 = tape.mse(&x, &c).unwrap();
        let sum = tape.add(&l1, &l2).unwrap();
        let g_sum = tape.backward(&sum).unwrap().get(&x).unwrap().clone();

        // separate passes
        let mut t1 = Tape::new();
        let x1 = t1.leaf(&x0, true);
        let l1 = t1.sq_l2(&x1).unwrap();
        let g1 = t1.backward(&l1).unwrap().get(&x1).unwrap().clone();
        let mut t2 = Tape::new();
        let x2 = t2.leaf(&x0, true);
        let l2 = t2.mse(&x2, &c).unwrap();
        let g2 = t2.backward(&l2).unwrap().get(&x2).unwrap().clone();

        for i in 0..6 {
            assert!((g_sum.data[i] - (g1.data[i] + g2.data[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_replay_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x0 = rand_tensor(&mut rng, &[5]);
        let run = || {
            let mut tape = Tape::new();
            let x = tape.leaf(&x0, true);
            let t = tape.tanh(&x).unwrap();
            let loss = tape.sq_l2(&t).unwrap();
            tape.backward(&loss).unwrap().get(&x).unwrap().clone()
        };
        let a = run();
        let b = run();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn grad_check_closed_form_and_composites() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = rand_tensor(&mut rng, &[8]);
        let err = grad_check(|t, x| t.sq_l2(x), &x, 1e-5).unwrap();
        assert!(err < 1e-8, "sq_l2 grad err {err}");

        let c = x.clone();
        let err = grad_check(|t, v| t.mse(v, &c), &c, 1e-5).unwrap();
        assert_eq!(err, 0.0);

        // composite of the elementwise ops
        let x = rand_tensor(&mut rng, &[12]);
        let target = rand_tensor(&mut rng, &[12]);
        let err = grad_check(
            |t, v| {
                let a = t.tanh(v)?;
                let b = t.sigmoid(&a)?;
                let e = t.elu(&b)?;
                t.mse(&e, &target)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "composite grad err {err}");
    }

    #[test]
    fn grad_check_over_many_random_instances() {
        // spec-level property: >=100 seeded random instances under 1e-5
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for trial in 0..100 {
            let n = rng.gen_range(2..=32);
            let x = rand_tensor(&mut rng, &[n]);
            let c = rand_tensor(&mut rng, &[n]);
            let err = grad_check(
                |t, v| {
                    let m = t.mul(v, &c)?;
                    let e = t.elu(&m)?;
                    let s = t.sub(&e, &c)?;
                    t.sq_l2(&s)
                },
                &x,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-5, "trial {trial} err {err}");
        }
    }

    #[test]
    fn upsample_avgpool_inverse() {
        let mut tape = Tape::frozen();
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let up = tape.upsample_nearest(&x, 2).unwrap();
        assert_eq!(up.shape, vec![1, 4, 4]);
        assert_eq!(up.data[0], 1.0);
        assert_eq!(up.data[1], 1.0);
        assert_eq!(up.data[4], 1.0);
        assert_eq!(up.data[15], 4.0);
        let back = tape.avgpool(&up, 2).unwrap();
        assert_eq!(back.data, x.data);

        let ones = Tensor::new(vec![1, 4, 4], vec![1.0; 16]).unwrap();
        let pooled = tape.avgpool(&ones, 2).unwrap();
        assert!(pooled.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn non_finite_input_is_reported() {
        let mut tape = Tape::frozen();
        let a = Tensor::from_vec(vec![f64::INFINITY]);
        let b = Tensor::from_vec(vec![1.0]);
        assert!(matches!(tape.mul(&a, &b), Err(GeError::Numeric(_))));
    }
}
