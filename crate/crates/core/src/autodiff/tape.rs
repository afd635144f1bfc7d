//! Reverse-mode tape over dense tensors.
//!
//! A tape is explicit and single-owner: each differentiable computation
//! builds its own tape, applies ops through it, and calls [`Tape::backward`]
//! on a scalar output. A non-recording tape runs the identical forward
//! arithmetic without storing records, so gradient-free evaluation shares
//! the exact code path (and bit pattern) with recorded evaluation.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tensor::{NodeId, Tensor};

/// Op catalog. Parameterized kinds carry their attributes.
///
/// `Slice` reads a contiguous row-major range and views it under `shape`
/// (product must equal `end - start`), which doubles as reshape via
/// `start = 0, end = numel`. `Concat` joins the inputs' row-major values
/// and views the result under `shape`.
#[derive(Debug, Clone)]
pub enum OpKind<S> {
    Add,
    Sub,
    Mul,
    MatMul,
    Tanh,
    Relu,
    Exp,
    Log,
    Square,
    Sqrt,
    Sum,
    Mean,
    Concat { shape: Vec<usize> },
    Slice { start: usize, end: usize, shape: Vec<usize> },
    ScalarBroadcast { shape: Vec<usize> },
    Clamp { lo: S, hi: S },
}

impl<S: Scalar> OpKind<S> {
    fn name(&self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "elementwise-mul",
            OpKind::MatMul => "matmul",
            OpKind::Tanh => "tanh",
            OpKind::Relu => "relu",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Square => "square",
            OpKind::Sqrt => "sqrt",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Concat { .. } => "concat",
            OpKind::Slice { .. } => "slice",
            OpKind::ScalarBroadcast { .. } => "scalar-broadcast",
            OpKind::Clamp { .. } => "clamp",
        }
    }
}

struct Record<S> {
    kind: OpKind<S>,
    inputs: Vec<Tensor<S>>,
    output: Tensor<S>,
}

/// Gradients keyed by node id. Leaves that no path reaches report zeros.
pub struct GradientMap<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> GradientMap<S> {
    /// Gradient of the backward output w.r.t. the given tensor's node.
    /// Returns zeros of the tensor's shape when no gradient flowed to it.
    pub fn grad(&self, t: &Tensor<S>) -> Tensor<S> {
        let node = t.node().expect("gradient of a tensor with no tape node");
        match self.grads.get(node.index()).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => Tensor::zeros(t.shape().to_vec()),
        }
    }

    pub fn by_node(&self, node: NodeId) -> Option<&Tensor<S>> {
        self.grads.get(node.index()).and_then(|g| g.as_ref())
    }
}

pub struct Tape<S> {
    records: Vec<Record<S>>,
    node_shapes: Vec<Vec<usize>>,
    recording: bool,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    /// A recording tape.
    pub fn new() -> Self {
        Self {
            records: Vec::new(),
            node_shapes: Vec::new(),
            recording: true,
        }
    }

    /// A tape that evaluates forward values only.
    pub fn no_grad() -> Self {
        Self {
            records: Vec::new(),
            node_shapes: Vec::new(),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn fresh_node(&mut self, shape: &[usize]) -> NodeId {
        let id = NodeId(self.node_shapes.len());
        self.node_shapes.push(shape.to_vec());
        id
    }

    /// Register a tensor as a differentiable leaf. Idempotent for tensors
    /// already connected to this tape; the identity on a non-recording tape.
    pub fn leaf(&mut self, t: &Tensor<S>) -> Tensor<S> {
        if !self.recording {
            return t.detach();
        }
        if t.node().is_some() {
            return t.clone();
        }
        let id = self.fresh_node(t.shape());
        t.detach().with_node(id)
    }

    /// Apply an op. The forward value is always computed; a record is
    /// appended only when recording and at least one input is connected
    /// to the tape (inputs without a node are constants).
    pub fn apply(&mut self, kind: OpKind<S>, inputs: &[&Tensor<S>]) -> Result<Tensor<S>> {
        let (shape, values) = forward(&kind, inputs)?;
        let connected = self.recording && inputs.iter().any(|t| t.node().is_some());
        if !connected {
            return Ok(Tensor::from_parts(shape, values, None));
        }
        let id = self.fresh_node(&shape);
        let out = Tensor::from_parts(shape, values, Some(id));
        self.records.push(Record {
            kind,
            inputs: inputs.iter().map(|t| (*t).clone()).collect(),
            output: out.clone(),
        });
        Ok(out)
    }

    /// Reverse accumulation from a scalar output back to every node.
    pub fn backward(&self, output: &Tensor<S>) -> Result<GradientMap<S>> {
        if output.numel() != 1 {
            return Err(Error::NonScalarOutput(output.shape().to_vec()));
        }
        let out_node = output
            .node()
            .ok_or_else(|| Error::NonScalarOutput(vec![0]))?;
        let mut grads: Vec<Option<Vec<S>>> = vec![None; self.node_shapes.len()];
        grads[out_node.index()] = Some(vec![S::one()]);

        for rec in self.records.iter().rev() {
            let out_id = rec.output.node().expect("recorded output has a node");
            let upstream = match grads[out_id.index()].take() {
                Some(g) => g,
                None => continue,
            };
            accumulate_vjps(rec, &upstream, &mut grads);
            // Keep the consumed gradient available so intermediate nodes
            // can still be probed through the returned map.
            grads[out_id.index()] = Some(upstream);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|v| Tensor::from_parts(self.node_shapes[i].clone(), v, None)))
            .collect();
        Ok(GradientMap { grads })
    }
}

fn accumulate_vjps<S: Scalar>(rec: &Record<S>, upstream: &[S], grads: &mut [Option<Vec<S>>]) {
    let ins = &rec.inputs;
    match &rec.kind {
        OpKind::Add => {
            add_grad(grads, &ins[0], upstream);
            add_grad(grads, &ins[1], upstream);
        }
        OpKind::Sub => {
            add_grad(grads, &ins[0], upstream);
            if let Some(node) = ins[1].node() {
                let g: Vec<S> = upstream.iter().map(|&g| -g).collect();
                add_into(grads, node, &g);
            }
        }
        OpKind::Mul => {
            if let Some(node) = ins[0].node() {
                let g: Vec<S> = upstream
                    .iter()
                    .zip(ins[1].values())
                    .map(|(&g, &b)| g * b)
                    .collect();
                add_into(grads, node, &g);
            }
            if let Some(node) = ins[1].node() {
                let g: Vec<S> = upstream
                    .iter()
                    .zip(ins[0].values())
                    .map(|(&g, &a)| g * a)
                    .collect();
                add_into(grads, node, &g);
            }
        }
        OpKind::MatMul => {
            let (m, k) = (ins[0].shape()[0], ins[0].shape()[1]);
            let n = ins[1].shape()[1];
            if let Some(node) = ins[0].node() {
                // dA = G · B^T
                let g = matmul_nt(upstream, ins[1].values(), m, n, k);
                add_into(grads, node, &g);
            }
            if let Some(node) = ins[1].node() {
                // dB = A^T · G
                let g = matmul_tn(ins[0].values(), upstream, m, k, n);
                add_into(grads, node, &g);
            }
        }
        OpKind::Tanh => unary_grad(grads, &ins[0], |_, i| {
            let y = rec.output.values()[i];
            S::one() - y * y
        }, upstream),
        OpKind::Relu => unary_grad(grads, &ins[0], |x, _| {
            if x > S::zero() {
                S::one()
            } else {
                S::zero()
            }
        }, upstream),
        OpKind::Exp => unary_grad(grads, &ins[0], |_, i| rec.output.values()[i], upstream),
        OpKind::Log => unary_grad(grads, &ins[0], |x, _| S::one() / x, upstream),
        OpKind::Square => unary_grad(grads, &ins[0], |x, _| x + x, upstream),
        OpKind::Sqrt => unary_grad(grads, &ins[0], |_, i| {
            let y = rec.output.values()[i];
            S::one() / (y + y)
        }, upstream),
        OpKind::Sum => {
            if let Some(node) = ins[0].node() {
                let g = vec![upstream[0]; ins[0].numel()];
                add_into(grads, node, &g);
            }
        }
        OpKind::Mean => {
            if let Some(node) = ins[0].node() {
                let scale = upstream[0] / S::of_usize(ins[0].numel());
                let g = vec![scale; ins[0].numel()];
                add_into(grads, node, &g);
            }
        }
        OpKind::Concat { .. } => {
            let mut off = 0;
            for inp in ins {
                let n = inp.numel();
                if let Some(node) = inp.node() {
                    add_into(grads, node, &upstream[off..off + n]);
                }
                off += n;
            }
        }
        OpKind::Slice { start, .. } => {
            if let Some(node) = ins[0].node() {
                let mut g = vec![S::zero(); ins[0].numel()];
                g[*start..*start + upstream.len()].copy_from_slice(upstream);
                add_into(grads, node, &g);
            }
        }
        OpKind::ScalarBroadcast { .. } => {
            if let Some(node) = ins[0].node() {
                let mut acc = S::zero();
                for &g in upstream {
                    acc = acc + g;
                }
                add_into(grads, node, &[acc]);
            }
        }
        OpKind::Clamp { lo, hi } => unary_grad(grads, &ins[0], |x, _| {
            if x >= *lo && x <= *hi {
                S::one()
            } else {
                S::zero()
            }
        }, upstream),
    }
}

fn unary_grad<S: Scalar>(
    grads: &mut [Option<Vec<S>>],
    input: &Tensor<S>,
    local: impl Fn(S, usize) -> S,
    upstream: &[S],
) {
    if let Some(node) = input.node() {
        let g: Vec<S> = input
            .values()
            .iter()
            .enumerate()
            .map(|(i, &x)| upstream[i] * local(x, i))
            .collect();
        add_into(grads, node, &g);
    }
}

fn add_grad<S: Scalar>(grads: &mut [Option<Vec<S>>], input: &Tensor<S>, g: &[S]) {
    if let Some(node) = input.node() {
        add_into(grads, node, g);
    }
}

fn add_into<S: Scalar>(grads: &mut [Option<Vec<S>>], node: NodeId, g: &[S]) {
    match &mut grads[node.index()] {
        Some(acc) => {
            for (a, &b) in acc.iter_mut().zip(g) {
                *a = *a + b;
            }
        }
        slot => *slot = Some(g.to_vec()),
    }
}

fn forward<S: Scalar>(kind: &OpKind<S>, inputs: &[&Tensor<S>]) -> Result<(Vec<usize>, Vec<S>)> {
    let shape_err = |shapes: String| Error::ShapeMismatch {
        op: kind.name().into(),
        shapes,
    };
    match kind {
        OpKind::Add | OpKind::Sub | OpKind::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() != b.shape() {
                return Err(shape_err(format!("{:?} vs {:?}", a.shape(), b.shape())));
            }
            let v = match kind {
                OpKind::Add => a.values().iter().zip(b.values()).map(|(&x, &y)| x + y).collect(),
                OpKind::Sub => a.values().iter().zip(b.values()).map(|(&x, &y)| x - y).collect(),
                _ => a.values().iter().zip(b.values()).map(|(&x, &y)| x * y).collect(),
            };
            Ok((a.shape().to_vec(), v))
        }
        OpKind::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(shape_err(format!("{:?} x {:?}", a.shape(), b.shape())));
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            Ok((vec![m, n], matmul_nn(a.values(), b.values(), m, k, n)))
        }
        OpKind::Tanh => Ok((inputs[0].shape().to_vec(), map(inputs[0], |x| x.tanh()))),
        OpKind::Relu => Ok((
            inputs[0].shape().to_vec(),
            map(inputs[0], |x| if x > S::zero() { x } else { S::zero() }),
        )),
        OpKind::Exp => Ok((inputs[0].shape().to_vec(), map(inputs[0], |x| x.exp()))),
        OpKind::Log => {
            if inputs[0].values().iter().any(|&x| x <= S::zero()) {
                return Err(Error::DomainViolation { op: "log" });
            }
            Ok((inputs[0].shape().to_vec(), map(inputs[0], |x| x.ln())))
        }
        OpKind::Square => Ok((inputs[0].shape().to_vec(), map(inputs[0], |x| x * x))),
        OpKind::Sqrt => {
            if inputs[0].values().iter().any(|&x| x < S::zero()) {
                return Err(Error::DomainViolation { op: "sqrt" });
            }
            Ok((inputs[0].shape().to_vec(), map(inputs[0], |x| x.sqrt())))
        }
        OpKind::Sum => {
            let mut acc = S::zero();
            for &x in inputs[0].values() {
                acc = acc + x;
            }
            Ok((vec![1], vec![acc]))
        }
        OpKind::Mean => {
            let mut acc = S::zero();
            for &x in inputs[0].values() {
                acc = acc + x;
            }
            Ok((vec![1], vec![acc / S::of_usize(inputs[0].numel())]))
        }
        OpKind::Concat { shape } => {
            let total: usize = inputs.iter().map(|t| t.numel()).sum();
            if shape.iter().product::<usize>() != total {
                return Err(shape_err(format!("{} values into {:?}", total, shape)));
            }
            let mut v = Vec::with_capacity(total);
            for t in inputs {
                v.extend_from_slice(t.values());
            }
            Ok((shape.clone(), v))
        }
        OpKind::Slice { start, end, shape } => {
            let t = inputs[0];
            if *end > t.numel() || start >= end || shape.iter().product::<usize>() != end - start {
                return Err(shape_err(format!(
                    "[{start}, {end}) as {:?} from {:?}",
                    shape,
                    t.shape()
                )));
            }
            Ok((shape.clone(), t.values()[*start..*end].to_vec()))
        }
        OpKind::ScalarBroadcast { shape } => {
            if inputs[0].numel() != 1 {
                return Err(shape_err(format!("{:?} is not scalar", inputs[0].shape())));
            }
            let n = shape.iter().product();
            Ok((shape.clone(), vec![inputs[0].values()[0]; n]))
        }
        OpKind::Clamp { lo, hi } => Ok((
            inputs[0].shape().to_vec(),
            map(inputs[0], |x| {
                if x < *lo {
                    *lo
                } else if x > *hi {
                    *hi
                } else {
                    x
                }
            }),
        )),
    }
}

fn map<S: Scalar>(t: &Tensor<S>, f: impl Fn(S) -> S) -> Vec<S> {
    t.values().iter().map(|&x| f(x)).collect()
}

/// C = A[m,k] · B[k,n], row-major. Skips zero multipliers: the selector,
/// incidence, and pooling matrices used by the renderer and physics are
/// mostly zeros.
pub(crate) fn matmul_nn<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == S::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

/// C = A[m,n] · B[k,n]^T  ->  [m,k]
fn matmul_nt<S: Scalar>(a: &[S], b: &[S], m: usize, n: usize, k: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let orow = &mut out[i * k..(i + 1) * k];
        for (p, o) in orow.iter_mut().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = S::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc = acc + x * y;
            }
            *o = acc;
        }
    }
    out
}

/// C = A[m,k]^T · B[m,n]  ->  [k,n]
fn matmul_tn<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); k * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == S::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}
