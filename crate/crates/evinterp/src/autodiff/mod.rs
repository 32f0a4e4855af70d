//! A small eager reverse-mode autodiff tape over `ndarray`.
//!
//! Values are computed as ops are recorded; [`Graph::backward`] then walks
//! the tape once in reverse. The op set is exactly what the interpolation
//! model needs: elementwise arithmetic with channel broadcasting, 3x3
//! convolutions (im2col + GEMM, with the column matrix recomputed in the
//! backward pass instead of stored), nearest-neighbor upsampling, bilinear
//! backward warping differentiable in both image and flow, channel
//! concatenation/slicing, and spatial first differences for smoothness
//! terms.
//!
//! Tensors are (C, H, W) arrays or scalars; a batch is a loop over samples
//! with gradients summed into the parameter store, which keeps peak memory
//! proportional to one sample.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod nn;

use std::cell::RefCell;

use ndarray::{ArrayD, Axis, IxDyn};

pub(crate) use nn::normal;
pub use adam::Adam;
pub use nn::{Conv, EncoderDecoder, ParamId, ParamStore};

#[derive(Clone, Debug)]
enum Op {
    Leaf { param: Option<usize> },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    MaxScalar(usize, f64),
    Abs(usize),
    Sigmoid(usize),
    LeakyRelu(usize, f64),
    Mean(usize),
    Sum(usize),
    Concat(Vec<usize>),
    SliceCh(usize, usize, usize),
    Conv2d {
        input: usize,
        weight: usize,
        bias: usize,
        stride: usize,
    },
    Upsample2x(usize),
    Warp { image: usize, flow: usize },
    DiffX(usize),
    DiffY(usize),
}

struct Node {
    value: ArrayD<f64>,
    op: Op,
    needs_grad: bool,
}

/// The tape. One graph per forward pass; dropping it frees all activations.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node in a [`Graph`]. Cheap to copy; all arithmetic goes
/// through [`Graph`] methods.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tensor(usize);

/// Gradients for parameter leaves, keyed by parameter index in the store.
pub type ParamGrads = Vec<(usize, ArrayD<f64>)>;

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}

impl Graph {
    pub fn new() -> Graph {
        Graph {
            nodes: RefCell::new(Vec::new()),
        }
    }

    fn push(&self, value: ArrayD<f64>, op: Op, needs_grad: bool) -> Tensor {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, needs_grad });
        Tensor(nodes.len() - 1)
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].needs_grad)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Copies a node's value out of the tape.
    pub fn value(&self, t: Tensor) -> ArrayD<f64> {
        self.nodes.borrow()[t.0].value.clone()
    }

    pub fn scalar(&self, t: Tensor) -> f64 {
        let nodes = self.nodes.borrow();
        let v = &nodes[t.0].value;
        assert_eq!(v.len(), 1, "scalar() on a non-scalar tensor");
        *v.iter().next().unwrap()
    }

    pub fn shape(&self, t: Tensor) -> Vec<usize> {
        self.nodes.borrow()[t.0].value.shape().to_vec()
    }

    /// Constant input; gradients do not flow into it.
    pub fn constant(&self, value: ArrayD<f64>) -> Tensor {
        self.push(value, Op::Leaf { param: None }, false)
    }

    pub fn scalar_constant(&self, v: f64) -> Tensor {
        self.constant(ArrayD::from_elem(IxDyn(&[]), v))
    }

    /// Parameter leaf: the current value is copied in, and backward
    /// accumulates a gradient slot keyed by the parameter's store index.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Tensor {
        self.push(
            store.value(id).clone(),
            Op::Leaf { param: Some(id.index()) },
            true,
        )
    }

    // ---- elementwise ----

    fn binary(&self, op: Op, a: usize, b: usize, f: impl Fn(&ArrayD<f64>, &ArrayD<f64>) -> ArrayD<f64>) -> Tensor {
        let value = {
            let nodes = self.nodes.borrow();
            f(&nodes[a].value, &nodes[b].value)
        };
        let needs = self.needs(&[a, b]);
        self.push(value, op, needs)
    }

    pub fn add(&self, a: Tensor, b: Tensor) -> Tensor {
        self.binary(Op::Add(a.0, b.0), a.0, b.0, |x, y| bcast(x, y, |p, q| p + q))
    }

    pub fn sub(&self, a: Tensor, b: Tensor) -> Tensor {
        self.binary(Op::Sub(a.0, b.0), a.0, b.0, |x, y| bcast(x, y, |p, q| p - q))
    }

    pub fn mul(&self, a: Tensor, b: Tensor) -> Tensor {
        self.binary(Op::Mul(a.0, b.0), a.0, b.0, |x, y| bcast(x, y, |p, q| p * q))
    }

    /// Elementwise division. Callers guard the denominator away from zero
    /// (see [`Graph::max_scalar`]); the op itself does not.
    pub fn div(&self, a: Tensor, b: Tensor) -> Tensor {
        self.binary(Op::Div(a.0, b.0), a.0, b.0, |x, y| bcast(x, y, |p, q| p / q))
    }

    pub fn scale(&self, a: Tensor, c: f64) -> Tensor {
        let value = self.nodes.borrow()[a.0].value.mapv(|v| v * c);
        let needs = self.needs(&[a.0]);
        self.push(value, Op::Scale(a.0, c), needs)
    }

    pub fn neg(&self, a: Tensor) -> Tensor {
        self.scale(a, -1.0)
    }

    /// Elementwise max(a, c): a floor that keeps denominators positive.
    /// Gradient passes only where a > c.
    pub fn max_scalar(&self, a: Tensor, c: f64) -> Tensor {
        let value = self.nodes.borrow()[a.0].value.mapv(|v| v.max(c));
        let needs = self.needs(&[a.0]);
        self.push(value, Op::MaxScalar(a.0, c), needs)
    }

    pub fn abs(&self, a: Tensor) -> Tensor {
        let value = self.nodes.borrow()[a.0].value.mapv(f64::abs);
        let needs = self.needs(&[a.0]);
        self.push(value, Op::Abs(a.0), needs)
    }

    pub fn sigmoid(&self, a: Tensor) -> Tensor {
        let value = self.nodes.borrow()[a.0].value.mapv(stable_sigmoid);
        let needs = self.needs(&[a.0]);
        self.push(value, Op::Sigmoid(a.0), needs)
    }

    pub fn leaky_relu(&self, a: Tensor, slope: f64) -> Tensor {
        let value = self.nodes.borrow()[a.0]
            .value
            .mapv(|v| if v >= 0.0 { v } else { slope * v });
        let needs = self.needs(&[a.0]);
        self.push(value, Op::LeakyRelu(a.0, slope), needs)
    }

    // ---- reductions ----

    pub fn mean(&self, a: Tensor) -> Tensor {
        let m = self.nodes.borrow()[a.0].value.mean().unwrap();
        let needs = self.needs(&[a.0]);
        self.push(ArrayD::from_elem(IxDyn(&[]), m), Op::Mean(a.0), needs)
    }

    pub fn sum(&self, a: Tensor) -> Tensor {
        let s = self.nodes.borrow()[a.0].value.sum();
        let needs = self.needs(&[a.0]);
        self.push(ArrayD::from_elem(IxDyn(&[]), s), Op::Sum(a.0), needs)
    }

    /// Mean absolute value, the L1 reduction used by the losses.
    pub fn mean_abs(&self, a: Tensor) -> Tensor {
        let t = self.abs(a);
        self.mean(t)
    }

    // ---- structure ----

    /// Concatenates (C, H, W) tensors along the channel axis.
    pub fn concat(&self, parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty());
        let value = {
            let nodes = self.nodes.borrow();
            let views: Vec<_> = parts.iter().map(|t| nodes[t.0].value.view()).collect();
            ndarray::concatenate(Axis(0), &views).expect("concat shapes must agree off-axis")
        };
        let ids: Vec<usize> = parts.iter().map(|t| t.0).collect();
        let needs = self.needs(&ids);
        self.push(value, Op::Concat(ids), needs)
    }

    /// Channels `start..end` of a (C, H, W) tensor.
    pub fn slice_channels(&self, a: Tensor, start: usize, end: usize) -> Tensor {
        let value = {
            let nodes = self.nodes.borrow();
            nodes[a.0]
                .value
                .slice_axis(Axis(0), ndarray::Slice::from(start..end))
                .to_owned()
        };
        let needs = self.needs(&[a.0]);
        self.push(value, Op::SliceCh(a.0, start, end), needs)
    }

    // ---- image ops ----

    /// 3x3 convolution, zero padding 1, stride 1 or 2.
    /// `weight` is (OC, C, 3, 3); `bias` is (OC).
    pub fn conv2d(&self, input: Tensor, weight: Tensor, bias: Tensor, stride: usize) -> Tensor {
        assert!(stride == 1 || stride == 2, "conv2d supports stride 1 or 2");
        let value = {
            let nodes = self.nodes.borrow();
            conv2d_forward(&nodes[input.0].value, &nodes[weight.0].value, &nodes[bias.0].value, stride)
        };
        let needs = self.needs(&[input.0, weight.0, bias.0]);
        self.push(
            value,
            Op::Conv2d {
                input: input.0,
                weight: weight.0,
                bias: bias.0,
                stride,
            },
            needs,
        )
    }

    /// Nearest-neighbor 2x upsampling.
    pub fn upsample2x(&self, a: Tensor) -> Tensor {
        let value = {
            let nodes = self.nodes.borrow();
            let v = &nodes[a.0].value;
            let (c, h, w) = dims3(v);
            let mut out = ArrayD::zeros(IxDyn(&[c, 2 * h, 2 * w]));
            for ci in 0..c {
                for y in 0..2 * h {
                    for x in 0..2 * w {
                        out[[ci, y, x]] = v[[ci, y / 2, x / 2]];
                    }
                }
            }
            out
        };
        let needs = self.needs(&[a.0]);
        self.push(value, Op::Upsample2x(a.0), needs)
    }

    /// Backward warp: out(c, y, x) = image(c, y + v(y,x), x + u(y,x)) with
    /// bilinear sampling; flow channel 0 is horizontal (u), channel 1
    /// vertical (v). Sample coordinates clamp to the border, which keeps the
    /// output defined (and the image gradient zero) outside the frame.
    pub fn warp(&self, image: Tensor, flow: Tensor) -> Tensor {
        let value = {
            let nodes = self.nodes.borrow();
            warp_forward(&nodes[image.0].value, &nodes[flow.0].value)
        };
        let needs = self.needs(&[image.0, flow.0]);
        self.push(
            value,
            Op::Warp {
                image: image.0,
                flow: flow.0,
            },
            needs,
        )
    }

    /// Horizontal first difference, shape (C, H, W-1).
    pub fn diff_x(&self, a: Tensor) -> Tensor {
        let value = {
            let nodes = self.nodes.borrow();
            let v = &nodes[a.0].value;
            let (c, h, w) = dims3(v);
            let mut out = ArrayD::zeros(IxDyn(&[c, h, w - 1]));
            for ci in 0..c {
                for y in 0..h {
                    for x in 0..w - 1 {
                        out[[ci, y, x]] = v[[ci, y, x + 1]] - v[[ci, y, x]];
                    }
                }
            }
            out
        };
        let needs = self.needs(&[a.0]);
        self.push(value, Op::DiffX(a.0), needs)
    }

    /// Vertical first difference, shape (C, H-1, W).
    pub fn diff_y(&self, a: Tensor) -> Tensor {
        let value = {
            let nodes = self.nodes.borrow();
            let v = &nodes[a.0].value;
            let (c, h, w) = dims3(v);
            let mut out = ArrayD::zeros(IxDyn(&[c, h - 1, w]));
            for ci in 0..c {
                for y in 0..h - 1 {
                    for x in 0..w {
                        out[[ci, y, x]] = v[[ci, y + 1, x]] - v[[ci, y, x]];
                    }
                }
            }
            out
        };
        let needs = self.needs(&[a.0]);
        self.push(value, Op::DiffY(a.0), needs)
    }

    // ---- backward ----

    /// Reverse sweep from a scalar loss. Returns gradients for every
    /// parameter leaf reachable from the loss; constants and dead branches
    /// cost nothing. Non-parameter intermediate gradients are freed as soon
    /// as they have been consumed.
    pub fn backward(&self, loss: Tensor) -> ParamGrads {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[loss.0].value.len(), 1, "backward needs a scalar loss");

        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(ArrayD::from_elem(nodes[loss.0].value.shape(), 1.0));

        let mut param_grads: ParamGrads = Vec::new();
        for id in (0..=loss.0).rev() {
            if !nodes[id].needs_grad {
                grads[id] = None;
                continue;
            }
            let Some(grad) = grads[id].take() else { continue };
            match &nodes[id].op {
                Op::Leaf { param } => {
                    if let Some(p) = param {
                        match param_grads.iter_mut().find(|(i, _)| i == p) {
                            Some((_, g)) => *g += &grad,
                            None => param_grads.push((*p, grad)),
                        }
                    }
                }
                op => backward_op(op, &grad, &nodes, &mut grads),
            }
        }
        param_grads
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dims3(v: &ArrayD<f64>) -> (usize, usize, usize) {
    let s = v.shape();
    assert_eq!(s.len(), 3, "expected a (C, H, W) tensor, got {s:?}");
    (s[0], s[1], s[2])
}

/// Binary op with channel broadcasting: shapes must match exactly, or one
/// side is (1, H, W) against (C, H, W).
fn bcast(
    a: &ArrayD<f64>,
    b: &ArrayD<f64>,
    f: impl Fn(&ArrayD<f64>, &ArrayD<f64>) -> ArrayD<f64>,
) -> ArrayD<f64> {
    if a.shape() == b.shape() {
        return f(a, b);
    }
    let (sa, sb) = (a.shape(), b.shape());
    assert!(
        sa.len() == 3 && sb.len() == 3 && sa[1..] == sb[1..] && (sa[0] == 1 || sb[0] == 1),
        "incompatible shapes {sa:?} vs {sb:?}"
    );
    if sa[0] == 1 {
        let expanded = a.broadcast(IxDyn(&[sb[0], sa[1], sa[2]])).unwrap().to_owned();
        f(&expanded, b)
    } else {
        let expanded = b.broadcast(IxDyn(&[sa[0], sb[1], sb[2]])).unwrap().to_owned();
        f(a, &expanded)
    }
}

/// Reduces a gradient back to a broadcast parent's shape (sum over the
/// expanded channel axis), or passes it through when shapes already agree.
fn reduce_to(grad: &ArrayD<f64>, shape: &[usize]) -> ArrayD<f64> {
    if grad.shape() == shape {
        return grad.clone();
    }
    assert!(shape.len() == 3 && shape[0] == 1 && grad.shape()[1..] == shape[1..]);
    let summed = grad.sum_axis(Axis(0));
    summed.insert_axis(Axis(0)).into_dyn()
}

fn accumulate(slot: &mut Option<ArrayD<f64>>, contribution: ArrayD<f64>) {
    match slot {
        Some(g) => *g += &contribution,
        None => *slot = Some(contribution),
    }
}

fn backward_op(
    op: &Op,
    grad: &ArrayD<f64>,
    nodes: &[Node],
    grads: &mut Vec<Option<ArrayD<f64>>>,
) {
    let val = |i: usize| &nodes[i].value;
    let needs = |i: usize| nodes[i].needs_grad;
    match op {
        Op::Leaf { .. } => unreachable!("leaves are handled by the sweep"),
        Op::Add(a, b) => {
            if needs(*a) {
                accumulate(&mut grads[*a], reduce_to(grad, val(*a).shape()));
            }
            if needs(*b) {
                accumulate(&mut grads[*b], reduce_to(grad, val(*b).shape()));
            }
        }
        Op::Sub(a, b) => {
            if needs(*a) {
                accumulate(&mut grads[*a], reduce_to(grad, val(*a).shape()));
            }
            if needs(*b) {
                accumulate(&mut grads[*b], reduce_to(&grad.mapv(|v| -v), val(*b).shape()));
            }
        }
        Op::Mul(a, b) => {
            if needs(*a) {
                let g = bcast(grad, val(*b), |x, y| x * y);
                accumulate(&mut grads[*a], reduce_to(&g, val(*a).shape()));
            }
            if needs(*b) {
                let g = bcast(grad, val(*a), |x, y| x * y);
                accumulate(&mut grads[*b], reduce_to(&g, val(*b).shape()));
            }
        }
        Op::Div(a, b) => {
            if needs(*a) {
                let g = bcast(grad, val(*b), |x, y| x / y);
                accumulate(&mut grads[*a], reduce_to(&g, val(*a).shape()));
            }
            if needs(*b) {
                // d(a/b)/db = -a / b^2
                let quotient = bcast(val(*a), val(*b), |x, y| x / y);
                let g = bcast(&quotient, val(*b), |q, y| q / y);
                let g = bcast(grad, &g, |x, y| x * y).mapv(|v| -v);
                accumulate(&mut grads[*b], reduce_to(&g, val(*b).shape()));
            }
        }
        Op::Scale(a, c) => {
            if needs(*a) {
                accumulate(&mut grads[*a], grad.mapv(|v| v * c));
            }
        }
        Op::MaxScalar(a, c) => {
            if needs(*a) {
                let mut g = grad.clone();
                ndarray::Zip::from(&mut g).and(val(*a)).for_each(|gv, &av| {
                    if av <= *c {
                        *gv = 0.0;
                    }
                });
                accumulate(&mut grads[*a], g);
            }
        }
        Op::Abs(a) => {
            if needs(*a) {
                let mut g = grad.clone();
                ndarray::Zip::from(&mut g).and(val(*a)).for_each(|gv, &av| {
                    *gv *= if av > 0.0 {
                        1.0
                    } else if av < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                });
                accumulate(&mut grads[*a], g);
            }
        }
        Op::Sigmoid(a) => {
            if needs(*a) {
                // Output value s gives ds/dx = s (1 - s); recompute s cheaply.
                let mut g = grad.clone();
                ndarray::Zip::from(&mut g).and(val(*a)).for_each(|gv, &av| {
                    let s = stable_sigmoid(av);
                    *gv *= s * (1.0 - s);
                });
                accumulate(&mut grads[*a], g);
            }
        }
        Op::LeakyRelu(a, slope) => {
            if needs(*a) {
                let mut g = grad.clone();
                ndarray::Zip::from(&mut g).and(val(*a)).for_each(|gv, &av| {
                    if av < 0.0 {
                        *gv *= slope;
                    }
                });
                accumulate(&mut grads[*a], g);
            }
        }
        Op::Mean(a) => {
            if needs(*a) {
                let n = val(*a).len() as f64;
                let g0 = grad.iter().next().copied().unwrap_or(0.0);
                accumulate(&mut grads[*a], ArrayD::from_elem(val(*a).shape(), g0 / n));
            }
        }
        Op::Sum(a) => {
            if needs(*a) {
                let g0 = grad.iter().next().copied().unwrap_or(0.0);
                accumulate(&mut grads[*a], ArrayD::from_elem(val(*a).shape(), g0));
            }
        }
        Op::Concat(ids) => {
            let mut offset = 0;
            for &pid in ids {
                let c = val(pid).shape()[0];
                if needs(pid) {
                    let piece = grad
                        .slice_axis(Axis(0), ndarray::Slice::from(offset..offset + c))
                        .to_owned();
                    accumulate(&mut grads[pid], piece);
                }
                offset += c;
            }
        }
        Op::SliceCh(a, start, end) => {
            if needs(*a) {
                let mut g = ArrayD::zeros(val(*a).shape());
                g.slice_axis_mut(Axis(0), ndarray::Slice::from(*start..*end))
                    .assign(grad);
                accumulate(&mut grads[*a], g);
            }
        }
        Op::Conv2d {
            input,
            weight,
            bias,
            stride,
        } => {
            let (din, dw, db) = conv2d_backward(
                grad,
                val(*input),
                val(*weight),
                *stride,
                needs(*input),
                needs(*weight),
                needs(*bias),
            );
            if let Some(din) = din {
                accumulate(&mut grads[*input], din);
            }
            if let Some(dw) = dw {
                accumulate(&mut grads[*weight], dw);
            }
            if let Some(db) = db {
                accumulate(&mut grads[*bias], db);
            }
        }
        Op::Upsample2x(a) => {
            if needs(*a) {
                let (c, h2, w2) = dims3(grad);
                let (h, w) = (h2 / 2, w2 / 2);
                let mut g = ArrayD::zeros(IxDyn(&[c, h, w]));
                for ci in 0..c {
                    for y in 0..h2 {
                        for x in 0..w2 {
                            g[[ci, y / 2, x / 2]] += grad[[ci, y, x]];
                        }
                    }
                }
                accumulate(&mut grads[*a], g);
            }
        }
        Op::Warp { image, flow } => {
            let (dimg, dflow) =
                warp_backward(grad, val(*image), val(*flow), needs(*image), needs(*flow));
            if let Some(dimg) = dimg {
                accumulate(&mut grads[*image], dimg);
            }
            if let Some(dflow) = dflow {
                accumulate(&mut grads[*flow], dflow);
            }
        }
        Op::DiffX(a) => {
            if needs(*a) {
                let (c, h, wm1) = dims3(grad);
                let mut g = ArrayD::zeros(IxDyn(&[c, h, wm1 + 1]));
                for ci in 0..c {
                    for y in 0..h {
                        for x in 0..wm1 {
                            g[[ci, y, x + 1]] += grad[[ci, y, x]];
                            g[[ci, y, x]] -= grad[[ci, y, x]];
                        }
                    }
                }
                accumulate(&mut grads[*a], g);
            }
        }
        Op::DiffY(a) => {
            if needs(*a) {
                let (c, hm1, w) = dims3(grad);
                let mut g = ArrayD::zeros(IxDyn(&[c, hm1 + 1, w]));
                for ci in 0..c {
                    for y in 0..hm1 {
                        for x in 0..w {
                            g[[ci, y + 1, x]] += grad[[ci, y, x]];
                            g[[ci, y, x]] -= grad[[ci, y, x]];
                        }
                    }
                }
                accumulate(&mut grads[*a], g);
            }
        }
    }
}

// ---- convolution kernels ----

const K: usize = 3;
const PAD: usize = 1;

fn conv_out_side(n: usize, stride: usize) -> usize {
    (n + 2 * PAD - K) / stride + 1
}

/// Unrolls 3x3 patches into a (C*9, OH*OW) matrix.
fn im2col(input: &ArrayD<f64>, stride: usize) -> ndarray::Array2<f64> {
    let (c, h, w) = dims3(input);
    let (oh, ow) = (conv_out_side(h, stride), conv_out_side(w, stride));
    let mut col = ndarray::Array2::<f64>::zeros((c * K * K, oh * ow));
    for ci in 0..c {
        for ky in 0..K {
            for kx in 0..K {
                let row = (ci * K + ky) * K + kx;
                let mut dst = col.row_mut(row);
                for oy in 0..oh {
                    let iy = oy * stride + ky;
                    if iy < PAD || iy >= h + PAD {
                        continue;
                    }
                    let iy = iy - PAD;
                    for ox in 0..ow {
                        let ix = ox * stride + kx;
                        if ix < PAD || ix >= w + PAD {
                            continue;
                        }
                        dst[oy * ow + ox] = input[[ci, iy, ix - PAD]];
                    }
                }
            }
        }
    }
    col
}

/// Scatter-adds a (C*9, OH*OW) column matrix back into image space; the
/// adjoint of [`im2col`].
fn col2im(col: &ndarray::Array2<f64>, c: usize, h: usize, w: usize, stride: usize) -> ArrayD<f64> {
    let (oh, ow) = (conv_out_side(h, stride), conv_out_side(w, stride));
    let mut out = ArrayD::zeros(IxDyn(&[c, h, w]));
    for ci in 0..c {
        for ky in 0..K {
            for kx in 0..K {
                let row = (ci * K + ky) * K + kx;
                let src = col.row(row);
                for oy in 0..oh {
                    let iy = oy * stride + ky;
                    if iy < PAD || iy >= h + PAD {
                        continue;
                    }
                    let iy = iy - PAD;
                    for ox in 0..ow {
                        let ix = ox * stride + kx;
                        if ix < PAD || ix >= w + PAD {
                            continue;
                        }
                        out[[ci, iy, ix - PAD]] += src[oy * ow + ox];
                    }
                }
            }
        }
    }
    out
}

fn conv2d_forward(
    input: &ArrayD<f64>,
    weight: &ArrayD<f64>,
    bias: &ArrayD<f64>,
    stride: usize,
) -> ArrayD<f64> {
    let (c, h, w) = dims3(input);
    let ws = weight.shape();
    assert_eq!(
        (ws[1], ws[2], ws[3]),
        (c, K, K),
        "weight {ws:?} does not fit input with {c} channels"
    );
    let oc = ws[0];
    let (oh, ow) = (conv_out_side(h, stride), conv_out_side(w, stride));

    let col = im2col(input, stride);
    let wmat = weight
        .view()
        .into_shape_with_order((oc, c * K * K))
        .expect("weight reshape");
    let mut out = wmat.dot(&col); // (OC, OH*OW)
    for (mut row, &b) in out.rows_mut().into_iter().zip(bias.iter()) {
        row += b;
    }
    out.into_shape_with_order(IxDyn(&[oc, oh, ow]))
        .expect("conv output reshape")
}

#[allow(clippy::type_complexity)]
fn conv2d_backward(
    grad: &ArrayD<f64>,
    input: &ArrayD<f64>,
    weight: &ArrayD<f64>,
    stride: usize,
    need_input: bool,
    need_weight: bool,
    need_bias: bool,
) -> (Option<ArrayD<f64>>, Option<ArrayD<f64>>, Option<ArrayD<f64>>) {
    let (c, h, w) = dims3(input);
    let (oc, oh, ow) = dims3(grad);
    let gmat = grad
        .view()
        .into_shape_with_order((oc, oh * ow))
        .expect("grad reshape");

    let dbias = need_bias.then(|| {
        let mut db = ndarray::Array1::<f64>::zeros(oc);
        for (i, row) in gmat.rows().into_iter().enumerate() {
            db[i] = row.sum();
        }
        db.into_dyn()
    });

    // The column matrix is recomputed here rather than kept from the
    // forward pass; it is the largest intermediate by an order of magnitude.
    let dweight = need_weight.then(|| {
        let col = im2col(input, stride);
        let dw = gmat.dot(&col.t()); // (OC, C*9)
        dw.into_shape_with_order(IxDyn(&[oc, c, K, K]))
            .expect("dweight reshape")
    });

    let dinput = need_input.then(|| {
        let wmat = weight
            .view()
            .into_shape_with_order((oc, c * K * K))
            .expect("weight reshape");
        let dcol = wmat.t().dot(&gmat); // (C*9, OH*OW)
        col2im(&dcol, c, h, w, stride)
    });

    (dinput, dweight, dbias)
}

// ---- warp kernels ----

/// Bilinear sample positions for one output pixel: clamped source
/// coordinate, its integer neighbors, and the fractional weights.
#[inline]
fn sample_coords(pos: f64, max: usize) -> (usize, usize, f64, bool) {
    let hi = max as f64;
    let clamped = pos.clamp(0.0, hi);
    let i0 = clamped.floor().min(hi - 1.0).max(0.0) as usize;
    let i1 = (i0 + 1).min(max);
    let frac = clamped - i0 as f64;
    // Gradient w.r.t. the flow vanishes once the coordinate is clamped.
    let interior = pos > 0.0 && pos < hi;
    (i0, i1, frac, interior)
}

fn warp_forward(image: &ArrayD<f64>, flow: &ArrayD<f64>) -> ArrayD<f64> {
    let (c, h, w) = dims3(image);
    let fs = flow.shape();
    assert_eq!(fs, [2, h, w], "flow shape {fs:?} does not match image {h}x{w}");
    let mut out = ArrayD::zeros(IxDyn(&[c, h, w]));
    for y in 0..h {
        for x in 0..w {
            let sx = x as f64 + flow[[0, y, x]];
            let sy = y as f64 + flow[[1, y, x]];
            let (x0, x1, fx, _) = sample_coords(sx, w - 1);
            let (y0, y1, fy, _) = sample_coords(sy, h - 1);
            for ci in 0..c {
                let top = image[[ci, y0, x0]] * (1.0 - fx) + image[[ci, y0, x1]] * fx;
                let bot = image[[ci, y1, x0]] * (1.0 - fx) + image[[ci, y1, x1]] * fx;
                out[[ci, y, x]] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

fn warp_backward(
    grad: &ArrayD<f64>,
    image: &ArrayD<f64>,
    flow: &ArrayD<f64>,
    need_image: bool,
    need_flow: bool,
) -> (Option<ArrayD<f64>>, Option<ArrayD<f64>>) {
    let (c, h, w) = dims3(image);
    let mut dimg = need_image.then(|| ArrayD::<f64>::zeros(IxDyn(&[c, h, w])));
    let mut dflow = need_flow.then(|| ArrayD::<f64>::zeros(IxDyn(&[2, h, w])));

    for y in 0..h {
        for x in 0..w {
            let sx = x as f64 + flow[[0, y, x]];
            let sy = y as f64 + flow[[1, y, x]];
            let (x0, x1, fx, free_x) = sample_coords(sx, w - 1);
            let (y0, y1, fy, free_y) = sample_coords(sy, h - 1);
            for ci in 0..c {
                let g = grad[[ci, y, x]];
                if g == 0.0 {
                    continue;
                }
                if let Some(dimg) = dimg.as_mut() {
                    dimg[[ci, y0, x0]] += g * (1.0 - fx) * (1.0 - fy);
                    dimg[[ci, y0, x1]] += g * fx * (1.0 - fy);
                    dimg[[ci, y1, x0]] += g * (1.0 - fx) * fy;
                    dimg[[ci, y1, x1]] += g * fx * fy;
                }
                if let Some(dflow) = dflow.as_mut() {
                    if free_x {
                        let dsx = (image[[ci, y0, x1]] - image[[ci, y0, x0]]) * (1.0 - fy)
                            + (image[[ci, y1, x1]] - image[[ci, y1, x0]]) * fy;
                        dflow[[0, y, x]] += g * dsx;
                    }
                    if free_y {
                        let dsy = (image[[ci, y1, x0]] - image[[ci, y0, x0]]) * (1.0 - fx)
                            + (image[[ci, y1, x1]] - image[[ci, y0, x1]]) * fx;
                        dflow[[1, y, x]] += g * dsy;
                    }
                }
            }
        }
    }
    (dimg, dflow)
}

#[cfg(test)]
mod tests;
