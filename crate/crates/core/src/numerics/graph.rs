//! Tape-based reverse-mode differentiation. Nodes are appended in
//! evaluation order, so the tape is already a topological order and the
//! backward sweep walks it in reverse.

use super::gemm::gemm;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Upsample2x(Var),
    Relu(Var),
    Sigmoid(Var),
    Binary {
        kind: BinKind,
        a: Var,
        b: Var,
        broadcast: bool,
    },
    Scale(Var, f64),
    SumAll(Var),
    MeanAll(Var),
    SumAxis {
        input: Var,
        axis: usize,
    },
    SumSquares(Var),
    /// Scalar output with precomputed partial derivatives per input.
    Scalar {
        inputs: Vec<Var>,
        partials: Vec<Vec<f64>>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward sweep, indexed by `Var`.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
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

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    fn push(&mut self, name: &str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Cross-correlation of NCHW `input` with `[out, in, k, k]` weights and
    /// zero padding.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let x = self.value(input);
        let wt = self.value(weight);
        let [n, c, h, w] = x.dims4()?;
        let geom = ConvGeom::new(c, h, w, wt.shape(), stride, pad)?;
        if let Some(b) = bias {
            if self.value(b).shape() != [geom.c_out] {
                return Err(Error::Shape(format!(
                    "conv bias shape {:?}, expected [{}]",
                    self.value(b).shape(),
                    geom.c_out
                )));
            }
        }
        let plane = geom.h_out * geom.w_out;
        let mut out = vec![0.0; n * geom.c_out * plane];
        let mut cols = vec![0.0; geom.rows() * plane];
        for b_i in 0..n {
            let xin = &x.data()[b_i * c * h * w..(b_i + 1) * c * h * w];
            geom.im2col(xin, &mut cols);
            let o = &mut out[b_i * geom.c_out * plane..(b_i + 1) * geom.c_out * plane];
            if let Some(bv) = bias {
                let bd = self.value(bv).data();
                for (co, row) in o.chunks_mut(plane).enumerate() {
                    row.fill(bd[co]);
                }
            }
            gemm(
                geom.c_out,
                geom.rows(),
                plane,
                wt.data(),
                false,
                &cols,
                false,
                o,
                1.0,
            );
        }
        let value = Tensor::new(vec![n, geom.c_out, geom.h_out, geom.w_out], out)?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        self.push(
            "conv2d",
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            },
            &inputs,
        )
    }

    /// Nearest-neighbour 2x upsampling of an NCHW tensor.
    pub fn upsample2x(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let [n, c, h, w] = x.dims4()?;
        let mut out = vec![0.0; n * c * 4 * h * w];
        for plane in 0..n * c {
            let src = &x.data()[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * 4 * h * w..(plane + 1) * 4 * h * w];
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
                }
            }
        }
        let value = Tensor::new(vec![n, c, 2 * h, 2 * w], out)?;
        self.push("upsample2x", value, Op::Upsample2x(input), &[input])
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let value = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| v.max(0.0)).collect())?;
        self.push("relu", value, Op::Relu(input), &[input])
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let value = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| sigmoid(v)).collect())?;
        self.push("sigmoid", value, Op::Sigmoid(input), &[input])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Mul, a, b)
    }

    /// Same-shape elementwise op, or `b` of shape `[C]` broadcast over the
    /// channel axis of an NCHW `a`.
    fn binary(&mut self, kind: BinKind, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let broadcast = if ta.shape() == tb.shape() {
            false
        } else if ta.shape().len() == 4 && tb.shape() == [ta.shape()[1]] {
            true
        } else {
            return Err(Error::Shape(format!(
                "cannot broadcast {:?} against {:?}",
                tb.shape(),
                ta.shape()
            )));
        };
        let f = |x: f64, y: f64| match kind {
            BinKind::Add => x + y,
            BinKind::Sub => x - y,
            BinKind::Mul => x * y,
        };
        let data: Vec<f64> = if broadcast {
            let [_, c, h, w] = ta.dims4()?;
            let plane = h * w;
            ta.data()
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, tb.data()[(i / plane) % c]))
                .collect()
        } else {
            ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect()
        };
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let name = match kind {
            BinKind::Add => "add",
            BinKind::Sub => "sub",
            BinKind::Mul => "mul",
        };
        self.push(name, value, Op::Binary { kind, a, b, broadcast }, &[a, b])
    }

    pub fn scale(&mut self, input: Var, k: f64) -> Result<Var> {
        let x = self.value(input);
        let value = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| v * k).collect())?;
        self.push("scale", value, Op::Scale(input, k), &[input])
    }

    pub fn sum_all(&mut self, input: Var) -> Result<Var> {
        let s = self.value(input).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::SumAll(input), &[input])
    }

    pub fn mean_all(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let s = x.data().iter().sum::<f64>() / x.numel() as f64;
        self.push("mean", Tensor::scalar(s), Op::MeanAll(input), &[input])
    }

    /// Sums out one axis, keeping the remaining axes in order.
    pub fn sum_axis(&mut self, input: Var, axis: usize) -> Result<Var> {
        let x = self.value(input);
        let shape = x.shape();
        if axis >= shape.len() {
            return Err(Error::Shape(format!("axis {axis} out of range for {shape:?}")));
        }
        let (outer, len, inner) = axis_split(shape, axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let src = &x.data()[(o * len + k) * inner..(o * len + k + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut new_shape: Vec<usize> = shape.to_vec();
        new_shape.remove(axis);
        if new_shape.is_empty() {
            new_shape.push(1);
        }
        let value = Tensor::new(new_shape, out)?;
        self.push("sum_axis", value, Op::SumAxis { input, axis }, &[input])
    }

    pub fn sum_squares(&mut self, input: Var) -> Result<Var> {
        let s = self.value(input).sum_squares();
        self.push("sum_squares", Tensor::scalar(s), Op::SumSquares(input), &[input])
    }

    /// Records an externally evaluated scalar function of `inputs` whose
    /// partial derivatives were computed alongside its value.
    pub fn scalar_fn(&mut self, name: &str, inputs: &[Var], value: f64, partials: Vec<Vec<f64>>) -> Result<Var> {
        if inputs.len() != partials.len() {
            return Err(Error::Shape("one partial derivative per input required".into()));
        }
        for (v, p) in inputs.iter().zip(&partials) {
            if self.value(*v).numel() != p.len() {
                return Err(Error::Shape(format!(
                    "{name}: partial has {} entries, input has {}",
                    p.len(),
                    self.value(*v).numel()
                )));
            }
        }
        self.push(
            name,
            Tensor::scalar(value),
            Op::Scalar {
                inputs: inputs.to_vec(),
                partials,
            },
            inputs,
        )
    }

    /// Reverse sweep from a scalar. Gradients of every node reachable from
    /// `loss` that requires them are returned; the tape is cleared.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let nodes = std::mem::take(&mut self.nodes);
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            backprop_node(&nodes, node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        for (g, node) in grads.iter_mut().zip(&nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], v: Var, delta: Vec<f64>) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(g) => {
            for (a, d) in g.iter_mut().zip(delta) {
                *a += d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

fn backprop_node(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
    match &node.op {
        Op::Leaf => {}
        Op::Conv2d {
            input,
            weight,
            bias,
            stride,
            pad,
        } => {
            let x = &nodes[input.0].value;
            let wt = &nodes[weight.0].value;
            let [n, c, h, w] = x.dims4()?;
            let geom = ConvGeom::new(c, h, w, wt.shape(), *stride, *pad)?;
            let plane = geom.h_out * geom.w_out;
            let need_x = nodes[input.0].requires_grad;
            let need_w = nodes[weight.0].requires_grad;
            let mut dx = if need_x { vec![0.0; x.numel()] } else { Vec::new() };
            let mut dw = vec![0.0; wt.numel()];
            let mut cols = vec![0.0; geom.rows() * plane];
            let mut dcols = vec![0.0; geom.rows() * plane];
            for b_i in 0..n {
                let go = &g[b_i * geom.c_out * plane..(b_i + 1) * geom.c_out * plane];
                if need_w {
                    let xin = &x.data()[b_i * c * h * w..(b_i + 1) * c * h * w];
                    geom.im2col(xin, &mut cols);
                    gemm(geom.c_out, plane, geom.rows(), go, false, &cols, true, &mut dw, 1.0);
                }
                if need_x {
                    gemm(geom.rows(), geom.c_out, plane, wt.data(), true, go, false, &mut dcols, 0.0);
                    geom.col2im(&dcols, &mut dx[b_i * c * h * w..(b_i + 1) * c * h * w]);
                }
            }
            if let Some(bv) = bias {
                let mut db = vec![0.0; geom.c_out];
                for b_i in 0..n {
                    for (co, d) in db.iter_mut().enumerate() {
                        let off = (b_i * geom.c_out + co) * plane;
                        *d += g[off..off + plane].iter().sum::<f64>();
                    }
                }
                accumulate(grads, nodes, *bv, db);
            }
            if need_w {
                accumulate(grads, nodes, *weight, dw);
            }
            if need_x {
                accumulate(grads, nodes, *input, dx);
            }
        }
        Op::Upsample2x(input) => {
            let [n, c, h, w] = nodes[input.0].value.dims4()?;
            let mut dx = vec![0.0; n * c * h * w];
            for p in 0..n * c {
                let src = &g[p * 4 * h * w..(p + 1) * 4 * h * w];
                let dst = &mut dx[p * h * w..(p + 1) * h * w];
                for y in 0..2 * h {
                    for xx in 0..2 * w {
                        dst[(y / 2) * w + xx / 2] += src[y * 2 * w + xx];
                    }
                }
            }
            accumulate(grads, nodes, *input, dx);
        }
        Op::Relu(input) => {
            let x = nodes[input.0].value.data();
            let dx = x.iter().zip(g).map(|(&v, &d)| if v > 0.0 { d } else { 0.0 }).collect();
            accumulate(grads, nodes, *input, dx);
        }
        Op::Sigmoid(input) => {
            let y = node.value.data();
            let dx = y.iter().zip(g).map(|(&s, &d)| d * s * (1.0 - s)).collect();
            accumulate(grads, nodes, *input, dx);
        }
        Op::Binary { kind, a, b, broadcast } => {
            let ta = &nodes[a.0].value;
            let tb = &nodes[b.0].value;
            let (da, db_full): (Vec<f64>, Vec<f64>) = match kind {
                BinKind::Add => (g.to_vec(), g.to_vec()),
                BinKind::Sub => (g.to_vec(), g.iter().map(|v| -v).collect()),
                BinKind::Mul => {
                    let bval = |i: usize| -> f64 {
                        if *broadcast {
                            let s = ta.shape();
                            tb.data()[(i / (s[2] * s[3])) % s[1]]
                        } else {
                            tb.data()[i]
                        }
                    };
                    (
                        g.iter().enumerate().map(|(i, &d)| d * bval(i)).collect(),
                        g.iter().zip(ta.data()).map(|(&d, &x)| d * x).collect(),
                    )
                }
            };
            let db = if *broadcast {
                let s = ta.shape();
                let plane = s[2] * s[3];
                let mut acc = vec![0.0; s[1]];
                for (i, v) in db_full.iter().enumerate() {
                    acc[(i / plane) % s[1]] += v;
                }
                acc
            } else {
                db_full
            };
            accumulate(grads, nodes, *a, da);
            accumulate(grads, nodes, *b, db);
        }
        Op::Scale(input, k) => {
            accumulate(grads, nodes, *input, g.iter().map(|v| v * k).collect());
        }
        Op::SumAll(input) => {
            let n = nodes[input.0].value.numel();
            accumulate(grads, nodes, *input, vec![g[0]; n]);
        }
        Op::MeanAll(input) => {
            let n = nodes[input.0].value.numel();
            accumulate(grads, nodes, *input, vec![g[0] / n as f64; n]);
        }
        Op::SumAxis { input, axis } => {
            let shape = nodes[input.0].value.shape();
            let (outer, len, inner) = axis_split(shape, *axis);
            let mut dx = vec![0.0; outer * len * inner];
            for o in 0..outer {
                for k in 0..len {
                    dx[(o * len + k) * inner..(o * len + k + 1) * inner]
                        .copy_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            accumulate(grads, nodes, *input, dx);
        }
        Op::SumSquares(input) => {
            let x = nodes[input.0].value.data();
            accumulate(grads, nodes, *input, x.iter().map(|v| 2.0 * v * g[0]).collect());
        }
        Op::Scalar { inputs, partials } => {
            for (v, p) in inputs.iter().zip(partials) {
                accumulate(grads, nodes, *v, p.iter().map(|d| d * g[0]).collect());
            }
        }
    }
    Ok(())
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Output size and im2col/col2im index maps for one convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    pub c_out: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn new(c_in: usize, h: usize, w: usize, wshape: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let [c_out, wc, kh, kw] = match wshape {
            [a, b, c, d] => [*a, *b, *c, *d],
            _ => return Err(Error::Shape(format!("conv weight must be 4-d, got {wshape:?}"))),
        };
        if wc != c_in {
            return Err(Error::Shape(format!(
                "conv weight expects {wc} input channels, input has {c_in}"
            )));
        }
        if kh != kw {
            return Err(Error::Shape("only square kernels are supported".into()));
        }
        if stride == 0 {
            return Err(Error::Shape("stride must be >= 1".into()));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::Shape(format!(
                "kernel {kh} larger than padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        Ok(ConvGeom {
            c_in,
            h,
            w,
            k: kh,
            stride,
            pad,
            c_out,
            h_out: (h + 2 * pad - kh) / stride + 1,
            w_out: (w + 2 * pad - kw) / stride + 1,
        })
    }

    pub fn rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let plane = self.h_out * self.w_out;
        for ci in 0..self.c_in {
            let xc = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    for oy in 0..self.h_out {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let line = &mut dst[oy * self.w_out..(oy + 1) * self.w_out];
                        if iy < 0 || iy >= self.h as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &xc[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, d) in line.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *d = if ix < 0 || ix >= self.w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let plane = self.h_out * self.w_out;
        for ci in 0..self.c_in {
            let xc = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let src = &cols[row * plane..(row + 1) * plane];
                    for oy in 0..self.h_out {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let line = &src[oy * self.w_out..(oy + 1) * self.w_out];
                        for (ox, &v) in line.iter().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                xc[iy as usize * self.w + ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}
