use std::collections::HashSet;
use std::sync::Arc;

use super::kernels::{self, ConvGeom};
use super::{Shape, Tensor};
use crate::error::{Error, Result};
use crate::spectrum::Direction;

/// Stabilizer inside the amplitude square root, `√(R² + I² + ε²)`.
pub const AMPLITUDE_EPS: f64 = 1e-8;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// rhs is `(N, C, 1, 1)`
    OverPlane,
    /// rhs is `(N, 1, H, W)`
    OverChannels,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var, Broadcast),
    Div(Var, Var),
    Affine(Var, f64),
    Square(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Prelu(Var, Var),
    Conv2d { x: Var, w: Var, b: Var, k: usize },
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Gap(Var),
    Linear { x: Var, w: Var, b: Var },
    Dft(Var),
    Amplitude(Var),
    Phase(Var),
    Polar(Var, Var),
    IdftReal(Var),
    BlurValid(Var, Arc<[f64]>),
    Mean(Var),
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records operations as they execute; [`Graph::backward`] replays them in
/// reverse. Build a fresh graph for every forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    retained: HashSet<usize>,
    checked: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph that rejects any op producing NaN or infinity.
    pub fn checked() -> Self {
        Graph {
            checked: true,
            ..Self::default()
        }
    }

    pub fn is_checked(&self) -> bool {
        self.checked
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, needs_grad: bool) -> Result<Var> {
        if self.checked && !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is kept after [`Graph::backward`].
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Keep the gradient of an interior node after backward.
    pub fn retain_grad(&mut self, v: Var) {
        self.retained.insert(v.0);
    }

    /// Gradient of the last backward target with respect to `v`, if `v` is a
    /// variable or retained node reached by backward.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape(format!("{op}: {sa} vs {sb}")));
        }
        Ok(sa)
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect()
    }

    fn unary(&mut self, name: &'static str, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let t = self.value(x);
        let value = Tensor::new(t.shape(), t.data().iter().map(|&v| f(v)).collect())?;
        let ng = self.needs_grad(x);
        self.push(name, value, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.same_shape("add", a, b)?;
        let value = Tensor::new(s, self.zip_map(a, b, |x, y| x + y))?;
        let ng = self.any_grad(&[a, b]);
        self.push("add", value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.same_shape("sub", a, b)?;
        let value = Tensor::new(s, self.zip_map(a, b, |x, y| x - y))?;
        let ng = self.any_grad(&[a, b]);
        self.push("sub", value, Op::Sub(a, b), ng)
    }

    /// Elementwise product. `b` may also be `(N, C, 1, 1)`, broadcast over
    /// each plane, or `(N, 1, H, W)`, broadcast over channels.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let mode = if sa == sb {
            Broadcast::Same
        } else if sb == Shape::new(sa.n, sa.c, 1, 1) {
            Broadcast::OverPlane
        } else if sb == Shape::new(sa.n, 1, sa.h, sa.w) {
            Broadcast::OverChannels
        } else {
            return Err(Error::Shape(format!(
                "mul: cannot broadcast {sb} onto {sa}"
            )));
        };
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let data = (0..sa.numel())
            .map(|i| av[i] * bv[broadcast_index(sa, mode, i)])
            .collect();
        let value = Tensor::new(sa, data)?;
        let ng = self.any_grad(&[a, b]);
        self.push("mul", value, Op::Mul(a, b, mode), ng)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.same_shape("div", a, b)?;
        let value = Tensor::new(s, self.zip_map(a, b, |x, y| x / y))?;
        let ng = self.any_grad(&[a, b]);
        self.push("div", value, Op::Div(a, b), ng)
    }

    /// `scale·x + shift`
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        self.unary("affine", x, Op::Affine(x, scale), |v| scale * v + shift)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary("square", x, Op::Square(x), |v| v * v)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, Op::Tanh(x), f64::tanh)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, Op::Relu(x), |v| if v > 0.0 { v } else { 0.0 })
    }

    /// `x` where positive, `slope[c]·x` elsewhere.
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        let s = self.shape(x);
        if self.shape(slope).numel() != s.c {
            return Err(Error::Shape(format!(
                "prelu: {} slopes for {} channels",
                self.shape(slope).numel(),
                s.c
            )));
        }
        let a = self.value(slope).data();
        let p = s.plane();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| if v > 0.0 { v } else { a[(i / p) % s.c] * v })
            .collect();
        let value = Tensor::new(s, data)?;
        let ng = self.any_grad(&[x, slope]);
        self.push("prelu", value, Op::Prelu(x, slope), ng)
    }

    /// Stride-1 cross-correlation with zero "same" padding. `w` is
    /// `(C_out, C_in, k, k)` with odd `k`, `b` holds `C_out` values.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sw.c != sx.c {
            return Err(Error::Shape(format!(
                "conv2d: weight {sw} expects {} input channels, got {sx}",
                sw.c
            )));
        }
        if sw.h != sw.w || sw.h % 2 == 0 {
            return Err(Error::Shape(format!(
                "conv2d: kernel {sw} must be square and odd"
            )));
        }
        if self.shape(b).numel() != sw.n {
            return Err(Error::Shape(format!(
                "conv2d: bias size {} for {} outputs",
                self.shape(b).numel(),
                sw.n
            )));
        }
        let geom = ConvGeom {
            x: sx,
            cout: sw.n,
            k: sw.h,
        };
        let data = kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        let value = Tensor::new(Shape::new(sx.n, sw.n, sx.h, sx.w), data)?;
        let ng = self.any_grad(&[x, w, b]);
        self.push("conv2d", value, Op::Conv2d { x, w, b, k: sw.h }, ng)
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&v| self.value(v)).collect();
        let value = Tensor::concat_channels(&values)?;
        let ng = self.any_grad(parts);
        self.push("concat", value, Op::Concat(parts.to_vec()), ng)
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let value = self.value(x).slice_channels(start, len)?;
        let ng = self.needs_grad(x);
        self.push("slice", value, Op::Slice { x, start }, ng)
    }

    /// Global average pooling to `(N, C, 1, 1)`.
    pub fn gap(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let p = s.plane() as f64;
        let data = self
            .value(x)
            .data()
            .chunks(s.plane())
            .map(|c| c.iter().sum::<f64>() / p)
            .collect();
        let value = Tensor::new(Shape::new(s.n, s.c, 1, 1), data)?;
        let ng = self.needs_grad(x);
        self.push("gap", value, Op::Gap(x), ng)
    }

    /// Fully connected layer on `(N, C_in, 1, 1)` with `w` of shape `(C_out, C_in, 1, 1)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.h != 1 || sx.w != 1 || sw.c != sx.c || self.shape(b).numel() != sw.n {
            return Err(Error::Shape(format!("linear: input {sx}, weight {sw}")));
        }
        let (xv, wv, bv) = (
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        let mut data = Vec::with_capacity(sx.n * sw.n);
        for n in 0..sx.n {
            let xr = &xv[n * sx.c..(n + 1) * sx.c];
            for o in 0..sw.n {
                let wr = &wv[o * sx.c..(o + 1) * sx.c];
                data.push(bv[o] + wr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>());
            }
        }
        let value = Tensor::new(Shape::new(sx.n, sw.n, 1, 1), data)?;
        let ng = self.any_grad(&[x, w, b]);
        self.push("linear", value, Op::Linear { x, w, b }, ng)
    }

    /// Unitary 2D DFT of every `(n, c)` plane, as `(N, 2C, H, W)` with real
    /// and imaginary parts in channels `2c` and `2c + 1`.
    pub fn dft(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let data = kernels::dft_real_planes(s, self.value(x).data());
        let value = Tensor::new(Shape::new(s.n, 2 * s.c, s.h, s.w), data)?;
        let ng = self.needs_grad(x);
        self.push("dft", value, Op::Dft(x), ng)
    }

    fn complex_halves(&self, z: Var) -> Result<Shape> {
        let s = self.shape(z);
        if !s.c.is_multiple_of(2) {
            return Err(Error::Shape(format!(
                "complex tensor with odd channel count {s}"
            )));
        }
        Ok(Shape::new(s.n, s.c / 2, s.h, s.w))
    }

    fn map_complex(&self, z: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let s = self.complex_halves(z)?;
        let p = s.plane();
        let mut data = Vec::with_capacity(s.numel());
        for pair in self.value(z).data().chunks(2 * p) {
            let (re, im) = pair.split_at(p);
            data.extend(re.iter().zip(im).map(|(&r, &i)| f(r, i)));
        }
        Tensor::new(s, data)
    }

    /// `√(R² + I² + ε²)` of a complex tensor from [`Graph::dft`].
    pub fn amplitude(&mut self, z: Var) -> Result<Var> {
        let value = self.map_complex(z, |r, i| {
            (r * r + i * i + AMPLITUDE_EPS * AMPLITUDE_EPS).sqrt()
        })?;
        let ng = self.needs_grad(z);
        self.push("amplitude", value, Op::Amplitude(z), ng)
    }

    /// `atan2(I, R)` of a complex tensor from [`Graph::dft`].
    pub fn phase(&mut self, z: Var) -> Result<Var> {
        let value = self.map_complex(z, |r, i| i.atan2(r))?;
        let ng = self.needs_grad(z);
        self.push("phase", value, Op::Phase(z), ng)
    }

    /// Complex tensor `(A cos P, A sin P)`.
    pub fn polar(&mut self, amp: Var, pha: Var) -> Result<Var> {
        let s = self.same_shape("polar", amp, pha)?;
        let p = s.plane();
        let mut data = vec![0.0; 2 * s.numel()];
        let (av, pv) = (self.value(amp).data(), self.value(pha).data());
        for (k, out) in data.chunks_mut(2 * p).enumerate() {
            let (re, im) = out.split_at_mut(p);
            for i in 0..p {
                let (a, (sin, cos)) = (av[k * p + i], pv[k * p + i].sin_cos());
                re[i] = a * cos;
                im[i] = a * sin;
            }
        }
        let value = Tensor::new(Shape::new(s.n, 2 * s.c, s.h, s.w), data)?;
        let ng = self.any_grad(&[amp, pha]);
        self.push("polar", value, Op::Polar(amp, pha), ng)
    }

    /// Real part of the unitary inverse DFT of a complex tensor.
    pub fn idft_real(&mut self, z: Var) -> Result<Var> {
        let s = self.complex_halves(z)?;
        let full = kernels::dft_complex_planes(s, self.value(z).data(), Direction::Inverse);
        let p = s.plane();
        let data = full
            .chunks(2 * p)
            .flat_map(|c| c[..p].iter().copied())
            .collect();
        let value = Tensor::new(s, data)?;
        let ng = self.needs_grad(z);
        self.push("idft", value, Op::IdftReal(z), ng)
    }

    /// Largest imaginary magnitude the inverse transform of `z` would discard.
    pub fn idft_imag_residue(&self, z: Var) -> Result<f64> {
        let s = self.complex_halves(z)?;
        let full = kernels::dft_complex_planes(s, self.value(z).data(), Direction::Inverse);
        let p = s.plane();
        Ok(full
            .chunks(2 * p)
            .flat_map(|c| c[p..].iter())
            .fold(0.0f64, |m, v| m.max(v.abs())))
    }

    /// Amplitude and phase of the unitary DFT of every plane.
    pub fn dft_layer(&mut self, x: Var) -> Result<(Var, Var)> {
        let z = self.dft(x)?;
        Ok((self.amplitude(z)?, self.phase(z)?))
    }

    /// Inverse of [`Graph::dft_layer`], keeping the real part.
    pub fn idft_layer(&mut self, amp: Var, pha: Var) -> Result<Var> {
        let z = self.polar(amp, pha)?;
        self.idft_real(z)
    }

    /// Separable correlation with a 1-D kernel applied along both axes,
    /// keeping only fully supported outputs.
    pub fn blur_valid(&mut self, x: Var, kernel: Arc<[f64]>) -> Result<Var> {
        let s = self.shape(x);
        if s.h < kernel.len() || s.w < kernel.len() {
            return Err(Error::Shape(format!(
                "blur: {s} smaller than {}-tap window",
                kernel.len()
            )));
        }
        let (os, data) = kernels::blur_valid_forward(s, self.value(x).data(), &kernel);
        let value = Tensor::new(os, data)?;
        let ng = self.needs_grad(x);
        self.push("blur", value, Op::BlurValid(x, kernel), ng)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let value = Tensor::scalar(t.data().iter().sum::<f64>() / t.data().len() as f64);
        let ng = self.needs_grad(x);
        self.push("mean", value, Op::Mean(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).data().iter().sum());
        let ng = self.needs_grad(x);
        self.push("sum", value, Op::Sum(x), ng)
    }

    /// Reverse sweep from a scalar. Gradients of variables and retained nodes
    /// are readable through [`Graph::grad`] afterwards; earlier gradients are
    /// discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss).numel() != 1 {
            return Err(Error::Shape(format!(
                "backward from non-scalar {}",
                self.shape(loss)
            )));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if node.needs_grad {
                let mut sink = GradSink {
                    nodes: &self.nodes,
                    grads: &mut self.grads,
                };
                propagate(&mut sink, node, &g);
            }
            if matches!(node.op, Op::Leaf) || self.retained.contains(&i) {
                self.grads[i] = Some(g);
            }
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn broadcast_index(s: Shape, mode: Broadcast, i: usize) -> usize {
    match mode {
        Broadcast::Same => i,
        Broadcast::OverPlane => i / s.plane(),
        Broadcast::OverChannels => {
            let p = s.plane();
            (i / (s.c * p)) * p + i % p
        }
    }
}

struct GradSink<'a> {
    nodes: &'a [Node],
    grads: &'a mut [Option<Vec<f64>>],
}

impl<'a> GradSink<'a> {
    fn val(&self, v: Var) -> &'a [f64] {
        let nodes: &'a [Node] = self.nodes;
        nodes[v.0].value.data()
    }

    fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn add(&mut self, v: Var, contrib: Vec<f64>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        debug_assert_eq!(contrib.len(), self.nodes[v.0].value.data().len());
        match &mut self.grads[v.0] {
            Some(acc) => {
                for (a, c) in acc.iter_mut().zip(&contrib) {
                    *a += c;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }
}

fn propagate(sink: &mut GradSink<'_>, node: &Node, g: &[f64]) {
    let y = node.value.data();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            sink.add(*a, g.to_vec());
            sink.add(*b, g.to_vec());
        }
        Op::Sub(a, b) => {
            sink.add(*a, g.to_vec());
            sink.add(*b, g.iter().map(|v| -v).collect());
        }
        Op::Mul(a, b, mode) => {
            let s = sink.shape(*a);
            if sink.wants(*a) {
                let bv = sink.val(*b);
                let ga = g
                    .iter()
                    .enumerate()
                    .map(|(i, gv)| gv * bv[broadcast_index(s, *mode, i)])
                    .collect();
                sink.add(*a, ga);
            }
            if sink.wants(*b) {
                let av = sink.val(*a);
                let mut gb = vec![0.0; sink.shape(*b).numel()];
                for (i, gv) in g.iter().enumerate() {
                    gb[broadcast_index(s, *mode, i)] += gv * av[i];
                }
                sink.add(*b, gb);
            }
        }
        Op::Div(a, b) => {
            let bv = sink.val(*b);
            let ga: Vec<f64> = g.iter().zip(bv).map(|(gv, d)| gv / d).collect();
            if sink.wants(*b) {
                let gb = ga.iter().zip(y).map(|(q, yv)| -q * yv).collect();
                sink.add(*b, gb);
            }
            sink.add(*a, ga);
        }
        Op::Affine(x, scale) => sink.add(*x, g.iter().map(|v| v * scale).collect()),
        Op::Square(x) => {
            let xv = sink.val(*x);
            let gx = g.iter().zip(xv).map(|(gv, v)| 2.0 * v * gv).collect();
            sink.add(*x, gx);
        }
        Op::Sigmoid(x) => {
            let gx = g.iter().zip(y).map(|(gv, s)| gv * s * (1.0 - s)).collect();
            sink.add(*x, gx);
        }
        Op::Tanh(x) => {
            let gx = g.iter().zip(y).map(|(gv, t)| gv * (1.0 - t * t)).collect();
            sink.add(*x, gx);
        }
        Op::Relu(x) => {
            let xv = sink.val(*x);
            let gx = g
                .iter()
                .zip(xv)
                .map(|(gv, v)| if *v > 0.0 { *gv } else { 0.0 })
                .collect();
            sink.add(*x, gx);
        }
        Op::Prelu(x, slope) => {
            let s = sink.shape(*x);
            let p = s.plane();
            let xv = sink.val(*x);
            let a = sink.val(*slope);
            if sink.wants(*x) {
                let gx = g
                    .iter()
                    .zip(xv)
                    .enumerate()
                    .map(|(i, (gv, v))| if *v > 0.0 { *gv } else { a[(i / p) % s.c] * gv })
                    .collect();
                sink.add(*x, gx);
            }
            if sink.wants(*slope) {
                let mut ga = vec![0.0; s.c];
                for (i, (gv, v)) in g.iter().zip(xv).enumerate() {
                    if *v <= 0.0 {
                        ga[(i / p) % s.c] += gv * v;
                    }
                }
                sink.add(*slope, ga);
            }
        }
        Op::Conv2d { x, w, b, k } => {
            let geom = ConvGeom {
                x: sink.shape(*x),
                cout: sink.shape(*w).n,
                k: *k,
            };
            let want_dw = sink.wants(*w) || sink.wants(*b);
            let (dx, dw, db) = kernels::conv2d_backward(
                &geom,
                sink.val(*x),
                sink.val(*w),
                g,
                sink.wants(*x),
                want_dw,
            );
            if sink.wants(*x) {
                sink.add(*x, dx);
            }
            if want_dw {
                sink.add(*w, dw);
                sink.add(*b, db);
            }
        }
        Op::Concat(parts) => {
            let s = node.value.shape();
            let p = s.plane();
            let mut offset = 0;
            for part in parts {
                let c = sink.shape(*part).c;
                if sink.wants(*part) {
                    let mut gp = Vec::with_capacity(s.n * c * p);
                    for n in 0..s.n {
                        let base = (n * s.c + offset) * p;
                        gp.extend_from_slice(&g[base..base + c * p]);
                    }
                    sink.add(*part, gp);
                }
                offset += c;
            }
        }
        Op::Slice { x, start } => {
            let sx = sink.shape(*x);
            let sy = node.value.shape();
            let p = sx.plane();
            let mut gx = vec![0.0; sx.numel()];
            for n in 0..sx.n {
                let dst = (n * sx.c + start) * p;
                let src = n * sy.c * p;
                gx[dst..dst + sy.c * p].copy_from_slice(&g[src..src + sy.c * p]);
            }
            sink.add(*x, gx);
        }
        Op::Gap(x) => {
            let p = sink.shape(*x).plane();
            let gx = (0..sink.shape(*x).numel())
                .map(|i| g[i / p] / p as f64)
                .collect();
            sink.add(*x, gx);
        }
        Op::Linear { x, w, b } => {
            let (sx, sw) = (sink.shape(*x), sink.shape(*w));
            let (cin, cout) = (sx.c, sw.n);
            let (xv, wv) = (sink.val(*x), sink.val(*w));
            if sink.wants(*x) {
                let mut gx = vec![0.0; sx.numel()];
                for n in 0..sx.n {
                    for o in 0..cout {
                        let gv = g[n * cout + o];
                        for i in 0..cin {
                            gx[n * cin + i] += wv[o * cin + i] * gv;
                        }
                    }
                }
                sink.add(*x, gx);
            }
            if sink.wants(*w) || sink.wants(*b) {
                let mut gw = vec![0.0; sw.numel()];
                let mut gb = vec![0.0; cout];
                for n in 0..sx.n {
                    for o in 0..cout {
                        let gv = g[n * cout + o];
                        gb[o] += gv;
                        for i in 0..cin {
                            gw[o * cin + i] += gv * xv[n * cin + i];
                        }
                    }
                }
                sink.add(*w, gw);
                sink.add(*b, gb);
            }
        }
        Op::Dft(x) => {
            // adjoint of the unitary DFT restricted to real input
            let s = sink.shape(*x);
            let p = s.plane();
            let back = kernels::dft_complex_planes(s, g, Direction::Inverse);
            let gx = back
                .chunks(2 * p)
                .flat_map(|c| c[..p].iter().copied())
                .collect();
            sink.add(*x, gx);
        }
        Op::Amplitude(z) => {
            let p = node.value.shape().plane();
            let zv = sink.val(*z);
            let mut gz = vec![0.0; zv.len()];
            for (k, (gp, ap)) in g.chunks(p).zip(y.chunks(p)).enumerate() {
                for i in 0..p {
                    let (r, im) = (zv[2 * k * p + i], zv[(2 * k + 1) * p + i]);
                    gz[2 * k * p + i] = gp[i] * r / ap[i];
                    gz[(2 * k + 1) * p + i] = gp[i] * im / ap[i];
                }
            }
            sink.add(*z, gz);
        }
        Op::Phase(z) => {
            let p = node.value.shape().plane();
            let zv = sink.val(*z);
            let mut gz = vec![0.0; zv.len()];
            for (k, gp) in g.chunks(p).enumerate() {
                for i in 0..p {
                    let (r, im) = (zv[2 * k * p + i], zv[(2 * k + 1) * p + i]);
                    let d = r * r + im * im;
                    if d > 0.0 {
                        gz[2 * k * p + i] = -gp[i] * im / d;
                        gz[(2 * k + 1) * p + i] = gp[i] * r / d;
                    }
                }
            }
            sink.add(*z, gz);
        }
        Op::Polar(amp, pha) => {
            let p = sink.shape(*amp).plane();
            let (av, pv) = (sink.val(*amp), sink.val(*pha));
            let mut ga = vec![0.0; av.len()];
            let mut gp = vec![0.0; av.len()];
            for (k, pair) in g.chunks(2 * p).enumerate() {
                let (gr, gi) = pair.split_at(p);
                for i in 0..p {
                    let j = k * p + i;
                    let (s, c) = pv[j].sin_cos();
                    ga[j] = gr[i] * c + gi[i] * s;
                    gp[j] = av[j] * (gi[i] * c - gr[i] * s);
                }
            }
            sink.add(*amp, ga);
            sink.add(*pha, gp);
        }
        Op::IdftReal(z) => {
            let s = node.value.shape();
            let gz = kernels::dft_real_planes(s, g);
            sink.add(*z, gz);
        }
        Op::BlurValid(x, kernel) => {
            let gx = kernels::blur_valid_backward(sink.shape(*x), g, kernel);
            sink.add(*x, gx);
        }
        Op::Mean(x) => {
            let n = sink.shape(*x).numel();
            sink.add(*x, vec![g[0] / n as f64; n]);
        }
        Op::Sum(x) => {
            let n = sink.shape(*x).numel();
            sink.add(*x, vec![g[0]; n]);
        }
    }
}
