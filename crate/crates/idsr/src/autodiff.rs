//! Minimal reverse-mode automatic differentiation over dense N×C×H×W
//! tensors: a growing tape of eagerly-evaluated nodes, a fixed op set
//! (convolutions, pointwise nonlinearities, the two broadcast patterns the
//! attention modules need, pooling statistics, ℓ1/ℓ2 losses), and Adam.
//!
//! A [`Tape`] lives for one forward/backward pass; parameters live outside
//! the tape and are re-registered as leaves each iteration. Insertion order
//! is a topological order, so backward is a single reverse sweep.
//!
//! All accumulation happens in `f64` regardless of the tensor scalar, so
//! f32 training and f64 gradient checks share one code path.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Tensor extents. Convolution weights reuse the same struct as
/// (out_channels, in_channels, kh, kw).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

/// Border handling for convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Zero,
    Replicate,
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    /// Cross-correlation, stride 1, same-size output.
    Conv2d {
        input: usize,
        weight: usize,
        bias: Option<usize>,
        pad: Padding,
    },
    /// Fixed (non-trainable) kernel applied independently to every channel.
    DepthwiseFixed {
        input: usize,
        kh: usize,
        kw: usize,
        weights: Vec<S>,
        pad: Padding,
    },
    /// BT.601 luminance of a 3-channel tensor.
    Luminance { input: usize },
    Relu { input: usize },
    Sigmoid { input: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { input: usize, factor: f64 },
    ConcatChannels { inputs: Vec<usize> },
    /// a (N,C,H,W) × map (N,1,H,W), map broadcast over channels.
    MulSpatialMap { a: usize, map: usize },
    /// a (N,C,H,W) × gate (N,C,1,1), gate broadcast over space.
    MulChannelGate { a: usize, gate: usize },
    ChannelMean { input: usize },
    ChannelMax { input: usize, argmax: Vec<usize> },
    GlobalMean { input: usize },
    GlobalMax { input: usize, argmax: Vec<usize> },
    /// Forward difference along width (last column zero).
    ForwardDiffH { input: usize },
    /// Forward difference along height (last row zero).
    ForwardDiffV { input: usize },
    /// Mean |a − b| (scalar output, sign(0) = 0 in backward).
    L1Loss { a: usize, b: usize },
    /// Mean (a − b)² (scalar output).
    L2Loss { a: usize, b: usize },
}

#[derive(Debug)]
struct Node<S> {
    shape: Shape,
    data: Vec<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Append-only computation record; eager forward, one reverse sweep backward.
#[derive(Debug, Default)]
pub struct Tape<S: Real> {
    nodes: Vec<Node<S>>,
}

impl<S: Real> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: VarId) -> Shape {
        self.nodes[v.0].shape
    }

    pub fn value(&self, v: VarId) -> &[S] {
        &self.nodes[v.0].data
    }

    pub fn scalar_value(&self, v: VarId) -> f64 {
        debug_assert_eq!(self.nodes[v.0].data.len(), 1);
        self.nodes[v.0].data[0].to_f64_lossy()
    }

    fn push(&mut self, shape: Shape, data: Vec<S>, op: Op<S>, needs_grad: bool) -> VarId {
        debug_assert_eq!(shape.len(), data.len());
        self.nodes.push(Node {
            shape,
            data,
            op,
            needs_grad,
        });
        VarId(self.nodes.len() - 1)
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    /// Register an input or parameter tensor.
    pub fn leaf(&mut self, shape: Shape, data: Vec<S>, requires_grad: bool) -> Result<VarId> {
        if shape.len() != data.len() {
            return Err(Error::DimensionMismatch(format!(
                "leaf: shape {:?} wants {} samples, got {}",
                shape,
                shape.len(),
                data.len()
            )));
        }
        Ok(self.push(shape, data, Op::Leaf, requires_grad))
    }

    pub fn leaf_scalar(&mut self, value: f64) -> Result<VarId> {
        self.leaf(Shape::new(1, 1, 1, 1), vec![S::of(value)], false)
    }

    /// Same-size stride-1 cross-correlation. `weight` is (Cout,Cin,kh,kw)
    /// with odd kh,kw; `bias` is (1,Cout,1,1).
    pub fn conv2d(
        &mut self,
        input: VarId,
        weight: VarId,
        bias: Option<VarId>,
        pad: Padding,
    ) -> Result<VarId> {
        let xs = self.shape(input);
        let ws = self.shape(weight);
        if ws.c != xs.c {
            return Err(Error::DimensionMismatch(format!(
                "conv2d: input has {} channels, weight expects {}",
                xs.c, ws.c
            )));
        }
        if ws.h % 2 == 0 || ws.w % 2 == 0 {
            return Err(Error::InvalidArgument("conv2d: kernel sizes must be odd".into()));
        }
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs != Shape::new(1, ws.n, 1, 1) {
                return Err(Error::DimensionMismatch(format!(
                    "conv2d: bias shape {:?} does not match {} output channels",
                    bs, ws.n
                )));
            }
        }
        let out_shape = Shape::new(xs.n, ws.n, xs.h, xs.w);
        let mut out = vec![S::zero(); out_shape.len()];
        {
            let x = &self.nodes[input.0].data;
            let w = &self.nodes[weight.0].data;
            let (ph, pw) = (ws.h / 2, ws.w / 2);
            for n in 0..xs.n {
                for co in 0..ws.n {
                    let b = bias
                        .map(|b| self.nodes[b.0].data[co].to_f64_lossy())
                        .unwrap_or(0.0);
                    for y in 0..xs.h {
                        for xcol in 0..xs.w {
                            let mut acc = b;
                            for ci in 0..xs.c {
                                for dy in 0..ws.h {
                                    for dx in 0..ws.w {
                                        let wv = w[ws.at(co, ci, dy, dx)].to_f64_lossy();
                                        let iy = y as isize + dy as isize - ph as isize;
                                        let ix = xcol as isize + dx as isize - pw as isize;
                                        let xv = sample(x, &xs, n, ci, iy, ix, pad);
                                        acc += wv * xv;
                                    }
                                }
                            }
                            out[out_shape.at(n, co, y, xcol)] = S::of(acc);
                        }
                    }
                }
            }
        }
        let needs =
            self.needs(input.0) || self.needs(weight.0) || bias.map(|b| self.needs(b.0)).unwrap_or(false);
        Ok(self.push(
            out_shape,
            out,
            Op::Conv2d {
                input: input.0,
                weight: weight.0,
                bias: bias.map(|b| b.0),
                pad,
            },
            needs,
        ))
    }

    /// Fixed kernel, one per-channel pass; `weights` is kh×kw row-major.
    /// Gradient flows to the input only.
    pub fn depthwise_fixed(
        &mut self,
        input: VarId,
        kh: usize,
        kw: usize,
        weights: Vec<S>,
        pad: Padding,
    ) -> Result<VarId> {
        if kh % 2 == 0 || kw % 2 == 0 || weights.len() != kh * kw {
            return Err(Error::InvalidArgument(
                "depthwise_fixed: odd kernel dims and kh*kw weights required".into(),
            ));
        }
        let xs = self.shape(input);
        let mut out = vec![S::zero(); xs.len()];
        {
            let x = &self.nodes[input.0].data;
            let (ph, pw) = (kh / 2, kw / 2);
            for n in 0..xs.n {
                for c in 0..xs.c {
                    for y in 0..xs.h {
                        for xcol in 0..xs.w {
                            let mut acc = 0.0f64;
                            for dy in 0..kh {
                                for dx in 0..kw {
                                    let wv = weights[dy * kw + dx].to_f64_lossy();
                                    let iy = y as isize + dy as isize - ph as isize;
                                    let ix = xcol as isize + dx as isize - pw as isize;
                                    acc += wv * sample(x, &xs, n, c, iy, ix, pad);
                                }
                            }
                            out[xs.at(n, c, y, xcol)] = S::of(acc);
                        }
                    }
                }
            }
        }
        let needs = self.needs(input.0);
        Ok(self.push(
            xs,
            out,
            Op::DepthwiseFixed {
                input: input.0,
                kh,
                kw,
                weights,
                pad,
            },
            needs,
        ))
    }

    /// BT.601 luminance 0.299R + 0.587G + 0.114B of a 3-channel tensor.
    pub fn luminance(&mut self, input: VarId) -> Result<VarId> {
        let xs = self.shape(input);
        if xs.c != 3 {
            return Err(Error::ChannelCount {
                expected: 3,
                got: xs.c,
            });
        }
        let out_shape = Shape::new(xs.n, 1, xs.h, xs.w);
        let mut out = vec![S::zero(); out_shape.len()];
        {
            let x = &self.nodes[input.0].data;
            for n in 0..xs.n {
                for y in 0..xs.h {
                    for xcol in 0..xs.w {
                        let r = x[xs.at(n, 0, y, xcol)].to_f64_lossy();
                        let g = x[xs.at(n, 1, y, xcol)].to_f64_lossy();
                        let b = x[xs.at(n, 2, y, xcol)].to_f64_lossy();
                        out[out_shape.at(n, 0, y, xcol)] =
                            S::of(LUMA[0] * r + LUMA[1] * g + LUMA[2] * b);
                    }
                }
            }
        }
        let needs = self.needs(input.0);
        Ok(self.push(out_shape, out, Op::Luminance { input: input.0 }, needs))
    }

    pub fn relu(&mut self, input: VarId) -> VarId {
        let xs = self.shape(input);
        let out: Vec<S> = self.nodes[input.0]
            .data
            .iter()
            .map(|&v| if v > S::zero() { v } else { S::zero() })
            .collect();
        let needs = self.needs(input.0);
        self.push(xs, out, Op::Relu { input: input.0 }, needs)
    }

    pub fn sigmoid(&mut self, input: VarId) -> VarId {
        let xs = self.shape(input);
        let out: Vec<S> = self.nodes[input.0]
            .data
            .iter()
            .map(|&v| S::of(1.0 / (1.0 + (-v.to_f64_lossy()).exp())))
            .collect();
        let needs = self.needs(input.0);
        self.push(xs, out, Op::Sigmoid { input: input.0 }, needs)
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.zip_elementwise(a, b, "add", |x, y| x + y, |a, b| Op::Add { a, b })
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.zip_elementwise(a, b, "sub", |x, y| x - y, |a, b| Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.zip_elementwise(a, b, "mul", |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    fn zip_elementwise(
        &mut self,
        a: VarId,
        b: VarId,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
        op: impl Fn(usize, usize) -> Op<S>,
    ) -> Result<VarId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::DimensionMismatch(format!(
                "{name}: shapes {sa:?} and {sb:?} differ"
            )));
        }
        let out: Vec<S> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| S::of(f(x.to_f64_lossy(), y.to_f64_lossy())))
            .collect();
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(sa, out, op(a.0, b.0), needs))
    }

    pub fn scale(&mut self, input: VarId, factor: f64) -> VarId {
        let xs = self.shape(input);
        let out: Vec<S> = self.nodes[input.0]
            .data
            .iter()
            .map(|&v| S::of(v.to_f64_lossy() * factor))
            .collect();
        let needs = self.needs(input.0);
        self.push(
            xs,
            out,
            Op::Scale {
                input: input.0,
                factor,
            },
            needs,
        )
    }

    pub fn concat_channels(&mut self, inputs: &[VarId]) -> Result<VarId> {
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("concat_channels: no inputs".into()));
        }
        let first = self.shape(inputs[0]);
        let mut c_total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
                return Err(Error::DimensionMismatch(
                    "concat_channels: N,H,W must agree".into(),
                ));
            }
            c_total += s.c;
        }
        let out_shape = Shape::new(first.n, c_total, first.h, first.w);
        let mut out = vec![S::zero(); out_shape.len()];
        let mut c_base = 0;
        for &v in inputs {
            let s = self.shape(v);
            for n in 0..s.n {
                for c in 0..s.c {
                    for y in 0..s.h {
                        for x in 0..s.w {
                            out[out_shape.at(n, c_base + c, y, x)] =
                                self.nodes[v.0].data[s.at(n, c, y, x)];
                        }
                    }
                }
            }
            c_base += s.c;
        }
        let needs = inputs.iter().any(|v| self.needs(v.0));
        Ok(self.push(
            out_shape,
            out,
            Op::ConcatChannels {
                inputs: inputs.iter().map(|v| v.0).collect(),
            },
            needs,
        ))
    }

    /// Multiply each channel of `a` by the single-channel spatial `map`.
    pub fn mul_spatial_map(&mut self, a: VarId, map: VarId) -> Result<VarId> {
        let (sa, sm) = (self.shape(a), self.shape(map));
        if sm != Shape::new(sa.n, 1, sa.h, sa.w) {
            return Err(Error::DimensionMismatch(format!(
                "mul_spatial_map: map {sm:?} does not broadcast over {sa:?}"
            )));
        }
        let mut out = vec![S::zero(); sa.len()];
        for n in 0..sa.n {
            for c in 0..sa.c {
                for y in 0..sa.h {
                    for x in 0..sa.w {
                        let m = self.nodes[map.0].data[sm.at(n, 0, y, x)].to_f64_lossy();
                        let v = self.nodes[a.0].data[sa.at(n, c, y, x)].to_f64_lossy();
                        out[sa.at(n, c, y, x)] = S::of(v * m);
                    }
                }
            }
        }
        let needs = self.needs(a.0) || self.needs(map.0);
        Ok(self.push(
            sa,
            out,
            Op::MulSpatialMap {
                a: a.0,
                map: map.0,
            },
            needs,
        ))
    }

    /// Multiply every spatial position of `a` by the per-channel `gate`.
    pub fn mul_channel_gate(&mut self, a: VarId, gate: VarId) -> Result<VarId> {
        let (sa, sg) = (self.shape(a), self.shape(gate));
        if sg != Shape::new(sa.n, sa.c, 1, 1) {
            return Err(Error::DimensionMismatch(format!(
                "mul_channel_gate: gate {sg:?} does not broadcast over {sa:?}"
            )));
        }
        let mut out = vec![S::zero(); sa.len()];
        for n in 0..sa.n {
            for c in 0..sa.c {
                let g = self.nodes[gate.0].data[sg.at(n, c, 0, 0)].to_f64_lossy();
                for y in 0..sa.h {
                    for x in 0..sa.w {
                        let v = self.nodes[a.0].data[sa.at(n, c, y, x)].to_f64_lossy();
                        out[sa.at(n, c, y, x)] = S::of(v * g);
                    }
                }
            }
        }
        let needs = self.needs(a.0) || self.needs(gate.0);
        Ok(self.push(
            sa,
            out,
            Op::MulChannelGate {
                a: a.0,
                gate: gate.0,
            },
            needs,
        ))
    }

    /// Mean across channels → (N,1,H,W).
    pub fn channel_mean(&mut self, input: VarId) -> VarId {
        let xs = self.shape(input);
        let out_shape = Shape::new(xs.n, 1, xs.h, xs.w);
        let mut out = vec![S::zero(); out_shape.len()];
        for n in 0..xs.n {
            for y in 0..xs.h {
                for x in 0..xs.w {
                    let mut acc = 0.0f64;
                    for c in 0..xs.c {
                        acc += self.nodes[input.0].data[xs.at(n, c, y, x)].to_f64_lossy();
                    }
                    out[out_shape.at(n, 0, y, x)] = S::of(acc / xs.c as f64);
                }
            }
        }
        let needs = self.needs(input.0);
        self.push(out_shape, out, Op::ChannelMean { input: input.0 }, needs)
    }

    /// Max across channels → (N,1,H,W); gradient routes to the first argmax.
    pub fn channel_max(&mut self, input: VarId) -> VarId {
        let xs = self.shape(input);
        let out_shape = Shape::new(xs.n, 1, xs.h, xs.w);
        let mut out = vec![S::zero(); out_shape.len()];
        let mut argmax = vec![0usize; out_shape.len()];
        for n in 0..xs.n {
            for y in 0..xs.h {
                for x in 0..xs.w {
                    let mut best = (self.nodes[input.0].data[xs.at(n, 0, y, x)], 0usize);
                    for c in 1..xs.c {
                        let v = self.nodes[input.0].data[xs.at(n, c, y, x)];
                        if v > best.0 {
                            best = (v, c);
                        }
                    }
                    out[out_shape.at(n, 0, y, x)] = best.0;
                    argmax[out_shape.at(n, 0, y, x)] = xs.at(n, best.1, y, x);
                }
            }
        }
        let needs = self.needs(input.0);
        self.push(
            out_shape,
            out,
            Op::ChannelMax {
                input: input.0,
                argmax,
            },
            needs,
        )
    }

    /// Spatial mean per channel → (N,C,1,1).
    pub fn global_mean(&mut self, input: VarId) -> VarId {
        let xs = self.shape(input);
        let out_shape = Shape::new(xs.n, xs.c, 1, 1);
        let mut out = vec![S::zero(); out_shape.len()];
        for n in 0..xs.n {
            for c in 0..xs.c {
                let mut acc = 0.0f64;
                for y in 0..xs.h {
                    for x in 0..xs.w {
                        acc += self.nodes[input.0].data[xs.at(n, c, y, x)].to_f64_lossy();
                    }
                }
                out[out_shape.at(n, c, 0, 0)] = S::of(acc / (xs.h * xs.w) as f64);
            }
        }
        let needs = self.needs(input.0);
        self.push(out_shape, out, Op::GlobalMean { input: input.0 }, needs)
    }

    /// Spatial max per channel → (N,C,1,1); gradient to the first argmax.
    pub fn global_max(&mut self, input: VarId) -> VarId {
        let xs = self.shape(input);
        let out_shape = Shape::new(xs.n, xs.c, 1, 1);
        let mut out = vec![S::zero(); out_shape.len()];
        let mut argmax = vec![0usize; out_shape.len()];
        for n in 0..xs.n {
            for c in 0..xs.c {
                let mut best = (self.nodes[input.0].data[xs.at(n, c, 0, 0)], xs.at(n, c, 0, 0));
                for y in 0..xs.h {
                    for x in 0..xs.w {
                        let idx = xs.at(n, c, y, x);
                        let v = self.nodes[input.0].data[idx];
                        if v > best.0 {
                            best = (v, idx);
                        }
                    }
                }
                out[out_shape.at(n, c, 0, 0)] = best.0;
                argmax[out_shape.at(n, c, 0, 0)] = best.1;
            }
        }
        let needs = self.needs(input.0);
        self.push(
            out_shape,
            out,
            Op::GlobalMax {
                input: input.0,
                argmax,
            },
            needs,
        )
    }

    /// v(y,x) = input(y,x+1) − input(y,x); last column zero.
    pub fn forward_diff_h(&mut self, input: VarId) -> VarId {
        let xs = self.shape(input);
        let mut out = vec![S::zero(); xs.len()];
        for n in 0..xs.n {
            for c in 0..xs.c {
                for y in 0..xs.h {
                    for x in 0..xs.w.saturating_sub(1) {
                        out[xs.at(n, c, y, x)] = S::of(
                            self.nodes[input.0].data[xs.at(n, c, y, x + 1)].to_f64_lossy()
                                - self.nodes[input.0].data[xs.at(n, c, y, x)].to_f64_lossy(),
                        );
                    }
                }
            }
        }
        let needs = self.needs(input.0);
        self.push(xs, out, Op::ForwardDiffH { input: input.0 }, needs)
    }

    /// v(y,x) = input(y+1,x) − input(y,x); last row zero.
    pub fn forward_diff_v(&mut self, input: VarId) -> VarId {
        let xs = self.shape(input);
        let mut out = vec![S::zero(); xs.len()];
        for n in 0..xs.n {
            for c in 0..xs.c {
                for y in 0..xs.h.saturating_sub(1) {
                    for x in 0..xs.w {
                        out[xs.at(n, c, y, x)] = S::of(
                            self.nodes[input.0].data[xs.at(n, c, y + 1, x)].to_f64_lossy()
                                - self.nodes[input.0].data[xs.at(n, c, y, x)].to_f64_lossy(),
                        );
                    }
                }
            }
        }
        let needs = self.needs(input.0);
        self.push(xs, out, Op::ForwardDiffV { input: input.0 }, needs)
    }

    /// Mean absolute difference; scalar.
    pub fn l1_loss(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::DimensionMismatch(format!(
                "l1_loss: shapes {sa:?} and {sb:?} differ"
            )));
        }
        let mut acc = 0.0f64;
        for (x, y) in self.nodes[a.0].data.iter().zip(&self.nodes[b.0].data) {
            acc += (x.to_f64_lossy() - y.to_f64_lossy()).abs();
        }
        acc /= sa.len() as f64;
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(
            Shape::new(1, 1, 1, 1),
            vec![S::of(acc)],
            Op::L1Loss { a: a.0, b: b.0 },
            needs,
        ))
    }

    /// Mean squared difference; scalar.
    pub fn l2_loss(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::DimensionMismatch(format!(
                "l2_loss: shapes {sa:?} and {sb:?} differ"
            )));
        }
        let mut acc = 0.0f64;
        for (x, y) in self.nodes[a.0].data.iter().zip(&self.nodes[b.0].data) {
            acc += (x.to_f64_lossy() - y.to_f64_lossy()).powi(2);
        }
        acc /= sa.len() as f64;
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(
            Shape::new(1, 1, 1, 1),
            vec![S::of(acc)],
            Op::L2Loss { a: a.0, b: b.0 },
            needs,
        ))
    }

    /// Populate gradients of every grad-requiring node with ∂loss/∂node and
    /// return them (indexed like the tape; `None` where no gradient flows).
    pub fn backward(&mut self, loss: VarId) -> Result<Gradients> {
        if self.shape(loss).len() != 1 {
            return Err(Error::InvalidArgument(
                "backward: loss must be a scalar tensor".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = self
            .nodes
            .iter()
            .map(|n| {
                if n.needs_grad {
                    Some(vec![0.0; n.shape.len()])
                } else {
                    None
                }
            })
            .collect();
        if grads[loss.0].is_none() {
            // loss does not depend on any grad-requiring leaf; nothing to do
            return Ok(Gradients { grads });
        }
        grads[loss.0].as_mut().unwrap()[0] = 1.0;

        for i in (0..=loss.0).rev() {
            if grads[i].is_none() {
                continue;
            }
            let gout = grads[i].take().unwrap();
            self.accumulate(i, &gout, &mut grads);
            grads[i] = Some(gout);
        }
        Ok(Gradients { grads })
    }

    /// Scatter ∂loss/∂node_i into the parents of node i.
    fn accumulate(&self, i: usize, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let shape = self.nodes[i].shape;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                pad,
            } => {
                let xs = self.nodes[*input].shape;
                let ws = self.nodes[*weight].shape;
                let (ph, pw) = (ws.h / 2, ws.w / 2);
                let x = &self.nodes[*input].data;
                let w = &self.nodes[*weight].data;
                let want_x = grads[*input].is_some();
                let want_w = grads[*weight].is_some();
                for n in 0..xs.n {
                    for co in 0..ws.n {
                        for y in 0..xs.h {
                            for xcol in 0..xs.w {
                                let g = gout[shape.at(n, co, y, xcol)];
                                if g == 0.0 {
                                    continue;
                                }
                                for ci in 0..xs.c {
                                    for dy in 0..ws.h {
                                        for dx in 0..ws.w {
                                            let iy = y as isize + dy as isize - ph as isize;
                                            let ix = xcol as isize + dx as isize - pw as isize;
                                            if want_w {
                                                let xv = sample(x, &xs, n, ci, iy, ix, *pad);
                                                grads[*weight].as_mut().unwrap()
                                                    [ws.at(co, ci, dy, dx)] += g * xv;
                                            }
                                            if want_x {
                                                if let Some(idx) =
                                                    pad_index(&xs, n, ci, iy, ix, *pad)
                                                {
                                                    grads[*input].as_mut().unwrap()[idx] += g
                                                        * w[ws.at(co, ci, dy, dx)].to_f64_lossy();
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                if let Some(b) = bias {
                    if grads[*b].is_some() {
                        for n in 0..shape.n {
                            for co in 0..shape.c {
                                let mut acc = 0.0;
                                for y in 0..shape.h {
                                    for xcol in 0..shape.w {
                                        acc += gout[shape.at(n, co, y, xcol)];
                                    }
                                }
                                grads[*b].as_mut().unwrap()[co] += acc;
                            }
                        }
                    }
                }
            }
            Op::DepthwiseFixed {
                input,
                kh,
                kw,
                weights,
                pad,
            } => {
                if let Some(gin) = grads[*input].as_mut() {
                    let xs = self.nodes[*input].shape;
                    let (ph, pw) = (kh / 2, kw / 2);
                    for n in 0..xs.n {
                        for c in 0..xs.c {
                            for y in 0..xs.h {
                                for xcol in 0..xs.w {
                                    let g = gout[xs.at(n, c, y, xcol)];
                                    if g == 0.0 {
                                        continue;
                                    }
                                    for dy in 0..*kh {
                                        for dx in 0..*kw {
                                            let iy = y as isize + dy as isize - ph as isize;
                                            let ix = xcol as isize + dx as isize - pw as isize;
                                            if let Some(idx) = pad_index(&xs, n, c, iy, ix, *pad) {
                                                gin[idx] +=
                                                    g * weights[dy * kw + dx].to_f64_lossy();
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Luminance { input } => {
                if let Some(gin) = grads[*input].as_mut() {
                    let xs = self.nodes[*input].shape;
                    for n in 0..shape.n {
                        for y in 0..shape.h {
                            for x in 0..shape.w {
                                let g = gout[shape.at(n, 0, y, x)];
                                for c in 0..3 {
                                    gin[xs.at(n, c, y, x)] += g * LUMA[c];
                                }
                            }
                        }
                    }
                }
            }
            Op::Relu { input } => {
                if let Some(gin) = grads[*input].as_mut() {
                    for (k, (&v, g)) in self.nodes[*input].data.iter().zip(gout).enumerate() {
                        if v > S::zero() {
                            gin[k] += g;
                        }
                    }
                }
            }
            Op::Sigmoid { input } => {
                if let Some(gin) = grads[*input].as_mut() {
                    for (k, (&y, g)) in self.nodes[i].data.iter().zip(gout).enumerate() {
                        let y = y.to_f64_lossy();
                        gin[k] += g * y * (1.0 - y);
                    }
                }
            }
            Op::Add { a, b } => {
                for &p in [a, b].iter() {
                    if let Some(g) = grads[*p].as_mut() {
                        for (k, gv) in gout.iter().enumerate() {
                            g[k] += gv;
                        }
                    }
                }
            }
            Op::Sub { a, b } => {
                if let Some(g) = grads[*a].as_mut() {
                    for (k, gv) in gout.iter().enumerate() {
                        g[k] += gv;
                    }
                }
                if let Some(g) = grads[*b].as_mut() {
                    for (k, gv) in gout.iter().enumerate() {
                        g[k] -= gv;
                    }
                }
            }
            Op::Mul { a, b } => {
                if let Some(g) = grads[*a].as_mut() {
                    for (k, gv) in gout.iter().enumerate() {
                        g[k] += gv * self.nodes[*b].data[k].to_f64_lossy();
                    }
                }
                if let Some(g) = grads[*b].as_mut() {
                    for (k, gv) in gout.iter().enumerate() {
                        g[k] += gv * self.nodes[*a].data[k].to_f64_lossy();
                    }
                }
            }
            Op::Scale { input, factor } => {
                if let Some(g) = grads[*input].as_mut() {
                    for (k, gv) in gout.iter().enumerate() {
                        g[k] += gv * factor;
                    }
                }
            }
            Op::ConcatChannels { inputs } => {
                let mut c_base = 0;
                for &p in inputs {
                    let s = self.nodes[p].shape;
                    if let Some(g) = grads[p].as_mut() {
                        for n in 0..s.n {
                            for c in 0..s.c {
                                for y in 0..s.h {
                                    for x in 0..s.w {
                                        g[s.at(n, c, y, x)] +=
                                            gout[shape.at(n, c_base + c, y, x)];
                                    }
                                }
                            }
                        }
                    }
                    c_base += s.c;
                }
            }
            Op::MulSpatialMap { a, map } => {
                let sa = self.nodes[*a].shape;
                let sm = self.nodes[*map].shape;
                if let Some(g) = grads[*a].as_mut() {
                    for n in 0..sa.n {
                        for c in 0..sa.c {
                            for y in 0..sa.h {
                                for x in 0..sa.w {
                                    g[sa.at(n, c, y, x)] += gout[sa.at(n, c, y, x)]
                                        * self.nodes[*map].data[sm.at(n, 0, y, x)].to_f64_lossy();
                                }
                            }
                        }
                    }
                }
                if let Some(g) = grads[*map].as_mut() {
                    for n in 0..sa.n {
                        for c in 0..sa.c {
                            for y in 0..sa.h {
                                for x in 0..sa.w {
                                    g[sm.at(n, 0, y, x)] += gout[sa.at(n, c, y, x)]
                                        * self.nodes[*a].data[sa.at(n, c, y, x)].to_f64_lossy();
                                }
                            }
                        }
                    }
                }
            }
            Op::MulChannelGate { a, gate } => {
                let sa = self.nodes[*a].shape;
                let sg = self.nodes[*gate].shape;
                if let Some(g) = grads[*a].as_mut() {
                    for n in 0..sa.n {
                        for c in 0..sa.c {
                            let gv = self.nodes[*gate].data[sg.at(n, c, 0, 0)].to_f64_lossy();
                            for y in 0..sa.h {
                                for x in 0..sa.w {
                                    g[sa.at(n, c, y, x)] += gout[sa.at(n, c, y, x)] * gv;
                                }
                            }
                        }
                    }
                }
                if let Some(g) = grads[*gate].as_mut() {
                    for n in 0..sa.n {
                        for c in 0..sa.c {
                            let mut acc = 0.0;
                            for y in 0..sa.h {
                                for x in 0..sa.w {
                                    acc += gout[sa.at(n, c, y, x)]
                                        * self.nodes[*a].data[sa.at(n, c, y, x)].to_f64_lossy();
                                }
                            }
                            g[sg.at(n, c, 0, 0)] += acc;
                        }
                    }
                }
            }
            Op::ChannelMean { input } => {
                if let Some(g) = grads[*input].as_mut() {
                    let xs = self.nodes[*input].shape;
                    let inv = 1.0 / xs.c as f64;
                    for n in 0..shape.n {
                        for y in 0..shape.h {
                            for x in 0..shape.w {
                                let gv = gout[shape.at(n, 0, y, x)] * inv;
                                for c in 0..xs.c {
                                    g[xs.at(n, c, y, x)] += gv;
                                }
                            }
                        }
                    }
                }
            }
            Op::ChannelMax { input, argmax } => {
                if let Some(g) = grads[*input].as_mut() {
                    for (k, &src) in argmax.iter().enumerate() {
                        g[src] += gout[k];
                    }
                }
            }
            Op::GlobalMean { input } => {
                if let Some(g) = grads[*input].as_mut() {
                    let xs = self.nodes[*input].shape;
                    let inv = 1.0 / (xs.h * xs.w) as f64;
                    for n in 0..xs.n {
                        for c in 0..xs.c {
                            let gv = gout[shape.at(n, c, 0, 0)] * inv;
                            for y in 0..xs.h {
                                for x in 0..xs.w {
                                    g[xs.at(n, c, y, x)] += gv;
                                }
                            }
                        }
                    }
                }
            }
            Op::GlobalMax { input, argmax } => {
                if let Some(g) = grads[*input].as_mut() {
                    for (k, &src) in argmax.iter().enumerate() {
                        g[src] += gout[k];
                    }
                }
            }
            Op::ForwardDiffH { input } => {
                if let Some(g) = grads[*input].as_mut() {
                    let xs = self.nodes[*input].shape;
                    for n in 0..xs.n {
                        for c in 0..xs.c {
                            for y in 0..xs.h {
                                for x in 0..xs.w.saturating_sub(1) {
                                    let gv = gout[xs.at(n, c, y, x)];
                                    g[xs.at(n, c, y, x + 1)] += gv;
                                    g[xs.at(n, c, y, x)] -= gv;
                                }
                            }
                        }
                    }
                }
            }
            Op::ForwardDiffV { input } => {
                if let Some(g) = grads[*input].as_mut() {
                    let xs = self.nodes[*input].shape;
                    for n in 0..xs.n {
                        for c in 0..xs.c {
                            for y in 0..xs.h.saturating_sub(1) {
                                for x in 0..xs.w {
                                    let gv = gout[xs.at(n, c, y, x)];
                                    g[xs.at(n, c, y + 1, x)] += gv;
                                    g[xs.at(n, c, y, x)] -= gv;
                                }
                            }
                        }
                    }
                }
            }
            Op::L1Loss { a, b } => {
                let g = gout[0] / self.nodes[*a].data.len() as f64;
                let signs: Vec<f64> = self.nodes[*a]
                    .data
                    .iter()
                    .zip(&self.nodes[*b].data)
                    .map(|(&x, &y)| {
                        let d = x.to_f64_lossy() - y.to_f64_lossy();
                        if d > 0.0 {
                            1.0
                        } else if d < 0.0 {
                            -1.0
                        } else {
                            0.0 // sign(0) = 0
                        }
                    })
                    .collect();
                if let Some(ga) = grads[*a].as_mut() {
                    for (k, s) in signs.iter().enumerate() {
                        ga[k] += g * s;
                    }
                }
                if let Some(gb) = grads[*b].as_mut() {
                    for (k, s) in signs.iter().enumerate() {
                        gb[k] -= g * s;
                    }
                }
            }
            Op::L2Loss { a, b } => {
                let g = 2.0 * gout[0] / self.nodes[*a].data.len() as f64;
                let diffs: Vec<f64> = self.nodes[*a]
                    .data
                    .iter()
                    .zip(&self.nodes[*b].data)
                    .map(|(&x, &y)| x.to_f64_lossy() - y.to_f64_lossy())
                    .collect();
                if let Some(ga) = grads[*a].as_mut() {
                    for (k, d) in diffs.iter().enumerate() {
                        ga[k] += g * d;
                    }
                }
                if let Some(gb) = grads[*b].as_mut() {
                    for (k, d) in diffs.iter().enumerate() {
                        gb[k] -= g * d;
                    }
                }
            }
        }
    }
}

/// Per-node gradients from one backward pass, always in `f64`.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: VarId) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[inline]
fn pad_index(s: &Shape, n: usize, c: usize, y: isize, x: isize, pad: Padding) -> Option<usize> {
    match pad {
        Padding::Zero => {
            if y < 0 || x < 0 || y >= s.h as isize || x >= s.w as isize {
                None
            } else {
                Some(s.at(n, c, y as usize, x as usize))
            }
        }
        Padding::Replicate => {
            let y = y.clamp(0, s.h as isize - 1) as usize;
            let x = x.clamp(0, s.w as isize - 1) as usize;
            Some(s.at(n, c, y, x))
        }
    }
}

#[inline]
fn sample<S: Real>(data: &[S], s: &Shape, n: usize, c: usize, y: isize, x: isize, pad: Padding) -> f64 {
    match pad_index(s, n, c, y, x, pad) {
        Some(idx) => data[idx].to_f64_lossy(),
        None => 0.0,
    }
}

/// Adam optimizer state for one flat parameter list.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64, param_lens: &[usize]) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: param_lens.iter().map(|&l| vec![0.0; l]).collect(),
            v: param_lens.iter().map(|&l| vec![0.0; l]).collect(),
        }
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.m, &self.v)
    }

    pub fn restore(&mut self, step: u64, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>) {
        self.step = step;
        self.m = m;
        self.v = v;
    }

    /// One Adam update with bias correction, in place. `params[i]` and
    /// `grads[i]` must match the lengths given at construction.
    pub fn step<S: Real>(&mut self, params: &mut [&mut [S]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::InvalidArgument(
                "adam: parameter/gradient group count mismatch".into(),
            ));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(&mut self.v))
        {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(Error::InvalidArgument("adam: group length mismatch".into()));
            }
            for k in 0..m.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                let upd = self.lr * mh / (vh.sqrt() + self.eps);
                p[k] = S::of(p[k].to_f64_lossy() - upd);
            }
        }
        Ok(())
    }
}

/// Scale gradients so their global L2 norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm: f64 = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|&g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// Central finite-difference check of d(graph output)/d(leaf data).
    /// `build` must construct the same graph for any leaf contents and
    /// return a scalar VarId.
    fn fd_check(
        shape: Shape,
        data: &[f64],
        build: impl Fn(&mut Tape<f64>, VarId) -> VarId,
        tol: f64,
    ) {
        let mut tape = Tape::<f64>::new();
        let leaf = tape.leaf(shape, data.to_vec(), true).unwrap();
        let loss = build(&mut tape, leaf);
        let grads = tape.backward(loss).unwrap();
        let analytic = grads.get(leaf).unwrap().to_vec();

        let h = 1e-3;
        let mut max_rel: f64 = 0.0;
        for k in 0..data.len() {
            let eval = |delta: f64| {
                let mut d = data.to_vec();
                d[k] += delta;
                let mut t = Tape::<f64>::new();
                let l = t.leaf(shape, d, false).unwrap();
                let out = build(&mut t, l);
                t.scalar_value(out)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let denom = analytic[k].abs().max(fd.abs()).max(1e-4);
            max_rel = max_rel.max((analytic[k] - fd).abs() / denom);
        }
        assert!(max_rel < tol, "max relative error {max_rel} vs tol {tol}");
    }

    #[test]
    fn conv2d_identity_kernel() {
        let mut tape = Tape::<f64>::new();
        let x = tape
            .leaf(Shape::new(1, 2, 4, 4), rand_vec(32, 1), false)
            .unwrap();
        // 1x1 per-channel identity: weight (2,2,1,1) = I
        let w = tape
            .leaf(
                Shape::new(2, 2, 1, 1),
                vec![1.0, 0.0, 0.0, 1.0],
                false,
            )
            .unwrap();
        let y = tape.conv2d(x, w, None, Padding::Zero).unwrap();
        assert_eq!(tape.value(x), tape.value(y));
    }

    #[test]
    fn conv2d_matches_loop_oracle() {
        let xs = Shape::new(1, 3, 8, 8);
        let ws = Shape::new(4, 3, 3, 3);
        let xd = rand_vec(xs.len(), 2);
        let wd = rand_vec(ws.len(), 3);
        let bd = rand_vec(4, 4);
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(xs, xd.clone(), false).unwrap();
        let w = tape.leaf(ws, wd.clone(), false).unwrap();
        let b = tape.leaf(Shape::new(1, 4, 1, 1), bd.clone(), false).unwrap();
        let y = tape.conv2d(x, w, Some(b), Padding::Zero).unwrap();
        for co in 0..4 {
            for oy in 0..8 {
                for ox in 0..8 {
                    let mut acc = bd[co];
                    for ci in 0..3 {
                        for dy in 0..3usize {
                            for dx in 0..3usize {
                                let iy = oy as isize + dy as isize - 1;
                                let ix = ox as isize + dx as isize - 1;
                                if iy >= 0 && ix >= 0 && iy < 8 && ix < 8 {
                                    acc += wd[ws.at(co, ci, dy, dx)]
                                        * xd[xs.at(0, ci, iy as usize, ix as usize)];
                                }
                            }
                        }
                    }
                    let got = tape.value(y)[Shape::new(1, 4, 8, 8).at(0, co, oy, ox)];
                    assert!((got - acc).abs() < 1e-5, "({co},{oy},{ox}): {got} vs {acc}");
                }
            }
        }
    }

    #[test]
    fn conv2d_input_gradient_fd() {
        for pad in [Padding::Zero, Padding::Replicate] {
            let ws = Shape::new(2, 2, 3, 3);
            let wd = rand_vec(ws.len(), 5);
            fd_check(
                Shape::new(1, 2, 5, 5),
                &rand_vec(50, 6),
                move |t, x| {
                    let w = t.leaf(ws, wd.clone(), false).unwrap();
                    let y = t.conv2d(x, w, None, pad).unwrap();
                    let z = t.leaf(Shape::new(1, 2, 5, 5), rand_vec(50, 7), false).unwrap();
                    t.l2_loss(y, z).unwrap()
                },
                1e-4,
            );
        }
    }

    #[test]
    fn conv2d_weight_and_bias_gradient_fd() {
        let xs = Shape::new(1, 2, 5, 5);
        let xd = rand_vec(xs.len(), 8);
        // leaf under test is the weight
        fd_check(
            Shape::new(3, 2, 3, 3),
            &rand_vec(54, 9),
            move |t, w| {
                let x = t.leaf(xs, xd.clone(), false).unwrap();
                let y = t.conv2d(x, w, None, Padding::Replicate).unwrap();
                let z = t.leaf(Shape::new(1, 3, 5, 5), rand_vec(75, 10), false).unwrap();
                t.l2_loss(y, z).unwrap()
            },
            1e-4,
        );
        let xd = rand_vec(xs.len(), 11);
        let wd = rand_vec(54, 12);
        fd_check(
            Shape::new(1, 3, 1, 1),
            &rand_vec(3, 13),
            move |t, b| {
                let x = t.leaf(xs, xd.clone(), false).unwrap();
                let w = t.leaf(Shape::new(3, 2, 3, 3), wd.clone(), false).unwrap();
                let y = t.conv2d(x, w, Some(b), Padding::Zero).unwrap();
                let z = t.leaf(Shape::new(1, 3, 5, 5), rand_vec(75, 14), false).unwrap();
                t.l2_loss(y, z).unwrap()
            },
            1e-4,
        );
    }

    #[test]
    fn depthwise_fixed_gradient_fd() {
        let kd = rand_vec(9, 15);
        for pad in [Padding::Zero, Padding::Replicate] {
            let kd = kd.clone();
            fd_check(
                Shape::new(1, 2, 5, 5),
                &rand_vec(50, 16),
                move |t, x| {
                    let y = t.depthwise_fixed(x, 3, 3, kd.clone(), pad).unwrap();
                    let z = t.leaf(Shape::new(1, 2, 5, 5), rand_vec(50, 17), false).unwrap();
                    t.l2_loss(y, z).unwrap()
                },
                1e-4,
            );
        }
    }

    #[test]
    fn pointwise_ops_gradient_fd() {
        // keep inputs away from the ReLU/L1 kinks: |x| ∈ (0.1, 1)
        let mut data = rand_vec(32, 18);
        for v in &mut data {
            *v = v.signum() * (0.1 + 0.9 * v.abs());
        }
        let shape = Shape::new(1, 2, 4, 4);
        fd_check(shape, &data, |t, x| {
            let y = t.relu(x);
            let z = t.leaf(shape, vec![0.0; 32], false).unwrap();
            t.l2_loss(y, z).unwrap()
        }, 1e-4);
        fd_check(shape, &data, |t, x| {
            let y = t.sigmoid(x);
            let z = t.leaf(shape, vec![0.0; 32], false).unwrap();
            t.l2_loss(y, z).unwrap()
        }, 1e-4);
        let other = rand_vec(32, 19);
        for (name, f) in [
            ("add", 0usize),
            ("sub", 1),
            ("mul", 2),
        ] {
            let other = other.clone();
            fd_check(shape, &data, move |t, x| {
                let o = t.leaf(shape, other.clone(), false).unwrap();
                let y = match f {
                    0 => t.add(x, o).unwrap(),
                    1 => t.sub(x, o).unwrap(),
                    _ => t.mul(x, o).unwrap(),
                };
                let z = t.leaf(shape, vec![0.25; 32], false).unwrap();
                t.l2_loss(y, z).unwrap()
            }, 1e-4);
            let _ = name;
        }
    }

    #[test]
    fn relu_and_sigmoid_values() {
        let mut tape = Tape::<f64>::new();
        let x = tape
            .leaf(Shape::new(1, 1, 1, 3), vec![-2.0, 0.0, 3.0], false)
            .unwrap();
        let r = tape.relu(x);
        assert_eq!(tape.value(r), &[0.0, 0.0, 3.0]);
        let s = tape.sigmoid(x);
        assert!((tape.value(s)[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn broadcast_ops_gradient_fd() {
        let shape = Shape::new(1, 3, 4, 4);
        let data = rand_vec(shape.len(), 20);
        let map = rand_vec(16, 21);
        fd_check(shape, &data, move |t, x| {
            let m = t.leaf(Shape::new(1, 1, 4, 4), map.clone(), false).unwrap();
            let y = t.mul_spatial_map(x, m).unwrap();
            let z = t.leaf(shape, vec![0.0; shape.len()], false).unwrap();
            t.l2_loss(y, z).unwrap()
        }, 1e-4);
        // and w.r.t. the map itself
        let base = rand_vec(shape.len(), 22);
        fd_check(Shape::new(1, 1, 4, 4), &rand_vec(16, 23), move |t, m| {
            let x = t.leaf(shape, base.clone(), false).unwrap();
            let y = t.mul_spatial_map(x, m).unwrap();
            let z = t.leaf(shape, vec![0.0; shape.len()], false).unwrap();
            t.l2_loss(y, z).unwrap()
        }, 1e-4);
        let gate = rand_vec(3, 24);
        let data2 = rand_vec(shape.len(), 25);
        fd_check(shape, &data2, move |t, x| {
            let g = t.leaf(Shape::new(1, 3, 1, 1), gate.clone(), false).unwrap();
            let y = t.mul_channel_gate(x, g).unwrap();
            let z = t.leaf(shape, vec![0.1; shape.len()], false).unwrap();
            t.l2_loss(y, z).unwrap()
        }, 1e-4);
    }

    #[test]
    fn pool_stats_match_loop_oracle() {
        let shape = Shape::new(1, 3, 2, 2);
        let data = rand_vec(shape.len(), 26);
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(shape, data.clone(), false).unwrap();
        let cm = tape.channel_mean(x);
        let cx = tape.channel_max(x);
        let gm = tape.global_mean(x);
        let gx = tape.global_max(x);
        for y in 0..2 {
            for xc in 0..2 {
                let vals: Vec<f64> = (0..3).map(|c| data[shape.at(0, c, y, xc)]).collect();
                let mean = vals.iter().sum::<f64>() / 3.0;
                let max = vals.iter().cloned().fold(f64::MIN, f64::max);
                assert_eq!(tape.value(cm)[y * 2 + xc], mean);
                assert_eq!(tape.value(cx)[y * 2 + xc], max);
            }
        }
        for c in 0..3 {
            let vals: Vec<f64> = (0..4).map(|k| data[shape.at(0, c, k / 2, k % 2)]).collect();
            assert_eq!(tape.value(gm)[c], vals.iter().sum::<f64>() / 4.0);
            assert_eq!(tape.value(gx)[c], vals.iter().cloned().fold(f64::MIN, f64::max));
        }
    }

    #[test]
    fn pool_constant_tensor() {
        let mut tape = Tape::<f64>::new();
        let x = tape
            .leaf(Shape::new(1, 3, 2, 2), vec![0.7; 12], false)
            .unwrap();
        for v in [tape.channel_mean(x), tape.channel_max(x), tape.global_mean(x), tape.global_max(x)] {
            assert!(tape.value(v).iter().all(|&s| (s - 0.7f64).abs() < 1e-12));
        }
    }

    #[test]
    fn max_routes_gradient_to_argmax_only() {
        let shape = Shape::new(1, 3, 1, 1);
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(shape, vec![0.1, 0.9, 0.5], true).unwrap();
        let m = tape.channel_max(x);
        let z = tape.leaf(Shape::new(1, 1, 1, 1), vec![0.0], false).unwrap();
        let loss = tape.l2_loss(m, z).unwrap();
        let grads = tape.backward(loss).unwrap();
        let g = grads.get(x).unwrap();
        assert_eq!(g[0], 0.0);
        assert_ne!(g[1], 0.0);
        assert_eq!(g[2], 0.0);
    }

    #[test]
    fn pool_gradients_fd() {
        let shape = Shape::new(1, 3, 3, 3);
        // distinct values so the argmax is FD-stable
        let data: Vec<f64> = (0..shape.len()).map(|k| (k as f64 * 0.37).sin()).collect();
        for which in 0..4 {
            let d = data.clone();
            fd_check(shape, &d, move |t, x| {
                let y = match which {
                    0 => t.channel_mean(x),
                    1 => t.channel_max(x),
                    2 => t.global_mean(x),
                    _ => t.global_max(x),
                };
                let zs = t.shape(y);
                let z = t.leaf(zs, vec![0.0; zs.len()], false).unwrap();
                t.l2_loss(y, z).unwrap()
            }, 1e-4);
        }
    }

    #[test]
    fn forward_diff_matches_and_differentiates() {
        let shape = Shape::new(1, 1, 3, 3);
        let data = rand_vec(9, 27);
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(shape, data.clone(), false).unwrap();
        let dh = tape.forward_diff_h(x);
        let dv = tape.forward_diff_v(x);
        assert_eq!(tape.value(dh)[2], 0.0); // last column
        assert_eq!(tape.value(dv)[8], 0.0); // last row
        assert!((tape.value(dh)[0] - (data[1] - data[0])).abs() < 1e-15);
        assert!((tape.value(dv)[0] - (data[3] - data[0])).abs() < 1e-15);
        for which in 0..2 {
            fd_check(shape, &rand_vec(9, 28), move |t, x| {
                let y = if which == 0 { t.forward_diff_h(x) } else { t.forward_diff_v(x) };
                let z = t.leaf(shape, vec![0.0; 9], false).unwrap();
                t.l2_loss(y, z).unwrap()
            }, 1e-4);
        }
    }

    #[test]
    fn l1_values_and_gradient() {
        let shape = Shape::new(1, 1, 2, 2);
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(shape, vec![0.0; 4], false).unwrap();
        let b = tape.leaf(shape, vec![1.0; 4], false).unwrap();
        let l = tape.l1_loss(a, b).unwrap();
        assert_eq!(tape.scalar_value(l), 1.0);
        let l0 = tape.l1_loss(a, a).unwrap();
        assert_eq!(tape.scalar_value(l0), 0.0);
        // gradient check away from the kink
        let target = vec![0.9, -0.8, 0.7, -0.6];
        fd_check(shape, &[0.2, 0.1, -0.3, 0.4], move |t, x| {
            let z = t.leaf(shape, target.clone(), false).unwrap();
            t.l1_loss(x, z).unwrap()
        }, 1e-4);
    }

    #[test]
    fn concat_and_luminance_gradients_fd() {
        let shape = Shape::new(1, 3, 3, 3);
        let other = rand_vec(9, 29);
        fd_check(shape, &rand_vec(27, 30), move |t, x| {
            let o = t.leaf(Shape::new(1, 1, 3, 3), other.clone(), false).unwrap();
            let cat = t.concat_channels(&[x, o]).unwrap();
            let zs = t.shape(cat);
            let z = t.leaf(zs, vec![0.0; zs.len()], false).unwrap();
            t.l2_loss(cat, z).unwrap()
        }, 1e-4);
        fd_check(shape, &rand_vec(27, 31), move |t, x| {
            let y = t.luminance(x).unwrap();
            let z = t.leaf(Shape::new(1, 1, 3, 3), vec![0.0; 9], false).unwrap();
            t.l2_loss(y, z).unwrap()
        }, 1e-4);
    }

    #[test]
    fn gradient_is_linear_over_sum_of_graphs() {
        let shape = Shape::new(1, 1, 3, 3);
        let data = rand_vec(9, 32);
        let t1 = rand_vec(9, 33);
        let t2 = rand_vec(9, 34);
        let run = |combine: bool| -> Vec<f64> {
            let mut tape = Tape::<f64>::new();
            let x = tape.leaf(shape, data.clone(), true).unwrap();
            let z1 = tape.leaf(shape, t1.clone(), false).unwrap();
            let z2 = tape.leaf(shape, t2.clone(), false).unwrap();
            let l1 = tape.l2_loss(x, z1).unwrap();
            let l2 = tape.l2_loss(x, z2).unwrap();
            if combine {
                let l = tape.add(l1, l2).unwrap();
                let g = tape.backward(l).unwrap();
                g.get(x).unwrap().to_vec()
            } else {
                let ga = tape.backward(l1).unwrap().get(x).unwrap().to_vec();
                let gb = tape.backward(l2).unwrap().get(x).unwrap().to_vec();
                ga.iter().zip(&gb).map(|(a, b)| a + b).collect()
            }
        };
        let combined = run(true);
        let separate = run(false);
        for (a, b) in combined.iter().zip(&separate) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Shape::new(1, 1, 2, 2), vec![0.0; 4], true).unwrap();
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn adam_descends_quadratic_bowl() {
        let mut w = vec![1.0f64, -2.0, 0.5, 3.0];
        let mut adam = AdamState::new(0.1, &[4]);
        for _ in 0..200 {
            let g: Vec<f64> = w.iter().map(|&x| 2.0 * x).collect();
            adam.step(&mut [&mut w[..]], &[&g]).unwrap();
        }
        let norm: f64 = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm < 1e-3, "norm {norm}");
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut w = vec![0.3f32, -0.7];
        let before = w.clone();
        let mut adam = AdamState::new(0.1, &[2]);
        adam.step(&mut [&mut w[..]], &[&[0.0, 0.0]]).unwrap();
        assert_eq!(w, before);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut w = vec![0.5f32, -0.25, 0.125];
            let mut adam = AdamState::new(0.01, &[3]);
            for k in 0..50 {
                let g: Vec<f64> = w.iter().map(|&x| (x as f64) + (k as f64 * 0.01).sin()).collect();
                adam.step(&mut [&mut w[..]], &[&g]).unwrap();
            }
            w
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn clip_global_norm_scales_long_gradients() {
        let mut g = vec![vec![3.0, 4.0]]; // norm 5
        let norm = clip_global_norm(&mut g, 1.0);
        assert_eq!(norm, 5.0);
        let new_norm: f64 = g[0].iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((new_norm - 1.0).abs() < 1e-12);
        let mut small = vec![vec![0.3, 0.4]];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0], vec![0.3, 0.4]);
    }
}
