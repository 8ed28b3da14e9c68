//! Layer kinds and their batched forward/backward kernels.
//!
//! Per-sample layouts are channels-first (`[C, H, W]`). Convolutions and
//! pooling use valid padding.

use std::fmt;

use crate::nn::tensor::Tensor;
use crate::scalar::{gemm, Op, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    MaxPool2d {
        size: usize,
        stride: usize,
    },
    Relu,
    /// Max over groups of `pieces` consecutive channels.
    Maxout {
        pieces: usize,
    },
    Flatten,
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Dense { inputs, outputs } => write!(f, "dense {inputs}->{outputs}"),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => write!(
                f,
                "conv2d {in_channels}->{out_channels} k{kernel} s{stride}"
            ),
            LayerSpec::MaxPool2d { size, stride } => write!(f, "maxpool2d {size} s{stride}"),
            LayerSpec::Relu => f.write_str("relu"),
            LayerSpec::Maxout { pieces } => write!(f, "maxout p{pieces}"),
            LayerSpec::Flatten => f.write_str("flatten"),
        }
    }
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
            LayerSpec::Relu => "relu",
            LayerSpec::Maxout { .. } => "maxout",
            LayerSpec::Flatten => "flatten",
        }
    }

    /// Per-sample output shape for a per-sample input shape, or a reason the
    /// input is unacceptable.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                if inputs == 0 || outputs == 0 {
                    return Err("dense dims must be positive".into());
                }
                if input != [inputs] {
                    return Err(format!("dense expects input [{inputs}], got {input:?}"));
                }
                Ok(vec![outputs])
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
                    return Err("conv2d dims must be positive".into());
                }
                match input {
                    &[c, h, w] if c == in_channels && h >= kernel && w >= kernel => Ok(vec![
                        out_channels,
                        (h - kernel) / stride + 1,
                        (w - kernel) / stride + 1,
                    ]),
                    _ => Err(format!(
                        "conv2d expects [{in_channels}, H>={kernel}, W>={kernel}], got {input:?}"
                    )),
                }
            }
            LayerSpec::MaxPool2d { size, stride } => {
                if size == 0 || stride == 0 {
                    return Err("maxpool2d dims must be positive".into());
                }
                match input {
                    &[c, h, w] if h >= size && w >= size => {
                        Ok(vec![c, (h - size) / stride + 1, (w - size) / stride + 1])
                    }
                    _ => Err(format!(
                        "maxpool2d expects [C, H>={size}, W>={size}], got {input:?}"
                    )),
                }
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Maxout { pieces } => {
                if pieces == 0 {
                    return Err("maxout needs at least one piece".into());
                }
                match input.first() {
                    Some(&c) if c % pieces == 0 => {
                        let mut out = input.to_vec();
                        out[0] = c / pieces;
                        Ok(out)
                    }
                    _ => Err(format!(
                        "maxout pieces {pieces} must divide channel count of {input:?}"
                    )),
                }
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Shapes of the trainable parameters (weight first, then bias).
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => vec![vec![outputs, inputs], vec![outputs]],
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![
                vec![out_channels, in_channels * kernel * kernel],
                vec![out_channels],
            ],
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum()
    }

    /// Fan-in used by the scaled initializer.
    pub fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, .. } => inputs,
            LayerSpec::Conv2d {
                in_channels,
                kernel,
                ..
            } => in_channels * kernel * kernel,
            _ => 0,
        }
    }
}

/// A layer instance with resolved shapes and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub spec: LayerSpec,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    pub params: Vec<Tensor<T>>,
}

/// Result of a layer forward pass: the output and, for max-style layers, the
/// winning input offset (per sample) of every output element.
pub(crate) struct LayerOutput<T> {
    pub output: Tensor<T>,
    pub argmax: Option<Vec<u32>>,
}

fn batched(m: usize, per_sample: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(per_sample.len() + 1);
    s.push(m);
    s.extend_from_slice(per_sample);
    s
}

impl<T: Scalar> Layer<T> {
    pub(crate) fn forward(&self, input: &Tensor<T>) -> LayerOutput<T> {
        let m = input.rows();
        let in_len: usize = self.in_shape.iter().product();
        let out_len: usize = self.out_shape.iter().product();
        let x = input.data();
        let mut y = vec![T::zero(); m * out_len];
        let mut argmax = None;
        match self.spec {
            LayerSpec::Dense { inputs, outputs } => {
                let (w, b) = (self.params[0].data(), self.params[1].data());
                for row in y.chunks_exact_mut(outputs) {
                    row.copy_from_slice(b);
                }
                gemm(m, inputs, outputs, T::one(), x, Op::N, w, Op::T, T::one(), &mut y);
            }
            LayerSpec::Conv2d {
                out_channels,
                kernel,
                stride,
                ..
            } => {
                let (w, b) = (self.params[0].data(), self.params[1].data());
                let ckk = w.len() / out_channels;
                let p = out_len / out_channels;
                let mut cols = vec![T::zero(); ckk * p];
                for s in 0..m {
                    im2col(
                        &x[s * in_len..(s + 1) * in_len],
                        &self.in_shape,
                        &self.out_shape,
                        kernel,
                        stride,
                        &mut cols,
                    );
                    let ys = &mut y[s * out_len..(s + 1) * out_len];
                    for (oc, chunk) in ys.chunks_exact_mut(p).enumerate() {
                        chunk.fill(b[oc]);
                    }
                    gemm(out_channels, ckk, p, T::one(), w, Op::N, &cols, Op::N, T::one(), ys);
                }
            }
            LayerSpec::MaxPool2d { size, stride } => {
                let (c, h, w) = (self.in_shape[0], self.in_shape[1], self.in_shape[2]);
                let (oh, ow) = (self.out_shape[1], self.out_shape[2]);
                let mut idx = vec![0u32; m * out_len];
                for s in 0..m {
                    let xs = &x[s * in_len..(s + 1) * in_len];
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut best = ch * h * w + (oy * stride) * w + ox * stride;
                                for ky in 0..size {
                                    for kx in 0..size {
                                        let off = ch * h * w + (oy * stride + ky) * w + ox * stride + kx;
                                        if xs[off] > xs[best] {
                                            best = off;
                                        }
                                    }
                                }
                                let o = s * out_len + (ch * oh + oy) * ow + ox;
                                y[o] = xs[best];
                                idx[o] = best as u32;
                            }
                        }
                    }
                }
                argmax = Some(idx);
            }
            LayerSpec::Relu => {
                for (o, &v) in y.iter_mut().zip(x) {
                    *o = if v > T::zero() { v } else { T::zero() };
                }
            }
            LayerSpec::Maxout { pieces } => {
                let spatial: usize = self.in_shape[1..].iter().product();
                let units = self.out_shape[0];
                let mut idx = vec![0u32; m * out_len];
                for s in 0..m {
                    let xs = &x[s * in_len..(s + 1) * in_len];
                    for u in 0..units {
                        for q in 0..spatial {
                            let mut best = (u * pieces) * spatial + q;
                            for piece in 1..pieces {
                                let off = (u * pieces + piece) * spatial + q;
                                if xs[off] > xs[best] {
                                    best = off;
                                }
                            }
                            let o = s * out_len + u * spatial + q;
                            y[o] = xs[best];
                            idx[o] = best as u32;
                        }
                    }
                }
                argmax = Some(idx);
            }
            LayerSpec::Flatten => y.copy_from_slice(x),
        }
        LayerOutput {
            output: Tensor::new(batched(m, &self.out_shape), y).expect("layer output shape"),
            argmax,
        }
    }

    /// Returns the input gradient (if requested) and the parameter gradients.
    pub(crate) fn backward(
        &self,
        input: &Tensor<T>,
        output: &Tensor<T>,
        argmax: Option<&[u32]>,
        grad_out: &Tensor<T>,
        need_input_grad: bool,
    ) -> (Option<Tensor<T>>, Vec<Tensor<T>>) {
        let m = input.rows();
        let in_len: usize = self.in_shape.iter().product();
        let out_len: usize = self.out_shape.iter().product();
        let x = input.data();
        let g = grad_out.data();
        let mut gx = if need_input_grad {
            Some(vec![T::zero(); m * in_len])
        } else {
            None
        };
        let mut pgrads = Vec::new();
        match self.spec {
            LayerSpec::Dense { inputs, outputs } => {
                let w = self.params[0].data();
                let mut gw = vec![T::zero(); outputs * inputs];
                gemm(outputs, m, inputs, T::one(), g, Op::T, x, Op::N, T::zero(), &mut gw);
                let mut gb = vec![T::zero(); outputs];
                for row in g.chunks_exact(outputs) {
                    for (acc, &v) in gb.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                if let Some(gx) = gx.as_mut() {
                    gemm(m, outputs, inputs, T::one(), g, Op::N, w, Op::N, T::zero(), gx);
                }
                pgrads.push(Tensor::new(vec![outputs, inputs], gw).unwrap());
                pgrads.push(Tensor::new(vec![outputs], gb).unwrap());
            }
            LayerSpec::Conv2d {
                out_channels,
                kernel,
                stride,
                ..
            } => {
                let w = self.params[0].data();
                let ckk = w.len() / out_channels;
                let p = out_len / out_channels;
                let mut gw = vec![T::zero(); w.len()];
                let mut gb = vec![T::zero(); out_channels];
                let mut cols = vec![T::zero(); ckk * p];
                let mut gcols = vec![T::zero(); ckk * p];
                for s in 0..m {
                    let gs = &g[s * out_len..(s + 1) * out_len];
                    for (oc, chunk) in gs.chunks_exact(p).enumerate() {
                        gb[oc] += chunk.iter().copied().sum::<T>();
                    }
                    im2col(
                        &x[s * in_len..(s + 1) * in_len],
                        &self.in_shape,
                        &self.out_shape,
                        kernel,
                        stride,
                        &mut cols,
                    );
                    gemm(out_channels, p, ckk, T::one(), gs, Op::N, &cols, Op::T, T::one(), &mut gw);
                    if let Some(gx) = gx.as_mut() {
                        gemm(ckk, out_channels, p, T::one(), w, Op::T, gs, Op::N, T::zero(), &mut gcols);
                        col2im_add(
                            &gcols,
                            &self.in_shape,
                            &self.out_shape,
                            kernel,
                            stride,
                            &mut gx[s * in_len..(s + 1) * in_len],
                        );
                    }
                }
                pgrads.push(Tensor::new(vec![out_channels, ckk], gw).unwrap());
                pgrads.push(Tensor::new(vec![out_channels], gb).unwrap());
            }
            LayerSpec::MaxPool2d { .. } | LayerSpec::Maxout { .. } => {
                if let Some(gx) = gx.as_mut() {
                    let idx = argmax.expect("max-style layer trace carries argmax");
                    for s in 0..m {
                        let base = s * out_len;
                        let gxs = &mut gx[s * in_len..(s + 1) * in_len];
                        for o in 0..out_len {
                            gxs[idx[base + o] as usize] += g[base + o];
                        }
                    }
                }
            }
            LayerSpec::Relu => {
                if let Some(gx) = gx.as_mut() {
                    for ((d, &gv), &yv) in gx.iter_mut().zip(g).zip(output.data()) {
                        if yv > T::zero() {
                            *d = gv;
                        }
                    }
                }
            }
            LayerSpec::Flatten => {
                if let Some(gx) = gx.as_mut() {
                    gx.copy_from_slice(g);
                }
            }
        }
        let gx = gx.map(|d| Tensor::new(batched(m, &self.in_shape), d).unwrap());
        (gx, pgrads)
    }
}

/// Unfolds one `[C, H, W]` sample into a `[C·k·k, OH·OW]` column matrix.
fn im2col<T: Scalar>(
    x: &[T],
    in_shape: &[usize],
    out_shape: &[usize],
    k: usize,
    stride: usize,
    cols: &mut [T],
) {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let p = oh * ow;
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ch * k + ky) * k + kx) * p;
                for oy in 0..oh {
                    let src = (oy * stride + ky) * w + kx;
                    let dst = &mut cols[row + oy * ow..row + (oy + 1) * ow];
                    if stride == 1 {
                        dst.copy_from_slice(&plane[src..src + ow]);
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            *d = plane[src + ox * stride];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`], accumulating into `gx`.
fn col2im_add<T: Scalar>(
    cols: &[T],
    in_shape: &[usize],
    out_shape: &[usize],
    k: usize,
    stride: usize,
    gx: &mut [T],
) {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let p = oh * ow;
    for ch in 0..c {
        let plane = &mut gx[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ch * k + ky) * k + kx) * p;
                for oy in 0..oh {
                    let src = (oy * stride + ky) * w + kx;
                    for ox in 0..ow {
                        plane[src + ox * stride] += cols[row + oy * ow + ox];
                    }
                }
            }
        }
    }
}
