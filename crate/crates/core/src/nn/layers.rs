//! Forward and backward passes for the individual layer kinds.

use crate::error::{Error, Result};
use crate::tensor::{col2im_raw, im2col_raw, matmul_into, ConvGeometry, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Conv,
    Dense,
}

/// Trainable weights of one conv or dense layer.
///
/// Conv weights are `[F, C, kh, kw]`, dense weights `[out, in]`; the bias has
/// one entry per output channel or unit.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    kind: ParamKind,
    weights: Tensor,
    bias: Tensor,
}

impl LayerParams {
    pub fn conv(weights: Tensor, bias: Tensor) -> Result<Self> {
        if weights.rank() != 4 {
            return Err(Error::Shape(format!(
                "conv weights must be [F, C, kh, kw], got {:?}",
                weights.shape()
            )));
        }
        Self::checked(ParamKind::Conv, weights, bias)
    }

    pub fn dense(weights: Tensor, bias: Tensor) -> Result<Self> {
        if weights.rank() != 2 {
            return Err(Error::Shape(format!(
                "dense weights must be [out, in], got {:?}",
                weights.shape()
            )));
        }
        Self::checked(ParamKind::Dense, weights, bias)
    }

    fn checked(kind: ParamKind, weights: Tensor, bias: Tensor) -> Result<Self> {
        if bias.rank() != 1 || bias.len() != weights.shape()[0] {
            return Err(Error::Shape(format!(
                "bias shape {:?} does not match weights {:?}",
                bias.shape(),
                weights.shape()
            )));
        }
        Ok(Self {
            kind,
            weights,
            bias,
        })
    }

    pub fn kind(&self) -> ParamKind {
        self.kind
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [f32] {
        self.weights.data_mut()
    }

    pub fn bias_mut(&mut self) -> &mut [f32] {
        self.bias.data_mut()
    }

    /// Output channels (conv) or units (dense).
    pub fn outputs(&self) -> usize {
        self.weights.shape()[0]
    }

    /// Weight count per output: `C·kh·kw` (conv) or `in` (dense).
    pub fn fan_in(&self) -> usize {
        self.weights.len() / self.outputs()
    }

    pub fn len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Plain SGD: `w <- w - lr * g` for every weight and bias entry.
    pub fn sgd_step(&mut self, grad_w: &[f32], grad_b: &[f32], learning_rate: f32) -> Result<()> {
        if grad_w.len() != self.weights.len() || grad_b.len() != self.bias.len() {
            return Err(Error::Shape(format!(
                "gradient sizes ({}, {}) do not match parameters ({}, {})",
                grad_w.len(),
                grad_b.len(),
                self.weights.len(),
                self.bias.len()
            )));
        }
        for (w, g) in self.weights.data_mut().iter_mut().zip(grad_w) {
            *w -= learning_rate * g;
        }
        for (b, g) in self.bias.data_mut().iter_mut().zip(grad_b) {
            *b -= learning_rate * g;
        }
        Ok(())
    }
}

/// What the conv backward pass needs from the forward pass.
#[derive(Debug, Clone)]
pub struct ConvCache {
    geom: ConvGeometry,
    cols: Vec<f32>,
}

impl ConvCache {
    pub fn geometry(&self) -> &ConvGeometry {
        &self.geom
    }
}

fn conv_geometry(x: &Tensor, p: &LayerParams, stride: usize, pad: usize) -> Result<ConvGeometry> {
    if p.kind != ParamKind::Conv {
        return Err(Error::Shape("conv2d called with dense parameters".into()));
    }
    let (c, h, w) = x.dims3("conv2d")?;
    let ws = p.weights.shape();
    if ws[1] != c {
        return Err(Error::Shape(format!(
            "conv2d input has {c} channels but weights are {ws:?}"
        )));
    }
    ConvGeometry::new((c, h, w), ws[2], ws[3], stride, pad)
}

/// Convolution as `weights [F × C·kh·kw] · im2col(x) + bias`.
pub fn conv2d(x: &Tensor, p: &LayerParams, stride: usize, pad: usize) -> Result<Tensor> {
    conv2d_forward(x, p, stride, pad).map(|(out, _)| out)
}

pub fn conv2d_forward(
    x: &Tensor,
    p: &LayerParams,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, ConvCache)> {
    let geom = conv_geometry(x, p, stride, pad)?;
    let cols = im2col_raw(x.data(), &geom);
    let filters = p.outputs();
    let positions = geom.positions();
    let mut out = vec![0.0f32; filters * positions];
    for (f, row) in out.chunks_exact_mut(positions).enumerate() {
        row.fill(p.bias.data()[f]);
    }
    matmul_into(p.weights.data(), &cols, &mut out, filters, geom.patch_len(), positions);
    let out = Tensor::new(vec![filters, geom.out_h, geom.out_w], out)?;
    Ok((out, ConvCache { geom, cols }))
}

/// Gradients of one parameterized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Returns `(grad_x, grad_w, grad_b)` for `upstream = dL/d(conv output)`.
pub fn conv2d_backward(
    cache: &ConvCache,
    p: &LayerParams,
    upstream: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (grads, grad_x) = conv2d_backward_inner(cache, p, upstream, true)?;
    let geom = cache.geom;
    let grad_x = Tensor::new(
        vec![geom.channels, geom.height, geom.width],
        grad_x.expect("requested"),
    )?;
    Ok((
        grad_x,
        Tensor::new(p.weights.shape().to_vec(), grads.weights)?,
        Tensor::new(vec![p.outputs()], grads.bias)?,
    ))
}

pub(crate) fn conv2d_backward_inner(
    cache: &ConvCache,
    p: &LayerParams,
    upstream: &Tensor,
    need_grad_x: bool,
) -> Result<(ParamGrads, Option<Vec<f32>>)> {
    let geom = &cache.geom;
    let filters = p.outputs();
    let positions = geom.positions();
    let patch = geom.patch_len();
    if upstream.shape() != [filters, geom.out_h, geom.out_w] {
        return Err(Error::Shape(format!(
            "conv2d upstream gradient {:?} does not match output [{filters}, {}, {}]",
            upstream.shape(),
            geom.out_h,
            geom.out_w
        )));
    }
    let up = upstream.data();

    let mut grad_w = vec![0.0f32; filters * patch];
    let mut grad_b = vec![0.0f32; filters];
    for f in 0..filters {
        let urow = &up[f * positions..(f + 1) * positions];
        grad_b[f] = urow.iter().sum();
        for r in 0..patch {
            let crow = &cache.cols[r * positions..(r + 1) * positions];
            grad_w[f * patch + r] = urow.iter().zip(crow).map(|(a, b)| a * b).sum();
        }
    }

    let grad_x = if need_grad_x {
        let w = p.weights.data();
        let mut grad_cols = vec![0.0f32; patch * positions];
        for f in 0..filters {
            let urow = &up[f * positions..(f + 1) * positions];
            for r in 0..patch {
                let wv = w[f * patch + r];
                if wv == 0.0 {
                    continue;
                }
                let grow = &mut grad_cols[r * positions..(r + 1) * positions];
                for (g, &u) in grow.iter_mut().zip(urow) {
                    *g += wv * u;
                }
            }
        }
        Some(col2im_raw(&grad_cols, geom))
    } else {
        None
    };

    Ok((
        ParamGrads {
            weights: grad_w,
            bias: grad_b,
        },
        grad_x,
    ))
}

/// 2×2 max pooling, stride 2. Returns the pooled tensor and, for each output,
/// the flat input index of its window's first (row-major) maximum.
pub fn maxpool2_forward(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w) = x.dims3("maxpool2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "maxpool2 needs even height and width, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let data = x.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let base = (ch * h + 2 * oy) * w + 2 * ox;
                let mut best = base;
                for idx in [base + 1, base + w, base + w + 1] {
                    // Strict comparison keeps the first maximum on ties.
                    if data[idx] > data[best] {
                        best = idx;
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![c, oh, ow], out)?, argmax))
}

pub fn maxpool2(x: &Tensor) -> Result<Tensor> {
    maxpool2_forward(x).map(|(out, _)| out)
}

pub fn maxpool2_backward(
    input_shape: &[usize],
    argmax: &[usize],
    upstream: &Tensor,
) -> Result<Tensor> {
    if upstream.len() != argmax.len() {
        return Err(Error::Shape(format!(
            "maxpool2 upstream gradient has {} values, expected {}",
            upstream.len(),
            argmax.len()
        )));
    }
    let mut grad = Tensor::zeros(input_shape)?;
    let g = grad.data_mut();
    for (&idx, &u) in argmax.iter().zip(upstream.data()) {
        g[idx] += u;
    }
    Ok(grad)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Passes `upstream` where the forward input was strictly positive.
pub fn relu_backward(x: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    if x.shape() != upstream.shape() {
        return Err(Error::Shape(format!(
            "relu upstream gradient {:?} does not match input {:?}",
            upstream.shape(),
            x.shape()
        )));
    }
    let data = x
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&v, &u)| if v > 0.0 { u } else { 0.0 })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// `W·x + b` for a flat input of length `in`.
pub fn dense(x: &Tensor, p: &LayerParams) -> Result<Tensor> {
    if p.kind != ParamKind::Dense {
        return Err(Error::Shape("dense called with conv parameters".into()));
    }
    let (out_n, in_n) = (p.outputs(), p.fan_in());
    if x.len() != in_n {
        return Err(Error::Shape(format!(
            "dense expects {in_n} inputs, got shape {:?}",
            x.shape()
        )));
    }
    let w = p.weights.data();
    let xs = x.data();
    let out = (0..out_n)
        .map(|o| {
            let row = &w[o * in_n..(o + 1) * in_n];
            p.bias.data()[o] + row.iter().zip(xs).map(|(a, b)| a * b).sum::<f32>()
        })
        .collect();
    Tensor::from_vec(out)
}

/// Returns `(grad_x, grad_w, grad_b)`; `grad_x` keeps the shape of `x`.
pub fn dense_backward(
    x: &Tensor,
    p: &LayerParams,
    upstream: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (out_n, in_n) = (p.outputs(), p.fan_in());
    if upstream.len() != out_n || x.len() != in_n {
        return Err(Error::Shape(format!(
            "dense backward: input {:?}, upstream {:?}, weights {:?}",
            x.shape(),
            upstream.shape(),
            p.weights.shape()
        )));
    }
    let w = p.weights.data();
    let up = upstream.data();
    let xs = x.data();
    let mut grad_x = vec![0.0f32; in_n];
    let mut grad_w = vec![0.0f32; out_n * in_n];
    for o in 0..out_n {
        let u = up[o];
        let wrow = &w[o * in_n..(o + 1) * in_n];
        let grow = &mut grad_w[o * in_n..(o + 1) * in_n];
        for i in 0..in_n {
            grow[i] = u * xs[i];
            grad_x[i] += u * wrow[i];
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), grad_x)?,
        Tensor::new(vec![out_n, in_n], grad_w)?,
        Tensor::from_vec(up.to_vec())?,
    ))
}
