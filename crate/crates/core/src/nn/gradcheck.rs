//! Finite-difference verification of the analytic backward pass.
//!
//! Analytic gradients come from the regular `f32` training path. The
//! numerical side re-evaluates the loss with an independent `f64`
//! direct-loop forward pass (no im2col), so finite-difference noise stays far
//! below the tolerance even for small gradients. A parameter whose `±eps`
//! perturbation flips a ReLU mask or a pooling argmax sits on a kink of the
//! loss; central differences are not a valid oracle there and the parameter
//! is counted as skipped instead of checked.

use crate::error::{Error, Result};
use crate::par;
use crate::rng::{tag, SplitMix64};
use crate::tensor::Tensor;

use super::model::{default_architecture, LayerSpec, Model};

/// Denominator floor for relative errors.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameters compared against finite differences.
    pub checked: usize,
    /// Parameters skipped because the perturbation crossed a kink.
    pub skipped_kinks: usize,
    /// `(parameter layer, flat index)` of the worst parameter, weights first then bias.
    pub worst: Option<(usize, usize)>,
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

pub fn grad_check(model: &Model, input: &Tensor, true_class: usize, eps: f64) -> Result<GradCheckReport> {
    grad_check_scaled(model, input, true_class, eps, 1.0)
}

/// Like [`grad_check`], but multiplies every analytic gradient by
/// `analytic_scale` first. Scale 2 is the corruption probe.
pub fn grad_check_scaled(
    model: &Model,
    input: &Tensor,
    true_class: usize,
    eps: f64,
    analytic_scale: f32,
) -> Result<GradCheckReport> {
    if !(eps > 0.0) {
        return Err(Error::Usage(format!("eps must be positive, got {eps}")));
    }
    if true_class >= model.num_classes() {
        return Err(Error::Usage(format!(
            "class {true_class} out of range for {} classes",
            model.num_classes()
        )));
    }
    let (_, mut grads) = model.loss_and_grad(input, true_class)?;
    grads.scale(analytic_scale);

    let reference = Reference::new(model);
    let x: Vec<f64> = input.data().iter().map(|&v| v as f64).collect();
    let inputs = reference.layer_inputs(&x, model.input_shape().to_vec());

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
        worst: None,
    };
    let param_layer_idx: Vec<usize> = reference
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| l.has_params())
        .map(|(i, _)| i)
        .collect();

    for (pi, &li) in param_layer_idx.iter().enumerate() {
        let (act, shape) = &inputs[li];
        let mut base_pattern = Vec::new();
        reference.forward_from(li, None, act, shape, true_class, &mut base_pattern);

        let layer = &reference.layers[li];
        let total = layer.weights.len() + layer.bias.len();
        let analytic: Vec<f32> = grads.layers[pi]
            .weights
            .iter()
            .chain(&grads.layers[pi].bias)
            .copied()
            .collect();

        const CHUNK: usize = 64;
        let chunks = total.div_ceil(CHUNK);
        let results = par::map_range(chunks, |chunk| {
            let mut local = layer.clone();
            let mut pattern = Vec::new();
            let mut out = Vec::new();
            for j in chunk * CHUNK..((chunk + 1) * CHUNK).min(total) {
                let original = local.get(j);
                local.set(j, original + eps);
                pattern.clear();
                let hi = reference.forward_from(li, Some(&local), act, shape, true_class, &mut pattern);
                let kink_hi = pattern != base_pattern;
                local.set(j, original - eps);
                pattern.clear();
                let lo = reference.forward_from(li, Some(&local), act, shape, true_class, &mut pattern);
                let kink_lo = pattern != base_pattern;
                local.set(j, original);
                if kink_hi || kink_lo {
                    out.push((j, None));
                } else {
                    let numeric = (hi - lo) / (2.0 * eps);
                    out.push((j, Some(relative_error(analytic[j] as f64, numeric))));
                }
            }
            out
        });
        for (j, err) in results.into_iter().flatten() {
            match err {
                None => report.skipped_kinks += 1,
                Some(e) => {
                    report.checked += 1;
                    if report.worst.is_none() || e > report.max_relative_error {
                        report.max_relative_error = e;
                        report.worst = Some((pi, j));
                    }
                }
            }
        }
    }
    Ok(report)
}

/// Default-architecture model, input and class for a gradient check, all
/// derived from `seed`. Inputs are uniform in the normalized pixel range
/// `[-0.5, 0.5]`.
pub fn default_probe(seed: u64, side: usize, classes: usize) -> Result<(Model, Tensor, usize)> {
    let model = Model::initialize([1, side, side], &default_architecture(side, side, classes), seed)?;
    let mut rng = SplitMix64::stream(seed, &[tag::GRADCHECK]);
    let input = Tensor::new(
        vec![1, side, side],
        (0..side * side).map(|_| rng.uniform(-0.5, 0.5) as f32).collect(),
    )?;
    let class = rng.below(classes);
    Ok((model, input, class))
}

#[derive(Debug, Clone)]
struct RefLayer {
    spec: LayerSpec,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl RefLayer {
    /// Parameter `j` in weights-then-bias order.
    fn get(&self, j: usize) -> f64 {
        match j.checked_sub(self.weights.len()) {
            None => self.weights[j],
            Some(b) => self.bias[b],
        }
    }

    fn set(&mut self, j: usize, value: f64) {
        match j.checked_sub(self.weights.len()) {
            None => self.weights[j] = value,
            Some(b) => self.bias[b] = value,
        }
    }

    fn has_params(&self) -> bool {
        matches!(self.spec, LayerSpec::Conv { .. } | LayerSpec::Dense { .. })
    }
}

/// `f64` copy of a model evaluated with direct loops.
struct Reference {
    layers: Vec<RefLayer>,
}

impl Reference {
    fn new(model: &Model) -> Self {
        let layers = model
            .layers()
            .iter()
            .map(|l| {
                let (weights, bias) = match l.params() {
                    Some(p) => (
                        p.weights().data().iter().map(|&v| v as f64).collect(),
                        p.bias().data().iter().map(|&v| v as f64).collect(),
                    ),
                    None => (Vec::new(), Vec::new()),
                };
                RefLayer {
                    spec: l.spec(),
                    weights,
                    bias,
                }
            })
            .collect();
        Self { layers }
    }

    /// Input activation (and its shape) of every layer at the unperturbed point.
    fn layer_inputs(&self, x: &[f64], shape: Vec<usize>) -> Vec<(Vec<f64>, Vec<usize>)> {
        let mut out = Vec::with_capacity(self.layers.len());
        let mut act = x.to_vec();
        let mut shape = shape;
        let mut scratch = Vec::new();
        for layer in &self.layers {
            out.push((act.clone(), shape.clone()));
            (act, shape) = apply(layer, &act, &shape, &mut scratch);
        }
        out
    }

    /// Loss from layer `start` onward, optionally substituting that layer.
    /// Appends the ReLU masks and pooling argmaxes seen to `pattern`.
    fn forward_from(
        &self,
        start: usize,
        replacement: Option<&RefLayer>,
        input: &[f64],
        shape: &[usize],
        class: usize,
        pattern: &mut Vec<u32>,
    ) -> f64 {
        let mut act = input.to_vec();
        let mut shape = shape.to_vec();
        for (i, layer) in self.layers.iter().enumerate().skip(start) {
            let layer = match replacement {
                Some(r) if i == start => r,
                _ => layer,
            };
            (act, shape) = apply(layer, &act, &shape, pattern);
        }
        let max = act.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = act.iter().map(|z| (z - max).exp()).sum();
        -(act[class] - max - sum.ln())
    }
}

fn apply(layer: &RefLayer, x: &[f64], shape: &[usize], pattern: &mut Vec<u32>) -> (Vec<f64>, Vec<usize>) {
    match layer.spec {
        LayerSpec::Conv {
            filters,
            in_channels,
            kernel_h,
            kernel_w,
            stride,
            pad,
        } => {
            let (h, w) = (shape[1], shape[2]);
            let (ph, pw) = (h + 2 * pad, w + 2 * pad);
            let mut padded = vec![0.0; in_channels * ph * pw];
            for c in 0..in_channels {
                for y in 0..h {
                    let src = &x[(c * h + y) * w..(c * h + y + 1) * w];
                    let dst = (c * ph + y + pad) * pw + pad;
                    padded[dst..dst + w].copy_from_slice(src);
                }
            }
            let oh = (ph - kernel_h) / stride + 1;
            let ow = (pw - kernel_w) / stride + 1;
            let mut out = vec![0.0; filters * oh * ow];
            for f in 0..filters {
                let plane = &mut out[f * oh * ow..(f + 1) * oh * ow];
                plane.fill(layer.bias[f]);
                for c in 0..in_channels {
                    for ky in 0..kernel_h {
                        for kx in 0..kernel_w {
                            let wv = layer.weights[((f * in_channels + c) * kernel_h + ky) * kernel_w + kx];
                            for oy in 0..oh {
                                let row = (c * ph + oy * stride + ky) * pw + kx;
                                let orow = &mut plane[oy * ow..(oy + 1) * ow];
                                for (ox, o) in orow.iter_mut().enumerate() {
                                    *o += wv * padded[row + ox * stride];
                                }
                            }
                        }
                    }
                }
            }
            (out, vec![filters, oh, ow])
        }
        LayerSpec::Relu => {
            let mut bits = 0u32;
            let mut out = Vec::with_capacity(x.len());
            for (i, &v) in x.iter().enumerate() {
                if v > 0.0 {
                    bits |= 1 << (i % 32);
                }
                if i % 32 == 31 {
                    pattern.push(bits);
                    bits = 0;
                }
                out.push(v.max(0.0));
            }
            pattern.push(bits);
            (out, shape.to_vec())
        }
        LayerSpec::MaxPool2 => {
            let (c, h, w) = (shape[0], shape[1], shape[2]);
            let (oh, ow) = (h / 2, w / 2);
            let mut out = Vec::with_capacity(c * oh * ow);
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let base = (ch * h + 2 * oy) * w + 2 * ox;
                        let cand = [base, base + 1, base + w, base + w + 1];
                        let mut best = 0;
                        for k in 1..4 {
                            if x[cand[k]] > x[cand[best]] {
                                best = k;
                            }
                        }
                        pattern.push(best as u32);
                        out.push(x[cand[best]]);
                    }
                }
            }
            (out, vec![c, oh, ow])
        }
        LayerSpec::Flatten => (x.to_vec(), vec![x.len()]),
        LayerSpec::Dense { outputs, inputs } => {
            let out = (0..outputs)
                .map(|o| {
                    layer.bias[o]
                        + layer.weights[o * inputs..(o + 1) * inputs]
                            .iter()
                            .zip(x)
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                })
                .collect();
            (out, vec![outputs])
        }
    }
}
