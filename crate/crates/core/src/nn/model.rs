use crate::error::{Error, Result};
use crate::rng::{tag, SplitMix64};
use crate::tensor::Tensor;

use super::layers::{
    conv2d_backward_inner, conv2d_forward, dense, dense_backward, maxpool2_backward,
    maxpool2_forward, relu, relu_backward, ConvCache, LayerParams, ParamGrads,
};
use super::loss::{softmax, softmax_xent};

/// Architecture descriptor for one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv {
        filters: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        pad: usize,
    },
    Relu,
    MaxPool2,
    Flatten,
    Dense {
        outputs: usize,
        inputs: usize,
    },
}

impl LayerSpec {
    /// Output shape for a given input shape, or a shape error.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match (*self, input) {
            (
                LayerSpec::Conv {
                    filters,
                    in_channels,
                    kernel_h,
                    kernel_w,
                    stride,
                    pad,
                },
                &[c, h, w],
            ) if c == in_channels => {
                let g = crate::tensor::ConvGeometry::new((c, h, w), kernel_h, kernel_w, stride, pad)?;
                Ok(vec![filters, g.out_h, g.out_w])
            }
            (LayerSpec::Relu, s) => Ok(s.to_vec()),
            (LayerSpec::MaxPool2, &[c, h, w]) if h % 2 == 0 && w % 2 == 0 => {
                Ok(vec![c, h / 2, w / 2])
            }
            (LayerSpec::Flatten, s) => Ok(vec![s.iter().product()]),
            (LayerSpec::Dense { outputs, inputs }, &[n]) if n == inputs => Ok(vec![outputs]),
            (spec, s) => Err(Error::Shape(format!(
                "layer {spec:?} cannot take input shape {s:?}"
            ))),
        }
    }
}

/// The fixed classifier: two conv(3×3, pad 1) → ReLU → maxpool2 stages with
/// 8 and 16 filters, then flatten and one dense layer over `classes`.
///
/// `height` and `width` must be multiples of 4.
pub fn default_architecture(height: usize, width: usize, classes: usize) -> Vec<LayerSpec> {
    let conv = |filters, in_channels| LayerSpec::Conv {
        filters,
        in_channels,
        kernel_h: 3,
        kernel_w: 3,
        stride: 1,
        pad: 1,
    };
    vec![
        conv(8, 1),
        LayerSpec::Relu,
        LayerSpec::MaxPool2,
        conv(16, 8),
        LayerSpec::Relu,
        LayerSpec::MaxPool2,
        LayerSpec::Flatten,
        LayerSpec::Dense {
            outputs: classes,
            inputs: 16 * (height / 4) * (width / 4),
        },
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv {
        params: LayerParams,
        stride: usize,
        pad: usize,
    },
    Relu,
    MaxPool2,
    Flatten,
    Dense {
        params: LayerParams,
    },
}

impl Layer {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv { params, stride, pad } => {
                let s = params.weights().shape();
                LayerSpec::Conv {
                    filters: s[0],
                    in_channels: s[1],
                    kernel_h: s[2],
                    kernel_w: s[3],
                    stride: *stride,
                    pad: *pad,
                }
            }
            Layer::Relu => LayerSpec::Relu,
            Layer::MaxPool2 => LayerSpec::MaxPool2,
            Layer::Flatten => LayerSpec::Flatten,
            Layer::Dense { params } => {
                let s = params.weights().shape();
                LayerSpec::Dense {
                    outputs: s[0],
                    inputs: s[1],
                }
            }
        }
    }

    pub fn params(&self) -> Option<&LayerParams> {
        match self {
            Layer::Conv { params, .. } | Layer::Dense { params } => Some(params),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<&mut LayerParams> {
        match self {
            Layer::Conv { params, .. } | Layer::Dense { params } => Some(params),
            _ => None,
        }
    }
}

/// A feed-forward stack over `[C, H, W]` inputs producing class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    input_shape: [usize; 3],
    layers: Vec<Layer>,
}

#[derive(Debug, Clone)]
enum Cache {
    Conv(ConvCache),
    Relu(Tensor),
    Pool {
        input_shape: Vec<usize>,
        argmax: Vec<usize>,
    },
    Flatten(Vec<usize>),
    Dense(Tensor),
}

/// Per-layer intermediates from [`Model::forward_trace`].
#[derive(Debug, Clone)]
pub struct Trace {
    caches: Vec<Cache>,
    logits: Tensor,
}

impl Trace {
    pub fn logits(&self) -> &Tensor {
        &self.logits
    }
}

/// Gradients for every parameterized layer, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<ParamGrads>,
}

impl Gradients {
    pub fn zeros_for(model: &Model) -> Self {
        Self {
            layers: model
                .param_layers()
                .map(|p| ParamGrads {
                    weights: vec![0.0; p.weights().len()],
                    bias: vec![0.0; p.bias().len()],
                })
                .collect(),
        }
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, factor: f32) {
        for g in &mut self.layers {
            g.weights.iter_mut().chain(g.bias.iter_mut()).for_each(|x| *x *= factor);
        }
    }

    /// All gradient entries flattened in parameter order (weights then bias per layer).
    pub fn flatten(&self) -> Vec<f32> {
        self.layers
            .iter()
            .flat_map(|g| g.weights.iter().chain(&g.bias).copied())
            .collect()
    }
}

impl Model {
    /// Builds a model from concrete layers, checking that shapes chain and
    /// that the final output is a logit vector.
    pub fn new(input_shape: [usize; 3], layers: Vec<Layer>) -> Result<Self> {
        let specs: Vec<LayerSpec> = layers.iter().map(Layer::spec).collect();
        check_chain(input_shape, &specs)?;
        Ok(Self {
            input_shape,
            layers,
        })
    }

    /// He-uniform weights (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`) and zero
    /// biases, drawn in layer order from the `(seed, INIT)` stream.
    pub fn initialize(input_shape: [usize; 3], specs: &[LayerSpec], seed: u64) -> Result<Self> {
        check_chain(input_shape, specs)?;
        let mut rng = SplitMix64::stream(seed, &[tag::INIT]);
        let mut he = |shape: &[usize], fan_in: usize| -> Result<Tensor> {
            let limit = (6.0 / fan_in as f64).sqrt();
            let n = shape.iter().product();
            Tensor::new(
                shape.to_vec(),
                (0..n).map(|_| rng.uniform(-limit, limit) as f32).collect(),
            )
        };
        let layers = specs
            .iter()
            .map(|spec| {
                Ok(match *spec {
                    LayerSpec::Conv {
                        filters,
                        in_channels,
                        kernel_h,
                        kernel_w,
                        stride,
                        pad,
                    } => Layer::Conv {
                        params: LayerParams::conv(
                            he(
                                &[filters, in_channels, kernel_h, kernel_w],
                                in_channels * kernel_h * kernel_w,
                            )?,
                            Tensor::zeros(&[filters])?,
                        )?,
                        stride,
                        pad,
                    },
                    LayerSpec::Relu => Layer::Relu,
                    LayerSpec::MaxPool2 => Layer::MaxPool2,
                    LayerSpec::Flatten => Layer::Flatten,
                    LayerSpec::Dense { outputs, inputs } => Layer::Dense {
                        params: LayerParams::dense(
                            he(&[outputs, inputs], inputs)?,
                            Tensor::zeros(&[outputs])?,
                        )?,
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            input_shape,
            layers,
        })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn num_classes(&self) -> usize {
        match self.specs().last() {
            Some(LayerSpec::Dense { outputs, .. }) => *outputs,
            _ => unreachable!("validated at construction"),
        }
    }

    pub fn param_layers(&self) -> impl Iterator<Item = &LayerParams> {
        self.layers.iter().filter_map(Layer::params)
    }

    pub fn param_layers_mut(&mut self) -> impl Iterator<Item = &mut LayerParams> {
        self.layers.iter_mut().filter_map(Layer::params_mut)
    }

    pub fn num_params(&self) -> usize {
        self.param_layers().map(LayerParams::len).sum()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.input_shape {
            return Err(Error::Shape(format!(
                "model expects input {:?}, got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut act = x.clone();
        for layer in &self.layers {
            act = match layer {
                Layer::Conv { params, stride, pad } => conv2d_forward(&act, params, *stride, *pad)?.0,
                Layer::Relu => relu(&act),
                Layer::MaxPool2 => maxpool2_forward(&act)?.0,
                Layer::Flatten => {
                    let n = act.len();
                    act.reshape(vec![n])?
                }
                Layer::Dense { params } => dense(&act, params)?,
            };
        }
        Ok(act)
    }

    pub fn predict_proba(&self, x: &Tensor) -> Result<Vec<f32>> {
        Ok(softmax(self.forward(x)?.data()))
    }

    pub fn forward_trace(&self, x: &Tensor) -> Result<Trace> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut act = x.clone();
        for layer in &self.layers {
            act = match layer {
                Layer::Conv { params, stride, pad } => {
                    let (out, cache) = conv2d_forward(&act, params, *stride, *pad)?;
                    caches.push(Cache::Conv(cache));
                    out
                }
                Layer::Relu => {
                    let out = relu(&act);
                    caches.push(Cache::Relu(act));
                    out
                }
                Layer::MaxPool2 => {
                    let (out, argmax) = maxpool2_forward(&act)?;
                    caches.push(Cache::Pool {
                        input_shape: act.shape().to_vec(),
                        argmax,
                    });
                    out
                }
                Layer::Flatten => {
                    caches.push(Cache::Flatten(act.shape().to_vec()));
                    let n = act.len();
                    act.reshape(vec![n])?
                }
                Layer::Dense { params } => {
                    let out = dense(&act, params)?;
                    caches.push(Cache::Dense(act));
                    out
                }
            };
        }
        Ok(Trace {
            caches,
            logits: act,
        })
    }

    /// Backpropagates `grad_logits` through a trace from this model.
    pub fn backward(&self, trace: &Trace, grad_logits: &Tensor) -> Result<Gradients> {
        let mut grads: Vec<ParamGrads> = Vec::new();
        let mut upstream = grad_logits.clone();
        for (i, (layer, cache)) in self.layers.iter().zip(&trace.caches).enumerate().rev() {
            let need_grad_x = i > 0;
            upstream = match (layer, cache) {
                (Layer::Conv { params, .. }, Cache::Conv(c)) => {
                    let (g, gx) = conv2d_backward_inner(c, params, &upstream, need_grad_x)?;
                    grads.push(g);
                    match gx {
                        Some(gx) => {
                            let geom = c.geometry();
                            Tensor::new(vec![geom.channels, geom.height, geom.width], gx)?
                        }
                        None => break,
                    }
                }
                (Layer::Relu, Cache::Relu(x)) => relu_backward(x, &upstream)?,
                (Layer::MaxPool2, Cache::Pool { input_shape, argmax }) => {
                    maxpool2_backward(input_shape, argmax, &upstream)?
                }
                (Layer::Flatten, Cache::Flatten(shape)) => upstream.reshape(shape.clone())?,
                (Layer::Dense { params }, Cache::Dense(x)) => {
                    let (gx, gw, gb) = dense_backward(x, params, &upstream)?;
                    grads.push(ParamGrads {
                        weights: gw.into_data(),
                        bias: gb.into_data(),
                    });
                    gx
                }
                _ => return Err(Error::Shape("trace does not belong to this model".into())),
            };
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }

    /// Softmax cross-entropy loss of one sample and its parameter gradients.
    pub fn loss_and_grad(&self, x: &Tensor, class: usize) -> Result<(f32, Gradients)> {
        let trace = self.forward_trace(x)?;
        let (loss, grad_logits) = softmax_xent(&trace.logits, class)?;
        Ok((loss, self.backward(&trace, &grad_logits)?))
    }

    pub fn loss(&self, x: &Tensor, class: usize) -> Result<f32> {
        Ok(softmax_xent(&self.forward(x)?, class)?.0)
    }
}

fn check_chain(input_shape: [usize; 3], specs: &[LayerSpec]) -> Result<()> {
    if input_shape.contains(&0) {
        return Err(Error::Shape(format!("input shape {input_shape:?} has a zero dimension")));
    }
    let mut shape = input_shape.to_vec();
    for spec in specs {
        shape = spec.output_shape(&shape)?;
    }
    match specs.last() {
        Some(LayerSpec::Dense { .. }) => Ok(()),
        _ => Err(Error::Shape("model must end with a dense layer".into())),
    }
}

/// Plain SGD over every parameter of `model`: `w <- w - lr * g`.
pub fn sgd_step(model: &mut Model, grads: &Gradients, learning_rate: f32) -> Result<()> {
    if grads.layers.len() != model.param_layers().count() {
        return Err(Error::Shape(format!(
            "{} gradient blocks for {} parameter layers",
            grads.layers.len(),
            model.param_layers().count()
        )));
    }
    for (p, g) in model.param_layers_mut().zip(&grads.layers) {
        p.sgd_step(&g.weights, &g.bias, learning_rate)?;
    }
    Ok(())
}
