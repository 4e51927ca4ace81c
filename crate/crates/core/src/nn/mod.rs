//! Minimal feed-forward network engine: the MLP regressor and small CNN
//! classifier used as predictors, with forward pass, input gradients,
//! guided-backprop gradients, SGD training and binary serialization.
//!
//! A `Model` is immutable after construction or training; forward and
//! gradient calls are read-only and safe to run concurrently.

mod backward;
mod io;
mod train;

pub use io::{load_model, save_model};
pub use train::{test_accuracy, test_mae, train, Hyperparams, TrainReport};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, RngStream, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    Regression,
    Classification,
}

/// `Linear` replaces every ReLU with the identity, for the ablation runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActivationMode {
    Relu,
    Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    /// Fully connected: `weight` is out x in, `bias` has length out.
    Dense { weight: Matrix, bias: Vec<f64> },
    Relu,
    /// Valid padding, stride 1. Kernel is flat `[out_ch][in_ch][kh][kw]`,
    /// activations are `[h, w, c]`.
    Conv2D {
        out_ch: usize,
        in_ch: usize,
        kh: usize,
        kw: usize,
        kernel: Vec<f64>,
        bias: Vec<f64>,
    },
    /// 2x2 window, stride 2, floor division on odd extents.
    MaxPool2x2,
    Flatten,
    Softmax,
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "Dense",
            Layer::Relu => "Relu",
            Layer::Conv2D { .. } => "Conv2D",
            Layer::MaxPool2x2 => "MaxPool2x2",
            Layer::Flatten => "Flatten",
            Layer::Softmax => "Softmax",
        }
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Dense { weight, bias } => {
                if input.len() != 1 {
                    return Err(Error::invalid(format!(
                        "Dense expects a flat input, got shape {input:?}"
                    )));
                }
                if weight.cols() != input[0] {
                    return Err(Error::invalid(format!(
                        "Dense weight is {}x{} but input has {} features",
                        weight.rows(),
                        weight.cols(),
                        input[0]
                    )));
                }
                if weight.rows() != bias.len() {
                    return Err(Error::invalid("Dense bias length must match output size"));
                }
                Ok(vec![weight.rows()])
            }
            Layer::Relu | Layer::Softmax => Ok(input.to_vec()),
            Layer::Conv2D {
                out_ch,
                in_ch,
                kh,
                kw,
                kernel,
                bias,
            } => {
                let [h, w, c] = dims3(input)?;
                if c != *in_ch {
                    return Err(Error::invalid(format!(
                        "Conv2D expects {in_ch} input channels, got {c}"
                    )));
                }
                if kernel.len() != out_ch * in_ch * kh * kw {
                    return Err(Error::invalid("Conv2D kernel length mismatch"));
                }
                if bias.len() != *out_ch {
                    return Err(Error::invalid("Conv2D bias length must equal out_ch"));
                }
                if h < *kh || w < *kw {
                    return Err(Error::invalid("Conv2D kernel larger than input"));
                }
                Ok(vec![h - kh + 1, w - kw + 1, *out_ch])
            }
            Layer::MaxPool2x2 => {
                let [h, w, c] = dims3(input)?;
                if h < 2 || w < 2 {
                    return Err(Error::invalid("MaxPool2x2 needs at least 2x2 input"));
                }
                Ok(vec![h / 2, w / 2, c])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

fn dims3(shape: &[usize]) -> Result<[usize; 3]> {
    if shape.len() != 3 {
        return Err(Error::invalid(format!(
            "expected an [h, w, c] activation, got shape {shape:?}"
        )));
    }
    Ok([shape[0], shape[1], shape[2]])
}

/// Layered feed-forward network. Layer shapes are validated to compose at
/// construction; exactly one final Dense layer is addressable for weight
/// perturbation.
#[derive(Clone, Debug)]
pub struct Model {
    layers: Vec<Layer>,
    task: Task,
    input_shape: Vec<usize>,
    activation_mode: ActivationMode,
    final_dense: usize,
}

impl Model {
    pub fn new(
        layers: Vec<Layer>,
        task: Task,
        input_shape: Vec<usize>,
        activation_mode: ActivationMode,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("model must have at least one layer"));
        }
        let mut shape = input_shape.clone();
        for (i, layer) in layers.iter().enumerate() {
            shape = layer.output_shape(&shape).map_err(|e| {
                Error::invalid(format!("layer {i} ({}): {e}", layer.kind_name()))
            })?;
        }
        match task {
            Task::Regression => {
                if shape != [1] {
                    return Err(Error::invalid(format!(
                        "regression output must be a scalar, got shape {shape:?}"
                    )));
                }
            }
            Task::Classification => {
                if shape.len() != 1 {
                    return Err(Error::invalid("classification output must be flat"));
                }
                if !matches!(layers.last(), Some(Layer::Softmax)) {
                    return Err(Error::invalid("classification model must end in Softmax"));
                }
            }
        }
        let final_dense = layers
            .iter()
            .rposition(|l| matches!(l, Layer::Dense { .. }))
            .ok_or_else(|| Error::invalid("model has no Dense layer"))?;
        Ok(Model {
            layers,
            task,
            input_shape,
            activation_mode,
            final_dense,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn activation_mode(&self) -> ActivationMode {
        self.activation_mode
    }

    pub fn output_len(&self) -> usize {
        match self.task {
            Task::Regression => 1,
            Task::Classification => match &self.layers[self.final_dense] {
                Layer::Dense { weight, .. } => weight.rows(),
                _ => unreachable!(),
            },
        }
    }

    pub fn final_dense_index(&self) -> usize {
        self.final_dense
    }

    /// Weight count r of the final Dense layer (bias excluded).
    pub fn final_dense_weight_count(&self) -> usize {
        match &self.layers[self.final_dense] {
            Layer::Dense { weight, .. } => weight.rows() * weight.cols(),
            _ => unreachable!(),
        }
    }

    /// Row-major copy of the final Dense weights (bias excluded).
    pub fn final_dense_weights(&self) -> Tensor {
        match &self.layers[self.final_dense] {
            Layer::Dense { weight, .. } => Tensor::from_vec(weight.data().to_vec()),
            _ => unreachable!(),
        }
    }

    /// New model with the final Dense weights replaced. Biases and every
    /// other layer are untouched.
    pub fn with_final_dense_weights(&self, w: &Tensor) -> Result<Model> {
        let r = self.final_dense_weight_count();
        if w.len() != r {
            return Err(Error::invalid(format!(
                "final Dense layer has {r} weights, got {}",
                w.len()
            )));
        }
        let mut model = self.clone();
        if let Layer::Dense { weight, .. } = &mut model.layers[model.final_dense] {
            let (rows, cols) = (weight.rows(), weight.cols());
            *weight = Matrix::new(rows, cols, w.data().to_vec())?;
        }
        Ok(model)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(Error::invalid(format!(
                "input shape {:?} does not match model input {:?}",
                x.shape(),
                self.input_shape
            )));
        }
        Ok(())
    }

    fn check_target(&self, target: usize) -> Result<()> {
        let out = self.output_len();
        if target >= out {
            return Err(Error::invalid(format!(
                "target {target} out of range for {out} outputs"
            )));
        }
        Ok(())
    }
}

fn relu_is_identity(model: &Model) -> bool {
    model.activation_mode == ActivationMode::Linear
}

fn forward_one(model: &Model, layer: &Layer, input: &Tensor) -> Tensor {
    match layer {
        Layer::Dense { weight, bias } => {
            let data: Vec<f64> = (0..weight.rows())
                .map(|i| {
                    let row = weight.row(i);
                    bias[i]
                        + row
                            .iter()
                            .zip(input.data())
                            .map(|(w, v)| w * v)
                            .sum::<f64>()
                })
                .collect();
            Tensor::from_vec(data)
        }
        Layer::Relu => {
            if relu_is_identity(model) {
                input.clone()
            } else {
                let data = input.data().iter().map(|&v| v.max(0.0)).collect();
                Tensor::new(input.shape().to_vec(), data).expect("shape preserved")
            }
        }
        Layer::Conv2D {
            out_ch,
            in_ch,
            kh,
            kw,
            kernel,
            bias,
        } => {
            let [h, w, _] = dims3(input.shape()).expect("validated at construction");
            let (oh, ow) = (h - kh + 1, w - kw + 1);
            let x = input.data();
            let mut out = vec![0.0f64; oh * ow * out_ch];
            for oy in 0..oh {
                for ox in 0..ow {
                    for oc in 0..*out_ch {
                        let mut acc = bias[oc];
                        for ky in 0..*kh {
                            for kx in 0..*kw {
                                let base = ((oy + ky) * w + (ox + kx)) * in_ch;
                                let kbase = ((oc * in_ch) * kh + ky) * kw + kx;
                                for ic in 0..*in_ch {
                                    acc += x[base + ic] * kernel[kbase + ic * kh * kw];
                                }
                            }
                        }
                        out[(oy * ow + ox) * out_ch + oc] = acc;
                    }
                }
            }
            Tensor::new(vec![oh, ow, *out_ch], out).expect("conv output shape")
        }
        Layer::MaxPool2x2 => {
            let [h, w, c] = dims3(input.shape()).expect("validated at construction");
            let (oh, ow) = (h / 2, w / 2);
            let x = input.data();
            let mut out = vec![0.0f64; oh * ow * c];
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        let mut best = f64::NEG_INFINITY;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let v = x[((2 * oy + dy) * w + (2 * ox + dx)) * c + ch];
                                if v > best {
                                    best = v;
                                }
                            }
                        }
                        out[(oy * ow + ox) * c + ch] = best;
                    }
                }
            }
            Tensor::new(vec![oh, ow, c], out).expect("pool output shape")
        }
        Layer::Flatten => Tensor::from_vec(input.data().to_vec()),
        Layer::Softmax => {
            let max = input
                .data()
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = input.data().iter().map(|&v| (v - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            Tensor::from_vec(exps.into_iter().map(|v| v / sum).collect())
        }
    }
}

/// Per-layer activations: `values[0]` is the input, `values[i+1]` the output
/// of layer i.
pub(crate) struct ForwardTrace {
    pub values: Vec<Tensor>,
}

pub(crate) fn forward_trace(model: &Model, x: &Tensor) -> Result<ForwardTrace> {
    model.check_input(x)?;
    let mut values = Vec::with_capacity(model.layers.len() + 1);
    values.push(x.clone());
    for layer in &model.layers {
        let next = forward_one(model, layer, values.last().expect("non-empty"));
        values.push(next);
    }
    Ok(ForwardTrace { values })
}

/// Full forward pass: a scalar for regression, a probability vector for
/// classification.
pub fn forward(model: &Model, x: &Tensor) -> Result<Tensor> {
    Ok(forward_trace(model, x)?.values.pop().expect("non-empty"))
}

/// Pre-softmax logits for classification; the plain output for regression.
pub fn logits(model: &Model, x: &Tensor) -> Result<Tensor> {
    let mut trace = forward_trace(model, x)?;
    if matches!(model.layers.last(), Some(Layer::Softmax)) {
        trace.values.pop();
    }
    Ok(trace.values.pop().expect("non-empty"))
}

/// Score the explainers attribute: the regression output, or the
/// pre-softmax logit of `target` for classification.
pub fn class_score(model: &Model, x: &Tensor, target: usize) -> Result<f64> {
    model.check_target(target)?;
    Ok(logits(model, x)?.data()[target])
}

/// Class with the largest unperturbed logit.
pub fn predicted_class(model: &Model, x: &Tensor) -> Result<usize> {
    let l = logits(model, x)?;
    Ok(l.data()
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
        .map(|(i, _)| i)
        .expect("non-empty output"))
}

/// Gradient of the selected output (pre-softmax logit for classification)
/// with respect to the input, via reverse-mode accumulation.
pub fn input_gradient(model: &Model, x: &Tensor, target: usize) -> Result<Tensor> {
    backward::input_gradient_impl(model, x, target, backward::ReluRule::Plain)
}

/// As `input_gradient`, but each ReLU backward step zeroes entries that are
/// negative in the incoming signal or had negative forward pre-activation.
pub fn guided_gradient(model: &Model, x: &Tensor, target: usize) -> Result<Tensor> {
    backward::input_gradient_impl(model, x, target, backward::ReluRule::Guided)
}

/// Reference MLP regressor: 9 -> Dense(64) -> ReLU -> Dense(64) -> ReLU ->
/// Dense(1). Final Dense layer has r = 64 weights.
pub fn reference_mlp(mode: ActivationMode, rng: &RngStream) -> Model {
    let mut r = rng.rng();
    let layers = vec![
        he_dense(64, 9, &mut r),
        Layer::Relu,
        he_dense(64, 64, &mut r),
        Layer::Relu,
        he_dense(1, 64, &mut r),
    ];
    Model::new(layers, Task::Regression, vec![9], mode).expect("reference MLP is well-formed")
}

/// Reference CNN classifier: 28x28x3 -> Conv(8,3x3) -> ReLU -> MaxPool ->
/// Conv(16,3x3) -> ReLU -> MaxPool -> Flatten -> Dense(64) -> ReLU ->
/// Dense(10) -> Softmax. Final Dense layer has r = 640 weights.
pub fn reference_cnn(mode: ActivationMode, rng: &RngStream) -> Model {
    let mut r = rng.rng();
    let layers = vec![
        he_conv(8, 3, 3, 3, &mut r),
        Layer::Relu,
        Layer::MaxPool2x2,
        he_conv(16, 8, 3, 3, &mut r),
        Layer::Relu,
        Layer::MaxPool2x2,
        Layer::Flatten,
        he_dense(64, 400, &mut r),
        Layer::Relu,
        he_dense(10, 64, &mut r),
        Layer::Softmax,
    ];
    Model::new(layers, Task::Classification, vec![28, 28, 3], mode)
        .expect("reference CNN is well-formed")
}

fn he_dense(out: usize, inp: usize, r: &mut rand_chacha::ChaCha8Rng) -> Layer {
    let limit = (6.0 / inp as f64).sqrt();
    let data: Vec<f64> = (0..out * inp).map(|_| r.gen_range(-limit..limit)).collect();
    Layer::Dense {
        weight: Matrix::new(out, inp, data).expect("dense init"),
        bias: vec![0.0; out],
    }
}

fn he_conv(out_ch: usize, in_ch: usize, kh: usize, kw: usize, r: &mut rand_chacha::ChaCha8Rng) -> Layer {
    let fan_in = (in_ch * kh * kw) as f64;
    let limit = (6.0 / fan_in).sqrt();
    let kernel: Vec<f64> = (0..out_ch * in_ch * kh * kw)
        .map(|_| r.gen_range(-limit..limit))
        .collect();
    Layer::Conv2D {
        out_ch,
        in_ch,
        kh,
        kw,
        kernel,
        bias: vec![0.0; out_ch],
    }
}
