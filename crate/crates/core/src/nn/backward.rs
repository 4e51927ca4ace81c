//! Reverse-mode accumulation through the layer stack.

use super::{dims3, relu_is_identity, ForwardTrace, Layer, Model};
use crate::error::Result;
use crate::linalg::Tensor;

#[derive(Clone, Copy, PartialEq, Eq)]
pub(crate) enum ReluRule {
    Plain,
    /// Zero entries that are negative in the incoming backward signal or had
    /// negative forward pre-activation.
    Guided,
}

/// Parameter gradients, parallel to the model's layer list. Entries are
/// `(weights, bias)` flat vectors for Dense/Conv2D layers, `None` otherwise.
pub(crate) struct ParamGrads {
    pub per_layer: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl ParamGrads {
    pub fn zeros_like(model: &Model) -> Self {
        let per_layer = model
            .layers
            .iter()
            .map(|l| match l {
                Layer::Dense { weight, bias } => {
                    Some((vec![0.0; weight.data().len()], vec![0.0; bias.len()]))
                }
                Layer::Conv2D { kernel, bias, .. } => {
                    Some((vec![0.0; kernel.len()], vec![0.0; bias.len()]))
                }
                _ => None,
            })
            .collect();
        ParamGrads { per_layer }
    }

    pub fn add(&mut self, other: &ParamGrads) {
        for (a, b) in self.per_layer.iter_mut().zip(&other.per_layer) {
            if let (Some((aw, ab)), Some((bw, bb))) = (a.as_mut(), b.as_ref()) {
                for (x, y) in aw.iter_mut().zip(bw) {
                    *x += y;
                }
                for (x, y) in ab.iter_mut().zip(bb) {
                    *x += y;
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for entry in self.per_layer.iter_mut().flatten() {
            for v in entry.0.iter_mut() {
                *v *= factor;
            }
            for v in entry.1.iter_mut() {
                *v *= factor;
            }
        }
    }
}

/// Walks the trace backwards from a gradient seeded at the logits (the
/// output of the last non-Softmax layer). Returns the gradient with respect
/// to the input and, when requested, parameter gradients.
pub(crate) fn backward(
    model: &Model,
    trace: &ForwardTrace,
    seed: Tensor,
    rule: ReluRule,
    mut params: Option<&mut ParamGrads>,
) -> Tensor {
    let mut last = model.layers.len();
    if matches!(model.layers.last(), Some(Layer::Softmax)) {
        last -= 1;
    }
    let mut grad = seed;
    for i in (0..last).rev() {
        let layer = &model.layers[i];
        let input = &trace.values[i];
        let param_slot = params.as_mut().map(|p| &mut p.per_layer[i]);
        grad = backward_one(model, layer, input, &grad, rule, param_slot);
    }
    grad
}

fn backward_one(
    model: &Model,
    layer: &Layer,
    input: &Tensor,
    grad_out: &Tensor,
    rule: ReluRule,
    param_slot: Option<&mut Option<(Vec<f64>, Vec<f64>)>>,
) -> Tensor {
    match layer {
        Layer::Dense { weight, .. } => {
            let g = grad_out.data();
            let x = input.data();
            if let Some(Some((dw, db))) = param_slot {
                for (i, &gi) in g.iter().enumerate() {
                    let row = &mut dw[i * weight.cols()..(i + 1) * weight.cols()];
                    for (slot, &xv) in row.iter_mut().zip(x) {
                        *slot += gi * xv;
                    }
                    db[i] += gi;
                }
            }
            let mut gin = vec![0.0f64; weight.cols()];
            for (i, &gi) in g.iter().enumerate() {
                let row = weight.row(i);
                for (slot, &wv) in gin.iter_mut().zip(row) {
                    *slot += gi * wv;
                }
            }
            Tensor::from_vec(gin)
        }
        Layer::Relu => {
            if relu_is_identity(model) {
                return grad_out.clone();
            }
            let data: Vec<f64> = input
                .data()
                .iter()
                .zip(grad_out.data())
                .map(|(&pre, &g)| match rule {
                    ReluRule::Plain => {
                        if pre > 0.0 {
                            g
                        } else {
                            0.0
                        }
                    }
                    ReluRule::Guided => {
                        if pre > 0.0 && g > 0.0 {
                            g
                        } else {
                            0.0
                        }
                    }
                })
                .collect();
            Tensor::new(input.shape().to_vec(), data).expect("shape preserved")
        }
        Layer::Conv2D {
            out_ch,
            in_ch,
            kh,
            kw,
            kernel,
            ..
        } => {
            let [h, w, _] = dims3(input.shape()).expect("validated");
            let (oh, ow) = (h - kh + 1, w - kw + 1);
            let x = input.data();
            let g = grad_out.data();
            let mut gin = vec![0.0f64; h * w * in_ch];
            if let Some(Some((dk, db))) = param_slot {
                for oy in 0..oh {
                    for ox in 0..ow {
                        for oc in 0..*out_ch {
                            let go = g[(oy * ow + ox) * out_ch + oc];
                            if go == 0.0 {
                                continue;
                            }
                            db[oc] += go;
                            for ky in 0..*kh {
                                for kx in 0..*kw {
                                    let base = ((oy + ky) * w + (ox + kx)) * in_ch;
                                    let kbase = ((oc * in_ch) * kh + ky) * kw + kx;
                                    for ic in 0..*in_ch {
                                        dk[kbase + ic * kh * kw] += go * x[base + ic];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            for oy in 0..oh {
                for ox in 0..ow {
                    for oc in 0..*out_ch {
                        let go = g[(oy * ow + ox) * out_ch + oc];
                        if go == 0.0 {
                            continue;
                        }
                        for ky in 0..*kh {
                            for kx in 0..*kw {
                                let base = ((oy + ky) * w + (ox + kx)) * in_ch;
                                let kbase = ((oc * in_ch) * kh + ky) * kw + kx;
                                for ic in 0..*in_ch {
                                    gin[base + ic] += go * kernel[kbase + ic * kh * kw];
                                }
                            }
                        }
                    }
                }
            }
            Tensor::new(vec![h, w, *in_ch], gin).expect("conv input shape")
        }
        Layer::MaxPool2x2 => {
            let [h, w, c] = dims3(input.shape()).expect("validated");
            let (oh, ow) = (h / 2, w / 2);
            let x = input.data();
            let g = grad_out.data();
            let mut gin = vec![0.0f64; h * w * c];
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        // first strict max, matching the forward pass
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0usize;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let idx = ((2 * oy + dy) * w + (2 * ox + dx)) * c + ch;
                                if x[idx] > best {
                                    best = x[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        gin[best_idx] += g[(oy * ow + ox) * c + ch];
                    }
                }
            }
            Tensor::new(vec![h, w, c], gin).expect("pool input shape")
        }
        Layer::Flatten => {
            Tensor::new(input.shape().to_vec(), grad_out.data().to_vec()).expect("flatten shape")
        }
        Layer::Softmax => {
            // grad_in = p (.) (grad_out - <p, grad_out>); only reachable when
            // a caller seeds at probabilities rather than logits.
            let p = super::forward_one(model, &Layer::Softmax, input);
            let dot: f64 = p
                .data()
                .iter()
                .zip(grad_out.data())
                .map(|(a, b)| a * b)
                .sum();
            let data = p
                .data()
                .iter()
                .zip(grad_out.data())
                .map(|(&pi, &gi)| pi * (gi - dot))
                .collect();
            Tensor::from_vec(data)
        }
    }
}

pub(crate) fn input_gradient_impl(
    model: &Model,
    x: &Tensor,
    target: usize,
    rule: ReluRule,
) -> Result<Tensor> {
    model.check_target(target)?;
    let trace = super::forward_trace(model, x)?;
    let out = model.output_len();
    let mut seed = vec![0.0f64; out];
    seed[target] = 1.0;
    Ok(backward(model, &trace, Tensor::from_vec(seed), rule, None))
}
