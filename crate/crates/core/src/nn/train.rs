//! Plain SGD with momentum. Per-sample gradients inside a batch are computed
//! as independent work items and folded in index order, so results are
//! identical at any thread count.

use super::backward::{backward, ParamGrads, ReluRule};
use super::{forward_trace, Layer, Model, Task};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, RngStream, Tensor};
use crate::parallel;

#[derive(Clone, Copy, Debug)]
pub struct Hyperparams {
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

pub struct TrainReport {
    pub model: Model,
    /// Mean per-sample loss of each epoch, in order.
    pub epoch_losses: Vec<f64>,
}

/// Trains on `features` (one row per sample) against `targets`: class
/// indices for classification, already-standardized values for regression.
/// Deterministic given `hp.seed`.
pub fn train(
    model: &Model,
    features: &Matrix,
    targets: &[f64],
    hp: &Hyperparams,
) -> Result<TrainReport> {
    let n = features.rows();
    if n == 0 || targets.is_empty() {
        return Err(Error::invalid("train: empty dataset"));
    }
    if targets.len() != n {
        return Err(Error::invalid(format!(
            "train: {n} feature rows but {} targets",
            targets.len()
        )));
    }
    if features.cols() != model.input_len() {
        return Err(Error::invalid(format!(
            "train: {} features per row, model expects {}",
            features.cols(),
            model.input_len()
        )));
    }

    let mut work = model.clone();
    let mut velocity = ParamGrads::zeros_like(model);
    let shuffle_root = RngStream::new(hp.seed);
    let mut epoch_losses = Vec::with_capacity(hp.epochs);

    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..hp.epochs {
        shuffle(&mut order, &shuffle_root.substream(epoch as u64));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(hp.batch_size.max(1)) {
            let snapshot = &work;
            let results = parallel::map_indexed(batch.len(), |k| {
                sample_gradient(snapshot, features, targets, batch[k])
            });
            let mut grads = ParamGrads::zeros_like(model);
            for res in results {
                let (g, loss) = res?;
                grads.add(&g);
                epoch_loss += loss;
            }
            grads.scale(1.0 / batch.len() as f64);
            apply_sgd(&mut work, &mut velocity, &grads, hp.lr, hp.momentum);
        }
        epoch_losses.push(epoch_loss / n as f64);
    }

    Ok(TrainReport {
        model: work,
        epoch_losses,
    })
}

fn sample_gradient(
    model: &Model,
    features: &Matrix,
    targets: &[f64],
    idx: usize,
) -> Result<(ParamGrads, f64)> {
    let x = Tensor::new(model.input_shape().to_vec(), features.row(idx).to_vec())?;
    let trace = forward_trace(model, &x)?;
    let output = trace.values.last().expect("non-empty trace");
    let (seed, loss) = match model.task() {
        Task::Regression => {
            let pred = output.data()[0];
            let y = targets[idx];
            let diff = pred - y;
            (Tensor::from_vec(vec![2.0 * diff]), diff * diff)
        }
        Task::Classification => {
            let y = targets[idx] as usize;
            if y >= output.len() {
                return Err(Error::invalid(format!(
                    "train: label {y} out of range for {} classes",
                    output.len()
                )));
            }
            // cross-entropy; the seed is the gradient at the logits
            let mut seed = output.data().to_vec();
            seed[y] -= 1.0;
            let loss = -output.data()[y].max(1e-300).ln();
            (Tensor::from_vec(seed), loss)
        }
    };
    let mut grads = ParamGrads::zeros_like(model);
    backward(model, &trace, seed, ReluRule::Plain, Some(&mut grads));
    Ok((grads, loss))
}

fn apply_sgd(
    model: &mut Model,
    velocity: &mut ParamGrads,
    grads: &ParamGrads,
    lr: f64,
    momentum: f64,
) {
    for (i, layer) in model.layers.iter_mut().enumerate() {
        let (Some((vw, vb)), Some((gw, gb))) =
            (velocity.per_layer[i].as_mut(), grads.per_layer[i].as_ref())
        else {
            continue;
        };
        for (v, g) in vw.iter_mut().zip(gw) {
            *v = momentum * *v - lr * g;
        }
        for (v, g) in vb.iter_mut().zip(gb) {
            *v = momentum * *v - lr * g;
        }
        match layer {
            Layer::Dense { weight, bias } => {
                let (rows, cols) = (weight.rows(), weight.cols());
                let mut data = weight.data().to_vec();
                for (w, v) in data.iter_mut().zip(vw.iter()) {
                    *w += v;
                }
                *weight = Matrix::new(rows, cols, data).expect("dims unchanged");
                for (b, v) in bias.iter_mut().zip(vb.iter()) {
                    *b += v;
                }
            }
            Layer::Conv2D { kernel, bias, .. } => {
                for (w, v) in kernel.iter_mut().zip(vw.iter()) {
                    *w += v;
                }
                for (b, v) in bias.iter_mut().zip(vb.iter()) {
                    *b += v;
                }
            }
            _ => unreachable!("velocity entries only exist for parameterized layers"),
        }
    }
}

fn shuffle(order: &mut [usize], stream: &RngStream) {
    use rand::Rng;
    let mut rng = stream.rng();
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

/// Fraction of rows whose predicted class matches the label.
pub fn test_accuracy(model: &Model, features: &Matrix, labels: &[f64]) -> Result<f64> {
    let mut hits = 0usize;
    let per_row = parallel::map_indexed(features.rows(), |i| {
        let x = Tensor::new(model.input_shape().to_vec(), features.row(i).to_vec())?;
        super::predicted_class(model, &x)
    });
    for (i, res) in per_row.into_iter().enumerate() {
        if res? == labels[i] as usize {
            hits += 1;
        }
    }
    Ok(hits as f64 / features.rows() as f64)
}

/// Mean absolute error of regression predictions against `targets`, with
/// `unscale` mapping model outputs back to target units.
pub fn test_mae(
    model: &Model,
    features: &Matrix,
    targets: &[f64],
    unscale: impl Fn(f64) -> f64,
) -> Result<f64> {
    let preds = parallel::map_indexed(features.rows(), |i| {
        let x = Tensor::new(model.input_shape().to_vec(), features.row(i).to_vec())?;
        Ok::<f64, Error>(super::forward(model, &x)?.data()[0])
    });
    let mut total = 0.0;
    for (i, res) in preds.into_iter().enumerate() {
        total += (unscale(res?) - targets[i]).abs();
    }
    Ok(total / features.rows() as f64)
}
