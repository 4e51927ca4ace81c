//! The five feature-attribution methods behind a single pure-function
//! interface `explain(spec, model, x)`. Image explanations are reduced over
//! channels so that m = h*w (784 for 28x28 inputs); tabular explanations
//! keep m = n. No method here is stochastic: explanations are deterministic
//! functions of `(spec, model, x)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Tensor;
use crate::nn::{self, Model, Task};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Saliency,
    GradientInput,
    GuidedBackprop,
    IntegratedGradients,
    Occlusion,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Saliency => "saliency",
            Method::GradientInput => "gradient_input",
            Method::GuidedBackprop => "guided_backprop",
            Method::IntegratedGradients => "integrated_gradients",
            Method::Occlusion => "occlusion",
        }
    }

    pub const ALL: [Method; 5] = [
        Method::Saliency,
        Method::GradientInput,
        Method::GuidedBackprop,
        Method::IntegratedGradients,
        Method::Occlusion,
    ];
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "saliency" => Ok(Method::Saliency),
            "gradient_input" => Ok(Method::GradientInput),
            "guided_backprop" => Ok(Method::GuidedBackprop),
            "integrated_gradients" => Ok(Method::IntegratedGradients),
            "occlusion" => Ok(Method::Occlusion),
            other => Err(Error::invalid(format!("unknown explainer {other:?}"))),
        }
    }
}

/// Which model output the attribution targets. The class is resolved once on
/// the unperturbed input and then held fixed through perturbation sweeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetRule {
    RegressionOutput,
    PredictedClass,
    FixedClass(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcclusionParams {
    pub patch_h: usize,
    pub patch_w: usize,
    pub stride: usize,
    pub fill_value: f64,
}

impl Default for OcclusionParams {
    fn default() -> Self {
        // disjoint 4x4 cover of a 28x28 image; tabular occlusion masks one
        // feature at a time and only uses fill_value
        OcclusionParams {
            patch_h: 4,
            patch_w: 4,
            stride: 4,
            fill_value: 0.0,
        }
    }
}

/// Explainer configuration; the method parameters are held fixed while
/// inputs and weights are perturbed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainerSpec {
    pub method: Method,
    pub target_rule: TargetRule,
    pub ig_steps: usize,
    /// `None` means the zero baseline.
    pub ig_baseline: Option<Tensor>,
    pub occlusion: OcclusionParams,
}

impl ExplainerSpec {
    pub fn new(method: Method, target_rule: TargetRule) -> Self {
        ExplainerSpec {
            method,
            target_rule,
            ig_steps: 64,
            ig_baseline: None,
            occlusion: OcclusionParams::default(),
        }
    }

    /// Spec with the default target rule for the model's task.
    pub fn for_model(method: Method, model: &Model) -> Self {
        let rule = match model.task() {
            Task::Regression => TargetRule::RegressionOutput,
            Task::Classification => TargetRule::PredictedClass,
        };
        ExplainerSpec::new(method, rule)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ig_steps < 2 {
            return Err(Error::invalid(format!(
                "ig_steps must be at least 2, got {}",
                self.ig_steps
            )));
        }
        if self.occlusion.stride == 0 {
            return Err(Error::invalid("occlusion stride must be at least 1"));
        }
        if self.occlusion.patch_h == 0 || self.occlusion.patch_w == 0 {
            return Err(Error::invalid("occlusion patch must be non-empty"));
        }
        Ok(())
    }
}

/// Attribution vector e in R^m for one (x, f) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub values: Tensor,
    pub method: Method,
    /// Output index actually attributed (resolved class or 0).
    pub target: usize,
    pub sample_id: Option<usize>,
}

impl Explanation {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.norm_sq()
    }
}

fn is_image(model: &Model) -> bool {
    model.input_shape().len() == 3
}

/// Expected explanation length for a model: h*w for images, n for tabular.
pub fn explanation_len(model: &Model) -> usize {
    let shape = model.input_shape();
    if shape.len() == 3 {
        shape[0] * shape[1]
    } else {
        shape.iter().product()
    }
}

/// Resolves the attribution target for `x` under the spec's rule.
pub fn resolve_target(spec: &ExplainerSpec, model: &Model, x: &Tensor) -> Result<usize> {
    match (spec.target_rule, model.task()) {
        (TargetRule::RegressionOutput, Task::Regression) => Ok(0),
        (TargetRule::PredictedClass, Task::Classification) => nn::predicted_class(model, x),
        (TargetRule::FixedClass(k), Task::Classification) => {
            if k >= model.output_len() {
                return Err(Error::invalid(format!(
                    "fixed class {k} out of range for {} outputs",
                    model.output_len()
                )));
            }
            Ok(k)
        }
        (rule, task) => Err(Error::invalid(format!(
            "target rule {rule:?} does not apply to a {task:?} model"
        ))),
    }
}

/// Dispatches to the requested method. Pure function of its arguments.
pub fn explain(spec: &ExplainerSpec, model: &Model, x: &Tensor) -> Result<Explanation> {
    spec.validate()?;
    let target = resolve_target(spec, model, x)?;
    explain_with_target(spec, model, x, target)
}

/// As `explain`, but with the target pinned by the caller (perturbation
/// sweeps resolve it once on the unperturbed input).
pub fn explain_with_target(
    spec: &ExplainerSpec,
    model: &Model,
    x: &Tensor,
    target: usize,
) -> Result<Explanation> {
    spec.validate()?;
    let values = match spec.method {
        Method::Saliency => saliency_values(model, x, target)?,
        Method::GradientInput => gradient_input_values(model, x, target)?,
        Method::GuidedBackprop => guided_backprop_values(model, x, target)?,
        Method::IntegratedGradients => integrated_gradients_values(spec, model, x, target)?,
        Method::Occlusion => occlusion_values(&spec.occlusion, model, x, target)?,
    };
    if let Some(bad) = values.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            coordinate: bad,
            context: format!("{} explanation", spec.method.as_str()),
        });
    }
    let expected = explanation_len(model);
    debug_assert_eq!(values.len(), expected, "explanation length drifted");
    if values.len() != expected {
        return Err(Error::invalid(format!(
            "explanation has {} values, expected {expected}",
            values.len()
        )));
    }
    Ok(Explanation {
        values,
        method: spec.method,
        target,
        sample_id: None,
    })
}

/// Per-pixel signed mean over channels: [h, w, c] -> [h*w].
pub fn reduce_channels(raw: &Tensor) -> Result<Tensor> {
    let shape = raw.shape();
    if shape.len() != 3 {
        return Err(Error::invalid(format!(
            "reduce_channels expects [h, w, c], got {shape:?}"
        )));
    }
    let (hw, c) = (shape[0] * shape[1], shape[2]);
    let data = raw.data();
    let out = (0..hw)
        .map(|p| data[p * c..(p + 1) * c].iter().sum::<f64>() / c as f64)
        .collect();
    Ok(Tensor::from_vec(out))
}

/// Per-pixel mean over channels of absolute values, the saliency reduction.
fn reduce_channels_abs(raw: &Tensor) -> Result<Tensor> {
    let shape = raw.shape();
    if shape.len() != 3 {
        return Err(Error::invalid(format!(
            "channel reduction expects [h, w, c], got {shape:?}"
        )));
    }
    let (hw, c) = (shape[0] * shape[1], shape[2]);
    let data = raw.data();
    let out = (0..hw)
        .map(|p| data[p * c..(p + 1) * c].iter().map(|v| v.abs()).sum::<f64>() / c as f64)
        .collect();
    Ok(Tensor::from_vec(out))
}

fn saliency_values(model: &Model, x: &Tensor, target: usize) -> Result<Tensor> {
    let g = nn::input_gradient(model, x, target)?;
    if is_image(model) {
        reduce_channels_abs(&g)
    } else {
        Ok(Tensor::from_vec(g.into_data()))
    }
}

fn gradient_input_values(model: &Model, x: &Tensor, target: usize) -> Result<Tensor> {
    let g = nn::input_gradient(model, x, target)?;
    let prod: Vec<f64> = g.data().iter().zip(x.data()).map(|(gv, xv)| gv * xv).collect();
    let raw = Tensor::new(x.shape().to_vec(), prod)?;
    if is_image(model) {
        reduce_channels(&raw)
    } else {
        Ok(Tensor::from_vec(raw.into_data()))
    }
}

fn guided_backprop_values(model: &Model, x: &Tensor, target: usize) -> Result<Tensor> {
    let g = nn::guided_gradient(model, x, target)?;
    if is_image(model) {
        reduce_channels_abs(&g)
    } else {
        Ok(Tensor::from_vec(g.into_data()))
    }
}

fn integrated_gradients_values(
    spec: &ExplainerSpec,
    model: &Model,
    x: &Tensor,
    target: usize,
) -> Result<Tensor> {
    let raw = integrated_gradients_unreduced(spec, model, x, target)?;
    if is_image(model) {
        reduce_channels(&raw)
    } else {
        Ok(Tensor::from_vec(raw.into_data()))
    }
}

/// Midpoint-rule path integral before channel reduction. The attributions
/// sum to f(x) - f(baseline) as steps grow (completeness).
pub fn integrated_gradients_unreduced(
    spec: &ExplainerSpec,
    model: &Model,
    x: &Tensor,
    target: usize,
) -> Result<Tensor> {
    let steps = spec.ig_steps;
    let baseline = match &spec.ig_baseline {
        Some(b) => {
            if b.shape() != x.shape() {
                return Err(Error::invalid(format!(
                    "baseline shape {:?} does not match input {:?}",
                    b.shape(),
                    x.shape()
                )));
            }
            b.clone()
        }
        None => Tensor::zeros(x.shape().to_vec()),
    };
    let diff: Vec<f64> = x
        .data()
        .iter()
        .zip(baseline.data())
        .map(|(xv, bv)| xv - bv)
        .collect();

    let mut grad_sum = vec![0.0f64; x.len()];
    for k in 0..steps {
        let alpha = (k as f64 + 0.5) / steps as f64;
        let point: Vec<f64> = baseline
            .data()
            .iter()
            .zip(&diff)
            .map(|(bv, dv)| bv + alpha * dv)
            .collect();
        let pt = Tensor::new(x.shape().to_vec(), point)?;
        let g = nn::input_gradient(model, &pt, target)?;
        for (acc, gv) in grad_sum.iter_mut().zip(g.data()) {
            *acc += gv;
        }
    }
    let attr: Vec<f64> = grad_sum
        .iter()
        .zip(&diff)
        .map(|(g, d)| d * (g / steps as f64))
        .collect();
    Tensor::new(x.shape().to_vec(), attr)
}

fn occlusion_values(
    params: &OcclusionParams,
    model: &Model,
    x: &Tensor,
    target: usize,
) -> Result<Tensor> {
    let score0 = nn::class_score(model, x, target)?;
    if is_image(model) {
        let shape = model.input_shape();
        let (h, w, c) = (shape[0], shape[1], shape[2]);
        if params.patch_h > h || params.patch_w > w {
            return Err(Error::invalid(format!(
                "occlusion patch {}x{} larger than {h}x{w} image",
                params.patch_h, params.patch_w
            )));
        }
        let mut drops = vec![0.0f64; h * w];
        let mut cover = vec![0u32; h * w];
        let mut y0 = 0;
        while y0 + params.patch_h <= h {
            let mut x0 = 0;
            while x0 + params.patch_w <= w {
                let mut occluded = x.clone();
                for py in y0..y0 + params.patch_h {
                    for px in x0..x0 + params.patch_w {
                        for ch in 0..c {
                            occluded.data_mut()[(py * w + px) * c + ch] = params.fill_value;
                        }
                    }
                }
                let drop = score0 - nn::class_score(model, &occluded, target)?;
                for py in y0..y0 + params.patch_h {
                    for px in x0..x0 + params.patch_w {
                        drops[py * w + px] += drop;
                        cover[py * w + px] += 1;
                    }
                }
                x0 += params.stride;
            }
            y0 += params.stride;
        }
        let values = drops
            .iter()
            .zip(&cover)
            .map(|(&d, &n)| if n == 0 { 0.0 } else { d / n as f64 })
            .collect();
        Ok(Tensor::from_vec(values))
    } else {
        let n = x.len();
        let values = (0..n)
            .map(|i| {
                let mut occluded = x.clone();
                occluded.data_mut()[i] = params.fill_value;
                Ok(score0 - nn::class_score(model, &occluded, target)?)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(Tensor::from_vec(values))
    }
}
