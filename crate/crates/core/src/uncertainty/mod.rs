//! Propagation of Gaussian perturbations into explanations: forward-difference
//! Jacobian blocks, the first-order analytical covariance sigma^2 * J * J^T,
//! the Monte Carlo covariance of perturbed explanations, and the mean
//! uncertainty metric Tr(Sigma) / (m * |e|^2) that compares the two.
//!
//! Jacobian columns and MC draws are independent work items evaluated in
//! parallel; per-item RNG substreams are index-derived, so any schedule
//! yields identical output.

use serde::{Deserialize, Serialize};

use crate::data::DatasetName;
use crate::error::{Error, Result};
use crate::explain::{self, Explanation, ExplainerSpec, Method};
use crate::linalg::{
    empirical_covariance, sample_gaussian, sym_gram, trace, Matrix, RngStream, Tensor,
};
use crate::nn::Model;
use crate::parallel;

const DEGENERATE_NORM_SQ: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PerturbationTarget {
    Input,
    FinalDenseWeights,
}

impl PerturbationTarget {
    pub fn as_str(&self) -> &'static str {
        match self {
            PerturbationTarget::Input => "input",
            PerturbationTarget::FinalDenseWeights => "final_dense_weights",
        }
    }
}

impl std::str::FromStr for PerturbationTarget {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "input" => Ok(PerturbationTarget::Input),
            "final_dense_weights" | "weights" => Ok(PerturbationTarget::FinalDenseWeights),
            other => Err(Error::invalid(format!("unknown perturbation target {other:?}"))),
        }
    }
}

/// m x d matrix of explanation sensitivities for one (explainer, sample,
/// target) triple, assembled by forward differences with step `delta`.
#[derive(Clone, Debug)]
pub struct JacobianBlock {
    pub matrix: Matrix,
    pub target: PerturbationTarget,
    pub delta: f64,
    pub method: Method,
    pub sample_id: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimatorKind {
    Analytical,
    MonteCarlo,
}

#[derive(Clone, Debug)]
pub struct CovarianceEstimate {
    pub sigma: f64,
    pub matrix: Matrix,
    pub estimator: EstimatorKind,
    pub n_samples: Option<usize>,
    pub rng: Option<RngStream>,
}

/// One (dataset, sample, explainer, target, sigma) result row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MueRecord {
    pub dataset: DatasetName,
    pub sample_id: usize,
    pub explainer: Method,
    pub target: PerturbationTarget,
    pub sigma: f64,
    pub mue_lin: f64,
    pub mue_mc: f64,
    pub n_samples: usize,
    pub m: usize,
    pub ref_norm_sq: f64,
    /// Empty for clean rows; explains exclusion from aggregates otherwise.
    pub flag: String,
}

impl MueRecord {
    pub fn is_clean(&self) -> bool {
        self.flag.is_empty()
    }
}

/// Dataset/sample labels attached to records by orchestration.
#[derive(Clone, Copy, Debug)]
pub struct RecordMeta {
    pub dataset: DatasetName,
    pub sample_id: usize,
}

/// Evaluates the explanation as a function of a perturbation vector applied
/// to the input coordinates or to the final Dense weights. The attribution
/// target is resolved once on the unperturbed input and then held fixed.
pub struct PerturbedExplainer<'a> {
    spec: &'a ExplainerSpec,
    model: &'a Model,
    x: &'a Tensor,
    kind: PerturbationTarget,
    base_weights: Tensor,
    attribution_target: usize,
}

impl<'a> PerturbedExplainer<'a> {
    pub fn new(
        spec: &'a ExplainerSpec,
        model: &'a Model,
        x: &'a Tensor,
        kind: PerturbationTarget,
    ) -> Result<Self> {
        let attribution_target = explain::resolve_target(spec, model, x)?;
        Ok(PerturbedExplainer {
            spec,
            model,
            x,
            kind,
            base_weights: model.final_dense_weights(),
            attribution_target,
        })
    }

    /// Perturbation dimension d: n for inputs, r for final-Dense weights.
    pub fn dimension(&self) -> usize {
        match self.kind {
            PerturbationTarget::Input => self.x.len(),
            PerturbationTarget::FinalDenseWeights => self.base_weights.len(),
        }
    }

    pub fn target_kind(&self) -> PerturbationTarget {
        self.kind
    }

    pub fn attribution_target(&self) -> usize {
        self.attribution_target
    }

    /// Explanation at zero perturbation.
    pub fn reference(&self) -> Result<Explanation> {
        explain::explain_with_target(self.spec, self.model, self.x, self.attribution_target)
    }

    /// Explanation with `offset` added to the perturbed quantity.
    pub fn explain_offset(&self, offset: &[f64]) -> Result<Tensor> {
        if offset.len() != self.dimension() {
            return Err(Error::invalid(format!(
                "offset has {} entries, target dimension is {}",
                offset.len(),
                self.dimension()
            )));
        }
        match self.kind {
            PerturbationTarget::Input => {
                let mut data = self.x.data().to_vec();
                for (v, o) in data.iter_mut().zip(offset) {
                    *v += o;
                }
                let x = Tensor::new(self.x.shape().to_vec(), data)?;
                Ok(explain::explain_with_target(self.spec, self.model, &x, self.attribution_target)?
                    .values)
            }
            PerturbationTarget::FinalDenseWeights => {
                let mut w = self.base_weights.data().to_vec();
                for (v, o) in w.iter_mut().zip(offset) {
                    *v += o;
                }
                let model = self.model.with_final_dense_weights(&Tensor::from_vec(w))?;
                Ok(explain::explain_with_target(self.spec, &model, self.x, self.attribution_target)?
                    .values)
            }
        }
    }

    /// Explanation with a single coordinate of the perturbed quantity bumped
    /// by `delta` (the Jacobian probe).
    pub fn explain_probe(&self, coord: usize, delta: f64) -> Result<Tensor> {
        match self.kind {
            PerturbationTarget::Input => {
                let mut x = self.x.clone();
                x.data_mut()[coord] += delta;
                Ok(explain::explain_with_target(self.spec, self.model, &x, self.attribution_target)?
                    .values)
            }
            PerturbationTarget::FinalDenseWeights => {
                let mut w = self.base_weights.clone();
                w.data_mut()[coord] += delta;
                let model = self.model.with_final_dense_weights(&w)?;
                Ok(explain::explain_with_target(self.spec, &model, self.x, self.attribution_target)?
                    .values)
            }
        }
    }
}

/// Forward-difference Jacobian of an arbitrary d-dimensional perturbation
/// map: column i is (eval(delta * 1_i) - reference) / delta.
pub fn jacobian_from_fn<F>(dim: usize, reference: &[f64], delta: f64, eval: F) -> Result<Matrix>
where
    F: Fn(usize, f64) -> Result<Vec<f64>> + Sync + Send,
{
    if delta <= 0.0 {
        return Err(Error::invalid(format!("delta must be positive, got {delta}")));
    }
    if dim == 0 {
        return Err(Error::invalid("jacobian: dimension must be positive"));
    }
    let m = reference.len();
    let columns = parallel::map_indexed(dim, |i| -> Result<Vec<f64>> {
        let probed = eval(i, delta).map_err(|e| {
            Error::invalid(format!("jacobian probe of coordinate {i} failed: {e}"))
        })?;
        if probed.len() != m {
            return Err(Error::invalid(format!(
                "probe of coordinate {i} returned {} values, expected {m}",
                probed.len()
            )));
        }
        let col: Vec<f64> = probed
            .iter()
            .zip(reference)
            .map(|(p, r)| (p - r) / delta)
            .collect();
        if let Some(row) = col.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                coordinate: i,
                context: format!("jacobian column {i}, row {row}"),
            });
        }
        Ok(col)
    });
    let mut data = vec![0.0f64; m * dim];
    for (i, col) in columns.into_iter().enumerate() {
        let col = col?;
        for (r, v) in col.into_iter().enumerate() {
            data[r * dim + i] = v;
        }
    }
    Matrix::new(m, dim, data)
}

/// Spec-level Jacobian block: reference explanation computed once, then one
/// forward-difference probe per coordinate of the perturbation target.
pub fn jacobian_block(
    spec: &ExplainerSpec,
    model: &Model,
    x: &Tensor,
    target: PerturbationTarget,
    delta: f64,
) -> Result<JacobianBlock> {
    let evaluator = PerturbedExplainer::new(spec, model, x, target)?;
    let reference = evaluator.reference()?;
    jacobian_block_with(&evaluator, &reference, delta)
}

/// As `jacobian_block` with a precomputed evaluator and reference.
pub fn jacobian_block_with(
    evaluator: &PerturbedExplainer,
    reference: &Explanation,
    delta: f64,
) -> Result<JacobianBlock> {
    let matrix = jacobian_from_fn(
        evaluator.dimension(),
        reference.values.data(),
        delta,
        |coord, d| Ok(evaluator.explain_probe(coord, d)?.into_data()),
    )?;
    Ok(JacobianBlock {
        matrix,
        target: evaluator.target_kind(),
        delta,
        method: evaluator.spec.method,
        sample_id: reference.sample_id,
    })
}

/// First-order covariance sigma^2 * J * J^T, constructed symmetrically.
pub fn analytical_covariance(block: &JacobianBlock, sigma: f64) -> Result<CovarianceEstimate> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid(format!("sigma must be non-negative, got {sigma}")));
    }
    let gram = sym_gram(&block.matrix);
    Ok(CovarianceEstimate {
        sigma,
        matrix: gram.scaled(sigma * sigma),
        estimator: EstimatorKind::Analytical,
        n_samples: None,
        rng: None,
    })
}

/// N perturbed explanations, one isotropic Gaussian draw per index-derived
/// substream. Shared by the MC covariance and the histogram export.
pub fn mc_explanations_from_fn<F>(
    dim: usize,
    sigma: f64,
    n: usize,
    rng: &RngStream,
    eval: F,
) -> Result<Vec<Tensor>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync + Send,
{
    if !(sigma >= 0.0) {
        return Err(Error::invalid(format!("sigma must be non-negative, got {sigma}")));
    }
    let results = parallel::map_indexed(n, |k| -> Result<Tensor> {
        let noise = sample_gaussian(dim, sigma, &rng.substream(k as u64))?;
        let values = eval(noise.data()).map_err(|e| Error::DrawFailed {
            draw: k,
            source: Box::new(e),
        })?;
        Ok(Tensor::from_vec(values))
    });
    results.into_iter().collect()
}

/// Empirical covariance of N explanations under isotropic Gaussian
/// perturbation of the chosen target. Deterministic given `rng`.
pub fn mc_covariance(
    spec: &ExplainerSpec,
    model: &Model,
    x: &Tensor,
    target: PerturbationTarget,
    sigma: f64,
    n: usize,
    rng: &RngStream,
) -> Result<CovarianceEstimate> {
    let evaluator = PerturbedExplainer::new(spec, model, x, target)?;
    mc_covariance_with(&evaluator, sigma, n, rng)
}

/// As `mc_covariance` with a precomputed evaluator.
pub fn mc_covariance_with(
    evaluator: &PerturbedExplainer,
    sigma: f64,
    n: usize,
    rng: &RngStream,
) -> Result<CovarianceEstimate> {
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 MC draws, got {n}")));
    }
    let samples = mc_explanations_from_fn(evaluator.dimension(), sigma, n, rng, |offset| {
        Ok(evaluator.explain_offset(offset)?.into_data())
    })?;
    Ok(CovarianceEstimate {
        sigma,
        matrix: empirical_covariance(&samples)?,
        estimator: EstimatorKind::MonteCarlo,
        n_samples: Some(n),
        rng: Some(*rng),
    })
}

/// Mean uncertainty: Tr(Sigma) / (m * |e_ref|^2).
pub fn mue(cov: &CovarianceEstimate, reference: &Explanation) -> Result<f64> {
    let m = reference.len();
    if cov.matrix.rows() != m || cov.matrix.cols() != m {
        return Err(Error::invalid(format!(
            "covariance is {}x{}, reference explanation has {m} features",
            cov.matrix.rows(),
            cov.matrix.cols()
        )));
    }
    let norm_sq = reference.norm_sq();
    if norm_sq < DEGENERATE_NORM_SQ {
        return Err(Error::DegenerateReference { norm_sq });
    }
    Ok(trace(&cov.matrix)? / (m as f64 * norm_sq))
}

/// Analytical MUE over a sigma grid from one Jacobian evaluation:
/// sigma^2 * |J|_F^2 / (m * |e|^2), exactly quadratic in sigma.
pub fn mue_curve_analytical(
    block: &JacobianBlock,
    reference: &Explanation,
    sigmas: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let norm_sq = reference.norm_sq();
    if norm_sq < DEGENERATE_NORM_SQ {
        return Err(Error::DegenerateReference { norm_sq });
    }
    let per_unit_sigma = block.matrix.frobenius_norm_sq() / (reference.len() as f64 * norm_sq);
    sigmas
        .iter()
        .map(|&s| {
            if !(s >= 0.0) {
                return Err(Error::invalid(format!("sigma must be non-negative, got {s}")));
            }
            Ok((s, (s * s) * per_unit_sigma))
        })
        .collect()
}

/// Full input-perturbation analysis for one (explainer, sample) pair: one
/// Jacobian serves the analytical curve, then per-sigma MC covariances.
#[allow(clippy::too_many_arguments)]
pub fn analyze_input_perturbation(
    spec: &ExplainerSpec,
    model: &Model,
    x: &Tensor,
    sigmas: &[f64],
    n_mc: usize,
    delta: f64,
    rng: &RngStream,
    meta: RecordMeta,
) -> Result<Vec<MueRecord>> {
    analyze_perturbation(
        spec,
        model,
        x,
        PerturbationTarget::Input,
        sigmas,
        n_mc,
        delta,
        rng,
        meta,
    )
}

/// Weight-perturbation analogue of `analyze_input_perturbation`, targeting
/// the final Dense weights (bias excluded).
#[allow(clippy::too_many_arguments)]
pub fn analyze_weight_perturbation(
    spec: &ExplainerSpec,
    model: &Model,
    x: &Tensor,
    sigmas: &[f64],
    n_mc: usize,
    delta: f64,
    rng: &RngStream,
    meta: RecordMeta,
) -> Result<Vec<MueRecord>> {
    analyze_perturbation(
        spec,
        model,
        x,
        PerturbationTarget::FinalDenseWeights,
        sigmas,
        n_mc,
        delta,
        rng,
        meta,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn analyze_perturbation(
    spec: &ExplainerSpec,
    model: &Model,
    x: &Tensor,
    target: PerturbationTarget,
    sigmas: &[f64],
    n_mc: usize,
    delta: f64,
    rng: &RngStream,
    meta: RecordMeta,
) -> Result<Vec<MueRecord>> {
    if sigmas.is_empty() {
        return Ok(Vec::new());
    }
    let evaluator = PerturbedExplainer::new(spec, model, x, target)?;
    let reference = evaluator.reference()?;
    let block = jacobian_block_with(&evaluator, &reference, delta)?;
    let lin = mue_curve_analytical(&block, &reference, sigmas)?;

    let mut records = Vec::with_capacity(sigmas.len());
    for (sigma_idx, &(sigma, mue_lin)) in lin.iter().enumerate() {
        let cov = mc_covariance_with(&evaluator, sigma, n_mc, &rng.substream(sigma_idx as u64))?;
        let mue_mc = mue(&cov, &reference)?;
        records.push(MueRecord {
            dataset: meta.dataset,
            sample_id: meta.sample_id,
            explainer: spec.method,
            target,
            sigma,
            mue_lin,
            mue_mc,
            n_samples: n_mc,
            m: reference.len(),
            ref_norm_sq: reference.norm_sq(),
            flag: String::new(),
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests;
