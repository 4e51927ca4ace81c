use super::*;
use crate::explain::TargetRule;
use crate::linalg::symmetric_eigenvalues;
use crate::nn::{ActivationMode, Layer};

fn linear_regressor(w: Vec<f64>) -> Model {
    let n = w.len();
    Model::new(
        vec![Layer::Dense {
            weight: Matrix::new(1, n, w).unwrap(),
            bias: vec![0.0],
        }],
        crate::nn::Task::Regression,
        vec![n],
        ActivationMode::Relu,
    )
    .unwrap()
}

fn meta() -> RecordMeta {
    RecordMeta {
        dataset: DatasetName::AutoMpg,
        sample_id: 0,
    }
}

#[test]
fn jacobian_of_identity_stub_is_identity() {
    let x0: Vec<f64> = vec![0.3, -0.7, 1.1, 0.0];
    for delta in [1e-2, 1e-4, 1e-6] {
        let j = jacobian_from_fn(4, &x0, delta, |i, d| {
            let mut v = x0.clone();
            v[i] += d;
            Ok(v)
        })
        .unwrap();
        for r in 0..4 {
            for c in 0..4 {
                if r == c {
                    // fl(x + delta) - x rounds, so the diagonal is 1 up to
                    // one ulp of the probe arithmetic
                    assert!((j.get(r, c) - 1.0).abs() <= 1e-9, "delta {delta}: {}", j.get(r, c));
                } else {
                    assert_eq!(j.get(r, c), 0.0, "delta {delta}");
                }
            }
        }
    }
}

#[test]
fn jacobian_rejects_bad_delta_and_nonfinite_probes() {
    let x0 = vec![1.0, 2.0];
    assert!(jacobian_from_fn(2, &x0, 0.0, |_, _| Ok(x0.clone())).is_err());
    let err = jacobian_from_fn(2, &x0, 1e-4, |i, _| {
        if i == 1 {
            Ok(vec![f64::NAN, 0.0])
        } else {
            Ok(x0.clone())
        }
    })
    .unwrap_err();
    assert!(err.to_string().contains('1'), "{err}");
}

#[test]
fn jacobian_of_gradient_input_on_linear_model_is_diagonal() {
    let w = vec![2.0, -1.0, 0.5, 3.0, -0.25, 1.0, 0.75, -2.0, 0.1];
    let model = linear_regressor(w.clone());
    let spec = ExplainerSpec::new(Method::GradientInput, TargetRule::RegressionOutput);
    let x = Tensor::from_vec(vec![0.5; 9]);
    let block = jacobian_block(&spec, &model, &x, PerturbationTarget::Input, 1e-4).unwrap();
    for i in 0..9 {
        for j in 0..9 {
            let expected = if i == j { w[i] } else { 0.0 };
            assert!(
                (block.matrix.get(i, j) - expected).abs() <= 1e-9,
                "({i},{j}): {} vs {expected}",
                block.matrix.get(i, j)
            );
        }
    }
}

#[test]
fn jacobian_of_saliency_on_relu_mlp_is_exactly_zero() {
    let model = crate::nn::reference_mlp(ActivationMode::Relu, &RngStream::new(7));
    let spec = ExplainerSpec::new(Method::Saliency, TargetRule::RegressionOutput);
    // pick a sample whose activation pattern is stable under the probes:
    // every pre-activation stays clear of zero by a wide margin
    let delta = 1e-4;
    let x = (0..100u64)
        .map(|k| sample_gaussian(9, 1.0, &RngStream::new(8).substream(k)).unwrap())
        .find(|x| activation_margin(&model, x) > 100.0 * delta)
        .expect("a boundary-stable sample exists");
    let block = jacobian_block(&spec, &model, &x, PerturbationTarget::Input, delta).unwrap();
    assert!(
        block.matrix.data().iter().all(|&v| v == 0.0),
        "piecewise-constant gradient must have a zero Jacobian block"
    );
}

fn activation_margin(model: &Model, x: &Tensor) -> f64 {
    let mut margin = f64::INFINITY;
    let mut current = x.clone();
    for layer in model.layers() {
        if matches!(layer, Layer::Relu) {
            for v in current.data() {
                margin = margin.min(v.abs());
            }
        }
        current = match layer {
            Layer::Dense { weight, bias } => {
                let data: Vec<f64> = (0..weight.rows())
                    .map(|i| {
                        bias[i]
                            + weight
                                .row(i)
                                .iter()
                                .zip(current.data())
                                .map(|(w, v)| w * v)
                                .sum::<f64>()
                    })
                    .collect();
                Tensor::from_vec(data)
            }
            Layer::Relu => Tensor::from_vec(current.data().iter().map(|v| v.max(0.0)).collect()),
            _ => unreachable!("reference MLP has only Dense and Relu layers"),
        };
    }
    margin
}

#[test]
fn analytical_covariance_hand_case_and_scaling() {
    let block = JacobianBlock {
        matrix: Matrix::new(2, 2, vec![1.0, 0.0, 0.0, 2.0]).unwrap(),
        target: PerturbationTarget::Input,
        delta: 1e-4,
        method: Method::Saliency,
        sample_id: None,
    };
    let sigma = 0.5f64.sqrt();
    let cov = analytical_covariance(&block, sigma).unwrap();
    assert!((cov.matrix.get(0, 0) - 0.5).abs() <= 1e-15);
    assert!((cov.matrix.get(1, 1) - 2.0).abs() <= 1e-15);
    assert_eq!(cov.matrix.get(0, 1), 0.0);

    let zero = analytical_covariance(&block, 0.0).unwrap();
    assert!(zero.matrix.data().iter().all(|&v| v == 0.0));
}

#[test]
fn analytical_trace_matches_frobenius_identity() {
    let data = sample_gaussian(7 * 13, 1.0, &RngStream::new(17)).unwrap();
    let block = JacobianBlock {
        matrix: Matrix::new(7, 13, data.into_data()).unwrap(),
        target: PerturbationTarget::Input,
        delta: 1e-4,
        method: Method::Occlusion,
        sample_id: None,
    };
    let sigma = 0.37;
    let cov = analytical_covariance(&block, sigma).unwrap();
    let tr = trace(&cov.matrix).unwrap();
    let expected = sigma * sigma * block.matrix.frobenius_norm_sq();
    assert!((tr - expected).abs() <= 1e-12 * expected, "{tr} vs {expected}");
}

#[test]
fn mc_covariance_zero_sigma_is_zero_matrix() {
    let model = linear_regressor(vec![1.0, -2.0, 0.5]);
    let spec = ExplainerSpec::new(Method::GradientInput, TargetRule::RegressionOutput);
    let x = Tensor::from_vec(vec![0.2, 0.4, 0.6]);
    let cov = mc_covariance(
        &spec,
        &model,
        &x,
        PerturbationTarget::Input,
        0.0,
        50,
        &RngStream::new(3),
    )
    .unwrap();
    assert!(cov.matrix.data().iter().all(|&v| v == 0.0));
}

// MC concentration on the identity explainer stub: the covariance of
// e(x + noise) = x + noise is sigma^2 * I.
#[test]
fn mc_covariance_of_identity_stub_concentrates() {
    let dim = 5;
    let x0 = vec![0.1, 0.2, 0.3, 0.4, 0.5];
    let samples = mc_explanations_from_fn(dim, 0.1, 10_000, &RngStream::new(5), |offset| {
        Ok(x0.iter().zip(offset).map(|(a, b)| a + b).collect())
    })
    .unwrap();
    let cov = empirical_covariance(&samples).unwrap();
    for i in 0..dim {
        for j in 0..dim {
            let v = cov.get(i, j);
            if i == j {
                assert!((v - 0.01).abs() <= 0.001, "diag {v}");
            } else {
                assert!(v.abs() <= 0.001, "offdiag {v}");
            }
        }
    }
}

// For an affine explainer the first-order covariance is exact, so the MC
// trace must concentrate on the analytical trace.
#[test]
fn mc_trace_matches_analytical_for_linear_gradient_input() {
    let w = vec![2.0, -1.0, 0.5, 3.0, -0.25, 1.0, 0.75, -2.0, 0.1];
    let model = linear_regressor(w.clone());
    let spec = ExplainerSpec::new(Method::GradientInput, TargetRule::RegressionOutput);
    let x = Tensor::from_vec(vec![0.5; 9]);
    let sigma = 0.05;

    let block = jacobian_block(&spec, &model, &x, PerturbationTarget::Input, 1e-5).unwrap();
    let lin = analytical_covariance(&block, sigma).unwrap();
    let mc = mc_covariance(
        &spec,
        &model,
        &x,
        PerturbationTarget::Input,
        sigma,
        2000,
        &RngStream::new(11),
    )
    .unwrap();
    let tr_lin = trace(&lin.matrix).unwrap();
    let tr_mc = trace(&mc.matrix).unwrap();
    assert!(
        (tr_mc / tr_lin - 1.0).abs() <= 0.15,
        "mc {tr_mc} vs lin {tr_lin}"
    );
    crate::linalg::validate_covariance(&mc.matrix).unwrap();
}

fn explanation_of(values: Vec<f64>) -> Explanation {
    Explanation {
        values: Tensor::from_vec(values),
        method: Method::Saliency,
        target: 0,
        sample_id: None,
    }
}

#[test]
fn mue_hand_cases() {
    let cov = CovarianceEstimate {
        sigma: 1.0,
        matrix: Matrix::identity(2),
        estimator: EstimatorKind::Analytical,
        n_samples: None,
        rng: None,
    };
    // |e|^2 = 4, m = 2 -> 2 / (2 * 4) = 0.25
    let e = explanation_of(vec![2.0, 0.0]);
    assert_eq!(mue(&cov, &e).unwrap(), 0.25);

    let zero = CovarianceEstimate {
        sigma: 1.0,
        matrix: Matrix::zeros(2, 2),
        estimator: EstimatorKind::Analytical,
        n_samples: None,
        rng: None,
    };
    assert_eq!(mue(&zero, &e).unwrap(), 0.0);

    // scaling the reference by c scales MUE by 1/c^2
    let scaled = explanation_of(vec![6.0, 0.0]);
    let ratio = mue(&cov, &e).unwrap() / mue(&cov, &scaled).unwrap();
    assert!((ratio - 9.0).abs() <= 1e-12);

    let degenerate = explanation_of(vec![0.0, 0.0]);
    match mue(&cov, &degenerate) {
        Err(Error::DegenerateReference { .. }) => {}
        other => panic!("expected degenerate-reference error, got {other:?}"),
    }
}

#[test]
fn analytical_curve_is_exactly_quadratic() {
    let data = sample_gaussian(9 * 9, 1.0, &RngStream::new(23)).unwrap();
    let block = JacobianBlock {
        matrix: Matrix::new(9, 9, data.into_data()).unwrap(),
        target: PerturbationTarget::Input,
        delta: 1e-4,
        method: Method::Occlusion,
        sample_id: None,
    };
    let reference = explanation_of(vec![1.0; 9]);
    let sigmas = [1e-6, 2e-6, 1e-3, 2e-3, 0.1, 0.2];
    let curve = mue_curve_analytical(&block, &reference, &sigmas).unwrap();
    assert_eq!(curve[1].1, 4.0 * curve[0].1);
    assert_eq!(curve[3].1, 4.0 * curve[2].1);
    assert_eq!(curve[5].1, 4.0 * curve[4].1);

    // unit log-log slope in sigma^2
    let slope = (curve[1].1.ln() - curve[0].1.ln())
        / ((curve[1].0 * curve[1].0).ln() - (curve[0].0 * curve[0].0).ln());
    assert!((slope - 1.0).abs() <= 1e-12, "slope {slope}");

    let zero_block = JacobianBlock {
        matrix: Matrix::zeros(9, 9),
        target: PerturbationTarget::Input,
        delta: 1e-4,
        method: Method::Saliency,
        sample_id: None,
    };
    let flat = mue_curve_analytical(&zero_block, &reference, &sigmas).unwrap();
    assert!(flat.iter().all(|&(_, v)| v == 0.0));
}

#[test]
fn analyze_input_returns_one_record_per_sigma_in_order() {
    let model = linear_regressor(vec![1.0, -0.5, 2.0]);
    let spec = ExplainerSpec::new(Method::GradientInput, TargetRule::RegressionOutput);
    let x = Tensor::from_vec(vec![0.3, 0.6, 0.9]);
    let sigmas = [1e-4, 1e-3, 1e-2];
    let records = analyze_input_perturbation(
        &spec,
        &model,
        &x,
        &sigmas,
        50,
        1e-4,
        &RngStream::new(31),
        meta(),
    )
    .unwrap();
    assert_eq!(records.len(), 3);
    for (rec, &sigma) in records.iter().zip(&sigmas) {
        assert_eq!(rec.sigma, sigma);
        assert!(rec.mue_lin >= 0.0 && rec.mue_mc >= 0.0);
        assert_eq!(rec.m, 3);
        assert!(rec.is_clean());
    }

    let empty = analyze_input_perturbation(
        &spec,
        &model,
        &x,
        &[],
        50,
        1e-4,
        &RngStream::new(31),
        meta(),
    )
    .unwrap();
    assert!(empty.is_empty());
}

#[test]
fn analyze_is_deterministic() {
    let model = crate::nn::reference_mlp(ActivationMode::Relu, &RngStream::new(37));
    let spec = ExplainerSpec::new(Method::Occlusion, TargetRule::RegressionOutput);
    let x = sample_gaussian(9, 1.0, &RngStream::new(38)).unwrap();
    let sigmas = [1e-3, 1e-2];
    let run = || {
        analyze_input_perturbation(
            &spec,
            &model,
            &x,
            &sigmas,
            40,
            1e-4,
            &RngStream::new(39),
            meta(),
        )
        .unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn weight_target_dimensions_and_degenerate_reference() {
    let model = crate::nn::reference_mlp(ActivationMode::Relu, &RngStream::new(41));
    let spec = ExplainerSpec::new(Method::Saliency, TargetRule::RegressionOutput);
    let x = sample_gaussian(9, 1.0, &RngStream::new(42)).unwrap();
    let block =
        jacobian_block(&spec, &model, &x, PerturbationTarget::FinalDenseWeights, 1e-4).unwrap();
    assert_eq!(block.matrix.rows(), 9);
    assert_eq!(block.matrix.cols(), 64);

    // zero final Dense weights and bias make every gradient explanation zero
    let zeroed = model
        .with_final_dense_weights(&Tensor::from_vec(vec![0.0; 64]))
        .unwrap();
    let err = analyze_weight_perturbation(
        &spec,
        &zeroed,
        &x,
        &[1e-3],
        10,
        1e-4,
        &RngStream::new(43),
        meta(),
    )
    .unwrap_err();
    match err {
        Error::DegenerateReference { .. } => {}
        other => panic!("expected degenerate-reference error, got {other:?}"),
    }
}

// Weight perturbations leave the activation pattern untouched, so gradient
// explanations are exactly affine in the final-layer weights and the two
// estimators must agree tightly even at moderate N.
#[test]
fn weight_perturbation_is_exactly_first_order_for_saliency() {
    let model = crate::nn::reference_mlp(ActivationMode::Relu, &RngStream::new(47));
    let spec = ExplainerSpec::new(Method::Saliency, TargetRule::RegressionOutput);
    let x = sample_gaussian(9, 1.0, &RngStream::new(48)).unwrap();
    let records = analyze_weight_perturbation(
        &spec,
        &model,
        &x,
        &[1e-3, 1e-2],
        400,
        1e-4,
        &RngStream::new(49),
        meta(),
    )
    .unwrap();
    for rec in records {
        let ratio = rec.mue_mc / rec.mue_lin;
        assert!(
            (0.7..1.4).contains(&ratio),
            "sigma {}: mc/lin ratio {ratio}",
            rec.sigma
        );
    }
}

// Forward differences at delta and delta/2 agree on piecewise-linear
// explainers away from kinks; the Richardson ratio check degenerates to
// near-exact equality.
#[test]
fn forward_difference_step_consistency() {
    let model = crate::nn::reference_mlp(ActivationMode::Relu, &RngStream::new(53));
    let x = sample_gaussian(9, 1.0, &RngStream::new(54)).unwrap();
    for method in [Method::Occlusion, Method::GradientInput] {
        let spec = ExplainerSpec::new(method, TargetRule::RegressionOutput);
        let j1 = jacobian_block(&spec, &model, &x, PerturbationTarget::Input, 1e-4).unwrap();
        let j2 = jacobian_block(&spec, &model, &x, PerturbationTarget::Input, 5e-5).unwrap();
        let diff: f64 = j1
            .matrix
            .data()
            .iter()
            .zip(j2.matrix.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale = j1.matrix.frobenius_norm_sq().sqrt().max(1e-12);
        assert!(
            diff <= 1e-4 * scale.max(1.0),
            "{method:?}: step halving moved the Jacobian by {diff} (scale {scale})"
        );
    }
}

#[test]
fn mc_covariance_is_psd() {
    let model = crate::nn::reference_mlp(ActivationMode::Relu, &RngStream::new(59));
    let spec = ExplainerSpec::new(Method::Occlusion, TargetRule::RegressionOutput);
    let x = sample_gaussian(9, 1.0, &RngStream::new(60)).unwrap();
    let cov = mc_covariance(
        &spec,
        &model,
        &x,
        PerturbationTarget::Input,
        0.05,
        100,
        &RngStream::new(61),
    )
    .unwrap();
    let tr = trace(&cov.matrix).unwrap();
    let min_eig = symmetric_eigenvalues(&cov.matrix)
        .unwrap()
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    assert!(min_eig >= -1e-9 * tr.max(1e-300), "min eigenvalue {min_eig}");
}
