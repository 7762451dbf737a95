use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn train(rows: &[Vec<f64>], y: &[f64]) -> Dataset<f64> {
    Dataset::from_rows(rows, y, Partition::Train).unwrap()
}

fn random_train(n: usize, p: usize, seed: u64) -> Dataset<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let y: Vec<f64> = rows
        .iter()
        .map(|r| {
            r.iter().enumerate().map(|(j, v)| (j as f64 + 1.0) * v).sum::<f64>() + 0.3 * rng.random_range(-1.0..1.0)
        })
        .collect();
    train(&rows, &y)
}

fn sine_train(n: usize, seed: u64) -> Dataset<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(0.0..1.0)]).collect();
    let y: Vec<f64> = rows.iter().map(|r| (6.0 * r[0]).sin() + 0.1 * rng.random_range(-1.0..1.0)).collect();
    train(&rows, &y)
}

#[test]
fn line_through_origin_recovers_slope() {
    let d = train(&[vec![1.0], vec![2.0], vec![3.0]], &[2.0, 4.0, 6.0]);
    let m = fit_erm(&ModelSpec::linear(false), &d, Seed(0)).unwrap();
    assert!((m.theta_hat().as_slice()[0] - 2.0).abs() < 1e-12);
    assert!(m.sigma_hat().abs() < 1e-12);
}

#[test]
fn line_with_intercept() {
    let d = train(&[vec![0.0], vec![1.0], vec![2.0]], &[1.0, 3.0, 5.0]);
    let m = fit_erm(&ModelSpec::linear(true), &d, Seed(0)).unwrap();
    let th = m.theta_hat().as_slice();
    // layout: slope, intercept
    assert!((th[0] - 2.0).abs() < 1e-12);
    assert!((th[1] - 1.0).abs() < 1e-12);
    assert!(m.sigma_hat().abs() < 1e-12);
}

#[test]
fn ridge_matches_closed_form() {
    let d = random_train(20, 3, 11);
    let lambda = 0.5;
    let m = fit_erm(&ModelSpec::ridge(lambda, false), &d, Seed(0)).unwrap();
    // independent route: (XᵀX + nλI)⁻¹ Xᵀy via LU
    let x = d.inputs();
    let mut a = x.transpose() * x;
    for i in 0..3 {
        a[(i, i)] += 20.0 * lambda;
    }
    let expected = a.lu().solve(&(x.transpose() * d.targets())).unwrap();
    for j in 0..3 {
        assert!((m.theta_hat().as_slice()[j] - expected[j]).abs() < 1e-10);
    }
    assert!(m.mean_gradient_norm() <= 1e-6);
}

#[test]
fn collinear_design_is_singular() {
    let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
    let y: Vec<f64> = (0..6).map(|i| i as f64).collect();
    let err = fit_erm(&ModelSpec::linear(false), &train(&rows, &y), Seed(0));
    assert!(matches!(err, Err(Error::SingularFit(_))));
    // ridge resolves it
    assert!(fit_erm(&ModelSpec::ridge(0.1, false), &train(&rows, &y), Seed(0)).is_ok());
}

#[test]
fn too_few_rows_rejected() {
    let d = train(&[vec![1.0, 2.0]], &[1.0]);
    assert!(matches!(fit_erm(&ModelSpec::linear(true), &d, Seed(0)), Err(Error::InvalidParameter(_))));
}

#[test]
fn fit_requires_train_partition() {
    let d = Dataset::targets_only(&[1.0, 2.0, 3.0], Partition::Test);
    assert!(matches!(fit_erm(&ModelSpec::scalar_mean(), &d, Seed(0)), Err(Error::PartitionError(_))));
}

#[test]
fn invalid_specs() {
    let d = random_train(10, 1, 1);
    assert!(fit_erm(&ModelSpec::ridge(-1.0, true), &d, Seed(0)).is_err());
    assert!(fit_erm(&ModelSpec::mlp(0), &d, Seed(0)).is_err());
}

#[test]
fn linear_prediction_and_gradient() {
    let d = train(&[vec![0.0], vec![1.0], vec![2.0]], &[1.0, 3.0, 5.0]);
    let m =
        FittedModel::from_parameters(&ModelSpec::linear(true), &d, ParameterVector::from_slice(&[2.0, 1.0]).unwrap())
            .unwrap();
    assert_eq!(m.predict(&[3.0]).unwrap(), 7.0);
    assert_eq!(m.prediction_gradient(&[3.0]).unwrap().as_slice(), &[3.0, 1.0]);
    assert!(matches!(m.predict(&[1.0, 2.0]), Err(Error::ShapeError(_))));
    assert!(matches!(m.prediction_gradient(&[]), Err(Error::ShapeError(_))));
}

#[test]
fn dead_network_outputs_bias() {
    let d = sine_train(10, 2);
    let spec = ModelSpec::mlp(4);
    let mut theta = vec![0.0; 4 + 4 + 4 + 1];
    theta[12] = 0.7;
    let m = FittedModel::from_parameters(&spec, &d, ParameterVector::from_slice(&theta).unwrap()).unwrap();
    let s = m.standardizer().unwrap();
    for x in [0.0, 0.3, 5.0] {
        let out = m.predict(&[x]).unwrap();
        assert!((out - (s.y_shift + s.y_scale * 0.7)).abs() < 1e-12);
        assert!((m.net().eval(m.theta_hat().as_slice(), &[x]) - 0.7).abs() < 1e-15);
    }
}

#[test]
fn zero_output_weights_block_input_weight_gradient() {
    let d = sine_train(10, 3);
    let spec = ModelSpec::mlp(3);
    let theta = vec![0.0; 3 + 3 + 3 + 1];
    let m = FittedModel::from_parameters(&spec, &d, ParameterVector::from_slice(&theta).unwrap()).unwrap();
    let g = m.prediction_gradient(&[0.4]).unwrap();
    assert!(g.as_slice()[..6].iter().all(|&v| v == 0.0));
    // tanh(0) = 0 so only the output bias carries gradient
    assert_eq!(g[9], m.standardizer().unwrap().y_scale);
}

#[test]
fn fitted_network_is_stationary_and_residuals_match_sigma() {
    let d = sine_train(40, 5);
    let m = fit_erm(&ModelSpec::mlp(8), &d, Seed(3)).unwrap();
    assert!(m.mean_gradient_norm() <= 1e-4, "grad norm {}", m.mean_gradient_norm());
    let mse: f64 = (0..d.len()).map(|i| (d.targets()[i] - m.predict(&d.input_vec(i)).unwrap()).powi(2)).sum::<f64>()
        / d.len() as f64;
    assert!((m.sigma_hat() - mse.sqrt()).abs() < 1e-12);
    // recompute the internal training loss from predictions
    let s = m.standardizer().unwrap();
    let internal: f64 = (0..d.len())
        .map(|i| m.sample_loss(m.theta_hat().as_slice(), &d.input_vec(i), d.targets()[i]).unwrap())
        .sum::<f64>()
        / d.len() as f64;
    assert!((internal - 0.5 * mse / (s.y_scale * s.y_scale)).abs() < 1e-12);
}

#[test]
fn fit_is_deterministic_in_seed() {
    let d = sine_train(20, 5);
    let a = fit_erm(&ModelSpec::mlp(4), &d, Seed(9)).unwrap();
    let b = fit_erm(&ModelSpec::mlp(4), &d, Seed(9)).unwrap();
    assert_eq!(a.theta_hat(), b.theta_hat());
}

#[test]
fn linear_exact_hessian_is_gram_over_n() {
    let d = random_train(25, 3, 4);
    let m = fit_erm(&ModelSpec::linear(false), &d, Seed(0)).unwrap();
    let h = hessian_matrix(&m, &d, HessianMode::Exact).unwrap();
    let x = d.inputs();
    let gram = x.transpose() * x / 25.0;
    assert!((&h - &gram).amax() < 1e-12);
    // finite differences of the mean gradient
    let th = m.theta_hat().values().clone();
    let mean_grad = |t: &DVector<f64>| -> DVector<f64> {
        let mut acc = DVector::zeros(3);
        for i in 0..d.len() {
            acc += m.sample_loss_gradient(t.as_slice(), &d.input_vec(i), d.targets()[i]).unwrap();
        }
        acc / d.len() as f64
    };
    for j in 0..3 {
        let mut up = th.clone();
        let mut dn = th.clone();
        up[j] += 1e-5;
        dn[j] -= 1e-5;
        let col = (mean_grad(&up) - mean_grad(&dn)) / 2e-5;
        for i in 0..3 {
            assert!((col[i] - h[(i, j)]).abs() < 1e-7);
        }
    }
    let gn = hessian_matrix(&m, &d, HessianMode::GaussNewton).unwrap();
    assert_eq!(h, gn);
}

#[test]
fn diagonal_mode_matches_exact_on_orthogonal_design() {
    let rows = vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![-1.0, 0.0], vec![0.0, -2.0]];
    let d = train(&rows, &[1.0, 2.0, 0.5, -1.0]);
    let m = fit_erm(&ModelSpec::linear(false), &d, Seed(0)).unwrap();
    let exact = hessian_matrix(&m, &d, HessianMode::Exact).unwrap();
    let diag = hessian_matrix(&m, &d, HessianMode::Diagonal).unwrap();
    assert_eq!(exact, diag);
}

#[test]
fn network_hessians_are_symmetric() {
    let d = sine_train(30, 6);
    let m = fit_erm(&ModelSpec::mlp(5), &d, Seed(1)).unwrap();
    for mode in [HessianMode::Exact, HessianMode::GaussNewton] {
        let h = hessian_matrix(&m, &d, mode).unwrap();
        assert!((&h - h.transpose()).amax() <= 1e-12);
    }
}

#[test]
fn network_exact_hessian_matches_finite_differences() {
    let d = sine_train(15, 8);
    let m = fit_erm(&ModelSpec::mlp(3), &d, Seed(2)).unwrap();
    let h = hessian_matrix(&m, &d, HessianMode::Exact).unwrap();
    let th = m.theta_hat().values().clone();
    let dim = th.len();
    let mean_grad = |t: &DVector<f64>| -> DVector<f64> {
        let mut acc = DVector::zeros(dim);
        for i in 0..d.len() {
            acc += m.sample_loss_gradient(t.as_slice(), &d.input_vec(i), d.targets()[i]).unwrap();
        }
        acc / d.len() as f64
    };
    for j in 0..dim {
        let mut up = th.clone();
        let mut dn = th.clone();
        up[j] += 1e-5;
        dn[j] -= 1e-5;
        let col = (mean_grad(&up) - mean_grad(&dn)) / 2e-5;
        for i in 0..dim {
            assert!((col[i] - h[(i, j)]).abs() < 1e-6, "H[{i},{j}] fd {} vs {}", col[i], h[(i, j)]);
        }
    }
}

#[test]
fn random_spd_solve_residual() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..20 {
        let b = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
        let a = &b * b.transpose() + DMatrix::identity(5, 5) * 0.1;
        let h = HessianApprox::new(a, HessianMode::Exact, Damping::Auto).unwrap();
        let v = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
        let u = h.influence_solve(&v);
        let res = (h.apply_damped(&u) - &v).norm() / v.norm();
        assert!(res <= 1e-8, "residual {res}");
    }
}

#[test]
fn single_precision_linear_fit() {
    let rows: Vec<Vec<f32>> = (0..5).map(|i| vec![i as f32]).collect();
    let y: Vec<f32> = (0..5).map(|i| 3.0 * i as f32 - 1.0).collect();
    let d = Dataset::from_rows(&rows, &y, Partition::Train).unwrap();
    let m = fit_erm(&ModelSpec::linear(true), &d, Seed(0)).unwrap();
    assert!((m.theta_hat().as_slice()[0] - 3.0).abs() < 1e-4);
    assert!((m.predict(&[10.0]).unwrap() - 29.0).abs() < 1e-3);
}

#[test]
fn weight_decay_spares_biases_and_keeps_stationarity() {
    let d = sine_train(30, 11);
    let spec = ModelSpec::mlp(4).with_weight_decay(1e-2);
    let m = fit_erm(&spec, &d, Seed(1)).unwrap();
    assert!(m.mean_gradient_norm() <= 1e-4);
    let mean_grad = DVector::from_fn(m.n_params(), |j, _| m.per_sample_grads().column(j).mean());
    assert!(mean_grad.norm() <= 1e-4);
    let pen = penalty_diag(&spec, &m.net);
    // layout [W1 (4×1), b1 (4), w2 (4), b2]
    let expected: Vec<f64> = [vec![1e-2; 4], vec![0.0; 4], vec![1e-2; 4], vec![0.0]].concat();
    assert_eq!(pen.as_slice(), expected.as_slice());
    let plain = fit_erm(&ModelSpec::mlp(4), &d, Seed(1)).unwrap();
    let weights = |m: &FittedModel<f64>| {
        m.theta_hat().as_slice()[..4].iter().chain(&m.theta_hat().as_slice()[8..12]).map(|v| v * v).sum::<f64>()
    };
    assert!(weights(&m) < weights(&plain));
    assert!(ModelSpec::mlp(4).with_weight_decay(-1.0).validate().is_err());
    // the penalty is ignored by the linear kinds
    assert_eq!(
        penalty_diag(&ModelSpec::linear(true).with_weight_decay(1.0), &ModelSpec::linear(true).build_net(&d)).sum(),
        0.0
    );
}
