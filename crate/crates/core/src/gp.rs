//! Exact Gaussian process regression with the exponential kernel
//! `k(x, x') = ψ₁·exp(−‖x − x'‖ / ψ₂)`.
//!
//! Every expert runs these routines on its own data, and the full-data
//! baseline runs them on the union of all data. The prior mean is always
//! supplied by the caller, both at the training inputs (inside
//! [`LocalDataset`]) and at the test inputs.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::PsdFactor;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Kernel variance `psi1`, kernel length scale `psi2` and observation noise
/// standard deviation `sigma_eps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub psi1: f64,
    pub psi2: f64,
    pub sigma_eps: f64,
}

impl Hyperparams {
    pub fn new(psi1: f64, psi2: f64, sigma_eps: f64) -> Result<Self> {
        let theta = Self {
            psi1,
            psi2,
            sigma_eps,
        };
        theta.validate()?;
        Ok(theta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.psi1.is_finite() && self.psi2.is_finite() && self.sigma_eps.is_finite()) {
            return Err(invalid(format!("non-finite hyperparameters {self:?}")));
        }
        if self.psi1 <= 0.0 || self.psi2 <= 0.0 || self.sigma_eps < 0.0 {
            return Err(invalid(format!(
                "hyperparameters need psi1 > 0, psi2 > 0, sigma_eps >= 0, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn noise_variance(&self) -> f64 {
        self.sigma_eps * self.sigma_eps
    }
}

/// One expert's data `(X_i, y_i)` together with its prior mean vector `m_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalDataset {
    inputs: Vec<Vec<f64>>,
    outputs: Vec<f64>,
    prior_mean: Vec<f64>,
}

impl LocalDataset {
    pub fn new(inputs: Vec<Vec<f64>>, outputs: Vec<f64>, prior_mean: Vec<f64>) -> Result<Self> {
        let n = inputs.len();
        if n == 0 {
            return Err(invalid("dataset must hold at least one point"));
        }
        if outputs.len() != n || prior_mean.len() != n {
            return Err(invalid(format!(
                "dataset length mismatch: {n} inputs, {} outputs, {} prior means",
                outputs.len(),
                prior_mean.len()
            )));
        }
        let n_in = inputs[0].len();
        if n_in == 0 {
            return Err(invalid("input vectors must be non-empty"));
        }
        if inputs.iter().any(|x| x.len() != n_in) {
            return Err(invalid("input vectors have inconsistent dimensions"));
        }
        let all_finite = inputs.iter().flatten().all(|v| v.is_finite())
            && outputs.iter().all(|v| v.is_finite())
            && prior_mean.iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(invalid("dataset contains non-finite values"));
        }
        Ok(Self {
            inputs,
            outputs,
            prior_mean,
        })
    }

    /// Uses the sample mean of `outputs` as a constant prior mean.
    pub fn with_sample_mean_prior(inputs: Vec<Vec<f64>>, outputs: Vec<f64>) -> Result<Self> {
        let mean = if outputs.is_empty() {
            0.0
        } else {
            outputs.iter().sum::<f64>() / outputs.len() as f64
        };
        let prior = vec![mean; outputs.len()];
        Self::new(inputs, outputs, prior)
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn prior_mean(&self) -> &[f64] {
        &self.prior_mean
    }

    /// Sample mean of the outputs.
    pub fn output_mean(&self) -> f64 {
        self.outputs.iter().sum::<f64>() / self.len() as f64
    }

    /// Replaces the prior mean vector.
    pub fn with_prior_mean(self, prior_mean: Vec<f64>) -> Result<Self> {
        Self::new(self.inputs, self.outputs, prior_mean)
    }

    fn residual(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.outputs
                .iter()
                .zip(&self.prior_mean)
                .map(|(y, m)| y - m),
        )
    }
}

/// Posterior mean and variance per test point.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionResult {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl PredictionResult {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn std_dev(&self) -> Vec<f64> {
        self.variance.iter().map(|v| v.sqrt()).collect()
    }
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn check_point(x: &[f64]) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(invalid("input vector has non-finite entries"))
    }
}

/// Exponential kernel `ψ₁·exp(−‖xi − xj‖/ψ₂)`.
pub fn kernel_eval(xi: &[f64], xj: &[f64], psi: &Hyperparams) -> Result<f64> {
    psi.validate()?;
    if xi.len() != xj.len() {
        return Err(invalid(format!(
            "input dimensions differ: {} vs {}",
            xi.len(),
            xj.len()
        )));
    }
    check_point(xi)?;
    check_point(xj)?;
    Ok(psi.psi1 * (-euclidean(xi, xj) / psi.psi2).exp())
}

fn check_inputs(xs: &[Vec<f64>]) -> Result<usize> {
    let Some(first) = xs.first() else {
        return Err(invalid("empty input set"));
    };
    let n_in = first.len();
    for x in xs {
        if x.len() != n_in {
            return Err(invalid("input vectors have inconsistent dimensions"));
        }
        check_point(x)?;
    }
    Ok(n_in)
}

/// Pairwise Euclidean distance matrix.
pub fn distance_matrix(xs: &[Vec<f64>]) -> DMatrix<f64> {
    let n = xs.len();
    let mut d = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in (j + 1)..n {
            let v = euclidean(&xs[i], &xs[j]);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

/// Kernel matrix `K` with `K_ij = k(x_i, x_j)`.
pub fn kernel_matrix(xs: &[Vec<f64>], psi: &Hyperparams) -> Result<DMatrix<f64>> {
    psi.validate()?;
    check_inputs(xs)?;
    Ok(distance_matrix(xs).map(|d| psi.psi1 * (-d / psi.psi2).exp()))
}

/// Kernel between training inputs (rows) and test inputs (columns).
fn cross_kernel(train: &[Vec<f64>], test: &[Vec<f64>], psi: &Hyperparams) -> DMatrix<f64> {
    DMatrix::from_fn(train.len(), test.len(), |i, j| {
        psi.psi1 * (-euclidean(&train[i], &test[j]) / psi.psi2).exp()
    })
}

/// A dataset with its pairwise distances cached, so repeated likelihood
/// evaluations only pay for the exponentials and the factorization.
#[derive(Clone, Debug)]
pub struct PreparedData {
    distances: DMatrix<f64>,
    residual: DVector<f64>,
}

impl PreparedData {
    pub fn new(data: &LocalDataset) -> Self {
        Self {
            distances: distance_matrix(data.inputs()),
            residual: data.residual(),
        }
    }

    pub fn len(&self) -> usize {
        self.residual.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residual.is_empty()
    }

    /// `K + σ_ε²I`, lower triangle only (the factorization never reads the
    /// upper one).
    fn covariance(&self, theta: &Hyperparams) -> DMatrix<f64> {
        let n = self.len();
        let noise = theta.noise_variance();
        let inv_len = theta.psi2.recip();
        let mut c = DMatrix::zeros(n, n);
        for j in 0..n {
            c[(j, j)] = theta.psi1 + noise;
            for i in (j + 1)..n {
                c[(i, j)] = theta.psi1 * (-self.distances[(i, j)] * inv_len).exp();
            }
        }
        c
    }

    /// `log p(y | X, θ)` for this dataset.
    pub fn log_marginal_likelihood(&self, theta: &Hyperparams) -> Result<f64> {
        theta.validate()?;
        let factor = PsdFactor::new(self.covariance(theta))?;
        let v = factor.solve_lower(&self.residual);
        let n = self.len() as f64;
        Ok(-0.5 * v.norm_squared() - 0.5 * factor.log_det() - 0.5 * n * LN_2PI)
    }
}

/// Log marginal likelihood
/// `−½ rᵀ(K+σ²I)⁻¹r − ½ log det(K+σ²I) − (N/2) log 2π` with `r = y − m`.
pub fn log_marginal_likelihood(data: &LocalDataset, theta: &Hyperparams) -> Result<f64> {
    PreparedData::new(data).log_marginal_likelihood(theta)
}

/// Posterior mean and variance of the latent function at `x_test`.
///
/// Variances are clamped at zero.
pub fn gpr_predict(
    data: &LocalDataset,
    theta: &Hyperparams,
    prior_at_test: &[f64],
    x_test: &[Vec<f64>],
) -> Result<PredictionResult> {
    theta.validate()?;
    if prior_at_test.len() != x_test.len() {
        return Err(invalid(format!(
            "{} test inputs but {} prior means",
            x_test.len(),
            prior_at_test.len()
        )));
    }
    if x_test.is_empty() {
        return Ok(PredictionResult {
            mean: Vec::new(),
            variance: Vec::new(),
        });
    }
    let n_in = check_inputs(x_test)?;
    if n_in != data.input_dim() {
        return Err(invalid(format!(
            "test inputs have dimension {n_in}, training inputs {}",
            data.input_dim()
        )));
    }

    let prepared = PreparedData::new(data);
    let factor = PsdFactor::new(prepared.covariance(theta))?;
    let alpha = factor.solve_vec(&prepared.residual);
    let k_star = cross_kernel(data.inputs(), x_test, theta);
    let proj = k_star.tr_mul(&alpha);

    let mut mean = Vec::with_capacity(x_test.len());
    let mut variance = Vec::with_capacity(x_test.len());
    for (j, m) in prior_at_test.iter().enumerate() {
        mean.push(m + proj[j]);
        let v = factor.solve_lower(&k_star.column(j).into_owned());
        variance.push((theta.psi1 - v.norm_squared()).max(0.0));
    }
    Ok(PredictionResult { mean, variance })
}

/// Density of a scalar Gaussian, in log form. Handy for N = 1 checks.
pub fn scalar_gaussian_log_density(residual: f64, variance: f64) -> f64 {
    -residual * residual / (2.0 * variance) - 0.5 * variance.ln() - 0.5 * (2.0 * PI).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn theta(psi1: f64, psi2: f64, sigma: f64) -> Hyperparams {
        Hyperparams::new(psi1, psi2, sigma).unwrap()
    }

    fn random_dataset(rng: &mut ChaCha8Rng, n: usize, n_in: usize) -> LocalDataset {
        let inputs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n_in).map(|_| rng.random_range(0.0..10.0)).collect())
            .collect();
        let outputs: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let prior: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        LocalDataset::new(inputs, outputs, prior).unwrap()
    }

    // Dense oracle: explicit inverse and determinant.
    fn dense_lml(data: &LocalDataset, th: &Hyperparams) -> f64 {
        let n = data.len();
        let c = DMatrix::from_fn(n, n, |i, j| {
            let k = th.psi1 * (-euclidean(&data.inputs()[i], &data.inputs()[j]) / th.psi2).exp();
            if i == j {
                k + th.sigma_eps * th.sigma_eps
            } else {
                k
            }
        });
        let inv = c.clone().try_inverse().unwrap();
        let r = DVector::from_fn(n, |i, _| data.outputs()[i] - data.prior_mean()[i]);
        let quad = (r.transpose() * inv * &r)[0];
        -0.5 * quad - 0.5 * c.determinant().ln() - 0.5 * n as f64 * (2.0 * PI).ln()
    }

    #[test]
    fn kernel_examples() {
        let t = theta(2.5, 7.0, 0.0);
        assert_eq!(kernel_eval(&[3.0], &[3.0], &t).unwrap(), 2.5);
        let t = theta(1.0, 5.0, 0.0);
        let k = kernel_eval(&[0.0, 0.0], &[3.0, 4.0], &t).unwrap();
        assert!((k - (-1f64).exp()).abs() < 1e-15);
        assert!((k - 0.367879).abs() < 1e-6);
        let t = theta(1.0, 100.0, 0.0);
        let k = kernel_eval(&[0.0], &[100.0 * 2f64.ln()], &t).unwrap();
        assert!((k - 0.5).abs() < 1e-14);
    }

    #[test]
    fn kernel_rejects_non_finite() {
        let t = theta(1.0, 1.0, 0.0);
        assert!(kernel_eval(&[f64::NAN], &[0.0], &t).is_err());
        assert!(kernel_eval(&[0.0], &[f64::INFINITY], &t).is_err());
        assert!(kernel_eval(&[0.0], &[0.0, 1.0], &t).is_err());
    }

    #[test]
    fn hyperparams_validation() {
        assert!(Hyperparams::new(0.0, 1.0, 0.0).is_err());
        assert!(Hyperparams::new(1.0, -1.0, 0.0).is_err());
        assert!(Hyperparams::new(1.0, 1.0, -0.1).is_err());
        assert!(Hyperparams::new(f64::NAN, 1.0, 0.1).is_err());
        assert!(Hyperparams::new(1.0, 1.0, 0.0).is_ok());
    }

    #[test]
    fn kernel_matrix_small_cases() {
        let t = theta(3.0, 2.0, 0.0);
        let k = kernel_matrix(&[vec![1.0]], &t).unwrap();
        assert_eq!(k, DMatrix::from_element(1, 1, 3.0));
        let k = kernel_matrix(&[vec![1.0, 2.0], vec![1.0, 2.0]], &t).unwrap();
        assert_eq!(k, DMatrix::from_element(2, 2, 3.0));
        assert!(kernel_matrix(&[], &t).is_err());
    }

    #[test]
    fn kernel_matrix_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<Vec<f64>> = (0..5)
            .map(|_| vec![rng.random_range(0.0..4.0), rng.random_range(0.0..4.0)])
            .collect();
        let t = theta(1.7, 0.9, 0.0);
        let k = kernel_matrix(&xs, &t).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let e = kernel_eval(&xs[i], &xs[j], &t).unwrap();
                assert!((k[(i, j)] - e).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn lml_single_point() {
        let data = LocalDataset::new(vec![vec![0.0]], vec![2.0], vec![2.0]).unwrap();
        let l = log_marginal_likelihood(&data, &theta(1.0, 1.0, 0.0)).unwrap();
        assert!((l + 0.918939).abs() < 1e-6);

        let data = LocalDataset::new(vec![vec![0.0]], vec![2.0], vec![0.5]).unwrap();
        let th = theta(1.3, 1.0, 0.4);
        let v: f64 = 1.3 + 0.16;
        let expected = -1.5 * 1.5 / (2.0 * v) - 0.5 * v.ln() - 0.5 * (2.0 * PI).ln();
        let l = log_marginal_likelihood(&data, &th).unwrap();
        assert!((l - expected).abs() < 1e-12);
        assert!((scalar_gaussian_log_density(1.5, v) - expected).abs() < 1e-14);
    }

    #[test]
    fn lml_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let data = random_dataset(&mut rng, 8, 1);
            let th = theta(
                rng.random_range(0.5..3.0),
                rng.random_range(0.5..5.0),
                rng.random_range(0.1..1.0),
            );
            let a = log_marginal_likelihood(&data, &th).unwrap();
            let b = dense_lml(&data, &th);
            assert!((a - b).abs() <= 1e-8 * b.abs(), "{a} vs {b}");
        }
    }

    #[test]
    fn predict_interpolates_training_point() {
        let data = LocalDataset::new(
            vec![vec![0.0], vec![1.0], vec![3.0]],
            vec![1.0, -2.0, 0.5],
            vec![0.0; 3],
        )
        .unwrap();
        let th = theta(2.0, 1.5, 0.0);
        let p = gpr_predict(&data, &th, &[0.0], &[vec![1.0]]).unwrap();
        assert!((p.mean[0] + 2.0).abs() < 1e-8);
        assert!(p.variance[0].abs() < 1e-8);
    }

    #[test]
    fn predict_far_away_reverts_to_prior() {
        let data =
            LocalDataset::new(vec![vec![0.0], vec![1.0]], vec![1.0, 2.0], vec![0.0; 2]).unwrap();
        let th = theta(2.0, 1.0, 0.1);
        let p = gpr_predict(&data, &th, &[7.5], &[vec![1e4]]).unwrap();
        assert!((p.mean[0] - 7.5).abs() < 1e-12);
        assert!((p.variance[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn predict_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let data = random_dataset(&mut rng, 6, 1);
        let th = theta(1.4, 2.2, 0.3);
        let x_test = vec![vec![0.5], vec![4.2], vec![9.9]];
        let prior = vec![0.1, -0.2, 0.3];
        let p = gpr_predict(&data, &th, &prior, &x_test).unwrap();

        let n = data.len();
        let mut c = kernel_matrix(data.inputs(), &th).unwrap();
        for i in 0..n {
            c[(i, i)] += th.noise_variance();
        }
        let inv = c.try_inverse().unwrap();
        let r = DVector::from_fn(n, |i, _| data.outputs()[i] - data.prior_mean()[i]);
        for (j, xs) in x_test.iter().enumerate() {
            let ks = DVector::from_fn(n, |i, _| kernel_eval(&data.inputs()[i], xs, &th).unwrap());
            let mean = prior[j] + (ks.transpose() * &inv * &r)[0];
            let var = th.psi1 - (ks.transpose() * &inv * &ks)[0];
            assert!((p.mean[j] - mean).abs() < 1e-8 * (1.0 + mean.abs()));
            assert!((p.variance[j] - var).abs() < 1e-8 * (1.0 + var.abs()));
        }
    }

    #[test]
    fn predict_rejects_prior_length_mismatch() {
        let data = LocalDataset::with_sample_mean_prior(vec![vec![0.0]], vec![1.0]).unwrap();
        let th = theta(1.0, 1.0, 0.1);
        assert!(gpr_predict(&data, &th, &[0.0, 1.0], &[vec![1.0]]).is_err());
    }

    #[test]
    fn dataset_validation() {
        assert!(LocalDataset::new(vec![], vec![], vec![]).is_err());
        assert!(LocalDataset::new(vec![vec![0.0]], vec![1.0, 2.0], vec![0.0]).is_err());
        assert!(LocalDataset::new(vec![vec![0.0]], vec![f64::NAN], vec![0.0]).is_err());
        assert!(LocalDataset::new(
            vec![vec![0.0], vec![1.0, 2.0]],
            vec![1.0, 2.0],
            vec![0.0; 2]
        )
        .is_err());
        let d = LocalDataset::with_sample_mean_prior(vec![vec![0.0], vec![1.0]], vec![1.0, 3.0])
            .unwrap();
        assert_eq!(d.prior_mean(), &[2.0, 2.0]);
    }

    #[test]
    fn near_duplicate_inputs_without_noise_still_factorize() {
        let data = LocalDataset::new(
            vec![vec![1.0], vec![1.0 + 1e-13], vec![2.0]],
            vec![0.3, 0.3, -0.1],
            vec![0.0; 3],
        )
        .unwrap();
        let l = log_marginal_likelihood(&data, &theta(1.0, 10.0, 0.0)).unwrap();
        assert!(l.is_finite());
    }

    #[test]
    fn perturbed_duplicate_changes_prediction_continuously() {
        let base = LocalDataset::new(
            vec![vec![0.0], vec![2.0], vec![5.0]],
            vec![1.0, -1.0, 0.5],
            vec![0.0; 3],
        )
        .unwrap();
        let th = theta(1.0, 2.0, 0.3);
        let x_test = vec![vec![1.0], vec![3.5]];
        let dup = |eps: f64| {
            let mut xs = base.inputs().to_vec();
            let mut ys = base.outputs().to_vec();
            xs.push(vec![2.0 + eps]);
            ys.push(-1.0);
            LocalDataset::new(xs, ys, vec![0.0; 4]).unwrap()
        };
        let exact = gpr_predict(&dup(0.0), &th, &[0.0; 2], &x_test).unwrap();
        let near = gpr_predict(&dup(1e-9), &th, &[0.0; 2], &x_test).unwrap();
        for j in 0..2 {
            assert!((exact.mean[j] - near.mean[j]).abs() < 1e-8);
            assert!((exact.variance[j] - near.variance[j]).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn kernel_is_symmetric(a in proptest::collection::vec(-50.0f64..50.0, 2),
                               b in proptest::collection::vec(-50.0f64..50.0, 2),
                               psi1 in 0.01f64..100.0, psi2 in 0.01f64..100.0) {
            let t = Hyperparams::new(psi1, psi2, 0.0).unwrap();
            let kab = kernel_eval(&a, &b, &t).unwrap();
            prop_assert_eq!(kab, kernel_eval(&b, &a, &t).unwrap());
            prop_assert!(kab >= 0.0 && kab <= psi1);
            // exp underflows to 0 past ~745; below that the value must stay positive.
            let r = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            if r / psi2 < 700.0 {
                prop_assert!(kab > 0.0);
            }
        }

        #[test]
        fn kernel_matrix_is_psd(seed in any::<u64>(), n in 2usize..50, psi2 in 0.1f64..20.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(0.0..10.0)]).collect();
            let t = Hyperparams::new(2.0, psi2, 0.0).unwrap();
            let k = kernel_matrix(&xs, &t).unwrap();
            let min_eig = k.symmetric_eigenvalues().min();
            prop_assert!(min_eig >= -1e-8 * 2.0, "min eigenvalue {}", min_eig);
        }

        #[test]
        fn lml_is_permutation_invariant(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = random_dataset(&mut rng, 7, 2);
            let mut idx: Vec<usize> = (0..7).collect();
            idx.reverse();
            idx.swap(1, 4);
            let permuted = LocalDataset::new(
                idx.iter().map(|&i| data.inputs()[i].clone()).collect(),
                idx.iter().map(|&i| data.outputs()[i]).collect(),
                idx.iter().map(|&i| data.prior_mean()[i]).collect(),
            ).unwrap();
            let th = Hyperparams::new(1.2, 3.0, 0.2).unwrap();
            let a = log_marginal_likelihood(&data, &th).unwrap();
            let b = log_marginal_likelihood(&permuted, &th).unwrap();
            prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
        }

        #[test]
        fn predicted_variance_is_bounded(seed in any::<u64>(), sigma in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = random_dataset(&mut rng, 10, 1);
            let th = Hyperparams::new(1.5, 2.0, sigma).unwrap();
            let x_test: Vec<Vec<f64>> = (0..8).map(|_| vec![rng.random_range(-2.0..12.0)]).collect();
            let p = gpr_predict(&data, &th, &[0.0; 8], &x_test).unwrap();
            for v in p.variance {
                prop_assert!((0.0..=1.5 + 1e-8).contains(&v));
            }
        }
    }
}
