//! Dataset partitioning across experts, per-expert computations and
//! product-of-experts fusion.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::gp::{
    gpr_predict, log_marginal_likelihood, Hyperparams, LocalDataset, PredictionResult,
};

/// Smallest local variance passed on to fusion; keeps `σ⁻²` finite.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionStrategy {
    /// Shuffle, then split into near-equal chunks.
    Random,
    /// Sort by the first input coordinate, then cut into contiguous blocks.
    SpatialBlocks,
}

/// The experts' local datasets.
#[derive(Clone, Debug)]
pub struct ExpertPool {
    experts: Vec<LocalDataset>,
    n_in: usize,
}

impl ExpertPool {
    /// Builds a pool, rejecting any data point shared by two experts.
    pub fn new(experts: Vec<LocalDataset>) -> Result<Self> {
        let pool = Self::new_overlapping(experts)?;
        let mut seen = HashSet::new();
        for (i, e) in pool.experts.iter().enumerate() {
            for (x, y) in e.inputs().iter().zip(e.outputs()) {
                let mut key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
                key.push(y.to_bits());
                if !seen.insert(key) {
                    return Err(invalid(format!(
                        "expert {i} shares a data point with another expert"
                    )));
                }
            }
        }
        Ok(pool)
    }

    /// Builds a pool without the disjointness check. Meant for tests that
    /// deliberately hand every expert the same data.
    pub fn new_overlapping(experts: Vec<LocalDataset>) -> Result<Self> {
        let Some(first) = experts.first() else {
            return Err(invalid("expert pool needs at least one expert"));
        };
        let n_in = first.input_dim();
        if experts.iter().any(|e| e.input_dim() != n_in) {
            return Err(invalid("experts disagree on input dimension"));
        }
        Ok(Self { experts, n_in })
    }

    pub fn experts(&self) -> &[LocalDataset] {
        &self.experts
    }

    pub fn experts_mut(&mut self) -> &mut [LocalDataset] {
        &mut self.experts
    }

    pub fn into_experts(self) -> Vec<LocalDataset> {
        self.experts
    }

    pub fn num_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn input_dim(&self) -> usize {
        self.n_in
    }

    /// Total number of data points across experts.
    pub fn total_len(&self) -> usize {
        self.experts.iter().map(LocalDataset::len).sum()
    }
}

/// Sizes of `m` chunks of `n` points: `⌊n/m⌋` each, remainder to the last.
pub(crate) fn chunk_sizes(n: usize, m: usize) -> Vec<usize> {
    let base = n / m;
    let mut sizes = vec![base; m];
    sizes[m - 1] += n - base * m;
    sizes
}

/// Splits `full` into `m` disjoint experts.
pub fn partition_dataset(
    full: &LocalDataset,
    m: usize,
    strategy: PartitionStrategy,
    seed: u64,
) -> Result<ExpertPool> {
    let n = full.len();
    if m == 0 {
        return Err(invalid("number of experts must be at least 1"));
    }
    if n < m {
        return Err(invalid(format!(
            "cannot split {n} points across {m} experts"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    match strategy {
        PartitionStrategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            order.shuffle(&mut rng);
        }
        PartitionStrategy::SpatialBlocks => {
            order.sort_by(|&a, &b| full.inputs()[a][0].total_cmp(&full.inputs()[b][0]));
        }
    }

    let mut experts = Vec::with_capacity(m);
    let mut start = 0;
    for size in chunk_sizes(n, m) {
        let idx = &order[start..start + size];
        start += size;
        experts.push(LocalDataset::new(
            idx.iter().map(|&i| full.inputs()[i].clone()).collect(),
            idx.iter().map(|&i| full.outputs()[i]).collect(),
            idx.iter().map(|&i| full.prior_mean()[i]).collect(),
        )?);
    }
    Ok(ExpertPool {
        experts,
        n_in: full.input_dim(),
    })
}

/// Local log marginal likelihood `log p(y_i | X_i, θ)` computed by one expert.
pub fn local_likelihood(expert: &LocalDataset, theta: &Hyperparams) -> Result<f64> {
    log_marginal_likelihood(expert, theta)
}

/// One expert's posterior over the shared test inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalPrediction {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl LocalPrediction {
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        if mean.len() != variance.len() {
            return Err(invalid("local prediction mean/variance length mismatch"));
        }
        if variance.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(invalid(
                "local prediction variances must be positive and finite",
            ));
        }
        Ok(Self { mean, variance })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// `σ_i⁻²` per test point.
    pub fn precision(&self) -> Vec<f64> {
        self.variance.iter().map(|v| v.recip()).collect()
    }

    /// `σ_i⁻²·μ_i` per test point.
    pub fn weighted_mean(&self) -> Vec<f64> {
        self.variance
            .iter()
            .zip(&self.mean)
            .map(|(v, m)| m / v)
            .collect()
    }
}

/// Per-expert prediction with the variance floored at [`VARIANCE_FLOOR`].
pub fn local_predict(
    expert: &LocalDataset,
    theta: &Hyperparams,
    prior_at_test: &[f64],
    x_test: &[Vec<f64>],
) -> Result<LocalPrediction> {
    let PredictionResult { mean, variance } = gpr_predict(expert, theta, prior_at_test, x_test)?;
    let variance = variance
        .into_iter()
        .map(|v| v.max(VARIANCE_FLOOR))
        .collect();
    Ok(LocalPrediction { mean, variance })
}

/// Fuses expert predictions: `σ⁻² = Σ σ_i⁻²`, `μ = σ² Σ σ_i⁻² μ_i`.
///
/// Sums run in list order. A single expert is passed through unchanged.
pub fn poe_fuse(locals: &[LocalPrediction]) -> Result<PredictionResult> {
    let Some(first) = locals.first() else {
        return Err(invalid("cannot fuse an empty list of experts"));
    };
    let n = first.len();
    for l in locals {
        if l.mean.len() != n || l.variance.len() != n {
            return Err(invalid(
                "experts predicted different numbers of test points",
            ));
        }
        if l.variance.iter().any(|v| !(*v > 0.0)) {
            return Err(invalid("fusion needs strictly positive variances"));
        }
    }
    if locals.len() == 1 {
        return Ok(PredictionResult {
            mean: first.mean.clone(),
            variance: first.variance.clone(),
        });
    }

    let mut mean = Vec::with_capacity(n);
    let mut variance = Vec::with_capacity(n);
    for j in 0..n {
        let mut precision = 0.0;
        let mut weighted = 0.0;
        for l in locals {
            let p = l.variance[j].recip();
            precision += p;
            weighted += p * l.mean[j];
        }
        let v = precision.recip();
        variance.push(v);
        mean.push(v * weighted);
    }
    Ok(PredictionResult { mean, variance })
}

/// All experts' local predictions, in expert order.
pub fn local_predictions(
    pool: &ExpertPool,
    theta: &Hyperparams,
    priors_at_test: &[Vec<f64>],
    x_test: &[Vec<f64>],
) -> Result<Vec<LocalPrediction>> {
    if priors_at_test.len() != pool.num_experts() {
        return Err(invalid(format!(
            "{} experts but {} prior vectors",
            pool.num_experts(),
            priors_at_test.len()
        )));
    }
    pool.experts()
        .iter()
        .zip(priors_at_test)
        .map(|(e, prior)| local_predict(e, theta, prior, x_test))
        .collect()
}

/// Error-free distributed prediction: every expert predicts, then fuse.
pub fn ideal_dgpr_predict(
    pool: &ExpertPool,
    theta: &Hyperparams,
    priors_at_test: &[Vec<f64>],
    x_test: &[Vec<f64>],
) -> Result<PredictionResult> {
    poe_fuse(&local_predictions(pool, theta, priors_at_test, x_test)?)
}

/// Sum of local log marginal likelihoods, in expert order.
pub fn sum_local_likelihoods(pool: &ExpertPool, theta: &Hyperparams) -> Result<f64> {
    pool.experts()
        .iter()
        .map(|e| local_likelihood(e, theta))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::scalar_gaussian_log_density;
    use proptest::prelude::*;
    use rand::Rng;

    fn dataset_1d(xs: &[f64], ys: &[f64]) -> LocalDataset {
        LocalDataset::new(
            xs.iter().map(|&x| vec![x]).collect(),
            ys.to_vec(),
            vec![0.0; xs.len()],
        )
        .unwrap()
    }

    fn random_1d(rng: &mut ChaCha8Rng, n: usize) -> LocalDataset {
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..100.0)).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        dataset_1d(&xs, &ys)
    }

    fn sorted_bits(values: impl Iterator<Item = f64>) -> Vec<u64> {
        let mut v: Vec<u64> = values.map(f64::to_bits).collect();
        v.sort_unstable();
        v
    }

    #[test]
    fn single_expert_partition_is_whole_dataset() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let full = random_1d(&mut rng, 10);
        let pool = partition_dataset(&full, 1, PartitionStrategy::Random, 3).unwrap();
        assert_eq!(pool.num_experts(), 1);
        assert_eq!(
            sorted_bits(pool.experts()[0].outputs().iter().copied()),
            sorted_bits(full.outputs().iter().copied())
        );
    }

    #[test]
    fn random_partition_even_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let full = random_1d(&mut rng, 128);
        let pool = partition_dataset(&full, 4, PartitionStrategy::Random, 9).unwrap();
        assert_eq!(pool.num_experts(), 4);
        assert!(pool.experts().iter().all(|e| e.len() == 32));
        let union = pool
            .experts()
            .iter()
            .flat_map(|e| e.outputs().iter().copied());
        assert_eq!(
            sorted_bits(union),
            sorted_bits(full.outputs().iter().copied())
        );
    }

    #[test]
    fn remainder_goes_to_last_expert() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let full = random_1d(&mut rng, 10);
        let pool = partition_dataset(&full, 3, PartitionStrategy::Random, 0).unwrap();
        let sizes: Vec<usize> = pool.experts().iter().map(LocalDataset::len).collect();
        assert_eq!(sizes, vec![3, 3, 4]);
    }

    #[test]
    fn spatial_blocks_cut_at_order_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let full = random_1d(&mut rng, 20);
        let pool = partition_dataset(&full, 4, PartitionStrategy::SpatialBlocks, 0).unwrap();
        let mut sorted: Vec<f64> = full.inputs().iter().map(|x| x[0]).collect();
        sorted.sort_by(f64::total_cmp);
        for (b, e) in pool.experts().iter().enumerate() {
            let xs: Vec<f64> = e.inputs().iter().map(|x| x[0]).collect();
            assert_eq!(xs, sorted[b * 5..(b + 1) * 5].to_vec());
        }
    }

    #[test]
    fn partition_rejects_too_many_experts() {
        let full = dataset_1d(&[0.0, 1.0], &[0.0, 1.0]);
        assert!(partition_dataset(&full, 3, PartitionStrategy::Random, 0).is_err());
        assert!(partition_dataset(&full, 0, PartitionStrategy::Random, 0).is_err());
    }

    #[test]
    fn pool_rejects_shared_points() {
        let a = dataset_1d(&[0.0, 1.0], &[0.0, 1.0]);
        let b = dataset_1d(&[1.0, 2.0], &[1.0, 2.0]);
        assert!(ExpertPool::new(vec![a.clone(), b]).is_err());
        assert!(ExpertPool::new_overlapping(vec![a.clone(), a]).is_ok());
    }

    #[test]
    fn local_likelihood_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let full = random_1d(&mut rng, 12);
        let th = Hyperparams::new(2.0, 15.0, 0.3).unwrap();
        let pool = partition_dataset(&full, 1, PartitionStrategy::Random, 0).unwrap();
        assert_eq!(
            sum_local_likelihoods(&pool, &th).unwrap(),
            log_marginal_likelihood(&pool.experts()[0], &th).unwrap()
        );

        let single = dataset_1d(&[3.0], &[1.2]);
        let l = local_likelihood(&single, &th).unwrap();
        let expected = scalar_gaussian_log_density(1.2, 2.0 + 0.09);
        assert!((l - expected).abs() < 1e-12);
    }

    #[test]
    fn split_likelihood_differs_for_correlated_data() {
        // Strongly correlated neighbours: the independence approximation
        // must not reproduce the joint likelihood.
        let xs: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (x * 0.3).sin()).collect();
        let full = dataset_1d(&xs, &ys);
        let th = Hyperparams::new(1.0, 20.0, 0.05).unwrap();
        let pool = partition_dataset(&full, 2, PartitionStrategy::SpatialBlocks, 0).unwrap();
        let joint = log_marginal_likelihood(&full, &th).unwrap();
        let split = sum_local_likelihoods(&pool, &th).unwrap();
        assert!((joint - split).abs() > 1.0, "joint {joint} split {split}");
    }

    #[test]
    fn local_predict_equals_gpr_for_single_expert() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let full = random_1d(&mut rng, 9);
        let th = Hyperparams::new(1.5, 10.0, 0.2).unwrap();
        let x_test = vec![vec![5.0], vec![50.0]];
        let a = local_predict(&full, &th, &[0.0, 0.0], &x_test).unwrap();
        let b = gpr_predict(&full, &th, &[0.0, 0.0], &x_test).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.variance, b.variance);
    }

    #[test]
    fn far_expert_reverts_to_prior() {
        let e = dataset_1d(&[0.0, 1.0, 2.0], &[3.0, 2.0, 1.0]);
        let th = Hyperparams::new(4.0, 1.0, 0.1).unwrap();
        let p = local_predict(&e, &th, &[-1.0], &[vec![500.0]]).unwrap();
        assert!((p.mean[0] + 1.0).abs() < 1e-9);
        assert!((p.variance[0] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn zero_variance_is_floored() {
        let e = dataset_1d(&[0.0, 1.0], &[1.0, 2.0]);
        let th = Hyperparams::new(1.0, 1.0, 0.0).unwrap();
        let p = local_predict(&e, &th, &[0.0], &[vec![0.0]]).unwrap();
        assert!(p.variance[0] >= VARIANCE_FLOOR);
        assert!(p.precision()[0].is_finite());
    }

    #[test]
    fn fuse_examples() {
        let one = LocalPrediction::new(vec![1.0, -2.0], vec![0.5, 3.0]).unwrap();
        let fused = poe_fuse(std::slice::from_ref(&one)).unwrap();
        assert_eq!(fused.mean, one.mean);
        assert_eq!(fused.variance, one.variance);

        let a = LocalPrediction::new(vec![2.0], vec![0.8]).unwrap();
        let b = LocalPrediction::new(vec![6.0], vec![0.8]).unwrap();
        let fused = poe_fuse(&[a.clone(), b]).unwrap();
        assert!((fused.mean[0] - 4.0).abs() < 1e-14);
        assert!((fused.variance[0] - 0.4).abs() < 1e-14);

        let vague = LocalPrediction::new(vec![100.0], vec![1e12]).unwrap();
        let fused = poe_fuse(&[a, vague]).unwrap();
        assert!((fused.mean[0] - 2.0).abs() < 1e-6);
        assert!((fused.variance[0] - 0.8).abs() < 1e-6);

        assert!(poe_fuse(&[]).is_err());
    }

    #[test]
    fn identical_experts_divide_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let e = random_1d(&mut rng, 6);
        let th = Hyperparams::new(2.0, 20.0, 0.5).unwrap();
        let x_test = vec![vec![10.0], vec![33.0], vec![90.0]];
        let prior = vec![0.0; 3];
        let single = local_predict(&e, &th, &prior, &x_test).unwrap();
        let pool = ExpertPool::new_overlapping(vec![e.clone(), e.clone(), e]).unwrap();
        let fused = ideal_dgpr_predict(&pool, &th, &vec![prior; 3], &x_test).unwrap();
        for j in 0..3 {
            assert!((fused.mean[j] - single.mean[j]).abs() < 1e-10);
            assert!((fused.variance[j] - single.variance[j] / 3.0).abs() < 1e-12);
        }
    }

    fn arb_locals() -> impl Strategy<Value = Vec<LocalPrediction>> {
        proptest::collection::vec(
            proptest::collection::vec((-50.0f64..50.0, 1e-6f64..100.0), 5),
            1..6,
        )
        .prop_map(|experts| {
            experts
                .into_iter()
                .map(|pts| {
                    let (m, v): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
                    LocalPrediction::new(m, v).unwrap()
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn fusion_properties(locals in arb_locals()) {
            let fused = poe_fuse(&locals).unwrap();
            let mut reversed = locals.clone();
            reversed.reverse();
            let rev = poe_fuse(&reversed).unwrap();
            for j in 0..5 {
                let min_v = locals.iter().map(|l| l.variance[j]).fold(f64::INFINITY, f64::min);
                prop_assert!(fused.variance[j] <= min_v * (1.0 + 1e-12));
                let lo = locals.iter().map(|l| l.mean[j]).fold(f64::INFINITY, f64::min);
                let hi = locals.iter().map(|l| l.mean[j]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(fused.mean[j] >= lo - 1e-9 && fused.mean[j] <= hi + 1e-9);
                prop_assert!((fused.mean[j] - rev.mean[j]).abs() <= 1e-9 * (1.0 + fused.mean[j].abs()));
                prop_assert!((fused.variance[j] - rev.variance[j]).abs() <= 1e-12 * fused.variance[j].max(1.0));
            }
        }

        #[test]
        fn ideal_prediction_ignores_expert_order(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let full = random_1d(&mut rng, 16);
            let pool = partition_dataset(&full, 4, PartitionStrategy::Random, seed).unwrap();
            let mut experts = pool.experts().to_vec();
            experts.reverse();
            let reversed = ExpertPool::new(experts).unwrap();
            let th = Hyperparams::new(3.0, 25.0, 0.4).unwrap();
            let x_test = vec![vec![12.0], vec![48.0], vec![77.0]];
            let priors = vec![vec![0.0; 3]; 4];
            let a = ideal_dgpr_predict(&pool, &th, &priors, &x_test).unwrap();
            let b = ideal_dgpr_predict(&reversed, &th, &priors, &x_test).unwrap();
            for j in 0..3 {
                prop_assert!((a.mean[j] - b.mean[j]).abs() < 1e-10);
                prop_assert!((a.variance[j] - b.variance[j]).abs() < 1e-12);
            }
        }
    }
}
