//! One-dimensional radio-map construction benchmark.
//!
//! Nodes measure average received power `P_Tx − 10η·log₁₀‖x_Tx − x‖ + W(x)`
//! along a line, where `W` is zero-mean Gaussian shadowing (in dB) with
//! correlation `exp(−‖xi − xj‖·ln2 / d_cor)`. Each trial draws measurement
//! and test locations, one joint shadowing field, trains every requested
//! method and scores it by RMSE at the test locations.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channel::{AirCompChannel, ChannelParams, FadingModel, PowerPolicy};
use crate::error::{invalid, Error, Result};
use crate::experiment::{uplink_cost, CostModel};
use crate::gp::{euclidean, gpr_predict, Hyperparams, LocalDataset, PredictionResult};
use crate::linalg::PsdFactor;
use crate::poe::{
    ideal_dgpr_predict, local_predictions, partition_dataset, ExpertPool, PartitionStrategy,
};
use crate::seed::derive_seed;
use crate::trainer::{make_objective, multistart_train, InitRanges, TrainConfig, TrainingMode};

/// Scenario parameters. Defaults: η = 3,
/// P_Tx = 10 dBm, σ_dB = 8 dB, d_cor = 100 m, M = 4, N = 128,
/// P_max = 10 dBm, γ̄ = −50 dB, σ_z² = −90 dBm, T = 600, T_multi = 3,
/// truncation {−5000, 0}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub eta: f64,
    pub p_tx_dbm: f64,
    pub sigma_db: f64,
    pub d_cor: f64,
    pub tx_location: [f64; 2],
    /// Interval the 1-D node coordinates are drawn from, meters.
    pub measurement_span: [f64; 2],
    pub m: usize,
    pub n: usize,
    pub n_test: usize,
    pub trials: usize,
    pub gamma_bar_db: f64,
    pub noise_dbm: f64,
    pub p_max_dbm: f64,
    pub t_max: usize,
    pub t_multi: usize,
    pub conv_tol: f64,
    pub l_min: f64,
    pub l_max: f64,
    pub fading: FadingModel,
    pub assignment: PartitionStrategy,
    pub init_ranges: InitRanges,
    /// Minimum distance between a test location and every measurement, meters.
    pub test_min_separation: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            eta: 3.0,
            p_tx_dbm: 10.0,
            sigma_db: 8.0,
            d_cor: 100.0,
            tx_location: [0.0, 500.0],
            measurement_span: [1.0, 1000.0],
            m: 4,
            n: 128,
            n_test: 10,
            trials: 100,
            gamma_bar_db: -50.0,
            noise_dbm: -90.0,
            p_max_dbm: 10.0,
            t_max: 600,
            t_multi: 3,
            conv_tol: 1e-4,
            l_min: -5000.0,
            l_max: 0.0,
            fading: FadingModel::Rayleigh,
            assignment: PartitionStrategy::Random,
            init_ranges: InitRanges::default(),
            test_min_separation: 1.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.eta,
            self.p_tx_dbm,
            self.sigma_db,
            self.d_cor,
            self.gamma_bar_db,
            self.noise_dbm,
            self.p_max_dbm,
            self.measurement_span[0],
            self.measurement_span[1],
            self.tx_location[0],
            self.tx_location[1],
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(invalid("scenario has non-finite parameters"));
        }
        if !(self.eta > 0.0) {
            return Err(invalid("path loss exponent must be positive"));
        }
        if self.sigma_db < 0.0 {
            return Err(invalid("shadowing std must be non-negative"));
        }
        if !(self.d_cor > 0.0) {
            return Err(invalid("correlation distance must be positive"));
        }
        if !(self.measurement_span[0] < self.measurement_span[1]) {
            return Err(invalid("measurement span must be an increasing interval"));
        }
        if self.m == 0 || self.n < self.m {
            return Err(invalid(format!(
                "need N >= M >= 1, got N = {}, M = {}",
                self.n, self.m
            )));
        }
        if self.n_test == 0 {
            return Err(invalid("n_test must be at least 1"));
        }
        if self.trials == 0 {
            return Err(invalid("trials must be at least 1"));
        }
        if !(self.test_min_separation >= 0.0) {
            return Err(invalid("test separation must be non-negative"));
        }
        self.train_config(0).validate()?;
        PowerPolicy::statistical(self.l_min, self.l_max, self.fading)?;
        Ok(())
    }

    /// Non-fatal issues with the configuration.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.m > 0 && !self.n.is_multiple_of(self.m) {
            w.push(format!(
                "N = {} is not divisible by M = {}; the last node takes the remainder",
                self.n, self.m
            ));
        }
        w
    }

    pub fn channel_params(&self) -> ChannelParams {
        let mut p =
            ChannelParams::uniform_db(self.m, self.gamma_bar_db, self.noise_dbm, self.p_max_dbm);
        p.fading = self.fading;
        p
    }

    pub fn statistical_policy(&self) -> Result<PowerPolicy> {
        PowerPolicy::statistical(self.l_min, self.l_max, self.fading)
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            t_max: self.t_max,
            t_multi: self.t_multi,
            conv_tol: self.conv_tol,
            init_ranges: self.init_ranges,
            seed,
        }
    }

    pub fn cost_model(&self) -> CostModel {
        CostModel {
            n_in: 1,
            n: self.n as u64,
            m: self.m as u64,
            t: self.t_max as u64,
            t_multi: self.t_multi as u64,
            n_test: self.n_test as u64,
        }
    }

    /// Deterministic path loss in dB at a 2-D location.
    pub fn pathloss_dbm(&self, location: &[f64; 2]) -> f64 {
        let d = euclidean(&self.tx_location, location);
        self.p_tx_dbm - 10.0 * self.eta * d.log10()
    }
}

/// A point in the plane, meters.
pub type Location = [f64; 2];

/// Maps a GP input (1-D coordinate `l` or a 2-D point) to a 2-D location.
pub fn location_of(input: &[f64]) -> [f64; 2] {
    match input {
        [l] => [*l, 0.0],
        [x, y, ..] => [*x, *y],
        [] => [0.0, 0.0],
    }
}

/// `exp(−‖xi − xj‖·ln2 / d_cor)`.
pub fn shadowing_correlation(xi: &[f64], xj: &[f64], d_cor: f64) -> f64 {
    (-euclidean(xi, xj) * std::f64::consts::LN_2 / d_cor).exp()
}

/// Ground truth over a set of locations; the first `n_train` are
/// measurement locations, the rest test locations.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub locations: Vec<[f64; 2]>,
    pub pathloss_db: Vec<f64>,
    pub shadowing_db: Vec<f64>,
    pub rx_power_dbm: Vec<f64>,
    pub n_train: usize,
}

impl GroundTruth {
    pub fn train_locations(&self) -> &[[f64; 2]] {
        &self.locations[..self.n_train]
    }

    pub fn test_locations(&self) -> &[[f64; 2]] {
        &self.locations[self.n_train..]
    }

    pub fn train_power(&self) -> &[f64] {
        &self.rx_power_dbm[..self.n_train]
    }

    pub fn test_power(&self) -> &[f64] {
        &self.rx_power_dbm[self.n_train..]
    }
}

/// Draws one jointly Gaussian shadowing field over `locations` and adds
/// path loss. Every location counts as a measurement location.
pub fn generate_field(
    locations: &[[f64; 2]],
    scenario: &ScenarioConfig,
    seed: u64,
) -> Result<GroundTruth> {
    generate_field_split(locations, locations.len(), scenario, seed)
}

/// [`generate_field`] with the first `n_train` locations marked as measurements.
pub fn generate_field_split(
    locations: &[[f64; 2]],
    n_train: usize,
    scenario: &ScenarioConfig,
    seed: u64,
) -> Result<GroundTruth> {
    if locations.is_empty() {
        return Err(invalid("no locations to generate a field over"));
    }
    if n_train > locations.len() {
        return Err(invalid("n_train exceeds the number of locations"));
    }
    if !(scenario.d_cor > 0.0) || scenario.sigma_db < 0.0 {
        return Err(invalid("bad shadowing parameters"));
    }
    let pathloss_db: Vec<f64> = locations
        .iter()
        .map(|x| {
            let d = euclidean(&scenario.tx_location, x);
            if d > 0.0 {
                Ok(scenario.pathloss_dbm(x))
            } else {
                Err(invalid(format!(
                    "location {x:?} coincides with the transmitter"
                )))
            }
        })
        .collect::<Result<_>>()?;

    let n = locations.len();
    let shadowing_db = if scenario.sigma_db == 0.0 {
        vec![0.0; n]
    } else {
        let var = scenario.sigma_db * scenario.sigma_db;
        let cov = DMatrix::from_fn(n, n, |i, j| {
            var * shadowing_correlation(&locations[i], &locations[j], scenario.d_cor)
        });
        let factor = PsdFactor::new(cov)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let white = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        factor_lower_mul(&factor, &white)
    };
    let rx_power_dbm = pathloss_db
        .iter()
        .zip(&shadowing_db)
        .map(|(p, w)| p + w)
        .collect();
    Ok(GroundTruth {
        locations: locations.to_vec(),
        pathloss_db,
        shadowing_db,
        rx_power_dbm,
        n_train,
    })
}

fn factor_lower_mul(factor: &PsdFactor, white: &DVector<f64>) -> Vec<f64> {
    factor.lower_mul(white).iter().copied().collect()
}

/// Least-squares fit `y ≈ a − b·10·log₁₀‖x_Tx − x‖` used as a node's prior mean.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OlsPrior {
    pub intercept: f64,
    /// Estimated path loss exponent.
    pub slope: f64,
    pub tx_location: [f64; 2],
    /// Set when the design was degenerate and the sample mean was used.
    pub fallback: bool,
}

impl OlsPrior {
    pub fn mean_at(&self, input: &[f64]) -> f64 {
        if self.fallback {
            return self.intercept;
        }
        let d = euclidean(&self.tx_location, &location_of(input));
        self.intercept - self.slope * 10.0 * d.log10()
    }

    pub fn means(&self, inputs: &[Vec<f64>]) -> Vec<f64> {
        inputs.iter().map(|x| self.mean_at(x)).collect()
    }
}

pub fn ols_prior(expert: &LocalDataset, tx_location: [f64; 2]) -> OlsPrior {
    let xs: Vec<f64> = expert
        .inputs()
        .iter()
        .map(|x| 10.0 * euclidean(&tx_location, &location_of(x)).log10())
        .collect();
    let ys = expert.outputs();
    let n = xs.len() as f64;
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean).powi(2)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (x - x_mean) * (y - y_mean))
        .sum();
    let degenerate = xs.len() < 2
        || !(sxx > 1e-12 * (1.0 + x_mean * x_mean) * n)
        || xs.iter().any(|x| !x.is_finite());
    if degenerate {
        return OlsPrior {
            intercept: y_mean,
            slope: 0.0,
            tx_location,
            fallback: true,
        };
    }
    let fitted = sxy / sxx;
    OlsPrior {
        intercept: y_mean - fitted * x_mean,
        slope: -fitted,
        tx_location,
        fallback: false,
    }
}

/// Replaces each expert's prior mean with its own OLS fit.
pub fn apply_ols_priors(pool: &mut ExpertPool, tx_location: [f64; 2]) -> Result<Vec<OlsPrior>> {
    let mut priors = Vec::with_capacity(pool.num_experts());
    for e in pool.experts_mut() {
        let prior = ols_prior(e, tx_location);
        let means = prior.means(e.inputs());
        *e = e.clone().with_prior_mean(means)?;
        priors.push(prior);
    }
    Ok(priors)
}

/// Splits the measurements of `truth` across `m` nodes. Inputs are the
/// 1-D coordinates; the prior mean is each node's sample mean until
/// [`apply_ols_priors`] replaces it.
pub fn build_node_datasets(
    truth: &GroundTruth,
    m: usize,
    assignment: PartitionStrategy,
    seed: u64,
) -> Result<ExpertPool> {
    let full = LocalDataset::with_sample_mean_prior(
        truth.train_locations().iter().map(|x| vec![x[0]]).collect(),
        truth.train_power().to_vec(),
    )?;
    let pool = partition_dataset(&full, m, assignment, seed)?;
    let experts = pool
        .into_experts()
        .into_iter()
        .map(|e| {
            let mean = e.output_mean();
            let n = e.len();
            e.with_prior_mean(vec![mean; n])
        })
        .collect::<Result<Vec<_>>>()?;
    ExpertPool::new_overlapping(experts)
}

/// Prediction from the true path-loss model only.
pub fn pathloss_baseline(scenario: &ScenarioConfig, x_test: &[Vec<f64>]) -> PredictionResult {
    PredictionResult {
        mean: x_test
            .iter()
            .map(|x| scenario.pathloss_dbm(&location_of(x)))
            .collect(),
        variance: vec![scenario.sigma_db * scenario.sigma_db; x_test.len()],
    }
}

/// Root mean squared error.
pub fn rmse(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(invalid(format!(
            "rmse length mismatch: {} vs {}",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(invalid("rmse of empty vectors"));
    }
    let mse = predicted
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / predicted.len() as f64;
    Ok(mse.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    FullGpr,
    IdealPoe,
    #[serde(rename = "aircomp-perfect")]
    AirCompPerfect,
    #[serde(rename = "aircomp-statistical")]
    AirCompStatistical,
    Pathloss,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::FullGpr,
        Method::IdealPoe,
        Method::AirCompPerfect,
        Method::AirCompStatistical,
        Method::Pathloss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::FullGpr => "full-gpr",
            Method::IdealPoe => "ideal-poe",
            Method::AirCompPerfect => "aircomp-perfect",
            Method::AirCompStatistical => "aircomp-statistical",
            Method::Pathloss => "pathloss",
        }
    }

    /// Whether the result depends on the channel parameters.
    pub fn uses_channel(self) -> bool {
        matches!(self, Method::AirCompPerfect | Method::AirCompStatistical)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid(format!("unknown method '{s}'")))
    }
}

/// Result of one method in one trial.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodOutcome {
    pub method: Method,
    /// `None` when training or prediction failed.
    pub rmse_db: Option<f64>,
    /// Likelihood time under the parallel-node model, seconds.
    pub train_time_s: f64,
    pub rounds: usize,
    pub uplink_cost: u64,
    pub theta: Option<Hyperparams>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub seed: u64,
    pub outcomes: Vec<MethodOutcome>,
}

impl TrialRecord {
    pub fn outcome(&self, method: Method) -> Option<&MethodOutcome> {
        self.outcomes.iter().find(|o| o.method == method)
    }
}

mod stream {
    pub const TRAIN_LOCATIONS: u64 = 1;
    pub const TEST_LOCATIONS: u64 = 2;
    pub const FIELD: u64 = 3;
    pub const PARTITION: u64 = 4;
    pub const TRAIN_INIT: u64 = 5;
    pub const CHANNEL_TRAIN_PERFECT: u64 = 6;
    pub const CHANNEL_TRAIN_STATISTICAL: u64 = 7;
    pub const CHANNEL_PREDICT_PERFECT: u64 = 8;
    pub const CHANNEL_PREDICT_STATISTICAL: u64 = 9;
}

/// Uniform measurement locations, then test locations rejection-sampled
/// at least `test_min_separation` away from every measurement.
pub fn sample_locations(
    scenario: &ScenarioConfig,
    seed: u64,
) -> Result<(Vec<Location>, Vec<Location>)> {
    let [lo, hi] = scenario.measurement_span;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream::TRAIN_LOCATIONS));
    let train: Vec<[f64; 2]> = (0..scenario.n)
        .map(|_| [rng.random_range(lo..=hi), 0.0])
        .collect();
    let mut sorted: Vec<f64> = train.iter().map(|x| x[0]).collect();
    sorted.sort_by(f64::total_cmp);

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream::TEST_LOCATIONS));
    let mut test = Vec::with_capacity(scenario.n_test);
    const MAX_ATTEMPTS: usize = 100_000;
    for _ in 0..scenario.n_test {
        let mut placed = false;
        for _ in 0..MAX_ATTEMPTS {
            let l: f64 = rng.random_range(lo..=hi);
            let pos = sorted.partition_point(|&v| v < l);
            let gap_left = pos.checked_sub(1).map_or(f64::INFINITY, |i| l - sorted[i]);
            let gap_right = sorted.get(pos).map_or(f64::INFINITY, |v| v - l);
            if gap_left.min(gap_right) >= scenario.test_min_separation {
                test.push([l, 0.0]);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(invalid(
                "could not place a test location away from the measurements",
            ));
        }
    }
    Ok((train, test))
}

/// Everything a trial needs before training: ground truth, the full
/// dataset and the node pool, both with OLS priors.
#[derive(Clone, Debug)]
pub struct PreparedTrial {
    pub scenario: ScenarioConfig,
    pub seed: u64,
    pub truth: GroundTruth,
    pub full: LocalDataset,
    pub full_prior: OlsPrior,
    pub pool: ExpertPool,
    pub node_priors: Vec<OlsPrior>,
    pub x_test: Vec<Vec<f64>>,
}

impl PreparedTrial {
    pub fn new(scenario: &ScenarioConfig, seed: u64) -> Result<Self> {
        scenario.validate()?;
        let (train, test) = sample_locations(scenario, seed)?;
        let n_train = train.len();
        let locations: Vec<[f64; 2]> = train.into_iter().chain(test).collect();
        let truth = generate_field_split(
            &locations,
            n_train,
            scenario,
            derive_seed(seed, stream::FIELD),
        )?;

        let mut pool = build_node_datasets(
            &truth,
            scenario.m,
            scenario.assignment,
            derive_seed(seed, stream::PARTITION),
        )?;
        let node_priors = apply_ols_priors(&mut pool, scenario.tx_location)?;

        let inputs: Vec<Vec<f64>> = truth.train_locations().iter().map(|x| vec![x[0]]).collect();
        let full = LocalDataset::with_sample_mean_prior(inputs, truth.train_power().to_vec())?;
        let full_prior = ols_prior(&full, scenario.tx_location);
        let full = full
            .clone()
            .with_prior_mean(full_prior.means(full.inputs()))?;
        let x_test = truth.test_locations().iter().map(|x| vec![x[0]]).collect();
        Ok(Self {
            scenario: scenario.clone(),
            seed,
            truth,
            full,
            full_prior,
            pool,
            node_priors,
            x_test,
        })
    }

    /// Changes the average channel gain used by the over-the-air methods.
    pub fn set_gamma_bar_db(&mut self, gamma_bar_db: f64) {
        self.scenario.gamma_bar_db = gamma_bar_db;
    }

    fn node_priors_at_test(&self) -> Vec<Vec<f64>> {
        self.node_priors
            .iter()
            .map(|p| p.means(&self.x_test))
            .collect()
    }

    fn predict(
        &self,
        method: Method,
    ) -> Result<(PredictionResult, Option<Hyperparams>, f64, usize)> {
        let sc = &self.scenario;
        let train_seed = derive_seed(self.seed, stream::TRAIN_INIT);
        let config = sc.train_config(train_seed);
        let channel = sc.channel_params();
        match method {
            Method::Pathloss => Ok((pathloss_baseline(sc, &self.x_test), None, 0.0, 0)),
            Method::FullGpr => {
                let pool = ExpertPool::new_overlapping(vec![self.full.clone()])?;
                let mut obj = make_objective(
                    &pool,
                    TrainingMode::Ideal,
                    &channel,
                    PowerPolicy::perfect(),
                    0,
                )?;
                let trained = multistart_train(&mut obj, &config)?;
                let prior = self.full_prior.means(&self.x_test);
                let pred = gpr_predict(&self.full, &trained.theta_opt, &prior, &self.x_test)?;
                Ok((
                    pred,
                    Some(trained.theta_opt),
                    obj.parallel_time().as_secs_f64(),
                    trained.rounds_used,
                ))
            }
            Method::IdealPoe => {
                let mut obj = make_objective(
                    &self.pool,
                    TrainingMode::Ideal,
                    &channel,
                    PowerPolicy::perfect(),
                    0,
                )?;
                let trained = multistart_train(&mut obj, &config)?;
                let pred = ideal_dgpr_predict(
                    &self.pool,
                    &trained.theta_opt,
                    &self.node_priors_at_test(),
                    &self.x_test,
                )?;
                Ok((
                    pred,
                    Some(trained.theta_opt),
                    obj.parallel_time().as_secs_f64(),
                    trained.rounds_used,
                ))
            }
            Method::AirCompPerfect | Method::AirCompStatistical => {
                let (mode, policy, train_tag, predict_tag) = if method == Method::AirCompPerfect {
                    (
                        TrainingMode::AirCompPerfect,
                        PowerPolicy::perfect(),
                        stream::CHANNEL_TRAIN_PERFECT,
                        stream::CHANNEL_PREDICT_PERFECT,
                    )
                } else {
                    (
                        TrainingMode::AirCompStatistical,
                        sc.statistical_policy()?,
                        stream::CHANNEL_TRAIN_STATISTICAL,
                        stream::CHANNEL_PREDICT_STATISTICAL,
                    )
                };
                let mut obj = make_objective(
                    &self.pool,
                    mode,
                    &channel,
                    policy,
                    derive_seed(self.seed, train_tag),
                )?;
                let trained = multistart_train(&mut obj, &config)?;
                let locals = local_predictions(
                    &self.pool,
                    &trained.theta_opt,
                    &self.node_priors_at_test(),
                    &self.x_test,
                )?;
                let mut air = AirCompChannel::new(channel, derive_seed(self.seed, predict_tag))?;
                let (pred, _) = air.predict_round(&locals)?;
                Ok((
                    pred,
                    Some(trained.theta_opt),
                    obj.parallel_time().as_secs_f64(),
                    trained.rounds_used,
                ))
            }
        }
    }

    /// Trains and scores one method. Failures are recorded, not returned.
    pub fn run_method(&self, method: Method) -> MethodOutcome {
        let uplink = match method {
            Method::Pathloss => 0,
            m => uplink_cost(m, &self.scenario.cost_model()).unwrap_or(0),
        };
        match self
            .predict(method)
            .and_then(|(pred, theta, time, rounds)| {
                Ok((
                    rmse(&pred.mean, self.truth.test_power())?,
                    theta,
                    time,
                    rounds,
                ))
            }) {
            Ok((r, theta, train_time_s, rounds)) => MethodOutcome {
                method,
                rmse_db: r.is_finite().then_some(r),
                train_time_s,
                rounds,
                uplink_cost: uplink,
                theta,
                error: (!r.is_finite()).then(|| "non-finite prediction".to_string()),
            },
            Err(e) => MethodOutcome {
                method,
                rmse_db: None,
                train_time_s: 0.0,
                rounds: 0,
                uplink_cost: uplink,
                theta: None,
                error: Some(e.to_string()),
            },
        }
    }
}

/// One full pipeline: locations, field, datasets, training, prediction and scoring.
pub fn run_trial(scenario: &ScenarioConfig, methods: &[Method], seed: u64) -> Result<TrialRecord> {
    let prepared = PreparedTrial::new(scenario, seed)?;
    Ok(TrialRecord {
        seed,
        outcomes: methods.iter().map(|&m| prepared.run_method(m)).collect(),
    })
}
