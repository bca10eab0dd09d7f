//! Hyperparameter training: multi-start Nelder–Mead over the (possibly
//! air-computed) sum of local log marginal likelihoods.
//!
//! The simplex lives in `(ln ψ₁, ln ψ₂, ln σ_ε²)` so every evaluated point is
//! a valid [`Hyperparams`]. One objective evaluation is one channel round, so
//! `t_max` bounds the rounds spent per start.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{
    power_control_statistical, truncate_center, AirCompChannel, ChannelParams, CsiMode, PowerPolicy,
};
use crate::error::{invalid, Error, Result};
use crate::gp::{Hyperparams, PreparedData};
use crate::poe::ExpertPool;

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;
/// Offset of each initial-simplex vertex along one log coordinate.
pub const INITIAL_STEP: f64 = 0.5;
/// Smallest noise variance representable in log space.
const MIN_NOISE_VARIANCE: f64 = 1e-12;

/// Something the optimizer maximizes. Non-finite values reject the vertex.
pub trait Objective {
    fn evaluate(&mut self, theta: &Hyperparams) -> f64;
}

impl<F: FnMut(&Hyperparams) -> f64> Objective for F {
    fn evaluate(&mut self, theta: &Hyperparams) -> f64 {
        self(theta)
    }
}

type Point = [f64; 3];

fn to_log(theta: &Hyperparams) -> Point {
    [
        theta.psi1.ln(),
        theta.psi2.ln(),
        theta.noise_variance().max(MIN_NOISE_VARIANCE).ln(),
    ]
}

fn from_log(u: &Point) -> Hyperparams {
    Hyperparams {
        psi1: u[0].exp(),
        psi2: u[1].exp(),
        sigma_eps: (0.5 * u[2]).exp(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NelderMeadResult {
    pub theta: Hyperparams,
    /// Best objective value seen (maximization sense).
    pub value: f64,
    /// Objective value of every evaluation, `-∞` for rejected vertices.
    pub trace: Vec<f64>,
    /// Running maximum of `trace`.
    pub best_trace: Vec<f64>,
}

impl NelderMeadResult {
    pub fn evaluations(&self) -> usize {
        self.trace.len()
    }
}

struct Budgeted<'a, O: Objective> {
    objective: &'a mut O,
    limit: usize,
    trace: Vec<f64>,
    best_trace: Vec<f64>,
    best: Option<(Point, f64)>,
}

impl<O: Objective> Budgeted<'_, O> {
    fn exhausted(&self) -> bool {
        self.trace.len() >= self.limit
    }

    /// Returns the minimization cost `−objective`, or `None` once the
    /// budget is spent.
    fn cost(&mut self, u: &Point) -> Option<f64> {
        if self.exhausted() {
            return None;
        }
        let theta = from_log(u);
        let value = if theta.validate().is_ok() {
            self.objective.evaluate(&theta)
        } else {
            f64::NEG_INFINITY
        };
        let value = if value.is_finite() {
            value
        } else {
            f64::NEG_INFINITY
        };
        self.trace.push(value);
        if value.is_finite() && self.best.is_none_or(|(_, b)| value > b) {
            self.best = Some((*u, value));
        }
        let running = self.best.map_or(f64::NEG_INFINITY, |(_, b)| b);
        self.best_trace.push(running);
        Some(-value)
    }
}

fn lerp(a: &Point, b: &Point, t: f64) -> Point {
    [
        a[0] + t * (b[0] - a[0]),
        a[1] + t * (b[1] - a[1]),
        a[2] + t * (b[2] - a[2]),
    ]
}

/// Maximizes `objective` from `theta0` with at most `t_max` evaluations.
///
/// Stops early once the spread of objective values across the simplex
/// drops below `conv_tol`.
pub fn nelder_mead<O: Objective>(
    objective: &mut O,
    theta0: Hyperparams,
    t_max: usize,
    conv_tol: f64,
) -> NelderMeadResult {
    let mut run = Budgeted {
        objective,
        limit: t_max,
        trace: Vec::new(),
        best_trace: Vec::new(),
        best: None,
    };
    let start = to_log(&theta0);

    let mut simplex: Vec<(Point, f64)> = Vec::with_capacity(4);
    if let Some(f) = run.cost(&start) {
        simplex.push((start, f));
    }
    for k in 0..3 {
        let mut u = start;
        u[k] += INITIAL_STEP;
        match run.cost(&u) {
            Some(f) => simplex.push((u, f)),
            None => break,
        }
    }

    if simplex.len() == 4 {
        'outer: loop {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let (f_best, f_second_worst, f_worst) = (simplex[0].1, simplex[2].1, simplex[3].1);
            if f_worst - f_best < conv_tol || run.exhausted() {
                break;
            }
            let mut centroid = [0.0; 3];
            for (u, _) in &simplex[..3] {
                for k in 0..3 {
                    centroid[k] += u[k] / 3.0;
                }
            }
            let worst = simplex[3].0;

            let reflected = lerp(&centroid, &worst, -REFLECT);
            let Some(f_r) = run.cost(&reflected) else {
                break;
            };

            if f_r < f_best {
                let expanded = lerp(&centroid, &reflected, EXPAND);
                match run.cost(&expanded) {
                    Some(f_e) if f_e < f_r => simplex[3] = (expanded, f_e),
                    _ => simplex[3] = (reflected, f_r),
                }
                continue;
            }
            if f_r < f_second_worst {
                simplex[3] = (reflected, f_r);
                continue;
            }

            let accepted = if f_r < f_worst {
                let outside = lerp(&centroid, &reflected, CONTRACT);
                let Some(f_c) = run.cost(&outside) else { break };
                (f_c <= f_r).then_some((outside, f_c))
            } else {
                let inside = lerp(&centroid, &worst, CONTRACT);
                let Some(f_c) = run.cost(&inside) else { break };
                (f_c < f_worst).then_some((inside, f_c))
            };
            if let Some(v) = accepted {
                simplex[3] = v;
                continue;
            }

            let anchor = simplex[0].0;
            for vertex in simplex.iter_mut().skip(1) {
                let u = lerp(&anchor, &vertex.0, SHRINK);
                match run.cost(&u) {
                    Some(f) => *vertex = (u, f),
                    None => break 'outer,
                }
            }
        }
    }

    let (theta, value) = match run.best {
        Some((u, v)) => (from_log(&u), v),
        None => (theta0, f64::NEG_INFINITY),
    };
    NelderMeadResult {
        theta,
        value,
        trace: run.trace,
        best_trace: run.best_trace,
    }
}

/// Log-uniform sampling intervals for the initial hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitRanges {
    pub psi1: (f64, f64),
    pub psi2: (f64, f64),
    pub sigma_eps: (f64, f64),
}

impl Default for InitRanges {
    fn default() -> Self {
        Self {
            psi1: (1e-1, 1e3),
            psi2: (1.0, 1e3),
            sigma_eps: (1e-2, 1e2),
        }
    }
}

impl InitRanges {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("psi1", self.psi1),
            ("psi2", self.psi2),
            ("sigma_eps", self.sigma_eps),
        ] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(invalid(format!("bad init range for {name}: [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Hyperparams {
        let mut draw = |(lo, hi): (f64, f64)| {
            if lo == hi {
                lo
            } else {
                rng.random_range(lo.ln()..hi.ln()).exp()
            }
        };
        Hyperparams {
            psi1: draw(self.psi1),
            psi2: draw(self.psi2),
            sigma_eps: draw(self.sigma_eps),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Objective evaluations per start.
    pub t_max: usize,
    /// Number of starts.
    pub t_multi: usize,
    pub conv_tol: f64,
    pub init_ranges: InitRanges,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            t_max: 600,
            t_multi: 3,
            conv_tol: 1e-4,
            init_ranges: InitRanges::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_max == 0 || self.t_multi == 0 {
            return Err(invalid("t_max and t_multi must be at least 1"));
        }
        if !(self.conv_tol > 0.0) {
            return Err(invalid("conv_tol must be positive"));
        }
        self.init_ranges.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StartResult {
    pub theta0: Hyperparams,
    pub result: NelderMeadResult,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainResult {
    pub theta_opt: Hyperparams,
    pub best_objective: f64,
    /// Every evaluation of every start, in order.
    pub objective_trace: Vec<f64>,
    pub rounds_used: usize,
    pub per_start_results: Vec<StartResult>,
}

/// Runs `t_multi` Nelder–Mead starts from log-uniform random points and
/// keeps the one with the highest final objective.
pub fn multistart_train<O: Objective>(
    objective: &mut O,
    config: &TrainConfig,
) -> Result<TrainResult> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut starts = Vec::with_capacity(config.t_multi);
    for _ in 0..config.t_multi {
        let theta0 = config.init_ranges.sample(&mut rng);
        let result = nelder_mead(objective, theta0, config.t_max, config.conv_tol);
        starts.push(StartResult { theta0, result });
    }

    let best = starts
        .iter()
        .filter(|s| s.result.value.is_finite())
        .max_by(|a, b| a.result.value.total_cmp(&b.result.value));
    let Some(best) = best else {
        return Err(Error::TrainingFailed {
            starts: starts.len(),
            diagnostics: starts
                .iter()
                .map(|s| {
                    format!(
                        "theta0 = {:?}: {} evaluations, none finite",
                        s.theta0,
                        s.result.evaluations()
                    )
                })
                .collect(),
        });
    };
    let (theta_opt, best_objective) = (best.result.theta, best.result.value);
    let objective_trace: Vec<f64> = starts
        .iter()
        .flat_map(|s| s.result.trace.iter().copied())
        .collect();
    Ok(TrainResult {
        theta_opt,
        best_objective,
        rounds_used: objective_trace.len(),
        objective_trace,
        per_start_results: starts,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainingMode {
    /// Exact sum of local likelihoods.
    Ideal,
    AirCompPerfect,
    AirCompStatistical,
}

/// One objective evaluation, for diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub evaluation: usize,
    pub theta: Hyperparams,
    /// Objective value handed to the optimizer.
    pub decoded: f64,
    /// Exact `Σ L_i`, when every local likelihood was computable.
    pub true_sum: Option<f64>,
    /// Power-control scalar of the round (`None` in ideal mode).
    pub rho: Option<f64>,
}

/// Training objective for a pool of experts under one of the three
/// aggregation modes. Each call draws a fresh channel realization.
pub struct TrainingObjective {
    experts: Vec<PreparedData>,
    mode: TrainingMode,
    policy: PowerPolicy,
    channel: Option<AirCompChannel>,
    statistical_rho: Option<f64>,
    power_control_runs: usize,
    rows: Vec<TraceRow>,
    node_time: Vec<Duration>,
    parallel_time: Duration,
    deep_fade_rounds: usize,
    failed_evaluations: usize,
}

/// Builds the objective. `channel` and `policy` are ignored in ideal mode;
/// statistical mode computes its power-control scalar here, once.
pub fn make_objective(
    pool: &ExpertPool,
    mode: TrainingMode,
    channel: &ChannelParams,
    policy: PowerPolicy,
    seed: u64,
) -> Result<TrainingObjective> {
    let experts: Vec<PreparedData> = pool.experts().iter().map(PreparedData::new).collect();
    let m = experts.len();
    let mut power_control_runs = 0;
    let (channel, statistical_rho) = match mode {
        TrainingMode::Ideal => (None, None),
        TrainingMode::AirCompPerfect | TrainingMode::AirCompStatistical => {
            if channel.num_nodes() != m {
                return Err(invalid(format!(
                    "channel has {} nodes but the pool has {m} experts",
                    channel.num_nodes()
                )));
            }
            let rho = if mode == TrainingMode::AirCompStatistical {
                if policy.mode != CsiMode::Statistical {
                    return Err(invalid(
                        "statistical training needs a statistical power policy",
                    ));
                }
                policy.validate()?;
                power_control_runs += 1;
                Some(power_control_statistical(
                    &channel.gamma_bar,
                    channel.p_max,
                    policy.l_min,
                    policy.l_max,
                )?)
            } else {
                None
            };
            (Some(AirCompChannel::new(channel.clone(), seed)?), rho)
        }
    };
    Ok(TrainingObjective {
        experts,
        mode,
        policy,
        channel,
        statistical_rho,
        power_control_runs,
        rows: Vec::new(),
        node_time: vec![Duration::ZERO; m],
        parallel_time: Duration::ZERO,
        deep_fade_rounds: 0,
        failed_evaluations: 0,
    })
}

impl TrainingObjective {
    pub fn mode(&self) -> TrainingMode {
        self.mode
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.rows
    }

    /// Number of channel rounds (equivalently, evaluations) so far.
    pub fn rounds(&self) -> usize {
        self.rows.len()
    }

    /// Number of statistical power-control computations (0 or 1).
    pub fn power_control_runs(&self) -> usize {
        self.power_control_runs
    }

    /// Likelihood time summed per node.
    pub fn node_time(&self) -> &[Duration] {
        &self.node_time
    }

    /// Likelihood time if nodes ran in parallel: sum over evaluations of
    /// the slowest node.
    pub fn parallel_time(&self) -> Duration {
        self.parallel_time
    }

    pub fn deep_fade_rounds(&self) -> usize {
        self.deep_fade_rounds
    }

    pub fn failed_evaluations(&self) -> usize {
        self.failed_evaluations
    }

    fn local_likelihoods(&mut self, theta: &Hyperparams) -> Vec<Result<f64>> {
        let mut slowest = Duration::ZERO;
        let out = self
            .experts
            .iter()
            .zip(self.node_time.iter_mut())
            .map(|(e, t)| {
                let start = Instant::now();
                let l = e.log_marginal_likelihood(theta);
                let elapsed = start.elapsed();
                *t += elapsed;
                slowest = slowest.max(elapsed);
                l
            })
            .collect();
        self.parallel_time += slowest;
        out
    }

    fn evaluate_inner(&mut self, theta: &Hyperparams) -> (f64, Option<f64>, Option<f64>) {
        let locals = self.local_likelihoods(theta);
        let true_sum: Option<f64> = locals
            .iter()
            .map(|l| l.as_ref().ok().copied().filter(|v| v.is_finite()))
            .sum();
        match self.mode {
            TrainingMode::Ideal => (true_sum.unwrap_or(f64::NEG_INFINITY), true_sum, None),
            TrainingMode::AirCompPerfect => {
                let Some(values) = locals
                    .iter()
                    .map(|l| l.as_ref().ok().copied().filter(|v| v.is_finite()))
                    .collect::<Option<Vec<f64>>>()
                else {
                    return (f64::NEG_INFINITY, None, None);
                };
                let messages: Vec<Vec<f64>> = values.iter().map(|v| vec![*v]).collect();
                let channel = self.channel.as_mut().expect("channel present in air modes");
                match channel.perfect_sum(&messages) {
                    Ok(out) => {
                        if !out.record.deep_fade_nodes.is_empty() {
                            self.deep_fade_rounds += 1;
                        }
                        (out.decoded[0], true_sum, Some(out.record.rho))
                    }
                    Err(_) => {
                        self.deep_fade_rounds += 1;
                        (f64::NEG_INFINITY, true_sum, None)
                    }
                }
            }
            TrainingMode::AirCompStatistical => {
                let (l_min, l_max) = (self.policy.l_min, self.policy.l_max);
                let messages: Vec<Vec<f64>> = locals
                    .iter()
                    .map(|l| {
                        let v = l
                            .as_ref()
                            .ok()
                            .copied()
                            .filter(|v| v.is_finite())
                            .unwrap_or(l_min);
                        vec![truncate_center(v, l_min, l_max)]
                    })
                    .collect();
                let rho = self.statistical_rho.expect("rho fixed at construction");
                let c = self.policy.c_unbias;
                let channel = self.channel.as_mut().expect("channel present in air modes");
                match channel.statistical_sum(&messages, rho, c) {
                    Ok(out) => {
                        if !out.record.deep_fade_nodes.is_empty() {
                            self.deep_fade_rounds += 1;
                        }
                        // Undo the per-node centering to estimate Σ L_i.
                        let estimate =
                            out.decoded[0] + self.experts.len() as f64 * self.policy.center();
                        (estimate, true_sum, Some(rho))
                    }
                    Err(_) => (f64::NEG_INFINITY, true_sum, Some(rho)),
                }
            }
        }
    }
}

impl Objective for TrainingObjective {
    fn evaluate(&mut self, theta: &Hyperparams) -> f64 {
        let (decoded, true_sum, rho) = self.evaluate_inner(theta);
        if !decoded.is_finite() {
            self.failed_evaluations += 1;
        }
        self.rows.push(TraceRow {
            evaluation: self.rows.len(),
            theta: *theta,
            decoded,
            true_sum,
            rho,
        });
        decoded
    }
}

fn opt_field(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

/// Writes the per-evaluation trace as CSV.
pub fn write_trace_csv<W: Write>(out: W, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |source| Error::Csv {
        path: "<trace>".into(),
        source,
    };
    w.write_record([
        "evaluation",
        "psi1",
        "psi2",
        "sigma_eps",
        "decoded_objective",
        "true_objective",
        "rho",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.evaluation.to_string(),
            format!("{:e}", r.theta.psi1),
            format!("{:e}", r.theta.psi2),
            format!("{:e}", r.theta.sigma_eps),
            format!("{:e}", r.decoded),
            opt_field(r.true_sum),
            opt_field(r.rho),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<trace>".into(),
        source,
    })
}

/// [`write_trace_csv`] to a file.
pub fn write_trace_file(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_trace_csv(std::io::BufWriter::new(file), rows)
}
