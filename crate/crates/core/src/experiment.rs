//! Experiment runners: uplink cost accounting, parameter sweeps, training
//! time benchmarks and the regression demo. All outputs are CSV.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gp::{Hyperparams, LocalDataset, PreparedData};
use crate::poe::{local_predictions, partition_dataset, poe_fuse, PartitionStrategy};
use crate::radiomap::{
    apply_ols_priors, build_node_datasets, generate_field_split, sample_locations, Method,
    PreparedTrial, ScenarioConfig,
};
use crate::seed::derive_seed;
use crate::trainer::{make_objective, multistart_train, TrainingMode};

/// Version tag written as the first line of every sweep CSV.
pub const SWEEP_SCHEMA: &str = "# aircomp-gpr sweep v1";
pub const TIMING_SCHEMA: &str = "# aircomp-gpr timing v1";
pub const DEMO_SCHEMA: &str = "# aircomp-gpr demo v1";

/// Counts entering the uplink cost of each method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    pub n_in: u64,
    pub n: u64,
    pub m: u64,
    pub t: u64,
    pub t_multi: u64,
    pub n_test: u64,
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        let fields = [self.n_in, self.n, self.m, self.t, self.t_multi, self.n_test];
        if fields.contains(&0) {
            return Err(invalid(format!(
                "cost model counts must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Equivalent number of real variables sent uplink.
///
/// Full GPR ships every input and output once; ideal PoE ships one local
/// likelihood per node per evaluation plus two values per test point per
/// node; over the air every node shares the same channel uses.
/// The path-loss baseline sends nothing.
pub fn uplink_cost(method: Method, cost: &CostModel) -> Result<u64> {
    cost.validate()?;
    let per_node = cost.t * cost.t_multi + 2 * cost.n_test;
    Ok(match method {
        Method::FullGpr => (cost.n_in + 1) * cost.n,
        Method::IdealPoe => cost.m * per_node,
        Method::AirCompPerfect | Method::AirCompStatistical => per_node,
        Method::Pathloss => 0,
    })
}

/// [`uplink_cost`] keyed by method name.
pub fn uplink_cost_by_name(method: &str, cost: &CostModel) -> Result<u64> {
    uplink_cost(method.parse()?, cost)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParam {
    /// Average channel gain of every node, dB.
    GammaDb,
    /// Total number of measurements.
    N,
    /// Number of nodes.
    M,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::GammaDb => "gamma_db",
            SweepParam::N => "n",
            SweepParam::M => "m",
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gamma-db" | "gamma_db" | "gamma" => Ok(SweepParam::GammaDb),
            "n" | "N" => Ok(SweepParam::N),
            "m" | "M" => Ok(SweepParam::M),
            _ => Err(invalid(format!("unknown sweep parameter '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

impl Default for Sweep {
    fn default() -> Self {
        Self {
            param: SweepParam::GammaDb,
            values: vec![-80.0, -70.0, -60.0, -50.0, 0.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub scenario: ScenarioConfig,
    pub sweep: Sweep,
    pub methods: Vec<Method>,
    pub output_path: Option<PathBuf>,
    pub seed: u64,
    /// Fill the training-time column. Off by default so reruns are byte-identical.
    pub timing: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            sweep: Sweep::default(),
            methods: Method::ALL.to_vec(),
            output_path: None,
            seed: 0,
            timing: false,
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Scenario with the sweep parameter set to `value`.
    pub fn scenario_at(&self, value: f64) -> Result<ScenarioConfig> {
        let mut sc = self.scenario.clone();
        let as_count = |v: f64| -> Result<usize> {
            if v.is_finite() && v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(invalid(format!(
                    "sweep value {v} is not a positive integer"
                )))
            }
        };
        match self.sweep.param {
            SweepParam::GammaDb => {
                if !value.is_finite() {
                    return Err(invalid(format!("sweep value {value} is not finite")));
                }
                sc.gamma_bar_db = value;
            }
            SweepParam::N => sc.n = as_count(value)?,
            SweepParam::M => sc.m = as_count(value)?,
        }
        Ok(sc)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(invalid("no methods selected"));
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return Err(invalid("duplicate methods"));
        }
        if self.sweep.values.is_empty() {
            return Err(invalid("sweep has no values"));
        }
        for &v in &self.sweep.values {
            self.scenario_at(v)?.validate()?;
        }
        Ok(())
    }
}

/// Aggregate of one method at one sweep value.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub sweep_param: SweepParam,
    pub sweep_value: f64,
    pub method: Method,
    pub mean_rmse_db: Option<f64>,
    pub std_rmse_db: Option<f64>,
    pub mean_train_time_s: Option<f64>,
    pub uplink_cost: u64,
    /// Trials that produced an RMSE.
    pub trials: usize,
    pub failed: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn row(&self, value: f64, method: Method) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.sweep_value == value && r.method == method)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{SWEEP_SCHEMA}").map_err(|e| Error::Config(e.to_string()))?;
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Csv {
            path: PathBuf::from("<sweep>"),
            source: e,
        };
        w.write_record([
            "sweep_param",
            "sweep_value",
            "method",
            "mean_rmse_db",
            "std_rmse_db",
            "mean_train_time_s",
            "uplink_cost",
            "trials",
            "failed",
            "seed",
        ])
        .map_err(csv_err)?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.sweep_param.name().to_string(),
                format!("{}", r.sweep_value),
                r.method.name().to_string(),
                opt(r.mean_rmse_db),
                opt(r.std_rmse_db),
                r.mean_train_time_s
                    .map(|x| format!("{x:.6e}"))
                    .unwrap_or_default(),
                r.uplink_cost.to_string(),
                r.trials.to_string(),
                r.failed.to_string(),
                r.seed.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

/// Seed of trial `index` in an experiment seeded with `seed`.
pub fn trial_seed(seed: u64, index: usize) -> u64 {
    seed ^ index as u64
}

fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(std))
}

#[derive(Default, Clone)]
struct Accumulator {
    rmse: Vec<f64>,
    time: Vec<f64>,
    failed: usize,
}

/// Runs every (sweep value, trial, method) combination sequentially.
/// `progress` is called after each finished trial with `(done, total)`.
///
/// For a channel-gain sweep the channel-independent methods are trained
/// once per trial and reused at every sweep value.
pub fn run_sweep_with_progress(
    spec: &ExperimentSpec,
    mut progress: impl FnMut(usize, usize),
) -> Result<SweepTable> {
    spec.validate()?;
    let values = &spec.sweep.values;
    let methods = &spec.methods;
    let trials = spec.scenario.trials;
    let mut acc = vec![vec![Accumulator::default(); methods.len()]; values.len()];
    let record = |acc: &mut Accumulator, o: &crate::radiomap::MethodOutcome| match o.rmse_db {
        Some(r) => {
            acc.rmse.push(r);
            acc.time.push(o.train_time_s);
        }
        None => acc.failed += 1,
    };

    let shared_prep = spec.sweep.param == SweepParam::GammaDb;
    let total = if shared_prep {
        trials
    } else {
        trials * values.len()
    };
    let mut done = 0;
    if shared_prep {
        for t in 0..trials {
            let seed = trial_seed(spec.seed, t);
            let mut prepared = PreparedTrial::new(&spec.scenario_at(values[0])?, seed)?;
            for (k, &method) in methods.iter().enumerate() {
                if method.uses_channel() {
                    for (v, &value) in values.iter().enumerate() {
                        prepared.set_gamma_bar_db(value);
                        let o = prepared.run_method(method);
                        record(&mut acc[v][k], &o);
                    }
                } else {
                    let o = prepared.run_method(method);
                    for row in acc.iter_mut() {
                        record(&mut row[k], &o);
                    }
                }
            }
            done += 1;
            progress(done, total);
        }
    } else {
        for (v, &value) in values.iter().enumerate() {
            let sc = spec.scenario_at(value)?;
            for t in 0..trials {
                let prepared = PreparedTrial::new(&sc, trial_seed(spec.seed, t))?;
                for (k, &method) in methods.iter().enumerate() {
                    let o = prepared.run_method(method);
                    record(&mut acc[v][k], &o);
                }
                done += 1;
                progress(done, total);
            }
        }
    }

    let mut rows = Vec::with_capacity(values.len() * methods.len());
    for (v, &value) in values.iter().enumerate() {
        let cost = spec.scenario_at(value)?.cost_model();
        for (k, &method) in methods.iter().enumerate() {
            let a = &acc[v][k];
            let (mean, std) = mean_std(&a.rmse);
            rows.push(SweepRow {
                sweep_param: spec.sweep.param,
                sweep_value: value,
                method,
                mean_rmse_db: mean,
                std_rmse_db: std,
                mean_train_time_s: if spec.timing {
                    mean_std(&a.time).0
                } else {
                    None
                },
                uplink_cost: uplink_cost(method, &cost)?,
                trials: a.rmse.len(),
                failed: a.failed,
                seed: spec.seed,
            });
        }
    }
    Ok(SweepTable { rows })
}

pub fn run_sweep(spec: &ExperimentSpec) -> Result<SweepTable> {
    run_sweep_with_progress(spec, |_, _| {})
}

/// Writes `contents` to `path` only after everything has been produced,
/// so failed runs leave no partial file.
pub fn write_output(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Runs the sweep and writes its CSV to `path`.
pub fn run_sweep_to_file(spec: &ExperimentSpec, path: &Path) -> Result<SweepTable> {
    let table = run_sweep(spec)?;
    write_output(path, &table.to_csv_string()?)?;
    Ok(table)
}

/// Per-iteration likelihood time of full GPR versus the slowest of `m`
/// nodes working in parallel.
#[derive(Clone, Debug, PartialEq)]
pub struct TimingRow {
    pub n: usize,
    pub m: usize,
    pub full_time_s: f64,
    pub node_time_s: f64,
    pub speedup: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimingTable {
    pub rows: Vec<TimingRow>,
}

impl TimingTable {
    pub fn row(&self, n: usize, m: usize) -> Option<&TimingRow> {
        self.rows.iter().find(|r| r.n == n && r.m == m)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{TIMING_SCHEMA}").map_err(|e| Error::Config(e.to_string()))?;
        writeln!(out, "n,m,full_time_s,node_time_s,speedup")
            .map_err(|e| Error::Config(e.to_string()))?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{:.6e},{:.6e},{:.3}",
                r.n, r.m, r.full_time_s, r.node_time_s, r.speedup
            )
            .map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

/// Mean time per likelihood evaluation over one batch of at least 20 ms.
fn time_batch(data: &PreparedData, theta: &Hyperparams) -> f64 {
    const MIN_BATCH: Duration = Duration::from_millis(20);
    let start = Instant::now();
    let mut reps = 0u32;
    while reps < 2 || start.elapsed() < MIN_BATCH {
        std::hint::black_box(
            data.log_marginal_likelihood(std::hint::black_box(theta))
                .ok(),
        );
        reps += 1;
    }
    start.elapsed().as_secs_f64() / reps as f64
}

/// Times one likelihood evaluation for every `(N, M)` pair on synthetic
/// 1-D data. Runs on the calling thread only. Batches of the full and
/// local problems are interleaved and the minimum per problem is kept, so
/// background load affects both sides alike.
pub fn bench_training_time(
    n_values: &[usize],
    m_values: &[usize],
    seed: u64,
) -> Result<TimingTable> {
    const BATCHES: usize = 7;
    if n_values.is_empty() || m_values.is_empty() {
        return Err(invalid("need at least one N and one M"));
    }
    let theta = Hyperparams::new(64.0, 100.0, 1.0)?;
    let mut rows = Vec::new();
    for &n in n_values {
        if let Some(&m) = m_values.iter().find(|&&m| m == 0 || m > n) {
            return Err(invalid(format!("need 1 <= M <= N, got N = {n}, M = {m}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, n as u64));
        let inputs: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.random_range(1.0..1000.0)])
            .collect();
        let outputs: Vec<f64> = (0..n).map(|_| rng.random_range(-90.0..-50.0)).collect();
        let full = LocalDataset::with_sample_mean_prior(inputs, outputs)?;
        let full_prepared = PreparedData::new(&full);
        for &m in m_values {
            let pool = partition_dataset(&full, m, PartitionStrategy::Random, seed)?;
            let local: Vec<PreparedData> = pool.experts().iter().map(PreparedData::new).collect();
            let mut full_time = f64::INFINITY;
            let mut local_time = vec![f64::INFINITY; local.len()];
            for _ in 0..BATCHES {
                full_time = full_time.min(time_batch(&full_prepared, &theta));
                for (t, d) in local_time.iter_mut().zip(&local) {
                    *t = t.min(time_batch(d, &theta));
                }
            }
            let node_time = local_time.into_iter().fold(0.0, f64::max);
            rows.push(TimingRow {
                n,
                m,
                full_time_s: full_time,
                node_time_s: node_time,
                speedup: full_time / node_time,
            });
        }
    }
    Ok(TimingTable { rows })
}

/// Plot data for one trained scenario on a dense grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DemoOutput {
    pub theta: Hyperparams,
    pub grid: Vec<f64>,
    pub truth_dbm: Vec<f64>,
    pub fused_mean: Vec<f64>,
    pub fused_std: Vec<f64>,
    /// `contributions[i][j] = σ_poe²·σ_i⁻²·μ_i` at grid point `j`.
    pub contributions: Vec<Vec<f64>>,
    /// `(l, received power, node)` for every measurement.
    pub measurements: Vec<(f64, f64, usize)>,
}

impl DemoOutput {
    pub fn half_width(&self) -> Vec<f64> {
        self.fused_std.iter().map(|s| 1.96 * s).collect()
    }

    pub fn prediction_csv(&self) -> String {
        let mut s = format!("{DEMO_SCHEMA}\nl,truth_dbm,fused_mean,lower95,upper95");
        for i in 0..self.contributions.len() {
            s.push_str(&format!(",expert_{}", i + 1));
        }
        s.push('\n');
        for j in 0..self.grid.len() {
            let hw = 1.96 * self.fused_std[j];
            s.push_str(&format!(
                "{:.6},{:.6},{:.6},{:.6},{:.6}",
                self.grid[j],
                self.truth_dbm[j],
                self.fused_mean[j],
                self.fused_mean[j] - hw,
                self.fused_mean[j] + hw
            ));
            for c in &self.contributions {
                s.push_str(&format!(",{:.6}", c[j]));
            }
            s.push('\n');
        }
        s
    }

    pub fn measurements_csv(&self) -> String {
        let mut s = format!("{DEMO_SCHEMA}\nl,rx_power_dbm,node\n");
        for (l, p, node) in &self.measurements {
            s.push_str(&format!("{l:.6},{p:.6},{}\n", node + 1));
        }
        s
    }
}

/// Trains over the air with perfect CSI, then evaluates the exact
/// product-of-experts decomposition on `grid_points` locations that extend
/// 10% beyond the measurement span on both sides.
pub fn demo_regression(
    scenario: &ScenarioConfig,
    seed: u64,
    grid_points: usize,
) -> Result<DemoOutput> {
    scenario.validate()?;
    if grid_points < 2 {
        return Err(invalid("demo grid needs at least two points"));
    }
    let (train, _) = sample_locations(scenario, seed)?;
    let [lo, hi] = scenario.measurement_span;
    let margin = 0.1 * (hi - lo);
    let step = (hi - lo + 2.0 * margin) / (grid_points - 1) as f64;
    let grid: Vec<f64> = (0..grid_points)
        .map(|j| lo - margin + j as f64 * step)
        .collect();
    let n_train = train.len();
    let locations: Vec<[f64; 2]> = train
        .into_iter()
        .chain(grid.iter().map(|&l| [l, 0.0]))
        .collect();
    let truth = generate_field_split(&locations, n_train, scenario, derive_seed(seed, 3))?;
    let mut pool = build_node_datasets(
        &truth,
        scenario.m,
        scenario.assignment,
        derive_seed(seed, 4),
    )?;
    let priors = apply_ols_priors(&mut pool, scenario.tx_location)?;

    let mut obj = make_objective(
        &pool,
        TrainingMode::AirCompPerfect,
        &scenario.channel_params(),
        crate::channel::PowerPolicy::perfect(),
        derive_seed(seed, 6),
    )?;
    let theta = multistart_train(&mut obj, &scenario.train_config(derive_seed(seed, 5)))?.theta_opt;

    let x_grid: Vec<Vec<f64>> = grid.iter().map(|&l| vec![l]).collect();
    let priors_at_grid: Vec<Vec<f64>> = priors.iter().map(|p| p.means(&x_grid)).collect();
    let locals = local_predictions(&pool, &theta, &priors_at_grid, &x_grid)?;
    let fused = poe_fuse(&locals)?;
    let contributions = locals
        .iter()
        .map(|loc| {
            loc.weighted_mean()
                .iter()
                .zip(&fused.variance)
                .map(|(w, v)| v * w)
                .collect()
        })
        .collect();

    let mut measurements = Vec::with_capacity(n_train);
    for (i, e) in pool.experts().iter().enumerate() {
        for (x, y) in e.inputs().iter().zip(e.outputs()) {
            measurements.push((x[0], *y, i));
        }
    }
    measurements.sort_by(|a, b| a.0.total_cmp(&b.0));

    Ok(DemoOutput {
        theta,
        grid,
        truth_dbm: truth.test_power().to_vec(),
        fused_std: fused.std_dev(),
        fused_mean: fused.mean,
        contributions,
        measurements,
    })
}
