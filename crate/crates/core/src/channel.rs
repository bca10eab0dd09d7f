//! Simulated analog multiple-access channel and the over-the-air
//! aggregation protocols built on it.
//!
//! Every node `i` sends `x_i` simultaneously and the receiver sees
//! `y = Σ √γ̄_i·h_i·x_i + z` with `h_i ~ CN(0, 1)` and `z ~ CN(0, σ_z²)` per
//! element. Two encoders are provided:
//!
//! * perfect CSI: full channel inversion plus a per-round power-control
//!   scalar chosen by the receiver from the instantaneous gains;
//! * statistical CSI: phase-only compensation with a power-control scalar
//!   fixed once from the average gains, decoded with an unbiasing constant.
//!
//! Real messages ride the real part of one complex symbol each.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gp::PredictionResult;
use crate::poe::LocalPrediction;

/// Fading magnitudes below this are floored inside perfect-CSI power control.
pub const POWER_CONTROL_FADE_FLOOR: f64 = 1e-6;
/// Below this magnitude a node cannot invert (or phase-align to) its channel.
pub const DEEP_FADE_THRESHOLD: f64 = 1e-12;
/// Floor applied to the decoded precision sum before inversion.
pub const PRECISION_SUM_FLOOR: f64 = 1e-12;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Converts dBm to mW.
pub fn dbm_to_mw(dbm: f64) -> f64 {
    db_to_linear(dbm)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FadingModel {
    /// `h ~ CN(0, 1)`.
    #[default]
    Rayleigh,
    /// `h = 1`.
    Awgn,
}

/// `C = E[|h|]`: `√π/2` under Rayleigh fading, 1 without fading.
pub fn unbias_constant(model: FadingModel) -> f64 {
    match model {
        FadingModel::Rayleigh => std::f64::consts::PI.sqrt() / 2.0,
        FadingModel::Awgn => 1.0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CsiMode {
    Perfect,
    Statistical,
}

/// Power-control configuration for the likelihood rounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerPolicy {
    pub mode: CsiMode,
    /// Truncation bounds for statistical mode.
    pub l_min: f64,
    pub l_max: f64,
    pub c_unbias: f64,
}

impl PowerPolicy {
    pub fn perfect() -> Self {
        Self {
            mode: CsiMode::Perfect,
            l_min: f64::NEG_INFINITY,
            l_max: f64::INFINITY,
            c_unbias: 1.0,
        }
    }

    pub fn statistical(l_min: f64, l_max: f64, fading: FadingModel) -> Result<Self> {
        let policy = Self {
            mode: CsiMode::Statistical,
            l_min,
            l_max,
            c_unbias: unbias_constant(fading),
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_unbias > 0.0 && self.c_unbias.is_finite()) {
            return Err(invalid("unbiasing constant must be positive"));
        }
        if self.mode == CsiMode::Statistical
            && !(self.l_min.is_finite() && self.l_max.is_finite() && self.l_min < self.l_max)
        {
            return Err(invalid(format!(
                "truncation bounds need l_min < l_max, got [{}, {}]",
                self.l_min, self.l_max
            )));
        }
        Ok(())
    }

    /// Midpoint `½(l_max + l_min)` subtracted from truncated messages.
    pub fn center(&self) -> f64 {
        0.5 * (self.l_max + self.l_min)
    }
}

/// Fixed channel parameters shared by all rounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Average power gains `γ̄_i`, linear.
    pub gamma_bar: Vec<f64>,
    /// Total complex noise variance per element, mW.
    pub sigma_z2: f64,
    /// Per-vector transmit power budget, mW.
    pub p_max: f64,
    #[serde(default)]
    pub fading: FadingModel,
}

impl ChannelParams {
    /// `m` nodes sharing one average gain, with dB/dBm inputs.
    pub fn uniform_db(m: usize, gamma_bar_db: f64, noise_dbm: f64, p_max_dbm: f64) -> Self {
        Self {
            gamma_bar: vec![db_to_linear(gamma_bar_db); m],
            sigma_z2: dbm_to_mw(noise_dbm),
            p_max: dbm_to_mw(p_max_dbm),
            fading: FadingModel::Rayleigh,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.gamma_bar.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma_bar.is_empty() {
            return Err(invalid("channel needs at least one node"));
        }
        if self
            .gamma_bar
            .iter()
            .any(|g| !(*g >= 0.0) || !g.is_finite())
        {
            return Err(invalid("average gains must be finite and non-negative"));
        }
        if !(self.sigma_z2 >= 0.0 && self.sigma_z2.is_finite()) {
            return Err(invalid("noise floor must be finite and non-negative"));
        }
        if !(self.p_max > 0.0 && self.p_max.is_finite()) {
            return Err(invalid("power budget must be positive"));
        }
        Ok(())
    }
}

/// Channel realization for one round.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelState {
    pub gamma_bar: Vec<f64>,
    pub h: Vec<Complex64>,
    pub sigma_z2: f64,
    pub p_max: f64,
}

impl ChannelState {
    pub fn num_nodes(&self) -> usize {
        self.h.len()
    }
}

fn standard_complex_normal(rng: &mut ChaCha8Rng) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

fn draw_fading(rng: &mut ChaCha8Rng, m: usize, model: FadingModel) -> Vec<Complex64> {
    match model {
        FadingModel::Rayleigh => (0..m).map(|_| standard_complex_normal(rng)).collect(),
        FadingModel::Awgn => vec![Complex64::new(1.0, 0.0); m],
    }
}

/// Draws `h_i ~ CN(0, 1)` i.i.d. for `m` nodes.
pub fn sample_channel(
    m: usize,
    gamma_bar: &[f64],
    sigma_z2: f64,
    p_max: f64,
    seed: u64,
) -> Result<ChannelState> {
    if m == 0 {
        return Err(invalid("channel needs at least one node"));
    }
    if gamma_bar.len() != m {
        return Err(invalid(format!(
            "{m} nodes but {} average gains",
            gamma_bar.len()
        )));
    }
    let params = ChannelParams {
        gamma_bar: gamma_bar.to_vec(),
        sigma_z2,
        p_max,
        fading: FadingModel::Rayleigh,
    };
    params.validate()?;
    Ok(AirCompChannel::new(params, seed)?.draw_state())
}

/// Outcome of one perfect-CSI power-control computation.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerControl {
    pub rho: f64,
    /// Node whose constraint binds.
    pub binding_node: usize,
    /// Nodes whose `|h|` was floored at [`POWER_CONTROL_FADE_FLOOR`].
    pub deep_fade_nodes: Vec<usize>,
    /// Nodes with an all-zero message, excluded from the minimum.
    pub zero_norm_nodes: Vec<usize>,
}

/// `√ρ = min_i √γ̄_i·|h_i|·√P_max / ‖s_i‖`.
pub fn power_control_perfect(
    channel: &ChannelState,
    message_norms: &[f64],
) -> Result<PowerControl> {
    let m = channel.num_nodes();
    if message_norms.len() != m {
        return Err(invalid(format!(
            "{m} nodes but {} message norms",
            message_norms.len()
        )));
    }
    if message_norms.iter().any(|n| !(*n >= 0.0) || !n.is_finite()) {
        return Err(invalid("message norms must be finite and non-negative"));
    }
    let zero_norm_nodes: Vec<usize> = (0..m).filter(|&i| message_norms[i] == 0.0).collect();
    let all_zero = zero_norm_nodes.len() == m;
    let mut deep_fade_nodes = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    for (i, &raw_norm) in message_norms.iter().enumerate() {
        let norm = if all_zero {
            f64::EPSILON
        } else if raw_norm == 0.0 {
            continue;
        } else {
            raw_norm
        };
        let mut mag = channel.h[i].norm();
        if mag < POWER_CONTROL_FADE_FLOOR {
            mag = POWER_CONTROL_FADE_FLOOR;
            deep_fade_nodes.push(i);
        }
        let sqrt_rho = channel.gamma_bar[i].sqrt() * mag * channel.p_max.sqrt() / norm;
        if best.is_none_or(|(_, b)| sqrt_rho < b) {
            best = Some((i, sqrt_rho));
        }
    }
    let (binding_node, sqrt_rho) = best.expect("at least one node participates");
    Ok(PowerControl {
        rho: sqrt_rho * sqrt_rho,
        binding_node,
        deep_fade_nodes,
        zero_norm_nodes,
    })
}

/// Full channel inversion `x_i = √ρ / (√γ̄_i·h_i) · s_i`.
pub fn encode_perfect(
    s: &[f64],
    rho: f64,
    gamma_bar_i: f64,
    h_i: Complex64,
) -> Result<Vec<Complex64>> {
    if h_i.norm() < DEEP_FADE_THRESHOLD || gamma_bar_i <= 0.0 {
        return Err(Error::DeepFade {
            node: 0,
            magnitude: h_i.norm() * gamma_bar_i.max(0.0).sqrt(),
        });
    }
    let gain = rho.sqrt() / (gamma_bar_i.sqrt() * h_i);
    Ok(s.iter().map(|&v| gain * v).collect())
}

/// Phase-only compensation `x_i = √ρ·h̄_i / (√γ̄_i·|h_i|) · s_i`.
pub fn encode_statistical(s: &[f64], rho: f64, gamma_bar_i: f64, h_i: Complex64) -> Vec<Complex64> {
    let mag = h_i.norm();
    let phase = if mag < DEEP_FADE_THRESHOLD {
        Complex64::new(1.0, 0.0)
    } else {
        h_i.conj() / mag
    };
    let gain = rho.sqrt() / gamma_bar_i.sqrt() * phase;
    s.iter().map(|&v| gain * v).collect()
}

fn superpose(
    encoded: &[Vec<Complex64>],
    channel: &ChannelState,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Complex64>> {
    if encoded.len() != channel.num_nodes() {
        return Err(invalid(format!(
            "{} encoded vectors for {} nodes",
            encoded.len(),
            channel.num_nodes()
        )));
    }
    let len = encoded.first().map_or(0, Vec::len);
    if encoded.iter().any(|x| x.len() != len) {
        return Err(invalid("encoded vectors differ in length"));
    }
    let mut y = vec![Complex64::new(0.0, 0.0); len];
    for (i, x) in encoded.iter().enumerate() {
        let g = channel.gamma_bar[i].sqrt() * channel.h[i];
        for (acc, v) in y.iter_mut().zip(x) {
            *acc += g * v;
        }
    }
    let std = channel.sigma_z2.sqrt();
    for acc in y.iter_mut() {
        *acc += std * standard_complex_normal(rng);
    }
    Ok(y)
}

/// `y = Σ √γ̄_i·h_i·x_i + z`, with the noise drawn from `seed`.
pub fn aircomp_round(
    encoded: &[Vec<Complex64>],
    channel: &ChannelState,
    seed: u64,
) -> Result<Vec<Complex64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    superpose(encoded, channel, &mut rng)
}

/// `Re(y / √ρ)`.
pub fn decode_perfect(y: &[Complex64], rho: f64) -> Result<Vec<f64>> {
    if !(rho > 0.0) {
        return Err(invalid(format!(
            "power-control scalar must be positive, got {rho}"
        )));
    }
    let s = rho.sqrt();
    Ok(y.iter().map(|v| v.re / s).collect())
}

/// `Re(y / (C·√ρ))`.
pub fn decode_statistical(y: &[Complex64], rho: f64, c_unbias: f64) -> Result<Vec<f64>> {
    if !(rho > 0.0) || !(c_unbias > 0.0) {
        return Err(invalid(format!(
            "decode needs rho > 0 and C > 0, got rho = {rho}, C = {c_unbias}"
        )));
    }
    let s = c_unbias * rho.sqrt();
    Ok(y.iter().map(|v| v.re / s).collect())
}

/// `clamp(L, l_min, l_max) − ½(l_max + l_min)`.
pub fn truncate_center(l: f64, l_min: f64, l_max: f64) -> f64 {
    debug_assert!(l_min < l_max);
    l.clamp(l_min, l_max) - 0.5 * (l_max + l_min)
}

/// `√ρ = min_i √γ̄_i·√P_max / |½(l_max + l_min)|`, computed once per training run.
pub fn power_control_statistical(
    gamma_bar: &[f64],
    p_max: f64,
    l_min: f64,
    l_max: f64,
) -> Result<f64> {
    if gamma_bar.is_empty() {
        return Err(invalid("no nodes"));
    }
    if gamma_bar.iter().any(|g| !(*g > 0.0)) {
        return Err(invalid(
            "statistical power control needs positive average gains",
        ));
    }
    if !(l_min < l_max) {
        return Err(invalid("truncation bounds need l_min < l_max"));
    }
    let half_sum = (0.5 * (l_max + l_min)).abs();
    if half_sum == 0.0 {
        return Err(invalid(
            "l_max + l_min = 0 leaves the power-control denominator at zero",
        ));
    }
    let min_gain = gamma_bar.iter().copied().fold(f64::INFINITY, f64::min);
    let sqrt_rho = min_gain.sqrt() * p_max.sqrt() / half_sum;
    Ok(sqrt_rho * sqrt_rho)
}

/// Per-round diagnostics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RoundRecord {
    pub rho: f64,
    pub deep_fade_nodes: Vec<usize>,
    pub zero_norm_nodes: Vec<usize>,
    /// `‖x_i‖²` per node.
    pub tx_power: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundOutcome {
    pub decoded: Vec<f64>,
    pub record: RoundRecord,
}

fn tx_power(x: &[Complex64]) -> f64 {
    x.iter().map(Complex64::norm_sqr).sum()
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// A seeded channel that hands out a fresh fading and noise realization on
/// every round. Rounds draw fading for nodes `0..M` and then noise, in order.
#[derive(Clone, Debug)]
pub struct AirCompChannel {
    params: ChannelParams,
    rng: ChaCha8Rng,
}

impl AirCompChannel {
    pub fn new(params: ChannelParams, seed: u64) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn params(&self) -> &ChannelParams {
        &self.params
    }

    pub fn draw_state(&mut self) -> ChannelState {
        ChannelState {
            gamma_bar: self.params.gamma_bar.clone(),
            h: draw_fading(&mut self.rng, self.params.num_nodes(), self.params.fading),
            sigma_z2: self.params.sigma_z2,
            p_max: self.params.p_max,
        }
    }

    pub fn transmit(
        &mut self,
        encoded: &[Vec<Complex64>],
        state: &ChannelState,
    ) -> Result<Vec<Complex64>> {
        superpose(encoded, state, &mut self.rng)
    }

    /// One perfect-CSI round: fresh fading, power control from the message
    /// norms, channel inversion, superposition and decoding of `Σ s_i`.
    pub fn perfect_sum(&mut self, messages: &[Vec<f64>]) -> Result<RoundOutcome> {
        let state = self.draw_state();
        let norms: Vec<f64> = messages.iter().map(|s| l2(s)).collect();
        let pc = power_control_perfect(&state, &norms)?;
        let encoded = messages
            .iter()
            .enumerate()
            .map(|(i, s)| {
                encode_perfect(s, pc.rho, state.gamma_bar[i], state.h[i]).map_err(|e| match e {
                    Error::DeepFade { magnitude, .. } => Error::DeepFade { node: i, magnitude },
                    other => other,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let y = self.transmit(&encoded, &state)?;
        Ok(RoundOutcome {
            decoded: decode_perfect(&y, pc.rho)?,
            record: RoundRecord {
                rho: pc.rho,
                deep_fade_nodes: pc.deep_fade_nodes,
                zero_norm_nodes: pc.zero_norm_nodes,
                tx_power: encoded.iter().map(|x| tx_power(x)).collect(),
            },
        })
    }

    /// One statistical-CSI round with a fixed `rho`. Messages are sent as
    /// given; truncation and centering are the caller's job.
    pub fn statistical_sum(
        &mut self,
        messages: &[Vec<f64>],
        rho: f64,
        c_unbias: f64,
    ) -> Result<RoundOutcome> {
        let state = self.draw_state();
        let mut deep_fade_nodes = Vec::new();
        let encoded: Vec<Vec<Complex64>> = messages
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if state.h[i].norm() < DEEP_FADE_THRESHOLD {
                    deep_fade_nodes.push(i);
                }
                encode_statistical(s, rho, state.gamma_bar[i], state.h[i])
            })
            .collect();
        let y = self.transmit(&encoded, &state)?;
        Ok(RoundOutcome {
            decoded: decode_statistical(&y, rho, c_unbias)?,
            record: RoundRecord {
                rho,
                deep_fade_nodes,
                zero_norm_nodes: Vec::new(),
                tx_power: encoded.iter().map(|x| tx_power(x)).collect(),
            },
        })
    }

    /// Fused prediction over the air: one perfect-CSI round carrying
    /// `σ_i⁻²` and a second carrying `σ_i⁻²·μ_i`, then product-of-experts
    /// reconstruction at the receiver.
    pub fn predict_round(
        &mut self,
        locals: &[LocalPrediction],
    ) -> Result<(PredictionResult, [RoundRecord; 2])> {
        let Some(first) = locals.first() else {
            return Err(invalid("no local predictions to aggregate"));
        };
        if locals.len() != self.params.num_nodes() {
            return Err(invalid(format!(
                "{} local predictions for {} nodes",
                locals.len(),
                self.params.num_nodes()
            )));
        }
        if locals.iter().any(|l| l.len() != first.len()) {
            return Err(invalid("local predictions differ in length"));
        }
        let precisions: Vec<Vec<f64>> = locals.iter().map(LocalPrediction::precision).collect();
        let weighted: Vec<Vec<f64>> = locals.iter().map(LocalPrediction::weighted_mean).collect();
        let r0 = self.perfect_sum(&precisions)?;
        let r1 = self.perfect_sum(&weighted)?;
        let mut mean = Vec::with_capacity(first.len());
        let mut variance = Vec::with_capacity(first.len());
        for (p, w) in r0.decoded.iter().zip(&r1.decoded) {
            let v = p.max(PRECISION_SUM_FLOOR).recip();
            variance.push(v);
            mean.push(v * w);
        }
        Ok((PredictionResult { mean, variance }, [r0.record, r1.record]))
    }
}

/// Seeded one-shot form of [`AirCompChannel::predict_round`].
pub fn aircomp_predict_round(
    locals: &[LocalPrediction],
    params: &ChannelParams,
    seed: u64,
) -> Result<(PredictionResult, [RoundRecord; 2])> {
    AirCompChannel::new(params.clone(), seed)?.predict_round(locals)
}
