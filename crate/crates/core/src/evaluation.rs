//! Monte Carlo symbol error rates, genie-aided Top-k evaluation and noise-free
//! constellation export.

use std::path::Path;

use ndarray::Array1;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{ci_slp_precode, psk_phase_detect, zf_precode, CiSlpOptions};
use crate::channel::{snr_to_noise_var, ChannelRealization};
use crate::config::EvalConfig;
use crate::error::{Error, Result};
use crate::modulation::{alphabet_size, modulate, random_messages, ComboTable};
use crate::mop::{topk, MopNet};
use crate::nn::Scalar;
use crate::rng::{self, SimRng};
use crate::slpd::{decide, SlpdNet};
use crate::C64;

/// A precoder/detector pair evaluated on batches of slots sharing one channel.
pub trait LinkSystem: Sync {
    fn name(&self) -> &str;

    /// Transmit signals for each slot's symbol vector.
    fn precode(&self, channel: &ChannelRealization, symbols: &[Vec<C64>], orders: &[u32]) -> Result<Vec<Array1<C64>>>;

    /// Decided 1-indexed messages per slot and user.
    fn detect(
        &self,
        channel: &ChannelRealization,
        received: &[Vec<C64>],
        orders: &[u32],
        rng: &mut SimRng,
    ) -> Result<Vec<Vec<u32>>>;
}

fn phase_detect_all(received: &[Vec<C64>], orders: &[u32]) -> Vec<Vec<u32>> {
    received.iter().map(|r| r.iter().zip(orders).map(|(&r, &m)| psk_phase_detect(r, m)).collect()).collect()
}

/// Zero-forcing precoding with the PSK phase detector.
pub struct ZeroForcing {
    pub power: f64,
}

impl LinkSystem for ZeroForcing {
    fn name(&self) -> &str {
        "zf"
    }

    fn precode(&self, channel: &ChannelRealization, symbols: &[Vec<C64>], _orders: &[u32]) -> Result<Vec<Array1<C64>>> {
        symbols.iter().map(|s| Ok(zf_precode(channel, s, self.power)?.0.x)).collect()
    }

    fn detect(&self, _: &ChannelRealization, r: &[Vec<C64>], orders: &[u32], _: &mut SimRng) -> Result<Vec<Vec<u32>>> {
        Ok(phase_detect_all(r, orders))
    }
}

/// Constructive-interference precoding with the PSK phase detector.
pub struct ConstructiveInterference {
    pub power: f64,
    pub options: CiSlpOptions,
}

impl LinkSystem for ConstructiveInterference {
    fn name(&self) -> &str {
        "ci-slp"
    }

    fn precode(&self, channel: &ChannelRealization, symbols: &[Vec<C64>], orders: &[u32]) -> Result<Vec<Array1<C64>>> {
        symbols.iter().map(|s| Ok(ci_slp_precode(channel, s, orders, self.power, self.options)?.signal.x)).collect()
    }

    fn detect(&self, _: &ChannelRealization, r: &[Vec<C64>], orders: &[u32], _: &mut SimRng) -> Result<Vec<Vec<u32>>> {
        Ok(phase_detect_all(r, orders))
    }
}

/// Learned transmitter and decoder.
pub struct Learned<'a, T> {
    pub net: &'a SlpdNet<T>,
    pub power: f64,
    pub label: &'a str,
}

impl<T: Scalar> LinkSystem for Learned<'_, T> {
    fn name(&self) -> &str {
        self.label
    }

    fn precode(&self, channel: &ChannelRealization, symbols: &[Vec<C64>], orders: &[u32]) -> Result<Vec<Array1<C64>>> {
        if let Some(&m) = orders.iter().find(|&&m| m > self.net.max_order()) {
            return Err(Error::OrderTooHigh { order: m, max: self.net.max_order() });
        }
        let channels = vec![channel; symbols.len()];
        self.net.precode_batch(&channels, symbols, self.power)
    }

    fn detect(
        &self,
        channel: &ChannelRealization,
        r: &[Vec<C64>],
        orders: &[u32],
        _: &mut SimRng,
    ) -> Result<Vec<Vec<u32>>> {
        let k = orders.len();
        let rows: Vec<_> =
            r.iter().flat_map(|slot| (0..k).map(move |u| (channel.user(u), slot[u], orders[u]))).collect();
        let probs = self.net.decode_probs(&rows)?;
        Ok((0..r.len())
            .map(|i| {
                (0..k).map(|u| decide(probs.row(i * k + u).as_slice().expect("standard layout"), orders[u])).collect()
            })
            .collect())
    }
}

/// Keeps the inner precoder but replaces detection by uniform guessing.
pub struct RandomGuess<S>(pub S);

impl<S: LinkSystem> LinkSystem for RandomGuess<S> {
    fn name(&self) -> &str {
        "random-guess"
    }

    fn precode(&self, channel: &ChannelRealization, symbols: &[Vec<C64>], orders: &[u32]) -> Result<Vec<Array1<C64>>> {
        self.0.precode(channel, symbols, orders)
    }

    fn detect(
        &self,
        _: &ChannelRealization,
        r: &[Vec<C64>],
        orders: &[u32],
        rng: &mut SimRng,
    ) -> Result<Vec<Vec<u32>>> {
        Ok(r.iter().map(|_| orders.iter().map(|&m| rng.random_range(1..=alphabet_size(m))).collect()).collect())
    }
}

/// Modulation orders used on each channel.
#[derive(Debug, Clone, PartialEq)]
pub enum OrderPlan {
    Fixed(Vec<u32>),
    PerChannel(Vec<Vec<u32>>),
}

impl OrderPlan {
    fn get(&self, c: usize) -> &[u32] {
        match self {
            OrderPlan::Fixed(o) => o,
            OrderPlan::PerChannel(v) => &v[c],
        }
    }
}

fn combo_key(orders: &[u32]) -> u64 {
    orders.iter().fold(0u64, |acc, &m| acc.wrapping_mul(16).wrapping_add(u64::from(m)))
}

/// Simulates `slots` symbol slots on one channel; returns errors per user.
/// The seed stream depends only on `(seed, channel index, orders)`.
pub fn simulate_channel(
    system: &dyn LinkSystem,
    channel: &ChannelRealization,
    orders: &[u32],
    noise_var: f64,
    slots: usize,
    seed: u64,
) -> Result<Vec<u64>> {
    let k = channel.num_users();
    if orders.len() != k {
        return Err(Error::Dimension(format!("{} orders for {k} users", orders.len())));
    }
    let mut r = rng::seeded(seed);
    let messages: Vec<Vec<u32>> = (0..slots).map(|_| random_messages(&mut r, orders)).collect();
    let symbols = messages.iter().map(|m| modulate(m, orders)).collect::<Result<Vec<_>>>()?;
    let x = system.precode(channel, &symbols, orders)?;
    let received = x
        .iter()
        .map(|x| {
            let mut rx = channel.receive(x.view())?.to_vec();
            if noise_var > 0.0 {
                for v in &mut rx {
                    *v += rng::complex_normal(&mut r, noise_var);
                }
            }
            Ok(rx)
        })
        .collect::<Result<Vec<_>>>()?;
    let decided = system.detect(channel, &received, orders, &mut r)?;
    let mut errors = vec![0u64; k];
    for (m, d) in messages.iter().zip(&decided) {
        for u in 0..k {
            errors[u] += u64::from(m[u] != d[u]);
        }
    }
    Ok(errors)
}

/// Two-sided 95% Wilson score interval for `errors` out of `trials`.
pub fn wilson_interval(errors: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let n = trials as f64;
    let p = errors as f64 / n;
    let denom = 1.0 + z * z / n;
    let center = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    let lo = if errors == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if errors == trials { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

/// Error counts at one SNR point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerPoint {
    pub snr_db: f64,
    /// Symbol slots simulated; each slot carries one symbol per user.
    pub trials: u64,
    pub errors: Vec<u64>,
}

impl SerPoint {
    pub fn ser(&self, user: usize) -> f64 {
        self.errors[user] as f64 / self.trials as f64
    }

    pub fn average(&self) -> f64 {
        self.errors.iter().sum::<u64>() as f64 / (self.trials * self.errors.len() as u64) as f64
    }

    pub fn interval(&self, user: usize) -> (f64, f64) {
        wilson_interval(self.errors[user], self.trials)
    }

    pub fn average_interval(&self) -> (f64, f64) {
        wilson_interval(self.errors.iter().sum(), self.trials * self.errors.len() as u64)
    }

    /// Adds another point's counts (same SNR).
    pub fn merge(&mut self, other: &SerPoint) {
        self.trials += other.trials;
        for (a, b) in self.errors.iter_mut().zip(&other.errors) {
            *a += b;
        }
    }
}

/// Trial budget of an adaptive run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialPolicy {
    pub min_trials: u64,
    pub target_errors: u64,
    pub max_trials: u64,
    pub slots_per_channel: usize,
}

impl From<&EvalConfig> for TrialPolicy {
    fn from(e: &EvalConfig) -> Self {
        TrialPolicy {
            min_trials: e.min_trials,
            target_errors: e.target_errors,
            max_trials: e.max_trials,
            slots_per_channel: e.slots_per_channel,
        }
    }
}

/// Noise variance at `snr_db`; infinite SNR means no noise.
pub fn eval_noise_var(snr_db: f64, power: f64) -> f64 {
    if snr_db == f64::INFINITY {
        0.0
    } else {
        snr_to_noise_var(snr_db, power)
    }
}

/// Adaptive Monte Carlo SER. Each round visits every channel once with
/// `slots_per_channel` slots; rounds continue until at least `min_trials`
/// slots were simulated and either `target_errors` symbol errors were seen
/// or `max_trials` was reached.
pub fn monte_carlo_ser(
    system: &dyn LinkSystem,
    channels: &[ChannelRealization],
    plan: &OrderPlan,
    snr_db: f64,
    power: f64,
    policy: TrialPolicy,
    seed: u64,
) -> Result<SerPoint> {
    if channels.is_empty() || policy.slots_per_channel == 0 || policy.min_trials == 0 {
        return Err(Error::InvalidConfig("need channels and at least one trial".into()));
    }
    if let OrderPlan::PerChannel(v) = plan {
        if v.len() != channels.len() {
            return Err(Error::Dimension(format!("{} order vectors for {} channels", v.len(), channels.len())));
        }
    }
    let noise_var = eval_noise_var(snr_db, power);
    let k = channels[0].num_users();
    let mut point = SerPoint { snr_db, trials: 0, errors: vec![0; k] };
    let mut round = 0u64;
    loop {
        let round_seed = rng::derive(seed, round);
        let counts: Vec<Vec<u64>> = channels
            .par_iter()
            .enumerate()
            .map(|(c, h)| {
                let orders = plan.get(c);
                let s = rng::derive2(round_seed, c as u64, combo_key(orders));
                simulate_channel(system, h, orders, noise_var, policy.slots_per_channel, s)
            })
            .collect::<Result<_>>()?;
        for e in &counts {
            point.merge(&SerPoint { snr_db, trials: 0, errors: e.clone() });
        }
        point.trials += (channels.len() * policy.slots_per_channel) as u64;
        round += 1;
        let total: u64 = point.errors.iter().sum();
        if point.trials >= policy.min_trials && (total >= policy.target_errors || point.trials >= policy.max_trials) {
            return Ok(point);
        }
    }
}

/// SER over an SNR grid.
pub fn ser_curve(
    system: &dyn LinkSystem,
    channels: &[ChannelRealization],
    plan: &OrderPlan,
    grid: &[f64],
    power: f64,
    policy: TrialPolicy,
    seed: u64,
) -> Result<Vec<SerPoint>> {
    grid.iter().map(|&snr| monte_carlo_ser(system, channels, plan, snr, power, policy, seed)).collect()
}

/// True when average SER never rises from one grid point to the next by
/// more than the two 95% intervals allow.
pub fn is_monotone(points: &[SerPoint]) -> bool {
    points.windows(2).all(|w| {
        let (_, hi_prev) = w[0].average_interval();
        let (lo_next, _) = w[1].average_interval();
        w[1].average() <= w[0].average() || lo_next <= hi_prev
    })
}

/// Genie-aided Top-k results for `k = 1..=max_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopkReport {
    pub snr_db: f64,
    /// Average SER taking, per channel, the best of the first `k` predictions.
    pub ser: Vec<f64>,
    /// Slots simulated per channel and candidate.
    pub slots_per_channel: usize,
    pub channels: usize,
    /// Fraction of channels whose label is among the first `k` predictions.
    pub accuracy: Option<Vec<f64>>,
}

/// Evaluates the top `max_k` classifier predictions per channel on the
/// learned link, keeping the lowest measured SER among the first `k`
/// (genie-aided best-of-k). Candidate `j` on channel `c` uses the same seed
/// stream as a single-round [`monte_carlo_ser`] with that combination.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_topk<T: Scalar>(
    mop: &MopNet<T>,
    slpd: &SlpdNet<T>,
    table: &ComboTable,
    channels: &[ChannelRealization],
    labels: Option<&[usize]>,
    max_k: usize,
    snr_db: f64,
    power: f64,
    slots_per_channel: usize,
    seed: u64,
) -> Result<TopkReport> {
    if max_k == 0 || max_k > table.len() {
        return Err(Error::InvalidConfig(format!("top-k must lie in 1..={}, got {max_k}", table.len())));
    }
    if mop.num_classes() != table.len() {
        return Err(Error::Incompatible("classifier label space differs from the combination table".into()));
    }
    if channels.is_empty() || slots_per_channel == 0 {
        return Err(Error::InvalidConfig("need channels and at least one slot".into()));
    }
    let system = Learned { net: slpd, power, label: "ampd" };
    let noise_var = eval_noise_var(snr_db, power);
    let round_seed = rng::derive(seed, 0);
    let refs: Vec<&ChannelRealization> = channels.iter().collect();
    let mut predictions = Vec::with_capacity(channels.len());
    for chunk in refs.chunks(1000) {
        let probs = mop.probs(chunk)?;
        for row in probs.rows() {
            predictions.push(topk(row.as_slice().expect("standard layout"), max_k));
        }
    }
    let per_channel: Vec<Vec<f64>> = channels
        .par_iter()
        .zip(&predictions)
        .enumerate()
        .map(|(c, (h, pred))| {
            pred.iter()
                .map(|&j| {
                    let orders = &table.get(j).expect("predicted index in table").orders;
                    let s = rng::derive2(round_seed, c as u64, combo_key(orders));
                    let e = simulate_channel(&system, h, orders, noise_var, slots_per_channel, s)?;
                    Ok(e.iter().sum::<u64>() as f64 / (slots_per_channel * e.len()) as f64)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let ser = (1..=max_k)
        .map(|k| {
            per_channel.iter().map(|s| s[..k].iter().copied().fold(f64::INFINITY, f64::min)).sum::<f64>()
                / channels.len() as f64
        })
        .collect();
    let accuracy = match labels {
        Some(l) if l.len() == channels.len() => Some(
            (1..=max_k)
                .map(|k| predictions.iter().zip(l).filter(|(p, l)| p[..k].contains(l)).count() as f64 / l.len() as f64)
                .collect(),
        ),
        Some(l) => {
            return Err(Error::Dimension(format!("{} labels for {} channels", l.len(), channels.len())));
        }
        None => None,
    };
    Ok(TopkReport { snr_db, ser, slots_per_channel, channels: channels.len(), accuracy })
}

/// Top-1 predicted orders per channel.
pub fn predicted_plan<T: Scalar>(
    mop: &MopNet<T>,
    table: &ComboTable,
    channels: &[ChannelRealization],
) -> Result<OrderPlan> {
    let refs: Vec<&ChannelRealization> = channels.iter().collect();
    let mut plan = Vec::with_capacity(channels.len());
    for chunk in refs.chunks(1000) {
        let probs = mop.probs(chunk)?;
        for row in probs.rows() {
            let j = topk(row.as_slice().expect("standard layout"), 1)[0];
            plan.push(table.get(j).expect("index in table").orders.clone());
        }
    }
    Ok(OrderPlan::PerChannel(plan))
}

/// One noise-free received sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstellationSample {
    /// 1-indexed user.
    pub user: usize,
    pub re: f64,
    pub im: f64,
    pub message: u32,
    pub order: u32,
}

/// Noise-free `h_k^H x` for `num_symbols` random message vectors.
pub fn export_constellation(
    system: &dyn LinkSystem,
    channel: &ChannelRealization,
    orders: &[u32],
    num_symbols: usize,
    seed: u64,
) -> Result<Vec<ConstellationSample>> {
    if num_symbols == 0 {
        return Err(Error::InvalidConfig("num_symbols must be positive".into()));
    }
    let mut r = rng::seeded(seed);
    let messages: Vec<Vec<u32>> = (0..num_symbols).map(|_| random_messages(&mut r, orders)).collect();
    let symbols = messages.iter().map(|m| modulate(m, orders)).collect::<Result<Vec<_>>>()?;
    let x = system.precode(channel, &symbols, orders)?;
    let mut out = Vec::with_capacity(num_symbols * orders.len());
    for u in 0..orders.len() {
        for (x, m) in x.iter().zip(&messages) {
            let rx = channel.receive(x.view())?;
            out.push(ConstellationSample { user: u + 1, re: rx[u].re, im: rx[u].im, message: m[u], order: orders[u] });
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct CurveRow {
    snr_db: f64,
    user: String,
    ser: f64,
    ci_low: f64,
    ci_high: f64,
    trials: u64,
}

/// Writes `snr_db,user,ser,ci_low,ci_high,trials`, one row per user and an
/// `avg` row per SNR point.
pub fn write_ser_curve(path: &Path, points: &[SerPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in points {
        for u in 0..p.errors.len() {
            let (ci_low, ci_high) = p.interval(u);
            w.serialize(CurveRow {
                snr_db: p.snr_db,
                user: (u + 1).to_string(),
                ser: p.ser(u),
                ci_low,
                ci_high,
                trials: p.trials,
            })?;
        }
        let (ci_low, ci_high) = p.average_interval();
        w.serialize(CurveRow {
            snr_db: p.snr_db,
            user: "avg".into(),
            ser: p.average(),
            ci_low,
            ci_high,
            trials: p.trials,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `k,snr_db,ser,accuracy,channels,slots_per_channel`.
pub fn write_accuracy(path: &Path, report: &TopkReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["k", "snr_db", "ser", "accuracy", "channels", "slots_per_channel"])?;
    for (i, ser) in report.ser.iter().enumerate() {
        let acc = report.accuracy.as_ref().map(|a| a[i].to_string()).unwrap_or_default();
        w.write_record([
            (i + 1).to_string(),
            report.snr_db.to_string(),
            ser.to_string(),
            acc,
            report.channels.to_string(),
            report.slots_per_channel.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `user,re,im,message,order`.
pub fn write_constellation(path: &Path, samples: &[ConstellationSample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in samples {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}
