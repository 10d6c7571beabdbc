//! Server bandwidth controllers: one observation per epoch in, one allocation out.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cheatsheet::{CheatSheet, SwarmCurve};
use crate::error::{Error, Result};
use crate::fit::{ConcavePiecewiseLinear, ResponseCurve};
use crate::solver::{
    gradient_ascent_allocate, min_avg_time_allocate, min_cost_allocate, target_raising_allocate,
    Objective, SwarmModel,
};
use crate::workload::Workload;

/// What the controller sees of one swarm at an epoch boundary.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SwarmObservation {
    /// KBps per active peer over the last epoch.
    pub avg_download_rate: Option<f64>,
    /// Seconds, over the sliding metric window.
    pub avg_download_time_window: Option<f64>,
    pub population: usize,
    pub arrivals_this_epoch: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Zero for the initial decision, before any epoch has run.
    pub epoch_index: usize,
    pub time: f64,
    pub swarms: Vec<SwarmObservation>,
}

impl Observation {
    pub fn initial(k: usize) -> Self {
        Observation { epoch_index: 0, time: 0.0, swarms: vec![SwarmObservation::default(); k] }
    }

    pub fn rates(&self) -> Vec<Option<f64>> {
        self.swarms.iter().map(|s| s.avg_download_rate).collect()
    }
}

/// Per-swarm server bandwidth, KBps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Allocation(pub Vec<f64>);

impl Allocation {
    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Non-negative everywhere and, with a budget, `Σx <= X + 1e-6`.
    pub fn is_valid(&self, budget: Option<f64>) -> bool {
        self.0.iter().all(|x| x.is_finite() && *x >= 0.0)
            && budget.is_none_or(|b| self.total() <= b + 1e-6)
    }
}

/// Which arrival rates model-based controllers weigh swarms by.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateSource {
    /// Windowed estimates from observed arrivals, used once stable.
    #[default]
    Estimated,
    /// The workload's configured rates, from the first epoch.
    Configured,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    /// Seconds.
    pub epoch_length: f64,
    /// AIAD and Leveler adjustment, KBps.
    pub delta: f64,
    /// AntFarm chunk and perturbation size, KBps.
    pub antfarm_delta: f64,
    pub min_bandwidth: f64,
    pub antfarm_init: f64,
    /// Samples kept per swarm by AntFarm.
    pub antfarm_history: usize,
    /// Relative change below which consecutive arrival-rate windows count as stable.
    pub stability_threshold: f64,
    /// Epochs per arrival-rate window.
    pub stability_window: usize,
    /// Bandwidth granted per gradient step, KBps.
    pub step: f64,
    /// Target-rate increment for the minimax search, KBps.
    pub rate_step: f64,
    pub rate_source: RateSource,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            epoch_length: 200.0,
            delta: 10.0,
            antfarm_delta: 5.0,
            min_bandwidth: 5.0,
            antfarm_init: 5.0,
            antfarm_history: 12,
            stability_threshold: 0.10,
            stability_window: 10,
            step: 5.0,
            rate_step: 1.0,
            rate_source: RateSource::Estimated,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epoch_length", self.epoch_length),
            ("delta", self.delta),
            ("antfarm_delta", self.antfarm_delta),
            ("step", self.step),
            ("rate_step", self.rate_step),
            ("stability_threshold", self.stability_threshold),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("min_bandwidth", self.min_bandwidth), ("antfarm_init", self.antfarm_init)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.stability_window < 2 {
            return Err(Error::Config("stability_window must be >= 2 epochs".into()));
        }
        if self.antfarm_history < 2 {
            return Err(Error::Config("antfarm_history must be >= 2".into()));
        }
        Ok(())
    }
}

pub trait Controller: Send {
    fn name(&self) -> &'static str;

    /// Whether allocations must respect the workload's total server bandwidth.
    fn budgeted(&self) -> bool {
        true
    }

    fn allocate(&mut self, obs: &Observation) -> Result<Allocation>;

    /// Free-form notes about degraded decisions (saturated targets, fallbacks).
    fn warnings(&self) -> &[String] {
        &[]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    EqualSplit,
    PropSplit,
    BtCap,
    Aiad,
    Leveler,
    AntFarm,
    CheatSheet,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 7] = [
        ControllerKind::EqualSplit,
        ControllerKind::PropSplit,
        ControllerKind::BtCap,
        ControllerKind::Aiad,
        ControllerKind::Leveler,
        ControllerKind::AntFarm,
        ControllerKind::CheatSheet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::EqualSplit => "equal_split",
            ControllerKind::PropSplit => "prop_split",
            ControllerKind::BtCap => "bt_cap",
            ControllerKind::Aiad => "aiad",
            ControllerKind::Leveler => "leveler",
            ControllerKind::AntFarm => "ant_farm",
            ControllerKind::CheatSheet => "cheat_sheet",
        }
    }

    pub fn needs_cheatsheet(self) -> bool {
        self == ControllerKind::CheatSheet
    }

    /// Objectives the controller is designed for.
    pub fn supports(self, objective: Objective) -> bool {
        match self {
            ControllerKind::EqualSplit | ControllerKind::PropSplit | ControllerKind::BtCap => {
                objective != Objective::MinCost
            }
            ControllerKind::Aiad => objective == Objective::MinCost,
            ControllerKind::Leveler => objective == Objective::MinMax,
            ControllerKind::AntFarm => objective == Objective::MinAvg,
            ControllerKind::CheatSheet => true,
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ControllerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown controller `{s}`")))
    }
}

/// Instantiates a controller, checking that it suits the objective and workload.
pub fn build_controller(
    kind: ControllerKind,
    objective: Objective,
    workload: &Workload,
    config: &ControllerConfig,
    cheatsheet: Option<Arc<CheatSheet<f64>>>,
) -> Result<Box<dyn Controller>> {
    workload.validate()?;
    config.validate()?;
    if !kind.supports(objective) {
        return Err(Error::Config(format!(
            "controller {kind} does not support objective {objective}"
        )));
    }
    Ok(match kind {
        ControllerKind::EqualSplit => Box::new(EqualSplit::new(workload)),
        ControllerKind::PropSplit => Box::new(PropSplit::new(workload)),
        ControllerKind::BtCap => Box::new(BtCap::new(workload)),
        ControllerKind::Aiad => Box::new(Aiad::new(workload, config)?),
        ControllerKind::Leveler => Box::new(Leveler::new(workload, config)?),
        ControllerKind::AntFarm => Box::new(AntFarm::new(workload, config)),
        ControllerKind::CheatSheet => {
            let cs = cheatsheet.ok_or_else(|| {
                Error::Config("the cheat_sheet controller needs a cheat sheet".into())
            })?;
            Box::new(CheatSheetController::new(cs, objective, workload, config)?)
        }
    })
}

pub fn equal_split(k: usize, budget: f64) -> Allocation {
    Allocation(vec![budget / k as f64; k])
}

/// `x_i = X·w_i / Σw`; equal split when every weight is zero.
pub fn proportional_split(weights: &[f64], budget: f64) -> Allocation {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return equal_split(weights.len(), budget);
    }
    Allocation(weights.iter().map(|w| budget * w / total).collect())
}

pub fn prop_split(lambda_estimates: &[f64], budget: f64) -> Allocation {
    proportional_split(lambda_estimates, budget)
}

pub fn bt_cap(populations: &[usize], budget: f64) -> Allocation {
    let w: Vec<f64> = populations.iter().map(|&n| n as f64).collect();
    proportional_split(&w, budget)
}

pub struct EqualSplit {
    allocation: Allocation,
}

impl EqualSplit {
    pub fn new(w: &Workload) -> Self {
        EqualSplit { allocation: equal_split(w.len(), w.total_server_bandwidth) }
    }
}

impl Controller for EqualSplit {
    fn name(&self) -> &'static str {
        "equal_split"
    }

    fn allocate(&mut self, _: &Observation) -> Result<Allocation> {
        Ok(self.allocation.clone())
    }
}

/// Splits in proportion to the configured arrival rates.
pub struct PropSplit {
    allocation: Allocation,
}

impl PropSplit {
    pub fn new(w: &Workload) -> Self {
        PropSplit { allocation: prop_split(&w.arrival_rates(), w.total_server_bandwidth) }
    }
}

impl Controller for PropSplit {
    fn name(&self) -> &'static str {
        "prop_split"
    }

    fn allocate(&mut self, _: &Observation) -> Result<Allocation> {
        Ok(self.allocation.clone())
    }
}

/// Splits in proportion to current swarm populations.
pub struct BtCap {
    budget: f64,
}

impl BtCap {
    pub fn new(w: &Workload) -> Self {
        BtCap { budget: w.total_server_bandwidth }
    }
}

impl Controller for BtCap {
    fn name(&self) -> &'static str {
        "bt_cap"
    }

    fn allocate(&mut self, obs: &Observation) -> Result<Allocation> {
        let pops: Vec<usize> = obs.swarms.iter().map(|s| s.population).collect();
        Ok(bt_cap(&pops, self.budget))
    }
}

/// One additive step: up by `delta` when the measured rate misses the target rate, down
/// (floored at `min_bandwidth`) otherwise, hold when unmeasured.
pub fn aiad_step(x: f64, measured: Option<f64>, target_rate: f64, delta: f64, min_bandwidth: f64) -> f64 {
    match measured {
        None => x,
        Some(y) if y < target_rate => x + delta,
        Some(_) => (x - delta).max(min_bandwidth),
    }
}

/// Per-swarm additive-increase/additive-decrease toward target download times. Unbudgeted.
pub struct Aiad {
    target_rates: Vec<f64>,
    x: Vec<f64>,
    delta: f64,
    min_bandwidth: f64,
}

impl Aiad {
    pub fn new(w: &Workload, config: &ControllerConfig) -> Result<Self> {
        let target_rates = w
            .swarms
            .iter()
            .map(|s| {
                s.target_time.map(|tau| s.file_size / tau).ok_or_else(|| {
                    Error::Config(format!("AIAD needs a target time for swarm {}", s.id))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Aiad {
            x: target_rates.clone(),
            target_rates,
            delta: config.delta,
            min_bandwidth: config.min_bandwidth,
        })
    }
}

impl Controller for Aiad {
    fn name(&self) -> &'static str {
        "aiad"
    }

    fn budgeted(&self) -> bool {
        false
    }

    fn allocate(&mut self, obs: &Observation) -> Result<Allocation> {
        if obs.epoch_index > 0 {
            for (i, s) in obs.swarms.iter().enumerate() {
                self.x[i] = aiad_step(
                    self.x[i],
                    s.avg_download_rate,
                    self.target_rates[i],
                    self.delta,
                    self.min_bandwidth,
                );
            }
        }
        Ok(Allocation(self.x.clone()))
    }
}

/// Arithmetic median; mean of the middle two for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Moves swarms below the median rate up by `delta` and those above it down, then scales the
/// whole vector back to the budget if it overshoots.
pub fn leveler_step(
    rates: &[Option<f64>],
    current: &Allocation,
    budget: f64,
    delta: f64,
    min_bandwidth: f64,
) -> Allocation {
    let measured: Vec<f64> = rates.iter().flatten().copied().collect();
    let Some(med) = median(&measured) else {
        return current.clone();
    };
    let mut x: Vec<f64> = current
        .0
        .iter()
        .zip(rates)
        .map(|(&xi, r)| match r {
            Some(y) if *y < med => xi + delta,
            Some(y) if *y > med => (xi - delta).max(min_bandwidth),
            _ => xi,
        })
        .collect();
    let total: f64 = x.iter().sum();
    if total > budget {
        let scale = budget / total;
        for v in &mut x {
            *v *= scale;
        }
    }
    Allocation(x)
}

pub struct Leveler {
    current: Allocation,
    budget: f64,
    delta: f64,
    min_bandwidth: f64,
}

impl Leveler {
    pub fn new(w: &Workload, config: &ControllerConfig) -> Result<Self> {
        if w.len() < 2 {
            return Err(Error::Config("Leveler needs at least two swarms".into()));
        }
        Ok(Leveler {
            current: equal_split(w.len(), w.total_server_bandwidth),
            budget: w.total_server_bandwidth,
            delta: config.delta,
            min_bandwidth: config.min_bandwidth,
        })
    }
}

impl Controller for Leveler {
    fn name(&self) -> &'static str {
        "leveler"
    }

    fn allocate(&mut self, obs: &Observation) -> Result<Allocation> {
        if obs.epoch_index > 0 {
            self.current = leveler_step(&obs.rates(), &self.current, self.budget, self.delta, self.min_bandwidth);
        }
        Ok(self.current.clone())
    }
}

/// Windowed arrival-rate estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct RateEstimate {
    pub lambda_hat: f64,
    pub stable: bool,
}

/// Relative change between two consecutive window estimates.
pub fn relative_change(previous: f64, current: f64) -> f64 {
    if previous == 0.0 {
        if current == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (current - previous).abs() / previous
    }
}

/// `λ̂` over the last `window` epochs of `counts`; stable when it is within `threshold`
/// (relative) of the estimate over the `window` epochs before that.
pub fn estimate_arrival_rate(counts: &[u64], window: usize, epoch_length: f64, threshold: f64) -> RateEstimate {
    let w = window.max(1);
    let rate = |slice: &[u64]| slice.iter().sum::<u64>() as f64 / (slice.len() as f64 * epoch_length);
    let n = counts.len();
    let current = &counts[n.saturating_sub(w)..];
    if current.is_empty() {
        return RateEstimate { lambda_hat: 0.0, stable: false };
    }
    let lambda_hat = rate(current);
    let stable = n >= 2 * w && relative_change(rate(&counts[n - 2 * w..n - w]), lambda_hat) < threshold;
    RateEstimate { lambda_hat, stable }
}

/// L1 relative change between two rate vectors.
pub fn vector_change(previous: &[f64], current: &[f64]) -> f64 {
    let den: f64 = previous.iter().sum();
    let num: f64 = previous.iter().zip(current).map(|(p, c)| (p - c).abs()).sum();
    if den == 0.0 {
        return if num == 0.0 { 0.0 } else { f64::INFINITY };
    }
    num / den
}

/// Tracks per-swarm arrival counts and exposes rates once they settle. A stable estimate is
/// latched and replaced only when a later stable estimate moves by the threshold or more.
#[derive(Clone, Debug)]
pub struct RateTracker {
    configured: Vec<f64>,
    counts: Vec<Vec<u64>>,
    window: usize,
    epoch_length: f64,
    threshold: f64,
    latched: Option<Vec<f64>>,
}

impl RateTracker {
    pub fn new(configured: Vec<f64>, config: &ControllerConfig) -> Self {
        let latched = (config.rate_source == RateSource::Configured).then(|| configured.clone());
        RateTracker {
            counts: vec![Vec::new(); configured.len()],
            configured,
            window: config.stability_window,
            epoch_length: config.epoch_length,
            threshold: config.stability_threshold,
            latched,
        }
    }

    fn window_rates(&self, end: usize) -> Vec<f64> {
        let span = self.window as f64 * self.epoch_length;
        self.counts
            .iter()
            .map(|c| c[end - self.window..end].iter().sum::<u64>() as f64 / span)
            .collect()
    }

    /// Records one epoch of arrivals; returns true when the latched estimate changed.
    pub fn record(&mut self, arrivals: &[u64]) -> bool {
        for (c, &a) in self.counts.iter_mut().zip(arrivals) {
            c.push(a);
        }
        let n = self.counts.first().map_or(0, Vec::len);
        if n < 2 * self.window {
            return false;
        }
        let current = self.window_rates(n);
        if vector_change(&self.window_rates(n - self.window), &current) >= self.threshold {
            return false;
        }
        let moved = self
            .latched
            .as_ref()
            .is_none_or(|l| vector_change(l, &current) >= self.threshold);
        if moved {
            self.latched = Some(current);
        }
        moved
    }

    pub fn stable(&self) -> Option<&[f64]> {
        self.latched.as_deref()
    }

    /// Stable estimates when available, configured rates otherwise.
    pub fn weights(&self) -> &[f64] {
        self.latched.as_deref().unwrap_or(&self.configured)
    }

    pub fn configured(&self) -> &[f64] {
        &self.configured
    }
}

/// Online response-curve learner: a greedy warm-up, then per-swarm concave curve fits
/// refined by round-robin perturbations.
pub struct AntFarm {
    budget: f64,
    delta: f64,
    init: f64,
    history: usize,
    x: Vec<f64>,
    rates: RateTracker,
    warming_up: bool,
    /// Measured rate when each swarm last received a warm-up chunk.
    rate_at_increment: Vec<Option<f64>>,
    samples: Vec<Vec<(f64, f64)>>,
    curves: Vec<Option<ConcavePiecewiseLinear<f64>>>,
    cursor: usize,
    rounds: usize,
}

impl AntFarm {
    pub fn new(w: &Workload, config: &ControllerConfig) -> Self {
        let k = w.len();
        AntFarm {
            budget: w.total_server_bandwidth,
            delta: config.antfarm_delta,
            init: config.antfarm_init,
            history: config.antfarm_history,
            x: vec![0.0; k],
            rates: RateTracker::new(w.arrival_rates(), config),
            warming_up: true,
            rate_at_increment: vec![None; k],
            samples: vec![Vec::new(); k],
            curves: vec![None; k],
            cursor: 0,
            rounds: 0,
        }
    }

    pub fn curves(&self) -> &[Option<ConcavePiecewiseLinear<f64>>] {
        &self.curves
    }

    pub fn is_warming_up(&self) -> bool {
        self.warming_up
    }

    fn remember(&mut self, i: usize, x: f64, y: f64) {
        let s = &mut self.samples[i];
        s.retain(|p| p.0 != x);
        s.push((x, y));
        if s.len() > self.history {
            s.remove(0);
        }
    }

    fn warm_up_step(&mut self, obs: &Observation) {
        let left = self.budget - self.x.iter().sum::<f64>();
        if left <= 1e-9 {
            self.warming_up = false;
            return;
        }
        let weights = self.rates.weights().to_vec();
        let never = |i: usize| self.rate_at_increment[i].is_none();
        let any_fresh = (0..self.x.len()).any(never);
        let score = |i: usize| -> f64 {
            if any_fresh {
                // First round: by arrival rate alone, among swarms not yet incremented.
                if never(i) { weights[i] } else { f64::NEG_INFINITY }
            } else {
                let now = obs.swarms[i].avg_download_rate.unwrap_or(0.0);
                weights[i] * (now - self.rate_at_increment[i].unwrap_or(0.0))
            }
        };
        let mut best = 0;
        for i in 1..self.x.len() {
            if score(i) > score(best) {
                best = i;
            }
        }
        let chunk = self.delta.min(left);
        self.x[best] += chunk;
        self.rate_at_increment[best] = Some(obs.swarms[best].avg_download_rate.unwrap_or(0.0));
        if left - chunk <= 1e-9 {
            self.warming_up = false;
        }
    }

    fn steady_step(&mut self) -> Result<()> {
        let k = self.x.len();
        for i in 0..k {
            if !self.samples[i].is_empty() {
                self.curves[i] = Some(ConcavePiecewiseLinear::fit(&self.samples[i], Some((0.0, 0.0)))?);
            }
        }
        let fitted: Vec<ConcavePiecewiseLinear<f64>> = (0..k)
            .map(|i| {
                self.curves[i]
                    .clone()
                    .unwrap_or_else(|| ConcavePiecewiseLinear::fit(&[(1.0, 1.0)], Some((0.0, 0.0))).unwrap())
            })
            .collect();
        let weights = self.rates.weights().to_vec();
        let step = self.delta;
        let mut x = if self.budget >= k as f64 * step {
            gradient_ascent_allocate(&fitted, &weights, self.budget, step)?
        } else {
            equal_split(k, self.budget).0
        };

        // Probe one swarm per epoch, alternating direction each full round.
        let j = self.cursor;
        let up = self.rounds % 2 == 0;
        let gain = |i: usize, xi: f64| weights[i] * (fitted[i].value(xi + step) - fitted[i].value(xi));
        let others = (0..k).filter(|&i| i != j);
        if k > 1 {
            if up {
                if let Some(d) = others.max_by(|&a, &b| x[a].total_cmp(&x[b])).filter(|&d| x[d] >= 2.0 * step) {
                    x[d] -= step;
                    x[j] += step;
                }
            } else if x[j] >= 2.0 * step {
                let r = others
                    .max_by(|&a, &b| gain(a, x[a]).total_cmp(&gain(b, x[b])).then(b.cmp(&a)))
                    .expect("k > 1");
                x[j] -= step;
                x[r] += step;
            }
        }
        self.cursor = (j + 1) % k;
        if self.cursor == 0 {
            self.rounds += 1;
        }
        self.x = x;
        Ok(())
    }
}

impl Controller for AntFarm {
    fn name(&self) -> &'static str {
        "ant_farm"
    }

    fn allocate(&mut self, obs: &Observation) -> Result<Allocation> {
        let k = self.x.len();
        if obs.epoch_index == 0 {
            let init = self.init.min(self.budget / k as f64);
            self.x = vec![init; k];
            return Ok(Allocation(self.x.clone()));
        }
        let arrivals: Vec<u64> = obs.swarms.iter().map(|s| s.arrivals_this_epoch).collect();
        self.rates.record(&arrivals);
        for i in 0..k {
            if let Some(y) = obs.swarms[i].avg_download_rate {
                let x = self.x[i];
                self.remember(i, x, y);
            }
        }
        if self.warming_up {
            self.warm_up_step(obs);
        } else {
            self.steady_step()?;
        }
        Ok(Allocation(self.x.clone()))
    }
}

/// Model-based controller solving the objective on cheat-sheet curves.
pub struct CheatSheetController {
    cs: Arc<CheatSheet<f64>>,
    objective: Objective,
    budget: f64,
    file_sizes: Vec<f64>,
    targets: Vec<Option<f64>>,
    config: ControllerConfig,
    rates: RateTracker,
    current: Option<Allocation>,
    warnings: Vec<String>,
}

impl CheatSheetController {
    pub fn new(
        cs: Arc<CheatSheet<f64>>,
        objective: Objective,
        w: &Workload,
        config: &ControllerConfig,
    ) -> Result<Self> {
        for s in &w.swarms {
            cs.check_dist(&s.dist)?;
        }
        if objective == Objective::MinCost {
            if let Some(s) = w.swarms.iter().find(|s| s.target_time.is_none()) {
                return Err(Error::Config(format!("min_cost needs a target time for swarm {}", s.id)));
            }
        }
        Ok(CheatSheetController {
            cs,
            objective,
            budget: w.total_server_bandwidth,
            file_sizes: w.swarms.iter().map(|s| s.file_size).collect(),
            targets: w.swarms.iter().map(|s| s.target_time).collect(),
            config: *config,
            rates: RateTracker::new(w.arrival_rates(), config),
            current: None,
            warnings: Vec::new(),
        })
    }

    fn models(&self, rates: &[f64]) -> Result<Vec<SwarmModel<f64, SwarmCurve<f64>>>> {
        // The curve needs a positive demand; an idle swarm still weighs zero.
        rates
            .iter()
            .zip(&self.file_sizes)
            .zip(&self.targets)
            .map(|((&lambda, &s), &target_time)| {
                Ok(SwarmModel {
                    curve: self.cs.curve(self.cs.mu(), lambda.max(1e-9), s)?,
                    lambda,
                    file_size: s,
                    target_time,
                })
            })
            .collect()
    }

    fn solve(&mut self, rates: &[f64]) -> Result<Allocation> {
        let models = self.models(rates)?;
        let c = &self.config;
        Ok(match self.objective {
            Objective::MinAvg => {
                let start = c.step.max(c.min_bandwidth);
                let k = models.len() as f64;
                if self.budget < k * start {
                    self.warnings.push(format!(
                        "budget {} cannot give every swarm {start} KBps; splitting equally",
                        self.budget
                    ));
                    equal_split(models.len(), self.budget)
                } else {
                    Allocation(min_avg_time_allocate(&models, self.budget, c.step, start)?)
                }
            }
            Objective::MinMax => {
                let r = target_raising_allocate(&models, self.budget, c.rate_step, c.min_bandwidth)?;
                if r.rate.is_none() {
                    self.warnings.push("no common target rate fits the budget; splitting equally".into());
                }
                Allocation(r.allocation)
            }
            Objective::MinCost => {
                let r = min_cost_allocate(&models, self.budget, c.min_bandwidth)?;
                for i in r.saturated {
                    self.warnings.push(format!("target for swarm {i} unreachable below {} KBps", self.budget));
                }
                Allocation(r.allocation)
            }
        })
    }
}

impl Controller for CheatSheetController {
    fn name(&self) -> &'static str {
        "cheat_sheet"
    }

    fn budgeted(&self) -> bool {
        self.objective != Objective::MinCost
    }

    fn allocate(&mut self, obs: &Observation) -> Result<Allocation> {
        let changed = if obs.epoch_index > 0 {
            let arrivals: Vec<u64> = obs.swarms.iter().map(|s| s.arrivals_this_epoch).collect();
            self.rates.record(&arrivals)
        } else {
            false
        };
        if self.current.is_none() || changed {
            let alloc = match self.rates.stable() {
                Some(rates) => {
                    let rates = rates.to_vec();
                    self.solve(&rates)?
                }
                // Until the estimate settles, MIN_AVG behaves exactly like PropSplit.
                None if self.objective == Objective::MinAvg => {
                    prop_split(self.rates.configured(), self.budget)
                }
                None => {
                    let rates = self.rates.configured().to_vec();
                    self.solve(&rates)?
                }
            };
            self.current = Some(alloc);
        }
        Ok(self.current.clone().expect("allocation computed above"))
    }

    fn warnings(&self) -> &[String] {
        &self.warnings
    }
}
