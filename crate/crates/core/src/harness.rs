//! Multi-swarm co-simulation, objective evaluation, brute-force oracle and report files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cheatsheet::{measure_point, CheatSheet, RunPolicy};
use crate::controllers::{
    build_controller, Allocation, ControllerConfig, ControllerKind, Observation, SwarmObservation,
};
use crate::error::{Error, Result};
use crate::fit::ResponseCurve;
use crate::scalar::Scalar;
use crate::seed::derive_seed;
use crate::solver::{model_objective, Objective, SwarmModel};
use crate::swarmsim::{SupplyModelParams, SwarmState};
use crate::workload::{build_standard_workload, StandardWorkload, Workload};

/// A workload given by standard name or inline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WorkloadSource {
    Standard(StandardWorkload),
    Inline(Workload),
}

impl WorkloadSource {
    pub fn resolve(&self) -> Workload {
        match self {
            WorkloadSource::Standard(name) => build_standard_workload(*name),
            WorkloadSource::Inline(w) => w.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub workload: WorkloadSource,
    pub controller: ControllerKind,
    #[serde(default)]
    pub controller_config: ControllerConfig,
    pub objective: Objective,
    /// Simulated seconds.
    #[serde(default = "default_duration")]
    pub duration: f64,
    /// Seconds excluded from the summary.
    #[serde(default = "default_warmup")]
    pub warmup: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cheatsheet_path: Option<PathBuf>,
    /// Replaces the workload's own seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report_dir: Option<PathBuf>,
    /// Ground-truth swarm model.
    #[serde(default)]
    pub supply_params: SupplyModelParams,
    /// Sliding window for download-time metrics, seconds.
    #[serde(default = "default_window")]
    pub metric_window: f64,
    /// Relative change in every swarm's window download time below which the system counts
    /// as settled.
    #[serde(default = "default_steady_tolerance")]
    pub steady_state_tolerance: f64,
    /// Relative band around a target download time that counts as meeting it.
    #[serde(default = "default_compliance_band")]
    pub compliance_band: f64,
}

fn default_duration() -> f64 {
    20_000.0
}
fn default_warmup() -> f64 {
    2000.0
}
fn default_window() -> f64 {
    2000.0
}
fn default_steady_tolerance() -> f64 {
    0.05
}
fn default_compliance_band() -> f64 {
    0.10
}

impl ExperimentConfig {
    pub fn new(workload: WorkloadSource, controller: ControllerKind, objective: Objective) -> Self {
        ExperimentConfig {
            workload,
            controller,
            controller_config: ControllerConfig::default(),
            objective,
            duration: default_duration(),
            warmup: default_warmup(),
            cheatsheet_path: None,
            seed: None,
            report_dir: None,
            supply_params: SupplyModelParams::default(),
            metric_window: default_window(),
            steady_state_tolerance: default_steady_tolerance(),
            compliance_band: default_compliance_band(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// The workload with the configured seed applied.
    pub fn resolved_workload(&self) -> Workload {
        let mut w = self.workload.resolve();
        if let Some(seed) = self.seed {
            w.seed = seed;
        }
        w
    }

    /// Checks field ranges; `with_cheatsheet` says whether a sheet will be supplied directly.
    pub fn validate(&self, with_cheatsheet: bool) -> Result<()> {
        if !(self.warmup >= 0.0 && self.duration > self.warmup && self.duration.is_finite()) {
            return Err(Error::Config(format!(
                "need duration > warmup >= 0, got duration={} warmup={}",
                self.duration, self.warmup
            )));
        }
        if !(self.metric_window > 0.0) {
            return Err(Error::Config("metric_window must be positive".into()));
        }
        if !(self.steady_state_tolerance > 0.0 && self.compliance_band > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        let has_sheet = with_cheatsheet || self.cheatsheet_path.is_some();
        if self.controller.needs_cheatsheet() && !has_sheet {
            return Err(Error::Config(format!("controller {} needs cheatsheet_path", self.controller)));
        }
        if !self.controller.needs_cheatsheet() && self.cheatsheet_path.is_some() {
            return Err(Error::Config(format!(
                "cheatsheet_path given but controller {} does not use it",
                self.controller
            )));
        }
        self.controller_config.validate()?;
        self.supply_params.validate()?;
        self.resolved_workload().validate()
    }
}

/// One swarm during one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwarmRow {
    /// Bandwidth applied during the epoch, KBps.
    pub x: f64,
    /// Population at the end of the epoch.
    pub population: usize,
    pub window_download_time: Option<f64>,
    pub download_rate: Option<f64>,
    /// Downloads finished during the epoch and the sum of their durations.
    pub completions: u64,
    pub completion_time_sum: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    /// End of the epoch, seconds.
    pub time: f64,
    /// Epoch length, seconds.
    pub span: f64,
    pub swarms: Vec<SwarmRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwarmSummary {
    pub id: String,
    /// Mean duration of downloads completed after warm-up.
    pub mean_download_time: Option<f64>,
    /// Mean of per-epoch window download times after warm-up.
    pub mean_window_time: Option<f64>,
    pub completions: u64,
    pub server_kb: f64,
    pub target_time: Option<f64>,
    pub meets_target: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub objective: Objective,
    pub objective_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective_null_reason: Option<String>,
    /// Completion-weighted mean download time after warm-up.
    pub mean_download_time: Option<f64>,
    /// Largest per-swarm mean window download time after warm-up.
    pub mad_time: Option<f64>,
    pub server_kb_total: f64,
    pub server_kb_post_warmup: f64,
    /// End of the epoch at which the window download time had settled.
    pub time_to_steady_state: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steady_state_basis: Option<SteadyStateBasis>,
    pub swarms: Vec<SwarmSummary>,
}

/// Which signal declared steady state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteadyStateBasis {
    /// Every swarm's own window time settled.
    PerSwarm,
    /// Only the completion-weighted window time across all swarms settled; used when
    /// sparse swarms never produce a quiet enough window of their own.
    Aggregate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub swarm_ids: Vec<String>,
    pub rows: Vec<EpochRow>,
    pub summary: Summary,
    pub warnings: Vec<String>,
}

/// Objective value of a finished run.
#[derive(Clone, Debug, PartialEq)]
pub enum ObjectiveValue {
    MeanDownloadTime(f64),
    MaxAverageDownloadTime(f64),
    Cost {
        server_kb: f64,
        /// (achieved mean download time, target) per swarm.
        per_swarm: Vec<(f64, Option<f64>)>,
    },
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<Report> {
    let cs = match &config.cheatsheet_path {
        Some(p) => Some(Arc::new(CheatSheet::<f64>::load(p)?)),
        None => None,
    };
    run_experiment_with(config, cs)
}

/// Runs with an already loaded cheat sheet (ignored by controllers that do not use one).
pub fn run_experiment_with(config: &ExperimentConfig, cheatsheet: Option<Arc<CheatSheet<f64>>>) -> Result<Report> {
    config.validate(cheatsheet.is_some())?;
    let workload = config.resolved_workload();
    let k = workload.len();
    let cs = if config.controller.needs_cheatsheet() { cheatsheet } else { None };
    let mut controller = build_controller(
        config.controller,
        config.objective,
        &workload,
        &config.controller_config,
        cs,
    )?;
    let budget = controller.budgeted().then_some(workload.total_server_bandwidth);

    let mut sims = workload
        .swarms
        .iter()
        .enumerate()
        .map(|(i, s)| SwarmState::new(s.clone(), config.supply_params, 0.0, workload.swarm_rng(i)))
        .collect::<Result<Vec<_>>>()?;

    let apply = |sims: &mut [SwarmState], a: &Allocation| -> Result<()> {
        if a.len() != k || !a.is_valid(budget) {
            return Err(Error::Contract(format!(
                "controller {} returned an invalid allocation {:?}",
                controller_name(config.controller),
                a.0
            )));
        }
        for (s, &x) in sims.iter_mut().zip(&a.0) {
            s.set_server_bandwidth(x)?;
        }
        Ok(())
    };

    let mut current = controller.allocate(&Observation::initial(k))?;
    apply(&mut sims, &current)?;

    let epoch = config.controller_config.epoch_length;
    let mut rows = Vec::new();
    let mut prev_arrivals = vec![0u64; k];
    let mut prev_completed = vec![0usize; k];
    let mut t_prev = 0.0;
    let mut index = 0usize;
    while t_prev < config.duration {
        index += 1;
        let t = (index as f64 * epoch).min(config.duration);
        let span = t - t_prev;
        let mut swarms = Vec::with_capacity(k);
        let mut obs = Vec::with_capacity(k);
        for (i, sim) in sims.iter_mut().enumerate() {
            sim.advance_quiet(t)?;
            let done = &sim.completed()[prev_completed[i]..];
            let completion_time_sum = done.iter().map(|(a, d)| d - a).sum();
            let completions = done.len() as u64;
            prev_completed[i] = sim.completed().len();
            let arrivals = sim.total_arrivals() - prev_arrivals[i];
            prev_arrivals[i] = sim.total_arrivals();
            let row = SwarmRow {
                x: current.0[i],
                population: sim.population(),
                window_download_time: sim.avg_download_time_window(config.metric_window),
                download_rate: sim.avg_download_rate(span),
                completions,
                completion_time_sum,
            };
            obs.push(SwarmObservation {
                avg_download_rate: row.download_rate,
                avg_download_time_window: row.window_download_time,
                population: row.population,
                arrivals_this_epoch: arrivals,
            });
            swarms.push(row);
        }
        rows.push(EpochRow { time: t, span, swarms });
        t_prev = t;
        if t < config.duration {
            current = controller.allocate(&Observation { epoch_index: index, time: t, swarms: obs })?;
            apply(&mut sims, &current)?;
        }
    }

    let swarm_ids: Vec<String> = workload.swarms.iter().map(|s| s.id.clone()).collect();
    let summary = summarize(&rows, config, &workload);
    Ok(Report {
        config: config.clone(),
        swarm_ids,
        rows,
        summary,
        warnings: controller.warnings().to_vec(),
    })
}

fn controller_name(kind: ControllerKind) -> &'static str {
    kind.name()
}

/// First epoch end at which every swarm's window download time differs by less than
/// `tolerance` (relative) from its value one metric window earlier.
pub fn detect_steady_state(rows: &[EpochRow], window: f64, tolerance: f64) -> Option<f64> {
    first_settled(rows, window, |now, then| {
        rows[now].swarms.iter().zip(&rows[then].swarms).all(|(a, b)| {
            match (a.window_download_time, b.window_download_time) {
                (Some(a), Some(b)) => settled(a, b, tolerance),
                _ => false,
            }
        })
    })
}

/// Same test applied to the completion-weighted download time of all downloads finished
/// in the trailing window.
pub fn detect_aggregate_steady_state(rows: &[EpochRow], window: f64, tolerance: f64) -> Option<f64> {
    let trailing = |j: usize| -> Option<f64> {
        let from = rows[j].time - window - 1e-9;
        let (mut count, mut sum) = (0u64, 0.0);
        for r in rows[..=j].iter().rev().take_while(|r| r.time - r.span >= from) {
            for s in &r.swarms {
                count += s.completions;
                sum += s.completion_time_sum;
            }
        }
        (count > 0).then(|| sum / count as f64)
    };
    first_settled(rows, window, |now, then| match (trailing(now), trailing(then)) {
        (Some(a), Some(b)) => settled(a, b, tolerance),
        _ => false,
    })
}

/// Per-swarm detection with the aggregate signal as fallback.
pub fn steady_state(rows: &[EpochRow], window: f64, tolerance: f64) -> Option<(f64, SteadyStateBasis)> {
    detect_steady_state(rows, window, tolerance)
        .map(|t| (t, SteadyStateBasis::PerSwarm))
        .or_else(|| detect_aggregate_steady_state(rows, window, tolerance).map(|t| (t, SteadyStateBasis::Aggregate)))
}

fn settled(now: f64, then: f64, tolerance: f64) -> bool {
    then > 0.0 && (now - then).abs() / then < tolerance
}

// Walks epochs from the second full window on, pairing each with the epoch one window back.
fn first_settled(rows: &[EpochRow], window: f64, same: impl Fn(usize, usize) -> bool) -> Option<f64> {
    let lag = rows.iter().position(|r| r.time >= window - 1e-9)?;
    for j in lag + 1..rows.len() {
        let then = rows[..j].iter().rposition(|r| r.time <= rows[j].time - window + 1e-9)?;
        if then >= lag && same(j, then) {
            return Some(rows[j].time);
        }
    }
    None
}

/// Recomputes the summary from epoch rows.
pub fn summarize(rows: &[EpochRow], config: &ExperimentConfig, workload: &Workload) -> Summary {
    let k = workload.len();
    let post: Vec<&EpochRow> = rows
        .iter()
        .filter(|r| r.time - r.span >= config.warmup - 1e-9)
        .collect();
    let server_kb_total = rows.iter().map(|r| r.span * r.swarms.iter().map(|s| s.x).sum::<f64>()).sum();

    let mut swarms = Vec::with_capacity(k);
    let mut all_count = 0u64;
    let mut all_sum = 0.0;
    let mut server_kb_post_warmup = 0.0;
    for (i, spec) in workload.swarms.iter().enumerate() {
        let count: u64 = post.iter().map(|r| r.swarms[i].completions).sum();
        let sum: f64 = post.iter().map(|r| r.swarms[i].completion_time_sum).sum();
        let windows: Vec<f64> = post.iter().filter_map(|r| r.swarms[i].window_download_time).collect();
        let server_kb: f64 = post.iter().map(|r| r.span * r.swarms[i].x).sum();
        all_count += count;
        all_sum += sum;
        server_kb_post_warmup += server_kb;
        let mean_download_time = (count > 0).then(|| sum / count as f64);
        let meets_target = match (spec.target_time, mean_download_time) {
            (Some(tau), Some(m)) => Some((m - tau).abs() <= config.compliance_band * tau),
            _ => None,
        };
        swarms.push(SwarmSummary {
            id: spec.id.clone(),
            mean_download_time,
            mean_window_time: (!windows.is_empty()).then(|| windows.iter().sum::<f64>() / windows.len() as f64),
            completions: count,
            server_kb,
            target_time: spec.target_time,
            meets_target,
        });
    }
    let mean_download_time = (all_count > 0).then(|| all_sum / all_count as f64);
    let steady = steady_state(rows, config.metric_window, config.steady_state_tolerance);
    let mad_time = swarms
        .iter()
        .map(|s| s.mean_window_time)
        .collect::<Option<Vec<f64>>>()
        .and_then(|v| v.into_iter().reduce(f64::max));

    let (objective_value, objective_null_reason) = if all_count == 0 {
        (None, Some("no downloads completed after warm-up".to_string()))
    } else {
        match config.objective {
            Objective::MinAvg => (mean_download_time, None),
            Objective::MinMax => match mad_time {
                Some(v) => (Some(v), None),
                None => (None, Some("some swarm has no window download time after warm-up".into())),
            },
            Objective::MinCost => (Some(server_kb_post_warmup), None),
        }
    };

    Summary {
        objective: config.objective,
        objective_value,
        objective_null_reason,
        mean_download_time,
        mad_time,
        server_kb_total,
        server_kb_post_warmup,
        time_to_steady_state: steady.map(|(t, _)| t),
        steady_state_basis: steady.map(|(_, b)| b),
        swarms,
    }
}

/// The objective of a finished run.
pub fn objective_value(report: &Report, objective: Objective) -> Result<ObjectiveValue> {
    let s = &report.summary;
    let no_data = || Error::NoData("no downloads completed after warm-up".into());
    match objective {
        Objective::MinAvg => s.mean_download_time.map(ObjectiveValue::MeanDownloadTime).ok_or_else(no_data),
        Objective::MinMax => s.mad_time.map(ObjectiveValue::MaxAverageDownloadTime).ok_or_else(no_data),
        Objective::MinCost => {
            let per_swarm = s
                .swarms
                .iter()
                .map(|w| w.mean_download_time.map(|m| (m, w.target_time)))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(no_data)?;
            Ok(ObjectiveValue::Cost { server_kb: s.server_kb_post_warmup, per_swarm })
        }
    }
}

/// Largest instance the exhaustive search accepts.
pub const BRUTE_FORCE_MAX_SWARMS: usize = 4;

/// Exhaustive optimum on a `grid_step` lattice. `MinAvg` and `MinMax` enumerate every grid
/// allocation summing to `budget`; `MinCost` takes each swarm's smallest grid bandwidth meeting
/// its target. Ties keep the first optimum in lexicographic order.
pub fn brute_force_allocation<T: Scalar, C: ResponseCurve<T>>(
    models: &[SwarmModel<T, C>],
    objective: Objective,
    budget: T,
    grid_step: T,
) -> Result<Vec<T>> {
    let k = models.len();
    if k == 0 {
        return Err(Error::InvalidArgument("no swarms".into()));
    }
    if k > BRUTE_FORCE_MAX_SWARMS {
        return Err(Error::TooLarge(format!(
            "exhaustive search supports at most {BRUTE_FORCE_MAX_SWARMS} swarms, got {k}"
        )));
    }
    let ratio = (budget / grid_step).as_f64();
    let units = ratio.round();
    if !(grid_step > T::zero()) || (ratio - units).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "grid step {grid_step} must divide the budget {budget}"
        )));
    }
    let units = units as usize;
    let at = |u: usize| T::from_usize(u).unwrap() * grid_step;

    if objective == Objective::MinCost {
        return models
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let tau = m.target_time.ok_or_else(|| {
                    Error::Config(format!("swarm {i} has no target download time"))
                })?;
                (0..=units)
                    .map(at)
                    .find(|&x| m.download_time(x) <= tau)
                    .ok_or_else(|| Error::Infeasible(format!("swarm {i} cannot meet its target within the budget")))
            })
            .collect();
    }

    let mut best: Option<(T, Vec<usize>)> = None;
    let mut cur = vec![0usize; k];
    fn recurse<T: Scalar, C: ResponseCurve<T>>(
        i: usize,
        left: usize,
        cur: &mut Vec<usize>,
        best: &mut Option<(T, Vec<usize>)>,
        eval: &dyn Fn(&[usize]) -> T,
    ) {
        if i + 1 == cur.len() {
            cur[i] = left;
            let v = eval(cur);
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                *best = Some((v, cur.clone()));
            }
            return;
        }
        for u in 0..=left {
            cur[i] = u;
            recurse::<T, C>(i + 1, left - u, cur, best, eval);
        }
    }
    let eval = |units: &[usize]| -> T {
        let x: Vec<T> = units.iter().map(|&u| at(u)).collect();
        model_objective(objective, models, &x)
    };
    recurse::<T, C>(0, units, &mut cur, &mut best, &eval);
    let (_, units) = best.expect("at least one allocation enumerated");
    Ok(units.into_iter().map(at).collect())
}

/// Response curve interpolated linearly between measured lattice points, through the origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasuredCurve {
    /// (x KBps, y KBps), strictly increasing in x, starting at (0, 0).
    pub points: Vec<(f64, f64)>,
}

impl ResponseCurve<f64> for MeasuredCurve {
    fn value(&self, x: f64) -> f64 {
        let p = &self.points;
        let i = p.partition_point(|&(px, _)| px <= x).clamp(1, p.len() - 1);
        let ((x0, y0), (x1, y1)) = (p[i - 1], p[i]);
        y0 + (x - x0) * (y1 - y0) / (x1 - x0)
    }

    fn slope(&self, x: f64) -> f64 {
        let p = &self.points;
        let i = p.partition_point(|&(px, _)| px <= x).clamp(1, p.len() - 1);
        (p[i].1 - p[i - 1].1) / (p[i].0 - p[i - 1].0)
    }
}

/// Exhaustive optimum over ground-truth curves measured on the allocation lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub objective: Objective,
    pub grid_step: f64,
    pub swarm_ids: Vec<String>,
    pub allocation: Vec<f64>,
    /// Objective under the measured curves (lower is better).
    pub objective_value: f64,
    pub curves: Vec<MeasuredCurve>,
}

/// Measures every swarm of the workload at each multiple of `grid_step` up to the total server
/// bandwidth. Zero server bandwidth gives zero throughput in the fluid model, so the origin
/// is exact rather than measured.
pub fn measure_truth(
    workload: &Workload,
    params: &SupplyModelParams,
    grid_step: f64,
    reps: usize,
    policy: &RunPolicy,
) -> Result<Vec<SwarmModel<f64, MeasuredCurve>>> {
    let budget = workload.total_server_bandwidth;
    let ratio = budget / grid_step;
    if !(grid_step > 0.0) || (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) || ratio < 1.0 {
        return Err(Error::InvalidArgument(format!("grid step {grid_step} must divide the budget {budget}")));
    }
    let units = ratio.round() as usize;
    let jobs: Vec<(usize, usize)> = (0..workload.len()).flat_map(|i| (1..=units).map(move |u| (i, u))).collect();
    let ys = jobs
        .par_iter()
        .map(|&(i, u)| {
            let s = &workload.swarms[i];
            let seed = derive_seed(workload.seed, &[i as u64, u as u64]);
            measure_point(u as f64 * grid_step, s.lambda, s.file_size, &s.dist, reps, params, policy, seed)
                .map(|p| p.y_mean)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(workload
        .swarms
        .iter()
        .zip(ys.chunks(units))
        .map(|(s, ys)| {
            let mut points = vec![(0.0, 0.0)];
            points.extend(ys.iter().enumerate().map(|(u, &y)| ((u + 1) as f64 * grid_step, y)));
            SwarmModel { curve: MeasuredCurve { points }, lambda: s.lambda, file_size: s.file_size, target_time: s.target_time }
        })
        .collect())
}

/// Brute-force optimum of the configured objective over measured ground truth.
pub fn run_oracle(config: &ExperimentConfig, grid_step: f64, reps: usize, policy: &RunPolicy) -> Result<OracleResult> {
    let workload = config.resolved_workload();
    workload.validate()?;
    if workload.len() > BRUTE_FORCE_MAX_SWARMS {
        return Err(Error::TooLarge(format!(
            "exhaustive search supports at most {BRUTE_FORCE_MAX_SWARMS} swarms, got {}",
            workload.len()
        )));
    }
    let models = measure_truth(&workload, &config.supply_params, grid_step, reps, policy)?;
    let allocation =
        brute_force_allocation(&models, config.objective, workload.total_server_bandwidth, grid_step)?;
    Ok(OracleResult {
        objective: config.objective,
        grid_step,
        swarm_ids: workload.swarms.iter().map(|s| s.id.clone()).collect(),
        objective_value: model_objective(config.objective, &models, &allocation),
        allocation,
        curves: models.into_iter().map(|m| m.curve).collect(),
    })
}

pub const TIMESERIES_HEADER: &str =
    "time,swarm_id,x_kbps,population,window_download_time_s,download_rate_kbps,completions,completion_time_sum_s";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn timeseries_csv(report: &Report) -> String {
    let mut out = String::new();
    out.push_str(TIMESERIES_HEADER);
    out.push('\n');
    for row in &report.rows {
        for (id, s) in report.swarm_ids.iter().zip(&row.swarms) {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                row.time,
                id,
                s.x,
                s.population,
                opt(s.window_download_time),
                opt(s.download_rate),
                s.completions,
                s.completion_time_sum
            );
        }
    }
    out
}

pub fn curves_csv(report: &Report) -> String {
    let mut out = String::from("time");
    for id in &report.swarm_ids {
        out.push(',');
        out.push_str(id);
    }
    out.push('\n');
    for row in &report.rows {
        out.push_str(&row.time.to_string());
        for s in &row.swarms {
            out.push(',');
            out.push_str(&opt(s.window_download_time));
        }
        out.push('\n');
    }
    out
}

#[derive(Serialize, Deserialize)]
struct SummaryDocument {
    summary: Summary,
    seed: u64,
    config: ExperimentConfig,
    warnings: Vec<String>,
}

pub fn summary_json(report: &Report) -> Result<String> {
    let doc = SummaryDocument {
        summary: report.summary.clone(),
        seed: report.config.resolved_workload().seed,
        config: report.config.clone(),
        warnings: report.warnings.clone(),
    };
    Ok(serde_json::to_string_pretty(&doc)? + "\n")
}

/// Writes `timeseries.csv`, `summary.json` and `curves.csv` into `dir` (created if needed).
pub fn emit_report(report: &Report, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = [
        ("timeseries.csv", timeseries_csv(report)),
        ("summary.json", summary_json(report)?),
        ("curves.csv", curves_csv(report)),
    ];
    let mut written = Vec::new();
    for (name, body) in files {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Parses `timeseries.csv` back into epoch rows, in the given swarm order.
pub fn parse_timeseries(text: &str, swarm_ids: &[String]) -> Result<Vec<EpochRow>> {
    let mut lines = text.split_inclusive('\n');
    let mut offset = 0;
    let header = lines.next().unwrap_or("");
    if header.trim_end() != TIMESERIES_HEADER {
        return Err(Error::Parse { line: 1, offset: 0, message: "unexpected timeseries header".into() });
    }
    offset += header.len();
    let k = swarm_ids.len();
    let mut rows: Vec<EpochRow> = Vec::new();
    for (i, raw) in lines.enumerate() {
        let line_no = i + 2;
        let line = raw.trim_end_matches(['\n', '\r']);
        let line_offset = offset;
        let err = |message: String| Error::Parse { line: line_no, offset: line_offset, message };
        offset += raw.len();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(err(format!("expected 8 columns, found {}", f.len())));
        }
        let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| err(format!("`{s}` is not a number"))) };
        let opt_num = |s: &str| -> Result<Option<f64>> { if s.is_empty() { Ok(None) } else { num(s).map(Some) } };
        let time = num(f[0])?;
        let row = SwarmRow {
            x: num(f[2])?,
            population: f[3].parse().map_err(|_| err(format!("`{}` is not a count", f[3])))?,
            window_download_time: opt_num(f[4])?,
            download_rate: opt_num(f[5])?,
            completions: f[6].parse().map_err(|_| err(format!("`{}` is not a count", f[6])))?,
            completion_time_sum: num(f[7])?,
        };
        let pos = rows.last().map_or(k, |r| r.swarms.len());
        if pos == k {
            let prev = rows.last().map_or(0.0, |r| r.time);
            rows.push(EpochRow { time, span: time - prev, swarms: Vec::with_capacity(k) });
        }
        let r = rows.last_mut().unwrap();
        let idx = r.swarms.len();
        if swarm_ids[idx] != f[1] || r.time != time {
            return Err(err(format!("expected swarm {} at time {}", swarm_ids[idx], r.time)));
        }
        r.swarms.push(row);
    }
    if rows.last().is_some_and(|r| r.swarms.len() != k) {
        return Err(Error::Parse { line: 0, offset, message: "last epoch is incomplete".into() });
    }
    Ok(rows)
}

/// Reloads a report directory and recomputes its summary from `timeseries.csv`.
pub fn reload_report(dir: &Path) -> Result<Report> {
    let summary_path = dir.join("summary.json");
    let text = std::fs::read_to_string(&summary_path).map_err(|e| Error::io(&summary_path, e))?;
    let doc: SummaryDocument = serde_json::from_str(&text)?;
    let workload = doc.config.resolved_workload();
    let swarm_ids: Vec<String> = workload.swarms.iter().map(|s| s.id.clone()).collect();
    let ts_path = dir.join("timeseries.csv");
    let ts = std::fs::read_to_string(&ts_path).map_err(|e| Error::io(&ts_path, e))?;
    let rows = parse_timeseries(&ts, &swarm_ids)?;
    let summary = summarize(&rows, &doc.config, &workload);
    Ok(Report { config: doc.config, swarm_ids, rows, summary, warnings: doc.warnings })
}
