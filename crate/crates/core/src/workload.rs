//! Swarm specifications, arrival processes and peer upload capacities.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{rng_from_seed, stream_seed, SimRng};
use crate::units::mb;

/// Distribution of peer upload capacities, in KBps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum UploadCapacityDist {
    /// `exp(uniform(ln lo, ln hi))`.
    LogUniform { lo: f64, hi: f64 },
    /// Discrete table of `(capacity, probability)` points.
    Empirical { points: Vec<(f64, f64)> },
}

impl Default for UploadCapacityDist {
    fn default() -> Self {
        UploadCapacityDist::LogUniform { lo: 40.0, hi: 200.0 }
    }
}

impl UploadCapacityDist {
    pub fn validate(&self) -> Result<()> {
        match self {
            UploadCapacityDist::LogUniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && *lo > 0.0 && hi >= lo) {
                    return Err(Error::Config(format!(
                        "log-uniform capacity bounds must satisfy 0 < lo <= hi, got [{lo}, {hi}]"
                    )));
                }
            }
            UploadCapacityDist::Empirical { points } => {
                if points.is_empty() {
                    return Err(Error::Config("empirical capacity table is empty".into()));
                }
                for &(v, p) in points {
                    if !(v.is_finite() && v > 0.0) {
                        return Err(Error::Config(format!(
                            "empirical capacity {v} must be positive"
                        )));
                    }
                    if !(p.is_finite() && p >= 0.0) {
                        return Err(Error::Config(format!(
                            "empirical probability {p} must be non-negative"
                        )));
                    }
                }
                let total: f64 = points.iter().map(|p| p.1).sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!(
                        "empirical probabilities sum to {total}, expected 1"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn lo(&self) -> f64 {
        match self {
            UploadCapacityDist::LogUniform { lo, .. } => *lo,
            UploadCapacityDist::Empirical { points } => {
                points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min)
            }
        }
    }

    pub fn hi(&self) -> f64 {
        match self {
            UploadCapacityDist::LogUniform { hi, .. } => *hi,
            UploadCapacityDist::Empirical { points } => {
                points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max)
            }
        }
    }

    /// Analytic mean.
    pub fn mean(&self) -> f64 {
        match *self {
            UploadCapacityDist::LogUniform { lo, hi } => {
                if hi == lo {
                    lo
                } else {
                    (hi - lo) / (hi / lo).ln()
                }
            }
            UploadCapacityDist::Empirical { ref points } => {
                points.iter().map(|&(v, p)| v * p).sum()
            }
        }
    }

    /// Maps a uniform variate `u` in `[0, 1]` to a capacity.
    pub fn capacity_from_uniform(&self, u: f64) -> f64 {
        match *self {
            UploadCapacityDist::LogUniform { lo, hi } => {
                if u >= 1.0 {
                    return hi;
                }
                let v = (lo.ln() + u * (hi.ln() - lo.ln())).exp();
                v.clamp(lo, hi)
            }
            UploadCapacityDist::Empirical { ref points } => {
                let mut acc = 0.0;
                for &(v, p) in points {
                    acc += p;
                    if u < acc {
                        return v;
                    }
                }
                // u at (or rounding past) the top of the table
                points.iter().rev().find(|p| p.1 > 0.0).map_or(points[0].0, |p| p.0)
            }
        }
    }

    /// Compact descriptor used in file headers, e.g. `log-uniform:40:200`.
    pub fn descriptor(&self) -> String {
        match self {
            UploadCapacityDist::LogUniform { lo, hi } => format!("log-uniform:{lo}:{hi}"),
            UploadCapacityDist::Empirical { points } => {
                let body: Vec<String> = points.iter().map(|(v, p)| format!("{v}@{p}")).collect();
                format!("empirical:{}", body.join(";"))
            }
        }
    }

    pub fn parse_descriptor(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("malformed capacity distribution descriptor `{s}`"));
        let dist = if let Some(rest) = s.strip_prefix("log-uniform:") {
            let (lo, hi) = rest.split_once(':').ok_or_else(bad)?;
            UploadCapacityDist::LogUniform {
                lo: lo.parse().map_err(|_| bad())?,
                hi: hi.parse().map_err(|_| bad())?,
            }
        } else if let Some(rest) = s.strip_prefix("empirical:") {
            let points = rest
                .split(';')
                .map(|item| {
                    let (v, p) = item.split_once('@').ok_or_else(bad)?;
                    Ok((v.parse().map_err(|_| bad())?, p.parse().map_err(|_| bad())?))
                })
                .collect::<Result<Vec<_>>>()?;
            UploadCapacityDist::Empirical { points }
        } else {
            return Err(bad());
        };
        dist.validate()?;
        Ok(dist)
    }
}

/// `-ln(u) / lambda` for `u` in `(0, 1]`.
#[inline]
pub fn interarrival_from_uniform(lambda: f64, u: f64) -> f64 {
    -u.ln() / lambda
}

/// Exponential inter-arrival time with rate `lambda` (per second). Strictly positive.
pub fn sample_interarrival(lambda: f64, rng: &mut SimRng) -> f64 {
    debug_assert!(lambda > 0.0);
    let u: f64 = rng.sample(Open01);
    interarrival_from_uniform(lambda, u)
}

pub fn sample_capacity(dist: &UploadCapacityDist, rng: &mut SimRng) -> f64 {
    let u: f64 = rng.random();
    dist.capacity_from_uniform(u)
}

/// Zipf-shaped per-swarm arrival rates: rank `r` (1-based) gets `lambda_max * r^-exponent`.
pub fn zipf_arrival_rates(k: usize, exponent: f64, lambda_max: f64) -> Vec<f64> {
    (1..=k)
        .map(|r| lambda_max * (r as f64).powf(-exponent))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwarmSpec {
    pub id: String,
    /// Arrivals per second.
    pub lambda: f64,
    /// KB.
    pub file_size: f64,
    #[serde(default)]
    pub dist: UploadCapacityDist,
    /// Target mean download time in seconds, for cost-minimizing controllers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_time: Option<f64>,
}

impl SwarmSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::Config(format!(
                "swarm {}: arrival rate must be positive, got {}",
                self.id, self.lambda
            )));
        }
        if !(self.file_size.is_finite() && self.file_size > 0.0) {
            return Err(Error::Config(format!(
                "swarm {}: file size must be positive, got {}",
                self.id, self.file_size
            )));
        }
        if let Some(t) = self.target_time {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::Config(format!(
                    "swarm {}: target time must be positive, got {t}",
                    self.id
                )));
            }
        }
        self.dist.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub swarms: Vec<SwarmSpec>,
    /// Total server bandwidth X, KBps.
    pub total_server_bandwidth: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Workload {
    pub fn validate(&self) -> Result<()> {
        if self.swarms.is_empty() {
            return Err(Error::Config("workload has no swarms".into()));
        }
        if !(self.total_server_bandwidth.is_finite() && self.total_server_bandwidth > 0.0) {
            return Err(Error::Config(format!(
                "total server bandwidth must be positive, got {}",
                self.total_server_bandwidth
            )));
        }
        let mut seen = HashSet::new();
        for s in &self.swarms {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Config(format!("duplicate swarm id `{}`", s.id)));
            }
            s.validate()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.swarms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.swarms.is_empty()
    }

    pub fn arrival_rates(&self) -> Vec<f64> {
        self.swarms.iter().map(|s| s.lambda).collect()
    }

    /// Independent random stream for swarm `index`; adding swarms leaves the others untouched.
    pub fn swarm_rng(&self, index: usize) -> SimRng {
        rng_from_seed(stream_seed(self.seed, index as u64))
    }
}

/// Named workloads used in the comparison experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardWorkload {
    ZipfMinAvg,
    ZipfMinMax,
    MinCostSix,
}

impl StandardWorkload {
    pub const ALL: [StandardWorkload; 3] = [
        StandardWorkload::ZipfMinAvg,
        StandardWorkload::ZipfMinMax,
        StandardWorkload::MinCostSix,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StandardWorkload::ZipfMinAvg => "zipf_min_avg",
            StandardWorkload::ZipfMinMax => "zipf_min_max",
            StandardWorkload::MinCostSix => "min_cost_six",
        }
    }
}

impl fmt::Display for StandardWorkload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StandardWorkload {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StandardWorkload::ALL
            .into_iter()
            .find(|w| w.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown standard workload `{s}`")))
    }
}

pub const ZIPF_SWARMS: usize = 20;
pub const ZIPF_EXPONENT: f64 = 1.5;
pub const ZIPF_LAMBDA_MAX: f64 = 0.5;
pub const MIN_COST_RATES: [f64; 6] = [0.5, 0.14, 0.12, 0.1, 0.08, 0.01];
pub const MIN_COST_TARGET: f64 = 150.0;

pub fn build_standard_workload(name: StandardWorkload) -> Workload {
    let file_size = mb(10.0);
    let dist = UploadCapacityDist::default();
    let zipf = |x: f64| Workload {
        swarms: zipf_arrival_rates(ZIPF_SWARMS, ZIPF_EXPONENT, ZIPF_LAMBDA_MAX)
            .into_iter()
            .enumerate()
            .map(|(i, lambda)| SwarmSpec {
                id: format!("zipf-{:02}", i + 1),
                lambda,
                file_size,
                dist: dist.clone(),
                target_time: None,
            })
            .collect(),
        total_server_bandwidth: x,
        seed: 1,
    };
    match name {
        StandardWorkload::ZipfMinAvg => zipf(200.0),
        StandardWorkload::ZipfMinMax => zipf(500.0),
        StandardWorkload::MinCostSix => Workload {
            swarms: MIN_COST_RATES
                .iter()
                .map(|&lambda| SwarmSpec {
                    id: format!("cost-{lambda:.2}"),
                    lambda,
                    file_size,
                    dist: dist.clone(),
                    target_time: Some(MIN_COST_TARGET),
                })
                .collect(),
            // Cost-minimizing controllers are unbudgeted; this is only an upper bound for solvers.
            total_server_bandwidth: 1000.0,
            seed: 1,
        },
    }
}
