//! Allocation solvers over per-swarm response curves.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{Inverse, InvertibleCurve, ResponseCurve};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Minimize the mean download time over all peers.
    MinAvg,
    /// Minimize the largest per-swarm mean download time.
    MinMax,
    /// Minimize total server bandwidth subject to per-swarm target download times.
    MinCost,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::MinAvg => "min_avg",
            Objective::MinMax => "min_max",
            Objective::MinCost => "min_cost",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Objective::MinAvg, Objective::MinMax, Objective::MinCost]
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown objective `{s}`")))
    }
}

/// One swarm as seen by a solver.
#[derive(Clone, Debug)]
pub struct SwarmModel<T, C> {
    pub curve: C,
    /// Arrivals per second.
    pub lambda: T,
    /// KB.
    pub file_size: T,
    /// Seconds.
    pub target_time: Option<T>,
}

impl<T: Scalar, C: ResponseCurve<T>> SwarmModel<T, C> {
    pub fn download_time(&self, x: T) -> T {
        self.file_size / self.curve.value(x)
    }
}

/// Repeatedly grants `step` (or what is left of the budget) to the swarm with the largest
/// `gain(i, x_i)`. Gains within the tie tolerance of the best split the grant equally.
pub fn greedy_allocate<T: Scalar>(
    start: Vec<T>,
    budget: T,
    step: T,
    gain: impl Fn(usize, T) -> T,
) -> Result<Vec<T>> {
    if start.is_empty() {
        return Err(Error::InvalidArgument("no swarms to allocate to".into()));
    }
    if !(step > T::zero()) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
    }
    let committed: T = start.iter().copied().sum();
    if committed > budget * (T::one() + T::epsilon() * T::lit(16.0)) {
        return Err(Error::Infeasible(format!(
            "initial allocation {committed} exceeds budget {budget}"
        )));
    }
    let mut x = start;
    let mut left = budget - committed;
    // Stop once the residue is rounding noise relative to the budget.
    let done = budget.abs() * T::epsilon() * T::lit(64.0);
    let mut tied = Vec::with_capacity(x.len());
    while left > done {
        let gains: Vec<T> = x.iter().enumerate().map(|(i, &xi)| gain(i, xi)).collect();
        let best = gains.iter().copied().fold(T::neg_infinity(), T::max);
        let tol = T::tie_tolerance(best);
        tied.clear();
        tied.extend((0..x.len()).filter(|&i| gains[i] >= best - tol));
        let chunk = step.min(left);
        let share = chunk / T::from_usize(tied.len()).unwrap();
        for &i in &tied {
            x[i] += share;
        }
        left -= chunk;
    }
    Ok(x)
}

/// Greedy ascent of `Σ w_i·f_i(x_i)` from `x_i = step`, granting one step at a time to the
/// swarm with the largest weighted marginal gain over that step.
pub fn gradient_ascent_allocate<T: Scalar, C: ResponseCurve<T>>(
    curves: &[C],
    weights: &[T],
    budget: T,
    step: T,
) -> Result<Vec<T>> {
    check_start(curves.len(), weights.len(), budget, step)?;
    let start = vec![step; curves.len()];
    greedy_allocate(start, budget, step, |i, x| {
        weights[i] * (curves[i].value(x + step) - curves[i].value(x))
    })
}

fn check_start<T: Scalar>(k: usize, w: usize, budget: T, step: T) -> Result<()> {
    if k != w {
        return Err(Error::InvalidArgument(format!("{k} curves but {w} weights")));
    }
    if !(step > T::zero()) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
    }
    if budget < T::from_usize(k).unwrap() * step {
        return Err(Error::Infeasible(format!(
            "budget {budget} cannot give {k} swarms an initial {step} each"
        )));
    }
    Ok(())
}

/// Greedy descent of the arrival-weighted download time `Σ λ_i·S_i / f_i(x_i)`, starting from
/// `start` per swarm. With positive concave curves every term is convex in `x_i`, so greedy
/// steps solve the discretized problem exactly.
pub fn min_avg_time_allocate<T: Scalar, C: ResponseCurve<T>>(
    models: &[SwarmModel<T, C>],
    budget: T,
    step: T,
    start: T,
) -> Result<Vec<T>> {
    check_start(models.len(), models.len(), budget, start.max(step))?;
    greedy_allocate(vec![start; models.len()], budget, step, |i, x| {
        let m = &models[i];
        m.lambda * m.file_size * (T::one() / m.curve.value(x) - T::one() / m.curve.value(x + step))
    })
}

/// Outcome of the target-raising search.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetRaising<T> {
    pub allocation: Vec<T>,
    /// Highest common rate that fit in the budget; `None` when even the first target did not.
    pub rate: Option<T>,
}

/// Raises a common target rate `y` by `rate_step` while `Σ inverse_i(y) <= budget`, returns
/// the last feasible allocation and spreads the leftover equally. Allocations are floored at
/// `min_bandwidth`. Falls back to an equal split when even `y = rate_step` does not fit.
pub fn target_raising_allocate<T: Scalar, C: InvertibleCurve<T>>(
    models: &[SwarmModel<T, C>],
    budget: T,
    rate_step: T,
    min_bandwidth: T,
) -> Result<TargetRaising<T>> {
    if models.is_empty() {
        return Err(Error::InvalidArgument("no swarms to allocate to".into()));
    }
    if !(rate_step > T::zero()) {
        return Err(Error::InvalidArgument(format!("rate step must be positive, got {rate_step}")));
    }
    let k = T::from_usize(models.len()).unwrap();
    let mut best: Option<(Vec<T>, T)> = None;
    let mut y = rate_step;
    loop {
        let mut xs = Vec::with_capacity(models.len());
        let mut saturated = false;
        for m in models {
            let inv = m.curve.inverse_capped(y, budget)?;
            saturated |= inv.is_saturated();
            xs.push(inv.value().max(min_bandwidth));
        }
        let total: T = xs.iter().copied().sum();
        if saturated || total > budget {
            break;
        }
        best = Some((xs, y));
        y += rate_step;
    }
    Ok(match best {
        Some((mut xs, rate)) => {
            let total: T = xs.iter().copied().sum();
            let share = (budget - total) / k;
            for x in &mut xs {
                *x += share;
            }
            TargetRaising { allocation: xs, rate: Some(rate) }
        }
        None => TargetRaising { allocation: vec![budget / k; models.len()], rate: None },
    })
}

/// Per-swarm bandwidth meeting each target download time.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetAllocation<T> {
    pub allocation: Vec<T>,
    /// Swarms whose target could not be met below `x_cap`.
    pub saturated: Vec<usize>,
}

/// `x_i = max(inverse_i(S_i / τ_i), min_bandwidth)` for every swarm.
pub fn min_cost_allocate<T: Scalar, C: InvertibleCurve<T>>(
    models: &[SwarmModel<T, C>],
    x_cap: T,
    min_bandwidth: T,
) -> Result<TargetAllocation<T>> {
    let mut allocation = Vec::with_capacity(models.len());
    let mut saturated = Vec::new();
    for (i, m) in models.iter().enumerate() {
        let tau = m.target_time.ok_or_else(|| {
            Error::Config(format!("swarm {i} has no target download time"))
        })?;
        let inv = m.curve.inverse_capped(m.file_size / tau, x_cap)?;
        if let Inverse::Saturated(_) = inv {
            saturated.push(i);
        }
        allocation.push(inv.value().max(min_bandwidth));
    }
    Ok(TargetAllocation { allocation, saturated })
}

/// Arrival-weighted mean download time predicted by the models.
pub fn mean_download_time<T: Scalar, C: ResponseCurve<T>>(models: &[SwarmModel<T, C>], x: &[T]) -> T {
    let num: T = models.iter().zip(x).map(|(m, &xi)| m.lambda * m.download_time(xi)).sum();
    let den: T = models.iter().map(|m| m.lambda).sum();
    num / den
}

/// Largest predicted per-swarm download time.
pub fn max_download_time<T: Scalar, C: ResponseCurve<T>>(models: &[SwarmModel<T, C>], x: &[T]) -> T {
    models
        .iter()
        .zip(x)
        .map(|(m, &xi)| m.download_time(xi))
        .fold(T::neg_infinity(), T::max)
}

/// Scalar value of `objective` for allocation `x` (lower is better). For `MinCost` this is the
/// total bandwidth, or infinity when some target is missed.
pub fn model_objective<T: Scalar, C: ResponseCurve<T>>(
    objective: Objective,
    models: &[SwarmModel<T, C>],
    x: &[T],
) -> T {
    match objective {
        Objective::MinAvg => mean_download_time(models, x),
        Objective::MinMax => max_download_time(models, x),
        Objective::MinCost => {
            let meets = models.iter().zip(x).all(|(m, &xi)| {
                m.target_time.is_none_or(|tau| m.download_time(xi) <= tau * (T::one() + T::lit(1e-9)))
            });
            if meets {
                x.iter().copied().sum()
            } else {
                T::infinity()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::{fit_concave_quadratic, FittedLine};

    struct Linear(f64);

    impl ResponseCurve<f64> for Linear {
        fn value(&self, x: f64) -> f64 {
            self.0 * x
        }
        fn slope(&self, _: f64) -> f64 {
            self.0
        }
    }

    fn quad(a: f64, b: f64, c: f64) -> FittedLine<f64> {
        let xs: Vec<f64> = (1..=10).map(|i| 10.0 * i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| a * x * x + b * x + c).collect();
        fit_concave_quadratic(&xs, &ys).unwrap()
    }

    #[test]
    fn steeper_curve_takes_everything() {
        let x = gradient_ascent_allocate(&[Linear(1.0), Linear(0.5)], &[1.0, 1.0], 100.0, 10.0).unwrap();
        assert_eq!(x, vec![90.0, 10.0]);
    }

    #[test]
    fn symmetric_curves_split_evenly() {
        let c = quad(-0.004, 1.2, 5.0);
        let x = gradient_ascent_allocate(&[c, c], &[1.0, 1.0], 100.0, 10.0).unwrap();
        assert_eq!(x, vec![50.0, 50.0]);
        let x = gradient_ascent_allocate(&[Linear(1.0), Linear(1.0)], &[1.0, 1.0], 100.0, 10.0).unwrap();
        assert_eq!(x, vec![50.0, 50.0]);
    }

    #[test]
    fn budget_too_small_is_infeasible() {
        let err = gradient_ascent_allocate(&[Linear(1.0), Linear(1.0)], &[1.0, 1.0], 15.0, 10.0).unwrap_err();
        assert_eq!(err.kind(), "infeasible");
    }

    #[test]
    fn partial_final_chunk() {
        let x = gradient_ascent_allocate(&[Linear(1.0), Linear(0.5)], &[1.0, 1.0], 97.0, 10.0).unwrap();
        assert!((x.iter().sum::<f64>() - 97.0).abs() < 1e-12);
        assert_eq!(x[1], 10.0);
    }

    #[test]
    fn single_swarm_gets_everything() {
        let c = quad(-0.004, 1.2, 5.0);
        let models = [SwarmModel { curve: c, lambda: 0.3, file_size: 10_000.0, target_time: None }];
        let x = min_avg_time_allocate(&models, 200.0, 5.0, 5.0).unwrap();
        assert_eq!(x, vec![200.0]);
    }

    #[test]
    fn identical_swarms_equal_targets() {
        let c = quad(-0.004, 1.2, 5.0);
        let m = SwarmModel { curve: c, lambda: 0.1, file_size: 10_000.0, target_time: None };
        let r = target_raising_allocate(&[m.clone(), m.clone(), m], 150.0, 1.0, 5.0).unwrap();
        assert!((r.allocation[0] - 50.0).abs() < 1e-9 && (r.allocation[2] - 50.0).abs() < 1e-9);
    }

    #[test]
    fn identity_lines_split_budget() {
        let c = quad(0.0, 1.0, 0.0);
        let m = SwarmModel { curve: c, lambda: 0.01, file_size: 10_000.0, target_time: None };
        let r = target_raising_allocate(&[m.clone(), m], 120.0, 1.0, 0.0).unwrap();
        assert!((r.allocation[0] - 60.0).abs() < 1e-9);
        assert!((r.allocation[1] - 60.0).abs() < 1e-9);
        assert_eq!(r.rate, Some(60.0));
    }

    #[test]
    fn unreachable_first_target_falls_back_to_equal_split() {
        let c = quad(0.0, 1.0, 0.0);
        let m = SwarmModel { curve: c, lambda: 0.01, file_size: 10_000.0, target_time: None };
        let r = target_raising_allocate(&[m.clone(), m], 1.0, 5.0, 0.0).unwrap();
        assert_eq!(r.rate, None);
        assert_eq!(r.allocation, vec![0.5, 0.5]);
    }

    #[test]
    fn min_cost_on_identity_line() {
        let c = quad(0.0, 1.0, 0.0);
        let m = SwarmModel { curve: c, lambda: 0.01, file_size: 10_000.0, target_time: Some(150.0) };
        let r = min_cost_allocate(&[m], 1000.0, 5.0).unwrap();
        assert!((r.allocation[0] - 66.6667).abs() < 1e-3);
        assert!(r.saturated.is_empty());
    }

    #[test]
    fn min_cost_floor_and_saturation() {
        // A fast swarm already beats a slow target at zero bandwidth.
        let fast = quad(0.0, 0.1, 80.0);
        let m = SwarmModel { curve: fast, lambda: 0.5, file_size: 10_000.0, target_time: Some(300.0) };
        let r = min_cost_allocate(&[m], 1000.0, 5.0).unwrap();
        assert_eq!(r.allocation, vec![5.0]);
        // A flat curve cannot reach a demanding target.
        let flat = quad(0.0, 0.0, 20.0);
        let m = SwarmModel { curve: flat, lambda: 0.1, file_size: 10_000.0, target_time: Some(100.0) };
        let r = min_cost_allocate(&[m], 1000.0, 5.0).unwrap();
        assert_eq!(r.saturated, vec![0]);
        assert_eq!(r.allocation, vec![1000.0]);
        let m = SwarmModel { curve: flat, lambda: 0.1, file_size: 10_000.0, target_time: None };
        assert!(min_cost_allocate(&[m], 1000.0, 5.0).is_err());
    }

    #[test]
    fn objectives() {
        let c = quad(0.0, 1.0, 0.0);
        let m = |lambda| SwarmModel { curve: c, lambda, file_size: 10_000.0, target_time: Some(150.0) };
        let models = [m(1.0), m(1.0)];
        // download times 100 s and 200 s
        let x = [100.0, 50.0];
        assert!((model_objective(Objective::MinAvg, &models, &x) - 150.0).abs() < 1e-9);
        assert!((model_objective(Objective::MinMax, &models, &x) - 200.0).abs() < 1e-9);
        assert!(model_objective(Objective::MinCost, &models, &x).is_infinite());
        assert!((model_objective(Objective::MinCost, &models, &[70.0, 70.0]) - 140.0).abs() < 1e-9);
    }

    #[test]
    fn objective_names() {
        for o in [Objective::MinAvg, Objective::MinMax, Objective::MinCost] {
            assert_eq!(o.name().parse::<Objective>().unwrap(), o);
        }
        assert!("fastest".parse::<Objective>().is_err());
    }
}
