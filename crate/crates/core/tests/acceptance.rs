//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits nonzero if any fail.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;

use swarmalloc::cheatsheet::{self, measure_point, CheatSheet, GridSpec, RunPolicy};
use swarmalloc::controllers::ControllerKind;
use swarmalloc::fit::{FittedLine, ResponseCurve};
use swarmalloc::harness::{brute_force_allocation, run_experiment_with, timeseries_csv, ExperimentConfig, Report, WorkloadSource};
use swarmalloc::seed::rng_from_seed;
use swarmalloc::solver::{
    gradient_ascent_allocate, min_avg_time_allocate, model_objective, target_raising_allocate, Objective, SwarmModel,
};
use swarmalloc::swarmsim::{SupplyModelParams, SwarmState};
use swarmalloc::workload::{StandardWorkload, SwarmSpec, UploadCapacityDist, MIN_COST_TARGET};

const MU: f64 = 100.0;
const S: f64 = 10_000.0;
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn grid_y(x: f64, lambda: f64) -> f64 {
    let p = SupplyModelParams::default();
    measure_point(x, lambda, S, &UploadCapacityDist::default(), 5, &p, &RunPolicy::default(), 11)
        .expect("measurement")
        .y_mean
}

fn client_server_regime() -> Outcome {
    let start = Instant::now();
    let lambda = 1.0 * MU / S;
    let mut worst = (0.0, 0.0, 0.0);
    for x in cheatsheet::linspace(MU / 10.0, MU, 10) {
        let y = grid_y(x, lambda);
        let err = (y - x).abs() / x;
        if err > worst.2 {
            worst = (x, y, err);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst.2 <= 0.15 && secs < 120.0,
        format!(
            "worst |y-x|/x = {:.3} at x={} (y={:.1}), limit 0.15; {:.1} s wall-clock",
            worst.2, worst.0, worst.1, secs
        ),
    )
}

fn self_sustaining_regime() -> Outcome {
    let lambda = 50.0 * MU / S;
    let low = grid_y(MU / 10.0, lambda);
    let high = grid_y(MU, lambda);
    outcome(
        low >= 75.0 && low >= 0.75 * high,
        format!("y(mu/10) = {low:.1}, y(mu) = {high:.1}, ratio {:.3}", low / high),
    )
}

fn shape_properties(cs: &CheatSheet<f64>) -> Outcome {
    let grid = cs.grid();
    let mut violations = Vec::new();
    for fi in 0..grid.file_sizes.len() {
        for ci in 0..grid.coverage_values.len() {
            let ys: Vec<f64> = (0..grid.x_values.len()).map(|xi| cs.cell(fi, ci, xi).y_mean).collect();
            for i in 1..ys.len() {
                if ys[i] < ys[i - 1] - 0.05 * ys[i - 1] {
                    violations.push(format!("decrease S={} cov={} i={i}", grid.file_sizes[fi], grid.coverage_values[ci]));
                }
                if i + 1 < ys.len() && ys[i + 1] - 2.0 * ys[i] + ys[i - 1] > 0.05 * ys[i] {
                    violations.push(format!("convex S={} cov={} i={i}", grid.file_sizes[fi], grid.coverage_values[ci]));
                }
            }
        }
    }

    let mut rng = rng_from_seed(3);
    let (mut worst_fd, mut worst_trip) = (0.0f64, 0.0f64);
    for _ in 0..500 {
        let x = rng.random_range(11.0..99.0);
        let lambda = rng.random_range(0.005..2.0);
        let s = rng.random_range(5_000.0..20_000.0);
        let h = 1e-4;
        let d = cs.derivative(x, MU, lambda, s).unwrap();
        let fd = (cs.lookup(x + h, MU, lambda, s).unwrap() - cs.lookup(x - h, MU, lambda, s).unwrap()) / (2.0 * h);
        if d.abs() > 1e-9 {
            worst_fd = worst_fd.max((fd - d).abs() / d.abs());
        }
        let y = cs.lookup(x, MU, lambda, s).unwrap();
        if d > 1e-9 {
            let back = cs.inverse(y, MU, lambda, s, 1e6).unwrap().value();
            worst_trip = worst_trip.max((back - x).abs());
        }
    }
    outcome(
        violations.is_empty() && worst_fd <= 1e-4 && worst_trip <= 1e-3 * MU,
        format!(
            "{} shape violations{}; worst FD rel err {worst_fd:.2e}; worst round trip {worst_trip:.2e} KBps",
            violations.len(),
            violations.first().map(|v| format!(" (first: {v})")).unwrap_or_default()
        ),
    )
}

fn littles_law() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for (i, (lambda, x)) in [(0.5, 10.0), (0.1, 30.0), (0.02, 60.0)].into_iter().enumerate() {
        let spec = SwarmSpec {
            id: format!("little-{i}"),
            lambda,
            file_size: S,
            dist: UploadCapacityDist::default(),
            target_time: None,
        };
        let mut sim = SwarmState::new(spec, SupplyModelParams::default(), x, rng_from_seed(40 + i as u64)).unwrap();
        sim.advance_quiet(60_000.0).unwrap();
        let pop = sim.mean_population_since(2000.0).unwrap();
        let (tau, _) = sim.mean_download_time_since(2000.0).unwrap();
        let err = (pop - lambda * tau).abs() / (lambda * tau);
        pass &= err <= 0.10;
        parts.push(format!("lambda={lambda} x={x}: N={pop:.1} vs {:.1} ({:.1}%)", lambda * tau, 100.0 * err));
    }
    outcome(pass, parts.join("; "))
}

fn random_line(rng: &mut impl Rng) -> FittedLine<f64> {
    let a = rng.random_range(-0.006..0.0);
    let b = -2.0 * a * MU + rng.random_range(0.05..0.6);
    FittedLine { a, b, c: rng.random_range(0.5..20.0), x_min: 10.0, x_max: MU, rms: 0.0 }
}

fn solver_vs_oracle() -> Outcome {
    let start = Instant::now();
    let step = 5.0;
    let mut rng = rng_from_seed(17);
    let (mut worst_avg, mut worst_grad, mut worst_minmax) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..12 {
        let k = rng.random_range(2..=3usize);
        let models: Vec<SwarmModel<f64, FittedLine<f64>>> = (0..k)
            .map(|_| SwarmModel {
                curve: random_line(&mut rng),
                lambda: rng.random_range(0.01..0.5),
                file_size: S,
                target_time: None,
            })
            .collect();
        let budget = step * rng.random_range((2 * k) as u32..=40) as f64;

        let best = brute_force_allocation(&models, Objective::MinAvg, budget, step).unwrap();
        let best_v = model_objective(Objective::MinAvg, &models, &best);
        let cs = min_avg_time_allocate(&models, budget, step, step).unwrap();
        worst_avg = worst_avg.max(model_objective(Objective::MinAvg, &models, &cs) / best_v - 1.0);

        // gradient ascent maximizes the λ-weighted aggregate rate
        let curves: Vec<FittedLine<f64>> = models.iter().map(|m| m.curve).collect();
        let weights: Vec<f64> = models.iter().map(|m| m.lambda).collect();
        let rate = |x: &[f64]| -> f64 { curves.iter().zip(&weights).zip(x).map(|((c, w), &xi)| w * c.value(xi)).sum() };
        let ga = gradient_ascent_allocate(&curves, &weights, budget, step).unwrap();
        worst_grad = worst_grad.max(1.0 - rate(&ga) / best_rate(&curves, &weights, budget, step));

        // Rounding any allocation up to the lattice costs under one step per swarm, so the
        // continuous optimum lies between the lattice optima at X + k·step and at X.
        let mm = target_raising_allocate(&models, budget, 0.01, 0.0).unwrap().allocation;
        let mm_v = model_objective(Objective::MinMax, &models, &mm);
        let lattice = |b: f64| {
            let x = brute_force_allocation(&models, Objective::MinMax, b, step).unwrap();
            model_objective(Objective::MinMax, &models, &x)
        };
        let (lower, upper) = (lattice(budget + k as f64 * step), lattice(budget));
        let outside = (lower - mm_v).max(mm_v - upper).max(0.0) / upper;
        worst_minmax = worst_minmax.max(outside);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_avg <= 0.02 && worst_grad <= 0.02 && worst_minmax <= 1e-9 && secs < 60.0,
        format!(
            "min-avg gap {:.3}%, gradient gap {:.3}%, min-max outside one-step bracket by {:.3}%, {secs:.2} s",
            100.0 * worst_avg,
            100.0 * worst_grad,
            100.0 * worst_minmax
        ),
    )
}

// Exhaustive maximum of the weighted rate on the step lattice with every swarm at >= step.
fn best_rate(curves: &[FittedLine<f64>], weights: &[f64], budget: f64, step: f64) -> f64 {
    let units = (budget / step).round() as usize;
    let k = curves.len();
    let mut best = f64::NEG_INFINITY;
    let mut cur = vec![1usize; k];
    fn walk(i: usize, left: usize, cur: &mut Vec<usize>, f: &dyn Fn(&[usize]) -> f64, best: &mut f64) {
        if i + 1 == cur.len() {
            cur[i] = left;
            *best = best.max(f(cur));
            return;
        }
        for u in 1..left {
            cur[i] = u;
            walk(i + 1, left - u, cur, f, best);
        }
    }
    let f = |u: &[usize]| -> f64 {
        u.iter().zip(curves).zip(weights).map(|((&n, c), w)| w * c.value(n as f64 * step)).sum()
    };
    walk(0, units, &mut cur, &f, &mut best);
    best
}

fn run(
    cs: &Arc<CheatSheet<f64>>,
    workload: StandardWorkload,
    controller: ControllerKind,
    objective: Objective,
    seed: u64,
) -> Report {
    let mut cfg = ExperimentConfig::new(WorkloadSource::Standard(workload), controller, objective);
    cfg.seed = Some(seed);
    run_experiment_with(&cfg, controller.needs_cheatsheet().then(|| cs.clone())).expect("experiment")
}

struct Sweep {
    values: Vec<f64>,
    steady: Vec<Option<f64>>,
}

fn sweep(cs: &Arc<CheatSheet<f64>>, workload: StandardWorkload, controller: ControllerKind, objective: Objective) -> Sweep {
    let reports: Vec<Report> = SEEDS.iter().map(|&s| run(cs, workload, controller, objective, s)).collect();
    Sweep {
        values: reports.iter().map(|r| r.summary.objective_value.expect("objective")).collect(),
        steady: reports.iter().map(|r| r.summary.time_to_steady_state).collect(),
    }
}

fn min_avg_comparison(cs: &Arc<CheatSheet<f64>>) -> Outcome {
    let w = StandardWorkload::ZipfMinAvg;
    let ours = sweep(cs, w, ControllerKind::CheatSheet, Objective::MinAvg);
    let ours_mean = mean(&ours.values);
    let mut detail = vec![format!("cheat_sheet {ours_mean:.1} s")];
    let mut pass = true;
    let mut best_baseline = f64::INFINITY;
    let mut antfarm_steady = None;
    for kind in [ControllerKind::EqualSplit, ControllerKind::BtCap, ControllerKind::AntFarm] {
        let b = sweep(cs, w, kind, Objective::MinAvg);
        let m = mean(&b.values);
        best_baseline = best_baseline.min(m);
        pass &= ours_mean < m;
        detail.push(format!("{kind} {m:.1} s"));
        if kind == ControllerKind::AntFarm {
            antfarm_steady = Some(b.steady);
        }
    }
    let margin = 1.0 - ours_mean / best_baseline;
    pass &= margin >= 0.10;
    detail.push(format!("margin over best baseline {:.1}% (need >= 10%)", 100.0 * margin));

    let settle = |v: &[Option<f64>]| -> Option<f64> { v.iter().copied().collect::<Option<Vec<f64>>>().map(|t| mean(&t)) };
    match (settle(&ours.steady), antfarm_steady.as_deref().and_then(settle)) {
        (Some(a), Some(b)) => {
            pass &= a <= b;
            detail.push(format!("steady state at {a:.0} s vs ant_farm {b:.0} s"));
        }
        (a, b) => {
            pass &= a.is_some();
            detail.push(format!("steady state {a:?} vs ant_farm {b:?}"));
        }
    }
    outcome(pass, detail.join(", "))
}

fn min_max_comparison(cs: &Arc<CheatSheet<f64>>) -> Outcome {
    let w = StandardWorkload::ZipfMinMax;
    let ours = mean(&sweep(cs, w, ControllerKind::CheatSheet, Objective::MinMax).values);
    let prop = mean(&sweep(cs, w, ControllerKind::PropSplit, Objective::MinMax).values);
    let equal = mean(&sweep(cs, w, ControllerKind::EqualSplit, Objective::MinMax).values);
    outcome(
        prop >= 1.5 * ours && ours <= 1.05 * equal,
        format!(
            "MAD cheat_sheet {ours:.1} s, prop_split {prop:.1} s ({:.2}x), equal_split {equal:.1} s ({:.2}x)",
            prop / ours,
            ours / equal
        ),
    )
}

fn min_cost_result(cs: &Arc<CheatSheet<f64>>) -> Outcome {
    let w = StandardWorkload::MinCostSix;
    let mut pass = true;
    let mut misses = Vec::new();
    let (mut ours_kb, mut aiad_kb) = (0.0, 0.0);
    let mut aiad_start_ok = true;
    let expected_start = S / MIN_COST_TARGET;
    for &seed in &SEEDS {
        let ours = run(cs, w, ControllerKind::CheatSheet, Objective::MinCost, seed);
        for s in &ours.summary.swarms {
            let t = s.mean_download_time.unwrap_or(f64::INFINITY);
            if (t - MIN_COST_TARGET).abs() > 0.10 * MIN_COST_TARGET {
                misses.push(format!("seed {seed} {} {t:.0} s", s.id));
            }
        }
        let aiad = run(cs, w, ControllerKind::Aiad, Objective::MinCost, seed);
        aiad_start_ok &= aiad.rows[0].swarms.iter().all(|r| r.x == expected_start && r.x.round() == 67.0);
        ours_kb += ours.summary.server_kb_total;
        aiad_kb += aiad.summary.server_kb_total;
    }
    pass &= misses.is_empty() && aiad_kb >= ours_kb && aiad_start_ok;
    outcome(
        pass,
        format!(
            "server KB aiad {aiad_kb:.0} vs cheat_sheet {ours_kb:.0}; aiad starts at S/tau {}; {} off-target swarm runs{}",
            if aiad_start_ok { "yes" } else { "no" },
            misses.len(),
            if misses.is_empty() { String::new() } else { format!(": {}", misses.join(", ")) }
        ),
    )
}

fn determinism(cs: &Arc<CheatSheet<f64>>) -> Outcome {
    let mut same = true;
    for (w, kind, obj) in [
        (StandardWorkload::ZipfMinAvg, ControllerKind::CheatSheet, Objective::MinAvg),
        (StandardWorkload::ZipfMinAvg, ControllerKind::AntFarm, Objective::MinAvg),
        (StandardWorkload::MinCostSix, ControllerKind::Aiad, Objective::MinCost),
    ] {
        let a = timeseries_csv(&run(cs, w, kind, obj, 9));
        let b = timeseries_csv(&run(cs, w, kind, obj, 9));
        same &= a.as_bytes() == b.as_bytes();
    }
    outcome(same, format!("timeseries byte-identical on repeat: {same}"))
}

fn main() -> ExitCode {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();

    let start = Instant::now();
    let grid = GridSpec::desk_scale();
    let cs = cheatsheet::build::<f64>(&grid).expect("desk-scale build");
    let secs = start.elapsed().as_secs_f64();
    let tractable = outcome(
        secs < 1800.0 && cs.cells().len() == 300,
        format!("{} cells x {} reps in {secs:.1} s", cs.cells().len(), grid.reps),
    );
    let cs = Arc::new(cs);

    results.push((1, "client-server regime", client_server_regime()));
    results.push((2, "self-sustaining regime", self_sustaining_regime()));
    results.push((3, "shape properties", shape_properties(&cs)));
    results.push((4, "little's law", littles_law()));
    results.push((5, "solver vs oracle", solver_vs_oracle()));
    results.push((6, "min-avg comparison", min_avg_comparison(&cs)));
    results.push((7, "min-max comparison", min_max_comparison(&cs)));
    results.push((8, "min-cost result", min_cost_result(&cs)));
    results.push((9, "determinism", determinism(&cs)));
    results.push((10, "campaign tractability", tractable));

    let mut failed = 0;
    for (n, name, o) in &results {
        println!("{} criterion {n:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
