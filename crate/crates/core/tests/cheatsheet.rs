use proptest::prelude::*;

use swarmalloc::cheatsheet::{build, measure_point, round6, CheatSheet, CheatSheetMeta, GridSpec, MeasuredPoint, RunPolicy};
use swarmalloc::fit::{fit_concave_quadratic, ResponseCurve};
use swarmalloc::seed::rng_from_seed;
use swarmalloc::swarmsim::SupplyModelParams;
use swarmalloc::workload::UploadCapacityDist;
use swarmalloc::Error;

use rand::Rng;

const MU: f64 = 100.0;
const SIZES: [f64; 3] = [5_000.0, 10_000.0, 20_000.0];

fn measured_y(x: f64, lambda: f64) -> f64 {
    measure_point(x, lambda, 10_000.0, &UploadCapacityDist::default(), 5, &SupplyModelParams::default(), &RunPolicy::default(), 8)
        .unwrap()
        .y_mean
}

#[test]
fn coverage_one_behaves_like_client_server() {
    let y = measured_y(50.0, 0.01);
    assert!((y - 50.0).abs() <= 0.15 * 50.0, "y = {y:.1} KBps, expected 50 ± 15%");
}

#[test]
fn coverage_fifty_is_self_sustaining() {
    let y = measured_y(10.0, 0.5);
    assert!(y >= 75.0, "{y}");
}

#[test]
fn build_measures_every_cell() {
    let mut grid = GridSpec::standard(MU, UploadCapacityDist::default(), vec![10_000.0]);
    grid.reps = 1;
    grid.run_policy = RunPolicy { warmup: 500.0, min_completions: 20, min_duration: 2000.0, max_duration: 20_000.0 };
    let cs = build::<f64>(&grid).unwrap();
    assert_eq!(cs.cells().len(), 100);
    assert!(cs.cells().iter().all(|c| c.y_mean > 0.0 && c.reps == 1 && c.y_std == 0.0));
    assert_eq!(cs.fit_lines().len(), 10);
}

// Smooth concave surface standing in for measurements: saturates faster with coverage and
// gains a little with file size. Cells are rounded like built ones.
fn surface(x: f64, coverage: f64, s: f64) -> f64 {
    let ceiling = 85.0 * (1.0 + 0.02 * (s / 10_000.0).ln());
    let knee = 8.0 + 120.0 / coverage;
    ceiling * (1.0 - (-x / knee).exp()) + 0.05 * x
}

fn synthetic() -> CheatSheet<f64> {
    let grid = GridSpec::standard(MU, UploadCapacityDist::default(), SIZES.to_vec());
    let mut cells = Vec::new();
    for &s in &grid.file_sizes {
        for &cov in &grid.coverage_values {
            for &x in &grid.x_values {
                cells.push(MeasuredPoint { y_mean: round6(surface(x, cov, s)), y_std: 0.0, reps: 5 });
            }
        }
    }
    CheatSheet::from_cells(grid, cells, CheatSheetMeta { build_timestamp: 0 }).unwrap()
}

#[test]
fn grid_coordinates_reproduce_the_fitted_line() {
    let cs = synthetic();
    let grid = cs.grid().clone();
    for (fi, &s) in grid.file_sizes.iter().enumerate() {
        for (ci, &cov) in grid.coverage_values.iter().enumerate() {
            for &x in &grid.x_values {
                let y = cs.lookup(x, MU, grid.lambda_for(cov, s), s).unwrap();
                let line = cs.line(fi, ci);
                assert!((y - line.value(x)).abs() < 1e-9, "S={s} cov={cov} x={x}");
                assert!((y - surface(x, cov, s)).abs() <= 4.0 * line.rms + 1e-9);
            }
        }
    }
}

#[test]
fn save_load_round_trip() {
    let cs = synthetic();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sheet.csv");
    cs.save(&path).unwrap();
    let back = CheatSheet::<f64>::load(&path).unwrap();
    assert_eq!(back.to_csv(), cs.to_csv());
    assert_eq!(back.cells(), cs.cells());
    assert_eq!(back.lookup(37.0, MU, 0.2, 8000.0).unwrap(), cs.lookup(37.0, MU, 0.2, 8000.0).unwrap());
    assert!(matches!(back.lookup(37.0, 120.0, 0.2, 8000.0), Err(Error::ModelMismatch(_))));
}

#[test]
fn lookup_is_non_decreasing_in_bandwidth() {
    let cs = synthetic();
    for lambda in [0.003, 0.01, 0.05, 0.1, 0.3, 0.7, 2.0] {
        for s in [4_000.0, 5_000.0, 7_500.0, 10_000.0, 15_000.0, 20_000.0, 30_000.0] {
            let mut prev = f64::NEG_INFINITY;
            for i in 0..=400 {
                let x = 0.5 * i as f64;
                let y = cs.lookup(x, MU, lambda, s).unwrap();
                assert!(y >= prev - 1e-12, "λ={lambda} S={s} x={x}");
                prev = y;
            }
        }
    }
}

proptest! {
    #[test]
    fn noisy_concave_points_fit_concave_non_decreasing(
        a in -0.01f64..0.0,
        slope_end in 0.0f64..1.0,
        c in 0.0f64..30.0,
        noise in 0.0f64..5.0,
        seed in any::<u64>(),
    ) {
        let b = slope_end - 2.0 * a * 100.0;
        let mut rng = rng_from_seed(seed);
        let xs: Vec<f64> = (1..=10).map(|i| 10.0 * i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| a * x * x + b * x + c + rng.random_range(-noise..=noise)).collect();
        let line = fit_concave_quadratic(&xs, &ys).unwrap();
        prop_assert!(line.is_concave());
        prop_assert!(line.is_non_decreasing());
        for w in xs.windows(2) {
            prop_assert!(line.value(w[1]) >= line.value(w[0]) - 1e-9);
        }
    }

    #[test]
    fn lookup_is_continuous_across_cell_edges(ci in 0usize..10, fi in 0usize..3, x in 10.0f64..100.0) {
        let cs = synthetic();
        let grid = cs.grid();
        let (s, cov) = (grid.file_sizes[fi], grid.coverage_values[ci]);
        let at = cs.lookup(x, MU, grid.lambda_for(cov, s), s).unwrap();
        for factor in [1.0 - 1e-12, 1.0 + 1e-12] {
            let lam = cs.lookup(x, MU, grid.lambda_for(cov, s) * factor, s).unwrap();
            prop_assert!((lam - at).abs() < 1e-9);
            // moving S at fixed λ changes coverage too; both axes meet at the edge
            let size = cs.lookup(x, MU, grid.lambda_for(cov, s), s * factor).unwrap();
            prop_assert!((size - at).abs() < 1e-9);
        }
    }

    #[test]
    fn derivative_matches_finite_difference(x in 10.5f64..99.5, lambda in 0.002f64..3.0, s in 3_000.0f64..40_000.0) {
        let cs = synthetic();
        let h = 1e-4;
        let d = cs.derivative(x, MU, lambda, s).unwrap();
        let fd = (cs.lookup(x + h, MU, lambda, s).unwrap() - cs.lookup(x - h, MU, lambda, s).unwrap()) / (2.0 * h);
        prop_assert!((fd - d).abs() <= 1e-4 * d.abs().max(1e-6), "d={} fd={}", d, fd);
    }

    #[test]
    fn derivative_above_mu_is_inverse_population(x in 101.0f64..400.0, lambda in 0.002f64..3.0, s in 3_000.0f64..40_000.0) {
        let cs = synthetic();
        let y_mu = cs.lookup(MU, MU, lambda, s).unwrap();
        let d = cs.derivative(x, MU, lambda, s).unwrap();
        prop_assert!((d - y_mu / (lambda * s)).abs() <= 1e-12 * d.max(1.0));
    }

    #[test]
    fn inverse_round_trips(x in 10.0f64..300.0, lambda in 0.002f64..3.0, s in 3_000.0f64..40_000.0) {
        let cs = synthetic();
        prop_assume!(cs.derivative(x, MU, lambda, s).unwrap() > 1e-9);
        let y = cs.lookup(x, MU, lambda, s).unwrap();
        let back = cs.inverse(y, MU, lambda, s, 1e6).unwrap();
        prop_assert!(!back.is_saturated());
        prop_assert!((back.value() - x).abs() <= 1e-3 * MU, "x={} back={}", x, back.value());
    }
}
