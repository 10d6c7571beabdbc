//! Measured swarm-performance model over (file size, server bandwidth, healthy swarm size).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_concave_quadratic, FittedLine, InvertibleCurve, ResponseCurve};
pub use crate::fit::Inverse;
use crate::scalar::Scalar;
use crate::seed::{derive_seed, rng_from_seed};
use crate::swarmsim::{SupplyModelParams, SwarmState};
use crate::workload::{SwarmSpec, UploadCapacityDist};

pub const SCHEMA_VERSION: u32 = 1;
pub const COVERAGE_MIN: f64 = 1.0;
pub const COVERAGE_MAX: f64 = 50.0;
const DATA_HEADER: &str = "file_size_kb,x_kbps,coverage,y_mean_kbps,y_std_kbps,reps";

/// Rounds to 6 significant digits; the value survives a text round trip unchanged.
pub fn round6(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.5e}").parse().expect("formatted float parses")
}

/// Shortest decimal text of `round6(v)`.
pub fn fmt6(v: f64) -> String {
    format!("{}", round6(v))
}

/// When a single measurement run stops.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunPolicy {
    /// Peers arriving before this time are excluded from statistics.
    pub warmup: f64,
    pub min_completions: usize,
    pub min_duration: f64,
    /// Hard stop, whatever the completion count.
    pub max_duration: f64,
}

impl Default for RunPolicy {
    fn default() -> Self {
        RunPolicy {
            warmup: 2000.0,
            min_completions: 200,
            min_duration: 20_000.0,
            max_duration: 200_000.0,
        }
    }
}

impl RunPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.warmup >= 0.0 && self.min_duration > self.warmup && self.max_duration >= self.min_duration)
        {
            return Err(Error::Config(format!(
                "run policy needs 0 <= warmup < min_duration <= max_duration, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub mu: f64,
    #[serde(default)]
    pub dist: UploadCapacityDist,
    pub x_values: Vec<f64>,
    pub coverage_values: Vec<f64>,
    pub file_sizes: Vec<f64>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub run_policy: RunPolicy,
    #[serde(default)]
    pub params: SupplyModelParams,
    #[serde(default)]
    pub seed: u64,
}

fn default_reps() -> usize {
    5
}

/// `count` equally spaced values from `lo` to `hi` inclusive, rounded to 6 significant digits.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![round6(hi)];
    }
    (0..count)
        .map(|i| round6(lo + (hi - lo) * i as f64 / (count - 1) as f64))
        .collect()
}

impl GridSpec {
    /// Ten bandwidths from `mu/10` to `mu`, ten coverages from 1 to 50.
    pub fn standard(mu: f64, dist: UploadCapacityDist, file_sizes: Vec<f64>) -> Self {
        GridSpec {
            mu,
            dist,
            x_values: linspace(mu / 10.0, mu, 10),
            coverage_values: linspace(COVERAGE_MIN, COVERAGE_MAX, 10),
            file_sizes,
            reps: default_reps(),
            run_policy: RunPolicy::default(),
            params: SupplyModelParams::default(),
            seed: 0,
        }
    }

    /// 5, 10 and 20 MB at μ = 100 KBps.
    pub fn desk_scale() -> Self {
        Self::standard(100.0, UploadCapacityDist::default(), vec![5_000.0, 10_000.0, 20_000.0])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(Error::Config(format!("grid mu must be positive, got {}", self.mu)));
        }
        self.dist.validate()?;
        self.params.validate()?;
        self.run_policy.validate()?;
        if self.reps == 0 {
            return Err(Error::Config("reps must be >= 1".into()));
        }
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[1] > w[0]);
        if self.x_values.len() < 3 || !increasing(&self.x_values) || self.x_values[0] <= 0.0 {
            return Err(Error::Config(
                "x_values must hold at least 3 strictly increasing positive values".into(),
            ));
        }
        if (self.x_values[self.x_values.len() - 1] - self.mu).abs() > 1e-9 * self.mu {
            return Err(Error::Config("the largest x value must equal mu".into()));
        }
        if self.coverage_values.is_empty()
            || !increasing(&self.coverage_values)
            || self.coverage_values[0] < COVERAGE_MIN
            || self.coverage_values[self.coverage_values.len() - 1] > COVERAGE_MAX
        {
            return Err(Error::Config(format!(
                "coverage_values must be strictly increasing within [{COVERAGE_MIN}, {COVERAGE_MAX}]"
            )));
        }
        if self.file_sizes.is_empty() || !increasing(&self.file_sizes) || self.file_sizes[0] <= 0.0 {
            return Err(Error::Config("file_sizes must be strictly increasing and positive".into()));
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.file_sizes.len() * self.coverage_values.len() * self.x_values.len()
    }

    /// Arrival rate that gives `coverage` healthy peers for file size `s`.
    pub fn lambda_for(&self, coverage: f64, s: f64) -> f64 {
        coverage * self.mu / s
    }

    fn cell_index(&self, fi: usize, ci: usize, xi: usize) -> usize {
        (fi * self.coverage_values.len() + ci) * self.x_values.len() + xi
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasuredPoint {
    pub y_mean: f64,
    pub y_std: f64,
    pub reps: usize,
}

/// One measurement run: returns the mean download time of post-warm-up arrivals, if any
/// completed.
pub fn measure_run(
    spec: &SwarmSpec,
    params: &SupplyModelParams,
    policy: &RunPolicy,
    x: f64,
    seed: u64,
) -> Result<Option<f64>> {
    const CHUNK: f64 = 1000.0;
    let mut sim = SwarmState::new(spec.clone(), *params, x, rng_from_seed(seed))?;
    loop {
        let t = (sim.clock() + CHUNK).min(policy.max_duration);
        sim.advance_quiet(t)?;
        let done = sim.mean_download_time_since(policy.warmup);
        let enough = done.is_some_and(|(_, n)| n >= policy.min_completions);
        if (t >= policy.min_duration && enough) || t >= policy.max_duration {
            return Ok(done.map(|d| d.0));
        }
    }
}

/// Runs `reps` independent simulations and summarizes `y = S / τ` across them. A run with no
/// completions is re-seeded once before the point is declared failed.
pub fn measure_point(
    x: f64,
    lambda: f64,
    file_size: f64,
    dist: &UploadCapacityDist,
    reps: usize,
    params: &SupplyModelParams,
    policy: &RunPolicy,
    seed: u64,
) -> Result<MeasuredPoint> {
    let failure = |reason: String| Error::Measurement {
        file_size_kb: file_size,
        x_kbps: x,
        coverage: lambda * file_size / params.mu_ref,
        reason,
    };
    if !(x > 0.0) || reps == 0 {
        return Err(failure(format!("need x > 0 and reps >= 1, got x={x}, reps={reps}")));
    }
    let spec = SwarmSpec {
        id: "measure".into(),
        lambda,
        file_size,
        dist: dist.clone(),
        target_time: None,
    };
    let mut ys = Vec::with_capacity(reps);
    for rep in 0..reps {
        let mut attempt = 0u64;
        let tau = loop {
            let run_seed = derive_seed(seed, &[rep as u64, attempt]);
            match measure_run(&spec, params, policy, x, run_seed)? {
                Some(tau) => break tau,
                None if attempt == 0 => attempt = 1,
                None => return Err(failure(format!("no completions in rep {rep} after re-seeding"))),
            }
        };
        ys.push(file_size / tau);
    }
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let std = if ys.len() > 1 {
        (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(MeasuredPoint { y_mean: mean, y_std: std, reps })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheatSheetMeta {
    pub build_timestamp: u64,
}

/// Measured grid plus the concave line fitted to every (file size, coverage) row.
#[derive(Clone, Debug, PartialEq)]
pub struct CheatSheet<T> {
    grid: GridSpec,
    /// Indexed by `GridSpec::cell_index`.
    cells: Vec<MeasuredPoint>,
    meta: CheatSheetMeta,
    /// Indexed by `fi * coverage_values.len() + ci`.
    lines: Vec<FittedLine<T>>,
}

/// Response curve of one swarm as predicted by a cheat sheet: the blended fitted quadratic up
/// to `mu` and the client-server split of excess bandwidth beyond it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwarmCurve<T> {
    line: FittedLine<T>,
    mu: T,
    /// λ·S, KBps of demand.
    demand: T,
    floor: T,
}

impl<T: Scalar> SwarmCurve<T> {
    fn at_mu(&self) -> T {
        self.line.value(self.mu).max(self.floor)
    }

    /// Healthy population used to split bandwidth above `mu`.
    pub fn healthy_population(&self) -> T {
        self.demand / self.at_mu()
    }

    /// Smallest `x >= 0` with `value(x) >= y`; saturates at `x_cap`.
    pub fn inverse(&self, y: T, x_cap: T) -> Result<Inverse<T>> {
        if !(y > T::zero()) {
            return Err(Error::InvalidArgument(format!("target rate must be positive, got {y}")));
        }
        let y_mu = self.at_mu();
        let x = if y <= self.floor {
            T::zero()
        } else if y <= y_mu {
            self.line.inverse(y).unwrap_or(self.mu).min(self.mu)
        } else {
            self.mu + (y - y_mu) * self.healthy_population()
        };
        Ok(if x > x_cap { Inverse::Saturated(x_cap) } else { Inverse::Exact(x) })
    }
}

impl<T: Scalar> InvertibleCurve<T> for SwarmCurve<T> {
    fn inverse_capped(&self, y: T, x_cap: T) -> Result<Inverse<T>> {
        self.inverse(y, x_cap)
    }
}

impl<T: Scalar> ResponseCurve<T> for SwarmCurve<T> {
    fn value(&self, x: T) -> T {
        if x <= self.mu {
            self.line.value(x).max(self.floor)
        } else {
            self.at_mu() + (x - self.mu) / self.healthy_population()
        }
    }

    fn slope(&self, x: T) -> T {
        if x <= self.mu {
            if self.line.value(x) < self.floor {
                T::zero()
            } else {
                self.line.slope(x)
            }
        } else {
            T::one() / self.healthy_population()
        }
    }
}

/// Position of `v` in the sorted axis: lower index and weight of the upper neighbour.
/// Values outside the axis clamp to its ends.
fn bracket(axis: &[f64], v: f64) -> (usize, f64) {
    let last = axis.len() - 1;
    if last == 0 || v <= axis[0] {
        return (0, 0.0);
    }
    if v >= axis[last] {
        return (last - 1, 1.0);
    }
    let hi = axis.partition_point(|&a| a <= v).min(last);
    let lo = hi - 1;
    (lo, (v - axis[lo]) / (axis[hi] - axis[lo]))
}

impl<T: Scalar> CheatSheet<T> {
    /// Assembles a sheet from measured cells (grid order) and fits every line.
    pub fn from_cells(grid: GridSpec, cells: Vec<MeasuredPoint>, meta: CheatSheetMeta) -> Result<Self> {
        grid.validate()?;
        if cells.len() != grid.cell_count() {
            return Err(Error::Config(format!(
                "expected {} cells, got {}",
                grid.cell_count(),
                cells.len()
            )));
        }
        if let Some(c) = cells.iter().find(|c| !(c.y_mean > 0.0 && c.y_mean.is_finite())) {
            return Err(Error::Config(format!("cell y_mean must be positive, got {}", c.y_mean)));
        }
        let xs: Vec<T> = grid.x_values.iter().map(|&x| T::lit(x)).collect();
        let nx = grid.x_values.len();
        let lines = cells
            .chunks(nx)
            .map(|row| {
                let ys: Vec<T> = row.iter().map(|c| T::lit(c.y_mean)).collect();
                fit_concave_quadratic(&xs, &ys)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CheatSheet { grid, cells, meta, lines })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn meta(&self) -> &CheatSheetMeta {
        &self.meta
    }

    pub fn mu(&self) -> f64 {
        self.grid.mu
    }

    pub fn cells(&self) -> &[MeasuredPoint] {
        &self.cells
    }

    pub fn cell(&self, fi: usize, ci: usize, xi: usize) -> MeasuredPoint {
        self.cells[self.grid.cell_index(fi, ci, xi)]
    }

    /// Fitted lines keyed by (file size, coverage).
    pub fn fit_lines(&self) -> BTreeMap<(u64, u64), FittedLine<T>> {
        let nc = self.grid.coverage_values.len();
        self.lines
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let key = (self.grid.file_sizes[i / nc].to_bits(), self.grid.coverage_values[i % nc].to_bits());
                (key, *l)
            })
            .collect()
    }

    pub fn line(&self, fi: usize, ci: usize) -> &FittedLine<T> {
        &self.lines[fi * self.grid.coverage_values.len() + ci]
    }

    /// Rejects queries for a different mean upload capacity.
    pub fn check_mu(&self, mu: f64) -> Result<()> {
        if (mu - self.grid.mu).abs() > 1e-9 * self.grid.mu {
            return Err(Error::ModelMismatch(format!(
                "cheat sheet was measured at mu={} KBps but queried with mu={mu} KBps",
                self.grid.mu
            )));
        }
        Ok(())
    }

    /// Rejects workloads whose capacity distribution differs from the measured one.
    pub fn check_dist(&self, dist: &UploadCapacityDist) -> Result<()> {
        if dist.descriptor() != self.grid.dist.descriptor() {
            return Err(Error::ModelMismatch(format!(
                "cheat sheet was measured with `{}` but the workload uses `{}`",
                self.grid.dist.descriptor(),
                dist.descriptor()
            )));
        }
        Ok(())
    }

    /// The predicted response curve of a swarm with arrival rate `lambda` and file size `s`.
    pub fn curve(&self, mu: f64, lambda: f64, s: f64) -> Result<SwarmCurve<T>> {
        self.check_mu(mu)?;
        if !(lambda > 0.0 && s > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lambda and file size must be positive, got {lambda}, {s}"
            )));
        }
        let g = &self.grid;
        let coverage = (lambda * s / mu).clamp(COVERAGE_MIN, COVERAGE_MAX);
        let (ci, wc) = bracket(&g.coverage_values, coverage);
        let log_sizes: Vec<f64> = g.file_sizes.iter().map(|v| v.ln()).collect();
        let (fi, wf) = bracket(&log_sizes, s.ln());

        let mut a = T::zero();
        let mut b = T::zero();
        let mut c = T::zero();
        let mut rms = T::zero();
        let nc = g.coverage_values.len();
        let nf = g.file_sizes.len();
        for (df, w_f) in [(0, 1.0 - wf), (1, wf)] {
            for (dc, w_c) in [(0, 1.0 - wc), (1, wc)] {
                let w = w_f * w_c;
                if w == 0.0 {
                    continue;
                }
                let l = &self.lines[(fi + df).min(nf - 1) * nc + (ci + dc).min(nc - 1)];
                let w = T::lit(w);
                a += w * l.a;
                b += w * l.b;
                c += w * l.c;
                rms += w * l.rms;
            }
        }
        let first = &self.lines[0];
        Ok(SwarmCurve {
            line: FittedLine { a, b, c, x_min: first.x_min, x_max: first.x_max, rms },
            mu: T::lit(mu),
            demand: T::lit(lambda * s),
            floor: T::lit(1e-6 * mu),
        })
    }

    pub fn lookup(&self, x: T, mu: f64, lambda: f64, s: f64) -> Result<T> {
        Ok(self.curve(mu, lambda, s)?.value(x))
    }

    pub fn derivative(&self, x: T, mu: f64, lambda: f64, s: f64) -> Result<T> {
        Ok(self.curve(mu, lambda, s)?.slope(x))
    }

    pub fn inverse(&self, y: T, mu: f64, lambda: f64, s: f64, x_cap: T) -> Result<Inverse<T>> {
        self.curve(mu, lambda, s)?.inverse(y, x_cap)
    }

    /// Serializes to the CSV text format.
    pub fn to_csv(&self) -> String {
        let g = &self.grid;
        let p = &g.params;
        let r = &g.run_policy;
        let mut out = String::new();
        let header = [
            ("schema_version", SCHEMA_VERSION.to_string()),
            ("mu", fmt6(g.mu)),
            ("dist", g.dist.descriptor()),
            ("e_max", p.e_max.to_string()),
            ("p0", p.p0.to_string()),
            ("mu_ref", p.mu_ref.to_string()),
            ("size_uplift_kappa", p.size_uplift_kappa.to_string()),
            ("ref_size", p.ref_size.to_string()),
            ("seed", g.seed.to_string()),
            ("reps", g.reps.to_string()),
            ("warmup", r.warmup.to_string()),
            ("min_completions", r.min_completions.to_string()),
            ("min_duration", r.min_duration.to_string()),
            ("max_duration", r.max_duration.to_string()),
            ("build_timestamp", self.meta.build_timestamp.to_string()),
        ];
        for (k, v) in header {
            let _ = writeln!(out, "# {k}={v}");
        }
        out.push_str(DATA_HEADER);
        out.push('\n');
        for (fi, &s) in g.file_sizes.iter().enumerate() {
            for (ci, &cov) in g.coverage_values.iter().enumerate() {
                for (xi, &x) in g.x_values.iter().enumerate() {
                    let c = self.cell(fi, ci, xi);
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{}",
                        fmt6(s),
                        fmt6(x),
                        fmt6(cov),
                        fmt6(c.y_mean),
                        fmt6(c.y_std),
                        c.reps
                    );
                }
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        parse_csv(text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}

/// Measures every grid cell (in parallel) and fits the sheet. Cell seeds depend only on the
/// grid seed and the cell's coordinates, so results do not depend on scheduling.
pub fn build<T: Scalar>(grid: &GridSpec) -> Result<CheatSheet<T>> {
    grid.validate()?;
    let coords: Vec<(usize, usize, usize)> = (0..grid.file_sizes.len())
        .flat_map(|fi| {
            (0..grid.coverage_values.len())
                .flat_map(move |ci| (0..grid.x_values.len()).map(move |xi| (fi, ci, xi)))
        })
        .collect();
    let cells = coords
        .par_iter()
        .map(|&(fi, ci, xi)| {
            let s = grid.file_sizes[fi];
            let x = grid.x_values[xi];
            let lambda = grid.lambda_for(grid.coverage_values[ci], s);
            let seed = derive_seed(grid.seed, &[fi as u64, ci as u64, xi as u64]);
            let p = measure_point(x, lambda, s, &grid.dist, grid.reps, &grid.params, &grid.run_policy, seed)
                .map_err(|e| match e {
                    Error::Measurement { reason, .. } => Error::Measurement {
                        file_size_kb: s,
                        x_kbps: x,
                        coverage: grid.coverage_values[ci],
                        reason,
                    },
                    other => other,
                })?;
            Ok(MeasuredPoint { y_mean: round6(p.y_mean), y_std: round6(p.y_std), reps: p.reps })
        })
        .collect::<Result<Vec<_>>>()?;
    let build_timestamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    CheatSheet::from_cells(grid.clone(), cells, CheatSheetMeta { build_timestamp })
}

fn parse_csv<T: Scalar>(text: &str) -> Result<CheatSheet<T>> {
    let mut meta: BTreeMap<String, (String, usize, usize)> = BTreeMap::new();
    let mut rows: Vec<([f64; 5], usize)> = Vec::new();
    let mut saw_header = false;
    let mut offset = 0usize;
    let mut last_line = 0usize;

    for (idx, raw) in text.split_inclusive('\n').enumerate() {
        let line_no = idx + 1;
        let line_offset = offset;
        offset += raw.len();
        last_line = line_no;
        let line = raw.trim_end_matches(['\n', '\r']);
        let err = |col: usize, message: String| Error::Parse { line: line_no, offset: line_offset + col, message };
        if let Some(body) = line.strip_prefix('#') {
            let body = body.trim();
            let (k, v) = body
                .split_once('=')
                .ok_or_else(|| err(0, format!("metadata line `{line}` is not `key=value`")))?;
            meta.insert(k.trim().to_string(), (v.trim().to_string(), line_no, line_offset));
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        if !saw_header {
            if line.trim() != DATA_HEADER {
                return Err(err(0, format!("expected column header `{DATA_HEADER}`")));
            }
            saw_header = true;
            continue;
        }
        let mut vals = [0.0; 5];
        let mut reps = 0usize;
        let mut col = 0usize;
        let mut n = 0usize;
        for (i, field) in line.split(',').enumerate() {
            n += 1;
            match i {
                0..=4 => {
                    vals[i] = field
                        .trim()
                        .parse()
                        .map_err(|_| err(col, format!("field {} `{field}` is not a number", i + 1)))?;
                }
                5 => {
                    reps = field
                        .trim()
                        .parse()
                        .map_err(|_| err(col, format!("reps `{field}` is not a count")))?;
                }
                _ => {}
            }
            col += field.len() + 1;
        }
        if n != 6 {
            return Err(err(0, format!("expected 6 columns, found {n}")));
        }
        rows.push((vals, reps));
    }

    let eof = Error::Parse {
        line: last_line,
        offset: text.len(),
        message: String::new(),
    };
    let at_eof = |message: String| match &eof {
        Error::Parse { line, offset, .. } => Error::Parse { line: *line, offset: *offset, message },
        _ => unreachable!(),
    };
    if !saw_header {
        return Err(at_eof("missing column header".into()));
    }
    let get = |key: &str| -> Result<(&str, usize, usize)> {
        meta.get(key)
            .map(|(v, l, o)| (v.as_str(), *l, *o))
            .ok_or_else(|| at_eof(format!("missing metadata `{key}`")))
    };
    fn num<V: std::str::FromStr>(key: &str, (v, line, offset): (&str, usize, usize)) -> Result<V> {
        v.parse().map_err(|_| Error::Parse {
            line,
            offset,
            message: format!("metadata `{key}` has invalid value `{v}`"),
        })
    }
    let version: u32 = num("schema_version", get("schema_version")?)?;
    if version != SCHEMA_VERSION {
        let (_, line, offset) = get("schema_version")?;
        return Err(Error::Parse {
            line,
            offset,
            message: format!("unsupported schema_version {version}, expected {SCHEMA_VERSION}"),
        });
    }
    let dist_entry = get("dist")?;
    let dist = UploadCapacityDist::parse_descriptor(dist_entry.0).map_err(|e| Error::Parse {
        line: dist_entry.1,
        offset: dist_entry.2,
        message: e.to_string(),
    })?;

    let axis = |col: usize| -> Vec<f64> {
        let mut v: Vec<f64> = rows.iter().map(|r| r.0[col]).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let grid = GridSpec {
        mu: num("mu", get("mu")?)?,
        dist,
        x_values: axis(1),
        coverage_values: axis(2),
        file_sizes: axis(0),
        reps: num("reps", get("reps")?)?,
        run_policy: RunPolicy {
            warmup: num("warmup", get("warmup")?)?,
            min_completions: num("min_completions", get("min_completions")?)?,
            min_duration: num("min_duration", get("min_duration")?)?,
            max_duration: num("max_duration", get("max_duration")?)?,
        },
        params: SupplyModelParams {
            e_max: num("e_max", get("e_max")?)?,
            p0: num("p0", get("p0")?)?,
            mu_ref: num("mu_ref", get("mu_ref")?)?,
            size_uplift_kappa: num("size_uplift_kappa", get("size_uplift_kappa")?)?,
            ref_size: num("ref_size", get("ref_size")?)?,
        },
        seed: num("seed", get("seed")?)?,
    };
    if rows.len() != grid.cell_count() {
        return Err(at_eof(format!(
            "expected {} data rows for a complete grid, found {}",
            grid.cell_count(),
            rows.len()
        )));
    }
    let mut cells: Vec<Option<MeasuredPoint>> = vec![None; grid.cell_count()];
    for (vals, reps) in &rows {
        let pos = |axis: &[f64], v: f64| axis.iter().position(|&a| a == v).unwrap();
        let i = grid.cell_index(
            pos(&grid.file_sizes, vals[0]),
            pos(&grid.coverage_values, vals[2]),
            pos(&grid.x_values, vals[1]),
        );
        if cells[i].is_some() {
            return Err(at_eof(format!(
                "duplicate cell at file_size={}, x={}, coverage={}",
                vals[0], vals[1], vals[2]
            )));
        }
        cells[i] = Some(MeasuredPoint { y_mean: vals[3], y_std: vals[4], reps: *reps });
    }
    let cells = cells.into_iter().map(|c| c.expect("row count matches grid")).collect();
    let build_timestamp = num("build_timestamp", get("build_timestamp")?)?;
    CheatSheet::from_cells(grid, cells, CheatSheetMeta { build_timestamp })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Sheet whose every line is `y = f(x, coverage)` exactly, on the default axes.
    pub(crate) fn synthetic(f: impl Fn(f64, f64) -> f64) -> CheatSheet<f64> {
        let mut grid = GridSpec::standard(100.0, UploadCapacityDist::default(), vec![10_000.0]);
        grid.reps = 1;
        let mut cells = Vec::new();
        for &cov in &grid.coverage_values {
            for &x in &grid.x_values {
                cells.push(MeasuredPoint { y_mean: f(x, cov), y_std: 0.0, reps: 1 });
            }
        }
        CheatSheet::from_cells(grid, cells, CheatSheetMeta { build_timestamp: 0 }).unwrap()
    }

    #[test]
    fn standard_axes() {
        let g = GridSpec::desk_scale();
        assert_eq!(g.x_values.len(), 10);
        assert_eq!(g.x_values[0], 10.0);
        assert_eq!(g.x_values[9], 100.0);
        assert_eq!(g.coverage_values.len(), 10);
        assert_eq!(g.coverage_values[0], 1.0);
        assert_eq!(g.coverage_values[9], 50.0);
        assert_eq!(g.coverage_values[1], round6(1.0 + 49.0 / 9.0));
        assert_eq!(g.cell_count(), 300);
        g.validate().unwrap();
    }

    #[test]
    fn lambda_from_coverage() {
        let g = GridSpec::desk_scale();
        assert!((g.lambda_for(1.0, 10_000.0) - 0.01).abs() < 1e-15);
        assert!((g.lambda_for(50.0, 10_000.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn six_digit_formatting() {
        assert_eq!(fmt6(10_000.0), "10000");
        assert_eq!(fmt6(99.4135895), "99.4136");
        assert_eq!(fmt6(1.0 + 49.0 / 9.0), "6.44444");
        assert_eq!(fmt6(0.0), "0");
        for v in [0.000123456789, 123456789.0, 7.0] {
            assert_eq!(round6(round6(v)), round6(v));
        }
    }

    #[test]
    fn single_rep_has_zero_std() {
        let p = measure_point(
            50.0,
            0.05,
            1000.0,
            &UploadCapacityDist::default(),
            1,
            &SupplyModelParams::default(),
            &RunPolicy { warmup: 100.0, min_completions: 20, min_duration: 1000.0, max_duration: 5000.0 },
            1,
        )
        .unwrap();
        assert_eq!(p.y_std, 0.0);
        assert!(p.y_mean > 0.0);
    }

    #[test]
    fn zero_completions_fail_after_reseed() {
        // A swarm with no server bandwidth and a file too large to finish cannot complete.
        let err = measure_point(
            1e-9,
            0.001,
            1e9,
            &UploadCapacityDist::default(),
            1,
            &SupplyModelParams::default(),
            &RunPolicy { warmup: 0.0, min_completions: 1, min_duration: 10.0, max_duration: 10.0 },
            1,
        )
        .unwrap_err();
        assert_eq!(err.kind(), "measurement");
    }

    #[test]
    fn grid_point_lookup_matches_line() {
        let cs = synthetic(|x, cov| -0.002 * x * x + (0.6 + 0.01 * cov) * x + cov);
        let g = cs.grid().clone();
        for (ci, &cov) in g.coverage_values.iter().enumerate() {
            for &x in &g.x_values {
                let lambda = g.lambda_for(cov, 10_000.0);
                let y = cs.lookup(x, 100.0, lambda, 10_000.0).unwrap();
                assert!((y - cs.line(0, ci).value(x)).abs() < 1e-9);
                assert!((y - (-0.002 * x * x + (0.6 + 0.01 * cov) * x + cov)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn bilinear_midpoint() {
        let mut grid = GridSpec::standard(100.0, UploadCapacityDist::default(), vec![1_000.0, 4_000.0]);
        grid.coverage_values = vec![1.0, 50.0];
        grid.x_values = vec![10.0, 55.0, 100.0];
        grid.reps = 1;
        // Corners (size, coverage): (small,1)=10, (small,50)=100, (large,1)=80, (large,50)=90, flat lines.
        let mut cells = Vec::new();
        for v in [10.0, 100.0, 80.0, 90.0] {
            for _ in 0..3 {
                cells.push(MeasuredPoint { y_mean: v, y_std: 0.0, reps: 1 });
            }
        }
        let cs: CheatSheet<f64> = CheatSheet::from_cells(grid, cells, CheatSheetMeta { build_timestamp: 0 }).unwrap();
        // Midpoint: geometric-mean size, coverage 25.5.
        let s = 2_000.0;
        let lambda = 25.5 * 100.0 / s;
        let y = cs.lookup(50.0, 100.0, lambda, s).unwrap();
        assert!((y - 70.0).abs() < 1e-9, "{y}");
    }

    #[test]
    fn beyond_mu_extension() {
        let cs = synthetic(|_, _| 90.0);
        let y = cs.lookup(200.0, 100.0, 0.5, 10_000.0).unwrap();
        let n_bar: f64 = 0.5 * 10_000.0 / 90.0;
        assert!((n_bar - 55.555_555).abs() < 1e-4);
        assert!((y - (90.0 + 100.0 / n_bar)).abs() < 1e-9);
        assert!((y - 91.8).abs() < 0.01);
        assert!((cs.derivative(150.0, 100.0, 0.5, 10_000.0).unwrap() - 1.0 / n_bar).abs() < 1e-12);
    }

    #[test]
    fn mu_mismatch_is_rejected() {
        let cs = synthetic(|x, _| x);
        let err = cs.lookup(50.0, 120.0, 0.1, 10_000.0).unwrap_err();
        assert_eq!(err.kind(), "model_mismatch");
        let other = UploadCapacityDist::LogUniform { lo: 50.0, hi: 200.0 };
        assert!(cs.check_dist(&other).is_err());
        cs.check_dist(&UploadCapacityDist::default()).unwrap();
    }

    #[test]
    fn identity_line_derivative_and_inverse() {
        let cs = synthetic(|x, _| x);
        for x in [12.0, 50.0, 99.0] {
            assert!((cs.derivative(x, 100.0, 0.01, 10_000.0).unwrap() - 1.0).abs() < 1e-9);
        }
        let inv = cs.inverse(50.0, 100.0, 0.01, 10_000.0, 1000.0).unwrap();
        assert!((inv.value() - 50.0).abs() < 1e-9 && !inv.is_saturated());
        let target = 10_000.0 / 150.0;
        let inv = cs.inverse(target, 100.0, 0.01, 10_000.0, 1000.0).unwrap();
        assert!((inv.value() - 66.6667).abs() < 1e-3);
    }

    #[test]
    fn quadratic_derivative() {
        let cs = synthetic(|x, _| -0.005 * x * x + 1.5 * x);
        let d = cs.derivative(100.0, 100.0, 0.1, 10_000.0).unwrap();
        assert!((d - 0.5).abs() < 1e-6);
    }

    #[test]
    fn inverse_saturates() {
        let cs = synthetic(|x, _| -0.005 * x * x + 1.5 * x);
        let y_top = cs.lookup(100.0, 100.0, 0.1, 10_000.0).unwrap();
        let inv = cs.inverse(y_top + 50.0, 100.0, 0.1, 10_000.0, 500.0).unwrap();
        assert_eq!(inv, Inverse::Saturated(500.0));
        assert!(cs.inverse(0.0, 100.0, 0.1, 10_000.0, 500.0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let cs = synthetic(|x, cov| -0.002 * x * x + 0.9 * x + cov / 3.0);
        let text = cs.to_csv();
        let back: CheatSheet<f64> = CheatSheet::from_csv(&text).unwrap();
        assert_eq!(back.to_csv(), text);
        assert_eq!(back.grid(), cs.grid());
    }

    #[test]
    fn truncated_csv_names_offset() {
        let text = synthetic(|x, _| x).to_csv();
        let cut = &text[..text.len() - 40];
        match CheatSheet::<f64>::from_csv(cut) {
            Err(Error::Parse { offset, line, .. }) => {
                assert!(offset <= cut.len() && offset > 0);
                assert!(line > 1);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn bad_schema_version_names_line() {
        let text = synthetic(|x, _| x).to_csv().replacen("schema_version=1", "schema_version=7", 1);
        match CheatSheet::<f64>::from_csv(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn single_precision_sheet() {
        let cs = synthetic(|x, _| -0.005 * x * x + 1.5 * x);
        let cs32: CheatSheet<f32> = CheatSheet::from_csv(&cs.to_csv()).unwrap();
        let y = cs32.lookup(50.0, 100.0, 0.1, 10_000.0).unwrap();
        assert!((y - 62.5).abs() < 1e-2);
    }
}
