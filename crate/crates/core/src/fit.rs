//! Concave curve fitting: constrained quadratics for the measured grid lines and
//! pooled-slope piecewise-linear curves for online response-curve learning.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A non-decreasing, concave response `y = f(x)`.
pub trait ResponseCurve<T: Scalar> {
    fn value(&self, x: T) -> T;
    fn slope(&self, x: T) -> T;
}

impl<T: Scalar, C: ResponseCurve<T> + ?Sized> ResponseCurve<T> for &C {
    fn value(&self, x: T) -> T {
        (**self).value(x)
    }
    fn slope(&self, x: T) -> T {
        (**self).slope(x)
    }
}

/// Whether an inverse query was met within the allowed bandwidth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Inverse<T> {
    Exact(T),
    /// Target not reachable; carries the bandwidth at the range edge.
    Saturated(T),
}

impl<T: Copy> Inverse<T> {
    pub fn value(self) -> T {
        match self {
            Inverse::Exact(x) | Inverse::Saturated(x) => x,
        }
    }

    pub fn is_saturated(self) -> bool {
        matches!(self, Inverse::Saturated(_))
    }
}

/// A response curve that can answer "how much bandwidth for rate `y`".
pub trait InvertibleCurve<T: Scalar>: ResponseCurve<T> {
    /// Smallest `x >= 0` reaching `y`, saturating at `x_cap`.
    fn inverse_capped(&self, y: T, x_cap: T) -> Result<Inverse<T>>;
}

impl<T: Scalar, C: InvertibleCurve<T> + ?Sized> InvertibleCurve<T> for &C {
    fn inverse_capped(&self, y: T, x_cap: T) -> Result<Inverse<T>> {
        (**self).inverse_capped(y, x_cap)
    }
}

/// `y = a·x² + b·x + c` fitted on `[x_min, x_max]`, with `a <= 0` and `2a·x_max + b >= 0`.
///
/// Outside the fitted range the curve is linear: above `x_max` along the tangent, below `x_min`
/// with a slope between the tangent and the chord to the origin. Both extensions keep it
/// continuous, non-decreasing and concave.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedLine<T> {
    pub a: T,
    pub b: T,
    pub c: T,
    pub x_min: T,
    pub x_max: T,
    pub rms: T,
}

impl<T: Scalar> FittedLine<T> {
    #[inline]
    fn poly(&self, x: T) -> T {
        (self.a * x + self.b) * x + self.c
    }

    #[inline]
    fn poly_slope(&self, x: T) -> T {
        T::lit(2.0) * self.a * x + self.b
    }

    /// Slope of the linear extension below `x_min`: the mean of the tangent slope there and the
    /// slope of the chord to the origin. A concave curve through the origin lies between those
    /// two lines, so the extension stays between the pessimistic and optimistic guesses.
    fn low_slope(&self) -> Option<T> {
        let y = self.poly(self.x_min);
        (self.x_min > T::zero() && y > T::zero())
            .then(|| (y / self.x_min + self.poly_slope(self.x_min)) / T::lit(2.0))
    }

    pub fn is_concave(&self) -> bool {
        self.a <= T::zero()
    }

    pub fn is_non_decreasing(&self) -> bool {
        self.poly_slope(self.x_max) >= T::zero()
    }

    /// Smallest `x` with `value(x) >= y`, or `None` when `y` is above the curve's supremum.
    /// Values below the curve at zero return `Some(0)`.
    pub fn inverse(&self, y: T) -> Option<T> {
        let zero = T::zero();
        if self.value(zero) >= y {
            return Some(zero);
        }
        let lo = self.poly(self.x_min);
        if let Some(s) = self.low_slope() {
            if y < lo {
                return Some((self.x_min - (lo - y) / s).max(zero));
            }
        }
        let hi = self.poly(self.x_max);
        if y <= hi {
            return Some(self.quadratic_root(y).clamp(zero, self.x_max));
        }
        let s = self.poly_slope(self.x_max);
        if s > zero {
            Some(self.x_max + (y - hi) / s)
        } else {
            None
        }
    }

    /// Root of `a·x² + b·x + c = y` on the non-decreasing branch, in the cancellation-free form.
    fn quadratic_root(&self, y: T) -> T {
        let two = T::lit(2.0);
        let cc = self.c - y;
        if self.a == T::zero() {
            return -cc / self.b;
        }
        let disc = (self.b * self.b - T::lit(4.0) * self.a * cc).max(T::zero());
        // b >= 0 on this branch, so b + sqrt(disc) never cancels.
        let denom = self.b + disc.sqrt();
        if denom > T::zero() {
            -two * cc / denom
        } else {
            -self.b / (two * self.a)
        }
    }
}

impl<T: Scalar> ResponseCurve<T> for FittedLine<T> {
    fn value(&self, x: T) -> T {
        if x > self.x_max {
            return self.poly(self.x_max) + (x - self.x_max) * self.poly_slope(self.x_max);
        }
        match self.low_slope() {
            Some(s) if x < self.x_min => self.poly(self.x_min) - (self.x_min - x) * s,
            _ => self.poly(x),
        }
    }

    fn slope(&self, x: T) -> T {
        match self.low_slope() {
            Some(s) if x < self.x_min => s,
            _ => self.poly_slope(x.min(self.x_max)),
        }
    }
}

impl<T: Scalar> InvertibleCurve<T> for FittedLine<T> {
    fn inverse_capped(&self, y: T, x_cap: T) -> Result<Inverse<T>> {
        if !(y > T::zero()) {
            return Err(Error::InvalidArgument(format!("target rate must be positive, got {y}")));
        }
        Ok(match self.inverse(y) {
            Some(x) if x <= x_cap => Inverse::Exact(x),
            _ => Inverse::Saturated(x_cap),
        })
    }
}

/// Solves the `k×k` system in place by Gaussian elimination with partial pivoting.
fn solve_small<T: Scalar>(m: &mut [[T; 3]; 3], rhs: &mut [T; 3], k: usize) -> Option<[T; 3]> {
    let scale = (0..k)
        .flat_map(|i| (0..k).map(move |j| (i, j)))
        .map(|(i, j)| m[i][j].abs())
        .fold(T::zero(), T::max);
    if scale == T::zero() {
        return None;
    }
    let tiny = scale * T::epsilon() * T::lit(1e3);
    for col in 0..k {
        let pivot = (col..k).max_by(|&p, &q| m[p][col].abs().partial_cmp(&m[q][col].abs()).unwrap())?;
        if m[pivot][col].abs() <= tiny {
            return None;
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..k {
            let f = m[row][col] / m[col][col];
            for j in col..k {
                let v = m[col][j];
                m[row][j] -= f * v;
            }
            let v = rhs[col];
            rhs[row] -= f * v;
        }
    }
    let mut out = [T::zero(); 3];
    for row in (0..k).rev() {
        let mut acc = rhs[row];
        for j in row + 1..k {
            acc -= m[row][j] * out[j];
        }
        out[row] = acc / m[row][row];
    }
    Some(out)
}

/// Least squares over `k` basis functions; returns coefficients or `None` when singular.
fn least_squares<T: Scalar, const K: usize>(
    ts: &[T],
    ys: &[T],
    basis: impl Fn(T) -> [T; K],
) -> Option<[T; K]> {
    let mut m = [[T::zero(); 3]; 3];
    let mut rhs = [T::zero(); 3];
    for (&t, &y) in ts.iter().zip(ys) {
        let phi = basis(t);
        for i in 0..K {
            for j in 0..K {
                m[i][j] += phi[i] * phi[j];
            }
            rhs[i] += phi[i] * y;
        }
    }
    let sol = solve_small(&mut m, &mut rhs, K)?;
    let mut out = [T::zero(); K];
    out.copy_from_slice(&sol[..K]);
    Some(out)
}

/// Least-squares quadratic constrained to be concave and non-decreasing on the sample range.
///
/// The problem is a convex QP with two linear constraints, so the optimum is the best
/// feasible solution among the four active sets; each one is solved exactly.
pub fn fit_concave_quadratic<T: Scalar>(xs: &[T], ys: &[T]) -> Result<FittedLine<T>> {
    if xs.len() != ys.len() {
        return Err(Error::Fit(format!(
            "{} abscissae but {} ordinates",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 3 {
        return Err(Error::Fit(format!(
            "need at least 3 points to fit a line, got {}",
            xs.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Fit("non-finite sample".into()));
    }
    let x_min = xs.iter().copied().fold(T::infinity(), T::min);
    let x_max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if !(x_max > x_min && x_max > T::zero()) {
        return Err(Error::Fit("samples must span a positive range of x".into()));
    }

    // Work in t = x / x_max so the normal equations stay well conditioned in f32.
    let s = x_max;
    let ts: Vec<T> = xs.iter().map(|&x| x / s).collect();
    let one = T::one();
    let two = T::lit(2.0);

    // Candidates as (A, B, C) in t-space; constraints A <= 0 and 2A + B >= 0.
    let mut candidates: Vec<[T; 3]> = Vec::with_capacity(4);
    if let Some([a, b, c]) = least_squares(&ts, ys, |t| [t * t, t, one]) {
        candidates.push([a, b, c]);
    }
    if let Some([b, c]) = least_squares(&ts, ys, |t| [t, one]) {
        candidates.push([T::zero(), b, c]);
    }
    if let Some([a, c]) = least_squares(&ts, ys, |t| [t * t - two * t, one]) {
        candidates.push([a, -two * a, c]);
    }
    let mean = ys.iter().copied().sum::<T>() / T::from_usize(ys.len()).unwrap();
    candidates.push([T::zero(), T::zero(), mean]);

    let sse = |[a, b, c]: [T; 3]| -> T {
        ts.iter()
            .zip(ys)
            .map(|(&t, &y)| {
                let r = (a * t + b) * t + c - y;
                r * r
            })
            .sum()
    };
    let best = candidates
        .into_iter()
        .filter(|&[a, b, _]| a <= T::zero() && two * a + b >= T::zero())
        .map(|cand| (sse(cand), cand))
        .min_by(|p, q| p.0.partial_cmp(&q.0).unwrap())
        .expect("the constant candidate is always feasible");

    let (err, [a, b, c]) = best;
    let a_x = a / (s * s);
    // An active end constraint must leave the slope at x_max exactly zero after unscaling.
    let b_x = if two * a + b == T::zero() { -(two * a_x * x_max) } else { b / s };
    Ok(FittedLine {
        a: a_x,
        b: b_x,
        c,
        x_min,
        x_max,
        rms: (err / T::from_usize(ts.len()).unwrap()).sqrt(),
    })
}

/// Concave, non-decreasing piecewise-linear curve through fitted knot values.
#[derive(Clone, Debug, PartialEq)]
pub struct ConcavePiecewiseLinear<T> {
    knots: Vec<(T, T)>,
}

impl<T: Scalar> ConcavePiecewiseLinear<T> {
    /// Fits samples by pooling adjacent secant slopes that violate concavity (weighted by
    /// segment width), clamping negative slopes to zero, then choosing the intercept by
    /// least squares. With an anchor the curve is pinned to pass through it and only samples
    /// strictly right of the anchor are used.
    pub fn fit(samples: &[(T, T)], anchor: Option<(T, T)>) -> Result<Self> {
        if samples.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::Fit("non-finite sample".into()));
        }
        let mut sorted: Vec<(T, T)> = samples
            .iter()
            .copied()
            .filter(|&(x, _)| anchor.is_none_or(|(ax, _)| x > ax))
            .collect();
        sorted.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());

        // Group identical abscissae: (x, mean y, count).
        let mut groups: Vec<(T, T, T)> = Vec::new();
        for (x, y) in sorted {
            match groups.last_mut() {
                Some(g) if g.0 == x => {
                    g.1 += y;
                    g.2 += T::one();
                }
                _ => groups.push((x, y, T::one())),
            }
        }
        for g in &mut groups {
            g.1 /= g.2;
        }
        if let Some((ax, ay)) = anchor {
            groups.insert(0, (ax, ay, T::zero()));
        }
        if groups.is_empty() {
            return Err(Error::Fit("no samples to fit".into()));
        }
        if groups.len() == 1 {
            let (x, y, _) = groups[0];
            return Ok(ConcavePiecewiseLinear { knots: vec![(x, y)] });
        }

        // Pool adjacent violators on secant slopes; blocks hold (slope, width, segment count).
        let mut blocks: Vec<(T, T, usize)> = Vec::with_capacity(groups.len() - 1);
        for w in groups.windows(2) {
            let dx = w[1].0 - w[0].0;
            blocks.push(((w[1].1 - w[0].1) / dx, dx, 1));
            while blocks.len() >= 2 {
                let (s2, w2, n2) = blocks[blocks.len() - 1];
                let (s1, w1, n1) = blocks[blocks.len() - 2];
                if s2 <= s1 {
                    break;
                }
                blocks.pop();
                let last = blocks.last_mut().unwrap();
                *last = ((s1 * w1 + s2 * w2) / (w1 + w2), w1 + w2, n1 + n2);
            }
        }
        let slopes: Vec<T> = blocks
            .iter()
            .flat_map(|&(s, _, n)| std::iter::repeat_n(s.max(T::zero()), n))
            .collect();

        let mut offsets = Vec::with_capacity(groups.len());
        let mut acc = T::zero();
        offsets.push(acc);
        for (w, s) in groups.windows(2).zip(&slopes) {
            acc += *s * (w[1].0 - w[0].0);
            offsets.push(acc);
        }
        let intercept = match anchor {
            Some((_, ay)) => ay,
            None => {
                let wsum: T = groups.iter().map(|g| g.2).sum();
                groups
                    .iter()
                    .zip(&offsets)
                    .map(|(g, &o)| g.2 * (g.1 - o))
                    .sum::<T>()
                    / wsum
            }
        };
        let knots = groups
            .iter()
            .zip(&offsets)
            .map(|(g, &o)| (g.0, intercept + o))
            .collect();
        Ok(ConcavePiecewiseLinear { knots })
    }

    pub fn knots(&self) -> &[(T, T)] {
        &self.knots
    }

    fn segment_slope(&self, i: usize) -> T {
        let (x0, y0) = self.knots[i];
        let (x1, y1) = self.knots[i + 1];
        (y1 - y0) / (x1 - x0)
    }

    /// Root-mean-square residual over the given samples.
    pub fn rms(&self, samples: &[(T, T)]) -> T {
        if samples.is_empty() {
            return T::zero();
        }
        let sse: T = samples
            .iter()
            .map(|&(x, y)| {
                let r = self.value(x) - y;
                r * r
            })
            .sum();
        (sse / T::from_usize(samples.len()).unwrap()).sqrt()
    }
}

impl<T: Scalar> ResponseCurve<T> for ConcavePiecewiseLinear<T> {
    fn value(&self, x: T) -> T {
        let k = &self.knots;
        if k.len() == 1 {
            return k[0].1;
        }
        let i = match k.iter().position(|&(kx, _)| kx > x) {
            Some(0) => 0,
            Some(p) => p - 1,
            None => k.len() - 2,
        };
        k[i].1 + (x - k[i].0) * self.segment_slope(i)
    }

    /// Right derivative.
    fn slope(&self, x: T) -> T {
        let k = &self.knots;
        if k.len() == 1 {
            return T::zero();
        }
        let i = match k.iter().position(|&(kx, _)| kx > x) {
            Some(0) => 0,
            Some(p) => p - 1,
            None => k.len() - 2,
        };
        self.segment_slope(i)
    }
}
