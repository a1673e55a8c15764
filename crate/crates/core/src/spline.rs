//! Weighted cubic smoothing splines.
//!
//! A natural cubic spline with knots `t_1 < … < t_n` is stored by its
//! values `g_i` and second derivatives `γ_i` at the knots (`γ_1 = γ_n = 0`).
//! The two are tied by `Qᵀg = Rγ`, where `Q` is the `n × (n-2)` second
//! divided-difference matrix and `R` the `(n-2) × (n-2)` tridiagonal Gram
//! matrix of the piecewise-linear second derivative. The roughness is
//! `∫ g''² = γᵀRγ = gᵀ K g` with `K = Q R⁻¹ Qᵀ`.
//!
//! Minimising `Σ λ_i (y_i - g_i)² + gᵀKg` gives `(Λ + K) g = Λ y`, which is
//! solved through the pentadiagonal system `(R + Qᵀ Λ⁻¹ Q) γ = Qᵀ y` and
//! `y - g = Λ⁻¹ Q γ`.

use serde::{Deserialize, Serialize};

use crate::banded::SymBanded;
use crate::error::{invalid, Error, Result};

/// Ordered design points in `[0, 1]` with their responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    t: Vec<f64>,
    y: Vec<f64>,
}

impl Sample {
    pub fn new(t: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if t.len() != y.len() {
            return invalid(format!(
                "design has {} points but {} responses",
                t.len(),
                y.len()
            ));
        }
        if t.len() < 3 {
            return invalid(format!("need at least 3 points, got {}", t.len()));
        }
        if let Some(i) = t.iter().chain(&y).position(|v| !v.is_finite()) {
            return invalid(format!("non-finite value at position {i}"));
        }
        if t[0] < 0.0 || t[t.len() - 1] > 1.0 {
            return invalid("design points must lie in [0, 1]");
        }
        if let Some(i) = t.windows(2).position(|w| w[1] <= w[0]) {
            return invalid(format!(
                "design points must be strictly increasing (t[{}] = {} >= t[{}] = {})",
                i,
                t[i],
                i + 1,
                t[i + 1]
            ));
        }
        Ok(Self { t, y })
    }

    /// Equispaced design `t_i = i / n`, `i = 1..=n`.
    pub fn equispaced(y: Vec<f64>) -> Result<Self> {
        let n = y.len();
        let t = (1..=n).map(|i| i as f64 / n as f64).collect();
        Self::new(t, y)
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Same design, new responses.
    pub fn with_y(&self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.t.len() {
            return invalid("response length does not match design");
        }
        if y.iter().any(|v| !v.is_finite()) {
            return invalid("non-finite response");
        }
        Ok(Self {
            t: self.t.clone(),
            y,
        })
    }
}

/// Strictly positive per-observation weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(lambda: Vec<f64>) -> Result<Self> {
        if let Some(i) = lambda.iter().position(|l| !(l.is_finite() && *l > 0.0)) {
            return invalid(format!(
                "weight {i} must be positive and finite, got {}",
                lambda[i]
            ));
        }
        Ok(Self(lambda))
    }

    pub fn constant(n: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub(crate) fn scale_where(&mut self, mask: &[bool], factor: f64) {
        for (l, &m) in self.0.iter_mut().zip(mask) {
            if m {
                *l *= factor;
            }
        }
    }

    pub(crate) fn scale_all(&mut self, factor: f64) {
        self.0.iter_mut().for_each(|l| *l *= factor);
    }
}

/// Natural cubic spline in value / second-derivative form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineFit {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
    pub second_derivs: Vec<f64>,
    pub roughness: f64,
}

/// Derivative order accepted by [`SplineFit::evaluate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Order {
    Value,
    First,
    Second,
}

impl Order {
    pub const ALL: [Order; 3] = [Order::Value, Order::First, Order::Second];

    pub fn as_index(self) -> usize {
        match self {
            Order::Value => 0,
            Order::First => 1,
            Order::Second => 2,
        }
    }
}

impl TryFrom<u8> for Order {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Order::Value),
            1 => Ok(Order::First),
            2 => Ok(Order::Second),
            _ => invalid(format!("derivative order must be 0, 1 or 2, got {v}")),
        }
    }
}

fn spacings(t: &[f64]) -> Vec<f64> {
    t.windows(2).map(|w| w[1] - w[0]).collect()
}

/// `∫ of the squared piecewise-linear function with knot values γ`.
fn piecewise_linear_sq_integral(h: &[f64], gamma: &[f64]) -> f64 {
    h.iter()
        .zip(gamma.windows(2))
        .map(|(h, g)| h / 3.0 * (g[0] * g[0] + g[0] * g[1] + g[1] * g[1]))
        .sum()
}

impl SplineFit {
    /// Builds the natural spline from knot values and interior second
    /// derivatives (boundary second derivatives are zero).
    fn from_parts(knots: Vec<f64>, values: Vec<f64>, interior: &[f64]) -> Self {
        let n = knots.len();
        let mut second_derivs = vec![0.0; n];
        second_derivs[1..n - 1].copy_from_slice(interior);
        let roughness = piecewise_linear_sq_integral(&spacings(&knots), &second_derivs);
        Self {
            knots,
            values,
            second_derivs,
            roughness,
        }
    }

    /// The affine function `a + b t` on the given knots.
    pub fn affine(knots: &[f64], intercept: f64, slope: f64) -> Self {
        let n = knots.len();
        Self {
            knots: knots.to_vec(),
            values: knots.iter().map(|t| intercept + slope * t).collect(),
            second_derivs: vec![0.0; n],
            roughness: 0.0,
        }
    }

    /// Evaluates the spline or one of its first two derivatives at `x ∈ [0, 1]`.
    ///
    /// Outside `[t_1, t_n]` the spline is continued linearly.
    pub fn evaluate(&self, x: f64, order: Order) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return invalid(format!("evaluation point {x} outside [0, 1]"));
        }
        Ok(self.eval_unchecked(x, order))
    }

    pub(crate) fn eval_unchecked(&self, x: f64, order: Order) -> f64 {
        let t = &self.knots;
        let g = &self.values;
        let c = &self.second_derivs;
        let n = t.len();
        if x <= t[0] || x >= t[n - 1] {
            let (i, x0, sign) = if x <= t[0] {
                (0, t[0], 1.0)
            } else {
                (n - 2, t[n - 1], -1.0)
            };
            let h = t[i + 1] - t[i];
            // one-sided slope at the boundary knot
            let slope = if sign > 0.0 {
                (g[1] - g[0]) / h - h * (2.0 * c[0] + c[1]) / 6.0
            } else {
                (g[n - 1] - g[n - 2]) / h + h * (c[n - 2] + 2.0 * c[n - 1]) / 6.0
            };
            let v0 = if sign > 0.0 { g[0] } else { g[n - 1] };
            return match order {
                Order::Value => v0 + slope * (x - x0),
                Order::First => slope,
                Order::Second => 0.0,
            };
        }
        let i = match t.binary_search_by(|k| k.partial_cmp(&x).unwrap()) {
            Ok(i) if order == Order::Value => return g[i],
            Ok(i) => i.min(n - 2),
            Err(i) => i - 1,
        };
        let h = t[i + 1] - t[i];
        let a = (t[i + 1] - x) / h;
        let b = (x - t[i]) / h;
        match order {
            Order::Value => {
                a * g[i]
                    + b * g[i + 1]
                    + ((a * a * a - a) * c[i] + (b * b * b - b) * c[i + 1]) * h * h / 6.0
            }
            Order::First => {
                (g[i + 1] - g[i]) / h
                    + h / 6.0 * (-(3.0 * a * a - 1.0) * c[i] + (3.0 * b * b - 1.0) * c[i + 1])
            }
            Order::Second => a * c[i] + b * c[i + 1],
        }
    }

    /// `∫₀¹ g''(t)² dt` recomputed from the stored second derivatives.
    pub fn roughness_of(&self) -> f64 {
        piecewise_linear_sq_integral(&spacings(&self.knots), &self.second_derivs)
    }
}

/// Free-function form of [`SplineFit::roughness_of`].
pub fn roughness_of(fit: &SplineFit) -> f64 {
    fit.roughness_of()
}

/// Free-function form of [`SplineFit::evaluate`].
pub fn evaluate(fit: &SplineFit, x: f64, order: Order) -> Result<f64> {
    fit.evaluate(x, order)
}

/// The roughness quadratic form `K = Q R⁻¹ Qᵀ`, kept in factored banded form.
#[derive(Debug, Clone)]
pub struct PenaltyMatrix {
    h: Vec<f64>,
    r: SymBanded,
}

impl PenaltyMatrix {
    pub fn dim(&self) -> usize {
        self.h.len() + 1
    }

    /// `Qᵀ g`, the second divided differences.
    fn qt(&self, g: &[f64]) -> Vec<f64> {
        let h = &self.h;
        (0..h.len() - 1)
            .map(|k| (g[k + 2] - g[k + 1]) / h[k + 1] - (g[k + 1] - g[k]) / h[k])
            .collect()
    }

    /// `Q γ` for an interior vector `γ` of length `n - 2`.
    fn q(&self, gamma: &[f64]) -> Vec<f64> {
        q_apply(&self.h, gamma)
    }

    fn r_solve(&self, v: &[f64]) -> Result<Vec<f64>> {
        Ok(self.r.cholesky()?.solve(v))
    }

    /// `gᵀ K g`, the roughness of the natural spline interpolating `g`.
    pub fn quad_form(&self, g: &[f64]) -> Result<f64> {
        check_len(g, self.dim())?;
        let d = self.qt(g);
        let gamma = self.r_solve(&d)?;
        Ok(d.iter().zip(&gamma).map(|(a, b)| a * b).sum())
    }

    /// `K g`.
    pub fn apply(&self, g: &[f64]) -> Result<Vec<f64>> {
        check_len(g, self.dim())?;
        let gamma = self.r_solve(&self.qt(g))?;
        Ok(self.q(&gamma))
    }

    /// Dense `n × n` copy of `K`, row-major.
    pub fn to_dense(&self) -> Result<nalgebra::DMatrix<f64>> {
        let n = self.dim();
        let chol = self.r.cholesky()?;
        let mut k = nalgebra::DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let col = self.q(&chol.solve(&self.qt(&e)));
            for (i, v) in col.into_iter().enumerate() {
                k[(i, j)] = v;
            }
        }
        // symmetrise rounding noise
        let kt = k.transpose();
        Ok((k + kt) * 0.5)
    }

    /// Eigenvalues of `K` in ascending order.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let dense = self.to_dense()?;
        let mut ev: Vec<f64> = dense.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(ev)
    }
}

fn check_len(v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return invalid(format!("vector of length {} for dimension {n}", v.len()));
    }
    Ok(())
}

fn q_apply(h: &[f64], gamma: &[f64]) -> Vec<f64> {
    let n = h.len() + 1;
    let mut out = vec![0.0; n];
    for (k, &c) in gamma.iter().enumerate() {
        out[k] += c / h[k];
        out[k + 1] -= c * (1.0 / h[k] + 1.0 / h[k + 1]);
        out[k + 2] += c / h[k + 1];
    }
    out
}

/// Gram matrix `R`, stored with room for `bandwidth` off-diagonals.
fn gram_tridiagonal(h: &[f64], bandwidth: usize) -> SymBanded {
    let m = h.len() - 1;
    let mut r = SymBanded::zeros(m, bandwidth);
    for k in 0..m {
        r.add(k, k, (h[k] + h[k + 1]) / 3.0);
        if k + 1 < m {
            r.add(k + 1, k, h[k + 1] / 6.0);
        }
    }
    r
}

/// Penalty quadratic form for the design of `sample`.
pub fn build_penalty(sample: &Sample) -> PenaltyMatrix {
    let h = spacings(sample.t());
    let r = gram_tridiagonal(&h, 1);
    PenaltyMatrix { h, r }
}

const REFINEMENT_STEPS: usize = 2;

/// Unique minimiser of `Σ λ_i (y_i - g(t_i))² + ∫ g''²`.
pub fn solve_weighted(sample: &Sample, weights: &WeightVector) -> Result<SplineFit> {
    let n = sample.len();
    if weights.len() != n {
        return invalid(format!("{} weights for {} observations", weights.len(), n));
    }
    let h = spacings(sample.t());
    let lam = weights.as_slice();
    let m = n - 2;
    let mut a = gram_tridiagonal(&h, 2);
    // a = R + Qᵀ Λ⁻¹ Q, with Q column k supported on rows k, k+1, k+2
    let col =
        |k: usize| -> [f64; 3] { [1.0 / h[k], -(1.0 / h[k] + 1.0 / h[k + 1]), 1.0 / h[k + 1]] };
    for k in 0..m {
        let ck = col(k);
        a.add(
            k,
            k,
            ck[0] * ck[0] / lam[k] + ck[1] * ck[1] / lam[k + 1] + ck[2] * ck[2] / lam[k + 2],
        );
        if k + 1 < m {
            let c1 = col(k + 1);
            a.add(
                k + 1,
                k,
                ck[1] * c1[0] / lam[k + 1] + ck[2] * c1[1] / lam[k + 2],
            );
        }
        if k + 2 < m {
            let c2 = col(k + 2);
            a.add(k + 2, k, ck[2] * c2[0] / lam[k + 2]);
        }
    }
    let fact = a.cholesky()?;
    let r = gram_tridiagonal(&h, 1).cholesky()?;
    let second_diff = |g: &[f64]| -> Vec<f64> {
        (0..m)
            .map(|k| (g[k + 2] - g[k + 1]) / h[k + 1] - (g[k + 1] - g[k]) / h[k])
            .collect()
    };
    // the smoother z ↦ (Λ + K)⁻¹ Λ z, through the banded system for γ
    let smooth = |z: &[f64]| -> Vec<f64> {
        let qg = q_apply(&h, &fact.solve(&second_diff(z)));
        z.iter()
            .zip(&qg)
            .zip(lam)
            .map(|((z, q), l)| z - q / l)
            .collect()
    };
    let y = sample.y();
    let mut values = smooth(y);
    // `y - Λ⁻¹Qγ` loses digits where λ is tiny; refine against the normal
    // equations `Λ(y - g) = K g`
    for _ in 0..REFINEMENT_STEPS {
        let kg = q_apply(&h, &r.solve(&second_diff(&values)));
        let z: Vec<f64> = (0..n)
            .map(|i| (y[i] - values[i]) - kg[i] / lam[i])
            .collect();
        let delta = smooth(&z);
        values.iter_mut().zip(&delta).for_each(|(g, d)| *g += d);
    }
    let gamma = r.solve(&second_diff(&values));
    if gamma.iter().chain(&values).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite spline coefficients".into()));
    }
    Ok(SplineFit::from_parts(sample.t().to_vec(), values, &gamma))
}

/// Ordinary least-squares line through the data, as `(intercept, slope)`.
pub fn least_squares_line(sample: &Sample) -> (f64, f64) {
    let n = sample.len() as f64;
    let tm = sample.t().iter().sum::<f64>() / n;
    let ym = sample.y().iter().sum::<f64>() / n;
    let (sxy, sxx) = sample
        .t()
        .iter()
        .zip(sample.y())
        .fold((0.0, 0.0), |(sxy, sxx), (t, y)| {
            (sxy + (t - tm) * (y - ym), sxx + (t - tm) * (t - tm))
        });
    let slope = sxy / sxx;
    (ym - slope * tm, slope)
}
