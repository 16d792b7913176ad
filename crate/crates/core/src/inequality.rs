//! Reverse Jensen bounds evaluated on empirical distributions.
//!
//! Everything here works on an [`EmpiricalDistribution`], a finite weighted
//! sample of a nonnegative random variable `X`. The central quantity is the
//! moments ratio `b(p) = E[X^p] / E[X]^p` and the scaling factor
//!
//! ```text
//! zeta_b(a) = sup_{1/p + 1/q = 1} [1 - b(p)^{1/p} a^{-1/q}]^+ / a
//! ```
//!
//! which turns Jensen's upper bound `f(E[X]) >= E[f(X)]` for a concave `f`
//! with `f(0) = 0` into a matching lower bound `E[f(X)] >= f(a E[X]) zeta_b(a)`.
//! The remaining evaluators (finite support, convex increasing, decreasing
//! convex, the log sandwich and the spread-function product bounds) are all
//! built from those two pieces and return their intermediate quantities so
//! callers can check each side of a chain.

use thiserror::Error;

/// Tolerance used when validating that weights sum to one.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

/// Tolerance on the finite-support comparison `max X <= a E[X]`.
pub const SUPPORT_TOLERANCE: f64 = 1e-12;

/// Tolerance on the plateau hypothesis `f(x) = c` of the decreasing bound.
pub const PLATEAU_TOLERANCE: f64 = 1e-9;

/// Largest exponent used by [`default_p_grid`].
pub const P_MAX: f64 = 1e4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InequalityError {
    #[error("empirical distribution needs at least one value")]
    Empty,
    #[error("values and weights differ in length ({values} vs {weights})")]
    LengthMismatch { values: usize, weights: usize },
    #[error("value {value} at index {index} is negative or not finite")]
    InvalidValue { index: usize, value: f64 },
    #[error("weight {weight} at index {index} is negative or not finite")]
    InvalidWeight { index: usize, weight: f64 },
    #[error("weights sum to {sum}, expected 1")]
    WeightSum { sum: f64 },
    #[error("degenerate mean: E[X] = {mean} must be positive")]
    DegenerateMean { mean: f64 },
    #[error("finite-support condition fails: value {value} exceeds a*E[X] = {limit}")]
    FiniteSupport { value: f64, limit: f64 },
    #[error("trivial zeta, bound vacuous (a = {a})")]
    TrivialZeta { a: f64 },
    #[error("vacuous bound: zeta = {zeta} must be positive")]
    VacuousBound { zeta: f64 },
    #[error("no admissible a in the grid")]
    NoAdmissibleA,
    #[error("f(x) = {value} does not match the plateau value c = {plateau}")]
    Plateau { value: f64, plateau: f64 },
    #[error("sandwich needs strictly positive values, found {value}")]
    NonPositiveValue { value: f64 },
    #[error("normalize inputs to >= 1 first (found {value})")]
    BelowOne { value: f64 },
    #[error("invalid parameter {name} = {value}: {reason}")]
    Parameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
}

pub type Result<T> = std::result::Result<T, InequalityError>;

/// Finite weighted sample standing in for a nonnegative random variable.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl EmpiricalDistribution {
    /// Uniform weights over `values`.
    pub fn uniform(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(InequalityError::Empty);
        }
        let w = 1.0 / n as f64;
        Self::weighted(values, vec![w; n])
    }

    pub fn weighted(values: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(InequalityError::Empty);
        }
        if values.len() != weights.len() {
            return Err(InequalityError::LengthMismatch {
                values: values.len(),
                weights: weights.len(),
            });
        }
        for (index, &value) in values.iter().enumerate() {
            if !(value.is_finite() && value >= 0.0) {
                return Err(InequalityError::InvalidValue { index, value });
            }
        }
        for (index, &weight) in weights.iter().enumerate() {
            if !(weight.is_finite() && weight >= 0.0) {
                return Err(InequalityError::InvalidWeight { index, weight });
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(InequalityError::WeightSum { sum });
        }
        Ok(Self { values, weights })
    }

    /// Point mass at `value`.
    pub fn constant(value: f64) -> Result<Self> {
        Self::weighted(vec![value], vec![1.0])
    }

    /// Two-point measure `{0 w.p. (m-1)/m, m w.p. 1/m}` for which the
    /// finite-support bound is attained with equality at `a = m`.
    pub fn two_point(m: f64) -> Result<Self> {
        if !(m >= 1.0 && m.is_finite()) {
            return Err(InequalityError::Parameter {
                name: "m",
                value: m,
                reason: "must be finite and >= 1",
            });
        }
        Self::weighted(vec![0.0, m], vec![(m - 1.0) / m, 1.0 / m])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `E[g(X)]` under the empirical weights. Atoms of zero weight are skipped
    /// so that `g` is never evaluated where the measure puts no mass.
    pub fn expect(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.values
            .iter()
            .zip(&self.weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(&v, &w)| w * g(v))
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.expect(|v| v)
    }

    /// Largest value carrying positive weight.
    pub fn max_support(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(&v, _)| v)
            .fold(0.0, f64::max)
    }

    /// Same weights, values scaled by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::weighted(
            self.values.iter().map(|v| v * factor).collect(),
            self.weights.clone(),
        )
    }

    fn positive_mean(&self) -> Result<f64> {
        let mean = self.mean();
        if mean > 0.0 && mean.is_finite() {
            Ok(mean)
        } else {
            Err(InequalityError::DegenerateMean { mean })
        }
    }

    /// `ln b(p)` computed in log space so large `p` does not overflow.
    pub fn log_moment_ratio(&self, p: f64) -> Result<f64> {
        let mean = self.positive_mean()?;
        let terms: Vec<f64> = self
            .values
            .iter()
            .zip(&self.weights)
            .filter(|(&v, &w)| v > 0.0 && w > 0.0)
            .map(|(&v, &w)| w.ln() + p * (v / mean).ln())
            .collect();
        Ok(log_sum_exp(&terms))
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Weighted power mean `E[X^p]`, with `0^p = 0`.
pub fn moment(dist: &EmpiricalDistribution, p: f64) -> f64 {
    dist.expect(|v| if v == 0.0 { 0.0 } else { v.powf(p) })
}

/// Moments ratio `b(p) = E[X^p] / E[X]^p`.
pub fn moment_ratio(dist: &EmpiricalDistribution, p: f64) -> Result<f64> {
    if p == 1.0 {
        dist.positive_mean()?;
        return Ok(1.0);
    }
    Ok(dist.log_moment_ratio(p)?.exp())
}

/// Geometric grid `1.01 * 2^k` below [`P_MAX`], plus `p = 2` and `p = P_MAX`.
pub fn default_p_grid() -> Vec<f64> {
    let mut grid: Vec<f64> = (0..)
        .map(|k| 1.01 * 2f64.powi(k))
        .take_while(|&p| p < P_MAX)
        .collect();
    grid.push(2.0);
    grid.push(P_MAX);
    grid.sort_by(f64::total_cmp);
    grid
}

/// Geometric grid of `points` values over `(b, factor * b]`.
pub fn geometric_a_grid(b: f64, factor: f64, points: usize) -> Vec<f64> {
    (1..=points)
        .map(|i| b * factor.powf(i as f64 / points as f64))
        .collect()
}

/// The default `a` grid: 200 points over `(b, 1000 b]`.
pub fn default_a_grid(b: f64) -> Vec<f64> {
    geometric_a_grid(b, 1e3, 200)
}

/// Result of evaluating `zeta_b(a)` over a grid of Hölder exponents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZetaEvaluation {
    pub a: f64,
    pub zeta: f64,
    /// Maximizing exponent. When every bracket is nonpositive this is the
    /// first grid point and `zeta` is zero.
    pub p_star: f64,
    pub b_at_p_star: f64,
}

/// `zeta_b(a)` as a maximum over `p_grid`, with `q = p / (p - 1)`.
pub fn zeta_sup(dist: &EmpiricalDistribution, a: f64, p_grid: &[f64]) -> Result<ZetaEvaluation> {
    let log_ratios = log_ratios_on_grid(dist, p_grid)?;
    zeta_from_log_ratios(a, p_grid, &log_ratios)
}

/// `ln b(p)` for every grid entry, after validating the grid.
fn log_ratios_on_grid(dist: &EmpiricalDistribution, p_grid: &[f64]) -> Result<Vec<f64>> {
    if p_grid.is_empty() {
        return Err(InequalityError::Parameter {
            name: "p_grid",
            value: 0.0,
            reason: "must be nonempty",
        });
    }
    if let Some(&p) = p_grid.iter().find(|&&p| !(p > 1.0)) {
        return Err(InequalityError::Parameter {
            name: "p",
            value: p,
            reason: "grid entries must exceed 1",
        });
    }
    p_grid.iter().map(|&p| dist.log_moment_ratio(p)).collect()
}

fn zeta_from_log_ratios(a: f64, p_grid: &[f64], log_ratios: &[f64]) -> Result<ZetaEvaluation> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(InequalityError::Parameter {
            name: "a",
            value: a,
            reason: "must be positive and finite",
        });
    }
    let ln_a = a.ln();
    let mut best: Option<(f64, f64, f64)> = None;
    for (&p, &log_b) in p_grid.iter().zip(log_ratios) {
        let inv_q = 1.0 - 1.0 / p;
        let bracket = 1.0 - (log_b / p - ln_a * inv_q).exp();
        let value = bracket.max(0.0) / a;
        if best.is_none_or(|(z, _, _)| value > z) {
            best = Some((value, p, log_b));
        }
    }
    let (zeta, p_star, log_b) = best.expect("grid checked nonempty");
    Ok(ZetaEvaluation {
        a,
        zeta,
        p_star,
        b_at_p_star: log_b.exp(),
    })
}

/// Closed form of `zeta_b(a)` at `p = q = 2`: `(1 - sqrt(b/a))^+ / a`.
pub fn zeta_p2(b: f64, a: f64) -> f64 {
    (1.0 - (b / a).sqrt()).max(0.0) / a
}

/// Best reverse Jensen lower bound found over an `a` grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcaveBound {
    pub bound: f64,
    pub a_star: Option<f64>,
    pub zeta: Option<ZetaEvaluation>,
}

/// `sup_a f(a E[X]) zeta_b(a)` for concave `f >= 0` with `f(0) = 0`.
///
/// Only grid points with `a > b(p*)` are admissible. An empty effective grid
/// yields `bound = 0` and no `a_star`.
pub fn concave_lower_bound(
    f: impl Fn(f64) -> f64,
    dist: &EmpiricalDistribution,
    a_grid: &[f64],
    p_grid: &[f64],
) -> Result<ConcaveBound> {
    let mean = dist.positive_mean()?;
    let log_ratios = log_ratios_on_grid(dist, p_grid)?;
    let mut out = ConcaveBound {
        bound: 0.0,
        a_star: None,
        zeta: None,
    };
    for &a in a_grid {
        let z = zeta_from_log_ratios(a, p_grid, &log_ratios)?;
        if !(a > z.b_at_p_star) {
            continue;
        }
        let candidate = f(a * mean) * z.zeta;
        if out.a_star.is_none() || candidate > out.bound {
            out = ConcaveBound {
                bound: candidate,
                a_star: Some(a),
                zeta: Some(z),
            };
        }
    }
    Ok(out)
}

/// `f(a E[X]) / a`, valid when no atom lies above `a E[X]`.
pub fn finite_support_lower_bound(
    f: impl Fn(f64) -> f64,
    dist: &EmpiricalDistribution,
    a: f64,
) -> Result<f64> {
    let mean = dist.positive_mean()?;
    check_finite_support(dist, a, mean)?;
    Ok(f(a * mean) / a)
}

fn check_finite_support(dist: &EmpiricalDistribution, a: f64, mean: f64) -> Result<()> {
    let limit = a * mean;
    let value = dist.max_support();
    if value - limit > SUPPORT_TOLERANCE * limit.max(1.0) {
        return Err(InequalityError::FiniteSupport { value, limit });
    }
    Ok(())
}

/// Both sides of `f(E[X] / zeta_b(a)) >= a E[f(X)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvexCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub zeta: ZetaEvaluation,
}

/// Convex increasing bound. `zeta` is computed from the distribution of `X`
/// and the inverse `zeta_b^{-1}(a)` is read as `1 / zeta_b(a)`.
pub fn convex_increasing_check(
    f: impl Fn(f64) -> f64,
    dist: &EmpiricalDistribution,
    a: f64,
    p_grid: &[f64],
) -> Result<ConvexCheck> {
    let mean = dist.positive_mean()?;
    let zeta = zeta_sup(dist, a, p_grid)?;
    if zeta.zeta <= 0.0 {
        return Err(InequalityError::TrivialZeta { a });
    }
    Ok(ConvexCheck {
        lhs: f(mean / zeta.zeta),
        rhs: a * dist.expect(&f),
        zeta,
    })
}

/// Both sides of the power moment bound `E[Y^c] <= a^{c-1} E[Y]^c` with
/// `Y = X^{1/c}`, under the finite-support condition on `X`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentBound {
    pub lhs: f64,
    pub rhs: f64,
}

pub fn power_moment_bound(dist: &EmpiricalDistribution, a: f64, c: f64) -> Result<MomentBound> {
    if !(c > 1.0) {
        return Err(InequalityError::Parameter {
            name: "c",
            value: c,
            reason: "must exceed 1",
        });
    }
    let mean = dist.positive_mean()?;
    check_finite_support(dist, a, mean)?;
    let mean_y = dist.expect(|x| x.powf(1.0 / c));
    Ok(MomentBound {
        lhs: mean,
        rhs: a.powf(c - 1.0) * mean_y.powf(c),
    })
}

/// Upper bound on `E[f(Z + x)]` for decreasing convex `f` with `f(x) = c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecreasingBound {
    pub bound: f64,
    pub a_star: f64,
    /// `zeta_b(a_star)`; absent when `Z` is identically zero.
    pub zeta: Option<ZetaEvaluation>,
}

/// `inf_a { f(a E[Z] + x) + [c - f(a E[Z] + x)] (1 - zeta_b(a)) }`, where
/// `zeta` is computed from the distribution of `Z >= 0`.
pub fn decreasing_convex_upper(
    f: impl Fn(f64) -> f64,
    x_shift: f64,
    c_plateau: f64,
    dist_z: &EmpiricalDistribution,
    a_grid: &[f64],
    p_grid: &[f64],
) -> Result<DecreasingBound> {
    let at_shift = f(x_shift);
    if (at_shift - c_plateau).abs() > PLATEAU_TOLERANCE {
        return Err(InequalityError::Plateau {
            value: at_shift,
            plateau: c_plateau,
        });
    }
    let mean = dist_z.mean();
    if mean == 0.0 {
        // Z = 0 almost surely: every term collapses to c.
        let &a_star = a_grid.first().ok_or(InequalityError::NoAdmissibleA)?;
        return Ok(DecreasingBound {
            bound: c_plateau,
            a_star,
            zeta: None,
        });
    }
    let log_ratios = log_ratios_on_grid(dist_z, p_grid)?;
    let mut best: Option<DecreasingBound> = None;
    for &a in a_grid {
        let z = zeta_from_log_ratios(a, p_grid, &log_ratios)?;
        if !(a > z.b_at_p_star) {
            continue;
        }
        let f_shifted = f(a * mean + x_shift);
        let candidate = f_shifted + (c_plateau - f_shifted) * (1.0 - z.zeta);
        if best.is_none_or(|b| candidate < b.bound) {
            best = Some(DecreasingBound {
                bound: candidate,
                a_star: a,
                zeta: Some(z),
            });
        }
    }
    best.ok_or(InequalityError::NoAdmissibleA)
}

/// The three terms of the log sandwich together with its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogSandwich {
    pub lower: f64,
    pub middle: f64,
    pub upper: f64,
    pub a: f64,
    pub zeta: f64,
    /// `c(a, E[X]) = (1/E[X] + a)^zeta`.
    pub c_norm: f64,
}

impl LogSandwich {
    /// `lower <= middle <= upper` up to `tol`.
    pub fn is_ordered(&self, tol: f64) -> bool {
        self.lower <= self.middle + tol && self.middle <= self.upper + tol
    }
}

/// Evaluates
///
/// ```text
/// log E[X] <= (1/zeta) E[log((1 + X) / c)] <= (1/zeta) log(1 + E[X]) + log(E[X] / (1 + a E[X]))
/// ```
///
/// The ordering only holds when `zeta` is a valid `zeta_b(a)` for `X`, which
/// is the caller's responsibility.
pub fn log_expectation_sandwich(
    dist: &EmpiricalDistribution,
    a: f64,
    zeta: f64,
) -> Result<LogSandwich> {
    if !(zeta > 0.0) {
        return Err(InequalityError::VacuousBound { zeta });
    }
    if let Some(&value) = dist
        .values()
        .iter()
        .zip(dist.weights())
        .filter(|(_, &w)| w > 0.0)
        .map(|(v, _)| v)
        .find(|&&v| v <= 0.0)
    {
        return Err(InequalityError::NonPositiveValue { value });
    }
    let mean = dist.positive_mean()?;
    let log_c = zeta * (1.0 / mean + a).ln();
    let middle = dist.expect(|x| x.ln_1p() - log_c) / zeta;
    Ok(LogSandwich {
        lower: mean.ln(),
        middle,
        upper: mean.ln_1p() / zeta + (mean / (1.0 + a * mean)).ln(),
        a,
        zeta,
        c_norm: log_c.exp(),
    })
}

/// Spread `max_i v_i / mean(v)` of a sequence normalized to `v_i >= 1`.
pub fn spread(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(InequalityError::Empty);
    }
    if let Some(&value) = values.iter().find(|&&v| !(v >= 1.0 && v.is_finite())) {
        return Err(InequalityError::BelowOne { value });
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(max / mean)
}

/// `C(s) = max_{c1} (1/c1)(1 - sqrt((1+s)/c1))`.
///
/// The maximum sits at `c1 = 9(1+s)/4`, giving `C(s) = 4 / (27(1+s))`.
pub fn spread_constant(s: f64) -> f64 {
    4.0 / (27.0 * (1.0 + s))
}

/// Maximizer `c1` of the spread-constant objective.
pub fn spread_constant_argmax(s: f64) -> f64 {
    2.25 * (1.0 + s)
}

/// Spread-function bounds on the geometric mean of `a_i / b_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpreadBounds {
    pub s_a: f64,
    pub s_b: f64,
    pub c_a: f64,
    pub c_b: f64,
    pub lower: f64,
    pub middle: f64,
    pub upper: f64,
}

impl SpreadBounds {
    pub fn chain_holds(&self, tol: f64) -> bool {
        self.lower <= self.middle * (1.0 + tol) && self.middle <= self.upper * (1.0 + tol)
    }
}

/// Computes the product-type chain
/// `mean(a)^C(s_a) / mean(b) <= (prod a_i/b_i)^{1/n} <= mean(a) / mean(b)^C(s_b)`
/// without asserting it. No proof of the chain is available, so callers
/// treat it as an empirical claim.
pub fn product_ratio_bounds(a_vals: &[f64], b_vals: &[f64]) -> Result<SpreadBounds> {
    if a_vals.len() != b_vals.len() {
        return Err(InequalityError::LengthMismatch {
            values: a_vals.len(),
            weights: b_vals.len(),
        });
    }
    let s_a = spread(a_vals)?;
    let s_b = spread(b_vals)?;
    let n = a_vals.len() as f64;
    let mean_a = a_vals.iter().sum::<f64>() / n;
    let mean_b = b_vals.iter().sum::<f64>() / n;
    let log_gm = a_vals
        .iter()
        .zip(b_vals)
        .map(|(a, b)| a.ln() - b.ln())
        .sum::<f64>()
        / n;
    let c_a = spread_constant(s_a);
    let c_b = spread_constant(s_b);
    Ok(SpreadBounds {
        s_a,
        s_b,
        c_a,
        c_b,
        lower: mean_a.powf(c_a) / mean_b,
        middle: log_gm.exp(),
        upper: mean_a / mean_b.powf(c_b),
    })
}
