//! Pearson correlation with exact two-sided Student-t significance, simple
//! least squares, and leave-one-out influence of single observations.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numeric::{sum, CompensatedSum};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationResult {
    pub r: f64,
    /// Two-sided; zero only for a perfect correlation.
    pub p_value: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearModel {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n: usize,
}

impl LinearModel {
    pub fn predict(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

// Centered second moments (sxx, syy, sxy) with compensated accumulation.
fn moments(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let mx = sum(x.iter().copied()) / x.len() as f64;
    let my = sum(y.iter().copied()) / y.len() as f64;
    let mut sxx = CompensatedSum::new();
    let mut syy = CompensatedSum::new();
    let mut sxy = CompensatedSum::new();
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx.add(dx * dx);
        syy.add(dy * dy);
        sxy.add(dx * dy);
    }
    (sxx.value(), syy.value(), sxy.value())
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&a| a == v[0])
}

fn check_lengths(x: &[f64], y: &[f64], needed: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < needed {
        return Err(Error::InsufficientData {
            needed,
            got: x.len(),
        });
    }
    Ok(())
}

/// Product-moment correlation and its two-sided p-value under a Student t
/// distribution with `n − 2` degrees of freedom.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<CorrelationResult> {
    check_lengths(x, y, 3)?;
    if is_constant(x) {
        return Err(Error::ConstantInput("x"));
    }
    if is_constant(y) {
        return Err(Error::ConstantInput("y"));
    }
    let (sxx, syy, sxy) = moments(x, y);
    let r = (sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0);
    let n = x.len();
    Ok(CorrelationResult {
        r,
        p_value: p_value_two_sided(r, n),
        n,
    })
}

/// Two-sided p-value of a sample correlation `r` over `n` pairs.
///
/// With `t = r·√((n−2)/(1−r²))` and `ν = n − 2`, `P(|T| ≥ |t|)` equals the
/// regularized incomplete beta `I_{ν/(ν+t²)}(ν/2, 1/2)`, and
/// `ν/(ν+t²) = 1 − r²`.
pub fn p_value_two_sided(r: f64, n: usize) -> f64 {
    assert!(n >= 3, "p-value needs at least 3 pairs");
    let r = libm::fabs(r);
    if r >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let x = (1.0 - r) * (1.0 + r);
    regularized_incomplete_beta(x, df / 2.0, 0.5).clamp(0.0, 1.0)
}

/// `I_x(a, b)` by continued fraction (modified Lentz), using the symmetry
/// `I_x(a, b) = 1 − I_{1−x}(b, a)` on the slowly converging side.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b)
        + a * libm::log(x)
        + b * libm::log1p(-x);
    let front = libm::exp(ln_front);
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b
    }
}

fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    const MAX_TERMS: usize = 10_000;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if libm::fabs(d) < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_TERMS {
        let m = m as f64;
        let m2 = 2.0 * m;
        // even step
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if libm::fabs(d) < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if libm::fabs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        // odd step
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if libm::fabs(d) < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if libm::fabs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if libm::fabs(delta - 1.0) < EPS {
            break;
        }
    }
    h
}

/// Closed-form simple regression `y ≈ slope·x + intercept`.
pub fn ols_fit(x: &[f64], y: &[f64]) -> Result<LinearModel> {
    check_lengths(x, y, 2)?;
    if is_constant(x) {
        return Err(Error::SingularDesign);
    }
    let (sxx, syy, sxy) = moments(x, y);
    let slope = sxy / sxx;
    let mx = sum(x.iter().copied()) / x.len() as f64;
    let my = sum(y.iter().copied()) / y.len() as f64;
    let intercept = my - slope * mx;
    // A constant response is fitted exactly.
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        ((sxy / sxx) * (sxy / syy)).clamp(0.0, 1.0)
    };
    Ok(LinearModel {
        slope,
        intercept,
        r_squared,
        n: x.len(),
    })
}

pub const DEFAULT_INFLUENCE_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceRow {
    pub label: String,
    /// `None` when the remaining sample makes the correlation undefined.
    pub r_without: Option<f64>,
    pub delta: Option<f64>,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceReport {
    /// Full-sample correlation, shared by every row.
    pub r_with: f64,
    pub threshold: f64,
    pub rows: Vec<InfluenceRow>,
}

impl InfluenceReport {
    pub fn flagged(&self) -> impl Iterator<Item = &InfluenceRow> + '_ {
        self.rows.iter().filter(|r| r.flagged)
    }

    /// Largest `|delta|` over rows with a defined correlation.
    pub fn max_abs_delta(&self) -> Option<f64> {
        self.rows
            .iter()
            .filter_map(|r| r.delta)
            .map(libm::fabs)
            .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.max(d))))
    }
}

/// Recompute the correlation with each observation left out in turn;
/// `delta = r_without − r_with`, flagged when `|delta| > threshold`.
pub fn loo_influence(x: &[f64], y: &[f64], labels: &[String], threshold: f64) -> Result<InfluenceReport> {
    check_lengths(x, y, 4)?;
    if labels.len() != x.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: labels.len(),
        });
    }
    let r_with = pearson(x, y)?.r;
    let mut xs = Vec::with_capacity(x.len() - 1);
    let mut ys = Vec::with_capacity(x.len() - 1);
    let rows = (0..x.len())
        .map(|k| {
            xs.clear();
            ys.clear();
            for i in (0..x.len()).filter(|&i| i != k) {
                xs.push(x[i]);
                ys.push(y[i]);
            }
            let r_without = pearson(&xs, &ys).ok().map(|c| c.r);
            let delta = r_without.map(|r| r - r_with);
            InfluenceRow {
                label: labels[k].clone(),
                r_without,
                delta,
                flagged: delta.is_some_and(|d| libm::fabs(d) > threshold),
            }
        })
        .collect();
    Ok(InfluenceReport {
        r_with,
        threshold,
        rows,
    })
}
