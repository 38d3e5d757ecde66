//! Tail estimators from threshold exceedances: the directionally weighted
//! moment estimator of the extreme value index, its scale companion, and
//! weighted generalized Pareto (GPD) maximum likelihood.

use crate::error::{Error, Result};
use crate::optim::{Bfgs, NelderMead};

/// Exceedances of a positive threshold with normalized weights.
///
/// Excesses are `x - u` and may be zero when values tie with the threshold
/// order statistic; log-excesses are `log x - log u`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedExceedances {
    threshold: f64,
    excess: Vec<f64>,
    log_excess: Vec<f64>,
    weights: Vec<f64>,
}

impl WeightedExceedances {
    /// `values` are the exceeding observations themselves (not excesses).
    pub fn new(values: &[f64], threshold: f64, weights: Vec<f64>) -> Result<Self> {
        if !(threshold > 0.0) || !threshold.is_finite() {
            return Err(Error::Domain(format!("threshold must be positive, got {threshold}")));
        }
        if values.is_empty() {
            return Err(Error::Empty("exceedance set"));
        }
        if weights.len() != values.len() {
            return Err(Error::Dimension {
                expected: values.len(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Domain("weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("weights sum to {total}, not 1")));
        }
        if let Some(v) = values.iter().find(|&&v| !(v >= threshold)) {
            return Err(Error::Domain(format!("value {v} is below threshold {threshold}")));
        }
        let lu = threshold.ln();
        Ok(WeightedExceedances {
            threshold,
            excess: values.iter().map(|v| v - threshold).collect(),
            log_excess: values.iter().map(|v| v.ln() - lu).collect(),
            weights,
        })
    }

    /// Constant weights `1/k`.
    pub fn uniform(values: &[f64], threshold: f64) -> Result<Self> {
        let k = values.len();
        Self::new(values, threshold, vec![1.0 / k.max(1) as f64; k])
    }

    /// Build from raw (unnormalized, nonnegative) kernel weights.
    pub fn with_kernel(values: &[f64], threshold: f64, kernel: &[f64]) -> Result<Self> {
        let total: f64 = kernel.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Domain("kernel weights sum to zero".into()));
        }
        Self::new(values, threshold, kernel.iter().map(|k| k / total).collect())
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn excess(&self) -> &[f64] {
        &self.excess
    }

    pub fn log_excess(&self) -> &[f64] {
        &self.log_excess
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.excess.len()
    }

    pub fn is_empty(&self) -> bool {
        self.excess.is_empty()
    }

    pub fn weighted_mean_excess(&self) -> f64 {
        self.excess.iter().zip(&self.weights).map(|(y, w)| y * w).sum()
    }

    fn max_excess(&self) -> f64 {
        self.excess.iter().cloned().fold(0.0, f64::max)
    }

    /// Same threshold and weights, excesses multiplied by `c`.
    pub fn scaled_excess(&self, c: f64) -> Self {
        let mut out = self.clone();
        for y in &mut out.excess {
            *y *= c;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    Moment,
    LocalMl,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Moment => "moment",
            EstimatorKind::LocalMl => "local_ml",
        }
    }
}

/// Point estimate of tail parameters at one centroid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailFit {
    pub xi: f64,
    /// GPD scale for ML; the moment scale function value for the moment kind.
    pub scale: f64,
    pub k: usize,
    pub tally_n: usize,
    pub kind: EstimatorKind,
    pub converged: bool,
    pub log_likelihood: f64,
}

/// Weighted moment statistic `sum_i w_i (log X_i - log u)^order`.
pub fn moment_statistics(we: &WeightedExceedances, order: u32) -> Result<f64> {
    if we.is_empty() {
        return Err(Error::Empty("exceedance set"));
    }
    if order != 1 && order != 2 {
        return Err(Error::Domain(format!("moment order must be 1 or 2, got {order}")));
    }
    Ok(we
        .log_excess
        .iter()
        .zip(&we.weights)
        .map(|(l, w)| w * l.powi(order as i32))
        .sum())
}

/// `(M1, 1 - M1^2/M2)`, or an error when the denominator degenerates.
fn moment_core(m1: f64, m2: f64) -> Result<f64> {
    if !(m2 > 0.0) {
        return Err(Error::Degenerate("second log-moment is zero".into()));
    }
    let denom = 1.0 - m1 * m1 / m2;
    if !(denom > 1e-12) {
        return Err(Error::Degenerate("log-excesses are all equal".into()));
    }
    Ok(denom)
}

/// Extreme value index from the two log-moments.
pub fn moment_xi_from_stats(m1: f64, m2: f64) -> Result<f64> {
    let denom = moment_core(m1, m2)?;
    Ok(m1 + 1.0 - 0.5 / denom)
}

/// Scale function estimate from the two log-moments and the threshold.
pub fn moment_scale_from_stats(u: f64, m1: f64, m2: f64) -> Result<f64> {
    let denom = moment_core(m1, m2)?;
    Ok(u * m1 * 0.5 / denom)
}

pub fn moment_xi(we: &WeightedExceedances) -> Result<f64> {
    moment_xi_from_stats(moment_statistics(we, 1)?, moment_statistics(we, 2)?)
}

pub fn moment_scale(we: &WeightedExceedances) -> Result<f64> {
    moment_scale_from_stats(we.threshold, moment_statistics(we, 1)?, moment_statistics(we, 2)?)
}

/// Moment estimates packaged as a [`TailFit`].
pub fn fit_moment(we: &WeightedExceedances, tally_n: usize) -> Result<TailFit> {
    let m1 = moment_statistics(we, 1)?;
    let m2 = moment_statistics(we, 2)?;
    Ok(TailFit {
        xi: moment_xi_from_stats(m1, m2)?,
        scale: moment_scale_from_stats(we.threshold, m1, m2)?,
        k: we.len(),
        tally_n,
        kind: EstimatorKind::Moment,
        converged: true,
        log_likelihood: f64::NAN,
    })
}

/// Single-observation GPD log-density `l(xi, sigma | y)`; `-inf` off support.
pub fn gpd_logdensity(xi: f64, sigma: f64, y: f64) -> f64 {
    let z = y / sigma;
    if xi == 0.0 {
        return -sigma.ln() - z;
    }
    let t = xi * z;
    if !(t > -1.0) {
        return f64::NEG_INFINITY;
    }
    -sigma.ln() - (1.0 + 1.0 / xi) * t.ln_1p()
}

/// Log-density and its partial derivatives with respect to `xi` and
/// `log sigma`. Off support returns `-inf` and zero derivatives.
pub fn gpd_logdensity_grad(xi: f64, log_sigma: f64, y: f64) -> (f64, f64, f64) {
    let sigma = log_sigma.exp();
    let z = y / sigma;
    let t = xi * z;
    if !(t > -1.0) {
        return (f64::NEG_INFINITY, 0.0, 0.0);
    }
    let d_logsigma = -1.0 + (1.0 + xi) * z / (1.0 + t);
    let l1p = t.ln_1p();
    let value = if xi == 0.0 {
        -log_sigma - z
    } else {
        -log_sigma - (1.0 + 1.0 / xi) * l1p
    };
    let d_xi = if xi.abs() < 1e-6 {
        // second-order expansion about xi = 0; the exact form cancels badly
        0.5 * z * z - z + xi * (z * z - 2.0 * z * z * z / 3.0)
    } else {
        l1p / (xi * xi) - (1.0 + 1.0 / xi) * z / (1.0 + t)
    };
    (value, d_xi, d_logsigma)
}

/// Weighted GPD log-likelihood of the excesses; `-inf` on support violation.
pub fn gpd_loglik(xi: f64, sigma: f64, we: &WeightedExceedances) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Domain(format!("GPD scale must be positive, got {sigma}")));
    }
    Ok(loglik_unchecked(xi, sigma, we))
}

fn loglik_unchecked(xi: f64, sigma: f64, we: &WeightedExceedances) -> f64 {
    let mut total = 0.0;
    for (y, w) in we.excess.iter().zip(&we.weights) {
        let l = gpd_logdensity(xi, sigma, *y);
        if l == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        total += w * l;
    }
    total
}

const XI_FLOOR: f64 = -1.0;
/// Fits closer than this to the floor are treated as boundary solutions.
const BOUNDARY_BAND: f64 = 1e-4;

/// Objective in the transformed coordinates `(xi, log sigma)`.
fn ml_objective(we: &WeightedExceedances) -> impl Fn(&[f64]) -> f64 + '_ {
    move |p: &[f64]| {
        if !(p[0] > XI_FLOOR) || !p[1].is_finite() {
            return f64::INFINITY;
        }
        -loglik_unchecked(p[0], p[1].exp(), we)
    }
}

/// Raise `log sigma` until every excess is inside the support of `xi`.
fn make_feasible(xi: f64, log_sigma: f64, we: &WeightedExceedances) -> f64 {
    if xi >= 0.0 {
        return log_sigma;
    }
    let needed = -xi * we.max_excess() * 1.05;
    if needed > 0.0 && log_sigma.exp() <= needed {
        needed.ln()
    } else {
        log_sigma
    }
}

fn distinct_values(we: &WeightedExceedances) -> usize {
    let mut v: Vec<f64> = we
        .excess
        .iter()
        .zip(&we.weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(y, _)| *y)
        .collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

fn ml_fit(we: &WeightedExceedances, starts: &[(f64, f64)], tally_n: usize) -> Result<TailFit> {
    if distinct_values(we) < 2 {
        return Err(Error::Degenerate(
            "GPD likelihood needs at least two distinct exceedances".into(),
        ));
    }
    let obj = ml_objective(we);
    let nm = NelderMead::default();
    let mut best: Option<crate::optim::Minimum> = None;
    for &(xi0, ls0) in starts {
        if !xi0.is_finite() || !ls0.is_finite() {
            continue;
        }
        let xi0 = xi0.clamp(-0.9, 3.0);
        let ls0 = make_feasible(xi0, ls0, we);
        let m = nm.minimize(&obj, &[xi0, ls0], &[0.1, 0.1]);
        if best.as_ref().is_none_or(|b| m.value < b.value) {
            best = Some(m);
        }
    }
    let best = best.ok_or(Error::Degenerate("no feasible starting point".into()))?;
    if !best.value.is_finite() {
        return Err(Error::Degenerate("likelihood is not finite at any explored point".into()));
    }
    if best.x[0] < XI_FLOOR + BOUNDARY_BAND {
        // the likelihood keeps rising towards xi = -1: no interior maximum
        return Err(Error::Degenerate(format!(
            "GPD likelihood has no interior maximum for these {} exceedances",
            we.len()
        )));
    }
    Ok(TailFit {
        xi: best.x[0],
        scale: best.x[1].exp(),
        k: we.len(),
        tally_n,
        kind: EstimatorKind::LocalMl,
        converged: best.converged,
        log_likelihood: -best.value,
    })
}

/// Weighted GPD maximum likelihood over `(-1, inf) x (0, inf)`.
///
/// Simplex search in `(xi, log sigma)`, restarted from the moment-estimator
/// seed and from `(+-0.1, log mean excess)`; the best of the three wins.
pub fn fit_gpd_ml(we: &WeightedExceedances) -> Result<TailFit> {
    fit_gpd_ml_with_tally(we, 0)
}

pub fn fit_gpd_ml_with_tally(we: &WeightedExceedances, tally_n: usize) -> Result<TailFit> {
    let mean = we.weighted_mean_excess();
    let ls_mean = if mean > 0.0 { mean.ln() } else { 0.0 };
    let mut starts = Vec::with_capacity(3);
    if let Some(seed) = moment_seed(we) {
        starts.push(seed);
    }
    starts.push((0.1, ls_mean));
    starts.push((-0.1, ls_mean));
    ml_fit(we, &starts, tally_n)
}

/// Local refinement from `(xi, sigma)`; used for warm starts along a path.
///
/// Quasi-Newton on the analytic gradient, falling back to a simplex run
/// when that stalls (typically near `xi = -1`).
pub fn fit_gpd_ml_from(we: &WeightedExceedances, xi: f64, sigma: f64, tally_n: usize) -> Result<TailFit> {
    if distinct_values(we) < 2 {
        return Err(Error::Degenerate(
            "GPD likelihood needs at least two distinct exceedances".into(),
        ));
    }
    let xi0 = xi.clamp(-0.9, 3.0);
    let ls0 = make_feasible(xi0, sigma.ln(), we);
    if xi0.is_finite() && ls0.is_finite() {
        let bfgs = Bfgs {
            gradient_tol: 1e-9,
            max_iterations: 200,
        };
        let m = bfgs.minimize(ml_objective_grad(we), &[xi0, ls0]);
        if m.converged && m.value.is_finite() && m.x[0] >= XI_FLOOR + BOUNDARY_BAND {
            return Ok(TailFit {
                xi: m.x[0],
                scale: m.x[1].exp(),
                k: we.len(),
                tally_n,
                kind: EstimatorKind::LocalMl,
                converged: true,
                log_likelihood: -m.value,
            });
        }
    }
    ml_fit(we, &[(xi, sigma.ln())], tally_n)
}

/// Negative log-likelihood and its gradient in `(xi, log sigma)`.
fn ml_objective_grad(we: &WeightedExceedances) -> impl Fn(&[f64]) -> (f64, Vec<f64>) + '_ {
    move |p: &[f64]| {
        if !(p[0] > XI_FLOOR) || !p[1].is_finite() {
            return (f64::INFINITY, vec![0.0, 0.0]);
        }
        let (mut v, mut gx, mut gs) = (0.0, 0.0, 0.0);
        for (y, w) in we.excess.iter().zip(&we.weights) {
            let (l, dx, ds) = gpd_logdensity_grad(p[0], p[1], *y);
            if l == f64::NEG_INFINITY {
                return (f64::INFINITY, vec![0.0, 0.0]);
            }
            v -= w * l;
            gx -= w * dx;
            gs -= w * ds;
        }
        (v, vec![gx, gs])
    }
}

/// GPD parameters implied by the moment estimates: shape `xi_M` and the
/// moment scale function value.
pub fn moment_seed(we: &WeightedExceedances) -> Option<(f64, f64)> {
    let xi = moment_xi(we).ok()?;
    let a = moment_scale(we).ok()?;
    (a > 0.0 && xi.is_finite()).then(|| (xi, a.ln()))
}

/// Maximize the likelihood over the scale alone with the shape fixed.
pub fn profile_scale(xi: f64, we: &WeightedExceedances) -> Result<f64> {
    if distinct_values(we) < 1 || we.weighted_mean_excess() <= 0.0 {
        return Err(Error::Degenerate("all excesses are zero".into()));
    }
    let ls0 = make_feasible(xi, we.weighted_mean_excess().ln(), we);
    let f = |p: &[f64]| -loglik_unchecked(xi, p[0].exp(), we);
    let nm = NelderMead {
        diameter_tol: 1e-12,
        max_evaluations: 10_000,
    };
    // Nelder-Mead needs two dimensions to be useful; pad with a dummy coordinate
    let m = nm.minimize(|p: &[f64]| f(&p[..1]) + p[1] * p[1], &[ls0, 0.0], &[0.1, 0.1]);
    Ok(m.x[0].exp())
}
