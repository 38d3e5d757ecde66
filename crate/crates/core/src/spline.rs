//! Periodic cubic B-splines on the circle.
//!
//! The shape and log-scale of the exceedance distribution are expanded in
//! `n_b` periodic cubic B-splines with equally spaced knots, penalized by the
//! cyclic first differences of their coefficients, and fitted by maximum
//! penalized likelihood. The penalty weights are picked by bootstrap
//! cross-validation. A penalized logistic regression on the same basis gives
//! the threshold exceedance probability.

use nalgebra::{DMatrix, DVector};

use crate::circular::Direction;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::optim::Bfgs;
use crate::random::{out_of_bag, resample_indices, stream_rng};
use crate::sample::{CentroidGrid, DirectionalSample};
use crate::tail::{fit_gpd_ml, gpd_logdensity_grad, WeightedExceedances};

pub const DEFAULT_BASIS_COUNT: usize = 12;
pub const DEFAULT_PENALTY_GRID: [f64; 6] = [1e-2, 1e-1, 1.0, 10.0, 1e2, 1e3];

/// Uniform cubic B-spline with support `[0, 4)`.
fn cubic_bspline(x: f64) -> f64 {
    if !(0.0..4.0).contains(&x) {
        return 0.0;
    }
    if x < 1.0 {
        x * x * x / 6.0
    } else if x < 2.0 {
        (-3.0 * x * x * x + 12.0 * x * x - 12.0 * x + 4.0) / 6.0
    } else if x < 3.0 {
        (3.0 * x * x * x - 24.0 * x * x + 60.0 * x - 44.0) / 6.0
    } else {
        let r = 4.0 - x;
        r * r * r / 6.0
    }
}

/// Nonzero basis values at `theta`: `(b0, w)` with `w[r]` the value of basis
/// function `(b0 + r) mod n_b`.
pub fn periodic_row(n_b: usize, theta: Direction) -> (usize, [f64; 4]) {
    let spacing = 360.0 / n_b as f64;
    let pos = theta.degrees() / spacing;
    let mut s = pos.floor() as usize;
    let mut frac = pos - s as f64;
    if s >= n_b {
        s = n_b - 1;
        frac = 1.0;
    }
    // basis s - r sits at local coordinate r + frac
    let mut w = [0.0; 4];
    for (r, slot) in w.iter_mut().enumerate() {
        *slot = cubic_bspline(r as f64 + frac);
    }
    let b0 = (s + n_b - 3) % n_b;
    (b0, [w[3], w[2], w[1], w[0]])
}

/// `sum_b B_b(theta) beta_b`.
pub fn spline_value(beta: &[f64], theta: Direction) -> f64 {
    let n_b = beta.len();
    let (b0, w) = periodic_row(n_b, theta);
    (0..4).map(|r| w[r] * beta[(b0 + r) % n_b]).sum()
}

/// Basis matrix of a periodic cubic B-spline evaluated on a centroid grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicBasis {
    n_b: usize,
    knots: Vec<f64>,
    rows: Vec<(usize, [f64; 4])>,
}

impl PeriodicBasis {
    pub fn new(n_b: usize, grid: &CentroidGrid) -> Result<Self> {
        if n_b < 4 {
            return Err(Error::Domain(format!("a periodic cubic basis needs n_b >= 4, got {n_b}")));
        }
        let spacing = 360.0 / n_b as f64;
        Ok(PeriodicBasis {
            n_b,
            knots: (0..n_b).map(|b| b as f64 * spacing).collect(),
            rows: grid.centroids().iter().map(|&c| periodic_row(n_b, c)).collect(),
        })
    }

    pub fn n_b(&self) -> usize {
        self.n_b
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of centroids.
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Dense basis values at an arbitrary direction.
    pub fn evaluate(&self, theta: Direction) -> Vec<f64> {
        dense(self.n_b, periodic_row(self.n_b, theta))
    }

    pub fn dense_row(&self, j: usize) -> Vec<f64> {
        dense(self.n_b, self.rows[j])
    }

    /// The `m x n_b` matrix `B`.
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        (0..self.rows.len()).map(|j| self.dense_row(j)).collect()
    }

    /// `B beta`, one value per centroid.
    pub fn combine(&self, beta: &[f64]) -> Vec<f64> {
        debug_assert_eq!(beta.len(), self.n_b);
        self.rows
            .iter()
            .map(|(b0, w)| (0..4).map(|r| w[r] * beta[(b0 + r) % self.n_b]).sum())
            .collect()
    }

    /// `out += B^T v`.
    fn add_transpose(&self, v: &[f64], out: &mut [f64]) {
        for ((b0, w), vj) in self.rows.iter().zip(v) {
            if *vj == 0.0 {
                continue;
            }
            for r in 0..4 {
                out[(b0 + r) % self.n_b] += w[r] * vj;
            }
        }
    }
}

fn dense(n_b: usize, (b0, w): (usize, [f64; 4])) -> Vec<f64> {
    let mut row = vec![0.0; n_b];
    for r in 0..4 {
        row[(b0 + r) % n_b] += w[r];
    }
    row
}

/// Cyclic first-difference operator: `(D beta)_r = beta_{r+1} - beta_r`,
/// indices mod `n_b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PenaltyMatrix {
    n_b: usize,
}

impl PenaltyMatrix {
    pub fn new(n_b: usize) -> Self {
        PenaltyMatrix { n_b }
    }

    pub fn n_b(&self) -> usize {
        self.n_b
    }

    pub fn matrix(&self) -> Vec<Vec<f64>> {
        (0..self.n_b)
            .map(|r| {
                let mut row = vec![0.0; self.n_b];
                row[r] -= 1.0;
                row[(r + 1) % self.n_b] += 1.0;
                row
            })
            .collect()
    }

    pub fn apply(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.n_b).map(|r| beta[(r + 1) % self.n_b] - beta[r]).collect()
    }

    /// `D^T D beta`.
    pub fn gram_apply(&self, beta: &[f64]) -> Vec<f64> {
        let n = self.n_b;
        (0..n)
            .map(|b| 2.0 * beta[b] - beta[(b + n - 1) % n] - beta[(b + 1) % n])
            .collect()
    }
}

/// `beta^T D^T D beta`, the sum of squared cyclic differences.
pub fn roughness(beta: &[f64], d: &PenaltyMatrix) -> Result<f64> {
    if beta.len() != d.n_b {
        return Err(Error::Dimension {
            expected: d.n_b,
            got: beta.len(),
        });
    }
    Ok(d.apply(beta).iter().map(|v| v * v).sum())
}

/// Threshold exceedances tagged with the index of their nearest centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineExceedances {
    m: usize,
    centroid: Vec<usize>,
    excess: Vec<f64>,
}

impl SplineExceedances {
    pub fn new(m: usize, centroid: Vec<usize>, excess: Vec<f64>) -> Result<Self> {
        if centroid.len() != excess.len() {
            return Err(Error::Dimension {
                expected: centroid.len(),
                got: excess.len(),
            });
        }
        if centroid.iter().any(|&j| j >= m) {
            return Err(Error::OutOfRange("centroid index beyond grid".into()));
        }
        if excess.iter().any(|y| !(*y >= 0.0) || !y.is_finite()) {
            return Err(Error::Domain("excesses must be finite and nonnegative".into()));
        }
        Ok(SplineExceedances { m, centroid, excess })
    }

    /// Observations above the threshold of their nearest centroid; centroids
    /// without a threshold are skipped.
    pub fn from_sample(sample: &DirectionalSample, grid: &CentroidGrid, thresholds: &[Option<f64>]) -> Self {
        let mut centroid = Vec::new();
        let mut excess = Vec::new();
        for o in sample.observations() {
            let j = grid.nearest(o.direction);
            if let Some(u) = thresholds[j] {
                if o.value > u {
                    centroid.push(j);
                    excess.push(o.value - u);
                }
            }
        }
        SplineExceedances {
            m: grid.len(),
            centroid,
            excess,
        }
    }

    pub fn centroid_count(&self) -> usize {
        self.m
    }

    pub fn centroids(&self) -> &[usize] {
        &self.centroid
    }

    pub fn excess(&self) -> &[f64] {
        &self.excess
    }

    pub fn len(&self) -> usize {
        self.excess.len()
    }

    pub fn is_empty(&self) -> bool {
        self.excess.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        SplineExceedances {
            m: self.m,
            centroid: idx.iter().map(|&i| self.centroid[i]).collect(),
            excess: idx.iter().map(|&i| self.excess[i]).collect(),
        }
    }
}

/// Penalized GPD spline fit. Coefficient vectors have length `n_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenalizedFit {
    pub beta_xi: Vec<f64>,
    pub beta_logsigma: Vec<f64>,
    pub lambda: f64,
    pub kappa: f64,
    /// `l(beta) - lambda P1 - kappa P2` at the reported coefficients.
    pub penalized_loglik: f64,
    /// Same objective at the constant starting point.
    pub start_loglik: f64,
    pub converged: bool,
    pub evaluations: usize,
}

impl PenalizedFit {
    pub fn xi_curve(&self, basis: &PeriodicBasis) -> Vec<f64> {
        basis.combine(&self.beta_xi)
    }

    pub fn log_sigma_curve(&self, basis: &PeriodicBasis) -> Vec<f64> {
        basis.combine(&self.beta_logsigma)
    }

    pub fn sigma_curve(&self, basis: &PeriodicBasis) -> Vec<f64> {
        self.log_sigma_curve(basis).into_iter().map(f64::exp).collect()
    }

    pub fn xi_at(&self, theta: Direction) -> f64 {
        spline_value(&self.beta_xi, theta)
    }

    pub fn log_sigma_at(&self, theta: Direction) -> f64 {
        spline_value(&self.beta_logsigma, theta)
    }

    /// `[beta_xi, beta_logsigma]`.
    pub fn coefficients(&self) -> Vec<f64> {
        let mut c = self.beta_xi.clone();
        c.extend_from_slice(&self.beta_logsigma);
        c
    }
}

/// Penalized log-likelihood and its gradient at `beta = [beta_xi,
/// beta_logsigma]`. `None` when some centroid has `xi <= -1` or an excess
/// falls outside the GPD support.
pub fn penalized_loglik(
    data: &SplineExceedances,
    basis: &PeriodicBasis,
    lambda: f64,
    kappa: f64,
    beta: &[f64],
) -> Option<(f64, Vec<f64>)> {
    let n_b = basis.n_b();
    let (b1, b2) = beta.split_at(n_b);
    let xi = basis.combine(b1);
    if xi.iter().any(|x| !(*x > -1.0)) {
        return None;
    }
    let ls = basis.combine(b2);
    let m = basis.len();
    let mut g_xi = vec![0.0; m];
    let mut g_ls = vec![0.0; m];
    let mut ll = 0.0;
    for (&j, &y) in data.centroid.iter().zip(&data.excess) {
        let (v, dx, ds) = gpd_logdensity_grad(xi[j], ls[j], y);
        if !v.is_finite() {
            return None;
        }
        ll += v;
        g_xi[j] += dx;
        g_ls[j] += ds;
    }
    let d = PenaltyMatrix::new(n_b);
    let p1: f64 = d.apply(b1).iter().map(|v| v * v).sum();
    let p2: f64 = d.apply(b2).iter().map(|v| v * v).sum();
    let mut grad = vec![0.0; 2 * n_b];
    basis.add_transpose(&g_xi, &mut grad[..n_b]);
    basis.add_transpose(&g_ls, &mut grad[n_b..]);
    for (g, r) in grad[..n_b].iter_mut().zip(d.gram_apply(b1)) {
        *g -= 2.0 * lambda * r;
    }
    for (g, r) in grad[n_b..].iter_mut().zip(d.gram_apply(b2)) {
        *g -= 2.0 * kappa * r;
    }
    Some((ll - lambda * p1 - kappa * p2, grad))
}

/// Constant coefficients from an unweighted GPD fit to all excesses.
pub fn constant_start(data: &SplineExceedances, n_b: usize) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::Empty("exceedances for the spline fit"));
    }
    // the likelihood only sees excesses, so any positive reference threshold works
    let values: Vec<f64> = data.excess.iter().map(|y| 1.0 + y).collect();
    let fit = fit_gpd_ml(&WeightedExceedances::uniform(&values, 1.0)?)?;
    let mut beta = vec![fit.xi; n_b];
    beta.extend(std::iter::repeat_n(fit.scale.ln(), n_b));
    Ok(beta)
}

fn check_penalties(lambda: f64, kappa: f64) -> Result<()> {
    if !(lambda >= 0.0) || !(kappa >= 0.0) || !lambda.is_finite() || !kappa.is_finite() {
        return Err(Error::Domain(format!(
            "penalties must be finite and nonnegative, got lambda={lambda}, kappa={kappa}"
        )));
    }
    Ok(())
}

pub fn fit_penalized_gpd(
    data: &SplineExceedances,
    basis: &PeriodicBasis,
    lambda: f64,
    kappa: f64,
) -> Result<PenalizedFit> {
    let start = constant_start(data, basis.n_b())?;
    fit_penalized_gpd_from(data, basis, lambda, kappa, &start)
}

/// Quasi-Newton maximization of the penalized likelihood from `start`.
pub fn fit_penalized_gpd_from(
    data: &SplineExceedances,
    basis: &PeriodicBasis,
    lambda: f64,
    kappa: f64,
    start: &[f64],
) -> Result<PenalizedFit> {
    check_penalties(lambda, kappa)?;
    if data.m != basis.len() {
        return Err(Error::Dimension {
            expected: basis.len(),
            got: data.m,
        });
    }
    if start.len() != 2 * basis.n_b() {
        return Err(Error::Dimension {
            expected: 2 * basis.n_b(),
            got: start.len(),
        });
    }
    if data.is_empty() {
        return Err(Error::Empty("exceedances for the spline fit"));
    }
    let (start_loglik, _) = penalized_loglik(data, basis, lambda, kappa, start)
        .ok_or_else(|| Error::Domain("starting coefficients are infeasible".into()))?;
    let scale = 1.0 / data.len() as f64;
    let objective = |beta: &[f64]| match penalized_loglik(data, basis, lambda, kappa, beta) {
        Some((v, g)) => (-v * scale, g.into_iter().map(|x| -x * scale).collect()),
        None => (f64::INFINITY, vec![0.0; beta.len()]),
    };
    let m = Bfgs::default().minimize(objective, start);
    let n_b = basis.n_b();
    Ok(PenalizedFit {
        beta_xi: m.x[..n_b].to_vec(),
        beta_logsigma: m.x[n_b..].to_vec(),
        lambda,
        kappa,
        penalized_loglik: -m.value / scale,
        start_loglik,
        converged: m.converged,
        evaluations: m.evaluations,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossValidationConfig {
    pub lambda_grid: Vec<f64>,
    pub kappa_grid: Vec<f64>,
    pub n_resamples: usize,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for CrossValidationConfig {
    fn default() -> Self {
        CrossValidationConfig {
            lambda_grid: DEFAULT_PENALTY_GRID.to_vec(),
            kappa_grid: DEFAULT_PENALTY_GRID.to_vec(),
            n_resamples: 25,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

/// One `(lambda, kappa)` cell of the cross-validation table.
#[derive(Debug, Clone, PartialEq)]
pub struct MspeCell {
    pub lambda: f64,
    pub kappa: f64,
    /// Mean over valid resamples; `None` if every resample failed.
    pub mean_mspe: Option<f64>,
    pub valid_resamples: usize,
    /// Test points dropped because the fitted shape was `>= 1` there.
    pub excluded_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossValidation {
    pub lambda: f64,
    pub kappa: f64,
    pub table: Vec<MspeCell>,
}

/// Squared error of held-out excesses against the fitted conditional mean
/// `sigma / (1 - xi)`; points where `xi >= 1` are skipped and counted.
fn prediction_error(fit: &PenalizedFit, basis: &PeriodicBasis, test: &SplineExceedances) -> (Option<f64>, usize) {
    let xi = fit.xi_curve(basis);
    let sigma = fit.sigma_curve(basis);
    let (mut sum, mut used, mut skipped) = (0.0, 0usize, 0usize);
    for (&j, &y) in test.centroid.iter().zip(&test.excess) {
        if xi[j] >= 1.0 {
            skipped += 1;
            continue;
        }
        let r = y - sigma[j] / (1.0 - xi[j]);
        sum += r * r;
        used += 1;
    }
    ((used > 0).then(|| sum / used as f64), skipped)
}

/// Bootstrap cross-validation over the `(lambda, kappa)` grid.
///
/// Resample `r` is drawn from stream `r` of the seed and shared by every
/// grid cell, so cells are compared on the same train/test splits.
pub fn cross_validate(
    data: &SplineExceedances,
    basis: &PeriodicBasis,
    cfg: &CrossValidationConfig,
) -> Result<CrossValidation> {
    if cfg.lambda_grid.is_empty() || cfg.kappa_grid.is_empty() {
        return Err(Error::Config("penalty grids must be nonempty".into()));
    }
    if cfg.n_resamples == 0 {
        return Err(Error::Config("at least one resample is required".into()));
    }
    for (&l, &k) in cfg.lambda_grid.iter().zip(&cfg.kappa_grid) {
        check_penalties(l, k)?;
    }
    if data.is_empty() {
        return Err(Error::Empty("exceedances for cross-validation"));
    }
    let cells: Vec<(f64, f64)> = cfg
        .lambda_grid
        .iter()
        .flat_map(|&l| cfg.kappa_grid.iter().map(move |&k| (l, k)))
        .collect();
    let n = data.len();
    let per_resample: Vec<Vec<(Option<f64>, usize)>> = cfg.execution.map(cfg.n_resamples, |r| {
        let mut rng = stream_rng(cfg.seed, r as u64);
        let drawn = resample_indices(&mut rng, n);
        let train = data.subset(&drawn);
        let test = data.subset(&out_of_bag(&drawn, n));
        let Ok(start) = constant_start(&train, basis.n_b()) else {
            return vec![(None, 0); cells.len()];
        };
        cells
            .iter()
            .map(|&(l, k)| match fit_penalized_gpd_from(&train, basis, l, k, &start) {
                Ok(fit) if !test.is_empty() => prediction_error(&fit, basis, &test),
                _ => (None, 0),
            })
            .collect()
    });
    let table: Vec<MspeCell> = cells
        .iter()
        .enumerate()
        .map(|(c, &(lambda, kappa))| {
            let valid: Vec<f64> = per_resample.iter().filter_map(|row| row[c].0).collect();
            MspeCell {
                lambda,
                kappa,
                mean_mspe: (!valid.is_empty()).then(|| valid.iter().sum::<f64>() / valid.len() as f64),
                valid_resamples: valid.len(),
                excluded_points: per_resample.iter().map(|row| row[c].1).sum(),
            }
        })
        .collect();
    let best = table
        .iter()
        .filter_map(|c| c.mean_mspe.map(|v| (c, v)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::Degenerate("every cross-validation cell failed".into()))?
        .0;
    Ok(CrossValidation {
        lambda: best.lambda,
        kappa: best.kappa,
        table,
    })
}

/// Per-observation exceedance indicators tagged with the nearest centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct ExceedanceIndicators {
    m: usize,
    centroid: Vec<usize>,
    exceeds: Vec<bool>,
}

impl ExceedanceIndicators {
    pub fn from_sample(sample: &DirectionalSample, grid: &CentroidGrid, thresholds: &[Option<f64>]) -> Self {
        let mut centroid = Vec::new();
        let mut exceeds = Vec::new();
        for o in sample.observations() {
            let j = grid.nearest(o.direction);
            if let Some(u) = thresholds[j] {
                centroid.push(j);
                exceeds.push(o.value > u);
            }
        }
        ExceedanceIndicators {
            m: grid.len(),
            centroid,
            exceeds,
        }
    }

    pub fn len(&self) -> usize {
        self.exceeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exceeds.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        ExceedanceIndicators {
            m: self.m,
            centroid: idx.iter().map(|&i| self.centroid[i]).collect(),
            exceeds: idx.iter().map(|&i| self.exceeds[i]).collect(),
        }
    }

    pub fn counts(&self) -> ExceedanceCounts {
        let mut trials = vec![0.0; self.m];
        let mut successes = vec![0.0; self.m];
        for (&j, &e) in self.centroid.iter().zip(&self.exceeds) {
            trials[j] += 1.0;
            if e {
                successes[j] += 1.0;
            }
        }
        ExceedanceCounts { trials, successes }
    }
}

/// Per-centroid exceedance counts. With unit trials the successes are the
/// exceedance proportions themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct ExceedanceCounts {
    pub trials: Vec<f64>,
    pub successes: Vec<f64>,
}

impl ExceedanceCounts {
    /// One unit-weight trial per centroid with success fraction `tau_j`.
    pub fn from_proportions(tau: &[f64]) -> Result<Self> {
        if tau.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Domain("exceedance proportions must lie in [0, 1]".into()));
        }
        Ok(ExceedanceCounts {
            trials: vec![1.0; tau.len()],
            successes: tau.to_vec(),
        })
    }

    fn validate(&self, m: usize) -> Result<()> {
        if self.trials.len() != m || self.successes.len() != m {
            return Err(Error::Dimension {
                expected: m,
                got: self.trials.len().min(self.successes.len()),
            });
        }
        for (n, e) in self.trials.iter().zip(&self.successes) {
            if !(*n >= 0.0) || !(*e >= 0.0) || e > n {
                return Err(Error::Domain("need 0 <= successes <= trials".into()));
            }
        }
        if self.trials.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Empty("exceedance trials"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub beta: Vec<f64>,
    pub mu: f64,
    /// Fitted exceedance probability at each centroid.
    pub fitted: Vec<f64>,
    pub penalized_loglik: f64,
    pub converged: bool,
    /// Set when the fit drifts to probabilities of 0 or 1 (separation).
    pub boundary: bool,
}

impl LogisticFit {
    pub fn probability_at(&self, theta: Direction) -> f64 {
        logistic(spline_value(&self.beta, theta))
    }
}

fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn logistic_objective(counts: &ExceedanceCounts, basis: &PeriodicBasis, mu: f64, beta: &[f64]) -> f64 {
    let eta = basis.combine(beta);
    let mut ll = 0.0;
    for ((n, e), h) in counts.trials.iter().zip(&counts.successes).zip(&eta) {
        if *n == 0.0 {
            continue;
        }
        // log nu = -log(1+e^-h), log(1-nu) = -log(1+e^h)
        let log_nu = -softplus(-h);
        let log_1m = -softplus(*h);
        ll += e * log_nu + (n - e) * log_1m;
    }
    let d = PenaltyMatrix::new(basis.n_b());
    ll - mu * d.apply(beta).iter().map(|v| v * v).sum::<f64>()
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Penalized logistic regression of exceedance counts on the basis, by
/// damped Newton iterations.
pub fn fit_logistic_exceedance(counts: &ExceedanceCounts, basis: &PeriodicBasis, mu: f64) -> Result<LogisticFit> {
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(Error::Domain(format!("mu must be finite and nonnegative, got {mu}")));
    }
    counts.validate(basis.len())?;
    let n_b = basis.n_b();
    let total_n: f64 = counts.trials.iter().sum();
    let total_e: f64 = counts.successes.iter().sum();
    let p0 = (total_e / total_n).clamp(1e-6, 1.0 - 1e-6);
    let mut beta = vec![(p0 / (1.0 - p0)).ln(); n_b];
    let mut obj = logistic_objective(counts, basis, mu, &beta);
    let d = PenaltyMatrix::new(n_b);
    let rows = d.matrix();
    let dtd = DMatrix::from_fn(n_b, n_b, |a, b| (0..n_b).map(|r| rows[r][a] * rows[r][b]).sum::<f64>());
    let mut converged = false;
    for _ in 0..200 {
        let eta = basis.combine(&beta);
        if eta.iter().any(|h| h.abs() > 30.0) {
            // separated data: the optimum is at infinity
            break;
        }
        let nu: Vec<f64> = eta.iter().map(|&h| logistic(h)).collect();
        let resid: Vec<f64> = (0..basis.len())
            .map(|j| counts.successes[j] - counts.trials[j] * nu[j])
            .collect();
        let mut grad = vec![0.0; n_b];
        basis.add_transpose(&resid, &mut grad);
        for (g, r) in grad.iter_mut().zip(d.gram_apply(&beta)) {
            *g -= 2.0 * mu * r;
        }
        let mut hess = &dtd * (2.0 * mu);
        for j in 0..basis.len() {
            let w = counts.trials[j] * nu[j] * (1.0 - nu[j]);
            if w == 0.0 {
                continue;
            }
            let row = basis.dense_row(j);
            for a in 0..n_b {
                if row[a] == 0.0 {
                    continue;
                }
                for b in 0..n_b {
                    hess[(a, b)] += w * row[a] * row[b];
                }
            }
        }
        let g = DVector::from_vec(grad.clone());
        let ridge = 1e-10 * (1.0 + hess.diagonal().max());
        let step = (0..6)
            .find_map(|i| {
                let mut h = hess.clone();
                for a in 0..n_b {
                    h[(a, a)] += ridge * 10f64.powi(2 * i);
                }
                h.cholesky().map(|c| c.solve(&g))
            })
            .ok_or_else(|| Error::Degenerate("logistic Hessian is not positive definite".into()))?;
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            let val = logistic_objective(counts, basis, mu, &cand);
            if val >= obj {
                let gain = val - obj;
                beta = cand;
                obj = val;
                moved = gain > 0.0;
                break;
            }
            t *= 0.5;
        }
        let step_size = step.iter().fold(0.0f64, |m, s| m.max(s.abs())) * t;
        if grad.iter().fold(0.0f64, |m, s| m.max(s.abs())) < 1e-9 * total_n.max(1.0) || step_size < 1e-12 || !moved {
            converged = step_size < 1e-6 || grad.iter().all(|g| g.abs() < 1e-6 * total_n.max(1.0));
            break;
        }
    }
    let eta = basis.combine(&beta);
    let fitted: Vec<f64> = eta.iter().map(|&h| logistic(h)).collect();
    let boundary = eta.iter().any(|h| h.abs() > 20.0) || !converged;
    Ok(LogisticFit {
        beta,
        mu,
        fitted,
        penalized_loglik: obj,
        converged,
        boundary,
    })
}

/// Pick `mu` by bootstrap cross-validation of the Brier score on held-out
/// indicators. Returns the chosen value and the mean score per grid entry.
pub fn select_mu(
    indicators: &ExceedanceIndicators,
    basis: &PeriodicBasis,
    grid: &[f64],
    n_resamples: usize,
    seed: u64,
    execution: Execution,
) -> Result<(f64, Vec<(f64, Option<f64>)>)> {
    if grid.is_empty() || n_resamples == 0 {
        return Err(Error::Config("mu grid and resample count must be nonempty".into()));
    }
    if indicators.is_empty() {
        return Err(Error::Empty("exceedance indicators"));
    }
    let n = indicators.len();
    let per: Vec<Vec<Option<f64>>> = execution.map(n_resamples, |r| {
        let mut rng = stream_rng(seed, r as u64);
        let drawn = resample_indices(&mut rng, n);
        let test = indicators.subset(&out_of_bag(&drawn, n));
        let train = indicators.subset(&drawn).counts();
        grid.iter()
            .map(|&mu| {
                let fit = fit_logistic_exceedance(&train, basis, mu).ok()?;
                if test.is_empty() {
                    return None;
                }
                let s: f64 = test
                    .centroid
                    .iter()
                    .zip(&test.exceeds)
                    .map(|(&j, &e)| (f64::from(u8::from(e)) - fit.fitted[j]).powi(2))
                    .sum();
                Some(s / test.len() as f64)
            })
            .collect()
    });
    let scores: Vec<(f64, Option<f64>)> = grid
        .iter()
        .enumerate()
        .map(|(c, &mu)| {
            let v: Vec<f64> = per.iter().filter_map(|row| row[c]).collect();
            (mu, (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64))
        })
        .collect();
    let best = scores
        .iter()
        .filter_map(|(mu, s)| s.map(|s| (*mu, s)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::Degenerate("every logistic fit failed".into()))?;
    Ok((best.0, scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::{numerical_gradient, NelderMead};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Cox-de Boor recursion on the periodically extended knot sequence.
    fn de_boor(n_b: usize, b: usize, theta: f64) -> f64 {
        let spacing = 360.0 / n_b as f64;
        fn rec(knots: &[f64], i: usize, p: usize, x: f64) -> f64 {
            if p == 0 {
                return if knots[i] <= x && x < knots[i + 1] { 1.0 } else { 0.0 };
            }
            let left = (x - knots[i]) / (knots[i + p] - knots[i]) * rec(knots, i, p - 1, x);
            let right = (knots[i + p + 1] - x) / (knots[i + p + 1] - knots[i + 1]) * rec(knots, i + 1, p - 1, x);
            left + right
        }
        let start = b as f64 * spacing;
        let knots: Vec<f64> = (0..5).map(|i| start + i as f64 * spacing).collect();
        // the basis function may wrap: test theta and theta + 360
        rec(&knots, 0, 3, theta) + rec(&knots, 0, 3, theta + 360.0)
    }

    fn grid_data(n: usize, seed: u64, xi: impl Fn(f64) -> f64, sigma: impl Fn(f64) -> f64) -> SplineExceedances {
        let grid = CentroidGrid::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut centroid = Vec::with_capacity(n);
        let mut excess = Vec::with_capacity(n);
        for _ in 0..n {
            let theta: f64 = rng.random_range(0.0..360.0);
            let j = grid.nearest(Direction::new(theta));
            let (x, s) = (xi(j as f64), sigma(j as f64));
            let uu: f64 = rng.random();
            let y = if x.abs() < 1e-12 { -s * uu.ln() } else { s * (uu.powf(-x) - 1.0) / x };
            centroid.push(j);
            excess.push(y);
        }
        SplineExceedances::new(360, centroid, excess).unwrap()
    }

    #[test]
    fn basis_matches_de_boor() {
        let basis = PeriodicBasis::new(12, &CentroidGrid::default()).unwrap();
        for j in (0..360).step_by(7) {
            let row = basis.dense_row(j);
            for (b, v) in row.iter().enumerate() {
                assert_relative_eq!(*v, de_boor(12, b, j as f64), epsilon = 1e-12);
            }
            assert!(row.iter().filter(|v| **v != 0.0).count() <= 4);
        }
    }

    #[test]
    fn basis_rejects_small_counts() {
        assert!(PeriodicBasis::new(3, &CentroidGrid::default()).is_err());
    }

    #[test]
    fn roughness_examples() {
        let d = PenaltyMatrix::new(12);
        assert_eq!(roughness(&[3.0; 12], &d).unwrap(), 0.0);
        let mut e = vec![0.0; 12];
        e[0] = 1.0;
        assert_eq!(roughness(&e, &d).unwrap(), 2.0);
        assert!(matches!(roughness(&[1.0; 5], &d), Err(Error::Dimension { .. })));
        for row in d.matrix() {
            assert_eq!(row.iter().filter(|v| **v == 1.0).count(), 1);
            assert_eq!(row.iter().filter(|v| **v == -1.0).count(), 1);
            assert_eq!(row.iter().sum::<f64>(), 0.0);
        }
    }

    proptest! {
        #[test]
        fn basis_rows_sum_to_one(n_b in 4usize..30, theta in -720.0f64..720.0) {
            let row = dense(n_b, periodic_row(n_b, Direction::new(theta)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            let shifted = dense(n_b, periodic_row(n_b, Direction::new(theta + 360.0)));
            for (a, b) in row.iter().zip(&shifted) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn roughness_is_quadratic_form(beta in proptest::collection::vec(-5.0f64..5.0, 4..20), c in -3.0f64..3.0) {
            let d = PenaltyMatrix::new(beta.len());
            let direct: f64 = (0..beta.len()).map(|b| (beta[(b + 1) % beta.len()] - beta[b]).powi(2)).sum();
            let dm = d.matrix();
            let db: Vec<f64> = dm.iter().map(|row| row.iter().zip(&beta).map(|(a, b)| a * b).sum()).collect();
            let quad: f64 = db.iter().map(|v| v * v).sum();
            let r = roughness(&beta, &d).unwrap();
            prop_assert!((r - direct).abs() < 1e-12 * (1.0 + direct));
            prop_assert!((r - quad).abs() < 1e-10 * (1.0 + direct));
            let shifted: Vec<f64> = beta.iter().map(|b| b + c).collect();
            prop_assert!((roughness(&shifted, &d).unwrap() - r).abs() < 1e-9 * (1.0 + r));
        }
    }

    #[test]
    fn wrap_continuity() {
        let beta: Vec<f64> = (0..12).map(|b| (b as f64 * 0.7).sin()).collect();
        let a = spline_value(&beta, Direction::new(0.0));
        let b = spline_value(&beta, Direction::new(360.0 - 1e-10));
        assert!((a - b).abs() < 1e-8);
        let c = spline_value(&beta, Direction::new(-0.5));
        let d = spline_value(&beta, Direction::new(359.5));
        assert!((c - d).abs() < 1e-12);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let data = grid_data(400, 3, |_| 0.1, |_| 2.0);
        let basis = PeriodicBasis::new(12, &CentroidGrid::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let beta: Vec<f64> = (0..24)
                .map(|i| if i < 12 { rng.random_range(0.0..0.3) } else { rng.random_range(0.4..1.0) })
                .collect();
            let (_, g) = penalized_loglik(&data, &basis, 0.7, 3.0, &beta).unwrap();
            let f = |b: &[f64]| penalized_loglik(&data, &basis, 0.7, 3.0, b).unwrap().0;
            let fd = numerical_gradient(f, &beta, 1e-6);
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-5 * a.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn stationary_fit_recovers_truth() {
        let data = grid_data(3000, 5, |_| 0.1, |_| 2.0);
        let basis = PeriodicBasis::new(12, &CentroidGrid::default()).unwrap();
        let fit = fit_penalized_gpd(&data, &basis, 100.0, 100.0).unwrap();
        assert!(fit.penalized_loglik >= fit.start_loglik);
        for (x, s) in fit.xi_curve(&basis).iter().zip(fit.sigma_curve(&basis)) {
            assert!((x - 0.1).abs() < 0.15, "xi {x}");
            assert!((s / 2.0 - 1.0).abs() < 0.2, "sigma {s}");
        }
    }

    #[test]
    fn huge_penalty_shrinks_to_constants() {
        let data = grid_data(1500, 8, |t| 0.2 * (t.to_radians()).sin(), |t| 1.0 + 0.5 * (t.to_radians()).cos());
        let basis = PeriodicBasis::new(12, &CentroidGrid::default()).unwrap();
        let fit = fit_penalized_gpd(&data, &basis, 1e8, 1e8).unwrap();
        let spread = |v: Vec<f64>| v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread(fit.xi_curve(&basis)) < 1e-3);
        assert!(spread(fit.log_sigma_curve(&basis)) < 1e-3);
    }

    #[test]
    fn unpenalized_fit_matches_simplex_oracle() {
        let data = grid_data(800, 12, |t| 0.1 + 0.1 * (t.to_radians()).cos(), |_| 1.5);
        let basis = PeriodicBasis::new(4, &CentroidGrid::default()).unwrap();
        let fit = fit_penalized_gpd(&data, &basis, 0.0, 0.0).unwrap();
        let f = |b: &[f64]| match penalized_loglik(&data, &basis, 0.0, 0.0, b) {
            Some((v, _)) => -v,
            None => f64::INFINITY,
        };
        let start = constant_start(&data, 4).unwrap();
        let nm = NelderMead {
            diameter_tol: 1e-10,
            max_evaluations: 200_000,
        };
        let mut best = nm.minimize(f, &start, &[0.05; 8]);
        for _ in 0..5 {
            best = nm.minimize(f, &best.x.clone(), &[0.01; 8]);
        }
        assert!((fit.penalized_loglik + best.value).abs() < 1e-4, "{} vs {}", fit.penalized_loglik, -best.value);
    }

    #[test]
    fn penalized_optimum_decreases_along_lambda_ladder() {
        let data = grid_data(1000, 21, |t| 0.15 * (2.0 * t.to_radians()).sin(), |_| 1.0);
        let basis = PeriodicBasis::new(12, &CentroidGrid::default()).unwrap();
        let mut prev = f64::INFINITY;
        for lambda in [0.0, 0.1, 1.0, 10.0, 100.0, 1000.0] {
            let fit = fit_penalized_gpd(&data, &basis, lambda, 1.0).unwrap();
            assert!(fit.penalized_loglik <= prev + 1e-6, "lambda {lambda}");
            prev = fit.penalized_loglik;
        }
    }

    #[test]
    fn gradient_small_at_reported_optimum() {
        let data = grid_data(1200, 4, |_| -0.1, |t| 1.0 + 0.3 * (t.to_radians()).sin());
        let basis = PeriodicBasis::new(12, &CentroidGrid::default()).unwrap();
        let fit = fit_penalized_gpd(&data, &basis, 1.0, 1.0).unwrap();
        assert!(fit.converged);
        let n = data.len() as f64;
        let f = |b: &[f64]| penalized_loglik(&data, &basis, 1.0, 1.0, b).map_or(f64::NEG_INFINITY, |v| v.0) / n;
        let g = numerical_gradient(f, &fit.coefficients(), 1e-6);
        assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-3);
    }

    #[test]
    fn cross_validation_single_and_duplicate_cells() {
        let data = grid_data(500, 9, |_| 0.1, |_| 1.0);
        let basis = PeriodicBasis::new(8, &CentroidGrid::default()).unwrap();
        let cfg = CrossValidationConfig {
            lambda_grid: vec![5.0],
            kappa_grid: vec![5.0],
            n_resamples: 3,
            seed: 1,
            execution: Execution::Sequential,
        };
        let cv = cross_validate(&data, &basis, &cfg).unwrap();
        assert_eq!((cv.lambda, cv.kappa), (5.0, 5.0));
        assert!(cv.table[0].mean_mspe.is_some());
        let dup = CrossValidationConfig {
            lambda_grid: vec![5.0, 5.0],
            ..cfg.clone()
        };
        let cv2 = cross_validate(&data, &basis, &dup).unwrap();
        assert_eq!(cv2.table[0].mean_mspe, cv2.table[1].mean_mspe);
        assert_eq!(cv2.table[0].mean_mspe, cv.table[0].mean_mspe);
        let par = cross_validate(&data, &basis, &CrossValidationConfig { execution: Execution::Parallel, ..dup }).unwrap();
        assert_eq!(par, cv2);
    }

    #[test]
    fn logistic_symmetric_and_shrinkage_cases() {
        let grid = CentroidGrid::regular(36);
        let basis = PeriodicBasis::new(12, &grid).unwrap();
        for mu in [0.0, 1.0, 1e4] {
            let fit = fit_logistic_exceedance(&ExceedanceCounts::from_proportions(&[0.5; 36]).unwrap(), &basis, mu).unwrap();
            assert!(fit.fitted.iter().all(|v| (v - 0.5).abs() < 1e-9));
        }
        let tau: Vec<f64> = (0..36).map(|j| 0.3 + 0.2 * (j as f64 / 5.0).sin()).collect();
        let mean = tau.iter().sum::<f64>() / 36.0;
        let fit = fit_logistic_exceedance(&ExceedanceCounts::from_proportions(&tau).unwrap(), &basis, 1e8).unwrap();
        assert!(fit.fitted.iter().all(|v| (v - mean).abs() < 1e-3));
        assert!(!fit.boundary);
    }

    #[test]
    fn logistic_matches_simplex_oracle() {
        let grid = CentroidGrid::new(&[10.0, 200.0]).unwrap();
        let basis = PeriodicBasis::new(4, &grid).unwrap();
        let counts = ExceedanceCounts {
            trials: vec![20.0, 30.0],
            successes: vec![4.0, 21.0],
        };
        let fit = fit_logistic_exceedance(&counts, &basis, 0.5).unwrap();
        let f = |b: &[f64]| -logistic_objective(&counts, &basis, 0.5, b);
        let nm = NelderMead {
            diameter_tol: 1e-11,
            max_evaluations: 100_000,
        };
        let mut m = nm.minimize(f, &[0.0; 4], &[0.5; 4]);
        for _ in 0..4 {
            m = nm.minimize(f, &m.x.clone(), &[0.05; 4]);
        }
        assert!((fit.penalized_loglik + m.value).abs() < 1e-6);
        assert!(fit.converged);
    }

    #[test]
    fn logistic_separation_is_flagged() {
        let grid = CentroidGrid::regular(24);
        let basis = PeriodicBasis::new(6, &grid).unwrap();
        let tau: Vec<f64> = (0..24).map(|j| if j < 12 { 0.0 } else { 1.0 }).collect();
        let fit = fit_logistic_exceedance(&ExceedanceCounts::from_proportions(&tau).unwrap(), &basis, 0.0).unwrap();
        assert!(fit.boundary);
        assert!(fit.fitted.iter().all(|v| *v > 0.0 && *v < 1.0));
    }
}
