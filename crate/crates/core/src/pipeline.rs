//! End-to-end estimation on one sample: threshold curve, tail fits by each
//! method, extreme quantiles and endpoints at every centroid.
//!
//! [`Pipeline::estimate`] returns a flat vector laid out slot-major (slot
//! `s`, centroid `j` at `s * m + j`), which is what the bootstrap consumes.

use std::fmt;
use std::str::FromStr;

use crate::circular::{von_mises_kernel, Neighborhood};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::levels::{general_endpoint_sorted, parametric_endpoint, parametric_quantile, semiparametric_quantile, QuantileQuery};
use crate::sample::{CentroidGrid, DirectionalSample, NeighborhoodIndex};
use crate::spline::{
    cross_validate, fit_logistic_exceedance, fit_penalized_gpd, select_mu, CrossValidation, CrossValidationConfig,
    ExceedanceIndicators, PeriodicBasis, SplineExceedances, DEFAULT_BASIS_COUNT,
};
use crate::tail::{fit_gpd_ml_from, fit_gpd_ml_with_tally, moment_scale, moment_xi, WeightedExceedances};
use crate::threshold::{estimate_threshold_curve, SelectionConfig, ThresholdCurve};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Moment,
    LocalMl,
    SplineMl,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Moment, Method::LocalMl, Method::SplineMl];

    pub fn name(self) -> &'static str {
        match self {
            Method::Moment => "moment",
            Method::LocalMl => "local_ml",
            Method::SplineMl => "spline_ml",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "moment" => Ok(Method::Moment),
            "local_ml" | "local-ml" => Ok(Method::LocalMl),
            "spline_ml" | "spline-ml" => Ok(Method::SplineMl),
            other => Err(Error::Config(format!(
                "unknown method `{other}` (expected moment, local_ml or spline_ml)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    Xi,
    /// GPD scale for the likelihood methods, the scale function for moment.
    Scale,
    /// Quantile for the query with this index.
    Level(usize),
    StandardEndpoint,
    GeneralEndpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    /// `None` for method-free quantities (the general endpoint).
    pub method: Option<Method>,
    pub quantity: Quantity,
}

impl Slot {
    /// File-name friendly label, e.g. `moment_T100` or `general_endpoint`.
    pub fn label(&self, queries: &[QuantileQuery]) -> String {
        let what = match self.quantity {
            Quantity::Xi => "xi".to_string(),
            Quantity::Scale => "scale".to_string(),
            Quantity::Level(i) => queries[i].tag(),
            Quantity::StandardEndpoint => "endpoint".to_string(),
            Quantity::GeneralEndpoint => return "general_endpoint".to_string(),
        };
        match self.method {
            Some(m) => format!("{}_{what}", m.name()),
            None => what,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplineSettings {
    pub n_b: usize,
    pub lambda: f64,
    pub kappa: f64,
    pub mu: f64,
}

impl Default for SplineSettings {
    fn default() -> Self {
        SplineSettings {
            n_b: DEFAULT_BASIS_COUNT,
            lambda: 1.0,
            kappa: 1.0,
            mu: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSpec {
    pub selection: SelectionConfig,
    pub grid: CentroidGrid,
    pub methods: Vec<Method>,
    pub queries: Vec<QuantileQuery>,
    /// Emit standard (per method) and general endpoints.
    pub endpoints: bool,
    pub spline: SplineSettings,
    /// Re-select the threshold curve on every sample instead of reusing the
    /// curve from the original sample.
    pub rethreshold: bool,
}

impl Default for PipelineSpec {
    fn default() -> Self {
        PipelineSpec {
            selection: SelectionConfig::default(),
            grid: CentroidGrid::default(),
            methods: Method::ALL.to_vec(),
            queries: Vec::new(),
            endpoints: true,
            spline: SplineSettings::default(),
            rethreshold: false,
        }
    }
}

impl PipelineSpec {
    pub fn validate(&self) -> Result<()> {
        self.selection.validate()?;
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        for q in &self.queries {
            q.probability()?;
        }
        Ok(())
    }

    /// Output slots in order: per method xi, scale, one level per query and
    /// the standard endpoint, then the general endpoint.
    pub fn slots(&self) -> Vec<Slot> {
        let mut methods = self.methods.clone();
        methods.sort();
        methods.dedup();
        let mut slots = Vec::new();
        for m in methods {
            let mut push = |quantity| {
                slots.push(Slot {
                    method: Some(m),
                    quantity,
                })
            };
            push(Quantity::Xi);
            push(Quantity::Scale);
            for i in 0..self.queries.len() {
                push(Quantity::Level(i));
            }
            if self.endpoints {
                push(Quantity::StandardEndpoint);
            }
        }
        if self.endpoints {
            slots.push(Slot {
                method: None,
                quantity: Quantity::GeneralEndpoint,
            });
        }
        slots
    }
}

/// Tail parameters at one centroid: shape, scale, threshold, exceedance
/// fraction, and the counts behind them.
#[derive(Debug, Clone, Copy)]
struct CentroidFit {
    xi: f64,
    scale: f64,
    u: f64,
    frac: f64,
    k: usize,
    n: usize,
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    spec: PipelineSpec,
    probabilities: Vec<f64>,
    curve: ThresholdCurve,
    slots: Vec<Slot>,
    basis: Option<PeriodicBasis>,
    warm: Vec<Option<(f64, f64)>>,
}

impl Pipeline {
    /// Select the threshold curve on `sample` and prepare the estimators.
    pub fn new(spec: PipelineSpec, sample: &DirectionalSample) -> Result<Self> {
        spec.validate()?;
        let curve = estimate_threshold_curve(sample, &spec.grid, &spec.selection)?;
        Self::with_curve(spec, curve, sample)
    }

    pub fn with_curve(spec: PipelineSpec, curve: ThresholdCurve, sample: &DirectionalSample) -> Result<Self> {
        spec.validate()?;
        if curve.all_failed() {
            return Err(Error::Degenerate("threshold selection failed at every centroid".into()));
        }
        let probabilities = spec.queries.iter().map(|q| q.probability()).collect::<Result<Vec<_>>>()?;
        let basis = if spec.methods.contains(&Method::SplineMl) {
            Some(PeriodicBasis::new(spec.spline.n_b, &spec.grid)?)
        } else {
            None
        };
        let mut p = Pipeline {
            slots: spec.slots(),
            probabilities,
            curve,
            basis,
            warm: Vec::new(),
            spec,
        };
        if p.spec.methods.contains(&Method::LocalMl) {
            let thresholds = p.fixed_thresholds();
            let index = NeighborhoodIndex::new(sample);
            let warm = p.spec.selection.execution.map(p.spec.grid.len(), |j| {
                p.local_ml_at(&index, j, thresholds[j], None).map(|f| (f.xi, f.scale))
            });
            p.warm = warm;
        }
        Ok(p)
    }

    pub fn spec(&self) -> &PipelineSpec {
        &self.spec
    }

    pub fn curve(&self) -> &ThresholdCurve {
        &self.curve
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn centroid_count(&self) -> usize {
        self.spec.grid.len()
    }

    /// Position of `slot` in the output, if present.
    pub fn slot_index(&self, slot: Slot) -> Option<usize> {
        self.slots.iter().position(|s| *s == slot)
    }

    fn fixed_thresholds(&self) -> Vec<Option<(f64, usize)>> {
        self.curve
            .entries
            .iter()
            .map(|e| e.as_ref().ok().map(|c| (c.threshold_u, c.k_star)))
            .collect()
    }

    fn thresholds_for(&self, sample: &DirectionalSample) -> Result<Vec<Option<(f64, usize)>>> {
        if !self.spec.rethreshold {
            return Ok(self.fixed_thresholds());
        }
        let cfg = SelectionConfig {
            execution: Execution::Sequential,
            keep_diagnostics: false,
            ..self.spec.selection.clone()
        };
        let curve = estimate_threshold_curve(sample, &self.spec.grid, &cfg)?;
        Ok(curve
            .entries
            .iter()
            .map(|e| e.as_ref().ok().map(|c| (c.threshold_u, c.k_star)))
            .collect())
    }

    fn neighborhood(&self, j: usize) -> Result<Neighborhood> {
        Neighborhood::new(self.spec.grid.get(j), self.spec.selection.half_width)
    }

    fn moment_at(&self, index: &NeighborhoodIndex<'_>, j: usize, th: Option<(f64, usize)>) -> Option<CentroidFit> {
        let (u, _) = th?;
        let ns = index.extract(&self.neighborhood(j).ok()?);
        let n = ns.tally();
        let k = ns.count_above(u);
        if k < 2 || k >= n {
            return None;
        }
        let we = WeightedExceedances::uniform(&ns.values[n - k..], u).ok()?;
        Some(CentroidFit {
            xi: moment_xi(&we).ok()?,
            scale: moment_scale(&we).ok()?,
            u,
            frac: k as f64 / n as f64,
            k,
            n,
        })
    }

    fn local_ml_at(
        &self,
        index: &NeighborhoodIndex<'_>,
        j: usize,
        th: Option<(f64, usize)>,
        warm: Option<(f64, f64)>,
    ) -> Option<CentroidFit> {
        let (u, _) = th?;
        let centroid = self.spec.grid.get(j);
        let ns = index.extract(&self.neighborhood(j).ok()?);
        let n = ns.tally();
        let k = ns.count_above(u);
        if k < 2 || k >= n {
            return None;
        }
        let kernel: Vec<f64> = ns.directions[n - k..]
            .iter()
            .map(|d| von_mises_kernel(centroid, *d, self.spec.selection.eta))
            .collect();
        let we = WeightedExceedances::with_kernel(&ns.values[n - k..], u, &kernel).ok()?;
        let fit = match warm {
            Some((xi, sigma)) => fit_gpd_ml_from(&we, xi, sigma, n),
            None => fit_gpd_ml_with_tally(&we, n),
        }
        .ok()?;
        Some(CentroidFit {
            xi: fit.xi,
            scale: fit.scale,
            u,
            frac: k as f64 / n as f64,
            k,
            n,
        })
    }

    fn spline_fits(&self, sample: &DirectionalSample, th: &[Option<(f64, usize)>]) -> Vec<Option<CentroidFit>> {
        let m = self.spec.grid.len();
        let Some(basis) = &self.basis else {
            return vec![None; m];
        };
        let thresholds: Vec<Option<f64>> = th.iter().map(|t| t.map(|x| x.0)).collect();
        let data = SplineExceedances::from_sample(sample, &self.spec.grid, &thresholds);
        let s = &self.spec.spline;
        let Ok(tail) = fit_penalized_gpd(&data, basis, s.lambda, s.kappa) else {
            return vec![None; m];
        };
        let counts = ExceedanceIndicators::from_sample(sample, &self.spec.grid, &thresholds).counts();
        let Ok(logit) = fit_logistic_exceedance(&counts, basis, s.mu) else {
            return vec![None; m];
        };
        let xi = tail.xi_curve(basis);
        let sigma = tail.sigma_curve(basis);
        (0..m)
            .map(|j| {
                let (u, _) = th[j]?;
                Some(CentroidFit {
                    xi: xi[j],
                    scale: sigma[j],
                    u,
                    frac: logit.fitted[j],
                    k: 0,
                    n: 0,
                })
            })
            .collect()
    }

    fn level(&self, method: Method, f: &CentroidFit, p: f64) -> Option<f64> {
        match method {
            Method::Moment => semiparametric_quantile(f.u, f.scale, f.xi, f.k, f.n, p).ok(),
            Method::LocalMl | Method::SplineMl => parametric_quantile(f.u, f.scale, f.xi, f.frac, p).ok(),
        }
    }

    /// All slots at all centroids for one sample.
    pub fn estimate(&self, sample: &DirectionalSample) -> Result<Vec<Option<f64>>> {
        let th = self.thresholds_for(sample)?;
        let m = self.spec.grid.len();
        let index = NeighborhoodIndex::new(sample);
        let has = |x| self.spec.methods.contains(&x);
        let exec = self.spec.selection.execution;
        let per_centroid: Vec<(Option<CentroidFit>, Option<CentroidFit>, Option<f64>)> = exec.map(m, |j| {
            let mo = if has(Method::Moment) { self.moment_at(&index, j, th[j]) } else { None };
            let ml = if has(Method::LocalMl) {
                self.local_ml_at(&index, j, th[j], self.warm.get(j).copied().flatten())
            } else {
                None
            };
            let ge = if self.spec.endpoints {
                th[j].and_then(|(_, k_star)| {
                    let ns = index.extract(&self.neighborhood(j).ok()?);
                    let k = k_star.min(ns.tally() / 2);
                    general_endpoint_sorted(&ns.values, k).ok()
                })
            } else {
                None
            };
            (mo, ml, ge)
        });
        let spline = if has(Method::SplineMl) {
            self.spline_fits(sample, &th)
        } else {
            vec![None; m]
        };

        let mut out = Vec::with_capacity(self.slots.len() * m);
        for slot in &self.slots {
            for j in 0..m {
                let (mo, ml, ge) = &per_centroid[j];
                let fit = match slot.method {
                    Some(Method::Moment) => mo.as_ref(),
                    Some(Method::LocalMl) => ml.as_ref(),
                    Some(Method::SplineMl) => spline[j].as_ref(),
                    None => None,
                };
                let v = match (slot.quantity, slot.method) {
                    (Quantity::GeneralEndpoint, _) => *ge,
                    (_, None) => None,
                    (Quantity::Xi, _) => fit.map(|f| f.xi),
                    (Quantity::Scale, _) => fit.map(|f| f.scale),
                    (Quantity::Level(i), Some(method)) => fit.and_then(|f| self.level(method, f, self.probabilities[i])),
                    (Quantity::StandardEndpoint, _) => fit.and_then(|f| parametric_endpoint(f.u, f.scale, f.xi).ok()),
                };
                out.push(v.filter(|x| x.is_finite()));
            }
        }
        Ok(out)
    }
}

/// Penalties chosen by cross-validation on the original sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingChoice {
    pub lambda: f64,
    pub kappa: f64,
    pub mu: f64,
    pub cross_validation: CrossValidation,
    pub mu_scores: Vec<(f64, Option<f64>)>,
}

/// Cross-validate the spline penalties `(lambda, kappa)` and the logistic
/// penalty `mu` (over `mu_grid`) on the exceedances of `curve`.
pub fn select_smoothing(
    sample: &DirectionalSample,
    grid: &CentroidGrid,
    curve: &ThresholdCurve,
    n_b: usize,
    cv: &CrossValidationConfig,
    mu_grid: &[f64],
) -> Result<SmoothingChoice> {
    let basis = PeriodicBasis::new(n_b, grid)?;
    let thresholds = curve.thresholds();
    let data = SplineExceedances::from_sample(sample, grid, &thresholds);
    let cross_validation = cross_validate(&data, &basis, cv)?;
    let indicators = ExceedanceIndicators::from_sample(sample, grid, &thresholds);
    let (mu, mu_scores) = select_mu(&indicators, &basis, mu_grid, cv.n_resamples, cv.seed, cv.execution)?;
    Ok(SmoothingChoice {
        lambda: cross_validation.lambda,
        kappa: cross_validation.kappa,
        mu,
        cross_validation,
        mu_scores,
    })
}
