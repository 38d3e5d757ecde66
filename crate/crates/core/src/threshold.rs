//! Automatic direction-dependent threshold selection.
//!
//! For every centroid the neighborhood values are scanned from the top: the
//! extreme value index is estimated from the `k` largest values for every
//! `k`, the weighted median-deviation score `S_phi(k)` is computed along the
//! path, and the threshold is the `(k*+1)`-th largest value where `k*`
//! minimizes the score.

use crate::circular::{von_mises_kernel, Direction, Neighborhood};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::sample::{CentroidGrid, DirectionalSample, NeighborhoodIndex, NeighborhoodSample};
use crate::tail::{fit_gpd_ml_from, fit_gpd_ml_with_tally, moment_xi_from_stats, EstimatorKind, WeightedExceedances};

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionConfig {
    /// Neighborhood half-width in degrees.
    pub half_width: f64,
    /// Von Mises concentration.
    pub eta: f64,
    pub phi: f64,
    /// Smallest `k` admitted to the argmin scan.
    pub k_min: usize,
    /// Optional cap on the scanned `k`; the default scans up to `N - 1`.
    pub k_max: Option<usize>,
    pub estimator: EstimatorKind,
    pub keep_diagnostics: bool,
    pub execution: Execution,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            half_width: 30.0,
            eta: 10.0,
            phi: 0.35,
            k_min: 10,
            k_max: None,
            estimator: EstimatorKind::Moment,
            keep_diagnostics: false,
            execution: Execution::default(),
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.half_width > 0.0) {
            return Err(Error::Config(format!("h must be positive, got {}", self.half_width)));
        }
        if !(self.eta > 0.0) {
            return Err(Error::Config(format!("eta must be positive, got {}", self.eta)));
        }
        if !(0.0..0.5).contains(&self.phi) {
            return Err(Error::Config(format!("phi must lie in [0, 0.5), got {}", self.phi)));
        }
        if self.k_min < 2 {
            return Err(Error::Config(format!("k_min must be at least 2, got {}", self.k_min)));
        }
        Ok(())
    }
}

/// `xi_hat_k` for `k = 1..=k_max`; entry `k - 1` holds `xi_hat_k`, `None`
/// where the estimator is undefined.
pub fn xi_path(
    ns: &NeighborhoodSample,
    kernel: &[f64],
    kind: EstimatorKind,
    k_max: usize,
) -> Result<Vec<Option<f64>>> {
    let n = ns.tally();
    if kernel.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: kernel.len(),
        });
    }
    if k_max + 1 > n {
        return Err(Error::OutOfRange(format!(
            "k_max {k_max} needs at least {} observations, have {n}",
            k_max + 1
        )));
    }
    Ok(match kind {
        EstimatorKind::Moment => moment_path(&ns.values, kernel, k_max),
        EstimatorKind::LocalMl => ml_path(&ns.values, kernel, k_max),
    })
}

fn moment_path(values: &[f64], kernel: &[f64], k_max: usize) -> Vec<Option<f64>> {
    let n = values.len();
    let mut out = Vec::with_capacity(k_max);
    if n == 0 {
        return out;
    }
    // logs relative to the maximum keep the running sums small
    let top = values[n - 1].ln();
    let (mut w, mut a1, mut a2) = (0.0, 0.0, 0.0);
    for k in 1..=k_max {
        let i = n - k;
        let lx = values[i].ln() - top;
        w += kernel[i];
        a1 += kernel[i] * lx;
        a2 += kernel[i] * lx * lx;
        let lu = values[i - 1].ln() - top;
        let m1 = (a1 - lu * w) / w;
        let m2 = ((a2 - 2.0 * lu * a1 + lu * lu * w) / w).max(0.0);
        out.push(moment_xi_from_stats(m1, m2).ok());
    }
    out
}

fn ml_path(values: &[f64], kernel: &[f64], k_max: usize) -> Vec<Option<f64>> {
    let n = values.len();
    let mut out = Vec::with_capacity(k_max);
    let mut prev: Option<(f64, f64)> = None;
    for k in 1..=k_max {
        let u = values[n - k - 1];
        let top = &values[n - k..];
        let fit = WeightedExceedances::with_kernel(top, u, &kernel[n - k..]).and_then(|we| match prev {
            Some((xi, s)) => fit_gpd_ml_from(&we, xi, s, n),
            None => fit_gpd_ml_with_tally(&we, n),
        });
        match fit {
            Ok(f) => {
                prev = Some((f.xi, f.scale));
                out.push(Some(f.xi));
            }
            Err(_) => out.push(None),
        }
    }
    out
}

/// `S_phi(k) = (1/k) sum_{i<=k} i^phi |xi_i - median(xi_1..xi_k)|` over the
/// defined entries of the path; `None` if none of `xi_1..xi_k` is defined.
pub fn s_phi_score(xi: &[Option<f64>], k: usize, phi: f64) -> Option<f64> {
    let defined: Vec<(usize, f64)> = xi[..k]
        .iter()
        .enumerate()
        .filter_map(|(i, x)| x.map(|v| (i + 1, v)))
        .collect();
    if defined.is_empty() {
        return None;
    }
    let mut sorted: Vec<f64> = defined.iter().map(|p| p.1).collect();
    sorted.sort_by(f64::total_cmp);
    let c = sorted.len();
    let med = if c % 2 == 1 {
        sorted[c / 2]
    } else {
        0.5 * (sorted[c / 2 - 1] + sorted[c / 2])
    };
    let s: f64 = defined
        .iter()
        .map(|&(i, v)| (i as f64).powf(phi) * (v - med).abs())
        .sum();
    Some(s / k as f64)
}

struct Fenwick {
    tree: Vec<f64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick { tree: vec![0.0; n + 1] }
    }

    fn add(&mut self, pos: usize, v: f64) {
        let mut i = pos + 1;
        while i < self.tree.len() {
            self.tree[i] += v;
            i += i & i.wrapping_neg();
        }
    }

    /// Sum over positions `0..=pos`.
    fn prefix(&self, pos: usize) -> f64 {
        let mut i = pos + 1;
        let mut s = 0.0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }

    /// Smallest position whose prefix count reaches `target` (counts only).
    fn find(&self, target: f64) -> usize {
        let n = self.tree.len() - 1;
        let mut pos = 0;
        let mut rem = target;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] < rem {
                pos = next;
                rem -= self.tree[next];
            }
            step >>= 1;
        }
        pos
    }
}

/// `S_phi(k)` for every `k = 1..=len`, in `O(len log len)`.
pub fn s_phi_path(xi: &[Option<f64>], phi: f64) -> Vec<Option<f64>> {
    let mut order: Vec<usize> = (0..xi.len()).filter(|&i| xi[i].is_some()).collect();
    order.sort_by(|&a, &b| xi[a].unwrap().total_cmp(&xi[b].unwrap()).then(a.cmp(&b)));
    let mut rank = vec![usize::MAX; xi.len()];
    let sorted_vals: Vec<f64> = order.iter().map(|&i| xi[i].unwrap()).collect();
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let m = order.len();
    let mut cnt = Fenwick::new(m);
    let mut sw = Fenwick::new(m);
    let mut swx = Fenwick::new(m);
    let (mut tot_w, mut tot_wx, mut c) = (0.0, 0.0, 0usize);

    let mut out = Vec::with_capacity(xi.len());
    for (idx, x) in xi.iter().enumerate() {
        let k = idx + 1;
        if let Some(v) = *x {
            let w = (k as f64).powf(phi);
            cnt.add(rank[idx], 1.0);
            sw.add(rank[idx], w);
            swx.add(rank[idx], w * v);
            tot_w += w;
            tot_wx += w * v;
            c += 1;
        }
        if c == 0 {
            out.push(None);
            continue;
        }
        // position of the lower-middle element among inserted ranks
        let lower = cnt.find(c.div_ceil(2) as f64);
        let med = if c % 2 == 1 {
            sorted_vals[lower]
        } else {
            let upper = cnt.find((c / 2 + 1) as f64);
            0.5 * (sorted_vals[lower] + sorted_vals[upper])
        };
        let pw = sw.prefix(lower);
        let pwx = swx.prefix(lower);
        let below = med * pw - pwx;
        let above = (tot_wx - pwx) - med * (tot_w - pw);
        let total = below + above;
        // cancellation residue when all deviations vanish
        let scale = tot_wx.abs() + med.abs() * tot_w;
        let total = if total <= 1e-13 * scale { 0.0 } else { total };
        out.push(Some(total / k as f64));
    }
    out
}

/// Smallest `k >= k_min` attaining the minimum defined score. Returns
/// `(k, score)`.
pub fn argmin_score(scores: &[Option<f64>], k_min: usize) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (idx, s) in scores.iter().enumerate().skip(k_min.saturating_sub(1)) {
        if let Some(v) = *s {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((idx + 1, v));
            }
        }
    }
    best.ok_or(Error::SelectionFailure { k_min })
}

/// Score the path and select `k*`.
pub fn select_k_star(xi: &[Option<f64>], phi: f64, k_min: usize) -> Result<usize> {
    argmin_score(&s_phi_path(xi, phi), k_min).map(|(k, _)| k)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CentroidThreshold {
    pub centroid: Direction,
    pub threshold_u: f64,
    pub k_star: usize,
    pub tally_n: usize,
    pub s_phi_at_min: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CentroidDiagnostics {
    pub xi_path: Vec<Option<f64>>,
    pub scores: Vec<Option<f64>>,
}

/// Threshold curve over a centroid grid. Each entry is either the selected
/// threshold or the per-centroid failure.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdCurve {
    pub grid: CentroidGrid,
    pub entries: Vec<std::result::Result<CentroidThreshold, Error>>,
    pub diagnostics: Option<Vec<CentroidDiagnostics>>,
}

impl ThresholdCurve {
    pub fn threshold(&self, j: usize) -> Option<f64> {
        self.entries[j].as_ref().ok().map(|e| e.threshold_u)
    }

    pub fn thresholds(&self) -> Vec<Option<f64>> {
        (0..self.entries.len()).map(|j| self.threshold(j)).collect()
    }

    pub fn failures(&self) -> Vec<(usize, &Error)> {
        self.entries
            .iter()
            .enumerate()
            .filter_map(|(j, e)| e.as_ref().err().map(|err| (j, err)))
            .collect()
    }

    pub fn all_failed(&self) -> bool {
        self.entries.iter().all(|e| e.is_err())
    }
}

/// Threshold selection at one centroid of an indexed sample.
pub fn select_at_centroid(
    index: &NeighborhoodIndex<'_>,
    centroid: Direction,
    cfg: &SelectionConfig,
) -> (std::result::Result<CentroidThreshold, Error>, CentroidDiagnostics) {
    let nbhd = match Neighborhood::new(centroid, cfg.half_width) {
        Ok(n) => n,
        Err(e) => return (Err(e), CentroidDiagnostics::default()),
    };
    let ns = index.extract(&nbhd);
    let n = ns.tally();
    if n < cfg.k_min + 1 {
        return (
            Err(Error::UnderPopulated {
                centroid: centroid.degrees(),
                tally: n,
                needed: cfg.k_min + 1,
            }),
            CentroidDiagnostics::default(),
        );
    }
    let k_max = cfg.k_max.map_or(n - 1, |m| m.min(n - 1)).max(cfg.k_min);
    let kernel: Vec<f64> = ns
        .directions
        .iter()
        .map(|d| von_mises_kernel(centroid, *d, cfg.eta))
        .collect();
    let path = match xi_path(&ns, &kernel, cfg.estimator, k_max) {
        Ok(p) => p,
        Err(e) => return (Err(e), CentroidDiagnostics::default()),
    };
    let scores = s_phi_path(&path, cfg.phi);
    let result = argmin_score(&scores, cfg.k_min).and_then(|(k_star, s)| {
        Ok(CentroidThreshold {
            centroid,
            threshold_u: ns.order_statistic(k_star + 1)?,
            k_star,
            tally_n: n,
            s_phi_at_min: s,
        })
    });
    let diag = if cfg.keep_diagnostics {
        CentroidDiagnostics { xi_path: path, scores }
    } else {
        CentroidDiagnostics::default()
    };
    (result, diag)
}

pub fn estimate_threshold_curve(
    sample: &DirectionalSample,
    grid: &CentroidGrid,
    cfg: &SelectionConfig,
) -> Result<ThresholdCurve> {
    cfg.validate()?;
    let index = NeighborhoodIndex::new(sample);
    let per: Vec<_> = cfg
        .execution
        .map(grid.len(), |j| select_at_centroid(&index, grid.get(j), cfg));
    let (entries, diags): (Vec<_>, Vec<_>) = per.into_iter().unzip();
    Ok(ThresholdCurve {
        grid: grid.clone(),
        entries,
        diagnostics: cfg.keep_diagnostics.then_some(diags),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tail::moment_xi;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_direction(values: &[f64]) -> NeighborhoodSample {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        NeighborhoodSample {
            centroid: Direction::new(0.0),
            directions: vec![Direction::new(0.0); v.len()],
            values: v,
        }
    }

    #[test]
    fn s_phi_examples() {
        let xi = [Some(0.0), Some(1.0), Some(0.0)];
        assert_relative_eq!(s_phi_score(&xi, 3, 0.0).unwrap(), 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(s_phi_score(&xi, 3, 0.35).unwrap(), 0.424_853_542_439_754_1, epsilon = 1e-12);
        let flat = vec![Some(0.2); 50];
        assert!(s_phi_path(&flat, 0.35).iter().all(|s| s.unwrap() == 0.0));
    }

    #[test]
    fn argmin_rules() {
        let rising: Vec<Option<f64>> = (1..=30).map(|k| Some(k as f64)).collect();
        assert_eq!(argmin_score(&rising, 10).unwrap().0, 10);
        let mut tied: Vec<Option<f64>> = vec![Some(1.0); 80];
        tied[39] = Some(0.5);
        tied[59] = Some(0.5);
        assert_eq!(argmin_score(&tied, 10).unwrap().0, 40);
        assert!(matches!(argmin_score(&[None, None, None], 1), Err(Error::SelectionFailure { .. })));
    }

    #[test]
    fn fast_scores_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let path: Vec<Option<f64>> = (0..100)
                .map(|_| if rng.random::<f64>() < 0.1 { None } else { Some(rng.random::<f64>() - 0.5) })
                .collect();
            let fast = s_phi_path(&path, 0.35);
            let mut best = (0, f64::INFINITY);
            for k in 1..=path.len() {
                let slow = s_phi_score(&path, k, 0.35);
                match (fast[k - 1], slow) {
                    (Some(a), Some(b)) => assert_relative_eq!(a, b, epsilon = 1e-12),
                    (None, None) => {}
                    other => panic!("definedness differs at k={k}: {other:?}"),
                }
                if k >= 10 {
                    if let Some(s) = slow {
                        if s < best.1 {
                            best = (k, s);
                        }
                    }
                }
            }
            assert_eq!(select_k_star(&path, 0.35, 10).unwrap(), best.0);
        }
    }

    #[test]
    fn moment_path_matches_direct_estimates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let values: Vec<f64> = (0..300).map(|_| 1.0 + rng.random::<f64>().powf(-0.3)).collect();
        let ns = single_direction(&values);
        let kernel: Vec<f64> = (0..300).map(|_| 0.5 + rng.random::<f64>()).collect();
        let path = xi_path(&ns, &kernel, EstimatorKind::Moment, 299).unwrap();
        assert!(path[0].is_none());
        for k in [2usize, 10, 57, 150, 299] {
            let n = ns.tally();
            let we = WeightedExceedances::with_kernel(&ns.values[n - k..], ns.values[n - k - 1], &kernel[n - k..]).unwrap();
            assert_relative_eq!(path[k - 1].unwrap(), moment_xi(&we).unwrap(), epsilon = 1e-9);
        }
    }

    #[test]
    fn pareto_path_approaches_one() {
        let n = 2000;
        let values: Vec<f64> = (1..=n).map(|i| (i as f64 / n as f64).powi(-1)).collect();
        let ns = single_direction(&values);
        let path = xi_path(&ns, &vec![1.0; n], EstimatorKind::Moment, 200).unwrap();
        assert!((path[199].unwrap() - 1.0).abs() < 0.15, "{:?}", path[199]);
    }

    #[test]
    fn constant_data_is_undefined() {
        let ns = single_direction(&[3.0; 40]);
        for kind in [EstimatorKind::Moment, EstimatorKind::LocalMl] {
            let path = xi_path(&ns, &[1.0; 40], kind, 39).unwrap();
            assert!(path.iter().all(Option::is_none));
        }
    }

    #[test]
    fn path_bounds_checked() {
        let ns = single_direction(&[1.0, 2.0, 3.0]);
        assert!(xi_path(&ns, &[1.0; 3], EstimatorKind::Moment, 3).is_err());
        assert!(xi_path(&ns, &[1.0; 2], EstimatorKind::Moment, 2).is_err());
    }

    #[test]
    fn under_populated_centroid_reports_tally() {
        let s = DirectionalSample::from_pairs(&[(0.0, 1.0), (1.0, 2.0), (200.0, 3.0)]).unwrap();
        let curve = estimate_threshold_curve(&s, &CentroidGrid::regular(4), &SelectionConfig::default()).unwrap();
        assert!(curve.all_failed());
        assert!(matches!(curve.entries[0], Err(Error::UnderPopulated { tally: 2, needed: 11, .. })));
    }

    #[test]
    fn config_validation() {
        let bad = SelectionConfig { phi: 0.5, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SelectionConfig { k_min: 1, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn fast_scores_proptest(path in proptest::collection::vec(proptest::option::weighted(0.9, -2.0..2.0f64), 1..60), phi in 0.0..0.5f64) {
            let fast = s_phi_path(&path, phi);
            for k in 1..=path.len() {
                let slow = s_phi_score(&path, k, phi);
                prop_assert_eq!(fast[k - 1].is_some(), slow.is_some());
                if let (Some(a), Some(b)) = (fast[k - 1], slow) {
                    prop_assert!((a - b).abs() < 1e-10);
                }
            }
        }
    }
}
