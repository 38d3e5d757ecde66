//! Extreme quantiles, T-year levels and right endpoints.

use crate::error::{Error, Result};
use crate::sample::NeighborhoodSample;

/// Shapes closer to zero than this use the logarithmic limit.
pub const XI_ZERO_BAND: f64 = 1e-8;

/// `(r^xi - 1) / xi`, with the limit `log r` near `xi = 0`.
pub fn box_cox(r: f64, xi: f64) -> f64 {
    if xi.abs() < XI_ZERO_BAND {
        r.ln()
    } else {
        (r.powf(xi) - 1.0) / xi
    }
}

/// Requested exceedance level: a direct probability or a return period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QuantileQuery {
    Probability(f64),
    ReturnPeriod { t_years: f64, span_years: f64, n_events: f64 },
}

impl QuantileQuery {
    pub fn probability(&self) -> Result<f64> {
        let p = match *self {
            QuantileQuery::Probability(p) => p,
            QuantileQuery::ReturnPeriod {
                t_years,
                span_years,
                n_events,
            } => t_year_probability(span_years, n_events, t_years)?,
        };
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::OutOfRange(format!("exceedance probability {p} not in (0, 1]")));
        }
        Ok(p)
    }

    /// Short tag used in output file names, e.g. `T100` or `p0.001`.
    pub fn tag(&self) -> String {
        match *self {
            QuantileQuery::Probability(p) => format!("p{p}"),
            QuantileQuery::ReturnPeriod { t_years, .. } => format!("T{t_years}"),
        }
    }
}

/// Per-event exceedance probability of the T-year level: `(T0 / N_E) / T`.
pub fn t_year_probability(span_years: f64, n_events: f64, t_years: f64) -> Result<f64> {
    if !(span_years > 0.0 && n_events > 0.0 && t_years > 0.0) {
        return Err(Error::Domain(format!(
            "T0 = {span_years}, N_E = {n_events}, T = {t_years} must all be positive"
        )));
    }
    Ok(span_years / n_events / t_years)
}

/// GPD-based quantile above threshold `u` with exceedance fraction `frac`:
/// `u + sigma ((frac / p)^xi - 1) / xi`.
pub fn parametric_quantile(u: f64, sigma: f64, xi: f64, frac: f64, p: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("scale must be positive, got {sigma}")));
    }
    if !(frac > 0.0 && frac < 1.0) && frac != 1.0 {
        return Err(Error::Domain(format!("exceedance fraction {frac} not in (0, 1]")));
    }
    if !(p > 0.0) || p > frac {
        return Err(Error::OutOfRange(format!(
            "p = {p} must lie in (0, {frac}] to extrapolate above the threshold"
        )));
    }
    Ok(u + sigma * box_cox(frac / p, xi))
}

/// Right endpoint `u - sigma / xi` of a GPD tail with negative shape.
pub fn parametric_endpoint(u: f64, sigma: f64, xi: f64) -> Result<f64> {
    if !(xi < 0.0) {
        return Err(Error::Domain(format!("endpoint is infinite for xi = {xi} >= 0")));
    }
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("scale must be positive, got {sigma}")));
    }
    Ok(u - sigma / xi)
}

/// Moment-based quantile: `u + a ((k / (N p))^xi - 1) / xi`.
pub fn semiparametric_quantile(u: f64, a_hat: f64, xi_hat: f64, k: usize, n: usize, p: f64) -> Result<f64> {
    if !(a_hat > 0.0) {
        return Err(Error::Domain(format!("scale function must be positive, got {a_hat}")));
    }
    if k == 0 || k >= n {
        return Err(Error::OutOfRange(format!("need 0 < k < N, got k = {k}, N = {n}")));
    }
    let ratio = k as f64 / (n as f64 * p);
    // p = k/N must land on u despite rounding in the ratio
    if !(p > 0.0) || ratio < 1.0 - 1e-12 {
        return Err(Error::OutOfRange(format!("p = {p} exceeds k/N = {}", k as f64 / n as f64)));
    }
    Ok(u + a_hat * box_cox(ratio.max(1.0), xi_hat))
}

/// Shape-free endpoint estimator for finite-endpoint tails:
///
/// `Y(N) + (1/log 2) sum_{i=0}^{k-1} log((k+i+1)/(k+i)) (Y(N-k) - Y(N-k-i))`
///
/// with `Y(j)` the ascending order statistics. Needs `2k <= N`.
pub fn general_endpoint(ns: &NeighborhoodSample, k: usize) -> Result<f64> {
    general_endpoint_sorted(&ns.values, k)
}

/// As [`general_endpoint`] on an ascending slice.
pub fn general_endpoint_sorted(sorted: &[f64], k: usize) -> Result<f64> {
    let n = sorted.len();
    if k == 0 || 2 * k > n {
        return Err(Error::OutOfRange(format!("general endpoint needs 1 <= k <= N/2, got k = {k}, N = {n}")));
    }
    // ascending order statistic Y(j), 1-based
    let y = |j: usize| sorted[j - 1];
    let anchor = y(n - k);
    let sum: f64 = (0..k)
        .map(|i| {
            let kf = k as f64;
            let i = i as f64;
            ((kf + i + 1.0) / (kf + i)).ln() * (anchor - y(n - k - i as usize))
        })
        .sum();
    Ok(y(n) + sum / std::f64::consts::LN_2)
}

/// Location and scale of the unconditional tail representation
/// `H(xi, mu*, sigma*)` of a GPD fitted above `u`, where `tail_frac` is the
/// fraction of the sample above `u`:
///
/// `mu* = u + sigma (tail_frac^xi - 1) / xi`, `sigma* = sigma tail_frac^xi`.
pub fn reparameterize_gpd(u: f64, sigma_u: f64, xi: f64, tail_frac: f64) -> Result<(f64, f64)> {
    if !(tail_frac > 0.0 && tail_frac < 1.0) {
        return Err(Error::Domain(format!("tail fraction {tail_frac} not in (0, 1)")));
    }
    Ok((u + sigma_u * box_cox(tail_frac, xi), sigma_u * tail_frac.powf(xi)))
}

/// Survival function of `H(xi, mu, sigma)` at `x`.
pub fn gpd_survival(xi: f64, mu: f64, sigma: f64, x: f64) -> f64 {
    let z = (x - mu) / sigma;
    if xi.abs() < XI_ZERO_BAND {
        return (-z).exp();
    }
    let t = 1.0 + xi * z;
    if t <= 0.0 {
        return 0.0;
    }
    t.powf(-1.0 / xi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use crate::circular::Direction;

    #[test]
    fn parametric_quantile_examples() {
        for &xi in &[-0.3, 0.0, 0.4] {
            assert_eq!(parametric_quantile(10.0, 2.0, xi, 0.1, 0.1).unwrap(), 10.0);
        }
        assert_relative_eq!(parametric_quantile(10.0, 2.0, 0.0, 0.1, 0.001).unwrap(), 19.210_340_371_976_184, epsilon = 1e-12);
        assert_relative_eq!(parametric_quantile(10.0, 2.0, -0.1, 0.1, 0.001).unwrap(), 17.380_853_110_396_135, epsilon = 1e-12);
        assert!(matches!(parametric_quantile(10.0, 2.0, 0.1, 0.1, 0.2), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn t_year_examples() {
        assert_relative_eq!(t_year_probability(55.0, 1521.0, 100.0).unwrap(), 3.616_042_077_580_539e-4, max_relative = 1e-12);
        assert_eq!(t_year_probability(10.0, 10.0, 1.0).unwrap(), 1.0);
        let p1 = t_year_probability(55.0, 1521.0, 100.0).unwrap();
        let p2 = t_year_probability(55.0, 1521.0, 200.0).unwrap();
        assert_relative_eq!(p1, 2.0 * p2, max_relative = 1e-15);
        assert!(t_year_probability(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn endpoint_examples() {
        assert_eq!(parametric_endpoint(10.0, 2.0, -0.5).unwrap(), 14.0);
        assert_eq!(parametric_endpoint(10.0, 3.0, -1.0).unwrap(), 13.0);
        let e = parametric_endpoint(10.0, 2.0, -0.01).unwrap();
        assert_relative_eq!(e, 210.0, epsilon = 1e-9);
        assert!(parametric_quantile(10.0, 2.0, -0.01, 0.1, 1e-12).unwrap() < e);
        assert!(parametric_endpoint(10.0, 2.0, 0.0).is_err());
    }

    #[test]
    fn semiparametric_examples() {
        assert_eq!(semiparametric_quantile(10.0, 2.0, 0.2, 50, 500, 0.1).unwrap(), 10.0);
        // k/(N p) = 100
        assert_relative_eq!(semiparametric_quantile(10.0, 2.0, 0.0, 50, 500, 0.001).unwrap(), 19.210_340_371_976_184, epsilon = 1e-12);
        assert!(semiparametric_quantile(10.0, 2.0, 0.0, 50, 500, 0.2).is_err());
        assert!(semiparametric_quantile(10.0, 2.0, 0.0, 500, 500, 0.01).is_err());
    }

    fn ns(values: &[f64]) -> NeighborhoodSample {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        NeighborhoodSample {
            centroid: Direction::new(0.0),
            directions: vec![Direction::new(0.0); v.len()],
            values: v,
        }
    }

    #[test]
    fn general_endpoint_examples() {
        let s = ns(&[1.0, 2.0, 3.5, 7.0]);
        assert_eq!(general_endpoint(&s, 1).unwrap(), 7.0);
        let flat = ns(&[1.0, 4.0, 4.0, 4.0, 4.0]);
        assert_eq!(general_endpoint(&flat, 2).unwrap(), 4.0);
        let four = ns(&[5.0, 6.0, 8.0, 9.0]);
        assert_relative_eq!(general_endpoint(&four, 2).unwrap(), 9.415_037_499_278_844, epsilon = 1e-12);
        assert!(general_endpoint(&four, 3).is_err());
        assert!(general_endpoint(&four, 0).is_err());
    }

    #[test]
    fn reparameterization_examples() {
        let (mu, s) = reparameterize_gpd(10.0, 2.0, 0.0, 0.5).unwrap();
        assert_relative_eq!(mu, 10.0 + 2.0 * 0.5f64.ln(), epsilon = 1e-14);
        assert_relative_eq!(s, 2.0, epsilon = 1e-14);
        let (mu, s) = reparameterize_gpd(10.0, 2.0, 1.0, 0.5).unwrap();
        assert_relative_eq!(mu, 9.0, epsilon = 1e-14);
        assert_relative_eq!(s, 1.0, epsilon = 1e-14);
        assert!(reparameterize_gpd(10.0, 2.0, 1.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn reparameterized_tail_identity(
            u in 0.5..20.0f64, sigma in 0.1..5.0f64, xi in -0.8..0.8f64,
            frac in 0.01..0.99f64, excess in 0.0..3.0f64,
        ) {
            let (mu, s) = reparameterize_gpd(u, sigma, xi, frac).unwrap();
            let x = u + excess * sigma;
            let lhs = gpd_survival(xi, mu, s, x);
            let rhs = gpd_survival(xi, u, sigma, x) * frac;
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-300) + 1e-15, "{} vs {}", lhs, rhs);
        }

        #[test]
        fn quantiles_decrease_in_p(xi in -0.9..0.9f64, sigma in 0.1..5.0f64, p1 in 1e-6..0.1f64, p2 in 1e-6..0.1f64) {
            prop_assume!(p1 < p2);
            prop_assert!(parametric_quantile(3.0, sigma, xi, 0.1, p1).unwrap() > parametric_quantile(3.0, sigma, xi, 0.1, p2).unwrap());
            prop_assert!(semiparametric_quantile(3.0, sigma, xi, 100, 1000, p1).unwrap() > semiparametric_quantile(3.0, sigma, xi, 100, 1000, p2).unwrap());
        }

        #[test]
        fn quantile_below_endpoint(xi in -1.0..-0.01f64, sigma in 0.1..5.0f64, p in 1e-9..0.1f64) {
            let e = parametric_endpoint(3.0, sigma, xi).unwrap();
            prop_assert!(parametric_quantile(3.0, sigma, xi, 0.1, p).unwrap() < e);
        }

        #[test]
        fn zero_shape_continuity(sigma in 0.1..5.0f64, p in 1e-6..0.1f64) {
            let q0 = parametric_quantile(3.0, sigma, 0.0, 0.1, p).unwrap();
            for xi in [1e-8, -1e-8, 1.0001e-8, -1.0001e-8] {
                prop_assert!((parametric_quantile(3.0, sigma, xi, 0.1, p).unwrap() - q0).abs() < 1e-4);
            }
        }

        #[test]
        fn general_endpoint_at_least_max(vals in proptest::collection::vec(0.01..100.0f64, 2..200), kf in 0.0..1.0f64) {
            let s = ns(&vals);
            let k = 1 + ((s.tally() / 2 - 1) as f64 * kf) as usize;
            prop_assert!(general_endpoint(&s, k).unwrap() >= *s.values.last().unwrap());
        }
    }
}
