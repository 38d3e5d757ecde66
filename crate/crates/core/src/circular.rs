//! Geometry on the directional domain `[0, 360)` degrees.
//!
//! Directions are measured clockwise from north and kept in degrees; they are
//! converted to radians only inside trigonometric calls.

use std::fmt;

use crate::error::{Error, Result};

/// A direction in degrees, reduced to `[0, 360)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Direction(f64);

impl Direction {
    pub fn new(degrees: f64) -> Self {
        let mut a = degrees.rem_euclid(360.0);
        // rem_euclid can round up to exactly 360 for tiny negative inputs
        if a >= 360.0 {
            a = 0.0;
        }
        Direction(a)
    }

    pub fn degrees(self) -> f64 {
        self.0
    }

    pub fn radians(self) -> f64 {
        self.0.to_radians()
    }

    pub fn rotate(self, offset: f64) -> Self {
        Direction::new(self.0 + offset)
    }
}

impl From<f64> for Direction {
    fn from(d: f64) -> Self {
        Direction::new(d)
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Wrapped-Euclidean distance on the circle, in `[0, 180]`.
pub fn wrapped_distance(a: Direction, b: Direction) -> f64 {
    let d = (a.0 - b.0).abs();
    d.min(360.0 - d)
}

/// Closed arc of half-width `h` around a centroid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighborhood {
    centroid: Direction,
    half_width: f64,
}

impl Neighborhood {
    /// Half-widths above 180 are clamped to 180, which already covers the
    /// whole circle.
    pub fn new(centroid: Direction, half_width: f64) -> Result<Self> {
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(Error::Domain(format!(
                "neighborhood half-width must be positive, got {half_width}"
            )));
        }
        Ok(Neighborhood {
            centroid,
            half_width: half_width.min(180.0),
        })
    }

    pub fn centroid(&self) -> Direction {
        self.centroid
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// Boundary inclusive: `d(centroid, x) <= h`.
    pub fn contains(&self, x: Direction) -> bool {
        wrapped_distance(self.centroid, x) <= self.half_width
    }
}

const BESSEL_SERIES_LIMIT: f64 = 15.0;

/// Modified Bessel function of the first kind, order zero.
///
/// Ascending power series up to `eta = 15`, optimally truncated large-argument
/// expansion above. Relative accuracy is better than `1e-12` on both branches.
pub fn bessel_i0(eta: f64) -> Result<f64> {
    if !(eta >= 0.0) {
        return Err(Error::Domain(format!(
            "bessel_i0 requires a nonnegative argument, got {eta}"
        )));
    }
    if eta <= BESSEL_SERIES_LIMIT {
        Ok(bessel_i0_series(eta))
    } else {
        Ok(bessel_i0_asymptotic(eta))
    }
}

fn bessel_i0_series(eta: f64) -> f64 {
    let q = 0.25 * eta * eta;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut m = 1.0;
    loop {
        term *= q / (m * m);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
        m += 1.0;
    }
    sum
}

fn bessel_i0_asymptotic(eta: f64) -> f64 {
    // I0(x) ~ e^x / sqrt(2 pi x) * sum_k ((2k-1)!!)^2 / (k! (8x)^k)
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        let next = term * (2.0 * k - 1.0) * (2.0 * k - 1.0) / (k * 8.0 * eta);
        if next >= term || next < sum * 1e-17 {
            break;
        }
        term = next;
        sum += term;
        k += 1.0;
    }
    eta.exp() / (2.0 * std::f64::consts::PI * eta).sqrt() * sum
}

/// Unnormalized von Mises kernel `exp(eta (cos(x - c) - 1))`.
///
/// The factor `exp(-eta)` and the Bessel normalization cancel in any ratio,
/// and the exponent is never positive, so this cannot overflow.
pub fn von_mises_kernel(centroid: Direction, x: Direction, eta: f64) -> f64 {
    (eta * ((x.radians() - centroid.radians()).cos() - 1.0)).exp()
}

/// Normalized von Mises weights of `members` about `centroid`.
///
/// Computed as a max-shifted softmax of `eta cos(theta_i - centroid)`; the
/// result sums to one.
pub fn von_mises_weights(centroid: Direction, members: &[Direction], eta: f64) -> Result<Vec<f64>> {
    if members.is_empty() {
        return Err(Error::Empty("von Mises weights need at least one member"));
    }
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::Domain(format!(
            "von Mises concentration must be positive, got {eta}"
        )));
    }
    let exponents: Vec<f64> = members
        .iter()
        .map(|m| eta * (m.radians() - centroid.radians()).cos())
        .collect();
    let max = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = exponents.iter().map(|e| (e - max).exp()).collect();
    let total: f64 = w.iter().sum();
    for x in &mut w {
        *x /= total;
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn d(x: f64) -> Direction {
        Direction::new(x)
    }

    #[test]
    fn direction_reduces_modulo_360() {
        assert_eq!(d(370.0).degrees(), 10.0);
        assert_eq!(d(-10.0).degrees(), 350.0);
        assert_eq!(d(360.0).degrees(), 0.0);
        assert!(d(-1e-20).degrees() < 360.0);
    }

    #[test]
    fn wrapped_distance_examples() {
        assert_eq!(wrapped_distance(d(10.0), d(350.0)), 20.0);
        assert_eq!(wrapped_distance(d(123.4), d(123.4)), 0.0);
        assert_eq!(wrapped_distance(d(0.0), d(180.0)), 180.0);
    }

    #[test]
    fn neighborhood_membership() {
        let n = Neighborhood::new(d(0.0), 30.0).unwrap();
        assert!(n.contains(d(330.0)));
        assert!(!n.contains(d(31.0)));
        let full = Neighborhood::new(d(180.0), 180.0).unwrap();
        for a in 0..360 {
            assert!(full.contains(d(a as f64 + 0.5)));
        }
        assert!(Neighborhood::new(d(0.0), 0.0).is_err());
        assert_eq!(Neighborhood::new(d(0.0), 500.0).unwrap().half_width(), 180.0);
    }

    #[test]
    fn bessel_reference_values() {
        assert_eq!(bessel_i0(0.0).unwrap(), 1.0);
        // mpmath besseli(0, 1) and besseli(0, 10)
        assert_relative_eq!(bessel_i0(1.0).unwrap(), 1.266_065_877_752_008_3, max_relative = 1e-14);
        assert_relative_eq!(bessel_i0(10.0).unwrap(), 2815.716_628_466_254_5, max_relative = 1e-13);
        assert!(bessel_i0(-0.1).is_err());
    }

    #[test]
    fn bessel_branches_agree_at_switch() {
        let s = bessel_i0_series(BESSEL_SERIES_LIMIT);
        let a = bessel_i0_asymptotic(BESSEL_SERIES_LIMIT);
        assert_relative_eq!(s, a, max_relative = 1e-13);
    }

    #[test]
    fn weights_examples() {
        let c = d(40.0);
        assert_eq!(von_mises_weights(c, &[c], 10.0).unwrap(), vec![1.0]);
        let w = von_mises_weights(c, &[d(47.0), d(33.0)], 10.0).unwrap();
        assert_relative_eq!(w[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(w[1], 0.5, epsilon = 1e-15);
        let w = von_mises_weights(d(0.0), &[d(0.0), d(10.0)], 10.0).unwrap();
        assert_relative_eq!(w[0] / w[1], 1.164_069_982_445_607_3, max_relative = 1e-12);
    }

    #[test]
    fn weights_errors() {
        assert!(von_mises_weights(d(0.0), &[], 1.0).is_err());
        assert!(von_mises_weights(d(0.0), &[d(1.0)], 0.0).is_err());
        assert!(von_mises_weights(d(0.0), &[d(1.0)], -2.0).is_err());
    }

    #[test]
    fn weights_match_bessel_normalized_kernel() {
        let c = d(75.0);
        let members: Vec<Direction> = [60.0, 70.0, 75.0, 90.0, 100.0].iter().map(|&x| d(x)).collect();
        let eta = 4.0;
        let b0 = bessel_i0(eta).unwrap();
        let dens: Vec<f64> = members
            .iter()
            .map(|m| (eta * (m.radians() - c.radians()).cos()).exp() / (2.0 * std::f64::consts::PI * b0))
            .collect();
        let total: f64 = dens.iter().sum();
        let w = von_mises_weights(c, &members, eta).unwrap();
        for (wi, di) in w.iter().zip(&dens) {
            assert_relative_eq!(*wi, di / total, max_relative = 1e-12);
        }
    }

    #[test]
    fn larger_eta_concentrates_mass() {
        let members = [d(0.0), d(20.0)];
        let lo = von_mises_weights(d(0.0), &members, 1.0).unwrap();
        let hi = von_mises_weights(d(0.0), &members, 50.0).unwrap();
        assert!(hi[0] > lo[0]);
    }

    proptest! {
        #[test]
        fn distance_symmetric_and_bounded(a in -720.0..720.0f64, b in -720.0..720.0f64) {
            let x = wrapped_distance(d(a), d(b));
            prop_assert_eq!(x, wrapped_distance(d(b), d(a)));
            prop_assert!((0.0..=180.0).contains(&x));
        }

        #[test]
        fn triangle_inequality(a in 0.0..360.0f64, b in 0.0..360.0f64, c in 0.0..360.0f64) {
            let (a, b, c) = (d(a), d(b), d(c));
            prop_assert!(wrapped_distance(a, c) <= wrapped_distance(a, b) + wrapped_distance(b, c) + 1e-12);
        }

        #[test]
        fn weights_rotation_equivariant(
            c in 0.0..360.0f64,
            offs in proptest::collection::vec(-40.0..40.0f64, 1..20),
            rot in -360.0..360.0f64,
            eta in 0.01..50.0f64,
        ) {
            let members: Vec<Direction> = offs.iter().map(|o| d(c + o)).collect();
            let rotated: Vec<Direction> = members.iter().map(|m| m.rotate(rot)).collect();
            let w1 = von_mises_weights(d(c), &members, eta).unwrap();
            let w2 = von_mises_weights(d(c).rotate(rot), &rotated, eta).unwrap();
            for (x, y) in w1.iter().zip(&w2) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
