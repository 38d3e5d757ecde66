//! Synthetic directional samples with known tails.
//!
//! Each event draws a direction from a rate density on the circle. With
//! probability `body_fraction` its value comes from a truncated Weibull body
//! on `(0, u0(theta))`; otherwise it is `u0(theta)` plus a GPD excess with
//! shape `xi(theta)` and scale `sigma(theta)`. Exceedances of `u0` are
//! therefore exactly GPD and true quantiles are available in closed form.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::circular::Direction;
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::levels::box_cox;
use crate::sample::{DirectionalSample, Observation};

/// A real function of direction.
#[derive(Debug, Clone, PartialEq)]
pub enum DirectionalFn {
    Constant(f64),
    /// `(start, value)` pairs with strictly increasing starts in `[0, 360)`.
    /// Each value holds from its start up to the next start; the last sector
    /// wraps around to the first start.
    Piecewise(Vec<(f64, f64)>),
    /// `mean + amplitude * cos(harmonic * (theta - phase))`.
    Sinusoid {
        mean: f64,
        amplitude: f64,
        phase: f64,
        harmonic: u32,
    },
}

impl DirectionalFn {
    pub fn eval(&self, theta: Direction) -> f64 {
        let t = theta.degrees();
        match self {
            DirectionalFn::Constant(v) => *v,
            DirectionalFn::Piecewise(sectors) => {
                let pos = sectors.partition_point(|(s, _)| *s <= t);
                if pos == 0 {
                    sectors[sectors.len() - 1].1
                } else {
                    sectors[pos - 1].1
                }
            }
            DirectionalFn::Sinusoid {
                mean,
                amplitude,
                phase,
                harmonic,
            } => mean + amplitude * (*harmonic as f64 * (t - phase)).to_radians().cos(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            DirectionalFn::Piecewise(sectors) => {
                if sectors.is_empty() {
                    return Err(Error::Config("piecewise function needs at least one sector".into()));
                }
                if sectors[0].0 < 0.0 || sectors[sectors.len() - 1].0 >= 360.0 {
                    return Err(Error::Config("sector starts must lie in [0, 360)".into()));
                }
                if sectors.windows(2).any(|w| !(w[1].0 > w[0].0)) {
                    return Err(Error::Config("sector starts must be strictly increasing".into()));
                }
                Ok(())
            }
            DirectionalFn::Sinusoid { harmonic, .. } if *harmonic == 0 => {
                Err(Error::Config("sinusoid harmonic must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }

    /// Smallest and largest value attained.
    fn range(&self) -> (f64, f64) {
        match self {
            DirectionalFn::Constant(v) => (*v, *v),
            DirectionalFn::Piecewise(s) => s.iter().fold((f64::MAX, f64::MIN), |(lo, hi), (_, v)| (lo.min(*v), hi.max(*v))),
            DirectionalFn::Sinusoid { mean, amplitude, .. } => (mean - amplitude.abs(), mean + amplitude.abs()),
        }
    }
}

impl fmt::Display for DirectionalFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DirectionalFn::Constant(v) => write!(f, "{v}"),
            DirectionalFn::Piecewise(s) => {
                let parts: Vec<String> = s.iter().map(|(a, v)| format!("{a}={v}")).collect();
                write!(f, "piecewise:{}", parts.join(";"))
            }
            DirectionalFn::Sinusoid {
                mean,
                amplitude,
                phase,
                harmonic,
            } => write!(f, "sinusoid:{mean};{amplitude};{phase};{harmonic}"),
        }
    }
}

/// Accepts `0.1`, `piecewise:0=1;180=3` and `sinusoid:mean;amplitude;phase;harmonic`.
impl FromStr for DirectionalFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = |what: &str| Error::Config(format!("cannot parse directional function `{s}`: {what}"));
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad(t));
        let f = if let Some(rest) = s.strip_prefix("piecewise:") {
            let sectors = rest
                .split(';')
                .map(|part| {
                    let (a, v) = part.split_once('=').ok_or_else(|| bad(part))?;
                    Ok((num(a)?, num(v)?))
                })
                .collect::<Result<Vec<_>>>()?;
            DirectionalFn::Piecewise(sectors)
        } else if let Some(rest) = s.strip_prefix("sinusoid:") {
            let parts: Vec<&str> = rest.split(';').collect();
            if parts.len() != 4 {
                return Err(bad("sinusoid needs mean;amplitude;phase;harmonic"));
            }
            DirectionalFn::Sinusoid {
                mean: num(parts[0])?,
                amplitude: num(parts[1])?,
                phase: num(parts[2])?,
                harmonic: parts[3].trim().parse().map_err(|_| bad(parts[3]))?,
            }
        } else {
            DirectionalFn::Constant(num(s)?)
        };
        f.validate()?;
        Ok(f)
    }
}

/// Generator settings. `rate` is a relative density over degrees; it need
/// not be normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub xi: DirectionalFn,
    pub sigma: DirectionalFn,
    /// Splice location `u0(theta)`; values above it follow the GPD.
    pub splice: DirectionalFn,
    pub rate: DirectionalFn,
    /// Probability of a body draw, `q0`.
    pub body_fraction: f64,
    /// Weibull shape of the body.
    pub body_shape: f64,
    pub n: usize,
    pub seed: u64,
}

const CHECK_POINTS: usize = 3600;

impl GeneratorSpec {
    /// Constant shape and scale, uniform directions, splice at 4 with half
    /// the mass in the tail.
    pub fn stationary(xi: f64, sigma: f64, n: usize, seed: u64) -> Self {
        GeneratorSpec {
            xi: DirectionalFn::Constant(xi),
            sigma: DirectionalFn::Constant(sigma),
            splice: DirectionalFn::Constant(4.0),
            rate: DirectionalFn::Constant(1.0),
            body_fraction: 0.5,
            body_shape: 2.0,
            n,
            seed,
        }
    }

    /// Scale 1 on `[0, 180)` and 3 on `[180, 360)`, shape 0.1.
    pub fn two_regime(n: usize, seed: u64) -> Self {
        GeneratorSpec {
            sigma: DirectionalFn::Piecewise(vec![(0.0, 1.0), (180.0, 3.0)]),
            ..Self::stationary(0.1, 1.0, n, seed)
        }
    }

    /// Shape varying as `0.25 cos(theta)`, scale 1.
    pub fn varying_shape(n: usize, seed: u64) -> Self {
        GeneratorSpec {
            xi: DirectionalFn::Sinusoid {
                mean: 0.0,
                amplitude: 0.25,
                phase: 0.0,
                harmonic: 1,
            },
            ..Self::stationary(0.0, 1.0, n, seed)
        }
    }

    /// Five sectors: a sheltered arc over `[50, 210)` with small scale and
    /// splice, an exposed arc over `[210, 50)` with large ones, and most
    /// events from the exposed arc.
    pub fn north_sea_like(n: usize, seed: u64) -> Self {
        // (start, splice, sigma, xi, sector probability)
        let sectors: [(f64, f64, f64, f64, f64); 5] = [
            (50.0, 2.5, 0.6, -0.25, 0.08),
            (140.0, 3.0, 0.8, -0.2, 0.10),
            (210.0, 6.0, 2.0, -0.05, 0.32),
            (270.0, 5.5, 1.8, 0.0, 0.25),
            (320.0, 5.0, 1.6, -0.1, 0.25),
        ];
        let width = |i: usize| {
            let next = sectors[(i + 1) % sectors.len()].0;
            (next - sectors[i].0).rem_euclid(360.0)
        };
        let column = |f: fn(&(f64, f64, f64, f64, f64)) -> f64| {
            let mut v: Vec<(f64, f64)> = sectors.iter().map(|s| (s.0, f(s))).collect();
            // first sector of the circle starts at 0 inside the wrap sector
            v.insert(0, (0.0, f(&sectors[4])));
            DirectionalFn::Piecewise(v)
        };
        let mut rate: Vec<(f64, f64)> = (0..sectors.len()).map(|i| (sectors[i].0, sectors[i].4 / width(i))).collect();
        rate.insert(0, (0.0, sectors[4].4 / width(4)));
        GeneratorSpec {
            xi: column(|s| s.3),
            sigma: column(|s| s.2),
            splice: column(|s| s.1),
            rate: DirectionalFn::Piecewise(rate),
            body_fraction: 0.5,
            body_shape: 2.0,
            n,
            seed,
        }
    }

    pub fn preset(name: &str, n: usize, seed: u64) -> Result<Self> {
        match name {
            "stationary" => Ok(Self::stationary(0.1, 1.0, n, seed)),
            "two-regime" => Ok(Self::two_regime(n, seed)),
            "varying-shape" => Ok(Self::varying_shape(n, seed)),
            "north-sea-like" => Ok(Self::north_sea_like(n, seed)),
            _ => Err(Error::Config(format!(
                "unknown preset `{name}` (expected stationary, two-regime, varying-shape or north-sea-like)"
            ))),
        }
    }

    /// Build from keys `preset`, `n`, `seed`, `xi`, `sigma`, `splice`,
    /// `rate`, `body_fraction`, `body_shape`; explicit keys override the
    /// preset.
    pub fn from_config(kv: &KeyValues) -> Result<Self> {
        let n = kv.parsed::<usize>("n")?.unwrap_or(3000);
        let seed = kv.parsed::<u64>("seed")?.unwrap_or(0);
        let mut spec = Self::preset(kv.get("preset").unwrap_or("stationary"), n, seed)?;
        if let Some(f) = kv.parsed::<DirectionalFn>("xi")? {
            spec.xi = f;
        }
        if let Some(f) = kv.parsed::<DirectionalFn>("sigma")? {
            spec.sigma = f;
        }
        if let Some(f) = kv.parsed::<DirectionalFn>("splice")? {
            spec.splice = f;
        }
        if let Some(f) = kv.parsed::<DirectionalFn>("rate")? {
            spec.rate = f;
        }
        if let Some(v) = kv.parsed::<f64>("body_fraction")? {
            spec.body_fraction = v;
        }
        if let Some(v) = kv.parsed::<f64>("body_shape")? {
            spec.body_shape = v;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for f in [&self.xi, &self.sigma, &self.splice, &self.rate] {
            f.validate()?;
        }
        if self.n == 0 {
            return Err(Error::Config("sample size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.body_fraction) {
            return Err(Error::Config(format!("body fraction {} not in [0, 1)", self.body_fraction)));
        }
        if !(self.body_shape > 0.0) {
            return Err(Error::Config("body shape must be positive".into()));
        }
        let checks: [(&DirectionalFn, &str, fn(f64) -> bool); 4] = [
            (&self.xi, "xi must exceed -1", |v| v > -1.0),
            (&self.sigma, "sigma must be positive", |v| v > 0.0),
            (&self.splice, "splice location must be positive", |v| v > 0.0),
            (&self.rate, "rate must be nonnegative", |v| v >= 0.0),
        ];
        for (f, msg, ok) in checks {
            let (lo, hi) = f.range();
            if !ok(lo) || !ok(hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Config(msg.into()));
            }
        }
        let mass: f64 = (0..CHECK_POINTS)
            .map(|i| self.rate.eval(Direction::new(i as f64 * 360.0 / CHECK_POINTS as f64)))
            .sum();
        if !(mass > 0.0) {
            return Err(Error::Config("rate integrates to zero".into()));
        }
        Ok(())
    }

    fn draw_direction(&self, rng: &mut ChaCha8Rng) -> f64 {
        match &self.rate {
            DirectionalFn::Constant(_) => rng.random_range(0.0..360.0),
            DirectionalFn::Piecewise(sectors) => {
                let m = sectors.len();
                let width = |i: usize| {
                    let end = if i + 1 < m { sectors[i + 1].0 } else { sectors[0].0 + 360.0 };
                    end - sectors[i].0
                };
                let total: f64 = (0..m).map(|i| sectors[i].1 * width(i)).sum();
                let mut target = rng.random::<f64>() * total;
                let mut pick = m - 1;
                for i in 0..m {
                    let w = sectors[i].1 * width(i);
                    if target < w {
                        pick = i;
                        break;
                    }
                    target -= w;
                }
                (sectors[pick].0 + rng.random::<f64>() * width(pick)).rem_euclid(360.0)
            }
            f @ DirectionalFn::Sinusoid { .. } => {
                let (_, hi) = f.range();
                loop {
                    let t = rng.random_range(0.0..360.0);
                    if rng.random::<f64>() * hi <= f.eval(Direction::new(t)) {
                        return t;
                    }
                }
            }
        }
    }

    /// Draw the sample. Deterministic in `seed`.
    pub fn generate(&self) -> Result<DirectionalSample> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let trunc = 1.0 - (-1.0f64).exp();
        let mut obs = Vec::with_capacity(self.n);
        for _ in 0..self.n {
            let d = Direction::new(self.draw_direction(&mut rng));
            let u0 = self.splice.eval(d);
            let v: f64 = 1.0 - rng.random::<f64>();
            let value = if rng.random::<f64>() < self.body_fraction {
                // Weibull truncated to (0, 1), scaled by the splice
                let x = (-(1.0 - v * trunc).ln()).powf(1.0 / self.body_shape);
                (u0 * x).clamp(u0 * 1e-9, u0)
            } else {
                let (xi, sigma) = (self.xi.eval(d), self.sigma.eval(d));
                u0 + sigma * box_cox(1.0 / v, xi)
            };
            obs.push(Observation { direction: d, value });
        }
        DirectionalSample::new(obs)
    }

    /// Value exceeded with probability `p` by an event from direction `theta`.
    pub fn true_quantile(&self, theta: Direction, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::OutOfRange(format!("probability {p} not in (0, 1)")));
        }
        let u0 = self.splice.eval(theta);
        let tail = 1.0 - self.body_fraction;
        if p <= tail {
            return Ok(u0 + self.sigma.eval(theta) * box_cox(tail / p, self.xi.eval(theta)));
        }
        let trunc = 1.0 - (-1.0f64).exp();
        let body_cdf = (1.0 - p) / self.body_fraction;
        Ok(u0 * (-(1.0 - body_cdf * trunc).ln()).powf(1.0 / self.body_shape))
    }

    /// Upper end of the support at `theta`; infinite unless the shape is negative.
    pub fn true_endpoint(&self, theta: Direction) -> f64 {
        let xi = self.xi.eval(theta);
        if xi < 0.0 {
            self.splice.eval(theta) - self.sigma.eval(theta) / xi
        } else {
            f64::INFINITY
        }
    }
}
