//! Nonparametric bootstrap over (direction, value) events.
//!
//! Replicate `r` resamples the sample with stream `r` of the master seed, so
//! every replicate can be regenerated on its own. A replicate that errors or
//! panics counts as undefined in every slot; it never aborts the run.

use std::panic::{catch_unwind, AssertUnwindSafe};

use rand::Rng;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::random::{resample_indices, stream_rng};
use crate::sample::DirectionalSample;

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapConfig {
    pub n_replicates: usize,
    pub seed: u64,
    /// Coverage of the percentile band.
    pub band_level: f64,
    pub execution: Execution,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            n_replicates: 200,
            seed: 0,
            band_level: 0.95,
            execution: Execution::default(),
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_replicates < 2 {
            return Err(Error::Config(format!("need at least 2 replicates, got {}", self.n_replicates)));
        }
        if !(self.band_level > 0.0 && self.band_level < 1.0) {
            return Err(Error::Config(format!("band level {} not in (0, 1)", self.band_level)));
        }
        Ok(())
    }
}

/// Same-size resample with replacement; directions stay attached to values.
pub fn resample<R: Rng>(sample: &DirectionalSample, rng: &mut R) -> DirectionalSample {
    let obs = sample.observations();
    let picked = resample_indices(rng, obs.len()).into_iter().map(|i| obs[i]).collect();
    DirectionalSample::new(picked).expect("resampled values stay positive")
}

/// The resample used by replicate `r`.
pub fn replicate_sample(sample: &DirectionalSample, seed: u64, r: usize) -> DirectionalSample {
    resample(sample, &mut stream_rng(seed, r as u64))
}

/// Empirical quantile with linear interpolation between order statistics
/// (Hyndman-Fan type 7): position `(n - 1) q` in the sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "percentile of an empty slice");
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Bootstrap summary of one quantity at one centroid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotSummary {
    /// Mean of the defined replicates; `None` when none is defined.
    pub mean: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    /// Sample standard deviation of the defined replicates.
    pub std_error: Option<f64>,
    pub defined: usize,
    pub excluded_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapSummary {
    pub slots: Vec<SlotSummary>,
    pub n_replicates: usize,
    /// Replicates that failed outright (error or panic).
    pub failed_replicates: usize,
}

/// Per-slot summary of replicate outputs (`replicates[r][slot]`).
pub fn summarize(replicates: &[Vec<Option<f64>>], n_slots: usize, band_level: f64) -> Vec<SlotSummary> {
    let total = replicates.len();
    let alpha = 1.0 - band_level;
    (0..n_slots)
        .map(|s| {
            let mut v: Vec<f64> = replicates
                .iter()
                .filter_map(|row| row.get(s).copied().flatten())
                .filter(|x| x.is_finite())
                .collect();
            let defined = v.len();
            let excluded_fraction = if total == 0 { 1.0 } else { (total - defined) as f64 / total as f64 };
            if v.is_empty() {
                return SlotSummary {
                    mean: None,
                    lower: None,
                    upper: None,
                    std_error: None,
                    defined,
                    excluded_fraction,
                };
            }
            v.sort_by(f64::total_cmp);
            let mean = v.iter().sum::<f64>() / defined as f64;
            let sd = if defined > 1 {
                Some((v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (defined - 1) as f64).sqrt())
            } else {
                None
            };
            SlotSummary {
                mean: Some(mean),
                lower: Some(percentile(&v, alpha / 2.0)),
                upper: Some(percentile(&v, 1.0 - alpha / 2.0)),
                std_error: sd,
                defined,
                excluded_fraction,
            }
        })
        .collect()
}

/// Run `pipeline` on every replicate and return its raw outputs; failed
/// replicates are `None`.
pub fn run_replicates<F>(sample: &DirectionalSample, pipeline: F, cfg: &BootstrapConfig) -> Result<Vec<Option<Vec<Option<f64>>>>>
where
    F: Fn(&DirectionalSample) -> Result<Vec<Option<f64>>> + Sync,
{
    cfg.validate()?;
    if sample.is_empty() {
        return Err(Error::Empty("bootstrap sample"));
    }
    Ok(cfg.execution.map(cfg.n_replicates, |r| {
        let rs = replicate_sample(sample, cfg.seed, r);
        catch_unwind(AssertUnwindSafe(|| pipeline(&rs))).ok().and_then(|res| res.ok())
    }))
}

/// Bootstrap means, percentile bands and excluded fractions for every slot
/// produced by `pipeline`.
pub fn run_pipeline<F>(sample: &DirectionalSample, pipeline: F, cfg: &BootstrapConfig) -> Result<BootstrapSummary>
where
    F: Fn(&DirectionalSample) -> Result<Vec<Option<f64>>> + Sync,
{
    let raw = run_replicates(sample, pipeline, cfg)?;
    let n_slots = raw.iter().flatten().map(Vec::len).max().unwrap_or(0);
    if raw.iter().flatten().any(|row| row.len() != n_slots) {
        return Err(Error::Dimension {
            expected: n_slots,
            got: raw.iter().flatten().map(Vec::len).min().unwrap_or(0),
        });
    }
    let failed = raw.iter().filter(|r| r.is_none()).count();
    let rows: Vec<Vec<Option<f64>>> = raw.into_iter().map(|r| r.unwrap_or_default()).collect();
    Ok(BootstrapSummary {
        slots: summarize(&rows, n_slots, cfg.band_level),
        n_replicates: cfg.n_replicates,
        failed_replicates: failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(n: usize) -> DirectionalSample {
        let pairs: Vec<(f64, f64)> = (0..n).map(|i| (i as f64 * 7.0, 1.0 + i as f64)).collect();
        DirectionalSample::from_pairs(&pairs).unwrap()
    }

    #[test]
    fn resample_basics() {
        let s = sample(40);
        let r = replicate_sample(&s, 3, 0);
        assert_eq!(r.len(), 40);
        assert_eq!(r, replicate_sample(&s, 3, 0));
        assert_eq!(r.to_delimited(','), replicate_sample(&s, 3, 0).to_delimited(','));
        // pairs are kept intact
        for o in r.observations() {
            assert!(s.observations().contains(o));
        }
        let one = sample(1);
        assert_eq!(replicate_sample(&one, 9, 4), one);
    }

    #[test]
    fn constant_pipeline() {
        let s = sample(10);
        let cfg = BootstrapConfig {
            n_replicates: 20,
            ..Default::default()
        };
        let out = run_pipeline(&s, |_| Ok(vec![Some(2.5), None]), &cfg).unwrap();
        let c = out.slots[0];
        assert_eq!((c.mean, c.lower, c.upper), (Some(2.5), Some(2.5), Some(2.5)));
        assert_eq!(c.excluded_fraction, 0.0);
        assert_eq!(out.slots[1].excluded_fraction, 1.0);
        assert_eq!(out.slots[1].mean, None);
    }

    #[test]
    fn failures_are_isolated() {
        let s = sample(10);
        let cfg = BootstrapConfig {
            n_replicates: 30,
            seed: 1,
            ..Default::default()
        };
        let f = |x: &DirectionalSample| {
            let first = x.observations()[0].value;
            if first < 3.0 {
                panic!("boom");
            }
            if first < 5.0 {
                return Err(Error::Degenerate("no".into()));
            }
            Ok(vec![Some(first)])
        };
        let out = run_pipeline(&s, f, &cfg).unwrap();
        let raw = run_replicates(&s, f, &cfg).unwrap();
        let ok = raw.iter().filter(|r| r.is_some()).count();
        assert_eq!(out.failed_replicates, 30 - ok);
        assert_eq!(out.slots[0].defined, ok);
        assert!((out.slots[0].excluded_fraction - (30 - ok) as f64 / 30.0).abs() < 1e-15);
    }

    #[test]
    fn replicate_reproducible_in_isolation() {
        let s = sample(25);
        let cfg = BootstrapConfig {
            n_replicates: 8,
            seed: 42,
            execution: Execution::Parallel,
            ..Default::default()
        };
        let f = |x: &DirectionalSample| Ok(vec![Some(x.observations().iter().map(|o| o.value).sum())]);
        let raw = run_replicates(&s, f, &cfg).unwrap();
        let alone = f(&replicate_sample(&s, 42, 5)).unwrap();
        assert_eq!(raw[5].as_ref().unwrap(), &alone);
        let seq = run_replicates(&s, f, &BootstrapConfig { execution: Execution::Sequential, ..cfg }).unwrap();
        assert_eq!(raw, seq);
    }

    #[test]
    fn config_validation() {
        assert!(BootstrapConfig { n_replicates: 1, ..Default::default() }.validate().is_err());
        assert!(BootstrapConfig { band_level: 1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn percentile_type7_examples() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 1.0), 4.0);
        assert!((percentile(&v, 0.5) - 2.5).abs() < 1e-15);
        assert!((percentile(&v, 0.25) - 1.75).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn percentile_matches_sort_oracle(mut v in proptest::collection::vec(-100.0f64..100.0, 1..60), q in 0.0f64..1.0) {
            v.sort_by(f64::total_cmp);
            // oracle: interpolate between the order statistics bracketing rank 1 + (n-1) q
            let rank = 1.0 + (v.len() - 1) as f64 * q;
            let j = rank.floor() as usize;
            let g = rank - j as f64;
            let expect = if j >= v.len() { v[v.len() - 1] } else { (1.0 - g) * v[j - 1] + g * v[j] };
            prop_assert!((percentile(&v, q) - expect).abs() < 1e-9);
        }

        #[test]
        fn band_brackets_mean_for_symmetric_rows(vals in proptest::collection::vec(0.0f64..10.0, 5..40)) {
            let rows: Vec<Vec<Option<f64>>> = vals.iter().map(|v| vec![Some(*v)]).collect();
            let s = summarize(&rows, 1, 0.95)[0];
            let (lo, m, hi) = (s.lower.unwrap(), s.mean.unwrap(), s.upper.unwrap());
            prop_assert!(lo <= hi);
            prop_assert!(m >= vals.iter().cloned().fold(f64::MAX, f64::min) - 1e-12);
            prop_assert!(m <= vals.iter().cloned().fold(f64::MIN, f64::max) + 1e-12);
        }
    }
}
