//! Run settings resolved from command-line flags and an optional config file.
//!
//! Flags win over file entries. A file entry may be written bare (`h = 30`)
//! or under its section (`[threshold]` then `h = 30`).

use std::path::PathBuf;

use circevt::bootstrap::BootstrapConfig;
use circevt::config::{parse_list, KeyValues};
use circevt::exec::Execution;
use circevt::levels::QuantileQuery;
use circevt::pipeline::Method;
use circevt::spline::DEFAULT_PENALTY_GRID;
use circevt::tail::EstimatorKind;
use circevt::threshold::SelectionConfig;
use circevt::{Error, Result};

/// Every recognized key and the section it may appear under.
pub const KEYS: &[(&str, &str)] = &[
    ("input", "io"),
    ("outdir", "io"),
    ("h", "threshold"),
    ("eta", "threshold"),
    ("phi", "threshold"),
    ("kmin", "threshold"),
    ("kmax", "threshold"),
    ("threshold-estimator", "threshold"),
    ("centroids", "threshold"),
    ("diagnostics", "threshold"),
    ("methods", "levels"),
    ("T", "levels"),
    ("T0", "levels"),
    ("NE", "levels"),
    ("p", "levels"),
    ("endpoints", "levels"),
    ("nb", "spline"),
    ("lambda-grid", "spline"),
    ("kappa-grid", "spline"),
    ("mu-grid", "spline"),
    ("cv-resamples", "spline"),
    ("replicates", "bootstrap"),
    ("seed", "bootstrap"),
    ("band-level", "bootstrap"),
    ("rethreshold-per-replicate", "bootstrap"),
    ("sequential", "run"),
];

/// Flags layered over file entries, with lookups that honor sections.
#[derive(Debug, Clone, Default)]
pub struct Layered {
    file: KeyValues,
    flags: KeyValues,
}

impl Layered {
    pub fn new(file: KeyValues, flags: KeyValues) -> Result<Self> {
        for (k, _) in file.iter() {
            let bare = k.split_once('.').map_or(k, |(section, rest)| {
                if KEYS.iter().any(|(key, s)| *s == section && *key == rest) || section == "synth" {
                    rest
                } else {
                    k
                }
            });
            if !KEYS.iter().any(|(key, _)| *key == bare) && !k.starts_with("synth.") {
                return Err(Error::Config(format!("unknown configuration key `{k}`")));
            }
        }
        Ok(Layered { file, flags })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        if let Some(v) = self.flags.get(key) {
            return Some(v);
        }
        if let Some(v) = self.file.get(key) {
            return Some(v);
        }
        let section = KEYS.iter().find(|(k, _)| *k == key)?.1;
        self.file.get(&format!("{section}.{key}"))
    }

    fn parsed<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: std::str::FromStr,
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|e| Error::Config(format!("{key} = `{v}`: {e}"))))
            .transpose()
    }

    fn list<T>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T: std::str::FromStr,
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| parse_list(v).map_err(|e| Error::Config(format!("{key}: {e}"))))
            .transpose()
    }

    fn flag(&self, key: &str) -> Result<bool> {
        match self.get(key) {
            None => Ok(false),
            Some("true" | "1" | "yes") => Ok(true),
            Some("false" | "0" | "no") => Ok(false),
            Some(v) => Err(Error::Config(format!("{key} = `{v}` is not a boolean"))),
        }
    }

    /// The synth section of the file with flag overrides applied.
    pub fn synth_section(&self) -> KeyValues {
        let mut kv = self.file.section("synth");
        for (k, v) in self.flags.section("synth").iter() {
            kv.set(k, v);
        }
        kv
    }
}

/// Which endpoint estimators to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Endpoints {
    pub standard: bool,
    pub general: bool,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub input: PathBuf,
    pub outdir: PathBuf,
    pub selection: SelectionConfig,
    pub centroids: usize,
    pub methods: Vec<Method>,
    pub queries: Vec<QuantileQuery>,
    pub endpoints: Endpoints,
    pub n_b: usize,
    pub lambda_grid: Vec<f64>,
    pub kappa_grid: Vec<f64>,
    pub mu_grid: Vec<f64>,
    pub cv_resamples: usize,
    pub bootstrap: BootstrapConfig,
    pub rethreshold: bool,
    /// Resolved settings, written into every output header.
    pub stamp: Vec<(String, String)>,
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn resolve(cfg: &Layered) -> Result<Self> {
        let input = cfg
            .get("input")
            .map(PathBuf::from)
            .ok_or_else(|| Error::Config("--input is required".into()))?;
        let outdir = cfg
            .get("outdir")
            .map(PathBuf::from)
            .ok_or_else(|| Error::Config("--outdir is required".into()))?;
        let execution = if cfg.flag("sequential")? {
            Execution::Sequential
        } else {
            Execution::Parallel
        };
        let estimator = match cfg.get("threshold-estimator").unwrap_or("moment") {
            "moment" => EstimatorKind::Moment,
            "local_ml" | "local-ml" | "ml" => EstimatorKind::LocalMl,
            other => {
                return Err(Error::Config(format!(
                    "threshold-estimator must be moment or local_ml, got `{other}`"
                )))
            }
        };
        let defaults = SelectionConfig::default();
        let selection = SelectionConfig {
            half_width: cfg.parsed("h")?.unwrap_or(defaults.half_width),
            eta: cfg.parsed("eta")?.unwrap_or(defaults.eta),
            phi: cfg.parsed("phi")?.unwrap_or(defaults.phi),
            k_min: cfg.parsed("kmin")?.unwrap_or(defaults.k_min),
            k_max: cfg.parsed("kmax")?,
            estimator,
            keep_diagnostics: cfg.flag("diagnostics")?,
            execution,
        };
        selection.validate()?;
        let centroids: usize = cfg.parsed("centroids")?.unwrap_or(360);
        if centroids == 0 {
            return Err(Error::Config("centroids must be positive".into()));
        }

        let methods: Vec<Method> = cfg
            .list::<Method>("methods")?
            .unwrap_or_else(|| Method::ALL.to_vec());
        if methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        let mut queries = Vec::new();
        if let Some(ts) = cfg.list::<f64>("T")? {
            let span: f64 = cfg
                .parsed("T0")?
                .ok_or_else(|| Error::Config("--T needs --T0 (observation span in years)".into()))?;
            let events: f64 = cfg
                .parsed("NE")?
                .ok_or_else(|| Error::Config("--T needs --NE (number of events)".into()))?;
            for t in ts {
                queries.push(QuantileQuery::ReturnPeriod {
                    t_years: t,
                    span_years: span,
                    n_events: events,
                });
            }
        }
        for p in cfg.list::<f64>("p")?.unwrap_or_default() {
            queries.push(QuantileQuery::Probability(p));
        }
        for q in &queries {
            q.probability().map_err(|e| Error::Config(e.to_string()))?;
        }
        let mut endpoints = Endpoints { standard: false, general: false };
        for name in cfg.list::<String>("endpoints")?.unwrap_or_else(|| vec!["standard".into(), "general".into()]) {
            match name.as_str() {
                "standard" => endpoints.standard = true,
                "general" => endpoints.general = true,
                "none" => {}
                other => {
                    return Err(Error::Config(format!(
                        "endpoints must list standard and/or general (or none), got `{other}`"
                    )))
                }
            }
        }

        let n_b: usize = cfg.parsed("nb")?.unwrap_or(12);
        let grid = |key: &str| -> Result<Vec<f64>> {
            let g = cfg.list::<f64>(key)?.unwrap_or_else(|| DEFAULT_PENALTY_GRID.to_vec());
            if g.is_empty() || g.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::Config(format!("{key} must be a nonempty list of nonnegative values")));
            }
            Ok(g)
        };
        let lambda_grid = grid("lambda-grid")?;
        let kappa_grid = grid("kappa-grid")?;
        let mu_grid = grid("mu-grid")?;
        let cv_resamples: usize = cfg.parsed("cv-resamples")?.unwrap_or(25);

        let bootstrap = BootstrapConfig {
            n_replicates: cfg.parsed("replicates")?.unwrap_or(200),
            seed: cfg.parsed("seed")?.unwrap_or(0),
            band_level: cfg.parsed("band-level")?.unwrap_or(0.95),
            execution,
        };
        bootstrap.validate()?;
        let rethreshold = cfg.flag("rethreshold-per-replicate")?;

        let mut stamp = vec![
            ("version".to_string(), format!("circevt {}", env!("CARGO_PKG_VERSION"))),
            ("input".to_string(), input.display().to_string()),
            ("h".to_string(), selection.half_width.to_string()),
            ("eta".to_string(), selection.eta.to_string()),
            ("phi".to_string(), selection.phi.to_string()),
            ("kmin".to_string(), selection.k_min.to_string()),
            (
                "kmax".to_string(),
                selection.k_max.map_or("none".to_string(), |k| k.to_string()),
            ),
            ("threshold-estimator".to_string(), estimator.name().to_string()),
            ("centroids".to_string(), centroids.to_string()),
            (
                "methods".to_string(),
                methods.iter().map(|m| m.name()).collect::<Vec<_>>().join(","),
            ),
            (
                "queries".to_string(),
                queries.iter().map(QuantileQuery::tag).collect::<Vec<_>>().join(","),
            ),
            (
                "endpoints".to_string(),
                match (endpoints.standard, endpoints.general) {
                    (true, true) => "standard,general",
                    (true, false) => "standard",
                    (false, true) => "general",
                    (false, false) => "none",
                }
                .to_string(),
            ),
            ("nb".to_string(), n_b.to_string()),
            ("lambda-grid".to_string(), fmt_list(&lambda_grid)),
            ("kappa-grid".to_string(), fmt_list(&kappa_grid)),
            ("mu-grid".to_string(), fmt_list(&mu_grid)),
            ("cv-resamples".to_string(), cv_resamples.to_string()),
            ("replicates".to_string(), bootstrap.n_replicates.to_string()),
            ("seed".to_string(), bootstrap.seed.to_string()),
            ("band-level".to_string(), bootstrap.band_level.to_string()),
            ("rethreshold-per-replicate".to_string(), rethreshold.to_string()),
        ];
        if let Some(QuantileQuery::ReturnPeriod {
            span_years, n_events, ..
        }) = queries.iter().find(|q| matches!(q, QuantileQuery::ReturnPeriod { .. }))
        {
            stamp.push(("T0".to_string(), span_years.to_string()));
            stamp.push(("NE".to_string(), n_events.to_string()));
        }

        Ok(RunConfig {
            input,
            outdir,
            selection,
            centroids,
            methods,
            queries,
            endpoints,
            n_b,
            lambda_grid,
            kappa_grid,
            mu_grid,
            cv_resamples,
            bootstrap,
            rethreshold,
            stamp,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layered(file: &str, flags: &[(&str, &str)]) -> Result<Layered> {
        let mut kv = KeyValues::new();
        for (k, v) in flags {
            kv.set(k, *v);
        }
        Layered::new(KeyValues::parse(file)?, kv)
    }

    #[test]
    fn flags_override_sections_and_bare_keys() {
        let l = layered("[threshold]\nh = 20\neta = 4\n[io]\ninput = a.csv\noutdir = out\n", &[("eta", "7")]).unwrap();
        let rc = RunConfig::resolve(&l).unwrap();
        assert_eq!(rc.selection.half_width, 20.0);
        assert_eq!(rc.selection.eta, 7.0);
        assert_eq!(rc.input, PathBuf::from("a.csv"));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        assert!(matches!(layered("bogus = 1\n", &[]), Err(Error::Config(_))));
        let l = layered("input = a\noutdir = b\nh = wide\n", &[]).unwrap();
        assert!(matches!(RunConfig::resolve(&l), Err(Error::Config(_))));
        let l = layered("input = a\noutdir = b\nT = 100\n", &[]).unwrap();
        assert!(matches!(RunConfig::resolve(&l), Err(Error::Config(_))));
    }

    #[test]
    fn queries_collected_in_order() {
        let l = layered("input = a\noutdir = b\n", &[("T", "100,10"), ("T0", "55"), ("NE", "1521"), ("p", "0.001")]).unwrap();
        let rc = RunConfig::resolve(&l).unwrap();
        let tags: Vec<String> = rc.queries.iter().map(QuantileQuery::tag).collect();
        assert_eq!(tags, ["T100", "T10", "p0.001"]);
    }
}
