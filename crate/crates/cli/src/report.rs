//! Output tables. Every file starts with `#` lines carrying units and the
//! resolved settings, so a table on its own says how it was produced.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use circevt::bootstrap::SlotSummary;
use circevt::pipeline::{Quantity, Slot};
use circevt::threshold::ThresholdCurve;

pub const UNITS: &str = "units: theta and angle in degrees; values, thresholds, levels, scales and endpoints in metres; xi dimensionless";

pub fn num(v: f64) -> String {
    format!("{v:.6}")
}

pub fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), num)
}

/// `#` header: title, units, then one `key = value` line per setting.
pub fn header(title: &str, stamp: &[(String, String)]) -> String {
    let mut s = format!("# {title}\n# {UNITS}\n");
    for (k, v) in stamp {
        let _ = writeln!(s, "# {k} = {v}");
    }
    s
}

pub fn write(path: &Path, text: &str) -> std::io::Result<PathBuf> {
    fs::write(path, text)?;
    Ok(path.to_path_buf())
}

pub fn thresholds_table(curve: &ThresholdCurve, stamp: &[(String, String)]) -> String {
    let mut s = header("per-centroid threshold selection", stamp);
    s.push_str("theta,u,k_star,N,s_phi\n");
    for (j, e) in curve.entries.iter().enumerate() {
        let theta = num(curve.grid.get(j).degrees());
        match e {
            Ok(c) => {
                let _ = writeln!(s, "{theta},{},{},{},{}", num(c.threshold_u), c.k_star, c.tally_n, num(c.s_phi_at_min));
            }
            Err(_) => {
                let _ = writeln!(s, "{theta},NA,NA,NA,NA");
            }
        }
    }
    s
}

pub fn failures_table(curve: &ThresholdCurve, stamp: &[(String, String)]) -> String {
    let mut s = header("centroids where threshold selection failed", stamp);
    s.push_str("theta,reason\n");
    for (j, e) in curve.failures() {
        let reason = e.to_string().replace(',', ";");
        let _ = writeln!(s, "{},{reason}", num(curve.grid.get(j).degrees()));
    }
    s
}

/// Long format: one row per (centroid, k) with the shape estimate and score.
pub fn diagnostics_table(curve: &ThresholdCurve, stamp: &[(String, String)]) -> Option<String> {
    let diags = curve.diagnostics.as_ref()?;
    let mut s = header("threshold selection paths", stamp);
    s.push_str("theta,k,xi,s_phi\n");
    for (j, d) in diags.iter().enumerate() {
        let theta = num(curve.grid.get(j).degrees());
        for (i, (xi, score)) in d.xi_path.iter().zip(&d.scores).enumerate() {
            let _ = writeln!(s, "{theta},{},{},{}", i + 1, opt(*xi), opt(*score));
        }
    }
    Some(s)
}

/// Per-centroid bootstrap summary of one slot.
pub fn levels_table(
    title: &str,
    angles: &[f64],
    estimate: &[Option<f64>],
    summary: &[SlotSummary],
    stamp: &[(String, String)],
) -> String {
    let mut s = header(title, stamp);
    s.push_str("theta,estimate,mean,lower,upper,excluded_fraction\n");
    for ((a, e), m) in angles.iter().zip(estimate).zip(summary) {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            num(*a),
            opt(*e),
            opt(m.mean),
            opt(m.lower),
            opt(m.upper),
            num(m.excluded_fraction)
        );
    }
    s
}

/// Rose-plot data for one slot.
pub fn rose_table(title: &str, angles: &[f64], summary: &[SlotSummary], stamp: &[(String, String)]) -> String {
    let mut s = header(title, stamp);
    s.push_str("angle,mean,lower,upper\n");
    for (a, m) in angles.iter().zip(summary) {
        let _ = writeln!(s, "{},{},{},{}", num(*a), opt(m.mean), opt(m.lower), opt(m.upper));
    }
    s
}

/// Excluded fractions of several slots side by side.
pub fn excluded_table(angles: &[f64], columns: &[(String, &[SlotSummary])], stamp: &[(String, String)]) -> String {
    let mut s = header("fraction of bootstrap replicates excluded", stamp);
    s.push_str("angle");
    for (name, _) in columns {
        let _ = write!(s, ",{name}");
    }
    s.push('\n');
    for (j, a) in angles.iter().enumerate() {
        s.push_str(&num(*a));
        for (_, col) in columns {
            let _ = write!(s, ",{}", num(col[j].excluded_fraction));
        }
        s.push('\n');
    }
    s
}

/// Rose file stem grouping slots by the quantity shown.
pub fn rose_stem(slot: &Slot, label: &str) -> String {
    let kind = match slot.quantity {
        Quantity::Xi => "xi",
        Quantity::Scale => "scale",
        Quantity::Level(_) => "level",
        Quantity::StandardEndpoint | Quantity::GeneralEndpoint => "endpoint",
    };
    format!("rose_{kind}_{label}")
}
