mod report;
mod settings;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use circevt::bootstrap;
use circevt::config::KeyValues;
use circevt::pipeline::{select_smoothing, Method, Pipeline, PipelineSpec, Quantity, SplineSettings};
use circevt::sample::{load_sample, CentroidGrid, DirectionalSample, SampleFormat};
use circevt::spline::CrossValidationConfig;
use circevt::synth::GeneratorSpec;
use circevt::threshold::{estimate_threshold_curve, ThresholdCurve};
use circevt::Error;

use settings::{Layered, RunConfig};

#[derive(Parser)]
#[command(name = "circevt", version, about = "Directional peaks-over-threshold estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic directional sample.
    Synth(SynthArgs),
    /// Select a threshold at every centroid.
    Threshold(RunArgs),
    /// Thresholds, tail fits, levels, endpoints and bootstrap bands.
    Estimate(RunArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// stationary, two-regime, varying-shape or north-sea-like
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Destination file; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Key-value config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<String>,
    #[arg(long)]
    outdir: Option<String>,
    /// Neighborhood half-width in degrees.
    #[arg(long)]
    h: Option<String>,
    /// von Mises concentration.
    #[arg(long)]
    eta: Option<String>,
    #[arg(long)]
    phi: Option<String>,
    #[arg(long)]
    kmin: Option<String>,
    #[arg(long)]
    kmax: Option<String>,
    /// moment or local_ml
    #[arg(long)]
    threshold_estimator: Option<String>,
    /// Number of equally spaced centroids.
    #[arg(long)]
    centroids: Option<String>,
    /// Also write the full selection paths.
    #[arg(long)]
    diagnostics: bool,
    /// Comma list of moment, local_ml, spline_ml.
    #[arg(long)]
    methods: Option<String>,
    /// Return periods in years.
    #[arg(long = "T")]
    t: Option<String>,
    /// Observation span in years.
    #[arg(long = "T0")]
    t0: Option<String>,
    /// Number of events in the span.
    #[arg(long = "NE")]
    ne: Option<String>,
    /// Exceedance probabilities.
    #[arg(long)]
    p: Option<String>,
    /// standard, general, both comma separated, or none.
    #[arg(long)]
    endpoints: Option<String>,
    #[arg(long)]
    nb: Option<String>,
    #[arg(long)]
    lambda_grid: Option<String>,
    #[arg(long)]
    kappa_grid: Option<String>,
    #[arg(long)]
    mu_grid: Option<String>,
    #[arg(long)]
    cv_resamples: Option<String>,
    #[arg(long)]
    replicates: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    band_level: Option<String>,
    #[arg(long)]
    rethreshold_per_replicate: bool,
    /// Run everything on one thread.
    #[arg(long)]
    sequential: bool,
}

impl RunArgs {
    fn flags(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        let values = [
            ("input", &self.input),
            ("outdir", &self.outdir),
            ("h", &self.h),
            ("eta", &self.eta),
            ("phi", &self.phi),
            ("kmin", &self.kmin),
            ("kmax", &self.kmax),
            ("threshold-estimator", &self.threshold_estimator),
            ("centroids", &self.centroids),
            ("methods", &self.methods),
            ("T", &self.t),
            ("T0", &self.t0),
            ("NE", &self.ne),
            ("p", &self.p),
            ("endpoints", &self.endpoints),
            ("nb", &self.nb),
            ("lambda-grid", &self.lambda_grid),
            ("kappa-grid", &self.kappa_grid),
            ("mu-grid", &self.mu_grid),
            ("cv-resamples", &self.cv_resamples),
            ("replicates", &self.replicates),
            ("seed", &self.seed),
            ("band-level", &self.band_level),
        ];
        for (k, v) in values {
            if let Some(v) = v {
                kv.set(k, v.as_str());
            }
        }
        for (k, on) in [
            ("diagnostics", self.diagnostics),
            ("rethreshold-per-replicate", self.rethreshold_per_replicate),
            ("sequential", self.sequential),
        ] {
            if on {
                kv.set(k, "true");
            }
        }
        kv
    }
}

/// A failed run: exit code and message.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

const USAGE: u8 = 1;
const DATA: u8 = 2;
const TOTAL: u8 = 3;

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }

    fn config(e: Error) -> Self {
        Failure::new(USAGE, e.to_string())
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Failure::new(DATA, format!("{}: {e}", path.display()))
    }
}

type Outcome = std::result::Result<(), Failure>;

fn load_layered(config: Option<&Path>, flags: KeyValues) -> std::result::Result<Layered, Failure> {
    let file = match config {
        Some(p) => KeyValues::load(p).map_err(Failure::config)?,
        None => KeyValues::new(),
    };
    Layered::new(file, flags).map_err(Failure::config)
}

fn cmd_synth(args: &SynthArgs) -> Outcome {
    let mut flags = KeyValues::new();
    for (k, v) in [("preset", &args.preset), ("n", &args.n), ("seed", &args.seed)] {
        if let Some(v) = v {
            flags.set(&format!("synth.{k}"), v.as_str());
        }
    }
    let layered = load_layered(args.config.as_deref(), flags)?;
    let kv = layered.synth_section();
    let spec = GeneratorSpec::from_config(&kv).map_err(Failure::config)?;
    let sample = spec.generate().map_err(|e| Failure::new(TOTAL, e.to_string()))?;
    let mut text = format!(
        "# circevt {} synthetic sample\n# units: direction in degrees; value in metres\n",
        env!("CARGO_PKG_VERSION")
    );
    for (k, v) in kv.iter() {
        text.push_str(&format!("# {k} = {v}\n"));
    }
    text.push_str(&sample.to_delimited(','));
    match &args.output {
        Some(path) => fs::write(path, text).map_err(|e| Failure::io(path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

struct Prepared {
    rc: RunConfig,
    sample: DirectionalSample,
    grid: CentroidGrid,
    curve: ThresholdCurve,
    files: Vec<PathBuf>,
}

fn out_path(rc: &RunConfig, name: &str) -> PathBuf {
    rc.outdir.join(name)
}

fn emit(files: &mut Vec<PathBuf>, path: PathBuf, text: &str) -> Outcome {
    report::write(&path, text).map_err(|e| Failure::io(&path, e))?;
    files.push(path);
    Ok(())
}

/// Load, select thresholds and write the threshold tables.
fn prepare(args: &RunArgs) -> std::result::Result<Prepared, Failure> {
    let layered = load_layered(args.config.as_deref(), args.flags())?;
    let rc = RunConfig::resolve(&layered).map_err(Failure::config)?;
    let sample = load_sample(&rc.input, &SampleFormat::default()).map_err(|e| match e {
        Error::Io { .. } => Failure::new(DATA, e.to_string()),
        other => Failure::new(DATA, format!("{}: {other}", rc.input.display())),
    })?;
    fs::create_dir_all(&rc.outdir).map_err(|e| Failure::io(&rc.outdir, e))?;
    let grid = CentroidGrid::regular(rc.centroids);
    let curve = estimate_threshold_curve(&sample, &grid, &rc.selection).map_err(|e| match e {
        Error::Config(_) => Failure::config(e),
        other => Failure::new(TOTAL, other.to_string()),
    })?;
    let mut files = Vec::new();
    emit(&mut files, out_path(&rc, "thresholds.csv"), &report::thresholds_table(&curve, &rc.stamp))?;
    emit(
        &mut files,
        out_path(&rc, "threshold_failures.csv"),
        &report::failures_table(&curve, &rc.stamp),
    )?;
    if let Some(text) = report::diagnostics_table(&curve, &rc.stamp) {
        emit(&mut files, out_path(&rc, "threshold_diagnostics.csv"), &text)?;
    }
    let failed = curve.failures().len();
    if failed > 0 {
        eprintln!("threshold selection failed at {failed} of {} centroids", grid.len());
    }
    if curve.all_failed() {
        return Err(Failure::new(TOTAL, "threshold selection failed at every centroid"));
    }
    Ok(Prepared {
        rc,
        sample,
        grid,
        curve,
        files,
    })
}

fn manifest(rc: &RunConfig, extra: &[(String, String)], files: &[PathBuf]) -> String {
    let mut s = String::from("# circevt run manifest\n");
    for (k, v) in rc.stamp.iter().chain(extra) {
        s.push_str(&format!("{k} = {v}\n"));
    }
    for f in files {
        let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        s.push_str(&format!("file = {name}\n"));
    }
    s
}

fn cmd_threshold(args: &RunArgs) -> Outcome {
    let Prepared { rc, curve, mut files, .. } = prepare(args)?;
    let extra = vec![("failed_centroids".to_string(), curve.failures().len().to_string())];
    let path = out_path(&rc, "manifest.txt");
    files.push(path.clone());
    let text = manifest(&rc, &extra, &files);
    report::write(&path, &text).map_err(|e| Failure::io(&path, e))?;
    Ok(())
}

fn cmd_estimate(args: &RunArgs) -> Outcome {
    let Prepared {
        rc,
        sample,
        grid,
        curve,
        mut files,
    } = prepare(args)?;
    if rc.queries.is_empty() {
        return Err(Failure::new(USAGE, "estimate needs at least one query (--T with --T0 and --NE, or --p)"));
    }
    let mut stamp = rc.stamp.clone();
    let mut extra = vec![("failed_centroids".to_string(), curve.failures().len().to_string())];
    let mut methods = rc.methods.clone();
    let mut spline = SplineSettings {
        n_b: rc.n_b,
        ..Default::default()
    };
    if methods.contains(&Method::SplineMl) {
        let cv = CrossValidationConfig {
            lambda_grid: rc.lambda_grid.clone(),
            kappa_grid: rc.kappa_grid.clone(),
            n_resamples: rc.cv_resamples,
            seed: rc.bootstrap.seed,
            execution: rc.selection.execution,
        };
        match select_smoothing(&sample, &grid, &curve, rc.n_b, &cv, &rc.mu_grid) {
            Ok(choice) => {
                spline.lambda = choice.lambda;
                spline.kappa = choice.kappa;
                spline.mu = choice.mu;
                for (k, v) in [("lambda", choice.lambda), ("kappa", choice.kappa), ("mu", choice.mu)] {
                    stamp.push((format!("selected-{k}"), v.to_string()));
                }
                let mut mspe = report::header("cross-validated spline penalties", &rc.stamp);
                mspe.push_str("lambda,kappa,mean_mspe,valid_resamples,excluded_points\n");
                for c in &choice.cross_validation.table {
                    mspe.push_str(&format!(
                        "{},{},{},{},{}\n",
                        c.lambda,
                        c.kappa,
                        report::opt(c.mean_mspe),
                        c.valid_resamples,
                        c.excluded_points
                    ));
                }
                emit(&mut files, out_path(&rc, "mspe.csv"), &mspe)?;
                let mut mu = report::header("cross-validated exceedance-probability penalty", &rc.stamp);
                mu.push_str("mu,brier_score\n");
                for (m, score) in &choice.mu_scores {
                    mu.push_str(&format!("{m},{}\n", report::opt(*score)));
                }
                emit(&mut files, out_path(&rc, "mu_scores.csv"), &mu)?;
            }
            Err(e) => {
                eprintln!("spline_ml dropped: penalty selection failed: {e}");
                extra.push(("dropped-method".to_string(), format!("spline_ml ({e})")));
                methods.retain(|m| *m != Method::SplineMl);
                if methods.is_empty() {
                    return Err(Failure::new(TOTAL, format!("penalty selection failed: {e}")));
                }
            }
        }
    }

    let spec = PipelineSpec {
        selection: rc.selection.clone(),
        grid: grid.clone(),
        methods,
        queries: rc.queries.clone(),
        endpoints: rc.endpoints.standard || rc.endpoints.general,
        spline,
        rethreshold: rc.rethreshold,
    };
    let pipeline = Pipeline::with_curve(spec, curve, &sample).map_err(|e| match e {
        Error::Config(_) => Failure::config(e),
        other => Failure::new(TOTAL, other.to_string()),
    })?;
    let point = pipeline
        .estimate(&sample)
        .map_err(|e| Failure::new(TOTAL, e.to_string()))?;
    let summary = bootstrap::run_pipeline(&sample, |s| pipeline.estimate(s), &rc.bootstrap)
        .map_err(|e| Failure::new(TOTAL, e.to_string()))?;
    if summary.failed_replicates == summary.n_replicates {
        return Err(Failure::new(TOTAL, "every bootstrap replicate failed"));
    }
    extra.push(("failed_replicates".to_string(), summary.failed_replicates.to_string()));

    let m = pipeline.centroid_count();
    let angles: Vec<f64> = grid.centroids().iter().map(|d| d.degrees()).collect();
    let mut excluded: Vec<(String, &[bootstrap::SlotSummary])> = Vec::new();
    for (s, slot) in pipeline.slots().iter().enumerate() {
        let keep = match slot.quantity {
            Quantity::StandardEndpoint => rc.endpoints.standard,
            Quantity::GeneralEndpoint => rc.endpoints.general,
            _ => true,
        };
        if !keep {
            continue;
        }
        let label = slot.label(&rc.queries);
        let cells = &summary.slots[s * m..(s + 1) * m];
        let title = format!("bootstrap summary of {label}");
        emit(
            &mut files,
            out_path(&rc, &format!("levels_{label}.csv")),
            &report::levels_table(&title, &angles, &point[s * m..(s + 1) * m], cells, &stamp),
        )?;
        emit(
            &mut files,
            out_path(&rc, &format!("{}.csv", report::rose_stem(slot, &label))),
            &report::rose_table(&title, &angles, cells, &stamp),
        )?;
        excluded.push((label, cells));
    }
    emit(
        &mut files,
        out_path(&rc, "rose_excluded_fraction.csv"),
        &report::excluded_table(&angles, &excluded, &stamp),
    )?;

    let path = out_path(&rc, "manifest.txt");
    files.push(path.clone());
    extra.extend(stamp.into_iter().skip(rc.stamp.len()));
    let text = manifest(&rc, &extra, &files);
    report::write(&path, &text).map_err(|e| Failure::io(&path, e))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Threshold(a) => cmd_threshold(a),
        Command::Estimate(a) => cmd_estimate(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("circevt: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
