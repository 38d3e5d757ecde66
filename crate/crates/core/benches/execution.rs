use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use circevt::bootstrap::{self, BootstrapConfig};
use circevt::exec::Execution;
use circevt::pipeline::{Method, Pipeline, PipelineSpec};
use circevt::sample::CentroidGrid;
use circevt::synth::GeneratorSpec;
use circevt::threshold::{estimate_threshold_curve, SelectionConfig};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn threshold_curve(c: &mut Criterion) {
    let sample = GeneratorSpec::north_sea_like(3000, 0).generate().unwrap();
    let grid = CentroidGrid::default();
    let mut group = c.benchmark_group("threshold_curve");
    for (name, execution) in MODES {
        let cfg = SelectionConfig {
            execution,
            ..Default::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| {
            b.iter(|| estimate_threshold_curve(&sample, &grid, cfg).unwrap())
        });
    }
    group.finish();
}

fn bootstrap_moment(c: &mut Criterion) {
    let sample = GeneratorSpec::stationary(0.1, 1.0, 2000, 0).generate().unwrap();
    let mut group = c.benchmark_group("bootstrap_moment");
    group.sample_size(10);
    for (name, execution) in MODES {
        let mut spec = PipelineSpec {
            methods: vec![Method::Moment],
            grid: CentroidGrid::regular(72),
            ..Default::default()
        };
        spec.selection.execution = execution;
        let pipeline = Pipeline::new(spec, &sample).unwrap();
        let cfg = BootstrapConfig {
            n_replicates: 50,
            execution,
            ..Default::default()
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| bootstrap::run_pipeline(&sample, |s| pipeline.estimate(s), &cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, threshold_curve, bootstrap_moment);
criterion_main!(benches);
