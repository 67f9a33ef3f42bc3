use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pkgvet::cache::AnalyzerKind;
use pkgvet::config::Settings;
use pkgvet::exec::ExecMode;
use pkgvet::heuristics::TriageLog;
use pkgvet::pipeline::Pipeline;
use pkgvet::registry::{FixtureSource, PackageCoordinate, PackageMetadata};
use std::collections::BTreeSet;
use std::hint::black_box;
use std::path::Path;

/// The seeded corpus repeated `copies` times under distinct names, with
/// dependencies rewired inside each copy.
fn corpus(copies: usize) -> Vec<PackageMetadata> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/seeded/packages");
    let base = FixtureSource::open(root).unwrap().load_all(None).unwrap();
    let mut out = Vec::with_capacity(base.len() * copies);
    for k in 0..copies {
        for m in &base {
            let mut m = m.clone();
            let c = &m.coordinate;
            m.coordinate = PackageCoordinate::new(c.registry, &format!("{}-c{k}", c.name), &c.version).unwrap();
            for d in &mut m.declared_deps {
                d.name = format!("{}-c{k}", d.name);
            }
            m.traces.clear();
            out.push(m);
        }
    }
    out
}

fn bench_pipeline(c: &mut Criterion) {
    let settings = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/seeded/pkgvet.toml");
    let inputs = Settings::load(&settings).unwrap().resolve().unwrap();
    let analyzers: BTreeSet<AnalyzerKind> = [AnalyzerKind::Metadata, AnalyzerKind::Static].into_iter().collect();
    let mut group = c.benchmark_group("analyze_and_flag");
    group.sample_size(10);
    for copies in [1usize, 8] {
        let metas = corpus(copies);
        for (label, mode) in [("parallel", ExecMode::Parallel), ("sequential", ExecMode::Sequential)] {
            group.bench_with_input(BenchmarkId::new(label, metas.len()), &metas, |b, metas| {
                let pipeline = Pipeline::new(inputs.clone(), None).with_exec(mode, 0);
                b.iter(|| {
                    let analysis = pipeline.analyze(metas.clone(), &analyzers).unwrap();
                    black_box(pipeline.flag(&analysis, &TriageLog::in_memory()))
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_pipeline);
criterion_main!(benches);
