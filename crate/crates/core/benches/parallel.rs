//! Sequential (one-thread pool) against parallel (default pool) timings of
//! the data-parallel stages. Outputs are identical either way; only the
//! wall-clock time differs.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hybridcp::bayes::{fit_bayes, BayesRow};
use hybridcp::conformal::{calibrate, CalibrationMode, CalibrationStrategy};
use hybridcp::data::{generate_synthetic, SyntheticConfig};
use hybridcp::forest::{fit_forest, ForestConfig};
use hybridcp::BayesModelSpec;

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    vec![
        ("sequential", rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        ("parallel", rayon::ThreadPoolBuilder::new().build().unwrap()),
    ]
}

fn bench(c: &mut Criterion) {
    let data = generate_synthetic(&SyntheticConfig { n_patients: 2000, n_hospitals: 30, seed: 5, ..Default::default() }).unwrap();
    let x = data.feature_matrix().unwrap();
    let y = data.outcomes();
    let forest = ForestConfig::new(50, 12);
    let rows: Vec<BayesRow> = data
        .records()
        .iter()
        .map(|r| BayesRow { fhat: r.features[0].unwrap_or(0.0), hospital_id: r.hospital_id.clone(), region_id: r.region_id.clone(), y: r.outcome })
        .collect();
    let spec = BayesModelSpec { chains: 4, warmup: 200, draws: 100, ..Default::default() };
    let scores: Vec<f64> = y.iter().map(|v| (v - 20.0).abs()).collect();
    let clusters: Vec<&str> = data.records().iter().map(|r| r.hospital_id.as_str()).collect();
    let strategy = CalibrationStrategy::RepeatedSubsample { b: 500 };

    let mut group = c.benchmark_group("stages");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::new("forest_fit", name), |b| b.iter(|| pool.install(|| fit_forest(&x, &y, &forest).unwrap())));
        group.bench_function(BenchmarkId::new("bayes_chains", name), |b| b.iter(|| pool.install(|| fit_bayes(&rows, &spec).unwrap())));
        group.bench_function(BenchmarkId::new("repeated_subsample", name), |b| {
            b.iter(|| pool.install(|| calibrate(&scores, &clusters, strategy, 0.05, CalibrationMode::Unweighted, 1).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
