use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use graphseq::ho::compute_hops;
use graphseq::nd::NdConfig;
use graphseq::pipeline::{encode_nodes, Template};
use graphseq::synth::{random_features, sparse_random_graph};
use graphseq::Executor;

const NODES: usize = 20_000;

fn executors() -> [(&'static str, Executor); 2] {
    [("sequential", Executor::sequential()), ("parallel", Executor::new(0))]
}

fn nd_encode(c: &mut Criterion) {
    let g = sparse_random_graph(NODES, 10.0, 1)
        .unwrap()
        .with_features(random_features(NODES, 16, 1).unwrap())
        .unwrap();
    let feats = g.features().unwrap();
    let template = Template::nd(NdConfig::new(vec![10, 10], 1).unwrap(), Some(16)).unwrap();
    let batch: Vec<usize> = (0..2048).collect();
    let mut group = c.benchmark_group("nd_encode_2048");
    group.throughput(Throughput::Elements(batch.len() as u64));
    for (name, exec) in executors() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| encode_nodes(&template, &g, feats, &batch, &exec).unwrap())
        });
    }
    group.finish();
}

fn ho_hops(c: &mut Criterion) {
    let g = sparse_random_graph(NODES, 10.0, 2)
        .unwrap()
        .with_features(random_features(NODES, 64, 2).unwrap())
        .unwrap();
    let feats = g.features().unwrap();
    let mut group = c.benchmark_group("ho_hops_k4");
    group.throughput(Throughput::Elements(NODES as u64));
    for (name, exec) in executors() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| compute_hops(&g, feats, 4, &exec).unwrap())
        });
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = nd_encode, ho_hops
}
criterion_main!(benches);
