use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use fabric_core::logstore::LogOptions;
use fabric_core::netsim::{LinkSpec, Network, NodeSpec};
use fabric_core::pipeline::stats::all_tests;
use fabric_core::scenario::{self, ScenarioConfig};
use fabric_core::transport::frame::Frame;
use fabric_core::fabric::Fabric;
use fabric_core::{LogStore, MessageId, NodeId, SimTime};

fn id(i: u64) -> MessageId {
    MessageId::derive(&[&i.to_le_bytes()])
}

fn logstore(c: &mut Criterion) {
    let mut g = c.benchmark_group("logstore");
    g.throughput(Throughput::Elements(1));
    g.bench_function("append 1 KiB in memory", |b| {
        let store = LogStore::in_memory();
        let log = store.create_log("l", 1024, 4096).unwrap();
        let payload = vec![7u8; 1024];
        let mut i = 0u64;
        b.iter(|| {
            i += 1;
            log.append(black_box(&payload), id(i), SimTime(i)).unwrap()
        })
    });
    g.bench_function("append 1 KiB to file, no fsync", |b| {
        let dir = tempfile::tempdir().unwrap();
        let store = LogStore::in_dir(dir.path(), LogOptions { sync: false, ..LogOptions::default() }).unwrap();
        let log = store.create_log("l", 1024, 4096).unwrap();
        let payload = vec![7u8; 1024];
        let mut i = 0u64;
        b.iter(|| {
            i += 1;
            log.append(black_box(&payload), id(i), SimTime(i)).unwrap()
        })
    });
    g.bench_function("duplicate append", |b| {
        let store = LogStore::in_memory();
        let log = store.create_log("l", 64, 64).unwrap();
        log.append(b"x", id(0), SimTime(0)).unwrap();
        b.iter(|| log.append(black_box(b"x"), id(0), SimTime(1)).unwrap())
    });
    g.finish();
}

fn frames(c: &mut Criterion) {
    let f = Frame::AppendRequest { message_id: id(1), element_size: 1024, log_name: "telemetry".into(), payload: vec![1; 1024] };
    let bytes = f.encode();
    let mut g = c.benchmark_group("frame");
    g.throughput(Throughput::Bytes(bytes.len() as u64));
    g.bench_function("encode append request", |b| b.iter(|| black_box(&f).encode()));
    g.bench_function("decode append request", |b| b.iter(|| Frame::decode(black_box(&bytes)).unwrap()));
    g.finish();
}

fn detector(c: &mut Criterion) {
    let a = [2.1, 1.9, 2.4, 2.0, 1.7, 2.2];
    let b = [6.0, 5.8, 6.3, 5.9, 6.4, 6.1];
    c.bench_function("three tests on a 6/6 window pair", |bn| bn.iter(|| all_tests(black_box(&a), black_box(&b), 0.05)));
}

fn remote_appends(c: &mut Criterion) {
    c.bench_function("100 remote appends over a lossy link", |b| {
        b.iter_batched(
            || {
                let mut l = LinkSpec::new("a", "b", 20.0, 5.0);
                l.loss_prob = 0.2;
                let nodes = [NodeSpec { name: "a".into(), ue_efficiency: 1.0 }, NodeSpec { name: "b".into(), ue_efficiency: 1.0 }];
                let mut f = Fabric::new(Network::from_specs(&nodes, &[l], 1).unwrap(), Default::default());
                f.create_log(&NodeId::new("b"), "in", 64, 256).unwrap();
                f
            },
            |mut f| {
                for i in 0..100 {
                    f.remote_append(&"a".into(), &"b".into(), "in", vec![0; 32], id(i)).unwrap();
                }
                f.run_until_idle(SimTime::from_secs(3600))
            },
            BatchSize::SmallInput,
        )
    });
}

fn scenarios(c: &mut Criterion) {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/table1.toml");
    let cfg = ScenarioConfig::load(path.as_ref()).unwrap();
    let mut g = c.benchmark_group("scenario");
    g.sample_size(20);
    g.bench_function("table1", |b| b.iter(|| scenario::run(black_box(&cfg)).unwrap()));
    g.finish();
}

criterion_group!(benches, logstore, frames, detector, remote_appends, scenarios);
criterion_main!(benches);
