//! Criterion benchmarks for the hot paths: similarity, classification and
//! archive ingestion.

use std::hint::black_box;

use backupdiff_core::classify::{classify_run, RunInput};
use backupdiff_core::ingest::{ingest, ingest_tar_bytes, IngestContext, SourceFormat, SourceSpec};
use backupdiff_core::simdiff::similarity_ratio;
use backupdiff_core::{Platform, SnapshotLabel};
use backupdiff_fixturegen::{
    gen_base_snapshot, gen_run, random_plan, tree_to_tar, wrap_android_backup, FIXTURE_PREFIX,
};
use criterion::{BenchmarkId, Criterion, Throughput};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bytes(rng: &mut ChaCha8Rng, len: usize) -> Vec<u8> {
    (0..len).map(|_| rng.random()).collect()
}

pub fn similarity(c: &mut Criterion) {
    let mut group = c.benchmark_group("similarity_ratio");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for len in [256usize, 4096, 1 << 20] {
        let a = bytes(&mut rng, len);
        let b = bytes(&mut rng, len);
        group.throughput(Throughput::Bytes(2 * len as u64));
        group.bench_with_input(BenchmarkId::from_parameter(len), &(a, b), |bench, (a, b)| {
            bench.iter(|| similarity_ratio(black_box(a), black_box(b)))
        });
    }
    group.finish();
}

pub fn classification(c: &mut Criterion) {
    let mut group = c.benchmark_group("classify_run");
    for n in [200usize, 2000] {
        let run = gen_run(&random_plan(7, n)).expect("valid plan");
        let (pre, backup, post) = run.snapshots(1);
        let input = RunInput {
            run_id: 1,
            pre,
            backup,
            post,
            scope_filter: None,
        };
        group.throughput(Throughput::Elements(input.pre.len() as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &input, |bench, input| {
            bench.iter(|| classify_run(black_box(input)))
        });
    }
    group.finish();
}

pub fn archive_ingest(c: &mut Criterion) {
    let tree = gen_base_snapshot(3, 500);
    let tar = tree_to_tar(&tree, "");
    let ab = wrap_android_backup(&tar);
    let dir = tempfile::tempdir().expect("bench scratch dir");
    let ab_path = dir.path().join("backup.ab");
    std::fs::write(&ab_path, &ab).expect("write benchmark archive");

    let mut group = c.benchmark_group("ingest");
    group.throughput(Throughput::Bytes(tar.len() as u64));
    let ctx = IngestContext::new(SnapshotLabel::Backup, Platform::Android, 1);
    group.bench_function("tar", |bench| {
        bench.iter(|| ingest_tar_bytes(black_box(&tar), FIXTURE_PREFIX, &ctx).expect("tar ingests"))
    });
    let spec = SourceSpec::new(SourceFormat::AndroidAb, &ab_path);
    group.bench_function("android_ab", |bench| {
        bench.iter(|| ingest(black_box(&spec), &ctx).expect("ab ingests"))
    });
    group.finish();
}
