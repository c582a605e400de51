use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rpcgc_core::codec::{decode_layers, encode_layers, EncodeParams};
use rpcgc_core::rd::{evaluate_config, RdConfig};
use rpcgc_core::{
    ac_decode, ac_encode, build_mask, decode_base, encode_base, quantize_from_min, room_scene, select_regions,
    LabelConfig, SceneParams, SpatialIndex,
};

fn entropy(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let syms: Vec<usize> = (0..100_000)
        .map(|_| if rng.gen_bool(0.9) { 0 } else { rng.gen_range(0..256) })
        .collect();
    let bytes = ac_encode(&syms, 256).unwrap();
    let mut g = c.benchmark_group("entropy");
    g.throughput(Throughput::Elements(syms.len() as u64));
    g.bench_function("encode_100k", |b| b.iter(|| ac_encode(black_box(&syms), 256).unwrap()));
    g.bench_function("decode_100k", |b| b.iter(|| ac_decode(black_box(&bytes), 256, syms.len()).unwrap()));
    g.finish();
}

fn octree(c: &mut Criterion) {
    let cloud = room_scene(&SceneParams {
        points: 50_000,
        ..Default::default()
    });
    let grid = quantize_from_min(&cloud, 0.05).unwrap().grid;
    let bytes = encode_base(&grid).unwrap();
    let mut g = c.benchmark_group("octree");
    g.throughput(Throughput::Elements(grid.len() as u64));
    g.bench_function("encode_base", |b| b.iter(|| encode_base(black_box(&grid)).unwrap()));
    g.bench_function("decode_base", |b| b.iter(|| decode_base(black_box(&bytes)).unwrap()));
    g.finish();
}

fn knn(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pts: Vec<[f64; 3]> = (0..50_000).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
    let queries: Vec<[f64; 3]> = (0..1000).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
    let index = SpatialIndex::build(&pts).unwrap();
    let mut g = c.benchmark_group("spatial");
    g.bench_function("build_50k", |b| b.iter(|| SpatialIndex::build(black_box(&pts)).unwrap()));
    g.throughput(Throughput::Elements(queries.len() as u64));
    g.bench_function("nearest_1k", |b| {
        b.iter(|| queries.iter().map(|q| index.nearest(q).index).sum::<usize>())
    });
    g.bench_function("knn12_1k", |b| {
        b.iter(|| queries.iter().map(|q| index.knn(q, 12).unwrap().len()).sum::<usize>())
    });
    g.finish();
}

fn pipeline(c: &mut Criterion) {
    let cloud = room_scene(&SceneParams::default());
    let bg = LabelConfig::synthetic().background_set();
    let mask = build_mask(&select_regions(cloud.labels().unwrap(), &bg), cloud.len()).unwrap();
    let params = EncodeParams {
        step: 0.3,
        res_step: 0.075,
    };
    let layers = encode_layers(&cloud, &mask, params).unwrap();
    let mut g = c.benchmark_group("pipeline_5k");
    g.sample_size(20);
    g.bench_function("encode", |b| b.iter(|| encode_layers(black_box(&cloud), &mask, params).unwrap()));
    g.bench_function("decode", |b| {
        b.iter(|| decode_layers(&layers.base, &layers.enhancement, layers.fg_weight).unwrap())
    });
    g.bench_function("evaluate_config", |b| {
        b.iter_batched(
            || RdConfig::with_steps(0.3, 0.075),
            |cfg| evaluate_config(&cloud, &bg, &cfg).unwrap(),
            BatchSize::SmallInput,
        )
    });
    g.finish();
}

criterion_group!(benches, entropy, octree, knn, pipeline);
criterion_main!(benches);
