use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use pseudolabel3d::mgb::vote_fine_masks;
use pseudolabel3d::refine::{granularity_aware_assign, merge_small_instances};
use pseudolabel3d::sgb::{accumulate_features, bfs_group, classify_points, compute_scores};
use pseudolabel3d::spatial::KdTree;
use pseudolabel3d::{run_pipeline, PipelineConfig};
use pseudolabel3d_bench::scene;

fn stages(c: &mut Criterion) {
    let s = scene(20, 10, 11);
    let cfg = PipelineConfig::default();
    let feats = accumulate_features(&s.cloud, &s.frames, &s.features, cfg.depth_tolerance, s.labels.channels()).unwrap();
    let scores = compute_scores(&feats, &s.labels, true).unwrap();
    let sem = classify_points(&scores);
    let coarse = bfs_group(&s.cloud, &sem, cfg.bfs_radius, cfg.min_cluster_size, &[]);
    let rasters = s.prompt_masks.as_ref().unwrap();
    let (fine, _) = vote_fine_masks(&s.cloud, &s.frames, rasters, cfg.depth_tolerance).unwrap();
    let ensemble = granularity_aware_assign(&coarse, &fine, cfg.overlap_threshold);

    let mut g = c.benchmark_group("stages_20k");
    g.bench_function("kdtree_build", |b| b.iter(|| KdTree::build_all(black_box(s.cloud.positions()))));
    g.bench_function("accumulate", |b| {
        b.iter(|| accumulate_features(&s.cloud, &s.frames, &s.features, cfg.depth_tolerance, s.labels.channels()))
    });
    g.bench_function("bfs_group", |b| b.iter(|| bfs_group(&s.cloud, &sem, cfg.bfs_radius, cfg.min_cluster_size, &[])));
    g.bench_function("vote", |b| b.iter(|| vote_fine_masks(&s.cloud, &s.frames, rasters, cfg.depth_tolerance)));
    g.bench_function("assign", |b| b.iter(|| granularity_aware_assign(&coarse, &fine, cfg.overlap_threshold)));
    g.bench_function("merge", |b| b.iter(|| merge_small_instances(&s.cloud, &ensemble, 1500, 1)));
    g.finish();
}

fn end_to_end(c: &mut Criterion) {
    let s = scene(100, 50, 3);
    let cfg = PipelineConfig::default();
    let mut g = c.benchmark_group("pipeline_100k_50_frames");
    g.sample_size(10);
    g.bench_function("run_pipeline", |b| b.iter(|| run_pipeline(black_box(&s), &cfg).unwrap()));
    g.finish();
}

criterion_group!(benches, stages, end_to_end);
criterion_main!(benches);
