//! Sequential vs data-parallel throughput of the hot loops: the index scan,
//! per-video tracking and per-sample scoring. Build with
//! `--no-default-features` to measure the sequential fallback of `par::map`.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use foresearch_core::eval::score_sample;
use foresearch_core::par;
use foresearch_core::synth::{scenario, ScenarioConfig};
use foresearch_core::tracklet::{associate, TrackerConfig};
use foresearch_core::vecindex::VecIndex;
use foresearch_core::{Clip, ClipMode, Detection, EmbeddingRecord, Prediction, TimeInterval};
use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;

fn random_index(n: usize, dim: usize, rng: &mut Pcg64) -> VecIndex {
    let mut ix = VecIndex::new(dim);
    for i in 0..n {
        let id = format!("v/t{i:06}/c00");
        let vector: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let clip = Clip {
            clip_id: id.clone(),
            camera_id: "cam".into(),
            video_id: format!("v{}", i % 50),
            span: TimeInterval::of(0.0, 1.0),
            boxes: Vec::new(),
            mode: ClipMode::FullFrame,
            frame_count: 1,
            frames: vec![0],
        };
        ix.insert(
            EmbeddingRecord {
                clip_id: id,
                vector,
                norm: 1.0,
            },
            clip,
        )
        .unwrap();
    }
    ix
}

fn search(c: &mut Criterion) {
    let mut rng = Pcg64::seed_from_u64(1);
    let mut g = c.benchmark_group("search_top10");
    g.sample_size(20);
    for (n, dim) in [(20_000, 512), (100_000, 512)] {
        let ix = random_index(n, dim, &mut rng);
        let q: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let label = format!("{n}x{dim}");
        g.bench_with_input(BenchmarkId::new("seq", &label), &q, |b, q| b.iter(|| ix.search_seq(black_box(q), 10, None).unwrap()));
        #[cfg(feature = "parallel")]
        g.bench_with_input(BenchmarkId::new("par", &label), &q, |b, q| b.iter(|| ix.search_par(black_box(q), 10, None).unwrap()));
    }
    g.finish();
}

fn tracking(c: &mut Criterion) {
    let sc = scenario(&ScenarioConfig::default());
    let per_video: Vec<Vec<Detection>> = sc.world.videos().map(|v| v.detections()).collect();
    let cfg = TrackerConfig::default();
    let mut g = c.benchmark_group("track_50_videos");
    g.sample_size(20);
    g.bench_function("seq", |b| b.iter(|| par::map_seq(&per_video, |d| associate(d, &cfg).unwrap().len())));
    g.bench_function("par", |b| b.iter(|| par::map(&per_video, |d| associate(d, &cfg).unwrap().len())));
    g.finish();
}

fn scoring(c: &mut Criterion) {
    let sc = scenario(&ScenarioConfig {
        videos: 200,
        ..Default::default()
    });
    let mut rng = Pcg64::seed_from_u64(2);
    let preds: Vec<Prediction> = sc
        .samples
        .iter()
        .map(|s| {
            let shift = rng.random_range(-5.0..5.0);
            Prediction {
                sample_id: s.sample_id.clone(),
                chosen_index: Some(rng.random_range(0..s.options.len())),
                predicted_intervals: s
                    .ground_truth
                    .intervals()
                    .iter()
                    .map(|i| TimeInterval::of((i.start() + shift).max(0.0), i.end() + shift))
                    .collect(),
                raw_response: String::new(),
            }
        })
        .collect();
    let pairs: Vec<(usize, usize)> = (0..50).flat_map(|_| (0..preds.len()).map(|i| (i, i))).collect();
    let score = |&(s, p): &(usize, usize)| score_sample(&sc.samples[s], &preds[p]).unwrap().1;
    let mut g = c.benchmark_group("score_10k_samples");
    g.bench_function("seq", |b| b.iter(|| par::map_seq(&pairs, score).iter().sum::<f64>()));
    g.bench_function("par", |b| b.iter(|| par::map(&pairs, score).iter().sum::<f64>()));
    g.finish();
}

criterion_group!(benches, search, tracking, scoring);
criterion_main!(benches);
