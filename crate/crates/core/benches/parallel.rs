//! Sequential vs rayon execution of the hot loops.
//!
//! With one core available the two should be close; on more cores the
//! parallel variants scale with the number of columns, chunks or examples.

use breathvad::dataset::{chunk, class_weights, ChunkMode};
use breathvad::flow::build_flow_matrix_with;
use breathvad::models::{build_model, predict_sequence, train, Arch, ModelSpec, TrainConfig};
use breathvad::rp::extract_rp_with;
use breathvad::synth::{synth_rp_dataset, synth_video, SynthRpParams, SynthVideoParams};
use breathvad::Exec;
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn extraction(c: &mut Criterion) {
    let (seq, _) = synth_video(&SynthVideoParams {
        width: 48,
        height: 48,
        frames: 300,
        ..SynthVideoParams::default()
    })
    .unwrap();
    let f = build_flow_matrix_with(&seq, 1e-8, Exec::Sequential).unwrap();
    let mut g = c.benchmark_group("extraction");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new("flow_matrix", name), |b| {
            b.iter(|| build_flow_matrix_with(black_box(&seq), 1e-8, exec).unwrap())
        });
        g.bench_function(BenchmarkId::new("power_iteration", name), |b| {
            b.iter(|| extract_rp_with(black_box(&f), 30.0, 1e-10, 10_000, 7, exec).unwrap())
        });
    }
    g.finish();
}

fn networks(c: &mut Criterion) {
    let data = synth_rp_dataset(&SynthRpParams {
        speakers: 4,
        duration_s: 30.0,
        ..SynthRpParams::default()
    })
    .unwrap();
    let mode = ChunkMode::Overlap;
    let chunks: Vec<_> = data
        .iter()
        .flat_map(|s| chunk(s, 100, mode).unwrap().chunks)
        .collect();
    let (w_pos, w_neg) = class_weights(data.iter().flat_map(|s| s.labels.iter())).unwrap();
    let spec = ModelSpec::new(Arch::ConvLstm, 100).with_width_divisor(8);
    let model = build_model(spec, 1).unwrap();
    let mut g = c.benchmark_group("networks");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new("predict_sequence", name), |b| {
            b.iter(|| predict_sequence(&model, black_box(&data[0].rp), mode, exec).unwrap())
        });
        let cfg = TrainConfig {
            epochs: 1,
            w_pos,
            w_neg,
            mode,
            max_chunks_per_epoch: Some(64),
            exec,
            ..TrainConfig::default()
        };
        g.bench_function(BenchmarkId::new("train_64_chunks", name), |b| {
            b.iter_batched(
                || model.clone(),
                |mut m| train(&mut m, &chunks, &cfg).unwrap(),
                criterion::BatchSize::LargeInput,
            )
        });
    }
    g.finish();
}

criterion_group!(benches, extraction, networks);
criterion_main!(benches);
