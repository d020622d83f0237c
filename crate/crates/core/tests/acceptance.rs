//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.
//!
//! Set `BREATHVAD_ACCEPTANCE_SKIP_TRAINING=1` to skip the two model-training
//! criteria (they dominate the runtime).

use std::time::{Duration, Instant};

use breathvad::config::derive_seed;
use breathvad::dataset::{
    chunk, class_weights, reassemble, reassemble_values, ChunkMode, LabeledSequence,
};
use breathvad::eval::{
    auroc, confusion_counts, mean, metrics, transition_errors, Report, ReportBlock,
};
use breathvad::flow::{build_flow_matrix, FlowMatrix};
use breathvad::models::{
    build_model, predict_sequence, predictions_to_csv, train, Arch, ModelSpec, TrainConfig,
    THRESHOLD,
};
use breathvad::nn::{weighted_bce, weighted_bce_logits, Bidirectional, Conv1d, Dense, Lstm, Params, Tensor};
use breathvad::rp::{bandpass, extract_rp, top_singular_triplet, RespirationPattern};
use breathvad::synth::{synth_rp_dataset, synth_video, SynthRpParams, SynthVideoParams};
use breathvad::Exec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

fn fmt_list(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(", ")
}

// ---------------------------------------------------------------- extraction

fn band_passed_rp(p: &SynthVideoParams) -> (RespirationPattern, Vec<f64>, Duration) {
    let (seq, d) = synth_video(p).unwrap();
    let t0 = Instant::now();
    let f = build_flow_matrix(&seq, 1e-8).unwrap();
    let rp = extract_rp(&f, p.fps, 1e-10, 10_000, derive_seed(p.seed, "extract-rp")).unwrap();
    let rp = bandpass(&rp, 5.0, 30.0).unwrap();
    (rp, d, t0.elapsed())
}

fn velocity(d: &[f64]) -> Vec<f64> {
    (1..d.len()).map(|t| d[t] - d[t - 1]).collect()
}

fn rp_extraction(info: &mut Vec<String>) -> Outcome {
    let mut r_disp = Vec::new();
    let mut r_vel = Vec::new();
    let mut slowest = Duration::ZERO;
    for seed in SEEDS {
        let p = SynthVideoParams {
            seed,
            ..SynthVideoParams::default()
        };
        let (rp, d, took) = band_passed_rp(&p);
        slowest = slowest.max(took);
        r_disp.push(pearson(&rp.samples, &d).abs());
        r_vel.push(pearson(&rp.samples[1..], &velocity(&d)).abs());
    }
    info.push(format!(
        "rp_extraction: |r| against frame-to-frame displacement change at default noise: [{}]",
        fmt_list(&r_vel)
    ));
    let pass = r_disp.iter().all(|&r| r >= 0.95) && slowest <= Duration::from_secs(30);
    outcome(
        pass,
        format!(
            "|r(rp, d)| per seed [{}] (need >= 0.95), slowest video {:.1}s (need <= 30s)",
            fmt_list(&r_disp),
            slowest.as_secs_f64()
        ),
    )
}

/// Same pipeline on noiseless video, scored against displacement change.
fn rp_extraction_noiseless_velocity() -> Outcome {
    let r: Vec<f64> = SEEDS
        .iter()
        .map(|&seed| {
            let p = SynthVideoParams {
                seed,
                noise_sigma: 0.0,
                ..SynthVideoParams::default()
            };
            let (rp, d, _) = band_passed_rp(&p);
            pearson(&rp.samples[1..], &velocity(&d)).abs()
        })
        .collect();
    outcome(
        r.iter().all(|&v| v >= 0.95),
        format!("|r(rp, delta d)| per seed [{}] (need >= 0.95)", fmt_list(&r)),
    )
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix (row-major).
/// Returns eigenvalues and eigenvectors as columns of a row-major matrix.
fn jacobi_eigen(mut a: Vec<f64>, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), v)
}

fn random_matrix(rows: usize, cols: usize, r: &mut impl Rng) -> FlowMatrix {
    let data = (0..rows * cols).map(|_| r.gen_range(-1.0..1.0)).collect();
    FlowMatrix::from_row_major(rows, cols, data).unwrap()
}

fn svd_oracle() -> Outcome {
    let (rows, cols) = (8, 6);
    let mut r = rng(11);
    let (mut worst_sigma, mut worst_v) = (0.0f64, 0.0f64);
    for case in 0..20 {
        let f = random_matrix(rows, cols, &mut r);
        let mut gram = vec![0.0; cols * cols];
        for i in 0..cols {
            for j in 0..cols {
                gram[i * cols + j] = (0..rows).map(|k| f.get(k, i) * f.get(k, j)).sum();
            }
        }
        let (vals, vecs) = jacobi_eigen(gram, cols);
        let top = (0..cols).max_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
        let sigma = vals[top].sqrt();
        let v: Vec<f64> = (0..cols).map(|k| vecs[k * cols + top]).collect();
        let t = top_singular_triplet(&f, 1e-14, 1_000_000, case).unwrap();
        worst_sigma = worst_sigma.max((t.sigma - sigma).abs() / sigma);
        let same: f64 = t.v.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let flipped: f64 = t.v.iter().zip(&v).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max);
        worst_v = worst_v.max(same.min(flipped));
    }
    outcome(
        worst_sigma <= 1e-6 && worst_v <= 1e-6,
        format!("20 cases: worst sigma rel err {worst_sigma:.2e}, worst v err {worst_v:.2e} (need <= 1e-6)"),
    )
}

fn energy(f: &FlowMatrix, v: &[f64]) -> f64 {
    f.mul_vec(v, Exec::Sequential).iter().map(|x| x * x).sum()
}

fn maximizer() -> Outcome {
    let mut r = rng(12);
    let mut violations = 0;
    let mut tightest = f64::INFINITY;
    for case in 0..10 {
        let f = random_matrix(40, 15, &mut r);
        let best = extract_rp(&f, 30.0, 1e-12, 100_000, case).unwrap();
        let e_best = energy(&f, &best.samples);
        for _ in 0..100 {
            let mut q: Vec<f64> = (0..15).map(|_| r.gen_range(-1.0..1.0)).collect();
            let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            q.iter_mut().for_each(|x| *x /= n);
            let e = energy(&f, &q);
            tightest = tightest.min(e_best - e);
            if e > e_best {
                violations += 1;
            }
        }
    }
    outcome(
        violations == 0,
        format!("10 matrices x 100 unit vectors: {violations} violations, smallest margin {tightest:.3e}"),
    )
}

// ---------------------------------------------------------------- gradients

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

/// Central differences of `f` at `x`.
fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let h = 1e-5;
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Checks a layer under the scalar loss `sum(y * probe)` for a random probe.
/// `forward` maps (layer, input) to output values; `backward` returns
/// (parameter gradient, input gradient) for the given output gradient.
fn layer_check<L: Params + Clone>(
    layer: &L,
    x: &Tensor,
    out_len: usize,
    seed: u64,
    forward: impl Fn(&L, &Tensor) -> Vec<f64>,
    backward: impl Fn(&L, &Tensor, &[f64]) -> (L, Vec<f64>),
) -> f64 {
    let mut r = rng(seed ^ 0xfeed);
    let probe: Vec<f64> = (0..out_len).map(|_| r.gen_range(-1.0..1.0)).collect();
    let (grad, dx) = backward(layer, x, &probe);
    let theta = layer.flatten();
    let num_params = numeric_grad(&theta, |t| {
        let mut l = layer.clone();
        l.unflatten(t);
        dot(&forward(&l, x), &probe)
    });
    let num_x = numeric_grad(x.data(), |xs| {
        let xt = Tensor::from_vec(x.shape(), xs.to_vec()).unwrap();
        dot(&forward(layer, &xt), &probe)
    });
    max_rel_err(&grad.flatten(), &num_params).max(max_rel_err(&dx, &num_x))
}

fn random_sequence(steps: usize, features: usize, r: &mut impl Rng) -> Tensor {
    Tensor::sequence(steps, features, (0..steps * features).map(|_| r.gen_range(-1.0..1.0)).collect())
        .unwrap()
}

/// Random nonzero biases so ReLU-free layers are exercised away from zero.
fn jitter<L: Params>(layer: &mut L, r: &mut impl Rng) {
    let mut theta = layer.flatten();
    theta.iter_mut().for_each(|t| *t += r.gen_range(-0.1..0.1));
    layer.unflatten(&theta);
}

fn zeroed<L: Params + Clone>(l: &L) -> L {
    let mut g = l.clone();
    g.zero();
    g
}

fn gradient_checks() -> Outcome {
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut record = |name: &'static str, e: f64| match worst.iter_mut().find(|(n, _)| *n == name) {
        Some((_, w)) => *w = w.max(e),
        None => worst.push((name, e)),
    };
    for seed in 0..10u64 {
        let mut r = rng(seed);

        let mut dense = Dense::new(5, 4, &mut r);
        jitter(&mut dense, &mut r);
        let x = random_sequence(7, 5, &mut r);
        record(
            "dense",
            layer_check(&dense, &x, 28, seed, |l, x| l.forward(x).unwrap().into_data(), |l, x, p| {
                let mut g = zeroed(l);
                let dy = Tensor::sequence(7, 4, p.to_vec()).unwrap();
                let dx = l.backward(x, &dy, &mut g).unwrap();
                (g, dx.into_data())
            }),
        );

        let mut conv = Conv1d::new(2, 3, 5, 3, &mut r);
        jitter(&mut conv, &mut r);
        let x = random_sequence(14, 2, &mut r);
        record(
            "conv1d",
            layer_check(&conv, &x, 42, seed, |l, x| l.forward(x).unwrap().into_data(), |l, x, p| {
                let mut g = zeroed(l);
                let dy = Tensor::sequence(14, 3, p.to_vec()).unwrap();
                let dx = l.backward(x, &dy, &mut g).unwrap();
                (g, dx.into_data())
            }),
        );

        let lstm = Lstm::new(3, 4, &mut r);
        let x = random_sequence(6, 3, &mut r);
        record(
            "lstm",
            layer_check(&lstm, &x, 24, seed, |l, x| l.forward(x).unwrap().0.into_data(), |l, x, p| {
                let mut g = zeroed(l);
                let (_, cache) = l.forward(x).unwrap();
                let dh = Tensor::sequence(6, 4, p.to_vec()).unwrap();
                let dx = l.backward(x, &cache, &dh, &mut g).unwrap();
                (g, dx.into_data())
            }),
        );

        let bi = Bidirectional::new(2, 3, &mut r);
        let x = random_sequence(5, 2, &mut r);
        record(
            "bidirectional",
            layer_check(&bi, &x, 30, seed, |l, x| l.forward(x).unwrap().0.into_data(), |l, x, p| {
                let mut g = zeroed(l);
                let (_, cache) = l.forward(x).unwrap();
                let dy = Tensor::sequence(5, 6, p.to_vec()).unwrap();
                let dx = l.backward(x, &cache, &dy, &mut g).unwrap();
                (g, dx.into_data())
            }),
        );

        let n = 20;
        let target: Vec<u8> = (0..n).map(|_| r.gen_range(0..2)).collect();
        let mask: Vec<bool> = (0..n).map(|i| i < 3 || r.gen_bool(0.8)).collect();
        let (w_pos, w_neg) = (r.gen_range(0.5..3.0), r.gen_range(0.5..3.0));
        let pred: Vec<f64> = (0..n).map(|_| r.gen_range(0.05..0.95)).collect();
        let (_, g) = weighted_bce(&pred, &target, w_pos, w_neg, &mask).unwrap();
        let num = numeric_grad(&pred, |p| weighted_bce(p, &target, w_pos, w_neg, &mask).unwrap().0);
        record("weighted_bce", max_rel_err(&g, &num));
        let logits: Vec<f64> = (0..n).map(|_| r.gen_range(-4.0..4.0)).collect();
        let (_, g) = weighted_bce_logits(&logits, &target, w_pos, w_neg, &mask).unwrap();
        let num = numeric_grad(&logits, |z| {
            weighted_bce_logits(z, &target, w_pos, w_neg, &mask).unwrap().0
        });
        record("weighted_bce_logits", max_rel_err(&g, &num));
    }
    let pass = worst.iter().all(|&(_, e)| e <= 1e-5);
    let detail = worst
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(pass, format!("10 seeds, worst relative error: {detail} (need <= 1e-5)"))
}

// ---------------------------------------------------------------- chunking

fn labeled(values: Vec<f64>) -> LabeledSequence {
    let n = values.len();
    let labels = (0..n).map(|i| (i % 3 == 0) as u8).collect();
    let rp = RespirationPattern {
        samples: values,
        fps: 30.0,
        filtered: false,
    };
    LabeledSequence::new(rp, labels, "s").unwrap()
}

fn chunking() -> Outcome {
    let mut problems = Vec::new();
    let seq = labeled((1..=10).map(f64::from).collect());
    let no = chunk(&seq, 4, ChunkMode::NonOverlap).unwrap();
    let layout: Vec<(usize, usize)> = no.chunks.iter().map(|c| (c.source_offset, c.valid)).collect();
    if layout != [(0, 4), (4, 4), (8, 2)] || no.pad_count != 2 || no.chunks[2].input != [9.0, 10.0, 0.0, 0.0] {
        problems.push(format!("non-overlap layout {layout:?}, pad {}", no.pad_count));
    }
    let o = chunk(&seq, 4, ChunkMode::Overlap).unwrap();
    let offsets: Vec<usize> = o.chunks.iter().map(|c| c.source_offset).collect();
    if offsets != (0..7).collect::<Vec<_>>() || o.chunks.iter().any(|c| c.valid != 4) {
        problems.push(format!("overlap offsets {offsets:?}"));
    }

    let mut r = rng(13);
    let mut worst_avg = 0.0f64;
    for _ in 0..50 {
        let n = r.gen_range(1..200);
        let w = r.gen_range(1..40);
        let seq = labeled((0..n).map(|_| r.gen_range(-1.0..1.0)).collect());
        for mode in [ChunkMode::Overlap, ChunkMode::NonOverlap] {
            let set = chunk(&seq, w, mode).unwrap();
            if reassemble(&set, n).unwrap() != seq.rp.samples {
                problems.push(format!("round trip n={n} w={w} {mode}"));
            }
        }
        let set = chunk(&seq, w, ChunkMode::Overlap).unwrap();
        let values: Vec<Vec<f64>> = set
            .chunks
            .iter()
            .map(|_| (0..w).map(|_| r.gen_range(0.0..1.0)).collect())
            .collect();
        let got = reassemble_values(&set, &values, n).unwrap();
        for (i, g) in got.iter().enumerate() {
            let covering: Vec<f64> = set
                .chunks
                .iter()
                .zip(&values)
                .filter(|(c, _)| c.source_offset <= i && i < c.source_offset + c.valid)
                .map(|(c, v)| v[i - c.source_offset])
                .collect();
            let expect = covering.iter().sum::<f64>() / covering.len() as f64;
            worst_avg = worst_avg.max((g - expect).abs());
        }
    }
    if worst_avg > 1e-12 {
        problems.push(format!("overlap averaging error {worst_avg:.2e}"));
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            format!("N=10/w=4 layouts exact, 50 random round trips exact, averaging error {worst_avg:.1e}")
        } else {
            problems.join("; ")
        },
    )
}

// ---------------------------------------------------------------- metrics

fn random_scored(n: usize, r: &mut impl Rng) -> (Vec<f64>, Vec<u8>) {
    let mut labels: Vec<u8> = (0..n).map(|_| r.gen_range(0..2)).collect();
    labels[0] = 0;
    labels[1] = 1;
    // coarse grid so ties occur
    let scores = labels
        .iter()
        .map(|&y| ((r.gen_range(0.0..0.7) + 0.3 * y as f64) * 20.0).round() / 20.0)
        .collect();
    (scores, labels)
}

fn metric_fidelity() -> Outcome {
    let mut r = rng(14);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (s, y) = random_scored(500, &mut r);
        let (mut wins, mut pairs) = (0.0, 0.0);
        for i in 0..s.len() {
            for j in 0..s.len() {
                if y[i] == 1 && y[j] == 0 {
                    pairs += 1.0;
                    wins += if s[i] > s[j] {
                        1.0
                    } else if s[i] == s[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        worst = worst.max((auroc(&s, &y).unwrap() - wins / pairs).abs());
    }
    let mut mismatches = 0;
    for _ in 0..20 {
        let n = r.gen_range(10..300);
        let (s, y) = random_scored(n, &mut r);
        let m = metrics(&s, &y, THRESHOLD).unwrap();
        let (mut tp, mut fp, mut tn, mut fn_) = (0.0, 0.0, 0.0, 0.0);
        for (&p, &t) in s.iter().zip(&y) {
            match (p >= THRESHOLD, t == 1) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, false) => tn += 1.0,
                (false, true) => fn_ += 1.0,
            }
        }
        let precision = tp / (tp + fp);
        let recall = tp / (tp + fn_);
        let expect = [
            Some((tp + tn) / (tp + tn + fp + fn_)),
            (tp + fp > 0.0).then_some(precision),
            (tp + fn_ > 0.0).then_some(recall),
            (tp + fp > 0.0 && tp + fn_ > 0.0).then(|| 2.0 * tp / (2.0 * tp + fp + fn_)),
        ];
        let got = m.values();
        let c = confusion_counts(&breathvad::eval::binarize(&s, THRESHOLD), &y).unwrap();
        if got[..4] != expect || m.counts != c || got[4] != auroc(&s, &y).ok() {
            mismatches += 1;
        }
    }
    outcome(
        worst <= 1e-12 && mismatches == 0,
        format!("auroc vs pairwise oracle worst {worst:.1e} (need <= 1e-12); {mismatches} of 20 metric cases differ"),
    )
}

// ---------------------------------------------------------------- learning

const WIDTH_DIVISOR: usize = 8;
const EPOCHS: usize = 5;
const CHUNK_CAP: usize = 1024;
const LR: f64 = 3e-3;
const TRAIN_SPEAKERS: usize = 24;

struct RunResult {
    auroc: f64,
    seconds: f64,
}

fn train_and_score(data: &[LabeledSequence], arch: Arch, mode: ChunkMode, seed: u64) -> RunResult {
    let t0 = Instant::now();
    let (train_set, test_set) = data.split_at(TRAIN_SPEAKERS);
    let chunks: Vec<_> = train_set
        .iter()
        .flat_map(|s| chunk(s, 100, mode).unwrap().chunks)
        .collect();
    let (w_pos, w_neg) = class_weights(train_set.iter().flat_map(|s| s.labels.iter())).unwrap();
    let spec = ModelSpec::new(arch, 100).with_width_divisor(WIDTH_DIVISOR);
    let mut model = build_model(spec, derive_seed(seed, "init")).unwrap();
    let cfg = TrainConfig {
        epochs: EPOCHS,
        lr: LR,
        seed: derive_seed(seed, "train"),
        w_pos,
        w_neg,
        mode,
        max_chunks_per_epoch: Some(CHUNK_CAP),
        ..TrainConfig::default()
    };
    train(&mut model, &chunks, &cfg).unwrap();
    let (mut probs, mut labels) = (Vec::new(), Vec::new());
    for s in test_set {
        probs.extend(predict_sequence(&model, &s.rp, mode, Exec::Parallel).unwrap());
        labels.extend_from_slice(&s.labels);
    }
    RunResult {
        auroc: auroc(&probs, &labels).unwrap(),
        seconds: t0.elapsed().as_secs_f64(),
    }
}

fn dataset(seed: u64, distortion: f64) -> Vec<LabeledSequence> {
    synth_rp_dataset(&SynthRpParams {
        seed: derive_seed(seed, "synth-rp"),
        distortion,
        ..SynthRpParams::default()
    })
    .unwrap()
}

/// AuROC of every (arch, mode) per seed, in `Arch::ALL` x [O, NO] order.
type Grid = Vec<[[f64; 2]; 4]>;

fn learning(info: &mut Vec<String>) -> (Outcome, Outcome) {
    let modes = [ChunkMode::Overlap, ChunkMode::NonOverlap];
    let mut grid: Grid = Vec::new();
    let mut e2e_seconds = 0.0;
    let mut null = Vec::new();
    for seed in SEEDS {
        let data = dataset(seed, 1.0);
        let mut row = [[0.0; 2]; 4];
        for (a, arch) in Arch::ALL.into_iter().enumerate() {
            for (m, mode) in modes.into_iter().enumerate() {
                let res = train_and_score(&data, arch, mode, seed);
                if arch == Arch::ConvLstm && mode == ChunkMode::Overlap {
                    e2e_seconds += res.seconds;
                }
                row[a][m] = res.auroc;
            }
        }
        let res = train_and_score(&dataset(seed, 0.0), Arch::ConvLstm, ChunkMode::Overlap, seed);
        e2e_seconds += res.seconds;
        null.push(res.auroc);
        info.push(format!(
            "learning: seed {seed} auroc (O/NO) {}",
            Arch::ALL
                .iter()
                .zip(&row)
                .map(|(a, r)| format!("{a} {:.3}/{:.3}", r[0], r[1]))
                .collect::<Vec<_>>()
                .join(", ")
        ));
        grid.push(row);
    }
    let convlstm = Arch::ALL.iter().position(|&a| a == Arch::ConvLstm).unwrap();
    let mlp = Arch::ALL.iter().position(|&a| a == Arch::Mlp).unwrap();
    let e2e: Vec<f64> = grid.iter().map(|r| r[convlstm][0]).collect();
    let hits = e2e.iter().filter(|&&a| a >= 0.90).count();
    let null_ok = null.iter().all(|a| (a - 0.5).abs() <= 0.1);
    let e2e_outcome = outcome(
        hits >= 4 && null_ok && e2e_seconds <= 900.0,
        format!(
            "convlstm(O) auroc [{}] ({hits}/5 >= 0.90, need 4); null control [{}] (need 0.5 +- 0.1); {:.0}s (need <= 900s)",
            fmt_list(&e2e),
            fmt_list(&null),
            e2e_seconds
        ),
    );

    let mut failures = Vec::new();
    for (a, arch) in Arch::ALL.iter().enumerate() {
        let lost = grid.iter().filter(|r| r[a][0] < r[a][1]).count();
        let o = mean(&grid.iter().map(|r| r[a][0]).collect::<Vec<_>>()).unwrap();
        let no = mean(&grid.iter().map(|r| r[a][1]).collect::<Vec<_>>()).unwrap();
        failures.push((format!("{arch} O>=NO"), lost, o, no));
    }
    let lost = grid.iter().filter(|r| r[convlstm][0] < r[mlp][0]).count();
    let c = mean(&e2e).unwrap();
    let m = mean(&grid.iter().map(|r| r[mlp][0]).collect::<Vec<_>>()).unwrap();
    failures.push(("convlstm(O)>=mlp(O)".into(), lost, c, m));
    let trend_outcome = outcome(
        failures.iter().all(|f| f.1 <= 1),
        failures
            .iter()
            .map(|(name, lost, a, b)| format!("{name}: mean {a:.3} vs {b:.3}, fails {lost}/5"))
            .collect::<Vec<_>>()
            .join("; ")
            + " (each may fail at most 1/5)",
    );
    (e2e_outcome, trend_outcome)
}

// ---------------------------------------------------------------- transitions

fn transition_shift() -> Outcome {
    let fps = 30.0;
    let mut r = rng(15);
    let mut labels = vec![0u8; 3000];
    let mut i = 60;
    while i + 400 < labels.len() {
        let len = r.gen_range(60..300);
        labels[i..i + len].iter_mut().for_each(|y| *y = 1);
        i += len + r.gen_range(90..300);
    }
    let mut pred = vec![0u8; labels.len()];
    pred[9..].copy_from_slice(&labels[..labels.len() - 9]);
    let t = transition_errors(&pred, &labels, fps, 2.0).unwrap();
    let onset = mean(&t.onset_errors_s);
    let offset = mean(&t.offset_errors_s);
    outcome(
        onset == Some(0.3) && offset == Some(0.3) && t.onset_misses + t.offset_misses == 0,
        format!(
            "{} onsets, {} offsets; mean onset {onset:?} s, mean offset {offset:?} s (need exactly 0.3)",
            t.onset_errors_s.len(),
            t.offset_errors_s.len()
        ),
    )
}

// ---------------------------------------------------------------- determinism

struct Artifacts {
    checkpoint: Vec<u8>,
    predictions: String,
    report: String,
}

fn small_pipeline(seed: u64, exec: Exec) -> Artifacts {
    let data = synth_rp_dataset(&SynthRpParams {
        speakers: 6,
        duration_s: 30.0,
        seed: derive_seed(seed, "synth-rp"),
        ..SynthRpParams::default()
    })
    .unwrap();
    let (train_set, test_set) = data.split_at(4);
    let mode = ChunkMode::Overlap;
    let chunks: Vec<_> = train_set
        .iter()
        .flat_map(|s| chunk(s, 100, mode).unwrap().chunks)
        .collect();
    let (w_pos, w_neg) = class_weights(train_set.iter().flat_map(|s| s.labels.iter())).unwrap();
    let spec = ModelSpec::new(Arch::ConvLstm, 100).with_width_divisor(16);
    let mut model = build_model(spec, derive_seed(seed, "init")).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        seed: derive_seed(seed, "train"),
        w_pos,
        w_neg,
        mode,
        max_chunks_per_epoch: Some(96),
        exec,
        ..TrainConfig::default()
    };
    train(&mut model, &chunks, &cfg).unwrap();
    let mut predictions = String::new();
    let mut block = ReportBlock::new("determinism");
    for s in test_set {
        let p = predict_sequence(&model, &s.rp, mode, exec).unwrap();
        predictions.push_str(&predictions_to_csv(&p, s.rp.fps).unwrap());
        let bin = breathvad::eval::binarize(&p, THRESHOLD);
        let t = transition_errors(&bin, &s.labels, s.rp.fps, 2.0).unwrap();
        block.push(&metrics(&p, &s.labels, THRESHOLD).unwrap(), Some(&t));
    }
    Artifacts {
        checkpoint: model.to_bytes(),
        predictions,
        report: Report { blocks: vec![block] }.render(),
    }
}

fn determinism() -> Outcome {
    let a = small_pipeline(21, Exec::Parallel);
    let b = small_pipeline(21, Exec::Parallel);
    let c = small_pipeline(21, Exec::Sequential);
    let same = |x: &Artifacts, y: &Artifacts| {
        [
            x.checkpoint == y.checkpoint,
            x.predictions == y.predictions,
            x.report == y.report,
        ]
    };
    let repeat = same(&a, &b);
    let modes = same(&a, &c);
    let other = small_pipeline(22, Exec::Parallel);
    outcome(
        repeat.iter().chain(&modes).all(|&s| s) && other.checkpoint != a.checkpoint,
        format!(
            "repeat run identical (checkpoint, predictions, report) = {repeat:?}; sequential vs parallel = {modes:?}; checkpoint {} bytes",
            a.checkpoint.len()
        ),
    )
}

fn main() {
    let skip_training = std::env::var_os("BREATHVAD_ACCEPTANCE_SKIP_TRAINING").is_some();
    let started = Instant::now();
    let mut info = Vec::new();
    let mut results: Vec<(&str, Outcome)> = vec![
        ("rp_extraction_oracle", rp_extraction(&mut info)),
        ("rp_extraction_noiseless_velocity", rp_extraction_noiseless_velocity()),
        ("svd_oracle", svd_oracle()),
        ("rp_maximizes_flow_energy", maximizer()),
        ("gradient_checks", gradient_checks()),
        ("chunking_fidelity", chunking()),
        ("metric_fidelity", metric_fidelity()),
        ("transition_errors_shift", transition_shift()),
        ("determinism", determinism()),
    ];
    if skip_training {
        println!("SKIP end_to_end_learning, architecture_trends (training disabled by environment)");
    } else {
        let (e2e, trend) = learning(&mut info);
        results.push(("end_to_end_learning", e2e));
        results.push(("architecture_trends", trend));
    }
    for line in &info {
        println!("INFO {line}");
    }
    let mut failed = 0;
    for (name, o) in &results {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.0}s",
        results.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
