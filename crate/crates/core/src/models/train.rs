use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Model;
use crate::dataset::{Chunk, ChunkMode};
use crate::nn::{bce_logits_sum, check_finite, Adam, AdamConfig, Params};
use crate::{Error, Exec, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub w_pos: f64,
    pub w_neg: f64,
    pub mode: ChunkMode,
    /// Train on a fresh random subset of at most this many chunks each epoch.
    pub max_chunks_per_epoch: Option<usize>,
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            lr: AdamConfig::default().lr,
            seed: 0,
            w_pos: 1.0,
            w_neg: 1.0,
            mode: ChunkMode::Overlap,
            max_chunks_per_epoch: None,
            exec: Exec::Parallel,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.epochs > 0
            && self.batch_size > 0
            && self.lr > 0.0
            && self.w_pos > 0.0
            && self.w_neg > 0.0
            && self.max_chunks_per_epoch != Some(0);
        if ok {
            Ok(())
        } else {
            Err(Error::Precondition(
                "train: epochs, batch size, learning rate, class weights and chunk cap must be positive".into(),
            ))
        }
    }
}

/// Minibatch Adam on weighted BCE, masking padded samples.
///
/// Returns the mean per-sample loss of each epoch. Per-example gradients are
/// computed independently and summed in batch order, so the result does not
/// depend on `cfg.exec`.
pub fn train(model: &mut Model, chunks: &[Chunk], cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if chunks.is_empty() {
        return Err(Error::Precondition("train: no training chunks".into()));
    }
    let w = model.window();
    if let Some(c) = chunks.iter().find(|c| c.input.len() != w) {
        return Err(Error::ShapeMismatch {
            op: "train",
            expected: format!("chunks of width {w}"),
            found: format!("width {}", c.input.len()),
        });
    }
    let (mut pos, mut neg) = (false, false);
    for c in chunks {
        for &y in &c.labels[..c.valid] {
            pos |= y != 0;
            neg |= y == 0;
        }
    }
    if !(pos && neg) {
        return Err(Error::SingleClass);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let masks: Vec<Vec<bool>> = chunks.iter().map(Chunk::mask).collect();
    let mut order: Vec<usize> = (0..chunks.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut theta = model.flatten();

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let take = cfg.max_chunks_per_epoch.unwrap_or(order.len()).min(order.len());
        let (mut epoch_loss, mut epoch_count) = (0.0, 0usize);
        for batch in order[..take].chunks(cfg.batch_size) {
            let results = cfg.exec.map(batch.len(), |k| {
                let i = batch[k];
                let mut grad = model.zeros_like();
                // summed over the chunk; the batch mean is taken below
                let loss = model.forward_backward(&chunks[i].input, &mut grad, |z| {
                    bce_logits_sum(z, &chunks[i].labels, cfg.w_pos, cfg.w_neg, &masks[i])
                });
                (loss, chunks[i].valid, grad.flatten())
            });
            let count: usize = results.iter().map(|r| r.1).sum();
            let mut g = vec![0.0; theta.len()];
            for (loss, _, grad) in &results {
                epoch_loss += loss;
                for (a, b) in g.iter_mut().zip(grad) {
                    *a += b;
                }
            }
            epoch_count += count;
            let scale = 1.0 / count as f64;
            g.iter_mut().for_each(|v| *v *= scale);
            check_finite(&g, "train gradient")?;
            adam.step_slice(&mut theta, &g);
            model.unflatten(&theta);
        }
        let loss = epoch_loss / epoch_count as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite("train loss"));
        }
        history.push(loss);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{chunk, LabeledSequence};
    use crate::nn::weighted_bce_logits;
    use crate::models::{build_model, Arch, ModelSpec};
    use crate::rp::RespirationPattern;

    fn toy_chunks(w: usize, mode: ChunkMode) -> Vec<Chunk> {
        // speech where the signal is flat, breathing elsewhere
        let n = 120;
        let labels: Vec<u8> = (0..n).map(|i| u8::from((40..80).contains(&i))).collect();
        let samples: Vec<f64> = (0..n)
            .map(|i| {
                if labels[i] == 1 {
                    0.1
                } else {
                    (i as f64 * 0.3).sin()
                }
            })
            .collect();
        let rp = RespirationPattern {
            samples,
            fps: 30.0,
            filtered: true,
        };
        let seq = LabeledSequence::new(rp, labels, "toy").unwrap();
        chunk(&seq, w, mode).unwrap().chunks
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 8,
            lr: 1e-2,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn one_epoch_gives_finite_loss() {
        let mut m = build_model(ModelSpec::new(Arch::Mlp, 16).with_width_divisor(8), 0).unwrap();
        let h = train(&mut m, &toy_chunks(16, ChunkMode::NonOverlap), &cfg(1)).unwrap();
        assert_eq!(h.len(), 1);
        assert!(h[0].is_finite());
    }

    #[test]
    fn identical_seeds_identical_history_across_exec_modes() {
        let chunks = toy_chunks(12, ChunkMode::Overlap);
        let run = |exec| {
            let mut m =
                build_model(ModelSpec::new(Arch::ConvLstm, 12).with_width_divisor(16), 1).unwrap();
            let c = TrainConfig {
                exec,
                max_chunks_per_epoch: Some(40),
                ..cfg(3)
            };
            let h = train(&mut m, &chunks, &c).unwrap();
            (h, m)
        };
        let (h1, m1) = run(Exec::Sequential);
        let (h2, m2) = run(Exec::Parallel);
        assert_eq!(h1, h2);
        assert_eq!(m1, m2);
    }

    #[test]
    fn loss_decreases_on_learnable_toy() {
        let mut m = build_model(ModelSpec::new(Arch::BiLstm, 20).with_width_divisor(16), 2).unwrap();
        let h = train(&mut m, &toy_chunks(20, ChunkMode::Overlap), &cfg(8)).unwrap();
        assert!(h.last().unwrap() < &h[0], "{h:?}");
    }

    #[test]
    fn single_step_descends_for_every_arch() {
        let chunks = toy_chunks(10, ChunkMode::Overlap);
        let one = vec![chunks[35].clone()];
        assert!(one[0].labels.contains(&1) && one[0].labels.contains(&0));
        for arch in Arch::ALL {
            let mut m = build_model(ModelSpec::new(arch, 10).with_width_divisor(16), 3).unwrap();
            let loss = |m: &Model| {
                let z = m.logits_raw(&one[0].input);
                weighted_bce_logits(&z, &one[0].labels, 1.0, 1.0, &one[0].mask())
                    .unwrap()
                    .0
            };
            let before = loss(&m);
            let c = TrainConfig {
                lr: 1e-4,
                ..cfg(1)
            };
            train(&mut m, &one, &c).unwrap();
            assert!(loss(&m) < before, "{arch}");
        }
    }

    #[test]
    fn single_class_is_rejected() {
        let mut chunks = toy_chunks(10, ChunkMode::NonOverlap);
        chunks.iter_mut().for_each(|c| c.labels.fill(0));
        let mut m = build_model(ModelSpec::new(Arch::Mlp, 10).with_width_divisor(16), 0).unwrap();
        assert!(matches!(train(&mut m, &chunks, &cfg(1)), Err(Error::SingleClass)));
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let chunks = toy_chunks(10, ChunkMode::NonOverlap);
        let mut m = build_model(ModelSpec::new(Arch::Mlp, 12).with_width_divisor(16), 0).unwrap();
        assert!(train(&mut m, &chunks, &cfg(1)).is_err());
    }
}
