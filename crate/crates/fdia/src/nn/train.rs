//! Mini-batch training loop with Adam, seeded shuffles, early stopping on
//! validation loss, and best-weights restoration.

use super::adam::{adam_step, AdamHyper, AdamState};
use super::model::{bce_from_logits, Model};
use crate::dataset::{Sample, Scaler};
use crate::{FdiaError, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Number of consecutive epochs without strict validation-loss
    /// improvement before stopping. Zero disables early stopping.
    pub patience: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Emulate single-precision parameter storage by rounding weights to
    /// f32 after every optimizer step. All arithmetic remains f64.
    pub round_params_to_f32: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamHyper::default();
        TrainConfig {
            batch_size: 256,
            max_epochs: 256,
            patience: 16,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            seed: 0,
            round_params_to_f32: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Early,
    MaxEpochs,
    Diverged,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// 0-based epoch whose weights the model holds after training.
    pub best_epoch: usize,
    pub stop_reason: StopReason,
}

fn split_loss(model: &Model, scaler: &Scaler, samples: &[Sample]) -> Result<f64> {
    let logits: Vec<f64> = samples
        .iter()
        .map(|s| model.forward_logit(&scaler.apply(&s.features)))
        .collect();
    let labels: Vec<f64> = samples.iter().map(|s| s.label as u8 as f64).collect();
    Ok(bce_from_logits(&logits, &labels)?.0)
}

/// Train `model` in place. Features are standardized through `scaler`
/// before every forward pass. Returns the per-epoch loss history; on early
/// stop or divergence the model is restored to its best validation-loss
/// weights.
pub fn train(
    model: &mut Model,
    scaler: &Scaler,
    train_set: &[Sample],
    val_set: &[Sample],
    config: &TrainConfig,
) -> Result<TrainHistory> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(FdiaError::Config(
            "training requires non-empty train and validation splits".into(),
        ));
    }
    if config.batch_size == 0 || config.max_epochs == 0 {
        return Err(FdiaError::Config(
            "batch_size and max_epochs must be positive".into(),
        ));
    }
    let width = model.input_width();
    for s in train_set.iter().chain(val_set) {
        if s.features.len() != width {
            return Err(FdiaError::Dimension(format!(
                "sample has {} features, model expects {width}",
                s.features.len()
            )));
        }
    }

    // standardize once up front
    let std_train: Vec<Vec<f64>> = train_set.iter().map(|s| scaler.apply(&s.features)).collect();
    let train_labels: Vec<f64> = train_set.iter().map(|s| s.label as u8 as f64).collect();

    let hyper = AdamHyper {
        lr: config.lr,
        beta1: config.beta1,
        beta2: config.beta2,
        eps: config.eps,
    };
    let mut adam = AdamState::new(model.num_params());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut history = TrainHistory {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        stop_reason: StopReason::MaxEpochs,
    };
    let mut best_val = f64::INFINITY;
    let mut best_params = model.params();
    let mut epochs_since_best = 0usize;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    'epochs: for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&[f64], f64)> = chunk
                .iter()
                .map(|&i| (std_train[i].as_slice(), train_labels[i]))
                .collect();
            let (loss, grad) = model.batch_loss_and_grad(&batch)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                history.stop_reason = StopReason::Diverged;
                model.set_params(&best_params);
                break 'epochs;
            }
            epoch_loss += loss * chunk.len() as f64;
            seen += chunk.len();
            let mut params = model.params();
            adam_step(&mut params, &grad, &mut adam, &hyper);
            if config.round_params_to_f32 {
                params.iter_mut().for_each(|p| *p = *p as f32 as f64);
            }
            model.set_params(&params);
        }
        history.train_loss.push(epoch_loss / seen as f64);
        let val = split_loss(model, scaler, val_set)?;
        history.val_loss.push(val);
        if !val.is_finite() {
            history.stop_reason = StopReason::Diverged;
            model.set_params(&best_params);
            break;
        }
        if val < best_val {
            best_val = val;
            best_params = model.params();
            history.best_epoch = epoch;
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if config.patience > 0 && epochs_since_best >= config.patience {
                history.stop_reason = StopReason::Early;
                break;
            }
        }
    }
    model.set_params(&best_params);
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::AttackKind;
    use crate::grid::WeightedGraph;
    use crate::nn::model::{CgcnArch, CgcnModel, FcnArch, FcnModel};
    use crate::sparse::CsrReal;
    use crate::spectral::{normalized_laplacian, scale_laplacian, ScaledLaplacian};
    use std::sync::Arc;

    fn ring_laplacian(n: usize) -> Arc<ScaledLaplacian> {
        let triplets: Vec<(usize, usize, f64)> = (0..n)
            .flat_map(|i| {
                let j = (i + 1) % n;
                [(i, j, 1.0), (j, i, 1.0)]
            })
            .collect();
        let weights = CsrReal::from_triplets(n, n, triplets);
        let degrees = (0..n).map(|i| weights.row(i).map(|(_, w)| w).sum()).collect();
        let g = WeightedGraph { n, weights, degrees };
        let l = normalized_laplacian(&g).unwrap();
        Arc::new(scale_laplacian(&l, 2.0).unwrap())
    }

    fn identity_scaler(width: usize) -> Scaler {
        Scaler {
            mean: vec![0.0; width],
            std: vec![1.0; width],
            epsilon: 1e-8,
        }
    }

    fn sample(features: Vec<f64>, label: bool) -> Sample {
        Sample {
            features,
            label,
            attack_kind: if label { AttackKind::Scale } else { AttackKind::None },
            scenario_seed: 0,
            degenerate: false,
        }
    }

    /// Linearly separable toy set: positives have large channel-0 values.
    fn toy_set(n: usize, count: usize, offset: u64) -> Vec<Sample> {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(offset);
        (0..count)
            .map(|i| {
                let label = i % 2 == 0;
                let base = if label { 1.0 } else { -1.0 };
                let features: Vec<f64> = (0..n * 2)
                    .map(|k| {
                        let jitter: f64 = rng.gen_range(-0.2..0.2);
                        if k % 2 == 0 { base + jitter } else { jitter }
                    })
                    .collect();
                sample(features, label)
            })
            .collect()
    }

    #[test]
    fn cgcn_overfits_small_separable_set() {
        let n = 6;
        let lap = ring_laplacian(n);
        let arch = CgcnArch { n, layers: 2, channels: 4, order: 3 };
        let mut model = Model::Cgcn(CgcnModel::init(arch, lap, 1, false).unwrap());
        let train_set = toy_set(n, 16, 10);
        let val_set = toy_set(n, 8, 20);
        let config = TrainConfig {
            batch_size: 8,
            max_epochs: 300,
            patience: 0,
            lr: 0.01,
            ..TrainConfig::default()
        };
        let scaler = identity_scaler(n * 2);
        let hist = train(&mut model, &scaler, &train_set, &val_set, &config).unwrap();
        let final_loss = *hist.train_loss.last().unwrap();
        assert!(final_loss < 0.05, "train loss {final_loss}");
        for s in &train_set {
            let p = crate::nn::predict(&model, &scaler, &s.features).unwrap();
            assert_eq!(p > 0.5, s.label);
        }
    }

    #[test]
    fn fcn_overfits_small_separable_set() {
        let n = 6;
        let arch = FcnArch { n, layers: 2, units: 8 };
        let mut model = Model::Fcn(FcnModel::init(arch, 1, false).unwrap());
        let train_set = toy_set(n, 16, 30);
        let val_set = toy_set(n, 8, 40);
        let config = TrainConfig {
            batch_size: 8,
            max_epochs: 300,
            patience: 0,
            lr: 0.01,
            ..TrainConfig::default()
        };
        let scaler = identity_scaler(n * 2);
        let hist = train(&mut model, &scaler, &train_set, &val_set, &config).unwrap();
        assert!(*hist.train_loss.last().unwrap() < 0.05);
    }

    #[test]
    fn early_stopping_restores_best_epoch_weights() {
        // validation labels are inverted relative to training, so validation
        // loss keeps rising as training fits; the loop must stop after
        // 1 + patience epochs and hand back the epoch-0 weights.
        let n = 4;
        let arch = FcnArch { n, layers: 1, units: 4 };
        let mut model = Model::Fcn(FcnModel::init(arch, 2, false).unwrap());
        let train_set = toy_set(n, 8, 50);
        let val_set: Vec<Sample> = toy_set(n, 8, 50)
            .into_iter()
            .map(|mut s| {
                s.label = !s.label;
                s
            })
            .collect();
        let config = TrainConfig {
            batch_size: 8,
            max_epochs: 100,
            patience: 3,
            lr: 0.05,
            ..TrainConfig::default()
        };
        let scaler = identity_scaler(n * 2);

        // replay one epoch to capture the epoch-0 weights
        let mut probe = model.clone();
        let one = TrainConfig { max_epochs: 1, ..config };
        train(&mut probe, &scaler, &train_set, &val_set, &one).unwrap();

        let hist = train(&mut model, &scaler, &train_set, &val_set, &config).unwrap();
        assert_eq!(hist.stop_reason, StopReason::Early);
        assert_eq!(hist.best_epoch, 0);
        assert_eq!(hist.val_loss.len(), 1 + config.patience);
        assert_eq!(model.params(), probe.params());
    }

    #[test]
    fn patience_zero_runs_all_epochs() {
        let n = 4;
        let arch = FcnArch { n, layers: 1, units: 3 };
        let mut model = Model::Fcn(FcnModel::init(arch, 3, false).unwrap());
        let train_set = toy_set(n, 8, 60);
        let val_set = toy_set(n, 4, 70);
        let config = TrainConfig {
            batch_size: 4,
            max_epochs: 12,
            patience: 0,
            ..TrainConfig::default()
        };
        let hist = train(&mut model, &identity_scaler(n * 2), &train_set, &val_set, &config).unwrap();
        assert_eq!(hist.stop_reason, StopReason::MaxEpochs);
        assert_eq!(hist.train_loss.len(), 12);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let n = 5;
        let lap = ring_laplacian(n);
        let arch = CgcnArch { n, layers: 2, channels: 3, order: 3 };
        let train_set = toy_set(n, 12, 80);
        let val_set = toy_set(n, 6, 90);
        let config = TrainConfig {
            batch_size: 4,
            max_epochs: 5,
            seed: 42,
            ..TrainConfig::default()
        };
        let scaler = identity_scaler(n * 2);
        let run = |seed: u64| {
            let mut m = Model::Cgcn(CgcnModel::init(arch, lap.clone(), 7, false).unwrap());
            let cfg = TrainConfig { seed, ..config };
            let h = train(&mut m, &scaler, &train_set, &val_set, &cfg).unwrap();
            (m.params(), h.train_loss)
        };
        let (p1, l1) = run(42);
        let (p2, l2) = run(42);
        assert_eq!(p1, p2);
        assert_eq!(l1, l2);
        let (p3, _) = run(43);
        assert_ne!(p1, p3, "different seeds should shuffle differently");
    }

    #[test]
    fn divergence_is_reported_and_best_weights_kept() {
        let n = 4;
        let arch = FcnArch { n, layers: 1, units: 3 };
        let mut model = Model::Fcn(FcnModel::init(arch, 4, false).unwrap());
        let mut train_set = toy_set(n, 8, 100);
        // poison one sample with a NaN feature
        train_set[0].features[0] = f64::NAN;
        let val_set = toy_set(n, 4, 110);
        let config = TrainConfig {
            batch_size: 8,
            max_epochs: 10,
            ..TrainConfig::default()
        };
        let before = model.params();
        let hist = train(&mut model, &identity_scaler(n * 2), &train_set, &val_set, &config).unwrap();
        assert_eq!(hist.stop_reason, StopReason::Diverged);
        // no epoch completed, so the initial weights are the best weights
        assert_eq!(model.params(), before);
    }

    #[test]
    fn empty_split_is_rejected() {
        let arch = FcnArch { n: 4, layers: 1, units: 3 };
        let mut model = Model::Fcn(FcnModel::init(arch, 0, false).unwrap());
        let set = toy_set(4, 4, 120);
        let err = train(&mut model, &identity_scaler(8), &[], &set, &TrainConfig::default());
        assert!(err.is_err());
    }
}
