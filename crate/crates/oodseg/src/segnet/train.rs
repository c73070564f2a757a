//! Training loop: Dice loss, ADAM, batch size 1, per-epoch validation.

use serde::{Deserialize, Serialize};

use crate::tensor::rng::Rng;
use crate::volumes::Sample;

use super::adam::{adam_step, AdamState, TrainConfig};
use super::infer::{mask_dice, predict_mask};
use super::net::{backward, build_net, NetParams};
use super::{NetConfig, NetError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_dice: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
}

/// Train a fresh network. One optimizer step per sample (batch size 1),
/// samples reshuffled every epoch, Dice on the validation set logged per
/// epoch. Deterministic for a given seed.
pub fn train(
    train_set: &[Sample],
    val_set: &[Sample],
    net_cfg: &NetConfig,
    train_cfg: &TrainConfig,
) -> Result<(NetParams<f32>, TrainLog), NetError> {
    if train_cfg.epochs == 0 {
        return Err(NetError::InvalidConfig("epochs must be >= 1".into()));
    }
    if train_cfg.batch_size != 1 {
        return Err(NetError::InvalidConfig(format!(
            "batch_size {} unsupported; the training recipe uses 1",
            train_cfg.batch_size
        )));
    }
    if train_set.is_empty() {
        return Err(NetError::InvalidConfig("empty training set".into()));
    }
    for s in train_set {
        if s.mask.is_none() {
            return Err(NetError::InvalidConfig(format!(
                "training sample {} has no mask",
                s.id
            )));
        }
    }
    let mut rng = Rng::new(train_cfg.seed);
    let mut params = build_net::<f32>(net_cfg, &mut rng)?;
    let mut state = AdamState::new(&params);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=train_cfg.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for &i in &order {
            let s = &train_set[i];
            let res = backward(
                &params,
                &s.image.grid,
                s.mask.as_ref().unwrap(),
                true,
                &mut rng,
            )?;
            adam_step(&mut params, &res.grads, &mut state, train_cfg);
            loss_sum += res.loss;
        }
        let val_dice = validation_dice(&params, val_set)?;
        log.epochs.push(EpochStats {
            epoch,
            mean_loss: loss_sum / train_set.len() as f64,
            val_dice,
        });
        log::info!(
            "epoch {epoch}: mean loss {:.4}, val dice {:.4}",
            loss_sum / train_set.len() as f64,
            val_dice
        );
    }
    Ok((params, log))
}

/// Mean lesion-class Dice of predictions over the samples that carry a
/// ground-truth mask.
pub(crate) fn validation_dice(
    params: &NetParams<f32>,
    val_set: &[Sample],
) -> Result<f64, NetError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for s in val_set {
        let Some(mask) = &s.mask else { continue };
        let pred = predict_mask(params, &s.image.grid)?;
        total += mask_dice(&pred, mask, 1);
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volumes::{generate_phantom, PhantomConfig};

    fn tiny_dataset(n: usize, seed: u64) -> Vec<Sample> {
        let cfg = PhantomConfig {
            size: 16,
            lesion_radius_range: (2.0, 3.5),
            ..PhantomConfig::default()
        };
        let mut rng = Rng::new(seed);
        (0..n)
            .map(|i| generate_phantom(&cfg, &format!("p{i}"), &mut rng).unwrap())
            .collect()
    }

    #[test]
    fn zero_epochs_rejected() {
        let data = tiny_dataset(2, 1);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(train(&data, &data, &NetConfig::default(), &cfg).is_err());
    }

    #[test]
    fn batch_size_other_than_one_rejected() {
        let data = tiny_dataset(2, 1);
        let cfg = TrainConfig {
            batch_size: 4,
            epochs: 1,
            ..TrainConfig::default()
        };
        assert!(train(&data, &data, &NetConfig::default(), &cfg).is_err());
    }

    #[test]
    fn loss_decreases_over_epochs_on_a_tiny_problem() {
        let data = tiny_dataset(8, 2);
        let net_cfg = NetConfig {
            channels: vec![4, 8],
            levels: 2,
            ..NetConfig::default()
        };
        let cfg = TrainConfig {
            epochs: 4,
            learning_rate: 1e-3,
            seed: 3,
            ..TrainConfig::default()
        };
        let (_, log) = train(&data, &data, &net_cfg, &cfg).unwrap();
        let first = log.epochs.first().unwrap().mean_loss;
        let last = log.epochs.last().unwrap().mean_loss;
        assert!(
            last <= first,
            "loss did not decrease: {first} -> {last}"
        );
    }

    #[test]
    fn training_is_deterministic() {
        let data = tiny_dataset(3, 4);
        let net_cfg = NetConfig {
            channels: vec![2, 4],
            levels: 2,
            ..NetConfig::default()
        };
        let cfg = TrainConfig {
            epochs: 2,
            seed: 11,
            ..TrainConfig::default()
        };
        let (pa, la) = train(&data, &data, &net_cfg, &cfg).unwrap();
        let (pb, lb) = train(&data, &data, &net_cfg, &cfg).unwrap();
        for (a, b) in pa.convs.iter().zip(&pb.convs) {
            assert_eq!(a.kernel, b.kernel);
        }
        assert_eq!(
            serde_json::to_string(&la).unwrap(),
            serde_json::to_string(&lb).unwrap()
        );
    }
}
