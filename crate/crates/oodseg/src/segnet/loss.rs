//! Soft Dice loss over softmax probabilities.

use crate::tensor::Tensor;

use super::ops::Fm;
use super::scalar::Scalar;
use super::NetError;

pub(crate) const DICE_EPSILON: f64 = 1e-5;

/// Decode a label mask into u8 labels, validating the range.
pub(crate) fn labels_from_mask(mask: &Tensor, classes: usize) -> Result<Vec<u8>, NetError> {
    let mut labels = Vec::with_capacity(mask.len());
    for i in 0..mask.len() {
        let v = mask.value(i);
        let r = v.round();
        if (v - r).abs() > 1e-6 || r < 0.0 || r >= classes as f64 {
            return Err(NetError::LabelOutOfRange { value: v, classes });
        }
        labels.push(r as u8);
    }
    Ok(labels)
}

/// Per-voxel softmax over the channel dimension.
pub(crate) fn softmax<S: Scalar>(logits: &Fm<S>) -> Fm<S> {
    let sp = logits.spatial();
    let c = logits.c;
    let mut probs = Fm::zeros(c, logits.h, logits.w, logits.d);
    for v in 0..sp {
        let mut maxv = logits.data[v].to_f64();
        for k in 1..c {
            maxv = maxv.max(logits.data[k * sp + v].to_f64());
        }
        let mut denom = 0.0f64;
        for k in 0..c {
            denom += (logits.data[k * sp + v].to_f64() - maxv).exp();
        }
        for k in 0..c {
            let e = (logits.data[k * sp + v].to_f64() - maxv).exp();
            probs.data[k * sp + v] = S::from_f64(e / denom);
        }
    }
    probs
}

/// Soft Dice loss `1 - mean_c (2 sum(p t) + eps) / (sum(p) + sum(t) + eps)`
/// and the softmax probabilities needed by the backward pass.
pub(crate) fn dice_forward<S: Scalar>(
    logits: &Fm<S>,
    labels: &[u8],
    classes: usize,
) -> (f64, Fm<S>) {
    let probs = softmax(logits);
    let loss = dice_loss_from_probs(&probs, labels, classes);
    (loss, probs)
}

pub(crate) fn dice_loss_from_probs<S: Scalar>(probs: &Fm<S>, labels: &[u8], classes: usize) -> f64 {
    let sp = probs.spatial();
    let mut sum_p = vec![0.0f64; classes];
    let mut sum_t = vec![0.0f64; classes];
    let mut sum_pt = vec![0.0f64; classes];
    for k in 0..classes {
        let pc = probs.channel(k);
        let mut sp_acc = 0.0;
        let mut pt_acc = 0.0;
        for v in 0..sp {
            let p = pc[v].to_f64();
            sp_acc += p;
            if labels[v] as usize == k {
                pt_acc += p;
            }
        }
        sum_p[k] = sp_acc;
        sum_pt[k] = pt_acc;
    }
    for &t in labels {
        sum_t[t as usize] += 1.0;
    }
    let mut dice = 0.0;
    for k in 0..classes {
        dice += (2.0 * sum_pt[k] + DICE_EPSILON) / (sum_p[k] + sum_t[k] + DICE_EPSILON);
    }
    1.0 - dice / classes as f64
}

/// Gradient of the Dice loss with respect to the logits, through softmax.
pub(crate) fn dice_backward_from_probs<S: Scalar>(
    probs: &Fm<S>,
    labels: &[u8],
    classes: usize,
) -> Fm<S> {
    let sp = probs.spatial();
    let mut sum_p = vec![0.0f64; classes];
    let mut sum_t = vec![0.0f64; classes];
    let mut sum_pt = vec![0.0f64; classes];
    for k in 0..classes {
        let pc = probs.channel(k);
        for v in 0..sp {
            let p = pc[v].to_f64();
            sum_p[k] += p;
            if labels[v] as usize == k {
                sum_pt[k] += p;
            }
        }
    }
    for &t in labels {
        sum_t[t as usize] += 1.0;
    }
    // dLoss/dp_kv, then chain through softmax:
    // dlogit_k = p_k (g_k - sum_j g_j p_j)
    let inv_c = 1.0 / classes as f64;
    let denom: Vec<f64> = (0..classes)
        .map(|k| sum_p[k] + sum_t[k] + DICE_EPSILON)
        .collect();
    let numer: Vec<f64> = (0..classes).map(|k| 2.0 * sum_pt[k] + DICE_EPSILON).collect();
    let mut dlogits = Fm::zeros(classes, probs.h, probs.w, probs.d);
    for v in 0..sp {
        let mut g = [0.0f64; 16];
        debug_assert!(classes <= 16);
        let mut dot_gp = 0.0f64;
        for k in 0..classes {
            let t = (labels[v] as usize == k) as u8 as f64;
            g[k] = -inv_c * (2.0 * t * denom[k] - numer[k]) / (denom[k] * denom[k]);
            dot_gp += g[k] * probs.data[k * sp + v].to_f64();
        }
        for k in 0..classes {
            let p = probs.data[k * sp + v].to_f64();
            dlogits.data[k * sp + v] = S::from_f64(p * (g[k] - dot_gp));
        }
    }
    dlogits
}

/// Public Dice-loss entry point on tensors: logits are C x H x W x D,
/// the target a rank-3 label mask.
pub fn dice_loss(logits: &Tensor, target: &Tensor) -> Result<f64, NetError> {
    if logits.rank() != 4 {
        return Err(NetError::ShapeMismatch {
            mask: target.shape().to_vec(),
            logits: logits.shape().to_vec(),
        });
    }
    let classes = logits.shape()[0];
    if target.shape() != &logits.shape()[1..] {
        return Err(NetError::ShapeMismatch {
            mask: target.shape().to_vec(),
            logits: logits.shape().to_vec(),
        });
    }
    let labels = labels_from_mask(target, classes)?;
    let fm = Fm {
        c: classes,
        h: logits.shape()[1],
        w: logits.shape()[2],
        d: logits.shape()[3],
        data: logits.to_f64_vec(),
    };
    let (loss, _) = dice_forward(&fm, &labels, classes);
    Ok(loss)
}
