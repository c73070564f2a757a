//! Inference-side operations: mask prediction, MC-dropout uncertainty and
//! FGSM input attacks.

use crate::tensor::rng::Rng;
use crate::tensor::{DType, Tensor};
use crate::volumes::Volume;

use super::loss::softmax;
use super::net::{backward, image_to_fm, run_forward, NetParams};
use super::scalar::Scalar;
use super::NetError;

/// Voxelwise argmax of the softmax (equivalently of the logits), dropout
/// inactive, ties broken toward the lower class index. Returns a rank-3
/// f32 label tensor.
pub fn predict_mask<S: Scalar>(params: &NetParams<S>, image: &Tensor) -> Result<Tensor, NetError> {
    params.config.check_extents(image.shape())?;
    let input = image_to_fm::<S>(image)?;
    let mut rng = Rng::new(0); // unused: dropout inactive
    let acts = run_forward(params, input, false, &mut rng);
    let logits = acts.outs.last().unwrap();
    let sp = logits.spatial();
    let mut labels = vec![0.0f32; sp];
    for v in 0..sp {
        let mut best = 0usize;
        let mut best_val = logits.data[v];
        for k in 1..logits.c {
            let val = logits.data[k * sp + v];
            if val > best_val {
                best_val = val;
                best = k;
            }
        }
        labels[v] = best as f32;
    }
    Ok(Tensor::from_f32(image.shape(), labels).unwrap())
}

/// MC-dropout uncertainty: run `n` stochastic forward passes with dropout
/// active and return the mean over voxels of the per-voxel variance of
/// the lesion-class (class 1) probability.
pub fn mc_dropout_score<S: Scalar>(
    params: &NetParams<S>,
    image: &Tensor,
    n: usize,
    rng: &mut Rng,
) -> Result<f64, NetError> {
    if n < 2 {
        return Err(NetError::McSamples(n));
    }
    params.config.check_extents(image.shape())?;
    let input = image_to_fm::<S>(image)?;
    let sp = input.spatial();
    let mut sum = vec![0.0f64; sp];
    let mut sumsq = vec![0.0f64; sp];
    for _ in 0..n {
        let acts = run_forward(params, input.clone(), true, rng);
        let probs = softmax(acts.outs.last().unwrap());
        let p1 = probs.channel(1);
        for v in 0..sp {
            let p = p1[v].to_f64();
            sum[v] += p;
            sumsq[v] += p * p;
        }
    }
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0f64;
    for v in 0..sp {
        let mean = sum[v] * inv_n;
        total += (sumsq[v] * inv_n - mean * mean).max(0.0);
    }
    Ok(total / sp as f64)
}

/// Fast gradient sign attack `x' = x + eps * sign(d dice_loss / d x)`.
///
/// The attacked label defaults to the network's own prediction so the
/// attack needs no ground truth; pass `target` to ascend against a known
/// mask instead. `sign(0) = 0`.
pub fn fgsm_attack<S: Scalar>(
    params: &NetParams<S>,
    image: &Volume,
    epsilon: f64,
    target: Option<&Tensor>,
) -> Result<Volume, NetError> {
    if epsilon < 0.0 {
        return Err(NetError::NegativeEpsilon(epsilon));
    }
    let label = match target {
        Some(t) => t.clone(),
        None => predict_mask(params, &image.grid)?,
    };
    let mut rng = Rng::new(0); // dropout inactive
    let res = backward(params, &image.grid, &label, false, &mut rng)?;
    let grad = res.grads.input;
    let n = image.grid.len();
    let out = match image.grid.dtype() {
        DType::F32 => {
            let mut data = Vec::with_capacity(n);
            for i in 0..n {
                let g = grad.value(i);
                let step = if g > 0.0 {
                    epsilon
                } else if g < 0.0 {
                    -epsilon
                } else {
                    0.0
                };
                data.push((image.grid.value(i) + step) as f32);
            }
            Tensor::from_f32(image.grid.shape(), data).unwrap()
        }
        DType::F64 => {
            let mut data = Vec::with_capacity(n);
            for i in 0..n {
                let g = grad.value(i);
                let step = if g > 0.0 {
                    epsilon
                } else if g < 0.0 {
                    -epsilon
                } else {
                    0.0
                };
                data.push(image.grid.value(i) + step);
            }
            Tensor::from_f64(image.grid.shape(), data).unwrap()
        }
    };
    Ok(Volume::new(out)?)
}

/// Dice overlap of one class between two label masks, both-empty = 1.
pub(crate) fn mask_dice(pred: &Tensor, gt: &Tensor, class: usize) -> f64 {
    let mut inter = 0usize;
    let mut a = 0usize;
    let mut b = 0usize;
    let c = class as f64;
    for i in 0..pred.len() {
        let pa = (pred.value(i) - c).abs() < 0.5;
        let pb = (gt.value(i) - c).abs() < 0.5;
        a += pa as usize;
        b += pb as usize;
        inter += (pa && pb) as usize;
    }
    if a + b == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (a + b) as f64
    }
}
