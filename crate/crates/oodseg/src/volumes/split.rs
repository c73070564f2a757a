//! Deterministic train/calibration/test splitting.

use crate::tensor::rng::Rng;

use super::{Group, ManifestEntry, VolumeError};

/// Split manifest entries into disjoint train/calibration/test folds.
///
/// Fractions must be positive and sum to 1 within 1e-9. Fold sizes are
/// `round(f * n)` for the first two folds and the remainder for the
/// third, so paper-shaped fractions reproduce exact counts. The split is
/// shuffled and deterministic for a given generator state; fold groups
/// are rewritten to Train/Calibration/TestId.
pub fn split_dataset(
    entries: &[ManifestEntry],
    fractions: (f64, f64, f64),
    rng: &mut Rng,
) -> Result<(Vec<ManifestEntry>, Vec<ManifestEntry>, Vec<ManifestEntry>), VolumeError> {
    let (ft, fc, fe) = fractions;
    if ft <= 0.0 || fc <= 0.0 || fe <= 0.0 {
        return Err(VolumeError::InvalidFractions(format!(
            "all fractions must be positive, got {fractions:?}"
        )));
    }
    if (ft + fc + fe - 1.0).abs() > 1e-9 {
        return Err(VolumeError::InvalidFractions(format!(
            "fractions must sum to 1, got {}",
            ft + fc + fe
        )));
    }
    let n = entries.len();
    let n_train = (ft * n as f64).round() as usize;
    let n_calib = (fc * n as f64).round() as usize;
    if n_train + n_calib > n {
        return Err(VolumeError::EmptyFold("test"));
    }
    let n_test = n - n_train - n_calib;
    if n_train == 0 {
        return Err(VolumeError::EmptyFold("train"));
    }
    if n_calib == 0 {
        return Err(VolumeError::EmptyFold("calibration"));
    }
    if n_test == 0 {
        return Err(VolumeError::EmptyFold("test"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let take = |range: std::ops::Range<usize>, group: Group| {
        order[range]
            .iter()
            .map(|&i| {
                let mut e = entries[i].clone();
                e.group = group;
                e
            })
            .collect::<Vec<_>>()
    };
    Ok((
        take(0..n_train, Group::Train),
        take(n_train..n_train + n_calib, Group::Calibration),
        take(n_train + n_calib..n, Group::TestId),
    ))
}
