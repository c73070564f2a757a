//! Transformation-shift generators: ten strength-parameterized corruption
//! operators over volumes, plus the suite driver that corrupts a whole
//! test set and writes it back as datasets.
//!
//! Image-space kinds (bias, noise, gamma, truncation, downsample, scaling,
//! registration) reproduce the input exactly at their identity strength.
//! k-space kinds (ghost, spikes, motion) round-trip through the unitary
//! FFT and stay within 1e-5 of the input at identity strength. Geometric
//! kinds (scaling, registration, truncation, downsample) transform the
//! segmentation mask with the same parameters using nearest-neighbor
//! sampling.

mod resample;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::fft::{fft3, ifft3_complex};
use crate::tensor::rng::{derive_seed, Rng};
use crate::tensor::{DType, Tensor, TensorError};
use crate::volumes::{
    save_manifest, write_vtf, DatasetManifest, Group, ManifestEntry, Sample, TransformKind,
    Volume, VolumeError,
};

use resample::{resample, Rigid};

/// k-space plane period of the ghosting artifact.
const GHOST_PERIOD: usize = 4;
/// Spike magnitude as a fraction of the spectrum maximum.
const SPIKE_AMPLITUDE: f64 = 0.5;
/// Fixed rigid-perturbation scales of the motion composites.
const MOTION_SIGMA_TRANSLATION: f64 = 1.5;
const MOTION_SIGMA_ROTATION: f64 = 0.05;

#[derive(Debug, Error)]
pub enum CorruptionError {
    #[error("invalid strength {strength} for {kind}: requires {requirement}")]
    InvalidStrength {
        kind: CorruptionKind,
        strength: f64,
        requirement: &'static str,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("sample {id:?}: {source}")]
    Sample {
        id: String,
        #[source]
        source: Box<CorruptionError>,
    },
}

macro_rules! corruption_kinds {
    ($($variant:ident => $tag:literal),+ $(,)?) => {
        /// The ten transformation-shift operators.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum CorruptionKind {
            $($variant),+
        }

        impl CorruptionKind {
            pub const ALL: &'static [CorruptionKind] = &[$(CorruptionKind::$variant),+];

            pub fn tag(&self) -> &'static str {
                match self {
                    $(CorruptionKind::$variant => $tag),+
                }
            }

            pub fn from_tag(s: &str) -> Option<CorruptionKind> {
                match s {
                    $($tag => Some(CorruptionKind::$variant),)+
                    _ => None,
                }
            }
        }
    };
}

corruption_kinds! {
    Bias => "bias",
    Motion => "motion",
    Ghost => "ghost",
    Spikes => "spikes",
    Downsample => "downsample",
    Noise => "noise",
    Scaling => "scaling",
    Registration => "registration",
    Gamma => "gamma",
    Truncation => "truncation",
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl From<CorruptionKind> for TransformKind {
    fn from(k: CorruptionKind) -> TransformKind {
        match k {
            CorruptionKind::Bias => TransformKind::Bias,
            CorruptionKind::Motion => TransformKind::Motion,
            CorruptionKind::Ghost => TransformKind::Ghost,
            CorruptionKind::Spikes => TransformKind::Spikes,
            CorruptionKind::Downsample => TransformKind::Downsample,
            CorruptionKind::Noise => TransformKind::Noise,
            CorruptionKind::Scaling => TransformKind::Scaling,
            CorruptionKind::Registration => TransformKind::Registration,
            CorruptionKind::Gamma => TransformKind::Gamma,
            CorruptionKind::Truncation => TransformKind::Truncation,
        }
    }
}

impl Serialize for CorruptionKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.tag())
    }
}

impl<'de> Deserialize<'de> for CorruptionKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        CorruptionKind::from_tag(&s)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown corruption kind {s:?}")))
    }
}

/// One corruption instance: kind, strength and seed. Applications are
/// deterministic functions of this triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub strength: f64,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, strength: f64, seed: u64) -> CorruptionSpec {
        CorruptionSpec {
            kind,
            strength,
            seed,
        }
    }

    fn validate(&self) -> Result<(), CorruptionError> {
        use CorruptionKind::*;
        let s = self.strength;
        let bad = |requirement| {
            Err(CorruptionError::InvalidStrength {
                kind: self.kind,
                strength: s,
                requirement,
            })
        };
        if !s.is_finite() {
            return bad("a finite value");
        }
        match self.kind {
            Bias | Noise | Registration => {
                if s < 0.0 {
                    return bad("strength >= 0");
                }
            }
            Gamma | Scaling => {
                if s <= 0.0 {
                    return bad("strength > 0");
                }
            }
            Downsample => {
                if s < 1.0 {
                    return bad("strength >= 1 (plane period)");
                }
            }
            Ghost => {
                if !(0.0..=1.0).contains(&s) {
                    return bad("strength in [0, 1]");
                }
            }
            Spikes | Motion => {
                if s < 0.0 {
                    return bad("a non-negative count");
                }
            }
            Truncation => {}
        }
        Ok(())
    }

    /// True when masks must be resampled along with the image.
    pub fn is_geometric(&self) -> bool {
        matches!(
            self.kind,
            CorruptionKind::Scaling
                | CorruptionKind::Registration
                | CorruptionKind::Truncation
                | CorruptionKind::Downsample
        )
    }
}

/// Apply a corruption to a bare volume.
pub fn apply_corruption(spec: &CorruptionSpec, v: &Volume) -> Result<Volume, CorruptionError> {
    let (image, _) = apply_impl(spec, &v.grid, None)?;
    Ok(Volume::new(image)?)
}

/// Apply a corruption to a sample, carrying the mask along (transformed
/// for geometric kinds, copied otherwise) and tagging the group.
pub fn apply_to_sample(spec: &CorruptionSpec, sample: &Sample) -> Result<Sample, CorruptionError> {
    let wrap = |source: CorruptionError| CorruptionError::Sample {
        id: sample.id.clone(),
        source: Box::new(source),
    };
    let (image, mask) = apply_impl(spec, &sample.image.grid, sample.mask.as_ref()).map_err(wrap)?;
    let out = Sample::new(
        format!("{}-{}", sample.id, spec.kind.tag()),
        Volume::new(image).map_err(|e| wrap(e.into()))?,
        mask,
        Group::Transform(spec.kind.into()),
    )
    .map_err(|e| wrap(e.into()))?;
    Ok(out)
}

fn apply_impl(
    spec: &CorruptionSpec,
    image: &Tensor,
    mask: Option<&Tensor>,
) -> Result<(Tensor, Option<Tensor>), CorruptionError> {
    spec.validate()?;
    if image.rank() != 3 {
        return Err(TensorError::RankMismatch {
            expected: 3,
            got: image.rank(),
        }
        .into());
    }
    if !image.all_finite() {
        return Err(TensorError::NonFinite {
            op: "apply_corruption",
        }
        .into());
    }
    let shape = image.shape().to_vec();
    let grid = image.to_f64_vec();
    let mut rng = Rng::new(spec.seed);
    let s = spec.strength;

    // Geometric kinds produce a coordinate map reused for the mask.
    let out: Vec<f64>;
    let mut mask_out: Option<Tensor> = mask.cloned();
    match spec.kind {
        CorruptionKind::Bias => {
            let mut coeffs = [0.0f64; 10];
            for c in &mut coeffs {
                *c = s * rng.normal();
            }
            out = bias_field(&grid, &shape, &coeffs);
        }
        CorruptionKind::Noise => {
            out = grid.iter().map(|x| x + s * rng.normal()).collect();
        }
        CorruptionKind::Gamma => {
            if s == 1.0 {
                out = grid;
            } else {
                let lo = grid.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if hi > lo {
                    let range = hi - lo;
                    out = grid
                        .iter()
                        .map(|x| ((x - lo) / range).powf(s) * range + lo)
                        .collect();
                } else {
                    out = grid;
                }
            }
        }
        CorruptionKind::Truncation => {
            let half = shape[0] / 2;
            let plane = shape[1] * shape[2];
            let mut v = grid;
            v[half * plane..].fill(0.0);
            out = v;
            if let Some(m) = mask {
                let mut mv = m.to_f64_vec();
                mv[half * plane..].fill(0.0);
                mask_out = Some(tensor_like(m, &shape, mv));
            }
        }
        CorruptionKind::Downsample => {
            let axis = rng.below(3);
            let k = s.floor() as usize;
            out = subsample_repeat(&grid, &shape, axis, k);
            if let Some(m) = mask {
                let mv = subsample_repeat(&m.to_f64_vec(), &shape, axis, k);
                mask_out = Some(tensor_like(m, &shape, mv));
            }
        }
        CorruptionKind::Scaling => {
            let center = [
                (shape[0] as f64 - 1.0) / 2.0,
                (shape[1] as f64 - 1.0) / 2.0,
                (shape[2] as f64 - 1.0) / 2.0,
            ];
            let map = |p: [f64; 3]| {
                [
                    center[0] + (p[0] - center[0]) / s,
                    center[1] + (p[1] - center[1]) / s,
                    center[2] + (p[2] - center[2]) / s,
                ]
            };
            out = resample(&grid, &shape, map, true);
            if let Some(m) = mask {
                let mv = resample(&m.to_f64_vec(), &shape, map, false);
                mask_out = Some(tensor_like(m, &shape, mv));
            }
        }
        CorruptionKind::Registration => {
            let trans = [s * rng.normal(), s * rng.normal(), s * rng.normal()];
            let angles = [s * rng.normal(), s * rng.normal(), s * rng.normal()];
            let rigid = Rigid::new(angles, trans, &shape);
            out = resample(&grid, &shape, |p| rigid.map(p), true);
            if let Some(m) = mask {
                let mv = resample(&m.to_f64_vec(), &shape, |p| rigid.map(p), false);
                mask_out = Some(tensor_like(m, &shape, mv));
            }
        }
        CorruptionKind::Ghost => {
            let axis = rng.below(3);
            let tensor_in = Tensor::from_f64(&shape, grid)?;
            let mut spectrum = fft3(&tensor_in)?;
            let factor = 1.0 - s;
            let dims = [shape[0], shape[1], shape[2]];
            for h in 0..dims[0] {
                for w in 0..dims[1] {
                    for d in 0..dims[2] {
                        let plane = [h, w, d][axis];
                        // every GHOST_PERIOD-th plane, DC plane preserved
                        if plane != 0 && plane % GHOST_PERIOD == 0 {
                            let idx = (h * dims[1] + w) * dims[2] + d;
                            spectrum.re[idx] *= factor;
                            spectrum.im[idx] *= factor;
                        }
                    }
                }
            }
            out = ifft3_complex(&spectrum)?.re;
        }
        CorruptionKind::Spikes => {
            let count = s.floor() as usize;
            let tensor_in = Tensor::from_f64(&shape, grid)?;
            let mut spectrum = fft3(&tensor_in)?;
            if count > 0 {
                let max_mag = (0..spectrum.len())
                    .map(|i| (spectrum.re[i] * spectrum.re[i] + spectrum.im[i] * spectrum.im[i]).sqrt())
                    .fold(0.0f64, f64::max);
                let magnitude = SPIKE_AMPLITUDE * max_mag;
                for _ in 0..count {
                    let h = rng.below(shape[0]);
                    let w = rng.below(shape[1]);
                    let d = rng.below(shape[2]);
                    let theta = rng.uniform_range(0.0, 2.0 * std::f64::consts::PI);
                    let idx = (h * shape[1] + w) * shape[2] + d;
                    spectrum.re[idx] += magnitude * theta.cos();
                    spectrum.im[idx] += magnitude * theta.sin();
                }
            }
            out = ifft3_complex(&spectrum)?.re;
        }
        CorruptionKind::Motion => {
            let copies = s.floor() as usize;
            let tensor_in = Tensor::from_f64(&shape, grid.clone())?;
            let mut avg = fft3(&tensor_in)?;
            for _ in 0..copies {
                let trans = [
                    MOTION_SIGMA_TRANSLATION * rng.normal(),
                    MOTION_SIGMA_TRANSLATION * rng.normal(),
                    MOTION_SIGMA_TRANSLATION * rng.normal(),
                ];
                let angles = [
                    MOTION_SIGMA_ROTATION * rng.normal(),
                    MOTION_SIGMA_ROTATION * rng.normal(),
                    MOTION_SIGMA_ROTATION * rng.normal(),
                ];
                let rigid = Rigid::new(angles, trans, &shape);
                let moved = resample(&grid, &shape, |p| rigid.map(p), true);
                let moved_spec = fft3(&Tensor::from_f64(&shape, moved)?)?;
                for i in 0..avg.len() {
                    avg.re[i] += moved_spec.re[i];
                    avg.im[i] += moved_spec.im[i];
                }
            }
            let scale = 1.0 / (copies as f64 + 1.0);
            for i in 0..avg.len() {
                avg.re[i] *= scale;
                avg.im[i] *= scale;
            }
            out = ifft3_complex(&avg)?.re;
        }
    }
    Ok((tensor_like(image, &shape, out), mask_out))
}

/// Materialize f64 results with the dtype of the source tensor.
fn tensor_like(like: &Tensor, shape: &[usize], data: Vec<f64>) -> Tensor {
    match like.dtype() {
        DType::F32 => {
            Tensor::from_f32(shape, data.into_iter().map(|x| x as f32).collect()).unwrap()
        }
        DType::F64 => Tensor::from_f64(shape, data).unwrap(),
    }
}

fn bias_field(grid: &[f64], shape: &[usize], coeffs: &[f64; 10]) -> Vec<f64> {
    let norm = |i: usize, n: usize| {
        if n > 1 {
            2.0 * i as f64 / (n as f64 - 1.0) - 1.0
        } else {
            0.0
        }
    };
    let mut out = Vec::with_capacity(grid.len());
    let mut idx = 0;
    for h in 0..shape[0] {
        let x = norm(h, shape[0]);
        for w in 0..shape[1] {
            let y = norm(w, shape[1]);
            for d in 0..shape[2] {
                let z = norm(d, shape[2]);
                let p = coeffs[0]
                    + coeffs[1] * x
                    + coeffs[2] * y
                    + coeffs[3] * z
                    + coeffs[4] * x * x
                    + coeffs[5] * y * y
                    + coeffs[6] * z * z
                    + coeffs[7] * x * y
                    + coeffs[8] * x * z
                    + coeffs[9] * y * z;
                out.push(grid[idx] * p.exp());
                idx += 1;
            }
        }
    }
    out
}

/// Keep every k-th plane along `axis` and repeat it to restore extents.
fn subsample_repeat(grid: &[f64], shape: &[usize], axis: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    for h in 0..shape[0] {
        for w in 0..shape[1] {
            for d in 0..shape[2] {
                let mut src = [h, w, d];
                src[axis] = (src[axis] / k) * k;
                out[(h * shape[1] + w) * shape[2] + d] =
                    grid[(src[0] * shape[1] + src[1]) * shape[2] + src[2]];
            }
        }
    }
    out
}

/// Corrupt every sample of a test manifest once per kind, writing volumes
/// and per-kind manifests under `out_dir/transform-<kind>/`.
///
/// Per-sample seeds are derived from the suite seed, the kind index and
/// the sample index, so the suite is deterministic and parallel-safe.
pub fn corruption_suite(
    test: &DatasetManifest,
    manifest_dir: &Path,
    strengths: &BTreeMap<CorruptionKind, f64>,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<DatasetManifest>, CorruptionError> {
    if strengths.is_empty() {
        log::warn!("corruption_suite called with an empty strength table; nothing to generate");
        return Ok(Vec::new());
    }
    let mut manifests = Vec::new();
    for (kind_idx, (&kind, &strength)) in strengths.iter().enumerate() {
        let kind_seed = derive_seed(seed, kind_idx as u64);
        let dataset_name = format!("transform-{}", kind.tag());
        let dir = out_dir.join(&dataset_name);
        std::fs::create_dir_all(&dir).map_err(|source| {
            CorruptionError::Volume(VolumeError::Io {
                path: dir.clone(),
                source,
            })
        })?;
        let entries: Vec<Result<ManifestEntry, CorruptionError>> = test
            .samples
            .par_iter()
            .enumerate()
            .map(|(i, entry)| {
                let spec = CorruptionSpec::new(kind, strength, derive_seed(kind_seed, i as u64));
                let sample = DatasetManifest::load_sample(manifest_dir, entry).map_err(|e| {
                    CorruptionError::Sample {
                        id: entry.id.clone(),
                        source: Box::new(e.into()),
                    }
                })?;
                let corrupted = apply_to_sample(&spec, &sample)?;
                let image_path = format!("{}.vtf", corrupted.id);
                write_vtf(&corrupted.image.grid, dir.join(&image_path)).map_err(|e| {
                    CorruptionError::Sample {
                        id: corrupted.id.clone(),
                        source: Box::new(e.into()),
                    }
                })?;
                let mask_path = match &corrupted.mask {
                    Some(m) => {
                        let p = format!("{}_mask.vtf", corrupted.id);
                        write_vtf(m, dir.join(&p)).map_err(|e| CorruptionError::Sample {
                            id: corrupted.id.clone(),
                            source: Box::new(e.into()),
                        })?;
                        Some(p.into())
                    }
                    None => None,
                };
                Ok(ManifestEntry {
                    id: corrupted.id,
                    image_path: image_path.into(),
                    mask_path,
                    group: corrupted.group,
                })
            })
            .collect();
        let samples = entries.into_iter().collect::<Result<Vec<_>, _>>()?;
        let manifest = DatasetManifest {
            name: dataset_name,
            seed: kind_seed,
            generator_config: test.generator_config.clone(),
            samples,
        };
        save_manifest(&manifest, dir.join("manifest.json"))?;
        manifests.push(manifest);
    }
    Ok(manifests)
}

#[cfg(test)]
mod tests;
