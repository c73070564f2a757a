//! Volume and dataset data model: samples, groups, manifests, the VTF
//! on-disk format, and the synthetic phantom generators that provide
//! in-distribution, control and OOD datasets.

mod manifest;
mod phantom;
mod split;
mod vtf;

pub use manifest::{load_manifest, save_manifest, DatasetManifest, ManifestEntry};
pub use phantom::{generate_control, generate_ood_family, generate_phantom, OodFamily};
pub use split::split_dataset;
pub use vtf::{read_vtf, write_vtf};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad magic: expected \"VTF1\"")]
    BadMagic,
    #[error("unsupported dtype code {0}")]
    BadDType(u8),
    #[error("rank {0} exceeds the supported maximum of 8")]
    RankTooLarge(u8),
    #[error("truncated payload: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("extent product overflows")]
    ExtentOverflow,
    #[error("reserved header field must be zero")]
    BadReserved,
    #[error("manifest parse error: {0}")]
    ManifestParse(#[from] serde_json::Error),
    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),
    #[error("unknown group {got:?}; valid groups: {valid}")]
    UnknownGroup { got: String, valid: String },
    #[error("sample {id:?}: referenced path {path} does not exist")]
    DanglingPath { id: String, path: PathBuf },
    #[error("invalid phantom config: {0}")]
    InvalidConfig(String),
    #[error("could not place lesion inside the brain after {0} attempts")]
    LesionPlacement(usize),
    #[error("invalid split fractions: {0}")]
    InvalidFractions(String),
    #[error("split would leave an empty fold ({0})")]
    EmptyFold(&'static str),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("mask shape {mask:?} does not match image shape {image:?}")]
    MaskShape { mask: Vec<usize>, image: Vec<usize> },
}

/// A 3D intensity volume (H x W x D, arbitrary real units).
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub grid: Tensor,
    pub intensity_range_hint: Option<(f64, f64)>,
}

impl Volume {
    pub fn new(grid: Tensor) -> Result<Volume, VolumeError> {
        if grid.rank() != 3 {
            return Err(TensorError::RankMismatch {
                expected: 3,
                got: grid.rank(),
            }
            .into());
        }
        if grid.shape().iter().any(|&e| e < 4) {
            return Err(VolumeError::InvalidConfig(format!(
                "volume extents must be >= 4, got {:?}",
                grid.shape()
            )));
        }
        if !grid.all_finite() {
            return Err(TensorError::NonFinite { op: "Volume::new" }.into());
        }
        Ok(Volume {
            grid,
            intensity_range_hint: None,
        })
    }

    pub fn shape(&self) -> &[usize] {
        self.grid.shape()
    }
}

macro_rules! kind_enum {
    ($name:ident { $($variant:ident => $tag:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn tag(&self) -> &'static str {
                match self {
                    $($name::$variant => $tag),+
                }
            }

            pub fn from_tag(s: &str) -> Option<$name> {
                match s {
                    $($tag => Some($name::$variant),)+
                    _ => None,
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.tag())
            }
        }
    };
}

kind_enum!(TransformKind {
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
    Adversarial => "adversarial",
});

kind_enum!(DiagnosisKind {
    Ring => "ring",
    Healthy => "healthy",
});

kind_enum!(ModalityKind {
    Inverted => "inverted",
});

kind_enum!(FarOodKind {
    Noise => "noise",
    Geometry => "geometry",
});

/// Dataset membership of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    Train,
    Calibration,
    TestId,
    Control,
    Transform(TransformKind),
    Diagnosis(DiagnosisKind),
    Modality(ModalityKind),
    FarOod(FarOodKind),
}

impl Group {
    pub const VALID_DESCRIPTION: &'static str = "train, calibration, test-id, control, \
         transform:<bias|motion|ghost|spikes|downsample|noise|scaling|registration|gamma|truncation|adversarial>, \
         diagnosis:<ring|healthy>, modality:<inverted>, far-ood:<noise|geometry>";

    /// True for groups whose samples are scored against Test-ID.
    pub fn is_ood(&self) -> bool {
        matches!(
            self,
            Group::Transform(_) | Group::Diagnosis(_) | Group::Modality(_) | Group::FarOod(_)
        )
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Group::Train => write!(f, "train"),
            Group::Calibration => write!(f, "calibration"),
            Group::TestId => write!(f, "test-id"),
            Group::Control => write!(f, "control"),
            Group::Transform(k) => write!(f, "transform:{k}"),
            Group::Diagnosis(k) => write!(f, "diagnosis:{k}"),
            Group::Modality(k) => write!(f, "modality:{k}"),
            Group::FarOod(k) => write!(f, "far-ood:{k}"),
        }
    }
}

impl FromStr for Group {
    type Err = VolumeError;

    fn from_str(s: &str) -> Result<Group, VolumeError> {
        let unknown = || VolumeError::UnknownGroup {
            got: s.to_string(),
            valid: Group::VALID_DESCRIPTION.to_string(),
        };
        match s {
            "train" => return Ok(Group::Train),
            "calibration" => return Ok(Group::Calibration),
            "test-id" => return Ok(Group::TestId),
            "control" => return Ok(Group::Control),
            _ => {}
        }
        let (head, tail) = s.split_once(':').ok_or_else(unknown)?;
        match head {
            "transform" => TransformKind::from_tag(tail).map(Group::Transform),
            "diagnosis" => DiagnosisKind::from_tag(tail).map(Group::Diagnosis),
            "modality" => ModalityKind::from_tag(tail).map(Group::Modality),
            "far-ood" => FarOodKind::from_tag(tail).map(Group::FarOod),
            _ => None,
        }
        .ok_or_else(unknown)
    }
}

impl Serialize for Group {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Group {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Group, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One volume with optional ground truth and identity metadata.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub image: Volume,
    /// Class labels in {0..C-1}, same extents as the image.
    pub mask: Option<Tensor>,
    pub group: Group,
}

impl Sample {
    pub fn new(
        id: impl Into<String>,
        image: Volume,
        mask: Option<Tensor>,
        group: Group,
    ) -> Result<Sample, VolumeError> {
        if let Some(m) = &mask {
            if m.shape() != image.shape() {
                return Err(VolumeError::MaskShape {
                    mask: m.shape().to_vec(),
                    image: image.shape().to_vec(),
                });
            }
        }
        Ok(Sample {
            id: id.into(),
            image,
            mask,
            group,
        })
    }
}

/// Phantom generator parameters: an ellipsoidal "brain" with one bright
/// spherical "lesion", plus additive Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    /// Cubic extent; must be a power of two so k-space corruptions apply.
    pub size: usize,
    /// Ellipsoid semi-axes as fractions of the extent, each in (0, 0.5].
    pub brain_axes: [f64; 3],
    /// Lesion radius range in voxels.
    pub lesion_radius_range: (f64, f64),
    /// Lesion intensity above the brain intensity.
    pub lesion_contrast: f64,
    pub background_noise_sigma: f64,
    /// Noise level of the far-OOD pure-noise family.
    pub far_noise_sigma: f64,
    /// Segmentation classes; 0 is background, 1 the lesion.
    pub class_count: usize,
    /// Intensity offset applied to control samples.
    pub control_offset: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            size: 32,
            brain_axes: [0.42, 0.38, 0.34],
            lesion_radius_range: (2.5, 5.0),
            lesion_contrast: 0.3,
            background_noise_sigma: 0.05,
            far_noise_sigma: 1.0,
            class_count: 2,
            control_offset: 0.02,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<(), VolumeError> {
        let err = |m: String| Err(VolumeError::InvalidConfig(m));
        if self.size < 4 || !self.size.is_power_of_two() {
            return err(format!("size must be a power of two >= 4, got {}", self.size));
        }
        if self.brain_axes.iter().any(|&a| a <= 0.0 || a > 0.5) {
            return err(format!("brain_axes must lie in (0, 0.5], got {:?}", self.brain_axes));
        }
        let (lo, hi) = self.lesion_radius_range;
        if lo <= 0.0 || hi < lo {
            return err(format!("lesion_radius_range must be positive and ordered, got {:?}", (lo, hi)));
        }
        let min_axis = self.brain_axes.iter().cloned().fold(f64::INFINITY, f64::min);
        if hi >= min_axis * self.size as f64 {
            return err(format!(
                "max lesion radius {hi} does not fit inside the smallest semi-axis {}",
                min_axis * self.size as f64
            ));
        }
        if self.class_count < 2 {
            return err(format!("class_count must be >= 2, got {}", self.class_count));
        }
        if self.background_noise_sigma < 0.0 || self.far_noise_sigma < 0.0 {
            return err("noise sigmas must be non-negative".to_string());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_string_round_trip() {
        let groups = [
            Group::Train,
            Group::Calibration,
            Group::TestId,
            Group::Control,
            Group::Transform(TransformKind::Gamma),
            Group::Transform(TransformKind::Adversarial),
            Group::Diagnosis(DiagnosisKind::Healthy),
            Group::Modality(ModalityKind::Inverted),
            Group::FarOod(FarOodKind::Geometry),
        ];
        for g in groups {
            let s = g.to_string();
            let back: Group = s.parse().unwrap();
            assert_eq!(g, back);
        }
    }

    #[test]
    fn unknown_group_lists_valid_groups() {
        let err = "warp:9000".parse::<Group>().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("warp:9000"));
        assert!(msg.contains("far-ood"));
        assert!(msg.contains("transform"));
    }

    #[test]
    fn default_config_is_valid() {
        PhantomConfig::default().validate().unwrap();
    }

    #[test]
    fn config_rejects_bad_axes_and_radius() {
        let mut cfg = PhantomConfig::default();
        cfg.brain_axes = [0.6, 0.4, 0.4];
        assert!(cfg.validate().is_err());
        let mut cfg = PhantomConfig::default();
        cfg.lesion_radius_range = (2.0, 100.0);
        assert!(cfg.validate().is_err());
        let mut cfg = PhantomConfig::default();
        cfg.size = 24;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn mask_extents_must_match() {
        let img = Volume::new(Tensor::zeros(&[8, 8, 8], crate::tensor::DType::F32)).unwrap();
        let mask = Tensor::zeros(&[8, 8, 4], crate::tensor::DType::F32);
        assert!(Sample::new("x", img, Some(mask), Group::Train).is_err());
    }
}
