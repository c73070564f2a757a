//! Feature-based out-of-distribution detection for volumetric segmentation.
//!
//! The crate trains a small 3D encoder-decoder segmentation network on
//! synthetic phantoms, fits five feature-space OOD detectors (spectral
//! signatures, prototypes, pooled Mahalanobis, FRODO, one-class SVM) in
//! single- and multi-layer variants plus an MC-dropout baseline, generates
//! transformation-shift corruptions, and reports AUROC/Dice benchmark tables.
//!
//! Modules:
//! - [`tensor`]: dense tensors plus the shared numeric kernels (SVD via
//!   Jacobi, Gaussian fitting, Mahalanobis, radix-2 3D FFT, seeded RNG).
//! - [`volumes`]: volume/sample data model, the VTF interchange format,
//!   dataset manifests and the synthetic phantom generators.
//! - [`corruptions`]: the ten strength-parameterized image/k-space
//!   corruption operators and the corruption suite driver.
//! - [`segnet`]: the segmentation network with reverse-mode autodiff,
//!   Dice-loss training, feature capture, MC dropout and FGSM.
//! - [`detectors`]: the five detector families and the score aggregator.
//! - [`bench`]: AUROC/Dice metrics, benchmark orchestration, reports.

pub mod bench;
pub mod corruptions;
pub mod detectors;
pub mod segnet;
pub mod tensor;
pub mod volumes;
