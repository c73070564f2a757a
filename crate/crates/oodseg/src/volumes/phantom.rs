//! Synthetic phantom generators.
//!
//! The in-distribution family is an ellipsoidal "brain" of intensity 0.6
//! on a 0.05 background with one bright spherical "lesion" and additive
//! Gaussian noise. OOD families reshape or restyle that construction.
//! Generation is a pure function of (config, seed).

use crate::tensor::rng::Rng;
use crate::tensor::Tensor;

use super::{
    DiagnosisKind, FarOodKind, Group, ModalityKind, PhantomConfig, Sample, Volume, VolumeError,
};

const BACKGROUND_INTENSITY: f64 = 0.05;
const BRAIN_INTENSITY: f64 = 0.6;
const PLACEMENT_ATTEMPTS: usize = 100;
/// Inner radius of the ring-lesion family as a fraction of the outer one.
const RING_INNER_FRACTION: f64 = 0.6;

/// Synthetic OOD dataset families standing in for diagnosis, modality and
/// far-OOD shifts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OodFamily {
    DiagnosisRing,
    DiagnosisHealthy,
    ModalityInverted,
    FarNoise,
    FarGeometry,
}

impl OodFamily {
    pub const ALL: &'static [OodFamily] = &[
        OodFamily::DiagnosisRing,
        OodFamily::DiagnosisHealthy,
        OodFamily::ModalityInverted,
        OodFamily::FarNoise,
        OodFamily::FarGeometry,
    ];

    pub fn group(&self) -> Group {
        match self {
            OodFamily::DiagnosisRing => Group::Diagnosis(DiagnosisKind::Ring),
            OodFamily::DiagnosisHealthy => Group::Diagnosis(DiagnosisKind::Healthy),
            OodFamily::ModalityInverted => Group::Modality(ModalityKind::Inverted),
            OodFamily::FarNoise => Group::FarOod(FarOodKind::Noise),
            OodFamily::FarGeometry => Group::FarOod(FarOodKind::Geometry),
        }
    }
}

struct Lesion {
    center: [f64; 3],
    radius: f64,
}

fn volume_center(size: usize) -> f64 {
    (size as f64 - 1.0) / 2.0
}

/// Sample a lesion sphere that fits entirely inside the brain shape.
///
/// Candidate centers are drawn from the per-axis box `semi_axis - radius`
/// (the tight bounding box of the feasible region) and re-checked with
/// `fits`, so rejection is rare but the fit guarantee is explicit.
fn place_lesion(
    cfg: &PhantomConfig,
    rng: &mut Rng,
    fits: impl Fn(&[f64; 3], f64) -> bool,
) -> Result<Lesion, VolumeError> {
    let (lo, hi) = cfg.lesion_radius_range;
    let radius = rng.uniform_range(lo, hi);
    let ctr = volume_center(cfg.size);
    for _ in 0..PLACEMENT_ATTEMPTS {
        let mut center = [0.0; 3];
        for (c, &ax) in center.iter_mut().zip(&cfg.brain_axes) {
            let reach = (ax * cfg.size as f64 - radius).max(0.0);
            *c = ctr + rng.uniform_range(-1.0, 1.0) * reach;
        }
        if fits(&center, radius) {
            return Ok(Lesion { center, radius });
        }
    }
    Err(VolumeError::LesionPlacement(PLACEMENT_ATTEMPTS))
}

fn ellipsoid_fit(cfg: &PhantomConfig) -> impl Fn(&[f64; 3], f64) -> bool + '_ {
    let ctr = volume_center(cfg.size);
    move |center, radius| {
        // Sphere B(c, r) lies inside the ellipsoid if
        //   max_u sum((c_i + r u_i)/s_i)^2
        //     <= sum(c_i/s_i)^2 + 2 r sqrt(sum(c_i^2/s_i^4)) + r^2/min(s)^2
        // stays <= 1 (Cauchy-Schwarz on the cross term).
        let mut quad = 0.0;
        let mut cross = 0.0;
        let mut min_semi = f64::INFINITY;
        for (c, &ax) in center.iter().zip(&cfg.brain_axes) {
            let semi = ax * cfg.size as f64;
            let d = c - ctr;
            quad += (d / semi) * (d / semi);
            cross += d * d / (semi * semi * semi * semi);
            min_semi = min_semi.min(semi);
        }
        quad + 2.0 * radius * cross.sqrt() + (radius / min_semi) * (radius / min_semi) <= 1.0
    }
}

fn box_fit(cfg: &PhantomConfig) -> impl Fn(&[f64; 3], f64) -> bool + '_ {
    let ctr = volume_center(cfg.size);
    move |center, radius| {
        center.iter().zip(&cfg.brain_axes).all(|(c, &ax)| {
            (c - ctr).abs() + radius <= ax * cfg.size as f64
        })
    }
}

#[derive(Clone, Copy)]
enum BrainShape {
    Ellipsoid,
    Box,
}

#[derive(Clone, Copy)]
enum LesionStyle {
    None,
    Sphere,
    Ring,
}

/// Shared rasterizer for all phantom families.
fn rasterize(
    cfg: &PhantomConfig,
    shape: BrainShape,
    style: LesionStyle,
    lesion: Option<&Lesion>,
    rng: &mut Rng,
) -> (Tensor, Tensor) {
    let n = cfg.size;
    let ctr = volume_center(n);
    let mut grid = vec![0.0f32; n * n * n];
    let mut mask = vec![0.0f32; n * n * n];
    let mut idx = 0;
    for h in 0..n {
        for w in 0..n {
            for d in 0..n {
                let p = [h as f64, w as f64, d as f64];
                let inside_brain = match shape {
                    BrainShape::Ellipsoid => {
                        let mut s = 0.0;
                        for (x, &ax) in p.iter().zip(&cfg.brain_axes) {
                            let v = (x - ctr) / (ax * n as f64);
                            s += v * v;
                        }
                        s <= 1.0
                    }
                    BrainShape::Box => p
                        .iter()
                        .zip(&cfg.brain_axes)
                        .all(|(x, &ax)| (x - ctr).abs() <= ax * n as f64),
                };
                let in_lesion = match (style, lesion) {
                    (LesionStyle::Sphere, Some(l)) => dist2(&p, &l.center) <= l.radius * l.radius,
                    (LesionStyle::Ring, Some(l)) => {
                        let d2 = dist2(&p, &l.center);
                        let inner = RING_INNER_FRACTION * l.radius;
                        d2 >= inner * inner && d2 <= l.radius * l.radius
                    }
                    _ => false,
                };
                let base = if in_lesion {
                    BRAIN_INTENSITY + cfg.lesion_contrast
                } else if inside_brain {
                    BRAIN_INTENSITY
                } else {
                    BACKGROUND_INTENSITY
                };
                grid[idx] = (base + cfg.background_noise_sigma * rng.normal()) as f32;
                if in_lesion {
                    mask[idx] = 1.0;
                }
                idx += 1;
            }
        }
    }
    let shape3 = [n, n, n];
    (
        Tensor::from_f32(&shape3, grid).unwrap(),
        Tensor::from_f32(&shape3, mask).unwrap(),
    )
}

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

/// Generate one in-distribution phantom. Deterministic given the config
/// and the generator state.
pub fn generate_phantom(
    cfg: &PhantomConfig,
    id: &str,
    rng: &mut Rng,
) -> Result<Sample, VolumeError> {
    cfg.validate()?;
    let lesion = place_lesion(cfg, rng, ellipsoid_fit(cfg))?;
    let (grid, mask) = rasterize(cfg, BrainShape::Ellipsoid, LesionStyle::Sphere, Some(&lesion), rng);
    Sample::new(id, Volume::new(grid)?, Some(mask), Group::Train)
}

/// Generate a control sample: an ID-configured phantom from a different
/// seed stream with a small constant intensity offset, standing in for a
/// second imaging center. Detectors should score these as ID.
pub fn generate_control(
    cfg: &PhantomConfig,
    id: &str,
    rng: &mut Rng,
) -> Result<Sample, VolumeError> {
    let mut s = generate_phantom(cfg, id, rng)?;
    if let Some(g) = s.image.grid.as_f32_mut() {
        for v in g.iter_mut() {
            *v += cfg.control_offset as f32;
        }
    }
    s.group = Group::Control;
    Ok(s)
}

/// Generate one sample of the requested OOD family.
pub fn generate_ood_family(
    kind: OodFamily,
    cfg: &PhantomConfig,
    id: &str,
    rng: &mut Rng,
) -> Result<Sample, VolumeError> {
    cfg.validate()?;
    let n = cfg.size;
    match kind {
        OodFamily::DiagnosisRing => {
            let lesion = place_lesion(cfg, rng, ellipsoid_fit(cfg))?;
            let (grid, mask) =
                rasterize(cfg, BrainShape::Ellipsoid, LesionStyle::Ring, Some(&lesion), rng);
            Sample::new(id, Volume::new(grid)?, Some(mask), kind.group())
        }
        OodFamily::DiagnosisHealthy => {
            let (grid, mask) = rasterize(cfg, BrainShape::Ellipsoid, LesionStyle::None, None, rng);
            Sample::new(id, Volume::new(grid)?, Some(mask), kind.group())
        }
        OodFamily::ModalityInverted => {
            let lesion = place_lesion(cfg, rng, ellipsoid_fit(cfg))?;
            let (grid, mask) =
                rasterize(cfg, BrainShape::Ellipsoid, LesionStyle::Sphere, Some(&lesion), rng);
            let mut grid = grid;
            let max = grid.iter_f64().fold(f64::NEG_INFINITY, f64::max) as f32;
            if let Some(g) = grid.as_f32_mut() {
                for v in g.iter_mut() {
                    *v = max - *v;
                }
            }
            Sample::new(id, Volume::new(grid)?, Some(mask), kind.group())
        }
        OodFamily::FarNoise => {
            let total = n * n * n;
            let data: Vec<f32> = (0..total)
                .map(|_| (cfg.far_noise_sigma * rng.normal()) as f32)
                .collect();
            let grid = Tensor::from_f32(&[n, n, n], data).unwrap();
            Sample::new(id, Volume::new(grid)?, None, kind.group())
        }
        OodFamily::FarGeometry => {
            let lesion = place_lesion(cfg, rng, box_fit(cfg))?;
            let (grid, mask) =
                rasterize(cfg, BrainShape::Box, LesionStyle::Sphere, Some(&lesion), rng);
            Sample::new(id, Volume::new(grid)?, Some(mask), kind.group())
        }
    }
}
