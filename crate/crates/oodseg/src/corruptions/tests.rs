use std::collections::BTreeMap;

use super::*;
use crate::tensor::rng::Rng;
use crate::volumes::{generate_phantom, PhantomConfig};

fn phantom(seed: u64) -> Sample {
    let cfg = PhantomConfig::default();
    generate_phantom(&cfg, "t0", &mut Rng::new(seed)).unwrap()
}

fn identity_strength(kind: CorruptionKind) -> Option<f64> {
    use CorruptionKind::*;
    match kind {
        Bias | Noise | Registration | Ghost | Spikes | Motion => Some(0.0),
        Gamma | Downsample | Scaling => Some(1.0),
        Truncation => None,
    }
}

#[test]
fn identity_strengths_reproduce_the_input() {
    let sample = phantom(3);
    for &kind in CorruptionKind::ALL {
        let Some(s) = identity_strength(kind) else {
            continue;
        };
        let spec = CorruptionSpec::new(kind, s, 99);
        let out = apply_corruption(&spec, &sample.image).unwrap();
        let diff = out.grid.max_abs_diff(&sample.image.grid);
        let kspace = matches!(
            kind,
            CorruptionKind::Ghost | CorruptionKind::Spikes | CorruptionKind::Motion
        );
        if kspace {
            assert!(diff < 1e-5, "{kind}: k-space identity residual {diff}");
        } else {
            assert_eq!(diff, 0.0, "{kind}: image-space identity must be exact");
        }
    }
}

#[test]
fn all_kinds_preserve_extents_and_are_deterministic() {
    let sample = phantom(5);
    for &kind in CorruptionKind::ALL {
        let strength = match kind {
            CorruptionKind::Downsample | CorruptionKind::Spikes | CorruptionKind::Motion => 3.0,
            CorruptionKind::Ghost => 0.7,
            CorruptionKind::Gamma => 4.0,
            CorruptionKind::Scaling => 1.3,
            _ => 0.4,
        };
        let spec = CorruptionSpec::new(kind, strength, 1234);
        let a = apply_corruption(&spec, &sample.image).unwrap();
        let b = apply_corruption(&spec, &sample.image).unwrap();
        assert_eq!(a.grid.shape(), sample.image.shape(), "{kind}");
        assert_eq!(
            a.grid.as_f32().unwrap(),
            b.grid.as_f32().unwrap(),
            "{kind}: same spec twice must be bit-identical"
        );
        assert!(a.grid.all_finite(), "{kind}");
    }
}

#[test]
fn noise_variance_matches_strength() {
    let sample = phantom(6);
    let spec = CorruptionSpec::new(CorruptionKind::Noise, 0.5, 7);
    let out = apply_corruption(&spec, &sample.image).unwrap();
    let diffs: Vec<f64> = out
        .grid
        .iter_f64()
        .zip(sample.image.grid.iter_f64())
        .map(|(a, b)| a - b)
        .collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    assert!((var - 0.25).abs() < 0.05 * 0.25, "variance {var}");
}

#[test]
fn truncation_zeroes_half_the_volume() {
    let sample = phantom(8);
    let spec = CorruptionSpec::new(CorruptionKind::Truncation, 1.0, 0);
    let out = apply_to_sample(&spec, &sample).unwrap();
    let zeros = out.image.grid.iter_f64().filter(|&x| x == 0.0).count();
    let frac = zeros as f64 / out.image.grid.len() as f64;
    assert!(frac >= 0.5, "zero fraction {frac}");
    // mask is cut with the image
    let mask = out.mask.as_ref().unwrap();
    let half = mask.len() / 2;
    assert!(mask.iter_f64().skip(half).all(|x| x == 0.0));
}

#[test]
fn ghost_only_attenuates_spectral_energy() {
    let sample = phantom(9);
    let before = fft3(&sample.image.grid).unwrap().energy();
    for s in [0.2, 0.5, 1.0] {
        let spec = CorruptionSpec::new(CorruptionKind::Ghost, s, 17);
        let out = apply_corruption(&spec, &sample.image).unwrap();
        let after = fft3(&out.grid).unwrap().energy();
        assert!(
            after <= before * (1.0 + 1e-6),
            "s={s}: energy grew {before} -> {after}"
        );
    }
}

#[test]
fn geometric_kinds_preserve_mask_labels() {
    let sample = phantom(10);
    for (kind, strength) in [
        (CorruptionKind::Scaling, 1.35),
        (CorruptionKind::Registration, 0.25),
        (CorruptionKind::Truncation, 1.0),
        (CorruptionKind::Downsample, 3.0),
    ] {
        let spec = CorruptionSpec::new(kind, strength, 4);
        let out = apply_to_sample(&spec, &sample).unwrap();
        let mask = out.mask.as_ref().unwrap();
        assert!(
            mask.iter_f64().all(|x| x == 0.0 || x == 1.0),
            "{kind}: labels outside {{0,1}}"
        );
        assert_eq!(mask.shape(), sample.image.shape());
    }
}

#[test]
fn non_geometric_kinds_copy_the_mask() {
    let sample = phantom(11);
    let spec = CorruptionSpec::new(CorruptionKind::Gamma, 4.0, 4);
    let out = apply_to_sample(&spec, &sample).unwrap();
    assert_eq!(out.mask.as_ref().unwrap(), sample.mask.as_ref().unwrap());
    assert_eq!(out.group, Group::Transform(TransformKind::Gamma));
    assert_eq!(out.id, "t0-gamma");
}

#[test]
fn invalid_strengths_are_rejected() {
    let sample = phantom(12);
    for (kind, bad) in [
        (CorruptionKind::Noise, -0.1),
        (CorruptionKind::Gamma, 0.0),
        (CorruptionKind::Downsample, 0.5),
        (CorruptionKind::Ghost, 1.5),
        (CorruptionKind::Spikes, -1.0),
        (CorruptionKind::Scaling, -2.0),
    ] {
        let spec = CorruptionSpec::new(kind, bad, 0);
        assert!(
            matches!(
                apply_corruption(&spec, &sample.image),
                Err(CorruptionError::InvalidStrength { .. })
            ),
            "{kind} should reject strength {bad}"
        );
    }
}

#[test]
fn suite_with_empty_strengths_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = DatasetManifest {
        name: "test".into(),
        seed: 0,
        generator_config: PhantomConfig::default(),
        samples: Vec::new(),
    };
    let out = corruption_suite(
        &manifest,
        dir.path(),
        &BTreeMap::new(),
        0,
        dir.path(),
    )
    .unwrap();
    assert!(out.is_empty());
}

#[test]
fn suite_errors_carry_the_sample_id() {
    // a 6-extent volume cannot go through the k-space kinds
    let grid = Tensor::from_f32(&[6, 8, 8], vec![0.0; 384]).unwrap();
    let sample = Sample::new("odd-one", Volume::new(grid).unwrap(), None, Group::TestId).unwrap();
    let spec = CorruptionSpec::new(CorruptionKind::Ghost, 0.5, 1);
    let err = apply_to_sample(&spec, &sample).unwrap_err();
    assert!(err.to_string().contains("odd-one"), "{err}");
}
