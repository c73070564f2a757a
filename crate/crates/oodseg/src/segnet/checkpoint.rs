//! Checkpoint persistence: one VTF per parameter tensor plus a JSON
//! registry with the configuration, layer order and a SHA-256
//! fingerprint over the parameter bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::tensor::rng::Rng;
use crate::tensor::DType;
use crate::volumes::{read_vtf, write_vtf};

use super::net::{build_net, ConvShape, NetParams};
use super::scalar::Scalar;
use super::{NetConfig, NetError, Registry};

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    format_version: u32,
    config: NetConfig,
    registry: Registry,
    convs: Vec<ConvShape>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    train_seed: Option<u64>,
    fingerprint: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 over the architecture description and the little-endian bytes
/// of every parameter tensor, in registry order.
pub fn checkpoint_fingerprint<S: Scalar>(params: &NetParams<S>) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(&params.config).unwrap());
    hasher.update(serde_json::to_vec(&params.registry).unwrap());
    for conv in &params.convs {
        hasher.update(conv.shape.id.as_bytes());
        for k in &conv.kernel {
            hasher.update(k.to_f64().to_le_bytes());
        }
        for b in &conv.bias {
            hasher.update(b.to_f64().to_le_bytes());
        }
    }
    hex(&hasher.finalize())
}

fn param_file(id: &str, part: &str) -> String {
    format!("{}.{part}.vtf", id.replace('.', "_"))
}

/// Write a checkpoint directory: `registry.json` plus `params/*.vtf`.
pub fn save_checkpoint<S: Scalar>(
    params: &NetParams<S>,
    dir: &Path,
    train_seed: Option<u64>,
) -> Result<(), NetError> {
    let params_dir = dir.join("params");
    fs::create_dir_all(&params_dir).map_err(|source| NetError::Io {
        path: params_dir.clone(),
        source,
    })?;
    for conv in &params.convs {
        let k = crate::tensor::Tensor::from_f64(
            &[
                conv.shape.out_ch,
                conv.shape.in_ch,
                conv.shape.ksize,
                conv.shape.ksize,
                conv.shape.ksize,
            ],
            conv.kernel.iter().map(|v| v.to_f64()).collect(),
        )?;
        let k = cast_to(S::DTYPE, k);
        write_vtf(&k, params_dir.join(param_file(&conv.shape.id, "kernel")))?;
        let b = crate::tensor::Tensor::from_f64(
            &[conv.shape.out_ch],
            conv.bias.iter().map(|v| v.to_f64()).collect(),
        )?;
        let b = cast_to(S::DTYPE, b);
        write_vtf(&b, params_dir.join(param_file(&conv.shape.id, "bias")))?;
    }
    let meta = CheckpointMeta {
        format_version: FORMAT_VERSION,
        config: params.config.clone(),
        registry: params.registry.clone(),
        convs: params.convs.iter().map(|c| c.shape.clone()).collect(),
        train_seed,
        fingerprint: checkpoint_fingerprint(params),
    };
    let path = dir.join("registry.json");
    fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|source| NetError::Io {
        path,
        source,
    })
}

fn cast_to(dtype: DType, t: crate::tensor::Tensor) -> crate::tensor::Tensor {
    match dtype {
        DType::F32 => crate::tensor::Tensor::from_f32(
            &t.shape().to_vec(),
            t.iter_f64().map(|x| x as f32).collect(),
        )
        .unwrap(),
        DType::F64 => t,
    }
}

/// Load a checkpoint, rebuild the execution graph from its config, and
/// verify the stored fingerprint against the recomputed one.
pub fn load_checkpoint<S: Scalar>(dir: &Path) -> Result<(NetParams<S>, String), NetError> {
    let meta_path = dir.join("registry.json");
    let text = fs::read_to_string(&meta_path).map_err(|source| NetError::Io {
        path: meta_path,
        source,
    })?;
    let meta: CheckpointMeta = serde_json::from_str(&text)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(NetError::CheckpointFormat(format!(
            "unsupported format version {} (expected {FORMAT_VERSION})",
            meta.format_version
        )));
    }
    // Rebuild the skeleton from config; ids and shapes must agree.
    let mut params = build_net::<S>(&meta.config, &mut Rng::new(0))?;
    if params.registry != meta.registry {
        return Err(NetError::CheckpointFormat(
            "stored registry does not match the configuration".into(),
        ));
    }
    let params_dir = dir.join("params");
    for conv in &mut params.convs {
        let stored = meta
            .convs
            .iter()
            .find(|c| c.id == conv.shape.id)
            .ok_or_else(|| {
                NetError::CheckpointFormat(format!("missing conv {} in metadata", conv.shape.id))
            })?;
        if stored != &conv.shape {
            return Err(NetError::CheckpointFormat(format!(
                "shape mismatch for conv {}",
                conv.shape.id
            )));
        }
        let k = read_vtf(params_dir.join(param_file(&conv.shape.id, "kernel")))?;
        let b = read_vtf(params_dir.join(param_file(&conv.shape.id, "bias")))?;
        if k.dtype() != S::DTYPE || b.dtype() != S::DTYPE {
            return Err(NetError::CheckpointFormat(format!(
                "parameter dtype mismatch for conv {}",
                conv.shape.id
            )));
        }
        if k.len() != conv.kernel.len() || b.len() != conv.bias.len() {
            return Err(NetError::CheckpointFormat(format!(
                "parameter size mismatch for conv {}",
                conv.shape.id
            )));
        }
        conv.kernel = (0..k.len()).map(|i| S::from_f64(k.value(i))).collect();
        conv.bias = (0..b.len()).map(|i| S::from_f64(b.value(i))).collect();
    }
    let computed = checkpoint_fingerprint(&params);
    if computed != meta.fingerprint {
        return Err(NetError::FingerprintMismatch {
            stored: meta.fingerprint,
            computed,
        });
    }
    Ok((params, computed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segnet::NetConfig;

    #[test]
    fn round_trip_preserves_parameters_and_fingerprint() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = NetConfig {
            channels: vec![2, 4],
            levels: 2,
            ..NetConfig::default()
        };
        let params = build_net::<f32>(&cfg, &mut Rng::new(9)).unwrap();
        save_checkpoint(&params, dir.path(), Some(42)).unwrap();
        let (loaded, fp) = load_checkpoint::<f32>(dir.path()).unwrap();
        assert_eq!(fp, checkpoint_fingerprint(&params));
        for (a, b) in params.convs.iter().zip(&loaded.convs) {
            assert_eq!(a.kernel, b.kernel);
            assert_eq!(a.bias, b.bias);
        }
    }

    #[test]
    fn tampered_parameters_fail_the_fingerprint_check() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = NetConfig {
            channels: vec![2, 4],
            levels: 2,
            ..NetConfig::default()
        };
        let params = build_net::<f32>(&cfg, &mut Rng::new(9)).unwrap();
        save_checkpoint(&params, dir.path(), None).unwrap();
        // flip one payload byte in a parameter file
        let f = dir.path().join("params").join("enc0_conv.kernel.vtf");
        let mut bytes = fs::read(&f).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x40;
        fs::write(&f, bytes).unwrap();
        assert!(matches!(
            load_checkpoint::<f32>(dir.path()),
            Err(NetError::FingerprintMismatch { .. })
        ));
    }
}
