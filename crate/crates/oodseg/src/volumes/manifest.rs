//! Dataset manifests: JSON descriptions of on-disk datasets.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_vtf, Group, PhantomConfig, Sample, Volume, VolumeError};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    /// Path to the image VTF, relative to the manifest file.
    pub image_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
    pub group: Group,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub seed: u64,
    pub generator_config: PhantomConfig,
    pub samples: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Load the sample behind one entry, resolving paths against `dir`.
    pub fn load_sample(dir: &Path, entry: &ManifestEntry) -> Result<Sample, VolumeError> {
        let image = Volume::new(read_vtf(dir.join(&entry.image_path))?)?;
        let mask = match &entry.mask_path {
            Some(p) => Some(read_vtf(dir.join(p))?),
            None => None,
        };
        Sample::new(entry.id.clone(), image, mask, entry.group)
    }
}

/// Parse, schema-validate and existence-check a manifest file.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest, VolumeError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| VolumeError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    let mut seen = BTreeSet::new();
    let dir = path.parent().unwrap_or(Path::new("."));
    for entry in &manifest.samples {
        if !seen.insert(entry.id.clone()) {
            return Err(VolumeError::DuplicateId(entry.id.clone()));
        }
        let image = dir.join(&entry.image_path);
        if !image.exists() {
            return Err(VolumeError::DanglingPath {
                id: entry.id.clone(),
                path: image,
            });
        }
        if let Some(mask) = &entry.mask_path {
            let mask = dir.join(mask);
            if !mask.exists() {
                return Err(VolumeError::DanglingPath {
                    id: entry.id.clone(),
                    path: mask,
                });
            }
        }
    }
    Ok(manifest)
}

pub fn save_manifest(m: &DatasetManifest, path: impl AsRef<Path>) -> Result<(), VolumeError> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| VolumeError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    let text = serde_json::to_string_pretty(m)?;
    fs::write(path, text).map_err(|source| VolumeError::Io {
        path: path.to_path_buf(),
        source,
    })
}
