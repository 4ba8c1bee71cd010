//! Labelled binary input sets.
//!
//! A dataset is a TOML manifest next to two raw files: the inputs, each sample stored as its
//! packed little-endian words back to back, and the labels, one byte per sample.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bintensor::{BinaryTensor, Shape};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub shape: Shape,
    pub class_count: usize,
    pub samples: usize,
    /// Paths relative to the manifest.
    pub inputs: String,
    pub labels: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub name: String,
    pub class_count: usize,
    pub inputs: Vec<BinaryTensor>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        class_count: usize,
        inputs: Vec<BinaryTensor>,
        labels: Vec<u8>,
    ) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::shape(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(first) = inputs.first() {
            if inputs.iter().any(|t| t.shape() != first.shape()) {
                return Err(Error::shape("inputs of differing shapes"));
            }
        }
        if let Some(l) = labels.iter().find(|&&l| l as usize >= class_count) {
            return Err(Error::shape(format!(
                "label {l} out of {class_count} classes"
            )));
        }
        Ok(Dataset {
            name: name.into(),
            class_count,
            inputs,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> Option<Shape> {
        self.inputs.first().map(BinaryTensor::shape)
    }

    pub fn input_bytes(&self) -> Vec<u8> {
        self.inputs.iter().flat_map(|t| t.to_le_bytes()).collect()
    }

    /// Writes `<stem>.toml`, `<stem>.inputs.bin` and `<stem>.labels.bin` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<PathBuf> {
        let shape = self
            .shape()
            .ok_or_else(|| Error::shape("cannot save an empty dataset"))?;
        let manifest = DatasetManifest {
            name: self.name.clone(),
            shape,
            class_count: self.class_count,
            samples: self.len(),
            inputs: format!("{stem}.inputs.bin"),
            labels: format!("{stem}.labels.bin"),
        };
        std::fs::write(dir.join(&manifest.inputs), self.input_bytes())?;
        std::fs::write(dir.join(&manifest.labels), &self.labels)?;
        let path = dir.join(format!("{stem}.toml"));
        let text = toml::to_string(&manifest)
            .map_err(|e| Error::Config(format!("cannot serialize manifest: {e}")))?;
        std::fs::write(&path, text)?;
        Ok(path)
    }

    pub fn load(manifest_path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(manifest_path)?;
        let m: DatasetManifest = toml::from_str(&text)
            .map_err(|e| Error::parse(manifest_path.display().to_string(), e.to_string()))?;
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let raw = std::fs::read(dir.join(&m.inputs))?;
        let labels = std::fs::read(dir.join(&m.labels))?;
        let per = m.shape.bytes();
        if raw.len() != per * m.samples || labels.len() != m.samples {
            return Err(Error::parse(
                m.inputs.clone(),
                format!(
                    "expected {} samples of {per} bytes, found {} input bytes and {} labels",
                    m.samples,
                    raw.len(),
                    labels.len()
                ),
            ));
        }
        let inputs = raw
            .chunks_exact(per)
            .map(|c| BinaryTensor::from_le_bytes(m.shape, c))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(m.name, m.class_count, inputs, labels)
    }
}
