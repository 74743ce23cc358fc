//! Video bundle manifest and the JSON file formats exchanged with the
//! evaluator.
//!
//! A bundle is a directory with a `manifest.json` naming per-frame tensor
//! files (paths relative to the manifest): query embeddings `N x E`, mask
//! probabilities `N x h x w` *or* pixel features `E x h x w` to derive
//! them, object scores `N x 2`, mask-quality scores `N x 1`, and a
//! classification feature map `D x h' x w'`; plus one `L x D` text
//! embedding file, the category list with novel flags, and optionally a
//! ground-truth JSON for evaluation.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::classifier::TextEmbeddings;
use crate::error::{Error, Result};
use crate::evaluator::{GtInstance, VideoGroundTruth, VideoInstancePrediction};
use crate::tensor::Tensor;

use super::tensor_file;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoryEntry {
    pub name: String,
    pub novel: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameEntry {
    pub query_embeddings: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_probs: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel_features: Option<String>,
    pub object_scores: String,
    pub iou_scores: String,
    pub clip_features: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleManifest {
    pub name: String,
    pub categories: Vec<CategoryEntry>,
    pub text_embeddings: String,
    pub frames: Vec<FrameEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
}

/// Per-video predictions as written by `run`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionsFile {
    pub video: String,
    pub video_length: usize,
    pub predictions: Vec<VideoInstancePrediction>,
}

/// Per-video ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruthFile {
    pub video: String,
    pub video_length: usize,
    pub instances: Vec<GtInstance>,
}

impl GroundTruthFile {
    pub fn to_ground_truth(&self) -> VideoGroundTruth {
        VideoGroundTruth {
            video_length: self.video_length,
            instances: self.instances.clone(),
        }
    }
}

/// Novel-category declaration consumed by `eval`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NovelFile {
    pub novel_categories: Vec<usize>,
}

impl NovelFile {
    pub fn to_set(&self) -> BTreeSet<usize> {
        self.novel_categories.iter().copied().collect()
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    bytes.push(b'\n');
    tensor_file::write_atomic(path, &bytes)
}

/// Tensors of one loaded frame.
#[derive(Debug, Clone)]
pub struct FrameData {
    pub query_embeddings: Tensor<f32>,
    pub mask_probs: Option<Tensor<f32>>,
    pub pixel_features: Option<Tensor<f32>>,
    pub object_scores: Tensor<f32>,
    pub iou_scores: Tensor<f32>,
    pub clip_features: Tensor<f32>,
}

/// A bundle directory with a parsed manifest.
#[derive(Debug, Clone)]
pub struct VideoBundle {
    dir: PathBuf,
    manifest: BundleManifest,
}

impl VideoBundle {
    /// Opens `dir/manifest.json` and checks its structural invariants.
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest: BundleManifest = read_json(&dir.join("manifest.json"))?;
        if manifest.frames.is_empty() {
            return Err(Error::input(format!(
                "bundle {} has no frames",
                manifest.name
            )));
        }
        if manifest.categories.is_empty() {
            return Err(Error::input(format!(
                "bundle {} declares no categories",
                manifest.name
            )));
        }
        for (i, frame) in manifest.frames.iter().enumerate() {
            match (&frame.mask_probs, &frame.pixel_features) {
                (Some(_), Some(_)) => {
                    return Err(Error::input(format!(
                        "frame {i}: give mask_probs or pixel_features, not both"
                    )));
                }
                (None, None) => {
                    return Err(Error::input(format!(
                        "frame {i}: needs mask_probs or pixel_features"
                    )));
                }
                _ => {}
            }
        }
        Ok(VideoBundle {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &BundleManifest {
        &self.manifest
    }

    pub fn name(&self) -> &str {
        &self.manifest.name
    }

    pub fn num_frames(&self) -> usize {
        self.manifest.frames.len()
    }

    fn resolve(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    /// Loads the text embeddings with the manifest's category names.
    pub fn text_embeddings(&self) -> Result<TextEmbeddings> {
        let t = tensor_file::load_f32(&self.resolve(&self.manifest.text_embeddings))?;
        let names = self
            .manifest
            .categories
            .iter()
            .map(|c| c.name.clone())
            .collect();
        TextEmbeddings::new(t, names)
    }

    /// Indices of categories flagged novel.
    pub fn novel_set(&self) -> BTreeSet<usize> {
        self.manifest
            .categories
            .iter()
            .enumerate()
            .filter(|(_, c)| c.novel)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn load_frame(&self, index: usize) -> Result<FrameData> {
        let entry = &self.manifest.frames[index];
        let load = |rel: &str| tensor_file::load_f32(&self.resolve(rel));
        Ok(FrameData {
            query_embeddings: load(&entry.query_embeddings)?,
            mask_probs: entry.mask_probs.as_deref().map(load).transpose()?,
            pixel_features: entry.pixel_features.as_deref().map(load).transpose()?,
            object_scores: load(&entry.object_scores)?,
            iou_scores: load(&entry.iou_scores)?,
            clip_features: load(&entry.clip_features)?,
        })
    }

    /// Loads the bundle's ground truth, if the manifest references one.
    pub fn ground_truth(&self) -> Result<Option<GroundTruthFile>> {
        match &self.manifest.ground_truth {
            Some(rel) => Ok(Some(read_json(&self.resolve(rel))?)),
            None => Ok(None),
        }
    }
}
