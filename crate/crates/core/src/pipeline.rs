//! Glue from manifest entries on disk to composite maps and samples.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{
    build_composite, compute_flow, compute_strain, landmark_rois, read_flow_file, spot_apex, CompositeFlowMap,
    FlowParams, FrameSequence, Image, LandmarkSet, COMPOSITE_CHANNELS,
};
use crate::model::ModelConfig;
use crate::train::{Manifest, ManifestEntry, Sample, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpotParams {
    pub bins: usize,
    /// ROI half side as a fraction of the shorter frame side.
    pub roi_half_fraction: f64,
}

impl Default for SpotParams {
    fn default() -> Self {
        SpotParams {
            bins: 32,
            roi_half_fraction: 0.12,
        }
    }
}

/// Everything a run needs besides the manifest and output paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub flow: FlowParams,
    pub spot: SpotParams,
}


impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.flow.validate()?;
        if self.spot.bins < 2 || !(self.spot.roi_half_fraction > 0.0) {
            return Err(Error::Config(format!("invalid spotting parameters: {:?}", self.spot)));
        }
        Ok(())
    }
}

/// Sorted image files (png, pgm, jpg) in a frame directory.
pub fn frame_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::InsufficientSequence(format!("cannot read frame directory {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "pgm" | "jpg" | "jpeg"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

fn load_frame(paths: &[PathBuf], index: usize, entry: &ManifestEntry) -> Result<Image> {
    let path = paths.get(index).ok_or_else(|| {
        Error::InsufficientSequence(format!(
            "sample {}: frame {index} requested but only {} frames exist",
            entry.sample_id,
            paths.len()
        ))
    })?;
    Image::load_gray(path)
}

/// Onset-to-offset frames of one entry.
pub fn load_sequence(manifest: &Manifest, entry: &ManifestEntry) -> Result<FrameSequence> {
    let paths = frame_paths(&manifest.resolve(&entry.frames_dir))?;
    let frames = (entry.onset..=entry.offset)
        .map(|i| load_frame(&paths, i, entry))
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames, 0, entry.apex.map(|a| a - entry.onset), entry.offset - entry.onset)
}

pub fn load_landmarks(manifest: &Manifest, entry: &ManifestEntry) -> Result<LandmarkSet> {
    LandmarkSet::load(&manifest.resolve(&entry.landmarks_path))
}

/// Apex frame index (in the entry's own numbering) by histogram spotting
/// over landmark ROIs.
pub fn spot_entry(manifest: &Manifest, entry: &ManifestEntry, params: &SpotParams) -> Result<usize> {
    let seq = load_sequence(manifest, entry)?;
    let landmarks = load_landmarks(manifest, entry)?;
    let rois = landmark_rois(&landmarks, seq.width(), seq.height(), params.roi_half_fraction)?;
    Ok(entry.onset + spot_apex(&seq, &rois, params.bins)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowStats {
    pub mean_abs_u: f64,
    pub mean_abs_v: f64,
    pub max_strain: f64,
}

impl FlowStats {
    pub fn of(map: &CompositeFlowMap) -> Self {
        FlowStats {
            mean_abs_u: map.channel_mean_abs(0),
            mean_abs_v: map.channel_mean_abs(1),
            max_strain: map.channel_max(2),
        }
    }
}

/// Composite map from the onset and apex frames and apex-frame landmarks.
pub fn composite_from_frames(
    onset: &Image,
    apex: &Image,
    landmarks: &LandmarkSet,
    flow: &FlowParams,
    size: usize,
) -> Result<CompositeFlowMap> {
    let field = compute_flow(onset, apex, flow)?;
    let strain = compute_strain(&field)?;
    build_composite(&field, &strain, landmarks, size)
}

pub fn extract_entry(manifest: &Manifest, entry: &ManifestEntry, flow: &FlowParams, size: usize) -> Result<CompositeFlowMap> {
    let apex = entry
        .apex
        .ok_or_else(|| Error::Manifest(format!("sample {} has no apex index; run spotting first", entry.sample_id)))?;
    let paths = frame_paths(&manifest.resolve(&entry.frames_dir))?;
    let onset = load_frame(&paths, entry.onset, entry)?;
    let apex = load_frame(&paths, apex, entry)?;
    let landmarks = load_landmarks(manifest, entry)?;
    composite_from_frames(&onset, &apex, &landmarks, flow, size)
}

pub fn flow_file_path(features_dir: &Path, sample_id: &str) -> PathBuf {
    features_dir.join(format!("{sample_id}.htfm"))
}

/// Loads the extracted map of every manifest entry.
pub fn load_samples(manifest: &Manifest, features_dir: &Path, expected_size: usize) -> Result<Vec<Sample>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            let path = flow_file_path(features_dir, &e.sample_id);
            let map = read_flow_file(&path).map_err(|err| match err {
                Error::Io(io) => Error::Manifest(format!(
                    "sample {}: cannot read flow file {}: {io}",
                    e.sample_id,
                    path.display()
                )),
                other => other,
            })?;
            if map.height() != expected_size || map.width() != expected_size {
                return Err(Error::Config(format!(
                    "sample {}: flow map is {}x{}x{COMPOSITE_CHANNELS}, model expects {expected_size}x{expected_size}",
                    e.sample_id,
                    map.height(),
                    map.width()
                )));
            }
            Ok(Sample {
                id: e.sample_id.clone(),
                subject: e.subject_id.clone(),
                dataset: e.dataset,
                class: e.class,
                map,
            })
        })
        .collect()
}
