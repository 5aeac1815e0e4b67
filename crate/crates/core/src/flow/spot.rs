//! Apex-frame spotting by region-of-interest histogram correlation.

use serde::{Deserialize, Serialize};

use super::composite::LandmarkSet;
use super::image::Image;
use crate::error::{Error, Result};

/// Axis-aligned pixel rectangle `[x, x + width) x [y, y + height)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Roi {
    fn check(&self, width: usize, height: usize) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.x + self.width > width || self.y + self.height > height {
            return Err(Error::Geometry(format!(
                "ROI {self:?} does not lie inside the {width}x{height} frame"
            )));
        }
        Ok(())
    }
}

/// Grayscale frames of one clip with its annotated indices.
#[derive(Clone, Debug)]
pub struct FrameSequence {
    frames: Vec<Image>,
    onset: usize,
    apex: Option<usize>,
    offset: usize,
}

impl FrameSequence {
    pub fn new(frames: Vec<Image>, onset: usize, apex: Option<usize>, offset: usize) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::InsufficientSequence("no frames".into()));
        };
        let (w, h) = (first.width(), first.height());
        if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.width() != w || f.height() != h) {
            return Err(Error::Shape {
                op: "frame sequence",
                lhs: vec![h, w],
                rhs: vec![f.height(), f.width(), i],
            });
        }
        let apex_ok = apex.is_none_or(|a| onset <= a && a <= offset);
        if onset > offset || offset >= frames.len() || !apex_ok {
            return Err(Error::Contract(format!(
                "indices onset {onset}, apex {apex:?}, offset {offset} invalid for {} frames",
                frames.len()
            )));
        }
        Ok(FrameSequence {
            frames,
            onset,
            apex,
            offset,
        })
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    pub fn onset(&self) -> usize {
        self.onset
    }

    pub fn apex(&self) -> Option<usize> {
        self.apex
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }
}

/// Intensity histogram of `roi` with `bins` equal bins over `[0, 256)`.
pub fn roi_histogram(frame: &Image, roi: &Roi, bins: usize) -> Vec<f64> {
    let mut hist = vec![0.0; bins];
    for y in roi.y..roi.y + roi.height {
        for x in roi.x..roi.x + roi.width {
            let v = frame.get(x, y).clamp(0.0, 255.999);
            let bin = ((v * bins as f64) / 256.0) as usize;
            hist[bin.min(bins - 1)] += 1.0;
        }
    }
    hist
}

/// Normalised correlation `sum(h1*h2) / sqrt(sum(h1^2) * sum(h2^2))`.
/// Returns 1 when both histograms are empty.
pub fn histogram_correlation(h1: &[f64], h2: &[f64]) -> f64 {
    let dot: f64 = h1.iter().zip(h2).map(|(a, b)| a * b).sum();
    let n1: f64 = h1.iter().map(|a| a * a).sum();
    let n2: f64 = h2.iter().map(|b| b * b).sum();
    if n1 == 0.0 && n2 == 0.0 {
        return 1.0;
    }
    if n1 == 0.0 || n2 == 0.0 {
        return 0.0;
    }
    dot / (n1 * n2).sqrt()
}

/// Per-candidate summed ROI correlation against the onset frame, for the
/// candidate frames `onset + 1 ..= offset`.
pub fn apex_scores(seq: &FrameSequence, rois: &[Roi], bins: usize) -> Result<Vec<(usize, f64)>> {
    if bins < 2 {
        return Err(Error::Config(format!("histogram bins must be >= 2, got {bins}")));
    }
    if rois.is_empty() {
        return Err(Error::Config("at least one ROI is required".into()));
    }
    for roi in rois {
        roi.check(seq.width(), seq.height())?;
    }
    if seq.offset <= seq.onset {
        return Err(Error::InsufficientSequence(format!(
            "no candidate frames between onset {} and offset {}",
            seq.onset, seq.offset
        )));
    }
    let onset = &seq.frames[seq.onset];
    let reference: Vec<Vec<f64>> = rois.iter().map(|r| roi_histogram(onset, r, bins)).collect();
    Ok((seq.onset + 1..=seq.offset)
        .map(|i| {
            let frame = &seq.frames[i];
            let score = rois
                .iter()
                .zip(&reference)
                .map(|(roi, h1)| histogram_correlation(h1, &roi_histogram(frame, roi, bins)))
                .sum();
            (i, score)
        })
        .collect())
}

/// Index of the frame least correlated with the onset, summed over ROIs.
/// Ties resolve to the earliest frame.
pub fn spot_apex(seq: &FrameSequence, rois: &[Roi], bins: usize) -> Result<usize> {
    let scores = apex_scores(seq, rois, bins)?;
    let mut best = scores[0];
    for &(i, s) in &scores[1..] {
        if s < best.1 {
            best = (i, s);
        }
    }
    Ok(best.0)
}

/// Square ROIs centred on the four landmarks, clipped to the frame.
/// `half_fraction` is the half side as a fraction of the shorter frame side.
pub fn landmark_rois(landmarks: &LandmarkSet, width: usize, height: usize, half_fraction: f64) -> Result<Vec<Roi>> {
    landmarks.check_bounds(width, height)?;
    let half = ((width.min(height) as f64 * half_fraction).round() as isize).max(1);
    Ok(landmarks
        .points()
        .iter()
        .map(|(_, p)| {
            let cx = p[0].round() as isize;
            let cy = p[1].round() as isize;
            let x0 = (cx - half).max(0);
            let y0 = (cy - half).max(0);
            let x1 = (cx + half + 1).min(width as isize);
            let y1 = (cy + half + 1).min(height as isize);
            Roi {
                x: x0 as usize,
                y: y0 as usize,
                width: (x1 - x0) as usize,
                height: (y1 - y0) as usize,
            }
        })
        .collect())
}
