use std::path::Path;

use serde::{Deserialize, Serialize};

use super::farneback::FlowField;
use super::image::Image;
use crate::error::{Error, Result};

pub const COMPOSITE_CHANNELS: usize = 3;

/// Facial landmark positions on the apex frame, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub left_eye: [f64; 2],
    pub right_eye: [f64; 2],
    pub left_lip: [f64; 2],
    pub right_lip: [f64; 2],
}

impl LandmarkSet {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Landmarks in quadrant order: top-left, top-right, bottom-left, bottom-right.
    pub fn points(&self) -> [(&'static str, [f64; 2]); 4] {
        [
            ("left_eye", self.left_eye),
            ("right_eye", self.right_eye),
            ("left_lip", self.left_lip),
            ("right_lip", self.right_lip),
        ]
    }

    pub fn check_bounds(&self, width: usize, height: usize) -> Result<()> {
        for (name, [x, y]) in self.points() {
            let inside = x.is_finite() && y.is_finite() && x >= 0.0 && y >= 0.0 && x < width as f64 && y < height as f64;
            if !inside {
                return Err(Error::Landmark {
                    name,
                    x,
                    y,
                    width,
                    height,
                });
            }
        }
        Ok(())
    }
}

/// Which facial region occupies which quadrant of a composite map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuadrantLayout {
    /// Left eye top-left, right eye top-right, left lip bottom-left,
    /// right lip bottom-right.
    EyesTopLipsBottom,
}

impl QuadrantLayout {
    pub fn code(self) -> u8 {
        match self {
            QuadrantLayout::EyesTopLipsBottom => 0,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(QuadrantLayout::EyesTopLipsBottom),
            _ => None,
        }
    }

    /// Region name held by each quadrant, in top-left, top-right,
    /// bottom-left, bottom-right order.
    pub fn regions(self) -> [&'static str; 4] {
        match self {
            QuadrantLayout::EyesTopLipsBottom => ["left_eye", "right_eye", "left_lip", "right_lip"],
        }
    }
}

/// Model input: four region crops of `[u, v, strain]` tiled into one map,
/// stored row-major as `(row, column, channel)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CompositeFlowMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
    layout: QuadrantLayout,
}

impl CompositeFlowMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>, layout: QuadrantLayout) -> Result<Self> {
        if height == 0 || width == 0 || !height.is_multiple_of(2) || !width.is_multiple_of(2) {
            return Err(Error::Geometry(format!(
                "composite map must have positive even sides, got {height}x{width}"
            )));
        }
        if data.len() != height * width * COMPOSITE_CHANNELS {
            return Err(Error::Shape {
                op: "composite map",
                lhs: vec![height, width, COMPOSITE_CHANNELS],
                rhs: vec![data.len()],
            });
        }
        Ok(CompositeFlowMap {
            height,
            width,
            data,
            layout,
        })
    }

    pub fn zeros(side: usize) -> Self {
        CompositeFlowMap::new(side, side, vec![0.0; side * side * COMPOSITE_CHANNELS], QuadrantLayout::EyesTopLipsBottom)
            .expect("valid geometry")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn layout(&self) -> QuadrantLayout {
        self.layout
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.width + col) * COMPOSITE_CHANNELS + channel]
    }

    /// Copy of one quadrant (0..4 in top-left, top-right, bottom-left,
    /// bottom-right order) as `(row, col, channel)` data.
    pub fn quadrant(&self, index: usize) -> Vec<f64> {
        let (qh, qw) = (self.height / 2, self.width / 2);
        let (r0, c0) = ((index / 2) * qh, (index % 2) * qw);
        let mut out = Vec::with_capacity(qh * qw * COMPOSITE_CHANNELS);
        for r in r0..r0 + qh {
            let start = (r * self.width + c0) * COMPOSITE_CHANNELS;
            out.extend_from_slice(&self.data[start..start + qw * COMPOSITE_CHANNELS]);
        }
        out
    }

    pub fn channel_mean_abs(&self, channel: usize) -> f64 {
        let n = self.height * self.width;
        self.data.iter().skip(channel).step_by(COMPOSITE_CHANNELS).map(|v| v.abs()).sum::<f64>() / n as f64
    }

    pub fn channel_max(&self, channel: usize) -> f64 {
        self.data
            .iter()
            .skip(channel)
            .step_by(COMPOSITE_CHANNELS)
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Stacks `[u, v, strain]`, resizes to `out_size` square, crops a half-size
/// window around each landmark and tiles the four crops.
///
/// Flow channels are rescaled to displacement in output-grid pixels; strain
/// is a ratio of displacements and keeps its value. Crops that would leave
/// the map are shifted back inside it.
pub fn build_composite(flow: &FlowField, strain: &Image, landmarks: &LandmarkSet, out_size: usize) -> Result<CompositeFlowMap> {
    let (w, h) = (flow.width(), flow.height());
    if strain.width() != w || strain.height() != h {
        return Err(Error::Shape {
            op: "build_composite",
            lhs: vec![h, w],
            rhs: vec![strain.height(), strain.width()],
        });
    }
    if out_size < 2 || !out_size.is_multiple_of(2) {
        return Err(Error::Geometry(format!("composite side must be even, got {out_size}")));
    }
    landmarks.check_bounds(w, h)?;

    let sx = out_size as f64 / w as f64;
    let sy = out_size as f64 / h as f64;
    let mut u = flow.u.resize(out_size, out_size);
    let mut v = flow.v.resize(out_size, out_size);
    u.data_mut().iter_mut().for_each(|x| *x *= sx);
    v.data_mut().iter_mut().for_each(|x| *x *= sy);
    let s = strain.resize(out_size, out_size);
    let channels = [&u, &v, &s];

    let crop = out_size / 2;
    let layout = QuadrantLayout::EyesTopLipsBottom;
    let mut data = vec![0.0; out_size * out_size * COMPOSITE_CHANNELS];
    for (q, (_, [lx, ly])) in landmarks.points().into_iter().enumerate() {
        // Landmark position on the resized grid (pixel-centre aligned).
        let cx = (lx + 0.5) * sx - 0.5;
        let cy = (ly + 0.5) * sy - 0.5;
        let half = (crop as f64 - 1.0) / 2.0;
        let max_origin = (out_size - crop) as f64;
        let x0 = (cx - half).round().clamp(0.0, max_origin) as usize;
        let y0 = (cy - half).round().clamp(0.0, max_origin) as usize;
        let (qr, qc) = ((q / 2) * crop, (q % 2) * crop);
        for r in 0..crop {
            for c in 0..crop {
                let dst = ((qr + r) * out_size + qc + c) * COMPOSITE_CHANNELS;
                for (ch, img) in channels.iter().enumerate() {
                    data[dst + ch] = img.get(x0 + c, y0 + r);
                }
            }
        }
    }
    CompositeFlowMap::new(out_size, out_size, data, layout)
}
