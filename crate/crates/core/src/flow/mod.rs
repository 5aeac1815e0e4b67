//! Optical-flow features: apex spotting, dense flow, optical strain and the
//! four-region composite map consumed by the model.

mod composite;
mod farneback;
mod htfm;
mod image;
mod spot;
mod strain;

pub use composite::{build_composite, CompositeFlowMap, LandmarkSet, QuadrantLayout, COMPOSITE_CHANNELS};
pub use farneback::{compute_flow, FlowField, FlowParams};
pub use htfm::{decode_flow_map, encode_flow_map, read_flow_file, write_flow_file, HTFM_HEADER_LEN, HTFM_MAGIC, HTFM_VERSION};
pub use image::Image;
pub use spot::{apex_scores, histogram_correlation, landmark_rois, roi_histogram, spot_apex, FrameSequence, Roi};
pub use strain::compute_strain;
