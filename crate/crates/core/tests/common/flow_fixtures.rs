//! Frame and flow fixtures with known answers.

use htnet_core::flow::{FlowField, FrameSequence, Image, Roi};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const SIDE: usize = 96;
pub const BLOB_SIGMA: f64 = 10.0;

/// Broad Gaussian blob on a flat background, centred at `(cx, cy)`.
pub fn blob(cx: f64, cy: f64) -> Image {
    Image::from_fn(SIDE, SIDE, |x, y| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        40.0 + 180.0 * (-(dx * dx + dy * dy) / (2.0 * BLOB_SIGMA * BLOB_SIGMA)).exp()
    })
}

/// Mean flow over pixels within one blob sigma of the onset centre.
pub fn interior_mean(flow: &FlowField, cx: f64, cy: f64) -> (f64, f64) {
    let (mut su, mut sv, mut n) = (0.0, 0.0, 0.0);
    for y in 0..SIDE {
        for x in 0..SIDE {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            if dx * dx + dy * dy <= BLOB_SIGMA * BLOB_SIGMA {
                su += flow.u.get(x, y);
                sv += flow.v.get(x, y);
                n += 1.0;
            }
        }
    }
    (su / n, sv / n)
}

pub fn linear_field(w: usize, h: usize, u: impl Fn(f64, f64) -> f64, v: impl Fn(f64, f64) -> f64) -> FlowField {
    FlowField::new(
        Image::from_fn(w, h, |x, y| u(x as f64, y as f64)),
        Image::from_fn(w, h, |x, y| v(x as f64, y as f64)),
    )
    .unwrap()
}

/// Onset has a black ROI on random background; frame `peak` turns half of
/// the ROI white; a few distractor frames flip fewer ROI pixels.
pub fn engineered_peak_sequence(rng: &mut ChaCha8Rng) -> (FrameSequence, Roi, usize) {
    let (w, h) = (rng.random_range(16..40), rng.random_range(16..40));
    let roi = Roi {
        x: rng.random_range(0..w / 2),
        y: rng.random_range(0..h / 2),
        width: 2 * rng.random_range(2..w / 4),
        height: rng.random_range(4..h / 2),
    };
    let mut onset = Image::from_fn(w, h, |_, _| rng.random_range(0..256) as f64);
    for y in roi.y..roi.y + roi.height {
        for x in roi.x..roi.x + roi.width {
            onset.set(x, y, 0.0);
        }
    }
    let len = rng.random_range(2..12);
    let peak = rng.random_range(1..len);
    let roi_pixels: Vec<(usize, usize)> = (roi.y..roi.y + roi.height)
        .flat_map(|y| (roi.x..roi.x + roi.width).map(move |x| (x, y)))
        .collect();
    let frames = (0..len)
        .map(|i| {
            let mut f = onset.clone();
            let flipped = if i == peak {
                roi_pixels.len() / 2
            } else if i > 0 && rng.random_bool(0.5) {
                rng.random_range(0..roi_pixels.len() / 2)
            } else {
                0
            };
            for &(x, y) in &roi_pixels[..flipped] {
                f.set(x, y, 255.0);
            }
            f
        })
        .collect();
    (FrameSequence::new(frames, 0, None, len - 1).unwrap(), roi, peak)
}

