//! Synthetic micro-expression corpus: per-subject textured faces whose eye
//! and lip regions move with a class-specific displacement signature.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{Image, LandmarkSet};
use crate::train::{Class, Dataset, Manifest, ManifestEntry};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub subjects: usize,
    pub samples_per_class: usize,
    /// Frame side in pixels.
    pub size: usize,
    pub frames: usize,
    /// Peak displacement of a region at the apex, in pixels.
    pub amplitude: f64,
    /// Peak brightening of a moving region at the apex, in gray levels.
    pub shading: f64,
    /// Every n-th subject gets an empty apex column (0 disables).
    pub blank_apex_every: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            subjects: 12,
            samples_per_class: 3,
            size: 64,
            frames: 9,
            amplitude: 2.0,
            shading: 12.0,
            blank_apex_every: 3,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subjects == 0 || self.samples_per_class == 0 || self.size < 32 || self.frames < 3 {
            return Err(Error::Config(format!(
                "synthetic corpus needs subjects, samples, frames >= 3 and size >= 32: {self:?}"
            )));
        }
        if !(self.shading >= 0.0) {
            return Err(Error::Config(format!("shading must be non-negative, got {}", self.shading)));
        }
        if !(self.amplitude > 0.0) {
            return Err(Error::Config(format!("amplitude must be positive, got {}", self.amplitude)));
        }
        Ok(())
    }
}

/// One generated clip held in memory.
#[derive(Clone, Debug)]
pub struct SynthSample {
    pub frames: Vec<Image>,
    pub landmarks: LandmarkSet,
    pub onset: usize,
    pub apex: usize,
    pub offset: usize,
}

const NEGATIVE_LABELS: [&str; 6] = ["disgust", "sadness", "fear", "anger", "repression", "contempt"];

/// Displacement direction of each landmark region (left eye, right eye,
/// left lip, right lip) at the apex.
fn signature(class: Class) -> [[f64; 2]; 4] {
    match class {
        // Brows lower and draw together.
        Class::Negative => [[0.6, 0.8], [-0.6, 0.8], [0.0, 0.0], [0.0, 0.0]],
        // Lip corners rise and pull outward.
        Class::Positive => [[0.0, 0.0], [0.0, 0.0], [-0.7, -0.7], [0.7, -0.7]],
        // Brows rise, jaw drops.
        Class::Surprise => [[0.0, -1.0], [0.0, -1.0], [0.0, 0.8], [0.0, 0.8]],
    }
}

struct Texture {
    waves: Vec<(f64, f64, f64, f64)>,
}

impl Texture {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let waves = (0..10)
            .map(|_| {
                let wavelength = rng.random_range(7.0..18.0);
                let angle = rng.random_range(0.0..PI);
                let k = 2.0 * PI / wavelength;
                (k * angle.cos(), k * angle.sin(), rng.random_range(0.0..2.0 * PI), rng.random_range(6.0..14.0))
            })
            .collect();
        Texture { waves }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        128.0 + self.waves.iter().map(|&(kx, ky, ph, a)| a * (kx * x + ky * y + ph).sin()).sum::<f64>()
    }
}

fn subject_rng(seed: u64, subject: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (subject as u64 + 1))
}

/// Renders one clip. Everything is a pure function of the config seed,
/// subject, class and variant index.
pub fn synth_sample(cfg: &SynthConfig, subject: usize, class: Class, variant: usize) -> SynthSample {
    let mut srng = subject_rng(cfg.seed, subject);
    let texture = Texture::new(&mut srng);
    let s = cfg.size as f64;
    let base = [[0.3, 0.37], [0.7, 0.37], [0.35, 0.72], [0.65, 0.72]];
    let subject_shift: Vec<[f64; 2]> = (0..4)
        .map(|_| [srng.random_range(-2.0..2.0), srng.random_range(-2.0..2.0)])
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(
        cfg.seed ^ ((subject as u64) << 32) ^ ((class.index() as u64) << 16) ^ variant as u64 ^ 0xA5A5,
    );
    let points: Vec<[f64; 2]> = (0..4)
        .map(|i| {
            [
                base[i][0] * s + subject_shift[i][0] + rng.random_range(-1.0..1.0),
                base[i][1] * s + subject_shift[i][1] + rng.random_range(-1.0..1.0),
            ]
        })
        .collect();
    let sigma = s * rng.random_range(0.085..0.11);
    let gain = cfg.amplitude * rng.random_range(0.8..1.2);
    let mut vectors = signature(class).map(|[dx, dy]| [dx * gain, dy * gain]);
    // A weak unrelated movement in one random region.
    let distractor = rng.random_range(0..4);
    let angle = rng.random_range(0.0..2.0 * PI);
    vectors[distractor][0] += 0.25 * cfg.amplitude * angle.cos();
    vectors[distractor][1] += 0.25 * cfg.amplitude * angle.sin();

    // Displacement and brightening at a pixel, both at full apex strength.
    let motion = |x: f64, y: f64| -> (f64, f64, f64) {
        let mut d = (0.0, 0.0, 0.0);
        for (p, v) in points.iter().zip(&vectors) {
            let r2 = (x - p[0]).powi(2) + (y - p[1]).powi(2);
            let w = (-r2 / (2.0 * sigma * sigma)).exp();
            d.0 += w * v[0];
            d.1 += w * v[1];
            d.2 += w * v[0].hypot(v[1]) / cfg.amplitude;
        }
        (d.0, d.1, d.2 * cfg.shading)
    };

    let offset = cfg.frames - 1;
    let lo = (cfg.frames / 3).max(1);
    let hi = (2 * cfg.frames / 3).clamp(lo, offset - 1);
    let apex = rng.random_range(lo..=hi);
    let frames = (0..cfg.frames)
        .map(|t| {
            let a = if t <= apex {
                t as f64 / apex as f64
            } else {
                0.3 + 0.7 * (offset - t) as f64 / (offset - apex) as f64
            };
            let mut noise = ChaCha8Rng::seed_from_u64(rng.random());
            Image::from_fn(cfg.size, cfg.size, |x, y| {
                let (dx, dy, shade) = motion(x as f64, y as f64);
                let v = texture.at(x as f64 - a * dx, y as f64 - a * dy) + a * shade + noise.random_range(-1.0..1.0);
                v.round().clamp(0.0, 255.0)
            })
        })
        .collect();

    SynthSample {
        frames,
        landmarks: LandmarkSet {
            left_eye: points[0],
            right_eye: points[1],
            left_lip: points[2],
            right_lip: points[3],
        },
        onset: 0,
        apex,
        offset,
    }
}

pub fn sample_id(subject: usize, class: Class, variant: usize) -> String {
    format!("s{subject:02}_{}_{variant}", class.name())
}

/// Writes frames, landmark files and `manifest.csv` under `out_dir` and
/// returns the manifest. Paths in the manifest are relative to `out_dir`.
pub fn write_corpus(cfg: &SynthConfig, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir.join("landmarks"))?;
    let mut entries = Vec::new();
    for subject in 0..cfg.subjects {
        for class in Class::ALL {
            for variant in 0..cfg.samples_per_class {
                let id = sample_id(subject, class, variant);
                let sample = synth_sample(cfg, subject, class, variant);
                let frames_rel = Path::new("frames").join(&id);
                std::fs::create_dir_all(out_dir.join(&frames_rel))?;
                for (t, frame) in sample.frames.iter().enumerate() {
                    frame.save_gray(&out_dir.join(&frames_rel).join(format!("frame_{t:03}.png")))?;
                }
                let landmarks_rel = Path::new("landmarks").join(format!("{id}.json"));
                sample.landmarks.save(&out_dir.join(&landmarks_rel))?;
                let blank = cfg.blank_apex_every > 0 && subject % cfg.blank_apex_every == cfg.blank_apex_every - 1;
                let raw_label = match class {
                    Class::Negative => NEGATIVE_LABELS[(subject + variant) % NEGATIVE_LABELS.len()],
                    Class::Positive => "happiness",
                    Class::Surprise => "surprise",
                };
                entries.push(ManifestEntry {
                    sample_id: id,
                    subject_id: format!("s{subject:02}"),
                    dataset: Dataset::Synth,
                    frames_dir: frames_rel,
                    onset: sample.onset,
                    apex: (!blank).then_some(sample.apex),
                    offset: sample.offset,
                    raw_label: raw_label.to_string(),
                    class,
                    landmarks_path: landmarks_rel,
                });
            }
        }
    }
    let manifest = Manifest::new(entries, out_dir)?;
    manifest.save(&out_dir.join("manifest.csv"))?;
    Ok(manifest)
}
