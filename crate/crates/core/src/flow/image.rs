use std::path::Path;

use crate::error::{Error, Result};

/// Single-channel image with f64 samples in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Geometry(format!("empty image {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::Shape {
                op: "image",
                lhs: vec![height, width],
                rhs: vec![data.len()],
            });
        }
        Ok(Image { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Image::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "empty image");
        Image {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// `f(x, y)` evaluated at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "empty image");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Image { width, height, data }
    }

    pub fn from_luma8(width: usize, height: usize, pixels: &[u8]) -> Result<Self> {
        Image::new(width, height, pixels.iter().map(|&p| p as f64).collect())
    }

    /// Loads an 8-bit grayscale frame (PNG or PGM); colour inputs are converted.
    pub fn load_gray(path: &Path) -> Result<Self> {
        let img = image::open(path)?.into_luma8();
        let (w, h) = img.dimensions();
        Image::from_luma8(w as usize, h as usize, img.as_raw())
    }

    /// Rounds and clamps to 8 bits and writes PNG or PGM by extension.
    pub fn save_gray(&self, path: &Path) -> Result<()> {
        let pixels: Vec<u8> = self.data.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, pixels)
            .expect("buffer matches dimensions");
        img.save(path)?;
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Sample with clamp-to-edge addressing.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }

    /// Bilinear sample at a fractional position, clamped to the border.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Bilinear resize with pixel-centre alignment.
    pub fn resize(&self, width: usize, height: usize) -> Image {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        Image::from_fn(width, height, |x, y| {
            self.sample_bilinear((x as f64 + 0.5) * sx - 0.5, (y as f64 + 0.5) * sy - 0.5)
        })
    }

    /// Separable Gaussian blur with clamp-to-edge borders. Radius is
    /// `ceil(3 sigma)`; `sigma <= 0` returns a copy.
    pub fn gaussian_blur(&self, sigma: f64) -> Image {
        if sigma <= 0.0 {
            return self.clone();
        }
        let radius = (3.0 * sigma).ceil() as isize;
        let kernel = gaussian_kernel(sigma, radius as usize, true);
        self.separable_filter(&kernel, &kernel)
    }

    /// Correlates rows with `kx` then columns with `ky` (both odd length,
    /// centred), clamping at the border.
    pub fn separable_filter(&self, kx: &[f64], ky: &[f64]) -> Image {
        let rx = (kx.len() / 2) as isize;
        let ry = (ky.len() / 2) as isize;
        let horizontal = Image::from_fn(self.width, self.height, |x, y| {
            kx.iter()
                .enumerate()
                .map(|(i, k)| k * self.get_clamped(x as isize + i as isize - rx, y as isize))
                .sum()
        });
        Image::from_fn(self.width, self.height, |x, y| {
            ky.iter()
                .enumerate()
                .map(|(i, k)| k * horizontal.get_clamped(x as isize, y as isize + i as isize - ry))
                .sum()
        })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Samples of `exp(-t^2 / (2 sigma^2))` for `t in -radius..=radius`.
pub(crate) fn gaussian_kernel(sigma: f64, radius: usize, normalize: bool) -> Vec<f64> {
    let r = radius as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|t| (-(t * t) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    if normalize {
        let total: f64 = k.iter().sum();
        k.iter_mut().for_each(|v| *v /= total);
    }
    k
}
