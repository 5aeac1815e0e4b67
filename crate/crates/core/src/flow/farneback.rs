//! Dense optical flow by polynomial expansion (Farneback).
//!
//! Every pixel neighbourhood is approximated by a quadratic
//! `f(p) ~ p^T A p + b^T p + c` fitted with Gaussian-weighted least squares.
//! A displacement `d` maps the onset expansion onto the apex one through
//! `b_apex = b_onset - 2 A d`; the per-pixel constraints are pooled over a
//! Gaussian window and solved for `d`, refined over a few iterations and a
//! coarse-to-fine pyramid.

use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use super::image::{gaussian_kernel, Image};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowParams {
    pub levels: usize,
    pub pyramid_scale: f64,
    /// Side of the window pooling displacement constraints.
    pub window_size: usize,
    pub iterations: usize,
    /// Radius of the polynomial-fit neighbourhood.
    pub poly_n: usize,
    pub poly_sigma: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            levels: 3,
            pyramid_scale: 0.5,
            window_size: 15,
            iterations: 3,
            poly_n: 5,
            poly_sigma: 1.1,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.iterations == 0 || self.window_size == 0 || self.poly_n == 0 {
            return Err(Error::Config(format!("flow parameters must be positive: {self:?}")));
        }
        if !(self.pyramid_scale > 0.0 && self.pyramid_scale < 1.0) || self.poly_sigma <= 0.0 {
            return Err(Error::Config(format!("flow parameters out of range: {self:?}")));
        }
        Ok(())
    }
}

/// Per-pixel horizontal (`u`) and vertical (`v`) displacement in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub u: Image,
    pub v: Image,
}

impl FlowField {
    pub fn new(u: Image, v: Image) -> Result<Self> {
        if u.width() != v.width() || u.height() != v.height() {
            return Err(Error::Shape {
                op: "flow field",
                lhs: vec![u.height(), u.width()],
                rhs: vec![v.height(), v.width()],
            });
        }
        Ok(FlowField { u, v })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            u: Image::zeros(width, height),
            v: Image::zeros(width, height),
        }
    }

    pub fn width(&self) -> usize {
        self.u.width()
    }

    pub fn height(&self) -> usize {
        self.u.height()
    }
}

/// Quadratic coefficients per pixel: `[b_x, b_y, a_xx, a_yy, a_xy]`, where the
/// model is `a_xx x^2 + a_yy y^2 + 2 a_xy x y + b_x x + b_y y + c`.
struct Expansion {
    width: usize,
    height: usize,
    coeffs: Vec<[f64; 5]>,
}

impl Expansion {
    fn at(&self, x: usize, y: usize) -> &[f64; 5] {
        &self.coeffs[y * self.width + x]
    }

    fn sample(&self, x: f64, y: f64) -> [f64; 5] {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let (c00, c10, c01, c11) = (self.at(x0, y0), self.at(x1, y0), self.at(x0, y1), self.at(x1, y1));
        let mut out = [0.0; 5];
        for k in 0..5 {
            let top = c00[k] * (1.0 - fx) + c10[k] * fx;
            let bottom = c01[k] * (1.0 - fx) + c11[k] * fx;
            out[k] = top * (1.0 - fy) + bottom * fy;
        }
        out
    }
}

fn polynomial_expansion(img: &Image, n: usize, sigma: f64) -> Expansion {
    let g = gaussian_kernel(sigma, n, false);
    let r = n as isize;
    let k1: Vec<f64> = (-r..=r).zip(&g).map(|(t, w)| w * t as f64).collect();
    let k2: Vec<f64> = (-r..=r).zip(&g).map(|(t, w)| w * (t * t) as f64).collect();

    // Normal-equation matrix for the basis [1, x, y, x^2, y^2, xy] under the
    // separable applicability g(x) g(y); identical at every pixel.
    let mut gram = Matrix6::<f64>::zeros();
    for dy in -r..=r {
        for dx in -r..=r {
            let w = g[(dx + r) as usize] * g[(dy + r) as usize];
            let (x, y) = (dx as f64, dy as f64);
            let basis = Vector6::new(1.0, x, y, x * x, y * y, x * y);
            gram += basis * basis.transpose() * w;
        }
    }
    let inverse = gram.try_inverse().expect("polynomial basis Gram matrix is positive definite");

    // Correlations of the image with each weighted basis function.
    let c00 = img.separable_filter(&g, &g);
    let c10 = img.separable_filter(&k1, &g);
    let c01 = img.separable_filter(&g, &k1);
    let c20 = img.separable_filter(&k2, &g);
    let c02 = img.separable_filter(&g, &k2);
    let c11 = img.separable_filter(&k1, &k1);

    let coeffs = (0..img.width() * img.height())
        .map(|i| {
            let rhs = Vector6::new(
                c00.data()[i],
                c10.data()[i],
                c01.data()[i],
                c20.data()[i],
                c02.data()[i],
                c11.data()[i],
            );
            let r = inverse * rhs;
            [r[1], r[2], r[3], r[4], r[5] * 0.5]
        })
        .collect();
    Expansion {
        width: img.width(),
        height: img.height(),
        coeffs,
    }
}

/// Windowed least-squares terms `[G11, G12, G22, h1, h2]` with `G = A^T A`
/// and `h = A^T db`, for the current flow estimate.
fn constraint_terms(onset: &Expansion, apex: &Expansion, flow: &FlowField) -> [Image; 5] {
    let (w, h) = (onset.width, onset.height);
    let mut terms: [Image; 5] = std::array::from_fn(|_| Image::zeros(w, h));
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (flow.u.get(x, y), flow.v.get(x, y));
            let r0 = onset.at(x, y);
            let r1 = apex.sample(x as f64 + dx, y as f64 + dy);
            let a11 = 0.5 * (r0[2] + r1[2]);
            let a22 = 0.5 * (r0[3] + r1[3]);
            let a12 = 0.5 * (r0[4] + r1[4]);
            let b1 = -0.5 * (r1[0] - r0[0]) + a11 * dx + a12 * dy;
            let b2 = -0.5 * (r1[1] - r0[1]) + a12 * dx + a22 * dy;
            let vals = [
                a11 * a11 + a12 * a12,
                a12 * (a11 + a22),
                a12 * a12 + a22 * a22,
                a11 * b1 + a12 * b2,
                a12 * b1 + a22 * b2,
            ];
            for (t, v) in terms.iter_mut().zip(vals) {
                t.set(x, y, v);
            }
        }
    }
    terms
}

fn solve_flow(terms: &[Image; 5], window_sigma: f64, radius: usize) -> FlowField {
    let kernel = gaussian_kernel(window_sigma, radius, true);
    let pooled: Vec<Image> = terms.iter().map(|t| t.separable_filter(&kernel, &kernel)).collect();
    let (w, h) = (terms[0].width(), terms[0].height());
    let mut flow = FlowField::zeros(w, h);
    for i in 0..w * h {
        let g11 = pooled[0].data()[i];
        let g12 = pooled[1].data()[i];
        let g22 = pooled[2].data()[i];
        let h1 = pooled[3].data()[i];
        let h2 = pooled[4].data()[i];
        let idet = 1.0 / (g11 * g22 - g12 * g12 + 1e-3);
        // `+ 0.0` folds a negative zero into positive zero.
        flow.u.data_mut()[i] = (g22 * h1 - g12 * h2) * idet + 0.0;
        flow.v.data_mut()[i] = (g11 * h2 - g12 * h1) * idet + 0.0;
    }
    flow
}

fn downscale(img: &Image, scale: f64) -> Image {
    if scale == 1.0 {
        return img.clone();
    }
    let sigma = (1.0 / scale - 1.0) * 0.5;
    let w = ((img.width() as f64 * scale).round() as usize).max(1);
    let h = ((img.height() as f64 * scale).round() as usize).max(1);
    img.gaussian_blur(sigma).resize(w, h)
}

fn upscale_flow(flow: &FlowField, width: usize, height: usize) -> FlowField {
    let sx = width as f64 / flow.width() as f64;
    let sy = height as f64 / flow.height() as f64;
    let mut u = flow.u.resize(width, height);
    let mut v = flow.v.resize(width, height);
    u.data_mut().iter_mut().for_each(|x| *x *= sx);
    v.data_mut().iter_mut().for_each(|x| *x *= sy);
    FlowField { u, v }
}

/// Dense flow from `onset` to `apex`: `apex(p) ~ onset(p - flow(p))`.
pub fn compute_flow(onset: &Image, apex: &Image, params: &FlowParams) -> Result<FlowField> {
    params.validate()?;
    if onset.width() != apex.width() || onset.height() != apex.height() {
        return Err(Error::Shape {
            op: "compute_flow",
            lhs: vec![onset.height(), onset.width()],
            rhs: vec![apex.height(), apex.width()],
        });
    }
    // Drop pyramid levels whose images would be smaller than the fit window.
    let min_side = 2 * params.poly_n + 1;
    let mut levels = params.levels;
    while levels > 1 {
        let s = params.pyramid_scale.powi(levels as i32 - 1);
        let side = (onset.width().min(onset.height()) as f64 * s).round() as usize;
        if side >= min_side {
            break;
        }
        levels -= 1;
    }

    let radius = params.window_size / 2;
    let window_sigma = (radius as f64 * 0.3).max(0.5);
    let mut flow: Option<FlowField> = None;
    for level in (0..levels).rev() {
        let scale = params.pyramid_scale.powi(level as i32);
        let i0 = downscale(onset, scale);
        let i1 = downscale(apex, scale);
        let mut current = match flow.take() {
            Some(f) => upscale_flow(&f, i0.width(), i0.height()),
            None => FlowField::zeros(i0.width(), i0.height()),
        };
        let e0 = polynomial_expansion(&i0, params.poly_n, params.poly_sigma);
        let e1 = polynomial_expansion(&i1, params.poly_n, params.poly_sigma);
        for _ in 0..params.iterations {
            let terms = constraint_terms(&e0, &e1, &current);
            current = solve_flow(&terms, window_sigma, radius);
        }
        flow = Some(current);
    }
    Ok(flow.expect("at least one pyramid level"))
}
