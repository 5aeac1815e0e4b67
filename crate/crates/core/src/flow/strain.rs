use super::farneback::FlowField;
use super::image::Image;
use crate::error::{Error, Result};

/// Central differences inside, one-sided at the borders; unit pixel spacing.
fn derivative_x(img: &Image, x: usize, y: usize) -> f64 {
    let w = img.width();
    if x == 0 {
        img.get(1, y) - img.get(0, y)
    } else if x == w - 1 {
        img.get(w - 1, y) - img.get(w - 2, y)
    } else {
        0.5 * (img.get(x + 1, y) - img.get(x - 1, y))
    }
}

fn derivative_y(img: &Image, x: usize, y: usize) -> f64 {
    let h = img.height();
    if y == 0 {
        img.get(x, 1) - img.get(x, 0)
    } else if y == h - 1 {
        img.get(x, h - 1) - img.get(x, h - 2)
    } else {
        0.5 * (img.get(x, y + 1) - img.get(x, y - 1))
    }
}

/// Optical strain magnitude
/// `sqrt(u_x^2 + v_y^2 + (u_y^2 + v_x^2) / 2)` at every pixel.
pub fn compute_strain(flow: &FlowField) -> Result<Image> {
    let (w, h) = (flow.width(), flow.height());
    if w < 2 || h < 2 {
        return Err(Error::Geometry(format!("strain needs a flow field of at least 2x2, got {w}x{h}")));
    }
    Ok(Image::from_fn(w, h, |x, y| {
        let ux = derivative_x(&flow.u, x, y);
        let uy = derivative_y(&flow.u, x, y);
        let vx = derivative_x(&flow.v, x, y);
        let vy = derivative_y(&flow.v, x, y);
        (ux * ux + vy * vy + 0.5 * (uy * uy + vx * vx)).sqrt()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(w: usize, h: usize, u: impl Fn(f64, f64) -> f64, v: impl Fn(f64, f64) -> f64) -> FlowField {
        FlowField::new(
            Image::from_fn(w, h, |x, y| u(x as f64, y as f64)),
            Image::from_fn(w, h, |x, y| v(x as f64, y as f64)),
        )
        .unwrap()
    }

    #[test]
    fn constant_flow_has_zero_strain() {
        let s = compute_strain(&field(9, 7, |_, _| 1.75, |_, _| -0.5)).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shear_keeps_half_weight() {
        let b = -0.8;
        let s = compute_strain(&field(9, 7, |_, _| 0.0, |x, _| b * x)).unwrap();
        for y in 1..6 {
            for x in 1..8 {
                assert!((s.get(x, y) - b.abs() / 2f64.sqrt()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tiny_field_is_rejected() {
        assert!(compute_strain(&FlowField::zeros(1, 5)).is_err());
    }
}
