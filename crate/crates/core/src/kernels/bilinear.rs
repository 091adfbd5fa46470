//! Bilinear sampling with zero padding and exact analytic gradients.
//!
//! Sampling is piecewise bilinear in the point coordinates; the
//! gradients below are exact away from integer-coordinate breakpoints.

use ndarray::{Array2, ArrayView2};

/// Pixel value with zero padding outside `[0, H-1] x [0, W-1]`.
fn pixel(map: &ArrayView2<f64>, y: isize, x: isize) -> f64 {
    let (h, w) = (map.shape()[0] as isize, map.shape()[1] as isize);
    if y < 0 || y >= h || x < 0 || x >= w {
        0.0
    } else {
        map[[y as usize, x as usize]]
    }
}

/// Bilinear interpolation of one channel at a fractional point.
pub fn sample(map: &ArrayView2<f64>, y: f64, x: f64) -> f64 {
    let y0 = y.floor();
    let x0 = x.floor();
    let (fy, fx) = (y - y0, x - x0);
    let (y0, x0) = (y0 as isize, x0 as isize);
    (1.0 - fy) * (1.0 - fx) * pixel(map, y0, x0)
        + (1.0 - fy) * fx * pixel(map, y0, x0 + 1)
        + fy * (1.0 - fx) * pixel(map, y0 + 1, x0)
        + fy * fx * pixel(map, y0 + 1, x0 + 1)
}

/// Sample plus the exact derivatives w.r.t. the point coordinates.
pub fn sample_with_grad(map: &ArrayView2<f64>, y: f64, x: f64) -> (f64, f64, f64) {
    let y0 = y.floor();
    let x0 = x.floor();
    let (fy, fx) = (y - y0, x - x0);
    let (y0, x0) = (y0 as isize, x0 as isize);
    let p00 = pixel(map, y0, x0);
    let p01 = pixel(map, y0, x0 + 1);
    let p10 = pixel(map, y0 + 1, x0);
    let p11 = pixel(map, y0 + 1, x0 + 1);
    let value = (1.0 - fy) * (1.0 - fx) * p00
        + (1.0 - fy) * fx * p01
        + fy * (1.0 - fx) * p10
        + fy * fx * p11;
    let d_dy = (1.0 - fx) * (p10 - p00) + fx * (p11 - p01);
    let d_dx = (1.0 - fy) * (p01 - p00) + fy * (p11 - p10);
    (value, d_dy, d_dx)
}

/// Scatters an upstream gradient `dval` into the corner pixels that
/// contributed to a sample at `(y, x)` — the adjoint of [`sample`] with
/// respect to the map values.
pub fn scatter_grad(dmap: &mut Array2<f64>, y: f64, x: f64, dval: f64) {
    let (h, w) = (dmap.shape()[0] as isize, dmap.shape()[1] as isize);
    let y0 = y.floor();
    let x0 = x.floor();
    let (fy, fx) = (y - y0, x - x0);
    let (y0, x0) = (y0 as isize, x0 as isize);
    let mut add = |yy: isize, xx: isize, wgt: f64| {
        if yy >= 0 && yy < h && xx >= 0 && xx < w {
            dmap[[yy as usize, xx as usize]] += wgt * dval;
        }
    };
    add(y0, x0, (1.0 - fy) * (1.0 - fx));
    add(y0, x0 + 1, (1.0 - fy) * fx);
    add(y0 + 1, x0, fy * (1.0 - fx));
    add(y0 + 1, x0 + 1, fy * fx);
}

/// True when `v` sits within `tol` of an integer, where bilinear
/// sampling is non-differentiable.
pub fn near_breakpoint(v: f64, tol: f64) -> bool {
    (v - v.round()).abs() <= tol
}
