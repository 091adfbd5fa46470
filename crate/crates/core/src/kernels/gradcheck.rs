//! Central finite-difference verification of the hand-derived gradients.

use ndarray::{Array2, Array3};
use thiserror::Error;

use super::attention::{fuse_key_gradients, fuse_with_keys};
use super::bilinear;
use super::deform::{deformable_conv2d, deformable_conv2d_backward, DeformableKernel};

#[derive(Debug, Error)]
pub enum GradCheckError {
    #[error("sample point ({y}, {x}) sits within epsilon of a bilinear breakpoint")]
    NonDifferentiablePoint { y: f64, x: f64 },
}

/// Relative error of an analytic/numeric gradient pair, guarded against
/// near-zero denominators.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-3);
    (analytic - numeric).abs() / denom
}

/// Central finite differences of a scalar function at `x`.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let hi = f(&probe);
        probe[i] = x[i] - eps;
        let lo = f(&probe);
        probe[i] = x[i];
        grad[i] = (hi - lo) / (2.0 * eps);
    }
    grad
}

/// Checks the point-coordinate gradients of bilinear sampling at the
/// given fractional points; returns the max relative error.
pub fn check_bilinear_gradients(
    map: &Array2<f64>,
    points: &[(f64, f64)],
    eps: f64,
) -> Result<f64, GradCheckError> {
    let mut max_err = 0.0f64;
    for &(y, x) in points {
        if bilinear::near_breakpoint(y, eps) || bilinear::near_breakpoint(x, eps) {
            return Err(GradCheckError::NonDifferentiablePoint { y, x });
        }
        let view = map.view();
        let (_, d_dy, d_dx) = bilinear::sample_with_grad(&view, y, x);
        let mut f = |p: &[f64]| bilinear::sample(&view, p[0], p[1]);
        let num = central_difference(&mut f, &[y, x], eps);
        max_err = max_err
            .max(relative_error(d_dy, num[0]))
            .max(relative_error(d_dx, num[1]));
    }
    Ok(max_err)
}

/// Checks the offset-field gradients of the deformable convolution for a
/// random-cotangent scalar objective; returns the max relative error.
/// Offsets must keep every sample away from integer breakpoints.
pub fn check_deformable_offset_gradients(
    input: &Array3<f64>,
    kernel: &DeformableKernel,
    cotangent: &Array3<f64>,
    eps: f64,
) -> Result<f64, GradCheckError> {
    let objective = |k: &DeformableKernel| -> f64 {
        let out = deformable_conv2d(input, k).unwrap();
        out.iter().zip(cotangent.iter()).map(|(a, b)| a * b).sum()
    };
    let (_, d_offsets) = deformable_conv2d_backward(input, kernel, cotangent).unwrap();
    let mut max_err = 0.0f64;
    let mut probe = kernel.clone();
    let flat: Vec<usize> = (0..kernel.offsets.len()).collect();
    for &i in &flat {
        let base = kernel.offsets.as_slice().unwrap()[i];
        probe.offsets.as_slice_mut().unwrap()[i] = base + eps;
        let hi = objective(&probe);
        probe.offsets.as_slice_mut().unwrap()[i] = base - eps;
        let lo = objective(&probe);
        probe.offsets.as_slice_mut().unwrap()[i] = base;
        let numeric = (hi - lo) / (2.0 * eps);
        let analytic = d_offsets.as_slice().unwrap()[i];
        max_err = max_err.max(relative_error(analytic, numeric));
    }
    Ok(max_err)
}

/// Checks the key gradients of attention fusion against central
/// differences; returns the max relative error.
pub fn check_attention_key_gradients(
    features: &[Array3<f64>],
    keys: &[Array3<f64>],
    radius: usize,
    center_frame: usize,
    cotangent: &Array3<f64>,
    eps: f64,
) -> f64 {
    let objective = |keys: &[Array3<f64>]| -> f64 {
        let out = fuse_with_keys(features, keys, radius, center_frame).unwrap();
        out.iter().zip(cotangent.iter()).map(|(a, b)| a * b).sum()
    };
    let analytic =
        fuse_key_gradients(features, keys, radius, center_frame, cotangent).unwrap();
    let mut max_err = 0.0f64;
    let mut probe: Vec<Array3<f64>> = keys.to_vec();
    for fi in 0..keys.len() {
        for i in 0..keys[fi].len() {
            let base = keys[fi].as_slice().unwrap()[i];
            probe[fi].as_slice_mut().unwrap()[i] = base + eps;
            let hi = objective(&probe);
            probe[fi].as_slice_mut().unwrap()[i] = base - eps;
            let lo = objective(&probe);
            probe[fi].as_slice_mut().unwrap()[i] = base;
            let numeric = (hi - lo) / (2.0 * eps);
            let a = analytic[fi].as_slice().unwrap()[i];
            max_err = max_err.max(relative_error(a, numeric));
        }
    }
    max_err
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::deform::grid_3x3;
    use rand::{Rng, SeedableRng};

    #[test]
    fn bilinear_gradients_match_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let map = Array2::from_shape_fn((8, 8), |_| rng.gen_range(-1.0..1.0));
        let points: Vec<(f64, f64)> = (0..50)
            .map(|_| (rng.gen_range(0.1..6.9), rng.gen_range(0.1..6.9)))
            .map(|(y, x): (f64, f64)| {
                // Nudge away from integer breakpoints.
                let fix = |v: f64| if (v - v.round()).abs() < 0.05 { v + 0.1 } else { v };
                (fix(y), fix(x))
            })
            .collect();
        let err = check_bilinear_gradients(&map, &points, 1e-6).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn breakpoint_points_are_flagged() {
        let map = Array2::zeros((4, 4));
        let err = check_bilinear_gradients(&map, &[(2.0, 1.5)], 1e-6).unwrap_err();
        assert!(matches!(err, GradCheckError::NonDifferentiablePoint { .. }));
    }

    #[test]
    fn deformable_offset_gradients_match_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let input = Array3::from_shape_fn((1, 8, 8), |_| rng.gen_range(-1.0..1.0));
        let weights: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut kernel = DeformableKernel::with_zero_offsets(weights, grid_3x3(), 8, 8);
        for v in kernel.offsets.iter_mut() {
            *v = rng.gen_range(0.2..0.45);
        }
        let cot = Array3::from_shape_fn((1, 8, 8), |_| rng.gen_range(-1.0..1.0));
        let err = check_deformable_offset_gradients(&input, &kernel, &cot, 1e-6).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn attention_key_gradients_match_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let features: Vec<Array3<f64>> = (0..3)
            .map(|_| Array3::from_shape_fn((2, 4, 4), |_| rng.gen_range(-1.0..1.0)))
            .collect();
        let keys: Vec<Array3<f64>> = (0..3)
            .map(|_| Array3::from_shape_fn((2, 4, 4), |_| rng.gen_range(-1.0..1.0)))
            .collect();
        let cot = Array3::from_shape_fn((2, 4, 4), |_| rng.gen_range(-1.0..1.0));
        let err = check_attention_key_gradients(&features, &keys, 1, 1, &cot, 1e-6);
        assert!(err < 1e-4, "max relative error {err}");
    }
}
