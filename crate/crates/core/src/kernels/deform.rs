//! Deformable convolution: a scalar-weighted kernel whose taps are
//! displaced by a learned per-pixel offset field and sampled bilinearly.

use ndarray::{Array3, Array4};

use super::bilinear;
use super::KernelError;

/// A deformable kernel: scalar weights over the regular grid plus a
/// per-output-pixel, per-tap offset field.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformableKernel {
    /// One weight per grid location (K values).
    pub weights: Vec<f64>,
    /// Regular grid taps `(dy, dx)`, e.g. the 3x3 neighborhood.
    pub grid: Vec<(i64, i64)>,
    /// Learned offsets, `[K][H][W][2]` with the last axis `(dy, dx)` in
    /// pixels.
    pub offsets: Array4<f64>,
}

/// The standard 3x3 grid in row-major order.
pub fn grid_3x3() -> Vec<(i64, i64)> {
    let mut g = Vec::with_capacity(9);
    for dy in -1..=1 {
        for dx in -1..=1 {
            g.push((dy, dx));
        }
    }
    g
}

impl DeformableKernel {
    /// A kernel with zero offsets everywhere.
    pub fn with_zero_offsets(weights: Vec<f64>, grid: Vec<(i64, i64)>, h: usize, w: usize) -> Self {
        let k = grid.len();
        DeformableKernel {
            weights,
            grid,
            offsets: Array4::zeros((k, h, w, 2)),
        }
    }

    /// Delta kernel: unit weight at the grid center, zero elsewhere.
    pub fn delta_3x3(h: usize, w: usize) -> Self {
        let mut weights = vec![0.0; 9];
        weights[4] = 1.0;
        Self::with_zero_offsets(weights, grid_3x3(), h, w)
    }

    fn check(&self, h: usize, w: usize) -> Result<(), KernelError> {
        if self.weights.len() != self.grid.len() {
            return Err(KernelError::ShapeMismatch(format!(
                "kernel has {} weights but {} grid taps",
                self.weights.len(),
                self.grid.len()
            )));
        }
        let os = self.offsets.shape();
        if os != [self.grid.len(), h, w, 2] {
            return Err(KernelError::ShapeMismatch(format!(
                "offset field shape {os:?} does not match K={} and output {h}x{w}",
                self.grid.len()
            )));
        }
        Ok(())
    }
}

/// Forward deformable convolution; stride 1, zero padding, output
/// geometry equal to the input geometry. The scalar kernel is applied to
/// every channel.
pub fn deformable_conv2d(
    input: &Array3<f64>,
    kernel: &DeformableKernel,
) -> Result<Array3<f64>, KernelError> {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    kernel.check(h, w)?;
    let mut out = Array3::zeros((c, h, w));
    for ch in 0..c {
        let plane = input.index_axis(ndarray::Axis(0), ch);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (j, &(gy, gx)) in kernel.grid.iter().enumerate() {
                    let sy = y as f64 + gy as f64 + kernel.offsets[[j, y, x, 0]];
                    let sx = x as f64 + gx as f64 + kernel.offsets[[j, y, x, 1]];
                    acc += kernel.weights[j] * bilinear::sample(&plane, sy, sx);
                }
                out[[ch, y, x]] = acc;
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`deformable_conv2d`]: given the upstream gradient on the
/// output, returns the gradients on the input tensor and on the offset
/// field (summed over channels).
pub fn deformable_conv2d_backward(
    input: &Array3<f64>,
    kernel: &DeformableKernel,
    d_out: &Array3<f64>,
) -> Result<(Array3<f64>, Array4<f64>), KernelError> {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    kernel.check(h, w)?;
    if d_out.shape() != input.shape() {
        return Err(KernelError::ShapeMismatch(
            "output gradient shape must match input shape".into(),
        ));
    }
    let mut d_input = Array3::zeros((c, h, w));
    let mut d_offsets = Array4::zeros(kernel.offsets.raw_dim());
    for ch in 0..c {
        let plane = input.index_axis(ndarray::Axis(0), ch);
        let mut d_plane = ndarray::Array2::zeros((h, w));
        for y in 0..h {
            for x in 0..w {
                let g = d_out[[ch, y, x]];
                if g == 0.0 {
                    continue;
                }
                for (j, &(gy, gx)) in kernel.grid.iter().enumerate() {
                    let sy = y as f64 + gy as f64 + kernel.offsets[[j, y, x, 0]];
                    let sx = x as f64 + gx as f64 + kernel.offsets[[j, y, x, 1]];
                    let wj = kernel.weights[j];
                    let (_, d_dy, d_dx) = bilinear::sample_with_grad(&plane, sy, sx);
                    d_offsets[[j, y, x, 0]] += g * wj * d_dy;
                    d_offsets[[j, y, x, 1]] += g * wj * d_dx;
                    bilinear::scatter_grad(&mut d_plane, sy, sx, g * wj);
                }
            }
        }
        d_input
            .index_axis_mut(ndarray::Axis(0), ch)
            .assign(&d_plane);
    }
    Ok((d_input, d_offsets))
}

/// Dense scalar-kernel convolution used as the zero-offset oracle in
/// tests: same tap grid, no offsets, zero padding.
pub fn dense_conv2d_oracle(
    input: &Array3<f64>,
    weights: &[f64],
    grid: &[(i64, i64)],
) -> Array3<f64> {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let mut out = Array3::zeros((c, h, w));
    for ch in 0..c {
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let mut acc = 0.0;
                for (j, &(gy, gx)) in grid.iter().enumerate() {
                    let (sy, sx) = (y + gy, x + gx);
                    if sy >= 0 && sy < h as i64 && sx >= 0 && sx < w as i64 {
                        acc += weights[j] * input[[ch, sy as usize, sx as usize]];
                    }
                }
                out[[ch, y as usize, x as usize]] = acc;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_input(c: usize, h: usize, w: usize, seed: u64) -> Array3<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((c, h, w), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn delta_kernel_with_zero_offsets_is_identity() {
        let input = random_input(2, 6, 6, 1);
        let kernel = DeformableKernel::delta_3x3(6, 6);
        let out = deformable_conv2d(&input, &kernel).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn zero_offsets_match_dense_convolution() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for seed in 0..10 {
            let input = random_input(3, 8, 8, 100 + seed);
            let weights: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let kernel =
                DeformableKernel::with_zero_offsets(weights.clone(), grid_3x3(), 8, 8);
            let out = deformable_conv2d(&input, &kernel).unwrap();
            let oracle = dense_conv2d_oracle(&input, &weights, &grid_3x3());
            for (a, b) in out.iter().zip(oracle.iter()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn constant_field_yields_weight_sum_in_the_interior() {
        let input = Array3::from_elem((1, 10, 10), 2.0);
        let weights: Vec<f64> = (0..9).map(|j| 0.1 * (j as f64 + 1.0)).collect();
        let wsum: f64 = weights.iter().sum();
        let mut kernel = DeformableKernel::with_zero_offsets(weights, grid_3x3(), 10, 10);
        // Arbitrary interior-safe offsets.
        for v in kernel.offsets.iter_mut() {
            *v = 0.37;
        }
        let out = deformable_conv2d(&input, &kernel).unwrap();
        // Interior pixels see only in-bounds samples of the constant.
        for y in 3..7 {
            for x in 3..7 {
                assert!((out[[0, y, x]] - wsum * 2.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn offset_shape_mismatch_is_rejected() {
        let input = random_input(1, 4, 4, 3);
        let kernel = DeformableKernel::delta_3x3(5, 5);
        assert!(matches!(
            deformable_conv2d(&input, &kernel),
            Err(KernelError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn backward_input_gradient_is_adjoint() {
        // <d_input, v> must equal <d_out, dconv(v)> for the linear map.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let input = random_input(2, 6, 6, 7);
        let weights: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut kernel = DeformableKernel::with_zero_offsets(weights, grid_3x3(), 6, 6);
        for v in kernel.offsets.iter_mut() {
            *v = rng.gen_range(-0.4..0.4);
        }
        let d_out = random_input(2, 6, 6, 8);
        let (d_input, _) = deformable_conv2d_backward(&input, &kernel, &d_out).unwrap();
        let probe = random_input(2, 6, 6, 9);
        let lhs: f64 = d_input.iter().zip(probe.iter()).map(|(a, b)| a * b).sum();
        let out_probe = deformable_conv2d(&probe, &kernel).unwrap();
        let rhs: f64 = d_out.iter().zip(out_probe.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }
}
