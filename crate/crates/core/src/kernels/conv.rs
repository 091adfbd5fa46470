//! Dense 2D convolution with zero padding, the building block for the
//! extractor, offset predictors, combiners, and residual blocks.

use ndarray::{Array3, Array4};
use rand::Rng;

use super::KernelError;

/// A standard multi-channel convolution. Padding is fixed at
/// `kernel / 2` (same-size output for stride 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `[c_out][c_in][kh][kw]`
    pub weight: Array4<f64>,
    pub bias: Vec<f64>,
    pub stride: usize,
}

impl Conv2d {
    pub fn zeros(c_out: usize, c_in: usize, k: usize, stride: usize) -> Self {
        Conv2d {
            weight: Array4::zeros((c_out, c_in, k, k)),
            bias: vec![0.0; c_out],
            stride,
        }
    }

    /// Pass-through conv: output channel `c` copies input channel
    /// `src_start + c` through the kernel center.
    pub fn identity(c_out: usize, c_in: usize, k: usize, src_start: usize) -> Self {
        let mut conv = Self::zeros(c_out, c_in, k, 1);
        for c in 0..c_out {
            conv.weight[[c, src_start + c, k / 2, k / 2]] = 1.0;
        }
        conv
    }

    pub fn seeded(c_out: usize, c_in: usize, k: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let scale = 1.0 / ((c_in * k * k) as f64).sqrt();
        let weight = Array4::from_shape_fn((c_out, c_in, k, k), |_| {
            rng.gen_range(-scale..scale)
        });
        Conv2d {
            weight,
            bias: vec![0.0; c_out],
            stride,
        }
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, input: &Array3<f64>) -> Result<Array3<f64>, KernelError> {
        let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (c_out, kc, kh, kw) = (
            self.weight.shape()[0],
            self.weight.shape()[1],
            self.weight.shape()[2],
            self.weight.shape()[3],
        );
        if c_in != kc {
            return Err(KernelError::ShapeMismatch(format!(
                "conv expects {kc} input channels, got {c_in}"
            )));
        }
        let (ph, pw) = (kh / 2, kw / 2);
        let h_out = (h + 2 * ph - kh) / self.stride + 1;
        let w_out = (w + 2 * pw - kw) / self.stride + 1;
        let mut out = Array3::zeros((c_out, h_out, w_out));
        for co in 0..c_out {
            for oy in 0..h_out {
                for ox in 0..w_out {
                    let mut acc = self.bias[co];
                    let base_y = (oy * self.stride) as isize - ph as isize;
                    let base_x = (ox * self.stride) as isize - pw as isize;
                    for ci in 0..c_in {
                        for ky in 0..kh {
                            let iy = base_y + ky as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = base_x + kx as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += self.weight[[co, ci, ky, kx]]
                                    * input[[ci, iy as usize, ix as usize]];
                            }
                        }
                    }
                    out[[co, oy, ox]] = acc;
                }
            }
        }
        Ok(out)
    }
}

pub fn relu(x: &Array3<f64>) -> Array3<f64> {
    x.map(|&v| v.max(0.0))
}

pub fn tanh(x: &Array3<f64>) -> Array3<f64> {
    x.map(|&v| v.tanh())
}

pub fn sigmoid(x: &Array3<f64>) -> Array3<f64> {
    x.map(|&v| 1.0 / (1.0 + (-v).exp()))
}

/// A pre-activation residual block: `x + conv2(relu(conv1(x)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl ResidualBlock {
    pub fn zeros(channels: usize, k: usize) -> Self {
        ResidualBlock {
            conv1: Conv2d::zeros(channels, channels, k, 1),
            conv2: Conv2d::zeros(channels, channels, k, 1),
        }
    }

    pub fn seeded(channels: usize, k: usize, rng: &mut impl Rng) -> Self {
        ResidualBlock {
            conv1: Conv2d::seeded(channels, channels, k, 1, rng),
            conv2: Conv2d::seeded(channels, channels, k, 1, rng),
        }
    }

    pub fn forward(&self, x: &Array3<f64>) -> Result<Array3<f64>, KernelError> {
        let inner = self.conv2.forward(&relu(&self.conv1.forward(x)?))?;
        Ok(x + &inner)
    }
}

/// Bilinear resampling of a channel-major tensor to a new spatial size,
/// clamping coordinates at the borders. Constant fields stay constant.
pub fn upsample_bilinear(src: &Array3<f64>, h_out: usize, w_out: usize) -> Array3<f64> {
    let (c, h, w) = (src.shape()[0], src.shape()[1], src.shape()[2]);
    let sy = h as f64 / h_out as f64;
    let sx = w as f64 / w_out as f64;
    let mut out = Array3::zeros((c, h_out, w_out));
    for oy in 0..h_out {
        let y = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = y.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = y - y0 as f64;
        for ox in 0..w_out {
            let x = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = x.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = x - x0 as f64;
            for ch in 0..c {
                out[[ch, oy, ox]] = (1.0 - fy) * (1.0 - fx) * src[[ch, y0, x0]]
                    + (1.0 - fy) * fx * src[[ch, y0, x1]]
                    + fy * (1.0 - fx) * src[[ch, y1, x0]]
                    + fy * fx * src[[ch, y1, x1]];
            }
        }
    }
    out
}
