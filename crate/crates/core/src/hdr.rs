//! Dual-exposure LDR to HDR fusion, tone mapping, and the synthetic
//! LDR-pair oracle used for testing.
//!
//! The imaging model: two co-axial 12-bit cameras observe the same
//! scene, one behind an ND filter transmitting a fraction `alpha` of the
//! irradiance. In units of the dark (filtered) path's full-scale
//! radiance, the dark sensor reads `r` and the bright (unfiltered)
//! sensor reads `r / alpha`, clipped at full scale. Debevec-style
//! hat-weighted merging of the two readings recovers `r`, quantized into
//! a 16-bit container.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{ImageF64, ImageU16};

#[derive(Debug, Error)]
pub enum HdrError {
    #[error("bright and dark images have different geometries")]
    GeometryMismatch,
    #[error("invalid fusion config: {0}")]
    InvalidConfig(String),
}

/// Radiometric parameters of the dual-exposure rig.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HdrFusionConfig {
    /// ND-filter transmission of the dark path, in (0, 1).
    pub alpha: f64,
    /// Bright-image samples at or above this fraction of full scale are
    /// treated as saturated and excluded from the merge.
    pub saturation_fraction: f64,
    pub ldr_bit_depth: u8,
    pub hdr_bit_depth: u8,
}

impl Default for HdrFusionConfig {
    fn default() -> Self {
        HdrFusionConfig {
            alpha: 0.1,
            saturation_fraction: 0.98,
            ldr_bit_depth: 12,
            hdr_bit_depth: 16,
        }
    }
}

impl HdrFusionConfig {
    pub fn validate(&self) -> Result<(), HdrError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(HdrError::InvalidConfig("alpha must be in (0, 1)".into()));
        }
        if !(self.saturation_fraction > 0.0 && self.saturation_fraction <= 1.0) {
            return Err(HdrError::InvalidConfig(
                "saturation fraction must be in (0, 1]".into(),
            ));
        }
        for (name, d) in [
            ("ldr_bit_depth", self.ldr_bit_depth),
            ("hdr_bit_depth", self.hdr_bit_depth),
        ] {
            if !(8..=16).contains(&d) {
                return Err(HdrError::InvalidConfig(format!(
                    "{name} must be in 8..=16"
                )));
            }
        }
        Ok(())
    }

    pub fn ldr_max(&self) -> f64 {
        f64::from((1u32 << self.ldr_bit_depth) - 1)
    }

    pub fn hdr_max(&self) -> f64 {
        f64::from((1u32 << self.hdr_bit_depth) - 1)
    }
}

/// A linear-radiance frame stored as 16-bit integers under a declared
/// full-scale radiance, timestamped in µs.
#[derive(Debug, Clone, PartialEq)]
pub struct HdrFrame {
    pub image: ImageU16,
    /// Radiance (in dark-path full-scale units) mapped to the largest
    /// container value.
    pub full_scale_radiance: f64,
    pub timestamp: u64,
}

impl HdrFrame {
    /// Linear radiance in full-scale units.
    pub fn to_radiance(&self) -> ImageF64 {
        let scale = self.full_scale_radiance / self.hdr_container_max();
        self.image.to_f64_normalized(1.0).map(|v| v * scale)
    }

    fn hdr_container_max(&self) -> f64 {
        f64::from(u16::MAX)
    }
}

/// Outcome of a fusion run: the frame plus a saturation warning channel.
#[derive(Debug, Clone)]
pub struct FusionResult {
    pub frame: HdrFrame,
    /// Pixels where every sample was saturated; filled from the dark
    /// sample regardless of weight.
    pub all_saturated_pixels: usize,
}

/// Debevec hat weight on the integer LDR scale, strictly positive.
fn hat_weight(z: f64, z_max: f64) -> f64 {
    z.min(z_max - z) + 1.0
}

/// Merges a bright/dark 12-bit pair into a 16-bit linear HDR frame.
pub fn fuse_ldr_pair(
    bright: &ImageU16,
    dark: &ImageU16,
    cfg: &HdrFusionConfig,
) -> Result<FusionResult, HdrError> {
    cfg.validate()?;
    if bright.geometry != dark.geometry {
        return Err(HdrError::GeometryMismatch);
    }
    let z_max = cfg.ldr_max();
    let sat = cfg.saturation_fraction * z_max;
    let out_max = cfg.hdr_max();
    let mut data = Vec::with_capacity(dark.data.len());
    let mut all_saturated = 0usize;
    for (&zb, &zd) in bright.data.iter().zip(dark.data.iter()) {
        let (zb, zd) = (f64::from(zb), f64::from(zd));
        // Radiance estimates in dark-path full-scale units: the dark
        // sensor reads r directly, the bright sensor reads r / alpha.
        let r = if zb < sat {
            let wb = hat_weight(zb, z_max);
            let wd = hat_weight(zd, z_max);
            (wb * (zb / z_max * cfg.alpha) + wd * (zd / z_max)) / (wb + wd)
        } else {
            if zd >= sat {
                all_saturated += 1;
            }
            zd / z_max
        };
        data.push((r * out_max).round().clamp(0.0, out_max) as u16);
    }
    Ok(FusionResult {
        frame: HdrFrame {
            image: ImageU16::new(dark.geometry, data),
            full_scale_radiance: 1.0,
            timestamp: 0,
        },
        all_saturated_pixels: all_saturated,
    })
}

/// Test oracle inverting the optical model: renders the bright/dark
/// 12-bit pair a given radiance image (in [0, 1] of dark-path full
/// scale) would produce. Noise-free.
pub fn simulate_ldr_pair(
    radiance: &ImageF64,
    cfg: &HdrFusionConfig,
) -> Result<(ImageU16, ImageU16), HdrError> {
    cfg.validate()?;
    let z_max = cfg.ldr_max();
    let quantize = |v: f64| (v.clamp(0.0, 1.0) * z_max).round() as u16;
    let mut bright = Vec::with_capacity(radiance.data.len());
    let mut dark = Vec::with_capacity(radiance.data.len());
    for &r in &radiance.data {
        dark.push(quantize(r));
        bright.push(quantize(r / cfg.alpha));
    }
    Ok((
        ImageU16::new(radiance.geometry, bright),
        ImageU16::new(radiance.geometry, dark),
    ))
}

/// Global tone mapping: normalize by full scale, compress with
/// `x / (1 + x)`, gamma 1/2.2, quantize to 8 bits. Strictly monotone.
pub fn tone_map(hdr: &HdrFrame) -> Vec<u8> {
    hdr.image
        .data
        .iter()
        .map(|&v| {
            let x = f64::from(v) / f64::from(u16::MAX);
            let y = (x / (1.0 + x)).powf(1.0 / 2.2);
            (y * 255.0).round().clamp(0.0, 255.0) as u8
        })
        .collect()
}

/// Tone mapping for a normalized [0, 1] radiance image; same operator as
/// [`tone_map`] but without the integer container.
pub fn tone_map_f64(linear: &ImageF64) -> ImageF64 {
    linear.map(|x| (x.max(0.0) / (1.0 + x.max(0.0))).powf(1.0 / 2.2))
}
