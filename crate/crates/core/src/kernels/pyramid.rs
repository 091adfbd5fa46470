//! Pyramidal deformable alignment: coarse-to-fine offset prediction and
//! cascaded aligned-feature combination.
//!
//! Feature pyramids are built by factor-2 strided convolutions. Offsets
//! are predicted coarsest-first; each finer level receives the bilinear
//! x2 upsampling of the coarser offsets with magnitudes doubled and adds
//! its own predicted correction.

use ndarray::{Array3, Array4};
use rand::Rng;

use super::conv::{relu, upsample_bilinear, Conv2d};
use super::deform::{deformable_conv2d, grid_3x3, DeformableKernel};
use super::{concat_channels, FeatureMap, KernelError};

/// Parameters of the alignment pyramid. Every offset predictor takes
/// `2C + 2K` input channels (the two features plus the upsampled coarser
/// offsets, zeros at the coarsest level); every combiner takes `2C`
/// (deformably convolved feature plus upsampled coarser aligned
/// feature, zeros at the coarsest level).
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidParams {
    pub levels: usize,
    /// Strided convs building level `l+1` from level `l` (length
    /// `levels - 1`), shared between the neighbor and reference feature.
    pub downsample: Vec<Conv2d>,
    /// Offset predictor per level, finest first; outputs `2K` channels.
    pub offset_predictors: Vec<Conv2d>,
    /// Scalar deformable kernel weights per level (K values each).
    pub dconv_weights: Vec<Vec<f64>>,
    /// Aligned-feature combiner per level, finest first.
    pub combiners: Vec<Conv2d>,
    /// Final combiner mixing the level-1 aligned feature with the
    /// reference feature.
    pub final_combiner: Conv2d,
}

pub const KERNEL_TAPS: usize = 9;

impl PyramidParams {
    pub fn zeros(levels: usize, channels: usize) -> Result<Self, KernelError> {
        if levels < 1 {
            return Err(KernelError::NonPositiveLevels);
        }
        Ok(PyramidParams {
            levels,
            downsample: (1..levels)
                .map(|_| Conv2d::zeros(channels, channels, 3, 2))
                .collect(),
            offset_predictors: (0..levels)
                .map(|_| Conv2d::zeros(2 * KERNEL_TAPS, 2 * channels + 2 * KERNEL_TAPS, 3, 1))
                .collect(),
            dconv_weights: (0..levels).map(|_| vec![0.0; KERNEL_TAPS]).collect(),
            combiners: (0..levels)
                .map(|_| Conv2d::zeros(channels, 2 * channels, 3, 1))
                .collect(),
            final_combiner: Conv2d::zeros(channels, 2 * channels, 3, 1),
        })
    }

    pub fn seeded(levels: usize, channels: usize, rng: &mut impl Rng) -> Result<Self, KernelError> {
        if levels < 1 {
            return Err(KernelError::NonPositiveLevels);
        }
        Ok(PyramidParams {
            levels,
            downsample: (1..levels)
                .map(|_| Conv2d::seeded(channels, channels, 3, 2, rng))
                .collect(),
            offset_predictors: (0..levels)
                .map(|_| {
                    Conv2d::seeded(2 * KERNEL_TAPS, 2 * channels + 2 * KERNEL_TAPS, 3, 1, rng)
                })
                .collect(),
            dconv_weights: (0..levels)
                .map(|_| (0..KERNEL_TAPS).map(|_| rng.gen_range(-0.3..0.3)).collect())
                .collect(),
            combiners: (0..levels)
                .map(|_| Conv2d::seeded(channels, 2 * channels, 3, 1, rng))
                .collect(),
            final_combiner: Conv2d::seeded(channels, 2 * channels, 3, 1, rng),
        })
    }

    /// Identity-path params for testing: delta deformable kernel,
    /// combiners that pass the deformably convolved feature through, and
    /// zero offset predictors.
    pub fn identity(levels: usize, channels: usize) -> Result<Self, KernelError> {
        let mut p = Self::zeros(levels, channels)?;
        for w in &mut p.dconv_weights {
            w[KERNEL_TAPS / 2] = 1.0;
        }
        for c in &mut p.combiners {
            *c = Conv2d::identity(channels, 2 * channels, 3, 0);
        }
        p.final_combiner = Conv2d::identity(channels, 2 * channels, 3, 0);
        Ok(p)
    }

    fn check_pair(&self, f_i: &FeatureMap, f_t: &FeatureMap) -> Result<(), KernelError> {
        if f_i.values.shape() != f_t.values.shape() {
            return Err(KernelError::ShapeMismatch(
                "neighbor and reference features must share a shape".into(),
            ));
        }
        Ok(())
    }

    /// Feature pyramid, finest first.
    fn build_pyramid(&self, f: &Array3<f64>) -> Result<Vec<Array3<f64>>, KernelError> {
        let mut levels = vec![f.clone()];
        for conv in &self.downsample {
            let next = relu(&conv.forward(levels.last().unwrap())?);
            levels.push(next);
        }
        Ok(levels)
    }
}

fn offsets_to_channels(off: &Array4<f64>) -> Array3<f64> {
    let s = off.shape();
    let (k, h, w) = (s[0], s[1], s[2]);
    Array3::from_shape_fn((2 * k, h, w), |(c, y, x)| off[[c / 2, y, x, c % 2]])
}

fn channels_to_offsets(ch: &Array3<f64>) -> Array4<f64> {
    let s = ch.shape();
    let (k2, h, w) = (s[0], s[1], s[2]);
    Array4::from_shape_fn((k2 / 2, h, w, 2), |(j, y, x, d)| ch[[2 * j + d, y, x]])
}

/// Upsamples an offset field to a finer grid, doubling magnitudes
/// (flow-like semantics).
fn upsample_offsets(off: &Array4<f64>, h_out: usize, w_out: usize) -> Array4<f64> {
    let up = upsample_bilinear(&offsets_to_channels(off), h_out, w_out);
    channels_to_offsets(&up.map(|v| 2.0 * v))
}

/// Predicts per-level offset fields for aligning `f_i` to `f_t`,
/// finest first. Each field has shape `[K][H_l][W_l][2]`.
pub fn predict_offsets_pyramid(
    f_i: &FeatureMap,
    f_t: &FeatureMap,
    params: &PyramidParams,
) -> Result<Vec<Array4<f64>>, KernelError> {
    params.check_pair(f_i, f_t)?;
    let pyr_i = params.build_pyramid(&f_i.values)?;
    let pyr_t = params.build_pyramid(&f_t.values)?;
    let mut offsets: Vec<Option<Array4<f64>>> = vec![None; params.levels];
    for l in (0..params.levels).rev() {
        let (h, w) = (pyr_i[l].shape()[1], pyr_i[l].shape()[2]);
        let up = match offsets[l + 1..].first() {
            Some(Some(coarser)) => upsample_offsets(coarser, h, w),
            _ => Array4::zeros((KERNEL_TAPS, h, w, 2)),
        };
        let input = concat_channels(&[&pyr_i[l], &pyr_t[l], &offsets_to_channels(&up)]);
        let correction = channels_to_offsets(&params.offset_predictors[l].forward(&input)?);
        offsets[l] = Some(&up + &correction);
    }
    Ok(offsets.into_iter().map(Option::unwrap).collect())
}

/// Cascaded alignment with externally supplied offsets (finest first).
pub fn align_features_with_offsets(
    f_i: &FeatureMap,
    f_t: &FeatureMap,
    offsets: &[Array4<f64>],
    params: &PyramidParams,
) -> Result<FeatureMap, KernelError> {
    params.check_pair(f_i, f_t)?;
    if offsets.len() != params.levels {
        return Err(KernelError::ShapeMismatch(format!(
            "expected {} offset fields, got {}",
            params.levels,
            offsets.len()
        )));
    }
    let pyr_i = params.build_pyramid(&f_i.values)?;
    let pyr_t = params.build_pyramid(&f_t.values)?;
    let mut aligned: Option<Array3<f64>> = None;
    for l in (0..params.levels).rev() {
        let (h, w) = (pyr_i[l].shape()[1], pyr_i[l].shape()[2]);
        let kernel = DeformableKernel {
            weights: params.dconv_weights[l].clone(),
            grid: grid_3x3(),
            offsets: offsets[l].clone(),
        };
        let dconv = deformable_conv2d(&pyr_i[l], &kernel)?;
        let up = match &aligned {
            Some(coarser) => upsample_bilinear(coarser, h, w),
            None => Array3::zeros(dconv.raw_dim()),
        };
        aligned = Some(params.combiners[l].forward(&concat_channels(&[&dconv, &up]))?);
    }
    let final_in = concat_channels(&[aligned.as_ref().unwrap(), &pyr_t[0]]);
    Ok(FeatureMap::new(params.final_combiner.forward(&final_in)?))
}

/// Full alignment: predict offsets, then align.
pub fn align_features_pyramid(
    f_i: &FeatureMap,
    f_t: &FeatureMap,
    params: &PyramidParams,
) -> Result<FeatureMap, KernelError> {
    let offsets = predict_offsets_pyramid(f_i, f_t, params)?;
    align_features_with_offsets(f_i, f_t, &offsets, params)
}
