//! Pure numeric reference implementations of the reconstruction network
//! primitives: recurrent extraction with key-frame gating, pyramidal
//! deformable alignment, local attention fusion, and the loss terms.
//!
//! Kernels are plain functions of (inputs, params). Weights are
//! injectable data with no autodiff graph; analytic gradients are
//! hand-derived for the three differentiable cores (bilinear sampling,
//! deformable offsets, attention keys) as verification artifacts.

pub mod attention;
pub mod bilinear;
pub mod conv;
pub mod deform;
pub mod gradcheck;
pub mod losses;
pub mod pyramid;
pub mod recurrent;
pub mod suite;
pub mod weights;

use ndarray::Array3;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("pyramid must have at least one level")]
    NonPositiveLevels,
    #[error("sequence length mismatch: {0}")]
    LengthMismatch(String),
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("attention candidate window is empty")]
    EmptyWindow,
    #[error("weight store: {0}")]
    WeightStore(String),
}

/// A C x H x W feature tensor with a pyramid level tag.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub values: Array3<f64>,
    pub level: usize,
}

impl FeatureMap {
    pub fn new(values: Array3<f64>) -> Self {
        FeatureMap { values, level: 0 }
    }

    pub fn at_level(values: Array3<f64>, level: usize) -> Self {
        FeatureMap { values, level }
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[2]
    }
}

pub(crate) fn concat_channels(parts: &[&Array3<f64>]) -> Array3<f64> {
    let (h, w) = (parts[0].shape()[1], parts[0].shape()[2]);
    let total: usize = parts.iter().map(|p| p.shape()[0]).sum();
    let mut out = Array3::zeros((total, h, w));
    let mut c0 = 0;
    for p in parts {
        let c = p.shape()[0];
        out.slice_mut(ndarray::s![c0..c0 + c, .., ..]).assign(p);
        c0 += c;
    }
    out
}
