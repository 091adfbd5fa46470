//! The assembled reconstruction network: recurrent extraction, key-frame
//! gating, pyramidal alignment, attention fusion, and a reconstruction
//! head, with weight-container round trips.

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::attention::{local_attention_fuse, AttentionSpec};
use super::conv::{sigmoid, upsample_bilinear, Conv2d};
use super::pyramid::{align_features_pyramid, PyramidParams, KERNEL_TAPS};
use super::recurrent::{
    keyframe_gate, recurrent_extract_step, ExtractorParams, GateParams, KeyFrameSchedule,
};
use super::weights::WeightStore;
use super::{FeatureMap, KernelError};
use crate::event::Geometry;
use crate::image::ImageF64;
use crate::voxel::VoxelGrid;

/// Structural hyperparameters of the assembled network. All tensor
/// shapes are derivable from these, so a weight container plus a config
/// fully determines the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuiteConfig {
    /// Temporal bins B of the input voxel grids (2B channels).
    pub voxel_bins: usize,
    /// Feature channels C.
    pub channels: usize,
    /// Stride-2 steps in the extractor trunk; features live at
    /// resolution `input / 2^down_steps`.
    pub down_steps: usize,
    /// Alignment pyramid depth.
    pub levels: usize,
    /// Key-frame period.
    pub period: usize,
    /// Residual blocks in the key-frame gate.
    pub residual_blocks: usize,
    /// Attention key dimension D.
    pub key_dim: usize,
    /// Attention window half-width in pixels.
    pub radius: usize,
    /// Temporal half-window N; the fusion window holds 2N+1 frames.
    pub window: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            voxel_bins: 5,
            channels: 32,
            down_steps: 2,
            levels: 3,
            period: 5,
            residual_blocks: 2,
            key_dim: 8,
            radius: 3,
            window: 1,
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<(), KernelError> {
        if self.voxel_bins < 2 {
            return Err(KernelError::ShapeMismatch("voxel_bins must be >= 2".into()));
        }
        if self.channels == 0 || self.key_dim == 0 {
            return Err(KernelError::ShapeMismatch(
                "channels and key_dim must be positive".into(),
            ));
        }
        if self.levels == 0 {
            return Err(KernelError::NonPositiveLevels);
        }
        if self.period == 0 {
            return Err(KernelError::ShapeMismatch("period must be >= 1".into()));
        }
        Ok(())
    }

    fn voxel_channels(&self) -> usize {
        2 * self.voxel_bins
    }
}

/// All weights of the assembled network.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSuite {
    pub config: SuiteConfig,
    pub extractor: ExtractorParams,
    pub gate: GateParams,
    pub schedule: KeyFrameSchedule,
    pub pyramid: PyramidParams,
    pub attention: AttentionSpec,
    /// C -> 1 projection evaluated at feature resolution before bilinear
    /// upsampling and the sigmoid.
    pub recon_head: Conv2d,
}

impl KernelSuite {
    /// Deterministic random initialization from a single seed.
    pub fn seeded(config: SuiteConfig, seed: u64) -> Result<Self, KernelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vc = config.voxel_channels();
        Ok(KernelSuite {
            config,
            extractor: ExtractorParams::seeded(vc, config.channels, config.down_steps, &mut rng),
            gate: GateParams::seeded(
                vc,
                config.channels,
                config.down_steps,
                config.residual_blocks,
                &mut rng,
            ),
            schedule: KeyFrameSchedule::new(config.period)?,
            pyramid: PyramidParams::seeded(config.levels, config.channels, &mut rng)?,
            attention: AttentionSpec::seeded(config.channels, config.key_dim, config.radius, &mut rng),
            recon_head: Conv2d::seeded(1, config.channels, 3, 1, &mut rng),
        })
    }

    /// All-zero weights (useful as a shape template).
    pub fn zeros(config: SuiteConfig) -> Result<Self, KernelError> {
        config.validate()?;
        let vc = config.voxel_channels();
        Ok(KernelSuite {
            config,
            extractor: ExtractorParams::zeros(vc, config.channels, config.down_steps),
            gate: GateParams::zeros(
                vc,
                config.channels,
                config.down_steps,
                config.residual_blocks,
            ),
            schedule: KeyFrameSchedule::new(config.period)?,
            pyramid: PyramidParams::zeros(config.levels, config.channels)?,
            attention: AttentionSpec::zeros(config.channels, config.key_dim, config.radius),
            recon_head: Conv2d::zeros(1, config.channels, 3, 1),
        })
    }

    fn check_grids(&self, grids: &[VoxelGrid]) -> Result<(usize, usize), KernelError> {
        let first = grids
            .first()
            .ok_or_else(|| KernelError::LengthMismatch("empty grid sequence".into()))?;
        let shape = first.values.shape();
        if shape[0] != self.config.voxel_channels() {
            return Err(KernelError::ShapeMismatch(format!(
                "grids have {} channels, config declares {}",
                shape[0],
                self.config.voxel_channels()
            )));
        }
        if grids.iter().any(|g| g.values.shape() != shape) {
            return Err(KernelError::ShapeMismatch(
                "all voxel grids must share a shape".into(),
            ));
        }
        Ok((shape[1], shape[2]))
    }

    /// Extracts the gated per-frame features for a grid sequence.
    pub fn extract_features(&self, grids: &[VoxelGrid]) -> Result<Vec<FeatureMap>, KernelError> {
        let (h, w) = self.check_grids(grids)?;
        let mut hidden = self.extractor.zero_state(h, w);
        let mut features = Vec::with_capacity(grids.len());
        for (t, grid) in grids.iter().enumerate() {
            let prev = if t == 0 { grid } else { &grids[t - 1] };
            let (f_prime, h_next) = recurrent_extract_step(grid, prev, &hidden, &self.extractor)?;
            hidden = h_next;
            features.push(keyframe_gate(&f_prime, grid, t, &self.schedule, &self.gate)?);
        }
        Ok(features)
    }

    /// Full sequence forward pass: one reconstructed frame per grid, at
    /// the grid's spatial resolution, values in (0, 1).
    pub fn forward_sequence(&self, grids: &[VoxelGrid]) -> Result<Vec<ImageF64>, KernelError> {
        let (h, w) = self.check_grids(grids)?;
        let features = self.extract_features(grids)?;
        let n = self.config.window as isize;
        let last = features.len() as isize - 1;
        let mut frames = Vec::with_capacity(features.len());
        for t in 0..features.len() {
            let mut aligned = Vec::with_capacity(2 * self.config.window + 1);
            for di in -n..=n {
                let i = (t as isize + di).clamp(0, last) as usize;
                aligned.push(align_features_pyramid(
                    &features[i],
                    &features[t],
                    &self.pyramid,
                )?);
            }
            let fused = local_attention_fuse(&aligned, &self.attention)?;
            let head = self.recon_head.forward(&fused.values)?;
            let up = sigmoid(&upsample_bilinear(&head, h, w));
            frames.push(plane_to_image(&up, w as u32, h as u32));
        }
        Ok(frames)
    }

    /// Serializes every parameter tensor into a weight store.
    pub fn to_weight_store(&self) -> Result<WeightStore, KernelError> {
        let mut store = WeightStore::new();
        self.visit_convs(|name, conv| {
            insert_conv(&mut store, &name, conv)?;
            Ok(())
        })?;
        for (l, w) in self.pyramid.dconv_weights.iter().enumerate() {
            store.insert(&format!("pyramid.dconv{l}"), vec![KERNEL_TAPS], w.clone())?;
        }
        Ok(store)
    }

    /// Rebuilds a suite from a config and a weight store; every tensor
    /// the config implies must be present with a matching shape.
    pub fn from_weight_store(config: SuiteConfig, store: &WeightStore) -> Result<Self, KernelError> {
        let mut suite = Self::zeros(config)?;
        let mut names = Vec::new();
        suite.visit_convs(|name, _| {
            names.push(name);
            Ok(())
        })?;
        {
            let mut convs = suite.convs_mut();
            debug_assert_eq!(convs.len(), names.len());
            for (name, conv) in names.iter().zip(convs.iter_mut()) {
                load_conv(store, name, conv)?;
            }
        }
        for (l, w) in suite.pyramid.dconv_weights.iter_mut().enumerate() {
            let values = store.get_checked(&format!("pyramid.dconv{l}"), &[KERNEL_TAPS])?;
            w.copy_from_slice(values);
        }
        Ok(suite)
    }

    /// Visits every dense convolution with a stable name, in a fixed
    /// order.
    fn visit_convs(
        &self,
        mut f: impl FnMut(String, &Conv2d) -> Result<(), KernelError>,
    ) -> Result<(), KernelError> {
        for (i, c) in self.extractor.down.iter().enumerate() {
            f(format!("extractor.down{i}"), c)?;
        }
        f("extractor.state".into(), &self.extractor.state)?;
        f("extractor.output".into(), &self.extractor.output)?;
        for (i, c) in self.gate.embed.iter().enumerate() {
            f(format!("gate.embed{i}"), c)?;
        }
        f("gate.input_proj".into(), &self.gate.input_proj)?;
        for (i, b) in self.gate.blocks.iter().enumerate() {
            f(format!("gate.block{i}.conv1"), &b.conv1)?;
            f(format!("gate.block{i}.conv2"), &b.conv2)?;
        }
        f("gate.output_proj".into(), &self.gate.output_proj)?;
        for (i, c) in self.pyramid.downsample.iter().enumerate() {
            f(format!("pyramid.down{i}"), c)?;
        }
        for (i, c) in self.pyramid.offset_predictors.iter().enumerate() {
            f(format!("pyramid.offset{i}"), c)?;
        }
        for (i, c) in self.pyramid.combiners.iter().enumerate() {
            f(format!("pyramid.combiner{i}"), c)?;
        }
        f("pyramid.final_combiner".into(), &self.pyramid.final_combiner)?;
        f("attention.key_projector".into(), &self.attention.key_projector)?;
        f("recon_head".into(), &self.recon_head)?;
        Ok(())
    }

    /// Mutable references to the same convolutions, in the same order as
    /// [`Self::visit_convs`].
    fn convs_mut(&mut self) -> Vec<&mut Conv2d> {
        let mut out: Vec<&mut Conv2d> = Vec::new();
        out.extend(self.extractor.down.iter_mut());
        out.push(&mut self.extractor.state);
        out.push(&mut self.extractor.output);
        out.extend(self.gate.embed.iter_mut());
        out.push(&mut self.gate.input_proj);
        for b in self.gate.blocks.iter_mut() {
            out.push(&mut b.conv1);
            out.push(&mut b.conv2);
        }
        out.push(&mut self.gate.output_proj);
        out.extend(self.pyramid.downsample.iter_mut());
        out.extend(self.pyramid.offset_predictors.iter_mut());
        out.extend(self.pyramid.combiners.iter_mut());
        out.push(&mut self.pyramid.final_combiner);
        out.push(&mut self.attention.key_projector);
        out.push(&mut self.recon_head);
        out
    }
}

fn plane_to_image(t: &Array3<f64>, width: u32, height: u32) -> ImageF64 {
    let mut img = ImageF64::zeros(Geometry::new(width, height));
    for y in 0..height {
        for x in 0..width {
            img.set(x, y, t[[0, y as usize, x as usize]]);
        }
    }
    img
}

fn insert_conv(store: &mut WeightStore, name: &str, conv: &Conv2d) -> Result<(), KernelError> {
    store.insert(
        &format!("{name}.weight"),
        conv.weight.shape().to_vec(),
        conv.weight.iter().copied().collect(),
    )?;
    store.insert(&format!("{name}.bias"), vec![conv.bias.len()], conv.bias.clone())
}

fn load_conv(store: &WeightStore, name: &str, conv: &mut Conv2d) -> Result<(), KernelError> {
    let shape = conv.weight.shape().to_vec();
    let values = store.get_checked(&format!("{name}.weight"), &shape)?;
    conv.weight
        .as_slice_mut()
        .expect("contiguous weight tensor")
        .copy_from_slice(values);
    let bias = store.get_checked(&format!("{name}.bias"), &[conv.bias.len()])?;
    conv.bias.copy_from_slice(bias);
    Ok(())
}
