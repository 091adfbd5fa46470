//! Recurrent feature extraction over consecutive voxel grids and the
//! periodic key-frame refreshment gate.

use ndarray::Array3;
use rand::Rng;

use super::conv::{relu, tanh, Conv2d, ResidualBlock};
use super::{concat_channels, FeatureMap, KernelError};
use crate::voxel::VoxelGrid;

/// Key-frame indices: every multiple of `period` (0 included).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyFrameSchedule {
    pub period: usize,
}

impl Default for KeyFrameSchedule {
    fn default() -> Self {
        KeyFrameSchedule { period: 5 }
    }
}

impl KeyFrameSchedule {
    pub fn new(period: usize) -> Result<Self, KernelError> {
        if period == 0 {
            return Err(KernelError::ShapeMismatch(
                "key frame period must be >= 1".into(),
            ));
        }
        Ok(KeyFrameSchedule { period })
    }

    pub fn is_key_frame(&self, t: usize) -> bool {
        t % self.period == 0
    }
}

/// Weights of the recurrent extractor: a strided downsampling trunk over
/// the concatenated current and previous grids, a tanh state update, and
/// an output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorParams {
    /// Stride-2 convs; the chain length fixes the downsampling factor
    /// `2^len`.
    pub down: Vec<Conv2d>,
    /// State update over `concat(trunk, h_prev)`, tanh-activated.
    pub state: Conv2d,
    /// Output projection over `concat(trunk, h)`.
    pub output: Conv2d,
}

impl ExtractorParams {
    pub fn zeros(voxel_channels: usize, channels: usize, down_steps: usize) -> Self {
        let mut down = Vec::with_capacity(down_steps);
        let mut c_in = 2 * voxel_channels;
        for _ in 0..down_steps {
            down.push(Conv2d::zeros(channels, c_in, 3, 2));
            c_in = channels;
        }
        ExtractorParams {
            down,
            state: Conv2d::zeros(channels, 2 * channels, 3, 1),
            output: Conv2d::zeros(channels, 2 * channels, 3, 1),
        }
    }

    pub fn seeded(
        voxel_channels: usize,
        channels: usize,
        down_steps: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut down = Vec::with_capacity(down_steps);
        let mut c_in = 2 * voxel_channels;
        for _ in 0..down_steps {
            down.push(Conv2d::seeded(channels, c_in, 3, 2, rng));
            c_in = channels;
        }
        ExtractorParams {
            down,
            state: Conv2d::seeded(channels, 2 * channels, 3, 1, rng),
            output: Conv2d::seeded(channels, 2 * channels, 3, 1, rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.state.c_out()
    }

    pub fn downsample_factor(&self) -> usize {
        1 << self.down.len()
    }

    /// The declared all-zero hidden state for a sequence start.
    pub fn zero_state(&self, input_h: usize, input_w: usize) -> Array3<f64> {
        let f = self.downsample_factor();
        Array3::zeros((self.channels(), input_h.div_ceil(f), input_w.div_ceil(f)))
    }
}

/// One recurrent step: extracts a downsampled feature from the current
/// and previous grids and updates the hidden state.
pub fn recurrent_extract_step(
    e_i: &VoxelGrid,
    e_prev: &VoxelGrid,
    h_prev: &Array3<f64>,
    params: &ExtractorParams,
) -> Result<(FeatureMap, Array3<f64>), KernelError> {
    if e_i.values.shape() != e_prev.values.shape() {
        return Err(KernelError::ShapeMismatch(
            "current and previous voxel grids must share a shape".into(),
        ));
    }
    let mut x = concat_channels(&[&e_i.values, &e_prev.values]);
    for conv in &params.down {
        x = relu(&conv.forward(&x)?);
    }
    if h_prev.shape() != x.shape() {
        return Err(KernelError::ShapeMismatch(format!(
            "hidden state shape {:?} does not match trunk shape {:?}",
            h_prev.shape(),
            x.shape()
        )));
    }
    let h = tanh(&params.state.forward(&concat_channels(&[&x, h_prev]))?);
    let f = params.output.forward(&concat_channels(&[&x, &h]))?;
    Ok((FeatureMap::new(f), h))
}

/// Weights of the key-frame gate: a strided embedding bringing the event
/// grid to feature resolution and a residual correction network.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub embed: Vec<Conv2d>,
    pub input_proj: Conv2d,
    pub blocks: Vec<ResidualBlock>,
    pub output_proj: Conv2d,
}

impl GateParams {
    pub fn zeros(voxel_channels: usize, channels: usize, down_steps: usize, blocks: usize) -> Self {
        let mut embed = Vec::with_capacity(down_steps);
        let mut c_in = voxel_channels;
        for _ in 0..down_steps {
            embed.push(Conv2d::zeros(channels, c_in, 3, 2));
            c_in = channels;
        }
        GateParams {
            embed,
            input_proj: Conv2d::zeros(channels, 2 * channels, 3, 1),
            blocks: (0..blocks).map(|_| ResidualBlock::zeros(channels, 3)).collect(),
            output_proj: Conv2d::zeros(channels, channels, 3, 1),
        }
    }

    pub fn seeded(
        voxel_channels: usize,
        channels: usize,
        down_steps: usize,
        blocks: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut embed = Vec::with_capacity(down_steps);
        let mut c_in = voxel_channels;
        for _ in 0..down_steps {
            embed.push(Conv2d::seeded(channels, c_in, 3, 2, rng));
            c_in = channels;
        }
        GateParams {
            embed,
            input_proj: Conv2d::seeded(channels, 2 * channels, 3, 1, rng),
            blocks: (0..blocks)
                .map(|_| ResidualBlock::seeded(channels, 3, rng))
                .collect(),
            output_proj: Conv2d::seeded(channels, channels, 3, 1, rng),
        }
    }
}

/// Key-frame refreshment: on schedule, `F = F' + G(concat(F', embed(E_t)))`
/// with `G` residual blocks; off schedule, the input feature is returned
/// bitwise unchanged.
pub fn keyframe_gate(
    f_prime: &FeatureMap,
    e_t: &VoxelGrid,
    t: usize,
    schedule: &KeyFrameSchedule,
    params: &GateParams,
) -> Result<FeatureMap, KernelError> {
    if !schedule.is_key_frame(t) {
        return Ok(f_prime.clone());
    }
    let mut emb = e_t.values.clone();
    for conv in &params.embed {
        emb = relu(&conv.forward(&emb)?);
    }
    if emb.shape()[1..] != f_prime.values.shape()[1..] {
        return Err(KernelError::ShapeMismatch(format!(
            "embedded grid {:?} does not match feature {:?}",
            emb.shape(),
            f_prime.values.shape()
        )));
    }
    let mut g = relu(&params.input_proj.forward(&concat_channels(&[&f_prime.values, &emb]))?);
    for block in &params.blocks {
        g = block.forward(&g)?;
    }
    let g = params.output_proj.forward(&g)?;
    Ok(FeatureMap::new(&f_prime.values + &g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::Geometry;
    use crate::voxel::VoxelSpec;
    use rand::SeedableRng;

    fn grid(b: usize, w: u32, h: u32) -> VoxelGrid {
        let spec = VoxelSpec::new(b, Geometry::new(w, h)).unwrap();
        VoxelGrid::zeros(&spec, 0, 1000)
    }

    fn noisy_grid(b: usize, w: u32, h: u32, seed: u64) -> VoxelGrid {
        use rand::Rng;
        let mut g = grid(b, w, h);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for v in g.values.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        g
    }

    #[test]
    fn zero_params_give_zero_feature_and_state() {
        let params = ExtractorParams::zeros(10, 4, 2);
        let e = noisy_grid(5, 16, 16, 1);
        let h0 = params.zero_state(16, 16);
        let (f, h) = recurrent_extract_step(&e, &e, &h0, &params).unwrap();
        assert!(f.values.iter().all(|&v| v == 0.0));
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn downsample_factor_four_shrinks_64_to_16() {
        let params = ExtractorParams::zeros(10, 4, 2);
        let e = grid(5, 64, 64);
        let h0 = params.zero_state(64, 64);
        let (f, h) = recurrent_extract_step(&e, &e, &h0, &params).unwrap();
        assert_eq!(f.values.shape(), &[4, 16, 16]);
        assert_eq!(h.shape(), &[4, 16, 16]);
    }

    #[test]
    fn reruns_are_bit_identical() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let params = ExtractorParams::seeded(10, 4, 2, &mut rng);
        let e_i = noisy_grid(5, 16, 16, 10);
        let e_prev = noisy_grid(5, 16, 16, 11);
        let h0 = params.zero_state(16, 16);
        let (f1, h1) = recurrent_extract_step(&e_i, &e_prev, &h0, &params).unwrap();
        let (f2, h2) = recurrent_extract_step(&e_i, &e_prev, &h0, &params).unwrap();
        assert_eq!(f1.values, f2.values);
        assert_eq!(h1, h2);
    }

    #[test]
    fn gate_is_bitwise_identity_off_schedule() {
        let schedule = KeyFrameSchedule::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let params = GateParams::seeded(10, 4, 2, 2, &mut rng);
        let e = noisy_grid(5, 16, 16, 5);
        let f_prime = FeatureMap::new(Array3::from_shape_fn((4, 4, 4), |(c, y, x)| {
            (c as f64) * 0.3 + (y * x) as f64 * 0.01
        }));
        let out = keyframe_gate(&f_prime, &e, 3, &schedule, &params).unwrap();
        assert_eq!(out.values, f_prime.values);
    }

    #[test]
    fn gate_with_zero_residual_weights_returns_input_on_schedule() {
        let schedule = KeyFrameSchedule::default();
        let params = GateParams::zeros(10, 4, 2, 2);
        let e = noisy_grid(5, 16, 16, 6);
        let f_prime = FeatureMap::new(Array3::from_elem((4, 4, 4), 0.7));
        let out = keyframe_gate(&f_prime, &e, 5, &schedule, &params).unwrap();
        assert_eq!(out.values, f_prime.values);
    }

    #[test]
    fn gate_applies_at_zero_and_multiples_of_period() {
        let schedule = KeyFrameSchedule::default();
        assert!(schedule.is_key_frame(0));
        assert!(schedule.is_key_frame(5));
        assert!(schedule.is_key_frame(10));
        assert!(!schedule.is_key_frame(3));
        // A nonzero gate changes the feature at t=0.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let params = GateParams::seeded(10, 4, 2, 2, &mut rng);
        let e = noisy_grid(5, 16, 16, 8);
        let f_prime = FeatureMap::new(Array3::from_elem((4, 4, 4), 0.5));
        let out = keyframe_gate(&f_prime, &e, 0, &schedule, &params).unwrap();
        assert_ne!(out.values, f_prime.values);
    }
}
