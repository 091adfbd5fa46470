//! Reconstruction loss terms: per-frame l1, temporal consistency against
//! the analytic event-integration oracle, and a pluggable perceptual hook.

use super::KernelError;
use crate::image::ImageF64;
use crate::sim::{event_frame_oracle, SimConfig};
use crate::voxel::{VoxelGrid, VoxelSpec};

/// Term weights of the total loss `l1 + tau1 * perceptual + tau2 * tc`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub tau1: f64,
    pub tau2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { tau1: 2.0, tau2: 0.2 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), KernelError> {
        if !(self.tau1 >= 0.0) || !(self.tau2 >= 0.0) {
            return Err(KernelError::ShapeMismatch(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// A perceptual-distance hook over a frame pair. The toolkit ships no
/// learned metric; the default contributes zero.
pub type PerceptualHook<'a> = &'a dyn Fn(&ImageF64, &ImageF64) -> f64;

/// Loss breakdown returned by [`compute_losses`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l1: f64,
    pub tc: f64,
    pub perceptual: f64,
    pub total: f64,
}

/// Mean absolute difference between two equal-geometry frames.
fn mean_abs_diff(a: &ImageF64, b: &ImageF64) -> f64 {
    let n = a.data.len() as f64;
    a.data
        .iter()
        .zip(b.data.iter())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / n
}

/// Temporal-consistency term of one interval: mean squared difference
/// between the observed grid and the grid implied by the reconstruction
/// pair.
pub(crate) fn interval_tc(
    h_prev: &ImageF64,
    h_next: &ImageF64,
    observed: &VoxelGrid,
    cfg: &SimConfig,
) -> Result<f64, KernelError> {
    let bins = observed.values.shape()[0] / 2;
    let spec = VoxelSpec::new(bins, h_prev.geometry)
        .map_err(|e| KernelError::GeometryMismatch(e.to_string()))?;
    let oracle = event_frame_oracle(h_prev, h_next, cfg, &spec)
        .map_err(|e| KernelError::GeometryMismatch(e.to_string()))?;
    if oracle.values.shape() != observed.values.shape() {
        return Err(KernelError::GeometryMismatch(format!(
            "observed grid shape {:?} does not match oracle shape {:?}",
            observed.values.shape(),
            oracle.values.shape()
        )));
    }
    let n = observed.values.len() as f64;
    Ok(observed
        .values
        .iter()
        .zip(oracle.values.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// Evaluates the loss terms over an aligned reconstruction/truth pair of
/// sequences and the `T - 1` observed inter-frame voxel grids.
///
/// `l1` sums the per-frame mean absolute errors; `tc` sums the per-interval
/// mean squared grid residuals; `perceptual` sums the hook over frame
/// pairs (zero when no hook is given). The total is
/// `l1 + tau1 * perceptual + tau2 * tc`.
pub fn compute_losses(
    recon: &[ImageF64],
    truth: &[ImageF64],
    voxels: &[VoxelGrid],
    cfg: &SimConfig,
    weights: &LossWeights,
    perceptual_hook: Option<PerceptualHook<'_>>,
) -> Result<LossBreakdown, KernelError> {
    weights.validate()?;
    if recon.len() != truth.len() {
        return Err(KernelError::LengthMismatch(format!(
            "{} reconstructed frames vs {} truth frames",
            recon.len(),
            truth.len()
        )));
    }
    if recon.is_empty() {
        return Err(KernelError::LengthMismatch("empty sequence".into()));
    }
    if voxels.len() + 1 != recon.len() {
        return Err(KernelError::LengthMismatch(format!(
            "{} frames require {} voxel grids, got {}",
            recon.len(),
            recon.len() - 1,
            voxels.len()
        )));
    }
    let mut l1 = 0.0;
    let mut perceptual = 0.0;
    for (i, (h, t)) in recon.iter().zip(truth.iter()).enumerate() {
        if h.geometry != t.geometry {
            return Err(KernelError::GeometryMismatch(format!(
                "frame {i}: {:?} vs {:?}",
                h.geometry, t.geometry
            )));
        }
        l1 += mean_abs_diff(h, t);
        if let Some(hook) = perceptual_hook {
            perceptual += hook(h, t);
        }
    }
    let mut tc = 0.0;
    for (i, grid) in voxels.iter().enumerate() {
        tc += interval_tc(&recon[i], &recon[i + 1], grid, cfg)?;
    }
    let total = l1 + weights.tau1 * perceptual + weights.tau2 * tc;
    Ok(LossBreakdown { l1, tc, perceptual, total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::Geometry;

    fn frame(g: Geometry, f: impl Fn(u32, u32) -> f64) -> ImageF64 {
        let mut img = ImageF64::zeros(g);
        for y in 0..g.height {
            for x in 0..g.width {
                img.set(x, y, f(x, y));
            }
        }
        img
    }

    fn consistent_grids(
        frames: &[ImageF64],
        cfg: &SimConfig,
        bins: usize,
    ) -> Vec<VoxelGrid> {
        let spec = VoxelSpec::new(bins, frames[0].geometry).unwrap();
        frames
            .windows(2)
            .map(|w| event_frame_oracle(&w[0], &w[1], cfg, &spec).unwrap())
            .collect()
    }

    #[test]
    fn perfect_reconstruction_with_consistent_events_is_zero() {
        let g = Geometry::new(8, 8);
        let cfg = SimConfig::default();
        let frames: Vec<ImageF64> = (0..3)
            .map(|i| frame(g, |x, y| 0.2 + 0.05 * (i as f64) + 0.01 * (x + y) as f64))
            .collect();
        let grids = consistent_grids(&frames, &cfg, 5);
        let out =
            compute_losses(&frames, &frames, &grids, &cfg, &LossWeights::default(), None)
                .unwrap();
        assert_eq!(out.l1, 0.0);
        assert_eq!(out.tc, 0.0);
        assert_eq!(out.perceptual, 0.0);
        assert_eq!(out.total, 0.0);
    }

    #[test]
    fn total_uses_default_term_weights() {
        let g = Geometry::new(4, 4);
        let cfg = SimConfig::default();
        let truth: Vec<ImageF64> = (0..2).map(|_| frame(g, |_, _| 0.5)).collect();
        let recon: Vec<ImageF64> = (0..2).map(|_| frame(g, |_, _| 0.7)).collect();
        // A deliberately inconsistent grid: static recon implies an empty
        // oracle grid, so tc is the mean squared mass of the observed grid.
        let spec = VoxelSpec::new(5, g).unwrap();
        let mut grid = VoxelGrid::zeros(&spec, 0, 1000);
        grid.values[[0, 1, 1]] = 3.0;
        let hook: PerceptualHook<'_> = &|_, _| 0.25;
        let out = compute_losses(
            &recon,
            &truth,
            &[grid.clone()],
            &cfg,
            &LossWeights::default(),
            Some(hook),
        )
        .unwrap();
        let expected_tc = 9.0 / grid.values.len() as f64;
        assert!((out.l1 - 0.4).abs() < 1e-12);
        assert!((out.tc - expected_tc).abs() < 1e-12);
        assert!((out.perceptual - 0.5).abs() < 1e-12);
        let expected_total = out.l1 + 2.0 * out.perceptual + 0.2 * out.tc;
        assert!((out.total - expected_total).abs() < 1e-12);
    }

    #[test]
    fn static_truth_with_nonzero_grid_gives_mean_squared_mass() {
        let g = Geometry::new(4, 4);
        let cfg = SimConfig::default();
        let frames: Vec<ImageF64> = (0..2).map(|_| frame(g, |_, _| 0.3)).collect();
        let spec = VoxelSpec::new(5, g).unwrap();
        let mut grid = VoxelGrid::zeros(&spec, 0, 1000);
        grid.values[[2, 0, 0]] = 1.0;
        grid.values[[7, 3, 3]] = 2.0;
        let out = compute_losses(
            &frames,
            &frames,
            &[grid.clone()],
            &cfg,
            &LossWeights::default(),
            None,
        )
        .unwrap();
        let mean_sq = grid.values.iter().map(|v| v * v).sum::<f64>()
            / grid.values.len() as f64;
        assert!((out.tc - mean_sq).abs() < 1e-12);
        assert!((out.total - 0.2 * mean_sq).abs() < 1e-12);
    }

    #[test]
    fn length_mismatches_are_rejected() {
        let g = Geometry::new(4, 4);
        let cfg = SimConfig::default();
        let a = vec![frame(g, |_, _| 0.5); 3];
        let b = vec![frame(g, |_, _| 0.5); 2];
        assert!(matches!(
            compute_losses(&a, &b, &[], &cfg, &LossWeights::default(), None),
            Err(KernelError::LengthMismatch(_))
        ));
        assert!(matches!(
            compute_losses(&a, &a, &[], &cfg, &LossWeights::default(), None),
            Err(KernelError::LengthMismatch(_))
        ));
    }

    #[test]
    fn geometry_mismatch_is_rejected() {
        let cfg = SimConfig::default();
        let a = vec![frame(Geometry::new(4, 4), |_, _| 0.5); 2];
        let b = vec![frame(Geometry::new(5, 4), |_, _| 0.5); 2];
        let spec = VoxelSpec::new(5, Geometry::new(4, 4)).unwrap();
        let grids = vec![VoxelGrid::zeros(&spec, 0, 1000)];
        assert!(matches!(
            compute_losses(&a, &b, &grids, &cfg, &LossWeights::default(), None),
            Err(KernelError::GeometryMismatch(_))
        ));
    }

    #[test]
    fn negative_weights_are_rejected() {
        let g = Geometry::new(4, 4);
        let cfg = SimConfig::default();
        let a = vec![frame(g, |_, _| 0.5); 2];
        let spec = VoxelSpec::new(5, g).unwrap();
        let grids = vec![VoxelGrid::zeros(&spec, 0, 1000)];
        let w = LossWeights { tau1: -1.0, tau2: 0.2 };
        assert!(compute_losses(&a, &a, &grids, &cfg, &w, None).is_err());
    }
}
