//! Evaluation metrics over reconstructed vs. ground-truth sequences:
//! RMSE, SSIM, and temporal consistency against the event-integration
//! oracle.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::ImageF64;
use crate::kernels::losses::interval_tc;
use crate::kernels::KernelError;
use crate::sim::SimConfig;
use crate::voxel::VoxelGrid;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("image {width}x{height} is smaller than the {window}x{window} SSIM window")]
    ImageTooSmall {
        width: u32,
        height: u32,
        window: usize,
    },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Value domain the metrics were computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricDomain {
    ToneMapped,
    Linear,
}

impl std::fmt::Display for MetricDomain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MetricDomain::ToneMapped => write!(f, "tone_mapped"),
            MetricDomain::Linear => write!(f, "linear"),
        }
    }
}

/// Root mean squared element-wise difference; inputs are expected in
/// [0, 1].
pub fn rmse(a: &ImageF64, b: &ImageF64) -> Result<f64, MetricsError> {
    if a.geometry != b.geometry {
        return Err(MetricsError::GeometryMismatch(format!(
            "{:?} vs {:?}",
            a.geometry, b.geometry
        )));
    }
    let n = a.data.len() as f64;
    let sum: f64 = a
        .data
        .iter()
        .zip(b.data.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok((sum / n).sqrt())
}

/// The normalized 11x11 Gaussian window, row-major.
fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as isize;
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for dy in -half..=half {
        for dx in -half..=half {
            let r2 = (dy * dy + dx * dx) as f64;
            w.push((-r2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
        }
    }
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}

/// Mean local SSIM over all fully interior 11x11 Gaussian windows, unit
/// dynamic range.
pub fn ssim(a: &ImageF64, b: &ImageF64) -> Result<f64, MetricsError> {
    if a.geometry != b.geometry {
        return Err(MetricsError::GeometryMismatch(format!(
            "{:?} vs {:?}",
            a.geometry, b.geometry
        )));
    }
    let (w, h) = (a.geometry.width as usize, a.geometry.height as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricsError::ImageTooSmall {
            width: a.geometry.width,
            height: a.geometry.height,
            window: SSIM_WINDOW,
        });
    }
    let win = gaussian_window();
    let half = SSIM_WINDOW / 2;
    let mut total = 0.0;
    let mut count = 0usize;
    for cy in half..h - half {
        for cx in half..w - half {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            let mut aa = 0.0;
            let mut bb = 0.0;
            let mut ab = 0.0;
            let mut i = 0;
            for dy in 0..SSIM_WINDOW {
                let y = cy + dy - half;
                for dx in 0..SSIM_WINDOW {
                    let x = cx + dx - half;
                    let va = a.data[y * w + x];
                    let vb = b.data[y * w + x];
                    let g = win[i];
                    i += 1;
                    mu_a += g * va;
                    mu_b += g * vb;
                    aa += g * va * va;
                    bb += g * vb * vb;
                    ab += g * va * vb;
                }
            }
            let var_a = aa - mu_a * mu_a;
            let var_b = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            let num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Temporal consistency: mean over intervals of the mean squared
/// difference between each observed voxel grid and the grid implied by
/// the corresponding reconstruction pair.
pub fn tc_metric(
    recon: &[ImageF64],
    voxels: &[VoxelGrid],
    cfg: &SimConfig,
) -> Result<f64, MetricsError> {
    if recon.len() < 2 {
        return Err(MetricsError::LengthMismatch(
            "temporal consistency needs at least 2 frames".into(),
        ));
    }
    if voxels.len() + 1 != recon.len() {
        return Err(MetricsError::LengthMismatch(format!(
            "{} frames require {} voxel grids, got {}",
            recon.len(),
            recon.len() - 1,
            voxels.len()
        )));
    }
    let mut total = 0.0;
    for (i, grid) in voxels.iter().enumerate() {
        total += interval_tc(&recon[i], &recon[i + 1], grid, cfg)?;
    }
    Ok(total / voxels.len() as f64)
}

/// Metrics of one frame. `tc` covers the interval ending at this frame
/// and is zero for frame 0, which has no preceding interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame: usize,
    pub rmse: f64,
    pub ssim: f64,
    pub tc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub sequence_id: String,
    pub frame_count: usize,
    pub domain: MetricDomain,
    /// Perceptual distance is not computed by this toolkit.
    pub lpips: String,
}

/// Per-frame metrics plus sequence means. The mean TC averages over
/// intervals, not frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metadata: ReportMetadata,
    pub frames: Vec<FrameMetrics>,
    pub mean_rmse: f64,
    pub mean_ssim: f64,
    pub mean_tc: f64,
}

impl MetricsReport {
    /// CSV with one row per frame and a trailing mean row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,rmse,ssim,tc\n");
        for f in &self.frames {
            out.push_str(&format!("{},{},{},{}\n", f.frame, f.rmse, f.ssim, f.tc));
        }
        out.push_str(&format!(
            "mean,{},{},{}\n",
            self.mean_rmse, self.mean_ssim, self.mean_tc
        ));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }
}

/// Evaluates all metrics for an aligned reconstruction/truth pair and
/// the observed inter-frame voxel grids.
pub fn evaluate_sequences(
    recon: &[ImageF64],
    truth: &[ImageF64],
    voxels: &[VoxelGrid],
    cfg: &SimConfig,
    sequence_id: &str,
    domain: MetricDomain,
) -> Result<MetricsReport, MetricsError> {
    if recon.len() != truth.len() {
        return Err(MetricsError::LengthMismatch(format!(
            "{} reconstructed frames vs {} truth frames",
            recon.len(),
            truth.len()
        )));
    }
    if recon.is_empty() {
        return Err(MetricsError::LengthMismatch("empty sequence".into()));
    }
    if voxels.len() + 1 != recon.len() {
        return Err(MetricsError::LengthMismatch(format!(
            "{} frames require {} voxel grids, got {}",
            recon.len(),
            recon.len() - 1,
            voxels.len()
        )));
    }
    let mut frames = Vec::with_capacity(recon.len());
    for (i, (h, t)) in recon.iter().zip(truth.iter()).enumerate() {
        let tc = if i == 0 {
            0.0
        } else {
            interval_tc(&recon[i - 1], &recon[i], &voxels[i - 1], cfg)?
        };
        frames.push(FrameMetrics {
            frame: i,
            rmse: rmse(h, t)?,
            ssim: ssim(h, t)?,
            tc,
        });
    }
    let n = frames.len() as f64;
    let mean_rmse = frames.iter().map(|f| f.rmse).sum::<f64>() / n;
    let mean_ssim = frames.iter().map(|f| f.ssim).sum::<f64>() / n;
    let mean_tc = if voxels.is_empty() {
        0.0
    } else {
        frames.iter().skip(1).map(|f| f.tc).sum::<f64>() / voxels.len() as f64
    };
    Ok(MetricsReport {
        metadata: ReportMetadata {
            sequence_id: sequence_id.to_string(),
            frame_count: recon.len(),
            domain,
            lpips: "n/a".to_string(),
        },
        frames,
        mean_rmse,
        mean_ssim,
        mean_tc,
    })
}
