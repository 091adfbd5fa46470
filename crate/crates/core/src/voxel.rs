//! Event spike tensors: inter-frame event substreams binned into
//! 2B-channel voxel grids with a tent kernel in time.
//!
//! An event at timestamp `t` is normalized to `t* = (B-1)/dt * (t - t0)`
//! and splits its unit mass between the two adjacent integer bins with
//! weights `1-f` and `f`, `f = t* - floor(t*)`. Positive polarity fills
//! channels `0..B`, negative fills `B..2B`.

use byteorder::{ByteOrder, LittleEndian};
use ndarray::Array3;
use thiserror::Error;

use crate::event::{EventError, EventStream, Geometry, Polarity, TriggerTrack};

#[derive(Debug, Error)]
pub enum VoxelError {
    #[error("temporal bin count B must be >= 2, got {0}")]
    TooFewBins(usize),
    #[error("voxel window duration must be positive")]
    NonPositiveWindow,
    #[error("event {0} lies outside the voxel window")]
    EventOutsideWindow(usize),
    #[error("stream geometry does not match the voxel spec geometry")]
    GeometryMismatch,
    #[error(transparent)]
    Event(#[from] EventError),
    #[error("bad VOX1 data: {0}")]
    BadVox1(String),
}

/// Temporal bin count and sensor geometry for spike tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VoxelSpec {
    pub bins: usize,
    pub geometry: Geometry,
}

impl VoxelSpec {
    pub fn new(bins: usize, geometry: Geometry) -> Result<Self, VoxelError> {
        if bins < 2 {
            return Err(VoxelError::TooFewBins(bins));
        }
        Ok(VoxelSpec { bins, geometry })
    }
}

/// A 2B x H x W event spike tensor over the window `[t0, t0 + dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub values: Array3<f64>,
    pub t0: u64,
    pub dt: u64,
}

impl VoxelGrid {
    pub fn zeros(spec: &VoxelSpec, t0: u64, dt: u64) -> Self {
        VoxelGrid {
            values: Array3::zeros((
                2 * spec.bins,
                spec.geometry.height as usize,
                spec.geometry.width as usize,
            )),
            t0,
            dt,
        }
    }

    pub fn bins(&self) -> usize {
        self.values.shape()[0] / 2
    }

    pub fn total_mass(&self) -> f64 {
        self.values.sum()
    }

    pub fn positive_mass(&self) -> f64 {
        let b = self.bins();
        self.values.slice(ndarray::s![0..b, .., ..]).sum()
    }

    pub fn negative_mass(&self) -> f64 {
        let b = self.bins();
        self.values.slice(ndarray::s![b..2 * b, .., ..]).sum()
    }

    /// Element-wise sum; panics on shape mismatch.
    pub fn add(&self, other: &VoxelGrid) -> VoxelGrid {
        VoxelGrid {
            values: &self.values + &other.values,
            t0: self.t0,
            dt: self.dt,
        }
    }
}

fn deposit(
    grid: &mut VoxelGrid,
    stream: &EventStream,
    t0: u64,
    dt: u64,
    bins: usize,
    closed_end: bool,
) -> Result<(), VoxelError> {
    let t_end_excl = t0 + dt;
    for (i, e) in stream.events().iter().enumerate() {
        let inside = e.t >= t0 && (e.t < t_end_excl || (closed_end && e.t == t_end_excl));
        if !inside {
            return Err(VoxelError::EventOutsideWindow(i));
        }
        let t_star = (bins as f64 - 1.0) * ((e.t - t0) as f64) / (dt as f64);
        let i0 = t_star.floor() as usize;
        let f = t_star - i0 as f64;
        let block = match e.q {
            Polarity::Positive => 0,
            Polarity::Negative => bins,
        };
        let (y, x) = (e.y as usize, e.x as usize);
        grid.values[[block + i0, y, x]] += 1.0 - f;
        if f > 0.0 && i0 + 1 < bins {
            grid.values[[block + i0 + 1, y, x]] += f;
        }
    }
    Ok(())
}

/// Builds the spike tensor of a substream over the half-open window
/// `[t0, t0 + dt)`.
pub fn build_spike_tensor(
    substream: &EventStream,
    t0: u64,
    dt: u64,
    spec: &VoxelSpec,
) -> Result<VoxelGrid, VoxelError> {
    build_inner(substream, t0, dt, spec, false)
}

/// Spike tensor over the closed window `[t0, t0 + dt]`. Used by the
/// event-integration oracle, where an event landing exactly on the end
/// frame has no following grid to migrate to.
pub(crate) fn build_spike_tensor_closed(
    substream: &EventStream,
    t0: u64,
    dt: u64,
    spec: &VoxelSpec,
) -> Result<VoxelGrid, VoxelError> {
    build_inner(substream, t0, dt, spec, true)
}

fn build_inner(
    substream: &EventStream,
    t0: u64,
    dt: u64,
    spec: &VoxelSpec,
    closed_end: bool,
) -> Result<VoxelGrid, VoxelError> {
    if dt == 0 {
        return Err(VoxelError::NonPositiveWindow);
    }
    if substream.geometry() != spec.geometry {
        return Err(VoxelError::GeometryMismatch);
    }
    let mut grid = VoxelGrid::zeros(spec, t0, dt);
    deposit(&mut grid, substream, t0, dt, spec.bins, closed_end)?;
    Ok(grid)
}

/// One spike tensor per inter-frame interval of the trigger track.
pub fn batch_voxelize(
    stream: &EventStream,
    triggers: &TriggerTrack,
    spec: &VoxelSpec,
) -> Result<Vec<VoxelGrid>, VoxelError> {
    let substreams = stream.slice_between_frames(triggers)?;
    let ts = triggers.timestamps();
    substreams
        .iter()
        .zip(ts.windows(2))
        .map(|(sub, w)| build_spike_tensor(sub, w[0], w[1] - w[0], spec))
        .collect()
}

// VOX1 container: 8 little-endian u64 header values
// [magic "VOX1", version, B, H, W, t0, dt, reserved] followed by
// 2B*H*W f32 values in channel-major order.
const VOX1_MAGIC: u64 = u64::from_le_bytes(*b"VOX1\0\0\0\0");

pub fn write_vox1(grid: &VoxelGrid) -> Vec<u8> {
    let shape = grid.values.shape();
    let (b, h, w) = (shape[0] / 2, shape[1], shape[2]);
    let mut out = vec![0u8; 64 + 4 * grid.values.len()];
    let header = [
        VOX1_MAGIC,
        1,
        b as u64,
        h as u64,
        w as u64,
        grid.t0,
        grid.dt,
        0,
    ];
    for (i, v) in header.iter().enumerate() {
        LittleEndian::write_u64(&mut out[8 * i..8 * (i + 1)], *v);
    }
    for (i, v) in grid.values.iter().enumerate() {
        LittleEndian::write_f32(&mut out[64 + 4 * i..64 + 4 * (i + 1)], *v as f32);
    }
    out
}

pub fn parse_vox1(bytes: &[u8]) -> Result<VoxelGrid, VoxelError> {
    if bytes.len() < 64 {
        return Err(VoxelError::BadVox1("truncated header".into()));
    }
    let header: Vec<u64> = (0..8)
        .map(|i| LittleEndian::read_u64(&bytes[8 * i..8 * (i + 1)]))
        .collect();
    if header[0] != VOX1_MAGIC {
        return Err(VoxelError::BadVox1("bad magic".into()));
    }
    let (b, h, w) = (header[2] as usize, header[3] as usize, header[4] as usize);
    let n = 2 * b * h * w;
    if bytes.len() != 64 + 4 * n {
        return Err(VoxelError::BadVox1("payload length mismatch".into()));
    }
    let data: Vec<f64> = bytes[64..]
        .chunks_exact(4)
        .map(|c| f64::from(LittleEndian::read_f32(c)))
        .collect();
    Ok(VoxelGrid {
        values: Array3::from_shape_vec((2 * b, h, w), data).unwrap(),
        t0: header[5],
        dt: header[6],
    })
}
