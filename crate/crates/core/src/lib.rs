//! Event-to-HDR video toolkit.
//!
//! The crate covers the full data path of event-based HDR video
//! reconstruction at desk scale: event stream validation and slicing,
//! bit-exact persistence, frame-to-event simulation under the contrast
//! threshold model, event spike tensor voxelization, dual-exposure HDR
//! fusion and tone mapping, pure numeric reference kernels for the
//! reconstruction network primitives, and the RMSE/SSIM/TC evaluation
//! metrics.

pub mod event;
pub mod hdr;
pub mod image;
pub mod io;
pub mod kernels;
pub mod metrics;
pub mod pipeline;
pub mod sim;
pub mod voxel;

pub use event::{Event, EventStream, Geometry, Polarity, TriggerTrack};
pub use image::{ImageF64, ImageU16};
pub use sim::SimConfig;
pub use voxel::{VoxelGrid, VoxelSpec};
