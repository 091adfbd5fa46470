//! Persistence and synchronization: the EVT1 binary event container,
//! event CSV, 16-bit PGM frame sequences with a JSON manifest, and
//! trigger-to-event alignment.

mod csv;
mod evt1;
mod frames;
mod sync;

pub use csv::{parse_csv_events, write_csv_events};
pub use evt1::{parse_evt1, write_evt1};
pub use frames::{
    load_frame_sequence, read_pgm16, write_frame_sequence, write_pgm16, FrameManifest,
    FrameManifestEntry, FrameSequence,
};
pub use sync::{align_triggers, align_triggers_with_tolerance, SyncedDataset, DEFAULT_SYNC_TOLERANCE_US};

use crate::event::EventError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("bad magic: not an EVT1 file")]
    BadMagic,
    #[error("unsupported EVT1 version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated EVT1 payload at byte offset {0}")]
    TruncatedPayload(usize),
    #[error("malformed line {0}")]
    MalformedLine(usize),
    #[error("missing file: {0}")]
    MissingFile(String),
    #[error("frame timestamps not strictly increasing at frame {0}")]
    TimestampNotIncreasing(usize),
    #[error("frame {0} geometry differs from the manifest geometry")]
    GeometryMismatch(usize),
    #[error("frame {index}: pixel value {value} exceeds declared bit depth {bit_depth}")]
    BitDepthOverflow {
        index: usize,
        value: u16,
        bit_depth: u8,
    },
    #[error("trigger {index} lies more than {tolerance} us outside the event time span")]
    TriggerOutsideStream { index: usize, tolerance: u64 },
    #[error("at least 2 frames are required")]
    InsufficientFrames,
    #[error("event stream is empty")]
    EmptyStream,
    #[error(transparent)]
    Event(#[from] EventError),
    #[error("pgm: {0}")]
    BadPgm(String),
    #[error(transparent)]
    File(#[from] std::io::Error),
    #[error("manifest: {0}")]
    BadManifest(String),
}
