//! Trigger-to-event synchronization: frame timestamps become the trigger
//! track, and the stream is partitioned into per-frame event segments.

use super::{FrameSequence, IoError};
use crate::event::{EventStream, TriggerTrack};

/// Default tolerance for triggers lying outside the event time span.
/// Triggering is nominally exact, but real recordings may clip leading
/// or trailing events.
pub const DEFAULT_SYNC_TOLERANCE_US: u64 = 10_000;

/// An event stream, a frame sequence, and the per-interval event
/// segments binding them together.
#[derive(Debug, Clone)]
pub struct SyncedDataset {
    pub stream: EventStream,
    pub frames: FrameSequence,
    pub triggers: TriggerTrack,
    /// One segment per inter-frame interval `[t_k, t_{k+1})`;
    /// `segments.len() == frames.len() - 1`.
    pub segments: Vec<EventStream>,
}

/// [`align_triggers_with_tolerance`] with the default 10 ms tolerance.
pub fn align_triggers(
    stream: EventStream,
    frames: FrameSequence,
) -> Result<SyncedDataset, IoError> {
    align_triggers_with_tolerance(stream, frames, DEFAULT_SYNC_TOLERANCE_US)
}

pub fn align_triggers_with_tolerance(
    stream: EventStream,
    frames: FrameSequence,
    tolerance: u64,
) -> Result<SyncedDataset, IoError> {
    if frames.len() < 2 {
        return Err(IoError::InsufficientFrames);
    }
    if stream.is_empty() {
        return Err(IoError::EmptyStream);
    }
    let (t_first, t_last) = stream.time_span();
    let lo = t_first.saturating_sub(tolerance);
    let hi = t_last.saturating_add(tolerance);
    let timestamps = frames.timestamps();
    for (index, &t) in timestamps.iter().enumerate() {
        if t < lo || t > hi {
            return Err(IoError::TriggerOutsideStream { index, tolerance });
        }
    }
    let triggers = TriggerTrack::new(timestamps)?;
    let segments = stream.slice_between_frames(&triggers)?;
    Ok(SyncedDataset {
        stream,
        frames,
        triggers,
        segments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{Event, Geometry, Polarity};
    use crate::image::ImageU16;

    fn frames_at(g: Geometry, times: &[u64]) -> FrameSequence {
        let frames = times
            .iter()
            .map(|&t| (t, ImageU16::zeros(g)))
            .collect();
        FrameSequence::new(g, 12, frames).unwrap()
    }

    fn stream_at(g: Geometry, times: &[u64]) -> EventStream {
        let raw = times
            .iter()
            .map(|&t| Event::new(0, 0, Polarity::Positive, t))
            .collect();
        EventStream::validate(raw, g).unwrap()
    }

    #[test]
    fn two_segments_from_three_frames() {
        let g = Geometry::new(4, 4);
        let ds = align_triggers(stream_at(g, &[0, 500, 1900]), frames_at(g, &[0, 1000, 2000]))
            .unwrap();
        assert_eq!(ds.segments.len(), 2);
        assert_eq!(ds.segments[0].len(), 2);
        assert_eq!(ds.segments[1].len(), 1);
    }

    #[test]
    fn far_trigger_is_rejected() {
        let g = Geometry::new(4, 4);
        let err = align_triggers(stream_at(g, &[0, 100]), frames_at(g, &[0, 50_000]))
            .unwrap_err();
        assert!(matches!(
            err,
            IoError::TriggerOutsideStream {
                index: 1,
                tolerance: DEFAULT_SYNC_TOLERANCE_US
            }
        ));
    }

    #[test]
    fn segments_cover_the_trigger_span() {
        let g = Geometry::new(4, 4);
        let stream = stream_at(g, &[0, 100, 999, 1000, 1500, 1999]);
        let ds = align_triggers(stream.clone(), frames_at(g, &[0, 1000, 2000])).unwrap();
        let total: usize = ds.segments.iter().map(EventStream::len).sum();
        let oracle = stream.slice_by_time(0, 2000).unwrap().len();
        assert_eq!(total, oracle);
    }
}
