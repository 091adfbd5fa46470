//! C ABI over the evhdr toolkit: opaque handles, integer error codes,
//! and a thread-local last-error message.
//!
//! Every function returns `EVHDR_OK` (0) on success or a negative error
//! code; `evhdr_last_error` retrieves the corresponding message. Handles
//! returned through out-pointers are owned by the caller and must be
//! released with the matching `*_free` function.

// Safety contracts are the usual C ABI ones (valid, correctly sized
// pointers) and are stated per function above; no per-item section.
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::os::raw::c_char;
use std::slice;

use evhdr::event::Geometry;
use evhdr::hdr::{fuse_ldr_pair, tone_map, HdrFrame, HdrFusionConfig};
use evhdr::image::{ImageF64, ImageU16};
use evhdr::io::{parse_evt1, write_evt1};
use evhdr::sim::{simulate_events, SimConfig};
use evhdr::voxel::{build_spike_tensor, VoxelSpec};
use evhdr::{EventStream, VoxelGrid};

pub const EVHDR_OK: i32 = 0;
pub const EVHDR_ERR_NULL_POINTER: i32 = -1;
pub const EVHDR_ERR_INVALID_ARGUMENT: i32 = -2;
pub const EVHDR_ERR_PARSE: i32 = -3;
pub const EVHDR_ERR_RUNTIME: i32 = -4;

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(code: i32, msg: impl Into<String>) -> i32 {
    set_error(msg);
    code
}

/// Copies the last error message (UTF-8, NUL-terminated when it fits)
/// into `buf` and returns the full message length in bytes, excluding
/// the terminator. A zero return means no error has been recorded.
#[no_mangle]
pub unsafe extern "C" fn evhdr_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Opaque event stream handle.
pub struct EvhdrEvents(EventStream);

/// Opaque voxel grid handle.
pub struct EvhdrVoxelGrid(VoxelGrid);

/// Parses an EVT1 byte buffer into an event stream handle.
#[no_mangle]
pub unsafe extern "C" fn evhdr_events_parse_evt1(
    data: *const u8,
    len: usize,
    out: *mut *mut EvhdrEvents,
) -> i32 {
    if data.is_null() || out.is_null() {
        return fail(EVHDR_ERR_NULL_POINTER, "null pointer argument");
    }
    let bytes = slice::from_raw_parts(data, len);
    match parse_evt1(bytes) {
        Ok(stream) => {
            *out = Box::into_raw(Box::new(EvhdrEvents(stream)));
            EVHDR_OK
        }
        Err(e) => fail(EVHDR_ERR_PARSE, e.to_string()),
    }
}

/// Number of events in the stream; zero for a null handle.
#[no_mangle]
pub unsafe extern "C" fn evhdr_events_len(events: *const EvhdrEvents) -> u64 {
    if events.is_null() {
        return 0;
    }
    (*events).0.len() as u64
}

/// Sensor geometry of the stream.
#[no_mangle]
pub unsafe extern "C" fn evhdr_events_geometry(
    events: *const EvhdrEvents,
    width: *mut u32,
    height: *mut u32,
) -> i32 {
    if events.is_null() || width.is_null() || height.is_null() {
        return fail(EVHDR_ERR_NULL_POINTER, "null pointer argument");
    }
    let g = (*events).0.geometry();
    *width = g.width;
    *height = g.height;
    EVHDR_OK
}

/// Serializes the stream to EVT1. The returned buffer must be released
/// with `evhdr_buffer_free`.
#[no_mangle]
pub unsafe extern "C" fn evhdr_events_write_evt1(
    events: *const EvhdrEvents,
    out_data: *mut *mut u8,
    out_len: *mut usize,
) -> i32 {
    if events.is_null() || out_data.is_null() || out_len.is_null() {
        return fail(EVHDR_ERR_NULL_POINTER, "null pointer argument");
    }
    let bytes = write_evt1(&(*events).0).into_boxed_slice();
    *out_len = bytes.len();
    *out_data = Box::into_raw(bytes) as *mut u8;
    EVHDR_OK
}

/// Releases a buffer returned by this library.
#[no_mangle]
pub unsafe extern "C" fn evhdr_buffer_free(data: *mut u8, len: usize) {
    if !data.is_null() {
        drop(Box::from_raw(slice::from_raw_parts_mut(data, len)));
    }
}

#[no_mangle]
pub unsafe extern "C" fn evhdr_events_free(events: *mut EvhdrEvents) {
    if !events.is_null() {
        drop(Box::from_raw(events));
    }
}

/// Simulates an event stream from `frame_count` linear-intensity frames
/// (row-major, values in [0, 1]) with strictly increasing timestamps.
#[no_mangle]
pub unsafe extern "C" fn evhdr_simulate(
    frames: *const f64,
    timestamps: *const u64,
    frame_count: usize,
    width: u32,
    height: u32,
    contrast_threshold: f64,
    out: *mut *mut EvhdrEvents,
) -> i32 {
    if frames.is_null() || timestamps.is_null() || out.is_null() {
        return fail(EVHDR_ERR_NULL_POINTER, "null pointer argument");
    }
    let geometry = Geometry::new(width, height);
    let pixels = geometry.pixels();
    if pixels == 0 || frame_count < 2 {
        return fail(
            EVHDR_ERR_INVALID_ARGUMENT,
            "need a non-empty geometry and at least 2 frames",
        );
    }
    let cfg = SimConfig::with_threshold(contrast_threshold);
    if let Err(e) = cfg.validate() {
        return fail(EVHDR_ERR_INVALID_ARGUMENT, e);
    }
    let ts = slice::from_raw_parts(timestamps, frame_count);
    let data = slice::from_raw_parts(frames, frame_count * pixels);
    let sequence: Vec<(u64, ImageF64)> = (0..frame_count)
        .map(|k| {
            (
                ts[k],
                ImageF64::new(geometry, data[k * pixels..(k + 1) * pixels].to_vec()),
            )
        })
        .collect();
    match simulate_events(&sequence, &cfg) {
        Ok(stream) => {
            *out = Box::into_raw(Box::new(EvhdrEvents(stream)));
            EVHDR_OK
        }
        Err(e) => fail(EVHDR_ERR_RUNTIME, e.to_string()),
    }
}

/// Bins a stream over the half-open window `[t0, t0 + dt)` into a
/// 2B-channel voxel grid handle.
#[no_mangle]
pub unsafe extern "C" fn evhdr_voxelize(
    events: *const EvhdrEvents,
    t0: u64,
    dt: u64,
    bins: usize,
    out: *mut *mut EvhdrVoxelGrid,
) -> i32 {
    if events.is_null() || out.is_null() {
        return fail(EVHDR_ERR_NULL_POINTER, "null pointer argument");
    }
    let stream = &(*events).0;
    let spec = match VoxelSpec::new(bins, stream.geometry()) {
        Ok(s) => s,
        Err(e) => return fail(EVHDR_ERR_INVALID_ARGUMENT, e.to_string()),
    };
    match build_spike_tensor(stream, t0, dt, &spec) {
        Ok(grid) => {
            *out = Box::into_raw(Box::new(EvhdrVoxelGrid(grid)));
            EVHDR_OK
        }
        Err(e) => fail(EVHDR_ERR_RUNTIME, e.to_string()),
    }
}

/// Channel-major shape of a voxel grid (2B, H, W).
#[no_mangle]
pub unsafe extern "C" fn evhdr_voxel_shape(
    grid: *const EvhdrVoxelGrid,
    channels: *mut u64,
    height: *mut u64,
    width: *mut u64,
) -> i32 {
    if grid.is_null() || channels.is_null() || height.is_null() || width.is_null() {
        return fail(EVHDR_ERR_NULL_POINTER, "null pointer argument");
    }
    let shape = (*grid).0.values.shape();
    *channels = shape[0] as u64;
    *height = shape[1] as u64;
    *width = shape[2] as u64;
    EVHDR_OK
}

/// Borrowed pointer to the grid's contiguous channel-major values; valid
/// until the handle is freed.
#[no_mangle]
pub unsafe extern "C" fn evhdr_voxel_values(grid: *const EvhdrVoxelGrid) -> *const f64 {
    if grid.is_null() {
        return std::ptr::null();
    }
    (*grid)
        .0
        .values
        .as_slice()
        .map(|s| s.as_ptr())
        .unwrap_or(std::ptr::null())
}

#[no_mangle]
pub unsafe extern "C" fn evhdr_voxel_free(grid: *mut EvhdrVoxelGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Merges a bright/dark LDR pair (row-major, `ldr_bit_depth`-bit values
/// in 16-bit containers) into a 16-bit linear HDR frame written to
/// `out`, which must hold `width * height` values. Returns the number of
/// all-saturated pixels through `saturated` when non-null.
#[no_mangle]
pub unsafe extern "C" fn evhdr_fuse_ldr_pair(
    bright: *const u16,
    dark: *const u16,
    width: u32,
    height: u32,
    alpha: f64,
    saturation_fraction: f64,
    ldr_bit_depth: u8,
    out: *mut u16,
    saturated: *mut u64,
) -> i32 {
    if bright.is_null() || dark.is_null() || out.is_null() {
        return fail(EVHDR_ERR_NULL_POINTER, "null pointer argument");
    }
    let geometry = Geometry::new(width, height);
    let n = geometry.pixels();
    if n == 0 {
        return fail(EVHDR_ERR_INVALID_ARGUMENT, "empty geometry");
    }
    let cfg = HdrFusionConfig {
        alpha,
        saturation_fraction,
        ldr_bit_depth,
        hdr_bit_depth: 16,
    };
    let bright = ImageU16::new(geometry, slice::from_raw_parts(bright, n).to_vec());
    let dark = ImageU16::new(geometry, slice::from_raw_parts(dark, n).to_vec());
    match fuse_ldr_pair(&bright, &dark, &cfg) {
        Ok(result) => {
            std::ptr::copy_nonoverlapping(result.frame.image.data.as_ptr(), out, n);
            if !saturated.is_null() {
                *saturated = result.all_saturated_pixels as u64;
            }
            EVHDR_OK
        }
        Err(e) => fail(EVHDR_ERR_INVALID_ARGUMENT, e.to_string()),
    }
}

/// Tone maps `n` 16-bit linear HDR values to 8 bits.
#[no_mangle]
pub unsafe extern "C" fn evhdr_tone_map(hdr: *const u16, n: usize, out: *mut u8) -> i32 {
    if hdr.is_null() || out.is_null() {
        return fail(EVHDR_ERR_NULL_POINTER, "null pointer argument");
    }
    if n == 0 {
        return fail(EVHDR_ERR_INVALID_ARGUMENT, "empty buffer");
    }
    let frame = HdrFrame {
        image: ImageU16::new(Geometry::new(n as u32, 1), slice::from_raw_parts(hdr, n).to_vec()),
        full_scale_radiance: 1.0,
        timestamp: 0,
    };
    let mapped = tone_map(&frame);
    std::ptr::copy_nonoverlapping(mapped.as_ptr(), out, n);
    EVHDR_OK
}
