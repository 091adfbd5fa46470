//! EVT1: a fixed-width binary event container with exact round-trips.
//!
//! Layout (little-endian):
//!   header, 24 bytes: magic "EVT1", version u16, width u16, height u16,
//!   reserved u16, count u64, 4 padding bytes.
//!   records, 13 bytes each: t u64, x u16, y u16, q i8 (+1/-1).

use byteorder::{ByteOrder, LittleEndian};

use super::IoError;
use crate::event::{Event, EventError, EventStream, Geometry, Polarity};

const MAGIC: &[u8; 4] = b"EVT1";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 24;
const RECORD_LEN: usize = 13;

/// Decodes an EVT1 byte buffer into a validated stream.
pub fn parse_evt1(bytes: &[u8]) -> Result<EventStream, IoError> {
    if bytes.len() < HEADER_LEN || &bytes[0..4] != MAGIC {
        if bytes.len() >= 4 && &bytes[0..4] != MAGIC {
            return Err(IoError::BadMagic);
        }
        if bytes.len() < 4 {
            return Err(IoError::BadMagic);
        }
        return Err(IoError::TruncatedPayload(bytes.len()));
    }
    let version = LittleEndian::read_u16(&bytes[4..6]);
    if version != VERSION {
        return Err(IoError::UnsupportedVersion(version));
    }
    let width = LittleEndian::read_u16(&bytes[6..8]);
    let height = LittleEndian::read_u16(&bytes[8..10]);
    let count = LittleEndian::read_u64(&bytes[12..20]) as usize;

    let payload = &bytes[HEADER_LEN..];
    if payload.len() != count * RECORD_LEN {
        let offset = HEADER_LEN + payload.len() - payload.len() % RECORD_LEN;
        return Err(IoError::TruncatedPayload(offset.min(bytes.len())));
    }

    let mut events = Vec::with_capacity(count);
    for (i, rec) in payload.chunks_exact(RECORD_LEN).enumerate() {
        let t = LittleEndian::read_u64(&rec[0..8]);
        let x = LittleEndian::read_u16(&rec[8..10]);
        let y = LittleEndian::read_u16(&rec[10..12]);
        let q = Polarity::from_i8(rec[12] as i8).ok_or(EventError::InvalidPolarity(i))?;
        events.push(Event::new(x, y, q, t));
    }
    let geometry = Geometry::new(u32::from(width), u32::from(height));
    Ok(EventStream::validate(events, geometry)?)
}

/// Encodes a stream as EVT1 bytes. Valid streams always serialize.
pub fn write_evt1(stream: &EventStream) -> Vec<u8> {
    let g = stream.geometry();
    let n = stream.len();
    let mut out = vec![0u8; HEADER_LEN + n * RECORD_LEN];
    out[0..4].copy_from_slice(MAGIC);
    LittleEndian::write_u16(&mut out[4..6], VERSION);
    LittleEndian::write_u16(&mut out[6..8], g.width as u16);
    LittleEndian::write_u16(&mut out[8..10], g.height as u16);
    LittleEndian::write_u64(&mut out[12..20], n as u64);
    for (i, e) in stream.events().iter().enumerate() {
        let rec = &mut out[HEADER_LEN + i * RECORD_LEN..HEADER_LEN + (i + 1) * RECORD_LEN];
        LittleEndian::write_u64(&mut rec[0..8], e.t);
        LittleEndian::write_u16(&mut rec[8..10], e.x);
        LittleEndian::write_u16(&mut rec[10..12], e.y);
        rec[12] = e.q.as_i8() as u8;
    }
    out
}
