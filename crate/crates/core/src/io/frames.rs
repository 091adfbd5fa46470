//! Timestamped frame sequences stored as 16-bit PGM files plus a JSON
//! manifest `{geometry, bit_depth, frames: [{t, path}]}`.
//!
//! Frames are always stored as 16-bit P5 regardless of the true source
//! depth; the manifest declares the depth actually used.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::event::Geometry;
use crate::image::ImageU16;

/// Ordered, timestamped intensity frames over one geometry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameSequence {
    pub geometry: Geometry,
    pub bit_depth: u8,
    /// `(timestamp µs, image)` pairs with strictly increasing timestamps.
    pub frames: Vec<(u64, ImageU16)>,
}

impl FrameSequence {
    pub fn new(
        geometry: Geometry,
        bit_depth: u8,
        frames: Vec<(u64, ImageU16)>,
    ) -> Result<Self, IoError> {
        let max = max_for_depth(bit_depth);
        for (i, w) in frames.windows(2).enumerate() {
            if w[1].0 <= w[0].0 {
                return Err(IoError::TimestampNotIncreasing(i + 1));
            }
        }
        for (i, (_, img)) in frames.iter().enumerate() {
            if img.geometry != geometry {
                return Err(IoError::GeometryMismatch(i));
            }
            if let Some(&v) = img.data.iter().find(|&&v| u32::from(v) > max) {
                return Err(IoError::BitDepthOverflow {
                    index: i,
                    value: v,
                    bit_depth,
                });
            }
        }
        Ok(FrameSequence {
            geometry,
            bit_depth,
            frames,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn timestamps(&self) -> Vec<u64> {
        self.frames.iter().map(|(t, _)| *t).collect()
    }
}

fn max_for_depth(bit_depth: u8) -> u32 {
    (1u32 << bit_depth) - 1
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FrameManifest {
    pub geometry: (u32, u32),
    pub bit_depth: u8,
    pub frames: Vec<FrameManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FrameManifestEntry {
    pub t: u64,
    pub path: String,
}

/// Reads a binary 16-bit (or 8-bit) P5 PGM file.
pub fn read_pgm16(path: &Path) -> Result<ImageU16, IoError> {
    let bytes = fs::read(path).map_err(|_| IoError::MissingFile(path.display().to_string()))?;
    parse_pgm16(&bytes)
}

fn parse_pgm16(bytes: &[u8]) -> Result<ImageU16, IoError> {
    // Header tokens: "P5" width height maxval, separated by whitespace,
    // '#' comments allowed, then a single whitespace byte before pixels.
    let mut pos = 0usize;
    let mut tokens: Vec<String> = Vec::new();
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(IoError::BadPgm("truncated header".into()));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if tokens[0] != "P5" {
        return Err(IoError::BadPgm(format!("not a P5 file: {}", tokens[0])));
    }
    let width: u32 = tokens[1]
        .parse()
        .map_err(|_| IoError::BadPgm("bad width".into()))?;
    let height: u32 = tokens[2]
        .parse()
        .map_err(|_| IoError::BadPgm("bad height".into()))?;
    let maxval: u32 = tokens[3]
        .parse()
        .map_err(|_| IoError::BadPgm("bad maxval".into()))?;
    pos += 1; // single whitespace after maxval
    let geometry = Geometry::new(width, height);
    let n = geometry.pixels();
    let data = if maxval > 255 {
        if bytes.len() < pos + 2 * n {
            return Err(IoError::BadPgm("truncated pixel data".into()));
        }
        bytes[pos..pos + 2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        if bytes.len() < pos + n {
            return Err(IoError::BadPgm("truncated pixel data".into()));
        }
        bytes[pos..pos + n].iter().map(|&b| u16::from(b)).collect()
    };
    Ok(ImageU16::new(geometry, data))
}

/// Writes a binary 16-bit P5 PGM file (maxval 65535, big-endian samples).
pub fn write_pgm16(path: &Path, image: &ImageU16) -> Result<(), IoError> {
    let mut out = format!(
        "P5\n{} {}\n65535\n",
        image.geometry.width, image.geometry.height
    )
    .into_bytes();
    for &v in &image.data {
        out.extend_from_slice(&v.to_be_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

/// Loads a frame sequence from a JSON manifest. Image paths are resolved
/// relative to the manifest's directory.
pub fn load_frame_sequence(manifest_path: &Path) -> Result<FrameSequence, IoError> {
    let text = fs::read_to_string(manifest_path)
        .map_err(|_| IoError::MissingFile(manifest_path.display().to_string()))?;
    let manifest: FrameManifest =
        serde_json::from_str(&text).map_err(|e| IoError::BadManifest(e.to_string()))?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let geometry = Geometry::new(manifest.geometry.0, manifest.geometry.1);
    let mut frames = Vec::with_capacity(manifest.frames.len());
    for entry in &manifest.frames {
        let img = read_pgm16(&base.join(&entry.path))?;
        frames.push((entry.t, img));
    }
    FrameSequence::new(geometry, manifest.bit_depth, frames)
}

/// Writes every frame as `frame_NNNNNN.pgm` under `dir` plus a
/// `frames.json` manifest; returns the manifest path.
pub fn write_frame_sequence(dir: &Path, seq: &FrameSequence) -> Result<PathBuf, IoError> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(seq.frames.len());
    for (i, (t, img)) in seq.frames.iter().enumerate() {
        let name = format!("frame_{i:06}.pgm");
        write_pgm16(&dir.join(&name), img)?;
        entries.push(FrameManifestEntry { t: *t, path: name });
    }
    let manifest = FrameManifest {
        geometry: (seq.geometry.width, seq.geometry.height),
        bit_depth: seq.bit_depth,
        frames: entries,
    };
    let path = dir.join("frames.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap())?;
    Ok(path)
}
