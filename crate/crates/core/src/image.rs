//! Small owned image containers shared across modules.

use crate::event::Geometry;

/// Integer intensity image (row-major, `height * width` values).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageU16 {
    pub geometry: Geometry,
    pub data: Vec<u16>,
}

impl ImageU16 {
    pub fn new(geometry: Geometry, data: Vec<u16>) -> Self {
        assert_eq!(data.len(), geometry.pixels());
        ImageU16 { geometry, data }
    }

    pub fn zeros(geometry: Geometry) -> Self {
        ImageU16 {
            geometry,
            data: vec![0; geometry.pixels()],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> u16 {
        self.data[(y * self.geometry.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: u16) {
        self.data[(y * self.geometry.width + x) as usize] = v;
    }

    pub fn max_value(&self) -> u16 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Scales integer values into `[0, 1]` by the given full scale.
    pub fn to_f64_normalized(&self, full_scale: f64) -> ImageF64 {
        ImageF64 {
            geometry: self.geometry,
            data: self.data.iter().map(|&v| f64::from(v) / full_scale).collect(),
        }
    }
}

/// Real-valued image (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageF64 {
    pub geometry: Geometry,
    pub data: Vec<f64>,
}

impl ImageF64 {
    pub fn new(geometry: Geometry, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), geometry.pixels());
        ImageF64 { geometry, data }
    }

    pub fn zeros(geometry: Geometry) -> Self {
        ImageF64 {
            geometry,
            data: vec![0.0; geometry.pixels()],
        }
    }

    pub fn constant(geometry: Geometry, v: f64) -> Self {
        ImageF64 {
            geometry,
            data: vec![v; geometry.pixels()],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[(y * self.geometry.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: f64) {
        self.data[(y * self.geometry.width + x) as usize] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageF64 {
        ImageF64 {
            geometry: self.geometry,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
