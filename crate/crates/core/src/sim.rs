//! Analytic frame-to-event simulation under the contrast threshold model
//! and its inverse, event integration.
//!
//! A pixel fires an event whenever its log intensity, linearly
//! interpolated between consecutive frames, crosses the running
//! reference by the contrast threshold `S`; the reference then steps by
//! `qS`. Crossings landing exactly on a threshold emit an event, so a
//! monotone change of `k*S` yields exactly `k` events.

use thiserror::Error;

use crate::event::{Event, EventError, EventStream, Geometry, Polarity};
use crate::image::ImageF64;
use crate::voxel::{self, VoxelError, VoxelGrid, VoxelSpec};

/// Tolerance for detecting crossings that land exactly on a threshold
/// multiple despite floating-point log evaluation.
const CROSSING_TOL: f64 = 1e-9;

/// Nominal inter-frame duration used by the two-frame event oracle. The
/// tent-kernel bin placement only depends on crossing fractions of the
/// window, so the absolute duration is immaterial beyond µs rounding.
pub const ORACLE_WINDOW_US: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("at least 2 frames are required for simulation")]
    DegenerateSequence,
    #[error("non-finite intensity in frame {0}")]
    NonFiniteIntensity(usize),
    #[error("frame geometry mismatch at frame {0}")]
    FrameGeometryMismatch(usize),
    #[error("geometry mismatch between stream and image")]
    GeometryMismatch,
    #[error(transparent)]
    Event(#[from] EventError),
    #[error(transparent)]
    Voxel(#[from] VoxelError),
}

/// Contrast threshold configuration for the event generation model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Contrast threshold in log-intensity units.
    pub contrast_threshold: f64,
    /// Optional per-polarity overrides.
    pub threshold_pos: Option<f64>,
    pub threshold_neg: Option<f64>,
    /// Intensity floor guarding log(0), relative to a max-normalized
    /// intensity of 1.0.
    pub log_eps: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            contrast_threshold: 0.2,
            threshold_pos: None,
            threshold_neg: None,
            log_eps: 1e-3,
        }
    }
}

impl SimConfig {
    pub fn with_threshold(s: f64) -> Self {
        SimConfig {
            contrast_threshold: s,
            ..Default::default()
        }
    }

    pub fn s_pos(&self) -> f64 {
        self.threshold_pos.unwrap_or(self.contrast_threshold)
    }

    pub fn s_neg(&self) -> f64 {
        self.threshold_neg.unwrap_or(self.contrast_threshold)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.contrast_threshold > 0.0) {
            return Err("contrast threshold S must be > 0".into());
        }
        if !(self.log_eps > 0.0) {
            return Err("log_eps must be > 0".into());
        }
        if self.s_pos() <= 0.0 || self.s_neg() <= 0.0 {
            return Err("per-polarity thresholds must be > 0".into());
        }
        Ok(())
    }

    /// Log intensity with the configured floor.
    pub fn log_intensity(&self, i: f64) -> f64 {
        i.max(self.log_eps).ln()
    }
}

fn check_frames(frames: &[(u64, ImageF64)]) -> Result<Geometry, SimError> {
    if frames.len() < 2 {
        return Err(SimError::DegenerateSequence);
    }
    let geometry = frames[0].1.geometry;
    for (i, (_, img)) in frames.iter().enumerate() {
        if img.geometry != geometry {
            return Err(SimError::FrameGeometryMismatch(i));
        }
        if !img.is_finite() {
            return Err(SimError::NonFiniteIntensity(i));
        }
    }
    Ok(geometry)
}

/// Simulates the event stream produced by a linear-intensity frame
/// sequence under the contrast rule.
pub fn simulate_events(
    frames: &[(u64, ImageF64)],
    cfg: &SimConfig,
) -> Result<EventStream, SimError> {
    let geometry = check_frames(frames)?;
    let (s_pos, s_neg) = (cfg.s_pos(), cfg.s_neg());
    // (t, y, x, q) tuples; sorted at the end with deterministic
    // tie-breaking by (t, y, x, polarity).
    let mut all: Vec<(u64, u16, u16, Polarity)> = Vec::new();
    let w = geometry.width as usize;
    for y in 0..geometry.height as usize {
        for x in 0..w {
            let idx = y * w + x;
            let mut l_prev = cfg.log_intensity(frames[0].1.data[idx]);
            let mut reference = l_prev;
            for k in 0..frames.len() - 1 {
                let (t0, t1) = (frames[k].0, frames[k + 1].0);
                let l_next = cfg.log_intensity(frames[k + 1].1.data[idx]);
                let dl = l_next - l_prev;
                if dl > 0.0 {
                    let n = ((l_next - reference) / s_pos + CROSSING_TOL).floor();
                    let n = if n > 0.0 { n as u64 } else { 0 };
                    for j in 1..=n {
                        let thresh = reference + j as f64 * s_pos;
                        let frac = ((thresh - l_prev) / dl).clamp(0.0, 1.0);
                        let t = t0 as f64 + frac * (t1 - t0) as f64;
                        all.push((t.round() as u64, y as u16, x as u16, Polarity::Positive));
                    }
                    reference += n as f64 * s_pos;
                } else if dl < 0.0 {
                    let n = ((reference - l_next) / s_neg + CROSSING_TOL).floor();
                    let n = if n > 0.0 { n as u64 } else { 0 };
                    for j in 1..=n {
                        let thresh = reference - j as f64 * s_neg;
                        let frac = ((thresh - l_prev) / dl).clamp(0.0, 1.0);
                        let t = t0 as f64 + frac * (t1 - t0) as f64;
                        all.push((t.round() as u64, y as u16, x as u16, Polarity::Negative));
                    }
                    reference -= n as f64 * s_neg;
                }
                l_prev = l_next;
            }
        }
    }
    all.sort_by_key(|&(t, y, x, q)| (t, y, x, q.as_i8()));
    let events = all
        .into_iter()
        .map(|(t, y, x, q)| Event::new(x, y, q, t))
        .collect();
    Ok(EventStream::validate(events, geometry)?)
}

/// Inverse of the contrast rule: adds `q*S` per event to the initial log
/// intensity image.
pub fn integrate_events(
    stream: &EventStream,
    initial_log: &ImageF64,
    cfg: &SimConfig,
) -> Result<ImageF64, SimError> {
    if stream.geometry() != initial_log.geometry {
        return Err(SimError::GeometryMismatch);
    }
    let mut out = initial_log.clone();
    let w = out.geometry.width as usize;
    for e in stream.events() {
        let idx = e.y as usize * w + e.x as usize;
        out.data[idx] += match e.q {
            Polarity::Positive => cfg.s_pos(),
            Polarity::Negative => -cfg.s_neg(),
        };
    }
    Ok(out)
}

/// Analytic two-frame events-from-frames oracle: simulates the events a
/// linear log ramp between `h_prev` and `h_next` would produce, then
/// voxelizes them. Stands in for a learned frames-to-events network in
/// the temporal consistency loss and metric.
pub fn event_frame_oracle(
    h_prev: &ImageF64,
    h_next: &ImageF64,
    cfg: &SimConfig,
    spec: &VoxelSpec,
) -> Result<VoxelGrid, SimError> {
    if h_prev.geometry != h_next.geometry || h_prev.geometry != spec.geometry {
        return Err(SimError::GeometryMismatch);
    }
    let frames = vec![
        (0u64, h_prev.clone()),
        (ORACLE_WINDOW_US, h_next.clone()),
    ];
    let stream = simulate_events(&frames, cfg)?;
    // Crossings may land exactly on the end frame; the closed window
    // keeps them in the final bin.
    Ok(voxel::build_spike_tensor_closed(
        &stream,
        0,
        ORACLE_WINDOW_US,
        spec,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_pixel_frames(times_and_values: &[(u64, f64)]) -> Vec<(u64, ImageF64)> {
        let g = Geometry::new(1, 1);
        times_and_values
            .iter()
            .map(|&(t, v)| (t, ImageF64::constant(g, v)))
            .collect()
    }

    /// Brute-force oracle: enumerate kS threshold crossings of the
    /// piecewise-linear log trajectory, independently of the simulator's
    /// incremental bookkeeping.
    fn crossing_oracle(frames: &[(u64, f64)], cfg: &SimConfig) -> Vec<(u64, i8)> {
        let logs: Vec<(f64, f64)> = frames
            .iter()
            .map(|&(t, v)| (t as f64, cfg.log_intensity(v)))
            .collect();
        let mut reference = logs[0].1;
        let mut events = Vec::new();
        for w in logs.windows(2) {
            let ((t0, l0), (t1, l1)) = (w[0], w[1]);
            if l1 > l0 {
                let s = cfg.s_pos();
                loop {
                    let next = reference + s;
                    if next <= l1 + CROSSING_TOL {
                        let frac = ((next - l0) / (l1 - l0)).clamp(0.0, 1.0);
                        events.push(((t0 + frac * (t1 - t0)).round() as u64, 1));
                        reference = next;
                    } else {
                        break;
                    }
                }
            } else if l1 < l0 {
                let s = cfg.s_neg();
                loop {
                    let next = reference - s;
                    if next >= l1 - CROSSING_TOL {
                        let frac = ((next - l0) / (l1 - l0)).clamp(0.0, 1.0);
                        events.push(((t0 + frac * (t1 - t0)).round() as u64, -1));
                        reference = next;
                    } else {
                        break;
                    }
                }
            }
        }
        events
    }

    #[test]
    fn constant_frames_emit_nothing() {
        let frames = one_pixel_frames(&[(0, 0.5), (1000, 0.5), (2000, 0.5)]);
        let s = simulate_events(&frames, &SimConfig::default()).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn three_threshold_ramp_fires_three_events() {
        let cfg = SimConfig::with_threshold(0.2);
        let frames = one_pixel_frames(&[(0, 100.0), (1_000_000, 100.0 * (0.6f64).exp())]);
        let s = simulate_events(&frames, &cfg).unwrap();
        let ts: Vec<u64> = s.events().iter().map(|e| e.t).collect();
        assert_eq!(ts, vec![333_333, 666_667, 1_000_000]);
        assert!(s.events().iter().all(|e| e.q == Polarity::Positive));

        let oracle = crossing_oracle(&[(0, 100.0), (1_000_000, 100.0 * (0.6f64).exp())], &cfg);
        assert_eq!(oracle.len(), 3);
        assert_eq!(oracle.iter().map(|&(t, _)| t).collect::<Vec<_>>(), ts);
    }

    #[test]
    fn single_negative_step() {
        let cfg = SimConfig::with_threshold(0.2);
        let frames = one_pixel_frames(&[(0, 100.0), (1_000_000, 100.0 * (-0.2f64).exp())]);
        let s = simulate_events(&frames, &cfg).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.events()[0].q, Polarity::Negative);
        assert_eq!(s.events()[0].t, 1_000_000);
    }

    #[test]
    fn simulator_matches_crossing_oracle_on_random_ramps() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let cfg = SimConfig::with_threshold(0.15);
        for _ in 0..200 {
            let i0: f64 = rng.gen_range(0.01..2.0);
            let i1: f64 = rng.gen_range(0.01..2.0);
            let frames_raw = [(0u64, i0), (500_000u64, i1)];
            let s = simulate_events(&one_pixel_frames(&frames_raw), &cfg).unwrap();
            let oracle = crossing_oracle(&frames_raw, &cfg);
            assert_eq!(s.len(), oracle.len());
            for (e, &(t, q)) in s.events().iter().zip(oracle.iter()) {
                assert_eq!(e.t, t);
                assert_eq!(e.q.as_i8(), q);
            }
        }
    }

    #[test]
    fn integrate_empty_stream_is_identity() {
        let g = Geometry::new(2, 2);
        let init = ImageF64::constant(g, 0.3);
        let out = integrate_events(&EventStream::empty(g), &init, &SimConfig::default()).unwrap();
        assert_eq!(out, init);
    }

    #[test]
    fn integrate_single_event_steps_one_pixel() {
        let g = Geometry::new(2, 2);
        let init = ImageF64::zeros(g);
        let stream = EventStream::validate(
            vec![Event::new(1, 0, Polarity::Positive, 5)],
            g,
        )
        .unwrap();
        let out = integrate_events(&stream, &init, &SimConfig::with_threshold(0.2)).unwrap();
        assert!((out.get(1, 0) - 0.2).abs() < 1e-12);
        assert_eq!(out.get(0, 0), 0.0);
        assert_eq!(out.get(0, 1), 0.0);
        assert_eq!(out.get(1, 1), 0.0);
    }

    #[test]
    fn integrate_simulate_round_trip_is_bounded_by_s() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let g = Geometry::new(8, 8);
        let cfg = SimConfig::with_threshold(0.2);
        let frames: Vec<(u64, ImageF64)> = (0..6)
            .map(|k| {
                let data = (0..g.pixels()).map(|_| rng.gen_range(0.05..1.0)).collect();
                (k * 100_000, ImageF64::new(g, data))
            })
            .collect();
        let stream = simulate_events(&frames, &cfg).unwrap();
        let init_log = frames[0].1.map(|v| cfg.log_intensity(v));
        let out = integrate_events(&stream, &init_log, &cfg).unwrap();
        let final_log = frames.last().unwrap().1.map(|v| cfg.log_intensity(v));
        for (a, b) in out.data.iter().zip(final_log.data.iter()) {
            assert!((a - b).abs() <= cfg.contrast_threshold + 1e-9);
        }
    }

    #[test]
    fn polarity_antisymmetry() {
        let cfg = SimConfig::with_threshold(0.2);
        let g = Geometry::new(1, 1);
        let up = vec![
            (0u64, ImageF64::constant(g, 0.2)),
            (1000u64, ImageF64::constant(g, 0.2 * (0.65f64).exp())),
        ];
        // Log-inverted sequence: log I' = -log I, realized by 1/I.
        let down: Vec<(u64, ImageF64)> = up
            .iter()
            .map(|(t, img)| (*t, img.map(|v| 1.0 / v)))
            .collect();
        let su = simulate_events(&up, &cfg).unwrap();
        let sd = simulate_events(&down, &cfg).unwrap();
        assert_eq!(su.len(), sd.len());
        for (a, b) in su.events().iter().zip(sd.events()) {
            assert_eq!(a.t, b.t);
            assert_eq!(a.q, b.q.flipped());
        }
    }

    #[test]
    fn degenerate_sequence_is_rejected() {
        let frames = one_pixel_frames(&[(0, 1.0)]);
        assert!(matches!(
            simulate_events(&frames, &SimConfig::default()),
            Err(SimError::DegenerateSequence)
        ));
    }

    #[test]
    fn non_finite_intensity_is_rejected() {
        let g = Geometry::new(1, 1);
        let frames = vec![
            (0u64, ImageF64::constant(g, 1.0)),
            (10u64, ImageF64::constant(g, f64::NAN)),
        ];
        assert!(matches!(
            simulate_events(&frames, &SimConfig::default()),
            Err(SimError::NonFiniteIntensity(1))
        ));
    }

    #[test]
    fn oracle_zero_for_identical_frames() {
        let g = Geometry::new(4, 4);
        let spec = VoxelSpec::new(5, g).unwrap();
        let img = ImageF64::constant(g, 0.5);
        let grid = event_frame_oracle(&img, &img, &SimConfig::default(), &spec).unwrap();
        assert_eq!(grid.total_mass(), 0.0);
    }

    #[test]
    fn oracle_step_of_three_thresholds_has_mass_three() {
        let g = Geometry::new(4, 4);
        let cfg = SimConfig::with_threshold(0.2);
        let spec = VoxelSpec::new(5, g).unwrap();
        let prev = ImageF64::constant(g, 0.5);
        let mut next = prev.clone();
        next.set(2, 1, 0.5 * (3.0 * 0.2f64).exp());
        let grid = event_frame_oracle(&prev, &next, &cfg, &spec).unwrap();
        assert!((grid.positive_mass() - 3.0).abs() < 1e-9);
        assert_eq!(grid.negative_mass(), 0.0);
        // All mass sits at the stepped pixel.
        let pixel_mass: f64 = (0..5).map(|b| grid.values[[b, 1, 2]]).sum();
        assert!((pixel_mass - 3.0).abs() < 1e-9);
    }

    #[test]
    fn oracle_swapping_frames_flips_polarity() {
        let g = Geometry::new(4, 4);
        let cfg = SimConfig::with_threshold(0.2);
        let spec = VoxelSpec::new(5, g).unwrap();
        let a = ImageF64::constant(g, 0.3);
        let b = a.map(|v| v * (0.5f64).exp());
        let fwd = event_frame_oracle(&a, &b, &cfg, &spec).unwrap();
        let bwd = event_frame_oracle(&b, &a, &cfg, &spec).unwrap();
        assert!((fwd.positive_mass() - bwd.negative_mass()).abs() < 1e-9);
        assert!((fwd.negative_mass() - bwd.positive_mass()).abs() < 1e-9);
    }

    #[test]
    fn simulation_is_deterministic() {
        use crate::io::write_evt1;
        let cfg = SimConfig::default();
        let g = Geometry::new(4, 4);
        let frames: Vec<(u64, ImageF64)> = (0..4)
            .map(|k| {
                let data = (0..g.pixels())
                    .map(|i| 0.1 + 0.05 * ((i + k as usize) as f64))
                    .collect();
                (k * 1000, ImageF64::new(g, data))
            })
            .collect();
        let b1 = write_evt1(&simulate_events(&frames, &cfg).unwrap());
        let b2 = write_evt1(&simulate_events(&frames, &cfg).unwrap());
        assert_eq!(b1, b2);
    }
}
