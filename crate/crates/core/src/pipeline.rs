//! Batch orchestration: a JSON-configured stage graph over the library
//! modules, with deterministic artifacts and a hashed run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::event::{EventStream, Geometry, TriggerTrack};
use crate::hdr::{fuse_ldr_pair, tone_map, tone_map_f64, HdrFrame, HdrFusionConfig};
use crate::image::{ImageF64, ImageU16};
use crate::io::{
    load_frame_sequence, parse_evt1, read_pgm16, write_evt1, write_frame_sequence, write_pgm16,
    FrameSequence,
};
use crate::kernels::losses::LossWeights;
use crate::kernels::suite::{KernelSuite, SuiteConfig};
use crate::kernels::weights::WeightStore;
use crate::metrics::{evaluate_sequences, MetricDomain};
use crate::sim::{simulate_events, SimConfig};
use crate::voxel::{batch_voxelize, parse_vox1, write_vox1, VoxelGrid, VoxelSpec};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum PipelineError {
    /// Configuration problems; the message names the offending field.
    #[error("invalid config: {0}")]
    Validation(String),
    /// Failures inside a stage.
    #[error("stage {stage}: {message}")]
    Stage { stage: String, message: String },
}

type Result<T> = std::result::Result<T, PipelineError>;

fn stage_err(stage: &str, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Stage {
        stage: stage.to_string(),
        message: e.to_string(),
    }
}

/// File inputs of the stages; each stage reads only the fields it needs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct InputPaths {
    /// EVT1 event file.
    pub events: Option<String>,
    /// Frame-sequence manifest (frames.json).
    pub frames: Option<String>,
    /// Weight-container manifest; the f32 payload is the sibling file
    /// with the `bin` extension.
    pub weights: Option<String>,
    /// Directory of VOX1 grids.
    pub voxels: Option<String>,
    /// Bright/dark LDR pair for fusion.
    pub bright: Option<String>,
    pub dark: Option<String>,
    /// 16-bit linear HDR frame for tone mapping.
    pub hdr: Option<String>,
    /// Reconstruction and ground-truth manifests for metrics.
    pub recon: Option<String>,
    pub truth: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct VoxelSettings {
    /// Temporal bins B (2B grid channels).
    pub bins: usize,
}

impl Default for VoxelSettings {
    fn default() -> Self {
        VoxelSettings { bins: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSettings {
    pub contrast_threshold: f64,
    pub log_eps: f64,
}

impl Default for SimSettings {
    fn default() -> Self {
        let d = SimConfig::default();
        SimSettings {
            contrast_threshold: d.contrast_threshold,
            log_eps: d.log_eps,
        }
    }
}

impl SimSettings {
    pub fn to_sim_config(self) -> SimConfig {
        SimConfig {
            contrast_threshold: self.contrast_threshold,
            threshold_pos: None,
            threshold_neg: None,
            log_eps: self.log_eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelSettings {
    pub channels: usize,
    pub down_steps: usize,
    pub levels: usize,
    pub period: usize,
    pub residual_blocks: usize,
    pub key_dim: usize,
    pub radius: usize,
    pub window: usize,
}

impl Default for KernelSettings {
    fn default() -> Self {
        let d = SuiteConfig::default();
        KernelSettings {
            channels: d.channels,
            down_steps: d.down_steps,
            levels: d.levels,
            period: d.period,
            residual_blocks: d.residual_blocks,
            key_dim: d.key_dim,
            radius: d.radius,
            window: d.window,
        }
    }
}

impl KernelSettings {
    pub fn suite_config(&self, bins: usize) -> SuiteConfig {
        SuiteConfig {
            voxel_bins: bins,
            channels: self.channels,
            down_steps: self.down_steps,
            levels: self.levels,
            period: self.period,
            residual_blocks: self.residual_blocks,
            key_dim: self.key_dim,
            radius: self.radius,
            window: self.window,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossSettings {
    pub tau1: f64,
    pub tau2: f64,
}

impl Default for LossSettings {
    fn default() -> Self {
        let d = LossWeights::default();
        LossSettings { tau1: d.tau1, tau2: d.tau2 }
    }
}

/// Full pipeline configuration; every field has a default, so an empty
/// JSON object is a valid config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub inputs: InputPaths,
    pub voxel: VoxelSettings,
    pub sim: SimSettings,
    pub fusion: HdrFusionConfig,
    pub kernels: KernelSettings,
    pub loss: LossSettings,
    pub output_dir: String,
    pub seed: u64,
    /// Compute metrics on linear values instead of tone-mapped ones.
    pub linear: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            inputs: InputPaths::default(),
            voxel: VoxelSettings::default(),
            sim: SimSettings::default(),
            fusion: HdrFusionConfig::default(),
            kernels: KernelSettings::default(),
            loss: LossSettings::default(),
            output_dir: "out".to_string(),
            seed: 0,
            linear: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.voxel.bins < 2 {
            return Err(PipelineError::Validation(
                "voxel.bins must be >= 2".into(),
            ));
        }
        self.sim
            .to_sim_config()
            .validate()
            .map_err(|e| PipelineError::Validation(format!("sim: {e}")))?;
        self.fusion
            .validate()
            .map_err(|e| PipelineError::Validation(format!("fusion: {e}")))?;
        let k = &self.kernels;
        if k.channels == 0 || k.key_dim == 0 {
            return Err(PipelineError::Validation(
                "kernels.channels and kernels.key_dim must be >= 1".into(),
            ));
        }
        if k.levels == 0 {
            return Err(PipelineError::Validation(
                "kernels.levels must be >= 1".into(),
            ));
        }
        if k.period == 0 {
            return Err(PipelineError::Validation(
                "kernels.period must be >= 1".into(),
            ));
        }
        if !(self.loss.tau1 >= 0.0) || !(self.loss.tau2 >= 0.0) {
            return Err(PipelineError::Validation(
                "loss.tau1 and loss.tau2 must be >= 0".into(),
            ));
        }
        if self.output_dir.is_empty() {
            return Err(PipelineError::Validation(
                "output_dir must not be empty".into(),
            ));
        }
        Ok(())
    }
}

/// Applies one `key.path=value` override onto a JSON config tree. Values
/// parse as JSON when possible (numbers, booleans, null) and fall back to
/// strings.
pub fn apply_override(root: &mut serde_json::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| PipelineError::Validation(format!("override '{spec}' is not key=value")))?;
    let value: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut node = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        if seg.is_empty() {
            return Err(PipelineError::Validation(format!(
                "override '{spec}' has an empty path segment"
            )));
        }
        let obj = node.as_object_mut().ok_or_else(|| {
            PipelineError::Validation(format!("override '{spec}': {seg} is not an object"))
        })?;
        if i + 1 == segments.len() {
            obj.insert((*seg).to_string(), value);
            return Ok(());
        }
        node = obj
            .entry((*seg).to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    unreachable!("split never yields zero segments")
}

/// Loads a config file (or the defaults) and applies dotted overrides.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<PipelineConfig> {
    let mut value = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| PipelineError::Validation(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| PipelineError::Validation(format!("{}: {e}", p.display())))?
        }
        None => serde_json::to_value(PipelineConfig::default()).expect("default config"),
    };
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    serde_json::from_value(value).map_err(|e| PipelineError::Validation(e.to_string()))
}

/// Parallelism cap from the environment; this build runs all stages
/// sequentially, so any positive cap is honored trivially.
pub fn thread_cap() -> Result<usize> {
    match std::env::var("EVHDR_THREADS") {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| {
                PipelineError::Validation(format!(
                    "EVHDR_THREADS must be a positive integer, got '{v}'"
                ))
            }),
        Err(_) => Ok(1),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Voxelize,
    FuseHdr,
    Tonemap,
    KernelsForward,
    Metrics,
    Pipeline,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Voxelize => "voxelize",
            Command::FuseHdr => "fuse-hdr",
            Command::Tonemap => "tonemap",
            Command::KernelsForward => "kernels-forward",
            Command::Metrics => "metrics",
            Command::Pipeline => "pipeline",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub command: String,
    pub artifacts: Vec<PathBuf>,
    pub manifest_path: PathBuf,
}

#[derive(Serialize)]
struct RunManifest {
    toolkit_version: String,
    command: String,
    config_sha256: String,
    artifacts: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs one stage graph and writes a run manifest with content hashes of
/// every artifact.
pub fn run(command: Command, cfg: &PipelineConfig) -> Result<RunSummary> {
    cfg.validate()?;
    thread_cap()?;
    let out = PathBuf::from(&cfg.output_dir);
    fs::create_dir_all(&out).map_err(|e| stage_err(command.name(), e))?;
    let artifacts = match command {
        Command::Simulate => stage_simulate(cfg, &out)?,
        Command::Voxelize => stage_voxelize(cfg, &out)?,
        Command::FuseHdr => stage_fuse_hdr(cfg, &out)?,
        Command::Tonemap => stage_tonemap(cfg, &out)?,
        Command::KernelsForward => stage_kernels_forward(cfg, &out)?,
        Command::Metrics => stage_metrics(cfg, &out)?,
        Command::Pipeline => stage_pipeline(cfg, &out)?,
    };
    let mut hashes = BTreeMap::new();
    for path in &artifacts {
        let bytes = fs::read(path).map_err(|e| stage_err("manifest", e))?;
        let rel = path
            .strip_prefix(&out)
            .unwrap_or(path)
            .display()
            .to_string();
        hashes.insert(rel, sha256_hex(&bytes));
    }
    let manifest = RunManifest {
        toolkit_version: TOOLKIT_VERSION.to_string(),
        command: command.name().to_string(),
        config_sha256: sha256_hex(&serde_json::to_vec(cfg).expect("config serialization")),
        artifacts: hashes,
    };
    let manifest_path = out.join("run_manifest.json");
    fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).expect("manifest serialization"),
    )
    .map_err(|e| stage_err("manifest", e))?;
    Ok(RunSummary {
        command: command.name().to_string(),
        artifacts,
        manifest_path,
    })
}

fn required_path<'a>(field: &'a Option<String>, name: &str, stage: &str) -> Result<&'a Path> {
    field
        .as_deref()
        .map(Path::new)
        .ok_or_else(|| PipelineError::Stage {
            stage: stage.to_string(),
            message: format!("inputs.{name} is required"),
        })
}

/// Loads a frame manifest and normalizes the images into [0, 1] by the
/// declared bit depth.
fn load_frames_f64(path: &Path, stage: &str) -> Result<(FrameSequence, Vec<(u64, ImageF64)>)> {
    let seq = load_frame_sequence(path).map_err(|e| stage_err(stage, e))?;
    let full = f64::from((1u32 << seq.bit_depth) - 1);
    let frames = seq
        .frames
        .iter()
        .map(|(t, img)| (*t, img.to_f64_normalized(full)))
        .collect();
    Ok((seq, frames))
}

fn write_events(out: &Path, stream: &EventStream) -> Result<PathBuf> {
    let path = out.join("events.evt1");
    fs::write(&path, write_evt1(stream)).map_err(|e| stage_err("simulate", e))?;
    Ok(path)
}

fn stage_simulate(cfg: &PipelineConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let manifest = required_path(&cfg.inputs.frames, "frames", "simulate")?;
    let (_, frames) = load_frames_f64(manifest, "simulate")?;
    let stream = simulate_events(&frames, &cfg.sim.to_sim_config())
        .map_err(|e| stage_err("simulate", e))?;
    Ok(vec![write_events(out, &stream)?])
}

fn voxelize_in_memory(
    cfg: &PipelineConfig,
    stage: &str,
) -> Result<(Vec<VoxelGrid>, Vec<u64>, Geometry)> {
    let events_path = required_path(&cfg.inputs.events, "events", stage)?;
    let frames_path = required_path(&cfg.inputs.frames, "frames", stage)?;
    let bytes = fs::read(events_path).map_err(|e| stage_err(stage, e))?;
    let stream = parse_evt1(&bytes).map_err(|e| stage_err(stage, e))?;
    let seq = load_frame_sequence(frames_path).map_err(|e| stage_err(stage, e))?;
    let triggers = TriggerTrack::new(seq.timestamps()).map_err(|e| stage_err(stage, e))?;
    let spec = VoxelSpec::new(cfg.voxel.bins, stream.geometry()).map_err(|e| stage_err(stage, e))?;
    let grids = batch_voxelize(&stream, &triggers, &spec).map_err(|e| stage_err(stage, e))?;
    Ok((grids, seq.timestamps(), stream.geometry()))
}

fn write_grids(out: &Path, grids: &[VoxelGrid], stage: &str) -> Result<Vec<PathBuf>> {
    let dir = out.join("voxels");
    fs::create_dir_all(&dir).map_err(|e| stage_err(stage, e))?;
    let mut paths = Vec::with_capacity(grids.len());
    for (i, g) in grids.iter().enumerate() {
        let path = dir.join(format!("grid_{i:04}.vox"));
        fs::write(&path, write_vox1(g)).map_err(|e| stage_err(stage, e))?;
        paths.push(path);
    }
    Ok(paths)
}

fn load_grids(dir: &Path, stage: &str) -> Result<Vec<VoxelGrid>> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| stage_err(stage, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "vox").unwrap_or(false))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(PipelineError::Stage {
            stage: stage.to_string(),
            message: format!("no .vox files in {}", dir.display()),
        });
    }
    names
        .iter()
        .map(|p| {
            let bytes = fs::read(p).map_err(|e| stage_err(stage, e))?;
            parse_vox1(&bytes).map_err(|e| stage_err(stage, e))
        })
        .collect()
}

fn stage_voxelize(cfg: &PipelineConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let (grids, _, _) = voxelize_in_memory(cfg, "voxelize")?;
    write_grids(out, &grids, "voxelize")
}

fn stage_fuse_hdr(cfg: &PipelineConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let bright = read_pgm16(required_path(&cfg.inputs.bright, "bright", "fuse-hdr")?)
        .map_err(|e| stage_err("fuse-hdr", e))?;
    let dark = read_pgm16(required_path(&cfg.inputs.dark, "dark", "fuse-hdr")?)
        .map_err(|e| stage_err("fuse-hdr", e))?;
    let fused = fuse_ldr_pair(&bright, &dark, &cfg.fusion).map_err(|e| stage_err("fuse-hdr", e))?;
    let path = out.join("hdr.pgm");
    write_pgm16(&path, &fused.frame.image).map_err(|e| stage_err("fuse-hdr", e))?;
    Ok(vec![path])
}

fn write_pgm8(path: &Path, geometry: Geometry, data: &[u8]) -> std::io::Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", geometry.width, geometry.height).into_bytes();
    out.extend_from_slice(data);
    fs::write(path, out)
}

fn stage_tonemap(cfg: &PipelineConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let hdr = read_pgm16(required_path(&cfg.inputs.hdr, "hdr", "tonemap")?)
        .map_err(|e| stage_err("tonemap", e))?;
    let geometry = hdr.geometry;
    let frame = HdrFrame {
        image: hdr,
        full_scale_radiance: 1.0,
        timestamp: 0,
    };
    let mapped = tone_map(&frame);
    let path = out.join("tonemap.pgm");
    write_pgm8(&path, geometry, &mapped).map_err(|e| stage_err("tonemap", e))?;
    Ok(vec![path])
}

fn load_or_seed_suite(cfg: &PipelineConfig, stage: &str) -> Result<KernelSuite> {
    let suite_cfg = cfg.kernels.suite_config(cfg.voxel.bins);
    match &cfg.inputs.weights {
        Some(manifest) => {
            let manifest = Path::new(manifest);
            let bin = manifest.with_extension("bin");
            let store = WeightStore::load(&bin, manifest).map_err(|e| stage_err(stage, e))?;
            KernelSuite::from_weight_store(suite_cfg, &store).map_err(|e| stage_err(stage, e))
        }
        None => KernelSuite::seeded(suite_cfg, cfg.seed).map_err(|e| stage_err(stage, e)),
    }
}

fn save_suite_weights(
    suite: &KernelSuite,
    out: &Path,
    stage: &str,
) -> Result<(PathBuf, PathBuf)> {
    let store = suite.to_weight_store().map_err(|e| stage_err(stage, e))?;
    let bin = out.join("weights.bin");
    let json = out.join("weights.json");
    store.save(&bin, &json).map_err(|e| stage_err(stage, e))?;
    Ok((bin, json))
}

fn recon_to_sequence(geometry: Geometry, recon: &[ImageF64], t: &[u64]) -> FrameSequence {
    let frames = recon
        .iter()
        .zip(t.iter())
        .map(|(img, &t)| {
            let data = img
                .data
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * f64::from(u16::MAX)).round() as u16)
                .collect();
            (t, ImageU16::new(geometry, data))
        })
        .collect();
    FrameSequence {
        geometry,
        bit_depth: 16,
        frames,
    }
}

fn forward_grids(
    cfg: &PipelineConfig,
    grids: &[VoxelGrid],
    geometry: Geometry,
    timestamps: &[u64],
    out: &Path,
    stage: &str,
) -> Result<Vec<PathBuf>> {
    let suite = load_or_seed_suite(cfg, stage)?;
    let recon = suite
        .forward_sequence(grids)
        .map_err(|e| stage_err(stage, e))?;
    let seq = recon_to_sequence(geometry, &recon, timestamps);
    let manifest = write_frame_sequence(&out.join("recon"), &seq).map_err(|e| stage_err(stage, e))?;
    let mut artifacts: Vec<PathBuf> = (0..seq.len())
        .map(|i| out.join("recon").join(format!("frame_{i:06}.pgm")))
        .collect();
    artifacts.push(manifest);
    let (bin, json) = save_suite_weights(&suite, out, stage)?;
    artifacts.push(bin);
    artifacts.push(json);
    Ok(artifacts)
}

fn stage_kernels_forward(cfg: &PipelineConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let stage = "kernels-forward";
    let (grids, timestamps, geometry) = if cfg.inputs.voxels.is_some() {
        let dir = required_path(&cfg.inputs.voxels, "voxels", stage)?;
        let grids = load_grids(dir, stage)?;
        let ts: Vec<u64> = grids.iter().map(|g| g.t0 + g.dt).collect();
        let shape = grids[0].values.shape();
        let geometry = Geometry::new(shape[2] as u32, shape[1] as u32);
        (grids, ts, geometry)
    } else {
        let (grids, trigger_ts, geometry) = voxelize_in_memory(cfg, stage)?;
        (grids, trigger_ts[1..].to_vec(), geometry)
    };
    forward_grids(cfg, &grids, geometry, &timestamps, out, stage)
}

fn metrics_domain(cfg: &PipelineConfig) -> MetricDomain {
    if cfg.linear {
        MetricDomain::Linear
    } else {
        MetricDomain::ToneMapped
    }
}

fn run_metrics(
    cfg: &PipelineConfig,
    recon: &[ImageF64],
    truth: &[ImageF64],
    grids: &[VoxelGrid],
    sequence_id: &str,
    out: &Path,
    stage: &str,
) -> Result<Vec<PathBuf>> {
    let domain = metrics_domain(cfg);
    let (recon, truth): (Vec<ImageF64>, Vec<ImageF64>) = match domain {
        MetricDomain::Linear => (recon.to_vec(), truth.to_vec()),
        MetricDomain::ToneMapped => (
            recon.iter().map(tone_map_f64).collect(),
            truth.iter().map(tone_map_f64).collect(),
        ),
    };
    let report = evaluate_sequences(
        &recon,
        &truth,
        grids,
        &cfg.sim.to_sim_config(),
        sequence_id,
        domain,
    )
    .map_err(|e| stage_err(stage, e))?;
    let csv_path = out.join("metrics.csv");
    let json_path = out.join("metrics.json");
    fs::write(&csv_path, report.to_csv()).map_err(|e| stage_err(stage, e))?;
    fs::write(&json_path, report.to_json()).map_err(|e| stage_err(stage, e))?;
    Ok(vec![csv_path, json_path])
}

/// Picks the grids covering the intervals between consecutive recon
/// frames: drops the leading grid when one grid per recon frame is
/// supplied.
fn interval_grids<'a>(grids: &'a [VoxelGrid], recon_len: usize, stage: &str) -> Result<&'a [VoxelGrid]> {
    if grids.len() == recon_len {
        Ok(&grids[1..])
    } else if grids.len() + 1 == recon_len {
        Ok(grids)
    } else {
        Err(PipelineError::Stage {
            stage: stage.to_string(),
            message: format!(
                "{} voxel grids cannot align with {} reconstructed frames",
                grids.len(),
                recon_len
            ),
        })
    }
}

fn stage_metrics(cfg: &PipelineConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let stage = "metrics";
    let recon_path = required_path(&cfg.inputs.recon, "recon", stage)?;
    let (_, recon) = load_frames_f64(recon_path, stage)?;
    let recon: Vec<ImageF64> = recon.into_iter().map(|(_, img)| img).collect();
    let truth: Vec<ImageF64> = match (&cfg.inputs.truth, &cfg.inputs.frames) {
        (Some(p), _) => load_frames_f64(Path::new(p), stage)?
            .1
            .into_iter()
            .map(|(_, img)| img)
            .collect(),
        (None, Some(p)) => {
            // The source frames that generated the events: frame k+1 is
            // the truth for the reconstruction of interval k.
            let (_, frames) = load_frames_f64(Path::new(p), stage)?;
            frames.into_iter().skip(1).map(|(_, img)| img).collect()
        }
        (None, None) => {
            return Err(PipelineError::Stage {
                stage: stage.to_string(),
                message: "inputs.truth or inputs.frames is required".into(),
            })
        }
    };
    let grids = load_grids(required_path(&cfg.inputs.voxels, "voxels", stage)?, stage)?;
    let grids = interval_grids(&grids, recon.len(), stage)?;
    run_metrics(cfg, &recon, &truth, grids, "metrics", out, stage)
}

/// The synthetic smoke scene: a smooth gradient translating across a
/// 64x64 sensor at 500 fps-equivalent (2000 µs) frame spacing.
pub fn synthetic_scene(frame_count: usize) -> Vec<(u64, ImageF64)> {
    let g = Geometry::new(64, 64);
    (0..frame_count)
        .map(|k| {
            let mut img = ImageF64::zeros(g);
            for y in 0..g.height {
                for x in 0..g.width {
                    let phase =
                        (f64::from(x) + 3.0 * k as f64) / 32.0 * std::f64::consts::TAU;
                    let vertical = (f64::from(y) / 64.0 * std::f64::consts::TAU).cos();
                    img.set(x, y, 0.55 + 0.35 * phase.sin() * (0.6 + 0.4 * vertical));
                }
            }
            (k as u64 * 2000, img)
        })
        .collect()
}

fn scene_to_sequence(frames: &[(u64, ImageF64)]) -> FrameSequence {
    let geometry = frames[0].1.geometry;
    let full = f64::from((1u32 << 12) - 1);
    let frames = frames
        .iter()
        .map(|(t, img)| {
            let data = img
                .data
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * full).round() as u16)
                .collect();
            (*t, ImageU16::new(geometry, data))
        })
        .collect();
    FrameSequence {
        geometry,
        bit_depth: 12,
        frames,
    }
}

fn stage_pipeline(cfg: &PipelineConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let stage = "pipeline";
    let mut artifacts = Vec::new();
    // Source frames: configured or the synthetic smoke scene.
    let frames: Vec<(u64, ImageF64)> = match &cfg.inputs.frames {
        Some(p) => load_frames_f64(Path::new(p), stage)?.1,
        None => {
            let scene = synthetic_scene(6);
            let seq = scene_to_sequence(&scene);
            let manifest =
                write_frame_sequence(&out.join("scene"), &seq).map_err(|e| stage_err(stage, e))?;
            for i in 0..seq.len() {
                artifacts.push(out.join("scene").join(format!("frame_{i:06}.pgm")));
            }
            artifacts.push(manifest);
            // Reload through the 12-bit container so a rerun from the
            // written scene reproduces the same events.
            let full = f64::from((1u32 << 12) - 1);
            seq.frames
                .iter()
                .map(|(t, img)| (*t, img.to_f64_normalized(full)))
                .collect()
        }
    };
    let sim_cfg = cfg.sim.to_sim_config();
    let stream = simulate_events(&frames, &sim_cfg).map_err(|e| stage_err(stage, e))?;
    artifacts.push(write_events(out, &stream)?);

    let geometry = stream.geometry();
    let timestamps: Vec<u64> = frames.iter().map(|(t, _)| *t).collect();
    let triggers = TriggerTrack::new(timestamps.clone()).map_err(|e| stage_err(stage, e))?;
    let spec = VoxelSpec::new(cfg.voxel.bins, geometry).map_err(|e| stage_err(stage, e))?;
    let grids = batch_voxelize(&stream, &triggers, &spec).map_err(|e| stage_err(stage, e))?;
    artifacts.extend(write_grids(out, &grids, stage)?);

    let suite = load_or_seed_suite(cfg, stage)?;
    let recon = suite
        .forward_sequence(&grids)
        .map_err(|e| stage_err(stage, e))?;
    let seq = recon_to_sequence(geometry, &recon, &timestamps[1..]);
    let manifest = write_frame_sequence(&out.join("recon"), &seq).map_err(|e| stage_err(stage, e))?;
    for i in 0..seq.len() {
        artifacts.push(out.join("recon").join(format!("frame_{i:06}.pgm")));
    }
    artifacts.push(manifest);
    let (bin, json) = save_suite_weights(&suite, out, stage)?;
    artifacts.push(bin);
    artifacts.push(json);

    let truth: Vec<ImageF64> = frames.iter().skip(1).map(|(_, img)| img.clone()).collect();
    let tc_grids = interval_grids(&grids, recon.len(), stage)?;
    artifacts.extend(run_metrics(cfg, &recon, &truth, tc_grids, "smoke", out, stage)?);
    Ok(artifacts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn bad_bins_report_the_field_path() {
        let mut cfg = PipelineConfig::default();
        cfg.voxel.bins = 1;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("voxel.bins must be >= 2"), "{err}");
    }

    #[test]
    fn overrides_apply_onto_the_config_tree() {
        let mut value = serde_json::to_value(PipelineConfig::default()).unwrap();
        apply_override(&mut value, "voxel.bins=7").unwrap();
        apply_override(&mut value, "sim.contrast_threshold=0.15").unwrap();
        apply_override(&mut value, "output_dir=elsewhere").unwrap();
        let cfg: PipelineConfig = serde_json::from_value(value).unwrap();
        assert_eq!(cfg.voxel.bins, 7);
        assert!((cfg.sim.contrast_threshold - 0.15).abs() < 1e-12);
        assert_eq!(cfg.output_dir, "elsewhere");
    }

    #[test]
    fn malformed_override_is_a_validation_error() {
        let mut value = serde_json::to_value(PipelineConfig::default()).unwrap();
        assert!(matches!(
            apply_override(&mut value, "no-equals-sign"),
            Err(PipelineError::Validation(_))
        ));
    }

    #[test]
    fn load_config_applies_overrides_over_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        fs::write(&path, r#"{"seed": 5, "voxel": {"bins": 4}}"#).unwrap();
        let cfg = load_config(Some(&path), &["seed=9".to_string()]).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.voxel.bins, 4);
    }

    #[test]
    fn synthetic_scene_is_positive_and_moving() {
        let scene = synthetic_scene(4);
        assert_eq!(scene.len(), 4);
        assert_eq!(scene[1].0 - scene[0].0, 2000);
        for (_, img) in &scene {
            assert!(img.data.iter().all(|&v| v > 0.0 && v <= 1.0));
        }
        assert_ne!(scene[0].1, scene[1].1);
    }

    #[test]
    fn simulate_stage_writes_an_event_file_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let scene = synthetic_scene(3);
        let seq = scene_to_sequence(&scene);
        let manifest = write_frame_sequence(&dir.path().join("frames"), &seq).unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.inputs.frames = Some(manifest.display().to_string());
        cfg.output_dir = dir.path().join("out").display().to_string();
        let summary = run(Command::Simulate, &cfg).unwrap();
        assert!(summary.artifacts.iter().any(|p| p.ends_with("events.evt1")));
        assert!(summary.manifest_path.exists());
        let manifest_text = fs::read_to_string(&summary.manifest_path).unwrap();
        assert!(manifest_text.contains("config_sha256"));
        assert!(manifest_text.contains("events.evt1"));
    }

    #[test]
    fn invalid_threads_variable_is_rejected() {
        // Env-var mutation is process-global; restore immediately.
        std::env::set_var("EVHDR_THREADS", "zero");
        let r = thread_cap();
        std::env::remove_var("EVHDR_THREADS");
        assert!(matches!(r, Err(PipelineError::Validation(_))));
        assert_eq!(thread_cap().unwrap(), 1);
    }
}
