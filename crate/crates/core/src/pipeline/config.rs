//! Flat `key = value` run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use crate::dataset::TrajectoryFormat;
use crate::error::{Error, Result};
use crate::loop_closure::{AdaptiveGateConfig, Gate, KeyframePolicy, LoopClosureConfig, LoopPoseConfig};
use crate::odometry::{OdometryConfig, RegistrationConfig};
use crate::pipeline::synthetic::WorldSpec;
use crate::pose_graph::{diagonal_information, GraphWeights};
use crate::scan_context::ScanContextConfig;

/// Standard deviations behind the pose-graph information matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphConfig {
    pub odometry_rotation_sigma: f64,
    pub odometry_translation_sigma: f64,
    pub loop_rotation_sigma: f64,
    pub loop_translation_sigma: f64,
    pub huber_scale: f64,
    pub max_iterations: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            odometry_rotation_sigma: 0.01,
            odometry_translation_sigma: 0.05,
            loop_rotation_sigma: 0.05,
            loop_translation_sigma: 0.2,
            huber_scale: 1.0,
            max_iterations: 50,
        }
    }
}

impl GraphConfig {
    pub fn weights(&self) -> GraphWeights {
        GraphWeights {
            odometry: diagonal_information(self.odometry_rotation_sigma, self.odometry_translation_sigma),
            loop_closure: diagonal_information(self.loop_rotation_sigma, self.loop_translation_sigma),
            huber_scale: self.huber_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// KITTI sequence directory (containing `velodyne/`) or a directory of `.bin` scans.
    pub dataset: Option<PathBuf>,
    pub num_lasers: usize,
    pub ground_truth: Option<PathBuf>,
    pub calibration: Option<PathBuf>,
    pub max_frames: Option<usize>,
    /// Simulated input used instead of `dataset`.
    pub synthetic: Option<WorldSpec>,
    pub output_dir: PathBuf,
    pub trajectory_format: TrajectoryFormat,
    pub odometry: OdometryConfig,
    pub loop_enabled: bool,
    pub keyframes: KeyframePolicy,
    pub scan_context: ScanContextConfig,
    pub loop_pose: LoopPoseConfig,
    /// Use `fixed_threshold` instead of the adaptive gate.
    pub fixed_gate: bool,
    pub adaptive_gate: AdaptiveGateConfig,
    pub fixed_threshold: f64,
    pub graph: GraphConfig,
    /// Run the three stages on separate threads.
    pub threaded: bool,
    pub queue_capacity: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dataset: None,
            num_lasers: 64,
            ground_truth: None,
            calibration: None,
            max_frames: None,
            synthetic: None,
            output_dir: PathBuf::from("out"),
            trajectory_format: TrajectoryFormat::Kitti,
            odometry: OdometryConfig::default(),
            loop_enabled: true,
            keyframes: KeyframePolicy::default(),
            scan_context: ScanContextConfig::default(),
            loop_pose: LoopPoseConfig::default(),
            fixed_gate: false,
            adaptive_gate: AdaptiveGateConfig::default(),
            fixed_threshold: 80.0,
            graph: GraphConfig::default(),
            threaded: true,
            queue_capacity: 8,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn path_text(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl PipelineConfig {
    /// Every recognised key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let f = &self.odometry.features;
        let s = &self.odometry.submap;
        let r = &self.odometry.registration;
        let sc = &self.scan_context;
        let lp = &self.loop_pose;
        let kf = &self.keyframes;
        let g = &self.graph;
        vec![
            ("dataset.path", path_text(&self.dataset)),
            ("dataset.num_lasers", self.num_lasers.to_string()),
            ("dataset.ground_truth", path_text(&self.ground_truth)),
            ("dataset.calibration", path_text(&self.calibration)),
            ("dataset.max_frames", self.max_frames.map(|m| m.to_string()).unwrap_or_default()),
            ("dataset.synthetic", self.synthetic.as_ref().map(|s| s.to_string()).unwrap_or_default()),
            ("output.dir", self.output_dir.display().to_string()),
            (
                "output.trajectory_format",
                match self.trajectory_format {
                    TrajectoryFormat::Kitti => "kitti",
                    TrajectoryFormat::Tum => "tum",
                }
                .into(),
            ),
            ("feature.half_width", f.half_width.to_string()),
            ("feature.smoothness_threshold", f.smoothness_threshold.to_string()),
            ("feature.min_range", f.min_range.to_string()),
            ("feature.max_range", f.max_range.to_string()),
            ("feature.max_edges_per_sector", f.max_edges_per_sector.to_string()),
            ("feature.max_planars_per_sector", f.max_planars_per_sector.to_string()),
            ("feature.num_sectors", f.num_sectors.to_string()),
            ("submap.edge_voxel", s.edge_voxel.to_string()),
            ("submap.planar_voxel", s.planar_voxel.to_string()),
            ("submap.crop_radius", s.crop_radius.to_string()),
            ("registration.max_iterations", r.max_iterations.to_string()),
            ("registration.max_correspondence_distance", r.max_correspondence_distance.to_string()),
            ("registration.huber_scale", r.huber_scale.to_string()),
            ("registration.line_eigen_ratio", r.line_eigen_ratio.to_string()),
            ("registration.plane_tolerance", r.plane_tolerance.to_string()),
            ("registration.convergence_step", r.convergence_step.to_string()),
            ("registration.hypothesis_rotation_deg", self.odometry.hypothesis_rotation_deg.to_string()),
            ("scan_context.num_rings", sc.num_rings.to_string()),
            ("scan_context.num_sectors", sc.num_sectors.to_string()),
            ("scan_context.max_radius", sc.max_radius.to_string()),
            ("scan_context.num_candidates", sc.num_candidates.to_string()),
            ("scan_context.similarity_threshold", sc.similarity_threshold.to_string()),
            ("scan_context.exclude_recent", sc.exclude_recent.to_string()),
            ("gate.mode", if self.fixed_gate { "fixed" } else { "adaptive" }.into()),
            ("gate.base_threshold", self.adaptive_gate.base_threshold.to_string()),
            ("gate.n", self.adaptive_gate.n.to_string()),
            ("gate.fixed_threshold", self.fixed_threshold.to_string()),
            ("loop.enabled", self.loop_enabled.to_string()),
            ("loop.window", lp.window.to_string()),
            ("loop.cost_threshold", lp.cost_threshold.to_string()),
            ("loop.max_iterations", lp.registration.max_iterations.to_string()),
            ("keyframe.translation", kf.translation.to_string()),
            ("keyframe.rotation_deg", kf.rotation_deg.to_string()),
            ("graph.odometry_rotation_sigma", g.odometry_rotation_sigma.to_string()),
            ("graph.odometry_translation_sigma", g.odometry_translation_sigma.to_string()),
            ("graph.loop_rotation_sigma", g.loop_rotation_sigma.to_string()),
            ("graph.loop_translation_sigma", g.loop_translation_sigma.to_string()),
            ("graph.huber_scale", g.huber_scale.to_string()),
            ("graph.max_iterations", g.max_iterations.to_string()),
            ("pipeline.threaded", self.threaded.to_string()),
            ("pipeline.queue_capacity", self.queue_capacity.to_string()),
        ]
    }

    /// Sets one key. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let f = &mut self.odometry.features;
        let s = &mut self.odometry.submap;
        let r = &mut self.odometry.registration;
        let sc = &mut self.scan_context;
        let lp = &mut self.loop_pose;
        let kf = &mut self.keyframes;
        let g = &mut self.graph;
        match key {
            "dataset.path" => self.dataset = optional_path(value),
            "dataset.num_lasers" => self.num_lasers = parse(key, value)?,
            "dataset.ground_truth" => self.ground_truth = optional_path(value),
            "dataset.calibration" => self.calibration = optional_path(value),
            "dataset.max_frames" => {
                self.max_frames = if value.is_empty() { None } else { Some(parse(key, value)?) }
            }
            "dataset.synthetic" => {
                self.synthetic = if value.is_empty() { None } else { Some(value.parse()?) }
            }
            "output.dir" => self.output_dir = PathBuf::from(value),
            "output.trajectory_format" => {
                self.trajectory_format = match value {
                    "kitti" => TrajectoryFormat::Kitti,
                    "tum" => TrajectoryFormat::Tum,
                    _ => return Err(Error::Config(format!("unknown trajectory format {value:?}"))),
                }
            }
            "feature.half_width" => f.half_width = parse(key, value)?,
            "feature.smoothness_threshold" => f.smoothness_threshold = parse(key, value)?,
            "feature.min_range" => f.min_range = parse(key, value)?,
            "feature.max_range" => f.max_range = parse(key, value)?,
            "feature.max_edges_per_sector" => f.max_edges_per_sector = parse(key, value)?,
            "feature.max_planars_per_sector" => f.max_planars_per_sector = parse(key, value)?,
            "feature.num_sectors" => f.num_sectors = parse(key, value)?,
            "submap.edge_voxel" => s.edge_voxel = parse(key, value)?,
            "submap.planar_voxel" => s.planar_voxel = parse(key, value)?,
            "submap.crop_radius" => s.crop_radius = parse(key, value)?,
            "registration.max_iterations" => r.max_iterations = parse(key, value)?,
            "registration.hypothesis_rotation_deg" => self.odometry.hypothesis_rotation_deg = parse(key, value)?,
            "registration.max_correspondence_distance" => r.max_correspondence_distance = parse(key, value)?,
            "registration.huber_scale" => r.huber_scale = parse(key, value)?,
            "registration.line_eigen_ratio" => r.line_eigen_ratio = parse(key, value)?,
            "registration.plane_tolerance" => r.plane_tolerance = parse(key, value)?,
            "registration.convergence_step" => r.convergence_step = parse(key, value)?,
            "scan_context.num_rings" => sc.num_rings = parse(key, value)?,
            "scan_context.num_sectors" => sc.num_sectors = parse(key, value)?,
            "scan_context.max_radius" => sc.max_radius = parse(key, value)?,
            "scan_context.num_candidates" => sc.num_candidates = parse(key, value)?,
            "scan_context.similarity_threshold" => sc.similarity_threshold = parse(key, value)?,
            "scan_context.exclude_recent" => sc.exclude_recent = parse(key, value)?,
            "gate.mode" => {
                self.fixed_gate = match value {
                    "adaptive" => false,
                    "fixed" => true,
                    _ => return Err(Error::Config(format!("unknown gate mode {value:?}"))),
                }
            }
            "gate.base_threshold" => self.adaptive_gate.base_threshold = parse(key, value)?,
            "gate.n" => self.adaptive_gate.n = parse(key, value)?,
            "gate.fixed_threshold" => self.fixed_threshold = parse(key, value)?,
            "loop.enabled" => self.loop_enabled = parse_bool(key, value)?,
            "loop.window" => lp.window = parse(key, value)?,
            "loop.cost_threshold" => lp.cost_threshold = parse(key, value)?,
            "loop.max_iterations" => lp.registration.max_iterations = parse(key, value)?,
            "keyframe.translation" => kf.translation = parse(key, value)?,
            "keyframe.rotation_deg" => kf.rotation_deg = parse(key, value)?,
            "graph.odometry_rotation_sigma" => g.odometry_rotation_sigma = parse(key, value)?,
            "graph.odometry_translation_sigma" => g.odometry_translation_sigma = parse(key, value)?,
            "graph.loop_rotation_sigma" => g.loop_rotation_sigma = parse(key, value)?,
            "graph.loop_translation_sigma" => g.loop_translation_sigma = parse(key, value)?,
            "graph.huber_scale" => g.huber_scale = parse(key, value)?,
            "graph.max_iterations" => g.max_iterations = parse(key, value)?,
            "pipeline.threaded" => self.threaded = parse_bool(key, value)?,
            "pipeline.queue_capacity" => self.queue_capacity = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, context: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::format(context, Some(i + 1), "expected key = value"))?;
            self.set(key.trim(), value).map_err(|e| match e {
                Error::Config(m) => Error::format(context, Some(i + 1), m),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn from_text(text: &str, context: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        cfg.apply_text(text, context)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a file; relative dataset paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = PipelineConfig::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.dataset, &mut cfg.ground_truth, &mut cfg.calibration].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, item: &str) -> Result<()> {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
        self.set(key.trim(), value)
    }

    pub fn validate(&self) -> Result<()> {
        self.odometry.features.validate()?;
        self.adaptive_gate.validate()?;
        let sc = &self.scan_context;
        let g = &self.graph;
        let positive = [
            self.odometry.submap.edge_voxel,
            self.odometry.submap.planar_voxel,
            self.odometry.submap.crop_radius,
            sc.max_radius,
            g.odometry_rotation_sigma,
            g.odometry_translation_sigma,
            g.loop_rotation_sigma,
            g.loop_translation_sigma,
            g.huber_scale,
            self.keyframes.translation,
            self.keyframes.rotation_deg,
            self.fixed_threshold,
        ];
        if positive.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::Config("voxel sizes, radii, sigmas and keyframe thresholds must be positive".into()));
        }
        if sc.num_rings == 0 || sc.num_sectors == 0 || sc.num_candidates == 0 {
            return Err(Error::Config("scan_context dimensions must be positive".into()));
        }
        if self.queue_capacity == 0 || self.num_lasers == 0 {
            return Err(Error::Config("pipeline.queue_capacity and dataset.num_lasers must be positive".into()));
        }
        Ok(())
    }

    pub fn gate(&self) -> Gate {
        if self.fixed_gate {
            Gate::Fixed(self.fixed_threshold)
        } else {
            Gate::Adaptive(self.adaptive_gate)
        }
    }

    pub fn loop_closure(&self) -> LoopClosureConfig {
        LoopClosureConfig {
            gate: self.gate(),
            keyframes: self.keyframes,
            scan_context: self.scan_context.clone(),
            loop_pose: LoopPoseConfig {
                registration: RegistrationConfig {
                    max_iterations: self.loop_pose.registration.max_iterations,
                    ..self.odometry.registration.clone()
                },
                submap: self.odometry.submap.clone(),
                ..self.loop_pose.clone()
            },
        }
    }

    /// The configuration in the same `key = value` form it is read from.
    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
