//! KITTI odometry ingestion and trajectory / map export.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::features::FeatureCloud;
use crate::geometry::{Pose, Rotation, Vec3};

/// Elevation span of the HDL-64E used by KITTI, degrees.
pub const HDL64_MIN_ELEVATION_DEG: f64 = -24.8;
pub const HDL64_MAX_ELEVATION_DEG: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarPoint {
    pub position: Vec3,
    /// Carried through untouched; nothing downstream reads it.
    pub intensity: f32,
    pub ring: u16,
}

/// One LiDAR sweep.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawScan {
    pub points: Vec<LidarPoint>,
    pub frame_index: usize,
}

impl RawScan {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Same scan with every point mapped through `pose`.
    pub fn transformed(&self, pose: &Pose) -> RawScan {
        RawScan {
            frame_index: self.frame_index,
            points: self
                .points
                .iter()
                .map(|p| LidarPoint {
                    position: pose.apply(&p.position),
                    ..*p
                })
                .collect(),
        }
    }
}

/// Uniform elevation bins used to recover ring indices from bare xyz returns.
#[derive(Debug, Clone, Copy)]
pub struct RingModel {
    pub num_lasers: usize,
    pub min_elevation_deg: f64,
    pub max_elevation_deg: f64,
}

impl RingModel {
    pub fn hdl64(num_lasers: usize) -> Self {
        RingModel {
            num_lasers,
            min_elevation_deg: HDL64_MIN_ELEVATION_DEG,
            max_elevation_deg: HDL64_MAX_ELEVATION_DEG,
        }
    }

    /// `floor((elevation - min) / bin_width)`, clamped into `[0, num_lasers)`.
    pub fn ring_of(&self, p: &Vec3) -> u16 {
        let n = self.num_lasers.max(1);
        let elevation = p.z.atan2((p.x * p.x + p.y * p.y).sqrt()).to_degrees();
        let width = (self.max_elevation_deg - self.min_elevation_deg) / n as f64;
        let bin = ((elevation - self.min_elevation_deg) / width).floor();
        bin.clamp(0.0, (n - 1) as f64) as u16
    }
}

/// Result of decoding a velodyne buffer.
#[derive(Debug, Clone, Default)]
pub struct DecodedScan {
    pub scan: RawScan,
    /// Records with a non-finite coordinate, dropped from `scan`.
    pub dropped: usize,
}

/// Decodes KITTI velodyne bytes: little-endian `f32` quadruples `(x, y, z, intensity)`.
pub fn decode_scan(bytes: &[u8], frame_index: usize, rings: &RingModel) -> Result<DecodedScan> {
    if !bytes.len().is_multiple_of(16) {
        return Err(Error::format(
            "velodyne scan",
            None,
            format!("{} bytes is not a multiple of 16", bytes.len()),
        ));
    }
    let mut out = DecodedScan {
        scan: RawScan {
            points: Vec::with_capacity(bytes.len() / 16),
            frame_index,
        },
        dropped: 0,
    };
    for rec in bytes.chunks_exact(16) {
        let f = |i: usize| f32::from_le_bytes([rec[i], rec[i + 1], rec[i + 2], rec[i + 3]]);
        let (x, y, z, intensity) = (f(0), f(4), f(8), f(12));
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            out.dropped += 1;
            continue;
        }
        let position = Vec3::new(x as f64, y as f64, z as f64);
        out.scan.points.push(LidarPoint {
            ring: rings.ring_of(&position),
            position,
            intensity,
        });
    }
    Ok(out)
}

/// Loads one `.bin` scan; the frame index is parsed from the file stem when numeric.
pub fn load_scan(path: &Path, num_lasers: usize) -> Result<DecodedScan> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let frame = path
        .file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    decode_scan(&bytes, frame, &RingModel::hdl64(num_lasers))
        .map_err(|e| with_context(e, &path.display().to_string()))
}

pub fn encode_scan(scan: &RawScan) -> Vec<u8> {
    let mut out = Vec::with_capacity(scan.points.len() * 16);
    for p in &scan.points {
        for v in [p.position.x as f32, p.position.y as f32, p.position.z as f32, p.intensity] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_scan(path: &Path, scan: &RawScan) -> Result<()> {
    fs::write(path, encode_scan(scan)).map_err(|e| Error::io(path, e))
}

fn with_context(e: Error, context: &str) -> Error {
    match e {
        Error::Format { line, message, .. } => Error::Format {
            context: context.to_string(),
            line,
            message,
        },
        other => other,
    }
}

/// A KITTI sequence directory containing `velodyne/NNNNNN.bin`.
#[derive(Debug, Clone)]
pub struct KittiSequence {
    pub scans: Vec<PathBuf>,
}

impl KittiSequence {
    pub fn open(dir: &Path) -> Result<Self> {
        let velodyne = if dir.join("velodyne").is_dir() {
            dir.join("velodyne")
        } else {
            dir.to_path_buf()
        };
        let entries = fs::read_dir(&velodyne).map_err(|e| Error::io(&velodyne, e))?;
        let mut scans = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| Error::io(&velodyne, e))?.path();
            if path.extension().is_some_and(|e| e == "bin") {
                scans.push(path);
            }
        }
        scans.sort();
        Ok(KittiSequence { scans })
    }

    pub fn len(&self) -> usize {
        self.scans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scans.is_empty()
    }
}

/// Ground-truth poses in the left-camera frame plus the LiDAR->camera calibration.
#[derive(Debug, Clone, Default)]
pub struct GroundTruthTrajectory {
    pub camera_poses: Vec<Pose>,
    /// `Tr`: maps LiDAR coordinates into camera coordinates.
    pub calibration: Pose,
}

impl GroundTruthTrajectory {
    /// Ground truth expressed for the LiDAR: `Tr^-1 * T_cam * Tr`.
    pub fn lidar_poses(&self) -> Vec<Pose> {
        let inv = self.calibration.inverse();
        self.camera_poses
            .iter()
            .map(|p| inv.compose(p).compose(&self.calibration))
            .collect()
    }

    /// Maps a LiDAR-frame trajectory into the camera frame used by the ground truth.
    pub fn lidar_to_camera(&self, lidar: &[Pose]) -> Vec<Pose> {
        let inv = self.calibration.inverse();
        lidar
            .iter()
            .map(|p| self.calibration.compose(p).compose(&inv))
            .collect()
    }
}

fn parse_numbers(line: &str, context: &str, line_no: usize) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| Error::format(context, Some(line_no), format!("bad number {tok:?}")))
        })
        .collect()
}

fn pose_from_tokens(values: &[f64], context: &str, line_no: usize) -> Result<Pose> {
    let arr: [f64; 12] = values.try_into().map_err(|_| {
        Error::format(context, Some(line_no), format!("expected 12 numbers, found {}", values.len()))
    })?;
    Ok(Pose::from_row_major_3x4(&arr))
}

/// Parses a KITTI pose file: one row-major 3x4 matrix per line.
pub fn parse_kitti_poses(text: &str, context: &str) -> Result<Vec<Pose>> {
    let mut poses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let values = parse_numbers(line, context, i + 1)?;
        poses.push(pose_from_tokens(&values, context, i + 1)?);
    }
    Ok(poses)
}

pub fn load_poses(path: &Path) -> Result<Vec<Pose>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kitti_poses(&text, &path.display().to_string())
}

/// Reads the `Tr:` entry of a KITTI `calib.txt`.
pub fn load_calibration(path: &Path) -> Result<Pose> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let context = path.display().to_string();
    for (i, line) in text.lines().enumerate() {
        if let Some(rest) = line.trim_start().strip_prefix("Tr:") {
            let values = parse_numbers(rest, &context, i + 1)?;
            return pose_from_tokens(&values, &context, i + 1);
        }
    }
    Err(Error::format(context, None, "no line starting with \"Tr:\""))
}

/// Loads KITTI ground truth. Without a calibration file the LiDAR and camera
/// frames are taken to coincide.
pub fn load_ground_truth(poses_path: &Path, calib_path: Option<&Path>) -> Result<GroundTruthTrajectory> {
    let camera_poses = load_poses(poses_path)?;
    let calibration = match calib_path {
        Some(p) => load_calibration(p)?,
        None => Pose::identity(),
    };
    Ok(GroundTruthTrajectory {
        camera_poses,
        calibration,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryFormat {
    /// 12 numbers per line, row-major `[R | t]`.
    Kitti,
    /// `index tx ty tz qx qy qz qw`
    Tum,
}

fn num(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v}")
    }
}

pub fn format_trajectory(poses: &[Pose], format: TrajectoryFormat) -> String {
    let mut out = String::new();
    for (i, pose) in poses.iter().enumerate() {
        let fields: Vec<String> = match format {
            TrajectoryFormat::Kitti => pose.to_row_major_3x4().iter().map(|&v| num(v)).collect(),
            TrajectoryFormat::Tum => {
                let t = pose.translation;
                let [w, x, y, z] = pose.rotation.wxyz();
                std::iter::once(i.to_string())
                    .chain([t.x, t.y, t.z, x, y, z, w].iter().map(|&v| num(v)))
                    .collect()
            }
        };
        let _ = writeln!(out, "{}", fields.join(" "));
    }
    out
}

pub fn export_trajectory(poses: &[Pose], path: &Path, format: TrajectoryFormat) -> Result<()> {
    fs::write(path, format_trajectory(poses, format)).map_err(|e| Error::io(path, e))
}

pub fn parse_trajectory(text: &str, format: TrajectoryFormat, context: &str) -> Result<Vec<Pose>> {
    match format {
        TrajectoryFormat::Kitti => parse_kitti_poses(text, context),
        TrajectoryFormat::Tum => {
            let mut poses = Vec::new();
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() || line.starts_with('#') {
                    continue;
                }
                let v = parse_numbers(line, context, i + 1)?;
                if v.len() != 8 {
                    return Err(Error::format(
                        context,
                        Some(i + 1),
                        format!("expected 8 numbers, found {}", v.len()),
                    ));
                }
                poses.push(Pose::new(
                    Rotation::from_wxyz(v[7], v[4], v[5], v[6]),
                    Vec3::new(v[1], v[2], v[3]),
                ));
            }
            Ok(poses)
        }
    }
}

pub fn load_trajectory(path: &Path, format: TrajectoryFormat) -> Result<Vec<Pose>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trajectory(&text, format, &path.display().to_string())
}

/// ASCII PLY of every feature point mapped into the global frame.
pub fn format_map(clouds: &[(FeatureCloud, Pose)]) -> String {
    let count: usize = clouds.iter().map(|(c, _)| c.len()).sum();
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {count}");
    out.push_str("property float x\nproperty float y\nproperty float z\nend_header\n");
    for (cloud, pose) in clouds {
        for p in cloud.edges.iter().chain(&cloud.planars) {
            let g = pose.apply(p);
            let _ = writeln!(out, "{} {} {}", num(g.x), num(g.y), num(g.z));
        }
    }
    out
}

pub fn export_map(clouds: &[(FeatureCloud, Pose)], path: &Path) -> Result<()> {
    fs::write(path, format_map(clouds)).map_err(|e| Error::io(path, e))
}
