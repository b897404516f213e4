//! Frame-to-submap LiDAR odometry.

pub mod registration;
pub mod submap;

pub use registration::{register, Correspondence, RegistrationConfig, RegistrationResult};
pub use submap::{update_submap, voxel_filter, Submap, SubmapConfig};

use crate::dataset::RawScan;
use crate::error::Result;
use crate::features::{extract_features, FeatureCloud, FeatureConfig};
use crate::geometry::{Pose, Rotation};

#[derive(Debug, Clone, PartialEq)]
pub struct OdometryConfig {
    pub features: FeatureConfig,
    pub submap: SubmapConfig,
    pub registration: RegistrationConfig,
    /// When the predicted inter-frame rotation exceeds this (degrees), a
    /// second registration starts from the prediction with the rotation
    /// removed, and the result with more correspondences is kept.
    pub hypothesis_rotation_deg: f64,
}

impl Default for OdometryConfig {
    fn default() -> Self {
        OdometryConfig {
            features: FeatureConfig::default(),
            submap: SubmapConfig::default(),
            registration: RegistrationConfig::default(),
            hypothesis_rotation_deg: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OdometryState {
    /// Sensor-to-world pose of the last processed frame.
    pub current_pose: Pose,
    pub previous_pose: Pose,
    /// Number of frames processed so far.
    pub frame_index: usize,
}

/// Constant-velocity prediction `T_{k-1} * (T_{k-2}^-1 * T_{k-1})`.
pub fn predict_pose(state: &OdometryState) -> Pose {
    if state.frame_index == 0 {
        return Pose::identity();
    }
    let velocity = state.previous_pose.between(&state.current_pose);
    state.current_pose.compose(&velocity)
}

/// Prediction keeping the translational velocity but not the rotational one.
pub fn predict_without_rotation(state: &OdometryState) -> Pose {
    if state.frame_index == 0 {
        return Pose::identity();
    }
    let velocity = state.previous_pose.between(&state.current_pose);
    state.current_pose.compose(&Pose::new(Rotation::identity(), velocity.translation))
}

fn better(a: &RegistrationResult, b: &RegistrationResult) -> bool {
    match a.correspondences.cmp(&b.correspondences) {
        std::cmp::Ordering::Equal => a.mean_residual < b.mean_residual,
        order => order.is_gt(),
    }
}

#[derive(Debug, Clone)]
pub struct FrameOutput {
    pub features: FeatureCloud,
    pub pose: Pose,
    /// Absent for the first frame.
    pub registration: Option<RegistrationResult>,
}

/// Odometry state plus its submap.
#[derive(Debug, Clone)]
pub struct Odometry {
    config: OdometryConfig,
    state: OdometryState,
    submap: Submap,
}

impl Odometry {
    pub fn new(config: OdometryConfig) -> Self {
        Odometry {
            submap: Submap::new(config.submap.clone()),
            state: OdometryState::default(),
            config,
        }
    }

    pub fn state(&self) -> &OdometryState {
        &self.state
    }

    pub fn submap(&self) -> &Submap {
        &self.submap
    }

    pub fn config(&self) -> &OdometryConfig {
        &self.config
    }

    /// Extract, predict, register, update the submap and advance.
    pub fn process_frame(&mut self, scan: &RawScan) -> Result<FrameOutput> {
        let features = extract_features(scan, &self.config.features);
        let predicted = predict_pose(&self.state);
        let (pose, registration) = if self.state.frame_index == 0 {
            (predicted, None)
        } else {
            let mut reg = register(&features, &self.submap, &predicted, &self.config.registration)?;
            let turn = self.state.previous_pose.between(&self.state.current_pose).angle();
            if turn > self.config.hypothesis_rotation_deg.to_radians() {
                let start = predict_without_rotation(&self.state);
                let alt = register(&features, &self.submap, &start, &self.config.registration)?;
                if better(&alt, &reg) {
                    reg = alt;
                }
            }
            (reg.pose, Some(reg))
        };
        self.submap.update(&features, &pose);
        self.state = OdometryState {
            previous_pose: if self.state.frame_index == 0 {
                pose
            } else {
                self.state.current_pose
            },
            current_pose: pose,
            frame_index: self.state.frame_index + 1,
        };
        Ok(FrameOutput {
            features,
            pose,
            registration,
        })
    }
}
