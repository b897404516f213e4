//! LiDAR SLAM: feature odometry, Scan Context loop detection with an adaptive
//! distance gate, feature-based loop pose refinement and SE(3) pose graph
//! optimization, plus KITTI-style evaluation and a synthetic world generator.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod geometry;
pub mod kdtree;
pub mod loop_closure;
pub mod odometry;
pub mod pipeline;
pub mod pose_graph;
pub mod scan_context;

pub use dataset::{GroundTruthTrajectory, LidarPoint, RawScan};
pub use error::{Error, Result};
pub use evaluation::EvalReport;
pub use features::{FeatureCloud, FeatureConfig};
pub use geometry::{Pose, Rotation, Twist, Vec3, Vec6};
pub use loop_closure::{AdaptiveGateConfig, Gate, LoopConstraint, LoopEvent};
pub use odometry::{Odometry, OdometryConfig, OdometryState, Submap};
pub use pipeline::{PipelineConfig, RunResult, WorldSpec};
pub use pose_graph::{OptimizationReport, PoseGraph};
pub use scan_context::{CandidateMatch, ScanContextDescriptor};
