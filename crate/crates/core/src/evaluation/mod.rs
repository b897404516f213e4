//! KITTI-style relative trajectory metrics, loop timing statistics and plot data.

pub mod icp;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::dataset::GroundTruthTrajectory;
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::loop_closure::LoopEvent;

/// Subsequence lengths in meters.
pub const SEGMENT_LENGTHS: [f64; 8] = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0];
/// Start frames are taken every this many frames.
pub const START_STRIDE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LengthError {
    pub length: f64,
    pub ate_percent: f64,
    pub are_deg_per_100m: f64,
    pub segments: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimingStats {
    pub count: usize,
    pub mean_ms: Option<f64>,
    pub median_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub ate_percent: f64,
    pub are_deg_per_100m: f64,
    pub segments: usize,
    /// No subsequence of at least 100 m exists; the averages are zero.
    pub insufficient_length: bool,
    pub per_length: Vec<LengthError>,
    pub timing: Option<TimingStats>,
    pub loops_accepted: usize,
    pub loops_rejected: usize,
    /// Distance between the last estimated and last true positions, meters.
    pub final_position_error: Option<f64>,
}

impl EvalReport {
    /// Attaches loop counts and timing from an event log.
    pub fn with_loop_events(mut self, events: &[LoopEvent]) -> Self {
        self.loops_accepted = events.iter().filter(|e| e.accepted).count();
        self.loops_rejected = events.len() - self.loops_accepted;
        self.timing = Some(timing_stats(events));
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// Cumulative path length along `poses`.
pub fn trajectory_distances(poses: &[Pose]) -> Vec<f64> {
    let mut dist = Vec::with_capacity(poses.len());
    let mut total = 0.0;
    for (i, p) in poses.iter().enumerate() {
        if i > 0 {
            total += (p.translation - poses[i - 1].translation).norm();
        }
        dist.push(total);
    }
    dist
}

/// Relative errors of `estimate` against `truth`, both in the same frame.
pub fn relative_errors(estimate: &[Pose], truth: &[Pose]) -> Result<EvalReport> {
    if estimate.len() != truth.len() {
        return Err(Error::LengthMismatch {
            estimate: estimate.len(),
            truth: truth.len(),
        });
    }
    let dist = trajectory_distances(truth);
    let mut sums = [(0.0, 0.0, 0usize); SEGMENT_LENGTHS.len()];
    for first in (0..truth.len()).step_by(START_STRIDE) {
        for (li, &length) in SEGMENT_LENGTHS.iter().enumerate() {
            let target = dist[first] + length;
            let Some(last) = (first..truth.len()).find(|&i| dist[i] > target) else {
                continue;
            };
            let rel_truth = truth[first].between(&truth[last]);
            let rel_est = estimate[first].between(&estimate[last]);
            let error = rel_truth.between(&rel_est);
            let slot = &mut sums[li];
            slot.0 += error.translation.norm() / length;
            slot.1 += error.angle() / length;
            slot.2 += 1;
        }
    }

    let segments: usize = sums.iter().map(|s| s.2).sum();
    let to_ate = |t: f64| t * 100.0;
    let to_are = |r: f64| r * 100.0 * 180.0 / std::f64::consts::PI;
    let per_length = SEGMENT_LENGTHS
        .iter()
        .zip(&sums)
        .filter(|(_, s)| s.2 > 0)
        .map(|(&length, s)| LengthError {
            length,
            ate_percent: to_ate(s.0 / s.2 as f64),
            are_deg_per_100m: to_are(s.1 / s.2 as f64),
            segments: s.2,
        })
        .collect();
    let (t_sum, r_sum) = sums.iter().fold((0.0, 0.0), |acc, s| (acc.0 + s.0, acc.1 + s.1));
    let mean = |v: f64| if segments == 0 { 0.0 } else { v / segments as f64 };
    Ok(EvalReport {
        ate_percent: to_ate(mean(t_sum)),
        are_deg_per_100m: to_are(mean(r_sum)),
        segments,
        insufficient_length: segments == 0,
        per_length,
        timing: None,
        loops_accepted: 0,
        loops_rejected: 0,
        final_position_error: None,
    })
}

/// Relative errors of a LiDAR-frame estimate against camera-frame ground truth.
pub fn kitti_relative_errors(estimate: &[Pose], truth: &GroundTruthTrajectory) -> Result<EvalReport> {
    relative_errors(&truth.lidar_to_camera(estimate), &truth.camera_poses)
}

/// Statistics of loop pose estimation time over accepted events.
pub fn timing_stats(events: &[LoopEvent]) -> TimingStats {
    let mut times: Vec<f64> = events.iter().filter(|e| e.accepted).map(|e| e.millis).collect();
    if times.is_empty() {
        return TimingStats {
            count: 0,
            mean_ms: None,
            median_ms: None,
        };
    }
    times.sort_by(f64::total_cmp);
    let n = times.len();
    let median = if n % 2 == 1 {
        times[n / 2]
    } else {
        0.5 * (times[n / 2 - 1] + times[n / 2])
    };
    TimingStats {
        count: n,
        mean_ms: Some(times.iter().sum::<f64>() / n as f64),
        median_ms: Some(median),
    }
}

pub const PLOT_HEADER: &str = "frame,est_x,est_y,gt_x,gt_y";

pub fn format_plot_data(estimate: &[Pose], truth: &[Pose]) -> String {
    let mut out = String::from(PLOT_HEADER);
    out.push('\n');
    for (i, (e, g)) in estimate.iter().zip(truth).enumerate() {
        let _ = writeln!(
            out,
            "{i},{},{},{},{}",
            e.translation.x, e.translation.y, g.translation.x, g.translation.y
        );
    }
    out
}

/// Writes `frame,est_x,est_y,gt_x,gt_y` rows for the common prefix of both trajectories.
pub fn emit_plot_data(estimate: &[Pose], truth: &[Pose], path: &Path) -> Result<()> {
    fs::write(path, format_plot_data(estimate, truth)).map_err(|e| Error::io(path, e))
}
