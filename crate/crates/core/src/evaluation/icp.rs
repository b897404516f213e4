//! Point-to-point ICP on raw points, used as a timing and accuracy baseline
//! for feature-based loop pose estimation.

use nalgebra::Matrix3;

use crate::geometry::{Pose, Rotation, Vec3};
use crate::kdtree::KdTree;

#[derive(Debug, Clone, PartialEq)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Pairs farther apart than this are ignored, meters.
    pub max_correspondence_distance: f64,
    /// Stop when the update translation and rotation both fall below this.
    pub tolerance: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        IcpConfig {
            max_iterations: 50,
            max_correspondence_distance: 1.0,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpResult {
    pub pose: Pose,
    /// Root mean square distance of the final matched pairs.
    pub rmse: f64,
    pub matches: usize,
    pub iterations: usize,
    pub converged: bool,
}

/// Rigid transform minimizing `sum |R s_i + t - d_i|^2` (Kabsch with reflection guard).
pub fn best_fit_transform(source: &[Vec3], target: &[Vec3]) -> Pose {
    let n = source.len().min(target.len());
    if n == 0 {
        return Pose::identity();
    }
    let cs = source[..n].iter().sum::<Vec3>() / n as f64;
    let ct = target[..n].iter().sum::<Vec3>() / n as f64;
    let mut h = Matrix3::zeros();
    for (s, t) in source[..n].iter().zip(&target[..n]) {
        h += (s - cs) * (t - ct).transpose();
    }
    let svd = h.svd(true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Pose::from_translation(ct.x - cs.x, ct.y - cs.y, ct.z - cs.z);
    };
    let v = v_t.transpose();
    let mut d = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = v * d * u.transpose();
    let rotation = Rotation::from_matrix(&r);
    Pose::new(rotation, ct - rotation.apply(&cs))
}

/// Aligns `source` (local frame) to `target` (global frame) starting at `initial`.
/// Builds its own index over `target`.
pub fn icp_point_to_point(source: &[Vec3], target: &[Vec3], initial: &Pose, cfg: &IcpConfig) -> IcpResult {
    let tree = KdTree::new(target.to_vec());
    let max_sq = cfg.max_correspondence_distance * cfg.max_correspondence_distance;
    let mut pose = *initial;
    let mut result = IcpResult {
        pose,
        rmse: f64::INFINITY,
        matches: 0,
        iterations: 0,
        converged: false,
    };
    let mut src = Vec::with_capacity(source.len());
    let mut dst = Vec::with_capacity(source.len());
    for _ in 0..cfg.max_iterations {
        src.clear();
        dst.clear();
        for p in source {
            let q = pose.apply(p);
            if let Some(nn) = tree.nearest_one(&q) {
                if nn.dist_sq <= max_sq {
                    src.push(q);
                    dst.push(target[nn.index]);
                }
            }
        }
        if src.len() < 3 {
            break;
        }
        let delta = best_fit_transform(&src, &dst);
        pose = delta.compose(&pose);
        result.iterations += 1;
        if delta.translation.norm() < cfg.tolerance && delta.angle() < cfg.tolerance {
            result.converged = true;
            break;
        }
    }
    let mut sum = 0.0;
    let mut matches = 0;
    for p in source {
        let q = pose.apply(p);
        if let Some(nn) = tree.nearest_one(&q) {
            if nn.dist_sq <= max_sq {
                sum += nn.dist_sq;
                matches += 1;
            }
        }
    }
    result.pose = pose;
    result.matches = matches;
    result.rmse = if matches == 0 { f64::INFINITY } else { (sum / matches as f64).sqrt() };
    result
}
