//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use lidar_slam::features::FeatureCloud;
use lidar_slam::geometry::{Pose, Rotation, Twist, Vec3, Vec6};
use lidar_slam::odometry::registration::{associate, total_cost};
use lidar_slam::odometry::{RegistrationConfig, Submap, SubmapConfig};
use lidar_slam::pose_graph::{Edge, EdgeKind, PoseGraph};
use nalgebra::{DMatrix, DVector, Matrix3, Matrix6};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_unit(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Random twist with rotation angle below `max_angle` and translation below `max_translation`.
pub fn random_twist(rng: &mut impl Rng, max_angle: f64, max_translation: f64) -> Twist {
    let omega = random_unit(rng) * rng.random_range(0.0..max_angle);
    let rho = random_unit(rng) * rng.random_range(0.0..max_translation);
    Twist::new(omega, rho)
}

pub fn random_pose(rng: &mut impl Rng, max_translation: f64) -> Pose {
    Pose::exp(&random_twist(rng, PI - 1e-3, max_translation))
}

/// Rotation matrix from axis-angle by Rodrigues' formula, written out directly.
pub fn rodrigues(omega: &Vec3) -> Matrix3<f64> {
    let theta = omega.norm();
    if theta == 0.0 {
        return Matrix3::identity();
    }
    let k = omega / theta;
    let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
    Matrix3::identity() + kx * theta.sin() + kx * kx * (1.0 - theta.cos())
}

pub fn pose_error(a: &Pose, b: &Pose) -> (f64, f64) {
    let d = a.between(b);
    (d.translation.norm(), d.angle())
}

// ---------------------------------------------------------------- corner world

fn grid(a: (f64, f64), b: (f64, f64), step: f64, offset: f64, f: impl Fn(f64, f64) -> Vec3) -> Vec<Vec3> {
    let mut out = Vec::new();
    let mut u = a.0 + offset;
    while u <= a.1 {
        let mut v = b.0 + offset;
        while v <= b.1 {
            out.push(f(u, v));
            v += step;
        }
        u += step;
    }
    out
}

fn segment(from: Vec3, to: Vec3, step: f64, offset: f64) -> Vec<Vec3> {
    let len = (to - from).norm();
    let dir = (to - from) / len;
    let mut out = Vec::new();
    let mut s = offset;
    while s <= len {
        out.push(from + dir * s);
        s += step;
    }
    out
}

/// A room corner in world coordinates: floor and two walls as planar points,
/// and four straight edges as edge points. Primitives stay clear of each
/// other so neighbourhoods never straddle two of them. `offset` shifts the
/// sampling so two samplings do not share points.
pub fn corner_world(offset: f64) -> FeatureCloud {
    let mut planars = Vec::new();
    planars.extend(grid((1.0, 7.0), (1.0, 7.0), 0.25, offset, |x, y| Vec3::new(x, y, 0.0)));
    planars.extend(grid((1.0, 7.0), (1.0, 3.5), 0.25, offset, |y, z| Vec3::new(0.0, y, z)));
    planars.extend(grid((1.0, 7.0), (1.0, 3.5), 0.25, offset, |x, z| Vec3::new(x, 0.0, z)));
    let mut edges = Vec::new();
    edges.extend(segment(Vec3::new(-2.0, -2.0, 0.0), Vec3::new(-2.0, -2.0, 4.0), 0.1, offset));
    edges.extend(segment(Vec3::new(9.0, -2.0, 0.0), Vec3::new(9.0, -2.0, 4.0), 0.1, offset));
    edges.extend(segment(Vec3::new(-2.0, 9.0, 0.0), Vec3::new(-2.0, 9.0, 4.0), 0.1, offset));
    edges.extend(segment(Vec3::new(0.0, 1.0, 5.0), Vec3::new(0.0, 7.0, 5.0), 0.1, offset));
    edges.extend(segment(Vec3::new(1.0, 0.0, 5.5), Vec3::new(7.0, 0.0, 5.5), 0.1, offset));
    FeatureCloud {
        edges,
        planars,
        frame_index: 0,
    }
}

pub fn corner_submap() -> Submap {
    let world = corner_world(0.0);
    Submap::from_clouds(SubmapConfig::default(), [(&world, &Pose::identity())])
}

/// The corner world seen from `sensor_pose`, in the sensor frame.
pub fn corner_scan(sensor_pose: &Pose) -> FeatureCloud {
    corner_world(0.05).transformed(&sensor_pose.inverse())
}

/// Central finite-difference gradient of the registration cost with respect
/// to a left increment, at fixed correspondences.
pub fn registration_fd_gradient(
    features: &FeatureCloud,
    submap: &Submap,
    pose: &Pose,
    cfg: &RegistrationConfig,
    h: f64,
) -> (Vec6, Vec6) {
    let corrs = associate(features, submap, pose, cfg);
    let eq = lidar_slam::odometry::registration::linearize(&corrs, pose, cfg.huber_scale);
    let mut fd = Vec6::zeros();
    for i in 0..6 {
        let mut d = Vec6::zeros();
        d[i] = h;
        let plus = Pose::exp(&Twist(d)).compose(pose);
        let minus = Pose::exp(&Twist(-d)).compose(pose);
        fd[i] = (total_cost(&corrs, &plus, cfg.huber_scale) - total_cost(&corrs, &minus, cfg.huber_scale)) / (2.0 * h);
    }
    (eq.gradient, fd)
}

// ---------------------------------------------------------------- pose graphs

/// Graph with fixed node poses and plain edges, built without the odometry helper.
pub fn build_graph(nodes: &[Pose], edges: &[(usize, usize, Pose, Matrix6<f64>)]) -> PoseGraph {
    let mut g = PoseGraph::default();
    for n in nodes {
        g.add_node(*n);
    }
    for &(from, to, measurement, information) in edges {
        g.add_edge(Edge {
            from,
            to,
            measurement,
            information,
            kind: EdgeKind::Odometry,
            robust: false,
        })
        .expect("valid edge");
    }
    g
}

/// Weighted linear least squares over node positions when every rotation is
/// the identity: minimise sum (x_j - x_i - z_ij)^T W (x_j - x_i - z_ij) with
/// node 0 held at `x0`. Solved through the dense normal equations.
pub fn translation_gls(n: usize, x0: Vec3, edges: &[(usize, usize, Vec3, Matrix3<f64>)]) -> Vec<Vec3> {
    let m = 3 * (n - 1);
    let mut a = DMatrix::<f64>::zeros(m, m);
    let mut b = DVector::<f64>::zeros(m);
    // unknowns are x_1..x_{n-1}; x_0 is a constant
    for &(i, j, z, w) in edges {
        // residual r = x_j - x_i - z = J x + c
        let mut c = -z;
        if i == 0 {
            c -= x0;
        }
        if j == 0 {
            c += x0;
        }
        let blocks: Vec<(usize, f64)> = [(i, -1.0), (j, 1.0)].into_iter().filter(|&(k, _)| k > 0).collect();
        for &(p, sp) in &blocks {
            for &(q, sq) in &blocks {
                let block = w * (sp * sq);
                let mut view = a.view_mut((3 * (p - 1), 3 * (q - 1)), (3, 3));
                view += block;
            }
            let rhs = w * c * (-sp);
            let mut view = b.rows_mut(3 * (p - 1), 3);
            view += rhs;
        }
    }
    let x = a.lu().solve(&b).expect("well-posed graph");
    let mut out = vec![x0];
    for k in 1..n {
        out.push(Vec3::new(x[3 * (k - 1)], x[3 * (k - 1) + 1], x[3 * (k - 1) + 2]));
    }
    out
}

/// Circle of `n` poses with radius `r`, heading along the tangent.
pub fn circle_poses(n: usize, r: f64) -> Vec<Pose> {
    (0..n)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / n as f64;
            Pose::new(Rotation::rotz(a + PI / 2.0), Vec3::new(r * a.cos(), r * a.sin(), 0.0))
        })
        .collect()
}

// ---------------------------------------------------------------- KITTI metric

/// Straightforward restatement of the KITTI odometry devkit metric:
/// returns `(mean t_err / len * 100, mean r_err / len * 100 * 180/pi, count)`.
pub fn devkit_errors(est: &[Pose], gt: &[Pose]) -> (f64, f64, usize) {
    let lengths = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0];
    let mut dist = vec![0.0];
    for i in 1..gt.len() {
        let step = (gt[i].translation - gt[i - 1].translation).norm();
        dist.push(dist[i - 1] + step);
    }
    let mut t_sum = 0.0;
    let mut r_sum = 0.0;
    let mut count = 0;
    for first in (0..gt.len()).step_by(10) {
        for &len in &lengths {
            let Some(last) = (first..gt.len()).find(|&i| dist[i] > dist[first] + len) else {
                continue;
            };
            let dg = gt[first].inverse().matrix() * gt[last].matrix();
            let de = est[first].inverse().matrix() * est[last].matrix();
            let err = dg.try_inverse().expect("rigid") * de;
            let t = Vec3::new(err[(0, 3)], err[(1, 3)], err[(2, 3)]).norm();
            let trace = err[(0, 0)] + err[(1, 1)] + err[(2, 2)];
            let r = (0.5 * (trace - 1.0)).clamp(-1.0, 1.0).acos();
            t_sum += t / len;
            r_sum += r / len;
            count += 1;
        }
    }
    if count == 0 {
        return (0.0, 0.0, 0);
    }
    let n = count as f64;
    (t_sum / n * 100.0, r_sum / n * 100.0 * 180.0 / PI, count)
}

/// Random smooth planar drive with `n` poses of about `step` meters each.
pub fn random_drive(rng: &mut impl Rng, n: usize, step: f64) -> Vec<Pose> {
    let mut pose = Pose::identity();
    let mut out = vec![pose];
    let mut yaw_rate: f64 = 0.0;
    for _ in 1..n {
        yaw_rate = (yaw_rate + rng.random_range(-0.01..0.01)).clamp(-0.05, 0.05);
        let delta = Pose::new(
            Rotation::exp(&Vec3::new(rng.random_range(-1e-3..1e-3), rng.random_range(-1e-3..1e-3), yaw_rate)),
            Vec3::new(step * rng.random_range(0.9..1.1), rng.random_range(-0.02..0.02), rng.random_range(-0.01..0.01)),
        );
        pose = pose.compose(&delta);
        out.push(pose);
    }
    out
}

/// `truth` with a small random error injected into every increment.
pub fn perturb_drive(rng: &mut impl Rng, truth: &[Pose], sigma: f64) -> Vec<Pose> {
    let mut out = vec![truth[0]];
    for w in truth.windows(2) {
        let inc = w[0].between(&w[1]);
        let noise = Pose::exp(&random_twist(rng, sigma * 0.1, sigma));
        let last = *out.last().expect("non-empty");
        out.push(last.compose(&inc).compose(&noise));
    }
    out
}
