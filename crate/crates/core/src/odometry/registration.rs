//! Scan-to-submap registration with point-to-line and point-to-plane residuals,
//! solved by Gauss-Newton with Huber reweighting and step halving.
//!
//! Poses are updated on the left, `P <- exp(delta) * P`. For a world point
//! `q = P x` this gives `dq/d(omega, rho) = [-hat(q) | I]`. Each iteration
//! linearizes in a world-aligned frame centred on the current sensor position.

use nalgebra::{Matrix3, Matrix6, SMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::features::FeatureCloud;
use crate::geometry::{hat, Pose, Twist, Vec3, Vec6};
use crate::odometry::submap::Submap;

type Jac3 = SMatrix<f64, 3, 6>;

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationConfig {
    pub max_iterations: usize,
    /// Neighbours used to fit each line or plane.
    pub neighbors: usize,
    /// Farthest allowed neighbour for a correspondence, meters.
    pub max_correspondence_distance: f64,
    /// A line fit needs `largest eigenvalue >= ratio * second`.
    pub line_eigen_ratio: f64,
    /// Every plane neighbour must lie within this distance of the fitted plane.
    pub plane_tolerance: f64,
    pub huber_scale: f64,
    /// Stop when the applied step norm falls below this.
    pub convergence_step: f64,
    pub min_submap_edges: usize,
    pub min_submap_planars: usize,
    /// Normal-equation eigenvalues below `ratio * max` are treated as unobservable.
    pub degeneracy_ratio: f64,
    pub max_step_halvings: usize,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            max_iterations: 20,
            neighbors: 5,
            max_correspondence_distance: 1.0,
            line_eigen_ratio: 3.0,
            plane_tolerance: 0.2,
            huber_scale: 0.3,
            convergence_step: 1e-4,
            min_submap_edges: 10,
            min_submap_planars: 50,
            degeneracy_ratio: 1e-6,
            max_step_halvings: 10,
        }
    }
}

/// A feature point (sensor frame) paired with the map primitive it is pulled onto.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Correspondence {
    Line {
        point: Vec3,
        centroid: Vec3,
        direction: Vec3,
    },
    Plane {
        point: Vec3,
        normal: Vec3,
        offset: f64,
    },
}

impl Correspondence {
    /// The same correspondence with the map primitive expressed in a frame
    /// whose origin sits at `origin`.
    pub fn recentered(&self, origin: &Vec3) -> Self {
        match *self {
            Correspondence::Line {
                point,
                centroid,
                direction,
            } => Correspondence::Line {
                point,
                centroid: centroid - origin,
                direction,
            },
            Correspondence::Plane { point, normal, offset } => Correspondence::Plane {
                point,
                normal,
                offset: offset + normal.dot(origin),
            },
        }
    }

    /// Distance from the mapped point to the primitive.
    pub fn distance(&self, pose: &Pose) -> f64 {
        match *self {
            Correspondence::Line {
                point,
                centroid,
                direction,
            } => {
                let d = pose.apply(&point) - centroid;
                (d - direction * direction.dot(&d)).norm()
            }
            Correspondence::Plane { point, normal, offset } => {
                (normal.dot(&pose.apply(&point)) + offset).abs()
            }
        }
    }
}

fn huber_cost(r: f64, k: f64) -> f64 {
    let a = r.abs();
    if a <= k {
        0.5 * a * a
    } else {
        k * (a - 0.5 * k)
    }
}

fn huber_weight(r: f64, k: f64) -> f64 {
    let a = r.abs();
    if a <= k {
        1.0
    } else {
        k / a
    }
}

/// Robust total cost of a fixed correspondence set at `pose`.
pub fn total_cost(corrs: &[Correspondence], pose: &Pose, huber_scale: f64) -> f64 {
    corrs.iter().map(|c| huber_cost(c.distance(pose), huber_scale)).sum()
}

/// Gauss-Newton system for a fixed correspondence set.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    pub hessian: Matrix6<f64>,
    /// Gradient of [`total_cost`] with respect to a left increment.
    pub gradient: Vec6,
    pub cost: f64,
}

pub fn linearize(corrs: &[Correspondence], pose: &Pose, huber_scale: f64) -> NormalEquations {
    let mut hessian = Matrix6::zeros();
    let mut gradient = Vec6::zeros();
    let mut cost = 0.0;
    // summed in correspondence order so the result is reproducible
    for c in corrs {
        match *c {
            Correspondence::Line {
                point,
                centroid,
                direction,
            } => {
                let q = pose.apply(&point);
                let proj = Matrix3::identity() - direction * direction.transpose();
                let e = proj * (q - centroid);
                let r = e.norm();
                let w = huber_weight(r, huber_scale);
                let mut dq = Jac3::zeros();
                dq.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-hat(&q)));
                dq.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
                let j = proj * dq;
                hessian += j.transpose() * j * w;
                gradient += j.transpose() * e * w;
                cost += huber_cost(r, huber_scale);
            }
            Correspondence::Plane { point, normal, offset } => {
                let q = pose.apply(&point);
                let r = normal.dot(&q) + offset;
                let w = huber_weight(r, huber_scale);
                let rot = q.cross(&normal);
                let j = Vec6::new(rot.x, rot.y, rot.z, normal.x, normal.y, normal.z);
                hessian += j * j.transpose() * w;
                gradient += j * (r * w);
                cost += huber_cost(r, huber_scale);
            }
        }
    }
    NormalEquations {
        hessian,
        gradient,
        cost,
    }
}

fn sorted_eigen(m: &Matrix3<f64>) -> ([f64; 3], [Vec3; 3]) {
    let eig = SymmetricEigen::new(*m);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    (
        idx.map(|i| eig.eigenvalues[i]),
        idx.map(|i| eig.eigenvectors.column(i).into_owned()),
    )
}

fn neighbourhood(points: &[Vec3], idx: &[usize]) -> (Vec3, Matrix3<f64>) {
    let n = idx.len() as f64;
    let centroid = idx.iter().map(|&i| points[i]).sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    for &i in idx {
        let d = points[i] - centroid;
        cov += d * d.transpose();
    }
    (centroid, cov / n)
}

/// Pairs every feature point, mapped by `pose`, with a line or plane fitted
/// to its nearest submap neighbours. Rejected fits are skipped.
pub fn associate(
    features: &FeatureCloud,
    submap: &Submap,
    pose: &Pose,
    cfg: &RegistrationConfig,
) -> Vec<Correspondence> {
    let k = cfg.neighbors;
    let max_d2 = cfg.max_correspondence_distance * cfg.max_correspondence_distance;
    let mut out = Vec::with_capacity(features.len());

    let tree = submap.edge_index();
    for p in &features.edges {
        let nn = tree.nearest(&pose.apply(p), k);
        if nn.len() < k || nn[k - 1].dist_sq > max_d2 {
            continue;
        }
        let idx: Vec<usize> = nn.iter().map(|n| n.index).collect();
        let (centroid, cov) = neighbourhood(tree.points(), &idx);
        let (vals, vecs) = sorted_eigen(&cov);
        if vals[0] < cfg.line_eigen_ratio * vals[1] || vals[0] <= 0.0 {
            continue;
        }
        out.push(Correspondence::Line {
            point: *p,
            centroid,
            direction: vecs[0].normalize(),
        });
    }

    let tree = submap.planar_index();
    for p in &features.planars {
        let nn = tree.nearest(&pose.apply(p), k);
        if nn.len() < k || nn[k - 1].dist_sq > max_d2 {
            continue;
        }
        let idx: Vec<usize> = nn.iter().map(|n| n.index).collect();
        let (centroid, cov) = neighbourhood(tree.points(), &idx);
        let (vals, vecs) = sorted_eigen(&cov);
        // the smallest-variance direction is the least-squares plane normal;
        // a line-like cluster leaves it undefined
        if vals[1] <= 1e-12 {
            continue;
        }
        let normal = vecs[2].normalize();
        let offset = -normal.dot(&centroid);
        if idx
            .iter()
            .any(|&i| (normal.dot(&tree.points()[i]) + offset).abs() > cfg.plane_tolerance)
        {
            continue;
        }
        out.push(Correspondence::Plane {
            point: *p,
            normal,
            offset,
        });
    }
    out
}

#[derive(Debug, Clone)]
pub struct RegistrationResult {
    pub pose: Pose,
    /// Robust cost at `pose` with the final correspondences.
    pub final_cost: f64,
    /// Mean point-to-primitive distance at `pose`, meters.
    pub mean_residual: f64,
    pub correspondences: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the submap is too small to register against, or when the
    /// normal equations had unobservable directions.
    pub degenerate: bool,
    /// Eigenvalues of the last normal-equation matrix, ascending.
    pub spectrum: [f64; 6],
    /// Unit directions (in `(omega, rho)` space) dropped from the last solve.
    pub degenerate_directions: Vec<Vec6>,
    /// Per-iteration `(cost before step, cost after accepted step)` at fixed correspondences.
    pub cost_history: Vec<(f64, f64)>,
}

impl RegistrationResult {
    fn unchanged(initial: &Pose) -> Self {
        RegistrationResult {
            pose: *initial,
            final_cost: 0.0,
            mean_residual: f64::INFINITY,
            correspondences: 0,
            iterations: 0,
            converged: false,
            degenerate: true,
            spectrum: [0.0; 6],
            degenerate_directions: Vec::new(),
            cost_history: Vec::new(),
        }
    }
}

// Solves H x = -g in the well-conditioned eigen-subspace of H.
fn solve_projected(eq: &NormalEquations, ratio: f64) -> Result<(Vec6, [f64; 6], Vec<Vec6>)> {
    if !eq.hessian.iter().chain(eq.gradient.iter()).all(|v| v.is_finite()) {
        return Err(Error::IllConditioned);
    }
    let eig = SymmetricEigen::new(eq.hessian);
    let max = eig.eigenvalues.max();
    let mut spectrum: [f64; 6] = eig.eigenvalues.as_slice().try_into().expect("6 eigenvalues");
    spectrum.sort_by(f64::total_cmp);
    let mut step = Vec6::zeros();
    let mut dropped = Vec::new();
    for i in 0..6 {
        let v = eig.eigenvectors.column(i).into_owned();
        let lambda = eig.eigenvalues[i];
        if max <= 0.0 || lambda <= ratio * max {
            dropped.push(v);
            continue;
        }
        step -= v * (v.dot(&eq.gradient) / lambda);
    }
    if !step.iter().all(|v| v.is_finite()) {
        return Err(Error::IllConditioned);
    }
    Ok((step, spectrum, dropped))
}

/// Estimates the pose placing `features` onto `submap`, starting from `initial`.
///
/// Fails with [`Error::IllConditioned`] when the normal equations turn
/// non-finite; the caller keeps its previous pose in that case.
pub fn register(
    features: &FeatureCloud,
    submap: &Submap,
    initial: &Pose,
    cfg: &RegistrationConfig,
) -> Result<RegistrationResult> {
    if submap.edge_points().len() < cfg.min_submap_edges
        || submap.planar_points().len() < cfg.min_submap_planars
    {
        return Ok(RegistrationResult::unchanged(initial));
    }

    let mut pose = *initial;
    let mut result = RegistrationResult::unchanged(initial);
    result.degenerate = false;

    for _ in 0..cfg.max_iterations {
        let corrs = associate(features, submap, &pose, cfg);
        if corrs.len() < 6 {
            result.degenerate = true;
            break;
        }
        // linearize about the sensor position so the conditioning does not
        // depend on the distance from the world origin
        let origin = pose.translation;
        let shift = Pose::from_translation(origin.x, origin.y, origin.z);
        let local_corrs: Vec<Correspondence> = corrs.iter().map(|c| c.recentered(&origin)).collect();
        let local = Pose::new(pose.rotation, Vec3::zeros());
        let eq = linearize(&local_corrs, &local, cfg.huber_scale);
        let (step, spectrum, dropped) = solve_projected(&eq, cfg.degeneracy_ratio)?;
        result.spectrum = spectrum;
        result.degenerate = !dropped.is_empty();
        result.degenerate_directions = dropped;

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=cfg.max_step_halvings {
            let candidate = Pose::exp(&Twist(step * scale)).compose(&local);
            let cost = total_cost(&local_corrs, &candidate, cfg.huber_scale);
            if cost <= eq.cost {
                accepted = Some((shift.compose(&candidate), cost));
                break;
            }
            scale *= 0.5;
        }
        let Some((candidate, cost)) = accepted else {
            // no descent along the step: already at the minimum for these correspondences
            result.converged = true;
            break;
        };
        result.cost_history.push((eq.cost, cost));
        result.iterations += 1;
        pose = candidate;
        if (step * scale).norm() < cfg.convergence_step {
            result.converged = true;
            break;
        }
    }

    let corrs = associate(features, submap, &pose, cfg);
    result.pose = pose;
    result.correspondences = corrs.len();
    result.final_cost = total_cost(&corrs, &pose, cfg.huber_scale);
    result.mean_residual = if corrs.is_empty() {
        f64::INFINITY
    } else {
        corrs.iter().map(|c| c.distance(&pose)).sum::<f64>() / corrs.len() as f64
    };
    Ok(result)
}
