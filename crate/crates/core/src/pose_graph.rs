//! Keyframe pose graph with odometry and loop edges, optimized by
//! Levenberg-Marquardt over SE(3).
//!
//! Edge residual: `r = log(inverse(Z) * inverse(X_from) * X_to)`.
//! Node updates are applied on the right, `X <- X * exp(delta)`, so the normal
//! equations do not depend on the global frame of the graph.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix6};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};

use crate::error::{Error, Result};
use crate::geometry::{se3_right_jacobian_inv, Pose, Twist, Vec6};
use crate::loop_closure::LoopConstraint;

/// `(row, column, value)` entry of a sparse matrix under assembly.
type Triplet = (usize, usize, f64);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    Odometry,
    Loop,
}

/// Diagonal information for the `(omega, rho)` residual from standard deviations.
pub fn diagonal_information(rotation_sigma: f64, translation_sigma: f64) -> Matrix6<f64> {
    let r = 1.0 / (rotation_sigma * rotation_sigma);
    let t = 1.0 / (translation_sigma * translation_sigma);
    Matrix6::from_diagonal(&Vec6::new(r, r, r, t, t, t))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphWeights {
    pub odometry: Matrix6<f64>,
    pub loop_closure: Matrix6<f64>,
    /// Huber threshold on the whitened residual norm of robust edges.
    pub huber_scale: f64,
}

impl Default for GraphWeights {
    fn default() -> Self {
        GraphWeights {
            odometry: diagonal_information(0.01, 0.05),
            loop_closure: diagonal_information(0.05, 0.2),
            huber_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    /// Measured `inverse(X_from) * X_to`.
    pub measurement: Pose,
    pub information: Matrix6<f64>,
    pub kind: EdgeKind,
    pub robust: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizationReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmConfig {
    pub initial_lambda: f64,
    pub max_lambda: f64,
    pub relative_decrease: f64,
    pub gradient_tolerance: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            initial_lambda: 1e-4,
            max_lambda: 1e10,
            relative_decrease: 1e-6,
            gradient_tolerance: 1e-8,
        }
    }
}

fn check_information(info: &Matrix6<f64>) -> Result<()> {
    let scale = info.abs().max();
    let symmetric = (info - info.transpose()).abs().max() <= 1e-9 * scale.max(1.0);
    if !info.iter().all(|v| v.is_finite()) || !symmetric || info.cholesky().is_none() {
        return Err(Error::InvalidInformation);
    }
    Ok(())
}

/// Huber loss on a squared whitened norm `s`, and its derivative.
fn robust(s: f64, delta: f64) -> (f64, f64) {
    if s <= delta * delta {
        (s, 1.0)
    } else {
        let root = s.sqrt();
        (2.0 * delta * root - delta * delta, delta / root)
    }
}

/// Residual of `edge` at the given endpoint poses.
pub fn edge_residual(edge: &Edge, from: &Pose, to: &Pose) -> Result<Vec6> {
    Ok(edge.measurement.inverse().compose(&from.between(to)).log()?.0)
}

/// Residual and its Jacobians with respect to right perturbations of the
/// `from` and `to` nodes.
pub fn edge_jacobians(edge: &Edge, from: &Pose, to: &Pose) -> Result<(Vec6, Matrix6<f64>, Matrix6<f64>)> {
    let y = from.between(to);
    let r = edge.measurement.inverse().compose(&y).log()?;
    let jr_inv = se3_right_jacobian_inv(&r);
    let j_to = jr_inv;
    let j_from = -jr_inv * y.inverse().adjoint();
    Ok((r.0, j_from, j_to))
}

#[derive(Debug, Clone, Default)]
pub struct PoseGraph {
    nodes: Vec<Pose>,
    edges: Vec<Edge>,
    weights: GraphWeights,
    last_odometry: Option<Pose>,
}

impl PoseGraph {
    pub fn new(weights: GraphWeights) -> Self {
        PoseGraph {
            nodes: Vec::new(),
            edges: Vec::new(),
            weights,
            last_odometry: None,
        }
    }

    pub fn nodes(&self) -> &[Pose] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> Option<&Pose> {
        self.nodes.get(i)
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn weights(&self) -> &GraphWeights {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Appends a node without any edge and returns its index.
    pub fn add_node(&mut self, pose: Pose) -> usize {
        self.nodes.push(pose);
        self.last_odometry = Some(pose);
        self.nodes.len() - 1
    }

    /// Inserts node `k` and, for `k > 0`, an odometry edge from `k - 1`
    /// measuring the increment between the previous and current odometry poses.
    ///
    /// The new node starts at the previous node's estimate composed with that
    /// increment, so corrections from earlier optimizations carry forward.
    pub fn add_odometry_node(&mut self, k: usize, pose: Pose) -> Result<()> {
        if k != self.nodes.len() {
            return Err(Error::NonSequentialNode {
                expected: self.nodes.len(),
                got: k,
            });
        }
        match (self.nodes.last().copied(), self.last_odometry) {
            (Some(prev_estimate), Some(prev_odometry)) => {
                let measurement = prev_odometry.between(&pose);
                self.nodes.push(prev_estimate.compose(&measurement));
                self.edges.push(Edge {
                    from: k - 1,
                    to: k,
                    measurement,
                    information: self.weights.odometry,
                    kind: EdgeKind::Odometry,
                    robust: false,
                });
            }
            _ => self.nodes.push(pose),
        }
        self.last_odometry = Some(pose);
        Ok(())
    }

    /// Adds a robust loop edge from the loop keyframe to the current one.
    pub fn add_loop_edge(&mut self, c: &LoopConstraint) -> Result<()> {
        if !c.accepted {
            return Err(Error::UnacceptedConstraint {
                from: c.from_keyframe,
                to: c.to_keyframe,
            });
        }
        self.add_edge(Edge {
            from: c.to_keyframe,
            to: c.from_keyframe,
            measurement: c.relative_pose,
            information: self.weights.loop_closure,
            kind: EdgeKind::Loop,
            robust: true,
        })
    }

    /// Adds an arbitrary edge after validating endpoints and information.
    pub fn add_edge(&mut self, edge: Edge) -> Result<()> {
        for n in [edge.from, edge.to] {
            if n >= self.nodes.len() {
                return Err(Error::MissingNode(n));
            }
        }
        check_information(&edge.information)?;
        self.edges.push(edge);
        Ok(())
    }

    fn edge_cost(&self, edge: &Edge, nodes: &[Pose]) -> Result<f64> {
        let r = edge_residual(edge, &nodes[edge.from], &nodes[edge.to])?;
        let s = r.dot(&(edge.information * r));
        Ok(if edge.robust { robust(s, self.weights.huber_scale).0 } else { s })
    }

    fn cost_at(&self, nodes: &[Pose]) -> Result<f64> {
        self.edges.iter().map(|e| self.edge_cost(e, nodes)).sum()
    }

    /// Total (robustified) squared whitened residual.
    pub fn cost(&self) -> Result<f64> {
        self.cost_at(&self.nodes)
    }

    /// Per-edge residual vectors at the current estimates.
    pub fn residuals(&self) -> Result<Vec<Vec6>> {
        self.edges
            .iter()
            .map(|e| edge_residual(e, &self.nodes[e.from], &self.nodes[e.to]))
            .collect()
    }

    // Gauss-Newton system over nodes 1..n as triplets, plus the gradient.
    fn linear_system(&self) -> Result<(Vec<Triplet>, DVector<f64>)> {
        let dim = 6 * (self.nodes.len() - 1);
        let mut triplets = Vec::with_capacity(self.edges.len() * 4 * 36);
        let mut gradient = DVector::zeros(dim);
        for edge in &self.edges {
            let (r, j_from, j_to) = edge_jacobians(edge, &self.nodes[edge.from], &self.nodes[edge.to])?;
            let weight = if edge.robust {
                robust(r.dot(&(edge.information * r)), self.weights.huber_scale).1
            } else {
                1.0
            };
            let omega = edge.information * weight;
            let blocks = [(edge.from, j_from), (edge.to, j_to)];
            for (a, ja) in &blocks {
                if *a == 0 {
                    continue;
                }
                let ga = ja.transpose() * omega * r;
                let offset_a = 6 * (a - 1);
                for i in 0..6 {
                    gradient[offset_a + i] += ga[i];
                }
                for (b, jb) in &blocks {
                    if *b == 0 {
                        continue;
                    }
                    let h = ja.transpose() * omega * jb;
                    let offset_b = 6 * (b - 1);
                    for i in 0..6 {
                        for j in 0..6 {
                            triplets.push((offset_a + i, offset_b + j, h[(i, j)]));
                        }
                    }
                }
            }
        }
        Ok((triplets, gradient))
    }

    fn retract(&self, step: &DVector<f64>) -> Vec<Pose> {
        let mut nodes = self.nodes.clone();
        for (k, node) in nodes.iter_mut().enumerate().skip(1) {
            let delta = Vec6::from_iterator(step.rows(6 * (k - 1), 6).iter().copied());
            *node = node.compose(&Pose::exp(&Twist(delta)));
        }
        nodes
    }

    /// Runs Levenberg-Marquardt with node 0 held fixed, using default settings.
    pub fn optimize(&mut self, max_iterations: usize) -> Result<OptimizationReport> {
        self.optimize_with(max_iterations, &LmConfig::default())
    }

    pub fn optimize_with(&mut self, max_iterations: usize, lm: &LmConfig) -> Result<OptimizationReport> {
        let initial_cost = self.cost()?;
        let mut report = OptimizationReport {
            initial_cost,
            final_cost: initial_cost,
            iterations: 0,
            converged: false,
        };
        if self.nodes.len() < 2 || self.edges.is_empty() || initial_cost == 0.0 {
            report.converged = true;
            return Ok(report);
        }
        let dim = 6 * (self.nodes.len() - 1);
        let mut cost = initial_cost;
        let mut lambda = lm.initial_lambda;

        'outer: for _ in 0..max_iterations {
            let (triplets, gradient) = self.linear_system()?;
            if gradient.norm() < lm.gradient_tolerance {
                report.converged = true;
                break;
            }
            let mut diag = vec![0.0; dim];
            for &(i, j, v) in &triplets {
                if i == j {
                    diag[i] += v;
                }
            }
            loop {
                let mut coo = CooMatrix::new(dim, dim);
                for &(i, j, v) in &triplets {
                    coo.push(i, j, v);
                }
                for (i, d) in diag.iter().enumerate() {
                    coo.push(i, i, lambda * d.max(1e-9));
                }
                let csc = CscMatrix::from(&coo);
                let step = CscCholesky::factor(&csc).ok().map(|chol| {
                    let rhs = DMatrix::from_column_slice(dim, 1, (-&gradient).as_slice());
                    DVector::from_column_slice(chol.solve(&rhs).as_slice())
                });
                if let Some(step) = step.filter(|s| s.iter().all(|v| v.is_finite())) {
                    let candidate = self.retract(&step);
                    let new_cost = self.cost_at(&candidate).unwrap_or(f64::INFINITY);
                    if new_cost < cost {
                        let relative = (cost - new_cost) / cost;
                        self.nodes = candidate;
                        cost = new_cost;
                        report.iterations += 1;
                        lambda = (lambda * 0.1).max(1e-12);
                        if relative < lm.relative_decrease {
                            report.converged = true;
                            break 'outer;
                        }
                        continue 'outer;
                    }
                    // predicted decrease negligible: already at the minimum to working precision
                    let predicted = -gradient.dot(&step);
                    if predicted <= lm.relative_decrease * cost {
                        report.converged = true;
                        break 'outer;
                    }
                }
                lambda *= 10.0;
                if lambda > lm.max_lambda {
                    break 'outer;
                }
            }
        }
        report.final_cost = cost;
        Ok(report)
    }

    /// g2o text form: `VERTEX_SE3:QUAT` and `EDGE_SE3:QUAT` lines, information
    /// in g2o's translation-then-rotation order.
    pub fn to_g2o(&self) -> String {
        let mut out = String::new();
        let pose_fields = |p: &Pose| {
            let t = p.translation;
            let [w, x, y, z] = p.rotation.wxyz();
            format!("{} {} {} {x} {y} {z} {w}", t.x, t.y, t.z)
        };
        for (i, p) in self.nodes.iter().enumerate() {
            let _ = writeln!(out, "VERTEX_SE3:QUAT {i} {}", pose_fields(p));
        }
        if !self.nodes.is_empty() {
            let _ = writeln!(out, "FIX 0");
        }
        // g2o index -> our index
        let perm = [3, 4, 5, 0, 1, 2];
        for e in &self.edges {
            let mut line = format!("EDGE_SE3:QUAT {} {} {}", e.from, e.to, pose_fields(&e.measurement));
            for i in 0..6 {
                for j in i..6 {
                    let _ = write!(line, " {}", e.information[(perm[i], perm[j])]);
                }
            }
            let _ = writeln!(out, "{line}");
        }
        out
    }

    pub fn write_g2o(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_g2o()).map_err(|e| Error::io(path, e))
    }
}
