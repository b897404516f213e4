//! Scan Context place descriptors built from feature clouds, and two-stage
//! loop candidate retrieval (ring-key shortlist, then column-shift distance).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::FeatureCloud;

/// Bin value for bins that received no points.
pub const EMPTY_BIN: f64 = -1000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ScanContextConfig {
    pub num_rings: usize,
    pub num_sectors: usize,
    pub max_radius: f64,
    pub num_candidates: usize,
    pub similarity_threshold: f64,
    /// Keyframes this recent are never proposed as loop candidates.
    pub exclude_recent: usize,
}

impl Default for ScanContextConfig {
    fn default() -> Self {
        ScanContextConfig {
            num_rings: 20,
            num_sectors: 60,
            max_radius: 80.0,
            num_candidates: 10,
            similarity_threshold: 0.2,
            exclude_recent: 50,
        }
    }
}

/// Ring x sector matrix of maximum point heights plus per-ring occupancy.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanContextDescriptor {
    rings: usize,
    sectors: usize,
    /// Row-major, `rings x sectors`.
    matrix: Vec<f64>,
    ring_key: Vec<f64>,
    pub keyframe_index: usize,
}

impl ScanContextDescriptor {
    /// All-empty descriptor.
    pub fn empty(rings: usize, sectors: usize, keyframe_index: usize) -> Self {
        ScanContextDescriptor {
            rings,
            sectors,
            matrix: vec![EMPTY_BIN; rings * sectors],
            ring_key: vec![0.0; rings],
            keyframe_index,
        }
    }

    /// Descriptor from explicit bin values; `EMPTY_BIN` marks empty bins.
    pub fn from_matrix(rings: usize, sectors: usize, matrix: Vec<f64>, keyframe_index: usize) -> Self {
        assert_eq!(matrix.len(), rings * sectors, "matrix size must be rings * sectors");
        let mut d = ScanContextDescriptor {
            rings,
            sectors,
            matrix,
            ring_key: vec![0.0; rings],
            keyframe_index,
        };
        d.refresh_ring_key();
        d
    }

    fn refresh_ring_key(&mut self) {
        for r in 0..self.rings {
            let occupied = (0..self.sectors).filter(|&s| !self.is_empty_bin(r, s)).count();
            self.ring_key[r] = occupied as f64 / self.sectors as f64;
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rings, self.sectors)
    }

    pub fn get(&self, ring: usize, sector: usize) -> f64 {
        self.matrix[ring * self.sectors + sector]
    }

    pub fn is_empty_bin(&self, ring: usize, sector: usize) -> bool {
        self.get(ring, sector) == EMPTY_BIN
    }

    pub fn ring_key(&self) -> &[f64] {
        &self.ring_key
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    /// Moves column `j` to column `(j + k) % sectors`.
    pub fn cyclic_shift(&self, k: usize) -> Self {
        let mut out = self.clone();
        for r in 0..self.rings {
            for j in 0..self.sectors {
                out.matrix[r * self.sectors + (j + k) % self.sectors] = self.get(r, j);
            }
        }
        out
    }

    fn column_empty(&self, j: usize) -> bool {
        (0..self.rings).all(|r| self.is_empty_bin(r, j))
    }

    fn column_value(&self, r: usize, j: usize) -> f64 {
        let v = self.get(r, j);
        if v == EMPTY_BIN {
            0.0
        } else {
            v
        }
    }
}

/// Bins the pooled edge and planar points by planar range and azimuth; each
/// bin keeps its maximum `z`. Points beyond `max_radius` are discarded.
pub fn build_descriptor(features: &FeatureCloud, keyframe_index: usize, cfg: &ScanContextConfig) -> ScanContextDescriptor {
    let mut d = ScanContextDescriptor::empty(cfg.num_rings, cfg.num_sectors, keyframe_index);
    let ring_width = cfg.max_radius / cfg.num_rings as f64;
    for p in features.edges.iter().chain(&features.planars) {
        let range = (p.x * p.x + p.y * p.y).sqrt();
        if range.is_nan() || range >= cfg.max_radius {
            continue;
        }
        let ring = ((range / ring_width).floor() as usize).min(cfg.num_rings - 1);
        let fraction = (p.y.atan2(p.x) + std::f64::consts::PI) / std::f64::consts::TAU;
        let sector = ((fraction * cfg.num_sectors as f64).floor() as usize).min(cfg.num_sectors - 1);
        let bin = &mut d.matrix[ring * cfg.num_sectors + sector];
        if *bin == EMPTY_BIN || p.z > *bin {
            *bin = p.z;
        }
    }
    d.refresh_ring_key();
    d
}

/// Minimum over cyclic shifts `s` of the mean column cosine distance between
/// `a[:, j]` and `b[:, (j + s) % sectors]`. Columns empty in both are skipped.
/// Returns `(distance, s)`; distance is in `[0, 1]`.
pub fn descriptor_distance(a: &ScanContextDescriptor, b: &ScanContextDescriptor) -> Result<(f64, usize)> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            left: a.dims(),
            right: b.dims(),
        });
    }
    let (rings, sectors) = a.dims();
    let empty_a: Vec<bool> = (0..sectors).map(|j| a.column_empty(j)).collect();
    let empty_b: Vec<bool> = (0..sectors).map(|j| b.column_empty(j)).collect();
    let norm_sq = |d: &ScanContextDescriptor, j: usize| (0..rings).map(|r| d.column_value(r, j).powi(2)).sum::<f64>();
    let na: Vec<f64> = (0..sectors).map(|j| norm_sq(a, j)).collect();
    let nb: Vec<f64> = (0..sectors).map(|j| norm_sq(b, j)).collect();

    let mut best = (1.0, 0);
    for shift in 0..sectors {
        let mut sum = 0.0;
        let mut count = 0usize;
        for j in 0..sectors {
            let k = (j + shift) % sectors;
            if empty_a[j] && empty_b[k] {
                continue;
            }
            count += 1;
            if empty_a[j] || empty_b[k] {
                sum += 1.0;
                continue;
            }
            let denom = (na[j] * nb[k]).sqrt();
            let similarity = if denom > 0.0 {
                let dot: f64 = (0..rings).map(|r| a.column_value(r, j) * b.column_value(r, k)).sum();
                (dot / denom).clamp(0.0, 1.0)
            } else if na[j] == nb[k] {
                // both occupied at zero height
                1.0
            } else {
                0.0
            };
            sum += 1.0 - similarity;
        }
        let distance = if count == 0 { 1.0 } else { sum / count as f64 };
        if distance < best.0 {
            best = (distance, shift);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateMatch {
    pub candidate_keyframe_index: usize,
    pub descriptor_distance: f64,
    pub best_column_shift: usize,
}

impl CandidateMatch {
    /// Yaw of the probe frame relative to the candidate frame implied by the
    /// column shift, wrapped into `(-pi, pi]`.
    pub fn yaw(&self, num_sectors: usize) -> f64 {
        let mut yaw = self.best_column_shift as f64 * std::f64::consts::TAU / num_sectors as f64;
        if yaw > std::f64::consts::PI {
            yaw -= std::f64::consts::TAU;
        }
        yaw
    }
}

/// Append-only store of keyframe descriptors.
#[derive(Debug, Clone, Default)]
pub struct DescriptorStore {
    descriptors: Vec<ScanContextDescriptor>,
}

impl DescriptorStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, d: ScanContextDescriptor) {
        self.descriptors.push(d);
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn descriptors(&self) -> &[ScanContextDescriptor] {
        &self.descriptors
    }

    /// Best loop candidate for `probe` among keyframes more than
    /// `exclude_recent` older than it, if its distance is below the threshold.
    pub fn query(&self, probe: &ScanContextDescriptor, exclude_recent: usize, cfg: &ScanContextConfig) -> Option<CandidateMatch> {
        let mut shortlist: Vec<(f64, &ScanContextDescriptor)> = self
            .descriptors
            .iter()
            .filter(|d| d.keyframe_index + exclude_recent < probe.keyframe_index && d.dims() == probe.dims())
            .map(|d| {
                let dist_sq: f64 = d
                    .ring_key()
                    .iter()
                    .zip(probe.ring_key())
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                (dist_sq, d)
            })
            .collect();
        shortlist.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.keyframe_index.cmp(&y.1.keyframe_index)));
        shortlist.truncate(cfg.num_candidates);

        let mut best: Option<CandidateMatch> = None;
        for (_, d) in shortlist {
            let Ok((distance, shift)) = descriptor_distance(probe, d) else {
                continue;
            };
            let better = match &best {
                None => true,
                Some(b) => {
                    distance < b.descriptor_distance
                        || (distance == b.descriptor_distance && d.keyframe_index < b.candidate_keyframe_index)
                }
            };
            if better {
                best = Some(CandidateMatch {
                    candidate_keyframe_index: d.keyframe_index,
                    descriptor_distance: distance,
                    best_column_shift: shift,
                });
            }
        }
        best.filter(|b| b.descriptor_distance < cfg.similarity_threshold)
    }
}

/// Debug dump: one CSV row per ring, empty bins written as `EMPTY_BIN`.
pub fn write_descriptor_csv(d: &ScanContextDescriptor, path: &Path) -> Result<()> {
    let mut out = String::new();
    for r in 0..d.rings {
        let row: Vec<String> = (0..d.sectors).map(|s| d.get(r, s).to_string()).collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
