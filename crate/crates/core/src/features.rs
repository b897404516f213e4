//! Edge / planar feature selection by local smoothness along each laser ring.

use std::collections::BTreeMap;

use crate::dataset::RawScan;
use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    /// Points per side of the smoothness window.
    pub half_width: usize,
    pub smoothness_threshold: f64,
    pub min_range: f64,
    pub max_range: f64,
    pub max_edges_per_sector: usize,
    pub max_planars_per_sector: usize,
    /// Each ring is split into this many equal runs of its sweep order.
    pub num_sectors: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            half_width: 5,
            smoothness_threshold: 0.1,
            min_range: 2.0,
            max_range: 90.0,
            max_edges_per_sector: 2,
            max_planars_per_sector: 4,
            num_sectors: 6,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.half_width > 0
            && self.smoothness_threshold > 0.0
            && self.min_range > 0.0
            && self.max_edges_per_sector > 0
            && self.max_planars_per_sector > 0
            && self.num_sectors > 0;
        if !positive {
            return Err(Error::Config("feature parameters must be positive".into()));
        }
        if self.min_range >= self.max_range {
            return Err(Error::Config("feature.min_range must be below feature.max_range".into()));
        }
        Ok(())
    }
}

/// Edge and planar points of one scan, in the sensor frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureCloud {
    pub edges: Vec<Vec3>,
    pub planars: Vec<Vec3>,
    pub frame_index: usize,
}

impl FeatureCloud {
    pub fn len(&self) -> usize {
        self.edges.len() + self.planars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty() && self.planars.is_empty()
    }

    pub fn transformed(&self, pose: &Pose) -> FeatureCloud {
        FeatureCloud {
            edges: self.edges.iter().map(|p| pose.apply(p)).collect(),
            planars: self.planars.iter().map(|p| pose.apply(p)).collect(),
            frame_index: self.frame_index,
        }
    }
}

/// Indices into `RawScan::points`, ordered by ring then sweep position.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeatureSelection {
    pub edges: Vec<usize>,
    pub planars: Vec<usize>,
}

/// Smoothness of `ring[i]`:
/// `|sum_{j != i} (p_j - p_i)| / (2 * half_width * |p_i|)` over `i +- half_width`.
///
/// `None` when the window does not fit or the point is closer than `min_range`.
pub fn compute_smoothness(ring: &[Vec3], i: usize, half_width: usize, min_range: f64) -> Option<f64> {
    if half_width == 0 || i < half_width || i + half_width >= ring.len() {
        return None;
    }
    let p = ring[i];
    let range = p.norm();
    if range < min_range {
        return None;
    }
    // the j == i term is zero
    let sum: Vec3 = ring[i - half_width..=i + half_width].iter().map(|q| q - p).sum();
    Some(sum.norm() / (2.0 * half_width as f64 * range))
}

/// Chooses feature point indices for a scan.
pub fn select_features(scan: &RawScan, cfg: &FeatureConfig) -> FeatureSelection {
    let mut rings: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
    for (idx, p) in scan.points.iter().enumerate() {
        let r = p.position.norm();
        if r >= cfg.min_range && r <= cfg.max_range {
            rings.entry(p.ring).or_default().push(idx);
        }
    }
    let mut out = FeatureSelection::default();
    for members in rings.values() {
        let (mut edges, mut planars) = select_ring(scan, members, cfg);
        edges.sort_unstable();
        planars.sort_unstable();
        out.edges.extend(edges);
        out.planars.extend(planars);
    }
    out
}

fn select_ring(scan: &RawScan, members: &[usize], cfg: &FeatureConfig) -> (Vec<usize>, Vec<usize>) {
    let hw = cfg.half_width;
    let n = members.len();
    let mut edges = Vec::new();
    let mut planars = Vec::new();
    if n < 2 * hw + 1 {
        return (edges, planars);
    }
    let ring: Vec<Vec3> = members.iter().map(|&i| scan.points[i].position).collect();
    let smooth: Vec<Option<f64>> = (0..n)
        .map(|i| compute_smoothness(&ring, i, hw, cfg.min_range))
        .collect();
    let mut picked = vec![false; n];
    let suppress = |picked: &mut [bool], i: usize| {
        for flag in &mut picked[i.saturating_sub(hw)..(i + hw + 1).min(n)] {
            *flag = true;
        }
    };

    let (lo, hi) = (hw, n - hw);
    for s in 0..cfg.num_sectors {
        let start = lo + (hi - lo) * s / cfg.num_sectors;
        let end = lo + (hi - lo) * (s + 1) / cfg.num_sectors;
        let mut order: Vec<(usize, f64)> = (start..end)
            .filter_map(|i| smooth[i].map(|v| (i, v)))
            .collect();
        if order.is_empty() {
            continue;
        }
        // sharpest first; index breaks ties
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

        let mut taken = 0;
        for &(i, v) in &order {
            if taken == cfg.max_edges_per_sector || v <= cfg.smoothness_threshold {
                break;
            }
            if picked[i] {
                continue;
            }
            edges.push(members[i]);
            suppress(&mut picked, i);
            taken += 1;
        }

        let mut taken = 0;
        for &(i, v) in order.iter().rev() {
            if taken == cfg.max_planars_per_sector || v > cfg.smoothness_threshold {
                break;
            }
            if picked[i] {
                continue;
            }
            planars.push(members[i]);
            suppress(&mut picked, i);
            taken += 1;
        }
    }
    (edges, planars)
}

/// Splits a scan into edge and planar features.
pub fn extract_features(scan: &RawScan, cfg: &FeatureConfig) -> FeatureCloud {
    let sel = select_features(scan, cfg);
    FeatureCloud {
        edges: sel.edges.iter().map(|&i| scan.points[i].position).collect(),
        planars: sel.planars.iter().map(|&i| scan.points[i].position).collect(),
        frame_index: scan.frame_index,
    }
}
