use std::collections::HashMap;

use crate::features::FeatureCloud;
use crate::geometry::{Pose, Vec3};
use crate::kdtree::KdTree;

#[derive(Debug, Clone, PartialEq)]
pub struct SubmapConfig {
    pub edge_voxel: f64,
    pub planar_voxel: f64,
    pub crop_radius: f64,
}

impl Default for SubmapConfig {
    fn default() -> Self {
        SubmapConfig {
            edge_voxel: 0.4,
            planar_voxel: 0.8,
            crop_radius: 100.0,
        }
    }
}

/// Point set holding at most one point per voxel; the first point to land in
/// a voxel is kept.
#[derive(Debug, Clone)]
pub struct VoxelCloud {
    voxel: f64,
    cells: HashMap<[i64; 3], usize>,
    points: Vec<Vec3>,
}

impl VoxelCloud {
    pub fn new(voxel: f64) -> Self {
        VoxelCloud {
            voxel,
            cells: HashMap::new(),
            points: Vec::new(),
        }
    }

    fn key(&self, p: &Vec3) -> [i64; 3] {
        [
            (p.x / self.voxel).floor() as i64,
            (p.y / self.voxel).floor() as i64,
            (p.z / self.voxel).floor() as i64,
        ]
    }

    /// Returns true when the point occupied a new voxel.
    pub fn insert(&mut self, p: Vec3) -> bool {
        let key = self.key(&p);
        if self.cells.contains_key(&key) {
            return false;
        }
        self.cells.insert(key, self.points.len());
        self.points.push(p);
        true
    }

    pub fn retain_within(&mut self, center: &Vec3, radius: f64) {
        let r2 = radius * radius;
        if self.points.iter().all(|p| (p - center).norm_squared() <= r2) {
            return;
        }
        let old = std::mem::take(&mut self.points);
        self.cells.clear();
        for p in old {
            if (p - center).norm_squared() <= r2 {
                self.insert(p);
            }
        }
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// `cloud` thinned to one point per voxel with the submap's voxel sizes.
pub fn voxel_filter(cloud: &FeatureCloud, config: &SubmapConfig) -> FeatureCloud {
    let thin = |points: &[Vec3], voxel: f64| {
        let mut v = VoxelCloud::new(voxel);
        for p in points {
            v.insert(*p);
        }
        v.points
    };
    FeatureCloud {
        edges: thin(&cloud.edges, config.edge_voxel),
        planars: thin(&cloud.planars, config.planar_voxel),
        frame_index: cloud.frame_index,
    }
}

/// Voxel-filtered global-frame feature map with nearest-neighbour indexes.
#[derive(Debug, Clone)]
pub struct Submap {
    config: SubmapConfig,
    edges: VoxelCloud,
    planars: VoxelCloud,
    edge_index: KdTree,
    planar_index: KdTree,
}

impl Submap {
    pub fn new(config: SubmapConfig) -> Self {
        Submap {
            edges: VoxelCloud::new(config.edge_voxel),
            planars: VoxelCloud::new(config.planar_voxel),
            edge_index: KdTree::default(),
            planar_index: KdTree::default(),
            config,
        }
    }

    /// Submap assembled from several posed clouds without cropping.
    pub fn from_clouds<'a>(
        config: SubmapConfig,
        clouds: impl IntoIterator<Item = (&'a FeatureCloud, &'a Pose)>,
    ) -> Self {
        let mut map = Submap::new(config);
        for (cloud, pose) in clouds {
            map.insert(cloud, pose);
        }
        map.rebuild_index();
        map
    }

    fn insert(&mut self, features: &FeatureCloud, pose: &Pose) {
        for p in &features.edges {
            self.edges.insert(pose.apply(p));
        }
        for p in &features.planars {
            self.planars.insert(pose.apply(p));
        }
    }

    fn rebuild_index(&mut self) {
        self.edge_index = KdTree::new(self.edges.points().to_vec());
        self.planar_index = KdTree::new(self.planars.points().to_vec());
    }

    /// Inserts `features` mapped by `pose`, then crops to `crop_radius` around
    /// the pose position.
    pub fn update(&mut self, features: &FeatureCloud, pose: &Pose) {
        self.insert(features, pose);
        let radius = self.config.crop_radius;
        self.edges.retain_within(&pose.translation, radius);
        self.planars.retain_within(&pose.translation, radius);
        self.rebuild_index();
    }

    pub fn config(&self) -> &SubmapConfig {
        &self.config
    }

    pub fn edge_points(&self) -> &[Vec3] {
        self.edges.points()
    }

    pub fn planar_points(&self) -> &[Vec3] {
        self.planars.points()
    }

    pub fn edge_index(&self) -> &KdTree {
        &self.edge_index
    }

    pub fn planar_index(&self) -> &KdTree {
        &self.planar_index
    }

    pub fn len(&self) -> usize {
        self.edges.len() + self.planars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Functional form of [`Submap::update`].
pub fn update_submap(mut submap: Submap, features: &FeatureCloud, pose: &Pose) -> Submap {
    submap.update(features, pose);
    submap
}
