//! Fixtures shared by the benchmarks.

use lidar_slam::dataset::RawScan;
use lidar_slam::features::{extract_features, FeatureConfig};
use lidar_slam::geometry::{Pose, Rotation, Vec3};
use lidar_slam::loop_closure::KeyframeStore;
use lidar_slam::pipeline::SyntheticWorld;
use lidar_slam::pose_graph::{diagonal_information, Edge, EdgeKind, PoseGraph};
use lidar_slam::{FeatureCloud, WorldSpec};

pub fn feature_config() -> FeatureConfig {
    FeatureConfig {
        max_planars_per_sector: 20,
        ..FeatureConfig::default()
    }
}

/// A square-loop world with two laps' worth of frames, so late frames revisit early ones.
pub fn world() -> SyntheticWorld {
    SyntheticWorld::new("square_loop:frames=400,laps=1.1".parse::<WorldSpec>().expect("valid spec"))
}

/// Keyframes every other frame over the first `count` frames, at ground-truth poses.
pub fn keyframes(world: &SyntheticWorld, count: usize) -> (KeyframeStore, Vec<Pose>) {
    let gt = world.ground_truth();
    let mut store = KeyframeStore::new();
    let mut poses = Vec::new();
    for i in (0..count).step_by(2) {
        let cloud = extract_features(&world.scan(i), &feature_config());
        store.push(i, cloud, gt[i]);
        poses.push(gt[i]);
    }
    (store, poses)
}

pub fn features(scan: &RawScan) -> FeatureCloud {
    extract_features(scan, &feature_config())
}

/// Noisy circular odometry with one loop edge, as a pose graph.
pub fn circle_graph(n: usize) -> PoseGraph {
    let step = std::f64::consts::TAU / n as f64;
    let truth: Vec<Pose> = (0..n)
        .map(|i| {
            let a = step * i as f64;
            Pose::new(Rotation::rotz(a), Vec3::new(50.0 * a.cos(), 50.0 * a.sin(), 0.0))
        })
        .collect();
    let bias = Pose::new(Rotation::rotz(0.002), Vec3::new(0.02, 0.0, 0.0));
    let mut graph = PoseGraph::default();
    let mut odom = truth[0];
    graph.add_odometry_node(0, odom).expect("first node");
    for i in 1..n {
        odom = odom.compose(&truth[i - 1].between(&truth[i]).compose(&bias));
        graph.add_odometry_node(i, odom).expect("sequential node");
    }
    graph
        .add_edge(Edge {
            from: 0,
            to: n - 1,
            measurement: truth[0].between(&truth[n - 1]),
            information: diagonal_information(1e-3, 1e-2),
            kind: EdgeKind::Loop,
            robust: true,
        })
        .expect("valid edge");
    graph
}
