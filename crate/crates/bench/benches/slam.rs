use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use lidar_slam::evaluation::icp::{icp_point_to_point, IcpConfig};
use lidar_slam::geometry::Vec3;
use lidar_slam::loop_closure::{estimate_loop_pose, LoopPoseConfig, LoopQuery};
use lidar_slam::odometry::submap::VoxelCloud;
use lidar_slam::odometry::{register, RegistrationConfig, Submap, SubmapConfig};
use lidar_slam::scan_context::{build_descriptor, descriptor_distance, DescriptorStore, ScanContextConfig};
use lidar_slam_bench::{circle_graph, features, keyframes, world};

fn front_end(c: &mut Criterion) {
    let world = world();
    let gt = world.ground_truth();
    let scan = world.scan(10);
    c.bench_function("extract_features", |b| b.iter(|| features(black_box(&scan))));

    let clouds: Vec<_> = (0..10).map(|i| (features(&world.scan(i)), gt[i])).collect();
    let submap = Submap::from_clouds(SubmapConfig::default(), clouds.iter().map(|(c, p)| (c, p)));
    let current = features(&scan);
    let cfg = RegistrationConfig::default();
    let start = gt[9].compose(&gt[8].between(&gt[9]));
    c.bench_function("register_frame_to_submap", |b| {
        b.iter(|| register(black_box(&current), &submap, &start, &cfg).expect("finite"))
    });
}

fn scan_context(c: &mut Criterion) {
    let world = world();
    let cfg = ScanContextConfig::default();
    let a = build_descriptor(&features(&world.scan(0)), 0, &cfg);
    let b_desc = build_descriptor(&features(&world.scan(3)), 1, &cfg);
    c.bench_function("descriptor_distance", |b| b.iter(|| descriptor_distance(black_box(&a), &b_desc).expect("same dims")));

    let (store_frames, _) = keyframes(&world, 200);
    let mut store = DescriptorStore::new();
    for k in store_frames.keyframes() {
        store.push(build_descriptor(&k.features, k.index, &cfg));
    }
    let probe = build_descriptor(&features(&world.scan(396)), 500, &cfg);
    c.bench_function("descriptor_store_query_100", |b| b.iter(|| store.query(black_box(&probe), cfg.exclude_recent, &cfg)));
}

fn loop_pose(c: &mut Criterion) {
    let world = world();
    let gt = world.ground_truth();
    let (store, poses) = keyframes(&world, 60);
    let current_frame = 396;
    let current = features(&world.scan(current_frame));
    let loop_index = (0..poses.len())
        .min_by(|&a, &b| {
            let d = |k: usize| (poses[k].translation - gt[current_frame].translation).norm();
            d(a).total_cmp(&d(b))
        })
        .expect("keyframes");
    let initial = gt[current_frame].compose(&lidar_slam::Pose::from_translation(0.2, -0.1, 0.0));
    let cfg = LoopPoseConfig::default();
    let query = LoopQuery {
        keyframe_index: 500,
        features: &current,
        initial_pose: initial,
        yaw_hint: None,
    };
    let mut group = c.benchmark_group("loop_pose");
    group.bench_function("feature_based", |b| b.iter(|| estimate_loop_pose(black_box(&query), &store, loop_index, &poses, &cfg)));

    let raw = |i: usize| -> Vec<Vec3> { world.scan(i).points.iter().map(|p| p.position).collect() };
    let (source, target) = (raw(current_frame), raw(store.get(loop_index).expect("keyframe").frame_index));
    let relative = poses[loop_index].between(&initial);
    let thin = |pts: &[Vec3]| {
        let mut v = VoxelCloud::new(0.4);
        for p in pts {
            v.insert(*p);
        }
        v.points().to_vec()
    };
    group.bench_function("raw_scan_icp", |b| {
        b.iter(|| icp_point_to_point(&thin(&source), &thin(&target), black_box(&relative), &IcpConfig::default()))
    });
    group.finish();
}

fn back_end(c: &mut Criterion) {
    let graph = circle_graph(500);
    c.bench_function("pose_graph_500_nodes", |b| {
        b.iter_batched(|| graph.clone(), |mut g| g.optimize(20).expect("finite"), BatchSize::SmallInput)
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = front_end, scan_context, loop_pose, back_end
}
criterion_main!(benches);
