mod common;

use common::*;
use lidar_slam::dataset::GroundTruthTrajectory;
use lidar_slam::evaluation::icp::{best_fit_transform, icp_point_to_point, IcpConfig};
use lidar_slam::evaluation::{
    format_plot_data, kitti_relative_errors, relative_errors, timing_stats, trajectory_distances, PLOT_HEADER,
};
use lidar_slam::geometry::{Pose, Vec3};
use lidar_slam::kdtree::KdTree;
use lidar_slam::{Error, LoopEvent};
use proptest::prelude::*;
use rand::Rng;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-3)
}

#[test]
fn metric_matches_devkit_on_random_drives() {
    let mut rng = rng(61);
    for trial in 0..100 {
        let n = rng.random_range(150..400);
        let (step, sigma) = (rng.random_range(1.0..3.0), rng.random_range(0.005..0.05));
        let truth = random_drive(&mut rng, n, step);
        let est = perturb_drive(&mut rng, &truth, sigma);
        let report = relative_errors(&est, &truth).unwrap();
        let (t, r, count) = devkit_errors(&est, &truth);
        assert_eq!(report.segments, count, "trial {trial}");
        assert!(close(report.ate_percent, t), "trial {trial}: {} vs {t}", report.ate_percent);
        assert!(close(report.are_deg_per_100m, r), "trial {trial}: {} vs {r}", report.are_deg_per_100m);
        let per_length: usize = report.per_length.iter().map(|l| l.segments).sum();
        assert_eq!(per_length, count);
    }
}

#[test]
fn metric_ignores_a_shared_rigid_motion() {
    let mut rng = rng(62);
    for _ in 0..20 {
        let truth = random_drive(&mut rng, 300, 2.0);
        let est = perturb_drive(&mut rng, &truth, 0.02);
        let base = relative_errors(&est, &truth).unwrap();
        let g = random_pose(&mut rng, 1000.0);
        let h = random_pose(&mut rng, 1000.0);
        // the estimate may also sit in its own arbitrary world frame
        let moved_truth: Vec<Pose> = truth.iter().map(|p| g.compose(p)).collect();
        let moved_est: Vec<Pose> = est.iter().map(|p| h.compose(p)).collect();
        let moved = relative_errors(&moved_est, &moved_truth).unwrap();
        assert_eq!(base.segments, moved.segments);
        assert!((base.ate_percent - moved.ate_percent).abs() < 1e-9);
        assert!((base.are_deg_per_100m - moved.are_deg_per_100m).abs() < 1e-9);
    }
}

#[test]
fn exact_estimate_scores_zero_and_short_runs_are_flagged() {
    let mut rng = rng(63);
    let truth = random_drive(&mut rng, 200, 2.0);
    let r = relative_errors(&truth, &truth).unwrap();
    assert!(r.ate_percent < 1e-12 && r.are_deg_per_100m < 1e-9);
    assert!(!r.insufficient_length);
    let short = relative_errors(&truth[..30], &truth[..30]).unwrap();
    assert!(short.insufficient_length);
    assert_eq!((short.ate_percent, short.segments), (0.0, 0));
    assert!(matches!(relative_errors(&truth[..3], &truth[..4]), Err(Error::LengthMismatch { .. })));
}

#[test]
fn uniform_scale_error_gives_its_percentage() {
    let truth: Vec<Pose> = (0..500).map(|i| Pose::from_translation(i as f64, 0.0, 0.0)).collect();
    let est: Vec<Pose> = (0..500).map(|i| Pose::from_translation(1.02 * i as f64, 0.0, 0.0)).collect();
    let r = relative_errors(&est, &truth).unwrap();
    // each segment spans one frame more than its nominal length
    for l in &r.per_length {
        let expected = 2.0 * (l.length + 1.0) / l.length;
        assert!((l.ate_percent - expected).abs() < 1e-9);
    }
}

#[test]
fn kitti_metric_uses_calibration() {
    let mut rng = rng(64);
    let lidar_truth = random_drive(&mut rng, 300, 2.0);
    let est = perturb_drive(&mut rng, &lidar_truth, 0.02);
    let tr = random_pose(&mut rng, 1.0);
    let gt = GroundTruthTrajectory {
        camera_poses: lidar_truth.iter().map(|p| tr.compose(p).compose(&tr.inverse())).collect(),
        calibration: tr,
    };
    let via_kitti = kitti_relative_errors(&est, &gt).unwrap();
    let camera_est: Vec<Pose> = est.iter().map(|p| tr.compose(p).compose(&tr.inverse())).collect();
    let (t, r, _) = devkit_errors(&camera_est, &gt.camera_poses);
    assert!(close(via_kitti.ate_percent, t) && close(via_kitti.are_deg_per_100m, r));
}

#[test]
fn distances_accumulate() {
    let poses = [Pose::identity(), Pose::from_translation(3.0, 4.0, 0.0), Pose::from_translation(3.0, 4.0, 1.0)];
    assert_eq!(trajectory_distances(&poses), vec![0.0, 5.0, 6.0]);
}

fn event(accepted: bool, millis: f64) -> LoopEvent {
    LoopEvent {
        from: 60,
        to: 1,
        d: 1.0,
        d_thre: 21.0,
        sc_distance: 0.1,
        accepted,
        cost: if accepted { 0.05 } else { f64::NAN },
        millis,
    }
}

#[test]
fn timing_covers_accepted_loops_only() {
    let stats = timing_stats(&[event(true, 4.0), event(false, 0.0), event(true, 2.0), event(true, 9.0)]);
    assert_eq!(stats.count, 3);
    assert_eq!(stats.median_ms, Some(4.0));
    assert_eq!(stats.mean_ms, Some(5.0));
    assert_eq!(timing_stats(&[event(false, 0.0)]).mean_ms, None);
}

#[test]
fn plot_rows_cover_the_common_prefix() {
    let a = [Pose::from_translation(1.0, 2.0, 0.0), Pose::from_translation(3.0, 4.0, 0.0)];
    let b = [Pose::from_translation(1.5, 2.5, 9.0)];
    let text = format_plot_data(&a, &b);
    assert_eq!(text, format!("{PLOT_HEADER}\n0,1,2,1.5,2.5\n"));
}

proptest! {
    #[test]
    fn kdtree_matches_brute_force(
        pts in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64), 1..150),
        q in (-12.0..12.0f64, -12.0..12.0f64, -12.0..12.0f64),
        k in 1usize..8,
    ) {
        let points: Vec<Vec3> = pts.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect();
        let query = Vec3::new(q.0, q.1, q.2);
        let tree = KdTree::new(points.clone());
        let got = tree.nearest(&query, k);
        let mut brute: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, p)| ((p - query).norm_squared(), i)).collect();
        brute.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        prop_assert_eq!(got.len(), k.min(points.len()));
        for (n, (d, _)) in got.iter().zip(&brute) {
            prop_assert!((n.dist_sq - d).abs() < 1e-12);
            prop_assert!(((points[n.index] - query).norm_squared() - n.dist_sq).abs() < 1e-12);
        }
    }

    #[test]
    fn best_fit_recovers_exact_transforms(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let pose = random_pose(&mut rng, 20.0);
        let source: Vec<Vec3> = (0..30).map(|_| random_unit(&mut rng) * rng.random_range(0.5..10.0)).collect();
        let target: Vec<Vec3> = source.iter().map(|p| pose.apply(p)).collect();
        let fit = best_fit_transform(&source, &target);
        prop_assert!((fit.matrix() - pose.matrix()).abs().max() < 1e-9);
    }
}

#[test]
fn icp_aligns_a_corner_from_a_nearby_start() {
    let world = corner_world(0.0);
    let target: Vec<Vec3> = world.edges.iter().chain(&world.planars).copied().collect();
    let truth = Pose::new(lidar_slam::Rotation::rotz(0.3), Vec3::new(2.0, 2.5, 1.2));
    let source: Vec<Vec3> = target.iter().map(|p| truth.inverse().apply(p)).collect();
    let initial = truth.compose(&Pose::new(lidar_slam::Rotation::rotz(0.01), Vec3::new(0.05, -0.03, 0.02)));
    let r = icp_point_to_point(&source, &target, &initial, &IcpConfig::default());
    let (t, a) = pose_error(&truth, &r.pose);
    assert!(r.converged);
    assert!(t < 1e-6 && a < 1e-6, "err {t} {a}");
    assert!(r.rmse < 1e-6);
}
