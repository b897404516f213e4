mod common;

use std::f64::consts::{PI, TAU};

use common::*;
use lidar_slam::features::FeatureCloud;
use lidar_slam::geometry::{Pose, Vec3};
use lidar_slam::scan_context::{
    build_descriptor, descriptor_distance, DescriptorStore, ScanContextConfig, ScanContextDescriptor, EMPTY_BIN,
};
use lidar_slam::Error;
use proptest::prelude::*;
use rand::Rng;

/// Column-by-column restatement of the cosine distance at one shift.
fn distance_at(a: &ScanContextDescriptor, b: &ScanContextDescriptor, s: usize) -> f64 {
    let (rings, sectors) = a.dims();
    let column = |d: &ScanContextDescriptor, j: usize| -> Option<Vec<f64>> {
        let col: Vec<f64> = (0..rings).map(|r| d.get(r, j)).collect();
        if col.iter().all(|&v| v == EMPTY_BIN) {
            None
        } else {
            Some(col.into_iter().map(|v| if v == EMPTY_BIN { 0.0 } else { v }).collect())
        }
    };
    let mut terms = Vec::new();
    for j in 0..sectors {
        match (column(a, j), column(b, (j + s) % sectors)) {
            (None, None) => {}
            (Some(_), None) | (None, Some(_)) => terms.push(1.0),
            (Some(x), Some(y)) => {
                let dot: f64 = x.iter().zip(&y).map(|(p, q)| p * q).sum();
                let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                let sim = if nx * ny > 0.0 {
                    (dot / (nx * ny)).clamp(0.0, 1.0)
                } else if nx == ny {
                    1.0
                } else {
                    0.0
                };
                terms.push(1.0 - sim);
            }
        }
    }
    if terms.is_empty() {
        1.0
    } else {
        terms.iter().sum::<f64>() / terms.len() as f64
    }
}

fn oracle_distance(a: &ScanContextDescriptor, b: &ScanContextDescriptor) -> (f64, usize) {
    let mut best = (1.0, 0);
    for s in 0..a.dims().1 {
        let d = distance_at(a, b, s);
        if d < best.0 {
            best = (d, s);
        }
    }
    best
}

fn random_descriptor(rng: &mut impl Rng, rings: usize, sectors: usize, index: usize) -> ScanContextDescriptor {
    let fill = rng.random_range(0.1..0.9);
    let m = (0..rings * sectors)
        .map(|_| if rng.random_bool(fill) { rng.random_range(-2.0..6.0) } else { EMPTY_BIN })
        .collect();
    ScanContextDescriptor::from_matrix(rings, sectors, m, index)
}

/// Points placed at bin centres (never on a border) of a random occupancy.
fn bin_centred_cloud(rng: &mut impl Rng, cfg: &ScanContextConfig) -> FeatureCloud {
    let ring_w = cfg.max_radius / cfg.num_rings as f64;
    let sector_w = TAU / cfg.num_sectors as f64;
    let points: Vec<Vec3> = (0..500)
        .map(|_| {
            let r = (rng.random_range(0..cfg.num_rings) as f64 + 0.5 + rng.random_range(-0.3..0.3)) * ring_w;
            let az = -PI + (rng.random_range(0..cfg.num_sectors) as f64 + 0.5 + rng.random_range(-0.3..0.3)) * sector_w;
            Vec3::new(r * az.cos(), r * az.sin(), rng.random_range(-2.0..8.0))
        })
        .collect();
    FeatureCloud {
        edges: points[..50].to_vec(),
        planars: points[50..].to_vec(),
        frame_index: 0,
    }
}

proptest! {
    #[test]
    fn distance_matches_oracle(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let a = random_descriptor(&mut rng, 6, 12, 0);
        let b = random_descriptor(&mut rng, 6, 12, 1);
        let (d, s) = descriptor_distance(&a, &b).unwrap();
        let (od, os) = oracle_distance(&a, &b);
        prop_assert!((d - od).abs() < 1e-12);
        prop_assert_eq!(s, os);
        prop_assert!((0.0..=1.0).contains(&d));
    }

    #[test]
    fn distance_is_symmetric(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let a = random_descriptor(&mut rng, 5, 16, 0);
        let b = random_descriptor(&mut rng, 5, 16, 1);
        let (ab, s) = descriptor_distance(&a, &b).unwrap();
        let (ba, t) = descriptor_distance(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        // the reported shifts attain the minimum, and reversing one attains it the other way
        prop_assert!((distance_at(&a, &b, s) - ab).abs() < 1e-12);
        prop_assert!((distance_at(&b, &a, t) - ba).abs() < 1e-12);
        prop_assert!((distance_at(&b, &a, (16 - s) % 16) - ab).abs() < 1e-12);
    }

    #[test]
    fn column_shift_is_recovered(seed in any::<u64>(), k in 0usize..20) {
        let mut rng = rng(seed);
        let a = random_descriptor(&mut rng, 4, 20, 0);
        let (d, s) = descriptor_distance(&a, &a.cyclic_shift(k)).unwrap();
        prop_assert!(d < 1e-12);
        // among zero-distance shifts, k itself must be one
        prop_assert!(descriptor_distance(&a.cyclic_shift(s), &a.cyclic_shift(k)).unwrap().0 < 1e-12);
    }
}

#[test]
fn yaw_rotation_shifts_columns() {
    let cfg = ScanContextConfig::default();
    let mut rng = rng(51);
    for _ in 0..30 {
        let cloud = bin_centred_cloud(&mut rng, &cfg);
        let k = rng.random_range(0..cfg.num_sectors);
        let rotated = cloud.transformed(&Pose::rotz(k as f64 * TAU / cfg.num_sectors as f64));
        let a = build_descriptor(&cloud, 0, &cfg);
        let b = build_descriptor(&rotated, 0, &cfg);
        assert_eq!(a.cyclic_shift(k).matrix(), b.matrix());
        assert_eq!(a.ring_key(), b.ring_key());
        let (d, _) = descriptor_distance(&a, &b).unwrap();
        assert!(d < 1e-12);
    }
}

#[test]
fn bins_keep_maximum_height_and_drop_far_points() {
    let cfg = ScanContextConfig {
        num_rings: 2,
        num_sectors: 4,
        max_radius: 10.0,
        ..ScanContextConfig::default()
    };
    let cloud = FeatureCloud {
        edges: vec![Vec3::new(1.0, 0.1, 1.0), Vec3::new(2.0, 0.2, 3.0)],
        planars: vec![Vec3::new(1.5, 0.1, -1.0), Vec3::new(20.0, 0.0, 9.0), Vec3::new(-7.0, 0.1, 0.5)],
        frame_index: 0,
    };
    let d = build_descriptor(&cloud, 4, &cfg);
    // +x axis lies at azimuth 0, which is the start of sector 2 of 4
    assert_eq!(d.get(0, 2), 3.0);
    // azimuth just below pi falls in the last sector
    assert_eq!(d.get(1, 3), 0.5);
    let occupied = d.matrix().iter().filter(|&&v| v != EMPTY_BIN).count();
    assert_eq!(occupied, 2);
    assert_eq!(d.ring_key(), &[0.25, 0.25]);
}

#[test]
fn mismatched_dimensions_are_an_error() {
    let a = ScanContextDescriptor::empty(4, 8, 0);
    let b = ScanContextDescriptor::empty(4, 9, 0);
    assert!(matches!(descriptor_distance(&a, &b), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn empty_descriptors_are_maximally_distant() {
    let a = ScanContextDescriptor::empty(4, 8, 0);
    assert_eq!(descriptor_distance(&a, &a).unwrap().0, 1.0);
}

#[test]
fn store_query_matches_brute_force() {
    let cfg = ScanContextConfig {
        num_rings: 6,
        num_sectors: 12,
        num_candidates: 10,
        similarity_threshold: 0.5,
        exclude_recent: 5,
        ..ScanContextConfig::default()
    };
    let mut rng = rng(52);
    let mut store = DescriptorStore::new();
    for i in 0..100 {
        store.push(random_descriptor(&mut rng, 6, 12, i));
    }
    for trial in 0..50 {
        // half the probes are noisy copies of a stored descriptor
        let index = 100 + trial;
        let probe = if trial % 2 == 0 {
            let src = &store.descriptors()[rng.random_range(0..90)];
            let m = src.matrix().iter().map(|&v| if v == EMPTY_BIN { v } else { v + rng.random_range(-0.05..0.05) }).collect();
            ScanContextDescriptor::from_matrix(6, 12, m, index).cyclic_shift(rng.random_range(0..12))
        } else {
            random_descriptor(&mut rng, 6, 12, index)
        };

        let mut shortlist: Vec<(f64, usize)> = store
            .descriptors()
            .iter()
            .filter(|d| d.keyframe_index + cfg.exclude_recent < index)
            .map(|d| {
                let key: f64 = d.ring_key().iter().zip(probe.ring_key()).map(|(x, y)| (x - y).powi(2)).sum();
                (key, d.keyframe_index)
            })
            .collect();
        shortlist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        shortlist.truncate(cfg.num_candidates);
        let mut expected: Option<(f64, usize, usize)> = None;
        for &(_, k) in &shortlist {
            let (d, s) = oracle_distance(&probe, &store.descriptors()[k]);
            if expected.is_none_or(|(bd, bk, _)| d < bd || (d == bd && k < bk)) {
                expected = Some((d, k, s));
            }
        }
        let expected = expected.filter(|e| e.0 < cfg.similarity_threshold);

        let got = store.query(&probe, cfg.exclude_recent, &cfg);
        match (got, expected) {
            (None, None) => {}
            (Some(g), Some((d, k, s))) => {
                assert_eq!(g.candidate_keyframe_index, k);
                assert_eq!(g.best_column_shift, s);
                assert!((g.descriptor_distance - d).abs() < 1e-12);
            }
            other => panic!("trial {trial}: {other:?}"),
        }
    }
}

#[test]
fn recent_keyframes_are_never_candidates() {
    let cfg = ScanContextConfig::default();
    let mut store = DescriptorStore::new();
    let mut rng = rng(53);
    let d = random_descriptor(&mut rng, cfg.num_rings, cfg.num_sectors, 0);
    store.push(d.clone());
    let mut probe = d.clone();
    let m = probe.matrix().to_vec();
    for index in [1, cfg.exclude_recent] {
        probe = ScanContextDescriptor::from_matrix(cfg.num_rings, cfg.num_sectors, m.clone(), index);
        assert!(store.query(&probe, cfg.exclude_recent, &cfg).is_none());
    }
    probe = ScanContextDescriptor::from_matrix(cfg.num_rings, cfg.num_sectors, m, cfg.exclude_recent + 1);
    let hit = store.query(&probe, cfg.exclude_recent, &cfg).unwrap();
    assert_eq!(hit.candidate_keyframe_index, 0);
    assert_eq!(hit.descriptor_distance, 0.0);
}

#[test]
fn yaw_hint_wraps_into_half_open_interval() {
    let m = lidar_slam::CandidateMatch {
        candidate_keyframe_index: 0,
        descriptor_distance: 0.0,
        best_column_shift: 45,
    };
    assert!((m.yaw(60) + PI / 2.0).abs() < 1e-12);
    let half = lidar_slam::CandidateMatch { best_column_shift: 30, ..m };
    assert!((half.yaw(60) - PI).abs() < 1e-12);
}
