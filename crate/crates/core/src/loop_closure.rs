//! Loop candidate gating by relative distance and loop pose estimation by
//! feature registration against a submap around the loop keyframe.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::features::FeatureCloud;
use crate::geometry::Pose;
use crate::odometry::{register, voxel_filter, RegistrationConfig, RegistrationResult, Submap, SubmapConfig};
use crate::scan_context::{build_descriptor, CandidateMatch, DescriptorStore, ScanContextConfig};

/// `d_thre = base_threshold + k / n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveGateConfig {
    pub base_threshold: f64,
    pub n: f64,
}

impl Default for AdaptiveGateConfig {
    fn default() -> Self {
        AdaptiveGateConfig {
            base_threshold: 20.0,
            n: 100.0,
        }
    }
}

impl AdaptiveGateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_threshold > 0.0 && self.n > 0.0 {
            Ok(())
        } else {
            Err(Error::Config("gate.base_threshold and gate.n must be positive".into()))
        }
    }
}

/// Distance gate applied to Scan Context candidates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gate {
    Adaptive(AdaptiveGateConfig),
    /// Constant threshold in meters.
    Fixed(f64),
}

impl Default for Gate {
    fn default() -> Self {
        Gate::Adaptive(AdaptiveGateConfig::default())
    }
}

impl Gate {
    pub fn threshold(&self, k: usize) -> f64 {
        match self {
            Gate::Adaptive(cfg) => adaptive_threshold(k, cfg),
            Gate::Fixed(t) => *t,
        }
    }
}

/// Norm of the translation of `inverse(t_loop) * t_k`.
pub fn gate_distance(t_k: &Pose, t_loop: &Pose) -> f64 {
    t_loop.between(t_k).translation.norm()
}

pub fn adaptive_threshold(k: usize, cfg: &AdaptiveGateConfig) -> f64 {
    cfg.base_threshold + k as f64 / cfg.n
}

/// True when the candidate lies within the adaptive gate (boundary inclusive).
pub fn verify_candidate(_candidate: &CandidateMatch, t_k: &Pose, t_loop: &Pose, k: usize, cfg: &AdaptiveGateConfig) -> bool {
    gate_distance(t_k, t_loop) <= adaptive_threshold(k, cfg)
}

/// Motion thresholds that promote a frame to a keyframe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyframePolicy {
    pub translation: f64,
    pub rotation_deg: f64,
}

impl Default for KeyframePolicy {
    fn default() -> Self {
        KeyframePolicy {
            translation: 1.0,
            rotation_deg: 10.0,
        }
    }
}

impl KeyframePolicy {
    pub fn is_keyframe(&self, last_keyframe: Option<&Pose>, pose: &Pose) -> bool {
        let Some(last) = last_keyframe else {
            return true;
        };
        let delta = last.between(pose);
        delta.translation.norm() > self.translation || delta.angle() > self.rotation_deg.to_radians()
    }
}

#[derive(Debug, Clone)]
pub struct Keyframe {
    pub index: usize,
    pub frame_index: usize,
    pub features: FeatureCloud,
    pub odometry_pose: Pose,
}

/// Keyframes in insertion order; `keyframes()[i].index == i`.
#[derive(Debug, Clone, Default)]
pub struct KeyframeStore {
    keyframes: Vec<Keyframe>,
}

impl KeyframeStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a keyframe and returns its index.
    pub fn push(&mut self, frame_index: usize, features: FeatureCloud, odometry_pose: Pose) -> usize {
        let index = self.keyframes.len();
        self.keyframes.push(Keyframe {
            index,
            frame_index,
            features,
            odometry_pose,
        });
        index
    }

    pub fn get(&self, index: usize) -> Option<&Keyframe> {
        self.keyframes.get(index)
    }

    pub fn keyframes(&self) -> &[Keyframe] {
        &self.keyframes
    }

    pub fn len(&self) -> usize {
        self.keyframes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopConstraint {
    /// Current keyframe.
    pub from_keyframe: usize,
    /// Matched older keyframe.
    pub to_keyframe: usize,
    /// Pose of the current keyframe in the loop keyframe's frame.
    pub relative_pose: Pose,
    /// Mean point-to-primitive residual after refinement, meters.
    pub registration_cost: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopPoseConfig {
    /// Keyframes on each side of the loop keyframe used to build its submap.
    pub window: usize,
    /// Mean residual below which a converged refinement is accepted, meters.
    pub cost_threshold: f64,
    pub registration: RegistrationConfig,
    pub submap: SubmapConfig,
}

impl Default for LoopPoseConfig {
    fn default() -> Self {
        LoopPoseConfig {
            window: 10,
            cost_threshold: 0.3,
            registration: RegistrationConfig {
                max_iterations: 50,
                ..RegistrationConfig::default()
            },
            submap: SubmapConfig::default(),
        }
    }
}

/// Inputs describing the current keyframe for [`estimate_loop_pose`].
#[derive(Debug, Clone, Copy)]
pub struct LoopQuery<'a> {
    pub keyframe_index: usize,
    pub features: &'a FeatureCloud,
    /// Global pose guess: odometry pose carried through the latest graph correction.
    pub initial_pose: Pose,
    /// Yaw of the current frame relative to the loop frame from the descriptor match.
    pub yaw_hint: Option<f64>,
}

/// Submap of keyframes `[loop_index - w, loop_index + w]` placed at their
/// latest optimized poses. Keyframes without a published pose are skipped.
pub fn loop_submap(store: &KeyframeStore, loop_index: usize, latest_poses: &[Pose], cfg: &LoopPoseConfig) -> Submap {
    let lo = loop_index.saturating_sub(cfg.window);
    let hi = (loop_index + cfg.window).min(store.len().saturating_sub(1));
    let clouds = (lo..=hi).filter_map(|i| Some((&store.get(i)?.features, latest_poses.get(i)?)));
    Submap::from_clouds(cfg.submap.clone(), clouds)
}

fn attempt_accepted(r: &RegistrationResult, cfg: &LoopPoseConfig) -> bool {
    r.converged && !r.degenerate && r.mean_residual < cfg.cost_threshold
}

/// Refines the current keyframe's global pose against the loop submap and
/// returns the relative pose `inverse(loop pose) * refined pose`.
///
/// The first attempt starts from `query.initial_pose`. If that is rejected and
/// a yaw hint exists, a second attempt starts at the loop keyframe's pose
/// rotated by the hint.
pub fn estimate_loop_pose(
    query: &LoopQuery<'_>,
    store: &KeyframeStore,
    loop_index: usize,
    latest_poses: &[Pose],
    cfg: &LoopPoseConfig,
) -> LoopConstraint {
    let rejected = LoopConstraint {
        from_keyframe: query.keyframe_index,
        to_keyframe: loop_index,
        relative_pose: Pose::identity(),
        registration_cost: f64::INFINITY,
        accepted: false,
    };
    let Some(loop_pose) = latest_poses.get(loop_index).copied() else {
        return rejected;
    };
    let submap = loop_submap(store, loop_index, latest_poses, cfg);
    // The submap already holds one point per voxel; matching more than that
    // from the query adds cost without adding constraints.
    let features = voxel_filter(query.features, &cfg.submap);

    let mut starts = vec![query.initial_pose];
    if let Some(yaw) = query.yaw_hint {
        starts.push(loop_pose.compose(&Pose::rotz(yaw)));
    }
    let mut best: Option<RegistrationResult> = None;
    for start in starts {
        let Ok(result) = register(&features, &submap, &start, &cfg.registration) else {
            continue;
        };
        let accepted = attempt_accepted(&result, cfg);
        let improves = best
            .as_ref()
            .is_none_or(|b| result.mean_residual < b.mean_residual);
        if accepted || improves {
            best = Some(result);
        }
        if accepted {
            break;
        }
    }
    let Some(result) = best else {
        return rejected;
    };
    LoopConstraint {
        relative_pose: loop_pose.between(&result.pose),
        registration_cost: result.mean_residual,
        accepted: attempt_accepted(&result, cfg),
        ..rejected
    }
}

/// One row of the loop-event log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopEvent {
    pub from: usize,
    pub to: usize,
    /// Gate distance, meters.
    pub d: f64,
    pub d_thre: f64,
    pub sc_distance: f64,
    pub accepted: bool,
    /// Mean registration residual; NaN when the gate rejected the candidate.
    pub cost: f64,
    /// Wall time of loop pose estimation; 0 when it did not run.
    pub millis: f64,
}

pub const LOOP_EVENT_HEADER: &str = "from,to,d,d_thre,sc_distance,accepted,cost,millis";

pub fn format_loop_events(events: &[LoopEvent]) -> String {
    let mut out = String::from(LOOP_EVENT_HEADER);
    out.push('\n');
    for e in events {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            e.from, e.to, e.d, e.d_thre, e.sc_distance, e.accepted as u8, e.cost, e.millis
        );
    }
    out
}

pub fn parse_loop_events(text: &str, context: &str) -> Result<Vec<LoopEvent>> {
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line == LOOP_EVENT_HEADER) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::format(context, Some(i + 1), format!("expected 8 fields, found {}", fields.len())));
        }
        let bad = |what: &str| Error::format(context, Some(i + 1), format!("invalid {what}"));
        let int = |s: &str, what: &str| s.trim().parse::<usize>().map_err(|_| bad(what));
        let float = |s: &str, what: &str| s.trim().parse::<f64>().map_err(|_| bad(what));
        let accepted = match fields[5].trim() {
            "1" | "true" => true,
            "0" | "false" => false,
            _ => return Err(bad("accepted flag")),
        };
        events.push(LoopEvent {
            from: int(fields[0], "from")?,
            to: int(fields[1], "to")?,
            d: float(fields[2], "d")?,
            d_thre: float(fields[3], "d_thre")?,
            sc_distance: float(fields[4], "sc_distance")?,
            accepted,
            cost: float(fields[6], "cost")?,
            millis: float(fields[7], "millis")?,
        });
    }
    Ok(events)
}

pub fn write_loop_events(events: &[LoopEvent], path: &Path) -> Result<()> {
    fs::write(path, format_loop_events(events)).map_err(|e| Error::io(path, e))
}

pub fn load_loop_events(path: &Path) -> Result<Vec<LoopEvent>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_loop_events(&text, &path.display().to_string())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoopClosureConfig {
    pub gate: Gate,
    pub keyframes: KeyframePolicy,
    pub scan_context: ScanContextConfig,
    pub loop_pose: LoopPoseConfig,
}

/// What happened when a keyframe passed through the detector.
#[derive(Debug, Clone)]
pub struct KeyframeOutcome {
    pub keyframe_index: usize,
    /// Present when Scan Context proposed a candidate.
    pub event: Option<LoopEvent>,
    /// Present when the candidate passed the gate and loop pose estimation ran.
    pub constraint: Option<LoopConstraint>,
}

/// Keyframe and descriptor stores plus the detect, gate, estimate sequence.
#[derive(Debug, Clone, Default)]
pub struct LoopDetector {
    config: LoopClosureConfig,
    keyframes: KeyframeStore,
    descriptors: DescriptorStore,
}

impl LoopDetector {
    pub fn new(config: LoopClosureConfig) -> Self {
        LoopDetector {
            config,
            ..Default::default()
        }
    }

    pub fn config(&self) -> &LoopClosureConfig {
        &self.config
    }

    pub fn keyframes(&self) -> &KeyframeStore {
        &self.keyframes
    }

    pub fn descriptors(&self) -> &DescriptorStore {
        &self.descriptors
    }

    /// Global pose guess for a new keyframe: its odometry pose carried through
    /// the correction the graph has applied to the previous keyframe.
    pub fn corrected_guess(&self, odometry_pose: &Pose, latest_poses: &[Pose]) -> Pose {
        match (self.keyframes.keyframes().last(), latest_poses.get(self.keyframes.len().wrapping_sub(1))) {
            (Some(prev), Some(latest)) => latest.compose(&prev.odometry_pose.between(odometry_pose)),
            _ => *odometry_pose,
        }
    }

    /// Stores a keyframe and its descriptor without searching for loops.
    pub fn record_keyframe(&mut self, frame_index: usize, features: FeatureCloud, odometry_pose: Pose) -> usize {
        let k = self.keyframes.len();
        self.descriptors.push(build_descriptor(&features, k, &self.config.scan_context));
        self.keyframes.push(frame_index, features, odometry_pose)
    }

    /// Registers a new keyframe and looks for a loop.
    ///
    /// `latest_poses` must hold the optimized poses of all earlier keyframes.
    pub fn process_keyframe(
        &mut self,
        frame_index: usize,
        features: FeatureCloud,
        odometry_pose: Pose,
        latest_poses: &[Pose],
    ) -> KeyframeOutcome {
        let k = self.keyframes.len();
        let guess = self.corrected_guess(&odometry_pose, latest_poses);
        let descriptor = build_descriptor(&features, k, &self.config.scan_context);
        let candidate = self
            .descriptors
            .query(&descriptor, self.config.scan_context.exclude_recent, &self.config.scan_context);
        self.descriptors.push(descriptor);
        self.keyframes.push(frame_index, features, odometry_pose);

        let mut outcome = KeyframeOutcome {
            keyframe_index: k,
            event: None,
            constraint: None,
        };
        let Some(candidate) = candidate else {
            return outcome;
        };
        let loop_index = candidate.candidate_keyframe_index;
        let Some(loop_pose) = latest_poses.get(loop_index) else {
            return outcome;
        };
        let d = gate_distance(&guess, loop_pose);
        let d_thre = self.config.gate.threshold(k);
        let mut event = LoopEvent {
            from: k,
            to: loop_index,
            d,
            d_thre,
            sc_distance: candidate.descriptor_distance,
            accepted: false,
            cost: f64::NAN,
            millis: 0.0,
        };
        if d <= d_thre {
            let query = LoopQuery {
                keyframe_index: k,
                features: &self.keyframes.keyframes()[k].features,
                initial_pose: guess,
                yaw_hint: Some(candidate.yaw(self.config.scan_context.num_sectors)),
            };
            let start = Instant::now();
            let constraint = estimate_loop_pose(&query, &self.keyframes, loop_index, latest_poses, &self.config.loop_pose);
            event.millis = start.elapsed().as_secs_f64() * 1e3;
            event.accepted = constraint.accepted;
            event.cost = constraint.registration_cost;
            outcome.constraint = Some(constraint);
        }
        outcome.event = Some(event);
        outcome
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    #[test]
    fn gate_distance_examples() {
        let p = Pose::new(crate::geometry::Rotation::rotz(0.3), Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(gate_distance(&p, &p), 0.0);
        assert!((gate_distance(&Pose::from_translation(3.0, 4.0, 0.0), &Pose::identity()) - 5.0).abs() < 1e-12);
        let r = Pose::rotz(std::f64::consts::FRAC_PI_2);
        let k = r.compose(&Pose::from_translation(1.0, 1.0, 0.0));
        assert!((gate_distance(&k, &r) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn threshold_examples() {
        let cfg = AdaptiveGateConfig::default();
        assert_eq!(adaptive_threshold(0, &cfg), 20.0);
        assert_eq!(adaptive_threshold(500, &AdaptiveGateConfig { n: 50.0, ..cfg }), 30.0);
        assert_eq!(adaptive_threshold(100, &cfg), 21.0);
    }

    #[test]
    fn gate_boundary_is_inclusive() {
        let m = CandidateMatch {
            candidate_keyframe_index: 0,
            descriptor_distance: 0.1,
            best_column_shift: 0,
        };
        let cfg = AdaptiveGateConfig::default();
        let at = |d: f64| verify_candidate(&m, &Pose::from_translation(d, 0.0, 0.0), &Pose::identity(), 0, &cfg);
        assert!(at(5.0));
        assert!(!at(25.0));
        assert!(at(20.0));
    }

    #[test]
    fn keyframe_policy() {
        let policy = KeyframePolicy::default();
        assert!(policy.is_keyframe(None, &Pose::identity()));
        assert!(!policy.is_keyframe(Some(&Pose::identity()), &Pose::from_translation(0.9, 0.0, 0.0)));
        assert!(policy.is_keyframe(Some(&Pose::identity()), &Pose::from_translation(1.1, 0.0, 0.0)));
        assert!(policy.is_keyframe(Some(&Pose::identity()), &Pose::rotz(11f64.to_radians())));
    }

    #[test]
    fn loop_event_csv_round_trip() {
        let events = vec![
            LoopEvent {
                from: 60,
                to: 2,
                d: 1.5,
                d_thre: 20.6,
                sc_distance: 0.12,
                accepted: true,
                cost: 0.05,
                millis: 12.5,
            },
            LoopEvent {
                from: 61,
                to: 3,
                d: 40.0,
                d_thre: 20.61,
                sc_distance: 0.15,
                accepted: false,
                cost: f64::NAN,
                millis: 0.0,
            },
        ];
        let text = format_loop_events(&events);
        assert!(text.starts_with(LOOP_EVENT_HEADER));
        let back = parse_loop_events(&text, "test").unwrap();
        assert_eq!(back[0], events[0]);
        assert!(back[1].cost.is_nan());
        assert!(parse_loop_events("1,2,3\n", "test").is_err());
    }

    #[test]
    fn tiny_loop_submap_is_rejected() {
        let mut store = KeyframeStore::new();
        let features = FeatureCloud {
            edges: vec![Vec3::new(1.0, 2.0, 0.0); 3],
            planars: vec![Vec3::new(3.0, 0.0, 0.0); 3],
            frame_index: 0,
        };
        store.push(0, features.clone(), Pose::identity());
        let query = LoopQuery {
            keyframe_index: 60,
            features: &features,
            initial_pose: Pose::identity(),
            yaw_hint: None,
        };
        let c = estimate_loop_pose(&query, &store, 0, &[Pose::identity()], &LoopPoseConfig::default());
        assert!(!c.accepted);
        assert_eq!((c.from_keyframe, c.to_keyframe), (60, 0));
    }
}
