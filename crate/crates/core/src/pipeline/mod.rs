//! End-to-end run: odometry, loop detection and pose graph stages, either
//! chained on one thread or on three threads joined by bounded queues.
//!
//! Both modes produce the same results: the loop stage handles keyframe `k`
//! only after the graph stage has published poses for keyframes `0..k`.

pub mod config;
pub mod synthetic;

pub use config::{GraphConfig, PipelineConfig};
pub use synthetic::{generate_world, SyntheticWorld, TrajectoryShape, WorldSpec};

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;

use crate::dataset::{
    encode_scan, export_map, export_trajectory, load_ground_truth, load_scan, GroundTruthTrajectory, KittiSequence,
    RawScan, TrajectoryFormat,
};
use crate::error::{Error, Result};
use crate::evaluation::{emit_plot_data, kitti_relative_errors, relative_errors, EvalReport};
use crate::features::FeatureCloud;
use crate::geometry::Pose;
use crate::loop_closure::{write_loop_events, KeyframePolicy, KeyframeStore, LoopConstraint, LoopDetector, LoopEvent};
use crate::odometry::Odometry;
use crate::pose_graph::PoseGraph;

/// Where scans come from.
#[derive(Debug, Clone)]
pub enum FrameSource {
    Kitti { sequence: KittiSequence, num_lasers: usize },
    Synthetic(Arc<SyntheticWorld>),
    Memory(Arc<Vec<RawScan>>),
}

impl FrameSource {
    pub fn len(&self) -> usize {
        match self {
            FrameSource::Kitti { sequence, .. } => sequence.len(),
            FrameSource::Synthetic(w) => w.len(),
            FrameSource::Memory(scans) => scans.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frame(&self, i: usize) -> Result<RawScan> {
        match self {
            FrameSource::Kitti { sequence, num_lasers } => {
                let mut scan = load_scan(&sequence.scans[i], *num_lasers)?.scan;
                scan.frame_index = i;
                Ok(scan)
            }
            FrameSource::Synthetic(w) => Ok(w.scan(i)),
            FrameSource::Memory(scans) => {
                let mut scan = scans[i].clone();
                scan.frame_index = i;
                Ok(scan)
            }
        }
    }
}

/// Ground truth for evaluation.
#[derive(Debug, Clone)]
pub enum Truth {
    /// Sensor poses relative to the first frame.
    Lidar(Vec<Pose>),
    /// KITTI camera-frame poses with calibration.
    Kitti(GroundTruthTrajectory),
}

impl Truth {
    pub fn lidar_poses(&self) -> Vec<Pose> {
        match self {
            Truth::Lidar(p) => p.clone(),
            Truth::Kitti(gt) => gt.lidar_poses(),
        }
    }

    fn truncate(&mut self, n: usize) {
        match self {
            Truth::Lidar(p) => p.truncate(n),
            Truth::Kitti(gt) => gt.camera_poses.truncate(n),
        }
    }

    fn evaluate(&self, estimate: &[Pose]) -> Result<EvalReport> {
        match self {
            Truth::Lidar(p) => relative_errors(estimate, p),
            Truth::Kitti(gt) => kitti_relative_errors(estimate, gt),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunInputs {
    pub source: FrameSource,
    pub truth: Option<Truth>,
}

/// Opens the configured dataset or synthetic world.
pub fn open_inputs(config: &PipelineConfig) -> Result<RunInputs> {
    let (source, mut truth) = if let Some(spec) = &config.synthetic {
        let world = Arc::new(SyntheticWorld::new(spec.clone()));
        let truth = Truth::Lidar(world.ground_truth());
        (FrameSource::Synthetic(world), Some(truth))
    } else if let Some(dir) = &config.dataset {
        let sequence = KittiSequence::open(dir)?;
        (
            FrameSource::Kitti {
                sequence,
                num_lasers: config.num_lasers,
            },
            None,
        )
    } else {
        return Err(Error::Config("set dataset.path or dataset.synthetic".into()));
    };
    if let Some(gt_path) = &config.ground_truth {
        let calib = config.calibration.clone().or_else(|| {
            let candidate = config.dataset.as_ref()?.join("calib.txt");
            candidate.is_file().then_some(candidate)
        });
        truth = Some(Truth::Kitti(load_ground_truth(gt_path, calib.as_deref())?));
    }
    Ok(RunInputs { source, truth })
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunResult {
    /// Optimized pose of every frame.
    pub trajectory: Vec<Pose>,
    /// Raw odometry pose of every frame.
    pub odometry: Vec<Pose>,
    /// Frame index of each keyframe.
    pub keyframe_frames: Vec<usize>,
    pub graph: PoseGraph,
    pub keyframes: KeyframeStore,
    pub events: Vec<LoopEvent>,
    pub constraints: Vec<LoopConstraint>,
    pub report: Option<EvalReport>,
    /// Distance between the last estimated and last true positions, meters.
    pub final_position_error: Option<f64>,
}

impl RunResult {
    pub fn loops_accepted(&self) -> usize {
        self.events.iter().filter(|e| e.accepted).count()
    }
}

struct OdometryMessage {
    frame_index: usize,
    features: FeatureCloud,
    pose: Pose,
}

struct KeyframeMessage {
    keyframe_index: usize,
    odometry_pose: Pose,
    constraint: Option<LoopConstraint>,
}

/// Latest optimized keyframe poses, published by the graph stage.
#[derive(Default)]
struct Snapshot {
    state: Mutex<SnapshotState>,
    ready: Condvar,
}

#[derive(Default)]
struct SnapshotState {
    poses: Arc<Vec<Pose>>,
    closed: bool,
}

impl Snapshot {
    fn publish(&self, poses: Vec<Pose>) {
        self.state.lock().expect("snapshot lock").poses = Arc::new(poses);
        self.ready.notify_all();
    }

    fn close(&self) {
        self.state.lock().expect("snapshot lock").closed = true;
        self.ready.notify_all();
    }

    /// Blocks until at least `count` poses are published; `None` once closed.
    fn wait_for(&self, count: usize) -> Option<Arc<Vec<Pose>>> {
        let mut guard = self.state.lock().expect("snapshot lock");
        while guard.poses.len() < count {
            if guard.closed {
                return None;
            }
            guard = self.ready.wait(guard).expect("snapshot lock");
        }
        Some(Arc::clone(&guard.poses))
    }
}

struct LoopStage {
    detector: LoopDetector,
    policy: KeyframePolicy,
    enabled: bool,
    last_keyframe: Option<Pose>,
    keyframe_frames: Vec<usize>,
    events: Vec<LoopEvent>,
    constraints: Vec<LoopConstraint>,
}

impl LoopStage {
    fn new(config: &PipelineConfig) -> Self {
        let loop_config = config.loop_closure();
        LoopStage {
            policy: loop_config.keyframes,
            detector: LoopDetector::new(loop_config),
            enabled: config.loop_enabled,
            last_keyframe: None,
            keyframe_frames: Vec::new(),
            events: Vec::new(),
            constraints: Vec::new(),
        }
    }

    fn is_keyframe(&self, pose: &Pose) -> bool {
        self.policy.is_keyframe(self.last_keyframe.as_ref(), pose)
    }

    /// `latest` must hold optimized poses of all earlier keyframes.
    fn handle(&mut self, msg: OdometryMessage, latest: &[Pose]) -> KeyframeMessage {
        self.last_keyframe = Some(msg.pose);
        self.keyframe_frames.push(msg.frame_index);
        if !self.enabled {
            let k = self.detector.record_keyframe(msg.frame_index, msg.features, msg.pose);
            return KeyframeMessage {
                keyframe_index: k,
                odometry_pose: msg.pose,
                constraint: None,
            };
        }
        let outcome = self.detector.process_keyframe(msg.frame_index, msg.features, msg.pose, latest);
        self.events.extend(outcome.event);
        self.constraints.extend(outcome.constraint);
        KeyframeMessage {
            keyframe_index: outcome.keyframe_index,
            odometry_pose: msg.pose,
            constraint: outcome.constraint.filter(|c| c.accepted),
        }
    }
}

struct GraphStage {
    graph: PoseGraph,
    max_iterations: usize,
}

impl GraphStage {
    fn handle(&mut self, msg: KeyframeMessage) -> Result<()> {
        self.graph.add_odometry_node(msg.keyframe_index, msg.odometry_pose)?;
        if let Some(c) = msg.constraint {
            self.graph.add_loop_edge(&c)?;
            self.graph.optimize(self.max_iterations)?;
        }
        Ok(())
    }
}

fn odometry_stage(config: &PipelineConfig, source: &FrameSource, frames: usize, mut emit: impl FnMut(OdometryMessage) -> bool) -> Result<Vec<Pose>> {
    let mut odometry = Odometry::new(config.odometry.clone());
    let mut poses = Vec::with_capacity(frames);
    for i in 0..frames {
        let scan = source.frame(i)?;
        let out = odometry.process_frame(&scan)?;
        poses.push(out.pose);
        let msg = OdometryMessage {
            frame_index: i,
            features: out.features,
            pose: out.pose,
        };
        if !emit(msg) {
            break;
        }
    }
    Ok(poses)
}

struct StageOutputs {
    odometry: Vec<Pose>,
    loop_stage: LoopStage,
    graph: PoseGraph,
}

fn run_sequential(config: &PipelineConfig, source: &FrameSource, frames: usize) -> Result<StageOutputs> {
    let mut loop_stage = LoopStage::new(config);
    let mut graph = GraphStage {
        graph: PoseGraph::new(config.graph.weights()),
        max_iterations: config.graph.max_iterations,
    };
    let mut failure = None;
    let odometry = odometry_stage(config, source, frames, |msg| {
        if !loop_stage.is_keyframe(&msg.pose) {
            return true;
        }
        let latest = graph.graph.nodes().to_vec();
        let keyframe = loop_stage.handle(msg, &latest);
        match graph.handle(keyframe) {
            Ok(()) => true,
            Err(e) => {
                failure = Some(e);
                false
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(StageOutputs {
        odometry,
        loop_stage,
        graph: graph.graph,
    })
}

fn run_threaded(config: &PipelineConfig, source: &FrameSource, frames: usize) -> Result<StageOutputs> {
    let capacity = config.queue_capacity;
    let (odo_tx, odo_rx): (SyncSender<OdometryMessage>, Receiver<OdometryMessage>) = sync_channel(capacity);
    let (kf_tx, kf_rx): (SyncSender<KeyframeMessage>, Receiver<KeyframeMessage>) = sync_channel(capacity);
    let snapshot = Arc::new(Snapshot::default());

    thread::scope(|scope| {
        let odometry = scope.spawn(move || odometry_stage(config, source, frames, |msg| odo_tx.send(msg).is_ok()));

        let loop_snapshot = Arc::clone(&snapshot);
        let loop_thread = scope.spawn(move || {
            let mut stage = LoopStage::new(config);
            for msg in odo_rx {
                if !stage.is_keyframe(&msg.pose) {
                    continue;
                }
                let k = stage.keyframe_frames.len();
                let Some(latest) = loop_snapshot.wait_for(k) else {
                    break;
                };
                let keyframe = stage.handle(msg, &latest[..k]);
                if kf_tx.send(keyframe).is_err() {
                    break;
                }
            }
            stage
        });

        let graph_snapshot = Arc::clone(&snapshot);
        let graph_thread = scope.spawn(move || -> Result<PoseGraph> {
            let mut stage = GraphStage {
                graph: PoseGraph::new(config.graph.weights()),
                max_iterations: config.graph.max_iterations,
            };
            for msg in kf_rx {
                if let Err(e) = stage.handle(msg) {
                    graph_snapshot.close();
                    return Err(e);
                }
                graph_snapshot.publish(stage.graph.nodes().to_vec());
            }
            graph_snapshot.close();
            Ok(stage.graph)
        });

        let odometry = odometry.join().expect("odometry stage panicked");
        let graph = graph_thread.join().expect("graph stage panicked");
        let loop_stage = loop_thread.join().expect("loop stage panicked");
        Ok(StageOutputs {
            odometry: odometry?,
            loop_stage,
            graph: graph?,
        })
    })
}

/// Per-frame poses: each frame follows its latest keyframe's correction.
pub fn frame_trajectory(odometry: &[Pose], keyframe_frames: &[usize], keyframe_poses: &[Pose]) -> Vec<Pose> {
    let mut out = Vec::with_capacity(odometry.len());
    let mut k = 0;
    for (i, pose) in odometry.iter().enumerate() {
        while k + 1 < keyframe_frames.len() && keyframe_frames[k + 1] <= i {
            k += 1;
        }
        match (keyframe_frames.get(k), keyframe_poses.get(k)) {
            (Some(&f), Some(corrected)) if f <= i => {
                out.push(corrected.compose(&odometry[f].between(pose)));
            }
            _ => out.push(*pose),
        }
    }
    out
}

/// Runs the pipeline on already opened inputs without writing anything.
pub fn execute(config: &PipelineConfig, inputs: &RunInputs) -> Result<RunResult> {
    config.validate()?;
    let frames = config
        .max_frames
        .map_or(inputs.source.len(), |m| m.min(inputs.source.len()));
    let outputs = if config.threaded {
        run_threaded(config, &inputs.source, frames)?
    } else {
        run_sequential(config, &inputs.source, frames)?
    };
    let StageOutputs {
        odometry,
        loop_stage,
        graph,
    } = outputs;
    let trajectory = frame_trajectory(&odometry, &loop_stage.keyframe_frames, graph.nodes());

    let (report, final_position_error) = match &inputs.truth {
        Some(truth) => {
            let mut truth = truth.clone();
            truth.truncate(frames);
            let mut report = truth.evaluate(&trajectory)?.with_loop_events(&loop_stage.events);
            let lidar = truth.lidar_poses();
            let error = match (trajectory.last(), lidar.last()) {
                (Some(a), Some(b)) => Some((a.translation - b.translation).norm()),
                _ => None,
            };
            report.final_position_error = error;
            (Some(report), error)
        }
        None => (None, None),
    };

    Ok(RunResult {
        trajectory,
        odometry,
        keyframe_frames: loop_stage.keyframe_frames,
        keyframes: loop_stage.detector.keyframes().clone(),
        graph,
        events: loop_stage.events,
        constraints: loop_stage.constraints,
        report,
        final_position_error,
    })
}

/// Writes trajectories, map, loop log, graph dump and evaluation to `dir`.
pub fn write_outputs(config: &PipelineConfig, result: &RunResult, truth: Option<&Truth>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    export_trajectory(&result.trajectory, &dir.join("trajectory.txt"), config.trajectory_format)?;
    export_trajectory(&result.odometry, &dir.join("odometry.txt"), config.trajectory_format)?;
    let keyframe_poses = result.graph.nodes();
    export_trajectory(keyframe_poses, &dir.join("keyframes.txt"), TrajectoryFormat::Kitti)?;
    let clouds: Vec<(FeatureCloud, Pose)> = result
        .keyframes
        .keyframes()
        .iter()
        .zip(keyframe_poses)
        .map(|(k, p)| (k.features.clone(), *p))
        .collect();
    export_map(&clouds, &dir.join("map.ply"))?;
    write_loop_events(&result.events, &dir.join("loop_events.csv"))?;
    result.graph.write_g2o(&dir.join("pose_graph.g2o"))?;
    let config_path = dir.join("config.txt");
    fs::write(&config_path, config.to_text()).map_err(|e| Error::io(&config_path, e))?;
    if let (Some(report), Some(truth)) = (&result.report, truth) {
        report.write_json(&dir.join("eval.json"))?;
        let mut lidar = truth.lidar_poses();
        lidar.truncate(result.trajectory.len());
        emit_plot_data(&result.trajectory, &lidar, &dir.join("plot.csv"))?;
    }
    Ok(())
}

/// Opens inputs, runs, and writes outputs to `config.output_dir`.
pub fn run(config: &PipelineConfig) -> Result<RunResult> {
    let inputs = open_inputs(config)?;
    let result = execute(config, &inputs)?;
    write_outputs(config, &result, inputs.truth.as_ref(), &config.output_dir)?;
    Ok(result)
}

/// Writes a synthetic run as a KITTI-style sequence: `velodyne/NNNNNN.bin`,
/// `poses.txt` (ground truth) and an identity `calib.txt`.
pub fn write_synthetic_sequence(spec: &WorldSpec, dir: &Path) -> Result<PathBuf> {
    let world = SyntheticWorld::new(spec.clone());
    let velodyne = dir.join("velodyne");
    fs::create_dir_all(&velodyne).map_err(|e| Error::io(&velodyne, e))?;
    for i in 0..world.len() {
        let path = velodyne.join(format!("{i:06}.bin"));
        fs::write(&path, encode_scan(&world.scan(i))).map_err(|e| Error::io(&path, e))?;
    }
    let poses = dir.join("poses.txt");
    export_trajectory(&world.ground_truth(), &poses, TrajectoryFormat::Kitti)?;
    let calib = dir.join("calib.txt");
    fs::write(&calib, "Tr: 1 0 0 0 0 1 0 0 0 0 1 0\n").map_err(|e| Error::io(&calib, e))?;
    Ok(poses)
}
