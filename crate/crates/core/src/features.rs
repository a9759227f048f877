//! The nine intention features, their assembly into the 50-dimensional
//! per-timestep vector, and 15 Hz temporal windowing.
//!
//! Feature order is fixed: 42 pose values, group size, pedestrian speed,
//! vehicle distance, vehicle-to-pedestrian angle, vehicle speed, crosswalk
//! distance, crosswalk angle, location semantics; an optional current-state
//! flag may be appended as a 51st dimension.

use crate::geometry::{body_orientation, project_point, GeometryError, OrientationLine};
use crate::measurement::{
    estimate_distance, pedestrian_speed, vehicle_speed, DistanceNorm, KnowledgeBase,
    MeasurementConfig, MeasurementError, NormalizationFactors,
};
use crate::scene_model::{
    sample_track, Detection, EntityTrack, JointName, SceneBundle, SemanticGrid, SemanticLabel,
    SAMPLE_TOLERANCE,
};
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use thiserror::Error;

/// Base dimension of the assembled feature vector.
pub const FEATURE_DIM: usize = 50;

/// Feature sampling rate in Hz.
pub const FEATURE_RATE: f64 = 15.0;

/// Group boundary radius in meters (5 m diameter circle).
pub const GROUP_RADIUS_M: f64 = 2.5;

/// The 14 joints whose normalized 3D positions form the pose feature, in
/// canonical concatenation order (arms first, right ankle last).
pub const FEATURE_JOINTS: [JointName; 14] = [
    JointName::ShoulderL,
    JointName::ShoulderR,
    JointName::ElbowL,
    JointName::ElbowR,
    JointName::WristL,
    JointName::WristR,
    JointName::Neck,
    JointName::HipL,
    JointName::HipR,
    JointName::HipMid,
    JointName::KneeL,
    JointName::KneeR,
    JointName::AnkleL,
    JointName::AnkleR,
];

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
    #[error("track {track}: no detection near t={t}")]
    MissingDetection { track: u64, t: f64 },
    #[error("track {track}: detection at t={t} has no pose")]
    MissingPose { track: u64, t: f64 },
    #[error("track {track}: detection at t={t} has no toe points")]
    MissingToes { track: u64, t: f64 },
    #[error("track {track}: no ground-truth state near t={t}")]
    MissingState { track: u64, t: f64 },
    #[error("scene has no crosswalk entrances")]
    NoCrosswalks,
    #[error("scene has an empty semantic grid")]
    EmptySemanticGrid,
    #[error("infeasible windowing: {0}")]
    InfeasibleWindowing(String),
    #[error("non-finite feature value in component {0}")]
    NonFinite(usize),
}

impl FeatureError {
    /// True for absence-like errors handled by the missing-frame policy
    /// (zero-filled slot with presence mask false); structural errors
    /// propagate.
    pub fn is_missing_data(&self) -> bool {
        match self {
            FeatureError::MissingDetection { .. }
            | FeatureError::MissingPose { .. }
            | FeatureError::MissingToes { .. }
            | FeatureError::MissingState { .. }
            | FeatureError::Geometry(_) => true,
            FeatureError::Measurement(m) => matches!(
                m,
                MeasurementError::MissingDetection { .. }
                    | MeasurementError::WindowTooShort { .. }
            ),
            _ => false,
        }
    }
}

/// Configuration of feature assembly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Append the current crossing state as a 51st dimension.
    pub with_state: bool,
    pub distance_norm: DistanceNorm,
    pub knowledge_base: KnowledgeBase,
    pub normalization: NormalizationFactors,
    /// Window for speed measurement and approach classification (seconds).
    pub lookback: f64,
    /// Nearest-detection sampling tolerance (seconds).
    pub sample_tolerance: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            with_state: false,
            distance_norm: DistanceNorm::default(),
            knowledge_base: KnowledgeBase::default(),
            normalization: NormalizationFactors::default(),
            lookback: 0.5,
            sample_tolerance: SAMPLE_TOLERANCE,
        }
    }
}

impl FeatureConfig {
    pub fn with_state(mut self, with_state: bool) -> Self {
        self.with_state = with_state;
        self
    }

    pub fn from_measurement(measurement: &MeasurementConfig) -> Self {
        FeatureConfig {
            distance_norm: measurement.distance_norm,
            knowledge_base: measurement.knowledge_base.clone(),
            normalization: measurement.normalization.clone(),
            ..FeatureConfig::default()
        }
    }

    pub fn input_dim(&self) -> usize {
        if self.with_state {
            FEATURE_DIM + 1
        } else {
            FEATURE_DIM
        }
    }
}

/// The assembled per-timestep feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub pose: [f64; 42],
    pub group_size: f64,
    pub ped_speed: f64,
    pub veh_distance: f64,
    pub v2p_angle: f64,
    pub veh_speed: f64,
    pub cw_distance: f64,
    pub cw_angle: f64,
    pub location: f64,
    pub state_flag: Option<f64>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        if self.state_flag.is_some() {
            FEATURE_DIM + 1
        } else {
            FEATURE_DIM
        }
    }

    /// Flattens into the fixed component order.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.pose);
        v.extend_from_slice(&[
            self.group_size,
            self.ped_speed,
            self.veh_distance,
            self.v2p_angle,
            self.veh_speed,
            self.cw_distance,
            self.cw_angle,
            self.location,
        ]);
        if let Some(s) = self.state_flag {
            v.push(s);
        }
        v
    }

    pub fn check_finite(&self) -> Result<(), FeatureError> {
        for (i, v) in self.to_vec().iter().enumerate() {
            if !v.is_finite() {
                return Err(FeatureError::NonFinite(i));
            }
        }
        Ok(())
    }
}

/// Concatenates the 14 feature joints' coordinates in canonical order.
pub fn pose_feature(pose: &crate::scene_model::Pose3D) -> Result<[f64; 42], FeatureError> {
    pose_feature_with_joints(pose, &FEATURE_JOINTS)
}

/// Pose feature over an explicit joint list (3 coordinates per joint).
pub fn pose_feature_with_joints(
    pose: &crate::scene_model::Pose3D,
    joints: &[JointName; 14],
) -> Result<[f64; 42], FeatureError> {
    let mut out = [0.0; 42];
    for (i, name) in joints.iter().enumerate() {
        let v = pose
            .joint(*name)
            .ok_or(GeometryError::MissingJoint(*name))?;
        out[i * 3] = v.x;
        out[i * 3 + 1] = v.y;
        out[i * 3 + 2] = v.z;
    }
    Ok(out)
}

fn sample_or_missing<'a>(
    track: &'a EntityTrack,
    t: f64,
    tol: f64,
) -> Result<&'a Detection, FeatureError> {
    sample_track(track, t, tol).ok_or(FeatureError::MissingDetection { track: track.id, t })
}

/// Number of pedestrians (including the subject) within the group boundary
/// at time t.
pub fn group_size(
    subject: &EntityTrack,
    scene: &SceneBundle,
    t: f64,
    kb: &KnowledgeBase,
) -> Result<usize, FeatureError> {
    group_size_with_tol(subject, scene, t, kb, SAMPLE_TOLERANCE)
}

pub fn group_size_with_tol(
    subject: &EntityTrack,
    scene: &SceneBundle,
    t: f64,
    kb: &KnowledgeBase,
    tol: f64,
) -> Result<usize, FeatureError> {
    let subject_det = sample_or_missing(subject, t, tol)?;
    let mut count = 1usize;
    for other in scene.pedestrians() {
        if other.id == subject.id {
            continue;
        }
        let Some(det) = sample_track(other, t, tol) else {
            continue;
        };
        let d = estimate_distance(
            (subject_det, subject.class),
            (det, other.class),
            kb,
        )?;
        if d <= GROUP_RADIUS_M {
            count += 1;
        }
    }
    Ok(count)
}

/// The approaching vehicle (shrinking subject distance over the lookback
/// window) that is currently closest; absent when no vehicle approaches.
pub fn closest_approaching_vehicle<'a>(
    subject: &EntityTrack,
    scene: &'a SceneBundle,
    t: f64,
    lookback: f64,
    kb: &KnowledgeBase,
) -> Result<Option<&'a EntityTrack>, FeatureError> {
    closest_approaching_vehicle_with_tol(subject, scene, t, lookback, kb, SAMPLE_TOLERANCE)
}

pub fn closest_approaching_vehicle_with_tol<'a>(
    subject: &EntityTrack,
    scene: &'a SceneBundle,
    t: f64,
    lookback: f64,
    kb: &KnowledgeBase,
    tol: f64,
) -> Result<Option<&'a EntityTrack>, FeatureError> {
    debug_assert!(lookback > 0.0);
    let t_prev = t - lookback;
    let subject_now = sample_or_missing(subject, t, tol)?;
    let subject_prev = sample_or_missing(subject, t_prev, tol)?;

    let mut best: Option<(&EntityTrack, f64)> = None;
    for vehicle in scene.vehicles() {
        let (Some(now), Some(prev)) = (
            sample_track(vehicle, t, tol),
            sample_track(vehicle, t_prev, tol),
        ) else {
            continue;
        };
        let d_now = estimate_distance((subject_now, subject.class), (now, vehicle.class), kb)?;
        let d_prev =
            estimate_distance((subject_prev, subject.class), (prev, vehicle.class), kb)?;
        if d_now - d_prev >= 0.0 {
            continue;
        }
        let better = match best {
            None => true,
            Some((b, d_best)) => {
                d_now < d_best || (d_now == d_best && vehicle.id < b.id)
            }
        };
        if better {
            best = Some((vehicle, d_now));
        }
    }
    Ok(best.map(|(v, _)| v))
}

/// 1 - cos of the angle between two planar vectors, in [0, 2].
pub fn one_minus_cos(a: Vector2<f64>, b: Vector2<f64>) -> Result<f64, FeatureError> {
    let na = a.norm();
    let nb = b.norm();
    if na < 1e-12 || nb < 1e-12 {
        return Err(GeometryError::ZeroDirection.into());
    }
    Ok((1.0 - a.dot(&b) / (na * nb)).clamp(0.0, 2.0))
}

/// Vehicle-to-pedestrian angle feature: 1 - cos between the pedestrian body
/// direction and the vehicle displacement over [t1, t2], both in the image
/// plane.
pub fn v2p_angle(
    body_dir_px: Vector2<f64>,
    vehicle: &EntityTrack,
    t1: f64,
    t2: f64,
) -> Result<f64, FeatureError> {
    v2p_angle_with_tol(body_dir_px, vehicle, t1, t2, SAMPLE_TOLERANCE)
}

pub fn v2p_angle_with_tol(
    body_dir_px: Vector2<f64>,
    vehicle: &EntityTrack,
    t1: f64,
    t2: f64,
    tol: f64,
) -> Result<f64, FeatureError> {
    let d1 = sample_or_missing(vehicle, t1, tol)?;
    let d2 = sample_or_missing(vehicle, t2, tol)?;
    one_minus_cos(body_dir_px, d2.anchor - d1.anchor)
}

/// Pedestrian movement/facing direction in the image plane.
///
/// When the detection carries a pose and the scene has a camera, the 3D body
/// orientation is projected into the image; otherwise (or when the projection
/// degenerates) the hip-anchor displacement over the lookback window is used.
pub fn body_direction_px(
    subject: &EntityTrack,
    scene: &SceneBundle,
    t: f64,
    lookback: f64,
    tol: f64,
) -> Result<Vector2<f64>, FeatureError> {
    let det = sample_or_missing(subject, t, tol)?;
    if let (Some(pose), Some(camera)) = (&det.pose, &scene.camera) {
        if let Ok(line) = body_orientation(pose) {
            if let Some(dir) = project_line_direction(&line, camera) {
                return Ok(dir);
            }
        }
    }
    let prev = sample_or_missing(subject, t - lookback, tol)?;
    let disp = det.anchor - prev.anchor;
    if disp.norm() < 1e-12 {
        return Err(GeometryError::ZeroDirection.into());
    }
    Ok(disp)
}

fn project_line_direction(
    line: &OrientationLine,
    camera: &crate::scene_model::CameraModel,
) -> Option<Vector2<f64>> {
    let base = project_point(&line.base_point, camera).ok()?;
    let tip = project_point(&(line.base_point + line.direction), camera).ok()?;
    let dir = tip - base;
    (dir.norm() >= 1e-12).then_some(dir)
}

/// Distance (meters) and angle feature to the closest crosswalk entrance.
pub fn crosswalk_context(
    subject: &EntityTrack,
    scene: &SceneBundle,
    t: f64,
    kb: &KnowledgeBase,
) -> Result<(f64, f64), FeatureError> {
    let cfg = FeatureConfig::default();
    crosswalk_context_with(subject, scene, t, kb, cfg.lookback, cfg.sample_tolerance)
}

pub fn crosswalk_context_with(
    subject: &EntityTrack,
    scene: &SceneBundle,
    t: f64,
    kb: &KnowledgeBase,
    lookback: f64,
    tol: f64,
) -> Result<(f64, f64), FeatureError> {
    if scene.crosswalks.is_empty() {
        return Err(FeatureError::NoCrosswalks);
    }
    let det = sample_or_missing(subject, t, tol)?;
    let h = det.height_px();
    if h <= 0.0 {
        return Err(MeasurementError::ZeroPixelHeight.into());
    }
    let scale = kb.mean_height(subject.class)? / h;

    let closest = scene
        .crosswalks
        .iter()
        .min_by(|a, b| {
            let da = (det.anchor - a.midpoint()).norm();
            let db = (det.anchor - b.midpoint()).norm();
            da.total_cmp(&db)
        })
        .expect("non-empty crosswalk list");
    let d_cw = scale * (det.anchor - closest.midpoint()).norm();

    let body_dir = body_direction_px(subject, scene, t, lookback, tol)?;
    let angle_cw = one_minus_cos(body_dir, closest.entrance_vector())?;
    Ok((d_cw, angle_cw))
}

/// Stencil of 8 pixel offsets sampled around each toe.
const TOE_STENCIL: [(f64, f64); 8] = [
    (2.0, 0.0),
    (-2.0, 0.0),
    (0.0, 2.0),
    (0.0, -2.0),
    (2.0, 2.0),
    (2.0, -2.0),
    (-2.0, 2.0),
    (-2.0, -2.0),
];

/// Modal semantic label around the toe points, encoded as code / 4 in [0, 1].
///
/// 8 pixels are sampled around each toe (16 total, clamped into the grid);
/// ties break toward the highest label code.
pub fn location_semantics(
    det: &Detection,
    semantics: &SemanticGrid,
) -> Result<f64, FeatureError> {
    let toes = det.toes.as_ref().ok_or(FeatureError::MissingToes {
        track: 0,
        t: det.timestamp,
    })?;
    if semantics.is_empty() {
        return Err(FeatureError::EmptySemanticGrid);
    }
    let mut counts = [0usize; 5];
    for toe in toes {
        for (du, dv) in TOE_STENCIL {
            if let Some(label) = semantics.label_at_clamped(toe.x + du, toe.y + dv) {
                counts[label.code() as usize] += 1;
            }
        }
    }
    let mut best = 0usize;
    for code in 1..5 {
        if counts[code] >= counts[best] && counts[code] > 0 {
            best = code;
        } else if counts[best] == 0 {
            best = code;
        }
    }
    let label = SemanticLabel::from_code(best as u8).expect("code in range");
    Ok(f64::from(label.code()) / 4.0)
}

/// Assembles the full feature vector for `subject` at time `t`.
///
/// An absent approaching vehicle contributes zeros to the three vehicle
/// slots.
pub fn assemble_feature(
    subject: &EntityTrack,
    scene: &SceneBundle,
    t: f64,
    config: &FeatureConfig,
) -> Result<FeatureVector, FeatureError> {
    let tol = config.sample_tolerance;
    let kb = &config.knowledge_base;
    let norms = &config.normalization;

    let det = sample_or_missing(subject, t, tol)?;
    let pose = det.pose.as_ref().ok_or(FeatureError::MissingPose {
        track: subject.id,
        t,
    })?;
    let mut pose_f = pose_feature(pose)?;
    for v in pose_f.iter_mut() {
        *v /= norms.pose;
    }

    let group = group_size_with_tol(subject, scene, t, kb, tol)? as f64 / norms.group;
    let ped_speed = pedestrian_speed(subject, t - config.lookback, t, kb)?
        / norms.pedestrian_speed;

    let body_dir = body_direction_px(subject, scene, t, config.lookback, tol)?;

    let vehicle =
        closest_approaching_vehicle_with_tol(subject, scene, t, config.lookback, kb, tol)?;
    let (veh_distance, v2p, veh_speed) = match vehicle {
        Some(v) => {
            let v_det = sample_or_missing(v, t, tol)?;
            let d = estimate_distance((det, subject.class), (v_det, v.class), kb)?;
            let nd = config.distance_norm.apply(d, norms.vehicle_distance)?;
            let angle =
                v2p_angle_with_tol(body_dir, v, t - config.lookback, t, tol)? / norms.v2p_angle;
            let speed = vehicle_speed(v, t - config.lookback, t, kb)? / norms.vehicle_speed;
            (nd, angle, speed)
        }
        None => (0.0, 0.0, 0.0),
    };

    let (d_cw, a_cw) = crosswalk_context_with(subject, scene, t, kb, config.lookback, tol)?;
    let cw_distance = config.distance_norm.apply(d_cw, norms.crosswalk_distance)?;
    let cw_angle = a_cw / norms.crosswalk_angle;

    let location = location_semantics(det, &scene.semantics).map_err(|e| match e {
        FeatureError::MissingToes { t, .. } => FeatureError::MissingToes {
            track: subject.id,
            t,
        },
        other => other,
    })? / norms.location;

    let state_flag = if config.with_state {
        let state = det.state.ok_or(FeatureError::MissingState {
            track: subject.id,
            t,
        })?;
        Some(f64::from(state.label()))
    } else {
        None
    };

    let fv = FeatureVector {
        pose: pose_f,
        group_size: group,
        ped_speed,
        veh_distance,
        v2p_angle: v2p,
        veh_speed,
        cw_distance,
        cw_angle,
        location,
        state_flag,
    };
    fv.check_finite()?;
    Ok(fv)
}

// ---------------------------------------------------------------------------
// Temporal windows
// ---------------------------------------------------------------------------

/// A 15 Hz temporal window of feature vectors with a per-slot presence mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWindow {
    /// Timestamp of the final slot.
    pub t_end: f64,
    pub context_length: f64,
    /// Slot-major feature vectors (each of the configured input dimension).
    pub vectors: Vec<Vec<f64>>,
    pub presence_mask: Vec<bool>,
}

impl FeatureWindow {
    pub fn slots(&self) -> usize {
        self.vectors.len()
    }
}

/// Slots per window: round(15 * context_length), half up.
pub fn slot_count(context_length: f64) -> usize {
    (FEATURE_RATE * context_length).round() as usize
}

fn on_half_step_grid(v: f64, lo: f64, hi: f64) -> bool {
    if v < lo - 1e-9 || v > hi + 1e-9 {
        return false;
    }
    let steps = v / 0.5;
    (steps - steps.round()).abs() < 1e-9
}

fn check_window_params(context: f64, horizon: Option<f64>) -> Result<(), FeatureError> {
    if !on_half_step_grid(context, 0.5, 3.0) {
        return Err(FeatureError::InfeasibleWindowing(format!(
            "context {context} not in 0.5..=3.0 step 0.5"
        )));
    }
    if let Some(h) = horizon {
        if !on_half_step_grid(h, 0.5, 2.0) {
            return Err(FeatureError::InfeasibleWindowing(format!(
                "horizon {h} not in 0.5..=2.0 step 0.5"
            )));
        }
    }
    Ok(())
}

/// First 15 Hz grid index at or after time t.
pub fn slot_index_ceil(t: f64) -> i64 {
    (t * FEATURE_RATE - 1e-9).ceil() as i64
}

/// Last 15 Hz grid index at or before time t.
pub fn slot_index_floor(t: f64) -> i64 {
    (t * FEATURE_RATE + 1e-9).floor() as i64
}

/// Timestamp of a 15 Hz grid index.
pub fn slot_time(m: i64) -> f64 {
    m as f64 / FEATURE_RATE
}

/// Global 15 Hz slot grid index range covered by a track.
fn grid_range(track: &EntityTrack) -> Option<(i64, i64)> {
    let t0 = track.first_timestamp()?;
    let t1 = track.last_timestamp()?;
    Some((slot_index_ceil(t0), slot_index_floor(t1)))
}

fn assemble_window(
    subject: &EntityTrack,
    scene: &SceneBundle,
    m_end: i64,
    n_slots: usize,
    context: f64,
    config: &FeatureConfig,
) -> Result<FeatureWindow, FeatureError> {
    let dim = config.input_dim();
    let mut vectors = Vec::with_capacity(n_slots);
    let mut mask = Vec::with_capacity(n_slots);
    for i in 0..n_slots {
        let m = m_end - (n_slots as i64 - 1) + i as i64;
        match assemble_feature(subject, scene, slot_time(m), config) {
            Ok(fv) => {
                vectors.push(fv.to_vec());
                mask.push(true);
            }
            Err(e) if e.is_missing_data() => {
                vectors.push(vec![0.0; dim]);
                mask.push(false);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(FeatureWindow {
        t_end: slot_time(m_end),
        context_length: context,
        vectors,
        presence_mask: mask,
    })
}

/// Sliding labeled windows at 15 Hz; each window's label is the subject's
/// crossing state at window-end + horizon. Windows whose label time has no
/// ground truth (e.g. beyond scene end) are dropped.
pub fn build_windows(
    subject: &EntityTrack,
    scene: &SceneBundle,
    context_length: f64,
    horizon: f64,
    config: &FeatureConfig,
) -> Result<Vec<(FeatureWindow, u8)>, FeatureError> {
    let multi = build_multitask_windows(subject, scene, context_length, &[horizon], config)?;
    Ok(multi
        .into_iter()
        .map(|(w, labels)| (w, labels[0]))
        .collect())
}

/// Labeled windows for several horizons at once; a window is emitted only
/// when every horizon has a ground-truth label.
pub fn build_multitask_windows(
    subject: &EntityTrack,
    scene: &SceneBundle,
    context_length: f64,
    horizons: &[f64],
    config: &FeatureConfig,
) -> Result<Vec<(FeatureWindow, Vec<u8>)>, FeatureError> {
    check_window_params(context_length, None)?;
    for h in horizons {
        check_window_params(0.5, Some(*h))?;
    }
    let max_horizon = horizons.iter().cloned().fold(f64::MIN, f64::max);
    let (m0, m1) = grid_range(subject).ok_or_else(|| {
        FeatureError::InfeasibleWindowing("subject track has no detections".into())
    })?;
    let n = slot_count(context_length);
    let span = subject.last_timestamp().unwrap() - subject.first_timestamp().unwrap();
    if span + 1e-9 < context_length + max_horizon {
        return Err(FeatureError::InfeasibleWindowing(format!(
            "scene span {span:.3}s shorter than context {context_length} + horizon {max_horizon}"
        )));
    }

    let mut out = Vec::new();
    for m_end in (m0 + n as i64 - 1)..=m1 {
        let t_end = slot_time(m_end);
        let labels: Option<Vec<u8>> = horizons
            .iter()
            .map(|h| {
                subject
                    .state_at(t_end + h, config.sample_tolerance)
                    .map(|s| s.label())
            })
            .collect();
        let Some(labels) = labels else { continue };
        let window = assemble_window(subject, scene, m_end, n, context_length, config)?;
        out.push((window, labels));
    }
    Ok(out)
}

/// One unlabeled window ending at global 15 Hz slot index `m_end`.
///
/// The streaming pipeline emits windows through this same function as the
/// batch enumerators, which keeps online and offline outputs bit-identical.
pub fn prediction_window_at(
    subject: &EntityTrack,
    scene: &SceneBundle,
    m_end: i64,
    context_length: f64,
    config: &FeatureConfig,
) -> Result<FeatureWindow, FeatureError> {
    check_window_params(context_length, None)?;
    assemble_window(
        subject,
        scene,
        m_end,
        slot_count(context_length),
        context_length,
        config,
    )
}

/// Unlabeled sliding windows for prediction (no horizon requirement).
pub fn build_prediction_windows(
    subject: &EntityTrack,
    scene: &SceneBundle,
    context_length: f64,
    config: &FeatureConfig,
) -> Result<Vec<FeatureWindow>, FeatureError> {
    check_window_params(context_length, None)?;
    let (m0, m1) = grid_range(subject).ok_or_else(|| {
        FeatureError::InfeasibleWindowing("subject track has no detections".into())
    })?;
    let n = slot_count(context_length);
    let mut out = Vec::new();
    for m_end in (m0 + n as i64 - 1)..=m1 {
        out.push(assemble_window(
            subject,
            scene,
            m_end,
            n,
            context_length,
            config,
        )?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Dataset records
// ---------------------------------------------------------------------------

/// One exported window: the dataset-file record format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub ped_id: u64,
    pub t_end: f64,
    pub context: f64,
    pub horizon: f64,
    pub x: Vec<Vec<f64>>,
    pub mask: Vec<bool>,
    pub y: u8,
}

/// Builds export records for every pedestrian (or one subject) of a scene.
pub fn extract_scene_windows(
    scene: &SceneBundle,
    subject: Option<u64>,
    context: f64,
    horizon: f64,
    config: &FeatureConfig,
) -> Result<Vec<WindowRecord>, FeatureError> {
    let mut out = Vec::new();
    for track in scene.pedestrians() {
        if let Some(id) = subject {
            if track.id != id {
                continue;
            }
        }
        let windows = build_windows(track, scene, context, horizon, config)?;
        for (w, y) in windows {
            out.push(WindowRecord {
                ped_id: track.id,
                t_end: w.t_end,
                context,
                horizon,
                x: w.vectors,
                mask: w.presence_mask,
                y,
            });
        }
    }
    Ok(out)
}

/// Writes window records as JSON lines.
pub fn write_dataset(
    records: &[WindowRecord],
    path: impl AsRef<Path>,
) -> Result<(), std::io::Error> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for rec in records {
        serde_json::to_writer(&mut file, rec)?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads window records from a JSON-lines dataset file.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<WindowRecord>, std::io::Error> {
    let file = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in file.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: WindowRecord = serde_json::from_str(&line)?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_model::{BoundingBox, ObjectClass, Pose3D};
    use crate::synthetic::{generate_scene, ScenarioSpec, Script};
    use approx::assert_relative_eq;
    use nalgebra::Vector3;

    fn synthetic_scene(script: Script, seed: u64) -> (SceneBundle, crate::synthetic::SceneTruth) {
        generate_scene(&ScenarioSpec {
            script,
            n_pedestrians: 3,
            n_vehicles: 3,
            duration: 9.0,
            noise: 0.0,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn pose_feature_zero_pose() {
        let mut pose = Pose3D::new(0.0);
        for j in FEATURE_JOINTS {
            pose.joints.insert(j, Vector3::zeros());
        }
        let f = pose_feature(&pose).unwrap();
        assert!(f.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn pose_feature_canonical_order() {
        // Order oracle: per-joint lookup against the canonical list.
        let mut pose = Pose3D::new(0.0);
        for (i, j) in FEATURE_JOINTS.iter().enumerate() {
            pose.joints
                .insert(*j, Vector3::new(i as f64, 100.0 + i as f64, -(i as f64)));
        }
        let f = pose_feature(&pose).unwrap();
        for (i, j) in FEATURE_JOINTS.iter().enumerate() {
            let v = pose.joint(*j).unwrap();
            assert_eq!(f[i * 3], v.x);
            assert_eq!(f[i * 3 + 1], v.y);
            assert_eq!(f[i * 3 + 2], v.z);
        }
    }

    #[test]
    fn pose_feature_missing_joint() {
        let mut pose = Pose3D::new(0.0);
        for j in FEATURE_JOINTS.iter().skip(1) {
            pose.joints.insert(*j, Vector3::zeros());
        }
        assert!(matches!(
            pose_feature(&pose),
            Err(FeatureError::Geometry(GeometryError::MissingJoint(_)))
        ));
    }

    fn simple_person(id: u64, x: f64, h: f64) -> EntityTrack {
        let mut track = EntityTrack::new(id, ObjectClass::Person);
        for k in 0..2 {
            let t = k as f64 * 0.5;
            track.detections.push(Detection {
                timestamp: t,
                bbox: BoundingBox {
                    u_min: x - 10.0,
                    v_min: 100.0 - h,
                    u_max: x + 10.0,
                    v_max: 100.0,
                },
                anchor: Vector2::new(x, 100.0),
                pose: None,
                toes: None,
                state: None,
            });
        }
        track
    }

    fn bare_scene(tracks: Vec<EntityTrack>) -> SceneBundle {
        SceneBundle {
            tracks,
            crosswalks: vec![],
            semantics: crate::scene_model::SemanticGrid::filled(
                1,
                1,
                SemanticLabel::Other,
            ),
            camera: None,
            frame_rate: 30.0,
        }
    }

    #[test]
    fn group_size_counts_subject_and_neighbors() {
        let kb = KnowledgeBase::default();
        // 170 px tall; 0.01 m/px. 2 m apart = 200 px; 10 m = 1000 px.
        let subject = simple_person(1, 0.0, 170.0);
        let near = simple_person(2, 200.0, 170.0);
        let far = simple_person(3, 1000.0, 170.0);

        let scene = bare_scene(vec![subject.clone()]);
        assert_eq!(group_size(&scene.tracks[0], &scene, 0.0, &kb).unwrap(), 1);

        let scene = bare_scene(vec![subject.clone(), near.clone()]);
        assert_eq!(group_size(&scene.tracks[0], &scene, 0.0, &kb).unwrap(), 2);

        let scene = bare_scene(vec![subject, far]);
        assert_eq!(group_size(&scene.tracks[0], &scene, 0.0, &kb).unwrap(), 1);
    }

    fn vehicle_track(id: u64, xs: &[f64]) -> EntityTrack {
        let mut track = EntityTrack::new(id, ObjectClass::Car);
        for (k, x) in xs.iter().enumerate() {
            let t = k as f64 * 0.5;
            track.detections.push(Detection {
                timestamp: t,
                bbox: BoundingBox {
                    u_min: x - 50.0,
                    v_min: 0.0,
                    u_max: x + 50.0,
                    v_max: 150.0,
                },
                anchor: Vector2::new(*x, 75.0),
                pose: None,
                toes: None,
                state: None,
            });
        }
        track
    }

    #[test]
    fn approaching_vehicle_selection() {
        let kb = KnowledgeBase::default();
        let subject = simple_person(1, 0.0, 170.0);
        // 0.01 m/px: approaching from 2000 px (20 m) to 1500 px (15 m).
        let approaching = vehicle_track(101, &[2000.0, 1500.0]);
        // receding
        let receding = vehicle_track(102, &[1500.0, 2000.0]);

        let scene = bare_scene(vec![subject, approaching, receding]);
        let subject = scene.track(1).unwrap();
        let got = closest_approaching_vehicle(subject, &scene, 0.5, 0.5, &kb)
            .unwrap()
            .expect("approaching vehicle");
        assert_eq!(got.id, 101);
    }

    #[test]
    fn receding_only_gives_absent() {
        let kb = KnowledgeBase::default();
        let subject = simple_person(1, 0.0, 170.0);
        let receding = vehicle_track(102, &[1500.0, 2000.0]);
        let scene = bare_scene(vec![subject, receding]);
        let subject = scene.track(1).unwrap();
        assert!(closest_approaching_vehicle(subject, &scene, 0.5, 0.5, &kb)
            .unwrap()
            .is_none());
    }

    #[test]
    fn two_approachers_argmin_current_distance() {
        let kb = KnowledgeBase::default();
        let subject = simple_person(1, 0.0, 170.0);
        let far = vehicle_track(101, &[2000.0, 1200.0]);
        let near = vehicle_track(102, &[1500.0, 800.0]);
        let scene = bare_scene(vec![subject, far, near]);
        let subject = scene.track(1).unwrap();
        let got = closest_approaching_vehicle(subject, &scene, 0.5, 0.5, &kb)
            .unwrap()
            .expect("approaching vehicle");
        assert_eq!(got.id, 102);
    }

    #[test]
    fn v2p_angle_parallel_perpendicular_antiparallel() {
        let v = vehicle_track(101, &[0.0, 100.0]);
        let east = Vector2::new(1.0, 0.0);
        let north = Vector2::new(0.0, 1.0);
        let west = Vector2::new(-1.0, 0.0);
        assert_relative_eq!(v2p_angle(east, &v, 0.0, 0.5).unwrap(), 0.0);
        assert_relative_eq!(v2p_angle(north, &v, 0.0, 0.5).unwrap(), 1.0);
        assert_relative_eq!(v2p_angle(west, &v, 0.0, 0.5).unwrap(), 2.0);
    }

    #[test]
    fn location_semantics_cases() {
        let mut grid = crate::scene_model::SemanticGrid::filled(
            64,
            64,
            SemanticLabel::Sidewalk,
        );
        let mut det = simple_person(1, 32.0, 20.0).detections[0].clone();
        det.toes = Some([Vector2::new(20.0, 32.0), Vector2::new(44.0, 32.0)]);
        // unanimous sidewalk
        assert_relative_eq!(location_semantics(&det, &grid).unwrap(), 0.25);

        // paint the right half crosswalk: right toe's 8 samples + left toe's
        // x=22 column samples stay sidewalk -> 9 crosswalk vs 7 sidewalk? No:
        // make right half (x >= 32) crosswalk so exactly 8 samples flip.
        for y in 0..64 {
            for x in 32..64 {
                grid.set(x, y, SemanticLabel::Crosswalk);
            }
        }
        // 8 crosswalk vs 8 sidewalk: tie breaks toward the higher code.
        assert_relative_eq!(location_semantics(&det, &grid).unwrap(), 0.5);

        // strict majority: one more crosswalk pixel around the left toe
        for y in 0..64 {
            for x in 18..23 {
                grid.set(x, y, SemanticLabel::Crosswalk);
            }
        }
        assert_relative_eq!(location_semantics(&det, &grid).unwrap(), 0.5);
    }

    #[test]
    fn assemble_feature_dimensions() {
        let (scene, truth) = synthetic_scene(Script::ApproachWaitCross, 7);
        let subject = scene.track(truth.protagonist).unwrap();
        let cfg = FeatureConfig::default();
        let fv = assemble_feature(subject, &scene, 2.0, &cfg).unwrap();
        assert_eq!(fv.dim(), 50);
        assert_eq!(fv.to_vec().len(), 50);

        let cfg = cfg.with_state(true);
        let fv = assemble_feature(subject, &scene, 2.0, &cfg).unwrap();
        assert_eq!(fv.dim(), 51);
        assert_eq!(fv.to_vec().len(), 51);
    }

    #[test]
    fn absent_vehicle_zeroes_slots_44_to_46() {
        let (scene, truth) = synthetic_scene(Script::CrossImmediately, 11);
        // Drop all vehicles from the scene.
        let mut scene = scene;
        scene.tracks.retain(|t| t.class == ObjectClass::Person);
        let subject = scene.track(truth.protagonist).unwrap();
        let cfg = FeatureConfig::default();
        let fv = assemble_feature(subject, &scene, 2.0, &cfg).unwrap();
        let v = fv.to_vec();
        assert_eq!(v[44], 0.0);
        assert_eq!(v[45], 0.0);
        assert_eq!(v[46], 0.0);
    }

    #[test]
    fn window_slot_counts() {
        assert_eq!(slot_count(0.5), 8);
        assert_eq!(slot_count(3.0), 45);
        assert_eq!(slot_count(1.0), 15);
    }

    #[test]
    fn window_labels_match_brute_force_rescan() {
        let (scene, truth) = synthetic_scene(Script::ApproachWaitCross, 9);
        let subject = scene.track(truth.protagonist).unwrap();
        let cfg = FeatureConfig::default();
        let horizon = 1.5;
        let windows = build_windows(subject, &scene, 0.5, horizon, &cfg).unwrap();
        assert!(!windows.is_empty());
        for (w, label) in &windows {
            // Brute-force re-scan of the labeled track.
            let want = subject
                .detections
                .iter()
                .min_by(|a, b| {
                    (a.timestamp - w.t_end - horizon)
                        .abs()
                        .total_cmp(&(b.timestamp - w.t_end - horizon).abs())
                })
                .and_then(|d| d.state)
                .unwrap();
            assert_eq!(*label, want.label());
            assert_eq!(w.slots(), 8);
        }
        // The script flips to crossing, so both labels must occur.
        assert!(windows.iter().any(|(_, y)| *y == 1));
        assert!(windows.iter().any(|(_, y)| *y == 0));
    }

    #[test]
    fn window_too_short_scene_rejected() {
        let (scene, truth) = synthetic_scene(Script::WalkThrough, 2);
        let mut scene = scene;
        for track in &mut scene.tracks {
            track.detections.truncate(20); // ~0.63 s
        }
        let subject = scene.track(truth.protagonist).unwrap();
        let cfg = FeatureConfig::default();
        assert!(matches!(
            build_windows(subject, &scene, 0.5, 1.5, &cfg),
            Err(FeatureError::InfeasibleWindowing(_))
        ));
    }

    #[test]
    fn angle_closure_against_generator_truth() {
        // v2p and crosswalk angles recovered from the noise-free scene match
        // the generator's world-plane ground truth.
        let (scene, truth) = synthetic_scene(Script::ApproachNoCross, 33);
        let subject = scene.track(truth.protagonist).unwrap();
        let cfg = FeatureConfig::default();
        let kb = KnowledgeBase::default();

        let mut checked = 0;
        for t in [2.0f64, 3.0, 4.0, 5.0] {
            let Some(vehicle) =
                closest_approaching_vehicle(subject, &scene, t, 0.5, &kb).unwrap()
            else {
                continue;
            };
            let body = body_direction_px(subject, &scene, t, 0.5, cfg.sample_tolerance).unwrap();
            let got = v2p_angle(body, vehicle, t - 0.5, t).unwrap();

            let facing = truth.frame_at(subject.id, t).unwrap().facing_deg.unwrap();
            let body_world = crate::synthetic::direction_of_angle(facing);
            let v1 = truth.frame_at(vehicle.id, t - 0.5).unwrap().anchor_world;
            let v2 = truth.frame_at(vehicle.id, t).unwrap().anchor_world;
            let want = one_minus_cos(body_world, v2 - v1).unwrap();
            assert_relative_eq!(got, want, epsilon = 1e-9);
            checked += 1;
        }
        assert!(checked > 0, "no vehicle interaction sampled");

        // Crosswalk distance closure: waiting spot is 0.7 m from the
        // entrance midpoint line.
        let (d_cw, _) = crosswalk_context(subject, &scene, 8.0, &kb).unwrap();
        let pos = truth.frame_at(subject.id, 8.0).unwrap().anchor_world;
        let near = Vector2::new(0.0, -3.5);
        let far = Vector2::new(0.0, 3.5);
        let want = ((pos - near).norm()).min((pos - far).norm());
        assert_relative_eq!(d_cw, want, max_relative = 1e-9);
    }
}
