//! Canonical data model for scenes, tracks, poses and annotations.
//!
//! A scene is a set of time-indexed entity tracks (pedestrians, vehicles)
//! plus static context: crosswalk entrances, a semantic grid and an optional
//! camera model. Scenes are ingested from and serialized to a line-delimited
//! track-file format (see [`io`]).

mod io;

pub use io::{
    append_detection, load_scene, parse_record, save_scene, scene_from_reader, scene_to_string,
    SceneMeta, TrackRecord,
};

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Default nearest-detection sampling tolerance (one 15 Hz slot).
pub const SAMPLE_TOLERANCE: f64 = 1.0 / 15.0;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("record {line}: malformed JSON: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("record {line}: field `{field}`: {message}")]
    Schema {
        line: usize,
        field: String,
        message: String,
    },
    #[error("record {line}: unknown class string `{value}`")]
    UnknownClass { line: usize, value: String },
    #[error("track {track}: non-monotone timestamps at t={timestamp}")]
    NonMonotoneTimestamps { track: u64, timestamp: f64 },
    #[error("track {track}: class changed mid-track (record {line})")]
    ClassMismatch { track: u64, line: usize },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid semantic grid: {0}")]
    InvalidGrid(String),
    #[error("invalid scene: {0}")]
    Invalid(String),
}

/// Named skeleton joints of the canonical joint set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointName {
    HeadTop,
    Jaw,
    EyeL,
    EyeR,
    Neck,
    ShoulderL,
    ShoulderR,
    ElbowL,
    ElbowR,
    WristL,
    WristR,
    HipL,
    HipR,
    HipMid,
    KneeL,
    KneeR,
    AnkleL,
    AnkleR,
}

impl JointName {
    pub const ALL: [JointName; 18] = [
        JointName::HeadTop,
        JointName::Jaw,
        JointName::EyeL,
        JointName::EyeR,
        JointName::Neck,
        JointName::ShoulderL,
        JointName::ShoulderR,
        JointName::ElbowL,
        JointName::ElbowR,
        JointName::WristL,
        JointName::WristR,
        JointName::HipL,
        JointName::HipR,
        JointName::HipMid,
        JointName::KneeL,
        JointName::KneeR,
        JointName::AnkleL,
        JointName::AnkleR,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            JointName::HeadTop => "head_top",
            JointName::Jaw => "jaw",
            JointName::EyeL => "eye_l",
            JointName::EyeR => "eye_r",
            JointName::Neck => "neck",
            JointName::ShoulderL => "shoulder_l",
            JointName::ShoulderR => "shoulder_r",
            JointName::ElbowL => "elbow_l",
            JointName::ElbowR => "elbow_r",
            JointName::WristL => "wrist_l",
            JointName::WristR => "wrist_r",
            JointName::HipL => "hip_l",
            JointName::HipR => "hip_r",
            JointName::HipMid => "hip_mid",
            JointName::KneeL => "knee_l",
            JointName::KneeR => "knee_r",
            JointName::AnkleL => "ankle_l",
            JointName::AnkleR => "ankle_r",
        }
    }

    pub fn parse(s: &str) -> Option<JointName> {
        JointName::ALL.iter().copied().find(|j| j.as_str() == s)
    }
}

/// One pedestrian's 3D joint set at one timestamp, in normalized pose space
/// (x right, y up, z toward camera; unitless).
#[derive(Debug, Clone, PartialEq)]
pub struct Pose3D {
    pub joints: BTreeMap<JointName, Vector3<f64>>,
    pub timestamp: f64,
}

impl Pose3D {
    pub fn new(timestamp: f64) -> Self {
        Pose3D {
            joints: BTreeMap::new(),
            timestamp,
        }
    }

    pub fn joint(&self, name: JointName) -> Option<&Vector3<f64>> {
        self.joints.get(&name)
    }

    pub fn has_joints(&self, names: &[JointName]) -> bool {
        names.iter().all(|n| self.joints.contains_key(n))
    }

    pub fn all_finite(&self) -> bool {
        self.joints.values().all(|v| v.iter().all(|c| c.is_finite()))
    }

    /// Rigidly translate every joint.
    pub fn translated(&self, offset: Vector3<f64>) -> Pose3D {
        Pose3D {
            joints: self.joints.iter().map(|(k, v)| (*k, v + offset)).collect(),
            timestamp: self.timestamp,
        }
    }
}

/// Pinhole camera: intrinsic matrix K, rotation R and translation t.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    intrinsic: Matrix3<f64>,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

const ORTHONORMALITY_TOL: f64 = 1e-9;

impl CameraModel {
    /// Validates K upper-triangular with positive focal entries and R
    /// orthonormal (RᵀR = I within 1e-9).
    pub fn new(
        intrinsic: Matrix3<f64>,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self, SceneError> {
        if !intrinsic.iter().all(|v| v.is_finite())
            || !rotation.iter().all(|v| v.is_finite())
            || !translation.iter().all(|v| v.is_finite())
        {
            return Err(SceneError::InvalidCamera("non-finite entry".into()));
        }
        if intrinsic[(1, 0)] != 0.0 || intrinsic[(2, 0)] != 0.0 || intrinsic[(2, 1)] != 0.0 {
            return Err(SceneError::InvalidCamera(
                "intrinsic matrix not upper-triangular".into(),
            ));
        }
        if intrinsic[(0, 0)] <= 0.0 || intrinsic[(1, 1)] <= 0.0 {
            return Err(SceneError::InvalidCamera(
                "non-positive focal length".into(),
            ));
        }
        let gram = rotation.transpose() * rotation;
        let dev = (gram - Matrix3::identity()).abs().max();
        if dev > ORTHONORMALITY_TOL {
            return Err(SceneError::InvalidCamera(format!(
                "rotation not orthonormal (deviation {dev:.3e})"
            )));
        }
        Ok(CameraModel {
            intrinsic,
            rotation,
            translation,
        })
    }

    pub fn intrinsic(&self) -> &Matrix3<f64> {
        &self.intrinsic
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }
}

/// Object classes recognized by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ObjectClass {
    Person,
    Cyclist,
    Car,
    Bus,
    Truck,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 5] = [
        ObjectClass::Person,
        ObjectClass::Cyclist,
        ObjectClass::Car,
        ObjectClass::Bus,
        ObjectClass::Truck,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ObjectClass::Person => "Person",
            ObjectClass::Cyclist => "Cyclist",
            ObjectClass::Car => "Car",
            ObjectClass::Bus => "Bus",
            ObjectClass::Truck => "Truck",
        }
    }

    pub fn parse(s: &str) -> Option<ObjectClass> {
        ObjectClass::ALL.iter().copied().find(|c| c.as_str() == s)
    }

    /// Motorized road vehicles considered for V2P interaction features.
    pub fn is_vehicle(&self) -> bool {
        matches!(self, ObjectClass::Car | ObjectClass::Bus | ObjectClass::Truck)
    }
}

/// Crossing / not-crossing ground-truth state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossingState {
    NotCrossing,
    Crossing,
}

impl CrossingState {
    pub fn as_str(&self) -> &'static str {
        match self {
            CrossingState::NotCrossing => "not_crossing",
            CrossingState::Crossing => "crossing",
        }
    }

    pub fn parse(s: &str) -> Option<CrossingState> {
        match s {
            "not_crossing" => Some(CrossingState::NotCrossing),
            "crossing" => Some(CrossingState::Crossing),
            _ => None,
        }
    }

    /// Binary label with crossing as the positive class.
    pub fn label(&self) -> u8 {
        match self {
            CrossingState::NotCrossing => 0,
            CrossingState::Crossing => 1,
        }
    }
}

/// Axis-aligned pixel bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
}

impl BoundingBox {
    pub fn height(&self) -> f64 {
        self.v_max - self.v_min
    }

    pub fn width(&self) -> f64 {
        self.u_max - self.u_min
    }

    pub fn is_valid(&self) -> bool {
        [self.u_min, self.v_min, self.u_max, self.v_max]
            .iter()
            .all(|v| v.is_finite())
            && self.u_max > self.u_min
            && self.v_max > self.v_min
    }
}

/// One detection of one entity at one timestamp.
///
/// `anchor` is the hip joint's image position for pedestrians and the
/// middle-front point for vehicles; it is supplied explicitly rather than
/// inferred.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub timestamp: f64,
    pub bbox: BoundingBox,
    pub anchor: Vector2<f64>,
    pub pose: Option<Pose3D>,
    pub toes: Option<[Vector2<f64>; 2]>,
    pub state: Option<CrossingState>,
}

impl Detection {
    /// Measured height in pixels (bounding-box height).
    pub fn height_px(&self) -> f64 {
        self.bbox.height()
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.timestamp.is_finite() {
            return Err("non-finite timestamp".into());
        }
        if !self.bbox.is_valid() {
            return Err("degenerate bbox (requires u_max > u_min, v_max > v_min)".into());
        }
        if !self.anchor.iter().all(|v| v.is_finite()) {
            return Err("non-finite anchor".into());
        }
        if let Some(pose) = &self.pose {
            if !pose.all_finite() {
                return Err("non-finite pose joint".into());
            }
        }
        if let Some(toes) = &self.toes {
            if !toes.iter().all(|t| t.iter().all(|v| v.is_finite())) {
                return Err("non-finite toe point".into());
            }
        }
        Ok(())
    }
}

/// Time-ordered detections of one tracked object.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityTrack {
    pub id: u64,
    pub class: ObjectClass,
    pub detections: Vec<Detection>,
}

impl EntityTrack {
    pub fn new(id: u64, class: ObjectClass) -> Self {
        EntityTrack {
            id,
            class,
            detections: Vec::new(),
        }
    }

    pub fn first_timestamp(&self) -> Option<f64> {
        self.detections.first().map(|d| d.timestamp)
    }

    pub fn last_timestamp(&self) -> Option<f64> {
        self.detections.last().map(|d| d.timestamp)
    }

    /// Time-indexed ground-truth states carried by this track's detections.
    pub fn state_labels(&self) -> impl Iterator<Item = (f64, CrossingState)> + '_ {
        self.detections
            .iter()
            .filter_map(|d| d.state.map(|s| (d.timestamp, s)))
    }

    /// Ground-truth state at the detection nearest to `t` (within `tolerance`).
    pub fn state_at(&self, t: f64, tolerance: f64) -> Option<CrossingState> {
        sample_track(self, t, tolerance).and_then(|d| d.state)
    }

    pub fn check_monotone(&self) -> Result<(), SceneError> {
        for pair in self.detections.windows(2) {
            if pair[1].timestamp <= pair[0].timestamp {
                return Err(SceneError::NonMonotoneTimestamps {
                    track: self.id,
                    timestamp: pair[1].timestamp,
                });
            }
        }
        Ok(())
    }
}

/// Returns the detection with timestamp nearest to `t` if within `tolerance`.
///
/// Ties between two equidistant detections resolve to the earlier one.
pub fn sample_track(track: &EntityTrack, t: f64, tolerance: f64) -> Option<&Detection> {
    debug_assert!(tolerance >= 0.0);
    let dets = &track.detections;
    if dets.is_empty() {
        return None;
    }
    let idx = dets.partition_point(|d| d.timestamp < t);
    let mut best: Option<&Detection> = None;
    if idx > 0 {
        best = Some(&dets[idx - 1]);
    }
    if idx < dets.len() {
        let cand = &dets[idx];
        best = match best {
            Some(prev) if (prev.timestamp - t).abs() <= (cand.timestamp - t).abs() => Some(prev),
            _ => Some(cand),
        };
    }
    best.filter(|d| (d.timestamp - t).abs() <= tolerance)
}

/// One crosswalk entrance: a line segment on the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrosswalkEntrance {
    pub endpoints: [Vector2<f64>; 2],
}

impl CrosswalkEntrance {
    pub fn new(a: Vector2<f64>, b: Vector2<f64>) -> Result<Self, SceneError> {
        if !a.iter().all(|v| v.is_finite()) || !b.iter().all(|v| v.is_finite()) {
            return Err(SceneError::Invalid("non-finite crosswalk endpoint".into()));
        }
        if a == b {
            return Err(SceneError::Invalid(
                "crosswalk entrance endpoints coincide".into(),
            ));
        }
        Ok(CrosswalkEntrance { endpoints: [a, b] })
    }

    pub fn midpoint(&self) -> Vector2<f64> {
        (self.endpoints[0] + self.endpoints[1]) / 2.0
    }

    pub fn entrance_vector(&self) -> Vector2<f64> {
        self.endpoints[1] - self.endpoints[0]
    }
}

/// Per-pixel semantic labels of the static environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[repr(u8)]
pub enum SemanticLabel {
    Road = 0,
    Sidewalk = 1,
    Crosswalk = 2,
    Vehicle = 3,
    Other = 4,
}

impl SemanticLabel {
    pub fn code(&self) -> u8 {
        *self as u8
    }

    pub fn from_code(code: u8) -> Option<SemanticLabel> {
        match code {
            0 => Some(SemanticLabel::Road),
            1 => Some(SemanticLabel::Sidewalk),
            2 => Some(SemanticLabel::Crosswalk),
            3 => Some(SemanticLabel::Vehicle),
            4 => Some(SemanticLabel::Other),
            _ => None,
        }
    }
}

/// Dense label grid; `labels` is row-major, size width × height.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticGrid {
    width: usize,
    height: usize,
    labels: Vec<SemanticLabel>,
}

impl SemanticGrid {
    pub fn new(width: usize, height: usize, labels: Vec<SemanticLabel>) -> Result<Self, SceneError> {
        if labels.len() != width * height {
            return Err(SceneError::InvalidGrid(format!(
                "label array size {} != width x height {}",
                labels.len(),
                width * height
            )));
        }
        Ok(SemanticGrid {
            width,
            height,
            labels,
        })
    }

    pub fn filled(width: usize, height: usize, label: SemanticLabel) -> SemanticGrid {
        SemanticGrid {
            width,
            height,
            labels: vec![label; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[SemanticLabel] {
        &self.labels
    }

    pub fn set(&mut self, x: usize, y: usize, label: SemanticLabel) {
        let idx = y * self.width + x;
        self.labels[idx] = label;
    }

    /// Label at pixel (u, v), with coordinates clamped into the grid.
    pub fn label_at_clamped(&self, u: f64, v: f64) -> Option<SemanticLabel> {
        if self.labels.is_empty() {
            return None;
        }
        let x = (u.round().max(0.0) as usize).min(self.width - 1);
        let y = (v.round().max(0.0) as usize).min(self.height - 1);
        Some(self.labels[y * self.width + x])
    }
}

/// All tracks plus static context for one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub tracks: Vec<EntityTrack>,
    pub crosswalks: Vec<CrosswalkEntrance>,
    pub semantics: SemanticGrid,
    pub camera: Option<CameraModel>,
    pub frame_rate: f64,
}

impl SceneBundle {
    pub fn track(&self, id: u64) -> Option<&EntityTrack> {
        self.tracks.iter().find(|t| t.id == id)
    }

    pub fn pedestrians(&self) -> impl Iterator<Item = &EntityTrack> {
        self.tracks
            .iter()
            .filter(|t| t.class == ObjectClass::Person)
    }

    pub fn vehicles(&self) -> impl Iterator<Item = &EntityTrack> {
        self.tracks.iter().filter(|t| t.class.is_vehicle())
    }

    /// (earliest, latest) detection timestamp over all tracks.
    pub fn time_span(&self) -> Option<(f64, f64)> {
        let mut span: Option<(f64, f64)> = None;
        for track in &self.tracks {
            if let (Some(a), Some(b)) = (track.first_timestamp(), track.last_timestamp()) {
                span = Some(match span {
                    None => (a, b),
                    Some((lo, hi)) => (lo.min(a), hi.max(b)),
                });
            }
        }
        span
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.frame_rate > 0.0) {
            return Err(SceneError::Invalid("frame_rate must be positive".into()));
        }
        for track in &self.tracks {
            track.check_monotone()?;
            for det in &track.detections {
                det.validate()
                    .map_err(|message| SceneError::Invalid(format!("track {}: {message}", track.id)))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(t: f64) -> Detection {
        Detection {
            timestamp: t,
            bbox: BoundingBox {
                u_min: 0.0,
                v_min: 0.0,
                u_max: 10.0,
                v_max: 20.0,
            },
            anchor: Vector2::new(5.0, 20.0),
            pose: None,
            toes: None,
            state: None,
        }
    }

    #[test]
    fn sample_track_exact_hit() {
        let mut track = EntityTrack::new(1, ObjectClass::Person);
        track.detections = vec![det(0.0), det(0.1)];
        let got = sample_track(&track, 0.1, 0.02).expect("hit");
        assert_eq!(got.timestamp, 0.1);
    }

    #[test]
    fn sample_track_outside_tolerance_is_absent() {
        let mut track = EntityTrack::new(1, ObjectClass::Person);
        track.detections = vec![det(0.0), det(0.1)];
        assert!(sample_track(&track, 0.05, 0.02).is_none());
    }

    #[test]
    fn sample_track_nearest_within_tolerance() {
        let mut track = EntityTrack::new(1, ObjectClass::Person);
        track.detections = vec![det(0.0), det(0.1)];
        let got = sample_track(&track, 0.09, 0.02).expect("hit");
        assert_eq!(got.timestamp, 0.1);
    }

    #[test]
    fn sample_track_empty() {
        let track = EntityTrack::new(1, ObjectClass::Person);
        assert!(sample_track(&track, 0.0, 1.0).is_none());
    }

    #[test]
    fn monotone_check_rejects_duplicates() {
        let mut track = EntityTrack::new(7, ObjectClass::Person);
        track.detections = vec![det(0.0), det(0.0)];
        assert!(matches!(
            track.check_monotone(),
            Err(SceneError::NonMonotoneTimestamps { track: 7, .. })
        ));
    }

    #[test]
    fn camera_rejects_skewed_lower_triangle() {
        let mut k = Matrix3::identity();
        k[(0, 0)] = 100.0;
        k[(1, 1)] = 100.0;
        k[(1, 0)] = 5.0;
        assert!(CameraModel::new(k, Matrix3::identity(), Vector3::zeros()).is_err());
    }

    #[test]
    fn camera_rejects_non_orthonormal_rotation() {
        let mut k = Matrix3::identity();
        k[(0, 0)] = 100.0;
        k[(1, 1)] = 100.0;
        let mut r = Matrix3::identity();
        r[(0, 0)] = 1.1;
        assert!(CameraModel::new(k, r, Vector3::zeros()).is_err());
    }

    #[test]
    fn crosswalk_midpoint_is_mean() {
        let cw =
            CrosswalkEntrance::new(Vector2::new(0.0, 0.0), Vector2::new(4.0, 2.0)).unwrap();
        assert_eq!(cw.midpoint(), Vector2::new(2.0, 1.0));
        assert_eq!(cw.entrance_vector(), Vector2::new(4.0, 2.0));
    }

    #[test]
    fn grid_clamps_out_of_range() {
        let grid = SemanticGrid::filled(4, 2, SemanticLabel::Sidewalk);
        assert_eq!(
            grid.label_at_clamped(-3.0, 100.0),
            Some(SemanticLabel::Sidewalk)
        );
    }

    #[test]
    fn grid_size_mismatch_rejected() {
        assert!(SemanticGrid::new(3, 3, vec![SemanticLabel::Road; 8]).is_err());
    }
}
