//! Knowledge-base metric reconstruction: inter-object distance, pedestrian
//! and vehicle speed, and feature normalizations.
//!
//! Physical dimensions are approximated from pixel measurements using a
//! knowledge-base of class-average object heights: a pixel quantity is scaled
//! by mean_height / measured_pixel_height, which cancels any uniform pixel
//! rescaling of the scene.

use crate::scene_model::{sample_track, Detection, EntityTrack, ObjectClass, SAMPLE_TOLERANCE};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Minimum time window for a stable pedestrian speed measurement (seconds).
pub const MIN_SPEED_WINDOW: f64 = 0.5;

// Slack for floating-point window-length comparisons.
const WINDOW_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum MeasurementError {
    #[error("zero or negative pixel height")]
    ZeroPixelHeight,
    #[error("negative distance")]
    NegativeDistance,
    #[error("window too short: {got}s < {min}s")]
    WindowTooShort { got: f64, min: f64 },
    #[error("track {track}: no detection within {tolerance}s of t={t}")]
    MissingDetection { track: u64, t: f64, tolerance: f64 },
    #[error("empty time window (t2 must exceed t1)")]
    EmptyWindow,
    #[error("no mean height for class {0:?}")]
    UnknownClassHeight(ObjectClass),
}

/// Class-average object heights in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub mean_heights: BTreeMap<ObjectClass, f64>,
}

impl Default for KnowledgeBase {
    fn default() -> Self {
        let mean_heights = [
            (ObjectClass::Person, 1.7),
            (ObjectClass::Cyclist, 1.5),
            (ObjectClass::Car, 1.5),
            (ObjectClass::Bus, 2.5),
            (ObjectClass::Truck, 3.0),
        ]
        .into_iter()
        .collect();
        KnowledgeBase { mean_heights }
    }
}

impl KnowledgeBase {
    pub fn mean_height(&self, class: ObjectClass) -> Result<f64, MeasurementError> {
        self.mean_heights
            .get(&class)
            .copied()
            .filter(|h| *h > 0.0)
            .ok_or(MeasurementError::UnknownClassHeight(class))
    }

    pub fn validate(&self) -> Result<(), MeasurementError> {
        for class in ObjectClass::ALL {
            self.mean_height(class)?;
        }
        Ok(())
    }
}

/// Per-feature normalization factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalizationFactors {
    pub group: f64,
    pub pedestrian_speed: f64,
    pub vehicle_distance: f64,
    pub v2p_angle: f64,
    pub vehicle_speed: f64,
    pub crosswalk_distance: f64,
    pub crosswalk_angle: f64,
    pub location: f64,
    pub pose: f64,
}

impl Default for NormalizationFactors {
    fn default() -> Self {
        NormalizationFactors {
            group: 10.0,
            pedestrian_speed: 5.0,
            vehicle_distance: 10.0,
            v2p_angle: 1.0,
            vehicle_speed: 10.0,
            crosswalk_distance: 10.0,
            crosswalk_angle: 1.0,
            location: 1.0,
            pose: 1.0,
        }
    }
}

impl NormalizationFactors {
    pub fn validate(&self) -> Result<(), MeasurementError> {
        let all = [
            self.group,
            self.pedestrian_speed,
            self.vehicle_distance,
            self.v2p_angle,
            self.vehicle_speed,
            self.crosswalk_distance,
            self.crosswalk_angle,
            self.location,
            self.pose,
        ];
        if all.iter().all(|f| *f > 0.0) {
            Ok(())
        } else {
            Err(MeasurementError::ZeroPixelHeight)
        }
    }
}

/// How measured distances enter the feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistanceNorm {
    /// exp(-d / n), mapping [0, inf) into (0, 1].
    #[default]
    Exp,
    /// Plain division d / n.
    Div,
}

impl DistanceNorm {
    pub fn apply(&self, d: f64, factor: f64) -> Result<f64, MeasurementError> {
        if d < 0.0 {
            return Err(MeasurementError::NegativeDistance);
        }
        Ok(match self {
            DistanceNorm::Exp => (-d / factor).exp(),
            DistanceNorm::Div => d / factor,
        })
    }
}

/// Knowledge base, normalization factors and the distance-normalization
/// switch; overridable from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct MeasurementConfig {
    pub knowledge_base: KnowledgeBase,
    pub normalization: NormalizationFactors,
    pub distance_norm: DistanceNorm,
}

impl MeasurementConfig {
    pub fn from_file(path: impl AsRef<std::path::Path>) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
        let cfg: MeasurementConfig = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        cfg.knowledge_base.validate().map_err(|e| e.to_string())?;
        cfg.normalization.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

/// Knowledge-base distance estimate between two detected objects, in meters:
/// half the sum of the two meters-per-pixel ratios times the anchor pixel
/// distance.
pub fn estimate_distance(
    a: (&Detection, ObjectClass),
    b: (&Detection, ObjectClass),
    kb: &KnowledgeBase,
) -> Result<f64, MeasurementError> {
    let (det_a, class_a) = a;
    let (det_b, class_b) = b;
    let h_a = det_a.height_px();
    let h_b = det_b.height_px();
    if h_a <= 0.0 || h_b <= 0.0 {
        return Err(MeasurementError::ZeroPixelHeight);
    }
    let scale = 0.5 * (kb.mean_height(class_a)? / h_a + kb.mean_height(class_b)? / h_b);
    Ok(scale * (det_a.anchor - det_b.anchor).norm())
}

/// Exponential distance normalization exp(-d / n_h) into (0, 1].
pub fn normalize_distance(d: f64, n_h: f64) -> Result<f64, MeasurementError> {
    debug_assert!(n_h > 0.0);
    if d < 0.0 {
        return Err(MeasurementError::NegativeDistance);
    }
    Ok((-d / n_h).exp())
}

fn sample_or_err<'a>(
    track: &'a EntityTrack,
    t: f64,
    tolerance: f64,
) -> Result<&'a Detection, MeasurementError> {
    sample_track(track, t, tolerance).ok_or(MeasurementError::MissingDetection {
        track: track.id,
        t,
        tolerance,
    })
}

/// Pedestrian speed in m/s over [t1, t2]: anchor pixel displacement scaled by
/// the person mean-height ratio taken at t2.
///
/// Requires t2 - t1 >= 0.5 s for a stable measurement.
pub fn pedestrian_speed(
    track: &EntityTrack,
    t1: f64,
    t2: f64,
    kb: &KnowledgeBase,
) -> Result<f64, MeasurementError> {
    let dt = t2 - t1;
    if dt < MIN_SPEED_WINDOW - WINDOW_EPS {
        return Err(MeasurementError::WindowTooShort {
            got: dt,
            min: MIN_SPEED_WINDOW,
        });
    }
    let d1 = sample_or_err(track, t1, SAMPLE_TOLERANCE)?;
    let d2 = sample_or_err(track, t2, SAMPLE_TOLERANCE)?;
    let h = d2.height_px();
    if h <= 0.0 {
        return Err(MeasurementError::ZeroPixelHeight);
    }
    let displacement = (d2.anchor - d1.anchor).norm();
    Ok(displacement / dt * (kb.mean_height(track.class)? / h))
}

/// Vehicle speed in m/s over [t1, t2]; the scale ratio averages the pixel
/// heights at both endpoints to compensate perspective scale variation.
pub fn vehicle_speed(
    track: &EntityTrack,
    t1: f64,
    t2: f64,
    kb: &KnowledgeBase,
) -> Result<f64, MeasurementError> {
    if t2 <= t1 {
        return Err(MeasurementError::EmptyWindow);
    }
    let d1 = sample_or_err(track, t1, SAMPLE_TOLERANCE)?;
    let d2 = sample_or_err(track, t2, SAMPLE_TOLERANCE)?;
    let h1 = d1.height_px();
    let h2 = d2.height_px();
    if h1 <= 0.0 || h2 <= 0.0 {
        return Err(MeasurementError::ZeroPixelHeight);
    }
    let displacement = (d2.anchor - d1.anchor).norm();
    Ok(displacement / (t2 - t1) * (2.0 * kb.mean_height(track.class)? / (h1 + h2)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_model::BoundingBox;
    use approx::assert_relative_eq;
    use nalgebra::Vector2;

    fn det(t: f64, anchor: (f64, f64), height_px: f64) -> Detection {
        Detection {
            timestamp: t,
            bbox: BoundingBox {
                u_min: anchor.0 - 10.0,
                v_min: anchor.1 - height_px,
                u_max: anchor.0 + 10.0,
                v_max: anchor.1,
            },
            anchor: Vector2::new(anchor.0, anchor.1),
            pose: None,
            toes: None,
            state: None,
        }
    }

    #[test]
    fn distance_two_persons_hand_case() {
        // Both 170 px tall (scale 0.01 m/px each), anchors 500 px apart.
        let kb = KnowledgeBase::default();
        let a = det(0.0, (0.0, 200.0), 170.0);
        let b = det(0.0, (500.0, 200.0), 170.0);
        let d = estimate_distance((&a, ObjectClass::Person), (&b, ObjectClass::Person), &kb)
            .unwrap();
        assert_relative_eq!(d, 5.0, max_relative = 1e-12);
    }

    #[test]
    fn distance_coincident_anchors_is_zero() {
        let kb = KnowledgeBase::default();
        let a = det(0.0, (100.0, 200.0), 170.0);
        let b = det(0.0, (100.0, 200.0), 150.0);
        let d =
            estimate_distance((&a, ObjectClass::Person), (&b, ObjectClass::Car), &kb).unwrap();
        assert_relative_eq!(d, 0.0);
    }

    #[test]
    fn distance_person_car_hand_case() {
        // Person 170 px (0.01 m/px), Car 150 px (0.01 m/px), 300 px apart.
        let kb = KnowledgeBase::default();
        let a = det(0.0, (0.0, 200.0), 170.0);
        let b = det(0.0, (300.0, 200.0), 150.0);
        let d =
            estimate_distance((&a, ObjectClass::Person), (&b, ObjectClass::Car), &kb).unwrap();
        assert_relative_eq!(d, 3.0, max_relative = 1e-12);
    }

    #[test]
    fn distance_is_symmetric() {
        let kb = KnowledgeBase::default();
        let a = det(0.0, (12.0, 34.0), 163.0);
        let b = det(0.0, (211.0, 97.0), 59.0);
        let ab =
            estimate_distance((&a, ObjectClass::Person), (&b, ObjectClass::Bus), &kb).unwrap();
        let ba =
            estimate_distance((&b, ObjectClass::Bus), (&a, ObjectClass::Person), &kb).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn normalize_distance_cases() {
        assert_relative_eq!(normalize_distance(0.0, 10.0).unwrap(), 1.0);
        assert_relative_eq!(
            normalize_distance(10.0, 10.0).unwrap(),
            (-1.0f64).exp(),
            max_relative = 1e-12
        );
        assert!(normalize_distance(-1.0, 10.0).is_err());
        // strictly decreasing
        let mut prev = normalize_distance(0.0, 10.0).unwrap();
        for i in 1..50 {
            let next = normalize_distance(i as f64, 10.0).unwrap();
            assert!(next < prev && next > 0.0);
            prev = next;
        }
    }

    #[test]
    fn pedestrian_speed_hand_case() {
        // Hip moves 150 px in 1.0 s, person 170 px tall -> 1.5 m/s.
        let kb = KnowledgeBase::default();
        let mut track = EntityTrack::new(1, ObjectClass::Person);
        track.detections = vec![det(0.0, (0.0, 200.0), 170.0), det(1.0, (150.0, 200.0), 170.0)];
        let s = pedestrian_speed(&track, 0.0, 1.0, &kb).unwrap();
        assert_relative_eq!(s, 1.5, max_relative = 1e-12);
    }

    #[test]
    fn pedestrian_speed_stationary() {
        let kb = KnowledgeBase::default();
        let mut track = EntityTrack::new(1, ObjectClass::Person);
        track.detections = vec![det(0.0, (80.0, 200.0), 170.0), det(0.5, (80.0, 200.0), 170.0)];
        assert_relative_eq!(pedestrian_speed(&track, 0.0, 0.5, &kb).unwrap(), 0.0);
    }

    #[test]
    fn pedestrian_speed_short_window_rejected() {
        let kb = KnowledgeBase::default();
        let mut track = EntityTrack::new(1, ObjectClass::Person);
        track.detections = vec![det(0.0, (0.0, 200.0), 170.0), det(0.3, (30.0, 200.0), 170.0)];
        assert!(matches!(
            pedestrian_speed(&track, 0.0, 0.3, &kb),
            Err(MeasurementError::WindowTooShort { .. })
        ));
    }

    #[test]
    fn vehicle_speed_hand_case() {
        // Car 150 px tall at both times, moves 500 px in 0.5 s:
        // 1000 px/s * 2 * 1.5 / 300 = 10 m/s.
        let kb = KnowledgeBase::default();
        let mut track = EntityTrack::new(9, ObjectClass::Car);
        track.detections = vec![det(0.0, (0.0, 100.0), 150.0), det(0.5, (500.0, 100.0), 150.0)];
        let s = vehicle_speed(&track, 0.0, 0.5, &kb).unwrap();
        assert_relative_eq!(s, 10.0, max_relative = 1e-12);
    }

    #[test]
    fn vehicle_speed_averaged_height_compensation() {
        // Car heights 100 px then 200 px, 300 px in 1 s:
        // 300 px/s * (2 * 1.5 / (100 + 200)) = 300 * 0.01 = 3.0 m/s.
        let kb = KnowledgeBase::default();
        let mut track = EntityTrack::new(9, ObjectClass::Car);
        track.detections = vec![det(0.0, (0.0, 100.0), 100.0), det(1.0, (300.0, 100.0), 200.0)];
        let s = vehicle_speed(&track, 0.0, 1.0, &kb).unwrap();
        assert_relative_eq!(s, 3.0, max_relative = 1e-12);
    }

    #[test]
    fn speeds_invariant_under_uniform_pixel_rescaling() {
        let kb = KnowledgeBase::default();
        for k in [0.5, 2.0, 3.7] {
            let mut track = EntityTrack::new(1, ObjectClass::Person);
            track.detections = vec![
                det(0.0, (10.0, 200.0), 170.0),
                det(1.0, (160.0, 200.0), 170.0),
            ];
            let mut scaled = EntityTrack::new(1, ObjectClass::Person);
            scaled.detections = vec![
                det(0.0, (10.0 * k, 200.0 * k), 170.0 * k),
                det(1.0, (160.0 * k, 200.0 * k), 170.0 * k),
            ];
            let base = pedestrian_speed(&track, 0.0, 1.0, &kb).unwrap();
            let got = pedestrian_speed(&scaled, 0.0, 1.0, &kb).unwrap();
            assert_relative_eq!(base, got, max_relative = 1e-12);
        }
    }
}
