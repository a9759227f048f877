//! Pose geometry: joint regression, pinhole projection, head/body
//! orientation lines, angle conversion and circular angular error.

use crate::scene_model::{CameraModel, JointName, Pose3D};
use nalgebra::{DMatrix, Vector2, Vector3};
use thiserror::Error;

/// Directions with (projected) norm below this are treated as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("dimension mismatch: regressor expects {expected} vertices, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("point behind camera (depth {0})")]
    PointBehindCamera(f64),
    #[error("missing joint `{}`", .0.as_str())]
    MissingJoint(JointName),
    #[error("zero direction (degenerate pose)")]
    ZeroDirection,
    #[error("degenerate torso plane (collinear joints)")]
    DegenerateTorsoPlane,
    #[error("vertical direction has no horizontal-plane projection")]
    VerticalDirection,
}

/// A 3D line anchored at `base_point` with (unnormalized) `direction`;
/// points on the line are `base_point + t * direction` for t > 0.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientationLine {
    pub base_point: Vector3<f64>,
    pub direction: Vector3<f64>,
}

impl OrientationLine {
    pub fn point_at(&self, t: f64) -> Vector3<f64> {
        self.base_point + self.direction * t
    }
}

/// Linear joint regressor: a J x V weight matrix applied per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct JointRegressor {
    weights: DMatrix<f64>,
}

impl JointRegressor {
    pub fn new(weights: DMatrix<f64>) -> Result<Self, GeometryError> {
        if !weights.iter().all(|w| w.is_finite()) {
            return Err(GeometryError::ZeroDirection);
        }
        Ok(JointRegressor { weights })
    }

    pub fn joint_count(&self) -> usize {
        self.weights.nrows()
    }

    pub fn vertex_count(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }
}

/// Regresses J joint locations from V mesh vertices: output = W * vertices.
///
/// `vertices` is V x 3 (one row per vertex); the result is J x 3.
pub fn regress_joints(
    vertices: &DMatrix<f64>,
    regressor: &JointRegressor,
) -> Result<DMatrix<f64>, GeometryError> {
    if vertices.ncols() != 3 || vertices.nrows() != regressor.vertex_count() {
        return Err(GeometryError::DimensionMismatch {
            expected: regressor.vertex_count(),
            got: vertices.nrows(),
        });
    }
    Ok(regressor.weights() * vertices)
}

/// Projects a 3D point into the image plane: (u, v) = (1/lambda) K (R p + t).
///
/// `lambda` is the depth of the camera-frame point; non-positive depth is an
/// error.
pub fn project_point(
    p3d: &Vector3<f64>,
    camera: &CameraModel,
) -> Result<Vector2<f64>, GeometryError> {
    let cam = camera.rotation() * p3d + camera.translation();
    let depth = cam.z;
    if depth <= 0.0 {
        return Err(GeometryError::PointBehindCamera(depth));
    }
    let h = camera.intrinsic() * cam;
    Ok(Vector2::new(h.x / depth, h.y / depth))
}

fn joint(pose: &Pose3D, name: JointName) -> Result<Vector3<f64>, GeometryError> {
    pose.joint(name)
        .copied()
        .ok_or(GeometryError::MissingJoint(name))
}

/// Line through the eye midpoint, directed away from the head-top/jaw
/// midpoint (a gaze proxy).
pub fn head_orientation(pose: &Pose3D) -> Result<OrientationLine, GeometryError> {
    let eye_l = joint(pose, JointName::EyeL)?;
    let eye_r = joint(pose, JointName::EyeR)?;
    let head_top = joint(pose, JointName::HeadTop)?;
    let jaw = joint(pose, JointName::Jaw)?;

    let base_point = (eye_l + eye_r) / 2.0;
    let direction = base_point - (head_top + jaw) / 2.0;
    if direction.norm() < DEGENERACY_TOL {
        return Err(GeometryError::ZeroDirection);
    }
    Ok(OrientationLine {
        base_point,
        direction,
    })
}

/// Line normal to the torso plane (left/right shoulders and mid-hip),
/// anchored at the centroid of the three joints.
pub fn body_orientation(pose: &Pose3D) -> Result<OrientationLine, GeometryError> {
    let shoulder_l = joint(pose, JointName::ShoulderL)?;
    let shoulder_r = joint(pose, JointName::ShoulderR)?;
    let hip_mid = joint(pose, JointName::HipMid)?;

    let direction = (shoulder_l - hip_mid).cross(&(shoulder_r - hip_mid));
    if direction.norm() < DEGENERACY_TOL {
        return Err(GeometryError::DegenerateTorsoPlane);
    }
    Ok(OrientationLine {
        base_point: (shoulder_l + shoulder_r + hip_mid) / 3.0,
        direction,
    })
}

/// Converts an orientation line to an angle in degrees in [0, 360).
///
/// The direction is projected onto the horizontal (x, z) plane of the
/// normalized pose space (y up). The angle is measured from the reference
/// vector (-1, 0, 0) and increases clockwise; the z-component of the
/// projected direction disambiguates the 180-360 half.
pub fn orientation_to_angle(line: &OrientationLine) -> Result<f64, GeometryError> {
    orientation_to_angle_with_offset(line, 0.0)
}

/// Like [`orientation_to_angle`] but adds a fixed axis-calibration offset
/// (degrees) before wrapping into [0, 360).
pub fn orientation_to_angle_with_offset(
    line: &OrientationLine,
    offset_deg: f64,
) -> Result<f64, GeometryError> {
    let dx = line.direction.x;
    let dz = line.direction.z;
    let norm = (dx * dx + dz * dz).sqrt();
    if norm < DEGENERACY_TOL {
        return Err(GeometryError::VerticalDirection);
    }
    // Inner product with the reference (-1, 0, 0) gives the magnitude;
    // the sign of dz selects the 180-360 half.
    let cos_theta = (-dx / norm).clamp(-1.0, 1.0);
    let theta = cos_theta.acos().to_degrees();
    let raw = if dz >= 0.0 { theta } else { 360.0 - theta };
    Ok(wrap_degrees(raw + offset_deg))
}

/// Wraps an angle into [0, 360).
pub fn wrap_degrees(angle: f64) -> f64 {
    let wrapped = angle.rem_euclid(360.0);
    if wrapped >= 360.0 {
        0.0
    } else {
        wrapped
    }
}

/// Rotates a direction clockwise by `delta_deg` in the horizontal (x, z)
/// plane, leaving y untouched. Under this module's angle convention a
/// clockwise rotation by delta adds delta to the recovered angle.
pub fn rotate_clockwise(direction: &Vector3<f64>, delta_deg: f64) -> Vector3<f64> {
    let rad = delta_deg.to_radians();
    let (sin, cos) = (rad.sin(), rad.cos());
    Vector3::new(
        direction.x * cos + direction.z * sin,
        direction.y,
        -direction.x * sin + direction.z * cos,
    )
}

/// Wrap-around distance between two angles on the circle, in [0, 180].
pub fn angular_error(theta_a: f64, theta_b: f64) -> f64 {
    let diff = (theta_a - theta_b).abs();
    diff.min(360.0 - diff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Matrix3;

    fn pose_with(joints: &[(JointName, [f64; 3])]) -> Pose3D {
        let mut pose = Pose3D::new(0.0);
        for (name, c) in joints {
            pose.joints
                .insert(*name, Vector3::new(c[0], c[1], c[2]));
        }
        pose
    }

    fn test_camera() -> CameraModel {
        let k = Matrix3::new(100.0, 0.0, 64.0, 0.0, 100.0, 64.0, 0.0, 0.0, 1.0);
        CameraModel::new(k, Matrix3::identity(), Vector3::zeros()).unwrap()
    }

    #[test]
    fn identity_regressor_returns_vertices() {
        let vertices = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let regressor = JointRegressor::new(DMatrix::identity(3, 3)).unwrap();
        let joints = regress_joints(&vertices, &regressor).unwrap();
        assert_eq!(joints, vertices);
    }

    #[test]
    fn averaging_row_returns_centroid() {
        let vertices = DMatrix::from_row_slice(4, 3, &[
            0.0, 0.0, 0.0, //
            4.0, 0.0, 0.0, //
            0.0, 4.0, 0.0, //
            0.0, 0.0, 4.0,
        ]);
        let regressor =
            JointRegressor::new(DMatrix::from_element(1, 4, 0.25)).unwrap();
        let joints = regress_joints(&vertices, &regressor).unwrap();
        assert_eq!(joints.nrows(), 1);
        assert_relative_eq!(joints[(0, 0)], 1.0);
        assert_relative_eq!(joints[(0, 1)], 1.0);
        assert_relative_eq!(joints[(0, 2)], 1.0);
    }

    #[test]
    fn regression_matches_naive_triple_loop() {
        // Brute-force oracle: independent triple-loop matrix product.
        let mut rng_state = 0x2545F4914F6CDD1Du64;
        let mut next = move || {
            rng_state ^= rng_state << 13;
            rng_state ^= rng_state >> 7;
            rng_state ^= rng_state << 17;
            (rng_state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let w = DMatrix::from_fn(5, 10, |_, _| next());
        let v = DMatrix::from_fn(10, 3, |_, _| next());

        let mut expected = DMatrix::zeros(5, 3);
        for i in 0..5 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..10 {
                    acc += w[(i, k)] * v[(k, j)];
                }
                expected[(i, j)] = acc;
            }
        }

        let regressor = JointRegressor::new(w).unwrap();
        let got = regress_joints(&v, &regressor).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                assert_relative_eq!(got[(i, j)], expected[(i, j)], max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn regression_rejects_dimension_mismatch() {
        let regressor = JointRegressor::new(DMatrix::identity(3, 3)).unwrap();
        let vertices = DMatrix::zeros(4, 3);
        assert_eq!(
            regress_joints(&vertices, &regressor),
            Err(GeometryError::DimensionMismatch {
                expected: 3,
                got: 4
            })
        );
    }

    #[test]
    fn projects_optical_axis_to_principal_point() {
        let uv = project_point(&Vector3::new(0.0, 0.0, 2.0), &test_camera()).unwrap();
        assert_relative_eq!(uv.x, 64.0);
        assert_relative_eq!(uv.y, 64.0);
    }

    #[test]
    fn projects_offset_point() {
        // Hand pinhole computation: 100 * 1 / 2 + 64 = 114.
        let uv = project_point(&Vector3::new(1.0, 0.0, 2.0), &test_camera()).unwrap();
        assert_relative_eq!(uv.x, 114.0);
        assert_relative_eq!(uv.y, 64.0);
    }

    #[test]
    fn rejects_point_behind_camera() {
        assert!(matches!(
            project_point(&Vector3::new(0.0, 0.0, -1.0), &test_camera()),
            Err(GeometryError::PointBehindCamera(_))
        ));
    }

    #[test]
    fn projection_invariant_along_ray() {
        // Doubling the point along the ray through the camera center leaves
        // (u, v) unchanged.
        let cam = test_camera();
        let p = Vector3::new(0.7, -0.3, 2.5);
        let a = project_point(&p, &cam).unwrap();
        let b = project_point(&(p * 2.0), &cam).unwrap();
        assert_relative_eq!(a.x, b.x, max_relative = 1e-12);
        assert_relative_eq!(a.y, b.y, max_relative = 1e-12);
    }

    #[test]
    fn head_orientation_hand_case() {
        let pose = pose_with(&[
            (JointName::EyeL, [-0.05, 1.6, 0.1]),
            (JointName::EyeR, [0.05, 1.6, 0.1]),
            (JointName::HeadTop, [0.0, 1.7, 0.0]),
            (JointName::Jaw, [0.0, 1.5, 0.0]),
        ]);
        let line = head_orientation(&pose).unwrap();
        assert_relative_eq!(line.base_point.x, 0.0);
        assert_relative_eq!(line.base_point.y, 1.6);
        assert_relative_eq!(line.base_point.z, 0.1);
        assert_relative_eq!(line.direction.x, 0.0);
        assert_relative_eq!(line.direction.y, 0.0);
        assert_relative_eq!(line.direction.z, 0.1);
    }

    #[test]
    fn head_orientation_degenerate() {
        let pose = pose_with(&[
            (JointName::EyeL, [0.0, 1.6, 0.0]),
            (JointName::EyeR, [0.0, 1.6, 0.0]),
            (JointName::HeadTop, [0.0, 1.7, 0.0]),
            (JointName::Jaw, [0.0, 1.5, 0.0]),
        ]);
        assert_eq!(head_orientation(&pose), Err(GeometryError::ZeroDirection));
    }

    #[test]
    fn head_orientation_translation_equivariant() {
        let pose = pose_with(&[
            (JointName::EyeL, [-0.05, 1.6, 0.1]),
            (JointName::EyeR, [0.05, 1.6, 0.1]),
            (JointName::HeadTop, [0.0, 1.7, 0.0]),
            (JointName::Jaw, [0.0, 1.5, 0.0]),
        ]);
        let shifted = pose.translated(Vector3::new(1.0, 1.0, 1.0));
        let a = head_orientation(&pose).unwrap();
        let b = head_orientation(&shifted).unwrap();
        assert_relative_eq!(b.base_point.x, a.base_point.x + 1.0);
        assert_relative_eq!(b.base_point.y, a.base_point.y + 1.0);
        assert_relative_eq!(b.base_point.z, a.base_point.z + 1.0);
        for i in 0..3 {
            assert_relative_eq!(a.direction[i], b.direction[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn body_orientation_hand_case() {
        let pose = pose_with(&[
            (JointName::ShoulderL, [-0.2, 1.4, 0.0]),
            (JointName::ShoulderR, [0.2, 1.4, 0.0]),
            (JointName::HipMid, [0.0, 0.9, 0.0]),
        ]);
        let line = body_orientation(&pose).unwrap();
        assert_relative_eq!(line.direction.x, 0.0);
        assert_relative_eq!(line.direction.y, 0.0);
        assert_relative_eq!(line.direction.z, -0.2);
        // base is the centroid of the three joints: (1.4 + 1.4 + 0.9) / 3
        assert_relative_eq!(line.base_point.x, 0.0);
        assert_relative_eq!(line.base_point.y, 3.7 / 3.0, max_relative = 1e-12);
        assert_relative_eq!(line.base_point.z, 0.0);
    }

    #[test]
    fn body_orientation_rejects_collinear() {
        let pose = pose_with(&[
            (JointName::ShoulderL, [-0.2, 1.4, 0.0]),
            (JointName::ShoulderR, [0.2, 1.4, 0.0]),
            (JointName::HipMid, [0.0, 1.4, 0.0]),
        ]);
        assert_eq!(
            body_orientation(&pose),
            Err(GeometryError::DegenerateTorsoPlane)
        );
    }

    #[test]
    fn body_orientation_direction_orthogonal_to_torso() {
        let pose = pose_with(&[
            (JointName::ShoulderL, [-0.23, 1.42, 0.05]),
            (JointName::ShoulderR, [0.19, 1.38, -0.04]),
            (JointName::HipMid, [0.01, 0.92, 0.02]),
        ]);
        let line = body_orientation(&pose).unwrap();
        let a = pose.joint(JointName::ShoulderL).unwrap() - pose.joint(JointName::HipMid).unwrap();
        let b = pose.joint(JointName::ShoulderR).unwrap() - pose.joint(JointName::HipMid).unwrap();
        let n = line.direction.normalize();
        assert!(n.dot(&a.normalize()).abs() < 1e-9);
        assert!(n.dot(&b.normalize()).abs() < 1e-9);
    }

    #[test]
    fn angle_reference_and_antipodal() {
        let line = |d: Vector3<f64>| OrientationLine {
            base_point: Vector3::zeros(),
            direction: d,
        };
        assert_relative_eq!(
            orientation_to_angle(&line(Vector3::new(-1.0, 0.0, 0.0))).unwrap(),
            0.0
        );
        assert_relative_eq!(
            orientation_to_angle(&line(Vector3::new(1.0, 0.0, 0.0))).unwrap(),
            180.0
        );
        assert_relative_eq!(
            orientation_to_angle(&line(Vector3::new(0.0, 0.0, 1.0))).unwrap(),
            90.0
        );
        assert_relative_eq!(
            orientation_to_angle(&line(Vector3::new(0.0, 0.0, -1.0))).unwrap(),
            270.0
        );
    }

    #[test]
    fn angle_rejects_vertical_direction() {
        let line = OrientationLine {
            base_point: Vector3::zeros(),
            direction: Vector3::new(0.0, 1.0, 0.0),
        };
        assert_eq!(
            orientation_to_angle(&line),
            Err(GeometryError::VerticalDirection)
        );
    }

    #[test]
    fn clockwise_rotation_adds_to_angle() {
        // Continuity sweep: rotating the reference clockwise by delta
        // recovers exactly delta for every whole degree.
        for delta in 0..360 {
            let dir = rotate_clockwise(&Vector3::new(-1.0, 0.0, 0.0), delta as f64);
            let line = OrientationLine {
                base_point: Vector3::zeros(),
                direction: dir,
            };
            let angle = orientation_to_angle(&line).unwrap();
            assert!(
                angular_error(angle, delta as f64) < 1e-9,
                "delta {delta} recovered {angle}"
            );
        }
    }

    #[test]
    fn axis_offset_shifts_angle() {
        let line = OrientationLine {
            base_point: Vector3::zeros(),
            direction: Vector3::new(-1.0, 0.0, 0.0),
        };
        assert_relative_eq!(
            orientation_to_angle_with_offset(&line, 30.0).unwrap(),
            30.0
        );
        assert_relative_eq!(
            orientation_to_angle_with_offset(&line, -30.0).unwrap(),
            330.0
        );
    }

    #[test]
    fn angular_error_cases() {
        assert_relative_eq!(angular_error(45.0, 45.0), 0.0);
        assert_relative_eq!(angular_error(359.0, 1.0), 2.0);
        assert_relative_eq!(angular_error(0.0, 180.0), 180.0);
    }
}
