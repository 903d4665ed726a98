//! Pinhole camera geometry.
//!
//! World frame: the pitch is the plane `z = 0` with its center at the origin
//! and `z` pointing up. Camera frame follows the usual computer-vision
//! convention (x right, y down, z forward), so a world point `x` maps to
//! `K · (R · x + T)` before dehomogenization. No lens distortion is modeled.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Pixel = Vector2<f64>;

const DEPTH_EPS: f64 = 1e-9;
const ORTHO_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point has non-positive depth {0} in the camera frame")]
    NonPositiveDepth(f64),
    #[error("back-projected ray direction is degenerate")]
    DegenerateDirection,
    #[error("ray never meets the pitch plane (direction.z = {0})")]
    NoGroundIntersection(f64),
    #[error("ray step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),
    #[error("invalid pitch geometry: {0}")]
    InvalidPitch(String),
}

/// Intrinsics `K`, rotation `R` and translation `T` of a pinhole camera.
///
/// The inverse intrinsics and the camera center are cached at construction,
/// so the type is cheap to query per detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CalibrationRecord", into = "CalibrationRecord")]
pub struct CameraCalibration {
    intrinsics: Matrix3<f64>,
    rotation: Matrix3<f64>,
    translation: Vec3,
    intrinsics_inv: Matrix3<f64>,
    center: Vec3,
}

impl CameraCalibration {
    pub fn new(
        intrinsics: Matrix3<f64>,
        rotation: Matrix3<f64>,
        translation: Vec3,
    ) -> Result<Self, GeometryError> {
        let k = &intrinsics;
        if k.iter().any(|v| !v.is_finite())
            || rotation.iter().any(|v| !v.is_finite())
            || translation.iter().any(|v| !v.is_finite())
        {
            return Err(GeometryError::InvalidCalibration("non-finite entry".into()));
        }
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 {
            return Err(GeometryError::InvalidCalibration(
                "intrinsics must be upper-triangular".into(),
            ));
        }
        if k[(2, 2)] != 1.0 {
            return Err(GeometryError::InvalidCalibration("K[2][2] must be 1".into()));
        }
        if k[(0, 0)] <= 0.0 || k[(1, 1)] <= 0.0 {
            return Err(GeometryError::InvalidCalibration(
                "focal lengths must be positive".into(),
            ));
        }
        let gram = rotation * rotation.transpose();
        if (gram - Matrix3::identity()).amax() > ORTHO_TOL {
            return Err(GeometryError::InvalidCalibration("rotation is not orthonormal".into()));
        }
        if (rotation.determinant() - 1.0).abs() > ORTHO_TOL {
            return Err(GeometryError::InvalidCalibration("rotation must have det = +1".into()));
        }
        // Upper-triangular with positive diagonal, so always invertible.
        let intrinsics_inv = intrinsics
            .try_inverse()
            .ok_or_else(|| GeometryError::InvalidCalibration("singular intrinsics".into()))?;
        let center = -(rotation.transpose() * translation);
        Ok(Self { intrinsics, rotation, translation, intrinsics_inv, center })
    }

    /// Camera at `eye` looking at `target`, with image rows aligned to the
    /// horizon (world `z` projects upward in the image).
    pub fn look_at(
        intrinsics: Matrix3<f64>,
        eye: Vec3,
        target: Vec3,
    ) -> Result<Self, GeometryError> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| GeometryError::InvalidCalibration("eye equals target".into()))?;
        let right = forward
            .cross(&Vec3::z())
            .try_normalize(1e-12)
            .ok_or_else(|| GeometryError::InvalidCalibration("view direction is vertical".into()))?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self::new(intrinsics, rotation, translation)
    }

    pub fn intrinsics(&self) -> &Matrix3<f64> {
        &self.intrinsics
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }
}

/// Half-line of world points that project to one pixel.
/// Flattened row-major `K`, `R` and `T`, as carried on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationRecord {
    #[serde(rename = "K")]
    pub k: [f64; 9],
    #[serde(rename = "R")]
    pub r: [f64; 9],
    #[serde(rename = "T")]
    pub t: [f64; 3],
}

fn row_major(m: &Matrix3<f64>) -> [f64; 9] {
    let mut out = [0.0; 9];
    for (i, v) in m.transpose().iter().enumerate() {
        out[i] = *v;
    }
    out
}

impl From<CameraCalibration> for CalibrationRecord {
    fn from(c: CameraCalibration) -> Self {
        Self::from(&c)
    }
}

impl From<&CameraCalibration> for CalibrationRecord {
    fn from(c: &CameraCalibration) -> Self {
        Self {
            k: row_major(&c.intrinsics),
            r: row_major(&c.rotation),
            t: [c.translation.x, c.translation.y, c.translation.z],
        }
    }
}

impl TryFrom<CalibrationRecord> for CameraCalibration {
    type Error = GeometryError;

    fn try_from(rec: CalibrationRecord) -> Result<Self, Self::Error> {
        Self::new(
            Matrix3::from_row_slice(&rec.k),
            Matrix3::from_row_slice(&rec.r),
            Vec3::from_row_slice(&rec.t),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit length.
    pub direction: Vec3,
}

/// Rectangular pitch on the plane `z = 0`, centered at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PitchGeometry {
    pub length: f64,
    pub width: f64,
}

impl Default for PitchGeometry {
    fn default() -> Self {
        Self { length: 105.0, width: 68.0 }
    }
}

impl PitchGeometry {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.length > 0.0 && self.width > 0.0) {
            return Err(GeometryError::InvalidPitch(format!(
                "length and width must be positive, got {} x {}",
                self.length, self.width
            )));
        }
        Ok(())
    }

    /// Boundary test on the ground projection; points on the lines are inside.
    pub fn contains(&self, point: &Vec3) -> bool {
        point.x.abs() <= 0.5 * self.length && point.y.abs() <= 0.5 * self.width
    }
}

/// Projects a world point to pixel coordinates.
pub fn project(point: &Vec3, calib: &CameraCalibration) -> Result<Pixel, GeometryError> {
    let cam = calib.rotation * point + calib.translation;
    if cam.z <= DEPTH_EPS {
        return Err(GeometryError::NonPositiveDepth(cam.z));
    }
    let h = calib.intrinsics * cam;
    Ok(Pixel::new(h.x / h.z, h.y / h.z))
}

/// World position of the optical center, `-Rᵀ·T`.
pub fn camera_center(calib: &CameraCalibration) -> Vec3 {
    calib.center
}

pub fn backproject_ray(pixel: &Pixel, calib: &CameraCalibration) -> Result<Ray, GeometryError> {
    let h = Vec3::new(pixel.x, pixel.y, 1.0);
    let direction = (calib.rotation.transpose() * (calib.intrinsics_inv * h))
        .try_normalize(1e-12)
        .ok_or(GeometryError::DegenerateDirection)?;
    Ok(Ray { origin: calib.center, direction })
}

/// Number of samples `discretize_ray` produces for a segment of length `dist`.
///
/// The tiny slack absorbs rounding in `dist / step` so that, e.g., a 3 m
/// segment at 0.03 m yields 101 samples rather than 100.
pub fn sample_count(dist: f64, step: f64) -> usize {
    (dist / step + 1e-9).floor() as usize + 1
}

/// Samples a viewing ray from its ground intersection up to the camera.
///
/// Points are ordered ground-first and spaced `step` apart along the ray.
pub fn discretize_ray(ray: &Ray, step: f64) -> Result<Vec<Vec3>, GeometryError> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(GeometryError::NonPositiveStep(step));
    }
    if ray.direction.z >= -1e-9 || ray.origin.z <= 0.0 {
        return Err(GeometryError::NoGroundIntersection(ray.direction.z));
    }
    let dist = -ray.origin.z / ray.direction.z;
    let mut ground = ray.origin + ray.direction * dist;
    ground.z = 0.0;
    let up = -ray.direction;
    let n = sample_count(dist, step);
    Ok((0..n).map(|i| ground + up * (i as f64 * step)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn k_broadcast() -> Matrix3<f64> {
        Matrix3::new(1000.0, 0.0, 960.0, 0.0, 1000.0, 540.0, 0.0, 0.0, 1.0)
    }

    #[test]
    fn optical_axis_projects_to_principal_point() {
        let id = CameraCalibration::new(Matrix3::identity(), Matrix3::identity(), Vec3::zeros()).unwrap();
        assert_eq!(project(&Vec3::new(0.0, 0.0, 1.0), &id).unwrap(), Pixel::new(0.0, 0.0));

        let c = CameraCalibration::new(k_broadcast(), Matrix3::identity(), Vec3::zeros()).unwrap();
        assert_eq!(project(&Vec3::new(0.0, 0.0, 5.0), &c).unwrap(), Pixel::new(960.0, 540.0));
    }

    #[test]
    fn behind_camera_is_rejected() {
        let c = CameraCalibration::new(k_broadcast(), Matrix3::identity(), Vec3::zeros()).unwrap();
        assert!(matches!(
            project(&Vec3::new(0.0, 0.0, -1.0), &c),
            Err(GeometryError::NonPositiveDepth(_))
        ));
        assert!(matches!(project(&Vec3::zeros(), &c), Err(GeometryError::NonPositiveDepth(_))));
    }

    #[test]
    fn center_for_identity_rotation() {
        let c = CameraCalibration::new(Matrix3::identity(), Matrix3::identity(), Vec3::new(0.0, 0.0, -5.0))
            .unwrap();
        assert_eq!(camera_center(&c), Vec3::new(0.0, 0.0, 5.0));
    }

    #[test]
    fn center_for_quarter_turn() {
        // Rz(90°) = [[0,-1,0],[1,0,0],[0,0,1]]; Rᵀ·(1,0,0) = (0,-1,0) by hand.
        let r = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let c = CameraCalibration::new(Matrix3::identity(), r, Vec3::new(1.0, 0.0, 0.0)).unwrap();
        let center = camera_center(&c);
        assert_abs_diff_eq!(center.x, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(center.y, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(center.z, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn principal_ray_is_optical_axis() {
        let c = CameraCalibration::new(k_broadcast(), Matrix3::identity(), Vec3::zeros()).unwrap();
        let ray = backproject_ray(&Pixel::new(960.0, 540.0), &c).unwrap();
        assert_eq!(ray.direction, Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(ray.origin, Vec3::zeros());
    }

    #[test]
    fn distinct_pixels_share_origin() {
        let c = CameraCalibration::look_at(k_broadcast(), Vec3::new(0.0, -40.0, 20.0), Vec3::zeros()).unwrap();
        let a = backproject_ray(&Pixel::new(100.0, 700.0), &c).unwrap();
        let b = backproject_ray(&Pixel::new(1500.0, 900.0), &c).unwrap();
        assert_eq!(a.origin, b.origin);
        assert!((a.direction - b.direction).norm() > 1e-3);
    }

    #[test]
    fn look_at_places_target_on_principal_point() {
        let eye = Vec3::new(3.0, -50.0, 25.0);
        let c = CameraCalibration::look_at(k_broadcast(), eye, Vec3::zeros()).unwrap();
        let px = project(&Vec3::zeros(), &c).unwrap();
        assert_abs_diff_eq!(px.x, 960.0, epsilon = 1e-9);
        assert_abs_diff_eq!(px.y, 540.0, epsilon = 1e-9);
        assert_abs_diff_eq!((camera_center(&c) - eye).norm(), 0.0, epsilon = 1e-12);
        // World up maps to image up (smaller v).
        let above = project(&Vec3::new(0.0, 0.0, 1.0), &c).unwrap();
        assert!(above.y < px.y);
    }

    #[test]
    fn invalid_calibrations_are_rejected() {
        let mut k = k_broadcast();
        k[(2, 2)] = 2.0;
        assert!(CameraCalibration::new(k, Matrix3::identity(), Vec3::zeros()).is_err());
        let mut k = k_broadcast();
        k[(0, 0)] = -1.0;
        assert!(CameraCalibration::new(k, Matrix3::identity(), Vec3::zeros()).is_err());
        let mut k = k_broadcast();
        k[(1, 0)] = 0.5;
        assert!(CameraCalibration::new(k, Matrix3::identity(), Vec3::zeros()).is_err());
        let reflect = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(CameraCalibration::new(k_broadcast(), reflect, Vec3::zeros()).is_err());
        let skew = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(CameraCalibration::new(k_broadcast(), skew, Vec3::zeros()).is_err());
    }

    #[test]
    fn vertical_ray_count() {
        let ray = Ray { origin: Vec3::new(0.0, 0.0, 3.0), direction: Vec3::new(0.0, 0.0, -1.0) };
        let pts = discretize_ray(&ray, 0.03).unwrap();
        // floor(3 / 0.03) + 1
        assert_eq!(pts.len(), 101);
        assert_eq!(pts[0], Vec3::zeros());
        assert_abs_diff_eq!(pts[1].z, 0.03, epsilon = 1e-12);
        assert_abs_diff_eq!(pts[100].z, 3.0, epsilon = 1e-9);
    }

    #[test]
    fn step_equal_to_height_gives_two_points() {
        let ray = Ray { origin: Vec3::new(1.0, 2.0, 3.0), direction: Vec3::new(0.0, 0.0, -1.0) };
        let pts = discretize_ray(&ray, 3.0).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0], Vec3::new(1.0, 2.0, 0.0));
        assert_abs_diff_eq!(pts[1].z, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn oblique_ray_points_are_collinear() {
        let origin = Vec3::new(0.0, 0.0, 4.0);
        let direction = Vec3::new(3.0, 0.0, -4.0).normalize();
        let pts = discretize_ray(&Ray { origin, direction }, 0.1).unwrap();
        // Ground hit at (3, 0, 0), 5 m from the camera.
        assert_eq!(pts.len(), 51);
        assert_abs_diff_eq!(pts[0].x, 3.0, epsilon = 1e-12);
        for p in &pts {
            let off = (p - origin).cross(&direction).norm();
            assert!(off <= 1e-9, "point {p:?} off the ray by {off}");
        }
    }

    #[test]
    fn upward_or_horizontal_rays_are_rejected() {
        let up = Ray { origin: Vec3::new(0.0, 0.0, 3.0), direction: Vec3::new(0.0, 0.0, 1.0) };
        assert!(matches!(discretize_ray(&up, 0.03), Err(GeometryError::NoGroundIntersection(_))));
        let flat = Ray { origin: Vec3::new(0.0, 0.0, 3.0), direction: Vec3::new(1.0, 0.0, 0.0) };
        assert!(matches!(discretize_ray(&flat, 0.03), Err(GeometryError::NoGroundIntersection(_))));
        let down = Ray { origin: Vec3::new(0.0, 0.0, 3.0), direction: Vec3::new(0.0, 0.0, -1.0) };
        assert!(matches!(discretize_ray(&down, 0.0), Err(GeometryError::NonPositiveStep(_))));
    }

    #[test]
    fn pitch_boundary() {
        let pitch = PitchGeometry::default();
        assert!(pitch.contains(&Vec3::new(52.5, 34.0, 0.0)));
        assert!(!pitch.contains(&Vec3::new(52.6, 0.0, 0.0)));
        assert!(!pitch.contains(&Vec3::new(0.0, -34.1, 3.0)));
        assert!(PitchGeometry { length: 0.0, width: 1.0 }.validate().is_err());
    }

    #[test]
    fn calibration_record_round_trip() {
        let k = Matrix3::new(3000.0, 0.0, 3072.0, 0.0, 3000.0, 1620.0, 0.0, 0.0, 1.0);
        let c = CameraCalibration::look_at(k, Vec3::new(0.0, -60.0, 25.0), Vec3::zeros()).unwrap();
        let rec = CalibrationRecord::from(&c);
        assert_eq!(rec.k, [3000.0, 0.0, 3072.0, 0.0, 3000.0, 1620.0, 0.0, 0.0, 1.0]);
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.starts_with("{\"K\":"));
        let back: CameraCalibration = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        let bad = r#"{"K":[1,0,0,0,1,0,0,0,1],"R":[2,0,0,0,1,0,0,0,1],"T":[0,0,0]}"#;
        assert!(serde_json::from_str::<CameraCalibration>(bad).is_err());
    }
}
