//! Pinhole cameras, rigid transforms and projection.
//!
//! Conventions used everywhere in this crate: right-handed camera frame with
//! +z forward, +x right, +y down; pixel (0,0) at the image top-left with
//! pixel centers at integer coordinates; rotations stored as unit quaternions
//! and renormalized after every composition. No lens distortion.

use std::sync::Arc;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::raster::ColorRaster;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("point is not in front of the camera (z = {0})")]
    NonPositiveDepth(f64),
}

/// Continuous image coordinates in pixels. May be out of bounds; consumers
/// check bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, other: &Pixel) -> f64 {
        ((self.u - other.u).powi(2) + (self.v - other.v).powi(2)).sqrt()
    }
}

/// Calibrated pinhole intrinsics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Self {
        assert!(fx > 0.0 && fy > 0.0, "focal lengths must be positive");
        assert!(
            cx >= 0.0 && cx < width as f64 && cy >= 0.0 && cy < height as f64,
            "principal point must lie inside the image"
        );
        Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        }
    }

    /// Camera-frame ray through a pixel, z normalized to 1.
    #[inline]
    pub fn ray(&self, p: Pixel) -> Vector3<f64> {
        Vector3::new((p.u - self.cx) / self.fx, (p.v - self.cy) / self.fy, 1.0)
    }

    /// True if the pixel lies within the sampling domain [0, w-1] x [0, h-1].
    #[inline]
    pub fn contains(&self, p: Pixel) -> bool {
        p.u >= 0.0
            && p.v >= 0.0
            && p.u <= (self.width - 1) as f64
            && p.v <= (self.height - 1) as f64
    }
}

/// Projects a camera-frame point, returning the pixel and its camera-frame
/// depth z.
pub fn project(intr: &CameraIntrinsics, point_cam: &Vector3<f64>) -> Result<(Pixel, f64), GeometryError> {
    let z = point_cam.z;
    if z <= 0.0 {
        return Err(GeometryError::NonPositiveDepth(z));
    }
    Ok((
        Pixel::new(
            intr.fx * point_cam.x / z + intr.cx,
            intr.fy * point_cam.y / z + intr.cy,
        ),
        z,
    ))
}

/// Lifts a pixel at camera-frame depth z back to a camera-frame point.
pub fn unproject(intr: &CameraIntrinsics, p: Pixel, depth: f64) -> Result<Vector3<f64>, GeometryError> {
    if depth <= 0.0 {
        return Err(GeometryError::NonPositiveDepth(depth));
    }
    Ok(intr.ray(p) * depth)
}

/// Rigid body transform: rotation then translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: UnitQuaternion::new_normalize(rotation.into_inner()),
            translation,
        }
    }

    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_wxyz(q: [f64; 4], t: [f64; 3]) -> Self {
        Self::new(
            UnitQuaternion::new_normalize(Quaternion::new(q[0], q[1], q[2], q[3])),
            Vector3::new(t[0], t[1], t[2]),
        )
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), t)
    }

    #[inline]
    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    #[inline]
    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// self then applied after `rhs`: (self ∘ rhs)(x) = self(rhs(x)).
    pub fn compose(&self, rhs: &RigidTransform) -> RigidTransform {
        RigidTransform::new(
            self.rotation * rhs.rotation,
            self.rotation * rhs.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> RigidTransform {
        let inv_rot = self.rotation.inverse();
        RigidTransform::new(inv_rot, -(inv_rot * self.translation))
    }
}

impl std::ops::Mul for &RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: &RigidTransform) -> RigidTransform {
        self.compose(rhs)
    }
}

/// Geodesic rotation angle in [0, pi].
pub fn rotation_angle(t: &RigidTransform) -> f64 {
    let q = t.rotation.quaternion();
    2.0 * q.vector().norm().atan2(q.w.abs())
}

/// A calibrated view: camera id distinguishes rig positions, view id is
/// unique per (camera, frame).
#[derive(Debug, Clone)]
pub struct CameraView {
    pub view_id: u32,
    pub camera_id: u32,
    pub timestamp: f64,
    pub intrinsics: CameraIntrinsics,
    pub world_from_camera: RigidTransform,
    pub image: Option<Arc<ColorRaster>>,
}

impl CameraView {
    pub fn new(
        view_id: u32,
        camera_id: u32,
        timestamp: f64,
        intrinsics: CameraIntrinsics,
        world_from_camera: RigidTransform,
    ) -> Self {
        Self {
            view_id,
            camera_id,
            timestamp,
            intrinsics,
            world_from_camera,
            image: None,
        }
    }

    pub fn with_image(mut self, image: Arc<ColorRaster>) -> Self {
        assert_eq!(image.width(), self.intrinsics.width, "image width mismatch");
        assert_eq!(image.height(), self.intrinsics.height, "image height mismatch");
        self.image = Some(image);
        self
    }

    pub fn camera_from_world(&self) -> RigidTransform {
        self.world_from_camera.inverse()
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        *self.world_from_camera.translation()
    }

    /// Normalized world-frame direction of the ray through a pixel.
    pub fn pixel_ray_world(&self, p: Pixel) -> Vector3<f64> {
        self.world_from_camera.rotate(&self.intrinsics.ray(p).normalize())
    }
}

/// Transform mapping reference-camera coordinates into supporting-camera
/// coordinates.
pub fn relative_pose(reference: &CameraView, supporting: &CameraView) -> RigidTransform {
    supporting
        .camera_from_world()
        .compose(&reference.world_from_camera)
}

/// Translation from the reference camera center to the supporting camera
/// center, expressed in the reference camera frame, so z is displacement
/// along the reference viewing axis.
pub fn baseline_in_reference_frame(reference: &CameraView, supporting: &CameraView) -> Vector3<f64> {
    reference
        .camera_from_world()
        .rotate(&(supporting.center() - reference.center()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::KeyedRng;
    use approx::assert_relative_eq;

    fn unit_intr() -> CameraIntrinsics {
        CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 4, 4)
    }

    fn random_transform(rng: &mut KeyedRng) -> RigidTransform {
        let q = Quaternion::new(
            rng.normal(),
            rng.normal(),
            rng.normal(),
            rng.normal(),
        );
        RigidTransform::new(
            UnitQuaternion::new_normalize(q),
            Vector3::new(rng.range(-5.0, 5.0), rng.range(-5.0, 5.0), rng.range(-5.0, 5.0)),
        )
    }

    #[test]
    fn project_principal_ray() {
        let (p, z) = project(&unit_intr(), &Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!((p.u, p.v, z), (0.0, 0.0, 1.0));
    }

    #[test]
    fn project_hand_checked_pinhole() {
        let intr = CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 101, 101);
        let (p, z) = project(&intr, &Vector3::new(0.1, 0.0, 2.0)).unwrap();
        assert_relative_eq!(p.u, 55.0, epsilon = 1e-12);
        assert_relative_eq!(p.v, 50.0, epsilon = 1e-12);
        assert_relative_eq!(z, 2.0);
    }

    #[test]
    fn project_behind_camera_errors() {
        let err = project(&unit_intr(), &Vector3::new(0.0, 0.0, -1.0)).unwrap_err();
        assert_eq!(err, GeometryError::NonPositiveDepth(-1.0));
    }

    #[test]
    fn unproject_identity_and_inverse() {
        let intr = unit_intr();
        let x = unproject(&intr, Pixel::new(0.0, 0.0), 1.0).unwrap();
        assert_eq!(x, Vector3::new(0.0, 0.0, 1.0));

        let intr = CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 101, 101);
        let x = unproject(&intr, Pixel::new(55.0, 50.0), 2.0).unwrap();
        assert_relative_eq!(x.x, 0.1, epsilon = 1e-12);
        assert_relative_eq!(x.y, 0.0, epsilon = 1e-12);
        assert_relative_eq!(x.z, 2.0, epsilon = 1e-12);

        assert!(unproject(&intr, Pixel::new(3.0, 3.0), 0.0).is_err());
    }

    #[test]
    fn unproject_project_round_trip_random() {
        let intr = CameraIntrinsics::new(320.0, 300.0, 160.0, 120.0, 320, 240);
        let mut rng = KeyedRng::from_key(&[101]);
        for _ in 0..10_000 {
            let p = Pixel::new(rng.range(0.0, 319.0), rng.range(0.0, 239.0));
            let z = rng.range(0.1, 80.0);
            let x = unproject(&intr, p, z).unwrap();
            let (q, zq) = project(&intr, &x).unwrap();
            assert!(q.distance(&p) < 1e-9, "round trip drift {}", q.distance(&p));
            assert!((zq - z).abs() < 1e-9);
        }
    }

    #[test]
    fn transform_compose_inverse_identity() {
        let mut rng = KeyedRng::from_key(&[7]);
        for _ in 0..10_000 {
            let t = random_transform(&mut rng);
            let id = t.compose(&t.inverse());
            assert!(id.translation().norm() < 1e-9);
            assert!(rotation_angle(&id) < 1e-9);
        }
    }

    #[test]
    fn relative_pose_matches_hand_composition() {
        let intr = unit_intr();
        let a = CameraView::new(0, 0, 0.0, intr, RigidTransform::identity());
        let b = CameraView::new(
            1,
            0,
            0.1,
            intr,
            RigidTransform::from_translation(Vector3::new(1.0, 0.0, 0.0)),
        );
        let rel = relative_pose(&a, &b);
        assert_relative_eq!(rel.translation().x, -1.0, epsilon = 1e-12);
        assert!(rotation_angle(&rel) < 1e-12);

        let self_rel = relative_pose(&a, &a);
        assert!(self_rel.translation().norm() < 1e-12);
        assert!(rotation_angle(&self_rel) < 1e-12);

        let ab = relative_pose(&a, &b);
        let ba = relative_pose(&b, &a);
        let id = ab.compose(&ba);
        assert!(id.translation().norm() < 1e-9);
        assert!(rotation_angle(&id) < 1e-9);
    }

    #[test]
    fn rotation_angle_basics() {
        assert_eq!(rotation_angle(&RigidTransform::identity()), 0.0);
        let quarter = RigidTransform::new(
            UnitQuaternion::from_axis_angle(&Vector3::y_axis(), std::f64::consts::FRAC_PI_2),
            Vector3::zeros(),
        );
        assert_relative_eq!(rotation_angle(&quarter), std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn rotation_angle_matches_half_angle_oracle() {
        let mut rng = KeyedRng::from_key(&[55]);
        for _ in 0..10_000 {
            let t = random_transform(&mut rng);
            let w = t.rotation().quaternion().w;
            let oracle = 2.0 * w.abs().min(1.0).acos();
            assert!((rotation_angle(&t) - oracle).abs() < 1e-9);
            assert!((rotation_angle(&t) - rotation_angle(&t.inverse())).abs() < 1e-12);
            let a = rotation_angle(&t);
            assert!((0.0..=std::f64::consts::PI + 1e-12).contains(&a));
        }
    }

    #[test]
    fn baseline_is_expressed_in_reference_frame() {
        let intr = unit_intr();
        // Reference looks down +x after a -90 degree yaw about y.
        let yaw = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), std::f64::consts::FRAC_PI_2);
        let reference = CameraView::new(0, 0, 0.0, intr, RigidTransform::new(yaw, Vector3::zeros()));
        let supporting = CameraView::new(
            1,
            0,
            0.0,
            intr,
            RigidTransform::from_translation(Vector3::new(1.0, 0.0, 0.0)),
        );
        let t = baseline_in_reference_frame(&reference, &supporting);
        // World +x is the reference camera's +z (forward).
        assert_relative_eq!(t.z, 1.0, epsilon = 1e-12);
        assert!(t.x.abs() < 1e-12 && t.y.abs() < 1e-12);
    }
}
