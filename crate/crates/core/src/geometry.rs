//! Planar rigid transforms and ego-motion compensation.
//!
//! Axis convention: `x` forward, `y` left, `z` up. Every sensor reading is
//! eventually expressed in the frame of the ego vehicle at the current
//! timestep t₀, which stays fixed for all input and output horizons.
//!
//! Ego motion is planar: heights pass through every transform untouched.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(angle: f64) -> f64 {
    let wrapped = angle.rem_euclid(2.0 * PI);
    if wrapped > PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

/// A planar pose (position and heading) relative to some parent frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    yaw: f64,
}

impl Default for Pose2 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose2 {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            yaw: normalize_angle(yaw),
        }
    }

    pub const fn identity() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            yaw: 0.0,
        }
    }

    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    /// The rigid motion "apply `other` first, then `self`".
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (s, c) = self.yaw.sin_cos();
        Pose2::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.yaw + other.yaw,
        )
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.yaw.sin_cos();
        Pose2::new(-c * self.x - s * self.y, s * self.x - c * self.y, -self.yaw)
    }

    /// Maps a planar point from this pose's local frame into the parent frame.
    pub fn transform_xy(&self, (px, py): (f64, f64)) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        (self.x + c * px - s * py, self.y + s * px + c * py)
    }

    /// Rotates a free vector (velocity, direction) from local to parent frame.
    pub fn rotate_vec(&self, (vx, vy): (f64, f64)) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        (c * vx - s * vy, s * vx + c * vy)
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        let (x, y) = self.transform_xy((p.x, p.y));
        Point3 { x, y, z: p.z }
    }

    /// True if both poses agree within `tol` in position and heading.
    pub fn approx_eq(&self, other: &Pose2, tol: f64) -> bool {
        (self.x - other.x).abs() <= tol
            && (self.y - other.y).abs() <= tol
            && normalize_angle(self.yaw - other.yaw).abs() <= tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2) + (self.z - other.z).powi(2)).sqrt()
    }
}

/// Frame a point or return set is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameId {
    World,
    /// Ego frame at the given timestep index of the scene timeline.
    EgoAt(usize),
}

/// Re-expresses points given in the frame `source_pose` (a pose in the world
/// frame) relative to the ego pose at t₀. Heights are unchanged.
pub fn to_ego_frame(points: &[Point3], source_pose: &Pose2, ego_pose_t0: &Pose2) -> Vec<Point3> {
    let source_to_ego = ego_pose_t0.inverse().compose(source_pose);
    points.iter().map(|p| source_to_ego.transform_point(p)).collect()
}

/// Removes the ego contribution from a Doppler measurement.
///
/// `radial_velocity` is the range rate of the return (positive when the
/// target moves away from the sensor) and `azimuth` the return's bearing in
/// the ego frame. The result is the ground-relative velocity component along
/// the bearing, decomposed into ego-frame `(vx, vy)`. A static target yields
/// zero for any ego velocity.
pub fn compensate_doppler(radial_velocity: f64, azimuth: f64, ego_velocity: (f64, f64)) -> (f64, f64) {
    let (uy, ux) = azimuth.sin_cos();
    let ground_radial = radial_velocity + ego_velocity.0 * ux + ego_velocity.1 * uy;
    (ground_radial * ux, ground_radial * uy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn compose_identity_and_inverse() {
        let p = Pose2::new(1.5, -2.0, 0.7);
        assert_eq!(Pose2::identity().compose(&p), p);
        assert!(p.compose(&p.inverse()).approx_eq(&Pose2::identity(), 1e-12));
    }

    #[test]
    fn pure_translations_add() {
        let r = Pose2::new(1.0, 0.0, 0.0).compose(&Pose2::new(0.0, 1.0, 0.0));
        assert_eq!(r, Pose2::new(1.0, 1.0, 0.0));
    }

    #[test]
    fn yaw_is_normalized() {
        assert!((Pose2::new(0.0, 0.0, 3.0 * PI).yaw() - PI).abs() < 1e-12);
        assert!((Pose2::new(0.0, 0.0, -PI).yaw() - PI).abs() < 1e-12);
        assert!((Pose2::new(0.0, 0.0, -0.5).yaw() + 0.5).abs() < 1e-15);
    }

    #[test]
    fn to_ego_frame_examples() {
        let pts = vec![Point3::new(1.0, 2.0, 0.3), Point3::new(-4.0, 0.5, 1.1)];
        let pose = Pose2::new(3.0, -1.0, 0.4);
        let same = to_ego_frame(&pts, &pose, &pose);
        for (a, b) in same.iter().zip(&pts) {
            assert!(a.distance(b) < 1e-12);
        }

        let world = Pose2::identity();
        let out = to_ego_frame(&[Point3::new(1.0, 0.0, 0.0)], &world, &world);
        assert_eq!(out[0], Point3::new(1.0, 0.0, 0.0));

        let ego = Pose2::new(0.0, 0.0, FRAC_PI_2);
        let out = to_ego_frame(&[Point3::new(0.0, 1.0, 0.0)], &world, &ego);
        assert!((out[0].x - 1.0).abs() < 1e-12);
        assert!(out[0].y.abs() < 1e-12);
        assert_eq!(out[0].z, 0.0);
    }

    #[test]
    fn doppler_examples() {
        let (vx, vy) = compensate_doppler(2.0, 0.0, (0.0, 0.0));
        assert_eq!((vx, vy), (2.0, 0.0));

        // Driving at 5 m/s toward a static target dead ahead: range shrinks.
        let (vx, vy) = compensate_doppler(-5.0, 0.0, (5.0, 0.0));
        assert!(vx.abs() < 1e-12 && vy.abs() < 1e-12);

        // Ego (3,0), range rate 1 on the left: ego motion is perpendicular
        // to the bearing, so only the measured radial component remains.
        let (vx, vy) = compensate_doppler(1.0, FRAC_PI_2, (3.0, 0.0));
        assert!(vx.abs() < 1e-12);
        assert!((vy - 1.0).abs() < 1e-12);
    }

    fn pose() -> impl Strategy<Value = Pose2> {
        (-50.0..50.0f64, -50.0..50.0f64, -4.0..4.0f64).prop_map(|(x, y, t)| Pose2::new(x, y, t))
    }

    proptest! {
        #[test]
        fn compose_inverse_is_identity(p in pose()) {
            prop_assert!(p.compose(&p.inverse()).approx_eq(&Pose2::identity(), 1e-12));
            prop_assert!(p.inverse().compose(&p).approx_eq(&Pose2::identity(), 1e-12));
        }

        #[test]
        fn compose_is_associative(a in pose(), b in pose(), c in pose()) {
            let l = a.compose(&b).compose(&c);
            let r = a.compose(&b.compose(&c));
            prop_assert!(l.approx_eq(&r, 1e-9));
        }

        #[test]
        fn to_ego_frame_preserves_distances(
            src in pose(), ego in pose(),
            pts in prop::collection::vec((-30.0..30.0f64, -30.0..30.0f64, 0.0..3.0f64), 2..12)
        ) {
            let pts: Vec<Point3> = pts.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect();
            let out = to_ego_frame(&pts, &src, &ego);
            for i in 0..pts.len() {
                prop_assert_eq!(out[i].z, pts[i].z);
                for j in 0..pts.len() {
                    let d0 = pts[i].distance(&pts[j]);
                    let d1 = out[i].distance(&out[j]);
                    prop_assert!((d0 - d1).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn static_target_compensates_to_zero(
            vx in -20.0..20.0f64, vy in -20.0..20.0f64,
            tx in -40.0..40.0f64, ty in -40.0..40.0f64,
        ) {
            prop_assume!(tx.hypot(ty) > 0.1);
            let az = ty.atan2(tx);
            let (uy, ux) = az.sin_cos();
            // Range rate of a static target seen from an ego moving at (vx, vy).
            let range_rate = -(vx * ux + vy * uy);
            let (gx, gy) = compensate_doppler(range_rate, az, (vx, vy));
            prop_assert!(gx.abs() < 1e-9 && gy.abs() < 1e-9);
        }
    }
}
