//! Rigid transforms, 7-DoF boxes, volumetric IoU, cropping and the
//! box-anchored canonical frame.
//!
//! Boxes only rotate about `z`. The canonical frame of a box has its origin
//! at the box centre and its `x` axis along the heading; template and search
//! area are both expressed in the canonical frame of the previous prediction
//! before registration.

use alloc::vec::Vec;

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::{atan2, cos, fabs, sin, sqrt, wrap_angle};

pub type Point3 = nalgebra::Point3<f64>;
pub type Vec3 = Vector3<f64>;

/// Tolerance used when validating rotation matrices.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Slack added to box half-extents so that points lying exactly on a face
/// survive the rotate-into-box round trip.
const MEMBERSHIP_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a transform, checking orthonormality and `det = +1`.
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let t = Self {
            rotation,
            translation,
        };
        if !t.is_valid(ROTATION_TOLERANCE) {
            return Err(Error::invalid("rotation", "not a proper rotation matrix"));
        }
        Ok(t)
    }

    /// Rotation about `z` by `theta` followed by `translation`.
    pub fn from_yaw(theta: f64, translation: Vec3) -> Self {
        Self {
            rotation: rotation_z(theta),
            translation,
        }
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let r = &self.rotation;
        if !r
            .iter()
            .chain(self.translation.iter())
            .all(|v| v.is_finite())
        {
            return false;
        }
        let gram = r.transpose() * r - Matrix3::identity();
        gram.iter().all(|v| fabs(*v) <= tol) && fabs(r.determinant() - 1.0) <= tol
    }

    #[inline]
    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    #[inline]
    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Yaw of the rotation part, see [`heading_from_rotation`].
    pub fn yaw(&self) -> ZHeading {
        heading_from_rotation(&self.rotation)
    }
}

/// Applies `t` to every point; features are carried through unchanged.
pub fn apply_transform(t: &RigidTransform, c: &PointCloud) -> PointCloud {
    PointCloud {
        points: c.points.iter().map(|p| t.apply(p)).collect(),
        features: c.features.clone(),
    }
}

pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

pub fn invert(t: &RigidTransform) -> RigidTransform {
    t.inverse()
}

/// Counter-clockwise rotation about `z`.
pub fn rotation_z(theta: f64) -> Matrix3<f64> {
    let (s, c) = (sin(theta), cos(theta));
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Yaw extracted from a rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZHeading {
    /// Angle of the rotation projected onto the `xy` plane, in `(-pi, pi]`.
    pub angle: f64,
    /// Largest absolute deviation of the matrix from a pure `z` rotation
    /// layout (off-axis entries and `r22 - 1`).
    pub off_axis: f64,
}

impl ZHeading {
    pub const OFF_AXIS_LIMIT: f64 = 1e-6;

    /// True when the rotation has a significant component about `x` or `y`.
    pub fn is_flagged(&self) -> bool {
        self.off_axis > Self::OFF_AXIS_LIMIT
    }
}

pub fn heading_from_rotation(r: &Matrix3<f64>) -> ZHeading {
    let off_axis = [r[(0, 2)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)] - 1.0]
        .iter()
        .fold(0.0f64, |m, v| m.max(fabs(*v)));
    ZHeading {
        angle: wrap_angle(atan2(r[(1, 0)], r[(0, 0)])),
        off_axis,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxSize {
    pub l: f64,
    pub w: f64,
    pub h: f64,
}

impl BoxSize {
    pub fn new(l: f64, w: f64, h: f64) -> Result<Self> {
        if !(l > 0.0 && w > 0.0 && h > 0.0) || !(l.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(Error::invalid("size", "box dimensions must be positive"));
        }
        Ok(Self { l, w, h })
    }

    pub fn volume(&self) -> f64 {
        self.l * self.w * self.h
    }

    pub fn enlarged(&self, by: f64) -> BoxSize {
        BoxSize {
            l: self.l + by,
            w: self.w + by,
            h: self.h + by,
        }
    }
}

/// 7-parameter box: centre, `(l, w, h)` and heading about `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox3D {
    pub center: Vec3,
    pub size: BoxSize,
    heading: f64,
}

impl BBox3D {
    pub fn new(center: Vec3, size: BoxSize, heading: f64) -> Result<Self> {
        if !center.iter().all(|v| v.is_finite()) || !heading.is_finite() {
            return Err(Error::invalid("box", "non-finite centre or heading"));
        }
        let size = BoxSize::new(size.l, size.w, size.h)?;
        Ok(Self {
            center,
            size,
            heading: wrap_angle(heading),
        })
    }

    /// Heading in `(-pi, pi]`.
    pub fn heading(&self) -> f64 {
        self.heading
    }

    pub fn with_heading(mut self, heading: f64) -> Self {
        self.heading = wrap_angle(heading);
        self
    }

    pub fn with_center(mut self, center: Vec3) -> Self {
        self.center = center;
        self
    }

    /// `[x, y, z, l, w, h, theta]`.
    pub fn to_array(&self) -> [f64; 7] {
        [
            self.center.x,
            self.center.y,
            self.center.z,
            self.size.l,
            self.size.w,
            self.size.h,
            self.heading,
        ]
    }

    pub fn from_array(a: [f64; 7]) -> Result<Self> {
        Self::new(
            Vec3::new(a[0], a[1], a[2]),
            BoxSize {
                l: a[3],
                w: a[4],
                h: a[5],
            },
            a[6],
        )
    }

    /// Transform from this box's canonical frame to the world frame.
    pub fn pose(&self) -> RigidTransform {
        RigidTransform::from_yaw(self.heading, self.center)
    }

    /// Transform from the world frame into this box's canonical frame.
    pub fn world_to_canonical(&self) -> RigidTransform {
        self.pose().inverse()
    }

    /// Closed membership test after adding `enlarge` to each of `l, w, h`.
    pub fn contains(&self, p: &Point3, enlarge: f64) -> bool {
        let d = p.coords - self.center;
        let (s, c) = (sin(self.heading), cos(self.heading));
        let lx = c * d.x + s * d.y;
        let ly = -s * d.x + c * d.y;
        let size = self.size.enlarged(enlarge);
        fabs(lx) <= 0.5 * size.l + MEMBERSHIP_EPS
            && fabs(ly) <= 0.5 * size.w + MEMBERSHIP_EPS
            && fabs(d.z) <= 0.5 * size.h + MEMBERSHIP_EPS
    }

    /// Bird's-eye-view footprint corners, counter-clockwise.
    pub fn bev_corners(&self) -> [Vector2<f64>; 4] {
        let (s, c) = (sin(self.heading), cos(self.heading));
        let (hl, hw) = (0.5 * self.size.l, 0.5 * self.size.w);
        let local = [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)];
        // Order (+,+), (-,+), (-,-), (+,-) is counter-clockwise.
        local.map(|(x, y)| {
            Vector2::new(self.center.x + c * x - s * y, self.center.y + s * x + c * y)
        })
    }

    pub fn volume(&self) -> f64 {
        self.size.volume()
    }
}

/// Ordered points with optional per-point feature rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub features: Option<DMatrix<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self {
            points,
            features: None,
        }
    }

    pub fn with_features(points: Vec<Point3>, features: DMatrix<f64>) -> Result<Self> {
        if features.nrows() != points.len() {
            return Err(Error::DimensionMismatch {
                context: "feature rows",
                expected: points.len(),
                actual: features.nrows(),
            });
        }
        Ok(Self {
            points,
            features: Some(features),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Sub-cloud with the given indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            features: self
                .features
                .as_ref()
                .map(|f| f.select_rows(indices.iter())),
        }
    }

    pub fn centroid(&self) -> Option<Point3> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self
            .points
            .iter()
            .fold(Vec3::zeros(), |acc, p| acc + p.coords);
        Some(Point3::from(sum / self.points.len() as f64))
    }

    /// Concatenates two clouds. Features are kept only when both carry them.
    pub fn concat(&self, other: &PointCloud) -> PointCloud {
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        let features = match (&self.features, &other.features) {
            (Some(a), Some(b)) if a.ncols() == b.ncols() => {
                let mut m = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
                m.rows_mut(0, a.nrows()).copy_from(a);
                m.rows_mut(a.nrows(), b.nrows()).copy_from(b);
                Some(m)
            }
            _ => None,
        };
        PointCloud { points, features }
    }
}

impl From<Vec<Point3>> for PointCloud {
    fn from(points: Vec<Point3>) -> Self {
        PointCloud::new(points)
    }
}

fn polygon_area(poly: &[Vector2<f64>]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        twice += a.x * b.y - b.x * a.y;
    }
    0.5 * twice
}

#[inline]
fn cross2(o: Vector2<f64>, a: Vector2<f64>, p: Vector2<f64>) -> f64 {
    (a.x - o.x) * (p.y - o.y) - (a.y - o.y) * (p.x - o.x)
}

/// Sutherland–Hodgman clipping of `subject` by the convex counter-clockwise
/// polygon `clip`.
pub fn clip_convex(subject: &[Vector2<f64>], clip: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut output: Vec<Vector2<f64>> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let (ea, eb) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = core::mem::take(&mut output);
        for k in 0..input.len() {
            let cur = input[k];
            let prev = input[(k + input.len() - 1) % input.len()];
            let (sc, sp) = (cross2(ea, eb, cur), cross2(ea, eb, prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    output.push(prev + (cur - prev) * (sp / (sp - sc)));
                }
                output.push(cur);
            } else if sp >= 0.0 {
                output.push(prev + (cur - prev) * (sp / (sp - sc)));
            }
        }
    }
    output
}

/// Area of the bird's-eye-view footprint intersection.
pub fn bev_intersection_area(a: &BBox3D, b: &BBox3D) -> f64 {
    let inter = clip_convex(&a.bev_corners(), &b.bev_corners());
    polygon_area(&inter).max(0.0)
}

/// Exact volumetric IoU of two z-rotated boxes.
pub fn bbox_iou(a: &BBox3D, b: &BBox3D) -> f64 {
    let za = (a.center.z - 0.5 * a.size.h, a.center.z + 0.5 * a.size.h);
    let zb = (b.center.z - 0.5 * b.size.h, b.center.z + 0.5 * b.size.h);
    let dz = (za.1.min(zb.1) - za.0.max(zb.0)).max(0.0);
    if dz <= 0.0 {
        return 0.0;
    }
    // Cheap reject before clipping.
    let (ra, rb) = (
        libm::hypot(a.size.l, a.size.w),
        libm::hypot(b.size.l, b.size.w),
    );
    let dxy = (a.center.xy() - b.center.xy()).norm();
    if dxy > 0.5 * (ra + rb) {
        return 0.0;
    }
    let inter = bev_intersection_area(a, b) * dz;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Euclidean distance between box centres.
pub fn center_distance(a: &BBox3D, b: &BBox3D) -> f64 {
    let d = a.center - b.center;
    sqrt(d.dot(&d))
}

/// Points inside `bbox` after enlarging each of `l, w, h` by `enlarge_m`.
/// Boundary points are included and the input order is preserved.
pub fn crop(c: &PointCloud, bbox: &BBox3D, enlarge_m: f64) -> Result<PointCloud> {
    if !(enlarge_m >= 0.0) {
        return Err(Error::invalid("enlarge_m", "must be non-negative"));
    }
    let keep: Vec<usize> = c
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| bbox.contains(p, enlarge_m))
        .map(|(i, _)| i)
        .collect();
    Ok(c.select(&keep))
}

/// Expresses `c` in the canonical frame of `frame_box`.
pub fn canonicalize(c: &PointCloud, frame_box: &BBox3D) -> PointCloud {
    apply_transform(&frame_box.world_to_canonical(), c)
}

/// Inverse of [`canonicalize`].
pub fn decanonicalize(c: &PointCloud, frame_box: &BBox3D) -> PointCloud {
    apply_transform(&frame_box.pose(), c)
}

/// Expresses box `b` in the canonical frame of `frame_box`.
pub fn box_to_canonical(b: &BBox3D, frame_box: &BBox3D) -> BBox3D {
    let t = frame_box.world_to_canonical();
    BBox3D {
        center: t.apply(&Point3::from(b.center)).coords,
        size: b.size,
        heading: wrap_angle(b.heading - frame_box.heading),
    }
}

/// Inverse of [`box_to_canonical`].
pub fn box_from_canonical(b: &BBox3D, frame_box: &BBox3D) -> BBox3D {
    let t = frame_box.pose();
    BBox3D {
        center: t.apply(&Point3::from(b.center)).coords,
        size: b.size,
        heading: wrap_angle(b.heading + frame_box.heading),
    }
}

/// Resamples `c` to exactly `n` points.
///
/// With `|c| >= n` the result is a uniformly random subset without
/// replacement (a permutation when `|c| == n`). Otherwise every input point
/// appears once in shuffled order and the remainder is drawn with
/// replacement.
pub fn resample(c: &PointCloud, n: usize, seed: u64) -> Result<PointCloud> {
    if c.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = c.len();
    let indices: Vec<usize> = if len >= n {
        index::sample(&mut rng, len, n).into_vec()
    } else {
        let mut idx: Vec<usize> = (0..len).collect();
        idx.shuffle(&mut rng);
        idx.extend((len..n).map(|_| rng.random_range(0..len)));
        idx
    };
    Ok(c.select(&indices))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::PI;
    use alloc::vec;
    use approx::assert_relative_eq;

    fn unit(l: f64, w: f64, h: f64) -> BoxSize {
        BoxSize::new(l, w, h).unwrap()
    }

    #[test]
    fn identity_transform_is_noop() {
        let c = PointCloud::new(vec![
            Point3::new(1.0, 2.0, 3.0),
            Point3::new(-4.0, 0.5, 0.0),
        ]);
        assert_eq!(apply_transform(&RigidTransform::identity(), &c), c);
    }

    #[test]
    fn rz90_maps_x_to_y() {
        let t = RigidTransform::from_yaw(PI / 2.0, Vec3::zeros());
        let p = t.apply(&Point3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(p.coords, Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
        let r = rotation_z(PI / 2.0);
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(r, expected, epsilon = 1e-15);
    }

    #[test]
    fn compose_and_invert() {
        let t = RigidTransform::from_yaw(0.7, Vec3::new(1.0, -2.0, 0.3));
        assert_eq!(compose(&RigidTransform::identity(), &t), t);
        let inv = invert(&t);
        assert_relative_eq!(inv.rotation, rotation_z(-0.7), epsilon = 1e-15);
        let id = compose(&t, &inv);
        assert_relative_eq!(id.rotation, Matrix3::identity(), epsilon = 1e-12);
        assert_relative_eq!(id.translation, Vec3::zeros(), epsilon = 1e-12);

        let c = PointCloud::new(vec![
            Point3::new(3.0, 1.0, -1.0),
            Point3::new(0.1, 0.2, 0.3),
        ]);
        let back = apply_transform(&id, &c);
        for (a, b) in back.points.iter().zip(&c.points) {
            assert!((a - b).norm() < 1e-9);
        }

        let r30 = RigidTransform::from_yaw(PI / 6.0, Vec3::zeros());
        assert_relative_eq!(
            r30.compose(&r30).rotation,
            rotation_z(PI / 3.0),
            epsilon = 1e-15
        );
    }

    #[test]
    fn compose_applies_right_operand_first() {
        let a = RigidTransform::from_yaw(0.0, Vec3::new(1.0, 0.0, 0.0));
        let b = RigidTransform::from_yaw(PI / 2.0, Vec3::zeros());
        let p = Point3::new(1.0, 0.0, 0.0);
        // b first: (0,1,0), then a: (1,1,0).
        assert_relative_eq!(
            a.compose(&b).apply(&p).coords,
            Vec3::new(1.0, 1.0, 0.0),
            epsilon = 1e-15
        );
    }

    #[test]
    fn heading_roundtrip_and_flag() {
        assert_eq!(rotation_z(0.0), Matrix3::identity());
        let h = heading_from_rotation(&rotation_z(-2.5));
        assert!((h.angle + 2.5).abs() < 1e-12);
        assert!(!h.is_flagged());
        let tilted = nalgebra::Rotation3::from_euler_angles(0.3, 0.0, 0.4).into_inner();
        let h = heading_from_rotation(&tilted);
        assert!(h.is_flagged());
        assert!(h.angle.is_finite());
    }

    #[test]
    fn transform_validation() {
        assert!(RigidTransform::new(Matrix3::identity() * 2.0, Vec3::zeros()).is_err());
        let reflect = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(RigidTransform::new(reflect, Vec3::zeros()).is_err());
        assert!(RigidTransform::new(rotation_z(1.0), Vec3::zeros()).is_ok());
    }

    #[test]
    fn box_heading_is_normalized() {
        let b = BBox3D::new(Vec3::zeros(), unit(1.0, 1.0, 1.0), 3.0 * PI).unwrap();
        assert!((b.heading() - PI).abs() < 1e-12);
        assert!(BBox3D::new(
            Vec3::zeros(),
            BoxSize {
                l: 0.0,
                w: 1.0,
                h: 1.0
            },
            0.0
        )
        .is_err());
    }

    #[test]
    fn iou_cases() {
        let a = BBox3D::new(Vec3::zeros(), unit(2.0, 2.0, 2.0), 0.0).unwrap();
        assert_relative_eq!(bbox_iou(&a, &a), 1.0, epsilon = 1e-12);
        let far = a.with_center(Vec3::new(100.0, 0.0, 0.0));
        assert_eq!(bbox_iou(&a, &far), 0.0);
        let shifted = a.with_center(Vec3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(bbox_iou(&a, &shifted), 1.0 / 3.0, epsilon = 1e-12);
        // A square rotated by 90 degrees is the same footprint.
        let rot = a.with_heading(PI / 2.0);
        assert_relative_eq!(bbox_iou(&a, &rot), 1.0, epsilon = 1e-12);
        // Touching faces: zero volume overlap.
        let touching = a.with_center(Vec3::new(2.0, 0.0, 0.0));
        assert_relative_eq!(bbox_iou(&a, &touching), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn iou_rotated_square_in_square() {
        // Unit square rotated 45 degrees inside a 2x2 square: the diamond
        // with half-diagonal 1/sqrt(2) fits fully, intersection = 1.
        let big = BBox3D::new(Vec3::zeros(), unit(2.0, 2.0, 1.0), 0.0).unwrap();
        let small = BBox3D::new(Vec3::zeros(), unit(1.0, 1.0, 1.0), PI / 4.0).unwrap();
        assert_relative_eq!(bbox_iou(&big, &small), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn crop_boundaries() {
        let b = BBox3D::new(Vec3::zeros(), unit(1.0, 1.0, 1.0), 0.0).unwrap();
        let c = PointCloud::new(vec![
            Point3::new(1.4, 0.0, 0.0),
            Point3::new(1.5, 0.0, 0.0),
            Point3::new(1.6, 0.0, 0.0),
            Point3::new(0.5, 0.5, 0.5),
        ]);
        let kept = crop(&c, &b, 2.0).unwrap();
        assert_eq!(kept.points.len(), 3);
        assert_eq!(kept.points[0], c.points[0]);
        let tight = crop(&c, &b, 0.0).unwrap();
        assert_eq!(tight.points, vec![Point3::new(0.5, 0.5, 0.5)]);
        assert!(crop(&c, &b, -1.0).is_err());
        let empty = crop(&PointCloud::new(vec![Point3::new(9.0, 9.0, 9.0)]), &b, 0.0).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn canonical_frame() {
        let frame = BBox3D::new(Vec3::new(3.0, -1.0, 0.5), unit(4.0, 2.0, 1.5), PI / 2.0).unwrap();
        let c = PointCloud::new(vec![
            Point3::from(frame.center),
            Point3::from(frame.center + Vec3::new(0.0, 1.0, 0.0)),
        ]);
        let can = canonicalize(&c, &frame);
        assert!(can.points[0].coords.norm() < 1e-12);
        assert_relative_eq!(
            can.points[1].coords,
            Vec3::new(1.0, 0.0, 0.0),
            epsilon = 1e-12
        );
        let back = decanonicalize(&can, &frame);
        for (a, b) in back.points.iter().zip(&c.points) {
            assert!((a - b).norm() < 1e-12);
        }
        let other = BBox3D::new(Vec3::new(4.0, 2.0, 0.0), unit(1.0, 1.0, 1.0), -2.0).unwrap();
        let rt = box_from_canonical(&box_to_canonical(&other, &frame), &frame);
        assert!((rt.center - other.center).norm() < 1e-12);
        assert!((rt.heading() - other.heading()).abs() < 1e-12);
    }

    #[test]
    fn resample_contracts() {
        let c = PointCloud::new((0..5).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect());
        let p = resample(&c, 5, 3).unwrap();
        let mut xs: Vec<f64> = p.points.iter().map(|p| p.x).collect();
        xs.sort_by(f64::total_cmp);
        assert_eq!(xs, vec![0.0, 1.0, 2.0, 3.0, 4.0]);

        let small = PointCloud::new((0..3).map(|i| Point3::new(i as f64, 1.0, 0.0)).collect());
        let up = resample(&small, 6, 11).unwrap();
        assert_eq!(up.len(), 6);
        assert!(up.points.iter().all(|p| small.points.contains(p)));

        assert_eq!(resample(&c, 3, 42).unwrap(), resample(&c, 3, 42).unwrap());
        assert_eq!(
            resample(&PointCloud::default(), 4, 0),
            Err(Error::EmptyCloud)
        );
    }

    #[test]
    fn resample_carries_features() {
        let pts: Vec<Point3> = (0..4).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        let f = DMatrix::from_fn(4, 2, |r, c| (r * 10 + c) as f64);
        let c = PointCloud::with_features(pts, f).unwrap();
        let r = resample(&c, 7, 1).unwrap();
        let feats = r.features.as_ref().unwrap();
        for (k, p) in r.points.iter().enumerate() {
            assert_eq!(feats[(k, 0)], p.x * 10.0);
        }
    }
}
