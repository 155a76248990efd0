//! Rigid transforms with frame tags, the left/right-handedness convention
//! between the virtual model and the physical head, and the calibration chain
//! that places the virtual model in the world frame.
//!
//! Conventions: a [`TaggedTransform`] with `from = A, to = B` maps points
//! expressed in frame `A` into frame `B`; in the chain-arrow notation used in
//! messages that is `T_B←A`. Translations are millimeters. Every transform is
//! SE(3) (rotation determinant +1) except the single virtual-model → head
//! convention transform, which carries a reflection (determinant −1) to change
//! handedness.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::Point3;

/// Per-entry tolerance for orthonormality and determinant checks.
pub const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("frame mismatch: cannot compose {a_to}<-{a_from} with {b_to}<-{b_from} (left `from` must equal right `to`)")]
    FrameMismatch {
        a_from: FrameId,
        a_to: FrameId,
        b_from: FrameId,
        b_to: FrameId,
    },
    #[error("expected a {expected_to}<-{expected_from} transform, got {got_to}<-{got_from}")]
    UnexpectedFrames {
        expected_from: FrameId,
        expected_to: FrameId,
        got_from: FrameId,
        got_to: FrameId,
    },
    #[error("rotation block is not orthonormal (max deviation {deviation:.3e})")]
    NotOrthonormal { deviation: f64 },
    #[error("rotation determinant {det:.9} is not allowed for {to}<-{from} (a reflection is only allowed for H<-V)")]
    InvalidDeterminant {
        det: f64,
        from: FrameId,
        to: FrameId,
    },
    #[error("transform contains non-finite entries")]
    NonFinite,
}

/// The four coordinate frames of the calibration chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FrameId {
    /// Camera frame (`C`) — the headset or RGB-D camera taking the current view.
    #[serde(rename = "C")]
    Camera,
    /// Head frame (`H`) — right-handed, nose tip at the origin, axes aligned
    /// with the facial orientation.
    #[serde(rename = "H")]
    Head,
    /// Virtual-model frame (`V`) — the rendered anatomical model's own frame
    /// (left-handed relative to `H`).
    #[serde(rename = "V")]
    VirtualModel,
    /// World frame (`W`) — the virtual world the headset localizes in.
    #[serde(rename = "W")]
    World,
}

impl FrameId {
    pub fn letter(self) -> &'static str {
        match self {
            FrameId::Camera => "C",
            FrameId::Head => "H",
            FrameId::VirtualModel => "V",
            FrameId::World => "W",
        }
    }
}

impl std::fmt::Display for FrameId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.letter())
    }
}

impl std::str::FromStr for FrameId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "C" => Ok(FrameId::Camera),
            "H" => Ok(FrameId::Head),
            "V" => Ok(FrameId::VirtualModel),
            "W" => Ok(FrameId::World),
            other => Err(format!(
                "unknown frame {other:?}, expected one of C, H, V, W"
            )),
        }
    }
}

/// A proper rotation (orthonormal, determinant +1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation3 {
    matrix: Matrix3<f64>,
}

impl Rotation3 {
    pub fn identity() -> Self {
        Self {
            matrix: Matrix3::identity(),
        }
    }

    /// Validates orthonormality and determinant +1 within [`ROTATION_TOL`].
    pub fn from_matrix(matrix: Matrix3<f64>) -> Result<Self, TransformError> {
        if !matrix.iter().all(|e| e.is_finite()) {
            return Err(TransformError::NonFinite);
        }
        let deviation = orthonormality_deviation(&matrix);
        if deviation > ROTATION_TOL {
            return Err(TransformError::NotOrthonormal { deviation });
        }
        let det = matrix.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(TransformError::InvalidDeterminant {
                det,
                from: FrameId::Head,
                to: FrameId::Head,
            });
        }
        Ok(Self { matrix })
    }

    /// Rodrigues rotation about `axis` (need not be unit) by `angle` radians.
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let a = Vector3::new(axis[0], axis[1], axis[2]);
        let n = a.norm();
        if n == 0.0 {
            return Self::identity();
        }
        Self {
            matrix: rodrigues(&(a / n * angle)),
        }
    }

    pub fn about_x(angle: f64) -> Self {
        Self::from_axis_angle([1.0, 0.0, 0.0], angle)
    }

    pub fn about_y(angle: f64) -> Self {
        Self::from_axis_angle([0.0, 1.0, 0.0], angle)
    }

    pub fn about_z(angle: f64) -> Self {
        Self::from_axis_angle([0.0, 0.0, 1.0], angle)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    pub fn inverse(&self) -> Self {
        Self {
            matrix: self.matrix.transpose(),
        }
    }

    /// Geodesic angle (radians) between two rotations.
    pub fn angle_to(&self, other: &Rotation3) -> f64 {
        let rel = self.matrix.transpose() * other.matrix;
        let cos = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        cos.acos()
    }
}

/// Geodesic angle (radians) between two rotation matrices.
pub fn geodesic_angle(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let rel = a.transpose() * b;
    (((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0)).acos()
}

/// Exponential map of so(3): axis-angle vector to rotation matrix.
pub(crate) fn rodrigues(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    if theta < 1e-12 {
        // Second-order expansion keeps tiny GN steps smooth.
        return Matrix3::identity() + skew(w) + skew(w) * skew(w) * 0.5;
    }
    let k = skew(&(w / theta));
    Matrix3::identity() + k * theta.sin() + k * k * (1.0 - theta.cos())
}

pub(crate) fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn orthonormality_deviation(m: &Matrix3<f64>) -> f64 {
    let gram = m.transpose() * m;
    let mut dev: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let expected = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((gram[(i, j)] - expected).abs());
        }
    }
    dev
}

/// A rigid (SE(3)) transform: proper rotation plus translation in millimeters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Rotation3,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Rotation3, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: Rotation3 {
                matrix: self.rotation.matrix * other.rotation.matrix,
            },
            translation: self.rotation.matrix * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.matrix.transpose();
        RigidTransform {
            rotation: Rotation3 { matrix: rt },
            translation: -(rt * self.translation),
        }
    }

    pub fn apply(&self, p: Point3) -> Point3 {
        let v = self.rotation.matrix * Vector3::new(p.x, p.y, p.z) + self.translation;
        Point3::new(v.x, v.y, v.z)
    }
}

/// A 4×4 homogeneous transform annotated with source and destination frames.
///
/// `from`/`to` tags make composition order checkable: `a.compose(&b)` requires
/// `a.from == b.to` and yields a transform tagged `b.from → a.to` with matrix
/// `a.matrix * b.matrix`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedTransform {
    from: FrameId,
    to: FrameId,
    matrix: Matrix4<f64>,
}

impl TaggedTransform {
    pub fn identity(from: FrameId, to: FrameId) -> Self {
        Self {
            from,
            to,
            matrix: Matrix4::identity(),
        }
    }

    /// Builds from a validated rigid transform; always a legal SE(3) tag.
    pub fn from_rigid(from: FrameId, to: FrameId, rigid: &RigidTransform) -> Self {
        let mut matrix = Matrix4::identity();
        matrix
            .fixed_view_mut::<3, 3>(0, 0)
            .copy_from(rigid.rotation.matrix());
        matrix
            .fixed_view_mut::<3, 1>(0, 3)
            .copy_from(&rigid.translation);
        Self { from, to, matrix }
    }

    /// Builds from an explicit rotation block and translation, enforcing the
    /// construction invariant: orthonormal rotation with determinant +1, or
    /// determinant −1 only when tagged `V → H` (the handedness convention).
    pub fn from_rotation_translation(
        from: FrameId,
        to: FrameId,
        rotation: Matrix3<f64>,
        translation_mm: Vector3<f64>,
    ) -> Result<Self, TransformError> {
        if !rotation.iter().all(|e| e.is_finite()) || !translation_mm.iter().all(|e| e.is_finite())
        {
            return Err(TransformError::NonFinite);
        }
        let deviation = orthonormality_deviation(&rotation);
        if deviation > ROTATION_TOL {
            return Err(TransformError::NotOrthonormal { deviation });
        }
        let det = rotation.determinant();
        let reflection_allowed = from == FrameId::VirtualModel && to == FrameId::Head;
        let det_ok = (det - 1.0).abs() <= ROTATION_TOL
            || (reflection_allowed && (det + 1.0).abs() <= ROTATION_TOL);
        if !det_ok {
            return Err(TransformError::InvalidDeterminant { det, from, to });
        }
        let mut matrix = Matrix4::identity();
        matrix.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        matrix
            .fixed_view_mut::<3, 1>(0, 3)
            .copy_from(&translation_mm);
        Ok(Self { from, to, matrix })
    }

    pub fn from_frame(&self) -> FrameId {
        self.from
    }

    pub fn to_frame(&self) -> FrameId {
        self.to
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.matrix
    }

    pub fn rotation_block(&self) -> Matrix3<f64> {
        self.matrix.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.matrix.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Chain composition: `self ∘ other`, requiring `self.from == other.to`.
    pub fn compose(&self, other: &TaggedTransform) -> Result<TaggedTransform, TransformError> {
        if self.from != other.to {
            return Err(TransformError::FrameMismatch {
                a_from: self.from,
                a_to: self.to,
                b_from: other.from,
                b_to: other.to,
            });
        }
        Ok(TaggedTransform {
            from: other.from,
            to: self.to,
            matrix: self.matrix * other.matrix,
        })
    }

    /// Inverse with swapped tags. Uses the closed form for transforms with an
    /// orthogonal rotation block: `[R t; 0 1]⁻¹ = [Rᵀ −Rᵀt; 0 1]`.
    pub fn inverse(&self) -> TaggedTransform {
        let r = self.rotation_block();
        let t = self.translation();
        let rt = r.transpose();
        let mut matrix = Matrix4::identity();
        matrix.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        matrix.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-(rt * t)));
        TaggedTransform {
            from: self.to,
            to: self.from,
            matrix,
        }
    }

    pub fn apply_point(&self, p: Point3) -> Point3 {
        let r = self.rotation_block();
        let t = self.translation();
        let v = r * Vector3::new(p.x, p.y, p.z) + t;
        Point3::new(v.x, v.y, v.z)
    }

    /// Largest absolute entry difference against another transform's matrix.
    pub fn max_abs_diff(&self, other: &TaggedTransform) -> f64 {
        let mut dev: f64 = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                dev = dev.max((self.matrix[(i, j)] - other.matrix[(i, j)]).abs());
            }
        }
        dev
    }
}

/// The virtual-model → head handedness convention `T_H←V`: invert the model
/// frame's z-axis, then rotate 180° about y. The composite rotation block is
/// `diag(−1, 1, 1)` (determinant −1), with zero translation since both frames
/// keep their origin at the nose tip. Applying it twice is the identity.
pub fn model_to_head_convention() -> TaggedTransform {
    let y_180 = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
    let z_flip = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
    let rotation = y_180 * z_flip;
    TaggedTransform::from_rotation_translation(
        FrameId::VirtualModel,
        FrameId::Head,
        rotation,
        Vector3::zeros(),
    )
    .expect("convention transform is orthonormal by construction")
}

/// Computes the virtual model's world pose `T_W←V = T_W←C · T_C←H · T_H←V`.
///
/// `t_head_in_camera` must be tagged `H → C` (the PnP output `T_C←H`) and
/// `t_camera_in_world` must be tagged `C → W` (the SLAM pose `T_W←C`). The
/// result is tagged `V → W`; mapping a scaled model landmark's virtual-frame
/// coordinates through it lands on the corresponding real head point's world
/// position.
pub fn solve_world_pose(
    t_head_in_camera: &TaggedTransform,
    t_camera_in_world: &TaggedTransform,
) -> Result<TaggedTransform, TransformError> {
    expect_frames(t_head_in_camera, FrameId::Head, FrameId::Camera)?;
    expect_frames(t_camera_in_world, FrameId::Camera, FrameId::World)?;
    t_camera_in_world
        .compose(t_head_in_camera)?
        .compose(&model_to_head_convention())
}

fn expect_frames(t: &TaggedTransform, from: FrameId, to: FrameId) -> Result<(), TransformError> {
    if t.from_frame() != from || t.to_frame() != to {
        return Err(TransformError::UnexpectedFrames {
            expected_from: from,
            expected_to: to,
            got_from: t.from_frame(),
            got_to: t.to_frame(),
        });
    }
    Ok(())
}
