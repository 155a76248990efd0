//! Canonical anatomical-model landmarks, face measurement from reconstructed
//! 3D points, and per-axis model scaling.
//!
//! The model frame is right-handed and head-aligned: x spans the face width,
//! y the face length (chin to forehead), z points out of the face, and the
//! nose tip sits at the origin. Scale factors pair as `a_x = w/w_o`,
//! `a_y = l/l_o`, `a_z = (a_x + a_y)/2`; the rendered model uses the single
//! uniform factor `a_z` to keep its shape.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::Point3;

#[derive(Debug, Error)]
pub enum FaceModelError {
    #[error("landmark {0} is missing")]
    MissingLandmark(LandmarkId),
    #[error("measurements must be positive, got width {width} mm, length {length} mm")]
    NonPositiveMeasurement { width: f64, length: f64 },
    #[error("invalid canonical model: {rule}")]
    InvalidModel { rule: String },
    #[error("scale factors must be positive, got ({a_x}, {a_y})")]
    NonPositiveScale { a_x: f64, a_y: f64 },
}

/// Identifier of a facial landmark (detector keypoint index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LandmarkId(pub u32);

impl std::fmt::Display for LandmarkId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "#{}", self.0)
    }
}

pub type LandmarkMap = BTreeMap<LandmarkId, Point3>;

/// The canonical anatomical model: landmark positions with known width and
/// length, plus the landmark pairs those dimensions are measured between.
#[derive(Debug, Clone)]
pub struct CanonicalModel {
    landmarks: LandmarkMap,
    width_mm: f64,
    length_mm: f64,
    width_pair: (LandmarkId, LandmarkId),
    length_pair: (LandmarkId, LandmarkId),
}

impl CanonicalModel {
    pub fn new(
        landmarks: LandmarkMap,
        width_mm: f64,
        length_mm: f64,
        width_pair: (LandmarkId, LandmarkId),
        length_pair: (LandmarkId, LandmarkId),
    ) -> Result<Self, FaceModelError> {
        let rule = |msg: String| FaceModelError::InvalidModel { rule: msg };
        if !(width_mm > 0.0 && length_mm > 0.0) {
            return Err(rule(format!(
                "model dimensions must be positive, got {width_mm} x {length_mm} mm"
            )));
        }
        for (id, p) in &landmarks {
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(rule(format!("landmark {id} has non-finite coordinates")));
            }
        }
        if !landmarks
            .values()
            .any(|p| p.x == 0.0 && p.y == 0.0 && p.z == 0.0)
        {
            return Err(rule(
                "no landmark at the origin (nose tip must be at (0,0,0))".into(),
            ));
        }
        let dist = |pair: (LandmarkId, LandmarkId)| -> Result<f64, FaceModelError> {
            let a = landmarks
                .get(&pair.0)
                .ok_or(FaceModelError::MissingLandmark(pair.0))?;
            let b = landmarks
                .get(&pair.1)
                .ok_or(FaceModelError::MissingLandmark(pair.1))?;
            Ok(a.distance_to(b))
        };
        let w = dist(width_pair)?;
        if (w - width_mm).abs() > 1e-6 {
            return Err(rule(format!(
                "width_pair distance {w} mm does not match declared width {width_mm} mm"
            )));
        }
        let l = dist(length_pair)?;
        if (l - length_mm).abs() > 1e-6 {
            return Err(rule(format!(
                "length_pair distance {l} mm does not match declared length {length_mm} mm"
            )));
        }
        Ok(Self {
            landmarks,
            width_mm,
            length_mm,
            width_pair,
            length_pair,
        })
    }

    pub fn landmarks(&self) -> &LandmarkMap {
        &self.landmarks
    }

    pub fn landmark(&self, id: LandmarkId) -> Option<Point3> {
        self.landmarks.get(&id).copied()
    }

    pub fn width_mm(&self) -> f64 {
        self.width_mm
    }

    pub fn length_mm(&self) -> f64 {
        self.length_mm
    }

    pub fn width_pair(&self) -> (LandmarkId, LandmarkId) {
        self.width_pair
    }

    pub fn length_pair(&self) -> (LandmarkId, LandmarkId) {
        self.length_pair
    }
}

/// Landmark ids of the synthetic canonical model built by
/// [`synthetic_canonical`].
pub mod landmarks {
    use super::LandmarkId;

    pub const NOSE_TIP: LandmarkId = LandmarkId(0);
    pub const NOSE_BRIDGE: LandmarkId = LandmarkId(1);
    pub const FOREHEAD_CENTER: LandmarkId = LandmarkId(2);
    pub const FOREHEAD_TOP: LandmarkId = LandmarkId(3);
    pub const CHIN: LandmarkId = LandmarkId(4);
    pub const LEFT_CONTOUR: LandmarkId = LandmarkId(5);
    pub const RIGHT_CONTOUR: LandmarkId = LandmarkId(6);
    pub const LEFT_EYE_OUTER: LandmarkId = LandmarkId(7);
    pub const LEFT_EYE_INNER: LandmarkId = LandmarkId(8);
    pub const RIGHT_EYE_INNER: LandmarkId = LandmarkId(9);
    pub const RIGHT_EYE_OUTER: LandmarkId = LandmarkId(10);
    pub const LEFT_BROW: LandmarkId = LandmarkId(11);
    pub const RIGHT_BROW: LandmarkId = LandmarkId(12);
    pub const LEFT_CHEEK: LandmarkId = LandmarkId(13);
    pub const RIGHT_CHEEK: LandmarkId = LandmarkId(14);
    pub const MOUTH_LEFT: LandmarkId = LandmarkId(15);
    pub const MOUTH_RIGHT: LandmarkId = LandmarkId(16);
    pub const UPPER_LIP: LandmarkId = LandmarkId(17);
    pub const LOWER_LIP: LandmarkId = LandmarkId(18);
    pub const NOSE_LEFT: LandmarkId = LandmarkId(19);
    pub const NOSE_RIGHT: LandmarkId = LandmarkId(20);
    pub const LEFT_JAW: LandmarkId = LandmarkId(21);
    pub const RIGHT_JAW: LandmarkId = LandmarkId(22);
    pub const UNDER_NOSE: LandmarkId = LandmarkId(23);
}

/// The synthetic 160 mm × 230 mm canonical landmark set shipped with the
/// toolkit. Width is measured between the face-contour extremes, length
/// between forehead top and chin; both pairs are axis-aligned so the model's
/// declared dimensions are exact. The point cloud is deliberately non-planar
/// (z spans 0 to −60 mm behind the nose tip).
pub fn synthetic_canonical() -> CanonicalModel {
    use self::landmarks::*;
    let pts: &[(LandmarkId, [f64; 3])] = &[
        (NOSE_TIP, [0.0, 0.0, 0.0]),
        (NOSE_BRIDGE, [0.0, 25.0, -12.0]),
        (FOREHEAD_CENTER, [0.0, 80.0, -28.0]),
        (FOREHEAD_TOP, [0.0, 115.0, -45.0]),
        (CHIN, [0.0, -115.0, -45.0]),
        (LEFT_CONTOUR, [-80.0, 0.0, -60.0]),
        (RIGHT_CONTOUR, [80.0, 0.0, -60.0]),
        (LEFT_EYE_OUTER, [-48.0, 35.0, -30.0]),
        (LEFT_EYE_INNER, [-18.0, 33.0, -25.0]),
        (RIGHT_EYE_INNER, [18.0, 33.0, -25.0]),
        (RIGHT_EYE_OUTER, [48.0, 35.0, -30.0]),
        (LEFT_BROW, [-40.0, 55.0, -28.0]),
        (RIGHT_BROW, [40.0, 55.0, -28.0]),
        (LEFT_CHEEK, [-45.0, -25.0, -35.0]),
        (RIGHT_CHEEK, [45.0, -25.0, -35.0]),
        (MOUTH_LEFT, [-28.0, -45.0, -20.0]),
        (MOUTH_RIGHT, [28.0, -45.0, -20.0]),
        (UPPER_LIP, [0.0, -40.0, -12.0]),
        (LOWER_LIP, [0.0, -55.0, -14.0]),
        (NOSE_LEFT, [-18.0, -8.0, -10.0]),
        (NOSE_RIGHT, [18.0, -8.0, -10.0]),
        (LEFT_JAW, [-62.0, -65.0, -55.0]),
        (RIGHT_JAW, [62.0, -65.0, -55.0]),
        (UNDER_NOSE, [0.0, -20.0, -6.0]),
    ];
    let landmarks: LandmarkMap = pts
        .iter()
        .map(|(id, [x, y, z])| (*id, Point3::new(*x, *y, *z)))
        .collect();
    CanonicalModel::new(
        landmarks,
        160.0,
        230.0,
        (LEFT_CONTOUR, RIGHT_CONTOUR),
        (FOREHEAD_TOP, CHIN),
    )
    .expect("synthetic canonical model satisfies its own invariants")
}

/// Face width and length in millimeters, measured between the model's
/// configured landmark pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceMeasurement {
    pub width_mm: f64,
    pub length_mm: f64,
}

/// Per-axis scale factors. `a_z` is always the mean of `a_x` and `a_y`;
/// construction goes through [`ScalingFactors::from_axes`] so the invariant
/// cannot be bypassed (hence no `Deserialize`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingFactors {
    a_x: f64,
    a_y: f64,
    a_z: f64,
}

impl ScalingFactors {
    pub fn identity() -> Self {
        Self {
            a_x: 1.0,
            a_y: 1.0,
            a_z: 1.0,
        }
    }

    pub fn from_axes(a_x: f64, a_y: f64) -> Result<Self, FaceModelError> {
        if !(a_x > 0.0 && a_y > 0.0 && a_x.is_finite() && a_y.is_finite()) {
            return Err(FaceModelError::NonPositiveScale { a_x, a_y });
        }
        Ok(Self {
            a_x,
            a_y,
            a_z: (a_x + a_y) / 2.0,
        })
    }

    pub fn a_x(&self) -> f64 {
        self.a_x
    }

    pub fn a_y(&self) -> f64 {
        self.a_y
    }

    pub fn a_z(&self) -> f64 {
        self.a_z
    }
}

/// Measures face width and length as the Euclidean distances between the
/// model's width and length landmark pairs within `points`.
pub fn measure_face(
    points: &LandmarkMap,
    model: &CanonicalModel,
) -> Result<FaceMeasurement, FaceModelError> {
    let fetch = |id: LandmarkId| points.get(&id).ok_or(FaceModelError::MissingLandmark(id));
    let (wa, wb) = model.width_pair();
    let (la, lb) = model.length_pair();
    let width_mm = fetch(wa)?.distance_to(fetch(wb)?);
    let length_mm = fetch(la)?.distance_to(fetch(lb)?);
    Ok(FaceMeasurement {
        width_mm,
        length_mm,
    })
}

/// Per-axis scale factors from a measured face: `a_x = w/w_o`, `a_y = l/l_o`,
/// `a_z = (a_x + a_y)/2`.
pub fn scaling_factors(
    meas: &FaceMeasurement,
    model: &CanonicalModel,
) -> Result<ScalingFactors, FaceModelError> {
    if !(meas.width_mm > 0.0 && meas.length_mm > 0.0)
        || !meas.width_mm.is_finite()
        || !meas.length_mm.is_finite()
    {
        return Err(FaceModelError::NonPositiveMeasurement {
            width: meas.width_mm,
            length: meas.length_mm,
        });
    }
    ScalingFactors::from_axes(
        meas.width_mm / model.width_mm(),
        meas.length_mm / model.length_mm(),
    )
}

/// Applies the per-axis factors to every model landmark:
/// `(x, y, z) → (a_x·x, a_y·y, a_z·z)`. The nose tip stays at the origin.
pub fn scale_landmarks(model: &CanonicalModel, s: &ScalingFactors) -> LandmarkMap {
    model
        .landmarks()
        .iter()
        .map(|(id, p)| (*id, Point3::new(p.x * s.a_x, p.y * s.a_y, p.z * s.a_z)))
        .collect()
}

/// The single factor used to scale the rendered model uniformly along all
/// three axes.
pub fn uniform_model_scale(s: &ScalingFactors) -> f64 {
    s.a_z()
}
