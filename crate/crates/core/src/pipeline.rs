//! End-to-end calibration: RGB-D landmarks → face measurement → model scaling
//! → headset PnP → world pose of the virtual model.
//!
//! The stages run in a fixed order and every failure carries the stage name so
//! callers can report where calibration broke.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::camera::{CameraError, CameraIntrinsics, Pixel};
use crate::face_model::{
    measure_face, scale_landmarks, scaling_factors, uniform_model_scale, CanonicalModel,
    FaceMeasurement, FaceModelError, LandmarkId, LandmarkMap, ScalingFactors,
};
use crate::pnp::{solve_pnp, Correspondence, PnPConfig, PnPSolution, PnpError};
use crate::transforms::{solve_world_pose, TaggedTransform, TransformError};

#[derive(Debug, Error)]
pub enum CalibrateError {
    #[error("stage `backproject`: landmark {id}: {source}")]
    Backproject { id: LandmarkId, source: CameraError },
    #[error("stage `measure_face`: {0}")]
    MeasureFace(FaceModelError),
    #[error("stage `scaling_factors`: {0}")]
    ScalingFactors(FaceModelError),
    #[error("stage `solve_pnp`: {0}")]
    SolvePnp(PnpError),
    #[error("stage `solve_world_pose`: {0}")]
    SolveWorldPose(TransformError),
}

impl CalibrateError {
    pub fn stage(&self) -> &'static str {
        match self {
            CalibrateError::Backproject { .. } => "backproject",
            CalibrateError::MeasureFace(_) => "measure_face",
            CalibrateError::ScalingFactors(_) => "scaling_factors",
            CalibrateError::SolvePnp(_) => "solve_pnp",
            CalibrateError::SolveWorldPose(_) => "solve_world_pose",
        }
    }
}

/// Everything one calibration needs: both camera views, the SLAM pose, the
/// canonical model, and the solver configuration.
#[derive(Debug, Clone)]
pub struct CalibrationInput {
    /// Detected landmarks in the RGB-D view with their per-landmark depth
    /// (mm). Must contain the model's width and length pairs.
    pub rgbd_landmarks: BTreeMap<LandmarkId, (Pixel, f64)>,
    pub rgbd_intrinsics: CameraIntrinsics,
    /// Detected landmarks in the headset view.
    pub headset_landmarks: BTreeMap<LandmarkId, Pixel>,
    pub headset_intrinsics: CameraIntrinsics,
    /// The headset's camera-in-world pose `T_W←C`, tagged `C → W`.
    pub slam_pose: TaggedTransform,
    pub model: CanonicalModel,
    pub pnp_config: PnPConfig,
}

/// Calibration output with all intermediates.
#[derive(Debug, Clone)]
pub struct CalibrationResult {
    /// The virtual model's world pose `T_W←V`, tagged `V → W`.
    pub world_pose: TaggedTransform,
    /// The single factor applied to the rendered model (equals `scaling.a_z`).
    pub uniform_scale: f64,
    pub head_pose: PnPSolution,
    pub scaling: ScalingFactors,
    pub measurement: FaceMeasurement,
    /// Scaled model landmarks fed to PnP (head-frame coordinates).
    pub scaled_landmarks: LandmarkMap,
}

/// Runs the calibration stages in order:
/// backproject → measure_face → scaling_factors → scale_landmarks →
/// correspondences (the scaled model point stands in for the real head point)
/// → solve_pnp → solve_world_pose.
pub fn calibrate(input: &CalibrationInput) -> Result<CalibrationResult, CalibrateError> {
    let mut reconstructed: LandmarkMap = LandmarkMap::new();
    for (id, (px, depth_mm)) in &input.rgbd_landmarks {
        let point = input
            .rgbd_intrinsics
            .lift(*px, *depth_mm)
            .map_err(|source| CalibrateError::Backproject { id: *id, source })?;
        reconstructed.insert(*id, point);
    }

    let measurement =
        measure_face(&reconstructed, &input.model).map_err(CalibrateError::MeasureFace)?;
    let scaling =
        scaling_factors(&measurement, &input.model).map_err(CalibrateError::ScalingFactors)?;
    let scaled_landmarks = scale_landmarks(&input.model, &scaling);

    let correspondences: Vec<Correspondence> = scaled_landmarks
        .iter()
        .filter_map(|(id, object)| {
            input.headset_landmarks.get(id).map(|image| Correspondence {
                id: *id,
                object: *object,
                image: *image,
            })
        })
        .collect();

    let head_pose = solve_pnp(
        &correspondences,
        &input.headset_intrinsics,
        &input.pnp_config,
    )
    .map_err(CalibrateError::SolvePnp)?;
    let world_pose = solve_world_pose(&head_pose.pose, &input.slam_pose)
        .map_err(CalibrateError::SolveWorldPose)?;

    Ok(CalibrationResult {
        world_pose,
        uniform_scale: uniform_model_scale(&scaling),
        head_pose,
        scaling,
        measurement,
        scaled_landmarks,
    })
}
