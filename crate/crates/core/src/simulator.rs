//! Synthetic ground-truth scenes and closed-loop calibration trials.
//!
//! A scene holds the true head pose seen by each camera, the true SLAM pose,
//! and the true face scale applied to the canonical model. Rendering projects
//! the scaled landmarks into both views with seeded Gaussian pixel/depth noise
//! and dropout; a trial runs the full calibration on the rendered observations
//! and reports world-frame overlay errors against ground truth.

pub mod rng;

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::camera::{CameraIntrinsics, Pixel, Point3};
use crate::face_model::{
    landmarks, scale_landmarks, synthetic_canonical, CanonicalModel, LandmarkId, ScalingFactors,
};
use crate::pipeline::{calibrate, CalibrationInput};
use crate::pnp::PnPConfig;
use crate::transforms::{
    geodesic_angle, model_to_head_convention, FrameId, RigidTransform, Rotation3, TaggedTransform,
};

use self::rng::{gaussian, range, stream_rng, uniform, Stream};

const MAX_POSE_ATTEMPTS: u32 = 1000;

#[derive(Debug, Error)]
pub enum SimulatorError {
    #[error("no sampled pose kept the head visible in both views after {attempts} attempts")]
    InfeasibleRange { attempts: u32 },
    #[error("invalid simulator ranges: {rule}")]
    InvalidRanges { rule: String },
    #[error("invalid noise config: {rule}")]
    InvalidNoise { rule: String },
}

/// Observation noise model: independent Gaussian per landmark and axis, plus
/// independent dropout. `seed` drives the pixel/depth/dropout streams.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub pixel_sigma: f64,
    pub depth_sigma: f64,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn noiseless(seed: u64) -> Self {
        Self {
            pixel_sigma: 0.0,
            depth_sigma: 0.0,
            dropout_rate: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimulatorError> {
        let rule = |msg: &str| SimulatorError::InvalidNoise {
            rule: msg.to_string(),
        };
        if !(self.pixel_sigma >= 0.0 && self.pixel_sigma.is_finite()) {
            return Err(rule("pixel_sigma must be finite and >= 0"));
        }
        if !(self.depth_sigma >= 0.0 && self.depth_sigma.is_finite()) {
            return Err(rule("depth_sigma must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(rule("dropout_rate must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Head-pose sampling ranges. Orientation perturbs a frontal pose (face
/// toward the camera); translation is lateral within `±lateral_mm` and depth
/// within `z_mm`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseRanges {
    pub yaw_abs_rad: f64,
    pub pitch_abs_rad: f64,
    pub roll_abs_rad: f64,
    pub z_mm: (f64, f64),
    pub lateral_mm: f64,
}

impl Default for PoseRanges {
    fn default() -> Self {
        Self {
            yaw_abs_rad: 40f64.to_radians(),
            pitch_abs_rad: 40f64.to_radians(),
            roll_abs_rad: 20f64.to_radians(),
            z_mm: (450.0, 900.0),
            lateral_mm: 80.0,
        }
    }
}

/// Face-scale sampling ranges. In isotropic mode a single factor is drawn
/// from `width` and applied to both axes (one draw); otherwise width and
/// length factors are drawn independently (two draws).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleRanges {
    pub width: (f64, f64),
    pub length: (f64, f64),
    pub isotropic: bool,
}

impl Default for ScaleRanges {
    fn default() -> Self {
        Self {
            width: (0.85, 1.15),
            length: (0.85, 1.15),
            isotropic: true,
        }
    }
}

/// Everything scene generation needs besides the seed.
#[derive(Debug, Clone)]
pub struct SceneConfig {
    pub model: CanonicalModel,
    pub headset_intrinsics: CameraIntrinsics,
    pub rgbd_intrinsics: CameraIntrinsics,
    pub pose: PoseRanges,
    pub scale: ScaleRanges,
    /// Landmark ids evaluated as the three key features (left eye corner,
    /// chin, right eye corner).
    pub feature_ids: [LandmarkId; 3],
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            model: synthetic_canonical(),
            headset_intrinsics: CameraIntrinsics::new(980.0, 980.0, 640.0, 480.0, 1280, 960)
                .expect("default headset intrinsics are valid"),
            rgbd_intrinsics: CameraIntrinsics::new(615.0, 615.0, 320.0, 240.0, 640, 480)
                .expect("default RGB-D intrinsics are valid"),
            pose: PoseRanges::default(),
            scale: ScaleRanges::default(),
            feature_ids: [
                landmarks::LEFT_EYE_OUTER,
                landmarks::CHIN,
                landmarks::RIGHT_EYE_OUTER,
            ],
        }
    }
}

/// A fully specified ground-truth scene.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub seed: u64,
    pub model: CanonicalModel,
    pub headset_intrinsics: CameraIntrinsics,
    pub rgbd_intrinsics: CameraIntrinsics,
    /// Head pose in the headset camera, `T_C←H`, tagged `H → C`.
    pub true_head_pose: TaggedTransform,
    /// Head pose in the RGB-D camera, tagged `H → C` (the two devices get
    /// distinct poses).
    pub true_rgbd_pose: TaggedTransform,
    /// SLAM camera-in-world pose `T_W←C`, tagged `C → W`.
    pub true_slam_pose: TaggedTransform,
    /// Scale applied to the canonical model to make the "real" head.
    pub true_face_scale: ScalingFactors,
    pub feature_ids: [LandmarkId; 3],
}

/// Per-trial outcome: overlay errors against ground truth, or the stage the
/// calibration failed in.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub scene_seed: u64,
    pub outcome: TrialOutcome,
}

#[derive(Debug, Clone)]
pub enum TrialOutcome {
    Completed(TrialReport),
    Failed {
        stage: &'static str,
        message: String,
    },
}

#[derive(Debug, Clone)]
pub struct TrialReport {
    /// World-frame distance between each rendered (uniformly scaled) model
    /// landmark and the corresponding real head landmark.
    pub overlay_mm: BTreeMap<LandmarkId, f64>,
    /// The trial's overlay error: mean over landmarks.
    pub mean_overlay_mm: f64,
    pub median_overlay_mm: f64,
    pub max_overlay_mm: f64,
    /// Recovered vs true head pose.
    pub rotation_error_rad: f64,
    pub translation_error_mm: f64,
    /// Headset image-space error at the three key features (px).
    pub feature_px: [f64; 3],
    /// World-frame overlay error at the three key features (mm).
    pub feature_overlay_mm: [f64; 3],
    /// Largest gap between the anisotropically scaled landmarks fed to PnP
    /// and the uniformly scaled rendered model (zero for isotropic scales).
    pub scale_anisotropy_gap_mm: f64,
}

fn validate_ranges(cfg: &SceneConfig) -> Result<(), SimulatorError> {
    let rule = |msg: String| SimulatorError::InvalidRanges { rule: msg };
    let (zlo, zhi) = cfg.pose.z_mm;
    if zlo.is_nan() || zhi.is_nan() || zlo > zhi {
        return Err(rule(format!("z range is empty: ({zlo}, {zhi})")));
    }
    if zlo < 300.0 || zhi > 1500.0 {
        return Err(rule(format!(
            "head depth must stay within [300, 1500] mm, got ({zlo}, {zhi})"
        )));
    }
    if cfg.pose.lateral_mm < 0.0 {
        return Err(rule("lateral_mm must be >= 0".to_string()));
    }
    for (name, (lo, hi)) in [("width", cfg.scale.width), ("length", cfg.scale.length)] {
        if !(lo > 0.0 && lo <= hi) {
            return Err(rule(format!(
                "{name} scale range must be positive and non-empty"
            )));
        }
    }
    for id in cfg.feature_ids {
        if cfg.model.landmark(id).is_none() {
            return Err(rule(format!("feature landmark {id} is not in the model")));
        }
    }
    Ok(())
}

/// Frontal base orientation: the face's outward axis points at the camera and
/// its up axis maps to image-up (camera y runs down).
fn frontal_base() -> Rotation3 {
    Rotation3::about_x(std::f64::consts::PI)
}

fn sample_head_pose(rng: &mut ChaCha8Rng, ranges: &PoseRanges) -> RigidTransform {
    let roll = range(rng, -ranges.roll_abs_rad, ranges.roll_abs_rad);
    let yaw = range(rng, -ranges.yaw_abs_rad, ranges.yaw_abs_rad);
    let pitch = range(rng, -ranges.pitch_abs_rad, ranges.pitch_abs_rad);
    let x = range(rng, -ranges.lateral_mm, ranges.lateral_mm);
    let y = range(rng, -ranges.lateral_mm, ranges.lateral_mm);
    let z = range(rng, ranges.z_mm.0, ranges.z_mm.1);
    let rotation = Rotation3::from_matrix(
        frontal_base().matrix()
            * Rotation3::about_z(roll).matrix()
            * Rotation3::about_y(yaw).matrix()
            * Rotation3::about_x(pitch).matrix(),
    )
    .expect("product of rotations is a rotation");
    RigidTransform::new(rotation, nalgebra::Vector3::new(x, y, z))
}

fn sample_slam_pose(rng: &mut ChaCha8Rng) -> RigidTransform {
    let axis = [
        uniform(rng) * 2.0 - 1.0,
        uniform(rng) * 2.0 - 1.0,
        uniform(rng) * 2.0 - 1.0,
    ];
    let angle = uniform(rng) * std::f64::consts::PI;
    let t = nalgebra::Vector3::new(
        range(rng, -2000.0, 2000.0),
        range(rng, -2000.0, 2000.0),
        range(rng, -2000.0, 2000.0),
    );
    RigidTransform::new(Rotation3::from_axis_angle(axis, angle), t)
}

fn sample_scale(rng: &mut ChaCha8Rng, ranges: &ScaleRanges) -> ScalingFactors {
    let a_x = range(rng, ranges.width.0, ranges.width.1);
    let a_y = if ranges.isotropic {
        a_x
    } else {
        range(rng, ranges.length.0, ranges.length.1)
    };
    ScalingFactors::from_axes(a_x, a_y).expect("validated ranges are positive")
}

fn fully_visible(
    points: &BTreeMap<LandmarkId, Point3>,
    pose: &TaggedTransform,
    intr: &CameraIntrinsics,
) -> bool {
    points.values().all(|p| {
        let cam = pose.apply_point(*p);
        match intr.project(cam) {
            Ok(px) => intr.contains(px),
            Err(_) => false,
        }
    })
}

/// Samples a scene deterministically from `seed`, rejecting poses until the
/// whole (scaled) head is visible in both views. Fails after 1000 attempts.
pub fn generate_scene(seed: u64, cfg: &SceneConfig) -> Result<SyntheticScene, SimulatorError> {
    validate_ranges(cfg)?;
    let mut rng = stream_rng(seed, Stream::Scene);
    for _ in 0..MAX_POSE_ATTEMPTS {
        let scale = sample_scale(&mut rng, &cfg.scale);
        let headset = sample_head_pose(&mut rng, &cfg.pose);
        let rgbd = sample_head_pose(&mut rng, &cfg.pose);
        let slam = sample_slam_pose(&mut rng);

        let real = scale_landmarks(&cfg.model, &scale);
        let headset_pose = TaggedTransform::from_rigid(FrameId::Head, FrameId::Camera, &headset);
        let rgbd_pose = TaggedTransform::from_rigid(FrameId::Head, FrameId::Camera, &rgbd);
        if fully_visible(&real, &headset_pose, &cfg.headset_intrinsics)
            && fully_visible(&real, &rgbd_pose, &cfg.rgbd_intrinsics)
        {
            return Ok(SyntheticScene {
                seed,
                model: cfg.model.clone(),
                headset_intrinsics: cfg.headset_intrinsics,
                rgbd_intrinsics: cfg.rgbd_intrinsics,
                true_head_pose: headset_pose,
                true_rgbd_pose: rgbd_pose,
                true_slam_pose: TaggedTransform::from_rigid(FrameId::Camera, FrameId::World, &slam),
                true_face_scale: scale,
                feature_ids: cfg.feature_ids,
            });
        }
    }
    Err(SimulatorError::InfeasibleRange {
        attempts: MAX_POSE_ATTEMPTS,
    })
}

/// Projects the true head into both views and applies the noise model.
///
/// Pixel noise adds `pixel_sigma`-scaled Gaussians per axis; depth noise adds
/// a `depth_sigma`-scaled Gaussian to each RGB-D depth; dropout removes
/// landmarks with probability `dropout_rate`, except the width/length pair
/// ids, which are always kept. Random draws are consumed for every landmark
/// regardless of sigma or dropout so streams stay aligned across configs.
pub fn render_observations(scene: &SyntheticScene, noise: &NoiseConfig) -> CalibrationInput {
    let real = scale_landmarks(&scene.model, &scene.true_face_scale);
    let mut pixel_rng = stream_rng(noise.seed, Stream::Pixel);
    let mut depth_rng = stream_rng(noise.seed, Stream::Depth);
    let mut dropout_rng = stream_rng(noise.seed, Stream::Dropout);

    let (wa, wb) = scene.model.width_pair();
    let (la, lb) = scene.model.length_pair();
    let protected = [wa, wb, la, lb];

    let mut rgbd_landmarks = BTreeMap::new();
    for (id, p) in &real {
        let cam = scene.true_rgbd_pose.apply_point(*p);
        let px = scene
            .rgbd_intrinsics
            .project(cam)
            .expect("generated scenes keep the head in front of both cameras");
        let du = gaussian(&mut pixel_rng) * noise.pixel_sigma;
        let dv = gaussian(&mut pixel_rng) * noise.pixel_sigma;
        let dd = gaussian(&mut depth_rng) * noise.depth_sigma;
        let drop = uniform(&mut dropout_rng) < noise.dropout_rate;
        if drop && !protected.contains(id) {
            continue;
        }
        rgbd_landmarks.insert(*id, (Pixel::new(px.u + du, px.v + dv), cam.z + dd));
    }

    let mut headset_landmarks = BTreeMap::new();
    for (id, p) in &real {
        let cam = scene.true_head_pose.apply_point(*p);
        let px = scene
            .headset_intrinsics
            .project(cam)
            .expect("generated scenes keep the head in front of both cameras");
        let du = gaussian(&mut pixel_rng) * noise.pixel_sigma;
        let dv = gaussian(&mut pixel_rng) * noise.pixel_sigma;
        let drop = uniform(&mut dropout_rng) < noise.dropout_rate;
        if drop && !protected.contains(id) {
            continue;
        }
        headset_landmarks.insert(*id, Pixel::new(px.u + du, px.v + dv));
    }

    CalibrationInput {
        rgbd_landmarks,
        rgbd_intrinsics: scene.rgbd_intrinsics,
        headset_landmarks,
        headset_intrinsics: scene.headset_intrinsics,
        slam_pose: scene.true_slam_pose.clone(),
        model: scene.model.clone(),
        pnp_config: PnPConfig::default(),
    }
}

/// Renders the scene, runs the calibration, and scores it against ground
/// truth. Calibration failures become a failed-trial record, not an error.
pub fn run_trial(
    scene: &SyntheticScene,
    noise: &NoiseConfig,
    pnp_config: &PnPConfig,
) -> TrialResult {
    let mut input = render_observations(scene, noise);
    input.pnp_config = *pnp_config;
    let result = match calibrate(&input) {
        Ok(result) => result,
        Err(err) => {
            return TrialResult {
                scene_seed: scene.seed,
                outcome: TrialOutcome::Failed {
                    stage: err.stage(),
                    message: err.to_string(),
                },
            }
        }
    };

    let real = scale_landmarks(&scene.model, &scene.true_face_scale);
    let world_from_head = scene
        .true_slam_pose
        .compose(&scene.true_head_pose)
        .expect("scene transforms carry matching tags");
    // The renderer places the uniformly scaled model asset; its geometry lives
    // in the virtual-model frame, one handedness flip away from head axes.
    let to_virtual = model_to_head_convention().inverse();
    let a_z = result.uniform_scale;

    let mut overlay_mm = BTreeMap::new();
    let mut gap: f64 = 0.0;
    for (id, p0) in scene.model.landmarks() {
        let rendered = Point3::new(p0.x * a_z, p0.y * a_z, p0.z * a_z);
        let overlay = result
            .world_pose
            .apply_point(to_virtual.apply_point(rendered));
        let truth = world_from_head.apply_point(real[id]);
        overlay_mm.insert(*id, truth.distance_to(&overlay));

        let fed = Point3::new(
            p0.x * result.scaling.a_x(),
            p0.y * result.scaling.a_y(),
            p0.z * result.scaling.a_z(),
        );
        gap = gap.max(fed.distance_to(&rendered));
    }

    let mut sorted: Vec<f64> = overlay_mm.values().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let mean_overlay_mm = sorted.iter().sum::<f64>() / sorted.len() as f64;
    let median_overlay_mm = sorted[sorted.len() / 2];
    let max_overlay_mm = *sorted.last().expect("models have landmarks");

    let rotation_error_rad = geodesic_angle(
        &result.head_pose.pose.rotation_block(),
        &scene.true_head_pose.rotation_block(),
    );
    let translation_error_mm =
        (result.head_pose.pose.translation() - scene.true_head_pose.translation()).norm();

    let camera_from_world = scene.true_slam_pose.inverse();
    let mut feature_px = [0.0; 3];
    let mut feature_overlay_mm = [0.0; 3];
    for (k, id) in scene.feature_ids.iter().enumerate() {
        feature_overlay_mm[k] = overlay_mm[id];
        let truth_cam = scene.true_head_pose.apply_point(real[id]);
        let p0 = scene
            .model
            .landmark(*id)
            .expect("feature ids validated against the model");
        let rendered = Point3::new(p0.x * a_z, p0.y * a_z, p0.z * a_z);
        let overlay_world = result
            .world_pose
            .apply_point(to_virtual.apply_point(rendered));
        let overlay_cam = camera_from_world.apply_point(overlay_world);
        feature_px[k] = match (
            scene.headset_intrinsics.project(truth_cam),
            scene.headset_intrinsics.project(overlay_cam),
        ) {
            (Ok(a), Ok(b)) => a.distance_to(&b),
            // A recovered pose bad enough to put the feature behind the
            // camera has unbounded image error.
            _ => f64::INFINITY,
        };
    }

    TrialResult {
        scene_seed: scene.seed,
        outcome: TrialOutcome::Completed(TrialReport {
            overlay_mm,
            mean_overlay_mm,
            median_overlay_mm,
            max_overlay_mm,
            rotation_error_rad,
            translation_error_mm,
            feature_px,
            feature_overlay_mm,
            scale_anisotropy_gap_mm: gap,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Point3;
    use crate::face_model::{CanonicalModel, LandmarkMap};

    fn assert_scene_eq(a: &SyntheticScene, b: &SyntheticScene) {
        assert_eq!(a.true_head_pose.matrix(), b.true_head_pose.matrix());
        assert_eq!(a.true_rgbd_pose.matrix(), b.true_rgbd_pose.matrix());
        assert_eq!(a.true_slam_pose.matrix(), b.true_slam_pose.matrix());
        assert_eq!(a.true_face_scale, b.true_face_scale);
    }

    #[test]
    fn scene_generation_is_deterministic() {
        let cfg = SceneConfig::default();
        let a = generate_scene(42, &cfg).unwrap();
        let b = generate_scene(42, &cfg).unwrap();
        assert_scene_eq(&a, &b);
    }

    #[test]
    fn unit_scale_range_reproduces_canonical_model() {
        let cfg = SceneConfig {
            scale: ScaleRanges {
                width: (1.0, 1.0),
                length: (1.0, 1.0),
                isotropic: true,
            },
            ..SceneConfig::default()
        };
        let scene = generate_scene(9, &cfg).unwrap();
        assert_eq!(
            (
                scene.true_face_scale.a_x(),
                scene.true_face_scale.a_y(),
                scene.true_face_scale.a_z()
            ),
            (1.0, 1.0, 1.0)
        );
        let real = scale_landmarks(&scene.model, &scene.true_face_scale);
        assert_eq!(&real, scene.model.landmarks());
    }

    #[test]
    fn fixed_frontal_pose_projects_in_bounds() {
        let cfg = SceneConfig {
            pose: PoseRanges {
                yaw_abs_rad: 0.0,
                pitch_abs_rad: 0.0,
                roll_abs_rad: 0.0,
                z_mm: (600.0, 600.0),
                lateral_mm: 0.0,
            },
            ..SceneConfig::default()
        };
        let scene = generate_scene(1, &cfg).unwrap();
        let input = render_observations(&scene, &NoiseConfig::noiseless(1));
        for (px, _) in input.rgbd_landmarks.values() {
            assert!(
                scene.rgbd_intrinsics.contains(*px),
                "rgbd pixel out of bounds: {px:?}"
            );
        }
        for px in input.headset_landmarks.values() {
            assert!(scene.headset_intrinsics.contains(*px));
        }
        assert_eq!(input.rgbd_landmarks.len(), scene.model.landmarks().len());
    }

    #[test]
    fn zero_noise_observations_match_truth_exactly() {
        let scene = generate_scene(17, &SceneConfig::default()).unwrap();
        let input = render_observations(&scene, &NoiseConfig::noiseless(17));
        let real = scale_landmarks(&scene.model, &scene.true_face_scale);
        for (id, (px, depth)) in &input.rgbd_landmarks {
            let cam = scene.true_rgbd_pose.apply_point(real[id]);
            let truth = scene.rgbd_intrinsics.project(cam).unwrap();
            assert_eq!((px.u, px.v), (truth.u, truth.v));
            assert_eq!(*depth, cam.z);
        }
    }

    /// Dense synthetic model with 468 landmarks for statistical checks.
    fn dense_model() -> CanonicalModel {
        let mut pts = LandmarkMap::new();
        pts.insert(LandmarkId(0), Point3::new(0.0, 0.0, 0.0));
        pts.insert(LandmarkId(1), Point3::new(-80.0, 0.0, -30.0));
        pts.insert(LandmarkId(2), Point3::new(80.0, 0.0, -30.0));
        pts.insert(LandmarkId(3), Point3::new(0.0, 115.0, -30.0));
        pts.insert(LandmarkId(4), Point3::new(0.0, -115.0, -30.0));
        let mut id = 5u32;
        'grid: for i in 0..26 {
            for j in 0..19 {
                if id >= 468 {
                    break 'grid;
                }
                let x = -75.0 + 150.0 * (i as f64 / 25.0);
                let y = -110.0 + 220.0 * (j as f64 / 18.0);
                let z = -5.0 - 40.0 * ((x / 80.0).powi(2) + (y / 115.0).powi(2)) / 2.0;
                pts.insert(LandmarkId(id), Point3::new(x, y, z));
                id += 1;
            }
        }
        assert_eq!(pts.len(), 468);
        CanonicalModel::new(
            pts,
            160.0,
            230.0,
            (LandmarkId(1), LandmarkId(2)),
            (LandmarkId(3), LandmarkId(4)),
        )
        .unwrap()
    }

    #[test]
    fn pixel_noise_std_matches_sigma() {
        let cfg = SceneConfig {
            model: dense_model(),
            feature_ids: [LandmarkId(0), LandmarkId(3), LandmarkId(4)],
            pose: PoseRanges {
                yaw_abs_rad: 0.1,
                pitch_abs_rad: 0.1,
                roll_abs_rad: 0.1,
                z_mm: (700.0, 800.0),
                lateral_mm: 10.0,
            },
            ..SceneConfig::default()
        };
        let scene = generate_scene(5, &cfg).unwrap();
        let noisy = render_observations(
            &scene,
            &NoiseConfig {
                pixel_sigma: 1.0,
                depth_sigma: 0.0,
                dropout_rate: 0.0,
                seed: 5,
            },
        );
        let clean = render_observations(&scene, &NoiseConfig::noiseless(5));
        let mut du = Vec::new();
        let mut dv = Vec::new();
        for (id, (px, _)) in &noisy.rgbd_landmarks {
            let (truth, _) = clean.rgbd_landmarks[id];
            du.push(px.u - truth.u);
            dv.push(px.v - truth.v);
        }
        assert_eq!(du.len(), 468);
        for axis in [du, dv] {
            let mean = axis.iter().sum::<f64>() / axis.len() as f64;
            let var = axis.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / axis.len() as f64;
            let std = var.sqrt();
            assert!((0.9..=1.1).contains(&std), "std {std}");
        }
    }

    #[test]
    fn dropout_keeps_protected_ids_and_binomial_count() {
        let cfg = SceneConfig {
            model: dense_model(),
            feature_ids: [LandmarkId(0), LandmarkId(3), LandmarkId(4)],
            pose: PoseRanges {
                yaw_abs_rad: 0.05,
                pitch_abs_rad: 0.05,
                roll_abs_rad: 0.05,
                z_mm: (750.0, 850.0),
                lateral_mm: 5.0,
            },
            ..SceneConfig::default()
        };
        let scene = generate_scene(8, &cfg).unwrap();
        let input = render_observations(
            &scene,
            &NoiseConfig {
                pixel_sigma: 0.0,
                depth_sigma: 0.0,
                dropout_rate: 0.5,
                seed: 8,
            },
        );
        let (wa, wb) = scene.model.width_pair();
        let (la, lb) = scene.model.length_pair();
        for id in [wa, wb, la, lb] {
            assert!(
                input.rgbd_landmarks.contains_key(&id),
                "protected id {id} dropped"
            );
            assert!(input.headset_landmarks.contains_key(&id));
        }
        // 464 unprotected candidates at p = 0.5: 99% interval is 232 ± 27.8.
        let unprotected = input
            .rgbd_landmarks
            .keys()
            .filter(|id| ![wa, wb, la, lb].contains(id))
            .count();
        assert!(
            (204..=260).contains(&unprotected),
            "retained {unprotected} outside binomial 99% interval"
        );
    }

    #[test]
    fn zero_noise_trial_has_negligible_overlay_error() {
        let cfg = SceneConfig::default();
        for seed in 0..10u64 {
            let scene = generate_scene(seed, &cfg).unwrap();
            let trial = run_trial(&scene, &NoiseConfig::noiseless(seed), &PnPConfig::default());
            match trial.outcome {
                TrialOutcome::Completed(report) => {
                    assert!(
                        report.max_overlay_mm < 1e-6,
                        "seed {seed}: max overlay {} mm",
                        report.max_overlay_mm
                    );
                    assert!(report.rotation_error_rad < 1e-6);
                    assert!(report.translation_error_mm < 1e-6);
                }
                TrialOutcome::Failed { stage, message } => {
                    panic!("seed {seed} failed at {stage}: {message}")
                }
            }
        }
    }

    #[test]
    fn trials_are_deterministic() {
        let cfg = SceneConfig::default();
        let scene = generate_scene(33, &cfg).unwrap();
        let noise = NoiseConfig {
            pixel_sigma: 1.0,
            depth_sigma: 5.0,
            dropout_rate: 0.1,
            seed: 33,
        };
        let a = run_trial(&scene, &noise, &PnPConfig::default());
        let b = run_trial(&scene, &noise, &PnPConfig::default());
        match (a.outcome, b.outcome) {
            (TrialOutcome::Completed(ra), TrialOutcome::Completed(rb)) => {
                assert_eq!(ra.overlay_mm, rb.overlay_mm);
                assert_eq!(
                    ra.rotation_error_rad.to_bits(),
                    rb.rotation_error_rad.to_bits()
                );
                assert_eq!(ra.feature_px, rb.feature_px);
            }
            _ => panic!("trial outcomes differ or failed"),
        }
    }

    /// Median over seeds of the per-trial overlay error (mean over
    /// landmarks), under the given noise configs.
    fn seed_median(noises: &[NoiseConfig]) -> Vec<f64> {
        let cfg = SceneConfig::default();
        noises
            .iter()
            .map(|noise| {
                let mut trials = Vec::new();
                for seed in 0..30u64 {
                    let scene = generate_scene(seed, &cfg).unwrap();
                    let noise = NoiseConfig { seed, ..*noise };
                    if let TrialOutcome::Completed(report) =
                        run_trial(&scene, &noise, &PnPConfig::default()).outcome
                    {
                        trials.push(report.mean_overlay_mm);
                    }
                }
                trials.sort_by(f64::total_cmp);
                trials[trials.len() / 2]
            })
            .collect()
    }

    #[test]
    fn median_overlay_error_monotone_in_single_noise_parameters() {
        // Pixel noise increasing, others zero.
        let pixel: Vec<NoiseConfig> = [0.0, 1.0, 2.0]
            .iter()
            .map(|&s| NoiseConfig {
                pixel_sigma: s,
                depth_sigma: 0.0,
                dropout_rate: 0.0,
                seed: 0,
            })
            .collect();
        let medians = seed_median(&pixel);
        for pair in medians.windows(2) {
            assert!(
                pair[1] >= pair[0],
                "pixel medians not monotone: {medians:?}"
            );
        }

        // Depth noise increasing, others zero.
        let depth: Vec<NoiseConfig> = [0.0, 5.0, 10.0]
            .iter()
            .map(|&s| NoiseConfig {
                pixel_sigma: 0.0,
                depth_sigma: s,
                dropout_rate: 0.0,
                seed: 0,
            })
            .collect();
        let medians = seed_median(&depth);
        for pair in medians.windows(2) {
            assert!(
                pair[1] >= pair[0],
                "depth medians not monotone: {medians:?}"
            );
        }
    }

    #[test]
    fn anisotropic_scale_shows_uniform_rendering_gap() {
        let cfg = SceneConfig {
            scale: ScaleRanges {
                width: (1.15, 1.15),
                length: (0.85, 0.85),
                isotropic: false,
            },
            ..SceneConfig::default()
        };
        let scene = generate_scene(12, &cfg).unwrap();
        let trial = run_trial(&scene, &NoiseConfig::noiseless(12), &PnPConfig::default());
        let report = match trial.outcome {
            TrialOutcome::Completed(r) => r,
            TrialOutcome::Failed { stage, message } => panic!("failed at {stage}: {message}"),
        };
        // The nose tip is the shared origin: uniform and anisotropic scaling
        // agree there; x/y-extremal landmarks carry the mismatch.
        assert!(report.overlay_mm[&landmarks::NOSE_TIP] < 1e-6);
        assert!(report.overlay_mm[&landmarks::FOREHEAD_TOP] > 5.0);
        assert!(report.overlay_mm[&landmarks::RIGHT_CONTOUR] > 5.0);
        assert!(report.scale_anisotropy_gap_mm > 5.0);
    }

    #[test]
    fn infeasible_ranges_error_after_attempts() {
        // Head too close for its own width: never fully visible.
        let cfg = SceneConfig {
            pose: PoseRanges {
                z_mm: (300.0, 305.0),
                lateral_mm: 0.0,
                ..PoseRanges::default()
            },
            scale: ScaleRanges {
                width: (2.5, 2.5),
                length: (2.5, 2.5),
                isotropic: true,
            },
            ..SceneConfig::default()
        };
        assert!(matches!(
            generate_scene(1, &cfg),
            Err(SimulatorError::InfeasibleRange { attempts: 1000 })
        ));
    }

    #[test]
    fn range_validation_rejects_bad_configs() {
        let cfg = SceneConfig {
            pose: PoseRanges {
                z_mm: (100.0, 900.0),
                ..PoseRanges::default()
            },
            ..SceneConfig::default()
        };
        assert!(matches!(
            generate_scene(1, &cfg),
            Err(SimulatorError::InvalidRanges { .. })
        ));

        let cfg = SceneConfig {
            scale: ScaleRanges {
                width: (0.0, 1.0),
                ..ScaleRanges::default()
            },
            ..SceneConfig::default()
        };
        assert!(matches!(
            generate_scene(1, &cfg),
            Err(SimulatorError::InvalidRanges { .. })
        ));

        let noise = NoiseConfig {
            pixel_sigma: -1.0,
            depth_sigma: 0.0,
            dropout_rate: 0.0,
            seed: 0,
        };
        assert!(noise.validate().is_err());
    }
}
