//! File schemas, validated loaders, and output writers.
//!
//! All structured inputs are JSON; bulk samples and trial records are CSV.
//! Every schema violation is reported with the file, the offending field, and
//! the violated rule — nothing is silently coerced.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::Point3;
use crate::camera::{CameraIntrinsics, Pixel};
use crate::evaluation::{ErrorSample, FeatureId, HeadSize};
use crate::face_model::{CanonicalModel, LandmarkId, LandmarkMap};
use crate::pipeline::{CalibrationInput, CalibrationResult};
use crate::pnp::PnPConfig;
use crate::simulator::{NoiseConfig, TrialOutcome, TrialResult};
use crate::transforms::{FrameId, TaggedTransform};

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: parse error: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: field `{field}`: {rule}")]
    Invariant {
        path: PathBuf,
        field: String,
        rule: String,
    },
    #[error("referenced file does not exist: {path}")]
    MissingFile { path: PathBuf },
}

impl SchemaError {
    fn invariant(path: &Path, field: impl Into<String>, rule: impl Into<String>) -> Self {
        SchemaError::Invariant {
            path: path.to_path_buf(),
            field: field.into(),
            rule: rule.into(),
        }
    }
}

fn read_to_string(path: &Path) -> Result<String, SchemaError> {
    std::fs::read_to_string(path).map_err(|source| SchemaError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, SchemaError> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| SchemaError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_string(path: &Path, contents: &str) -> Result<(), SchemaError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| SchemaError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, contents).map_err(|source| SchemaError::Io {
        path: path.to_path_buf(),
        source,
    })
}

// ---------------------------------------------------------------------------
// Intrinsics file
// ---------------------------------------------------------------------------

/// `{fx, fy, cx, cy, width, height}` in pixels.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntrinsicsFile {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl From<&CameraIntrinsics> for IntrinsicsFile {
    fn from(i: &CameraIntrinsics) -> Self {
        Self {
            fx: i.fx,
            fy: i.fy,
            cx: i.cx,
            cy: i.cy,
            width: i.width,
            height: i.height,
        }
    }
}

pub fn load_intrinsics(path: &Path) -> Result<CameraIntrinsics, SchemaError> {
    let file: IntrinsicsFile = read_json(path)?;
    CameraIntrinsics::new(file.fx, file.fy, file.cx, file.cy, file.width, file.height)
        .map_err(|e| SchemaError::invariant(path, "fx/fy/cx/cy", e.to_string()))
}

// ---------------------------------------------------------------------------
// Pose file
// ---------------------------------------------------------------------------

/// `{from, to, rotation: [9 row-major], translation_mm: [3]}` with frames
/// named "C", "H", "V", "W".
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseFile {
    pub from: String,
    pub to: String,
    pub rotation: [f64; 9],
    pub translation_mm: [f64; 3],
}

impl From<&TaggedTransform> for PoseFile {
    fn from(t: &TaggedTransform) -> Self {
        let r = t.rotation_block();
        let tr = t.translation();
        Self {
            from: t.from_frame().letter().to_string(),
            to: t.to_frame().letter().to_string(),
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation_mm: [tr.x, tr.y, tr.z],
        }
    }
}

pub fn pose_from_file(file: &PoseFile, path: &Path) -> Result<TaggedTransform, SchemaError> {
    let from: FrameId = file
        .from
        .parse()
        .map_err(|e: String| SchemaError::invariant(path, "from", e))?;
    let to: FrameId = file
        .to
        .parse()
        .map_err(|e: String| SchemaError::invariant(path, "to", e))?;
    let r = &file.rotation;
    let rotation = Matrix3::new(r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8]);
    let t = Vector3::new(
        file.translation_mm[0],
        file.translation_mm[1],
        file.translation_mm[2],
    );
    TaggedTransform::from_rotation_translation(from, to, rotation, t)
        .map_err(|e| SchemaError::invariant(path, "rotation", e.to_string()))
}

pub fn load_pose(path: &Path) -> Result<TaggedTransform, SchemaError> {
    let file: PoseFile = read_json(path)?;
    pose_from_file(&file, path)
}

// ---------------------------------------------------------------------------
// Landmark file
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CameraKind {
    Rgbd,
    Headset,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarkEntry {
    pub id: u32,
    pub u: f64,
    pub v: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_mm: Option<f64>,
}

/// Detector output for one view: `{camera, image_size, landmarks}`. Depth is
/// required (and positive) exactly when `camera == "rgbd"`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarkFile {
    pub camera: CameraKind,
    pub image_size: [u32; 2],
    pub landmarks: Vec<LandmarkEntry>,
}

/// Validated landmark observations of one view.
#[derive(Debug, Clone)]
pub enum LandmarkObservations {
    Rgbd(BTreeMap<LandmarkId, (Pixel, f64)>),
    Headset(BTreeMap<LandmarkId, Pixel>),
}

pub fn load_landmarks(path: &Path) -> Result<LandmarkObservations, SchemaError> {
    let file: LandmarkFile = read_json(path)?;
    let [width, height] = file.image_size;
    if width == 0 || height == 0 {
        return Err(SchemaError::invariant(
            path,
            "image_size",
            "image size must be positive",
        ));
    }
    let mut rgbd = BTreeMap::new();
    let mut headset = BTreeMap::new();
    for entry in &file.landmarks {
        let field = format!("landmarks[id={}]", entry.id);
        if !(entry.u.is_finite() && entry.v.is_finite())
            || entry.u < 0.0
            || entry.v < 0.0
            || entry.u >= width as f64
            || entry.v >= height as f64
        {
            return Err(SchemaError::invariant(
                path,
                field,
                format!(
                    "pixel ({}, {}) outside image_size {}x{}",
                    entry.u, entry.v, width, height
                ),
            ));
        }
        let id = LandmarkId(entry.id);
        let px = Pixel::new(entry.u, entry.v);
        match (file.camera, entry.depth_mm) {
            (CameraKind::Rgbd, Some(d)) if d > 0.0 && d.is_finite() => {
                if rgbd.insert(id, (px, d)).is_some() {
                    return Err(SchemaError::invariant(path, field, "duplicate landmark id"));
                }
            }
            (CameraKind::Rgbd, Some(d)) => {
                return Err(SchemaError::invariant(
                    path,
                    field,
                    format!("depth_mm must be > 0 for rgbd landmarks, got {d}"),
                ));
            }
            (CameraKind::Rgbd, None) => {
                return Err(SchemaError::invariant(
                    path,
                    field,
                    "depth_mm is required for rgbd landmarks",
                ));
            }
            (CameraKind::Headset, None) => {
                if headset.insert(id, px).is_some() {
                    return Err(SchemaError::invariant(path, field, "duplicate landmark id"));
                }
            }
            (CameraKind::Headset, Some(_)) => {
                return Err(SchemaError::invariant(
                    path,
                    field,
                    "depth_mm is not allowed in headset landmark files",
                ));
            }
        }
    }
    Ok(match file.camera {
        CameraKind::Rgbd => LandmarkObservations::Rgbd(rgbd),
        CameraKind::Headset => LandmarkObservations::Headset(headset),
    })
}

// ---------------------------------------------------------------------------
// Canonical model file
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelLandmarkEntry {
    pub id: u32,
    pub x_mm: f64,
    pub y_mm: f64,
    pub z_mm: f64,
}

/// `{w_o_mm, l_o_mm, width_pair, length_pair, landmarks}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CanonicalModelFile {
    pub w_o_mm: f64,
    pub l_o_mm: f64,
    pub width_pair: [u32; 2],
    pub length_pair: [u32; 2],
    pub landmarks: Vec<ModelLandmarkEntry>,
}

impl From<&CanonicalModel> for CanonicalModelFile {
    fn from(model: &CanonicalModel) -> Self {
        Self {
            w_o_mm: model.width_mm(),
            l_o_mm: model.length_mm(),
            width_pair: [model.width_pair().0 .0, model.width_pair().1 .0],
            length_pair: [model.length_pair().0 .0, model.length_pair().1 .0],
            landmarks: model
                .landmarks()
                .iter()
                .map(|(id, p)| ModelLandmarkEntry {
                    id: id.0,
                    x_mm: p.x,
                    y_mm: p.y,
                    z_mm: p.z,
                })
                .collect(),
        }
    }
}

pub fn load_canonical_model(path: &Path) -> Result<CanonicalModel, SchemaError> {
    let file: CanonicalModelFile = read_json(path)?;
    let mut landmarks = LandmarkMap::new();
    for entry in &file.landmarks {
        let prev = landmarks.insert(
            LandmarkId(entry.id),
            Point3::new(entry.x_mm, entry.y_mm, entry.z_mm),
        );
        if prev.is_some() {
            return Err(SchemaError::invariant(
                path,
                format!("landmarks[id={}]", entry.id),
                "duplicate landmark id",
            ));
        }
    }
    CanonicalModel::new(
        landmarks,
        file.w_o_mm,
        file.l_o_mm,
        (
            LandmarkId(file.width_pair[0]),
            LandmarkId(file.width_pair[1]),
        ),
        (
            LandmarkId(file.length_pair[0]),
            LandmarkId(file.length_pair[1]),
        ),
    )
    .map_err(|e| SchemaError::invariant(path, "landmarks", e.to_string()))
}

// ---------------------------------------------------------------------------
// Head sizes and reference pixel statistics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSizeEntry {
    pub participant: String,
    pub width_px: f64,
    pub length_px: f64,
    pub width_mm: f64,
    pub length_mm: f64,
}

/// JSON list of per-participant head sizes.
pub fn load_head_sizes(path: &Path) -> Result<BTreeMap<String, HeadSize>, SchemaError> {
    let entries: Vec<HeadSizeEntry> = read_json(path)?;
    let mut sizes = BTreeMap::new();
    for entry in entries {
        let size = HeadSize {
            width_px: entry.width_px,
            length_px: entry.length_px,
            width_mm: entry.width_mm,
            length_mm: entry.length_mm,
        };
        size.validate().map_err(|rule| {
            SchemaError::invariant(path, format!("participant {}", entry.participant), rule)
        })?;
        if sizes.insert(entry.participant.clone(), size).is_some() {
            return Err(SchemaError::invariant(
                path,
                format!("participant {}", entry.participant),
                "duplicate participant",
            ));
        }
    }
    Ok(sizes)
}

/// One aggregated pixel-statistics row (feature is "F1".."F3" or "All").
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PxStatsEntry {
    pub participant: String,
    pub n_poses: usize,
    pub feature: String,
    pub mean_px: f64,
    pub std_px: f64,
}

pub fn load_px_stats(path: &Path) -> Result<Vec<PxStatsEntry>, SchemaError> {
    let entries: Vec<PxStatsEntry> = read_json(path)?;
    for entry in &entries {
        if !matches!(entry.feature.as_str(), "F1" | "F2" | "F3" | "All") {
            return Err(SchemaError::invariant(
                path,
                format!("participant {} feature", entry.participant),
                format!("unknown feature {:?}", entry.feature),
            ));
        }
        if entry.n_poses == 0 || entry.mean_px < 0.0 || entry.std_px < 0.0 {
            return Err(SchemaError::invariant(
                path,
                format!("participant {} {}", entry.participant, entry.feature),
                "n_poses must be >= 1 and statistics non-negative",
            ));
        }
    }
    Ok(entries)
}

// ---------------------------------------------------------------------------
// Samples CSV
// ---------------------------------------------------------------------------

/// `participant,pose,feature,annot_u,annot_v,det_u,det_v`.
pub fn load_samples_csv(path: &Path) -> Result<Vec<ErrorSample>, SchemaError> {
    let text = read_to_string(path)?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| SchemaError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .clone();
    let expected = [
        "participant",
        "pose",
        "feature",
        "annot_u",
        "annot_v",
        "det_u",
        "det_v",
    ];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(SchemaError::invariant(
            path,
            "header",
            format!("expected columns {expected:?}, got {headers:?}"),
        ));
    }
    let mut samples = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| SchemaError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let row = i + 2; // header is line 1
        let field = |k: usize| format!("line {row}, column `{}`", expected[k]);
        let parse_f64 = |k: usize| -> Result<f64, SchemaError> {
            record[k]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| SchemaError::invariant(path, field(k), "expected a finite number"))
        };
        let feature: FeatureId = record[2]
            .parse()
            .map_err(|e: String| SchemaError::invariant(path, field(2), e))?;
        samples.push(ErrorSample {
            participant: record[0].to_string(),
            pose: record[1]
                .parse()
                .map_err(|_| SchemaError::invariant(path, field(1), "expected an integer"))?,
            feature,
            annotated: Pixel::new(parse_f64(3)?, parse_f64(4)?),
            detected: Pixel::new(parse_f64(5)?, parse_f64(6)?),
        });
    }
    Ok(samples)
}

pub fn samples_to_csv(samples: &[ErrorSample]) -> String {
    let mut out = String::from("participant,pose,feature,annot_u,annot_v,det_u,det_v\n");
    for s in samples {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.participant,
            s.pose,
            s.feature,
            s.annotated.u,
            s.annotated.v,
            s.detected.u,
            s.detected.v
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

/// Paths to the calibration inputs plus optional PnP overrides. Relative
/// paths resolve against the manifest's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub rgbd_intrinsics: PathBuf,
    pub rgbd_landmarks: PathBuf,
    pub headset_intrinsics: PathBuf,
    pub headset_landmarks: PathBuf,
    pub slam_pose: PathBuf,
    pub canonical_model: PathBuf,
    #[serde(default)]
    pub pnp: PnpOverrides,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PnpOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damping_init: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_points: Option<usize>,
}

impl PnpOverrides {
    pub fn apply(&self, mut cfg: PnPConfig) -> PnPConfig {
        if let Some(v) = self.max_iterations {
            cfg.max_iterations = v;
        }
        if let Some(v) = self.convergence_tol {
            cfg.convergence_tol = v;
        }
        if let Some(v) = self.damping_init {
            cfg.damping_init = v;
        }
        if let Some(v) = self.min_points {
            cfg.min_points = v;
        }
        cfg
    }
}

/// A manifest with all paths resolved and checked to exist.
#[derive(Debug, Clone)]
pub struct ResolvedManifest {
    pub rgbd_intrinsics: PathBuf,
    pub rgbd_landmarks: PathBuf,
    pub headset_intrinsics: PathBuf,
    pub headset_landmarks: PathBuf,
    pub slam_pose: PathBuf,
    pub canonical_model: PathBuf,
    pub pnp_config: PnPConfig,
    pub output_dir: PathBuf,
}

pub fn load_manifest(path: &Path) -> Result<ResolvedManifest, SchemaError> {
    let manifest: RunManifest = read_json(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |p: &Path| -> Result<PathBuf, SchemaError> {
        let full = if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        };
        if !full.is_file() {
            return Err(SchemaError::MissingFile { path: full });
        }
        Ok(full)
    };
    Ok(ResolvedManifest {
        rgbd_intrinsics: resolve(&manifest.rgbd_intrinsics)?,
        rgbd_landmarks: resolve(&manifest.rgbd_landmarks)?,
        headset_intrinsics: resolve(&manifest.headset_intrinsics)?,
        headset_landmarks: resolve(&manifest.headset_landmarks)?,
        slam_pose: resolve(&manifest.slam_pose)?,
        canonical_model: resolve(&manifest.canonical_model)?,
        pnp_config: manifest.pnp.apply(PnPConfig::default()),
        output_dir: manifest
            .output_dir
            .map(|p| if p.is_absolute() { p } else { base.join(p) })
            .unwrap_or_else(|| base.to_path_buf()),
    })
}

/// Loads and cross-checks all files referenced by a resolved manifest.
pub fn load_calibration_input(
    manifest: &ResolvedManifest,
) -> Result<CalibrationInput, SchemaError> {
    let rgbd_intrinsics = load_intrinsics(&manifest.rgbd_intrinsics)?;
    let headset_intrinsics = load_intrinsics(&manifest.headset_intrinsics)?;
    let rgbd_landmarks = match load_landmarks(&manifest.rgbd_landmarks)? {
        LandmarkObservations::Rgbd(map) => map,
        LandmarkObservations::Headset(_) => {
            return Err(SchemaError::invariant(
                &manifest.rgbd_landmarks,
                "camera",
                "expected an rgbd landmark file",
            ));
        }
    };
    let headset_landmarks = match load_landmarks(&manifest.headset_landmarks)? {
        LandmarkObservations::Headset(map) => map,
        LandmarkObservations::Rgbd(_) => {
            return Err(SchemaError::invariant(
                &manifest.headset_landmarks,
                "camera",
                "expected a headset landmark file",
            ));
        }
    };
    let slam_pose = load_pose(&manifest.slam_pose)?;
    if slam_pose.from_frame() != FrameId::Camera || slam_pose.to_frame() != FrameId::World {
        return Err(SchemaError::invariant(
            &manifest.slam_pose,
            "from/to",
            format!(
                "SLAM pose must be tagged C -> W, got {} -> {}",
                slam_pose.from_frame(),
                slam_pose.to_frame()
            ),
        ));
    }
    let model = load_canonical_model(&manifest.canonical_model)?;
    Ok(CalibrationInput {
        rgbd_landmarks,
        rgbd_intrinsics,
        headset_landmarks,
        headset_intrinsics,
        slam_pose,
        model,
        pnp_config: manifest.pnp_config,
    })
}

// ---------------------------------------------------------------------------
// Calibration result output
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct HeadPoseJson {
    pub pose: PoseFile,
    pub reprojection_rms_px: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationResultFile {
    pub world_pose: PoseFile,
    pub uniform_scale: f64,
    pub scaling: crate::face_model::ScalingFactors,
    pub measurement: crate::face_model::FaceMeasurement,
    pub head_pose: HeadPoseJson,
}

impl From<&CalibrationResult> for CalibrationResultFile {
    fn from(result: &CalibrationResult) -> Self {
        Self {
            world_pose: PoseFile::from(&result.world_pose),
            uniform_scale: result.uniform_scale,
            scaling: result.scaling,
            measurement: result.measurement,
            head_pose: HeadPoseJson {
                pose: PoseFile::from(&result.head_pose.pose),
                reprojection_rms_px: result.head_pose.reprojection_rms,
                iterations: result.head_pose.iterations,
                converged: result.head_pose.converged,
            },
        }
    }
}

pub fn write_calibration_result(
    path: &Path,
    result: &CalibrationResult,
) -> Result<(), SchemaError> {
    let file = CalibrationResultFile::from(result);
    let json = serde_json::to_string_pretty(&file).expect("result serializes") + "\n";
    write_string(path, &json)
}

// ---------------------------------------------------------------------------
// Scene export (one calibration input as a set of files + manifest)
// ---------------------------------------------------------------------------

fn pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("schema value serializes") + "\n"
}

/// Writes a calibration input as the full set of schema files plus a manifest
/// referencing them; returns the manifest path.
pub fn export_scene_files(dir: &Path, input: &CalibrationInput) -> Result<PathBuf, SchemaError> {
    let rgbd_landmarks = LandmarkFile {
        camera: CameraKind::Rgbd,
        image_size: [input.rgbd_intrinsics.width, input.rgbd_intrinsics.height],
        landmarks: input
            .rgbd_landmarks
            .iter()
            .map(|(id, (px, d))| LandmarkEntry {
                id: id.0,
                u: px.u,
                v: px.v,
                depth_mm: Some(*d),
            })
            .collect(),
    };
    let headset_landmarks = LandmarkFile {
        camera: CameraKind::Headset,
        image_size: [
            input.headset_intrinsics.width,
            input.headset_intrinsics.height,
        ],
        landmarks: input
            .headset_landmarks
            .iter()
            .map(|(id, px)| LandmarkEntry {
                id: id.0,
                u: px.u,
                v: px.v,
                depth_mm: None,
            })
            .collect(),
    };

    write_string(
        &dir.join("rgbd_intrinsics.json"),
        &pretty(&IntrinsicsFile::from(&input.rgbd_intrinsics)),
    )?;
    write_string(
        &dir.join("headset_intrinsics.json"),
        &pretty(&IntrinsicsFile::from(&input.headset_intrinsics)),
    )?;
    write_string(&dir.join("rgbd_landmarks.json"), &pretty(&rgbd_landmarks))?;
    write_string(
        &dir.join("headset_landmarks.json"),
        &pretty(&headset_landmarks),
    )?;
    write_string(
        &dir.join("slam_pose.json"),
        &pretty(&PoseFile::from(&input.slam_pose)),
    )?;
    write_string(
        &dir.join("canonical_model.json"),
        &pretty(&CanonicalModelFile::from(&input.model)),
    )?;

    let manifest = RunManifest {
        rgbd_intrinsics: "rgbd_intrinsics.json".into(),
        rgbd_landmarks: "rgbd_landmarks.json".into(),
        headset_intrinsics: "headset_intrinsics.json".into(),
        headset_landmarks: "headset_landmarks.json".into(),
        slam_pose: "slam_pose.json".into(),
        canonical_model: "canonical_model.json".into(),
        pnp: PnpOverrides::default(),
        output_dir: None,
    };
    let manifest_path = dir.join("manifest.json");
    write_string(&manifest_path, &pretty(&manifest))?;
    Ok(manifest_path)
}

// ---------------------------------------------------------------------------
// Simulation outputs
// ---------------------------------------------------------------------------

/// One row per trial per landmark; failed trials contribute a single row with
/// the failing stage and empty landmark columns.
pub fn trials_to_csv(trials: &[TrialResult]) -> String {
    let mut out = String::from("trial,seed,status,stage,landmark,overlay_mm\n");
    for (index, trial) in trials.iter().enumerate() {
        match &trial.outcome {
            TrialOutcome::Completed(report) => {
                for (id, err) in &report.overlay_mm {
                    out.push_str(&format!(
                        "{},{},ok,,{},{}\n",
                        index, trial.scene_seed, id.0, err
                    ));
                }
            }
            TrialOutcome::Failed { stage, .. } => {
                out.push_str(&format!(
                    "{},{},failed,{},,\n",
                    index, trial.scene_seed, stage
                ));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalarSummary {
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

fn summarize(values: &mut [f64]) -> ScalarSummary {
    if values.is_empty() {
        return ScalarSummary {
            mean: f64::NAN,
            median: f64::NAN,
            max: f64::NAN,
        };
    }
    values.sort_by(f64::total_cmp);
    ScalarSummary {
        mean: values.iter().sum::<f64>() / values.len() as f64,
        median: values[values.len() / 2],
        max: *values.last().expect("non-empty"),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FeatureSummary {
    pub feature: String,
    pub label: String,
    pub image_error_px: ScalarSummary,
    pub overlay_error_mm: ScalarSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationSummary {
    pub trials: usize,
    pub completed: usize,
    pub failed: usize,
    pub base_seed: u64,
    pub pixel_sigma: f64,
    pub depth_sigma: f64,
    pub dropout_rate: f64,
    /// Over all (trial, landmark) pairs.
    pub overlay_error_mm: ScalarSummary,
    /// Over the per-trial overlay errors (each trial's mean over landmarks).
    pub trial_overlay_mm: ScalarSummary,
    pub rotation_error_rad: ScalarSummary,
    pub translation_error_mm: ScalarSummary,
    pub features: Vec<FeatureSummary>,
}

pub fn summary_to_json(summary: &SimulationSummary) -> String {
    serde_json::to_string_pretty(summary).expect("summary serializes") + "\n"
}

pub fn summarize_trials(
    trials: &[TrialResult],
    noise: &NoiseConfig,
    base_seed: u64,
) -> SimulationSummary {
    let mut overlay = Vec::new();
    let mut trial_overlay = Vec::new();
    let mut rotation = Vec::new();
    let mut translation = Vec::new();
    let mut feature_px: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut feature_mm: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut completed = 0usize;
    for trial in trials {
        if let TrialOutcome::Completed(report) = &trial.outcome {
            completed += 1;
            overlay.extend(report.overlay_mm.values().copied());
            trial_overlay.push(report.mean_overlay_mm);
            rotation.push(report.rotation_error_rad);
            translation.push(report.translation_error_mm);
            for k in 0..3 {
                feature_px[k].push(report.feature_px[k]);
                feature_mm[k].push(report.feature_overlay_mm[k]);
            }
        }
    }
    let features = FeatureId::ALL
        .iter()
        .enumerate()
        .map(|(k, f)| FeatureSummary {
            feature: f.to_string(),
            label: f.label().to_string(),
            image_error_px: summarize(&mut feature_px[k]),
            overlay_error_mm: summarize(&mut feature_mm[k]),
        })
        .collect();
    SimulationSummary {
        trials: trials.len(),
        completed,
        failed: trials.len() - completed,
        base_seed,
        pixel_sigma: noise.pixel_sigma,
        depth_sigma: noise.depth_sigma,
        dropout_rate: noise.dropout_rate,
        overlay_error_mm: summarize(&mut overlay),
        trial_overlay_mm: summarize(&mut trial_overlay),
        rotation_error_rad: summarize(&mut rotation),
        translation_error_mm: summarize(&mut translation),
        features,
    }
}
