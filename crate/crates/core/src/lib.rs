//! headcal-core — virtual-to-real head calibration toolkit.
//!
//! Aligns a virtual anatomical head model with a real head observed by an
//! RGB-D camera and a headset camera. The pipeline stages are:
//!
//! 1. **Backprojection** — lift detected 2D facial landmarks to 3D camera-frame
//!    points using per-pixel depth and the pinhole intrinsics ([`camera`]).
//! 2. **Model scaling** — measure face width/length from the reconstructed
//!    points and derive per-axis scale factors against the canonical model
//!    ([`face_model`]).
//! 3. **Head pose** — solve Perspective-n-Point from scaled model landmarks and
//!    their headset-image observations ([`pnp`]).
//! 4. **World placement** — chain the head pose, the headset SLAM pose, and the
//!    virtual-model handedness convention into the model's world pose
//!    ([`transforms`], [`pipeline`]).
//!
//! A seeded synthetic-scene [`simulator`] provides ground-truth closed-loop
//! trials, and [`evaluation`] computes the overlay-error statistics (pixel and
//! millimeter, per participant and pooled). [`io`] defines the JSON/CSV file
//! schemas and loaders used by the CLI.
//!
//! # Example
//!
//! Calibrate against a simulated scene and place a landmark in the world:
//!
//! ```
//! use headcal_core::pipeline::calibrate;
//! use headcal_core::simulator::{generate_scene, render_observations, NoiseConfig, SceneConfig};
//! use headcal_core::transforms::model_to_head_convention;
//!
//! let scene = generate_scene(7, &SceneConfig::default())?;
//! let observations = render_observations(&scene, &NoiseConfig::noiseless(7));
//! let result = calibrate(&observations)?;
//!
//! // Rendered overlay position of the nose tip: uniform scale, virtual-model
//! // frame, then the recovered world pose.
//! let nose = scene.model.landmark(headcal_core::face_model::landmarks::NOSE_TIP).unwrap();
//! let s = result.uniform_scale;
//! let scaled = headcal_core::camera::Point3::new(nose.x * s, nose.y * s, nose.z * s);
//! let in_model_frame = model_to_head_convention().inverse().apply_point(scaled);
//! let world = result.world_pose.apply_point(in_model_frame);
//! assert!(world.x.is_finite());
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod camera;
pub mod evaluation;
pub mod face_model;
pub mod io;
pub mod pipeline;
pub mod pnp;
pub mod simulator;
pub mod transforms;

pub use camera::{CameraIntrinsics, DepthImage, Pixel, Point3};
pub use face_model::{CanonicalModel, FaceMeasurement, LandmarkId, ScalingFactors};
pub use pipeline::{CalibrationInput, CalibrationResult};
pub use pnp::{Correspondence, PnPConfig, PnPSolution};
pub use transforms::{FrameId, RigidTransform, Rotation3, TaggedTransform};
