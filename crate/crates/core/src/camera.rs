//! Pinhole camera model: projection, depth-based backprojection, and
//! depth-image access. No distortion model — intrinsics are a pure pinhole K.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("cannot project a point with non-positive depth (z = {z} mm)")]
    NonPositiveDepth { z: f64 },
    #[error("pixel ({u}, {v}) is outside the {width}x{height} image")]
    OutOfBounds {
        u: f64,
        v: f64,
        width: u32,
        height: u32,
    },
    #[error("depth at pixel ({u}, {v}) is invalid (stored 0 mm)")]
    InvalidDepth { u: f64, v: f64 },
    #[error("invalid intrinsics: {rule}")]
    InvalidIntrinsics { rule: String },
    #[error("invalid depth image: {rule}")]
    InvalidDepthImage { rule: String },
}

/// Continuous image coordinates in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance_to(&self, other: &Pixel) -> f64 {
        ((self.u - other.u).powi(2) + (self.v - other.v).powi(2)).sqrt()
    }
}

/// A 3D point in millimeters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn distance_to(&self, other: &Point3) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2) + (self.z - other.z).powi(2))
            .sqrt()
    }
}

/// Pinhole parameters: focal lengths and principal point in pixels, plus the
/// image size the principal point must lie within.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, CameraError> {
        let rule = |msg: &str| CameraError::InvalidIntrinsics {
            rule: msg.to_string(),
        };
        if !(fx.is_finite() && fy.is_finite() && cx.is_finite() && cy.is_finite()) {
            return Err(rule("fx, fy, cx, cy must be finite"));
        }
        if fx <= 0.0 || fy <= 0.0 {
            return Err(rule("focal lengths must be positive"));
        }
        if cx <= 0.0 || cx >= width as f64 {
            return Err(rule("principal point cx must satisfy 0 < cx < width"));
        }
        if cy <= 0.0 || cy >= height as f64 {
            return Err(rule("principal point cy must satisfy 0 < cy < height"));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Projects a camera-frame point to pixel coordinates:
    /// `u = fx·x/z + cx`, `v = fy·y/z + cy`. Fails for z ≤ 0.
    pub fn project(&self, p: Point3) -> Result<Pixel, CameraError> {
        if p.z <= 0.0 {
            return Err(CameraError::NonPositiveDepth { z: p.z });
        }
        Ok(Pixel::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Lifts a pixel with an explicit depth to a camera-frame point:
    /// `depth · K⁻¹ · [u, v, 1]ᵀ`. The z component equals `depth_mm` exactly.
    pub fn lift(&self, px: Pixel, depth_mm: f64) -> Result<Point3, CameraError> {
        if !(depth_mm.is_finite() && px.u.is_finite() && px.v.is_finite()) || depth_mm <= 0.0 {
            return Err(CameraError::InvalidDepth { u: px.u, v: px.v });
        }
        Ok(Point3::new(
            (px.u - self.cx) / self.fx * depth_mm,
            (px.v - self.cy) / self.fy * depth_mm,
            depth_mm,
        ))
    }

    /// Backprojects a pixel using the depth image's value at that pixel.
    pub fn backproject(&self, px: Pixel, depth: &DepthImage) -> Result<Point3, CameraError> {
        let d = depth.depth_at(px)?;
        self.lift(px, d)
    }

    pub fn contains(&self, px: Pixel) -> bool {
        px.u.is_finite()
            && px.v.is_finite()
            && px.u >= 0.0
            && px.u < self.width as f64
            && px.v >= 0.0
            && px.v < self.height as f64
    }
}

/// Per-pixel depth in millimeters; a stored 0 encodes "invalid", matching the
/// convention of common RGB-D sensors, and is surfaced as an error on lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl DepthImage {
    pub fn new(width: u32, height: u32, data: Vec<f64>) -> Result<Self, CameraError> {
        let expected = width as usize * height as usize;
        if data.len() != expected {
            return Err(CameraError::InvalidDepthImage {
                rule: format!("data length {} != width*height {}", data.len(), expected),
            });
        }
        if let Some(bad) = data.iter().find(|d| !d.is_finite() || **d < 0.0) {
            return Err(CameraError::InvalidDepthImage {
                rule: format!("depths must be finite and >= 0, found {bad}"),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn constant(width: u32, height: u32, depth_mm: f64) -> Result<Self, CameraError> {
        Self::new(
            width,
            height,
            vec![depth_mm; width as usize * height as usize],
        )
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Nearest-neighbor depth lookup. A continuous pixel is in bounds iff
    /// `0 ≤ u < width` and `0 ≤ v < height`; the index is rounded
    /// half-away-from-zero, then clamped to the last pixel (so width−0.4 reads
    /// the nearest existing pixel instead of falling off the edge). A stored
    /// 0 is reported as an invalid-depth error, never returned as data.
    pub fn depth_at(&self, px: Pixel) -> Result<f64, CameraError> {
        if !(px.u.is_finite() && px.v.is_finite())
            || px.u < 0.0
            || px.v < 0.0
            || px.u >= self.width as f64
            || px.v >= self.height as f64
        {
            return Err(CameraError::OutOfBounds {
                u: px.u,
                v: px.v,
                width: self.width,
                height: self.height,
            });
        }
        let col = (px.u.round() as u32).min(self.width - 1);
        let row = (px.v.round() as u32).min(self.height - 1);
        let value = self.data[row as usize * self.width as usize + col as usize];
        if value == 0.0 {
            return Err(CameraError::InvalidDepth { u: px.u, v: px.v });
        }
        Ok(value)
    }
}
