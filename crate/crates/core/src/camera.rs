//! Pinhole cameras, rigid poses and per-pixel maps.
//!
//! Conventions: camera frame x right, y down, z along the optical axis.
//! Lengths are millimeters, image coordinates are pixels with pixel `(x, y)`
//! centered at the integer coordinate `(x, y)`. Rectified stereo puts the
//! right camera at `+baseline` along the left camera's x axis, so a point seen
//! at column `x` on the left appears at column `x - d` on the right.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = Vector3<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Stereo baseline in mm.
    pub baseline: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        baseline: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            baseline,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !(positive(self.fx) && positive(self.fy) && positive(self.baseline)) {
            return Err(Error::InvalidArgument(format!(
                "focal lengths and baseline must be positive, got fx={} fy={} baseline={}",
                self.fx, self.fy, self.baseline
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("image size must be non-zero".into()));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64)
            || !(self.cy >= 0.0 && self.cy < self.height as f64)
        {
            return Err(Error::InvalidArgument(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// `fx * baseline`, the disparity-depth product.
    #[inline]
    pub fn disparity_scale(&self) -> f64 {
        self.fx * self.baseline
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

/// World-from-camera rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub const ORTHONORMAL_TOL: f64 = 1e-9;

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Builds a pose, checking orthonormality and handedness to `tol`.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>, tol: f64) -> Result<Self> {
        let pose = Self {
            rotation,
            translation,
        };
        pose.check(tol)?;
        Ok(pose)
    }

    pub fn check(&self, tol: f64) -> Result<()> {
        if !self.rotation.iter().chain(self.translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("pose has non-finite entries".into()));
        }
        let err = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        if err > tol {
            return Err(Error::InvalidArgument(format!(
                "rotation is not orthonormal (max deviation {err:e})"
            )));
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > tol {
            return Err(Error::InvalidArgument(format!(
                "rotation determinant is {det}, expected +1"
            )));
        }
        Ok(())
    }

    /// Row-major homogeneous matrix.
    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_matrix(m: &Matrix4<f64>, tol: f64) -> Result<Self> {
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::InvalidArgument(format!(
                "last pose row must be 0 0 0 1, got {bottom:?}"
            )));
        }
        Self::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
            tol,
        )
    }

    #[inline]
    pub fn transform_point(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Camera center in world coordinates.
    pub fn position(&self) -> Point3 {
        self.translation
    }

    /// Optical axis in world coordinates.
    pub fn optical_axis(&self) -> Vector3<f64> {
        self.rotation.column(2).into_owned()
    }
}

/// Dense per-pixel scalar map with an explicit invalid marker.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    width: usize,
    height: usize,
    data: Vec<Option<f64>>,
}

/// Disparity in pixels; valid values are finite and `>= 0`.
pub type DisparityMap = ScalarMap;
/// Depth along the optical axis in mm; valid values are finite and `> 0`.
pub type DepthMap = ScalarMap;

impl ScalarMap {
    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![None; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<Option<f64>>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "map of {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> Option<f64>) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// Builds a depth map, rejecting non-positive or non-finite valid entries.
    pub fn depth(width: usize, height: usize, data: Vec<Option<f64>>) -> Result<Self> {
        if let Some(bad) = data.iter().flatten().find(|z| !(z.is_finite() && **z > 0.0)) {
            return Err(Error::InvalidArgument(format!("invalid depth value {bad}")));
        }
        Self::from_vec(width, height, data)
    }

    /// Builds a disparity map, rejecting negative or non-finite valid entries.
    pub fn disparity(width: usize, height: usize, data: Vec<Option<f64>>) -> Result<Self> {
        if let Some(bad) = data.iter().flatten().find(|d| !(d.is_finite() && **d >= 0.0)) {
            return Err(Error::InvalidArgument(format!("invalid disparity value {bad}")));
        }
        Self::from_vec(width, height, data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: Option<f64>) {
        self.data[y * self.width + x] = v;
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [Option<f64>] {
        &mut self.data
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|v| v.is_some()).count()
    }

    pub fn map(&self, f: impl Fn(f64) -> Option<f64>) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| v.and_then(&f)).collect(),
        }
    }

    pub fn ensure_dims(&self, what: &'static str, expected: (usize, usize)) -> Result<()> {
        if self.dims() != expected {
            return Err(Error::ShapeMismatch {
                what,
                expected,
                found: self.dims(),
            });
        }
        Ok(())
    }
}

/// Grayscale intensity image (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "image of {width}x{height} needs {} pixels, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

/// `Z = fx * baseline / d`; zero and invalid disparities map to invalid depth.
pub fn disparity_to_depth(disparity: &DisparityMap, k: &CameraIntrinsics) -> DepthMap {
    let scale = k.disparity_scale();
    disparity.map(|d| if d > 0.0 { Some(scale / d) } else { None })
}

pub fn depth_to_disparity(depth: &DepthMap, k: &CameraIntrinsics) -> DisparityMap {
    let scale = k.disparity_scale();
    depth.map(|z| Some(scale / z))
}

/// Camera-frame point seen at pixel `(x, y)` with depth `depth`.
pub fn backproject(x: f64, y: f64, depth: f64, k: &CameraIntrinsics) -> Result<Point3> {
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "backprojection needs positive depth, got {depth}"
        )));
    }
    Ok(backproject_unchecked(x, y, depth, k))
}

#[inline]
pub(crate) fn backproject_unchecked(x: f64, y: f64, depth: f64, k: &CameraIntrinsics) -> Point3 {
    Point3::new(depth * (x - k.cx) / k.fx, depth * (y - k.cy) / k.fy, depth)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    InFrame { x: f64, y: f64, depth: f64 },
    OutOfFrame { x: f64, y: f64, depth: f64 },
    BehindCamera,
}

impl Projection {
    /// Nearest pixel for in-frame projections.
    #[inline]
    pub fn pixel(&self, k: &CameraIntrinsics) -> Option<(usize, usize, f64)> {
        match *self {
            Projection::InFrame { x, y, depth } => {
                let px = (x + 0.5).floor();
                let py = (y + 0.5).floor();
                if px < k.width as f64 && py < k.height as f64 {
                    Some((px as usize, py as usize, depth))
                } else {
                    None
                }
            }
            _ => None,
        }
    }
}

/// Pinhole projection of a camera-frame point.
#[inline]
pub fn project(p: &Point3, k: &CameraIntrinsics) -> Projection {
    if !(p.z > 0.0) {
        return Projection::BehindCamera;
    }
    let x = k.fx * p.x / p.z + k.cx;
    let y = k.fy * p.y / p.z + k.cy;
    let depth = p.z;
    if x >= 0.0 && x < k.width as f64 && y >= 0.0 && y < k.height as f64 {
        Projection::InFrame { x, y, depth }
    } else {
        Projection::OutOfFrame { x, y, depth }
    }
}
