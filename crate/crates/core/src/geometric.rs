//! Per-point depth noise from local surface consistency.
//!
//! Every back-projected point gets a PCA frame from its nearest neighbors, a
//! quadratic height field is fit in that frame, and the spread of the
//! neighbors' offsets from the fit relative to the point's own offset gives
//! its variance.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{backproject_unchecked, CameraIntrinsics, DepthMap, Point3, ScalarMap};
use crate::error::{Error, Result};
use crate::spatial::KdTree;

/// Per-pixel depth standard deviation in mm.
pub type GeometricSigmaMap = ScalarMap;

const RANK_TOL: f64 = 1e-12;
const DAMPING: f64 = 1e-9;

/// How offsets from the local fit turn into a variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceEstimator {
    /// Degrees-of-freedom corrected residual variance over the point and its
    /// neighbors, see [`pooled_variance`].
    #[default]
    Pooled,
    /// Neighbor mean square minus the center offset squared, see
    /// [`geometric_variance`]. Biased low: about half the points of a noisy
    /// plane end up at the floor.
    CenterContrast,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometricConfig {
    /// Neighborhood size N.
    pub neighbors: usize,
    /// Lower bound on the reported standard deviation, mm.
    pub sigma_floor: f64,
    pub estimator: VarianceEstimator,
}

impl Default for GeometricConfig {
    fn default() -> Self {
        Self {
            neighbors: 30,
            sigma_floor: 0.05,
            estimator: VarianceEstimator::Pooled,
        }
    }
}

impl GeometricConfig {
    pub fn validate(&self) -> Result<()> {
        if self.neighbors < 6 {
            return Err(Error::InvalidArgument(
                "a quadratic fit needs at least 6 neighbors".into(),
            ));
        }
        if !(self.sigma_floor > 0.0 && self.sigma_floor.is_finite()) {
            return Err(Error::InvalidArgument("sigma_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Right-handed orthonormal frame with `n` along the least-variance direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    pub origin: Point3,
    pub u: Vector3<f64>,
    pub v: Vector3<f64>,
    pub n: Vector3<f64>,
}

impl LocalFrame {
    /// Coordinates `(u, v, n)` of a camera-frame point.
    #[inline]
    pub fn to_local(&self, p: &Point3) -> Vector3<f64> {
        let d = p - self.origin;
        Vector3::new(d.dot(&self.u), d.dot(&self.v), d.dot(&self.n))
    }
}

/// `f(u, v) = a u² + b v² + c uv + d u + e v + f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticSurface {
    pub coefficients: [f64; 6],
}

impl QuadraticSurface {
    #[inline]
    pub fn eval(&self, u: f64, v: f64) -> f64 {
        let [a, b, c, d, e, f] = self.coefficients;
        a * u * u + b * v * v + c * u * v + d * u + e * v + f
    }
}

/// Indices of the `n` nearest neighbors of `cloud[query]`, excluding itself.
pub fn knn(cloud: &[Point3], query: usize, n: usize) -> Result<Vec<usize>> {
    knn_with_tree(&KdTree::new(cloud), query, n)
}

pub fn knn_with_tree(tree: &KdTree, query: usize, n: usize) -> Result<Vec<usize>> {
    if tree.len() < n + 1 {
        return Err(Error::InsufficientNeighbors {
            available: tree.len(),
            required: n + 1,
        });
    }
    let q = tree.points()[query];
    Ok(tree.knn(&q, n, Some(query)).into_iter().map(|(i, _)| i).collect())
}

/// PCA frame of a neighborhood; `n` is oriented toward the camera center.
pub fn fit_local_frame(neighbors: &[Point3]) -> Result<LocalFrame> {
    if neighbors.len() < 3 {
        return Err(Error::Degenerate("fewer than 3 points"));
    }
    let count = neighbors.len() as f64;
    let origin = neighbors.iter().fold(Point3::zeros(), |acc, p| acc + p) / count;
    let mut cov = Matrix3::zeros();
    for p in neighbors {
        let d = p - origin;
        cov += d * d.transpose();
    }
    cov /= count;
    let eig = cov.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (lo, mid, hi) = (
        eig.eigenvalues[order[0]],
        eig.eigenvalues[order[1]],
        eig.eigenvalues[order[2]],
    );
    if !(hi > 0.0) || mid <= RANK_TOL * hi || !lo.is_finite() {
        return Err(Error::Degenerate("collinear or coincident neighborhood"));
    }
    let mut n: Vector3<f64> = eig.eigenvectors.column(order[0]).normalize();
    // toward the sensor at the camera-frame origin
    if n.dot(&(-origin)) < 0.0 {
        n = -n;
    }
    let u: Vector3<f64> = eig.eigenvectors.column(order[2]).normalize();
    let u = (u - n * n.dot(&u)).normalize();
    let v = n.cross(&u);
    Ok(LocalFrame { origin, u, v, n })
}

/// Least-squares quadratic height field through local `(u, v, n)` samples.
pub fn fit_quadratic(points: &[Vector3<f64>]) -> Result<QuadraticSurface> {
    if points.len() < 6 {
        return Err(Error::Degenerate("quadratic fit needs at least 6 points"));
    }
    // normalize (u, v) for conditioning
    let scale = points
        .iter()
        .map(|p| p.x.abs().max(p.y.abs()))
        .fold(0.0, f64::max);
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Degenerate("neighborhood has no tangent extent"));
    }
    let inv = 1.0 / scale;
    let mut ata = Matrix6::zeros();
    let mut atb = Vector6::zeros();
    for p in points {
        let (u, v) = (p.x * inv, p.y * inv);
        let row = Vector6::new(u * u, v * v, u * v, u, v, 1.0);
        ata += row * row.transpose();
        atb += row * p.z;
    }
    let damping = DAMPING * ata.trace();
    for i in 0..6 {
        ata[(i, i)] += damping;
    }
    let chol = ata
        .cholesky()
        .ok_or(Error::Degenerate("normal equations are not positive definite"))?;
    let x = chol.solve(&atb);
    let s2 = inv * inv;
    let coefficients = [x[0] * s2, x[1] * s2, x[2] * s2, x[3] * inv, x[4] * inv, x[5]];
    if coefficients.iter().any(|c| !c.is_finite()) {
        return Err(Error::Degenerate("non-finite quadratic coefficients"));
    }
    Ok(QuadraticSurface { coefficients })
}

/// Signed height of a local point above the fitted surface.
#[inline]
pub fn point_offset(p: &Vector3<f64>, surface: &QuadraticSurface) -> f64 {
    p.z - surface.eval(p.x, p.y)
}

/// `max(Σ ε_N² / N − ε_p², floor²)`.
pub fn geometric_variance(eps_p: f64, eps_neighbors: &[f64], sigma_floor: f64) -> f64 {
    assert!(!eps_neighbors.is_empty(), "need at least one neighbor offset");
    let mean_sq = eps_neighbors.iter().map(|e| e * e).sum::<f64>() / eps_neighbors.len() as f64;
    (mean_sq - eps_p * eps_p).max(sigma_floor * sigma_floor)
}

/// Residual variance of the point and its neighbors about the fit, corrected
/// for the six fitted coefficients and clamped to `floor²`.
pub fn pooled_variance(eps_p: f64, eps_neighbors: &[f64], sigma_floor: f64) -> f64 {
    let dof = (eps_neighbors.len() + 1).saturating_sub(6).max(1) as f64;
    let ss = eps_neighbors.iter().map(|e| e * e).sum::<f64>() + eps_p * eps_p;
    (ss / dof).max(sigma_floor * sigma_floor)
}

/// Standard deviation for `cloud[index]` given its neighbor indices.
pub fn point_sigma(
    cloud: &[Point3],
    index: usize,
    neighbors: &[usize],
    sigma_floor: f64,
    estimator: VarianceEstimator,
) -> Result<f64> {
    let pts: Vec<Point3> = neighbors.iter().map(|&i| cloud[i]).collect();
    let frame = fit_local_frame(&pts)?;
    let local: Vec<Vector3<f64>> = pts.iter().map(|p| frame.to_local(p)).collect();
    let surface = fit_quadratic(&local)?;
    let eps_n: Vec<f64> = local.iter().map(|p| point_offset(p, &surface)).collect();
    let eps_p = point_offset(&frame.to_local(&cloud[index]), &surface);
    let var = match estimator {
        VarianceEstimator::Pooled => pooled_variance(eps_p, &eps_n, sigma_floor),
        VarianceEstimator::CenterContrast => geometric_variance(eps_p, &eps_n, sigma_floor),
    };
    Ok(var.sqrt())
}

/// Sigma for every point of a cloud; `None` where the neighborhood is degenerate.
pub fn cloud_sigmas(cloud: &[Point3], config: &GeometricConfig) -> Result<Vec<Option<f64>>> {
    config.validate()?;
    if cloud.len() < config.neighbors + 1 {
        return Ok(vec![None; cloud.len()]);
    }
    let tree = KdTree::new(cloud);
    Ok((0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let nb = knn_with_tree(&tree, i, config.neighbors).ok()?;
            point_sigma(cloud, i, &nb, config.sigma_floor, config.estimator).ok()
        })
        .collect())
}

/// Back-projects every valid depth pixel and estimates its sigma.
pub fn compute_sigma_map(
    depth: &DepthMap,
    k: &CameraIntrinsics,
    config: &GeometricConfig,
) -> Result<GeometricSigmaMap> {
    depth.ensure_dims("depth map", k.dims())?;
    let mut pixels = Vec::new();
    let mut cloud = Vec::new();
    for y in 0..depth.height() {
        for x in 0..depth.width() {
            if let Some(z) = depth.get(x, y) {
                pixels.push((x, y));
                cloud.push(backproject_unchecked(x as f64, y as f64, z, k));
            }
        }
    }
    let sigmas = cloud_sigmas(&cloud, config)?;
    let mut out = ScalarMap::invalid(depth.width(), depth.height());
    for ((x, y), s) in pixels.into_iter().zip(sigmas) {
        out.set(x, y, s);
    }
    Ok(out)
}
