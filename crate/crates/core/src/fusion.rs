//! Voxel volumes and per-frame integration.
//!
//! [`PsdfVolume`] keeps a Gaussian posterior over the signed distance and a
//! Beta posterior over the inlier probability in every voxel, updated under a
//! Gaussian + uniform measurement model. [`TsdfVolume`] is the uniformly
//! weighted truncated SDF baseline.
//!
//! Voxel `(x, y, z)` sits at `origin + voxel_size * (x, y, z)` and is stored at
//! `x + nx * (y + ny * z)`. Signed distances are positive in free space.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{project, CameraIntrinsics, DepthMap, Point3, Pose, ScalarMap};
use crate::error::{Error, Result};
use crate::photometric::{ConfidenceMap, InlierMapping};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VolumeConfig {
    /// World position of voxel (0, 0, 0), mm.
    pub origin: [f64; 3],
    pub voxel_size: f64,
    pub dims: [usize; 3],
    pub truncation: f64,
    /// Support of the uniform outlier density, mm.
    pub f_min: f64,
    pub f_max: f64,
    /// Extraction gates.
    pub sigma_thr: f64,
    pub pi_thr: f64,
    /// Minimum observation count for the pruned baseline.
    pub w_thr: u32,
}

impl Default for VolumeConfig {
    fn default() -> Self {
        Self {
            origin: [0.0; 3],
            voxel_size: 0.5,
            dims: [64, 64, 64],
            truncation: 1.5,
            f_min: -6.0,
            f_max: 6.0,
            sigma_thr: 1.0,
            pi_thr: 0.6,
            w_thr: 3,
        }
    }
}

impl VolumeConfig {
    /// Grid covering the axis-aligned box `[min, max]` with default thresholds.
    pub fn covering(min: Point3, max: Point3, voxel_size: f64) -> Self {
        let dims = [0, 1, 2].map(|a| ((max[a] - min[a]) / voxel_size).ceil().max(0.0) as usize + 1);
        Self {
            origin: [min.x, min.y, min.z],
            voxel_size,
            dims,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return bad("voxel_size must be positive");
        }
        if self.truncation < self.voxel_size {
            return bad("truncation must be at least one voxel");
        }
        if !(self.f_min < 0.0 && self.f_max > 0.0) || !self.f_min.is_finite() || !self.f_max.is_finite() {
            return bad("need f_min < 0 < f_max");
        }
        if !(self.pi_thr > 0.0 && self.pi_thr < 1.0) {
            return bad("pi_thr must lie in (0, 1)");
        }
        if !(self.sigma_thr > 0.0) {
            return bad("sigma_thr must be positive");
        }
        if self.dims.iter().any(|&d| d < 2) {
            return bad("every volume dimension needs at least 2 voxels");
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return bad("origin must be finite");
        }
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    #[inline]
    pub fn center(&self, x: usize, y: usize, z: usize) -> Point3 {
        Point3::new(
            self.origin[0] + self.voxel_size * x as f64,
            self.origin[1] + self.voxel_size * y as f64,
            self.origin[2] + self.voxel_size * z as f64,
        )
    }

    /// Uniform outlier density over `[f_min, f_max]`.
    pub fn uniform_density(&self) -> f64 {
        1.0 / (self.f_max - self.f_min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdfVoxel {
    pub mu: f64,
    pub sigma2: f64,
    pub a: f64,
    pub b: f64,
    pub observed: u32,
}

impl PsdfVoxel {
    /// Diffuse prior: zero mean, variance `f_max²`, uniform Beta.
    pub fn prior(cfg: &VolumeConfig) -> Self {
        Self {
            mu: 0.0,
            sigma2: cfg.f_max * cfg.f_max,
            a: 1.0,
            b: 1.0,
            observed: 0,
        }
    }

    /// Beta-mean inlier probability `a / (a + b)`.
    #[inline]
    pub fn inlier_mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }

    #[inline]
    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TsdfVoxel {
    pub value: f64,
    pub weight: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdfObservation {
    pub f: f64,
    /// Inlier standard deviation, mm.
    pub tau: f64,
    pub pi: f64,
}

/// Why a PSDF update was not applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpdateRejected;

#[inline]
fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    (-0.5 * d * d / var).exp() / (2.0 * PI * var).sqrt()
}

/// One Bayesian update of a voxel with a single observation.
///
/// The mean and variance follow the two-component mixture posterior weighted
/// by the observation's `pi`; the Beta parameters are refit by matching the
/// first two moments of the inlier-probability posterior under the voxel's own
/// Beta mean.
pub fn psdf_update(
    v: &PsdfVoxel,
    obs: &SdfObservation,
    cfg: &VolumeConfig,
) -> std::result::Result<PsdfVoxel, UpdateRejected> {
    let tau2 = obs.tau * obs.tau;
    let var = v.sigma2 + tau2;
    let gauss = normal_pdf(obs.f, v.mu, var);
    let uniform = cfg.uniform_density();

    // responsibilities in the log domain: the Gaussian underflows long before
    // the ratio stops mattering, and π = 1 must give c1 = 1 exactly
    let d = obs.f - v.mu;
    let log_l1 = obs.pi.ln() - 0.5 * d * d / var - 0.5 * (2.0 * PI * var).ln();
    let log_l2 = (1.0 - obs.pi).ln() + uniform.ln();
    let c2 = 1.0 / (1.0 + (log_l1 - log_l2).exp());
    let c1 = 1.0 - c2;

    let s2 = 1.0 / (1.0 / v.sigma2 + 1.0 / tau2);
    let m = s2 * (v.mu / v.sigma2 + obs.f / tau2);
    let mu = c1 * m + c2 * v.mu;
    let dm = m - v.mu;
    let sigma2 = c1 * s2 + c2 * v.sigma2 + c1 * c2 * dm * dm;

    let (a, b) = (v.a, v.b);
    let w1 = a / (a + b) * gauss;
    let w2 = b / (a + b) * uniform;
    let (w1, w2) = (w1 / (w1 + w2), w2 / (w1 + w2));
    let ab1 = a + b + 1.0;
    let ab2 = a + b + 2.0;
    let e = w1 * (a + 1.0) / ab1 + w2 * a / ab1;
    let f = w1 * (a + 1.0) * (a + 2.0) / (ab1 * ab2) + w2 * a * (a + 1.0) / (ab1 * ab2);
    let new_a = e * (e - f) / (f - e * e);
    let new_b = new_a * (1.0 - e) / e;

    let ok = [mu, sigma2, new_a, new_b].iter().all(|x| x.is_finite())
        && sigma2 > 0.0
        && new_a > 0.0
        && new_b > 0.0;
    if !ok {
        return Err(UpdateRejected);
    }
    Ok(PsdfVoxel {
        mu,
        sigma2,
        a: new_a,
        b: new_b,
        observed: v.observed.saturating_add(1),
    })
}

/// Running average with the observation clamped to `±truncation`.
pub fn tsdf_update(v: &TsdfVoxel, f: f64, cfg: &VolumeConfig) -> TsdfVoxel {
    let f = f.clamp(-cfg.truncation, cfg.truncation);
    let w = v.weight as f64;
    TsdfVoxel {
        value: (v.value * w + f) / (w + 1.0),
        weight: v.weight.saturating_add(1),
    }
}

/// Projective SDF `Z_k − Z^g` of a world point, with the pixel it read.
///
/// `None` when the point is behind the camera, projects outside the image,
/// hits an invalid depth pixel or falls outside `[lower, upper]`.
#[inline]
pub fn sdf_observation_at(
    world: &Point3,
    depth: &DepthMap,
    camera_from_world: &Pose,
    k: &CameraIntrinsics,
    lower: f64,
    upper: f64,
) -> Option<(f64, usize, usize)> {
    let pc = camera_from_world.transform_point(world);
    let (px, py, zg) = project(&pc, k).pixel(k)?;
    let zk = depth.get(px, py)?;
    let f = zk - zg;
    (lower..=upper).contains(&f).then_some((f, px, py))
}

/// Observation for a voxel center seen from `pose` (world-from-camera), in the
/// band `[f_min, f_max]`.
pub fn sdf_observation(
    voxel_center: &Point3,
    depth: &DepthMap,
    pose: &Pose,
    k: &CameraIntrinsics,
    cfg: &VolumeConfig,
) -> Option<f64> {
    sdf_observation_at(voxel_center, depth, &pose.inverse(), k, cfg.f_min, cfg.f_max).map(|o| o.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FrameStats {
    pub updated: u64,
    pub skipped: u64,
    pub rejected: u64,
}

impl std::ops::Add for FrameStats {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            updated: self.updated + o.updated,
            skipped: self.skipped + o.skipped,
            rejected: self.rejected + o.rejected,
        }
    }
}

/// Per-pixel inputs for one PSDF frame.
#[derive(Debug, Clone, Copy)]
pub struct FrameObservations<'a> {
    pub intrinsics: &'a CameraIntrinsics,
    /// World-from-camera.
    pub pose: &'a Pose,
    pub depth: &'a DepthMap,
    /// Inlier standard deviation per pixel, mm.
    pub tau: &'a ScalarMap,
    /// Inlier probability per pixel.
    pub inlier_prob: &'a ScalarMap,
}

/// Read access shared by both volume kinds.
pub trait SdfGrid {
    fn config(&self) -> &VolumeConfig;
    /// Fused signed distance at a voxel, `None` if never observed.
    fn sdf(&self, index: usize) -> Option<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsdfVolume {
    config: VolumeConfig,
    voxels: Vec<PsdfVoxel>,
    rejected: u64,
}

impl PsdfVolume {
    pub fn new(config: VolumeConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            voxels: vec![PsdfVoxel::prior(&config); config.voxel_count()],
            config,
            rejected: 0,
        })
    }

    pub fn config(&self) -> &VolumeConfig {
        &self.config
    }

    pub fn voxels(&self) -> &[PsdfVoxel] {
        &self.voxels
    }

    pub fn voxels_mut(&mut self) -> &mut [PsdfVoxel] {
        &mut self.voxels
    }

    pub fn voxel(&self, x: usize, y: usize, z: usize) -> &PsdfVoxel {
        &self.voxels[self.config.index(x, y, z)]
    }

    /// Total updates rejected for non-finite intermediates.
    pub fn rejected_updates(&self) -> u64 {
        self.rejected
    }

    pub fn observed_count(&self) -> usize {
        self.voxels.iter().filter(|v| v.observed > 0).count()
    }

    pub fn integrate(&mut self, frame: &FrameObservations) -> Result<FrameStats> {
        let k = frame.intrinsics;
        frame.pose.check(Pose::ORTHONORMAL_TOL)?;
        frame.depth.ensure_dims("depth map", k.dims())?;
        frame.tau.ensure_dims("sigma map", k.dims())?;
        frame.inlier_prob.ensure_dims("inlier probability map", k.dims())?;
        let cfg = self.config;
        let cam = frame.pose.inverse();
        let slab = cfg.dims[0] * cfg.dims[1];
        let stats = self
            .voxels
            .par_chunks_mut(slab)
            .enumerate()
            .map(|(z, chunk)| {
                let mut st = FrameStats::default();
                for (i, v) in chunk.iter_mut().enumerate() {
                    let (x, y) = (i % cfg.dims[0], i / cfg.dims[0]);
                    let c = cfg.center(x, y, z);
                    let Some((f, px, py)) =
                        sdf_observation_at(&c, frame.depth, &cam, k, cfg.f_min, cfg.f_max)
                    else {
                        st.skipped += 1;
                        continue;
                    };
                    let (Some(tau), Some(pi)) = (frame.tau.get(px, py), frame.inlier_prob.get(px, py))
                    else {
                        st.skipped += 1;
                        continue;
                    };
                    match psdf_update(v, &SdfObservation { f, tau, pi }, &cfg) {
                        Ok(nv) => {
                            *v = nv;
                            st.updated += 1;
                        }
                        Err(UpdateRejected) => st.rejected += 1,
                    }
                }
                st
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold(FrameStats::default(), |a, b| a + b);
        self.rejected += stats.rejected;
        Ok(stats)
    }
}

impl SdfGrid for PsdfVolume {
    fn config(&self) -> &VolumeConfig {
        &self.config
    }
    fn sdf(&self, index: usize) -> Option<f64> {
        let v = &self.voxels[index];
        (v.observed > 0).then_some(v.mu)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsdfVolume {
    config: VolumeConfig,
    voxels: Vec<TsdfVoxel>,
}

impl TsdfVolume {
    pub fn new(config: VolumeConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            voxels: vec![TsdfVoxel::default(); config.voxel_count()],
            config,
        })
    }

    pub fn config(&self) -> &VolumeConfig {
        &self.config
    }

    pub fn voxels(&self) -> &[TsdfVoxel] {
        &self.voxels
    }

    pub fn voxels_mut(&mut self) -> &mut [TsdfVoxel] {
        &mut self.voxels
    }

    pub fn voxel(&self, x: usize, y: usize, z: usize) -> &TsdfVoxel {
        &self.voxels[self.config.index(x, y, z)]
    }

    pub fn observed_count(&self) -> usize {
        self.voxels.iter().filter(|v| v.weight > 0).count()
    }

    /// Fuses a depth map over the band `[-truncation, f_max]`.
    pub fn integrate(&mut self, k: &CameraIntrinsics, pose: &Pose, depth: &DepthMap) -> Result<FrameStats> {
        pose.check(Pose::ORTHONORMAL_TOL)?;
        depth.ensure_dims("depth map", k.dims())?;
        let cfg = self.config;
        let cam = pose.inverse();
        let slab = cfg.dims[0] * cfg.dims[1];
        Ok(self
            .voxels
            .par_chunks_mut(slab)
            .enumerate()
            .map(|(z, chunk)| {
                let mut st = FrameStats::default();
                for (i, v) in chunk.iter_mut().enumerate() {
                    let (x, y) = (i % cfg.dims[0], i / cfg.dims[0]);
                    let c = cfg.center(x, y, z);
                    match sdf_observation_at(&c, depth, &cam, k, -cfg.truncation, cfg.f_max) {
                        Some((f, _, _)) => {
                            *v = tsdf_update(v, f, &cfg);
                            st.updated += 1;
                        }
                        None => st.skipped += 1,
                    }
                }
                st
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold(FrameStats::default(), |a, b| a + b))
    }

    /// Resets voxels seen fewer than `w_thr` times to unobserved.
    pub fn prune(&mut self, w_thr: u32) -> usize {
        let mut removed = 0;
        for v in &mut self.voxels {
            if v.weight > 0 && v.weight < w_thr {
                *v = TsdfVoxel::default();
                removed += 1;
            }
        }
        removed
    }
}

impl SdfGrid for TsdfVolume {
    fn config(&self) -> &VolumeConfig {
        &self.config
    }
    fn sdf(&self, index: usize) -> Option<f64> {
        let v = &self.voxels[index];
        (v.weight > 0).then_some(v.value)
    }
}

/// Maps confidences through the trained mapping and fuses one frame.
pub fn integrate_frame(
    volume: &mut PsdfVolume,
    k: &CameraIntrinsics,
    pose: &Pose,
    depth: &DepthMap,
    confidence: &ConfidenceMap,
    sigmas: &ScalarMap,
    mapping: &InlierMapping,
) -> Result<FrameStats> {
    confidence.ensure_dims("confidence map", k.dims())?;
    let pi = confidence.map(|c| Some(mapping.inlier_probability(c)));
    volume.integrate(&FrameObservations {
        intrinsics: k,
        pose,
        depth,
        tau: sigmas,
        inlier_prob: &pi,
    })
}

/// Mean absolute difference between fused and reference SDF over observed
/// voxels. With `clamp`, both sides are clamped to `±clamp` first.
pub fn mad_sdf<G, F>(volume: &G, ground_truth: F, clamp: Option<f64>) -> Result<f64>
where
    G: SdfGrid + ?Sized,
    F: Fn(&Point3) -> f64,
{
    let cfg = volume.config();
    let c = |x: f64| match clamp {
        Some(t) => x.clamp(-t, t),
        None => x,
    };
    let mut total = 0.0;
    let mut n = 0usize;
    for i in 0..cfg.voxel_count() {
        if let Some(mu) = volume.sdf(i) {
            let [x, y, z] = cfg.coords(i);
            total += (c(mu) - c(ground_truth(&cfg.center(x, y, z)))).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyVolume);
    }
    Ok(total / n as f64)
}

/// MAD over observed voxels within `band` of the reference surface, both
/// sides clamped to `±band`. Unlike [`mad_sdf`] the voxel set depends only
/// on the reference and on which voxels were observed.
pub fn mad_sdf_band<G, F>(volume: &G, ground_truth: F, band: f64) -> Result<f64>
where
    G: SdfGrid + ?Sized,
    F: Fn(&Point3) -> f64,
{
    if !(band > 0.0) {
        return Err(Error::InvalidArgument("band must be positive".into()));
    }
    let cfg = volume.config();
    let mut total = 0.0;
    let mut n = 0usize;
    for i in 0..cfg.voxel_count() {
        let Some(mu) = volume.sdf(i) else { continue };
        let [x, y, z] = cfg.coords(i);
        let g = ground_truth(&cfg.center(x, y, z));
        if g.abs() <= band {
            total += (mu.clamp(-band, band) - g).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyVolume);
    }
    Ok(total / n as f64)
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"DFSNAP01";

/// Either volume kind, for snapshots and the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum Volume {
    Psdf(PsdfVolume),
    Tsdf(TsdfVolume),
}

impl Volume {
    pub fn grid(&self) -> &dyn SdfGrid {
        match self {
            Volume::Psdf(v) => v,
            Volume::Tsdf(v) => v,
        }
    }

    /// Little-endian dump; see the format notes in `docs/FORMATS.md`.
    pub fn write_snapshot(&self, w: &mut impl Write) -> std::io::Result<()> {
        let (kind, cfg, rejected) = match self {
            Volume::Psdf(v) => (0u8, &v.config, v.rejected),
            Volume::Tsdf(v) => (1u8, &v.config, 0),
        };
        w.write_all(SNAPSHOT_MAGIC)?;
        w.write_all(&[kind, 0, 0, 0, 0, 0, 0, 0])?;
        for o in cfg.origin {
            w.write_all(&o.to_le_bytes())?;
        }
        w.write_all(&cfg.voxel_size.to_le_bytes())?;
        for d in cfg.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for x in [cfg.truncation, cfg.f_min, cfg.f_max, cfg.sigma_thr, cfg.pi_thr] {
            w.write_all(&x.to_le_bytes())?;
        }
        w.write_all(&(cfg.w_thr as u64).to_le_bytes())?;
        w.write_all(&rejected.to_le_bytes())?;
        match self {
            Volume::Psdf(v) => {
                for vx in &v.voxels {
                    for x in [vx.mu, vx.sigma2, vx.a, vx.b] {
                        w.write_all(&x.to_le_bytes())?;
                    }
                    w.write_all(&vx.observed.to_le_bytes())?;
                }
            }
            Volume::Tsdf(v) => {
                for vx in &v.voxels {
                    w.write_all(&vx.value.to_le_bytes())?;
                    w.write_all(&vx.weight.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_snapshot(r: &mut impl Read) -> std::result::Result<Self, String> {
        fn f64_(r: &mut impl Read) -> std::result::Result<f64, String> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(|e| e.to_string())?;
            Ok(f64::from_le_bytes(b))
        }
        fn u64_(r: &mut impl Read) -> std::result::Result<u64, String> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(|e| e.to_string())?;
            Ok(u64::from_le_bytes(b))
        }
        fn u32_(r: &mut impl Read) -> std::result::Result<u32, String> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|e| e.to_string())?;
            Ok(u32::from_le_bytes(b))
        }
        let mut head = [0u8; 16];
        r.read_exact(&mut head).map_err(|e| e.to_string())?;
        if &head[..8] != SNAPSHOT_MAGIC {
            return Err("bad magic".into());
        }
        let kind = head[8];
        let origin = [f64_(r)?, f64_(r)?, f64_(r)?];
        let voxel_size = f64_(r)?;
        let mut dims = [0usize; 3];
        for d in &mut dims {
            *d = usize::try_from(u64_(r)?).map_err(|e| e.to_string())?;
        }
        let cfg = VolumeConfig {
            origin,
            voxel_size,
            dims,
            truncation: f64_(r)?,
            f_min: f64_(r)?,
            f_max: f64_(r)?,
            sigma_thr: f64_(r)?,
            pi_thr: f64_(r)?,
            w_thr: u32::try_from(u64_(r)?).map_err(|e| e.to_string())?,
        };
        cfg.validate().map_err(|e| e.to_string())?;
        let rejected = u64_(r)?;
        let n = dims[0]
            .checked_mul(dims[1])
            .and_then(|x| x.checked_mul(dims[2]))
            .ok_or("dims overflow")?;
        let vol = match kind {
            0 => {
                let mut voxels = Vec::with_capacity(n);
                for _ in 0..n {
                    let v = PsdfVoxel {
                        mu: f64_(r)?,
                        sigma2: f64_(r)?,
                        a: f64_(r)?,
                        b: f64_(r)?,
                        observed: u32_(r)?,
                    };
                    if !(v.sigma2 > 0.0 && v.a > 0.0 && v.b > 0.0 && v.mu.is_finite()) {
                        return Err("voxel violates sigma2 > 0, a > 0, b > 0".into());
                    }
                    voxels.push(v);
                }
                Volume::Psdf(PsdfVolume {
                    config: cfg,
                    voxels,
                    rejected,
                })
            }
            1 => {
                let mut voxels = Vec::with_capacity(n);
                for _ in 0..n {
                    let v = TsdfVoxel {
                        value: f64_(r)?,
                        weight: u32_(r)?,
                    };
                    if !(v.value.abs() <= cfg.truncation) {
                        return Err("voxel value exceeds truncation".into());
                    }
                    voxels.push(v);
                }
                Volume::Tsdf(TsdfVolume { config: cfg, voxels })
            }
            k => return Err(format!("unknown volume kind {k}")),
        };
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(|e| e.to_string())? != 0 {
            return Err("trailing bytes".into());
        }
        Ok(vol)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_snapshot(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_snapshot(&mut BufReader::new(f)).map_err(|m| Error::format(path, m))
    }
}
