//! C ABI over `depthfuse`.
//!
//! Every fallible function returns a [`DfStatus`]. On failure the message is
//! kept per thread and can be read with [`df_last_error_message`]. Objects
//! are opaque handles created by `*_new` / `*_load` / `*_train` functions and
//! released with the matching `*_free`.
//!
//! Per-pixel maps are row-major `double` arrays of `width * height` entries,
//! with NaN marking invalid pixels. Poses are row-major 4x4 world-from-camera
//! matrices. Lengths are in millimetres.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use nalgebra::Matrix4;

use depthfuse::camera::{CameraIntrinsics, GrayImage, Pose, ScalarMap};
use depthfuse::extraction::{marching_cubes, marching_cubes_tsdf, ExtractionGate};
use depthfuse::fusion::{FrameObservations, PsdfVolume, TsdfVolume, Volume, VolumeConfig};
use depthfuse::geometric::{compute_sigma_map, GeometricConfig};
use depthfuse::mesh::{PlyFormat, TriangleMesh};
use depthfuse::metrics::evaluate;
use depthfuse::photometric::{compute_confidence_map, InlierMapping, PhotometricConfig};
use depthfuse::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Degenerate = 5,
    CannotTrain = 6,
    Empty = 7,
    WrongVolumeKind = 8,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfVolumeKind {
    Psdf = 0,
    Tsdf = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DfIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub baseline: f64,
    pub width: u32,
    pub height: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DfVolumeConfig {
    pub origin: [f64; 3],
    pub voxel_size: f64,
    pub dims: [u32; 3],
    pub truncation: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub sigma_thr: f64,
    pub pi_thr: f64,
    pub w_thr: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DfPhotometricConfig {
    pub window_radius: u32,
    pub sigma_mlm: f64,
    pub min_disparity: i32,
    pub max_disparity: i32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DfMetricReport {
    /// NaN when no reconstructed vertex is an inlier.
    pub mean_p2p: f64,
    pub outlier_pct: f64,
    pub completeness_pct: f64,
    pub n_inliers: u64,
    pub n_outliers: u64,
}

pub struct DfVolume(Volume);
pub struct DfMapping(InlierMapping);
pub struct DfMesh(TriangleMesh);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DfStatus {
    match e.exit_code() {
        2 => DfStatus::InvalidArgument,
        3 => DfStatus::Io,
        4 => DfStatus::Format,
        5 => DfStatus::Degenerate,
        6 => DfStatus::CannotTrain,
        7 => DfStatus::Empty,
        _ => DfStatus::InvalidArgument,
    }
}

struct Fail(DfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

type Res = Result<(), Fail>;

fn guard(f: impl FnOnce() -> Res) -> DfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DfStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            DfStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(DfStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(DfStatus::InvalidArgument, msg.into())
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn path(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn out<T>(p: *mut *mut T, value: T) -> Res {
    if p.is_null() {
        return Err(null("output handle"));
    }
    *p = Box::into_raw(Box::new(value));
    Ok(())
}

fn intrinsics(k: &DfIntrinsics) -> Result<CameraIntrinsics, Fail> {
    Ok(CameraIntrinsics::new(k.fx, k.fy, k.cx, k.cy, k.baseline, k.width as usize, k.height as usize)?)
}

fn pose(m: &[f64; 16]) -> Result<Pose, Fail> {
    Ok(Pose::from_matrix(&Matrix4::from_row_slice(m), Pose::ORTHONORMAL_TOL)?)
}

unsafe fn map_in(p: *const f64, k: &CameraIntrinsics, what: &str) -> Result<ScalarMap, Fail> {
    let (w, h) = k.dims();
    let v = slice(p, w * h, what)?;
    Ok(ScalarMap::from_vec(w, h, v.iter().map(|x| x.is_finite().then_some(*x)).collect())?)
}

fn map_out(m: &ScalarMap, dst: &mut [f64]) {
    for (d, v) in dst.iter_mut().zip(m.values()) {
        *d = v.unwrap_or(f64::NAN);
    }
}

fn volume_config(c: &DfVolumeConfig) -> VolumeConfig {
    VolumeConfig {
        origin: c.origin,
        voxel_size: c.voxel_size,
        dims: c.dims.map(|d| d as usize),
        truncation: c.truncation,
        f_min: c.f_min,
        f_max: c.f_max,
        sigma_thr: c.sigma_thr,
        pi_thr: c.pi_thr,
        w_thr: c.w_thr,
    }
}

fn to_df_config(c: &VolumeConfig) -> DfVolumeConfig {
    DfVolumeConfig {
        origin: c.origin,
        voxel_size: c.voxel_size,
        dims: c.dims.map(|d| d as u32),
        truncation: c.truncation,
        f_min: c.f_min,
        f_max: c.f_max,
        sigma_thr: c.sigma_thr,
        pi_thr: c.pi_thr,
        w_thr: c.w_thr,
    }
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn df_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn df_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub unsafe extern "C" fn df_volume_config_default(out: *mut DfVolumeConfig) -> DfStatus {
    guard(|| {
        *deref_mut(out, "out")? = to_df_config(&VolumeConfig::default());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn df_photometric_config_default(out: *mut DfPhotometricConfig) -> DfStatus {
    guard(|| {
        let c = PhotometricConfig::default();
        *deref_mut(out, "out")? = DfPhotometricConfig {
            window_radius: c.window_radius as u32,
            sigma_mlm: c.sigma_mlm,
            min_disparity: c.min_disparity,
            max_disparity: c.max_disparity,
        };
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// per-frame uncertainty

/// Combined photometric confidence for every pixel with a finite disparity.
/// `left`, `right`, `disparity` and `out` hold `width * height` values.
#[no_mangle]
pub unsafe extern "C" fn df_confidence_map(
    left: *const f64,
    right: *const f64,
    disparity: *const f64,
    width: u32,
    height: u32,
    config: *const DfPhotometricConfig,
    out: *mut f64,
) -> DfStatus {
    guard(|| {
        let (w, h) = (width as usize, height as usize);
        let c = deref(config, "config")?;
        let cfg = PhotometricConfig {
            window_radius: c.window_radius as usize,
            sigma_mlm: c.sigma_mlm,
            min_disparity: c.min_disparity,
            max_disparity: c.max_disparity,
            ..PhotometricConfig::default()
        };
        let l = GrayImage::new(w, h, slice(left, w * h, "left")?.to_vec())?;
        let r = GrayImage::new(w, h, slice(right, w * h, "right")?.to_vec())?;
        let d = slice(disparity, w * h, "disparity")?;
        let d = ScalarMap::from_vec(w, h, d.iter().map(|x| x.is_finite().then_some(*x)).collect())?;
        let dst = slice_mut(out, w * h, "out")?;
        map_out(&compute_confidence_map(&l, &r, &d, &cfg)?, dst);
        Ok(())
    })
}

/// Geometric standard deviation for every pixel with a finite depth, using
/// `neighbors` points per local fit.
#[no_mangle]
pub unsafe extern "C" fn df_sigma_map(
    depth: *const f64,
    k: *const DfIntrinsics,
    neighbors: u32,
    sigma_floor: f64,
    out: *mut f64,
) -> DfStatus {
    guard(|| {
        let k = intrinsics(deref(k, "intrinsics")?)?;
        let cfg = GeometricConfig {
            neighbors: neighbors as usize,
            sigma_floor,
            ..GeometricConfig::default()
        };
        let depth = map_in(depth, &k, "depth")?;
        let dst = slice_mut(out, k.width * k.height, "out")?;
        map_out(&compute_sigma_map(&depth, &k, &cfg)?, dst);
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// inlier mapping

/// Trains a mapping from `n` confidences with 0/1 inlier labels.
#[no_mangle]
pub unsafe extern "C" fn df_mapping_train(
    confidence: *const f64,
    inlier: *const u8,
    n: usize,
    bins: u32,
    mapping: *mut *mut DfMapping,
) -> DfStatus {
    guard(|| {
        let c = slice(confidence, n, "confidence")?;
        let l = slice(inlier, n, "inlier")?;
        let samples: Vec<(f64, bool)> = c.iter().zip(l).map(|(&c, &l)| (c, l != 0)).collect();
        out(mapping, DfMapping(InlierMapping::train(&samples, bins as usize)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn df_mapping_load(path_: *const c_char, mapping: *mut *mut DfMapping) -> DfStatus {
    guard(|| out(mapping, DfMapping(InlierMapping::load(&path(path_)?)?)))
}

#[no_mangle]
pub unsafe extern "C" fn df_mapping_save(mapping: *const DfMapping, path_: *const c_char) -> DfStatus {
    guard(|| Ok(deref(mapping, "mapping")?.0.save(&path(path_)?)?))
}

#[no_mangle]
pub unsafe extern "C" fn df_mapping_inlier_probability(
    mapping: *const DfMapping,
    confidence: f64,
    out: *mut f64,
) -> DfStatus {
    guard(|| {
        *deref_mut(out, "out")? = deref(mapping, "mapping")?.0.inlier_probability(confidence);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn df_mapping_free(mapping: *mut DfMapping) {
    if !mapping.is_null() {
        drop(Box::from_raw(mapping));
    }
}

// ---------------------------------------------------------------------------
// volumes

#[no_mangle]
pub unsafe extern "C" fn df_volume_new(
    kind: DfVolumeKind,
    config: *const DfVolumeConfig,
    volume: *mut *mut DfVolume,
) -> DfStatus {
    guard(|| {
        let cfg = volume_config(deref(config, "config")?);
        let v = match kind {
            DfVolumeKind::Psdf => Volume::Psdf(PsdfVolume::new(cfg)?),
            DfVolumeKind::Tsdf => Volume::Tsdf(TsdfVolume::new(cfg)?),
        };
        out(volume, DfVolume(v))
    })
}

#[no_mangle]
pub unsafe extern "C" fn df_volume_load(path_: *const c_char, volume: *mut *mut DfVolume) -> DfStatus {
    guard(|| out(volume, DfVolume(Volume::load(&path(path_)?)?)))
}

#[no_mangle]
pub unsafe extern "C" fn df_volume_save(volume: *const DfVolume, path_: *const c_char) -> DfStatus {
    guard(|| Ok(deref(volume, "volume")?.0.save(&path(path_)?)?))
}

#[no_mangle]
pub unsafe extern "C" fn df_volume_free(volume: *mut DfVolume) {
    if !volume.is_null() {
        drop(Box::from_raw(volume));
    }
}

#[no_mangle]
pub unsafe extern "C" fn df_volume_kind(volume: *const DfVolume, kind: *mut DfVolumeKind) -> DfStatus {
    guard(|| {
        *deref_mut(kind, "kind")? = match deref(volume, "volume")?.0 {
            Volume::Psdf(_) => DfVolumeKind::Psdf,
            Volume::Tsdf(_) => DfVolumeKind::Tsdf,
        };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn df_volume_config(volume: *const DfVolume, config: *mut DfVolumeConfig) -> DfStatus {
    guard(|| {
        *deref_mut(config, "config")? = to_df_config(deref(volume, "volume")?.0.grid().config());
        Ok(())
    })
}

/// Number of voxels with at least one observation.
#[no_mangle]
pub unsafe extern "C" fn df_volume_observed_count(volume: *const DfVolume, count: *mut u64) -> DfStatus {
    guard(|| {
        let n = match &deref(volume, "volume")?.0 {
            Volume::Psdf(v) => v.observed_count(),
            Volume::Tsdf(v) => v.observed_count(),
        };
        *deref_mut(count, "count")? = n as u64;
        Ok(())
    })
}

/// Copies the fused signed distance of every voxel into `out` (x fastest,
/// then y, then z); NaN for unobserved voxels.
#[no_mangle]
pub unsafe extern "C" fn df_volume_sdf(volume: *const DfVolume, out: *mut f64, len: usize) -> DfStatus {
    guard(|| {
        let grid = deref(volume, "volume")?.0.grid();
        let n = grid.config().voxel_count();
        if len != n {
            return Err(invalid(format!("buffer holds {len} values, volume has {n} voxels")));
        }
        let dst = slice_mut(out, n, "out")?;
        for (i, d) in dst.iter_mut().enumerate() {
            *d = grid.sdf(i).unwrap_or(f64::NAN);
        }
        Ok(())
    })
}

/// Fuses one depth map into a TSDF volume.
#[no_mangle]
pub unsafe extern "C" fn df_volume_integrate_tsdf(
    volume: *mut DfVolume,
    k: *const DfIntrinsics,
    pose_: *const [f64; 16],
    depth: *const f64,
) -> DfStatus {
    guard(|| {
        let Volume::Tsdf(v) = &mut deref_mut(volume, "volume")?.0 else {
            return Err(Fail(DfStatus::WrongVolumeKind, "not a TSDF volume".into()));
        };
        let k = intrinsics(deref(k, "intrinsics")?)?;
        let pose = pose(deref(pose_, "pose")?)?;
        v.integrate(&k, &pose, &map_in(depth, &k, "depth")?)?;
        Ok(())
    })
}

/// Fuses one depth map into a PSDF volume with per-pixel inlier standard
/// deviation `tau` (mm) and inlier probability `inlier_prob`.
#[no_mangle]
pub unsafe extern "C" fn df_volume_integrate_psdf(
    volume: *mut DfVolume,
    k: *const DfIntrinsics,
    pose_: *const [f64; 16],
    depth: *const f64,
    tau: *const f64,
    inlier_prob: *const f64,
) -> DfStatus {
    guard(|| {
        let Volume::Psdf(v) = &mut deref_mut(volume, "volume")?.0 else {
            return Err(Fail(DfStatus::WrongVolumeKind, "not a PSDF volume".into()));
        };
        let k = intrinsics(deref(k, "intrinsics")?)?;
        let pose = pose(deref(pose_, "pose")?)?;
        let depth = map_in(depth, &k, "depth")?;
        let tau = map_in(tau, &k, "tau")?;
        let pi = map_in(inlier_prob, &k, "inlier_prob")?;
        v.integrate(&FrameObservations {
            intrinsics: &k,
            pose: &pose,
            depth: &depth,
            tau: &tau,
            inlier_prob: &pi,
        })?;
        Ok(())
    })
}

/// Resets TSDF voxels seen fewer than `w_thr` times.
#[no_mangle]
pub unsafe extern "C" fn df_volume_prune(volume: *mut DfVolume, w_thr: u32, removed: *mut u64) -> DfStatus {
    guard(|| {
        let Volume::Tsdf(v) = &mut deref_mut(volume, "volume")?.0 else {
            return Err(Fail(DfStatus::WrongVolumeKind, "not a TSDF volume".into()));
        };
        let n = v.prune(w_thr);
        if !removed.is_null() {
            *removed = n as u64;
        }
        Ok(())
    })
}

/// Zero-level mesh. PSDF volumes use the σ and π gates of their
/// configuration; TSDF volumes need `min_weight` observations at both ends
/// of a crossing edge.
#[no_mangle]
pub unsafe extern "C" fn df_volume_extract(volume: *const DfVolume, min_weight: u32, mesh: *mut *mut DfMesh) -> DfStatus {
    guard(|| {
        let m = match &deref(volume, "volume")?.0 {
            Volume::Psdf(v) => marching_cubes(v, &ExtractionGate::from_config(v.config())),
            Volume::Tsdf(v) => marching_cubes_tsdf(v, min_weight),
        };
        out(mesh, DfMesh(m))
    })
}

// ---------------------------------------------------------------------------
// meshes and metrics

#[no_mangle]
pub unsafe extern "C" fn df_mesh_load_ply(path_: *const c_char, mesh: *mut *mut DfMesh) -> DfStatus {
    guard(|| out(mesh, DfMesh(TriangleMesh::load_ply(&path(path_)?)?)))
}

/// Writes binary little-endian PLY, or ASCII when `ascii` is non-zero.
#[no_mangle]
pub unsafe extern "C" fn df_mesh_save_ply(mesh: *const DfMesh, path_: *const c_char, ascii: u8) -> DfStatus {
    guard(|| {
        let format = if ascii != 0 { PlyFormat::Ascii } else { PlyFormat::BinaryLittleEndian };
        Ok(deref(mesh, "mesh")?.0.save_ply(&path(path_)?, format)?)
    })
}

#[no_mangle]
pub unsafe extern "C" fn df_mesh_free(mesh: *mut DfMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

#[no_mangle]
pub unsafe extern "C" fn df_mesh_counts(mesh: *const DfMesh, vertices: *mut u64, triangles: *mut u64) -> DfStatus {
    guard(|| {
        let m = &deref(mesh, "mesh")?.0;
        *deref_mut(vertices, "vertices")? = m.vertices.len() as u64;
        *deref_mut(triangles, "triangles")? = m.triangles.len() as u64;
        Ok(())
    })
}

/// Copies vertex positions as `x, y, z` triples; `len` is the number of
/// doubles and must be three times the vertex count.
#[no_mangle]
pub unsafe extern "C" fn df_mesh_vertices(mesh: *const DfMesh, out: *mut f64, len: usize) -> DfStatus {
    guard(|| {
        let m = &deref(mesh, "mesh")?.0;
        if len != 3 * m.vertices.len() {
            return Err(invalid(format!("buffer holds {len} values, need {}", 3 * m.vertices.len())));
        }
        let dst = slice_mut(out, len, "out")?;
        for (d, v) in dst.chunks_exact_mut(3).zip(&m.vertices) {
            d.copy_from_slice(&[v.x, v.y, v.z]);
        }
        Ok(())
    })
}

/// Copies triangle vertex indices; `len` must be three times the triangle
/// count.
#[no_mangle]
pub unsafe extern "C" fn df_mesh_triangles(mesh: *const DfMesh, out: *mut u32, len: usize) -> DfStatus {
    guard(|| {
        let m = &deref(mesh, "mesh")?.0;
        if len != 3 * m.triangles.len() {
            return Err(invalid(format!("buffer holds {len} values, need {}", 3 * m.triangles.len())));
        }
        let dst = slice_mut(out, len, "out")?;
        for (d, t) in dst.chunks_exact_mut(3).zip(&m.triangles) {
            d.copy_from_slice(t);
        }
        Ok(())
    })
}

/// Compares a reconstruction with ground truth. `gt_labels` is either null
/// or one 0/1 byte per ground-truth vertex (1 = counts toward the metrics).
#[no_mangle]
pub unsafe extern "C" fn df_evaluate(
    reconstruction: *const DfMesh,
    ground_truth: *const DfMesh,
    inlier_threshold: f64,
    gt_labels: *const u8,
    report: *mut DfMetricReport,
) -> DfStatus {
    guard(|| {
        let rec = &deref(reconstruction, "reconstruction")?.0;
        let gt = &deref(ground_truth, "ground_truth")?.0;
        let mask: Option<Vec<bool>> = if gt_labels.is_null() {
            None
        } else {
            Some(slice(gt_labels, gt.vertices.len(), "gt_labels")?.iter().map(|&l| l != 0).collect())
        };
        let r = evaluate(rec, gt, inlier_threshold, mask.as_deref())?;
        *deref_mut(report, "report")? = DfMetricReport {
            mean_p2p: r.mean_p2p.unwrap_or(f64::NAN),
            outlier_pct: r.outlier_pct,
            completeness_pct: r.completeness_pct,
            n_inliers: r.counts.n_inliers as u64,
            n_outliers: r.counts.n_outliers as u64,
        };
        Ok(())
    })
}
