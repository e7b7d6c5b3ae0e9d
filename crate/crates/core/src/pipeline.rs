//! End-to-end commands built from the library modules. Each command reads
//! and writes on-disk artifacts so that stages compose from the shell.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::camera::{depth_to_disparity, Pose};
use crate::config::{FusionMode, PipelineConfig};
use crate::dataset::{self, load_dataset, Dataset, DatasetManifest, View};
use crate::error::{Error, Result};
use crate::extraction::{marching_cubes, marching_cubes_tsdf};
use crate::fusion::{integrate_frame, mad_sdf, mad_sdf_band, FrameStats, PsdfVolume, TsdfVolume, Volume, VolumeConfig};
use crate::geometric::compute_sigma_map;
use crate::mesh::{PlyFormat, TriangleMesh};
use crate::metrics::{evaluate, MetricReport};
use crate::photometric::{compute_confidence_map, InlierMapping, PhotometricConfig};
use crate::synth::{dome_trajectory, ground_truth_mesh, render_depth, render_stereo_pair, scene_sdf, AnalyticScene};

pub const MESH_FILE: &str = "mesh.ply";
pub const SNAPSHOT_FILE: &str = "volume.dfsnap";
pub const LOG_FILE: &str = "fuse_log.json";
pub const REPORT_FILE: &str = "report.json";
pub const SCENE_FILE: &str = "scene.toml";

/// Parses a view selection such as `0-9`, `0..10`, `3,5,7` or `all`
/// against a dataset of `n` views. Ranges with `-` are inclusive, `..`
/// exclusive. Duplicates are kept in order of appearance.
pub fn parse_views(spec: &str, n: usize) -> Result<Vec<usize>> {
    let bad = |m: String| Error::InvalidArgument(format!("view selection {spec:?}: {m}"));
    let spec = spec.trim();
    if spec.is_empty() || spec == "all" {
        return Ok((0..n).collect());
    }
    let num = |s: &str| s.trim().parse::<usize>().map_err(|e| bad(format!("{s:?}: {e}")));
    let mut out = Vec::new();
    for part in spec.split(',') {
        let (lo, hi) = if let Some((a, b)) = part.split_once("..") {
            let (a, b) = (num(a)?, num(b)?);
            if b <= a {
                return Err(bad(format!("empty range {part:?}")));
            }
            (a, b - 1)
        } else if let Some((a, b)) = part.split_once('-') {
            let (a, b) = (num(a)?, num(b)?);
            if b < a {
                return Err(bad(format!("empty range {part:?}")));
            }
            (a, b)
        } else {
            let a = num(part)?;
            (a, a)
        };
        if hi >= n {
            return Err(bad(format!("view {hi} out of range, dataset has {n}")));
        }
        out.extend(lo..=hi);
    }
    Ok(out)
}

/// Grid for a dataset: config bounds, then dataset bounds, then the
/// config's explicit origin and dims. Thresholds always come from the config.
pub fn resolve_volume(cfg: &PipelineConfig, ds: &Dataset) -> Result<VolumeConfig> {
    let v = cfg.volume;
    let out = match cfg.bounds.or(ds.manifest.bounds) {
        Some([lo, hi]) => VolumeConfig {
            origin: VolumeConfig::covering(lo.into(), hi.into(), v.voxel_size).origin,
            dims: VolumeConfig::covering(lo.into(), hi.into(), v.voxel_size).dims,
            ..v
        },
        None => v,
    };
    out.validate()?;
    Ok(out)
}

/// Photometric settings with the disparity search range resolved from the
/// config override or the dataset.
pub fn resolve_photometric(cfg: &PipelineConfig, ds: &Dataset) -> Result<PhotometricConfig> {
    let mut p = cfg.photometric;
    if let Some([lo, hi]) = cfg.disparity_range.or(ds.manifest.disparity_range) {
        p.min_disparity = lo;
        p.max_disparity = hi;
    }
    p.validate()?;
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViewLog {
    pub index: usize,
    pub id: String,
    pub updated: u64,
    pub skipped: u64,
    pub rejected: u64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuseOutput {
    pub volume: Volume,
    pub mesh: TriangleMesh,
    pub log: Vec<ViewLog>,
}

fn with_view<T>(id: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::View { .. } => e,
        e => Error::View {
            view: id.to_string(),
            source: Box::new(e),
        },
    })
}

fn require<T>(v: Option<T>, what: &str) -> Result<T> {
    v.ok_or_else(|| Error::InvalidArgument(format!("psdf fusion needs {what}")))
}

/// Per-view PSDF integration: confidence, σ map, fusion.
pub fn integrate_psdf_view(
    vol: &mut PsdfVolume,
    view: &View,
    photometric: &PhotometricConfig,
    cfg: &PipelineConfig,
    mapping: &InlierMapping,
) -> Result<FrameStats> {
    let depth = require(view.depth_map(), "a depth or disparity map")?;
    let disparity = require(view.disparity_map(), "a disparity map")?;
    let left = require(view.left.as_ref(), "a left image")?;
    let right = require(view.right.as_ref(), "a right image")?;
    let conf = compute_confidence_map(left, right, &disparity, photometric)?;
    let sigmas = compute_sigma_map(&depth, &view.intrinsics, &cfg.geometric)?;
    integrate_frame(vol, &view.intrinsics, &view.pose, &depth, &conf, &sigmas, mapping)
}

/// Fuses the selected views in order and extracts the mesh.
pub fn fuse_dataset(
    cfg: &PipelineConfig,
    ds: &Dataset,
    views: &[usize],
    mapping: Option<&InlierMapping>,
) -> Result<FuseOutput> {
    cfg.validate()?;
    let vcfg = resolve_volume(cfg, ds)?;
    let photometric = resolve_photometric(cfg, ds)?;
    let mut log = Vec::with_capacity(views.len());
    let mut volume = match cfg.mode {
        FusionMode::Psdf => {
            mapping.ok_or_else(|| {
                Error::InvalidArgument("psdf mode needs an inlier mapping (--mapping or `mapping` in the config)".into())
            })?;
            Volume::Psdf(PsdfVolume::new(vcfg)?)
        }
        FusionMode::Tsdf | FusionMode::TsdfPruned => Volume::Tsdf(TsdfVolume::new(vcfg)?),
    };
    for &i in views {
        let id = ds.manifest.views[i].id.clone();
        let start = Instant::now();
        let view = ds.load_view(i)?;
        let stats = with_view(
            &id,
            match &mut volume {
                Volume::Psdf(v) => integrate_psdf_view(v, &view, &photometric, cfg, mapping.expect("checked above")),
                Volume::Tsdf(v) => require(view.depth_map(), "a depth map").and_then(|d| v.integrate(&view.intrinsics, &view.pose, &d)),
            },
        )?;
        log.push(ViewLog {
            index: i,
            id,
            updated: stats.updated,
            skipped: stats.skipped,
            rejected: stats.rejected,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    let mesh = extract(cfg, &volume);
    Ok(FuseOutput { volume, mesh, log })
}

/// Mesh for the configured mode: gated PSDF, plain TSDF, or TSDF with the
/// observation-count threshold.
pub fn extract(cfg: &PipelineConfig, volume: &Volume) -> TriangleMesh {
    match (volume, cfg.mode) {
        (Volume::Psdf(v), _) => marching_cubes(v, &cfg.gate()),
        (Volume::Tsdf(v), FusionMode::TsdfPruned) => marching_cubes_tsdf(v, cfg.volume.w_thr),
        (Volume::Tsdf(v), _) => marching_cubes_tsdf(v, 1),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// `fuse`: writes `mesh.ply`, `volume.dfsnap` and `fuse_log.json` to `out`.
pub fn run_fuse(cfg: &PipelineConfig, dataset_dir: &Path, views: &str, out: &Path) -> Result<FuseOutput> {
    let ds = load_dataset(dataset_dir)?;
    let selection = parse_views(views, ds.len())?;
    let mapping = match (&cfg.mapping, cfg.mode) {
        (Some(p), FusionMode::Psdf) => Some(InlierMapping::load(p)?),
        _ => None,
    };
    let res = fuse_dataset(cfg, &ds, &selection, mapping.as_ref())?;
    create_dir(out)?;
    res.mesh.save_ply(&out.join(MESH_FILE), PlyFormat::BinaryLittleEndian)?;
    res.volume.save(&out.join(SNAPSHOT_FILE))?;
    let log = serde_json::json!({
        "mode": cfg.mode.name(),
        "views": res.log,
        "rejected_updates": match &res.volume { Volume::Psdf(v) => v.rejected_updates(), Volume::Tsdf(_) => 0 },
        "vertices": res.mesh.vertices.len(),
        "triangles": res.mesh.triangles.len(),
    });
    dataset::write_text(&out.join(LOG_FILE), &serde_json::to_string_pretty(&log).expect("log serializes"))?;
    Ok(res)
}

/// `eval`: metrics of a reconstruction against ground truth, optionally
/// restricted by per-vertex ground-truth labels. Writes `report` if given.
pub fn run_eval(rec: &Path, gt: &Path, threshold: f64, labels: Option<&Path>, report: Option<&Path>) -> Result<MetricReport> {
    let rec = TriangleMesh::load_ply(rec)?;
    let gt = TriangleMesh::load_ply(gt)?;
    let mask = labels.map(dataset::read_labels).transpose()?;
    let r = evaluate(&rec, &gt, threshold, mask.as_deref())?;
    if let Some(p) = report {
        dataset::write_text(p, &r.to_json())?;
    }
    Ok(r)
}

/// `mad`: mean absolute SDF error of a snapshot against an analytic scene,
/// over every observed voxel or, with `band`, over those within `band` of
/// the surface.
pub fn run_mad(snapshot: &Path, scene: &Path, band: Option<f64>) -> Result<f64> {
    let vol = Volume::load(snapshot)?;
    let text = std::fs::read_to_string(scene).map_err(|e| Error::io(scene, e))?;
    let scene = AnalyticScene::from_toml(&text).map_err(|m| Error::format(scene, m))?;
    match band {
        Some(band) => mad_sdf_band(vol.grid(), |p| scene_sdf(&scene, p), band),
        None => mad_sdf(vol.grid(), |p| scene_sdf(&scene, p), None),
    }
}

/// Renders one dataset view with measured and ground-truth maps. Like a
/// real stereo sensor, measured depth is only reported where the right
/// camera sees the same surface point inside its image.
pub fn simulate_view(
    cfg: &PipelineConfig,
    scene: &AnalyticScene,
    pose: &Pose,
    index: usize,
) -> Result<View> {
    let s = &cfg.simulate;
    let k = s.camera;
    let depth = render_depth(scene, pose, &k, &s.noise, index as u64)?;
    let stereo = render_stereo_pair(scene, pose, &k, s.pattern_seed, index as u64)?;
    let mut measured = depth.measured;
    for (i, z) in measured.values_mut().iter_mut().enumerate() {
        let x = (i % k.width) as f64;
        match stereo.disparity.values()[i] {
            Some(d) if x - d >= 0.0 => {}
            _ => *z = None,
        }
    }
    Ok(View {
        id: format!("{index:03}"),
        intrinsics: k,
        pose: *pose,
        left: Some(stereo.left),
        right: Some(stereo.right),
        disparity: Some(depth_to_disparity(&measured, &k)),
        depth: Some(measured),
        gt_depth: Some(depth.ground_truth),
        gt_disparity: Some(stereo.disparity),
    })
}

/// `simulate`: renders the configured scene along the dome trajectory and
/// writes a dataset to `out`. Relative scene files resolve against `base`.
pub fn run_simulate(cfg: &PipelineConfig, base: &Path, out: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    let s = &cfg.simulate;
    let scene = s.resolve_scene(base)?;
    scene.validate()?;
    let mut poses = dome_trajectory(&s.trajectory)?;
    if s.rig_centered {
        let half = Pose::from_translation(nalgebra::Vector3::new(-0.5 * s.camera.baseline, 0.0, 0.0));
        poses = poses.iter().map(|p| p.compose(&half)).collect();
    }
    create_dir(out)?;
    let mut manifest = DatasetManifest::new(s.name.clone());
    dataset::write_intrinsics(&out.join(&manifest.intrinsics), &s.camera)?;
    let (mut dmin, mut dmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for (i, pose) in poses.iter().enumerate() {
        let view = simulate_view(cfg, &scene, pose, i)?;
        for d in view.gt_disparity.iter().flat_map(|m| m.values().iter().flatten()) {
            dmin = dmin.min(*d);
            dmax = dmax.max(*d);
        }
        manifest.views.push(dataset::write_view(out, &view)?);
    }
    if dmin.is_finite() {
        manifest.disparity_range = Some([
            (dmin.floor() as i32 - s.disparity_margin).max(0),
            dmax.ceil() as i32 + s.disparity_margin,
        ]);
    }
    if let Some((lo, hi)) = scene.bounds() {
        let m = s.bounds_margin;
        manifest.bounds = Some([[lo.x - m, lo.y - m, lo.z - m], [hi.x + m, hi.y + m, hi.z + m]]);
    }
    let (gt, labels) = ground_truth_mesh(&scene, s.gt_voxel_size)?;
    let gt_rel = PathBuf::from("gt_mesh.ply");
    gt.save_ply(&out.join(&gt_rel), PlyFormat::BinaryLittleEndian)?;
    let labels_rel = PathBuf::from("gt_labels.txt");
    dataset::write_labels(&out.join(&labels_rel), &labels)?;
    dataset::write_text(&out.join(SCENE_FILE), &scene.to_toml())?;
    manifest.gt_mesh = Some(gt_rel);
    manifest.gt_labels = Some(labels_rel);
    manifest.scene = Some(SCENE_FILE.into());
    manifest.save(out)?;
    Ok(manifest)
}

/// Labelled `(confidence, inlier)` samples from every view with ground truth.
pub fn confidence_samples(cfg: &PipelineConfig, ds: &Dataset) -> Result<Vec<(f64, bool)>> {
    let photometric = resolve_photometric(cfg, ds)?;
    let thr = cfg.training.inlier_disparity_px;
    let mut samples = Vec::new();
    for i in 0..ds.len() {
        let view = ds.load_view(i)?;
        let id = view.id.clone();
        let gt = match (&view.gt_disparity, &view.gt_depth) {
            (Some(d), _) => d.clone(),
            (None, Some(z)) => depth_to_disparity(z, &view.intrinsics),
            (None, None) => continue,
        };
        let (Some(left), Some(right), Some(disp)) = (&view.left, &view.right, view.disparity_map()) else {
            continue;
        };
        let conf = with_view(&id, compute_confidence_map(left, right, &disp, &photometric))?;
        for ((c, d), g) in conf.values().iter().zip(disp.values()).zip(gt.values()) {
            if let (Some(c), Some(d), Some(g)) = (c, d, g) {
                samples.push((*c, (d - g).abs() <= thr));
            }
        }
    }
    Ok(samples)
}

/// `train-confidence`: fits the inlier mapping and writes it to `out`.
pub fn run_train_confidence(cfg: &PipelineConfig, dataset_dir: &Path, out: &Path) -> Result<InlierMapping> {
    cfg.validate()?;
    let ds = load_dataset(dataset_dir)?;
    if !ds.has_gt_disparity() {
        return Err(Error::CannotTrain("dataset has no ground-truth disparity or depth".into()));
    }
    let samples = confidence_samples(cfg, &ds)?;
    let mapping = InlierMapping::train(&samples, cfg.training.bins)?;
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            create_dir(dir)?;
        }
    }
    mapping.save(out)?;
    Ok(mapping)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn view_selections() {
        assert_eq!(parse_views("all", 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_views("", 2).unwrap(), vec![0, 1]);
        assert_eq!(parse_views("0-2", 5).unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_views("0..2", 5).unwrap(), vec![0, 1]);
        assert_eq!(parse_views("4,1-2", 5).unwrap(), vec![4, 1, 2]);
        assert!(parse_views("0-5", 5).is_err());
        assert!(parse_views("3..3", 5).is_err());
        assert!(parse_views("x", 5).is_err());
    }
}
