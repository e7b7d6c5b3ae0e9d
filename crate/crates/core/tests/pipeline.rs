use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use depthfuse::camera::{CameraIntrinsics, Pose, ScalarMap};
use depthfuse::config::{FusionMode, PipelineConfig, ScenePreset};
use depthfuse::dataset::{self, load_dataset, read_depth_png, write_depth_png};
use depthfuse::fusion::{FrameObservations, PsdfVolume, Volume, VolumeConfig};
use depthfuse::mesh::TriangleMesh;
use depthfuse::metrics::evaluate;
use depthfuse::pipeline::{
    run_eval, run_fuse, run_mad, run_simulate, run_train_confidence, MESH_FILE, SCENE_FILE, SNAPSHOT_FILE,
};
use depthfuse::Error;

/// A small noisy sphere dataset shared by the tests below.
fn sphere() -> &'static (PipelineConfig, PathBuf) {
    static DS: OnceLock<(PipelineConfig, PathBuf)> = OnceLock::new();
    DS.get_or_init(|| {
        let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join("pipeline-sphere");
        if root.exists() {
            std::fs::remove_dir_all(&root).unwrap();
        }
        let mut cfg = PipelineConfig::default();
        cfg.simulate.scene = ScenePreset::Sphere;
        cfg.simulate.sphere_radius = 30.0;
        cfg.simulate.trajectory.count = 5;
        cfg.volume.voxel_size = 1.0;
        run_simulate(&cfg, Path::new(""), &root).unwrap();
        (cfg, root)
    })
}

fn tmp(name: &str) -> PathBuf {
    let d = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    if d.exists() {
        std::fs::remove_dir_all(&d).unwrap();
    }
    std::fs::create_dir_all(&d).unwrap();
    d
}

#[test]
fn simulated_dataset_loads_and_round_trips() {
    let (_, root) = sphere();
    let ds = load_dataset(root).unwrap();
    assert_eq!(ds.len(), 5);
    assert!(ds.has_gt_disparity());
    let view = ds.load_view(2).unwrap();
    let depth = view.depth.clone().unwrap();
    assert_eq!(depth.dims(), ds.intrinsics.dims());
    assert!(depth.valid_count() > 1000);

    let out = tmp("roundtrip");
    write_depth_png(&out.join("d.png"), &depth).unwrap();
    let back = read_depth_png(&out.join("d.png")).unwrap();
    assert_eq!(back, depth);

    let copy = out.join("ds");
    let mut manifest = ds.manifest.clone();
    manifest.views.clear();
    for i in 0..ds.len() {
        manifest.views.push(dataset::write_view(&copy, &ds.load_view(i).unwrap()).unwrap());
    }
    dataset::write_intrinsics(&copy.join(&manifest.intrinsics), &ds.intrinsics).unwrap();
    for f in [&manifest.gt_mesh, &manifest.gt_labels, &manifest.scene].into_iter().flatten() {
        std::fs::copy(root.join(f), copy.join(f)).unwrap();
    }
    manifest.save(&copy).unwrap();
    let ds2 = load_dataset(&copy).unwrap();
    for i in 0..ds.len() {
        assert_eq!(ds2.load_view(i).unwrap(), ds.load_view(i).unwrap());
    }
}

#[test]
fn missing_files_are_reported_by_path() {
    let dir = tmp("missing");
    let err = load_dataset(&dir.join("nope")).unwrap_err();
    assert!(matches!(err, Error::MissingFile(_)), "{err}");
    assert_eq!(err.exit_code(), 3);

    // manifest present, one view file gone
    let (_, root) = sphere();
    let copy = dir.join("ds");
    copy_tree(root, &copy);
    let ds = load_dataset(&copy);
    let rec = ds.as_ref().map(|d| d.manifest.views[0].depth.clone().unwrap()).unwrap();
    std::fs::remove_file(copy.join(&rec)).unwrap();
    let err = load_dataset(&copy).and_then(|d| d.load_view(0).map(|_| ())).unwrap_err();
    assert!(err.to_string().contains(rec.file_name().unwrap().to_str().unwrap()), "{err}");
    assert_eq!(err.exit_code(), 3);
}

fn copy_tree(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for e in std::fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        let dst = to.join(e.file_name());
        if e.file_type().unwrap().is_dir() {
            copy_tree(&e.path(), &dst);
        } else {
            std::fs::copy(e.path(), dst).unwrap();
        }
    }
}

/// With π = 1 everywhere and a constant τ, the fused mean is the
/// precision-weighted average of the prior and the observations.
#[test]
fn certain_inliers_give_the_streaming_average() {
    let k = CameraIntrinsics::new(300.0, 300.0, 15.5, 11.5, 50.0, 32, 24).unwrap();
    let cfg = VolumeConfig {
        origin: [-2.0, -2.0, 200.0],
        voxel_size: 1.0,
        dims: [5, 5, 5],
        ..VolumeConfig::default()
    };
    let mut vol = PsdfVolume::new(cfg).unwrap();
    let (w, h) = k.dims();
    let tau = 0.4;
    let depths = [202.3, 201.9, 202.6, 202.1, 201.7];
    for z in depths {
        let depth = ScalarMap::from_fn(w, h, |_, _| Some(z));
        vol.integrate(&FrameObservations {
            intrinsics: &k,
            pose: &Pose::identity(),
            depth: &depth,
            tau: &ScalarMap::from_fn(w, h, |_, _| Some(tau)),
            inlier_prob: &ScalarMap::from_fn(w, h, |_, _| Some(1.0)),
        })
        .unwrap();
    }
    let prior = cfg.f_max * cfg.f_max;
    for iz in 0..5 {
        // the central voxel column sits on the optical axis, so F is depth − z
        let v = vol.voxel(2, 2, iz);
        let zc = cfg.center(2, 2, iz).z;
        let precision = 1.0 / prior + depths.len() as f64 / (tau * tau);
        let expected = depths.iter().map(|d| (d - zc) / (tau * tau)).sum::<f64>() / precision;
        assert!((v.mu - expected).abs() < 1e-6, "voxel {iz}: {} vs {expected}", v.mu);
        assert!((v.sigma2 - 1.0 / precision).abs() < 1e-9);
    }
}

#[test]
fn eval_from_files_matches_in_memory() {
    let (cfg, root) = sphere();
    let out = tmp("eval-files");
    let c = PipelineConfig { mode: FusionMode::Tsdf, ..cfg.clone() };
    let fused = run_fuse(&c, root, "all", &out).unwrap();
    let ds = load_dataset(root).unwrap();
    let gt_path = ds.gt_mesh_path().unwrap();
    let gt = TriangleMesh::load_ply(&gt_path).unwrap();
    let mem = evaluate(&fused.mesh, &gt, 0.5, None).unwrap();
    let report = out.join("report.json");
    let file = run_eval(&out.join(MESH_FILE), &gt_path, 0.5, None, Some(&report)).unwrap();
    assert_eq!(mem, file);
    assert!(std::fs::read_to_string(&report).unwrap().contains("completeness_pct"));
    // five upper-hemisphere views of a 30 mm sphere
    assert!(file.mean_p2p.unwrap() < 0.5, "{file:?}");
    assert!(file.completeness_pct > 30.0, "{file:?}");

    let snap = Volume::load(&out.join(SNAPSHOT_FILE)).unwrap();
    assert_eq!(&snap, &fused.volume);
    let mad = run_mad(&out.join(SNAPSHOT_FILE), &root.join(SCENE_FILE), Some(1.5)).unwrap();
    assert!(mad < 0.5, "{mad}");
}

#[test]
fn training_is_deterministic_and_needs_ground_truth() {
    let (cfg, root) = sphere();
    let out = tmp("train");
    let a = run_train_confidence(cfg, root, &out.join("a.toml")).unwrap();
    let b = run_train_confidence(cfg, root, &out.join("b.toml")).unwrap();
    assert_eq!(a, b);
    assert_eq!(std::fs::read(out.join("a.toml")).unwrap(), std::fs::read(out.join("b.toml")).unwrap());

    let copy = out.join("no-gt");
    copy_tree(root, &copy);
    let mut ds = load_dataset(&copy).unwrap();
    for v in &mut ds.manifest.views {
        v.gt_depth = None;
        v.gt_disparity = None;
    }
    ds.manifest.save(&copy).unwrap();
    let err = run_train_confidence(cfg, &copy, &out.join("c.toml")).unwrap_err();
    assert!(matches!(err, Error::CannotTrain(_)), "{err}");
}

#[test]
fn psdf_fuse_uses_the_trained_mapping() {
    let (cfg, root) = sphere();
    let out = tmp("psdf");
    let mapping = out.join("mapping.toml");
    run_train_confidence(cfg, root, &mapping).unwrap();
    let no_mapping = PipelineConfig { mode: FusionMode::Psdf, ..cfg.clone() };
    assert!(matches!(run_fuse(&no_mapping, root, "all", &out).unwrap_err(), Error::InvalidArgument(_)));
    let c = PipelineConfig { mapping: Some(mapping), ..no_mapping };
    let res = run_fuse(&c, root, "0-4", &out).unwrap();
    assert_eq!(res.log.len(), 5);
    assert!(res.log.iter().all(|l| l.updated > 0));
    let Volume::Psdf(v) = &res.volume else { panic!("expected a psdf volume") };
    assert!(v.observed_count() > 0);
}

fn cli(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_depthfuse")).args(args).current_dir(cwd).output().unwrap()
}

#[test]
fn cli_exit_codes() {
    let dir = tmp("cli");
    let out = cli(&["fuse", "--dataset", "absent", "--out", "o"], &dir);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let out = cli(&["--threads", "0", "config", "init"], &dir);
    assert_eq!(out.status.code(), Some(2));
    let out = cli(&["fuse", "--dataset", "x", "--out", "o", "--mode", "bogus"], &dir);
    assert!(!out.status.success());
}

#[test]
fn cli_config_template_loads() {
    let dir = tmp("cli-config");
    let out = cli(&["config", "init", "--out", "cfg.toml"], &dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = PipelineConfig::load(&dir.join("cfg.toml")).unwrap();
    assert_eq!(cfg, PipelineConfig::default());
}
