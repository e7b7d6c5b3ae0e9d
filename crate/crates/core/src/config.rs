//! Pipeline configuration, one TOML document for every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::extraction::ExtractionGate;
use crate::fusion::VolumeConfig;
use crate::geometric::GeometricConfig;
use crate::metrics::DEFAULT_INLIER_THRESHOLD;
use crate::photometric::PhotometricConfig;
use crate::synth::{AnalyticScene, DomeSpec, NoiseModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    #[default]
    Psdf,
    Tsdf,
    /// TSDF with voxels observed fewer than `w_thr` times removed.
    TsdfPruned,
}

impl FusionMode {
    pub fn name(self) -> &'static str {
        match self {
            FusionMode::Psdf => "psdf",
            FusionMode::Tsdf => "tsdf",
            FusionMode::TsdfPruned => "tsdf-pruned",
        }
    }
}

impl std::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "psdf" => Ok(FusionMode::Psdf),
            "tsdf" => Ok(FusionMode::Tsdf),
            "tsdf-pruned" | "tsdf_pruned" => Ok(FusionMode::TsdfPruned),
            _ => Err(Error::InvalidArgument(format!("unknown fusion mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenePreset {
    #[default]
    GlossyBin,
    Sphere,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub name: String,
    pub scene: ScenePreset,
    /// Analytic scene TOML replacing the preset.
    pub scene_file: Option<PathBuf>,
    pub scene_seed: u64,
    pub sphere_radius: f64,
    pub camera: CameraIntrinsics,
    pub trajectory: DomeSpec,
    pub noise: NoiseModel,
    pub pattern_seed: u64,
    pub gt_voxel_size: f64,
    /// Extra disparity margin around the rendered range, px.
    pub disparity_margin: i32,
    /// Padding of the fusion bounds around the scene, mm.
    pub bounds_margin: f64,
    /// Trajectory poses place the midpoint of the stereo rig rather than
    /// the left camera, so the look-at target appears in both images.
    pub rig_centered: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            name: "glossy-bin".into(),
            scene: ScenePreset::GlossyBin,
            scene_file: None,
            scene_seed: 0,
            sphere_radius: 50.0,
            camera: CameraIntrinsics {
                fx: 900.0,
                fy: 900.0,
                cx: 200.0,
                cy: 120.0,
                baseline: 80.0,
                width: 400,
                height: 240,
            },
            trajectory: DomeSpec::default(),
            noise: NoiseModel::default(),
            pattern_seed: 0,
            gt_voxel_size: 0.25,
            disparity_margin: 4,
            bounds_margin: 3.0,
            rig_centered: true,
        }
    }
}

impl SimulationConfig {
    pub fn resolve_scene(&self, base: &Path) -> Result<AnalyticScene> {
        match &self.scene_file {
            Some(p) => {
                let p = base.join(p);
                let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                AnalyticScene::from_toml(&text).map_err(|m| Error::format(&p, m))
            }
            None => Ok(match self.scene {
                ScenePreset::GlossyBin => AnalyticScene::glossy_bin(self.scene_seed),
                ScenePreset::Sphere => AnalyticScene::sphere(
                    nalgebra::Vector3::from(self.trajectory.center),
                    self.sphere_radius,
                    crate::synth::Material::Matte,
                ),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub bins: usize,
    /// A measured disparity is an inlier when within this many pixels of
    /// ground truth.
    pub inlier_disparity_px: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            bins: 10,
            inlier_disparity_px: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub mode: FusionMode,
    pub seed: u64,
    /// Inlier mapping for PSDF fusion.
    pub mapping: Option<PathBuf>,
    /// Overrides the dataset's disparity search range.
    pub disparity_range: Option<[i32; 2]>,
    /// Overrides the dataset's fusion bounds `[min, max]`, mm.
    pub bounds: Option<[[f64; 3]; 2]>,
    pub inlier_threshold: f64,
    pub photometric: PhotometricConfig,
    pub geometric: GeometricConfig,
    pub volume: VolumeConfig,
    pub training: TrainingConfig,
    pub simulate: SimulationConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: FusionMode::Psdf,
            seed: 0,
            mapping: None,
            disparity_range: None,
            bounds: None,
            inlier_threshold: DEFAULT_INLIER_THRESHOLD,
            photometric: PhotometricConfig::default(),
            geometric: GeometricConfig::default(),
            volume: VolumeConfig::default(),
            training: TrainingConfig::default(),
            simulate: SimulationConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.photometric.validate()?;
        self.geometric.validate()?;
        self.volume.validate()?;
        self.simulate.noise.validate()?;
        self.simulate.camera.validate()?;
        if !(self.inlier_threshold > 0.0) {
            return Err(Error::InvalidArgument("inlier_threshold must be positive".into()));
        }
        if self.training.bins == 0 || !(self.training.inlier_disparity_px > 0.0) {
            return Err(Error::InvalidArgument("training needs bins >= 1 and a positive inlier threshold".into()));
        }
        if let Some([lo, hi]) = self.disparity_range {
            if lo > hi || lo < 0 {
                return Err(Error::InvalidArgument("disparity_range must be ordered and non-negative".into()));
            }
        }
        Ok(())
    }

    pub fn gate(&self) -> ExtractionGate {
        ExtractionGate::from_config(&self.volume)
    }

    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        let c: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        c.validate().map_err(|e| e.to_string())?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|m| Error::format(path, m))
    }
}

/// Full default configuration with a comment on every setting. Values
/// marked "reference setting" are the published experimental constants.
pub fn annotated_template() -> String {
    let d = PipelineConfig::default();
    let v = &d.volume;
    let p = &d.photometric;
    let g = &d.geometric;
    let s = &d.simulate;
    let k = &s.camera;
    let t = &s.trajectory;
    let n = &s.noise;
    format!(
        r#"# depthfuse pipeline configuration. Every key is optional; omitted keys
# take the values shown here.

# Fusion method: "psdf", "tsdf" or "tsdf-pruned".
mode = "{mode}"
# Seed for every randomized step.
seed = {seed}
# Inlier mapping produced by `train-confidence`; required in psdf mode.
# mapping = "mapping.toml"
# Disparity search range [min, max] in px; defaults to the dataset's.
# disparity_range = [80, 120]
# Fusion bounds [[xmin, ymin, zmin], [xmax, ymax, zmax]] in mm; defaults to
# the dataset's, then to [volume] origin and dims.
# bounds = [[-47.0, -47.0, -7.0], [47.0, 47.0, 36.0]]
# Point-to-point inlier distance for the metrics, mm (reference setting).
inlier_threshold = {thr:?}

[photometric]
# Half-width of the square NCC window, px (our choice).
window_radius = {wr}
# Disparity uncertainty of the MLM softmax (our choice).
sigma_mlm = {smlm:?}
# Search range used when neither the config nor the dataset gives one.
min_disparity = {dmin}
max_disparity = {dmax}
# MLM normalization set: "all" hypotheses or "local-minima" (our choice).
candidates = "{cand}"

[geometric]
# Neighbors in each local quadratic fit (our choice).
neighbors = {nb}
# Lower bound on the per-point standard deviation, mm (our choice).
sigma_floor = {floor:?}
# "pooled" residual variance or the "center-contrast" form.
estimator = "{est}"

[volume]
# World position of voxel (0, 0, 0) and grid size; replaced by bounds.
origin = [{ox:?}, {oy:?}, {oz:?}]
dims = [{nx}, {ny}, {nz}]
# Voxel edge, mm (reference setting).
voxel_size = {vs:?}
# TSDF truncation distance, mm (reference setting).
truncation = {tr:?}
# Support of the uniform outlier density, mm (our choice).
f_min = {fmin:?}
f_max = {fmax:?}
# PSDF extraction gates: posterior std and inlier-probability (our choice).
sigma_thr = {sthr:?}
pi_thr = {pthr:?}
# Minimum observation count for tsdf-pruned (reference setting).
w_thr = {wthr}

[training]
# Confidence histogram bins on [0, 1] (our choice).
bins = {bins}
# Inlier label: |d - d_gt| <= this many px (our choice).
inlier_disparity_px = {idp:?}

[simulate]
name = "{name}"
# "glossy-bin" or "sphere"; scene_file (analytic scene TOML) overrides it.
scene = "{scene}"
scene_seed = {sseed}
sphere_radius = {srad:?}
pattern_seed = {pseed}
# Ground-truth mesh sampling step, mm.
gt_voxel_size = {gvs:?}
disparity_margin = {dm}
bounds_margin = {bm:?}
# Trajectory poses place the stereo rig midpoint instead of the left camera.
rig_centered = {rig}

[simulate.camera]
fx = {fx:?}
fy = {fy:?}
cx = {cx:?}
cy = {cy:?}
baseline = {bl:?}
width = {w}
height = {h}

[simulate.trajectory]
center = [{tcx:?}, {tcy:?}, {tcz:?}]
# Dome elevation, degrees, and camera distance, mm (reference setting).
elevation_deg = [{e0:?}, {e1:?}]
distance = [{d0:?}, {d1:?}]
count = {count}
seed = {tseed}

[simulate.noise]
# Depth noise std per material, mm; outliers uniform within +-outlier_range.
sigma_matte = {sm:?}
sigma_glossy = {sg:?}
outlier_prob = {op:?}
outlier_range = {or:?}
dropout_prob_glossy = {dp:?}
rng_seed = {rs}
"#,
        mode = d.mode.name(),
        seed = d.seed,
        thr = d.inlier_threshold,
        wr = p.window_radius,
        smlm = p.sigma_mlm,
        dmin = p.min_disparity,
        dmax = p.max_disparity,
        cand = match p.candidates {
            crate::photometric::MlmCandidates::All => "all",
            crate::photometric::MlmCandidates::LocalMinima => "local-minima",
        },
        nb = g.neighbors,
        floor = g.sigma_floor,
        est = match g.estimator {
            crate::geometric::VarianceEstimator::Pooled => "pooled",
            crate::geometric::VarianceEstimator::CenterContrast => "center-contrast",
        },
        ox = v.origin[0],
        oy = v.origin[1],
        oz = v.origin[2],
        nx = v.dims[0],
        ny = v.dims[1],
        nz = v.dims[2],
        vs = v.voxel_size,
        tr = v.truncation,
        fmin = v.f_min,
        fmax = v.f_max,
        sthr = v.sigma_thr,
        pthr = v.pi_thr,
        wthr = v.w_thr,
        bins = d.training.bins,
        idp = d.training.inlier_disparity_px,
        name = s.name,
        scene = match s.scene {
            ScenePreset::GlossyBin => "glossy-bin",
            ScenePreset::Sphere => "sphere",
        },
        sseed = s.scene_seed,
        srad = s.sphere_radius,
        pseed = s.pattern_seed,
        gvs = s.gt_voxel_size,
        dm = s.disparity_margin,
        bm = s.bounds_margin,
        rig = s.rig_centered,
        fx = k.fx,
        fy = k.fy,
        cx = k.cx,
        cy = k.cy,
        bl = k.baseline,
        w = k.width,
        h = k.height,
        tcx = t.center[0],
        tcy = t.center[1],
        tcz = t.center[2],
        e0 = t.elevation_deg[0],
        e1 = t.elevation_deg[1],
        d0 = t.distance[0],
        d1 = t.distance[1],
        count = t.count,
        tseed = t.seed,
        sm = n.sigma_matte,
        sg = n.sigma_glossy,
        op = n.outlier_prob,
        or = n.outlier_range,
        dp = n.dropout_prob_glossy,
        rs = n.rng_seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_parses_to_defaults() {
        let c = PipelineConfig::from_toml(&annotated_template()).unwrap();
        assert_eq!(c, PipelineConfig::default());
    }

    #[test]
    fn reference_defaults() {
        let c = PipelineConfig::default();
        assert_eq!(c.volume.voxel_size, 0.5);
        assert_eq!(c.volume.truncation, 1.5);
        assert_eq!(c.volume.w_thr, 3);
        assert_eq!(c.inlier_threshold, 2.0);
        assert_eq!(c.simulate.trajectory.elevation_deg, [45.0, 90.0]);
        assert_eq!(c.simulate.trajectory.distance, [400.0, 520.0]);
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let c = PipelineConfig::from_toml("mode = \"tsdf-pruned\"\n[volume]\nvoxel_size = 1.0\n").unwrap();
        assert_eq!(c.mode, FusionMode::TsdfPruned);
        assert_eq!(c.volume.voxel_size, 1.0);
        assert_eq!(c.volume.truncation, 1.5);
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn invalid_documents() {
        assert!(PipelineConfig::from_toml("mode = \"voxel\"").is_err());
        assert!(PipelineConfig::from_toml("[volume]\nvoxel_size = -1.0").is_err());
        assert!(PipelineConfig::from_toml("disparity_range = [10, 5]").is_err());
        assert!(PipelineConfig::from_toml("[geometric]\nneighbors = 3").is_err());
    }

    #[test]
    fn mode_names() {
        for m in [FusionMode::Psdf, FusionMode::Tsdf, FusionMode::TsdfPruned] {
            assert_eq!(m.name().parse::<FusionMode>().unwrap(), m);
        }
    }
}
