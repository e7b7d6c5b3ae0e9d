//! On-disk dataset layout: manifest, intrinsics, poses and 16-bit maps.
//!
//! See `docs/FORMATS.md` for the byte-level description.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, DepthMap, DisparityMap, GrayImage, Pose, ScalarMap};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const FORMAT_TAG: &str = "depthfuse-dataset";
pub const FORMAT_VERSION: u32 = 1;
/// Millimetres per depth PNG unit.
pub const DEPTH_SCALE_MM: f64 = 0.1;
/// Pixels per disparity PNG unit.
pub const DISPARITY_SCALE_PX: f64 = 1.0 / 64.0;
/// Orthonormality tolerance for pose files.
pub const POSE_TOL: f64 = 1e-6;

fn write_png16(path: &Path, width: usize, height: usize, data: &[u16]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(f), width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Sixteen);
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_be_bytes()).collect();
    let mut w = enc.write_header().map_err(|e| Error::format(path, e.to_string()))?;
    w.write_image_data(&bytes).map_err(|e| Error::format(path, e.to_string()))?;
    w.finish().map_err(|e| Error::format(path, e.to_string()))
}

fn write_png8(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(f), width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| Error::format(path, e.to_string()))?;
    w.write_image_data(data).map_err(|e| Error::format(path, e.to_string()))?;
    w.finish().map_err(|e| Error::format(path, e.to_string()))
}

/// Grayscale PNG samples widened to u16, with the bit depth.
fn read_png_gray(path: &Path) -> Result<(usize, usize, Vec<u16>, u8)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let dec = png::Decoder::new(BufReader::new(f));
    let mut reader = dec.read_info().map_err(|e| Error::format(path, e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::format(path, e.to_string()))?;
    if info.color_type != png::ColorType::Grayscale {
        return Err(Error::format(path, format!("expected grayscale, found {:?}", info.color_type)));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let buf = &buf[..info.buffer_size()];
    let data: Vec<u16> = match info.bit_depth {
        png::BitDepth::Eight => buf.iter().map(|&b| b as u16).collect(),
        png::BitDepth::Sixteen => buf.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect(),
        d => return Err(Error::format(path, format!("unsupported bit depth {d:?}"))),
    };
    Ok((w, h, data, if info.bit_depth == png::BitDepth::Eight { 8 } else { 16 }))
}

fn encode_scaled(map: &ScalarMap, scale: f64, path: &Path) -> Result<Vec<u16>> {
    map.values()
        .iter()
        .map(|v| match v {
            None => Ok(0),
            Some(v) => {
                let q = (v / scale).round();
                if (1.0..=65535.0).contains(&q) {
                    Ok(q as u16)
                } else {
                    Err(Error::InvalidArgument(format!(
                        "value {v} does not fit the 16-bit encoding of {}",
                        path.display()
                    )))
                }
            }
        })
        .collect()
}

fn read_scaled(path: &Path, scale: f64) -> Result<ScalarMap> {
    let (w, h, data, bits) = read_png_gray(path)?;
    if bits != 16 {
        return Err(Error::format(path, "expected a 16-bit map"));
    }
    ScalarMap::from_vec(w, h, data.iter().map(|&v| (v != 0).then(|| v as f64 * scale)).collect())
}

/// 16-bit PNG, 0.1 mm per unit, 0 marks invalid.
pub fn write_depth_png(path: &Path, depth: &DepthMap) -> Result<()> {
    let data = encode_scaled(depth, DEPTH_SCALE_MM, path)?;
    write_png16(path, depth.width(), depth.height(), &data)
}

pub fn read_depth_png(path: &Path) -> Result<DepthMap> {
    read_scaled(path, DEPTH_SCALE_MM)
}

/// 16-bit PNG, 1/64 px per unit, 0 marks invalid.
pub fn write_disparity_png(path: &Path, disparity: &DisparityMap) -> Result<()> {
    let data = encode_scaled(disparity, DISPARITY_SCALE_PX, path)?;
    write_png16(path, disparity.width(), disparity.height(), &data)
}

pub fn read_disparity_png(path: &Path) -> Result<DisparityMap> {
    read_scaled(path, DISPARITY_SCALE_PX)
}

/// 8-bit PNG; intensities in `[0, 1]` are rounded to 1/255 steps.
pub fn write_gray_png(path: &Path, img: &GrayImage) -> Result<()> {
    let data: Vec<u8> = img.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    write_png8(path, img.width, img.height, &data)
}

/// Reads 8- or 16-bit grayscale, normalized to `[0, 1]`.
pub fn read_gray_png(path: &Path) -> Result<GrayImage> {
    let (w, h, data, bits) = read_png_gray(path)?;
    let max = if bits == 8 { 255.0 } else { 65535.0 };
    GrayImage::new(w, h, data.iter().map(|&v| v as f64 / max).collect())
}

/// Pose as four whitespace-separated rows of a 4×4 world-from-camera matrix.
pub fn format_pose(pose: &Pose) -> String {
    let m = pose.to_matrix();
    let mut s = String::new();
    for r in 0..4 {
        let row: Vec<String> = (0..4).map(|c| format!("{:?}", m[(r, c)])).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn parse_pose(text: &str) -> std::result::Result<Pose, String> {
    let nums: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| format!("bad number {t:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    if nums.len() != 16 {
        return Err(format!("expected 16 numbers, found {}", nums.len()));
    }
    let m = Matrix4::from_row_slice(&nums);
    if (m.row(3) - nalgebra::RowVector4::new(0.0, 0.0, 0.0, 1.0)).amax() > POSE_TOL {
        return Err("last row must be 0 0 0 1".into());
    }
    Pose::from_matrix(&m, POSE_TOL).map_err(|e| e.to_string())
}

pub fn write_pose(path: &Path, pose: &Pose) -> Result<()> {
    std::fs::write(path, format_pose(pose)).map_err(|e| Error::io(path, e))
}

pub fn read_pose(path: &Path) -> Result<Pose> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pose(&text).map_err(|msg| Error::Validation {
        path: path.to_path_buf(),
        msg,
    })
}

pub fn write_intrinsics(path: &Path, k: &CameraIntrinsics) -> Result<()> {
    let text = toml::to_string(k).expect("intrinsics serialize");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let k: CameraIntrinsics = toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    k.validate().map_err(|e| Error::Validation {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    Ok(k)
}

/// One `0`/`1` per line: whether a ground-truth vertex belongs to an object.
pub fn write_labels(path: &Path, labels: &[bool]) -> Result<()> {
    let mut s = String::with_capacity(labels.len() * 2);
    for l in labels {
        s.push(if *l { '1' } else { '0' });
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<Vec<bool>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| match l.trim() {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(Error::format(path, format!("bad label {other:?}"))),
        })
        .collect()
}

/// Per-view file references, relative to the dataset root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub id: String,
    pub pose: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disparity: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_depth: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_disparity: Option<PathBuf>,
}

impl ViewRecord {
    fn files(&self) -> impl Iterator<Item = &PathBuf> {
        std::iter::once(&self.pose).chain(
            [
                &self.intrinsics,
                &self.left,
                &self.right,
                &self.depth,
                &self.disparity,
                &self.gt_depth,
                &self.gt_disparity,
            ]
            .into_iter()
            .flatten(),
        )
    }
}

/// Contents of `manifest.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub name: String,
    pub units: String,
    pub intrinsics: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disparity_range: Option<[i32; 2]>,
    /// Region to fuse, `[min, max]` corners in mm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<[[f64; 3]; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_mesh: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<PathBuf>,
    pub views: Vec<ViewRecord>,
}

impl DatasetManifest {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            format: FORMAT_TAG.into(),
            version: FORMAT_VERSION,
            name: name.into(),
            units: "mm".into(),
            intrinsics: "intrinsics.toml".into(),
            disparity_range: None,
            bounds: None,
            gt_mesh: None,
            gt_labels: None,
            scene: None,
            views: Vec::new(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        let path = root.join(MANIFEST_FILE);
        std::fs::write(&path, self.to_toml()).map_err(|e| Error::io(path, e))
    }
}

/// A validated dataset rooted at a directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub intrinsics: CameraIntrinsics,
}

/// All maps of one view, loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub id: String,
    pub intrinsics: CameraIntrinsics,
    pub pose: Pose,
    pub left: Option<GrayImage>,
    pub right: Option<GrayImage>,
    pub depth: Option<DepthMap>,
    pub disparity: Option<DisparityMap>,
    pub gt_depth: Option<DepthMap>,
    pub gt_disparity: Option<DisparityMap>,
}

impl View {
    /// Measured depth, or depth converted from the measured disparity.
    pub fn depth_map(&self) -> Option<DepthMap> {
        self.depth
            .clone()
            .or_else(|| self.disparity.as_ref().map(|d| crate::camera::disparity_to_depth(d, &self.intrinsics)))
    }

    /// Measured disparity, or disparity converted from the measured depth.
    pub fn disparity_map(&self) -> Option<DisparityMap> {
        self.disparity
            .clone()
            .or_else(|| self.depth.as_ref().map(|d| crate::camera::depth_to_disparity(d, &self.intrinsics)))
    }
}

/// Parses and validates `root/manifest.toml`: every referenced file must
/// exist, units must be millimetres, intrinsics and poses must be valid.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let mpath = root.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: DatasetManifest = toml::from_str(&text).map_err(|e| Error::format(&mpath, e.to_string()))?;
    if manifest.format != FORMAT_TAG || manifest.version != FORMAT_VERSION {
        return Err(Error::format(
            &mpath,
            format!("unsupported format {:?} version {}", manifest.format, manifest.version),
        ));
    }
    if manifest.units != "mm" {
        return Err(Error::Units {
            found: manifest.units.clone(),
        });
    }
    if manifest.views.is_empty() {
        return Err(Error::Validation {
            path: mpath,
            msg: "no views".into(),
        });
    }
    if let Some([lo, hi]) = manifest.disparity_range {
        if lo > hi {
            return Err(Error::Validation {
                path: mpath,
                msg: "disparity_range must be ordered".into(),
            });
        }
    }
    let extra = [&manifest.gt_mesh, &manifest.gt_labels, &manifest.scene];
    for rel in std::iter::once(&manifest.intrinsics)
        .chain(extra.into_iter().flatten())
        .chain(manifest.views.iter().flat_map(ViewRecord::files))
    {
        let p = root.join(rel);
        if !p.is_file() {
            return Err(Error::MissingFile(p));
        }
    }
    let mut ids = std::collections::HashSet::new();
    for v in &manifest.views {
        if !ids.insert(&v.id) {
            return Err(Error::Validation {
                path: mpath,
                msg: format!("duplicate view id {:?}", v.id),
            });
        }
        if v.depth.is_none() && v.disparity.is_none() {
            return Err(Error::Validation {
                path: mpath,
                msg: format!("view {:?} has neither depth nor disparity", v.id),
            });
        }
        read_pose(&root.join(&v.pose))?;
        if let Some(k) = &v.intrinsics {
            read_intrinsics(&root.join(k))?;
        }
    }
    let intrinsics = read_intrinsics(&root.join(&manifest.intrinsics))?;
    Ok(Dataset {
        root: root.to_path_buf(),
        manifest,
        intrinsics,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.manifest.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.views.is_empty()
    }

    pub fn path(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    pub fn gt_mesh_path(&self) -> Option<PathBuf> {
        self.manifest.gt_mesh.as_ref().map(|p| self.path(p))
    }

    pub fn gt_labels(&self) -> Result<Option<Vec<bool>>> {
        self.manifest.gt_labels.as_ref().map(|p| read_labels(&self.path(p))).transpose()
    }

    pub fn has_gt_disparity(&self) -> bool {
        self.manifest
            .views
            .iter()
            .any(|v| v.gt_disparity.is_some() || v.gt_depth.is_some())
    }

    /// Loads view `index` and checks every map against its intrinsics.
    pub fn load_view(&self, index: usize) -> Result<View> {
        let rec = &self.manifest.views[index];
        let wrap = |e: Error| Error::View {
            view: rec.id.clone(),
            source: Box::new(e),
        };
        let load = || -> Result<View> {
            let intrinsics = match &rec.intrinsics {
                Some(p) => read_intrinsics(&self.path(p))?,
                None => self.intrinsics,
            };
            let dims = intrinsics.dims();
            let gray = |p: &Option<PathBuf>, what: &'static str| -> Result<Option<GrayImage>> {
                let Some(p) = p else { return Ok(None) };
                let img = read_gray_png(&self.path(p))?;
                if img.dims() != dims {
                    return Err(Error::ShapeMismatch {
                        what,
                        expected: dims,
                        found: img.dims(),
                    });
                }
                Ok(Some(img))
            };
            let map = |p: &Option<PathBuf>, what: &'static str, depth: bool| -> Result<Option<ScalarMap>> {
                let Some(p) = p else { return Ok(None) };
                let m = if depth {
                    read_depth_png(&self.path(p))?
                } else {
                    read_disparity_png(&self.path(p))?
                };
                m.ensure_dims(what, dims)?;
                Ok(Some(m))
            };
            Ok(View {
                id: rec.id.clone(),
                intrinsics,
                pose: read_pose(&self.path(&rec.pose))?,
                left: gray(&rec.left, "left image")?,
                right: gray(&rec.right, "right image")?,
                depth: map(&rec.depth, "depth map", true)?,
                disparity: map(&rec.disparity, "disparity map", false)?,
                gt_depth: map(&rec.gt_depth, "ground-truth depth", true)?,
                gt_disparity: map(&rec.gt_disparity, "ground-truth disparity", false)?,
            })
        };
        load().map_err(wrap)
    }
}

/// Writes view files under `root/views/<id>/` and returns the record.
pub fn write_view(root: &Path, view: &View) -> Result<ViewRecord> {
    let rel = PathBuf::from("views").join(&view.id);
    let dir = root.join(&rel);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut rec = ViewRecord {
        id: view.id.clone(),
        pose: rel.join("pose.txt"),
        intrinsics: None,
        left: None,
        right: None,
        depth: None,
        disparity: None,
        gt_depth: None,
        gt_disparity: None,
    };
    write_pose(&root.join(&rec.pose), &view.pose)?;
    let put_gray = |img: &Option<GrayImage>, name: &str| -> Result<Option<PathBuf>> {
        let Some(img) = img else { return Ok(None) };
        let p = rel.join(name);
        write_gray_png(&root.join(&p), img)?;
        Ok(Some(p))
    };
    rec.left = put_gray(&view.left, "left.png")?;
    rec.right = put_gray(&view.right, "right.png")?;
    let put_map = |m: &Option<ScalarMap>, name: &str, depth: bool| -> Result<Option<PathBuf>> {
        let Some(m) = m else { return Ok(None) };
        let p = rel.join(name);
        if depth {
            write_depth_png(&root.join(&p), m)?;
        } else {
            write_disparity_png(&root.join(&p), m)?;
        }
        Ok(Some(p))
    };
    rec.depth = put_map(&view.depth, "depth.png", true)?;
    rec.disparity = put_map(&view.disparity, "disparity.png", false)?;
    rec.gt_depth = put_map(&view.gt_depth, "gt_depth.png", true)?;
    rec.gt_disparity = put_map(&view.gt_disparity, "gt_disparity.png", false)?;
    Ok(rec)
}

/// Writes `text` to `path`, creating parent directories.
pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Vector3};

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 510.0, 16.0, 12.0, 40.0, 32, 24).unwrap()
    }

    #[test]
    fn depth_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.png");
        let d = ScalarMap::from_fn(32, 24, |x, y| ((x + y) % 5 != 0).then(|| 400.0 + x as f64 * 0.1 + y as f64));
        write_depth_png(&p, &d).unwrap();
        let back = read_depth_png(&p).unwrap();
        for (a, b) in d.values().iter().zip(back.values()) {
            match (a, b) {
                (Some(a), Some(b)) => assert!((a - b).abs() <= 0.05 + 1e-9),
                (None, None) => {}
                _ => panic!("validity changed"),
            }
        }
        // quantized maps are fixed points
        let p2 = dir.path().join("d2.png");
        write_depth_png(&p2, &back).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
        let too_far = ScalarMap::from_fn(2, 2, |_, _| Some(7000.0));
        assert!(write_depth_png(&p, &too_far).is_err());
    }

    #[test]
    fn disparity_and_gray_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        let d = ScalarMap::from_fn(32, 24, |x, _| Some(90.0 + x as f64 / 64.0));
        write_disparity_png(&p, &d).unwrap();
        assert_eq!(read_disparity_png(&p).unwrap(), d);
        let g = GrayImage::from_fn(32, 24, |x, y| ((x * 7 + y * 3) % 256) as f64 / 255.0);
        write_gray_png(&p, &g).unwrap();
        let back = read_gray_png(&p).unwrap();
        for (a, b) in g.data.iter().zip(&back.data) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(read_depth_png(&p).is_err(), "8-bit file is not a depth map");
    }

    #[test]
    fn pose_text_round_trip() {
        let r = Rotation3::from_euler_angles(0.3, -1.1, 2.0);
        let pose = Pose::new(*r.matrix(), Vector3::new(1.5, -200.25, 480.0), 1e-9).unwrap();
        assert_eq!(parse_pose(&format_pose(&pose)).unwrap(), pose);
    }

    #[test]
    fn pose_validation() {
        let reflect = "1 0 0 0\n0 1 0 0\n0 0 -1 0\n0 0 0 1\n";
        assert!(parse_pose(reflect).is_err());
        assert!(parse_pose("1 0 0 0\n0 1 0 0\n0 0 1 0\n").is_err());
        assert!(parse_pose("1.01 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1").is_err());
        assert!(parse_pose("1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 1 1").is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pose.txt");
        std::fs::write(&p, reflect).unwrap();
        assert!(matches!(read_pose(&p), Err(Error::Validation { .. })));
    }

    fn tiny_dataset(root: &Path) -> DatasetManifest {
        let kk = k();
        write_intrinsics(&root.join("intrinsics.toml"), &kk).unwrap();
        let mut m = DatasetManifest::new("tiny");
        for i in 0..2 {
            let view = View {
                id: format!("{i:03}"),
                intrinsics: kk,
                pose: Pose::from_translation(Vector3::new(i as f64, 0.0, 0.0)),
                left: Some(GrayImage::from_fn(32, 24, |x, y| ((x ^ y) & 1) as f64)),
                right: None,
                depth: Some(ScalarMap::from_fn(32, 24, |_, _| Some(450.0))),
                disparity: None,
                gt_depth: None,
                gt_disparity: None,
            };
            m.views.push(write_view(root, &view).unwrap());
        }
        m.save(root).unwrap();
        m
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = tiny_dataset(dir.path());
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.manifest, m);
        assert_eq!(ds.len(), 2);
        let v = ds.load_view(1).unwrap();
        assert_eq!(v.pose.translation.x, 1.0);
        let disp = v.disparity_map().unwrap();
        assert!((disp.get(0, 0).unwrap() - 500.0 * 40.0 / 450.0).abs() < 1e-12);
        assert!(!ds.has_gt_disparity());
    }

    #[test]
    fn dataset_errors_name_paths() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::MissingFile(p)) if p.ends_with(MANIFEST_FILE)));
        tiny_dataset(dir.path());
        let gone = dir.path().join("views/001/left.png");
        std::fs::remove_file(&gone).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::MissingFile(p)) => assert_eq!(p, gone),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dataset_unit_and_pose_checks() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = tiny_dataset(dir.path());
        m.units = "m".into();
        m.save(dir.path()).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Units { .. })));
        m.units = "mm".into();
        m.save(dir.path()).unwrap();
        std::fs::write(dir.path().join("views/000/pose.txt"), "1 0 0 0\n0 1 0 0\n0 0 -1 0\n0 0 0 1\n").unwrap();
        let e = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(e, Error::Validation { .. }));
        assert_eq!(e.exit_code(), 4);
    }
}
