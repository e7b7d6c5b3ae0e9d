//! Synthetic scenes, sensor simulation and ground-truth oracles.
//!
//! Scenes are unions of analytic primitives. Depth is rendered by sphere
//! tracing refined with bisection; stereo pairs come from a dot pattern
//! projected from the left camera center. All randomness is drawn from
//! per-pixel generators keyed by `(seed, view, pixel)`, so output does not
//! depend on evaluation order.

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{project, CameraIntrinsics, DepthMap, DisparityMap, GrayImage, Point3, Pose, Projection, ScalarMap};
use crate::error::{Error, Result};
use crate::extraction::marching_cubes_field;
use crate::fusion::VolumeConfig;
use crate::mesh::TriangleMesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Material {
    Matte,
    Glossy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Shape {
    Sphere { radius: f64 },
    Box { half_extents: [f64; 3] },
    /// Capped cylinder along the local z axis.
    Cylinder { radius: f64, half_height: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub center: [f64; 3],
    /// Rotation vector (axis times angle in radians), local to world.
    #[serde(default)]
    pub rotation: [f64; 3],
    pub material: Material,
    /// Part of an object of interest rather than the container or floor.
    #[serde(default)]
    pub object: bool,
}

impl Primitive {
    fn world_from_local(&self) -> Rotation3<f64> {
        Rotation3::new(Vector3::from(self.rotation))
    }

    /// Exact Euclidean signed distance.
    pub fn sdf(&self, p: &Point3) -> f64 {
        let q = self.world_from_local().inverse() * (p - Vector3::from(self.center));
        match self.shape {
            Shape::Sphere { radius } => q.norm() - radius,
            Shape::Box { half_extents } => {
                let d = q.abs() - Vector3::from(half_extents);
                d.map(|x| x.max(0.0)).norm() + d.max().min(0.0)
            }
            Shape::Cylinder { radius, half_height } => {
                let dr = (q.x * q.x + q.y * q.y).sqrt() - radius;
                let dz = q.z.abs() - half_height;
                dr.max(dz).min(0.0) + (dr.max(0.0).powi(2) + dz.max(0.0).powi(2)).sqrt()
            }
        }
    }

    /// Half extents of the world-axis-aligned bounding box.
    pub fn half_extents(&self) -> Vector3<f64> {
        let local = match self.shape {
            Shape::Sphere { radius } => return Vector3::repeat(radius),
            Shape::Box { half_extents } => Vector3::from(half_extents),
            Shape::Cylinder { radius, half_height } => Vector3::new(radius, radius, half_height),
        };
        self.world_from_local().matrix().abs() * local
    }

    pub fn bounding_radius(&self) -> f64 {
        match self.shape {
            Shape::Sphere { radius } => radius,
            Shape::Box { half_extents } => Vector3::from(half_extents).norm(),
            Shape::Cylinder { radius, half_height } => radius.hypot(half_height),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self.shape {
            Shape::Sphere { radius } => radius > 0.0,
            Shape::Box { half_extents } => half_extents.iter().all(|h| *h > 0.0),
            Shape::Cylinder { radius, half_height } => radius > 0.0 && half_height > 0.0,
        };
        if !ok || !self.center.iter().chain(&self.rotation).all(|x| x.is_finite()) {
            return Err(Error::InvalidArgument("primitive sizes must be positive and finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnalyticScene {
    pub primitives: Vec<Primitive>,
}

impl AnalyticScene {
    pub fn sphere(center: Point3, radius: f64, material: Material) -> Self {
        Self {
            primitives: vec![Primitive {
                shape: Shape::Sphere { radius },
                center: [center.x, center.y, center.z],
                rotation: [0.0; 3],
                material,
                object: true,
            }],
        }
    }

    /// Open box of matte walls on the z = 0 plane with stacked matte and
    /// glossy parts inside, laid out from `seed`.
    pub fn glossy_bin(seed: u64) -> Self {
        let wall = |center: [f64; 3], half: [f64; 3]| Primitive {
            shape: Shape::Box { half_extents: half },
            center,
            rotation: [0.0; 3],
            material: Material::Matte,
            object: false,
        };
        let (inner, t, h) = (40.0, 2.0, 16.0);
        let mut primitives = vec![
            wall([0.0, 0.0, -t], [inner + 2.0 * t, inner + 2.0 * t, t]),
            wall([inner + t, 0.0, h], [t, inner + 2.0 * t, h]),
            wall([-inner - t, 0.0, h], [t, inner + 2.0 * t, h]),
            wall([0.0, inner + t, h], [inner, t, h]),
            wall([0.0, -inner - t, h], [inner, t, h]),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slots = [(-26.0, -26.0), (0.0, -26.0), (26.0, -26.0), (-26.0, 0.0), (0.0, 0.0), (26.0, 0.0), (-26.0, 26.0), (0.0, 26.0), (26.0, 26.0)];
        for (i, &(sx, sy)) in slots.iter().enumerate() {
            let jitter = |rng: &mut ChaCha8Rng| rng.gen_range(-3.0..3.0);
            let (x, y) = (sx + jitter(&mut rng), sy + jitter(&mut rng));
            let material = if i % 2 == 0 { Material::Glossy } else { Material::Matte };
            let yaw = rng.gen_range(-1.5..1.5);
            let part = match i % 3 {
                0 => {
                    let r = rng.gen_range(7.0..10.0);
                    let hh = rng.gen_range(8.0..11.0);
                    // lying on its side
                    Primitive {
                        shape: Shape::Cylinder { radius: r, half_height: hh },
                        center: [x, y, r],
                        rotation: (Rotation3::from_axis_angle(&Vector3::z_axis(), yaw)
                            * Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::FRAC_PI_2))
                        .scaled_axis()
                        .into(),
                        material,
                        object: true,
                    }
                }
                1 => {
                    let half = [rng.gen_range(8.0..11.0), rng.gen_range(6.0..9.0), rng.gen_range(5.0..8.0)];
                    Primitive {
                        shape: Shape::Box { half_extents: half },
                        center: [x, y, half[2]],
                        rotation: [0.0, 0.0, yaw],
                        material,
                        object: true,
                    }
                }
                _ => {
                    let r = rng.gen_range(7.0..10.0);
                    Primitive {
                        shape: Shape::Sphere { radius: r },
                        center: [x, y, r],
                        rotation: [0.0; 3],
                        material,
                        object: true,
                    }
                }
            };
            primitives.push(part);
        }
        // a second layer resting on the first
        for &(sx, sy) in &[(-13.0, -13.0), (13.0, 13.0)] {
            let r = rng.gen_range(6.0..8.0);
            primitives.push(Primitive {
                shape: Shape::Sphere { radius: r },
                center: [sx, sy, 16.0 + r],
                rotation: [0.0; 3],
                material: Material::Glossy,
                object: true,
            });
        }
        Self { primitives }
    }

    pub fn validate(&self) -> Result<()> {
        self.primitives.iter().try_for_each(Primitive::validate)
    }

    /// Axis-aligned box containing every primitive.
    pub fn bounds(&self) -> Option<(Point3, Point3)> {
        let mut lo = Point3::repeat(f64::INFINITY);
        let mut hi = Point3::repeat(f64::NEG_INFINITY);
        for p in &self.primitives {
            let c = Vector3::from(p.center);
            let e = p.half_extents();
            lo = lo.inf(&(c - e));
            hi = hi.sup(&(c + e));
        }
        (!self.primitives.is_empty()).then_some((lo, hi))
    }

    fn bounding_sphere(&self) -> Option<(Point3, f64)> {
        let (lo, hi) = self.bounds()?;
        let c = (lo + hi) / 2.0;
        let r = self
            .primitives
            .iter()
            .map(|p| (Vector3::from(p.center) - c).norm() + p.bounding_radius())
            .fold(0.0, f64::max)
            + 1.0;
        Some((c, r))
    }

    /// Index of the primitive whose surface is nearest to `p`.
    pub fn closest_primitive(&self, p: &Point3) -> Option<usize> {
        self.primitives
            .iter()
            .enumerate()
            .map(|(i, q)| (i, q.sdf(p)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .map(|(i, _)| i)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene serializes")
    }

    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        let s: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        s.validate().map_err(|e| e.to_string())?;
        Ok(s)
    }
}

/// Union of the primitives: minimum signed distance. Empty scenes are
/// infinitely far away.
pub fn scene_sdf(scene: &AnalyticScene, p: &Point3) -> f64 {
    scene.primitives.iter().map(|q| q.sdf(p)).fold(f64::INFINITY, f64::min)
}

fn sdf_normal(scene: &AnalyticScene, p: &Point3) -> Vector3<f64> {
    let h = 1e-4;
    let g = Vector3::new(
        scene_sdf(scene, &(p + Vector3::x() * h)) - scene_sdf(scene, &(p - Vector3::x() * h)),
        scene_sdf(scene, &(p + Vector3::y() * h)) - scene_sdf(scene, &(p - Vector3::y() * h)),
        scene_sdf(scene, &(p + Vector3::z() * h)) - scene_sdf(scene, &(p - Vector3::z() * h)),
    );
    let n = g.norm();
    if n > 0.0 {
        g / n
    } else {
        Vector3::z()
    }
}

const HIT_EPS: f64 = 1e-4;
const ROOT_TOL: f64 = 1e-7;
const MAX_STEPS: usize = 2000;

/// Distance along the unit direction `dir` to the first surface, or `None`
/// if the ray misses or starts inside.
pub fn trace_ray(scene: &AnalyticScene, origin: &Point3, dir: &Vector3<f64>) -> Option<f64> {
    let (c, r) = scene.bounding_sphere()?;
    // entry and exit of the bounding sphere
    let oc = origin - c;
    let b = oc.dot(dir);
    let disc = b * b - (oc.norm_squared() - r * r);
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let (t_enter, t_exit) = ((-b - sq).max(0.0), -b + sq);
    if t_exit < 0.0 {
        return None;
    }
    let at = |t: f64| scene_sdf(scene, &(origin + dir * t));
    if at(t_enter) < 0.0 {
        return None;
    }
    let mut t = t_enter;
    for _ in 0..MAX_STEPS {
        let d = at(t);
        if d < HIT_EPS {
            return Some(refine_root(&at, t));
        }
        t += d;
        if t > t_exit {
            return None;
        }
    }
    None
}

/// Bisection between `t` (outside) and the first sampled point inside.
fn refine_root(at: &impl Fn(f64) -> f64, t: f64) -> f64 {
    let mut h = HIT_EPS;
    let mut inside = None;
    for _ in 0..12 {
        if at(t + h) < 0.0 {
            inside = Some(t + h);
            break;
        }
        h *= 2.0;
    }
    let Some(mut hi) = inside else {
        // grazing contact
        return t;
    };
    let mut lo = t;
    while hi - lo > ROOT_TOL {
        let mid = 0.5 * (lo + hi);
        if at(mid) < 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for one `(seed, stream, view, pixel)` tuple.
pub fn pixel_rng(seed: u64, stream: u64, view: u64, pixel: u64) -> ChaCha8Rng {
    let h = splitmix(splitmix(splitmix(splitmix(seed) ^ stream) ^ view) ^ pixel);
    ChaCha8Rng::seed_from_u64(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    pub sigma_matte: f64,
    pub sigma_glossy: f64,
    pub outlier_prob: f64,
    /// Outliers are uniform in `[gt − range, gt + range]`, mm.
    pub outlier_range: f64,
    pub dropout_prob_glossy: f64,
    pub rng_seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::bin_preset(0)
    }
}

impl NoiseModel {
    pub fn noise_free() -> Self {
        Self {
            sigma_matte: 0.0,
            sigma_glossy: 0.0,
            outlier_prob: 0.0,
            outlier_range: 0.0,
            dropout_prob_glossy: 0.0,
            rng_seed: 0,
        }
    }

    /// Matte 0.1 mm, glossy 0.5 mm with 30% dropout, 2% outliers within 8 mm.
    pub fn bin_preset(seed: u64) -> Self {
        Self {
            sigma_matte: 0.1,
            sigma_glossy: 0.5,
            outlier_prob: 0.02,
            outlier_range: 8.0,
            dropout_prob_glossy: 0.3,
            rng_seed: seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = |x: f64| (0.0..=1.0).contains(&x);
        if !(p(self.outlier_prob) && p(self.dropout_prob_glossy)) {
            return Err(Error::InvalidArgument("probabilities must lie in [0, 1]".into()));
        }
        if !(self.sigma_matte >= 0.0 && self.sigma_glossy >= 0.0 && self.outlier_range >= 0.0) {
            return Err(Error::InvalidArgument("noise magnitudes must be non-negative".into()));
        }
        Ok(())
    }

    pub fn sigma(&self, m: Material) -> f64 {
        match m {
            Material::Matte => self.sigma_matte,
            Material::Glossy => self.sigma_glossy,
        }
    }
}

/// Unit ray through a pixel center in world coordinates, with the factor
/// converting ray distance to depth.
fn pixel_ray(pose: &Pose, k: &CameraIntrinsics, x: f64, y: f64) -> (Vector3<f64>, f64) {
    let d = Vector3::new((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
    let n = d.norm();
    (pose.rotation * (d / n), 1.0 / n)
}

/// Ground-truth depth and hit primitive for every pixel.
fn trace_view(scene: &AnalyticScene, pose: &Pose, k: &CameraIntrinsics) -> Vec<Option<(f64, usize)>> {
    let origin = pose.position();
    (0..k.width * k.height)
        .into_par_iter()
        .map(|i| {
            let (x, y) = ((i % k.width) as f64, (i / k.width) as f64);
            let (dir, to_depth) = pixel_ray(pose, k, x, y);
            let t = trace_ray(scene, &origin, &dir)?;
            let prim = scene.closest_primitive(&(origin + dir * t))?;
            Some((t * to_depth, prim))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthRender {
    pub measured: DepthMap,
    pub ground_truth: DepthMap,
    pub material: Vec<Option<Material>>,
}

/// Sensor depth for one view. `view` keys the noise streams.
pub fn render_depth(
    scene: &AnalyticScene,
    pose: &Pose,
    k: &CameraIntrinsics,
    noise: &NoiseModel,
    view: u64,
) -> Result<DepthRender> {
    scene.validate()?;
    noise.validate()?;
    k.validate()?;
    let hits = trace_view(scene, pose, k);
    let material: Vec<Option<Material>> = hits.iter().map(|h| h.map(|(_, i)| scene.primitives[i].material)).collect();
    let gt: Vec<Option<f64>> = hits.iter().map(|h| h.map(|(z, _)| z)).collect();
    let measured: Vec<Option<f64>> = gt
        .par_iter()
        .zip(&material)
        .enumerate()
        .map(|(i, (z, m))| {
            let (z, m) = (z.as_ref()?, m.as_ref()?);
            let mut rng = pixel_rng(noise.rng_seed, 1, view, i as u64);
            let u_drop: f64 = rng.gen();
            let u_out: f64 = rng.gen();
            let u_range: f64 = rng.gen();
            let g: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(&mut rng);
            if *m == Material::Glossy && u_drop < noise.dropout_prob_glossy {
                return None;
            }
            let v = if u_out < noise.outlier_prob {
                z + noise.outlier_range * (2.0 * u_range - 1.0)
            } else {
                z + noise.sigma(*m) * g
            };
            (v > 0.0).then_some(v)
        })
        .collect();
    Ok(DepthRender {
        measured: ScalarMap::depth(k.width, k.height, measured)?,
        ground_truth: ScalarMap::depth(k.width, k.height, gt)?,
        material,
    })
}

/// Projected dot texture, a function of continuous projector pixel
/// coordinates. One candidate dot per 5 px cell at a hashed position, kept
/// with probability 0.8; dots are discs of radius 1 px with a 1 px soft edge,
/// which fills about 10% of the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DotPattern {
    pub seed: u64,
    pub cell: f64,
    pub dot_radius: f64,
}

impl DotPattern {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            cell: 5.0,
            dot_radius: 1.0,
        }
    }

    fn dot(&self, cx: i64, cy: i64) -> Option<(f64, f64)> {
        let h = splitmix(splitmix(self.seed ^ 0x5eed) ^ (cx as u64).wrapping_mul(0x1_0000_0001) ^ (cy as u64));
        let a = (h & 0xffff) as f64 / 65536.0;
        let b = ((h >> 16) & 0xffff) as f64 / 65536.0;
        let keep = ((h >> 32) & 0xffff) as f64 / 65536.0;
        (keep < 1.0).then(|| ((cx as f64 + a) * self.cell, (cy as f64 + b) * self.cell))
    }

    /// Intensity in `[0, 1]`.
    pub fn sample(&self, u: f64, v: f64) -> f64 {
        let (gx, gy) = ((u / self.cell).floor() as i64, (v / self.cell).floor() as i64);
        let mut s: f64 = 0.0;
        for cy in gy - 1..=gy + 1 {
            for cx in gx - 1..=gx + 1 {
                if let Some((px, py)) = self.dot(cx, cy) {
                    let r = ((u - px).powi(2) + (v - py).powi(2)).sqrt();
                    s = s.max((self.dot_radius + 0.5 - r).clamp(0.0, 1.0));
                }
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StereoPair {
    pub left: GrayImage,
    pub right: GrayImage,
    /// Ground-truth disparity in left-image coordinates; invalid where the
    /// surface is missed or hidden from the right camera.
    pub disparity: DisparityMap,
    /// Left pixels whose surface point the right camera cannot see.
    pub occluded: Vec<bool>,
}

const AMBIENT: f64 = 0.04;

/// 4×4 sample offsets integrating the pattern over a pixel's area.
const SUBPIXEL: [(f64, f64); 16] = {
    let mut o = [(0.0, 0.0); 16];
    let mut i = 0;
    while i < 16 {
        o[i] = ((i % 4) as f64 * 0.25 - 0.375, (i / 4) as f64 * 0.25 - 0.375);
        i += 1;
    }
    o
};

fn shade(material: Material, pattern: f64, cos: f64) -> f64 {
    let (albedo, contrast) = match material {
        Material::Matte => (0.85, 0.8),
        Material::Glossy => (0.6, 0.35),
    };
    AMBIENT + albedo * cos.max(0.05) * ((1.0 - contrast) + contrast * pattern)
}

fn image_noise(material: Option<Material>) -> f64 {
    match material {
        Some(Material::Glossy) => 0.03,
        _ => 0.008,
    }
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// True when the segment from `from` to `to` reaches `to` unobstructed.
fn visible(scene: &AnalyticScene, from: &Point3, to: &Point3) -> bool {
    let d = to - from;
    let len = d.norm();
    match trace_ray(scene, from, &(d / len)) {
        Some(t) => t > len - 1e-3,
        None => true,
    }
}

/// Rectified left/right images of the scene lit by a dot projector at the
/// left camera center. 8-bit quantized, with per-pixel image noise keyed by
/// `(pattern_seed, view)`.
pub fn render_stereo_pair(
    scene: &AnalyticScene,
    pose: &Pose,
    k: &CameraIntrinsics,
    pattern_seed: u64,
    view: u64,
) -> Result<StereoPair> {
    scene.validate()?;
    k.validate()?;
    let pattern = DotPattern::new(pattern_seed);
    let left_c = pose.position();
    let right_pose = Pose {
        rotation: pose.rotation,
        translation: pose.transform_point(&Vector3::new(k.baseline, 0.0, 0.0)),
    };
    let right_c = right_pose.position();
    let cam_from_world = pose.inverse();
    let n = k.width * k.height;

    let left: Vec<(f64, Option<f64>, bool)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (x, y) = ((i % k.width) as f64, (i / k.width) as f64);
            let (dir, to_depth) = pixel_ray(pose, k, x, y);
            let mut rng = pixel_rng(pattern_seed, 2, view, i as u64);
            let g: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(&mut rng);
            let Some(t) = trace_ray(scene, &left_c, &dir) else {
                return (quantize(AMBIENT * 0.5 + 0.008 * g), None, false);
            };
            let p = left_c + dir * t;
            let m = scene.closest_primitive(&p).map(|j| scene.primitives[j].material);
            let cos = -sdf_normal(scene, &p).dot(&dir);
            let pat = SUBPIXEL.iter().map(|&(ox, oy)| pattern.sample(x + ox, y + oy)).sum::<f64>() / SUBPIXEL.len() as f64;
            let val = shade(m.unwrap_or(Material::Matte), pat, cos);
            let seen = visible(scene, &right_c, &p);
            let disparity = k.disparity_scale() / (t * to_depth);
            (quantize(val + image_noise(m) * g), seen.then_some(disparity), !seen)
        })
        .collect();

    let right: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (x, y) = ((i % k.width) as f64, (i / k.width) as f64);
            let (dir, _) = pixel_ray(&right_pose, k, x, y);
            let mut rng = pixel_rng(pattern_seed, 3, view, i as u64);
            let g: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(&mut rng);
            let Some(t) = trace_ray(scene, &right_c, &dir) else {
                return quantize(AMBIENT * 0.5 + 0.008 * g);
            };
            let p = right_c + dir * t;
            let m = scene.closest_primitive(&p).map(|j| scene.primitives[j].material);
            let lit = visible(scene, &left_c, &p);
            let normal = sdf_normal(scene, &p);
            // pixel footprint on the tangent plane, seen from the projector
            let pat = if lit {
                SUBPIXEL
                    .iter()
                    .map(|&(ox, oy)| {
                        let (d, _) = pixel_ray(&right_pose, k, x + ox, y + oy);
                        let q = right_c + d * (normal.dot(&(p - right_c)) / normal.dot(&d));
                        match project(&cam_from_world.transform_point(&q), k) {
                            Projection::InFrame { x, y, .. } | Projection::OutOfFrame { x, y, .. } => pattern.sample(x, y),
                            Projection::BehindCamera => 0.0,
                        }
                    })
                    .sum::<f64>()
                    / SUBPIXEL.len() as f64
            } else {
                0.0
            };
            let to_proj = (p - left_c).normalize();
            let cos = if lit { -normal.dot(&to_proj) } else { 0.0 };
            let val = if lit { shade(m.unwrap_or(Material::Matte), pat, cos) } else { AMBIENT };
            quantize(val + image_noise(m) * g)
        })
        .collect();

    Ok(StereoPair {
        left: GrayImage::new(k.width, k.height, left.iter().map(|l| l.0).collect())?,
        right: GrayImage::new(k.width, k.height, right)?,
        disparity: ScalarMap::disparity(k.width, k.height, left.iter().map(|l| l.1).collect())?,
        occluded: left.iter().map(|l| l.2).collect(),
    })
}

/// Ungated Marching Cubes of the scene SDF, with a per-vertex flag telling
/// whether the nearest primitive is an object part.
pub fn ground_truth_mesh(scene: &AnalyticScene, voxel_size: f64) -> Result<(TriangleMesh, Vec<bool>)> {
    if !(voxel_size > 0.0) {
        return Err(Error::InvalidArgument("voxel_size must be positive".into()));
    }
    scene.validate()?;
    let Some((lo, hi)) = scene.bounds() else {
        return Ok((TriangleMesh::default(), Vec::new()));
    };
    let margin = Vector3::repeat(2.0 * voxel_size);
    let cfg = VolumeConfig::covering(lo - margin, hi + margin, voxel_size);
    let values: Vec<f64> = (0..cfg.voxel_count())
        .into_par_iter()
        .map(|i| {
            let [x, y, z] = cfg.coords(i);
            scene_sdf(scene, &cfg.center(x, y, z))
        })
        .collect();
    let mesh = marching_cubes_field(&cfg, &values);
    let labels = mesh
        .vertices
        .par_iter()
        .map(|v| scene.closest_primitive(v).map_or(false, |i| scene.primitives[i].object))
        .collect();
    Ok((mesh, labels))
}

/// World-from-camera pose at `eye` looking at `target`, with image-down as
/// close to world −z as the view allows.
pub fn look_at(eye: &Point3, target: &Point3) -> Result<Pose> {
    let z = target - eye;
    if !(z.norm() > 0.0) {
        return Err(Error::InvalidArgument("eye and target coincide".into()));
    }
    let z = z.normalize();
    let reference = if z.z.abs() > 0.999 { Vector3::y() } else { -Vector3::z() };
    let y = (reference - z * reference.dot(&z)).normalize();
    let x = y.cross(&z);
    Pose::new(Matrix3::from_columns(&[x, y, z]), *eye, Pose::ORTHONORMAL_TOL)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DomeSpec {
    pub center: [f64; 3],
    /// Elevation above the horizontal plane, degrees.
    pub elevation_deg: [f64; 2],
    pub distance: [f64; 2],
    pub count: usize,
    pub seed: u64,
}

impl Default for DomeSpec {
    fn default() -> Self {
        Self {
            center: [0.0; 3],
            elevation_deg: [45.0, 90.0],
            distance: [400.0, 520.0],
            count: 30,
            seed: 0,
        }
    }
}

/// Quasi-uniform poses on a spherical band: equal-area elevation steps,
/// golden-angle azimuths, low-discrepancy distances.
pub fn dome_trajectory(spec: &DomeSpec) -> Result<Vec<Pose>> {
    let [e0, e1] = spec.elevation_deg;
    let [d0, d1] = spec.distance;
    if spec.count == 0 {
        return Err(Error::InvalidArgument("trajectory needs at least one view".into()));
    }
    if !(-90.0..=90.0).contains(&e0) || !(-90.0..=90.0).contains(&e1) || e0 > e1 {
        return Err(Error::InvalidArgument("elevation range must be ordered within [-90, 90]".into()));
    }
    if !(d0 > 0.0 && d0 <= d1) {
        return Err(Error::InvalidArgument("distance range must be positive and ordered".into()));
    }
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let phase = (splitmix(spec.seed) >> 11) as f64 / (1u64 << 53) as f64;
    let (s0, s1) = (e0.to_radians().sin(), e1.to_radians().sin());
    let center = Vector3::from(spec.center);
    (0..spec.count)
        .map(|i| {
            let f = (i as f64 + 0.5) / spec.count as f64;
            // top of the band first
            let el = (s1 + (s0 - s1) * f).clamp(-1.0, 1.0).asin();
            let az = 2.0 * std::f64::consts::PI * phase + golden * i as f64;
            let r = d0 + (d1 - d0) * ((phase + 0.618_033_988_749_894_9 * i as f64) % 1.0);
            let eye = center + r * Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            look_at(&eye, &center)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::photometric::{build_cost_curve, PhotometricConfig};

    fn k(w: usize, h: usize) -> CameraIntrinsics {
        CameraIntrinsics::new(600.0, 600.0, w as f64 / 2.0, h as f64 / 2.0, 50.0, w, h).unwrap()
    }

    fn plane_scene(z: f64) -> AnalyticScene {
        AnalyticScene {
            primitives: vec![Primitive {
                shape: Shape::Box { half_extents: [500.0, 500.0, 5.0] },
                center: [0.0, 0.0, z + 5.0],
                rotation: [0.0; 3],
                material: Material::Matte,
                object: true,
            }],
        }
    }

    #[test]
    fn sdf_examples() {
        let s = AnalyticScene::sphere(Point3::zeros(), 50.0, Material::Matte);
        assert_eq!(scene_sdf(&s, &Point3::new(60.0, 0.0, 0.0)), 10.0);
        assert_eq!(scene_sdf(&s, &Point3::zeros()), -50.0);
        let a = AnalyticScene::sphere(Point3::new(-5.0, 0.0, 0.0), 7.0, Material::Matte);
        let b = AnalyticScene::sphere(Point3::new(6.0, 2.0, 1.0), 4.0, Material::Glossy);
        let u = AnalyticScene {
            primitives: [a.primitives.clone(), b.primitives.clone()].concat(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let p = Point3::new(rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0));
            assert_eq!(scene_sdf(&u, &p), scene_sdf(&a, &p).min(scene_sdf(&b, &p)));
        }
    }

    #[test]
    fn box_and_cylinder_sdf() {
        let bx = Primitive {
            shape: Shape::Box { half_extents: [1.0, 2.0, 3.0] },
            center: [0.0; 3],
            rotation: [0.0; 3],
            material: Material::Matte,
            object: true,
        };
        assert_eq!(bx.sdf(&Point3::new(3.0, 0.0, 0.0)), 2.0);
        assert_eq!(bx.sdf(&Point3::zeros()), -1.0);
        assert!((bx.sdf(&Point3::new(2.0, 3.0, 3.0)) - 2f64.sqrt()).abs() < 1e-15);
        let cy = Primitive {
            shape: Shape::Cylinder { radius: 2.0, half_height: 1.0 },
            rotation: [std::f64::consts::FRAC_PI_2, 0.0, 0.0],
            ..bx
        };
        // axis now along world −y
        assert!((cy.sdf(&Point3::new(0.0, 4.0, 0.0)) - 3.0).abs() < 1e-12);
        assert!((cy.sdf(&Point3::new(0.0, 0.0, 5.0)) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn scene_toml_round_trip() {
        let s = AnalyticScene::glossy_bin(3);
        assert_eq!(AnalyticScene::from_toml(&s.to_toml()).unwrap(), s);
        assert_eq!(AnalyticScene::glossy_bin(3), s);
    }

    #[test]
    fn noise_free_depth_is_ground_truth() {
        let s = AnalyticScene::sphere(Point3::new(0.0, 0.0, 300.0), 40.0, Material::Glossy);
        let r = render_depth(&s, &Pose::identity(), &k(64, 48), &NoiseModel::noise_free(), 0).unwrap();
        assert_eq!(r.measured, r.ground_truth);
        assert!((r.ground_truth.get(32, 24).unwrap() - 260.0).abs() < 1e-6);
    }

    #[test]
    fn ground_truth_depth_matches_bisection() {
        let s = AnalyticScene::glossy_bin(1);
        let pose = look_at(&Point3::new(30.0, -60.0, 400.0), &Point3::zeros()).unwrap();
        let kk = k(48, 36);
        let r = render_depth(&s, &pose, &kk, &NoiseModel::noise_free(), 0).unwrap();
        let mut checked = 0;
        for y in 0..36 {
            for x in 0..48 {
                let Some(z) = r.ground_truth.get(x, y) else { continue };
                let (dir, to_depth) = pixel_ray(&pose, &kk, x as f64, y as f64);
                let t = z / to_depth;
                let f = |t: f64| scene_sdf(&s, &(pose.position() + dir * t));
                // independent bracket around the reported root
                let (mut lo, mut hi) = (t - 1e-3, t + 1e-3);
                assert!(f(lo) > 0.0 && f(hi) < 0.0);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if f(mid) < 0.0 {
                        hi = mid
                    } else {
                        lo = mid
                    }
                }
                assert!((0.5 * (lo + hi) * to_depth - z).abs() < 1e-6);
                checked += 1;
            }
        }
        assert!(checked > 500);
    }

    #[test]
    fn plane_noise_statistics() {
        let kk = k(400, 250);
        let noise = NoiseModel {
            sigma_matte: 0.3,
            ..NoiseModel::noise_free()
        };
        let r = render_depth(&plane_scene(300.0), &Pose::identity(), &kk, &noise, 7).unwrap();
        let errs: Vec<f64> = r
            .measured
            .values()
            .iter()
            .zip(r.ground_truth.values())
            .filter_map(|(m, g)| Some(m.as_ref()? - g.as_ref()?))
            .collect();
        assert_eq!(errs.len(), 100_000);
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        let sd = (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (errs.len() - 1) as f64).sqrt();
        assert!((0.27..=0.33).contains(&sd), "{sd}");
        let again = render_depth(&plane_scene(300.0), &Pose::identity(), &kk, &noise, 7).unwrap();
        assert_eq!(again, r);
    }

    #[test]
    fn dropout_and_outliers() {
        let s = AnalyticScene::sphere(Point3::new(0.0, 0.0, 300.0), 60.0, Material::Glossy);
        let noise = NoiseModel {
            outlier_prob: 0.1,
            outlier_range: 5.0,
            dropout_prob_glossy: 0.3,
            ..NoiseModel::noise_free()
        };
        let r = render_depth(&s, &Pose::identity(), &k(80, 80), &noise, 0).unwrap();
        let hit = r.ground_truth.valid_count() as f64;
        let kept = r.measured.valid_count() as f64;
        assert!(((1.0 - kept / hit) - 0.3).abs() < 0.05);
        let off = r
            .measured
            .values()
            .iter()
            .zip(r.ground_truth.values())
            .filter_map(|(m, g)| Some((m.as_ref()? - g.as_ref()?).abs()))
            .collect::<Vec<_>>();
        assert!(off.iter().all(|d| *d <= 5.0));
        let frac = off.iter().filter(|d| **d > 0.0).count() as f64 / off.len() as f64;
        assert!((frac - 0.1).abs() < 0.04);
    }

    #[test]
    fn plane_stereo_has_constant_disparity() {
        let kk = k(96, 64);
        let pair = render_stereo_pair(&plane_scene(300.0), &Pose::identity(), &kk, 5, 0).unwrap();
        let d = kk.disparity_scale() / 300.0;
        for v in pair.disparity.values().iter().flatten() {
            assert!((v - d).abs() < 1e-6);
        }
        assert_eq!(pair.disparity.valid_count(), 96 * 64);
        assert!(pair.occluded.iter().all(|o| !o));
    }

    #[test]
    fn stereo_matching_recovers_disparity() {
        let kk = CameraIntrinsics::new(600.0, 600.0, 160.0, 120.0, 50.0, 320, 240).unwrap();
        // gently curved so that window distortion stays small
        let s = AnalyticScene::sphere(Point3::new(25.0, 0.0, 550.0), 200.0, Material::Matte);
        let pair = render_stereo_pair(&s, &Pose::identity(), &kk, 9, 0).unwrap();
        let cfg = PhotometricConfig {
            min_disparity: 60,
            max_disparity: 110,
            ..Default::default()
        };
        let (mut good, mut total) = (0, 0);
        for y in 4..236 {
            for x in 4..316 {
                let Some(d) = pair.disparity.get(x, y) else { continue };
                let Ok(curve) = build_cost_curve(&pair.left, &pair.right, x, y, d.round(), &cfg) else {
                    continue;
                };
                total += 1;
                if (curve.argmin() as f64 - d).abs() <= 1.0 {
                    good += 1;
                }
            }
        }
        assert!(total > 30_000);
        assert!(good as f64 >= 0.95 * total as f64, "{good}/{total}");
    }

    #[test]
    fn step_edge_occlusion_band() {
        // near plate over the right half, far plane behind
        let near = 250.0;
        let far = 300.0;
        let mut s = plane_scene(far);
        s.primitives.push(Primitive {
            shape: Shape::Box { half_extents: [100.0, 200.0, 2.0] },
            center: [100.0, 0.0, near + 2.0],
            rotation: [0.0; 3],
            material: Material::Matte,
            object: true,
        });
        let kk = k(160, 40);
        let pair = render_stereo_pair(&s, &Pose::identity(), &kk, 1, 0).unwrap();
        let band = kk.disparity_scale() / near - kk.disparity_scale() / far;
        let row = 20;
        let width = (0..160).filter(|&x| pair.occluded[row * 160 + x]).count() as f64;
        assert!((width - band).abs() <= 1.0, "{width} vs {band}");
    }

    #[test]
    fn ground_truth_meshes() {
        let s = AnalyticScene::sphere(Point3::zeros(), 50.0, Material::Matte);
        let (m, labels) = ground_truth_mesh(&s, 0.5).unwrap();
        assert!(labels.iter().all(|l| *l));
        for v in &m.vertices {
            assert!((v.norm() - 50.0).abs() < 0.5);
        }
        let bx = AnalyticScene {
            primitives: vec![Primitive {
                shape: Shape::Box { half_extents: [3.0, 4.0, 5.0] },
                center: [0.0; 3],
                rotation: [0.0; 3],
                material: Material::Matte,
                object: false,
            }],
        };
        let (m, _) = ground_truth_mesh(&bx, 0.5).unwrap();
        let on_face = m
            .vertices
            .iter()
            .filter(|v| {
                (v.x.abs() - 3.0).abs() < 1e-9 || (v.y.abs() - 4.0).abs() < 1e-9 || (v.z.abs() - 5.0).abs() < 1e-9
            })
            .count();
        // vertices away from edges and corners lie on the face planes
        assert!(on_face as f64 > 0.8 * m.vertices.len() as f64);
        assert!(ground_truth_mesh(&AnalyticScene::default(), 0.5).unwrap().0.is_empty());
        let (lo, hi) = AnalyticScene::glossy_bin(0).bounds().unwrap();
        assert_eq!((lo.x, hi.x, lo.z), (-44.0, 44.0, -4.0));
        assert!(hi.z >= 32.0 && hi.z <= 34.0);
    }

    #[test]
    fn dome_examples() {
        let top = dome_trajectory(&DomeSpec {
            elevation_deg: [90.0, 90.0],
            count: 1,
            ..DomeSpec::default()
        })
        .unwrap();
        assert!((top[0].optical_axis() + Vector3::z()).norm() < 1e-12);
        let spec = DomeSpec {
            count: 88,
            seed: 4,
            ..DomeSpec::default()
        };
        let poses = dome_trajectory(&spec).unwrap();
        for p in &poses {
            let r = p.position().norm();
            assert!((400.0..=520.0).contains(&r));
            p.check(1e-9).unwrap();
            assert!((p.optical_axis() + p.position() / r).norm() < 1e-9);
            let el = (p.position().z / r).asin().to_degrees();
            assert!((45.0 - 1e-9..=90.0 + 1e-9).contains(&el));
        }
        assert_eq!(dome_trajectory(&spec).unwrap(), poses);
        assert!(dome_trajectory(&DomeSpec { count: 0, ..spec }).is_err());
    }
}
