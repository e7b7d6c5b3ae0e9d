//! Marching Cubes over fused volumes with per-edge acceptance gates.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::camera::Point3;
use crate::fusion::{PsdfVolume, PsdfVoxel, TsdfVolume, VolumeConfig};
use crate::mc_tables::{EDGE_TABLE, TRI_TABLE};
use crate::mesh::TriangleMesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateMode {
    /// Sign change, converged variance and inlier belief on both voxels.
    Probabilistic,
    /// Both voxels observed at least `w_thr` times.
    Baseline { w_thr: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractionGate {
    pub sigma_thr: f64,
    pub pi_thr: f64,
    pub mode: GateMode,
}

impl ExtractionGate {
    pub fn probabilistic(sigma_thr: f64, pi_thr: f64) -> Self {
        Self {
            sigma_thr,
            pi_thr,
            mode: GateMode::Probabilistic,
        }
    }

    pub fn from_config(cfg: &VolumeConfig) -> Self {
        Self::probabilistic(cfg.sigma_thr, cfg.pi_thr)
    }

    /// No gating beyond the sign change.
    pub fn permissive() -> Self {
        Self::probabilistic(f64::INFINITY, 0.0)
    }
}

impl Default for ExtractionGate {
    fn default() -> Self {
        Self::from_config(&VolumeConfig::default())
    }
}

/// Whether the zero crossing between two adjacent voxels is trusted.
#[inline]
pub fn edge_crossing(v1: &PsdfVoxel, v2: &PsdfVoxel, gate: &ExtractionGate) -> bool {
    v1.mu * v2.mu < 0.0
        && v1.sigma() < gate.sigma_thr
        && v2.sigma() < gate.sigma_thr
        && v1.inlier_mean() > gate.pi_thr
        && v2.inlier_mean() > gate.pi_thr
}

// (dx, dy, dz) of each cube corner
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

// corner pair of each cube edge
const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Marching Cubes on a dense grid. `value(i)` is the field at voxel index
/// `i`; `edge_ok(i, j)` decides whether a crossing between voxels `i` and `j`
/// may be used. Cubes with any refused crossing emit nothing.
///
/// Triangles wind counter-clockwise seen from the positive side.
pub fn marching_cubes_with<V, E>(cfg: &VolumeConfig, value: V, edge_ok: E) -> TriangleMesh
where
    V: Fn(usize) -> f64,
    E: Fn(usize, usize) -> bool,
{
    let [nx, ny, nz] = cfg.dims;
    let mut mesh = TriangleMesh::default();
    if nx < 2 || ny < 2 || nz < 2 {
        return mesh;
    }
    let mut edge_vertex: HashMap<(usize, usize), u32> = HashMap::new();
    for z in 0..nz - 1 {
        for y in 0..ny - 1 {
            for x in 0..nx - 1 {
                let idx = CORNERS.map(|[dx, dy, dz]| cfg.index(x + dx, y + dy, z + dz));
                let vals = idx.map(&value);
                let mut case = 0usize;
                for (bit, v) in vals.iter().enumerate() {
                    if *v < 0.0 {
                        case |= 1 << bit;
                    }
                }
                let edges = EDGE_TABLE[case];
                if edges == 0 {
                    continue;
                }
                let accepted = (0..12)
                    .filter(|e| edges & (1 << e) != 0)
                    .all(|e| edge_ok(idx[EDGES[e][0]], idx[EDGES[e][1]]));
                if !accepted {
                    continue;
                }
                let mut local = [u32::MAX; 12];
                for e in 0..12 {
                    if edges & (1 << e) == 0 {
                        continue;
                    }
                    let [c1, c2] = EDGES[e];
                    let (lo, hi) = if idx[c1] < idx[c2] { (c1, c2) } else { (c2, c1) };
                    let axis = (0..3).find(|&a| CORNERS[lo][a] != CORNERS[hi][a]).expect("edge spans an axis");
                    let key = (idx[lo], axis);
                    local[e] = *edge_vertex.entry(key).or_insert_with(|| {
                        let p1 = corner_position(cfg, x, y, z, lo);
                        let p2 = corner_position(cfg, x, y, z, hi);
                        let (v1, v2) = (vals[lo], vals[hi]);
                        let t = v1 / (v1 - v2);
                        mesh.vertices.push(p1 + (p2 - p1) * t);
                        (mesh.vertices.len() - 1) as u32
                    });
                }
                for tri in TRI_TABLE[case].chunks(3) {
                    if tri[0] < 0 {
                        break;
                    }
                    let t = [tri[0], tri[2], tri[1]].map(|e| local[e as usize]);
                    mesh.triangles.push(t);
                }
            }
        }
    }
    mesh
}

fn corner_position(cfg: &VolumeConfig, x: usize, y: usize, z: usize, corner: usize) -> Point3 {
    let [dx, dy, dz] = CORNERS[corner];
    cfg.center(x + dx, y + dy, z + dz)
}

/// Ungated extraction of the zero level set of a sampled field.
pub fn marching_cubes_field(cfg: &VolumeConfig, values: &[f64]) -> TriangleMesh {
    assert_eq!(values.len(), cfg.voxel_count(), "one value per voxel");
    marching_cubes_with(cfg, |i| values[i], |_, _| true)
}

/// Extraction from a probabilistic volume. `Baseline` gates on the
/// observation count instead.
pub fn marching_cubes(volume: &PsdfVolume, gate: &ExtractionGate) -> TriangleMesh {
    let v = volume.voxels();
    match gate.mode {
        GateMode::Probabilistic => {
            marching_cubes_with(volume.config(), |i| v[i].mu, |i, j| edge_crossing(&v[i], &v[j], gate))
        }
        GateMode::Baseline { w_thr } => marching_cubes_with(
            volume.config(),
            |i| v[i].mu,
            |i, j| v[i].observed >= w_thr.max(1) && v[j].observed >= w_thr.max(1),
        ),
    }
}

/// Extraction from a TSDF volume; crossings need both weights ≥ `w_thr`
/// (at least 1).
pub fn marching_cubes_tsdf(volume: &TsdfVolume, w_thr: u32) -> TriangleMesh {
    let v = volume.voxels();
    let w = w_thr.max(1);
    marching_cubes_with(volume.config(), |i| v[i].value, |i, j| v[i].weight >= w && v[j].weight >= w)
}

/// Vertex positions, in order.
pub fn mesh_to_cloud(mesh: &TriangleMesh) -> Vec<Point3> {
    mesh.vertices.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::SdfGrid;
    use proptest::prelude::*;

    fn vx(mu: f64, sigma: f64, inlier: f64) -> PsdfVoxel {
        PsdfVoxel {
            mu,
            sigma2: sigma * sigma,
            a: inlier * 10.0,
            b: (1.0 - inlier) * 10.0,
            observed: 5,
        }
    }

    #[test]
    fn edge_examples() {
        let g = ExtractionGate::probabilistic(0.5, 0.6);
        assert!(edge_crossing(&vx(-0.2, 0.1, 0.9), &vx(0.3, 0.1, 0.9), &g));
        assert!(!edge_crossing(&vx(0.2, 0.1, 0.9), &vx(0.3, 0.1, 0.9), &g));
        assert!(!edge_crossing(&vx(-0.2, 0.1, 0.9), &vx(0.3, 0.1, 0.4), &g));
        assert!(!edge_crossing(&vx(-0.2, 0.6, 0.9), &vx(0.3, 0.1, 0.9), &g));
    }

    fn grid(n: usize, voxel: f64, origin: f64) -> VolumeConfig {
        VolumeConfig {
            origin: [origin; 3],
            voxel_size: voxel,
            dims: [n; 3],
            ..VolumeConfig::default()
        }
    }

    fn sample(cfg: &VolumeConfig, f: impl Fn(&Point3) -> f64) -> Vec<f64> {
        (0..cfg.voxel_count())
            .map(|i| {
                let [x, y, z] = cfg.coords(i);
                f(&cfg.center(x, y, z))
            })
            .collect()
    }

    #[test]
    fn sphere_is_closed_and_accurate() {
        let cfg = grid(48, 0.5, -12.0);
        let r = 9.3;
        let vals = sample(&cfg, |p| p.norm() - r);
        let m = marching_cubes_field(&cfg, &vals);
        m.validate().unwrap();
        assert!(m.triangles.len() > 1000);
        assert_eq!(m.boundary_edge_count(), 0);
        assert_eq!(m.non_manifold_edge_count(), 0);
        assert_eq!(m.euler_characteristic(), 2);
        for v in &m.vertices {
            assert!((v.norm() - r).abs() < cfg.voxel_size);
        }
        // counter-clockwise from outside
        let vol = m.signed_volume();
        let exact = 4.0 / 3.0 * std::f64::consts::PI * r.powi(3);
        assert!(vol > 0.0 && (vol - exact).abs() / exact < 0.02, "{vol} vs {exact}");
    }

    #[test]
    fn all_positive_field_is_empty() {
        let cfg = grid(8, 1.0, 0.0);
        assert!(marching_cubes_field(&cfg, &vec![1.0; cfg.voxel_count()]).is_empty());
    }

    #[test]
    fn plane_is_exact() {
        let cfg = grid(10, 1.0, 5.3);
        let vals = sample(&cfg, |p| p.z - 10.0);
        let m = marching_cubes_field(&cfg, &vals);
        assert!(!m.is_empty());
        for v in &m.vertices {
            assert!((v.z - 10.0).abs() < 1e-6);
        }
        // normals point toward +z, the positive side
        for t in &m.triangles {
            let [a, b, c] = t.map(|i| m.vertices[i as usize]);
            assert!((b - a).cross(&(c - a)).z > 0.0);
        }
    }

    #[test]
    fn linear_fields_interpolate_exactly() {
        let cfg = grid(9, 0.7, -3.0);
        let n = Point3::new(0.3, -0.5, 0.81).normalize();
        let vals = sample(&cfg, |p| p.dot(&n) - 0.37);
        let m = marching_cubes_field(&cfg, &vals);
        assert!(!m.is_empty());
        for v in &m.vertices {
            assert!((v.dot(&n) - 0.37).abs() < 1e-6);
        }
    }

    fn psdf_from(cfg: &VolumeConfig, f: impl Fn(&Point3) -> f64, sigma: f64, inlier: f64) -> PsdfVolume {
        let mut vol = PsdfVolume::new(*cfg).unwrap();
        let vals = sample(cfg, f);
        for (v, mu) in vol.voxels_mut().iter_mut().zip(vals) {
            *v = vx(mu, sigma, inlier);
        }
        vol
    }

    #[test]
    fn permissive_gate_equals_ungated() {
        let cfg = grid(24, 0.5, -6.0);
        let f = |p: &Point3| (p - Point3::new(0.1, 0.2, -0.05)).norm() - 4.1;
        let vol = psdf_from(&cfg, f, 3.0, 0.01);
        let gated = marching_cubes(&vol, &ExtractionGate::permissive());
        assert_eq!(gated, marching_cubes_field(&cfg, &sample(&cfg, f)));
        assert!(marching_cubes(&vol, &ExtractionGate::default()).is_empty());
    }

    #[test]
    fn rejected_voxel_drops_whole_cubes() {
        let cfg = grid(12, 1.0, -5.5);
        let f = |p: &Point3| p.z;
        let mut vol = psdf_from(&cfg, f, 0.1, 0.9);
        let full = marching_cubes(&vol, &ExtractionGate::default());
        let i = cfg.index(5, 5, 5);
        vol.voxels_mut()[i].b = 1e3;
        let holed = marching_cubes(&vol, &ExtractionGate::default());
        assert_eq!(full.triangles.len() - holed.triangles.len(), 4 * 2);
    }

    #[test]
    fn tsdf_weight_gate() {
        let cfg = grid(10, 1.0, -4.5);
        let mut vol = TsdfVolume::new(cfg).unwrap();
        let vals = sample(&cfg, |p| p.z.clamp(-1.5, 1.5));
        for (v, val) in vol.voxels_mut().iter_mut().zip(vals) {
            v.value = val;
            v.weight = 2;
        }
        assert!(!marching_cubes_tsdf(&vol, 1).is_empty());
        assert!(marching_cubes_tsdf(&vol, 3).is_empty());
        assert!(vol.sdf(0).is_some());
    }

    #[test]
    fn cloud_is_vertex_list() {
        let cfg = grid(16, 1.0, -8.0);
        let m = marching_cubes_field(&cfg, &sample(&cfg, |p| p.norm() - 5.0));
        let cloud = mesh_to_cloud(&m);
        assert_eq!(cloud.len(), m.vertices.len());
        for (a, b) in cloud.iter().zip(&m.vertices) {
            assert_eq!(a.x.to_bits(), b.x.to_bits());
        }
        assert!(mesh_to_cloud(&TriangleMesh::default()).is_empty());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn loosening_gates_never_removes_crossings(
            mu1 in -2.0f64..2.0, mu2 in -2.0f64..2.0,
            s1 in 0.01f64..3.0, s2 in 0.01f64..3.0,
            p1 in 0.01f64..0.99, p2 in 0.01f64..0.99,
            st in 0.01f64..3.0, dst in 0.0f64..3.0,
            pt in 0.01f64..0.99, dpt in 0.0f64..1.0,
        ) {
            let (a, b) = (vx(mu1, s1, p1), vx(mu2, s2, p2));
            let tight = ExtractionGate::probabilistic(st, pt);
            let loose = ExtractionGate::probabilistic(st + dst, (pt - dpt).max(1e-6));
            if edge_crossing(&a, &b, &tight) {
                prop_assert!(edge_crossing(&a, &b, &loose));
            }
        }
    }
}
