//! Vertex-based reconstruction metrics against a ground-truth mesh.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::Point3;
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::spatial::KdTree;

/// Inlier distance threshold, mm.
pub const DEFAULT_INLIER_THRESHOLD: f64 = 2.0;

/// Distance from each source point to its nearest target point.
pub fn closest_point_distances(source: &[Point3], target: &[Point3]) -> Result<Vec<f64>> {
    if target.is_empty() {
        return Err(Error::Empty("target point set"));
    }
    let tree = KdTree::new(target);
    Ok(nearest_with(&tree, source).into_iter().map(|(_, d)| d).collect())
}

fn nearest_with(tree: &KdTree, source: &[Point3]) -> Vec<(usize, f64)> {
    source
        .par_iter()
        .map(|p| {
            let (i, d2) = tree.nearest(p).expect("non-empty tree");
            (i, d2.sqrt())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricCounts {
    pub n_inliers: usize,
    pub n_outliers: usize,
    pub n_gt_vertices: usize,
    pub n_rec_vertices: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Mean reconstructed-to-ground-truth distance over inliers; `None` when
    /// there are no inliers.
    pub mean_p2p: Option<f64>,
    pub outlier_pct: f64,
    pub completeness_pct: f64,
    pub inlier_threshold: f64,
    pub counts: MetricCounts,
    /// Ground-truth vertices completed within the threshold.
    pub n_completed: usize,
    pub masked: bool,
}

/// Per-vertex distances of the reconstruction to the ground truth, plus the
/// index of the matched ground-truth vertex.
struct Correspondences {
    rec_to_gt: Vec<(usize, f64)>,
    gt_to_rec: Vec<f64>,
}

fn correspond(rec: &[Point3], gt: &[Point3]) -> Correspondences {
    let gt_tree = KdTree::new(gt);
    let rec_to_gt = nearest_with(&gt_tree, rec);
    let gt_to_rec = if rec.is_empty() {
        vec![f64::INFINITY; gt.len()]
    } else {
        let rec_tree = KdTree::new(rec);
        nearest_with(&rec_tree, gt).into_iter().map(|(_, d)| d).collect()
    };
    Correspondences { rec_to_gt, gt_to_rec }
}

/// All three metrics at once.
///
/// With `gt_mask`, only masked ground-truth vertices count toward
/// completeness and the denominator, and reconstructed vertices whose
/// nearest ground-truth vertex is unmasked are ignored.
pub fn evaluate(
    rec: &TriangleMesh,
    gt: &TriangleMesh,
    threshold: f64,
    gt_mask: Option<&[bool]>,
) -> Result<MetricReport> {
    if gt.vertices.is_empty() {
        return Err(Error::Empty("ground-truth mesh"));
    }
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument("inlier threshold must be positive".into()));
    }
    if let Some(m) = gt_mask {
        if m.len() != gt.vertices.len() {
            return Err(Error::InvalidArgument(format!(
                "mask has {} entries for {} ground-truth vertices",
                m.len(),
                gt.vertices.len()
            )));
        }
    }
    let keep = |i: usize| gt_mask.map_or(true, |m| m[i]);
    let c = correspond(&rec.vertices, &gt.vertices);

    let mut inlier_sum = 0.0;
    let (mut n_in, mut n_out, mut n_rec) = (0usize, 0usize, 0usize);
    for &(j, d) in &c.rec_to_gt {
        if !keep(j) {
            continue;
        }
        n_rec += 1;
        if d < threshold {
            inlier_sum += d;
            n_in += 1;
        } else {
            n_out += 1;
        }
    }
    let mut n_gt = 0usize;
    let mut n_done = 0usize;
    for (i, &d) in c.gt_to_rec.iter().enumerate() {
        if keep(i) {
            n_gt += 1;
            if d < threshold {
                n_done += 1;
            }
        }
    }
    if n_gt == 0 {
        return Err(Error::Empty("masked ground-truth vertex set"));
    }
    Ok(MetricReport {
        mean_p2p: (n_in > 0).then(|| inlier_sum / n_in as f64),
        outlier_pct: 100.0 * n_out as f64 / n_gt as f64,
        completeness_pct: 100.0 * n_done as f64 / n_gt as f64,
        inlier_threshold: threshold,
        counts: MetricCounts {
            n_inliers: n_in,
            n_outliers: n_out,
            n_gt_vertices: n_gt,
            n_rec_vertices: n_rec,
        },
        n_completed: n_done,
        masked: gt_mask.is_some(),
    })
}

fn require_both(rec: &TriangleMesh, gt: &TriangleMesh) -> Result<()> {
    if rec.vertices.is_empty() {
        return Err(Error::Empty("reconstructed mesh"));
    }
    if gt.vertices.is_empty() {
        return Err(Error::Empty("ground-truth mesh"));
    }
    Ok(())
}

/// Mean inlier distance; `None` when nothing lies within `threshold`.
pub fn mean_p2p(rec: &TriangleMesh, gt: &TriangleMesh, threshold: f64) -> Result<Option<f64>> {
    require_both(rec, gt)?;
    Ok(evaluate(rec, gt, threshold, None)?.mean_p2p)
}

/// Reconstructed vertices at least `threshold` from the ground truth, as a
/// percentage of the ground-truth vertex count.
pub fn outlier_percentage(rec: &TriangleMesh, gt: &TriangleMesh, threshold: f64) -> Result<f64> {
    require_both(rec, gt)?;
    Ok(evaluate(rec, gt, threshold, None)?.outlier_pct)
}

/// Percentage of ground-truth vertices with a reconstructed vertex closer
/// than `threshold`. An empty reconstruction completes nothing.
pub fn scene_completeness(rec: &TriangleMesh, gt: &TriangleMesh, threshold: f64) -> Result<f64> {
    Ok(evaluate(rec, gt, threshold, None)?.completeness_pct)
}

/// Symmetric mean closest-vertex distance, no threshold.
pub fn mesh_mean_distance(a: &TriangleMesh, b: &TriangleMesh) -> Result<f64> {
    require_both(a, b)?;
    let mean = |xs: Vec<f64>| xs.iter().sum::<f64>() / xs.len() as f64;
    let ab = mean(closest_point_distances(&a.vertices, &b.vertices)?);
    let ba = mean(closest_point_distances(&b.vertices, &a.vertices)?);
    Ok(0.5 * (ab + ba))
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn table_header() -> String {
        format!(
            "{:<16} {:>14} {:>12} {:>14}",
            "method", "mean p2p (mm)", "outliers %", "completeness %"
        )
    }

    pub fn table_row(&self, label: &str) -> String {
        let p2p = self.mean_p2p.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"));
        format!(
            "{:<16} {:>14} {:>12.2} {:>14.2}",
            label, p2p, self.outlier_pct, self.completeness_pct
        )
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", Self::table_header())?;
        write!(f, "{}", self.table_row("reconstruction"))
    }
}

/// Per-vertex distance to the ground truth, for heatmap export.
pub fn vertex_errors(rec: &TriangleMesh, gt: &TriangleMesh) -> Result<Vec<f64>> {
    closest_point_distances(&rec.vertices, &gt.vertices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::squared_distance;
    use nalgebra::{Rotation3, Unit, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(points: Vec<Point3>) -> TriangleMesh {
        TriangleMesh {
            vertices: points,
            triangles: Vec::new(),
        }
    }

    fn flat_grid(n: usize, spacing: f64, z: f64) -> Vec<Point3> {
        let mut out = Vec::new();
        for j in 0..n {
            for i in 0..n {
                out.push(Point3::new(i as f64 * spacing, j as f64 * spacing, z));
            }
        }
        out
    }

    #[test]
    fn closest_point_examples() {
        let d = closest_point_distances(&[Point3::zeros()], &[Point3::new(3.0, 4.0, 0.0)]).unwrap();
        assert_eq!(d, vec![5.0]);
        assert!(closest_point_distances(&[Point3::zeros()], &[]).is_err());
        let pts = flat_grid(10, 1.0, 0.0);
        assert!(closest_point_distances(&pts, &pts).unwrap().iter().all(|d| *d == 0.0));
    }

    #[test]
    fn closest_point_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut rand_pts = |n: usize| -> Vec<Point3> {
            (0..n)
                .map(|_| Point3::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), rng.gen_range(-5.0..5.0)))
                .collect()
        };
        let src = rand_pts(2000);
        let dst = rand_pts(2000);
        let fast = closest_point_distances(&src, &dst).unwrap();
        for (p, d) in src.iter().zip(fast) {
            let brute = dst.iter().map(|q| squared_distance(p, q)).fold(f64::INFINITY, f64::min).sqrt();
            assert!((d - brute).abs() <= 1e-12);
        }
    }

    #[test]
    fn identical_meshes() {
        let m = cloud(flat_grid(20, 0.5, 1.0));
        let r = evaluate(&m, &m, 2.0, None).unwrap();
        assert_eq!(r.mean_p2p, Some(0.0));
        assert_eq!(r.outlier_pct, 0.0);
        assert_eq!(r.completeness_pct, 100.0);
        assert_eq!(mesh_mean_distance(&m, &m).unwrap(), 0.0);
    }

    #[test]
    fn translated_grid() {
        // grid in the x = 0 plane, moved along its normal
        let gt = cloud(flat_grid(200, 0.05, 0.0).into_iter().map(|p| Point3::new(0.0, p.x, p.y)).collect());
        let rec = cloud(gt.vertices.iter().map(|p| p + Vector3::new(0.5, 0.0, 0.0)).collect());
        let m = mean_p2p(&rec, &gt, 2.0).unwrap().unwrap();
        assert!((m - 0.5).abs() / 0.5 < 0.01, "{m}");
    }

    #[test]
    fn parallel_planes() {
        let a = cloud(flat_grid(60, 0.1, 0.0));
        let b = cloud(flat_grid(60, 0.1, 1.0));
        assert!((mesh_mean_distance(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(mesh_mean_distance(&a, &b).unwrap(), mesh_mean_distance(&b, &a).unwrap());
    }

    #[test]
    fn one_outlier_in_hundred() {
        let gt = cloud(flat_grid(10, 1.0, 0.0));
        let mut rec = gt.clone();
        rec.vertices[37].z = 10.0;
        assert_eq!(outlier_percentage(&rec, &gt, 2.0).unwrap(), 1.0);
    }

    #[test]
    fn empty_reconstruction() {
        let gt = cloud(flat_grid(5, 1.0, 0.0));
        let r = evaluate(&TriangleMesh::default(), &gt, 2.0, None).unwrap();
        assert_eq!(r.completeness_pct, 0.0);
        assert_eq!(r.mean_p2p, None);
        assert_eq!(scene_completeness(&TriangleMesh::default(), &gt, 2.0).unwrap(), 0.0);
        assert!(mean_p2p(&TriangleMesh::default(), &gt, 2.0).is_err());
    }

    #[test]
    fn mask_restricts_both_directions() {
        let mut pts = flat_grid(10, 1.0, 0.0);
        pts.extend(flat_grid(10, 1.0, 50.0));
        let gt = cloud(pts);
        let mask: Vec<bool> = (0..200).map(|i| i < 100).collect();
        let rec = cloud(flat_grid(10, 1.0, 50.0));
        let r = evaluate(&rec, &gt, 2.0, Some(&mask)).unwrap();
        assert_eq!(r.counts.n_rec_vertices, 0);
        assert_eq!(r.completeness_pct, 0.0);
        assert_eq!(r.counts.n_gt_vertices, 100);
        assert!(evaluate(&rec, &gt, 2.0, Some(&mask[..5])).is_err());
    }

    #[test]
    fn rigid_invariance_and_threshold_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gt: Vec<Point3> = (0..800)
            .map(|_| Point3::new(rng.gen_range(0.0..30.0), rng.gen_range(0.0..30.0), rng.gen_range(0.0..2.0)))
            .collect();
        let rec: Vec<Point3> = gt
            .iter()
            .map(|p| p + Vector3::new(rng.gen_range(-2.0..2.0), 0.0, rng.gen_range(-2.0..2.0)))
            .collect();
        let rot = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::new(1.0, 2.0, 3.0)), 0.7);
        let t = Vector3::new(100.0, -4.0, 9.0);
        let mv = |v: &[Point3]| cloud(v.iter().map(|p| rot * p + t).collect());
        let a = evaluate(&cloud(rec.clone()), &cloud(gt.clone()), 1.5, None).unwrap();
        let b = evaluate(&mv(&rec), &mv(&gt), 1.5, None).unwrap();
        assert!((a.mean_p2p.unwrap() - b.mean_p2p.unwrap()).abs() < 1e-9);
        assert_eq!(a.counts, b.counts);
        let mut last: Option<MetricReport> = None;
        for thr in [0.5, 1.0, 1.5, 2.0, 3.0] {
            let r = evaluate(&cloud(rec.clone()), &cloud(gt.clone()), thr, None).unwrap();
            if let Some(p) = &last {
                assert!(r.completeness_pct >= p.completeness_pct);
                assert!(r.outlier_pct <= p.outlier_pct);
            }
            last = Some(r);
        }
    }

    #[test]
    fn report_serializes() {
        let m = cloud(flat_grid(3, 1.0, 0.0));
        let r = evaluate(&m, &m, 2.0, None).unwrap();
        let back: MetricReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert!(r.to_string().contains("completeness"));
    }
}
