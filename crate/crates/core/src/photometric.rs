//! Per-pixel confidence of an assigned disparity from the active-stereo cost
//! curve, and a trained mapping from confidence to inlier probability.
//!
//! Costs are `1 - NCC` over a square window, so they live in `[0, 2]`. The
//! MLM term softmax-normalizes negative costs over the disparity hypotheses;
//! the final confidence multiplies it by the correlation strength
//! `(NCC + 1) / 2` at the assigned disparity.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{DisparityMap, GrayImage, ScalarMap};
use crate::error::{Error, Result};

/// Per-pixel confidence in `[0, 1]`, invalid where no disparity was assigned.
pub type ConfidenceMap = ScalarMap;

/// Windows whose intensity variance falls below this are treated as textureless.
const MIN_WINDOW_VARIANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MlmCandidates {
    /// Every integer hypothesis in the search range.
    All,
    /// Only local minima of the cost curve (plus the assigned disparity).
    LocalMinima,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhotometricConfig {
    pub window_radius: usize,
    pub sigma_mlm: f64,
    pub min_disparity: i32,
    pub max_disparity: i32,
    pub candidates: MlmCandidates,
}

impl Default for PhotometricConfig {
    fn default() -> Self {
        Self {
            window_radius: 3,
            sigma_mlm: 0.2,
            min_disparity: 0,
            max_disparity: 64,
            candidates: MlmCandidates::All,
        }
    }
}

impl PhotometricConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_radius < 1 {
            return Err(Error::InvalidArgument("window_radius must be >= 1".into()));
        }
        if !(self.sigma_mlm > 0.0 && self.sigma_mlm.is_finite()) {
            return Err(Error::InvalidArgument("sigma_mlm must be positive".into()));
        }
        if self.min_disparity > self.max_disparity || self.min_disparity < 0 {
            return Err(Error::InvalidArgument(format!(
                "empty disparity search range [{}, {}]",
                self.min_disparity, self.max_disparity
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowError {
    OutOfBounds,
    /// Zero intensity variance in the left or right window.
    Degenerate,
}

#[inline]
fn window_in_bounds(img: &GrayImage, x: i64, y: i64, r: i64) -> bool {
    x - r >= 0 && y - r >= 0 && x + r < img.width as i64 && y + r < img.height as i64
}

/// Normalized cross correlation between the left window at `(x, y)` and the
/// right window at `(x - d, y)`.
pub fn ncc(
    left: &GrayImage,
    right: &GrayImage,
    x: usize,
    y: usize,
    d: i32,
    window_radius: usize,
) -> Result<f64, WindowError> {
    let r = window_radius as i64;
    let (xl, yl) = (x as i64, y as i64);
    let xr = xl - d as i64;
    if !window_in_bounds(left, xl, yl, r) || !window_in_bounds(right, xr, yl, r) {
        return Err(WindowError::OutOfBounds);
    }
    let n = ((2 * r + 1) * (2 * r + 1)) as f64;
    let (mut sl, mut sr) = (0.0, 0.0);
    for dy in -r..=r {
        for dx in -r..=r {
            sl += left.get((xl + dx) as usize, (yl + dy) as usize);
            sr += right.get((xr + dx) as usize, (yl + dy) as usize);
        }
    }
    let (ml, mr) = (sl / n, sr / n);
    let (mut cov, mut vl, mut vr) = (0.0, 0.0, 0.0);
    for dy in -r..=r {
        for dx in -r..=r {
            let a = left.get((xl + dx) as usize, (yl + dy) as usize) - ml;
            let b = right.get((xr + dx) as usize, (yl + dy) as usize) - mr;
            cov += a * b;
            vl += a * a;
            vr += b * b;
        }
    }
    if vl / n < MIN_WINDOW_VARIANCE || vr / n < MIN_WINDOW_VARIANCE {
        return Err(WindowError::Degenerate);
    }
    Ok((cov / (vl * vr).sqrt()).clamp(-1.0, 1.0))
}

/// Cost as a function of integer disparity for one pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct CostCurve {
    pub x: usize,
    pub y: usize,
    pub hypotheses: Vec<i32>,
    /// `1 - NCC`, in `[0, 2]`.
    pub costs: Vec<f64>,
    /// Index of the assigned disparity within `hypotheses`.
    pub assigned: usize,
}

impl CostCurve {
    pub fn new(x: usize, y: usize, hypotheses: Vec<i32>, costs: Vec<f64>, assigned: usize) -> Result<Self> {
        if hypotheses.len() != costs.len() {
            return Err(Error::InvalidArgument("hypotheses and costs differ in length".into()));
        }
        if hypotheses.len() < 2 {
            return Err(Error::CurveTooShort(hypotheses.len()));
        }
        if assigned >= costs.len() {
            return Err(Error::InvalidArgument("assigned index outside curve".into()));
        }
        if let Some(c) = costs.iter().find(|c| !(0.0..=2.0).contains(*c)) {
            return Err(Error::InvalidArgument(format!("cost {c} outside [0, 2]")));
        }
        Ok(Self {
            x,
            y,
            hypotheses,
            costs,
            assigned,
        })
    }

    pub fn assigned_cost(&self) -> f64 {
        self.costs[self.assigned]
    }

    pub fn assigned_disparity(&self) -> i32 {
        self.hypotheses[self.assigned]
    }

    /// Hypothesis with the lowest cost (lowest disparity on ties).
    pub fn argmin(&self) -> i32 {
        let mut best = 0;
        for i in 1..self.costs.len() {
            if self.costs[i] < self.costs[best] {
                best = i;
            }
        }
        self.hypotheses[best]
    }

}

/// Samples the cost curve of pixel `(x, y)` over the configured search range.
///
/// Hypotheses whose windows leave the image or are textureless are dropped.
/// The assigned disparity is the nearest integer to `disparity`.
pub fn build_cost_curve(
    left: &GrayImage,
    right: &GrayImage,
    x: usize,
    y: usize,
    disparity: f64,
    config: &PhotometricConfig,
) -> Result<CostCurve> {
    let d1 = disparity.round() as i32;
    let mut hypotheses = Vec::new();
    let mut costs = Vec::new();
    for d in config.min_disparity..=config.max_disparity {
        if let Ok(v) = ncc(left, right, x, y, d, config.window_radius) {
            hypotheses.push(d);
            costs.push(1.0 - v);
        }
    }
    if hypotheses.len() < 2 {
        return Err(Error::CurveTooShort(hypotheses.len()));
    }
    let assigned = hypotheses
        .iter()
        .position(|&d| d == d1)
        .ok_or(Error::Degenerate("assigned disparity has no usable window"))?;
    Ok(CostCurve {
        x,
        y,
        hypotheses,
        costs,
        assigned,
    })
}

/// Maximum likelihood measure of the assigned disparity, in `(0, 1]`.
pub fn mlm_confidence(curve: &CostCurve, sigma_mlm: f64, candidates: MlmCandidates) -> f64 {
    mlm_from_costs(&curve.costs, curve.assigned, sigma_mlm, candidates)
}

fn is_local_min(costs: &[f64], i: usize) -> bool {
    (i == 0 || costs[i] <= costs[i - 1]) && (i + 1 == costs.len() || costs[i] <= costs[i + 1])
}

fn mlm_from_costs(costs: &[f64], assigned: usize, sigma_mlm: f64, candidates: MlmCandidates) -> f64 {
    let inv = 1.0 / (2.0 * sigma_mlm * sigma_mlm);
    let c1 = costs[assigned];
    let in_set = |i: usize| match candidates {
        MlmCandidates::All => true,
        MlmCandidates::LocalMinima => i == assigned || is_local_min(costs, i),
    };
    // shift by the smallest cost so the largest term is exp(0)
    let cmin = (0..costs.len())
        .filter(|&i| in_set(i))
        .map(|i| costs[i])
        .fold(f64::INFINITY, f64::min);
    let denom: f64 = (0..costs.len())
        .filter(|&i| in_set(i))
        .map(|i| (-(costs[i] - cmin) * inv).exp())
        .sum();
    ((-(c1 - cmin) * inv).exp() / denom).min(1.0)
}

/// `(NCC(d1) + 1) / 2 * MLM`, in `[0, 1]`.
pub fn combined_confidence(curve: &CostCurve, sigma_mlm: f64, candidates: MlmCandidates) -> f64 {
    let ncc1 = 1.0 - curve.assigned_cost();
    let strength = (ncc1 + 1.0) / 2.0;
    (strength * mlm_confidence(curve, sigma_mlm, candidates)).clamp(0.0, 1.0)
}

/// Summed-area table with one row/column of zero padding.
struct Integral {
    stride: usize,
    data: Vec<f64>,
}

impl Integral {
    fn new(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let stride = w + 1;
        let mut data = vec![0.0; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += f(x, y);
                data[(y + 1) * stride + x + 1] = data[y * stride + x + 1] + row;
            }
        }
        Self { stride, data }
    }

    /// Sum over the square window of radius `r` centered at `(x, y)`.
    #[inline]
    fn window(&self, x: usize, y: usize, r: usize) -> f64 {
        let (x0, y0, x1, y1) = (x - r, y - r, x + r + 1, y + r + 1);
        let s = self.stride;
        self.data[y1 * s + x1] - self.data[y0 * s + x1] - self.data[y1 * s + x0]
            + self.data[y0 * s + x0]
    }
}

/// Confidence for every pixel with a valid disparity.
///
/// Window sums come from summed-area tables; only the cross-correlation term
/// is accumulated per hypothesis. Pixels whose curve is too short or whose
/// assigned window is unusable are left invalid.
pub fn compute_confidence_map(
    left: &GrayImage,
    right: &GrayImage,
    disparity: &DisparityMap,
    config: &PhotometricConfig,
) -> Result<ConfidenceMap> {
    config.validate()?;
    let dims = left.dims();
    if right.dims() != dims {
        return Err(Error::ShapeMismatch {
            what: "right image",
            expected: dims,
            found: right.dims(),
        });
    }
    disparity.ensure_dims("disparity map", dims)?;
    let (w, h) = dims;
    let r = config.window_radius;
    let n = ((2 * r + 1) * (2 * r + 1)) as f64;
    let sum_l = Integral::new(w, h, |x, y| left.get(x, y));
    let sq_l = Integral::new(w, h, |x, y| left.get(x, y).powi(2));
    let sum_r = Integral::new(w, h, |x, y| right.get(x, y));
    let sq_r = Integral::new(w, h, |x, y| right.get(x, y).powi(2));

    let rows: Vec<Vec<Option<f64>>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = vec![None; w];
            if y < r || y + r >= h {
                return row;
            }
            let mut hyps = Vec::new();
            let mut costs = Vec::new();
            for x in r..w.saturating_sub(r) {
                let Some(d) = disparity.get(x, y) else {
                    continue;
                };
                let ml = sum_l.window(x, y, r) / n;
                let vl = sq_l.window(x, y, r) / n - ml * ml;
                if vl < MIN_WINDOW_VARIANCE {
                    continue;
                }
                hyps.clear();
                costs.clear();
                for dh in config.min_disparity..=config.max_disparity {
                    let xr = x as i64 - dh as i64;
                    if xr < r as i64 || xr + r as i64 >= w as i64 {
                        continue;
                    }
                    let xr = xr as usize;
                    let mr = sum_r.window(xr, y, r) / n;
                    let vr = sq_r.window(xr, y, r) / n - mr * mr;
                    if vr < MIN_WINDOW_VARIANCE {
                        continue;
                    }
                    let mut cross = 0.0;
                    for wy in y - r..=y + r {
                        let lrow = &left.data[wy * w..wy * w + w];
                        let rrow = &right.data[wy * w..wy * w + w];
                        for k in 0..=2 * r {
                            cross += lrow[x - r + k] * rrow[xr - r + k];
                        }
                    }
                    let v = ((cross / n - ml * mr) / (vl * vr).sqrt()).clamp(-1.0, 1.0);
                    hyps.push(dh);
                    costs.push(1.0 - v);
                }
                if hyps.len() < 2 {
                    continue;
                }
                let d1 = d.round() as i32;
                let Some(assigned) = hyps.iter().position(|&v| v == d1) else {
                    continue;
                };
                let c1 = costs[assigned];
                let mlm = mlm_from_costs(&costs, assigned, config.sigma_mlm, config.candidates);
                let strength = (2.0 - c1) / 2.0;
                row[x] = Some((strength * mlm).clamp(0.0, 1.0));
            }
            row
        })
        .collect();
    ScalarMap::from_vec(w, h, rows.into_iter().flatten().collect())
}

/// Histogram model of `p(C | inlier)`, `p(C | outlier)` and the prior
/// `p(inlier)`, used to turn a confidence into an inlier probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InlierMapping {
    pub bin_edges: Vec<f64>,
    pub p_c_given_inlier: Vec<f64>,
    pub p_c_given_outlier: Vec<f64>,
    pub p_inlier: f64,
}

pub const DEFAULT_BINS: usize = 32;

impl InlierMapping {
    /// Trains uniform-bin histograms on `[0, 1]` with add-one smoothing.
    pub fn train(samples: &[(f64, bool)], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidArgument("need at least one bin".into()));
        }
        let mut inl = vec![1.0; bins];
        let mut out = vec![1.0; bins];
        let (mut n_in, mut n_out) = (0usize, 0usize);
        for &(c, is_inlier) in samples {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::InvalidArgument(format!("confidence {c} outside [0, 1]")));
            }
            let b = bin_of(c, bins);
            if is_inlier {
                inl[b] += 1.0;
                n_in += 1;
            } else {
                out[b] += 1.0;
                n_out += 1;
            }
        }
        if n_in == 0 || n_out == 0 {
            return Err(Error::CannotTrain(format!(
                "need both classes, got {n_in} inliers and {n_out} outliers"
            )));
        }
        let norm = |v: Vec<f64>| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect::<Vec<_>>()
        };
        Ok(Self {
            bin_edges: (0..=bins).map(|i| i as f64 / bins as f64).collect(),
            p_c_given_inlier: norm(inl),
            p_c_given_outlier: norm(out),
            p_inlier: n_in as f64 / (n_in + n_out) as f64,
        })
    }

    pub fn bins(&self) -> usize {
        self.p_c_given_inlier.len()
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.bins();
        if b == 0 || self.p_c_given_outlier.len() != b || self.bin_edges.len() != b + 1 {
            return Err(Error::InvalidArgument("inconsistent histogram sizes".into()));
        }
        if !self.bin_edges.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidArgument("bin edges must increase".into()));
        }
        for hist in [&self.p_c_given_inlier, &self.p_c_given_outlier] {
            let s: f64 = hist.iter().sum();
            if (s - 1.0).abs() > 1e-9 || hist.iter().any(|p| !(*p > 0.0)) {
                return Err(Error::InvalidArgument(
                    "likelihood histograms must be positive and sum to 1".into(),
                ));
            }
        }
        if !(self.p_inlier > 0.0 && self.p_inlier < 1.0) {
            return Err(Error::InvalidArgument("p_inlier must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Index of the bin containing `c`.
    pub fn bin(&self, c: f64) -> usize {
        let c = c.clamp(self.bin_edges[0], self.bin_edges[self.bins()]);
        // last edge is inclusive
        match self.bin_edges[1..].iter().position(|&e| c < e) {
            Some(i) => i,
            None => self.bins() - 1,
        }
    }

    /// Posterior inlier probability `p(i | C)` by Bayes' rule over the bin of `c`.
    pub fn inlier_probability(&self, c: f64) -> f64 {
        let b = self.bin(c);
        posterior(self.p_c_given_inlier[b], self.p_c_given_outlier[b], self.p_inlier)
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("mapping serializes")
    }

    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        let m: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        m.validate().map_err(|e| e.to_string())?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|msg| Error::format(path, msg))
    }
}

#[inline]
fn bin_of(c: f64, bins: usize) -> usize {
    ((c * bins as f64) as usize).min(bins - 1)
}

#[inline]
fn posterior(p_c_in: f64, p_c_out: f64, p_in: f64) -> f64 {
    let a = p_c_in * p_in;
    a / (a + p_c_out * (1.0 - p_in))
}

/// Free-function form of [`InlierMapping::train`].
pub fn train_inlier_mapping(samples: &[(f64, bool)], bins: usize) -> Result<InlierMapping> {
    InlierMapping::train(samples, bins)
}

/// Free-function form of [`InlierMapping::inlier_probability`].
pub fn confidence_to_inlier_prob(c: f64, mapping: &InlierMapping) -> f64 {
    mapping.inlier_probability(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn textured(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::new(w, h, (0..w * h).map(|_| rng.gen_range(0..256) as f64).collect()).unwrap()
    }

    fn shifted(src: &GrayImage, shift: usize) -> GrayImage {
        // right(x) = left(x + shift)
        GrayImage::from_fn(src.width, src.height, |x, y| {
            src.get((x + shift).min(src.width - 1), y)
        })
    }

    /// Plain double loop, independent of `ncc`'s two-pass form.
    fn reference_ncc(l: &[f64], r: &[f64]) -> f64 {
        let n = l.len() as f64;
        let ml = l.iter().sum::<f64>() / n;
        let mr = r.iter().sum::<f64>() / n;
        let sl = (l.iter().map(|v| (v - ml).powi(2)).sum::<f64>() / n).sqrt();
        let sr = (r.iter().map(|v| (v - mr).powi(2)).sum::<f64>() / n).sqrt();
        let mut acc = 0.0;
        for i in 0..l.len() {
            acc += (l[i] - ml) * (r[i] - mr);
        }
        acc / (n * sl * sr)
    }

    #[test]
    fn ncc_identical_and_anticorrelated() {
        let l = textured(9, 9, 1);
        assert!((ncc(&l, &l, 4, 4, 0, 3).unwrap() - 1.0).abs() < 1e-12);
        let inv = GrayImage::from_fn(9, 9, |x, y| 255.0 - l.get(x, y));
        assert!((ncc(&l, &inv, 4, 4, 0, 3).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn ncc_affine_example() {
        let l = GrayImage::new(3, 3, (1..=9).map(f64::from).collect()).unwrap();
        let r = GrayImage::from_fn(3, 3, |x, y| 2.0 * l.get(x, y) + 10.0);
        assert!((ncc(&l, &r, 1, 1, 0, 1).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ncc_matches_reference_on_random_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let l = GrayImage::new(7, 7, (0..49).map(|_| rng.gen_range(0.0..255.0)).collect())
                .unwrap();
            let r = GrayImage::new(7, 7, (0..49).map(|_| rng.gen_range(0.0..255.0)).collect())
                .unwrap();
            let got = ncc(&l, &r, 3, 3, 0, 3).unwrap();
            assert!((got - reference_ncc(&l.data, &r.data)).abs() < 1e-12);
        }
    }

    #[test]
    fn ncc_degenerate_and_bounds() {
        let flat = GrayImage::new(9, 9, vec![7.0; 81]).unwrap();
        let tex = textured(9, 9, 2);
        assert_eq!(ncc(&flat, &tex, 4, 4, 0, 3), Err(WindowError::Degenerate));
        assert_eq!(ncc(&tex, &flat, 4, 4, 0, 3), Err(WindowError::Degenerate));
        assert_eq!(ncc(&tex, &tex, 4, 4, 2, 3), Err(WindowError::OutOfBounds));
    }

    proptest! {
        #[test]
        fn ncc_affine_invariance(a in 0.1f64..10.0, b in -100.0f64..100.0, seed in 0u64..1000) {
            let l = textured(11, 11, seed);
            let r = textured(11, 11, seed + 1);
            let r2 = GrayImage::from_fn(11, 11, |x, y| a * r.get(x, y) + b);
            let l2 = GrayImage::from_fn(11, 11, |x, y| a * l.get(x, y) + b);
            let base = ncc(&l, &r, 5, 5, 0, 3).unwrap();
            prop_assert!((ncc(&l, &r2, 5, 5, 0, 3).unwrap() - base).abs() < 1e-9);
            prop_assert!((ncc(&l2, &r, 5, 5, 0, 3).unwrap() - base).abs() < 1e-9);
        }

        #[test]
        fn mlm_shift_invariant_and_decreasing(
            costs in proptest::collection::vec(0.0f64..1.5, 3..20),
            shift in 0.0f64..0.5,
            bump in 0.01f64..0.4,
        ) {
            let n = costs.len();
            let hyps: Vec<i32> = (0..n as i32).collect();
            let curve = CostCurve::new(0, 0, hyps.clone(), costs.clone(), 0).unwrap();
            let moved = CostCurve::new(0, 0, hyps.clone(), costs.iter().map(|c| c + shift).collect(), 0).unwrap();
            let base = mlm_confidence(&curve, 0.2, MlmCandidates::All);
            prop_assert!((mlm_confidence(&moved, 0.2, MlmCandidates::All) - base).abs() < 1e-12);
            let mut worse = costs.clone();
            worse[0] += bump;
            let worse = CostCurve::new(0, 0, hyps, worse, 0).unwrap();
            prop_assert!(mlm_confidence(&worse, 0.2, MlmCandidates::All) < base);
        }

        #[test]
        fn combined_in_unit_interval(costs in proptest::collection::vec(0.0f64..=2.0, 2..30), idx in 0usize..30) {
            let n = costs.len();
            let curve = CostCurve::new(0, 0, (0..n as i32).collect(), costs, idx % n).unwrap();
            for mode in [MlmCandidates::All, MlmCandidates::LocalMinima] {
                let c = combined_confidence(&curve, 0.2, mode);
                prop_assert!((0.0..=1.0).contains(&c));
            }
        }
    }

    #[test]
    fn mlm_examples() {
        let k = 40;
        let mut costs = vec![2.0; k];
        costs[3] = 0.0;
        let curve = CostCurve::new(0, 0, (0..k as i32).collect(), costs, 3).unwrap();
        let expected = 1.0 / (1.0 + (k as f64 - 1.0) * (-25.0f64).exp());
        let got = mlm_confidence(&curve, 0.2, MlmCandidates::All);
        assert!((got - expected).abs() < 1e-13, "{got} vs {expected}");

        let flat = CostCurve::new(0, 0, (0..7).collect(), vec![0.6; 7], 2).unwrap();
        assert_eq!(mlm_confidence(&flat, 0.2, MlmCandidates::All), 1.0 / 7.0);

        let mut two = vec![2.0; 10];
        two[2] = 0.0;
        two[7] = 0.0;
        let two = CostCurve::new(0, 0, (0..10).collect(), two, 2).unwrap();
        assert!((mlm_confidence(&two, 0.2, MlmCandidates::All) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn local_minima_mode_uses_fewer_terms() {
        let costs = vec![0.1, 0.3, 0.5, 0.2, 0.6, 0.9];
        let curve = CostCurve::new(0, 0, (0..6).collect(), costs, 0).unwrap();
        let all = mlm_confidence(&curve, 0.2, MlmCandidates::All);
        let mins = mlm_confidence(&curve, 0.2, MlmCandidates::LocalMinima);
        // minima are indices 0 and 3
        let inv: f64 = 1.0 / 0.08;
        let expected = 1.0 / (1.0 + (-(0.2 - 0.1) * inv).exp());
        assert!((mins - expected).abs() < 1e-12);
        assert!(mins > all);
    }

    #[test]
    fn combined_examples() {
        let mut costs = vec![2.0; 30];
        costs[10] = 0.0;
        let ideal = CostCurve::new(0, 0, (0..30).collect(), costs, 10).unwrap();
        assert!((combined_confidence(&ideal, 0.2, MlmCandidates::All) - 1.0).abs() < 1e-9);

        let mut anti = vec![0.5; 10];
        anti[4] = 2.0;
        let anti = CostCurve::new(0, 0, (0..10).collect(), anti, 4).unwrap();
        assert_eq!(combined_confidence(&anti, 0.2, MlmCandidates::All), 0.0);
    }

    #[test]
    fn cost_curve_finds_shift() {
        let l = textured(80, 20, 9);
        let r = shifted(&l, 10);
        let cfg = PhotometricConfig {
            min_disparity: 0,
            max_disparity: 25,
            ..Default::default()
        };
        let curve = build_cost_curve(&l, &r, 50, 10, 10.2, &cfg).unwrap();
        assert_eq!(curve.argmin(), 10);
        assert!(curve.costs[curve.assigned] < 1e-12);
        assert_eq!(curve.assigned_disparity(), 10);
    }

    #[test]
    fn cost_curve_constant_images_too_short() {
        let flat = GrayImage::new(40, 20, vec![3.0; 800]).unwrap();
        let cfg = PhotometricConfig {
            max_disparity: 10,
            ..Default::default()
        };
        assert!(matches!(
            build_cost_curve(&flat, &flat, 20, 10, 4.0, &cfg),
            Err(Error::CurveTooShort(0))
        ));
    }

    #[test]
    fn map_path_matches_scalar_path() {
        let l = textured(60, 30, 21);
        let r = shifted(&l, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let values = (0..60 * 30)
            .map(|_| rng.gen_bool(0.9).then(|| rng.gen_range(0.0..12.0)))
            .collect();
        let disp = ScalarMap::disparity(60, 30, values).unwrap();
        for candidates in [MlmCandidates::All, MlmCandidates::LocalMinima] {
            let cfg = PhotometricConfig {
                max_disparity: 12,
                candidates,
                ..Default::default()
            };
            let map = compute_confidence_map(&l, &r, &disp, &cfg).unwrap();
            let mut checked = 0;
            for y in 0..30 {
                for x in 0..60 {
                    let scalar = disp.get(x, y).and_then(|d| {
                        build_cost_curve(&l, &r, x, y, d, &cfg)
                            .map(|c| combined_confidence(&c, cfg.sigma_mlm, candidates))
                            .ok()
                    });
                    match (map.get(x, y), scalar) {
                        (Some(a), Some(b)) => {
                            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
                            checked += 1;
                        }
                        (None, None) => {}
                        other => panic!("validity differs at ({x},{y}): {other:?}"),
                    }
                }
            }
            assert!(checked > 100);
        }
    }

    #[test]
    fn all_invalid_disparity_gives_all_invalid_confidence() {
        let l = textured(30, 20, 1);
        let d = ScalarMap::invalid(30, 20);
        let map = compute_confidence_map(&l, &l, &d, &PhotometricConfig::default()).unwrap();
        assert_eq!(map.valid_count(), 0);
    }

    #[test]
    fn confidence_map_shape_mismatch() {
        let l = textured(30, 20, 1);
        let r = textured(31, 20, 1);
        let d = ScalarMap::invalid(30, 20);
        assert!(matches!(
            compute_confidence_map(&l, &r, &d, &PhotometricConfig::default()),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn mapping_separable_classes() {
        let mut samples = vec![(1.0, true); 500];
        samples.extend(vec![(0.0, false); 500]);
        let m = InlierMapping::train(&samples, DEFAULT_BINS).unwrap();
        m.validate().unwrap();
        assert_eq!(m.p_inlier, 0.5);
        assert!(m.inlier_probability(1.0) > 0.99);
        assert!(m.inlier_probability(0.0) < 0.01);
    }

    #[test]
    fn mapping_uninformative_feature_returns_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut samples = Vec::new();
        for _ in 0..300 {
            let c = rng.gen_range(0.0..1.0);
            samples.push((c, true));
            samples.push((c, true));
            samples.push((c, false));
        }
        let m = InlierMapping::train(&samples, DEFAULT_BINS).unwrap();
        // add-one smoothing keeps the posterior near, not at, the prior
        for c in m.bin_centers() {
            assert!((m.inlier_probability(c) - 2.0 / 3.0).abs() < 0.01);
        }
    }

    #[test]
    fn mapping_single_class_cannot_train() {
        assert!(matches!(
            InlierMapping::train(&[(0.3, true), (0.9, true)], 8),
            Err(Error::CannotTrain(_))
        ));
    }

    #[test]
    fn mapping_matches_direct_bayes() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let samples: Vec<(f64, bool)> = (0..5000)
            .map(|_| {
                let c: f64 = rng.gen_range(0.0..1.0);
                (c, rng.gen_bool(c.powf(0.7)))
            })
            .collect();
        let m = InlierMapping::train(&samples, DEFAULT_BINS).unwrap();
        // direct Bayes from raw smoothed counts
        let bins = DEFAULT_BINS;
        let mut ci = vec![1.0; bins];
        let mut co = vec![1.0; bins];
        for &(c, l) in &samples {
            let b = ((c * bins as f64).floor() as usize).min(bins - 1);
            if l {
                ci[b] += 1.0
            } else {
                co[b] += 1.0
            }
        }
        let ni = samples.iter().filter(|s| s.1).count() as f64;
        let no = samples.len() as f64 - ni;
        let (ti, to): (f64, f64) = (ci.iter().sum(), co.iter().sum());
        let prior = ni / (ni + no);
        for _ in 0..1000 {
            let c: f64 = rng.gen_range(0.0..=1.0);
            let b = ((c * bins as f64).floor() as usize).min(bins - 1);
            let num = ci[b] / ti * prior;
            let expected = num / (num + co[b] / to * (1.0 - prior));
            assert!((m.inlier_probability(c) - expected).abs() < 1e-12);
        }
        let rt = InlierMapping::from_toml(&m.to_toml()).unwrap();
        assert_eq!(rt, m);
    }
}
