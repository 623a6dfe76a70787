//! SIFT on the fixed five-scale stack: DoG extremum detection with subpixel
//! refinement, orientation assignment, 128-d descriptors, ratio-test
//! matching, RANSAC verification, and the recovered-keypoint metric.
//!
//! Detection scans all four DoG levels: interior levels use the full 3×3×3
//! neighborhood, boundary levels the available one-sided scale comparison
//! (the single-resolution stack has no padding layers, so blobs near the
//! smallest/largest scales would otherwise be invisible).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::imagecore::Image;
use crate::scalar::Real;
use crate::scalespace::{
    build_dog, build_scale_stack, sobel_gradients, DoGStack, GradientField, ScaleStack,
};

pub const DEFAULT_CONTRAST_THRESHOLD: f64 = 0.03;
pub const DEFAULT_EDGE_RATIO: f64 = 10.0;
pub const DEFAULT_MATCH_RATIO: f64 = 0.75;
pub const DEFAULT_GATE_PX: f64 = 2.0;
pub const DEFAULT_GATE_SCALE: f64 = 1.5;

const ORI_BINS: usize = 36;
const DESC_CELLS: usize = 4;
const DESC_ORI_BINS: usize = 8;
pub const DESCRIPTOR_LEN: usize = DESC_CELLS * DESC_CELLS * DESC_ORI_BINS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub scale: f64,
    pub response: f64,
    /// radians in [0, 2π)
    pub orientation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Match {
    pub index_a: usize,
    pub index_b: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, Default)]
pub struct MatchSet {
    pub matches: Vec<Match>,
    pub inlier_mask: Vec<bool>,
}

impl MatchSet {
    pub fn inlier_count(&self) -> usize {
        self.inlier_mask.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionModel {
    Translation,
    Similarity,
}

#[derive(Debug, Clone, Copy)]
pub struct SiftParams {
    pub contrast_threshold: f64,
    pub edge_ratio: f64,
    pub match_ratio: f64,
    pub gate_px: f64,
    pub gate_scale: f64,
}

impl Default for SiftParams {
    fn default() -> Self {
        SiftParams {
            contrast_threshold: DEFAULT_CONTRAST_THRESHOLD,
            edge_ratio: DEFAULT_EDGE_RATIO,
            match_ratio: DEFAULT_MATCH_RATIO,
            gate_px: DEFAULT_GATE_PX,
            gate_scale: DEFAULT_GATE_SCALE,
        }
    }
}

fn solve3(h: [[f64; 3]; 3], g: [f64; 3]) -> Option<[f64; 3]> {
    let det = h[0][0] * (h[1][1] * h[2][2] - h[1][2] * h[2][1])
        - h[0][1] * (h[1][0] * h[2][2] - h[1][2] * h[2][0])
        + h[0][2] * (h[1][0] * h[2][1] - h[1][1] * h[2][0]);
    if det.abs() < 1e-18 {
        return None;
    }
    let inv = 1.0 / det;
    let mut x = [0.0; 3];
    for k in 0..3 {
        let mut m = h;
        for r in 0..3 {
            m[r][k] = g[r];
        }
        x[k] = inv
            * (m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]));
    }
    Some(x)
}

/// Local extrema of the DoG stack with one quadratic interpolation step,
/// contrast and edge-response rejection. Output sorted by (y, x, scale).
pub fn detect<S: Real>(
    dog: &DoGStack<S>,
    contrast_threshold: f64,
    edge_ratio: f64,
) -> Result<Vec<Keypoint>> {
    if dog.diffs.len() != 4 {
        return Err(Error::InvalidArgument(format!(
            "expected a 4-level DoG stack, got {}",
            dog.diffs.len()
        )));
    }
    let (h, w) = (dog.diffs[0].height(), dog.diffs[0].width());
    let d = |j: usize, u: isize, v: isize| dog.diffs[j].get_clamped(u, v, 0).to_f64_lossy();
    let ln_gm: Vec<f64> = dog
        .scale_pairs
        .iter()
        .map(|&(lo, hi)| (lo * hi).sqrt().ln())
        .collect();
    let edge_bound = (edge_ratio + 1.0).powi(2) / edge_ratio;

    let mut out = Vec::new();
    for j in 0..4usize {
        let jlo = j.saturating_sub(1);
        let jhi = (j + 1).min(3);
        for u in 1..(h as isize - 1) {
            for v in 1..(w as isize - 1) {
                let val = d(j, u, v);
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for jj in jlo..=jhi {
                    for du in -1..=1isize {
                        for dv in -1..=1isize {
                            if jj == j && du == 0 && dv == 0 {
                                continue;
                            }
                            let n = d(jj, u + du, v + dv);
                            lo = lo.min(n);
                            hi = hi.max(n);
                        }
                    }
                }
                if !(val > hi || val < lo) {
                    continue;
                }

                // one quadratic refinement step; boundary levels refine
                // spatially only
                let gx = (d(j, u, v + 1) - d(j, u, v - 1)) / 2.0;
                let gy = (d(j, u + 1, v) - d(j, u - 1, v)) / 2.0;
                let dxx = d(j, u, v + 1) + d(j, u, v - 1) - 2.0 * val;
                let dyy = d(j, u + 1, v) + d(j, u - 1, v) - 2.0 * val;
                let dxy = (d(j, u + 1, v + 1) - d(j, u + 1, v - 1) - d(j, u - 1, v + 1)
                    + d(j, u - 1, v - 1))
                    / 4.0;
                let (off, grad) = if (1..=2).contains(&j) {
                    let gs = (d(j + 1, u, v) - d(j - 1, u, v)) / 2.0;
                    let dss = d(j + 1, u, v) + d(j - 1, u, v) - 2.0 * val;
                    let dxs = (d(j + 1, u, v + 1) - d(j + 1, u, v - 1) - d(j - 1, u, v + 1)
                        + d(j - 1, u, v - 1))
                        / 4.0;
                    let dys = (d(j + 1, u + 1, v) - d(j + 1, u - 1, v) - d(j - 1, u + 1, v)
                        + d(j - 1, u - 1, v))
                        / 4.0;
                    let hm = [[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]];
                    let g = [gx, gy, gs];
                    match solve3(hm, [-g[0], -g[1], -g[2]]) {
                        Some(o) => (o, g),
                        None => ([0.0; 3], g),
                    }
                } else {
                    let det2 = dxx * dyy - dxy * dxy;
                    let o = if det2.abs() < 1e-18 {
                        [0.0, 0.0]
                    } else {
                        [
                            (-gx * dyy + gy * dxy) / det2,
                            (gx * dxy - gy * dxx) / det2,
                        ]
                    };
                    ([o[0], o[1], 0.0], [gx, gy, 0.0])
                };
                if off.iter().any(|o| o.abs() > 1.5) {
                    continue;
                }
                let contrast =
                    val + 0.5 * (grad[0] * off[0] + grad[1] * off[1] + grad[2] * off[2]);
                if contrast.abs() < contrast_threshold {
                    continue;
                }
                let tr = dxx + dyy;
                let det2 = dxx * dyy - dxy * dxy;
                if det2 <= 0.0 || tr * tr / det2 >= edge_bound {
                    continue;
                }
                let js = (j as f64 + off[2]).clamp(0.0, 3.0);
                let (f, fr) = (js.floor().min(2.0), js - js.floor().min(2.0));
                let ln_s = ln_gm[f as usize] + fr * (ln_gm[f as usize + 1] - ln_gm[f as usize]);
                let x = v as f64 + off[0];
                let y = u as f64 + off[1];
                if x < 0.0 || y < 0.0 || x > (w - 1) as f64 || y > (h - 1) as f64 {
                    continue;
                }
                out.push(Keypoint {
                    x,
                    y,
                    scale: ln_s.exp().clamp(1.6, 6.4),
                    response: contrast,
                    orientation: 0.0,
                });
            }
        }
    }
    out.sort_by(|a, b| {
        (a.y, a.x, a.scale)
            .partial_cmp(&(b.y, b.x, b.scale))
            .unwrap()
    });
    Ok(out)
}

/// Orientation(s) from a precomputed gradient field of the keypoint's stack
/// level. Returns empty when the window leaves the image.
pub fn assign_orientation_with<S: Real>(kp: &Keypoint, grads: &GradientField<S>) -> Vec<Keypoint> {
    let (h, w) = (grads.magnitude.height(), grads.magnitude.width());
    let sigma_w = 1.5 * kp.scale;
    let r = (3.0 * sigma_w).round() as isize;
    let (cy, cx) = (kp.y.round() as isize, kp.x.round() as isize);
    if cy - r < 0 || cx - r < 0 || cy + r >= h as isize || cx + r >= w as isize {
        return Vec::new();
    }
    let bin_w = std::f64::consts::TAU / ORI_BINS as f64;
    let mut hist = [0.0f64; ORI_BINS];
    for u in (cy - r)..=(cy + r) {
        for v in (cx - r)..=(cx + r) {
            let dy = u as f64 - kp.y;
            let dx = v as f64 - kp.x;
            let mag = grads.magnitude[(u as usize, v as usize, 0)].to_f64_lossy();
            let theta = grads.orientation[(u as usize, v as usize, 0)].to_f64_lossy();
            let wgt = (-(dx * dx + dy * dy) / (2.0 * sigma_w * sigma_w)).exp();
            let b = ((theta / bin_w).floor() as usize).min(ORI_BINS - 1);
            hist[b] += wgt * mag;
        }
    }
    let max = hist.iter().cloned().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for b in 0..ORI_BINS {
        let l = hist[(b + ORI_BINS - 1) % ORI_BINS];
        let c = hist[b];
        let rr = hist[(b + 1) % ORI_BINS];
        if c < 0.8 * max || c < l || c < rr || (c == l && c == rr) {
            continue;
        }
        let denom = l - 2.0 * c + rr;
        let delta = if denom.abs() < 1e-18 {
            0.0
        } else {
            0.5 * (l - rr) / denom
        };
        let theta = (b as f64 + 0.5 + delta) * bin_w;
        out.push(Keypoint {
            orientation: theta.rem_euclid(std::f64::consts::TAU),
            ..*kp
        });
    }
    out
}

/// Orientation assignment from the nearest Gaussian stack level.
pub fn assign_orientation<S: Real>(kp: &Keypoint, stack: &ScaleStack<S>) -> Result<Vec<Keypoint>> {
    let grads = sobel_gradients(&stack.levels[stack.nearest_level(kp.scale)])?;
    Ok(assign_orientation_with(kp, &grads))
}

/// 4×4×8 descriptor from a precomputed gradient field. None when the
/// sampling window leaves the image or the window has no gradient energy.
pub fn describe_with<S: Real>(kp: &Keypoint, grads: &GradientField<S>) -> Option<Descriptor> {
    let (h, w) = (grads.magnitude.height(), grads.magnitude.width());
    let cell_w = 3.0 * kp.scale;
    let d = DESC_CELLS as f64;
    let radius =
        (cell_w * std::f64::consts::SQRT_2 * (d + 1.0) * 0.5).round() as isize;
    let (cy, cx) = (kp.y.round() as isize, kp.x.round() as isize);
    if cy - radius < 0 || cx - radius < 0 || cy + radius >= h as isize || cx + radius >= w as isize
    {
        return None;
    }
    let (cos_t, sin_t) = (kp.orientation.cos(), kp.orientation.sin());
    let obin_w = std::f64::consts::TAU / DESC_ORI_BINS as f64;
    let mut hist = [0.0f64; DESC_CELLS * DESC_CELLS * DESC_ORI_BINS];
    for u in (cy - radius)..=(cy + radius) {
        for v in (cx - radius)..=(cx + radius) {
            let dy = u as f64 - kp.y;
            let dx = v as f64 - kp.x;
            // rotate into the keypoint frame, in cell units
            let rx = (cos_t * dx + sin_t * dy) / cell_w;
            let ry = (-sin_t * dx + cos_t * dy) / cell_w;
            let cr = ry + d / 2.0 - 0.5;
            let cc = rx + d / 2.0 - 0.5;
            if cr <= -1.0 || cr >= d || cc <= -1.0 || cc >= d {
                continue;
            }
            let mag = grads.magnitude[(u as usize, v as usize, 0)].to_f64_lossy();
            let theta = grads.orientation[(u as usize, v as usize, 0)].to_f64_lossy();
            let wgt = (-(rx * rx + ry * ry) / (2.0 * (0.5 * d) * (0.5 * d))).exp() * mag;
            let ob = (theta - kp.orientation).rem_euclid(std::f64::consts::TAU) / obin_w;
            // trilinear spread over (row cell, col cell, orientation bin)
            let (r0, c0, o0) = (cr.floor(), cc.floor(), ob.floor());
            let (fr, fc, fo) = (cr - r0, cc - c0, ob - o0);
            for (ri, rw) in [(r0, 1.0 - fr), (r0 + 1.0, fr)] {
                if ri < 0.0 || ri >= d {
                    continue;
                }
                for (ci, cwt) in [(c0, 1.0 - fc), (c0 + 1.0, fc)] {
                    if ci < 0.0 || ci >= d {
                        continue;
                    }
                    for (oi, ow) in [(o0, 1.0 - fo), (o0 + 1.0, fo)] {
                        let ob_idx = (oi as usize) % DESC_ORI_BINS;
                        let idx = (ri as usize * DESC_CELLS + ci as usize) * DESC_ORI_BINS
                            + ob_idx;
                        hist[idx] += wgt * rw * cwt * ow;
                    }
                }
            }
        }
    }
    let mut vector: Vec<f64> = hist.to_vec();
    let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= 0.0 {
        return None;
    }
    for v in &mut vector {
        *v = (*v / norm).min(0.2);
    }
    let norm2 = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut vector {
        *v /= norm2;
    }
    Some(Descriptor { vector })
}

/// Descriptor from the nearest Gaussian stack level.
pub fn describe<S: Real>(kp: &Keypoint, stack: &ScaleStack<S>) -> Result<Option<Descriptor>> {
    let grads = sobel_gradients(&stack.levels[stack.nearest_level(kp.scale)])?;
    Ok(describe_with(kp, &grads))
}

/// Ratio-test matching, one-to-one on the b side (smaller distance wins).
pub fn match_descriptors(a: &[Descriptor], b: &[Descriptor], ratio: f64) -> Result<MatchSet> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "ratio must be in (0,1), got {ratio}"
        )));
    }
    if b.len() < 2 {
        return Ok(MatchSet::default());
    }
    let mut best_for_b: Vec<Option<(usize, f64)>> = vec![None; b.len()];
    for (ia, da) in a.iter().enumerate() {
        let mut d1 = f64::INFINITY;
        let mut d2 = f64::INFINITY;
        let mut ib1 = 0usize;
        for (ib, db) in b.iter().enumerate() {
            let dist: f64 = da
                .vector
                .iter()
                .zip(&db.vector)
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                .sqrt();
            if dist < d1 {
                d2 = d1;
                d1 = dist;
                ib1 = ib;
            } else if dist < d2 {
                d2 = dist;
            }
        }
        if d1 < ratio * d2 {
            match best_for_b[ib1] {
                Some((_, prev)) if prev <= d1 => {}
                _ => best_for_b[ib1] = Some((ia, d1)),
            }
        }
    }
    let mut matches: Vec<Match> = best_for_b
        .iter()
        .enumerate()
        .filter_map(|(ib, m)| m.map(|(ia, dist)| Match {
            index_a: ia,
            index_b: ib,
            distance: dist,
        }))
        .collect();
    matches.sort_by(|p, q| (p.index_a, p.index_b).cmp(&(q.index_a, q.index_b)));
    let n = matches.len();
    Ok(MatchSet {
        matches,
        inlier_mask: vec![true; n],
    })
}

fn reproject(model: MotionModel, params: &[f64], x: f64, y: f64) -> (f64, f64) {
    match model {
        MotionModel::Translation => (x + params[0], y + params[1]),
        // params = [a, b, tx, ty] for (x,y) ↦ (a·x − b·y + tx, b·x + a·y + ty)
        MotionModel::Similarity => (
            params[0] * x - params[1] * y + params[2],
            params[1] * x + params[0] * y + params[3],
        ),
    }
}

/// Seeded RANSAC over translation or similarity; returns the same matches
/// with the inlier mask set.
pub fn verify_ransac(
    ms: &MatchSet,
    kps_a: &[Keypoint],
    kps_b: &[Keypoint],
    model: MotionModel,
    tol_px: f64,
    iters: usize,
    seed: u64,
) -> MatchSet {
    use rand::Rng;
    use rand::SeedableRng;
    let minimal = match model {
        MotionModel::Translation => 1,
        MotionModel::Similarity => 2,
    };
    let n = ms.matches.len();
    let mut out = ms.clone();
    if n < minimal {
        out.inlier_mask = vec![false; n];
        return out;
    }
    let pts: Vec<((f64, f64), (f64, f64))> = ms
        .matches
        .iter()
        .map(|m| {
            let a = &kps_a[m.index_a];
            let b = &kps_b[m.index_b];
            ((a.x, a.y), (b.x, b.y))
        })
        .collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut best_mask = vec![false; n];
    let mut best_count = 0usize;
    for _ in 0..iters {
        let params = match model {
            MotionModel::Translation => {
                let ((ax, ay), (bx, by)) = pts[rng.gen_range(0..n)];
                vec![bx - ax, by - ay]
            }
            MotionModel::Similarity => {
                let i = rng.gen_range(0..n);
                let k = rng.gen_range(0..n);
                if i == k {
                    continue;
                }
                let ((a1x, a1y), (b1x, b1y)) = pts[i];
                let ((a2x, a2y), (b2x, b2y)) = pts[k];
                let (dx, dy) = (a2x - a1x, a2y - a1y);
                let den = dx * dx + dy * dy;
                if den < 1e-12 {
                    continue;
                }
                // complex division (b2−b1)/(a2−a1) gives rotation+scale
                let (ex, ey) = (b2x - b1x, b2y - b1y);
                let a = (ex * dx + ey * dy) / den;
                let b = (ey * dx - ex * dy) / den;
                vec![a, b, b1x - (a * a1x - b * a1y), b1y - (b * a1x + a * a1y)]
            }
        };
        let mask: Vec<bool> = pts
            .iter()
            .map(|&((ax, ay), (bx, by))| {
                let (px, py) = reproject(model, &params, ax, ay);
                ((px - bx).powi(2) + (py - by).powi(2)).sqrt() <= tol_px
            })
            .collect();
        let count = mask.iter().filter(|&&m| m).count();
        if count > best_count {
            best_count = count;
            best_mask = mask;
        }
    }
    out.inlier_mask = best_mask;
    out
}

fn to_luminance<S: Real>(img: &Image<S>) -> Result<Image<S>> {
    match img.channels() {
        1 => Ok(img.clone()),
        3 => Ok(img.luminance()),
        c => Err(Error::ChannelCount { expected: 3, got: c }),
    }
}

/// Full pipeline: detect on `detect_img`'s DoG, orient/describe on
/// `describe_img`'s Gaussian stack (same image when None — the hybrid mode
/// feeds the two derained outputs into the two roles). Returns oriented
/// keypoints with valid descriptors.
pub fn extract<S: Real>(
    detect_img: &Image<S>,
    describe_img: Option<&Image<S>>,
    p: &SiftParams,
) -> Result<(Vec<Keypoint>, Vec<Descriptor>)> {
    let det_lum = to_luminance(detect_img)?;
    let det_stack = build_scale_stack(&det_lum)?;
    let dog = build_dog(&det_stack);
    let raw = detect(&dog, p.contrast_threshold, p.edge_ratio)?;

    let desc_stack = match describe_img {
        Some(img) => {
            let lum = to_luminance(img)?;
            if lum.height() != det_lum.height() || lum.width() != det_lum.width() {
                return Err(Error::DimensionMismatch(
                    "detect and describe images differ in size".into(),
                ));
            }
            build_scale_stack(&lum)?
        }
        None => det_stack,
    };
    let mut grads: Vec<Option<GradientField<S>>> = vec![None; desc_stack.levels.len()];
    let mut kps = Vec::new();
    let mut descs = Vec::new();
    for kp in &raw {
        let level = desc_stack.nearest_level(kp.scale);
        if grads[level].is_none() {
            grads[level] = Some(sobel_gradients(&desc_stack.levels[level])?);
        }
        let g = grads[level].as_ref().unwrap();
        for oriented in assign_orientation_with(kp, g) {
            if let Some(d) = describe_with(&oriented, g) {
                kps.push(oriented);
                descs.push(d);
            }
        }
    }
    Ok((kps, descs))
}

/// Apply the same-scene identity gate (position within `gate_px`, scale
/// ratio within `gate_scale`) to a match set; returns (count, gated set).
pub fn gate_matches(
    ms: &MatchSet,
    kps_a: &[Keypoint],
    kps_b: &[Keypoint],
    p: &SiftParams,
) -> (usize, MatchSet) {
    let mut out = ms.clone();
    out.inlier_mask = ms
        .matches
        .iter()
        .map(|m| {
            let a = &kps_a[m.index_a];
            let b = &kps_b[m.index_b];
            let dist = ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt();
            let ratio = a.scale / b.scale;
            dist <= p.gate_px && ratio >= 1.0 / p.gate_scale && ratio <= p.gate_scale
        })
        .collect();
    (out.inlier_count(), out)
}

/// Recovered-keypoint metric: SIFT on both images, ratio matching, identity
/// geometric gate.
pub fn recovered_keypoints<S: Real>(
    derained: &Image<S>,
    clean: &Image<S>,
    p: &SiftParams,
) -> Result<(usize, MatchSet)> {
    let (kd, dd) = extract(derained, None, p)?;
    let (kc, dc) = extract(clean, None, p)?;
    let ms = match_descriptors(&dd, &dc, p.match_ratio)?;
    Ok(gate_matches(&ms, &kd, &kc, p))
}

/// Hybrid two-image mode: detection on the rain-removal output, description
/// on the gradient-restoration output.
pub fn recovered_keypoints_hybrid<S: Real>(
    derained_detect: &Image<S>,
    derained_describe: &Image<S>,
    clean: &Image<S>,
    p: &SiftParams,
) -> Result<(usize, MatchSet)> {
    let (kd, dd) = extract(derained_detect, Some(derained_describe), p)?;
    let (kc, dc) = extract(clean, None, p)?;
    let ms = match_descriptors(&dd, &dc, p.match_ratio)?;
    Ok(gate_matches(&ms, &kd, &kc, p))
}

/// One JSON document per image: keypoints plus row-major descriptors.
pub fn keypoints_json(kps: &[Keypoint], descs: &[Descriptor]) -> String {
    #[derive(Serialize)]
    struct Dump<'a> {
        keypoints: &'a [Keypoint],
        descriptors: Vec<&'a [f64]>,
    }
    serde_json::to_string_pretty(&Dump {
        keypoints: kps,
        descriptors: descs.iter().map(|d| d.vector.as_slice()).collect(),
    })
    .expect("keypoint dump serializes")
}

/// Side-by-side RGB overlay with lines for masked-in matches.
pub fn match_overlay<S: Real>(
    a: &Image<S>,
    b: &Image<S>,
    kps_a: &[Keypoint],
    kps_b: &[Keypoint],
    ms: &MatchSet,
) -> Image<S> {
    let h = a.height().max(b.height());
    let w = a.width() + b.width();
    let mut out = Image::new(h, w, 3);
    let blit = |out: &mut Image<S>, img: &Image<S>, x0: usize| {
        for u in 0..img.height() {
            for v in 0..img.width() {
                for c in 0..3 {
                    out[(u, v + x0, c)] = if img.channels() == 3 {
                        img[(u, v, c)]
                    } else {
                        img[(u, v, 0)]
                    };
                }
            }
        }
    };
    blit(&mut out, a, 0);
    blit(&mut out, b, a.width());
    let set = |out: &mut Image<S>, x: f64, y: f64, rgb: [f64; 3]| {
        let (u, v) = (y.round() as isize, x.round() as isize);
        if u >= 0 && v >= 0 && (u as usize) < h && (v as usize) < w {
            for c in 0..3 {
                out[(u as usize, v as usize, c)] = S::of(rgb[c]);
            }
        }
    };
    let green = [0.0, 1.0, 0.0];
    for (m, &keep) in ms.matches.iter().zip(&ms.inlier_mask) {
        if !keep {
            continue;
        }
        let p = &kps_a[m.index_a];
        let q = &kps_b[m.index_b];
        let (x0, y0) = (p.x, p.y);
        let (x1, y1) = (q.x + a.width() as f64, q.y);
        let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            set(&mut out, x0 + t * (x1 - x0), y0 + t * (y1 - y0), green);
        }
    }
    out
}
