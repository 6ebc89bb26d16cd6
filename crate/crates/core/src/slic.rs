//! SLIC superpixels: k-means over joint color and position with a window
//! restricted to twice the grid interval, followed by a connectivity pass.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imgproc::Frame;
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SlicError {
    #[error("requested {requested} superpixels for an image of {pixels} pixels")]
    TooManySuperpixels { requested: usize, pixels: usize },
    #[error("superpixel count must be at least 1")]
    ZeroSuperpixels,
    #[error("compactness must be positive and finite")]
    BadCompactness,
    #[error("max_iters must be at least 1")]
    ZeroIterations,
    #[error("distance normalizers must be positive")]
    BadNormalizer,
    #[error("label map has {labels} entries for a {width}x{height} frame")]
    LabelMismatch { labels: usize, width: usize, height: usize },
}

/// Channels used for the color term of the distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    #[default]
    Rgb,
    /// HSV scaled to `[0, 255]` per channel; hue wraparound is ignored.
    Hsv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlicParams {
    pub n_superpixels: usize,
    /// Color normalizer `m`; larger values favor compact, grid-like regions.
    pub compactness: f64,
    pub max_iters: usize,
    /// Regions smaller than this are merged into a neighbor. `None` uses `S²/16`.
    pub min_region: Option<usize>,
    pub color_space: ColorSpace,
}

impl SlicParams {
    pub const DEFAULT_COMPACTNESS: f64 = 10.0;
    pub const DEFAULT_ITERS: usize = 10;

    pub fn new(n_superpixels: usize) -> Self {
        Self {
            n_superpixels,
            compactness: Self::DEFAULT_COMPACTNESS,
            max_iters: Self::DEFAULT_ITERS,
            min_region: None,
            color_space: ColorSpace::Rgb,
        }
    }

    fn validate(&self, pixels: usize) -> Result<(), SlicError> {
        if self.n_superpixels == 0 {
            return Err(SlicError::ZeroSuperpixels);
        }
        if self.n_superpixels > pixels {
            return Err(SlicError::TooManySuperpixels {
                requested: self.n_superpixels,
                pixels,
            });
        }
        if !(self.compactness > 0.0 && self.compactness.is_finite()) {
            return Err(SlicError::BadCompactness);
        }
        if self.max_iters == 0 {
            return Err(SlicError::ZeroIterations);
        }
        Ok(())
    }
}

/// Euclidean distance between two colors.
pub fn color_distance<T: Real>(p: [T; 3], q: [T; 3]) -> T {
    p.iter()
        .zip(&q)
        .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b))
        .sqrt()
}

/// Euclidean distance between two pixel positions.
pub fn spatial_distance<T: Real>(p: (T, T), q: (T, T)) -> T {
    (p.0 - q.0).hypot(p.1 - q.1)
}

/// `sqrt((dc/nc)² + (dp/np)²)`.
pub fn combined_distance<T: Real>(dc: T, dp: T, nc: T, np: T) -> Result<T, SlicError> {
    if !(nc > T::zero() && np > T::zero()) {
        return Err(SlicError::BadNormalizer);
    }
    let (a, b) = (dc / nc, dp / np);
    Ok((a * a + b * b).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Superpixel {
    pub label: usize,
    pub pixel_count: usize,
    /// Mean `(u, v)` of member pixel coordinates.
    pub centroid: (f64, f64),
    pub mean_s: f64,
    /// Circular mean of hue on `[0, 1)`.
    pub mean_h: f64,
    pub mean_gray: f64,
    /// Mean R, G, B in `[0, 255]`.
    pub mean_rgb: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    pub superpixels: Vec<Superpixel>,
}

impl Segmentation {
    pub fn label_at(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }
}

#[derive(Debug, Clone)]
struct Center {
    color: [f64; 3],
    x: f64,
    y: f64,
}

fn features(frame: &Frame, space: ColorSpace) -> Vec<[f64; 3]> {
    match space {
        ColorSpace::Rgb => frame
            .rgb()
            .iter()
            .map(|p| [f64::from(p[0]), f64::from(p[1]), f64::from(p[2])])
            .collect(),
        ColorSpace::Hsv => frame
            .hsv()
            .iter()
            .map(|p| [p[0] * 255.0, p[1] * 255.0, p[2] * 255.0])
            .collect(),
    }
}

fn sq_color(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Segments `frame` into approximately `params.n_superpixels` regions.
pub fn segment(frame: &Frame, params: &SlicParams) -> Result<Segmentation, SlicError> {
    segment_traced(frame, params).map(|(s, _)| s)
}

/// Like [`segment`], also returning the clustering objective
/// `Σ D²` after each assignment step.
pub fn segment_traced(frame: &Frame, params: &SlicParams) -> Result<(Segmentation, Vec<f64>), SlicError> {
    let (w, h) = (frame.width(), frame.height());
    let pixels = w * h;
    params.validate(pixels)?;
    let feat = features(frame, params.color_space);

    let step = (pixels as f64 / params.n_superpixels as f64).sqrt();
    let inv_nc2 = 1.0 / (params.compactness * params.compactness);
    let inv_np2 = 1.0 / (step * step);
    let window = step.ceil().max(1.0);

    let mut centers = seed_centers(&feat, w, h, params.n_superpixels);
    let mut labels: Vec<u32> = vec![u32::MAX; pixels];
    let mut trace = Vec::with_capacity(params.max_iters);

    let dist2 = |c: &Center, f: &[f64; 3], x: usize, y: usize| -> f64 {
        let dx = x as f64 - c.x;
        let dy = y as f64 - c.y;
        sq_color(&c.color, f) * inv_nc2 + (dx * dx + dy * dy) * inv_np2
    };

    for _ in 0..params.max_iters {
        let prev = labels.clone();
        // Each row keeps its current center as a candidate, so the
        // objective cannot increase between iterations.
        let row_objective: Vec<f64> = labels
            .par_chunks_mut(w)
            .enumerate()
            .map(|(y, row)| {
                let yf = y as f64;
                let frow = &feat[y * w..(y + 1) * w];
                let mut best = vec![f64::INFINITY; w];
                for (x, slot) in row.iter().enumerate() {
                    if *slot != u32::MAX {
                        best[x] = dist2(&centers[*slot as usize], &frow[x], x, y);
                    }
                }
                for (k, c) in centers.iter().enumerate() {
                    if (c.y - yf).abs() > window {
                        continue;
                    }
                    let x_lo = (c.x - window).ceil().max(0.0) as usize;
                    let x_hi = ((c.x + window).floor() as i64).min(w as i64 - 1);
                    if x_hi < x_lo as i64 {
                        continue;
                    }
                    let dy2 = (yf - c.y) * (yf - c.y) * inv_np2;
                    let k = k as u32;
                    for x in x_lo..=x_hi as usize {
                        let dx = x as f64 - c.x;
                        let d = sq_color(&c.color, &frow[x]) * inv_nc2 + dx * dx * inv_np2 + dy2;
                        if d < best[x] || (d == best[x] && k < row[x]) {
                            best[x] = d;
                            row[x] = k;
                        }
                    }
                }
                // Pixels outside every window fall back to the nearest center.
                for (x, slot) in row.iter_mut().enumerate() {
                    if *slot == u32::MAX {
                        for (k, c) in centers.iter().enumerate() {
                            let d = dist2(c, &frow[x], x, y);
                            if d < best[x] {
                                best[x] = d;
                                *slot = k as u32;
                            }
                        }
                    }
                }
                best.iter().sum()
            })
            .collect();
        let objective: f64 = row_objective.iter().sum();
        trace.push(objective);

        // Center update in pixel order.
        let mut sums = vec![[0f64; 6]; centers.len()];
        for (i, &l) in labels.iter().enumerate() {
            let s = &mut sums[l as usize];
            s[0] += feat[i][0];
            s[1] += feat[i][1];
            s[2] += feat[i][2];
            s[3] += (i % w) as f64;
            s[4] += (i / w) as f64;
            s[5] += 1.0;
        }
        for (c, s) in centers.iter_mut().zip(&sums) {
            if s[5] > 0.0 {
                c.color = [s[0] / s[5], s[1] / s[5], s[2] / s[5]];
                c.x = s[3] / s[5];
                c.y = s[4] / s[5];
            }
        }
        if labels == prev {
            break;
        }
    }

    let min_region = params
        .min_region
        .unwrap_or(((step * step) / 16.0).round() as usize)
        .max(1);
    let labels = enforce_connectivity(&labels, w, h, min_region);
    let superpixels = superpixel_stats(&labels, frame)?;
    Ok((
        Segmentation {
            width: w,
            height: h,
            labels,
            superpixels,
        },
        trace,
    ))
}

/// Grid of `nx × ny ≈ n` cells whose cells are as square as possible.
fn grid_shape(w: usize, h: usize, n: usize) -> (usize, usize) {
    let mut best = (usize::MAX, f64::INFINITY, 1, 1);
    for nx in 1..=n.min(w) {
        let ny = ((n as f64 / nx as f64).round() as usize).clamp(1, h);
        let count_err = (nx * ny).abs_diff(n);
        let aspect = ((w as f64 / nx as f64) / (h as f64 / ny as f64)).ln().abs();
        if count_err < best.0 || (count_err == best.0 && aspect <= best.1 + 1e-12) {
            best = (count_err, aspect, nx, ny);
        }
    }
    (best.2, best.3)
}

fn seed_centers(feat: &[[f64; 3]], w: usize, h: usize, n: usize) -> Vec<Center> {
    let (nx, ny) = grid_shape(w, h, n);
    let sx = w as f64 / nx as f64;
    let sy = h as f64 / ny as f64;
    let grad = |x: usize, y: usize| -> f64 {
        let xl = x.saturating_sub(1);
        let xr = (x + 1).min(w - 1);
        let yu = y.saturating_sub(1);
        let yd = (y + 1).min(h - 1);
        sq_color(&feat[y * w + xr], &feat[y * w + xl]) + sq_color(&feat[yd * w + x], &feat[yu * w + x])
    };
    let mut centers = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let cx = (((i as f64 + 0.5) * sx) as usize).min(w - 1);
            let cy = (((j as f64 + 0.5) * sy) as usize).min(h - 1);
            let mut best = (grad(cx, cy), cx, cy);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (x, y) = (cx as i64 + dx, cy as i64 + dy);
                    if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                        continue;
                    }
                    let g = grad(x as usize, y as usize);
                    if g < best.0 {
                        best = (g, x as usize, y as usize);
                    }
                }
            }
            let (_, x, y) = best;
            centers.push(Center {
                color: feat[y * w + x],
                x: x as f64,
                y: y as f64,
            });
        }
    }
    centers
}

/// Splits labels into 4-connected components, merges components smaller
/// than `min_region` into their largest neighbor, and relabels `0..K` in
/// scan order.
fn enforce_connectivity(labels: &[u32], w: usize, h: usize, min_region: usize) -> Vec<u32> {
    let n = w * h;
    let mut comp = vec![u32::MAX; n];
    let mut sizes: Vec<usize> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut stack = Vec::new();
    for start in 0..n {
        if comp[start] != u32::MAX {
            continue;
        }
        let id = sizes.len() as u32;
        let lab = labels[start];
        let mut list = Vec::new();
        comp[start] = id;
        stack.push(start);
        while let Some(p) = stack.pop() {
            list.push(p);
            let (x, y) = (p % w, p / w);
            let mut visit = |q: usize| {
                if comp[q] == u32::MAX && labels[q] == lab {
                    comp[q] = id;
                    stack.push(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
        list.sort_unstable();
        sizes.push(list.len());
        members.push(list);
    }

    for id in 0..sizes.len() {
        if sizes[id] == 0 || sizes[id] >= min_region {
            continue;
        }
        let mut target: Option<usize> = None;
        for &p in &members[id] {
            let (x, y) = (p % w, p / w);
            let mut neighbors = [usize::MAX; 4];
            if x > 0 {
                neighbors[0] = p - 1;
            }
            if x + 1 < w {
                neighbors[1] = p + 1;
            }
            if y > 0 {
                neighbors[2] = p - w;
            }
            if y + 1 < h {
                neighbors[3] = p + w;
            }
            for q in neighbors.into_iter().filter(|&q| q != usize::MAX) {
                let c = comp[q] as usize;
                if c == id {
                    continue;
                }
                target = match target {
                    None => Some(c),
                    Some(t) if sizes[c] > sizes[t] || (sizes[c] == sizes[t] && c < t) => Some(c),
                    keep => keep,
                };
            }
        }
        if let Some(t) = target {
            let moved = std::mem::take(&mut members[id]);
            for &p in &moved {
                comp[p] = t as u32;
            }
            sizes[t] += sizes[id];
            sizes[id] = 0;
            members[t].extend(moved);
        }
    }

    let mut remap = vec![u32::MAX; sizes.len()];
    let mut next = 0u32;
    comp.iter()
        .map(|&c| {
            let r = &mut remap[c as usize];
            if *r == u32::MAX {
                *r = next;
                next += 1;
            }
            *r
        })
        .collect()
}

/// Per-label statistics of `frame` under `labels`. Labels must be `0..K`.
pub fn superpixel_stats(labels: &[u32], frame: &Frame) -> Result<Vec<Superpixel>, SlicError> {
    let (w, h) = (frame.width(), frame.height());
    if labels.len() != w * h {
        return Err(SlicError::LabelMismatch {
            labels: labels.len(),
            width: w,
            height: h,
        });
    }
    let k = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    // count, x, y, s, sin h, cos h, gray, r, g, b
    let mut acc = vec![[0f64; 10]; k];
    let hsv = frame.hsv();
    let gray = frame.gray();
    let rgb = frame.rgb();
    let tau = std::f64::consts::TAU;
    for (i, &l) in labels.iter().enumerate() {
        let a = &mut acc[l as usize];
        a[0] += 1.0;
        a[1] += (i % w) as f64;
        a[2] += (i / w) as f64;
        a[3] += hsv[i][1];
        let (sin, cos) = (hsv[i][0] * tau).sin_cos();
        a[4] += sin;
        a[5] += cos;
        a[6] += gray[i];
        a[7] += f64::from(rgb[i][0]);
        a[8] += f64::from(rgb[i][1]);
        a[9] += f64::from(rgb[i][2]);
    }
    Ok(acc
        .iter()
        .enumerate()
        .filter(|(_, a)| a[0] > 0.0)
        .map(|(label, a)| {
            let n = a[0];
            Superpixel {
                label,
                pixel_count: n as usize,
                centroid: (a[1] / n, a[2] / n),
                mean_s: a[3] / n,
                mean_h: circular_hue(a[4], a[5], n),
                mean_gray: a[6] / n,
                mean_rgb: [a[7] / n, a[8] / n, a[9] / n],
            }
        })
        .collect())
}

fn circular_hue(sin_sum: f64, cos_sum: f64, n: f64) -> f64 {
    if sin_sum.hypot(cos_sum) <= 1e-12 * n {
        return 0.0;
    }
    let h = sin_sum.atan2(cos_sum) / std::f64::consts::TAU;
    let h = h.rem_euclid(1.0);
    if h >= 1.0 {
        0.0
    } else {
        h
    }
}

fn boundary_mask(labels: &[u32], w: usize, h: usize) -> Vec<bool> {
    (0..w * h)
        .map(|p| {
            let (x, y) = (p % w, p / w);
            (x + 1 < w && labels[p + 1] != labels[p]) || (y + 1 < h && labels[p + w] != labels[p])
        })
        .collect()
}

/// Fraction of ground-truth boundary pixels with a predicted boundary pixel
/// within `tol` pixels (Chebyshev distance).
pub fn boundary_recall(predicted: &[u32], truth: &[u32], w: usize, h: usize, tol: usize) -> f64 {
    let gt = boundary_mask(truth, w, h);
    let pred = boundary_mask(predicted, w, h);
    let mut total = 0usize;
    let mut hit = 0usize;
    for p in (0..w * h).filter(|&p| gt[p]) {
        total += 1;
        let (x, y) = (p % w, p / w);
        let found = (y.saturating_sub(tol)..=(y + tol).min(h - 1))
            .any(|yy| (x.saturating_sub(tol)..=(x + tol).min(w - 1)).any(|xx| pred[yy * w + xx]));
        if found {
            hit += 1;
        }
    }
    if total == 0 {
        1.0
    } else {
        hit as f64 / total as f64
    }
}
