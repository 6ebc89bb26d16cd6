//! Candidate scoring: seven mismatch features per superpixel, per-column
//! min–max normalization, weighted sum, and selection of the best match.
//!
//! Features are mismatch magnitudes, so the best candidate is the one with
//! the *smallest* weighted score. This is the same selection as taking the
//! largest `Σ w·(1 − N)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point2;
use crate::scalar::Real;
use crate::slic::Superpixel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("no candidate superpixels")]
    NoCandidates,
    #[error("tie-break keys ({keys}) do not match candidates ({candidates})")]
    KeyMismatch { keys: usize, candidates: usize },
    #[error("weights must all be positive and finite")]
    BadWeights,
    #[error("marker pixel count must be at least 1")]
    ZeroMarkerPixels,
}

pub const FEATURE_COUNT: usize = 7;

/// Channel means of a detected marker superpixel, all in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MarkerAppearance<T> {
    pub mean_s: T,
    pub mean_h: T,
    pub mean_g: T,
}

impl MarkerAppearance<f64> {
    pub fn of(sp: &Superpixel) -> Self {
        Self {
            mean_s: sp.mean_s,
            mean_h: sp.mean_h,
            mean_g: sp.mean_gray,
        }
    }
}

/// `[f1..f7]`: saturation, hue and gray mismatch against the previous and
/// initial detections (interleaved), then pixel distance to the prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector<T>(pub [T; FEATURE_COUNT]);

impl<T: Real> FeatureVector<T> {
    pub fn jump(&self) -> T {
        self.0[6]
    }

    pub fn appearance(&self) -> T {
        self.0[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Weights<T>(pub [T; FEATURE_COUNT]);

impl<T: Real> Default for Weights<T> {
    fn default() -> Self {
        Self([3.0, 1.0, 3.0, 2.0, 2.0, 1.0, 3.0].map(T::lit))
    }
}

impl<T: Real> Weights<T> {
    pub fn new(w: [T; FEATURE_COUNT]) -> Result<Self, MatchError> {
        let weights = Self(w);
        weights.validate()?;
        Ok(weights)
    }

    pub fn validate(&self) -> Result<(), MatchError> {
        if self.0.iter().all(|&w| w > T::zero() && w.is_finite()) {
            Ok(())
        } else {
            Err(MatchError::BadWeights)
        }
    }

    pub fn total(&self) -> T {
        self.0.iter().fold(T::zero(), |a, &w| a + w)
    }
}

/// Shortest distance between two hues on the unit circle, in `[0, 0.5]`.
pub fn hue_distance<T: Real>(a: T, b: T) -> T {
    let d = (a - b).abs() % T::one();
    d.min(T::one() - d)
}

/// Mismatch features of one candidate against a marker's references.
pub fn extract_features<T: Real>(
    candidate: &MarkerAppearance<T>,
    centroid: Point2<T>,
    previous: &MarkerAppearance<T>,
    initial: &MarkerAppearance<T>,
    predicted: Point2<T>,
) -> FeatureVector<T> {
    FeatureVector([
        (candidate.mean_s - previous.mean_s).abs(),
        (candidate.mean_s - initial.mean_s).abs(),
        hue_distance(candidate.mean_h, previous.mean_h),
        hue_distance(candidate.mean_h, initial.mean_h),
        (candidate.mean_g - previous.mean_g).abs(),
        (candidate.mean_g - initial.mean_g).abs(),
        centroid.distance(&predicted),
    ])
}

/// Features of a superpixel whose centroid is offset by `origin` into frame
/// coordinates.
pub fn superpixel_features(
    sp: &Superpixel,
    origin: (f64, f64),
    previous: &MarkerAppearance<f64>,
    initial: &MarkerAppearance<f64>,
    predicted: Point2<f64>,
) -> FeatureVector<f64> {
    let centroid = Point2::new(sp.centroid.0 + origin.0, sp.centroid.1 + origin.1);
    extract_features(&MarkerAppearance::of(sp), centroid, previous, initial, predicted)
}

/// Per-feature min–max scaling across candidates. A constant column maps to 0.
pub fn normalize<T: Real>(features: &[FeatureVector<T>]) -> Result<Vec<[T; FEATURE_COUNT]>, MatchError> {
    if features.is_empty() {
        return Err(MatchError::NoCandidates);
    }
    let mut lo = [T::infinity(); FEATURE_COUNT];
    let mut hi = [T::neg_infinity(); FEATURE_COUNT];
    for f in features {
        for k in 0..FEATURE_COUNT {
            lo[k] = lo[k].min(f.0[k]);
            hi[k] = hi[k].max(f.0[k]);
        }
    }
    Ok(features
        .iter()
        .map(|f| {
            let mut n = [T::zero(); FEATURE_COUNT];
            for k in 0..FEATURE_COUNT {
                let range = hi[k] - lo[k];
                if range > T::zero() {
                    n[k] = (f.0[k] - lo[k]) / range;
                }
            }
            n
        })
        .collect())
}

pub fn weighted_score<T: Real>(normalized: &[T; FEATURE_COUNT], weights: &Weights<T>) -> T {
    normalized
        .iter()
        .zip(&weights.0)
        .fold(T::zero(), |acc, (&n, &w)| acc + n * w)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection<T> {
    pub index: usize,
    pub score: T,
}

/// Picks the candidate with the lowest weighted score. Ties go to the
/// smaller raw jump distance, then the lower label; `tie_keys[i]` is
/// `(f7, label)` for candidate `i`.
pub fn select<T: Real>(
    normalized: &[[T; FEATURE_COUNT]],
    tie_keys: &[(T, usize)],
    weights: &Weights<T>,
) -> Result<Selection<T>, MatchError> {
    if normalized.is_empty() {
        return Err(MatchError::NoCandidates);
    }
    if tie_keys.len() != normalized.len() {
        return Err(MatchError::KeyMismatch {
            keys: tie_keys.len(),
            candidates: normalized.len(),
        });
    }
    weights.validate()?;
    let mut best = Selection {
        index: 0,
        score: weighted_score(&normalized[0], weights),
    };
    for (i, row) in normalized.iter().enumerate().skip(1) {
        let score = weighted_score(row, weights);
        let better = score < best.score
            || (score == best.score
                && (tie_keys[i].0 < tie_keys[best.index].0
                    || (tie_keys[i].0 == tie_keys[best.index].0 && tie_keys[i].1 < tie_keys[best.index].1)));
        if better {
            best = Selection { index: i, score };
        }
    }
    Ok(best)
}

/// Normalizes then selects over `(label, features)` candidates.
pub fn choose<T: Real>(
    candidates: &[(usize, FeatureVector<T>)],
    weights: &Weights<T>,
) -> Result<Selection<T>, MatchError> {
    let feats: Vec<_> = candidates.iter().map(|(_, f)| *f).collect();
    let normalized = normalize(&feats)?;
    let keys: Vec<_> = candidates.iter().map(|(l, f)| (f.jump(), *l)).collect();
    select(&normalized, &keys, weights)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Gate<T> {
    pub max_jump_px: T,
    pub max_appearance: T,
}

impl<T: Real> Default for Gate<T> {
    fn default() -> Self {
        Self {
            max_jump_px: T::lit(50.0),
            max_appearance: T::lit(0.35),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateDecision {
    Accept,
    RejectJump,
    RejectAppearance,
}

impl GateDecision {
    pub fn accepted(self) -> bool {
        self == GateDecision::Accept
    }
}

/// Accepts the selected candidate unless it jumped too far or its
/// saturation drifted too much from the previous detection. Bounds are
/// inclusive.
pub fn score_gate<T: Real>(best: &FeatureVector<T>, gate: &Gate<T>) -> GateDecision {
    if !(best.jump() <= gate.max_jump_px) {
        GateDecision::RejectJump
    } else if !(best.appearance() <= gate.max_appearance) {
        GateDecision::RejectAppearance
    } else {
        GateDecision::Accept
    }
}

/// Frame-wide superpixel count for a marker covering `marker_pixels` pixels:
/// a superpixel area of half the marker, clamped to `[16, pixels / 4]`.
pub fn nslic(marker_pixels: usize, frame_w: usize, frame_h: usize) -> Result<usize, MatchError> {
    if marker_pixels == 0 {
        return Err(MatchError::ZeroMarkerPixels);
    }
    let area = (frame_w * frame_h) as f64;
    let raw = (2.0 * area / marker_pixels as f64).round() as usize;
    let hi = (frame_w * frame_h / 4).max(1);
    Ok(raw.clamp(16.min(hi), hi))
}

/// Scales a frame-wide superpixel count to a `win_w`×`win_h` window so the
/// superpixel area is preserved.
pub fn count_for_window(frame_count: usize, frame_w: usize, frame_h: usize, win_w: usize, win_h: usize) -> usize {
    let frac = (win_w * win_h) as f64 / (frame_w * frame_h) as f64;
    ((frame_count as f64 * frac).round() as usize).clamp(1, win_w * win_h)
}

/// Per-marker frame-wide superpixel counts keyed by marker name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SuperpixelCounts(pub BTreeMap<String, usize>);

impl Default for SuperpixelCounts {
    fn default() -> Self {
        Self(
            [("toe", 10_000), ("ankle", 10_000), ("knee", 7_000), ("hip", 3_000), ("asis", 3_000)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        )
    }
}

impl SuperpixelCounts {
    pub fn get(&self, marker: &str) -> Option<usize> {
        self.0.get(marker).copied()
    }
}
