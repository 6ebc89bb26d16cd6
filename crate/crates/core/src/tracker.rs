//! Click initialization and the per-frame tracking loop.
//!
//! In 3D mode each marker carries one Kalman filter in object space. Every
//! frame the filter predicts, the prediction is projected into each camera,
//! a fixed window around the projection is segmented, and the best
//! superpixel is chosen and gated. Only when every camera accepts is the
//! detection triangulated and fed back to the filter; otherwise the marker
//! coasts on prediction.
//!
//! The 2D baseline tracks each camera independently with a constant-velocity
//! image-plane predictor and never triangulates.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{triangulate, DltCamera, GeometryError, Point2, Point3};
use crate::imgproc::{Frame, ImageError, Roi};
use crate::io::{FrameSource, IoError};
use crate::kalman::{KalmanConfig, KalmanError, KalmanState};
use crate::matcher::{
    choose, count_for_window, hue_distance, score_gate, superpixel_features, FeatureVector, Gate, GateDecision,
    MarkerAppearance, MatchError, SuperpixelCounts, Weights,
};
use crate::slic::{segment, ColorSpace, Segmentation, SlicError, SlicParams};

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("at least one marker is required")]
    NoMarkers,
    #[error("marker `{0}` is listed twice")]
    DuplicateMarker(String),
    #[error("no superpixel count configured for marker `{0}`")]
    MissingCount(String),
    #[error("roi extent {roi} is below twice the jump gate ({needed} px)")]
    RoiTooSmall { roi: usize, needed: f64 },
    #[error("missing click for marker `{marker}` in camera {cam} frame {frame}")]
    MissingClick { frame: usize, cam: usize, marker: String },
    #[error("unexpected click for marker `{marker}` in camera {cam} frame {frame}")]
    UnexpectedClick { frame: usize, cam: usize, marker: String },
    #[error("click for `{marker}` at ({u}, {v}) lies outside camera {cam} frame {frame}")]
    ClickOutside {
        frame: usize,
        cam: usize,
        marker: String,
        u: f64,
        v: f64,
    },
    #[error("markers `{a}` and `{b}` fall in the same superpixel in camera {cam} frame {frame}")]
    SameSuperpixel {
        frame: usize,
        cam: usize,
        a: String,
        b: String,
    },
    #[error("refine tolerance must be finite and non-negative, got {0}")]
    BadRefineTolerance(f64),
    #[error("3D tracking needs exactly 2 calibrated cameras, got {0}")]
    CameraCount(usize),
    #[error("expected {expected} frames per step, got {got}")]
    FrameCount { expected: usize, got: usize },
    #[error("camera frames disagree on index: {0:?}")]
    FrameIndexMismatch(Vec<usize>),
    #[error("camera sequences differ in length: {0:?}")]
    LengthMismatch(Vec<usize>),
    #[error("tracking needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Kalman(#[from] KalmanError),
    #[error(transparent)]
    Slic(#[from] SlicError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TrackingMode {
    #[default]
    #[serde(rename = "3d")]
    ThreeD,
    #[serde(rename = "2d")]
    TwoDBaseline,
}

impl std::str::FromStr for TrackingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "3d" => Ok(Self::ThreeD),
            "2d" => Ok(Self::TwoDBaseline),
            other => Err(format!("unknown mode `{other}` (expected 3d or 2d)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackStatus {
    Tracked,
    Coasting,
    Lost,
}

impl fmt::Display for TrackStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrackStatus::Tracked => "tracked",
            TrackStatus::Coasting => "coasting",
            TrackStatus::Lost => "lost",
        })
    }
}

pub const DEFAULT_MARKERS: [&str; 5] = ["toe", "ankle", "knee", "hip", "asis"];

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    pub markers: Vec<String>,
    /// Side of the square search window, pixels.
    pub roi: usize,
    /// Margin around the click bounding box at initialization, pixels.
    pub init_padding: f64,
    /// Coasting frames after which a track is flagged lost.
    pub loss_threshold: usize,
    pub mode: TrackingMode,
    pub compactness: f64,
    pub max_iters: usize,
    pub color_space: ColorSpace,
    /// Frame-wide superpixel count per marker, scaled to the window.
    pub counts: SuperpixelCounts,
    /// Frame-wide count for the initialization window; `None` uses the
    /// finest per-marker count.
    pub init_count: Option<usize>,
    pub weights: Weights<f64>,
    pub gate: Gate<f64>,
    pub kalman: KalmanConfig<f64>,
    /// Report the centroid of the selected superpixel merged with adjacent
    /// superpixels of the same appearance, rather than its own centroid.
    pub refine: bool,
    /// Largest saturation, hue and gray difference for such a merge.
    pub refine_tolerance: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            markers: DEFAULT_MARKERS.iter().map(|s| s.to_string()).collect(),
            roi: Roi::DEFAULT_EXTENT,
            init_padding: 100.0,
            loss_threshold: 25,
            mode: TrackingMode::ThreeD,
            compactness: SlicParams::DEFAULT_COMPACTNESS,
            max_iters: SlicParams::DEFAULT_ITERS,
            color_space: ColorSpace::Rgb,
            counts: SuperpixelCounts::default(),
            init_count: None,
            weights: Weights::default(),
            gate: Gate::default(),
            kalman: KalmanConfig::default(),
            refine: true,
            refine_tolerance: 0.1,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackError> {
        if self.markers.is_empty() {
            return Err(TrackError::NoMarkers);
        }
        let mut seen = BTreeSet::new();
        for m in &self.markers {
            if !seen.insert(m.as_str()) {
                return Err(TrackError::DuplicateMarker(m.clone()));
            }
            if self.counts.get(m).is_none() {
                return Err(TrackError::MissingCount(m.clone()));
            }
        }
        let needed = 2.0 * self.gate.max_jump_px;
        if (self.roi as f64) < needed {
            return Err(TrackError::RoiTooSmall { roi: self.roi, needed });
        }
        self.weights.validate()?;
        self.kalman.validate()?;
        if !(self.compactness > 0.0 && self.compactness.is_finite()) {
            return Err(SlicError::BadCompactness.into());
        }
        if self.max_iters == 0 {
            return Err(SlicError::ZeroIterations.into());
        }
        if !(self.refine_tolerance >= 0.0 && self.refine_tolerance.is_finite()) {
            return Err(TrackError::BadRefineTolerance(self.refine_tolerance));
        }
        Ok(())
    }

    fn slic_params(&self, n: usize) -> SlicParams {
        SlicParams {
            n_superpixels: n,
            compactness: self.compactness,
            max_iters: self.max_iters,
            min_region: None,
            color_space: self.color_space,
        }
    }

    fn count_of(&self, marker: &str) -> usize {
        self.counts.get(marker).expect("validated")
    }

    fn init_frame_count(&self) -> usize {
        self.init_count.unwrap_or_else(|| {
            self.markers.iter().map(|m| self.count_of(m)).max().expect("validated")
        })
    }
}

/// Initial clicks keyed by `(frame, camera, marker)`; frames are sequence
/// positions 0 and 1.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Clicks(BTreeMap<(usize, usize, String), Point2<f64>>);

impl Clicks {
    /// Returns `false` if the key was already present.
    pub fn insert(&mut self, frame: usize, cam: usize, marker: &str, p: Point2<f64>) -> bool {
        self.0.insert((frame, cam, marker.to_string()), p).is_none()
    }

    pub fn get(&self, frame: usize, cam: usize, marker: &str) -> Option<Point2<f64>> {
        self.0.get(&(frame, cam, marker.to_string())).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize, &str), Point2<f64>)> + '_ {
        self.0.iter().map(|((f, c, m), p)| ((*f, *c, m.as_str()), *p))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Requires exactly one click per frame 0/1, camera and marker.
    pub fn validate(&self, markers: &[String], n_cameras: usize) -> Result<(), TrackError> {
        for frame in 0..2 {
            for cam in 0..n_cameras {
                for m in markers {
                    if self.get(frame, cam, m).is_none() {
                        return Err(TrackError::MissingClick {
                            frame,
                            cam,
                            marker: m.clone(),
                        });
                    }
                }
            }
        }
        if let Some(((frame, cam, marker), _)) = self
            .iter()
            .find(|((f, c, m), _)| *f > 1 || *c >= n_cameras || !markers.iter().any(|x| x == m))
        {
            return Err(TrackError::UnexpectedClick {
                frame,
                cam,
                marker: marker.to_string(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkerRecord {
    pub frame: usize,
    pub marker: String,
    /// Reported image point per camera: the accepted detection, or the
    /// prediction while coasting.
    pub points_2d: Vec<Option<Point2<f64>>>,
    /// Triangulated detection; present only when every camera accepted.
    pub point_3d: Option<Point3<f64>>,
    /// Mean selection score over cameras that produced a candidate.
    pub score: Option<f64>,
    pub status: TrackStatus,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub n_cameras: usize,
    /// Ordered by frame, then by configured marker order.
    pub records: Vec<MarkerRecord>,
}

impl Trajectory {
    pub fn get(&self, frame: usize, marker: &str) -> Option<&MarkerRecord> {
        self.records.iter().find(|r| r.frame == frame && r.marker == marker)
    }

    pub fn n_frames(&self) -> usize {
        self.records.iter().map(|r| r.frame + 1).max().unwrap_or(0)
    }
}

/// Accumulated stage times. Segmentation and matching are summed over
/// window jobs; geometry covers projection, triangulation and filtering.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TimingReport {
    pub frames: usize,
    pub segmentation: Duration,
    pub matching: Duration,
    pub geometry: Duration,
    pub total: Duration,
}

impl fmt::Display for TimingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let total = self.total.as_secs_f64();
        let share = |d: Duration| {
            if total > 0.0 {
                100.0 * d.as_secs_f64() / total
            } else {
                0.0
            }
        };
        writeln!(f, "{:<14}{:>12}{:>9}", "stage", "seconds", "share")?;
        for (name, d) in [
            ("segmentation", self.segmentation),
            ("matching", self.matching),
            ("geometry", self.geometry),
        ] {
            writeln!(f, "{:<14}{:>12.3}{:>8.1}%", name, d.as_secs_f64(), share(d))?;
        }
        writeln!(f, "{:<14}{:>12.3}{:>8.1}%", "total", total, 100.0)?;
        let per_frame = if self.frames > 0 { 1e3 * total / self.frames as f64 } else { 0.0 };
        write!(f, "{} frames, {:.2} ms/frame (calibration excluded)", self.frames, per_frame)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkerTrack {
    pub marker_id: usize,
    pub name: String,
    /// Object-space filter; absent in the 2D baseline.
    pub kalman: Option<KalmanState<f64>>,
    pub appearance_initial: Vec<MarkerAppearance<f64>>,
    pub appearance_prev: Vec<MarkerAppearance<f64>>,
    /// Last accepted image point per camera.
    pub last_2d: Vec<Point2<f64>>,
    /// Baseline image velocity per camera, pixels/frame.
    velocity_2d: Vec<(f64, f64)>,
    last_frame: Vec<usize>,
    pub status: TrackStatus,
}

impl MarkerTrack {
    /// Baseline prediction for camera `cam` at frame `n`.
    fn predict_2d(&self, cam: usize, n: usize) -> Point2<f64> {
        let k = (n - self.last_frame[cam]) as f64;
        let p = self.last_2d[cam];
        let v = self.velocity_2d[cam];
        Point2::new(p.u + k * v.0, p.v + k * v.1)
    }

    fn coasted_frames_2d(&self, n: usize) -> usize {
        self.last_frame.iter().map(|&f| n - f - 1).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
struct Job {
    marker: usize,
    cam: usize,
    predicted: Point2<f64>,
}

#[derive(Debug, Clone)]
struct Detection {
    point: Point2<f64>,
    appearance: MarkerAppearance<f64>,
    score: f64,
    decision: GateDecision,
}

#[derive(Debug, Default)]
struct JobTiming {
    segmentation: Duration,
    matching: Duration,
}

/// Live tracker state for a fixed set of cameras.
#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    cameras: Vec<DltCamera<f64>>,
    n_cameras: usize,
    tracks: Vec<MarkerTrack>,
    next_frame: usize,
    timing: TimingReport,
}

impl Tracker {
    /// Builds tracks from the first two frames of every camera and the
    /// clicks, and returns the records for frames 0 and 1. `cameras` must
    /// hold two models in 3D mode and is ignored by the baseline.
    pub fn initialize(
        frames_0: &[Frame],
        frames_1: &[Frame],
        clicks: &Clicks,
        cameras: &[DltCamera<f64>],
        config: &TrackerConfig,
    ) -> Result<(Self, Vec<MarkerRecord>), TrackError> {
        let start = Instant::now();
        config.validate()?;
        let n_cameras = frames_0.len();
        if frames_1.len() != n_cameras {
            return Err(TrackError::FrameCount {
                expected: n_cameras,
                got: frames_1.len(),
            });
        }
        let three_d = config.mode == TrackingMode::ThreeD;
        if three_d && (cameras.len() != 2 || n_cameras != 2) {
            return Err(TrackError::CameraCount(if cameras.len() != 2 { cameras.len() } else { n_cameras }));
        }
        if n_cameras == 0 {
            return Err(TrackError::FrameCount { expected: 1, got: 0 });
        }
        clicks.validate(&config.markers, n_cameras)?;

        let n_markers = config.markers.len();
        let mut timing = TimingReport::default();
        // appearance[frame][cam][marker]
        let mut appearance = vec![vec![Vec::with_capacity(n_markers); n_cameras]; 2];
        for (t, frames) in [frames_0, frames_1].into_iter().enumerate() {
            for (cam, frame) in frames.iter().enumerate() {
                let seg_start = Instant::now();
                appearance[t][cam] = click_appearances(frame, t, cam, clicks, config)?;
                timing.segmentation += seg_start.elapsed();
            }
        }

        let geo_start = Instant::now();
        let mut tracks = Vec::with_capacity(n_markers);
        let mut records = Vec::with_capacity(2 * n_markers);
        let mut triangulated = vec![[None, None]; n_markers];
        for (m, name) in config.markers.iter().enumerate() {
            let click = |t: usize, c: usize| clicks.get(t, c, name).expect("validated");
            let kalman = if three_d {
                let tri = |t: usize| {
                    triangulate(&[(&cameras[0], click(t, 0)), (&cameras[1], click(t, 1))]).map(|r| r.point)
                };
                let (p0, p1) = (tri(0)?, tri(1)?);
                triangulated[m] = [Some(p0), Some(p1)];
                Some(KalmanState::init(p0, p1, &config.kalman)?)
            } else {
                None
            };
            tracks.push(MarkerTrack {
                marker_id: m,
                name: name.clone(),
                kalman,
                appearance_initial: (0..n_cameras).map(|c| appearance[0][c][m]).collect(),
                appearance_prev: (0..n_cameras).map(|c| appearance[1][c][m]).collect(),
                last_2d: (0..n_cameras).map(|c| click(1, c)).collect(),
                velocity_2d: (0..n_cameras)
                    .map(|c| (click(1, c).u - click(0, c).u, click(1, c).v - click(0, c).v))
                    .collect(),
                last_frame: vec![1; n_cameras],
                status: TrackStatus::Tracked,
            });
        }
        for t in 0..2 {
            for (m, name) in config.markers.iter().enumerate() {
                records.push(MarkerRecord {
                    frame: t,
                    marker: name.clone(),
                    points_2d: (0..n_cameras).map(|c| clicks.get(t, c, name)).collect(),
                    point_3d: triangulated[m][t],
                    score: None,
                    status: TrackStatus::Tracked,
                });
            }
        }
        timing.geometry += geo_start.elapsed();
        timing.frames = 2;
        timing.total = start.elapsed();

        Ok((
            Self {
                config: config.clone(),
                cameras: if three_d { cameras.to_vec() } else { Vec::new() },
                n_cameras,
                tracks,
                next_frame: 2,
                timing,
            },
            records,
        ))
    }

    pub fn tracks(&self) -> &[MarkerTrack] {
        &self.tracks
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn timing(&self) -> TimingReport {
        self.timing
    }

    /// Sequence position of the next frame [`Tracker::step`] expects.
    pub fn next_frame(&self) -> usize {
        self.next_frame
    }

    /// Processes one frame per camera and returns one record per marker.
    pub fn step(&mut self, frames: &[Frame]) -> Result<Vec<MarkerRecord>, TrackError> {
        let start = Instant::now();
        if frames.len() != self.n_cameras {
            return Err(TrackError::FrameCount {
                expected: self.n_cameras,
                got: frames.len(),
            });
        }
        if frames.windows(2).any(|w| w[0].index() != w[1].index()) {
            return Err(TrackError::FrameIndexMismatch(frames.iter().map(Frame::index).collect()));
        }
        let n = self.next_frame;

        let geo_start = Instant::now();
        let jobs = match self.config.mode {
            TrackingMode::ThreeD => self.predict_3d(),
            TrackingMode::TwoDBaseline => self.predict_2d(n),
        };
        let mut geometry = geo_start.elapsed();

        let results: Vec<(Job, Option<Detection>, JobTiming)> = jobs
            .into_par_iter()
            .map(|job| {
                let mut t = JobTiming::default();
                let det = self.detect(&frames[job.cam], &job, &mut t);
                (job, det, t)
            })
            .collect();

        let n_markers = self.tracks.len();
        let mut per_marker: Vec<Vec<Option<(Point2<f64>, Option<Detection>)>>> =
            vec![vec![None; self.n_cameras]; n_markers];
        for (job, det, t) in results {
            self.timing.segmentation += t.segmentation;
            self.timing.matching += t.matching;
            per_marker[job.marker][job.cam] = Some((job.predicted, det));
        }

        let geo_start = Instant::now();
        let records = match self.config.mode {
            TrackingMode::ThreeD => self.join_3d(n, per_marker),
            TrackingMode::TwoDBaseline => self.join_2d(n, per_marker),
        };
        geometry += geo_start.elapsed();

        self.timing.geometry += geometry;
        self.timing.frames += 1;
        self.timing.total += start.elapsed();
        self.next_frame += 1;
        Ok(records)
    }

    fn predict_3d(&mut self) -> Vec<Job> {
        let mut jobs = Vec::new();
        for (m, track) in self.tracks.iter_mut().enumerate() {
            let kalman = track.kalman.as_mut().expect("3D track has a filter");
            let predicted = kalman.predict(&self.config.kalman);
            for (cam, model) in self.cameras.iter().enumerate() {
                if let Ok(q) = model.project(&predicted) {
                    jobs.push(Job {
                        marker: m,
                        cam,
                        predicted: q,
                    });
                }
            }
        }
        jobs
    }

    fn predict_2d(&self, n: usize) -> Vec<Job> {
        let mut jobs = Vec::new();
        for (m, track) in self.tracks.iter().enumerate() {
            for cam in 0..self.n_cameras {
                jobs.push(Job {
                    marker: m,
                    cam,
                    predicted: track.predict_2d(cam, n),
                });
            }
        }
        jobs
    }

    /// Segments the window around the prediction and returns the selected,
    /// gated candidate. `None` means the window could not be searched.
    fn detect(&self, frame: &Frame, job: &Job, timing: &mut JobTiming) -> Option<Detection> {
        let (fw, fh) = (frame.width(), frame.height());
        let p = job.predicted;
        if !p.is_finite() || p.u < 0.0 || p.v < 0.0 || p.u >= fw as f64 || p.v >= fh as f64 {
            return None;
        }
        let seg_start = Instant::now();
        let side = self.config.roi;
        let roi = Roi::centered((p.u, p.v), side.min(fw), side.min(fh), fw, fh).ok()?;
        let window = frame.crop(&roi);
        let track = &self.tracks[job.marker];
        let n_sp = count_for_window(self.config.count_of(&track.name), fw, fh, roi.w, roi.h);
        let seg = segment(&window, &self.config.slic_params(n_sp)).ok()?;
        timing.segmentation += seg_start.elapsed();

        let match_start = Instant::now();
        let origin = (roi.x0 as f64, roi.y0 as f64);
        let prev = &track.appearance_prev[job.cam];
        let init = &track.appearance_initial[job.cam];
        let candidates: Vec<(usize, FeatureVector<f64>)> = seg
            .superpixels
            .iter()
            .filter(|sp| sp.pixel_count > 0)
            .map(|sp| (sp.label, superpixel_features(sp, origin, prev, init, p)))
            .collect();
        let selection = choose(&candidates, &self.config.weights).ok()?;
        let (label, features) = candidates[selection.index];
        let sp = &seg.superpixels[label];
        let (cu, cv) = if self.config.refine {
            merged_centroid(&seg, label, self.config.refine_tolerance)
        } else {
            sp.centroid
        };
        let det = Detection {
            point: Point2::new(cu + origin.0, cv + origin.1),
            appearance: MarkerAppearance::of(sp),
            score: selection.score,
            decision: score_gate(&features, &self.config.gate),
        };
        timing.matching += match_start.elapsed();
        Some(det)
    }

    fn join_3d(
        &mut self,
        n: usize,
        per_marker: Vec<Vec<Option<(Point2<f64>, Option<Detection>)>>>,
    ) -> Vec<MarkerRecord> {
        let mut records = Vec::with_capacity(self.tracks.len());
        for (track, cams) in self.tracks.iter_mut().zip(per_marker) {
            let accepted: Vec<Option<&Detection>> = cams
                .iter()
                .map(|c| c.as_ref().and_then(|(_, d)| d.as_ref()).filter(|d| d.decision.accepted()))
                .collect();
            let mut point_3d = None;
            if accepted.iter().all(Option::is_some) {
                let obs: Vec<_> = self
                    .cameras
                    .iter()
                    .zip(&accepted)
                    .map(|(cam, d)| (cam, d.expect("all accepted").point))
                    .collect();
                if let Ok(tri) = triangulate(&obs) {
                    let kalman = track.kalman.as_mut().expect("3D track has a filter");
                    if kalman.update(tri.point, &self.config.kalman).is_ok() {
                        point_3d = Some(tri.point);
                        for (c, d) in accepted.iter().enumerate() {
                            let d = d.expect("all accepted");
                            track.appearance_prev[c] = d.appearance;
                            track.last_2d[c] = d.point;
                            track.last_frame[c] = n;
                        }
                    }
                }
            }
            let kalman = track.kalman.as_ref().expect("3D track has a filter");
            track.status = if point_3d.is_some() {
                TrackStatus::Tracked
            } else if kalman.frames_since_update > self.config.loss_threshold {
                TrackStatus::Lost
            } else {
                TrackStatus::Coasting
            };
            let points_2d = cams
                .iter()
                .zip(&accepted)
                .map(|(c, a)| match (a, c) {
                    (Some(d), _) => Some(d.point),
                    (None, Some((pred, _))) => Some(*pred),
                    (None, None) => None,
                })
                .collect();
            records.push(MarkerRecord {
                frame: n,
                marker: track.name.clone(),
                points_2d,
                point_3d,
                score: mean_score(&cams),
                status: track.status,
            });
        }
        records
    }

    fn join_2d(
        &mut self,
        n: usize,
        per_marker: Vec<Vec<Option<(Point2<f64>, Option<Detection>)>>>,
    ) -> Vec<MarkerRecord> {
        let mut records = Vec::with_capacity(self.tracks.len());
        for (track, cams) in self.tracks.iter_mut().zip(per_marker) {
            let mut points_2d = Vec::with_capacity(cams.len());
            let mut all_accepted = true;
            for (c, slot) in cams.iter().enumerate() {
                let (pred, det) = slot.as_ref().expect("baseline searches every camera");
                match det.as_ref().filter(|d| d.decision.accepted()) {
                    Some(d) => {
                        let k = (n - track.last_frame[c]) as f64;
                        let last = track.last_2d[c];
                        track.velocity_2d[c] = ((d.point.u - last.u) / k, (d.point.v - last.v) / k);
                        track.last_2d[c] = d.point;
                        track.last_frame[c] = n;
                        track.appearance_prev[c] = d.appearance;
                        points_2d.push(Some(d.point));
                    }
                    None => {
                        all_accepted = false;
                        points_2d.push(Some(*pred));
                    }
                }
            }
            track.status = if all_accepted {
                TrackStatus::Tracked
            } else if track.coasted_frames_2d(n + 1) > self.config.loss_threshold {
                TrackStatus::Lost
            } else {
                TrackStatus::Coasting
            };
            records.push(MarkerRecord {
                frame: n,
                marker: track.name.clone(),
                points_2d,
                point_3d: None,
                score: mean_score(&cams),
                status: track.status,
            });
        }
        records
    }
}

fn mean_score(cams: &[Option<(Point2<f64>, Option<Detection>)>]) -> Option<f64> {
    let scores: Vec<f64> = cams
        .iter()
        .filter_map(|c| c.as_ref().and_then(|(_, d)| d.as_ref()).map(|d| d.score))
        .collect();
    (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Pixel-weighted centroid of superpixel `label` and its 4-connected
/// neighbors whose saturation, hue and gray means are all within `tol`.
fn merged_centroid(seg: &Segmentation, label: usize, tol: f64) -> (f64, f64) {
    let (w, h) = (seg.width, seg.height);
    let target = label as u32;
    let mut neighbors = BTreeSet::new();
    for y in 0..h {
        for x in 0..w {
            let a = seg.labels[y * w + x];
            for b in [
                (x + 1 < w).then(|| seg.labels[y * w + x + 1]),
                (y + 1 < h).then(|| seg.labels[(y + 1) * w + x]),
            ]
            .into_iter()
            .flatten()
            {
                if a == target && b != target {
                    neighbors.insert(b);
                } else if b == target && a != target {
                    neighbors.insert(a);
                }
            }
        }
    }
    let base = &seg.superpixels[label];
    let similar = |sp: &crate::slic::Superpixel| {
        (sp.mean_s - base.mean_s).abs() <= tol
            && hue_distance(sp.mean_h, base.mean_h) <= tol
            && (sp.mean_gray - base.mean_gray).abs() <= tol
    };
    let (mut n, mut su, mut sv) = (0.0, 0.0, 0.0);
    for sp in std::iter::once(base).chain(
        neighbors
            .iter()
            .map(|&l| &seg.superpixels[l as usize])
            .filter(|sp| similar(sp)),
    ) {
        let c = sp.pixel_count as f64;
        n += c;
        su += c * sp.centroid.0;
        sv += c * sp.centroid.1;
    }
    (su / n, sv / n)
}

/// Segments the click window of one camera and frame, and returns the
/// appearance of each marker's superpixel in configured marker order.
fn click_appearances(
    frame: &Frame,
    t: usize,
    cam: usize,
    clicks: &Clicks,
    config: &TrackerConfig,
) -> Result<Vec<MarkerAppearance<f64>>, TrackError> {
    let (fw, fh) = (frame.width(), frame.height());
    let mut points = Vec::with_capacity(config.markers.len());
    for m in &config.markers {
        let p = clicks.get(t, cam, m).expect("validated");
        if !p.is_finite() || p.u < 0.0 || p.v < 0.0 || p.u >= fw as f64 || p.v >= fh as f64 {
            return Err(TrackError::ClickOutside {
                frame: t,
                cam,
                marker: m.clone(),
                u: p.u,
                v: p.v,
            });
        }
        points.push((p.u, p.v));
    }
    let roi = Roi::bounding(&points, config.init_padding, fw, fh).expect("clicks are inside the frame");
    let window = frame.crop(&roi);
    let n_sp = count_for_window(config.init_frame_count(), fw, fh, roi.w, roi.h);
    let seg = segment(&window, &config.slic_params(n_sp))?;

    let mut owner: BTreeMap<u32, &str> = BTreeMap::new();
    let mut out = Vec::with_capacity(points.len());
    for (m, &(u, v)) in config.markers.iter().zip(&points) {
        let label = seg.label_at(u as usize - roi.x0, v as usize - roi.y0);
        if let Some(other) = owner.insert(label, m) {
            return Err(TrackError::SameSuperpixel {
                frame: t,
                cam,
                a: other.to_string(),
                b: m.clone(),
            });
        }
        out.push(MarkerAppearance::of(&seg.superpixels[label as usize]));
    }
    Ok(out)
}

fn check_lengths(sources: &[&dyn FrameSource]) -> Result<usize, TrackError> {
    let lengths: Vec<usize> = sources.iter().map(|s| s.len()).collect();
    if lengths.windows(2).any(|w| w[0] != w[1]) {
        return Err(TrackError::LengthMismatch(lengths));
    }
    let len = lengths.first().copied().unwrap_or(0);
    if len < 2 {
        return Err(TrackError::TooFewFrames(len));
    }
    Ok(len)
}

fn read_all(sources: &[&dyn FrameSource], n: usize) -> Result<Vec<Frame>, TrackError> {
    sources.iter().map(|s| s.frame(n).map_err(TrackError::from)).collect()
}

fn run_mode(
    sources: &[&dyn FrameSource],
    clicks: &Clicks,
    cameras: &[DltCamera<f64>],
    config: &TrackerConfig,
) -> Result<(Trajectory, TimingReport), TrackError> {
    let len = check_lengths(sources)?;
    let start = Instant::now();
    let f0 = read_all(sources, 0)?;
    let f1 = read_all(sources, 1)?;
    let (mut tracker, mut records) = Tracker::initialize(&f0, &f1, clicks, cameras, config)?;
    records.reserve(len * config.markers.len());
    for n in 2..len {
        let frames = read_all(sources, n)?;
        records.extend(tracker.step(&frames)?);
    }
    let mut timing = tracker.timing();
    timing.total = start.elapsed();
    Ok((
        Trajectory {
            n_cameras: sources.len(),
            records,
        },
        timing,
    ))
}

/// Tracks a two-camera sequence in 3D mode.
pub fn run(
    sources: &[&dyn FrameSource],
    clicks: &Clicks,
    cameras: &[DltCamera<f64>],
    config: &TrackerConfig,
) -> Result<(Trajectory, TimingReport), TrackError> {
    let config = TrackerConfig {
        mode: TrackingMode::ThreeD,
        ..config.clone()
    };
    run_mode(sources, clicks, cameras, &config)
}

/// Tracks each camera independently with a 2D constant-velocity predictor.
pub fn run_2d_baseline(
    sources: &[&dyn FrameSource],
    clicks: &Clicks,
    config: &TrackerConfig,
) -> Result<(Trajectory, TimingReport), TrackError> {
    let config = TrackerConfig {
        mode: TrackingMode::TwoDBaseline,
        ..config.clone()
    };
    run_mode(sources, clicks, &[], &config)
}
