//! Synthetic multi-camera marker scenes with ground truth, and scoring of
//! tracker output against them.
//!
//! Markers are flat colored discs of fixed pixel radius centered on the
//! projection of a 3D trajectory. Difficulty events paint occluders over a
//! marker, wash it out, or hide it from the start of the sequence.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{DltCamera, GeometryError, Point2, Point3};
use crate::imgproc::Frame;
use crate::io::{self, FrameSource, IoError};
use crate::tracker::{Clicks, Trajectory, TrackStatus};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("marker `{marker}` leaves camera {cam} at frame {frame} with no event covering it")]
    LeavesView { marker: String, cam: usize, frame: usize },
    #[error("scenario file: {0}")]
    Parse(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("trajectory has no record for marker `{marker}` at frame {frame}")]
    MissingRecord { frame: usize, marker: String },
    #[error("trajectory record for marker `{marker}` at frame {frame} has no ground truth")]
    ExtraRecord { frame: usize, marker: String },
    #[error("tolerance must be finite and non-negative")]
    BadTolerance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectorySpec {
    /// `start + n·velocity`.
    Constant { start: [f64; 3], velocity: [f64; 3] },
    /// Constant velocity plus a vertical sinusoid on `z`.
    Gait {
        start: [f64; 3],
        velocity: [f64; 3],
        amplitude: f64,
        period: f64,
        #[serde(default)]
        phase: f64,
    },
}

impl TrajectorySpec {
    pub fn position(&self, n: usize) -> Point3<f64> {
        let t = n as f64;
        match *self {
            TrajectorySpec::Constant { start, velocity } => Point3::new(
                start[0] + t * velocity[0],
                start[1] + t * velocity[1],
                start[2] + t * velocity[2],
            ),
            TrajectorySpec::Gait {
                start,
                velocity,
                amplitude,
                period,
                phase,
            } => Point3::new(
                start[0] + t * velocity[0],
                start[1] + t * velocity[1],
                start[2] + t * velocity[2] + amplitude * (std::f64::consts::TAU * t / period + phase).sin(),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkerSpec {
    pub name: String,
    pub radius_px: f64,
    pub color: [u8; 3],
    pub trajectory: TrajectorySpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    OcclusionFull,
    OcclusionPartial,
    BadMarker,
    MissingStart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Event {
    pub kind: EventKind,
    pub marker: String,
    /// First affected frame.
    pub start: usize,
    /// Last affected frame, inclusive.
    pub end: usize,
    /// Affected camera; all cameras when absent.
    #[serde(default)]
    pub camera: Option<usize>,
}

impl Event {
    fn covers(&self, marker: &str, frame: usize, cam: usize) -> bool {
        self.marker == marker && frame >= self.start && frame <= self.end && self.camera.is_none_or(|c| c == cam)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub center: [f64; 3],
    pub target: [f64; 3],
    #[serde(default = "default_up")]
    pub up: [f64; 3],
    pub focal_px: f64,
    pub principal: [f64; 2],
}

fn default_up() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

impl CameraSpec {
    pub fn model(&self, id: usize) -> Result<DltCamera<f64>, GeometryError> {
        let p = |a: [f64; 3]| Point3::new(a[0], a[1], a[2]);
        DltCamera::pinhole(
            id,
            p(self.center),
            p(self.target),
            p(self.up),
            self.focal_px,
            Point2::new(self.principal[0], self.principal[1]),
        )
    }
}

/// Two cameras 300 mm apart, 1 m from the walkway, about 2 px/mm.
pub fn default_cameras() -> Vec<CameraSpec> {
    [-150.0, 150.0]
        .into_iter()
        .map(|x| CameraSpec {
            center: [x, -1000.0, 100.0],
            target: [0.0, 0.0, 80.0],
            up: default_up(),
            focal_px: 2000.0,
            principal: [1024.0, 350.0],
        })
        .collect()
}

fn default_width() -> usize {
    2048
}

fn default_height() -> usize {
    700
}

fn default_noise() -> f64 {
    3.0
}

fn default_background() -> [u8; 3] {
    [70, 90, 70]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub n_frames: usize,
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_height")]
    pub height: usize,
    #[serde(default)]
    pub seed: u64,
    /// Standard deviation of additive per-channel noise, gray levels.
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    #[serde(default = "default_background")]
    pub background: [u8; 3],
    pub markers: Vec<MarkerSpec>,
    #[serde(default)]
    pub events: Vec<Event>,
    #[serde(default = "default_cameras")]
    pub cameras: Vec<CameraSpec>,
}

pub const OCCLUDER_COLOR: [u8; 3] = [128, 128, 128];
const FULL_OCCLUDER_SCALE: f64 = 1.8;
const BAD_MARKER_FADE: f64 = 0.5;
const BAD_MARKER_SHRINK: f64 = 0.75;
const MISSING_START_FADE: f64 = 0.85;

/// Default marker layout: name, disc radius (px), color, height above the
/// floor (mm), horizontal offset (mm), gait amplitude (mm).
const DEFAULT_LAYOUT: [(&str, f64, [u8; 3], f64, f64, f64); 5] = [
    ("toe", 9.56, [225, 35, 35], 20.0, 30.0, 8.0),
    ("ankle", 9.56, [40, 70, 225], 50.0, 15.0, 6.0),
    ("knee", 11.42, [235, 205, 25], 85.0, 0.0, 4.0),
    ("hip", 17.44, [215, 40, 205], 120.0, -15.0, 2.0),
    ("asis", 17.44, [25, 205, 215], 155.0, -30.0, 2.0),
];

impl Scenario {
    /// Five markers in gait-like motion across the default camera pair.
    pub fn default_trial(seed: u64, n_frames: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let speed = (240.0 / n_frames.max(1) as f64).min(1.5);
        let x0 = -speed * n_frames as f64 / 2.0;
        let period = 40.0;
        let markers = DEFAULT_LAYOUT
            .iter()
            .enumerate()
            .map(|(i, &(name, radius_px, color, z, dx, amplitude))| MarkerSpec {
                name: name.to_string(),
                radius_px,
                color,
                trajectory: TrajectorySpec::Gait {
                    start: [x0 + dx, rng.random_range(-5.0..5.0), z],
                    velocity: [speed, 0.0, 0.0],
                    amplitude,
                    period,
                    phase: 0.6 * i as f64 + rng.random_range(0.0..0.5),
                },
            })
            .collect();
        Self {
            n_frames,
            width: default_width(),
            height: default_height(),
            seed,
            noise_sigma: default_noise(),
            background: default_background(),
            markers,
            events: Vec::new(),
            cameras: default_cameras(),
        }
    }

    /// An 80-frame trial in which two or three markers are fully occluded
    /// for 5 to 10 frames each, in one or both cameras.
    pub fn occlusion_trial(seed: u64) -> Self {
        let mut s = Self::default_trial(seed, 80);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0cc1_0de5);
        let n_events = rng.random_range(2..=3);
        let mut names: Vec<String> = s.markers.iter().map(|m| m.name.clone()).collect();
        for _ in 0..n_events {
            let marker = names.swap_remove(rng.random_range(0..names.len()));
            let len = rng.random_range(5..=10);
            let start = rng.random_range(12..=60);
            let camera = if rng.random_bool(0.5) {
                None
            } else {
                Some(rng.random_range(0..2))
            };
            s.events.push(Event {
                kind: EventKind::OcclusionFull,
                marker,
                start,
                end: start + len - 1,
                camera,
            });
        }
        s
    }

    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        let s: Self = toml::from_str(text).map_err(|e| SynthError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        Self::from_toml(&io::read_text(path)?)
    }

    pub fn camera_models(&self) -> Result<Vec<DltCamera<f64>>, SynthError> {
        self.cameras
            .iter()
            .enumerate()
            .map(|(i, c)| c.model(i).map_err(SynthError::from))
            .collect()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Invalid(m));
        if self.n_frames < 2 {
            return bad(format!("n_frames must be at least 2, got {}", self.n_frames));
        }
        if self.width < 8 || self.height < 8 {
            return bad(format!("frame size {}x{} is too small", self.width, self.height));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be finite and non-negative".into());
        }
        if self.markers.is_empty() {
            return bad("at least one marker is required".into());
        }
        if self.cameras.is_empty() || self.cameras.len() > 2 {
            return bad(format!("1 or 2 cameras are supported, got {}", self.cameras.len()));
        }
        let mut names = std::collections::BTreeSet::new();
        for m in &self.markers {
            if !names.insert(m.name.as_str()) {
                return bad(format!("marker `{}` is listed twice", m.name));
            }
            if !(m.radius_px > 0.0 && m.radius_px.is_finite()) {
                return bad(format!("marker `{}` radius must be positive", m.name));
            }
            if let TrajectorySpec::Gait { period, .. } = m.trajectory {
                if !(period > 0.0 && period.is_finite()) {
                    return bad(format!("marker `{}` gait period must be positive", m.name));
                }
            }
        }
        for e in &self.events {
            if !names.contains(e.marker.as_str()) {
                return bad(format!("event references unknown marker `{}`", e.marker));
            }
            if e.start > e.end || e.end >= self.n_frames {
                return bad(format!("event span {}..={} is outside 0..{}", e.start, e.end, self.n_frames));
            }
            if e.camera.is_some_and(|c| c >= self.cameras.len()) {
                return bad(format!("event camera {} does not exist", e.camera.unwrap_or_default()));
            }
        }
        let models = self.camera_models()?;
        for m in &self.markers {
            for n in 0..self.n_frames {
                let p = m.trajectory.position(n);
                for (cam, model) in models.iter().enumerate() {
                    let inside = model
                        .project(&p)
                        .is_ok_and(|q| q.u >= 0.0 && q.v >= 0.0 && q.u < self.width as f64 && q.v < self.height as f64);
                    if !inside && !self.events.iter().any(|e| e.covers(&m.name, n, cam)) {
                        return Err(SynthError::LeavesView {
                            marker: m.name.clone(),
                            cam,
                            frame: n,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    fn active(&self, marker: &str, frame: usize, cam: usize, kind: EventKind) -> bool {
        self.events.iter().any(|e| e.kind == kind && e.covers(marker, frame, cam))
    }

    /// Table condition of a marker-frame: the most severe event active in
    /// any camera.
    pub fn condition(&self, marker: &str, frame: usize) -> Condition {
        let kinds: Vec<EventKind> = self
            .events
            .iter()
            .filter(|e| e.marker == marker && frame >= e.start && frame <= e.end)
            .map(|e| e.kind)
            .collect();
        [
            (EventKind::OcclusionFull, Condition::Occluded),
            (EventKind::OcclusionPartial, Condition::PartiallyOccluded),
            (EventKind::MissingStart, Condition::MissingStart),
            (EventKind::BadMarker, Condition::BadMarker),
        ]
        .into_iter()
        .find(|(k, _)| kinds.contains(k))
        .map_or(Condition::PerfectConsecutive, |(_, c)| c)
    }

    pub fn ground_truth(&self) -> Result<GroundTruth, SynthError> {
        let models = self.camera_models()?;
        let mut records = Vec::with_capacity(self.n_frames * self.markers.len());
        for n in 0..self.n_frames {
            for m in &self.markers {
                let point = m.trajectory.position(n);
                let mut pixels = Vec::with_capacity(models.len());
                let mut visible = Vec::with_capacity(models.len());
                for (cam, model) in models.iter().enumerate() {
                    let q = model.project(&point)?;
                    let inside = q.u >= 0.0 && q.v >= 0.0 && q.u < self.width as f64 && q.v < self.height as f64;
                    let hidden = self.active(&m.name, n, cam, EventKind::OcclusionFull)
                        || self.active(&m.name, n, cam, EventKind::MissingStart);
                    pixels.push(q);
                    visible.push(inside && !hidden);
                }
                records.push(TruthRecord {
                    frame: n,
                    marker: m.name.clone(),
                    point,
                    radius_px: m.radius_px,
                    pixels,
                    visible,
                    condition: self.condition(&m.name, n),
                });
            }
        }
        Ok(GroundTruth {
            n_cameras: models.len(),
            records,
        })
    }

    /// Clicks at the true image positions in frames 0 and 1.
    pub fn clicks(&self, truth: &GroundTruth) -> Clicks {
        let mut clicks = Clicks::default();
        for r in truth.records.iter().filter(|r| r.frame < 2) {
            for (cam, q) in r.pixels.iter().enumerate() {
                clicks.insert(r.frame, cam, &r.marker, *q);
            }
        }
        clicks
    }

    /// A renderer for every camera.
    pub fn renderers(&self) -> Result<Vec<Renderer>, SynthError> {
        self.validate()?;
        let models = self.camera_models()?;
        let table = noise_table(self.seed, self.noise_sigma);
        Ok(models
            .into_iter()
            .enumerate()
            .map(|(cam, model)| Renderer {
                scenario: self.clone(),
                cam,
                model,
                noise: table.clone(),
            })
            .collect())
    }

    /// Writes `cam<K>/` image directories, `truth.csv`, `clicks.csv`,
    /// `cameras.csv`, calibration-object files and the scenario itself.
    pub fn generate(&self, out_dir: &Path) -> Result<GroundTruth, SynthError> {
        let renderers = self.renderers()?;
        let truth = self.ground_truth()?;
        io::ensure_dir(out_dir)?;
        for r in &renderers {
            let dir = out_dir.join(format!("cam{}", r.cam));
            io::ensure_dir(&dir)?;
            (0..self.n_frames).into_par_iter().try_for_each(|n| {
                let frame = r.render(n);
                io::save_frame(&dir.join(io::frame_file_name(r.cam, n, "png")), &frame)
            })?;
        }
        truth.write_csv(&out_dir.join("truth.csv"))?;
        io::write_clicks(&out_dir.join("clicks.csv"), &self.clicks(&truth))?;
        let models: Vec<_> = renderers.iter().map(|r| r.model.clone()).collect();
        io::write_cameras(&out_dir.join("cameras.csv"), &models)?;
        let (object, observations) = calibration_frame(&models)?;
        io::write_object_points(&out_dir.join("calib_object.csv"), &object)?;
        io::write_observations(&out_dir.join("calib_observations.csv"), &observations)?;
        io::write_text(&out_dir.join("scenario.toml"), &self.to_toml())?;
        Ok(truth)
    }
}

/// A 5×5 two-level ball grid in front of the cameras and its exact
/// projections, for calibration round trips.
pub fn calibration_frame(
    cameras: &[DltCamera<f64>],
) -> Result<(BTreeMap<String, Point3<f64>>, Vec<(String, usize, Point2<f64>)>), GeometryError> {
    let mut object = BTreeMap::new();
    let mut obs = Vec::new();
    for i in 0..25 {
        let (col, row) = (i % 5, i / 5);
        let id = format!("b{i:02}");
        let p = Point3::new(
            -120.0 + 60.0 * col as f64,
            if (col + row) % 2 == 0 { -40.0 } else { 40.0 },
            20.0 + 35.0 * row as f64,
        );
        for cam in cameras {
            obs.push((id.clone(), cam.id, cam.project(&p)?));
        }
        object.insert(id, p);
    }
    Ok((object, obs))
}

const NOISE_TABLE_LEN: usize = 1 << 16;

fn noise_table(seed: u64, sigma: f64) -> std::sync::Arc<Vec<i16>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let table = if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("sigma validated");
        (0..NOISE_TABLE_LEN)
            .map(|_| normal.sample(&mut rng).round().clamp(-255.0, 255.0) as i16)
            .collect()
    } else {
        vec![0; NOISE_TABLE_LEN]
    };
    std::sync::Arc::new(table)
}

/// Renders frames of one camera on demand.
#[derive(Debug, Clone)]
pub struct Renderer {
    scenario: Scenario,
    cam: usize,
    model: DltCamera<f64>,
    noise: std::sync::Arc<Vec<i16>>,
}

struct Disc {
    cx: f64,
    cy: f64,
    r: f64,
    color: [f64; 3],
}

impl Renderer {
    pub fn camera(&self) -> &DltCamera<f64> {
        &self.model
    }

    fn discs(&self, n: usize) -> Vec<Disc> {
        let s = &self.scenario;
        let bg = s.background.map(f64::from);
        let blend = |c: [u8; 3], t: f64| {
            let c = c.map(f64::from);
            [0, 1, 2].map(|i| c[i] + t * (bg[i] - c[i]))
        };
        let mut markers = Vec::new();
        let mut occluders = Vec::new();
        for m in &s.markers {
            let Ok(q) = self.model.project(&m.trajectory.position(n)) else {
                continue;
            };
            let on = |kind| s.active(&m.name, n, self.cam, kind);
            let (mut r, mut color) = (m.radius_px, blend(m.color, 0.0));
            if on(EventKind::BadMarker) {
                r *= BAD_MARKER_SHRINK;
                color = blend(m.color, BAD_MARKER_FADE);
            }
            if on(EventKind::MissingStart) {
                color = blend(m.color, MISSING_START_FADE);
            }
            markers.push(Disc {
                cx: q.u,
                cy: q.v,
                r,
                color,
            });
            let gray = OCCLUDER_COLOR.map(f64::from);
            if on(EventKind::OcclusionFull) {
                occluders.push(Disc {
                    cx: q.u,
                    cy: q.v,
                    r: FULL_OCCLUDER_SCALE * m.radius_px,
                    color: gray,
                });
            } else if on(EventKind::OcclusionPartial) {
                occluders.push(Disc {
                    cx: q.u + m.radius_px,
                    cy: q.v - 0.3 * m.radius_px,
                    r: m.radius_px,
                    color: gray,
                });
            }
        }
        markers.extend(occluders);
        markers
    }

    pub fn render(&self, n: usize) -> Frame {
        let s = &self.scenario;
        let (w, h) = (s.width, s.height);
        let mut rgb = vec![s.background; w * h];
        for d in self.discs(n) {
            paint_disc(&mut rgb, w, h, &d);
        }
        if s.noise_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
            rng.set_stream(((self.cam as u64) << 32) | n as u64);
            let mask = NOISE_TABLE_LEN - 1;
            for row in rgb.chunks_exact_mut(w) {
                let mut k = rng.random::<u32>() as usize;
                for px in row {
                    for c in px.iter_mut() {
                        let v = i16::from(*c) + self.noise[k & mask];
                        *c = v.clamp(0, 255) as u8;
                        k += 1;
                    }
                }
            }
        }
        Frame::new(w, h, n, rgb).expect("sized buffer")
    }
}

/// Alpha-blends an anti-aliased disc using 4×4 supersampling on edge pixels.
fn paint_disc(rgb: &mut [[u8; 3]], w: usize, h: usize, d: &Disc) {
    let x_lo = (d.cx - d.r - 1.0).floor().max(0.0) as usize;
    let y_lo = (d.cy - d.r - 1.0).floor().max(0.0) as usize;
    let x_hi = ((d.cx + d.r + 1.0).ceil().max(0.0) as usize).min(w);
    let y_hi = ((d.cy + d.r + 1.0).ceil().max(0.0) as usize).min(h);
    for y in y_lo..y_hi {
        for x in x_lo..x_hi {
            let (dx, dy) = (x as f64 + 0.5 - d.cx, y as f64 + 0.5 - d.cy);
            let dist = (dx * dx + dy * dy).sqrt();
            let cover = if dist <= d.r - 0.75 {
                1.0
            } else if dist >= d.r + 0.75 {
                0.0
            } else {
                let mut hits = 0;
                for sy in 0..4 {
                    for sx in 0..4 {
                        let px = x as f64 + (sx as f64 + 0.5) / 4.0 - d.cx;
                        let py = y as f64 + (sy as f64 + 0.5) / 4.0 - d.cy;
                        if px * px + py * py <= d.r * d.r {
                            hits += 1;
                        }
                    }
                }
                f64::from(hits) / 16.0
            };
            if cover > 0.0 {
                let p = &mut rgb[y * w + x];
                for c in 0..3 {
                    let v = f64::from(p[c]) * (1.0 - cover) + d.color[c] * cover;
                    p[c] = v.round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
}

impl FrameSource for Renderer {
    fn len(&self) -> usize {
        self.scenario.n_frames
    }

    fn frame(&self, n: usize) -> Result<Frame, IoError> {
        Ok(self.render(n))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    BadMarker,
    MissingStart,
    PartiallyOccluded,
    Occluded,
    PerfectConsecutive,
}

impl Condition {
    pub const ALL: [Condition; 5] = [
        Condition::BadMarker,
        Condition::MissingStart,
        Condition::PartiallyOccluded,
        Condition::Occluded,
        Condition::PerfectConsecutive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::BadMarker => "bad_marker",
            Condition::MissingStart => "missing_start",
            Condition::PartiallyOccluded => "partially_occluded",
            Condition::Occluded => "occluded",
            Condition::PerfectConsecutive => "perfect_consecutive",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthRecord {
    pub frame: usize,
    pub marker: String,
    pub point: Point3<f64>,
    pub radius_px: f64,
    pub pixels: Vec<Point2<f64>>,
    pub visible: Vec<bool>,
    pub condition: Condition,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub n_cameras: usize,
    pub records: Vec<TruthRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TruthRow {
    frame: usize,
    marker: String,
    x: f64,
    y: f64,
    z: f64,
    radius_px: f64,
    cam0_u: f64,
    cam0_v: f64,
    cam0_visible: bool,
    cam1_u: Option<f64>,
    cam1_v: Option<f64>,
    cam1_visible: Option<bool>,
    condition: Condition,
}

impl GroundTruth {
    pub fn write_csv(&self, path: &Path) -> Result<(), IoError> {
        let mut w = io::csv_writer_for(path)?;
        for r in &self.records {
            let second = r.pixels.get(1);
            w.serialize(TruthRow {
                frame: r.frame,
                marker: r.marker.clone(),
                x: r.point.x,
                y: r.point.y,
                z: r.point.z,
                radius_px: r.radius_px,
                cam0_u: r.pixels[0].u,
                cam0_v: r.pixels[0].v,
                cam0_visible: r.visible[0],
                cam1_u: second.map(|q| q.u),
                cam1_v: second.map(|q| q.v),
                cam1_visible: r.visible.get(1).copied(),
                condition: r.condition,
            })
            .map_err(|e| io::csv_write_error(path, e))?;
        }
        w.flush().map_err(|e| IoError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn read_csv(path: &Path) -> Result<Self, IoError> {
        let mut reader = io::csv_reader_for(path)?;
        let mut records = Vec::new();
        let mut n_cameras = 1;
        for row in reader.deserialize::<TruthRow>() {
            let r = row.map_err(|e| io::csv_parse_error(path, e))?;
            let mut pixels = vec![Point2::new(r.cam0_u, r.cam0_v)];
            let mut visible = vec![r.cam0_visible];
            if let (Some(u), Some(v), Some(vis)) = (r.cam1_u, r.cam1_v, r.cam1_visible) {
                pixels.push(Point2::new(u, v));
                visible.push(vis);
                n_cameras = 2;
            }
            records.push(TruthRecord {
                frame: r.frame,
                marker: r.marker,
                point: Point3::new(r.x, r.y, r.z),
                radius_px: r.radius_px,
                pixels,
                visible,
                condition: r.condition,
            });
        }
        Ok(Self { n_cameras, records })
    }
}

/// Labeled reference percentages from the original real-animal dataset,
/// for context only. Marker-frame total excludes missing-start frames.
pub const REFERENCE_PERCENT: [(ReportRow, f64); 6] = [
    (ReportRow::Condition(Condition::BadMarker), 85.79),
    (ReportRow::Condition(Condition::MissingStart), 11.99),
    (ReportRow::Condition(Condition::PartiallyOccluded), 94.28),
    (ReportRow::Condition(Condition::Occluded), 89.36),
    (ReportRow::Condition(Condition::PerfectConsecutive), 99.99),
    (ReportRow::Total, 95.01),
];

/// Reference processing time per 1,000-frame trial on the original
/// hardware: mean and standard deviation, seconds.
pub const REFERENCE_TRIAL_SECONDS: (f64, f64) = (149.0, 18.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ReportRow {
    Condition(Condition),
    /// Every condition except missing start.
    Total,
}

impl ReportRow {
    pub fn as_str(self) -> &'static str {
        match self {
            ReportRow::Condition(c) => c.as_str(),
            ReportRow::Total => "total",
        }
    }

    pub fn reference_percent(self) -> Option<f64> {
        REFERENCE_PERCENT.iter().find(|(r, _)| *r == self).map(|(_, p)| *p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RowCount {
    pub marker_frames: usize,
    pub correct: usize,
}

impl RowCount {
    pub fn percent(&self) -> Option<f64> {
        (self.marker_frames > 0).then(|| 100.0 * self.correct as f64 / self.marker_frames as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub tol_px: f64,
    pub rows: Vec<(ReportRow, RowCount)>,
    /// Full-occlusion spans followed by at least one frame.
    pub occlusion_events: usize,
    /// Spans after which the marker was tracked within tolerance in one of
    /// the next [`REACQUIRE_WINDOW`] frames.
    pub reacquired: usize,
}

pub const REACQUIRE_WINDOW: usize = 3;

/// A hidden camera's reported point counts as correct within this many
/// marker radii of the true projection.
pub const HIDDEN_RADIUS_FACTOR: f64 = 5.0;

impl EvalReport {
    pub fn row(&self, row: ReportRow) -> RowCount {
        self.rows.iter().find(|(r, _)| *r == row).map(|(_, c)| *c).unwrap_or_default()
    }

    pub fn total_percent(&self) -> Option<f64> {
        self.row(ReportRow::Total).percent()
    }

    pub fn reacquisition_rate(&self) -> Option<f64> {
        (self.occlusion_events > 0).then(|| self.reacquired as f64 / self.occlusion_events as f64)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), IoError> {
        let mut w = io::csv_writer_for(path)?;
        let err = |e| io::csv_write_error(path, e);
        w.write_record(["condition", "marker_frames", "correct", "percent", "reference_percent"])
            .map_err(err)?;
        for (row, c) in &self.rows {
            let pct = c.percent().map_or(String::new(), |p| format!("{p:.2}"));
            let reference = row.reference_percent().map_or(String::new(), |p| format!("{p:.2}"));
            w.write_record([
                row.as_str().to_string(),
                c.marker_frames.to_string(),
                c.correct.to_string(),
                pct,
                reference,
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| IoError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "tolerance {} px", self.tol_px)?;
        writeln!(
            f,
            "{:<22}{:>14}{:>10}{:>10}{:>12}",
            "condition", "marker-frames", "correct", "percent", "reference*"
        )?;
        for (row, c) in &self.rows {
            let pct = c.percent().map_or("n/a".to_string(), |p| format!("{p:.2}"));
            let reference = row.reference_percent().map_or("-".to_string(), |p| format!("{p:.2}"));
            writeln!(
                f,
                "{:<22}{:>14}{:>10}{:>10}{:>12}",
                row.as_str(),
                c.marker_frames,
                c.correct,
                pct,
                reference
            )?;
        }
        if let Some(rate) = self.reacquisition_rate() {
            writeln!(
                f,
                "re-acquired within {REACQUIRE_WINDOW} frames: {}/{} occlusions ({:.1}%)",
                self.reacquired,
                self.occlusion_events,
                100.0 * rate
            )?;
        }
        let (mean, sd) = REFERENCE_TRIAL_SECONDS;
        write!(
            f,
            "* reference values come from the original real-animal recordings and are \
             context only, not targets; reference time per 1000-frame trial {mean}±{sd} s"
        )
    }
}

fn record_correct(points: &[Option<Point2<f64>>], truth: &TruthRecord, tol_px: f64) -> bool {
    truth.pixels.iter().zip(&truth.visible).enumerate().all(|(cam, (q, &vis))| {
        let limit = if vis { tol_px } else { HIDDEN_RADIUS_FACTOR * truth.radius_px };
        points.get(cam).copied().flatten().is_some_and(|p| p.distance(q) <= limit)
    })
}

/// Scores a trajectory against ground truth. A marker-frame is correct when
/// every camera's reported point lies within `tol_px` of the true
/// projection where the marker is visible, and within
/// [`HIDDEN_RADIUS_FACTOR`] marker radii where it is hidden.
pub fn evaluate(trajectory: &Trajectory, truth: &GroundTruth, tol_px: f64) -> Result<EvalReport, EvalError> {
    if !(tol_px >= 0.0 && tol_px.is_finite()) {
        return Err(EvalError::BadTolerance);
    }
    let by_key: BTreeMap<(usize, &str), &crate::tracker::MarkerRecord> =
        trajectory.records.iter().map(|r| ((r.frame, r.marker.as_str()), r)).collect();
    let truth_keys: BTreeMap<(usize, &str), &TruthRecord> =
        truth.records.iter().map(|r| ((r.frame, r.marker.as_str()), r)).collect();
    if let Some((frame, marker)) = by_key.keys().find(|k| !truth_keys.contains_key(*k)) {
        return Err(EvalError::ExtraRecord {
            frame: *frame,
            marker: marker.to_string(),
        });
    }

    let mut counts: BTreeMap<Condition, RowCount> = Condition::ALL.iter().map(|c| (*c, RowCount::default())).collect();
    let mut correct_at: BTreeMap<(usize, &str), bool> = BTreeMap::new();
    for (key, t) in &truth_keys {
        let rec = by_key.get(key).ok_or_else(|| EvalError::MissingRecord {
            frame: key.0,
            marker: key.1.to_string(),
        })?;
        let ok = record_correct(&rec.points_2d, t, tol_px);
        let c = counts.get_mut(&t.condition).expect("all conditions present");
        c.marker_frames += 1;
        c.correct += usize::from(ok);
        correct_at.insert(*key, ok && rec.status == TrackStatus::Tracked);
    }
    let mut total = RowCount::default();
    for (cond, c) in &counts {
        if *cond != Condition::MissingStart {
            total.marker_frames += c.marker_frames;
            total.correct += c.correct;
        }
    }

    let mut occlusion_events = 0;
    let mut reacquired = 0;
    for (&(frame, marker), t) in &truth_keys {
        let next = truth_keys.get(&(frame + 1, marker));
        let ends_here = t.condition == Condition::Occluded && next.is_some_and(|n| n.condition != Condition::Occluded);
        if ends_here {
            occlusion_events += 1;
            let hit = (1..=REACQUIRE_WINDOW).any(|k| correct_at.get(&(frame + k, marker)).copied().unwrap_or(false));
            reacquired += usize::from(hit);
        }
    }

    let mut rows: Vec<(ReportRow, RowCount)> = Condition::ALL.iter().map(|c| (ReportRow::Condition(*c), counts[c])).collect();
    rows.push((ReportRow::Total, total));
    Ok(EvalReport {
        tol_px,
        rows,
        occlusion_events,
        reacquired,
    })
}
