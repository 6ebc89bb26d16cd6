//! File formats: image sequences, calibration CSVs, camera models, clicks,
//! trajectories and ground truth.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{DltCamera, GeometryError, Point2, Point3};
use crate::imgproc::{demosaic, BayerPattern, Frame, ImageError};
use crate::slic::Segmentation;
use crate::tracker::{Clicks, MarkerRecord, TrackStatus, Trajectory};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Frame(#[from] ImageError),
}

impl IoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn format(path: &Path, message: impl Into<String>) -> Self {
        IoError::Format {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }
}

/// Random-access sequence of frames from one camera.
pub trait FrameSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Frame at sequence position `n`.
    fn frame(&self, n: usize) -> Result<Frame, IoError>;
}

impl FrameSource for Vec<Frame> {
    fn len(&self) -> usize {
        <[Frame]>::len(self)
    }

    fn frame(&self, n: usize) -> Result<Frame, IoError> {
        self.get(n)
            .cloned()
            .ok_or_else(|| IoError::format(Path::new("<memory>"), format!("no frame {n}")))
    }
}

/// Parses `cam<K>_<NNNNNN>.<ext>` into `(K, N)`.
pub fn parse_frame_name(name: &str) -> Option<(usize, usize)> {
    let (stem, ext) = name.rsplit_once('.')?;
    if !matches!(ext.to_ascii_lowercase().as_str(), "png" | "ppm" | "pgm" | "pnm") {
        return None;
    }
    let rest = stem.strip_prefix("cam")?;
    let (cam, idx) = rest.split_once('_')?;
    if cam.is_empty() || idx.len() != 6 || !idx.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some((cam.parse().ok()?, idx.parse().ok()?))
}

pub fn frame_file_name(cam: usize, index: usize, ext: &str) -> String {
    format!("cam{cam}_{index:06}.{ext}")
}

/// Frames of one camera stored as image files in a directory.
#[derive(Debug, Clone)]
pub struct DirectorySource {
    files: Vec<(usize, PathBuf)>,
    bayer: Option<BayerPattern>,
}

impl DirectorySource {
    /// Collects files for camera `cam`, ordered by frame number. With a Bayer
    /// pattern, files are read as single-plane mosaics and demosaiced.
    pub fn open(dir: &Path, cam: usize, bayer: Option<BayerPattern>) -> Result<Self, IoError> {
        let mut files = Vec::new();
        for entry in fs::read_dir(dir).map_err(|e| IoError::io(dir, e))? {
            let entry = entry.map_err(|e| IoError::io(dir, e))?;
            let name = entry.file_name();
            if let Some((k, n)) = name.to_str().and_then(parse_frame_name) {
                if k == cam {
                    files.push((n, entry.path()));
                }
            }
        }
        files.sort();
        if files.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(IoError::format(dir, "duplicate frame numbers"));
        }
        Ok(Self { files, bayer })
    }

    /// Opens the first camera found in `dir` when the camera id is not known.
    pub fn open_any(dir: &Path, bayer: Option<BayerPattern>) -> Result<(usize, Self), IoError> {
        let mut cams: Vec<usize> = fs::read_dir(dir)
            .map_err(|e| IoError::io(dir, e))?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str().and_then(parse_frame_name))
            .map(|(k, _)| k)
            .collect();
        cams.sort_unstable();
        cams.dedup();
        let cam = *cams
            .first()
            .ok_or_else(|| IoError::format(dir, "no cam<K>_<NNNNNN> image files"))?;
        Ok((cam, Self::open(dir, cam, bayer)?))
    }
}

impl FrameSource for DirectorySource {
    fn len(&self) -> usize {
        self.files.len()
    }

    fn frame(&self, n: usize) -> Result<Frame, IoError> {
        let (index, path) = self
            .files
            .get(n)
            .ok_or_else(|| IoError::format(Path::new("<sequence>"), format!("no frame {n}")))?;
        load_frame(path, *index, self.bayer)
    }
}

pub fn load_frame(path: &Path, index: usize, bayer: Option<BayerPattern>) -> Result<Frame, IoError> {
    let img = image::open(path).map_err(|source| IoError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match bayer {
        Some(pattern) => {
            let plane = img.to_luma8().into_raw();
            Ok(demosaic(&plane, w, h, pattern, index)?)
        }
        None => {
            let raw = img.to_rgb8().into_raw();
            let rgb = raw.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
            Ok(Frame::new(w, h, index, rgb)?)
        }
    }
}

/// Writes a frame as PNG (or binary PPM when the extension is `ppm`).
pub fn save_frame(path: &Path, frame: &Frame) -> Result<(), IoError> {
    let raw: Vec<u8> = frame.rgb().iter().flatten().copied().collect();
    let img = image::RgbImage::from_raw(frame.width() as u32, frame.height() as u32, raw)
        .expect("buffer sized from frame");
    img.save(path).map_err(|source| IoError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Label map as a 16-bit grayscale PNG (labels above 65535 saturate).
pub fn save_label_map(path: &Path, seg: &Segmentation) -> Result<(), IoError> {
    let data: Vec<u16> = seg.labels.iter().map(|&l| l.min(u32::from(u16::MAX)) as u16).collect();
    let img: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
        image::ImageBuffer::from_raw(seg.width as u32, seg.height as u32, data).expect("sized buffer");
    img.save(path).map_err(|source| IoError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Frame with superpixel boundaries painted in `color`.
pub fn boundary_overlay(frame: &Frame, seg: &Segmentation, color: [u8; 3]) -> Frame {
    let (w, h) = (seg.width, seg.height);
    let mut rgb = frame.rgb().to_vec();
    for p in 0..w * h {
        let (x, y) = (p % w, p / w);
        let edge = (x + 1 < w && seg.labels[p + 1] != seg.labels[p])
            || (y + 1 < h && seg.labels[p + w] != seg.labels[p]);
        if edge {
            rgb[p] = color;
        }
    }
    Frame::new(w, h, frame.index(), rgb).expect("same shape as input")
}

pub fn save_boundary_overlay(path: &Path, frame: &Frame, seg: &Segmentation) -> Result<(), IoError> {
    save_frame(path, &boundary_overlay(frame, seg, [255, 255, 0]))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>, IoError> {
    let file = fs::File::open(path).map_err(|e| IoError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, IoError> {
    let file = fs::File::create(path).map_err(|e| IoError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn parse_err(path: &Path, err: csv::Error) -> IoError {
    let line = err.position().map_or(0, |p| p.line());
    let message = match err.kind() {
        csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
        _ => err.to_string(),
    };
    IoError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    }
}

fn write_err(path: &Path, err: csv::Error) -> IoError {
    IoError::format(path, err.to_string())
}

fn read_rows<R: for<'de> Deserialize<'de>>(path: &Path, expected_header: &[&str]) -> Result<Vec<R>, IoError> {
    let mut reader = csv_reader(path)?;
    let headers = reader.headers().map_err(|e| parse_err(path, e))?.clone();
    let got: Vec<&str> = headers.iter().collect();
    if got != expected_header {
        return Err(IoError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected header `{}`, got `{}`", expected_header.join(","), got.join(",")),
        });
    }
    reader
        .deserialize()
        .collect::<Result<Vec<R>, _>>()
        .map_err(|e| parse_err(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct ObjectRow {
    ball_id: String,
    x: f64,
    y: f64,
    z: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ObservationRow {
    ball_id: String,
    cam_id: usize,
    u: f64,
    v: f64,
}

/// Calibration-object file `ball_id,x,y,z`.
pub fn read_object_points(path: &Path) -> Result<BTreeMap<String, Point3<f64>>, IoError> {
    let rows: Vec<ObjectRow> = read_rows(path, &["ball_id", "x", "y", "z"])?;
    let mut out = BTreeMap::new();
    for (i, r) in rows.into_iter().enumerate() {
        if out.insert(r.ball_id.clone(), Point3::new(r.x, r.y, r.z)).is_some() {
            return Err(IoError::Parse {
                path: path.to_path_buf(),
                line: i as u64 + 2,
                message: format!("duplicate ball_id `{}`", r.ball_id),
            });
        }
    }
    Ok(out)
}

pub fn write_object_points(path: &Path, points: &BTreeMap<String, Point3<f64>>) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    for (id, p) in points {
        w.serialize(ObjectRow {
            ball_id: id.clone(),
            x: p.x,
            y: p.y,
            z: p.z,
        })
        .map_err(|e| write_err(path, e))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

/// Observation file `ball_id,cam_id,u,v`.
pub fn read_observations(path: &Path) -> Result<Vec<(String, usize, Point2<f64>)>, IoError> {
    let rows: Vec<ObservationRow> = read_rows(path, &["ball_id", "cam_id", "u", "v"])?;
    Ok(rows
        .into_iter()
        .map(|r| (r.ball_id, r.cam_id, Point2::new(r.u, r.v)))
        .collect())
}

pub fn write_observations(path: &Path, obs: &[(String, usize, Point2<f64>)]) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    for (id, cam, q) in obs {
        w.serialize(ObservationRow {
            ball_id: id.clone(),
            cam_id: *cam,
            u: q.u,
            v: q.v,
        })
        .map_err(|e| write_err(path, e))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

const CAMERA_HEADER: [&str; 12] = ["cam_id", "L1", "L2", "L3", "L4", "L5", "L6", "L7", "L8", "L9", "L10", "L11"];

/// Camera model file `cam_id,L1,...,L11`, shortest round-trip decimals.
pub fn write_cameras(path: &Path, cameras: &[DltCamera<f64>]) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    w.write_record(CAMERA_HEADER).map_err(|e| write_err(path, e))?;
    for cam in cameras {
        let mut rec = vec![cam.id.to_string()];
        rec.extend(cam.coeffs().iter().map(|c| format!("{c:?}")));
        w.write_record(&rec).map_err(|e| write_err(path, e))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

pub fn read_cameras(path: &Path) -> Result<Vec<DltCamera<f64>>, IoError> {
    let rows: Vec<(usize, [f64; 11])> = read_rows(path, &CAMERA_HEADER)?;
    rows.into_iter()
        .map(|(id, coeffs)| {
            DltCamera::new(id, coeffs).map_err(|e: GeometryError| IoError::format(path, e.to_string()))
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct ClickRow {
    frame: usize,
    cam_id: usize,
    marker_name: String,
    u: f64,
    v: f64,
}

/// Clicks file `frame,cam_id,marker_name,u,v`.
pub fn read_clicks(path: &Path) -> Result<Clicks, IoError> {
    let rows: Vec<ClickRow> = read_rows(path, &["frame", "cam_id", "marker_name", "u", "v"])?;
    let mut clicks = Clicks::default();
    for (i, r) in rows.into_iter().enumerate() {
        if !clicks.insert(r.frame, r.cam_id, &r.marker_name, Point2::new(r.u, r.v)) {
            return Err(IoError::Parse {
                path: path.to_path_buf(),
                line: i as u64 + 2,
                message: format!("duplicate click for {} in cam {} frame {}", r.marker_name, r.cam_id, r.frame),
            });
        }
    }
    Ok(clicks)
}

pub fn write_clicks(path: &Path, clicks: &Clicks) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    for ((frame, cam, name), p) in clicks.iter() {
        w.serialize(ClickRow {
            frame,
            cam_id: cam,
            marker_name: name.to_string(),
            u: p.u,
            v: p.v,
        })
        .map_err(|e| write_err(path, e))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryRow {
    frame: usize,
    marker: String,
    cam0_u: Option<f64>,
    cam0_v: Option<f64>,
    cam1_u: Option<f64>,
    cam1_v: Option<f64>,
    x: Option<f64>,
    y: Option<f64>,
    z: Option<f64>,
    score: Option<f64>,
    status: TrackStatus,
}

const TRAJECTORY_HEADER: [&str; 11] = [
    "frame", "marker", "cam0_u", "cam0_v", "cam1_u", "cam1_v", "x", "y", "z", "score", "status",
];

/// Trajectory file `frame,marker,cam0_u,cam0_v,cam1_u,cam1_v,x,y,z,score,status`;
/// absent values are empty fields.
pub fn write_trajectory(path: &Path, trajectory: &Trajectory) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    for r in &trajectory.records {
        let cam = |c: usize| r.points_2d.get(c).copied().flatten();
        w.serialize(TrajectoryRow {
            frame: r.frame,
            marker: r.marker.clone(),
            cam0_u: cam(0).map(|p| p.u),
            cam0_v: cam(0).map(|p| p.v),
            cam1_u: cam(1).map(|p| p.u),
            cam1_v: cam(1).map(|p| p.v),
            x: r.point_3d.map(|p| p.x),
            y: r.point_3d.map(|p| p.y),
            z: r.point_3d.map(|p| p.z),
            score: r.score,
            status: r.status,
        })
        .map_err(|e| write_err(path, e))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, IoError> {
    let rows: Vec<TrajectoryRow> = read_rows(path, &TRAJECTORY_HEADER)?;
    let two_cams = rows.iter().any(|r| r.cam1_u.is_some());
    let n_cameras = if two_cams { 2 } else { 1 };
    let pt = |u: Option<f64>, v: Option<f64>| u.zip(v).map(|(u, v)| Point2::new(u, v));
    let records = rows
        .into_iter()
        .map(|r| {
            let mut points_2d = vec![pt(r.cam0_u, r.cam0_v)];
            if two_cams {
                points_2d.push(pt(r.cam1_u, r.cam1_v));
            }
            let point_3d = match (r.x, r.y, r.z) {
                (Some(x), Some(y), Some(z)) => Some(Point3::new(x, y, z)),
                _ => None,
            };
            MarkerRecord {
                frame: r.frame,
                marker: r.marker,
                points_2d,
                point_3d,
                score: r.score,
                status: r.status,
            }
        })
        .collect();
    Ok(Trajectory { n_cameras, records })
}

pub(crate) fn ensure_dir(path: &Path) -> Result<(), IoError> {
    fs::create_dir_all(path).map_err(|e| IoError::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    fs::write(path, text).map_err(|e| IoError::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|e| IoError::io(path, e))
}

pub(crate) fn csv_reader_for(path: &Path) -> Result<csv::Reader<fs::File>, IoError> {
    csv_reader(path)
}

pub(crate) fn csv_writer_for(path: &Path) -> Result<csv::Writer<fs::File>, IoError> {
    csv_writer(path)
}

pub(crate) fn csv_parse_error(path: &Path, err: csv::Error) -> IoError {
    parse_err(path, err)
}

pub(crate) fn csv_write_error(path: &Path, err: csv::Error) -> IoError {
    write_err(path, err)
}
