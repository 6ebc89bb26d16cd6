use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use markertrack::config::{Config, ConfigError};
use markertrack::geometry::{calibrate, CalibrationSet, GeometryError};
use markertrack::imgproc::BayerPattern;
use markertrack::io::{self, DirectorySource, FrameSource, IoError};
use markertrack::synth::{evaluate, EvalError, GroundTruth, Scenario, SynthError};
use markertrack::tracker::{run, run_2d_baseline, TrackError, TrackingMode};

/// Exit codes: 0 success, 1 other failure, 2 unparsable or invalid input,
/// 3 degenerate geometry, 4 length or coverage mismatch, 5 missing clicks.
#[derive(Parser)]
#[command(name = "markertrack", version, about = "Multi-camera superpixel marker tracking")]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit per-camera DLT models from a calibration object.
    Calibrate {
        /// `ball_id,x,y,z`
        #[arg(long)]
        object: PathBuf,
        /// `ball_id,cam_id,u,v`
        #[arg(long)]
        observations: PathBuf,
        /// Camera model output, `cam_id,L1..L11`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a synthetic scene with ground truth and clicks.
    Synth {
        /// Scenario TOML; without it a clean default trial is generated.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Frame count of the default trial.
        #[arg(long, default_value_t = 200)]
        frames: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Track markers through camera image directories.
    Track {
        /// One directory of `cam<K>_<NNNNNN>.png` frames per camera.
        #[arg(long = "cam-dir", required = true)]
        cam_dirs: Vec<PathBuf>,
        /// Camera model file; required in 3d mode.
        #[arg(long)]
        calib: Option<PathBuf>,
        /// `frame,cam_id,marker_name,u,v` for frames 0 and 1.
        #[arg(long)]
        clicks: PathBuf,
        #[arg(long)]
        mode: Option<TrackingMode>,
        /// Treat frames as raw Bayer mosaics with this pattern.
        #[arg(long)]
        bayer: Option<BayerPattern>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a trajectory against ground truth.
    Eval {
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long = "tol-px")]
        tol_px: Option<f64>,
        /// Optional report CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<TrackError>() {
            return match e {
                TrackError::MissingClick { .. } | TrackError::UnexpectedClick { .. } => 5,
                TrackError::LengthMismatch(_) | TrackError::TooFewFrames(_) | TrackError::FrameCount { .. } => 4,
                TrackError::Geometry(_) => 3,
                TrackError::Io(IoError::Parse { .. }) => 2,
                TrackError::Io(_) => 1,
                _ => 2,
            };
        }
        if let Some(e) = cause.downcast_ref::<EvalError>() {
            return match e {
                EvalError::BadTolerance => 2,
                _ => 4,
            };
        }
        if let Some(e) = cause.downcast_ref::<SynthError>() {
            return match e {
                SynthError::Io(IoError::Io { .. } | IoError::Image { .. }) => 1,
                _ => 2,
            };
        }
        if cause.downcast_ref::<GeometryError>().is_some() {
            return 3;
        }
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<IoError>() {
            return match e {
                IoError::Parse { .. } | IoError::Format { .. } => 2,
                _ => 1,
            };
        }
        if cause.downcast_ref::<InputError>().is_some() {
            return 2;
        }
    }
    1
}

/// Inconsistent but well-formed input files.
#[derive(Debug)]
struct InputError(String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn cmd_calibrate(object: &Path, observations: &Path, out: &Path) -> Result<()> {
    let points = io::read_object_points(object)?;
    let obs = io::read_observations(observations)?;
    let mut per_cam: BTreeMap<usize, Vec<_>> = BTreeMap::new();
    for (ball, cam, q) in obs {
        let p = *points.get(&ball).ok_or_else(|| {
            InputError(format!("{}: ball `{ball}` is not in {}", observations.display(), object.display()))
        })?;
        per_cam.entry(cam).or_default().push((p, q));
    }
    if per_cam.is_empty() {
        return Err(InputError(format!("{}: no observations", observations.display())).into());
    }
    let mut cameras = Vec::new();
    for (cam, pairs) in per_cam {
        let n = pairs.len();
        let (model, report) =
            calibrate(cam, &CalibrationSet::new(pairs)).with_context(|| format!("camera {cam}"))?;
        println!(
            "cam {cam}: {n} points, reprojection RMS {:.3e} px, condition {:.3e}",
            report.rms, report.condition
        );
        cameras.push(model);
    }
    io::write_cameras(out, &cameras)?;
    Ok(())
}

fn cmd_synth(config: &Config, scenario: Option<&Path>, frames: usize, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut s = match scenario {
        Some(path) => Scenario::load(path)?,
        None => Scenario::default_trial(seed.or(config.synth.seed).unwrap_or(0), frames),
    };
    if let Some(seed) = seed.or(config.synth.seed) {
        s.seed = seed;
    }
    let truth = s.generate(out)?;
    println!(
        "wrote {} frames x {} cameras, {} truth records to {}",
        s.n_frames,
        s.cameras.len(),
        truth.records.len(),
        out.display()
    );
    Ok(())
}

fn cmd_track(
    config: &Config,
    cam_dirs: &[PathBuf],
    calib: Option<&Path>,
    clicks: &Path,
    mode: Option<TrackingMode>,
    bayer: Option<BayerPattern>,
    out: &Path,
) -> Result<()> {
    let mut tracker_config = config.tracker_config();
    if let Some(mode) = mode {
        tracker_config.mode = mode;
    }
    let mut ids = Vec::new();
    let mut sources = Vec::new();
    for dir in cam_dirs {
        let (id, src) = DirectorySource::open_any(dir, bayer)?;
        ids.push(id);
        sources.push(src);
    }
    // Clicks name cameras by file id; the tracker indexes them by position.
    let mut by_position = markertrack::tracker::Clicks::default();
    for ((frame, cam, marker), p) in io::read_clicks(clicks)?.iter() {
        let pos = ids.iter().position(|&id| id == cam).unwrap_or(usize::MAX);
        by_position.insert(frame, pos, marker, p);
    }
    let clicks = by_position;
    let refs: Vec<&dyn FrameSource> = sources.iter().map(|s| s as &dyn FrameSource).collect();
    let (trajectory, timing) = match tracker_config.mode {
        TrackingMode::ThreeD => {
            let calib = calib.ok_or_else(|| InputError("--calib is required in 3d mode".into()))?;
            let all = io::read_cameras(calib)?;
            let cameras = ids
                .iter()
                .map(|id| {
                    all.iter().find(|c| c.id == *id).cloned().ok_or_else(|| {
                        InputError(format!("{}: no model for camera {id}", calib.display()))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            run(&refs, &clicks, &cameras, &tracker_config)?
        }
        TrackingMode::TwoDBaseline => run_2d_baseline(&refs, &clicks, &tracker_config)?,
    };
    io::write_trajectory(out, &trajectory)?;
    println!("{timing}");
    Ok(())
}

fn cmd_eval(config: &Config, trajectory: &Path, truth: &Path, tol_px: Option<f64>, out: Option<&Path>) -> Result<()> {
    let traj = io::read_trajectory(trajectory)?;
    let truth = GroundTruth::read_csv(truth)?;
    let report = evaluate(&traj, &truth, tol_px.unwrap_or(config.synth.tol_px))?;
    if let Some(out) = out {
        report.write_csv(out)?;
    }
    println!("{report}");
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    match cli.command {
        Command::Calibrate {
            object,
            observations,
            out,
        } => cmd_calibrate(&object, &observations, &out),
        Command::Synth {
            scenario,
            frames,
            seed,
            out,
        } => cmd_synth(&config, scenario.as_deref(), frames, seed, &out),
        Command::Track {
            cam_dirs,
            calib,
            clicks,
            mode,
            bayer,
            out,
        } => cmd_track(&config, &cam_dirs, calib.as_deref(), &clicks, mode, bayer, &out),
        Command::Eval {
            trajectory,
            truth,
            tol_px,
            out,
        } => {
            if tol_px.is_some_and(|t| !(t >= 0.0)) {
                bail!(InputError("--tol-px must be non-negative".into()));
            }
            cmd_eval(&config, &trajectory, &truth, tol_px, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
