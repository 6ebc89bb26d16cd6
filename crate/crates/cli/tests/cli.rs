use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

use markertrack::geometry::Point2;
use markertrack::io;
use markertrack::synth::{GroundTruth, Scenario};
use markertrack::tracker::{MarkerRecord, TrackStatus, Trajectory};

fn markertrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_markertrack")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(out: &Path, frames: usize, seed: u64) {
    let o = markertrack(&["synth", "--frames", &frames.to_string(), "--seed", &seed.to_string(), "--out", s(out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

fn tree_digest(dir: &Path) -> Vec<(PathBuf, String)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let digest = Sha256::digest(fs::read(&path).unwrap());
                let hex = digest.iter().map(|b| format!("{b:02x}")).collect();
                files.push((path.strip_prefix(dir).unwrap().to_path_buf(), hex));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn synth_layout_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    synth(&a, 4, 11);
    synth(&b, 4, 11);
    synth(&c, 4, 12);
    for f in ["truth.csv", "clicks.csv", "cameras.csv", "calib_object.csv", "calib_observations.csv", "scenario.toml"] {
        assert!(a.join(f).is_file(), "{f}");
    }
    for cam in 0..2 {
        for n in 0..4 {
            assert!(a.join(format!("cam{cam}/cam{cam}_{n:06}.png")).is_file());
        }
    }
    let da = tree_digest(&a);
    assert_eq!(da.len(), 14);
    assert_eq!(da, tree_digest(&b));
    assert_ne!(da, tree_digest(&c));
}

#[test]
fn synth_rejects_marker_leaving_view() {
    let tmp = tempfile::tempdir().unwrap();
    let mut scenario = Scenario::default_trial(0, 10);
    scenario.markers[0].trajectory = markertrack::synth::TrajectorySpec::Constant {
        start: [-100.0, 0.0, 50.0],
        velocity: [200.0, 0.0, 0.0],
    };
    let path = tmp.path().join("scenario.toml");
    fs::write(&path, scenario.to_toml()).unwrap();
    let o = markertrack(&["synth", "--scenario", s(&path), "--out", s(&tmp.path().join("out"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("toe"), "{}", stderr(&o));
}

#[test]
fn calibrate_recovers_synthetic_cameras() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 2, 0);
    let out = tmp.path().join("fitted.csv");
    let o = markertrack(&[
        "calibrate",
        "--object",
        s(&data.join("calib_object.csv")),
        "--observations",
        s(&data.join("calib_observations.csv")),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("cam 0: 25 points") && text.contains("cam 1: 25 points"), "{text}");
    let fitted = io::read_cameras(&out).unwrap();
    let truth = io::read_cameras(&data.join("cameras.csv")).unwrap();
    for (f, t) in fitted.iter().zip(&truth) {
        for (a, b) in f.coeffs().iter().zip(t.coeffs()) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-3), "{a} vs {b}");
        }
    }
}

#[test]
fn calibrate_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let object = tmp.path().join("object.csv");
    let obs = tmp.path().join("obs.csv");
    let out = tmp.path().join("cams.csv");
    let run = || markertrack(&["calibrate", "--object", s(&object), "--observations", s(&obs), "--out", s(&out)]);

    // Coplanar balls: degenerate geometry.
    let mut o_text = String::from("ball_id,x,y,z\n");
    let mut q_text = String::from("ball_id,cam_id,u,v\n");
    for i in 0..9 {
        let (x, z) = ((i % 3) as f64 * 50.0, (i / 3) as f64 * 50.0);
        o_text += &format!("b{i},{x},0,{z}\n");
        q_text += &format!("b{i},0,{},{}\n", 1000.0 + x, 300.0 - z);
    }
    fs::write(&object, &o_text).unwrap();
    fs::write(&obs, &q_text).unwrap();
    let o = run();
    assert_eq!(code(&o), 3, "{}", stderr(&o));

    fs::write(&obs, "ball_id,cam_id,u,v\nb0,0,abc,1\n").unwrap();
    let o = run();
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));

    fs::write(&obs, "ball_id,cam_id,u,v\nnope,0,1,1\n").unwrap();
    assert_eq!(code(&run()), 2);
}

struct Tracked {
    _tmp: tempfile::TempDir,
    data: PathBuf,
    traj: PathBuf,
}

fn track(frames: usize, mode: &str) -> Tracked {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, frames, 3);
    let traj = tmp.path().join("traj.csv");
    let o = track_cmd(&data, &data.join("clicks.csv"), mode, &traj);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("segmentation"), "{}", stdout(&o));
    Tracked { _tmp: tmp, data, traj }
}

fn track_cmd(data: &Path, clicks: &Path, mode: &str, out: &Path) -> Output {
    markertrack(&[
        "track",
        "--cam-dir",
        s(&data.join("cam0")),
        "--cam-dir",
        s(&data.join("cam1")),
        "--calib",
        s(&data.join("cameras.csv")),
        "--clicks",
        s(clicks),
        "--mode",
        mode,
        "--out",
        s(out),
    ])
}

fn eval(traj: &Path, truth: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["eval", "--trajectory", s(traj), "--truth", s(truth)];
    args.extend_from_slice(extra);
    markertrack(&args)
}

fn total_line(out: &Output) -> String {
    stdout(out).lines().find(|l| l.starts_with("total")).unwrap().to_string()
}

#[test]
fn track_both_modes_then_eval() {
    for mode in ["3d", "2d"] {
        let t = track(12, mode);
        let traj = io::read_trajectory(&t.traj).unwrap();
        assert_eq!(traj.records.len(), 60);
        assert!(traj.records.iter().all(|r| r.status == TrackStatus::Tracked));
        assert_eq!(traj.records.iter().all(|r| r.point_3d.is_some()), mode == "3d");
        let report = t.data.join("report.csv");
        let o = eval(&t.traj, &t.data.join("truth.csv"), &["--out", s(&report)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(total_line(&o).contains("100.00"), "{}", stdout(&o));
        assert!(fs::read_to_string(&report).unwrap().contains("total,60,60,100.00,95.01"));
    }
}

#[test]
fn track_missing_click_and_length_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 4, 1);
    let out = tmp.path().join("traj.csv");

    let clicks = fs::read_to_string(data.join("clicks.csv")).unwrap();
    let trimmed: String = clicks.lines().filter(|l| !l.starts_with("1,1,knee")).map(|l| format!("{l}\n")).collect();
    assert_ne!(trimmed, clicks);
    let partial = tmp.path().join("partial.csv");
    fs::write(&partial, trimmed).unwrap();
    let o = track_cmd(&data, &partial, "3d", &out);
    assert_eq!(code(&o), 5, "{}", stderr(&o));
    assert!(stderr(&o).contains("knee"), "{}", stderr(&o));

    fs::remove_file(data.join("cam1/cam1_000003.png")).unwrap();
    let o = track_cmd(&data, &data.join("clicks.csv"), "3d", &out);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(!out.exists());
}

fn shifted_truth(truth: &GroundTruth, du: f64) -> Trajectory {
    Trajectory {
        n_cameras: 2,
        records: truth
            .records
            .iter()
            .map(|t| MarkerRecord {
                frame: t.frame,
                marker: t.marker.clone(),
                points_2d: t.pixels.iter().map(|q| Some(Point2::new(q.u + du, q.v))).collect(),
                point_3d: None,
                score: None,
                status: TrackStatus::Tracked,
            })
            .collect(),
    }
}

#[test]
fn eval_tolerance_and_coverage() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 4, 2);
    let truth_path = data.join("truth.csv");
    let truth = GroundTruth::read_csv(&truth_path).unwrap();
    let traj = tmp.path().join("traj.csv");

    io::write_trajectory(&traj, &shifted_truth(&truth, 0.0)).unwrap();
    let o = eval(&traj, &truth_path, &["--tol-px", "0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(total_line(&o).contains("100.00"));

    io::write_trajectory(&traj, &shifted_truth(&truth, 6.0)).unwrap();
    assert!(total_line(&eval(&traj, &truth_path, &[])).contains("100.00"));
    let o = eval(&traj, &truth_path, &["--tol-px", "5"]);
    assert!(total_line(&o).contains(" 0.00"), "{}", stdout(&o));
    assert!(stdout(&o).contains("reference*"));

    assert_eq!(code(&eval(&traj, &truth_path, &["--tol-px=-1"])), 2);

    // Ten of twenty marker-frames pushed 50 px off.
    let mut ten_wrong = shifted_truth(&truth, 0.0);
    for r in ten_wrong.records.iter_mut().step_by(2) {
        r.points_2d[1] = r.points_2d[1].map(|p| Point2::new(p.u, p.v + 50.0));
    }
    io::write_trajectory(&traj, &ten_wrong).unwrap();
    let line = total_line(&eval(&traj, &truth_path, &[]));
    let fields: Vec<_> = line.split_whitespace().collect();
    assert_eq!(fields[1..4], ["20", "10", "50.00"], "{line}");

    let mut short = shifted_truth(&truth, 0.0);
    short.records.pop();
    io::write_trajectory(&traj, &short).unwrap();
    let o = eval(&traj, &truth_path, &[]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn config_file_is_applied_and_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 2, 4);
    let truth = data.join("truth.csv");
    let traj = tmp.path().join("traj.csv");
    let t = GroundTruth::read_csv(&truth).unwrap();
    io::write_trajectory(&traj, &shifted_truth(&t, 6.0)).unwrap();

    let cfg = tmp.path().join("config.toml");
    fs::write(&cfg, "[synth]\ntol_px = 5\n").unwrap();
    let o = markertrack(&["--config", s(&cfg), "eval", "--trajectory", s(&traj), "--truth", s(&truth)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).starts_with("tolerance 5 px"), "{}", stdout(&o));

    fs::write(&cfg, "[synth]\ntol = 5\n").unwrap();
    let o = markertrack(&["--config", s(&cfg), "eval", "--trajectory", s(&traj), "--truth", s(&truth)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("tol"), "{}", stderr(&o));
}
