use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gaterace::corpus::{parse_labels, write_ppm};
use gaterace::imaging::Image;

fn gaterace(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gaterace"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn empty_corpus_has_empty_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gaterace(&["gen-corpus", "--n", "0", "--out", "c"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = fs::read_to_string(tmp.path().join("c/manifest.json")).unwrap();
    assert!(manifest.contains("\"count\": 0"), "{manifest}");
    assert!(tmp.path().join("c/config.toml").is_file());
    let frames = fs::read_dir(tmp.path().join("c"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "ppm"))
        .count();
    assert_eq!(frames, 0);
}

#[test]
fn corpus_manifest_counts_frames_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    for dir in ["a", "b"] {
        let o = gaterace(&["gen-corpus", "--n", "6", "--seed", "3", "--out", dir], tmp.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let names = |d: &str| {
        let mut v: Vec<_> = fs::read_dir(tmp.path().join(d))
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .filter(|n| n != "config.toml")
            .collect();
        v.sort();
        v
    };
    let files = names("a");
    assert_eq!(files.iter().filter(|n| n.ends_with(".ppm")).count(), 6);
    assert_eq!(files, names("b"));
    for f in &files {
        assert_eq!(fs::read(tmp.path().join("a").join(f)).unwrap(), fs::read(tmp.path().join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn blank_image_gives_header_only_csv() {
    let tmp = tempfile::tempdir().unwrap();
    write_ppm(&Image::filled(160, 350, [90, 90, 90]), &tmp.path().join("blank.ppm")).unwrap();
    let o = gaterace(&["detect", "blank.ppm", "--out", "d"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("d/detections.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1, "{csv}");
    assert!(csv.starts_with("id,cf,"));
}

#[test]
fn detections_match_sidecar_labels() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = "[corpus]\nempty_fraction = 0.0\ndistance_min = 1.5\ndistance_max = 2.5\nglare_prob = 0.0\n\
               [corpus.clutter]\ncount = 0\n[corpus.exposure]\ngain_min = 1.0\ngain_max = 1.0\nnoise_sigma = 0.0\n";
    fs::write(tmp.path().join("clean.toml"), cfg).unwrap();
    let o = gaterace(&["--config", "clean.toml", "gen-corpus", "--n", "8", "--out", "c"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let mut checked = 0;
    for i in 0..8 {
        let frame = format!("c/img_{i:05}.ppm");
        let sidecar = tmp.path().join(format!("c/img_{i:05}.txt"));
        let labels = parse_labels(&fs::read_to_string(&sidecar).unwrap(), &sidecar).unwrap();
        let Some(label) = labels.iter().find(|l| l.fully_visible()) else { continue };
        let o = gaterace(&["detect", &frame, "--out", "d"], tmp.path());
        assert!(o.status.success(), "{}", stderr(&o));
        let csv = fs::read_to_string(tmp.path().join("d/detections.csv")).unwrap();
        let best = csv
            .lines()
            .skip(1)
            .map(|line| {
                let v: Vec<f64> = line.split(',').skip(2).map(|s| s.parse().unwrap()).collect();
                (0..4)
                    .map(|k| (v[2 * k] - label.corners[k].px.x).hypot(v[2 * k + 1] - label.corners[k].px.y))
                    .fold(0.0, f64::max)
            })
            .fold(f64::INFINITY, f64::min);
        assert!(best <= 3.0, "{frame}: worst corner {best:.2} px off");
        checked += 1;
    }
    assert!(checked >= 5);
}

#[test]
fn missing_image_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gaterace(&["detect", "nope/missing.ppm", "--out", "d"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nope/missing.ppm"), "{}", stderr(&o));
}

#[test]
fn missing_config_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gaterace(&["--config", "absent.toml", "pose-bench"], tmp.path());
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("absent.toml"), "{}", stderr(&o));
}

#[test]
fn invalid_config_lists_every_violation() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.toml"), "[camera]\nfx = -1.0\n[detector]\nsigma_cf = 3.0\n[race]\ncam_hz = 0\n").unwrap();
    let o = gaterace(&["--config", "bad.toml", "race"], tmp.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let err = stderr(&o);
    for key in ["camera.fx", "sigma_cf", "rates"] {
        assert!(err.contains(key), "missing {key} in {err}");
    }
    assert_eq!(err.matches("sigma_cf").count(), 1, "{err}");
}

#[test]
fn malformed_config_is_a_validation_failure() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("broken.toml"), "seed = [").unwrap();
    let o = gaterace(&["--config", "broken.toml", "roc"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("broken.toml"));
}

#[test]
fn feasibility_reports_subset_relation() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gaterace(&["feasibility", "--vx", "2.0", "1.5", "--out", "f"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("vx = 2.00 region inside vx = 1.50 region except 0 cell(s)"), "{out}");
    assert!(tmp.path().join("f/feasibility_vx1.50.csv").is_file());
    assert!(tmp.path().join("f/boundary_vx2.00.csv").is_file());
}

#[test]
fn replay_reports_jump_after_vision_gap() {
    let tmp = tempfile::tempdir().unwrap();
    let kx = gaterace::ekf::DragParams::default().kx;
    let mut log = String::from("t,phi,theta,psi,ax,ay,az,p,q,zx,zy,zz\n");
    for k in 0..600 {
        let t = k as f64 * 0.01;
        log += &format!("{t:.2},0,0,0,{:.6},0,{:.6},0,0", kx + 0.1, -gaterace::GRAVITY);
        if k % 5 == 0 && !(50..250).contains(&k) {
            log += &format!(",{t:.4},0,-1.5\n");
        } else {
            log += ",,,\n";
        }
    }
    fs::write(tmp.path().join("log.csv"), log).unwrap();
    let o = gaterace(&["ekf-replay", "log.csv", "--out", "r"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let jump: f64 = out
        .split("estimate jump ")
        .nth(1)
        .and_then(|s| s.split_whitespace().next())
        .and_then(|s| s.parse().ok())
        .unwrap_or_else(|| panic!("no jump in {out}"));
    assert!(out.contains("gap 2.05 s"), "{out}");
    assert!(jump > 0.01, "{out}");
    let replay = fs::read_to_string(tmp.path().join("r/replay.csv")).unwrap();
    assert_eq!(replay.lines().count(), 601);
}

#[test]
fn seed_override_is_echoed() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gaterace(&["pose-bench", "--seed", "77", "--out", "p"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let echoed = fs::read_to_string(tmp.path().join("p/config.toml")).unwrap();
    assert!(echoed.lines().any(|l| l.trim() == "seed = 77"), "{echoed}");
}
