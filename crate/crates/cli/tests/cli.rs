use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

use tpswarp::io::{read_frames, read_landmarks, write_frames, write_landmarks};
use tpswarp::metrics::lip_aperture;
use tpswarp::{photometric_error, ssiou, Image, ImageWindow, LandmarkFrame, LandmarkWindow, Point2};

fn tpswarp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tpswarp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = tpswarp(args);
    assert!(
        out.status.success(),
        "tpswarp {args:?} exited {}: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(root: &Path, name: &str, seed: u64, frames: usize, jitter: f64) -> PathBuf {
    let dir = root.join(name);
    ok(&[
        "synth",
        "--seed",
        &seed.to_string(),
        "--frames",
        &frames.to_string(),
        "--jitter",
        &jitter.to_string(),
        "--width",
        "160",
        "--height",
        "160",
        "--out",
        p(&dir),
    ]);
    dir
}

fn bank(root: &Path, clip: &Path, name: &str) -> PathBuf {
    let dir = root.join(name);
    ok(&[
        "bank",
        "--frames",
        p(&clip.join("frames")),
        "--landmarks",
        p(&clip.join("landmarks.json")),
        "--out",
        p(&dir),
    ]);
    dir
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn bank_entries(dir: &Path) -> usize {
    json(&dir.join("manifest.json"))["entries"].as_array().unwrap().len()
}

#[test]
fn bank_entry_counts() {
    let tmp = TempDir::new().unwrap();
    let clip = synth(tmp.path(), "clip36", 3, 36, 1.0);
    assert_eq!(bank_entries(&bank(tmp.path(), &clip, "b36")), 31);

    let clip6 = synth(tmp.path(), "clip6", 3, 6, 1.0);
    let out = ok(&[
        "bank",
        "--frames",
        p(&clip6.join("frames")),
        "--landmarks",
        p(&clip6.join("landmarks.json")),
        "--out",
        p(&tmp.path().join("b6")),
    ]);
    assert!(out.contains("1 entries"), "{out}");
    assert_eq!(bank_entries(&tmp.path().join("b6")), 1);

    let clip5 = synth(tmp.path(), "clip5", 3, 5, 1.0);
    let out = tpswarp(&[
        "bank",
        "--frames",
        p(&clip5.join("frames")),
        "--landmarks",
        p(&clip5.join("landmarks.json")),
        "--out",
        p(&tmp.path().join("b5")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("window needs 6"));
}

#[test]
fn bank_rejects_count_mismatch() {
    let tmp = TempDir::new().unwrap();
    let clip = synth(tmp.path(), "clip", 1, 8, 1.0);
    fs::remove_file(clip.join("frames/00007.png")).unwrap();
    let out = tpswarp(&[
        "bank",
        "--frames",
        p(&clip.join("frames")),
        "--landmarks",
        p(&clip.join("landmarks.json")),
        "--out",
        p(&tmp.path().join("bank")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("7 frames but 8 landmark frames"));
}

#[test]
fn warp_with_own_landmarks_reproduces_the_faces() {
    let tmp = TempDir::new().unwrap();
    let clip = synth(tmp.path(), "clip", 5, 6, 1.0);
    let b = bank(tmp.path(), &clip, "bank");
    let out = tmp.path().join("out");
    ok(&[
        "warp",
        "--bank",
        p(&b),
        "--landmarks",
        p(&clip.join("landmarks.json")),
        "--frames",
        p(&clip.join("frames")),
        "--mode",
        "naive",
        "--masks",
        "--out",
        p(&out),
    ]);
    let faces = read_frames(&clip.join("frames")).unwrap();
    let warped = read_frames(&out.join("frames")).unwrap();
    for (a, b) in faces.frames().iter().zip(warped.frames()) {
        let worst = a.pixels().iter().zip(b.pixels()).map(|(x, y)| (*x as i32 - *y as i32).abs()).max();
        assert!(worst.unwrap() <= 1);
    }
    let report = json(&out.join("report.json"));
    assert_eq!(report["windows"][0]["retrieval_index"], 0);
    assert_eq!(report["windows"][0]["retrieval_distance"], 0.0);
    assert_eq!(read_frames(&out.join("masks")).unwrap().len(), 6);
}

#[test]
fn temporal_warp_never_raises_the_objective() {
    let tmp = TempDir::new().unwrap();
    let source = synth(tmp.path(), "source", 11, 24, 1.0);
    let query = synth(tmp.path(), "query", 12, 14, 1.0);
    let b = bank(tmp.path(), &source, "bank");
    let out = tmp.path().join("out");
    ok(&[
        "warp",
        "--bank",
        p(&b),
        "--landmarks",
        p(&query.join("landmarks.json")),
        "--frames",
        p(&query.join("frames")),
        "--max-iters",
        "40",
        "--out",
        p(&out),
    ]);
    let report = json(&out.join("report.json"));
    assert_eq!(report["mode"], "temporal");
    let windows = report["windows"].as_array().unwrap();
    assert_eq!(windows.iter().map(|w| w["start"].as_u64().unwrap()).collect::<Vec<_>>(), vec![0, 6, 8]);
    for w in windows {
        let init = w["init"]["l_tw"].as_f64().unwrap();
        let fin = w["final"]["l_tw"].as_f64().unwrap();
        assert!(fin <= init, "{fin} > {init}");
        assert!(w["final"]["e_t"].as_f64().unwrap() < w["init"]["e_t"].as_f64().unwrap());
    }
    assert_eq!(read_frames(&out.join("frames")).unwrap().len(), 14);
    let cfg = json(&out.join("config.json"));
    assert_eq!(cfg["optimizer"]["max_iters"], 40);
}

#[test]
fn failing_window_is_isolated() {
    let tmp = TempDir::new().unwrap();
    let source = synth(tmp.path(), "source", 21, 12, 1.0);
    let b = bank(tmp.path(), &source, "bank");
    let lm = read_landmarks(&source.join("landmarks.json")).unwrap();
    // Collapse every landmark of frame 8 onto a line: the TPS system turns singular.
    let frames: Vec<LandmarkFrame> = lm
        .frames()
        .iter()
        .enumerate()
        .map(|(t, f)| {
            if t == 8 {
                LandmarkFrame::new(f.points.iter().map(|q| Point2::new(q.x, 90.0)).collect())
            } else {
                f.clone()
            }
        })
        .collect();
    let bad = tmp.path().join("bad.json");
    write_landmarks(&bad, &LandmarkWindow::new(frames, lm.fps).unwrap()).unwrap();
    let out = tmp.path().join("out");
    let run = tpswarp(&[
        "warp",
        "--bank",
        p(&b),
        "--landmarks",
        p(&bad),
        "--frames",
        p(&source.join("frames")),
        "--mode",
        "naive",
        "--out",
        p(&out),
    ]);
    assert_eq!(run.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&run.stderr).contains("window 1"));
    let report = json(&out.join("report.json"));
    assert_eq!(report["failed"], 1);
    assert!(report["windows"][0]["error"].is_null());
    assert!(report["windows"][1]["error"].as_str().unwrap().contains("frame 2"));
    // The failed window keeps the original faces.
    let faces = read_frames(&source.join("frames")).unwrap();
    let warped = read_frames(&out.join("frames")).unwrap();
    assert_eq!(faces.frames()[6..], warped.frames()[6..]);
}

#[test]
fn warp_rejects_window_len_other_than_the_banks() {
    let tmp = TempDir::new().unwrap();
    let clip = synth(tmp.path(), "clip", 2, 8, 1.0);
    let b = bank(tmp.path(), &clip, "bank");
    let run = tpswarp(&[
        "warp",
        "--bank",
        p(&b),
        "--landmarks",
        p(&clip.join("landmarks.json")),
        "--frames",
        p(&clip.join("frames")),
        "--window-len",
        "4",
        "--out",
        p(&tmp.path().join("out")),
    ]);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("does not match"));
}

fn shifted(frames: &ImageWindow, by: u8) -> Vec<Image> {
    frames
        .frames()
        .iter()
        .map(|f| {
            let px = f.pixels().iter().map(|v| v.saturating_add(by)).collect();
            Image::new(f.width(), f.height(), f.channels(), px).unwrap()
        })
        .collect()
}

#[test]
fn metrics_identities() {
    let tmp = TempDir::new().unwrap();
    let clip = synth(tmp.path(), "clip", 4, 6, 1.0);
    let frames = clip.join("frames");
    let lm = clip.join("landmarks.json");
    let out = tmp.path().join("m");
    ok(&[
        "metrics", "--gen", p(&frames), "--gt", p(&frames), "--landmarks", p(&lm), "--ssiou", "--photometric", "--out",
        p(&out),
    ]);
    let m = json(&out.join("metrics.json"));
    assert_eq!(m["photometric"]["mean"], 0.0);
    assert_eq!(m["ssiou"], 1.0);
    assert!(out.join("distance_map.png").exists());

    // Synthetic frames never exceed 250, so +5 never saturates.
    let gen = read_frames(&frames).unwrap();
    assert!(gen.frames().iter().all(|f| f.pixels().iter().all(|&v| v <= 250)));
    let plus = tmp.path().join("plus");
    write_frames(&plus, &shifted(&gen, 5)).unwrap();
    let text = ok(&["metrics", "--gen", p(&frames), "--gt", p(&plus), "--photometric"]);
    let m: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(m["photometric"]["mean"], 5.0);
}

#[test]
fn metrics_match_library_calls() {
    let tmp = TempDir::new().unwrap();
    let a = synth(tmp.path(), "a", 8, 6, 1.0);
    let b = synth(tmp.path(), "b", 9, 6, 1.5);
    let text = ok(&[
        "metrics",
        "--gen",
        p(&a.join("frames")),
        "--gt",
        p(&b.join("frames")),
        "--landmarks",
        p(&a.join("landmarks.json")),
        "--gt-landmarks",
        p(&b.join("landmarks.json")),
        "--ssiou",
        "--photometric",
        "--mask",
    ]);
    let m: Value = serde_json::from_str(&text).unwrap();

    let la = read_landmarks(&a.join("landmarks.json")).unwrap();
    let lb = read_landmarks(&b.join("landmarks.json")).unwrap();
    let expected_ssiou = ssiou(&lip_aperture(&la).unwrap(), &lip_aperture(&lb).unwrap()).unwrap();
    assert_eq!(m["ssiou"].as_f64().unwrap(), expected_ssiou);

    let ga = read_frames(&a.join("frames")).unwrap();
    let gb = read_frames(&b.join("frames")).unwrap();
    let mut values = vec![0u8; 160 * 160];
    for f in la.frames() {
        for (v, &k) in values.iter_mut().zip(tpswarp::mouth_mask(f, 160, 160).unwrap().values()) {
            *v |= k;
        }
    }
    let mask = tpswarp::MaskImage::new(160, 160, values).unwrap();
    let expected = photometric_error(&ga, &gb, Some(&mask)).unwrap().mean;
    assert_eq!(m["photometric"]["mean"].as_f64().unwrap(), expected);
    assert_eq!(m["photometric"]["masked"], true);
}

#[test]
fn metrics_reject_mismatched_inputs() {
    let tmp = TempDir::new().unwrap();
    let a = synth(tmp.path(), "a", 1, 6, 1.0);
    let b = synth(tmp.path(), "b", 1, 7, 1.0);
    let run = tpswarp(&["metrics", "--gen", p(&a.join("frames")), "--gt", p(&b.join("frames")), "--photometric"]);
    assert!(!run.status.success());
    let run = tpswarp(&["metrics", "--gen", p(&a.join("frames")), "--gt", p(&a.join("frames"))]);
    assert!(!run.status.success());
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let a = synth(tmp.path(), "a", 42, 8, 1.0);
    let b = synth(tmp.path(), "b", 42, 8, 1.0);
    let c = synth(tmp.path(), "c", 43, 8, 1.0);
    assert_eq!(tree(&a), tree(&b));
    assert_ne!(tree(&a), tree(&c));
    assert_eq!(read_frames(&a.join("frames")).unwrap().len(), 8);
}

#[test]
fn adain_check_passes_on_random_and_given_maps() {
    let text = ok(&["adain-check", "--seed", "3"]);
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["pass"], true);
    assert_eq!(v["channels"], 8);
    assert_eq!(v["length"], 256);

    let tmp = TempDir::new().unwrap();
    let input = tmp.path().join("in.json");
    fs::write(&input, r#"{"content": [[1, 2, 3, 4], [0, 0, 5, 5]], "gamma": [2, -1], "beta": [0.5, 3]}"#).unwrap();
    let v: Value = serde_json::from_str(&ok(&["adain-check", "--input", p(&input)])).unwrap();
    assert_eq!(v["pass"], true);
    assert!((v["adain"][1]["mean"].as_f64().unwrap() - 3.0).abs() < 1e-12);

    fs::write(&input, r#"{"content": [[1, 2], [3]], "gamma": [1, 1], "beta": [0, 0]}"#).unwrap();
    assert!(!tpswarp(&["adain-check", "--input", p(&input)]).status.success());
}

#[test]
fn config_file_and_flags() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"window_len": 4}"#).unwrap();
    let clip = synth(tmp.path(), "clip", 6, 8, 1.0);
    let args = |extra: &[&str]| {
        let mut v = vec![
            "bank".to_string(),
            "--frames".into(),
            p(&clip.join("frames")).into(),
            "--landmarks".into(),
            p(&clip.join("landmarks.json")).into(),
            "--config".into(),
            p(&cfg).into(),
        ];
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    };
    let a = args(&["--out", p(&tmp.path().join("b4"))]);
    ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(bank_entries(&tmp.path().join("b4")), 5);
    let b = args(&["--window-len", "3", "--out", p(&tmp.path().join("b3"))]);
    ok(&b.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(bank_entries(&tmp.path().join("b3")), 6);
    let c = args(&["--crop", "147", "--out", p(&tmp.path().join("bad"))]);
    assert!(!tpswarp(&c.iter().map(String::as_str).collect::<Vec<_>>()).status.success());
}
