use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

use mdtrack_core::{ScenarioSpec, TrackerConfig};

fn mdtrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mdtrack"))
        .args(args)
        .output()
        .expect("spawn mdtrack")
}

fn ok(args: &[&str]) -> Output {
    let out = mdtrack(args);
    assert!(
        out.status.success(),
        "mdtrack {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn lines(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn crate_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(rel)
}

const STATIC: &str = r#"
length = 10
seed = 3

[object]
start = [100.0, 100.0]
size = [20.0, 20.0]
motion = "static"
"#;

const WALKING: &str = r#"
length = 40
seed = 5

[object]
start = [200.0, 200.0]
size = [30.0, 24.0]
motion = "constant_velocity"
velocity = [2.0, 1.0]

[correspondence]
count = 40
"#;

#[test]
fn simulate_writes_one_record_per_frame() {
    let tmp = TempDir::new().unwrap();
    let spec = write(tmp.path(), "s.toml", STATIC);
    let out = tmp.path().join("sim");
    ok(&["simulate", "--scenario", s(&spec), "--out", s(&out)]);
    for name in [
        "correspondences.jsonl",
        "detections.jsonl",
        "ground_truth.jsonl",
    ] {
        let recs = lines(&out.join(name));
        assert_eq!(recs.len(), 10, "{name}");
        for (i, r) in recs.iter().enumerate() {
            assert_eq!(r["frame"], json!(i), "{name}");
        }
    }
    assert!(out.join("manifest.json").exists());
}

#[test]
fn simulate_is_byte_deterministic() {
    let tmp = TempDir::new().unwrap();
    let spec = crate_file("scenarios/occlusion.toml");
    let out = tmp.path().join("sim");
    let files = [
        "correspondences.jsonl",
        "detections.jsonl",
        "ground_truth.jsonl",
        "manifest.json",
    ];
    ok(&[
        "simulate",
        "--scenario",
        s(&spec),
        "--seed",
        "11",
        "--out",
        s(&out),
    ]);
    let first: Vec<Vec<u8>> = files
        .iter()
        .map(|f| fs::read(out.join(f)).unwrap())
        .collect();
    ok(&[
        "simulate",
        "--scenario",
        s(&spec),
        "--seed",
        "11",
        "--out",
        s(&out),
    ]);
    for (f, bytes) in files.iter().zip(&first) {
        assert_eq!(&fs::read(out.join(f)).unwrap(), bytes, "{f}");
    }
    ok(&[
        "simulate",
        "--scenario",
        s(&spec),
        "--seed",
        "12",
        "--out",
        s(&out),
    ]);
    assert_ne!(fs::read(out.join(files[1])).unwrap(), first[1]);
}

#[test]
fn occluded_frames_have_no_detections() {
    let tmp = TempDir::new().unwrap();
    let spec = write(
        tmp.path(),
        "s.toml",
        &WALKING.replacen("seed = 5\n", "seed = 5\nocclusions = [[10, 15]]\n", 1),
    );
    let out = tmp.path().join("sim");
    ok(&["simulate", "--scenario", s(&spec), "--out", s(&out)]);
    let frames: Vec<u64> = lines(&out.join("detections.jsonl"))
        .iter()
        .map(|r| r["frame"].as_u64().unwrap())
        .collect();
    assert!(frames.iter().all(|f| !(10..15).contains(f)));
    assert_eq!(frames.len(), 40 - 5);
}

#[test]
fn all_components_off_is_the_zero_velocity_baseline() {
    let tmp = TempDir::new().unwrap();
    let spec = write(tmp.path(), "s.toml", WALKING);
    let out = tmp.path().join("trk");
    ok(&[
        "track",
        "--scenario",
        s(&spec),
        "--no-md",
        "--no-mp",
        "--no-asr",
        "--out",
        s(&out),
    ]);
    let res = lines(&out.join("results.jsonl"));
    assert_eq!(res.len(), 40);
    for pair in res.windows(2) {
        let (prev, cur) = (&pair[0], &pair[1]);
        assert_eq!(cur["predicted_box_camera"], prev["output_box_camera"]);
        assert_eq!(cur["predicted_velocity_camera"], json!([0.0, 0.0]));
        assert_eq!(cur["decoupled"], json!(false));
        let b = &cur["predicted_box_camera"];
        let (w, h) = (b["w"].as_f64().unwrap(), b["h"].as_f64().unwrap());
        let p = (w + h) / 2.0;
        let side = cur["search_region_camera"]["side"].as_f64().unwrap();
        assert!((side - 2.0 * ((w + p) * (h + p)).sqrt()).abs() < 1e-9);
    }
}

#[test]
fn decoupling_is_neutral_without_camera_motion() {
    let tmp = TempDir::new().unwrap();
    let spec = write(tmp.path(), "s.toml", WALKING);
    let on = tmp.path().join("on");
    let off = tmp.path().join("off");
    ok(&["track", "--scenario", s(&spec), "--md", "--out", s(&on)]);
    ok(&["track", "--scenario", s(&spec), "--no-md", "--out", s(&off)]);
    let (a, b) = (
        lines(&on.join("results.jsonl")),
        lines(&off.join("results.jsonl")),
    );
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x["status"], y["status"]);
        for key in ["predicted_box_camera", "output_box_camera"] {
            for c in ["x", "y", "w", "h"] {
                let d = x[key][c].as_f64().unwrap() - y[key][c].as_f64().unwrap();
                assert!(d.abs() < 1e-6, "frame {} {key}.{c}: {d}", x["frame"]);
            }
        }
    }
}

#[test]
fn replay_matches_in_memory_scenario() {
    let tmp = TempDir::new().unwrap();
    let spec = crate_file("scenarios/occlusion.toml");
    let sim = tmp.path().join("sim");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["simulate", "--scenario", s(&spec), "--out", s(&sim)]);
    ok(&["track", "--replay", s(&sim), "--out", s(&a)]);
    ok(&["track", "--scenario", s(&spec), "--out", s(&b)]);
    assert_eq!(
        fs::read(a.join("results.jsonl")).unwrap(),
        fs::read(b.join("results.jsonl")).unwrap()
    );
}

#[test]
fn baseline_only_report_shows_no_cosine() {
    let tmp = TempDir::new().unwrap();
    let spec = write(tmp.path(), "s.toml", WALKING);
    let sim = tmp.path().join("sim");
    let trk = tmp.path().join("trk");
    let rep = tmp.path().join("rep");
    ok(&["simulate", "--scenario", s(&spec), "--out", s(&sim)]);
    ok(&[
        "track",
        "--replay",
        s(&sim),
        "--no-md",
        "--no-mp",
        "--no-asr",
        "--out",
        s(&trk),
    ]);
    let results = trk.join("results.jsonl");
    ok(&[
        "eval",
        "--results",
        s(&results),
        "--gt",
        s(&sim.join("ground_truth.jsonl")),
        "--baseline",
        s(&results),
        "--out",
        s(&rep),
    ]);
    let table = fs::read_to_string(rep.join("report.txt")).unwrap();
    let rows: Vec<&str> = table
        .lines()
        .filter(|l| l.starts_with("pipeline") || l.starts_with("baseline"))
        .collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        assert_eq!(row.split_whitespace().nth(4), Some("-"), "{row}");
    }
    let report: Value =
        serde_json::from_str(&fs::read_to_string(rep.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["pipeline"]["cosine"], Value::Null);
    assert_eq!(report["position_error_ratio"], json!(1.0));
}

#[test]
fn exact_predictions_score_zero() {
    let tmp = TempDir::new().unwrap();
    let spec = write(tmp.path(), "s.toml", WALKING);
    let sim = tmp.path().join("sim");
    ok(&["simulate", "--scenario", s(&spec), "--out", s(&sim)]);
    let gt_path = sim.join("ground_truth.jsonl");
    let text: String = lines(&gt_path)
        .iter()
        .map(|g| {
            let bbox = json!({"x": g["x"], "y": g["y"], "w": g["w"], "h": g["h"]});
            let r = json!({
                "frame": g["frame"],
                "status": if g["frame"] == json!(0) { "init" } else { "tracked" },
                "predicted_box_camera": bbox,
                "predicted_velocity_ref": [g["vx"], g["vy"]],
                "predicted_velocity_camera": [g["vx"], g["vy"]],
                "search_region_camera": {"center": {"x": g["x"], "y": g["y"]}, "side": 100.0},
                "output_box_camera": bbox,
                "updated": true,
                "decoupled": false,
            });
            format!("{r}\n")
        })
        .collect();
    let results = write(tmp.path(), "results.jsonl", &text);
    let rep = tmp.path().join("rep");
    ok(&[
        "eval",
        "--results",
        s(&results),
        "--gt",
        s(&gt_path),
        "--out",
        s(&rep),
    ]);
    let report: Value =
        serde_json::from_str(&fs::read_to_string(rep.join("report.json")).unwrap()).unwrap();
    let p = &report["pipeline"];
    for key in [
        "position_error",
        "position_rms",
        "velocity_mse",
        "magnitude",
    ] {
        assert_eq!(p[key], json!(0.0), "{key}");
    }
    assert!((p["cosine"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(p["failures"], json!(0));
}

#[test]
fn exit_codes_distinguish_input_and_io_errors() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nope.toml");
    let out = tmp.path().join("out");
    let r = mdtrack(&["simulate", "--scenario", s(&missing), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(3));

    let bad = write(
        tmp.path(),
        "bad.toml",
        "length = 0\n[object]\nstart=[0.0,0.0]\nsize=[1.0,1.0]\nmotion=\"static\"\n",
    );
    let r = mdtrack(&["simulate", "--scenario", s(&bad), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));

    let spec = write(tmp.path(), "s.toml", STATIC);
    let sim = tmp.path().join("sim");
    ok(&["simulate", "--scenario", s(&spec), "--out", s(&sim)]);
    let trk = tmp.path().join("trk");
    ok(&["track", "--replay", s(&sim), "--out", s(&trk)]);
    let gt = fs::read_to_string(sim.join("ground_truth.jsonl")).unwrap();
    let short: String = gt.lines().take(5).map(|l| format!("{l}\n")).collect();
    let short_gt = write(tmp.path(), "gt.jsonl", &short);
    let r = mdtrack(&[
        "eval",
        "--results",
        s(&trk.join("results.jsonl")),
        "--gt",
        s(&short_gt),
    ]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).starts_with("error:"));

    let cfg = write(tmp.path(), "c.toml", "slice_len = 0\n");
    let r = mdtrack(&[
        "track",
        "--scenario",
        s(&spec),
        "--config",
        s(&cfg),
        "--out",
        s(&trk),
    ]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn shipped_scenarios_and_configs_are_valid() {
    for entry in fs::read_dir(crate_file("scenarios")).unwrap() {
        let path = entry.unwrap().path();
        let spec = ScenarioSpec::from_toml_str(&fs::read_to_string(&path).unwrap())
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        spec.validate().unwrap();
    }
    for entry in fs::read_dir(crate_file("configs")).unwrap() {
        let path = entry.unwrap().path();
        TrackerConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
    let shipped = TrackerConfig::load(&crate_file("configs/default.toml")).unwrap();
    assert_eq!(shipped, TrackerConfig::default());
}

#[test]
fn ablate_writes_all_rows() {
    let tmp = TempDir::new().unwrap();
    let spec = write(tmp.path(), "s.toml", WALKING);
    let out = tmp.path().join("abl");
    ok(&[
        "ablate",
        "--scenario",
        s(&spec),
        "--seeds",
        "2",
        "--out",
        s(&out),
    ]);
    let report: Value =
        serde_json::from_str(&fs::read_to_string(out.join("ablation.json")).unwrap()).unwrap();
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 6);
    for row in rows {
        assert_eq!(row["per_seed"].as_array().unwrap().len(), 2);
    }
    assert_eq!(report["paired_ordering"].as_array().unwrap().len(), 3);
}
