use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use handforge::imaging::RgbImage;
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_handforge"));
    c.env_remove("HANDFORGE_RIG_DIR");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

// moderate poses: fits start from detections, which settle reliably only
// when the hand is not strongly tilted or curled
const EASY: &str = "[synth]\nmax_tilt = 0.2\nmax_flexion = 0.5\nmin_side = 128\nmin_hands = 2\nmax_hands = 3\n\n[fit]\nstage2_iters = 20\n";

/// One synthesized and fitted dataset shared by the tests below.
struct Fixture {
    _dir: TempDir,
    root: PathBuf,
}

impl Fixture {
    fn dataset(&self) -> PathBuf {
        self.root.join("ds")
    }
    fn results(&self) -> PathBuf {
        self.root.join("res")
    }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let root = dir.path().to_path_buf();
        let cfg = root.join("easy.toml");
        std::fs::write(&cfg, EASY).unwrap();
        let o = run(&["synth", "--config", p(&cfg), "--out", p(&root.join("ds")), "--count", "3", "--seed", "5"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let o = run(&["fit", "--dataset", p(&root.join("ds")), "--out", p(&root.join("res")), "--config", p(&cfg)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        Fixture { _dir: dir, root }
    })
}

#[test]
fn synth_is_deterministic() {
    let dir = TempDir::new().unwrap();
    for out in ["a", "b"] {
        let o = run(&["synth", "--out", p(&dir.path().join(out)), "--count", "10", "--seed", "11"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let a = std::fs::read(dir.path().join("a/dataset.json")).unwrap();
    let b = std::fs::read(dir.path().join("b/dataset.json")).unwrap();
    assert_eq!(a, b);
    let d = json(&dir.path().join("a/dataset.json"));
    assert_eq!(d["scenes"].as_array().unwrap().len(), 10);
    assert!(dir.path().join("a/scene_0009/scene.json").is_file());
    let m = json(&dir.path().join("a/run_manifest.json"));
    assert_eq!(m["command"], "synth");
    assert_eq!(m["seed"], 11);
    assert_eq!(m["seed_source"], "flag");
    assert_eq!(m["config_hash"], d["config_hash"]);
}

#[test]
fn synth_zero_scenes() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("empty");
    let o = run(&["synth", "--out", p(&out), "--count", "0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(json(&out.join("dataset.json"))["scenes"], Value::Array(vec![]));
    assert!(out.join("run_manifest.json").is_file());
}

#[test]
fn bad_config_key_is_named() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[synth]\nmax_handz = 4\n").unwrap();
    let o = run(&["synth", "--config", p(&cfg), "--out", p(&dir.path().join("x")), "--count", "1"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("max_handz"), "{}", stderr(&o));
}

#[test]
fn unwritable_output_fails() {
    let dir = TempDir::new().unwrap();
    let file = dir.path().join("file");
    std::fs::write(&file, "").unwrap();
    let o = run(&["synth", "--out", p(&file.join("sub")), "--count", "1"]);
    assert_ne!(code(&o), 0);
    assert!(!stderr(&o).is_empty());
}

#[test]
fn fit_recovers_synthetic_hands() {
    let f = fixture();
    let out = f.root.join("eval_fit");
    let o = run(&["eval", "--results", p(&f.results()), "--dataset", p(&f.dataset()), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let agg = json(&out.join("aggregate.json"));
    let mpjpe = agg["mean"]["mpjpe_cm"].as_f64().unwrap();
    assert!(agg["hands"].as_u64().unwrap() >= 6);
    assert!(mpjpe < 1.0, "aggregate MPJPE {mpjpe} cm");
    let index = json(&f.results().join("results.json"));
    assert_eq!(index["scenes"].as_array().unwrap().len(), 3);
    let fit = json(&f.results().join("scene_0000/fit.json"));
    let trace = fit["hands"][0]["trace"].as_str().unwrap();
    assert!(f.results().join("scene_0000").join(trace).is_file());
}

#[test]
fn fit_rerun_gives_identical_metrics() {
    let f = fixture();
    let cfg = f.root.join("easy.toml");
    let again = f.root.join("res_again");
    let o = run(&["fit", "--dataset", p(&f.dataset()), "--out", p(&again), "--config", p(&cfg), "--jobs", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let a = std::fs::read(f.results().join("metrics.csv")).unwrap();
    let b = std::fs::read(again.join("metrics.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn fit_empty_dataset() {
    let dir = TempDir::new().unwrap();
    let ds = dir.path().join("ds");
    assert_eq!(code(&run(&["synth", "--out", p(&ds), "--count", "0"])), 0);
    let res = dir.path().join("res");
    let o = run(&["fit", "--dataset", p(&ds), "--out", p(&res)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(json(&res.join("results.json"))["hands"], 0);
    let o = run(&["eval", "--results", p(&res), "--dataset", p(&ds)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn missing_rig_exits_2() {
    let dir = TempDir::new().unwrap();
    let ds = dir.path().join("ds");
    assert_eq!(code(&run(&["synth", "--out", p(&ds), "--count", "0"])), 0);
    let o = run(&["fit", "--dataset", p(&ds), "--out", p(&dir.path().join("r")), "--rig", "absent.json"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("absent.json"));
}

#[test]
fn rig_dir_is_searched() {
    let dir = TempDir::new().unwrap();
    let rigs = dir.path().join("rigs");
    assert_eq!(code(&run(&["gen-rig", "--out", p(&rigs)])), 0);
    let out = dir.path().join("gc");
    let o = bin()
        .args(["gradcheck", "--rig", "left.json", "--out", p(&out)])
        .env("HANDFORGE_RIG_DIR", &rigs)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(json(&out.join("run_manifest.json"))["rig"].as_str().unwrap().ends_with("left.json"));
}

/// Results whose parameters are replaced by the ground truth.
fn ground_truth_results(f: &Fixture, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    std::fs::copy(f.results().join("results.json"), to.join("results.json")).unwrap();
    for entry in json(&f.dataset().join("dataset.json"))["scenes"].as_array().unwrap() {
        let id = entry["id"].as_str().unwrap();
        let scene = json(&f.dataset().join(id).join("scene.json"));
        let mut fit = json(&f.results().join(id).join("fit.json"));
        for hand in fit["hands"].as_array_mut().unwrap() {
            let i = hand["instance"].as_u64().unwrap() as usize;
            hand["params"] = scene["instances"][i]["source"]["params"].clone();
        }
        std::fs::create_dir_all(to.join(id)).unwrap();
        std::fs::write(to.join(id).join("fit.json"), serde_json::to_string(&fit).unwrap()).unwrap();
    }
}

#[test]
fn eval_of_ground_truth_is_perfect() {
    let f = fixture();
    let gt = f.root.join("gt_results");
    ground_truth_results(f, &gt);
    let out = f.root.join("gt_eval");
    let o = run(&["eval", "--results", p(&gt), "--dataset", p(&f.dataset()), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = json(&out.join("per_hand.json"));
    for r in rows.as_array().unwrap() {
        assert!(r["mpjpe_cm"].as_f64().unwrap() < 1e-9);
        assert!(r["mpjpe_2d_px"].as_f64().unwrap() < 1e-9);
        assert_eq!(r["auc_joints"], 1.0);
    }
    let agg = json(&out.join("aggregate.json"));
    assert_eq!(agg["mean"]["auc_joints"], 1.0);
    let pck = agg["pck_joints"].as_array().unwrap();
    assert_eq!(pck.len(), 100);
    assert!(pck.iter().all(|s| s["fraction"] == 1.0));
}

#[test]
fn aggregate_is_mean_of_rows() {
    let f = fixture();
    let out = f.root.join("eval_mean");
    assert_eq!(code(&run(&["eval", "--results", p(&f.results()), "--dataset", p(&f.dataset()), "--out", p(&out)])), 0);
    let rows = json(&out.join("per_hand.json"));
    let rows = rows.as_array().unwrap();
    let agg = json(&out.join("aggregate.json"));
    for key in ["mpjpe_cm", "mpvpe_cm", "auc_joints", "auc_vertices", "f_at_5mm", "f_at_15mm", "epe_cm", "mpjpe_2d_px"] {
        let mean = rows.iter().map(|r| r[key].as_f64().unwrap()).sum::<f64>() / rows.len() as f64;
        assert!((agg["mean"][key].as_f64().unwrap() - mean).abs() < 1e-9, "{key}");
    }
    let csv = std::fs::read_to_string(out.join("aggregate.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| l.starts_with("pck_joints@")).count(), 100);
    let per_hand = std::fs::read_to_string(out.join("per_hand.csv")).unwrap();
    assert_eq!(per_hand.lines().count(), rows.len() + 1);
}

#[test]
fn eval_names_missing_scene() {
    let f = fixture();
    let broken = f.root.join("broken_results");
    ground_truth_results(f, &broken);
    std::fs::remove_dir_all(broken.join("scene_0001")).unwrap();
    let o = run(&["eval", "--results", p(&broken), "--dataset", p(&f.dataset()), "--out", p(&f.root.join("x"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("scene_0001"), "{}", stderr(&o));
}

#[test]
fn eval_rejects_mismatched_counts() {
    let f = fixture();
    let short = f.root.join("short_results");
    ground_truth_results(f, &short);
    let mut index = json(&short.join("results.json"));
    index["scenes"].as_array_mut().unwrap().pop();
    std::fs::write(short.join("results.json"), index.to_string()).unwrap();
    let o = run(&["eval", "--results", p(&short), "--dataset", p(&f.dataset()), "--out", p(&f.root.join("y"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn render_outputs() {
    let f = fixture();
    let out = f.root.join("render");
    let o = run(&[
        "render",
        "--fit",
        p(&f.results().join("scene_0000/fit.json")),
        "--scene",
        p(&f.dataset().join("scene_0000")),
        "--out",
        p(&out),
        "--maps",
        "--views",
        "front,right",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let canvas = RgbImage::load_png(&f.dataset().join("scene_0000/canvas.png")).unwrap();
    let overlay = RgbImage::load_png(&out.join("overlay.png")).unwrap();
    assert_eq!(overlay.dims(), canvas.dims());
    assert_ne!(overlay, canvas);
    let front = RgbImage::load_png(&out.join("view_front_hand0.png")).unwrap();
    let side = RgbImage::load_png(&out.join("view_right_hand0.png")).unwrap();
    assert_ne!(front, side);
    for m in ["center", "left", "right"] {
        assert!(out.join(format!("map_{m}.png")).is_file());
    }
}

#[test]
fn render_rejects_unknown_view() {
    let f = fixture();
    let o = run(&[
        "render",
        "--fit",
        p(&f.results().join("scene_0000/fit.json")),
        "--scene",
        p(&f.dataset().join("scene_0000")),
        "--out",
        p(&f.root.join("r2")),
        "--views",
        "sideways",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn gradcheck_passes_on_test_rig_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    for out in ["a", "b"] {
        let o = run(&["gradcheck", "--seed", "3", "--out", p(&dir.path().join(out))]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    }
    let a = std::fs::read(dir.path().join("a/gradcheck.json")).unwrap();
    let b = std::fs::read(dir.path().join("b/gradcheck.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn gradcheck_names_corrupted_regressor() {
    let dir = TempDir::new().unwrap();
    let rigs = dir.path().join("rigs");
    assert_eq!(code(&run(&["gen-rig", "--out", p(&rigs)])), 0);
    let path = rigs.join("right.json");
    let mut rig = json(&path);
    let row = rig["joint_regressor"][5].as_array_mut().unwrap();
    let v = row.iter().position(|w| w.as_f64().unwrap() > 0.0).unwrap();
    row[v] = Value::from(row[v].as_f64().unwrap() + 0.5);
    std::fs::write(&path, rig.to_string()).unwrap();
    let o = run(&["gradcheck", "--rig", p(&path), "--out", p(&dir.path().join("gc"))]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("joint_regressor_row_sum"), "{}", stderr(&o));
    let report = json(&dir.path().join("gc/gradcheck.json"));
    assert_eq!(report["passed"], false);
}
