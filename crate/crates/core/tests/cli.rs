use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn heatconn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_heatconn")).args(args).output().unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn stage_by_stage_matches_run() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&heatconn(&[
        "simulate", "--out", p(&data), "--regions", "5", "--time-points", "100", "--mz-pairs", "4",
        "--dz-pairs", "4", "--singletons", "2", "--dwell-min", "20", "--dwell-max", "40", "--seed", "5",
    ]));
    let manifest = data.join("manifest.json");
    assert!(data.join("truth.json").is_file());

    let run = tmp.path().join("run");
    ok(&heatconn(&[
        "run", "--manifest", p(&manifest), "--out", p(&run), "--method", "tsw", "--fwhm", "10", "--k", "3",
        "--restarts", "4", "--steps", "500", "--repeats", "3", "--seed", "8", "--threads", "2",
    ]));
    assert!(run.join("report/traces.csv").is_file());

    let dc = tmp.path().join("dc");
    let st = tmp.path().join("st");
    let hi = tmp.path().join("hi");
    ok(&heatconn(&["dyncorr", "--manifest", p(&manifest), "--out", p(&dc), "--method", "tsw", "--fwhm", "10"]));
    ok(&heatconn(&["states", "--dyncorr", p(&dc), "--out", p(&st), "--k", "3", "--restarts", "4", "--seed", "8"]));
    ok(&heatconn(&[
        "heritability", "--manifest", p(&manifest), "--dyncorr", p(&dc), "--states", p(&st), "--out", p(&hi),
        "--steps", "500", "--repeats", "3", "--seed", "8",
    ]));
    for name in ["centroids.csv", "assignments.csv", "transitions.json"] {
        assert_eq!(fs::read(st.join(name)).unwrap(), fs::read(run.join("tsw/states").join(name)).unwrap(), "{name}");
    }
    assert_eq!(
        fs::read(hi.join("hi_map.csv")).unwrap(),
        fs::read(run.join("tsw/heritability/hi_map.csv")).unwrap()
    );

    ok(&heatconn(&["report", "--run", p(&run)]));
}

#[test]
fn failures_exit_nonzero_with_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let out = heatconn(&["run", "--manifest", p(&tmp.path().join("nope.json")), "--out", p(&tmp.path().join("r"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stage validate"), "{err}");

    let out = heatconn(&["report", "--run", p(tmp.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage report"));

    let out = heatconn(&["states", "--dyncorr", "x", "--out", "y", "--k", "many"]);
    assert!(!out.status.success());
}

#[test]
fn config_file_with_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&heatconn(&[
        "simulate", "--out", p(&data), "--regions", "4", "--time-points", "80", "--singletons", "6", "--seed", "2",
    ]));
    let cfg = tmp.path().join("config.json");
    fs::write(
        &cfg,
        format!(
            r#"{{"manifest": {:?}, "output_dir": "unused", "methods": ["sw", "heat"], "k": 2, "restarts": 3}}"#,
            p(&data.join("manifest.json"))
        ),
    )
    .unwrap();
    let run = tmp.path().join("run");
    ok(&heatconn(&["run", "--config", p(&cfg), "--out", p(&run), "--fwhm", "8"]));
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(run.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["fwhm_tr"], 8.0);
    assert_eq!(summary["methods"].as_array().unwrap().len(), 2);
    assert_eq!(summary["mz_pairs"], 0);
    assert!(!run.join("heat/heritability").exists());
}
