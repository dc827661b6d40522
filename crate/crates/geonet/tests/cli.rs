//! CLI surface tests: scenario runs, verification round-trips, exports, and
//! the documented exit codes.

use std::path::{Path, PathBuf};
use std::process::Command;

fn geonet_bin() -> &'static str {
    env!("CARGO_BIN_EXE_geonet")
}

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("geonet-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn run_eyeglass_scenario_and_verify_roundtrip() {
    let out = tmp_dir("eyeglass");
    let status = Command::new(geonet_bin())
        .args([
            "run",
            "--scenario",
            scenario_path("flat_t3_eyeglass.json").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .env("GEONET_SEED", "7")
        .status()
        .unwrap();
    assert!(status.success(), "run exited with {status:?}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], true, "{report}");
    assert_eq!(report["runs"][0]["eyeglass"]["stationarity"]["stationary"], true);
    assert_eq!(report["runs"][0]["eyeglass"]["stationarity"]["essential"], true);

    // The exported net must verify against its own exported metric spec.
    let verify = Command::new(geonet_bin())
        .args([
            "verify",
            "--net",
            out.join("net.json").to_str().unwrap(),
            "--metric",
            out.join("metric.json").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(verify.status.success());
    let vr: serde_json::Value = serde_json::from_slice(&verify.stdout).unwrap();
    assert_eq!(vr["stationarity"]["stationary"], true, "{vr}");
    assert_eq!(vr["stationarity"]["embedded"], true);
    assert_eq!(vr["stationarity"]["essential"], true);

    // Exports: obj polyline segment arithmetic and csv columns.
    let obj_out = out.join("export.obj");
    let status = Command::new(geonet_bin())
        .args([
            "export",
            "--net",
            out.join("net.json").to_str().unwrap(),
            "--format",
            "obj-polyline",
            "--out",
            obj_out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let obj = std::fs::read_to_string(&obj_out).unwrap();
    let net: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("net.json")).unwrap()).unwrap();
    let expected_segments: usize = net["edges"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["curve"]["points"].as_array().unwrap().len() - 1)
        .sum();
    let l_count = obj.lines().filter(|l| l.starts_with("l ")).count();
    assert_eq!(l_count, expected_segments);

    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn run_figure_eight_scenario() {
    let out = tmp_dir("fig8");
    let status = Command::new(geonet_bin())
        .args([
            "run",
            "--scenario",
            scenario_path("flat_t3_figure8.json").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success(), "run exited with {status:?}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], true, "{report}");
    let rep = &report["runs"][0]["figure_eight"];
    assert!(rep["vertex_defect_sup"].as_f64().unwrap() < 1e-8);
    assert_eq!(rep["raw_velocity_cancellation"].as_f64().unwrap(), 0.0);
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn malformed_scenario_is_exit_2() {
    let dir = tmp_dir("malformed");
    // Missing `manifold`.
    let bad = dir.join("bad.json");
    std::fs::write(
        &bad,
        r#"{"schema_version":"1","case":"eyeglass","inputs":{"alpha":{"type":"coordinate_circle","axis":0,"offset":[0,0,0]},"beta":{"type":"coordinate_circle","axis":0,"offset":[0,0.3,0]}},"t":0.1,"k":1}"#,
    )
    .unwrap();
    let status = Command::new(geonet_bin())
        .args(["run", "--scenario", bad.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2), "missing manifold must exit 2");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn unknown_export_format_is_exit_2() {
    let dir = tmp_dir("badformat");
    // A minimal valid net file.
    let net = dir.join("net.json");
    std::fs::write(
        &net,
        r#"{"schema_version":"1","vertices":[{"id":0,"chart":0,"coords":[0.0,0.0,0.0]}],
            "edges":[{"id":0,"endpoints":[0,0],"multiplicity":1,
            "curve":{"params":[0.0,0.5,1.0],"chart_ids":[0,0,0],
            "points":[[0.0,0.0,0.0],[0.5,0.0,0.0],[1.0,0.0,0.0]],"closed":true}}],"pinned":[]}"#,
    )
    .unwrap();
    let status = Command::new(geonet_bin())
        .args(["export", "--net", net.to_str().unwrap(), "--format", "gltf"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn verify_classifies_plain_nets() {
    let dir = tmp_dir("verify-plain");
    // Torus metric spec with no factors.
    let metric = dir.join("metric.json");
    std::fs::write(
        &metric,
        r#"{"schema_version":"1","manifold":{"type":"flat_torus","periods":[1.0,1.0,1.0],"injectivity_radius":0.5},"conformal_factors":[]}"#,
    )
    .unwrap();
    // A closed geodesic (x-circle): stationary but not essential.
    let n = 64;
    let mut params = Vec::new();
    let mut points = Vec::new();
    let mut velocities = Vec::new();
    for i in 0..=n {
        let s = i as f64 / n as f64;
        params.push(s);
        points.push(vec![s, 0.0, 0.0]);
        velocities.push(vec![1.0, 0.0, 0.0]);
    }
    let net_json = serde_json::json!({
        "schema_version": "1",
        "vertices": [{"id": 0, "chart": 0, "coords": [0.0, 0.0, 0.0]}],
        "edges": [{"id": 0, "endpoints": [0, 0], "multiplicity": 2,
                   "curve": {"params": params, "chart_ids": vec![0; n + 1],
                             "points": points, "velocities": velocities, "closed": true}}],
        "pinned": []
    });
    let net = dir.join("net.json");
    std::fs::write(&net, serde_json::to_string(&net_json).unwrap()).unwrap();
    let out = Command::new(geonet_bin())
        .args([
            "verify",
            "--net",
            net.to_str().unwrap(),
            "--metric",
            metric.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let vr: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(vr["stationarity"]["stationary"], true);
    assert_eq!(vr["stationarity"]["essential"], false, "{vr}");

    // An ellipse loop: not stationary.
    let mut points = Vec::new();
    let mut velocities = Vec::new();
    let mut params = Vec::new();
    let m = 256;
    for i in 0..=m {
        let t = std::f64::consts::TAU * i as f64 / m as f64;
        params.push(t);
        points.push(vec![0.5 + 0.2 * t.cos(), 0.5 + 0.1 * t.sin(), 0.0]);
        velocities.push(vec![-0.2 * t.sin(), 0.1 * t.cos(), 0.0]);
    }
    let ellipse_json = serde_json::json!({
        "schema_version": "1",
        "vertices": [{"id": 0, "chart": 0, "coords": [0.7, 0.5, 0.0]}],
        "edges": [{"id": 0, "endpoints": [0, 0], "multiplicity": 1,
                   "curve": {"params": params, "chart_ids": vec![0; m + 1],
                             "points": points, "velocities": velocities, "closed": true}}],
        "pinned": []
    });
    let ellipse = dir.join("ellipse.json");
    std::fs::write(&ellipse, serde_json::to_string(&ellipse_json).unwrap()).unwrap();
    let out = Command::new(geonet_bin())
        .args([
            "verify",
            "--net",
            ellipse.to_str().unwrap(),
            "--metric",
            metric.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let vr: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(vr["stationarity"]["stationary"], false);
    let _ = std::fs::remove_dir_all(&dir);
}
