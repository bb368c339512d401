//! Command-line behaviour: exit codes, outputs and formats.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mobisynth::export::{from_csv, from_geojson};
use mobisynth::geo::METERS_PER_DEGREE;

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/grid_city.osm")
}

fn mobisynth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mobisynth")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_identity(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("identity.json");
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn ingest_writes_a_reproducible_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    let out = mobisynth(&["ingest", s(&fixture()), "-o", s(&a)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("pois "));
    assert!(mobisynth(&["ingest", s(&fixture()), "-o", s(&b)]).status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn missing_input_exits_2() {
    let out = mobisynth(&["ingest", "/nonexistent/extract.osm", "-o", "/tmp/never.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no such file"));
}

#[test]
fn synth_from_a_snapshot_emits_every_format() {
    let dir = tempfile::tempdir().unwrap();
    let snap = dir.path().join("snap.json");
    assert!(mobisynth(&["ingest", s(&fixture()), "-o", s(&snap)]).status.success());
    let id = write_identity(dir.path(), "{\"extract\": \"snap.json\", \"seed\": 3}");
    let out_dir = dir.path().join("out");
    let out = mobisynth(&["synth", "--identity", s(&id), "--date", "2024-03-16", "--seed", "5", "-o", s(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let geo = from_geojson(&std::fs::read_to_string(out_dir.join("trajectory.geojson")).unwrap()).unwrap();
    let raw: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("trajectory.geojson")).unwrap()).unwrap();
    assert_eq!(raw["geometry"]["type"], "LineString");
    assert_eq!(raw["properties"]["times"].as_array().unwrap().len(), raw["geometry"]["coordinates"].as_array().unwrap().len());

    let csv = std::fs::read_to_string(out_dir.join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t_unix_s,lat,lon,speed_mps,accel_mps2");
    assert_eq!(from_csv(&csv).unwrap(), geo.fixes);

    let gpx = std::fs::read_to_string(out_dir.join("trajectory.gpx")).unwrap();
    assert_eq!(gpx.matches("<trkpt ").count(), geo.fixes.len());
    assert!(gpx.contains("<time>2024-03-16T00:00:00Z</time>"));

    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["weekend"], true);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 3);
}

#[test]
fn infeasible_day_exits_3_with_leg_context() {
    let dir = tempfile::tempdir().unwrap();
    // Work needs 23 h of dwell but must be reached after 7:30
    let body = format!(
        "{{\"extract\": {:?}, \"seed\": 1, \"weekday\": {}}}",
        fixture().display().to_string(),
        serde_json::json!({
            "weekday": true, "workdays_per_year": 250.0,
            "home": {"label": "Home", "poi_kind": "residential", "t_min_s": 0.0, "arrival_window": {"earliest": 54000.0, "latest": 81000.0}},
            "anchor": {"label": "Work", "poi_kind": "work", "t_min_s": 82800.0, "arrival_window": {"earliest": 27000.0, "latest": 36000.0}},
            "work_split": null, "transitional": [], "mileage_km_per_l": [8.0, 18.0], "tank_l": [40.0, 70.0], "transitional_count": null
        })
    );
    let id = write_identity(dir.path(), &body);
    let out = mobisynth(&["synth", "--identity", s(&id), "--date", "2024-03-12", "--seed", "1", "-o", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Home") && err.contains("Work"), "{err}");
}

#[test]
fn remote_provider_without_key_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let id = write_identity(dir.path(), &format!("{{\"extract\": {:?}, \"seed\": 1}}", fixture().display().to_string()));
    let out = Command::new(env!("CARGO_BIN_EXE_mobisynth"))
        .args(["synth", "--identity", s(&id), "--date", "2030-01-08", "--seed", "1", "--provider", "remote", "-o"])
        .arg(dir.path().join("o"))
        .env_remove("MOBISYNTH_API_KEY")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("MOBISYNTH_API_KEY"));
}

fn synth_set(root: &Path, name: &str, seeds: std::ops::Range<u64>) -> PathBuf {
    let set = root.join(name);
    std::fs::create_dir_all(&set).unwrap();
    for seed in seeds {
        let id = root.join(format!("id{seed}.json"));
        std::fs::write(&id, format!("{{\"extract\": {:?}, \"seed\": {seed}}}", fixture().display().to_string())).unwrap();
        let out_dir = root.join(format!("run{seed}"));
        let out = mobisynth(&["synth", "--identity", s(&id), "--date", "2024-03-12", "--seed", &seed.to_string(), "--formats", "geojson", "-o", s(&out_dir)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::rename(out_dir.join("trajectory.geojson"), set.join(format!("day{seed}.geojson"))).unwrap();
    }
    set
}

#[test]
fn eval_on_two_sets_from_one_generator_is_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth_set(dir.path(), "a", 0..30);
    let b = synth_set(dir.path(), "b", 30..60);
    let out = mobisynth(&["eval", "--real", s(&a), "--synthetic", s(&b), "--k", "10", "--iterations", "300"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("real: routes") && text.contains("synthetic: routes"), "{text}");
    let acc: f64 = text.split("accuracy ").nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap();
    assert!((0.3..=0.7).contains(&acc), "{text}");

    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    assert_eq!(mobisynth(&["eval", "--real", s(&empty), "--synthetic", s(&b)]).status.code(), Some(2));
}

#[test]
fn fudge_keeps_timestamps_and_lands_on_the_lattice() {
    let dir = tempfile::tempdir().unwrap();
    let id = write_identity(dir.path(), &format!("{{\"extract\": {:?}, \"seed\": 8}}", fixture().display().to_string()));
    let out_dir = dir.path().join("o");
    assert!(mobisynth(&["synth", "--identity", s(&id), "--date", "2024-03-12", "--seed", "2", "--formats", "csv", "-o", s(&out_dir)])
        .status
        .success());
    let input = out_dir.join("trajectory.csv");
    let output = dir.path().join("fudged.csv");
    let out = mobisynth(&["fudge", "--grid", "500", "--in", s(&input), "-o", s(&output)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let before = from_csv(&std::fs::read_to_string(&input).unwrap()).unwrap();
    let after = from_csv(&std::fs::read_to_string(&output).unwrap()).unwrap();
    assert_eq!(before.len(), after.len());
    let dlat = 500.0 / METERS_PER_DEGREE;
    for (x, y) in before.iter().zip(&after) {
        assert_eq!(x.t, y.t);
        let i = y.point.lat() / dlat - 0.5;
        let dlon = dlat / ((i.round() + 0.5) * dlat).to_radians().cos();
        let j = y.point.lon() / dlon - 0.5;
        assert!((i - i.round()).abs() < 1e-6 && (j - j.round()).abs() < 1e-6);
    }
    assert_eq!(mobisynth(&["fudge", "--grid", "500", "--in", "/nonexistent.csv", "-o", s(&output)]).status.code(), Some(2));
}
