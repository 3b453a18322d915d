use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use geofactor::pipeline::{CHOROPLETH, CLUSTERS_CSV, CLUSTERS_JSON, FACTORS_CSV, FACTORS_JSON, MANIFEST, SELECTION_JSON};
use geofactor::synth::{generate_synthetic, SynthParams, CONFIG_FILE, FILES};

const DATA_FILES: [&str; 6] = [SELECTION_JSON, CLUSTERS_CSV, CLUSTERS_JSON, FACTORS_CSV, FACTORS_JSON, CHOROPLETH];

fn small() -> SynthParams {
    SynthParams {
        units: 60,
        features: 70,
        days: 20,
        planted: 8,
        blobs: 3,
        seed: 5,
        ..Default::default()
    }
}

fn dataset(dir: &Path) -> PathBuf {
    generate_synthetic(&small(), dir).unwrap();
    dir.join(CONFIG_FILE)
}

fn geofactor(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geofactor"))
        .args(args)
        .arg("--quiet")
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn edit_config(config: &Path, f: impl FnOnce(&mut Value)) {
    let mut v = read_json(config);
    f(&mut v);
    std::fs::write(config, serde_json::to_string_pretty(&v).unwrap()).unwrap();
}

#[test]
fn bundled_dataset_regenerates_byte_identically() {
    let bundled = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/synthetic");
    let tmp = tempfile::tempdir().unwrap();
    generate_synthetic(&SynthParams::default(), tmp.path()).unwrap();
    for name in FILES {
        let want = std::fs::read(bundled.join(name)).unwrap();
        let got = std::fs::read(tmp.path().join(name)).unwrap();
        assert!(want == got, "{name} differs from the bundled copy");
    }
}

#[test]
fn synth_subcommand_writes_config_at_requested_path() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("demo.json");
    let status = Command::new(env!("CARGO_BIN_EXE_geofactor"))
        .args(["synth", "--units", "40", "--blobs", "2", "--config"])
        .arg(&config)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(config.is_file());
    assert!(!tmp.path().join(CONFIG_FILE).exists());
    assert!(tmp.path().join("census.csv").is_file());
}

#[test]
fn stage_commands_reproduce_run() {
    let tmp = tempfile::tempdir().unwrap();
    let config = dataset(&tmp.path().join("data"));
    let whole = tmp.path().join("whole");
    let staged = tmp.path().join("staged");
    assert!(geofactor(&["run"], &config, &whole).status.success());
    for stage in ["select", "cluster", "embed", "report"] {
        let out = geofactor(&[stage], &config, &staged);
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
    }
    for name in DATA_FILES {
        let a = std::fs::read(whole.join(name)).unwrap();
        let b = std::fs::read(staged.join(name)).unwrap();
        assert!(a == b, "{name} differs between run and staged commands");
    }
    assert!(!staged.join(MANIFEST).exists());
}

#[test]
fn later_stage_without_earlier_output_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = dataset(&tmp.path().join("data"));
    let out = geofactor(&["cluster"], &config, &tmp.path().join("empty"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn json_outputs_are_pretty_with_sorted_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let config = dataset(&tmp.path().join("data"));
    let out = tmp.path().join("out");
    assert!(geofactor(&["run", "--k", "3"], &config, &out).status.success());
    for name in [SELECTION_JSON, CLUSTERS_JSON, FACTORS_JSON, MANIFEST] {
        let text = std::fs::read_to_string(out.join(name)).unwrap();
        let v: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(text, serde_json::to_string_pretty(&v).unwrap() + "\n", "{name}");
    }
    let manifest = read_json(&out.join(MANIFEST));
    let files = manifest["files"].as_array().unwrap();
    assert_eq!(files.len(), DATA_FILES.len());
    for f in files {
        let name = f["name"].as_str().unwrap();
        let bytes = std::fs::read(out.join(name)).unwrap();
        assert_eq!(f["bytes"].as_u64().unwrap(), bytes.len() as u64);
        assert_eq!(f["sha256"].as_str().unwrap().len(), 64);
    }
}

#[test]
fn overrides_take_effect() {
    let tmp = tempfile::tempdir().unwrap();
    let config = dataset(&tmp.path().join("data"));
    let out = tmp.path().join("out");
    let res = geofactor(&["run", "--k", "4", "--seed", "9", "--lambda", "0.05", "--perplexity", "10"], &config, &out);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let clusters = read_json(&out.join(CLUSTERS_JSON));
    assert_eq!(clusters["model"]["k"], 4);
    assert_eq!(clusters["elbow"]["fixed"], true);
    let selection = read_json(&out.join(SELECTION_JSON));
    assert_eq!(selection["lasso"]["lambda"], 0.05);
    assert_eq!(selection["lasso"]["cv_mse"].as_array().unwrap().len(), 0);
    assert_eq!(read_json(&out.join(MANIFEST))["seed"], 9);
}

#[test]
fn different_seeds_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let config = dataset(&tmp.path().join("data"));
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(geofactor(&["select", "--seed", "1"], &config, &a).status.success());
    assert!(geofactor(&["select", "--seed", "2"], &config, &b).status.success());
    let sa = std::fs::read(a.join(SELECTION_JSON)).unwrap();
    let sb = std::fs::read(b.join(SELECTION_JSON)).unwrap();
    assert_ne!(sa, sb);
}

#[test]
fn missing_input_file_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let config = dataset(&tmp.path().join("data"));
    std::fs::remove_file(config.with_file_name("cases.csv")).unwrap();
    let out = geofactor(&["run"], &config, &tmp.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let config = dataset(&tmp.path().join("data"));
    edit_config(&config, |v| {
        v["colour"] = Value::from("blue");
    });
    let out = geofactor(&["run"], &config, &tmp.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_k_override_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let config = dataset(&tmp.path().join("data"));
    let out = geofactor(&["run", "--k", "0"], &config, &tmp.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_case_counts_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let config = dataset(&tmp.path().join("data"));
    let cases = config.with_file_name("cases.csv");
    let text = std::fs::read_to_string(&cases).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let cols: Vec<&str> = lines[1].split(',').collect();
    lines[1] = format!("{},{},lots", cols[0], cols[1]);
    std::fs::write(&cases, lines.join("\n") + "\n").unwrap();
    let out = geofactor(&["run"], &config, &tmp.path().join("out"));
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn strict_non_convergence_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let config = dataset(&tmp.path().join("data"));
    edit_config(&config, |v| {
        v["select"] = serde_json::json!({"lasso": {"max_iter": 1, "tol": 0.0}});
    });
    let relaxed = geofactor(&["select"], &config, &tmp.path().join("relaxed"));
    assert!(relaxed.status.success());
    let strict = geofactor(&["select", "--strict"], &config, &tmp.path().join("strict"));
    assert_eq!(strict.status.code(), Some(4), "{}", String::from_utf8_lossy(&strict.stderr));
}

#[test]
fn unit_missing_from_a_table_is_dropped_with_a_warning() {
    let tmp = tempfile::tempdir().unwrap();
    let config = dataset(&tmp.path().join("data"));
    let subway = config.with_file_name("subway.csv");
    let text = std::fs::read_to_string(&subway).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let removed = lines.remove(1).split(',').next().unwrap().to_string();
    std::fs::write(&subway, lines.join("\n") + "\n").unwrap();
    let out = tmp.path().join("out");
    let res = geofactor(&["run", "--k", "3"], &config, &out);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let manifest = read_json(&out.join(MANIFEST));
    assert_eq!(manifest["units"], small().units as u64 - 1);
    let warned = manifest["warnings"]
        .as_array()
        .unwrap()
        .iter()
        .any(|w| w["code"] == "DROPPED_UNIT" && w["unit"] == removed.as_str());
    assert!(warned, "{:?}", manifest["warnings"]);
    let clusters = std::fs::read_to_string(out.join(CLUSTERS_CSV)).unwrap();
    assert!(!clusters.lines().any(|l| l.starts_with(&format!("{removed},"))));
}
