use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nfplace::config::RunManifest;
use nfplace::metric::PebMap;
use nfplace::optimizer::TrialResult;

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name).to_string_lossy().into_owned()
}

fn nfplace(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nfplace")).args(args).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// Run file with absolute data paths and `extra` fields merged in.
fn config(dir: &Path, extra: serde_json::Value) -> PathBuf {
    let mut v = serde_json::json!({
        "scenario": data("scenario.json"),
        "grid": data("grid.json"),
        "body": data("body.json"),
        "selection": [0, 1, 3, 4, 9, 13, 14, 15],
    });
    for (k, x) in extra.as_object().unwrap() {
        v[k] = x.clone();
    }
    let p = dir.join(format!("run{}.json", std::fs::read_dir(dir).unwrap().count()));
    std::fs::write(&p, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    p
}

fn coarse() -> serde_json::Value {
    serde_json::json!({"n_r": 5, "r_step_m": 17.1, "n_phi": 12, "phi_step_deg": 15.0})
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn peb_map_writes_full_grid_summary_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let stdout = ok(&nfplace(&["peb-map", "--config", &data("run.json"), "--out", s(&out)]));
    assert!(stdout.starts_with("rho_m="));

    let map = PebMap::from_csv(&read(&out, "peb_map_coherent.csv"), "coherent").unwrap();
    assert_eq!(map.values.shape(), (60, 20));
    assert!(map.phi_deg.first() == Some(&-90.0) && map.r_m.first() == Some(&5.0));
    let summary: serde_json::Value = serde_json::from_str(&read(&out, "summary_coherent.json")).unwrap();
    let rho = summary["rho_m"].as_f64().unwrap();
    assert_eq!(rho, nfplace::metric::rho(&map, 0.1).unwrap());
    assert!(read(&out, "eccdf_coherent.csv").starts_with("threshold_m,eccdf\n"));

    let m = RunManifest::load(&out.join("manifest.json")).unwrap();
    assert_eq!(m.command, "peb-map");
    assert_eq!(m.evaluations, 1200);
    for f in &m.outputs {
        assert!(out.join(f).exists(), "{f}");
    }
    assert_eq!(m.outputs.len(), 3);

    // ECCDF from the written map reproduces the summary
    let e = tmp.path().join("e");
    let map_path = out.join("peb_map_coherent.csv");
    let stdout = ok(&nfplace(&["eccdf", "--map", s(&map_path), "--out", s(&e)]));
    assert_eq!(stdout.trim(), format!("rho_m={rho:e}"));
    assert_eq!(read(&e, "eccdf_coherent.csv"), read(&out, "eccdf_coherent.csv"));
}

#[test]
fn ground_reflection_off_writes_los_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), serde_json::json!({"sampling": coarse()}));
    let out = tmp.path().join("o");
    ok(&nfplace(&["peb-map", "--config", s(&cfg), "--ground-reflection", "off", "--mode", "incoherent", "--out", s(&out)]));
    assert!(out.join("peb_map_incoherent_los.csv").exists());
    assert!(out.join("summary_incoherent_los.json").exists());
    let m = RunManifest::load(&out.join("manifest.json")).unwrap();
    match m.config.scenario {
        Some(nfplace::config::Source::Inline(sc)) => assert!(!sc.ground_reflection),
        other => panic!("scenario not inlined: {other:?}"),
    }
}

#[test]
fn config_errors_exit_2_with_location() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing-grid.json");
    let cfg = config(tmp.path(), serde_json::json!({"grid": s(&missing)}));
    let out = nfplace(&["peb-map", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(s(&missing)));

    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, "{\n  \"mode\": \"coherent\",\n  \"seed\": -3\n}").unwrap();
    let out = nfplace(&["peb-map", "--config", s(&bad), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.json: line 3"), "{err}");

    for scenario in [
        serde_json::json!({"tx_power_w": -1.0}),
        serde_json::json!({"subcarriers": 0}),
        serde_json::json!({"peb_percentile": 1.0}),
    ] {
        let cfg = config(tmp.path(), serde_json::json!({"scenario": scenario}));
        let out = nfplace(&["peb-map", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
        assert_eq!(out.status.code(), Some(2), "{scenario}");
    }
}

#[test]
fn optimize_exhaustive_counts_and_replay() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), serde_json::json!({"sampling": coarse(), "element_budget": 48}));
    let out = tmp.path().join("o");
    let stdout = ok(&nfplace(&["optimize", "--config", s(&cfg), "--k", "12", "--out", s(&out)]));
    assert!(stdout.starts_with("total=48412 "), "{stdout}");

    let trial: TrialResult = serde_json::from_str(&read(&out, "trial.json")).unwrap();
    assert_eq!(trial.total, 48412);
    assert_eq!(trial.identifiable + trial.discarded, trial.total);
    assert_eq!(read(&out, "ranking.csv").lines().count(), trial.identifiable + 1);
    let best: Vec<nfplace::deployment::GridPointFile> = serde_json::from_str(&read(&out, "best_grid.json")).unwrap();
    assert_eq!(best.len(), trial.best.ids.len());

    let again = tmp.path().join("again");
    let stdout2 = ok(&nfplace(&["--threads", "1", "replay", "--manifest", s(&out.join("manifest.json")), "--out", s(&again)]));
    assert_eq!(stdout, stdout2);
    for f in ["trial.json", "ranking.csv", "best_grid.json"] {
        assert_eq!(read(&out, f), read(&again, f), "{f}");
    }
}

#[test]
fn optimize_greedy_trace_is_monotone() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), serde_json::json!({"sampling": coarse()}));
    let out = tmp.path().join("o");
    ok(&nfplace(&["optimize", "--config", s(&cfg), "--strategy", "greedy", "--k", "12", "--out", s(&out)]));
    let trial: TrialResult = serde_json::from_str(&read(&out, "trial.json")).unwrap();
    assert!(trial.trace.len() >= 2);
    assert!(trial.trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)), "{:?}", trial.trace);
    assert!(trial.k_actual >= 12);
}

#[test]
fn odd_k_on_all_pair_grid_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let grid: Vec<serde_json::Value> = serde_json::from_str(&std::fs::read_to_string(data("grid.json")).unwrap()).unwrap();
    let pairs: Vec<_> = grid.into_iter().filter(|p| p["mirrored"] == true).collect();
    let cfg = config(tmp.path(), serde_json::json!({"grid": pairs, "sampling": coarse(), "selection": null}));
    let out = nfplace(&["optimize", "--config", s(&cfg), "--k", "13", "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn likelihood_cut_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), serde_json::json!({"likelihood": {"cut_half_width_m": 0.02}, "seed": 7}));
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let args = |o: &Path| {
        nfplace(&["likelihood", "--config", s(&cfg), "--cut", "y", "--spacing", "lambda/100", "--noise", "--out", s(o)])
    };
    ok(&args(&a));
    ok(&args(&b));
    let csv = read(&a, "cut_y_coherent.csv");
    assert!(csv.starts_with("y_m,sqrt_objective\n"));
    assert_eq!(csv.lines().count(), 1 + 2 * (0.02f64 / (0.0107068735 / 100.0)).floor() as usize + 1);
    assert_eq!(csv, read(&b, "cut_y_coherent.csv"));
    let side: serde_json::Value = serde_json::from_str(&read(&a, "cut_y_coherent.json")).unwrap();
    assert_eq!(side["true_position_m"], serde_json::json!([0.0, 25.0]));
    assert!(!a.join("surface_coherent.csv").exists());

    let c = tmp.path().join("c");
    ok(&nfplace(&["replay", "--manifest", s(&a.join("manifest.json")), "--out", s(&c)]));
    assert_eq!(csv, read(&c, "cut_y_coherent.csv"));
    assert_eq!(read(&a, "cut_y_coherent.json"), read(&c, "cut_y_coherent.json"));
}

#[test]
fn likelihood_surface_sidecar() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(
        tmp.path(),
        serde_json::json!({"likelihood": {"half_width_m": [0.05, 0.05], "spacing": "lambda"}}),
    );
    let out = tmp.path().join("o");
    let stdout = ok(&nfplace(&["likelihood", "--config", s(&cfg), "--mode", "incoherent", "--out", s(&out)]));
    assert!(stdout.starts_with("surface minimum"));
    let csv = read(&out, "surface_incoherent.csv");
    assert_eq!(csv.lines().count(), 10);
    assert!(csv.starts_with("y_m\\x_m,"));
    let side: serde_json::Value = serde_json::from_str(&read(&out, "surface_incoherent.json")).unwrap();
    assert_eq!(side["mode"], "incoherent");
    assert_eq!(side["synchronization"], "fixed at truth");
}

#[test]
fn likelihood_non_identifiable_pose_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    // the front bumper faces away from the base station at φ = 30°
    let cfg = config(tmp.path(), serde_json::json!({"selection": [0]}));
    let out = nfplace(&["likelihood", "--config", s(&cfg), "--cut", "x", "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(4));
}
