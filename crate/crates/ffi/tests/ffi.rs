use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use nfplace::config::RunConfig;
use nfplace::fim::{peb, position_fim};
use nfplace::geometry::{Pose, Vec3};
use nfplace::metric::sample_peb_map;
use nfplace::scenario::Mode;
use nfplace_ffi::*;

const SMALL: &str = r#"{"sampling": {"n_r": 3, "r_step_m": 30, "n_phi": 4, "phi_step_deg": 45}}"#;

fn last_error() -> String {
    unsafe { CStr::from_ptr(nf_last_error_message()) }.to_str().unwrap().to_owned()
}

fn small_context() -> *mut NfContext {
    let json = CString::new(SMALL).unwrap();
    let mut ctx = ptr::null_mut();
    assert_eq!(unsafe { nf_context_from_json(json.as_ptr(), &mut ctx) }, NfStatus::Ok);
    ctx
}

#[test]
fn version_and_counts() {
    let v = unsafe { CStr::from_ptr(nf_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
    assert_eq!(nf_count_selections(6, 14, 12), 48412);
    assert_eq!(nf_count_selections(6, 14, 6), 1940);
    assert_eq!(nf_count_selections(0, 14, 13), 0);
}

#[test]
fn peb_matches_library() {
    let ctx = small_context();
    let ids = [0usize, 3, 4, 9, 13, 14];
    let mut p = 0.0;
    let s = unsafe { nf_peb(ctx, ids.as_ptr(), ids.len(), NfMode::Coherent, 25.0, 30.0, &mut p) };
    assert_eq!(s, NfStatus::Ok);
    assert_eq!(last_error(), "");

    let cfg: RunConfig = serde_json::from_str(SMALL).unwrap();
    let r = cfg.resolve(Path::new(".")).unwrap();
    let dep = r.deployment_of(&ids).unwrap();
    let z = -r.scenario.bs_height_m + cfg.sampling.reference_height_m;
    let pose = Pose::vehicle(Vec3::new(0.0, 25.0, z), 30f64.to_radians());
    let expect = peb(&position_fim(&dep, &pose, &r.scenario, &r.body, Mode::Coherent).unwrap()).unwrap();
    assert_eq!(p, expect);
    unsafe { nf_context_free(ctx) };
}

#[test]
fn peb_map_round_trip() {
    let ctx = small_context();
    let ids = [0usize, 13, 14];
    let mut map = ptr::null_mut();
    assert_eq!(unsafe { nf_peb_map(ctx, ids.as_ptr(), ids.len(), NfMode::Incoherent, &mut map) }, NfStatus::Ok);
    let (mut n_phi, mut n_r) = (0, 0);
    assert_eq!(unsafe { nf_peb_map_dims(map, &mut n_phi, &mut n_r) }, NfStatus::Ok);
    assert_eq!((n_phi, n_r), (4, 3));

    let mut short = [0.0; 11];
    assert_eq!(unsafe { nf_peb_map_values(map, short.as_mut_ptr(), short.len()) }, NfStatus::InvalidArgument);
    assert!(last_error().contains("12"));
    let mut values = [0.0; 12];
    assert_eq!(unsafe { nf_peb_map_values(map, values.as_mut_ptr(), values.len()) }, NfStatus::Ok);

    let cfg: RunConfig = serde_json::from_str(SMALL).unwrap();
    let r = cfg.resolve(Path::new(".")).unwrap();
    let dep = r.deployment_of(&ids).unwrap();
    let lib = sample_peb_map(&dep, &cfg.sampling, &r.scenario, &r.body, Mode::Incoherent, "x").unwrap();
    assert_eq!(values.to_vec(), lib.cells());

    let mut rho = 0.0;
    assert_eq!(unsafe { nf_peb_map_rho(map, 0.0, &mut rho) }, NfStatus::Ok);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(rho, max);
    assert_eq!(unsafe { nf_peb_map_rho(map, 1.0, &mut rho) }, NfStatus::Config);
    unsafe {
        nf_peb_map_free(map);
        nf_context_free(ctx);
    }
}

#[test]
fn optimize_reports_best() {
    let ctx = small_context();
    let mut trial = ptr::null_mut();
    assert_eq!(
        unsafe { nf_optimize(ctx, NfMode::Coherent, NfStrategy::Exhaustive, 6, &mut trial) },
        NfStatus::Ok
    );
    let (mut total, mut ident, mut disc) = (0, 0, 0);
    assert_eq!(unsafe { nf_trial_counts(trial, &mut total, &mut ident, &mut disc) }, NfStatus::Ok);
    assert_eq!(total, 1940);
    assert_eq!(ident + disc, total);

    let (mut n, mut rho) = (0, 0.0);
    assert_eq!(
        unsafe { nf_trial_best(trial, ptr::null_mut(), 0, &mut n, &mut rho) },
        NfStatus::InvalidArgument
    );
    assert!(n > 0 && rho > 0.0);
    let mut ids = vec![0usize; n];
    assert_eq!(unsafe { nf_trial_best(trial, ids.as_mut_ptr(), n, &mut n, &mut rho) }, NfStatus::Ok);
    assert!(ids.windows(2).all(|w| w[0] < w[1]));

    let mut greedy = ptr::null_mut();
    assert_eq!(unsafe { nf_optimize(ctx, NfMode::Coherent, NfStrategy::Greedy, 6, &mut greedy) }, NfStatus::Ok);
    let mut g_rho = 0.0;
    unsafe { nf_trial_best(greedy, ptr::null_mut(), 0, &mut n, &mut g_rho) };
    assert!(g_rho >= rho);
    unsafe {
        nf_trial_free(trial);
        nf_trial_free(greedy);
        nf_context_free(ctx);
    }
}

#[test]
fn errors_map_to_status() {
    let mut ctx = ptr::null_mut();
    assert_eq!(unsafe { nf_context_from_json(ptr::null(), &mut ctx) }, NfStatus::InvalidArgument);
    assert!(ctx.is_null());

    let bad = CString::new("{\"mode\": \"sideways\"}").unwrap();
    assert_eq!(unsafe { nf_context_from_json(bad.as_ptr(), &mut ctx) }, NfStatus::Config);
    assert!(last_error().contains("line 1"), "{}", last_error());

    let missing = CString::new("/nonexistent/run.json").unwrap();
    assert_eq!(unsafe { nf_context_from_file(missing.as_ptr(), &mut ctx) }, NfStatus::Config);
    assert!(last_error().contains("/nonexistent/run.json"));

    let ctx = small_context();
    let mut trial = ptr::null_mut();
    let all_pairs = CString::new(r#"{"grid": [{"label": "a", "placement": [0.9, 0, 0.5], "rotation": [[1,0,0],[0,1,0],[0,0,1]], "mirrored": true}]}"#).unwrap();
    let mut pairs_ctx = ptr::null_mut();
    assert_eq!(unsafe { nf_context_from_json(all_pairs.as_ptr(), &mut pairs_ctx) }, NfStatus::Ok, "{}", last_error());
    assert_eq!(
        unsafe { nf_optimize(pairs_ctx, NfMode::Coherent, NfStrategy::Exhaustive, 3, &mut trial) },
        NfStatus::Infeasible
    );
    assert!(trial.is_null());

    let ids = [0usize];
    let mut p = 0.0;
    assert_eq!(unsafe { nf_peb(ctx, ids.as_ptr(), 0, NfMode::Coherent, 25.0, 0.0, &mut p) }, NfStatus::InvalidArgument);
    assert_eq!(unsafe { nf_peb(ctx, ids.as_ptr(), 1, NfMode::Coherent, -1.0, 0.0, &mut p) }, NfStatus::InvalidArgument);
    let far = [99usize];
    assert_eq!(unsafe { nf_peb(ctx, far.as_ptr(), 1, NfMode::Coherent, 25.0, 0.0, &mut p) }, NfStatus::Config);

    unsafe {
        nf_context_free(ptr::null_mut());
        nf_context_free(pairs_ctx);
        nf_context_free(ctx);
    }
}

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_owned()
}

#[test]
fn header_compiles_and_links_from_c() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib = target_dir().join("libnfplace_ffi.a");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler");
        return;
    }
    assert!(lib.exists(), "static library not found at {}", lib.display());
    let out = tempfile::tempdir().unwrap();
    let bin = out.path().join("c_abi");
    let status = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&bin)
        .arg(dir.join("tests/c_abi.c"))
        .arg("-I")
        .arg(dir.join("include"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl"])
        .status()
        .unwrap();
    assert!(status.success());
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
