use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use demix_capi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(demix_last_error()) }.to_string_lossy().into_owned()
}

fn generate(s: usize, m: usize, k: usize, sigma: f64, seed: u64) -> *mut DemixInstance {
    let mut inst = ptr::null_mut();
    let status = unsafe { demix_instance_generate(s, m, k, 1.0, sigma, seed, &mut inst) };
    assert_eq!(status, DemixStatus::Ok, "{}", last_error());
    inst
}

fn config(eta: f64, max_iters: usize) -> DemixSolverConfig {
    DemixSolverConfig { eta, max_iters, stop_tol: 0.0, record_every: 1 }
}

#[test]
fn solve_matches_library() {
    let inst = generate(2, 120, 3, 0.0, 11);
    let mut run = ptr::null_mut();
    assert_eq!(unsafe { demix_solve(inst, &config(0.2, 40), &mut run) }, DemixStatus::Ok);
    assert_eq!(unsafe { demix_run_len(run) }, 41);

    let lib_inst = demix::ProblemInstance::generate(demix::Dimensions::new(2, 120, 3).unwrap(), 1.0, 0.0, 11).unwrap();
    let lib_run = demix::solver::run(&lib_inst, &demix::SolverConfig::new(0.2, 40)).unwrap();
    for (n, expected) in lib_run.trajectory.iter().enumerate() {
        let mut rec = DemixRecord { iter: 0, loss: 0.0, relative_error: 0.0, dist: 0.0, inc_a: 0.0, inc_b: 0.0, max_alignment_ratio: 0.0 };
        assert_eq!(unsafe { demix_run_record(run, n, &mut rec) }, DemixStatus::Ok);
        assert_eq!(rec.iter, expected.iter);
        assert_eq!(rec.loss.to_bits(), expected.loss.to_bits());
        assert_eq!(Some(rec.relative_error), expected.relative_error);
        assert_eq!(Some(rec.inc_b), expected.incoherence_b);
    }

    let mut h = [0.0; 6];
    let mut x = [0.0; 6];
    assert_eq!(unsafe { demix_run_estimate(run, 1, h.as_mut_ptr(), x.as_mut_ptr()) }, DemixStatus::Ok);
    let p = &lib_run.state.sources[1];
    assert_eq!((h[2], h[3]), (p.h[1].re, p.h[1].im));
    assert_eq!((x[4], x[5]), (p.x[2].re, p.x[2].im));
    assert_eq!(unsafe { demix_run_estimate(run, 2, h.as_mut_ptr(), x.as_mut_ptr()) }, DemixStatus::OutOfRange);

    unsafe {
        demix_run_free(run);
        demix_instance_free(inst);
    }
}

#[test]
fn errors_set_status_and_message() {
    let mut inst = ptr::null_mut();
    let status = unsafe { demix_instance_generate(1, 2, 4, 1.0, 0.0, 1, &mut inst) };
    assert_eq!(status, DemixStatus::Dimension);
    assert!(inst.is_null());
    assert!(last_error().contains("invalid dimensions"), "{}", last_error());

    assert_eq!(unsafe { demix_instance_generate(1, 8, 4, 1.0, 0.0, 1, ptr::null_mut()) }, DemixStatus::NullPointer);
    assert_eq!(unsafe { demix_instance_generate(1, 8, 4, 1.0, -1.0, 1, &mut inst) }, DemixStatus::InvalidArgument);
    assert_eq!(unsafe { demix_instance_dims(ptr::null(), ptr::null_mut()) }, DemixStatus::NullPointer);
    assert_eq!(unsafe { demix_run_len(ptr::null()) }, 0);

    let inst = generate(1, 16, 2, 0.0, 1);
    let mut snr = 0.0;
    assert_eq!(unsafe { demix_instance_snr_db(inst, &mut snr) }, DemixStatus::Numerical);
    let mut run = ptr::null_mut();
    assert_eq!(unsafe { demix_solve(inst, &config(0.0, 5), &mut run) }, DemixStatus::InvalidArgument);
    assert!(run.is_null());
    unsafe { demix_instance_free(inst) };

    let missing = CString::new("/nonexistent/instance.bin").unwrap();
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { demix_instance_load(missing.as_ptr(), &mut loaded) }, DemixStatus::Io);
}

#[test]
fn divergence_keeps_partial_run() {
    let inst = generate(2, 60, 3, 0.0, 7);
    let mut run = ptr::null_mut();
    let status = unsafe { demix_solve(inst, &config(50.0, 20), &mut run) };
    assert!(matches!(status, DemixStatus::Diverged | DemixStatus::Numerical), "{status:?}");
    assert!(!run.is_null());
    assert!(unsafe { demix_run_len(run) } >= 1);
    unsafe {
        demix_run_free(run);
        demix_instance_free(inst);
    }
}

#[test]
fn save_load_roundtrip() {
    let dir = tempdir();
    let path = CString::new(dir.join("inst.bin").to_str().unwrap()).unwrap();
    let inst = generate(2, 30, 3, 0.05, 9);
    assert_eq!(unsafe { demix_instance_save(inst, path.as_ptr()) }, DemixStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { demix_instance_load(path.as_ptr(), &mut back) }, DemixStatus::Ok);
    let (mut a, mut b) = (0.0, 0.0);
    unsafe {
        assert_eq!(demix_instance_snr_db(inst, &mut a), DemixStatus::Ok);
        assert_eq!(demix_instance_snr_db(back, &mut b), DemixStatus::Ok);
    }
    assert_eq!(a.to_bits(), b.to_bits());
    let mut dims = DemixDims::default();
    assert_eq!(unsafe { demix_instance_dims(back, &mut dims) }, DemixStatus::Ok);
    assert_eq!(dims, DemixDims { s: 2, m: 30, k: 3 });
    unsafe {
        demix_instance_free(inst);
        demix_instance_free(back);
    }
    let _ = std::fs::remove_dir_all(dir);
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(demix_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

fn tempdir() -> PathBuf {
    let dir = std::env::temp_dir().join(format!("demix-capi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn crate_dir() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(crate_dir().join("include/demix.h")).unwrap();
    for name in [
        "demix_instance_generate",
        "demix_instance_load",
        "demix_instance_save",
        "demix_instance_free",
        "demix_instance_dims",
        "demix_instance_snr_db",
        "demix_solve",
        "demix_run_len",
        "demix_run_record",
        "demix_run_estimate",
        "demix_run_free",
        "demix_last_error",
        "demix_version",
        "typedef struct DemixInstance DemixInstance",
        "DEMIX_STATUS_DIVERGED = 6",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

/// Compiles and runs a C program against the static library when a C
/// compiler and the archive are available next to the test binary.
#[test]
fn c_program_links_and_runs() {
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(Path::parent).unwrap();
    let archive = profile_dir.join("libdemix_capi.a");
    if !archive.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: {} or cc unavailable", archive.display());
        return;
    }
    let out = tempdir().join("smoke");
    let status = Command::new("cc")
        .arg(crate_dir().join("tests/c/smoke.c"))
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg(&archive)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let run = Command::new(&out).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(stdout.starts_with(&format!("2 200 4 {}", env!("CARGO_PKG_VERSION"))), "{stdout}");
}
