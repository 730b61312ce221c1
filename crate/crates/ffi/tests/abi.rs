use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use distgen_ffi::*;

fn last_error() -> String {
    let msg = dg_last_error_message();
    assert!(!msg.is_null());
    unsafe { CStr::from_ptr(msg) }.to_string_lossy().into_owned()
}

fn partition(sizes: &[usize]) -> *mut DgPartition {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { dg_partition_new(sizes.as_ptr(), sizes.len(), &mut out) }, DgStatus::Ok);
    out
}

#[test]
fn partition_handles() {
    let part = partition(&[3, 4, 5]);
    unsafe {
        assert_eq!(dg_partition_num_blocks(part), 3);
        assert_eq!(dg_partition_total(part), 12);
        let mut sizes = [0usize; 3];
        assert_eq!(dg_partition_sizes(part, sizes.as_mut_ptr(), 3), DgStatus::Ok);
        assert_eq!(sizes, [3, 4, 5]);
        assert_eq!(dg_partition_sizes(part, sizes.as_mut_ptr(), 2), DgStatus::DimensionMismatch);
        dg_partition_free(part);
        dg_partition_free(ptr::null_mut());
        assert_eq!(dg_partition_num_blocks(ptr::null()), 0);
    }
}

#[test]
fn invalid_partition_sets_message() {
    let mut out = ptr::null_mut();
    let sizes = [0usize, 4];
    let status = unsafe { dg_partition_new(sizes.as_ptr(), 2, &mut out) };
    assert_eq!(status, DgStatus::InvalidArgument);
    assert!(out.is_null());
    assert!(last_error().contains("partition"), "{}", last_error());

    assert_eq!(unsafe { dg_partition_new(ptr::null(), 2, &mut out) }, DgStatus::NullPointer);
    assert_eq!(unsafe { dg_partition_balanced(3, 4, &mut out) }, DgStatus::InvalidArgument);
}

#[test]
fn theory_values() {
    let part = partition(&[75, 75]);
    let mut v = 0.0;
    unsafe {
        assert_eq!(dg_gamma(75, 50, &mut v), DgStatus::Ok);
        assert!((v - 50.0 / 24.0).abs() < 1e-12);
        assert_eq!(dg_gamma(51, 50, &mut v), DgStatus::Ok);
        assert!(v.is_infinite());
        assert_eq!(dg_alpha(part, 1, 50, &mut v), DgStatus::Ok);
        assert!((v - 49.0 / 48.0).abs() < 1e-12);
        assert_eq!(dg_alpha(part, 2, 50, &mut v), DgStatus::InvalidArgument);
        let norms = [75.0, 75.0];
        assert_eq!(dg_predict_first_iteration(part, 50, norms.as_ptr(), 2, &mut v), DgStatus::Ok);
        assert!((v - 153.125).abs() < 1e-9);
        dg_partition_free(part);

        let critical = partition(&[50, 100]);
        assert_eq!(dg_predict_first_iteration(critical, 50, norms.as_ptr(), 2, &mut v), DgStatus::Ok);
        assert!(v.is_infinite());
        dg_partition_free(critical);
    }
}

#[test]
fn advise() {
    let mut sizes = [0usize; 2];
    let mut feasible = -1;
    unsafe {
        assert_eq!(dg_advise_partition(50, 150, 2, 5, sizes.as_mut_ptr(), &mut feasible), DgStatus::Ok);
    }
    assert_eq!(sizes, [75, 75]);
    assert_eq!(feasible, 1);
}

#[test]
fn solve_interpolates() {
    let x = [1.0, -2.0, 0.5, 3.0, 0.0, 1.0];
    let mut inst = ptr::null_mut();
    unsafe {
        assert_eq!(dg_instance_generate(4, 6, x.as_ptr(), 0.0, 7, 0, &mut inst), DgStatus::Ok);
        let (mut n, mut p) = (0, 0);
        assert_eq!(dg_instance_dims(inst, &mut n, &mut p), DgStatus::Ok);
        assert_eq!((n, p), (4, 6));
        let part = partition(&[3, 3]);
        let mut x_hat = [0.0; 6];
        assert_eq!(dg_cocoa_solve(inst, part, 0.0, 300, x_hat.as_mut_ptr(), 6), DgStatus::Ok);
        let mut train = 1.0;
        assert_eq!(dg_training_error(inst, x_hat.as_ptr(), 6, &mut train), DgStatus::Ok);
        assert!(train < 1e-18, "{train}");
        assert_eq!(dg_cocoa_solve(inst, part, -1.0, 3, x_hat.as_mut_ptr(), 6), DgStatus::InvalidArgument);
        assert_eq!(dg_cocoa_solve(ptr::null(), part, 0.0, 3, x_hat.as_mut_ptr(), 6), DgStatus::NullPointer);
        dg_partition_free(part);
        dg_instance_free(inst);
    }
}

#[test]
fn from_arrays_matches_data() {
    // A = I_2, x = (1, 2), y = x; one node with lambda = 0 recovers x in one round
    let a = [1.0, 0.0, 0.0, 1.0];
    let x = [1.0, 2.0];
    let mut inst = ptr::null_mut();
    unsafe {
        assert_eq!(dg_instance_from_arrays(2, 2, a.as_ptr(), x.as_ptr(), x.as_ptr(), &mut inst), DgStatus::Ok);
        let part = partition(&[2]);
        let mut x_hat = [0.0; 2];
        assert_eq!(dg_cocoa_solve(inst, part, 0.0, 1, x_hat.as_mut_ptr(), 2), DgStatus::Ok);
        assert!((x_hat[0] - 1.0).abs() < 1e-14 && (x_hat[1] - 2.0).abs() < 1e-14);
        dg_partition_free(part);
        dg_instance_free(inst);
    }
}

#[test]
fn load_json_reports_io_errors() {
    let path = CString::new("/nonexistent/instance.json").unwrap();
    let mut inst = ptr::null_mut();
    assert_eq!(unsafe { dg_instance_load_json(path.as_ptr(), &mut inst) }, DgStatus::Io);
    assert!(inst.is_null());
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(dg_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn have_cc() -> bool {
    Command::new("cc").arg("--version").output().is_ok()
}

#[test]
fn header_compiles_as_c_and_cpp() {
    if !have_cc() {
        eprintln!("no C compiler; skipping header check");
        return;
    }
    let include = crate_dir().join("include");
    let smoke = crate_dir().join("tests/smoke.c");
    for (compiler, extra) in [("cc", &["-std=c11"][..]), ("c++", &["-x", "c++", "-std=c++17"][..])] {
        let status = Command::new(compiler)
            .args(extra)
            .args(["-fsyntax-only", "-Wall", "-Wextra", "-Werror", "-I"])
            .arg(&include)
            .arg(&smoke)
            .status()
            .unwrap_or_else(|e| panic!("{compiler}: {e}"));
        assert!(status.success(), "{compiler} rejected the header");
    }
}

#[test]
fn c_program_links_against_static_library() {
    if !have_cc() {
        return;
    }
    // target/<profile>/deps/<test binary> -> target/<profile>
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(Path::parent).unwrap();
    let lib = profile_dir.join("libdistgen_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping link test", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg(crate_dir().join("tests/smoke.c"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "smoke exited with {:?}", run.status);
    assert!(String::from_utf8_lossy(&run.stdout).contains("ok"));
}
