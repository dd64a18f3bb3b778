use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use dlvkl_ffi::*;

fn last_error() -> String {
    let p = dlvkl_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn step_data(n: usize) -> (Vec<f64>, Vec<f64>) {
    let x: Vec<f64> = (0..n).map(|i| -2.0 + 4.0 * i as f64 / (n - 1) as f64).collect();
    let y = x.iter().map(|v| if *v < 0.0 { 1.0 } else { -1.0 }).collect();
    (x, y)
}

fn new_model(settings: &str, x: &[f64], n: usize, d_x: usize, d_y: usize) -> Result<*mut DlvklModel, DlvklStatus> {
    let s = CString::new(settings).unwrap();
    let mut m = ptr::null_mut();
    match unsafe { dlvkl_model_new(s.as_ptr(), x.as_ptr(), n, d_x, d_y, &mut m) } {
        DlvklStatus::Ok => Ok(m),
        e => Err(e),
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(dlvkl_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn fit_predict_save_load() {
    let (x, y) = step_data(30);
    let m = new_model("variant = dlvkl-nsde\nm = 8\nflow_steps = 3\nlengthscale = 1\nbeta = 0.1", &x, 30, 1, 1).unwrap();
    let (mut din, mut dout) = (0, 0);
    assert_eq!(unsafe { dlvkl_model_dims(m, &mut din, &mut dout) }, DlvklStatus::Ok);
    assert_eq!((din, dout), (1, 1));

    let mut before = 0.0;
    let mut elbo = 0.0;
    let mut last = 0.0;
    unsafe {
        assert_eq!(dlvkl_model_elbo(m, x.as_ptr(), y.as_ptr(), 30, 5, &mut before), DlvklStatus::Ok);
        assert_eq!(dlvkl_model_fit(m, x.as_ptr(), y.as_ptr(), 30, 300, 30, 0.02, 1, &mut last), DlvklStatus::Ok);
        assert_eq!(dlvkl_model_elbo(m, x.as_ptr(), y.as_ptr(), 30, 5, &mut elbo), DlvklStatus::Ok);
    }
    assert!(last.is_finite());
    assert!(elbo > before, "{before} -> {elbo}");

    let mut mean = vec![0.0; 30];
    let mut var = vec![0.0; 30];
    unsafe { dlvkl_model_predict(m, x.as_ptr(), 30, 4, 9, mean.as_mut_ptr(), var.as_mut_ptr()) };
    assert!(var.iter().all(|v| *v > 0.0));

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.txt").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { dlvkl_model_save(m, path.as_ptr()) }, DlvklStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { dlvkl_model_load(path.as_ptr(), &mut back) }, DlvklStatus::Ok);
    let mut mean2 = vec![0.0; 30];
    unsafe { dlvkl_model_predict(back, x.as_ptr(), 30, 4, 9, mean2.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(mean, mean2);
    unsafe {
        dlvkl_model_free(m);
        dlvkl_model_free(back);
    }
}

#[test]
fn classification_probabilities() {
    let (x, y) = step_data(20);
    let labels: Vec<f64> = y.iter().map(|v| if *v > 0.0 { 1.0 } else { 0.0 }).collect();
    let m = new_model("variant = dkl\ntask = binary\nm = 5", &x, 20, 1, 1).unwrap();
    let (mut din, mut dout) = (0, 0);
    unsafe { dlvkl_model_dims(m, &mut din, &mut dout) };
    assert_eq!(dout, 2);
    unsafe { dlvkl_model_fit(m, x.as_ptr(), labels.as_ptr(), 20, 50, 20, 0.01, 0, ptr::null_mut()) };
    let mut probs = vec![0.0; 40];
    assert_eq!(
        unsafe { dlvkl_model_predict(m, x.as_ptr(), 20, 1, 0, probs.as_mut_ptr(), ptr::null_mut()) },
        DlvklStatus::Ok
    );
    for row in probs.chunks(2) {
        assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
    }
    let bad = vec![2.0; 20];
    assert_eq!(
        unsafe { dlvkl_model_fit(m, x.as_ptr(), bad.as_ptr(), 20, 5, 20, 0.01, 0, ptr::null_mut()) },
        DlvklStatus::Data
    );
    assert!(last_error().contains("label"));
    unsafe { dlvkl_model_free(m) };
}

#[test]
fn errors_are_reported() {
    let (x, _) = step_data(10);
    assert_eq!(new_model("warp = 9", &x, 10, 1, 1).unwrap_err(), DlvklStatus::Config);
    assert!(last_error().contains("warp"));
    assert_eq!(new_model("beta = 3", &x, 10, 1, 1).unwrap_err(), DlvklStatus::Config);
    assert_eq!(new_model("d_x = 3", &x, 10, 1, 1).unwrap_err(), DlvklStatus::Config);
    assert_eq!(new_model("no equals sign", &x, 10, 1, 1).unwrap_err(), DlvklStatus::Data);

    let mut m = ptr::null_mut();
    let empty = CString::new("").unwrap();
    let st = unsafe { dlvkl_model_new(empty.as_ptr(), ptr::null(), 10, 1, 1, &mut m) };
    assert_eq!(st, DlvklStatus::NullPointer);
    assert!(last_error().contains("'x'"));
    let st = unsafe { dlvkl_model_new(ptr::null::<c_char>(), x.as_ptr(), 10, 1, 1, &mut m) };
    assert_eq!(st, DlvklStatus::NullPointer);
    assert_eq!(unsafe { dlvkl_model_dims(ptr::null(), ptr::null_mut(), ptr::null_mut()) }, DlvklStatus::NullPointer);

    let missing = CString::new("/nonexistent/dir/model.txt").unwrap();
    assert_eq!(unsafe { dlvkl_model_load(missing.as_ptr(), &mut m) }, DlvklStatus::Data);
    assert!(last_error().contains("/nonexistent/dir/model.txt"));
    unsafe { dlvkl_model_free(ptr::null_mut()) };
}

#[test]
fn failed_fit_keeps_parameters() {
    let (x, y) = step_data(10);
    let m = new_model("variant = svgp\nm = 4", &x, 10, 1, 1).unwrap();
    let mut a = 0.0;
    let mut b = 0.0;
    unsafe {
        dlvkl_model_elbo(m, x.as_ptr(), y.as_ptr(), 10, 0, &mut a);
        let st = dlvkl_model_fit(m, x.as_ptr(), y.as_ptr(), 10, 5, 10, f64::NAN, 0, ptr::null_mut());
        assert_eq!(st, DlvklStatus::Config);
        dlvkl_model_elbo(m, x.as_ptr(), y.as_ptr(), 10, 0, &mut b);
        dlvkl_model_free(m);
    }
    assert_eq!(a, b);
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/dlvkl.h")
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(header()).unwrap();
    for f in [
        "dlvkl_version", "dlvkl_last_error", "dlvkl_model_new", "dlvkl_model_free", "dlvkl_model_dims",
        "dlvkl_model_fit", "dlvkl_model_elbo", "dlvkl_model_predict", "dlvkl_model_save", "dlvkl_model_load",
    ] {
        assert!(h.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(h.contains("typedef struct DlvklModel DlvklModel;"));
    assert!(h.contains("DLVKL_STATUS_NUMERICAL = 3"));
}

/// Builds tests/smoke.c against the header and the static library when a
/// C compiler is around.
#[test]
fn c_program_links_and_runs() {
    let Ok(exe) = std::env::current_exe() else { return };
    let profile_dir = exe.parent().and_then(Path::parent).unwrap();
    let lib = profile_dir.join("libdlvkl_ffi.a");
    if !lib.is_file() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no cc or static library");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/smoke.c");
    let out = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with(env!("CARGO_PKG_VERSION")));
}
