use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use painfuse_ffi::*;

fn last_error() -> String {
    let p = pf_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

/// 1-D inputs on a grid with a smooth target.
fn toy() -> (Vec<f64>, Vec<f64>) {
    let x: Vec<f64> = (0..40).map(|i| -4.0 + 8.0 * f64::from(i) / 39.0).collect();
    let y = x.iter().map(|v| (v * 0.8).sin()).collect();
    (x, y)
}

#[test]
fn train_predict_save_load_free() {
    let (x, y) = toy();
    let mut model = ptr::null_mut();
    let st = unsafe { pf_rvm_train(x.as_ptr(), 40, 1, y.as_ptr(), PfKernel::Rbf as i32, 0.0, &mut model) };
    assert_eq!(st, PfStatus::Ok);
    assert!(!model.is_null());
    unsafe {
        assert_eq!(pf_rvm_input_dim(model), 1);
        let rv = pf_rvm_num_relevance_vectors(model);
        assert!(rv > 0 && rv < 40, "{rv}");
    }

    let probe = [-3.0, 0.0, 2.5];
    let (mut mean, mut var) = ([0.0; 3], [0.0; 3]);
    let st = unsafe { pf_rvm_predict(model, probe.as_ptr(), 3, 1, mean.as_mut_ptr(), var.as_mut_ptr()) };
    assert_eq!(st, PfStatus::Ok);
    for (m, p) in mean.iter().zip(probe) {
        assert!((m - (p * 0.8).sin()).abs() < 0.1, "{m} at {p}");
    }
    assert!(var.iter().all(|&v| v > 0.0));

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.json").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { pf_rvm_save(model, path.as_ptr()) }, PfStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { pf_rvm_load(path.as_ptr(), &mut back) }, PfStatus::Ok);
    let mut again = [0.0; 3];
    let st = unsafe { pf_rvm_predict(back, probe.as_ptr(), 3, 1, again.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(st, PfStatus::Ok);
    assert_eq!(again, mean);

    unsafe {
        pf_rvm_free(model);
        pf_rvm_free(back);
        pf_rvm_free(ptr::null_mut());
    }
}

#[test]
fn errors_set_status_and_message() {
    let (x, y) = toy();
    let mut model = ptr::null_mut();
    let st = unsafe { pf_rvm_train(ptr::null(), 40, 1, y.as_ptr(), PfKernel::Rbf as i32, 1.0, &mut model) };
    assert_eq!(st, PfStatus::NullPointer);
    assert!(last_error().contains('x'));
    assert!(model.is_null());

    let st = unsafe { pf_rvm_train(x.as_ptr(), 40, 1, y.as_ptr(), 9, 1.0, &mut model) };
    assert_eq!(st, PfStatus::InvalidArgument);
    assert!(last_error().contains("kernel"));

    let mut bad_y = y.clone();
    bad_y[3] = f64::NAN;
    let st = unsafe { pf_rvm_train(x.as_ptr(), 40, 1, bad_y.as_ptr(), PfKernel::Linear as i32, 0.0, &mut model) };
    assert_eq!(st, PfStatus::InvalidArgument);

    let missing = CString::new("/nonexistent/model.json").unwrap();
    assert_eq!(unsafe { pf_rvm_load(missing.as_ptr(), &mut model) }, PfStatus::Io);
    assert!(last_error().contains("/nonexistent/model.json"));

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.json");
    std::fs::write(&junk, "{\"not\": \"a model\"}").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { pf_rvm_load(junk.as_ptr(), &mut model) }, PfStatus::Format);

    // a successful call clears the message
    let mut s = 0u8;
    assert_eq!(unsafe { pf_pspi(1, 0, 0, 0, 0, 0, &mut s) }, PfStatus::Ok);
    assert!(pf_last_error_message().is_null());
}

#[test]
fn predict_checks_dimensions() {
    let (x, y) = toy();
    let mut model = ptr::null_mut();
    assert_eq!(
        unsafe { pf_rvm_train(x.as_ptr(), 40, 1, y.as_ptr(), PfKernel::Rbf as i32, 0.5, &mut model) },
        PfStatus::Ok
    );
    let probe = [0.0, 1.0];
    let mut out = [0.0; 1];
    let st = unsafe { pf_rvm_predict(model, probe.as_ptr(), 1, 2, out.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(st, PfStatus::InvalidArgument);
    unsafe { pf_rvm_free(model) };
}

#[test]
fn pspi_matches_definition() {
    let mut s = 0u8;
    assert_eq!(unsafe { pf_pspi(2, 3, 1, 0, 4, 1, &mut s) }, PfStatus::Ok);
    assert_eq!(s, 2 + 3 + 4 + 1);
    assert_eq!(unsafe { pf_pspi(5, 5, 5, 5, 5, 1, &mut s) }, PfStatus::Ok);
    assert_eq!(s, 16);
    assert_eq!(unsafe { pf_pspi(6, 0, 0, 0, 0, 0, &mut s) }, PfStatus::InvalidArgument);
    assert!(last_error().contains("AU4") || last_error().contains("au4"));
    assert_eq!(unsafe { pf_pspi(0, 0, 0, 0, 0, 2, &mut s) }, PfStatus::InvalidArgument);
    assert_eq!(unsafe { pf_pspi(0, 0, 0, 0, 0, 0, ptr::null_mut()) }, PfStatus::NullPointer);
}

#[test]
fn postprocess_and_metrics() {
    let p = [2.1, 1.9, 2.0, 2.2, 7.6];
    let mut out = [0.0; 5];
    let st = unsafe { pf_postprocess(p.as_ptr(), 5, PfMethod::RebaseThreshold as i32, out.as_mut_ptr()) };
    assert_eq!(st, PfStatus::Ok);
    assert_eq!(out, [2.1 - 2.0, 0.0, 0.0, 2.2 - 2.0, 7.6 - 2.0]);

    // in place
    let mut buf = [-1.0, 20.0, 3.0];
    let st = unsafe { pf_postprocess(buf.as_ptr(), 3, PfMethod::Threshold as i32, buf.as_mut_ptr()) };
    assert_eq!(st, PfStatus::Ok);
    assert_eq!(buf, [0.0, 16.0, 3.0]);
    assert_eq!(
        unsafe { pf_postprocess(buf.as_ptr(), 3, 42, buf.as_mut_ptr()) },
        PfStatus::InvalidArgument
    );

    let truth = [0.0, 1.0, 2.0, 3.0];
    let preds = [0.0, 1.0, 2.0, 5.0];
    let (mut rmse, mut corr) = (0.0, 0.0);
    assert_eq!(unsafe { pf_metrics(preds.as_ptr(), truth.as_ptr(), 4, &mut rmse, &mut corr) }, PfStatus::Ok);
    assert!((rmse - 1.0).abs() < 1e-15);
    assert!(corr > 0.9 && corr < 1.0);
    let flat = [1.0; 4];
    assert_eq!(unsafe { pf_metrics(flat.as_ptr(), truth.as_ptr(), 4, &mut rmse, &mut corr) }, PfStatus::Ok);
    assert!(corr.is_nan());
    assert_eq!(
        unsafe { pf_metrics(ptr::null(), ptr::null(), 0, &mut rmse, &mut corr) },
        PfStatus::InvalidArgument
    );
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(pf_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_is_generated_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/painfuse.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "pf_rvm_train",
        "pf_rvm_predict",
        "pf_rvm_save",
        "pf_rvm_load",
        "pf_rvm_free",
        "pf_pspi",
        "pf_postprocess",
        "pf_metrics",
        "pf_last_error_message",
        "typedef struct PfRvmModel PfRvmModel",
        "PF_STATUS_OK = 0",
        "PF_METHOD_REBASE_THRESHOLD = 3",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        match Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg(&header)
            .output()
        {
            Ok(out) => assert!(out.status.success(), "{compiler}: {}", String::from_utf8_lossy(&out.stderr)),
            Err(_) => eprintln!("{compiler} not available; skipping syntax check"),
        }
    }
}
