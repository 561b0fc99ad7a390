use std::ffi::{c_char, CStr, CString};
use std::ptr;

use tauq_ffi::*;

fn last_error() -> String {
    let p = tauq_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn take_string(p: *mut c_char) -> String {
    let s = CStr::from_ptr(p).to_string_lossy().into_owned();
    tauq_string_free(p);
    s
}

fn one_d() -> *mut TauqDgp {
    let kind = CString::new("one-d-validation").unwrap();
    let mut dgp = ptr::null_mut();
    assert_eq!(
        unsafe { tauq_dgp_from_kind(kind.as_ptr(), 3, &mut dgp) },
        TauqStatus::Ok
    );
    dgp
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(tauq_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn simulate_evaluate_and_query() {
    unsafe {
        let dgp = one_d();
        let (mut d, mut h, mut k) = (0usize, 0usize, 0usize);
        assert_eq!(tauq_dgp_dims(dgp, &mut d, &mut h, &mut k), TauqStatus::Ok);
        assert_eq!((d, k), (1, 2));

        let mut ds = ptr::null_mut();
        assert_eq!(
            tauq_dgp_simulate(dgp, TAUQ_POLICY_BEHAVIOR, 400, 11, &mut ds),
            TauqStatus::Ok
        );
        assert_eq!(tauq_dataset_len(ds), 400);

        let mut pol = ptr::null_mut();
        assert_eq!(
            tauq_dgp_policy_json(dgp, TAUQ_POLICY_EVALUATION, &mut pol),
            TauqStatus::Ok
        );
        let pol = CString::new(take_string(pol)).unwrap();

        let mut model = ptr::null_mut();
        assert_eq!(
            tauq_evaluate(ds, pol.as_ptr(), ptr::null(), &mut model),
            TauqStatus::Ok
        );

        let s = [0.3];
        let mut v = f64::NAN;
        assert_eq!(
            tauq_model_contrast(model, 1, s.as_ptr(), 1, 1, &mut v),
            TauqStatus::Ok
        );
        assert!(v.is_finite());
        let mut zero = f64::NAN;
        assert_eq!(
            tauq_model_contrast(model, 1, s.as_ptr(), 1, 0, &mut zero),
            TauqStatus::Ok
        );
        assert_eq!(zero, 0.0);
        let mut a = usize::MAX;
        assert_eq!(
            tauq_model_greedy_action(model, 1, s.as_ptr(), 1, &mut a),
            TauqStatus::Ok
        );
        assert_eq!(a, usize::from(v > 0.0));

        // JSON round trip gives the same contrast
        let mut json = ptr::null_mut();
        assert_eq!(tauq_model_to_json(model, &mut json), TauqStatus::Ok);
        let json = CString::new(take_string(json)).unwrap();
        let mut copy = ptr::null_mut();
        assert_eq!(
            tauq_model_from_json(json.as_ptr(), &mut copy),
            TauqStatus::Ok
        );
        let mut w = f64::NAN;
        assert_eq!(
            tauq_model_contrast(copy, 1, s.as_ptr(), 1, 1, &mut w),
            TauqStatus::Ok
        );
        assert_eq!(v, w);

        tauq_model_free(copy);
        tauq_model_free(model);
        tauq_dataset_free(ds);
        tauq_dgp_free(dgp);
    }
}

#[test]
fn optimize_returns_policy_json() {
    unsafe {
        let dgp = one_d();
        let mut ds = ptr::null_mut();
        assert_eq!(
            tauq_dgp_simulate(dgp, TAUQ_POLICY_BEHAVIOR, 300, 5, &mut ds),
            TauqStatus::Ok
        );
        let mut pol = ptr::null_mut();
        assert_eq!(
            tauq_optimize(ds, ptr::null(), ptr::null_mut(), &mut pol),
            TauqStatus::Ok
        );
        let text = take_string(pol);
        assert!(serde_json::from_str::<serde_json::Value>(&text).is_ok());
        tauq_dataset_free(ds);
        tauq_dgp_free(dgp);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let mut dgp = ptr::null_mut();
        assert_eq!(
            tauq_dgp_from_json(ptr::null(), &mut dgp),
            TauqStatus::NullPointer
        );
        assert!(dgp.is_null());
        assert!(last_error().contains("null"));

        let bad = CString::new("{\"kind\": \"nope\"}").unwrap();
        assert_eq!(
            tauq_dgp_from_json(bad.as_ptr(), &mut dgp),
            TauqStatus::Config
        );
        assert!(!last_error().is_empty());

        let kind = CString::new("nope").unwrap();
        assert_eq!(
            tauq_dgp_from_kind(kind.as_ptr(), 0, &mut dgp),
            TauqStatus::Config
        );

        let dgp = one_d();
        assert!(tauq_last_error().is_null(), "success clears the message");
        let mut ds = ptr::null_mut();
        assert_eq!(
            tauq_dgp_simulate(dgp, 7, 10, 0, &mut ds),
            TauqStatus::InvalidArgument
        );
        assert_eq!(
            tauq_dgp_simulate(dgp, TAUQ_POLICY_BEHAVIOR, 0, 0, &mut ds),
            TauqStatus::InvalidArgument
        );

        let bytes = [0xffu8, 0xfe, 0];
        assert_eq!(
            tauq_dgp_from_kind(bytes.as_ptr().cast(), 0, &mut ptr::null_mut()),
            TauqStatus::InvalidUtf8
        );

        let cfg = CString::new("{\"schema\": 1, \"unknown\": true}").unwrap();
        let mut out = ptr::null_mut();
        assert_eq!(
            tauq_experiment_run(cfg.as_ptr(), &mut out),
            TauqStatus::Config
        );
        assert!(out.is_null());
        tauq_dgp_free(dgp);
    }
}

#[test]
fn model_queries_are_bounds_checked() {
    unsafe {
        let dgp = one_d();
        let mut ds = ptr::null_mut();
        assert_eq!(
            tauq_dgp_simulate(dgp, TAUQ_POLICY_BEHAVIOR, 200, 1, &mut ds),
            TauqStatus::Ok
        );
        let mut pol = ptr::null_mut();
        assert_eq!(
            tauq_dgp_policy_json(dgp, TAUQ_POLICY_EVALUATION, &mut pol),
            TauqStatus::Ok
        );
        let pol = CString::new(take_string(pol)).unwrap();
        let mut model = ptr::null_mut();
        assert_eq!(
            tauq_evaluate(ds, pol.as_ptr(), ptr::null(), &mut model),
            TauqStatus::Ok
        );
        let s = [0.0, 0.0];
        let mut v = 0.0;
        assert_eq!(
            tauq_model_contrast(model, 0, s.as_ptr(), 1, 1, &mut v),
            TauqStatus::InvalidArgument
        );
        assert_eq!(
            tauq_model_contrast(model, 1, s.as_ptr(), 2, 1, &mut v),
            TauqStatus::InvalidArgument
        );
        assert_eq!(
            tauq_model_contrast(model, 1, s.as_ptr(), 1, 2, &mut v),
            TauqStatus::InvalidArgument
        );
        assert_eq!(
            tauq_model_contrast(model, 1, ptr::null(), 1, 1, &mut v),
            TauqStatus::NullPointer
        );
        tauq_model_free(model);
        tauq_dataset_free(ds);
        tauq_dgp_free(dgp);
    }
}

#[test]
fn free_functions_accept_null() {
    unsafe {
        tauq_dgp_free(ptr::null_mut());
        tauq_dataset_free(ptr::null_mut());
        tauq_model_free(ptr::null_mut());
        tauq_string_free(ptr::null_mut());
        assert_eq!(tauq_dataset_len(ptr::null()), 0);
    }
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/tauq.h");
    let text = std::fs::read_to_string(header).unwrap();
    for f in [
        "tauq_evaluate",
        "tauq_optimize",
        "tauq_model_contrast",
        "tauq_last_error",
        "TAUQ_STATUS_OK",
    ] {
        assert!(text.contains(f), "header lacks {f}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{header}\"\nint main(void) {{ TauqDgp *d = 0; return tauq_dgp_from_kind(\"one-d-validation\", 1, &d) == TAUQ_STATUS_OK ? 0 : 1; }}\n"
        ),
    )
    .unwrap();
    match std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"])
        .arg(&src)
        .output()
    {
        Ok(out) => assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        ),
        Err(_) => eprintln!("no C compiler; skipped syntax check"),
    }
}
