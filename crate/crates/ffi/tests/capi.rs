use std::ffi::{c_void, CStr, CString};
use std::path::Path;
use std::ptr;

use l3unet_ffi::*;

fn last_error() -> String {
    let p = l3u_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn tensor_i8(c: usize, h: usize, w: usize, data: &[i8]) -> *mut L3uTensor {
    let mut t = ptr::null_mut();
    assert_eq!(l3u_tensor_new(L3U_DTYPE_I8, c, h, w, data.as_ptr() as *const c_void, &mut t), L3uStatus::Ok);
    t
}

unsafe fn shape(t: *const L3uTensor) -> (usize, usize, usize) {
    let (mut c, mut h, mut w) = (0, 0, 0);
    assert_eq!(l3u_tensor_shape(t, &mut c, &mut h, &mut w), L3uStatus::Ok);
    (c, h, w)
}

#[test]
fn fold_unfold_and_file_round_trip() {
    unsafe {
        let data: Vec<i8> = (0..3 * 8 * 8).map(|i| (i % 251) as i8).collect();
        let x = tensor_i8(3, 8, 8, &data);
        let mut f = ptr::null_mut();
        assert_eq!(l3u_fold(x, 4, &mut f), L3uStatus::Ok);
        assert_eq!(shape(f), (48, 2, 2));

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("f.l3ut").to_str().unwrap()).unwrap();
        assert_eq!(l3u_tensor_write(f, path.as_ptr()), L3uStatus::Ok);
        let mut g = ptr::null_mut();
        assert_eq!(l3u_tensor_read(path.as_ptr(), &mut g), L3uStatus::Ok);

        let mut u = ptr::null_mut();
        assert_eq!(l3u_unfold(g, 4, &mut u), L3uStatus::Ok);
        assert_eq!(l3u_tensor_dtype(u), L3U_DTYPE_I8);
        let back = std::slice::from_raw_parts(l3u_tensor_data(u) as *const i8, data.len());
        assert_eq!(back, &data[..]);
        for t in [x, f, g, u] {
            l3u_tensor_free(t);
        }
    }
}

#[test]
fn error_codes_and_messages() {
    unsafe {
        let x = tensor_i8(1, 6, 6, &[0; 36]);
        let mut out = ptr::null_mut();
        assert_eq!(l3u_fold(x, 4, &mut out), L3uStatus::Divisibility);
        assert!(out.is_null());
        assert!(last_error().contains("height"));
        assert_eq!(l3u_fold(ptr::null(), 2, &mut out), L3uStatus::NullPointer);
        assert_eq!(l3u_fold(x, 2, ptr::null_mut()), L3uStatus::NullPointer);
        let missing = CString::new("/nonexistent/x.l3ut").unwrap();
        assert_eq!(l3u_tensor_read(missing.as_ptr(), &mut out), L3uStatus::Io);
        assert_eq!(l3u_tensor_dtype(ptr::null()), 255);
        l3u_tensor_free(x);
        l3u_tensor_free(ptr::null_mut());
    }
}

#[test]
fn model_build_run_and_cost() {
    unsafe {
        let json = CString::new(r#"{"num_classes": 2}"#).unwrap();
        let mut m = ptr::null_mut();
        assert_eq!(l3u_model_from_json(json.as_ptr(), &mut m), L3uStatus::Ok);
        assert_eq!(l3u_model_param_count(m), 282_560);
        assert_eq!(l3u_model_randomize(m, 3), L3uStatus::Ok);

        let dir = tempfile::tempdir().unwrap();
        let wpath = CString::new(dir.path().join("w.l3uw").to_str().unwrap()).unwrap();
        assert_eq!(l3u_model_save_weights(m, wpath.as_ptr()), L3uStatus::Ok);
        let mut m2 = ptr::null_mut();
        assert_eq!(l3u_model_from_json(json.as_ptr(), &mut m2), L3uStatus::Ok);
        assert_eq!(l3u_model_load_weights(m2, wpath.as_ptr()), L3uStatus::Ok);

        let x = tensor_i8(3, 352, 352, &vec![5; 3 * 352 * 352]);
        let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(l3u_model_run(m, x, true, &mut a), L3uStatus::Ok);
        assert_eq!(l3u_model_run(m2, x, true, &mut b), L3uStatus::Ok);
        assert_eq!(shape(a), (2, 352, 352));
        let n = 2 * 352 * 352;
        assert_eq!(
            std::slice::from_raw_parts(l3u_tensor_data(a) as *const i8, n),
            std::slice::from_raw_parts(l3u_tensor_data(b) as *const i8, n)
        );

        // Float mode rejects an int8 input.
        let mut c = ptr::null_mut();
        assert_ne!(l3u_model_run(m, x, false, &mut c), L3uStatus::Ok);
        let small = tensor_i8(3, 8, 8, &[0; 192]);
        assert_eq!(l3u_model_run(m, small, true, &mut c), L3uStatus::Shape);

        let mut csv = ptr::null_mut();
        assert_eq!(l3u_model_cost_csv(m, 64, &mut csv), L3uStatus::Ok);
        let text = CStr::from_ptr(csv).to_str().unwrap().to_owned();
        l3u_string_free(csv);
        assert!(text.starts_with("name,kind,active_processors,max_macs,total_macs\n"));
        assert!(text.contains("\nstem1,Conv2d,48,"));

        let bad = CString::new(r#"{"alpha": 3}"#).unwrap();
        let mut m3 = ptr::null_mut();
        assert_ne!(l3u_model_from_json(bad.as_ptr(), &mut m3), L3uStatus::Ok);
        assert!(m3.is_null());

        for t in [x, a, b, small] {
            l3u_tensor_free(t);
        }
        l3u_model_free(m);
        l3u_model_free(m2);
    }
}

#[test]
fn confusion_worked_example() {
    unsafe {
        let mut cm = ptr::null_mut();
        assert_eq!(l3u_confusion_new(2, &mut cm), L3uStatus::Ok);
        let gt = [0u8, 0, 0, 0, 1, 1, 1, 1];
        let pred = [0u8, 0, 0, 1, 0, 1, 1, 1];
        assert_eq!(l3u_confusion_accumulate(cm, gt.as_ptr(), pred.as_ptr(), 2, 4), L3uStatus::Ok);
        let (mut acc, mut miou) = (0.0, 0.0);
        assert_eq!(l3u_confusion_metrics(cm, &mut acc, &mut miou), L3uStatus::Ok);
        assert_eq!(acc, 0.75);
        assert!((miou - 0.6).abs() < 1e-12);
        let bad = [2u8; 8];
        assert_eq!(l3u_confusion_accumulate(cm, gt.as_ptr(), bad.as_ptr(), 2, 4), L3uStatus::InvalidArgument);
        l3u_confusion_free(cm);
    }
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/l3unet.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in ["l3u_fold", "l3u_model_run", "l3u_confusion_metrics", "L3U_STATUS_DIVISIBILITY"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        format!("#include \"{}\"\nint main(void) {{ return l3u_last_error() != 0; }}\n", header.display()),
    )
    .unwrap();
    match std::process::Command::new("cc").args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"]).arg(&src).status() {
        Ok(status) => assert!(status.success(), "header does not compile"),
        Err(_) => eprintln!("no C compiler found; skipped syntax check"),
    }
}
