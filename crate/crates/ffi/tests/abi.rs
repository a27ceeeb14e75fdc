use std::ffi::{c_void, CStr, CString};
use std::ptr;

use simattr_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(simattr_last_error()) }
        .to_string_lossy()
        .into_owned()
}

struct Handle(*mut SimattrEmbeddings);

impl Drop for Handle {
    fn drop(&mut self) {
        unsafe { simattr_embeddings_free(self.0) };
    }
}

fn generated() -> Handle {
    let mut h = ptr::null_mut();
    let st = unsafe { simattr_embeddings_generate(3, 10, 4, 0.5, 4.0, 7, &mut h) };
    assert_eq!(st, SimattrStatus::Ok);
    Handle(h)
}

#[test]
fn generate_save_load_roundtrip() {
    let h = generated();
    unsafe {
        assert_eq!(simattr_embeddings_n(h.0), 30);
        assert_eq!(simattr_embeddings_d(h.0), 4);
        assert_eq!(simattr_embeddings_num_classes(h.0), 3);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("s.atrb").to_str().unwrap()).unwrap();
    unsafe {
        assert_eq!(
            simattr_embeddings_save(h.0, path.as_ptr()),
            SimattrStatus::Ok
        );
        let mut back = ptr::null_mut();
        assert_eq!(
            simattr_embeddings_load(path.as_ptr(), &mut back),
            SimattrStatus::Ok
        );
        let back = Handle(back);
        assert_eq!(simattr_embeddings_n(back.0), 30);
    }
}

#[test]
fn load_errors_map_to_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = CString::new(dir.path().join("nope").to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(
            simattr_embeddings_load(missing.as_ptr(), &mut h),
            SimattrStatus::Io
        );
        assert!(h.is_null());
        assert!(!last_error().is_empty());

        let junk = dir.path().join("junk");
        std::fs::write(&junk, b"XXXXjunkjunkjunkjunkjunkjunk").unwrap();
        let junk = CString::new(junk.to_str().unwrap()).unwrap();
        assert_eq!(
            simattr_embeddings_load(junk.as_ptr(), &mut h),
            SimattrStatus::Format
        );

        assert_eq!(
            simattr_embeddings_load(ptr::null(), &mut h),
            SimattrStatus::NullPointer
        );
        assert_eq!(simattr_embeddings_n(ptr::null()), 0);
        simattr_embeddings_free(ptr::null_mut());
    }
}

#[test]
fn new_from_caller_memory_and_l2_scores() {
    let features = [0.0f32, 0.0, 3.0, 4.0, 1.0, 0.0];
    let labels = [0u32, 0, 1];
    let ids = [10u64, 11, 12];
    let mut h = ptr::null_mut();
    unsafe {
        let st = simattr_embeddings_new(
            features.as_ptr(),
            labels.as_ptr(),
            ids.as_ptr(),
            3,
            2,
            2,
            &mut h,
        );
        assert_eq!(st, SimattrStatus::Ok);
    }
    let h = Handle(h);
    let target = [0.0f32, 0.0];
    let mut out = [0.0f64; 3];
    unsafe {
        let st = simattr_scores(
            h.0,
            SimattrMethod::L2,
            target.as_ptr(),
            2,
            0,
            99,
            0,
            out.as_mut_ptr(),
            3,
        );
        assert_eq!(st, SimattrStatus::Ok);
    }
    assert_eq!(out, [0.0, -5.0, -1.0]);

    let mut small = [0.0f64; 2];
    unsafe {
        let st = simattr_scores(
            h.0,
            SimattrMethod::L2,
            target.as_ptr(),
            2,
            0,
            99,
            0,
            small.as_mut_ptr(),
            2,
        );
        assert_eq!(st, SimattrStatus::BufferTooSmall);
        let st = simattr_scores(
            h.0,
            SimattrMethod::L2,
            target.as_ptr(),
            3,
            0,
            99,
            0,
            out.as_mut_ptr(),
            3,
        );
        assert_eq!(st, SimattrStatus::InvalidArgument);
    }
}

#[test]
fn duplicate_ids_rejected() {
    let features = [0.0f32, 1.0];
    let labels = [0u32, 1];
    let ids = [5u64, 5];
    let mut h = ptr::null_mut();
    let st = unsafe {
        simattr_embeddings_new(
            features.as_ptr(),
            labels.as_ptr(),
            ids.as_ptr(),
            2,
            1,
            2,
            &mut h,
        )
    };
    assert_eq!(st, SimattrStatus::InvalidArgument);
    assert!(h.is_null());
}

#[test]
fn rank_same_class_and_all() {
    let h = generated();
    let n = unsafe { simattr_embeddings_n(h.0) };
    let scores: Vec<f64> = (0..n).map(|i| -(i as f64)).collect();
    let mut out = vec![0usize; 5];
    let mut len = 0usize;
    unsafe {
        let st = simattr_rank(
            h.0,
            scores.as_ptr(),
            n,
            1,
            SimattrFilter::SameClass,
            5,
            out.as_mut_ptr(),
            5,
            &mut len,
        );
        assert_eq!(st, SimattrStatus::Ok);
        assert_eq!(&out[..len], &[10, 11, 12, 13, 14]);
        let st = simattr_rank(
            h.0,
            scores.as_ptr(),
            n,
            1,
            SimattrFilter::All,
            3,
            out.as_mut_ptr(),
            5,
            &mut len,
        );
        assert_eq!(st, SimattrStatus::Ok);
        assert_eq!(&out[..len], &[0, 1, 2]);
        let st = simattr_rank(
            h.0,
            scores.as_ptr(),
            n,
            1,
            SimattrFilter::All,
            5,
            out.as_mut_ptr(),
            2,
            &mut len,
        );
        assert_eq!(st, SimattrStatus::BufferTooSmall);
        assert_eq!(len, 5);
    }
}

#[test]
fn spearman_and_auc() {
    let a = [1.0, 1.0, 2.0];
    let b = [1.0, 2.0, 3.0];
    let (mut rho, mut deg) = (0.0, 7);
    unsafe {
        assert_eq!(
            simattr_spearman(a.as_ptr(), b.as_ptr(), 3, &mut rho, &mut deg),
            SimattrStatus::Ok
        );
    }
    assert!((rho - 1.5 / 3f64.sqrt()).abs() < 1e-12);
    assert_eq!(deg, 0);
    unsafe {
        assert_eq!(
            simattr_spearman(a.as_ptr(), a.as_ptr(), 2, &mut rho, &mut deg),
            SimattrStatus::Ok
        );
    }
    assert_eq!((rho, deg), (0.0, 1));

    let supports = [10i64, 20, -1, -1];
    let mut auc = 0.0;
    unsafe {
        assert_eq!(
            simattr_cdf_auc(supports.as_ptr(), 4, 40, &mut auc),
            SimattrStatus::Ok
        );
    }
    assert!((auc - 0.3125).abs() < 1e-15);
    let bad = [41i64];
    unsafe {
        assert_eq!(
            simattr_cdf_auc(bad.as_ptr(), 1, 40, &mut auc),
            SimattrStatus::InvalidArgument
        );
        assert_eq!(
            simattr_cdf_auc(supports.as_ptr(), 0, 40, &mut auc),
            SimattrStatus::InvalidArgument
        );
    }
}

struct Threshold {
    at: usize,
    calls: Vec<usize>,
}

unsafe extern "C" fn threshold_probe(user: *mut c_void, m: usize) -> f64 {
    let t = &mut *(user as *mut Threshold);
    t.calls.push(m);
    if m >= t.at {
        0.0
    } else {
        1.0
    }
}

unsafe extern "C" fn broken_probe(_: *mut c_void, _: usize) -> f64 {
    -1.0
}

#[test]
fn support_through_callback() {
    let mut t = Threshold {
        at: 137,
        calls: vec![],
    };
    let (mut support, mut used) = (0i64, 0usize);
    let st = unsafe {
        simattr_compute_support(
            Some(threshold_probe),
            &mut t as *mut Threshold as *mut c_void,
            1280,
            7,
            &mut support,
            &mut used,
        )
    };
    assert_eq!(st, SimattrStatus::Ok);
    assert_eq!(support, 140);
    assert_eq!(used, 8);
    assert_eq!(t.calls, vec![1280, 640, 320, 160, 80, 120, 140, 130]);

    let st = unsafe {
        simattr_compute_support(
            Some(broken_probe),
            ptr::null_mut(),
            10,
            3,
            &mut support,
            &mut used,
        )
    };
    assert_eq!(st, SimattrStatus::Compute);
    assert!(last_error().contains("-1"));

    let st =
        unsafe { simattr_compute_support(None, ptr::null_mut(), 10, 3, &mut support, &mut used) };
    assert_eq!(st, SimattrStatus::NullPointer);
    let st = unsafe {
        simattr_compute_support(
            Some(broken_probe),
            ptr::null_mut(),
            10,
            0,
            &mut support,
            &mut used,
        )
    };
    assert_eq!(st, SimattrStatus::InvalidArgument);
}

#[test]
fn success_clears_last_error() {
    let mut h = ptr::null_mut();
    unsafe { simattr_embeddings_load(ptr::null(), &mut h) };
    assert!(!last_error().is_empty());
    let _h = generated();
    assert!(last_error().is_empty());
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/simattr.h");
    for name in [
        "simattr_last_error",
        "simattr_embeddings_load",
        "simattr_embeddings_save",
        "simattr_embeddings_new",
        "simattr_embeddings_generate",
        "simattr_embeddings_free",
        "simattr_embeddings_n",
        "simattr_embeddings_d",
        "simattr_embeddings_num_classes",
        "simattr_scores",
        "simattr_rank",
        "simattr_spearman",
        "simattr_cdf_auc",
        "simattr_compute_support",
        "simattr_version",
        "SIMATTR_STATUS_BUFFER_TOO_SMALL",
        "typedef struct SimattrEmbeddings SimattrEmbeddings",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
    let v = unsafe { CStr::from_ptr(simattr_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
