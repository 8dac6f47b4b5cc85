use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use smac_seg_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    unsafe { smac_last_error(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn scene(seed: u64, k: usize) -> (Vec<f32>, Vec<u32>, Vec<u32>) {
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { smac_scene_generate(seed, k, &mut s) }, SmacStatus::Ok);
    let n = unsafe { smac_scene_len(s) };
    let (mut p, mut sem, mut inst) = (vec![0f32; n * 4], vec![0u32; n], vec![0u32; n]);
    assert_eq!(
        unsafe { smac_scene_copy(s, p.as_mut_ptr(), sem.as_mut_ptr(), inst.as_mut_ptr()) },
        SmacStatus::Ok
    );
    unsafe { smac_scene_free(s) };
    (p, sem, inst)
}

#[test]
fn version_is_nonempty() {
    let v = unsafe { CStr::from_ptr(smac_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn segment_and_evaluate_synthetic_scene() {
    let (points, sem, inst) = scene(3, 12);
    let n = sem.len();

    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { smac_config_new(&mut cfg) }, SmacStatus::Ok);
    let mut seg = ptr::null_mut();
    assert_eq!(unsafe { smac_segmenter_new(cfg, &mut seg) }, SmacStatus::Ok);

    // Offsets pointing every thing point at its instance mean.
    let mut sums = std::collections::HashMap::<u32, (f64, f64, f64)>::new();
    for i in 0..n {
        if inst[i] > 0 {
            let e = sums.entry(inst[i]).or_default();
            e.0 += points[4 * i] as f64;
            e.1 += points[4 * i + 1] as f64;
            e.2 += 1.0;
        }
    }
    let mut offsets = vec![0f32; n * 2];
    for i in 0..n {
        if let Some(&(x, y, c)) = sums.get(&inst[i]) {
            offsets[2 * i] = (x / c) as f32 - points[4 * i];
            offsets[2 * i + 1] = (y / c) as f32 - points[4 * i + 1];
        }
    }

    let (mut ps, mut pi) = (vec![0u32; n], vec![0u32; n]);
    let status = unsafe {
        smac_segmenter_run(
            seg,
            points.as_ptr(),
            sem.as_ptr(),
            offsets.as_ptr(),
            n,
            ps.as_mut_ptr(),
            pi.as_mut_ptr(),
        )
    };
    assert_eq!(status, SmacStatus::Ok, "{}", last_error());

    let mut ev = ptr::null_mut();
    assert_eq!(unsafe { smac_evaluator_new(ptr::null(), 20, &mut ev) }, SmacStatus::Ok);
    let status = unsafe { smac_evaluator_add(ev, sem.as_ptr(), inst.as_ptr(), ps.as_ptr(), pi.as_ptr(), n) };
    assert_eq!(status, SmacStatus::Ok);
    let mut scores = SmacScores::default();
    assert_eq!(unsafe { smac_evaluator_scores(ev, &mut scores) }, SmacStatus::Ok);
    assert_eq!(scores.pq_th, 1.0);
    assert_eq!(scores.rq_th, 1.0);

    unsafe {
        smac_evaluator_free(ev);
        smac_segmenter_free(seg);
        smac_config_free(cfg);
    }
}

#[test]
fn config_errors_map_to_codes() {
    let mut cfg = ptr::null_mut();
    unsafe { smac_config_new(&mut cfg) };
    let key = CString::new("cluster.radius").unwrap();
    let bad = CString::new("abc").unwrap();
    assert_eq!(
        unsafe { smac_config_set(cfg, key.as_ptr(), bad.as_ptr()) },
        SmacStatus::Config
    );
    assert!(last_error().contains("cluster.radius"));
    let good = CString::new("0.8").unwrap();
    assert_eq!(
        unsafe { smac_config_set(cfg, key.as_ptr(), good.as_ptr()) },
        SmacStatus::Ok
    );
    assert_eq!(last_error(), "");

    let zero = CString::new("-1").unwrap();
    unsafe { smac_config_set(cfg, key.as_ptr(), zero.as_ptr()) };
    let mut seg = ptr::null_mut();
    assert_eq!(unsafe { smac_segmenter_new(cfg, &mut seg) }, SmacStatus::Config);
    assert!(seg.is_null());
    unsafe { smac_config_free(cfg) };

    let missing = CString::new("/nonexistent/smac.cfg").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { smac_config_load(missing.as_ptr(), &mut cfg) }, SmacStatus::Io);
}

#[test]
fn null_pointers_are_rejected() {
    assert_eq!(unsafe { smac_config_new(ptr::null_mut()) }, SmacStatus::NullPointer);
    let mut s = SmacScores::default();
    assert_eq!(
        unsafe { smac_evaluator_scores(ptr::null(), &mut s) },
        SmacStatus::NullPointer
    );
    assert_eq!(unsafe { smac_scene_len(ptr::null()) }, 0);
    unsafe {
        smac_config_free(ptr::null_mut());
        smac_scene_free(ptr::null_mut());
    }
}

#[test]
fn label_words_round_trip() {
    let sem = [0u32, 1, 9, 0xFFFF];
    let inst = [0u32, 7, 0, 0xFFFF];
    let mut words = [0u32; 4];
    assert_eq!(
        unsafe { smac_labels_encode(sem.as_ptr(), inst.as_ptr(), 4, words.as_mut_ptr()) },
        SmacStatus::Ok
    );
    assert_eq!(words[1], 1 | (7 << 16));
    let (mut s2, mut i2) = ([0u32; 4], [0u32; 4]);
    assert_eq!(
        unsafe { smac_labels_decode(words.as_ptr(), 4, s2.as_mut_ptr(), i2.as_mut_ptr()) },
        SmacStatus::Ok
    );
    assert_eq!((s2, i2), (sem, inst));

    let big = [0x1_0000u32];
    assert_eq!(
        unsafe { smac_labels_encode(big.as_ptr(), inst.as_ptr(), 1, words.as_mut_ptr()) },
        SmacStatus::EncodingOverflow
    );
}

#[test]
fn scene_generation_is_deterministic() {
    assert_eq!(scene(11, 15), scene(11, 15));
    let mut s = ptr::null_mut();
    // 500 well-separated objects do not fit in the placement annulus.
    assert_eq!(unsafe { smac_scene_generate(1, 500, &mut s) }, SmacStatus::Packing);
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/smac_seg.h");
    let Ok(out) = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", header])
        .output()
    else {
        eprintln!("no C compiler found, skipping");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(header).unwrap();
    for sym in [
        "smac_segmenter_run",
        "smac_evaluator_add",
        "SMAC_STATUS_PANIC",
        "typedef struct SmacConfig SmacConfig",
    ] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
}
