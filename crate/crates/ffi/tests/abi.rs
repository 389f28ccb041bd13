use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use imitsim::baselines::{annotation_detections, visible_annotations};
use imitsim::detections::{Detection, SceneDetections};
use imitsim::imitator::{Imitator, ImitatorConfig};
use imitsim::metrics::{iou_rotated, EvalReport};
use imitsim::raster::{GridSpec, PosEncSpec};
use imitsim::scene::{generate_scenes, to_ego_frame, GeneratorConfig, OrientedBox, SceneState};
use imitsim::simloop::{corridor_scenario, run_episode, AnnotationPerception, ImitatorPerception, Perception, SimConfig};
use imitsim_ffi::*;

fn take(p: *mut std::ffi::c_char) -> String {
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string();
    unsafe { ims_string_free(p) };
    s
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(ims_last_error_message()) }.to_str().unwrap().to_string()
}

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

#[test]
fn iou_matches_library() {
    let a = ImsBox { cx: 0.0, cy: 0.0, w: 2.0, l: 4.0, yaw: 0.3 };
    let b = ImsBox { cx: 1.0, cy: 0.5, w: 1.8, l: 4.5, yaw: -0.2 };
    let mut v = 0.0;
    assert_eq!(unsafe { ims_iou_rotated(&a, &b, &mut v) }, ImsStatus::Ok);
    let want = iou_rotated(&OrientedBox::new(0.0, 0.0, 2.0, 4.0, 0.3), &OrientedBox::new(1.0, 0.5, 1.8, 4.5, -0.2));
    assert_eq!(v, want);
    let bad = ImsBox { w: -1.0, ..a };
    assert_eq!(unsafe { ims_iou_rotated(&a, &bad, &mut v) }, ImsStatus::Validation);
    assert!(last_error().contains("b."), "{}", last_error());
    assert_eq!(unsafe { ims_iou_rotated(ptr::null(), &b, &mut v) }, ImsStatus::NullPointer);
}

#[test]
fn evaluate_self_is_perfect_and_errors_are_reported() {
    let rows = [
        SceneDetections { scene_id: 0, dets: vec![Detection::new(OrientedBox::new(5.0, 0.0, 2.0, 4.0, 0.0), 0.9)] },
        SceneDetections { scene_id: 1, dets: vec![Detection::new(OrientedBox::new(9.0, 3.0, 2.0, 4.0, 0.1), 0.8)] },
    ];
    let text: String = rows.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
    let c = cstr(&text);
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { ims_evaluate(c.as_ptr(), c.as_ptr(), 0.5, &mut out) }, ImsStatus::Ok);
    let rep: EvalReport = serde_json::from_str(&take(out)).unwrap();
    assert_eq!((rep.map_050, rep.maxr_050, rep.n_scenes), (1.0, 1.0, 2));

    let broken = cstr("{not json");
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { ims_evaluate(broken.as_ptr(), c.as_ptr(), 0.5, &mut out) }, ImsStatus::Parse);
    assert!(out.is_null());
    assert!(last_error().starts_with("preds line 1"));
    let one = cstr(&serde_json::to_string(&rows[0]).unwrap());
    assert_eq!(unsafe { ims_evaluate(one.as_ptr(), c.as_ptr(), 0.5, &mut out) }, ImsStatus::Validation);
}

#[test]
fn imitator_handle_matches_direct_inference() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let cfg = ImitatorConfig {
        in_channels: 6,
        widths: vec![4, 8],
        downsample: 2,
        score_threshold: 0.4,
        ..Default::default()
    };
    let model = Imitator::new(cfg, 5).unwrap();
    model.save(&path, serde_json::Value::Null).unwrap();
    let grid = GridSpec::bottom_anchored(40, 48, 1.0);

    let p = cstr(path.to_str().unwrap());
    let g = cstr(&serde_json::to_string(&grid).unwrap());
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { ims_imitator_load(p.as_ptr(), g.as_ptr(), &mut h) }, ImsStatus::Ok);
    let mut thr = 0.0;
    assert_eq!(unsafe { ims_imitator_score_threshold(h, &mut thr) }, ImsStatus::Ok);
    assert_eq!(thr, 0.4);

    let scenes = generate_scenes(3, &GeneratorConfig { n_scenes: 2, ..Default::default() }).unwrap();
    let mut direct = ImitatorPerception { model, pos_enc: PosEncSpec { d_model: 2 }, score_threshold: None };
    for s in &scenes {
        let ego = to_ego_frame(s);
        let js = cstr(&serde_json::to_string(&ego).unwrap());
        let mut out = ptr::null_mut();
        assert_eq!(unsafe { ims_imitator_perceive(h, js.as_ptr(), &mut out) }, ImsStatus::Ok);
        let got: Vec<Detection> = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(got, direct.perceive(&ego, &grid, 0).unwrap());
    }
    assert_eq!(unsafe { ims_imitator_set_score_threshold(h, 1.5) }, ImsStatus::Validation);
    let bad = cstr("{\"t\": 0}");
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { ims_imitator_perceive(h, bad.as_ptr(), &mut out) }, ImsStatus::Parse);
    unsafe { ims_imitator_free(h) };

    // a missing file does not load
    let missing = cstr(dir.path().join("nope.ckpt").to_str().unwrap());
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { ims_imitator_load(missing.as_ptr(), ptr::null(), &mut h) }, ImsStatus::Io);
    assert!(h.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn stepped_episode_matches_batch_runner() {
    let cfg = SimConfig { horizon: 150, ..Default::default() };
    let grid = GridSpec::desk();
    let want = run_episode(&corridor_scenario(4, 2, &cfg), &mut AnnotationPerception, &grid, &cfg, 2);

    let c = cstr(&serde_json::to_string(&cfg).unwrap());
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { ims_sim_create(c.as_ptr(), 4, 2, &mut h) }, ImsStatus::Ok);
    let mut term = ImsTerminal::Running;
    let mut steps = 0;
    while term == ImsTerminal::Running {
        let mut out = ptr::null_mut();
        assert_eq!(unsafe { ims_sim_ego_scene(h, &mut out) }, ImsStatus::Ok);
        let scene: SceneState = serde_json::from_str(&take(out)).unwrap();
        let dets = annotation_detections(&visible_annotations(&scene, &grid));
        let js = cstr(&serde_json::to_string(&dets).unwrap());
        assert_eq!(unsafe { ims_sim_step(h, js.as_ptr(), &mut term) }, ImsStatus::Ok);
        steps += 1;
    }
    let (mut dist, mut speed, mut n) = (0.0, 0.0, 0u64);
    assert_eq!(unsafe { ims_sim_progress(h, &mut dist, &mut speed, &mut n) }, ImsStatus::Ok);
    assert_eq!(dist, want.distance);
    assert_eq!((n as usize, steps), (want.steps.len(), want.steps.len()));
    assert!(speed >= 0.0);
    // steps after the end change nothing
    let empty = cstr("[]");
    assert_eq!(unsafe { ims_sim_step(h, empty.as_ptr(), &mut term) }, ImsStatus::Ok);
    assert_ne!(term, ImsTerminal::Running);
    assert_eq!(unsafe { ims_sim_progress(h, ptr::null_mut(), ptr::null_mut(), &mut n) }, ImsStatus::Ok);
    assert_eq!(n as usize, want.steps.len());
    unsafe { ims_sim_free(h) };

    let bad = cstr("{\"dt\": -1}");
    assert_eq!(unsafe { ims_sim_create(bad.as_ptr(), 0, 0, &mut h) }, ImsStatus::Validation);
}

#[test]
fn header_declares_the_abi_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/imitsim.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "ims_last_error_message",
        "ims_string_free",
        "ims_iou_rotated",
        "ims_evaluate",
        "ims_imitator_load",
        "ims_imitator_perceive",
        "ims_imitator_free",
        "ims_sim_create",
        "ims_sim_step",
        "ims_sim_free",
        "typedef struct ImsImitator ImsImitator",
        "IMS_STATUS_OK = 0",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"]).arg(&header).output() else {
        eprintln!("no C compiler; syntax check skipped");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
