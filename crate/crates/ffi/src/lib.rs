//! C ABI over the imitator, the rotated-box metrics and the closed loop.
//!
//! Conventions: every fallible call returns an [`ImsStatus`]; on failure the
//! message is available from [`ims_last_error_message`] on the same thread.
//! Strings returned through `out` pointers are owned by the caller and must
//! be released with [`ims_string_free`]. Handles are released with their
//! `_free` function; passing NULL to any `_free` is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use imitsim::detections::{Detection, SceneDetections};
use imitsim::imitator::Imitator;
use imitsim::metrics::{evaluate, iou_rotated};
use imitsim::raster::{GridSpec, PosEncSpec};
use imitsim::scene::{OrientedBox, SceneState};
use imitsim::simloop::{corridor_scenario, Episode, ImitatorPerception, Perception, SimConfig, Terminal};
use imitsim::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Validation = 5,
    Shape = 6,
    NonFinite = 7,
    Checkpoint = 8,
    Config = 9,
    Other = 10,
    Panic = 11,
}

/// Episode state after a step.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImsTerminal {
    Running = 0,
    Collision = 1,
    Goal = 2,
    Horizon = 3,
    PerceptionError = 4,
}

/// Oriented box in meters and radians; `l` runs along `yaw`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImsBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub l: f64,
    pub yaw: f64,
}

/// Loaded imitator plus the grid it perceives on.
pub struct ImsImitator {
    perception: ImitatorPerception,
    grid: GridSpec,
    calls: u64,
}

/// One closed-loop episode driven by caller-supplied detections.
pub struct ImsSim {
    episode: Episode,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(ImsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Io { .. } => ImsStatus::Io,
            Error::Parse { .. } => ImsStatus::Parse,
            Error::Validation { .. } | Error::SceneMismatch(_) => ImsStatus::Validation,
            Error::Shape(_) => ImsStatus::Shape,
            Error::NonFinite(_) => ImsStatus::NonFinite,
            Error::Checkpoint(_) => ImsStatus::Checkpoint,
            Error::Config(_) => ImsStatus::Config,
            _ => ImsStatus::Other,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: ImsStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

/// Runs `f`, converting errors and panics into a status and a message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ImsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            ImsStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ImsStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(ImsStatus::NullPointer, format!("{what} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(ImsStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

fn parse<T: serde::de::DeserializeOwned>(s: &str, what: &str) -> Result<T, Failure> {
    serde_json::from_str(s).map_err(|e| fail(ImsStatus::Parse, format!("{what}: {e}")))
}

unsafe fn put_string(out: *mut *mut c_char, value: &impl serde::Serialize) -> Result<(), Failure> {
    let s = serde_json::to_string(value).map_err(|e| fail(ImsStatus::Other, e.to_string()))?;
    let c = CString::new(s).map_err(|e| fail(ImsStatus::Other, e.to_string()))?;
    *out = c.into_raw();
    Ok(())
}

fn check_out<T>(out: *mut T) -> Result<(), Failure> {
    if out.is_null() {
        Err(fail(ImsStatus::NullPointer, "output pointer is NULL"))
    } else {
        Ok(())
    }
}

fn parse_lines(s: &str, what: &str) -> Result<Vec<SceneDetections>, Failure> {
    let mut rows = Vec::new();
    for (i, line) in s.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: SceneDetections = parse(line, &format!("{what} line {}", i + 1))?;
        for (k, d) in row.dets.iter().enumerate() {
            d.validate(&format!("{what} line {}: dets[{k}]", i + 1))?;
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn ims_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be NULL or a pointer obtained from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn ims_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Rotated-box IoU.
///
/// # Safety
/// `a`, `b` and `out` must be NULL or valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ims_iou_rotated(a: *const ImsBox, b: *const ImsBox, out: *mut f64) -> ImsStatus {
    guard(|| {
        if a.is_null() || b.is_null() {
            return Err(fail(ImsStatus::NullPointer, "box is NULL"));
        }
        check_out(out)?;
        let to_box = |x: &ImsBox| OrientedBox::new(x.cx, x.cy, x.w, x.l, x.yaw);
        let (ba, bb) = (to_box(&*a), to_box(&*b));
        ba.validate("a")?;
        bb.validate("b")?;
        *out = iou_rotated(&ba, &bb);
        Ok(())
    })
}

/// Scores predictions against targets, both as detection lines
/// (`{"scene_id":..,"dets":[..]}` per line). Writes the report as JSON.
///
/// # Safety
/// String arguments must be NULL or NUL-terminated; `out_json` must be
/// NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn ims_evaluate(
    preds_jsonl: *const c_char,
    targets_jsonl: *const c_char,
    fixed_threshold: f64,
    out_json: *mut *mut c_char,
) -> ImsStatus {
    guard(|| {
        check_out(out_json)?;
        let preds = parse_lines(text(preds_jsonl, "preds")?, "preds")?;
        let targets = parse_lines(text(targets_jsonl, "targets")?, "targets")?;
        if !(0.0..=1.0).contains(&fixed_threshold) {
            return Err(fail(ImsStatus::Validation, "fixed_threshold must lie in [0, 1]"));
        }
        put_string(out_json, &evaluate(&preds, &targets, fixed_threshold)?)
    })
}

/// Loads a checkpoint. `grid_json` may be NULL for the default grid.
///
/// # Safety
/// `path` must be NUL-terminated; `grid_json` NULL or NUL-terminated; `out`
/// NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn ims_imitator_load(
    path: *const c_char,
    grid_json: *const c_char,
    out: *mut *mut ImsImitator,
) -> ImsStatus {
    guard(|| {
        check_out(out)?;
        let path = text(path, "path")?;
        let grid: GridSpec = if grid_json.is_null() {
            GridSpec::default()
        } else {
            parse(text(grid_json, "grid")?, "grid")?
        };
        grid.validate()?;
        let (model, _) = Imitator::load(Path::new(path))?;
        model.config.check_grid(&grid)?;
        let d_model = model
            .config
            .in_channels
            .checked_sub(4)
            .filter(|&d| d > 0 && d % 2 == 0)
            .ok_or_else(|| fail(ImsStatus::Checkpoint, "checkpoint input channels do not fit 4 + d_model"))?;
        let handle = ImsImitator {
            perception: ImitatorPerception {
                model,
                pos_enc: PosEncSpec { d_model },
                score_threshold: None,
            },
            grid,
            calls: 0,
        };
        *out = Box::into_raw(Box::new(handle));
        Ok(())
    })
}

/// Runtime score threshold of a loaded model.
///
/// # Safety
/// `h` and `out` must be NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn ims_imitator_score_threshold(h: *const ImsImitator, out: *mut f64) -> ImsStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| fail(ImsStatus::NullPointer, "handle is NULL"))?;
        check_out(out)?;
        *out = h.perception.score_threshold.unwrap_or(h.perception.model.config.score_threshold);
        Ok(())
    })
}

/// Overrides the runtime score threshold.
///
/// # Safety
/// `h` must be NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn ims_imitator_set_score_threshold(h: *mut ImsImitator, threshold: f64) -> ImsStatus {
    guard(|| {
        let h = h.as_mut().ok_or_else(|| fail(ImsStatus::NullPointer, "handle is NULL"))?;
        if !(0.0..=1.0).contains(&threshold) {
            return Err(fail(ImsStatus::Validation, "threshold must lie in [0, 1]"));
        }
        h.perception.score_threshold = Some(threshold);
        Ok(())
    })
}

/// Detections for an ego-frame scene (JSON scene record), written as a JSON
/// array of `{cx, cy, w, l, yaw, score}`.
///
/// # Safety
/// `h` NULL or valid; `scene_json` NUL-terminated; `out_json` NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn ims_imitator_perceive(
    h: *mut ImsImitator,
    scene_json: *const c_char,
    out_json: *mut *mut c_char,
) -> ImsStatus {
    guard(|| {
        let h = h.as_mut().ok_or_else(|| fail(ImsStatus::NullPointer, "handle is NULL"))?;
        check_out(out_json)?;
        let scene: SceneState = parse(text(scene_json, "scene")?, "scene")?;
        scene.validate()?;
        let dets = h.perception.perceive(&scene, &h.grid, h.calls)?;
        h.calls += 1;
        put_string(out_json, &dets)
    })
}

/// # Safety
/// `h` must be NULL or a handle from `ims_imitator_load`, freed once.
#[no_mangle]
pub unsafe extern "C" fn ims_imitator_free(h: *mut ImsImitator) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Starts a corridor episode. `config_json` may be NULL for defaults.
///
/// # Safety
/// `config_json` NULL or NUL-terminated; `out` NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn ims_sim_create(
    config_json: *const c_char,
    seed: u64,
    episode_id: u64,
    out: *mut *mut ImsSim,
) -> ImsStatus {
    guard(|| {
        check_out(out)?;
        let cfg: SimConfig = if config_json.is_null() {
            SimConfig::default()
        } else {
            parse(text(config_json, "config")?, "config")?
        };
        cfg.validate()?;
        let initial = corridor_scenario(seed, episode_id, &cfg);
        *out = Box::into_raw(Box::new(ImsSim {
            episode: Episode::new(initial, cfg),
        }));
        Ok(())
    })
}

/// Current world in the ego frame, as a JSON scene record.
///
/// # Safety
/// `h` and `out_json` must be NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn ims_sim_ego_scene(h: *const ImsSim, out_json: *mut *mut c_char) -> ImsStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| fail(ImsStatus::NullPointer, "handle is NULL"))?;
        check_out(out_json)?;
        put_string(out_json, &h.episode.ego_scene())
    })
}

fn terminal_code(t: Option<&Terminal>) -> ImsTerminal {
    match t {
        None => ImsTerminal::Running,
        Some(Terminal::Collision) => ImsTerminal::Collision,
        Some(Terminal::Goal) => ImsTerminal::Goal,
        Some(Terminal::Horizon) => ImsTerminal::Horizon,
        Some(Terminal::PerceptionError(_)) => ImsTerminal::PerceptionError,
    }
}

/// Advances one tick using ego-frame detections (JSON array of
/// `{cx, cy, w, l, yaw, score}`). A step after the end is a no-op.
///
/// # Safety
/// `h` NULL or valid; `dets_json` NUL-terminated; `out_terminal` NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn ims_sim_step(
    h: *mut ImsSim,
    dets_json: *const c_char,
    out_terminal: *mut ImsTerminal,
) -> ImsStatus {
    guard(|| {
        let h = h.as_mut().ok_or_else(|| fail(ImsStatus::NullPointer, "handle is NULL"))?;
        check_out(out_terminal)?;
        let dets: Vec<Detection> = parse(text(dets_json, "dets")?, "dets")?;
        for (k, d) in dets.iter().enumerate() {
            d.validate(&format!("dets[{k}]"))?;
        }
        *out_terminal = terminal_code(h.episode.advance(dets));
        Ok(())
    })
}

/// Distance travelled, speed and step count so far.
///
/// # Safety
/// `h` must be NULL or valid; each output NULL (skipped) or valid.
#[no_mangle]
pub unsafe extern "C" fn ims_sim_progress(
    h: *const ImsSim,
    out_distance: *mut f64,
    out_speed: *mut f64,
    out_steps: *mut u64,
) -> ImsStatus {
    guard(|| {
        let h = h.as_ref().ok_or_else(|| fail(ImsStatus::NullPointer, "handle is NULL"))?;
        if let Some(d) = out_distance.as_mut() {
            *d = h.episode.distance();
        }
        if let Some(s) = out_speed.as_mut() {
            *s = h.episode.state().speed;
        }
        if let Some(n) = out_steps.as_mut() {
            *n = h.episode.step_index() as u64;
        }
        Ok(())
    })
}

/// # Safety
/// `h` must be NULL or a handle from `ims_sim_create`, freed once.
#[no_mangle]
pub unsafe extern "C" fn ims_sim_free(h: *mut ImsSim) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Library version, static string.
#[no_mangle]
pub extern "C" fn ims_version() -> *const c_char {
    static V: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => c"",
    };
    V.as_ptr()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_maps_error_kinds() {
        assert_eq!(Failure::from(Error::Config("x".into())).0, ImsStatus::Config);
        assert_eq!(Failure::from(Error::validation("f", "m")).0, ImsStatus::Validation);
        assert_eq!(Failure::from(Error::Fit("x".into())).0, ImsStatus::Other);
    }

    #[test]
    fn guard_records_and_clears_messages() {
        assert_eq!(guard(|| Err(fail(ImsStatus::Parse, "bad"))), ImsStatus::Parse);
        let msg = unsafe { CStr::from_ptr(ims_last_error_message()) };
        assert_eq!(msg.to_str().unwrap(), "bad");
        assert_eq!(guard(|| Ok(())), ImsStatus::Ok);
        let msg = unsafe { CStr::from_ptr(ims_last_error_message()) };
        assert!(msg.to_bytes().is_empty());
        assert_eq!(guard(|| panic!("boom")), ImsStatus::Panic);
    }

    #[test]
    fn null_handles_are_rejected() {
        let mut out = std::ptr::null_mut();
        assert_eq!(unsafe { ims_imitator_perceive(std::ptr::null_mut(), c"{}".as_ptr(), &mut out) }, ImsStatus::NullPointer);
        unsafe {
            ims_imitator_free(std::ptr::null_mut());
            ims_sim_free(std::ptr::null_mut());
            ims_string_free(std::ptr::null_mut());
        }
    }
}
