//! C ABI for the raycal differentiable RF ray tracer.
//!
//! All functions return a `RaycalStatus`; output values go through out
//! pointers. Handles are opaque and must be released with the matching
//! `_free` function. `raycal_last_error` returns a thread-local message
//! describing the most recent failure on the calling thread.

use raycal::ad::Tape;
use raycal::calib::{predict_taps, prepare_traced, TracedRecord};
use raycal::field::WaveformConfig;
use raycal::geom::{v3, Scene};
use raycal::params::{Checkpoint, ParamModel};
use raycal::tracer::{trace_all, PathSet, TraceConfig};
use std::cell::RefCell;
use std::ffi::{c_char, c_double, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

/// Status codes returned by every API function.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum RaycalStatus {
    /// Operation completed.
    RaycalOk = 0,
    /// A pointer argument was null or an index was out of range.
    RaycalInvalidArgument = 1,
    /// Input could not be parsed or failed validation.
    RaycalInvalidInput = 2,
    /// A numerical failure (non-finite value) occurred.
    RaycalNumerical = 3,
    /// Checkpoint and scene/model are incompatible.
    RaycalIncompatible = 4,
    /// An internal panic was caught; see `raycal_last_error`.
    RaycalInternal = 5,
}

use RaycalStatus::*;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap());
}

/// Returns the error message for the most recent failure on this thread.
/// The pointer is valid until the next API call on the same thread.
#[no_mangle]
pub extern "C" fn raycal_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

fn guard<F: FnOnce() -> RaycalStatus>(f: F) -> RaycalStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "internal panic".into());
            set_error(&msg);
            RaycalInternal
        }
    }
}

macro_rules! nonnull {
    ($($p:expr),+) => {
        $(if $p.is_null() {
            set_error(concat!("null pointer: ", stringify!($p)));
            return RaycalInvalidArgument;
        })+
    };
}

/// Opaque triangle-mesh scene handle.
pub struct RaycalScene {
    scene: Scene,
}

/// Opaque traced path-set handle for one transmitter/receiver pair.
pub struct RaycalPaths {
    paths: PathSet,
}

/// Opaque trained-model handle (checkpoint loaded against a scene).
pub struct RaycalModel {
    model: ParamModel,
}

/// Loads a scene from a JSON file. On success `*out` owns the handle.
#[no_mangle]
pub extern "C" fn raycal_scene_load(path: *const c_char, out: *mut *mut RaycalScene) -> RaycalStatus {
    guard(|| {
        nonnull!(path, out);
        let path = match unsafe { CStr::from_ptr(path) }.to_str() {
            Ok(s) => s,
            Err(_) => {
                set_error("scene path is not valid UTF-8");
                return RaycalInvalidArgument;
            }
        };
        match Scene::load(Path::new(path)) {
            Ok(scene) => {
                unsafe { *out = Box::into_raw(Box::new(RaycalScene { scene })) };
                RaycalOk
            }
            Err(e) => {
                set_error(&format!("failed to load scene: {e}"));
                RaycalInvalidInput
            }
        }
    })
}

/// Parses a scene from a JSON string.
#[no_mangle]
pub extern "C" fn raycal_scene_from_json(
    json: *const c_char,
    out: *mut *mut RaycalScene,
) -> RaycalStatus {
    guard(|| {
        nonnull!(json, out);
        let json = match unsafe { CStr::from_ptr(json) }.to_str() {
            Ok(s) => s,
            Err(_) => {
                set_error("scene JSON is not valid UTF-8");
                return RaycalInvalidArgument;
            }
        };
        match Scene::from_json(json) {
            Ok(scene) => {
                unsafe { *out = Box::into_raw(Box::new(RaycalScene { scene })) };
                RaycalOk
            }
            Err(e) => {
                set_error(&format!("failed to parse scene: {e}"));
                RaycalInvalidInput
            }
        }
    })
}

/// Number of triangles in the scene.
#[no_mangle]
pub extern "C" fn raycal_scene_triangle_count(
    scene: *const RaycalScene,
    out: *mut usize,
) -> RaycalStatus {
    guard(|| {
        nonnull!(scene, out);
        unsafe { *out = (*scene).scene.triangles.len() };
        RaycalOk
    })
}

/// Releases a scene handle. Passing null is a no-op.
#[no_mangle]
pub extern "C" fn raycal_scene_free(scene: *mut RaycalScene) {
    if !scene.is_null() {
        drop(unsafe { Box::from_raw(scene) });
    }
}

/// Traces propagation paths from `tx` to `rx` (both `double[3]`).
/// `max_order` bounds the number of specular bounces; `diffuse_samples`
/// enables single-bounce diffuse paths when nonzero.
#[no_mangle]
pub extern "C" fn raycal_trace(
    scene: *const RaycalScene,
    tx: *const c_double,
    rx: *const c_double,
    max_order: c_int,
    diffuse_samples: c_int,
    seed: u64,
    out: *mut *mut RaycalPaths,
) -> RaycalStatus {
    guard(|| {
        nonnull!(scene, tx, rx, out);
        if max_order < 0 || diffuse_samples < 0 {
            set_error("max_order and diffuse_samples must be non-negative");
            return RaycalInvalidArgument;
        }
        let t = unsafe { std::slice::from_raw_parts(tx, 3) };
        let r = unsafe { std::slice::from_raw_parts(rx, 3) };
        if t.iter().chain(r).any(|x| !x.is_finite()) {
            set_error("tx/rx coordinates must be finite");
            return RaycalInvalidInput;
        }
        let cfg = TraceConfig {
            max_order: max_order as usize,
            sbr_rays: 0,
            diffuse_samples: diffuse_samples as usize,
            seed,
            exhaustive: true,
        };
        let paths = trace_all(
            &unsafe { &*scene }.scene,
            v3(t[0], t[1], t[2]),
            v3(r[0], r[1], r[2]),
            &cfg,
        );
        unsafe { *out = Box::into_raw(Box::new(RaycalPaths { paths })) };
        RaycalOk
    })
}

/// Number of traced paths in the set.
#[no_mangle]
pub extern "C" fn raycal_paths_count(paths: *const RaycalPaths, out: *mut usize) -> RaycalStatus {
    guard(|| {
        nonnull!(paths, out);
        unsafe { *out = (*paths).paths.paths.len() };
        RaycalOk
    })
}

/// Propagation delay in seconds of path `index`.
#[no_mangle]
pub extern "C" fn raycal_paths_delay(
    paths: *const RaycalPaths,
    index: usize,
    out: *mut c_double,
) -> RaycalStatus {
    guard(|| {
        nonnull!(paths, out);
        let ps = &unsafe { &*paths }.paths;
        match ps.paths.get(index) {
            Some(p) => {
                unsafe { *out = p.delay() };
                RaycalOk
            }
            None => {
                set_error(&format!(
                    "path index {index} out of range ({} paths)",
                    ps.paths.len()
                ));
                RaycalInvalidArgument
            }
        }
    })
}

/// Releases a path-set handle. Passing null is a no-op.
#[no_mangle]
pub extern "C" fn raycal_paths_free(paths: *mut RaycalPaths) {
    if !paths.is_null() {
        drop(unsafe { Box::from_raw(paths) });
    }
}

/// Loads a model checkpoint and binds it to a scene. Fails with
/// `RAYCAL_INCOMPATIBLE` when the checkpoint was trained against a
/// different parameterization or scene material list.
#[no_mangle]
pub extern "C" fn raycal_model_load(
    scene: *const RaycalScene,
    checkpoint_path: *const c_char,
    out: *mut *mut RaycalModel,
) -> RaycalStatus {
    guard(|| {
        nonnull!(scene, checkpoint_path, out);
        let path = match unsafe { CStr::from_ptr(checkpoint_path) }.to_str() {
            Ok(s) => s,
            Err(_) => {
                set_error("checkpoint path is not valid UTF-8");
                return RaycalInvalidArgument;
            }
        };
        let ck = match Checkpoint::load(Path::new(path)) {
            Ok(ck) => ck,
            Err(e) => {
                set_error(&format!("failed to read checkpoint: {e}"));
                return RaycalInvalidInput;
            }
        };
        let scene = &unsafe { &*scene }.scene;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut model = ParamModel::init(scene, &ck.model, &mut rng);
        if let Err(e) = model.load_checkpoint(&ck) {
            set_error(&format!("checkpoint is incompatible with scene: {e}"));
            return RaycalIncompatible;
        }
        unsafe { *out = Box::into_raw(Box::new(RaycalModel { model })) };
        RaycalOk
    })
}

/// Releases a model handle. Passing null is a no-op.
#[no_mangle]
pub extern "C" fn raycal_model_free(model: *mut RaycalModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Evaluates the channel impulse response predicted by `model` over the
/// traced `paths`. Writes `subcarriers` complex taps as interleaved
/// (re, im) pairs into `out`, which must hold `2 * subcarriers` doubles.
#[no_mangle]
pub extern "C" fn raycal_model_cir(
    model: *const RaycalModel,
    paths: *const RaycalPaths,
    carrier_hz: c_double,
    subcarriers: usize,
    spacing_hz: c_double,
    out: *mut c_double,
) -> RaycalStatus {
    guard(|| {
        nonnull!(model, paths, out);
        if subcarriers == 0 || subcarriers % 2 != 0 {
            set_error("subcarriers must be a positive even number");
            return RaycalInvalidArgument;
        }
        if !(carrier_hz > 0.0) || !(spacing_hz > 0.0) {
            set_error("carrier_hz and spacing_hz must be positive");
            return RaycalInvalidArgument;
        }
        let wf = WaveformConfig {
            carrier_hz,
            subcarriers,
            spacing_hz,
        };
        let traced: TracedRecord = prepare_traced(unsafe { &*paths }.paths.clone(), &wf);
        let tape = Tape::new();
        let realized = unsafe { &*model }.model.realize(&tape);
        let chi = vec![(0.0, 0.0); traced.paths.paths.len()];
        let taps = predict_taps(&tape, &realized, &traced, &wf, &chi);
        let out_slice = unsafe { std::slice::from_raw_parts_mut(out, 2 * subcarriers) };
        for (slot, tap) in out_slice.chunks_exact_mut(2).zip(&taps) {
            let (re, im) = tap.value();
            if !re.is_finite() || !im.is_finite() {
                set_error("non-finite tap in predicted response");
                return RaycalNumerical;
            }
            slot[0] = re;
            slot[1] = im;
        }
        RaycalOk
    })
}

/// Reads the physical material values (eps_r, sigma, scattering, xpd)
/// the model predicts for the named scene material.
#[no_mangle]
pub extern "C" fn raycal_model_material(
    model: *const RaycalModel,
    name: *const c_char,
    out: *mut c_double,
) -> RaycalStatus {
    guard(|| {
        nonnull!(model, name, out);
        let name = match unsafe { CStr::from_ptr(name) }.to_str() {
            Ok(s) => s,
            Err(_) => {
                set_error("material name is not valid UTF-8");
                return RaycalInvalidArgument;
            }
        };
        match unsafe { &*model }.model.material_values(name) {
            Some((e, s, sc, kx)) => {
                let out = unsafe { std::slice::from_raw_parts_mut(out, 4) };
                out.copy_from_slice(&[e, s, sc, kx]);
                RaycalOk
            }
            None => {
                set_error(&format!("unknown or position-dependent material: {name}"));
                RaycalInvalidArgument
            }
        }
    })
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn raycal_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

#[cfg(test)]
mod tests {
    use super::*;
    use raycal::synth::{corridor_scene, truth_model, SynthConfig};
    use std::ffi::CString;

    fn scene_handle() -> *mut RaycalScene {
        let json = CString::new(corridor_scene().to_json()).unwrap();
        let mut h: *mut RaycalScene = std::ptr::null_mut();
        assert_eq!(raycal_scene_from_json(json.as_ptr(), &mut h), RaycalOk);
        h
    }

    #[test]
    fn scene_roundtrip_and_errors() {
        let h = scene_handle();
        let mut n = 0usize;
        assert_eq!(raycal_scene_triangle_count(h, &mut n), RaycalOk);
        assert_eq!(n, 12);
        raycal_scene_free(h);

        let bad = CString::new("{not json").unwrap();
        let mut h2: *mut RaycalScene = std::ptr::null_mut();
        assert_eq!(
            raycal_scene_from_json(bad.as_ptr(), &mut h2),
            RaycalInvalidInput
        );
        let msg = unsafe { CStr::from_ptr(raycal_last_error()) };
        assert!(!msg.to_bytes().is_empty());
        assert_eq!(
            raycal_scene_from_json(std::ptr::null(), &mut h2),
            RaycalInvalidArgument
        );
    }

    #[test]
    fn trace_and_cir_pipeline() {
        let scene = scene_handle();
        let tx = [2.0, 0.0, 1.0];
        let rx = [18.0, 0.0, 1.5];
        let mut paths: *mut RaycalPaths = std::ptr::null_mut();
        assert_eq!(
            raycal_trace(scene, tx.as_ptr(), rx.as_ptr(), 2, 8, 1, &mut paths),
            RaycalOk
        );
        let mut n = 0usize;
        assert_eq!(raycal_paths_count(paths, &mut n), RaycalOk);
        assert!(n > 3);
        let mut d = 0.0f64;
        assert_eq!(raycal_paths_delay(paths, 0, &mut d), RaycalOk);
        assert!(d > 0.0 && d < 1e-6);
        assert_eq!(raycal_paths_delay(paths, n, &mut d), RaycalInvalidArgument);

        // write a truth checkpoint, reload through the ABI, evaluate a CIR
        let dir = tempfile::tempdir().unwrap();
        let ck_path = dir.path().join("truth.json");
        let model = truth_model(&corridor_scene(), &SynthConfig::default());
        model.to_checkpoint().save(&ck_path).unwrap();
        let ck_c = CString::new(ck_path.to_str().unwrap()).unwrap();
        let mut mh: *mut RaycalModel = std::ptr::null_mut();
        assert_eq!(raycal_model_load(scene, ck_c.as_ptr(), &mut mh), RaycalOk);

        let mut taps = vec![0.0f64; 128];
        assert_eq!(
            raycal_model_cir(mh, paths, 3.438e9, 64, 50e6 / 64.0, taps.as_mut_ptr()),
            RaycalOk
        );
        let power: f64 = taps.chunks_exact(2).map(|c| c[0] * c[0] + c[1] * c[1]).sum();
        assert!(power > 0.0 && power.is_finite());

        let mut vals = [0.0f64; 4];
        let name = CString::new("floor").unwrap();
        assert_eq!(raycal_model_material(mh, name.as_ptr(), vals.as_mut_ptr()), RaycalOk);
        assert!((vals[0] - 5.24).abs() < 1e-12);
        let missing = CString::new("granite").unwrap();
        assert_eq!(
            raycal_model_material(mh, missing.as_ptr(), vals.as_mut_ptr()),
            RaycalInvalidArgument
        );

        raycal_model_free(mh);
        raycal_paths_free(paths);
        raycal_scene_free(scene);
    }

    #[test]
    fn version_is_static() {
        let v = unsafe { CStr::from_ptr(raycal_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
