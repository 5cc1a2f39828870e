//! C bindings for gsforge.
//!
//! Scenes and images are opaque handles created by `gsf_*` constructors and
//! released with the matching `*_free`. Every fallible call returns a
//! [`GsfStatus`]; on failure a message for the calling thread is available
//! from [`gsf_last_error_message`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use gsforge::camera::{CameraModel, Intrinsics, RigidPose};
use gsforge::raster::{render, RenderOptions, RenderOutput};
use gsforge::splat::ply::{load_ply, save_ply};
use gsforge::splat::GaussianScene;
use gsforge::splat::sh::degree_for_count;
use gsforge::transform::{fit_similarity, rotate_sh, transform_scene, SimilarityTransform};
use nalgebra::{Matrix3, Vector3};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GsfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Io = 4,
    Transform = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Pinhole camera with a world-to-camera pose `x_cam = R x_world + t`.
/// `rotation` is row-major.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GsfCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

/// `x -> scale * R x + t`, `rotation` row-major.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GsfSimilarity {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub scale: f64,
}

pub struct GsfScene(GaussianScene);

pub struct GsfImage(RenderOutput);

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: impl ToString) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.to_string().into_bytes());
}

struct Failure(GsfStatus, String);

impl Failure {
    fn new(status: GsfStatus, msg: impl ToString) -> Self {
        Self(status, msg.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GsfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| e.borrow_mut().clear());
            GsfStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            GsfStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::new(GsfStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::new(GsfStatus::NullPointer, format!("{what} is null")))
}

unsafe fn input_slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::new(GsfStatus::NullPointer, format!("{what} is null")));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Failure> {
    let s = deref(p, "path")?;
    let s = CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Failure::new(GsfStatus::InvalidArgument, "path is not UTF-8"))?;
    Ok(Path::new(s))
}

fn matrix(m: &[f64; 9]) -> Matrix3<f64> {
    Matrix3::from_row_slice(m)
}

fn rows(m: &Matrix3<f64>) -> [f64; 9] {
    std::array::from_fn(|k| m[(k / 3, k % 3)])
}

fn similarity(t: &GsfSimilarity) -> Result<SimilarityTransform, Failure> {
    SimilarityTransform::new(matrix(&t.rotation), Vector3::from(t.translation), t.scale)
        .map_err(|e| Failure::new(GsfStatus::InvalidArgument, e))
}

fn camera(c: &GsfCamera) -> Result<CameraModel, Failure> {
    let intrinsics = Intrinsics {
        fx: c.fx,
        fy: c.fy,
        cx: c.cx,
        cy: c.cy,
        width: c.width,
        height: c.height,
    };
    let pose = RigidPose {
        rotation: matrix(&c.rotation),
        translation: Vector3::from(c.translation),
    };
    CameraModel::new(intrinsics, pose).map_err(|e| Failure::new(GsfStatus::InvalidArgument, e))
}

fn boxed<T>(out: &mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gsf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Bytes in the calling thread's last error message, excluding the NUL.
#[no_mangle]
pub extern "C" fn gsf_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().len())
}

/// Copies the last error message into `buf` as a NUL-terminated string,
/// truncating to `capacity - 1` bytes. Returns the full message length.
///
/// # Safety
/// `buf` must be null or valid for `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn gsf_last_error_message(buf: *mut c_char, capacity: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && capacity > 0 {
            let n = msg.len().min(capacity - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Parses a binary PLY held in memory.
///
/// # Safety
/// `bytes` must be valid for `len` bytes; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gsf_scene_from_ply(bytes: *const u8, len: usize, out: *mut *mut GsfScene) -> GsfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let data = input_slice(bytes, len, "bytes")?;
        let scene = load_ply(data).map_err(|e| Failure::new(GsfStatus::Parse, e))?;
        boxed(out, GsfScene(scene));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gsf_scene_load(path: *const c_char, out: *mut *mut GsfScene) -> GsfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = path_arg(path)?;
        let bytes = std::fs::read(path).map_err(|e| Failure::new(GsfStatus::Io, format!("{}: {e}", path.display())))?;
        let scene = load_ply(&bytes).map_err(|e| Failure::new(GsfStatus::Parse, e))?;
        boxed(out, GsfScene(scene));
        Ok(())
    })
}

/// # Safety
/// `scene` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gsf_scene_save(scene: *const GsfScene, path: *const c_char) -> GsfStatus {
    guard(|| {
        let scene = deref(scene, "scene")?;
        let path = path_arg(path)?;
        std::fs::write(path, save_ply(&scene.0)).map_err(|e| Failure::new(GsfStatus::Io, format!("{}: {e}", path.display())))
    })
}

/// Number of splats, 0 for a null handle.
///
/// # Safety
/// `scene` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gsf_scene_len(scene: *const GsfScene) -> usize {
    scene.as_ref().map_or(0, |s| s.0.len())
}

/// # Safety
/// `scene` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gsf_scene_free(scene: *mut GsfScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// New scene with `transform` applied to every splat.
///
/// # Safety
/// Pointers must be valid; `scene` a live handle.
#[no_mangle]
pub unsafe extern "C" fn gsf_scene_transform(
    scene: *const GsfScene,
    transform: *const GsfSimilarity,
    out: *mut *mut GsfScene,
) -> GsfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let scene = deref(scene, "scene")?;
        let t = similarity(deref(transform, "transform")?)?;
        boxed(out, GsfScene(transform_scene(&scene.0, &t)));
        Ok(())
    })
}

/// Renders with default options.
///
/// # Safety
/// Pointers must be valid; `scene` a live handle.
#[no_mangle]
pub unsafe extern "C" fn gsf_render(scene: *const GsfScene, cam: *const GsfCamera, out: *mut *mut GsfImage) -> GsfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let scene = deref(scene, "scene")?;
        let cam = camera(deref(cam, "camera")?)?;
        if cam.intrinsics.pixel_count() > 1 << 26 {
            return Err(Failure::new(GsfStatus::InvalidArgument, "image too large"));
        }
        boxed(out, GsfImage(render(&scene.0, &cam, &RenderOptions::default())));
        Ok(())
    })
}

/// # Safety
/// `image` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gsf_image_width(image: *const GsfImage) -> u32 {
    image.as_ref().map_or(0, |i| i.0.width)
}

/// # Safety
/// `image` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gsf_image_height(image: *const GsfImage) -> u32 {
    image.as_ref().map_or(0, |i| i.0.height)
}

/// Copies RGB8 row-major pixels; `capacity` must be at least `3 * w * h`.
///
/// # Safety
/// `image` must be a live handle and `buf` valid for `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn gsf_image_rgb8(image: *const GsfImage, buf: *mut u8, capacity: usize) -> GsfStatus {
    guard(|| {
        let image = deref(image, "image")?;
        let rgb = image.0.rgb8();
        copy_out(&rgb, buf, capacity)
    })
}

/// Copies ray-plane depth, 0 where undefined; `capacity` in floats.
///
/// # Safety
/// `image` must be a live handle and `buf` valid for `capacity` floats.
#[no_mangle]
pub unsafe extern "C" fn gsf_image_depth(image: *const GsfImage, buf: *mut f32, capacity: usize) -> GsfStatus {
    guard(|| {
        let image = deref(image, "image")?;
        let depth: Vec<f32> = image.0.depth.iter().map(|d| *d as f32).collect();
        copy_out(&depth, buf, capacity)
    })
}

unsafe fn copy_out<T: Copy>(src: &[T], buf: *mut T, capacity: usize) -> Result<(), Failure> {
    if capacity < src.len() {
        return Err(Failure::new(
            GsfStatus::BufferTooSmall,
            format!("buffer holds {capacity} elements, need {}", src.len()),
        ));
    }
    if src.is_empty() {
        return Ok(());
    }
    if buf.is_null() {
        return Err(Failure::new(GsfStatus::NullPointer, "buffer is null"));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

/// # Safety
/// `image` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gsf_image_free(image: *mut GsfImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

/// Rotates spherical-harmonic coefficients of one splat. `coeffs` and `out`
/// hold `count` RGB triples (`3 * count` doubles) with `count` a square
/// `(degree + 1)^2` up to degree 3. `rotation` is nine doubles, row-major.
/// `out` may alias `coeffs`.
///
/// # Safety
/// `coeffs` and `out` must be valid for `3 * count` doubles, `rotation` for 9.
#[no_mangle]
pub unsafe extern "C" fn gsf_rotate_sh(coeffs: *const f64, count: usize, rotation: *const f64, out: *mut f64) -> GsfStatus {
    guard(|| {
        if degree_for_count(count).is_none() {
            return Err(Failure::new(GsfStatus::InvalidArgument, format!("{count} is not a valid SH coefficient count")));
        }
        let r = Matrix3::from_row_slice(input_slice(rotation, 9, "rotation")?);
        SimilarityTransform::new(r, Vector3::zeros(), 1.0).map_err(|e| Failure::new(GsfStatus::InvalidArgument, e))?;
        let flat = input_slice(coeffs, 3 * count, "coeffs")?;
        if out.is_null() {
            return Err(Failure::new(GsfStatus::NullPointer, "out is null"));
        }
        let triples: Vec<[f64; 3]> = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let rotated: Vec<f64> = rotate_sh(&triples, &r).into_iter().flatten().collect();
        ptr::copy(rotated.as_ptr(), out, rotated.len());
        Ok(())
    })
}

/// Least-squares similarity taking `src` onto `dst`, both `n` points of
/// three doubles. `rms` may be null.
///
/// # Safety
/// `src` and `dst` must be valid for `3 * n` doubles, `out` for one struct.
#[no_mangle]
pub unsafe extern "C" fn gsf_fit_similarity(
    src: *const f64,
    dst: *const f64,
    n: usize,
    out: *mut GsfSimilarity,
    rms: *mut f64,
) -> GsfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let points = |p: *const f64, what: &str| -> Result<Vec<Vector3<f64>>, Failure> {
            Ok(input_slice(p, 3 * n, what)?.chunks_exact(3).map(Vector3::from_column_slice).collect())
        };
        let reg = fit_similarity(&points(src, "src")?, &points(dst, "dst")?).map_err(|e| Failure::new(GsfStatus::Transform, e))?;
        let t = reg.transform;
        *out = GsfSimilarity {
            rotation: rows(&t.rotation),
            translation: [t.translation.x, t.translation.y, t.translation.z],
            scale: t.scale,
        };
        if let Some(r) = rms.as_mut() {
            *r = reg.rms;
        }
        Ok(())
    })
}
