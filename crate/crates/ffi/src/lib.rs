//! C interface to volrig.
//!
//! Objects are opaque handles created by `volrig_*_load`/`_new` style calls
//! and released with the matching `_free`. Every fallible call returns a
//! `VolrigStatus`; on failure, `volrig_last_error` describes the problem for
//! the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use volrig::eval::{cd_joint, cd_joint2bone};
use volrig::extract::{predict_mesh, PredictConfig};
use volrig::mesh::{load_mesh, Point, TriangleMesh};
use volrig::net::{load_model, Granularity, ModelMeta, Network};
use volrig::skeleton::{write_skeleton, Skeleton};
use volrig::synth::{synth_character, CharacterKind};
use volrig::VolrigError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolrigStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NotFound = 3,
    Io = 4,
    Parse = 5,
    NoJoints = 6,
    Failed = 7,
    Panic = 8,
}

/// Which procedural character `volrig_synth_character` builds.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolrigCharacterKind {
    Biped = 0,
    Quadruped = 1,
    Star = 2,
}

/// A triangle mesh.
pub struct VolrigMesh(TriangleMesh);

/// A skeleton tree.
pub struct VolrigSkeleton(Skeleton);

/// A trained network with its featurization settings.
pub struct VolrigModel {
    net: Network<f32>,
    meta: ModelMeta,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &VolrigError) -> VolrigStatus {
    match e {
        _ if e.is_not_found() => VolrigStatus::NotFound,
        VolrigError::Io { .. } => VolrigStatus::Io,
        VolrigError::Parse { .. } | VolrigError::Json(_) => VolrigStatus::Parse,
        VolrigError::NoJoints(_) => VolrigStatus::NoJoints,
        VolrigError::Config(_) | VolrigError::Invalid(_) | VolrigError::Shape(_) => VolrigStatus::InvalidArgument,
        _ => VolrigStatus::Failed,
    }
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Lib(VolrigError),
}

impl From<VolrigError> for Fail {
    fn from(e: VolrigError) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> VolrigStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VolrigStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("{what} is null"));
            VolrigStatus::NullPointer
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_error(msg);
            VolrigStatus::InvalidArgument
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            VolrigStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| Fail::Arg("path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn put<T>(out: *mut *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("output pointer"));
    }
    *out = Box::into_raw(Box::new(v));
    Ok(())
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next volrig call on the same thread.
#[no_mangle]
pub extern "C" fn volrig_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn volrig_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Reads a Wavefront OBJ file.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn volrig_mesh_load(path: *const c_char, out: *mut *mut VolrigMesh) -> VolrigStatus {
    guard(|| {
        let p = path_arg(path)?;
        put(out, VolrigMesh(load_mesh(&p)?))
    })
}

/// Builds a mesh from `vertex_count` xyz triples and `triangle_count` index
/// triples.
///
/// # Safety
/// The buffers must hold `3 * vertex_count` doubles and `3 * triangle_count`
/// indices.
#[no_mangle]
pub unsafe extern "C" fn volrig_mesh_from_buffers(
    vertices: *const f64,
    vertex_count: usize,
    triangles: *const u32,
    triangle_count: usize,
    out: *mut *mut VolrigMesh,
) -> VolrigStatus {
    guard(|| {
        if vertices.is_null() || triangles.is_null() {
            return Err(Fail::Null("buffer"));
        }
        let v = std::slice::from_raw_parts(vertices, 3 * vertex_count);
        let t = std::slice::from_raw_parts(triangles, 3 * triangle_count);
        let verts = v.chunks_exact(3).map(|c| Point::new(c[0], c[1], c[2])).collect();
        let tris = t.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        put(out, VolrigMesh(TriangleMesh::new(verts, tris)?))
    })
}

/// # Safety
/// `mesh` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn volrig_mesh_free(mesh: *mut VolrigMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

/// # Safety
/// `mesh` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn volrig_mesh_vertex_count(mesh: *const VolrigMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.0.vertices.len())
}

/// # Safety
/// `mesh` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn volrig_mesh_triangle_count(mesh: *const VolrigMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.0.triangles.len())
}

/// A procedural character in its normalized frame. Either output may be
/// null when not wanted.
///
/// # Safety
/// Non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn volrig_synth_character(
    kind: VolrigCharacterKind,
    seed: u64,
    out_mesh: *mut *mut VolrigMesh,
    out_skeleton: *mut *mut VolrigSkeleton,
) -> VolrigStatus {
    guard(|| {
        let k = match kind {
            VolrigCharacterKind::Biped => CharacterKind::Biped,
            VolrigCharacterKind::Quadruped => CharacterKind::Quadruped,
            VolrigCharacterKind::Star => CharacterKind::Star,
        };
        let c = synth_character(k, seed)?;
        if !out_mesh.is_null() {
            put(out_mesh, VolrigMesh(c.mesh))?;
        }
        if !out_skeleton.is_null() {
            put(out_skeleton, VolrigSkeleton(c.skeleton))?;
        }
        Ok(())
    })
}

/// Loads a checkpoint written by `volrig train`.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn volrig_model_load(path: *const c_char, out: *mut *mut VolrigModel) -> VolrigStatus {
    guard(|| {
        let p = path_arg(path)?;
        let (net, meta) = load_model(&p)?;
        put(out, VolrigModel { net, meta })
    })
}

/// # Safety
/// `model` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn volrig_model_free(model: *mut VolrigModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Grid resolution the model expects, 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn volrig_model_resolution(model: *const VolrigModel) -> usize {
    model.as_ref().map_or(0, |m| m.meta.features.resolution)
}

/// Predicts a skeleton in the mesh's own frame. `granularity` lies in [0, 1];
/// 0.02 is the usual default.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn volrig_predict(
    model: *const VolrigModel,
    mesh: *const VolrigMesh,
    granularity: f64,
    out: *mut *mut VolrigSkeleton,
) -> VolrigStatus {
    guard(|| {
        let m = get(model, "model")?;
        let mesh = get(mesh, "mesh")?;
        let cfg = PredictConfig {
            granularity: Granularity::new(granularity)?,
            ..PredictConfig::default()
        };
        let p = predict_mesh(&m.net, &m.meta.features, &mesh.0, &cfg, None)?;
        put(out, VolrigSkeleton(p.skeleton))
    })
}

/// # Safety
/// `skeleton` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn volrig_skeleton_free(skeleton: *mut VolrigSkeleton) {
    if !skeleton.is_null() {
        drop(Box::from_raw(skeleton));
    }
}

/// # Safety
/// `skeleton` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn volrig_skeleton_joint_count(skeleton: *const VolrigSkeleton) -> usize {
    skeleton.as_ref().map_or(0, |s| s.0.len())
}

/// # Safety
/// `skeleton` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn volrig_skeleton_root(skeleton: *const VolrigSkeleton) -> usize {
    skeleton.as_ref().map_or(0, |s| s.0.root)
}

/// Writes the position of joint `index` to `xyz[0..3]`.
///
/// # Safety
/// `xyz` must have room for three doubles.
#[no_mangle]
pub unsafe extern "C" fn volrig_skeleton_joint_position(
    skeleton: *const VolrigSkeleton,
    index: usize,
    xyz: *mut f64,
) -> VolrigStatus {
    guard(|| {
        let s = get(skeleton, "skeleton")?;
        if xyz.is_null() {
            return Err(Fail::Null("xyz"));
        }
        let j = s
            .0
            .joints
            .get(index)
            .ok_or_else(|| Fail::Arg(format!("joint {index} out of range")))?;
        let out = std::slice::from_raw_parts_mut(xyz, 3);
        out.copy_from_slice(&[j.position.x, j.position.y, j.position.z]);
        Ok(())
    })
}

/// Parent of joint `index`, or -1 for the root.
///
/// # Safety
/// `parent` must be writable.
#[no_mangle]
pub unsafe extern "C" fn volrig_skeleton_parent(
    skeleton: *const VolrigSkeleton,
    index: usize,
    parent: *mut i64,
) -> VolrigStatus {
    guard(|| {
        let s = get(skeleton, "skeleton")?;
        if parent.is_null() {
            return Err(Fail::Null("parent"));
        }
        let parents = s.0.parents();
        let p = parents
            .get(index)
            .ok_or_else(|| Fail::Arg(format!("joint {index} out of range")))?;
        *parent = p.map_or(-1, |v| v as i64);
        Ok(())
    })
}

/// Saves the skeleton in the rig text format, without a mesh reference.
///
/// # Safety
/// `path` must be a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn volrig_skeleton_save(skeleton: *const VolrigSkeleton, path: *const c_char) -> VolrigStatus {
    guard(|| {
        let s = get(skeleton, "skeleton")?;
        let p = path_arg(path)?;
        write_skeleton(&p, &s.0, None)?;
        Ok(())
    })
}

/// Joint and joint-to-bone Chamfer distances over `longest_axis`.
///
/// # Safety
/// Handles must be live; outputs may be null when not wanted.
#[no_mangle]
pub unsafe extern "C" fn volrig_chamfer(
    pred: *const VolrigSkeleton,
    reference: *const VolrigSkeleton,
    longest_axis: f64,
    cd_joint_out: *mut f64,
    cd_joint2bone_out: *mut f64,
) -> VolrigStatus {
    guard(|| {
        let a = get(pred, "pred")?;
        let b = get(reference, "reference")?;
        let j = cd_joint(&a.0, &b.0, longest_axis)?;
        let jb = cd_joint2bone(&a.0, &b.0, longest_axis)?;
        if !cd_joint_out.is_null() {
            *cd_joint_out = j;
        }
        if !cd_joint2bone_out.is_null() {
            *cd_joint2bone_out = jb;
        }
        Ok(())
    })
}
