//! C ABI for loading a knowledge base and a trained checkpoint and ranking
//! the target relations of an entity pair.
//!
//! Conventions:
//! - Every fallible function returns a [`KglStatus`]; `KGL_STATUS_OK` is 0.
//! - On failure a description is kept per thread and read with
//!   [`kgl_last_error`].
//! - Handles are opaque, created by `*_load` and released by `*_free`.
//! - Strings are NUL-terminated UTF-8.
//!
//! # Safety (blanket)
//!
//! Pointer arguments must be valid for the access described in each
//! function's doc, or null where null is allowed. Handles must come from this
//! library and must not be used after being freed. A handle may be shared
//! between threads for reading.
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use kg_linker::graph::{batch_graphs, extract_subgraph, ClassVocab};
use kg_linker::kb::{load_kb_files, KnowledgeBase};
use kg_linker::model::{predict, Model};
use kg_linker::tensor::{Precision, Scalar};
use kg_linker::train::{load_model, CheckpointMeta};
use kg_linker::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KglStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    /// Malformed facts, types or names.
    Input = 4,
    Config = 5,
    /// Checkpoint unreadable or trained on different vocabularies.
    CheckpointMismatch = 6,
    /// No path of length at most `l_max` joins the pair.
    NoSubgraph = 7,
    BufferTooSmall = 8,
    Internal = 9,
    Panic = 10,
}

/// Opaque knowledge base.
pub struct KglKb {
    kb: KnowledgeBase,
}

enum AnyModel {
    F64(Model<f64>),
    F32(Model<f32>),
}

/// Opaque trained model plus its class names.
pub struct KglModel {
    model: AnyModel,
    meta: CheckpointMeta,
    classes: ClassVocab,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> KglStatus {
    match e {
        Error::Io { .. } => KglStatus::Io,
        Error::Parse { .. }
        | Error::EmptyName(_)
        | Error::UnknownName { .. }
        | Error::InvalidId { .. }
        | Error::Json(_) => KglStatus::Input,
        Error::Config(_) | Error::InvalidArgument(_) => KglStatus::Config,
        Error::Mismatch(_) | Error::Checkpoint(_) => KglStatus::CheckpointMismatch,
        Error::NoSubgraph { .. } | Error::DegenerateQuery(_) => KglStatus::NoSubgraph,
        _ => KglStatus::Internal,
    }
}

fn fail(status: KglStatus, msg: impl Into<String>) -> KglStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning errors and panics into a status.
fn guarded(f: impl FnOnce() -> Result<(), KglStatus>) -> KglStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KglStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(KglStatus::Panic, "panic inside kg-linker"),
    }
}

fn lift<T>(r: kg_linker::Result<T>) -> Result<T, KglStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, KglStatus> {
    if p.is_null() {
        return Err(fail(KglStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(KglStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

/// Message for the last failure on this thread; empty if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn kgl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn kgl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a facts file and an optional types file (`types` may be null).
#[no_mangle]
pub unsafe extern "C" fn kgl_kb_load(
    facts: *const c_char,
    types: *const c_char,
    out: *mut *mut KglKb,
) -> KglStatus {
    guarded(|| {
        if out.is_null() {
            return Err(fail(KglStatus::NullArgument, "out is null"));
        }
        *out = std::ptr::null_mut();
        let facts = str_arg(facts, "facts")?;
        let types = if types.is_null() {
            None
        } else {
            Some(str_arg(types, "types")?)
        };
        let kb = lift(load_kb_files(Path::new(facts), types.map(Path::new)))?;
        *out = Box::into_raw(Box::new(KglKb { kb }));
        Ok(())
    })
}

/// Releases a knowledge base. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn kgl_kb_free(kb: *mut KglKb) {
    if !kb.is_null() {
        drop(Box::from_raw(kb));
    }
}

/// Vocabulary and fact counts. Any output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn kgl_kb_counts(
    kb: *const KglKb,
    entities: *mut usize,
    relations: *mut usize,
    types: *mut usize,
    facts: *mut usize,
) -> KglStatus {
    guarded(|| {
        let Some(kb) = kb.as_ref() else {
            return Err(fail(KglStatus::NullArgument, "kb is null"));
        };
        let kb = &kb.kb;
        for (p, v) in [
            (entities, kb.num_entities()),
            (relations, kb.relations().len()),
            (types, kb.types().len()),
            (facts, kb.facts().len()),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Loads a checkpoint (and its `.json` sidecar) for inference.
#[no_mangle]
pub unsafe extern "C" fn kgl_model_load(checkpoint: *const c_char, out: *mut *mut KglModel) -> KglStatus {
    guarded(|| {
        if out.is_null() {
            return Err(fail(KglStatus::NullArgument, "out is null"));
        }
        *out = std::ptr::null_mut();
        let path = Path::new(str_arg(checkpoint, "checkpoint")?);
        let meta = lift(CheckpointMeta::load(path))?;
        let model = match meta.precision {
            Precision::F64 => AnyModel::F64(lift(load_model::<f64>(path))?.0),
            Precision::F32 => AnyModel::F32(lift(load_model::<f32>(path))?.0),
        };
        let classes = ClassVocab::from_names(&meta.classes[1..]);
        *out = Box::into_raw(Box::new(KglModel {
            model,
            meta,
            classes,
        }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn kgl_model_free(model: *mut KglModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of output classes (class 0 is the null relation); 0 for null.
#[no_mangle]
pub unsafe extern "C" fn kgl_model_num_classes(model: *const KglModel) -> usize {
    model.as_ref().map_or(0, |m| m.classes.len())
}

/// Copies the NUL-terminated name of `class` into `buf`. `needed` (if not
/// null) receives the required size including the terminator; a short buffer
/// yields `KGL_STATUS_BUFFER_TOO_SMALL` and writes nothing.
#[no_mangle]
pub unsafe extern "C" fn kgl_model_class_name(
    model: *const KglModel,
    class: usize,
    buf: *mut c_char,
    buf_len: usize,
    needed: *mut usize,
) -> KglStatus {
    guarded(|| {
        let Some(m) = model.as_ref() else {
            return Err(fail(KglStatus::NullArgument, "model is null"));
        };
        if class >= m.classes.len() {
            return Err(fail(
                KglStatus::Config,
                format!("class {class} out of range ({} classes)", m.classes.len()),
            ));
        }
        let name = m.classes.name(class).as_bytes();
        if !needed.is_null() {
            *needed = name.len() + 1;
        }
        if buf.is_null() || buf_len < name.len() + 1 {
            return Err(fail(KglStatus::BufferTooSmall, "name buffer too small"));
        }
        std::ptr::copy_nonoverlapping(name.as_ptr(), buf.cast::<u8>(), name.len());
        *buf.add(name.len()) = 0;
        Ok(())
    })
}

fn scores_for<T: Scalar>(model: &Model<T>, kb: &KnowledgeBase, s: &str, t: &str, l: usize) -> kg_linker::Result<Vec<f64>> {
    let entity = |n: &str| {
        kb.entity(n).ok_or_else(|| Error::UnknownName {
            kind: "entity",
            name: n.to_owned(),
        })
    };
    let g = extract_subgraph(kb, entity(s)?, entity(t)?, l)?;
    let logits = model.logits(&batch_graphs(&[&g])?)?;
    Ok(logits.row(0).iter().map(|x| x.as_f64()).collect())
}

/// Scores every class for `source -> target`.
///
/// `scores[c]` receives the logit of class `c` and `ranking[i]` the class at
/// rank `i` (best first). Either array may be null; non-null arrays must hold
/// `len >= kgl_model_num_classes(model)` elements. `l_max = 0` uses the path
/// bound the model was trained with.
#[no_mangle]
pub unsafe extern "C" fn kgl_predict(
    model: *const KglModel,
    kb: *const KglKb,
    source: *const c_char,
    target: *const c_char,
    l_max: usize,
    scores: *mut f64,
    ranking: *mut usize,
    len: usize,
) -> KglStatus {
    guarded(|| {
        let (Some(m), Some(kb)) = (model.as_ref(), kb.as_ref()) else {
            return Err(fail(KglStatus::NullArgument, "model or kb is null"));
        };
        let (s, t) = (str_arg(source, "source")?, str_arg(target, "target")?);
        let n = m.classes.len();
        if (!scores.is_null() || !ranking.is_null()) && len < n {
            return Err(fail(
                KglStatus::BufferTooSmall,
                format!("output arrays need {n} elements, got {len}"),
            ));
        }
        lift(m.meta.check_vocab(&kb.kb, &m.classes))?;
        let l = if l_max == 0 { m.meta.train.max_len } else { l_max };
        let logits = lift(match &m.model {
            AnyModel::F64(model) => scores_for(model, &kb.kb, s, t, l),
            AnyModel::F32(model) => scores_for(model, &kb.kb, s, t, l),
        })?;
        if !scores.is_null() {
            std::slice::from_raw_parts_mut(scores, n).copy_from_slice(&logits);
        }
        if !ranking.is_null() {
            std::slice::from_raw_parts_mut(ranking, n).copy_from_slice(&predict(&logits).ranking);
        }
        Ok(())
    })
}
