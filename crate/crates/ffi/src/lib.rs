//! C ABI over the knowledge base, faceted search and the concept model.
//!
//! Objects cross the boundary as opaque handles created by `*_open` and
//! released by the matching `*_free`. Every fallible call returns an
//! [`FkbStatus`]; on failure [`fkb_last_error`] describes the cause on the
//! calling thread. Strings handed out by the library are UTF-8, NUL
//! terminated and must be released with [`fkb_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use fashionkb::corpus::{LabelIndices, LabelSource};
use fashionkb::kb::KnowledgeBase;
use fashionkb::model::{decode, load_checkpoint, ConceptModel};
use fashionkb::search::{query_posts, query_triplets, Query};
use fashionkb::server::vocab_response;
use fashionkb::Post;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FkbStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// A file could not be read or was damaged.
    Io = 3,
    /// Malformed JSON input.
    Parse = 4,
    /// The query was rejected; the last error is the JSON error body.
    Query = 5,
    /// The post does not fit the model.
    Model = 6,
    /// A Rust panic was caught at the boundary.
    Panic = 7,
}

/// Opaque knowledge base handle.
pub struct FkbKb {
    kb: KnowledgeBase,
}

/// Opaque concept model handle.
pub struct FkbModel {
    model: ConceptModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

type Outcome = Result<(), (FkbStatus, String)>;

/// Runs `f`, recording its error and turning panics into [`FkbStatus::Panic`].
fn guard(f: impl FnOnce() -> Outcome) -> FkbStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FkbStatus::Ok,
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(message);
            FkbStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (FkbStatus, String)> {
    if p.is_null() {
        return Err((FkbStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| (FkbStatus::InvalidUtf8, format!("{what}: {e}")))
}

fn null(what: &str) -> (FkbStatus, String) {
    (FkbStatus::NullArgument, format!("{what} is null"))
}

unsafe fn write_string(out: *mut *mut c_char, s: String) {
    *out = CString::new(s).expect("JSON has no NUL").into_raw();
}

/// Message of the last failed call on this thread, or null after a
/// success. Owned by the library; valid until the next call on the thread.
#[no_mangle]
pub extern "C" fn fkb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn fkb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn fkb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a knowledge base snapshot.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fkb_kb_open(path: *const c_char, out: *mut *mut FkbKb) -> FkbStatus {
    guard(|| {
        let path = read_str(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let kb = KnowledgeBase::load(path).map_err(|e| (FkbStatus::Io, format!("{path}: {e}")))?;
        *out = Box::into_raw(Box::new(FkbKb { kb }));
        Ok(())
    })
}

/// Releases a knowledge base. Null is ignored.
///
/// # Safety
/// `kb` must come from [`fkb_kb_open`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn fkb_kb_free(kb: *mut FkbKb) {
    if !kb.is_null() {
        drop(Box::from_raw(kb));
    }
}

/// Number of stored triplet instances and of posts.
///
/// # Safety
/// `kb` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn fkb_kb_counts(
    kb: *const FkbKb,
    instances: *mut usize,
    posts: *mut usize,
) -> FkbStatus {
    guard(|| {
        let kb = kb.as_ref().ok_or_else(|| null("kb"))?;
        if instances.is_null() || posts.is_null() {
            return Err(null("out"));
        }
        *instances = kb.kb.instance_count();
        *posts = kb.kb.post_count();
        Ok(())
    })
}

/// Facet option lists as JSON, the same body as `GET /api/vocab`.
///
/// # Safety
/// `kb` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fkb_kb_vocab_json(kb: *const FkbKb, out: *mut *mut c_char) -> FkbStatus {
    guard(|| {
        let kb = kb.as_ref().ok_or_else(|| null("kb"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let body = serde_json::to_string(&vocab_response(&kb.kb)).expect("serializable");
        write_string(out, body);
        Ok(())
    })
}

#[derive(Clone, Copy)]
enum Mode {
    Triplets,
    Posts,
}

unsafe fn run_query(
    kb: *const FkbKb,
    query: *const c_char,
    out: *mut *mut c_char,
    mode: Mode,
) -> FkbStatus {
    guard(|| {
        let kb = kb.as_ref().ok_or_else(|| null("kb"))?;
        let qs = read_str(query, "query")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let rejected = |e| {
            (
                FkbStatus::Query,
                serde_json::to_string(&e).expect("serializable"),
            )
        };
        let q = Query::from_query_string(qs).map_err(rejected)?;
        let body = match mode {
            Mode::Triplets => serde_json::to_string(&query_triplets(&kb.kb, &q).map_err(rejected)?),
            Mode::Posts => serde_json::to_string(&query_posts(&kb.kb, None, &q).map_err(rejected)?),
        }
        .expect("serializable");
        write_string(out, body);
        Ok(())
    })
}

/// Aggregated triplets matching a URL query string such as
/// `occasion=wedding&category=dress&limit=10`, as the JSON page returned
/// by `GET /api/triplets`. A rejected query yields [`FkbStatus::Query`]
/// with the JSON error body as the last error.
///
/// # Safety
/// `kb` must be a live handle, `query` a NUL-terminated string and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn fkb_kb_query_triplets(
    kb: *const FkbKb,
    query: *const c_char,
    out: *mut *mut c_char,
) -> FkbStatus {
    run_query(kb, query, out, Mode::Triplets)
}

/// Matching posts, as the JSON page returned by `GET /api/posts` without
/// captions.
///
/// # Safety
/// As for [`fkb_kb_query_triplets`].
#[no_mangle]
pub unsafe extern "C" fn fkb_kb_query_posts(
    kb: *const FkbKb,
    query: *const c_char,
    out: *mut *mut c_char,
) -> FkbStatus {
    run_query(kb, query, out, Mode::Posts)
}

/// Loads the concept model from a training checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fkb_model_open(path: *const c_char, out: *mut *mut FkbModel) -> FkbStatus {
    guard(|| {
        let path = read_str(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let (model, _) = load_checkpoint(Path::new(path))
            .map_err(|e| (FkbStatus::Io, format!("{path}: {e}")))?;
        *out = Box::into_raw(Box::new(FkbModel { model }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`fkb_model_open`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn fkb_model_free(model: *mut FkbModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Predicts labels for one post given as JSON (the `post` object of a
/// corpus line). Writes `{"occasion": ..., "garments": [...]}` with one
/// entry per garment region.
///
/// # Safety
/// `model` must be a live handle, `post_json` a NUL-terminated string and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fkb_model_predict(
    model: *const FkbModel,
    post_json: *const c_char,
    out: *mut *mut c_char,
) -> FkbStatus {
    guard(|| {
        let model = &model.as_ref().ok_or_else(|| null("model"))?.model;
        let text = read_str(post_json, "post_json")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let post: Post =
            serde_json::from_str(text).map_err(|e| (FkbStatus::Parse, e.to_string()))?;
        let pred = model
            .forward(&post)
            .map_err(|e| (FkbStatus::Model, e.to_string()))?;
        let hard = decode(&pred);
        let labels = LabelIndices {
            occasion: hard.occasion,
            garments: hard.garments,
            source: LabelSource::Weak,
        }
        .to_labels(model.vocab());
        let body = serde_json::json!({
            "occasion": labels.occasion,
            "garments": labels.garments,
        });
        write_string(out, body.to_string());
        Ok(())
    })
}
