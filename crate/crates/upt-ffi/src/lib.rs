//! C ABI over the training engine: opaque handles, integer status codes,
//! and a thread-local last-error message.
//!
//! Ownership rules: every `*mut` handle returned by an `upt_*_new`-style
//! function is owned by the caller and must be released with the matching
//! `upt_*_free`; strings returned through `char**` out-parameters must be
//! released with `upt_string_free`. All functions tolerate null pointers
//! and report `UPT_STATUS_NULL_POINTER` instead of crashing.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use upt_core::answer::{equivalent, extract};
use upt_core::metrics::{majority_success_prob, semantic_entropy, BinomialVoteModel, VoteVariant};
use upt_core::policy::{load_checkpoint, make_policy, PolicyParams};
use upt_core::runner::{self, TrainConfig};
use upt_core::tasks::TaskSet;
use upt_core::voting::majority_vote;

/// Outcome of an FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UptStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    IoError = 4,
    ParseError = 5,
    RunError = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(err: &upt_core::Error) -> UptStatus {
    use upt_core::Error as E;
    set_error(err.to_string());
    match err {
        E::Io(_) => UptStatus::IoError,
        E::Format(_) | E::Json(_) => UptStatus::ParseError,
        E::RunAborted { .. } => UptStatus::RunError,
        _ => UptStatus::InvalidArgument,
    }
}

/// Message of the most recent error on this thread. The pointer stays valid
/// until the next failing call on the same thread. Never null.
#[no_mangle]
pub extern "C" fn upt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Release a string returned through a `char**` out-parameter.
///
/// # Safety
/// `s` must be a pointer previously returned by this library and not yet
/// freed, or null.
#[no_mangle]
pub unsafe extern "C" fn upt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

unsafe fn utf8_arg<'a>(ptr: *const c_char) -> Result<&'a str, UptStatus> {
    if ptr.is_null() {
        set_error("null pointer argument");
        return Err(UptStatus::NullPointer);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("argument is not valid UTF-8");
        UptStatus::InvalidUtf8
    })
}

fn string_out(s: String, out: *mut *mut c_char) -> UptStatus {
    match CString::new(s.replace('\0', " ")) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            UptStatus::Ok
        }
        Err(_) => {
            set_error("string contains an interior NUL");
            UptStatus::InvalidArgument
        }
    }
}

/// Extract the canonical answer from one response text. On success
/// `*out_line` holds "<kind>\t<canonical>".
///
/// # Safety
/// `text` must be a valid NUL-terminated string; `out_line` must be a valid
/// pointer to writable memory.
#[no_mangle]
pub unsafe extern "C" fn upt_extract(text: *const c_char, out_line: *mut *mut c_char) -> UptStatus {
    if out_line.is_null() {
        set_error("null out_line");
        return UptStatus::NullPointer;
    }
    let text = match utf8_arg(text) {
        Ok(t) => t,
        Err(s) => return s,
    };
    let a = extract(text);
    string_out(
        format!("{}\t{}", a.kind().as_str(), a.canonical()),
        out_line,
    )
}

/// Whether two response texts extract to equivalent answers.
///
/// # Safety
/// `a` and `b` must be valid NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn upt_equivalent(
    a: *const c_char,
    b: *const c_char,
    out: *mut bool,
) -> UptStatus {
    if out.is_null() {
        set_error("null out");
        return UptStatus::NullPointer;
    }
    let (a, b) = match (utf8_arg(a), utf8_arg(b)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(s), _) | (_, Err(s)) => return s,
    };
    *out = equivalent(&extract(a), &extract(b));
    UptStatus::Ok
}

/// Majority-vote a group of response texts. `*out_winner` receives the
/// winner as "<kind>\t<canonical>" or an empty string when no answer was
/// extractable; `*out_tie` and `*out_voters` receive the tie flag and the
/// number of extractable answers.
///
/// # Safety
/// `texts` must point to `len` valid NUL-terminated strings; the out
/// pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn upt_majority_vote(
    texts: *const *const c_char,
    len: usize,
    out_winner: *mut *mut c_char,
    out_tie: *mut bool,
    out_voters: *mut usize,
) -> UptStatus {
    if texts.is_null() || out_winner.is_null() || out_tie.is_null() || out_voters.is_null() {
        set_error("null pointer argument");
        return UptStatus::NullPointer;
    }
    if len == 0 {
        set_error("vote needs at least one response");
        return UptStatus::InvalidArgument;
    }
    let mut answers = Vec::with_capacity(len);
    for i in 0..len {
        let t = match utf8_arg(*texts.add(i)) {
            Ok(t) => t,
            Err(s) => return s,
        };
        answers.push(extract(t));
    }
    let vote = majority_vote(&answers);
    *out_tie = vote.tie;
    *out_voters = vote.voters;
    let line = match &vote.winner {
        Some(w) => format!("{}\t{}", w.kind().as_str(), w.canonical()),
        None => String::new(),
    };
    string_out(line, out_winner)
}

/// Semantic entropy (nats) of a group of response texts and the number of
/// answer clusters. A group with no extractable answer reports entropy 0
/// with 0 clusters.
///
/// # Safety
/// `texts` must point to `len` valid NUL-terminated strings; the out
/// pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn upt_semantic_entropy(
    texts: *const *const c_char,
    len: usize,
    out_entropy: *mut f64,
    out_clusters: *mut usize,
) -> UptStatus {
    if texts.is_null() || out_entropy.is_null() || out_clusters.is_null() {
        set_error("null pointer argument");
        return UptStatus::NullPointer;
    }
    let mut answers = Vec::with_capacity(len);
    for i in 0..len {
        let t = match utf8_arg(*texts.add(i)) {
            Ok(t) => t,
            Err(s) => return s,
        };
        answers.push(extract(t));
    }
    match semantic_entropy(&answers) {
        Ok(report) => {
            *out_entropy = report.entropy;
            *out_clusters = report.cluster_sizes.len();
            UptStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// P(majority of n draws correct) under per-draw accuracy p. `inclusive`
/// selects the variant whose lower summation index is ceil(n/2); otherwise
/// the strict (> n/2) variant is computed.
///
/// # Safety
/// `out` must be a valid pointer to writable memory.
#[no_mangle]
pub unsafe extern "C" fn upt_majority_success_prob(
    p: f64,
    n: u32,
    inclusive: bool,
    out: *mut f64,
) -> UptStatus {
    if out.is_null() {
        set_error("null out");
        return UptStatus::NullPointer;
    }
    let variant = if inclusive {
        VoteVariant::Inclusive
    } else {
        VoteVariant::Strict
    };
    match BinomialVoteModel::new(n, p).and_then(|m| majority_success_prob(m, variant)) {
        Ok(v) => {
            *out = v;
            UptStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// Opaque task-set handle.
pub struct UptTaskSet {
    inner: TaskSet,
}

/// Generate a task set. Returns null on error (see `upt_last_error`).
///
/// # Safety
/// `family` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn upt_taskset_generate(
    family: *const c_char,
    count: usize,
    seed: u64,
) -> *mut UptTaskSet {
    let family = match utf8_arg(family) {
        Ok(f) => f,
        Err(_) => return std::ptr::null_mut(),
    };
    match upt_core::tasks::generate_tasks(family, count, seed) {
        Ok(inner) => Box::into_raw(Box::new(UptTaskSet { inner })),
        Err(e) => {
            status_of(&e);
            std::ptr::null_mut()
        }
    }
}

/// Load a task set file. Returns null on error.
///
/// # Safety
/// `path` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn upt_taskset_load(path: *const c_char) -> *mut UptTaskSet {
    let path = match utf8_arg(path) {
        Ok(p) => p,
        Err(_) => return std::ptr::null_mut(),
    };
    match TaskSet::load(Path::new(path)) {
        Ok(inner) => Box::into_raw(Box::new(UptTaskSet { inner })),
        Err(e) => {
            status_of(&e);
            std::ptr::null_mut()
        }
    }
}

/// Write a task set file.
///
/// # Safety
/// `set` must be a live handle from this library; `path` a valid string.
#[no_mangle]
pub unsafe extern "C" fn upt_taskset_save(
    set: *const UptTaskSet,
    path: *const c_char,
) -> UptStatus {
    if set.is_null() {
        set_error("null task set");
        return UptStatus::NullPointer;
    }
    let path = match utf8_arg(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match (*set).inner.save(Path::new(path)) {
        Ok(()) => UptStatus::Ok,
        Err(e) => status_of(&e),
    }
}

/// Number of tasks in the set (0 for a null handle).
///
/// # Safety
/// `set` must be a live handle from this library, or null.
#[no_mangle]
pub unsafe extern "C" fn upt_taskset_len(set: *const UptTaskSet) -> usize {
    if set.is_null() {
        return 0;
    }
    (*set).inner.len()
}

/// Release a task-set handle.
///
/// # Safety
/// `set` must be a handle from this library not yet freed, or null.
#[no_mangle]
pub unsafe extern "C" fn upt_taskset_free(set: *mut UptTaskSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Train on a task set using a `key = value` config file, writing the run
/// directory (config echo, metric log, checkpoints). `*out_final_reward`
/// receives the final step's mean majority reward.
///
/// # Safety
/// `config_path` and `out_dir` must be valid NUL-terminated strings; `set`
/// must be a live handle; `out_final_reward` may be null when the value is
/// not wanted.
#[no_mangle]
pub unsafe extern "C" fn upt_train_run(
    config_path: *const c_char,
    set: *const UptTaskSet,
    out_dir: *const c_char,
    out_final_reward: *mut f64,
) -> UptStatus {
    if set.is_null() {
        set_error("null task set");
        return UptStatus::NullPointer;
    }
    let config_path = match utf8_arg(config_path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    let out_dir = match utf8_arg(out_dir) {
        Ok(p) => p,
        Err(s) => return s,
    };
    let cfg_text = match std::fs::read_to_string(config_path) {
        Ok(t) => t,
        Err(e) => {
            set_error(format!("read {config_path}: {e}"));
            return UptStatus::IoError;
        }
    };
    let cfg = match TrainConfig::parse(&cfg_text) {
        Ok(c) => c,
        Err(e) => return status_of(&e),
    };
    let tasks = &(*set).inner;
    let run = make_policy(cfg.policy_kind, tasks)
        .map(|p| PolicyParams::zeros(p.dim()))
        .and_then(|initial| runner::train(&cfg, tasks, &initial, Some(Path::new(out_dir))));
    match run {
        Ok(out) => {
            if !out_final_reward.is_null() {
                *out_final_reward = out
                    .metrics
                    .last()
                    .map(|r| r.mean_majority_reward)
                    .unwrap_or(f64::NAN);
            }
            UptStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// Evaluate a checkpoint on a task set; `*out_accuracy` receives greedy
/// accuracy.
///
/// # Safety
/// `ckpt_path` must be a valid NUL-terminated string; `set` a live handle;
/// `out_accuracy` writable.
#[no_mangle]
pub unsafe extern "C" fn upt_eval_checkpoint(
    ckpt_path: *const c_char,
    set: *const UptTaskSet,
    out_accuracy: *mut f64,
) -> UptStatus {
    if set.is_null() || out_accuracy.is_null() {
        set_error("null pointer argument");
        return UptStatus::NullPointer;
    }
    let ckpt_path = match utf8_arg(ckpt_path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    let tasks = &(*set).inner;
    let result = load_checkpoint(Path::new(ckpt_path)).and_then(|(kind, params)| {
        let policy = make_policy(kind, tasks)?;
        upt_core::metrics::accuracy(
            policy.as_ref(),
            &params,
            tasks.tasks(),
            upt_core::metrics::AccuracyMode::Greedy,
        )
    });
    match result {
        Ok(acc) => {
            *out_accuracy = acc;
            UptStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}
