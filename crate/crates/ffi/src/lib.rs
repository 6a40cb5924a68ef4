//! C ABI over `deer-core`.
//!
//! Every fallible function returns a [`DeerStatus`]; on failure the message is
//! available from [`deer_last_error`] on the same thread. Objects are opaque
//! handles created by `*_new` and released by the matching `*_free`. Panics
//! never cross the boundary and are reported as `DEER_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use deer_core::detector::{ChangeDetector, DetectionEvent, DetectorConfig};
use deer_core::harness::{run_experiment, ExperimentConfig};
use deer_core::replay::{ReplayBuffer, ReplayConfig, ReplayPolicy, Transition};
use deer_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeerStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Shape = 4,
    NotReady = 5,
    Io = 6,
    Parse = 7,
    Panic = 8,
}

/// Replay policy selector for [`deer_replay_new`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeerPolicy {
    Uniform = 0,
    Per = 1,
    Deer = 2,
}

impl From<DeerPolicy> for ReplayPolicy {
    fn from(p: DeerPolicy) -> Self {
        match p {
            DeerPolicy::Uniform => ReplayPolicy::Uniform,
            DeerPolicy::Per => ReplayPolicy::Per,
            DeerPolicy::Deer => ReplayPolicy::Deer,
        }
    }
}

/// Result of feeding one reward to the detector.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DeerEvaluation {
    /// 1 if the detector scored the windows at this step.
    pub evaluated: u8,
    /// 1 if a change was detected; `detected_at` and `change_point` are then set.
    pub detected: u8,
    /// Clamped raw score of the latest evaluation.
    pub score: f64,
    pub detected_at: u64,
    pub change_point: u64,
}

/// Opaque replay buffer with its own sampling generator.
pub struct DeerReplayBuffer {
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
}

/// Opaque change detector.
pub struct DeerDetector {
    detector: ChangeDetector,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DeerStatus {
    match e {
        Error::Shape { .. } => DeerStatus::Shape,
        Error::NotReady(_) => DeerStatus::NotReady,
        Error::Config { .. } => DeerStatus::Config,
        Error::Parse { .. } => DeerStatus::Parse,
        Error::Io { .. } => DeerStatus::Io,
    }
}

struct Failure(DeerStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(DeerStatus::NullPointer, format!("`{what}` is null"))
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(DeerStatus::InvalidArgument, message.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DeerStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DeerStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            DeerStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` must be null or valid for `len` reads.
unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// # Safety
/// `ptr` must be null or valid for `len` writes.
unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

/// # Safety
/// `ptr` must be null or a valid pointer.
unsafe fn out<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    ptr.as_mut().ok_or_else(|| null(what))
}

/// # Safety
/// `ptr` must be null or a nul-terminated string.
unsafe fn path_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a Path, Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| invalid(format!("`{what}` is not valid UTF-8")))?;
    Ok(Path::new(s))
}

/// Message of the last failed call on this thread, or null if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn deer_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn deer_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Priority of a transition from before the latest change.
#[no_mangle]
pub extern "C" fn deer_priority_pre_change(doe: f64, epsilon: f64) -> f64 {
    deer_core::replay::priority_pre_change(doe, epsilon)
}

/// Priority of a transition from the current regime; `score` in `[0, 1]`.
#[no_mangle]
pub extern "C" fn deer_priority_post_change(td: f64, doe: f64, score: f64, epsilon: f64) -> f64 {
    deer_core::replay::priority_post_change(td, doe, score, epsilon)
}

/// Raw detector score from classifier outputs on test and reference samples.
///
/// # Safety
/// `f_test` and `f_reference` must be valid for `n_test` and `n_reference`
/// reads; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn deer_js_score(
    f_test: *const f64,
    n_test: usize,
    f_reference: *const f64,
    n_reference: usize,
    out_score: *mut f64,
) -> DeerStatus {
    guard(|| {
        let te = slice(f_test, n_test, "f_test")?;
        let rf = slice(f_reference, n_reference, "f_reference")?;
        if te.is_empty() || rf.is_empty() {
            return Err(invalid("both sample sets must be non-empty"));
        }
        *out(out_score, "out_score")? = deer_core::detector::js_score(te, rf);
        Ok(())
    })
}

/// Sampling probabilities `p^alpha / sum p^alpha` into `out` (length `n`).
///
/// # Safety
/// `priorities` and `out` must be valid for `n` elements.
#[no_mangle]
pub unsafe extern "C" fn deer_sampling_probabilities(
    priorities: *const f64,
    n: usize,
    alpha: f64,
    out_probabilities: *mut f64,
) -> DeerStatus {
    guard(|| {
        let p = slice(priorities, n, "priorities")?;
        if p.is_empty() || p.iter().any(|&x| x <= 0.0 || !x.is_finite()) {
            return Err(invalid("priorities must be non-empty, positive and finite"));
        }
        let dst = slice_mut(out_probabilities, n, "out_probabilities")?;
        dst.copy_from_slice(&deer_core::replay::sampling_probabilities(p, alpha));
        Ok(())
    })
}

/// Creates a replay buffer. `seed` drives minibatch sampling.
///
/// # Safety
/// `out_buffer` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn deer_replay_new(
    capacity: usize,
    alpha: f64,
    beta: f64,
    epsilon: f64,
    policy: DeerPolicy,
    seed: u64,
    out_buffer: *mut *mut DeerReplayBuffer,
) -> DeerStatus {
    guard(|| {
        let slot = out(out_buffer, "out_buffer")?;
        let buffer = ReplayBuffer::new(ReplayConfig {
            capacity,
            alpha,
            beta,
            epsilon,
            policy: policy.into(),
            refresh_on_sample: true,
        })?;
        *slot = Box::into_raw(Box::new(DeerReplayBuffer {
            buffer,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }));
        Ok(())
    })
}

/// Releases a buffer. Null is ignored.
///
/// # Safety
/// `buffer` must come from [`deer_replay_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn deer_replay_free(buffer: *mut DeerReplayBuffer) {
    if !buffer.is_null() {
        drop(Box::from_raw(buffer));
    }
}

/// Number of stored transitions (0 for a null handle).
///
/// # Safety
/// `buffer` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn deer_replay_len(buffer: *const DeerReplayBuffer) -> usize {
    buffer.as_ref().map_or(0, |b| b.buffer.len())
}

/// Stores a transition and writes its slot index.
///
/// # Safety
/// `buffer` must be a live handle; `state` and `next_state` valid for
/// `state_dim` reads, `action` for `action_dim` reads; `out_index` null or
/// valid for one write.
#[no_mangle]
pub unsafe extern "C" fn deer_replay_insert(
    buffer: *mut DeerReplayBuffer,
    state: *const f64,
    next_state: *const f64,
    state_dim: usize,
    action: *const f64,
    action_dim: usize,
    reward: f64,
    done: u8,
    step: u64,
    out_index: *mut usize,
) -> DeerStatus {
    guard(|| {
        let b = out(buffer, "buffer")?;
        let s = slice(state, state_dim, "state")?;
        let ns = slice(next_state, state_dim, "next_state")?;
        let a = slice(action, action_dim, "action")?;
        if let Some(first) = b.buffer.get(0) {
            if first.state.len() != state_dim || first.action.len() != action_dim {
                return Err(Failure(
                    DeerStatus::Shape,
                    format!(
                        "buffer holds {}-dim states and {}-dim actions, got {state_dim} and {action_dim}",
                        first.state.len(),
                        first.action.len()
                    ),
                ));
            }
        }
        let index = b.buffer.insert(Transition {
            state: s.to_vec(),
            action: a.to_vec(),
            reward,
            next_state: ns.to_vec(),
            done: done != 0,
            insert_step: step,
            epoch: 0,
        });
        if let Some(o) = out_index.as_mut() {
            *o = index;
        }
        Ok(())
    })
}

/// Draws `batch_size` slot indices and their importance weights.
///
/// # Safety
/// `buffer` must be a live handle; both outputs valid for `batch_size` writes.
#[no_mangle]
pub unsafe extern "C" fn deer_replay_sample(
    buffer: *mut DeerReplayBuffer,
    batch_size: usize,
    out_indices: *mut usize,
    out_weights: *mut f64,
) -> DeerStatus {
    guard(|| {
        let b = out(buffer, "buffer")?;
        let idx = slice_mut(out_indices, batch_size, "out_indices")?;
        let w = slice_mut(out_weights, batch_size, "out_weights")?;
        let sampled = b.buffer.sample(batch_size, &mut b.rng)?;
        idx.copy_from_slice(&sampled.indices);
        w.copy_from_slice(&sampled.weights);
        Ok(())
    })
}

/// Recomputes priorities of sampled slots from TD errors and discrepancies;
/// `score` is the normalized detector score.
///
/// # Safety
/// `buffer` must be a live handle; the three arrays valid for `n` reads.
#[no_mangle]
pub unsafe extern "C" fn deer_replay_refresh(
    buffer: *mut DeerReplayBuffer,
    indices: *const usize,
    td: *const f64,
    doe: *const f64,
    n: usize,
    score: f64,
) -> DeerStatus {
    guard(|| {
        let b = out(buffer, "buffer")?;
        let idx = slice(indices, n, "indices")?;
        if let Some(&bad) = idx.iter().find(|&&k| k >= b.buffer.len()) {
            return Err(invalid(format!(
                "index {bad} out of range for {} transitions",
                b.buffer.len()
            )));
        }
        b.buffer
            .refresh_priorities(idx, slice(td, n, "td")?, slice(doe, n, "doe")?, score)?;
        Ok(())
    })
}

/// Opens a new epoch after a detected change.
///
/// # Safety
/// `buffer` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn deer_replay_on_change(
    buffer: *mut DeerReplayBuffer,
    detected_at: u64,
    change_point: u64,
) -> DeerStatus {
    guard(|| {
        let b = out(buffer, "buffer")?;
        if change_point > detected_at {
            return Err(invalid("change_point must not exceed detected_at"));
        }
        b.buffer.on_change_event(&DetectionEvent {
            detected_at,
            change_point,
            score: f64::NAN,
        });
        Ok(())
    })
}

/// Raw priority of a slot.
///
/// # Safety
/// `buffer` must be a live handle; `out_priority` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn deer_replay_priority(
    buffer: *const DeerReplayBuffer,
    index: usize,
    out_priority: *mut f64,
) -> DeerStatus {
    guard(|| {
        let b = buffer.as_ref().ok_or_else(|| null("buffer"))?;
        let p = b
            .buffer
            .priority(index)
            .ok_or_else(|| invalid(format!("index {index} out of range")))?;
        *out(out_priority, "out_priority")? = p;
        Ok(())
    })
}

/// Creates a detector with the default classifier settings and the given
/// window geometry and threshold.
///
/// # Safety
/// `out_detector` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn deer_detector_new(
    window: usize,
    samples_per_window: usize,
    sample_len: usize,
    threshold: f64,
    seed: u64,
    out_detector: *mut *mut DeerDetector,
) -> DeerStatus {
    guard(|| {
        let slot = out(out_detector, "out_detector")?;
        let detector = ChangeDetector::new(
            DetectorConfig {
                window,
                samples_per_window,
                sample_len,
                threshold,
                ..Default::default()
            },
            seed,
        )?;
        *slot = Box::into_raw(Box::new(DeerDetector { detector }));
        Ok(())
    })
}

/// Releases a detector. Null is ignored.
///
/// # Safety
/// `detector` must come from [`deer_detector_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn deer_detector_free(detector: *mut DeerDetector) {
    if !detector.is_null() {
        drop(Box::from_raw(detector));
    }
}

/// Feeds the reward observed at `step` (1-based, increasing).
///
/// # Safety
/// `detector` must be a live handle; `out_evaluation` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn deer_detector_observe(
    detector: *mut DeerDetector,
    step: u64,
    reward: f64,
    out_evaluation: *mut DeerEvaluation,
) -> DeerStatus {
    guard(|| {
        let d = out(detector, "detector")?;
        let dst = out(out_evaluation, "out_evaluation")?;
        if !reward.is_finite() {
            return Err(invalid("reward must be finite"));
        }
        let mut result = DeerEvaluation {
            score: d.detector.latest_score(),
            ..Default::default()
        };
        if let Some(eval) = d.detector.observe(step, reward)? {
            result.evaluated = 1;
            result.score = eval.score;
            if let Some(e) = eval.event {
                result.detected = 1;
                result.detected_at = e.detected_at;
                result.change_point = e.change_point;
            }
        }
        *dst = result;
        Ok(())
    })
}

/// Runs one seed of the experiment described by a TOML config and writes its
/// CSV run log to `out_csv`.
///
/// # Safety
/// Both paths must be nul-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn deer_run_experiment(
    config_path: *const c_char,
    seed: u64,
    out_csv: *const c_char,
) -> DeerStatus {
    guard(|| {
        let cfg = ExperimentConfig::load(path_arg(config_path, "config_path")?)?;
        let log = run_experiment(&cfg, seed)?;
        log.save(path_arg(out_csv, "out_csv")?)?;
        Ok(())
    })
}
