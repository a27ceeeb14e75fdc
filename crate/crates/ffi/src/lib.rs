//! C ABI over `simattr`.
//!
//! Every entry point returns a [`SimattrStatus`]; on failure the message is
//! available from [`simattr_last_error`] on the same thread. Embedding sets
//! are opaque handles released with [`simattr_embeddings_free`]. Panics are
//! caught at the boundary and reported as `SIMATTR_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, c_void, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use simattr::attribution::{self, RankFilter};
use simattr::brittleness::{self, CounterfactualProbe, SupportMode, SupportQuery, SupportResult};
use simattr::lds;
use simattr::oracle::{self, OracleError, SoftmaxOracle, TrainConfig};
use simattr::store::{self, EmbeddingSet, SyntheticConfig, TargetSample};
use simattr::{EsvmParams, RankedIndices};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimattrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Compute = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimattrMethod {
    L2 = 0,
    Cosine = 1,
    Esvm = 2,
    GradCos = 3,
    SignedSparse = 4,
    Random = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimattrFilter {
    SameClass = 0,
    All = 1,
}

/// Opaque embedding store.
pub struct SimattrEmbeddings {
    inner: EmbeddingSet,
}

/// Returns `C_avg` in `[0, 1]` for the top-`m` prefix, or a negative value
/// to abort the search.
pub type SimattrProbeFn = Option<unsafe extern "C" fn(user_data: *mut c_void, m: usize) -> f64>;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

struct Fail(SimattrStatus, String);

impl Fail {
    fn new(status: SimattrStatus, msg: impl std::fmt::Display) -> Self {
        Fail(status, msg.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SimattrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SimattrStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside simattr");
            SimattrStatus::Panic
        }
    }
}

fn null() -> Fail {
    Fail::new(SimattrStatus::NullPointer, "null pointer argument")
}

fn invalid(msg: impl std::fmt::Display) -> Fail {
    Fail::new(SimattrStatus::InvalidArgument, msg)
}

fn compute(msg: impl std::fmt::Display) -> Fail {
    Fail::new(SimattrStatus::Compute, msg)
}

fn store_fail(e: store::StoreError) -> Fail {
    let status = match e {
        store::StoreError::Io(_) => SimattrStatus::Io,
        store::StoreError::Format(_) | store::StoreError::Corrupt(_) => SimattrStatus::Format,
        store::StoreError::Invalid(_) => SimattrStatus::InvalidArgument,
    };
    Fail::new(status, e)
}

unsafe fn slice<'a, T>(p: *const T, len: usize) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a>(set: *const SimattrEmbeddings) -> Result<&'a EmbeddingSet, Fail> {
    set.as_ref().map(|s| &s.inner).ok_or_else(null)
}

unsafe fn path_arg(path: *const c_char) -> Result<String, Fail> {
    if path.is_null() {
        return Err(null());
    }
    CStr::from_ptr(path)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| invalid("path is not valid UTF-8"))
}

unsafe fn put_handle(out: *mut *mut SimattrEmbeddings, set: EmbeddingSet) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null());
    }
    *out = Box::into_raw(Box::new(SimattrEmbeddings { inner: set }));
    Ok(())
}

/// Message for the last failing call on this thread; empty after success.
/// The pointer stays valid until the next `simattr_*` call on this thread.
#[no_mangle]
pub extern "C" fn simattr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn simattr_embeddings_load(
    path: *const c_char,
    out: *mut *mut SimattrEmbeddings,
) -> SimattrStatus {
    guard(|| {
        let path = path_arg(path)?;
        let set = store::load_embeddings(path).map_err(store_fail)?;
        put_handle(out, set)
    })
}

/// # Safety
/// `set` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn simattr_embeddings_save(
    set: *const SimattrEmbeddings,
    path: *const c_char,
) -> SimattrStatus {
    guard(|| {
        let set = handle(set)?;
        let path = path_arg(path)?;
        store::save_embeddings(set, path).map_err(store_fail)
    })
}

/// Builds a store from caller memory: `features` is `n × d` row-major.
///
/// # Safety
/// Each pointer must reference at least the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn simattr_embeddings_new(
    features: *const f32,
    labels: *const u32,
    ids: *const u64,
    n: usize,
    d: usize,
    num_classes: usize,
    out: *mut *mut SimattrEmbeddings,
) -> SimattrStatus {
    guard(|| {
        let len = n.checked_mul(d).ok_or_else(|| invalid("n·d overflows"))?;
        let set = EmbeddingSet::new(
            slice(features, len)?.to_vec(),
            d,
            slice(labels, n)?.to_vec(),
            slice(ids, n)?.to_vec(),
            num_classes,
        )
        .map_err(store_fail)?;
        put_handle(out, set)
    })
}

/// Gaussian-mixture store; ids equal row indices, rows are class-major.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn simattr_embeddings_generate(
    num_classes: usize,
    samples_per_class: usize,
    d: usize,
    cluster_spread: f64,
    inter_class_distance: f64,
    seed: u64,
    out: *mut *mut SimattrEmbeddings,
) -> SimattrStatus {
    guard(|| {
        let cfg = SyntheticConfig {
            num_classes,
            samples_per_class,
            d,
            cluster_spread,
            inter_class_distance,
            seed,
        };
        put_handle(out, store::generate_synthetic(&cfg).map_err(store_fail)?)
    })
}

/// # Safety
/// `set` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn simattr_embeddings_free(set: *mut SimattrEmbeddings) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// # Safety
/// `set` must be null or a live handle. Null yields 0.
#[no_mangle]
pub unsafe extern "C" fn simattr_embeddings_n(set: *const SimattrEmbeddings) -> usize {
    set.as_ref().map_or(0, |s| s.inner.n())
}

/// # Safety
/// `set` must be null or a live handle. Null yields 0.
#[no_mangle]
pub unsafe extern "C" fn simattr_embeddings_d(set: *const SimattrEmbeddings) -> usize {
    set.as_ref().map_or(0, |s| s.inner.d())
}

/// # Safety
/// `set` must be null or a live handle. Null yields 0.
#[no_mangle]
pub unsafe extern "C" fn simattr_embeddings_num_classes(set: *const SimattrEmbeddings) -> usize {
    set.as_ref().map_or(0, |s| s.inner.num_classes())
}

unsafe fn target_arg(
    set: &EmbeddingSet,
    feature: *const f32,
    d: usize,
    label: u32,
    id: u64,
) -> Result<TargetSample, Fail> {
    if d != set.d() {
        return Err(invalid(format!(
            "target has d={d}, store has d={}",
            set.d()
        )));
    }
    Ok(TargetSample {
        feature: slice(feature, d)?.to_vec(),
        label,
        id,
    })
}

/// Fills `out[0..n]` with one attribution score per training sample.
/// ESVM uses default parameters; GradCos trains a default softmax model
/// seeded with `seed`; Random draws its permutation from `seed`.
///
/// # Safety
/// `feature` must hold `d` floats and `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn simattr_scores(
    set: *const SimattrEmbeddings,
    method: SimattrMethod,
    feature: *const f32,
    d: usize,
    label: u32,
    id: u64,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> SimattrStatus {
    guard(|| {
        let set = handle(set)?;
        let target = target_arg(set, feature, d, label, id)?;
        if out_len < set.n() {
            return Err(Fail::new(
                SimattrStatus::BufferTooSmall,
                format!("need {} slots, got {out_len}", set.n()),
            ));
        }
        let scores = match method {
            SimattrMethod::L2 => attribution::l2_scores(set, &target),
            SimattrMethod::Cosine => attribution::cosine_scores(set, &target),
            SimattrMethod::Esvm => attribution::esvm_scores(
                set,
                &target,
                &EsvmParams {
                    seed,
                    ..EsvmParams::default()
                },
            ),
            SimattrMethod::GradCos => {
                let cfg = TrainConfig::default().with_seed(seed);
                let model = oracle::train(&SoftmaxOracle, set, None, &cfg).map_err(compute)?;
                attribution::gradcos_scores(&model, set, &target)
            }
            SimattrMethod::SignedSparse => attribution::l2_scores(set, &target).and_then(|base| {
                attribution::signed_sparse_scores(
                    set,
                    &target,
                    &base,
                    attribution::DEFAULT_KEEP_FRACTION,
                )
            }),
            SimattrMethod::Random => attribution::random_scores(set, &target, seed),
        }
        .map_err(compute)?;
        slice_mut(out, set.n())?.copy_from_slice(&scores.scores);
        Ok(())
    })
}

/// Top-`k` training indices by descending score, ties broken by index.
/// `*out_len` receives the number written (at most `min(k, out_cap)`).
///
/// # Safety
/// `scores` must hold `n` doubles where `n` is the store size; `out` must
/// hold `out_cap` elements.
#[no_mangle]
pub unsafe extern "C" fn simattr_rank(
    set: *const SimattrEmbeddings,
    scores: *const f64,
    n: usize,
    target_label: u32,
    filter: SimattrFilter,
    k: usize,
    out: *mut usize,
    out_cap: usize,
    out_len: *mut usize,
) -> SimattrStatus {
    guard(|| {
        let set = handle(set)?;
        if out_len.is_null() {
            return Err(null());
        }
        let scores = simattr::ScoreVector::new(slice(scores, n)?.to_vec(), simattr::Method::L2, 0);
        let target = TargetSample {
            feature: vec![0.0; set.d()],
            label: target_label,
            id: 0,
        };
        let filter = match filter {
            SimattrFilter::SameClass => RankFilter::SameClass,
            SimattrFilter::All => RankFilter::All,
        };
        let ranked = attribution::rank(&scores, set, &target, filter, k).map_err(compute)?;
        if ranked.indices.len() > out_cap {
            *out_len = ranked.indices.len();
            return Err(Fail::new(
                SimattrStatus::BufferTooSmall,
                format!("need {} slots, got {out_cap}", ranked.indices.len()),
            ));
        }
        slice_mut(out, ranked.indices.len())?.copy_from_slice(&ranked.indices);
        *out_len = ranked.indices.len();
        Ok(())
    })
}

/// Spearman correlation with average ranks. `*degenerate` is set to 1 when
/// either input is constant (and `*rho` to 0).
///
/// # Safety
/// `a` and `b` must hold `len` doubles; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn simattr_spearman(
    a: *const f64,
    b: *const f64,
    len: usize,
    rho: *mut f64,
    degenerate: *mut i32,
) -> SimattrStatus {
    guard(|| {
        if rho.is_null() || degenerate.is_null() {
            return Err(null());
        }
        let c = lds::spearman(slice(a, len)?, slice(b, len)?).map_err(invalid)?;
        *rho = c.rho;
        *degenerate = c.degenerate as i32;
        Ok(())
    })
}

/// Normalized area under the support CDF over `[0, k]`. Negative entries
/// of `supports` mean "not found".
///
/// # Safety
/// `supports` must hold `count` values and `auc` must be writable.
#[no_mangle]
pub unsafe extern "C" fn simattr_cdf_auc(
    supports: *const i64,
    count: usize,
    k: usize,
    auc: *mut f64,
) -> SimattrStatus {
    guard(|| {
        if auc.is_null() {
            return Err(null());
        }
        let results: Vec<SupportResult> = slice(supports, count)?
            .iter()
            .enumerate()
            .map(|(i, &s)| SupportResult {
                target_id: i as u64,
                mode: SupportMode::Remove,
                k,
                support: usize::try_from(s).ok(),
                probes: vec![],
            })
            .collect();
        if let Some(r) = results.iter().find(|r| r.support.is_some_and(|s| s > k)) {
            return Err(invalid(format!("support {:?} exceeds k={k}", r.support)));
        }
        *auc = brittleness::cdf_and_auc(&results, k).map_err(invalid)?.auc;
        Ok(())
    })
}

struct CallbackProbe {
    f: unsafe extern "C" fn(*mut c_void, usize) -> f64,
    user_data: *mut c_void,
}

impl CounterfactualProbe for CallbackProbe {
    fn c_avg(&self, m: usize) -> Result<f64, OracleError> {
        let c = unsafe { (self.f)(self.user_data, m) };
        if !(0.0..=1.0).contains(&c) {
            return Err(OracleError::Config(format!(
                "callback returned {c} for M={m}"
            )));
        }
        Ok(c)
    }
}

/// Budgeted bisection over prefix sizes `0..=k`, asking `probe` for
/// `C_avg(M)`. `*support` receives the smallest misclassifying size found
/// or -1; `*probes_used` the number of distinct callback invocations.
///
/// # Safety
/// `probe` must be safe to call with `user_data`; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn simattr_compute_support(
    probe: SimattrProbeFn,
    user_data: *mut c_void,
    k: usize,
    budget: usize,
    support: *mut i64,
    probes_used: *mut usize,
) -> SimattrStatus {
    guard(|| {
        let f = probe.ok_or_else(null)?;
        if support.is_null() || probes_used.is_null() {
            return Err(null());
        }
        let query = SupportQuery {
            target: TargetSample {
                feature: vec![],
                label: 0,
                id: 0,
            },
            ranked: RankedIndices {
                indices: (0..k).collect(),
                k,
                filter: RankFilter::All,
            },
            mode: SupportMode::Remove,
            budget,
            n_test: 1,
        };
        let r =
            brittleness::compute_support(&query, CallbackProbe { f, user_data }).map_err(|e| {
                match e {
                    brittleness::SupportError::Query(_) => invalid(e),
                    _ => compute(e),
                }
            })?;
        *support = r.signed_support();
        *probes_used = r.probes.len();
        Ok(())
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn simattr_version() -> *const c_char {
    static VERSION: &CStr =
        match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
            Ok(v) => v,
            Err(_) => panic!("version string"),
        };
    VERSION.as_ptr()
}
