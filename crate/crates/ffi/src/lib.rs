//! C ABI over the mobnet library.
//!
//! Every fallible call returns a [`MobnetStatus`]; on failure the message is
//! kept per thread and read back with [`mobnet_last_error`]. Graphs and
//! partitions are opaque handles released with their `_free` function.
//! Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mobnet::gravity::{fit_gravity_pairs, PairInput};
use mobnet::mapeq::{optimize, walker_rates, Network, Partition, TeleportMode};
use mobnet::mobility::{fit_distribution, radius_of_gyration_points, FitRange, Model};
use mobnet::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MobnetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InsufficientData = 3,
    NoConvergence = 4,
    OutOfRange = 5,
    Internal = 6,
    Panic = 7,
}

pub const MOBNET_TELEPORT_UNIFORM: u32 = 0;
pub const MOBNET_TELEPORT_IN_STRENGTH: u32 = 1;

pub const MOBNET_MODEL_EXPONENTIAL: u32 = 0;
pub const MOBNET_MODEL_STRETCHED_EXPONENTIAL: u32 = 1;
pub const MOBNET_MODEL_POWER_LAW: u32 = 2;
pub const MOBNET_MODEL_TRUNCATED_POWER_LAW: u32 = 3;

/// Directed weighted graph under construction.
pub struct MobnetGraph {
    n: usize,
    arcs: Vec<(usize, usize, f64)>,
}

/// Optimized partition and its codelength.
pub struct MobnetPartition {
    partition: Partition,
    codelength: f64,
    index_bits: f64,
    module_bits: f64,
}

/// Fit parameters; absent parameters are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MobnetFit {
    pub alpha: f64,
    pub lambda: f64,
    pub beta: f64,
    pub x_min: f64,
    pub log_likelihood: f64,
    pub fraction_of_population: f64,
    pub n_samples: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MobnetGravityFit {
    pub beta: f64,
    pub k: f64,
    pub r_squared: f64,
    pub p_value: f64,
    pub n_pairs: u64,
    pub excluded_pairs: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MobnetStatus {
    match e {
        Error::InvalidArgument(_) | Error::Format { .. } | Error::Mismatch(_) => MobnetStatus::InvalidArgument,
        Error::InsufficientData(_) => MobnetStatus::InsufficientData,
        Error::NoConvergence { .. } => MobnetStatus::NoConvergence,
        Error::OutsideGrid { .. } | Error::Uncovered(_) => MobnetStatus::OutOfRange,
        Error::Stage { source, .. } => status_of(source),
        _ => MobnetStatus::Internal,
    }
}

fn guard<F>(body: F) -> MobnetStatus
where
    F: FnOnce() -> Result<(), MobnetStatus>,
{
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => MobnetStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("panic inside mobnet".into());
            MobnetStatus::Panic
        }
    }
}

fn fail(e: Error) -> MobnetStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

fn null(what: &str) -> MobnetStatus {
    set_error(format!("{what} is null"));
    MobnetStatus::NullPointer
}

/// Slice from a C array; `len == 0` accepts a null pointer.
unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], MobnetStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mobnet_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Build identifier, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mobnet_version() -> *const c_char {
    concat!("mobnet ", env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// New graph with `n` nodes and no arcs. Returns null when `n == 0`.
#[no_mangle]
pub extern "C" fn mobnet_graph_new(n: usize) -> *mut MobnetGraph {
    if n == 0 {
        set_error("graph needs at least one node".into());
        return ptr::null_mut();
    }
    Box::into_raw(Box::new(MobnetGraph { n, arcs: Vec::new() }))
}

/// # Safety
/// `graph` must come from [`mobnet_graph_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mobnet_graph_free(graph: *mut MobnetGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Adds arc `from -> to`; repeated arcs accumulate.
///
/// # Safety
/// `graph` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mobnet_graph_add_edge(graph: *mut MobnetGraph, from: usize, to: usize, weight: f64) -> MobnetStatus {
    guard(|| {
        let g = graph.as_mut().ok_or_else(|| null("graph"))?;
        if from >= g.n || to >= g.n {
            set_error(format!("arc ({from}, {to}) outside a graph of {} nodes", g.n));
            return Err(MobnetStatus::OutOfRange);
        }
        if !(weight.is_finite() && weight > 0.0) {
            set_error(format!("arc weight must be positive and finite, got {weight}"));
            return Err(MobnetStatus::InvalidArgument);
        }
        g.arcs.push((from, to, weight));
        Ok(())
    })
}

/// Minimizes the map equation over `graph`. On success `*out` owns a new
/// partition handle.
///
/// # Safety
/// `graph` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mobnet_optimize(
    graph: *const MobnetGraph,
    tau: f64,
    teleport: u32,
    recorded_teleport: bool,
    seed: u64,
    restarts: usize,
    out: *mut *mut MobnetPartition,
) -> MobnetStatus {
    guard(|| {
        let g = graph.as_ref().ok_or_else(|| null("graph"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mode = match teleport {
            MOBNET_TELEPORT_UNIFORM => TeleportMode::Uniform,
            MOBNET_TELEPORT_IN_STRENGTH => TeleportMode::InStrength,
            other => return Err(fail(Error::invalid(format!("unknown teleport mode {other}")))),
        };
        let net = Network::new(g.n, g.arcs.clone()).map_err(fail)?;
        let rates = walker_rates(&net, tau, mode).map_err(fail)?.with_recorded_teleport(recorded_teleport);
        let (partition, c) = optimize(&net, &rates, seed, restarts).map_err(fail)?;
        *out = Box::into_raw(Box::new(MobnetPartition {
            partition,
            codelength: c.total_bits,
            index_bits: c.index_bits,
            module_bits: c.module_bits,
        }));
        Ok(())
    })
}

/// # Safety
/// `partition` must come from [`mobnet_optimize`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mobnet_partition_free(partition: *mut MobnetPartition) {
    if !partition.is_null() {
        drop(Box::from_raw(partition));
    }
}

/// Number of nodes, or 0 for a null handle.
///
/// # Safety
/// `partition` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mobnet_partition_len(partition: *const MobnetPartition) -> usize {
    partition.as_ref().map_or(0, |p| p.partition.len())
}

/// Number of modules, or 0 for a null handle.
///
/// # Safety
/// `partition` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mobnet_partition_module_count(partition: *const MobnetPartition) -> usize {
    partition.as_ref().map_or(0, |p| p.partition.module_count())
}

/// # Safety
/// `partition` must be a live handle and `module` writable.
#[no_mangle]
pub unsafe extern "C" fn mobnet_partition_module_of(
    partition: *const MobnetPartition,
    node: usize,
    module: *mut usize,
) -> MobnetStatus {
    guard(|| {
        let p = partition.as_ref().ok_or_else(|| null("partition"))?;
        let module = module.as_mut().ok_or_else(|| null("module"))?;
        if node >= p.partition.len() {
            return Err(fail(Error::Uncovered(node)));
        }
        *module = p.partition.module_of(node);
        Ok(())
    })
}

/// Codelength in bits; NaN for a null handle. `index_bits` and `module_bits`
/// may be null.
///
/// # Safety
/// `partition` must be null or a live handle; non-null outputs writable.
#[no_mangle]
pub unsafe extern "C" fn mobnet_partition_codelength(
    partition: *const MobnetPartition,
    index_bits: *mut f64,
    module_bits: *mut f64,
) -> f64 {
    let Some(p) = partition.as_ref() else {
        return f64::NAN;
    };
    if let Some(i) = index_bits.as_mut() {
        *i = p.index_bits;
    }
    if let Some(m) = module_bits.as_mut() {
        *m = p.module_bits;
    }
    p.codelength
}

/// Radius of gyration of `n` planar points given as parallel arrays.
///
/// # Safety
/// `xs` and `ys` must hold `n` values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mobnet_radius_of_gyration(xs: *const f64, ys: *const f64, n: usize, out: *mut f64) -> MobnetStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let xs = slice(xs, n, "xs")?;
        let ys = slice(ys, n, "ys")?;
        if n == 0 {
            return Err(fail(Error::InsufficientData("no points".into())));
        }
        let pts: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
        *out = radius_of_gyration_points(&pts);
        Ok(())
    })
}

/// Maximum-likelihood fit of `model` to the samples inside `[lo, hi)`;
/// pass infinity for an open upper end.
///
/// # Safety
/// `samples` must hold `n` values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mobnet_fit_distribution(
    samples: *const f64,
    n: usize,
    model: u32,
    lo: f64,
    hi: f64,
    out: *mut MobnetFit,
) -> MobnetStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let samples = slice(samples, n, "samples")?;
        let model = match model {
            MOBNET_MODEL_EXPONENTIAL => Model::Exponential,
            MOBNET_MODEL_STRETCHED_EXPONENTIAL => Model::StretchedExponential,
            MOBNET_MODEL_POWER_LAW => Model::PowerLaw,
            MOBNET_MODEL_TRUNCATED_POWER_LAW => Model::TruncatedPowerLaw,
            other => return Err(fail(Error::invalid(format!("unknown model {other}")))),
        };
        let range = FitRange::new(lo, hi).map_err(fail)?;
        let fit = fit_distribution(samples, model, range).map_err(fail)?;
        *out = MobnetFit {
            alpha: fit.params.alpha.unwrap_or(f64::NAN),
            lambda: fit.params.lambda.unwrap_or(f64::NAN),
            beta: fit.params.beta.unwrap_or(f64::NAN),
            x_min: fit.params.x_min,
            log_likelihood: fit.log_likelihood,
            fraction_of_population: fit.fraction_of_population,
            n_samples: fit.n_samples as u64,
        };
        Ok(())
    })
}

/// Gravity fit `T = k P_i P_j / d^beta` over `n` region pairs given as
/// parallel arrays of distance, both masses and observed flow.
///
/// # Safety
/// Each array must hold `n` values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mobnet_gravity_fit(
    d: *const f64,
    p_i: *const f64,
    p_j: *const f64,
    t_obs: *const f64,
    n: usize,
    beta: f64,
    out: *mut MobnetGravityFit,
) -> MobnetStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let (d, pi, pj, t) = (slice(d, n, "d")?, slice(p_i, n, "p_i")?, slice(p_j, n, "p_j")?, slice(t_obs, n, "t_obs")?);
        let inputs: Vec<PairInput> = (0..n)
            .map(|k| PairInput {
                i: k,
                j: k + n,
                d: d[k],
                p_i: pi[k],
                p_j: pj[k],
                t_obs: t[k],
            })
            .collect();
        let fit = fit_gravity_pairs(&inputs, beta).map_err(fail)?.fit;
        *out = MobnetGravityFit {
            beta: fit.beta,
            k: fit.k,
            r_squared: fit.r_squared,
            p_value: fit.p_value,
            n_pairs: fit.n_pairs as u64,
            excluded_pairs: fit.excluded_pairs as u64,
        };
        Ok(())
    })
}
