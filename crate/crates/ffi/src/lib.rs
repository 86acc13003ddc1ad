//! C ABI for `jointage`.
//!
//! Models live behind the opaque [`JaModel`] handle. Every fallible call
//! returns a [`JaStatus`]; on failure the message is available from
//! [`ja_last_error`] on the same thread. Status codes match the exit codes
//! of the `jointage` command line tool.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use jointage::cli::CliError;
use jointage::disciplines::{self, Discipline, MultiSourceParams};
use jointage::model::ShsModel;
use jointage::simulator::{self, Budget, SimConfig, SimQuery, Warmup};
use jointage::solver::{MgfQuery, MomentQuery, Solver, SolverConfig};

/// Result of a call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JaStatus {
    Ok = 0,
    /// Bad parameters, malformed model or query.
    InvalidArgument = 2,
    /// `s` lies outside the region where the MGF exists.
    OutsideRegion = 3,
    /// Unstable system or non-ergodic chain.
    Unstable = 4,
    /// A numerical guard tripped (diverging MGF estimate).
    NumericalGuard = 5,
    NullPointer = 6,
    /// The output buffer is too small; the needed size was written.
    BufferTooSmall = 7,
    /// Internal error (a panic caught at the boundary).
    Internal = 8,
}

/// Queueing discipline of the multi-source model.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JaDiscipline {
    /// LCFS without preemption.
    Np = 0,
    /// LCFS with preemption in service.
    Ps = 1,
    /// LCFS with source-aware preemption in service.
    Sa = 2,
}

impl From<JaDiscipline> for Discipline {
    fn from(d: JaDiscipline) -> Self {
        match d {
            JaDiscipline::Np => Discipline::Np,
            JaDiscipline::Ps => Discipline::Ps,
            JaDiscipline::Sa => Discipline::Sa,
        }
    }
}

/// Opaque model handle.
pub struct JaModel {
    model: ShsModel,
}

/// Kind of a simulated quantity.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JaQueryKind {
    /// E[x_i]
    Mean = 0,
    /// E[x_i^2]
    SecondMoment = 1,
    /// E[x_i x_j]
    CrossMoment = 2,
    /// Correlation of x_i and x_j.
    Correlation = 3,
    /// E[exp(sum_k s_k x_{ages_k})]
    Mgf = 4,
}

/// One simulated quantity. `ages`, `s` and `order` are read for `Mgf` only.
#[repr(C)]
pub struct JaSimQuery {
    pub kind: JaQueryKind,
    pub i: usize,
    pub j: usize,
    pub ages: *const usize,
    pub s: *const f64,
    pub order: usize,
}

/// Simulation settings. `events > 0` selects an event budget, otherwise
/// `time` is the simulated-time budget.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct JaSimConfig {
    pub seed: u64,
    pub events: u64,
    pub time: f64,
    /// Fraction of the budget discarded as warmup, in [0, 1).
    pub warmup_fraction: f64,
    pub replications: usize,
}

/// Estimate with its batch-means standard error.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct JaEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(JaStatus, String);

impl From<CliError> for Failure {
    fn from(e: CliError) -> Self {
        let status = match e.code {
            3 => JaStatus::OutsideRegion,
            4 => JaStatus::Unstable,
            5 => JaStatus::NumericalGuard,
            _ => JaStatus::InvalidArgument,
        };
        Failure(status, e.message)
    }
}

macro_rules! impl_failure {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                CliError::from(e).into()
            }
        }
    )*};
}
impl_failure!(
    jointage::disciplines::DisciplineError,
    jointage::solver::SolverError,
    jointage::simulator::SimError,
    jointage::model::ModelError
);

fn invalid(message: impl Into<String>) -> Failure {
    Failure(JaStatus::InvalidArgument, message.into())
}

fn null(name: &str) -> Failure {
    Failure(JaStatus::NullPointer, format!("{name} is null"))
}

/// Runs `f`, records any failure and converts panics to `Internal`.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> JaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            JaStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(&message);
            status
        }
        Err(_) => {
            set_error("internal error");
            JaStatus::Internal
        }
    }
}

unsafe fn model_ref<'a>(model: *const JaModel) -> Result<&'a ShsModel, Failure> {
    model.as_ref().map(|m| &m.model).ok_or_else(|| null("model"))
}

unsafe fn input<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        Ok(&[])
    } else if p.is_null() {
        Err(null(name))
    } else {
        Ok(slice::from_raw_parts(p, len))
    }
}

unsafe fn write<T>(out: *mut T, value: T, name: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(name));
    }
    out.write(value);
    Ok(())
}

unsafe fn handle(out: *mut *mut JaModel, model: ShsModel) -> Result<(), Failure> {
    write(out, ptr::null_mut(), "out")?;
    out.write(Box::into_raw(Box::new(JaModel { model })));
    Ok(())
}

unsafe fn params(lambdas: *const f64, n: usize, mu: f64) -> Result<MultiSourceParams, Failure> {
    Ok(MultiSourceParams::new(input(lambdas, n, "lambdas")?.to_vec(), mu)?)
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ja_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, empty after a success.
/// Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn ja_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parses a model from its JSON description.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ja_model_from_json(json: *const c_char, out: *mut *mut JaModel) -> JaStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|_| invalid("json is not UTF-8"))?;
        let model = ShsModel::from_json(text)?;
        handle(out, model)
    })
}

/// Builds the model of `n` sources with arrival rates `lambdas` and service
/// rate `mu` under `discipline`.
///
/// # Safety
/// `lambdas` must point to `n` doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn ja_model_build(
    discipline: JaDiscipline,
    lambdas: *const f64,
    n: usize,
    mu: f64,
    out: *mut *mut JaModel,
) -> JaStatus {
    guard(|| {
        let p = params(lambdas, n, mu)?;
        let model = disciplines::build_model(&p, discipline.into());
        handle(out, model)
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ja_model_free(model: *mut JaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of discrete states and age dimension.
///
/// # Safety
/// `model` must be a live handle; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn ja_model_dims(model: *const JaModel, num_states: *mut usize, age_dim: *mut usize) -> JaStatus {
    guard(|| {
        let m = model_ref(model)?;
        write(num_states, m.num_states(), "num_states")?;
        write(age_dim, m.age_dim(), "age_dim")
    })
}

/// Writes the model JSON with a trailing NUL into `buf`. `len` receives the
/// size needed including the NUL; a null `buf` only queries it.
///
/// # Safety
/// `buf` must have room for `cap` bytes when not null.
#[no_mangle]
pub unsafe extern "C" fn ja_model_to_json(
    model: *const JaModel,
    buf: *mut c_char,
    cap: usize,
    len: *mut usize,
) -> JaStatus {
    guard(|| {
        let text = model_ref(model)?.to_json();
        let needed = text.len() + 1;
        write(len, needed, "len")?;
        if buf.is_null() {
            return Ok(());
        }
        if cap < needed {
            return Err(Failure(
                JaStatus::BufferTooSmall,
                format!("need {needed} bytes, got {cap}"),
            ));
        }
        ptr::copy_nonoverlapping(text.as_ptr(), buf.cast(), text.len());
        *buf.add(text.len()) = 0;
        Ok(())
    })
}

fn solver(model: &ShsModel) -> Result<Solver<'_>, Failure> {
    Ok(Solver::new(model, SolverConfig::default())?)
}

/// Stationary distribution of the discrete chain into `out[0..num_states]`.
///
/// # Safety
/// `out` must have room for `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn ja_stationary_distribution(model: *const JaModel, out: *mut f64, cap: usize) -> JaStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        if cap < m.num_states() {
            return Err(Failure(
                JaStatus::BufferTooSmall,
                format!("need {} entries, got {cap}", m.num_states()),
            ));
        }
        let pi = solver(m)?.distribution().to_vec();
        ptr::copy_nonoverlapping(pi.as_ptr(), out, pi.len());
        Ok(())
    })
}

/// Stationary joint moment `E[prod_k x_{ages_k}^{m_k}]`.
///
/// # Safety
/// `ages` and `m` must point to `order` entries; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ja_joint_moment(
    model: *const JaModel,
    ages: *const usize,
    m: *const u32,
    order: usize,
    out: *mut f64,
) -> JaStatus {
    guard(|| {
        let model = model_ref(model)?;
        let ages = input(ages, order, "ages")?;
        let m = input(m, order, "m")?.to_vec();
        if order == 0 {
            return Err(invalid("order must be at least 1"));
        }
        let sol = solver(model)?.joint_moments(&MomentQuery { m })?;
        write(out, sol.value(ages)?, "out")
    })
}

/// Stationary joint MGF `E[exp(sum_k s_k x_{ages_k})]`. `max_eig`, when not
/// null, receives the largest real eigenvalue of the systems solved.
///
/// # Safety
/// `ages` and `s` must point to `order` entries; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ja_joint_mgf(
    model: *const JaModel,
    ages: *const usize,
    s: *const f64,
    order: usize,
    out: *mut f64,
    max_eig: *mut f64,
) -> JaStatus {
    guard(|| {
        let model = model_ref(model)?;
        let query = MgfQuery {
            ages: input(ages, order, "ages")?.to_vec(),
            s: input(s, order, "s")?.to_vec(),
        };
        if order == 0 {
            return Err(invalid("order must be at least 1"));
        }
        let sol = solver(model)?.joint_mgf(&query)?;
        if !max_eig.is_null() {
            max_eig.write(sol.max_real_eigenvalue);
        }
        write(out, sol.value, "out")
    })
}

/// Stability of the order-`order` moment systems, shifted by `sum(s)` when
/// `s` is not null. `stable` receives 1 or 0.
///
/// # Safety
/// `s` must point to `order` doubles when not null; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn ja_stability(
    model: *const JaModel,
    order: usize,
    s: *const f64,
    max_eig: *mut f64,
    stable: *mut c_int,
) -> JaStatus {
    guard(|| {
        let model = model_ref(model)?;
        let s = if s.is_null() { None } else { Some(input(s, order, "s")?) };
        let report = solver(model)?.stability(order, s)?;
        write(max_eig, report.max_real_eigenvalue, "max_eig")?;
        write(stable, c_int::from(report.stable), "stable")
    })
}

/// Closed-form joint MGF of the sources `k` (1-based) at `s`.
///
/// # Safety
/// `lambdas` must point to `n` doubles, `k` and `s` to `len` entries.
#[no_mangle]
pub unsafe extern "C" fn ja_closed_mgf(
    discipline: JaDiscipline,
    lambdas: *const f64,
    n: usize,
    mu: f64,
    k: *const usize,
    s: *const f64,
    len: usize,
    out: *mut f64,
) -> JaStatus {
    guard(|| {
        let p = params(lambdas, n, mu)?;
        let v = disciplines::joint_mgf(&p, discipline.into(), input(k, len, "k")?, input(s, len, "s")?)?;
        write(out, v, "out")
    })
}

/// Closed-form mean, second moment of source `i`, cross moment and
/// correlation of sources `i` and `j` (1-based). Null outputs are skipped.
///
/// # Safety
/// `lambdas` must point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn ja_closed_moments(
    discipline: JaDiscipline,
    lambdas: *const f64,
    n: usize,
    mu: f64,
    i: usize,
    j: usize,
    mean: *mut f64,
    second_moment: *mut f64,
    cross_moment: *mut f64,
    correlation: *mut f64,
) -> JaStatus {
    guard(|| {
        let p = params(lambdas, n, mu)?;
        let d = discipline.into();
        let m = disciplines::moments(&p, d, i, j)?;
        let r = disciplines::correlation(&p, d, i, j)?;
        for (out, v) in [
            (mean, m.mean[0]),
            (second_moment, m.second_moment[0]),
            (cross_moment, m.cross_moment),
            (correlation, r),
        ] {
            if !out.is_null() {
                out.write(v);
            }
        }
        Ok(())
    })
}

/// Load at which the symmetric two-source NP correlation changes sign.
#[no_mangle]
pub extern "C" fn ja_rho_threshold_np() -> f64 {
    disciplines::rho_threshold_np()
}

unsafe fn sim_query(q: &JaSimQuery) -> Result<SimQuery, Failure> {
    Ok(match q.kind {
        JaQueryKind::Mean => SimQuery::Mean(q.i),
        JaQueryKind::SecondMoment => SimQuery::SecondMoment(q.i),
        JaQueryKind::CrossMoment => SimQuery::CrossMoment(q.i, q.j),
        JaQueryKind::Correlation => SimQuery::Correlation(q.i, q.j),
        JaQueryKind::Mgf => SimQuery::Mgf {
            ages: input(q.ages, q.order, "ages")?.to_vec(),
            s: input(q.s, q.order, "s")?.to_vec(),
        },
    })
}

/// Monte Carlo estimates of `queries` into `out[0..count]`.
///
/// # Safety
/// `config` must be readable, `queries` and `out` must hold `count` entries.
#[no_mangle]
pub unsafe extern "C" fn ja_simulate(
    model: *const JaModel,
    config: *const JaSimConfig,
    queries: *const JaSimQuery,
    count: usize,
    out: *mut JaEstimate,
) -> JaStatus {
    guard(|| {
        let model = model_ref(model)?;
        let c = config.as_ref().ok_or_else(|| null("config"))?;
        let queries = input(queries, count, "queries")?
            .iter()
            .map(|q| sim_query(q))
            .collect::<Result<Vec<_>, _>>()?;
        if count > 0 && out.is_null() {
            return Err(null("out"));
        }
        let config = SimConfig {
            seed: c.seed,
            budget: if c.events > 0 {
                Budget::Events(c.events)
            } else {
                Budget::Time(c.time)
            },
            warmup: Warmup::Fraction(c.warmup_fraction),
            replications: c.replications,
        };
        let est = simulator::simulate(model, &config, &queries)?;
        for (k, v) in est.values.iter().enumerate() {
            out.add(k).write(JaEstimate {
                estimate: v.estimate,
                std_error: v.std_error,
            });
        }
        Ok(())
    })
}
