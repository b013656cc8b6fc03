//! C interface to the model library.
//!
//! Every function returns an [`McaStatus`] (or NULL / 0 for constructors and
//! queries); the message of the last failure on the calling thread is available
//! through [`mca_last_error`]. Arrays are passed as pointer plus length.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use mca_core::arch::{build_variant, init_params, GraphSpec, Variant};
use mca_core::metrics::kge;
use mca_core::node::NodeRole;
use mca_core::scaling::{MeanStd, ScalingSet};
use mca_core::sim::{run, NoRecord};
use mca_core::train::{gradient, Problem};
use mca_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    LengthMismatch = 3,
    /// Non-finite state, loss or gradient.
    Numerical = 4,
    /// Degenerate observations (constant or zero-mean).
    Degenerate = 5,
    /// A panic was caught at the boundary.
    Internal = 6,
}

/// Node roles accepted by [`mca_model_set_node_scaling`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McaNodeRole {
    Soil = 0,
    Routing = 1,
    Groundwater = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct McaKge {
    pub alpha: f64,
    pub beta: f64,
    /// Linear correlation.
    pub rho: f64,
    pub kge: f64,
    pub kge_ss: f64,
}

/// Opaque model handle.
pub struct McaModel {
    graph: GraphSpec,
    scaling: ScalingSet,
    init: Vec<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> McaStatus {
    match e {
        Error::LengthMismatch(_) | Error::ParamLength { .. } => McaStatus::LengthMismatch,
        Error::NonFiniteState { .. }
        | Error::NonFiniteLoss(_)
        | Error::NonFiniteGradient { .. } => McaStatus::Numerical,
        Error::DegenerateObserved(_) => McaStatus::Degenerate,
        _ => McaStatus::InvalidArgument,
    }
}

fn fail(status: McaStatus, msg: impl Into<String>) -> McaStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning errors and panics into a status and a stored message.
fn guard(f: impl FnOnce() -> Result<(), (McaStatus, String)>) -> McaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => McaStatus::Ok,
        Ok(Err((s, m))) => fail(s, m),
        Err(_) => fail(McaStatus::Internal, "panic inside the library"),
    }
}

fn lib_err(e: Error) -> (McaStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (McaStatus, String) {
    (McaStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn input<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], (McaStatus, String)> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, n))
}

unsafe fn output<'a>(
    p: *mut f64,
    n: usize,
    what: &str,
) -> Result<&'a mut [f64], (McaStatus, String)> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, n))
}

unsafe fn handle<'a>(m: *const McaModel) -> Result<&'a McaModel, (McaStatus, String)> {
    m.as_ref().ok_or_else(|| null("model"))
}

unsafe fn handle_mut<'a>(m: *mut McaModel) -> Result<&'a mut McaModel, (McaStatus, String)> {
    m.as_mut().ok_or_else(|| null("model"))
}

fn check_len(what: &str, got: usize, expected: usize) -> Result<(), (McaStatus, String)> {
    if got != expected {
        return Err((
            McaStatus::LengthMismatch,
            format!("{what} has length {got}, expected {expected}"),
        ));
    }
    Ok(())
}

/// Message of the last failure on this thread, or NULL. The pointer stays valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mca_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Creates a model from a variant label such as `"MA5BP2"` or `"MA1-const"`.
/// Returns NULL on failure. Initial states are zero and no state scaling is set.
///
/// # Safety
/// `variant` must be NULL or a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mca_model_new(variant: *const c_char) -> *mut McaModel {
    let made = catch_unwind(|| -> Result<McaModel, String> {
        if variant.is_null() {
            return Err("variant is NULL".into());
        }
        let label = CStr::from_ptr(variant)
            .to_str()
            .map_err(|e| e.to_string())?;
        let v: Variant = label.parse().map_err(|e: Error| e.to_string())?;
        let graph = build_variant(v).map_err(|e| e.to_string())?;
        let n = graph.nodes.len();
        Ok(McaModel {
            graph,
            scaling: ScalingSet::default(),
            init: vec![0.0; n],
        })
    });
    match made {
        Ok(Ok(m)) => Box::into_raw(Box::new(m)),
        Ok(Err(msg)) => {
            set_error(msg);
            ptr::null_mut()
        }
        Err(_) => {
            set_error("panic inside the library");
            ptr::null_mut()
        }
    }
}

/// # Safety
/// `model` must be NULL or a handle from [`mca_model_new`] that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn mca_model_free(model: *mut McaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of raw parameters, 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mca_model_param_count(model: *const McaModel) -> usize {
    model.as_ref().map_or(0, |m| m.graph.param_count())
}

/// Number of storage nodes (the length of the initial-state vector), 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mca_model_node_count(model: *const McaModel) -> usize {
    model.as_ref().map_or(0, |m| m.graph.nodes.len())
}

/// Sets the mean and standard deviation used to standardise one node's state.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mca_model_set_node_scaling(
    model: *mut McaModel,
    role: McaNodeRole,
    mean: f64,
    std: f64,
) -> McaStatus {
    guard(|| {
        let m = handle_mut(model)?;
        if !(mean.is_finite() && std.is_finite() && std > 0.0) {
            return Err((
                McaStatus::InvalidArgument,
                format!("scaling ({mean}, {std}) is not usable"),
            ));
        }
        let role = match role {
            McaNodeRole::Soil => NodeRole::Soil,
            McaNodeRole::Routing => NodeRole::Routing,
            McaNodeRole::Groundwater => NodeRole::Groundwater,
        };
        m.scaling.set_node(role, Some(MeanStd { mean, std }));
        Ok(())
    })
}

/// Sets the precipitation maximum and PET mean/std used by input-dependent gates.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mca_model_set_forcing_scaling(
    model: *mut McaModel,
    precip_max: f64,
    pet_mean: f64,
    pet_std: f64,
) -> McaStatus {
    guard(|| {
        let m = handle_mut(model)?;
        if !(precip_max > 0.0 && pet_std > 0.0 && pet_mean.is_finite()) {
            return Err((
                McaStatus::InvalidArgument,
                "forcing scaling must be positive and finite".into(),
            ));
        }
        m.scaling.precip_max = precip_max;
        m.scaling.pet = Some(MeanStd {
            mean: pet_mean,
            std: pet_std,
        });
        Ok(())
    })
}

/// Sets the initial state (mm) of every node, in node order.
///
/// # Safety
/// `model` must be NULL or a live handle; `init` must point to `n` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn mca_model_set_init_state(
    model: *mut McaModel,
    init: *const f64,
    n: usize,
) -> McaStatus {
    guard(|| {
        let m = handle_mut(model)?;
        check_len("init", n, m.graph.nodes.len())?;
        let v = input(init, n, "init")?;
        if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err((
                McaStatus::InvalidArgument,
                "initial states must be finite and non-negative".into(),
            ));
        }
        m.init = v.to_vec();
        Ok(())
    })
}

/// Writes a seeded random parameter vector.
///
/// # Safety
/// `model` must be NULL or a live handle; `out` must point to `n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mca_model_init_params(
    model: *const McaModel,
    seed: u64,
    out: *mut f64,
    n: usize,
) -> McaStatus {
    guard(|| {
        let m = handle(model)?;
        check_len("params", n, m.graph.param_count())?;
        output(out, n, "out")?.copy_from_slice(&init_params(&m.graph, seed).values);
        Ok(())
    })
}

/// Simulates `n_steps` days and writes the streamflow.
///
/// # Safety
/// `model` must be NULL or a live handle; `params` must hold `n_params` doubles;
/// `precip`, `pet` and `streamflow` must each hold `n_steps` doubles.
#[no_mangle]
pub unsafe extern "C" fn mca_simulate(
    model: *const McaModel,
    params: *const f64,
    n_params: usize,
    precip: *const f64,
    pet: *const f64,
    n_steps: usize,
    streamflow: *mut f64,
) -> McaStatus {
    guard(|| {
        let m = handle(model)?;
        check_len("params", n_params, m.graph.param_count())?;
        let p = input(params, n_params, "params")?;
        let pr = input(precip, n_steps, "precip")?;
        let pe = input(pet, n_steps, "pet")?;
        let out = output(streamflow, n_steps, "streamflow")?;
        let q = run(&m.graph, p, pr, pe, &m.scaling, &m.init, &mut NoRecord).map_err(lib_err)?;
        out.copy_from_slice(&q);
        Ok(())
    })
}

/// Loss 1 - KGE over the steps whose observation is finite (NaN marks steps to skip)
/// and its gradient with respect to every raw parameter.
///
/// # Safety
/// `model` must be NULL or a live handle; `params` and `grad` must hold `n_params`
/// doubles; `precip`, `pet` and `obs` must hold `n_steps` doubles; `loss` must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn mca_loss_gradient(
    model: *const McaModel,
    params: *const f64,
    n_params: usize,
    precip: *const f64,
    pet: *const f64,
    obs: *const f64,
    n_steps: usize,
    loss: *mut f64,
    grad: *mut f64,
) -> McaStatus {
    guard(|| {
        let m = handle(model)?;
        check_len("params", n_params, m.graph.param_count())?;
        let p = input(params, n_params, "params")?;
        let o = input(obs, n_steps, "obs")?;
        let g = output(grad, n_params, "grad")?;
        if loss.is_null() {
            return Err(null("loss"));
        }
        let problem = Problem {
            graph: m.graph.clone(),
            precip: input(precip, n_steps, "precip")?.to_vec(),
            pet: input(pet, n_steps, "pet")?.to_vec(),
            obs: o.to_vec(),
            train: (0..n_steps).filter(|&t| o[t].is_finite()).collect(),
            select: Vec::new(),
            test: Vec::new(),
            scaling: m.scaling,
            init: m.init.clone(),
        };
        let (l, dg) = gradient(&problem, p).map_err(lib_err)?;
        *loss = l;
        g.copy_from_slice(&dg);
        Ok(())
    })
}

/// KGE components of a simulated against an observed series.
///
/// # Safety
/// `sim` and `obs` must hold `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mca_kge(
    sim: *const f64,
    obs: *const f64,
    n: usize,
    out: *mut McaKge,
) -> McaStatus {
    guard(|| {
        let s = input(sim, n, "sim")?;
        let o = input(obs, n, "obs")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let c = kge(s, o).map_err(lib_err)?;
        *out = McaKge {
            alpha: c.alpha,
            beta: c.beta,
            rho: c.rho,
            kge: c.kge,
            kge_ss: c.kge_ss,
        };
        Ok(())
    })
}
