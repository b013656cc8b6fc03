//! Gate forms, their raw-parameter transforms and the special-purpose fluxes.
//!
//! Raw parameters are unconstrained reals. Saturations and floors go through the
//! logistic, slopes that must stay positive go through `exp`, biases stay raw.

use serde::{Deserialize, Serialize};

use crate::ad::Scalar;
use crate::error::{Error, Result};

/// Default soil-moisture capacity scale for the BP1 bypass, in mm.
pub const CAPACITY_SCALE: f64 = 500.0;

/// Below this precipitation (mm/day) the BP1 gate is defined as 0.
pub const PRECIP_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateKind {
    /// logistic(k)
    ConstantOut,
    /// kappa * sigmoid(a * x + b)
    SigmoidOut3,
    /// g_lo + (g_hi - g_lo) * sigmoid(a * x + b)
    SigmoidOut4,
    /// kappa * sigmoid(a_x * x + a_pe * pe + b)
    SigmoidLoss4,
    /// kappa * sigmoid(a_pe * pe + b); loss gate of the time-constant variants
    SigmoidLoss3,
    BypassBP1,
    BypassBP2,
    MassRelax,
}

impl GateKind {
    pub fn slot_names(self) -> &'static [&'static str] {
        match self {
            GateKind::ConstantOut => &["k"],
            GateKind::SigmoidOut3 => &["kappa", "a", "b"],
            GateKind::SigmoidOut4 => &["g_lo", "g_hi", "a", "b"],
            GateKind::SigmoidLoss4 => &["kappa", "a_x", "a_pe", "b"],
            GateKind::SigmoidLoss3 => &["kappa", "a_pe", "b"],
            GateKind::BypassBP1 => &["theta_c"],
            GateKind::BypassBP2 => &["a", "b"],
            GateKind::MassRelax => &["kappa", "a", "c"],
        }
    }

    pub fn arity(self) -> usize {
        self.slot_names().len()
    }

    pub fn needs_state(self) -> bool {
        matches!(
            self,
            GateKind::SigmoidOut3
                | GateKind::SigmoidOut4
                | GateKind::SigmoidLoss4
                | GateKind::BypassBP2
                | GateKind::MassRelax
        )
    }

    pub fn needs_pet(self) -> bool {
        matches!(self, GateKind::SigmoidLoss4 | GateKind::SigmoidLoss3)
    }

    pub fn needs_precip(self) -> bool {
        matches!(self, GateKind::BypassBP2)
    }

    /// Maps raw slots to their constrained values (for reports).
    pub fn constrained(self, raw: &[f64]) -> Vec<f64> {
        let lg = crate::ad::sigmoid;
        match self {
            GateKind::ConstantOut => vec![lg(raw[0])],
            GateKind::SigmoidOut3 => vec![lg(raw[0]), raw[1].exp(), raw[2]],
            GateKind::SigmoidOut4 => {
                let lo = lg(raw[0]);
                vec![lo, lo + (1.0 - lo) * lg(raw[1]), raw[2].exp(), raw[3]]
            }
            GateKind::SigmoidLoss4 => vec![lg(raw[0]), raw[1].exp(), raw[2], raw[3]],
            GateKind::SigmoidLoss3 => vec![lg(raw[0]), raw[1], raw[2]],
            GateKind::BypassBP1 => vec![CAPACITY_SCALE * raw[0].exp()],
            GateKind::BypassBP2 => raw.to_vec(),
            GateKind::MassRelax => vec![lg(raw[0]), raw[1].exp(), raw[2]],
        }
    }
}

/// Scaled signals available to a gate at one timestep.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GateContext {
    /// (X - mean) / std of the owning node's state.
    pub state: Option<f64>,
    /// (PET - mean) / std.
    pub pet: Option<f64>,
    /// Precipitation divided by its record maximum.
    pub precip: Option<f64>,
}

/// Constrained values of a release gate's raw parameters (unused slots are 0).
///
/// These are constant over a simulation, so the simulator computes them once.
#[inline]
pub(crate) fn transform<T: Scalar>(kind: GateKind, raw: &[T]) -> [T; 4] {
    let z = T::cst(0.0);
    match kind {
        GateKind::ConstantOut => [raw[0].sigmoid(), z, z, z],
        GateKind::SigmoidOut3 => [raw[0].sigmoid(), raw[1].exp(), raw[2], z],
        GateKind::SigmoidOut4 => {
            let lo = raw[0].sigmoid();
            let span = (T::cst(1.0) - lo) * raw[1].sigmoid();
            [lo, span, raw[2].exp(), raw[3]]
        }
        GateKind::SigmoidLoss4 => [raw[0].sigmoid(), raw[1].exp(), raw[2], raw[3]],
        GateKind::SigmoidLoss3 => [raw[0].sigmoid(), raw[1], raw[2], z],
        GateKind::BypassBP1 | GateKind::BypassBP2 | GateKind::MassRelax => {
            unreachable!("{kind:?} is not a release gate")
        }
    }
}

/// Release gate value from transformed parameters, scaled state `x` and scaled PET `pe`.
#[inline]
pub(crate) fn release<T: Scalar>(kind: GateKind, c: &[T; 4], x: T, pe: T) -> T {
    match kind {
        GateKind::ConstantOut => c[0],
        GateKind::SigmoidOut3 => c[0] * (c[1] * x + c[2]).sigmoid(),
        // c[1] holds g_hi - g_lo
        GateKind::SigmoidOut4 => c[0] + c[1] * (c[2] * x + c[3]).sigmoid(),
        GateKind::SigmoidLoss4 => c[0] * (c[1] * x + c[2] * pe + c[3]).sigmoid(),
        GateKind::SigmoidLoss3 => c[0] * (c[1] * pe + c[2]).sigmoid(),
        GateKind::BypassBP1 | GateKind::BypassBP2 | GateKind::MassRelax => {
            unreachable!("{kind:?} is not a release gate")
        }
    }
}

pub(crate) fn eval_release<T: Scalar>(kind: GateKind, raw: &[T], x: T, pe: T) -> T {
    release(kind, &transform(kind, raw), x, pe)
}

/// Public single-gate evaluation with arity and context checks.
///
/// Bypass gates are evaluated as in [`bypass_bp2`]; BP1 and mass relaxation need
/// physical quantities and are rejected here.
pub fn gate_eval(kind: GateKind, raw: &[f64], ctx: &GateContext) -> Result<f64> {
    let name = format!("{kind:?}");
    if raw.len() != kind.arity() {
        return Err(Error::ArityMismatch {
            gate: name,
            expected: kind.arity(),
            got: raw.len(),
        });
    }
    let need = |v: Option<f64>, wanted: bool, signal: &'static str| -> Result<f64> {
        match (v, wanted) {
            (Some(v), _) => Ok(v),
            (None, false) => Ok(0.0),
            (None, true) => Err(Error::MissingContext {
                gate: name.clone(),
                signal,
            }),
        }
    };
    let x = need(ctx.state, kind.needs_state(), "state")?;
    let pe = need(ctx.pet, kind.needs_pet(), "pet")?;
    let un = need(ctx.precip, kind.needs_precip(), "precip")?;
    match kind {
        GateKind::BypassBP2 => Ok(bypass_bp2(raw[0], raw[1], x, un)),
        GateKind::BypassBP1 | GateKind::MassRelax => Err(Error::InvalidOption(format!(
            "{name} produces a flux; evaluate it with its dedicated function"
        ))),
        _ => Ok(eval_release(kind, raw, x, pe)),
    }
}

/// Caps a loss gate so that the loss flux cannot exceed PET.
#[inline]
pub fn constrain_loss_gate<T: Scalar>(g: T, pet: f64, state: T) -> T {
    if state.value() <= 0.0 {
        return g;
    }
    let cap = T::cst(pet) / state;
    g - (g - cap).relu()
}

/// Capacity-excess bypass. Returns (gate, bypass flux).
#[inline]
pub fn bypass_bp1<T: Scalar>(theta_raw: T, state: T, precip: f64, w_s: f64) -> (T, T) {
    let capacity = theta_raw.exp() * w_s;
    let excess = (state + precip - capacity).relu();
    let p = T::cst(precip);
    let flux = excess.min(p);
    let gate = if precip > PRECIP_EPS {
        flux / precip
    } else {
        T::cst(0.0)
    };
    let flux = if precip > PRECIP_EPS {
        flux
    } else {
        T::cst(0.0)
    };
    (gate, flux)
}

/// Learned saturation bypass; `x` is the scaled soil state, `u` the normalised precipitation.
#[inline]
pub fn bypass_bp2<T: Scalar>(a: T, b: T, x: T, u: f64) -> T {
    (b + a * (x + u)).sigmoid()
}

/// Clamps a signed relaxation value so the node cannot release more than it retains.
#[inline]
pub fn clamp_relax<T: Scalar>(f: T, remember: T) -> T {
    f - (f - remember).relu()
}

/// Mass-relaxation exchange. Returns (gate, flux); positive flux leaves the node.
///
/// `x_hat` is the scaled state, `equilibrium` the equilibrium state in mm and
/// `remember` the fraction left after the node's other releases.
#[inline]
pub fn mass_relax_flux<T: Scalar>(
    raw: &[T],
    state: T,
    x_hat: T,
    equilibrium: T,
    remember: T,
) -> (T, T) {
    let f = raw[0].sigmoid() * (raw[1].exp() * (x_hat - raw[2])).tanh();
    let g = clamp_relax(f, remember);
    (g, g * (state - equilibrium).abs())
}
