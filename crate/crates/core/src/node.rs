//! Node kinds and the single-node mass-conserving update.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ad::Scalar;
use crate::error::{Error, Result};
use crate::gates::GateKind;

/// Slack allowed on the sum of release gates before it counts as a violation.
pub const GATE_SUM_EPS: f64 = 1e-9;

/// Upper bound on release gates per node (output, recharge, quick, loss).
pub const MAX_RELEASE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    /// Loss gate, one to three output gates, optional input bypass.
    SoilMoisture,
    /// Single output gate, no loss; optional mass relaxation.
    Store,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    #[serde(alias = "sm")]
    Soil,
    #[serde(alias = "ch")]
    Routing,
    #[serde(alias = "gw")]
    Groundwater,
}

impl NodeRole {
    pub const ALL: [NodeRole; 3] = [NodeRole::Soil, NodeRole::Routing, NodeRole::Groundwater];

    /// Short identifier used in column names.
    pub fn tag(self) -> &'static str {
        match self {
            NodeRole::Soil => "sm",
            NodeRole::Routing => "ch",
            NodeRole::Groundwater => "gw",
        }
    }
}

impl fmt::Display for NodeRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for NodeRole {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sm" | "soil" => Ok(NodeRole::Soil),
            "ch" | "routing" => Ok(NodeRole::Routing),
            "gw" | "groundwater" => Ok(NodeRole::Groundwater),
            _ => Err(Error::InvalidOption(format!("unknown node role `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateRole {
    Output,
    Recharge,
    Quick,
    Loss,
    Bypass,
    MassRelax,
}

impl GateRole {
    pub fn tag(self) -> &'static str {
        match self {
            GateRole::Output => "output",
            GateRole::Recharge => "recharge",
            GateRole::Quick => "quick",
            GateRole::Loss => "loss",
            GateRole::Bypass => "bypass",
            GateRole::MassRelax => "mass_relax",
        }
    }

    /// Gates whose value multiplies the node's own state.
    pub fn is_release(self) -> bool {
        matches!(
            self,
            GateRole::Output | GateRole::Recharge | GateRole::Quick | GateRole::Loss
        )
    }
}

impl fmt::Display for GateRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Where a gate's flux goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dest {
    /// Inflow of the node with this index.
    Node(usize),
    Streamflow,
    /// Evapotranspiration.
    Atmosphere,
    /// Unobserved exchange with the surroundings (signed).
    Exchange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateSpec {
    pub role: GateRole,
    pub kind: GateKind,
    pub dest: Dest,
    /// Index of the first raw parameter in the flat parameter vector.
    pub offset: usize,
}

impl GateSpec {
    pub fn params<'a, T>(&self, all: &'a [T]) -> &'a [T] {
        &all[self.offset..self.offset + self.kind.arity()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub kind: NodeKind,
    pub role: NodeRole,
    pub gates: Vec<GateSpec>,
    /// Loss flux may not exceed PET.
    pub et_constrained: bool,
}

impl NodeSpec {
    pub fn gate(&self, role: GateRole) -> Option<&GateSpec> {
        self.gates.iter().find(|g| g.role == role)
    }

    pub fn release_gates(&self) -> impl Iterator<Item = &GateSpec> {
        self.gates.iter().filter(|g| g.role.is_release())
    }

    pub fn needs_state_scaling(&self) -> bool {
        self.gates.iter().any(|g| g.kind.needs_state())
    }
}

/// Result of one node update. `fluxes[i]` belongs to the i-th release gate.
#[derive(Debug, Clone, Copy)]
pub struct NodeUpdate<T> {
    pub next: T,
    pub fluxes: [T; MAX_RELEASE],
    pub n_fluxes: usize,
    /// 1 minus the release gates (the mass-relaxation share is not included).
    pub remember: T,
}

impl<T: Copy> NodeUpdate<T> {
    pub fn fluxes(&self) -> &[T] {
        &self.fluxes[..self.n_fluxes]
    }
}

/// Advances one node by a step.
///
/// `gates` are the constrained values of the node's release gates in node order.
/// `exchange` is the signed mass-relaxation outflow (0 for other nodes).
/// Each release flux is gate × state; on ET-constrained nodes the loss flux is
/// additionally capped at `pet` so that the bound holds exactly.
pub fn node_step<T: Scalar>(
    node: &NodeSpec,
    state: T,
    inflow: T,
    pet: f64,
    gates: &[T],
    exchange: T,
) -> Result<NodeUpdate<T>> {
    let roles = node.release_gates().map(|g| g.role);
    let mut sum = T::cst(0.0);
    let mut fluxes = [T::cst(0.0); MAX_RELEASE];
    let mut n = 0;
    let mut out = state;
    for (role, &g) in roles.zip(gates) {
        sum = sum + g;
        let mut f = g * state;
        if role == GateRole::Loss && node.et_constrained && f.value() > pet {
            f = T::cst(pet);
        }
        fluxes[n] = f;
        n += 1;
        out = out - f;
    }
    if n != gates.len() {
        return Err(Error::LengthMismatch(format!(
            "{} gate values for {} release gates",
            gates.len(),
            n
        )));
    }
    if sum.value() > 1.0 + GATE_SUM_EPS {
        return Err(Error::GateSumViolation { sum: sum.value() });
    }
    let mut next = out - exchange + inflow;
    if next.value() < 0.0 {
        // only reachable through rounding when the gates sum to one
        next = T::cst(0.0);
    }
    Ok(NodeUpdate {
        next,
        fluxes,
        n_fluxes: n,
        remember: T::cst(1.0) - sum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn soil() -> NodeSpec {
        NodeSpec {
            kind: NodeKind::SoilMoisture,
            role: NodeRole::Soil,
            gates: vec![
                GateSpec {
                    role: GateRole::Output,
                    kind: GateKind::SigmoidOut3,
                    dest: Dest::Streamflow,
                    offset: 0,
                },
                GateSpec {
                    role: GateRole::Loss,
                    kind: GateKind::SigmoidLoss4,
                    dest: Dest::Atmosphere,
                    offset: 3,
                },
            ],
            et_constrained: true,
        }
    }

    fn store() -> NodeSpec {
        NodeSpec {
            kind: NodeKind::Store,
            role: NodeRole::Routing,
            gates: vec![GateSpec {
                role: GateRole::Output,
                kind: GateKind::SigmoidOut4,
                dest: Dest::Streamflow,
                offset: 0,
            }],
            et_constrained: false,
        }
    }

    #[test]
    fn closed_gates_accumulate() {
        let u = node_step(&soil(), 40.0, 7.5, 3.0, &[0.0, 0.0], 0.0).unwrap();
        assert_eq!(u.next, 47.5);
        assert_eq!(u.remember, 1.0);
    }

    #[test]
    fn worked_update() {
        let u = node_step(&soil(), 100.0, 10.0, 20.0, &[0.1, 0.05], 0.0).unwrap();
        assert_eq!(u.fluxes(), &[10.0, 5.0]);
        assert!((u.remember - 0.85).abs() < 1e-15);
        assert_eq!(u.next, 95.0);
    }

    #[test]
    fn full_drainage() {
        let u = node_step(&store(), 123.4, 5.5, 0.0, &[1.0], 0.0).unwrap();
        assert_eq!(u.next, 5.5);
        assert_eq!(u.fluxes(), &[123.4]);
    }

    #[test]
    fn loss_flux_never_exceeds_pet() {
        let u = node_step(&soil(), 100.0, 0.0, 20.0, &[0.0, 0.2], 0.0).unwrap();
        assert!(u.fluxes()[1] <= 20.0);
        let u = node_step(&soil(), 100.0, 0.0, 20.0, &[0.0, 0.7], 0.0).unwrap();
        assert_eq!(u.fluxes()[1], 20.0);
    }

    #[test]
    fn oversubscribed_gates_are_rejected() {
        let err = node_step(&soil(), 10.0, 0.0, 100.0, &[0.8, 0.3], 0.0).unwrap_err();
        assert!(matches!(err, Error::GateSumViolation { .. }));
    }
}
