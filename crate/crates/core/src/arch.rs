//! The six graph architectures, their bypass / relaxation / constant-gating variants,
//! parameter layout, random initialisation and inheritance between variants.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gates::GateKind;
use crate::node::{Dest, GateRole, GateSpec, NodeKind, NodeRole, NodeSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ArchId {
    MA1,
    MA2,
    MA3,
    MA4,
    MA5,
    MA6,
}

impl ArchId {
    pub const ALL: [ArchId; 6] = [
        ArchId::MA1,
        ArchId::MA2,
        ArchId::MA3,
        ArchId::MA4,
        ArchId::MA5,
        ArchId::MA6,
    ];

    pub fn has_routing(self) -> bool {
        matches!(self, ArchId::MA3 | ArchId::MA5 | ArchId::MA6)
    }

    pub fn has_groundwater(self) -> bool {
        matches!(self, ArchId::MA4 | ArchId::MA5 | ArchId::MA6)
    }

    pub fn has_recharge(self) -> bool {
        !matches!(self, ArchId::MA1 | ArchId::MA3)
    }
}

impl fmt::Display for ArchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for ArchId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ArchId::ALL
            .into_iter()
            .find(|a| a.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidOption(format!("unknown architecture `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Bypass {
    #[default]
    None,
    BP1,
    BP2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gating {
    #[default]
    Sigmoid,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchOptions {
    pub bypass: Bypass,
    pub mass_relax: bool,
    pub gating: Gating,
}

/// Architecture plus options, written like `MA5BP2`, `MA4MR` or `MA5-const`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Variant {
    pub arch: ArchId,
    #[serde(default)]
    pub options: ArchOptions,
}

impl Variant {
    pub fn new(arch: ArchId, options: ArchOptions) -> Self {
        Variant { arch, options }
    }

    pub fn base(arch: ArchId) -> Self {
        Variant::new(arch, ArchOptions::default())
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.arch)?;
        match self.options.bypass {
            Bypass::None => {}
            Bypass::BP1 => f.write_str("BP1")?,
            Bypass::BP2 => f.write_str("BP2")?,
        }
        if self.options.mass_relax {
            f.write_str("MR")?;
        }
        if self.options.gating == Gating::Constant {
            f.write_str("-const")?;
        }
        Ok(())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidOption(format!("unrecognised model variant `{s}`"));
        let upper = s.trim().to_ascii_uppercase();
        let (body, gating) = match upper.strip_suffix("-CONST") {
            Some(b) => (b, Gating::Constant),
            None => (upper.as_str(), Gating::Sigmoid),
        };
        let arch: ArchId = body.get(..3).ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let mut rest = &body[3..];
        let mut options = ArchOptions {
            gating,
            ..Default::default()
        };
        if let Some(r) = rest.strip_prefix("BP1") {
            options.bypass = Bypass::BP1;
            rest = r;
        } else if let Some(r) = rest.strip_prefix("BP2") {
            options.bypass = Bypass::BP2;
            rest = r;
        }
        if let Some(r) = rest.strip_prefix("MR") {
            options.mass_relax = true;
            rest = r;
        }
        if !rest.is_empty() {
            return Err(bad());
        }
        Ok(Variant { arch, options })
    }
}

/// A wired model graph. Nodes are stored in topological order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub arch: ArchId,
    pub options: ArchOptions,
    pub nodes: Vec<NodeSpec>,
    n_params: usize,
}

impl GraphSpec {
    pub fn variant(&self) -> Variant {
        Variant::new(self.arch, self.options)
    }

    pub fn param_count(&self) -> usize {
        self.n_params
    }

    pub fn node_index(&self, role: NodeRole) -> Option<usize> {
        self.nodes.iter().position(|n| n.role == role)
    }

    pub fn node(&self, role: NodeRole) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.role == role)
    }

    /// Every gate with its owning node, in parameter order.
    pub fn gates(&self) -> impl Iterator<Item = (&NodeSpec, &GateSpec)> {
        self.nodes
            .iter()
            .flat_map(|n| n.gates.iter().map(move |g| (n, g)))
    }

    /// Number of flow paths ending in streamflow (bypass excluded).
    pub fn terminal_paths(&self) -> usize {
        self.gates()
            .filter(|(_, g)| g.dest == Dest::Streamflow && g.role != GateRole::Bypass)
            .count()
    }

    pub fn needs_precip_scaling(&self) -> bool {
        self.gates().any(|(_, g)| g.kind.needs_precip())
    }

    pub fn needs_pet_scaling(&self) -> bool {
        self.gates().any(|(_, g)| g.kind.needs_pet())
    }

    /// Copy of this graph with time-constant gating and neither bypass nor relaxation.
    pub fn constant_clone(&self) -> GraphSpec {
        build(
            self.arch,
            ArchOptions {
                bypass: Bypass::None,
                mass_relax: false,
                gating: Gating::Constant,
            },
        )
        .expect("the plain constant variant is always valid")
    }

    /// (node, gate, slot) name for every raw parameter.
    pub fn layout(&self) -> Vec<SlotId> {
        let mut out = Vec::with_capacity(self.n_params);
        for (n, g) in self.gates() {
            for &slot in g.kind.slot_names() {
                out.push(SlotId {
                    node: n.role,
                    gate: g.role,
                    slot: slot.to_string(),
                });
            }
        }
        out
    }

    /// Constrained parameter values keyed as `node.gate.slot`.
    pub fn constrained_params(&self, raw: &[f64]) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for (n, g) in self.gates() {
            let vals = g.kind.constrained(g.params(raw));
            for (slot, v) in g.kind.slot_names().iter().zip(vals) {
                out.insert(format!("{}.{}.{}", n.role, g.role, slot), v);
            }
        }
        out
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n_params {
            return Err(Error::ParamLength {
                expected: self.n_params,
                got: len,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SlotId {
    pub node: NodeRole,
    pub gate: GateRole,
    pub slot: String,
}

impl fmt::Display for SlotId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.node, self.gate, self.slot)
    }
}

pub fn param_count(spec: &GraphSpec) -> usize {
    spec.param_count()
}

struct Builder {
    nodes: Vec<NodeSpec>,
    offset: usize,
}

impl Builder {
    fn gate(&mut self, node: usize, role: GateRole, kind: GateKind, dest: Dest) {
        self.nodes[node].gates.push(GateSpec {
            role,
            kind,
            dest,
            offset: self.offset,
        });
        self.offset += kind.arity();
    }
}

pub fn build(arch: ArchId, options: ArchOptions) -> Result<GraphSpec> {
    if options.mass_relax && !arch.has_groundwater() {
        return Err(Error::InvalidOption(format!(
            "mass relaxation needs a groundwater node, {arch} has none"
        )));
    }
    let constant = options.gating == Gating::Constant;
    let soil_out = if constant {
        GateKind::ConstantOut
    } else {
        GateKind::SigmoidOut3
    };
    let store_out = if constant {
        GateKind::ConstantOut
    } else {
        GateKind::SigmoidOut4
    };
    let loss = if constant {
        GateKind::SigmoidLoss3
    } else {
        GateKind::SigmoidLoss4
    };

    let mut roles = vec![NodeRole::Soil];
    if arch.has_routing() {
        roles.push(NodeRole::Routing);
    }
    if arch.has_groundwater() {
        roles.push(NodeRole::Groundwater);
    }
    let idx = |r: NodeRole| roles.iter().position(|&x| x == r);
    let nodes = roles
        .iter()
        .map(|&role| NodeSpec {
            kind: if role == NodeRole::Soil {
                NodeKind::SoilMoisture
            } else {
                NodeKind::Store
            },
            role,
            gates: Vec::new(),
            et_constrained: role == NodeRole::Soil,
        })
        .collect();
    let mut b = Builder { nodes, offset: 0 };

    let out_dest = idx(NodeRole::Routing).map_or(Dest::Streamflow, Dest::Node);
    b.gate(0, GateRole::Output, soil_out, out_dest);
    if arch.has_recharge() {
        let dest = idx(NodeRole::Groundwater).map_or(Dest::Streamflow, Dest::Node);
        b.gate(0, GateRole::Recharge, soil_out, dest);
    }
    if arch == ArchId::MA6 {
        b.gate(0, GateRole::Quick, soil_out, Dest::Streamflow);
    }
    b.gate(0, GateRole::Loss, loss, Dest::Atmosphere);
    match options.bypass {
        Bypass::None => {}
        Bypass::BP1 => b.gate(0, GateRole::Bypass, GateKind::BypassBP1, Dest::Streamflow),
        Bypass::BP2 => b.gate(0, GateRole::Bypass, GateKind::BypassBP2, Dest::Streamflow),
    }
    if let Some(i) = idx(NodeRole::Routing) {
        b.gate(i, GateRole::Output, store_out, Dest::Streamflow);
    }
    if let Some(i) = idx(NodeRole::Groundwater) {
        b.gate(i, GateRole::Output, store_out, Dest::Streamflow);
        if options.mass_relax {
            b.gate(i, GateRole::MassRelax, GateKind::MassRelax, Dest::Exchange);
        }
    }

    Ok(GraphSpec {
        arch,
        options,
        nodes: b.nodes,
        n_params: b.offset,
    })
}

pub fn build_variant(v: Variant) -> Result<GraphSpec> {
    build(v.arch, v.options)
}

/// Every legal combination of architecture and options.
pub fn all_variants() -> Vec<Variant> {
    let mut out = Vec::new();
    for arch in ArchId::ALL {
        for gating in [Gating::Sigmoid, Gating::Constant] {
            for bypass in [Bypass::None, Bypass::BP1, Bypass::BP2] {
                for mass_relax in [false, true] {
                    if mass_relax && !arch.has_groundwater() {
                        continue;
                    }
                    out.push(Variant::new(
                        arch,
                        ArchOptions {
                            bypass,
                            mass_relax,
                            gating,
                        },
                    ));
                }
            }
        }
    }
    out
}

/// Flat raw parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub values: Vec<f64>,
}

impl ParamBlock {
    pub fn new(spec: &GraphSpec, values: Vec<f64>) -> Result<Self> {
        spec.check_len(values.len())?;
        Ok(ParamBlock { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Uniform draws on [-1, 1] from a generator seeded by `seed`.
pub fn init_params(spec: &GraphSpec, seed: u64) -> ParamBlock {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ParamBlock {
        values: (0..spec.param_count())
            .map(|_| rng.random_range(-1.0..=1.0))
            .collect(),
    }
}

/// One parent contributing parameters, optionally restricted to some of its nodes.
#[derive(Debug, Clone, Copy)]
pub struct LineageSource<'a> {
    pub graph: &'a GraphSpec,
    pub block: &'a ParamBlock,
    /// `None` takes every node of the parent.
    pub roles: Option<&'a [NodeRole]>,
}

/// Which parent (by position) each slot came from; `None` marks a fresh slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub origin: Vec<Option<usize>>,
}

impl Provenance {
    pub fn copied(&self) -> usize {
        self.origin.iter().filter(|o| o.is_some()).count()
    }

    pub fn fresh(&self) -> usize {
        self.origin.len() - self.copied()
    }

    pub fn copied_from(&self, source: usize) -> usize {
        self.origin.iter().filter(|o| **o == Some(source)).count()
    }
}

pub fn inherit_params(
    child: &GraphSpec,
    parent: &GraphSpec,
    parent_block: &ParamBlock,
    seed: u64,
) -> Result<ParamBlock> {
    let src = LineageSource {
        graph: parent,
        block: parent_block,
        roles: None,
    };
    Ok(inherit_composite(child, &[src], seed)?.0)
}

/// Copies shared gates from each source; every other slot is drawn as in [`init_params`].
pub fn inherit_composite(
    child: &GraphSpec,
    sources: &[LineageSource<'_>],
    seed: u64,
) -> Result<(ParamBlock, Provenance)> {
    let mut values = init_params(child, seed).values;
    let mut origin = vec![None; values.len()];
    for (si, src) in sources.iter().enumerate() {
        src.graph.check_len(src.block.len())?;
        if src.graph.options.gating != child.options.gating {
            return Err(Error::IncompatibleLineage(format!(
                "{} and {} use different gating modes",
                src.graph.variant(),
                child.variant()
            )));
        }
        let roles: Vec<NodeRole> = match src.roles {
            Some(r) => r.to_vec(),
            None => src.graph.nodes.iter().map(|n| n.role).collect(),
        };
        for role in roles {
            let pnode = src.graph.node(role).ok_or_else(|| {
                Error::IncompatibleLineage(format!("{} has no {role} node", src.graph.variant()))
            })?;
            let cnode = child.node(role).ok_or_else(|| {
                Error::IncompatibleLineage(format!("{} has no {role} node", child.variant()))
            })?;
            for pg in &pnode.gates {
                let cg = cnode
                    .gate(pg.role)
                    .filter(|cg| cg.kind == pg.kind)
                    .ok_or_else(|| {
                        Error::IncompatibleLineage(format!(
                            "{}.{} ({:?}) of {} has no counterpart in {}",
                            role,
                            pg.role,
                            pg.kind,
                            src.graph.variant(),
                            child.variant()
                        ))
                    })?;
                for k in 0..pg.kind.arity() {
                    let dst = cg.offset + k;
                    if origin[dst].is_some() {
                        return Err(Error::IncompatibleLineage(format!(
                            "{role}.{} is provided by more than one parent",
                            pg.role
                        )));
                    }
                    values[dst] = src.block.values[pg.offset + k];
                    origin[dst] = Some(si);
                }
            }
        }
    }
    Ok((ParamBlock { values }, Provenance { origin }))
}

/// Parents of each variant in the progressive training scheme, with the nodes taken from each.
pub fn default_lineage(v: Variant) -> Vec<(Variant, Option<Vec<NodeRole>>)> {
    let base = Variant::new(
        v.arch,
        ArchOptions {
            bypass: Bypass::None,
            mass_relax: false,
            gating: v.options.gating,
        },
    );
    let same = |a: ArchId| Variant::new(a, base.options);
    if v != base {
        return vec![(base, None)];
    }
    match v.arch {
        ArchId::MA1 => vec![],
        ArchId::MA2 | ArchId::MA3 => vec![(same(ArchId::MA1), None)],
        ArchId::MA4 => vec![(same(ArchId::MA2), None)],
        ArchId::MA5 => vec![
            (same(ArchId::MA2), Some(vec![NodeRole::Soil])),
            (same(ArchId::MA3), Some(vec![NodeRole::Routing])),
            (same(ArchId::MA4), Some(vec![NodeRole::Groundwater])),
        ],
        ArchId::MA6 => vec![(same(ArchId::MA5), None)],
    }
}
