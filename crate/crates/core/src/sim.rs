//! Sequential simulation of a whole graph over a forcing series.

use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::ad::Scalar;
use crate::arch::GraphSpec;
use crate::error::{Error, Result};
use crate::forcing::ForcingSeries;
use crate::gates::{self, GateKind, CAPACITY_SCALE};
use crate::node::{node_step, Dest, GateRole, MAX_RELEASE};
use crate::scaling::{MeanStd, ScalingSet};

/// What the simulator exposes to a [`Recorder`] after every step.
///
/// Gate slices follow the flattened gate order of the graph.
pub struct StepView<'s, T> {
    pub t: usize,
    pub before: &'s [T],
    pub after: &'s [T],
    pub inflow: &'s [T],
    pub remember: &'s [T],
    pub gate_values: &'s [T],
    pub gate_fluxes: &'s [T],
    pub streamflow: T,
    pub rescaled: bool,
}

pub trait Recorder<T> {
    fn record(&mut self, step: &StepView<'_, T>);
}

/// Discards everything.
pub struct NoRecord;

impl<T> Recorder<T> for NoRecord {
    #[inline]
    fn record(&mut self, _: &StepView<'_, T>) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub state_before: f64,
    pub inflow: f64,
    pub state_after: f64,
    /// Fraction of the state retained (1 minus every release and relaxation gate).
    pub remember: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateRecord {
    pub value: f64,
    pub flux: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxStep {
    pub nodes: Vec<NodeRecord>,
    pub gates: Vec<GateRecord>,
    pub streamflow: f64,
    /// The release gates of some node summed past one and were rescaled.
    pub rescaled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub steps: Vec<FluxStep>,
    pub streamflow: Vec<f64>,
    pub config_hash: Option<String>,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// State series of one node (value after each step).
    pub fn states(&self, node: usize) -> Vec<f64> {
        self.steps
            .iter()
            .map(|s| s.nodes[node].state_after)
            .collect()
    }

    pub fn rescale_count(&self) -> usize {
        self.steps.iter().filter(|s| s.rescaled).count()
    }
}

#[derive(Default)]
struct TraceRecorder {
    steps: Vec<FluxStep>,
}

impl Recorder<f64> for TraceRecorder {
    fn record(&mut self, s: &StepView<'_, f64>) {
        let nodes = (0..s.before.len())
            .map(|i| NodeRecord {
                state_before: s.before[i],
                inflow: s.inflow[i],
                state_after: s.after[i],
                remember: s.remember[i],
            })
            .collect();
        let gates = s
            .gate_values
            .iter()
            .zip(s.gate_fluxes)
            .map(|(&value, &flux)| GateRecord { value, flux })
            .collect();
        self.steps.push(FluxStep {
            nodes,
            gates,
            streamflow: s.streamflow,
            rescaled: s.rescaled,
        });
    }
}

/// Per-node constants resolved once before stepping.
struct NodePlan {
    scale: Option<MeanStd>,
    base: usize,
}

fn missing(gate: String, signal: &'static str) -> Error {
    Error::MissingContext { gate, signal }
}

fn plan(graph: &GraphSpec, scaling: &ScalingSet) -> Result<Vec<NodePlan>> {
    let mut base = 0;
    let mut out = Vec::with_capacity(graph.nodes.len());
    for node in &graph.nodes {
        let scale = scaling.node(node.role);
        for g in &node.gates {
            let name = || format!("{}.{}", node.role, g.role);
            if g.kind.needs_state() && scale.is_none() {
                return Err(missing(name(), "state"));
            }
            if g.kind.needs_pet() && scaling.pet.is_none() {
                return Err(missing(name(), "pet"));
            }
            if g.kind.needs_precip()
                && scaling.precip_max.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)
            {
                return Err(missing(name(), "precip"));
            }
        }
        out.push(NodePlan { scale, base });
        base += node.gates.len();
    }
    Ok(out)
}

/// Core recurrence, generic over plain and taped scalars. Returns streamflow per step.
pub fn run<T: Scalar, R: Recorder<T>>(
    graph: &GraphSpec,
    params: &[T],
    precip: &[f64],
    pet: &[f64],
    scaling: &ScalingSet,
    init: &[f64],
    rec: &mut R,
) -> Result<Vec<T>> {
    if params.len() != graph.param_count() {
        return Err(Error::ParamLength {
            expected: graph.param_count(),
            got: params.len(),
        });
    }
    let n = graph.nodes.len();
    if init.len() != n {
        return Err(Error::LengthMismatch(format!(
            "{} initial states for {} nodes",
            init.len(),
            n
        )));
    }
    if let Some(v) = init.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::InvalidOption(format!(
            "initial state {v} is not a finite non-negative value"
        )));
    }
    if precip.len() != pet.len() {
        return Err(Error::LengthMismatch(format!(
            "{} precipitation values but {} PET values",
            precip.len(),
            pet.len()
        )));
    }
    let plans = plan(graph, scaling)?;
    let n_gates = graph.gates().count();
    let pet_scale = scaling.pet.unwrap_or(MeanStd {
        mean: 0.0,
        std: 1.0,
    });

    // Equilibrium of any relaxation gate, in mm; it is a function of the parameters only.
    let mut equilibrium = vec![T::cst(0.0); n];
    for (i, node) in graph.nodes.iter().enumerate() {
        if let (Some(g), Some(s)) = (node.gate(GateRole::MassRelax), plans[i].scale) {
            equilibrium[i] = (g.params(params)[2] * s.std + s.mean).relu();
        }
    }

    // transformed release-gate parameters, by flat gate index
    let consts: Vec<[T; 4]> = graph
        .gates()
        .map(|(_, g)| {
            if g.role.is_release() {
                gates::transform(g.kind, g.params(params))
            } else {
                [T::cst(0.0); 4]
            }
        })
        .collect();

    let zero = T::cst(0.0);
    let mut state: Vec<T> = init.iter().map(|&v| T::cst(v)).collect();
    let mut next = vec![zero; n];
    let mut inflow = vec![zero; n];
    let mut remember = vec![zero; n];
    let mut gate_values = vec![zero; n_gates];
    let mut gate_fluxes = vec![zero; n_gates];
    let mut flows = Vec::with_capacity(precip.len());

    for t in 0..precip.len() {
        let (p, e) = (precip[t], pet[t]);
        let pe = pet_scale.scale(e);
        inflow.iter_mut().for_each(|v| *v = zero);
        inflow[0] = T::cst(p);
        let mut q = zero;
        let mut rescaled = false;

        for (i, node) in graph.nodes.iter().enumerate() {
            let x = state[i];
            let xs = match plans[i].scale {
                Some(s) => (x - s.mean) / s.std,
                None => zero,
            };
            let base = plans[i].base;

            let mut release = [zero; MAX_RELEASE];
            let mut slot = [0usize; MAX_RELEASE];
            let mut n_rel = 0;
            let mut relax = None;
            for (j, g) in node.gates.iter().enumerate() {
                let raw = g.params(params);
                match g.role {
                    GateRole::Bypass => {
                        let (gv, flux) = match g.kind {
                            GateKind::BypassBP1 => gates::bypass_bp1(raw[0], x, p, CAPACITY_SCALE),
                            _ => {
                                let gv =
                                    gates::bypass_bp2(raw[0], raw[1], xs, p / scaling.precip_max);
                                (gv, gv * p)
                            }
                        };
                        inflow[i] = inflow[i] - flux;
                        q = q + flux;
                        gate_values[base + j] = gv;
                        gate_fluxes[base + j] = flux;
                    }
                    GateRole::MassRelax => relax = Some(j),
                    role => {
                        let mut v = gates::release(g.kind, &consts[base + j], xs, T::cst(pe));
                        if role == GateRole::Loss && node.et_constrained {
                            v = gates::constrain_loss_gate(v, e, x);
                        }
                        release[n_rel] = v;
                        slot[n_rel] = j;
                        n_rel += 1;
                    }
                }
            }

            let mut sum = zero;
            for v in &release[..n_rel] {
                sum = sum + *v;
            }
            if sum.value() > 1.0 {
                rescaled = true;
                for v in &mut release[..n_rel] {
                    *v = *v / sum;
                }
                sum = T::cst(1.0);
            }

            let mut exchange = zero;
            let mut rem = T::cst(1.0) - sum;
            if let Some(j) = relax {
                let g = &node.gates[j];
                let s = plans[i].scale.expect("checked in plan");
                let x_hat = (x - s.mean) / s.std;
                let (gv, flux) =
                    gates::mass_relax_flux(g.params(params), x, x_hat, equilibrium[i], rem);
                exchange = flux;
                rem = rem - gv;
                gate_values[base + j] = gv;
                gate_fluxes[base + j] = flux;
            }

            let upd = node_step(node, x, inflow[i], e, &release[..n_rel], exchange)?;
            for k in 0..n_rel {
                let j = slot[k];
                let f = upd.fluxes[k];
                gate_values[base + j] = release[k];
                gate_fluxes[base + j] = f;
                match node.gates[j].dest {
                    Dest::Node(d) => inflow[d] = inflow[d] + f,
                    Dest::Streamflow => q = q + f,
                    Dest::Atmosphere | Dest::Exchange => {}
                }
            }
            if !upd.next.value().is_finite() {
                return Err(Error::NonFiniteState {
                    step: t,
                    node: node.role.tag().to_string(),
                });
            }
            next[i] = upd.next;
            remember[i] = rem;
        }

        rec.record(&StepView {
            t,
            before: &state,
            after: &next,
            inflow: &inflow,
            remember: &remember,
            gate_values: &gate_values,
            gate_fluxes: &gate_fluxes,
            streamflow: q,
            rescaled,
        });
        std::mem::swap(&mut state, &mut next);
        flows.push(q);
    }
    Ok(flows)
}

/// Streamflow only, without building a trace.
pub fn simulate_streamflow(
    graph: &GraphSpec,
    params: &[f64],
    forcing: &ForcingSeries,
    scaling: &ScalingSet,
    init: &[f64],
) -> Result<Vec<f64>> {
    run(
        graph,
        params,
        &forcing.precip(),
        &forcing.pet(),
        scaling,
        init,
        &mut NoRecord,
    )
}

/// Full per-step record of states, gates and fluxes.
pub fn simulate(
    graph: &GraphSpec,
    params: &[f64],
    forcing: &ForcingSeries,
    scaling: &ScalingSet,
    init: &[f64],
) -> Result<SimTrace> {
    simulate_arrays(
        graph,
        params,
        &forcing.precip(),
        &forcing.pet(),
        scaling,
        init,
    )
}

pub fn simulate_arrays(
    graph: &GraphSpec,
    params: &[f64],
    precip: &[f64],
    pet: &[f64],
    scaling: &ScalingSet,
    init: &[f64],
) -> Result<SimTrace> {
    let mut rec = TraceRecorder::default();
    let streamflow = run(graph, params, precip, pet, scaling, init, &mut rec)?;
    Ok(SimTrace {
        steps: rec.steps,
        streamflow,
        config_hash: None,
    })
}

/// Column names of a trace export, derived from node and gate identifiers.
pub fn trace_columns(graph: &GraphSpec) -> Vec<String> {
    let mut cols = vec!["date".to_string()];
    for node in &graph.nodes {
        let tag = node.role.tag();
        cols.push(format!("{tag}_state"));
        cols.push(format!("{tag}_inflow"));
        cols.push(format!("{tag}_remember"));
    }
    for (node, g) in graph.gates() {
        cols.push(format!("{}_{}_gate", node.role.tag(), g.role.tag()));
        cols.push(format!("{}_{}_flux", node.role.tag(), g.role.tag()));
    }
    cols.push("streamflow".into());
    cols
}

/// Writes one row per step; numbers carry 17 significant digits.
pub fn write_trace_csv(
    trace: &SimTrace,
    graph: &GraphSpec,
    dates: &[NaiveDate],
    path: &Path,
) -> Result<()> {
    if dates.len() != trace.len() {
        return Err(Error::LengthMismatch(format!(
            "{} dates for {} trace steps",
            dates.len(),
            trace.len()
        )));
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    if let Some(h) = &trace.config_hash {
        writeln!(w, "# config_hash={h}").map_err(io)?;
    }
    writeln!(w, "{}", trace_columns(graph).join(",")).map_err(io)?;
    for (s, d) in trace.steps.iter().zip(dates) {
        let mut line = d.to_string();
        for n in &s.nodes {
            for v in [n.state_after, n.inflow, n.remember] {
                line.push_str(&format!(",{v:.16e}"));
            }
        }
        for g in &s.gates {
            line.push_str(&format!(",{:.16e},{:.16e}", g.value, g.flux));
        }
        line.push_str(&format!(",{:.16e}", s.streamflow));
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}
