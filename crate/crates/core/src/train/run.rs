use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{adam_step, gradient, AdamState, Problem, TrainConfig};
use crate::arch::{init_params, GraphSpec};
use crate::error::{Error, Result};
use crate::forcing::{ForcingSeries, Subset, SubsetMask};
use crate::metrics::kge_ss;
use crate::node::{GateRole, NodeRole};
use crate::scaling::{MeanStd, ScalingSet};
use crate::sim::simulate_arrays;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunProvenance {
    /// Labels of the parent runs, in source order.
    pub parents: Vec<String>,
    pub copied: usize,
    pub fresh: usize,
    /// Source index per slot; `None` marks a freshly drawn slot.
    pub origin: Vec<Option<usize>>,
}

/// One training attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub variant: String,
    pub graph: GraphSpec,
    pub seed: u64,
    pub config: TrainConfig,
    pub initial_params: Vec<f64>,
    pub final_params: Vec<f64>,
    pub constrained_params: BTreeMap<String, f64>,
    /// Training loss (1 - KGE) before each epoch's update.
    pub loss_history: Vec<f64>,
    pub train_kge: f64,
    pub selection_kge_ss: f64,
    pub wall_time_s: f64,
    pub scaling: ScalingSet,
    pub init_states: Vec<f64>,
    pub provenance: Option<RunProvenance>,
    pub selected: bool,
    pub config_hash: Option<String>,
    pub version: String,
}

fn clip(grad: &mut [f64], max_norm: f64) {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let f = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= f);
    }
}

/// Full-batch ADAM from `init` for the configured schedule.
pub fn train_one(
    problem: &Problem,
    init: Vec<f64>,
    seed: u64,
    cfg: &TrainConfig,
) -> Result<TrainRun> {
    cfg.validate()?;
    let start = Instant::now();
    let mut params = init.clone();
    let mut adam = AdamState::new(params.len());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for epoch in 1..=cfg.epochs {
        let (loss, mut grad) = gradient(problem, &params)?;
        history.push(loss);
        if let Some(c) = cfg.grad_clip {
            clip(&mut grad, c);
        }
        adam_step(&mut adam, &mut params, &grad, cfg.lr_at(epoch), cfg);
        if let Some(es) = cfg.early_stop {
            if loss < best - es.min_delta {
                best = loss;
                stale = 0;
            } else {
                stale += 1;
                if stale >= es.patience {
                    log::info!("seed {seed}: early stop after epoch {epoch}");
                    break;
                }
            }
        }
    }
    let train_kge = problem.score(&params, Subset::Train)?.kge;
    let selection = kge_ss(problem.score(&params, Subset::Select)?.kge);
    if !selection.is_finite() || !train_kge.is_finite() {
        return Err(Error::NonFiniteLoss(format!(
            "seed {seed} ended with non-finite scores"
        )));
    }
    Ok(TrainRun {
        variant: problem.graph.variant().to_string(),
        constrained_params: problem.graph.constrained_params(&params),
        graph: problem.graph.clone(),
        seed,
        config: cfg.clone(),
        initial_params: init,
        final_params: params,
        loss_history: history,
        train_kge,
        selection_kge_ss: selection,
        wall_time_s: start.elapsed().as_secs_f64(),
        scaling: problem.scaling,
        init_states: problem.init.clone(),
        provenance: None,
        selected: false,
        config_hash: None,
        version: env!("CARGO_PKG_VERSION").to_string(),
    })
}

#[derive(Debug, Clone)]
pub struct MultiSeedResult {
    /// Successful runs in seed order.
    pub runs: Vec<TrainRun>,
    pub failures: Vec<(u64, String)>,
    /// Index into `runs` of the selected run.
    pub best: usize,
}

impl MultiSeedResult {
    pub fn best_run(&self) -> &TrainRun {
        &self.runs[self.best]
    }
}

/// Initial parameters (and their lineage) for a given seed.
pub type InitFn<'a> = dyn Fn(u64) -> Result<(Vec<f64>, Option<RunProvenance>)> + Sync + 'a;

/// Independent runs for seeds `seed_base .. seed_base + seeds`; the best selection score wins,
/// ties going to the lower seed.
pub fn train_multi_seed(
    problem: &Problem,
    cfg: &TrainConfig,
    init: &InitFn<'_>,
) -> Result<MultiSeedResult> {
    cfg.validate()?;
    let seeds: Vec<u64> = (0..cfg.seeds as u64).map(|i| cfg.seed_base + i).collect();
    let outcomes: Vec<(u64, Result<TrainRun>)> = seeds
        .par_iter()
        .map(|&seed| {
            let out = init(seed).and_then(|(p0, prov)| {
                let mut run = train_one(problem, p0, seed, cfg)?;
                run.provenance = prov;
                Ok(run)
            });
            (seed, out)
        })
        .collect();

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (seed, out) in outcomes {
        match out {
            Ok(r) => runs.push(r),
            Err(e) => {
                log::warn!("seed {seed} failed: {e}");
                failures.push((seed, e.to_string()));
            }
        }
    }
    if runs.is_empty() {
        let last = failures.last().map(|f| f.1.clone()).unwrap_or_default();
        return Err(Error::AllRunsFailed(last));
    }
    let mut best = 0;
    for (i, r) in runs.iter().enumerate().skip(1) {
        if r.selection_kge_ss > runs[best].selection_kge_ss {
            best = i;
        }
    }
    runs[best].selected = true;
    Ok(MultiSeedResult {
        runs,
        failures,
        best,
    })
}

#[derive(Debug, Clone)]
pub struct Preliminary {
    pub scaling: ScalingSet,
    pub init_states: Vec<f64>,
    /// Learned constant groundwater output gate, if the graph has that node.
    pub k_gw: Option<f64>,
    pub run: TrainRun,
}

/// Trains a time-constant clone of `graph` (one seed) and derives state scaling for the
/// nodes `base` lacks, plus initial states: groundwater starts at q_obs[0] / k_gw, the rest at 0.
pub fn preliminary_stage(
    graph: &GraphSpec,
    forcing: &ForcingSeries,
    mask: &SubsetMask,
    cfg: &TrainConfig,
    base: &ScalingSet,
) -> Result<Preliminary> {
    let clone = graph.constant_clone();
    let zeros = vec![0.0; clone.nodes.len()];
    let problem = Problem::new(clone.clone(), forcing, mask, *base, zeros)?;
    let stage_cfg = TrainConfig {
        seeds: 1,
        epochs: cfg.preliminary_epochs.unwrap_or(cfg.epochs),
        ..cfg.clone()
    };
    let seed = cfg.seed_base;
    let run = train_one(&problem, init_params(&clone, seed).values, seed, &stage_cfg)?;
    let trace = simulate_arrays(
        &clone,
        &run.final_params,
        &problem.precip,
        &problem.pet,
        &problem.scaling,
        &problem.init,
    )?;

    let native = forcing.spinup_len()..forcing.len();
    let mut scaling = *base;
    for (i, node) in clone.nodes.iter().enumerate() {
        if scaling.node(node.role).is_none() {
            let states = trace.states(i);
            scaling.set_node(node.role, Some(MeanStd::of(&states[native.clone()])));
        }
    }

    let k_gw = clone
        .node(NodeRole::Groundwater)
        .and_then(|n| n.gate(GateRole::Output))
        .map(|g| crate::ad::sigmoid(run.final_params[g.offset]));
    let mut init_states = vec![0.0; graph.nodes.len()];
    if let (Some(k), Some(i)) = (k_gw, graph.node_index(NodeRole::Groundwater)) {
        let q0 = forcing
            .records()
            .first()
            .and_then(|r| r.q_obs)
            .ok_or(Error::MissingObservation { index: 0 })?;
        init_states[i] = q0 / k;
    }
    Ok(Preliminary {
        scaling,
        init_states,
        k_gw,
        run,
    })
}

/// A trained parent and the nodes it contributes.
#[derive(Debug, Clone, Copy)]
pub struct ParentRun<'a> {
    pub run: &'a TrainRun,
    pub roles: Option<&'a [NodeRole]>,
}

/// Scaling and initial states for a graph: taken from the parents for the nodes they
/// contribute, from a preliminary stage for anything still missing.
pub fn resolve_context(
    graph: &GraphSpec,
    parents: &[ParentRun<'_>],
    forcing: &ForcingSeries,
    mask: &SubsetMask,
    cfg: &TrainConfig,
) -> Result<(ScalingSet, Vec<f64>, Option<Preliminary>)> {
    let mut scaling = ScalingSet::from_forcing(forcing);
    let mut init = vec![0.0; graph.nodes.len()];
    let mut inherited = vec![false; graph.nodes.len()];
    for p in parents {
        let roles: Vec<NodeRole> = match p.roles {
            Some(r) => r.to_vec(),
            None => p.run.graph.nodes.iter().map(|n| n.role).collect(),
        };
        for role in roles {
            let (Some(ci), Some(pi)) = (graph.node_index(role), p.run.graph.node_index(role))
            else {
                continue;
            };
            if let Some(s) = p.run.scaling.node(role) {
                scaling.set_node(role, Some(s));
            }
            init[ci] = p.run.init_states[pi];
            inherited[ci] = true;
        }
    }
    let missing_scaling = graph
        .nodes
        .iter()
        .any(|n| n.needs_state_scaling() && scaling.node(n.role).is_none());
    let missing_gw = graph
        .node_index(NodeRole::Groundwater)
        .is_some_and(|i| !inherited[i]);
    if !(missing_scaling || missing_gw) {
        return Ok((scaling, init, None));
    }
    let pre = preliminary_stage(graph, forcing, mask, cfg, &scaling)?;
    for (i, v) in pre.init_states.iter().enumerate() {
        if !inherited[i] {
            init[i] = *v;
        }
    }
    Ok((pre.scaling, init, Some(pre)))
}
