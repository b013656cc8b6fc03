//! Differentiable loss, ADAM and the training protocol.

mod run;

pub use run::{
    preliminary_stage, resolve_context, train_multi_seed, train_one, MultiSeedResult, ParentRun,
    Preliminary, RunProvenance, TrainRun,
};

use serde::{Deserialize, Serialize};

use crate::ad::{Scalar, Tape, Var};
use crate::arch::GraphSpec;
use crate::error::{Error, Result};
use crate::forcing::{ForcingSeries, Subset, SubsetMask};
use crate::metrics::{kge_generic, kge_ss, KgeComponents};
use crate::scaling::ScalingSet;
use crate::sim::{run, NoRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    /// Epochs without improvement before stopping.
    pub patience: usize,
    pub min_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Learning rate after `lr_switch_epoch`.
    pub lr_late: f64,
    /// Last epoch (1-based) that uses `lr`.
    pub lr_switch_epoch: usize,
    pub seeds: usize,
    pub seed_base: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale the gradient when its Euclidean norm exceeds this.
    pub grad_clip: Option<f64>,
    pub early_stop: Option<EarlyStop>,
    /// Epochs of the preliminary constant-gate stage; `None` uses `epochs`.
    pub preliminary_epochs: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 2000,
            lr: 0.25,
            lr_late: 0.125,
            lr_switch_epoch: 300,
            seeds: 10,
            seed_base: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: None,
            early_stop: None,
            preliminary_epochs: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr_late > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.seeds == 0 {
            return Err(Error::Config("seeds must be at least 1".into()));
        }
        Ok(())
    }

    /// Learning rate of a 1-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch <= self.lr_switch_epoch {
            self.lr
        } else {
            self.lr_late
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u32,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected ADAM update in place.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [f64],
    grad: &[f64],
    lr: f64,
    cfg: &TrainConfig,
) {
    assert_eq!(
        state.m.len(),
        params.len(),
        "optimizer state does not match parameters"
    );
    assert_eq!(
        grad.len(),
        params.len(),
        "gradient does not match parameters"
    );
    state.t += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grad[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Everything needed to evaluate the objective for one graph.
#[derive(Debug, Clone)]
pub struct Problem {
    pub graph: GraphSpec,
    pub precip: Vec<f64>,
    pub pet: Vec<f64>,
    /// Observed flow over the full series; NaN where absent or on spin-up.
    pub obs: Vec<f64>,
    pub train: Vec<usize>,
    pub select: Vec<usize>,
    pub test: Vec<usize>,
    pub scaling: ScalingSet,
    pub init: Vec<f64>,
}

impl Problem {
    pub fn new(
        graph: GraphSpec,
        forcing: &ForcingSeries,
        mask: &SubsetMask,
        scaling: ScalingSet,
        init: Vec<f64>,
    ) -> Result<Self> {
        if mask.len() != forcing.len() {
            return Err(Error::LengthMismatch(format!(
                "mask has {} labels for {} records",
                mask.len(),
                forcing.len()
            )));
        }
        let mut obs = vec![f64::NAN; forcing.len()];
        for t in mask.evaluated_indices() {
            obs[t] = forcing.records()[t]
                .q_obs
                .ok_or(Error::MissingObservation { index: t })?;
        }
        Ok(Problem {
            graph,
            precip: forcing.precip(),
            pet: forcing.pet(),
            obs,
            train: mask.indices(Subset::Train),
            select: mask.indices(Subset::Select),
            test: mask.indices(Subset::Test),
            scaling,
            init,
        })
    }

    pub fn simulate(&self, params: &[f64]) -> Result<Vec<f64>> {
        run(
            &self.graph,
            params,
            &self.precip,
            &self.pet,
            &self.scaling,
            &self.init,
            &mut NoRecord,
        )
    }

    pub fn indices(&self, subset: Subset) -> &[usize] {
        match subset {
            Subset::Train => &self.train,
            Subset::Select => &self.select,
            Subset::Test => &self.test,
            Subset::Spinup => &[],
        }
    }

    fn objective<T: Scalar>(&self, flows: &[T], idx: &[usize]) -> Result<T> {
        let sim: Vec<T> = idx.iter().map(|&t| flows[t]).collect();
        let obs: Vec<f64> = idx.iter().map(|&t| self.obs[t]).collect();
        let k = kge_generic(&sim, &obs)?[3];
        Ok(-k + 1.0)
    }

    /// KGE components of a parameter vector on one subset.
    pub fn score(&self, params: &[f64], subset: Subset) -> Result<KgeComponents> {
        let flows = self.simulate(params)?;
        let idx = self.indices(subset);
        let sim: Vec<f64> = idx.iter().map(|&t| flows[t]).collect();
        let obs: Vec<f64> = idx.iter().map(|&t| self.obs[t]).collect();
        crate::metrics::kge(&sim, &obs)
    }
}

fn state_to_loss(e: Error) -> Error {
    match e {
        Error::NonFiniteState { .. } => Error::NonFiniteLoss(e.to_string()),
        other => other,
    }
}

/// 1 - KGE over the training steps of one continuous simulation.
pub fn loss_eval(problem: &Problem, params: &[f64]) -> Result<f64> {
    let flows = problem.simulate(params).map_err(state_to_loss)?;
    let loss = problem.objective(&flows, &problem.train)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss(format!("loss evaluated to {loss}")));
    }
    Ok(loss)
}

/// Loss and its exact gradient with respect to every raw parameter.
pub fn gradient(problem: &Problem, params: &[f64]) -> Result<(f64, Vec<f64>)> {
    let per_step = 16 * problem.graph.gates().count() + 8;
    let tape = Tape::with_capacity(problem.precip.len() * per_step + 8 * problem.train.len());
    let vars: Vec<Var<'_>> = params.iter().map(|&p| tape.var(p)).collect();
    let flows = run(
        &problem.graph,
        &vars,
        &problem.precip,
        &problem.pet,
        &problem.scaling,
        &problem.init,
        &mut NoRecord,
    )
    .map_err(state_to_loss)?;
    let loss = problem.objective(&flows, &problem.train)?;
    if !loss.value().is_finite() {
        return Err(Error::NonFiniteLoss(format!(
            "loss evaluated to {}",
            loss.value()
        )));
    }
    let grad = tape.gradient(loss, &vars);
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    Ok((loss.value(), grad))
}

/// KGE_ss of a parameter vector on the selection steps.
pub fn selection_score(problem: &Problem, params: &[f64]) -> Result<f64> {
    Ok(kge_ss(problem.score(params, Subset::Select)?.kge))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build, init_params, ArchId, ArchOptions};
    use crate::forcing::{split_timesteps, synthetic::synthetic_forcing, SplitRatio};
    use crate::scaling::MeanStd;

    fn toy_problem(arch: ArchId) -> (Problem, Vec<f64>) {
        let forcing = synthetic_forcing(2001, 4, 3);
        let q: Vec<f64> = forcing
            .precip()
            .iter()
            .scan(1.0, |s, p| {
                *s = 0.9 * *s + 0.1 * p;
                Some(*s)
            })
            .collect();
        let forcing = forcing.with_observations(&q).unwrap();
        let mask = split_timesteps(&forcing, SplitRatio::default(), 1).unwrap();
        let mut scaling = ScalingSet::from_forcing(&forcing);
        let s = Some(MeanStd {
            mean: 50.0,
            std: 20.0,
        });
        scaling.soil = s;
        scaling.routing = Some(MeanStd {
            mean: 5.0,
            std: 2.0,
        });
        scaling.groundwater = s;
        let g = build(arch, ArchOptions::default()).unwrap();
        let init = vec![10.0; g.nodes.len()];
        let p = init_params(&g, 5).values;
        (Problem::new(g, &forcing, &mask, scaling, init).unwrap(), p)
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let cfg = TrainConfig::default();
        let mut st = AdamState::new(3);
        let mut p = vec![0.3, -1.0, 2.0];
        adam_step(&mut st, &mut p, &[0.0; 3], 0.25, &cfg);
        assert_eq!(p, vec![0.3, -1.0, 2.0]);
    }

    #[test]
    fn adam_first_step_moves_by_lr_against_sign() {
        let cfg = TrainConfig::default();
        let mut st = AdamState::new(3);
        let mut p = vec![0.0; 3];
        adam_step(&mut st, &mut p, &[2.0, -0.01, 300.0], 0.25, &cfg);
        assert!((p[0] + 0.25).abs() < 1e-8);
        assert!((p[1] - 0.25).abs() < 1e-5);
        assert!((p[2] + 0.25).abs() < 1e-8);
    }

    #[test]
    fn schedule() {
        let c = TrainConfig::default();
        assert_eq!(
            (c.lr_at(1), c.lr_at(300), c.lr_at(301), c.lr_at(2000)),
            (0.25, 0.25, 0.125, 0.125)
        );
        assert!(TrainConfig {
            epochs: 0,
            ..c.clone()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn gradient_matches_loss_and_is_deterministic() {
        let (pr, p) = toy_problem(ArchId::MA2);
        let (l, g) = gradient(&pr, &p).unwrap();
        assert_eq!(l, loss_eval(&pr, &p).unwrap());
        let (l2, g2) = gradient(&pr, &p).unwrap();
        assert_eq!((l, g), (l2, g2));
    }

    #[test]
    fn perfect_fit_has_zero_loss() {
        let (mut pr, p) = toy_problem(ArchId::MA1);
        let flows = pr.simulate(&p).unwrap();
        for &t in &pr.train {
            pr.obs[t] = flows[t];
        }
        assert!(loss_eval(&pr, &p).unwrap().abs() < 1e-12);
    }
}
