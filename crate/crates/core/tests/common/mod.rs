#![allow(dead_code)]

use mca_core::arch::GraphSpec;
use mca_core::forcing::{
    synthetic::synthetic_forcing, ForcingRecord, ForcingSeries, Subset, SubsetMask,
};
use mca_core::scaling::{MeanStd, ScalingSet};
use mca_core::train::Problem;

/// First `n` days of a synthetic record with a smooth positive pseudo-observation.
pub fn short_forcing(n: usize, seed: u64) -> ForcingSeries {
    let f = synthetic_forcing(2001, n.div_ceil(365), seed);
    let recs: Vec<ForcingRecord> = f.records()[..n].to_vec();
    let f = ForcingSeries::new(recs).unwrap();
    let q: Vec<f64> = f
        .precip()
        .iter()
        .scan(1.5, |s, p| {
            *s = 0.92 * *s + 0.05 * p;
            Some(*s)
        })
        .collect();
    f.with_observations(&q).unwrap()
}

pub fn fixed_scaling(f: &ForcingSeries) -> ScalingSet {
    let mut s = ScalingSet::from_forcing(f);
    s.soil = Some(MeanStd {
        mean: 40.0,
        std: 25.0,
    });
    s.routing = Some(MeanStd {
        mean: 3.0,
        std: 2.0,
    });
    s.groundwater = Some(MeanStd {
        mean: 30.0,
        std: 15.0,
    });
    s
}

/// Every step is a training step.
pub fn all_train_problem(graph: GraphSpec, f: &ForcingSeries) -> Problem {
    let mask = SubsetMask::from_labels(vec![Subset::Train; f.len()]);
    let init: Vec<f64> = graph
        .nodes
        .iter()
        .map(|n| match n.role {
            mca_core::node::NodeRole::Soil => 60.0,
            mca_core::node::NodeRole::Routing => 2.0,
            mca_core::node::NodeRole::Groundwater => 45.0,
        })
        .collect();
    Problem::new(graph, f, &mask, fixed_scaling(f), init).unwrap()
}

pub mod recovery {
    use mca_core::arch::{build, ArchId, ArchOptions, GraphSpec};
    use mca_core::forcing::{
        split_timesteps, synthetic::synthetic_forcing, ForcingSeries, SplitRatio, SubsetMask,
    };
    use mca_core::scaling::{MeanStd, ScalingSet};
    use mca_core::sim::simulate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    pub const YEARS: usize = 8;
    pub const SPINUP_REPEATS: usize = 3;

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    /// Known MA2 parameters: output, recharge, loss (raw values).
    pub fn truth_params() -> Vec<f64> {
        vec![
            logit(0.12),
            1.2f64.ln(),
            -0.3, // output
            logit(0.04),
            0.8f64.ln(),
            0.2, // recharge
            logit(0.7),
            0.9f64.ln(),
            0.6,
            0.4, // loss
        ]
    }

    pub struct Fixture {
        pub graph: GraphSpec,
        pub forcing: ForcingSeries,
        pub mask: SubsetMask,
        pub truth: Vec<f64>,
        pub truth_scaling: ScalingSet,
    }

    /// Forcing with observations generated by the known MA2 plus 1% multiplicative noise.
    pub fn fixture() -> Fixture {
        let graph = build(ArchId::MA2, ArchOptions::default()).unwrap();
        let native = synthetic_forcing(2001, YEARS, 17);
        let forcing = native.build_spinup(SPINUP_REPEATS).unwrap();
        let truth = truth_params();

        // settle the soil scaling on the model's own state statistics
        let mut scaling = ScalingSet::from_forcing(&forcing);
        scaling.soil = Some(MeanStd {
            mean: 50.0,
            std: 30.0,
        });
        for _ in 0..2 {
            let tr = simulate(&graph, &truth, &forcing, &scaling, &[0.0]).unwrap();
            scaling.soil = Some(MeanStd::of(&tr.states(0)[forcing.spinup_len()..]));
        }
        let tr = simulate(&graph, &truth, &forcing, &scaling, &[0.0]).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let q: Vec<f64> = tr
            .streamflow
            .iter()
            .map(|q| (q * (1.0 + noise.sample(&mut rng))).max(0.0))
            .collect();
        let forcing = forcing.with_observations(&q).unwrap();
        let mask = split_timesteps(&forcing, SplitRatio::default(), 0).unwrap();
        Fixture {
            graph,
            forcing,
            mask,
            truth,
            truth_scaling: scaling,
        }
    }
}

pub mod gradcheck {
    use mca_core::train::{gradient, loss_eval, Problem};

    /// Below this magnitude a component is compared in absolute terms: with a loss of
    /// order 1 and h = 1e-6, central differences carry about 1e-9 of rounding noise.
    pub const FLOOR: f64 = 1e-3;

    /// Largest relative disagreement between reverse-mode and central differences,
    /// with the slot where it occurs.
    pub fn max_rel_error(problem: &Problem, p: &[f64]) -> (f64, usize) {
        let (_, g) = gradient(problem, p).unwrap();
        let mut worst = (0.0f64, 0);
        for i in 0..p.len() {
            let h = 1e-6 * (1.0 + p[i].abs());
            let mut hi = p.to_vec();
            let mut lo = p.to_vec();
            hi[i] += h;
            lo[i] -= h;
            let fd =
                (loss_eval(problem, &hi).unwrap() - loss_eval(problem, &lo).unwrap()) / (2.0 * h);
            let scale = g[i].abs().max(fd.abs()).max(FLOOR);
            let rel = (g[i] - fd).abs() / scale;
            if rel > worst.0 {
                worst = (rel, i);
            }
        }
        worst
    }
}

pub mod closure {
    use mca_core::arch::GraphSpec;
    use mca_core::node::{Dest, GateRole};
    use mca_core::scaling::{MeanStd, ScalingSet};
    use mca_core::sim::SimTrace;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Bursty rain with dry spells and a seasonal PET, both non-negative.
    pub fn random_forcing(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut precip = Vec::with_capacity(n);
        let mut pet = Vec::with_capacity(n);
        for t in 0..n {
            let wet = rng.random_bool(0.3);
            precip.push(if wet {
                rng.random_range(0.0..60.0f64).powf(1.2)
            } else {
                0.0
            });
            let season = 3.0 - 2.5 * (t as f64 * std::f64::consts::TAU / 365.0).cos();
            pet.push((season + rng.random_range(-0.5..0.5)).max(0.0));
        }
        (precip, pet)
    }

    pub fn random_params(graph: &GraphSpec, seed: u64, spread: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..graph.param_count())
            .map(|_| rng.random_range(-spread..=spread))
            .collect()
    }

    pub fn scaling_for(precip: &[f64], pet: &[f64]) -> ScalingSet {
        ScalingSet {
            soil: Some(MeanStd {
                mean: 40.0,
                std: 25.0,
            }),
            routing: Some(MeanStd {
                mean: 3.0,
                std: 2.0,
            }),
            groundwater: Some(MeanStd {
                mean: 30.0,
                std: 15.0,
            }),
            precip_max: precip.iter().cloned().fold(0.0, f64::max).max(1.0),
            pet: Some(MeanStd::of(pet)),
        }
    }

    #[derive(Debug, Default)]
    pub struct Closure {
        /// Worst single-step node balance residual.
        pub node_residual: f64,
        /// |storage change - (P - Q - ET - exchange)| over the whole run.
        pub graph_residual: f64,
        pub cum_inflow: f64,
        pub et_excess: f64,
        /// Count of gate values outside their range.
        pub gate_violations: usize,
        pub negative_states: usize,
    }

    impl Closure {
        pub fn holds(&self, tol: f64) -> bool {
            let bound = tol * self.cum_inflow.max(1.0);
            self.node_residual <= bound
                && self.graph_residual <= bound
                && self.et_excess <= 0.0
                && self.gate_violations == 0
                && self.negative_states == 0
        }
    }

    pub fn check(
        graph: &GraphSpec,
        trace: &SimTrace,
        precip: &[f64],
        pet: &[f64],
        init: &[f64],
    ) -> Closure {
        let mut c = Closure::default();
        let gates: Vec<_> = graph.gates().collect();
        let (mut q, mut et, mut exch) = (0.0, 0.0, 0.0);
        for (t, s) in trace.steps.iter().enumerate() {
            c.cum_inflow += precip[t];
            let mut out = vec![0.0; graph.nodes.len()];
            let mut base = 0;
            for (i, node) in graph.nodes.iter().enumerate() {
                for (j, g) in node.gates.iter().enumerate() {
                    let r = s.gates[base + j];
                    let in_range = match g.role {
                        GateRole::MassRelax => r.value > -1.0 && r.value < 1.0,
                        _ => (0.0..=1.0).contains(&r.value),
                    };
                    if !in_range || !r.flux.is_finite() {
                        c.gate_violations += 1;
                    }
                    // bypass is taken off the inflow before the node sees it
                    if g.role != GateRole::Bypass {
                        out[i] += r.flux;
                    }
                }
                base += node.gates.len();
            }
            for (k, (node, g)) in gates.iter().enumerate() {
                let f = s.gates[k].flux;
                if g.role == GateRole::MassRelax {
                    exch += f;
                } else if g.role == GateRole::Loss {
                    et += f;
                    if node.et_constrained {
                        c.et_excess = c.et_excess.max(f - pet[t]);
                    }
                } else if g.dest == Dest::Streamflow {
                    q += f;
                }
            }
            for (i, n) in s.nodes.iter().enumerate() {
                let res = (n.state_after - (n.state_before + n.inflow - out[i])).abs();
                c.node_residual = c.node_residual.max(res);
                if n.state_after < 0.0 || n.remember < -1e-12 {
                    c.negative_states += 1;
                }
            }
        }
        let start: f64 = init.iter().sum();
        let end: f64 = trace
            .steps
            .last()
            .map_or(start, |s| s.nodes.iter().map(|n| n.state_after).sum());
        let total_p: f64 = precip[..trace.len()].iter().sum();
        let total_q: f64 = trace.streamflow.iter().sum();
        c.graph_residual = ((end - start) - (total_p - total_q - et - exch)).abs();
        // streamflow recorded per step must equal the sum of its terminal fluxes
        c.graph_residual = c.graph_residual.max((total_q - q).abs());
        c
    }
}
