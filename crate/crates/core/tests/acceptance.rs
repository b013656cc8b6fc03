//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest harness so
//! the lines show up in plain `cargo test` output.

mod common;

use std::path::PathBuf;
use std::time::Instant;

use common::closure::{check, random_forcing, random_params, scaling_for};
use common::gradcheck::max_rel_error;
use mca_core::arch::{
    all_variants, build_variant, inherit_composite, init_params, LineageSource, ParamBlock,
};
use mca_core::forcing::{
    flow_groups, split_timesteps, synthetic::synthetic_forcing, SplitRatio, Subset,
};
use mca_core::metrics::kge;
use mca_core::runner::{cmd_evaluate, cmd_train, CampaignEntry, ExperimentConfig};
use mca_core::sim::simulate_arrays;
use mca_core::train::{
    resolve_context, train_multi_seed, ParentRun, Problem, RunProvenance, TrainConfig, TrainRun,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn parameter_counts() -> Outcome {
    // (label, expected) for every column of the architecture table and the model comparison
    let table = [
        ("MA1", 7),
        ("MA1BP1", 8),
        ("MA1BP2", 9),
        ("MA2", 10),
        ("MA2BP1", 11),
        ("MA2BP2", 12),
        ("MA3", 11),
        ("MA3BP1", 12),
        ("MA3BP2", 13),
        ("MA4", 14),
        ("MA4BP1", 15),
        ("MA4BP2", 16),
        ("MA5", 18),
        ("MA5BP1", 19),
        ("MA5BP2", 20),
        ("MA6", 21),
        ("MA6BP1", 22),
        ("MA6BP2", 23),
        ("MA5MR", 21),
    ];
    let wrong: Vec<String> = table
        .iter()
        .filter_map(|(label, n)| {
            let got = build_variant(label.parse().unwrap()).unwrap().param_count();
            (got != *n).then(|| format!("{label}: {got} != {n}"))
        })
        .collect();
    outcome(
        wrong.is_empty(),
        if wrong.is_empty() {
            format!("{} entries match", table.len())
        } else {
            wrong.join("; ")
        },
    )
}

fn mass_closure() -> Outcome {
    let (p, e) = random_forcing(1000, 2024);
    let sc = scaling_for(&p, &e);
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    let variants = all_variants();
    for v in &variants {
        let g = build_variant(*v).unwrap();
        for seed in 0..3 {
            let params = random_params(&g, 500 + seed, 3.0);
            let init = vec![25.0; g.nodes.len()];
            let tr = simulate_arrays(&g, &params, &p, &e, &sc, &init).unwrap();
            let c = check(&g, &tr, &p, &e, &init);
            worst = worst.max(c.node_residual.max(c.graph_residual) / c.cum_inflow);
            if !c.holds(1e-9) {
                bad.push(format!("{v} seed {seed}"));
            }
        }
    }
    outcome(
        bad.is_empty(),
        format!(
            "{} variants x 3, worst residual/inflow {worst:.1e}{}",
            variants.len(),
            if bad.is_empty() {
                String::new()
            } else {
                format!(", failing: {}", bad.join(", "))
            }
        ),
    )
}

fn gradient_oracle() -> Outcome {
    let f = common::short_forcing(200, 21);
    let mut worst = (0.0f64, String::new());
    for v in all_variants() {
        let g = build_variant(v).unwrap();
        let problem = common::all_train_problem(g.clone(), &f);
        for seed in 0..3 {
            let (err, slot) = max_rel_error(&problem, &init_params(&g, 1000 + seed).values);
            if err > worst.0 {
                worst = (err, format!("{v} seed {seed} slot {slot}"));
            }
        }
    }
    outcome(
        worst.0 < 1e-5,
        format!("max relative error {:.2e} ({})", worst.0, worst.1),
    )
}

fn kge_identities() -> Outcome {
    let obs = [0.4, 1.0, 2.5, 7.0, 3.3, 0.9];
    let mean = obs.iter().sum::<f64>() / obs.len() as f64;
    let bench = kge(&[mean; 6], &obs).unwrap();
    let c1 = (bench.kge - (1.0 - 2f64.sqrt())).abs() < 1e-12 && bench.kge_ss.abs() < 1e-12;
    let sim = [0.5, 1.4, 2.0, 6.1, 3.9, 0.7];
    let k = kge(&sim, &obs).unwrap();
    let recomposed =
        1.0 - ((k.rho - 1.0).powi(2) + (k.beta - 1.0).powi(2) + (k.alpha - 1.0).powi(2)).sqrt();
    let c2 = (recomposed - k.kge).abs() < 1e-12;
    let h = kge(&[2.0, 4.0, 6.0], &[1.0, 2.0, 3.0]).unwrap();
    let c3 = (h.alpha - 2.0).abs() < 1e-12
        && (h.beta - 2.0).abs() < 1e-12
        && (h.rho - 1.0).abs() < 1e-12;
    outcome(
        c1 && c2 && c3,
        format!(
            "benchmark KGE {:.15} KGEss {:.1e}; decomposition {:.1e}; (a,b,r)=({},{},{})",
            bench.kge,
            bench.kge_ss,
            (recomposed - k.kge).abs(),
            h.alpha,
            h.beta,
            h.rho
        ),
    )
}

fn split_fidelity() -> Outcome {
    let f = synthetic_forcing(1949, 40, 7);
    let q: Vec<f64> = f
        .precip()
        .iter()
        .scan(1.0, |s, p| {
            *s = 0.9 * *s + 0.08 * p;
            Some(*s)
        })
        .collect();
    let f = f.with_observations(&q).unwrap().build_spinup(3).unwrap();
    let wy = &f.water_years()[f.spinup_len()..];
    let m = split_timesteps(&f, SplitRatio::default(), 0).unwrap();
    let c = m.counts();
    let g = flow_groups(&f, &m, 5).unwrap();
    let sizes = g.sizes();
    let pass = (c.train, c.select, c.test) == (7306, 3652, 3652)
        && sizes == vec![2922; 5]
        && f.native_len() == 14610;
    outcome(
        pass,
        format!(
            "WY{}-{} ({} steps): {}/{}/{}, groups {:?}",
            wy[0],
            wy[wy.len() - 1],
            f.native_len(),
            c.train,
            c.select,
            c.test,
            sizes
        ),
    )
}

fn full_schedule() -> TrainConfig {
    TrainConfig::default()
}

fn train_recovery(
    fx: &common::recovery::Fixture,
    graph: mca_core::arch::GraphSpec,
    parent: Option<&TrainRun>,
) -> (TrainRun, f64) {
    let cfg = full_schedule();
    let parents: Vec<ParentRun<'_>> = parent
        .map(|run| ParentRun { run, roles: None })
        .into_iter()
        .collect();
    let (scaling, init, _) =
        resolve_context(&graph, &parents, &fx.forcing, &fx.mask, &cfg).unwrap();
    let problem = Problem::new(graph.clone(), &fx.forcing, &fx.mask, scaling, init).unwrap();
    let block = parent.map(|r| ParamBlock::new(&r.graph, r.final_params.clone()).unwrap());
    let init_fn = |seed: u64| -> mca_core::Result<(Vec<f64>, Option<RunProvenance>)> {
        match (parent, &block) {
            (Some(r), Some(b)) => {
                let src = LineageSource {
                    graph: &r.graph,
                    block: b,
                    roles: None,
                };
                let (p, prov) = inherit_composite(&graph, &[src], seed)?;
                Ok((
                    p.values,
                    Some(RunProvenance {
                        parents: vec![r.variant.clone()],
                        copied: prov.copied(),
                        fresh: prov.fresh(),
                        origin: prov.origin,
                    }),
                ))
            }
            _ => Ok((init_params(&graph, seed).values, None)),
        }
    };
    let res = train_multi_seed(&problem, &cfg, &init_fn).unwrap();
    let best = res.best_run().clone();
    let test = problem
        .score(&best.final_params, Subset::Test)
        .unwrap()
        .kge_ss;
    (best, test)
}

fn recovery(fx: &common::recovery::Fixture) -> (Outcome, TrainRun) {
    let (run, test) = train_recovery(fx, fx.graph.clone(), None);
    let sel = run.selection_kge_ss;
    (
        outcome(
            sel >= 0.99 && test >= 0.98,
            format!("MA2, 10 seeds x 2000 epochs: selected seed {}, select KGEss {sel:.4}, test KGEss {test:.4}", run.seed),
        ),
        run,
    )
}

fn inheritance(fx: &common::recovery::Fixture, ma2: &TrainRun) -> Outcome {
    let g = build_variant("MA4".parse().unwrap()).unwrap();
    let (ma4, _) = train_recovery(fx, g, Some(ma2));
    let prov = ma4.provenance.as_ref().unwrap();
    outcome(
        ma4.train_kge >= ma2.train_kge - 0.02,
        format!(
            "MA4 from MA2 ({} copied, {} fresh): train KGE {:.4} vs MA2 {:.4}",
            prov.copied, prov.fresh, ma4.train_kge, ma2.train_kge
        ),
    )
}

/// Soft criterion; runs only when a configuration for the real basin is supplied.
fn reproduction() -> Option<Outcome> {
    let path = PathBuf::from(std::env::var_os("MCA_LEAF_RIVER_CONFIG")?);
    let mut cfg = ExperimentConfig::load(&path).ok()?;
    cfg.resolve_output();
    let chain = ["MA1", "MA2", "MA3", "MA4", "MA5", "MA5BP2", "MA5MR"];
    cfg.campaign = chain
        .iter()
        .map(|v| CampaignEntry {
            variant: v.to_string(),
            name: None,
            parents: None,
        })
        .collect();
    if let Err(e) = cmd_train(&cfg) {
        return Some(outcome(false, format!("training failed: {e}")));
    }
    let root = cfg.output_dir().join("runs");
    let mut notes = Vec::new();
    let mut pass = true;
    for (label, check_median, target) in [
        ("MA1", true, 0.84),
        ("MA5BP2", true, 0.89),
        ("MA5MR", false, 0.55),
    ] {
        let report = match cmd_evaluate(&cfg, Some(&root.join(label))) {
            Ok(r) => r.report,
            Err(e) => return Some(outcome(false, format!("{label}: {e}"))),
        };
        let p = report.annual.percentiles;
        let ok = if check_median {
            (p.p50 - target).abs() <= 0.03
        } else {
            p.worst >= target
        };
        pass &= ok;
        notes.push(format!("{label} median {:.3} worst {:.3}", p.p50, p.worst));
    }
    Some(outcome(pass, notes.join("; ")))
}

fn report(n: usize, name: &str, o: &Outcome, secs: f64) {
    println!(
        "criterion {n} [{name}]: {} ({secs:.1}s) {}",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
}

fn main() {
    // libtest arguments (filters, --nocapture, ...) are accepted and ignored
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut failed = Vec::new();
    let mut timed = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        report(n, name, &o, t.elapsed().as_secs_f64());
        if !o.pass {
            failed.push(n);
        }
    };
    timed(1, "parameter counts", &mut parameter_counts);
    timed(2, "mass closure", &mut mass_closure);
    timed(3, "gradient oracle", &mut gradient_oracle);
    timed(4, "KGE identities", &mut kge_identities);
    timed(5, "split fidelity", &mut split_fidelity);

    let fx = common::recovery::fixture();
    let mut ma2 = None;
    timed(6, "synthetic recovery", &mut || {
        let (o, run) = recovery(&fx);
        ma2 = Some(run);
        o
    });
    let ma2 = ma2.expect("criterion 6 ran");
    timed(7, "inheritance non-regression", &mut || {
        inheritance(&fx, &ma2)
    });

    let t = Instant::now();
    match reproduction() {
        Some(o) => report(8, "basin reproduction, soft", &o, t.elapsed().as_secs_f64()),
        None => println!(
            "criterion 8 [basin reproduction, soft]: FAIL (not run) basin data unavailable; set MCA_LEAF_RIVER_CONFIG to an experiment file to run it"
        ),
    }

    if failed.is_empty() {
        println!("acceptance: criteria 1-7 PASS");
    } else {
        println!("acceptance: FAILED {failed:?}");
        std::process::exit(1);
    }
}
