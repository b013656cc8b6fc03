use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::artifacts::{
    create_dir, header, ingest_path, lines, load_ingest, load_run, num, read_json, write_json,
    write_text, IngestArtifact, IngestSummary, SelectionMarker, VERSION,
};
use super::config::ExperimentConfig;
use crate::arch::{
    build_variant, default_lineage, inherit_composite, init_params, LineageSource, ParamBlock,
    Variant,
};
use crate::error::{Error, Result};
use crate::forcing::{flow_groups, load_forcing, split_timesteps, ForcingSeries, Subset};
use crate::metrics::{DiagnosticReport, Percentiles};
use crate::node::NodeRole;
use crate::scaling::ScalingSet;
use crate::sim::{simulate, write_trace_csv};
use crate::train::{
    resolve_context, train_multi_seed, ParentRun, Problem, RunProvenance, TrainRun,
};

/// Floor applied before taking log10 of a flow.
const LOG_FLOOR: f64 = 1e-6;

pub fn cmd_ingest(cfg: &ExperimentConfig) -> Result<IngestArtifact> {
    let path = cfg
        .forcing
        .path
        .as_deref()
        .ok_or_else(|| Error::Config("forcing.path is not set".into()))?;
    let native = load_forcing(path, &cfg.forcing.columns)?;
    let series = native.build_spinup(cfg.forcing.spinup_repeats)?;
    let mask = split_timesteps(&series, cfg.forcing.ratio(), cfg.forcing.split_seed)?;
    let groups = flow_groups(&series, &mask, cfg.forcing.n_groups)?;
    let hash = cfg.hash();
    let nat = series.native_records();
    let wy = &series.water_years()[series.spinup_len()..];
    let summary = IngestSummary {
        native_steps: nat.len(),
        spinup_steps: series.spinup_len(),
        first_date: nat[0].date.to_string(),
        last_date: nat[nat.len() - 1].date.to_string(),
        water_years: (wy[0], wy[wy.len() - 1]),
        counts: mask.counts(),
        group_sizes: groups.sizes(),
        group_thresholds: groups.thresholds().to_vec(),
        config_hash: hash.clone(),
        version: VERSION.into(),
    };
    let art = IngestArtifact {
        summary,
        series,
        mask,
        groups,
    };

    let root = cfg.output_dir();
    let dir = root.join("ingest");
    let skip = art.series.spinup_len();
    write_json(&ingest_path(&root), &art)?;
    write_json(&dir.join("summary.json"), &art.summary)?;
    write_text(
        &dir.join("subset_mask.txt"),
        &lines(
            &hash,
            art.mask.labels()[skip..].iter().map(|l| l.to_string()),
        ),
    )?;
    write_text(
        &dir.join("flow_groups.txt"),
        &lines(
            &hash,
            art.groups.groups()[skip..]
                .iter()
                .map(|g| g.map_or_else(|| "-".to_string(), |g| g.to_string())),
        ),
    )?;
    write_text(&root.join("config.toml"), &cfg.to_toml()?)?;
    log::info!(
        "ingested {} steps: train {}, select {}, test {}",
        art.summary.native_steps,
        art.summary.counts.train,
        art.summary.counts.select,
        art.summary.counts.test
    );
    Ok(art)
}

fn ingest_or_load(cfg: &ExperimentConfig) -> Result<IngestArtifact> {
    let root = cfg.output_dir();
    if ingest_path(&root).exists() {
        load_ingest(&root)
    } else {
        log::info!(
            "no ingest artifacts under {}, ingesting first",
            root.display()
        );
        cmd_ingest(cfg)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub name: String,
    pub dir: PathBuf,
    pub selected: TrainRun,
    pub runs: usize,
}

#[derive(Serialize)]
struct PrelimArtifact<'a> {
    model: &'a str,
    scaling: ScalingSet,
    init_states: &'a [f64],
    k_gw: Option<f64>,
    run: &'a TrainRun,
}

struct Parent {
    label: String,
    run: TrainRun,
    roles: Option<Vec<NodeRole>>,
}

fn train_model(
    cfg: &ExperimentConfig,
    ingest: &IngestArtifact,
    name: &str,
    variant: Variant,
    parents: &[Parent],
) -> Result<TrainOutput> {
    let root = cfg.output_dir();
    let hash = cfg.hash();
    let graph = build_variant(variant)?;
    let parent_runs: Vec<ParentRun<'_>> = parents
        .iter()
        .map(|p| ParentRun {
            run: &p.run,
            roles: p.roles.as_deref(),
        })
        .collect();
    let (scaling, init, pre) = resolve_context(
        &graph,
        &parent_runs,
        &ingest.series,
        &ingest.mask,
        &cfg.train,
    )?;
    if let Some(pre) = &pre {
        let mut run = pre.run.clone();
        run.config_hash = Some(hash.clone());
        let art = PrelimArtifact {
            model: name,
            scaling: pre.scaling,
            init_states: &init,
            k_gw: pre.k_gw,
            run: &run,
        };
        write_json(&root.join("prelim").join(format!("{name}.json")), &art)?;
    }
    let problem = Problem::new(graph.clone(), &ingest.series, &ingest.mask, scaling, init)?;

    let blocks: Vec<ParamBlock> = parents
        .iter()
        .map(|p| ParamBlock::new(&p.run.graph, p.run.final_params.clone()))
        .collect::<Result<_>>()?;
    let labels: Vec<String> = parents.iter().map(|p| p.label.clone()).collect();
    // fail on incompatible parents before spending any training time
    if !parents.is_empty() {
        let sources = lineage_sources(parents, &blocks);
        inherit_composite(&graph, &sources, 0)?;
    }
    let init_fn = |seed: u64| -> Result<(Vec<f64>, Option<RunProvenance>)> {
        if parents.is_empty() {
            return Ok((init_params(&graph, seed).values, None));
        }
        let (block, prov) = inherit_composite(&graph, &lineage_sources(parents, &blocks), seed)?;
        let prov = RunProvenance {
            parents: labels.clone(),
            copied: prov.copied(),
            fresh: prov.fresh(),
            origin: prov.origin,
        };
        Ok((block.values, Some(prov)))
    };
    let result = train_multi_seed(&problem, &cfg.train, &init_fn)?;

    let dir = root.join("runs").join(name);
    create_dir(&dir)?;
    clear_seed_files(&dir)?;
    let mut selected = None;
    for run in &result.runs {
        let mut run = run.clone();
        run.config_hash = Some(hash.clone());
        write_json(&dir.join(seed_file(run.seed)), &run)?;
        if run.selected {
            selected = Some(run);
        }
    }
    let selected = selected.expect("multi-seed training marks one run");
    let marker = SelectionMarker {
        variant: variant.to_string(),
        seed: selected.seed,
        file: seed_file(selected.seed),
        selection_kge_ss: selected.selection_kge_ss,
        runs: result.runs.len(),
        failures: result.failures.clone(),
        config_hash: hash,
        version: VERSION.into(),
    };
    write_json(&dir.join("selected.json"), &marker)?;
    log::info!(
        "{name}: selected seed {} with selection KGEss {:.4}",
        selected.seed,
        selected.selection_kge_ss
    );
    Ok(TrainOutput {
        name: name.to_string(),
        dir,
        runs: result.runs.len(),
        selected,
    })
}

fn lineage_sources<'a>(parents: &'a [Parent], blocks: &'a [ParamBlock]) -> Vec<LineageSource<'a>> {
    parents
        .iter()
        .zip(blocks)
        .map(|(p, b)| LineageSource {
            graph: &p.run.graph,
            block: b,
            roles: p.roles.as_deref(),
        })
        .collect()
}

fn seed_file(seed: u64) -> String {
    format!("seed_{seed}.json")
}

fn clear_seed_files(dir: &Path) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("seed_") && name.ends_with(".json") || name == "selected.json" {
            std::fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

/// Where a campaign entry takes a parent from.
#[derive(Debug, Clone, PartialEq)]
pub enum ParentSource {
    /// Another entry of the same campaign, by index.
    Entry(usize),
    /// A run directory trained earlier.
    Disk(PathBuf),
}

pub type ResolvedParents = Vec<(ParentSource, Option<Vec<NodeRole>>)>;

/// Dependency-respecting order of the campaign entries with their resolved parents.
///
/// Explicit parents must be campaign entries or existing run directories. Without an
/// explicit list the standard lineage is used, skipping ancestors that are neither.
pub fn campaign_order(cfg: &ExperimentConfig) -> Result<Vec<(usize, ResolvedParents)>> {
    let entries = &cfg.campaign;
    let runs = cfg.output_dir().join("runs");
    let mut names = BTreeMap::new();
    for (i, e) in entries.iter().enumerate() {
        if names.insert(e.name().to_string(), i).is_some() {
            return Err(Error::Config(format!(
                "campaign entry `{}` appears twice",
                e.name()
            )));
        }
    }
    let mut resolved = Vec::with_capacity(entries.len());
    for e in entries {
        let variant: Variant = e.variant.parse()?;
        let mut parents = Vec::new();
        match &e.parents {
            Some(list) => {
                for p in list {
                    let src = match names.get(&p.name) {
                        Some(&i) => ParentSource::Entry(i),
                        None if runs.join(&p.name).exists() => {
                            ParentSource::Disk(runs.join(&p.name))
                        }
                        None => return Err(Error::MissingLineage(runs.join(&p.name))),
                    };
                    parents.push((src, p.roles.clone()));
                }
            }
            None => {
                for (pv, roles) in default_lineage(variant) {
                    let by_variant = entries
                        .iter()
                        .position(|x| x.variant.parse::<Variant>().ok() == Some(pv));
                    let label = pv.to_string();
                    let src = match by_variant {
                        Some(i) => ParentSource::Entry(i),
                        None if runs.join(&label).exists() => ParentSource::Disk(runs.join(&label)),
                        None => {
                            log::warn!(
                                "{}: ancestor {label} is not available, its slots start fresh",
                                e.name()
                            );
                            continue;
                        }
                    };
                    parents.push((src, roles));
                }
            }
        }
        resolved.push(parents);
    }

    let mut order = Vec::with_capacity(entries.len());
    let mut done = vec![false; entries.len()];
    while order.len() < entries.len() {
        let next = (0..entries.len()).find(|&i| {
            !done[i]
                && resolved[i].iter().all(|(s, _)| match s {
                    ParentSource::Entry(j) => done[*j],
                    ParentSource::Disk(_) => true,
                })
        });
        let Some(i) = next else {
            return Err(Error::Config("campaign lineage contains a cycle".into()));
        };
        done[i] = true;
        order.push(i);
    }
    Ok(order
        .into_iter()
        .map(|i| (i, std::mem::take(&mut resolved[i])))
        .collect())
}

/// Trains the configured model, or every campaign entry in dependency order.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Vec<TrainOutput>> {
    cfg.train.validate()?;
    let ingest = ingest_or_load(cfg)?;
    if cfg.campaign.is_empty() {
        let variant: Variant = cfg.model.variant.parse()?;
        let name = cfg
            .model
            .name
            .clone()
            .unwrap_or_else(|| variant.to_string());
        let parents = cfg
            .lineage
            .iter()
            .map(|l| {
                Ok(Parent {
                    label: l.run.display().to_string(),
                    run: load_run(&l.run)?,
                    roles: l.roles.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok(vec![train_model(cfg, &ingest, &name, variant, &parents)?]);
    }

    let order = campaign_order(cfg)?;
    let mut trained: BTreeMap<usize, TrainRun> = BTreeMap::new();
    let mut out = Vec::new();
    for (i, sources) in order {
        let entry = &cfg.campaign[i];
        let mut parents = Vec::new();
        for (src, roles) in sources {
            let (label, run) = match src {
                ParentSource::Entry(j) => (cfg.campaign[j].name().to_string(), trained[&j].clone()),
                ParentSource::Disk(p) => (p.display().to_string(), load_run(&p)?),
            };
            parents.push(Parent { label, run, roles });
        }
        let variant: Variant = entry.variant.parse()?;
        let res = train_model(cfg, &ingest, entry.name(), variant, &parents)?;
        trained.insert(i, res.selected.clone());
        out.push(res);
    }
    Ok(out)
}

fn default_run_path(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let name = match &cfg.model.name {
        Some(n) => n.clone(),
        None => cfg.model.variant.parse::<Variant>()?.to_string(),
    };
    Ok(cfg.output_dir().join("runs").join(name))
}

fn run_label(path: &Path) -> String {
    let stem = |p: &Path| {
        p.file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("run")
            .to_string()
    };
    if path.is_dir() {
        return stem(path);
    }
    match path.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(parent) => format!("{}_{}", stem(parent), stem(path)),
        None => stem(path),
    }
}

fn observed(series: &ForcingSeries) -> Vec<f64> {
    series
        .records()
        .iter()
        .map(|r| r.q_obs.unwrap_or(f64::NAN))
        .collect()
}

#[derive(Debug, Clone)]
pub struct EvaluateOutput {
    pub dir: PathBuf,
    pub report: DiagnosticReport,
}

/// Water years (driest, median, wettest) ranked by their observed annual peak; only
/// years whose steps are all evaluated take part.
fn hydrograph_years(series: &ForcingSeries, obs: &[f64]) -> Vec<(&'static str, i32)> {
    let wy = series.water_years();
    let mut peaks: BTreeMap<i32, f64> = BTreeMap::new();
    let mut broken = Vec::new();
    for t in series.spinup_len()..series.len() {
        if obs[t].is_finite() {
            let p = peaks.entry(wy[t]).or_insert(f64::NEG_INFINITY);
            *p = p.max(obs[t]);
        } else {
            broken.push(wy[t]);
        }
    }
    let mut ranked: Vec<(i32, f64)> = peaks
        .into_iter()
        .filter(|(y, _)| !broken.contains(y))
        .collect();
    if ranked.is_empty() {
        return Vec::new();
    }
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let n = ranked.len();
    vec![
        ("driest", ranked[0].0),
        ("median", ranked[(n - 1) / 2].0),
        ("wettest", ranked[n - 1].0),
    ]
}

fn hydrograph_csv(
    hash: &str,
    series: &ForcingSeries,
    sim: &[f64],
    obs: &[f64],
    years: &[(&str, i32)],
    log: bool,
) -> String {
    let tf = |v: f64| if log { v.max(LOG_FLOOR).log10() } else { v };
    let mut out = header(hash);
    let _ = writeln!(out, "date,water_year,class,observed,simulated");
    let wy = series.water_years();
    for (class, year) in years {
        for t in series.spinup_len()..series.len() {
            if wy[t] == *year {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    series.records()[t].date,
                    year,
                    class,
                    num(tf(obs[t])),
                    num(tf(sim[t]))
                );
            }
        }
    }
    out
}

/// Simulates the run over the ingested series and writes reports, trace and hydrographs.
pub fn cmd_evaluate(cfg: &ExperimentConfig, run_path: Option<&Path>) -> Result<EvaluateOutput> {
    let path = match run_path {
        Some(p) => p.to_path_buf(),
        None => default_run_path(cfg)?,
    };
    let run = load_run(&path)?;
    let ingest = ingest_or_load(cfg)?;
    let hash = cfg.hash();
    let label = run_label(&path);
    let series = &ingest.series;
    let mut trace = simulate(
        &run.graph,
        &run.final_params,
        series,
        &run.scaling,
        &run.init_states,
    )?;
    trace.config_hash = Some(hash.clone());
    let obs = observed(series);
    let mut report = DiagnosticReport::build(
        &run.variant,
        &trace.streamflow,
        &obs,
        &ingest.mask,
        series.water_years(),
        &ingest.groups,
    )?;
    report.config_hash = Some(hash.clone());

    let dir = cfg.output_dir().join("eval").join(&label);
    create_dir(&dir)?;
    write_json(&dir.join("report.json"), &report)?;
    write_text(
        &dir.join("report.txt"),
        &format!("{}{}", header(&hash), report.to_tables()),
    )?;
    write_trace_csv(&trace, &run.graph, &series.dates(), &dir.join("trace.csv"))?;
    let years = hydrograph_years(series, &obs);
    for (file, log) in [
        ("hydrograph_linear.csv", false),
        ("hydrograph_log.csv", true),
    ] {
        write_text(
            &dir.join(file),
            &hydrograph_csv(&hash, series, &trace.streamflow, &obs, &years, log),
        )?;
    }
    if let Some(s) = report.subset("test") {
        log::info!("{label}: test KGEss {:.4}", s.components.kge_ss);
    }
    Ok(EvaluateOutput { dir, report })
}

/// Writes the full trace of a run, over the ingested series or another forcing file.
pub fn cmd_simulate(
    cfg: &ExperimentConfig,
    run_path: Option<&Path>,
    forcing: Option<&Path>,
) -> Result<PathBuf> {
    let path = match run_path {
        Some(p) => p.to_path_buf(),
        None => default_run_path(cfg)?,
    };
    let run = load_run(&path)?;
    let series = match forcing {
        Some(f) => {
            load_forcing(f, &cfg.forcing.columns)?.build_spinup(cfg.forcing.spinup_repeats)?
        }
        None => ingest_or_load(cfg)?.series,
    };
    let mut trace = simulate(
        &run.graph,
        &run.final_params,
        &series,
        &run.scaling,
        &run.init_states,
    )?;
    trace.config_hash = Some(cfg.hash());
    let dir = cfg.output_dir().join("sim").join(run_label(&path));
    create_dir(&dir)?;
    let out = dir.join("trace.csv");
    write_trace_csv(&trace, &run.graph, &series.dates(), &out)?;
    Ok(out)
}

/// Comparison table over every evaluated run.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let eval = cfg.output_dir().join("eval");
    let mut reports: Vec<(String, DiagnosticReport)> = Vec::new();
    if eval.is_dir() {
        for entry in std::fs::read_dir(&eval).map_err(|e| Error::io(&eval, e))? {
            let dir = entry.map_err(|e| Error::io(&eval, e))?.path();
            let file = dir.join("report.json");
            if file.is_file() {
                let name = dir
                    .file_name()
                    .and_then(|n| n.to_str())
                    .unwrap_or_default()
                    .to_string();
                reports.push((name, read_json(&file)?));
            }
        }
    }
    if reports.is_empty() {
        return Err(Error::Config(format!(
            "no evaluated runs under {}",
            eval.display()
        )));
    }
    reports.sort_by(|a, b| a.0.cmp(&b.0));

    let hash = cfg.hash();
    let score = |r: &DiagnosticReport, s: Subset| {
        r.subset(s.as_str())
            .map_or(f64::NAN, |x| x.components.kge_ss)
    };
    let mut csv = header(&hash);
    let mut txt = header(&hash);
    let mut cols = vec!["run", "model", "train", "select", "test"];
    cols.extend(Percentiles::LABELS);
    let _ = writeln!(csv, "{}", cols.join(","));
    let _ = write!(txt, "{:<20}{:<14}", "run", "model");
    for c in &cols[2..] {
        let _ = write!(txt, "{c:>9}");
    }
    txt.push('\n');
    for (name, r) in &reports {
        let mut vals = vec![
            score(r, Subset::Train),
            score(r, Subset::Select),
            score(r, Subset::Test),
        ];
        vals.extend(r.annual.percentiles.values());
        let _ = writeln!(
            csv,
            "{name},{},{}",
            r.model,
            vals.iter().map(|v| num(*v)).collect::<Vec<_>>().join(",")
        );
        let _ = write!(txt, "{name:<20}{:<14}", r.model);
        for v in vals {
            let _ = write!(txt, "{v:>9.4}");
        }
        txt.push('\n');
    }
    let dir = cfg.output_dir().join("report");
    write_text(&dir.join("comparison.csv"), &csv)?;
    let out = dir.join("comparison.txt");
    write_text(&out, &txt)?;
    Ok(out)
}
