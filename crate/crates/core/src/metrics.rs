//! Kling-Gupta efficiency and the diagnostic tables built on it.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::ad::Scalar;
use crate::error::{Error, Result};
use crate::forcing::{FlowGroupMask, Subset, SubsetMask};

pub const SQRT_2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KgeComponents {
    /// Variability ratio, sigma_sim / sigma_obs.
    pub alpha: f64,
    /// Bias ratio, mean_sim / mean_obs.
    pub beta: f64,
    /// Linear correlation (0 when the simulation is constant).
    pub rho: f64,
    pub kge: f64,
    pub kge_ss: f64,
}

impl KgeComponents {
    /// 1 - |1 - alpha|
    pub fn a_score(&self) -> f64 {
        1.0 - (1.0 - self.alpha).abs()
    }

    /// 1 - |1 - beta|
    pub fn b_score(&self) -> f64 {
        1.0 - (1.0 - self.beta).abs()
    }
}

pub fn kge_ss(kge: f64) -> f64 {
    1.0 - (1.0 - kge) / SQRT_2
}

fn obs_stats(obs: &[f64]) -> Result<(f64, f64)> {
    let n = obs.len() as f64;
    let mu = obs.iter().sum::<f64>() / n;
    let var = obs.iter().map(|o| (o - mu).powi(2)).sum::<f64>() / n;
    if var == 0.0 || !var.is_finite() {
        return Err(Error::DegenerateObserved(
            "observed flow has zero variance".into(),
        ));
    }
    if mu == 0.0 {
        return Err(Error::DegenerateObserved(
            "observed flow has zero mean".into(),
        ));
    }
    Ok((mu, var.sqrt()))
}

fn check_pair(sim: usize, obs: usize) -> Result<()> {
    if sim != obs {
        return Err(Error::LengthMismatch(format!(
            "{sim} simulated vs {obs} observed values"
        )));
    }
    if obs < 2 {
        return Err(Error::LengthMismatch(format!(
            "need at least 2 values, got {obs}"
        )));
    }
    Ok(())
}

/// (alpha, beta, rho, kge) for any scalar type; population statistics throughout.
pub fn kge_generic<T: Scalar>(sim: &[T], obs: &[f64]) -> Result<[T; 4]> {
    check_pair(sim.len(), obs.len())?;
    let (mu_o, sd_o) = obs_stats(obs)?;
    let n = sim.len() as f64;
    let mut total = T::cst(0.0);
    for s in sim {
        total = total + *s;
    }
    let mu_s = total / n;
    let beta = mu_s / mu_o;
    let constant = sim.iter().all(|s| s.value() == sim[0].value());
    let (alpha, rho) = if constant {
        (T::cst(0.0), T::cst(0.0))
    } else {
        let mut var = T::cst(0.0);
        let mut cov = T::cst(0.0);
        for (s, o) in sim.iter().zip(obs) {
            let d = *s - mu_s;
            var = var + d * d;
            cov = cov + d * (o - mu_o);
        }
        let sd_s = (var / n).sqrt();
        (sd_s / sd_o, cov / n / (sd_s * sd_o))
    };
    let (da, db, dr) = (alpha - 1.0, beta - 1.0, rho - 1.0);
    let d2 = da * da + db * db + dr * dr;
    let kge = if d2.value() > 0.0 {
        -d2.sqrt() + 1.0
    } else {
        T::cst(1.0)
    };
    Ok([alpha, beta, rho, kge])
}

pub fn kge(sim: &[f64], obs: &[f64]) -> Result<KgeComponents> {
    let [alpha, beta, rho, kge] = kge_generic(sim, obs)?;
    Ok(KgeComponents {
        alpha,
        beta,
        rho: rho.clamp(-1.0, 1.0),
        kge,
        kge_ss: kge_ss(kge),
    })
}

fn gather(xs: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| xs[i]).collect()
}

/// KGE over a subset of time indices of two aligned series.
pub fn kge_at(sim: &[f64], obs: &[f64], idx: &[usize]) -> Result<KgeComponents> {
    kge(&gather(sim, idx), &gather(obs, idx))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuxMetrics {
    pub nse: f64,
    pub rmse: f64,
    pub mae: f64,
}

pub fn aux_metrics(sim: &[f64], obs: &[f64]) -> Result<AuxMetrics> {
    check_pair(sim.len(), obs.len())?;
    let n = obs.len() as f64;
    let mu = obs.iter().sum::<f64>() / n;
    let sse: f64 = sim.iter().zip(obs).map(|(s, o)| (s - o).powi(2)).sum();
    let sst: f64 = obs.iter().map(|o| (o - mu).powi(2)).sum();
    if sst == 0.0 {
        return Err(Error::DegenerateObserved(
            "observed flow has zero variance".into(),
        ));
    }
    Ok(AuxMetrics {
        nse: 1.0 - sse / sst,
        rmse: (sse / n).sqrt(),
        mae: sim.iter().zip(obs).map(|(s, o)| (s - o).abs()).sum::<f64>() / n,
    })
}

/// Linear interpolation between order statistics (`p` in percent).
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = p / 100.0 * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub worst: f64,
    pub p5: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p95: f64,
}

impl Percentiles {
    pub const LABELS: [&'static str; 6] = ["worst", "5%", "25%", "50%", "75%", "95%"];

    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Percentiles {
            worst: v.first().copied().unwrap_or(f64::NAN),
            p5: percentile(&v, 5.0),
            p25: percentile(&v, 25.0),
            p50: percentile(&v, 50.0),
            p75: percentile(&v, 75.0),
            p95: percentile(&v, 95.0),
        }
    }

    pub fn values(&self) -> [f64; 6] {
        [self.worst, self.p5, self.p25, self.p50, self.p75, self.p95]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnualRow {
    pub water_year: i32,
    pub steps: usize,
    pub components: Option<KgeComponents>,
    /// Why the year was left out of the percentiles.
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnualTable {
    pub rows: Vec<AnnualRow>,
    pub percentiles: Percentiles,
}

/// Per-water-year scores over the given steps, plus percentiles of annual KGE_ss.
pub fn annual_kge_ss(
    sim: &[f64],
    obs: &[f64],
    water_years: &[i32],
    steps: &[usize],
) -> Result<AnnualTable> {
    if sim.len() != obs.len() || obs.len() != water_years.len() {
        return Err(Error::LengthMismatch(format!(
            "annual scores need aligned series ({} / {} / {})",
            sim.len(),
            obs.len(),
            water_years.len()
        )));
    }
    let mut rows = Vec::new();
    let mut i = 0;
    while i < steps.len() {
        let wy = water_years[steps[i]];
        let mut j = i;
        while j < steps.len() && water_years[steps[j]] == wy {
            j += 1;
        }
        let idx = &steps[i..j];
        let (components, flag) = match kge_at(sim, obs, idx) {
            Ok(c) => (Some(c), None),
            Err(e) => {
                log::warn!("water year {wy} excluded from annual scores: {e}");
                (None, Some(e.to_string()))
            }
        };
        rows.push(AnnualRow {
            water_year: wy,
            steps: idx.len(),
            components,
            flag,
        });
        i = j;
    }
    if rows.is_empty() {
        return Err(Error::LengthMismatch("no water year to score".into()));
    }
    let scores: Vec<f64> = rows
        .iter()
        .filter_map(|r| r.components.map(|c| c.kge_ss))
        .collect();
    Ok(AnnualTable {
        percentiles: Percentiles::of(&scores),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub group: u8,
    pub steps: usize,
    /// (min, max) observed flow of the group's steps.
    pub range: (f64, f64),
    pub components: Option<KgeComponents>,
    pub flag: Option<String>,
}

/// Scores per flow-magnitude group, restricted to `steps`.
pub fn group_metrics(
    sim: &[f64],
    obs: &[f64],
    groups: &FlowGroupMask,
    steps: &[usize],
) -> Result<Vec<GroupRow>> {
    if sim.len() != obs.len() || obs.len() != groups.groups().len() {
        return Err(Error::LengthMismatch(
            "flow groups must align with the series".into(),
        ));
    }
    let mut out = Vec::with_capacity(groups.n_groups());
    for g in 1..=groups.n_groups() as u8 {
        let idx: Vec<usize> = steps
            .iter()
            .copied()
            .filter(|&t| groups.groups()[t] == Some(g))
            .collect();
        let (components, flag) = match kge_at(sim, obs, &idx) {
            Ok(c) => (Some(c), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let range = idx
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| {
                (lo.min(obs[t]), hi.max(obs[t]))
            });
        out.push(GroupRow {
            group: g,
            steps: idx.len(),
            range,
            components,
            flag,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetScores {
    pub subset: String,
    pub steps: usize,
    pub components: KgeComponents,
    pub a_score: f64,
    pub b_score: f64,
    pub aux: AuxMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub model: String,
    pub overall: Vec<SubsetScores>,
    pub annual: AnnualTable,
    pub flow_groups: Vec<GroupRow>,
    pub config_hash: Option<String>,
    pub version: String,
}

fn subset_scores(name: &str, sim: &[f64], obs: &[f64], idx: &[usize]) -> Result<SubsetScores> {
    let (s, o) = (gather(sim, idx), gather(obs, idx));
    let components = kge(&s, &o)?;
    Ok(SubsetScores {
        subset: name.to_string(),
        steps: idx.len(),
        a_score: components.a_score(),
        b_score: components.b_score(),
        components,
        aux: aux_metrics(&s, &o)?,
    })
}

impl DiagnosticReport {
    /// Scores every subset, every evaluated water year and every flow group.
    ///
    /// All inputs are aligned to the full series; spin-up steps are never read.
    pub fn build(
        model: &str,
        sim: &[f64],
        obs: &[f64],
        mask: &SubsetMask,
        water_years: &[i32],
        groups: &FlowGroupMask,
    ) -> Result<Self> {
        let mut overall = Vec::new();
        for s in Subset::EVALUATED {
            let idx = mask.indices(s);
            if !idx.is_empty() {
                overall.push(subset_scores(s.as_str(), sim, obs, &idx)?);
            }
        }
        let all = mask.evaluated_indices();
        overall.push(subset_scores("all", sim, obs, &all)?);
        Ok(DiagnosticReport {
            model: model.to_string(),
            overall,
            annual: annual_kge_ss(sim, obs, water_years, &all)?,
            flow_groups: group_metrics(sim, obs, groups, &all)?,
            config_hash: None,
            version: env!("CARGO_PKG_VERSION").to_string(),
        })
    }

    pub fn subset(&self, name: &str) -> Option<&SubsetScores> {
        self.overall.iter().find(|s| s.subset == name)
    }

    /// Aligned-column text tables; correlation is printed as "gamma".
    pub fn to_tables(&self) -> String {
        let mut out = String::new();
        let f = |v: f64| format!("{v:>9.4}");
        let _ = writeln!(out, "model {}", self.model);
        if let Some(h) = &self.config_hash {
            let _ = writeln!(out, "config {h}");
        }
        let _ = writeln!(
            out,
            "\n{:<8}{:>7}{:>9}{:>9}{:>9}{:>9}{:>9}{:>9}{:>9}{:>9}{:>9}{:>9}",
            "subset",
            "steps",
            "KGEss",
            "KGE",
            "alpha",
            "beta",
            "gamma",
            "A",
            "B",
            "NSE",
            "RMSE",
            "MAE"
        );
        for s in &self.overall {
            let c = &s.components;
            let _ = writeln!(
                out,
                "{:<8}{:>7}{}{}{}{}{}{}{}{}{}{}",
                s.subset,
                s.steps,
                f(c.kge_ss),
                f(c.kge),
                f(c.alpha),
                f(c.beta),
                f(c.rho),
                f(s.a_score),
                f(s.b_score),
                f(s.aux.nse),
                f(s.aux.rmse),
                f(s.aux.mae)
            );
        }
        let _ = writeln!(out, "\nannual KGEss");
        for (label, v) in Percentiles::LABELS
            .iter()
            .zip(self.annual.percentiles.values())
        {
            let _ = writeln!(out, "{label:<8}{}", f(v));
        }
        let _ = writeln!(
            out,
            "\n{:<6}{:>7}{:>11}{:>11}{:>9}{:>9}{:>9}{:>9}",
            "group", "steps", "q_min", "q_max", "KGEss", "alpha", "beta", "gamma"
        );
        for g in &self.flow_groups {
            let _ = write!(
                out,
                "{:<6}{:>7}{:>11.4}{:>11.4}",
                g.group, g.steps, g.range.0, g.range.1
            );
            match &g.components {
                Some(c) => {
                    let _ = writeln!(
                        out,
                        "{}{}{}{}",
                        f(c.kge_ss),
                        f(c.alpha),
                        f(c.beta),
                        f(c.rho)
                    );
                }
                None => {
                    let _ = writeln!(out, "  {}", g.flag.as_deref().unwrap_or("n/a"));
                }
            }
        }
        let _ = writeln!(
            out,
            "\n{:<6}{:>7}{:>9}{:>9}{:>9}{:>9}",
            "wy", "steps", "KGEss", "alpha", "beta", "gamma"
        );
        for r in &self.annual.rows {
            let _ = write!(out, "{:<6}{:>7}", r.water_year, r.steps);
            match &r.components {
                Some(c) => {
                    let _ = writeln!(
                        out,
                        "{}{}{}{}",
                        f(c.kge_ss),
                        f(c.alpha),
                        f(c.beta),
                        f(c.rho)
                    );
                }
                None => {
                    let _ = writeln!(out, "  {}", r.flag.as_deref().unwrap_or("n/a"));
                }
            }
        }
        out
    }
}
