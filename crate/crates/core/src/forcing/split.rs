//! Year-block train/selection/test assignment and flow-magnitude groups.
//!
//! Whole water years are assigned to subsets so that the year counts follow the
//! requested ratio and the day counts hit `floor(N·r/Σr)` for the selection and
//! test subsets when the calendar allows it. Among such assignments the one with
//! the smallest maximum pairwise two-sample Kolmogorov–Smirnov distance between
//! the subsets' observed-flow distributions is chosen: exhaustively when the
//! assignment space is small, otherwise by seeded swap hill-climbing.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ForcingSeries;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Select,
    Test,
    Spinup,
}

impl Subset {
    pub const EVALUATED: [Subset; 3] = [Subset::Train, Subset::Select, Subset::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Select => "select",
            Subset::Test => "test",
            Subset::Spinup => "spinup",
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Subset::Train),
            "select" => Ok(Subset::Select),
            "test" => Ok(Subset::Test),
            "spinup" => Ok(Subset::Spinup),
            other => Err(Error::Config(format!("unknown subset label `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SubsetCounts {
    pub train: usize,
    pub select: usize,
    pub test: usize,
    pub spinup: usize,
}

impl SubsetCounts {
    fn bump(&mut self, s: Subset) {
        match s {
            Subset::Train => self.train += 1,
            Subset::Select => self.select += 1,
            Subset::Test => self.test += 1,
            Subset::Spinup => self.spinup += 1,
        }
    }

    pub fn get(&self, s: Subset) -> usize {
        match s {
            Subset::Train => self.train,
            Subset::Select => self.select,
            Subset::Test => self.test,
            Subset::Spinup => self.spinup,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetMask {
    labels: Vec<Subset>,
    counts: SubsetCounts,
}

impl SubsetMask {
    pub fn from_labels(labels: Vec<Subset>) -> Self {
        let mut counts = SubsetCounts::default();
        for &l in &labels {
            counts.bump(l);
        }
        SubsetMask { labels, counts }
    }

    pub fn labels(&self) -> &[Subset] {
        &self.labels
    }

    pub fn counts(&self) -> SubsetCounts {
        self.counts
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn indices(&self, subset: Subset) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == subset)
            .map(|(i, _)| i)
            .collect()
    }

    /// All non-spin-up timesteps.
    pub fn evaluated_indices(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != Subset::Spinup)
            .map(|(i, _)| i)
            .collect()
    }

    /// Prepends `n` spin-up labels, e.g. after reloading a mask written for native rows.
    pub fn with_spinup(&self, n: usize) -> Self {
        let mut labels = vec![Subset::Spinup; n];
        labels.extend(self.labels.iter().copied().filter(|&l| l != Subset::Spinup));
        SubsetMask::from_labels(labels)
    }
}

/// Relative sizes of train/selection/test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRatio(pub u32, pub u32, pub u32);

impl Default for SplitRatio {
    fn default() -> Self {
        SplitRatio(2, 1, 1)
    }
}

impl SplitRatio {
    fn total(self) -> u64 {
        (self.0 + self.1 + self.2) as u64
    }

    /// (train, select, test) shares of `n`, rounding the smaller shares down.
    fn shares(self, n: usize) -> (usize, usize, usize) {
        let t = self.total();
        let sel = (n as u64 * self.1 as u64 / t) as usize;
        let test = (n as u64 * self.2 as u64 / t) as usize;
        (n - sel - test, sel, test)
    }
}

const MIN_YEARS: usize = 4;
const EXHAUSTIVE_LIMIT: u128 = 20_000;
const RESTARTS: usize = 4;

/// Per-year cumulative flow counts on the ranks of the pooled distinct values.
struct YearCdfs {
    bins: usize,
    cum: Vec<Vec<u32>>,
    sizes: Vec<usize>,
}

impl YearCdfs {
    fn new(years: &[std::ops::Range<usize>], q: &[f64]) -> Self {
        let mut distinct: Vec<f64> = years
            .iter()
            .flat_map(|r| q[r.clone()].iter().copied())
            .collect();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let bins = distinct.len();
        let cum = years
            .iter()
            .map(|r| {
                let mut h = vec![0u32; bins];
                for v in &q[r.clone()] {
                    h[distinct.partition_point(|x| x < v)] += 1;
                }
                let mut acc = 0;
                for c in h.iter_mut() {
                    acc += *c;
                    *c = acc;
                }
                h
            })
            .collect();
        let sizes = years.iter().map(|r| r.len()).collect();
        YearCdfs { bins, cum, sizes }
    }
}

/// Subset-level cumulative counts for one assignment, updated in place by swaps.
struct State<'a> {
    cdfs: &'a YearCdfs,
    day_targets: (usize, usize),
    assign: Vec<u8>,
    cum: [Vec<u32>; 3],
    days: [usize; 3],
}

impl<'a> State<'a> {
    fn new(cdfs: &'a YearCdfs, day_targets: (usize, usize), assign: Vec<u8>) -> Self {
        let mut cum = [
            vec![0u32; cdfs.bins],
            vec![0u32; cdfs.bins],
            vec![0u32; cdfs.bins],
        ];
        let mut days = [0usize; 3];
        for (y, &a) in assign.iter().enumerate() {
            days[a as usize] += cdfs.sizes[y];
            for (c, v) in cum[a as usize].iter_mut().zip(&cdfs.cum[y]) {
                *c += v;
            }
        }
        State {
            cdfs,
            day_targets,
            assign,
            cum,
            days,
        }
    }

    fn deviation(&self, days: &[usize; 3]) -> usize {
        days[1].abs_diff(self.day_targets.0) + days[2].abs_diff(self.day_targets.1)
    }

    /// Lexicographic objective: (day-count deviation, max pairwise KS).
    fn score(&self) -> (usize, f64) {
        (self.deviation(&self.days), self.max_ks(None))
    }

    fn swap_deviation(&self, i: usize, j: usize) -> usize {
        let (a, b) = (self.assign[i] as usize, self.assign[j] as usize);
        let mut days = self.days;
        let delta = self.cdfs.sizes[j] as isize - self.cdfs.sizes[i] as isize;
        days[a] = (days[a] as isize + delta) as usize;
        days[b] = (days[b] as isize - delta) as usize;
        self.deviation(&days)
    }

    fn max_ks(&self, swap: Option<(usize, usize)>) -> f64 {
        let mut n = self.days;
        let (mut sa, mut sb, mut ci, mut cj) = (usize::MAX, usize::MAX, &[][..], &[][..]);
        if let Some((i, j)) = swap {
            sa = self.assign[i] as usize;
            sb = self.assign[j] as usize;
            ci = &self.cdfs.cum[i];
            cj = &self.cdfs.cum[j];
            let delta = self.cdfs.sizes[j] as isize - self.cdfs.sizes[i] as isize;
            n[sa] = (n[sa] as isize + delta) as usize;
            n[sb] = (n[sb] as isize - delta) as usize;
        }
        let inv = [
            1.0 / n[0].max(1) as f64,
            1.0 / n[1].max(1) as f64,
            1.0 / n[2].max(1) as f64,
        ];
        let mut worst = 0.0f64;
        for k in 0..self.cdfs.bins {
            let mut c = [
                self.cum[0][k] as i64,
                self.cum[1][k] as i64,
                self.cum[2][k] as i64,
            ];
            if swap.is_some() {
                let d = cj[k] as i64 - ci[k] as i64;
                c[sa] += d;
                c[sb] -= d;
            }
            let f = [
                c[0] as f64 * inv[0],
                c[1] as f64 * inv[1],
                c[2] as f64 * inv[2],
            ];
            worst = worst
                .max((f[0] - f[1]).abs())
                .max((f[0] - f[2]).abs())
                .max((f[1] - f[2]).abs());
        }
        worst
    }

    fn apply_swap(&mut self, i: usize, j: usize) {
        let (a, b) = (self.assign[i] as usize, self.assign[j] as usize);
        let (si, sj) = (self.cdfs.sizes[i], self.cdfs.sizes[j]);
        self.days[a] = self.days[a] + sj - si;
        self.days[b] = self.days[b] + si - sj;
        for k in 0..self.cdfs.bins {
            let (vi, vj) = (self.cdfs.cum[i][k], self.cdfs.cum[j][k]);
            self.cum[a][k] = self.cum[a][k] + vj - vi;
            self.cum[b][k] = self.cum[b][k] + vi - vj;
        }
        self.assign.swap(i, j);
    }
}

fn better(a: (usize, f64), b: (usize, f64)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1 - 1e-15)
}

fn multinomial(n: usize, k: [usize; 3]) -> u128 {
    let mut c: u128 = 1;
    let mut m = 0usize;
    for &kk in &k {
        for i in 1..=kk {
            m += 1;
            c = c * m as u128 / i as u128;
            if c > u128::MAX / 64 {
                return u128::MAX;
            }
        }
    }
    debug_assert_eq!(m, n);
    c
}

fn exhaustive(cdfs: &YearCdfs, targets: (usize, usize), quota: [usize; 3]) -> Vec<u8> {
    fn rec(
        cdfs: &YearCdfs,
        targets: (usize, usize),
        assign: &mut Vec<u8>,
        left: &mut [usize; 3],
        best: &mut Option<(Vec<u8>, (usize, f64))>,
    ) {
        if assign.len() == cdfs.sizes.len() {
            let s = State::new(cdfs, targets, assign.clone()).score();
            if best.as_ref().is_none_or(|(_, b)| better(s, *b)) {
                *best = Some((assign.clone(), s));
            }
            return;
        }
        for label in 0..3u8 {
            if left[label as usize] > 0 {
                left[label as usize] -= 1;
                assign.push(label);
                rec(cdfs, targets, assign, left, best);
                assign.pop();
                left[label as usize] += 1;
            }
        }
    }
    let mut best = None;
    let mut left = quota;
    rec(cdfs, targets, &mut Vec::new(), &mut left, &mut best);
    best.expect("non-empty assignment space").0
}

fn hill_climb(
    cdfs: &YearCdfs,
    targets: (usize, usize),
    quota: [usize; 3],
    rng: &mut ChaCha8Rng,
) -> (Vec<u8>, (usize, f64)) {
    let mut assign: Vec<u8> = (0..3u8)
        .flat_map(|l| std::iter::repeat_n(l, quota[l as usize]))
        .collect();
    assign.shuffle(rng);
    let mut state = State::new(cdfs, targets, assign);
    let mut current = state.score();
    let n = state.assign.len();
    let mut pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    loop {
        pairs.shuffle(rng);
        let mut improved = false;
        for &(i, j) in &pairs {
            if state.assign[i] == state.assign[j] {
                continue;
            }
            let dev = state.swap_deviation(i, j);
            if dev > current.0 {
                continue;
            }
            let s = (dev, state.max_ks(Some((i, j))));
            if better(s, current) {
                state.apply_swap(i, j);
                current = s;
                improved = true;
            }
        }
        if !improved {
            return (state.assign, current);
        }
    }
}

/// Assigns whole water years of the native record to train/selection/test.
pub fn split_timesteps(series: &ForcingSeries, ratio: SplitRatio, seed: u64) -> Result<SubsetMask> {
    let start = series.spinup_len();
    let q: Vec<f64> = series
        .records()
        .iter()
        .enumerate()
        .skip(start)
        .map(|(i, r)| r.q_obs.ok_or(Error::MissingObservation { index: i }))
        .collect::<Result<_>>()?;

    // year blocks, relative to the native part
    let wys = &series.water_years()[start..];
    let mut years: Vec<std::ops::Range<usize>> = Vec::new();
    for (i, wy) in wys.iter().enumerate() {
        match years.last_mut() {
            Some(r) if wys[r.start] == *wy => r.end = i + 1,
            _ => years.push(i..i + 1),
        }
    }
    let n_years = years.len();
    let (y_train, y_sel, y_test) = ratio.shares(n_years);
    if n_years < MIN_YEARS || y_sel == 0 || y_test == 0 || y_train == 0 {
        return Err(Error::TooFewYears {
            needed: MIN_YEARS,
            found: n_years,
        });
    }

    let (_, d_sel, d_test) = ratio.shares(q.len());
    let cdfs = YearCdfs::new(&years, &q);
    let targets = (d_sel, d_test);
    let quota = [y_train, y_sel, y_test];

    let assign = if multinomial(n_years, quota) <= EXHAUSTIVE_LIMIT {
        exhaustive(&cdfs, targets, quota)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best: Option<(Vec<u8>, (usize, f64))> = None;
        for _ in 0..RESTARTS {
            let (a, s) = hill_climb(&cdfs, targets, quota, &mut rng);
            if best.as_ref().is_none_or(|(_, b)| better(s, *b)) {
                best = Some((a, s));
            }
        }
        best.expect("at least one restart").0
    };

    let mut labels = vec![Subset::Spinup; series.len()];
    for (y, range) in years.iter().enumerate() {
        let label = Subset::EVALUATED[assign[y] as usize];
        for t in range.clone() {
            labels[start + t] = label;
        }
    }
    Ok(SubsetMask::from_labels(labels))
}

/// Two-sample KS distance; used by tests and reports.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// Equal-count flow-magnitude groups over the non-spin-up steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowGroupMask {
    /// 1-based group per timestep; `None` on spin-up steps.
    groups: Vec<Option<u8>>,
    n_groups: usize,
    /// Flow values separating consecutive groups (upper bound of groups 1..n-1).
    thresholds: Vec<f64>,
    /// (min, max) observed flow per group.
    ranges: Vec<(f64, f64)>,
}

impl FlowGroupMask {
    pub fn groups(&self) -> &[Option<u8>] {
        &self.groups
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn ranges(&self) -> &[(f64, f64)] {
        &self.ranges
    }

    pub fn members(&self, group: u8) -> Vec<usize> {
        self.groups
            .iter()
            .enumerate()
            .filter(|(_, g)| **g == Some(group))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        (1..=self.n_groups as u8)
            .map(|g| self.members(g).len())
            .collect()
    }

    /// Builds a mask from stored group labels (`None` for spin-up).
    pub fn from_groups(groups: Vec<Option<u8>>, q: &[f64]) -> Result<Self> {
        let n_groups = groups.iter().flatten().copied().max().unwrap_or(0) as usize;
        let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); n_groups];
        for (t, g) in groups.iter().enumerate() {
            if let Some(g) = g {
                let r = &mut ranges[*g as usize - 1];
                r.0 = r.0.min(q[t]);
                r.1 = r.1.max(q[t]);
            }
        }
        let thresholds = ranges
            .iter()
            .take(n_groups.saturating_sub(1))
            .map(|r| r.1)
            .collect();
        Ok(FlowGroupMask {
            groups,
            n_groups,
            thresholds,
            ranges,
        })
    }
}

pub fn flow_groups(
    series: &ForcingSeries,
    mask: &SubsetMask,
    n_groups: usize,
) -> Result<FlowGroupMask> {
    if mask.len() != series.len() {
        return Err(Error::LengthMismatch(format!(
            "mask has {} labels for {} records",
            mask.len(),
            series.len()
        )));
    }
    if n_groups == 0 || n_groups > u8::MAX as usize {
        return Err(Error::InvalidOption(format!("n_groups = {n_groups}")));
    }
    let steps = mask.evaluated_indices();
    let q: Vec<f64> = series
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| match (r.q_obs, mask.labels()[i]) {
            (_, Subset::Spinup) => Ok(f64::NAN),
            (Some(v), _) => Ok(v),
            (None, _) => Err(Error::MissingObservation { index: i }),
        })
        .collect::<Result<_>>()?;

    let mut order = steps.clone();
    order.sort_by(|&a, &b| q[a].total_cmp(&q[b]).then(a.cmp(&b)));
    let len = order.len();
    let mut groups = vec![None; series.len()];
    for (rank, &t) in order.iter().enumerate() {
        groups[t] = Some((rank * n_groups / len.max(1)) as u8 + 1);
    }
    let q_masked: Vec<f64> = q
        .iter()
        .map(|v| if v.is_nan() { 0.0 } else { *v })
        .collect();
    FlowGroupMask::from_groups(groups, &q_masked).map(|mut m| {
        m.n_groups = n_groups;
        m
    })
}
