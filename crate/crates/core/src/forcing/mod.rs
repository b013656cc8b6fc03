//! Daily forcing ingestion, water-year tagging and spin-up construction.

mod split;
pub mod synthetic;

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use split::{
    flow_groups, ks_distance, split_timesteps, FlowGroupMask, SplitRatio, Subset, SubsetCounts,
    SubsetMask,
};

/// One day of forcing and (optionally) observed streamflow, all in mm/day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForcingRecord {
    pub date: NaiveDate,
    pub precip: f64,
    pub pet: f64,
    pub q_obs: Option<f64>,
}

/// Header names of the four input columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMap {
    pub date: String,
    pub precip: String,
    pub pet: String,
    pub q_obs: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            date: "date".into(),
            precip: "precip_mm".into(),
            pet: "pet_mm".into(),
            q_obs: "q_mm".into(),
        }
    }
}

/// Water year running Oct 1 – Sep 30, named after the year it ends in.
pub fn water_year(date: NaiveDate) -> i32 {
    if date.month() >= 10 {
        date.year() + 1
    } else {
        date.year()
    }
}

/// Gap-free daily series, optionally prefixed by synthetic spin-up records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcingSeries {
    records: Vec<ForcingRecord>,
    water_year: Vec<i32>,
    spinup_len: usize,
}

impl ForcingSeries {
    /// Validates and tags a native (spin-up free) series.
    pub fn new(records: Vec<ForcingRecord>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            let line = i + 2;
            check_forcing(line, "precip", r.precip)?;
            check_forcing(line, "pet", r.pet)?;
            if i > 0 {
                let prev = records[i - 1].date;
                if prev.succ_opt() != Some(r.date) {
                    return Err(Error::NonConsecutiveDates {
                        line,
                        prev,
                        next: r.date,
                    });
                }
            }
        }
        let water_year = records.iter().map(|r| water_year(r.date)).collect();
        Ok(ForcingSeries {
            records,
            water_year,
            spinup_len: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[ForcingRecord] {
        &self.records
    }

    pub fn spinup_len(&self) -> usize {
        self.spinup_len
    }

    pub fn native_len(&self) -> usize {
        self.records.len() - self.spinup_len
    }

    pub fn native_records(&self) -> &[ForcingRecord] {
        &self.records[self.spinup_len..]
    }

    pub fn water_years(&self) -> &[i32] {
        &self.water_year
    }

    pub fn is_spinup(&self, t: usize) -> bool {
        t < self.spinup_len
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.records.iter().map(|r| r.date).collect()
    }

    pub fn precip(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.precip).collect()
    }

    pub fn pet(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.pet).collect()
    }

    pub fn q_obs(&self) -> Vec<Option<f64>> {
        self.records.iter().map(|r| r.q_obs).collect()
    }

    /// Observed flow, failing on the first missing value.
    pub fn q_obs_complete(&self) -> Result<Vec<f64>> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| r.q_obs.ok_or(Error::MissingObservation { index: i }))
            .collect()
    }

    /// Indices of records whose observed flow is missing.
    pub fn missing_q(&self) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.q_obs.is_none())
            .map(|(i, _)| i)
            .collect()
    }

    /// Replaces observed flow (used for synthetic experiments).
    pub fn with_observations(&self, q: &[f64]) -> Result<Self> {
        if q.len() != self.len() {
            return Err(Error::LengthMismatch(format!(
                "{} observations for {} records",
                q.len(),
                self.len()
            )));
        }
        let mut out = self.clone();
        for (r, &v) in out.records.iter_mut().zip(q) {
            r.q_obs = Some(v);
        }
        Ok(out)
    }

    /// Prepends `repeats` copies of the first water year, back-dated one day per step.
    pub fn build_spinup(&self, repeats: usize) -> Result<Self> {
        let native = self.native_records();
        let first = native.first().ok_or(Error::IncompleteFirstYear)?;
        if first.date.month() != 10 || first.date.day() != 1 {
            return Err(Error::IncompleteFirstYear);
        }
        let wy = water_year(first.date);
        let year_len = native
            .iter()
            .take_while(|r| water_year(r.date) == wy)
            .count();
        let last = native[year_len - 1].date;
        if last.month() != 9 || last.day() != 30 {
            return Err(Error::IncompleteFirstYear);
        }

        let spinup_len = repeats * year_len;
        let mut records = Vec::with_capacity(spinup_len + native.len());
        for k in 0..spinup_len {
            let mut r = native[k % year_len];
            r.date = first.date - Duration::days((spinup_len - k) as i64);
            records.push(r);
        }
        records.extend_from_slice(native);
        let water_year = records.iter().map(|r| water_year(r.date)).collect();
        Ok(ForcingSeries {
            records,
            water_year,
            spinup_len,
        })
    }
}

fn check_forcing(line: usize, column: &'static str, value: f64) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::MalformedRow {
            line,
            reason: format!("non-finite {column}"),
        });
    }
    if value < 0.0 {
        return Err(Error::NegativeForcing {
            line,
            column,
            value,
        });
    }
    Ok(())
}

pub fn load_forcing(path: impl AsRef<Path>, columns: &ColumnMap) -> Result<ForcingSeries> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_forcing(file, columns)
}

fn sniff_delimiter(header: &str) -> u8 {
    b"\t;,"
        .iter()
        .copied()
        .find(|d| header.as_bytes().contains(d))
        .unwrap_or(b',')
}

fn parse_missing(s: &str) -> bool {
    let s = s.trim();
    s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan")
}

/// Reads delimiter-separated daily forcing (tab, semicolon or comma, sniffed from the header).
///
/// Missing or negative observed flow is recorded as `None`; missing forcing is an error.
pub fn read_forcing<R: Read>(reader: R, columns: &ColumnMap) -> Result<ForcingSeries> {
    let mut buf = BufReader::new(reader);
    let mut header = String::new();
    buf.read_line(&mut header)
        .map_err(|e| Error::io("<forcing>", e))?;
    let delimiter = sniff_delimiter(&header);
    let chained = std::io::Cursor::new(header.into_bytes()).chain(buf);
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(chained);

    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MalformedRow {
                line: 1,
                reason: format!("missing column `{name}`"),
            })
    };
    let (ci_date, ci_p, ci_pet, ci_q) = (
        col(&columns.date)?,
        col(&columns.precip)?,
        col(&columns.pet)?,
        col(&columns.q_obs)?,
    );

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::MalformedRow {
            line,
            reason: e.to_string(),
        })?;
        let field = |idx: usize| row.get(idx).unwrap_or("");
        let date = NaiveDate::parse_from_str(field(ci_date), "%Y-%m-%d").map_err(|e| {
            Error::MalformedRow {
                line,
                reason: format!("bad date `{}`: {e}", field(ci_date)),
            }
        })?;
        let number = |idx: usize, name: &str| -> Result<f64> {
            let s = field(idx);
            if parse_missing(s) {
                return Err(Error::MalformedRow {
                    line,
                    reason: format!("missing {name}"),
                });
            }
            s.parse::<f64>().map_err(|_| Error::MalformedRow {
                line,
                reason: format!("bad {name} `{s}`"),
            })
        };
        let precip = number(ci_p, "precip")?;
        let pet = number(ci_pet, "pet")?;
        let q_raw = field(ci_q);
        let q_obs = if parse_missing(q_raw) {
            None
        } else {
            let v = q_raw.parse::<f64>().map_err(|_| Error::MalformedRow {
                line,
                reason: format!("bad q `{q_raw}`"),
            })?;
            (v.is_finite() && v >= 0.0).then_some(v)
        };
        check_forcing(line, "precip", precip)?;
        check_forcing(line, "pet", pet)?;
        if let Some(prev) = records.last().map(|r: &ForcingRecord| r.date) {
            if prev.succ_opt() != Some(date) {
                return Err(Error::NonConsecutiveDates {
                    line,
                    prev,
                    next: date,
                });
            }
        }
        records.push(ForcingRecord {
            date,
            precip,
            pet,
            q_obs,
        });
    }
    ForcingSeries::new(records)
}
