//! Ingestion of the national daily-report CSV.
//!
//! Only five upstream columns are used: `data` (ISO-8601 timestamp),
//! `totale_positivi`, `dimessi_guariti`, `deceduti` and `totale_casi`. Any
//! other column is ignored.

use std::io::Write;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const COL_DATE: &str = "data";
const COL_QUARANTINED: &str = "totale_positivi";
const COL_RECOVERED: &str = "dimessi_guariti";
const COL_DECEASED: &str = "deceduti";
const COL_TOTAL: &str = "totale_casi";

/// Header of the normalized 5-column output.
pub const NORMALIZED_HEADER: [&str; 5] = ["date", "quarantined", "recovered", "deceased", "total"];

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("inconsistent series at row {row}: {reason}")]
    InconsistentSeries { row: usize, reason: String },
    #[error("window {start}..={end} outside series range {first}..={last}")]
    OutOfRange {
        start: NaiveDate,
        end: NaiveDate,
        first: NaiveDate,
        last: NaiveDate,
    },
    #[error("csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for DataError {
    fn from(e: csv::Error) -> Self {
        DataError::Csv(e.to_string())
    }
}

/// Dated observations on a daily grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedSeries {
    pub dates: Vec<NaiveDate>,
    /// Currently positive.
    pub quarantined: Vec<u64>,
    pub recovered: Vec<u64>,
    pub deceased: Vec<u64>,
    pub total_confirmed: Vec<u64>,
}

impl ObservedSeries {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn first_date(&self) -> Option<NaiveDate> {
        self.dates.first().copied()
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.dates.last().copied()
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let first = self.first_date()?;
        let k = (date - first).num_days();
        (k >= 0 && (k as usize) < self.len()).then_some(k as usize)
    }

    pub fn as_f64(v: &[u64]) -> Vec<f64> {
        v.iter().map(|&x| x as f64).collect()
    }

    /// Checks daily spacing, monotone cumulative columns and `total = Q + R + D`.
    pub fn validate(&self) -> Result<(), DataError> {
        let n = self.len();
        if [self.quarantined.len(), self.recovered.len(), self.deceased.len(), self.total_confirmed.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(DataError::InconsistentSeries {
                row: 0,
                reason: "column lengths differ".into(),
            });
        }
        for k in 0..n {
            let sum = self.quarantined[k] + self.recovered[k] + self.deceased[k];
            if sum != self.total_confirmed[k] {
                return Err(DataError::InconsistentSeries {
                    row: k,
                    reason: format!(
                        "{} + {} + {} = {sum} != total {}",
                        self.quarantined[k], self.recovered[k], self.deceased[k], self.total_confirmed[k]
                    ),
                });
            }
            if k == 0 {
                continue;
            }
            if self.dates[k] - self.dates[k - 1] != Duration::days(1) {
                return Err(DataError::InconsistentSeries {
                    row: k,
                    reason: format!("{} does not follow {} by one day", self.dates[k], self.dates[k - 1]),
                });
            }
            for (name, col) in [
                ("recovered", &self.recovered),
                ("deceased", &self.deceased),
                ("total", &self.total_confirmed),
            ] {
                if col[k] < col[k - 1] {
                    return Err(DataError::InconsistentSeries {
                        row: k,
                        reason: format!("{name} decreases from {} to {}", col[k - 1], col[k]),
                    });
                }
            }
        }
        Ok(())
    }

    /// Writes the normalized `date,quarantined,recovered,deceased,total` CSV.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), DataError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(NORMALIZED_HEADER)?;
        for k in 0..self.len() {
            wr.write_record([
                self.dates[k].to_string(),
                self.quarantined[k].to_string(),
                self.recovered[k].to_string(),
                self.deceased[k].to_string(),
                self.total_confirmed[k].to_string(),
            ])?;
        }
        wr.flush().map_err(|e| DataError::Csv(e.to_string()))?;
        Ok(())
    }
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    // keep the calendar date, drop any time-of-day suffix
    let day = s.trim().split(['T', ' ']).next()?;
    NaiveDate::parse_from_str(day, "%Y-%m-%d").ok()
}

fn parse_count(s: &str, row: usize, col: &str) -> Result<u64, DataError> {
    s.trim().parse::<u64>().map_err(|_| DataError::MalformedRow {
        row,
        reason: format!("`{col}` is not a non-negative integer: {s:?}"),
    })
}

/// Parses the upstream national-trend CSV, or the normalized form written by
/// [`ObservedSeries::write_csv`].
pub fn parse_national_csv(text: &str) -> Result<ObservedSeries, DataError> {
    let mut rd = csv::ReaderBuilder::new().flexible(false).from_reader(text.as_bytes());
    let headers = rd.headers()?.clone();
    let find = |names: &[&str]| {
        names
            .iter()
            .find_map(|n| headers.iter().position(|h| h.trim() == *n))
            .ok_or_else(|| DataError::MissingColumn(names[0].to_string()))
    };
    let c_date = find(&[COL_DATE, NORMALIZED_HEADER[0]])?;
    let c_q = find(&[COL_QUARANTINED, NORMALIZED_HEADER[1]])?;
    let c_r = find(&[COL_RECOVERED, NORMALIZED_HEADER[2]])?;
    let c_d = find(&[COL_DECEASED, NORMALIZED_HEADER[3]])?;
    let c_t = find(&[COL_TOTAL, NORMALIZED_HEADER[4]])?;

    let mut s = ObservedSeries {
        dates: Vec::new(),
        quarantined: Vec::new(),
        recovered: Vec::new(),
        deceased: Vec::new(),
        total_confirmed: Vec::new(),
    };
    for (row, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| DataError::MalformedRow {
            row,
            reason: e.to_string(),
        })?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let date = parse_date(field(c_date)).ok_or_else(|| DataError::MalformedRow {
            row,
            reason: format!("bad date {:?}", field(c_date)),
        })?;
        s.dates.push(date);
        s.quarantined.push(parse_count(field(c_q), row, COL_QUARANTINED)?);
        s.recovered.push(parse_count(field(c_r), row, COL_RECOVERED)?);
        s.deceased.push(parse_count(field(c_d), row, COL_DECEASED)?);
        s.total_confirmed.push(parse_count(field(c_t), row, COL_TOTAL)?);
    }
    s.validate()?;
    Ok(s)
}

/// Inclusive sub-series `start..=end`.
pub fn slice_window(series: &ObservedSeries, start: NaiveDate, end: NaiveDate) -> Result<ObservedSeries, DataError> {
    let out_of_range = || DataError::OutOfRange {
        start,
        end,
        first: series.first_date().unwrap_or(start),
        last: series.last_date().unwrap_or(end),
    };
    if start > end {
        return Err(out_of_range());
    }
    let a = series.index_of(start).ok_or_else(out_of_range)?;
    let b = series.index_of(end).ok_or_else(out_of_range)?;
    Ok(ObservedSeries {
        dates: series.dates[a..=b].to_vec(),
        quarantined: series.quarantined[a..=b].to_vec(),
        recovered: series.recovered[a..=b].to_vec(),
        deceased: series.deceased[a..=b].to_vec(),
        total_confirmed: series.total_confirmed[a..=b].to_vec(),
    })
}
