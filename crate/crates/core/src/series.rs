//! Aligned case/test time series, CSV ingestion, and daily-to-weekly
//! aggregation.

use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeStep {
    Daily,
    Weekly,
}

/// Calendar date or plain integer index labelling the first time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StartLabel {
    Date(NaiveDate),
    Index(i64),
}

impl StartLabel {
    fn render(&self, step: TimeStep, offset: usize) -> String {
        match self {
            StartLabel::Date(d) => {
                let days = match step {
                    TimeStep::Daily => offset as i64,
                    TimeStep::Weekly => 7 * offset as i64,
                };
                (*d + chrono::Duration::days(days)).format("%Y-%m-%d").to_string()
            }
            StartLabel::Index(i) => (i + offset as i64).to_string(),
        }
    }
}

/// Observed cases `O_t` and administered tests `M_t` on a fixed grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedSeries {
    pub start_label: StartLabel,
    pub step: TimeStep,
    pub cases: Vec<u64>,
    pub tests: Vec<u64>,
}

impl ObservedSeries {
    pub fn new(
        start_label: StartLabel,
        step: TimeStep,
        cases: Vec<u64>,
        tests: Vec<u64>,
    ) -> Result<Self> {
        if cases.len() != tests.len() {
            return Err(Error::InvalidSeries(format!(
                "cases ({}) and tests ({}) must have equal length",
                cases.len(),
                tests.len()
            )));
        }
        if cases.is_empty() {
            return Err(Error::InvalidSeries("series must not be empty".into()));
        }
        for (t, (&c, &m)) in cases.iter().zip(&tests).enumerate() {
            if m == 0 {
                return Err(Error::InvalidSeries(format!("tests must be positive at step {t}")));
            }
            if c > m {
                return Err(Error::InvalidSeries(format!(
                    "cases ({c}) exceed tests ({m}) at step {t}"
                )));
            }
        }
        Ok(Self { start_label, step, cases, tests })
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    /// Label for time step `t` (0-based).
    pub fn label(&self, t: usize) -> String {
        self.start_label.render(self.step, t)
    }

    /// Read a `date,cases,tests` CSV. Dates are ISO-8601 or integer indices;
    /// rows with missing or negative values are rejected.
    pub fn from_csv_reader<R: Read>(reader: R, step: TimeStep) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        {
            let headers = rdr.headers()?;
            let expected = ["date", "cases", "tests"];
            let got: Vec<&str> = headers.iter().map(str::trim).collect();
            if got != expected {
                return Err(Error::CsvSchema {
                    row: 0,
                    message: format!("expected header `date,cases,tests`, got `{}`", got.join(",")),
                });
            }
        }
        let mut start_label = None;
        let mut cases = Vec::new();
        let mut tests = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let row = i + 1;
            let record = record?;
            if record.len() != 3 {
                return Err(Error::CsvSchema { row, message: format!("expected 3 cells, got {}", record.len()) });
            }
            let date_cell = record[0].trim();
            let case_cell = record[1].trim();
            let test_cell = record[2].trim();
            if date_cell.is_empty() || case_cell.is_empty() || test_cell.is_empty() {
                return Err(Error::CsvSchema { row, message: "missing cell".into() });
            }
            if start_label.is_none() {
                start_label = Some(parse_label(date_cell, row)?);
            }
            cases.push(parse_count(case_cell, "cases", row)?);
            tests.push(parse_count(test_cell, "tests", row)?);
        }
        let start_label = start_label
            .ok_or_else(|| Error::InvalidSeries("csv contains no data rows".into()))?;
        ObservedSeries::new(start_label, step, cases, tests)
    }

    pub fn from_csv_path<P: AsRef<Path>>(path: P, step: TimeStep) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file, step)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["date", "cases", "tests"])?;
        for t in 0..self.len() {
            wtr.write_record([
                self.label(t),
                self.cases[t].to_string(),
                self.tests[t].to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Keep the half-open window `[from, to)` of time steps.
    pub fn window(&self, from: usize, to: usize) -> Result<ObservedSeries> {
        if from >= to || to > self.len() {
            return Err(Error::InvalidSeries(format!(
                "window {from}..{to} out of range for length {}",
                self.len()
            )));
        }
        let start_label = match self.start_label {
            StartLabel::Date(d) => {
                let days = match self.step {
                    TimeStep::Daily => from as i64,
                    TimeStep::Weekly => 7 * from as i64,
                };
                StartLabel::Date(d + chrono::Duration::days(days))
            }
            StartLabel::Index(i) => StartLabel::Index(i + from as i64),
        };
        ObservedSeries::new(
            start_label,
            self.step,
            self.cases[from..to].to_vec(),
            self.tests[from..to].to_vec(),
        )
    }
}

fn parse_label(cell: &str, row: usize) -> Result<StartLabel> {
    if let Ok(date) = NaiveDate::parse_from_str(cell, "%Y-%m-%d") {
        return Ok(StartLabel::Date(date));
    }
    cell.parse::<i64>().map(StartLabel::Index).map_err(|_| Error::CsvSchema {
        row,
        message: format!("`{cell}` is neither an ISO-8601 date nor an integer index"),
    })
}

fn parse_count(cell: &str, name: &str, row: usize) -> Result<u64> {
    cell.parse::<u64>().map_err(|_| Error::CsvSchema {
        row,
        message: format!("{name} value `{cell}` is not a non-negative integer"),
    })
}

/// Sum a daily series into calendar weeks; a trailing partial week is dropped
/// with a warning.
pub fn aggregate_weekly(series: &ObservedSeries) -> Result<ObservedSeries> {
    if series.step != TimeStep::Daily {
        return Err(Error::InvalidSeries("weekly aggregation expects a daily series".into()));
    }
    let weeks = series.len() / 7;
    if weeks == 0 {
        return Err(Error::InvalidSeries(format!(
            "need at least 7 daily values to form a week, got {}",
            series.len()
        )));
    }
    let dropped = series.len() - 7 * weeks;
    if dropped > 0 {
        log::warn!("dropping {dropped} trailing day(s) that do not fill a week");
    }
    let cases = (0..weeks)
        .map(|w| series.cases[7 * w..7 * w + 7].iter().sum())
        .collect();
    let tests = (0..weeks)
        .map(|w| series.tests[7 * w..7 * w + 7].iter().sum())
        .collect();
    let start_label = match series.start_label {
        StartLabel::Date(d) => StartLabel::Date(d),
        StartLabel::Index(_) => StartLabel::Index(1),
    };
    ObservedSeries::new(start_label, TimeStep::Weekly, cases, tests)
}
