//! CSV ingestion and report serialization.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{validate_dataset, CovariateKind, Dataset};
use crate::error::{Error, Result};
use crate::monte_carlo::RejectionTable;
use crate::runner::TestReport;

/// Header names for the outcome, treatment, instrument and covariates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub outcome: String,
    pub treatment: String,
    pub instrument: String,
    pub covariates: Vec<(String, CovariateKind)>,
}

impl ColumnMap {
    pub fn new(outcome: &str, treatment: &str, instrument: &str) -> ColumnMap {
        ColumnMap {
            outcome: outcome.into(),
            treatment: treatment.into(),
            instrument: instrument.into(),
            covariates: Vec::new(),
        }
    }

    pub fn covariate(mut self, name: &str, kind: CovariateKind) -> ColumnMap {
        self.covariates.push((name.into(), kind));
        self
    }

    fn names(&self) -> Vec<&str> {
        let mut v = vec![
            self.outcome.as_str(),
            self.treatment.as_str(),
            self.instrument.as_str(),
        ];
        v.extend(self.covariates.iter().map(|(c, _)| c.as_str()));
        v
    }

    pub fn kinds(&self) -> Vec<CovariateKind> {
        self.covariates.iter().map(|(_, k)| *k).collect()
    }

    fn validate(&self) -> Result<()> {
        let names = self.names();
        for (i, a) in names.iter().enumerate() {
            if names[..i].contains(a) {
                return Err(Error::InvalidConfig(format!("column `{a}` mapped twice")));
            }
        }
        Ok(())
    }
}

/// Parses `NAME:kind` pairs separated by commas, e.g. `X1:discrete,X2:discrete`.
pub fn parse_covariates(spec: &str) -> Result<Vec<(String, CovariateKind)>> {
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (name, kind) = item.split_once(':').unwrap_or((item, "discrete"));
            let kind = match kind.trim().to_ascii_lowercase().as_str() {
                "discrete" | "d" => CovariateKind::Discrete,
                "continuous" | "c" => CovariateKind::Continuous,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "covariate kind `{other}` is neither discrete nor continuous"
                    )))
                }
            };
            Ok((name.trim().to_string(), kind))
        })
        .collect()
}

/// Reads a headed CSV from `reader`. Rows are numbered from 1, excluding the header.
pub fn read_csv_from<R: Read>(reader: R, map: &ColumnMap) -> Result<Dataset> {
    map.validate()?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let positions = map
        .names()
        .into_iter()
        .map(|name| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut raw = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let record = record?;
        let row = positions
            .iter()
            .map(|&p| {
                let cell = record.get(p).unwrap_or("");
                cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                    row: k + 1,
                    column: header[p].to_string(),
                    value: cell.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        raw.push(row);
    }
    validate_dataset(&raw, &map.kinds())
}

pub fn read_csv(path: &Path, map: &ColumnMap) -> Result<Dataset> {
    read_csv_from(std::fs::File::open(path)?, map)
}

/// Writes `dataset` with header `y,d,z,x1,...`.
pub fn write_dataset<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let k = dataset.covariate_kinds().len();
    let mut header = vec!["y".to_string(), "d".into(), "z".into()];
    header.extend((1..=k).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for r in dataset.records() {
        let mut row = vec![r.y.to_string(), r.d.to_string(), r.z.to_string()];
        row.extend(r.x.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
    Text,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Format> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "text" | "txt" => Ok(Format::Text),
            other => Err(Error::InvalidConfig(format!("unknown format `{other}`"))),
        }
    }
}

/// Anything [`write_report`] can serialize.
pub trait Report: Serialize {
    fn csv(&self) -> String;
    fn text(&self) -> String;
}

impl Report for TestReport {
    /// One line per level: `alpha,critical_value,reject`, headed by the
    /// statistic and p-value columns repeated on each line.
    fn csv(&self) -> String {
        let mut out = String::from("statistic,p_value,alpha,critical_value,reject,n,bootstrap_reps,seed\n");
        for c in &self.critical_values {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                self.statistic, self.p_value, c.alpha, c.value, c.reject, self.n, self.bootstrap_reps, self.seed
            );
        }
        out
    }

    fn text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "branch: {:?}", self.branch);
        let _ = writeln!(out, "statistic: {:.6}", self.statistic);
        let _ = writeln!(out, "p-value: {:.4}", self.p_value);
        for c in &self.critical_values {
            let verdict = if c.reject { "reject" } else { "do not reject" };
            let _ = writeln!(out, "critical value at {}: {:.6} ({verdict})", c.alpha, c.value);
        }
        let _ = writeln!(out, "n: {}", self.n);
        let _ = writeln!(out, "grid: {} x {}", self.grid_sizes.0, self.grid_sizes.1);
        let _ = writeln!(out, "bootstrap reps: {}", self.bootstrap_reps);
        let _ = writeln!(out, "seed: {}", self.seed);
        out
    }
}

impl Report for RejectionTable {
    fn csv(&self) -> String {
        self.to_csv()
    }

    fn text(&self) -> String {
        let mut out = format!(
            "rejection rates ({} replicates, {} bootstrap draws)\n",
            self.reps, self.bootstrap_reps
        );
        out.push_str(&self.to_csv().replace(',', "\t"));
        let failed = self.total_failures();
        if failed > 0 {
            let _ = writeln!(out, "failed replicates: {failed}");
        }
        out
    }
}

pub fn write_report<R: Report, W: Write>(report: &R, format: Format, mut writer: W) -> Result<()> {
    match format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut writer, report)?;
            writeln!(writer)?;
        }
        Format::Csv => writer.write_all(report.csv().as_bytes())?,
        Format::Text => writer.write_all(report.text().as_bytes())?,
    }
    Ok(())
}

pub fn report_to_string<R: Report>(report: &R, format: Format) -> Result<String> {
    let mut buf = Vec::new();
    write_report(report, format, &mut buf)?;
    Ok(String::from_utf8(buf).expect("reports are UTF-8"))
}
