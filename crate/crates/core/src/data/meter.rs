//! Smart-meter CSV ingestion.
//!
//! Layout: `customer_id,category,date,v1,...,v48` with a header row. Categories
//! are `GC` (general consumption), `CL` (controlled load) and `GG` (gross
//! generation); dates are `YYYY-MM-DD`; values are kWh per half hour.

use std::collections::HashSet;
use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;

use crate::data::SLOTS;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    GeneralConsumption,
    ControlledLoad,
    GrossGeneration,
}

impl Category {
    pub fn code(self) -> &'static str {
        match self {
            Category::GeneralConsumption => "GC",
            Category::ControlledLoad => "CL",
            Category::GrossGeneration => "GG",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_uppercase().as_str() {
            "GC" => Ok(Category::GeneralConsumption),
            "CL" => Ok(Category::ControlledLoad),
            "GG" => Ok(Category::GrossGeneration),
            _ => Err("expected GC, CL or GG".into()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeterRecord {
    pub prosumer_id: String,
    pub category: Category,
    pub date: NaiveDate,
    pub values: Vec<f64>,
}

const ID_COLUMNS: usize = 3;

pub fn load_meter_csv(path: &Path) -> Result<Vec<MeterRecord>> {
    let file = std::fs::File::open(path)?;
    parse_meter_csv(file, path)
}

/// Parses meter records from any reader; `label` is used in error messages.
pub fn parse_meter_csv<R: Read>(reader: R, label: &Path) -> Result<Vec<MeterRecord>> {
    let path = label.to_path_buf();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = rdr.records();

    let Some(header) = rows.next() else {
        return Err(format_err(&path, 1, "missing header row".into()));
    };
    let header = header?;
    check_width(&path, 1, header.len())?;

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for row in rows {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.iter().all(str::is_empty) {
            continue;
        }
        check_width(&path, line, row.len())?;

        let prosumer_id = row[0].to_string();
        if prosumer_id.is_empty() {
            return Err(parse_err(&path, line, 1, "", "empty customer id"));
        }
        let category: Category = row[1]
            .parse()
            .map_err(|msg: String| parse_err(&path, line, 2, &row[1], &msg))?;
        let date = NaiveDate::parse_from_str(&row[2], "%Y-%m-%d")
            .map_err(|e| parse_err(&path, line, 3, &row[2], &e.to_string()))?;
        let values = row
            .iter()
            .skip(ID_COLUMNS)
            .enumerate()
            .map(|(i, cell)| {
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(&path, line, ID_COLUMNS + i + 1, cell, "not a finite number"))
            })
            .collect::<Result<Vec<f64>>>()?;

        if !seen.insert((prosumer_id.clone(), date, category)) {
            return Err(Error::Duplicate {
                path: path.clone(),
                line,
                key: format!("{prosumer_id}/{date}/{category}"),
            });
        }
        out.push(MeterRecord {
            prosumer_id,
            category,
            date,
            values,
        });
    }
    Ok(out)
}

fn check_width(path: &Path, line: u64, width: usize) -> Result<()> {
    if width != ID_COLUMNS + SLOTS {
        let values = width.saturating_sub(ID_COLUMNS);
        return Err(format_err(
            path,
            line,
            format!(
                "expected customer_id, category, date and {SLOTS} half-hour value columns, found {width} columns ({values} value columns)"
            ),
        ));
    }
    Ok(())
}

fn format_err(path: &Path, line: u64, msg: String) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        line,
        msg,
    }
}

fn parse_err(path: &Path, line: u64, col: usize, value: &str, msg: &str) -> Error {
    Error::Parse {
        path: PathBuf::from(path),
        line,
        col,
        value: value.to_string(),
        msg: msg.to_string(),
    }
}

/// Renders records in the meter layout (used for fixtures and round trips).
pub fn write_meter_csv(records: &[MeterRecord]) -> String {
    let mut out = String::from("customer_id,category,date");
    for i in 1..=SLOTS {
        out.push_str(&format!(",v{i}"));
    }
    out.push('\n');
    for r in records {
        out.push_str(&format!("{},{},{}", r.prosumer_id, r.category, r.date));
        for v in &r.values {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}
