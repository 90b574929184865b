//! Irradiance CSV ingestion.
//!
//! Layout: `timestamp,ghi,dni,dhi` with a header row, timestamps ISO-8601 in
//! local time on the hour or half hour, irradiance in W/m². Hourly sources are
//! upsampled to half-hourly slots by linear interpolation.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime, Timelike};

use crate::data::{WeatherDay, SLOTS};
use crate::error::{Error, Result};

/// Longest run of missing slots that is still filled in.
const MAX_GAP: usize = 1;

const TIMESTAMP_FORMATS: [&str; 4] = [
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%d %H:%M",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeatherLoad {
    pub days: BTreeMap<NaiveDate, WeatherDay>,
    /// Days dropped because too many slots were missing.
    pub dropped_days: usize,
}

pub fn load_weather_csv(path: &Path) -> Result<WeatherLoad> {
    parse_weather_csv(std::fs::File::open(path)?, path)
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    TIMESTAMP_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

pub fn parse_weather_csv<R: Read>(reader: R, label: &Path) -> Result<WeatherLoad> {
    let path = label.to_path_buf();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header_width = rdr.headers()?.len();
    if header_width != 4 {
        return Err(Error::Format {
            path,
            line: 1,
            msg: format!("expected columns timestamp,ghi,dni,dhi, found {header_width} columns"),
        });
    }

    let mut slots: BTreeMap<NaiveDate, [Option<[f64; 3]>; SLOTS]> = BTreeMap::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != 4 {
            return Err(Error::Format {
                path,
                line,
                msg: format!("expected 4 columns, found {}", row.len()),
            });
        }
        let parse_err = |col: usize, msg: &str| Error::Parse {
            path: path.clone(),
            line,
            col,
            value: row[col - 1].to_string(),
            msg: msg.to_string(),
        };
        let ts = parse_timestamp(&row[0]).ok_or_else(|| parse_err(1, "not an ISO-8601 timestamp"))?;
        if ts.minute() % 30 != 0 || ts.second() != 0 {
            return Err(parse_err(1, "timestamps must fall on the hour or half hour"));
        }
        let mut values = [0.0; 3];
        for (i, v) in values.iter_mut().enumerate() {
            *v = row[i + 1]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(i + 2, "not a finite number"))?;
        }
        if let Some(neg) = values.iter().find(|&&v| v < 0.0) {
            return Err(Error::Validation(format!(
                "{}:{line}: negative irradiance {neg}",
                path.display()
            )));
        }
        let [ghi, dni, dhi] = values;
        let slot = (ts.hour() * 2 + ts.minute() / 30) as usize;
        let day = slots.entry(ts.date()).or_insert([None; SLOTS]);
        if day[slot].is_some() {
            return Err(Error::Duplicate {
                path: path.clone(),
                line,
                key: ts.to_string(),
            });
        }
        day[slot] = Some([dni, dhi, ghi]);
    }

    let mut out = WeatherLoad::default();
    for (date, day) in slots {
        match fill_day(&day) {
            Some(filled) => {
                out.days.insert(date, filled);
            }
            None => out.dropped_days += 1,
        }
    }
    if out.dropped_days > 0 {
        log::warn!(
            "{}: dropped {} day(s) with gaps longer than {MAX_GAP} slot(s)",
            path.display(),
            out.dropped_days
        );
    }
    Ok(out)
}

/// Fills short gaps: interior gaps linearly, edge gaps by holding the nearest value.
fn fill_day(day: &[Option<[f64; 3]>; SLOTS]) -> Option<WeatherDay> {
    let known: Vec<usize> = (0..SLOTS).filter(|&t| day[t].is_some()).collect();
    let (&first, &last) = (known.first()?, known.last()?);
    if first > MAX_GAP || SLOTS - 1 - last > MAX_GAP {
        return None;
    }
    if known.windows(2).any(|w| w[1] - w[0] - 1 > MAX_GAP) {
        return None;
    }
    let mut filled = [[0.0; 3]; SLOTS];
    for (t, slot) in filled.iter_mut().enumerate() {
        *slot = match day[t] {
            Some(v) => v,
            None => {
                let prev = known.iter().rev().find(|&&k| k < t).copied();
                let next = known.iter().find(|&&k| k > t).copied();
                match (prev, next) {
                    (Some(p), Some(n)) => {
                        let w = (t - p) as f64 / (n - p) as f64;
                        let (a, b) = (day[p]?, day[n]?);
                        [0, 1, 2].map(|c| a[c] + w * (b[c] - a[c]))
                    }
                    (Some(p), None) => day[p]?,
                    (None, Some(n)) => day[n]?,
                    (None, None) => return None,
                }
            }
        };
    }
    Some(WeatherDay {
        dni: filled.iter().map(|v| v[0]).collect(),
        dhi: filled.iter().map(|v| v[1]).collect(),
        ghi: filled.iter().map(|v| v[2]).collect(),
    })
}

/// Renders days in the half-hourly weather layout.
pub fn write_weather_csv(days: &BTreeMap<NaiveDate, WeatherDay>) -> String {
    let mut out = String::from("timestamp,ghi,dni,dhi\n");
    for (date, w) in days {
        for t in 0..SLOTS {
            out.push_str(&format!(
                "{}T{:02}:{:02}:00,{},{},{}\n",
                date,
                t / 2,
                (t % 2) * 30,
                w.ghi[t],
                w.dni[t],
                w.dhi[t]
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<WeatherLoad> {
        parse_weather_csv(text.as_bytes(), Path::new("weather.csv"))
    }

    fn half_hourly(date: &str, f: impl Fn(usize) -> f64) -> String {
        (0..SLOTS)
            .map(|t| {
                let v = f(t);
                format!("{date}T{:02}:{:02}:00,{v},{},{}\n", t / 2, (t % 2) * 30, v / 2.0, v / 4.0)
            })
            .collect()
    }

    #[test]
    fn half_hourly_day_used_as_is() {
        let text = format!("timestamp,ghi,dni,dhi\n{}", half_hourly("2011-01-15", |t| t as f64));
        let load = parse(&text).unwrap();
        let day = &load.days[&"2011-01-15".parse().unwrap()];
        assert_eq!(day.ghi, (0..SLOTS).map(|t| t as f64).collect::<Vec<_>>());
        assert_eq!(day.dni[10], 5.0);
        assert_eq!(day.dhi[10], 2.5);
        assert_eq!(write_weather_csv(&load.days), text);
    }

    #[test]
    fn hourly_constant_is_constant() {
        let mut text = String::from("timestamp,ghi,dni,dhi\n");
        for h in 0..24 {
            text.push_str(&format!("2011-02-01 {h:02}:00,7,7,7\n"));
        }
        let load = parse(&text).unwrap();
        let day = &load.days[&"2011-02-01".parse().unwrap()];
        assert!(day.ghi.iter().chain(&day.dni).chain(&day.dhi).all(|&v| v == 7.0));
    }

    #[test]
    fn hourly_linear_midpoint() {
        let mut text = String::from("timestamp,ghi,dni,dhi\n");
        for h in 0..24 {
            let v = if h >= 10 { 100 } else { 0 };
            text.push_str(&format!("2011-02-01T{h:02}:00,{v},0,0\n"));
        }
        let day = parse(&text).unwrap().days[&"2011-02-01".parse().unwrap()].clone();
        assert_eq!(day.ghi[18], 0.0);
        assert_eq!(day.ghi[19], 50.0);
        assert_eq!(day.ghi[20], 100.0);
        assert_eq!(day.ghi[47], 100.0);
    }

    #[test]
    fn long_gap_drops_day() {
        let text = format!(
            "timestamp,ghi,dni,dhi\n{}{}",
            half_hourly("2011-01-15", |_| 1.0),
            half_hourly("2011-01-16", |_| 1.0)
                .lines()
                .enumerate()
                .filter(|(i, _)| !(20..23).contains(i))
                .map(|(_, l)| format!("{l}\n"))
                .collect::<String>()
        );
        let load = parse(&text).unwrap();
        assert_eq!(load.days.len(), 1);
        assert_eq!(load.dropped_days, 1);
    }

    #[test]
    fn negative_irradiance_rejected() {
        let text = "timestamp,ghi,dni,dhi\n2011-01-15T00:00,-1,0,0\n";
        assert!(matches!(parse(text).unwrap_err(), Error::Validation(_)));
    }

    #[test]
    fn malformed_rows() {
        assert!(matches!(
            parse("timestamp,ghi,dni\n").unwrap_err(),
            Error::Format { line: 1, .. }
        ));
        let err = parse("timestamp,ghi,dni,dhi\nyesterday,1,1,1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, col: 1, .. }), "{err}");
        let err = parse("timestamp,ghi,dni,dhi\n2011-01-15T00:10,1,1,1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { col: 1, .. }), "{err}");
        let dup = "timestamp,ghi,dni,dhi\n2011-01-15T00:00,1,1,1\n2011-01-15T00:00,1,1,1\n";
        assert!(matches!(parse(dup).unwrap_err(), Error::Duplicate { line: 3, .. }));
    }
}
