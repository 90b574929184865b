//! Canonical dataset file.
//!
//! ```text
//! pvdisagg-dataset 1
//! slots 48
//! units net_load=kWh pv=kWh consumption=kWh irradiance=W/m2
//! samples <N>
//! <id>|<date>|<net_load>|<dni>|<dhi>|<ghi>|<pv or ->|<consumption or ->
//! ```
//!
//! Series are comma-separated with shortest round-trip float formatting, so
//! writing and reading back is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::{DailySample, WeatherDay, SLOTS};
use crate::error::{Error, Result};

pub const MAGIC: &str = "pvdisagg-dataset";
pub const VERSION: u32 = 1;
const UNITS: &str = "net_load=kWh pv=kWh consumption=kWh irradiance=W/m2";

fn push_series(out: &mut String, xs: &[f64]) {
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write!(out, "{x}").expect("write to string");
    }
}

pub fn write_dataset(samples: &[DailySample]) -> Result<String> {
    let mut out = format!("{MAGIC} {VERSION}\nslots {SLOTS}\nunits {UNITS}\nsamples {}\n", samples.len());
    for s in samples {
        s.validate()?;
        if s.prosumer_id.contains(['|', '\n', '\r']) || s.prosumer_id.is_empty() {
            return Err(Error::Validation(format!(
                "prosumer id {:?} cannot be stored in a dataset file",
                s.prosumer_id
            )));
        }
        write!(out, "{}|{}|", s.prosumer_id, s.date).expect("write to string");
        for series in [&s.net_load, &s.weather.dni, &s.weather.dhi, &s.weather.ghi] {
            push_series(&mut out, series);
            out.push('|');
        }
        for (i, opt) in [&s.pv_truth, &s.consumption].into_iter().enumerate() {
            match opt {
                Some(v) => push_series(&mut out, v),
                None => out.push('-'),
            }
            out.push(if i == 0 { '|' } else { '\n' });
        }
    }
    Ok(out)
}

pub fn save_dataset(path: &Path, samples: &[DailySample]) -> Result<()> {
    std::fs::write(path, write_dataset(samples)?)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Vec<DailySample>> {
    read_dataset(&std::fs::read_to_string(path)?, path)
}

pub fn read_dataset(text: &str, label: &Path) -> Result<Vec<DailySample>> {
    let err = |line: usize, msg: String| Error::Format {
        path: label.to_path_buf(),
        line: line as u64,
        msg,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut header = |key: &str| -> Result<String> {
        let (n, l) = lines.next().ok_or_else(|| err(0, format!("missing {key} header")))?;
        l.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| err(n, format!("expected `{key} ...` header, found {l:?}")))
    };
    let version = header(MAGIC)?;
    if version != VERSION.to_string() {
        return Err(err(1, format!("unsupported dataset version {version}")));
    }
    let slots = header("slots")?;
    if slots != SLOTS.to_string() {
        return Err(err(2, format!("dataset has {slots} slots per day, expected {SLOTS}")));
    }
    header("units")?;
    let count: usize = header("samples")?
        .parse()
        .map_err(|e| err(4, format!("bad sample count: {e}")))?;

    let mut out = Vec::with_capacity(count);
    for (n, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('|').collect();
        if fields.len() != 8 {
            return Err(err(n, format!("expected 8 |-separated fields, found {}", fields.len())));
        }
        let series = |i: usize| -> Result<Vec<f64>> {
            let v = fields[i]
                .split(',')
                .map(|x| x.parse::<f64>())
                .collect::<Result<Vec<f64>, _>>()
                .map_err(|e| err(n, format!("field {}: {e}", i + 1)))?;
            if v.len() != SLOTS {
                return Err(err(n, format!("field {} has {} values, expected {SLOTS}", i + 1, v.len())));
            }
            Ok(v)
        };
        let optional = |i: usize| -> Result<Option<Vec<f64>>> {
            if fields[i] == "-" {
                Ok(None)
            } else {
                series(i).map(Some)
            }
        };
        let sample = DailySample {
            prosumer_id: fields[0].to_string(),
            date: fields[1]
                .parse()
                .map_err(|e| err(n, format!("bad date {:?}: {e}", fields[1])))?,
            net_load: series(2)?,
            weather: WeatherDay {
                dni: series(3)?,
                dhi: series(4)?,
                ghi: series(5)?,
            },
            pv_truth: optional(6)?,
            consumption: optional(7)?,
        };
        sample.validate().map_err(|e| err(n, e.to_string()))?;
        out.push(sample);
    }
    if out.len() != count {
        return Err(err(4, format!("header declares {count} samples, found {}", out.len())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_generate, SynthConfig};
    use proptest::prelude::*;

    #[test]
    fn truncated_file_is_rejected() {
        let text = write_dataset(&synth_generate(&SynthConfig::new(1, 2, 0))).unwrap();
        let cut: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(read_dataset(&cut, Path::new("d")).is_err());
        assert!(read_dataset("nonsense\n", Path::new("d")).is_err());
    }

    #[test]
    fn bad_ids_are_refused() {
        let mut data = synth_generate(&SynthConfig::new(1, 1, 0));
        data[0].prosumer_id = "a|b".into();
        assert!(write_dataset(&data).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn write_read_is_identity(seed in 0u64..10_000, drop_truth in any::<bool>()) {
            let mut data = synth_generate(&SynthConfig::new(2, 3, seed));
            if drop_truth {
                data[1] = data[1].without_truth();
            }
            let text = write_dataset(&data).unwrap();
            let back = read_dataset(&text, Path::new("mem")).unwrap();
            prop_assert_eq!(&back, &data);
            prop_assert_eq!(write_dataset(&back).unwrap(), text);
        }
    }
}
