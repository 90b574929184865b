//! Joins meter and weather records into prosumer-day samples.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::meter::{Category, MeterRecord};
use crate::data::{quantize_kwh, DailySample, WeatherDay, SLOTS};
use crate::error::{Error, Result};

/// Type-1 (PV metered) and Type-2 (net load only) prosumer ids.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ProsumerSplit {
    pub p1: BTreeSet<String>,
    pub p2: BTreeSet<String>,
}

impl ProsumerSplit {
    pub fn new(p1: BTreeSet<String>, p2: BTreeSet<String>) -> Result<Self> {
        if let Some(both) = p1.intersection(&p2).next() {
            return Err(Error::Config(format!("prosumer {both} is in both P1 and P2")));
        }
        Ok(Self { p1, p2 })
    }

    /// Every prosumer is Type 1.
    pub fn all_type1<'a>(ids: impl IntoIterator<Item = &'a str>) -> Self {
        Self {
            p1: ids.into_iter().map(str::to_string).collect(),
            p2: BTreeSet::new(),
        }
    }

    /// Seeded random split; `round(p2_fraction * n)` prosumers become Type 2.
    pub fn by_fraction<'a>(ids: impl IntoIterator<Item = &'a str>, p2_fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p2_fraction) {
            return Err(Error::Config(format!("P2 fraction {p2_fraction} outside [0, 1]")));
        }
        let mut ids: Vec<String> = ids.into_iter().map(str::to_string).collect::<BTreeSet<_>>().into_iter().collect();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_p2 = (p2_fraction * ids.len() as f64).round() as usize;
        let p2 = ids.split_off(ids.len() - n_p2);
        Self::new(ids.into_iter().collect(), p2.into_iter().collect())
    }

    pub fn is_type1(&self, id: &str) -> Option<bool> {
        if self.p1.contains(id) {
            Some(true)
        } else if self.p2.contains(id) {
            Some(false)
        } else {
            None
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AssembleSummary {
    pub days_kept: usize,
    /// Prosumer-days with meter data but no weather for that date.
    pub dropped_no_weather: usize,
    /// Prosumer-days missing GC, or missing GG for a Type-1 prosumer.
    pub dropped_incomplete_meter: usize,
    pub prosumers_filtered: Vec<String>,
}

#[derive(Default)]
struct DayRecords<'a> {
    gc: Option<&'a [f64]>,
    cl: Option<&'a [f64]>,
    gg: Option<&'a [f64]>,
}

/// Builds samples with `net = (GC + CL) - GG`; PV truth is GG for Type-1 prosumers.
///
/// Output is sorted by (prosumer, date) regardless of input order. Missing
/// controlled load counts as zero; Type-2 days without GG count it as zero too.
pub fn assemble_days(
    meter: &[MeterRecord],
    weather: &BTreeMap<NaiveDate, WeatherDay>,
    split: &ProsumerSplit,
) -> Result<(Vec<DailySample>, AssembleSummary)> {
    let mut grouped: BTreeMap<(&str, NaiveDate), DayRecords> = BTreeMap::new();
    for r in meter {
        if r.values.len() != SLOTS {
            return Err(Error::Validation(format!(
                "{} {} {}: {} values, expected {SLOTS}",
                r.prosumer_id,
                r.date,
                r.category,
                r.values.len()
            )));
        }
        let day = grouped.entry((r.prosumer_id.as_str(), r.date)).or_default();
        let slot = match r.category {
            Category::GeneralConsumption => &mut day.gc,
            Category::ControlledLoad => &mut day.cl,
            Category::GrossGeneration => &mut day.gg,
        };
        *slot = Some(&r.values);
    }

    let mut summary = AssembleSummary::default();
    let mut out = Vec::new();
    for ((id, date), day) in grouped {
        let type1 = split.is_type1(id).ok_or_else(|| {
            Error::Config(format!("prosumer {id} appears in meter data but in neither P1 nor P2"))
        })?;
        let Some(gc) = day.gc else {
            summary.dropped_incomplete_meter += 1;
            continue;
        };
        if type1 && day.gg.is_none() {
            summary.dropped_incomplete_meter += 1;
            continue;
        }
        let Some(w) = weather.get(&date) else {
            summary.dropped_no_weather += 1;
            continue;
        };
        let zeros = [0.0; SLOTS];
        let cl = day.cl.unwrap_or(&zeros);
        let gg = day.gg.unwrap_or(&zeros);
        let consumption: Vec<f64> = gc
            .iter()
            .zip(cl)
            .map(|(a, b)| quantize_kwh(*a) + quantize_kwh(*b))
            .collect();
        let pv: Vec<f64> = gg.iter().map(|&v| quantize_kwh(v)).collect();
        let net_load = consumption.iter().zip(&pv).map(|(c, g)| c - g).collect();
        out.push(DailySample {
            prosumer_id: id.to_string(),
            date,
            weather: w.clone(),
            net_load,
            pv_truth: type1.then_some(pv),
            consumption: type1.then_some(consumption),
        });
    }
    summary.days_kept = out.len();
    Ok((out, summary))
}

/// Nearest-rank percentile of sorted values, `pct` in [0, 100].
fn nearest_rank(sorted: &[f64], pct: f64) -> f64 {
    let n = sorted.len();
    let rank = ((pct / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Drops prosumers whose first-year mean daily consumption or generation lies
/// outside the `[low_pct, high_pct]` nearest-rank percentile band.
///
/// Returns the surviving records and the removed prosumer ids.
pub fn percentile_filter(records: &[MeterRecord], low_pct: f64, high_pct: f64) -> (Vec<MeterRecord>, Vec<String>) {
    let mut first_day: BTreeMap<&str, NaiveDate> = BTreeMap::new();
    for r in records {
        let e = first_day.entry(&r.prosumer_id).or_insert(r.date);
        *e = (*e).min(r.date);
    }
    // (consumption total, generation total, days)
    let mut totals: BTreeMap<&str, (f64, f64, BTreeSet<NaiveDate>)> = BTreeMap::new();
    for r in records {
        let start = first_day[r.prosumer_id.as_str()];
        if (r.date - start).num_days() >= 365 {
            continue;
        }
        let e = totals.entry(&r.prosumer_id).or_default();
        let day_total: f64 = r.values.iter().sum();
        match r.category {
            Category::GrossGeneration => e.1 += day_total,
            _ => e.0 += day_total,
        }
        e.2.insert(r.date);
    }
    let means: Vec<(&str, f64, f64)> = totals
        .iter()
        .map(|(id, (c, g, days))| {
            let n = days.len().max(1) as f64;
            (*id, c / n, g / n)
        })
        .collect();
    if means.is_empty() {
        return (records.to_vec(), Vec::new());
    }
    let band = |pick: fn(&(&str, f64, f64)) -> f64| {
        let mut v: Vec<f64> = means.iter().map(pick).collect();
        v.sort_by(f64::total_cmp);
        (nearest_rank(&v, low_pct), nearest_rank(&v, high_pct))
    };
    let (c_lo, c_hi) = band(|m| m.1);
    let (g_lo, g_hi) = band(|m| m.2);
    let removed: BTreeSet<&str> = means
        .iter()
        .filter(|(_, c, g)| *c < c_lo || *c > c_hi || *g < g_lo || *g > g_hi)
        .map(|(id, _, _)| *id)
        .collect();
    let kept = records
        .iter()
        .filter(|r| !removed.contains(r.prosumer_id.as_str()))
        .cloned()
        .collect();
    (kept, removed.into_iter().map(str::to_string).collect())
}
