//! Deterministic synthetic prosumer world with full ground truth.
//!
//! All prosumers share one weather record per day. Each day draws a clearness
//! factor that scales a seasonal clear-sky bell into GHI; the direct and diffuse
//! channels split GHI according to the same factor. PV is proportional to GHI
//! through the prosumer's capacity, consumption is a base load with morning and
//! evening peaks, and net load is consumption minus PV. Energy series are on the
//! [`KWH_QUANTUM`](super::KWH_QUANTUM) grid so the closure is exact.

use std::f64::consts::PI;

use chrono::{Datelike, Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{quantize_kwh, DailySample, WeatherDay, SLOTS};

/// Reference irradiance that maps to full rated output, W/m².
pub const GHI_REFERENCE: f64 = 1000.0;

/// First and last slot that may see daylight.
pub const FIRST_DAYLIGHT_SLOT: usize = 12;
pub const LAST_DAYLIGHT_SLOT: usize = 39;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub prosumers: usize,
    pub days: usize,
    pub seed: u64,
    pub start: NaiveDate,
}

impl SynthConfig {
    pub fn new(prosumers: usize, days: usize, seed: u64) -> Self {
        Self {
            prosumers,
            days,
            seed,
            start: NaiveDate::from_ymd_opt(2011, 1, 1).expect("valid date"),
        }
    }
}

/// Per-prosumer hidden parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthProsumer {
    pub id: String,
    /// Rated capacity, kW.
    pub capacity_kw: f64,
    pub base_kwh: f64,
    pub morning_kwh: f64,
    pub evening_kwh: f64,
}

/// Clear-sky GHI for every slot of the day, zero outside daylight.
pub fn clear_sky_ghi(date: NaiveDate) -> Vec<f64> {
    // Southern-hemisphere solar year: longest day near 21 December.
    let phase = 2.0 * PI * (f64::from(date.ordinal()) - 355.0) / 365.0;
    let peak = 775.0 + 225.0 * phase.cos();
    let half_day = 12.0 + 2.0 * phase.cos();
    let noon = 25.5;
    let rise = noon - half_day;
    (0..SLOTS)
        .map(|t| {
            let x = (t as f64 + 0.5 - rise) / (2.0 * half_day);
            if x <= 0.0 || x >= 1.0 || !(FIRST_DAYLIGHT_SLOT..=LAST_DAYLIGHT_SLOT).contains(&t) {
                0.0
            } else {
                peak * (PI * x).sin()
            }
        })
        .collect()
}

/// Irradiance for one day from its clear-sky curve, clearness and per-slot attenuation.
pub fn day_weather(clear: &[f64], clearness: f64, attenuation: &[f64]) -> WeatherDay {
    let direct_share = 0.8 * clearness;
    let ghi: Vec<f64> = clear
        .iter()
        .zip(attenuation)
        .map(|(&c, &a)| c * clearness * a)
        .collect();
    WeatherDay {
        dni: ghi.iter().map(|g| g * direct_share).collect(),
        dhi: ghi.iter().map(|g| g * (1.0 - direct_share)).collect(),
        ghi,
    }
}

/// PV energy per slot, kWh.
pub fn pv_from_ghi(capacity_kw: f64, ghi: &[f64]) -> Vec<f64> {
    ghi.iter()
        .map(|g| quantize_kwh(capacity_kw * (g / GHI_REFERENCE) * 0.5))
        .collect()
}

fn bump(t: usize, centre: f64, width: f64) -> f64 {
    let z = (t as f64 - centre) / width;
    (-0.5 * z * z).exp()
}

pub fn synth_prosumers(cfg: &SynthConfig) -> Vec<SynthProsumer> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    (0..cfg.prosumers)
        .map(|i| SynthProsumer {
            id: format!("synth-{:03}", i + 1),
            capacity_kw: rng.random_range(1.0..3.0),
            base_kwh: rng.random_range(0.10..0.25),
            morning_kwh: rng.random_range(0.15..0.40),
            evening_kwh: rng.random_range(0.30..0.80),
        })
        .collect()
}

/// Generates `prosumers x days` samples ordered by (prosumer, date).
pub fn synth_generate(cfg: &SynthConfig) -> Vec<DailySample> {
    let mut weather_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    weather_rng.set_stream(0);
    let days: Vec<(NaiveDate, WeatherDay)> = (0..cfg.days)
        .map(|d| {
            let date = cfg.start + Days::new(d as u64);
            let clearness = weather_rng.random_range(0.15..1.0);
            let attenuation: Vec<f64> = (0..SLOTS).map(|_| weather_rng.random_range(0.85..1.0)).collect();
            (date, day_weather(&clear_sky_ghi(date), clearness, &attenuation))
        })
        .collect();

    let noise = Normal::new(0.0, 0.02).expect("valid normal");
    let mut load_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    load_rng.set_stream(2);
    let mut out = Vec::with_capacity(cfg.prosumers * cfg.days);
    for p in synth_prosumers(cfg) {
        for (date, weather) in &days {
            let scale = load_rng.random_range(0.85..1.15);
            let consumption: Vec<f64> = (0..SLOTS)
                .map(|t| {
                    let shape = p.base_kwh
                        + p.morning_kwh * bump(t, 15.0, 2.5)
                        + p.evening_kwh * bump(t, 38.0, 3.0);
                    let v = shape * scale + noise.sample(&mut load_rng);
                    quantize_kwh(v.max(0.02))
                })
                .collect();
            let pv = pv_from_ghi(p.capacity_kw, &weather.ghi);
            let net_load = consumption.iter().zip(&pv).map(|(c, g)| c - g).collect();
            out.push(DailySample {
                prosumer_id: p.id.clone(),
                date: *date,
                weather: weather.clone(),
                net_load,
                pv_truth: Some(pv),
                consumption: Some(consumption),
            });
        }
    }
    out
}
