//! Ingestion, assembly, normalization and splitting of prosumer-day samples.

pub mod assemble;
pub mod dataset_file;
pub mod meter;
pub mod norm;
pub mod season;
pub mod synth;
pub mod weather;

use chrono::NaiveDate;

use crate::error::{Error, Result};

pub use crate::attention::WeatherDay;
pub use assemble::{assemble_days, percentile_filter, AssembleSummary, ProsumerSplit};
pub use norm::{ChannelStats, NormStats};
pub use season::{seasonal_split, Hemisphere, Season};

/// Half-hour slots per day.
pub const SLOTS: usize = 48;

/// Grid on which energy series are stored: 2^-32 kWh.
///
/// Sums and differences of grid values below 2^20 kWh are exact in `f64`,
/// which keeps `net = consumption - pv` closed under round trips.
pub const KWH_QUANTUM: f64 = 1.0 / 4_294_967_296.0;

/// Rounds an energy value to the nearest multiple of [`KWH_QUANTUM`].
pub fn quantize_kwh(x: f64) -> f64 {
    (x * 4_294_967_296.0).round() * KWH_QUANTUM
}

/// One prosumer-day.
#[derive(Clone, Debug, PartialEq)]
pub struct DailySample {
    pub prosumer_id: String,
    pub date: NaiveDate,
    pub weather: WeatherDay,
    /// kWh per slot; negative while exporting.
    pub net_load: Vec<f64>,
    /// Metered PV generation in kWh per slot, present only for Type-1 prosumers.
    pub pv_truth: Option<Vec<f64>>,
    /// Gross consumption in kWh per slot when known (synthetic data, ingested GC+CL).
    pub consumption: Option<Vec<f64>>,
}

impl DailySample {
    pub fn validate(&self) -> Result<()> {
        let ctx = |msg: String| Error::Validation(format!("{} {}: {msg}", self.prosumer_id, self.date));
        self.weather.validate(SLOTS).map_err(|e| ctx(e.to_string()))?;
        if self.net_load.len() != SLOTS {
            return Err(ctx(format!("net_load has {} slots, expected {SLOTS}", self.net_load.len())));
        }
        if self.net_load.iter().any(|v| !v.is_finite()) {
            return Err(ctx("net_load contains a non-finite value".into()));
        }
        if let Some(pv) = &self.pv_truth {
            if pv.len() != SLOTS {
                return Err(ctx(format!("pv_truth has {} slots, expected {SLOTS}", pv.len())));
            }
            if let Some(v) = pv.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(ctx(format!("pv_truth value {v} is not a non-negative number")));
            }
        }
        if let Some(c) = &self.consumption {
            if c.len() != SLOTS {
                return Err(ctx(format!("consumption has {} slots, expected {SLOTS}", c.len())));
            }
        }
        Ok(())
    }

    /// Type-1 prosumer-days carry metered PV.
    pub fn has_truth(&self) -> bool {
        self.pv_truth.is_some()
    }

    /// Copy with PV truth and consumption removed, as a Type-2 meter would report it.
    pub fn without_truth(&self) -> Self {
        Self {
            pv_truth: None,
            consumption: None,
            ..self.clone()
        }
    }
}

/// Splits samples into (earlier, later) by date: the last `fraction` of distinct
/// dates go to the second part.
pub fn split_by_date(samples: &[DailySample], fraction: f64) -> (Vec<DailySample>, Vec<DailySample>) {
    let mut dates: Vec<NaiveDate> = samples.iter().map(|s| s.date).collect();
    dates.sort();
    dates.dedup();
    let held = ((dates.len() as f64) * fraction).round() as usize;
    let held = held.min(dates.len());
    let Some(&cutoff) = dates.get(dates.len() - held) else {
        return (samples.to_vec(), Vec::new());
    };
    samples.iter().cloned().partition(|s| s.date < cutoff)
}
