//! Per-channel Z-score normalization of model inputs.

use crate::data::{DailySample, WeatherDay};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Channel {
    NetLoad,
    Dni,
    Dhi,
    Ghi,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::NetLoad, Channel::Dni, Channel::Dhi, Channel::Ghi];

    pub fn name(self) -> &'static str {
        match self {
            Channel::NetLoad => "net_load",
            Channel::Dni => "dni",
            Channel::Dhi => "dhi",
            Channel::Ghi => "ghi",
        }
    }

    fn series(self, s: &DailySample) -> &[f64] {
        match self {
            Channel::NetLoad => &s.net_load,
            Channel::Dni => &s.weather.dni,
            Channel::Dhi => &s.weather.dhi,
            Channel::Ghi => &s.weather.ghi,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
}

impl ChannelStats {
    /// Population mean and standard deviation.
    pub fn fit<'a>(values: impl Iterator<Item = &'a f64> + Clone) -> Option<Self> {
        let (n, total) = values.clone().fold((0usize, 0.0), |(n, t), &v| (n + 1, t + v));
        if n == 0 {
            return None;
        }
        let mean = total / n as f64;
        let var = values.map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        Some(Self { mean, std: var.sqrt() })
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Mean and standard deviation of each input channel, fit on training data.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormStats {
    pub net_load: ChannelStats,
    pub dni: ChannelStats,
    pub dhi: ChannelStats,
    pub ghi: ChannelStats,
}

impl NormStats {
    /// Fits every channel over all slots of `train`.
    pub fn fit(train: &[DailySample]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyDataset("cannot fit normalization on zero samples".into()));
        }
        let fit = |ch: Channel| -> Result<ChannelStats> {
            let stats = ChannelStats::fit(train.iter().flat_map(|s| ch.series(s).iter()))
                .ok_or(Error::EmptyDataset("no values".into()))?;
            if !(stats.std > 0.0) || !stats.std.is_finite() {
                return Err(Error::DegenerateChannel { channel: ch.name() });
            }
            Ok(stats)
        };
        Ok(Self {
            net_load: fit(Channel::NetLoad)?,
            dni: fit(Channel::Dni)?,
            dhi: fit(Channel::Dhi)?,
            ghi: fit(Channel::Ghi)?,
        })
    }

    pub fn get(&self, ch: Channel) -> ChannelStats {
        match ch {
            Channel::NetLoad => self.net_load,
            Channel::Dni => self.dni,
            Channel::Dhi => self.dhi,
            Channel::Ghi => self.ghi,
        }
    }

    pub fn apply_series(&self, ch: Channel, xs: &[f64]) -> Vec<f64> {
        let st = self.get(ch);
        xs.iter().map(|&x| st.apply(x)).collect()
    }

    pub fn invert_series(&self, ch: Channel, zs: &[f64]) -> Vec<f64> {
        let st = self.get(ch);
        zs.iter().map(|&z| st.invert(z)).collect()
    }

    pub fn apply_weather(&self, w: &WeatherDay) -> WeatherDay {
        WeatherDay {
            dni: self.apply_series(Channel::Dni, &w.dni),
            dhi: self.apply_series(Channel::Dhi, &w.dhi),
            ghi: self.apply_series(Channel::Ghi, &w.ghi),
        }
    }

    /// Normalizes the input channels; PV truth stays in kWh.
    pub fn apply(&self, s: &DailySample) -> DailySample {
        DailySample {
            net_load: self.apply_series(Channel::NetLoad, &s.net_load),
            weather: self.apply_weather(&s.weather),
            ..s.clone()
        }
    }

    pub fn invert(&self, s: &DailySample) -> DailySample {
        DailySample {
            net_load: self.invert_series(Channel::NetLoad, &s.net_load),
            weather: WeatherDay {
                dni: self.invert_series(Channel::Dni, &s.weather.dni),
                dhi: self.invert_series(Channel::Dhi, &s.weather.dhi),
                ghi: self.invert_series(Channel::Ghi, &s.weather.ghi),
            },
            ..s.clone()
        }
    }

    /// Model feature vector: net load, DNI, DHI, GHI (normalized), concatenated.
    pub fn features(&self, s: &DailySample) -> Vec<f64> {
        let mut out = self.apply_series(Channel::NetLoad, &s.net_load);
        out.extend(self.apply_series(Channel::Dni, &s.weather.dni));
        out.extend(self.apply_series(Channel::Dhi, &s.weather.dhi));
        out.extend(self.apply_series(Channel::Ghi, &s.weather.ghi));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_generate, SynthConfig};

    #[test]
    fn hand_example() {
        let st = ChannelStats { mean: 5.0, std: 2.0 };
        assert_eq!(st.apply(7.0), 1.0);
        assert_eq!(st.invert(1.0), 7.0);
    }

    #[test]
    fn constant_channel_rejected() {
        let vals = [0.0, 0.0, 0.0];
        let st = ChannelStats::fit(vals.iter()).unwrap();
        assert_eq!(st.std, 0.0);

        let mut data = synth_generate(&SynthConfig::new(2, 3, 1));
        for s in &mut data {
            s.weather.dhi = vec![0.0; s.weather.dhi.len()];
        }
        match NormStats::fit(&data) {
            Err(Error::DegenerateChannel { channel }) => assert_eq!(channel, "dhi"),
            other => panic!("expected degenerate channel error, got {other:?}"),
        }
    }

    #[test]
    fn training_set_is_standardized_and_invertible() {
        let data = synth_generate(&SynthConfig::new(3, 20, 4));
        let stats = NormStats::fit(&data).unwrap();
        let normed: Vec<DailySample> = data.iter().map(|s| stats.apply(s)).collect();
        for ch in Channel::ALL {
            let st = ChannelStats::fit(normed.iter().flat_map(|s| ch.series(s).iter())).unwrap();
            assert!(st.mean.abs() < 1e-9, "{} mean {}", ch.name(), st.mean);
            assert!((st.std - 1.0).abs() < 1e-9, "{} std {}", ch.name(), st.std);
        }
        for (orig, n) in data.iter().zip(&normed) {
            let back = stats.invert(n);
            for ch in Channel::ALL {
                for (a, b) in ch.series(orig).iter().zip(ch.series(&back)) {
                    assert!((a - b).abs() <= 1e-12);
                }
            }
        }
    }
}
