//! Meteorological seasons.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};

use crate::data::DailySample;
use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Season {
    Summer,
    Autumn,
    Winter,
    Spring,
}

impl Season {
    /// Report order.
    pub const ALL: [Season; 4] = [Season::Summer, Season::Autumn, Season::Winter, Season::Spring];

    pub fn name(self) -> &'static str {
        match self {
            Season::Summer => "Summer",
            Season::Autumn => "Autumn",
            Season::Winter => "Winter",
            Season::Spring => "Spring",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Season {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Hemisphere {
    #[default]
    Southern,
    Northern,
}

impl fmt::Display for Hemisphere {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Hemisphere::Southern => "southern",
            Hemisphere::Northern => "northern",
        })
    }
}

impl FromStr for Hemisphere {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "southern" | "south" => Ok(Hemisphere::Southern),
            "northern" | "north" => Ok(Hemisphere::Northern),
            other => Err(Error::Config(format!("unknown hemisphere {other:?}"))),
        }
    }
}

impl Hemisphere {
    /// Three-month meteorological season containing `date`.
    pub fn season_of(self, date: NaiveDate) -> Season {
        // Northern-hemisphere calendar first, then mirror.
        let north = match date.month() {
            12 | 1 | 2 => Season::Winter,
            3..=5 => Season::Spring,
            6..=8 => Season::Summer,
            _ => Season::Autumn,
        };
        match self {
            Hemisphere::Northern => north,
            Hemisphere::Southern => match north {
                Season::Winter => Season::Summer,
                Season::Spring => Season::Autumn,
                Season::Summer => Season::Winter,
                Season::Autumn => Season::Spring,
            },
        }
    }
}

/// Partitions samples by season, in [`Season::ALL`] order, preserving input order.
pub fn seasonal_split(samples: &[DailySample], hemisphere: Hemisphere) -> [Vec<DailySample>; 4] {
    let mut out: [Vec<DailySample>; 4] = Default::default();
    for s in samples {
        out[hemisphere.season_of(s.date).index()].push(s.clone());
    }
    out
}
