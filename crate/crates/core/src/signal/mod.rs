//! Per-station processing: conditioning, filtering, event windowing,
//! arrival picking and cross-correlation.

mod condition;
mod correlate;
mod filter;
mod pick;
pub mod spectral;
mod wiener;
mod window;

pub use condition::{condition, condition_resampled, resample};
pub use correlate::{cross_correlate, cross_correlate_normalized, fold};
pub use filter::{bandpass, butterworth, butterworth_gain2, filtfilt, Biquad, Kind as FilterKind};
pub use pick::{pick_arrival, PickParams};
pub use wiener::wiener;
pub use window::detect_event_window;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PickMethod {
    StaLta,
    Mer,
    Aic,
}

impl PickMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            PickMethod::StaLta => "STA_LTA",
            PickMethod::Mer => "MER",
            PickMethod::Aic => "AIC",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pick {
    pub station_id: u32,
    pub arrival_time: f64,
    pub method: PickMethod,
    /// Peak of the characteristic function; never negative.
    pub quality: f64,
}

/// Correlation between two stations on a lag axis symmetric about zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationFunction {
    pub station_a: u32,
    pub station_b: u32,
    pub sampling_rate: f64,
    pub lags: Vec<f64>,
    pub values: Vec<f64>,
}

impl CorrelationFunction {
    /// Index of lag zero.
    pub fn zero_index(&self) -> usize {
        self.values.len() / 2
    }
}

/// Picks as CSV with header `station_id,time_s,method,quality`.
pub fn picks_csv(picks: &[Pick]) -> String {
    let mut s = String::from("station_id,time_s,method,quality\n");
    for p in picks {
        let _ = writeln!(s, "{},{},{},{}", p.station_id, p.arrival_time, p.method.as_str(), p.quality);
    }
    s
}

pub fn write_picks_csv(path: &Path, picks: &[Pick]) -> Result<()> {
    std::fs::write(path, picks_csv(picks))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_header_and_rows() {
        let picks = [
            Pick { station_id: 3, arrival_time: 1.25, method: PickMethod::StaLta, quality: 7.5 },
            Pick { station_id: 4, arrival_time: 0.5, method: PickMethod::Aic, quality: 0.0 },
        ];
        let csv = picks_csv(&picks);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines, ["station_id,time_s,method,quality", "3,1.25,STA_LTA,7.5", "4,0.5,AIC,0"]);
    }

    #[test]
    fn method_serializes_upper_snake() {
        assert_eq!(serde_json::to_string(&PickMethod::StaLta).unwrap(), "\"STA_LTA\"");
        assert_eq!(serde_json::from_str::<PickMethod>("\"MER\"").unwrap(), PickMethod::Mer);
    }
}
