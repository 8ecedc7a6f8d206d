//! Scenario documents: everything a run needs, read from JSON with
//! dotted-path overrides applied before validation.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::ansi::{MapMode, MapParams, NoiseSpec};
use crate::consensus::{ConsensusConfig, StoppingRule};
use crate::error::{Error, Result};
use crate::forward::FdConfig;
use crate::mmi::{Collapse, ImagingMode};
use crate::model::{grid_stations, perimeter_stations, random_events, Point, SeismicEvent, Station, VelocityGrid};
use crate::rng;
use crate::signal::{PickMethod, PickParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Pipeline {
    TomoTt,
    Mmi,
    Ansi,
}

impl Pipeline {
    pub fn as_str(self) -> &'static str {
        match self {
            Pipeline::TomoTt => "TOMO_TT",
            Pipeline::Mmi => "MMI",
            Pipeline::Ansi => "ANSI",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "TOMO_TT" | "TOMO" => Ok(Pipeline::TomoTt),
            "MMI" => Ok(Pipeline::Mmi),
            "ANSI" => Ok(Pipeline::Ansi),
            _ => Err(config_error("pipeline", format!("unknown pipeline `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkerboard {
    pub amplitude_pct: f64,
    pub block_cells: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub extent: [f64; 2],
    pub spacing: f64,
    pub background_velocity: f64,
    /// True medium; the inversion and imaging grids stay uniform.
    pub checkerboard: Option<Checkerboard>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { extent: [2000.0, 2000.0], spacing: 100.0, background_velocity: 2000.0, checkerboard: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "snake_case", deny_unknown_fields)]
pub enum StationSpec {
    /// Evenly around the rectangle `offset + [0, extent]`; `extent`
    /// defaults to the grid extent.
    Perimeter {
        count: usize,
        cluster_size: usize,
        #[serde(default)]
        extent: Option<[f64; 2]>,
        #[serde(default)]
        offset: [f64; 2],
    },
    /// Square lattice inset by `margin` from the grid edges.
    Lattice { per_side: usize, margin: f64, cluster_size: usize },
    Explicit { stations: Vec<Station> },
}

impl Default for StationSpec {
    fn default() -> Self {
        StationSpec::Perimeter { count: 16, cluster_size: 4, extent: None, offset: [0.0, 0.0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventSpec {
    /// Uniform hypocenters at least `margin` from the grid edges, origin
    /// times uniform in `origin_window`.
    Random { count: usize, margin: f64, origin_window: [f64; 2] },
    Explicit { events: Vec<SeismicEvent> },
}

impl Default for EventSpec {
    fn default() -> Self {
        EventSpec::Random { count: 30, margin: 100.0, origin_window: [0.5, 0.5] }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// Peak amplitude over noise standard deviation; absent is noise-free.
    pub snr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSpec {
    pub comm_range: f64,
    pub drop_prob: f64,
    /// Keep a JSON-lines event log and write it with the artifacts.
    pub trace: bool,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self { comm_range: 600.0, drop_prob: 0.0, trace: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TravelTimes {
    /// Synthesize, pick and locate.
    Picked,
    /// Ray-traced times from the true events; no picking or location.
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TomoSpec {
    pub travel_times: TravelTimes,
    pub picker: PickMethod,
    pub pick: PickParams,
    /// Band-pass applied before picking, Hz.
    pub band: Option<[f64; 2]>,
    pub wavelet_freq: f64,
    /// Record length, seconds, starting at time zero.
    pub duration: f64,
    pub search_spacing: f64,
    /// Inversion cell size; the grid spacing when absent.
    pub resolution: Option<f64>,
    /// Fixed ridge weight; otherwise the scale-aware default times
    /// `lambda_scale`.
    pub lambda: Option<f64>,
    pub lambda_scale: f64,
    pub consensus: ConsensusConfig,
    pub stopping: StoppingRule,
}

impl Default for TomoSpec {
    fn default() -> Self {
        Self {
            travel_times: TravelTimes::Picked,
            picker: PickMethod::StaLta,
            pick: PickParams::default(),
            band: None,
            wavelet_freq: 25.0,
            duration: 2.5,
            search_spacing: 25.0,
            resolution: None,
            lambda: None,
            lambda_scale: 1.0,
            consensus: ConsensusConfig::default(),
            stopping: StoppingRule::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ImagingCondition {
    /// Cluster temporal stacks multiplied across clusters.
    Hybrid,
    /// Plain sum over all receivers, collapsed like a single cluster.
    Sum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmiSpec {
    pub wavelet_freq: f64,
    pub duration: f64,
    pub mode: ImagingMode,
    pub collapse: Collapse,
    pub condition: ImagingCondition,
    /// Band-pass applied to the records before back-propagation, Hz.
    pub band: Option<[f64; 2]>,
    pub fd: FdConfig,
    /// Move receiver and cluster images over the network.
    pub in_network: bool,
    pub max_retries: usize,
}

impl Default for MmiSpec {
    fn default() -> Self {
        Self {
            wavelet_freq: 10.0,
            duration: 1.2,
            mode: ImagingMode::Sourceless,
            collapse: Collapse::Energy,
            condition: ImagingCondition::Hybrid,
            band: None,
            fd: FdConfig::default(),
            in_network: true,
            max_retries: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnsiSpec {
    /// Source ring and record length; velocity and sampling rate come from
    /// the grid and the scenario.
    pub noise: NoiseSpec,
    pub n_segments: usize,
    pub max_lag: f64,
    /// Travel-time band, Hz.
    pub band: [f64; 2],
    pub mode: MapMode,
    pub map: MapParams,
    /// Map cell size; the grid spacing when absent.
    pub resolution: Option<f64>,
    /// Virtual sources in processing order; every station when absent.
    pub virtual_sources: Option<Vec<u32>>,
    pub max_retries: usize,
}

impl Default for AnsiSpec {
    fn default() -> Self {
        Self {
            noise: NoiseSpec::default(),
            n_segments: 240,
            max_lag: 1.6,
            band: [4.0, 8.0],
            mode: MapMode::Eikonal,
            map: MapParams::default(),
            resolution: None,
            virtual_sources: None,
            max_retries: 50,
        }
    }
}

/// Service-side pacing; never changes results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSpec {
    /// Push a snapshot every this many rounds.
    pub snapshot_every: u64,
    /// Wall-clock pause after each round, milliseconds.
    pub round_delay_ms: u64,
    pub start_paused: bool,
}

impl Default for ControlSpec {
    fn default() -> Self {
        Self { snapshot_every: 5, round_delay_ms: 0, start_paused: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    #[serde(default = "default_pipeline")]
    pub pipeline: Pipeline,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub stations: StationSpec,
    #[serde(default)]
    pub events: EventSpec,
    #[serde(default = "default_rate")]
    pub sampling_rate: f64,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub network: NetworkSpec,
    #[serde(default)]
    pub tomo: TomoSpec,
    #[serde(default)]
    pub mmi: MmiSpec,
    #[serde(default)]
    pub ansi: AnsiSpec,
    #[serde(default)]
    pub control: ControlSpec,
}

fn default_pipeline() -> Pipeline {
    Pipeline::TomoTt
}

fn default_rate() -> f64 {
    500.0
}

pub const SAMPLING_RATE_RANGE: [f64; 2] = [50.0, 1000.0];

const EVENT_STREAM: u64 = 0x6576;

pub(crate) fn config_error(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config { field: field.into(), message: message.into() }
}

impl Scenario {
    /// Parses and validates a scenario document.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| config_error("<document>", e.to_string()))?;
        Self::from_value(value, &[])
    }

    /// Applies `key=value` overrides (dotted paths; values parsed as JSON,
    /// falling back to a string) and validates.
    pub fn from_value(mut value: Value, overrides: &[(String, String)]) -> Result<Self> {
        for (k, v) in overrides {
            set_path(&mut value, k, parse_override(v))?;
        }
        let s: Scenario = serde_path_to_error::deserialize(&value).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner().to_string();
            let field = missing_field(&inner)
                .map(|m| if path == "." || path.is_empty() { m.to_string() } else { format!("{path}.{m}") })
                .unwrap_or(path);
            config_error(field, inner)
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = SAMPLING_RATE_RANGE;
        if !(self.sampling_rate >= lo && self.sampling_rate <= hi) {
            return Err(config_error("sampling_rate", format!("{} Hz outside [{lo}, {hi}]", self.sampling_rate)));
        }
        self.true_grid().map_err(|e| config_error("grid", e.to_string()))?;
        let stations = self.stations().map_err(|e| config_error("stations", e.to_string()))?;
        if stations.len() < 3 {
            return Err(config_error("stations", "at least 3 stations are needed"));
        }
        let events = self.events().map_err(|e| config_error("events", e.to_string()))?;
        let grid = self.base_grid()?;
        if let Some(s) = stations.iter().find(|s| !grid.contains(s.position)) {
            return Err(config_error("stations", format!("station {} lies outside the grid", s.id)));
        }
        if let Some(e) = events.iter().find(|e| !grid.contains(e.hypocenter)) {
            return Err(config_error("events", format!("event {} lies outside the grid", e.id)));
        }
        if let Some(snr) = self.noise.snr {
            if !(snr > 0.0) {
                return Err(config_error("noise.snr", format!("must be positive, got {snr}")));
            }
        }
        if !(self.network.comm_range > 0.0) {
            return Err(config_error("network.comm_range", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.network.drop_prob) {
            return Err(config_error("network.drop_prob", "must lie in [0, 1]"));
        }
        if self.control.snapshot_every == 0 {
            return Err(config_error("control.snapshot_every", "must be at least 1"));
        }
        match self.pipeline {
            Pipeline::TomoTt => {
                if events.is_empty() {
                    return Err(config_error("events", "tomography needs at least one event"));
                }
                if let Some(l) = self.tomo.lambda {
                    if !(l >= 0.0) {
                        return Err(config_error("tomo.lambda", "must be non-negative"));
                    }
                }
                if !(self.tomo.lambda_scale > 0.0) {
                    return Err(config_error("tomo.lambda_scale", "must be positive"));
                }
                if !(self.tomo.search_spacing > 0.0 && self.tomo.search_spacing <= self.grid.spacing) {
                    return Err(config_error("tomo.search_spacing", "must lie in (0, grid.spacing]"));
                }
                if let Some(r) = self.tomo.resolution {
                    check_resolution(&self.grid, r).map_err(|m| config_error("tomo.resolution", m))?;
                }
                if let Some(b) = self.tomo.band {
                    check_band(b, self.sampling_rate).map_err(|m| config_error("tomo.band", m))?;
                }
                if self.tomo.stopping.max_rounds == 0 {
                    return Err(config_error("tomo.stopping.max_rounds", "must be at least 1"));
                }
            }
            Pipeline::Mmi => {
                if events.is_empty() {
                    return Err(config_error("events", "imaging needs an event"));
                }
                if let Some(b) = self.mmi.band {
                    check_band(b, self.sampling_rate).map_err(|m| config_error("mmi.band", m))?;
                }
                let sizes = cluster_sizes(&stations);
                if sizes.windows(2).any(|w| w[0] != w[1]) {
                    return Err(config_error("stations", "clusters must have equal sizes"));
                }
            }
            Pipeline::Ansi => {
                if self.grid.checkerboard.is_some() {
                    return Err(config_error("grid.checkerboard", "noise synthesis supports a homogeneous medium only"));
                }
                check_band(self.ansi.band, self.sampling_rate).map_err(|m| config_error("ansi.band", m))?;
                if self.ansi.n_segments == 0 {
                    return Err(config_error("ansi.n_segments", "must be at least 1"));
                }
                if let Some(r) = self.ansi.resolution {
                    check_resolution(&self.grid, r).map_err(|m| config_error("ansi.resolution", m))?;
                }
                if let Some(vs) = &self.ansi.virtual_sources {
                    if let Some(v) = vs.iter().find(|v| !stations.iter().any(|s| s.id == **v)) {
                        return Err(config_error("ansi.virtual_sources", format!("unknown station {v}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Uniform background grid.
    pub fn base_grid(&self) -> Result<VelocityGrid> {
        VelocityGrid::uniform(self.grid.extent, self.grid.spacing, self.grid.background_velocity)
            .map_err(|e| config_error("grid", e.to_string()))
    }

    /// Medium the data are synthesized in.
    pub fn true_grid(&self) -> Result<VelocityGrid> {
        let g = self.base_grid()?;
        match &self.grid.checkerboard {
            Some(c) => g
                .with_checkerboard(c.amplitude_pct, c.block_cells)
                .map_err(|e| config_error("grid.checkerboard", e.to_string())),
            None => Ok(g),
        }
    }

    pub fn stations(&self) -> Result<Vec<Station>> {
        match &self.stations {
            StationSpec::Perimeter { count, cluster_size, extent, offset } => {
                let mut st = perimeter_stations(extent.unwrap_or(self.grid.extent), *count, *cluster_size)?;
                for s in &mut st {
                    s.position = Point::new(s.position.x + offset[0], s.position.y + offset[1]);
                }
                Ok(st)
            }
            StationSpec::Lattice { per_side, margin, cluster_size } => {
                grid_stations(self.grid.extent, *per_side, *margin, *cluster_size)
            }
            StationSpec::Explicit { stations } => {
                let mut ids: Vec<u32> = stations.iter().map(|s| s.id).collect();
                ids.sort_unstable();
                if ids.windows(2).any(|w| w[0] == w[1]) {
                    return Err(crate::error::invalid("station ids must be unique"));
                }
                Ok(stations.clone())
            }
        }
    }

    pub fn events(&self) -> Result<Vec<SeismicEvent>> {
        match &self.events {
            EventSpec::Random { count, margin, origin_window } => {
                let mut r = rng::stream(self.seed, &[EVENT_STREAM]);
                random_events(self.grid.extent, *count, *margin, *origin_window, &mut r)
            }
            EventSpec::Explicit { events } => {
                if let Some(e) = events.iter().find(|e| !(e.magnitude_scale > 0.0)) {
                    return Err(crate::error::invalid(format!("event {} needs a positive magnitude scale", e.id)));
                }
                Ok(events.clone())
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// SHA-256 of the compact resolved document, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

pub(crate) fn check_band(b: [f64; 2], fs: f64) -> std::result::Result<(), String> {
    if b[0] > 0.0 && b[0] < b[1] && b[1] < fs / 2.0 {
        Ok(())
    } else {
        Err(format!("band {b:?} must satisfy 0 < low < high < {}", fs / 2.0))
    }
}

pub(crate) fn check_resolution(g: &GridSpec, r: f64) -> std::result::Result<(), String> {
    let whole = |e: f64| {
        let n = e / r;
        n >= 2.0 - 1e-9 && (n - n.round()).abs() < 1e-9
    };
    if r > 0.0 && whole(g.extent[0]) && whole(g.extent[1]) {
        Ok(())
    } else {
        Err(format!("spacing {r} must split the {:?} m extent into at least 2 whole cells per axis", g.extent))
    }
}

/// Member counts per cluster id, ascending by id.
pub(crate) fn cluster_sizes(stations: &[Station]) -> Vec<usize> {
    let mut m = std::collections::BTreeMap::new();
    for s in stations {
        *m.entry(s.cluster_id).or_insert(0usize) += 1;
    }
    m.into_values().collect()
}

fn missing_field(msg: &str) -> Option<&str> {
    let rest = msg.strip_prefix("missing field `")?;
    rest.split('`').next()
}

fn parse_override(v: &str) -> Value {
    serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()))
}

/// Sets `a.b.c` inside `root`, creating objects on the way.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_error(path, "empty path component"));
    }
    let mut at = root;
    for (i, p) in parts.iter().enumerate() {
        if at.is_null() {
            *at = Value::Object(Default::default());
        }
        let Value::Object(map) = at else {
            return Err(config_error(parts[..i].join("."), "not an object"));
        };
        if i + 1 == parts.len() {
            map.insert(p.to_string(), value);
            return Ok(());
        }
        at = map.entry(p.to_string()).or_insert(Value::Null);
    }
    unreachable!("path has at least one component")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field_of(e: Error) -> String {
        match e {
            Error::Config { field, .. } => field,
            other => panic!("not a config error: {other}"),
        }
    }

    #[test]
    fn minimal_document_takes_desk_defaults() {
        let s = Scenario::from_json(r#"{"seed": 3}"#).unwrap();
        assert_eq!(s.pipeline, Pipeline::TomoTt);
        assert_eq!(s.base_grid().unwrap().geometry().nx, 20);
        assert_eq!(s.stations().unwrap().len(), 16);
        assert_eq!(s.events().unwrap().len(), 30);
        assert_eq!(s.events().unwrap(), s.events().unwrap());
    }

    #[test]
    fn missing_seed_names_the_field() {
        assert_eq!(field_of(Scenario::from_json(r#"{"pipeline": "MMI"}"#).unwrap_err()), "seed");
    }

    #[test]
    fn nested_errors_name_the_path() {
        let e = Scenario::from_json(r#"{"seed": 1, "tomo": {"lambda_scale": "big"}}"#).unwrap_err();
        assert_eq!(field_of(e), "tomo.lambda_scale");
        let e = Scenario::from_json(r#"{"seed": 1, "grid": {"spacing": 0}}"#).unwrap_err();
        assert_eq!(field_of(e), "grid");
        let e = Scenario::from_json(r#"{"seed": 1, "sampling_rate": 20}"#).unwrap_err();
        assert_eq!(field_of(e), "sampling_rate");
        let e = Scenario::from_json(r#"{"seed": 1, "bogus": 2}"#).unwrap_err();
        assert!(matches!(e, Error::Config { .. }));
    }

    #[test]
    fn overrides_win_and_create_objects() {
        let v: Value = serde_json::from_str(r#"{"seed": 1, "tomo": {"lambda_scale": 2}}"#).unwrap();
        let o = vec![
            ("tomo.lambda_scale".to_string(), "5".to_string()),
            ("tomo.consensus.algorithm".to_string(), "DGD_SYNC".to_string()),
            ("seed".to_string(), "9".to_string()),
        ];
        let s = Scenario::from_value(v, &o).unwrap();
        assert_eq!(s.tomo.lambda_scale, 5.0);
        assert_eq!(s.seed, 9);
        assert_eq!(s.tomo.consensus.algorithm, crate::consensus::Algorithm::DgdSync);
    }

    #[test]
    fn resolved_document_round_trips_and_hash_is_stable() {
        let s = Scenario::from_json(r#"{"seed": 5, "pipeline": "ANSI", "stations": {"layout": "lattice", "per_side": 4, "margin": 100, "cluster_size": 4}}"#)
            .unwrap();
        let back = Scenario::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.hash(), s.hash());
        assert_eq!(s.hash().len(), 64);
        let other = Scenario { seed: 6, ..s.clone() };
        assert_ne!(other.hash(), s.hash());
    }

    #[test]
    fn stations_outside_grid_rejected() {
        let e = Scenario::from_json(
            r#"{"seed": 1, "stations": {"layout": "perimeter", "count": 8, "cluster_size": 4, "offset": [500, 0]}}"#,
        )
        .unwrap_err();
        assert_eq!(field_of(e), "stations");
    }

    #[test]
    fn resolution_must_tile_extent() {
        assert!(check_resolution(&GridSpec::default(), 200.0).is_ok());
        assert!(check_resolution(&GridSpec::default(), 300.0).is_err());
        assert!(check_resolution(&GridSpec::default(), 2000.0).is_err());
    }
}
