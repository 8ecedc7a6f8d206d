//! Binary grid and trace dumps.
//!
//! Grids are written as `<stem>.f32` (little-endian float32, row-major, x
//! fastest) next to a `<stem>.json` sidecar describing the layout.

use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::forward::Trace;
use crate::model::GridGeometry;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridManifest {
    pub quantity: String,
    pub dims: [usize; 2],
    pub spacing: f64,
    pub origin: [f64; 2],
    pub dtype: String,
    pub byte_order: String,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl GridManifest {
    pub fn new(quantity: &str, geometry: &GridGeometry) -> Self {
        Self {
            quantity: quantity.to_string(),
            dims: [geometry.nx, geometry.ny],
            spacing: geometry.spacing,
            origin: [geometry.origin.x, geometry.origin.y],
            dtype: "float32".into(),
            byte_order: "little".into(),
            extra: Default::default(),
        }
    }

    pub fn with(mut self, key: &str, value: serde_json::Value) -> Self {
        self.extra.insert(key.to_string(), value);
        self
    }
}

pub fn encode_f32(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

pub fn decode_f32(bytes: &[u8]) -> Result<Vec<f32>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(invalid("float32 payload length is not a multiple of 4"));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Writes `<stem>.f32` and `<stem>.json` into `dir`, returning both paths.
pub fn write_grid(dir: &Path, stem: &str, manifest: &GridManifest, values: &[f64]) -> Result<[PathBuf; 2]> {
    if values.len() != manifest.dims[0] * manifest.dims[1] {
        return Err(invalid(format!(
            "grid {stem}: {} values for dims {:?}",
            values.len(),
            manifest.dims
        )));
    }
    let data = dir.join(format!("{stem}.f32"));
    let side = dir.join(format!("{stem}.json"));
    fs::write(&data, encode_f32(values))?;
    fs::write(&side, serde_json::to_vec_pretty(manifest)?)?;
    Ok([data, side])
}

pub fn read_grid(dir: &Path, stem: &str) -> Result<(GridManifest, Vec<f32>)> {
    let manifest: GridManifest = serde_json::from_slice(&fs::read(dir.join(format!("{stem}.json")))?)?;
    let values = decode_f32(&fs::read(dir.join(format!("{stem}.f32")))?)?;
    if values.len() != manifest.dims[0] * manifest.dims[1] {
        return Err(invalid(format!("grid {stem}: payload does not match manifest dims")));
    }
    Ok((manifest, values))
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceHeader {
    station_id: u32,
    start_time: f64,
    sampling_rate: f64,
    n: usize,
}

/// One JSON header line followed by `n` little-endian float32 samples.
pub fn write_trace<W: Write>(mut w: W, trace: &Trace) -> Result<()> {
    let header = TraceHeader {
        station_id: trace.station_id,
        start_time: trace.start_time,
        sampling_rate: trace.sampling_rate,
        n: trace.samples.len(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    w.write_all(&encode_f32(&trace.samples))?;
    Ok(())
}

pub fn read_trace<R: BufRead>(mut r: R) -> Result<Trace> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: TraceHeader = serde_json::from_str(line.trim_end())?;
    let mut bytes = vec![0u8; header.n * 4];
    r.read_exact(&mut bytes)?;
    let samples = decode_f32(&bytes)?.into_iter().map(f64::from).collect();
    Trace::new(header.station_id, header.start_time, header.sampling_rate, samples)
}
