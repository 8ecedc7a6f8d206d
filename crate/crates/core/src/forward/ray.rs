use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{GridGeometry, Point, VelocityGrid};

/// Straight ray from source to receiver, split into per-cell lengths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RayPath {
    pub source: Point,
    pub receiver: Point,
    /// `(cell index, length in meters)` in traversal order.
    pub segments: Vec<(usize, f64)>,
}

impl RayPath {
    pub fn length(&self) -> f64 {
        self.segments.iter().map(|s| s.1).sum()
    }
}

/// Parametric traversal: every crossing of an interior grid line splits the
/// segment; each piece is assigned to the cell containing its midpoint.
pub fn trace_ray(source: Point, receiver: Point, grid: &VelocityGrid) -> Result<RayPath> {
    trace_ray_geometry(source, receiver, grid.geometry())
}

pub(crate) fn trace_ray_geometry(source: Point, receiver: Point, g: &GridGeometry) -> Result<RayPath> {
    for (name, p) in [("source", source), ("receiver", receiver)] {
        if !g.contains(p) {
            return Err(invalid(format!("{name} ({}, {}) outside grid extent", p.x, p.y)));
        }
    }
    let (dx, dy) = (receiver.x - source.x, receiver.y - source.y);
    let len = dx.hypot(dy);
    if len == 0.0 {
        let cell = g.cell_of(source).expect("checked above");
        return Ok(RayPath { source, receiver, segments: vec![(cell, 0.0)] });
    }

    let mut ts = vec![0.0, 1.0];
    crossings(source.x - g.origin.x, dx, g.spacing, g.nx, &mut ts);
    crossings(source.y - g.origin.y, dy, g.spacing, g.ny, &mut ts);
    ts.sort_by(f64::total_cmp);
    ts.dedup();

    let mut segments: Vec<(usize, f64)> = Vec::with_capacity(ts.len());
    for w in ts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let m = 0.5 * (a + b);
        let mid = Point::new(source.x + m * dx, source.y + m * dy);
        let cell = g.cell_of(mid).expect("midpoint of an in-extent segment");
        let piece = (b - a) * len;
        match segments.last_mut() {
            Some((c, l)) if *c == cell => *l += piece,
            _ => segments.push((cell, piece)),
        }
    }
    Ok(RayPath { source, receiver, segments })
}

fn crossings(start: f64, delta: f64, h: f64, n: usize, out: &mut Vec<f64>) {
    if delta == 0.0 {
        return;
    }
    for k in 1..n {
        let t = (k as f64 * h - start) / delta;
        if t > 0.0 && t < 1.0 {
            out.push(t);
        }
    }
}

pub fn travel_time(ray: &RayPath, grid: &VelocityGrid) -> f64 {
    ray.segments.iter().map(|&(c, l)| l / grid.velocity_at(c)).sum()
}

/// Travel time through an explicit slowness vector.
pub fn travel_time_with(ray: &RayPath, slowness: &[f64]) -> f64 {
    ray.segments.iter().map(|&(c, l)| l * slowness[c]).sum()
}
