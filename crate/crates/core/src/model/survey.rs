use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grid::Point;
use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub id: u32,
    pub position: Point,
    #[serde(default)]
    pub cluster_id: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeismicEvent {
    pub id: u32,
    pub hypocenter: Point,
    pub origin_time: f64,
    #[serde(default = "unit")]
    pub magnitude_scale: f64,
}

fn unit() -> f64 {
    1.0
}

/// `count` stations evenly spaced around the rectangle `[0, ex] x [0, ey]`,
/// counter-clockwise from the origin corner. Consecutive runs of
/// `cluster_size` stations share a cluster id.
pub fn perimeter_stations(extent: [f64; 2], count: usize, cluster_size: usize) -> Result<Vec<Station>> {
    if count < 4 || !count.is_multiple_of(4) {
        return Err(invalid(format!("perimeter layout needs a multiple of 4 stations, got {count}")));
    }
    if cluster_size == 0 || !count.is_multiple_of(cluster_size) {
        return Err(invalid(format!("cluster size {cluster_size} does not divide {count} stations")));
    }
    let per_side = count / 4;
    let [ex, ey] = extent;
    let mut positions = Vec::with_capacity(count);
    for i in 0..per_side {
        let f = i as f64 / per_side as f64;
        positions.push(Point::new(f * ex, 0.0));
    }
    for i in 0..per_side {
        let f = i as f64 / per_side as f64;
        positions.push(Point::new(ex, f * ey));
    }
    for i in 0..per_side {
        let f = i as f64 / per_side as f64;
        positions.push(Point::new(ex - f * ex, ey));
    }
    for i in 0..per_side {
        let f = i as f64 / per_side as f64;
        positions.push(Point::new(0.0, ey - f * ey));
    }
    Ok(positions
        .into_iter()
        .enumerate()
        .map(|(i, position)| Station {
            id: i as u32,
            position,
            cluster_id: (i / cluster_size) as u32,
        })
        .collect())
}

/// Regular `per_side x per_side` array inset by `margin` from each edge.
/// Clusters are square-ish row bands of `cluster_size` stations.
pub fn grid_stations(extent: [f64; 2], per_side: usize, margin: f64, cluster_size: usize) -> Result<Vec<Station>> {
    if per_side < 2 {
        return Err(invalid("grid layout needs at least 2 stations per side"));
    }
    let n = per_side * per_side;
    if cluster_size == 0 || !n.is_multiple_of(cluster_size) {
        return Err(invalid(format!("cluster size {cluster_size} does not divide {n} stations")));
    }
    if !(0.0..extent[0].min(extent[1]) / 2.0).contains(&margin) {
        return Err(invalid(format!("margin {margin} leaves no room for stations")));
    }
    let at = |e: f64, i: usize| margin + (e - 2.0 * margin) * i as f64 / (per_side - 1) as f64;
    let mut out = Vec::with_capacity(n);
    for iy in 0..per_side {
        for ix in 0..per_side {
            let id = out.len();
            out.push(Station {
                id: id as u32,
                position: Point::new(at(extent[0], ix), at(extent[1], iy)),
                cluster_id: (id / cluster_size) as u32,
            });
        }
    }
    Ok(out)
}

/// Uniformly scattered events at least `margin` from the extent edges.
pub fn random_events<R: Rng>(
    extent: [f64; 2],
    count: usize,
    margin: f64,
    origin_window: [f64; 2],
    rng: &mut R,
) -> Result<Vec<SeismicEvent>> {
    if 2.0 * margin >= extent[0].min(extent[1]) {
        return Err(invalid(format!("event margin {margin} leaves no interior")));
    }
    if origin_window[1] < origin_window[0] {
        return Err(invalid("origin time window is reversed"));
    }
    Ok((0..count)
        .map(|i| {
            let x = rng.random_range(margin..extent[0] - margin);
            let y = rng.random_range(margin..extent[1] - margin);
            let t0 = if origin_window[1] > origin_window[0] {
                rng.random_range(origin_window[0]..origin_window[1])
            } else {
                origin_window[0]
            };
            SeismicEvent {
                id: i as u32,
                hypocenter: Point::new(x, y),
                origin_time: t0,
                magnitude_scale: 1.0,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perimeter_layout() {
        let st = perimeter_stations([2000.0, 2000.0], 16, 4).unwrap();
        assert_eq!(st.len(), 16);
        assert_eq!(st[0].position, Point::new(0.0, 0.0));
        assert_eq!(st[4].position, Point::new(2000.0, 0.0));
        assert_eq!(st[8].position, Point::new(2000.0, 2000.0));
        assert_eq!(st[15].cluster_id, 3);
        let mut ids: Vec<_> = st.iter().map(|s| s.id).collect();
        ids.dedup();
        assert_eq!(ids.len(), 16);
        assert!(perimeter_stations([2000.0, 2000.0], 10, 2).is_err());
        assert!(perimeter_stations([2000.0, 2000.0], 16, 5).is_err());
    }

    #[test]
    fn grid_layout() {
        let st = grid_stations([2000.0, 2000.0], 8, 100.0, 8).unwrap();
        assert_eq!(st.len(), 64);
        assert_eq!(st[63].position, Point::new(1900.0, 1900.0));
        assert_eq!(st[63].cluster_id, 7);
    }
}
