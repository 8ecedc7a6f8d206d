use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::forward::{trace_ray, travel_time};
use crate::model::{Point, Station, VelocityGrid};
use crate::signal::Pick;

/// Grid-search hypocenter locator with a precomputed travel-time table.
#[derive(Clone, Debug)]
pub struct Locator {
    candidates: Vec<Point>,
    station_index: HashMap<u32, usize>,
    /// `times[c * n_stations + s]`
    times: Vec<f64>,
}

impl Locator {
    /// Candidates sit at the centers of a `search_spacing` lattice covering
    /// the grid, ordered row by row.
    pub fn new(stations: &[Station], grid: &VelocityGrid, search_spacing: f64) -> Result<Self> {
        let g = grid.geometry();
        if !(search_spacing > 0.0 && search_spacing <= g.spacing + 1e-12) {
            return Err(invalid(format!(
                "search spacing {search_spacing} must be positive and at most the grid spacing {}",
                g.spacing
            )));
        }
        let [ex, ey] = g.extent();
        let nx = (ex / search_spacing).round() as usize;
        let ny = (ey / search_spacing).round() as usize;
        let candidates: Vec<Point> = (0..ny)
            .flat_map(|iy| {
                (0..nx).map(move |ix| {
                    Point::new(
                        g.origin.x + (ix as f64 + 0.5) * search_spacing,
                        g.origin.y + (iy as f64 + 0.5) * search_spacing,
                    )
                })
            })
            .filter(|p| g.contains(*p))
            .collect();
        let ns = stations.len();
        let times = candidates
            .par_iter()
            .map(|&c| {
                stations
                    .iter()
                    .map(|s| Ok(travel_time(&trace_ray(c, s.position, grid)?, grid)))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?
            .concat();
        let station_index = stations.iter().enumerate().map(|(i, s)| (s.id, i)).collect();
        debug_assert_eq!(times.len(), candidates.len() * ns);
        Ok(Self { candidates, station_index, times })
    }

    pub fn candidates(&self) -> &[Point] {
        &self.candidates
    }

    /// Misfit and origin time of candidate `c`.
    fn evaluate(&self, c: usize, picks: &[(usize, f64)]) -> (f64, f64) {
        let ns = self.station_index.len();
        let row = &self.times[c * ns..(c + 1) * ns];
        let t0 = picks.iter().map(|&(s, t)| t - row[s]).sum::<f64>() / picks.len() as f64;
        let misfit = picks.iter().map(|&(s, t)| (t - t0 - row[s]).powi(2)).sum();
        (misfit, t0)
    }

    /// Returns `(hypocenter, origin_time)` minimizing the squared residual
    /// after removing the best origin time; the first candidate wins ties.
    pub fn locate(&self, picks: &[Pick]) -> Result<(Point, f64)> {
        if picks.len() < 3 {
            return Err(Error::InsufficientData(format!("location needs at least 3 picks, got {}", picks.len())));
        }
        let obs: Vec<(usize, f64)> = picks
            .iter()
            .map(|p| {
                self.station_index
                    .get(&p.station_id)
                    .map(|&s| (s, p.arrival_time))
                    .ok_or_else(|| Error::NotFound(format!("station {}", p.station_id)))
            })
            .collect::<Result<_>>()?;
        let mut best = (0, f64::INFINITY, 0.0);
        for c in 0..self.candidates.len() {
            let (m, t0) = self.evaluate(c, &obs);
            if m < best.1 {
                best = (c, m, t0);
            }
        }
        Ok((self.candidates[best.0], best.2))
    }
}

/// One-shot location; build a [`Locator`] to reuse the table across events.
pub fn locate_event(
    picks: &[Pick],
    stations: &[Station],
    grid: &VelocityGrid,
    search_spacing: f64,
) -> Result<(Point, f64)> {
    if picks.len() < 3 {
        return Err(Error::InsufficientData(format!("location needs at least 3 picks, got {}", picks.len())));
    }
    Locator::new(stations, grid, search_spacing)?.locate(picks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::perimeter_stations;
    use crate::signal::PickMethod;

    fn setup() -> (Vec<Station>, VelocityGrid) {
        (perimeter_stations([1000.0, 1000.0], 16, 4).unwrap(), VelocityGrid::uniform([1000.0, 1000.0], 50.0, 2000.0).unwrap())
    }

    fn picks_for(src: Point, t0: f64, stations: &[Station], v: f64) -> Vec<Pick> {
        stations
            .iter()
            .map(|s| Pick { station_id: s.id, arrival_time: t0 + src.distance(s.position) / v, method: PickMethod::StaLta, quality: 1.0 })
            .collect()
    }

    #[test]
    fn on_lattice_hypocenter_recovered_exactly() {
        let (st, g) = setup();
        let src = Point::new(312.5, 587.5);
        let (p, t0) = locate_event(&picks_for(src, 0.3, &st, 2000.0), &st, &g, 25.0).unwrap();
        assert_eq!(p, src);
        assert!((t0 - 0.3).abs() < 1e-9);
    }

    #[test]
    fn off_lattice_within_spacing() {
        let (st, g) = setup();
        let src = Point::new(401.0, 233.0);
        let (p, t0) = locate_event(&picks_for(src, 0.0, &st, 2000.0), &st, &g, 25.0).unwrap();
        assert!(p.distance(src) <= 25.0);
        assert!(t0.abs() <= 1.0 / 500.0);
    }

    #[test]
    fn uniform_shift_moves_only_origin_time() {
        let (st, g) = setup();
        let src = Point::new(640.0, 410.0);
        let loc = Locator::new(&st, &g, 25.0).unwrap();
        let a = loc.locate(&picks_for(src, 0.0, &st, 2000.0)).unwrap();
        let b = loc.locate(&picks_for(src, 0.1, &st, 2000.0)).unwrap();
        assert_eq!(a.0, b.0);
        assert!((b.1 - a.1 - 0.1).abs() < 1e-9);
    }

    #[test]
    fn agrees_with_brute_force_over_candidates() {
        let (st, g) = setup();
        let loc = Locator::new(&st, &g, 50.0).unwrap();
        let mut picks = picks_for(Point::new(123.0, 877.0), 0.05, &st, 2000.0);
        for (i, p) in picks.iter_mut().enumerate() {
            p.arrival_time += 0.001 * ((i * 7919) % 13) as f64 / 13.0;
        }
        let (p, _) = loc.locate(&picks).unwrap();
        // independent evaluation with analytic straight-line times
        let mut best = (f64::INFINITY, Point::new(0.0, 0.0));
        for &c in loc.candidates() {
            let r: Vec<f64> = picks.iter().zip(&st).map(|(pk, s)| pk.arrival_time - c.distance(s.position) / 2000.0).collect();
            let m = r.iter().sum::<f64>() / r.len() as f64;
            let mis: f64 = r.iter().map(|v| (v - m).powi(2)).sum();
            if mis < best.0 - 1e-15 {
                best = (mis, c);
            }
        }
        assert_eq!(p, best.1);
    }

    #[test]
    fn too_few_picks() {
        let (st, g) = setup();
        let picks = picks_for(Point::new(500.0, 500.0), 0.0, &st[..2], 2000.0);
        assert!(matches!(locate_event(&picks, &st, &g, 25.0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn coarse_search_rejected() {
        let (st, g) = setup();
        assert!(Locator::new(&st, &g, 100.0).is_err());
    }
}
