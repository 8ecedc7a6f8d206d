//! Subsurface grids, stations, events and scenario files.

mod grid;
mod survey;

pub use grid::{GridGeometry, Point, VelocityGrid};
pub use survey::{grid_stations, perimeter_stations, random_events, SeismicEvent, Station};
