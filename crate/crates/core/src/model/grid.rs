use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// A position in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Cell layout shared by velocity grids, slowness models and images.
///
/// Cells are indexed row-major with x varying fastest: `idx = iy * nx + ix`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub origin: Point,
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridGeometry {
    pub fn new(origin: Point, spacing: f64, nx: usize, ny: usize) -> Result<Self> {
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(invalid(format!("spacing must be positive, got {spacing}")));
        }
        if nx < 2 || ny < 2 {
            return Err(invalid(format!("grid needs at least 2 cells per axis, got {nx}x{ny}")));
        }
        Ok(Self { origin, spacing, nx, ny })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn extent(&self) -> [f64; 2] {
        [self.nx as f64 * self.spacing, self.ny as f64 * self.spacing]
    }

    pub fn contains(&self, p: Point) -> bool {
        let [ex, ey] = self.extent();
        let (dx, dy) = (p.x - self.origin.x, p.y - self.origin.y);
        (0.0..=ex).contains(&dx) && (0.0..=ey).contains(&dy)
    }

    /// Index of the cell containing `p`.
    ///
    /// A point on a shared boundary belongs to the cell with the larger index;
    /// points on the far edge of the extent fall into the last cell.
    pub fn cell_of(&self, p: Point) -> Option<usize> {
        if !self.contains(p) {
            return None;
        }
        let ix = self.axis_index((p.x - self.origin.x) / self.spacing, self.nx);
        let iy = self.axis_index((p.y - self.origin.y) / self.spacing, self.ny);
        Some(iy * self.nx + ix)
    }

    fn axis_index(&self, u: f64, n: usize) -> usize {
        (u.floor().max(0.0) as usize).min(n - 1)
    }

    pub fn cell_center(&self, idx: usize) -> Point {
        let (ix, iy) = (idx % self.nx, idx / self.nx);
        Point::new(
            self.origin.x + (ix as f64 + 0.5) * self.spacing,
            self.origin.y + (iy as f64 + 0.5) * self.spacing,
        )
    }

    pub fn cell_coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }
}

/// Discretized subsurface with constant velocity per cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityGrid {
    geometry: GridGeometry,
    background: f64,
    velocity: Vec<f64>,
}

impl VelocityGrid {
    /// Uniform grid covering `extent` meters from the origin.
    pub fn uniform(extent: [f64; 2], spacing: f64, background_velocity: f64) -> Result<Self> {
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(invalid(format!("spacing must be positive, got {spacing}")));
        }
        check_velocity(background_velocity)?;
        let mut dims = [0usize; 2];
        for (d, e) in dims.iter_mut().zip(extent) {
            let cells = e / spacing;
            if !(cells.is_finite() && cells > 0.0) || (cells - cells.round()).abs() > 1e-9 * cells {
                return Err(invalid(format!(
                    "extent {e} m is not a whole number of {spacing} m cells"
                )));
            }
            *d = cells.round() as usize;
        }
        let geometry = GridGeometry::new(Point::new(0.0, 0.0), spacing, dims[0], dims[1])?;
        Ok(Self {
            velocity: vec![background_velocity; geometry.len()],
            geometry,
            background: background_velocity,
        })
    }

    pub fn from_velocities(geometry: GridGeometry, background: f64, velocity: Vec<f64>) -> Result<Self> {
        check_velocity(background)?;
        if velocity.len() != geometry.len() {
            return Err(invalid(format!(
                "expected {} velocities, got {}",
                geometry.len(),
                velocity.len()
            )));
        }
        for &v in &velocity {
            check_velocity(v)?;
        }
        Ok(Self { geometry, background, velocity })
    }

    /// Overwrite every cell with `background * (1 ± amplitude_pct/100)` in
    /// alternating square tiles. The tile holding cell (0, 0) gets the plus
    /// sign; a negative amplitude flips the pattern.
    pub fn with_checkerboard(&self, amplitude_pct: f64, block_cells: usize) -> Result<Self> {
        if !(amplitude_pct.abs() > 0.0 && amplitude_pct.abs() < 100.0) {
            return Err(invalid(format!(
                "checkerboard amplitude must be within (0, 100) percent, got {amplitude_pct}"
            )));
        }
        let g = self.geometry;
        if block_cells == 0 || block_cells > g.nx.min(g.ny) {
            return Err(invalid(format!(
                "block size {block_cells} outside 1..={}",
                g.nx.min(g.ny)
            )));
        }
        let hi = self.background * (1.0 + amplitude_pct / 100.0);
        let lo = self.background * (1.0 - amplitude_pct / 100.0);
        let velocity = (0..g.len())
            .map(|idx| {
                let (ix, iy) = g.cell_coords(idx);
                if (ix / block_cells + iy / block_cells).is_multiple_of(2) {
                    hi
                } else {
                    lo
                }
            })
            .collect();
        Ok(Self { geometry: g, background: self.background, velocity })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn background(&self) -> f64 {
        self.background
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    pub fn velocity_at(&self, idx: usize) -> f64 {
        self.velocity[idx]
    }

    pub fn slowness(&self) -> Vec<f64> {
        self.velocity.iter().map(|v| 1.0 / v).collect()
    }

    pub fn max_velocity(&self) -> f64 {
        self.velocity.iter().copied().fold(0.0, f64::max)
    }

    pub fn len(&self) -> usize {
        self.velocity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.velocity.is_empty()
    }

    pub fn contains(&self, p: Point) -> bool {
        self.geometry.contains(p)
    }

    pub fn cell_of(&self, p: Point) -> Option<usize> {
        self.geometry.cell_of(p)
    }
}

fn check_velocity(v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("velocity must be positive and finite, got {v}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_grid_dims() {
        let g = VelocityGrid::uniform([2000.0, 2000.0], 100.0, 2000.0).unwrap();
        assert_eq!((g.geometry().nx, g.geometry().ny), (20, 20));
        assert!(g.velocity().iter().all(|&v| v == 2000.0));

        let g = VelocityGrid::uniform([1000.0, 1000.0], 100.0, 3000.0).unwrap();
        assert_eq!(g.len(), 100);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(VelocityGrid::uniform([2000.0, 2000.0], 0.0, 2000.0).is_err());
        assert!(VelocityGrid::uniform([2000.0, 2000.0], 100.0, -1.0).is_err());
        assert!(VelocityGrid::uniform([2050.0, 2000.0], 100.0, 2000.0).is_err());
        assert!(VelocityGrid::uniform([100.0, 2000.0], 100.0, 2000.0).is_err());
    }

    #[test]
    fn checkerboard_tiles() {
        let g = VelocityGrid::uniform([2000.0, 2000.0], 100.0, 2000.0).unwrap();
        let cb = g.with_checkerboard(10.0, 5).unwrap();
        assert_eq!(cb.velocity_at(0), 2200.0);
        assert_eq!(cb.velocity_at(5), 1800.0);
        assert_eq!(cb.velocity_at(5 * 20), 1800.0);
        assert_eq!(cb.velocity_at(5 * 20 + 5), 2200.0);

        let single = g.with_checkerboard(10.0, 20).unwrap();
        assert!(single.velocity().iter().all(|&v| v == 2200.0));

        assert!(g.with_checkerboard(0.0, 5).is_err());
        assert!(g.with_checkerboard(100.0, 5).is_err());
        assert!(g.with_checkerboard(10.0, 0).is_err());
        assert!(g.with_checkerboard(10.0, 21).is_err());
    }

    #[test]
    fn tile_group_mean_is_background() {
        let g = VelocityGrid::uniform([1600.0, 1600.0], 100.0, 2500.0).unwrap();
        let cb = g.with_checkerboard(20.0, 4).unwrap();
        let mean: f64 = cb.velocity().iter().sum::<f64>() / cb.len() as f64;
        assert!((mean - 2500.0).abs() < 1e-9);
    }

    #[test]
    fn boundary_points_go_to_larger_index() {
        let g = GridGeometry::new(Point::new(0.0, 0.0), 100.0, 4, 4).unwrap();
        assert_eq!(g.cell_of(Point::new(100.0, 50.0)), Some(1));
        assert_eq!(g.cell_of(Point::new(50.0, 100.0)), Some(4));
        assert_eq!(g.cell_of(Point::new(400.0, 400.0)), Some(15));
        assert_eq!(g.cell_of(Point::new(400.1, 0.0)), None);
    }

    proptest! {
        #[test]
        fn slowness_times_velocity_is_one(vs in proptest::collection::vec(1.0f64..1e4, 16)) {
            let geom = GridGeometry::new(Point::new(0.0, 0.0), 10.0, 4, 4).unwrap();
            let g = VelocityGrid::from_velocities(geom, 2000.0, vs).unwrap();
            for (s, v) in g.slowness().iter().zip(g.velocity()) {
                prop_assert!((s * v - 1.0).abs() <= f64::EPSILON);
            }
        }

        #[test]
        fn checkerboard_sign_flip_round_trips(amp in 0.5f64..99.0, block in 1usize..8) {
            let g = VelocityGrid::uniform([800.0, 800.0], 100.0, 1500.0).unwrap();
            let forward = g.with_checkerboard(amp, block).unwrap();
            let restored = forward.with_checkerboard(-amp, block).unwrap().with_checkerboard(amp, block).unwrap();
            prop_assert_eq!(forward, restored);
        }

        #[test]
        fn interior_points_map_to_one_valid_cell(x in 0.0f64..2000.0, y in 0.0f64..1000.0) {
            let g = GridGeometry::new(Point::new(0.0, 0.0), 100.0, 20, 10).unwrap();
            let idx = g.cell_of(Point::new(x, y)).unwrap();
            prop_assert!(idx < g.len());
            let c = g.cell_center(idx);
            prop_assert!((c.x - x).abs() <= 50.0 && (c.y - y).abs() <= 50.0);
        }
    }
}
