use serde::{Deserialize, Serialize};

use super::Trace;
use crate::error::{invalid, Result};
use crate::model::{GridGeometry, Point, VelocityGrid};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FdConfig {
    /// `dt` must satisfy `dt <= cfl_factor * h / (sqrt(2) * v_max)`.
    pub cfl_factor: f64,
    pub sponge: bool,
    pub sponge_width: usize,
    /// Per-step factor inside the sponge is `exp(-(strength * (width - d))^power)`
    /// at `d` cells from the edge.
    pub sponge_strength: f64,
    pub sponge_power: f64,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self { cfl_factor: 0.6, sponge: true, sponge_width: 20, sponge_strength: 0.0045, sponge_power: 1.5 }
    }
}

/// Point injection of a source-time function.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSource {
    pub position: Point,
    pub signature: Trace,
}

/// Snapshots of the pressure field, one per time step.
#[derive(Clone, Debug, PartialEq)]
pub struct Wavefield {
    pub geometry: GridGeometry,
    pub dt: f64,
    /// `frames[k]` is the field at time `(k + 1) * dt`.
    pub frames: Vec<Vec<f64>>,
}

impl Wavefield {
    pub fn nt(&self) -> usize {
        self.frames.len()
    }

    /// Time series at cell `idx`.
    pub fn at_cell(&self, idx: usize) -> Vec<f64> {
        self.frames.iter().map(|f| f[idx]).collect()
    }
}

struct Injection {
    taps: [(usize, f64); 4],
    signature: Trace,
}

/// Second-order leapfrog solver for `u_tt = v^2 (u_xx + u_yy) + f` on cell
/// centers, with zero field outside the grid.
pub struct FdSolver {
    geometry: GridGeometry,
    dt: f64,
    courant2: Vec<f64>,
    damp: Option<Vec<f64>>,
    prev: Vec<f64>,
    cur: Vec<f64>,
    next: Vec<f64>,
    steps: usize,
    sources: Vec<Injection>,
}

impl FdSolver {
    pub fn new(grid: &VelocityGrid, dt: f64, cfg: &FdConfig) -> Result<Self> {
        let g = *grid.geometry();
        let limit = cfg.cfl_factor * g.spacing / (2f64.sqrt() * grid.max_velocity());
        if !(dt > 0.0) || dt > limit {
            return Err(invalid(format!(
                "dt = {dt} s violates the stability bound {limit:.6e} s (cfl factor {})",
                cfg.cfl_factor
            )));
        }
        let courant2 = grid.velocity().iter().map(|v| (v * dt / g.spacing).powi(2)).collect();
        let damp = cfg.sponge.then(|| sponge_profile(&g, cfg.sponge_width, cfg.sponge_strength, cfg.sponge_power));
        let n = g.len();
        Ok(Self {
            geometry: g,
            dt,
            courant2,
            damp,
            prev: vec![0.0; n],
            cur: vec![0.0; n],
            next: vec![0.0; n],
            steps: 0,
            sources: Vec::new(),
        })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Time of the current field.
    pub fn time(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn field(&self) -> &[f64] {
        &self.cur
    }

    pub fn previous_field(&self) -> &[f64] {
        &self.prev
    }

    pub fn set_state(&mut self, previous: Vec<f64>, current: Vec<f64>) -> Result<()> {
        if previous.len() != self.cur.len() || current.len() != self.cur.len() {
            return Err(invalid("state length does not match grid"));
        }
        self.prev = previous;
        self.cur = current;
        Ok(())
    }

    /// Source amplitude is spread bilinearly over the four nearest cell
    /// centers; the signature is read by linear interpolation at `n * dt`.
    pub fn add_source(&mut self, source: PointSource) -> Result<()> {
        let taps = self.bilinear_taps(source.position)?;
        self.sources.push(Injection { taps, signature: source.signature });
        Ok(())
    }

    /// Field value at `p` by bilinear interpolation of cell centers.
    pub fn sample(&self, p: Point) -> Result<f64> {
        Ok(self.bilinear_taps(p)?.iter().map(|&(i, w)| w * self.cur[i]).sum())
    }

    pub(crate) fn bilinear_taps(&self, p: Point) -> Result<[(usize, f64); 4]> {
        let g = &self.geometry;
        if !g.contains(p) {
            return Err(invalid(format!("point ({}, {}) outside grid extent", p.x, p.y)));
        }
        let (ix, fx) = axis_weight((p.x - g.origin.x) / g.spacing - 0.5, g.nx);
        let (iy, fy) = axis_weight((p.y - g.origin.y) / g.spacing - 0.5, g.ny);
        let at = |dx: usize, dy: usize| (iy + dy) * g.nx + ix + dx;
        Ok([
            (at(0, 0), (1.0 - fx) * (1.0 - fy)),
            (at(1, 0), fx * (1.0 - fy)),
            (at(0, 1), (1.0 - fx) * fy),
            (at(1, 1), fx * fy),
        ])
    }

    pub fn step(&mut self) {
        let (nx, ny) = (self.geometry.nx, self.geometry.ny);
        let t = self.time();
        let (prev, cur, next) = (&self.prev, &self.cur, &mut self.next);
        for iy in 0..ny {
            for ix in 0..nx {
                let i = iy * nx + ix;
                let left = if ix > 0 { cur[i - 1] } else { 0.0 };
                let right = if ix + 1 < nx { cur[i + 1] } else { 0.0 };
                let down = if iy > 0 { cur[i - nx] } else { 0.0 };
                let up = if iy + 1 < ny { cur[i + nx] } else { 0.0 };
                let lap = left + right + down + up - 4.0 * cur[i];
                next[i] = 2.0 * cur[i] - prev[i] + self.courant2[i] * lap;
            }
        }
        for src in &self.sources {
            let s = src.signature.value_at(t);
            if s != 0.0 {
                for &(i, w) in &src.taps {
                    next[i] += self.courant2[i] * w * s;
                }
            }
        }
        if let Some(damp) = &self.damp {
            one_way_edges(next, cur, &self.courant2, nx, ny);
            for ((n, c), d) in next.iter_mut().zip(self.cur.iter_mut()).zip(damp) {
                *n *= d;
                *c *= d;
            }
        }
        std::mem::swap(&mut self.prev, &mut self.cur);
        std::mem::swap(&mut self.cur, &mut self.next);
        self.steps += 1;
    }
}

/// First-order one-way wave condition on the outermost ring of cells, so
/// energy that survives the sponge leaves instead of bouncing off a hard wall.
fn one_way_edges(next: &mut [f64], cur: &[f64], courant2: &[f64], nx: usize, ny: usize) {
    let mut set = |i: usize, inner: usize| {
        let r = courant2[i].sqrt();
        next[i] = cur[i] + r * (cur[inner] - cur[i]);
    };
    for ix in 1..nx - 1 {
        set(ix, ix + nx);
        set((ny - 1) * nx + ix, (ny - 2) * nx + ix);
    }
    for iy in 0..ny {
        set(iy * nx, iy * nx + 1);
        set(iy * nx + nx - 1, iy * nx + nx - 2);
    }
}

fn axis_weight(u: f64, n: usize) -> (usize, f64) {
    let u = u.clamp(0.0, (n - 1) as f64);
    let i = (u.floor() as usize).min(n - 2);
    (i, u - i as f64)
}

fn sponge_profile(g: &GridGeometry, width: usize, strength: f64, power: f64) -> Vec<f64> {
    (0..g.len())
        .map(|idx| {
            let (ix, iy) = g.cell_coords(idx);
            let d = ix.min(iy).min(g.nx - 1 - ix).min(g.ny - 1 - iy);
            if d < width {
                (-(strength * (width - d) as f64).powf(power)).exp()
            } else {
                1.0
            }
        })
        .collect()
}

/// Propagates a single point source for `nt` steps and keeps every frame.
pub fn fd_propagate(grid: &VelocityGrid, source: &PointSource, dt: f64, nt: usize, cfg: &FdConfig) -> Result<Wavefield> {
    if nt == 0 {
        return Err(invalid("nt must be at least 1"));
    }
    let mut solver = FdSolver::new(grid, dt, cfg)?;
    solver.add_source(source.clone())?;
    let mut frames = Vec::with_capacity(nt);
    for _ in 0..nt {
        solver.step();
        frames.push(solver.field().to_vec());
    }
    Ok(Wavefield { geometry: *grid.geometry(), dt, frames })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::ricker;

    fn ricker_trace(f: f64, delay: f64, fs: f64, n: usize) -> Trace {
        Trace::new(0, 0.0, fs, (0..n).map(|i| ricker(i as f64 / fs - delay, f)).collect()).unwrap()
    }

    fn grid(n: usize, h: f64, v: f64) -> VelocityGrid {
        VelocityGrid::uniform([n as f64 * h, n as f64 * h], h, v).unwrap()
    }

    #[test]
    fn rejects_unstable_dt() {
        let g = grid(50, 10.0, 2000.0);
        let limit = 0.6 * 10.0 / (2f64.sqrt() * 2000.0);
        assert!(FdSolver::new(&g, limit * 1.01, &FdConfig::default()).is_err());
        assert!(FdSolver::new(&g, limit, &FdConfig::default()).is_ok());
    }

    #[test]
    fn zero_signature_gives_zero_field() {
        let g = grid(30, 10.0, 2000.0);
        let src = PointSource { position: Point::new(150.0, 150.0), signature: Trace::new(0, 0.0, 1000.0, vec![0.0; 100]).unwrap() };
        let w = fd_propagate(&g, &src, 1e-3, 50, &FdConfig::default()).unwrap();
        assert!(w.frames.iter().all(|f| f.iter().all(|&v| v == 0.0)));
    }

    /// Leading-edge radius along +x compared with the analytic front `v * t`,
    /// where `t` is measured from the first time the source exceeds 1% of its
    /// peak.
    #[test]
    fn wavefront_radius_matches_velocity() {
        let (n, h, v, f) = (301, 5.0, 2000.0, 25.0);
        let g = grid(n, h, v);
        let dt = 0.5e-3;
        let delay = 1.5 / f;
        let sig = ricker_trace(f, delay, 1.0 / dt, 2000);
        let center = Point::new(n as f64 * h / 2.0, n as f64 * h / 2.0);
        let mut solver = FdSolver::new(&g, dt, &FdConfig::default()).unwrap();
        solver.add_source(PointSource { position: center, signature: sig.clone() }).unwrap();
        let onset = (0..sig.len()).find(|&i| sig.samples[i].abs() > 0.01).unwrap() as f64 * dt;
        let c0 = g.cell_of(center).unwrap();
        let (cx, cy) = g.geometry().cell_coords(c0);
        for target in [0.15, 0.25, 0.3] {
            while solver.time() < target - 1e-12 {
                solver.step();
            }
            let row: Vec<f64> = (cx..n).map(|ix| solver.field()[cy * n + ix]).collect();
            let peak = row.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let edge = row.iter().rposition(|x| x.abs() > 0.01 * peak).unwrap();
            let radius = edge as f64 * h;
            let expected = v * (solver.time() - onset);
            assert!((radius - expected).abs() <= h, "t={target}: {radius} vs {expected}");
        }
    }

    #[test]
    fn reciprocity_in_uniform_medium() {
        let g = grid(80, 10.0, 2000.0);
        let dt = 1e-3;
        let sig = ricker_trace(20.0, 0.06, 1000.0, 400);
        let (a, b) = (Point::new(233.0, 301.0), Point::new(517.0, 462.0));
        let record = |from: Point, to: Point| {
            let mut s = FdSolver::new(&g, dt, &FdConfig::default()).unwrap();
            s.add_source(PointSource { position: from, signature: sig.clone() }).unwrap();
            (0..400).map(|_| {
                s.step();
                s.sample(to).unwrap()
            }).collect::<Vec<_>>()
        };
        let (ab, ba) = (record(a, b), record(b, a));
        let diff: f64 = ab.iter().zip(&ba).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = ab.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm > 0.0);
        assert!(diff <= 1e-5 * norm, "relative mismatch {}", diff / norm);
    }

    /// Discrete energy of the leapfrog scheme:
    /// `|u1 - u0|^2 / (v dt)^2 + u1 . K u0 / h^2` with `K = -laplacian`.
    fn energy(prev: &[f64], cur: &[f64], nx: usize, ny: usize, v: f64, dt: f64, h: f64) -> f64 {
        let kin: f64 = cur.iter().zip(prev).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (v * dt).powi(2);
        let mut pot = 0.0;
        for iy in 0..ny {
            for ix in 0..nx {
                let i = iy * nx + ix;
                let nb = |j: Option<usize>| j.map_or(0.0, |j| prev[j]);
                let l = nb((ix > 0).then(|| i - 1)) + nb((ix + 1 < nx).then(|| i + 1))
                    + nb((iy > 0).then(|| i - nx)) + nb((iy + 1 < ny).then(|| i + nx));
                pot += cur[i] * (4.0 * prev[i] - l);
            }
        }
        kin + pot / (h * h)
    }

    #[test]
    fn energy_is_conserved_without_sponge() {
        let (n, h, v) = (200, 10.0, 2000.0);
        let g = grid(n, h, v);
        let dt = 1e-3;
        let cfg = FdConfig { sponge: false, ..Default::default() };
        let mut s = FdSolver::new(&g, dt, &cfg).unwrap();
        let geom = *g.geometry();
        let bump: Vec<f64> = (0..geom.len())
            .map(|i| {
                let p = geom.cell_center(i);
                (-((p.x - 1000.0).powi(2) + (p.y - 1000.0).powi(2)) / (2.0 * 40.0f64.powi(2))).exp()
            })
            .collect();
        s.set_state(bump.clone(), bump).unwrap();
        s.step();
        let e0 = energy(s.previous_field(), s.field(), n, n, v, dt, h);
        for _ in 0..200 {
            s.step();
        }
        let e1 = energy(s.previous_field(), s.field(), n, n, v, dt, h);
        assert!(((e1 - e0) / e0).abs() < 1e-3, "{e0} -> {e1}");
        let edge: f64 = (0..n).map(|ix| s.field()[ix].abs()).fold(0.0, f64::max);
        assert!(edge < 1e-6, "wave reached the boundary");
    }

    /// Amplitude returning from the sponge compared with the direct arrival,
    /// using a much larger grid as the reflection-free reference.
    #[test]
    fn sponge_reflection_below_one_percent() {
        let (h, v, dt) = (10.0, 2000.0, 1e-3);
        let sig = ricker_trace(20.0, 0.06, 1000.0, 900);
        let run = |n: usize, offset: f64| {
            let g = grid(n, h, v);
            let mut s = FdSolver::new(&g, dt, &FdConfig::default()).unwrap();
            let src = Point::new(offset + 500.0, offset + 500.0);
            let rcv = Point::new(offset + 550.0, offset + 500.0);
            s.add_source(PointSource { position: src, signature: sig.clone() }).unwrap();
            (0..900).map(|_| {
                s.step();
                s.sample(rcv).unwrap()
            }).collect::<Vec<_>>()
        };
        let small = run(100, 0.0);
        let big = run(300, 1000.0);
        let direct = big.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let resid = small.iter().zip(&big).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(resid <= 0.01 * direct, "reflected {:.4} of direct", resid / direct);
    }
}
