//! Travel-time tomography: event location, ray-matrix assembly and the
//! centralized ridge solver used as the reference for distributed solves.

mod locate;
mod sparse;

pub use locate::{locate_event, Locator};
pub use sparse::SparseMatrix;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::forward::trace_ray;
use crate::model::{GridGeometry, SeismicEvent, Station, VelocityGrid};
use crate::signal::Pick;

/// Ridge system `min ‖A s − t‖² + λ‖s − s_ref‖²` over cell slowness.
#[derive(Clone, Debug)]
pub struct TomoSystem {
    pub matrix: SparseMatrix,
    pub t: Vec<f64>,
    /// `(event_id, station_id)` per row.
    pub row_meta: Vec<(u32, u32)>,
    pub lambda: f64,
    /// Slowness the ridge pulls toward; background for assembled systems,
    /// zero for systems built directly from a matrix.
    pub reference: Vec<f64>,
    pub geometry: Option<GridGeometry>,
}

/// Located event together with its arrival picks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventPicks {
    pub event: SeismicEvent,
    pub picks: Vec<Pick>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TomoModel {
    pub geometry: Option<GridGeometry>,
    pub slowness: Vec<f64>,
    /// Cells raised from non-positive slowness to 10% of the reference.
    pub clamped: usize,
}

impl TomoModel {
    pub fn from_grid(grid: &VelocityGrid) -> Self {
        Self { geometry: Some(*grid.geometry()), slowness: grid.slowness(), clamped: 0 }
    }

    pub fn velocity(&self) -> Vec<f64> {
        self.slowness.iter().map(|s| 1.0 / s).collect()
    }
}

impl TomoSystem {
    /// System with zero reference and no grid.
    pub fn new(matrix: SparseMatrix, t: Vec<f64>, lambda: f64) -> Result<Self> {
        if matrix.nrows() != t.len() {
            return Err(invalid(format!("{} rows but {} travel times", matrix.nrows(), t.len())));
        }
        if !(lambda >= 0.0) {
            return Err(invalid(format!("lambda must be non-negative, got {lambda}")));
        }
        let n = matrix.ncols();
        let row_meta = (0..t.len() as u32).map(|i| (0, i)).collect();
        Ok(Self { matrix, t, row_meta, lambda, reference: vec![0.0; n], geometry: None })
    }

    pub fn cells(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn rows(&self) -> usize {
        self.t.len()
    }

    /// Right-hand side `Aᵀ(t − A s_ref)` of the anomaly normal equations.
    pub fn normal_rhs(&self) -> Vec<f64> {
        let pred = self.matrix.mul(&self.reference);
        let r: Vec<f64> = self.t.iter().zip(&pred).map(|(t, p)| t - p).collect();
        self.matrix.tmul(&r)
    }

    /// `(AᵀA + λI)(s − s_ref)`
    fn normal_apply(&self, delta: &[f64]) -> Vec<f64> {
        let mut out = self.matrix.tmul(&self.matrix.mul(delta));
        for (o, d) in out.iter_mut().zip(delta) {
            *o += self.lambda * d;
        }
        out
    }

    /// `‖(AᵀA + λI)(s − s_ref) − Aᵀ(t − A s_ref)‖ / ‖Aᵀ(t − A s_ref)‖`.
    pub fn normal_residual(&self, slowness: &[f64]) -> f64 {
        let delta: Vec<f64> = slowness.iter().zip(&self.reference).map(|(s, r)| s - r).collect();
        let rhs = self.normal_rhs();
        let lhs = self.normal_apply(&delta);
        let num = norm(&lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect::<Vec<_>>());
        let den = norm(&rhs);
        if den == 0.0 {
            num
        } else {
            num / den
        }
    }

    /// `0.5‖A s − t‖² + 0.5 λ‖s − s_ref‖²`
    pub fn objective(&self, slowness: &[f64]) -> f64 {
        let pred = self.matrix.mul(slowness);
        let misfit: f64 = pred.iter().zip(&self.t).map(|(p, t)| (p - t).powi(2)).sum();
        let ridge: f64 = slowness.iter().zip(&self.reference).map(|(s, r)| (s - r).powi(2)).sum();
        0.5 * misfit + 0.5 * self.lambda * ridge
    }

    /// Writes `stem.mtx` (matrix) and `stem_t.csv` (travel times with row
    /// metadata).
    pub fn export(&self, dir: &Path, stem: &str) -> Result<[PathBuf; 2]> {
        std::fs::create_dir_all(dir)?;
        let mtx = dir.join(format!("{stem}.mtx"));
        std::fs::write(&mtx, self.matrix.to_matrix_market())?;
        let mut csv = String::from("row,event_id,station_id,t_s\n");
        for (i, ((e, s), t)) in self.row_meta.iter().zip(&self.t).enumerate() {
            let _ = writeln!(csv, "{i},{e},{s},{t}");
        }
        let tp = dir.join(format!("{stem}_t.csv"));
        std::fs::write(&tp, csv)?;
        Ok([mtx, tp])
    }
}

/// `0.1 · trace(AᵀA) / L`
pub fn default_lambda(matrix: &SparseMatrix) -> f64 {
    0.1 * matrix.frobenius2() / matrix.ncols() as f64
}

/// Cell lengths, travel time and `(event_id, station_id)` of one ray.
type RayRow = (Vec<(usize, f64)>, f64, (u32, u32));

/// One row per (event, picked station): straight-ray lengths per cell and
/// `t = pick − origin_time`. Stations without a pick for an event get no
/// row. `lambda = None` selects [`default_lambda`].
pub fn assemble_system(
    events: &[EventPicks],
    stations: &[Station],
    grid: &VelocityGrid,
    lambda: Option<f64>,
) -> Result<TomoSystem> {
    let per_event: Vec<Vec<RayRow>> = events
        .par_iter()
        .map(|ep| {
            stations
                .iter()
                .filter_map(|s| ep.picks.iter().find(|p| p.station_id == s.id).map(|p| (s, p)))
                .map(|(s, p)| {
                    let ray = trace_ray(ep.event.hypocenter, s.position, grid)?;
                    Ok((ray.segments, p.arrival_time - ep.event.origin_time, (ep.event.id, s.id)))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut t = Vec::new();
    let mut row_meta = Vec::new();
    for (r, ti, meta) in per_event.into_iter().flatten() {
        rows.push(r);
        t.push(ti);
        row_meta.push(meta);
    }
    let matrix = SparseMatrix::from_rows(grid.len(), &rows)?;
    let lambda = lambda.unwrap_or_else(|| default_lambda(&matrix));
    if !(lambda >= 0.0) {
        return Err(invalid(format!("lambda must be non-negative, got {lambda}")));
    }
    let reference = vec![1.0 / grid.background(); grid.len()];
    Ok(TomoSystem { matrix, t, row_meta, lambda, reference, geometry: Some(*grid.geometry()) })
}

/// Relative normal-equation residual the solver stops at.
pub const SOLVE_TOLERANCE: f64 = 1e-8;

/// Conjugate gradients on `(AᵀA + λI) δ = Aᵀ(t − A s_ref)`, `s = s_ref + δ`,
/// capped at `10 L` iterations. Non-positive cells are clamped afterwards.
pub fn solve_centralized(system: &TomoSystem) -> Result<TomoModel> {
    solve_centralized_from(system, None)
}

/// As [`solve_centralized`], starting from `initial` slowness when given.
pub fn solve_centralized_from(system: &TomoSystem, initial: Option<&[f64]>) -> Result<TomoModel> {
    let l = system.cells();
    if system.rows() == 0 || l == 0 {
        return Err(Error::InsufficientData("empty tomography system".into()));
    }
    let b = system.normal_rhs();
    let bnorm = norm(&b);
    let mut x: Vec<f64> = match initial {
        Some(s) if s.len() == l => s.iter().zip(&system.reference).map(|(s, r)| s - r).collect(),
        Some(s) => return Err(invalid(format!("initial model has {} cells, expected {l}", s.len()))),
        None => vec![0.0; l],
    };
    let finish = |delta: &[f64]| clamp(system, delta);
    if bnorm == 0.0 && initial.is_none() {
        return Ok(finish(&x));
    }
    let ax = system.normal_apply(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let tol = SOLVE_TOLERANCE * bnorm.max(f64::MIN_POSITIVE);
    let cap = 10 * l;
    for _ in 0..cap {
        if rr.sqrt() <= tol {
            return Ok(finish(&x));
        }
        let ap = system.normal_apply(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rr / pap;
        for i in 0..l {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..l {
            p[i] = r[i] + beta * p[i];
        }
    }
    // recursive residual can drift; confirm against the true residual
    let s: Vec<f64> = x.iter().zip(&system.reference).map(|(d, r)| d + r).collect();
    let residual = system.normal_residual(&s);
    if residual <= SOLVE_TOLERANCE {
        return Ok(finish(&x));
    }
    Err(Error::ConvergenceFailure { iterations: cap, residual, best: s })
}

fn clamp(system: &TomoSystem, delta: &[f64]) -> TomoModel {
    let s = delta.iter().zip(&system.reference).map(|(d, r)| r + d).collect();
    clamped_model(&system.reference, s, system.geometry)
}

/// Raises non-positive slowness to 10% of a positive reference and counts
/// the cells touched.
pub fn clamped_model(reference: &[f64], mut slowness: Vec<f64>, geometry: Option<GridGeometry>) -> TomoModel {
    let mut clamped = 0;
    for (s, &r) in slowness.iter_mut().zip(reference) {
        if *s <= 0.0 && r > 0.0 {
            clamped += 1;
            *s = 0.1 * r;
        }
    }
    TomoModel { geometry, slowness, clamped }
}

/// Pearson correlation of slowness over cells with at least one ray.
/// Anomalies relative to any common background give the same value.
pub fn checkerboard_score(recovered: &TomoModel, truth: &TomoModel, hits: &[usize]) -> Result<f64> {
    if recovered.slowness.len() != truth.slowness.len() || hits.len() != truth.slowness.len() {
        return Err(invalid("models and hit counts must share a grid"));
    }
    let cells: Vec<usize> = (0..hits.len()).filter(|&i| hits[i] >= 1).collect();
    if cells.is_empty() {
        return Err(Error::InsufficientData("no cell is hit by a ray".into()));
    }
    let n = cells.len() as f64;
    let ma = cells.iter().map(|&i| recovered.slowness[i]).sum::<f64>() / n;
    let mb = cells.iter().map(|&i| truth.slowness[i]).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for &i in &cells {
        let a = recovered.slowness[i] - ma;
        let b = truth.slowness[i] - mb;
        sab += a * b;
        saa += a * a;
        sbb += b * b;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(0.0);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{perimeter_stations, Point};
    use crate::signal::PickMethod;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn identity_system(lambda: f64) -> TomoSystem {
        TomoSystem::new(SparseMatrix::identity(2), vec![1.0, 2.0], lambda).unwrap()
    }

    fn random_system(rows: usize, cols: usize, seed: u64, lambda: f64) -> TomoSystem {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let m: Vec<Vec<(usize, f64)>> = (0..rows)
            .map(|_| {
                let mut row = Vec::new();
                for c in 0..cols {
                    if rng.random_bool(0.3) {
                        row.push((c, rng.random_range(0.1..5.0)));
                    }
                }
                row
            })
            .collect();
        let t = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
        TomoSystem::new(SparseMatrix::from_rows(cols, &m).unwrap(), t, lambda).unwrap()
    }

    fn dense_solve(s: &TomoSystem) -> Vec<f64> {
        let d = s.matrix.to_dense();
        let a = DMatrix::from_fn(s.rows(), s.cells(), |i, j| d[i][j]);
        let h = a.transpose() * &a + DMatrix::identity(s.cells(), s.cells()) * s.lambda;
        let rhs = a.transpose() * DVector::from_vec(s.t.clone());
        h.lu().solve(&rhs).unwrap().iter().copied().collect()
    }

    fn pick(station_id: u32, t: f64) -> Pick {
        Pick { station_id, arrival_time: t, method: PickMethod::StaLta, quality: 1.0 }
    }

    fn located(id: u32, at: Point, t0: f64, stations: &[Station], grid: &VelocityGrid) -> EventPicks {
        let picks = stations
            .iter()
            .map(|s| {
                let ray = trace_ray(at, s.position, grid).unwrap();
                pick(s.id, t0 + crate::forward::travel_time(&ray, grid))
            })
            .collect();
        EventPicks { event: SeismicEvent { id, hypocenter: at, origin_time: t0, magnitude_scale: 1.0 }, picks }
    }

    #[test]
    fn identity_without_ridge() {
        let m = solve_centralized(&identity_system(0.0)).unwrap();
        assert!((m.slowness[0] - 1.0).abs() < 1e-12 && (m.slowness[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn identity_with_unit_ridge() {
        let m = solve_centralized(&identity_system(1.0)).unwrap();
        assert!((m.slowness[0] - 0.5).abs() < 1e-12 && (m.slowness[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matches_dense_direct_solve() {
        let s = random_system(30, 25, 11, 0.5);
        let cg = solve_centralized(&s).unwrap().slowness;
        let direct = dense_solve(&s);
        let err = norm(&cg.iter().zip(&direct).map(|(a, b)| a - b).collect::<Vec<_>>());
        assert!(err <= 1e-6 * norm(&direct));
    }

    #[test]
    fn assembled_shapes_and_row_sums() {
        let grid = VelocityGrid::uniform([1000.0, 1000.0], 50.0, 2000.0).unwrap();
        let st: Vec<Station> = perimeter_stations([1000.0, 1000.0], 12, 4).unwrap().into_iter().take(3).collect();
        let evs = [
            located(0, Point::new(300.0, 420.0), 0.1, &st, &grid),
            located(1, Point::new(710.0, 640.0), 0.2, &st, &grid),
        ];
        let sys = assemble_system(&evs, &st, &grid, Some(0.0)).unwrap();
        assert_eq!(sys.rows(), 6);
        for (i, &(e, s)) in sys.row_meta.iter().enumerate() {
            let src = evs[e as usize].event.hypocenter;
            let rcv = st.iter().find(|x| x.id == s).unwrap().position;
            let sum: f64 = sys.matrix.row(i).map(|(_, v)| v).sum();
            assert!((sum - src.distance(rcv)).abs() <= 1e-9 * src.distance(rcv));
            assert!(sys.matrix.row(i).all(|(_, v)| v >= 0.0));
        }
        let pred = sys.matrix.mul(&grid.slowness());
        for (p, t) in pred.iter().zip(&sys.t) {
            assert!((p - t).abs() < 1e-9);
        }
    }

    #[test]
    fn missing_picks_drop_rows() {
        let grid = VelocityGrid::uniform([1000.0, 1000.0], 50.0, 2000.0).unwrap();
        let st = perimeter_stations([1000.0, 1000.0], 8, 4).unwrap();
        let mut ev = located(0, Point::new(500.0, 500.0), 0.0, &st, &grid);
        ev.picks.retain(|p| p.station_id % 2 == 0);
        let sys = assemble_system(&[ev], &st, &grid, None).unwrap();
        assert_eq!(sys.rows(), 4);
        assert!(sys.row_meta.iter().all(|&(_, s)| s % 2 == 0));
    }

    #[test]
    fn huge_ridge_returns_background() {
        let grid = VelocityGrid::uniform([1000.0, 1000.0], 100.0, 2000.0).unwrap().with_checkerboard(10.0, 2).unwrap();
        let st = perimeter_stations([1000.0, 1000.0], 16, 4).unwrap();
        let evs: Vec<EventPicks> =
            (0..5).map(|i| located(i, Point::new(150.0 + 170.0 * i as f64, 500.0), 0.0, &st, &grid)).collect();
        let sys = assemble_system(&evs, &st, &grid, Some(1e12)).unwrap();
        let m = solve_centralized(&sys).unwrap();
        for s in m.slowness {
            assert!((s - 1.0 / 2000.0).abs() < 1e-9);
        }
    }

    #[test]
    fn negative_slowness_is_clamped_and_counted() {
        let mut sys = TomoSystem::new(SparseMatrix::identity(2), vec![-1.0, 2.0], 0.0).unwrap();
        sys.reference = vec![0.5, 0.5];
        let m = solve_centralized(&sys).unwrap();
        assert_eq!(m.clamped, 1);
        assert_eq!(m.slowness[0], 0.05);
        assert!((m.slowness[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn score_of_truth_and_its_mirror() {
        let grid = VelocityGrid::uniform([500.0, 500.0], 50.0, 2000.0).unwrap();
        let truth = TomoModel::from_grid(&grid.with_checkerboard(5.0, 2).unwrap());
        let mirror = TomoModel::from_grid(&grid.with_checkerboard(-5.0, 2).unwrap());
        let hits = vec![1; grid.len()];
        assert!((checkerboard_score(&truth, &truth, &hits).unwrap() - 1.0).abs() < 1e-12);
        assert!((checkerboard_score(&mirror, &truth, &hits).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(checkerboard_score(&truth, &truth, &vec![0; grid.len()]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn export_round_trips_matrix() {
        let s = random_system(6, 5, 3, 0.1);
        let dir = tempfile::tempdir().unwrap();
        let [mtx, csv] = s.export(dir.path(), "system").unwrap();
        let back = SparseMatrix::from_matrix_market(&std::fs::read_to_string(mtx).unwrap()).unwrap();
        assert_eq!(back.to_dense(), s.matrix.to_dense());
        assert_eq!(std::fs::read_to_string(csv).unwrap().lines().count(), 7);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn normal_residual_below_tolerance(seed in 0u64..1000, lambda in 0.01f64..10.0) {
            let s = random_system(20, 12, seed, lambda);
            let m = solve_centralized(&s).unwrap();
            prop_assert!(s.normal_residual(&m.slowness) <= 1e-8);
        }

        #[test]
        fn ridge_shrinks_solution(seed in 0u64..1000, l1 in 0.01f64..5.0, factor in 1.1f64..20.0) {
            let a = solve_centralized(&random_system(20, 12, seed, l1)).unwrap();
            let b = solve_centralized(&random_system(20, 12, seed, l1 * factor)).unwrap();
            prop_assert!(norm(&a.slowness) >= norm(&b.slowness) * (1.0 - 1e-9));
        }
    }
}
