//! Acceptance suite: one pass/fail line per criterion. Runs without the
//! libtest harness so the lines always reach the output.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use seisnet::ansi::{
    eikonal_map, extract_travel_time, synthesize_noise, MapMode, MapParams, NoiseSpec, SegmentSpectra, TravelTimeSurface,
};
use seisnet::cli::run_scenario;
use seisnet::consensus::Algorithm;
use seisnet::forward::{synthesize_trace, SynthParams, Trace};
use seisnet::mmi::{image_hybrid, image_sum, ImageVolume};
use seisnet::model::{GridGeometry, Point, SeismicEvent, Station, VelocityGrid};
use seisnet::netsim::{Edge, Network, PayloadKind, Topology};
use seisnet::run::{Command, Run, RunSnapshot, RunStatus};
use seisnet::scenario::Scenario;
use seisnet::signal::{pick_arrival, PickMethod, PickParams};
use seisnet::tomo::{solve_centralized, SparseMatrix, TomoSystem};

type Outcome = Result<String, String>;

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.json"))
}

fn scenario(name: &str, overrides: &[(&str, &str)]) -> Scenario {
    let text = std::fs::read_to_string(scenario_path(name)).expect("bundled scenario");
    let value = serde_json::from_str(&text).expect("scenario JSON");
    let o: Vec<(String, String)> = overrides.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    Scenario::from_value(value, &o).expect("valid scenario")
}

fn metric(run: &Run, key: &str) -> Result<f64, String> {
    run.metrics().get(key).copied().ok_or_else(|| format!("metric {key} missing"))
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_1() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for alg in Algorithm::ALL {
        let t0 = Instant::now();
        let mut run = Run::new(scenario("desk", &[("tomo.consensus.algorithm", alg.as_str())])).map_err(|e| e.to_string())?;
        let status = run.run_to_end();
        let secs = t0.elapsed().as_secs_f64();
        let err = metric(&run, "relative_error_vs_centralized")?;
        ok &= status == RunStatus::Finished && err <= 1e-3 && secs <= 60.0;
        lines.push(format!("{} err {err:.1e} in {} rounds, {secs:.1} s", alg.as_str(), run.round()));
    }
    check(ok, lines.join("; "))
}

fn random_system(seed: u64) -> TomoSystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols = rng.random_range(20..=400);
    let rows = rng.random_range(cols / 2..=2 * cols);
    let density = rng.random_range(0.02..0.2);
    let m: Vec<Vec<(usize, f64)>> = (0..rows)
        .map(|_| {
            let mut row = Vec::new();
            for c in 0..cols {
                if rng.random_bool(density) {
                    row.push((c, rng.random_range(0.1..100.0)));
                }
            }
            row
        })
        .collect();
    let t = (0..rows).map(|_| rng.random_range(0.0..1.0)).collect();
    TomoSystem::new(SparseMatrix::from_rows(cols, &m).unwrap(), t, rng.random_range(0.01..10.0)).unwrap()
}

fn criterion_2() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let s = random_system(seed);
        let d = s.matrix.to_dense();
        let a = DMatrix::from_fn(s.rows(), s.cells(), |i, j| d[i][j]);
        let h = a.transpose() * &a + DMatrix::identity(s.cells(), s.cells()) * s.lambda;
        let direct = h.lu().solve(&(a.transpose() * DVector::from_vec(s.t.clone()))).ok_or("singular system")?;
        let cg = DVector::from_vec(solve_centralized(&s).map_err(|e| e.to_string())?.slowness);
        worst = worst.max((cg - &direct).norm() / direct.norm());
    }
    check(worst <= 1e-6, format!("worst relative difference {worst:.1e} over 20 instances"))
}

fn criterion_3() -> Outcome {
    let mut run = Run::new(scenario("tomo_checkerboard", &[])).map_err(|e| e.to_string())?;
    let status = run.run_to_end();
    let score = metric(&run, "checkerboard_score")?;
    check(
        status == RunStatus::Finished && score >= 0.8,
        format!("checkerboard score {score:.3} after {} rounds ({status:?})", run.round()),
    )
}

fn criterion_4() -> Outcome {
    let grid = VelocityGrid::uniform([2000.0, 2000.0], 100.0, 2000.0).unwrap();
    let station = Station { id: 3, position: Point::new(1700.0, 400.0), cluster_id: 0 };
    let event = SeismicEvent { id: 1, hypocenter: Point::new(600.0, 1300.0), origin_time: 0.5, magnitude_scale: 1.0 };
    let params = SynthParams { snr: Some(10.0), duration: 2.5, ..Default::default() };
    let truth = event.origin_time + event.hypocenter.distance(station.position) / 2000.0;
    let mut errs = Vec::new();
    let mut missed = 0;
    for seed in 0..100 {
        let tr = synthesize_trace(&event, &station, &grid, &params, seed).unwrap();
        match pick_arrival(&tr, PickMethod::StaLta, &PickParams::default()).unwrap() {
            Some(p) => errs.push((p.arrival_time - truth).abs() * params.sampling_rate),
            None => {
                missed += 1;
                errs.push(f64::INFINITY);
            }
        }
    }
    errs.sort_by(f64::total_cmp);
    let median = 0.5 * (errs[49] + errs[50]);
    let strict = PickParams { threshold: 10.0, ..Default::default() };
    let mut false_picks = 0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let x: Vec<f64> = (0..1250).map(|_| noise.sample(&mut rng)).collect();
        let tr = Trace::new(0, 0.0, 500.0, x).unwrap();
        false_picks += pick_arrival(&tr, PickMethod::StaLta, &strict).unwrap().is_some() as usize;
    }
    check(
        missed == 0 && median <= 2.0 && false_picks == 0,
        format!("median error {median:.2} samples, {missed} missed, {false_picks} false picks on noise"),
    )
}

fn criterion_5() -> Outcome {
    let mut run = Run::new(scenario("mmi", &[])).map_err(|e| e.to_string())?;
    let status = run.run_to_end();
    let cells = metric(&run, "location_error_cells")?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = GridGeometry::new(Point::new(0.0, 0.0), 20.0, 12, 9).unwrap();
    let mut identical = true;
    for n in 1..=6 {
        let ims: Vec<ImageVolume> = (0..n)
            .map(|_| ImageVolume {
                geometry: g,
                dt: Some(0.002),
                frames: (0..8).map(|_| (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
            })
            .collect();
        identical &= image_hybrid(&ims, n).unwrap() == image_sum(&ims).unwrap();
    }
    check(
        status == RunStatus::Finished && cells <= 1.0 && identical,
        format!("located within {cells} cells; hybrid with one group equals the sum bitwise: {identical}"),
    )
}

fn criterion_6() -> Outcome {
    let mut run = Run::new(scenario("ansi", &[])).map_err(|e| e.to_string())?;
    let status = run.run_to_end();
    let median = metric(&run, "median_relative_error")?;
    let covered = metric(&run, "covered_cells")?;
    // constant amplitude: the Helmholtz term vanishes identically
    let stations: Vec<Station> = run.stations().to_vec();
    let src = stations[0].position;
    let samples = stations.iter().map(|s| (s.id, s.position.distance(src) / 1930.0, 0.7)).collect();
    let surface = TravelTimeSurface { virtual_source: stations[0].id, samples, omega: std::f64::consts::PI * 12.0 };
    let g = GridGeometry::new(Point::new(0.0, 0.0), 100.0, 20, 20).unwrap();
    let p = MapParams::default();
    let e = eikonal_map(&surface, &stations, &g, MapMode::Eikonal, [4.0, 8.0], &p).unwrap();
    let h = eikonal_map(&surface, &stations, &g, MapMode::Helmholtz, [4.0, 8.0], &p).unwrap();
    let same = e == h && e.hits.iter().any(|&c| c > 0);
    check(
        status == RunStatus::Finished && median <= 0.02 && same,
        format!("median error {:.2}% over {covered} cells; Helmholtz equals eikonal: {same}", 100.0 * median),
    )
}

/// Pairs on the 10 × 10 lattice, spanning 600 m to the full diagonal.
const PAIRS: [(u32, u32); 10] = [(0, 3), (0, 33), (11, 15), (20, 26), (44, 49), (0, 90), (5, 95), (0, 99), (13, 86), (27, 72)];

fn criterion_7() -> Outcome {
    let s = scenario("ansi", &[]);
    let stations = s.stations().unwrap();
    let spec = NoiseSpec { velocity: s.grid.background_velocity, sampling_rate: s.sampling_rate, ..s.ansi.noise.clone() };
    let field = synthesize_noise(&stations, &spec, s.seed).map_err(|e| e.to_string())?;
    let spectra = SegmentSpectra::new(&field, s.ansi.n_segments, s.ansi.max_lag).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for &(a, b) in &PAIRS {
        let d = stations[a as usize].position.distance(stations[b as usize].position);
        let corr = spectra.pair(a, b).map_err(|e| e.to_string())?;
        let (tau, _) = extract_travel_time(&corr, s.ansi.band).map_err(|e| format!("pair {a}-{b}: {e}"))?;
        worst = worst.max((tau - d / spec.velocity).abs() * s.sampling_rate);
    }
    check(
        s.ansi.n_segments >= 50 && worst <= 1.0,
        format!("worst lag error {worst:.2} samples over {} pairs, {} segments", PAIRS.len(), s.ansi.n_segments),
    )
}

fn run_cli(out: &Path) -> Result<(), String> {
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_seisnet"))
        .arg("--scenario")
        .arg(scenario_path("desk"))
        .arg("--out")
        .arg(out)
        .stdout(std::process::Stdio::null())
        .status()
        .map_err(|e| e.to_string())?;
    check(status.success(), format!("cli exit {status}")).map(|_| ())
}

fn identical_dirs(a: &Path, b: &Path) -> Result<usize, String> {
    let mut names: Vec<_> = std::fs::read_dir(a).map_err(|e| e.to_string())?.map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for n in &names {
        if std::fs::read(a.join(n)).ok() != std::fs::read(b.join(n)).ok() {
            return Err(format!("{} differs", n.to_string_lossy()));
        }
    }
    Ok(names.len())
}

fn non_cut_link(run: &Run) -> (u32, u32) {
    let topo = run.network().topology();
    for e in topo.edges() {
        let rest: Vec<Edge> = topo.edges().iter().filter(|x| (x.a, x.b) != (e.a, e.b)).cloned().collect();
        if !Topology::new(topo.nodes().to_vec(), rest).unwrap().is_disconnected() {
            return (e.a, e.b);
        }
    }
    panic!("every link is a cut link");
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_cli(&dir.path().join("a"))?;
    run_cli(&dir.path().join("b"))?;
    let files = identical_dirs(&dir.path().join("a"), &dir.path().join("b"))?;

    let mut faults = Vec::new();
    let mut faults_ok = true;
    for alg in Algorithm::ALL {
        let mut run = Run::new(scenario("desk", &[("tomo.consensus.algorithm", alg.as_str())])).map_err(|e| e.to_string())?;
        for _ in 0..50 {
            run.step();
        }
        let (a, b) = non_cut_link(&run);
        run.submit(Command::FailLink { a, b }).map_err(|e| e.to_string())?;
        let status = run.run_to_end();
        let err = metric(&run, "relative_error_vs_centralized")?;
        faults_ok &= status == RunStatus::Finished && err <= 1e-3 && run.params().failed_links == vec![(a, b)];
        faults.push(format!("{} without {a}-{b} err {err:.1e}", alg.as_str()));
    }

    let mut rates = Vec::new();
    for p in [0.05, 0.2, 0.5] {
        let topo = Topology::new(vec![0, 1], vec![Edge { a: 0, b: 1, latency: 0.001, drop_prob: p }]).unwrap();
        let mut net = Network::new(topo, 17);
        for k in 0..10_000 {
            net.send(0, 1, PayloadKind::Control, k, vec![1.0]).unwrap();
        }
        net.drain().unwrap();
        let st = net.stats();
        rates.push((p, st.dropped as f64 / st.sent as f64));
    }
    let rates_ok = rates.iter().all(|(p, r)| (p - r).abs() <= 0.02);
    check(
        faults_ok && rates_ok,
        format!(
            "{files} files byte-identical; link failed at round 50: {}; drop rates {}",
            faults.join(", "),
            rates.iter().map(|(p, r)| format!("{p}->{r:.4}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

async fn served_run(text: &str) -> Result<RunSnapshot, String> {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.map_err(|e| e.to_string())?;
    let base = format!("http://{}/v1", listener.local_addr().unwrap());
    tokio::spawn(seisnet::control::serve_on(listener));
    let http = reqwest::Client::new();
    let created: serde_json::Value = http
        .post(format!("{base}/runs"))
        .header("content-type", "application/json")
        .body(text.to_string())
        .send()
        .await
        .map_err(|e| e.to_string())?
        .json()
        .await
        .map_err(|e| e.to_string())?;
    let id = created["run_id"].as_str().ok_or(format!("no run id in {created}"))?.to_string();
    let deadline = Instant::now() + Duration::from_secs(300);
    loop {
        let snap: RunSnapshot = http
            .get(format!("{base}/runs/{id}/snapshot"))
            .send()
            .await
            .map_err(|e| e.to_string())?
            .json()
            .await
            .map_err(|e| e.to_string())?;
        if matches!(snap.status, RunStatus::Finished | RunStatus::Failed) || Instant::now() > deadline {
            return Ok(snap);
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
}

fn criterion_9() -> Outcome {
    let text = std::fs::read_to_string(scenario_path("desk")).unwrap();
    let rt = tokio::runtime::Runtime::new().unwrap();
    let snap = rt.block_on(served_run(&text))?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = run_scenario(scenario("desk", &[]), dir.path()).map_err(|e| e.to_string())?;
    let served: Vec<u8> = snap.image.decode().map_err(|e| e.to_string())?.iter().flat_map(|v| v.to_le_bytes()).collect();
    let cli = std::fs::read(dir.path().join("velocity_model.f32")).map_err(|e| e.to_string())?;
    check(
        snap.status == RunStatus::Finished && snap.round == manifest.rounds && served == cli,
        format!(
            "service finished after {} rounds, CLI after {}; final image bytes identical: {}",
            snap.round,
            manifest.rounds,
            served == cli
        ),
    )
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 9] = [
        ("distributed equals centralized", criterion_1),
        ("oracle solve", criterion_2),
        ("checkerboard recovery", criterion_3),
        ("picking accuracy", criterion_4),
        ("MMI localization", criterion_5),
        ("ANSI homogeneous recovery", criterion_6),
        ("Green's function emergence", criterion_7),
        ("determinism and fault tolerance", criterion_8),
        ("headless equivalence", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {}: PASS  {name}: {d} [{secs:.1} s]", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {d} [{secs:.1} s]", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
