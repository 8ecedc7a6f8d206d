//! Solves one tomography system centrally and with each distributed
//! algorithm over the simulated mesh.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use seisnet::consensus::{run_distributed, Algorithm, ConsensusConfig, ConsensusProblem, StoppingRule};
use seisnet::forward::{trace_ray, travel_time};
use seisnet::model::{perimeter_stations, random_events, VelocityGrid};
use seisnet::netsim::{build_topology, Network};
use seisnet::signal::{Pick, PickMethod};
use seisnet::tomo::{assemble_system, solve_centralized, EventPicks};

fn main() -> seisnet::error::Result<()> {
    let extent = [2000.0, 2000.0];
    let truth = VelocityGrid::uniform(extent, 100.0, 2000.0)?.with_checkerboard(10.0, 5)?;
    let inversion = VelocityGrid::uniform(extent, 250.0, 2000.0)?;
    let stations = perimeter_stations(extent, 16, 4)?;
    let events = random_events(extent, 30, 100.0, [0.0, 1.0], &mut ChaCha8Rng::seed_from_u64(7))?;
    let mut picked = Vec::new();
    for e in &events {
        let mut picks = Vec::new();
        for s in &stations {
            let t = travel_time(&trace_ray(e.hypocenter, s.position, &truth)?, &truth);
            picks.push(Pick { station_id: s.id, arrival_time: e.origin_time + t, method: PickMethod::StaLta, quality: 1.0 });
        }
        picked.push(EventPicks { event: *e, picks });
    }
    let system = assemble_system(&picked, &stations, &inversion, None)?;
    let reference = solve_centralized(&system)?;
    let norm = reference.slowness.iter().map(|s| s * s).sum::<f64>().sqrt();
    println!("{} rays, {} cells, lambda {:.1}", system.rows(), system.cells(), system.lambda);

    let nodes: Vec<u32> = stations.iter().map(|s| s.id).collect();
    for algorithm in Algorithm::ALL {
        let problem = ConsensusProblem::by_station(&system, &nodes)?;
        let mut net = Network::new(build_topology(&stations, 800.0)?, 1);
        let config = ConsensusConfig { algorithm, ..Default::default() };
        let out = run_distributed(problem, &config, &mut net, &StoppingRule::default(), 1)?;
        let diff: f64 =
            out.model.slowness.iter().zip(&reference.slowness).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        println!(
            "{:<16} {:>6} rounds  rel err {:.1e}  {:>8} msgs  {:>10} bytes",
            algorithm.as_str(),
            out.rounds,
            diff / norm,
            out.net.sent,
            out.net.total_bytes
        );
    }
    Ok(())
}
