//! Relays a payload across a lossy mesh, then again around a failed link.

use seisnet::model::perimeter_stations;
use seisnet::netsim::{build_topology, Network, PayloadKind};

fn main() -> seisnet::error::Result<()> {
    let stations = perimeter_stations([2000.0, 2000.0], 16, 4)?;
    let topology = build_topology(&stations, 800.0)?.with_drop_prob(0.2)?;
    println!("{} nodes, {} links", topology.nodes().len(), topology.edges().len());
    let mut net = Network::new(topology, 3);

    let payload: Vec<f64> = (0..64).map(f64::from).collect();
    println!("route 0 -> 8: {:?}", net.route(0, 8)?);
    let got = net.relay(0, 8, PayloadKind::Aggregate, 1, payload.clone(), 50)?;
    assert_eq!(got, payload);
    report(&net);

    let path = net.route(0, 8)?;
    net.fail_link(path[0], path[1])?;
    println!("failed {}-{}; route 0 -> 8: {:?}", path[0], path[1], net.route(0, 8)?);
    net.relay(0, 8, PayloadKind::Aggregate, 2, payload, 50)?;
    report(&net);
    Ok(())
}

fn report(net: &Network) {
    let s = net.stats();
    println!(
        "  t={:.4} s  sent {}  delivered {}  dropped {} ({:.1}%)  bytes {}",
        s.sim_time,
        s.sent,
        s.delivered,
        s.dropped,
        100.0 * s.dropped as f64 / s.sent as f64,
        s.total_bytes
    );
}
