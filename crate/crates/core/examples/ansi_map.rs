//! Ambient-noise phase velocity map from a lattice array.

use seisnet::run::Run;
use seisnet::scenario::Scenario;

fn main() -> seisnet::error::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/ansi.json");
    let scenario = Scenario::from_json(&std::fs::read_to_string(path)?)?;
    let truth = scenario.grid.background_velocity;
    let mut run = Run::new(scenario)?;
    let status = run.run_to_end();
    let image = run.image();
    let hits = image.hits.unwrap_or_default();
    let covered: Vec<f64> = image.values.iter().zip(&hits).filter(|(_, &h)| h > 0.0).map(|(v, _)| *v).collect();
    let mean = covered.iter().sum::<f64>() / covered.len().max(1) as f64;
    let m = run.metrics();
    println!("{status:?} after {} virtual sources", m["sources_done"]);
    println!("{} covered cells, mean {mean:.1} m/s (true {truth}), median error {:.2}%", covered.len(), 100.0 * m["median_relative_error"]);
    Ok(())
}
