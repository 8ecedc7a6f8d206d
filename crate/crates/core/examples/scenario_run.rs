//! Runs any scenario file to completion and prints its metrics.
//!
//! ```text
//! cargo run --example scenario_run -- scenarios/mmi.json
//! ```

use seisnet::run::Run;
use seisnet::scenario::Scenario;

fn main() -> seisnet::error::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "scenarios/desk.json".into());
    let scenario = Scenario::from_json(&std::fs::read_to_string(&path)?)?;
    let mut run = Run::new(scenario)?;
    let status = run.run_to_end();
    println!("{path}: {status:?} after {} rounds", run.round());
    if let Some(m) = run.message() {
        println!("  {m}");
    }
    for (k, v) in run.metrics() {
        println!("  {k:<32} {v:.6}");
    }
    let s = run.network().stats();
    println!("  {} messages, {} dropped, {} bytes, {:.3} s simulated", s.sent, s.dropped, s.total_bytes, s.sim_time);
    Ok(())
}
