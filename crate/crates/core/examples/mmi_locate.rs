//! Locates a source by in-network migration imaging, then again after a
//! second, stronger event is injected.

use seisnet::run::{Command, Run};
use seisnet::scenario::Scenario;

fn main() -> seisnet::error::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/mmi.json");
    let mut run = Run::new(Scenario::from_json(&std::fs::read_to_string(path)?)?)?;
    run.run_to_end();
    report(&run);
    run.submit(Command::InjectEvent { x: 1010.0, y: 630.0, origin_time: None, magnitude_scale: Some(4.0) })?;
    run.run_to_end();
    report(&run);
    Ok(())
}

fn report(run: &Run) {
    let m = run.metrics();
    let s = run.network().stats();
    println!(
        "{:?}: peak at ({:.0}, {:.0}), {} clusters, {} bytes relayed",
        run.status(),
        m["located_x"],
        m["located_y"],
        m["clusters_done"],
        s.total_bytes
    );
}
