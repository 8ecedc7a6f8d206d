//! Distributed travel-time tomography of a checkerboard, printed as a
//! character map of the velocity anomaly.

use seisnet::run::{Run, RunStatus};
use seisnet::scenario::Scenario;

fn main() -> seisnet::error::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/tomo_checkerboard.json");
    let scenario = Scenario::from_json(&std::fs::read_to_string(path)?)?;
    let background = scenario.grid.background_velocity;
    let mut run = Run::new(scenario)?;
    if run.run_to_end() != RunStatus::Finished {
        eprintln!("{}", run.message().unwrap_or("run failed"));
    }
    let image = run.image();
    let [nx, ny] = image.manifest.dims;
    for j in (0..ny).rev() {
        let row: String = (0..nx)
            .map(|i| {
                let dv = image.values[j * nx + i] / background - 1.0;
                match dv {
                    d if d > 0.03 => '#',
                    d if d > 0.0 => '+',
                    d if d > -0.03 => '-',
                    _ => ' ',
                }
            })
            .collect();
        println!("{row}");
    }
    let m = run.metrics();
    println!("checkerboard score {:.3}, {} rounds, rel err vs centralized {:.1e}", m["checkerboard_score"], run.round(), m["relative_error_vs_centralized"]);
    Ok(())
}
