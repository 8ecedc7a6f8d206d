//! Picks a noisy synthetic arrival with STA/LTA, then refines it with AIC
//! inside a window around the trigger, before and after a bandpass. The
//! synthetic arrival time is the wavelet centre; AIC marks the onset, which
//! comes earlier by roughly half a wavelet period.

use seisnet::forward::{synthesize_trace, SynthParams};
use seisnet::model::{Point, SeismicEvent, Station, VelocityGrid};
use seisnet::signal::{bandpass, pick_arrival, PickMethod, PickParams};

fn main() -> seisnet::error::Result<()> {
    let grid = VelocityGrid::uniform([2000.0, 2000.0], 100.0, 2000.0)?;
    let station = Station { id: 0, position: Point::new(1700.0, 400.0), cluster_id: 0 };
    let event = SeismicEvent { id: 1, hypocenter: Point::new(600.0, 1300.0), origin_time: 0.5, magnitude_scale: 1.0 };
    let truth = event.origin_time + event.hypocenter.distance(station.position) / grid.background();
    let params = SynthParams { snr: Some(5.0), duration: 2.5, ..Default::default() };
    let raw = synthesize_trace(&event, &station, &grid, &params, 42)?;
    let filtered = bandpass(&raw, 5.0, 40.0, 4)?;
    println!("true arrival {truth:.4} s");
    for (label, trace) in [("raw", &raw), ("bandpassed", &filtered)] {
        let Some(trigger) = pick_arrival(trace, PickMethod::StaLta, &PickParams::default())? else {
            println!("{label:>10}: no trigger");
            continue;
        };
        let t = trigger.arrival_time;
        let window = PickParams { aic_window: Some((t - 0.15, t + 0.05)), ..Default::default() };
        let refined = pick_arrival(trace, PickMethod::Aic, &window)?.expect("AIC always picks");
        for p in [trigger, refined] {
            println!(
                "{label:>10} {:?}: {:.4} s ({:+.1} samples)",
                p.method,
                p.arrival_time,
                (p.arrival_time - truth) * trace.sampling_rate
            );
        }
    }
    Ok(())
}
