//! Straight-ray travel times through a checkerboard, compared with the
//! homogeneous background.

use seisnet::forward::{trace_ray, travel_time};
use seisnet::model::{Point, VelocityGrid};

fn main() -> seisnet::error::Result<()> {
    let background = VelocityGrid::uniform([2000.0, 2000.0], 100.0, 2000.0)?;
    let board = background.with_checkerboard(10.0, 4)?;
    let src = Point::new(50.0, 50.0);
    println!("{:>16} {:>10} {:>12} {:>12}", "receiver", "length m", "uniform s", "checker s");
    for (x, y) in [(1950.0, 50.0), (1950.0, 1950.0), (50.0, 1950.0), (1000.0, 1300.0), (730.0, 120.0)] {
        let rcv = Point::new(x, y);
        let ray = trace_ray(src, rcv, &board)?;
        println!(
            "{:>16} {:>10.1} {:>12.5} {:>12.5}",
            format!("({x}, {y})"),
            ray.length(),
            travel_time(&ray, &background),
            travel_time(&ray, &board)
        );
    }
    Ok(())
}
