//! Builds spherical classification grids at several resolutions, prints the
//! class counts and ring layout, and measures the closest pair of classes.
//!
//! Run with: `cargo run --release --example build_grid`

use ambiloc::grid::{angular_distance, DoaGrid, GridSpec};

fn main() -> ambiloc::Result<()> {
    for alpha in [90.0, 20.0, 10.0] {
        let grid = DoaGrid::build(GridSpec { alpha_deg: alpha })?;
        println!("alpha = {alpha:>4} deg  ->  C = {}", grid.len());
    }

    let grid = DoaGrid::build(GridSpec { alpha_deg: 20.0 })?;
    println!("\nring layout at alpha = 20 deg:");
    println!("{:>10} {:>8} {:>12}", "elev_deg", "classes", "first_index");
    for &(el, start, count) in grid.rings() {
        println!("{el:>10.2} {count:>8} {start:>12}");
    }

    let mut min_sep = f64::INFINITY;
    for i in 0..grid.len() {
        for j in (i + 1)..grid.len() {
            min_sep = min_sep.min(angular_distance(grid.direction(i), grid.direction(j)));
        }
    }
    println!("\nclosest pair of classes: {min_sep:.3} deg apart");
    println!("peak-extraction neighbor radius: {} deg", grid.neighbor_radius_deg());
    Ok(())
}
