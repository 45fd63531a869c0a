//! Histogram baseline: localization from pseudointensity statistics alone,
//! with no trained parameters.
//!
//! Every time-frequency cell of the intensity features votes for the grid
//! class nearest to its active-intensity direction. Votes are weighted by
//! the cell's direct-to-total power ratio raised to an exponent, so cells
//! dominated by a single coherent source count for much more than diffuse
//! or mixed cells. Peaks of the (optionally neighbor-smoothed) histogram
//! are the estimated sources.

use crate::error::{Error, Result};
use crate::grid::{extract_peaks, Direction, DoaGrid};
use crate::nn::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrampConfig {
    /// Exponent on the per-cell direct-to-total power ratio.
    pub exponent: f64,
    /// Average each class with its grid neighbours before peak picking.
    pub smooth: bool,
    /// Cells whose active-intensity norm falls below this are ignored.
    pub min_norm: f64,
}

impl Default for TrampConfig {
    fn default() -> Self {
        TrampConfig {
            exponent: 2.0,
            smooth: true,
            min_norm: 1e-9,
        }
    }
}

/// Direction and vote weight of one feature cell (`[ax, ay, az, rx, ry,
/// rz]` layout). The active intensity here is already normalized by total
/// power, so its norm doubles as the direct-to-total ratio estimate (a
/// plane wave reaches sqrt(3)/2); `None` for cells with no usable active
/// component.
pub fn pseudointensity_doa(cell: &[f64], config: &TrampConfig) -> Option<(Direction, f64)> {
    let (ax, ay, az) = (cell[0], cell[1], cell[2]);
    let norm = (ax * ax + ay * ay + az * az).sqrt();
    if norm < config.min_norm {
        return None;
    }
    let dir = Direction::from_vector([ax, ay, az]);
    // Rescale so a perfectly coherent plane-wave cell weighs 1.0.
    let ratio = norm * 2.0 / 3f64.sqrt();
    Some((dir, ratio.powf(config.exponent)))
}

/// Accumulates the weighted class histogram of a `[frames, bins, 6]`
/// feature tensor, normalized so the strongest class is 1 (all zeros if no
/// cell votes).
pub fn tramp_histogram(features: &Tensor, grid: &DoaGrid, config: &TrampConfig) -> Result<Vec<f64>> {
    let [_, _, ch] = *features.shape() else {
        return Err(Error::shape(format!(
            "expected [frames, bins, 6] features, got {:?}",
            features.shape()
        )));
    };
    if ch != 6 {
        return Err(Error::shape(format!("expected 6 feature channels, got {ch}")));
    }
    let mut hist = vec![0.0; grid.len()];
    for cell in features.data().chunks_exact(6) {
        let (ax, ay, az) = (cell[0], cell[1], cell[2]);
        let norm = (ax * ax + ay * ay + az * az).sqrt();
        if norm < config.min_norm {
            continue;
        }
        let unit = [ax / norm, ay / norm, az / norm];
        let class = grid.nearest_class_to_unit(unit);
        let ratio = norm * 2.0 / 3f64.sqrt();
        hist[class] += ratio.powf(config.exponent);
    }
    let mut hist = if config.smooth {
        smooth_histogram(&hist, grid)
    } else {
        hist
    };
    let max = hist.iter().cloned().fold(0.0f64, f64::max);
    if max > 0.0 {
        for v in hist.iter_mut() {
            *v /= max;
        }
    }
    Ok(hist)
}

/// Adds half of each neighbour's value (radius 1.5x the grid spacing) to
/// every class. The self weight of 1 exceeds the neighbour weight, so an
/// isolated spike keeps its location while ridges between nearby classes
/// fill in.
pub fn smooth_histogram(hist: &[f64], grid: &DoaGrid) -> Vec<f64> {
    let radius = grid.neighbor_radius_deg();
    (0..hist.len())
        .map(|c| {
            let ns = grid.neighbors(c, radius);
            hist[c] + 0.5 * ns.iter().map(|n| hist[*n]).sum::<f64>()
        })
        .collect()
}

/// Full baseline: histogram, peak picking, class centres as estimates.
pub fn tramp_localize(
    features: &Tensor,
    grid: &DoaGrid,
    config: &TrampConfig,
    n_sources: usize,
) -> Result<Vec<Direction>> {
    let hist = tramp_histogram(features, grid, config)?;
    let peaks = extract_peaks(grid, &hist, n_sources)?;
    Ok(peaks.into_iter().map(|c| grid.direction(c)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{angular_distance, GridSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Features of an ideal plane wave from `u`: active part (sqrt(3)/2) u,
    /// reactive part zero.
    fn plane_wave_features(cells: usize, u: [f64; 3]) -> Vec<f64> {
        let s = 3f64.sqrt() / 2.0;
        let mut out = Vec::with_capacity(cells * 6);
        for _ in 0..cells {
            out.extend_from_slice(&[s * u[0], s * u[1], s * u[2], 0.0, 0.0, 0.0]);
        }
        out
    }

    fn features_from(cells: Vec<f64>) -> Tensor {
        let n = cells.len() / 6;
        Tensor::from_vec(&[1, n, 6], cells).unwrap()
    }

    #[test]
    fn pseudointensity_recovers_direction_and_unit_weight() {
        let d = Direction::new(40.0, -25.0);
        let u = d.unit_vector();
        let s = 3f64.sqrt() / 2.0;
        let cell = [s * u[0], s * u[1], s * u[2], 0.1, 0.0, 0.0];
        let (dir, w) = pseudointensity_doa(&cell, &TrampConfig::default()).unwrap();
        assert!(angular_distance(dir, d) < 1e-9);
        assert!((w - 1.0).abs() < 1e-12, "plane-wave weight {w}");
        assert!(pseudointensity_doa(&[0.0; 6], &TrampConfig::default()).is_none());
    }

    #[test]
    fn single_plane_wave_is_localized_exactly() {
        let grid = DoaGrid::build(GridSpec::default()).unwrap();
        let target = grid.direction(217);
        let feats = features_from(plane_wave_features(50, target.unit_vector()));
        let est = tramp_localize(&feats, &grid, &TrampConfig::default(), 1).unwrap();
        assert_eq!(est.len(), 1);
        assert!(angular_distance(est[0], target) < 1e-6);
    }

    #[test]
    fn two_separated_sources_are_both_found() {
        let grid = DoaGrid::build(GridSpec::default()).unwrap();
        let a = Direction::new(30.0, 10.0);
        let b = Direction::new(-140.0, -35.0);
        let mut cells = plane_wave_features(40, a.unit_vector());
        cells.extend(plane_wave_features(30, b.unit_vector()));
        let est = tramp_localize(&features_from(cells), &grid, &TrampConfig::default(), 2)
            .unwrap();
        assert_eq!(est.len(), 2);
        let err_a = est
            .iter()
            .map(|e| angular_distance(*e, a))
            .fold(f64::INFINITY, f64::min);
        let err_b = est
            .iter()
            .map(|e| angular_distance(*e, b))
            .fold(f64::INFINITY, f64::min);
        assert!(err_a <= grid.alpha_deg());
        assert!(err_b <= grid.alpha_deg());
    }

    #[test]
    fn exponent_suppresses_weak_diffuse_votes() {
        // 30 coherent cells against 90 weak cells pointing elsewhere: with
        // the squared ratio weighting the coherent direction must win.
        let grid = DoaGrid::build(GridSpec::default()).unwrap();
        let strong = Direction::new(60.0, 0.0);
        let weak = Direction::new(-60.0, 0.0);
        let s = 3f64.sqrt() / 2.0;
        let mut cells = plane_wave_features(30, strong.unit_vector());
        let wu = weak.unit_vector();
        for _ in 0..90 {
            cells.extend_from_slice(&[
                0.3 * s * wu[0],
                0.3 * s * wu[1],
                0.3 * s * wu[2],
                0.0,
                0.0,
                0.0,
            ]);
        }
        let cfg = TrampConfig {
            smooth: false,
            ..TrampConfig::default()
        };
        let est = tramp_localize(&features_from(cells), &grid, &cfg, 1).unwrap();
        assert!(angular_distance(est[0], strong) < grid.alpha_deg());
    }

    #[test]
    fn diffuse_field_spreads_but_planar_field_concentrates() {
        let grid = DoaGrid::build(GridSpec::default()).unwrap();
        let cfg = TrampConfig {
            smooth: false,
            ..TrampConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut diffuse = Vec::new();
        let s = 3f64.sqrt() / 2.0;
        for _ in 0..4000 {
            // Uniform direction on the sphere.
            let z: f64 = rng.random_range(-1.0..1.0);
            let az: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let r = (1.0 - z * z).sqrt();
            diffuse.extend_from_slice(&[
                s * r * az.cos(),
                s * r * az.sin(),
                s * z,
                0.0,
                0.0,
                0.0,
            ]);
        }
        let h_diffuse = tramp_histogram(&features_from(diffuse), &grid, &cfg).unwrap();
        let planar =
            tramp_histogram(&features_from(plane_wave_features(4000, [1.0, 0.0, 0.0])), &grid, &cfg)
                .unwrap();
        let concentration = |h: &[f64]| {
            let total: f64 = h.iter().sum();
            h.iter().cloned().fold(0.0f64, f64::max) / (total / h.len() as f64)
        };
        let c_planar = concentration(&planar);
        let c_diffuse = concentration(&h_diffuse);
        // The planar field puts everything in one class (ratio = C); the
        // diffuse field stays within a small multiple of uniform.
        assert!(c_planar > 400.0, "planar concentration {c_planar}");
        assert!(c_diffuse < 10.0, "diffuse concentration {c_diffuse}");
    }

    #[test]
    fn smoothing_spreads_a_spike_to_neighbours() {
        let grid = DoaGrid::build(GridSpec::default()).unwrap();
        let mut hist = vec![0.0; grid.len()];
        hist[100] = 1.0;
        let smoothed = smooth_histogram(&hist, &grid);
        let neighbours = grid.neighbors(100, grid.neighbor_radius_deg());
        // The spike itself stays the maximum; neighbours get half.
        assert_eq!(smoothed[100], 1.0);
        for n in &neighbours {
            assert_eq!(smoothed[*n], 0.5);
        }
        // Far-away classes stay zero.
        assert_eq!(smoothed[0], 0.0);
    }

    #[test]
    fn histogram_checks_shape() {
        let grid = DoaGrid::build(GridSpec { alpha_deg: 90.0 }).unwrap();
        let bad = Tensor::zeros(&[3, 4, 5]);
        assert!(tramp_histogram(&bad, &grid, &TrampConfig::default()).is_err());
    }

    #[test]
    fn silent_input_yields_empty_histogram() {
        let grid = DoaGrid::build(GridSpec { alpha_deg: 90.0 }).unwrap();
        let feats = Tensor::zeros(&[2, 3, 6]);
        let hist = tramp_histogram(&feats, &grid, &TrampConfig::default()).unwrap();
        assert!(hist.iter().all(|v| *v == 0.0));
    }
}
