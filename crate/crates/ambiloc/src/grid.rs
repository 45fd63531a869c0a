//! Quasi-uniform spherical grid of candidate source directions.
//!
//! Directions are grouped into elevation rings spaced roughly `alpha`
//! degrees apart; each ring carries a number of azimuths proportional to its
//! circumference, so class density stays close to uniform over the sphere.
//! Classes are ordered ring by ring from the south pole upward, and within a
//! ring by increasing azimuth starting at -180 degrees.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// A direction of arrival in degrees: azimuth in [-180, 180) measured
/// counterclockwise from +x, elevation in [-90, 90] from the horizontal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub az_deg: f64,
    pub el_deg: f64,
}

impl Direction {
    pub fn new(az_deg: f64, el_deg: f64) -> Self {
        Direction { az_deg, el_deg }
    }

    /// Unit vector with x toward (az 0, el 0), y toward az +90, z up.
    pub fn unit_vector(&self) -> [f64; 3] {
        let az = self.az_deg.to_radians();
        let el = self.el_deg.to_radians();
        [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()]
    }

    /// Direction of an arbitrary nonzero vector.
    pub fn from_vector(v: [f64; 3]) -> Self {
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let el = (v[2] / norm).clamp(-1.0, 1.0).asin().to_degrees();
        let az = v[1].atan2(v[0]).to_degrees();
        Direction {
            az_deg: az,
            el_deg: el,
        }
    }
}

/// Great-circle angle between two directions, in degrees.
pub fn angular_distance(a: Direction, b: Direction) -> f64 {
    let ua = a.unit_vector();
    let ub = b.unit_vector();
    let dot = (ua[0] * ub[0] + ua[1] * ub[1] + ua[2] * ub[2]).clamp(-1.0, 1.0);
    dot.acos().to_degrees()
}

/// Grid resolution: target angular spacing between neighbouring classes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub alpha_deg: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { alpha_deg: 10.0 }
    }
}

/// The full class grid: one candidate [`Direction`] per class.
#[derive(Clone, Debug)]
pub struct DoaGrid {
    alpha_deg: f64,
    classes: Vec<Direction>,
    /// Cached unit vectors of `classes`, used for fast nearest lookups.
    units: Vec<[f64; 3]>,
    /// (elevation, first class index, ring length) per elevation ring.
    rings: Vec<(f64, usize, usize)>,
}

impl DoaGrid {
    pub fn build(spec: GridSpec) -> Result<Self> {
        let alpha = spec.alpha_deg;
        if !(alpha > 0.0 && alpha <= 180.0) {
            return Err(Error::config(format!(
                "grid spacing must be in (0, 180] degrees, got {alpha}"
            )));
        }
        let n_rings = (180.0 / alpha).floor() as usize;
        let mut classes = Vec::new();
        let mut rings = Vec::with_capacity(n_rings + 1);
        for i in 0..=n_rings {
            let el = -90.0 + (i as f64 / n_rings as f64) * 180.0;
            let max_j = ((360.0 / alpha) * el.to_radians().cos()).round().max(0.0) as usize;
            let start = classes.len();
            for j in 0..=max_j {
                let az = -180.0 + (j as f64 / (max_j + 1) as f64) * 360.0;
                classes.push(Direction::new(az, el));
            }
            rings.push((el, start, max_j + 1));
        }
        let units = classes.iter().map(Direction::unit_vector).collect();
        Ok(DoaGrid {
            alpha_deg: alpha,
            classes,
            units,
            rings,
        })
    }

    pub fn alpha_deg(&self) -> f64 {
        self.alpha_deg
    }

    /// Number of classes C.
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[Direction] {
        &self.classes
    }

    pub fn direction(&self, class: usize) -> Direction {
        self.classes[class]
    }

    /// Elevation rings as (elevation, first class index, length).
    pub fn rings(&self) -> &[(f64, usize, usize)] {
        &self.rings
    }

    /// Index of the class closest to `dir`; ties resolve to the lowest index.
    pub fn nearest_class(&self, dir: Direction) -> usize {
        self.nearest_class_to_unit(dir.unit_vector())
    }

    /// Nearest class to a unit vector: the class whose cached unit vector
    /// has the largest dot product (the angle is monotone in the dot
    /// product, so this agrees with [`DoaGrid::nearest_class`]).
    pub fn nearest_class_to_unit(&self, u: [f64; 3]) -> usize {
        let mut best = 0usize;
        let mut best_dot = f64::NEG_INFINITY;
        for (c, cu) in self.units.iter().enumerate() {
            let d = u[0] * cu[0] + u[1] * cu[1] + u[2] * cu[2];
            if d > best_dot {
                best_dot = d;
                best = c;
            }
        }
        best
    }

    /// Classes strictly other than `class` within `radius_deg` of it,
    /// in index order.
    pub fn neighbors(&self, class: usize, radius_deg: f64) -> Vec<usize> {
        let center = self.classes[class];
        self.classes
            .iter()
            .enumerate()
            .filter(|(c, d)| *c != class && angular_distance(center, **d) <= radius_deg)
            .map(|(c, _)| c)
            .collect()
    }

    /// Default suppression/smoothing radius: 1.5 times the grid spacing.
    pub fn neighbor_radius_deg(&self) -> f64 {
        1.5 * self.alpha_deg
    }
}

/// Multi-hot target over the grid: 1.0 at the nearest class of every source
/// direction, 0.0 elsewhere.
pub fn encode_target(grid: &DoaGrid, doas: &[Direction]) -> Tensor {
    let mut t = Tensor::zeros(&[grid.len()]);
    for dir in doas {
        let c = grid.nearest_class(*dir);
        t.data_mut()[c] = 1.0;
    }
    t
}

/// Picks `n_sources` classes from per-class scores by repeatedly taking the
/// highest-scoring class and masking it together with every class within the
/// grid's suppression radius. Ties resolve to the lowest class index.
pub fn extract_peaks(grid: &DoaGrid, scores: &[f64], n_sources: usize) -> Result<Vec<usize>> {
    if scores.len() != grid.len() {
        return Err(Error::shape(format!(
            "expected {} scores (one per class), got {}",
            grid.len(),
            scores.len()
        )));
    }
    let radius = grid.neighbor_radius_deg();
    let mut masked = vec![false; scores.len()];
    let mut peaks = Vec::with_capacity(n_sources);
    for _ in 0..n_sources.min(scores.len()) {
        let mut best: Option<usize> = None;
        for (c, s) in scores.iter().enumerate() {
            if masked[c] {
                continue;
            }
            match best {
                Some(b) if scores[b] >= *s => {}
                _ => best = Some(c),
            }
        }
        let Some(peak) = best else { break };
        peaks.push(peak);
        masked[peak] = true;
        for n in grid.neighbors(peak, radius) {
            masked[n] = true;
        }
    }
    Ok(peaks)
}
