use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::mesh::{Mesh, Point, PointLocation, Polygon};

/// Precomputed point locations of a fixed set of points on one mesh.
#[derive(Debug, Clone)]
pub struct PointProbe {
    locations: Vec<PointLocation>,
}

impl PointProbe {
    pub fn new(mesh: &Mesh, points: &[Point]) -> Result<Self> {
        let locations = points.iter().map(|&p| mesh.locate(p)).collect::<Result<Vec<_>>>()?;
        Ok(Self { locations })
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn sample(&self, mesh: &Mesh, field: &Vector) -> Vector {
        Vector::from_iterator(
            self.locations.len(),
            self.locations.iter().map(|loc| mesh.eval_at(field, loc)),
        )
    }
}

/// Noise stream of one sensor in one run. Streams are independent across
/// `(run, sensor)` and do not depend on how runs are scheduled.
pub fn sensor_rng(seed: u64, run: usize, sensor: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((run as u64) << 20) | sensor as u64);
    rng
}

/// `y[q-1][i]` is sensor `i` at sample `q = 1..=samples`, the truth at that
/// time plus Gaussian noise of standard deviation `sigma`.
pub fn sample_measurements(truth_at_sensors: &[Vector], sigma: f64, seed: u64, run: usize) -> Result<Vec<Vector>> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid("measurement noise must be nonnegative"));
    }
    let sensors = truth_at_sensors.first().map_or(0, Vector::len);
    let samples = truth_at_sensors.len().saturating_sub(1);
    let mut out: Vec<Vector> = truth_at_sensors[1..].to_vec();
    for i in 0..sensors {
        let mut rng = sensor_rng(seed, run, i);
        for y in out.iter_mut().take(samples) {
            let z: f64 = StandardNormal.sample(&mut rng);
            y[i] += sigma * z;
        }
    }
    Ok(out)
}

/// Cell-centred lattice with spacing `h`, clipped to the polygon.
pub fn evaluation_lattice(polygon: &Polygon, h: f64) -> Vec<Point> {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for c in &polygon.corners {
        x0 = x0.min(c[0]);
        x1 = x1.max(c[0]);
        y0 = y0.min(c[1]);
        y1 = y1.max(c[1]);
    }
    let nx = ((x1 - x0) / h).round() as usize;
    let ny = ((y1 - y0) / h).round() as usize;
    let mut points = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let p = [x0 + (i as f64 + 0.5) * h, y0 + (j as f64 + 0.5) * h];
            if polygon.contains(p) {
                points.push(p);
            }
        }
    }
    points
}

pub fn rmse(a: &Vector, b: &Vector) -> f64 {
    assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 0.0;
    }
    ((a - b).norm_squared() / a.len() as f64).sqrt()
}
