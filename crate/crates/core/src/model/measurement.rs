use crate::decomposition::Decomposition;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::mesh::{Mesh, Point, PointLocation};

/// Point sensors sampling the piecewise-linear field: row `i` of `c` holds the
/// barycentric weights of sensor `i` in its containing triangle.
#[derive(Debug, Clone)]
pub struct Measurement {
    pub sensors: Vec<Point>,
    pub locations: Vec<PointLocation>,
    pub c: Matrix,
}

impl Measurement {
    pub fn count(&self) -> usize {
        self.sensors.len()
    }

    /// Vertices with nonzero weight for sensor `i`.
    pub fn support(&self, mesh: &Mesh, i: usize) -> Vec<usize> {
        let tri = mesh.triangles[self.locations[i].triangle];
        (0..3)
            .filter(|&k| self.locations[i].weights[k] != 0.0)
            .map(|k| tri[k])
            .collect()
    }
}

pub fn build_measurement(mesh: &Mesh, sensors: &[Point]) -> Result<Measurement> {
    let mut c = Matrix::zeros(sensors.len(), mesh.vertex_count());
    let mut locations = Vec::with_capacity(sensors.len());
    for (i, &s) in sensors.iter().enumerate() {
        let loc = mesh
            .locate(s)
            .map_err(|_| Error::invalid(format!("sensor {i} at ({}, {}) lies outside the domain", s[0], s[1])))?;
        let tri = mesh.triangles[loc.triangle];
        for k in 0..3 {
            // Clamp round-off so rows are exactly nonnegative.
            let w = if loc.weights[k].abs() < 1e-14 {
                0.0
            } else {
                loc.weights[k]
            };
            c[(i, tri[k])] += w;
        }
        let sum: f64 = c.row(i).sum();
        for k in 0..3 {
            c[(i, tri[k])] /= sum;
        }
        locations.push(PointLocation {
            triangle: loc.triangle,
            weights: tri.map(|v| c[(i, v)]),
        });
    }
    Ok(Measurement {
        sensors: sensors.to_vec(),
        locations,
        c,
    })
}

/// Sensors read by one node and the local measurement matrix.
#[derive(Debug, Clone)]
pub struct NodeSensors {
    /// Indices into the global sensor list, ascending.
    pub sensors: Vec<usize>,
    pub c: Matrix,
}

/// A sensor belongs to every node whose internal set contains all vertices
/// carrying weight for that sensor; a sensor claimed by no node is an error.
pub fn assign_sensors(mesh: &Mesh, dec: &Decomposition, meas: &Measurement) -> Result<Vec<NodeSensors>> {
    let mut per_node: Vec<Vec<usize>> = vec![Vec::new(); dec.node_count()];
    for i in 0..meas.count() {
        let support = meas.support(mesh, i);
        let mut claimed = false;
        for (m, list) in per_node.iter_mut().enumerate() {
            if support.iter().all(|&v| dec.local_index(m, v).is_some()) {
                list.push(i);
                claimed = true;
            }
        }
        if !claimed {
            let s = meas.sensors[i];
            return Err(Error::SensorAssignment(format!(
                "sensor {i} at ({}, {}) is not internal to any subdomain",
                s[0], s[1]
            )));
        }
    }
    Ok(per_node
        .into_iter()
        .enumerate()
        .map(|(m, sensors)| {
            let mut c = Matrix::zeros(sensors.len(), dec.local_dim(m));
            for (r, &i) in sensors.iter().enumerate() {
                for v in meas.support(mesh, i) {
                    c[(r, dec.local_index(m, v).unwrap())] = meas.c[(i, v)];
                }
            }
            NodeSensors { sensors, c }
        })
        .collect())
}
