use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mesh::{generate_mesh, perturb_interior, Mesh, Polygon, RobinTerm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// Square of side `width` minus its upper-right quadrant.
    LShape,
    Rectangle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub shape: Shape,
    pub width: f64,
    pub height: f64,
    /// Target longest edge of the filter mesh.
    pub edge: f64,
    /// Uniform displacement bound for interior vertices.
    #[serde(default)]
    pub jitter: f64,
    #[serde(default)]
    pub jitter_seed: u64,
    /// Uniform refinements from the filter mesh to the truth mesh.
    pub truth_refinements: usize,
}

impl DomainSpec {
    pub fn polygon(&self) -> Polygon {
        match self.shape {
            Shape::LShape => Polygon::l_shape(self.width),
            Shape::Rectangle => Polygon::rectangle(self.width, self.height),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Physics {
    pub diffusivity: f64,
    pub initial_temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sampling {
    /// Seconds between measurements.
    pub period: f64,
    pub samples: usize,
    /// Truth integration step in seconds.
    pub truth_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    /// Prediction step of the centralized filter.
    pub central_step: f64,
    /// Consensus rounds per sample, one distributed variant each.
    pub rounds: Vec<usize>,
    /// Total covariance boost per sampling interval.
    pub gamma: f64,
    pub process_std: f64,
    pub measurement_std: f64,
    pub initial_estimate: f64,
    pub initial_covariance: f64,
    pub overlap_layers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarlo {
    pub runs: usize,
    pub seed: u64,
    /// Trailing samples averaged for steady-state statistics.
    pub steady_window: usize,
    /// Samples at which field snapshots are written.
    #[serde(default)]
    pub snapshots: Vec<usize>,
    #[serde(default)]
    pub gamma_sweep: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundaryKind {
    Dirichlet { value: f64 },
    NeumannZero,
    Robin { nu: f64, external: f64 },
}

/// One boundary side held in one condition over samples `[from, to)`. The
/// condition governs the truth on the time interval `(from·T_s, to·T_s]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryEntry {
    pub label: String,
    #[serde(default)]
    pub from: usize,
    pub to: Option<usize>,
    #[serde(flatten)]
    pub kind: BoundaryKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub sensors: Vec<[f64; 2]>,
    /// Seed rectangles `[x0, x1, y0, y1]`, one per node.
    pub subdomains: Vec<[f64; 4]>,
    pub domain: DomainSpec,
    pub physics: Physics,
    pub sampling: Sampling,
    pub filter: FilterSpec,
    pub monte_carlo: MonteCarlo,
    pub boundary: Vec<BoundaryEntry>,
}

/// Line (1-based) of `key = …` inside `[section]` (or at top level when
/// `section` is empty).
fn key_line(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.starts_with('[') {
            current = t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            continue;
        }
        if current == section {
            if let Some(rest) = t.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

/// Line of the `index`-th `[[boundary]]` header.
fn boundary_line(text: &str, index: usize) -> Option<usize> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| l.trim() == "[[boundary]]")
        .nth(index)
        .map(|(i, _)| i + 1)
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

pub const PRESETS: &[(&str, &str)] = &[
    ("scenario1", include_str!("../../presets/scenario1.toml")),
    ("scenario2", include_str!("../../presets/scenario2.toml")),
];

impl Scenario {
    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::config(None, format!("unknown preset '{name}'")))?;
        Self::from_toml_str(text)
    }

    /// A preset name or a path to a TOML file.
    pub fn load(source: &str) -> Result<Self> {
        if PRESETS.iter().any(|(n, _)| *n == source) {
            return Self::preset(source);
        }
        Self::from_path(Path::new(source))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(None, format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of_offset(text, s.start));
            Error::config(line, e.message().trim().to_string())
        })?;
        scenario.validate(text)?;
        Ok(scenario)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// SHA-256 of the canonical serialization.
    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    fn validate(&self, text: &str) -> Result<()> {
        let fail = |section: &str, key: &str, msg: String| Err(Error::config(key_line(text, section, key), msg));
        let positive = [
            ("domain", "width", self.domain.width),
            ("domain", "height", self.domain.height),
            ("domain", "edge", self.domain.edge),
            ("physics", "diffusivity", self.physics.diffusivity),
            ("sampling", "period", self.sampling.period),
            ("sampling", "truth_step", self.sampling.truth_step),
            ("filter", "central_step", self.filter.central_step),
            ("filter", "process_std", self.filter.process_std),
            ("filter", "initial_covariance", self.filter.initial_covariance),
        ];
        for (section, key, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return fail(section, key, format!("{key} must be positive and finite, got {v}"));
            }
        }
        if !(self.filter.measurement_std >= 0.0) {
            return fail(
                "filter",
                "measurement_std",
                "measurement_std must be nonnegative".into(),
            );
        }
        if self.domain.shape == Shape::LShape && self.domain.width != self.domain.height {
            return fail("domain", "height", "an L-shaped domain needs width == height".into());
        }
        if !(self.domain.jitter >= 0.0) {
            return fail("domain", "jitter", "jitter must be nonnegative".into());
        }
        if self.sampling.samples == 0 {
            return fail("sampling", "samples", "samples must be at least 1".into());
        }
        for (key, step) in [
            ("truth_step", self.sampling.truth_step),
            ("central_step", self.filter.central_step),
        ] {
            let ratio = self.sampling.period / step;
            if (ratio - ratio.round()).abs() > 1e-9 * ratio {
                let section = if key == "truth_step" { "sampling" } else { "filter" };
                return fail(section, key, format!("{key} must divide the sampling period"));
            }
        }
        if self.filter.rounds.is_empty() || self.filter.rounds.contains(&0) {
            return fail(
                "filter",
                "rounds",
                "rounds must be a nonempty list of positive counts".into(),
            );
        }
        if !(self.filter.gamma >= 1.0) {
            return fail(
                "filter",
                "gamma",
                format!("gamma must be >= 1, got {}", self.filter.gamma),
            );
        }
        if self.filter.overlap_layers == 0 {
            return fail("filter", "overlap_layers", "overlap_layers must be at least 1".into());
        }
        if self.monte_carlo.runs == 0 {
            return fail("monte_carlo", "runs", "runs must be at least 1".into());
        }
        if self.monte_carlo.steady_window == 0 || self.monte_carlo.steady_window > self.sampling.samples {
            return fail(
                "monte_carlo",
                "steady_window",
                "steady_window must lie in 1..=samples".into(),
            );
        }
        if let Some(&bad) = self
            .monte_carlo
            .snapshots
            .iter()
            .find(|&&q| q == 0 || q > self.sampling.samples)
        {
            return fail(
                "monte_carlo",
                "snapshots",
                format!("snapshot sample {bad} outside 1..=samples"),
            );
        }
        if let Some(&g) = self.monte_carlo.gamma_sweep.iter().find(|&&g| !(g >= 1.0)) {
            return fail("monte_carlo", "gamma_sweep", format!("sweep value {g} is below 1"));
        }
        if self.sensors.is_empty() {
            return fail("", "sensors", "at least one sensor is required".into());
        }
        let polygon = self.domain.polygon();
        if let Some(s) = self.sensors.iter().find(|s| !polygon.contains(**s)) {
            return fail(
                "",
                "sensors",
                format!("sensor ({}, {}) lies outside the domain", s[0], s[1]),
            );
        }
        if self.subdomains.is_empty() {
            return fail("", "subdomains", "at least one subdomain is required".into());
        }
        self.validate_schedule(text, &polygon)
    }

    /// Every side must be covered exactly once at every sample interval.
    fn validate_schedule(&self, text: &str, polygon: &Polygon) -> Result<()> {
        let labels: Vec<&str> = polygon.labels.iter().map(String::as_str).collect();
        let samples = self.sampling.samples;
        let mut owner: Vec<Vec<Option<usize>>> = vec![vec![None; samples]; labels.len()];
        for (i, e) in self.boundary.iter().enumerate() {
            let line = boundary_line(text, i);
            let side = labels
                .iter()
                .position(|l| *l == e.label)
                .ok_or_else(|| Error::config(line, format!("unknown boundary label '{}'", e.label)))?;
            let to = e.to.unwrap_or(samples);
            if e.from >= to || to > samples {
                return Err(Error::config(
                    line,
                    format!("interval [{}, {to}) is empty or exceeds {samples} samples", e.from),
                ));
            }
            match e.kind {
                BoundaryKind::Dirichlet { value } if !value.is_finite() => {
                    return Err(Error::config(line, "dirichlet value must be finite"));
                }
                BoundaryKind::Robin { nu, external } if !(nu > 0.0) || !external.is_finite() => {
                    return Err(Error::config(line, "robin needs nu > 0 and a finite external value"));
                }
                _ => {}
            }
            for q in e.from..to {
                if let Some(prev) = owner[side][q] {
                    return Err(Error::config(
                        line,
                        format!(
                            "side '{}' at sample {q} is already set by boundary entry {}",
                            e.label,
                            prev + 1
                        ),
                    ));
                }
                owner[side][q] = Some(i);
            }
        }
        for (side, slots) in owner.iter().enumerate() {
            if let Some(q) = slots.iter().position(Option::is_none) {
                return Err(Error::config(
                    None,
                    format!(
                        "side '{}' has no boundary condition at sample interval {q}",
                        labels[side]
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn polygon(&self) -> Polygon {
        self.domain.polygon()
    }

    /// Filter mesh: structured triangulation, then the interior jitter.
    pub fn filter_mesh(&self) -> Result<Mesh> {
        let mesh = generate_mesh(&self.polygon(), self.domain.edge)?;
        if self.domain.jitter > 0.0 {
            perturb_interior(&mesh, self.domain.jitter, self.domain.jitter_seed)
        } else {
            Ok(mesh)
        }
    }

    /// Boundary conditions during sample interval `q` (time
    /// `(q·T_s, (q+1)·T_s]`), one per side.
    pub fn conditions_at(&self, q: usize) -> Vec<(&str, &BoundaryKind)> {
        self.boundary
            .iter()
            .filter(|e| e.from <= q && q < e.to.unwrap_or(self.sampling.samples))
            .map(|e| (e.label.as_str(), &e.kind))
            .collect()
    }

    /// Sample indices at which any boundary condition changes.
    pub fn switch_samples(&self) -> Vec<usize> {
        let mut out: Vec<usize> = (1..self.sampling.samples)
            .filter(|&q| self.conditions_at(q) != self.conditions_at(q - 1))
            .collect();
        out.dedup();
        out
    }

    pub fn steps_per_sample(&self, step: f64) -> usize {
        (self.sampling.period / step).round() as usize
    }
}

/// Robin terms of a set of active conditions.
pub fn robin_terms(conditions: &[(&str, &BoundaryKind)]) -> Vec<RobinTerm> {
    conditions
        .iter()
        .filter_map(|(label, kind)| match kind {
            BoundaryKind::Robin { nu, external } => Some(RobinTerm {
                label: label.to_string(),
                nu: *nu,
                external: *external,
            }),
            _ => None,
        })
        .collect()
}
