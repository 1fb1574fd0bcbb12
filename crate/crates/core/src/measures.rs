//! State-space types: label spaces, probability vectors over labels, agent
//! states, empirical measures, and weighted spatial atom sets.

use crate::error::{Error, Result};
use crate::fmt_f64;

/// Tolerance under which a probability vector is renormalized instead of
/// rejected. Absorbs integrator round-off without hiding real bugs.
pub const SIMPLEX_SUM_TOL: f64 = 1e-9;
const SIMPLEX_NEG_TOL: f64 = 1e-9;

/// Finite label set embedded on the real line.
///
/// Labels are indexed `0..H`; the ground distance between two labels is the
/// Euclidean distance of their coordinates. `line(h)` places labels at
/// `0, 1, ..., H-1` (integer index distance); quadrature discretizations of a
/// continuum label interval use midpoint coordinates instead.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSpace {
    coords: Vec<f64>,
}

impl LabelSpace {
    pub fn line(count: usize) -> Self {
        assert!(count >= 1, "label space needs at least one label");
        LabelSpace {
            coords: (0..count).map(|h| h as f64).collect(),
        }
    }

    /// Labels at explicit coordinates; must be strictly increasing.
    pub fn from_coords(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidArgument("empty label space".into()));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("label coordinates".into()));
        }
        if coords.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "label coordinates must be strictly increasing".into(),
            ));
        }
        Ok(LabelSpace { coords })
    }

    pub fn count(&self) -> usize {
        self.coords.len()
    }

    pub fn coord(&self, h: usize) -> f64 {
        self.coords[h]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dist(&self, h: usize, k: usize) -> f64 {
        (self.coords[h] - self.coords[k]).abs()
    }

    /// Smallest distance between distinct labels (adjacent, since the space
    /// sits on a line). Returns `None` for a single label.
    pub fn min_gap(&self) -> Option<f64> {
        if self.coords.len() < 2 {
            None
        } else {
            self.coords
                .windows(2)
                .map(|w| w[1] - w[0])
                .fold(None, |acc: Option<f64>, g| {
                    Some(acc.map_or(g, |a| a.min(g)))
                })
        }
    }
}

/// Probability vector over the labels: entries nonnegative, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexVector {
    weights: Vec<f64>,
}

impl SimplexVector {
    /// Validates and renormalizes. Entries in `[-1e-9, 0)` are clamped to
    /// zero; a total within `1e-9` of one is rescaled to sum to one exactly.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Simplex("empty weight vector".into()));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("simplex weights".into()));
        }
        let mut weights = weights;
        for w in &mut weights {
            if *w < 0.0 {
                if *w < -SIMPLEX_NEG_TOL {
                    return Err(Error::Simplex(format!("negative entry {w}")));
                }
                *w = 0.0;
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_SUM_TOL {
            return Err(Error::Simplex(format!("weights sum to {sum}")));
        }
        for w in &mut weights {
            *w /= sum;
        }
        Ok(SimplexVector { weights })
    }

    pub fn uniform(count: usize) -> Self {
        assert!(count >= 1);
        SimplexVector {
            weights: vec![1.0 / count as f64; count],
        }
    }

    /// Point mass on label `h`.
    pub fn delta(h: usize, count: usize) -> Self {
        assert!(h < count);
        let mut weights = vec![0.0; count];
        weights[h] = 1.0;
        SimplexVector { weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn get(&self, h: usize) -> f64 {
        self.weights[h]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Signed difference `self - other`, an element of the space of signed
    /// measures on the label set (total mass zero up to round-off).
    pub fn diff(&self, other: &SimplexVector) -> SignedLabelMeasure {
        assert_eq!(self.len(), other.len());
        SignedLabelMeasure::new(
            self.weights
                .iter()
                .zip(&other.weights)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    pub fn as_signed(&self) -> SignedLabelMeasure {
        SignedLabelMeasure::new(self.weights.clone())
    }
}

/// Signed measure on the finite label set; no constraint beyond finiteness.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedLabelMeasure {
    values: Vec<f64>,
}

impl SignedLabelMeasure {
    pub fn new(values: Vec<f64>) -> Self {
        SignedLabelMeasure { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, h: usize) -> f64 {
        self.values[h]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn scale(&self, s: f64) -> Self {
        SignedLabelMeasure::new(self.values.iter().map(|v| v * s).collect())
    }
}

/// One agent: a position in `R^d` and a probability vector over the labels.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub x: Vec<f64>,
    pub lambda: SimplexVector,
}

impl AgentState {
    pub fn new(x: Vec<f64>, lambda: SimplexVector) -> Result<Self> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("agent position".into()));
        }
        Ok(AgentState { x, lambda })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn position_norm(&self) -> f64 {
        euclidean_norm(&self.x)
    }
}

pub fn euclidean_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn euclidean_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

/// Uniformly weighted atomic measure carried by N agents.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    agents: Vec<AgentState>,
}

impl EmpiricalMeasure {
    pub fn new(agents: Vec<AgentState>) -> Result<Self> {
        if agents.is_empty() {
            return Err(Error::InvalidArgument(
                "empirical measure needs at least one agent".into(),
            ));
        }
        let d = agents[0].dim();
        let h = agents[0].lambda.len();
        for a in &agents {
            if a.dim() != d || a.lambda.len() != h {
                return Err(Error::Dimension(
                    "agents disagree on spatial dimension or label count".into(),
                ));
            }
        }
        Ok(EmpiricalMeasure { agents })
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.agents[0].dim()
    }

    pub fn label_count(&self) -> usize {
        self.agents[0].lambda.len()
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn agent(&self, i: usize) -> &AgentState {
        &self.agents[i]
    }

    /// Uniform atom weight `1/N`.
    pub fn atom_weight(&self) -> f64 {
        1.0 / self.agents.len() as f64
    }

    /// Spatial distribution of the sub-population with label `h`: an atom at
    /// each agent position with weight `lambda_h / N`. The masses of all
    /// label marginals sum to one.
    pub fn label_marginal(&self, h: usize) -> DiscreteSpatialMeasure {
        let w = self.atom_weight();
        let points = self.agents.iter().map(|a| a.x.clone()).collect();
        let weights = self.agents.iter().map(|a| a.lambda.get(h) * w).collect();
        DiscreteSpatialMeasure::new(points, weights).expect("marginal weights are nonnegative")
    }

    pub fn all_marginals(&self) -> Vec<DiscreteSpatialMeasure> {
        (0..self.label_count())
            .map(|h| self.label_marginal(h))
            .collect()
    }

    /// First `n` agents as a measure of their own. Panics if `n` is zero or
    /// exceeds the agent count.
    pub fn prefix(&self, n: usize) -> EmpiricalMeasure {
        assert!(n >= 1 && n <= self.agents.len());
        EmpiricalMeasure {
            agents: self.agents[..n].to_vec(),
        }
    }

    /// CSV with one row per agent: `x_1..x_d` then `lambda_1..lambda_H`.
    pub fn to_csv(&self) -> String {
        let d = self.dim();
        let h = self.label_count();
        let mut out = String::new();
        for i in 0..d {
            out.push_str(&format!("x_{}{}", i + 1, ","));
        }
        for k in 0..h {
            out.push_str(&format!("lambda_{}", k + 1));
            out.push(if k + 1 == h { '\n' } else { ',' });
        }
        for a in &self.agents {
            let row: Vec<String> = a
                .x
                .iter()
                .chain(a.lambda.weights())
                .map(|v| fmt_f64(*v))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidArgument("empty CSV".into()))?;
        let d = header.split(',').filter(|c| c.starts_with("x_")).count();
        let h = header
            .split(',')
            .filter(|c| c.starts_with("lambda_"))
            .count();
        if d == 0 || h == 0 {
            return Err(Error::InvalidArgument("malformed CSV header".into()));
        }
        let mut agents = Vec::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|c| {
                    c.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::InvalidArgument(format!("bad float {c:?}: {e}")))
                })
                .collect::<Result<_>>()?;
            if vals.len() != d + h {
                return Err(Error::InvalidArgument("row width mismatch".into()));
            }
            agents.push(AgentState::new(
                vals[..d].to_vec(),
                SimplexVector::new(vals[d..].to_vec())?,
            )?);
        }
        EmpiricalMeasure::new(agents)
    }
}

/// Finite nonnegative atomic measure on `R^d`; masses need not sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSpatialMeasure {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl DiscreteSpatialMeasure {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::Dimension("points/weights length mismatch".into()));
        }
        if let Some(first) = points.first() {
            let d = first.len();
            if points.iter().any(|p| p.len() != d) {
                return Err(Error::Dimension("atoms disagree on dimension".into()));
            }
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument(
                "atom weights must be finite and nonnegative".into(),
            ));
        }
        Ok(DiscreteSpatialMeasure { points, weights })
    }

    /// The zero measure (empty support).
    pub fn empty() -> Self {
        DiscreteSpatialMeasure {
            points: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// First moment `∫ |x| dμ`.
    pub fn first_moment(&self) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| euclidean_norm(p) * w)
            .sum()
    }

    /// CSV with one row per atom: `x_1..x_d, weight`.
    pub fn to_csv(&self) -> String {
        let d = self.points.first().map_or(1, |p| p.len());
        let mut out = String::new();
        for i in 0..d {
            out.push_str(&format!("x_{},", i + 1));
        }
        out.push_str("weight\n");
        for (p, w) in self.points.iter().zip(&self.weights) {
            let row: Vec<String> = p.iter().chain(std::iter::once(w)).map(|v| fmt_f64(*v)).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}
