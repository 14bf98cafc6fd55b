//! Core domain types: state vectors, snapshot pair sets, and trajectories.
//!
//! All systems treated here are tiny (n ≤ 4), so states are dense `f64`
//! vectors throughout; chaotic rollouts and least-squares fits are sensitive
//! enough to rounding that nothing below double precision would do.

use std::fmt;
use std::ops::{Add, Index, Sub};

use crate::error::{Error, Result};

/// Dense state of an n-dimensional dynamical system.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector(Vec<f64>);

impl StateVector {
    /// Wrap components into a state. Panics on an empty vector (n ≥ 1 always).
    pub fn new(components: Vec<f64>) -> Self {
        assert!(!components.is_empty(), "state must have at least one component");
        StateVector(components)
    }

    pub fn zeros(dim: usize) -> Self {
        Self::new(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// True when every component is finite (no NaN/Inf).
    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Euclidean norm.
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Euclidean distance to another state of the same dimension.
    pub fn distance(&self, other: &StateVector) -> f64 {
        assert_eq!(self.dim(), other.dim(), "distance between mismatched dimensions");
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub(crate) fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() == expected {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected,
                actual: self.dim(),
            })
        }
    }
}

impl From<Vec<f64>> for StateVector {
    fn from(v: Vec<f64>) -> Self {
        StateVector::new(v)
    }
}

impl Index<usize> for StateVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl Add for &StateVector {
    type Output = StateVector;
    fn add(self, rhs: &StateVector) -> StateVector {
        assert_eq!(self.dim(), rhs.dim());
        StateVector::new(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &StateVector {
    type Output = StateVector;
    fn sub(self, rhs: &StateVector) -> StateVector {
        assert_eq!(self.dim(), rhs.dim());
        StateVector::new(self.0.iter().zip(&rhs.0).map(|(a, b)| a - b).collect())
    }
}

impl fmt::Display for StateVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

/// One observation: the state `x1` and the state `x2` one lag later.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotPair {
    pub x1: StateVector,
    pub x2: StateVector,
}

/// Where a data set came from; recorded in the snapshot file header.
#[derive(Clone, Debug, PartialEq)]
pub struct DataOrigin {
    pub system: String,
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for DataOrigin {
    fn default() -> Self {
        DataOrigin {
            system: "custom".into(),
            noise_level: 0.0,
            seed: 0,
        }
    }
}

/// A set of snapshot pairs sharing one dimension and one time lag.
///
/// This is the atomic training input: every model in the crate is fitted to
/// `(x1, x2)` pairs separated by the same `lag`.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotPairSet {
    dim: usize,
    lag: f64,
    pairs: Vec<SnapshotPair>,
    pub origin: DataOrigin,
}

impl SnapshotPairSet {
    /// Build a set from raw pairs, validating shared dimension and a positive lag.
    pub fn new(lag: f64, pairs: Vec<SnapshotPair>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyData);
        }
        if !(lag > 0.0) {
            return Err(Error::Config(format!("lag must be positive, got {lag}")));
        }
        let dim = pairs[0].x1.dim();
        for p in &pairs {
            p.x1.check_dim(dim)?;
            p.x2.check_dim(dim)?;
        }
        Ok(SnapshotPairSet {
            dim,
            lag,
            pairs,
            origin: DataOrigin::default(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lag(&self) -> f64 {
        self.lag
    }

    pub fn count(&self) -> usize {
        self.pairs.len()
    }

    pub fn pairs(&self) -> &[SnapshotPair] {
        &self.pairs
    }

    pub fn iter(&self) -> std::slice::Iter<'_, SnapshotPair> {
        self.pairs.iter()
    }
}

/// States sampled on a uniform time grid `t_k = t_0 + k·lag`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<StateVector>,
}

impl Trajectory {
    /// Build from explicit times; lengths must match and times must be
    /// strictly increasing with uniform spacing (relative tolerance 1e-9).
    pub fn new(times: Vec<f64>, states: Vec<StateVector>) -> Result<Self> {
        if times.len() != states.len() {
            return Err(Error::Config(format!(
                "trajectory has {} times but {} states",
                times.len(),
                states.len()
            )));
        }
        if times.is_empty() {
            return Err(Error::Config("trajectory must contain at least one state".into()));
        }
        if times.len() > 1 {
            let step = times[1] - times[0];
            if !(step > 0.0) {
                return Err(Error::Config("trajectory times must be strictly increasing".into()));
            }
            for k in 1..times.len() {
                let d = times[k] - times[k - 1];
                if (d - step).abs() > 1e-9 * step.abs().max(1.0) {
                    return Err(Error::Config(format!(
                        "non-uniform trajectory spacing at index {k}: {d} vs {step}"
                    )));
                }
            }
        }
        Ok(Trajectory { times, states })
    }

    /// Build on the grid `t_k = k·lag`. Times come from multiplication (not
    /// accumulation) so two trajectories over the same lag share bitwise
    /// identical grids.
    pub fn from_lag(lag: f64, states: Vec<StateVector>) -> Self {
        let times = (0..states.len()).map(|k| k as f64 * lag).collect();
        Trajectory::new(times, states).expect("uniform grid construction cannot fail")
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[StateVector] {
        &self.states
    }

    pub fn state(&self, k: usize) -> &StateVector {
        &self.states[k]
    }

    pub fn last(&self) -> &StateVector {
        self.states.last().expect("trajectory is never empty")
    }

    /// Extract one component as a scalar time series (for spectra/plots).
    pub fn component(&self, index: usize) -> Vec<f64> {
        self.states.iter().map(|s| s[index]).collect()
    }
}
