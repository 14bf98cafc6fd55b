//! The corrected flow-map model: a fixed prior `L` plus a trained network
//! `N`, stepped recursively for prediction.
//!
//! Training never touches the prior. Residue targets `x2 - L(x1)` are
//! computed once up front, and the correction network is fitted to them; by
//! a direct algebraic identity this minimizes the full one-step error
//! `|x2 - L(x1) - N(x1)|^2` while paying for expensive priors (reduced-ODE
//! integration) only once per pair instead of once per optimizer step.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::{self, MlpParams, TrainConfig, TrainRecord};
use crate::prior::PriorOperator;
use crate::state::{SnapshotPairSet, StateVector, Trajectory};

/// A prior operator plus its trained correction network, stepping states
/// forward by one lag at a time.
#[derive(Clone)]
pub struct GResNetModel {
    prior: PriorOperator,
    correction: MlpParams,
    dim: usize,
    lag: f64,
}

impl GResNetModel {
    /// Compose a prior and a correction network. The correction must map the
    /// prior's state space to itself, and a lag-aware prior must agree with
    /// the model lag.
    pub fn new(prior: PriorOperator, correction: MlpParams, lag: f64) -> Result<Self> {
        let dim = prior.dim();
        if correction.input_dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: correction.input_dim(),
            });
        }
        if correction.output_dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: correction.output_dim(),
            });
        }
        if !(lag > 0.0) || !lag.is_finite() {
            return Err(Error::Config(format!(
                "lag must be positive and finite, got {lag}"
            )));
        }
        if let Some(prior_lag) = prior.lag() {
            if (prior_lag - lag).abs() > 1e-9 * lag.abs().max(1.0) {
                return Err(Error::Config(format!(
                    "prior was fitted at lag {prior_lag} but the model lag is {lag}"
                )));
            }
        }
        Ok(GResNetModel {
            prior,
            correction,
            dim,
            lag,
        })
    }

    /// A model that is just the prior: the correction is the zero map.
    pub fn prior_only(prior: PriorOperator, lag: f64) -> Result<Self> {
        let dim = prior.dim();
        Self::new(prior, MlpParams::zeros(&[dim, dim]), lag)
    }

    pub fn prior(&self) -> &PriorOperator {
        &self.prior
    }

    pub fn correction(&self) -> &MlpParams {
        &self.correction
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lag(&self) -> f64 {
        self.lag
    }

    /// One lag step: `L(x) + N(x)`.
    pub fn predict_step(&self, x: &StateVector) -> Result<StateVector> {
        let base = self.prior.apply(x)?;
        let corr = self.correction.forward(x)?;
        let next = &base + &corr;
        if !next.is_finite() {
            return Err(Error::NonFinitePrediction {
                state: x.as_slice().to_vec(),
            });
        }
        Ok(next)
    }
}

/// Residue targets for correction training: `(x1_j, x2_j - L(x1_j))`.
///
/// With the identity prior this is exactly the increment `x2 - x1`, the
/// classic residual-network target; better priors leave smaller targets.
pub fn compute_residues(
    prior: &PriorOperator,
    data: &SnapshotPairSet,
) -> Result<Vec<(StateVector, StateVector)>> {
    if prior.dim() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: prior.dim(),
            actual: data.dim(),
        });
    }
    data.iter()
        .map(|pair| {
            let base = prior.apply(&pair.x1)?;
            Ok((pair.x1.clone(), &pair.x2 - &base))
        })
        .collect()
}

/// Fit a corrected model: compute residues under `prior`, then train a
/// `[n, hidden..., n]` network on them.
///
/// If training diverges the partially trained model is still returned and the
/// record carries the divergence flag, so callers can inspect or persist what
/// happened before deciding to fail.
pub fn train_gresnet(
    prior: &PriorOperator,
    data: &SnapshotPairSet,
    hidden: &[usize],
    cfg: &TrainConfig,
) -> Result<(GResNetModel, TrainRecord)> {
    if hidden.is_empty() {
        return Err(Error::Config(
            "correction network needs at least one hidden layer".into(),
        ));
    }
    let n = data.dim();
    let mut layer_sizes = Vec::with_capacity(hidden.len() + 2);
    layer_sizes.push(n);
    layer_sizes.extend_from_slice(hidden);
    layer_sizes.push(n);

    let residues = compute_residues(prior, data)?;
    let init = mlp::init_network(&layer_sizes, cfg.init_seed);
    let (trained, record) = mlp::train(&init, &residues, cfg)?;
    let model = GResNetModel::new(prior.clone(), trained, data.lag())?;
    Ok((model, record))
}

/// Fit a plain residual network: targets are the raw increments `x2 - x1`,
/// with no prior model involved.
///
/// This is deliberately an independent code path (not a call through a prior
/// operator), so the identity-prior special case of [`train_gresnet`] can be
/// checked against it bit for bit.
pub fn train_resnet(
    data: &SnapshotPairSet,
    hidden: &[usize],
    cfg: &TrainConfig,
) -> Result<(GResNetModel, TrainRecord)> {
    if hidden.is_empty() {
        return Err(Error::Config(
            "correction network needs at least one hidden layer".into(),
        ));
    }
    let n = data.dim();
    let mut layer_sizes = Vec::with_capacity(hidden.len() + 2);
    layer_sizes.push(n);
    layer_sizes.extend_from_slice(hidden);
    layer_sizes.push(n);

    let increments: Vec<(StateVector, StateVector)> = data
        .iter()
        .map(|pair| (pair.x1.clone(), &pair.x2 - &pair.x1))
        .collect();
    let init = mlp::init_network(&layer_sizes, cfg.init_seed);
    let (trained, record) = mlp::train(&init, &increments, cfg)?;
    let model = GResNetModel::new(PriorOperator::Identity { dim: n }, trained, data.lag())?;
    Ok((model, record))
}

/// One-step model loss evaluated in its direct form,
/// `mean_j |x2_j - L(x1_j) - N(x1_j)|^2`, without going through precomputed
/// residues. Agrees with the residue-form training loss to round-off.
pub fn model_loss(model: &GResNetModel, data: &SnapshotPairSet) -> Result<f64> {
    if model.dim() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            actual: data.dim(),
        });
    }
    let mut sum = 0.0;
    for pair in data.iter() {
        let base = model.prior.apply(&pair.x1)?;
        let corr = model.correction.forward(&pair.x1)?;
        let pred = &base + &corr;
        let err = pair.x2.distance(&pred);
        sum += err * err;
    }
    Ok(sum / data.count() as f64)
}

/// rms one-step prediction error over a data set. Because the loss is the
/// mean squared Euclidean error with no per-dimension normalization, this is
/// exactly `sqrt(model_loss)`.
pub fn training_rms_error(model: &GResNetModel, data: &SnapshotPairSet) -> Result<f64> {
    Ok(model_loss(model, data)?.sqrt())
}

/// Axis-aligned box that a rollout must stay inside.
#[derive(Clone, Debug, PartialEq)]
pub struct GuardBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl GuardBox {
    /// Inflate a sampling domain about its center: each axis becomes
    /// `center ± factor * half_width`.
    pub fn from_domain(domain: &[(f64, f64)], factor: f64) -> Self {
        let mut lo = Vec::with_capacity(domain.len());
        let mut hi = Vec::with_capacity(domain.len());
        for &(a, b) in domain {
            let center = 0.5 * (a + b);
            let half = 0.5 * (b - a) * factor;
            lo.push(center - half);
            hi.push(center + half);
        }
        GuardBox { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &StateVector) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&v, (&lo, &hi))| v >= lo && v <= hi)
    }
}

/// Why a rollout stopped before reaching its requested horizon.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlowupReason {
    /// The next state came back NaN/infinite; it is not part of the
    /// trajectory.
    NonFinite,
    /// The next state left the guard box; it is the trajectory's last state.
    LeftGuardBox,
}

/// Early-exit marker: `step` is the index the offending state has (or would
/// have had) in the trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Blowup {
    pub step: usize,
    pub reason: BlowupReason,
}

/// A possibly truncated rollout.
#[derive(Clone, Debug)]
pub struct RolloutOutcome {
    pub trajectory: Trajectory,
    pub blowup: Option<Blowup>,
}

impl RolloutOutcome {
    pub fn blew_up(&self) -> bool {
        self.blowup.is_some()
    }
}

/// Apply the model recursively from `x0` for `steps` lags, producing states
/// at times `0, lag, ..., steps*lag`.
///
/// With a guard box, divergence is caught early instead of producing a NaN
/// storm: a state outside the box ends the rollout (that state is kept, as
/// evidence), and a non-finite prediction ends it without being kept. Either
/// way the partial trajectory comes back with a [`Blowup`] flag rather than
/// an error.
pub fn rollout(
    model: &GResNetModel,
    x0: &StateVector,
    steps: usize,
    guard: Option<&GuardBox>,
) -> Result<RolloutOutcome> {
    x0.check_dim(model.dim())?;
    if !x0.is_finite() {
        return Err(Error::NonFinitePrediction {
            state: x0.as_slice().to_vec(),
        });
    }
    if let Some(g) = guard {
        if g.dim() != model.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                actual: g.dim(),
            });
        }
    }

    let mut states = Vec::with_capacity(steps + 1);
    states.push(x0.clone());
    let mut blowup = None;

    if guard.is_some_and(|g| !g.contains(x0)) {
        blowup = Some(Blowup {
            step: 0,
            reason: BlowupReason::LeftGuardBox,
        });
    } else {
        for k in 1..=steps {
            match model.predict_step(states.last().unwrap()) {
                Ok(next) => {
                    let inside = guard.map_or(true, |g| g.contains(&next));
                    states.push(next);
                    if !inside {
                        blowup = Some(Blowup {
                            step: k,
                            reason: BlowupReason::LeftGuardBox,
                        });
                        break;
                    }
                }
                Err(Error::NonFinitePrediction { .. }) | Err(Error::NonFiniteState { .. }) => {
                    blowup = Some(Blowup {
                        step: k,
                        reason: BlowupReason::NonFinite,
                    });
                    break;
                }
                Err(other) => return Err(other),
            }
        }
    }

    Ok(RolloutOutcome {
        trajectory: Trajectory::from_lag(model.lag, states),
        blowup,
    })
}

// ---- model bundles --------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct BundleMetadata {
    dim: usize,
    lag: f64,
    /// Training configuration (with its seeds) when the model was trained
    /// here; absent for hand-assembled models.
    training: Option<TrainConfig>,
}

/// Persist a model as a directory: `prior.txt`, `correction.txt`, and
/// `metadata.json` (dimension, lag, and the training config with its seeds).
pub fn write_bundle(
    model: &GResNetModel,
    training: Option<&TrainConfig>,
    dir: impl AsRef<Path>,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    model.prior.write_file(dir.join("prior.txt"))?;
    model.correction.write_file(dir.join("correction.txt"))?;
    let meta = BundleMetadata {
        dim: model.dim,
        lag: model.lag,
        training: training.cloned(),
    };
    let json = serde_json::to_string_pretty(&meta)
        .map_err(|e| Error::Config(format!("metadata serialization failed: {e}")))?;
    fs::write(dir.join("metadata.json"), json + "\n")?;
    Ok(())
}

/// Load a model bundle written by [`write_bundle`].
pub fn read_bundle(dir: impl AsRef<Path>) -> Result<(GResNetModel, Option<TrainConfig>)> {
    let dir = dir.as_ref();
    let meta_text = fs::read_to_string(dir.join("metadata.json"))?;
    let meta: BundleMetadata = serde_json::from_str(&meta_text)
        .map_err(|e| Error::Config(format!("bad metadata.json: {e}")))?;
    let prior = PriorOperator::read_file(dir.join("prior.txt"))?;
    let correction = MlpParams::read_file(dir.join("correction.txt"))?;
    if prior.dim() != meta.dim {
        return Err(Error::DimensionMismatch {
            expected: meta.dim,
            actual: prior.dim(),
        });
    }
    let model = GResNetModel::new(prior, correction, meta.lag)?;
    Ok((model, meta.training))
}
