//! Declarative experiment runner: a config file in, a directory of artifacts
//! out (data, fitted prior, trained model bundle, per-initial-condition
//! trajectories and error curves, spectra, and a machine-readable summary).
//!
//! Runs are fully deterministic: every random choice is governed by a seed in
//! the config, and the summary record excludes wall-clock times (those go to
//! a separate `timings.json`), so the same config produces a byte-identical
//! `summary.json` on the same platform.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    self, power_spectrum, spectral_agreement, trajectory_error, write_error_csv,
    write_spectrum_csv, ErrorSummary,
};
use crate::error::{Error, Result};
use crate::gresnet::{
    self, rollout, train_gresnet, Blowup, BlowupReason, GResNetModel, GuardBox, RolloutOutcome,
};
use crate::mlp::{TrainConfig, TrainRecord};
use crate::ode::{
    self, builtin_system, generate_pairs, integrate_trajectory, SamplingConfig, SystemSpec,
};
use crate::prior::{fit_dmd, fit_mdmd, fit_shallow_prior, make_reduced_ode_prior, FitReport,
    PriorOperator};
use crate::state::{SnapshotPairSet, StateVector, Trajectory};

/// Offset added to the main training seeds to derive the shallow prior's own
/// seeds, so the prior's randomness never collides with the correction's.
const SHALLOW_PRIOR_SEED_OFFSET: u64 = 1_000_003;

// ---- config file schema ---------------------------------------------------

/// A complete experiment description, mirroring the TOML config layout.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Run label; also the default output directory name.
    pub name: String,
    /// Built-in system the data comes from.
    pub system: String,
    /// Snapshot lag; defaults to the system's natural lag.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lag: Option<f64>,
    /// Sampling-domain override, one `[lo, hi]` per component.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain: Option<Vec<(f64, f64)>>,
    pub data: DataSection,
    pub prior: PriorSection,
    pub network: NetworkSection,
    pub training: TrainingSection,
    pub prediction: PredictionSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Number of snapshot pairs J.
    pub pairs: usize,
    /// Noise level η (fraction of each component's domain half-width).
    #[serde(default)]
    pub noise: f64,
    pub seed: u64,
    /// RK4 substeps per lag; defaults to the system's natural resolution.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub substeps: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    /// One of `identity`, `dmd`, `mdmd`, `reduced_ode`, `shallow_net`.
    pub kind: String,
    /// Hidden width of the shallow-net prior (default 30).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    /// Training epochs for the shallow-net prior (default: a third of the
    /// main budget — the prior is supposed to be cheap).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    /// Built-in system integrated by the reduced-ODE prior.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reduced_system: Option<String>,
    /// Full-state index for each reduced component (default `0..reduced_dim`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lift: Option<Vec<usize>>,
    /// RK4 substeps for the reduced-ODE prior's one-lag integration.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub substeps: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    /// Hidden layer widths of the correction network.
    pub hidden: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adam_beta1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adam_beta2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adam_eps: Option<f64>,
    pub init_seed: u64,
    pub shuffle_seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionSection {
    /// Rollout starting points, one per run.
    pub initial_conditions: Vec<Vec<f64>>,
    /// Rollout horizon in lags.
    pub steps: usize,
    /// Substeps per lag for the reference integration (default: at least 100).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_substeps: Option<usize>,
    /// State components to compute power spectra for (default: none).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psd_components: Option<Vec<usize>>,
    /// Rollout guard box size as a multiple of the domain half-width
    /// (default 100).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub guard_factor: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
}

/// Parse a TOML experiment config.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))
}

/// Configs shipped inside the binary, one per study from the reference
/// systems (`flowmap run example2_mdmd` works with no files on disk).
pub const BUNDLED_CONFIGS: &[(&str, &str)] = &[
    ("example1_dmd", include_str!("../configs/example1_dmd.toml")),
    ("example2_resnet", include_str!("../configs/example2_resnet.toml")),
    ("example2_dmd", include_str!("../configs/example2_dmd.toml")),
    ("example2_mdmd", include_str!("../configs/example2_mdmd.toml")),
    (
        "example2_mdmd_noise2",
        include_str!("../configs/example2_mdmd_noise2.toml"),
    ),
    (
        "example2_mdmd_noise5",
        include_str!("../configs/example2_mdmd_noise5.toml"),
    ),
    ("example3_resnet", include_str!("../configs/example3_resnet.toml")),
    ("example3_dmd", include_str!("../configs/example3_dmd.toml")),
    ("example3_mdmd", include_str!("../configs/example3_mdmd.toml")),
    ("example4_resnet", include_str!("../configs/example4_resnet.toml")),
    ("example4_shallow", include_str!("../configs/example4_shallow.toml")),
    ("example5_resnet", include_str!("../configs/example5_resnet.toml")),
    ("example5_mdmd", include_str!("../configs/example5_mdmd.toml")),
    ("example6_quick", include_str!("../configs/example6_quick.toml")),
    (
        "example6_resnet_quick",
        include_str!("../configs/example6_resnet_quick.toml"),
    ),
    (
        "example6_reduced_only",
        include_str!("../configs/example6_reduced_only.toml"),
    ),
    ("example6_full", include_str!("../configs/example6_full.toml")),
];

/// Look up a bundled config by name.
pub fn bundled_config(name: &str) -> Option<&'static str> {
    BUNDLED_CONFIGS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
}

/// Load a config from a path, or fall back to a bundled config of that name.
pub fn load_config(path_or_name: &str) -> Result<ExperimentConfig> {
    let path = Path::new(path_or_name);
    if path.exists() {
        return parse_config(&fs::read_to_string(path)?);
    }
    match bundled_config(path_or_name) {
        Some(text) => parse_config(text),
        None => Err(Error::Config(format!(
            "`{path_or_name}` is neither a config file nor a bundled config \
             (bundled: {})",
            BUNDLED_CONFIGS
                .iter()
                .map(|(n, _)| *n)
                .collect::<Vec<_>>()
                .join(", ")
        ))),
    }
}

/// Command-line overrides applied on top of a config.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Output directory override.
    pub out: Option<PathBuf>,
    /// Replace all three config seeds with `s`, `s+1`, `s+2`.
    pub seed_override: Option<u64>,
    /// Suppress progress output.
    pub quiet: bool,
}

// ---- resolved configuration -----------------------------------------------

enum ResolvedPrior {
    Identity,
    Dmd,
    Mdmd,
    ReducedOde {
        system: SystemSpec,
        lift: Vec<usize>,
        substeps: usize,
    },
    ShallowNet {
        width: usize,
        train: TrainConfig,
    },
}

struct Resolved {
    name: String,
    system: SystemSpec,
    lag: f64,
    sampling: SamplingConfig,
    prior: ResolvedPrior,
    hidden: Vec<usize>,
    train: TrainConfig,
    initial_conditions: Vec<StateVector>,
    steps: usize,
    reference_substeps: usize,
    psd_components: Vec<usize>,
    guard_factor: f64,
    out_dir: PathBuf,
    /// The config with every default written out, for `effective_config.toml`.
    effective: ExperimentConfig,
}

fn resolve(config: &ExperimentConfig, opts: &RunOptions) -> Result<Resolved> {
    let mut config = config.clone();
    if let Some(s) = opts.seed_override {
        config.data.seed = s;
        config.training.init_seed = s.wrapping_add(1);
        config.training.shuffle_seed = s.wrapping_add(2);
    }

    if config.name.is_empty() || config.name.contains(['/', '\\']) {
        return Err(Error::Config(format!(
            "name `{}` must be non-empty and path-safe",
            config.name
        )));
    }

    let mut system = builtin_system(&config.system)?;
    if let Some(domain) = &config.domain {
        system = system.with_domain(domain.clone())?;
    }
    let lag = config.lag.unwrap_or(system.default_lag);
    if !(lag > 0.0) || !lag.is_finite() {
        return Err(Error::Config(format!("lag must be positive, got {lag}")));
    }

    if config.data.pairs == 0 {
        return Err(Error::Config("data.pairs must be at least 1".into()));
    }
    if !(config.data.noise >= 0.0) {
        return Err(Error::Config(format!(
            "data.noise must be non-negative, got {}",
            config.data.noise
        )));
    }
    let data_substeps = config.data.substeps.unwrap_or(system.default_substeps);
    if data_substeps == 0 {
        return Err(Error::Config("data.substeps must be at least 1".into()));
    }
    let sampling = SamplingConfig {
        num_pairs: config.data.pairs,
        lag,
        noise_level: config.data.noise,
        seed: config.data.seed,
        substeps: data_substeps,
    };

    if config.network.hidden.is_empty() || config.network.hidden.iter().any(|&h| h == 0) {
        return Err(Error::Config(
            "network.hidden must list at least one positive width".into(),
        ));
    }

    let defaults = TrainConfig::default();
    let train = TrainConfig {
        epochs: config.training.epochs,
        batch_size: config.training.batch_size.unwrap_or(defaults.batch_size),
        learning_rate: config
            .training
            .learning_rate
            .unwrap_or(defaults.learning_rate),
        adam_beta1: config.training.adam_beta1.unwrap_or(defaults.adam_beta1),
        adam_beta2: config.training.adam_beta2.unwrap_or(defaults.adam_beta2),
        adam_eps: config.training.adam_eps.unwrap_or(defaults.adam_eps),
        validation_fraction: config
            .training
            .validation_fraction
            .unwrap_or(defaults.validation_fraction),
        shuffle_seed: config.training.shuffle_seed,
        init_seed: config.training.init_seed,
    };
    train.validate(config.data.pairs)?;

    let prior = resolve_prior(&config, &system, &train)?;

    let n = system.dim;
    let mut initial_conditions = Vec::with_capacity(config.prediction.initial_conditions.len());
    for (i, ic) in config.prediction.initial_conditions.iter().enumerate() {
        if ic.len() != n {
            return Err(Error::Config(format!(
                "initial condition {i} has {} components, system `{}` needs {n}",
                ic.len(),
                system.name
            )));
        }
        if ic.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!(
                "initial condition {i} contains non-finite values"
            )));
        }
        initial_conditions.push(StateVector::new(ic.clone()));
    }
    let reference_substeps = config
        .prediction
        .reference_substeps
        .unwrap_or_else(|| data_substeps.max(100));
    if reference_substeps == 0 {
        return Err(Error::Config(
            "prediction.reference_substeps must be at least 1".into(),
        ));
    }
    let psd_components = config.prediction.psd_components.clone().unwrap_or_default();
    for &c in &psd_components {
        if c >= n {
            return Err(Error::Config(format!(
                "psd component {c} out of range for dimension {n}"
            )));
        }
    }
    let guard_factor = config.prediction.guard_factor.unwrap_or(100.0);
    if !(guard_factor > 0.0) {
        return Err(Error::Config(format!(
            "prediction.guard_factor must be positive, got {guard_factor}"
        )));
    }

    let out_dir = opts
        .out
        .clone()
        .or_else(|| config.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs").join(&config.name));

    // Write every resolved default back so the stored config is complete.
    let mut effective = config.clone();
    effective.lag = Some(lag);
    effective.domain = Some(system.domain.clone());
    effective.data.substeps = Some(data_substeps);
    match &prior {
        ResolvedPrior::ShallowNet { width, train } => {
            effective.prior.width = Some(*width);
            effective.prior.epochs = Some(train.epochs);
        }
        ResolvedPrior::ReducedOde {
            system: reduced,
            lift,
            substeps,
        } => {
            effective.prior.reduced_system = Some(reduced.name.clone());
            effective.prior.lift = Some(lift.clone());
            effective.prior.substeps = Some(*substeps);
        }
        _ => {}
    }
    effective.training.batch_size = Some(train.batch_size);
    effective.training.learning_rate = Some(train.learning_rate);
    effective.training.validation_fraction = Some(train.validation_fraction);
    effective.training.adam_beta1 = Some(train.adam_beta1);
    effective.training.adam_beta2 = Some(train.adam_beta2);
    effective.training.adam_eps = Some(train.adam_eps);
    effective.prediction.reference_substeps = Some(reference_substeps);
    effective.prediction.psd_components = Some(psd_components.clone());
    effective.prediction.guard_factor = Some(guard_factor);
    effective.output.dir = Some(out_dir.to_string_lossy().into_owned());

    Ok(Resolved {
        name: config.name.clone(),
        system,
        lag,
        sampling,
        prior,
        hidden: config.network.hidden.clone(),
        train,
        initial_conditions,
        steps: config.prediction.steps,
        reference_substeps,
        psd_components,
        guard_factor,
        out_dir,
        effective,
    })
}

fn resolve_prior(
    config: &ExperimentConfig,
    system: &SystemSpec,
    train: &TrainConfig,
) -> Result<ResolvedPrior> {
    let p = &config.prior;
    let requires_none = |field: &str, present: bool| -> Result<()> {
        if present {
            return Err(Error::Config(format!(
                "prior.{field} is not a valid option for kind `{}`",
                p.kind
            )));
        }
        Ok(())
    };
    match p.kind.as_str() {
        "identity" | "dmd" | "mdmd" => {
            requires_none("width", p.width.is_some())?;
            requires_none("epochs", p.epochs.is_some())?;
            requires_none("reduced_system", p.reduced_system.is_some())?;
            requires_none("lift", p.lift.is_some())?;
            requires_none("substeps", p.substeps.is_some())?;
            Ok(match p.kind.as_str() {
                "identity" => ResolvedPrior::Identity,
                "dmd" => ResolvedPrior::Dmd,
                _ => ResolvedPrior::Mdmd,
            })
        }
        "reduced_ode" => {
            requires_none("width", p.width.is_some())?;
            requires_none("epochs", p.epochs.is_some())?;
            let name = p.reduced_system.as_ref().ok_or_else(|| {
                Error::Config("prior.reduced_system is required for kind `reduced_ode`".into())
            })?;
            let reduced = builtin_system(name)?;
            let lift = p
                .lift
                .clone()
                .unwrap_or_else(|| (0..reduced.dim).collect());
            let substeps = p.substeps.unwrap_or(reduced.default_substeps);
            // Full validation (dims, injectivity) happens in the constructor;
            // run it now so config errors surface before any work is done.
            make_reduced_ode_prior(
                reduced.clone(),
                system.dim,
                config.lag.unwrap_or(system.default_lag),
                substeps,
                lift.clone(),
            )?;
            Ok(ResolvedPrior::ReducedOde {
                system: reduced,
                lift,
                substeps,
            })
        }
        "shallow_net" => {
            requires_none("reduced_system", p.reduced_system.is_some())?;
            requires_none("lift", p.lift.is_some())?;
            requires_none("substeps", p.substeps.is_some())?;
            let width = p.width.unwrap_or(30);
            if width == 0 {
                return Err(Error::Config("prior.width must be at least 1".into()));
            }
            let prior_train = TrainConfig {
                epochs: p.epochs.unwrap_or_else(|| train.epochs.div_ceil(3)),
                init_seed: train.init_seed.wrapping_add(SHALLOW_PRIOR_SEED_OFFSET),
                shuffle_seed: train.shuffle_seed.wrapping_add(SHALLOW_PRIOR_SEED_OFFSET),
                ..train.clone()
            };
            Ok(ResolvedPrior::ShallowNet {
                width,
                train: prior_train,
            })
        }
        other => Err(Error::Config(format!(
            "unknown prior kind `{other}` (expected identity, dmd, mdmd, reduced_ode, or shallow_net)"
        ))),
    }
}

// ---- summary records ------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DataSummary {
    pub pairs: usize,
    pub noise: f64,
    pub seed: u64,
    pub substeps: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub validation_fraction: f64,
    pub init_seed: u64,
    pub shuffle_seed: u64,
    pub updates: usize,
    pub final_train_loss: Option<f64>,
    pub final_val_loss: Option<f64>,
    pub diverged: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PriorFitSummary {
    pub rms_residue: f64,
    pub max_residue: f64,
    pub rank: Option<usize>,
    pub rank_deficient: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlowupSummary {
    pub step: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PsdSummary {
    pub component: usize,
    pub predicted_dominant_frequency: Option<f64>,
    pub reference_dominant_frequency: Option<f64>,
    pub agreement: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictionSummary {
    pub initial_condition: Vec<f64>,
    pub steps_requested: usize,
    pub steps_completed: usize,
    pub blowup: Option<BlowupSummary>,
    pub max_error: f64,
    pub final_error: f64,
    pub mean_error: f64,
    pub psd: Vec<PsdSummary>,
}

/// The deterministic machine-readable record of a run (`summary.json`).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub system: String,
    pub dim: usize,
    pub lag: f64,
    pub prior_kind: String,
    pub data: DataSummary,
    pub network_hidden: Vec<usize>,
    pub training: TrainingSummary,
    pub prior_fit: PriorFitSummary,
    /// RMS correction output over the training inputs; `None` when training
    /// diverged and the weights are not meaningful.
    pub network_norm: Option<f64>,
    pub predictions: Vec<PredictionSummary>,
    /// Largest max-error over all initial conditions; the headline
    /// "prediction error" figure.
    pub headline_max_error: Option<f64>,
}

#[derive(Serialize)]
struct Timings {
    data_seconds: f64,
    prior_seconds: f64,
    training_seconds: f64,
    prediction_seconds: f64,
    total_seconds: f64,
}

/// Everything a finished run hands back to the caller.
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub summary: RunSummary,
}

// ---- file helpers ---------------------------------------------------------

fn atomic_write(path: &Path, contents: &str) -> Result<()> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn trajectory_csv(traj: &Trajectory, meta: &[(&str, String)]) -> String {
    let n = traj.states()[0].dim();
    let mut out = String::new();
    if !meta.is_empty() {
        let fields: Vec<String> = meta.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(out, "# {}", fields.join(" "));
    }
    let cols: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    let _ = writeln!(out, "t,{}", cols.join(","));
    for (t, state) in traj.times().iter().zip(traj.states()) {
        let row: Vec<String> = state.iter().map(|&v| ode::fmt_f64(v)).collect();
        let _ = writeln!(out, "{},{}", ode::fmt_f64(*t), row.join(","));
    }
    out
}

fn observables_csv(system: &SystemSpec, traj: &Trajectory, meta: &[(&str, String)]) -> String {
    let alg = system.algebraic.as_ref().expect("system has observables");
    let mut out = String::new();
    if !meta.is_empty() {
        let fields: Vec<String> = meta.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(out, "# {}", fields.join(" "));
    }
    let _ = writeln!(out, "t,{}", alg.names.join(","));
    for (t, state) in traj.times().iter().zip(traj.states()) {
        let values = alg.evaluate(state.as_slice());
        let row: Vec<String> = values.iter().map(|&v| ode::fmt_f64(v)).collect();
        let _ = writeln!(out, "{},{}", ode::fmt_f64(*t), row.join(","));
    }
    out
}

fn component_error_csv(
    predicted: &Trajectory,
    reference: &Trajectory,
    meta: &[(&str, String)],
) -> String {
    let n = predicted.states()[0].dim();
    let mut out = String::new();
    if !meta.is_empty() {
        let fields: Vec<String> = meta.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(out, "# {}", fields.join(" "));
    }
    let cols: Vec<String> = (1..=n).map(|i| format!("e{i}")).collect();
    let _ = writeln!(out, "t,{}", cols.join(","));
    for ((t, p), r) in predicted
        .times()
        .iter()
        .zip(predicted.states())
        .zip(reference.states())
    {
        let row: Vec<String> = (0..n)
            .map(|c| ode::fmt_f64((p[c] - r[c]).abs()))
            .collect();
        let _ = writeln!(out, "{},{}", ode::fmt_f64(*t), row.join(","));
    }
    out
}

fn train_record_csv(record: &TrainRecord) -> String {
    let mut out = String::new();
    let with_val = !record.val_loss.is_empty();
    let _ = writeln!(
        out,
        "{}",
        if with_val {
            "epoch,train_loss,val_loss"
        } else {
            "epoch,train_loss"
        }
    );
    for (epoch, &loss) in record.train_loss.iter().enumerate() {
        if with_val {
            let _ = writeln!(
                out,
                "{},{},{}",
                epoch,
                ode::fmt_f64(loss),
                ode::fmt_f64(record.val_loss[epoch])
            );
        } else {
            let _ = writeln!(out, "{},{}", epoch, ode::fmt_f64(loss));
        }
    }
    out
}

fn empty_train_record() -> TrainRecord {
    TrainRecord {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        updates: 0,
        diverged: None,
        final_network_norm: 0.0,
        wall_seconds: 0.0,
    }
}

fn to_json(value: &impl Serialize) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Error::Config(format!("serialization failed: {e}")))
}

// ---- stages ---------------------------------------------------------------

fn say(quiet: bool, msg: &str) {
    if !quiet {
        println!("{msg}");
    }
}

fn prepare_out_dir(resolved: &Resolved) -> Result<()> {
    fs::create_dir_all(&resolved.out_dir)?;
    let effective = toml::to_string_pretty(&resolved.effective)
        .map_err(|e| Error::Config(format!("could not serialize effective config: {e}")))?;
    atomic_write(&resolved.out_dir.join("effective_config.toml"), &effective)?;
    Ok(())
}

fn generate_stage(resolved: &Resolved, quiet: bool) -> Result<SnapshotPairSet> {
    say(
        quiet,
        &format!(
            "[data] sampling {} pairs from `{}` (lag {}, noise {}, seed {})",
            resolved.sampling.num_pairs,
            resolved.system.name,
            resolved.lag,
            resolved.sampling.noise_level,
            resolved.sampling.seed
        ),
    );
    let data = generate_pairs(&resolved.system, &resolved.sampling)?;
    let tmp = resolved.out_dir.join(".data.txt.tmp");
    ode::write_pairs(&data, &tmp)?;
    fs::rename(tmp, resolved.out_dir.join("data.txt"))?;
    Ok(data)
}

fn fit_prior_stage(
    resolved: &Resolved,
    data: &SnapshotPairSet,
    quiet: bool,
) -> Result<(PriorOperator, FitReport, Option<TrainRecord>)> {
    let (prior, report, record) = match &resolved.prior {
        ResolvedPrior::Identity => {
            let prior = PriorOperator::Identity {
                dim: resolved.system.dim,
            };
            let residues = gresnet::compute_residues(&prior, data)?
                .into_iter()
                .map(|(_, r)| r)
                .collect();
            (prior, FitReport::from_residues(residues), None)
        }
        ResolvedPrior::Dmd => {
            let (map, report) = fit_dmd(data)?;
            (PriorOperator::Dmd(map), report, None)
        }
        ResolvedPrior::Mdmd => {
            let (map, report) = fit_mdmd(data)?;
            (PriorOperator::Mdmd(map), report, None)
        }
        ResolvedPrior::ReducedOde {
            system,
            lift,
            substeps,
        } => {
            let prior = make_reduced_ode_prior(
                system.clone(),
                resolved.system.dim,
                resolved.lag,
                *substeps,
                lift.clone(),
            )?;
            let residues = gresnet::compute_residues(&prior, data)?
                .into_iter()
                .map(|(_, r)| r)
                .collect();
            (prior, FitReport::from_residues(residues), None)
        }
        ResolvedPrior::ShallowNet { width, train } => {
            say(
                quiet,
                &format!(
                    "[prior] training shallow-net prior (width {width}, {} epochs)",
                    train.epochs
                ),
            );
            let fit = fit_shallow_prior(data, *width, train)?;
            (fit.prior, fit.report, Some(fit.record))
        }
    };
    say(
        quiet,
        &format!(
            "[prior] {} prior ready; rms residue {:.3e}{}",
            prior.kind_name(),
            report.rms_residue,
            if report.rank_deficient {
                " (rank deficient)"
            } else {
                ""
            }
        ),
    );
    let tmp = resolved.out_dir.join(".prior.txt.tmp");
    prior.write_file(&tmp)?;
    fs::rename(tmp, resolved.out_dir.join("prior.txt"))?;
    Ok((prior, report, record))
}

struct PredictionArtifacts {
    summary: PredictionSummary,
    files: Vec<(PathBuf, String)>,
    csv_errors: Vec<(PathBuf, ErrorSummary, Vec<(&'static str, String)>)>,
    spectra: Vec<(PathBuf, analysis::Spectrum, Vec<(&'static str, String)>)>,
}

fn predict_one(
    resolved: &Resolved,
    model: &GResNetModel,
    guard: &GuardBox,
    index: usize,
    x0: &StateVector,
) -> Result<PredictionArtifacts> {
    let RolloutOutcome { trajectory, blowup } = rollout(model, x0, resolved.steps, Some(guard))?;
    let reference_full = integrate_trajectory(
        &resolved.system,
        x0,
        resolved.lag,
        resolved.steps,
        resolved.reference_substeps,
    )?;
    // On blow-up the comparison covers the prefix the model actually produced.
    let completed = trajectory.len() - 1;
    let reference = if reference_full.len() == trajectory.len() {
        reference_full
    } else {
        Trajectory::from_lag(
            resolved.lag,
            reference_full.states()[..trajectory.len()].to_vec(),
        )
    };
    let errors = trajectory_error(&trajectory, &reference)?;

    let base_meta = |kind: &str| -> Vec<(&'static str, String)> {
        vec![
            ("run", resolved.name.clone()),
            ("system", resolved.system.name.clone()),
            ("prior", model.prior().kind_name().to_string()),
            ("ic", index.to_string()),
            ("kind", kind.to_string()),
        ]
    };

    let mut files = Vec::new();
    let out = &resolved.out_dir;
    files.push((
        out.join(format!("rollout_{index}.csv")),
        trajectory_csv(&trajectory, &base_meta("predicted")),
    ));
    files.push((
        out.join(format!("reference_{index}.csv")),
        trajectory_csv(&reference, &base_meta("reference")),
    ));
    files.push((
        out.join(format!("error_components_{index}.csv")),
        component_error_csv(&trajectory, &reference, &base_meta("component_error")),
    ));
    if resolved.system.algebraic.is_some() {
        files.push((
            out.join(format!("rollout_observables_{index}.csv")),
            observables_csv(&resolved.system, &trajectory, &base_meta("predicted_observables")),
        ));
        files.push((
            out.join(format!("reference_observables_{index}.csv")),
            observables_csv(&resolved.system, &reference, &base_meta("reference_observables")),
        ));
    }

    let csv_errors = vec![(
        out.join(format!("error_{index}.csv")),
        errors.clone(),
        base_meta("error"),
    )];

    let mut psd = Vec::new();
    let mut spectra = Vec::new();
    for &component in &resolved.psd_components {
        let predicted_series = trajectory.component(component);
        let reference_series = reference.component(component);
        let entry = match (
            power_spectrum(&predicted_series, resolved.lag),
            power_spectrum(&reference_series, resolved.lag),
        ) {
            (Ok(sp), Ok(sr)) => {
                let agreement = spectral_agreement(&sp, &sr)?;
                spectra.push((
                    out.join(format!("psd_predicted_{index}_x{}.csv", component + 1)),
                    sp.clone(),
                    base_meta("psd_predicted"),
                ));
                spectra.push((
                    out.join(format!("psd_reference_{index}_x{}.csv", component + 1)),
                    sr.clone(),
                    base_meta("psd_reference"),
                ));
                PsdSummary {
                    component,
                    predicted_dominant_frequency: Some(sp.dominant_frequency),
                    reference_dominant_frequency: Some(sr.dominant_frequency),
                    agreement: Some(agreement),
                }
            }
            // Too little surviving trajectory for a spectrum (early blow-up).
            (Err(Error::SeriesTooShort { .. }), _) | (_, Err(Error::SeriesTooShort { .. })) => {
                PsdSummary {
                    component,
                    predicted_dominant_frequency: None,
                    reference_dominant_frequency: None,
                    agreement: None,
                }
            }
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };
        psd.push(entry);
    }

    Ok(PredictionArtifacts {
        summary: PredictionSummary {
            initial_condition: x0.as_slice().to_vec(),
            steps_requested: resolved.steps,
            steps_completed: completed,
            blowup: blowup.map(|Blowup { step, reason }| BlowupSummary {
                step,
                reason: match reason {
                    BlowupReason::NonFinite => "non_finite".to_string(),
                    BlowupReason::LeftGuardBox => "left_guard_box".to_string(),
                },
            }),
            max_error: errors.max_error,
            final_error: errors.final_error,
            mean_error: errors.mean_error,
            psd,
        },
        files,
        csv_errors,
        spectra,
    })
}

// ---- public entry points --------------------------------------------------

/// Generate and store the snapshot data only (`flowmap gen-data`).
pub fn run_gen_data(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome> {
    run_stages(config, opts, Stage::Data)
}

/// Generate data and fit/store the prior only (`flowmap fit-prior`).
pub fn run_fit_prior(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome> {
    run_stages(config, opts, Stage::Prior)
}

/// Run the full pipeline: data, prior, correction training, rollouts,
/// analysis, summary.
pub fn run_experiment(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome> {
    run_stages(config, opts, Stage::Full)
}

#[derive(PartialEq, Clone, Copy)]
enum Stage {
    Data,
    Prior,
    Full,
}

fn run_stages(config: &ExperimentConfig, opts: &RunOptions, stage: Stage) -> Result<RunOutcome> {
    let total_start = Instant::now();
    let resolved = resolve(config, opts)?;
    prepare_out_dir(&resolved)?;

    let data_start = Instant::now();
    let data = generate_stage(&resolved, opts.quiet)?;
    let data_seconds = data_start.elapsed().as_secs_f64();

    let mut summary = RunSummary {
        name: resolved.name.clone(),
        system: resolved.system.name.clone(),
        dim: resolved.system.dim,
        lag: resolved.lag,
        prior_kind: config.prior.kind.clone(),
        data: DataSummary {
            pairs: resolved.sampling.num_pairs,
            noise: resolved.sampling.noise_level,
            seed: resolved.sampling.seed,
            substeps: resolved.sampling.substeps,
        },
        network_hidden: resolved.hidden.clone(),
        training: TrainingSummary {
            epochs: resolved.train.epochs,
            batch_size: resolved.train.batch_size,
            learning_rate: resolved.train.learning_rate,
            validation_fraction: resolved.train.validation_fraction,
            init_seed: resolved.train.init_seed,
            shuffle_seed: resolved.train.shuffle_seed,
            updates: 0,
            final_train_loss: None,
            final_val_loss: None,
            diverged: None,
        },
        prior_fit: PriorFitSummary {
            rms_residue: 0.0,
            max_residue: 0.0,
            rank: None,
            rank_deficient: false,
        },
        network_norm: None,
        predictions: Vec::new(),
        headline_max_error: None,
    };

    if stage == Stage::Data {
        say(opts.quiet, &format!("[done] data in {}", resolved.out_dir.display()));
        return Ok(RunOutcome {
            out_dir: resolved.out_dir,
            summary,
        });
    }

    let prior_start = Instant::now();
    let (prior, prior_report, _prior_record) = fit_prior_stage(&resolved, &data, opts.quiet)?;
    let prior_seconds = prior_start.elapsed().as_secs_f64();
    summary.prior_fit = PriorFitSummary {
        rms_residue: prior_report.rms_residue,
        max_residue: prior_report.max_residue,
        rank: prior_report.rank,
        rank_deficient: prior_report.rank_deficient,
    };

    if stage == Stage::Prior {
        say(opts.quiet, &format!("[done] prior in {}", resolved.out_dir.display()));
        return Ok(RunOutcome {
            out_dir: resolved.out_dir,
            summary,
        });
    }

    // Correction training. Zero epochs means "use the prior as-is": the
    // correction is the zero map, not an untrained random network.
    let train_start = Instant::now();
    let (model, record) = if resolved.train.epochs == 0 {
        say(opts.quiet, "[train] epochs = 0; using the prior without correction");
        (
            GResNetModel::prior_only(prior.clone(), resolved.lag)?,
            empty_train_record(),
        )
    } else {
        say(
            opts.quiet,
            &format!(
                "[train] correction {:?}, {} epochs, batch {}",
                resolved.hidden, resolved.train.epochs, resolved.train.batch_size
            ),
        );
        train_gresnet(&prior, &data, &resolved.hidden, &resolved.train)?
    };
    let training_seconds = train_start.elapsed().as_secs_f64();

    summary.training.updates = record.updates;
    summary.training.final_train_loss = record.final_train_loss();
    summary.training.final_val_loss = record.final_val_loss();
    summary.training.diverged = record.diverged;
    if record.diverged.is_none() {
        summary.network_norm = Some(analysis::network_norm(&model, &data)?);
    }

    atomic_write(
        &resolved.out_dir.join("train_record.csv"),
        &train_record_csv(&record),
    )?;
    let bundle_tmp = resolved.out_dir.join(".model.tmp");
    if bundle_tmp.exists() {
        fs::remove_dir_all(&bundle_tmp)?;
    }
    gresnet::write_bundle(&model, Some(&resolved.train), &bundle_tmp)?;
    let bundle_dir = resolved.out_dir.join("model");
    if bundle_dir.exists() {
        fs::remove_dir_all(&bundle_dir)?;
    }
    fs::rename(&bundle_tmp, &bundle_dir)?;

    if let Some(epoch) = record.diverged {
        // Keep what we have (train record, partial model) and report failure.
        atomic_write(&resolved.out_dir.join("summary.json"), &to_json(&summary)?)?;
        return Err(Error::TrainingDiverged { epoch });
    }
    if let Some(loss) = record.final_train_loss() {
        say(
            opts.quiet,
            &format!(
                "[train] final training loss {loss:.3e} after {} updates",
                record.updates
            ),
        );
    }

    // Rollouts: independent initial conditions run in parallel.
    let predict_start = Instant::now();
    let guard = GuardBox::from_domain(&resolved.system.domain, resolved.guard_factor);
    say(
        opts.quiet,
        &format!(
            "[predict] {} initial condition(s), {} steps (horizon t = {})",
            resolved.initial_conditions.len(),
            resolved.steps,
            resolved.steps as f64 * resolved.lag
        ),
    );
    let artifacts: Vec<PredictionArtifacts> = resolved
        .initial_conditions
        .par_iter()
        .enumerate()
        .map(|(i, x0)| predict_one(&resolved, &model, &guard, i, x0))
        .collect::<Result<_>>()?;
    for art in &artifacts {
        for (path, contents) in &art.files {
            atomic_write(path, contents)?;
        }
        for (path, errors, meta) in &art.csv_errors {
            let tmp = path.with_file_name(".err.tmp");
            write_error_csv(errors, meta, &tmp)?;
            fs::rename(&tmp, path)?;
        }
        for (path, spectrum, meta) in &art.spectra {
            let tmp = path.with_file_name(".psd.tmp");
            write_spectrum_csv(spectrum, meta, &tmp)?;
            fs::rename(&tmp, path)?;
        }
    }
    summary.predictions = artifacts.into_iter().map(|a| a.summary).collect();
    summary.headline_max_error = summary
        .predictions
        .iter()
        .map(|p| p.max_error)
        .fold(None, |acc: Option<f64>, e| {
            Some(acc.map_or(e, |a| a.max(e)))
        });
    let prediction_seconds = predict_start.elapsed().as_secs_f64();

    atomic_write(&resolved.out_dir.join("summary.json"), &to_json(&summary)?)?;
    let timings = Timings {
        data_seconds,
        prior_seconds,
        training_seconds,
        prediction_seconds,
        total_seconds: total_start.elapsed().as_secs_f64(),
    };
    atomic_write(&resolved.out_dir.join("timings.json"), &to_json(&timings)?)?;

    if let Some(e) = summary.headline_max_error {
        say(opts.quiet, &format!("[done] max prediction error {e:.3e}"));
    }
    say(
        opts.quiet,
        &format!("[done] artifacts in {}", resolved.out_dir.display()),
    );
    Ok(RunOutcome {
        out_dir: resolved.out_dir,
        summary,
    })
}

// ---- run comparison -------------------------------------------------------

/// One line of a side-by-side run comparison.
#[derive(Clone, Debug)]
pub struct ComparisonRow {
    pub name: String,
    pub prior_kind: String,
    pub prediction_error: Option<f64>,
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
    pub network_norm: Option<f64>,
}

/// Several runs of the same study, side by side.
#[derive(Clone, Debug)]
pub struct Comparison {
    pub system: String,
    pub lag: f64,
    pub rows: Vec<ComparisonRow>,
}

/// Read a `summary.json` written by [`run_experiment`]. Accepts either the
/// file itself or its run directory.
pub fn read_summary(path: impl AsRef<Path>) -> Result<RunSummary> {
    let path = path.as_ref();
    let file = if path.is_dir() {
        path.join("summary.json")
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&file)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("bad summary `{}`: {e}", file.display())))
}

/// Build the four-column comparison (prediction error, training loss,
/// validation loss, network norm) across runs of the same system and lag.
pub fn compare_runs(paths: &[PathBuf]) -> Result<Comparison> {
    if paths.len() < 2 {
        return Err(Error::Config(
            "comparison needs at least two run summaries".into(),
        ));
    }
    let summaries: Vec<RunSummary> = paths.iter().map(read_summary).collect::<Result<_>>()?;
    let first = &summaries[0];
    for s in &summaries[1..] {
        if s.system != first.system {
            return Err(Error::Config(format!(
                "cannot compare runs on different systems: `{}` vs `{}`",
                first.system, s.system
            )));
        }
        let tol = 1e-12 * first.lag.abs().max(s.lag.abs());
        if (s.lag - first.lag).abs() > tol {
            return Err(Error::Config(format!(
                "cannot compare runs at different lags: {} vs {}",
                first.lag, s.lag
            )));
        }
    }
    let rows = summaries
        .iter()
        .map(|s| ComparisonRow {
            name: s.name.clone(),
            prior_kind: s.prior_kind.clone(),
            prediction_error: s.headline_max_error,
            train_loss: s.training.final_train_loss,
            val_loss: s.training.final_val_loss,
            network_norm: s.network_norm,
        })
        .collect();
    Ok(Comparison {
        system: first.system.clone(),
        lag: first.lag,
        rows,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3e}"))
}

impl Comparison {
    /// Fixed-width table for terminal output.
    pub fn console_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "system: {}   lag: {}", self.system, self.lag);
        let _ = writeln!(
            out,
            "{:<24} {:<12} {:>14} {:>14} {:>14} {:>14}",
            "run", "prior", "pred error", "train loss", "val loss", "net norm"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<24} {:<12} {:>14} {:>14} {:>14} {:>14}",
                r.name,
                r.prior_kind,
                fmt_opt(r.prediction_error),
                fmt_opt(r.train_loss),
                fmt_opt(r.val_loss),
                fmt_opt(r.network_norm)
            );
        }
        out
    }

    /// The same table as CSV (empty cells for missing values).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("run,prior,prediction_error,train_loss,val_loss,network_norm\n");
        let cell = |v: Option<f64>| v.map_or_else(String::new, |x| ode::fmt_f64(x));
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.name,
                r.prior_kind,
                cell(r.prediction_error),
                cell(r.train_loss),
                cell(r.val_loss),
                cell(r.network_norm)
            );
        }
        out
    }

    /// Write the CSV form. Used by `flowmap compare --out`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        atomic_write(path.as_ref(), &self.to_csv())
    }
}
