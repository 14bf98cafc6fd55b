//! Reference dynamical systems, a fixed-step RK4 integrator, and snapshot-pair
//! data generation with optional noise injection.
//!
//! Snapshot pairs are produced by drawing `x1` uniformly over a system's domain
//! box with a seeded generator, advancing the true dynamics by one lag to get
//! `x2`, and (optionally) perturbing both states with Gaussian noise whose
//! per-component standard deviation is `noise_level` times that component's
//! domain half-width. Each pair index owns its own RNG substream, so data sets
//! are bit-identical for a given seed regardless of generation order.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use rand::RngExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::state::{DataOrigin, SnapshotPair, SnapshotPairSet, StateVector, Trajectory};

/// Names accepted by [`builtin_system`].
pub const SYSTEM_NAMES: &[&str] = &[
    "linear1",
    "linear2",
    "linear3_nonlin",
    "pendulum",
    "electric",
    "multiscale_true",
    "multiscale_reduced",
];

/// Right-hand side `f` of an autonomous system `dx/dt = f(x)`.
pub type Rhs = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Auxiliary outputs resolved algebraically from the state (DAE observables).
#[derive(Clone)]
pub struct AlgebraicOutputs {
    pub names: Vec<&'static str>,
    f: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
}

impl AlgebraicOutputs {
    pub fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        (self.f)(x)
    }
}

/// An autonomous ODE system with a sampling domain.
#[derive(Clone)]
pub struct SystemSpec {
    pub name: String,
    pub dim: usize,
    rhs: Rhs,
    /// Axis-aligned sampling box, one `(lo, hi)` per dimension.
    pub domain: Vec<(f64, f64)>,
    pub algebraic: Option<AlgebraicOutputs>,
    /// Natural snapshot lag for this system's dynamics.
    pub default_lag: f64,
    /// RK4 substeps per lag that resolve this system's fastest timescale.
    pub default_substeps: usize,
}

impl SystemSpec {
    /// Define a custom system. Custom systems work everywhere except model
    /// bundles that must be reloadable by name (reduced-ODE priors).
    pub fn custom(
        name: impl Into<String>,
        dim: usize,
        domain: Vec<(f64, f64)>,
        default_lag: f64,
        rhs: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Result<Self> {
        let spec = SystemSpec {
            name: name.into(),
            dim,
            rhs: Arc::new(rhs),
            domain,
            algebraic: None,
            default_lag,
            default_substeps: 10,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("system dimension must be at least 1".into()));
        }
        if self.domain.len() != self.dim {
            return Err(Error::Config(format!(
                "system `{}` has {} domain bounds for dimension {}",
                self.name,
                self.domain.len(),
                self.dim
            )));
        }
        for &(lo, hi) in &self.domain {
            if !(lo < hi) {
                return Err(Error::Config(format!(
                    "system `{}` domain bound ({lo}, {hi}) is not an interval",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// Evaluate the vector field at `x` into `dxdt`.
    pub fn rhs(&self, x: &[f64], dxdt: &mut [f64]) {
        (self.rhs)(x, dxdt)
    }

    /// Replace the sampling domain (dimension must be preserved).
    pub fn with_domain(mut self, domain: Vec<(f64, f64)>) -> Result<Self> {
        self.domain = domain;
        self.validate()?;
        Ok(self)
    }
}

/// Look up one of the built-in reference systems by name.
pub fn builtin_system(name: &str) -> Result<SystemSpec> {
    let spec = match name {
        // dx1 = x1 - 4 x2, dx2 = 4 x1 - 7 x2 (homogeneous linear)
        "linear1" => SystemSpec {
            name: "linear1".into(),
            dim: 2,
            rhs: Arc::new(|x, d| {
                d[0] = x[0] - 4.0 * x[1];
                d[1] = 4.0 * x[0] - 7.0 * x[1];
            }),
            domain: vec![(0.0, 2.0), (0.0, 2.0)],
            algebraic: None,
            default_lag: 0.1,
            default_substeps: 10,
        },
        // dx1 = x1 + x2 - 2, dx2 = x1 - x2 (affine: constant forcing term)
        "linear2" => SystemSpec {
            name: "linear2".into(),
            dim: 2,
            rhs: Arc::new(|x, d| {
                d[0] = x[0] + x[1] - 2.0;
                d[1] = x[0] - x[1];
            }),
            domain: vec![(0.0, 2.0), (0.0, 2.0)],
            algebraic: None,
            default_lag: 0.1,
            default_substeps: 10,
        },
        // linear2 plus a weak nonlinearity: dx2 gains 0.5 sin(x2)
        "linear3_nonlin" => SystemSpec {
            name: "linear3_nonlin".into(),
            dim: 2,
            rhs: Arc::new(|x, d| {
                d[0] = x[0] + x[1] - 2.0;
                d[1] = x[0] - x[1] + 0.5 * x[1].sin();
            }),
            domain: vec![(0.0, 3.0), (0.0, 3.0)],
            algebraic: None,
            default_lag: 0.1,
            default_substeps: 10,
        },
        // Damped pendulum: dx1 = x2, dx2 = -alpha x2 - beta sin(x1)
        "pendulum" => SystemSpec {
            name: "pendulum".into(),
            dim: 2,
            rhs: Arc::new(|x, d| {
                const ALPHA: f64 = 0.2;
                const BETA: f64 = 8.91;
                d[0] = x[1];
                d[1] = -ALPHA * x[1] - BETA * x[0].sin();
            }),
            domain: vec![
                (-std::f64::consts::PI, std::f64::consts::PI),
                (-2.0 * std::f64::consts::PI, 2.0 * std::f64::consts::PI),
            ],
            algebraic: None,
            default_lag: 0.1,
            default_substeps: 10,
        },
        // Nonlinear electric network. Differential variables are the capacitor
        // voltage u1 and inductor current u2; the resistor branch quantities
        // (v1, v2) follow algebraically from the two constraint equations and
        // are exposed as observables.
        "electric" => {
            const C: f64 = 1e-9;
            const L: f64 = 1e-6;
            const U0: f64 = 1.0;
            const G0: f64 = -0.1;
            const GINF: f64 = 0.25;
            fn branch(u1: f64, u2: f64) -> (f64, f64) {
                let v1 = (G0 - GINF) * U0 * (u1 / U0).tanh() + GINF * u1;
                let v2 = -u2 - v1;
                (v1, v2)
            }
            SystemSpec {
                name: "electric".into(),
                dim: 2,
                rhs: Arc::new(|x, d| {
                    let (_v1, v2) = branch(x[0], x[1]);
                    d[0] = v2 / C;
                    d[1] = x[0] / L;
                }),
                domain: vec![(-2.0, 2.0), (-0.2, 0.2)],
                algebraic: Some(AlgebraicOutputs {
                    names: vec!["v1", "v2"],
                    f: Arc::new(|x| {
                        let (v1, v2) = branch(x[0], x[1]);
                        vec![v1, v2]
                    }),
                }),
                default_lag: 2e-9,
                default_substeps: 10,
            }
        }
        // Slow-fast system: three slow variables plus a fast variable y that
        // relaxes toward x1*x3 on the timescale eps = 0.1.
        "multiscale_true" => {
            const EPS: f64 = 0.1;
            SystemSpec {
                name: "multiscale_true".into(),
                dim: 4,
                rhs: Arc::new(|x, d| {
                    d[0] = -x[1] - x[2];
                    d[1] = x[0] + x[1] / 5.0;
                    d[2] = 1.0 / 5.0 + x[3] - 5.0 * x[2];
                    d[3] = -x[3] / EPS + x[0] * x[2] / EPS;
                }),
                domain: vec![(-15.0, 15.0), (-15.0, 10.0), (-5.0, 25.0), (-30.0, 140.0)],
                algebraic: None,
                default_lag: 0.05,
                // The fast variable lives on timescale eps; resolve it.
                default_substeps: 50,
            }
        }
        // The slow subsystem obtained by replacing y with its equilibrium
        // value x1*x3 (a Rossler-type chaotic system).
        "multiscale_reduced" => SystemSpec {
            name: "multiscale_reduced".into(),
            dim: 3,
            rhs: Arc::new(|x, d| {
                d[0] = -x[1] - x[2];
                d[1] = x[0] + x[1] / 5.0;
                d[2] = 1.0 / 5.0 + x[2] * (x[0] - 5.0);
            }),
            domain: vec![(-15.0, 15.0), (-15.0, 10.0), (-5.0, 25.0)],
            algebraic: None,
            default_lag: 0.05,
            default_substeps: 10,
        },
        other => return Err(Error::UnknownSystem(other.into())),
    };
    debug_assert!(spec.validate().is_ok());
    Ok(spec)
}

// ---- integration ----------------------------------------------------------

/// One classical 4th-order Runge-Kutta step of size `h` (local error O(h^5)).
///
/// Fails if any stage produces a non-finite value; the reported `t` is the
/// offset from the step's start (callers embedding this in a longer
/// integration rewrite it to absolute time).
pub fn rk4_step<F: Fn(&[f64], &mut [f64])>(rhs: F, x: &[f64], h: f64) -> Result<Vec<f64>> {
    assert!(h > 0.0, "step size must be positive");
    let n = x.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut stage = vec![0.0; n];

    let check = |v: &[f64], t: f64| -> Result<()> {
        if v.iter().all(|c| c.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFiniteState { t, state: v.to_vec() })
        }
    };

    rhs(x, &mut k1);
    check(&k1, 0.0)?;
    for i in 0..n {
        stage[i] = x[i] + 0.5 * h * k1[i];
    }
    rhs(&stage, &mut k2);
    check(&k2, 0.5 * h)?;
    for i in 0..n {
        stage[i] = x[i] + 0.5 * h * k2[i];
    }
    rhs(&stage, &mut k3);
    check(&k3, 0.5 * h)?;
    for i in 0..n {
        stage[i] = x[i] + h * k3[i];
    }
    rhs(&stage, &mut k4);
    check(&k4, h)?;

    let mut out = vec![0.0; n];
    for i in 0..n {
        out[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    check(&out, h)?;
    Ok(out)
}

/// Advance `x` by one lag using `substeps` composed RK4 steps of size `lag/m`.
pub fn advance(system: &SystemSpec, x: &StateVector, lag: f64, substeps: usize) -> Result<StateVector> {
    x.check_dim(system.dim)?;
    if !(lag > 0.0) {
        return Err(Error::Config(format!("lag must be positive, got {lag}")));
    }
    if substeps == 0 {
        return Err(Error::Config("substeps must be at least 1".into()));
    }
    let h = lag / substeps as f64;
    let mut cur = x.as_slice().to_vec();
    for i in 0..substeps {
        cur = rk4_step(|x, d| system.rhs(x, d), &cur, h).map_err(|e| match e {
            Error::NonFiniteState { t, state } => Error::NonFiniteState {
                t: i as f64 * h + t,
                state,
            },
            other => other,
        })?;
    }
    Ok(StateVector::new(cur))
}

/// Integrate a reference trajectory: `steps + 1` states at times
/// `0, lag, ..., steps * lag`, each lag resolved by `substeps` RK4 steps.
pub fn integrate_trajectory(
    system: &SystemSpec,
    x0: &StateVector,
    lag: f64,
    steps: usize,
    substeps: usize,
) -> Result<Trajectory> {
    let mut states = Vec::with_capacity(steps + 1);
    states.push(x0.clone());
    for k in 0..steps {
        let next = advance(system, states.last().unwrap(), lag, substeps).map_err(|e| match e {
            Error::NonFiniteState { t, state } => Error::NonFiniteState {
                t: k as f64 * lag + t,
                state,
            },
            other => other,
        })?;
        states.push(next);
    }
    Ok(Trajectory::from_lag(lag, states))
}

// ---- data generation ------------------------------------------------------

/// How to sample a snapshot pair set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplingConfig {
    pub num_pairs: usize,
    pub lag: f64,
    /// Relative noise fraction; per-component std is `noise_level * half-width`.
    pub noise_level: f64,
    pub seed: u64,
    pub substeps: usize,
}

impl SamplingConfig {
    fn validate(&self) -> Result<()> {
        if self.num_pairs == 0 {
            return Err(Error::Config("num_pairs must be at least 1".into()));
        }
        if !(self.lag > 0.0) {
            return Err(Error::Config(format!("lag must be positive, got {}", self.lag)));
        }
        if !(self.noise_level >= 0.0) {
            return Err(Error::Config(format!(
                "noise_level must be non-negative, got {}",
                self.noise_level
            )));
        }
        if self.substeps == 0 {
            return Err(Error::Config("substeps must be at least 1".into()));
        }
        Ok(())
    }
}

/// splitmix64 finalizer; spreads (seed, index) into well-separated RNG seeds.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent RNG substream for one pair index. Pairs can be generated in any
/// order (or in parallel) and still produce identical data.
fn pair_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    ChaCha8Rng::seed_from_u64(mix64(z))
}

/// Generate snapshot pairs by uniform sampling of `x1` over the system domain.
///
/// `x2 = advance(x1, lag)` is computed from the clean `x1`; when
/// `noise_level > 0` both stored states are then perturbed componentwise by
/// `Normal(0, noise_level * half_width)`. Identical seeds give bit-identical
/// data sets.
pub fn generate_pairs(system: &SystemSpec, cfg: &SamplingConfig) -> Result<SnapshotPairSet> {
    cfg.validate()?;
    let n = system.dim;
    let noise: Option<Vec<Normal<f64>>> = if cfg.noise_level > 0.0 {
        Some(
            system
                .domain
                .iter()
                .map(|&(lo, hi)| {
                    Normal::new(0.0, cfg.noise_level * 0.5 * (hi - lo))
                        .expect("positive std by construction")
                })
                .collect(),
        )
    } else {
        None
    };

    let mut pairs = Vec::with_capacity(cfg.num_pairs);
    for j in 0..cfg.num_pairs {
        let mut rng = pair_rng(cfg.seed, j as u64);
        let mut x1 = Vec::with_capacity(n);
        for &(lo, hi) in &system.domain {
            x1.push(rng.random_range(lo..hi));
        }
        let x1 = StateVector::new(x1);
        let x2 = advance(system, &x1, cfg.lag, cfg.substeps)?;
        let (x1, x2) = if let Some(dists) = &noise {
            let perturb = |s: &StateVector, rng: &mut ChaCha8Rng| {
                StateVector::new(
                    s.iter()
                        .zip(dists)
                        .map(|(&v, d)| v + d.sample(rng))
                        .collect(),
                )
            };
            let x1n = perturb(&x1, &mut rng);
            let x2n = perturb(&x2, &mut rng);
            (x1n, x2n)
        } else {
            (x1, x2)
        };
        pairs.push(SnapshotPair { x1, x2 });
    }

    let mut set = SnapshotPairSet::new(cfg.lag, pairs)?;
    set.origin = DataOrigin {
        system: system.name.clone(),
        noise_level: cfg.noise_level,
        seed: cfg.seed,
    };
    Ok(set)
}

// ---- snapshot file format -------------------------------------------------
//
// Plain-text columnar format, one pair per row (x1 then x2), with a single
// comment header recording the provenance:
//
//   # system=linear2 n=2 lag=1.0000000000000001e-1 noise=0e0 seed=7 count=100
//   1.23e0 4.56e-1 ... (2n columns)
//
// Numbers are written with 17 significant digits so the round-trip is bit-exact.

/// Format an f64 with enough digits to round-trip exactly.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write a snapshot pair set to `path` in the columnar text format.
pub fn write_pairs(set: &SnapshotPairSet, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!(
        "# system={} n={} lag={} noise={} seed={} count={}\n",
        set.origin.system,
        set.dim(),
        fmt_f64(set.lag()),
        fmt_f64(set.origin.noise_level),
        set.origin.seed,
        set.count()
    ));
    for pair in set.iter() {
        let row: Vec<String> = pair
            .x1
            .iter()
            .chain(pair.x2.iter())
            .map(|&v| fmt_f64(v))
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read a snapshot pair set previously written by [`write_pairs`].
pub fn read_pairs(path: impl AsRef<Path>) -> Result<SnapshotPairSet> {
    const WHAT: &str = "snapshot pair file";
    let file = fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();

    let header = lines
        .next()
        .ok_or_else(|| Error::format(WHAT, 1, "missing header line"))??;
    let header = header
        .strip_prefix('#')
        .ok_or_else(|| Error::format(WHAT, 1, "header must start with '#'"))?;
    let mut system = String::from("custom");
    let mut n: Option<usize> = None;
    let mut lag: Option<f64> = None;
    let mut noise = 0.0_f64;
    let mut seed = 0_u64;
    let mut count: Option<usize> = None;
    for token in header.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| Error::format(WHAT, 1, format!("bad header token `{token}`")))?;
        match key {
            "system" => system = value.to_string(),
            "n" => n = Some(parse_num(WHAT, 1, value)?),
            "lag" => lag = Some(parse_num(WHAT, 1, value)?),
            "noise" => noise = parse_num(WHAT, 1, value)?,
            "seed" => seed = parse_num(WHAT, 1, value)?,
            "count" => count = Some(parse_num(WHAT, 1, value)?),
            _ => {} // tolerate extra metadata
        }
    }
    let n = n.ok_or_else(|| Error::format(WHAT, 1, "header missing n"))?;
    let lag = lag.ok_or_else(|| Error::format(WHAT, 1, "header missing lag"))?;

    let mut pairs = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| parse_num(WHAT, lineno, t))
            .collect::<Result<_>>()?;
        if vals.len() != 2 * n {
            return Err(Error::format(
                WHAT,
                lineno,
                format!("expected {} columns, found {}", 2 * n, vals.len()),
            ));
        }
        pairs.push(SnapshotPair {
            x1: StateVector::new(vals[..n].to_vec()),
            x2: StateVector::new(vals[n..].to_vec()),
        });
    }
    if let Some(c) = count {
        if c != pairs.len() {
            return Err(Error::format(
                WHAT,
                1,
                format!("header count {} does not match {} data rows", c, pairs.len()),
            ));
        }
    }
    let mut set = SnapshotPairSet::new(lag, pairs)?;
    set.origin = DataOrigin {
        system,
        noise_level: noise,
        seed,
    };
    Ok(set)
}

pub(crate) fn parse_num<T: std::str::FromStr>(
    what: &'static str,
    line: usize,
    token: &str,
) -> Result<T> {
    token
        .parse()
        .map_err(|_| Error::format(what, line, format!("cannot parse `{token}`")))
}
