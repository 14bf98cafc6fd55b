//! Prior flow-map models: the cheap approximation `L` that a trained
//! correction network is later added to.
//!
//! Five constructions are provided, ordered roughly by how much knowledge of
//! the system they assume:
//!
//! * **identity** — no knowledge at all; the corrected model degenerates to a
//!   plain residual network.
//! * **DMD** — best linear map `x2 ≈ A·x1` in the least-squares sense.
//! * **modified DMD** — best affine map `x2 ≈ A·x1 + b`; the constant column
//!   absorbs non-homogeneous terms a pure linear fit cannot represent.
//! * **reduced ODE** — integrate a known approximate model over one lag and
//!   embed the result back into the full state.
//! * **shallow network** — a small single-hidden-layer net fitted to the raw
//!   pairs; an adaptive prior for systems with no usable analytic structure.
//!
//! All fitted priors are immutable; fitting returns a [`FitReport`] whose
//! residues are exactly the targets the correction network will see.

use std::fs;
use std::path::Path;

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mlp::{self, MlpParams, TrainConfig, TrainRecord};
use crate::ode::{advance, builtin_system, fmt_f64, SystemSpec};
use crate::state::{SnapshotPairSet, StateVector};
use crate::textio::LineCursor;

/// Relative cutoff for discarding singular values in the least-squares solve:
/// anything below `PINV_REL_TOL * sigma_max` is treated as rank loss rather
/// than inverted into noise.
pub const PINV_REL_TOL: f64 = 1e-12;

/// A fitted affine step `x -> A·x + b` at a fixed lag.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineMap {
    a: DMatrix<f64>,
    b: DVector<f64>,
    lag: f64,
}

impl AffineMap {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, lag: f64) -> Result<Self> {
        if !a.is_square() || a.nrows() != b.len() {
            return Err(Error::Config(format!(
                "affine map shapes disagree: A is {}x{}, b has length {}",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        if a.nrows() == 0 {
            return Err(Error::Config("affine map dimension must be at least 1".into()));
        }
        if !(lag > 0.0) || !lag.is_finite() {
            return Err(Error::Config(format!("lag must be positive and finite, got {lag}")));
        }
        if a.iter().any(|v| !v.is_finite()) || b.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("affine map entries must be finite".into()));
        }
        Ok(AffineMap { a, b, lag })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn lag(&self) -> f64 {
        self.lag
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    /// Evaluate `A·x + b`.
    pub fn apply(&self, x: &StateVector) -> Result<StateVector> {
        x.check_dim(self.dim())?;
        let xv = DVector::from_column_slice(x.as_slice());
        let y = &self.a * xv + &self.b;
        Ok(StateVector::new(y.iter().copied().collect()))
    }

    /// Eigenvalues of the linear part (read-only diagnostic; for a map fitted
    /// to flow data these approximate `exp(lambda_i * lag)` of the underlying
    /// generator).
    pub fn eigenvalues(&self) -> Vec<Complex<f64>> {
        self.a.complex_eigenvalues().iter().copied().collect()
    }

    /// Append the text form: first line `n lag`, then n rows of the n+1
    /// columns of `[A | b]` in full precision.
    pub fn write_text(&self, out: &mut String) {
        let n = self.dim();
        out.push_str(&format!("{n} {}\n", fmt_f64(self.lag)));
        for r in 0..n {
            let mut row: Vec<String> = (0..n).map(|c| fmt_f64(self.a[(r, c)])).collect();
            row.push(fmt_f64(self.b[r]));
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    }

    pub(crate) fn read_text(cur: &mut LineCursor) -> Result<Self> {
        let header = cur.next_line()?;
        let mut tokens = header.split_whitespace();
        let n: usize = match tokens.next() {
            Some(t) => t
                .parse()
                .map_err(|_| cur.error(format!("bad dimension `{t}`")))?,
            None => return Err(cur.error("missing dimension")),
        };
        let lag: f64 = match tokens.next() {
            Some(t) => t.parse().map_err(|_| cur.error(format!("bad lag `{t}`")))?,
            None => return Err(cur.error("missing lag")),
        };
        if tokens.next().is_some() {
            return Err(cur.error("expected exactly `n lag` on the header line"));
        }
        let mut a = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);
        for r in 0..n {
            let vals: Vec<f64> = cur.next_exact(n + 1)?;
            for c in 0..n {
                a[(r, c)] = vals[c];
            }
            b[r] = vals[n];
        }
        AffineMap::new(a, b, lag)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = String::new();
        self.write_text(&mut text);
        fs::write(path, text)?;
        Ok(())
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cur = LineCursor::new("affine map file", &text);
        Self::read_text(&mut cur)
    }
}

/// Diagnostics from fitting a prior to snapshot data.
///
/// `residues[j]` is `x2_j - L(x1_j)` — exactly the target the correction
/// network will be trained on if this prior is used.
#[derive(Clone, Debug)]
pub struct FitReport {
    pub residues: Vec<StateVector>,
    /// `sqrt(mean_j |residue_j|^2)`.
    pub rms_residue: f64,
    /// Largest per-pair residue norm.
    pub max_residue: f64,
    /// True when the least-squares data matrix lost rank (singular values
    /// truncated, or fewer pairs than unknowns). The minimum-norm solution is
    /// still returned; this flag just says the fit is not unique.
    pub rank_deficient: bool,
    /// Effective rank of the data matrix (affine fits only).
    pub rank: Option<usize>,
    /// Its singular values, descending (affine fits only).
    pub singular_values: Vec<f64>,
    /// Relative truncation tolerance the pseudo-inverse used (affine fits only).
    pub pinv_rel_tol: Option<f64>,
}

impl FitReport {
    /// Build a report from residues alone (no least-squares diagnostics).
    pub(crate) fn from_residues(residues: Vec<StateVector>) -> Self {
        let count = residues.len().max(1);
        let sum_sq: f64 = residues.iter().map(|r| r.norm() * r.norm()).sum();
        let max = residues.iter().map(|r| r.norm()).fold(0.0_f64, f64::max);
        FitReport {
            residues,
            rms_residue: (sum_sq / count as f64).sqrt(),
            max_residue: max,
            rank_deficient: false,
            rank: None,
            singular_values: Vec::new(),
            pinv_rel_tol: None,
        }
    }
}

/// Moore–Penrose pseudo-inverse via SVD with relative truncation; also
/// returns the effective rank and the singular values (descending).
fn svd_pinv(m: &DMatrix<f64>) -> (DMatrix<f64>, usize, Vec<f64>) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd requested u");
    let vt = svd.v_t.expect("svd requested v_t");
    let sigma = &svd.singular_values;
    let sigma_max = sigma.iter().copied().fold(0.0_f64, f64::max);
    let tol = PINV_REL_TOL * sigma_max;
    let mut rank = 0;
    let mut sigma_inv = DMatrix::zeros(sigma.len(), sigma.len());
    for (i, &s) in sigma.iter().enumerate() {
        if s > tol && s > 0.0 {
            sigma_inv[(i, i)] = 1.0 / s;
            rank += 1;
        }
    }
    let pinv = vt.transpose() * sigma_inv * u.transpose();
    let mut values: Vec<f64> = sigma.iter().copied().collect();
    values.sort_by(|a, b| b.partial_cmp(a).unwrap());
    (pinv, rank, values)
}

/// Shared least-squares core for [`fit_dmd`] and [`fit_mdmd`]: solve
/// `X2 ≈ C · X1~` where `X1~` is the input matrix, optionally lifted with a
/// row of ones so the last column of `C` becomes the constant term.
fn fit_affine(data: &SnapshotPairSet, with_constant: bool) -> Result<(AffineMap, FitReport)> {
    let n = data.dim();
    let j = data.count();
    let rows = if with_constant { n + 1 } else { n };

    let mut x1 = DMatrix::zeros(rows, j);
    let mut x2 = DMatrix::zeros(n, j);
    for (c, pair) in data.iter().enumerate() {
        for r in 0..n {
            x1[(r, c)] = pair.x1[r];
            x2[(r, c)] = pair.x2[r];
        }
        if with_constant {
            x1[(n, c)] = 1.0;
        }
    }

    let (pinv, rank, singular_values) = svd_pinv(&x1);
    let coeffs = &x2 * pinv; // n x rows
    let a = coeffs.columns(0, n).into_owned();
    let b = if with_constant {
        coeffs.column(n).into_owned()
    } else {
        DVector::zeros(n)
    };
    let map = AffineMap::new(a, b, data.lag())?;

    let resid_matrix = &x2 - coeffs * &x1;
    let residues: Vec<StateVector> = (0..j)
        .map(|c| StateVector::new(resid_matrix.column(c).iter().copied().collect()))
        .collect();
    let mut report = FitReport::from_residues(residues);
    report.rank_deficient = rank < rows;
    report.rank = Some(rank);
    report.singular_values = singular_values;
    report.pinv_rel_tol = Some(PINV_REL_TOL);
    Ok((map, report))
}

/// Dynamic mode decomposition: the best pure-linear map `x2 ≈ A·x1`
/// (`b` forced to zero). Minimum-norm solution under rank deficiency.
pub fn fit_dmd(data: &SnapshotPairSet) -> Result<(AffineMap, FitReport)> {
    fit_affine(data, false)
}

/// Modified DMD: the best affine map `x2 ≈ A·x1 + b`, solved by lifting the
/// inputs with a row of ones so `[A | b] = X2 · X1~⁺` in one least-squares
/// solve. Always at least as good as [`fit_dmd`] in rms residue.
pub fn fit_mdmd(data: &SnapshotPairSet) -> Result<(AffineMap, FitReport)> {
    fit_affine(data, true)
}

/// A prior that advances selected state components with a known approximate
/// ODE and passes the remaining components through untouched.
#[derive(Clone)]
pub struct ReducedOdePrior {
    reduced: SystemSpec,
    full_dim: usize,
    lag: f64,
    substeps: usize,
    /// `lift[i]` is the full-state index holding reduced component `i`.
    lift: Vec<usize>,
}

impl ReducedOdePrior {
    pub fn reduced_system(&self) -> &SystemSpec {
        &self.reduced
    }

    pub fn lift(&self) -> &[usize] {
        &self.lift
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    /// Integrate the reduced model over one lag for the lifted components;
    /// untouched components come back bitwise unchanged.
    pub fn apply(&self, x: &StateVector) -> Result<StateVector> {
        x.check_dim(self.full_dim)?;
        let projected = StateVector::new(self.lift.iter().map(|&i| x[i]).collect());
        let advanced = advance(&self.reduced, &projected, self.lag, self.substeps)?;
        let mut out = x.as_slice().to_vec();
        for (r, &i) in self.lift.iter().enumerate() {
            out[i] = advanced[r];
        }
        Ok(StateVector::new(out))
    }
}

/// Embed a reduced ODE model as a prior on a larger state space.
///
/// `lift` names the full-state component carrying each reduced component; it
/// must be injective. Components not named in `lift` pass through unchanged.
pub fn make_reduced_ode_prior(
    reduced: SystemSpec,
    full_dim: usize,
    lag: f64,
    substeps: usize,
    lift: Vec<usize>,
) -> Result<PriorOperator> {
    if reduced.dim > full_dim {
        return Err(Error::Config(format!(
            "reduced system dimension {} exceeds full state dimension {full_dim}",
            reduced.dim
        )));
    }
    if lift.len() != reduced.dim {
        return Err(Error::Config(format!(
            "lift map has {} indices for a {}-dimensional reduced system",
            lift.len(),
            reduced.dim
        )));
    }
    let mut seen = vec![false; full_dim];
    for &i in &lift {
        if i >= full_dim {
            return Err(Error::Config(format!(
                "lift index {i} out of range for dimension {full_dim}"
            )));
        }
        if seen[i] {
            return Err(Error::Config(format!("lift index {i} repeated")));
        }
        seen[i] = true;
    }
    if !(lag > 0.0) || !lag.is_finite() {
        return Err(Error::Config(format!("lag must be positive and finite, got {lag}")));
    }
    if substeps == 0 {
        return Err(Error::Config("substeps must be at least 1".into()));
    }
    Ok(PriorOperator::ReducedOde(ReducedOdePrior {
        reduced,
        full_dim,
        lag,
        substeps,
        lift,
    }))
}

/// A single-hidden-layer network acting as the prior.
#[derive(Clone, Debug, PartialEq)]
pub struct ShallowNetPrior {
    pub net: MlpParams,
    pub lag: f64,
}

/// Result of [`fit_shallow_prior`]: the wrapped prior plus the residues it
/// leaves behind and its own training record.
pub struct ShallowPriorFit {
    pub prior: PriorOperator,
    pub report: FitReport,
    pub record: TrainRecord,
}

/// Fit an adaptive prior: train a `[n, width, n]` tanh network directly on
/// the snapshot pairs. Meant to be cheap — give it a smaller epoch budget
/// than the correction network that trains after it.
pub fn fit_shallow_prior(
    data: &SnapshotPairSet,
    width: usize,
    cfg: &TrainConfig,
) -> Result<ShallowPriorFit> {
    if width == 0 {
        return Err(Error::Config("shallow prior width must be at least 1".into()));
    }
    let n = data.dim();
    let pairs: Vec<(StateVector, StateVector)> = data
        .iter()
        .map(|p| (p.x1.clone(), p.x2.clone()))
        .collect();
    let init = mlp::init_network(&[n, width, n], cfg.init_seed);
    let (net, record) = mlp::train(&init, &pairs, cfg)?;
    if let Some(epoch) = record.diverged {
        return Err(Error::TrainingDiverged { epoch });
    }
    let residues: Vec<StateVector> = data
        .iter()
        .map(|p| Ok(&p.x2 - &net.forward(&p.x1)?))
        .collect::<Result<_>>()?;
    Ok(ShallowPriorFit {
        prior: PriorOperator::ShallowNet(ShallowNetPrior {
            net,
            lag: data.lag(),
        }),
        report: FitReport::from_residues(residues),
        record,
    })
}

/// A prior flow-map model `L`, ready to be corrected by a trained network.
#[derive(Clone)]
pub enum PriorOperator {
    /// `L(x) = x`; corrected model is a plain residual network.
    Identity { dim: usize },
    /// Fitted linear map (`b = 0`).
    Dmd(AffineMap),
    /// Fitted affine map.
    Mdmd(AffineMap),
    /// One-lag integration of a known reduced model.
    ReducedOde(ReducedOdePrior),
    /// Small fitted network.
    ShallowNet(ShallowNetPrior),
}

impl PriorOperator {
    /// The kind tag used in config files and model bundles.
    pub fn kind_name(&self) -> &'static str {
        match self {
            PriorOperator::Identity { .. } => "identity",
            PriorOperator::Dmd(_) => "dmd",
            PriorOperator::Mdmd(_) => "mdmd",
            PriorOperator::ReducedOde(_) => "reduced_ode",
            PriorOperator::ShallowNet(_) => "shallow_net",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            PriorOperator::Identity { dim } => *dim,
            PriorOperator::Dmd(m) | PriorOperator::Mdmd(m) => m.dim(),
            PriorOperator::ReducedOde(p) => p.full_dim,
            PriorOperator::ShallowNet(p) => p.net.input_dim(),
        }
    }

    /// The lag this prior models one step of. `None` for the identity prior,
    /// which is lag-agnostic.
    pub fn lag(&self) -> Option<f64> {
        match self {
            PriorOperator::Identity { .. } => None,
            PriorOperator::Dmd(m) | PriorOperator::Mdmd(m) => Some(m.lag()),
            PriorOperator::ReducedOde(p) => Some(p.lag),
            PriorOperator::ShallowNet(p) => Some(p.lag),
        }
    }

    /// One prior step `L(x)`.
    pub fn apply(&self, x: &StateVector) -> Result<StateVector> {
        match self {
            PriorOperator::Identity { dim } => {
                x.check_dim(*dim)?;
                Ok(x.clone())
            }
            PriorOperator::Dmd(m) | PriorOperator::Mdmd(m) => m.apply(x),
            PriorOperator::ReducedOde(p) => p.apply(x),
            PriorOperator::ShallowNet(p) => p.net.forward(x),
        }
    }

    /// The fitted affine map, when this prior has one.
    pub fn affine(&self) -> Option<&AffineMap> {
        match self {
            PriorOperator::Dmd(m) | PriorOperator::Mdmd(m) => Some(m),
            _ => None,
        }
    }

    /// Append the tagged text form: kind name on the first line, then the
    /// kind's own payload.
    pub fn write_text(&self, out: &mut String) -> Result<()> {
        out.push_str(self.kind_name());
        out.push('\n');
        match self {
            PriorOperator::Identity { dim } => {
                out.push_str(&format!("{dim}\n"));
            }
            PriorOperator::Dmd(m) | PriorOperator::Mdmd(m) => {
                m.write_text(out);
            }
            PriorOperator::ReducedOde(p) => {
                if builtin_system(&p.reduced.name).is_err() {
                    return Err(Error::Config(format!(
                        "reduced-ODE prior over custom system `{}` cannot be serialized; \
                         only built-in systems reload by name",
                        p.reduced.name
                    )));
                }
                out.push_str(&format!(
                    "{} {} {} {}\n",
                    p.reduced.name,
                    p.full_dim,
                    fmt_f64(p.lag),
                    p.substeps
                ));
                let lift: Vec<String> = p.lift.iter().map(|i| i.to_string()).collect();
                out.push_str(&lift.join(" "));
                out.push('\n');
            }
            PriorOperator::ShallowNet(p) => {
                out.push_str(&format!("{}\n", fmt_f64(p.lag)));
                p.net.write_text(out);
            }
        }
        Ok(())
    }

    pub(crate) fn read_text(cur: &mut LineCursor) -> Result<Self> {
        let kind = cur.next_line()?.trim().to_string();
        match kind.as_str() {
            "identity" => {
                let dims: Vec<usize> = cur.next_exact(1)?;
                if dims[0] == 0 {
                    return Err(cur.error("identity prior dimension must be at least 1"));
                }
                Ok(PriorOperator::Identity { dim: dims[0] })
            }
            "dmd" => Ok(PriorOperator::Dmd(AffineMap::read_text(cur)?)),
            "mdmd" => Ok(PriorOperator::Mdmd(AffineMap::read_text(cur)?)),
            "reduced_ode" => {
                let header = cur.next_line()?.to_string();
                let tokens: Vec<&str> = header.split_whitespace().collect();
                if tokens.len() != 4 {
                    return Err(cur.error("expected `system full_dim lag substeps`"));
                }
                let reduced = builtin_system(tokens[0])?;
                let full_dim: usize = tokens[1]
                    .parse()
                    .map_err(|_| cur.error(format!("bad dimension `{}`", tokens[1])))?;
                let lag: f64 = tokens[2]
                    .parse()
                    .map_err(|_| cur.error(format!("bad lag `{}`", tokens[2])))?;
                let substeps: usize = tokens[3]
                    .parse()
                    .map_err(|_| cur.error(format!("bad substeps `{}`", tokens[3])))?;
                let lift: Vec<usize> = cur.next_exact(reduced.dim)?;
                make_reduced_ode_prior(reduced, full_dim, lag, substeps, lift)
            }
            "shallow_net" => {
                let lags: Vec<f64> = cur.next_exact(1)?;
                let net = MlpParams::read_text(cur)?;
                if net.input_dim() != net.output_dim() {
                    return Err(cur.error("shallow prior network must map n -> n"));
                }
                Ok(PriorOperator::ShallowNet(ShallowNetPrior {
                    net,
                    lag: lags[0],
                }))
            }
            other => Err(cur.error(format!(
                "unknown prior kind `{other}` (expected identity, dmd, mdmd, reduced_ode, or shallow_net)"
            ))),
        }
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = String::new();
        self.write_text(&mut text)?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cur = LineCursor::new("prior file", &text);
        Self::read_text(&mut cur)
    }
}
