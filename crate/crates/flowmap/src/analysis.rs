//! Evaluation metrics: trajectory error summaries, the correction-network
//! norm, and power spectral density for long-horizon phase fidelity.
//!
//! Error metrics compare a predicted trajectory against a reference computed
//! by direct integration. For chaotic systems pointwise errors saturate
//! quickly no matter how good the model is, so the spectrum tools quantify
//! the weaker (and more honest) question of whether the prediction keeps the
//! right dominant frequencies.

use std::fs;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::gresnet::GResNetModel;
use crate::mlp;
use crate::ode::fmt_f64;
use crate::state::{SnapshotPairSet, Trajectory};

/// Pointwise and aggregate distances between two trajectories on a shared
/// time grid.
#[derive(Clone, Debug)]
pub struct ErrorSummary {
    pub times: Vec<f64>,
    /// Euclidean distance between the trajectories at each step.
    pub per_step: Vec<f64>,
    pub max_error: f64,
    pub final_error: f64,
    pub mean_error: f64,
}

fn times_match(index: usize, left: f64, right: f64) -> Result<()> {
    let tol = 1e-9 * left.abs().max(right.abs()).max(1.0);
    if (left - right).abs() > tol {
        return Err(Error::GridMismatch { index, left, right });
    }
    Ok(())
}

/// Per-step Euclidean distances between `predicted` and `reference`, plus
/// their max, final value, and mean. The trajectories must share a time grid.
pub fn trajectory_error(predicted: &Trajectory, reference: &Trajectory) -> Result<ErrorSummary> {
    if predicted.len() != reference.len() {
        return Err(Error::Config(format!(
            "trajectory lengths differ: {} vs {}",
            predicted.len(),
            reference.len()
        )));
    }
    for (i, (&tp, &tr)) in predicted.times().iter().zip(reference.times()).enumerate() {
        times_match(i, tp, tr)?;
    }
    let per_step: Vec<f64> = predicted
        .states()
        .iter()
        .zip(reference.states())
        .map(|(p, r)| p.distance(r))
        .collect();
    let max_error = per_step.iter().copied().fold(0.0_f64, f64::max);
    let final_error = *per_step.last().unwrap();
    let mean_error = per_step.iter().sum::<f64>() / per_step.len() as f64;
    Ok(ErrorSummary {
        times: predicted.times().to_vec(),
        per_step,
        max_error,
        final_error,
        mean_error,
    })
}

/// Size of the learned correction: rms over the probe inputs of the
/// correction network's output norm, `sqrt(mean_j |N(x1_j)|^2)`.
///
/// This measures how much work the network is doing on top of the prior — a
/// better prior leaves a smaller correction. It is a function of the probe
/// set's contents only, not their order.
pub fn network_norm(model: &GResNetModel, probe: &SnapshotPairSet) -> Result<f64> {
    if model.dim() != probe.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            actual: probe.dim(),
        });
    }
    mlp::output_rms(model.correction(), probe.iter().map(|p| &p.x1))
}

/// One-sided power spectral density of a scalar time series.
#[derive(Clone, Debug)]
pub struct Spectrum {
    /// Bin frequencies in cycles per time unit, from 0 to Nyquist.
    pub frequencies: Vec<f64>,
    /// Power at each bin, scaled so that `sum(power) * bin_width` equals the
    /// windowed series' mean square.
    pub power: Vec<f64>,
    /// Sample spacing of the underlying series.
    pub lag: f64,
    /// Frequency of the strongest bin, ignoring the zero-frequency bin.
    pub dominant_frequency: f64,
}

impl Spectrum {
    pub fn bin_width(&self) -> f64 {
        self.frequencies[1] - self.frequencies[0]
    }

    pub fn nyquist(&self) -> f64 {
        *self.frequencies.last().unwrap()
    }
}

/// Minimum series length for [`power_spectrum`].
pub const MIN_SPECTRUM_LEN: usize = 8;

/// Periodogram of a uniformly sampled series: remove the mean, apply a Hann
/// window, take the DFT, and fold to a one-sided spectrum with power scaled
/// by the window energy and the sample spacing.
pub fn power_spectrum(series: &[f64], lag: f64) -> Result<Spectrum> {
    let n = series.len();
    if n < MIN_SPECTRUM_LEN {
        return Err(Error::SeriesTooShort {
            len: n,
            min: MIN_SPECTRUM_LEN,
        });
    }
    if !(lag > 0.0) || !lag.is_finite() {
        return Err(Error::Config(format!(
            "sample spacing must be positive and finite, got {lag}"
        )));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config(
            "series contains non-finite values; truncate before the blow-up".into(),
        ));
    }

    let mean = series.iter().sum::<f64>() / n as f64;
    // Symmetric Hann window; its squared sum normalizes the power scale.
    let window: Vec<f64> = (0..n)
        .map(|k| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * k as f64 / (n - 1) as f64).cos()))
        .collect();
    let window_energy: f64 = window.iter().map(|w| w * w).sum();

    let mut buffer: Vec<Complex<f64>> = series
        .iter()
        .zip(&window)
        .map(|(&x, &w)| Complex::new((x - mean) * w, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buffer);

    // One-sided bins: 0..=n/2 for even n (Nyquist included), 0..=(n-1)/2 for odd.
    let bins = if n % 2 == 0 { n / 2 + 1 } else { (n + 1) / 2 };
    let scale = lag / window_energy;
    let mut frequencies = Vec::with_capacity(bins);
    let mut power = Vec::with_capacity(bins);
    for k in 0..bins {
        let mut p = buffer[k].norm_sqr() * scale;
        // Interior bins carry the energy of their mirrored negative
        // frequency; 0 has no mirror, and for even n neither does Nyquist.
        let is_nyquist = n % 2 == 0 && k == n / 2;
        if k > 0 && !is_nyquist {
            p *= 2.0;
        }
        frequencies.push(k as f64 / (n as f64 * lag));
        power.push(p);
    }

    let mut dominant = 1;
    for k in 2..bins {
        if power[k] > power[dominant] {
            dominant = k;
        }
    }
    Ok(Spectrum {
        dominant_frequency: frequencies[dominant],
        frequencies,
        power,
        lag,
    })
}

/// How similar two spectra are, as a score in `[0, 1]`: the Pearson
/// correlation of their log-powers (each floored 12 decades below its own
/// peak so empty bins do not dominate), clamped at zero.
///
/// The spectra must share a frequency grid. Degenerate all-zero or perfectly
/// flat spectra score 1 against an equally degenerate partner and 0 against
/// anything else.
pub fn spectral_agreement(a: &Spectrum, b: &Spectrum) -> Result<f64> {
    if a.frequencies.len() != b.frequencies.len() {
        return Err(Error::Config(format!(
            "spectra have different bin counts: {} vs {}",
            a.frequencies.len(),
            b.frequencies.len()
        )));
    }
    for (i, (&fa, &fb)) in a.frequencies.iter().zip(&b.frequencies).enumerate() {
        times_match(i, fa, fb)?;
    }

    let peak = |s: &Spectrum| s.power.iter().copied().fold(0.0_f64, f64::max);
    let (pa, pb) = (peak(a), peak(b));
    if pa == 0.0 || pb == 0.0 {
        return Ok(if pa == pb { 1.0 } else { 0.0 });
    }
    let log_floored = |s: &Spectrum, peak: f64| -> Vec<f64> {
        s.power
            .iter()
            .map(|&p| p.max(peak * 1e-12).log10())
            .collect()
    };
    let la = log_floored(a, pa);
    let lb = log_floored(b, pb);

    let center = |v: &[f64]| -> Vec<f64> {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| x - m).collect()
    };
    let ca = center(&la);
    let cb = center(&lb);
    let va: f64 = ca.iter().map(|x| x * x).sum();
    let vb: f64 = cb.iter().map(|x| x * x).sum();
    if va == 0.0 || vb == 0.0 {
        return Ok(if va == vb { 1.0 } else { 0.0 });
    }
    let cov: f64 = ca.iter().zip(&cb).map(|(x, y)| x * y).sum();
    Ok((cov / (va.sqrt() * vb.sqrt())).clamp(0.0, 1.0))
}

fn write_csv(
    path: &Path,
    meta: &[(&str, String)],
    header: &str,
    rows: impl Iterator<Item = (f64, f64)>,
) -> Result<()> {
    let mut out = String::new();
    if !meta.is_empty() {
        let fields: Vec<String> = meta.iter().map(|(k, v)| format!("{k}={v}")).collect();
        out.push_str(&format!("# {}\n", fields.join(" ")));
    }
    out.push_str(header);
    out.push('\n');
    for (x, y) in rows {
        out.push_str(&format!("{},{}\n", fmt_f64(x), fmt_f64(y)));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Export `(time, error)` rows with a `# key=value ...` metadata comment.
pub fn write_error_csv(
    summary: &ErrorSummary,
    meta: &[(&str, String)],
    path: impl AsRef<Path>,
) -> Result<()> {
    write_csv(
        path.as_ref(),
        meta,
        "t,error",
        summary.times.iter().copied().zip(summary.per_step.iter().copied()),
    )
}

/// Export `(frequency, power)` rows with a `# key=value ...` metadata comment.
pub fn write_spectrum_csv(
    spectrum: &Spectrum,
    meta: &[(&str, String)],
    path: impl AsRef<Path>,
) -> Result<()> {
    write_csv(
        path.as_ref(),
        meta,
        "frequency,power",
        spectrum
            .frequencies
            .iter()
            .copied()
            .zip(spectrum.power.iter().copied()),
    )
}
