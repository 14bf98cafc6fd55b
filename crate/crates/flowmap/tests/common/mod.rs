//! Shared test oracles, independent of the library's implementation paths.
//!
//! Everything here is deliberately written from first principles (Taylor-series
//! matrix exponential, normal-equations least squares, naive O(n^2) DFT,
//! central finite differences, a standalone RK4) so library results are checked
//! against genuinely separate code.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Matrix exponential e^M by scaling-and-squaring with a Taylor series.
///
/// Scale M down until its norm is below 0.5, sum the series to machine
/// precision, then square the result back up. Accurate to ~1e-13 for the
/// well-behaved matrices used in tests.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "expm needs a square matrix");
    let norm = m.amax() * n as f64; // cheap upper bound on the induced norm
    let s = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let b = m / 2f64.powi(s as i32);

    let mut sum = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    for k in 1..200 {
        term = (&term * &b) / k as f64;
        sum += &term;
        if term.amax() <= 1e-18 * sum.amax() {
            break;
        }
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// Exact flow map of the affine system dx/dt = M x + c over time t:
/// x(t) = e^{Mt} x0 + M^{-1} (e^{Mt} - I) c. Requires M invertible.
pub fn affine_flow_map(m: &DMatrix<f64>, c: &DVector<f64>, t: f64) -> (DMatrix<f64>, DVector<f64>) {
    let n = m.nrows();
    let a = expm(&(m * t));
    let rhs = (&a - DMatrix::<f64>::identity(n, n)) * c;
    let b = m
        .clone()
        .lu()
        .solve(&rhs)
        .expect("oracle needs an invertible system matrix");
    (a, b)
}

/// Evaluate the exact affine flow at a point.
pub fn affine_flow(m: &DMatrix<f64>, c: &DVector<f64>, x0: &[f64], t: f64) -> Vec<f64> {
    let (a, b) = affine_flow_map(m, c, t);
    let x = DVector::from_column_slice(x0);
    (a * x + b).iter().copied().collect()
}

/// Central finite-difference gradient of a scalar function.
pub fn central_diff_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + h;
        let fp = f(&xp);
        xp[i] = orig - h;
        let fm = f(&xp);
        xp[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Affine least squares [A, b] = argmin sum_j |x2_j - A x1_j - b|^2 solved via
/// dense normal equations (independent of the library's SVD route).
/// Requires the lifted Gram matrix to be invertible (well-conditioned data).
pub fn affine_lstsq_normal_eq(
    x1s: &[Vec<f64>],
    x2s: &[Vec<f64>],
) -> (DMatrix<f64>, DVector<f64>) {
    let j = x1s.len();
    let n = x1s[0].len();
    // Lifted inputs: rows of [x1^T, 1]; solve G W = Z with G = X̃ X̃^T.
    let mut xt = DMatrix::<f64>::zeros(n + 1, j);
    let mut x2 = DMatrix::<f64>::zeros(n, j);
    for (col, (a, b)) in x1s.iter().zip(x2s).enumerate() {
        for row in 0..n {
            xt[(row, col)] = a[row];
            x2[(row, col)] = b[row];
        }
        xt[(n, col)] = 1.0;
    }
    let gram = &xt * xt.transpose();
    let rhs = &x2 * xt.transpose(); // n x (n+1)
    let sol = gram
        .lu()
        .solve(&rhs.transpose())
        .expect("oracle needs well-conditioned data");
    let w = sol.transpose(); // n x (n+1), [A | b]
    let a = w.columns(0, n).into_owned();
    let b = DVector::from_iterator(n, (0..n).map(|r| w[(r, n)]));
    (a, b)
}

/// Naive O(n^2) one-sided Hann periodogram, written directly from the
/// definition: remove the mean, multiply by the Hann window, take the DFT by
/// direct summation, scale |X_k|^2 by lag / (sum of squared window values),
/// and fold negative frequencies into the positive bins.
pub fn naive_periodogram(series: &[f64], lag: f64) -> (Vec<f64>, Vec<f64>) {
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n as f64;
    let window: Vec<f64> = (0..n)
        .map(|k| {
            let x = k as f64 / (n - 1) as f64;
            0.5 * (1.0 - (2.0 * std::f64::consts::PI * x).cos())
        })
        .collect();
    let y: Vec<f64> = series
        .iter()
        .zip(&window)
        .map(|(&v, &w)| (v - mean) * w)
        .collect();
    let wsum2: f64 = window.iter().map(|w| w * w).sum();

    let half = n / 2;
    let mut freqs = Vec::with_capacity(half + 1);
    let mut power = Vec::with_capacity(half + 1);
    for k in 0..=half {
        let mut re = 0.0;
        let mut im = 0.0;
        for (j, &v) in y.iter().enumerate() {
            let ang = -2.0 * std::f64::consts::PI * (k * j) as f64 / n as f64;
            re += v * ang.cos();
            im += v * ang.sin();
        }
        let mut p = (re * re + im * im) * lag / wsum2;
        // One-sided: interior bins absorb their mirror image.
        let is_nyquist = n % 2 == 0 && k == half;
        if k != 0 && !is_nyquist {
            p *= 2.0;
        }
        freqs.push(k as f64 / (n as f64 * lag));
        power.push(p);
    }
    (freqs, power)
}

/// Standalone classical RK4 integration to time `t` in `steps` equal steps.
pub fn reference_rk4(
    rhs: impl Fn(&[f64], &mut [f64]),
    x0: &[f64],
    t: f64,
    steps: usize,
) -> Vec<f64> {
    let n = x0.len();
    let h = t / steps as f64;
    let mut x = x0.to_vec();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    for _ in 0..steps {
        rhs(&x, &mut k1);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        rhs(&tmp, &mut k2);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        rhs(&tmp, &mut k3);
        for i in 0..n {
            tmp[i] = x[i] + h * k3[i];
        }
        rhs(&tmp, &mut k4);
        for i in 0..n {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    x
}

/// Sample standard deviation (n-1 denominator).
pub fn sample_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Pearson correlation coefficient.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    cov / (va.sqrt() * vb.sqrt())
}

/// System matrices of the built-in linear examples, for closed-form oracles.
pub mod matrices {
    use nalgebra::{DMatrix, DVector};

    /// linear1: dx/dt = M x (homogeneous).
    pub fn linear1() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[1.0, -4.0, 4.0, -7.0])
    }

    /// linear2: dx/dt = M x + c.
    pub fn linear2() -> (DMatrix<f64>, DVector<f64>) {
        (
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, -1.0]),
            DVector::from_column_slice(&[-2.0, 0.0]),
        )
    }
}

#[cfg(test)]
mod self_checks {
    // The oracles themselves get sanity checks in tests/oracle_checks.rs
    // (integration test context), since this module is shared by `mod common`.
}
