//! Nonlinear least-squares fitting of the model line shapes used by the
//! experiments: damped/plain sinusoids, a 1/e^2 Gaussian profile, and the
//! off-resonant Rabi line, plus resonance extraction for spectroscopy scans.
//!
//! The optimizer is a damped Gauss-Newton iteration with multiplicative
//! damping adaptation (x10 on a rejected step, /10 on an accepted one) and
//! analytic Jacobians. Steps are only accepted when the weighted residual
//! sum decreases, so the residual norm is non-increasing across iterations.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

const TAU: f64 = std::f64::consts::TAU;
const PI: f64 = std::f64::consts::PI;

/// Convergence thresholds: relative parameter change, gradient norm, and
/// the iteration cap.
pub const PARAM_TOLERANCE: f64 = 1e-8;
pub const GRADIENT_TOLERANCE: f64 = 1e-10;
pub const MAX_ITERATIONS: usize = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("need at least {needed} points for {params} parameters, got {got}")]
    TooFewPoints {
        needed: usize,
        params: usize,
        got: usize,
    },
    #[error("uncertainty sigma_y must be > 0, got {0}")]
    BadSigma(f64),
    #[error("data contains a non-finite value")]
    NonFinite,
    #[error("E_PEAK_AT_EDGE: scan peak sits on the edge of the scanned range")]
    PeakAtEdge,
    #[error("fit did not converge and no fallback applies")]
    NoConvergence,
}

/// A model curve `y = m(x; params)`.
///
/// Parameter layouts:
/// - `DampedSine`: `[a, b, gamma, f]` (+ `[phi]` when the phase is free),
///   evaluating `a + b exp(-gamma x) cos(2 pi f x + phi)`.
/// - `Sine`: `[a, b, f]` (+ `[phi]`); a damped sine with `gamma` pinned to 0.
/// - `Gaussian1e2`: `[a, x0, w, c]`, evaluating
///   `a exp(-2 (x-x0)^2 / w^2) + c` (`w` is the 1/e^2 radius).
/// - `RabiLine`: `[p0, omega, delta0]` for a pulse of fixed duration `tau`,
///   evaluating `p0 W0^2/W^2 sin^2(pi W tau)` with
///   `W = sqrt(omega^2 + (x - delta0)^2)`, `W0 = omega`.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelFunction {
    DampedSine { free_phase: bool },
    Sine { free_phase: bool },
    Gaussian1e2,
    RabiLine { tau: f64 },
}

impl ModelFunction {
    pub fn param_count(&self) -> usize {
        match self {
            ModelFunction::DampedSine { free_phase } => 4 + usize::from(*free_phase),
            ModelFunction::Sine { free_phase } => 3 + usize::from(*free_phase),
            ModelFunction::Gaussian1e2 => 4,
            ModelFunction::RabiLine { .. } => 3,
        }
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            ModelFunction::DampedSine { free_phase: false } => &["a", "b", "gamma", "f"],
            ModelFunction::DampedSine { free_phase: true } => &["a", "b", "gamma", "f", "phi"],
            ModelFunction::Sine { free_phase: false } => &["a", "b", "f"],
            ModelFunction::Sine { free_phase: true } => &["a", "b", "f", "phi"],
            ModelFunction::Gaussian1e2 => &["a", "x0", "w", "c"],
            ModelFunction::RabiLine { .. } => &["p0", "omega", "delta0"],
        }
    }

    pub fn eval(&self, params: &[f64], x: f64) -> f64 {
        match self {
            ModelFunction::DampedSine { free_phase } => {
                let phi = if *free_phase { params[4] } else { 0.0 };
                params[0] + params[1] * (-params[2] * x).exp() * (TAU * params[3] * x + phi).cos()
            }
            ModelFunction::Sine { free_phase } => {
                let phi = if *free_phase { params[3] } else { 0.0 };
                params[0] + params[1] * (TAU * params[2] * x + phi).cos()
            }
            ModelFunction::Gaussian1e2 => {
                let d = x - params[1];
                params[0] * (-2.0 * d * d / (params[2] * params[2])).exp() + params[3]
            }
            ModelFunction::RabiLine { tau } => {
                let (p0, omega, delta0) = (params[0], params[1], params[2]);
                let detuning = x - delta0;
                let w2 = (omega * omega + detuning * detuning).max(1e-300);
                let w = w2.sqrt();
                p0 * omega * omega / w2 * (PI * w * tau).sin().powi(2)
            }
        }
    }

    /// Analytic partial derivatives with respect to each parameter.
    pub fn jacobian_row(&self, params: &[f64], x: f64, out: &mut [f64]) {
        match self {
            ModelFunction::DampedSine { free_phase } => {
                let (b, gamma, f) = (params[1], params[2], params[3]);
                let phi = if *free_phase { params[4] } else { 0.0 };
                let envelope = (-gamma * x).exp();
                let theta = TAU * f * x + phi;
                out[0] = 1.0;
                out[1] = envelope * theta.cos();
                out[2] = -x * b * envelope * theta.cos();
                out[3] = -TAU * x * b * envelope * theta.sin();
                if *free_phase {
                    out[4] = -b * envelope * theta.sin();
                }
            }
            ModelFunction::Sine { free_phase } => {
                let (b, f) = (params[1], params[2]);
                let phi = if *free_phase { params[3] } else { 0.0 };
                let theta = TAU * f * x + phi;
                out[0] = 1.0;
                out[1] = theta.cos();
                out[2] = -TAU * x * b * theta.sin();
                if *free_phase {
                    out[3] = -b * theta.sin();
                }
            }
            ModelFunction::Gaussian1e2 => {
                let (a, x0, w) = (params[0], params[1], params[2]);
                let d = x - x0;
                let envelope = (-2.0 * d * d / (w * w)).exp();
                out[0] = envelope;
                out[1] = a * envelope * 4.0 * d / (w * w);
                out[2] = a * envelope * 4.0 * d * d / (w * w * w);
                out[3] = 1.0;
            }
            ModelFunction::RabiLine { tau } => {
                let (p0, omega, delta0) = (params[0], params[1], params[2]);
                let detuning = x - delta0;
                let w2 = (omega * omega + detuning * detuning).max(1e-300);
                let w = w2.sqrt();
                let s = (PI * w * tau).sin();
                let c = (PI * w * tau).cos();
                out[0] = omega * omega / w2 * s * s;
                out[1] = p0
                    * (2.0 * omega * detuning * detuning / (w2 * w2) * s * s
                        + omega.powi(3) / (w2 * w) * 2.0 * PI * tau * s * c);
                out[2] = p0
                    * (2.0 * omega * omega * detuning / (w2 * w2) * s * s
                        - omega * omega * detuning / (w2 * w) * 2.0 * PI * tau * s * c);
            }
        }
    }
}

/// Result of a least-squares fit. `uncertainties` are 1-sigma values from
/// the local quadratic model at the optimum, scaled by the square root of
/// the reduced chi-square (so unweighted fits report data-driven errors).
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: Vec<f64>,
    pub uncertainties: Vec<f64>,
    pub residual_sum_squares: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn param(&self, model: &ModelFunction, name: &str) -> Option<f64> {
        let idx = model.param_names().iter().position(|&n| n == name)?;
        self.params.get(idx).copied()
    }
}

/// Heuristic starting point for a fit; `degenerate` marks flat data.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialGuess {
    pub params: Vec<f64>,
    pub degenerate: bool,
}

fn validate(data: &[(f64, f64, f64)], params: usize) -> Result<(), FitError> {
    if data.len() < params + 1 {
        return Err(FitError::TooFewPoints {
            needed: params + 1,
            params,
            got: data.len(),
        });
    }
    for &(x, y, sigma) in data {
        if !x.is_finite() || !y.is_finite() || !sigma.is_finite() {
            return Err(FitError::NonFinite);
        }
        if sigma <= 0.0 {
            return Err(FitError::BadSigma(sigma));
        }
    }
    Ok(())
}

/// Weighted least-squares fit starting from [`initial_guess`]. Pass
/// `sigma = 1` for every point to fit unweighted.
pub fn fit(model: &ModelFunction, data: &[(f64, f64, f64)]) -> Result<FitResult, FitError> {
    let guess = initial_guess(model, data)?;
    fit_with_guess(model, data, &guess.params)
}

/// Weighted least-squares fit from an explicit starting point.
/// Deterministic given data and guess; never panics on hard data, returning
/// `converged = false` after the iteration cap instead.
pub fn fit_with_guess(
    model: &ModelFunction,
    data: &[(f64, f64, f64)],
    guess: &[f64],
) -> Result<FitResult, FitError> {
    let p = model.param_count();
    assert_eq!(
        guess.len(),
        p,
        "guess length must match the parameter count"
    );
    validate(data, p)?;
    let n = data.len();

    let rss_of = |params: &[f64]| -> f64 {
        data.iter()
            .map(|&(x, y, sigma)| {
                let r = (y - model.eval(params, x)) / sigma;
                r * r
            })
            .sum()
    };

    let mut params = guess.to_vec();
    let mut rss = rss_of(&params);
    if !rss.is_finite() {
        return Err(FitError::NonFinite);
    }

    let mut damping = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let mut jac_row = vec![0.0f64; p];

    for _ in 0..MAX_ITERATIONS {
        iterations += 1;

        // Weighted Jacobian and residual vector at the current point.
        let mut jacobian = DMatrix::<f64>::zeros(n, p);
        let mut residuals = DVector::<f64>::zeros(n);
        for (i, &(x, y, sigma)) in data.iter().enumerate() {
            model.jacobian_row(&params, x, &mut jac_row);
            for j in 0..p {
                jacobian[(i, j)] = jac_row[j] / sigma;
            }
            residuals[i] = (y - model.eval(&params, x)) / sigma;
        }
        let jtj = jacobian.transpose() * &jacobian;
        let gradient = jacobian.transpose() * &residuals;

        if gradient.amax() < GRADIENT_TOLERANCE {
            converged = true;
            break;
        }

        // Inner damping loop: inflate on rejection until a step shrinks
        // the residual. Zero curvature directions are damped absolutely so
        // a singular Jacobian degrades to gradient descent instead of
        // failing.
        let mut accepted = false;
        for _ in 0..40 {
            let mut damped = jtj.clone();
            for j in 0..p {
                let scale = if jtj[(j, j)] > 0.0 { jtj[(j, j)] } else { 1.0 };
                damped[(j, j)] += damping * scale;
            }
            let step = match damped.lu().solve(&gradient) {
                Some(step) if step.iter().all(|v| v.is_finite()) => step,
                _ => {
                    damping *= 10.0;
                    continue;
                }
            };
            let trial: Vec<f64> = params.iter().zip(step.iter()).map(|(p, s)| p + s).collect();
            let trial_rss = rss_of(&trial);
            if trial_rss.is_finite() && trial_rss <= rss {
                let rel_change = step
                    .iter()
                    .zip(&params)
                    .map(|(s, p)| s.abs() / p.abs().max(1.0))
                    .fold(0.0f64, f64::max);
                params = trial;
                rss = trial_rss;
                damping = (damping / 10.0).max(1e-14);
                accepted = true;
                if rel_change < PARAM_TOLERANCE {
                    converged = true;
                }
                break;
            }
            damping *= 10.0;
        }
        if !accepted || converged {
            converged = converged || !accepted && gradient.amax() < GRADIENT_TOLERANCE;
            break;
        }
    }

    // 1-sigma uncertainties from (J^T J)^-1 at the optimum, scaled by the
    // reduced chi-square.
    let mut jacobian = DMatrix::<f64>::zeros(n, p);
    for (i, &(x, _, sigma)) in data.iter().enumerate() {
        model.jacobian_row(&params, x, &mut jac_row);
        for j in 0..p {
            jacobian[(i, j)] = jac_row[j] / sigma;
        }
    }
    let jtj = jacobian.transpose() * &jacobian;
    let scale2 = if n > p { rss / (n - p) as f64 } else { 1.0 };
    let uncertainties = match jtj.try_inverse() {
        Some(cov) => (0..p)
            .map(|j| (cov[(j, j)].max(0.0) * scale2).sqrt())
            .collect(),
        None => vec![f64::INFINITY; p],
    };

    Ok(FitResult {
        params,
        uncertainties,
        residual_sum_squares: rss,
        converged,
        iterations,
    })
}

/// Starting-point heuristics: mean offset, half peak-to-peak amplitude,
/// dominant discrete spectral peak for the frequency, log-envelope slope
/// for the damping, argmax/second-moment for the Gaussian.
pub fn initial_guess(
    model: &ModelFunction,
    data: &[(f64, f64, f64)],
) -> Result<InitialGuess, FitError> {
    if data.len() < 4 {
        return Err(FitError::TooFewPoints {
            needed: 4,
            params: model.param_count(),
            got: data.len(),
        });
    }
    for &(x, y, _) in data {
        if !x.is_finite() || !y.is_finite() {
            return Err(FitError::NonFinite);
        }
    }
    let n = data.len();
    let mean = data.iter().map(|d| d.1).sum::<f64>() / n as f64;
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut argmax = 0usize;
    for (i, &(_, y, _)) in data.iter().enumerate() {
        if y > y_max {
            y_max = y;
            argmax = i;
        }
        y_min = y_min.min(y);
    }
    let spread = y_max - y_min;
    let degenerate = spread < 1e-12 * y_max.abs().max(1.0);

    let params = match model {
        ModelFunction::DampedSine { free_phase } | ModelFunction::Sine { free_phase } => {
            let amplitude = if degenerate { 0.0 } else { spread / 2.0 };
            let b = if data[0].1 >= mean {
                amplitude
            } else {
                -amplitude
            };
            let f = if degenerate {
                0.0
            } else {
                dominant_frequency(data, mean)
            };
            let gamma = if degenerate {
                0.0
            } else {
                envelope_decay(data, mean)
            };
            let mut params = vec![mean, b];
            if matches!(model, ModelFunction::DampedSine { .. }) {
                params.push(gamma);
            }
            params.push(f);
            if *free_phase {
                params.push(0.0);
            }
            params
        }
        ModelFunction::Gaussian1e2 => {
            let x0 = data[argmax].0;
            let weight_sum: f64 = data.iter().map(|&(_, y, _)| (y - y_min).max(0.0)).sum();
            let var = if weight_sum > 0.0 {
                data.iter()
                    .map(|&(x, y, _)| (y - y_min).max(0.0) * (x - x0) * (x - x0))
                    .sum::<f64>()
                    / weight_sum
            } else {
                0.0
            };
            let span = data[n - 1].0 - data[0].0;
            let w = (2.0 * var.sqrt()).max(span.abs() / n as f64).max(1e-9);
            vec![spread, x0, w, y_min]
        }
        ModelFunction::RabiLine { .. } => {
            let delta0 = data[argmax].0;
            // Half width at half maximum, walking out from the peak.
            let half = y_min + spread / 2.0;
            let mut left = None;
            for i in (0..argmax).rev() {
                if data[i].1 < half {
                    left = Some(delta0 - data[i].0);
                    break;
                }
            }
            let mut right = None;
            for point in data.iter().skip(argmax + 1) {
                if point.1 < half {
                    right = Some(point.0 - delta0);
                    break;
                }
            }
            let span = data[n - 1].0 - data[0].0;
            let hwhm = match (left, right) {
                (Some(l), Some(r)) => (l + r) / 2.0,
                (Some(v), None) | (None, Some(v)) => v,
                (None, None) => span.abs() / 4.0,
            };
            // The pi-pulse line drops to half maximum near 0.8 detuning
            // linewidths from center.
            vec![y_max, (hwhm / 0.8).max(1e-6), delta0]
        }
    };
    Ok(InitialGuess { params, degenerate })
}

/// Dominant frequency of `y - mean` on a 4x zero-padded discrete grid,
/// evaluated by direct summation so mildly non-uniform spacing is fine.
fn dominant_frequency(data: &[(f64, f64, f64)], mean: f64) -> f64 {
    let n = data.len();
    let span = data[n - 1].0 - data[0].0;
    if span <= 0.0 {
        return 0.0;
    }
    let pad = 4;
    let bins = pad * n / 2;
    let base = 1.0 / (pad as f64 * span * n as f64 / (n as f64 - 1.0));
    let mut best = (0.0f64, 0.0f64);
    for k in 1..=bins {
        let f = k as f64 * base;
        let (mut re, mut im) = (0.0, 0.0);
        for &(x, y, _) in data {
            let theta = TAU * f * x;
            re += (y - mean) * theta.cos();
            im += (y - mean) * theta.sin();
        }
        let power = re * re + im * im;
        if power > best.1 {
            best = (f, power);
        }
    }
    best.0
}

/// Decay-rate estimate from the ratio of extreme deviations in the first
/// and second halves of the window, clamped to be non-negative.
fn envelope_decay(data: &[(f64, f64, f64)], mean: f64) -> f64 {
    let n = data.len();
    let half = n / 2;
    let peak = |slice: &[(f64, f64, f64)]| -> (f64, f64) {
        let amp = slice
            .iter()
            .map(|&(_, y, _)| (y - mean).abs())
            .fold(0.0f64, f64::max);
        let mid = slice.iter().map(|d| d.0).sum::<f64>() / slice.len() as f64;
        (amp, mid)
    };
    let (a1, t1) = peak(&data[..half]);
    let (a2, t2) = peak(&data[half..]);
    if a1 > 0.0 && a2 > 0.0 && t2 > t1 {
        ((a1 / a2).ln() / (t2 - t1)).max(0.0)
    } else {
        0.0
    }
}

/// Resonance center of a `(detuning, P_r)` scan taken with a pulse of
/// duration `tau`: a Rabi-line fit, falling back to a Gaussian-peak fit
/// when the line fit fails. Returns the center and its 1-sigma error.
pub fn find_resonance(scan: &[(f64, f64)], tau: f64) -> Result<(f64, f64), FitError> {
    let data: Vec<(f64, f64, f64)> = scan.iter().map(|&(x, y)| (x, y, 1.0)).collect();
    if data.len() < 4 {
        return Err(FitError::TooFewPoints {
            needed: 4,
            params: 3,
            got: data.len(),
        });
    }
    let argmax = data
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.partial_cmp(&b.1 .1).expect("finite populations"))
        .map(|(i, _)| i)
        .ok_or(FitError::NoConvergence)?;
    if argmax == 0 || argmax == data.len() - 1 {
        return Err(FitError::PeakAtEdge);
    }
    let (lo, hi) = (
        data.iter().map(|d| d.0).fold(f64::INFINITY, f64::min),
        data.iter().map(|d| d.0).fold(f64::NEG_INFINITY, f64::max),
    );

    let rabi = ModelFunction::RabiLine { tau };
    if let Ok(result) = fit(&rabi, &data) {
        let center = result.params[2];
        if result.converged && center.is_finite() && (lo..=hi).contains(&center) {
            return Ok((center, result.uncertainties[2]));
        }
    }
    gaussian_peak_center(&data, lo, hi)
}

fn gaussian_peak_center(
    data: &[(f64, f64, f64)],
    lo: f64,
    hi: f64,
) -> Result<(f64, f64), FitError> {
    let gauss = ModelFunction::Gaussian1e2;
    let result = fit(&gauss, data)?;
    let center = result.params[1];
    if result.converged && center.is_finite() && (lo..=hi).contains(&center) {
        Ok((center, result.uncertainties[1]))
    } else {
        Err(FitError::NoConvergence)
    }
}

/// Ordinary least-squares line `y = slope x + intercept` with standard
/// errors from the residual variance.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
}

pub fn linear_fit(data: &[(f64, f64)]) -> Result<LinearFit, FitError> {
    let n = data.len();
    if n < 3 {
        return Err(FitError::TooFewPoints {
            needed: 3,
            params: 2,
            got: n,
        });
    }
    let nf = n as f64;
    let x_mean = data.iter().map(|d| d.0).sum::<f64>() / nf;
    let y_mean = data.iter().map(|d| d.1).sum::<f64>() / nf;
    let sxx: f64 = data.iter().map(|d| (d.0 - x_mean).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(FitError::NonFinite);
    }
    let sxy: f64 = data.iter().map(|d| (d.0 - x_mean) * (d.1 - y_mean)).sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let rss: f64 = data
        .iter()
        .map(|d| (d.1 - slope * d.0 - intercept).powi(2))
        .sum();
    let s2 = rss / (nf - 2.0);
    Ok(LinearFit {
        slope,
        intercept,
        slope_se: (s2 / sxx).sqrt(),
        intercept_se: (s2 * (1.0 / nf + x_mean * x_mean / sxx)).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize, dx: f64) -> Vec<f64> {
        (0..n).map(|i| i as f64 * dx).collect()
    }

    fn sample(
        model: &ModelFunction,
        params: &[f64],
        xs: &[f64],
        sigma: f64,
    ) -> Vec<(f64, f64, f64)> {
        xs.iter()
            .map(|&x| (x, model.eval(params, x), sigma))
            .collect()
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let cases: Vec<(ModelFunction, Vec<f64>)> = vec![
            (
                ModelFunction::DampedSine { free_phase: false },
                vec![0.4, 0.45, 0.3, 9.7],
            ),
            (
                ModelFunction::DampedSine { free_phase: true },
                vec![0.4, -0.45, 0.3, 9.7, 0.6],
            ),
            (
                ModelFunction::Sine { free_phase: false },
                vec![0.5, 0.5, 1.4],
            ),
            (ModelFunction::Gaussian1e2, vec![10.0, 0.3, 1.3, 0.05]),
            (ModelFunction::RabiLine { tau: 0.5 }, vec![0.95, 1.1, -9.8]),
        ];
        for (model, params) in cases {
            let p = model.param_count();
            let mut analytic = vec![0.0; p];
            for &x in &[0.07, 0.31, 1.9] {
                model.jacobian_row(&params, x, &mut analytic);
                for j in 0..p {
                    let h = 1e-6 * params[j].abs().max(1e-3);
                    let mut plus = params.clone();
                    plus[j] += h;
                    let mut minus = params.clone();
                    minus[j] -= h;
                    let numeric = (model.eval(&plus, x) - model.eval(&minus, x)) / (2.0 * h);
                    assert!(
                        (analytic[j] - numeric).abs() < 1e-5 * numeric.abs().max(1.0),
                        "{model:?} param {j} at x={x}: analytic {} vs numeric {numeric}",
                        analytic[j],
                    );
                }
            }
        }
    }

    #[test]
    fn damped_sine_with_zero_gamma_equals_plain_sine() {
        let damped = ModelFunction::DampedSine { free_phase: false };
        let sine = ModelFunction::Sine { free_phase: false };
        for &x in &[0.0, 0.13, 0.77, 2.9] {
            let a = damped.eval(&[0.5, 0.45, 0.0, 10.0], x);
            let b = sine.eval(&[0.5, 0.45, 10.0], x);
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn synthetic_damped_sine_recovers_within_3_sigma() {
        let model = ModelFunction::DampedSine { free_phase: false };
        let truth = [0.5, 0.45, 0.3, 10.0];
        let xs = grid(50, 0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let data: Vec<(f64, f64, f64)> = xs
            .iter()
            .map(|&x| {
                // Box-Muller from two uniforms keeps the test free of
                // distribution dependencies.
                let (u1, u2) = (rng.random::<f64>().max(1e-12), rng.random::<f64>());
                let noise = (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos();
                (x, model.eval(&truth, x) + 0.02 * noise, 0.02)
            })
            .collect();
        let result = fit(&model, &data).unwrap();
        assert!(result.converged);
        for (j, &expected) in truth.iter().enumerate() {
            let pull = (result.params[j] - expected).abs() / result.uncertainties[j];
            assert!(
                pull < 3.0,
                "param {j}: {} vs {expected} (pull {pull})",
                result.params[j]
            );
        }
    }

    #[test]
    fn noiseless_sine_fits_exactly_with_zero_damping() {
        let model = ModelFunction::DampedSine { free_phase: false };
        let truth = [0.5, 0.5, 0.0, 10.0];
        let data = sample(&model, &truth, &grid(80, 0.005), 1.0);
        let result = fit(&model, &data).unwrap();
        assert!(result.converged);
        assert!(
            result.params[2].abs() < 1e-6,
            "gamma = {}",
            result.params[2]
        );
        assert!(
            (result.params[3] - 10.0).abs() < 1e-6,
            "f = {}",
            result.params[3]
        );
    }

    #[test]
    fn sine_and_pinned_damped_sine_agree() {
        let sine = ModelFunction::Sine { free_phase: false };
        let damped = ModelFunction::DampedSine { free_phase: false };
        let data = sample(&sine, &[0.4, 0.35, 3.0], &grid(60, 0.01), 1.0);
        let a = fit(&sine, &data).unwrap();
        let b = fit(&damped, &data).unwrap();
        assert!((a.params[0] - b.params[0]).abs() < 1e-8);
        assert!((a.params[1] - b.params[1]).abs() < 1e-8);
        assert!((a.params[2] - b.params[3]).abs() < 1e-8); // frequency
        assert!(b.params[2].abs() < 1e-8); // damping stays at zero
    }

    #[test]
    fn rescaling_y_rescales_only_the_amplitudes() {
        let model = ModelFunction::DampedSine { free_phase: false };
        let truth = [0.5, 0.4, 0.25, 7.0];
        let data = sample(&model, &truth, &grid(70, 0.01), 1.0);
        let scaled: Vec<(f64, f64, f64)> = data.iter().map(|&(x, y, s)| (x, 3.0 * y, s)).collect();
        let base = fit(&model, &data).unwrap();
        let big = fit(&model, &scaled).unwrap();
        assert!((big.params[0] - 3.0 * base.params[0]).abs() < 1e-8);
        assert!((big.params[1] - 3.0 * base.params[1]).abs() < 1e-8);
        assert!((big.params[2] - base.params[2]).abs() < 1e-8);
        assert!((big.params[3] - base.params[3]).abs() < 1e-8);
    }

    #[test]
    fn residual_norm_never_exceeds_the_starting_point() {
        let model = ModelFunction::Gaussian1e2;
        let data = sample(&model, &[10.0, 0.0, 1.3, 0.0], &grid(40, 0.2), 1.0);
        let guess = [5.0, 1.0, 2.0, 0.5];
        let start_rss: f64 = data
            .iter()
            .map(|&(x, y, _)| (y - model.eval(&guess, x)).powi(2))
            .sum();
        let result = fit_with_guess(&model, &data, &guess).unwrap();
        assert!(result.residual_sum_squares <= start_rss);
        assert!((result.params[2].abs() - 1.3).abs() < 1e-6);
    }

    #[test]
    fn frequency_guess_lands_within_one_spectral_bin() {
        let model = ModelFunction::Sine { free_phase: false };
        let xs = grid(200, 0.01);
        let data = sample(&model, &[0.0, 1.0, 10.0], &xs, 1.0);
        let guess = initial_guess(&model, &data).unwrap();
        assert!(!guess.degenerate);
        let bin = 1.0 / (xs.len() as f64 * 0.01);
        assert!(
            (guess.params[2] - 10.0).abs() < bin,
            "f guess = {}",
            guess.params[2]
        );
    }

    #[test]
    fn constant_data_is_flagged_with_zero_amplitude() {
        let data: Vec<(f64, f64, f64)> = grid(10, 0.1).iter().map(|&x| (x, 0.7, 1.0)).collect();
        let guess = initial_guess(&ModelFunction::DampedSine { free_phase: false }, &data).unwrap();
        assert!(guess.degenerate);
        assert_eq!(guess.params[1], 0.0);
    }

    #[test]
    fn gaussian_guess_centers_on_the_argmax() {
        let model = ModelFunction::Gaussian1e2;
        let xs: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.25).collect();
        let data = sample(&model, &[10.0, 1.25, 1.3, 0.0], &xs, 1.0);
        let guess = initial_guess(&model, &data).unwrap();
        assert_eq!(guess.params[1], 1.25);
    }

    #[test]
    fn resonance_is_found_on_a_synthetic_line() {
        let tau = 0.5;
        let model = ModelFunction::RabiLine { tau };
        let truth = [1.0, 1.0, 10.0];
        let xs: Vec<f64> = (0..81).map(|i| 10.0 + (i as f64 - 40.0) * 0.25).collect();
        let scan: Vec<(f64, f64)> = xs.iter().map(|&x| (x, model.eval(&truth, x))).collect();
        let (center, err) = find_resonance(&scan, tau).unwrap();
        assert!((center - 10.0).abs() < 1e-6, "center = {center}");
        assert!(err.is_finite());
    }

    #[test]
    fn peak_on_the_scan_edge_is_reported() {
        let scan: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, i as f64)).collect();
        assert!(matches!(
            find_resonance(&scan, 0.5),
            Err(FitError::PeakAtEdge)
        ));
    }

    #[test]
    fn gaussian_fallback_recovers_a_plain_bump() {
        let data: Vec<(f64, f64, f64)> = (-10..=10)
            .map(|i| {
                let x = i as f64 * 0.5;
                (x, 0.8 * (-2.0 * (x - 0.5) * (x - 0.5) / 4.0).exp(), 1.0)
            })
            .collect();
        let (center, _) = gaussian_peak_center(&data, -5.0, 5.0).unwrap();
        assert!((center - 0.5).abs() < 1e-6);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let model = ModelFunction::Sine { free_phase: false };
        let tiny = vec![(0.0, 1.0, 1.0); 3];
        assert!(matches!(
            fit(&model, &tiny),
            Err(FitError::TooFewPoints { .. })
        ));
        let bad_sigma = vec![
            (0.0, 1.0, 0.0),
            (0.1, 1.0, 1.0),
            (0.2, 1.0, 1.0),
            (0.3, 1.0, 1.0),
        ];
        assert!(matches!(
            fit(&model, &bad_sigma),
            Err(FitError::BadSigma(_))
        ));
        let nan = vec![
            (0.0, f64::NAN, 1.0),
            (0.1, 1.0, 1.0),
            (0.2, 1.0, 1.0),
            (0.3, 1.0, 1.0),
        ];
        assert!(matches!(fit(&model, &nan), Err(FitError::NonFinite)));
    }

    #[test]
    fn linear_fit_matches_a_clean_line() {
        let data: Vec<(f64, f64)> = (0..12).map(|i| (i as f64, 2.5 * i as f64 - 0.3)).collect();
        let line = linear_fit(&data).unwrap();
        assert!((line.slope - 2.5).abs() < 1e-12);
        assert!((line.intercept + 0.3).abs() < 1e-12);
        assert!(line.slope_se < 1e-9);
    }
}
