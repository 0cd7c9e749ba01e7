//! Shared helpers for the integration tests: an independent fixed-step
//! 4th-order Runge-Kutta integrator of the Schroedinger equation, used as
//! the oracle against the eigendecomposition propagator.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

/// Largest element magnitude of the matrix, in rad/us.
pub fn max_element(matrix: &DMatrix<C64>) -> f64 {
    matrix.iter().map(|e| e.norm()).fold(0.0, f64::max)
}

fn derivative(matrix: &DMatrix<C64>, psi: &[C64], out: &mut [C64]) {
    let dim = psi.len();
    for (row, slot) in out.iter_mut().enumerate() {
        let mut acc = C64::ZERO;
        for col in 0..dim {
            let h = matrix[(row, col)];
            if h != C64::ZERO {
                acc += h * psi[col];
            }
        }
        // d psi / dt = -i H psi
        *slot = C64::new(acc.im, -acc.re);
    }
}

/// Integrates `psi' = -i H psi` over `dt` with a fixed step of
/// `step_scale / max|H|` (dimensionless phase per step), RK4 stages.
pub fn rk4_evolve(matrix: &DMatrix<C64>, psi0: &[C64], dt: f64, step_scale: f64) -> Vec<C64> {
    assert!(dt >= 0.0);
    let dim = psi0.len();
    let scale = max_element(matrix);
    let step = if scale > 0.0 { step_scale / scale } else { dt };
    let steps = if step > 0.0 {
        (dt / step).ceil().max(1.0) as usize
    } else {
        1
    };
    let h = dt / steps as f64;

    let mut psi = psi0.to_vec();
    let mut k1 = vec![C64::ZERO; dim];
    let mut k2 = vec![C64::ZERO; dim];
    let mut k3 = vec![C64::ZERO; dim];
    let mut k4 = vec![C64::ZERO; dim];
    let mut scratch = vec![C64::ZERO; dim];

    for _ in 0..steps {
        derivative(matrix, &psi, &mut k1);
        for i in 0..dim {
            scratch[i] = psi[i] + k1[i] * (h / 2.0);
        }
        derivative(matrix, &scratch, &mut k2);
        for i in 0..dim {
            scratch[i] = psi[i] + k2[i] * (h / 2.0);
        }
        derivative(matrix, &scratch, &mut k3);
        for i in 0..dim {
            scratch[i] = psi[i] + k3[i] * h;
        }
        derivative(matrix, &scratch, &mut k4);
        for i in 0..dim {
            psi[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (h / 6.0);
        }
    }
    psi
}

/// Largest per-amplitude deviation between two state vectors.
pub fn max_amplitude_error(a: &[C64], b: &[C64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}
