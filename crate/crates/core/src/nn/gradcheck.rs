//! Central finite-difference gradient checking. Lives in the library (not
//! test code) because several suites and the acceptance harness reuse it;
//! it never calls the reverse pass it is used to validate.

use crate::nn::params::ParamVector;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Central differences of a scalar function with respect to every parameter.
pub fn central_diff_params<F>(params: &ParamVector, mut f: F, eps: f64) -> Vec<f64>
where
    F: FnMut(&ParamVector) -> f64,
{
    let mut work = params.clone();
    let mut out = vec![0.0; params.len()];
    for i in 0..params.len() {
        let orig = work.data()[i];
        work.data_mut()[i] = orig + eps;
        let hi = f(&work);
        work.data_mut()[i] = orig - eps;
        let lo = f(&work);
        work.data_mut()[i] = orig;
        out[i] = (hi - lo) / (2.0 * eps);
    }
    out
}

/// Central differences with respect to a flat input vector.
pub fn central_diff_inputs<F>(input: &[f64], mut f: F, eps: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut work = input.to_vec();
    let mut out = vec![0.0; input.len()];
    for i in 0..input.len() {
        let orig = work[i];
        work[i] = orig + eps;
        let hi = f(&work);
        work[i] = orig - eps;
        let lo = f(&work);
        work[i] = orig;
        out[i] = (hi - lo) / (2.0 * eps);
    }
    out
}

/// Relative error with a floor so near-zero pairs compare absolutely.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
}

/// Largest relative error across two gradient vectors.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| relative_error(*a, *b))
        .fold(0.0, f64::max)
}
