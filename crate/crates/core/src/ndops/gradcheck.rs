//! Central-difference gradient verification.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ndops::Tensor;

/// Outcome of a finite-difference sweep.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest error seen, relative to `max(1, |analytic|, |numeric|)`.
    pub max_rel_error: f64,
    pub points_checked: usize,
    pub tol: f64,
    pub passed: bool,
    /// (input index, flat coordinate) of the worst point.
    pub worst: (usize, usize),
}

impl GradCheckReport {
    fn from_errors(errors: &[(usize, usize, f64)], tol: f64) -> Self {
        let mut worst = (0usize, 0usize);
        let mut max_err = 0.0f64;
        for &(i, c, e) in errors {
            if e > max_err {
                max_err = e;
                worst = (i, c);
            }
        }
        GradCheckReport {
            max_rel_error: max_err,
            points_checked: errors.len(),
            tol,
            passed: max_err < tol,
            worst,
        }
    }
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

fn probe<F>(loss: &F, inputs: &[Tensor], input_idx: usize, coord: usize, eps: f64) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<f64>,
{
    let mut work: Vec<Tensor> = inputs.to_vec();
    let orig = work[input_idx].data()[coord];
    work[input_idx].data_mut()[coord] = orig + eps;
    let plus = loss(&work)?;
    work[input_idx].data_mut()[coord] = orig - eps;
    let minus = loss(&work)?;
    if !plus.is_finite() || !minus.is_finite() {
        return Err(Error::numeric("non-finite loss during gradient probing"));
    }
    Ok((plus - minus) / (2.0 * eps))
}

/// Check analytic gradients of a scalar-valued function at `inputs` by
/// central differences over every coordinate of every input.
///
/// `analytic[i]` must hold the gradient of the loss w.r.t. `inputs[i]`.
pub fn grad_check<F>(
    loss: F,
    analytic: &[Tensor],
    inputs: &[Tensor],
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<f64>,
{
    assert!(eps > 0.0, "eps must be positive");
    assert_eq!(analytic.len(), inputs.len(), "one gradient per input");
    let mut errors = Vec::new();
    for (i, input) in inputs.iter().enumerate() {
        assert_eq!(
            analytic[i].shape(),
            input.shape(),
            "gradient shape must match input {i}"
        );
        for c in 0..input.len() {
            let numeric = probe(&loss, inputs, i, c, eps)?;
            errors.push((i, c, rel_error(analytic[i].data()[c], numeric)));
        }
    }
    Ok(GradCheckReport::from_errors(&errors, tol))
}

/// Like [`grad_check`] but probes `n_probes` seeded random coordinates, for
/// functions too large to sweep exhaustively.
pub fn grad_check_sampled<F>(
    loss: F,
    analytic: &[Tensor],
    inputs: &[Tensor],
    eps: f64,
    tol: f64,
    n_probes: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<f64>,
{
    assert!(eps > 0.0, "eps must be positive");
    assert_eq!(analytic.len(), inputs.len(), "one gradient per input");
    let total: usize = inputs.iter().map(|t| t.len()).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::new();
    for _ in 0..n_probes.min(total) {
        let mut flat = rng.random_range(0..total);
        let mut input_idx = 0;
        while flat >= inputs[input_idx].len() {
            flat -= inputs[input_idx].len();
            input_idx += 1;
        }
        let numeric = probe(&loss, inputs, input_idx, flat, eps)?;
        errors.push((
            input_idx,
            flat,
            rel_error(analytic[input_idx].data()[flat], numeric),
        ));
    }
    Ok(GradCheckReport::from_errors(&errors, tol))
}
