//! Diagonal-Gaussian latent helpers: reparameterized draws and KL to the standard normal.

use crate::{Error, Result};

/// Bounds applied to a predicted log standard deviation before exponentiation.
pub const LOG_SIGMA_MIN: f64 = -6.0;
pub const LOG_SIGMA_MAX: f64 = 2.0;

fn check_finite(what: &str, xs: &[f64]) -> Result<()> {
    if xs.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

/// `mu + exp(log_sigma) * noise`.
pub fn reparam_sample(mu: &[f64], log_sigma: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
    check_len("log_sigma", mu.len(), log_sigma.len())?;
    check_len("noise", mu.len(), noise.len())?;
    check_finite("mu", mu)?;
    check_finite("log_sigma", log_sigma)?;
    check_finite("noise", noise)?;
    Ok(mu
        .iter()
        .zip(log_sigma)
        .zip(noise)
        .map(|((m, ls), e)| m + ls.exp() * e)
        .collect())
}

/// Gradients of a reparameterized draw w.r.t. `(mu, log_sigma)` given the upstream gradient.
pub fn reparam_backward(
    log_sigma: &[f64],
    noise: &[f64],
    upstream: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let d_mu = upstream.to_vec();
    let d_ls = upstream
        .iter()
        .zip(log_sigma)
        .zip(noise)
        .map(|((g, ls), e)| g * ls.exp() * e)
        .collect();
    (d_mu, d_ls)
}

/// `KL(N(mu, diag(sigma²)) || N(0, I)) = ½ Σ (mu² + sigma² − 1 − 2 log sigma)`.
pub fn kl_diag_gaussian(mu: &[f64], log_sigma: &[f64]) -> f64 {
    debug_assert_eq!(mu.len(), log_sigma.len());
    0.5 * mu
        .iter()
        .zip(log_sigma)
        // sigma² − 1 via expm1 avoids cancellation near log_sigma = 0.
        .map(|(m, ls)| m * m + (2.0 * ls).exp_m1() - 2.0 * ls)
        .sum::<f64>()
}

/// Gradient of [`kl_diag_gaussian`]: `(mu, sigma² − 1)`.
pub fn kl_diag_gaussian_grad(mu: &[f64], log_sigma: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (
        mu.to_vec(),
        log_sigma.iter().map(|ls| (2.0 * ls).exp_m1()).collect(),
    )
}

/// Clamps a raw log-sigma into `[LOG_SIGMA_MIN, LOG_SIGMA_MAX]`; the flag marks entries that
/// pass gradient through.
pub fn clamp_log_sigma(raw: f64) -> (f64, bool) {
    if raw < LOG_SIGMA_MIN {
        (LOG_SIGMA_MIN, false)
    } else if raw > LOG_SIGMA_MAX {
        (LOG_SIGMA_MAX, false)
    } else {
        (raw, true)
    }
}
