//! Sum-rate and selection-criterion computations for both network types.
//!
//! Log-determinants of Hermitian positive-definite matrices go through a
//! Cholesky factorization; the multicell rate is evaluated as
//! log2 det(S + N) - log2 det(N) with S the whitened signal covariance and
//! N the interference-plus-noise covariance, which keeps every intermediate
//! Hermitian positive definite.

use nalgebra::{Cholesky, DMatrix};
use num_complex::Complex64;
use thiserror::Error;

use crate::precoding::PrecodingError;

#[derive(Debug, Error)]
pub enum RateError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("noise variance must be positive, got {0}")]
    NonPositiveNoise(f64),
    #[error("transmit gain rho_f must be non-negative, got {0}")]
    NegativeGain(f64),
    #[error("channel row {0} has zero norm")]
    ZeroNormRow(usize),
    #[error(transparent)]
    Precoding(#[from] PrecodingError),
}

/// Rate evaluation output. `per_cell` is populated for the multicell system
/// and empty for cell-free; `criterion_value` echoes the quantity a
/// scheduler would score this configuration by.
#[derive(Debug, Clone)]
pub struct RateReport {
    /// Total rate, bits/s/Hz.
    pub total: f64,
    /// Per-cell rates R_s; total is their exact sum.
    pub per_cell: Vec<f64>,
    pub criterion_value: f64,
}

/// log2 det of a Hermitian positive-definite matrix via Cholesky.
pub fn log2_det_hermitian(a: &DMatrix<Complex64>) -> Result<f64, RateError> {
    if a.nrows() != a.ncols() {
        return Err(RateError::DimensionMismatch(format!(
            "log-det needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let chol = Cholesky::new(a.clone()).ok_or(RateError::NotPositiveDefinite)?;
    let l = chol.l_dirty();
    let mut log_det = 0.0;
    for i in 0..a.nrows() {
        let d = l[(i, i)];
        // complex square roots let indefinite inputs slip through nalgebra's
        // factorization with rotated pivots
        if !(d.re > 0.0) || d.im.abs() > 1e-8 * d.re {
            return Err(RateError::NotPositiveDefinite);
        }
        log_det += d.re.log2();
    }
    Ok(2.0 * log_det)
}

/// Cell-free sum rate log2 det(rho_f / sigma_w^2 * G^T P P^H G^* + I).
///
/// `g` holds one column per scheduled user (M x K_s) and `p` the matching
/// precoder (M x K_s).
pub fn cellfree_sum_rate(
    g: &DMatrix<Complex64>,
    p: &DMatrix<Complex64>,
    rho_f: f64,
    noise_var: f64,
) -> Result<RateReport, RateError> {
    if g.shape() != p.shape() {
        return Err(RateError::DimensionMismatch(format!(
            "channel is {}x{} but precoder is {}x{}",
            g.nrows(),
            g.ncols(),
            p.nrows(),
            p.ncols()
        )));
    }
    if !(noise_var > 0.0) {
        return Err(RateError::NonPositiveNoise(noise_var));
    }
    if rho_f < 0.0 {
        return Err(RateError::NegativeGain(rho_f));
    }
    let k = g.ncols();
    let effective = g.transpose() * p;
    let arg = (&effective * effective.adjoint()).scale(rho_f / noise_var)
        + DMatrix::<Complex64>::identity(k, k);
    // the argument dominates the identity, so the rate is non-negative up
    // to rounding
    let total = log2_det_hermitian(&arg)?.max(0.0);
    Ok(RateReport { total, per_cell: Vec::new(), criterion_value: total })
}

/// Multicell network sum rate with inter-cell interference.
///
/// `h_cross[s][l]` is the channel from BS `l` to all users of cell `s`
/// (K_c x N_t), `precoders[l]` the precoder of cell `l` over its scheduled
/// users, `scheduled[s]` the in-cell row indices cell `s` serves, and `q`
/// the L x L coupling matrix whose off-diagonal entries scale interference.
pub fn multicell_sum_rate(
    h_cross: &[Vec<DMatrix<Complex64>>],
    precoders: &[DMatrix<Complex64>],
    scheduled: &[Vec<usize>],
    q: &DMatrix<f64>,
    noise_var: f64,
) -> Result<RateReport, RateError> {
    let l = h_cross.len();
    if precoders.len() != l || scheduled.len() != l || q.shape() != (l, l) {
        return Err(RateError::DimensionMismatch(format!(
            "expected {l} cells in every argument, got {} precoders, {} schedules, {:?} coupling",
            precoders.len(),
            scheduled.len(),
            q.shape()
        )));
    }
    if !(noise_var > 0.0) {
        return Err(RateError::NonPositiveNoise(noise_var));
    }
    for s in 0..l {
        if h_cross[s].len() != l {
            return Err(RateError::DimensionMismatch(format!(
                "h_cross[{s}] has {} entries, expected {l}",
                h_cross[s].len()
            )));
        }
        if precoders[s].ncols() != scheduled[s].len() {
            return Err(RateError::DimensionMismatch(format!(
                "cell {s}: precoder serves {} streams but {} users are scheduled",
                precoders[s].ncols(),
                scheduled[s].len()
            )));
        }
        if let Some(&bad) = scheduled[s].iter().find(|&&r| r >= h_cross[s][s].nrows()) {
            return Err(RateError::DimensionMismatch(format!(
                "cell {s}: scheduled row {bad} out of range"
            )));
        }
    }

    let mut per_cell = Vec::with_capacity(l);
    for s in 0..l {
        let n_s = scheduled[s].len();
        if n_s == 0 {
            per_cell.push(0.0);
            continue;
        }
        let identity = DMatrix::<Complex64>::identity(n_s, n_s);

        // Interference-plus-noise covariance of cell s's scheduled users.
        let mut noise_cov = identity.scale(noise_var);
        for bs in 0..l {
            if bs == s || precoders[bs].ncols() == 0 {
                continue;
            }
            let coupling = q[(s, bs)];
            if coupling == 0.0 {
                continue;
            }
            let h_sub = h_cross[s][bs].select_rows(scheduled[s].iter());
            let cross = h_sub * &precoders[bs];
            noise_cov += (&cross * cross.adjoint()).scale(coupling * coupling);
        }

        let h_serving = h_cross[s][s].select_rows(scheduled[s].iter());
        let signal = &h_serving * &precoders[s];
        let signal_cov = &signal * signal.adjoint();

        let rate =
            log2_det_hermitian(&(&signal_cov + &noise_cov))? - log2_det_hermitian(&noise_cov)?;
        per_cell.push(rate.max(0.0));
    }

    let total = per_cell.iter().sum();
    Ok(RateReport { total, per_cell, criterion_value: total })
}

/// ZF throughput sum over positive parts of log2(mu * c_i), with the water
/// level from the allocation constraint.
fn zf_rate_from_water_level(mu: f64, gains: &[f64]) -> f64 {
    gains.iter().map(|&c| (mu * c).log2().max(0.0)).sum()
}

fn zf_effective_gains(h_sub: &DMatrix<Complex64>) -> Result<Vec<f64>, RateError> {
    let (users, antennas) = h_sub.shape();
    if users > antennas {
        return Err(RateError::Precoding(PrecodingError::UserCountExceedsAntennas {
            users,
            antennas,
        }));
    }
    let chol = crate::precoding::gram_cholesky(h_sub * h_sub.adjoint())?;
    let inv = chol.inverse();
    let gains: Vec<f64> = (0..users).map(|i| 1.0 / inv[(i, i)].re).collect();
    if let Some(&bad) = gains.iter().find(|&&c| !(c > 0.0 && c.is_finite())) {
        return Err(RateError::Precoding(PrecodingError::InvalidGain(bad)));
    }
    Ok(gains)
}

/// Zero-forcing throughput of a user subset: water-fills the effective
/// gains c_i = 1/[(H H^H)^{-1}]_ii and returns sum_i [log2(mu c_i)]_+.
///
/// A singular row-reduced channel is reported as an error so schedulers can
/// discard the candidate set.
pub fn zf_throughput(h_sub: &DMatrix<Complex64>, total_power: f64) -> Result<f64, RateError> {
    let gains = zf_effective_gains(h_sub)?;
    let (mu, _powers) = crate::precoding::waterfill(&gains, total_power)?;
    Ok(zf_rate_from_water_level(mu, &gains))
}

/// ZF throughput under a uniform power split instead of water-filling.
pub fn zf_throughput_equal_power(
    h_sub: &DMatrix<Complex64>,
    total_power: f64,
) -> Result<f64, RateError> {
    let gains = zf_effective_gains(h_sub)?;
    let share = crate::precoding::equal_power(gains.len(), total_power)?[0];
    Ok(gains.iter().map(|&c| (1.0 + share * c).log2().max(0.0)).sum())
}

/// Sum channel correlation of a user set: sum over ordered pairs (u, v),
/// u != v, of |h_u h_v^H| / (||h_u|| ||h_v||). A singleton set scores 0.
pub fn sum_channel_correlation(h_sub: &DMatrix<Complex64>) -> Result<f64, RateError> {
    let n = h_sub.nrows();
    let norms: Vec<f64> = (0..n).map(|i| h_sub.row(i).norm()).collect();
    if let Some(bad) = norms.iter().position(|&v| !(v > 0.0)) {
        return Err(RateError::ZeroNormRow(bad));
    }
    let mut total = 0.0;
    for u in 0..n {
        for v in (u + 1)..n {
            let inner = h_sub.row(u).dot(&h_sub.row(v).map(|z| z.conj()));
            // ordered pairs (u,v) and (v,u) contribute the same magnitude
            total += 2.0 * inner.norm() / (norms[u] * norms[v]);
        }
    }
    Ok(total)
}
