//! Linear precoder construction and downlink power loading.
//!
//! Precoders are returned unnormalized, exactly as their defining formulas
//! produce them; [`normalize_transmit_power`] rescales to a transmit-power
//! budget before rate evaluation.

use nalgebra::{Cholesky, DMatrix, Dyn};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PrecodingError {
    #[error("cannot zero-force {users} users with {antennas} antennas")]
    UserCountExceedsAntennas { users: usize, antennas: usize },
    #[error("channel Gram matrix is singular; user rows are linearly dependent")]
    SingularChannel,
    #[error("regularization must be positive, got {0}")]
    NonPositiveRegularization(f64),
    #[error("water-filling needs at least one gain")]
    EmptyGains,
    #[error("gains must be positive and finite, got {0}")]
    InvalidGain(f64),
    #[error("total power must be positive, got {0}")]
    NonPositivePower(f64),
    #[error("power loading needs at least one user")]
    ZeroUsers,
}

/// Which linear precoder to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecoderKind {
    Zf,
    Mmse,
}

impl std::fmt::Display for PrecoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PrecoderKind::Zf => "zf",
            PrecoderKind::Mmse => "mmse",
        })
    }
}

/// A precoder together with its water-filling power allocation.
#[derive(Debug, Clone)]
pub struct PrecoderOutput {
    /// Precoding matrix, antennas x scheduled users.
    pub matrix: DMatrix<Complex64>,
    /// Per-user powers p_i = max(0, mu - 1/c_i).
    pub power_alloc: Vec<f64>,
    /// Water level.
    pub mu: f64,
    /// Power budget the allocation satisfies.
    pub total_power: f64,
}

// Relative floor on Cholesky factor pivots below which a Gram matrix is
// treated as singular rather than merely ill-conditioned. The factor
// diagonal carries square roots of the pivots, so 1e-7 here corresponds to
// a reciprocal condition number around 1e-14 and reliably catches
// duplicated channel rows whose zero pivot rounds to a tiny value.
const PIVOT_RCOND_FLOOR: f64 = 1e-7;

pub(crate) fn gram_cholesky(
    gram: DMatrix<Complex64>,
) -> Result<Cholesky<Complex64, Dyn>, PrecodingError> {
    let chol = Cholesky::new(gram).ok_or(PrecodingError::SingularChannel)?;
    let l = chol.l_dirty();
    // nalgebra's complex Cholesky takes complex square roots, so an
    // indefinite input can "succeed" with rotated pivots; demand real
    // positive ones.
    let mut max = 0.0f64;
    let mut min = f64::INFINITY;
    for i in 0..l.nrows() {
        let d = l[(i, i)];
        if !(d.re > 0.0) || d.im.abs() > 1e-8 * d.re {
            return Err(PrecodingError::SingularChannel);
        }
        max = max.max(d.re);
        min = min.min(d.re);
    }
    if min < max * PIVOT_RCOND_FLOOR {
        return Err(PrecodingError::SingularChannel);
    }
    Ok(chol)
}

/// Zero-forcing precoder P = H^H (H H^H)^{-1} for a K_s x N channel with
/// linearly independent rows.
pub fn zf_precoder(h: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>, PrecodingError> {
    let (users, antennas) = h.shape();
    if users > antennas {
        return Err(PrecodingError::UserCountExceedsAntennas { users, antennas });
    }
    let chol = gram_cholesky(h * h.adjoint())?;
    Ok(h.adjoint() * chol.inverse())
}

/// Regularized channel inversion P = H^H (H H^H + delta I)^{-1}.
///
/// Well defined for any row count; the regularizer removes the singularity
/// of the plain inverse. Returned unnormalized.
pub fn mmse_precoder(
    h: &DMatrix<Complex64>,
    noise_over_power: f64,
) -> Result<DMatrix<Complex64>, PrecodingError> {
    if !(noise_over_power > 0.0) {
        return Err(PrecodingError::NonPositiveRegularization(noise_over_power));
    }
    let users = h.nrows();
    let reg = h * h.adjoint() + DMatrix::identity(users, users).scale(noise_over_power);
    let chol = Cholesky::new(reg).ok_or(PrecodingError::SingularChannel)?;
    Ok(h.adjoint() * chol.inverse())
}

/// Scales a precoder by one scalar so that trace(P P^H) equals
/// `target_power`. A zero matrix is returned unchanged.
pub fn normalize_transmit_power(
    p: &DMatrix<Complex64>,
    target_power: f64,
) -> DMatrix<Complex64> {
    let current = p.norm_squared();
    if current <= 0.0 {
        return p.clone();
    }
    p.scale((target_power / current).sqrt())
}

/// Water-filling over effective gains c_i > 0 under a total-power budget.
///
/// Returns the water level mu and powers p_i = max(0, mu - 1/c_i) with
/// sum(p_i) = total_power. mu is found by bisection over
/// [min 1/c_i, max 1/c_i + P] with at most 200 iterations, driven to the
/// f64 rounding floor (far inside the 1e-12 residual budget).
pub fn waterfill(gains: &[f64], total_power: f64) -> Result<(f64, Vec<f64>), PrecodingError> {
    if gains.is_empty() {
        return Err(PrecodingError::EmptyGains);
    }
    if let Some(&bad) = gains.iter().find(|&&c| !(c > 0.0 && c.is_finite())) {
        return Err(PrecodingError::InvalidGain(bad));
    }
    if !(total_power > 0.0) {
        return Err(PrecodingError::NonPositivePower(total_power));
    }

    let inv: Vec<f64> = gains.iter().map(|&c| 1.0 / c).collect();
    let mut lo = inv.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut hi = inv.iter().cloned().fold(0.0, f64::max) + total_power;
    let allocated = |mu: f64| inv.iter().map(|&v| (mu - v).max(0.0)).sum::<f64>();

    let mut mu = hi;
    for _ in 0..200 {
        mu = 0.5 * (lo + hi);
        let residual = allocated(mu) - total_power;
        if residual == 0.0 {
            break;
        }
        if residual > 0.0 {
            hi = mu;
        } else {
            lo = mu;
        }
        if hi - lo <= f64::EPSILON * mu.abs() {
            break;
        }
    }
    let powers: Vec<f64> = inv.iter().map(|&v| (mu - v).max(0.0)).collect();
    Ok((mu, powers))
}

/// Uniform power split across `n_users`.
pub fn equal_power(n_users: usize, total_power: f64) -> Result<Vec<f64>, PrecodingError> {
    if n_users == 0 {
        return Err(PrecodingError::ZeroUsers);
    }
    Ok(vec![total_power / n_users as f64; n_users])
}

/// ZF precoder plus the water-filling allocation over its effective gains
/// c_i = 1 / [(H H^H)^{-1}]_ii.
///
/// With symbol powers q_i = p_i * c_i the transmit covariance satisfies
/// trace(C_x) = sum(p_i) = total_power.
pub fn zf_with_waterfilling(
    h: &DMatrix<Complex64>,
    total_power: f64,
) -> Result<PrecoderOutput, PrecodingError> {
    let (users, antennas) = h.shape();
    if users > antennas {
        return Err(PrecodingError::UserCountExceedsAntennas { users, antennas });
    }
    let chol = gram_cholesky(h * h.adjoint())?;
    let inv = chol.inverse();
    let gains: Vec<f64> = (0..users).map(|i| 1.0 / inv[(i, i)].re).collect();
    if let Some(&bad) = gains.iter().find(|&&c| !(c > 0.0 && c.is_finite())) {
        return Err(PrecodingError::InvalidGain(bad));
    }
    let matrix = h.adjoint() * &inv;
    let (mu, power_alloc) = waterfill(&gains, total_power)?;
    Ok(PrecoderOutput { matrix, power_alloc, mu, total_power })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_channel(rows: usize, cols: usize, seed: u64) -> DMatrix<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| crate::scenario::sample_cn01(&mut rng))
    }

    fn cplx_identity(n: usize) -> DMatrix<Complex64> {
        DMatrix::identity(n, n)
    }

    fn max_abs(m: &DMatrix<Complex64>) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn zf_identity_channel() {
        let p = zf_precoder(&cplx_identity(3)).unwrap();
        assert!((p - cplx_identity(3)).norm() < 1e-12);
    }

    #[test]
    fn zf_single_row_is_matched_filter() {
        let h = DMatrix::from_row_slice(1, 2, &[Complex64::new(1.0, 1.0), Complex64::new(0.0, 2.0)]);
        let p = zf_precoder(&h).unwrap();
        let norm_sq = h.norm_squared();
        let expected = h.adjoint() / Complex64::new(norm_sq, 0.0);
        assert!((p - expected).norm() < 1e-12);
    }

    #[test]
    fn zf_residual_on_random_full_rank() {
        let h = random_channel(4, 8, 1);
        let p = zf_precoder(&h).unwrap();
        let residual = max_abs(&(&h * &p - cplx_identity(4)));
        assert!(residual < 1e-9, "residual {residual}");
    }

    #[test]
    fn zf_rejects_more_users_than_antennas() {
        let h = random_channel(5, 3, 2);
        assert!(matches!(
            zf_precoder(&h),
            Err(PrecodingError::UserCountExceedsAntennas { users: 5, antennas: 3 })
        ));
    }

    #[test]
    fn zf_rejects_duplicate_rows() {
        let mut h = random_channel(3, 6, 3);
        let dup = h.row(0).into_owned();
        h.set_row(1, &dup);
        assert!(matches!(zf_precoder(&h), Err(PrecodingError::SingularChannel)));
    }

    #[test]
    fn mmse_converges_to_zf_at_vanishing_regularization() {
        let h = random_channel(4, 8, 4);
        let zf = zf_precoder(&h).unwrap();
        let mmse = mmse_precoder(&h, 1e-9).unwrap();
        assert!(max_abs(&(zf - mmse)) < 1e-6);
    }

    #[test]
    fn mmse_handles_overloaded_channel() {
        let h = random_channel(6, 3, 5);
        let p = mmse_precoder(&h, 0.5).unwrap();
        assert_eq!(p.shape(), (3, 6));
        assert!(p.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
    }

    #[test]
    fn mmse_identity_unit_loading_halves() {
        // (I I^H + I)^{-1} = I/2, so P = I/2 before normalization.
        let p = mmse_precoder(&cplx_identity(3), 1.0).unwrap();
        assert!((p - cplx_identity(3).scale(0.5)).norm() < 1e-12);
    }

    #[test]
    fn mmse_rejects_nonpositive_regularization() {
        let h = random_channel(2, 4, 6);
        assert!(matches!(
            mmse_precoder(&h, 0.0),
            Err(PrecodingError::NonPositiveRegularization(_))
        ));
    }

    #[test]
    fn normalization_hits_target_trace() {
        let p = random_channel(8, 4, 7);
        let scaled = normalize_transmit_power(&p, 4.0);
        assert!((scaled.norm_squared() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn waterfill_symmetric_gains_split_evenly() {
        let (mu, p) = waterfill(&[1.0, 1.0, 1.0, 1.0], 4.0).unwrap();
        assert!((mu - 2.0).abs() < 1e-9);
        for pi in p {
            assert!((pi - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn waterfill_single_user_takes_everything() {
        let (mu, p) = waterfill(&[1.0], 10.0).unwrap();
        assert!((mu - 11.0).abs() < 1e-9);
        assert!((p[0] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn waterfill_starves_weak_user_matching_grid_search() {
        let gains = [1.0, 0.1];
        let total = 1.0;
        let (mu, p) = waterfill(&gains, total).unwrap();

        // Independent oracle: brute-force grid over mu with step 1e-6.
        let inv: Vec<f64> = gains.iter().map(|c| 1.0 / c).collect();
        let mut best_mu = 0.0;
        let mut best_err = f64::INFINITY;
        let mut grid = 1.0;
        while grid <= 11.0 {
            let s: f64 = inv.iter().map(|&v| (grid - v).max(0.0)).sum();
            let err = (s - total).abs();
            if err < best_err {
                best_err = err;
                best_mu = grid;
            }
            grid += 1e-6;
        }
        assert!((mu - best_mu).abs() < 1e-5, "mu {mu} vs grid {best_mu}");
        assert!((p[0] - 1.0).abs() < 1e-9);
        assert_eq!(p[1], 0.0);
    }

    #[test]
    fn waterfill_rejects_bad_inputs() {
        assert!(matches!(waterfill(&[], 1.0), Err(PrecodingError::EmptyGains)));
        assert!(matches!(waterfill(&[1.0, -2.0], 1.0), Err(PrecodingError::InvalidGain(_))));
        assert!(matches!(waterfill(&[1.0], 0.0), Err(PrecodingError::NonPositivePower(_))));
    }

    #[test]
    fn equal_power_examples() {
        assert_eq!(equal_power(4, 4.0).unwrap(), vec![1.0; 4]);
        assert_eq!(equal_power(1, 7.0).unwrap(), vec![7.0]);
        let p = equal_power(8, 16.0).unwrap();
        assert_eq!(p, vec![2.0; 8]);
        assert_eq!(p.iter().sum::<f64>(), 16.0);
        assert!(matches!(equal_power(0, 1.0), Err(PrecodingError::ZeroUsers)));
    }

    #[test]
    fn zf_with_waterfilling_meets_power_budget() {
        let h = random_channel(4, 12, 8);
        let out = zf_with_waterfilling(&h, 16.0).unwrap();
        let total: f64 = out.power_alloc.iter().sum();
        assert!((total - 16.0).abs() <= 1e-9 * 16.0);
        // trace(C_x) with q_i = p_i c_i equals the spent power
        let gram_inv = Cholesky::new(&h * h.adjoint()).unwrap().inverse();
        let cols = out.matrix.ncols();
        let trace: f64 = (0..cols)
            .map(|i| {
                let c = 1.0 / gram_inv[(i, i)].re;
                out.power_alloc[i] * c * out.matrix.column(i).norm_squared()
            })
            .sum();
        assert!((trace - 16.0).abs() < 1e-8);
    }

    proptest! {
        #[test]
        fn waterfill_kkt_and_budget(
            gains in proptest::collection::vec(1e-3f64..1e3, 1..12),
            total in 0.1f64..100.0,
        ) {
            let (mu, p) = waterfill(&gains, total).unwrap();
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - total).abs() <= 1e-9 * total);
            for (pi, c) in p.iter().zip(gains.iter()) {
                if *pi > 0.0 {
                    prop_assert!((mu - 1.0 / c - pi).abs() <= 1e-9 * (1.0 + pi));
                } else {
                    prop_assert!(mu <= 1.0 / c + 1e-9);
                }
            }
        }

        #[test]
        fn zf_residual_property(seed in 0u64..200) {
            let h = random_channel(4, 8, seed);
            // Random CN(0,1) rows are well conditioned with high probability;
            // skip the rare bad draw the same way the scheduler would.
            if let Ok(p) = zf_precoder(&h) {
                let residual = max_abs(&(&h * &p - cplx_identity(4)));
                prop_assert!(residual < 1e-9);
            }
        }
    }
}
