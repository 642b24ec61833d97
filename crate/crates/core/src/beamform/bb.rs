//! Short-timescale digital precoding.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{all_finite, frobenius_sq, solve_hermitian, CMat};

#[derive(Debug, Clone, PartialEq)]
pub struct DigitalBeamformer {
    /// `N_RF × K`.
    pub f_bb: CMat,
    /// `‖F_RF F_BB‖_F²` after normalization.
    pub tx_power: f64,
    /// Set when the effective channel was zero and no power could be
    /// allocated.
    pub degenerate: bool,
}

fn normalize(f_tilde: CMat, f_rf: &CMat, p_t: f64) -> DigitalBeamformer {
    let power = frobenius_sq(&(f_rf * &f_tilde));
    if power == 0.0 || !power.is_finite() {
        return DigitalBeamformer {
            f_bb: CMat::zeros(f_tilde.nrows(), f_tilde.ncols()),
            tx_power: 0.0,
            degenerate: true,
        };
    }
    let f_bb = f_tilde * Complex64::new((p_t / power).sqrt(), 0.0);
    let tx_power = frobenius_sq(&(f_rf * &f_bb));
    DigitalBeamformer { f_bb, tx_power, degenerate: false }
}

fn check(h_e: &CMat, noise: &[f64], f_rf: &CMat, p_t: f64) -> Result<()> {
    if !all_finite(h_e) || !all_finite(f_rf) || noise.iter().any(|v| !v.is_finite()) || !p_t.is_finite() {
        return Err(Error::invalid("non-finite input to digital precoder"));
    }
    if noise.len() != h_e.nrows() {
        return Err(Error::DimensionMismatch { context: "noise per user", expected: h_e.nrows(), got: noise.len() });
    }
    if f_rf.ncols() != h_e.ncols() {
        return Err(Error::DimensionMismatch { context: "RF chains", expected: h_e.ncols(), got: f_rf.ncols() });
    }
    if noise.iter().any(|&v| v <= 0.0) || p_t <= 0.0 {
        return Err(Error::invalid("noise variances and transmit power must be positive"));
    }
    Ok(())
}

/// `F̃ = H_e^H (H_e H_e^H + Λ)^{-1}`, scaled so that `‖F_RF F_BB‖_F² = P_t`.
/// `h_e` is `K × N_RF`.
pub fn mmse_digital(h_e: &CMat, noise: &[f64], f_rf: &CMat, p_t: f64) -> Result<DigitalBeamformer> {
    check(h_e, noise, f_rf, p_t)?;
    let mut gram = h_e * h_e.adjoint();
    for (k, &s) in noise.iter().enumerate() {
        gram[(k, k)] += Complex64::new(s, 0.0);
    }
    let inv = solve_hermitian(&gram, &CMat::identity(h_e.nrows(), h_e.nrows()))
        .ok_or_else(|| Error::NonFinite("MMSE regularized Gram inverse".into()))?;
    Ok(normalize(h_e.adjoint() * inv, f_rf, p_t))
}

/// Matched filter `F̃ = H_e^H` at the same power; used as a reference
/// precoder.
pub fn matched_filter(h_e: &CMat, noise: &[f64], f_rf: &CMat, p_t: f64) -> Result<DigitalBeamformer> {
    check(h_e, noise, f_rf, p_t)?;
    Ok(normalize(h_e.adjoint(), f_rf, p_t))
}

/// MMSE precoder with the analog stage bypassed; `h_full` is `K × N_t`
/// (row `k` is `h_k^H`). Returns the `N_t × K` precoder.
pub fn fully_digital_baseline(h_full: &CMat, noise: &[f64], p_t: f64) -> Result<CMat> {
    let n_t = h_full.ncols();
    Ok(mmse_digital(h_full, noise, &CMat::identity(n_t, n_t), p_t)?.f_bb)
}
