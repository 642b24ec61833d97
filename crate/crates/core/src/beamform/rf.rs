//! Medium-timescale analog beamforming by stochastic successive convex
//! approximation over the phase-shift selection matrix.
//!
//! `S_RF` is `N_t × N_RF·2^B`; column `r·2^B + b` selects RF chain `r` with
//! quantized phase `b`, so `F_RF = S_RF F_set` with `F_set = I ⊗ f_set`.
//! Gradients are matrices of the same shape; their column-major
//! vectorization matches `vec(S_RF)`.

use std::f64::consts::{LN_2, PI};

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{argmax_first, project_simplex, CMat, RMat, ZERO};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SscaConfig {
    /// Proximal weight of the quadratic surrogate.
    pub tau: f64,
    /// Boolean penalty weight.
    pub rho: f64,
    /// Step sequence `η_t = t^{-eta_exponent}`.
    pub eta_exponent: f64,
    /// Multiply `tau` by `max(1, ‖v_grad‖_∞)` so one surrogate step moves
    /// each entry by at most `1/(2τ)` whatever the SNR scale.
    pub scale_tau: bool,
}

impl Default for SscaConfig {
    fn default() -> Self {
        SscaConfig { tau: 1.0, rho: 0.1, eta_exponent: 0.6, scale_tau: true }
    }
}

/// `f_set[b] = e^{-j2πb/2^B} / √N_t`.
pub fn phase_set(bits: u32, n_t: usize) -> Vec<Complex64> {
    let levels = 1usize << bits;
    let amp = 1.0 / (n_t as f64).sqrt();
    (0..levels).map(|b| Complex64::from_polar(amp, -2.0 * PI * b as f64 / levels as f64)).collect()
}

/// `I_{N_RF} ⊗ f_set`.
pub fn f_set_matrix(n_rf: usize, bits: u32, n_t: usize) -> CMat {
    let f = phase_set(bits, n_t);
    let levels = f.len();
    CMat::from_fn(n_rf * levels, n_rf, |q, r| if q / levels == r { f[q % levels] } else { ZERO })
}

fn check_dims(s: &RMat, n_rf: usize, bits: u32, f_bb: &CMat, h_rf: &CMat, noise: &[f64]) -> Result<()> {
    let q = n_rf << bits;
    if s.ncols() != q {
        return Err(Error::DimensionMismatch { context: "S_RF columns", expected: q, got: s.ncols() });
    }
    if h_rf.nrows() != s.nrows() {
        return Err(Error::DimensionMismatch { context: "S_RF antennas", expected: h_rf.nrows(), got: s.nrows() });
    }
    if f_bb.nrows() != n_rf {
        return Err(Error::DimensionMismatch { context: "F_BB rows", expected: n_rf, got: f_bb.nrows() });
    }
    if f_bb.ncols() != h_rf.ncols() || noise.len() != h_rf.ncols() {
        return Err(Error::DimensionMismatch { context: "users", expected: h_rf.ncols(), got: f_bb.ncols() });
    }
    Ok(())
}

/// `V = F_set F_BB` (`N_RF·2^B × K`) and `a[(k, i)] = h_k^H S V_i`.
fn cross_gains(s: &RMat, n_rf: usize, bits: u32, f_bb: &CMat, h_rf: &CMat) -> (CMat, CMat) {
    let v = f_set_matrix(n_rf, bits, s.nrows()) * f_bb;
    let s_c = s.map(|x| Complex64::new(x, 0.0));
    let a = h_rf.adjoint() * s_c * &v;
    (v, a)
}

/// Sum of `log₂(1 + SINR_k)` with `SINR_k` evaluated through `S_RF F_set`.
/// `h_rf` is `N_t × K` (column `k` is `h_RF,k`).
pub fn sumrate_rf(s: &RMat, n_rf: usize, bits: u32, f_bb: &CMat, h_rf: &CMat, noise: &[f64]) -> Result<f64> {
    check_dims(s, n_rf, bits, f_bb, h_rf, noise)?;
    let (_, a) = cross_gains(s, n_rf, bits, f_bb, h_rf);
    let k = h_rf.ncols();
    Ok((0..k)
        .map(|u| {
            let total: f64 = (0..k).map(|i| a[(u, i)].norm_sqr()).sum::<f64>() + noise[u];
            let interference = total - a[(u, u)].norm_sqr();
            (total / interference).log2()
        })
        .sum())
}

/// Analytic gradient of [`sumrate_rf`] with respect to the real entries of
/// `S_RF`:
/// `(1/ln 2) Σ_k [Σ_i e_ki / Γ_k − Σ_{i≠k} e_ki / Γ_{-k}]` with
/// `e_ki = 2 Re{a_ki^* conj(h_k) v_iᵀ}`.
pub fn grad_s(s: &RMat, n_rf: usize, bits: u32, f_bb: &CMat, h_rf: &CMat, noise: &[f64]) -> Result<RMat> {
    check_dims(s, n_rf, bits, f_bb, h_rf, noise)?;
    let (v, a) = cross_gains(s, n_rf, bits, f_bb, h_rf);
    let k = h_rf.ncols();
    let (n_t, q) = (s.nrows(), s.ncols());
    let mut grad = RMat::zeros(n_t, q);
    for u in 0..k {
        let gamma_all: f64 = (0..k).map(|i| a[(u, i)].norm_sqr()).sum::<f64>() + noise[u];
        let gamma_int = gamma_all - a[(u, u)].norm_sqr();
        for i in 0..k {
            let mut w = 1.0 / gamma_all;
            if i != u {
                w -= 1.0 / gamma_int;
            }
            let coef = a[(u, i)].conj() * (2.0 * w / LN_2);
            for c in 0..q {
                let cv = coef * v[(c, i)];
                for n in 0..n_t {
                    grad[(n, c)] += (cv * h_rf[(n, u)].conj()).re;
                }
            }
        }
    }
    Ok(grad)
}

/// Per-row argmax of a relaxed selection, ties to the smaller column.
pub fn round_rf(s: &RMat) -> Vec<usize> {
    (0..s.nrows())
        .map(|n| {
            let row: Vec<f64> = s.row(n).iter().copied().collect();
            argmax_first(&row)
        })
        .collect()
}

pub fn one_hot(choices: &[usize], q: usize) -> RMat {
    let mut s = RMat::zeros(choices.len(), q);
    for (n, &c) in choices.iter().enumerate() {
        s[(n, c)] = 1.0;
    }
    s
}

/// `F_RF` for a rounded selection: antenna `n` drives chain `c / 2^B` with
/// phase `f_set[c mod 2^B]`.
pub fn analog_from_choices(choices: &[usize], n_rf: usize, bits: u32) -> CMat {
    let f = phase_set(bits, choices.len());
    let levels = f.len();
    let mut m = CMat::zeros(choices.len(), n_rf);
    for (n, &c) in choices.iter().enumerate() {
        m[(n, c / levels)] = f[c % levels];
    }
    m
}

/// Chain of antenna `n` (0-based) in the fixed-subarray layout:
/// `⌈(n+1) N_RF / N_t⌉ − 1`.
pub fn fixed_subarray_chain(n: usize, n_t: usize, n_rf: usize) -> usize {
    ((n + 1) * n_rf).div_ceil(n_t) - 1
}

pub fn random_choices<R: Rng + ?Sized>(
    n_t: usize,
    n_rf: usize,
    bits: u32,
    chains: Option<&[usize]>,
    rng: &mut R,
) -> Vec<usize> {
    let levels = 1usize << bits;
    (0..n_t)
        .map(|n| {
            let chain = chains.map_or_else(|| rng.gen_range(0..n_rf), |c| c[n]);
            chain * levels + rng.gen_range(0..levels)
        })
        .collect()
}

/// Rounded selection and the analog beamformer it produces.
#[derive(Debug, Clone, PartialEq)]
pub struct RfSelection {
    pub rounded: Vec<usize>,
    pub f_rf: CMat,
}

/// Recursive SSCA state for one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct SscaState {
    cfg: SscaConfig,
    n_rf: usize,
    bits: u32,
    relaxed: RMat,
    rounded: Vec<usize>,
    /// Fixed chain per antenna for the fixed-subarray architecture.
    chains: Option<Vec<usize>>,
    value: f64,
    gradient: RMat,
    t: usize,
}

impl SscaState {
    /// Starts from a one-hot relaxed point at `init` (uniform rows give a
    /// zero analog beamformer, at which the gradient vanishes).
    pub fn new(n_rf: usize, bits: u32, init: &[usize], chains: Option<Vec<usize>>, cfg: SscaConfig) -> Result<Self> {
        let q = n_rf << bits;
        if init.iter().any(|&c| c >= q) {
            return Err(Error::invalid("initial RF selection out of range"));
        }
        if let Some(ch) = &chains {
            if ch.len() != init.len() || init.iter().zip(ch).any(|(&c, &r)| c >> bits != r) {
                return Err(Error::invalid("initial RF selection violates the fixed chain assignment"));
            }
        }
        if !(cfg.tau > 0.0) || cfg.rho < 0.0 || !(cfg.eta_exponent > 0.0 && cfg.eta_exponent <= 1.0) {
            return Err(Error::invalid("SSCA needs τ > 0, ϱ₂ ≥ 0 and an η exponent in (0, 1]"));
        }
        Ok(SscaState {
            cfg,
            n_rf,
            bits,
            relaxed: one_hot(init, q),
            rounded: init.to_vec(),
            chains,
            value: 0.0,
            gradient: RMat::zeros(init.len(), q),
            t: 0,
        })
    }

    /// Uniform relaxed rows over the allowed columns.
    pub fn uniform(n_t: usize, n_rf: usize, bits: u32, cfg: SscaConfig) -> Self {
        let q = n_rf << bits;
        let relaxed = RMat::from_element(n_t, q, 1.0 / q as f64);
        let rounded = round_rf(&relaxed);
        SscaState { cfg, n_rf, bits, relaxed, rounded, chains: None, value: 0.0, gradient: RMat::zeros(n_t, q), t: 0 }
    }

    /// Restarts the recursive averages and step counter; the selection is
    /// kept as a warm start.
    pub fn reset_recursion(&mut self) {
        self.t = 0;
        self.value = 0.0;
        self.gradient.fill(0.0);
    }

    pub fn relaxed(&self) -> &RMat {
        &self.relaxed
    }

    pub fn rounded(&self) -> &[usize] {
        &self.rounded
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn gradient_estimate(&self) -> &RMat {
        &self.gradient
    }

    pub fn iteration(&self) -> usize {
        self.t
    }

    pub fn selection(&self) -> RfSelection {
        RfSelection { rounded: self.rounded.clone(), f_rf: self.f_rf() }
    }

    pub fn f_rf(&self) -> CMat {
        analog_from_choices(&self.rounded, self.n_rf, self.bits)
    }

    /// `S_RF F_set` at the relaxed point.
    pub fn relaxed_analog(&self) -> CMat {
        self.relaxed.map(|x| Complex64::new(x, 0.0)) * f_set_matrix(self.n_rf, self.bits, self.relaxed.nrows())
    }

    fn project(&self, target: &mut RMat) {
        let levels = 1usize << self.bits;
        for n in 0..target.nrows() {
            let (lo, hi) = match &self.chains {
                Some(c) => (c[n] * levels, (c[n] + 1) * levels),
                None => (0, target.ncols()),
            };
            let mut row: Vec<f64> = (lo..hi).map(|c| target[(n, c)]).collect();
            project_simplex(&mut row);
            for c in 0..target.ncols() {
                target[(n, c)] = if (lo..hi).contains(&c) { row[c - lo] } else { 0.0 };
            }
        }
    }

    /// Solution of the penalized surrogate subproblem at the current point:
    /// row-wise projection of `s + (v_grad + ϱ(2s − 1)) / (2τ)`, with `τ`
    /// scaled per [`SscaConfig::scale_tau`].
    pub fn surrogate_maximizer(&self) -> RMat {
        let s = &self.relaxed;
        let tau = if self.cfg.scale_tau { self.cfg.tau * self.gradient.amax().max(1.0) } else { self.cfg.tau };
        let mut target = RMat::from_fn(s.nrows(), s.ncols(), |n, c| {
            let x = s[(n, c)];
            x + (self.gradient[(n, c)] + self.cfg.rho * (2.0 * x - 1.0)) / (2.0 * tau)
        });
        self.project(&mut target);
        target
    }

    /// One recursion on a fresh channel sample. `f_bb` should be fitted to
    /// the relaxed point, see [`SscaState::relaxed_analog`]. Returns the
    /// sample sum-rate at the previous point.
    pub fn step(&mut self, h_rf: &CMat, f_bb: &CMat, noise: &[f64]) -> Result<f64> {
        let g0 = sumrate_rf(&self.relaxed, self.n_rf, self.bits, f_bb, h_rf, noise)?;
        let grad = grad_s(&self.relaxed, self.n_rf, self.bits, f_bb, h_rf, noise)?;
        if !g0.is_finite() || grad.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("SSCA sample value or gradient".into()));
        }
        self.t += 1;
        let eta = (self.t as f64).powf(-self.cfg.eta_exponent);
        self.value = (1.0 - eta) * self.value + eta * g0;
        self.gradient = &self.gradient * (1.0 - eta) + grad * eta;
        let target = self.surrogate_maximizer();
        self.relaxed = &self.relaxed * (1.0 - eta) + target * eta;
        self.rounded = round_rf(&self.relaxed);
        Ok(g0)
    }
}
