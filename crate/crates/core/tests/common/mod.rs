//! Shared oracles and random-instance generators for the integration tests.
#![allow(dead_code)]

use num_complex::Complex64;
use rand::Rng;

use trihybrid::beamform::bb::mmse_digital;
use trihybrid::beamform::rf::{analog_from_choices, fixed_subarray_chain, random_choices, SscaConfig, SscaState};
use trihybrid::channel::{AngularGrid, ChannelRealization, PathDraw};
use trihybrid::linalg::{complex_gaussian, rng_from_seed, CMat, CVec, RMat, SimRng};
use trihybrid::metrics::evaluate;
use trihybrid::patterns::AntennaPatterns;

pub fn random_cmat(rng: &mut SimRng, rows: usize, cols: usize) -> CMat {
    CMat::from_fn(rows, cols, |_, _| complex_gaussian(rng, 1.0))
}

/// Rows drawn uniformly at random and normalized onto the simplex.
pub fn random_simplex_rows(rng: &mut SimRng, rows: usize, cols: usize) -> RMat {
    let mut s = RMat::from_fn(rows, cols, |_, _| rng.gen::<f64>() + 1e-3);
    for n in 0..rows {
        let sum: f64 = s.row(n).iter().sum();
        s.row_mut(n).iter_mut().for_each(|x| *x /= sum);
    }
    s
}

/// Non-negative per-antenna patterns with roughly a third of the bins dark.
pub fn random_patterns(rng: &mut SimRng, n_t: usize, m: usize) -> AntennaPatterns {
    AntennaPatterns::from_matrix(RMat::from_fn(n_t, m, |_, _| {
        if rng.gen_bool(0.3) {
            0.0
        } else {
            rng.gen_range(0.0..2.0)
        }
    }))
}

/// `users × paths` rays at arbitrary angles in `[-π/2, π/2]`.
pub fn random_realization(rng: &mut SimRng, n_t: usize, grid: &AngularGrid, users: usize, paths: usize) -> ChannelRealization {
    let draws = (0..users)
        .map(|_| {
            (0..paths)
                .map(|l| PathDraw {
                    cluster: l,
                    aod: rng.gen_range(-std::f64::consts::FRAC_PI_2..=std::f64::consts::FRAC_PI_2),
                    phase: rng.gen_range(0.0..2.0 * std::f64::consts::PI),
                    alpha: rng.gen_range(0.1..2.0),
                    bin: 0,
                })
                .collect()
        })
        .collect();
    ChannelRealization::from_paths(n_t, grid, draws)
}

/// Literal `M·N_t`-dimensional construction for UE `k`: returns
/// `(H_EM,k, h_S,k, F_EM)` with `H_EM,k = [I ⊗ h_EM,k,1, …, I ⊗ h_EM,k,L]`,
/// `h_S,k` the stacked `α e^{jφ} a` blocks and `F_EM = blkdiag(f_1, …, f_Nt)`.
pub fn literal_blocks(real: &ChannelRealization, k: usize, patterns: &AntennaPatterns) -> (CMat, CVec, CMat) {
    let n_t = real.n_t();
    let m = real.grid_len();
    let paths = real.paths(k);
    let l_count = paths.len();
    let mut h_em = CMat::zeros(m * n_t, l_count * n_t);
    let mut h_s = CVec::zeros(l_count * n_t);
    for (l, p) in paths.iter().enumerate() {
        let mut one_hot = CVec::zeros(m);
        one_hot[p.bin] = Complex64::new(1.0, 0.0);
        let block = CMat::identity(n_t, n_t).kronecker(&one_hot);
        h_em.view_mut((0, l * n_t), (m * n_t, n_t)).copy_from(&block);
        for n in 0..n_t {
            let steer = Complex64::cis(-std::f64::consts::PI * n as f64 * p.aod.sin());
            h_s[l * n_t + n] = Complex64::from_polar(p.alpha, p.phase) * steer;
        }
    }
    let mut f_em = CMat::zeros(m * n_t, n_t);
    for n in 0..n_t {
        for bin in 0..m {
            f_em[(n * m + bin, n)] = Complex64::new(patterns.gain(n, bin), 0.0);
        }
    }
    (h_em, h_s, f_em)
}

/// SINR of every UE from `|h_S,k^H H_EM,k^H F_EM F_RF f_BB,j|²`.
pub fn literal_sinr(real: &ChannelRealization, patterns: &AntennaPatterns, f_rf: &CMat, f_bb: &CMat, noise: &[f64]) -> Vec<f64> {
    let users = real.num_users();
    (0..users)
        .map(|k| {
            let (h_em, h_s, f_em) = literal_blocks(real, k, patterns);
            let row = h_s.adjoint() * h_em.adjoint() * f_em * f_rf * f_bb;
            let signal = row[(0, k)].norm_sqr();
            let interference: f64 = (0..users).filter(|&j| j != k).map(|j| row[(0, j)].norm_sqr()).sum();
            signal / (interference + noise[k])
        })
        .collect()
}

/// Sum-rate of `f_rf` with the MMSE digital stage fitted to `h` (`N_t × K`).
pub fn mmse_rate(h: &CMat, f_rf: &CMat, noise: &[f64], p_t: f64) -> f64 {
    let d = mmse_digital(&(h.adjoint() * f_rf), noise, f_rf, p_t).expect("MMSE precoder");
    evaluate(h, &(f_rf * &d.f_bb), noise).expect("rate").sum_rate
}

/// SSCA on a channel that never changes, next to a random-search baseline.
pub struct StationaryRun {
    /// Rate of the rounded selection before each step and after the last.
    pub curve: Vec<f64>,
    pub best_random: f64,
}

impl StationaryRun {
    pub fn final_rate(&self) -> f64 {
        *self.curve.last().expect("non-empty curve")
    }
}

pub fn stationary_ssca(seed: u64, n_t: usize, n_rf: usize, bits: u32, frames: usize, draws: usize) -> StationaryRun {
    let mut rng = rng_from_seed(seed);
    let users = n_rf;
    let h = random_cmat(&mut rng, n_t, users);
    let noise = vec![0.1; users];
    let p_t = 1.0;
    let blocks: Vec<usize> = (0..n_t).map(|n| fixed_subarray_chain(n, n_t, n_rf)).collect();
    let init = random_choices(n_t, n_rf, bits, Some(&blocks), &mut rng);
    let mut st = SscaState::new(n_rf, bits, &init, None, SscaConfig::default()).expect("SSCA state");
    let mut curve = Vec::with_capacity(frames + 1);
    for _ in 0..frames {
        curve.push(mmse_rate(&h, &st.f_rf(), &noise, p_t));
        let f_relaxed = st.relaxed_analog();
        let f_bb = mmse_digital(&(h.adjoint() * &f_relaxed), &noise, &f_relaxed, p_t).expect("MMSE").f_bb;
        st.step(&h, &f_bb, &noise).expect("SSCA step");
    }
    curve.push(mmse_rate(&h, &st.f_rf(), &noise, p_t));
    let best_random = (0..draws)
        .map(|_| {
            let choices = random_choices(n_t, n_rf, bits, None, &mut rng);
            mmse_rate(&h, &analog_from_choices(&choices, n_rf, bits), &noise, p_t)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    StationaryRun { curve, best_random }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// Power at which the piecewise-linear curve `(power, rate)` reaches
/// `rate`, if it does inside the sampled range. Powers must increase.
pub fn power_for_rate(curve: &[(f64, f64)], rate: f64) -> Option<f64> {
    curve.windows(2).find_map(|w| {
        let ((p0, r0), (p1, r1)) = (w[0], w[1]);
        (r0 <= rate && rate <= r1 && r1 > r0).then(|| p0 + (rate - r0) / (r1 - r0) * (p1 - p0))
    })
}

