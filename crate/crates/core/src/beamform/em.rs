//! Long-timescale radiation-pattern selection.
//!
//! The cluster sum-rate is rewritten with a Lagrangian-dual auxiliary `μ`
//! and a quadratic-transform auxiliary `ξ`, which leaves a concave quadratic
//! `δ(s)` in the relaxed selection. The Boolean constraint becomes the
//! penalty `ϱ₁ sᵀ(s − 1)`, linearized at the current point. Each
//! subproblem is solved by projected gradient ascent over the per-antenna
//! simplices.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::steering_vector;
use crate::error::{Error, Result};
use crate::estimation::ClusterEstimate;
use crate::linalg::{project_simplex, CMat, CVec, RMat};
use crate::patterns::{EmSelection, GainScale, PatternDictionary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmConfig {
    pub rho_init: f64,
    pub rho_growth: f64,
    pub rho_max: f64,
    pub outer_tol: f64,
    pub max_outer: usize,
    pub inner_tol: f64,
    /// Projected-gradient steps per subproblem. One step keeps each FP
    /// update local; solving the surrogate to optimality from a far-off
    /// linearization point tends to jump into a poor vertex.
    pub max_inner: usize,
    /// Select/re-fit alternations per long-timescale update.
    pub max_rounds: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            rho_init: 1e-2,
            rho_growth: 1.1,
            rho_max: 1e2,
            outer_tol: 1e-4,
            max_outer: 300,
            inner_tol: 1e-6,
            max_inner: 1,
            max_rounds: 4,
        }
    }
}

/// Cluster channels and fixed downstream precoder for one pattern-selection
/// run.
///
/// For UE `k`, `gains[k][(n, p)]` is the cluster-core channel seen by
/// antenna `n` when it radiates with pattern `p`, so the pattern-weighted
/// channel is `g_k(s)[n] = Σ_p s[n,p] G_k[n,p]` and every cross gain
/// `a_kj(s) = g_k(s)^H w_j` is linear in `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmProblem {
    gains: Vec<CMat>,
    precoder: CMat,
    noise: Vec<f64>,
    /// `coeffs[k][j][(n, p)] = conj(G_k[n,p]) w_j[n]`.
    coeffs: Vec<Vec<CMat>>,
}

impl EmProblem {
    /// `precoder` is the composite `F_RF F_BB` (`N_t × K`).
    pub fn new(gains: Vec<CMat>, precoder: CMat, noise: Vec<f64>) -> Result<Self> {
        let k = precoder.ncols();
        let n_t = precoder.nrows();
        if gains.len() != k || noise.len() != k {
            return Err(Error::DimensionMismatch { context: "EM users", expected: k, got: gains.len().min(noise.len()) });
        }
        let p = gains.first().map_or(0, |g| g.ncols());
        if gains.iter().any(|g| g.nrows() != n_t || g.ncols() != p) || p == 0 {
            return Err(Error::invalid("cluster gain matrices must all be N_t × P"));
        }
        if noise.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid("noise variances must be positive"));
        }
        let coeffs = gains
            .iter()
            .map(|g| (0..k).map(|j| CMat::from_fn(n_t, p, |n, q| g[(n, q)].conj() * precoder[(n, j)])).collect())
            .collect();
        Ok(EmProblem { gains, precoder, noise, coeffs })
    }

    /// Builds the cluster-core channels from estimated cluster angles and
    /// gains: one zero-phase path per cluster at its nominal angle.
    pub fn from_clusters(
        dict: &PatternDictionary,
        scale: GainScale,
        clusters: &[Vec<ClusterEstimate>],
        precoder: CMat,
        noise: Vec<f64>,
    ) -> Result<Self> {
        let n_t = precoder.nrows();
        let f = scale.factor(dict.grid_len());
        let gains = clusters
            .iter()
            .map(|user| {
                let mut g = CMat::zeros(n_t, dict.num_patterns());
                for c in user {
                    let bin = dict.grid().nearest_bin(c.aod);
                    let a = steering_vector(c.aod, n_t);
                    for n in 0..n_t {
                        for p in 0..dict.num_patterns() {
                            g[(n, p)] += a[n] * (f * c.alpha * dict.gain(p, bin));
                        }
                    }
                }
                g
            })
            .collect();
        Self::new(gains, precoder, noise)
    }

    pub fn users(&self) -> usize {
        self.gains.len()
    }

    pub fn n_t(&self) -> usize {
        self.precoder.nrows()
    }

    pub fn num_patterns(&self) -> usize {
        self.gains[0].ncols()
    }

    pub fn noise(&self) -> &[f64] {
        &self.noise
    }

    /// Pattern-weighted cluster channel `g_k(s)`.
    pub fn channel(&self, k: usize, s: &RMat) -> CVec {
        let g = &self.gains[k];
        CVec::from_fn(self.n_t(), |n, _| (0..g.ncols()).map(|p| g[(n, p)] * s[(n, p)]).sum())
    }

    /// `a[(k, j)] = g_k(s)^H w_j`.
    pub fn cross_gains(&self, s: &RMat) -> CMat {
        let k = self.users();
        CMat::from_fn(k, k, |u, j| {
            self.coeffs[u][j].iter().zip(s.iter()).map(|(c, &x)| c * x).sum()
        })
    }

    pub fn sinr(&self, s: &RMat) -> Vec<f64> {
        let a = self.cross_gains(s);
        (0..self.users())
            .map(|k| {
                let interference: f64 = (0..self.users()).filter(|&j| j != k).map(|j| a[(k, j)].norm_sqr()).sum();
                a[(k, k)].norm_sqr() / (interference + self.noise[k])
            })
            .collect()
    }

    /// Cluster sum-rate in bits/s/Hz.
    pub fn sum_rate(&self, s: &RMat) -> f64 {
        self.sinr(s).iter().map(|g| (1.0 + g).log2()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FpState {
    pub mu: Vec<f64>,
    pub xi: Vec<Complex64>,
    pub delta: f64,
}

pub fn update_mu(prob: &EmProblem, s: &RMat) -> Vec<f64> {
    prob.sinr(s)
}

/// `ξ_k = √(1 + μ_k) a_kk / D_k` with `D_k = Σ_j |a_kj|² + σ_k²`.
pub fn update_xi(prob: &EmProblem, s: &RMat, mu: &[f64]) -> Vec<Complex64> {
    let a = prob.cross_gains(s);
    (0..prob.users())
        .map(|k| {
            let d: f64 = (0..prob.users()).map(|j| a[(k, j)].norm_sqr()).sum::<f64>() + prob.noise[k];
            a[(k, k)] * ((1.0 + mu[k]).sqrt() / d)
        })
        .collect()
}

/// `δ(s) = Σ_k [2√(1+μ_k) Re{ξ_k* a_kk} − |ξ_k|² Σ_j |a_kj|²]`.
pub fn delta(prob: &EmProblem, s: &RMat, mu: &[f64], xi: &[Complex64]) -> f64 {
    let a = prob.cross_gains(s);
    (0..prob.users())
        .map(|k| {
            let lin = 2.0 * (1.0 + mu[k]).sqrt() * (xi[k].conj() * a[(k, k)]).re;
            let quad: f64 = (0..prob.users()).map(|j| a[(k, j)].norm_sqr()).sum();
            lin - xi[k].norm_sqr() * quad
        })
        .sum()
}

/// `Σ_k [log₂(1+μ_k) − μ_k − |ξ_k|² σ_k²] + δ(s)`.
pub fn reformulated_objective(prob: &EmProblem, s: &RMat, mu: &[f64], xi: &[Complex64]) -> f64 {
    let constant: f64 = (0..prob.users())
        .map(|k| (1.0 + mu[k]).log2() - mu[k] - xi[k].norm_sqr() * prob.noise[k])
        .sum();
    constant + delta(prob, s, mu, xi)
}

pub fn fp_state(prob: &EmProblem, s: &RMat) -> FpState {
    let mu = update_mu(prob, s);
    let xi = update_xi(prob, s, &mu);
    let delta = delta(prob, s, &mu, &xi);
    FpState { mu, xi, delta }
}

/// Tangent of `sᵀ(s − 1)` at `s_q`: `(2 s_q − 1)ᵀ s − s_qᵀ s_q`.
pub fn boolean_minorant(s: &RMat, s_q: &RMat) -> f64 {
    s.iter().zip(s_q.iter()).map(|(&x, &q)| (2.0 * q - 1.0) * x - q * q).sum()
}

pub fn boolean_penalty(s: &RMat) -> f64 {
    s.iter().map(|&x| x * (x - 1.0)).sum()
}

/// Natural-log cluster sum-rate plus `ϱ sᵀ(s − 1)`. Each outer iteration
/// is an ascent step on this function at its own `ϱ`.
pub fn penalized_objective(prob: &EmProblem, s: &RMat, rho: f64) -> f64 {
    let rate: f64 = prob.sinr(s).iter().map(|g| g.ln_1p()).sum();
    rate + rho * boolean_penalty(s)
}

fn subproblem_value(prob: &EmProblem, state: &FpState, s: &RMat, s_q: &RMat, rho: f64) -> f64 {
    let lin: f64 = s.iter().zip(s_q.iter()).map(|(&x, &q)| (2.0 * q - 1.0) * x).sum();
    delta(prob, s, &state.mu, &state.xi) + rho * lin
}

fn subproblem_gradient(prob: &EmProblem, state: &FpState, s: &RMat, s_q: &RMat, rho: f64) -> RMat {
    let a = prob.cross_gains(s);
    let mut grad = s_q.map(|q| rho * (2.0 * q - 1.0));
    for k in 0..prob.users() {
        let w = 2.0 * (1.0 + state.mu[k]).sqrt();
        let lin = state.xi[k].conj() * w;
        grad.zip_apply(&prob.coeffs[k][k], |g, c| *g += (lin * c).re);
        let xi2 = state.xi[k].norm_sqr();
        for j in 0..prob.users() {
            let aj = a[(k, j)].conj() * (2.0 * xi2);
            grad.zip_apply(&prob.coeffs[k][j], |g, c| *g -= (aj * c).re);
        }
    }
    grad
}

fn project_rows(s: &mut RMat) {
    let mut row = vec![0.0; s.ncols()];
    for n in 0..s.nrows() {
        for (p, v) in row.iter_mut().enumerate() {
            *v = s[(n, p)];
        }
        project_simplex(&mut row);
        for (p, v) in row.iter().enumerate() {
            s[(n, p)] = *v;
        }
    }
}

/// Maximizes `δ(s) + ϱ(2 s_q − 1)ᵀ s` over the per-antenna simplices by
/// projected gradient ascent with step `1/L`.
pub fn solve_em_subproblem(prob: &EmProblem, state: &FpState, s_q: &RMat, rho: f64, cfg: &EmConfig) -> Result<RMat> {
    let lipschitz: f64 = (0..prob.users())
        .map(|k| {
            let c2: f64 = prob.coeffs[k].iter().map(|c| c.norm_squared()).sum();
            2.0 * state.xi[k].norm_sqr() * c2
        })
        .sum();
    let step = if lipschitz > f64::MIN_POSITIVE { 1.0 / lipschitz } else { 1.0 };
    let mut s = s_q.clone();
    for _ in 0..cfg.max_inner {
        let grad = subproblem_gradient(prob, state, &s, s_q, rho);
        let mut next = &s + grad * step;
        project_rows(&mut next);
        let map_norm = (&next - &s).norm() / step;
        s = next;
        if map_norm < cfg.inner_tol {
            break;
        }
    }
    let value = subproblem_value(prob, state, &s, s_q, rho);
    if !value.is_finite() || s.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("EM subproblem objective at ϱ₁ = {rho}")));
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmTraceEntry {
    pub iteration: usize,
    pub rho: f64,
    /// Cluster sum-rate (bits/s/Hz) after the iteration.
    pub sum_rate: f64,
    /// Penalized objective at `ϱ` before and after the iteration.
    pub penalized_before: f64,
    pub penalized_after: f64,
    /// `‖S_new − S_old‖_F`.
    pub change: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmOutcome {
    pub selection: EmSelection,
    pub trace: Vec<EmTraceEntry>,
    pub converged: bool,
}

pub fn uniform_selection(n_t: usize, num_patterns: usize) -> RMat {
    RMat::from_element(n_t, num_patterns, 1.0 / num_patterns as f64)
}

/// Alternates the `μ`, `ξ` and subproblem updates until the relaxed
/// selection settles, then rounds each antenna to its largest weight.
pub fn optimize_radiation(prob: &EmProblem, init: &RMat, cfg: &EmConfig) -> Result<EmOutcome> {
    if init.nrows() != prob.n_t() || init.ncols() != prob.num_patterns() {
        return Err(Error::DimensionMismatch { context: "initial selection", expected: prob.n_t(), got: init.nrows() });
    }
    let mut s = init.clone();
    let mut rho = cfg.rho_init;
    let mut trace = Vec::new();
    let mut converged = false;
    for iteration in 0..cfg.max_outer {
        let state = fp_state(prob, &s);
        let before = penalized_objective(prob, &s, rho);
        let next = solve_em_subproblem(prob, &state, &s, rho, cfg)?;
        let change = (&next - &s).norm();
        trace.push(EmTraceEntry {
            iteration,
            rho,
            sum_rate: prob.sum_rate(&next),
            penalized_before: before,
            penalized_after: penalized_objective(prob, &next, rho),
            change,
        });
        s = next;
        rho = (rho * cfg.rho_growth).min(cfg.rho_max);
        if change < cfg.outer_tol {
            converged = true;
            break;
        }
    }
    Ok(EmOutcome { selection: EmSelection::from_relaxed(s)?, trace, converged })
}

/// Best one-hot selection by enumeration of all `P^N_t` configurations.
pub fn exhaustive_search(prob: &EmProblem) -> Result<(Vec<usize>, f64)> {
    let (n_t, p) = (prob.n_t(), prob.num_patterns());
    let total = (p as u64).checked_pow(n_t as u32).filter(|&t| t <= 1 << 20);
    let Some(total) = total else {
        return Err(Error::invalid("exhaustive pattern search is limited to 2^20 configurations"));
    };
    let mut best = (vec![0; n_t], f64::NEG_INFINITY);
    let mut choice = vec![0usize; n_t];
    for code in 0..total {
        let mut c = code;
        for slot in choice.iter_mut() {
            *slot = (c % p as u64) as usize;
            c /= p as u64;
        }
        let s = EmSelection::from_choices(&choice, p)?;
        let rate = prob.sum_rate(s.relaxed());
        if rate > best.1 {
            best = (choice.clone(), rate);
        }
    }
    Ok(best)
}

/// Columns: `iteration,rho,sum_rate,penalized_before,penalized_after,change`.
pub fn write_trace_csv<W: Write>(trace: &[EmTraceEntry], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "rho", "sum_rate", "penalized_before", "penalized_after", "change"])?;
    for e in trace {
        w.write_record(&[
            e.iteration.to_string(),
            e.rho.to_string(),
            e.sum_rate.to_string(),
            e.penalized_before.to_string(),
            e.penalized_after.to_string(),
            e.change.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
