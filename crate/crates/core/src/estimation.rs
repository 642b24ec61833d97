//! Channel estimation at the long and medium timescales.
//!
//! Long timescale: pattern-free spatial samples are accumulated into a
//! covariance, the Capon angular power spectrum is formed on the grid, and
//! its peaks give cluster angles and mean gains.
//!
//! Medium timescale: pilots observed through a random quantized-phase
//! combiner are fed to OMP over a dictionary that folds the active
//! radiation patterns into the steering vectors.

use std::io::Write;

use num_complex::Complex64;
use rand::Rng;

use crate::channel::{steering_vector, AngularGrid};
use crate::error::{Error, Result};
use crate::linalg::{complex_gaussian, solve_hermitian, CMat, CVec, ZERO};
use crate::patterns::AntennaPatterns;

/// Estimated cluster core: nominal angle and mean amplitude gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterEstimate {
    pub aod: f64,
    pub alpha: f64,
    pub bin: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakConfig {
    /// Peaks below `threshold · max ρ` are ignored.
    pub threshold: f64,
    /// Minimum separation between reported peaks, in grid bins.
    pub guard: usize,
    pub max_peaks: usize,
}

impl Default for PeakConfig {
    fn default() -> Self {
        PeakConfig { threshold: 0.1, guard: 3, max_peaks: 2 }
    }
}

/// Sum of outer products of pattern-free spatial samples.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceAccumulator {
    sum: CMat,
    count: usize,
}

impl CovarianceAccumulator {
    pub fn new(n_t: usize) -> Self {
        CovarianceAccumulator { sum: CMat::zeros(n_t, n_t), count: 0 }
    }

    pub fn push(&mut self, sample: &CVec) -> Result<()> {
        if sample.len() != self.sum.nrows() {
            return Err(Error::DimensionMismatch {
                context: "covariance sample",
                expected: self.sum.nrows(),
                got: sample.len(),
            });
        }
        self.sum += sample * sample.adjoint();
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Accumulated sum divided by `normalizer`, or by the sample count when
    /// `None`.
    pub fn covariance(&self, normalizer: Option<f64>) -> Result<CMat> {
        if self.count == 0 {
            return Err(Error::invalid("covariance requested with no samples"));
        }
        let d = normalizer.unwrap_or(self.count as f64);
        if !(d > 0.0) {
            return Err(Error::invalid("covariance normalizer must be positive"));
        }
        Ok(&self.sum / Complex64::new(d, 0.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApsEstimate {
    /// Capon spectrum, one value per grid bin.
    pub spectrum: Vec<f64>,
    /// Detected clusters, strongest first.
    pub peaks: Vec<ClusterEstimate>,
}

impl ApsEstimate {
    /// Columns: `bin,angle,rho,rho_norm,is_peak`.
    pub fn write_csv<W: Write>(&self, grid: &AngularGrid, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin", "angle", "rho", "rho_norm", "is_peak"])?;
        let max = self.spectrum.iter().cloned().fold(0.0, f64::max);
        for (m, &rho) in self.spectrum.iter().enumerate() {
            let is_peak = self.peaks.iter().any(|p| p.bin == m);
            let norm = if max > 0.0 { rho / max } else { 0.0 };
            w.write_record(&[
                m.to_string(),
                grid.angle(m).to_string(),
                rho.to_string(),
                norm.to_string(),
                u8::from(is_peak).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `ρ(ϑ_m) = 1 / (e^H (R + εI)^{-1} e)` with `ε = 1e-6 · tr(R) / N_t`.
pub fn capon_spectrum(r: &CMat, grid: &AngularGrid) -> Result<Vec<f64>> {
    let n_t = r.nrows();
    if r.ncols() != n_t || n_t == 0 {
        return Err(Error::invalid("covariance must be square and nonempty"));
    }
    let trace: f64 = (0..n_t).map(|i| r[(i, i)].re).sum();
    let mut eps = 1e-6 * trace / n_t as f64;
    if !(eps > 0.0) {
        eps = f64::MIN_POSITIVE.sqrt();
    }
    let mut loaded = r.clone();
    for i in 0..n_t {
        loaded[(i, i)] += Complex64::new(eps, 0.0);
    }
    let e = CMat::from_fn(n_t, grid.len(), |n, m| steering_vector(grid.angle(m), n_t)[n]);
    let x = solve_hermitian(&loaded, &e).ok_or_else(|| Error::NonFinite("capon covariance inverse".into()))?;
    let spectrum: Vec<f64> = (0..grid.len())
        .map(|m| {
            let q: Complex64 = e.column(m).iter().zip(x.column(m).iter()).map(|(a, b)| a.conj() * b).sum();
            1.0 / q.re
        })
        .collect();
    if spectrum.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("capon spectrum".into()));
    }
    Ok(spectrum)
}

/// Local maxima above `threshold · max`, greedily kept strongest first and
/// at least `guard` bins apart; at most `max_peaks` are returned.
pub fn pick_peaks(spectrum: &[f64], cfg: &PeakConfig) -> Vec<usize> {
    let n = spectrum.len();
    if n == 0 {
        return Vec::new();
    }
    let max = spectrum.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let floor = cfg.threshold * max;
    let mut candidates: Vec<usize> = (0..n)
        .filter(|&m| {
            let v = spectrum[m];
            let left = m == 0 || spectrum[m - 1] <= v;
            let right = m + 1 == n || spectrum[m + 1] <= v;
            left && right && v >= floor
        })
        .collect();
    candidates.sort_by(|&a, &b| spectrum[b].partial_cmp(&spectrum[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for m in candidates {
        if kept.len() == cfg.max_peaks {
            break;
        }
        if kept.iter().all(|&k| k.abs_diff(m) > cfg.guard) {
            kept.push(m);
        }
    }
    kept
}

/// Power-weighted mean bin position of `spectrum` within `half_width` bins
/// of `m`, as a fractional bin index.
pub fn lobe_centroid(spectrum: &[f64], m: usize, half_width: usize) -> f64 {
    let lo = m.saturating_sub(half_width);
    let hi = (m + half_width).min(spectrum.len() - 1);
    let (mut moment, mut mass) = (0.0, 0.0);
    for (i, &v) in spectrum.iter().enumerate().take(hi + 1).skip(lo) {
        moment += v.max(0.0) * i as f64;
        mass += v.max(0.0);
    }
    if mass > 0.0 {
        moment / mass
    } else {
        m as f64
    }
}

/// Capon APS of the accumulated samples and its cluster peaks.
///
/// Peaks are detected as local maxima; each cluster angle is then the
/// centroid of the spectrum within one guard width of the maximum. A spread
/// cluster yields a ragged lobe whose highest bin wanders by several bins,
/// while its centroid tracks the nominal angle. The mean amplitude is
/// `√ρ` at the maximum, which recovers `α` for a single unit-gain on-grid
/// path.
pub fn aps_from_covariance(r: &CMat, grid: &AngularGrid, cfg: &PeakConfig) -> Result<ApsEstimate> {
    let spectrum = capon_spectrum(r, grid)?;
    let spacing = if grid.len() > 1 { grid.angle(1) - grid.angle(0) } else { 0.0 };
    let peaks = pick_peaks(&spectrum, cfg)
        .into_iter()
        .map(|m| {
            let aod = grid.angle(0) + spacing * lobe_centroid(&spectrum, m, cfg.guard);
            ClusterEstimate { aod, alpha: spectrum[m].max(0.0).sqrt(), bin: grid.nearest_bin(aod) }
        })
        .collect();
    Ok(ApsEstimate { spectrum, peaks })
}

pub fn accumulate_and_aps(samples: &[CVec], grid: &AngularGrid, cfg: &PeakConfig) -> Result<ApsEstimate> {
    let first = samples.first().ok_or_else(|| Error::invalid("APS needs at least one sample"))?;
    let mut acc = CovarianceAccumulator::new(first.len());
    for s in samples {
        acc.push(s)?;
    }
    aps_from_covariance(&acc.covariance(None)?, grid, cfg)
}

/// Dictionary whose column `m` is the per-antenna gain at bin `m` times the
/// steering vector, scaled to unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedDictionary {
    pub matrix: CMat,
    /// Column norms before normalization.
    pub norms: Vec<f64>,
    /// Bins where every antenna has zero gain; those columns stay zero.
    pub zero_columns: Vec<usize>,
}

pub fn refined_dictionary(patterns: &AntennaPatterns, grid: &AngularGrid) -> Result<RefinedDictionary> {
    if patterns.grid_len() != grid.len() {
        return Err(Error::invalid(format!(
            "patterns sampled on {} bins, grid has {}",
            patterns.grid_len(),
            grid.len()
        )));
    }
    let n_t = patterns.n_t();
    let mut matrix = CMat::zeros(n_t, grid.len());
    let mut norms = Vec::with_capacity(grid.len());
    let mut zero_columns = Vec::new();
    for m in 0..grid.len() {
        let e = steering_vector(grid.angle(m), n_t);
        for n in 0..n_t {
            matrix[(n, m)] = e[n] * patterns.gain(n, m);
        }
        let norm = matrix.column(m).norm();
        norms.push(norm);
        if norm > 0.0 {
            matrix.column_mut(m).unscale_mut(norm);
        } else {
            zero_columns.push(m);
        }
    }
    Ok(RefinedDictionary { matrix, norms, zero_columns })
}

/// Plain steering dictionary with unit-norm columns.
pub fn steering_dictionary(grid: &AngularGrid, n_t: usize) -> CMat {
    let s = 1.0 / (n_t as f64).sqrt();
    CMat::from_fn(n_t, grid.len(), |n, m| steering_vector(grid.angle(m), n_t)[n] * s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseEstimate {
    pub support: Vec<usize>,
    pub coefficients: Vec<Complex64>,
    /// Residual norm after each accepted atom, starting with `‖y‖`.
    pub residual_norms: Vec<f64>,
    /// Set when a refit was rank deficient and the newest atom was dropped.
    pub rank_deficient: bool,
}

impl SparseEstimate {
    /// `A z` for the dictionary the observation matrix was built from.
    pub fn reconstruct(&self, dictionary: &CMat) -> CVec {
        let mut h = CVec::zeros(dictionary.nrows());
        for (&j, &c) in self.support.iter().zip(&self.coefficients) {
            h += dictionary.column(j) * c;
        }
        h
    }
}

fn least_squares(q: &CMat, support: &[usize], y: &CVec) -> Option<CVec> {
    let sub = CMat::from_fn(q.nrows(), support.len(), |i, j| q[(i, support[j])]);
    let svd = sub.svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let smin = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(smax > 0.0) || smin <= 1e-10 * smax {
        return None;
    }
    svd.solve(y, 0.0).ok().map(|m| m.column(0).into_owned())
}

/// Orthogonal matching pursuit on `y ≈ Q z`. Stops at `sparsity` atoms or
/// once the residual drops below `tol · ‖y‖`.
pub fn omp_recover(y: &CVec, q: &CMat, sparsity: usize, tol: f64) -> Result<SparseEstimate> {
    if y.len() != q.nrows() {
        return Err(Error::DimensionMismatch { context: "omp observations", expected: q.nrows(), got: y.len() });
    }
    if q.ncols() < sparsity {
        return Err(Error::invalid(format!("{} atoms cannot support sparsity {sparsity}", q.ncols())));
    }
    let col_norms: Vec<f64> = (0..q.ncols()).map(|j| q.column(j).norm()).collect();
    let y_norm = y.norm();
    let mut est = SparseEstimate {
        support: Vec::new(),
        coefficients: Vec::new(),
        residual_norms: vec![y_norm],
        rank_deficient: false,
    };
    let mut residual = y.clone();
    while est.support.len() < sparsity && residual.norm() > tol * y_norm {
        let corr = q.adjoint() * &residual;
        let mut best: Option<(usize, f64)> = None;
        for j in 0..q.ncols() {
            if col_norms[j] == 0.0 || est.support.contains(&j) {
                continue;
            }
            let c = corr[j].norm() / col_norms[j];
            if best.is_none_or(|(_, b)| c > b) {
                best = Some((j, c));
            }
        }
        let Some((j, _)) = best else { break };
        est.support.push(j);
        match least_squares(q, &est.support, y) {
            Some(z) => {
                let mut fit = CVec::zeros(y.len());
                for (i, &s) in est.support.iter().enumerate() {
                    fit += q.column(s) * z[i];
                }
                residual = y - fit;
                est.coefficients = z.iter().copied().collect();
                est.residual_norms.push(residual.norm());
            }
            None => {
                est.support.pop();
                est.rank_deficient = true;
                break;
            }
        }
    }
    Ok(est)
}

/// Stacked pilot observations `y = W^H h + W^H n` and the combiner `W`
/// (`N_t × N_RF·I`, pilot `i` occupies columns `i·N_RF .. (i+1)·N_RF`).
#[derive(Debug, Clone, PartialEq)]
pub struct PilotObservation {
    pub y: CVec,
    pub combiner: CMat,
}

pub fn pilot_observe<R: Rng + ?Sized>(
    h: &CVec,
    pilots: usize,
    n_rf: usize,
    bits: u32,
    noise_var: f64,
    rng: &mut R,
) -> Result<PilotObservation> {
    if pilots == 0 || n_rf == 0 {
        return Err(Error::invalid("need at least one pilot and one RF chain"));
    }
    let n_t = h.len();
    let levels = 1u32 << bits;
    let amp = 1.0 / (n_t as f64).sqrt();
    let combiner = CMat::from_fn(n_t, pilots * n_rf, |_, _| {
        let b = rng.gen_range(0..levels);
        Complex64::from_polar(amp, -2.0 * std::f64::consts::PI * b as f64 / levels as f64)
    });
    let mut y = combiner.adjoint() * h;
    if noise_var > 0.0 {
        for i in 0..pilots {
            let noise = CVec::from_fn(n_t, |_, _| complex_gaussian(rng, noise_var));
            let block = combiner.columns(i * n_rf, n_rf).adjoint() * noise;
            for r in 0..n_rf {
                y[i * n_rf + r] += block[r];
            }
        }
    }
    Ok(PilotObservation { y, combiner })
}

/// Pattern-aware (or plain) OMP estimate of one UE's RF-domain channel.
pub fn estimate_rf_channel(obs: &PilotObservation, dictionary: &CMat, sparsity: usize, tol: f64) -> Result<(CVec, SparseEstimate)> {
    let q = obs.combiner.adjoint() * dictionary;
    let est = omp_recover(&obs.y, &q, sparsity, tol)?;
    Ok((est.reconstruct(dictionary), est))
}

/// `H_e = H_RF^H F_RF` for channels stacked as columns of `h_rf`.
pub fn effective_channel(h_rf: &CMat, f_rf: &CMat) -> Result<CMat> {
    if h_rf.nrows() != f_rf.nrows() {
        return Err(Error::DimensionMismatch { context: "effective channel", expected: h_rf.nrows(), got: f_rf.nrows() });
    }
    Ok(h_rf.adjoint() * f_rf)
}

/// Zero vector helper used when an estimate is unavailable.
pub fn zero_channel(n_t: usize) -> CVec {
    CVec::from_element(n_t, ZERO)
}
