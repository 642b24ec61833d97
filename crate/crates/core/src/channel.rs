//! Clustered mmWave channel with the angular-index (EM-domain) extension.
//!
//! Each UE sees `C` scattering clusters; cluster `c` contributes `L_c` rays
//! whose departure angles scatter around the cluster's nominal AoD with a
//! Gaussian spread. Every ray is also tagged with the grid bin nearest its
//! AoD, which is how radiation-pattern gains enter the channel.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec, ZERO};
use crate::patterns::AntennaPatterns;

/// Uniform azimuth grid `ϑ_m = -π/2 + π m / M`, `m = 1..=M`.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularGrid {
    angles: Vec<f64>,
}

impl AngularGrid {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("angular grid needs at least one point"));
        }
        let angles = (1..=m)
            .map(|i| -FRAC_PI_2 + PI * i as f64 / m as f64)
            .collect();
        Ok(AngularGrid { angles })
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn angle(&self, bin: usize) -> f64 {
        self.angles[bin]
    }

    /// Grid bin closest to `theta`; exact ties go to the smaller index.
    pub fn nearest_bin(&self, theta: f64) -> usize {
        let mut best = 0;
        let mut best_dist = (self.angles[0] - theta).abs();
        for (i, &a) in self.angles.iter().enumerate().skip(1) {
            let d = (a - theta).abs();
            if d < best_dist {
                best = i;
                best_dist = d;
            }
        }
        best
    }
}

/// ULA steering vector with half-wavelength spacing: entry `n` (0-based) is
/// `exp(-j π n sin θ)`.
pub fn steering_vector(theta: f64, n_t: usize) -> CVec {
    let step = -PI * theta.sin();
    CVec::from_iterator(n_t, (0..n_t).map(|n| Complex64::cis(step * n as f64)))
}

/// Large-scale description of one scattering cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cluster {
    /// Nominal AoD in radians.
    pub nominal_aod: f64,
    /// Standard deviation of the per-ray AoD deviation, radians.
    pub angle_spread: f64,
    /// Propagation distance in meters.
    pub distance: f64,
    /// Path-loss exponent.
    pub kappa: f64,
    /// Number of rays in the cluster.
    pub rays: usize,
}

/// Cluster statistics for every UE. Fixed over a channel-statistics
/// coherence interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterParams {
    /// Reference loss `C₀` in dB.
    pub c0_db: f64,
    /// Reference distance `D₀` in meters.
    pub d0: f64,
    /// `users[k][c]` is cluster `c` of UE `k`.
    pub users: Vec<Vec<Cluster>>,
}

/// Ranges used to draw random [`ClusterParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterDistribution {
    pub users: usize,
    pub clusters: usize,
    pub rays_per_cluster: usize,
    pub angle_spread: f64,
    pub c0_db: f64,
    pub d0: f64,
    pub distance_min: f64,
    pub distance_max: f64,
    pub kappa_min: f64,
    pub kappa_max: f64,
}

impl Default for ClusterDistribution {
    fn default() -> Self {
        ClusterDistribution {
            users: 2,
            clusters: 2,
            rays_per_cluster: 3,
            angle_spread: PI / 36.0,
            c0_db: 30.0,
            d0: 1.0,
            distance_min: 50.0,
            distance_max: 100.0,
            kappa_min: 2.5,
            kappa_max: 3.0,
        }
    }
}

impl ClusterParams {
    /// Draws nominal AoDs uniformly over `[-π/2, π/2]`, distances and
    /// exponents uniformly over their configured ranges.
    pub fn draw<R: Rng + ?Sized>(dist: &ClusterDistribution, rng: &mut R) -> Self {
        let users = (0..dist.users)
            .map(|_| {
                (0..dist.clusters)
                    .map(|_| Cluster {
                        nominal_aod: rng.gen_range(-FRAC_PI_2..=FRAC_PI_2),
                        angle_spread: dist.angle_spread,
                        distance: uniform(rng, dist.distance_min, dist.distance_max),
                        kappa: uniform(rng, dist.kappa_min, dist.kappa_max),
                        rays: dist.rays_per_cluster,
                    })
                    .collect()
            })
            .collect();
        ClusterParams {
            c0_db: dist.c0_db,
            d0: dist.d0,
            users,
        }
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    /// Total ray count `L = Σ_c L_c` of UE `k`.
    pub fn num_paths(&self, k: usize) -> usize {
        self.users[k].iter().map(|c| c.rays).sum()
    }

    pub fn max_paths(&self) -> usize {
        (0..self.num_users()).map(|k| self.num_paths(k)).max().unwrap_or(0)
    }

    /// Power path gain `10^(-C₀/10) (r/D₀)^(-κ)` of a cluster.
    pub fn path_gain(&self, cluster: &Cluster) -> f64 {
        10f64.powf(-self.c0_db / 10.0) * (cluster.distance / self.d0).powf(-cluster.kappa)
    }

    /// Amplitude gain applied to every ray of the cluster.
    pub fn alpha(&self, cluster: &Cluster) -> f64 {
        self.path_gain(cluster).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if self.users.is_empty() {
            return Err(Error::invalid("cluster params need at least one UE"));
        }
        if !(self.d0 > 0.0) {
            return Err(Error::invalid("reference distance must be positive"));
        }
        for (k, clusters) in self.users.iter().enumerate() {
            if clusters.is_empty() {
                return Err(Error::invalid(format!("UE {k} has no clusters")));
            }
            for c in clusters {
                if !(-FRAC_PI_2..=FRAC_PI_2).contains(&c.nominal_aod) {
                    return Err(Error::invalid(format!(
                        "UE {k}: nominal AoD {} outside [-π/2, π/2]",
                        c.nominal_aod
                    )));
                }
                if c.angle_spread < 0.0 || !(c.distance > 0.0) || c.rays == 0 {
                    return Err(Error::invalid(format!("UE {k}: malformed cluster {c:?}")));
                }
            }
        }
        Ok(())
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// One ray of one UE in a channel draw.
#[derive(Debug, Clone, PartialEq)]
pub struct PathDraw {
    pub cluster: usize,
    pub aod: f64,
    pub phase: f64,
    pub alpha: f64,
    pub bin: usize,
}

impl PathDraw {
    fn coefficient(&self) -> Complex64 {
        Complex64::from_polar(self.alpha, self.phase)
    }
}

/// Small-scale draw of the clustered channel for all UEs.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    n_t: usize,
    grid_len: usize,
    users: Vec<Vec<PathDraw>>,
}

/// Draws ray AoDs `θ̄ + Δθ`, `Δθ ~ N(0, ς²)` (clamped to `[-π/2, π/2]`)
/// and phases `φ ~ U[0, 2π)`.
pub fn draw_realization<R: Rng + ?Sized>(
    params: &ClusterParams,
    grid: &AngularGrid,
    n_t: usize,
    rng: &mut R,
) -> ChannelRealization {
    let users = params
        .users
        .iter()
        .map(|clusters| {
            let mut paths = Vec::new();
            for (ci, c) in clusters.iter().enumerate() {
                let alpha = params.alpha(c);
                for _ in 0..c.rays {
                    let z: f64 = rng.sample(StandardNormal);
                    let aod = (c.nominal_aod + c.angle_spread * z).clamp(-FRAC_PI_2, FRAC_PI_2);
                    let phase = rng.gen_range(0.0..2.0 * PI);
                    paths.push(PathDraw {
                        cluster: ci,
                        aod,
                        phase,
                        alpha,
                        bin: grid.nearest_bin(aod),
                    });
                }
            }
            paths
        })
        .collect();
    ChannelRealization {
        n_t,
        grid_len: grid.len(),
        users,
    }
}

impl ChannelRealization {
    /// Builds a realization from explicit rays. Bins are recomputed from
    /// the grid.
    pub fn from_paths(n_t: usize, grid: &AngularGrid, mut users: Vec<Vec<PathDraw>>) -> Self {
        for p in users.iter_mut().flatten() {
            p.bin = grid.nearest_bin(p.aod);
        }
        ChannelRealization {
            n_t,
            grid_len: grid.len(),
            users,
        }
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn grid_len(&self) -> usize {
        self.grid_len
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn paths(&self, k: usize) -> &[PathDraw] {
        &self.users[k]
    }

    /// Stacked spatial channel `h_S,k` (length `L·N_t`), one block
    /// `α e^{jφ} a(θ)` per ray in path order.
    pub fn spatial_channel(&self, k: usize) -> CVec {
        let paths = &self.users[k];
        let mut h = CVec::from_element(paths.len() * self.n_t, ZERO);
        for (l, p) in paths.iter().enumerate() {
            let a = steering_vector(p.aod, self.n_t);
            let g = p.coefficient();
            for n in 0..self.n_t {
                h[l * self.n_t + n] = g * a[n];
            }
        }
        h
    }

    /// Pattern-free spatial channel `Σ_l α e^{jφ} a(θ_l)`.
    pub fn pattern_free_channel(&self, k: usize) -> CVec {
        let mut h = CVec::from_element(self.n_t, ZERO);
        for p in &self.users[k] {
            h += steering_vector(p.aod, self.n_t) * p.coefficient();
        }
        h
    }

    /// Writes `k,l,theta,phi,alpha,grid_bin` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "l", "theta", "phi", "alpha", "grid_bin"])?;
        for (k, paths) in self.users.iter().enumerate() {
            for (l, p) in paths.iter().enumerate() {
                w.write_record(&[
                    k.to_string(),
                    l.to_string(),
                    p.aod.to_string(),
                    p.phase.to_string(),
                    p.alpha.to_string(),
                    p.bin.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-antenna channel of UE `k` after radiation-pattern weighting:
/// entry `n` is `Σ_l f_n(m_l) α_l e^{jφ_l} e^{-jπ n sin θ_l}`.
pub fn assemble_full_channel(
    real: &ChannelRealization,
    k: usize,
    patterns: &AntennaPatterns,
) -> Result<CVec> {
    if patterns.grid_len() != real.grid_len {
        return Err(Error::invalid(format!(
            "pattern grid has {} bins but the realization uses {}",
            patterns.grid_len(),
            real.grid_len
        )));
    }
    if patterns.n_t() != real.n_t {
        return Err(Error::DimensionMismatch {
            context: "assemble_full_channel antennas",
            expected: real.n_t,
            got: patterns.n_t(),
        });
    }
    let mut h = CVec::from_element(real.n_t, ZERO);
    for p in &real.users[k] {
        let step = -PI * p.aod.sin();
        let g = p.coefficient();
        for n in 0..real.n_t {
            let gain = patterns.gain(n, p.bin);
            if gain != 0.0 {
                h[n] += g * Complex64::cis(step * n as f64) * gain;
            }
        }
    }
    Ok(h)
}

/// All UEs' pattern-weighted channels as columns of an `N_t × K` matrix.
pub fn assemble_channel_matrix(real: &ChannelRealization, patterns: &AntennaPatterns) -> Result<CMat> {
    let cols = (0..real.num_users())
        .map(|k| assemble_full_channel(real, k, patterns))
        .collect::<Result<Vec<_>>>()?;
    Ok(CMat::from_columns(&cols))
}
