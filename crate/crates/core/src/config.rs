//! Experiment configuration: a TOML file whose sections mirror the library
//! modules, a named preset, and `section.key=value` overrides applied on
//! top in that order.
//!
//! Physical quantities are stored in the units people write them in (dBm,
//! dB, degrees, meters); conversion happens in the accessor methods only.

use std::f64::consts::PI;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::beamform::em::EmConfig;
use crate::beamform::rf::SscaConfig;
use crate::channel::ClusterDistribution;
use crate::error::{Error, Result};
use crate::estimation::PeakConfig;
use crate::linalg::dbm_to_watts;
use crate::patterns::GainScale;
use crate::sim::Variant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    /// BS antennas `N_t`.
    pub n_t: usize,
    /// Angular grid size `M`.
    pub grid_points: usize,
    pub users: usize,
    pub clusters: usize,
    pub rays_per_cluster: usize,
    pub angle_spread_deg: f64,
    pub c0_db: f64,
    pub d0_m: f64,
    pub distance_min_m: f64,
    pub distance_max_m: f64,
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub noise_dbm: f64,
    /// Carrier frequency; informational, the array is half-wavelength.
    pub carrier_ghz: f64,
    /// Fixed nominal AoDs, `aods_deg[k][c]`; drawn at random when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aods_deg: Option<Vec<Vec<f64>>>,
    /// Fixed cluster distances, same layout as `aods_deg`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distances_m: Option<Vec<Vec<f64>>>,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            n_t: 32,
            grid_points: 180,
            users: 2,
            clusters: 2,
            rays_per_cluster: 3,
            angle_spread_deg: 5.0,
            c0_db: 30.0,
            d0_m: 1.0,
            distance_min_m: 50.0,
            distance_max_m: 100.0,
            kappa_min: 2.5,
            kappa_max: 3.0,
            noise_dbm: -70.0,
            carrier_ghz: 28.0,
            aods_deg: None,
            distances_m: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatternConfig {
    pub num_patterns: usize,
    /// Main-lobe half width; `180 / P` degrees when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beamwidth_deg: Option<f64>,
    pub gain_scale: GainScale,
}

impl Default for PatternConfig {
    fn default() -> Self {
        PatternConfig { num_patterns: 7, beamwidth_deg: None, gain_scale: GainScale::Isotropic }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RfConfig {
    pub n_rf: usize,
    /// Phase-shifter resolution `B`.
    pub bits: u32,
    pub tau: f64,
    pub rho: f64,
    pub eta_exponent: f64,
    pub scale_tau: bool,
}

impl Default for RfConfig {
    fn default() -> Self {
        let s = SscaConfig::default();
        RfConfig { n_rf: 2, bits: 3, tau: s.tau, rho: s.rho, eta_exponent: s.eta_exponent, scale_tau: s.scale_tau }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimationConfig {
    /// Pilot symbols per UE per frame, `I`.
    pub pilots: usize,
    pub pilot_power_dbm: f64,
    pub peak_threshold: f64,
    /// Minimum peak separation in degrees; also the half-width of the lobe
    /// whose centroid locates each peak.
    pub peak_guard_deg: f64,
    /// OMP stops once the residual falls below this fraction of `‖y‖`.
    pub omp_tol: f64,
    /// Samples accumulated by the APS demo.
    pub aps_samples: usize,
    /// Pilot SNR points of the NMSE comparison.
    pub snr_db: Vec<f64>,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            pilots: 16,
            pilot_power_dbm: 20.0,
            peak_threshold: 0.1,
            peak_guard_deg: 9.0,
            omp_tol: 1e-3,
            aps_samples: 50,
            snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub t_l: usize,
    pub t_m: usize,
    pub t_s: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { t_l: 10, t_m: 50, t_s: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub seed: u64,
    pub trials: usize,
    pub pt_dbm: f64,
    pub variants: Vec<Variant>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { seed: 1, trials: 20, pt_dbm: 30.0, variants: Variant::ALL.to_vec() }
    }
}

/// Axis values of the sweep experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub pt_dbm: Vec<f64>,
    pub t_m: Vec<usize>,
    pub grid_points: Vec<usize>,
    pub n_t: Vec<usize>,
    pub users: Vec<usize>,
    pub user_angle_deg: Vec<f64>,
    pub user_distance_m: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            pt_dbm: vec![0.0, 10.0, 20.0, 30.0, 40.0],
            t_m: vec![5, 10, 20, 50],
            grid_points: vec![12, 24, 60, 120],
            n_t: vec![8, 16, 32],
            users: vec![1, 2, 3, 4],
            user_angle_deg: vec![-60.0, -30.0, 0.0, 30.0, 60.0],
            user_distance_m: vec![50.0, 60.0, 70.0, 80.0, 90.0, 100.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub channel: ChannelConfig,
    pub patterns: PatternConfig,
    pub rf: RfConfig,
    pub em: EmConfig,
    pub estimation: EstimationConfig,
    pub schedule: ScheduleConfig,
    pub sim: SimConfig,
    pub sweep: SweepConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Laptop-sized runs: `N_t = 16`, `M = 60`, `(T_L, T_M, T_S) = (3, 20, 50)`,
    /// 20 trials.
    DeskScale,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk_scale" | "desk-scale" => Ok(Preset::DeskScale),
            other => Err(Error::config("preset", format!("unknown preset `{other}` (expected desk_scale)"))),
        }
    }
}

fn range_check(field: &str, ok: bool, expect: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be {expect}")))
    }
}

fn layout_check(field: &str, v: &Option<Vec<Vec<f64>>>, users: usize, clusters: usize) -> Result<()> {
    if let Some(rows) = v {
        if rows.len() != users || rows.iter().any(|r| r.len() != clusters) {
            return Err(Error::config(field, format!("must list {clusters} values for each of {users} UEs")));
        }
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn with_preset(preset: Preset) -> Self {
        let mut c = ExperimentConfig::default();
        c.apply_preset(preset);
        c
    }

    pub fn apply_preset(&mut self, preset: Preset) {
        match preset {
            Preset::DeskScale => {
                self.channel.n_t = 16;
                self.channel.grid_points = 60;
                self.schedule = ScheduleConfig { t_l: 3, t_m: 20, t_s: 50 };
                self.sim.trials = 20;
            }
        }
    }

    /// Defaults, then `preset`, then the file at `path`, then each
    /// `section.key=value` override. The result is validated.
    pub fn load(path: Option<&Path>, preset: Option<Preset>, overrides: &[String]) -> Result<Self> {
        let mut base = ExperimentConfig::default();
        if let Some(p) = preset {
            base.apply_preset(p);
        }
        let mut tree = toml::Value::try_from(&base).map_err(|e| Error::config("<defaults>", e.to_string()))?;
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)?;
            // Parse once on its own so diagnostics carry file line numbers.
            toml::from_str::<ExperimentConfig>(&text)
                .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
            let file: toml::Value =
                toml::from_str(&text).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
            merge(&mut tree, file);
        }
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        let cfg: ExperimentConfig = tree.try_into().map_err(|e: toml::de::Error| Error::config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.channel;
        range_check("channel.n_t", (1..=1024).contains(&c.n_t), "in 1..=1024")?;
        range_check("channel.grid_points", (2..=4096).contains(&c.grid_points), "in 2..=4096")?;
        range_check("channel.users", (1..=64).contains(&c.users), "in 1..=64")?;
        range_check("channel.clusters", (1..=16).contains(&c.clusters), "in 1..=16")?;
        range_check("channel.rays_per_cluster", (1..=64).contains(&c.rays_per_cluster), "in 1..=64")?;
        range_check("channel.angle_spread_deg", (0.0..=90.0).contains(&c.angle_spread_deg), "in [0, 90]")?;
        range_check("channel.c0_db", c.c0_db.is_finite(), "finite")?;
        range_check("channel.d0_m", c.d0_m > 0.0 && c.d0_m.is_finite(), "positive")?;
        range_check("channel.distance_min_m", c.distance_min_m > 0.0 && c.distance_min_m.is_finite(), "positive")?;
        range_check("channel.distance_max_m", c.distance_max_m >= c.distance_min_m && c.distance_max_m.is_finite(), ">= distance_min_m")?;
        range_check("channel.kappa_min", (0.0..=10.0).contains(&c.kappa_min), "in [0, 10]")?;
        range_check("channel.kappa_max", c.kappa_max >= c.kappa_min && c.kappa_max <= 10.0, "in [kappa_min, 10]")?;
        range_check("channel.noise_dbm", (-250.0..=50.0).contains(&c.noise_dbm), "in [-250, 50] dBm")?;
        range_check("channel.carrier_ghz", c.carrier_ghz > 0.0 && c.carrier_ghz.is_finite(), "positive")?;
        layout_check("channel.aods_deg", &c.aods_deg, c.users, c.clusters)?;
        layout_check("channel.distances_m", &c.distances_m, c.users, c.clusters)?;
        if let Some(a) = &c.aods_deg {
            range_check("channel.aods_deg", a.iter().flatten().all(|v| (-90.0..=90.0).contains(v)), "in [-90, 90]")?;
        }
        if let Some(d) = &c.distances_m {
            range_check("channel.distances_m", d.iter().flatten().all(|v| *v > 0.0 && v.is_finite()), "positive")?;
        }

        let p = &self.patterns;
        range_check("patterns.num_patterns", p.num_patterns >= 1 && p.num_patterns <= c.grid_points, "in 1..=grid_points")?;
        if let Some(bw) = p.beamwidth_deg {
            range_check("patterns.beamwidth_deg", bw > 0.0 && bw <= 180.0, "in (0, 180]")?;
        }

        let r = &self.rf;
        range_check("rf.n_rf", r.n_rf >= 1 && r.n_rf <= c.n_t, "in 1..=n_t")?;
        range_check("rf.bits", (1..=8).contains(&r.bits), "in 1..=8")?;
        range_check("rf.tau", r.tau > 0.0 && r.tau.is_finite(), "positive")?;
        range_check("rf.rho", r.rho >= 0.0 && r.rho.is_finite(), "non-negative")?;
        range_check("rf.eta_exponent", r.eta_exponent > 0.0 && r.eta_exponent <= 1.0, "in (0, 1]")?;

        let e = &self.em;
        range_check("em.rho_init", e.rho_init > 0.0 && e.rho_init.is_finite(), "positive")?;
        range_check("em.rho_growth", e.rho_growth >= 1.0 && e.rho_growth.is_finite(), ">= 1")?;
        range_check("em.rho_max", e.rho_max >= e.rho_init && e.rho_max.is_finite(), ">= rho_init")?;
        range_check("em.outer_tol", e.outer_tol > 0.0, "positive")?;
        range_check("em.max_outer", (1..=100_000).contains(&e.max_outer), "in 1..=100000")?;
        range_check("em.inner_tol", e.inner_tol > 0.0, "positive")?;
        range_check("em.max_inner", (1..=1_000_000).contains(&e.max_inner), "in 1..=1000000")?;
        range_check("em.max_rounds", (1..=100).contains(&e.max_rounds), "in 1..=100")?;

        let s = &self.estimation;
        range_check("estimation.pilots", s.pilots >= 1 && s.pilots <= 4096, "in 1..=4096")?;
        range_check("estimation.pilot_power_dbm", (-100.0..=80.0).contains(&s.pilot_power_dbm), "in [-100, 80] dBm")?;
        range_check("estimation.peak_threshold", (0.0..=1.0).contains(&s.peak_threshold), "in [0, 1]")?;
        range_check("estimation.peak_guard_deg", s.peak_guard_deg > 0.0 && s.peak_guard_deg <= 90.0, "in (0, 90]")?;
        range_check("estimation.omp_tol", (0.0..1.0).contains(&s.omp_tol), "in [0, 1)")?;
        range_check("estimation.aps_samples", s.aps_samples >= 1, "at least 1")?;
        range_check("estimation.snr_db", !s.snr_db.is_empty() && s.snr_db.iter().all(|v| v.is_finite()), "a nonempty list")?;
        let paths = c.clusters * c.rays_per_cluster;
        range_check("estimation.pilots", r.n_rf * s.pilots >= paths, "large enough that n_rf * pilots >= clusters * rays_per_cluster")?;

        let t = &self.schedule;
        range_check("schedule.t_l", t.t_l >= 1, "at least 1")?;
        range_check("schedule.t_m", t.t_m >= 1, "at least 1")?;
        range_check("schedule.t_s", t.t_s >= 1, "at least 1")?;

        let m = &self.sim;
        range_check("sim.trials", (1..=100_000).contains(&m.trials), "in 1..=100000")?;
        range_check("sim.pt_dbm", (-50.0..=80.0).contains(&m.pt_dbm), "in [-50, 80] dBm")?;
        range_check("sim.variants", !m.variants.is_empty(), "a nonempty list")?;

        let w = &self.sweep;
        range_check("sweep.pt_dbm", w.pt_dbm.iter().all(|v| (-50.0..=80.0).contains(v)), "in [-50, 80] dBm")?;
        range_check("sweep.t_m", w.t_m.iter().all(|&v| v >= 1), "positive")?;
        range_check("sweep.grid_points", w.grid_points.iter().all(|&v| v >= p.num_patterns), "at least num_patterns")?;
        range_check("sweep.n_t", w.n_t.iter().all(|&v| v >= r.n_rf), "at least n_rf")?;
        range_check("sweep.users", w.users.iter().all(|&v| (1..=64).contains(&v)), "in 1..=64")?;
        range_check("sweep.user_angle_deg", w.user_angle_deg.iter().all(|v| (-90.0..=90.0).contains(v)), "in [-90, 90]")?;
        range_check("sweep.user_distance_m", w.user_distance_m.iter().all(|v| *v > 0.0), "positive")?;
        Ok(())
    }

    pub fn noise_watts(&self) -> f64 {
        dbm_to_watts(self.channel.noise_dbm)
    }

    pub fn pt_watts(&self) -> f64 {
        dbm_to_watts(self.sim.pt_dbm)
    }

    /// Noise variance seen by the pilot observations, `σ² / P_pilot`.
    pub fn pilot_noise(&self) -> f64 {
        self.noise_watts() / dbm_to_watts(self.estimation.pilot_power_dbm)
    }

    pub fn beamwidth(&self) -> Option<f64> {
        self.patterns.beamwidth_deg.map(f64::to_radians)
    }

    pub fn cluster_distribution(&self) -> ClusterDistribution {
        let c = &self.channel;
        ClusterDistribution {
            users: c.users,
            clusters: c.clusters,
            rays_per_cluster: c.rays_per_cluster,
            angle_spread: c.angle_spread_deg * PI / 180.0,
            c0_db: c.c0_db,
            d0: c.d0_m,
            distance_min: c.distance_min_m,
            distance_max: c.distance_max_m,
            kappa_min: c.kappa_min,
            kappa_max: c.kappa_max,
        }
    }

    pub fn ssca(&self) -> SscaConfig {
        SscaConfig { tau: self.rf.tau, rho: self.rf.rho, eta_exponent: self.rf.eta_exponent, scale_tau: self.rf.scale_tau }
    }

    pub fn peaks(&self) -> PeakConfig {
        PeakConfig {
            threshold: self.estimation.peak_threshold,
            guard: guard_bins(self.estimation.peak_guard_deg, self.channel.grid_points),
            max_peaks: self.channel.clusters,
        }
    }
}

/// Whole grid bins covering `deg`, at least one.
fn guard_bins(deg: f64, grid_points: usize) -> usize {
    let spacing = 180.0 / grid_points as f64;
    ((deg / spacing - 1e-9).ceil() as usize).max(1)
}

fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_table() && v.is_table() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

fn apply_override(tree: &mut toml::Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(spec, "override must look like section.key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    // Bare words that are not TOML literals are taken as strings.
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "malformed override key"));
    }
    let mut node = tree;
    for part in &parts[..parts.len() - 1] {
        node = node
            .as_table_mut()
            .and_then(|t| t.get_mut(*part))
            .ok_or_else(|| Error::config(key, format!("unknown section `{part}`")))?;
    }
    let table = node.as_table_mut().ok_or_else(|| Error::config(key, "not a section"))?;
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
