//! Tri-timescale simulation: super-frames update the radiation patterns
//! from accumulated statistics, frames update the analog beamformer from a
//! compressed-sensing channel estimate, and slots apply an MMSE digital
//! precoder to the instantaneous channel.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamform::bb::{fully_digital_baseline, mmse_digital};
use crate::beamform::em::{optimize_radiation, uniform_selection, EmProblem, EmTraceEntry};
use crate::beamform::rf::{fixed_subarray_chain, random_choices, SscaState};
use crate::channel::{
    assemble_channel_matrix, draw_realization, AngularGrid, ClusterParams, ChannelRealization,
};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::estimation::{
    aps_from_covariance, estimate_rf_channel, effective_channel, pilot_observe, refined_dictionary,
    steering_dictionary, zero_channel, ApsEstimate, CovarianceAccumulator,
};
use crate::linalg::{db_to_linear, derive_seed, rng_from_seed, CMat, CVec, RMat, SimRng};
use crate::metrics::{evaluate, nmse, slot_pilots, MetricsRecord, PilotSchedule, TimescaleMode};
use crate::patterns::{build_dictionary, AntennaPatterns, EmSelection, PatternDictionary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Antenna {
    /// Pattern-reconfigurable elements.
    Ra,
    /// Fixed isotropic elements.
    Ca,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Analog {
    /// Dynamic subarray: any antenna may join any RF chain.
    Ds,
    /// Fixed subarray: contiguous blocks per RF chain.
    Fs,
    /// Fully digital: the analog stage is bypassed.
    Fd,
}

/// Architecture under test. The timescale mode follows from the other two
/// fields: fully digital runs in real time, conventional antennas use the
/// two-timescale baseline and reconfigurable antennas the tri-timescale one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Variant {
    pub antenna: Antenna,
    pub analog: Analog,
}

impl Variant {
    pub const RA_DS: Variant = Variant { antenna: Antenna::Ra, analog: Analog::Ds };
    pub const RA_FS: Variant = Variant { antenna: Antenna::Ra, analog: Analog::Fs };
    pub const RA_FD: Variant = Variant { antenna: Antenna::Ra, analog: Analog::Fd };
    pub const CA_DS: Variant = Variant { antenna: Antenna::Ca, analog: Analog::Ds };
    pub const CA_FS: Variant = Variant { antenna: Antenna::Ca, analog: Analog::Fs };
    pub const CA_FD: Variant = Variant { antenna: Antenna::Ca, analog: Analog::Fd };
    pub const ALL: [Variant; 6] =
        [Self::RA_DS, Self::RA_FS, Self::RA_FD, Self::CA_DS, Self::CA_FS, Self::CA_FD];

    pub fn mode(self) -> TimescaleMode {
        match (self.antenna, self.analog) {
            (_, Analog::Fd) => TimescaleMode::RealTime,
            (Antenna::Ra, _) => TimescaleMode::Tri,
            (Antenna::Ca, _) => TimescaleMode::Two,
        }
    }

    pub fn label(self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = match self.antenna {
            Antenna::Ra => "RA",
            Antenna::Ca => "CA",
        };
        let b = match self.analog {
            Analog::Ds => "DS",
            Analog::Fs => "FS",
            Analog::Fd => "FD",
        };
        write!(f, "{a}-{b}")
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let up = s.trim().to_ascii_uppercase().replace(['_', ' ', ','], "-");
        Variant::ALL
            .into_iter()
            .find(|v| v.to_string() == up)
            .ok_or_else(|| Error::invalid(format!("unknown variant `{s}` (expected RA|CA-DS|FS|FD)")))
    }
}

impl TryFrom<String> for Variant {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimescaleSchedule {
    pub t_l: usize,
    pub t_m: usize,
    pub t_s: usize,
    pub seed: u64,
    pub trials: usize,
}

impl TimescaleSchedule {
    pub fn new(t_l: usize, t_m: usize, t_s: usize, seed: u64, trials: usize) -> Result<Self> {
        for (name, v) in [("t_l", t_l), ("t_m", t_m), ("t_s", t_s), ("trials", trials)] {
            if v == 0 {
                return Err(Error::invalid(format!("schedule {name} must be positive")));
            }
        }
        Ok(TimescaleSchedule { t_l, t_m, t_s, seed, trials })
    }

    pub fn total_slots(&self) -> usize {
        self.t_l * self.t_m * self.t_s
    }
}

/// Static objects shared by every trial of one configuration.
#[derive(Debug, Clone)]
pub struct SimSetup {
    pub config: ExperimentConfig,
    pub grid: AngularGrid,
    pub dict: PatternDictionary,
    pub schedule: TimescaleSchedule,
}

impl SimSetup {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let grid = AngularGrid::new(config.channel.grid_points)?;
        let dict = build_dictionary(&grid, config.patterns.num_patterns, config.beamwidth())?;
        let s = &config.schedule;
        let schedule = TimescaleSchedule::new(s.t_l, s.t_m, s.t_s, config.sim.seed, config.sim.trials)?;
        Ok(SimSetup { config: config.clone(), grid, dict, schedule })
    }

    /// Cluster statistics of one trial: random draws, then any fixed angles
    /// or distances from the configuration.
    pub fn draw_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ClusterParams {
        let ch = &self.config.channel;
        let mut params = ClusterParams::draw(&self.config.cluster_distribution(), rng);
        for (k, clusters) in params.users.iter_mut().enumerate() {
            for (c, cl) in clusters.iter_mut().enumerate() {
                if let Some(a) = &ch.aods_deg {
                    cl.nominal_aod = a[k][c].to_radians();
                }
                if let Some(d) = &ch.distances_m {
                    cl.distance = d[k][c];
                }
            }
        }
        params
    }

    pub fn pilot_schedule(&self, users: usize) -> PilotSchedule {
        PilotSchedule {
            t_l: self.schedule.t_l as u64,
            t_m: self.schedule.t_m as u64,
            t_s: self.schedule.t_s as u64,
            users: users as u64,
            pilots_per_frame: self.config.estimation.pilots as u64,
            n_rf: self.config.rf.n_rf as u64,
        }
    }

    fn initial_patterns(&self, antenna: Antenna) -> AntennaPatterns {
        let n_t = self.config.channel.n_t;
        let scale = self.config.patterns.gain_scale;
        match antenna {
            Antenna::Ra => AntennaPatterns::boresight(&self.dict, n_t, scale),
            Antenna::Ca => AntennaPatterns::conventional(n_t, &self.grid, scale),
        }
    }
}

/// Seed of trial `trial`. Every variant and sweep point uses the same trial
/// seeds, so comparisons share cluster geometry and channel draws.
pub fn trial_seed(master: u64, trial: usize) -> u64 {
    derive_seed(master, &[trial as u64])
}

const STREAM_PARAMS: u64 = 0;
const STREAM_CHANNEL: u64 = 1;
const STREAM_PILOTS: u64 = 2;
const STREAM_INIT: u64 = 3;

pub fn trial_params(setup: &SimSetup, seed: u64) -> ClusterParams {
    setup.draw_params(&mut rng_from_seed(derive_seed(seed, &[STREAM_PARAMS])))
}

/// Recoverable numerical problem; the loop kept the previous beamformer.
#[derive(Debug, Clone, PartialEq)]
pub struct SimWarning {
    pub t_l: usize,
    pub t_m: usize,
    pub t_s: usize,
    pub message: String,
}

/// One pattern-selection pass at a fixed downstream precoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EmRound {
    pub trace: Vec<EmTraceEntry>,
    pub converged: bool,
    pub choices: Vec<usize>,
    /// Cluster sum-rate of `choices` with the precoder re-fitted to them.
    pub model_rate: f64,
}

/// Long-timescale update at the start of super-frame `t_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmRun {
    pub t_l: usize,
    pub rounds: Vec<EmRound>,
    /// Adopted selection; the previous one is kept if no round beats it.
    pub choices: Vec<usize>,
    pub model_rate: f64,
}

/// Sample sum-rate seen by one SSCA recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RfTraceEntry {
    pub t_l: usize,
    pub t_m: usize,
    pub sample_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutput {
    pub variant: Variant,
    pub records: Vec<MetricsRecord>,
    pub em_runs: Vec<EmRun>,
    pub rf_trace: Vec<RfTraceEntry>,
    pub warnings: Vec<SimWarning>,
}

impl TrialOutput {
    /// Mean slot sum-rate over the last super-frame.
    pub fn final_rate(&self) -> f64 {
        let Some(last) = self.records.last().map(|r| r.t_l) else {
            return 0.0;
        };
        let tail: Vec<f64> = self.records.iter().filter(|r| r.t_l == last).map(|r| r.sum_rate).collect();
        tail.iter().sum::<f64>() / tail.len() as f64
    }

    pub fn mean_rate(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.sum_rate).sum::<f64>() / self.records.len() as f64
    }

    pub fn total_pilots(&self) -> u64 {
        self.records.iter().map(|r| r.pilots).sum()
    }
}

fn at_slot(t_l: usize, t_m: usize, t_s: usize) -> impl Fn(Error) -> Error {
    move |e| Error::AtSlot { t_l, t_m, t_s, source: Box::new(e) }
}

struct Ctx<'a> {
    setup: &'a SimSetup,
    noise: Vec<f64>,
    out: TrialOutput,
}

impl Ctx<'_> {
    fn warn(&mut self, t_l: usize, t_m: usize, t_s: usize, message: String) {
        log::warn!("{} (t_l={t_l}, t_m={t_m}, t_s={t_s}): {message}", self.out.variant);
        self.out.warnings.push(SimWarning { t_l, t_m, t_s, message });
    }

    /// Cluster estimates from the covariance accumulated so far, then the
    /// pattern selection that maximizes the cluster sum-rate. The digital
    /// stage is held at the MMSE precoder of the cluster channels seen
    /// through the current analog beamformer at the uniform starting point,
    /// so a UE left without signal by the previous patterns still counts.
    /// Alternates pattern selection at a fixed precoder with re-fitting the
    /// precoder to the rounded patterns, and adopts the best selection under
    /// the cluster model, `current` included.
    fn optimize_patterns(
        &self,
        acc: &[CovarianceAccumulator],
        t_l: usize,
        f_rf: &CMat,
        fully_digital: bool,
        current: &[usize],
    ) -> Result<EmRun> {
        let cfg = &self.setup.config;
        // Normalized by the super-frame index times T_M, counting from one.
        let normalizer = ((t_l + 1) * cfg.schedule.t_m) as f64;
        let peaks = cfg.peaks();
        let mut clusters = Vec::with_capacity(acc.len());
        for a in acc {
            let r = a.covariance(Some(normalizer))?;
            let aps = aps_from_covariance(&r, &self.setup.grid, &peaks)?;
            if aps.peaks.is_empty() {
                return Err(Error::invalid("no APS peak above threshold"));
            }
            clusters.push(aps.peaks);
        }
        let scale = cfg.patterns.gain_scale;
        let n_t = cfg.channel.n_t;
        let users = clusters.len();
        let p_t = cfg.pt_watts();
        let num_patterns = cfg.patterns.num_patterns;
        let probe = EmProblem::from_clusters(&self.setup.dict, scale, &clusters, CMat::zeros(n_t, users), self.noise.clone())?;
        // MMSE precoder on the cluster channels at `s`, and the resulting model rate.
        let fit = |s: &RMat| -> Result<(CMat, f64)> {
            let h_c = CMat::from_columns(&(0..users).map(|k| probe.channel(k, s)).collect::<Vec<_>>());
            let precoder = if fully_digital {
                fully_digital_baseline(&h_c.adjoint(), &self.noise, p_t)?
            } else {
                f_rf * mmse_digital(&(h_c.adjoint() * f_rf), &self.noise, f_rf, p_t)?.f_bb
            };
            let prob = EmProblem::from_clusters(&self.setup.dict, scale, &clusters, precoder.clone(), self.noise.clone())?;
            let rate = prob.sum_rate(s);
            Ok((precoder, rate))
        };

        let init = uniform_selection(n_t, num_patterns);
        let (mut precoder, _) = fit(&init)?;
        let mut best = (current.to_vec(), fit(EmSelection::from_choices(current, num_patterns)?.relaxed())?.1);
        let mut rounds: Vec<EmRound> = Vec::new();
        for _ in 0..cfg.em.max_rounds {
            let prob = EmProblem::from_clusters(&self.setup.dict, scale, &clusters, precoder, self.noise.clone())?;
            let outcome = optimize_radiation(&prob, &init, &cfg.em)?;
            let choices = outcome.selection.rounded().to_vec();
            let (next, model_rate) = fit(EmSelection::from_choices(&choices, num_patterns)?.relaxed())?;
            let repeat = rounds.last().is_some_and(|r| r.choices == choices);
            if model_rate > best.1 {
                best = (choices.clone(), model_rate);
            }
            rounds.push(EmRound { trace: outcome.trace, converged: outcome.converged, choices, model_rate });
            if repeat {
                break;
            }
            precoder = next;
        }
        Ok(EmRun { t_l, rounds, choices: best.0, model_rate: best.1 })
    }
}

/// Runs one trial of `variant` on fixed cluster statistics and returns the
/// per-slot ground-truth metrics together with the optimizer traces.
pub fn run_trial(setup: &SimSetup, params: &ClusterParams, variant: Variant, seed: u64) -> Result<TrialOutput> {
    params.validate()?;
    let cfg = &setup.config;
    let n_t = cfg.channel.n_t;
    let users = params.num_users();
    let (n_rf, bits) = (cfg.rf.n_rf, cfg.rf.bits);
    let p_t = cfg.pt_watts();
    let pilot_noise = cfg.pilot_noise();
    let sched = setup.schedule;
    let ledger = setup.pilot_schedule(users);
    let fd = variant.analog == Analog::Fd;

    let mut chan_rng = rng_from_seed(derive_seed(seed, &[STREAM_CHANNEL]));
    let mut pilot_rng = rng_from_seed(derive_seed(seed, &[STREAM_PILOTS]));
    let mut init_rng = rng_from_seed(derive_seed(seed, &[STREAM_INIT]));

    let mut ctx = Ctx {
        setup,
        noise: vec![cfg.noise_watts(); users],
        out: TrialOutput { variant, records: Vec::new(), em_runs: Vec::new(), rf_trace: Vec::new(), warnings: Vec::new() },
    };

    let mut patterns = setup.initial_patterns(variant.antenna);
    let mut pattern_choices = vec![setup.dict.boresight_pattern(); n_t];
    // Balanced chain layout with random phases; both subarray types start here.
    let blocks: Vec<usize> = (0..n_t).map(|n| fixed_subarray_chain(n, n_t, n_rf)).collect();
    let init = random_choices(n_t, n_rf, bits, Some(&blocks), &mut init_rng);
    let mut ssca = if fd {
        None
    } else {
        let chains = (variant.analog == Analog::Fs).then(|| blocks.clone());
        Some(SscaState::new(n_rf, bits, &init, chains, cfg.ssca())?)
    };
    let mut f_rf = ssca.as_ref().map_or_else(|| CMat::identity(n_t, n_t), SscaState::f_rf);
    let mut precoder: Option<CMat> = None;
    let mut acc: Vec<CovarianceAccumulator> = (0..users).map(|_| CovarianceAccumulator::new(n_t)).collect();
    let mut h_est: Vec<CVec> = vec![zero_channel(n_t); users];
    let (mut em_epoch, mut rf_epoch) = (0u32, 0u32);

    for t_l in 0..sched.t_l {
        // Long timescale.
        if t_l > 0 && variant.antenna == Antenna::Ra {
            match ctx.optimize_patterns(&acc, t_l, &f_rf, fd, &pattern_choices) {
                Ok(run) => {
                    patterns = AntennaPatterns::from_selection(&setup.dict, &run.choices, cfg.patterns.gain_scale);
                    pattern_choices = run.choices.clone();
                    em_epoch += 1;
                    ctx.out.em_runs.push(run);
                }
                Err(e) => ctx.warn(t_l, 0, 0, format!("pattern update skipped: {e}")),
            }
        }
        if let Some(s) = ssca.as_mut() {
            s.reset_recursion();
        }
        let dictionary = if fd {
            None
        } else {
            Some(refined_dictionary(&patterns, &setup.grid).map_err(at_slot(t_l, 0, 0))?.matrix)
        };

        for t_m in 0..sched.t_m {
            // Medium timescale.
            let frame = draw_realization(params, &setup.grid, n_t, &mut chan_rng);
            for (k, a) in acc.iter_mut().enumerate() {
                a.push(&frame.pattern_free_channel(k)).map_err(at_slot(t_l, t_m, 0))?;
            }
            let mut frame_nmse = None;
            if let (Some(state), Some(dict)) = (ssca.as_mut(), dictionary.as_ref()) {
                let h_true = assemble_channel_matrix(&frame, &patterns).map_err(at_slot(t_l, t_m, 0))?;
                let (mut total, mut counted) = (0.0, 0usize);
                for k in 0..users {
                    let truth = h_true.column(k).into_owned();
                    let est = pilot_observe(&truth, cfg.estimation.pilots, n_rf, bits, pilot_noise, &mut pilot_rng)
                        .and_then(|obs| estimate_rf_channel(&obs, dict, params.num_paths(k), cfg.estimation.omp_tol));
                    match est {
                        Ok((h, _)) => h_est[k] = h,
                        Err(e) => ctx.warn(t_l, t_m, 0, format!("UE {k} estimate kept from previous frame: {e}")),
                    }
                    if let Ok(v) = nmse(&truth, &h_est[k]) {
                        total += v;
                        counted += 1;
                    }
                }
                // UEs with no signal under the current patterns are skipped.
                frame_nmse = (counted > 0).then(|| total / counted as f64);
                let h_mat = CMat::from_columns(&h_est);
                // Digital stage fitted to the relaxed point the surrogate is built at.
                let f_relaxed = state.relaxed_analog();
                let digital = effective_channel(&h_mat, &f_relaxed)
                    .and_then(|h_e| mmse_digital(&h_e, &ctx.noise, &f_relaxed, p_t))
                    .map(|d| d.f_bb);
                match digital.and_then(|fbb| state.step(&h_mat, &fbb, &ctx.noise)) {
                    Ok(v) => {
                        f_rf = state.f_rf();
                        rf_epoch += 1;
                        ctx.out.rf_trace.push(RfTraceEntry { t_l, t_m, sample_rate: v });
                    }
                    Err(e) => ctx.warn(t_l, t_m, 0, format!("analog update skipped: {e}")),
                }
            }

            for t_s in 0..sched.t_s {
                // Short timescale.
                let at = at_slot(t_l, t_m, t_s);
                let real = draw_realization(params, &setup.grid, n_t, &mut chan_rng);
                let h = assemble_channel_matrix(&real, &patterns).map_err(&at)?;
                let fresh = if fd {
                    fully_digital_baseline(&h.adjoint(), &ctx.noise, p_t)
                } else {
                    mmse_digital(&(h.adjoint() * &f_rf), &ctx.noise, &f_rf, p_t).map(|d| &f_rf * &d.f_bb)
                };
                let w = match fresh {
                    Ok(w) => w,
                    Err(e) => {
                        ctx.warn(t_l, t_m, t_s, format!("digital update skipped: {e}"));
                        precoder.clone().unwrap_or_else(|| CMat::zeros(h.nrows(), users))
                    }
                };
                let eval = evaluate(&h, &w, &ctx.noise).map_err(&at)?;
                let (pilots, pilots_nrf) = slot_pilots(&ledger, variant.mode(), t_s == 0);
                ctx.out.records.push(MetricsRecord {
                    t_l,
                    t_m,
                    t_s,
                    sinr: eval.sinr,
                    rates: eval.rates,
                    sum_rate: eval.sum_rate,
                    tx_power: eval.tx_power,
                    pilots,
                    pilots_nrf,
                    nmse: if t_s == 0 { frame_nmse } else { None },
                    em_epoch,
                    rf_epoch,
                });
                precoder = Some(w);
            }
        }
    }
    Ok(ctx.out)
}

/// Runs `trials` seeded trials of every variant in parallel and returns
/// `outputs[variant][trial]`.
pub fn run_trials(setup: &SimSetup, variants: &[Variant], trials: usize, master: u64) -> Result<Vec<Vec<TrialOutput>>> {
    run_trials_with(setup, variants, trials, master, |_| {})
}

/// As [`run_trials`], with `edit` applied to each trial's cluster statistics.
pub fn run_trials_with(
    setup: &SimSetup,
    variants: &[Variant],
    trials: usize,
    master: u64,
    edit: impl Fn(&mut ClusterParams) + Sync,
) -> Result<Vec<Vec<TrialOutput>>> {
    let jobs: Vec<(usize, usize)> = (0..variants.len()).flat_map(|v| (0..trials).map(move |t| (v, t))).collect();
    let results: Vec<Result<TrialOutput>> = jobs
        .par_iter()
        .map(|&(v, t)| {
            let seed = trial_seed(master, t);
            let mut params = trial_params(setup, seed);
            edit(&mut params);
            log::debug!("{} trial {t}", variants[v]);
            run_trial(setup, &params, variants[v], seed)
        })
        .collect();
    let mut out: Vec<Vec<TrialOutput>> = variants.iter().map(|_| Vec::with_capacity(trials)).collect();
    for ((v, _), r) in jobs.into_iter().zip(results) {
        out[v].push(r?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    Pt,
    GridPoints,
    Nt,
    Users,
    Frames,
    UserAngle,
    UserDistance,
}

impl SweepAxis {
    /// Column name used in the output tables.
    pub fn column(self) -> &'static str {
        match self {
            SweepAxis::Pt => "pt_dbm",
            SweepAxis::GridPoints => "grid_points",
            SweepAxis::Nt => "n_t",
            SweepAxis::Users => "users",
            SweepAxis::Frames => "t_m",
            SweepAxis::UserAngle => "user_angle_deg",
            SweepAxis::UserDistance => "user_distance_m",
        }
    }

    /// Copy of `base` with this axis set to `value`. The angle axis places
    /// every cluster of UE 1 at `value` degrees; the distance axis moves every
    /// cluster of every UE to `value` meters.
    pub fn apply(self, base: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut c = base.clone();
        let count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::invalid(format!("{} needs a non-negative integer, got {v}", self.column())))
            }
        };
        match self {
            SweepAxis::Pt => c.sim.pt_dbm = value,
            SweepAxis::GridPoints => c.channel.grid_points = count(value)?,
            SweepAxis::Nt => c.channel.n_t = count(value)?,
            SweepAxis::Users => {
                c.channel.users = count(value)?;
                c.channel.aods_deg = None;
                c.channel.distances_m = None;
            }
            SweepAxis::Frames => c.schedule.t_m = count(value)?,
            SweepAxis::UserAngle => {
                c.channel.aods_deg = None;
                c.channel.distances_m = None;
            }
            SweepAxis::UserDistance => {
                c.channel.distances_m = Some(vec![vec![value; c.channel.clusters]; c.channel.users]);
            }
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub variant: Variant,
    /// Mean over trials of the last-super-frame sum-rate.
    pub mean_rate: f64,
    pub std_rate: f64,
    /// Pilot total of one trial (identical across trials).
    pub pilots: u64,
    pub trials: usize,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One row per `(value, variant)`, values in the given order.
pub fn run_sweep(
    base: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
    variants: &[Variant],
    trials: usize,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() || variants.is_empty() || trials == 0 {
        return Err(Error::invalid("sweep needs values, variants and at least one trial"));
    }
    let mut rows = Vec::new();
    for &value in values {
        let cfg = axis.apply(base, value)?;
        let setup = SimSetup::new(&cfg)?;
        let outputs = if axis == SweepAxis::UserAngle {
            run_trials_with(&setup, variants, trials, cfg.sim.seed, |p| {
                for c in p.users[0].iter_mut() {
                    c.nominal_aod = value.to_radians();
                }
            })?
        } else {
            run_trials(&setup, variants, trials, cfg.sim.seed)?
        };
        for (v, outs) in variants.iter().zip(outputs) {
            let rates: Vec<f64> = outs.iter().map(TrialOutput::final_rate).collect();
            let (mean_rate, std_rate) = mean_std(&rates);
            rows.push(SweepRow {
                axis,
                value,
                variant: *v,
                mean_rate,
                std_rate,
                pilots: outs[0].total_pilots(),
                trials,
            });
        }
    }
    Ok(rows)
}

/// Capon spectrum of UE 1 after `samples` pattern-free frame draws.
pub fn aps_demo(setup: &SimSetup, params: &ClusterParams, samples: usize, seed: u64) -> Result<ApsEstimate> {
    let n_t = setup.config.channel.n_t;
    let mut rng = rng_from_seed(derive_seed(seed, &[STREAM_CHANNEL]));
    let mut acc = CovarianceAccumulator::new(n_t);
    for _ in 0..samples {
        let real = draw_realization(params, &setup.grid, n_t, &mut rng);
        acc.push(&real.pattern_free_channel(0))?;
    }
    aps_from_covariance(&acc.covariance(None)?, &setup.grid, &setup.config.peaks())
}

/// NMSE of the pattern-aware and pattern-agnostic OMP estimates of one UE
/// whose antennas radiate with randomly chosen dictionary patterns. The
/// pilot noise is set so that `‖h‖² / (N_t σ²)` equals `snr_db`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmsePair {
    pub aware: f64,
    pub agnostic: f64,
}

pub fn nmse_trial(setup: &SimSetup, params: &ClusterParams, snr_db: f64, rng: &mut SimRng) -> Result<NmsePair> {
    let cfg = &setup.config;
    let n_t = cfg.channel.n_t;
    let scale = cfg.patterns.gain_scale;
    let choices: Vec<usize> = (0..n_t).map(|_| rng.gen_range(0..setup.dict.num_patterns())).collect();
    let patterns = AntennaPatterns::from_selection(&setup.dict, &choices, scale);
    let real: ChannelRealization = draw_realization(params, &setup.grid, n_t, rng);
    let h = assemble_channel_matrix(&real, &patterns)?.column(0).into_owned();
    let power = h.norm_squared();
    if power == 0.0 {
        return Err(Error::invalid("channel has no energy under the drawn patterns"));
    }
    let noise_var = power / (n_t as f64 * db_to_linear(snr_db));
    let obs = pilot_observe(&h, cfg.estimation.pilots, cfg.rf.n_rf, cfg.rf.bits, noise_var, rng)?;
    let l = params.num_paths(0);
    let aware_dict = refined_dictionary(&patterns, &setup.grid)?.matrix;
    let (h_aware, _) = estimate_rf_channel(&obs, &aware_dict, l, cfg.estimation.omp_tol)?;
    let (h_plain, _) = estimate_rf_channel(&obs, &steering_dictionary(&setup.grid, n_t), l, cfg.estimation.omp_tol)?;
    Ok(NmsePair { aware: nmse(&h, &h_aware)?, agnostic: nmse(&h, &h_plain)? })
}

/// Mean NMSE over `trials` draws at each SNR point; trials whose channel
/// vanishes under the drawn patterns are redrawn.
pub fn nmse_sweep(setup: &SimSetup, snr_db: &[f64], trials: usize, master: u64) -> Result<Vec<(f64, NmsePair)>> {
    snr_db
        .iter()
        .enumerate()
        .map(|(i, &snr)| {
            let pairs: Vec<Result<NmsePair>> = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let seed = derive_seed(master, &[i as u64, t as u64]);
                    let mut rng = rng_from_seed(seed);
                    let params = setup.draw_params(&mut rng);
                    let mut last = Err(Error::invalid("no usable draw"));
                    for _ in 0..16 {
                        last = nmse_trial(setup, &params, snr, &mut rng);
                        if last.is_ok() {
                            break;
                        }
                    }
                    last
                })
                .collect();
            let mut sum = NmsePair { aware: 0.0, agnostic: 0.0 };
            for p in pairs {
                let p = p?;
                sum.aware += p.aware;
                sum.agnostic += p.agnostic;
            }
            let n = trials as f64;
            Ok((snr, NmsePair { aware: sum.aware / n, agnostic: sum.agnostic / n }))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Preset;

    fn tiny() -> ExperimentConfig {
        let mut c = ExperimentConfig::with_preset(Preset::DeskScale);
        c.channel.n_t = 8;
        c.channel.grid_points = 24;
        c.schedule.t_l = 2;
        c.schedule.t_m = 3;
        c.schedule.t_s = 4;
        c.sim.trials = 2;
        c
    }

    #[test]
    fn variant_labels_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.label().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("ra_ds".parse::<Variant>().unwrap(), Variant::RA_DS);
        assert!("XX-DS".parse::<Variant>().is_err());
        assert_eq!(Variant::CA_FS.mode(), TimescaleMode::Two);
        assert_eq!(Variant::RA_FD.mode(), TimescaleMode::RealTime);
        assert_eq!(Variant::RA_FS.mode(), TimescaleMode::Tri);
    }

    #[test]
    fn schedule_rejects_zero_counts() {
        assert!(TimescaleSchedule::new(1, 0, 1, 0, 1).is_err());
        assert_eq!(TimescaleSchedule::new(2, 3, 4, 0, 1).unwrap().total_slots(), 24);
    }

    #[test]
    fn single_slot_fully_digital_matches_baseline() {
        let mut c = tiny();
        c.schedule = crate::config::ScheduleConfig { t_l: 1, t_m: 1, t_s: 1 };
        let setup = SimSetup::new(&c).unwrap();
        let seed = trial_seed(5, 0);
        let params = trial_params(&setup, seed);
        let out = run_trial(&setup, &params, Variant::RA_FD, seed).unwrap();
        assert_eq!(out.records.len(), 1);

        // Replay the channel stream: one frame draw, then the slot draw.
        let mut rng = rng_from_seed(derive_seed(seed, &[STREAM_CHANNEL]));
        let _frame = draw_realization(&params, &setup.grid, 8, &mut rng);
        let slot = draw_realization(&params, &setup.grid, 8, &mut rng);
        let patterns = AntennaPatterns::boresight(&setup.dict, 8, c.patterns.gain_scale);
        let h = assemble_channel_matrix(&slot, &patterns).unwrap();
        let noise = vec![c.noise_watts(); 2];
        let w = fully_digital_baseline(&h.adjoint(), &noise, c.pt_watts()).unwrap();
        let direct = evaluate(&h, &w, &noise).unwrap().sum_rate;
        assert!((out.records[0].sum_rate - direct).abs() <= 1e-12 * direct.max(1.0));
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let setup = SimSetup::new(&tiny()).unwrap();
        let seed = trial_seed(9, 1);
        let params = trial_params(&setup, seed);
        for v in [Variant::RA_DS, Variant::CA_FS] {
            let a = run_trial(&setup, &params, v, seed).unwrap();
            let b = run_trial(&setup, &params, v, seed).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn epochs_change_only_at_their_boundaries() {
        let setup = SimSetup::new(&tiny()).unwrap();
        let seed = trial_seed(3, 0);
        let params = trial_params(&setup, seed);
        let out = run_trial(&setup, &params, Variant::RA_DS, seed).unwrap();
        assert_eq!(out.records.len(), 24);
        for w in out.records.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if b.t_s != 0 {
                assert_eq!((a.em_epoch, a.rf_epoch), (b.em_epoch, b.rf_epoch));
            }
            if b.t_m != 0 || b.t_s != 0 {
                assert_eq!(a.em_epoch, b.em_epoch);
            }
        }
        assert_eq!(out.records.last().unwrap().em_epoch as usize, out.em_runs.len());
    }

    #[test]
    fn conventional_antennas_never_run_the_pattern_optimizer() {
        let setup = SimSetup::new(&tiny()).unwrap();
        let seed = trial_seed(4, 0);
        let params = trial_params(&setup, seed);
        for v in [Variant::CA_DS, Variant::CA_FS, Variant::CA_FD] {
            let out = run_trial(&setup, &params, v, seed).unwrap();
            assert!(out.em_runs.is_empty());
            assert!(out.records.iter().all(|r| r.em_epoch == 0));
        }
    }

    #[test]
    fn slot_pilots_sum_to_the_ledger() {
        let setup = SimSetup::new(&tiny()).unwrap();
        let seed = trial_seed(4, 1);
        let params = trial_params(&setup, seed);
        for v in [Variant::RA_DS, Variant::RA_FD] {
            let out = run_trial(&setup, &params, v, seed).unwrap();
            let ledger = crate::metrics::pilot_ledger(&setup.pilot_schedule(2), v.mode());
            assert_eq!(out.total_pilots(), ledger.total);
        }
    }

    #[test]
    fn trial_order_does_not_matter() {
        let setup = SimSetup::new(&tiny()).unwrap();
        let run = |t: usize| {
            let seed = trial_seed(11, t);
            run_trial(&setup, &trial_params(&setup, seed), Variant::RA_FS, seed).unwrap()
        };
        let forward: Vec<_> = (0..3).map(run).collect();
        let backward: Vec<_> = (0..3).rev().map(run).collect();
        for t in 0..3 {
            assert_eq!(forward[t], backward[2 - t]);
        }
    }

    #[test]
    fn single_cell_sweep_reduces_to_trial() {
        let c = tiny();
        let rows = run_sweep(&c, SweepAxis::Pt, &[c.sim.pt_dbm], &[Variant::RA_DS], 1).unwrap();
        let setup = SimSetup::new(&c).unwrap();
        let seed = trial_seed(c.sim.seed, 0);
        let out = run_trial(&setup, &trial_params(&setup, seed), Variant::RA_DS, seed).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].mean_rate, out.final_rate());
        assert_eq!(rows[0].std_rate, 0.0);
        assert_eq!(rows[0].pilots, out.total_pilots());
    }

    #[test]
    fn axis_application_validates() {
        let c = tiny();
        assert!(SweepAxis::Frames.apply(&c, 0.0).is_err());
        assert!(SweepAxis::Nt.apply(&c, 2.5).is_err());
        assert_eq!(SweepAxis::GridPoints.apply(&c, 12.0).unwrap().channel.grid_points, 12);
        let d = SweepAxis::UserDistance.apply(&c, 70.0).unwrap();
        assert_eq!(d.channel.distances_m.unwrap()[1][1], 70.0);
    }
}
