//! Named experiments: each one runs a sweep or a demo and writes CSV tables
//! under `<out>/<experiment>/`.
//!
//! | experiment       | files                                   | columns |
//! |------------------|-----------------------------------------|---------|
//! | `convergence`    | `RA-DS.csv`, `em_trace.csv`, `ssca_trace.csv` | per-slot records; `t_l,round,iteration,rho,sum_rate,penalized_before,penalized_after,change`; `frame,t_l,t_m,sample_rate` |
//! | `power-sweep`    | `<variant>.csv`                         | `pt_dbm,variant,mean_rate,std_rate` |
//! | `frames-sweep`   | `<variant>.csv`                         | `t_m,variant,mean_rate,std_rate,pilots` |
//! | `geometry-sweep` | `<variant>.csv`                         | `axis,value,variant,mean_rate,std_rate,pilots` |
//! | `m-sweep`        | `<variant>.csv`                         | `grid_points,variant,mean_rate,std_rate,pilots` |
//! | `scaling-sweep`  | `<variant>.csv`                         | `axis,value,variant,mean_rate,std_rate,pilots` |
//! | `aps-demo`       | `aps.csv`, `peaks.csv`                  | `bin,angle,rho,rho_norm,is_peak`; `bin,angle_deg,alpha` |
//! | `nmse-sweep`     | `pattern-aware.csv`, `pattern-agnostic.csv` | `snr_db,scheme,mean_nmse,nmse_db` |

use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::metrics::write_records_csv;
use crate::sim::{
    aps_demo, nmse_sweep, run_sweep, run_trial, trial_params, trial_seed, SimSetup, SweepAxis, SweepRow, Variant,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Experiment {
    Convergence,
    PowerSweep,
    FramesSweep,
    GeometrySweep,
    ApsDemo,
    NmseSweep,
    MSweep,
    ScalingSweep,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::Convergence,
        Experiment::PowerSweep,
        Experiment::FramesSweep,
        Experiment::GeometrySweep,
        Experiment::ApsDemo,
        Experiment::NmseSweep,
        Experiment::MSweep,
        Experiment::ScalingSweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Convergence => "convergence",
            Experiment::PowerSweep => "power-sweep",
            Experiment::FramesSweep => "frames-sweep",
            Experiment::GeometrySweep => "geometry-sweep",
            Experiment::ApsDemo => "aps-demo",
            Experiment::NmseSweep => "nmse-sweep",
            Experiment::MSweep => "m-sweep",
            Experiment::ScalingSweep => "scaling-sweep",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown experiment `{s}`")))
    }
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub experiment: String,
    pub build: String,
    pub seed: u64,
    pub trials: usize,
    pub wall_time_s: f64,
    pub files: Vec<String>,
    pub status: String,
    pub config: ExperimentConfig,
}

struct Writer {
    dir: PathBuf,
    files: Vec<String>,
}

impl Writer {
    fn csv(&mut self, name: &str) -> Result<csv::Writer<BufWriter<File>>> {
        self.files.push(name.to_string());
        Ok(csv::Writer::from_writer(BufWriter::new(File::create(self.dir.join(name))?)))
    }

    fn raw(&mut self, name: &str) -> Result<BufWriter<File>> {
        self.files.push(name.to_string());
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }
}

pub fn build_id() -> &'static str {
    option_env!("TRIHYBRID_GIT_DESCRIBE").unwrap_or("unknown")
}

/// Runs `exp` and writes its tables plus `summary.json` into
/// `<out>/<exp>/`. On failure the files written so far are kept and the
/// summary records the error.
pub fn run_experiment(exp: Experiment, cfg: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
    let dir = out.join(exp.name());
    std::fs::create_dir_all(&dir)?;
    let start = Instant::now();
    let mut w = Writer { dir: dir.clone(), files: Vec::new() };
    let result = dispatch(exp, cfg, &mut w);
    let summary = RunSummary {
        experiment: exp.name().to_string(),
        build: build_id().to_string(),
        seed: cfg.sim.seed,
        trials: cfg.sim.trials,
        wall_time_s: start.elapsed().as_secs_f64(),
        files: w.files.clone(),
        status: match &result {
            Ok(()) => "ok".to_string(),
            Err(e) => format!("failed: {e}"),
        },
        config: cfg.clone(),
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::invalid(e.to_string()))?;
    std::fs::write(dir.join("summary.json"), json + "\n")?;
    result.map(|()| summary)
}

fn dispatch(exp: Experiment, cfg: &ExperimentConfig, w: &mut Writer) -> Result<()> {
    let s = &cfg.sweep;
    let variants = &cfg.sim.variants;
    let trials = cfg.sim.trials;
    let as_f64 = |v: &[usize]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
    match exp {
        Experiment::Convergence => convergence(cfg, w),
        Experiment::PowerSweep => {
            let rows = run_sweep(cfg, SweepAxis::Pt, &s.pt_dbm, variants, trials)?;
            write_sweep(w, &rows, false, false)
        }
        Experiment::FramesSweep => {
            let rows = run_sweep(cfg, SweepAxis::Frames, &as_f64(&s.t_m), variants, trials)?;
            write_sweep(w, &rows, false, true)
        }
        Experiment::MSweep => {
            let rows = run_sweep(cfg, SweepAxis::GridPoints, &as_f64(&s.grid_points), variants, trials)?;
            write_sweep(w, &rows, false, true)
        }
        Experiment::GeometrySweep => {
            let mut rows = run_sweep(cfg, SweepAxis::UserAngle, &s.user_angle_deg, variants, trials)?;
            rows.extend(run_sweep(cfg, SweepAxis::UserDistance, &s.user_distance_m, variants, trials)?);
            write_sweep(w, &rows, true, true)
        }
        Experiment::ScalingSweep => {
            let mut rows = run_sweep(cfg, SweepAxis::Nt, &as_f64(&s.n_t), variants, trials)?;
            rows.extend(run_sweep(cfg, SweepAxis::Users, &as_f64(&s.users), variants, trials)?);
            write_sweep(w, &rows, true, true)
        }
        Experiment::ApsDemo => aps(cfg, w),
        Experiment::NmseSweep => nmse(cfg, w),
    }
}

fn write_sweep(w: &mut Writer, rows: &[SweepRow], with_axis: bool, with_pilots: bool) -> Result<()> {
    let mut order: Vec<Variant> = Vec::new();
    for r in rows {
        if !order.contains(&r.variant) {
            order.push(r.variant);
        }
    }
    for v in order {
        let mut out = w.csv(&format!("{v}.csv"))?;
        let mut header = Vec::new();
        if with_axis {
            header.extend(["axis", "value"]);
        } else {
            header.push(rows[0].axis.column());
        }
        header.extend(["variant", "mean_rate", "std_rate"]);
        if with_pilots {
            header.push("pilots");
        }
        out.write_record(&header)?;
        for r in rows.iter().filter(|r| r.variant == v) {
            let mut rec = Vec::new();
            if with_axis {
                rec.push(r.axis.column().to_string());
            }
            rec.extend([r.value.to_string(), v.to_string(), r.mean_rate.to_string(), r.std_rate.to_string()]);
            if with_pilots {
                rec.push(r.pilots.to_string());
            }
            out.write_record(&rec)?;
        }
        out.flush()?;
    }
    Ok(())
}

fn convergence(cfg: &ExperimentConfig, w: &mut Writer) -> Result<()> {
    let setup = SimSetup::new(cfg)?;
    let seed = trial_seed(cfg.sim.seed, 0);
    let params = trial_params(&setup, seed);
    let variant = Variant::RA_DS;
    let trial = run_trial(&setup, &params, variant, seed)?;
    write_records_csv(&trial.records, w.raw(&format!("{variant}.csv"))?)?;

    let mut em = w.csv("em_trace.csv")?;
    em.write_record(["t_l", "round", "iteration", "rho", "sum_rate", "penalized_before", "penalized_after", "change"])?;
    for run in &trial.em_runs {
        for (round, r) in run.rounds.iter().enumerate() {
            for e in &r.trace {
                em.write_record([
                    run.t_l.to_string(),
                    round.to_string(),
                    e.iteration.to_string(),
                    e.rho.to_string(),
                    e.sum_rate.to_string(),
                    e.penalized_before.to_string(),
                    e.penalized_after.to_string(),
                    e.change.to_string(),
                ])?;
            }
        }
    }
    em.flush()?;

    let mut rf = w.csv("ssca_trace.csv")?;
    rf.write_record(["frame", "t_l", "t_m", "sample_rate"])?;
    for (i, e) in trial.rf_trace.iter().enumerate() {
        rf.write_record([i.to_string(), e.t_l.to_string(), e.t_m.to_string(), e.sample_rate.to_string()])?;
    }
    rf.flush()?;
    Ok(())
}

/// UE 1's clusters sit at the configured angles, or spread evenly over
/// ±30° when none are configured.
fn aps(cfg: &ExperimentConfig, w: &mut Writer) -> Result<()> {
    let mut cfg = cfg.clone();
    if cfg.channel.aods_deg.is_none() {
        let c = cfg.channel.clusters;
        let row: Vec<f64> = (0..c)
            .map(|i| if c == 1 { 0.0 } else { -30.0 + 60.0 * i as f64 / (c - 1) as f64 })
            .collect();
        cfg.channel.aods_deg = Some(vec![row; cfg.channel.users]);
    }
    let setup = SimSetup::new(&cfg)?;
    let seed = trial_seed(cfg.sim.seed, 0);
    let params = trial_params(&setup, seed);
    let est = aps_demo(&setup, &params, cfg.estimation.aps_samples, seed)?;
    est.write_csv(&setup.grid, w.raw("aps.csv")?)?;
    let mut peaks = w.csv("peaks.csv")?;
    peaks.write_record(["bin", "angle_deg", "alpha"])?;
    for p in &est.peaks {
        peaks.write_record([p.bin.to_string(), p.aod.to_degrees().to_string(), p.alpha.to_string()])?;
    }
    peaks.flush()?;
    Ok(())
}

fn nmse(cfg: &ExperimentConfig, w: &mut Writer) -> Result<()> {
    let setup = SimSetup::new(cfg)?;
    let points = nmse_sweep(&setup, &cfg.estimation.snr_db, cfg.sim.trials, cfg.sim.seed)?;
    for (scheme, pick) in [("pattern-aware", true), ("pattern-agnostic", false)] {
        let mut out = w.csv(&format!("{scheme}.csv"))?;
        out.write_record(["snr_db", "scheme", "mean_nmse", "nmse_db"])?;
        for (snr, pair) in &points {
            let v = if pick { pair.aware } else { pair.agnostic };
            out.write_record([snr.to_string(), scheme.to_string(), v.to_string(), (10.0 * v.log10()).to_string()])?;
        }
        out.flush()?;
    }
    Ok(())
}
