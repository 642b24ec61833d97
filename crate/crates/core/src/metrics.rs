//! SINR, sum-rate, NMSE and pilot accounting.
//!
//! Every reported performance number goes through [`sum_rate`] on the true
//! instantaneous channel; optimizer surrogates never end up in a
//! [`MetricsRecord`].

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::channel::{assemble_channel_matrix, ChannelRealization};
use crate::error::{Error, Result};
use crate::linalg::{frobenius_sq, CMat, CVec};
use crate::patterns::AntennaPatterns;

/// The triple `(F_EM, F_RF, F_BB)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    pub patterns: AntennaPatterns,
    /// `N_t × N_RF`.
    pub f_rf: CMat,
    /// `N_RF × K`.
    pub f_bb: CMat,
}

impl BeamformerSet {
    pub fn precoder(&self) -> CMat {
        &self.f_rf * &self.f_bb
    }

    pub fn tx_power(&self) -> f64 {
        frobenius_sq(&self.precoder())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateEval {
    pub sinr: Vec<f64>,
    pub rates: Vec<f64>,
    pub sum_rate: f64,
    pub tx_power: f64,
}

/// Per-UE SINR for channels `h` (`N_t × K`, column `k` is UE `k`'s
/// pattern-weighted channel) and a composite precoder `N_t × K`.
pub fn sinr(h: &CMat, precoder: &CMat, noise: &[f64]) -> Result<Vec<f64>> {
    if h.nrows() != precoder.nrows() {
        return Err(Error::DimensionMismatch {
            context: "sinr antennas",
            expected: h.nrows(),
            got: precoder.nrows(),
        });
    }
    let k = h.ncols();
    if precoder.ncols() != k || noise.len() != k {
        return Err(Error::DimensionMismatch {
            context: "sinr users",
            expected: k,
            got: precoder.ncols().min(noise.len()),
        });
    }
    // a[(k, j)] = h_k^H w_j
    let a = h.adjoint() * precoder;
    Ok((0..k)
        .map(|u| {
            let signal = a[(u, u)].norm_sqr();
            let interference: f64 = (0..k).filter(|&j| j != u).map(|j| a[(u, j)].norm_sqr()).sum();
            signal / (interference + noise[u])
        })
        .collect())
}

pub fn rates_from_sinr(sinr: &[f64]) -> (Vec<f64>, f64) {
    let rates: Vec<f64> = sinr.iter().map(|s| (1.0 + s).log2()).collect();
    let total = rates.iter().sum();
    (rates, total)
}

pub fn evaluate(h: &CMat, precoder: &CMat, noise: &[f64]) -> Result<RateEval> {
    let sinr = sinr(h, precoder, noise)?;
    let (rates, sum_rate) = rates_from_sinr(&sinr);
    Ok(RateEval {
        sinr,
        rates,
        sum_rate,
        tx_power: frobenius_sq(precoder),
    })
}

/// Ground-truth sum-rate of a beamformer set on a channel draw.
pub fn sum_rate(bf: &BeamformerSet, real: &ChannelRealization, noise: &[f64]) -> Result<RateEval> {
    let h = assemble_channel_matrix(real, &bf.patterns)?;
    evaluate(&h, &bf.precoder(), noise)
}

/// `‖h_est − h_true‖² / ‖h_true‖²`.
pub fn nmse(h_true: &CVec, h_est: &CVec) -> Result<f64> {
    if h_true.len() != h_est.len() {
        return Err(Error::DimensionMismatch {
            context: "nmse",
            expected: h_true.len(),
            got: h_est.len(),
        });
    }
    let denom = h_true.norm_squared();
    if denom == 0.0 {
        return Err(Error::invalid("NMSE undefined for a zero reference channel"));
    }
    Ok((h_est - h_true).norm_squared() / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimescaleMode {
    Tri,
    Two,
    RealTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PilotSchedule {
    pub t_l: u64,
    pub t_m: u64,
    pub t_s: u64,
    pub users: u64,
    /// Pilot symbols per UE per frame for the compressed-sensing estimate.
    pub pilots_per_frame: u64,
    pub n_rf: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PilotLedger {
    /// Total from the closed form, short-timescale cost `K` per slot.
    pub total: u64,
    /// Same total with the short-timescale cost counted as `N_RF·K` per slot.
    pub total_nrf: u64,
    /// False when `N_RF ≠ K`, i.e. the two counts disagree.
    pub consistent: bool,
}

/// Tri/two-timescale: `(K I + K T_S) T_M T_L`; real-time:
/// `(K I + K) T_S T_M T_L`.
pub fn pilot_ledger(s: &PilotSchedule, mode: TimescaleMode) -> PilotLedger {
    let ki = s.users * s.pilots_per_frame;
    let (total, total_nrf) = match mode {
        TimescaleMode::Tri | TimescaleMode::Two => (
            (ki + s.users * s.t_s) * s.t_m * s.t_l,
            (ki + s.n_rf * s.users * s.t_s) * s.t_m * s.t_l,
        ),
        TimescaleMode::RealTime => (
            (ki + s.users) * s.t_s * s.t_m * s.t_l,
            (ki + s.n_rf * s.users) * s.t_s * s.t_m * s.t_l,
        ),
    };
    PilotLedger {
        total,
        total_nrf,
        consistent: s.n_rf == s.users,
    }
}

/// Per-slot pilot charge `(ledger, N_RF·K variant)`; summing these over all
/// slots reproduces [`pilot_ledger`].
pub fn slot_pilots(s: &PilotSchedule, mode: TimescaleMode, frame_start: bool) -> (u64, u64) {
    let ki = s.users * s.pilots_per_frame;
    match mode {
        TimescaleMode::Tri | TimescaleMode::Two => {
            let medium = if frame_start { ki } else { 0 };
            (medium + s.users, medium + s.n_rf * s.users)
        }
        TimescaleMode::RealTime => (ki + s.users, ki + s.n_rf * s.users),
    }
}

/// One time-slot of a simulated trial.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub t_l: usize,
    pub t_m: usize,
    pub t_s: usize,
    pub sinr: Vec<f64>,
    pub rates: Vec<f64>,
    pub sum_rate: f64,
    pub tx_power: f64,
    pub pilots: u64,
    pub pilots_nrf: u64,
    /// NMSE of the latest RF-domain channel estimate, averaged over UEs.
    pub nmse: Option<f64>,
    /// Number of EM-domain updates applied so far.
    pub em_epoch: u32,
    /// Number of analog beamformer updates applied so far.
    pub rf_epoch: u32,
}

/// Column order: `t_l,t_m,t_s,sum_rate,tx_power_w,pilots,pilots_nrf,nmse,
/// em_epoch,rf_epoch,sinr_1..sinr_K,rate_1..rate_K`.
pub fn write_records_csv<W: Write>(records: &[MetricsRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let k = records.first().map_or(0, |r| r.sinr.len());
    let mut header: Vec<String> = [
        "t_l", "t_m", "t_s", "sum_rate", "tx_power_w", "pilots", "pilots_nrf", "nmse", "em_epoch", "rf_epoch",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((1..=k).map(|i| format!("sinr_{i}")));
    header.extend((1..=k).map(|i| format!("rate_{i}")));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.t_l.to_string(),
            r.t_m.to_string(),
            r.t_s.to_string(),
            r.sum_rate.to_string(),
            r.tx_power.to_string(),
            r.pilots.to_string(),
            r.pilots_nrf.to_string(),
            r.nmse.map_or(String::new(), |v| v.to_string()),
            r.em_epoch.to_string(),
            r.rf_epoch.to_string(),
        ];
        row.extend(r.sinr.iter().map(|v| v.to_string()));
        row.extend(r.rates.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
