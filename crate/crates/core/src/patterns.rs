//! Radiation-pattern dictionary and EM-domain beamformer representation.
//!
//! The dictionary holds `P` directional lobes sampled on the angular grid.
//! Each lobe is a raised-cosine main beam with unit energy over the grid.
//! The dictionary lobes are synthetic stand-ins with a default beamwidth of
//! `π/P`; they do not model any particular hardware prototype.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::channel::AngularGrid;
use crate::error::{Error, Result};
use crate::linalg::{argmax_first, RMat};

#[derive(Debug, Clone, PartialEq)]
pub struct PatternDictionary {
    grid: AngularGrid,
    /// `M × P`, column `p` is pattern `p`.
    gains: RMat,
}

/// Lobe `p` (0-based) is centered at `-π/2 + (p + 1/2) π / P` with gain
/// `cos((ϑ - center) π / (2 beamwidth))` inside the main lobe
/// `|ϑ - center| < beamwidth` and zero outside, before normalization.
pub fn build_dictionary(
    grid: &AngularGrid,
    num_patterns: usize,
    beamwidth: Option<f64>,
) -> Result<PatternDictionary> {
    let m = grid.len();
    if num_patterns == 0 {
        return Err(Error::invalid("dictionary needs at least one pattern"));
    }
    if num_patterns > m {
        return Err(Error::invalid(format!(
            "{num_patterns} patterns on a {m}-point grid: lobes narrower than one bin"
        )));
    }
    let beamwidth = beamwidth.unwrap_or(PI / num_patterns as f64);
    if !(beamwidth > 0.0) || !beamwidth.is_finite() {
        return Err(Error::invalid("beamwidth must be positive"));
    }
    let mut gains = RMat::zeros(m, num_patterns);
    for p in 0..num_patterns {
        let center = lobe_center(p, num_patterns);
        for (i, &theta) in grid.angles().iter().enumerate() {
            gains[(i, p)] = main_lobe(theta - center, beamwidth);
        }
        let energy: f64 = gains.column(p).iter().map(|g| g * g).sum();
        if energy <= 0.0 {
            return Err(Error::invalid(format!(
                "pattern {p} has no support on the grid; widen the beamwidth"
            )));
        }
        let norm = energy.sqrt();
        gains.column_mut(p).iter_mut().for_each(|g| *g /= norm);
    }
    Ok(PatternDictionary {
        grid: grid.clone(),
        gains,
    })
}

fn main_lobe(offset: f64, beamwidth: f64) -> f64 {
    if offset.abs() < beamwidth {
        (offset * PI / (2.0 * beamwidth)).cos()
    } else {
        0.0
    }
}

/// Center angle of lobe `p` (0-based) in a `P`-lobe dictionary.
pub fn lobe_center(p: usize, num_patterns: usize) -> f64 {
    -FRAC_PI_2 + (p as f64 + 0.5) * PI / num_patterns as f64
}

impl PatternDictionary {
    pub fn grid(&self) -> &AngularGrid {
        &self.grid
    }

    pub fn num_patterns(&self) -> usize {
        self.gains.ncols()
    }

    pub fn grid_len(&self) -> usize {
        self.gains.nrows()
    }

    pub fn gain(&self, pattern: usize, bin: usize) -> f64 {
        self.gains[(bin, pattern)]
    }

    /// `M × P` gain matrix.
    pub fn gains(&self) -> &RMat {
        &self.gains
    }

    pub fn pattern(&self, p: usize) -> Vec<f64> {
        self.gains.column(p).iter().copied().collect()
    }

    /// The pattern with the largest gain toward broadside.
    pub fn boresight_pattern(&self) -> usize {
        let bin = self.grid.nearest_bin(0.0);
        let row: Vec<f64> = self.gains.row(bin).iter().copied().collect();
        argmax_first(&row)
    }

    /// `M` rows × `P` columns, preceded by a header.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["bin".to_string(), "angle".to_string()];
        header.extend((0..self.num_patterns()).map(|p| format!("pattern_{p}")));
        w.write_record(&header)?;
        for m in 0..self.grid_len() {
            let mut row = vec![m.to_string(), self.grid.angle(m).to_string()];
            row.extend(self.gains.row(m).iter().map(|g| g.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Isotropic unit-energy element pattern: `1/√M` in every direction.
pub fn conventional_pattern(grid: &AngularGrid) -> Vec<f64> {
    vec![1.0 / (grid.len() as f64).sqrt(); grid.len()]
}

/// Reference level the sampled patterns are scaled to when they are placed
/// in the propagation model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GainScale {
    /// `Σ_m f(m)² = 1`; gains shrink as the grid gets finer.
    UnitEnergy,
    /// `Σ_m f(m)² = M`; the conventional element has unit gain everywhere,
    /// so gains are independent of the grid density.
    #[default]
    Isotropic,
}

impl GainScale {
    pub fn factor(self, grid_len: usize) -> f64 {
        match self {
            GainScale::UnitEnergy => 1.0,
            GainScale::Isotropic => (grid_len as f64).sqrt(),
        }
    }
}

/// Relaxed and rounded pattern selection `S_EM`, one row per antenna.
#[derive(Debug, Clone, PartialEq)]
pub struct EmSelection {
    /// `N_t × P`; each row lies on the probability simplex.
    relaxed: RMat,
    rounded: Vec<usize>,
}

impl EmSelection {
    pub fn from_relaxed(relaxed: RMat) -> Result<Self> {
        for n in 0..relaxed.nrows() {
            let row = relaxed.row(n);
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&x| !(-1e-12..=1.0 + 1e-12).contains(&x)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("selection row {n} is not on the simplex")));
            }
        }
        let rounded = (0..relaxed.nrows())
            .map(|n| {
                let row: Vec<f64> = relaxed.row(n).iter().copied().collect();
                argmax_first(&row)
            })
            .collect();
        Ok(EmSelection { relaxed, rounded })
    }

    /// One-hot selection from explicit pattern indices.
    pub fn from_choices(choices: &[usize], num_patterns: usize) -> Result<Self> {
        let mut relaxed = RMat::zeros(choices.len(), num_patterns);
        for (n, &p) in choices.iter().enumerate() {
            if p >= num_patterns {
                return Err(Error::invalid(format!("antenna {n}: pattern {p} out of range")));
            }
            relaxed[(n, p)] = 1.0;
        }
        Ok(EmSelection {
            relaxed,
            rounded: choices.to_vec(),
        })
    }

    pub fn relaxed(&self) -> &RMat {
        &self.relaxed
    }

    pub fn rounded(&self) -> &[usize] {
        &self.rounded
    }

    pub fn n_t(&self) -> usize {
        self.rounded.len()
    }
}

/// EM gain of antenna `n` toward grid bin `m` under the rounded selection.
pub fn em_gain(selection: &EmSelection, dict: &PatternDictionary, antenna: usize, bin: usize) -> f64 {
    dict.gain(selection.rounded[antenna], bin)
}

/// Per-antenna radiation patterns in force (`N_t × M`, row `n` is `f_EM,n`).
#[derive(Debug, Clone, PartialEq)]
pub struct AntennaPatterns {
    gains: RMat,
}

impl AntennaPatterns {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_t = rows.len();
        if n_t == 0 {
            return Err(Error::invalid("need at least one antenna"));
        }
        let m = rows[0].len();
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::invalid("pattern rows have different lengths"));
        }
        Ok(AntennaPatterns {
            gains: RMat::from_fn(n_t, m, |n, i| rows[n][i]),
        })
    }

    pub fn from_matrix(gains: RMat) -> Self {
        AntennaPatterns { gains }
    }

    /// Patterns picked by a rounded selection, scaled by `scale`.
    pub fn from_selection(dict: &PatternDictionary, choices: &[usize], scale: GainScale) -> Self {
        let f = scale.factor(dict.grid_len());
        let gains = RMat::from_fn(choices.len(), dict.grid_len(), |n, m| f * dict.gain(choices[n], m));
        AntennaPatterns { gains }
    }

    /// Convex mixtures `F_pat s_n` of a relaxed selection.
    pub fn from_relaxed(dict: &PatternDictionary, relaxed: &RMat, scale: GainScale) -> Self {
        let f = scale.factor(dict.grid_len());
        let gains = (relaxed * dict.gains().transpose()) * f;
        AntennaPatterns { gains }
    }

    pub fn conventional(n_t: usize, grid: &AngularGrid, scale: GainScale) -> Self {
        let f = scale.factor(grid.len());
        let row = conventional_pattern(grid);
        AntennaPatterns {
            gains: RMat::from_fn(n_t, grid.len(), |_, m| f * row[m]),
        }
    }

    pub fn boresight(dict: &PatternDictionary, n_t: usize, scale: GainScale) -> Self {
        let p = dict.boresight_pattern();
        Self::from_selection(dict, &vec![p; n_t], scale)
    }

    pub fn n_t(&self) -> usize {
        self.gains.nrows()
    }

    pub fn grid_len(&self) -> usize {
        self.gains.ncols()
    }

    #[inline]
    pub fn gain(&self, antenna: usize, bin: usize) -> f64 {
        self.gains[(antenna, bin)]
    }

    /// `N_t × M` gain matrix.
    pub fn gains(&self) -> &RMat {
        &self.gains
    }
}
