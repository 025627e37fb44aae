//! Spectral error measures between aided and desired responses.
//!
//! The log-spectral distance (RMS of the dB difference over a band) is the
//! headline score; a third-octave profile shows where the error sits.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{MagnitudeResponse, DEFAULT_N_FFT};

pub const DEFAULT_BAND_HZ: (f64, f64) = (100.0, 7000.0);

/// Profile bands never extend below this frequency.
pub const PROFILE_MIN_HZ: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub band_hz: (f64, f64),
    pub n_fft: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            band_hz: DEFAULT_BAND_HZ,
            n_fft: DEFAULT_N_FFT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandError {
    pub center_hz: f64,
    pub lower_hz: f64,
    pub upper_hz: f64,
    pub mean_abs_db: f64,
}

/// One (subject, condition, delay) evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub subject_id: String,
    pub condition: String,
    #[serde(rename = "d_G")]
    pub device_delay: usize,
    pub lsd_db: f64,
    pub band_errors: Vec<BandError>,
    /// Path of the stored magnitude-response CSV, when written.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub responses: Option<String>,
}

/// Mean and spread of the log-spectral distance for one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: String,
    pub mean_lsd_db: f64,
    pub sd_lsd_db: f64,
    pub n_subjects: usize,
}

fn check_grids(a: &MagnitudeResponse, b: &MagnitudeResponse) -> Result<()> {
    if !a.same_grid(b)
        || a.magnitude_db.len() != a.frequencies_hz.len()
        || b.magnitude_db.len() != b.frequencies_hz.len()
    {
        return Err(Error::invalid("magnitude responses are on different frequency grids"));
    }
    Ok(())
}

/// RMS of `a_db - b_db` over grid points with `f_lo <= f <= f_hi`.
pub fn log_spectral_distance(a: &MagnitudeResponse, b: &MagnitudeResponse, band: (f64, f64)) -> Result<f64> {
    check_grids(a, b)?;
    let (lo, hi) = band;
    let nyquist = a.sample_rate_hz as f64 / 2.0;
    if !(lo > 0.0 && lo < hi && hi <= nyquist) {
        return Err(Error::invalid(format!(
            "band ({lo}, {hi}) Hz must satisfy 0 < lo < hi <= {nyquist}"
        )));
    }
    let (sum, n) = a
        .frequencies_hz
        .iter()
        .zip(a.magnitude_db.iter().zip(&b.magnitude_db))
        .filter(|(f, _)| **f >= lo && **f <= hi)
        .fold((0.0, 0usize), |(s, n), (_, (x, y))| (s + (x - y).powi(2), n + 1));
    if n == 0 {
        return Err(Error::invalid("no frequency bins inside the band"));
    }
    Ok((sum / n as f64).sqrt())
}

/// Base-two third-octave centers from 125 Hz to 8 kHz.
pub fn third_octave_centers() -> Vec<f64> {
    (-9..=9).map(|k| 1000.0 * 2f64.powf(k as f64 / 3.0)).collect()
}

/// Mean absolute dB difference per third-octave band. Band edges are
/// clipped to `[PROFILE_MIN_HZ, fs/2]`; bands without grid points are
/// omitted.
pub fn band_error_profile(a: &MagnitudeResponse, b: &MagnitudeResponse) -> Result<Vec<BandError>> {
    check_grids(a, b)?;
    let nyquist = a.sample_rate_hz as f64 / 2.0;
    let mut out = Vec::new();
    for center in third_octave_centers() {
        let lower = (center * 2f64.powf(-1.0 / 6.0)).max(PROFILE_MIN_HZ);
        let upper = (center * 2f64.powf(1.0 / 6.0)).min(nyquist);
        if lower >= upper {
            continue;
        }
        let (sum, n) = a
            .frequencies_hz
            .iter()
            .zip(a.magnitude_db.iter().zip(&b.magnitude_db))
            .filter(|(f, _)| **f >= lower && **f < upper)
            .fold((0.0, 0usize), |(s, n), (_, (x, y))| (s + (x - y).abs(), n + 1));
        if n > 0 {
            out.push(BandError {
                center_hz: center,
                lower_hz: lower,
                upper_hz: upper,
                mean_abs_db: sum / n as f64,
            });
        }
    }
    Ok(out)
}

fn mean_sd(values: &mut [f64]) -> (f64, f64) {
    // Sorted summation keeps the result independent of input order.
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Per-condition mean and sample standard deviation of `lsd_db`, ordered by
/// mean with ties broken by condition name.
pub fn rank_conditions(reports: &[ConditionReport]) -> Result<Vec<ConditionSummary>> {
    if reports.is_empty() {
        return Err(Error::invalid("no reports to rank"));
    }
    let mut by_condition: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in reports {
        by_condition.entry(&r.condition).or_default().push(r.lsd_db);
    }
    let mut out: Vec<ConditionSummary> = by_condition
        .into_iter()
        .map(|(condition, mut values)| {
            let (mean, sd) = mean_sd(&mut values);
            ConditionSummary {
                condition: condition.to_string(),
                mean_lsd_db: mean,
                sd_lsd_db: sd,
                n_subjects: values.len(),
            }
        })
        .collect();
    out.sort_by(|a, b| {
        a.mean_lsd_db
            .total_cmp(&b.mean_lsd_db)
            .then_with(|| a.condition.cmp(&b.condition))
    });
    Ok(out)
}
